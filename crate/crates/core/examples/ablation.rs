//! Loss-term ablation grid on the synthetic benchmark.
//!
//! `cargo run --release --example ablation -- [epochs]`

use gpvae::config::TrainConfig;
use gpvae::eval::{ablation_grid, ablation_run, report_table};
use gpvae::synth::{gen_synth, SynthParams};

fn main() -> gpvae::Result<()> {
    env_logger::init();
    let epochs = std::env::args().nth(1).map_or(30, |a| a.parse().expect("epochs"));
    let bundle = gen_synth(&SynthParams::default())?;
    let base = TrainConfig { epochs, ..Default::default() };
    let reports = ablation_run(&bundle.to_dataset()?, &bundle.to_graph()?, &base, &ablation_grid())?;
    print!("{}", report_table(&reports));
    Ok(())
}
