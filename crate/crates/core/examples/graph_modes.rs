//! Compares full-graph, flat-graph and graph-free training on the synthetic
//! benchmark over a few seeds.
//!
//! `cargo run --release --example graph_modes -- [seeds] [epochs]`

use gpvae::config::TrainConfig;
use gpvae::eval::{report_table, run_once};
use gpvae::loss::GraphMode;
use gpvae::synth::{gen_synth, SynthParams};

fn main() -> gpvae::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().map_or(1, |a| a.parse().expect("seeds"));
    let epochs: usize = args.next().map_or(100, |a| a.parse().expect("epochs"));

    let bundle = gen_synth(&SynthParams::default())?;
    let dataset = bundle.to_dataset()?;
    let graph = bundle.to_graph()?;

    for mode in [GraphMode::Full, GraphMode::Flat, GraphMode::None] {
        let mut reports = Vec::new();
        for seed in 0..seeds {
            let cfg = TrainConfig { epochs, seed, graph_mode: mode, ..Default::default() };
            reports.push(run_once(&dataset, &graph, &cfg)?);
        }
        print!("{}", report_table(&reports));
        let h = reports.iter().map(|r| r.harmonic).sum::<f64>() / reports.len() as f64;
        println!("mean H ({}) = {h:.2}\n", mode.as_str());
    }
    Ok(())
}
