//! Trains on the default synthetic benchmark and prints the loss curve.
//!
//! `cargo run --release --example train_synthetic -- [epochs] [full|flat|none]`

use gpvae::config::TrainConfig;
use gpvae::synth::{gen_synth, SynthParams};
use gpvae::train::train;

fn main() -> gpvae::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(5, |a| a.parse().expect("epochs"));
    let mode = args.next().map_or(Ok(Default::default()), |a| a.parse()).expect("graph mode");

    let bundle = gen_synth(&SynthParams::default())?;
    let dataset = bundle.to_dataset()?;
    let graph = bundle.to_graph()?;
    let config = TrainConfig { epochs, graph_mode: mode, ..Default::default() };

    let start = std::time::Instant::now();
    let out = train(&dataset, &graph, &config)?;
    for e in &out.stats {
        println!("epoch {:>3}  total {:>10.4}  vae_img {:>9.4}  vae_att {:>8.4}  prior {:>8.4}", e.epoch, e.total, e.vae_image, e.vae_attribute, e.prior);
    }
    println!("{} epochs in {:.1?}", epochs, start.elapsed());
    Ok(())
}
