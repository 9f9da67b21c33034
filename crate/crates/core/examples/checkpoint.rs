//! Trains briefly, saves a checkpoint, reloads it and evaluates both copies.

use gpvae::checkpoint::{load_checkpoint, save_checkpoint};
use gpvae::config::TrainConfig;
use gpvae::eval::classify_and_evaluate;
use gpvae::synth::{gen_synth, SynthParams};
use gpvae::train::train;

fn main() -> gpvae::Result<()> {
    let bundle = gen_synth(&SynthParams::default())?;
    let (dataset, graph) = (bundle.to_dataset()?, bundle.to_graph()?);
    let cfg = TrainConfig {
        epochs: 10,
        latent_dim: 16,
        image_encoder_hidden: 128,
        image_decoder_hidden: 128,
        attribute_encoder_hidden: 64,
        attribute_decoder_hidden: 64,
        learning_rate: 1e-3,
        ..Default::default()
    };
    let outcome = train(&dataset, &graph, &cfg)?;

    let path = std::env::temp_dir().join("gpvae-example-checkpoint.bin");
    save_checkpoint(&outcome.bundle, &cfg, &path)?;
    let (reloaded, cfg2) = load_checkpoint(&path)?;
    println!("{} bytes at {}", std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0), path.display());

    let before = classify_and_evaluate(&outcome.bundle, &dataset, &cfg)?;
    let after = classify_and_evaluate(&reloaded, &dataset, &cfg2)?;
    println!("trained:  {before}");
    println!("reloaded: {after}");
    assert_eq!(before, after);
    Ok(())
}
