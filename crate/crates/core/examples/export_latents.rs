//! Writes attribute-encoder means of every node of the synthetic hierarchy,
//! ready for t-SNE or similar.

use gpvae::config::TrainConfig;
use gpvae::export::{format_records, latent_records};
use gpvae::synth::{gen_synth, SynthParams};
use gpvae::train::train;

fn main() -> gpvae::Result<()> {
    let bundle = gen_synth(&SynthParams::default())?;
    let (dataset, graph) = (bundle.to_dataset()?, bundle.to_graph()?);
    let cfg = TrainConfig {
        epochs: 5,
        latent_dim: 4,
        image_encoder_hidden: 64,
        image_decoder_hidden: 64,
        attribute_encoder_hidden: 32,
        attribute_decoder_hidden: 32,
        ..Default::default()
    };
    let model = train(&dataset, &graph, &cfg)?.bundle;
    print!("{}", format_records(&latent_records(&model.attribute_encoder, &graph)?));
    Ok(())
}
