//! Generates a synthetic bundle, writes it to disk and loads it back.
//!
//! `cargo run --example synthetic_bundle -- [out-dir]`

use gpvae::bundle::{load_bundle, DatasetBundle};
use gpvae::synth::{gen_synth, SynthParams};

fn main() -> gpvae::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "synthetic-bundle".into());
    let params = SynthParams { branching: 4, depth: 3, seed: 1, ..Default::default() };
    let bundle = gen_synth(&params)?;
    bundle.save(out.as_ref())?;
    println!("{}", serde_json::to_string_pretty(&bundle.manifest).unwrap());

    let reread = DatasetBundle::load(out.as_ref())?;
    assert_eq!(reread.manifest, bundle.manifest);
    let (dataset, graph) = load_bundle(out.as_ref())?;
    println!(
        "{} classes ({} unseen), {} graph nodes, {} edges, {} training images",
        dataset.classes().len(),
        dataset.unseen_ids().len(),
        graph.len(),
        graph.edges().len(),
        dataset.num_train()
    );
    Ok(())
}
