use std::path::Path;
use std::process::{Command, Output};

fn gpvae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpvae")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(gpvae(&["evaluate", "--dataset", p(tmp.path())]).status.code(), Some(2));
    assert_eq!(gpvae(&["gradcheck", "--bogus"]).status.code(), Some(2));
    let missing = tmp.path().join("nope");
    let out = gpvae(&["train", "--dataset", p(&missing), "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no such directory"));
    assert_eq!(gpvae(&[]).status.code(), Some(2));
}

#[test]
fn broken_bundle_is_a_runtime_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let out = gpvae(&["train", "--dataset", p(tmp.path()), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn small_end_to_end_run() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"epochs": 2, "latent_dim": 4, "image_encoder_hidden": 16, "image_decoder_hidden": 16,
            "attribute_encoder_hidden": 16, "attribute_decoder_hidden": 16, "classifier_epochs": 2,
            "seen_samples_per_class": 10, "unseen_samples_per_class": 20}"#,
    )
    .unwrap();
    let ok = |o: Output| {
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    };
    ok(gpvae(&["gen-synth", "--out", p(&data), "--seed", "3", "--branching", "4", "--depth", "2"]));
    let text = ok(gpvae(&[
        "train", "--dataset", p(&data), "--graph-mode", "none", "--config", p(&cfg), "--out", p(&run),
    ]));
    assert!(text.contains("trained 2 epochs"));
    assert_eq!(std::fs::read_to_string(run.join("epochs.tsv")).unwrap().lines().count(), 3);
    let ckpt = run.join("checkpoint.bin");
    let text = ok(gpvae(&["evaluate", "--checkpoint", p(&ckpt), "--dataset", p(&data)]));
    assert!(text.contains("graph_mode=none") && text.contains("H="), "{text}");
    let latents = tmp.path().join("latents.tsv");
    ok(gpvae(&["export-latents", "--checkpoint", p(&ckpt), "--dataset", p(&data), "--out", p(&latents)]));
    // 16 leaves, 4 internal nodes, one root.
    let dump = std::fs::read_to_string(&latents).unwrap();
    assert_eq!(dump.lines().count(), 21);
    assert!(dump.lines().all(|l| l.split('\t').count() == 2 + 4));
}

#[test]
fn gradcheck_passes() {
    let out = gpvae(&["gradcheck", "--points", "4", "--seed", "2"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 8);
}
