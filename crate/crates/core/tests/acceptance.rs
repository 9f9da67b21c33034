//! Primary acceptance criteria. Prints one PASS/FAIL line per criterion to
//! stderr and fails if any criterion fails.
//!
//! The end-to-end and ablation criteria train the reference configuration
//! many times; in a release-optimized test profile on one core the whole file
//! takes roughly 35 minutes.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Write;
use std::process::Command;
use std::time::{Duration, Instant};

use gpvae::autodiff::{Tape, Tensor};
use gpvae::config::TrainConfig;
use gpvae::dataset::GzslDataset;
use gpvae::eval::{ablation_configs, ablation_grid, harmonic_mean, run_once, GzslReport};
use gpvae::gaussian::{kl_diag, wasserstein2_diag, DiagGaussian};
use gpvae::gradsuite::run_suite;
use gpvae::graph::{transitive_closure, LabelGraph, LabelNode, NodeKind};
use gpvae::loss::{l1_recon, GraphMode};
use gpvae::synth::{gen_synth, SynthParams};
use gpvae::train::{draw_step_inputs, step_objective, BoundBundle, ModelBundle, StepOptions};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use statrs::statistics::Distribution;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

struct Runner {
    failed: Vec<&'static str>,
}

impl Runner {
    fn check(&mut self, name: &'static str, budget: Duration, f: impl FnOnce() -> Verdict) {
        let t0 = Instant::now();
        let v = match std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)) {
            Ok(v) => v,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                verdict(false, format!("panicked: {msg}"))
            }
        };
        let dt = t0.elapsed();
        let over = if dt > budget {
            format!(" over the {:.0} s budget", budget.as_secs_f64())
        } else {
            String::new()
        };
        if !v.pass {
            self.failed.push(name);
        }
        let _ = writeln!(
            std::io::stderr(),
            "{} {name}: {} [{:.1} s{over}]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            dt.as_secs_f64()
        );
    }
}

fn random_gaussian(rng: &mut impl Rng, d: usize) -> DiagGaussian {
    let mean = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let log_var = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
    DiagGaussian::new(mean, log_var).unwrap()
}

fn marginals(p: &DiagGaussian) -> Vec<Normal> {
    p.mean()
        .iter()
        .zip(p.log_var())
        .map(|(m, lv)| Normal::new(*m, (0.5 * lv).exp()).unwrap())
        .collect()
}

fn simpson(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Sum over dimensions of ∫ p log(p/q).
fn kl_quadrature(p: &DiagGaussian, q: &DiagGaussian) -> f64 {
    marginals(p)
        .iter()
        .zip(marginals(q))
        .map(|(np, nq)| {
            let (m, s) = (np.mean().unwrap(), np.std_dev().unwrap());
            simpson(m - 12.0 * s, m + 12.0 * s, 4000, |x| np.pdf(x) * (np.ln_pdf(x) - nq.ln_pdf(x)))
        })
        .sum()
}

/// Monte-Carlo estimate of KL(p‖q) with its standard error.
fn kl_monte_carlo(p: &DiagGaussian, q: &DiagGaussian, samples: usize, rng: &mut impl Rng) -> (f64, f64) {
    let (mp, mq) = (marginals(p), marginals(q));
    let sd = p.std_dev();
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        let mut r = 0.0;
        for (k, (np, nq)) in mp.iter().zip(&mq).enumerate() {
            let e: f64 = rng.sample(StandardNormal);
            let x = p.mean()[k] + sd[k] * e;
            r += np.ln_pdf(x) - nq.ln_pdf(x);
        }
        sum += r;
        sum_sq += r * r;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean) * n / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// 1-D W2 as the L2 distance between quantile functions, with u = Φ(t).
fn w2_transport_1d(p: &Normal, q: &Normal) -> f64 {
    let z = Normal::new(0.0, 1.0).unwrap();
    simpson(-8.0, 8.0, 8000, |t| {
        let u = z.cdf(t);
        (p.inverse_cdf(u) - q.inverse_cdf(u)).powi(2) * z.pdf(t)
    })
    .sqrt()
}

fn divergence_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let (mut worst_z, mut worst_quad, mut worst_w2) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let d = rng.random_range(1..=8);
        let p = random_gaussian(&mut rng, d);
        let q = random_gaussian(&mut rng, d);
        let kl = kl_diag(&p, &q).unwrap();
        let (mc, se) = kl_monte_carlo(&p, &q, 1_000_000, &mut rng);
        worst_z = worst_z.max((kl - mc).abs() / se);
        worst_quad = worst_quad.max((kl - kl_quadrature(&p, &q)).abs());

        let p1 = random_gaussian(&mut rng, 1);
        let q1 = random_gaussian(&mut rng, 1);
        let w = wasserstein2_diag(&p1, &q1).unwrap();
        worst_w2 = worst_w2.max((w - w2_transport_1d(&marginals(&p1)[0], &marginals(&q1)[0])).abs());
    }
    verdict(
        worst_z <= 3.0 && worst_quad < 1e-3 && worst_w2 < 1e-6,
        format!(
            "100 pairs d<=8; KL vs MC max |z| {worst_z:.2} (<= 3); KL vs quadrature {worst_quad:.1e} (< 1e-3); \
             W2 vs transport {worst_w2:.1e} (< 1e-6)"
        ),
    )
}

fn gradient_suite() -> Verdict {
    let checks = run_suite(20, 2024).unwrap();
    let worst = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    let detail = checks
        .iter()
        .map(|c| format!("{}={:.1e}", c.term, c.max_rel_error))
        .collect::<Vec<_>>()
        .join(" ");
    verdict(
        worst < 1e-4 && checks.iter().all(|c| c.points >= 20),
        format!("20 points per term; {detail} (< 1e-4)"),
    )
}

fn closure_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = 0;
    let mut sizes = Vec::new();
    for _ in 0..50 {
        let n = rng.random_range(2..=50);
        let density = rng.random_range(0.02..0.3);
        let mut ids: Vec<usize> = (0..n).map(|k| 3 * k + 11).collect();
        ids.shuffle(&mut rng);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(density) {
                    edges.push((ids[i], ids[j]));
                }
            }
        }
        edges.shuffle(&mut rng);
        sizes.push(n);
        let nodes = ids.iter().map(|&id| LabelNode::new(id, format!("v{id}"), NodeKind::Internal, None)).collect();
        let g = LabelGraph::new(nodes, edges.clone()).unwrap();
        let closure = transitive_closure(&g).unwrap();

        let mut down: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let mut up: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &(a, b) in &edges {
            down.entry(a).or_default().push(b);
            up.entry(b).or_default().push(a);
        }
        let bfs = |start: usize, adj: &BTreeMap<usize, Vec<usize>>| {
            let mut seen = BTreeSet::new();
            let mut queue = VecDeque::from([start]);
            while let Some(v) = queue.pop_front() {
                for &w in adj.get(&v).into_iter().flatten() {
                    if seen.insert(w) {
                        queue.push_back(w);
                    }
                }
            }
            seen
        };
        for &id in &ids {
            let mut expect = bfs(id, &down);
            expect.extend(bfs(id, &up));
            expect.remove(&id);
            if closure.related(id) != Some(&expect) {
                mismatches += 1;
            }
        }
    }
    verdict(
        mismatches == 0,
        format!("50 DAGs, n in [{}, {}]; {mismatches} mismatched nodes", sizes.iter().min().unwrap(), sizes.iter().max().unwrap()),
    )
}

fn rows_of(m: &Tensor, lv: &Tensor) -> Vec<DiagGaussian> {
    (0..m.rows())
        .map(|r| DiagGaussian::new(m.row(r).to_vec(), lv.row(r).to_vec()).unwrap())
        .collect()
}

fn sample(m: &Tensor, lv: &Tensor, noise: &Tensor) -> Tensor {
    let v = m
        .values()
        .iter()
        .zip(lv.values())
        .zip(noise.values())
        .map(|((m, lv), e)| m + (lv / 2.0).exp() * e)
        .collect();
    Tensor::from_vec(m.shape().to_vec(), v).unwrap()
}

fn baseline_degradation() -> Verdict {
    let b = gen_synth(&SynthParams::default()).unwrap();
    let ds = b.to_dataset().unwrap();
    let cfg = TrainConfig {
        latent_dim: 16,
        image_encoder_hidden: 64,
        image_decoder_hidden: 48,
        attribute_encoder_hidden: 40,
        attribute_decoder_hidden: 32,
        graph_mode: GraphMode::None,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let bundle = ModelBundle::new(ds.feature_dim(), ds.attribute_dim(), &cfg, &mut rng);
    let inputs = draw_step_inputs(&mut rng, &ds, None, cfg.batch_size, cfg.latent_dim, false).unwrap();
    let w = cfg.weights_at(40);
    let mut tape = Tape::new();
    let nets = BoundBundle::new(&bundle, &mut tape);
    let st = step_objective(&mut tape, &nets, &inputs, &w, &cfg.toggles(), StepOptions::default()).unwrap();
    let got = |v| tape.value(v).item();

    let std = DiagGaussian::standard(cfg.latent_dim);
    let mean_kl = |qs: &[DiagGaussian]| qs.iter().map(|q| kl_diag(q, &std).unwrap()).sum::<f64>() / qs.len() as f64;
    let (mi, lvi) = bundle.image_encoder.encode_tensors(&inputs.images).unwrap();
    let (ma, lva) = bundle.attribute_encoder.encode_tensors(&inputs.attributes).unwrap();
    let zi = sample(&mi, &lvi, &inputs.image_noise);
    let za = sample(&ma, &lva, &inputs.attribute_noise);
    let recon_i = l1_recon(&inputs.images, &bundle.image_decoder.decode(&zi).unwrap()).unwrap();
    let recon_a = l1_recon(&inputs.attributes, &bundle.attribute_decoder.decode(&za).unwrap()).unwrap();
    let (qi, qa) = (rows_of(&mi, &lvi), rows_of(&ma, &lva));
    let (kl_i, kl_a) = (mean_kl(&qi), mean_kl(&qa));
    let ca = l1_recon(&inputs.attributes, &bundle.attribute_decoder.decode(&zi).unwrap()).unwrap()
        + l1_recon(&inputs.images, &bundle.image_decoder.decode(&za).unwrap()).unwrap();
    let da = qi.iter().zip(&qa).map(|(p, q)| wasserstein2_diag(p, q).unwrap()).sum::<f64>() / qi.len() as f64;
    let total = recon_i + w.alpha * kl_i + recon_a + w.alpha * kl_a + w.beta * ca + w.gamma * da;

    let t = st.terms;
    let pairs = [
        ("recon_img", got(t.vae_image.recon), recon_i),
        ("kl_img", got(t.vae_image.kl), kl_i),
        ("recon_att", got(t.vae_attribute.recon), recon_a),
        ("kl_att", got(t.vae_attribute.kl), kl_a),
        ("ca", got(t.cross_alignment.unwrap()), ca),
        ("da", got(t.distribution_alignment.unwrap()), da),
        ("total", got(st.total), total),
    ];
    let worst = pairs.iter().map(|(_, a, b)| (a - b).abs()).fold(0.0, f64::max);
    let no_graph_terms = t.prior.is_none() && t.vae_image.rank.is_none() && t.vae_attribute.rank.is_none();
    verdict(
        worst <= 1e-12 && no_graph_terms,
        format!("7 terms, max |diff| {worst:.1e} (<= 1e-12); graph terms absent: {no_graph_terms}"),
    )
}

fn schedules() -> Verdict {
    let c = TrainConfig::default();
    let got = [
        ("alpha(93)", c.weights_at(93).alpha, 0.279),
        ("beta(75)", c.weights_at(75).beta, 3.105),
        ("gamma(22)", c.weights_at(22).gamma, 8.8),
        ("epsilon(49)", c.weights_at(49).epsilon, 3.5133),
    ];
    let ok = got.iter().all(|(_, v, e)| (v - e).abs() < 1e-9);
    let detail = got.iter().map(|(n, v, _)| format!("{n}={v}")).collect::<Vec<_>>().join(" ");
    verdict(ok, format!("{detail} (each within 1e-9)"))
}

fn harmonic_checks() -> Verdict {
    let a = harmonic_mean(45.0, 38.0);
    let b = harmonic_mean(51.6, 53.5);
    let c = harmonic_mean(47.2, 35.7);
    let ok = format!("{a:.1}") == "41.2" && (b - 52.4).abs() <= 0.15 && (c - 40.6).abs() <= 0.15;
    verdict(ok, format!("H(45,38)={a:.3} -> 41.2; H(51.6,53.5)={b:.3} vs 52.4; H(47.2,35.7)={c:.3} vs 40.6 (+-0.15)"))
}

/// Reference-configuration runs on the default synthetic data, shared
/// between the end-to-end and ablation criteria.
struct RunCache {
    dataset: GzslDataset,
    graph: LabelGraph,
    reports: BTreeMap<String, GzslReport>,
}

impl RunCache {
    fn new() -> Self {
        let b = gen_synth(&SynthParams::default()).unwrap();
        Self {
            dataset: b.to_dataset().unwrap(),
            graph: b.to_graph().unwrap(),
            reports: BTreeMap::new(),
        }
    }

    fn run(&mut self, cfg: &TrainConfig) -> GzslReport {
        let key = cfg.to_json();
        if let Some(r) = self.reports.get(&key) {
            return r.clone();
        }
        let r = run_once(&self.dataset, &self.graph, cfg).unwrap();
        let _ = writeln!(std::io::stderr(), "    {}", r.record());
        self.reports.insert(key, r.clone());
        r
    }
}

fn mode_config(mode: GraphMode, seed: u64) -> TrainConfig {
    TrainConfig {
        graph_mode: mode,
        use_prior: mode != GraphMode::None,
        seed,
        ..Default::default()
    }
}

fn end_to_end(cache: &mut RunCache) -> Verdict {
    let mut mean = BTreeMap::new();
    for mode in [GraphMode::Full, GraphMode::Flat, GraphMode::None] {
        let h: f64 = (0..5).map(|s| cache.run(&mode_config(mode, s)).harmonic).sum::<f64>() / 5.0;
        mean.insert(mode.as_str(), h);
    }
    let (full, flat, none) = (mean["full"], mean["flat"], mean["none"]);
    verdict(
        full > flat && flat >= none - 1.0 && full - none > 1.0,
        format!(
            "mean H over 5 seeds: full {full:.1}, flat {flat:.1}, none {none:.1}; \
             need full > flat, flat >= none - 1, full - none > 1"
        ),
    )
}

fn determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_gpvae");
    let run = |args: &[&str]| {
        let out = Command::new(bin).args(args).output().unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        out.stdout
    };
    let path = |p: &str| tmp.path().join(p).to_str().unwrap().to_string();
    run(&["gen-synth", "--out", &path("data")]);
    let mut outputs = Vec::new();
    for dir in ["a", "b"] {
        run(&["train", "--dataset", &path("data"), "--seed", "3", "--out", &path(dir)]);
        let ckpt = std::fs::read(tmp.path().join(dir).join("checkpoint.bin")).unwrap();
        let log = std::fs::read(tmp.path().join(dir).join("epochs.tsv")).unwrap();
        let ckpt_path = path(&format!("{dir}/checkpoint.bin"));
        let report = run(&["evaluate", "--checkpoint", &ckpt_path, "--dataset", &path("data")]);
        outputs.push((ckpt, log, report));
    }
    let (a, b) = (&outputs[0], &outputs[1]);
    verdict(
        a.0 == b.0 && a.1 == b.1 && a.2 == b.2,
        format!(
            "two CLI train+evaluate runs (seed 3): checkpoint {} bytes identical: {}; epoch log identical: {}; report identical: {}",
            a.0.len(),
            a.0 == b.0,
            a.1 == b.1,
            a.2 == b.2
        ),
    )
}

fn ablation(cache: &mut RunCache) -> Verdict {
    let grid = ablation_grid();
    let reports: Vec<GzslReport> = ablation_configs(&mode_config(GraphMode::Full, 0), &grid)
        .iter()
        .map(|c| cache.run(c))
        .collect();
    let tags: BTreeSet<&str> = reports.iter().map(|r| r.fingerprint.as_str()).collect();
    let find = |fp: &str| reports.iter().find(|r| r.fingerprint == fp).map(|r| r.harmonic);
    let off = find("graph=none/ca=0/da=0/prior=0/seed=0");
    let full = find("graph=full/ca=1/da=1/prior=1/seed=0");
    let (off, full) = (off.unwrap_or(f64::NAN), full.unwrap_or(f64::NAN));
    let cells = reports
        .iter()
        .map(|r| format!("{}:{:.1}", r.fingerprint.trim_end_matches("/seed=0"), r.harmonic))
        .collect::<Vec<_>>()
        .join(" ");
    verdict(
        reports.len() == 8 && tags.len() == 8 && off <= full - 10.0,
        format!(
            "{} reports, {} distinct tags; H(all off, no graph) {off:.1} vs H(full) {full:.1}, need <= full - 10; {cells}",
            reports.len(),
            tags.len()
        ),
    )
}

#[test]
fn primary_criteria() {
    let mut r = Runner { failed: Vec::new() };
    let secs = Duration::from_secs;
    r.check("divergence-oracles", secs(60), divergence_oracles);
    r.check("gradient-suite", secs(60), gradient_suite);
    r.check("closure-oracle", secs(10), closure_oracle);
    r.check("baseline-degradation", secs(10), baseline_degradation);
    r.check("schedule-arithmetic", secs(1), schedules);
    r.check("harmonic-mean", secs(1), harmonic_checks);
    let mut cache = RunCache::new();
    r.check("end-to-end-ordering", secs(15 * 60), || end_to_end(&mut cache));
    r.check("determinism", secs(5 * 60), determinism);
    r.check("ablation-harness", secs(30 * 60), || ablation(&mut cache));
    assert!(r.failed.is_empty(), "failed criteria: {:?}", r.failed);
}
