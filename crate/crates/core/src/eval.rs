//! Latent-space classifier and the unseen / seen / harmonic-mean protocol.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AdamState, Linear, Parameter, Tape, Tensor};
use crate::config::TrainConfig;
use crate::dataset::GzslDataset;
use crate::error::{Error, Result};
use crate::graph::LabelGraph;
use crate::loss::{GraphMode, LossToggles};
use crate::train::{normal_tensor, train, ModelBundle};

/// Where a latent row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    EncodedImage,
    AttributePrior,
}

/// Labelled latent vectors used to fit the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDataset {
    pub latents: Tensor,
    pub labels: Vec<usize>,
    pub provenance: Vec<Provenance>,
}

impl LatentDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn count_of(&self, class: usize) -> usize {
        self.labels.iter().filter(|&&l| l == class).count()
    }
}

fn sample_rows(mean: &Tensor, log_var: &Tensor, noise: &Tensor) -> Vec<f64> {
    mean.values()
        .iter()
        .zip(log_var.values())
        .zip(noise.values())
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect()
}

/// Seen classes: `n_seen` training images per class drawn with replacement,
/// one reparameterized sample from each encoding. Unseen classes: `n_unseen`
/// samples from the encoding of the class attribute vector.
pub fn build_latent_dataset<R: Rng + ?Sized>(
    bundle: &ModelBundle,
    dataset: &GzslDataset,
    n_seen: usize,
    n_unseen: usize,
    rng: &mut R,
) -> Result<LatentDataset> {
    let d = bundle.latent_dim();
    let by_class = dataset.train_indices_by_class();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut provenance = Vec::new();
    for class in dataset.classes() {
        let (mean, log_var, count, tag) = if class.seen {
            if n_seen == 0 {
                continue;
            }
            let pool = by_class
                .get(&class.id)
                .filter(|p| !p.is_empty())
                .ok_or_else(|| Error::Dataset(format!("seen class {} has no training images", class.id)))?;
            let picks: Vec<usize> = (0..n_seen).map(|_| pool[rng.random_range(0..pool.len())]).collect();
            let x = dataset.train_features.select_rows(&picks);
            let (m, lv) = bundle.image_encoder.encode_tensors(&x)?;
            (m, lv, n_seen, Provenance::EncodedImage)
        } else {
            if n_unseen == 0 {
                continue;
            }
            let a = dataset.attribute_rows(&[class.id])?;
            let (m, lv) = bundle.attribute_encoder.encode_tensors(&a)?;
            let rows = vec![0; n_unseen];
            (m.select_rows(&rows), lv.select_rows(&rows), n_unseen, Provenance::AttributePrior)
        };
        let noise = normal_tensor(rng, count, d);
        values.extend(sample_rows(&mean, &log_var, &noise));
        labels.extend(std::iter::repeat_n(class.id, count));
        provenance.extend(std::iter::repeat_n(tag, count));
    }
    Ok(LatentDataset {
        latents: Tensor::from_vec(vec![labels.len(), d], values)?,
        labels,
        provenance,
    })
}

/// Multinomial logistic regression over a fixed class list.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    pub weight: Parameter,
    pub bias: Parameter,
    /// Class id of each output column.
    pub class_ids: Vec<usize>,
}

impl LinearClassifier {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, class_ids: Vec<usize>, rng: &mut R) -> Self {
        let layer = Linear::new(input_dim, class_ids.len(), rng);
        Self {
            weight: layer.weight,
            bias: layer.bias,
            class_ids,
        }
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let w = tape.constant(self.weight.value.clone());
        let b = tape.constant(self.bias.value.clone());
        let h = tape.matmul(xv, w)?;
        let out = tape.add_row_bias(h, b)?;
        Ok(tape.value(out).clone())
    }

    /// Arg-max class id per row; ties go to the earliest column.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let logits = self.logits(x)?;
        Ok((0..logits.rows())
            .map(|r| {
                let row = logits.row(r);
                let mut best = 0;
                for (k, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = k;
                    }
                }
                self.class_ids[best]
            })
            .collect())
    }
}

/// Classifier optimization settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 1e-3,
            batch_size: 32,
        }
    }
}

impl From<&TrainConfig> for ClassifierConfig {
    fn from(c: &TrainConfig) -> Self {
        Self {
            epochs: c.classifier_epochs,
            learning_rate: c.classifier_learning_rate,
            batch_size: c.classifier_batch_size,
        }
    }
}

/// Trains a softmax classifier over `class_ids` with Adam.
///
/// Rows are put into a canonical order before the seeded shuffles, so the
/// result does not depend on the row order of `data`.
pub fn train_classifier<R: Rng + ?Sized>(
    data: &LatentDataset,
    class_ids: &[usize],
    config: ClassifierConfig,
    rng: &mut R,
) -> Result<LinearClassifier> {
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("classifier batch size must be positive".into()));
    }
    let present: BTreeSet<usize> = data.labels.iter().copied().collect();
    if let Some(missing) = class_ids.iter().find(|c| !present.contains(c)) {
        return Err(Error::Dataset(format!("class {missing} has no latent rows")));
    }
    let column: BTreeMap<usize, usize> = class_ids.iter().enumerate().map(|(k, &c)| (c, k)).collect();
    if let Some(extra) = present.iter().find(|c| !column.contains_key(c)) {
        return Err(Error::Dataset(format!("latent rows for unknown class {extra}")));
    }

    let d = data.latents.cols();
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| {
        data.labels[a].cmp(&data.labels[b]).then_with(|| {
            data.latents
                .row(a)
                .iter()
                .zip(data.latents.row(b))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });

    let mut clf = LinearClassifier::new(d, class_ids.to_vec(), rng);
    let mut adam = AdamState::new([&clf.weight, &clf.bias]);
    for _ in 0..config.epochs {
        let mut perm = order.clone();
        perm.shuffle(rng);
        for chunk in perm.chunks(config.batch_size) {
            let x = data.latents.select_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| column[&data.labels[i]]).collect();
            let mut tape = Tape::new();
            let xv = tape.constant(x);
            let w = tape.param(clf.weight.value.clone());
            let b = tape.param(clf.bias.value.clone());
            let h = tape.matmul(xv, w)?;
            let logits = tape.add_row_bias(h, b)?;
            let loss = tape.softmax_xent(logits, y)?;
            let grads = tape.backward(loss)?;
            for (p, v) in [(&mut clf.weight, w), (&mut clf.bias, b)] {
                if let Some(g) = grads.get(v) {
                    p.grad = g.clone();
                }
            }
            adam.step(vec![&mut clf.weight, &mut clf.bias], config.learning_rate)?;
        }
    }
    Ok(clf)
}

/// `2us / (u + s)`, or 0 when both are 0.
pub fn harmonic_mean(u: f64, s: f64) -> f64 {
    if u + s == 0.0 {
        0.0
    } else {
        2.0 * u * s / (u + s)
    }
}

/// Per-class top-1 accuracies and their unseen / seen / harmonic summaries,
/// all in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct GzslReport {
    pub per_class: BTreeMap<usize, f64>,
    pub unseen: f64,
    pub seen: f64,
    pub harmonic: f64,
    /// Classes without test samples, left out of the means.
    pub skipped: Vec<usize>,
    pub fingerprint: String,
    pub graph_mode: GraphMode,
    pub seed: u64,
}

impl GzslReport {
    /// Builds a report from true and predicted labels.
    pub fn from_predictions(truth: &[usize], predicted: &[usize], seen: &[usize], unseen: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::DimensionMismatch {
                context: "GzslReport::from_predictions",
                expected: truth.len(),
                found: predicted.len(),
            });
        }
        let mut counts: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
        for (t, p) in truth.iter().zip(predicted) {
            let e = counts.entry(*t).or_default();
            e.1 += 1;
            if t == p {
                e.0 += 1;
            }
        }
        let mut per_class = BTreeMap::new();
        let mut skipped = Vec::new();
        let mut mean_over = |ids: &[usize]| {
            let mut accs = Vec::new();
            for id in ids {
                match counts.get(id) {
                    Some(&(c, n)) if n > 0 => {
                        let a = 100.0 * c as f64 / n as f64;
                        per_class.insert(*id, a);
                        accs.push(a);
                    }
                    _ => {
                        log::warn!("class {id} has no test samples; excluded from the mean");
                        skipped.push(*id);
                    }
                }
            }
            if accs.is_empty() {
                0.0
            } else {
                accs.iter().sum::<f64>() / accs.len() as f64
            }
        };
        let u = mean_over(unseen);
        let s = mean_over(seen);
        skipped.sort_unstable();
        Ok(Self {
            per_class,
            unseen: u,
            seen: s,
            harmonic: harmonic_mean(u, s),
            skipped,
            fingerprint: String::new(),
            graph_mode: GraphMode::default(),
            seed: 0,
        })
    }

    /// One machine-readable line.
    pub fn record(&self) -> String {
        format!(
            "fingerprint={}\tgraph_mode={}\tseed={}\tU={:.1}\tS={:.1}\tH={:.1}",
            self.fingerprint,
            self.graph_mode.as_str(),
            self.seed,
            self.unseen,
            self.seen,
            self.harmonic
        )
    }
}

impl fmt::Display for GzslReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<40} {:>6} {:>6} {:>6}", "configuration", "U", "S", "H")?;
        write!(
            f,
            "{:<40} {:>6.1} {:>6.1} {:>6.1}",
            self.fingerprint, self.unseen, self.seen, self.harmonic
        )
    }
}

/// Renders several reports as one table.
pub fn report_table(reports: &[GzslReport]) -> String {
    let mut s = format!("{:<40} {:>6} {:>6} {:>6}\n", "configuration", "U", "S", "H");
    for r in reports {
        s.push_str(&format!(
            "{:<40} {:>6.1} {:>6.1} {:>6.1}\n",
            r.fingerprint, r.unseen, r.seen, r.harmonic
        ));
    }
    s
}

/// Classifies every test image by the mean of its encoding.
pub fn evaluate(classifier: &LinearClassifier, bundle: &ModelBundle, dataset: &GzslDataset) -> Result<GzslReport> {
    let (mean, _) = bundle.image_encoder.encode_tensors(&dataset.test_features)?;
    let predicted = classifier.predict(&mean)?;
    GzslReport::from_predictions(&dataset.test_labels, &predicted, &dataset.seen_ids(), &dataset.unseen_ids())
}

/// Builds the latent dataset, fits the classifier and evaluates. The random
/// stream is derived from `config.seed`, separate from training.
pub fn classify_and_evaluate(bundle: &ModelBundle, dataset: &GzslDataset, config: &TrainConfig) -> Result<GzslReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let latents = build_latent_dataset(
        bundle,
        dataset,
        config.seen_samples_per_class,
        config.unseen_samples_per_class,
        &mut rng,
    )?;
    let class_ids: Vec<usize> = dataset.classes().iter().map(|c| c.id).collect();
    let clf = train_classifier(&latents, &class_ids, config.into(), &mut rng)?;
    let mut report = evaluate(&clf, bundle, dataset)?;
    report.fingerprint = config.fingerprint();
    report.graph_mode = config.toggles().graph_mode;
    report.seed = config.seed;
    Ok(report)
}

/// Train, classify and evaluate one configuration.
pub fn run_once(dataset: &GzslDataset, graph: &LabelGraph, config: &TrainConfig) -> Result<GzslReport> {
    let out = train(dataset, graph, config)?;
    classify_and_evaluate(&out.bundle, dataset, config)
}

/// The loss-term ablation grid: `{ca} × {da}` without and with the graph
/// prior, in that order.
pub fn ablation_grid() -> Vec<LossToggles> {
    let mut grid = Vec::with_capacity(8);
    for (graph_mode, use_prior) in [(GraphMode::None, false), (GraphMode::Full, true)] {
        for use_ca in [false, true] {
            for use_da in [false, true] {
                grid.push(LossToggles {
                    use_ca,
                    use_da,
                    use_prior,
                    graph_mode,
                });
            }
        }
    }
    grid
}

/// The configuration of every cell of `grid`, derived from `base`.
pub fn ablation_configs(base: &TrainConfig, grid: &[LossToggles]) -> Vec<TrainConfig> {
    grid.iter()
        .map(|t| TrainConfig {
            use_ca: t.use_ca,
            use_da: t.use_da,
            use_prior: t.use_prior,
            graph_mode: t.graph_mode,
            ..base.clone()
        })
        .collect()
}

/// Runs every cell of `grid` from `base`.
pub fn ablation_run(
    dataset: &GzslDataset,
    graph: &LabelGraph,
    base: &TrainConfig,
    grid: &[LossToggles],
) -> Result<Vec<GzslReport>> {
    ablation_configs(base, grid)
        .iter()
        .map(|cfg| {
            let report = run_once(dataset, graph, cfg)?;
            log::info!("{}", report.record());
            Ok(report)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_mean_examples() {
        assert_eq!(harmonic_mean(0.0, 0.0), 0.0);
        assert_eq!(harmonic_mean(30.0, 30.0), 30.0);
        assert_eq!(harmonic_mean(0.0, 80.0), 0.0);
        assert!((harmonic_mean(45.0, 38.0) - 41.204819).abs() < 1e-6);
    }

    #[test]
    fn per_class_differs_from_instance_average() {
        // Class 0: 10 samples all right; class 1: 1 sample wrong.
        let mut truth = vec![0; 10];
        truth.push(1);
        let mut pred = vec![0; 10];
        pred.push(0);
        let r = GzslReport::from_predictions(&truth, &pred, &[0, 1], &[]).unwrap();
        assert_eq!(r.seen, 50.0);
        let instance = 100.0 * 10.0 / 11.0;
        assert!((instance - r.seen).abs() > 40.0);
    }

    #[test]
    fn seen_only_predictions_give_zero_h() {
        let truth = [0, 0, 1, 2];
        let pred = [0, 0, 0, 0];
        let r = GzslReport::from_predictions(&truth, &pred, &[0], &[1, 2]).unwrap();
        assert_eq!((r.unseen, r.seen, r.harmonic), (0.0, 100.0, 0.0));
    }

    #[test]
    fn empty_classes_are_skipped() {
        let r = GzslReport::from_predictions(&[0, 1], &[0, 1], &[0, 5], &[1]).unwrap();
        assert_eq!(r.skipped, vec![5]);
        assert_eq!(r.seen, 100.0);
    }

    fn toy_latents() -> LatentDataset {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..100 {
            let c = i % 2;
            let centre = if c == 0 { -3.0 } else { 3.0 };
            rows.push(vec![centre + rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
            labels.push(c * 7);
        }
        LatentDataset {
            latents: Tensor::from_rows(&rows).unwrap(),
            provenance: vec![Provenance::EncodedImage; labels.len()],
            labels,
        }
    }

    #[test]
    fn separable_toy_is_learned() {
        let data = toy_latents();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = ClassifierConfig { epochs: 200, learning_rate: 1e-2, batch_size: 32 };
        let clf = train_classifier(&data, &[0, 7], cfg, &mut rng).unwrap();
        let pred = clf.predict(&data.latents).unwrap();
        let acc = pred.iter().zip(&data.labels).filter(|(a, b)| a == b).count() as f64 / 100.0;
        assert!(acc > 0.99, "{acc}");
    }

    #[test]
    fn row_order_does_not_matter() {
        let data = toy_latents();
        let mut rev = data.clone();
        let idx: Vec<usize> = (0..data.len()).rev().collect();
        rev.latents = data.latents.select_rows(&idx);
        rev.labels = idx.iter().map(|&i| data.labels[i]).collect();
        let cfg = ClassifierConfig::default();
        let a = train_classifier(&data, &[0, 7], cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = train_classifier(&rev, &[0, 7], cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_epochs_and_missing_classes() {
        let data = toy_latents();
        let cfg = ClassifierConfig { epochs: 0, ..Default::default() };
        let clf = train_classifier(&data, &[0, 7], cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let fresh = LinearClassifier::new(2, vec![0, 7], &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(clf, fresh);
        assert!(train_classifier(&data, &[0, 7, 9], cfg, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn grid_has_eight_unique_cells() {
        let grid = ablation_grid();
        let prints: BTreeSet<String> = grid.iter().map(|t| t.fingerprint()).collect();
        assert_eq!(prints.len(), 8);
    }
}
