//! Joint training of the image and attribute VAEs with graph priors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{AdamState, EncodedVars, MlpDecoder, MlpEncoder, Module, Parameter, Tape, Tensor, Var};
use crate::config::TrainConfig;
use crate::dataset::GzslDataset;
use crate::error::{Error, Result};
use crate::gaussian::DiagGaussian;
use crate::graph::{flat_graph_of, impute_attributes, transitive_closure, LabelGraph, NodeKind, RelationClosure};
use crate::loss::{
    cross_alignment, distribution_alignment_batch, graph_vae_loss_encoded, prior_loss_batch, total_objective,
    vae_loss, BatchTerms, Bound, GraphMode, LossToggles, LossWeights,
};

/// The four networks and their shared optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub image_encoder: MlpEncoder,
    pub image_decoder: MlpDecoder,
    pub attribute_encoder: MlpEncoder,
    pub attribute_decoder: MlpDecoder,
    pub adam: AdamState,
}

impl ModelBundle {
    pub fn new<R: Rng + ?Sized>(feature_dim: usize, attribute_dim: usize, cfg: &TrainConfig, rng: &mut R) -> Self {
        let d = cfg.latent_dim;
        let act = cfg.activation;
        let image_encoder = MlpEncoder::new(feature_dim, cfg.image_encoder_hidden, d, act, rng);
        let image_decoder = MlpDecoder::new(d, cfg.image_decoder_hidden, feature_dim, act, rng);
        let attribute_encoder = MlpEncoder::new(attribute_dim, cfg.attribute_encoder_hidden, d, act, rng);
        let attribute_decoder = MlpDecoder::new(d, cfg.attribute_decoder_hidden, attribute_dim, act, rng);
        let mut bundle = Self {
            image_encoder,
            image_decoder,
            attribute_encoder,
            attribute_decoder,
            adam: AdamState::new(std::iter::empty()),
        };
        bundle.adam = AdamState::new(bundle.parameters());
        bundle
    }

    pub fn latent_dim(&self) -> usize {
        self.image_encoder.latent_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.image_encoder.input_dim()
    }

    pub fn attribute_dim(&self) -> usize {
        self.attribute_encoder.input_dim()
    }

    /// Checks that the four networks agree on every shared dimension.
    pub fn validate(&self) -> Result<()> {
        let d = self.latent_dim();
        let pairs = [
            ("attribute encoder latent dim", self.attribute_encoder.latent_dim()),
            ("image decoder latent dim", self.image_decoder.latent_dim()),
            ("attribute decoder latent dim", self.attribute_decoder.latent_dim()),
        ];
        for (what, v) in pairs {
            if v != d {
                return Err(Error::InvalidArgument(format!("{what} {v} differs from {d}")));
            }
        }
        if self.image_decoder.output_dim() != self.feature_dim() {
            return Err(Error::InvalidArgument("image decoder output differs from feature dim".into()));
        }
        if self.attribute_decoder.output_dim() != self.attribute_dim() {
            return Err(Error::InvalidArgument("attribute decoder output differs from attribute dim".into()));
        }
        Ok(())
    }
}

impl Module for ModelBundle {
    fn parameters(&self) -> Vec<&Parameter> {
        let mut out = self.image_encoder.parameters();
        out.extend(self.image_decoder.parameters());
        out.extend(self.attribute_encoder.parameters());
        out.extend(self.attribute_decoder.parameters());
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = self.image_encoder.parameters_mut();
        out.extend(self.image_decoder.parameters_mut());
        out.extend(self.attribute_encoder.parameters_mut());
        out.extend(self.attribute_decoder.parameters_mut());
        out
    }

    fn parameter_names(&self) -> Vec<String> {
        fn prefixed(prefix: &'static str, names: Vec<String>) -> impl Iterator<Item = String> {
            names.into_iter().map(move |n| format!("{prefix}.{n}"))
        }
        prefixed("image_encoder", self.image_encoder.parameter_names())
            .chain(prefixed("image_decoder", self.image_decoder.parameter_names()))
            .chain(prefixed("attribute_encoder", self.attribute_encoder.parameter_names()))
            .chain(prefixed("attribute_decoder", self.attribute_decoder.parameter_names()))
            .collect()
    }
}

/// The four networks registered on one tape.
pub struct BoundBundle<'a> {
    pub image_encoder: Bound<'a, MlpEncoder>,
    pub image_decoder: Bound<'a, MlpDecoder>,
    pub attribute_encoder: Bound<'a, MlpEncoder>,
    pub attribute_decoder: Bound<'a, MlpDecoder>,
}

impl<'a> BoundBundle<'a> {
    pub fn new(bundle: &'a ModelBundle, tape: &mut Tape) -> Self {
        Self {
            image_encoder: Bound::new(&bundle.image_encoder, tape),
            image_decoder: Bound::new(&bundle.image_decoder, tape),
            attribute_encoder: Bound::new(&bundle.attribute_encoder, tape),
            attribute_decoder: Bound::new(&bundle.attribute_decoder, tape),
        }
    }

    /// Tape handles in [`Module::parameters`] order of the bundle.
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.image_encoder.vars.clone();
        v.extend(&self.image_decoder.vars);
        v.extend(&self.attribute_encoder.vars);
        v.extend(&self.attribute_decoder.vars);
        v
    }
}

/// Prior distribution of every node: the attribute encoding for members of
/// the prior set, N(0, I) for the root. Seen classes get no entry.
pub fn encode_priors(encoder: &MlpEncoder, graph: &LabelGraph) -> Result<BTreeMap<usize, DiagGaussian>> {
    let ids = graph.prior_ids();
    let mut out = BTreeMap::new();
    if !ids.is_empty() {
        let attrs = prior_attribute_rows(graph, &ids)?;
        for (id, g) in ids.iter().zip(encoder.encode(&attrs)?) {
            out.insert(*id, g);
        }
    }
    if let Some(r) = graph.root() {
        out.insert(r, DiagGaussian::standard(encoder.latent_dim()));
    }
    Ok(out)
}

fn prior_attribute_rows(graph: &LabelGraph, ids: &[usize]) -> Result<Tensor> {
    let rows = ids
        .iter()
        .map(|&id| {
            graph
                .node(id)
                .and_then(|n| n.attributes.clone())
                .ok_or(Error::MissingAttributes(id))
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::from_rows(&rows)
}

/// Graph structures used during training.
#[derive(Debug, Clone)]
pub struct PriorGraph {
    pub graph: LabelGraph,
    pub closure: RelationClosure,
    /// Prior-set node ids; row `k` of the prior table belongs to `ids[k]` and
    /// the extra final row to the root.
    pub ids: Vec<usize>,
    pub attributes: Tensor,
    row_of: BTreeMap<usize, usize>,
}

impl PriorGraph {
    /// Imputes, roots and closes `graph` (full mode) or replaces it by the flat
    /// baseline (flat mode). Returns `None` in graph-free mode.
    pub fn prepare(graph: &LabelGraph, dataset: &GzslDataset, mode: GraphMode) -> Result<Option<Self>> {
        let g = match mode {
            GraphMode::None => return Ok(None),
            GraphMode::Full => impute_attributes(graph)?.with_root()?,
            GraphMode::Flat => flat_graph_of(graph)?,
        };
        for c in dataset.classes() {
            let node = g
                .node(c.id)
                .ok_or_else(|| Error::Graph(format!("class {} missing from graph", c.id)))?;
            let kind = if c.seen { NodeKind::Seen } else { NodeKind::Unseen };
            if node.kind != kind {
                return Err(Error::Graph(format!("class {} is {} in the graph", c.id, node.kind)));
            }
        }
        let closure = transitive_closure(&g)?;
        let ids = g.prior_ids();
        if ids.is_empty() {
            return Err(Error::Graph("prior set is empty".into()));
        }
        let attributes = prior_attribute_rows(&g, &ids)?;
        let mut row_of: BTreeMap<usize, usize> = ids.iter().enumerate().map(|(k, &id)| (id, k)).collect();
        let root = g.root().ok_or_else(|| Error::Graph("graph has no root".into()))?;
        row_of.insert(root, ids.len());
        Ok(Some(Self {
            graph: g,
            closure,
            ids,
            attributes,
            row_of,
        }))
    }

    /// Row of `id` in the prior table.
    pub fn row(&self, id: usize) -> Option<usize> {
        self.row_of.get(&id).copied()
    }

    fn sample_rows<R: Rng + ?Sized>(&self, id: usize, rng: &mut R) -> Result<(usize, usize)> {
        let (p, n) = self.closure.sample_context(id, rng)?;
        Ok((self.row_of[&p], self.row_of[&n]))
    }
}

/// Prior-loss anchors with their context rows in the prior table.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorBatch {
    pub anchors: Vec<usize>,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

/// Everything random about one optimization step, fixed in advance.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInputs {
    pub images: Tensor,
    pub attributes: Tensor,
    pub image_noise: Tensor,
    pub attribute_noise: Tensor,
    /// Prior-set attribute rows; the prior table is their encoding plus a root row.
    pub prior_attributes: Option<Tensor>,
    /// Per-sample `(positive, negative)` rows in the prior table.
    pub contexts: Option<Vec<(usize, usize)>>,
    pub prior_batch: Option<PriorBatch>,
}

/// Options that shape the step beyond weights and toggles.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepOptions {
    pub squared_w2: bool,
    pub cross_decode_mean: bool,
}

/// The assembled step: total objective and its parts.
#[derive(Debug, Clone, Copy)]
pub struct StepTerms {
    pub total: Var,
    pub terms: BatchTerms,
}

fn gather(tape: &mut Tape, table: EncodedVars, rows: Vec<usize>) -> Result<EncodedVars> {
    Ok(EncodedVars {
        mean: tape.gather_rows(table.mean, rows.clone())?,
        log_var: tape.gather_rows(table.log_var, rows)?,
    })
}

/// Records one step's objective on `tape`.
pub fn step_objective(
    tape: &mut Tape,
    nets: &BoundBundle,
    inputs: &StepInputs,
    weights: &LossWeights,
    toggles: &LossToggles,
    options: StepOptions,
) -> Result<StepTerms> {
    let toggles = toggles.normalized();
    let x_img = tape.constant(inputs.images.clone());
    let x_att = tape.constant(inputs.attributes.clone());

    let table = if toggles.uses_graph() {
        let attrs = inputs
            .prior_attributes
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("graph mode needs prior attributes".into()))?;
        let a = tape.constant(attrs.clone());
        let enc = nets.attribute_encoder.encode(tape, a)?;
        let d = tape.value(enc.mean).cols();
        let zeros = tape.constant(Tensor::zeros(&[1, d]));
        Some(EncodedVars {
            mean: tape.concat_rows(enc.mean, zeros)?,
            log_var: tape.concat_rows(enc.log_var, zeros)?,
        })
    } else {
        None
    };

    let (vae_image, vae_attribute) = match table {
        Some(table) => {
            let ctx = inputs
                .contexts
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("graph mode needs contexts".into()))?;
            let c_p = gather(tape, table, ctx.iter().map(|c| c.0).collect())?;
            let c_n = gather(tape, table, ctx.iter().map(|c| c.1).collect())?;
            let enc_img = nets.image_encoder.encode(tape, x_img)?;
            let enc_att = nets.attribute_encoder.encode(tape, x_att)?;
            let vi = graph_vae_loss_encoded(
                tape,
                x_img,
                enc_img,
                &nets.image_decoder,
                c_p,
                c_n,
                weights.alpha,
                weights.margin,
                inputs.image_noise.clone(),
            )?;
            let va = graph_vae_loss_encoded(
                tape,
                x_att,
                enc_att,
                &nets.attribute_decoder,
                c_p,
                c_n,
                weights.alpha,
                weights.margin,
                inputs.attribute_noise.clone(),
            )?;
            (vi, va)
        }
        None => {
            let vi = vae_loss(
                tape,
                x_img,
                &nets.image_encoder,
                &nets.image_decoder,
                weights.alpha,
                inputs.image_noise.clone(),
            )?;
            let va = vae_loss(
                tape,
                x_att,
                &nets.attribute_encoder,
                &nets.attribute_decoder,
                weights.alpha,
                inputs.attribute_noise.clone(),
            )?;
            (vi, va)
        }
    };

    let cross = if toggles.use_ca {
        let (zi, za) = if options.cross_decode_mean {
            (vae_image.encoded.mean, vae_attribute.encoded.mean)
        } else {
            (vae_image.z, vae_attribute.z)
        };
        Some(cross_alignment(
            tape,
            x_img,
            zi,
            &nets.image_decoder,
            x_att,
            za,
            &nets.attribute_decoder,
        )?)
    } else {
        None
    };
    let da = if toggles.use_da {
        Some(distribution_alignment_batch(
            tape,
            vae_image.encoded,
            vae_attribute.encoded,
            options.squared_w2,
        )?)
    } else {
        None
    };
    let prior = match (toggles.use_prior, table) {
        (true, Some(table)) => {
            let pb = inputs
                .prior_batch
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("prior loss needs a prior batch".into()))?;
            let ci = gather(tape, table, pb.anchors.clone())?;
            let cp = gather(tape, table, pb.positives.clone())?;
            let cn = gather(tape, table, pb.negatives.clone())?;
            Some(prior_loss_batch(tape, ci, cp, cn, weights.margin)?)
        }
        _ => None,
    };

    let terms = BatchTerms {
        vae_image,
        vae_attribute,
        cross_alignment: cross,
        distribution_alignment: da,
        prior,
    };
    let total = total_objective(tape, &terms, weights, &toggles)?;
    Ok(StepTerms { total, terms })
}

/// Mean loss terms and schedule values of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub total: f64,
    pub vae_image: f64,
    pub vae_attribute: f64,
    pub cross_alignment: f64,
    pub distribution_alignment: f64,
    pub prior: f64,
    pub weights: LossWeights,
}

pub const EPOCH_LOG_HEADER: &str =
    "epoch\ttotal\tvae_image\tvae_attribute\tcross_alignment\tdistribution_alignment\tprior\talpha\tbeta\tgamma\tepsilon";

impl EpochStats {
    pub fn tsv_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.epoch,
            self.total,
            self.vae_image,
            self.vae_attribute,
            self.cross_alignment,
            self.distribution_alignment,
            self.prior,
            self.weights.alpha,
            self.weights.beta,
            self.weights.gamma,
            self.weights.epsilon
        )
    }
}

pub fn write_epoch_log(stats: &[EpochStats], path: &Path) -> Result<()> {
    let mut s = String::from(EPOCH_LOG_HEADER);
    s.push('\n');
    for e in stats {
        writeln!(s, "{}", e.tsv_row()).unwrap();
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub stats: Vec<EpochStats>,
}

pub(crate) fn normal_tensor<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let values = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::from_vec(vec![rows, cols], values).expect("shape matches")
}

/// Draws the random inputs of one step.
pub fn draw_step_inputs<R: Rng + ?Sized>(
    rng: &mut R,
    dataset: &GzslDataset,
    prior: Option<&PriorGraph>,
    batch_size: usize,
    latent_dim: usize,
    use_prior: bool,
) -> Result<StepInputs> {
    let n = dataset.num_train();
    let idx: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..n)).collect();
    let labels: Vec<usize> = idx.iter().map(|&i| dataset.train_labels[i]).collect();
    let images = dataset.train_features.select_rows(&idx);
    let attributes = dataset.attribute_rows(&labels)?;
    let image_noise = normal_tensor(rng, batch_size, latent_dim);
    let attribute_noise = normal_tensor(rng, batch_size, latent_dim);
    let (prior_attributes, contexts, prior_batch) = match prior {
        None => (None, None, None),
        Some(pg) => {
            let contexts = labels
                .iter()
                .map(|&l| pg.sample_rows(l, rng))
                .collect::<Result<Vec<_>>>()?;
            let prior_batch = if use_prior {
                let mut pb = PriorBatch {
                    anchors: Vec::with_capacity(batch_size),
                    positives: Vec::with_capacity(batch_size),
                    negatives: Vec::with_capacity(batch_size),
                };
                for _ in 0..batch_size {
                    let k = rng.random_range(0..pg.ids.len());
                    let (p, q) = pg.sample_rows(pg.ids[k], rng)?;
                    pb.anchors.push(k);
                    pb.positives.push(p);
                    pb.negatives.push(q);
                }
                Some(pb)
            } else {
                None
            };
            (Some(pg.attributes.clone()), Some(contexts), prior_batch)
        }
    };
    Ok(StepInputs {
        images,
        attributes,
        image_noise,
        attribute_noise,
        prior_attributes,
        contexts,
        prior_batch,
    })
}

fn check_parameters(bundle: &ModelBundle, epoch: usize) -> Result<()> {
    for (p, name) in bundle.parameters().into_iter().zip(bundle.parameter_names()) {
        if !p.value.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                step: 0,
                terms: format!("parameter {name} became non-finite"),
            });
        }
    }
    Ok(())
}

/// Trains a fresh bundle. All randomness derives from `config.seed`.
pub fn train(dataset: &GzslDataset, graph: &LabelGraph, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.num_train() == 0 {
        return Err(Error::Dataset("no training instances".into()));
    }
    let toggles = config.toggles();
    let prior = PriorGraph::prepare(graph, dataset, toggles.graph_mode)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut bundle = ModelBundle::new(dataset.feature_dim(), dataset.attribute_dim(), config, &mut rng);
    let options = StepOptions {
        squared_w2: config.squared_w2,
        cross_decode_mean: config.cross_decode_mean,
    };
    let steps = dataset.num_train().div_ceil(config.batch_size);
    let mut stats = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let weights = config.weights_at(epoch);
        let mut sums = [0.0f64; 6];
        for step in 0..steps {
            let inputs = draw_step_inputs(
                &mut rng,
                dataset,
                prior.as_ref(),
                config.batch_size,
                config.latent_dim,
                toggles.use_prior,
            )?;
            let mut tape = Tape::new();
            let (st, vars) = {
                let nets = BoundBundle::new(&bundle, &mut tape);
                let st = step_objective(&mut tape, &nets, &inputs, &weights, &toggles, options)?;
                (st, nets.vars())
            };
            let value = |v: Option<Var>| v.map_or(0.0, |v| tape.value(v).item());
            let row = [
                tape.value(st.total).item(),
                tape.value(st.terms.vae_image.loss).item(),
                tape.value(st.terms.vae_attribute.loss).item(),
                value(st.terms.cross_alignment),
                value(st.terms.distribution_alignment),
                value(st.terms.prior),
            ];
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    terms: format!(
                        "total={} vae_image={} vae_attribute={} ca={} da={} prior={}",
                        row[0], row[1], row[2], row[3], row[4], row[5]
                    ),
                });
            }
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
            let grads = tape.backward(st.total)?;
            bundle.accumulate_grads(&grads, &vars);
            let ModelBundle {
                image_encoder,
                image_decoder,
                attribute_encoder,
                attribute_decoder,
                adam,
            } = &mut bundle;
            let mut params = image_encoder.parameters_mut();
            params.extend(image_decoder.parameters_mut());
            params.extend(attribute_encoder.parameters_mut());
            params.extend(attribute_decoder.parameters_mut());
            adam.step(params, config.learning_rate)?;
        }
        check_parameters(&bundle, epoch)?;
        let n = steps as f64;
        let e = EpochStats {
            epoch,
            total: sums[0] / n,
            vae_image: sums[1] / n,
            vae_attribute: sums[2] / n,
            cross_alignment: sums[3] / n,
            distribution_alignment: sums[4] / n,
            prior: sums[5] / n,
            weights,
        };
        log::info!("epoch {epoch}: total {:.4}", e.total);
        stats.push(e);
    }
    Ok(TrainOutcome { bundle, stats })
}
