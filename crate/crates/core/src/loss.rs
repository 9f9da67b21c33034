//! Loss terms, loss-weight schedules and the composed training objective.
//!
//! Tape builders return batch means so every term is on the same per-sample
//! scale. KL regularizers always enter the minimized objective with a
//! positive sign.

use serde::{Deserialize, Serialize};

use crate::autodiff::{EncodedVars, MlpDecoder, MlpEncoder, Module, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::gaussian::{kl_diag, wasserstein2_diag, wasserstein2_sq_diag, DiagGaussian};

/// Scalar loss scales for one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub margin: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            epsilon: 0.0,
            margin: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.gamma, self.epsilon, self.margin];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be finite and nonnegative: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Linear warm-up: zero until `start_epoch`, then `increment` per epoch up to
/// and including `end_epoch`, constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub start_epoch: usize,
    pub end_epoch: usize,
    pub increment: f64,
}

impl AnnealSchedule {
    pub fn new(start_epoch: usize, end_epoch: usize, increment: f64) -> Result<Self> {
        let s = Self {
            start_epoch,
            end_epoch,
            increment,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.start_epoch >= self.end_epoch || !self.increment.is_finite() || self.increment < 0.0 {
            return Err(Error::Config(format!("malformed schedule {self:?}")));
        }
        Ok(())
    }

    /// Weight in effect during `epoch` (1-based).
    pub fn value(&self, epoch: usize) -> f64 {
        schedule_value(self, epoch)
    }

    /// Weight once the schedule has saturated.
    pub fn cap(&self) -> f64 {
        self.increment * (self.end_epoch - self.start_epoch) as f64
    }
}

pub fn schedule_value(s: &AnnealSchedule, epoch: usize) -> f64 {
    let steps = epoch
        .saturating_sub(s.start_epoch)
        .min(s.end_epoch - s.start_epoch);
    s.increment * steps as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GraphMode {
    #[default]
    Full,
    Flat,
    None,
}

impl GraphMode {
    pub fn as_str(self) -> &'static str {
        match self {
            GraphMode::Full => "full",
            GraphMode::Flat => "flat",
            GraphMode::None => "none",
        }
    }
}

impl std::str::FromStr for GraphMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(GraphMode::Full),
            "flat" => Ok(GraphMode::Flat),
            "none" => Ok(GraphMode::None),
            other => Err(Error::Config(format!("unknown graph mode {other:?}"))),
        }
    }
}

/// Which optional terms participate in the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LossToggles {
    pub use_ca: bool,
    pub use_da: bool,
    pub use_prior: bool,
    pub graph_mode: GraphMode,
}

impl Default for LossToggles {
    fn default() -> Self {
        Self {
            use_ca: true,
            use_da: true,
            use_prior: true,
            graph_mode: GraphMode::Full,
        }
    }
}

impl LossToggles {
    /// `graph_mode = none` disables the prior loss and the ranking terms.
    pub fn normalized(self) -> Self {
        if self.graph_mode == GraphMode::None {
            Self {
                use_prior: false,
                ..self
            }
        } else {
            self
        }
    }

    pub fn uses_graph(&self) -> bool {
        self.graph_mode != GraphMode::None
    }

    pub fn fingerprint(&self) -> String {
        let t = self.normalized();
        format!(
            "graph={}/ca={}/da={}/prior={}",
            t.graph_mode.as_str(),
            t.use_ca as u8,
            t.use_da as u8,
            t.use_prior as u8
        )
    }
}

// ---------------------------------------------------------------------------
// Scalar forms on plain distributions.

/// `max(0, m + KL(w ‖ c_p) − KL(w ‖ c_n))`.
pub fn ranking_margin(w: &DiagGaussian, c_p: &DiagGaussian, c_n: &DiagGaussian, m: f64) -> Result<f64> {
    Ok((m + kl_diag(w, c_p)? - kl_diag(w, c_n)?).max(0.0))
}

/// Ranking term of a prior node plus its KL to N(0, I).
pub fn prior_loss(c_i: &DiagGaussian, c_p: &DiagGaussian, c_n: &DiagGaussian, m: f64) -> Result<f64> {
    let std = DiagGaussian::standard(c_i.dim());
    Ok(ranking_margin(c_i, c_p, c_n, m)? + kl_diag(c_i, &std)?)
}

pub fn distribution_alignment(q_i: &DiagGaussian, q_j: &DiagGaussian, squared: bool) -> Result<f64> {
    if squared {
        wasserstein2_sq_diag(q_i, q_j)
    } else {
        wasserstein2_diag(q_i, q_j)
    }
}

/// Batch-mean L1 reconstruction error on plain tensors.
pub fn l1_recon(x: &Tensor, x_hat: &Tensor) -> Result<f64> {
    if x.shape() != x_hat.shape() {
        return Err(Error::ShapeMismatch {
            context: "l1_recon",
            left: x.shape().to_vec(),
            right: x_hat.shape().to_vec(),
        });
    }
    let total: f64 = x.values().iter().zip(x_hat.values()).map(|(a, b)| (a - b).abs()).sum();
    Ok(total / x.rows().max(1) as f64)
}

// ---------------------------------------------------------------------------
// Tape builders.

/// A network with its parameters registered on a tape.
#[derive(Debug, Clone)]
pub struct Bound<'a, M> {
    pub net: &'a M,
    pub vars: Vec<Var>,
}

impl<'a, M: Module> Bound<'a, M> {
    pub fn new(net: &'a M, tape: &mut Tape) -> Self {
        Self {
            vars: net.bind(tape),
            net,
        }
    }
}

impl Bound<'_, MlpEncoder> {
    pub fn encode(&self, tape: &mut Tape, x: Var) -> Result<EncodedVars> {
        self.net.forward(tape, &self.vars, x)
    }
}

impl Bound<'_, MlpDecoder> {
    pub fn decode(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        self.net.forward(tape, &self.vars, z)
    }
}

/// Row-wise KL(q ‖ N(0, I)), shape `[n, 1]`.
pub fn kl_standard_rows(tape: &mut Tape, q: EncodedVars) -> Result<Var> {
    let zeros = Tensor::zeros(tape.value(q.mean).shape());
    let mz = tape.constant(zeros.clone());
    let lz = tape.constant(zeros);
    tape.kl_rows(q.mean, q.log_var, mz, lz)
}

/// Row-wise `max(0, m + KL(w ‖ c_p) − KL(w ‖ c_n))`, shape `[n, 1]`.
pub fn ranking_margin_rows(tape: &mut Tape, w: EncodedVars, c_p: EncodedVars, c_n: EncodedVars, m: f64) -> Result<Var> {
    let kp = tape.kl_rows(w.mean, w.log_var, c_p.mean, c_p.log_var)?;
    let kn = tape.kl_rows(w.mean, w.log_var, c_n.mean, c_n.log_var)?;
    let d = tape.sub(kp, kn)?;
    Ok(tape.hinge(d, m))
}

/// The pieces of one modality's VAE loss.
#[derive(Debug, Clone, Copy)]
pub struct VaeTerms {
    pub loss: Var,
    pub recon: Var,
    pub kl: Var,
    pub rank: Option<Var>,
    pub encoded: EncodedVars,
    pub z: Var,
}

/// Standard-normal-prior VAE loss: `L1(x, D(z)) + α · KL(Q(x) ‖ N(0, I))`.
pub fn vae_loss(
    tape: &mut Tape,
    x: Var,
    encoder: &Bound<MlpEncoder>,
    decoder: &Bound<MlpDecoder>,
    alpha: f64,
    noise: Tensor,
) -> Result<VaeTerms> {
    let encoded = encoder.encode(tape, x)?;
    let z = tape.reparam(encoded.mean, encoded.log_var, noise)?;
    let x_hat = decoder.decode(tape, z)?;
    let recon = tape.l1(x, x_hat)?;
    let kl_rows = kl_standard_rows(tape, encoded)?;
    let kl = tape.mean(kl_rows);
    let reg = tape.scale(kl, alpha);
    let loss = tape.add(recon, reg)?;
    Ok(VaeTerms {
        loss,
        recon,
        kl,
        rank: None,
        encoded,
        z,
    })
}

/// Graph-prior VAE loss:
/// `L1(x, D(z)) + α · [rank(Q(x), c_p, c_n; m) + KL(Q(x) ‖ N(0, I))]`.
#[allow(clippy::too_many_arguments)]
pub fn graph_vae_loss(
    tape: &mut Tape,
    x: Var,
    encoder: &Bound<MlpEncoder>,
    decoder: &Bound<MlpDecoder>,
    c_p: EncodedVars,
    c_n: EncodedVars,
    alpha: f64,
    margin: f64,
    noise: Tensor,
) -> Result<VaeTerms> {
    let encoded = encoder.encode(tape, x)?;
    graph_vae_loss_encoded(tape, x, encoded, decoder, c_p, c_n, alpha, margin, noise)
}

/// [`graph_vae_loss`] for an input that has already been encoded.
#[allow(clippy::too_many_arguments)]
pub fn graph_vae_loss_encoded(
    tape: &mut Tape,
    x: Var,
    encoded: EncodedVars,
    decoder: &Bound<MlpDecoder>,
    c_p: EncodedVars,
    c_n: EncodedVars,
    alpha: f64,
    margin: f64,
    noise: Tensor,
) -> Result<VaeTerms> {
    let z = tape.reparam(encoded.mean, encoded.log_var, noise)?;
    let x_hat = decoder.decode(tape, z)?;
    let recon = tape.l1(x, x_hat)?;
    let kl_rows = kl_standard_rows(tape, encoded)?;
    let kl = tape.mean(kl_rows);
    let rank_rows = ranking_margin_rows(tape, encoded, c_p, c_n, margin)?;
    let rank = tape.mean(rank_rows);
    let bracket = tape.add(rank, kl)?;
    let reg = tape.scale(bracket, alpha);
    let loss = tape.add(recon, reg)?;
    Ok(VaeTerms {
        loss,
        recon,
        kl,
        rank: Some(rank),
        encoded,
        z,
    })
}

/// `L1(x_j, D_j(z_i)) + L1(x_i, D_i(z_j))`, where `z_*` are latent codes of
/// same-class samples from each modality.
pub fn cross_alignment(
    tape: &mut Tape,
    x_i: Var,
    z_i: Var,
    dec_i: &Bound<MlpDecoder>,
    x_j: Var,
    z_j: Var,
    dec_j: &Bound<MlpDecoder>,
) -> Result<Var> {
    let j_from_i = dec_j.decode(tape, z_i)?;
    let i_from_j = dec_i.decode(tape, z_j)?;
    let a = tape.l1(x_j, j_from_i)?;
    let b = tape.l1(x_i, i_from_j)?;
    tape.add(a, b)
}

/// Batch-mean 2-Wasserstein distance between paired encodings.
pub fn distribution_alignment_batch(tape: &mut Tape, q_i: EncodedVars, q_j: EncodedVars, squared: bool) -> Result<Var> {
    let rows = tape.w2_rows(q_i.mean, q_i.log_var, q_j.mean, q_j.log_var, squared)?;
    Ok(tape.mean(rows))
}

/// Batch-mean prior loss: ranking of each anchor against its contexts plus
/// its KL to N(0, I).
pub fn prior_loss_batch(tape: &mut Tape, c_i: EncodedVars, c_p: EncodedVars, c_n: EncodedVars, m: f64) -> Result<Var> {
    let rank = ranking_margin_rows(tape, c_i, c_p, c_n, m)?;
    let kl = kl_standard_rows(tape, c_i)?;
    let rows = tape.add(rank, kl)?;
    Ok(tape.mean(rows))
}

/// Per-batch terms feeding [`total_objective`].
#[derive(Debug, Clone, Copy)]
pub struct BatchTerms {
    pub vae_image: VaeTerms,
    pub vae_attribute: VaeTerms,
    pub cross_alignment: Option<Var>,
    pub distribution_alignment: Option<Var>,
    pub prior: Option<Var>,
}

/// `L̂_VAE^img + L̂_VAE^att + β·L_CA + γ·L_W + ε·L_prior`, with disabled terms
/// dropped entirely.
pub fn total_objective(tape: &mut Tape, terms: &BatchTerms, weights: &LossWeights, toggles: &LossToggles) -> Result<Var> {
    let toggles = toggles.normalized();
    let mut total = tape.add(terms.vae_image.loss, terms.vae_attribute.loss)?;
    let optional = [
        (toggles.use_ca, terms.cross_alignment, weights.beta, "cross_alignment"),
        (toggles.use_da, terms.distribution_alignment, weights.gamma, "distribution_alignment"),
        (toggles.use_prior, terms.prior, weights.epsilon, "prior"),
    ];
    for (on, term, w, name) in optional {
        if !on {
            continue;
        }
        let term = term.ok_or_else(|| Error::InvalidArgument(format!("{name} enabled but not computed")))?;
        let scaled = tape.scale(term, w);
        total = tape.add(total, scaled)?;
    }
    Ok(total)
}
