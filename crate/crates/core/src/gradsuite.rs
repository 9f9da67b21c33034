//! Finite-difference checks of every objective term on a toy model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{finite_diff_check, EncodedVars, Module, Tape, Tensor, Var};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::loss::{
    cross_alignment, distribution_alignment_batch, graph_vae_loss, prior_loss_batch, ranking_margin_rows, vae_loss,
    Bound, GraphMode, LossToggles, LossWeights,
};
use crate::train::{normal_tensor, step_objective, BoundBundle, ModelBundle, PriorBatch, StepInputs, StepOptions};

/// The objective terms covered by [`run_suite`].
pub const TERMS: [&str; 7] = [
    "vae",
    "cross_alignment",
    "distribution_alignment",
    "ranking",
    "graph_vae",
    "prior",
    "total",
];

/// Points closer than this to a non-differentiable kink are redrawn.
pub const MIN_KINK_MARGIN: f64 = 1e-3;
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct TermCheck {
    pub term: &'static str,
    pub points: usize,
    pub rejected: usize,
    pub max_rel_error: f64,
}

fn toy_config() -> TrainConfig {
    TrainConfig {
        latent_dim: 2,
        image_encoder_hidden: 4,
        image_decoder_hidden: 3,
        attribute_encoder_hidden: 4,
        attribute_decoder_hidden: 3,
        ..Default::default()
    }
}

const FEATURES: usize = 3;
const ATTRIBUTES: usize = 2;
const BATCH: usize = 3;
const PRIORS: usize = 3;

fn draw_inputs<R: Rng>(rng: &mut R) -> StepInputs {
    let d = toy_config().latent_dim;
    let table = PRIORS + 1;
    let pick = |rng: &mut R| (0..BATCH).map(|_| rng.random_range(0..table)).collect::<Vec<_>>();
    let pos = pick(rng);
    let neg = pick(rng);
    let anchors = (0..BATCH).map(|_| rng.random_range(0..PRIORS)).collect();
    let positives = pick(rng);
    let negatives = pick(rng);
    StepInputs {
        images: normal_tensor(rng, BATCH, FEATURES),
        attributes: normal_tensor(rng, BATCH, ATTRIBUTES),
        image_noise: normal_tensor(rng, BATCH, d),
        attribute_noise: normal_tensor(rng, BATCH, d),
        prior_attributes: Some(normal_tensor(rng, PRIORS, ATTRIBUTES)),
        contexts: Some(pos.into_iter().zip(neg).collect()),
        prior_batch: Some(PriorBatch {
            anchors,
            positives,
            negatives,
        }),
    }
}

/// Rebinds the bundle's networks onto externally created parameter vars.
fn bind_vars<'a>(bundle: &'a ModelBundle, vars: &[Var]) -> BoundBundle<'a> {
    let n_enc = bundle.image_encoder.parameters().len();
    let n_dec = bundle.image_decoder.parameters().len();
    let mut at = 0;
    let mut take = |n: usize| {
        let s = vars[at..at + n].to_vec();
        at += n;
        s
    };
    BoundBundle {
        image_encoder: Bound { net: &bundle.image_encoder, vars: take(n_enc) },
        image_decoder: Bound { net: &bundle.image_decoder, vars: take(n_dec) },
        attribute_encoder: Bound { net: &bundle.attribute_encoder, vars: take(n_enc) },
        attribute_decoder: Bound { net: &bundle.attribute_decoder, vars: take(n_dec) },
    }
}

fn prior_table(tape: &mut Tape, nets: &BoundBundle, inputs: &StepInputs) -> Result<EncodedVars> {
    let a = tape.constant(inputs.prior_attributes.clone().expect("toy inputs"));
    let enc = nets.attribute_encoder.encode(tape, a)?;
    let zeros = tape.constant(Tensor::zeros(&[1, toy_config().latent_dim]));
    Ok(EncodedVars {
        mean: tape.concat_rows(enc.mean, zeros)?,
        log_var: tape.concat_rows(enc.log_var, zeros)?,
    })
}

fn gather(tape: &mut Tape, t: EncodedVars, rows: Vec<usize>) -> Result<EncodedVars> {
    Ok(EncodedVars {
        mean: tape.gather_rows(t.mean, rows.clone())?,
        log_var: tape.gather_rows(t.log_var, rows)?,
    })
}

fn term_loss(term: &str, tape: &mut Tape, nets: &BoundBundle, inputs: &StepInputs, w: &LossWeights) -> Result<Var> {
    let x_img = tape.constant(inputs.images.clone());
    let x_att = tape.constant(inputs.attributes.clone());
    let ctx = inputs.contexts.as_ref().expect("toy inputs");
    match term {
        "vae" => Ok(vae_loss(tape, x_img, &nets.image_encoder, &nets.image_decoder, w.alpha, inputs.image_noise.clone())?.loss),
        "cross_alignment" => {
            let qi = nets.image_encoder.encode(tape, x_img)?;
            let qa = nets.attribute_encoder.encode(tape, x_att)?;
            let zi = tape.reparam(qi.mean, qi.log_var, inputs.image_noise.clone())?;
            let za = tape.reparam(qa.mean, qa.log_var, inputs.attribute_noise.clone())?;
            cross_alignment(tape, x_img, zi, &nets.image_decoder, x_att, za, &nets.attribute_decoder)
        }
        "distribution_alignment" => {
            let qi = nets.image_encoder.encode(tape, x_img)?;
            let qa = nets.attribute_encoder.encode(tape, x_att)?;
            distribution_alignment_batch(tape, qi, qa, false)
        }
        "ranking" => {
            let table = prior_table(tape, nets, inputs)?;
            let cp = gather(tape, table, ctx.iter().map(|c| c.0).collect())?;
            let cn = gather(tape, table, ctx.iter().map(|c| c.1).collect())?;
            let q = nets.image_encoder.encode(tape, x_img)?;
            let rows = ranking_margin_rows(tape, q, cp, cn, w.margin)?;
            Ok(tape.mean(rows))
        }
        "graph_vae" => {
            let table = prior_table(tape, nets, inputs)?;
            let cp = gather(tape, table, ctx.iter().map(|c| c.0).collect())?;
            let cn = gather(tape, table, ctx.iter().map(|c| c.1).collect())?;
            Ok(graph_vae_loss(
                tape,
                x_att,
                &nets.attribute_encoder,
                &nets.attribute_decoder,
                cp,
                cn,
                w.alpha,
                w.margin,
                inputs.attribute_noise.clone(),
            )?
            .loss)
        }
        "prior" => {
            let table = prior_table(tape, nets, inputs)?;
            let pb = inputs.prior_batch.as_ref().expect("toy inputs");
            let ci = gather(tape, table, pb.anchors.clone())?;
            let cp = gather(tape, table, pb.positives.clone())?;
            let cn = gather(tape, table, pb.negatives.clone())?;
            prior_loss_batch(tape, ci, cp, cn, w.margin)
        }
        "total" => {
            let toggles = LossToggles { graph_mode: GraphMode::Full, ..Default::default() };
            Ok(step_objective(tape, nets, inputs, w, &toggles, StepOptions::default())?.total)
        }
        other => Err(Error::InvalidArgument(format!("unknown term {other:?}"))),
    }
}

/// Checks one term at `points` random points away from kinks.
pub fn check_term(term: &'static str, points: usize, seed: u64) -> Result<TermCheck> {
    let cfg = toy_config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut accepted = 0;
    let mut rejected = 0;
    let mut worst: f64 = 0.0;
    while accepted < points {
        if rejected > 100 * points.max(1) {
            return Err(Error::InvalidArgument(format!("{term}: no kink-free points found")));
        }
        let bundle = ModelBundle::new(FEATURES, ATTRIBUTES, &cfg, &mut rng);
        let inputs = draw_inputs(&mut rng);
        let weights = LossWeights {
            alpha: rng.random_range(0.1..1.0),
            beta: rng.random_range(0.1..1.0),
            gamma: rng.random_range(0.1..1.0),
            epsilon: rng.random_range(0.1..1.0),
            margin: rng.random_range(0.5..2.0),
        };
        let params: Vec<Tensor> = bundle.parameters().iter().map(|p| p.value.clone()).collect();
        let check = finite_diff_check(
            |tape, vars| {
                let nets = bind_vars(&bundle, vars);
                term_loss(term, tape, &nets, &inputs, &weights)
            },
            &params,
            FD_STEP,
        )?;
        if check.kink_margin < MIN_KINK_MARGIN {
            rejected += 1;
            continue;
        }
        accepted += 1;
        worst = worst.max(check.max_rel_error);
    }
    Ok(TermCheck {
        term,
        points,
        rejected,
        max_rel_error: worst,
    })
}

/// Runs [`check_term`] for every entry of [`TERMS`].
pub fn run_suite(points: usize, seed: u64) -> Result<Vec<TermCheck>> {
    TERMS
        .iter()
        .enumerate()
        .map(|(k, t)| check_term(t, points, seed.wrapping_add(k as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_term_passes_on_a_few_points() {
        for c in run_suite(3, 11).unwrap() {
            assert!(c.max_rel_error < 1e-4, "{c:?}");
        }
    }
}
