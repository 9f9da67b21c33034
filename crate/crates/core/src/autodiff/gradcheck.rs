//! Central finite-difference verification of tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Outcome of [`finite_diff_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Worst element-wise relative error between analytic and numeric gradients.
    pub max_rel_error: f64,
    /// Kink margin of the unperturbed forward pass (see [`Tape::kink_margin`]).
    pub kink_margin: f64,
    /// Number of scalar entries compared.
    pub entries: usize,
}

/// Gradients below this magnitude are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares backward gradients of `loss_fn` against central differences.
///
/// `loss_fn` receives a fresh tape and one trainable [`Var`] per entry in
/// `params` and must return a scalar node. It has to be deterministic: any
/// randomness (reparameterization noise, context draws) is fixed by the caller.
pub fn finite_diff_check<F>(loss_fn: F, params: &[Tensor], step: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let out = loss_fn(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = loss_fn(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let kink_margin = tape.kink_margin();

    let mut work: Vec<Tensor> = params.to_vec();
    let mut max_rel_error: f64 = 0.0;
    let mut entries = 0;
    for (pi, v) in vars.iter().enumerate() {
        let analytic = grads
            .get(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(params[pi].shape()));
        for k in 0..params[pi].len() {
            let orig = params[pi].values()[k];
            work[pi].values_mut()[k] = orig + step;
            let up = eval(&work)?;
            work[pi].values_mut()[k] = orig - step;
            let down = eval(&work)?;
            work[pi].values_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * step);
            max_rel_error = max_rel_error.max(relative_error(analytic.values()[k], numeric));
            entries += 1;
        }
    }
    Ok(GradCheck {
        max_rel_error,
        kink_margin,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_loss_is_exact() {
        let w = Tensor::from_vec(vec![1, 3], vec![0.3, -1.0, 2.0]).unwrap();
        let c = Tensor::from_vec(vec![3, 1], vec![1.5, 2.0, -0.5]).unwrap();
        let check = finite_diff_check(
            |tape, v| {
                let c = tape.constant(c.clone());
                tape.matmul(v[0], c)
            },
            &[w],
            1e-5,
        )
        .unwrap();
        assert!(check.max_rel_error < 1e-9, "{check:?}");
        assert_eq!(check.entries, 3);
    }

    #[test]
    fn l1_away_from_kinks() {
        let a = Tensor::from_vec(vec![2, 2], vec![0.3, -1.0, 2.0, 0.7]).unwrap();
        let b = Tensor::from_vec(vec![2, 2], vec![1.0, 0.5, -1.0, 0.2]).unwrap();
        let check = finite_diff_check(
            |tape, v| {
                let sq = tape.mul(v[0], v[0])?;
                tape.l1(sq, v[1])
            },
            &[a, b],
            1e-5,
        )
        .unwrap();
        assert!(check.kink_margin > 1e-3);
        assert!(check.max_rel_error < 1e-5, "{check:?}");
    }

    #[test]
    fn margin_away_from_hinge() {
        let x = Tensor::from_vec(vec![3, 1], vec![0.4, -0.2, 1.3]).unwrap();
        let check = finite_diff_check(
            |tape, v| {
                let sq = tape.mul(v[0], v[0])?;
                let h = tape.hinge(sq, 0.1);
                Ok(tape.mean(h))
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(check.max_rel_error < 1e-5, "{check:?}");
    }
}
