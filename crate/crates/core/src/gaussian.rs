//! Diagonal-covariance Gaussians and their closed-form divergences.
//!
//! Every distribution in the model (encoder outputs, learned priors, the
//! fixed standard-normal root) is a [`DiagGaussian`]. Divergences are always
//! evaluated in `f64`.

use crate::error::{Error, Result};

/// Lower bound applied to log-variances at construction.
pub const LOG_VAR_MIN: f64 = -30.0;
/// Upper bound applied to log-variances at construction.
pub const LOG_VAR_MAX: f64 = 30.0;

/// A multivariate Gaussian with diagonal covariance, stored as mean and
/// per-dimension log-variance.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    log_var: Vec<f64>,
}

impl DiagGaussian {
    /// Builds a Gaussian, clamping each log-variance into
    /// [`LOG_VAR_MIN`, `LOG_VAR_MAX`].
    pub fn new(mean: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::InvalidArgument(
                "gaussian dimension must be at least 1".into(),
            ));
        }
        if mean.len() != log_var.len() {
            return Err(Error::DimensionMismatch {
                context: "DiagGaussian::new",
                expected: mean.len(),
                found: log_var.len(),
            });
        }
        if mean.iter().chain(log_var.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("DiagGaussian::new"));
        }
        let log_var = log_var
            .into_iter()
            .map(|v| v.clamp(LOG_VAR_MIN, LOG_VAR_MAX))
            .collect();
        Ok(Self { mean, log_var })
    }

    /// N(0, I) in `dim` dimensions.
    pub fn standard(dim: usize) -> Self {
        assert!(dim >= 1, "gaussian dimension must be at least 1");
        Self {
            mean: vec![0.0; dim],
            log_var: vec![0.0; dim],
        }
    }

    /// Mean `mean` with every variance equal to `variance`.
    pub fn isotropic(mean: Vec<f64>, variance: f64) -> Result<Self> {
        let lv = variance.ln();
        let d = mean.len();
        Self::new(mean, vec![lv; d])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn log_var(&self) -> &[f64] {
        &self.log_var
    }

    pub fn std_dev(&self) -> Vec<f64> {
        self.log_var.iter().map(|lv| (0.5 * lv).exp()).collect()
    }

    /// The `i`-th coordinate as a one-dimensional Gaussian.
    pub fn marginal(&self, i: usize) -> DiagGaussian {
        DiagGaussian {
            mean: vec![self.mean[i]],
            log_var: vec![self.log_var[i]],
        }
    }
}

fn check_same_dim(context: &'static str, p: &DiagGaussian, q: &DiagGaussian) -> Result<()> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            context,
            expected: p.dim(),
            found: q.dim(),
        });
    }
    Ok(())
}

/// KL(p ‖ q) for diagonal Gaussians.
pub fn kl_diag(p: &DiagGaussian, q: &DiagGaussian) -> Result<f64> {
    check_same_dim("kl_diag", p, q)?;
    let mut acc = 0.0;
    for j in 0..p.dim() {
        let (mp, lp) = (p.mean[j], p.log_var[j]);
        let (mq, lq) = (q.mean[j], q.log_var[j]);
        let diff = mq - mp;
        acc += (lp - lq).exp() + diff * diff * (-lq).exp() - 1.0 + lq - lp;
    }
    let kl = 0.5 * acc;
    if !kl.is_finite() {
        return Err(Error::NonFinite("kl_diag"));
    }
    // Rounding can leave a tiny negative residue when p ≈ q.
    Ok(kl.max(0.0))
}

/// Squared 2-Wasserstein distance between diagonal Gaussians.
pub fn wasserstein2_sq_diag(p: &DiagGaussian, q: &DiagGaussian) -> Result<f64> {
    check_same_dim("wasserstein2_diag", p, q)?;
    let mut acc = 0.0;
    for j in 0..p.dim() {
        let dm = p.mean[j] - q.mean[j];
        let ds = (0.5 * p.log_var[j]).exp() - (0.5 * q.log_var[j]).exp();
        acc += dm * dm + ds * ds;
    }
    Ok(acc)
}

/// 2-Wasserstein distance (unsquared) between diagonal Gaussians.
pub fn wasserstein2_diag(p: &DiagGaussian, q: &DiagGaussian) -> Result<f64> {
    wasserstein2_sq_diag(p, q).map(f64::sqrt)
}

/// Asymmetric similarity used by the ranking objective: `-KL(w ‖ c)`.
pub fn energy(w: &DiagGaussian, c: &DiagGaussian) -> Result<f64> {
    kl_diag(w, c).map(|kl| -kl)
}

/// Reparameterized draw `mean + exp(log_var / 2) * noise`.
pub fn sample_reparam(p: &DiagGaussian, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != p.dim() {
        return Err(Error::DimensionMismatch {
            context: "sample_reparam",
            expected: p.dim(),
            found: noise.len(),
        });
    }
    Ok(p.mean
        .iter()
        .zip(&p.log_var)
        .zip(noise)
        .map(|((m, lv), n)| m + (0.5 * lv).exp() * n)
        .collect())
}

/// Per-dimension partial derivatives of [`sample_reparam`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReparamGrad {
    pub d_mean: Vec<f64>,
    pub d_log_var: Vec<f64>,
}

pub fn sample_reparam_grad(p: &DiagGaussian, noise: &[f64]) -> Result<ReparamGrad> {
    if noise.len() != p.dim() {
        return Err(Error::DimensionMismatch {
            context: "sample_reparam_grad",
            expected: p.dim(),
            found: noise.len(),
        });
    }
    Ok(ReparamGrad {
        d_mean: vec![1.0; p.dim()],
        d_log_var: p
            .log_var
            .iter()
            .zip(noise)
            .map(|(lv, n)| 0.5 * (0.5 * lv).exp() * n)
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g1(mean: f64, var: f64) -> DiagGaussian {
        DiagGaussian::isotropic(vec![mean], var).unwrap()
    }

    // Simpson integration of p (ln p - ln q) on [-40, 40].
    fn kl_quadrature(mp: f64, vp: f64, mq: f64, vq: f64) -> f64 {
        let log_pdf = |x: f64, m: f64, v: f64| {
            -(x - m) * (x - m) / (2.0 * v) - 0.5 * (2.0 * std::f64::consts::PI * v).ln()
        };
        let (a, b, n) = (-40.0, 40.0, 200_000usize);
        let h = (b - a) / n as f64;
        let f = |x: f64| {
            let lp = log_pdf(x, mp, vp);
            lp.exp() * (lp - log_pdf(x, mq, vq))
        };
        let mut s = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    #[test]
    fn kl_identity_is_zero() {
        let p = DiagGaussian::standard(4);
        assert_eq!(kl_diag(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn kl_mean_shift() {
        assert!((kl_diag(&g1(2.0, 1.0), &g1(0.0, 1.0)).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn kl_variance_ratio_matches_quadrature() {
        let oracle = kl_quadrature(0.0, 4.0, 0.0, 1.0);
        assert!((oracle - 0.806_853).abs() < 1e-6, "oracle {oracle}");
        let kl = kl_diag(&g1(0.0, 4.0), &g1(0.0, 1.0)).unwrap();
        assert!((kl - oracle).abs() < 1e-9);
    }

    #[test]
    fn energy_is_asymmetric() {
        let w = g1(0.0, 4.0);
        let c = g1(0.0, 1.0);
        let fwd = energy(&w, &c).unwrap();
        let rev = energy(&c, &w).unwrap();
        assert!((fwd + kl_quadrature(0.0, 4.0, 0.0, 1.0)).abs() < 1e-9);
        assert!((rev + kl_quadrature(0.0, 1.0, 0.0, 4.0)).abs() < 1e-9);
        assert!((fwd + 0.806_853).abs() < 1e-6);
        assert!((rev + 0.318_147).abs() < 1e-6);
        assert_eq!(energy(&w, &w).unwrap(), 0.0);
        assert!((energy(&g1(2.0, 1.0), &g1(0.0, 1.0)).unwrap() + 2.0).abs() < 1e-15);
    }

    #[test]
    fn w2_examples() {
        let p = DiagGaussian::new(vec![3.0, 0.0], vec![0.0, 0.0]).unwrap();
        let q = DiagGaussian::new(vec![0.0, 4.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(wasserstein2_diag(&p, &q).unwrap(), 5.0);
        assert_eq!(wasserstein2_diag(&p, &p).unwrap(), 0.0);
        assert!((wasserstein2_diag(&g1(0.0, 4.0), &g1(0.0, 1.0)).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn reparam_examples() {
        let p = DiagGaussian::new(vec![0.5, -1.5], vec![0.7, -0.2]).unwrap();
        assert_eq!(sample_reparam(&p, &[0.0, 0.0]).unwrap(), vec![0.5, -1.5]);
        let s = DiagGaussian::standard(2);
        assert_eq!(sample_reparam(&s, &[1.0, -1.0]).unwrap(), vec![1.0, -1.0]);
        let z = sample_reparam(&g1(1.0, 4.0), &[0.5]).unwrap();
        assert!((z[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn reparam_grad_matches_central_differences() {
        let p = DiagGaussian::new(vec![0.3, -1.2, 2.0], vec![0.4, -1.1, 1.7]).unwrap();
        let noise = [0.9, -0.4, 1.3];
        let g = sample_reparam_grad(&p, &noise).unwrap();
        let h = 1e-5;
        for j in 0..3 {
            let mut lv = p.log_var().to_vec();
            lv[j] += h;
            let up = sample_reparam(&DiagGaussian::new(p.mean().to_vec(), lv.clone()).unwrap(), &noise).unwrap();
            lv[j] -= 2.0 * h;
            let dn = sample_reparam(&DiagGaussian::new(p.mean().to_vec(), lv).unwrap(), &noise).unwrap();
            let fd = (up[j] - dn[j]) / (2.0 * h);
            assert!(((fd - g.d_log_var[j]) / g.d_log_var[j]).abs() < 1e-6);
            assert_eq!(g.d_mean[j], 1.0);
        }
    }

    #[test]
    fn construction_errors_and_clamping() {
        assert!(DiagGaussian::new(vec![], vec![]).is_err());
        assert!(DiagGaussian::new(vec![0.0], vec![0.0, 1.0]).is_err());
        assert!(DiagGaussian::new(vec![f64::NAN], vec![0.0]).is_err());
        let g = DiagGaussian::new(vec![0.0, 0.0], vec![100.0, -100.0]).unwrap();
        assert_eq!(g.log_var(), &[LOG_VAR_MAX, LOG_VAR_MIN]);
        let a = DiagGaussian::standard(2);
        let b = DiagGaussian::standard(3);
        assert!(kl_diag(&a, &b).is_err());
        assert!(wasserstein2_diag(&a, &b).is_err());
        assert!(sample_reparam(&a, &[0.0]).is_err());
    }
}
