use gpvae::gaussian::{kl_diag, sample_reparam, sample_reparam_grad, wasserstein2_diag, DiagGaussian};
use proptest::prelude::*;

fn gaussian(d: usize) -> impl Strategy<Value = DiagGaussian> {
    (
        prop::collection::vec(-3.0f64..3.0, d),
        prop::collection::vec(-2.0f64..2.0, d),
    )
        .prop_map(|(m, lv)| DiagGaussian::new(m, lv).unwrap())
}

fn pair() -> impl Strategy<Value = (DiagGaussian, DiagGaussian)> {
    (1usize..=8).prop_flat_map(|d| (gaussian(d), gaussian(d)))
}

fn triple() -> impl Strategy<Value = (DiagGaussian, DiagGaussian, DiagGaussian)> {
    (1usize..=8).prop_flat_map(|d| (gaussian(d), gaussian(d), gaussian(d)))
}

proptest! {
    #[test]
    fn kl_is_nonnegative_and_zero_on_self((p, q) in pair()) {
        prop_assert!(kl_diag(&p, &q).unwrap() >= 0.0);
        prop_assert_eq!(kl_diag(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn kl_adds_over_dimensions((p, q) in pair()) {
        let total = kl_diag(&p, &q).unwrap();
        let parts: f64 = (0..p.dim()).map(|i| kl_diag(&p.marginal(i), &q.marginal(i)).unwrap()).sum();
        prop_assert!((total - parts).abs() <= 1e-12 * total.max(1.0));
    }

    #[test]
    fn w2_is_a_metric((p, q, r) in triple()) {
        let pq = wasserstein2_diag(&p, &q).unwrap();
        let qp = wasserstein2_diag(&q, &p).unwrap();
        prop_assert_eq!(pq, qp);
        prop_assert_eq!(wasserstein2_diag(&p, &p).unwrap(), 0.0);
        if p != q {
            prop_assert!(pq > 0.0);
        }
        let pr = wasserstein2_diag(&p, &r).unwrap();
        let rq = wasserstein2_diag(&r, &q).unwrap();
        prop_assert!(pq <= pr + rq + 1e-12);
    }

    #[test]
    fn reparam_gradient_matches_central_differences(
        p in (1usize..=8).prop_flat_map(gaussian),
        seed in any::<u64>(),
    ) {
        let d = p.dim();
        let noise: Vec<f64> = (0..d).map(|i| ((seed >> (i % 60)) & 0xff) as f64 / 64.0 - 2.0).collect();
        let g = sample_reparam_grad(&p, &noise).unwrap();
        let h = 1e-5;
        for i in 0..d {
            let shifted = |dm: f64, dl: f64| {
                let mut m = p.mean().to_vec();
                let mut lv = p.log_var().to_vec();
                m[i] += dm;
                lv[i] += dl;
                sample_reparam(&DiagGaussian::new(m, lv).unwrap(), &noise).unwrap()[i]
            };
            let dm = (shifted(h, 0.0) - shifted(-h, 0.0)) / (2.0 * h);
            let dl = (shifted(0.0, h) - shifted(0.0, -h)) / (2.0 * h);
            let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
            prop_assert!(rel(g.d_mean[i], dm) < 1e-6, "mean {} vs {}", g.d_mean[i], dm);
            prop_assert!(rel(g.d_log_var[i], dl) < 1e-6, "log_var {} vs {}", g.d_log_var[i], dl);
        }
    }
}

#[test]
fn mismatched_dimensions_are_errors() {
    let p = DiagGaussian::standard(2);
    let q = DiagGaussian::standard(3);
    assert!(kl_diag(&p, &q).is_err());
    assert!(wasserstein2_diag(&p, &q).is_err());
    assert!(sample_reparam(&p, &[0.0]).is_err());
}
