//! KL divergence, 2-Wasserstein distance and the ranking energy between a few
//! diagonal Gaussians.

use gpvae::gaussian::{energy, kl_diag, sample_reparam, wasserstein2_diag, DiagGaussian};
use gpvae::loss::ranking_margin;

fn main() -> gpvae::Result<()> {
    let w = DiagGaussian::new(vec![0.5, -0.2], vec![-1.0, -0.5])?;
    let near = DiagGaussian::new(vec![0.4, 0.0], vec![-0.8, -0.6])?;
    let far = DiagGaussian::new(vec![-2.0, 1.5], vec![0.3, 0.1])?;
    let std = DiagGaussian::standard(2);

    for (name, c) in [("near", &near), ("far", &far), ("N(0,I)", &std)] {
        println!(
            "{name:>7}: KL(w||c) = {:.4}  W2 = {:.4}  energy = {:.4}",
            kl_diag(&w, c)?,
            wasserstein2_diag(&w, c)?,
            energy(&w, c)?
        );
    }
    println!("ranking margin (m = 1): {:.4}", ranking_margin(&w, &near, &far, 1.0)?);
    println!("ranking margin, swapped: {:.4}", ranking_margin(&w, &far, &near, 1.0)?);
    println!("reparameterized sample at eps = (1, -1): {:?}", sample_reparam(&w, &[1.0, -1.0])?);
    Ok(())
}
