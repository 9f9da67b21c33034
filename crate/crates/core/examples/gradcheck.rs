//! Finite-difference check of every objective term.
//!
//! `cargo run --release --example gradcheck -- [points] [seed]`

use gpvae::gradsuite::{run_suite, MIN_KINK_MARGIN};

fn main() -> gpvae::Result<()> {
    let mut args = std::env::args().skip(1);
    let points = args.next().map_or(20, |a| a.parse().expect("points"));
    let seed = args.next().map_or(0, |a| a.parse().expect("seed"));
    println!("points closer than {MIN_KINK_MARGIN:e} to a kink are redrawn");
    for c in run_suite(points, seed)? {
        println!("{:<24} {:>3} ok {:>3} redrawn   max rel err {:.2e}", c.term, c.points, c.rejected, c.max_rel_error);
    }
    Ok(())
}
