//! Stage-2 target selection: how the penalty coefficient trades effective
//! sample size against the total objective.

use nudging::filters::{stage2_solve, PhiBounds};
use nudging::rng::{Purpose, StreamKey};
use nudging::weights::ess_from_phi;

fn main() -> nudging::Result<()> {
    let mut s = StreamKey::new(2, Purpose::Initial).derive();
    let n = 40;
    let lo: Vec<f64> = (0..n).map(|_| 3.0 * s.uniform()).collect();
    let hi: Vec<f64> = lo.iter().map(|l| l + 4.0 * s.uniform()).collect();
    let bounds = PhiBounds::new(lo.clone(), hi.clone())?;
    println!("ESS at phi_min {:.2}, at phi_max {:.2}", ess_from_phi(&lo), ess_from_phi(&hi));
    println!("{:>8} {:>8} {:>10} {:>10}", "sigma", "ESS", "sum phi", "converged");
    for sigma in [0.001, 0.01, 0.1, 0.5, 1.0, 5.0, 50.0] {
        let sol = stage2_solve(&bounds, sigma, 1e-8, 500)?;
        println!(
            "{sigma:>8} {:>8.2} {:>10.3} {:>10}",
            ess_from_phi(&sol.phi),
            sol.phi.iter().sum::<f64>(),
            sol.converged
        );
    }
    Ok(())
}
