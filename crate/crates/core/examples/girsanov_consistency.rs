//! Paths pushed by a constant control, reweighted by the Girsanov penalty,
//! reproduce the moments of the unperturbed process.

use nudging::likelihood::girsanov_penalty;
use nudging::linear_sde::{LinearSde, LinearSdeParams};
use nudging::model::{propagate, ControlWindow, ModelState, NoiseWindow};
use nudging::rng::{Purpose, StreamKey};

fn main() -> nudging::Result<()> {
    let p = LinearSdeParams::default();
    let model = LinearSde::new(p)?;
    let x0 = ModelState::new(vec![1.0]);
    let n = 20_000;

    // exact moments of the discrete chain after one window
    let c = p.contraction();
    let step_var = p.dt * (p.d / (1.0 + 0.5 * p.a * p.dt)).powi(2);
    let mean = c.powi(p.n_steps as i32);
    let var: f64 = (0..p.n_steps).map(|k| step_var * c.powi(2 * k as i32)).sum();
    println!("exact: E[x] {mean:.4}, E[x^2] {:.4}", var + mean * mean);

    for lambda in [0.0, 0.5, 1.0, 2.0] {
        let mut control = ControlWindow::zeros(p.n_steps, 1);
        control.as_mut_slice().fill(lambda);
        let (mut sw, mut sx, mut sxx, mut raw) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let mut s = StreamKey::new(9, Purpose::ModelNoise).particle(i).derive();
            let mut w = NoiseWindow::zeros(p.n_steps, 1, p.dt);
            for v in w.as_mut_slice() {
                *v = p.dt.sqrt() * s.standard_normal();
            }
            let x = propagate(&model, &x0, &w, &control)?.dof[0];
            let weight = (-girsanov_penalty(&control, &w)?).exp();
            sw += weight;
            sx += weight * x;
            sxx += weight * x * x;
            raw += x;
        }
        println!(
            "lambda {lambda:.1}: weighted E[x] {:.4}, E[x^2] {:.4}; unweighted E[x] {:.4}; mean weight {:.3}",
            sx / sw,
            sxx / sw,
            raw / n as f64,
            sw / n as f64
        );
    }
    Ok(())
}
