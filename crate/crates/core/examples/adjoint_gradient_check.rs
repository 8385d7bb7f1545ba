//! Adjoint gradient of the Girsanov-adjusted objective against central finite
//! differences, per control row, on a small stochastic KS mesh.

use nudging::likelihood::Observation;
use nudging::model::{grad_phi_hat, phi_hat_of_window, propagate, ControlWindow, Model, ModelState, NoiseWindow};
use nudging::rng::{Purpose, StreamKey};
use nudging::sks::{spin_up_initial, Sks, SksParams};

fn main() -> nudging::Result<()> {
    let params = SksParams {
        n_cells: 16,
        newton_tol: 1e-13,
        ..SksParams::default()
    };
    let model = Sks::with_equispaced_obs(params, 8)?;
    let mut s = StreamKey::new(1, Purpose::Initial).derive();
    let x0 = ModelState::new(spin_up_initial(&model, 100, &mut s)?);

    let (steps, m, dt) = (5, model.noise_dim(), model.dt());
    let mut w = NoiseWindow::zeros(steps, m, dt);
    let mut c = ControlWindow::zeros(steps, m);
    for v in w.as_mut_slice() {
        *v = dt.sqrt() * s.standard_normal();
    }
    for v in c.as_mut_slice() {
        *v = 0.5 * s.standard_normal();
    }
    let end = propagate(&model, &x0, &w, &c)?;
    let y: Vec<f64> = model.observe(&end.dof).iter().map(|h| h + s.standard_normal()).collect();
    let y = Observation::new(y, 0, 2.5)?;

    println!("{:>4} {:>14} {:>14} {:>10}", "row", "adjoint", "fd", "rel err");
    for n in 0..steps {
        let dir: Vec<f64> = (0..m).map(|_| s.standard_normal()).collect();
        let g = grad_phi_hat(&model, &x0, &w, &c, &y, n)?;
        let adj: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        let eps = 1e-5;
        let shifted = |sign: f64| {
            let mut c2 = c.clone();
            for (v, d) in c2.row_mut(n).iter_mut().zip(&dir) {
                *v += sign * eps * d;
            }
            phi_hat_of_window(&model, &x0, &w, &c2, &y)
        };
        let fd = (shifted(1.0)? - shifted(-1.0)?) / (2.0 * eps);
        println!("{n:>4} {adj:>14.6} {fd:>14.6} {:>10.2e}", ((adj - fd) / fd).abs());
    }
    Ok(())
}
