//! Stochastic Kuramoto–Sivashinsky equation
//! `du + (α u_xxxx + β u_xx + γ u u_x) dt = c dW` on a periodic interval.
//!
//! Space: continuous P2 elements with a C0 interior-penalty treatment of the
//! fourth-order term and cellwise-constant noise. Time: implicit midpoint, solved
//! by Newton's method with banded LU inner solves. The weak residual of one step is
//!
//! `M(u⁺ - u) + Δt (αA - βS) u½ + Δt N(u½) - c P ξ = 0`,  `u½ = (u + u⁺)/2`,
//!
//! where `N(u)_j = -(γ/2 u², φ_j')` and `P ξ` loads the effective increment
//! `ξ = ΔW + λΔt` of each cell.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{AdvectionForm, BandLu, CyclicBandMatrix, PeriodicP2Mesh, PointEvaluation};
use crate::model::{Model, StepAdjoint};
use crate::rng::NoiseStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SksParams {
    pub length: f64,
    pub n_cells: usize,
    /// Coefficient of the fourth-order (interior-penalty) term.
    pub alpha: f64,
    /// Coefficient of the anti-diffusive second-order term.
    pub beta: f64,
    pub gamma: f64,
    /// Noise amplitude.
    pub c: f64,
    /// Interior penalty parameter.
    pub eta: f64,
    pub dt: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
}

impl Default for SksParams {
    fn default() -> Self {
        Self {
            length: 4.0,
            n_cells: 100,
            alpha: 0.03,
            beta: 1.1,
            gamma: 1.0,
            c: 2.5,
            eta: 5.0,
            dt: 0.01,
            newton_tol: 1e-9,
            newton_max_iter: 30,
        }
    }
}

impl SksParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_cells < 4 {
            return Err(Error::invalid("n_cells must be at least 4"));
        }
        if !(self.eta > 0.0 && self.dt > 0.0 && self.length > 0.0 && self.newton_tol > 0.0) {
            return Err(Error::invalid("eta, dt, length and newton_tol must be positive"));
        }
        if self.newton_max_iter == 0 {
            return Err(Error::invalid("newton_max_iter must be at least 1"));
        }
        Ok(())
    }
}

/// Initial profile used before spin-up.
pub fn u_in(x: f64) -> f64 {
    let a = 403.0 / 15.0;
    let b = 203.0 / 15.0;
    0.4 / ((x - a).exp() + (a - x).exp()) + 1.0 / ((x - b).exp() + (b - x).exp())
}

#[derive(Clone, Debug)]
pub struct Sks {
    pub params: SksParams,
    mesh: PeriodicP2Mesh,
    mass: CyclicBandMatrix,
    /// `αA - βS`
    linear: CyclicBandMatrix,
    advection: AdvectionForm,
    obs: PointEvaluation,
}

impl Sks {
    /// Model observed at `obs_points` by point evaluation.
    pub fn new(params: SksParams, obs_points: Vec<f64>) -> Result<Self> {
        params.validate()?;
        let mesh = PeriodicP2Mesh::new(params.length, params.n_cells)?;
        let mass = mesh.assemble_mass();
        let mut linear = mesh.assemble_cip(params.eta).scaled(params.alpha);
        linear.axpy(-params.beta, &mesh.assemble_stiffness());
        let advection = AdvectionForm::new(mesh.clone(), params.gamma);
        let obs = PointEvaluation::new(&mesh, obs_points);
        Ok(Self {
            params,
            mesh,
            mass,
            linear,
            advection,
            obs,
        })
    }

    /// `n_obs` equispaced observation points `j·L/n_obs`.
    pub fn with_equispaced_obs(params: SksParams, n_obs: usize) -> Result<Self> {
        if n_obs == 0 {
            return Err(Error::invalid("need at least one observation point"));
        }
        let pts = (0..n_obs).map(|j| j as f64 * params.length / n_obs as f64).collect();
        Self::new(params, pts)
    }

    pub fn mesh(&self) -> &PeriodicP2Mesh {
        &self.mesh
    }

    pub fn mass(&self) -> &CyclicBandMatrix {
        &self.mass
    }

    fn midpoint(u_old: &[f64], u_new: &[f64]) -> Vec<f64> {
        u_old.iter().zip(u_new).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    /// Residual of the implicit midpoint step.
    pub fn residual(&self, u_new: &[f64], u_old: &[f64], xi: &[f64]) -> Result<Vec<f64>> {
        let dt = self.params.dt;
        let mid = Self::midpoint(u_old, u_new);
        let du: Vec<f64> = u_new.iter().zip(u_old).map(|(a, b)| a - b).collect();
        let mdu = self.mass.mul_vec(&du);
        let lin = self.linear.mul_vec(&mid);
        let nl = self.advection.residual(&mid);
        let load = self.mesh.noise_projection(xi)?;
        Ok((0..du.len())
            .map(|j| mdu[j] + dt * (lin[j] + nl[j]) - self.params.c * load[j])
            .collect())
    }

    /// `∂R/∂u_new = M + Δt/2 (K + N'(u½))`, or with `-M` for `∂R/∂u_old`.
    pub fn jacobian(&self, u_new: &[f64], u_old: &[f64], wrt_new: bool) -> CyclicBandMatrix {
        let dt = self.params.dt;
        let mid = Self::midpoint(u_old, u_new);
        let mut j = self.mass.scaled(if wrt_new { 1.0 } else { -1.0 });
        j.axpy(0.5 * dt, &self.linear);
        self.advection.add_jacobian(&mid, 0.5 * dt, &mut j);
        j
    }

    /// One implicit-midpoint step with effective increment `xi`.
    pub fn step_increment(&self, u: &[f64], xi: &[f64]) -> Result<Vec<f64>> {
        let mut u_new = u.to_vec();
        let mut norm = f64::INFINITY;
        for _ in 0..self.params.newton_max_iter {
            let r = self.residual(&u_new, u, xi)?;
            norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !norm.is_finite() {
                break;
            }
            if norm < self.params.newton_tol {
                return Ok(u_new);
            }
            let lu = BandLu::factor(&self.jacobian(&u_new, u, true))?;
            let delta = lu.solve(&r);
            for (x, d) in u_new.iter_mut().zip(delta) {
                *x -= d;
            }
        }
        let r = self.residual(&u_new, u, xi)?;
        let last = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if last < self.params.newton_tol {
            return Ok(u_new);
        }
        Err(Error::NewtonDivergence {
            residual: if last.is_finite() { last } else { norm },
            iterations: self.params.newton_max_iter,
        })
    }
}

/// One step driven by `ΔW + λΔt` (cellwise).
pub fn sks_step(model: &Sks, u: &[f64], dw: &[f64], lambda: &[f64]) -> Result<Vec<f64>> {
    let dt = model.params.dt;
    let xi: Vec<f64> = dw.iter().zip(lambda).map(|(w, l)| w + l * dt).collect();
    model.step_increment(u, &xi)
}

/// Interpolate [`u_in`] and run `steps` stochastic steps.
pub fn spin_up_initial(model: &Sks, steps: usize, stream: &mut NoiseStream) -> Result<Vec<f64>> {
    let mut u = model.mesh.interpolate(u_in);
    let sd = model.params.dt.sqrt();
    for n in 0..steps {
        let dw = stream.normal_vec(model.params.n_cells, sd);
        u = model.step_increment(&u, &dw).map_err(|e| Error::Propagation {
            substep: n,
            source: Box::new(e),
        })?;
    }
    Ok(u)
}

impl Model for Sks {
    fn name(&self) -> &str {
        "sks"
    }

    fn state_dim(&self) -> usize {
        self.mesh.n_dofs()
    }

    fn noise_dim(&self) -> usize {
        self.mesh.n_cells
    }

    fn dt(&self) -> f64 {
        self.params.dt
    }

    fn step(&self, x: &[f64], increment: &[f64]) -> Result<Vec<f64>> {
        self.step_increment(x, increment)
    }

    fn step_adjoint(&self, x_prev: &[f64], x_next: &[f64], _increment: &[f64], adj_next: &[f64]) -> Result<StepAdjoint> {
        let lu = BandLu::factor(&self.jacobian(x_next, x_prev, true))?;
        let mu = lu.solve_transpose(adj_next);
        let j_old = self.jacobian(x_next, x_prev, false);
        let state = j_old.mul_vec_transpose(&mu).into_iter().map(|v| -v).collect();
        let increment = self
            .mesh
            .noise_projection_transpose(&mu)
            .into_iter()
            .map(|v| self.params.c * v)
            .collect();
        Ok(StepAdjoint { state, increment })
    }

    fn observe(&self, x: &[f64]) -> Vec<f64> {
        self.obs.apply(x)
    }

    fn observe_transpose(&self, _x: &[f64], r: &[f64]) -> Vec<f64> {
        self.obs.apply_transpose(r, self.mesh.n_dofs())
    }

    fn dof_coordinates(&self) -> Vec<f64> {
        self.mesh.dof_coordinates()
    }

    fn obs_coordinates(&self) -> Vec<f64> {
        self.obs.points().to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, StreamKey};
    use std::f64::consts::PI;

    fn small(cells: usize) -> SksParams {
        SksParams {
            n_cells: cells,
            ..SksParams::default()
        }
    }

    #[test]
    fn zero_state_stays_zero_without_noise_or_advection() {
        let m = Sks::with_equispaced_obs(SksParams { c: 0.0, gamma: 0.0, ..small(8) }, 4).unwrap();
        let u = sks_step(&m, &vec![0.0; 16], &vec![0.0; 8], &vec![0.0; 8]).unwrap();
        assert!(u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mean_is_conserved_without_noise() {
        let m = Sks::with_equispaced_obs(SksParams { c: 0.0, ..small(16) }, 4).unwrap();
        let mut u = m.mesh().interpolate(|x| 0.5 + (PI * x / 2.0).sin() + 0.3 * (PI * x).cos());
        let mean = |u: &[f64]| -> f64 { m.mass().mul_vec(u).iter().sum() };
        let m0 = mean(&u);
        for _ in 0..50 {
            u = sks_step(&m, &u, &vec![0.0; 16], &vec![0.0; 16]).unwrap();
        }
        assert!((mean(&u) - m0).abs() < 1e-8, "drift {}", mean(&u) - m0);
    }

    #[test]
    fn linear_step_matches_direct_solve() {
        let p = SksParams { c: 0.0, gamma: 0.0, ..small(8) };
        let m = Sks::with_equispaced_obs(p.clone(), 4).unwrap();
        let u0 = m.mesh().interpolate(|x| (PI * x / 2.0).sin());
        let u1 = sks_step(&m, &u0, &[0.0; 8], &[0.0; 8]).unwrap();
        // (M + Δt/2 K) u1 = (M - Δt/2 K) u0, solved densely by Gaussian elimination
        let mesh = m.mesh();
        let mut k = mesh.assemble_cip(p.eta).scaled(p.alpha);
        k.axpy(-p.beta, &mesh.assemble_stiffness());
        let mut lhs = mesh.assemble_mass();
        lhs.axpy(0.5 * p.dt, &k);
        let mut rhs_m = mesh.assemble_mass();
        rhs_m.axpy(-0.5 * p.dt, &k);
        let b = rhs_m.mul_vec(&u0);
        let mut a = lhs.to_dense();
        let n = a.len();
        let mut x = b.clone();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
            a.swap(col, piv);
            x.swap(col, piv);
            for r in col + 1..n {
                let f = a[r][col] / a[col][col];
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                x[r] -= f * x[col];
            }
        }
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
            x[r] = (x[r] - s) / a[r][r];
        }
        for (p, q) in u1.iter().zip(&x) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let m = Sks::with_equispaced_obs(small(8), 4).unwrap();
        let u_old = m.mesh().interpolate(|x| 1.0 + (PI * x / 2.0).sin());
        let u_new: Vec<f64> = u_old.iter().enumerate().map(|(i, v)| v + 0.05 * (i as f64).cos()).collect();
        let xi: Vec<f64> = (0..8).map(|i| 0.1 * (i as f64).sin()).collect();
        let jac = m.jacobian(&u_new, &u_old, true).to_dense();
        let eps = 1e-6;
        for k in 0..16 {
            let mut up = u_new.clone();
            up[k] += eps;
            let mut um = u_new.clone();
            um[k] -= eps;
            let rp = m.residual(&up, &u_old, &xi).unwrap();
            let rm = m.residual(&um, &u_old, &xi).unwrap();
            let col_norm: f64 = (0..16).map(|j| jac[j][k].abs()).fold(0.0, f64::max);
            for j in 0..16 {
                let fd = (rp[j] - rm[j]) / (2.0 * eps);
                assert!((fd - jac[j][k]).abs() <= 1e-6 * col_norm, "({j},{k}): {fd} vs {}", jac[j][k]);
            }
        }
    }

    #[test]
    fn low_modes_grow_without_noise() {
        let m = Sks::with_equispaced_obs(SksParams { c: 0.0, ..small(32) }, 4).unwrap();
        let mut u = m.mesh().interpolate(|x| 1e-3 * (PI * x / 2.0).sin());
        let energy = |u: &[f64]| -> f64 { m.mass().mul_vec(u).iter().zip(u).map(|(a, b)| a * b).sum() };
        let e0 = energy(&u);
        for _ in 0..20 {
            u = sks_step(&m, &u, &[0.0; 32], &[0.0; 32]).unwrap();
        }
        assert!(energy(&u) > e0);
    }

    #[test]
    fn initial_profile() {
        let peak = u_in(403.0 / 15.0);
        let b = 203.0 / 15.0;
        let x: f64 = 403.0 / 15.0;
        let second = 1.0 / ((x - b).exp() + (b - x).exp());
        assert!((peak - (0.2 + second)).abs() < 1e-15);
        for i in 0..=400 {
            assert!(u_in(i as f64 * 0.01) >= 0.0);
        }
    }

    #[test]
    fn deterministic_spin_up_is_reproducible() {
        let m = Sks::with_equispaced_obs(SksParams { c: 0.0, ..small(16) }, 4).unwrap();
        let key = StreamKey::new(1, Purpose::Initial);
        let a = spin_up_initial(&m, 20, &mut key.derive()).unwrap();
        let b = spin_up_initial(&m, 20, &mut key.derive()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn control_and_noise_are_interchangeable() {
        let m = Sks::with_equispaced_obs(small(8), 4).unwrap();
        let u = m.mesh().interpolate(|x| (PI * x / 2.0).cos());
        let dw: Vec<f64> = (0..8).map(|i| 0.05 * i as f64).collect();
        let lam: Vec<f64> = (0..8).map(|i| 2.0 - 0.3 * i as f64).collect();
        let a = sks_step(&m, &u, &dw, &lam).unwrap();
        let shifted: Vec<f64> = dw.iter().zip(&lam).map(|(w, l)| w + l * m.params.dt).collect();
        let b = sks_step(&m, &u, &shifted, &[0.0; 8]).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-14);
        }
    }
}
