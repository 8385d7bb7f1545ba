//! Continuous piecewise-quadratic finite elements on a uniform periodic mesh.
//!
//! Global numbering interleaves vertices and midpoints: vertex `i` is dof `2i`,
//! the midpoint of cell `e` is dof `2e+1`, and cell `e` touches dofs
//! `2e, 2e+1, 2e+2 (mod 2N)`.

mod banded;

pub use banded::{BandLu, CyclicBandMatrix};

use crate::error::{Error, Result};

/// Bandwidth of every assembled operator (the interior-penalty terms couple the
/// five dofs around a vertex).
pub const BANDWIDTH: usize = 4;

/// 4-point Gauss–Legendre rule on `[0, 1]`.
pub(crate) const GAUSS4: [(f64, f64); 4] = [
    (0.069_431_844_202_973_71, 0.173_927_422_568_726_93),
    (0.330_009_478_207_571_87, 0.326_072_577_431_273_07),
    (0.669_990_521_792_428_1, 0.326_072_577_431_273_07),
    (0.930_568_155_797_026_3, 0.173_927_422_568_726_93),
];

/// Reference P2 basis on `[0, 1]` with nodes `0, ½, 1`.
pub fn basis(xi: f64) -> [f64; 3] {
    [
        2.0 * xi * xi - 3.0 * xi + 1.0,
        4.0 * xi * (1.0 - xi),
        xi * (2.0 * xi - 1.0),
    ]
}

/// First derivatives of [`basis`] with respect to the reference coordinate.
pub fn basis_deriv(xi: f64) -> [f64; 3] {
    [4.0 * xi - 3.0, 4.0 - 8.0 * xi, 4.0 * xi - 1.0]
}

/// Second derivatives of [`basis`] (constant on the cell).
pub const BASIS_DERIV2: [f64; 3] = [4.0, -8.0, 4.0];

#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicP2Mesh {
    pub length: f64,
    pub n_cells: usize,
}

impl PeriodicP2Mesh {
    pub fn new(length: f64, n_cells: usize) -> Result<Self> {
        if n_cells < 4 {
            return Err(Error::invalid(format!("need at least 4 cells, got {n_cells}")));
        }
        if !(length > 0.0) {
            return Err(Error::invalid("domain length must be positive"));
        }
        Ok(Self { length, n_cells })
    }

    pub fn h(&self) -> f64 {
        self.length / self.n_cells as f64
    }

    pub fn n_dofs(&self) -> usize {
        2 * self.n_cells
    }

    pub fn cell_dofs(&self, e: usize) -> [usize; 3] {
        [2 * e, 2 * e + 1, (2 * e + 2) % self.n_dofs()]
    }

    pub fn vertices(&self) -> Vec<f64> {
        (0..self.n_cells).map(|i| i as f64 * self.h()).collect()
    }

    pub fn dof_coordinates(&self) -> Vec<f64> {
        (0..self.n_dofs()).map(|k| 0.5 * k as f64 * self.h()).collect()
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.dof_coordinates().into_iter().map(f).collect()
    }

    /// Cell index and reference coordinate of a point, wrapped into `[0, L)`.
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let s = x.rem_euclid(self.length) / self.h();
        let e = (s.floor() as usize).min(self.n_cells - 1);
        (e, s - e as f64)
    }

    pub fn evaluate(&self, u: &[f64], x: f64) -> f64 {
        let (e, xi) = self.locate(x);
        let phi = basis(xi);
        self.cell_dofs(e).iter().zip(phi).map(|(&k, p)| u[k] * p).sum()
    }

    fn assemble_cellwise(&self, local: &[[f64; 3]; 3]) -> CyclicBandMatrix {
        let mut m = CyclicBandMatrix::zeros(self.n_dofs(), BANDWIDTH);
        for e in 0..self.n_cells {
            let dofs = self.cell_dofs(e);
            for a in 0..3 {
                for b in 0..3 {
                    m.add(dofs[a], dofs[b], local[a][b]);
                }
            }
        }
        m
    }

    /// `(u, v)`
    pub fn assemble_mass(&self) -> CyclicBandMatrix {
        let h = self.h();
        let mut local = [[0.0; 3]; 3];
        for (xi, w) in GAUSS4 {
            let phi = basis(xi);
            for a in 0..3 {
                for b in 0..3 {
                    local[a][b] += w * h * phi[a] * phi[b];
                }
            }
        }
        self.assemble_cellwise(&local)
    }

    /// `(u_x, v_x)`
    pub fn assemble_stiffness(&self) -> CyclicBandMatrix {
        let h = self.h();
        let mut local = [[0.0; 3]; 3];
        for (xi, w) in GAUSS4 {
            let d = basis_deriv(xi);
            for a in 0..3 {
                for b in 0..3 {
                    local[a][b] += w * d[a] * d[b] / h;
                }
            }
        }
        self.assemble_cellwise(&local)
    }

    /// C0 interior-penalty form
    /// `a(u,v) = Σ_K (u_xx, v_xx)_K + Σ_z ({u_xx}[v_x] + {v_xx}[u_x] + (η/h)[u_x][v_x])`
    /// with `[w] = w(z⁺) - w(z⁻)` and `{w}` the two-sided average, summed over
    /// every vertex of the periodic mesh.
    pub fn assemble_cip(&self, eta: f64) -> CyclicBandMatrix {
        let h = self.h();
        let mut local = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                local[a][b] = BASIS_DERIV2[a] * BASIS_DERIV2[b] / (h * h * h);
            }
        }
        let mut m = self.assemble_cellwise(&local);

        let left_slope = basis_deriv(1.0);
        let right_slope = basis_deriv(0.0);
        let n = self.n_dofs();
        for i in 0..self.n_cells {
            // dofs 2i-2, 2i-1 (left cell), 2i (vertex), 2i+1, 2i+2 (right cell)
            let dofs: [usize; 5] = std::array::from_fn(|k| (2 * i + n + k - 2) % n);
            let mut jump = [0.0; 5];
            let mut avg = [0.0; 5];
            for a in 0..3 {
                jump[a] -= left_slope[a] / h;
                jump[a + 2] += right_slope[a] / h;
                avg[a] += 0.5 * BASIS_DERIV2[a] / (h * h);
                avg[a + 2] += 0.5 * BASIS_DERIV2[a] / (h * h);
            }
            for p in 0..5 {
                for q in 0..5 {
                    let v = avg[q] * jump[p] + jump[q] * avg[p] + eta / h * jump[p] * jump[q];
                    m.add(dofs[p], dofs[q], v);
                }
            }
        }
        m
    }

    /// `∫_{cell} φ_j dx / h^{1/2}` per local basis function.
    fn projection_weights(&self) -> [f64; 3] {
        let s = self.h().sqrt();
        [s / 6.0, 2.0 * s / 3.0, s / 6.0]
    }

    /// Load vector of `dW_h[v] = h^{-1/2} Σ_i (∫_{cell i} v dx) dW_i`.
    pub fn noise_projection(&self, dw: &[f64]) -> Result<Vec<f64>> {
        if dw.len() != self.n_cells {
            return Err(Error::invalid(format!(
                "noise vector has length {}, mesh has {} cells",
                dw.len(),
                self.n_cells
            )));
        }
        let wts = self.projection_weights();
        let mut out = vec![0.0; self.n_dofs()];
        for (e, &d) in dw.iter().enumerate() {
            for (k, w) in self.cell_dofs(e).into_iter().zip(wts) {
                out[k] += w * d;
            }
        }
        Ok(out)
    }

    /// Transpose of [`Self::noise_projection`]: dof-space vector to cell values.
    pub fn noise_projection_transpose(&self, r: &[f64]) -> Vec<f64> {
        let wts = self.projection_weights();
        (0..self.n_cells)
            .map(|e| self.cell_dofs(e).iter().zip(wts).map(|(&k, w)| w * r[k]).sum())
            .collect()
    }
}

/// `T[j][a][b] = ∫_0^1 φ_a φ_b φ_j' dξ`, exact under 4-point Gauss.
fn advection_tensor() -> [[[f64; 3]; 3]; 3] {
    let mut t = [[[0.0; 3]; 3]; 3];
    for (xi, w) in GAUSS4 {
        let phi = basis(xi);
        let d = basis_deriv(xi);
        for j in 0..3 {
            for a in 0..3 {
                for b in 0..3 {
                    t[j][a][b] += w * phi[a] * phi[b] * d[j];
                }
            }
        }
    }
    t
}

/// The Burgers-type term `-(γ/2 u², v_x)` and its Jacobian.
#[derive(Clone, Debug)]
pub struct AdvectionForm {
    mesh: PeriodicP2Mesh,
    gamma: f64,
    tensor: [[[f64; 3]; 3]; 3],
}

impl AdvectionForm {
    pub fn new(mesh: PeriodicP2Mesh, gamma: f64) -> Self {
        Self {
            mesh,
            gamma,
            tensor: advection_tensor(),
        }
    }

    pub fn residual(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.mesh.n_dofs()];
        for e in 0..self.mesh.n_cells {
            let dofs = self.mesh.cell_dofs(e);
            let ul = dofs.map(|k| u[k]);
            for j in 0..3 {
                let mut s = 0.0;
                for a in 0..3 {
                    for b in 0..3 {
                        s += self.tensor[j][a][b] * ul[a] * ul[b];
                    }
                }
                out[dofs[j]] -= 0.5 * self.gamma * s;
            }
        }
        out
    }

    /// Adds `s · ∂N/∂u` into `m`.
    pub fn add_jacobian(&self, u: &[f64], s: f64, m: &mut CyclicBandMatrix) {
        for e in 0..self.mesh.n_cells {
            let dofs = self.mesh.cell_dofs(e);
            let ul = dofs.map(|k| u[k]);
            for j in 0..3 {
                for k in 0..3 {
                    let mut v = 0.0;
                    for b in 0..3 {
                        v += self.tensor[j][k][b] * ul[b];
                    }
                    m.add(dofs[j], dofs[k], -s * self.gamma * v);
                }
            }
        }
    }
}

/// `nonlinear_form(u)_j = -∫ (γ/2) u_h² φ_j' dx`.
pub fn nonlinear_form(u: &[f64], mesh: &PeriodicP2Mesh, gamma: f64) -> Vec<f64> {
    AdvectionForm::new(mesh.clone(), gamma).residual(u)
}

/// Point evaluation of a P2 function at fixed locations.
#[derive(Clone, Debug)]
pub struct PointEvaluation {
    points: Vec<f64>,
    stencils: Vec<[(usize, f64); 3]>,
}

impl PointEvaluation {
    pub fn new(mesh: &PeriodicP2Mesh, points: Vec<f64>) -> Self {
        let stencils = points
            .iter()
            .map(|&x| {
                let (e, xi) = mesh.locate(x);
                let dofs = mesh.cell_dofs(e);
                let phi = basis(xi);
                std::array::from_fn(|a| (dofs[a], phi[a]))
            })
            .collect();
        Self { points, stencils }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        self.stencils
            .iter()
            .map(|st| st.iter().map(|&(k, w)| w * u[k]).sum())
            .collect()
    }

    pub fn apply_transpose(&self, r: &[f64], n_dofs: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_dofs];
        for (st, &ri) in self.stencils.iter().zip(r) {
            for &(k, w) in st {
                out[k] += w * ri;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sym_err(m: &CyclicBandMatrix) -> f64 {
        let d = m.to_dense();
        let n = d.len();
        let mut e: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                e = e.max((d[i][j] - d[j][i]).abs());
            }
        }
        e
    }

    /// Smallest eigenvalue of a symmetric matrix by cyclic Jacobi rotations.
    fn min_eigenvalue(mut a: Vec<Vec<f64>>) -> f64 {
        let n = a.len();
        for _ in 0..100 {
            let mut off = 0.0;
            for p in 0..n {
                for q in p + 1..n {
                    off += a[p][q] * a[p][q];
                }
            }
            if off < 1e-24 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[k][p];
                        let akq = a[k][q];
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[p][k];
                        let aqk = a[q][k];
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        (0..n).map(|i| a[i][i]).fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn mass_properties() {
        let mesh = PeriodicP2Mesh::new(4.0, 8).unwrap();
        let m = mesh.assemble_mass();
        let ones = vec![1.0; mesh.n_dofs()];
        let total: f64 = m.mul_vec(&ones).iter().sum();
        assert!((total - 4.0).abs() < 1e-13);
        assert_eq!(sym_err(&m), 0.0);
        assert!(min_eigenvalue(m.to_dense()) > 0.0);
    }

    #[test]
    fn local_mass_matches_closed_form() {
        let mesh = PeriodicP2Mesh::new(1.0, 4).unwrap();
        let m = mesh.assemble_mass();
        let h = 0.25;
        // midpoint diagonal: 16h/30; vertex diagonal collects two cells: 2·4h/30
        assert!((m.get(1, 1) - 16.0 * h / 30.0).abs() < 1e-15);
        assert!((m.get(0, 0) - 8.0 * h / 30.0).abs() < 1e-15);
        assert!((m.get(0, 2) + h / 30.0).abs() < 1e-15);
    }

    #[test]
    fn cip_kills_constants_and_is_symmetric() {
        for cells in [4, 8, 16] {
            let mesh = PeriodicP2Mesh::new(4.0, cells).unwrap();
            let a = mesh.assemble_cip(5.0);
            let r = a.mul_vec(&vec![1.0; mesh.n_dofs()]);
            assert!(r.iter().all(|v| v.abs() < 1e-9), "cells = {cells}: {r:?}");
            assert!(sym_err(&a) < 1e-12);
        }
    }

    #[test]
    fn cip_is_coercive_on_mean_zero_functions() {
        let mesh = PeriodicP2Mesh::new(4.0, 8).unwrap();
        let a = mesh.assemble_cip(5.0).to_dense();
        // Shift the constant mode (the kernel) far up; the remaining spectrum is
        // the restriction to mean-zero functions in the Euclidean sense.
        let n = a.len();
        let shifted: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| a[i][j] + 1e3 / n as f64).collect())
            .collect();
        let lam = min_eigenvalue(shifted);
        assert!(lam >= -1e-9, "min eigenvalue {lam}");
    }

    #[test]
    fn cip_reproduces_fourth_derivative_energy() {
        // For a smooth periodic u, a(I_h u, I_h u) → ∫ u_xx² as h → 0.
        let l = 4.0;
        let k = 2.0 * PI / l;
        let exact = k.powi(4) * l / 2.0;
        let mesh = PeriodicP2Mesh::new(l, 64).unwrap();
        let u = mesh.interpolate(|x| (k * x).sin());
        let au = mesh.assemble_cip(5.0).mul_vec(&u);
        let energy: f64 = u.iter().zip(&au).map(|(a, b)| a * b).sum();
        assert!((energy - exact).abs() / exact < 1e-2, "{energy} vs {exact}");
    }

    #[test]
    fn stiffness_kills_constants() {
        let mesh = PeriodicP2Mesh::new(4.0, 8).unwrap();
        let s = mesh.assemble_stiffness();
        assert!(s.mul_vec(&vec![1.0; 16]).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn nonlinear_trivial_cases() {
        let mesh = PeriodicP2Mesh::new(4.0, 8).unwrap();
        assert!(nonlinear_form(&vec![0.0; 16], &mesh, 1.0).iter().all(|&v| v == 0.0));
        assert!(nonlinear_form(&vec![1.7; 16], &mesh, 1.0).iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn nonlinear_matches_dense_quadrature() {
        let l = 4.0;
        let mesh = PeriodicP2Mesh::new(l, 16).unwrap();
        let u = mesh.interpolate(|x| (2.0 * PI * x / l).sin());
        let got = nonlinear_form(&u, &mesh, 1.0);
        // independent oracle: composite Simpson with 2000 panels per cell
        let h = mesh.h();
        let mut oracle = vec![0.0; mesh.n_dofs()];
        let panels = 2000;
        for e in 0..mesh.n_cells {
            let dofs = mesh.cell_dofs(e);
            for j in 0..3 {
                let f = |xi: f64| {
                    let phi = basis(xi);
                    let uh: f64 = (0..3).map(|a| u[dofs[a]] * phi[a]).sum();
                    -0.5 * uh * uh * basis_deriv(xi)[j] / h
                };
                let step = 1.0 / panels as f64;
                let mut s = f(0.0) + f(1.0);
                for p in 1..panels {
                    let w = if p % 2 == 1 { 4.0 } else { 2.0 };
                    s += w * f(p as f64 * step);
                }
                oracle[dofs[j]] += s * step / 3.0 * h;
            }
        }
        for (g, o) in got.iter().zip(&oracle) {
            assert!((g - o).abs() < 1e-12, "{g} vs {o}");
        }
    }

    #[test]
    fn noise_projection_basics() {
        let mesh = PeriodicP2Mesh::new(4.0, 8).unwrap();
        let dw: Vec<f64> = (0..8).map(|i| 0.1 * i as f64 - 0.3).collect();
        let load = mesh.noise_projection(&dw).unwrap();
        let total: f64 = load.iter().sum();
        let expect = mesh.h().sqrt() * dw.iter().sum::<f64>();
        assert!((total - expect).abs() < 1e-14);
        assert!(mesh.noise_projection(&[0.0; 8]).unwrap().iter().all(|&v| v == 0.0));
        assert!(matches!(mesh.noise_projection(&[0.0; 7]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn noise_projection_transpose_is_adjoint() {
        let mesh = PeriodicP2Mesh::new(4.0, 8).unwrap();
        let dw: Vec<f64> = (0..8).map(|i| (i as f64).sin()).collect();
        let r: Vec<f64> = (0..16).map(|i| (i as f64 * 0.4).cos()).collect();
        let lhs: f64 = mesh.noise_projection(&dw).unwrap().iter().zip(&r).map(|(a, b)| a * b).sum();
        let rhs: f64 = mesh.noise_projection_transpose(&r).iter().zip(&dw).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-13);
    }

    #[test]
    fn noise_covariance_matches_l2_norm() {
        use crate::rng::{Purpose, StreamKey};
        let l = 4.0;
        let mesh = PeriodicP2Mesh::new(l, 16).unwrap();
        let v = mesh.interpolate(|x| (2.0 * PI * x / l).sin());
        let dt: f64 = 0.01;
        // discrete covariance (1/h) Σ_i (∫_cell v)² and continuous ∫ v²
        let cell_integrals: Vec<f64> = mesh
            .noise_projection_transpose(&v)
            .iter()
            .map(|c| c * mesh.h().sqrt())
            .collect();
        let discrete: f64 = cell_integrals.iter().map(|c| c * c).sum::<f64>() / mesh.h();
        let mv = mesh.assemble_mass().mul_vec(&v);
        let l2: f64 = v.iter().zip(&mv).map(|(a, b)| a * b).sum();
        assert!((discrete - l2).abs() / l2 < 0.02, "{discrete} vs {l2}");

        let mut stream = StreamKey::new(5, Purpose::ModelNoise).derive();
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let dw = stream.normal_vec(16, dt.sqrt());
            let load = mesh.noise_projection(&dw).unwrap();
            let s: f64 = load.iter().zip(&v).map(|(a, b)| a * b).sum();
            acc += s * s;
        }
        let emp = acc / n as f64;
        assert!((emp - dt * discrete).abs() / (dt * discrete) < 0.02, "{emp} vs {}", dt * discrete);
    }

    #[test]
    fn point_evaluation_reproduces_quadratics() {
        let mesh = PeriodicP2Mesh::new(4.0, 8).unwrap();
        // a quadratic on one cell is represented exactly there
        let u: Vec<f64> = mesh.dof_coordinates().iter().map(|x| x * x).collect();
        let pts = vec![0.1, 0.37, 1.0, 2.9];
        let ev = PointEvaluation::new(&mesh, pts.clone());
        for (val, x) in ev.apply(&u).iter().zip(&pts) {
            assert!((val - x * x).abs() < 1e-13);
        }
        let r = vec![1.0, -2.0, 0.5, 3.0];
        let lhs: f64 = ev.apply(&u).iter().zip(&r).map(|(a, b)| a * b).sum();
        let rhs: f64 = ev.apply_transpose(&r, 16).iter().zip(&u).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
