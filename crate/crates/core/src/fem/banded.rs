//! Cyclically banded matrices and their LU factorisation.
//!
//! Periodic 1-D discretisations couple each unknown to its `bw` neighbours on
//! either side, with wrap-around. Elimination without pivoting keeps this pattern
//! closed if the last `bw` rows and columns are treated as dense borders, so the
//! factors fit in a band of width `2bw+1`, an `m × bw` right border and a
//! `bw × n` bottom block, with `m = n - bw`.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CyclicBandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl CyclicBandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        assert!(n >= 2 * bw && n > bw, "matrix of size {n} too small for bandwidth {bw}");
        Self {
            n,
            bw,
            data: vec![0.0; n * (2 * bw + 1)],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    fn offset(&self, i: usize, j: usize) -> Option<usize> {
        let n = self.n as isize;
        let mut d = (j as isize - i as isize).rem_euclid(n);
        if d > n / 2 {
            d -= n;
        }
        if d.unsigned_abs() > self.bw {
            return None;
        }
        Some(i * (2 * self.bw + 1) + (d + self.bw as isize) as usize)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.offset(i, j).map_or(0.0, |k| self.data[k])
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self
            .offset(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) outside the cyclic band"));
        self.data[k] += v;
    }

    /// `self ← self + s · other`
    pub fn axpy(&mut self, s: f64, other: &CyclicBandMatrix) {
        assert_eq!((self.n, self.bw), (other.n, other.bw));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            n: self.n,
            bw: self.bw,
            data: self.data.iter().map(|v| s * v).collect(),
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let (n, bw) = (self.n, self.bw);
        let w = 2 * bw + 1;
        (0..n)
            .map(|i| {
                let row = &self.data[i * w..(i + 1) * w];
                row.iter()
                    .enumerate()
                    .map(|(k, a)| a * x[(i + n + k - bw) % n])
                    .sum()
            })
            .collect()
    }

    pub fn mul_vec_transpose(&self, x: &[f64]) -> Vec<f64> {
        let (n, bw) = (self.n, self.bw);
        let w = 2 * bw + 1;
        let mut y = vec![0.0; n];
        for i in 0..n {
            for k in 0..w {
                y[(i + n + k - bw) % n] += self.data[i * w + k] * x[i];
            }
        }
        y
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| (0..self.n).map(|j| self.get(i, j)).collect()).collect()
    }

    fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// In-place LU factors (unit lower triangle) of a [`CyclicBandMatrix`].
#[derive(Clone, Debug)]
pub struct BandLu {
    n: usize,
    bw: usize,
    m: usize,
    band: Vec<f64>,
    right: Vec<f64>,
    bottom: Vec<f64>,
}

impl BandLu {
    pub fn factor(a: &CyclicBandMatrix) -> Result<Self> {
        let (n, bw) = (a.n, a.bw);
        let m = n - bw;
        let mut lu = Self {
            n,
            bw,
            m,
            band: vec![0.0; m * (2 * bw + 1)],
            right: vec![0.0; m * bw],
            bottom: vec![0.0; bw * n],
        };
        for i in 0..n {
            for d in -(bw as isize)..=bw as isize {
                let j = (i as isize + d).rem_euclid(n as isize) as usize;
                let v = a.get(i, j);
                if v != 0.0 {
                    *lu.at(i, j) = v;
                }
            }
        }
        let tiny = 1e-14 * a.max_abs().max(f64::MIN_POSITIVE);
        for k in 0..n {
            let pivot = lu.get(k, k);
            if !(pivot.abs() > tiny) {
                return Err(Error::Singular { pivot: k });
            }
            let (band_end, border_start) = lu.pattern(k);
            for r in (k + 1..=band_end).chain(border_start..n) {
                let l = lu.get(r, k) / pivot;
                if l == 0.0 {
                    continue;
                }
                *lu.at(r, k) = l;
                for c in (k + 1..=band_end).chain(border_start..n) {
                    let u = lu.get(k, c);
                    if u != 0.0 {
                        *lu.at(r, c) -= l * u;
                    }
                }
            }
        }
        Ok(lu)
    }

    /// Structural neighbours of pivot `k` beyond the diagonal: band indices
    /// `k+1..=band_end` and border indices `border_start..n`.
    fn pattern(&self, k: usize) -> (usize, usize) {
        if k < self.m {
            ((k + self.bw).min(self.m - 1), self.m)
        } else {
            (k, k + 1)
        }
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        if i >= self.m {
            self.bottom[(i - self.m) * self.n + j]
        } else if j >= self.m {
            self.right[i * self.bw + (j - self.m)]
        } else if i.abs_diff(j) <= self.bw {
            self.band[i * (2 * self.bw + 1) + (j + self.bw - i)]
        } else {
            0.0
        }
    }

    fn at(&mut self, i: usize, j: usize) -> &mut f64 {
        if i >= self.m {
            &mut self.bottom[(i - self.m) * self.n + j]
        } else if j >= self.m {
            &mut self.right[i * self.bw + (j - self.m)]
        } else {
            assert!(i.abs_diff(j) <= self.bw, "fill-in outside the band at ({i}, {j})");
            &mut self.band[i * (2 * self.bw + 1) + (j + self.bw - i)]
        }
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for k in 0..n {
            let (band_end, border_start) = self.pattern(k);
            let xk = x[k];
            for r in (k + 1..=band_end).chain(border_start..n) {
                x[r] -= self.get(r, k) * xk;
            }
        }
        for k in (0..n).rev() {
            let (band_end, border_start) = self.pattern(k);
            let mut s = x[k];
            for c in (k + 1..=band_end).chain(border_start..n) {
                s -= self.get(k, c) * x[c];
            }
            x[k] = s / self.get(k, k);
        }
        x
    }

    /// Solve `Aᵀ x = b`.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut z = b.to_vec();
        for k in 0..n {
            z[k] /= self.get(k, k);
            let (band_end, border_start) = self.pattern(k);
            let zk = z[k];
            for c in (k + 1..=band_end).chain(border_start..n) {
                z[c] -= self.get(k, c) * zk;
            }
        }
        for k in (0..n).rev() {
            let (band_end, border_start) = self.pattern(k);
            let mut s = z[k];
            for r in (k + 1..=band_end).chain(border_start..n) {
                s -= self.get(r, k) * z[r];
            }
            z[k] = s;
        }
        z
    }
}
