//! Limited-memory BFGS with simple bounds.
//!
//! Each iteration fixes the variables that sit on a bound with the gradient
//! pushing outward, builds the two-loop L-BFGS direction on the remaining free
//! variables, and backtracks along the projected path `P(x + αd)` until the
//! Armijo condition holds. Iterates are always feasible and accepted objective
//! values never increase.

use std::collections::VecDeque;

/// Objective with gradient. `None` (or a non-finite value) marks a failed
/// evaluation, which the line search treats as an infeasible trial.
pub trait Objective {
    fn evaluate(&mut self, x: &[f64]) -> Option<(f64, Vec<f64>)>;
}

impl<F> Objective for F
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    fn evaluate(&mut self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        self(x)
    }
}

#[derive(Clone, Debug)]
pub struct BoxProblem {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub x0: Vec<f64>,
    /// Tolerance on the infinity norm of the projected gradient.
    pub tol: f64,
    pub max_iter: usize,
    /// Number of stored correction pairs.
    pub memory: usize,
}

impl BoxProblem {
    pub fn unbounded(x0: Vec<f64>, tol: f64, max_iter: usize) -> Self {
        let n = x0.len();
        Self {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            x0,
            tol,
            max_iter,
            memory: 10,
        }
    }

    pub fn bounded(x0: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>, tol: f64, max_iter: usize) -> Self {
        Self {
            lower,
            upper,
            x0,
            tol,
            max_iter,
            memory: 10,
        }
    }

    fn project(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.max(*lo).min(*hi);
        }
    }

    fn projected_gradient_norm(&self, x: &[f64], g: &[f64]) -> f64 {
        x.iter()
            .zip(g)
            .zip(self.lower.iter().zip(&self.upper))
            .map(|((&xi, &gi), (&lo, &hi))| ((xi - gi).max(lo).min(hi) - xi).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Converged,
    MaxIterations,
    LineSearchFailed,
    /// The objective could not be evaluated at the starting point.
    EvaluationFailed,
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub status: Status,
    /// Objective at the (projected) starting point.
    pub initial_value: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn two_loop(memory: &VecDeque<(Vec<f64>, Vec<f64>)>, g: &[f64], free: &[bool]) -> Vec<f64> {
    let mut q: Vec<f64> = g.iter().zip(free).map(|(&v, &f)| if f { v } else { 0.0 }).collect();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y) in memory.iter().rev() {
        let rho = 1.0 / dot(y, s);
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push((a, rho));
    }
    if let Some((s, y)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y), (a, rho)) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += si * (a - b);
        }
    }
    q.iter()
        .zip(free)
        .map(|(&v, &f)| if f { -v } else { 0.0 })
        .collect()
}

pub fn lbfgsb_minimize(problem: &BoxProblem, objective: &mut impl Objective) -> Minimum {
    const C1: f64 = 1e-4;
    const MAX_BACKTRACK: usize = 60;

    let n = problem.x0.len();
    let mut x = problem.x0.clone();
    problem.project(&mut x);
    let mut evaluations = 1;
    let Some((mut f, mut g)) = objective.evaluate(&x).filter(|(f, _)| f.is_finite()) else {
        return Minimum {
            x,
            f: f64::NAN,
            status: Status::EvaluationFailed,
            initial_value: f64::NAN,
            iterations: 0,
            evaluations,
        };
    };
    let initial_value = f;
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::with_capacity(problem.memory);

    for iter in 0..problem.max_iter {
        if problem.projected_gradient_norm(&x, &g) < problem.tol {
            return Minimum {
                x,
                f,
                status: Status::Converged,
                initial_value,
                iterations: iter,
                evaluations,
            };
        }
        let free: Vec<bool> = (0..n)
            .map(|i| {
                let (lo, hi) = (problem.lower[i], problem.upper[i]);
                !(lo == hi || (x[i] <= lo && g[i] > 0.0) || (x[i] >= hi && g[i] < 0.0))
            })
            .collect();
        let mut d = two_loop(&memory, &g, &free);
        if !(dot(&g, &d) < 0.0) {
            memory.clear();
            d = two_loop(&memory, &g, &free);
        }
        let mut alpha = if memory.is_empty() {
            (1.0 / dot(&d, &d).sqrt()).min(1.0)
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..MAX_BACKTRACK {
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            problem.project(&mut trial);
            let step: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            let decrease = dot(&g, &step);
            if step.iter().all(|&s| s == 0.0) {
                break;
            }
            if decrease < 0.0 {
                evaluations += 1;
                if let Some((ft, gt)) = objective.evaluate(&trial) {
                    if ft.is_finite() && ft <= f + C1 * decrease {
                        accepted = Some((trial, ft, gt, step));
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }

        match accepted {
            Some((x_new, f_new, g_new, s)) => {
                let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
                    if memory.len() == problem.memory {
                        memory.pop_front();
                    }
                    memory.push_back((s, y));
                }
                x = x_new;
                f = f_new;
                g = g_new;
            }
            None if !memory.is_empty() => memory.clear(),
            None => {
                return Minimum {
                    x,
                    f,
                    status: Status::LineSearchFailed,
                    initial_value,
                    iterations: iter,
                    evaluations,
                }
            }
        }
    }
    let status = if problem.projected_gradient_norm(&x, &g) < problem.tol {
        Status::Converged
    } else {
        Status::MaxIterations
    };
    Minimum {
        x,
        f,
        status,
        initial_value,
        iterations: problem.max_iter,
        evaluations,
    }
}
