//! Regularized logistic regression under linear covariance cuts, solved by a
//! quadratic-penalty outer loop around a backtracking descent inner loop.
//!
//! Parameters are `theta = [w_0, .., w_{d-1}, b]`. A cut `|a . w| <= c`
//! contributes `mu * max(0, |a . w| - c)^2` to the penalized objective.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub penalty_start: f64,
    pub penalty_growth: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub grad_tol: f64,
    pub feasibility_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            penalty_start: 10.0,
            penalty_growth: 10.0,
            max_outer: 8,
            max_inner: 2000,
            grad_tol: 1e-6,
            feasibility_tol: 1e-4,
        }
    }
}

/// Linear constraint `|a . w| <= bound` on the weight vector.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearCut {
    pub a: Vec<f64>,
    pub bound: f64,
    /// Index of the fairness constraint this cut was derived from.
    pub origin: usize,
}

pub struct Problem<'a> {
    x: &'a [f64],
    y: &'a [f64],
    n: usize,
    d: usize,
    reg: f64,
    cuts: &'a [LinearCut],
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub theta: Vec<f64>,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    /// Largest `|a . w| - bound` over all cuts, clamped at 0.
    pub violation: f64,
    pub worst_cut: Option<usize>,
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl<'a> Problem<'a> {
    /// `x` is row-major `n x d`, `y` holds 0/1 targets.
    pub fn new(x: &'a [f64], y: &'a [f64], d: usize, reg: f64, cuts: &'a [LinearCut]) -> Self {
        let n = y.len();
        assert_eq!(x.len(), n * d, "design matrix shape");
        Problem {
            x,
            y,
            n,
            d,
            reg,
            cuts,
        }
    }

    pub fn dim(&self) -> usize {
        self.d + 1
    }

    fn margin(&self, row: usize, theta: &[f64]) -> f64 {
        dot(&self.x[row * self.d..(row + 1) * self.d], &theta[..self.d]) + theta[self.d]
    }

    /// Average logistic loss plus `reg * |w|^2`, no penalty.
    pub fn training_loss(&self, theta: &[f64]) -> f64 {
        let data: f64 = (0..self.n)
            .map(|i| {
                let m = self.margin(i, theta);
                softplus(m) - self.y[i] * m
            })
            .sum::<f64>()
            / self.n.max(1) as f64;
        data + self.reg * dot(&theta[..self.d], &theta[..self.d])
    }

    fn excess(&self, cut: &LinearCut, theta: &[f64]) -> (f64, f64) {
        let s = dot(&cut.a, &theta[..self.d]);
        (s, (s.abs() - cut.bound).max(0.0))
    }

    pub fn objective(&self, theta: &[f64], mu: f64) -> f64 {
        let pen: f64 = self
            .cuts
            .iter()
            .map(|c| self.excess(c, theta).1.powi(2))
            .sum();
        self.training_loss(theta) + mu * pen
    }

    pub fn gradient(&self, theta: &[f64], mu: f64) -> Vec<f64> {
        let d = self.d;
        let mut g = vec![0.0; d + 1];
        for i in 0..self.n {
            let r = &self.x[i * d..(i + 1) * d];
            let e = sigmoid(self.margin(i, theta)) - self.y[i];
            for (gj, xj) in g[..d].iter_mut().zip(r) {
                *gj += e * xj;
            }
            g[d] += e;
        }
        let inv_n = 1.0 / self.n.max(1) as f64;
        g.iter_mut().for_each(|v| *v *= inv_n);
        for j in 0..d {
            g[j] += 2.0 * self.reg * theta[j];
        }
        for c in self.cuts {
            let (s, ex) = self.excess(c, theta);
            if ex > 0.0 {
                let k = 2.0 * mu * ex * s.signum();
                for j in 0..d {
                    g[j] += k * c.a[j];
                }
            }
        }
        g
    }

    fn hessian(&self, theta: &[f64], mu: f64) -> DMatrix<f64> {
        let d = self.d;
        let p = d + 1;
        let mut h = DMatrix::<f64>::zeros(p, p);
        let mut xr = vec![0.0; p];
        for i in 0..self.n {
            xr[..d].copy_from_slice(&self.x[i * d..(i + 1) * d]);
            xr[d] = 1.0;
            let s = sigmoid(self.margin(i, theta));
            let w = s * (1.0 - s);
            for a in 0..p {
                let wa = w * xr[a];
                for b in a..p {
                    h[(a, b)] += wa * xr[b];
                }
            }
        }
        let inv_n = 1.0 / self.n.max(1) as f64;
        for a in 0..p {
            for b in a..p {
                h[(a, b)] *= inv_n;
                h[(b, a)] = h[(a, b)];
            }
        }
        for j in 0..d {
            h[(j, j)] += 2.0 * self.reg;
        }
        for c in self.cuts {
            if self.excess(c, theta).1 > 0.0 {
                for a in 0..d {
                    for b in 0..d {
                        h[(a, b)] += 2.0 * mu * c.a[a] * c.a[b];
                    }
                }
            }
        }
        h
    }

    pub fn max_violation(&self, theta: &[f64]) -> (Option<usize>, f64) {
        self.cuts
            .iter()
            .enumerate()
            .map(|(k, c)| (Some(k), self.excess(c, theta).1))
            .fold((None, 0.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc })
    }

    fn descent_direction(&self, theta: &[f64], g: &[f64], mu: f64) -> Vec<f64> {
        let h = self.hessian(theta, mu);
        let rhs = DVector::from_iterator(g.len(), g.iter().map(|v| -v));
        let scale = h.diagonal().amax().max(1.0);
        for ridge in [0.0, 1e-12, 1e-9, 1e-6] {
            let mut hr = h.clone();
            for k in 0..hr.nrows() {
                hr[(k, k)] += ridge * scale;
            }
            if let Some(ch) = hr.cholesky() {
                let p = ch.solve(&rhs);
                if p.iter().all(|v| v.is_finite()) && dot(p.as_slice(), g) < 0.0 {
                    return p.as_slice().to_vec();
                }
            }
        }
        g.iter().map(|v| -v).collect()
    }

    /// Minimize the penalized objective at fixed `mu`, starting from `theta`.
    /// Returns the number of iterations used.
    fn minimize(&self, theta: &mut [f64], mu: f64, opts: &SolverOptions) -> usize {
        let mut f = self.objective(theta, mu);
        for it in 0..opts.max_inner {
            let g = self.gradient(theta, mu);
            let gnorm = dot(&g, &g).sqrt();
            if gnorm <= opts.grad_tol {
                return it;
            }
            let p = self.descent_direction(theta, &g, mu);
            let slope = dot(&g, &p);
            let mut step = 1.0;
            let mut trial = theta.to_vec();
            let mut accepted = false;
            while step > 1e-14 {
                for k in 0..theta.len() {
                    trial[k] = theta[k] + step * p[k];
                }
                let ft = self.objective(&trial, mu);
                if ft <= f + 1e-4 * step * slope {
                    theta.copy_from_slice(&trial);
                    f = ft;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                return it + 1;
            }
        }
        opts.max_inner
    }

    pub fn solve(&self, start: Option<&[f64]>, opts: &SolverOptions) -> Solution {
        let mut theta = start.map_or_else(|| vec![0.0; self.dim()], |s| s.to_vec());
        let mut mu = opts.penalty_start;
        let mut inner = 0;
        let mut outer = 0;
        loop {
            outer += 1;
            inner += self.minimize(&mut theta, mu, opts);
            let (_, viol) = self.max_violation(&theta);
            let tight = viol <= opts.feasibility_tol * 1e-3;
            if self.cuts.is_empty() || tight || outer >= opts.max_outer {
                break;
            }
            mu *= opts.penalty_growth;
        }
        let (worst, violation) = self.max_violation(&theta);
        Solution {
            theta,
            outer_iterations: outer,
            inner_iterations: inner,
            violation,
            worst_cut: worst.map(|k| self.cuts[k].origin),
        }
    }
}
