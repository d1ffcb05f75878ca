//! Truncated stick-breaking variational Bayes for a Dirichlet-process mixture of
//! full-covariance Gaussians with a Normal–Wishart base measure, written from the
//! textbook updates with its own special functions and matrix algebra. Sticks
//! are kept per location group; with a single group this is the classic
//! Blei–Jordan algorithm.

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::{digamma, ln_gamma};
use std::f64::consts::PI;

#[derive(Clone, Debug)]
pub struct NormalWishart {
    pub m: DVector<f64>,
    pub kappa: f64,
    pub nu: f64,
    /// W, the Wishart scale matrix (the inverse of the scatter).
    pub w: DMatrix<f64>,
}

impl NormalWishart {
    fn dim(&self) -> usize {
        self.m.len()
    }

    fn ln_det_w(&self) -> f64 {
        self.w.determinant().ln()
    }

    /// E ln|Λ|
    fn e_ln_det(&self) -> f64 {
        let d = self.dim();
        (1..=d).map(|i| digamma((self.nu + 1.0 - i as f64) / 2.0)).sum::<f64>() + d as f64 * 2f64.ln() + self.ln_det_w()
    }

    fn ln_b(&self) -> f64 {
        let d = self.dim() as f64;
        -0.5 * self.nu * self.ln_det_w()
            - 0.5 * self.nu * d * 2f64.ln()
            - d * (d - 1.0) / 4.0 * PI.ln()
            - (1..=self.dim()).map(|i| ln_gamma((self.nu + 1.0 - i as f64) / 2.0)).sum::<f64>()
    }

    fn e_ln_normal(&self, y: &DVector<f64>) -> f64 {
        let d = self.dim() as f64;
        let diff = y - &self.m;
        0.5 * self.e_ln_det() - d / (2.0 * self.kappa) - 0.5 * self.nu * (diff.transpose() * &self.w * &diff)[(0, 0)]
            - 0.5 * d * (2.0 * PI).ln()
    }

    /// E_q[ln p(μ, Λ)] − E_q[ln q(μ, Λ)] with q = self.
    fn neg_kl(&self, p: &NormalWishart) -> f64 {
        let d = self.dim() as f64;
        let e_ln_det = self.e_ln_det();
        let dm = &self.m - &p.m;
        let w0_inv = p.w.clone().try_inverse().unwrap();
        let e_ln_p = 0.5 * d * (p.kappa / (2.0 * PI)).ln() + 0.5 * e_ln_det
            - d * p.kappa / (2.0 * self.kappa)
            - 0.5 * p.kappa * self.nu * (dm.transpose() * &self.w * &dm)[(0, 0)]
            + p.ln_b()
            + 0.5 * (p.nu - d - 1.0) * e_ln_det
            - 0.5 * self.nu * (w0_inv * &self.w).trace();
        let wishart_entropy = -self.ln_b() - 0.5 * (self.nu - d - 1.0) * e_ln_det + 0.5 * self.nu * d;
        let e_ln_q = 0.5 * e_ln_det + 0.5 * d * (self.kappa / (2.0 * PI)).ln() - 0.5 * d - wishart_entropy;
        e_ln_p - e_ln_q
    }

    fn posterior(&self, r: &[f64], y: &[DVector<f64>]) -> NormalWishart {
        let w: f64 = r.iter().sum();
        if w < 1e-8 {
            return self.clone();
        }
        let ybar = r.iter().zip(y).fold(DVector::zeros(self.dim()), |acc, (ri, yi)| acc + yi * *ri) / w;
        let mut s = DMatrix::zeros(self.dim(), self.dim());
        for (ri, yi) in r.iter().zip(y) {
            let d = yi - &ybar;
            s += &d * d.transpose() * *ri;
        }
        let kappa = self.kappa + w;
        let shift = &ybar - &self.m;
        let scatter = self.w.clone().try_inverse().unwrap() + s + &shift * shift.transpose() * (self.kappa * w / kappa);
        NormalWishart {
            m: (&self.m * self.kappa + &ybar * w) / kappa,
            kappa,
            nu: self.nu + w,
            w: scatter.try_inverse().unwrap(),
        }
    }
}

/// m = mean, κ = 1e-2, ν = D + 2, scatter = diagonal population variance (floored at 1e-6).
pub fn default_prior(y: &[DVector<f64>]) -> NormalWishart {
    let n = y.len() as f64;
    let d = y[0].len();
    let mean = y.iter().fold(DVector::zeros(d), |a, v| a + v) / n;
    let var = y.iter().fold(DVector::zeros(d), |a, v| a + (v - &mean).component_mul(&(v - &mean))) / n;
    NormalWishart {
        m: mean,
        kappa: 1e-2,
        nu: d as f64 + 2.0,
        w: DMatrix::from_diagonal(&var.map(|v| 1.0 / v.max(1e-6))),
    }
}

pub struct Problem<'a> {
    pub y: &'a [DVector<f64>],
    pub group: Vec<usize>,
    pub groups: usize,
    pub alpha_shape: f64,
    pub alpha_rate: f64,
    pub prior: NormalWishart,
}

pub struct OracleRun {
    pub trace: Vec<f64>,
    pub responsibilities: DMatrix<f64>,
    pub converged: bool,
}

struct State {
    r: DMatrix<f64>,
    gamma: Vec<Vec<(f64, f64)>>,
    a: f64,
    b: f64,
    theta: Vec<NormalWishart>,
}

fn e_ln_v(g: (f64, f64)) -> (f64, f64) {
    let t = digamma(g.0 + g.1);
    (digamma(g.0) - t, digamma(g.1) - t)
}

fn beta_entropy(g: (f64, f64)) -> f64 {
    let (a, b) = g;
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b) - (a - 1.0) * digamma(a) - (b - 1.0) * digamma(b)
        + (a + b - 2.0) * digamma(a + b)
}

impl Problem<'_> {
    fn c(&self, s: &State) -> usize {
        s.r.ncols()
    }

    fn update_sticks(&self, s: &mut State) {
        let c = self.c(s);
        let mut counts = vec![vec![0.0; c]; self.groups];
        for (n, &g) in self.group.iter().enumerate() {
            for j in 0..c {
                counts[g][j] += s.r[(n, j)];
            }
        }
        let e_alpha = s.a / s.b;
        s.gamma = counts
            .iter()
            .map(|nc| (0..c - 1).map(|j| (1.0 + nc[j], e_alpha + nc[j + 1..].iter().sum::<f64>())).collect())
            .collect();
    }

    fn update_alpha(&self, s: &mut State) {
        let c = self.c(s);
        s.a = self.alpha_shape + (self.groups * (c - 1)) as f64;
        s.b = self.alpha_rate - s.gamma.iter().flatten().map(|&g| e_ln_v(g).1).sum::<f64>();
    }

    fn log_weights(&self, gamma: &[(f64, f64)]) -> Vec<f64> {
        let mut out = Vec::new();
        let mut acc = 0.0;
        for &g in gamma {
            let (lv, l1v) = e_ln_v(g);
            out.push(acc + lv);
            acc += l1v;
        }
        out.push(acc);
        out
    }

    fn update_assignments(&self, s: &mut State) {
        let c = self.c(s);
        for n in 0..self.y.len() {
            let lw = self.log_weights(&s.gamma[self.group[n]]);
            let logits: Vec<f64> = (0..c).map(|j| lw[j] + s.theta[j].e_ln_normal(&self.y[n])).collect();
            let max = logits.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            for j in 0..c {
                s.r[(n, j)] = (logits[j] - max).exp() / z;
            }
        }
    }

    fn update_theta(&self, s: &mut State) {
        s.theta = (0..self.c(s))
            .map(|j| {
                let col: Vec<f64> = s.r.column(j).iter().cloned().collect();
                self.prior.posterior(&col, self.y)
            })
            .collect();
    }

    fn elbo(&self, s: &State) -> f64 {
        let (a0, b0, a, b) = (self.alpha_shape, self.alpha_rate, s.a, s.b);
        let e_ln_alpha = digamma(a) - b.ln();
        let e_alpha = a / b;
        let e_ln_p_alpha = a0 * b0.ln() - ln_gamma(a0) + (a0 - 1.0) * e_ln_alpha - b0 * e_alpha;
        let e_ln_q_alpha = a * b.ln() - ln_gamma(a) + (a - 1.0) * e_ln_alpha - a;
        let mut total = e_ln_p_alpha - e_ln_q_alpha;
        for &g in s.gamma.iter().flatten() {
            total += e_ln_alpha + (e_alpha - 1.0) * e_ln_v(g).1 + beta_entropy(g);
        }
        for q in &s.theta {
            total += q.neg_kl(&self.prior);
        }
        for n in 0..self.y.len() {
            let lw = self.log_weights(&s.gamma[self.group[n]]);
            for j in 0..self.c(s) {
                let r = s.r[(n, j)];
                if r > 0.0 {
                    total += r * (lw[j] - r.ln() + s.theta[j].e_ln_normal(&self.y[n]));
                }
            }
        }
        total
    }

    /// Runs from the given responsibilities until the relative change in the
    /// bound drops below `tol` or `max_iters` sweeps have run.
    pub fn run(&self, r0: DMatrix<f64>, max_iters: usize, tol: f64) -> OracleRun {
        let mut s = State { r: r0, gamma: Vec::new(), a: self.alpha_shape, b: self.alpha_rate, theta: Vec::new() };
        self.update_theta(&mut s);
        self.update_sticks(&mut s);
        let mut trace = vec![self.elbo(&s)];
        let mut converged = false;
        for _ in 0..max_iters {
            self.update_sticks(&mut s);
            self.update_alpha(&mut s);
            self.update_assignments(&mut s);
            self.update_theta(&mut s);
            let l = self.elbo(&s);
            let prev = *trace.last().unwrap();
            trace.push(l);
            if (l - prev).abs() < tol * prev.abs() {
                converged = true;
                break;
            }
        }
        OracleRun { trace, responsibilities: s.r, converged }
    }
}
