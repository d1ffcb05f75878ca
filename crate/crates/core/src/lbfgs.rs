//! Limited-memory BFGS with a strong-Wolfe line search (Nocedal & Wright,
//! algorithms 3.5/3.6 and 7.4).
//!
//! Minimizes; the best point ever evaluated is returned, so the result is
//! never worse than the starting point.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iters: usize,
    pub c1: f64,
    pub c2: f64,
    pub grad_tol: f64,
    pub rel_f_tol: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iters: 50,
            c1: 1e-4,
            c2: 0.9,
            grad_tol: 1e-8,
            rel_f_tol: 1e-12,
            max_line_search: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LbfgsStatus {
    GradientConverged,
    ValueConverged,
    MaxIterations,
    LineSearchFailed,
    /// The objective could not be evaluated at the start point.
    EvaluationFailed,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: LbfgsStatus,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Evaluator<'f, F> {
    f: &'f mut F,
    count: usize,
    best_x: Vec<f64>,
    best_f: f64,
}

impl<F> Evaluator<'_, F>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    // Failed or non-finite evaluations read as +inf, which the line search treats as "too far".
    fn eval(&mut self, x: &[f64]) -> (f64, Vec<f64>) {
        self.count += 1;
        match (self.f)(x) {
            Some((v, g)) if v.is_finite() && g.iter().all(|gi| gi.is_finite()) => {
                if v < self.best_f {
                    self.best_f = v;
                    self.best_x = x.to_vec();
                }
                (v, g)
            }
            _ => (f64::INFINITY, vec![0.0; x.len()]),
        }
    }
}

struct Trial {
    step: f64,
    value: f64,
    grad: Vec<f64>,
    slope: f64,
}

/// Minimizes `f`, which returns `None` when it cannot be evaluated at a point.
pub fn minimize<F>(mut f: F, x0: &[f64], opts: &LbfgsOptions) -> LbfgsResult
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let mut ev = Evaluator { f: &mut f, count: 0, best_x: x0.to_vec(), best_f: f64::INFINITY };
    let mut x = x0.to_vec();
    let (mut fx, mut g) = ev.eval(&x);
    if !fx.is_finite() {
        return LbfgsResult {
            x: x0.to_vec(),
            value: fx,
            iterations: 0,
            evaluations: ev.count,
            status: LbfgsStatus::EvaluationFailed,
        };
    }
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut status = LbfgsStatus::MaxIterations;
    let mut iterations = 0;

    for iter in 0..opts.max_iters {
        let gnorm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gnorm <= opts.grad_tol {
            status = LbfgsStatus::GradientConverged;
            break;
        }
        iterations = iter + 1;

        let mut d = two_loop(&g, &history);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            history.clear();
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }
        let first = if history.is_empty() {
            (1.0 / dot(&d, &d).sqrt()).min(1.0)
        } else {
            1.0
        };

        let Some(trial) = line_search(&mut ev, &x, fx, slope, &d, first, opts) else {
            status = LbfgsStatus::LineSearchFailed;
            break;
        };

        let s: Vec<f64> = d.iter().map(|v| v * trial.step).collect();
        let y: Vec<f64> = trial.grad.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s.clone(), y, 1.0 / sy));
        }
        x.iter_mut().zip(&s).for_each(|(xi, si)| *xi += si);
        let previous = fx;
        fx = trial.value;
        g = trial.grad;
        if (previous - fx).abs() <= opts.rel_f_tol * previous.abs().max(fx.abs()).max(1.0) {
            status = LbfgsStatus::ValueConverged;
            break;
        }
    }

    LbfgsResult {
        x: ev.best_x.clone(),
        value: ev.best_f,
        iterations,
        evaluations: ev.count,
        status,
    }
}

fn two_loop(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

fn line_search<F>(
    ev: &mut Evaluator<'_, F>,
    x: &[f64],
    f0: f64,
    slope0: f64,
    d: &[f64],
    first: f64,
    opts: &LbfgsOptions,
) -> Option<Trial>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let mut probe = |step: f64| -> Trial {
        let xt: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + step * di).collect();
        let (value, grad) = ev.eval(&xt);
        let slope = dot(&grad, d);
        Trial { step, value, grad, slope }
    };
    let armijo = |t: &Trial| t.value <= f0 + opts.c1 * t.step * slope0;
    let curvature = |t: &Trial| t.slope.abs() <= -opts.c2 * slope0;

    let mut prev = Trial { step: 0.0, value: f0, grad: Vec::new(), slope: slope0 };
    let mut step = first;
    for i in 0..opts.max_line_search {
        let t = probe(step);
        if !armijo(&t) || (i > 0 && t.value >= prev.value) {
            return zoom(&mut probe, prev, t, f0, slope0, opts);
        }
        if curvature(&t) {
            return Some(t);
        }
        if t.slope >= 0.0 {
            return zoom(&mut probe, t, prev, f0, slope0, opts);
        }
        step *= 2.0;
        prev = t;
    }
    None
}

fn zoom(
    probe: &mut impl FnMut(f64) -> Trial,
    mut lo: Trial,
    mut hi: Trial,
    f0: f64,
    slope0: f64,
    opts: &LbfgsOptions,
) -> Option<Trial> {
    for _ in 0..opts.max_line_search {
        let (a, b) = (lo.step.min(hi.step), lo.step.max(hi.step));
        let width = b - a;
        if width <= 1e-16 * b.max(1.0) {
            break;
        }
        let mut step = interpolate(&lo, &hi);
        if !(step > a + 0.1 * width && step < b - 0.1 * width) {
            step = 0.5 * (lo.step + hi.step);
        }
        let t = probe(step);
        if t.value > f0 + opts.c1 * t.step * slope0 || t.value >= lo.value {
            hi = t;
        } else {
            if t.slope.abs() <= -opts.c2 * slope0 {
                return Some(t);
            }
            if t.slope * (hi.step - lo.step) >= 0.0 {
                hi = lo;
            }
            lo = t;
        }
    }
    // Settle for a sufficient-decrease point if the curvature condition was not met.
    (lo.step > 0.0 && lo.value < f0).then_some(lo)
}

// Minimizer of the cubic through (lo, hi) values and slopes; quadratic fallback.
fn interpolate(lo: &Trial, hi: &Trial) -> f64 {
    if !hi.value.is_finite() || hi.grad.is_empty() {
        let h = hi.step - lo.step;
        if hi.value.is_finite() {
            let denom = 2.0 * (hi.value - lo.value - lo.slope * h);
            if denom > 0.0 {
                return lo.step - lo.slope * h * h / denom;
            }
        }
        return 0.5 * (lo.step + hi.step);
    }
    let d1 = lo.slope + hi.slope - 3.0 * (lo.value - hi.value) / (lo.step - hi.step);
    let disc = d1 * d1 - lo.slope * hi.slope;
    if disc < 0.0 {
        return 0.5 * (lo.step + hi.step);
    }
    let d2 = (hi.step - lo.step).signum() * disc.sqrt();
    hi.step - (hi.step - lo.step) * (hi.slope + d2 - d1) / (hi.slope - lo.slope + 2.0 * d2)
}
