//! Box-constrained quasi-Newton minimization.
//!
//! Projected L-BFGS: the two-loop recursion acts on the free variables only,
//! variables pinned at a bound with the gradient pointing outward stay put,
//! and every trial point is projected back into the box before evaluation.

use std::collections::VecDeque;

#[derive(Debug, Clone)]
pub struct LbfgsOptions {
    pub max_iters: usize,
    pub memory: usize,
    /// Stop once the projected gradient's max-norm falls below this.
    pub gtol: f64,
    /// Stop once one iteration decreases `f` by less than `ftol·max(|f|, 1)`.
    pub ftol: f64,
    /// Stop as soon as `f` reaches this value.
    pub f_target: Option<f64>,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self { max_iters: 300, memory: 10, gtol: 1e-9, ftol: 1e-13, f_target: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Target,
    Gradient,
    Stalled,
    MaxIters,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub reason: StopReason,
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, &l), &h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(l, h);
    }
}

/// Variables held at a bound because the descent direction leaves the box.
fn active_set(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> Vec<bool> {
    x.iter()
        .zip(g)
        .zip(lo.iter().zip(hi))
        .map(|((&v, &gv), (&l, &h))| (v <= l && gv > 0.0) || (v >= h && gv < 0.0))
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f` over the box `[lo, hi]`. `eval` returns value and gradient.
pub fn minimize<F>(mut eval: F, x0: &[f64], lo: &[f64], hi: &[f64], opts: &LbfgsOptions) -> Outcome
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    assert!(lo.len() == n && hi.len() == n, "bounds must match the variable count");
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let (mut f, mut g) = eval(&x);
    let mut evaluations = 1;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();

    let finish = |x: Vec<f64>, f: f64, iterations: usize, evaluations: usize, reason: StopReason| Outcome {
        x,
        f,
        iterations,
        evaluations,
        reason,
    };

    for iter in 0..opts.max_iters {
        if opts.f_target.is_some_and(|t| f <= t) {
            return finish(x, f, iter, evaluations, StopReason::Target);
        }
        let active = active_set(&x, &g, lo, hi);
        let pg_norm = g.iter().zip(&active).map(|(v, &a)| if a { 0.0 } else { v.abs() }).fold(0.0, f64::max);
        if pg_norm < opts.gtol {
            return finish(x, f, iter, evaluations, StopReason::Gradient);
        }

        // Two-loop recursion restricted to the free variables.
        let mut d: Vec<f64> = g.iter().zip(&active).map(|(v, &a)| if a { 0.0 } else { *v }).collect();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &d);
            for (di, yi) in d.iter_mut().zip(y) {
                *di -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            for (di, si) in d.iter_mut().zip(s) {
                *di += (a - b) * si;
            }
        }
        for (di, &a) in d.iter_mut().zip(&active) {
            *di = if a { 0.0 } else { -*di };
        }
        if dot(&d, &g) >= 0.0 {
            d = g.iter().zip(&active).map(|(v, &a)| if a { 0.0 } else { -v }).collect();
            history.clear();
        }

        let mut step =
            if history.is_empty() { (1.0 / d.iter().fold(0.0f64, |m, v| m.max(v.abs()))).min(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..30 {
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            project(&mut trial, lo, hi);
            let moved: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            let decrease = dot(&g, &moved);
            let (ft, gt) = eval(&trial);
            evaluations += 1;
            if ft.is_finite() && ft <= f + 1e-4 * decrease {
                accepted = Some((trial, ft, gt, moved));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn, s)) = accepted else {
            return finish(x, f, iter, evaluations, StopReason::Stalled);
        };
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            history.push_back((s, y, 1.0 / sy));
            if history.len() > opts.memory {
                history.pop_front();
            }
        }
        let decrease = f - fn_;
        let scale = f.abs().max(1.0);
        x = xn;
        g = gn;
        f = fn_;
        if decrease <= opts.ftol * scale {
            return finish(x, f, iter + 1, evaluations, StopReason::Stalled);
        }
    }
    finish(x, f, opts.max_iters, evaluations, StopReason::MaxIters)
}
