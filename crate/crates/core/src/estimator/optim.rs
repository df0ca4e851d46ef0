//! Limited-memory BFGS minimizer with a strong-Wolfe line search.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimOptions {
    pub max_iter: usize,
    /// Stop when the gradient ∞-norm falls to this level.
    pub tol: f64,
    pub memory: usize,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self { max_iter: 1000, tol: 1e-6, memory: 10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizer of the cubic through `(a, fa, ga)` and `(b, fb, gb)`, clamped
/// into the safe interior of the bracket; bisects when the cubic is useless.
fn cubic_min(a: f64, fa: f64, ga: f64, b: f64, fb: f64, gb: f64) -> f64 {
    let d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - ga * gb;
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let margin = 0.1 * (hi - lo);
    let mid = 0.5 * (a + b);
    if !disc.is_finite() || disc < 0.0 {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (gb + d2 - d1) / (gb - ga + 2.0 * d2);
    if t.is_finite() && t > lo + margin && t < hi - margin {
        t
    } else {
        mid
    }
}

struct Probe {
    alpha: f64,
    f: f64,
    g: Vec<f64>,
    dg: f64,
}

/// Strong-Wolfe line search (bracketing then zoom). Returns `None` when no
/// acceptable step is found.
fn line_search<F, E>(
    fun: &mut F,
    x: &[f64],
    f0: f64,
    dg0: f64,
    dir: &[f64],
    alpha0: f64,
    evals: &mut usize,
) -> Result<Option<Probe>, E>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>), E>,
{
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let mut eval = |alpha: f64, evals: &mut usize| -> Result<Probe, E> {
        let xt: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a + alpha * d).collect();
        *evals += 1;
        let (f, g) = fun(&xt)?;
        let dg = dot(&g, dir);
        Ok(Probe { alpha, f, g, dg })
    };
    let mut prev = Probe { alpha: 0.0, f: f0, g: Vec::new(), dg: dg0 };
    let mut alpha = alpha0;
    for i in 0..30 {
        let cur = eval(alpha, evals)?;
        if !cur.f.is_finite() {
            alpha = 0.5 * (prev.alpha + alpha);
            continue;
        }
        if cur.f > f0 + C1 * cur.alpha * dg0 || (i > 0 && cur.f >= prev.f) {
            return zoom(&mut eval, prev, cur, f0, dg0, evals);
        }
        if cur.dg.abs() <= -C2 * dg0 {
            return Ok(Some(cur));
        }
        if cur.dg >= 0.0 {
            return zoom(&mut eval, cur, prev, f0, dg0, evals);
        }
        alpha = (2.0 * cur.alpha).min(cur.alpha + 1e3 * cur.alpha.max(1.0));
        prev = cur;
    }
    // still decreasing after every expansion: take the furthest decrease
    Ok((prev.alpha > 0.0).then_some(prev))
}

fn zoom<G, E>(eval: &mut G, mut lo: Probe, mut hi: Probe, f0: f64, dg0: f64, evals: &mut usize) -> Result<Option<Probe>, E>
where
    G: FnMut(f64, &mut usize) -> Result<Probe, E>,
{
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    for _ in 0..40 {
        let alpha = cubic_min(lo.alpha, lo.f, lo.dg, hi.alpha, hi.f, hi.dg);
        if (hi.alpha - lo.alpha).abs() <= 1e-16 * lo.alpha.abs().max(1.0) {
            break;
        }
        let cur = eval(alpha, evals)?;
        if !cur.f.is_finite() || cur.f > f0 + C1 * cur.alpha * dg0 || cur.f >= lo.f {
            hi = cur;
        } else {
            if cur.dg.abs() <= -C2 * dg0 {
                return Ok(Some(cur));
            }
            if cur.dg * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
    // accept the best decrease found if it satisfies sufficient decrease
    if lo.alpha > 0.0 && !lo.g.is_empty() && lo.f < f0 {
        return Ok(Some(lo));
    }
    Ok(None)
}

/// Minimizes `fun`, which returns the objective and its gradient. `accept`
/// is called on every accepted iterate and may abort the run.
pub fn minimize<F, A, E>(mut fun: F, x0: Vec<f64>, opts: OptimOptions, mut accept: A) -> Result<OptimOutcome, E>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>), E>,
    A: FnMut(&[f64]) -> Result<(), E>,
{
    let n = x0.len();
    let mut x = x0;
    let (mut f, mut g) = fun(&x)?;
    let mut evals = 1;
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    while iterations < opts.max_iter {
        if inf_norm(&g) <= opts.tol {
            return Ok(OptimOutcome { x, f, grad: g, iterations, evaluations: evals, converged: true });
        }
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let gamma = hist.back().map_or_else(
            || 1.0 / inf_norm(&g).max(1.0),
            |(s, y, _)| dot(s, y) / dot(y, y),
        );
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut dg = dot(&dir, &g);
        if !(dg < 0.0) {
            hist.clear();
            dir = g.iter().map(|v| -v / inf_norm(&g).max(1.0)).collect();
            dg = dot(&dir, &g);
        }
        let Some(step) = line_search(&mut fun, &x, f, dg, &dir, 1.0, &mut evals)? else {
            if !hist.is_empty() {
                hist.clear();
                continue;
            }
            break;
        };
        let s: Vec<f64> = dir.iter().map(|d| step.alpha * d).collect();
        let y: Vec<f64> = step.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        x.iter_mut().zip(&s).for_each(|(xi, si)| *xi += si);
        f = step.f;
        g = step.g;
        iterations += 1;
        accept(&x)?;
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            hist.push_back((s, y, 1.0 / sy));
            if hist.len() > opts.memory {
                hist.pop_front();
            }
        }
        if n == 0 {
            break;
        }
    }
    let converged = inf_norm(&g) <= opts.tol;
    Ok(OptimOutcome { x, f, grad: g, iterations, evaluations: evals, converged })
}
