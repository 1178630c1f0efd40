//! Limited-memory BFGS minimizer with a strong-Wolfe line search.

use std::collections::VecDeque;

use nalgebra::DVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub history: usize,
    pub max_iter: usize,
    /// Stop once `‖∇f‖₂ ≤ gtol`.
    pub gtol: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub max_line_evals: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            history: 10,
            max_iter: 200,
            gtol: 1e-5,
            c1: 1e-4,
            c2: 0.9,
            max_line_evals: 40,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: DVector<f64>,
    pub fx: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    /// The line search could not satisfy the Wolfe conditions; `x` is the
    /// best iterate seen.
    pub line_search_failed: bool,
}

/// Minimizes `f`, which returns the value and gradient at a point. A value
/// of `+∞` marks a point outside the domain and makes the search back off.
pub fn minimize<F>(mut f: F, x0: DVector<f64>, opts: &LbfgsOptions) -> LbfgsResult
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let (mut fx, mut g) = f(&x0);
    let mut x = x0;
    let mut hist: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::with_capacity(opts.history);
    let mut iterations = 0;
    let mut failed = false;

    while iterations < opts.max_iter {
        let gnorm = g.norm();
        if !(gnorm > opts.gtol) {
            break;
        }
        let mut d = -two_loop(&g, &hist);
        let mut slope = d.dot(&g);
        if !(slope < 0.0) {
            hist.clear();
            d = -g.clone();
            slope = -gnorm * gnorm;
        }
        let alpha0 = if hist.is_empty() { (1.0 / gnorm).min(1.0) } else { 1.0 };
        let step = match wolfe(&mut f, &x, fx, slope, &d, alpha0, opts) {
            Some(s) => s,
            None if !hist.is_empty() => {
                // Retry along steepest descent with fresh curvature.
                hist.clear();
                let d = -g.clone();
                match wolfe(&mut f, &x, fx, -gnorm * gnorm, &d, (1.0 / gnorm).min(1.0), opts) {
                    Some(s) => s,
                    None => {
                        failed = true;
                        break;
                    }
                }
            }
            None => {
                failed = true;
                break;
            }
        };
        let (x_new, f_new, g_new) = step;
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if hist.len() == opts.history {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        x = x_new;
        fx = f_new;
        g = g_new;
        iterations += 1;
    }
    LbfgsResult {
        grad_norm: g.norm(),
        x,
        fx,
        iterations,
        line_search_failed: failed,
    }
}

fn two_loop(g: &DVector<f64>, hist: &VecDeque<(DVector<f64>, DVector<f64>, f64)>) -> DVector<f64> {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(hist.len());
    for (s, y, rho) in hist.iter().rev() {
        let a = rho * s.dot(&q);
        q.axpy(-a, y, 1.0);
        alphas.push(a);
    }
    if let Some((s, y, _)) = hist.back() {
        q *= s.dot(y) / y.dot(y);
    }
    for ((s, y, rho), a) in hist.iter().zip(alphas.into_iter().rev()) {
        let b = rho * y.dot(&q);
        q.axpy(a - b, s, 1.0);
    }
    q
}

type Point = (DVector<f64>, f64, DVector<f64>);

/// Bracketing/zoom line search for the strong Wolfe conditions.
fn wolfe<F>(
    f: &mut F,
    x: &DVector<f64>,
    f0: f64,
    slope0: f64,
    d: &DVector<f64>,
    alpha0: f64,
    opts: &LbfgsOptions,
) -> Option<Point>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let mut eval = |a: f64| {
        let xa = x + d * a;
        let (fa, ga) = f(&xa);
        let slope = ga.dot(d);
        (xa, fa, ga, slope)
    };
    let mut evals = 0;
    let (mut a_prev, mut f_prev, mut slope_prev) = (0.0, f0, slope0);
    let mut a = alpha0;
    let mut best: Option<Point> = None;
    let keep_best = |p: &Point, best: &mut Option<Point>| {
        if p.1 < best.as_ref().map_or(f0, |b| b.1) {
            *best = Some(p.clone());
        }
    };

    loop {
        evals += 1;
        let (xa, fa, ga, sa) = eval(a);
        if !fa.is_finite() {
            // Outside the domain: shrink toward the last good step.
            if evals >= opts.max_line_evals {
                return best.filter(|b| b.1 < f0);
            }
            a = a_prev + 0.1 * (a - a_prev);
            continue;
        }
        let p = (xa, fa, ga);
        if approx_wolfe(f0, slope0, fa, sa, opts) {
            return Some(p);
        }
        if fa > f0 + opts.c1 * a * slope0 || (evals > 1 && fa >= f_prev) {
            keep_best(&p, &mut best);
            return zoom(&mut eval, f0, slope0, (a_prev, f_prev, slope_prev), (a, fa, sa), opts, evals)
                .or_else(|| best.filter(|b| b.1 < f0));
        }
        if sa.abs() <= -opts.c2 * slope0 {
            return Some(p);
        }
        if sa >= 0.0 {
            keep_best(&p, &mut best);
            return zoom(&mut eval, f0, slope0, (a, fa, sa), (a_prev, f_prev, slope_prev), opts, evals)
                .or_else(|| best.filter(|b| b.1 < f0));
        }
        keep_best(&p, &mut best);
        if evals >= opts.max_line_evals {
            return best.filter(|b| b.1 < f0);
        }
        a_prev = a;
        f_prev = fa;
        slope_prev = sa;
        a *= 2.0;
    }
}

fn zoom<E>(
    eval: &mut E,
    f0: f64,
    slope0: f64,
    mut lo: (f64, f64, f64),
    mut hi: (f64, f64, f64),
    opts: &LbfgsOptions,
    mut evals: usize,
) -> Option<Point>
where
    E: FnMut(f64) -> (DVector<f64>, f64, DVector<f64>, f64),
{
    let mut best: Option<Point> = None;
    while evals < opts.max_line_evals {
        evals += 1;
        let a = cubic_min(lo, hi).unwrap_or(0.5 * (lo.0 + hi.0));
        let (xa, fa, ga, sa) = eval(a);
        if !fa.is_finite() {
            hi = (a, f64::INFINITY, 0.0);
            continue;
        }
        if fa < best.as_ref().map_or(f0, |b| b.1) {
            best = Some((xa.clone(), fa, ga.clone()));
        }
        if approx_wolfe(f0, slope0, fa, sa, opts) {
            return Some((xa, fa, ga));
        }
        if fa > f0 + opts.c1 * a * slope0 || fa >= lo.1 {
            hi = (a, fa, sa);
        } else {
            if sa.abs() <= -opts.c2 * slope0 {
                return Some((xa, fa, ga));
            }
            if sa * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = (a, fa, sa);
        }
        if (hi.0 - lo.0).abs() < 1e-16 * lo.0.abs().max(1.0) {
            break;
        }
    }
    best
}

/// Acceptance once the decrease is below the resolution of `f`: the value
/// may not rise and the slope must satisfy the approximate Wolfe bounds.
fn approx_wolfe(f0: f64, slope0: f64, fa: f64, sa: f64, opts: &LbfgsOptions) -> bool {
    fa <= f0 && opts.c2 * slope0 <= sa && sa <= (2.0 * opts.c1 - 1.0) * slope0
}

/// Minimizer of the cubic interpolating both ends, if it lies safely inside.
fn cubic_min(lo: (f64, f64, f64), hi: (f64, f64, f64)) -> Option<f64> {
    let (a, fa, da) = lo;
    let (b, fb, db) = hi;
    if !fb.is_finite() {
        return None;
    }
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if !(disc >= 0.0) {
        return None;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    let (l, h) = (a.min(b), a.max(b));
    let margin = 0.1 * (h - l);
    (t.is_finite() && t > l + margin && t < h - margin).then_some(t)
}
