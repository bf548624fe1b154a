//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! Operates on flat parameter vectors. When the line search cannot find an
//! acceptable step the history is dropped and a backtracking gradient step is
//! tried instead; if that also makes no progress the run stops and reports the
//! gradient norm it reached.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions<T> {
    pub memory: usize,
    pub max_iterations: usize,
    pub grad_tolerance: T,
    /// Sufficient-decrease constant.
    pub c1: T,
    /// Curvature constant.
    pub c2: T,
    pub max_line_search: usize,
}

impl<T: Scalar> LbfgsOptions<T> {
    pub fn new(max_iterations: usize, grad_tolerance: T) -> Self {
        Self {
            memory: 10,
            max_iterations,
            grad_tolerance,
            c1: T::of(1e-4),
            c2: T::of(0.9),
            max_line_search: 40,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsReport<T> {
    pub x: Vec<T>,
    pub value: T,
    pub grad_norm: T,
    pub iterations: usize,
    pub evaluations: usize,
}

struct Point<T> {
    x: Vec<T>,
    f: T,
    g: Vec<T>,
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

fn step<T: Scalar>(x: &[T], dir: &[T], alpha: T) -> Vec<T> {
    x.iter().zip(dir).map(|(&a, &d)| a + alpha * d).collect()
}

struct Evaluator<'a, T, F> {
    f: &'a mut F,
    count: usize,
    _t: std::marker::PhantomData<T>,
}

impl<T: Scalar, F: FnMut(&[T]) -> Result<(T, Vec<T>)>> Evaluator<'_, T, F> {
    fn eval(&mut self, x: Vec<T>) -> Result<Point<T>> {
        self.count += 1;
        let (f, g) = (self.f)(&x)?;
        Ok(Point { x, f, g })
    }
}

pub fn minimize<T, F>(mut objective: F, x0: Vec<T>, opts: &LbfgsOptions<T>) -> Result<LbfgsReport<T>>
where
    T: Scalar,
    F: FnMut(&[T]) -> Result<(T, Vec<T>)>,
{
    let mut ev = Evaluator { f: &mut objective, count: 0, _t: std::marker::PhantomData };
    let mut cur = ev.eval(x0)?;
    if !cur.f.is_finite() {
        return Err(Error::Numerical("objective is not finite at the starting point".into()));
    }
    let mut history: VecDeque<(Vec<T>, Vec<T>, T)> = VecDeque::with_capacity(opts.memory);
    let mut iterations = 0;

    loop {
        let gnorm = norm(&cur.g);
        if gnorm <= opts.grad_tolerance {
            return Ok(LbfgsReport { x: cur.x, value: cur.f, grad_norm: gnorm, iterations, evaluations: ev.count });
        }
        if iterations >= opts.max_iterations {
            return Err(Error::Convergence { iterations, grad_norm: gnorm.as_f64() });
        }
        iterations += 1;

        let mut dir = two_loop(&cur.g, &history);
        let mut slope = dot(&dir, &cur.g);
        if !(slope < T::zero()) {
            history.clear();
            dir = cur.g.iter().map(|&g| -g).collect();
            slope = -gnorm * gnorm;
        }
        let alpha0 = if history.is_empty() { (T::one() / gnorm).min(T::one()) } else { T::one() };

        let next = match line_search(&mut ev, &cur, &dir, slope, alpha0, opts)? {
            Some(p) => p,
            None => {
                history.clear();
                match backtrack(&mut ev, &cur, gnorm, opts)? {
                    Some(p) => p,
                    None => return Err(Error::Convergence { iterations, grad_norm: gnorm.as_f64() }),
                }
            }
        };

        let s: Vec<T> = next.x.iter().zip(&cur.x).map(|(&a, &b)| a - b).collect();
        let y: Vec<T> = next.g.iter().zip(&cur.g).map(|(&a, &b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > T::of(1e-10) * norm(&s) * norm(&y) {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, T::one() / sy));
        }
        cur = next;
    }
}

/// Two-loop recursion: returns `−H g` for the implicit inverse Hessian `H`.
fn two_loop<T: Scalar>(g: &[T], history: &VecDeque<(Vec<T>, Vec<T>, T)>) -> Vec<T> {
    let mut q: Vec<T> = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = *rho * dot(s, &q);
        for (qi, &yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = *rho * dot(y, &q);
        for (qi, &si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Strong-Wolfe bracketing and zoom. The sufficient-decrease test carries a
/// slack of a few ulps of `|f|` so that steps taken near the optimum, where the
/// true decrease is below rounding, are not rejected on noise.
fn line_search<T, F>(
    ev: &mut Evaluator<'_, T, F>,
    cur: &Point<T>,
    dir: &[T],
    slope0: T,
    alpha0: T,
    opts: &LbfgsOptions<T>,
) -> Result<Option<Point<T>>>
where
    T: Scalar,
    F: FnMut(&[T]) -> Result<(T, Vec<T>)>,
{
    let slack = T::of(16.0 * T::EPS_F64) * cur.f.abs().max(T::one());
    let armijo = |alpha: T, f: T| f <= cur.f + opts.c1 * alpha * slope0 + slack;
    let curvature_ok = |d: T| d.abs() <= -opts.c2 * slope0;

    let mut prev_alpha = T::zero();
    let mut prev_f = cur.f;
    let mut prev_d = slope0;
    let mut alpha = alpha0;
    for i in 0..opts.max_line_search {
        let p = ev.eval(step(&cur.x, dir, alpha))?;
        let d = dot(&p.g, dir);
        if !p.f.is_finite() || !armijo(alpha, p.f) || (i > 0 && p.f >= prev_f) {
            return zoom(ev, cur, dir, slope0, (prev_alpha, prev_f, prev_d), (alpha, p.f, d), opts, slack);
        }
        if curvature_ok(d) {
            return Ok(Some(p));
        }
        if d >= T::zero() {
            return zoom(ev, cur, dir, slope0, (alpha, p.f, d), (prev_alpha, prev_f, prev_d), opts, slack);
        }
        prev_alpha = alpha;
        prev_f = p.f;
        prev_d = d;
        alpha *= T::of(2.0);
    }
    Ok(None)
}

#[allow(clippy::too_many_arguments)]
fn zoom<T, F>(
    ev: &mut Evaluator<'_, T, F>,
    cur: &Point<T>,
    dir: &[T],
    slope0: T,
    mut lo: (T, T, T),
    mut hi: (T, T, T),
    opts: &LbfgsOptions<T>,
    slack: T,
) -> Result<Option<Point<T>>>
where
    T: Scalar,
    F: FnMut(&[T]) -> Result<(T, Vec<T>)>,
{
    let tenth = T::of(0.1);
    for _ in 0..opts.max_line_search {
        let (a_lo, f_lo, d_lo) = lo;
        let (a_hi, f_hi, d_hi) = hi;
        let width = a_hi - a_lo;
        if width.abs() <= T::of(T::EPS_F64) * a_lo.abs().max(T::one()) {
            break;
        }
        // secant on the directional derivative, else the minimizer of the
        // quadratic through (a_lo, f_lo, d_lo) and (a_hi, f_hi); either is
        // kept away from the bracket ends
        let denom = T::of(2.0) * (f_hi - f_lo - d_lo * width);
        let mut alpha = if d_hi.is_finite() && d_hi * d_lo < T::zero() {
            a_lo - d_lo * width / (d_hi - d_lo)
        } else if denom > T::zero() && f_hi.is_finite() {
            a_lo - d_lo * width * width / denom
        } else {
            a_lo + width / T::of(2.0)
        };
        let (left, right) = if a_lo < a_hi { (a_lo, a_hi) } else { (a_hi, a_lo) };
        let margin = tenth * (right - left);
        if !(alpha > left + margin && alpha < right - margin) {
            alpha = a_lo + width / T::of(2.0);
        }

        let p = ev.eval(step(&cur.x, dir, alpha))?;
        let d = dot(&p.g, dir);
        if !p.f.is_finite() || p.f > cur.f + opts.c1 * alpha * slope0 + slack || p.f >= f_lo {
            hi = (alpha, p.f, d);
        } else {
            if d.abs() <= -opts.c2 * slope0 {
                return Ok(Some(p));
            }
            if d * (a_hi - a_lo) >= T::zero() {
                hi = lo;
            }
            lo = (alpha, p.f, d);
        }
    }
    Ok(None)
}

/// Armijo backtracking along the negative gradient.
fn backtrack<T, F>(ev: &mut Evaluator<'_, T, F>, cur: &Point<T>, gnorm: T, opts: &LbfgsOptions<T>) -> Result<Option<Point<T>>>
where
    T: Scalar,
    F: FnMut(&[T]) -> Result<(T, Vec<T>)>,
{
    let dir: Vec<T> = cur.g.iter().map(|&g| -g).collect();
    let slope = -gnorm * gnorm;
    let mut alpha = T::one();
    for _ in 0..60 {
        let p = ev.eval(step(&cur.x, &dir, alpha))?;
        if p.f.is_finite() && (p.f <= cur.f + opts.c1 * alpha * slope || (p.f <= cur.f && norm(&p.g) < gnorm)) {
            return Ok(Some(p));
        }
        alpha *= T::of(0.5);
    }
    Ok(None)
}
