//! L-BFGS with a strong Wolfe line search, plus a finite-difference gradient
//! checker. Both work on plain `&[f64]` vectors through an evaluation
//! callback returning `(f, ∇f)`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop when `‖g‖ / max(1, ‖x‖)` falls to this value.
    pub grad_tol: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Trial points allowed per line search.
    pub max_line_search: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iter: 500,
            grad_tol: 1e-6,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    MaxIterations,
    /// No step satisfying the Wolfe conditions was found; the returned
    /// iterate is the best one reached.
    LineSearchFailed,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::MaxIterations => "max_iter",
            Status::LineSearchFailed => "line_search_failed",
        }
    }

    pub fn is_failure(&self) -> bool {
        matches!(self, Status::LineSearchFailed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub f: f64,
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub status: Status,
    pub trace: Vec<TraceRow>,
    pub evaluations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

/// Two-loop recursion: returns `−H g`.
fn search_direction(g: &[f64], history: &[Pair]) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alpha = vec![0.0; history.len()];
    for (i, p) in history.iter().enumerate().rev() {
        alpha[i] = p.rho * dot(&p.s, &q);
        for (qj, yj) in q.iter_mut().zip(&p.y) {
            *qj -= alpha[i] * yj;
        }
    }
    if let Some(last) = history.last() {
        let scale = dot(&last.s, &last.y) / dot(&last.y, &last.y);
        q.iter_mut().for_each(|v| *v *= scale);
    }
    for (i, p) in history.iter().enumerate() {
        let beta = p.rho * dot(&p.y, &q);
        for (qj, sj) in q.iter_mut().zip(&p.s) {
            *qj += (alpha[i] - beta) * sj;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

struct Trial {
    alpha: f64,
    f: f64,
    dphi: f64,
    x: Vec<f64>,
    g: Vec<f64>,
}

struct LineSearch<'a, F> {
    eval: &'a mut F,
    x: &'a [f64],
    d: &'a [f64],
    f0: f64,
    dphi0: f64,
    c1: f64,
    c2: f64,
    budget: usize,
    evaluations: usize,
}

impl<F> LineSearch<'_, F>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn try_eval(&mut self, alpha: f64) -> Option<Trial> {
        if self.budget == 0 {
            return None;
        }
        self.budget -= 1;
        self.evaluations += 1;
        let x: Vec<f64> = self.x.iter().zip(self.d).map(|(xi, di)| xi + alpha * di).collect();
        match (self.eval)(&x) {
            Ok((f, g)) if f.is_finite() && g.iter().all(|v| v.is_finite()) => {
                let dphi = dot(&g, self.d);
                Some(Trial { alpha, f, dphi, x, g })
            }
            // overflow at a trial point counts as an infinitely bad step
            _ => Some(Trial {
                alpha,
                f: f64::INFINITY,
                dphi: f64::NAN,
                x,
                g: Vec::new(),
            }),
        }
    }

    fn armijo_fails(&self, t: &Trial) -> bool {
        !(t.f <= self.f0 + self.c1 * t.alpha * self.dphi0) || !(t.f < self.f0)
    }

    fn curvature_holds(&self, t: &Trial) -> bool {
        t.dphi.abs() <= -self.c2 * self.dphi0
    }

    fn run(&mut self, alpha_init: f64) -> Option<Trial> {
        let mut prev = Trial {
            alpha: 0.0,
            f: self.f0,
            dphi: self.dphi0,
            x: self.x.to_vec(),
            g: Vec::new(),
        };
        let mut alpha = alpha_init;
        let mut first = true;
        loop {
            let t = self.try_eval(alpha)?;
            if !t.f.is_finite() {
                // step overshot into overflow; shrink toward the last good point
                alpha = prev.alpha + 0.5 * (alpha - prev.alpha);
                if alpha - prev.alpha <= f64::EPSILON * alpha.max(1.0) {
                    return None;
                }
                continue;
            }
            if self.armijo_fails(&t) || (!first && t.f >= prev.f) {
                return self.zoom(prev, t);
            }
            if self.curvature_holds(&t) {
                return Some(t);
            }
            if t.dphi >= 0.0 {
                return self.zoom(t, prev);
            }
            alpha = 2.0 * t.alpha;
            prev = t;
            first = false;
        }
    }

    /// Nocedal–Wright zoom; `lo` always satisfies sufficient decrease and has
    /// the lowest value seen so far.
    fn zoom(&mut self, mut lo: Trial, mut hi: Trial) -> Option<Trial> {
        loop {
            let (a, b) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
            let width = b - a;
            if width <= 1e-16 * b.max(1.0) {
                return None;
            }
            let mut alpha = interpolate(&lo, &hi);
            if !(alpha > a + 0.1 * width && alpha < b - 0.1 * width) {
                alpha = 0.5 * (a + b);
            }
            let t = self.try_eval(alpha)?;
            if !t.f.is_finite() || self.armijo_fails(&t) || t.f >= lo.f {
                hi = t;
            } else {
                if self.curvature_holds(&t) {
                    return Some(t);
                }
                if t.dphi * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = t;
            }
        }
    }
}

/// Minimizer of the cubic through two points with slopes, or of the
/// quadratic when slope information at `hi` is missing.
fn interpolate(lo: &Trial, hi: &Trial) -> f64 {
    let (a0, f0, d0) = (lo.alpha, lo.f, lo.dphi);
    let (a1, f1, d1) = (hi.alpha, hi.f, hi.dphi);
    if !f1.is_finite() {
        return f64::NAN;
    }
    if d1.is_finite() {
        let e1 = d0 + d1 - 3.0 * (f0 - f1) / (a0 - a1);
        let disc = e1 * e1 - d0 * d1;
        if disc >= 0.0 {
            let e2 = disc.sqrt().copysign(a1 - a0);
            return a1 - (a1 - a0) * (d1 + e2 - e1) / (d1 - d0 + 2.0 * e2);
        }
    }
    let denom = 2.0 * (f1 - f0 - d0 * (a1 - a0));
    a0 - d0 * (a1 - a0) * (a1 - a0) / denom
}

/// Minimizes a smooth function with limited-memory BFGS.
///
/// Accepted steps satisfy the strong Wolfe conditions, so `f` strictly
/// decreases along the trace. Curvature pairs with
/// `sᵀy ≤ 1e-12·‖s‖‖y‖` are skipped.
pub fn lbfgs_minimize<F>(mut eval: F, x0: Vec<f64>, options: &LbfgsOptions) -> Result<LbfgsResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if options.memory == 0 {
        return Err(Error::Config("L-BFGS memory must be at least 1".into()));
    }
    let mut x = x0;
    let (mut f, mut g) = eval(&x)?;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { term: "objective at starting point" });
    }
    let mut evaluations = 1;
    let mut history: Vec<Pair> = Vec::with_capacity(options.memory);
    let mut trace = vec![TraceRow {
        iter: 0,
        f,
        grad_norm: norm(&g),
        step: 0.0,
    }];
    let converged = |x: &[f64], g: &[f64]| norm(g) / norm(x).max(1.0) <= options.grad_tol;

    let mut status = Status::MaxIterations;
    for iter in 1..=options.max_iter {
        if converged(&x, &g) {
            status = Status::Converged;
            break;
        }
        let mut restarted = false;
        let accepted = loop {
            let mut d = search_direction(&g, &history);
            let mut dphi0 = dot(&g, &d);
            if !(dphi0 < 0.0) {
                history.clear();
                d = g.iter().map(|v| -v).collect();
                dphi0 = dot(&g, &d);
            }
            let alpha_init = if history.is_empty() { (1.0 / norm(&g)).min(1.0) } else { 1.0 };
            let mut ls = LineSearch {
                eval: &mut eval,
                x: &x,
                d: &d,
                f0: f,
                dphi0,
                c1: options.c1,
                c2: options.c2,
                budget: options.max_line_search,
                evaluations: 0,
            };
            let found = ls.run(alpha_init);
            evaluations += ls.evaluations;
            match found {
                Some(t) => break Some(t),
                None if !restarted && !history.is_empty() => {
                    history.clear();
                    restarted = true;
                }
                None => break None,
            }
        };
        let Some(t) = accepted else {
            status = Status::LineSearchFailed;
            break;
        };
        let s: Vec<f64> = t.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = t.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if history.len() == options.memory {
                history.remove(0);
            }
            history.push(Pair { s, y, rho: 1.0 / sy });
        }
        x = t.x;
        f = t.f;
        g = t.g;
        trace.push(TraceRow {
            iter,
            f,
            grad_norm: norm(&g),
            step: t.alpha,
        });
        if iter == options.max_iter && converged(&x, &g) {
            status = Status::Converged;
        }
    }
    Ok(LbfgsResult {
        x,
        f,
        grad: g,
        status,
        trace,
        evaluations,
    })
}

pub fn format_trace_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("iter,f,grad_norm,step\n");
    for r in trace {
        writeln!(out, "{},{:e},{:e},{:e}", r.iter, r.f, r.grad_norm, r.step).unwrap();
    }
    out
}

pub fn write_trace_csv(path: &Path, trace: &[TraceRow]) -> Result<()> {
    fs::write(path, format_trace_csv(trace)).map_err(|e| Error::io(path, e))
}

/// How [`finite_diff_check_with`] probes the gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdMode {
    /// Per coordinate up to 10⁴ entries, 20 random directions beyond.
    Auto,
    Coordinates,
    /// Seeded random unit directions.
    Directions { count: usize, seed: u64 },
}

const COORDINATE_LIMIT: usize = 10_000;

/// Largest discrepancy between central differences and the analytic
/// gradient, each scaled by `max(|fd|, |analytic|, 1)`.
pub fn finite_diff_check<F>(eval: F, x: &[f64], step: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    finite_diff_check_with(eval, x, step, FdMode::Auto)
}

pub fn finite_diff_check_with<F>(mut eval: F, x: &[f64], step: f64, mode: FdMode) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {step}")));
    }
    let (_, g) = eval(x)?;
    let mode = match mode {
        FdMode::Auto if x.len() <= COORDINATE_LIMIT => FdMode::Coordinates,
        FdMode::Auto => FdMode::Directions { count: 20, seed: 0 },
        m => m,
    };
    let mut probe = |d: &[f64]| -> Result<f64> {
        let xp: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + step * b).collect();
        let xm: Vec<f64> = x.iter().zip(d).map(|(a, b)| a - step * b).collect();
        Ok((eval(&xp)?.0 - eval(&xm)?.0) / (2.0 * step))
    };
    let rel = |fd: f64, an: f64| (fd - an).abs() / fd.abs().max(an.abs()).max(1.0);
    let mut worst: f64 = 0.0;
    match mode {
        FdMode::Coordinates => {
            let mut e = vec![0.0; x.len()];
            for i in 0..x.len() {
                e[i] = 1.0;
                worst = worst.max(rel(probe(&e)?, g[i]));
                e[i] = 0.0;
            }
        }
        FdMode::Directions { count, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..count {
                let mut d: Vec<f64> = (0..x.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
                let n = norm(&d);
                d.iter_mut().for_each(|v| *v /= n);
                worst = worst.max(rel(probe(&d)?, dot(&g, &d)));
            }
        }
        FdMode::Auto => unreachable!(),
    }
    Ok(worst)
}
