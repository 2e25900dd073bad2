//! Limited-memory BFGS with a strong-Wolfe line search, and a step-decay
//! gradient descent fallback.

use std::ops::ControlFlow;

use log::debug;

use crate::error::{Error, Result};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Objective evaluation: `Ok(None)` marks a point where the loss overflowed.
type Eval = Option<(f64, Vec<f64>)>;

fn evaluate<F>(f: &mut F, x: &[f64]) -> Result<Eval>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    match f(x) {
        Ok((v, g)) if v.is_finite() && g.iter().all(|x| x.is_finite()) => Ok(Some((v, g))),
        Ok(_) | Err(Error::NumericalOverflow(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    LossTolerance,
    MaxIterations,
    LineSearchFailed,
    Stopped,
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub loss: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

/// Passed to the per-iteration callback after each accepted step.
#[derive(Debug)]
pub struct Progress<'a> {
    pub iteration: usize,
    pub loss: f64,
    pub x: &'a [f64],
}

#[derive(Clone, Debug)]
pub struct Lbfgs {
    pub history: usize,
    pub max_iterations: usize,
    /// Stop when the largest gradient component falls below this.
    pub gradient_tolerance: f64,
    /// Stop when one iteration improves the loss by less than this fraction.
    pub loss_tolerance: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for Lbfgs {
    fn default() -> Self {
        Self {
            history: 10,
            max_iterations: 500,
            gradient_tolerance: 1e-8,
            loss_tolerance: 1e-10,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 25,
        }
    }
}

struct LinePoint {
    alpha: f64,
    f: f64,
    g: Vec<f64>,
    slope: f64,
}

impl Lbfgs {
    pub fn minimize<F, C>(&self, x0: Vec<f64>, mut f: F, mut on_iteration: C) -> Result<Minimum>
    where
        F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
        C: FnMut(Progress<'_>) -> ControlFlow<()>,
    {
        let n = x0.len();
        let mut x = x0;
        let mut evaluations = 1;
        let (mut fx, mut g) =
            evaluate(&mut f, &x)?.ok_or(Error::TrainingDiverged { iteration: 0 })?;

        let mut s_hist: Vec<Vec<f64>> = Vec::new();
        let mut y_hist: Vec<Vec<f64>> = Vec::new();
        let mut rho_hist: Vec<f64> = Vec::new();
        let mut termination = Termination::MaxIterations;
        let mut iterations = 0;

        while iterations < self.max_iterations {
            if norm_inf(&g) <= self.gradient_tolerance {
                termination = Termination::GradientTolerance;
                break;
            }

            let mut d = two_loop(&g, &s_hist, &y_hist, &rho_hist);
            let mut slope = dot(&g, &d);
            if !(slope < 0.0) {
                s_hist.clear();
                y_hist.clear();
                rho_hist.clear();
                d = g.iter().map(|v| -v).collect();
                slope = dot(&g, &d);
            }
            let alpha0 = if s_hist.is_empty() {
                (1.0 / norm_inf(&g)).min(1.0)
            } else {
                1.0
            };

            let mut trial = |alpha: f64| -> Result<Option<LinePoint>> {
                evaluations += 1;
                let xt: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
                Ok(evaluate(&mut f, &xt)?.map(|(fv, gv)| {
                    let sl = dot(&gv, &d);
                    LinePoint {
                        alpha,
                        f: fv,
                        g: gv,
                        slope: sl,
                    }
                }))
            };
            let accepted = strong_wolfe(self, fx, slope, alpha0, &mut trial)?;
            let Some(pt) = accepted else {
                termination = Termination::LineSearchFailed;
                debug!("line search failed at iteration {iterations}");
                break;
            };

            let s: Vec<f64> = d.iter().map(|v| pt.alpha * v).collect();
            let y: Vec<f64> = pt.g.iter().zip(&g).map(|(a, b)| a - b).collect();
            for (xi, si) in x.iter_mut().zip(&s) {
                *xi += si;
            }
            let prev = fx;
            fx = pt.f;
            g = pt.g;
            iterations += 1;

            let sy = dot(&s, &y);
            if sy > 1e-10 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
                if s_hist.len() == self.history {
                    s_hist.remove(0);
                    y_hist.remove(0);
                    rho_hist.remove(0);
                }
                s_hist.push(s);
                y_hist.push(y);
                rho_hist.push(1.0 / sy);
            }

            let flow = on_iteration(Progress {
                iteration: iterations,
                loss: fx,
                x: &x,
            });
            if flow.is_break() {
                termination = Termination::Stopped;
                break;
            }
            if (prev - fx) <= self.loss_tolerance * prev.abs().max(fx.abs()).max(1e-300) {
                termination = Termination::LossTolerance;
                break;
            }
        }
        debug_assert_eq!(x.len(), n);
        Ok(Minimum {
            x,
            loss: fx,
            iterations,
            evaluations,
            termination,
        })
    }
}

/// `-H·g` from the stored curvature pairs, with the usual `sᵀy / yᵀy`
/// initial scaling.
fn two_loop(g: &[f64], s: &[Vec<f64>], y: &[Vec<f64>], rho: &[f64]) -> Vec<f64> {
    let mut q = g.to_vec();
    let m = s.len();
    let mut alpha = vec![0.0; m];
    for i in (0..m).rev() {
        alpha[i] = rho[i] * dot(&s[i], &q);
        for (qj, yj) in q.iter_mut().zip(&y[i]) {
            *qj -= alpha[i] * yj;
        }
    }
    if m > 0 {
        let gamma = dot(&s[m - 1], &y[m - 1]) / dot(&y[m - 1], &y[m - 1]);
        for qj in q.iter_mut() {
            *qj *= gamma;
        }
    }
    for i in 0..m {
        let beta = rho[i] * dot(&y[i], &q);
        for (qj, sj) in q.iter_mut().zip(&s[i]) {
            *qj += (alpha[i] - beta) * sj;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Bracketing phase followed by zoom. Overflowing trial points count as
/// "too far". Returns `None` if no point with sufficient decrease was found.
fn strong_wolfe<T>(
    opts: &Lbfgs,
    f0: f64,
    slope0: f64,
    alpha0: f64,
    trial: &mut T,
) -> Result<Option<LinePoint>>
where
    T: FnMut(f64) -> Result<Option<LinePoint>>,
{
    let armijo = |alpha: f64, f: f64| f <= f0 + opts.c1 * alpha * slope0;
    let curvature = |slope: f64| slope.abs() <= -opts.c2 * slope0;

    let mut lo = LinePoint {
        alpha: 0.0,
        f: f0,
        g: Vec::new(),
        slope: slope0,
    };
    let mut alpha = alpha0;
    let mut evals = 0;
    let hi;
    loop {
        if evals >= opts.max_line_search {
            return Ok(None);
        }
        evals += 1;
        let Some(pt) = trial(alpha)? else {
            // Overflow: the bracket is [lo, alpha].
            hi = (alpha, f64::INFINITY, f64::NAN);
            break;
        };
        if !armijo(pt.alpha, pt.f) || (lo.alpha > 0.0 && pt.f >= lo.f) {
            hi = (pt.alpha, pt.f, pt.slope);
            break;
        }
        if curvature(pt.slope) {
            return Ok(Some(pt));
        }
        if pt.slope >= 0.0 {
            hi = (lo.alpha, lo.f, lo.slope);
            lo = pt;
            break;
        }
        lo = pt;
        alpha *= 2.0;
    }

    let (mut hi_a, mut hi_f, mut hi_s) = hi;
    while evals < opts.max_line_search {
        evals += 1;
        let (a_min, a_max) = if lo.alpha < hi_a {
            (lo.alpha, hi_a)
        } else {
            (hi_a, lo.alpha)
        };
        let width = a_max - a_min;
        if width <= 1e-16 * a_max.max(1.0) {
            break;
        }
        let mut a = cubic_min(lo.alpha, lo.f, lo.slope, hi_a, hi_f, hi_s)
            .unwrap_or(0.5 * (lo.alpha + hi_a));
        let margin = 0.1 * width;
        if !(a > a_min + margin && a < a_max - margin) {
            a = 0.5 * (lo.alpha + hi_a);
        }
        let Some(pt) = trial(a)? else {
            hi_a = a;
            hi_f = f64::INFINITY;
            hi_s = f64::NAN;
            continue;
        };
        if !armijo(pt.alpha, pt.f) || pt.f >= lo.f {
            hi_a = pt.alpha;
            hi_f = pt.f;
            hi_s = pt.slope;
        } else {
            if curvature(pt.slope) {
                return Ok(Some(pt));
            }
            if pt.slope * (hi_a - lo.alpha) >= 0.0 {
                hi_a = lo.alpha;
                hi_f = lo.f;
                hi_s = lo.slope;
            }
            lo = pt;
        }
    }
    // Fall back to the best sufficient-decrease point seen.
    Ok(if lo.alpha > 0.0 { Some(lo) } else { None })
}

/// Minimiser of the cubic interpolating values and slopes at `a` and `b`.
fn cubic_min(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> Option<f64> {
    if !(fa.is_finite() && fb.is_finite() && da.is_finite() && db.is_finite()) {
        return None;
    }
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if disc < 0.0 {
        return None;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let denom = db - da + 2.0 * d2;
    if denom == 0.0 {
        return None;
    }
    let m = b - (b - a) * (db + d2 - d1) / denom;
    m.is_finite().then_some(m)
}

/// Fixed-step gradient descent whose step shrinks by `decay` every
/// `decay_every` iterations.
#[derive(Clone, Debug)]
pub struct StepDecay {
    pub learning_rate: f64,
    pub decay: f64,
    pub decay_every: usize,
    pub max_iterations: usize,
}

impl StepDecay {
    pub fn minimize<F, C>(&self, x0: Vec<f64>, mut f: F, mut on_iteration: C) -> Result<Minimum>
    where
        F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
        C: FnMut(Progress<'_>) -> ControlFlow<()>,
    {
        let mut x = x0;
        let mut lr = self.learning_rate;
        let (mut fx, mut g) =
            evaluate(&mut f, &x)?.ok_or(Error::TrainingDiverged { iteration: 0 })?;
        let mut termination = Termination::MaxIterations;
        let mut iterations = 0;
        while iterations < self.max_iterations {
            for (xi, gi) in x.iter_mut().zip(&g) {
                *xi -= lr * gi;
            }
            iterations += 1;
            (fx, g) = evaluate(&mut f, &x)?.ok_or(Error::TrainingDiverged { iteration: iterations })?;
            if self.decay_every > 0 && iterations % self.decay_every == 0 {
                lr *= self.decay;
            }
            if on_iteration(Progress {
                iteration: iterations,
                loss: fx,
                x: &x,
            })
            .is_break()
            {
                termination = Termination::Stopped;
                break;
            }
        }
        Ok(Minimum {
            x,
            loss: fx,
            iterations,
            evaluations: iterations + 1,
            termination,
        })
    }
}
