//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LbfgsSettings {
    pub memory: usize,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    /// Stop when an accepted step lowers the objective by less than this
    /// fraction of `max(1, |f|)`. Zero disables the test.
    pub relative_decrease_tolerance: f64,
    pub sufficient_decrease: f64,
    pub curvature: f64,
    pub max_line_search_steps: usize,
}

impl Default for LbfgsSettings {
    fn default() -> Self {
        LbfgsSettings {
            memory: 10,
            max_iterations: 500,
            gradient_tolerance: 1e-5,
            relative_decrease_tolerance: 1e-10,
            sufficient_decrease: 1e-4,
            curvature: 0.9,
            max_line_search_steps: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradientTolerance,
    RelativeDecrease,
    MaxIterations,
    LineSearchFailed,
}

impl StopReason {
    pub fn converged(self) -> bool {
        matches!(self, StopReason::GradientTolerance | StopReason::RelativeDecrease)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub gradient_norm: f64,
    pub elapsed_secs: f64,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub stop: StopReason,
    pub records: Vec<IterationRecord>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct Probe {
    alpha: f64,
    value: f64,
    grad: Vec<f64>,
    slope: f64,
}

struct LineSearch<'a, F> {
    objective: &'a mut F,
    x: &'a [f64],
    dir: &'a [f64],
    f0: f64,
    slope0: f64,
    c1: f64,
    c2: f64,
    evaluations: usize,
}

impl<F> LineSearch<'_, F>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn probe(&mut self, alpha: f64) -> Result<Probe> {
        let point: Vec<f64> = self.x.iter().zip(self.dir).map(|(x, d)| x + alpha * d).collect();
        self.evaluations += 1;
        let (value, grad) = match (self.objective)(&point) {
            Ok(v) => v,
            Err(Error::Numerical(_)) => (f64::INFINITY, vec![0.0; point.len()]),
            Err(e) => return Err(e),
        };
        let (value, slope) = if value.is_finite() && grad.iter().all(|g| g.is_finite()) {
            (value, dot(&grad, self.dir))
        } else {
            (f64::INFINITY, f64::NAN)
        };
        Ok(Probe {
            alpha,
            value,
            grad,
            slope,
        })
    }

    fn armijo_ok(&self, p: &Probe) -> bool {
        p.value <= self.f0 + self.c1 * p.alpha * self.slope0
    }

    fn curvature_ok(&self, p: &Probe) -> bool {
        p.slope.abs() <= -self.c2 * self.slope0
    }

    fn run(&mut self, initial: f64, max_steps: usize) -> Result<Option<Probe>> {
        let mut prev = Probe {
            alpha: 0.0,
            value: self.f0,
            grad: Vec::new(),
            slope: self.slope0,
        };
        let mut alpha = initial;
        for i in 0..max_steps {
            let p = self.probe(alpha)?;
            if !self.armijo_ok(&p) || (i > 0 && p.value >= prev.value) {
                return self.zoom(prev, p, max_steps);
            }
            if self.curvature_ok(&p) {
                return Ok(Some(p));
            }
            if p.slope >= 0.0 {
                return self.zoom(p, prev, max_steps);
            }
            alpha = p.alpha * 2.0;
            prev = p;
        }
        Ok((prev.alpha > 0.0).then_some(prev))
    }

    /// `lo` satisfies sufficient decrease and has the lower value; the
    /// minimiser lies between `lo` and `hi`.
    fn zoom(&mut self, mut lo: Probe, mut hi: Probe, max_steps: usize) -> Result<Option<Probe>> {
        for _ in 0..max_steps {
            let width = hi.alpha - lo.alpha;
            let mut alpha = if hi.value.is_finite() {
                let denom = 2.0 * (hi.value - lo.value - lo.slope * width);
                if denom > 0.0 {
                    lo.alpha - lo.slope * width * width / denom
                } else {
                    lo.alpha + 0.5 * width
                }
            } else {
                lo.alpha + 0.5 * width
            };
            let (a, b) = if lo.alpha < hi.alpha {
                (lo.alpha, hi.alpha)
            } else {
                (hi.alpha, lo.alpha)
            };
            let margin = 0.1 * (b - a);
            if !alpha.is_finite() || alpha < a + margin || alpha > b - margin {
                alpha = 0.5 * (a + b);
            }
            if (b - a) <= 1e-16 * b.abs().max(1.0) {
                break;
            }
            let p = self.probe(alpha)?;
            if !self.armijo_ok(&p) || p.value >= lo.value {
                hi = p;
            } else {
                if self.curvature_ok(&p) {
                    return Ok(Some(p));
                }
                if p.slope * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = p;
            }
        }
        Ok((lo.alpha > 0.0).then_some(lo))
    }
}

fn two_loop(grad: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = grad.iter().map(|g| -g).collect();
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
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q
}

/// Minimises `objective`, which returns the value and gradient at a point.
pub fn minimize<F>(mut objective: F, x0: Vec<f64>, settings: &LbfgsSettings) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let start = Instant::now();
    let (mut value, mut grad) = objective(&x0)?;
    if !value.is_finite() {
        return Err(Error::Numerical(format!("objective is {value} at the starting point")));
    }
    let mut x = x0;
    let mut evaluations = 1;
    let mut records = vec![IterationRecord {
        iteration: 0,
        objective: value,
        gradient_norm: norm(&grad),
        elapsed_secs: start.elapsed().as_secs_f64(),
    }];
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(settings.memory);
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0;

    while iterations < settings.max_iterations {
        let gnorm = norm(&grad);
        if gnorm < settings.gradient_tolerance {
            stop = StopReason::GradientTolerance;
            break;
        }
        let mut dir = two_loop(&grad, &history);
        let mut slope = dot(&dir, &grad);
        if !(slope < 0.0) {
            history.clear();
            dir = grad.iter().map(|g| -g).collect();
            slope = -gnorm * gnorm;
        }
        let initial = if history.is_empty() {
            (1.0 / gnorm).min(1.0)
        } else {
            1.0
        };
        let mut search = LineSearch {
            objective: &mut objective,
            x: &x,
            dir: &dir,
            f0: value,
            slope0: slope,
            c1: settings.sufficient_decrease,
            c2: settings.curvature,
            evaluations: 0,
        };
        let accepted = search.run(initial, settings.max_line_search_steps)?;
        evaluations += search.evaluations;
        let Some(step) = accepted else {
            if history.is_empty() {
                stop = StopReason::LineSearchFailed;
                break;
            }
            history.clear();
            continue;
        };
        let s: Vec<f64> = dir.iter().map(|d| step.alpha * d).collect();
        let y: Vec<f64> = step.grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if history.len() == settings.memory {
                history.pop_front();
            }
            history.push_back((s.clone(), y, 1.0 / sy));
        }
        x.iter_mut().zip(&s).for_each(|(xi, si)| *xi += si);
        let decrease = value - step.value;
        value = step.value;
        grad = step.grad;
        iterations += 1;
        records.push(IterationRecord {
            iteration: iterations,
            objective: value,
            gradient_norm: norm(&grad),
            elapsed_secs: start.elapsed().as_secs_f64(),
        });
        if settings.relative_decrease_tolerance > 0.0
            && decrease <= settings.relative_decrease_tolerance * value.abs().max(1.0)
        {
            stop = StopReason::RelativeDecrease;
            break;
        }
    }
    if iterations == settings.max_iterations && norm(&grad) < settings.gradient_tolerance {
        stop = StopReason::GradientTolerance;
    }
    Ok(Minimum {
        gradient_norm: norm(&grad),
        x,
        value,
        iterations,
        evaluations,
        stop,
        records,
    })
}
