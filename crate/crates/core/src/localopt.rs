//! Box-constrained limited-memory BFGS with gradient projection.
//!
//! Search directions come from the usual two-loop recursion restricted to the free
//! variables (those not pinned at a bound by the sign of the gradient); steps are
//! projected back onto the box and accepted by an Armijo backtracking search along
//! the projected path. Without an analytic gradient, central finite differences are
//! used.

use std::collections::VecDeque;

use crate::bounds::Bounds;
use crate::error::{Error, Result};

pub const MEMORY: usize = 10;
pub const PROJECTED_GRADIENT_TOL: f64 = 1e-8;
pub const RELATIVE_VALUE_TOL: f64 = 1e-10;
pub const FD_RELATIVE_STEP: f64 = 1e-6;

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;

type Objective<'a> = Box<dyn Fn(&[f64]) -> f64 + 'a>;
type ValueAndGradient<'a> = Box<dyn Fn(&[f64]) -> (f64, Vec<f64>) + 'a>;

/// An objective over a finite box.
pub struct BoundedProblem<'a> {
    objective: Objective<'a>,
    gradient: Option<ValueAndGradient<'a>>,
    bounds: Bounds,
    max_iters: usize,
}

impl<'a> BoundedProblem<'a> {
    pub fn new(objective: impl Fn(&[f64]) -> f64 + 'a, bounds: Bounds, max_iters: usize) -> Self {
        Self {
            objective: Box::new(objective),
            gradient: None,
            bounds,
            max_iters: max_iters.max(1),
        }
    }

    /// Supplies an analytic gradient. The closure returns the objective value
    /// together with the gradient so shared work is done once.
    pub fn with_gradient(mut self, value_and_gradient: impl Fn(&[f64]) -> (f64, Vec<f64>) + 'a) -> Self {
        self.gradient = Some(Box::new(value_and_gradient));
        self
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn max_iters(&self) -> usize {
        self.max_iters
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (self.objective)(x)
    }

    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        match &self.gradient {
            Some(g) => g(x),
            None => {
                let f = self.value(x);
                (f, finite_difference_gradient(&self.objective, x, &self.bounds))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Central differences with step `1e-6 (1 + |x_i|)`, switching to a one-sided
/// stencil where the central one would leave the box.
pub fn finite_difference_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], bounds: &Bounds) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    let mut center = None;
    for i in 0..x.len() {
        let h = FD_RELATIVE_STEP * (1.0 + x[i].abs());
        let (l, u) = (bounds.lower()[i], bounds.upper()[i]);
        let fits_up = x[i] + h <= u;
        let fits_down = x[i] - h >= l;
        grad[i] = if fits_up == fits_down {
            probe[i] = x[i] + h;
            let fp = f(&probe);
            probe[i] = x[i] - h;
            let fm = f(&probe);
            (fp - fm) / (2.0 * h)
        } else {
            let f0 = *center.get_or_insert_with(|| f(x));
            if fits_up {
                probe[i] = x[i] + h;
                (f(&probe) - f0) / h
            } else {
                probe[i] = x[i] - h;
                (f0 - f(&probe)) / h
            }
        };
        probe[i] = x[i];
    }
    grad
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn projected_gradient_norm(x: &[f64], g: &[f64], bounds: &Bounds) -> f64 {
    x.iter()
        .zip(g)
        .enumerate()
        .map(|(i, (&xi, &gi))| ((xi - gi).clamp(bounds.lower()[i], bounds.upper()[i]) - xi).abs())
        .fold(0.0, f64::max)
}

struct Correction {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

/// Two-loop recursion on the masked gradient; components outside `free` are zeroed.
fn lbfgs_direction(g: &[f64], free: &[bool], memory: &VecDeque<Correction>) -> Vec<f64> {
    let mut q: Vec<f64> = g.iter().zip(free).map(|(&v, &f)| if f { v } else { 0.0 }).collect();
    let mut alphas = Vec::with_capacity(memory.len());
    for c in memory.iter().rev() {
        let a = c.rho * dot(&c.s, &q);
        for (qi, yi) in q.iter_mut().zip(&c.y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some(last) = memory.back() {
        let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for (c, a) in memory.iter().zip(alphas.iter().rev()) {
        let b = c.rho * dot(&c.y, &q);
        for (qi, si) in q.iter_mut().zip(&c.s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().zip(free).map(|(&v, &f)| if f { -v } else { 0.0 }).collect()
}

/// Local minimization from `x0`.
///
/// Stops when the projected gradient's max-norm drops below `1e-8`, when the
/// relative change of the objective drops below `1e-10`, or after `max_iters`
/// iterations. The returned value never exceeds `objective(x0)`.
pub fn minimize(problem: &BoundedProblem<'_>, x0: &[f64]) -> Result<OptResult> {
    let bounds = &problem.bounds;
    bounds.check_dim(x0)?;
    if !bounds.contains(x0) {
        return Err(Error::InvalidArgument("starting point lies outside the bounds".into()));
    }
    let mut x = x0.to_vec();
    let (mut f, mut g) = problem.value_and_gradient(&x);
    if !f.is_finite() {
        return Err(Error::NonFiniteStart);
    }
    let n = x.len();
    let mut memory: VecDeque<Correction> = VecDeque::with_capacity(MEMORY);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < problem.max_iters {
        if g.iter().any(|v| !v.is_finite()) {
            break;
        }
        if projected_gradient_norm(&x, &g, bounds) < PROJECTED_GRADIENT_TOL {
            converged = true;
            break;
        }
        iterations += 1;

        let free: Vec<bool> = (0..n)
            .map(|i| {
                let at_lower = x[i] <= bounds.lower()[i] && g[i] > 0.0;
                let at_upper = x[i] >= bounds.upper()[i] && g[i] < 0.0;
                !(at_lower || at_upper)
            })
            .collect();
        let mut direction = lbfgs_direction(&g, &free, &memory);
        let mut slope = dot(&direction, &g);
        if !(slope < 0.0) {
            memory.clear();
            direction = lbfgs_direction(&g, &free, &memory);
            slope = dot(&direction, &g);
            if !(slope < 0.0) {
                converged = true;
                break;
            }
        }

        let mut step = if memory.is_empty() {
            let norm = dot(&direction, &direction).sqrt();
            (1.0 / norm).min(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        let mut trial = vec![0.0; n];
        for _ in 0..MAX_BACKTRACKS {
            for i in 0..n {
                trial[i] = x[i] + step * direction[i];
            }
            bounds.clip_in_place(&mut trial);
            let moved: Vec<f64> = trial.iter().zip(&x).map(|(t, xi)| t - xi).collect();
            let decrease = dot(&g, &moved);
            let f_trial = problem.value(&trial);
            if f_trial.is_finite() && f_trial <= f + ARMIJO_C1 * decrease && decrease < 0.0 {
                accepted = Some((f_trial, moved));
                break;
            }
            step *= 0.5;
        }
        let Some((f_new, s)) = accepted else {
            if memory.is_empty() {
                break;
            }
            memory.clear();
            continue;
        };

        let (f_eval, g_new) = problem.value_and_gradient(&trial);
        let f_new = if f_eval.is_finite() { f_eval } else { f_new };
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if memory.len() == MEMORY {
                memory.pop_front();
            }
            memory.push_back(Correction { rho: 1.0 / sy, s, y });
        }
        let change = (f - f_new).abs();
        let scale = f.abs().max(f_new.abs());
        x.clone_from(&trial);
        f = f_new;
        g = g_new;
        if change <= RELATIVE_VALUE_TOL * scale {
            converged = true;
            break;
        }
    }

    Ok(OptResult {
        x,
        value: f,
        iterations,
        converged,
    })
}

/// Runs [`minimize`] from every start and keeps the lowest value; the earliest
/// start wins ties. Fails only when every start fails, with the first error.
pub fn minimize_multistart(problem: &BoundedProblem<'_>, starts: &[Vec<f64>]) -> Result<OptResult> {
    if starts.is_empty() {
        return Err(Error::InvalidArgument("no starting points given".into()));
    }
    let mut best: Option<OptResult> = None;
    let mut first_error = None;
    for start in starts {
        match minimize(problem, start) {
            Ok(res) => {
                if best.as_ref().is_none_or(|b| res.value < b.value) {
                    best = Some(res);
                }
            }
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| first_error.unwrap_or(Error::AllStartsFailed))
}
