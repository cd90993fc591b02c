//! Box-constrained local maximization.
//!
//! Projected BFGS on `-f` with Armijo backtracking along the projected path.
//! Gradients come from [`Objective::analytic_gradient`] where available and
//! from finite differences elsewhere. After two failed line searches the
//! search switches to a bounded Nelder–Mead simplex, which copes better
//! with the kinks the likelihood has as a function of knot positions.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract, Error, Result};
use crate::math::abs;

/// Function to maximize. Non-finite values reject the point.
pub trait Objective {
    fn value(&self, x: &[f64]) -> f64;

    /// Writes analytic partial derivatives into `grad` and marks them in
    /// `known`; returns false when nothing analytic is available.
    fn analytic_gradient(&self, _x: &[f64], _grad: &mut [f64], _known: &mut [bool]) -> bool {
        false
    }
}

impl<F: Fn(&[f64]) -> f64> Objective for F {
    fn value(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

/// Closed per-coordinate intervals; infinite ends mean unbounded.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoxBounds {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(contract!("{} lower and {} upper bounds", lo.len(), hi.len()));
        }
        for (i, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if l.is_nan() || h.is_nan() || l > h {
                return Err(contract!("invalid bounds [{l}, {h}] on coordinate {i}"));
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn unbounded(n: usize) -> Self {
        Self {
            lo: vec![f64::NEG_INFINITY; n],
            hi: vec![f64::INFINITY; n],
        }
    }

    pub fn len(&self) -> usize {
        self.lo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lo.is_empty()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn set(&mut self, i: usize, lo: f64, hi: f64) {
        debug_assert!(lo <= hi);
        self.lo[i] = lo;
        self.hi[i] = hi;
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.len()
            && x
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    pub fn project(&self, x: &mut [f64]) {
        for (v, (l, h)) in x.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *v = v.clamp(*l, *h);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OptimOptions {
    /// Projected-gradient infinity norm.
    pub tol_g: f64,
    /// Relative objective change, measured against `max(|f|, 1)`.
    pub tol_f: f64,
    pub max_iter: usize,
    /// Relative finite-difference step.
    pub fd_step: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self {
            tol_g: 1e-6,
            tol_f: 1e-9,
            max_iter: 500,
            fd_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum StopReason {
    Gradient,
    RelativeChange,
    MaxIter,
    /// The simplex fallback collapsed onto a point.
    Simplex,
    /// The simplex fallback ran out of evaluations.
    SimplexBudget,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OptimReport {
    pub argmax: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub stop: StopReason,
    pub used_simplex: bool,
    /// Coordinates at a bound whose gradient points outward.
    pub active_bounds: Vec<usize>,
}

struct Counted<'a, O: ?Sized> {
    obj: &'a O,
    evals: core::cell::Cell<usize>,
}

impl<O: Objective + ?Sized> Counted<'_, O> {
    /// `-f`, with every non-finite value mapped to `+∞`.
    fn neg(&self, x: &[f64]) -> f64 {
        self.evals.set(self.evals.get() + 1);
        let v = self.obj.value(x);
        if v.is_finite() {
            -v
        } else {
            f64::INFINITY
        }
    }
}

/// Maximizes `objective` over `bounds` starting from `start`.
pub fn maximize<O: Objective + ?Sized>(
    objective: &O,
    start: &[f64],
    bounds: &BoxBounds,
    options: &OptimOptions,
) -> Result<OptimReport> {
    let n = start.len();
    if bounds.len() != n {
        return Err(contract!("start has {n} coordinates, bounds have {}", bounds.len()));
    }
    if !bounds.contains(start) {
        return Err(contract!("start point outside the bounds"));
    }
    let f = Counted {
        obj: objective,
        evals: core::cell::Cell::new(0),
    };
    let mut x = start.to_vec();
    let mut fx = f.neg(&x);
    if !fx.is_finite() {
        return Err(Error::NonFiniteStart);
    }
    if n == 0 {
        return Ok(OptimReport {
            argmax: x,
            value: -fx,
            iterations: 0,
            evaluations: 1,
            converged: true,
            stop: StopReason::Gradient,
            used_simplex: false,
            active_bounds: Vec::new(),
        });
    }

    let mut g = gradient(&f, &x, fx, bounds, options.fd_step);
    let mut h = identity(n);
    let mut fresh_h = true;
    let mut failures = 0usize;
    let mut iterations = 0usize;
    let mut stop = StopReason::MaxIter;
    let mut used_simplex = false;
    let mut small_steps = 0usize;

    while iterations < options.max_iter {
        if projected_gradient_norm(&x, &g, bounds) < options.tol_g {
            stop = StopReason::Gradient;
            break;
        }
        iterations += 1;
        let active = active_set(&x, &g, bounds);
        let mut d = direction(&h, &g, &active);
        let mut slope = dot(&d, &g);
        if !(slope < 0.0) {
            h = identity(n);
            fresh_h = true;
            d = direction(&h, &g, &active);
            slope = dot(&d, &g);
        }
        let warm = !fresh_h;
        let mut alpha = if fresh_h {
            1.0 / inf_norm(&d).max(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            bounds.project(&mut trial);
            let ft = f.neg(&trial);
            let decrease: f64 = g.iter().zip(trial.iter().zip(&x)).map(|(gi, (t, xi))| gi * (t - xi)).sum();
            if ft.is_finite() && ft <= fx + 1e-4 * decrease.min(0.0) && ft <= fx {
                accepted = Some((trial, ft));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xt, ft)) = accepted else {
            failures += 1;
            if failures >= 2 {
                used_simplex = true;
                let (xs, fs, nm_stop) = nelder_mead(&f, &x, fx, bounds, options);
                x = xs;
                fx = fs;
                g = gradient(&f, &x, fx, bounds, options.fd_step);
                stop = nm_stop;
                break;
            }
            h = identity(n);
            fresh_h = true;
            continue;
        };
        failures = 0;
        let gt = gradient(&f, &xt, ft, bounds, options.fd_step);
        let s: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm2(&s) * norm2(&y) && sy > 0.0 {
            if fresh_h {
                let scale = sy / dot(&y, &y);
                for v in h.iter_mut() {
                    *v *= scale;
                }
                fresh_h = false;
            }
            bfgs_update(&mut h, &s, &y, sy);
        }
        let change = (fx - ft) / fx.abs().max(1.0);
        x = xt;
        fx = ft;
        g = gt;
        // a tiny change only counts after curvature-scaled steps, and twice in a row
        if warm && change < options.tol_f {
            small_steps += 1;
            if small_steps >= 2 {
                stop = StopReason::RelativeChange;
                break;
            }
        } else {
            small_steps = 0;
        }
    }
    let active_bounds = active_set(&x, &g, bounds)
        .iter()
        .enumerate()
        .filter_map(|(i, a)| a.then_some(i))
        .collect();
    let converged = !matches!(stop, StopReason::MaxIter | StopReason::SimplexBudget);
    Ok(OptimReport {
        argmax: x,
        value: -fx,
        iterations,
        evaluations: f.evals.get(),
        converged,
        stop,
        used_simplex,
        active_bounds,
    })
}

/// Gradient of `-f` at `x` (where `-f(x) = fx`).
fn gradient<O: Objective + ?Sized>(
    f: &Counted<'_, O>,
    x: &[f64],
    fx: f64,
    bounds: &BoxBounds,
    rel_step: f64,
) -> Vec<f64> {
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut known = vec![false; n];
    if f.obj.analytic_gradient(x, &mut g, &mut known) {
        for (gi, k) in g.iter_mut().zip(&known) {
            if *k {
                *gi = -*gi;
            }
        }
    } else {
        known.fill(false);
    }
    let mut probe = x.to_vec();
    for i in 0..n {
        if known[i] {
            continue;
        }
        let (lo, hi) = (bounds.lo[i], bounds.hi[i]);
        let mut h = rel_step * abs(x[i]).max(1.0);
        let mut up = x[i] + h <= hi;
        let mut down = x[i] - h >= lo;
        let mut shrinks = 0;
        while !up && !down && shrinks < 6 {
            h /= 10.0;
            up = x[i] + h <= hi;
            down = x[i] - h >= lo;
            shrinks += 1;
        }
        let mut eval = |v: f64| {
            probe[i] = v;
            let r = f.neg(&probe);
            probe[i] = x[i];
            r
        };
        let fp = if up { eval(x[i] + h) } else { f64::INFINITY };
        let fm = if down { eval(x[i] - h) } else { f64::INFINITY };
        g[i] = match (fp.is_finite(), fm.is_finite()) {
            (true, true) => (fp - fm) / (2.0 * h),
            (true, false) => (fp - fx) / h,
            (false, true) => (fx - fm) / h,
            (false, false) => 0.0,
        };
    }
    g
}

fn at_lower(x: f64, lo: f64) -> bool {
    x <= lo
}

fn at_upper(x: f64, hi: f64) -> bool {
    x >= hi
}

/// Coordinates pinned at a bound by a gradient of `-f` pointing outward.
fn active_set(x: &[f64], g: &[f64], bounds: &BoxBounds) -> Vec<bool> {
    (0..x.len())
        .map(|i| {
            (at_lower(x[i], bounds.lo[i]) && g[i] > 0.0)
                || (at_upper(x[i], bounds.hi[i]) && g[i] < 0.0)
        })
        .collect()
}

fn projected_gradient_norm(x: &[f64], g: &[f64], bounds: &BoxBounds) -> f64 {
    (0..x.len())
        .map(|i| abs((x[i] - g[i]).clamp(bounds.lo[i], bounds.hi[i]) - x[i]))
        .fold(0.0, f64::max)
}

fn direction(h: &[f64], g: &[f64], active: &[bool]) -> Vec<f64> {
    let n = g.len();
    (0..n)
        .map(|i| {
            if active[i] {
                return 0.0;
            }
            -(0..n)
                .filter(|&j| !active[j])
                .map(|j| h[i * n + j] * g[j])
                .sum::<f64>()
        })
        .collect()
}

fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum()).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    crate::math::sqrt(dot(a, a))
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(abs(*v)))
}

/// Bounded Nelder–Mead on `-f`, starting from a simplex around `x0`.
fn nelder_mead<O: Objective + ?Sized>(
    f: &Counted<'_, O>,
    x0: &[f64],
    f0: f64,
    bounds: &BoxBounds,
    options: &OptimOptions,
) -> (Vec<f64>, f64, StopReason) {
    let n = x0.len();
    let mut pts: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    pts.push((x0.to_vec(), f0));
    for i in 0..n {
        let mut p = x0.to_vec();
        let step = 0.05 * abs(x0[i]).max(1.0);
        let room_up = bounds.hi[i] - x0[i];
        let room_down = x0[i] - bounds.lo[i];
        p[i] += if room_up >= step || room_up >= room_down {
            step.min(room_up)
        } else {
            -step.min(room_down)
        };
        let fp = f.neg(&p);
        pts.push((p, fp));
    }
    let budget = 200 * (n + 1) * 10;
    let mut evals = 0usize;
    let centroid = |pts: &[(Vec<f64>, f64)]| -> Vec<f64> {
        let mut c = vec![0.0; n];
        for (p, _) in &pts[..n] {
            for (ci, pi) in c.iter_mut().zip(p) {
                *ci += pi / n as f64;
            }
        }
        c
    };
    let toward = |c: &[f64], p: &[f64], t: f64| -> Vec<f64> {
        let mut v: Vec<f64> = c.iter().zip(p).map(|(ci, pi)| ci + t * (pi - ci)).collect();
        bounds.project(&mut v);
        v
    };
    loop {
        pts.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = pts[0].1;
        let worst = pts[n].1;
        let spread = worst - best;
        let size = pts[1..]
            .iter()
            .map(|(p, _)| {
                p.iter()
                    .zip(&pts[0].0)
                    .map(|(a, b)| abs(a - b) / abs(*b).max(1.0))
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if spread.is_finite() && spread <= options.tol_f * abs(best).max(1.0) && size < 1e-7 {
            return (pts[0].0.clone(), best, StopReason::Simplex);
        }
        if evals >= budget {
            return (pts[0].0.clone(), best, StopReason::SimplexBudget);
        }
        let c = centroid(&pts);
        let xr = toward(&c, &pts[n].0, -1.0);
        let fr = f.neg(&xr);
        evals += 1;
        if fr < pts[0].1 {
            let xe = toward(&c, &pts[n].0, -2.0);
            let fe = f.neg(&xe);
            evals += 1;
            pts[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < pts[n - 1].1 {
            pts[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < pts[n].1 {
                let xc = toward(&c, &pts[n].0, -0.5);
                let fc = f.neg(&xc);
                (xc, fc)
            } else {
                let xc = toward(&c, &pts[n].0, 0.5);
                let fc = f.neg(&xc);
                (xc, fc)
            };
            evals += 1;
            if fc < pts[n].1.min(fr) {
                pts[n] = (xc, fc);
            } else {
                let x0 = pts[0].0.clone();
                for p in pts.iter_mut().skip(1) {
                    let xs = toward(&x0, &p.0, 0.5);
                    let fs = f.neg(&xs);
                    *p = (xs, fs);
                    evals += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::cell::RefCell;
    use proptest::prelude::*;

    fn quad(x: &[f64]) -> f64 {
        -x.iter().map(|v| (v - 1.0) * (v - 1.0)).sum::<f64>()
    }

    #[test]
    fn unbounded_quadratic() {
        let r = maximize(&quad, &[0.0, -3.0, 5.0], &BoxBounds::unbounded(3), &OptimOptions::default())
            .unwrap();
        assert!(r.converged);
        for v in &r.argmax {
            assert!((v - 1.0).abs() < 1e-6, "{v}");
        }
    }

    #[test]
    fn bounded_quadratic_reports_active() {
        let mut b = BoxBounds::unbounded(2);
        b.set(0, f64::NEG_INFINITY, 0.5);
        let r = maximize(&quad, &[0.0, 0.0], &b, &OptimOptions::default()).unwrap();
        assert_eq!(r.argmax[0], 0.5);
        assert!((r.argmax[1] - 1.0).abs() < 1e-6);
        assert_eq!(r.active_bounds, vec![0]);
    }

    #[test]
    fn rosenbrock_ridge() {
        let rosen = |x: &[f64]| -((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2));
        let opts = OptimOptions {
            tol_f: 1e-15,
            tol_g: 1e-8,
            ..OptimOptions::default()
        };
        let r = maximize(&rosen, &[-1.0, 1.0], &BoxBounds::unbounded(2), &opts).unwrap();
        assert!(r.value > -1e-6, "{r:?}");
        assert!((r.argmax[0] - 1.0).abs() < 1e-2);
    }

    #[test]
    fn errors() {
        let inf = |_: &[f64]| f64::NEG_INFINITY;
        assert!(matches!(
            maximize(&inf, &[0.0], &BoxBounds::unbounded(1), &OptimOptions::default()),
            Err(Error::NonFiniteStart)
        ));
        let b = BoxBounds::new(vec![0.0], vec![1.0]).unwrap();
        assert!(maximize(&quad, &[2.0], &b, &OptimOptions::default()).is_err());
        assert!(BoxBounds::new(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn rejects_infinite_region() {
        // barrier at x < 0.3: the optimum of the quadratic lies beyond it
        let walled = |x: &[f64]| if x[0] > 0.3 { f64::NEG_INFINITY } else { quad(x) };
        let r = maximize(&walled, &[0.0], &BoxBounds::unbounded(1), &OptimOptions::default()).unwrap();
        assert!(r.argmax[0] <= 0.3 && r.argmax[0] > 0.29, "{r:?}");
    }

    #[test]
    fn kinked_objective_uses_simplex_and_is_monotone() {
        let kink = |x: &[f64]| -(x[0] - 0.2).abs() - 3.0 * (x[1] + 0.4).abs();
        let r = maximize(&kink, &[1.0, 1.0], &BoxBounds::unbounded(2), &OptimOptions::default()).unwrap();
        assert!(r.value >= kink(&[1.0, 1.0]));
        assert!((r.argmax[0] - 0.2).abs() < 1e-3 && (r.argmax[1] + 0.4).abs() < 1e-3, "{r:?}");
    }

    #[test]
    fn analytic_gradient_is_used() {
        struct Q;
        impl Objective for Q {
            fn value(&self, x: &[f64]) -> f64 {
                quad(x)
            }
            fn analytic_gradient(&self, x: &[f64], g: &mut [f64], known: &mut [bool]) -> bool {
                g[0] = -2.0 * (x[0] - 1.0);
                known[0] = true;
                true
            }
        }
        let r = maximize(&Q, &[4.0, -2.0], &BoxBounds::unbounded(2), &OptimOptions::default()).unwrap();
        assert!((r.argmax[0] - 1.0).abs() < 1e-6 && (r.argmax[1] - 1.0).abs() < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn feasible_monotone_deterministic(
            c in proptest::collection::vec(-3.0f64..3.0, 3),
            lo in proptest::collection::vec(-2.0f64..0.0, 3),
            width in proptest::collection::vec(0.0f64..3.0, 3),
        ) {
            let hi: Vec<f64> = lo.iter().zip(&width).map(|(l, w)| l + w).collect();
            let bounds = BoxBounds::new(lo.clone(), hi).unwrap();
            let seen = RefCell::new(Vec::<Vec<f64>>::new());
            let obj = |x: &[f64]| {
                seen.borrow_mut().push(x.to_vec());
                -x.iter().zip(&c).map(|(v, ci)| (v - ci).powi(2) * (1.0 + ci.abs())).sum::<f64>()
                    - 0.1 * (x[0] * x[1]).powi(2)
            };
            let start = lo.clone();
            let r1 = maximize(&obj, &start, &bounds, &OptimOptions::default()).unwrap();
            prop_assert!(r1.value >= obj(&start) - 1e-12);
            prop_assert!(seen.borrow().iter().all(|p| bounds.contains(p)));
            let r2 = maximize(&obj, &start, &bounds, &OptimOptions::default()).unwrap();
            prop_assert_eq!(r1, r2);
        }
    }
}
