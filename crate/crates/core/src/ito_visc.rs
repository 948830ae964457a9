//! Test functionals with analytic Dupire derivatives, the functional Itô
//! residual, the gauge differential inequality, viscosity sub/supersolution
//! checks, the classical-solution check and the stability experiment.

use std::sync::Arc;

use crate::control_value::{hjb_hamiltonian, value_dpp, DppOptions};
use crate::dynamics::{mild_solve, step_state, validate_hypothesis, Coefficients, ControlSignal, Picard};
use crate::error::{Error, Result};
use crate::gauge::{self, GaugeParams};
use crate::hilbert::HVec;
use crate::path::{default_vertical_step, vertical_gradient, Path, PathFunctional};
use crate::sampling::Rng;
use crate::scalar::Scalar;

/// A smooth path functional with analytic Dupire derivatives.
pub trait TestFunctional<T: Scalar>: Send + Sync {
    fn eval(&self, g: &Path<T>) -> T;
    fn time_derivative(&self, g: &Path<T>) -> T;
    fn space_derivative(&self, g: &Path<T>) -> HVec<T>;
    /// Whether `A*∂_xφ` is continuous, as membership in the test class
    /// requires.
    fn adjoint_regular(&self) -> bool {
        true
    }
}

struct AsFunctional<'a, T: Scalar>(&'a dyn TestFunctional<T>);

impl<T: Scalar> PathFunctional<T> for AsFunctional<'_, T> {
    fn eval(&self, g: &Path<T>) -> T {
        self.0.eval(g)
    }
}

type EvalFn<T> = Arc<dyn Fn(&Path<T>) -> T + Send + Sync>;
type GradFn<T> = Arc<dyn Fn(&Path<T>) -> HVec<T> + Send + Sync>;

/// Test functional assembled from closures.
#[derive(Clone)]
pub struct FnFunctional<T> {
    eval: EvalFn<T>,
    dt: EvalFn<T>,
    dx: GradFn<T>,
    adjoint_regular: bool,
}

impl<T: Scalar> FnFunctional<T> {
    pub fn new(
        eval: impl Fn(&Path<T>) -> T + Send + Sync + 'static,
        dt: impl Fn(&Path<T>) -> T + Send + Sync + 'static,
        dx: impl Fn(&Path<T>) -> HVec<T> + Send + Sync + 'static,
    ) -> Self {
        Self { eval: Arc::new(eval), dt: Arc::new(dt), dx: Arc::new(dx), adjoint_regular: true }
    }

    pub fn with_adjoint_regular(mut self, flag: bool) -> Self {
        self.adjoint_regular = flag;
        self
    }

    /// `φ + a(T − t)` type time shifts: adds `f(t)` with derivative `f'(t)`.
    pub fn plus_time(
        &self,
        f: impl Fn(T) -> T + Send + Sync + 'static,
        df: impl Fn(T) -> T + Send + Sync + 'static,
    ) -> Self {
        let (e, d) = (self.eval.clone(), self.dt.clone());
        let f = Arc::new(f);
        Self {
            eval: Arc::new(move |g| e(g) + f(g.horizon())),
            dt: Arc::new(move |g| d(g) + df(g.horizon())),
            dx: self.dx.clone(),
            adjoint_regular: self.adjoint_regular,
        }
    }
}

impl<T: Scalar> TestFunctional<T> for FnFunctional<T> {
    fn eval(&self, g: &Path<T>) -> T {
        (self.eval)(g)
    }

    fn time_derivative(&self, g: &Path<T>) -> T {
        (self.dt)(g)
    }

    fn space_derivative(&self, g: &Path<T>) -> HVec<T> {
        (self.dx)(g)
    }

    fn adjoint_regular(&self) -> bool {
        self.adjoint_regular
    }
}

type OuterFn<T> = Arc<dyn Fn(T, &[HVec<T>]) -> T + Send + Sync>;
type OuterGradFn<T> = Arc<dyn Fn(T, &[HVec<T>]) -> Vec<HVec<T>> + Send + Sync>;

/// Cylinder functional `φ(γ_s) = f(s, γ(r₁∧s), …, γ(r_m∧s))` with a smooth
/// outer `f`. Off-grid `r_i` are read by linear interpolation.
#[derive(Clone)]
pub struct Cylinder<T> {
    times: Vec<T>,
    f: OuterFn<T>,
    f_s: OuterFn<T>,
    grad: OuterGradFn<T>,
}

impl<T: Scalar> Cylinder<T> {
    /// `grad` returns `∂f/∂x_i` for each sample argument.
    pub fn new(
        times: Vec<T>,
        f: impl Fn(T, &[HVec<T>]) -> T + Send + Sync + 'static,
        f_s: impl Fn(T, &[HVec<T>]) -> T + Send + Sync + 'static,
        grad: impl Fn(T, &[HVec<T>]) -> Vec<HVec<T>> + Send + Sync + 'static,
    ) -> Self {
        Self { times, f: Arc::new(f), f_s: Arc::new(f_s), grad: Arc::new(grad) }
    }

    /// `φ(γ_s) = |γ(s)|²`.
    pub fn endpoint_square() -> Self {
        Self::new(
            vec![T::infinity()],
            |_, x| x[0].norm_sq(),
            |_, _| T::zero(),
            |_, x| vec![x[0].scale(T::lit(2.0))],
        )
    }

    /// `φ(γ_s) = (c, γ(s))`.
    pub fn endpoint_linear(c: HVec<T>) -> Self {
        let c2 = c.clone();
        Self::new(vec![T::infinity()], move |_, x| c.dot(&x[0]), |_, _| T::zero(), move |_, _| vec![c2.clone()])
    }

    fn args(&self, g: &Path<T>) -> Vec<HVec<T>> {
        let s = g.horizon();
        self.times.iter().map(|&r| g.value_at(r.min(s))).collect()
    }
}

impl<T: Scalar> TestFunctional<T> for Cylinder<T> {
    fn eval(&self, g: &Path<T>) -> T {
        (self.f)(g.horizon(), &self.args(g))
    }

    fn time_derivative(&self, g: &Path<T>) -> T {
        (self.f_s)(g.horizon(), &self.args(g))
    }

    fn space_derivative(&self, g: &Path<T>) -> HVec<T> {
        let s = g.horizon();
        let grads = (self.grad)(s, &self.args(g));
        let mut out = HVec::zeros(g.dim());
        for (r, d) in self.times.iter().zip(grads) {
            let w = g.endpoint_weight(r.min(s));
            if !w.is_zero() {
                out = out.axpy(w, &d);
            }
        }
        out
    }
}

/// Worst disagreement between analytic and numerical derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeCheck<T> {
    pub max_dx_error: T,
    /// `None` when no sampled path leaves room for two forward steps.
    pub max_dt_error: Option<T>,
    pub passed: bool,
}

/// Compares `∂_x` against central differences and `∂_t` against the
/// Richardson combination `2D(Δt) − D(2Δt)` of forward differences along
/// the flat extension. Pass fine-grid paths when `φ` has large second time
/// derivatives.
pub fn validate_test_functional<T: Scalar>(
    phi: &dyn TestFunctional<T>,
    paths: &[Path<T>],
    tol: T,
) -> Result<DerivativeCheck<T>> {
    let f = AsFunctional(phi);
    let mut dx_err = T::zero();
    let mut dt_err: Option<T> = None;
    for g in paths {
        let numeric = vertical_gradient(&f, g, default_vertical_step(g))?;
        let analytic = phi.space_derivative(g);
        let scale = T::one().max(analytic.norm());
        dx_err = dx_err.max((&numeric - &analytic).norm() / scale);
        if g.horizon_index() + 2 <= g.grid().steps() {
            let base = phi.eval(g);
            let d = g.step();
            let d1 = (phi.eval(&g.extend_flat_to(g.horizon_index() + 1)?) - base) / d;
            let d2 = (phi.eval(&g.extend_flat_to(g.horizon_index() + 2)?) - base) / (d + d);
            let rich = d1 + d1 - d2;
            let analytic = phi.time_derivative(g);
            let e = (rich - analytic).abs() / T::one().max(analytic.abs());
            dt_err = Some(dt_err.map_or(e, |x| x.max(e)));
        }
    }
    let passed = dx_err <= tol && dt_err.is_none_or(|e| e <= tol);
    Ok(DerivativeCheck { max_dx_error: dx_err, max_dt_error: dt_err, passed })
}

/// Coordinate whose one-sided vertical difference quotients disagree by more
/// than `gap`, if any: a kink of `f` at `g`.
pub fn detect_kink<T: Scalar>(f: &dyn PathFunctional<T>, g: &Path<T>, gap: T) -> Result<Option<usize>> {
    let h = default_vertical_step(g);
    let mid = f.eval(g);
    for k in 0..g.dim() {
        let e = HVec::basis(g.dim(), k).scale(h);
        let right = (f.eval(&g.vertical_bump(&e)?) - mid) / h;
        let left = (mid - f.eval(&g.vertical_bump(&-&e)?)) / h;
        if (right - left).abs() > gap {
            return Ok(Some(k));
        }
    }
    Ok(None)
}

type OuterH<T> = Arc<dyn Fn(T, T) -> (T, T, T) + Send + Sync>;

/// Member of the auxiliary class
/// `g(γ_s) = h(s, Υ²(γ_s)) + Σ δ_i Ῡ²(γⁱ_{t_i}, γ_s)` with `Σ δ_i ≤ N`.
#[derive(Clone)]
pub struct GaugePack<T> {
    outer: Option<OuterH<T>>,
    anchors: Vec<(Path<T>, T)>,
    bound: T,
}

impl<T: Scalar> GaugePack<T> {
    /// The zero functional.
    pub fn zero() -> Self {
        Self { outer: None, anchors: Vec::new(), bound: T::zero() }
    }

    pub fn with_bound(bound: T) -> Self {
        Self { outer: None, anchors: Vec::new(), bound }
    }

    /// Outer `h(s, y)` returning `(h, h_s, h_y)`; `h_y` must be nonnegative
    /// and nondecreasing in `y`.
    pub fn with_outer(mut self, h: impl Fn(T, T) -> (T, T, T) + Send + Sync + 'static) -> Self {
        self.outer = Some(Arc::new(h));
        self
    }

    pub fn with_anchor(mut self, anchor: Path<T>, weight: T) -> Result<Self> {
        if weight < T::zero() || !weight.is_finite() {
            return Err(Error::InvalidArgument(format!("anchor weight {weight} must be nonnegative")));
        }
        let total = self.anchors.iter().fold(weight, |a, (_, w)| a + *w);
        if total > self.bound {
            return Err(Error::InvalidArgument(format!("anchor weights sum {total} exceed the bound {}", self.bound)));
        }
        self.anchors.push((anchor, weight));
        Ok(self)
    }

    pub fn anchors(&self) -> &[(Path<T>, T)] {
        &self.anchors
    }

    fn check_anchors(&self, g: &Path<T>) -> Result<()> {
        for (a, _) in &self.anchors {
            if a.horizon_index() > g.horizon_index() {
                return Err(Error::InvalidArgument("anchor ends after the evaluated path".into()));
            }
        }
        Ok(())
    }

    pub fn eval(&self, g: &Path<T>) -> Result<T> {
        let p = GaugeParams::standard();
        let mut v = match &self.outer {
            Some(h) => h(g.horizon(), gauge::eval_upsilon(p, g)).0,
            None => T::zero(),
        };
        for (a, w) in &self.anchors {
            if !w.is_zero() {
                v += *w * gauge::eval_upsilon_pair(p, a, g, true)?;
            }
        }
        Ok(v)
    }

    /// `h_s + 2 Σ δ_i (s − t_i)`.
    pub fn time_derivative(&self, g: &Path<T>) -> Result<T> {
        self.check_anchors(g)?;
        let p = GaugeParams::standard();
        let s = g.horizon();
        let mut v = match &self.outer {
            Some(h) => h(s, gauge::eval_upsilon(p, g)).1,
            None => T::zero(),
        };
        for (a, w) in &self.anchors {
            v += T::lit(2.0) * *w * (s - a.horizon());
        }
        Ok(v)
    }

    /// `h_y ∂_xΥ²(γ_s) + Σ δ_i ∂_xΥ²(γ_s − γⁱ_{t_i,s,A})`.
    pub fn space_derivative(&self, g: &Path<T>) -> Result<HVec<T>> {
        self.check_anchors(g)?;
        let p = GaugeParams::standard();
        let mut v = match &self.outer {
            Some(h) => gauge::grad_upsilon(p, g).scale(h(g.horizon(), gauge::eval_upsilon(p, g)).2),
            None => HVec::zeros(g.dim()),
        };
        for (a, w) in &self.anchors {
            if !w.is_zero() {
                v = v.axpy(*w, &gauge::grad_upsilon_pair(p, a, g)?);
            }
        }
        Ok(v)
    }
}

fn require_adjoint<T: Scalar>(phi: &dyn TestFunctional<T>) -> Result<()> {
    if phi.adjoint_regular() {
        Ok(())
    } else {
        Err(Error::Hypothesis("test functional lacks a continuous A*∂_xφ".into()))
    }
}

fn integrand<T: Scalar>(phi: &dyn TestFunctional<T>, c: &Coefficients<T>, x: &Path<T>, u: &HVec<T>) -> Result<T> {
    let dx = phi.space_derivative(x);
    let adj = c.space().adjoint_apply(&dx)?;
    Ok(phi.time_derivative(x) + adj.dot(x.endpoint()) + dx.dot(&c.drift(x, u)))
}

/// `φ(X_s) − φ(X_t̄) − ∫_t̄^s [∂_tφ + (A*∂_xφ, X) + (∂_xφ, F)] dσ` along the
/// mild solution from `g` under `u`, with the trapezoid rule per grid
/// interval (each interval uses its own control at both ends).
pub fn ito_residual<T: Scalar>(
    phi: &dyn TestFunctional<T>,
    c: &Coefficients<T>,
    g: &Path<T>,
    u: &ControlSignal<T>,
    tbar_index: usize,
    s_index: usize,
) -> Result<T> {
    require_adjoint(phi)?;
    if tbar_index < g.horizon_index() || s_index <= tbar_index || s_index > g.grid().steps() {
        return Err(Error::InvalidArgument(format!(
            "need {} ≤ t̄ < s ≤ {}, got t̄ = {tbar_index}, s = {s_index}",
            g.horizon_index(),
            g.grid().steps()
        )));
    }
    let x = mild_solve(c, g, u)?;
    let half = T::lit(0.5) * g.step();
    let mut integral = T::zero();
    for k in tbar_index..s_index {
        let ctrl = &c.controls()[u.label_at(k)];
        let a = integrand(phi, c, &x.truncated(k)?, ctrl)?;
        let b = integrand(phi, c, &x.truncated(k + 1)?, ctrl)?;
        integral += half * (a + b);
    }
    Ok(phi.eval(&x.truncated(s_index)?) - phi.eval(&x.truncated(tbar_index)?) - integral)
}

/// Least-squares slope of `log |r|` against `log Δt`.
pub fn convergence_order<T: Scalar>(steps: &[T], residuals: &[T]) -> T {
    let pts: Vec<(f64, f64)> =
        steps.iter().zip(residuals).map(|(d, r)| (d.as_f64().ln(), r.as_f64().abs().max(1e-300).ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    T::lit(sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpsilonMargin<T> {
    pub lhs: T,
    pub rhs: T,
    /// `rhs − lhs`.
    pub margin: T,
}

/// Both sides of
/// `Υᴹ(X_s − η_{t,s,A}) ≤ Υᴹ(X_t − η_t) + ∫_t^s (∂_xΥᴹ(X_σ − η_{t,σ,A}), F(X_σ, u)) dσ`
/// along the mild solution from `g` (the integral by the per-interval
/// trapezoid rule).
pub fn upsilon_inequality_check<T: Scalar>(
    c: &Coefficients<T>,
    g: &Path<T>,
    eta: &Path<T>,
    u: &ControlSignal<T>,
    s_index: usize,
    params: GaugeParams<T>,
) -> Result<UpsilonMargin<T>> {
    params.require_at_least_two()?;
    if !g.compatible(eta) || g.horizon_index() != eta.horizon_index() {
        return Err(Error::InvalidArgument("γ and η must share grid and horizon".into()));
    }
    if s_index < g.horizon_index() || s_index > g.grid().steps() {
        return Err(Error::InvalidArgument(format!("s index {s_index} outside the remaining horizon")));
    }
    let x = mild_solve(c, g, u)?;
    let y = |k: usize| -> Result<Path<T>> { x.truncated(k)?.sub(&eta.extend_semigroup_to(k)?) };
    let t = g.horizon_index();
    let half = T::lit(0.5) * g.step();
    let pairing = |k: usize, ctrl: &HVec<T>| -> Result<T> {
        let yk = y(k)?;
        Ok(gauge::grad_upsilon(params, &yk).dot(&c.drift(&x.truncated(k)?, ctrl)))
    };
    let mut integral = T::zero();
    for k in t..s_index {
        let ctrl = &c.controls()[u.label_at(k)];
        integral += half * (pairing(k, ctrl)? + pairing(k + 1, ctrl)?);
    }
    let lhs = gauge::eval_upsilon(params, &y(s_index)?);
    let rhs = gauge::eval_upsilon(params, &y(t)?) + integral;
    Ok(UpsilonMargin { lhs, rhs, margin: rhs - lhs })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Sub,
    Super,
}

impl Side {
    pub fn name(&self) -> &'static str {
        match self {
            Side::Sub => "sub",
            Side::Super => "super",
        }
    }
}

/// Left side of the equation evaluated with test functionals at a touching
/// point.
#[derive(Debug, Clone, PartialEq)]
pub struct HjbResidual<T> {
    pub side: Side,
    pub time: T,
    pub dt_phi: T,
    pub dt_gauge: T,
    /// `(A*∂_xφ, γ(t))`.
    pub adjoint_pairing: T,
    pub hamiltonian: T,
    pub margin: T,
    pub tol: T,
    pub passed: bool,
}

/// Tolerance for the touching and maximality premise on the net.
pub const PREMISE_TOL: f64 = 1e-9;

/// Viscosity inequality at `point`.
///
/// Sub side: `w − φ − g` must vanish at `point` and be maximal there over the
/// net points with later horizons; the margin
/// `∂_tφ + ∂_tg + (A*∂_xφ, γ(t)) + H(γ, ∂_xφ + ∂_xg)` passes when `≥ −tol`.
/// Super side: `w + φ + g` vanishes and is minimal; the margin
/// `−∂_tφ − ∂_tg − (A*∂_xφ, γ(t)) + H(γ, −∂_xφ − ∂_xg)` passes when `≤ tol`.
/// `H` is the infimum over controls of `(p, F) + q`.
#[allow(clippy::too_many_arguments)]
pub fn viscosity_check<T: Scalar>(
    c: &Coefficients<T>,
    w: &dyn PathFunctional<T>,
    phi: &dyn TestFunctional<T>,
    pack: &GaugePack<T>,
    point: &Path<T>,
    net: &[Path<T>],
    side: Side,
    tol: T,
) -> Result<HjbResidual<T>> {
    require_adjoint(phi)?;
    if point.is_terminal() {
        return Err(Error::InvalidArgument("viscosity test point must precede the final horizon".into()));
    }
    let sign = match side {
        Side::Sub => -T::one(),
        Side::Super => T::one(),
    };
    let theta = |g: &Path<T>| -> Result<T> { Ok(w.eval(g) + sign * (phi.eval(g) + pack.eval(g)?)) };
    let at = theta(point)?;
    let scale = T::one().max(w.eval(point).abs());
    let ptol = T::lit(PREMISE_TOL) * scale;
    if !(at.abs() <= ptol) {
        return Err(Error::NotTouching { gap: at.as_f64() });
    }
    for (i, g) in net.iter().enumerate() {
        if g.horizon_index() < point.horizon_index() {
            continue;
        }
        if !g.compatible(point) {
            return Err(Error::GridMismatch);
        }
        let excess = match side {
            Side::Sub => theta(g)? - at,
            Side::Super => at - theta(g)?,
        };
        if !(excess <= ptol) {
            return Err(Error::PremiseViolated { index: i, excess: excess.as_f64() });
        }
    }
    let dt_phi = phi.time_derivative(point);
    let dt_gauge = pack.time_derivative(point)?;
    let dphi = phi.space_derivative(point);
    let p = &dphi + &pack.space_derivative(point)?;
    let adjoint_pairing = c.space().adjoint_apply(&dphi)?.dot(point.endpoint());
    let (hamiltonian, margin, passed) = match side {
        Side::Sub => {
            let (h, _) = hjb_hamiltonian(c, point, &p)?;
            let m = dt_phi + dt_gauge + adjoint_pairing + h;
            (h, m, m >= -tol)
        }
        Side::Super => {
            let (h, _) = hjb_hamiltonian(c, point, &-&p)?;
            let m = -dt_phi - dt_gauge - adjoint_pairing + h;
            (h, m, m <= tol)
        }
    };
    Ok(HjbResidual { side, time: point.horizon(), dt_phi, dt_gauge, adjoint_pairing, hamiltonian, margin, tol, passed })
}

/// `max (w − φ)` over terminal points (must be `≤ 0` for a subsolution) and
/// `max |w − φ|`.
pub fn terminal_check<T: Scalar>(
    c: &Coefficients<T>,
    w: &dyn PathFunctional<T>,
    points: &[Path<T>],
) -> Result<(T, T)> {
    let mut excess = T::neg_infinity();
    let mut mismatch = T::zero();
    for g in points {
        if !g.is_terminal() {
            return Err(Error::InvalidArgument("terminal check needs paths on the full horizon".into()));
        }
        let d = w.eval(g) - c.terminal_cost(g);
        excess = excess.max(d);
        mismatch = mismatch.max(d.abs());
    }
    Ok((excess, mismatch))
}

/// Net around `point` for the touching premise: every prefix reachable in up
/// to `depth` controlled steps, plus vertical bumps `±j·radius/bumps·e_k` of
/// each.
pub fn touching_net<T: Scalar>(
    c: &Coefficients<T>,
    point: &Path<T>,
    depth: usize,
    radius: T,
    bumps: usize,
) -> Result<Vec<Path<T>>> {
    let mut level = vec![point.clone()];
    let mut all = vec![point.clone()];
    for _ in 0..depth {
        let mut next = Vec::new();
        for g in &level {
            if g.is_terminal() {
                continue;
            }
            for u in c.controls() {
                let mut h = g.clone();
                step_state(c, &mut h, u, Picard::Single)?;
                next.push(h);
            }
        }
        all.extend(next.iter().cloned());
        level = next;
    }
    let mut out = Vec::with_capacity(all.len() * (1 + 2 * bumps * point.dim()));
    for g in all {
        for j in 1..=bumps {
            let size = radius * T::from_index(j) / T::from_index(bumps);
            for k in 0..g.dim() {
                let e = HVec::basis(g.dim(), k).scale(size);
                out.push(g.vertical_bump(&e)?);
                out.push(g.vertical_bump(&-&e)?);
            }
        }
        out.push(g);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalReport<T> {
    /// Residual at each non-terminal point, in input order.
    pub residuals: Vec<T>,
    pub max_residual: T,
    pub terminal_mismatch: T,
    /// Indices of points where `w` has a vertical kink.
    pub kinks: Vec<usize>,
    pub tol: T,
    pub passed: bool,
}

/// Pointwise residual `∂_tw + (A*∂_xw, γ(t)) + H(γ, ∂_xw)` at non-terminal
/// points and `|w − φ|` at terminal ones. Points where one-sided vertical
/// differences disagree by more than `10⁻³` are flagged as kinks.
pub fn classical_check<T: Scalar>(
    c: &Coefficients<T>,
    w: &dyn TestFunctional<T>,
    points: &[Path<T>],
    tol: T,
) -> Result<ClassicalReport<T>> {
    require_adjoint(w)?;
    let f = AsFunctional(w);
    let mut residuals = Vec::new();
    let mut max_residual = T::zero();
    let mut terminal_mismatch = T::zero();
    let mut kinks = Vec::new();
    for (i, g) in points.iter().enumerate() {
        if detect_kink(&f, g, T::lit(1e-3))?.is_some() {
            kinks.push(i);
        }
        if g.is_terminal() {
            terminal_mismatch = terminal_mismatch.max((w.eval(g) - c.terminal_cost(g)).abs());
            continue;
        }
        let dx = w.space_derivative(g);
        let adj = c.space().adjoint_apply(&dx)?.dot(g.endpoint());
        let (h, _) = hjb_hamiltonian(c, g, &dx)?;
        let r = w.time_derivative(g) + adj + h;
        max_residual = max_residual.max(r.abs());
        residuals.push(r);
    }
    let passed = kinks.is_empty() && max_residual <= tol && terminal_mismatch <= tol;
    Ok(ClassicalReport { residuals, max_residual, terminal_mismatch, kinks, tol, passed })
}

/// Family of perturbed coefficients indexed by `ε`.
#[derive(Debug, Clone, PartialEq)]
pub enum Perturbation<T> {
    /// `φ + ε`.
    Terminal,
    /// `q + ε`.
    Running,
    /// `F + ε·v`.
    Drift(HVec<T>),
}

impl<T: Scalar> Perturbation<T> {
    pub fn apply(&self, c: &Coefficients<T>, eps: T) -> Coefficients<T> {
        match self {
            Perturbation::Terminal => c.shifted_terminal(eps),
            Perturbation::Running => c.shifted_running(eps),
            Perturbation::Drift(v) => c.shifted_drift(eps, v.clone()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Perturbation::Terminal => "terminal",
            Perturbation::Running => "running",
            Perturbation::Drift(_) => "drift",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRow<T> {
    pub eps: T,
    /// `sup |vᵉ − v|` over the test set; `None` when the perturbed data
    /// failed the hypothesis check.
    pub gap: Option<T>,
    /// Bound the gap must respect: `ε`, `ε·max(T − t)` or `e^{LT}ε·|v|`.
    pub bound: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport<T> {
    pub kind: &'static str,
    pub rows: Vec<StabilityRow<T>>,
    pub within_bound: bool,
    /// Gaps do not increase as `|ε|` decreases.
    pub decreasing: bool,
    pub passed: bool,
}

/// Values of the perturbed problems against the base problem on a set of
/// test paths.
pub fn stability_experiment<T: Scalar>(
    c: &Coefficients<T>,
    perturbation: &Perturbation<T>,
    epsilons: &[T],
    test_paths: &[Path<T>],
    opts: &DppOptions<T>,
    hypothesis_trials: usize,
    rng: &mut Rng,
) -> Result<StabilityReport<T>> {
    let first = test_paths.first().ok_or_else(|| Error::InvalidArgument("empty test set".into()))?;
    let grid = *first.grid();
    let base: Vec<T> = test_paths.iter().map(|g| value_dpp(c, g, opts)).collect::<Result<_>>()?;
    let longest = test_paths.iter().map(|g| grid.final_time() - g.horizon()).fold(T::zero(), T::max);
    let mut rows = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let ce = perturbation.apply(c, eps);
        let bound = match perturbation {
            Perturbation::Terminal => eps.abs(),
            Perturbation::Running => eps.abs() * longest,
            Perturbation::Drift(v) => (c.lipschitz() * grid.final_time()).exp() * eps.abs() * v.norm(),
        };
        let ok = hypothesis_trials == 0 || validate_hypothesis(&ce, grid, hypothesis_trials, rng)?.passed;
        let gap = if ok {
            let mut worst = T::zero();
            for (g, v) in test_paths.iter().zip(&base) {
                worst = worst.max((value_dpp(&ce, g, opts)? - *v).abs());
            }
            Some(worst)
        } else {
            None
        };
        rows.push(StabilityRow { eps, gap, bound });
    }
    let slack = T::lit(1e-9);
    let within_bound = rows.iter().all(|r| r.gap.is_none_or(|g| g <= r.bound + slack));
    let mut ordered: Vec<_> = rows.iter().filter_map(|r| r.gap.map(|g| (r.eps.abs(), g))).collect();
    ordered.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    let decreasing = ordered.windows(2).all(|w| w[1].1 <= w[0].1 + slack);
    let complete = rows.iter().all(|r| r.gap.is_some());
    Ok(StabilityReport {
        kind: perturbation.name(),
        rows,
        within_bound,
        decreasing,
        passed: within_bound && decreasing && complete,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control_value::DppOptions;
    use crate::hilbert::SpectralSpace;
    use crate::library;
    use crate::path::TimeGrid;
    use crate::sampling::{self, rng_from_seed};

    fn space(l: &[f64]) -> Arc<SpectralSpace<f64>> {
        Arc::new(SpectralSpace::new(l.to_vec()).unwrap())
    }

    fn start(sp: &Arc<SpectralSpace<f64>>, grid: TimeGrid<f64>, t: f64, x: &[f64]) -> Path<f64> {
        Path::constant(sp.clone(), grid, t, HVec::new(x.to_vec())).unwrap()
    }

    fn unit_drift(sp: Arc<SpectralSpace<f64>>) -> Coefficients<f64> {
        library::eikonal(sp).unwrap()
    }

    #[test]
    fn ito_exact_for_quadratic_with_constant_drift() {
        let sp = space(&[0.0]);
        let grid = TimeGrid::new(1.0, 1.0 / 16.0).unwrap();
        let c = unit_drift(sp.clone());
        let g = start(&sp, grid, 0.25, &[0.3]);
        let u = ControlSignal::constant(grid, 4, 2).unwrap();
        let r = ito_residual(&Cylinder::endpoint_square(), &c, &g, &u, 4, 16).unwrap();
        assert!(r.abs() <= 1e-12, "{r}");
    }

    #[test]
    fn ito_linear_functional_second_order() {
        let sp = space(&[-1.0, -0.3]);
        let zero = Coefficients::new("zero", sp.clone(), vec![HVec::zeros(2)], 1.0).unwrap();
        let phi = Cylinder::endpoint_linear(HVec::new(vec![1.0, 2.0]));
        let mut dts = Vec::new();
        let mut res = Vec::new();
        for k in 0..5 {
            let grid = TimeGrid::with_steps(1.0, 16 << k).unwrap();
            let g = start(&sp, grid, 0.0, &[1.0, -0.5]);
            let u = ControlSignal::constant(grid, 0, 0).unwrap();
            let r = ito_residual(&phi, &zero, &g, &u, 0, grid.steps()).unwrap();
            dts.push(grid.step());
            res.push(r);
        }
        assert!(res[2].abs() <= 1e-3);
        assert!(convergence_order(&dts, &res) >= 1.9);
    }

    #[test]
    fn ito_refuses_without_adjoint_flag() {
        let sp = space(&[0.0]);
        let grid = TimeGrid::new(1.0, 0.25).unwrap();
        let c = unit_drift(sp.clone());
        let phi = FnFunctional::new(|g: &Path<f64>| g.endpoint()[0], |_| 0.0, |g| HVec::basis(g.dim(), 0))
            .with_adjoint_regular(false);
        let g = start(&sp, grid, 0.0, &[0.0]);
        let u = ControlSignal::constant(grid, 0, 1).unwrap();
        assert!(matches!(ito_residual(&phi, &c, &g, &u, 0, 4), Err(Error::Hypothesis(_))));
    }

    #[test]
    fn cylinder_derivatives_validate() {
        let sp = space(&[-0.5, 0.0]);
        let grid = TimeGrid::new(1.0, 1.0 / 64.0).unwrap();
        let phi = Cylinder::new(
            vec![0.3, 2.0],
            |s: f64, x: &[HVec<f64>]| s.sin() * x[0].dot(&x[1]) + x[1].norm_sq(),
            |s, x| s.cos() * x[0].dot(&x[1]),
            |s, x| vec![x[1].scale(s.sin()), x[0].scale(s.sin()).axpy(2.0, &x[1])],
        );
        let mut rng = rng_from_seed(1);
        let paths: Vec<_> = (0..20)
            .map(|_| {
                let k = sampling::random_index(&mut rng, 1, 60);
                sampling::random_path(&mut rng, &sp, grid, k).unwrap()
            })
            .collect();
        let chk = validate_test_functional(&phi, &paths, 1e-3).unwrap();
        assert!(chk.passed, "{chk:?}");
        assert!(chk.max_dx_error <= 1e-5);
    }

    #[test]
    fn kink_detection() {
        let sp = space(&[0.0]);
        let grid = TimeGrid::new(1.0, 0.25).unwrap();
        let v = |g: &Path<f64>| (g.endpoint().norm() - (1.0 - g.horizon())).max(0.0);
        assert_eq!(detect_kink(&v, &start(&sp, grid, 0.5, &[0.5]), 1e-3).unwrap(), Some(0));
        assert_eq!(detect_kink(&v, &start(&sp, grid, 0.5, &[0.9]), 1e-3).unwrap(), None);
    }

    #[test]
    fn upsilon_margin_cases() {
        let grid = TimeGrid::new(1.0, 1.0 / 32.0).unwrap();
        let sp0 = space(&[0.0]);
        let c = library::feedback(sp0.clone()).unwrap();
        let g = start(&sp0, grid, 0.0, &[0.4]);
        let eta = start(&sp0, grid, 0.0, &[-0.2]);
        let u = ControlSignal::constant(grid, 0, 2).unwrap();
        let m = upsilon_inequality_check(&c, &g, &eta, &u, 32, GaugeParams::new(2.0)).unwrap();
        assert!(m.margin.abs() < 0.05, "{m:?}");

        let sp1 = space(&[-1.0]);
        let c1 = library::feedback(sp1.clone()).unwrap();
        let g1 = start(&sp1, grid, 0.0, &[0.8]);
        let zero = start(&sp1, grid, 0.0, &[0.0]);
        let m1 = upsilon_inequality_check(&c1, &g1, &zero, &u, 32, GaugeParams::new(2.0)).unwrap();
        assert!(m1.margin > 0.1, "{m1:?}");

        let still = Coefficients::new("zero", sp1.clone(), vec![HVec::zeros(1)], 1.0).unwrap();
        let u0 = ControlSignal::constant(grid, 0, 0).unwrap();
        let m2 = upsilon_inequality_check(&still, &g1, &g1, &u0, 32, GaugeParams::new(2.0)).unwrap();
        assert!(m2.lhs.abs() < 1e-20 && m2.rhs.abs() < 1e-20);
        assert!(upsilon_inequality_check(&still, &g1, &g1, &u0, 32, GaugeParams::new(1.0)).is_err());
    }

    fn eikonal_tangent(t0: f64, x0: f64, sub: bool) -> FnFunctional<f64> {
        let sgn = x0.signum();
        let k = if sub { 1.0 } else { -1.0 };
        FnFunctional::new(
            move |g: &Path<f64>| {
                let (s, x) = (g.horizon(), g.endpoint()[0]);
                sgn * x - (1.0 - s) + k * ((x - x0).powi(2) + (s - t0).powi(2))
            },
            move |g| 1.0 + k * 2.0 * (g.horizon() - t0),
            move |g| HVec::new(vec![sgn + k * 2.0 * (g.endpoint()[0] - x0)]),
        )
    }

    #[test]
    fn eikonal_value_is_viscosity_solution_at_smooth_point() {
        let sp = space(&[0.0]);
        let grid = TimeGrid::new(1.0, 0.125).unwrap();
        let c = library::eikonal(sp.clone()).unwrap();
        let opts = DppOptions::quantized(1e-9);
        let w = move |g: &Path<f64>| value_dpp(&library::eikonal(g.space().clone()).unwrap(), g, &opts).unwrap();
        let point = start(&sp, grid, 0.25, &[1.5]);
        let net = touching_net(&c, &point, 2, 0.1, 2).unwrap();
        let sub = eikonal_tangent(0.25, 1.5, true);
        let r = viscosity_check(&c, &w, &sub, &GaugePack::zero(), &point, &net, Side::Sub, 1e-3).unwrap();
        assert!(r.passed && r.margin.abs() < 1e-12, "{r:?}");
        let sup = FnFunctional::new(
            {
                let p = eikonal_tangent(0.25, 1.5, false);
                move |g: &Path<f64>| -p.eval(g)
            },
            {
                let p = eikonal_tangent(0.25, 1.5, false);
                move |g: &Path<f64>| -p.time_derivative(g)
            },
            {
                let p = eikonal_tangent(0.25, 1.5, false);
                move |g: &Path<f64>| -&p.space_derivative(g)
            },
        );
        let r = viscosity_check(&c, &w, &sup, &GaugePack::zero(), &point, &net, Side::Super, 1e-3).unwrap();
        assert!(r.passed && r.margin.abs() < 1e-12, "{r:?}");

        // the premise is enforced: a tangent with the wrong curvature fails
        let wrong = eikonal_tangent(0.25, 1.5, false);
        assert!(matches!(
            viscosity_check(&c, &w, &wrong, &GaugePack::zero(), &point, &net, Side::Sub, 1e-3),
            Err(Error::PremiseViolated { .. })
        ));
    }

    #[test]
    fn gauge_pack_derivatives() {
        let sp = space(&[0.0]);
        let grid = TimeGrid::new(1.0, 1.0 / 16.0).unwrap();
        let mut rng = rng_from_seed(12);
        let a1 = sampling::random_path(&mut rng, &sp, grid, 2).unwrap();
        let a2 = sampling::random_path(&mut rng, &sp, grid, 5).unwrap();
        let pack = GaugePack::with_bound(1.0)
            .with_outer(|s, y| (s * y + y * y, y, s + 2.0 * y))
            .with_anchor(a1, 0.5)
            .unwrap()
            .with_anchor(a2, 0.25)
            .unwrap();
        assert!(GaugePack::with_bound(0.5).with_anchor(pack.anchors()[0].0.clone(), 0.6).is_err());
        for _ in 0..10 {
            let g = sampling::random_path(&mut rng, &sp, grid, 8).unwrap();
            assert!(g.endpoint().norm() != g.sup_norm_before_endpoint());
            let f = |p: &Path<f64>| pack.eval(p).unwrap();
            let num = vertical_gradient(&f, &g, default_vertical_step(&g)).unwrap();
            let ana = pack.space_derivative(&g).unwrap();
            assert!((&num - &ana).norm() <= 1e-5 * ana.norm().max(1.0), "{num:?} {ana:?}");
            let d = g.step();
            let d1 = (f(&g.extend_flat_to(9).unwrap()) - f(&g)) / d;
            let d2 = (f(&g.extend_flat_to(10).unwrap()) - f(&g)) / (2.0 * d);
            assert!((2.0 * d1 - d2 - pack.time_derivative(&g).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn classical_transport_solution() {
        let sp = space(&[-1.0, -0.25]);
        let grid = TimeGrid::new(1.0, 0.125).unwrap();
        let cvec = HVec::new(vec![0.7, -1.3]);
        let c = Coefficients::new("transport", sp.clone(), vec![HVec::zeros(2)], 1.0)
            .unwrap()
            .with_terminal_cost({
                let cv = cvec.clone();
                move |g| cv.dot(g.endpoint())
            });
        let w = {
            let (c1, c2, c3) = (cvec.clone(), cvec.clone(), cvec.clone());
            FnFunctional::new(
                move |g: &Path<f64>| {
                    c1.dot(&g.space().semigroup_apply(1.0 - g.horizon(), g.endpoint()).unwrap())
                },
                move |g| {
                    let e = g.space().semigroup_apply(1.0 - g.horizon(), g.endpoint()).unwrap();
                    -c2.dot(&g.space().generator_apply(&e).unwrap())
                },
                move |g| g.space().semigroup_apply(1.0 - g.horizon(), &c3).unwrap(),
            )
        };
        let mut rng = rng_from_seed(4);
        let pts: Vec<_> = (0..=8).map(|k| sampling::random_path(&mut rng, &sp, grid, k).unwrap()).collect();
        let r = classical_check(&c, &w, &pts, 1e-9).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.max_residual <= 1e-9);
    }

    #[test]
    fn classical_flags_eikonal_kink() {
        let sp = space(&[0.0]);
        let grid = TimeGrid::new(1.0, 0.25).unwrap();
        let c = library::eikonal(sp.clone()).unwrap();
        let v = FnFunctional::new(
            |g: &Path<f64>| (g.endpoint().norm() - (1.0 - g.horizon())).max(0.0),
            |g| if g.endpoint().norm() > 1.0 - g.horizon() { 1.0 } else { 0.0 },
            |g| {
                let x = g.endpoint()[0];
                HVec::new(vec![if x.abs() > 1.0 - g.horizon() { x.signum() } else { 0.0 }])
            },
        );
        let r = classical_check(&c, &v, &[start(&sp, grid, 0.5, &[0.5]), start(&sp, grid, 0.5, &[2.0])], 1e-9).unwrap();
        assert_eq!(r.kinks, vec![0]);
        assert!(!r.passed);
        assert_eq!(r.residuals[1], 0.0);
    }

    #[test]
    fn stability_exact_shifts() {
        let sp = space(&[0.0]);
        let grid = TimeGrid::new(1.0, 0.25).unwrap();
        let c = library::eikonal(sp.clone()).unwrap();
        let tests = vec![start(&sp, grid, 0.0, &[0.5]), start(&sp, grid, 0.5, &[1.2])];
        let opts = DppOptions::brute_force();
        let mut rng = rng_from_seed(1);
        let eps = [0.1, 0.05, 0.025];
        let t = stability_experiment(&c, &Perturbation::Terminal, &eps, &tests, &opts, 200, &mut rng).unwrap();
        assert!(t.passed);
        for r in &t.rows {
            assert!((r.gap.unwrap() - r.eps).abs() <= 1e-9);
        }
        let q = stability_experiment(&c, &Perturbation::Running, &eps, &tests, &opts, 200, &mut rng).unwrap();
        assert!(q.passed);
        for r in &q.rows {
            assert!((r.gap.unwrap() - r.eps).abs() <= 1e-9);
        }
        let d = stability_experiment(&c, &Perturbation::Drift(HVec::basis(1, 0)), &eps, &tests, &opts, 200, &mut rng)
            .unwrap();
        assert!(d.passed, "{d:?}");
    }
}
