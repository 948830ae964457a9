//! Controlled path-dependent evolution `Ẋ = AX + F(X_s, u)` in mild form,
//! integrated with an exponential trapezoid scheme, and the empirical
//! verifiers for the hypothesis constants and trajectory estimates.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::hilbert::{HVec, SpectralSpace};
use crate::path::{metric_d_infty, Path, TimeGrid};
use crate::sampling::{self, Rng};
use crate::scalar::Scalar;

pub type DriftFn<T> = Arc<dyn Fn(&Path<T>, &HVec<T>) -> HVec<T> + Send + Sync>;
pub type RunningCostFn<T> = Arc<dyn Fn(&Path<T>, &HVec<T>) -> T + Send + Sync>;
pub type TerminalCostFn<T> = Arc<dyn Fn(&Path<T>) -> T + Send + Sync>;
/// Finite summary of a path prefix that determines the remaining problem.
pub type StatisticFn<T> = Arc<dyn Fn(&Path<T>) -> Vec<T> + Send + Sync>;

/// Problem data: drift `F`, running cost `q`, terminal cost `φ`, the finite
/// control set `U` and the declared constant `L`.
#[derive(Clone)]
pub struct Coefficients<T> {
    name: String,
    space: Arc<SpectralSpace<T>>,
    controls: Vec<HVec<T>>,
    drift: DriftFn<T>,
    running_cost: RunningCostFn<T>,
    terminal_cost: TerminalCostFn<T>,
    lipschitz: T,
    drift_bound: T,
    statistic: Option<StatisticFn<T>>,
}

impl<T: Scalar> fmt::Debug for Coefficients<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Coefficients")
            .field("name", &self.name)
            .field("dim", &self.space.dim())
            .field("controls", &self.controls)
            .field("lipschitz", &self.lipschitz)
            .field("statistic", &self.statistic.is_some())
            .finish()
    }
}

impl<T: Scalar> Coefficients<T> {
    /// Zero drift and costs; fill in with the `with_*` builders.
    pub fn new(
        name: impl Into<String>,
        space: Arc<SpectralSpace<T>>,
        controls: Vec<HVec<T>>,
        lipschitz: T,
    ) -> Result<Self> {
        if controls.is_empty() {
            return Err(Error::InvalidControl("control set must be nonempty".into()));
        }
        for u in &controls {
            if u.coords().is_empty() || !u.is_finite() {
                return Err(Error::InvalidControl("controls must be finite, nonempty vectors".into()));
            }
        }
        if !(lipschitz > T::zero()) || !lipschitz.is_finite() {
            return Err(Error::InvalidArgument(format!("Lipschitz constant {lipschitz} must be positive")));
        }
        let dim = space.dim();
        Ok(Self {
            name: name.into(),
            space,
            controls,
            drift: Arc::new(move |_, _| HVec::zeros(dim)),
            running_cost: Arc::new(|_, _| T::zero()),
            terminal_cost: Arc::new(|_| T::zero()),
            lipschitz,
            drift_bound: lipschitz,
            statistic: None,
        })
    }

    pub fn with_drift(mut self, f: impl Fn(&Path<T>, &HVec<T>) -> HVec<T> + Send + Sync + 'static) -> Self {
        self.drift = Arc::new(f);
        self
    }

    pub fn with_running_cost(mut self, q: impl Fn(&Path<T>, &HVec<T>) -> T + Send + Sync + 'static) -> Self {
        self.running_cost = Arc::new(q);
        self
    }

    pub fn with_terminal_cost(mut self, phi: impl Fn(&Path<T>) -> T + Send + Sync + 'static) -> Self {
        self.terminal_cost = Arc::new(phi);
        self
    }

    /// Declares a sufficient statistic used to collapse the control tree.
    pub fn with_statistic(mut self, s: impl Fn(&Path<T>) -> Vec<T> + Send + Sync + 'static) -> Self {
        self.statistic = Some(Arc::new(s));
        self
    }

    pub fn with_drift_bound(mut self, b: T) -> Self {
        self.drift_bound = b;
        self
    }

    pub fn with_lipschitz(mut self, l: T) -> Self {
        self.lipschitz = l;
        self
    }

    pub fn with_controls(mut self, controls: Vec<HVec<T>>) -> Self {
        self.controls = controls;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn space(&self) -> &Arc<SpectralSpace<T>> {
        &self.space
    }

    pub fn controls(&self) -> &[HVec<T>] {
        &self.controls
    }

    pub fn lipschitz(&self) -> T {
        self.lipschitz
    }

    pub fn drift_bound(&self) -> T {
        self.drift_bound
    }

    pub fn statistic(&self) -> Option<&StatisticFn<T>> {
        self.statistic.as_ref()
    }

    pub fn drift(&self, g: &Path<T>, u: &HVec<T>) -> HVec<T> {
        (self.drift)(g, u)
    }

    pub fn running_cost(&self, g: &Path<T>, u: &HVec<T>) -> T {
        (self.running_cost)(g, u)
    }

    pub fn terminal_cost(&self, g: &Path<T>) -> T {
        (self.terminal_cost)(g)
    }

    /// `φ + ε`.
    pub fn shifted_terminal(&self, eps: T) -> Self {
        let base = self.terminal_cost.clone();
        let mut out = self.clone().with_terminal_cost(move |g| base(g) + eps);
        out.lipschitz = self.lipschitz + eps.abs();
        out.name = format!("{}+phi[{eps}]", self.name);
        out
    }

    /// `q + ε`.
    pub fn shifted_running(&self, eps: T) -> Self {
        let base = self.running_cost.clone();
        let mut out = self.clone().with_running_cost(move |g, u| base(g, u) + eps);
        out.lipschitz = self.lipschitz + eps.abs();
        out.name = format!("{}+q[{eps}]", self.name);
        out
    }

    /// `F + ε·direction`.
    pub fn shifted_drift(&self, eps: T, direction: HVec<T>) -> Self {
        let base = self.drift.clone();
        let shift = direction.scale(eps);
        let bump = shift.norm();
        let mut out = self.clone().with_drift(move |g, u| &base(g, u) + &shift);
        out.lipschitz = self.lipschitz + bump;
        out.drift_bound = self.drift_bound + bump;
        out.name = format!("{}+F[{eps}]", self.name);
        out
    }
}

/// Piecewise-constant control on `[t_start, T]`: one label (index into the
/// control set) per grid interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSignal<T> {
    grid: TimeGrid<T>,
    start: usize,
    labels: Vec<usize>,
}

impl<T: Scalar> ControlSignal<T> {
    pub fn new(grid: TimeGrid<T>, start: usize, labels: Vec<usize>) -> Result<Self> {
        if start > grid.steps() || labels.len() != grid.steps() - start {
            return Err(Error::InvalidControl(format!(
                "{} labels cannot cover intervals {}..{}",
                labels.len(),
                start,
                grid.steps()
            )));
        }
        Ok(Self { grid, start, labels })
    }

    pub fn constant(grid: TimeGrid<T>, start: usize, label: usize) -> Result<Self> {
        Self::new(grid, start, vec![label; grid.steps().saturating_sub(start)])
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Label on the interval `[t_k, t_{k+1})`.
    pub fn label_at(&self, k: usize) -> usize {
        self.labels[k - self.start]
    }

    /// The same control restricted to `[t_index, T]`.
    pub fn restricted(&self, index: usize) -> Result<Self> {
        if index < self.start || index > self.grid.steps() {
            return Err(Error::InvalidControl("restriction outside the control horizon".into()));
        }
        Ok(Self { grid: self.grid, start: index, labels: self.labels[index - self.start..].to_vec() })
    }

    /// Each label repeated `factor` times on the refined grid.
    pub fn refined(&self, factor: usize) -> Self {
        let factor = factor.max(1);
        Self {
            grid: self.grid.refined(factor),
            start: self.start * factor,
            labels: self.labels.iter().flat_map(|&l| std::iter::repeat_n(l, factor)).collect(),
        }
    }

    fn check(&self, c: &Coefficients<T>, g: &Path<T>) -> Result<()> {
        if self.grid != *g.grid() {
            return Err(Error::GridMismatch);
        }
        if self.start != g.horizon_index() {
            return Err(Error::InvalidControl(format!(
                "control starts at index {} but the path ends at index {}",
                self.start,
                g.horizon_index()
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= c.controls().len()) {
            return Err(Error::InvalidControl(format!("label {bad} outside the control set")));
        }
        Ok(())
    }
}

/// How many Picard sweeps the trapezoid corrector performs per step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Picard {
    /// Predictor plus one corrector evaluation.
    #[default]
    Single,
    /// Corrector iterated until the update falls below `tol` (relative).
    Converged { tol: f64, max_iter: usize },
}

impl Picard {
    pub fn converged() -> Self {
        Picard::Converged { tol: 1e-10, max_iter: 100 }
    }
}

fn finite_or_err<T: Scalar>(v: &HVec<T>, context: &str, time: T) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { context: context.into(), time: time.as_f64() })
    }
}

/// Advances `path` by one grid step under control `u`:
/// `X⁺ = e^{ΔtA}X + ½Δt[e^{ΔtA}F(X, u) + F(X⁺_pred, u)]`.
pub(crate) fn step_state<T: Scalar>(c: &Coefficients<T>, path: &mut Path<T>, u: &HVec<T>, picard: Picard) -> Result<()> {
    let dt = path.step();
    let t = path.horizon();
    let space = c.space().clone();
    let x = path.endpoint().clone();
    let f0 = c.drift(path, u);
    finite_or_err(&f0, "drift", t)?;
    let ex = space.semigroup_apply(dt, &x)?;
    let ef0 = space.semigroup_apply(dt, &f0)?;
    let half = T::lit(0.5) * dt;

    path.push(ex.axpy(dt, &ef0));
    let mut f1 = c.drift(path, u);
    finite_or_err(&f1, "drift", t + dt)?;
    let mut next = ex.axpy(half, &(&ef0 + &f1));
    if let Picard::Converged { tol, max_iter } = picard {
        for _ in 0..max_iter {
            *path.endpoint_mut() = next.clone();
            f1 = c.drift(path, u);
            finite_or_err(&f1, "drift", t + dt)?;
            let candidate = ex.axpy(half, &(&ef0 + &f1));
            let delta = (&candidate - &next).norm();
            next = candidate;
            if delta <= T::lit(tol) * T::one().max(next.norm()) {
                break;
            }
        }
    }
    finite_or_err(&next, "state", t + dt)?;
    *path.endpoint_mut() = next;
    Ok(())
}

/// Advances one step and returns the trapezoid running cost of the step,
/// `½Δt[q(X_k, u) + q(X_{k+1}, u)]`.
pub(crate) fn advance<T: Scalar>(c: &Coefficients<T>, path: &mut Path<T>, u: &HVec<T>, picard: Picard) -> Result<T> {
    let q0 = c.running_cost(path, u);
    step_state(c, path, u, picard)?;
    let q1 = c.running_cost(path, u);
    let stage = T::lit(0.5) * path.step() * (q0 + q1);
    if !stage.is_finite() {
        return Err(Error::NonFinite { context: "running cost".into(), time: path.horizon().as_f64() });
    }
    Ok(stage)
}

/// Mild solution on `[t, T]` from the initial path `g` under control `u`.
pub fn mild_solve<T: Scalar>(c: &Coefficients<T>, g: &Path<T>, u: &ControlSignal<T>) -> Result<Path<T>> {
    mild_solve_with(c, g, u, Picard::Single)
}

pub fn mild_solve_with<T: Scalar>(
    c: &Coefficients<T>,
    g: &Path<T>,
    u: &ControlSignal<T>,
    picard: Picard,
) -> Result<Path<T>> {
    u.check(c, g)?;
    c.space().check_dim(g.endpoint())?;
    let mut x = g.clone();
    for k in g.horizon_index()..g.grid().steps() {
        step_state(c, &mut x, &c.controls()[u.label_at(k)], picard)?;
    }
    Ok(x)
}

/// Worst observed ratio for one inequality of the hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioLine<T> {
    pub name: &'static str,
    pub worst_ratio: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisReport<T> {
    pub lines: Vec<RatioLine<T>>,
    pub trials: usize,
    pub passed: bool,
}

impl<T: Scalar> HypothesisReport<T> {
    pub fn line(&self, name: &str) -> Option<&RatioLine<T>> {
        self.lines.iter().find(|l| l.name == name)
    }

    pub fn failing(&self) -> Vec<&'static str> {
        let cap = T::one() + T::lit(1e-9);
        self.lines.iter().filter(|l| !(l.worst_ratio <= cap)).map(|l| l.name).collect()
    }
}

pub const LINE_DRIFT_GROWTH: &str = "drift-growth";
pub const LINE_DRIFT_LIPSCHITZ: &str = "drift-lipschitz";
pub const LINE_COST_LIPSCHITZ: &str = "running-cost-lipschitz";
pub const LINE_COST_GROWTH: &str = "running-cost-growth";
pub const LINE_TERMINAL_LIPSCHITZ: &str = "terminal-lipschitz";
pub const LINE_TERMINAL_GROWTH: &str = "terminal-growth";

fn ratio<T: Scalar>(num: T, den: T) -> T {
    if num <= T::zero() {
        T::zero()
    } else if den <= T::zero() {
        T::infinity()
    } else {
        num / den
    }
}

/// A partner path for Lipschitz checks: nearby, rescaled, zero, extended or
/// independent, so both small and large separations are probed.
fn partner<T: Scalar>(rng: &mut Rng, g: &Path<T>, grid: TimeGrid<T>, allow_extension: bool) -> Result<Path<T>> {
    let space = g.space().clone();
    match sampling::random_index(rng, 0, 4) {
        0 => {
            let size = (rng_log(rng, 1e-4, 0.5)).exp();
            sampling::perturbed_path(rng, g, size)
        }
        1 => Ok(g.scale(sampling::uniform(rng, 0.0, 2.0))),
        2 => Path::constant(space.clone(), grid, g.horizon(), HVec::zeros(space.dim())),
        3 if allow_extension && g.horizon_index() < grid.steps() => {
            let k = sampling::random_index(rng, g.horizon_index(), grid.steps());
            let ext = g.extend_semigroup_to(k)?;
            let size = (rng_log(rng, 1e-4, 0.5)).exp();
            sampling::perturbed_path(rng, &ext, size)
        }
        _ => {
            let k = if allow_extension {
                sampling::random_index(rng, 0, grid.steps())
            } else {
                g.horizon_index()
            };
            sampling::random_path(rng, &space, grid, k)
        }
    }
}

fn rng_log(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    sampling::uniform::<f64>(rng, lo.ln(), hi.ln())
}

/// Samples random paths and controls and reports the worst ratio of each
/// inequality in the hypothesis to its declared bound (`L²(1+‖γ‖₀²)` etc.).
/// Fails when any ratio exceeds `1 + 10⁻⁹`.
pub fn validate_hypothesis<T: Scalar>(
    c: &Coefficients<T>,
    grid: TimeGrid<T>,
    trials: usize,
    rng: &mut Rng,
) -> Result<HypothesisReport<T>> {
    if trials == 0 {
        return Err(Error::InvalidArgument("at least one trial required".into()));
    }
    let l = c.lipschitz();
    let mut worst = [T::zero(); 6];
    let space = c.space().clone();
    for _ in 0..trials {
        let k = sampling::random_index(rng, 0, grid.steps());
        let g = sampling::random_path(rng, &space, grid, k)?;
        let h = partner(rng, &g, grid, true)?;
        let d = metric_d_infty(&g, &h)?;
        let gn = g.sup_norm();
        for u in c.controls() {
            let fg = c.drift(&g, u);
            let fh = c.drift(&h, u);
            worst[0] = worst[0].max(ratio(fg.norm_sq(), l * l * (T::one() + gn * gn)));
            worst[1] = worst[1].max(ratio((&fg - &fh).norm(), l * d));
            let qg = c.running_cost(&g, u);
            let qh = c.running_cost(&h, u);
            worst[2] = worst[2].max(ratio((qg - qh).abs(), l * d));
            worst[3] = worst[3].max(ratio(qg.abs(), l * (T::one() + gn)));
        }
        let z = sampling::random_path(rng, &space, grid, grid.steps())?;
        let z2 = partner(rng, &z, grid, false)?;
        let pz = c.terminal_cost(&z);
        let pz2 = c.terminal_cost(&z2);
        worst[4] = worst[4].max(ratio((pz - pz2).abs(), l * z.sub(&z2)?.sup_norm()));
        worst[5] = worst[5].max(ratio(pz.abs(), l * (T::one() + z.sup_norm())));
    }
    let names = [
        LINE_DRIFT_GROWTH,
        LINE_DRIFT_LIPSCHITZ,
        LINE_COST_LIPSCHITZ,
        LINE_COST_GROWTH,
        LINE_TERMINAL_LIPSCHITZ,
        LINE_TERMINAL_GROWTH,
    ];
    let lines: Vec<_> = names.iter().zip(worst).map(|(&name, worst_ratio)| RatioLine { name, worst_ratio }).collect();
    let mut report = HypothesisReport { lines, trials, passed: false };
    report.passed = report.failing().is_empty();
    Ok(report)
}

/// Smallest constants consistent with the sampled trajectories.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateConstants<T> {
    /// `‖X^γ_T − X^η_T‖₀ / ‖γ − η‖₀`.
    pub lipschitz: T,
    /// `‖X^γ_T‖₀ / (1 + ‖γ‖₀)`.
    pub growth: T,
    /// `|X(s) − e^{(s−t)A}γ(t)| / ((1 + ‖γ‖₀)|s − t|)`.
    pub speed: T,
    /// `‖X^η_T − X^{γ_{t,t̄,A}}_T‖₀ / ((1 + ‖η‖₀)(t̄ − t) + ‖η − γ‖₀)`.
    pub shift: T,
}

impl<T: Scalar> EstimateConstants<T> {
    fn zero() -> Self {
        Self { lipschitz: T::zero(), growth: T::zero(), speed: T::zero(), shift: T::zero() }
    }

    fn max(self, o: Self) -> Self {
        Self {
            lipschitz: self.lipschitz.max(o.lipschitz),
            growth: self.growth.max(o.growth),
            speed: self.speed.max(o.speed),
            shift: self.shift.max(o.shift),
        }
    }

    pub fn as_array(&self) -> [T; 4] {
        [self.lipschitz, self.growth, self.speed, self.shift]
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|c| c.is_finite())
    }
}

/// Relative agreement of two constants, with an absolute floor for
/// constants that vanish.
pub fn constants_agree<T: Scalar>(a: T, b: T, rel: f64) -> bool {
    (a - b).abs() <= T::lit(rel) * a.abs().max(b.abs()) + T::lit(1e-9)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateEstimateReport<T> {
    pub coarse: EstimateConstants<T>,
    pub refined: EstimateConstants<T>,
    /// `e^{L M₁ T}`.
    pub gronwall_bound: T,
    pub trials: usize,
    pub passed: bool,
}

struct EstimateInstance<T> {
    gamma: Path<T>,
    eta: Path<T>,
    control: ControlSignal<T>,
    shift_index: usize,
}

fn estimate_constants<T: Scalar>(c: &Coefficients<T>, inst: &[EstimateInstance<T>]) -> Result<EstimateConstants<T>> {
    let mut acc = EstimateConstants::zero();
    for e in inst {
        let (g, h, u) = (&e.gamma, &e.eta, &e.control);
        let t = g.horizon();
        let xg = mild_solve(c, g, u)?;
        let xh = mild_solve(c, h, u)?;
        let gn = g.sup_norm();
        let hn = h.sup_norm();
        let gap0 = g.sub(h)?.sup_norm();
        let mut k = EstimateConstants::zero();
        k.lipschitz = ratio(xg.sub(&xh)?.sup_norm(), gap0);
        k.growth = ratio(xg.sup_norm(), T::one() + gn);
        for i in g.horizon_index() + 1..=g.grid().steps() {
            let s = g.grid().time(i);
            let free = c.space().semigroup_apply(s - t, g.endpoint())?;
            k.speed = k.speed.max(ratio((&xg.samples()[i] - &free).norm(), (T::one() + gn) * (s - t)));
        }
        let shifted = g.extend_semigroup_to(e.shift_index)?;
        let xs = mild_solve(c, &shifted, &u.restricted(e.shift_index)?)?;
        let tbar = g.grid().time(e.shift_index);
        k.shift = ratio(xh.sub(&xs)?.sup_norm(), (T::one() + hn) * (tbar - t) + gap0);
        acc = acc.max(k);
    }
    Ok(acc)
}

/// Empirical constants of the trajectory estimates on the given grid and on
/// its 2× refinement (same sampled instances, resampled). Passes when every
/// constant is finite and the two grids agree to 10%.
pub fn verify_state_estimates<T: Scalar>(
    c: &Coefficients<T>,
    grid: TimeGrid<T>,
    trials: usize,
    rng: &mut Rng,
) -> Result<StateEstimateReport<T>> {
    if grid.steps() < 2 {
        return Err(Error::InvalidGrid("state estimates need at least two steps".into()));
    }
    let space = c.space().clone();
    let n_controls = c.controls().len();
    let mut coarse = Vec::with_capacity(trials);
    for _ in 0..trials {
        let k = sampling::random_index(rng, 0, grid.steps() - 1);
        let gamma = sampling::random_path(rng, &space, grid, k)?;
        let eta = partner(rng, &gamma, grid, false)?;
        let labels = sampling::random_labels(rng, n_controls, grid.steps() - k);
        let control = ControlSignal::new(grid, k, labels)?;
        let shift_index = sampling::random_index(rng, k + 1, grid.steps());
        coarse.push(EstimateInstance { gamma, eta, control, shift_index });
    }
    let fine: Vec<_> = coarse
        .iter()
        .map(|e| EstimateInstance {
            gamma: e.gamma.refined(2),
            eta: e.eta.refined(2),
            control: e.control.refined(2),
            shift_index: e.shift_index * 2,
        })
        .collect();
    let a = estimate_constants(c, &coarse)?;
    let b = estimate_constants(c, &fine)?;
    let stable = a.as_array().iter().zip(b.as_array()).all(|(&x, y)| constants_agree(x, y, 0.1));
    let gronwall_bound = (c.lipschitz() * c.space().semigroup_bound() * grid.final_time()).exp();
    Ok(StateEstimateReport {
        coarse: a,
        refined: b,
        gronwall_bound,
        trials,
        passed: a.is_finite() && b.is_finite() && stable,
    })
}
