//! Scenario files: parsing, overrides and validation into a runnable plan.

use std::sync::Arc;

use phjb_core::control_value::{DppOptions, MemoPolicy};
use phjb_core::dynamics::Picard;
use phjb_core::library;
use phjb_core::{Coefficients, HVec, Path, SpectralSpace, TimeGrid};
use serde::{Deserialize, Serialize};

use crate::decimal::Decimal;
use crate::error::CliError;

/// Largest exhaustive net a `bp_search` check may request.
pub const NET_LIMIT: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub space: SpaceSpec,
    pub grid: GridSpec,
    pub coefficients: CoefficientSpec,
    pub initial_path: PathSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dpp: DppSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSpec {
    pub dim: usize,
    pub eigenvalues: Vec<Decimal>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub final_time: Decimal,
    pub step: Decimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSpec {
    pub name: String,
    /// Overrides the library's declared Lipschitz constant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<Decimal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift_bound: Option<Decimal>,
}

/// Either a constant path `{"time", "point"}` or explicit grid samples
/// `{"samples"}` from time 0 to the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<Decimal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<Vec<Decimal>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<Vec<Decimal>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PicardSpec {
    #[default]
    Single,
    Converged,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DppSpec {
    /// Memo key quantum; absent means a full tree walk.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memo_quantum: Option<Decimal>,
    #[serde(default)]
    pub picard: PicardSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub value: Decimal,
    pub dpp: Decimal,
    pub viscosity: Decimal,
    pub classical: Decimal,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { value: Decimal(1e-9), dpp: Decimal(1e-9), viscosity: Decimal(1e-3), classical: Decimal(1e-6) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItoFunctional {
    /// `|γ(s)|²`.
    Square,
    /// `(1, γ(s))`.
    Linear,
    /// `(γ(r∧s), γ(s))` with `r` the check's `lag`.
    LaggedProduct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationSpec {
    Terminal,
    Running,
    Drift,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Value,
    NegValue,
}

fn d(x: f64) -> Decimal {
    Decimal(x)
}

fn trials_default() -> usize {
    200
}

fn few() -> usize {
    20
}

fn two() -> usize {
    2
}

fn four() -> usize {
    4
}

fn min_order_default() -> Decimal {
    d(0.9)
}

fn curvature_default() -> Decimal {
    d(4.0)
}

fn radius_default() -> Decimal {
    d(0.1)
}

fn m_default() -> Decimal {
    d(2.0)
}

fn c0_default() -> Decimal {
    d(2.0)
}

fn epsilons_default() -> Vec<Decimal> {
    vec![d(0.1), d(0.05), d(0.025)]
}

fn levels_default() -> Vec<Decimal> {
    vec![d(-1.0), d(0.0), d(1.0)]
}

fn horizons_default() -> Vec<usize> {
    vec![0, 1, 2]
}

fn eps_default() -> Decimal {
    d(0.1)
}

fn lag_default() -> Decimal {
    d(0.5)
}

fn zero() -> Decimal {
    d(0.0)
}

fn hundred() -> usize {
    100
}

fn six() -> usize {
    6
}

fn value_objective() -> Objective {
    Objective::Value
}

/// One verification step. Omitted fields take the defaults listed in the
/// schema document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Check {
    Hypothesis {
        #[serde(default = "trials_default")]
        trials: usize,
    },
    StateEstimates {
        #[serde(default = "few")]
        trials: usize,
    },
    Statistic {
        #[serde(default = "few")]
        trials: usize,
    },
    Value {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        expected: Option<Decimal>,
    },
    DppConsistency {},
    Regularity {
        #[serde(default = "few")]
        trials: usize,
        #[serde(default = "two")]
        refinements: usize,
    },
    Ito {
        functional: ItoFunctional,
        #[serde(default = "lag_default")]
        lag: Decimal,
        #[serde(default = "four")]
        refinements: usize,
        #[serde(default = "min_order_default")]
        min_order: Decimal,
        /// Control labels on the intervals after the initial horizon;
        /// constant label 0 when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        labels: Option<Vec<usize>>,
        /// Require a residual of at most 10⁻¹² at every level instead of a
        /// convergence order.
        #[serde(default)]
        exact: bool,
    },
    Upsilon {
        #[serde(default = "hundred")]
        instances: usize,
        #[serde(default = "m_default")]
        m: Decimal,
        #[serde(default = "c0_default")]
        c0: Decimal,
    },
    Viscosity {
        /// Touching points; the initial path when empty.
        #[serde(default)]
        points: Vec<PathSpec>,
        #[serde(default = "curvature_default")]
        curvature: Decimal,
        /// Tests `V + shift·(T − t)` instead of `V`.
        #[serde(default = "zero")]
        shift: Decimal,
        #[serde(default = "two")]
        depth: usize,
        #[serde(default = "radius_default")]
        radius: Decimal,
        #[serde(default = "two")]
        bumps: usize,
    },
    Classical {
        #[serde(default)]
        points: Vec<PathSpec>,
    },
    Stability {
        perturbation: PerturbationSpec,
        #[serde(default = "epsilons_default")]
        epsilons: Vec<Decimal>,
        /// Drift direction; `e₁` when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        direction: Option<Vec<Decimal>>,
        #[serde(default = "six")]
        test_paths: usize,
        #[serde(default = "trials_default")]
        hypothesis_trials: usize,
    },
    BpSearch {
        #[serde(default = "levels_default")]
        levels: Vec<Decimal>,
        #[serde(default = "horizons_default")]
        horizons: Vec<usize>,
        #[serde(default = "eps_default")]
        eps: Decimal,
        #[serde(default = "four")]
        starts: usize,
        #[serde(default = "value_objective")]
        objective: Objective,
    },
}

/// Check families selectable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    Value,
    Ito,
    Viscosity,
    Classical,
    Stability,
    BpSearch,
}

impl Check {
    pub fn name(&self) -> &'static str {
        match self {
            Check::Hypothesis { .. } => "hypothesis",
            Check::StateEstimates { .. } => "state_estimates",
            Check::Statistic { .. } => "statistic",
            Check::Value { .. } => "value",
            Check::DppConsistency {} => "dpp_consistency",
            Check::Regularity { .. } => "regularity",
            Check::Ito { .. } => "ito",
            Check::Upsilon { .. } => "upsilon",
            Check::Viscosity { .. } => "viscosity",
            Check::Classical { .. } => "classical",
            Check::Stability { .. } => "stability",
            Check::BpSearch { .. } => "bp_search",
        }
    }

    pub fn kind(&self) -> Option<CheckKind> {
        match self {
            Check::Value { .. } => Some(CheckKind::Value),
            Check::Ito { .. } => Some(CheckKind::Ito),
            Check::Viscosity { .. } => Some(CheckKind::Viscosity),
            Check::Classical { .. } => Some(CheckKind::Classical),
            Check::Stability { .. } => Some(CheckKind::Stability),
            Check::BpSearch { .. } => Some(CheckKind::BpSearch),
            _ => None,
        }
    }

    /// The check a subcommand runs when the scenario lists none of its kind.
    pub fn default_for(kind: CheckKind) -> Check {
        let json = match kind {
            CheckKind::Value => r#"{"kind": "value"}"#,
            CheckKind::Ito => r#"{"kind": "ito", "functional": "square"}"#,
            CheckKind::Viscosity => r#"{"kind": "viscosity"}"#,
            CheckKind::Classical => r#"{"kind": "classical"}"#,
            CheckKind::Stability => r#"{"kind": "stability", "perturbation": "terminal"}"#,
            CheckKind::BpSearch => r#"{"kind": "bp_search"}"#,
        };
        serde_json::from_str(json).expect("default checks are well formed")
    }
}

/// Command-line adjustments applied before validation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub step: Option<Decimal>,
    pub seed: Option<u64>,
    pub only: Option<CheckKind>,
}

impl Scenario {
    /// Parses a scenario, reporting the JSON path of the first offending
    /// field.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            CliError::Parse { field, message: e.into_inner().to_string() }
        })
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(step) = o.step {
            self.grid.step = step;
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(kind) = o.only {
            let kept: Vec<Check> = self.checks.iter().filter(|c| c.kind() == Some(kind)).cloned().collect();
            self.checks = if kept.is_empty() { vec![Check::default_for(kind)] } else { kept };
        }
    }

    /// Resolves the scenario against the coefficient library.
    pub fn validate(&self) -> Result<Plan, CliError> {
        if self.space.dim == 0 || self.space.dim > 3 {
            return Err(CliError::validation("space.dim", format!("{} modes requested; supported range is 1..=3", self.space.dim)));
        }
        if self.space.eigenvalues.len() != self.space.dim {
            return Err(CliError::validation(
                "space.eigenvalues",
                format!("{} eigenvalues for dimension {}", self.space.eigenvalues.len(), self.space.dim),
            ));
        }
        let eig = self.space.eigenvalues.iter().map(|x| x.get()).collect();
        let space = Arc::new(SpectralSpace::new(eig).map_err(|e| CliError::validation("space.eigenvalues", e))?);
        let grid = TimeGrid::new(self.grid.final_time.get(), self.grid.step.get()).map_err(|e| CliError::validation("grid", e))?;

        let mut coefficients =
            library::by_name(&self.coefficients.name, space.clone()).map_err(|e| CliError::validation("coefficients.name", e))?;
        if let Some(l) = self.coefficients.lipschitz {
            if !(l.get() > 0.0) {
                return Err(CliError::validation("coefficients.lipschitz", "must be positive"));
            }
            coefficients = coefficients.with_lipschitz(l.get());
        }
        if let Some(b) = self.coefficients.drift_bound {
            if !(b.get() > 0.0) {
                return Err(CliError::validation("coefficients.drift_bound", "must be positive"));
            }
            coefficients = coefficients.with_drift_bound(b.get());
        }

        let initial = resolve_path(&self.initial_path, &space, grid, "initial_path")?;
        let memo = match self.dpp.memo_quantum {
            None => MemoPolicy::Off,
            Some(q) if q.get() >= 0.0 => MemoPolicy::Quantized(q.get()),
            Some(_) => return Err(CliError::validation("dpp.memo_quantum", "must be nonnegative")),
        };
        let picard = match self.dpp.picard {
            PicardSpec::Single => Picard::Single,
            PicardSpec::Converged => Picard::converged(),
        };
        let dpp = DppOptions { memo, picard, ..DppOptions::default() };
        let tol = &self.tolerances;
        for (field, x) in
            [("value", tol.value), ("dpp", tol.dpp), ("viscosity", tol.viscosity), ("classical", tol.classical)]
        {
            if !(x.get() >= 0.0) {
                return Err(CliError::validation(format!("tolerances.{field}"), "must be nonnegative"));
            }
        }

        let mut checks = Vec::with_capacity(self.checks.len());
        for (i, check) in self.checks.iter().enumerate() {
            checks.push(resolve_check(check, i, &space, grid, &coefficients, &initial, &dpp)?);
        }
        Ok(Plan { space, grid, coefficients, initial, dpp, tolerances: tol.clone(), seed: self.seed, checks })
    }
}

fn leaves(c: &Coefficients<f64>, remaining: usize) -> f64 {
    (c.controls().len() as f64).powi(remaining as i32)
}

/// Refuses paths whose full tree walk would exceed the leaf budget.
fn require_budget(
    c: &Coefficients<f64>,
    dpp: &DppOptions<f64>,
    g: &Path<f64>,
    field: &str,
) -> Result<(), CliError> {
    if matches!(dpp.memo, MemoPolicy::Off) {
        let n = leaves(c, g.grid().steps() - g.horizon_index());
        if n > dpp.leaf_budget {
            return Err(CliError::validation(
                field,
                format!("a full tree walk visits {n:e} leaves (budget {:e}); set dpp.memo_quantum", dpp.leaf_budget),
            ));
        }
    }
    Ok(())
}

fn resolve_path(
    spec: &PathSpec,
    space: &Arc<SpectralSpace<f64>>,
    grid: TimeGrid<f64>,
    field: &str,
) -> Result<Path<f64>, CliError> {
    let vector = |xs: &[Decimal], at: String| -> Result<HVec<f64>, CliError> {
        if xs.len() != space.dim() {
            return Err(CliError::validation(at, format!("{} coordinates for dimension {}", xs.len(), space.dim())));
        }
        Ok(HVec::new(xs.iter().map(|x| x.get()).collect()))
    };
    match (&spec.time, &spec.point, &spec.samples) {
        (Some(t), Some(x), None) => {
            grid.index_of(t.get()).map_err(|e| CliError::validation(format!("{field}.time"), e))?;
            let x = vector(x, format!("{field}.point"))?;
            Path::constant(space.clone(), grid, t.get(), x).map_err(|e| CliError::validation(field, e))
        }
        (None, None, Some(samples)) => {
            if samples.is_empty() || samples.len() > grid.steps() + 1 {
                return Err(CliError::validation(
                    format!("{field}.samples"),
                    format!("{} samples; a path on this grid has 1..={}", samples.len(), grid.steps() + 1),
                ));
            }
            let xs = samples
                .iter()
                .enumerate()
                .map(|(i, s)| vector(s, format!("{field}.samples[{i}]")))
                .collect::<Result<_, _>>()?;
            Path::new(space.clone(), grid, xs).map_err(|e| CliError::validation(field, e))
        }
        _ => Err(CliError::validation(field, "give either `time` and `point`, or `samples`")),
    }
}

/// A check with its paths resolved.
#[derive(Debug, Clone)]
pub struct PlannedCheck {
    pub spec: Check,
    pub points: Vec<Path<f64>>,
}

#[derive(Debug, Clone)]
pub struct Plan {
    pub space: Arc<SpectralSpace<f64>>,
    pub grid: TimeGrid<f64>,
    pub coefficients: Coefficients<f64>,
    pub initial: Path<f64>,
    pub dpp: DppOptions<f64>,
    pub tolerances: Tolerances,
    pub seed: u64,
    pub checks: Vec<PlannedCheck>,
}

fn resolve_check(
    check: &Check,
    i: usize,
    space: &Arc<SpectralSpace<f64>>,
    grid: TimeGrid<f64>,
    c: &Coefficients<f64>,
    initial: &Path<f64>,
    dpp: &DppOptions<f64>,
) -> Result<PlannedCheck, CliError> {
    let at = |f: &str| if f.is_empty() { format!("checks[{i}]") } else { format!("checks[{i}].{f}") };
    let v = |f: &str, m: String| CliError::validation(at(f), m);
    let positive = |f: &str, n: usize| if n == 0 { Err(v(f, "must be positive".into())) } else { Ok(()) };
    let resolve_points = |pts: &[PathSpec]| -> Result<Vec<Path<f64>>, CliError> {
        if pts.is_empty() {
            return Ok(vec![initial.clone()]);
        }
        pts.iter().enumerate().map(|(k, p)| resolve_path(p, space, grid, &at(&format!("points[{k}]")))).collect()
    };
    let mut points = Vec::new();
    match check {
        Check::Hypothesis { trials } | Check::Statistic { trials } => positive("trials", *trials)?,
        Check::StateEstimates { trials } => {
            positive("trials", *trials)?;
            if grid.steps() < 2 {
                return Err(v("", "state estimates need at least two grid steps".into()));
            }
        }
        Check::Value { .. } | Check::DppConsistency {} => require_budget(c, dpp, initial, &at(""))?,
        Check::Regularity { trials, .. } => positive("trials", *trials)?,
        Check::Ito { lag, refinements, min_order, labels, .. } => {
            if *refinements == 0 || *refinements > 8 {
                return Err(v("refinements", format!("{refinements} requested; supported range is 1..=8")));
            }
            if !(lag.get() >= 0.0) {
                return Err(v("lag", "must be nonnegative".into()));
            }
            if !min_order.get().is_finite() {
                return Err(v("min_order", "must be finite".into()));
            }
            if initial.is_terminal() {
                return Err(v("", "the initial path leaves no interval to integrate over".into()));
            }
            if let Some(l) = labels {
                let need = grid.steps() - initial.horizon_index();
                if l.len() != need {
                    return Err(v("labels", format!("{} labels for {need} remaining intervals", l.len())));
                }
                if let Some(bad) = l.iter().find(|&&x| x >= c.controls().len()) {
                    return Err(v("labels", format!("label {bad} but only {} controls", c.controls().len())));
                }
            }
        }
        Check::Upsilon { instances, m, c0 } => {
            positive("instances", *instances)?;
            if !(m.get() >= 2.0) {
                return Err(v("m", format!("M = {m} must be at least 2")));
            }
            if !(c0.get() >= 0.0) {
                return Err(v("c0", "must be nonnegative".into()));
            }
        }
        Check::Viscosity { points: pts, curvature, radius, bumps, depth, .. } => {
            points = resolve_points(pts)?;
            if !(curvature.get() > 0.0) {
                return Err(v("curvature", "must be positive".into()));
            }
            if !(radius.get() > 0.0) || *bumps == 0 {
                return Err(v("radius", "radius and bumps must be positive".into()));
            }
            if *depth > 4 {
                return Err(v("depth", format!("{depth} requested; at most 4")));
            }
            for (k, p) in points.iter().enumerate() {
                if p.is_terminal() {
                    return Err(v(&format!("points[{k}]"), "viscosity points must precede the final time".into()));
                }
                require_budget(c, dpp, p, &at(&format!("points[{k}]")))?;
            }
        }
        Check::Classical { points: pts } => {
            points = resolve_points(pts)?;
            for (k, p) in points.iter().enumerate() {
                require_budget(c, dpp, p, &at(&format!("points[{k}]")))?;
            }
        }
        Check::Stability { perturbation, epsilons, direction, test_paths, .. } => {
            positive("test_paths", *test_paths)?;
            if epsilons.is_empty() || epsilons.iter().any(|e| !(e.get() != 0.0)) {
                return Err(v("epsilons", "need at least one nonzero epsilon".into()));
            }
            if let Some(dir) = direction {
                if *perturbation != PerturbationSpec::Drift {
                    return Err(v("direction", "only drift perturbations take a direction".into()));
                }
                if dir.len() != space.dim() {
                    return Err(v("direction", format!("{} coordinates for dimension {}", dir.len(), space.dim())));
                }
            }
            let from_start = Path::constant(space.clone(), grid, 0.0, HVec::zeros(space.dim()))
                .map_err(|e| v("", e.to_string()))?;
            require_budget(c, dpp, &from_start, &at(""))?;
        }
        Check::BpSearch { levels, horizons, eps, starts, .. } => {
            positive("starts", *starts)?;
            if levels.is_empty() {
                return Err(v("levels", "need at least one level".into()));
            }
            if horizons.is_empty() || horizons.iter().any(|&h| h > grid.steps()) {
                return Err(v("horizons", format!("horizon indices must lie in 0..={}", grid.steps())));
            }
            if !(eps.get() > 0.0) {
                return Err(v("eps", "must be positive".into()));
            }
            let per = (levels.len() as f64).powi(space.dim() as i32);
            let size: f64 = horizons.iter().map(|&h| per.powi(h as i32 + 1)).sum();
            if size > NET_LIMIT as f64 {
                return Err(v("levels", format!("net of {size} paths exceeds the limit {NET_LIMIT}")));
            }
            let earliest = *horizons.iter().min().expect("nonempty");
            let probe = Path::constant(space.clone(), grid, grid.time(earliest), HVec::zeros(space.dim()))
                .map_err(|e| v("", e.to_string()))?;
            require_budget(c, dpp, &probe, &at(""))?;
        }
    }
    Ok(PlannedCheck { spec: check.clone(), points })
}
