//! Executes a validated plan and assembles the report.

use std::collections::HashMap;
use std::path::Path as FsPath;
use std::time::Instant;

use phjb_core::control_value::{
    solve_dpp, validate_statistic, value_dpp_in, verify_dpp_consistency, verify_value_regularity,
    ValueTable,
};
use phjb_core::dynamics::{validate_hypothesis, verify_state_estimates};
use phjb_core::ito_visc::{
    classical_check, convergence_order, ito_residual, stability_experiment, touching_net, upsilon_inequality_check,
    viscosity_check, Cylinder, FnFunctional, GaugePack, Perturbation, Side, TestFunctional,
};
use phjb_core::path::{default_vertical_step, vertical_gradient};
use phjb_core::sampling::{self, rng_from_seed, Rng};
use phjb_core::variational::{bp_search, exhaustive_net, verify_bp, BpOptions, UpsilonBar};
use phjb_core::{ControlSignal, GaugeParams, HVec, Path, PathFunctional};

use crate::error::CliError;
use crate::report::{CheckRecord, Report, Versions, WallClock};
use crate::scenario::{Check, ItoFunctional, Objective, Overrides, PerturbationSpec, Plan, PlannedCheck, Scenario, NET_LIMIT};

/// Residual ceiling for Itô checks flagged `exact`.
const EXACT_RESIDUAL: f64 = 1e-12;

type CheckResult = Result<(), String>;

fn msg<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Reads, validates and runs a scenario file.
pub fn run_scenario(path: &FsPath, overrides: &Overrides) -> Result<Report, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })?;
    run_text(&text, overrides)
}

pub fn run_text(text: &str, overrides: &Overrides) -> Result<Report, CliError> {
    let mut scenario = Scenario::from_json(text)?;
    scenario.apply(overrides);
    let plan = scenario.validate()?;
    let started_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
    let clock = Instant::now();
    let records = execute(&plan);
    let passed = records.iter().all(|r| r.passed);
    Ok(Report {
        scenario,
        records,
        passed,
        versions: Versions::default(),
        wall_clock: WallClock { started_at, elapsed_seconds: clock.elapsed().as_secs_f64() },
    })
}

/// Runs every planned check in order. Each check draws from its own
/// generator seeded with `seed + index`.
pub fn execute(plan: &Plan) -> Vec<CheckRecord> {
    plan.checks
        .iter()
        .enumerate()
        .map(|(i, pc)| {
            let mut rec = CheckRecord::new(i, pc.spec.name(), plan.grid.steps(), plan.grid.step());
            let mut rng = rng_from_seed(plan.seed.wrapping_add(i as u64));
            if let Err(m) = run_check(plan, pc, &mut rec, &mut rng) {
                rec.fail(m);
            }
            rec
        })
        .collect()
}

fn value_of(plan: &Plan, table: &ValueTable<f64>, g: &Path<f64>) -> Result<f64, String> {
    value_dpp_in(&plan.coefficients, g, &plan.dpp, table).map_err(msg)
}

fn run_check(plan: &Plan, pc: &PlannedCheck, rec: &mut CheckRecord, rng: &mut Rng) -> CheckResult {
    let c = &plan.coefficients;
    let grid = plan.grid;
    match &pc.spec {
        Check::Hypothesis { trials } => {
            let r = validate_hypothesis(c, grid, *trials, rng).map_err(msg)?;
            for line in &r.lines {
                rec.margin(line.name, line.worst_ratio, 1.0, line.worst_ratio <= 1.0 + 1e-9);
            }
            rec.constant("lipschitz", c.lipschitz());
        }
        Check::StateEstimates { trials } => {
            let r = verify_state_estimates(c, grid, *trials, rng).map_err(msg)?;
            for (tag, k) in [("coarse", r.coarse), ("refined", r.refined)] {
                rec.constant(format!("{tag}.lipschitz"), k.lipschitz);
                rec.constant(format!("{tag}.growth"), k.growth);
                rec.constant(format!("{tag}.speed"), k.speed);
                rec.constant(format!("{tag}.shift"), k.shift);
            }
            rec.margin("lipschitz vs gronwall bound", r.coarse.lipschitz, r.gronwall_bound, r.coarse.lipschitz <= r.gronwall_bound * (1.0 + 1e-9));
            if !r.passed {
                rec.fail("constants not stable under refinement");
            }
        }
        Check::Statistic { trials } => {
            let gap = validate_statistic(c, grid, *trials, rng).map_err(msg)?;
            let tol = plan.tolerances.dpp.get();
            rec.margin("memo vs tree walk", gap, tol, gap <= tol);
        }
        Check::Value { expected } => {
            let s = solve_dpp(c, &plan.initial, &plan.dpp).map_err(msg)?;
            rec.constant("value", s.value);
            rec.constant("table_entries", s.table_entries as f64);
            let labels: Vec<String> = (plan.initial.horizon_index()..grid.steps()).map(|k| s.control.label_at(k).to_string()).collect();
            rec.note(format!("optimal labels [{}]", labels.join(", ")));
            if let Some(e) = expected {
                let tol = plan.tolerances.value.get();
                let gap = (s.value - e.get()).abs();
                rec.margin("value vs expected", gap, tol, gap <= tol);
            } else {
                rec.margin("value finite", s.value, f64::INFINITY, s.value.is_finite());
            }
        }
        Check::DppConsistency {} => {
            let tol = plan.tolerances.dpp.get();
            for s in plan.initial.horizon_index()..=grid.steps() {
                let r = verify_dpp_consistency(c, &plan.initial, s, &plan.dpp).map_err(msg)?;
                rec.margin(format!("s={}", grid.time(s)), r, tol, r <= tol);
            }
        }
        Check::Regularity { trials, refinements } => {
            let r = verify_value_regularity(c, grid, *trials, *refinements, rng).map_err(msg)?;
            for level in &r.levels {
                let k = level.constants;
                rec.constant(format!("steps={}.growth", level.steps), k.growth);
                rec.constant(format!("steps={}.time_shift", level.steps), k.time_shift);
                rec.constant(format!("steps={}.space", level.steps), k.space);
            }
            if !r.passed {
                rec.fail("constants not stable to 10% across refinements");
            }
        }
        Check::Ito { functional, lag, refinements, min_order, labels, exact } => {
            ito_check(plan, *functional, lag.get(), *refinements, min_order.get(), labels.as_deref(), *exact, rec)?
        }
        Check::Upsilon { instances, m, c0 } => {
            let floor = -c0.get() * grid.step();
            let params = GaugeParams::new(m.get());
            let (mut worst, mut total) = (f64::INFINITY, 0.0);
            for _ in 0..*instances {
                let k = sampling::random_index(rng, 0, grid.steps() - 1);
                let g = sampling::random_path(rng, &plan.space, grid, k).map_err(msg)?;
                let eta = sampling::random_path(rng, &plan.space, grid, k).map_err(msg)?;
                let labels = sampling::random_labels(rng, c.controls().len(), grid.steps() - k);
                let u = ControlSignal::new(grid, k, labels).map_err(msg)?;
                let s = sampling::random_index(rng, k + 1, grid.steps());
                let margin = upsilon_inequality_check(c, &g, &eta, &u, s, params).map_err(msg)?.margin;
                worst = worst.min(margin);
                total += margin;
            }
            rec.margin("worst margin", worst, floor, worst >= floor);
            rec.constant("mean margin", total / *instances as f64);
        }
        Check::Viscosity { curvature, shift, depth, radius, bumps, .. } => {
            let table = ValueTable::new();
            let a = shift.get();
            let t_final = grid.final_time();
            let w = |g: &Path<f64>| value_of(plan, &table, g).map(|v| v + a * (t_final - g.horizon())).unwrap_or(f64::NAN);
            let tol = plan.tolerances.viscosity.get();
            for (k, at) in pc.points.iter().enumerate() {
                let net = touching_net(c, at, *depth, radius.get(), *bumps).map_err(msg)?;
                for side in [Side::Sub, Side::Super] {
                    let phi = quadratic_tangent(&w, at, curvature.get(), side).map_err(msg)?;
                    let label = format!("point {k} {}", side.name());
                    match viscosity_check(c, &w, &phi, &GaugePack::zero(), at, &net, side, tol) {
                        Ok(r) => {
                            let bound = if side == Side::Sub { -tol } else { tol };
                            rec.margin(label, r.margin, bound, r.passed);
                        }
                        Err(e) => {
                            rec.margin(label, f64::NAN, f64::NAN, false);
                            rec.note(format!("point {k} {}: {e}", side.name()));
                        }
                    }
                }
            }
        }
        Check::Classical { .. } => {
            let table = ValueTable::new();
            let w = numeric_functional(plan, &table);
            let tol = plan.tolerances.classical.get();
            let r = classical_check(c, &w, &pc.points, tol).map_err(msg)?;
            let mut residuals = r.residuals.iter();
            for (k, p) in pc.points.iter().enumerate() {
                if p.is_terminal() {
                    continue;
                }
                let v = *residuals.next().expect("one residual per interior point");
                rec.margin(format!("point {k}"), v.abs(), tol, v.abs() <= tol);
            }
            rec.margin("terminal mismatch", r.terminal_mismatch, tol, r.terminal_mismatch <= tol);
            if !r.kinks.is_empty() {
                rec.fail(format!("vertical kinks at points {:?}", r.kinks));
            }
        }
        Check::Stability { perturbation, epsilons, direction, test_paths, hypothesis_trials } => {
            let pert = match perturbation {
                PerturbationSpec::Terminal => Perturbation::Terminal,
                PerturbationSpec::Running => Perturbation::Running,
                PerturbationSpec::Drift => Perturbation::Drift(match direction {
                    Some(d) => HVec::new(d.iter().map(|x| x.get()).collect()),
                    None => HVec::basis(plan.space.dim(), 0),
                }),
            };
            let tests: Vec<Path<f64>> = (0..*test_paths)
                .map(|_| {
                    let k = sampling::random_index(rng, 0, grid.steps() - 1);
                    sampling::random_path(rng, &plan.space, grid, k)
                })
                .collect::<Result<_, _>>()
                .map_err(msg)?;
            let eps: Vec<f64> = epsilons.iter().map(|e| e.get()).collect();
            let r = stability_experiment(c, &pert, &eps, &tests, &plan.dpp, *hypothesis_trials, rng).map_err(msg)?;
            for row in &r.rows {
                match row.gap {
                    Some(g) => rec.margin(format!("eps={}", row.eps), g, row.bound, g <= row.bound + 1e-9),
                    None => rec.margin(format!("eps={} hypothesis", row.eps), f64::NAN, row.bound, false),
                }
            }
            if !r.decreasing {
                rec.fail("gaps do not decrease with eps");
            }
        }
        Check::BpSearch { levels, horizons, eps, starts, objective } => {
            let lv: Vec<f64> = levels.iter().map(|x| x.get()).collect();
            let net = exhaustive_net(&plan.space, grid, &lv, horizons, NET_LIMIT).map_err(msg)?;
            let table = ValueTable::new();
            let sign = if *objective == Objective::Value { 1.0 } else { -1.0 };
            let values: Vec<f64> = net.iter().map(|g| value_of(plan, &table, g).map(|v| sign * v)).collect::<Result<_, _>>()?;
            let lookup: HashMap<Vec<u64>, f64> = net.iter().zip(&values).map(|(g, &v)| (path_key(g), v)).collect();
            let f = move |g: &Path<f64>| lookup.get(&path_key(g)).copied().unwrap_or(f64::NAN);
            let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e = eps.get();
            let near: Vec<usize> = (0..net.len()).filter(|&k| values[k] >= top - e).collect();
            let rho = UpsilonBar::standard();
            rec.constant("net size", net.len() as f64);
            for _ in 0..*starts {
                let start = near[sampling::random_index(rng, 0, near.len() - 1)];
                let r = bp_search(&f, &net, &rho, e, start, BpOptions::default()).map_err(msg)?;
                let chk = verify_bp(&f, &net, &rho, e, &r).map_err(msg)?;
                rec.margin(format!("start {start} -> {}", r.maximizer), r.perturbation, 2.0 * e, chk.all());
            }
        }
    }
    Ok(())
}

fn path_key(g: &Path<f64>) -> Vec<u64> {
    g.samples().iter().flat_map(|x| x.coords().iter().map(|c| c.to_bits())).collect()
}

#[allow(clippy::too_many_arguments)]
fn ito_check(
    plan: &Plan,
    functional: ItoFunctional,
    lag: f64,
    refinements: usize,
    min_order: f64,
    labels: Option<&[usize]>,
    exact: bool,
    rec: &mut CheckRecord,
) -> CheckResult {
    let dim = plan.space.dim();
    let phi: Cylinder<f64> = match functional {
        ItoFunctional::Square => Cylinder::endpoint_square(),
        ItoFunctional::Linear => Cylinder::endpoint_linear(HVec::new(vec![1.0; dim])),
        ItoFunctional::LaggedProduct => Cylinder::new(
            vec![lag, f64::INFINITY],
            |_, x: &[HVec<f64>]| x[0].dot(&x[1]),
            |_, _| 0.0,
            |_, x| vec![x[1].clone(), x[0].clone()],
        ),
    };
    let k = plan.initial.horizon_index();
    let base_labels = labels.map_or_else(|| vec![0; plan.grid.steps() - k], |l| l.to_vec());
    let base = ControlSignal::new(plan.grid, k, base_labels).map_err(msg)?;
    let (mut dts, mut res) = (Vec::new(), Vec::new());
    for level in 0..=refinements {
        let factor = 1 << level;
        let u = base.refined(factor);
        let g = plan.initial.refined(factor);
        let r = ito_residual(&phi, &plan.coefficients, &g, &u, k * factor, u.grid().steps()).map_err(msg)?;
        let bound = if exact { EXACT_RESIDUAL } else { f64::INFINITY };
        rec.margin(format!("steps={}", u.grid().steps()), r.abs(), bound, !exact || r.abs() <= EXACT_RESIDUAL);
        dts.push(u.grid().step());
        res.push(r);
    }
    if !exact {
        let order = convergence_order(&dts, &res);
        rec.margin("fitted order", order, min_order, order >= min_order);
    }
    Ok(())
}

/// `w(γ₀) + (p, x − x₀) + a(s − t₀) ± K(|x − x₀|² + (s − t₀)²)` with `p`, `a`
/// the numerical Dupire derivatives of `w` at `γ₀`, signed so that it
/// touches `w` from above (sub) or below (super).
fn quadratic_tangent(
    w: &dyn PathFunctional<f64>,
    at: &Path<f64>,
    curvature: f64,
    side: Side,
) -> phjb_core::Result<FnFunctional<f64>> {
    let w0 = w.eval(at);
    let p = vertical_gradient(w, at, default_vertical_step(at))?;
    let a = (w.eval(&at.extend_flat_to(at.horizon_index() + 1)?) - w0) / at.step();
    let (t0, x0) = (at.horizon(), at.endpoint().clone());
    let (k, sign) = match side {
        Side::Sub => (curvature, 1.0),
        Side::Super => (-curvature, -1.0),
    };
    let (p1, p2, x1, x2) = (p.clone(), p, x0.clone(), x0);
    Ok(FnFunctional::new(
        move |g: &Path<f64>| {
            let dx = g.endpoint() - &x1;
            let ds = g.horizon() - t0;
            sign * (w0 + p1.dot(&dx) + a * ds + k * (dx.norm_sq() + ds * ds))
        },
        move |g| sign * (a + 2.0 * k * (g.horizon() - t0)),
        move |g| (&p2 + &(g.endpoint() - &x2).scale(2.0 * k)).scale(sign),
    ))
}

/// The computed value with numerical Dupire derivatives.
fn numeric_functional<'a>(plan: &'a Plan, table: &'a ValueTable<f64>) -> impl TestFunctional<f64> + 'a {
    struct Numeric<'a> {
        plan: &'a Plan,
        table: &'a ValueTable<f64>,
    }
    impl PathFunctional<f64> for Numeric<'_> {
        fn eval(&self, g: &Path<f64>) -> f64 {
            value_of(self.plan, self.table, g).unwrap_or(f64::NAN)
        }
    }
    impl TestFunctional<f64> for Numeric<'_> {
        fn eval(&self, g: &Path<f64>) -> f64 {
            PathFunctional::eval(self, g)
        }
        fn time_derivative(&self, g: &Path<f64>) -> f64 {
            match g.extend_flat_to(g.horizon_index() + 1) {
                Ok(next) => (PathFunctional::eval(self, &next) - PathFunctional::eval(self, g)) / g.step(),
                Err(_) => f64::NAN,
            }
        }
        fn space_derivative(&self, g: &Path<f64>) -> HVec<f64> {
            vertical_gradient(self, g, default_vertical_step(g)).unwrap_or_else(|_| HVec::zeros(g.dim()))
        }
    }
    Numeric { plan, table }
}
