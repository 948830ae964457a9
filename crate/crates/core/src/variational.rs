//! Borwein–Preiss perturbed maximization over a finite net of paths.
//!
//! Starting from an `ε`-maximizer `γ⁰` of `f`, anchors `γⁱ` with weights
//! `δ_i = 2⁻ⁱ` are chosen so that `f − Σ δ_i ρ(γⁱ, ·)` attains a strict
//! maximum at a point `γ̂` close (in `ρ`) to every anchor.

use crate::error::{Error, Result};
use crate::gauge::{self, GaugeParams};
use crate::hilbert::{HVec, SpectralSpace};
use crate::path::{metric_d_infty, Path, PathFunctional, TimeGrid};
use crate::scalar::Scalar;

use std::sync::Arc;

/// Two-path gauge `ρ(γ, η) ≥ 0` with `ρ(γ, γ) = 0`.
pub trait GaugeFn<T: Scalar>: Send + Sync {
    fn rho(&self, a: &Path<T>, b: &Path<T>) -> Result<T>;
}

/// `Ῡᴹ(γ_t, η_s) = Υᴹ(η_s − γ_{t,s,A}) + |s − t|²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpsilonBar<T> {
    pub params: GaugeParams<T>,
}

impl<T: Scalar> UpsilonBar<T> {
    pub fn standard() -> Self {
        Self { params: GaugeParams::standard() }
    }
}

impl<T: Scalar> GaugeFn<T> for UpsilonBar<T> {
    fn rho(&self, a: &Path<T>, b: &Path<T>) -> Result<T> {
        gauge::eval_upsilon_pair(self.params, a, b, true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaugeCheck<T> {
    pub max_diagonal: T,
    /// Largest `d∞(γ, η) − modulus(ρ(γ, η))` over the sampled pairs.
    pub worst_modulus_excess: T,
    pub passed: bool,
}

/// Samples the gauge-type conditions: `ρ(γ, γ) = 0`, `ρ ≥ 0`, and
/// `d∞ ≤ modulus(ρ)` on all pairs drawn from `samples`.
pub fn check_gauge<T: Scalar>(
    rho: &dyn GaugeFn<T>,
    samples: &[Path<T>],
    modulus: impl Fn(T) -> T,
) -> Result<GaugeCheck<T>> {
    let mut max_diagonal = T::zero();
    let mut worst = T::neg_infinity();
    let mut nonneg = true;
    for (i, a) in samples.iter().enumerate() {
        max_diagonal = max_diagonal.max(rho.rho(a, a)?.abs());
        for b in &samples[i + 1..] {
            let r = rho.rho(a, b)?;
            nonneg &= r >= T::zero();
            worst = worst.max(metric_d_infty(a, b)? - modulus(r));
        }
    }
    let tiny = T::lit(1e-12);
    Ok(GaugeCheck {
        max_diagonal,
        worst_modulus_excess: worst,
        passed: nonneg && max_diagonal <= tiny && worst <= tiny,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Anchor<T> {
    /// Index into the net.
    pub index: usize,
    pub time: T,
    pub weight: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpResult<T> {
    /// Net index of `γ̂`.
    pub maximizer: usize,
    pub time: T,
    pub anchors: Vec<Anchor<T>>,
    /// `Σ δ_i ρ(γⁱ, γ̂)`.
    pub perturbation: T,
    /// `f(γ̂) − Σ δ_i ρ(γⁱ, γ̂)`.
    pub perturbed_value: T,
    pub iterations: usize,
    /// Anchor times stopped increasing before the search ended.
    pub stalled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BpOptions {
    pub max_anchors: usize,
    /// The search stops once `δ_i ρ(γ^{i−1}, γⁱ)` falls to this level.
    pub increment_floor: f64,
}

impl Default for BpOptions {
    fn default() -> Self {
        Self { max_anchors: 64, increment_floor: 1e-12 }
    }
}

fn weight<T: Scalar>(i: usize) -> T {
    T::lit(0.5).powi(i as i32)
}

/// `f(γ) − Σ_{j} δ_j ρ(γʲ, γ)`, anchors applied in order. `rows[j][k]` holds
/// `ρ(γʲ, net_k)`.
fn perturbed<T: Scalar>(fv: T, rows: &[Vec<T>], k: usize) -> T {
    let mut v = fv;
    for (j, row) in rows.iter().enumerate() {
        v -= weight::<T>(j) * row[k];
    }
    v
}

fn rho_row<T: Scalar>(rho: &dyn GaugeFn<T>, net: &[Path<T>], anchor: usize) -> Result<Vec<T>> {
    net.iter()
        .map(|g| {
            let r = rho.rho(&net[anchor], g)?;
            if r.is_finite() && r >= T::zero() {
                Ok(r)
            } else {
                Err(Error::NonFinite { context: "gauge".into(), time: g.horizon().as_f64() })
            }
        })
        .collect()
}

/// Perturbed maximization over `net` from `net[start]`.
///
/// Requires `f(start) ≥ max_net f − eps`. At step `i` the next anchor is a
/// `ε·4⁻ⁱ`-maximizer of the current perturbed functional over the surviving
/// set (earliest horizon first, then closest to the previous anchor, then
/// lowest index); the survivors are the later-horizon points whose perturbed
/// value is at least the anchor's. `γ̂` is the exact maximizer over the final
/// survivors and is appended as a last anchor, which makes it strict.
pub fn bp_search<T: Scalar>(
    f: &dyn PathFunctional<T>,
    net: &[Path<T>],
    rho: &dyn GaugeFn<T>,
    eps: T,
    start: usize,
    opts: BpOptions,
) -> Result<BpResult<T>> {
    if !(eps > T::zero()) {
        return Err(Error::InvalidArgument(format!("eps = {eps} must be positive")));
    }
    if start >= net.len() {
        return Err(Error::InvalidArgument("start is not a net point".into()));
    }
    if opts.max_anchors == 0 {
        return Err(Error::InvalidArgument("max_anchors must be positive".into()));
    }
    let fv: Vec<T> = net.iter().map(|g| f.eval(g)).collect();
    if let Some(k) = fv.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "objective".into(), time: net[k].horizon().as_f64() });
    }
    let sup = fv.iter().copied().fold(T::neg_infinity(), T::max);
    if fv[start] < sup - eps {
        return Err(Error::InvalidArgument(format!(
            "start value {} is not within eps = {eps} of the net maximum {sup}",
            fv[start]
        )));
    }
    let horizon = |k: usize| net[k].horizon_index();

    let mut anchors = vec![start];
    let mut rows = vec![rho_row(rho, net, start)?];
    let base = fv[start];
    let mut alive: Vec<usize> = (0..net.len())
        .filter(|&k| horizon(k) >= horizon(start) && perturbed(fv[k], &rows, k) >= base)
        .collect();
    let mut iterations = 0;
    let mut stalled = false;

    while alive.len() > 1 && anchors.len() < opts.max_anchors {
        iterations += 1;
        let i = anchors.len();
        let prev = *anchors.last().expect("start anchor");
        let best = alive.iter().map(|&k| perturbed(fv[k], &rows, k)).fold(T::neg_infinity(), T::max);
        let eta = eps * T::lit(0.25).powi(i as i32);
        let prev_row = &rows[i - 1];
        let next = alive
            .iter()
            .copied()
            .filter(|&k| perturbed(fv[k], &rows, k) >= best - eta)
            .min_by(|&a, &b| {
                horizon(a)
                    .cmp(&horizon(b))
                    .then(prev_row[a].partial_cmp(&prev_row[b]).unwrap_or(std::cmp::Ordering::Equal))
                    .then(a.cmp(&b))
            })
            .expect("the maximizer itself qualifies");
        let increment = weight::<T>(i) * prev_row[next];
        if horizon(next) == horizon(prev) && i > 1 {
            stalled = true;
        }
        anchors.push(next);
        rows.push(rho_row(rho, net, next)?);
        let level = perturbed(fv[next], &rows, next);
        alive.retain(|&k| horizon(k) >= horizon(next) && perturbed(fv[k], &rows, k) >= level);
        if increment <= T::lit(opts.increment_floor) {
            break;
        }
    }

    let last = *anchors.last().expect("start anchor");
    let mut hat = last;
    let mut hat_value = perturbed(fv[last], &rows, last);
    for &k in &alive {
        let v = perturbed(fv[k], &rows, k);
        if v > hat_value {
            hat = k;
            hat_value = v;
        }
    }
    if hat != last || alive.len() > 1 {
        anchors.push(hat);
        rows.push(rho_row(rho, net, hat)?);
    }
    let perturbation = rows.iter().enumerate().fold(T::zero(), |a, (j, row)| a + weight::<T>(j) * row[hat]);
    Ok(BpResult {
        maximizer: hat,
        time: net[hat].horizon(),
        anchors: anchors
            .iter()
            .enumerate()
            .map(|(j, &index)| Anchor { index, time: net[index].horizon(), weight: weight(j) })
            .collect(),
        perturbation,
        perturbed_value: perturbed(fv[hat], &rows, hat),
        iterations,
        stalled,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BpCheck {
    /// `ρ(γⁱ, γ̂) ≤ ε 2⁻ⁱ` for every anchor.
    pub closeness: bool,
    /// `f(γ̂) − Σ δ_i ρ(γⁱ, γ̂) ≥ f(γ⁰)`.
    pub improvement: bool,
    /// `γ̂` strictly maximizes the perturbed functional over net points with
    /// horizon at least `t̂`.
    pub strict_max: bool,
    /// `Σ δ_i ρ(γⁱ, γ̂) ≤ 2ε`.
    pub summable: bool,
}

impl BpCheck {
    pub fn all(&self) -> bool {
        self.closeness && self.improvement && self.strict_max && self.summable
    }
}

/// Re-evaluates the three postconditions on the whole net.
pub fn verify_bp<T: Scalar>(
    f: &dyn PathFunctional<T>,
    net: &[Path<T>],
    rho: &dyn GaugeFn<T>,
    eps: T,
    result: &BpResult<T>,
) -> Result<BpCheck> {
    let hat = &net[result.maximizer];
    let rows: Vec<Vec<T>> = result.anchors.iter().map(|a| rho_row(rho, net, a.index)).collect::<Result<_>>()?;
    let mut closeness = true;
    let mut pert = T::zero();
    for (j, a) in result.anchors.iter().enumerate() {
        let r = rho.rho(&net[a.index], hat)?;
        closeness &= r <= eps * weight::<T>(j);
        pert += a.weight * r;
    }
    let fv: Vec<T> = net.iter().map(|g| f.eval(g)).collect();
    let value = perturbed(fv[result.maximizer], &rows, result.maximizer);
    let start = result.anchors[0].index;
    let improvement = value >= fv[start];
    let strict_max = net.iter().enumerate().all(|(k, g)| {
        k == result.maximizer || g.horizon_index() < hat.horizon_index() || perturbed(fv[k], &rows, k) < value
    });
    Ok(BpCheck { closeness, improvement, strict_max, summable: pert <= eps + eps })
}

/// Every path on `grid` whose samples take coordinates in `levels`, for each
/// horizon index in `horizons`. Refuses nets larger than `limit`.
pub fn exhaustive_net<T: Scalar>(
    space: &Arc<SpectralSpace<T>>,
    grid: TimeGrid<T>,
    levels: &[T],
    horizons: &[usize],
    limit: usize,
) -> Result<Vec<Path<T>>> {
    let dim = space.dim();
    let per_sample = (levels.len() as f64).powi(dim as i32);
    let total: f64 = horizons.iter().map(|&h| per_sample.powi(h as i32 + 1)).sum();
    if total > limit as f64 {
        return Err(Error::BudgetExceeded { leaves: total, budget: limit as f64 });
    }
    let vectors: Vec<HVec<T>> = {
        let mut out = vec![Vec::new()];
        for _ in 0..dim {
            out = out.into_iter().flat_map(|v: Vec<T>| levels.iter().map(move |&l| [v.clone(), vec![l]].concat())).collect();
        }
        out.into_iter().map(HVec::new).collect()
    };
    let mut net = Vec::with_capacity(total as usize);
    for &h in horizons {
        let mut prefixes: Vec<Vec<HVec<T>>> = vec![Vec::new()];
        for _ in 0..=h {
            prefixes = prefixes
                .into_iter()
                .flat_map(|p| vectors.iter().map(move |v| [p.clone(), vec![v.clone()]].concat()))
                .collect();
        }
        for samples in prefixes {
            net.push(Path::new(space.clone(), grid, samples)?);
        }
    }
    Ok(net)
}
