//! Cost functional, Hamiltonians, the value functional by backward dynamic
//! programming over the control tree, and its regularity verifier.

use dashmap::DashMap;
use rayon::prelude::*;

use crate::dynamics::{advance, constants_agree, Coefficients, ControlSignal, Picard};
use crate::error::{Error, Result};
use crate::hilbert::HVec;
use crate::path::{Path, TimeGrid};
use crate::sampling::{self, Rng};
use crate::scalar::Scalar;

/// Running cost plus terminal cost along the mild solution.
///
/// Stage costs are summed from the terminal time backwards,
/// `J = c₀ + (c₁ + (… + φ(X_T)))`, the same association the backward
/// recursion uses, so the minimum over all control sequences and
/// [`value_dpp`] agree bit for bit.
pub fn cost_j<T: Scalar>(c: &Coefficients<T>, g: &Path<T>, u: &ControlSignal<T>) -> Result<T> {
    cost_j_with(c, g, u, Picard::Single).map(|(j, _)| j)
}

/// [`cost_j`] together with the trajectory.
pub fn cost_j_with<T: Scalar>(
    c: &Coefficients<T>,
    g: &Path<T>,
    u: &ControlSignal<T>,
    picard: Picard,
) -> Result<(T, Path<T>)> {
    if u.grid() != g.grid() {
        return Err(Error::GridMismatch);
    }
    if u.start() != g.horizon_index() {
        return Err(Error::InvalidControl("control does not start at the path horizon".into()));
    }
    let n = c.controls().len();
    let mut x = g.clone();
    let mut stages = Vec::with_capacity(u.labels().len());
    for &label in u.labels() {
        if label >= n {
            return Err(Error::InvalidControl(format!("label {label} outside the control set")));
        }
        stages.push(advance(c, &mut x, &c.controls()[label], picard)?);
    }
    let mut total = terminal(c, &x)?;
    for s in stages.into_iter().rev() {
        total = s + total;
    }
    Ok((total, x))
}

fn terminal<T: Scalar>(c: &Coefficients<T>, x: &Path<T>) -> Result<T> {
    let v = c.terminal_cost(x);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { context: "terminal cost".into(), time: x.horizon().as_f64() })
    }
}

fn pairing<T: Scalar>(c: &Coefficients<T>, g: &Path<T>, p: &HVec<T>, u: &HVec<T>) -> Result<T> {
    let f = c.drift(g, u);
    if f.dim() != p.dim() {
        return Err(Error::DimensionMismatch { expected: f.dim(), found: p.dim() });
    }
    Ok(p.dot(&f) + c.running_cost(g, u))
}

/// `sup_u [(p, F(γ, u)) + q(γ, u)]` with the maximizing control label;
/// ties go to the earliest control in the list.
pub fn hamiltonian<T: Scalar>(c: &Coefficients<T>, g: &Path<T>, p: &HVec<T>) -> Result<(T, usize)> {
    let mut best = (T::neg_infinity(), 0);
    for (i, u) in c.controls().iter().enumerate() {
        let v = pairing(c, g, p, u)?;
        if v > best.0 {
            best = (v, i);
        }
    }
    Ok(best)
}

/// `inf_u [(p, F(γ, u)) + q(γ, u)]`, the Hamiltonian of the minimization
/// problem, with the minimizing label (earliest on ties).
pub fn hjb_hamiltonian<T: Scalar>(c: &Coefficients<T>, g: &Path<T>, p: &HVec<T>) -> Result<(T, usize)> {
    let mut best = (T::infinity(), 0);
    for (i, u) in c.controls().iter().enumerate() {
        let v = pairing(c, g, p, u)?;
        if v < best.0 {
            best = (v, i);
        }
    }
    Ok(best)
}

/// Memoization of the backward recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MemoPolicy<T> {
    /// Full tree walk (exact brute force), guarded by the leaf budget.
    Off,
    /// Entries keyed by the time index and the declared statistic (or the
    /// whole prefix) rounded to multiples of the quantum. A zero quantum keys
    /// on exact bit patterns.
    Quantized(T),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DppOptions<T> {
    pub memo: MemoPolicy<T>,
    /// Largest number of leaves a full tree walk may visit.
    pub leaf_budget: f64,
    pub picard: Picard,
    /// Use the coefficient set's sufficient statistic as the memo key.
    pub use_statistic: bool,
}

impl<T: Scalar> Default for DppOptions<T> {
    fn default() -> Self {
        Self { memo: MemoPolicy::Off, leaf_budget: 1e7, picard: Picard::Single, use_statistic: true }
    }
}

impl<T: Scalar> DppOptions<T> {
    pub fn brute_force() -> Self {
        Self::default()
    }

    pub fn quantized(quantum: T) -> Self {
        Self { memo: MemoPolicy::Quantized(quantum), ..Self::default() }
    }

    /// Memoized with the state resolution `Δt · drift bound`.
    pub fn state_grid(c: &Coefficients<T>, grid: &TimeGrid<T>) -> Self {
        Self::quantized(grid.step() * c.drift_bound())
    }
}

type Key = (usize, Vec<i64>);

/// Memo table of the recursion. Insert-if-absent: the first value stored
/// for a key is kept.
#[derive(Debug, Default)]
pub struct ValueTable<T> {
    entries: DashMap<Key, T>,
}

impl<T: Scalar> ValueTable<T> {
    pub fn new() -> Self {
        Self { entries: DashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn get(&self, key: &Key) -> Option<T> {
        self.entries.get(key).map(|v| *v)
    }

    fn insert(&self, key: Key, v: T) -> T {
        *self.entries.entry(key).or_insert(v)
    }
}

fn quantize<T: Scalar>(v: T, quantum: T) -> i64 {
    if quantum > T::zero() {
        (v / quantum).round().to_i64().unwrap_or(i64::MAX)
    } else {
        v.as_f64().to_bits() as i64
    }
}

struct Dpp<'a, T: Scalar> {
    c: &'a Coefficients<T>,
    opts: &'a DppOptions<T>,
    table: &'a ValueTable<T>,
}

/// Remaining steps at which the full tree walk still splits across threads.
const PARALLEL_MIN_REMAINING: usize = 5;

impl<'a, T: Scalar> Dpp<'a, T> {
    fn key(&self, path: &Path<T>, quantum: T) -> Key {
        let raw: Vec<T> = match (self.opts.use_statistic, self.c.statistic()) {
            (true, Some(stat)) => stat(path),
            _ => path.samples().iter().flat_map(|s| s.coords().iter().copied()).collect(),
        };
        (path.horizon_index(), raw.into_iter().map(|v| quantize(v, quantum)).collect())
    }

    fn child(&self, path: &Path<T>, u: &HVec<T>) -> Result<T> {
        let mut next = path.clone();
        let stage = advance(self.c, &mut next, u, self.opts.picard)?;
        Ok(stage + self.value(&next)?)
    }

    fn value(&self, path: &Path<T>) -> Result<T> {
        if path.is_terminal() {
            return terminal(self.c, path);
        }
        let key = match self.opts.memo {
            MemoPolicy::Quantized(q) => {
                let key = self.key(path, q);
                if let Some(v) = self.table.get(&key) {
                    return Ok(v);
                }
                Some(key)
            }
            MemoPolicy::Off => None,
        };
        let controls = self.c.controls();
        let remaining = path.grid().steps() - path.horizon_index();
        let children: Vec<Result<T>> = if key.is_none() && remaining >= PARALLEL_MIN_REMAINING {
            controls.par_iter().map(|u| self.child(path, u)).collect()
        } else {
            controls.iter().map(|u| self.child(path, u)).collect()
        };
        let mut best = T::infinity();
        for v in children {
            let v = v?;
            if v < best {
                best = v;
            }
        }
        Ok(match key {
            Some(k) => self.table.insert(k, best),
            None => best,
        })
    }
}

fn check_budget<T: Scalar>(c: &Coefficients<T>, g: &Path<T>, opts: &DppOptions<T>) -> Result<()> {
    if opts.memo != MemoPolicy::Off {
        return Ok(());
    }
    let remaining = (g.grid().steps() - g.horizon_index()) as f64;
    let leaves = (c.controls().len() as f64).powf(remaining);
    if leaves > opts.leaf_budget {
        return Err(Error::BudgetExceeded { leaves, budget: opts.leaf_budget });
    }
    Ok(())
}

fn check_path<T: Scalar>(c: &Coefficients<T>, g: &Path<T>) -> Result<()> {
    c.space().check_dim(g.endpoint())?;
    if g.space().eigenvalues() != c.space().eigenvalues() {
        return Err(Error::InvalidSpace("path and coefficients live in different spaces".into()));
    }
    Ok(())
}

/// `V(γ_t)`: the minimum of [`cost_j`] over every piecewise-constant control
/// on the remaining grid.
pub fn value_dpp<T: Scalar>(c: &Coefficients<T>, g: &Path<T>, opts: &DppOptions<T>) -> Result<T> {
    value_dpp_in(c, g, opts, &ValueTable::new())
}

/// [`value_dpp`] reusing (and filling) a caller-owned memo table. The table
/// must only be shared between calls with the same coefficients and options.
pub fn value_dpp_in<T: Scalar>(
    c: &Coefficients<T>,
    g: &Path<T>,
    opts: &DppOptions<T>,
    table: &ValueTable<T>,
) -> Result<T> {
    check_path(c, g)?;
    check_budget(c, g, opts)?;
    Dpp { c, opts, table }.value(g)
}

/// Value with an optimal control sequence and its trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct DppSolution<T> {
    pub value: T,
    pub control: ControlSignal<T>,
    pub trajectory: Path<T>,
    pub table_entries: usize,
}

pub fn solve_dpp<T: Scalar>(c: &Coefficients<T>, g: &Path<T>, opts: &DppOptions<T>) -> Result<DppSolution<T>> {
    check_path(c, g)?;
    check_budget(c, g, opts)?;
    let table = ValueTable::new();
    let dpp = Dpp { c, opts, table: &table };
    let value = dpp.value(g)?;
    let mut x = g.clone();
    let mut labels = Vec::new();
    while !x.is_terminal() {
        let mut best = (T::infinity(), 0, None);
        for (i, u) in c.controls().iter().enumerate() {
            let mut next = x.clone();
            let stage = advance(c, &mut next, u, opts.picard)?;
            let v = stage + dpp.value(&next)?;
            if v < best.0 {
                best = (v, i, Some(next));
            }
        }
        labels.push(best.1);
        x = best.2.expect("nonempty control set");
    }
    Ok(DppSolution {
        value,
        control: ControlSignal::new(*g.grid(), g.horizon_index(), labels)?,
        trajectory: x,
        table_entries: table.len(),
    })
}

fn for_each_sequence(n: usize, len: usize, mut f: impl FnMut(&[usize]) -> Result<()>) -> Result<()> {
    let mut labels = vec![0usize; len];
    loop {
        f(&labels)?;
        let mut i = len;
        loop {
            if i == 0 {
                return Ok(());
            }
            i -= 1;
            labels[i] += 1;
            if labels[i] < n {
                break;
            }
            labels[i] = 0;
        }
    }
}

/// `|V(γ_t) − min_u [∫_t^s q dσ + V(X_s)]|` with the inner minimum taken
/// over every control sequence on `[t, s]`.
pub fn verify_dpp_consistency<T: Scalar>(
    c: &Coefficients<T>,
    g: &Path<T>,
    s_index: usize,
    opts: &DppOptions<T>,
) -> Result<T> {
    if s_index < g.horizon_index() || s_index > g.grid().steps() {
        return Err(Error::InvalidArgument(format!(
            "intermediate index {s_index} outside [{}, {}]",
            g.horizon_index(),
            g.grid().steps()
        )));
    }
    let table = ValueTable::new();
    let v = value_dpp_in(c, g, opts, &table)?;
    let mut best = T::infinity();
    for_each_sequence(c.controls().len(), s_index - g.horizon_index(), |labels| {
        let mut x = g.clone();
        let mut stages = Vec::with_capacity(labels.len());
        for &l in labels {
            stages.push(advance(c, &mut x, &c.controls()[l], opts.picard)?);
        }
        let mut total = value_dpp_in(c, &x, opts, &table)?;
        for s in stages.into_iter().rev() {
            total = s + total;
        }
        if total < best {
            best = total;
        }
        Ok(())
    })?;
    Ok((v - best).abs())
}

/// Largest gap between the memoized recursion keyed on the declared
/// statistic (exact keys) and the full tree walk, over random prefixes.
pub fn validate_statistic<T: Scalar>(
    c: &Coefficients<T>,
    grid: TimeGrid<T>,
    trials: usize,
    rng: &mut Rng,
) -> Result<T> {
    if c.statistic().is_none() {
        return Err(Error::InvalidArgument(format!("`{}` declares no statistic", c.name())));
    }
    let exact = DppOptions::quantized(T::zero());
    let brute = DppOptions::brute_force();
    let mut worst = T::zero();
    for _ in 0..trials {
        let k = sampling::random_index(rng, 0, grid.steps());
        let g = sampling::random_path(rng, c.space(), grid, k)?;
        let a = value_dpp(c, &g, &exact)?;
        let b = value_dpp(c, &g, &brute)?;
        worst = worst.max((a - b).abs());
    }
    Ok(worst)
}

/// Empirical constants of the value functional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueConstants<T> {
    /// `|V(γ_t)| / (1 + ‖γ‖₀)`.
    pub growth: T,
    /// `|V(γ_{t,t̄,A}) − V(γ_t)| / ((1 + ‖γ‖₀)(t̄ − t))`.
    pub time_shift: T,
    /// `|V(γ_t) − V(η_t)| / ‖γ − η‖₀`.
    pub space: T,
}

impl<T: Scalar> ValueConstants<T> {
    pub fn as_array(&self) -> [T; 3] {
        [self.growth, self.time_shift, self.space]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularityLevel<T> {
    pub steps: usize,
    pub constants: ValueConstants<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueRegularityReport<T> {
    pub levels: Vec<RegularityLevel<T>>,
    pub trials: usize,
    pub passed: bool,
}

struct RegularityInstance<T> {
    gamma: Path<T>,
    eta: Path<T>,
    shift_index: usize,
}

fn regularity_constants<T: Scalar>(
    c: &Coefficients<T>,
    inst: &[RegularityInstance<T>],
    opts: &DppOptions<T>,
) -> Result<ValueConstants<T>> {
    let table = ValueTable::new();
    let v = |p: &Path<T>| value_dpp_in(c, p, opts, &table);
    let mut k = ValueConstants { growth: T::zero(), time_shift: T::zero(), space: T::zero() };
    for e in inst {
        let vg = v(&e.gamma)?;
        let gn = e.gamma.sup_norm();
        k.growth = k.growth.max(vg.abs() / (T::one() + gn));
        let shifted = e.gamma.extend_semigroup_to(e.shift_index)?;
        let dt = shifted.horizon() - e.gamma.horizon();
        k.time_shift = k.time_shift.max((v(&shifted)? - vg).abs() / ((T::one() + gn) * dt));
        let gap = e.gamma.sub(&e.eta)?.sup_norm();
        if gap > T::zero() {
            k.space = k.space.max((vg - v(&e.eta)?).abs() / gap);
        }
    }
    Ok(k)
}

/// Growth, time-shift and spatial constants of `V` on the given grid and on
/// `refinements` successive 2× refinements of it. Instances are drawn on
/// the base grid (so `t`, `t̄` are base grid times) and resampled. Passes when
/// every constant is finite and each refinement agrees with the base grid to
/// 10%.
pub fn verify_value_regularity<T: Scalar>(
    c: &Coefficients<T>,
    grid: TimeGrid<T>,
    trials: usize,
    refinements: usize,
    rng: &mut Rng,
) -> Result<ValueRegularityReport<T>> {
    if grid.steps() < 1 {
        return Err(Error::InvalidGrid("empty grid".into()));
    }
    let mut base = Vec::with_capacity(trials);
    for _ in 0..trials {
        let k = sampling::random_index(rng, 0, grid.steps() - 1);
        let gamma = sampling::random_path(rng, c.space(), grid, k)?;
        let eta = if sampling::coin(rng, 0.5) {
            let size = sampling::uniform::<f64>(rng, 0.01, 0.5);
            sampling::perturbed_path(rng, &gamma, size)?
        } else {
            let v = sampling::random_vector(rng, gamma.dim(), 0.5);
            let shift = crate::path::Path::constant(gamma.space().clone(), grid, gamma.horizon(), v)?;
            gamma.add(&shift.truncated(k)?)?
        };
        let shift_index = sampling::random_index(rng, k + 1, grid.steps());
        base.push(RegularityInstance { gamma, eta, shift_index });
    }
    let mut levels = Vec::with_capacity(refinements + 1);
    for level in 0..=refinements {
        let factor = 1usize << level;
        let fine_grid = grid.refined(factor);
        let inst: Vec<_> = base
            .iter()
            .map(|e| RegularityInstance {
                gamma: e.gamma.refined(factor),
                eta: e.eta.refined(factor),
                shift_index: e.shift_index * factor,
            })
            .collect();
        let leaves = (c.controls().len() as f64).powf(fine_grid.steps() as f64);
        let opts = if leaves <= 1e5 {
            DppOptions::brute_force()
        } else {
            // fine enough to only merge float-level duplicates of a state
            DppOptions::quantized(T::lit(1e-9))
        };
        let constants = regularity_constants(c, &inst, &opts)?;
        levels.push(RegularityLevel { steps: fine_grid.steps(), constants });
    }
    let finite = levels.iter().all(|l| l.constants.as_array().iter().all(|x| x.is_finite()));
    let reference = levels[0].constants.as_array();
    let stable = levels[1..]
        .iter()
        .all(|l| l.constants.as_array().iter().zip(reference).all(|(&a, b)| constants_agree(a, b, 0.1)));
    Ok(ValueRegularityReport { levels, trials, passed: finite && stable })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::SpectralSpace;
    use crate::library;
    use crate::sampling::rng_from_seed;
    use std::sync::Arc;

    fn scalar_space() -> Arc<SpectralSpace<f64>> {
        Arc::new(SpectralSpace::zero_generator(1).unwrap())
    }

    fn start(sp: &Arc<SpectralSpace<f64>>, grid: TimeGrid<f64>, x: f64) -> Path<f64> {
        Path::constant(sp.clone(), grid, 0.0, HVec::new(vec![x])).unwrap()
    }

    fn enumerate(c: &Coefficients<f64>, g: &Path<f64>) -> f64 {
        let mut best = f64::INFINITY;
        let len = g.grid().steps() - g.horizon_index();
        for_each_sequence(c.controls().len(), len, |l| {
            let u = ControlSignal::new(*g.grid(), g.horizon_index(), l.to_vec())?;
            best = best.min(cost_j(c, g, &u)?);
            Ok(())
        })
        .unwrap();
        best
    }

    #[test]
    fn cost_examples() {
        let sp = scalar_space();
        let grid = TimeGrid::new(1.0, 0.25).unwrap();
        let eik = library::eikonal(sp.clone()).unwrap();
        let g = start(&sp, grid, 0.5);
        let down = ControlSignal::constant(grid, 0, 0).unwrap();
        assert_eq!(cost_j(&eik, &g, &down).unwrap(), 0.5);

        let unit = Coefficients::new("unit", sp.clone(), vec![HVec::new(vec![0.0])], 1.0)
            .unwrap()
            .with_running_cost(|_, _| 1.0);
        let late = Path::constant(sp, grid, 0.25, HVec::new(vec![3.0])).unwrap();
        assert_eq!(cost_j(&unit, &late, &ControlSignal::constant(grid, 1, 0).unwrap()).unwrap(), 0.75);
    }

    #[test]
    fn hamiltonian_examples() {
        let sp = scalar_space();
        let grid = TimeGrid::new(1.0, 0.25).unwrap();
        let eik = library::eikonal(sp.clone()).unwrap();
        let g = start(&sp, grid, 0.7);
        assert_eq!(hamiltonian(&eik, &g, &HVec::new(vec![2.0])).unwrap(), (2.0, 2));
        assert_eq!(hamiltonian(&eik, &g, &HVec::new(vec![0.0])).unwrap(), (0.0, 0));
        let with_q = eik.clone().with_running_cost(|g, _| g.endpoint().norm());
        let (v, arg) = hamiltonian(&with_q, &g, &HVec::new(vec![-3.0])).unwrap();
        assert!((v - 3.7).abs() < 1e-15);
        assert_eq!(arg, 0);
        assert_eq!(hjb_hamiltonian(&eik, &g, &HVec::new(vec![2.0])).unwrap(), (-2.0, 0));
    }

    #[test]
    fn hamiltonian_scaling_keeps_argmax() {
        let sp = Arc::new(SpectralSpace::new(vec![-0.5, 0.0]).unwrap());
        let grid = TimeGrid::new(1.0, 0.25).unwrap();
        let c = library::feedback(sp.clone()).unwrap();
        let scaled = {
            let base = c.clone();
            let b2 = c.clone();
            c.clone().with_drift(move |g, u| base.drift(g, u).scale(2.5)).with_running_cost(move |g, u| 2.5 * b2.running_cost(g, u))
        };
        let mut rng = rng_from_seed(2);
        for _ in 0..50 {
            let g = sampling::random_path(&mut rng, &sp, grid, 2).unwrap();
            let p = sampling::random_vector(&mut rng, 2, 2.0);
            let (a, ia): (f64, usize) = hamiltonian(&c, &g, &p).unwrap();
            let (b, ib) = hamiltonian(&scaled, &g, &p).unwrap();
            assert!((b - 2.5 * a).abs() < 1e-12);
            assert_eq!(ia, ib);
        }
    }

    #[test]
    fn desk_values() {
        let sp = scalar_space();
        let grid = TimeGrid::new(1.0, 0.25).unwrap();
        let eik = library::eikonal(sp.clone()).unwrap();
        let opts = DppOptions::brute_force();
        assert_eq!(value_dpp(&eik, &start(&sp, grid, 0.5), &opts).unwrap(), 0.0);
        assert_eq!(value_dpp(&eik, &start(&sp, grid, 1.5), &opts).unwrap(), 0.5);
        let term = Path::constant(sp.clone(), grid, 1.0, HVec::new(vec![-0.3])).unwrap();
        assert_eq!(value_dpp(&eik, &term, &opts).unwrap(), 0.3);
    }

    #[test]
    fn recursion_matches_enumeration_bitwise() {
        let sp = Arc::new(SpectralSpace::new(vec![-0.6]).unwrap());
        let grid = TimeGrid::new(1.0, 0.2).unwrap();
        let mut rng = rng_from_seed(4);
        for name in library::NAMES {
            let c = library::by_name(name, sp.clone()).unwrap();
            for _ in 0..4 {
                let k = sampling::random_index(&mut rng, 0, 2);
                let g = sampling::random_path(&mut rng, &sp, grid, k).unwrap();
                let v = value_dpp(&c, &g, &DppOptions::brute_force()).unwrap();
                assert_eq!(v, enumerate(&c, &g), "{name}");
                let exact = value_dpp(&c, &g, &DppOptions::quantized(0.0)).unwrap();
                assert_eq!(v, exact, "{name}");
            }
        }
    }

    #[test]
    fn solution_cost_equals_value() {
        let sp = scalar_space();
        let grid = TimeGrid::new(1.0, 0.125).unwrap();
        let c = library::feedback(sp.clone()).unwrap();
        let g = start(&sp, grid, 0.9);
        let sol = solve_dpp(&c, &g, &DppOptions::brute_force()).unwrap();
        assert_eq!(cost_j(&c, &g, &sol.control).unwrap(), sol.value);
        assert!(sol.trajectory.is_terminal());
    }

    #[test]
    fn minimizer_and_monotone_in_controls() {
        let sp = scalar_space();
        let grid = TimeGrid::new(1.0, 0.2).unwrap();
        let c = library::feedback(sp.clone()).unwrap();
        let g = start(&sp, grid, 0.4);
        let v = value_dpp(&c, &g, &DppOptions::brute_force()).unwrap();
        let mut rng = rng_from_seed(9);
        for _ in 0..30 {
            let u = ControlSignal::new(grid, 0, sampling::random_labels(&mut rng, 3, 5)).unwrap();
            assert!(v <= cost_j(&c, &g, &u).unwrap());
        }
        let fewer = c.clone().with_controls(c.controls()[1..].to_vec());
        assert!(v <= value_dpp(&fewer, &g, &DppOptions::brute_force()).unwrap());
    }

    #[test]
    fn budget_guard() {
        let sp = scalar_space();
        let grid = TimeGrid::new(1.0, 1.0 / 64.0).unwrap();
        let c = library::eikonal(sp.clone()).unwrap();
        let g = start(&sp, grid, 0.25);
        assert!(matches!(value_dpp(&c, &g, &DppOptions::brute_force()), Err(Error::BudgetExceeded { .. })));
        let v = value_dpp(&c, &g, &DppOptions::state_grid(&c, &grid)).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn dpp_consistency_on_desk() {
        let sp = scalar_space();
        let grid = TimeGrid::new(1.0, 0.25).unwrap();
        let c = library::eikonal(sp.clone()).unwrap();
        let g = start(&sp, grid, 1.2);
        for s in 0..=4 {
            assert!(verify_dpp_consistency(&c, &g, s, &DppOptions::brute_force()).unwrap() <= 1e-9);
        }
        assert!(verify_dpp_consistency(&c, &g, 5, &DppOptions::brute_force()).is_err());
    }

    #[test]
    fn eikonal_refinement_moves_value_by_at_most_step() {
        let sp = scalar_space();
        let c = library::eikonal(sp.clone()).unwrap();
        for x in [0.3, 0.55, 1.37, -2.1] {
            let coarse = TimeGrid::new(1.0, 0.125).unwrap();
            let fine = coarse.refined(2);
            let a = value_dpp(&c, &start(&sp, coarse, x), &DppOptions::quantized(1e-9)).unwrap();
            let b = value_dpp(&c, &start(&sp, fine, x), &DppOptions::quantized(1e-9)).unwrap();
            assert!((a - b).abs() <= 0.125 + 1e-12);
        }
    }

    #[test]
    fn statistics_are_sufficient() {
        let grid = TimeGrid::new(1.0, 0.2).unwrap();
        for eig in [vec![0.0], vec![-1.0, 0.0]] {
            let sp = Arc::new(SpectralSpace::new(eig).unwrap());
            for name in library::NAMES {
                let c = library::by_name(name, sp.clone()).unwrap();
                let gap = validate_statistic(&c, grid, 5, &mut rng_from_seed(8)).unwrap();
                assert_eq!(gap, 0.0, "{name}");
            }
        }
    }

    #[test]
    fn regularity_runmax_time_shift_vanishes() {
        let sp = scalar_space();
        let c = library::runmax(sp).unwrap();
        let grid = TimeGrid::new(1.0, 0.25).unwrap();
        let r = verify_value_regularity(&c, grid, 20, 1, &mut rng_from_seed(3)).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.levels[0].constants.time_shift, 0.0);
    }

    #[test]
    fn regularity_eikonal_lipschitz() {
        let sp = scalar_space();
        let c = library::eikonal(sp).unwrap();
        let grid = TimeGrid::new(1.0, 0.25).unwrap();
        let r = verify_value_regularity(&c, grid, 30, 1, &mut rng_from_seed(3)).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.levels.iter().all(|l| l.constants.space <= 1.0 + 1e-12));
    }
}
