//! Smooth substitutes for `‖·‖₀²`.
//!
//! `S(γ) = (‖γ‖₀² − |γ(t)|²)² / ‖γ‖₀²` is Dupire-differentiable with
//! `∂_t S = 0`, and `Υᴹ(γ) = S(γ) + M|γ(t)|²` satisfies
//! `‖γ‖₀² ≤ Υ²(γ) ≤ 3‖γ‖₀²`. The two-path forms measure the gap between a
//! path and the semigroup extension of an earlier anchor.

use crate::error::{Error, Result};
use crate::hilbert::HVec;
use crate::path::Path;
use crate::scalar::Scalar;

/// Weight `M` of the endpoint term in `Υᴹ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaugeParams<T> {
    pub m: T,
}

impl<T: Scalar> GaugeParams<T> {
    pub fn new(m: T) -> Self {
        Self { m }
    }

    /// `M = 2`, the weight used by the gauge-type function `Ῡ²`.
    pub fn standard() -> Self {
        Self { m: T::lit(2.0) }
    }

    /// Rejects `M < 2`, where the quasi-triangle and differential
    /// inequalities no longer hold.
    pub fn require_at_least_two(&self) -> Result<()> {
        if self.m < T::lit(2.0) {
            return Err(Error::InvalidArgument(format!("gauge weight M = {} must be ≥ 2", self.m)));
        }
        Ok(())
    }
}

pub fn eval_s<T: Scalar>(g: &Path<T>) -> T {
    let sup_sq = g.sup_norm().powi(2);
    if sup_sq.is_zero() {
        return T::zero();
    }
    let gap = sup_sq - g.endpoint().norm_sq();
    gap * gap / sup_sq
}

/// `∂_x S(γ) = −4(‖γ‖₀² − |γ(t)|²)γ(t)/‖γ‖₀²` (zero for the zero path).
pub fn grad_s<T: Scalar>(g: &Path<T>) -> HVec<T> {
    let sup_sq = g.sup_norm().powi(2);
    if sup_sq.is_zero() {
        return HVec::zeros(g.dim());
    }
    let end = g.endpoint();
    let factor = -T::lit(4.0) * (sup_sq - end.norm_sq()) / sup_sq;
    end.scale(factor)
}

pub fn eval_upsilon<T: Scalar>(params: GaugeParams<T>, g: &Path<T>) -> T {
    eval_s(g) + params.m * g.endpoint().norm_sq()
}

pub fn grad_upsilon<T: Scalar>(params: GaugeParams<T>, g: &Path<T>) -> HVec<T> {
    let end = g.endpoint();
    grad_s(g).axpy(params.m + params.m, end)
}

/// `η_s − γ_{t,s,A}` with the earlier-horizon path as the anchor; the
/// arguments are swapped when `anchor` ends later than `g`.
pub fn pair_difference<T: Scalar>(anchor: &Path<T>, g: &Path<T>) -> Result<Path<T>> {
    let (early, late) = if anchor.horizon_index() <= g.horizon_index() { (anchor, g) } else { (g, anchor) };
    if !early.compatible(late) {
        return Err(Error::GridMismatch);
    }
    let ext = early.extend_semigroup_to(late.horizon_index())?;
    late.sub(&ext)
}

/// `Υᴹ(γ_t, η_s) = Υᴹ(η_s − γ_{t,s,A})`, plus `|s − t|²` when `with_time`
/// is set (the form `Ῡᴹ`).
pub fn eval_upsilon_pair<T: Scalar>(
    params: GaugeParams<T>,
    anchor: &Path<T>,
    g: &Path<T>,
    with_time: bool,
) -> Result<T> {
    let diff = pair_difference(anchor, g)?;
    let mut v = eval_upsilon(params, &diff);
    if with_time {
        v += (g.horizon() - anchor.horizon()).powi(2);
    }
    Ok(v)
}

/// Vertical derivative of `η ↦ Υᴹ(η − γ_{t,s,A})` at `η = g` (requires the
/// anchor to end no later than `g`).
pub fn grad_upsilon_pair<T: Scalar>(params: GaugeParams<T>, anchor: &Path<T>, g: &Path<T>) -> Result<HVec<T>> {
    if anchor.horizon_index() > g.horizon_index() {
        return Err(Error::InvalidArgument("anchor must end no later than the evaluated path".into()));
    }
    Ok(grad_upsilon(params, &pair_difference(anchor, g)?))
}

/// Metric modulus of the gauge `Ῡ²`: `Ῡ²(γ, η) ≤ δ ⇒ d∞(γ, η) ≤ (1+√3)√δ`.
pub fn gauge_modulus<T: Scalar>(delta: T) -> T {
    (T::one() + T::lit(3.0).sqrt()) * delta.max(T::zero()).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::SpectralSpace;
    use crate::path::{dupire_derivatives, metric_d_infty, TimeGrid};
    use std::sync::Arc;

    fn scalar_path(vals: &[f64]) -> Path<f64> {
        let sp = Arc::new(SpectralSpace::new(vec![0.0]).unwrap());
        let grid = TimeGrid::new(1.0, 0.25).unwrap();
        Path::new(sp, grid, vals.iter().map(|&v| HVec::new(vec![v])).collect()).unwrap()
    }

    #[test]
    fn s_examples() {
        assert_eq!(eval_s(&scalar_path(&[0.0, 0.0, 0.0])), 0.0);
        assert_eq!(eval_s(&scalar_path(&[1.5, 1.5, 1.5])), 0.0);
        assert_eq!(eval_s(&scalar_path(&[0.0, 2.0, 1.0])), 2.25);
    }

    #[test]
    fn grad_s_examples() {
        assert!(grad_s(&scalar_path(&[-0.5, -0.5])).is_zero());
        assert_eq!(grad_s(&scalar_path(&[0.0, 2.0, 1.0]))[0], -3.0);
        // endpoint strictly dominates the earlier samples
        assert!(grad_s(&scalar_path(&[0.0, 1.0, -3.0])).is_zero());
        assert!(grad_s(&scalar_path(&[0.0])).is_zero());
    }

    #[test]
    fn upsilon_examples() {
        let p = GaugeParams::new(2.0);
        let z = scalar_path(&[0.0, 0.0]);
        assert_eq!(eval_upsilon(p, &z), 0.0);
        assert!(grad_upsilon(p, &z).is_zero());

        let c = scalar_path(&[1.5, 1.5, 1.5]);
        assert_eq!(eval_upsilon(p, &c), 2.0 * 1.5 * 1.5);
        assert_eq!(grad_upsilon(p, &c)[0], 4.0 * 1.5);

        let g = scalar_path(&[0.0, 2.0, 1.0]);
        assert_eq!(eval_upsilon(p, &g), 4.25);
        assert_eq!(grad_upsilon(p, &g)[0], 1.0);
    }

    #[test]
    fn upsilon_pair_examples() {
        let p = GaugeParams::new(3.0);
        let g = scalar_path(&[0.0, 2.0, 1.0]);
        assert_eq!(eval_upsilon_pair(p, &g, &g, false).unwrap(), 0.0);
        assert_eq!(eval_upsilon_pair(p, &g, &g, true).unwrap(), 0.0);

        let zero = scalar_path(&[0.0, 0.0, 0.0]);
        let c = scalar_path(&[0.7, 0.7, 0.7]);
        assert!((eval_upsilon_pair(p, &zero, &c, false).unwrap() - 3.0 * 0.49).abs() < 1e-15);

        let short = scalar_path(&[0.4, 0.4]);
        let long = short.extend_flat(0.75).unwrap();
        let v = eval_upsilon_pair(p, &short, &long, true).unwrap();
        assert!((v - 0.5f64.powi(2)).abs() < 1e-15);
        // symmetric in the argument order
        assert_eq!(eval_upsilon_pair(p, &long, &short, true).unwrap(), v);
    }

    #[test]
    fn grad_s_matches_finite_differences() {
        let sp = Arc::new(SpectralSpace::new(vec![0.0, -1.0]).unwrap());
        let grid = TimeGrid::new(1.0, 0.125).unwrap();
        let g = Path::from_fn(sp, grid, 6, |t: f64| HVec::new(vec![(3.0 * t).sin() + 0.2, 1.0 - t * t])).unwrap();
        assert!(g.endpoint().norm() < g.sup_norm_before_endpoint());
        let d = dupire_derivatives(&|p: &Path<f64>| eval_s(p), &g).unwrap();
        let a = grad_s(&g);
        assert!((&d.dx - &a).norm() < 1e-6);
        assert_eq!(d.dt, Some(0.0));
    }

    #[test]
    fn gauge_smallness_controls_metric() {
        let a = scalar_path(&[0.0, 0.5]);
        let b = scalar_path(&[0.0, 0.6, 0.55, 0.5]);
        let rho = eval_upsilon_pair(GaugeParams::standard(), &a, &b, true).unwrap();
        assert!(metric_d_infty(&a, &b).unwrap() <= gauge_modulus(rho));
    }

    #[test]
    fn weight_below_two_rejected() {
        assert!(GaugeParams::new(1.5).require_at_least_two().is_err());
        assert!(GaugeParams::new(2.0).require_at_least_two().is_ok());
    }
}
