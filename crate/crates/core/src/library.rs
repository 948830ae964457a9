//! Built-in coefficient sets selectable by name.
//!
//! Controls are `{−1, 0, 1}` in one dimension and `{0, ±e_k}` otherwise.

use std::sync::Arc;

use crate::dynamics::Coefficients;
use crate::error::{Error, Result};
use crate::hilbert::{HVec, SpectralSpace};
use crate::path::Path;
use crate::scalar::Scalar;

pub const NAMES: [&str; 3] = ["eikonal", "runmax", "feedback"];

pub fn unit_controls<T: Scalar>(dim: usize) -> Vec<HVec<T>> {
    if dim == 1 {
        return vec![HVec::new(vec![-T::one()]), HVec::zeros(1), HVec::new(vec![T::one()])];
    }
    let mut out = vec![HVec::zeros(dim)];
    for k in 0..dim {
        out.push(HVec::basis(dim, k));
        out.push(-&HVec::basis(dim, k));
    }
    out
}

fn endpoint_statistic<T: Scalar>(g: &Path<T>) -> Vec<T> {
    g.endpoint().coords().to_vec()
}

fn endpoint_and_max<T: Scalar>(g: &Path<T>) -> Vec<T> {
    let mut v = g.endpoint().coords().to_vec();
    v.push(g.sup_norm());
    v
}

/// `F = u`, `q = 0`, `φ = |γ(T)|`, `L = 1`. With `A = 0` the value is
/// `(|γ(t)| − (T − t))⁺`.
pub fn eikonal<T: Scalar>(space: Arc<SpectralSpace<T>>) -> Result<Coefficients<T>> {
    let controls = unit_controls(space.dim());
    Ok(Coefficients::new("eikonal", space, controls, T::one())?
        .with_drift(|_, u| u.clone())
        .with_terminal_cost(|g| g.endpoint().norm())
        .with_statistic(endpoint_statistic)
        .with_drift_bound(T::one()))
}

/// `F = u`, `q = 0`, `φ = ‖γ‖₀`, `L = 1`. Holding still is optimal, so the
/// value of a prefix is its running maximum.
pub fn runmax<T: Scalar>(space: Arc<SpectralSpace<T>>) -> Result<Coefficients<T>> {
    let controls = unit_controls(space.dim());
    Ok(Coefficients::new("runmax", space, controls, T::one())?
        .with_drift(|_, u| u.clone())
        .with_terminal_cost(|g| g.sup_norm())
        .with_statistic(endpoint_and_max)
        .with_drift_bound(T::one()))
}

/// Projection onto the closed unit ball.
fn project_unit<T: Scalar>(x: &HVec<T>) -> HVec<T> {
    let n = x.norm();
    if n <= T::one() {
        x.clone()
    } else {
        x.scale(T::one() / n)
    }
}

/// Path-dependent feedback:
/// `F = u − P(γ(t)) + ½ min(‖γ‖₀, 1) e₁`,
/// `q = ½|u|² + ½ min(‖γ‖₀, 2)`, `φ = |γ(T)|`, `L = 3`
/// (valid for eigenvalues with `|λ_k| ≤ 1.5`).
pub fn feedback<T: Scalar>(space: Arc<SpectralSpace<T>>) -> Result<Coefficients<T>> {
    if space.eigenvalues().iter().any(|&l| l < T::lit(-1.5)) {
        return Err(Error::InvalidArgument("feedback needs eigenvalues in [-1.5, 0]".into()));
    }
    let dim = space.dim();
    let controls = unit_controls(dim);
    let half = T::lit(0.5);
    Ok(Coefficients::new("feedback", space, controls, T::lit(3.0))?
        .with_drift(move |g, u| {
            let push = HVec::basis(dim, 0).scale(half * g.sup_norm().min(T::one()));
            &(u - &project_unit(g.endpoint())) + &push
        })
        .with_running_cost(move |g, u| half * u.norm_sq() + half * g.sup_norm().min(T::lit(2.0)))
        .with_terminal_cost(|g| g.endpoint().norm())
        .with_statistic(endpoint_and_max)
        .with_drift_bound(T::lit(2.5)))
}

pub fn by_name<T: Scalar>(name: &str, space: Arc<SpectralSpace<T>>) -> Result<Coefficients<T>> {
    match name {
        "eikonal" => eikonal(space),
        "runmax" => runmax(space),
        "feedback" => feedback(space),
        other => Err(Error::InvalidArgument(format!(
            "unknown coefficient set `{other}` (expected one of {})",
            NAMES.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::validate_hypothesis;
    use crate::path::TimeGrid;
    use crate::sampling::rng_from_seed;

    #[test]
    fn control_sets() {
        assert_eq!(unit_controls::<f64>(1).len(), 3);
        let c = unit_controls::<f64>(3);
        assert_eq!(c.len(), 7);
        assert!(c[0].is_zero());
        assert!(c.iter().all(|u| u.norm() <= 1.0));
    }

    #[test]
    fn declared_constants_hold() {
        let grid = TimeGrid::new(1.0, 0.125).unwrap();
        for eig in [vec![0.0], vec![-1.0], vec![0.0, -0.5], vec![-1.5, -0.2, 0.0]] {
            let sp = Arc::new(SpectralSpace::new(eig).unwrap());
            for name in NAMES {
                let c = by_name(name, sp.clone()).unwrap();
                let r = validate_hypothesis(&c, grid, 2000, &mut rng_from_seed(11)).unwrap();
                assert!(r.passed, "{name}: {:?}", r.lines);
            }
        }
    }

    #[test]
    fn feedback_rejects_fast_modes() {
        let sp = Arc::new(SpectralSpace::<f64>::new(vec![-2.0]).unwrap());
        assert!(feedback(sp).is_err());
    }

    #[test]
    fn unknown_name() {
        let sp = Arc::new(SpectralSpace::<f64>::zero_generator(1).unwrap());
        assert!(by_name("nope", sp).is_err());
    }

    #[test]
    fn feedback_values() {
        let sp = Arc::new(SpectralSpace::<f64>::zero_generator(1).unwrap());
        let grid = TimeGrid::new(1.0, 0.5).unwrap();
        let c = feedback(sp.clone()).unwrap();
        let g = Path::new(sp, grid, vec![HVec::new(vec![3.0]), HVec::new(vec![0.5])]).unwrap();
        let f = c.drift(&g, &c.controls()[2]);
        assert_eq!(f[0], 1.0 - 0.5 + 0.5);
        assert_eq!(c.running_cost(&g, &c.controls()[0]), 0.5 + 1.0);
    }
}
