//! Grid-sampled paths `γ_t`, the bump/extension constructions, the sup norm
//! `‖·‖₀`, the metric `d∞`, and numerical Dupire derivatives.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::hilbert::{HVec, SpectralSpace};
use crate::scalar::Scalar;

const GRID_TOL: f64 = 1e-12;

/// Uniform grid `0, Δt, …, T` on the control horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid<T> {
    final_time: T,
    steps: usize,
}

impl<T: Scalar> TimeGrid<T> {
    /// `final_time / step` must be a positive integer (to 1e-12 relative).
    pub fn new(final_time: T, step: T) -> Result<Self> {
        if !(final_time > T::zero()) || !final_time.is_finite() {
            return Err(Error::InvalidGrid(format!("final horizon {final_time} must be positive")));
        }
        if !(step > T::zero()) || !step.is_finite() {
            return Err(Error::InvalidGrid(format!("step {step} must be positive")));
        }
        let ratio = final_time / step;
        let n = ratio.round();
        let slack = T::lit(GRID_TOL) * T::one().max(ratio);
        if n < T::one() || (ratio - n).abs() > slack {
            return Err(Error::InvalidGrid(format!(
                "horizon {final_time} is not an integer multiple of step {step}"
            )));
        }
        let steps = n.to_usize().ok_or_else(|| Error::InvalidGrid("too many steps".into()))?;
        Ok(Self { final_time, steps })
    }

    pub fn with_steps(final_time: T, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidGrid("at least one step required".into()));
        }
        Self::new(final_time, final_time / T::from_index(steps))
    }

    pub fn final_time(&self) -> T {
        self.final_time
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step(&self) -> T {
        self.final_time / T::from_index(self.steps)
    }

    pub fn time(&self, i: usize) -> T {
        if i == self.steps {
            self.final_time
        } else {
            self.final_time * T::from_index(i) / T::from_index(self.steps)
        }
    }

    /// Index of the grid point `t`, rejecting off-grid times.
    pub fn index_of(&self, t: T) -> Result<usize> {
        let ratio = t / self.step();
        let k = ratio.round();
        let slack = T::lit(1e-9) * T::one().max(ratio.abs());
        if k < T::zero() || (ratio - k).abs() > slack || k > T::from_index(self.steps) {
            return Err(Error::OffGrid(t.as_f64()));
        }
        Ok(k.to_usize().unwrap_or(0))
    }

    /// The grid with `factor` times as many steps.
    pub fn refined(&self, factor: usize) -> Self {
        Self { final_time: self.final_time, steps: self.steps * factor.max(1) }
    }
}

/// A path `γ_t : [0, t] → H` sampled on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Path<T> {
    space: Arc<SpectralSpace<T>>,
    grid: TimeGrid<T>,
    samples: Vec<HVec<T>>,
}

impl<T: Scalar> Path<T> {
    pub fn new(space: Arc<SpectralSpace<T>>, grid: TimeGrid<T>, samples: Vec<HVec<T>>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("a path needs at least one sample".into()));
        }
        if samples.len() > grid.steps() + 1 {
            return Err(Error::InvalidArgument(format!(
                "{} samples exceed the {} grid points",
                samples.len(),
                grid.steps() + 1
            )));
        }
        for s in &samples {
            space.check_dim(s)?;
        }
        Ok(Self { space, grid, samples })
    }

    /// The constant path `≡ x` on `[0, horizon]`.
    pub fn constant(space: Arc<SpectralSpace<T>>, grid: TimeGrid<T>, horizon: T, x: HVec<T>) -> Result<Self> {
        let k = grid.index_of(horizon)?;
        Self::new(space, grid, vec![x; k + 1])
    }

    /// Samples `f(t_i)` at grid points `0..=horizon_index`.
    pub fn from_fn(
        space: Arc<SpectralSpace<T>>,
        grid: TimeGrid<T>,
        horizon_index: usize,
        mut f: impl FnMut(T) -> HVec<T>,
    ) -> Result<Self> {
        let samples = (0..=horizon_index).map(|i| f(grid.time(i))).collect();
        Self::new(space, grid, samples)
    }

    pub fn space(&self) -> &Arc<SpectralSpace<T>> {
        &self.space
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn step(&self) -> T {
        self.grid.step()
    }

    pub fn samples(&self) -> &[HVec<T>] {
        &self.samples
    }

    pub fn horizon_index(&self) -> usize {
        self.samples.len() - 1
    }

    pub fn horizon(&self) -> T {
        self.grid.time(self.horizon_index())
    }

    /// `true` when the path reaches the final horizon `T`.
    pub fn is_terminal(&self) -> bool {
        self.horizon_index() == self.grid.steps()
    }

    /// `γ_t(t)`.
    pub fn endpoint(&self) -> &HVec<T> {
        self.samples.last().expect("paths are nonempty")
    }

    pub(crate) fn push(&mut self, x: HVec<T>) {
        debug_assert!(self.samples.len() <= self.grid.steps());
        self.samples.push(x);
    }

    pub(crate) fn endpoint_mut(&mut self) -> &mut HVec<T> {
        self.samples.last_mut().expect("paths are nonempty")
    }

    /// Same space and same grid.
    pub fn compatible(&self, other: &Self) -> bool {
        self.grid == other.grid && (Arc::ptr_eq(&self.space, &other.space) || self.space == other.space)
    }

    fn require_compatible(&self, other: &Self) -> Result<()> {
        if self.compatible(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// Value at an arbitrary time `r`, clamped to `[0, horizon]`, by linear
    /// interpolation between samples.
    pub fn value_at(&self, r: T) -> HVec<T> {
        let (k, w) = self.locate(r);
        if w.is_zero() {
            self.samples[k].clone()
        } else {
            self.samples[k].scale(T::one() - w).axpy(w, &self.samples[k + 1])
        }
    }

    /// Weight of the endpoint sample inside [`Path::value_at`]`(r)`.
    pub fn endpoint_weight(&self, r: T) -> T {
        let (k, w) = self.locate(r);
        let last = self.horizon_index();
        if k == last {
            T::one()
        } else if k + 1 == last {
            w
        } else {
            T::zero()
        }
    }

    fn locate(&self, r: T) -> (usize, T) {
        let last = self.horizon_index();
        if r >= self.horizon() {
            return (last, T::zero());
        }
        if r <= T::zero() {
            return (0, T::zero());
        }
        let pos = r / self.step();
        let k = pos.floor().to_usize().unwrap_or(0).min(last);
        let w = pos - T::from_index(k);
        if k == last || w <= T::lit(1e-12) {
            (k, T::zero())
        } else {
            (k, w)
        }
    }

    /// The restriction `γ_t|_{[0, t_k]}`.
    pub fn truncated(&self, index: usize) -> Result<Self> {
        if index > self.horizon_index() {
            return Err(Error::HorizonBeforePath {
                target: self.grid.time(index).as_f64(),
                horizon: self.horizon().as_f64(),
            });
        }
        Ok(Self {
            space: self.space.clone(),
            grid: self.grid,
            samples: self.samples[..=index].to_vec(),
        })
    }

    /// `γ^x_t`: the final sample is replaced by `γ_t(t) + x`.
    pub fn vertical_bump(&self, x: &HVec<T>) -> Result<Self> {
        self.space.check_dim(x)?;
        let mut out = self.clone();
        let end = out.endpoint_mut();
        *end = &*end + x;
        Ok(out)
    }

    /// `γ_{t,t̄}`: flat extension holding `γ_t(t)` on `(t, t̄]`.
    pub fn extend_flat(&self, tbar: T) -> Result<Self> {
        let k = self.target_index(tbar)?;
        self.extend_flat_to(k)
    }

    pub fn extend_flat_to(&self, index: usize) -> Result<Self> {
        self.check_target(index)?;
        let mut out = self.clone();
        let end = self.endpoint().clone();
        out.samples.resize(index + 1, end);
        Ok(out)
    }

    /// `γ_{t,t̄,A}`: on `(t, t̄]` the endpoint evolves under `e^{(s−t)A}`.
    pub fn extend_semigroup(&self, tbar: T) -> Result<Self> {
        let k = self.target_index(tbar)?;
        self.extend_semigroup_to(k)
    }

    pub fn extend_semigroup_to(&self, index: usize) -> Result<Self> {
        self.check_target(index)?;
        let t = self.horizon();
        let end = self.endpoint().clone();
        let mut out = self.clone();
        for i in self.horizon_index() + 1..=index {
            out.samples.push(self.space.semigroup_apply(self.grid.time(i) - t, &end)?);
        }
        Ok(out)
    }

    fn target_index(&self, tbar: T) -> Result<usize> {
        if tbar < self.horizon() - T::lit(1e-12) * T::one().max(self.horizon()) {
            return Err(Error::HorizonBeforePath { target: tbar.as_f64(), horizon: self.horizon().as_f64() });
        }
        self.grid.index_of(tbar)
    }

    fn check_target(&self, index: usize) -> Result<()> {
        if index < self.horizon_index() {
            return Err(Error::HorizonBeforePath {
                target: self.grid.time(index).as_f64(),
                horizon: self.horizon().as_f64(),
            });
        }
        if index > self.grid.steps() {
            return Err(Error::OffGrid(self.grid.time(index).as_f64()));
        }
        Ok(())
    }

    /// `‖γ_t‖₀ = max_s |γ_t(s)|` over grid samples.
    pub fn sup_norm(&self) -> T {
        self.samples.iter().map(|s| s.norm()).fold(T::zero(), T::max)
    }

    /// `‖γ_t‖_{0−}`: the sup over samples strictly before the horizon.
    pub fn sup_norm_before_endpoint(&self) -> T {
        self.samples[..self.horizon_index()].iter().map(|s| s.norm()).fold(T::zero(), T::max)
    }

    /// Pointwise difference of two paths with the same horizon.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    /// Pointwise sum of two paths with the same horizon.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn scale(&self, c: T) -> Self {
        Self {
            space: self.space.clone(),
            grid: self.grid,
            samples: self.samples.iter().map(|s| s.scale(c)).collect(),
        }
    }

    fn zip_with(&self, other: &Self, f: impl Fn(&HVec<T>, &HVec<T>) -> HVec<T>) -> Result<Self> {
        self.require_compatible(other)?;
        if self.horizon_index() != other.horizon_index() {
            return Err(Error::GridMismatch);
        }
        Ok(Self {
            space: self.space.clone(),
            grid: self.grid,
            samples: self.samples.iter().zip(&other.samples).map(|(a, b)| f(a, b)).collect(),
        })
    }

    /// Resamples onto the grid with `factor`× more steps by linear
    /// interpolation. The horizon is unchanged.
    pub fn refined(&self, factor: usize) -> Self {
        let factor = factor.max(1);
        let grid = self.grid.refined(factor);
        let fine_last = self.horizon_index() * factor;
        let samples = (0..=fine_last)
            .map(|i| {
                let (k, r) = (i / factor, i % factor);
                if r == 0 {
                    self.samples[k].clone()
                } else {
                    let w = T::from_index(r) / T::from_index(factor);
                    self.samples[k].scale(T::one() - w).axpy(w, &self.samples[k + 1])
                }
            })
            .collect();
        Self { space: self.space.clone(), grid, samples }
    }
}

/// `d∞(γ_t, η_s) = |t − s| + ‖γ_{t,T,A} − η_{s,T,A}‖₀`.
pub fn metric_d_infty<T: Scalar>(g: &Path<T>, h: &Path<T>) -> Result<T> {
    g.require_compatible(h)?;
    let last = g.grid.steps();
    let ge = g.extend_semigroup_to(last)?;
    let he = h.extend_semigroup_to(last)?;
    let gap = ge.sub(&he)?.sup_norm();
    Ok((g.horizon() - h.horizon()).abs() + gap)
}

/// A real functional on paths.
pub trait PathFunctional<T>: Send + Sync {
    fn eval(&self, g: &Path<T>) -> T;
}

impl<T, F> PathFunctional<T> for F
where
    F: Fn(&Path<T>) -> T + Send + Sync,
{
    fn eval(&self, g: &Path<T>) -> T {
        self(g)
    }
}

/// Finite-difference Dupire derivatives. `dt` is `None` at the final horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct DupireDerivatives<T> {
    pub dt: Option<T>,
    pub dx: HVec<T>,
}

/// Vertical step `10⁻⁵·max(1, |γ(t)|)`.
pub fn default_vertical_step<T: Scalar>(g: &Path<T>) -> T {
    T::lit(1e-5) * T::one().max(g.endpoint().norm())
}

/// Forward difference along the flat extension for `∂_t`, central
/// differences of endpoint bumps for `∂_x`.
pub fn dupire_derivatives<T: Scalar>(f: &dyn PathFunctional<T>, g: &Path<T>) -> Result<DupireDerivatives<T>> {
    dupire_derivatives_with_step(f, g, default_vertical_step(g))
}

pub fn dupire_derivatives_with_step<T: Scalar>(
    f: &dyn PathFunctional<T>,
    g: &Path<T>,
    h: T,
) -> Result<DupireDerivatives<T>> {
    let dx = vertical_gradient(f, g, h)?;
    let dt = if g.is_terminal() {
        None
    } else {
        let ext = g.extend_flat_to(g.horizon_index() + 1)?;
        Some((f.eval(&ext) - f.eval(g)) / g.step())
    };
    Ok(DupireDerivatives { dt, dx })
}

pub fn vertical_gradient<T: Scalar>(f: &dyn PathFunctional<T>, g: &Path<T>, h: T) -> Result<HVec<T>> {
    let n = g.dim();
    let mut dx = HVec::zeros(n);
    for k in 0..n {
        let e = HVec::basis(n, k).scale(h);
        let up = f.eval(&g.vertical_bump(&e)?);
        let down = f.eval(&g.vertical_bump(&-&e)?);
        dx.coords_mut()[k] = (up - down) / (h + h);
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(l: &[f64], final_time: f64, step: f64) -> (Arc<SpectralSpace<f64>>, TimeGrid<f64>) {
        (Arc::new(SpectralSpace::new(l.to_vec()).unwrap()), TimeGrid::new(final_time, step).unwrap())
    }

    fn scalar_path(vals: &[f64], step: f64, final_time: f64) -> Path<f64> {
        let (sp, grid) = setup(&[0.0], final_time, step);
        Path::new(sp, grid, vals.iter().map(|&v| HVec::new(vec![v])).collect()).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(1.0, 0.3).is_err());
        assert!(TimeGrid::new(1.0, 0.0).is_err());
        assert!(TimeGrid::new(-1.0, 0.1).is_err());
        let g = TimeGrid::new(1.0, 0.1).unwrap();
        assert_eq!(g.steps(), 10);
        assert_eq!(g.time(10), 1.0);
        assert_eq!(g.index_of(0.3).unwrap(), 3);
        assert!(g.index_of(0.35).is_err());
        assert!(g.index_of(1.1).is_err());
    }

    #[test]
    fn vertical_bump_examples() {
        let (sp, grid) = setup(&[0.0, 0.0], 1.0, 0.25);
        let c = HVec::new(vec![1.0, -2.0]);
        let g = Path::constant(sp.clone(), grid, 1.0, c).unwrap();
        assert_eq!(g.vertical_bump(&HVec::zeros(2)).unwrap(), g);

        let z = Path::constant(sp, grid, 1.0, HVec::zeros(2)).unwrap();
        let b = z.vertical_bump(&HVec::basis(2, 0)).unwrap();
        assert_eq!(b.endpoint(), &HVec::basis(2, 0));
        assert!(b.samples()[..4].iter().all(|s| s.is_zero()));

        let x = HVec::new(vec![0.5, 0.25]);
        assert_eq!(b.vertical_bump(&x).unwrap().vertical_bump(&-&x).unwrap(), b);
        assert!(b.vertical_bump(&HVec::zeros(3)).is_err());
    }

    #[test]
    fn extend_flat_examples() {
        let g = scalar_path(&[0.0, 1.0, 2.0], 0.25, 1.0);
        assert_eq!(g.extend_flat(0.5).unwrap(), g);
        let e = g.extend_flat(1.0).unwrap();
        assert_eq!(e.horizon(), 1.0);
        assert_eq!(e.endpoint(), g.endpoint());
        assert_eq!(e.samples()[3][0], 2.0);
        let c = scalar_path(&[3.0, 3.0], 0.25, 1.0).extend_flat(0.75).unwrap();
        assert!(c.samples().iter().all(|s| s[0] == 3.0));
        assert!(g.extend_flat(0.25).is_err());
    }

    #[test]
    fn extend_semigroup_examples() {
        let step = 2f64.ln() / 4.0;
        let (sp, grid) = setup(&[-1.0], 8.0 * step, step);
        let g = Path::constant(sp, grid, 4.0 * step, HVec::new(vec![1.0])).unwrap();
        let e = g.extend_semigroup(8.0 * step).unwrap();
        assert!((e.endpoint()[0] - 0.5).abs() < 1e-14);
        assert_eq!(g.extend_semigroup(g.horizon()).unwrap(), g);

        let z = scalar_path(&[0.0, 1.0, -1.0], 0.25, 1.0);
        assert_eq!(z.extend_semigroup(1.0).unwrap(), z.extend_flat(1.0).unwrap());
    }

    #[test]
    fn sup_norm_examples() {
        assert_eq!(scalar_path(&[0.0, 0.0], 0.5, 1.0).sup_norm(), 0.0);
        let g = scalar_path(&[0.0, 2.0, 1.0], 0.5, 1.0);
        assert_eq!(g.sup_norm(), 2.0);
        assert_eq!(g.sup_norm_before_endpoint(), 2.0);
        let x = HVec::new(vec![4.0]);
        let b = g.vertical_bump(&x).unwrap();
        assert_eq!(b.sup_norm(), (g.endpoint() + &x).norm());
    }

    #[test]
    fn metric_examples() {
        let g = scalar_path(&[0.0, 2.0, 1.0], 0.25, 1.0);
        assert_eq!(metric_d_infty(&g, &g).unwrap(), 0.0);

        let c = scalar_path(&[0.7, 0.7], 0.25, 1.0);
        let h = c.extend_flat(0.75).unwrap();
        assert!((metric_d_infty(&c, &h).unwrap() - 0.5).abs() < 1e-15);

        let (sp, grid) = setup(&[-1.0, -0.2], 1.0, 0.25);
        let g = Path::from_fn(sp.clone(), grid, 2, |t| HVec::new(vec![t, 1.0 - t])).unwrap();
        let v = HVec::new(vec![0.3, -0.4]);
        let h = Path::from_fn(sp, grid, 2, |t| &HVec::new(vec![t, 1.0 - t]) + &v).unwrap();
        assert!((metric_d_infty(&g, &h).unwrap() - v.norm()).abs() < 1e-15);

        let other = scalar_path(&[0.0], 0.5, 1.0);
        assert_eq!(metric_d_infty(&c, &other), Err(Error::GridMismatch));
    }

    #[test]
    fn dupire_quadratic_cylinder() {
        let (sp, grid) = setup(&[0.0, -1.0], 1.0, 0.125);
        let g = Path::from_fn(sp, grid, 3, |t| HVec::new(vec![1.0 + t, -2.0 * t])).unwrap();
        let f = |p: &Path<f64>| p.endpoint().norm_sq();
        let d = dupire_derivatives(&f, &g).unwrap();
        assert_eq!(d.dt, Some(0.0));
        let v = g.endpoint();
        for k in 0..2 {
            assert!((d.dx[k] - 2.0 * v[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn dupire_time_linear() {
        let g = scalar_path(&[0.3, 0.1], 0.25, 1.0);
        let f = |p: &Path<f64>| 2.5 * p.horizon();
        let d = dupire_derivatives(&f, &g).unwrap();
        assert!((d.dt.unwrap() - 2.5).abs() < 1e-12);
        assert_eq!(d.dx[0], 0.0);
    }

    #[test]
    fn dupire_dt_undefined_at_final_horizon() {
        let g = scalar_path(&[0.3, 0.1, 0.2, 0.0, 1.0], 0.25, 1.0);
        let f = |p: &Path<f64>| p.endpoint()[0] * 3.0;
        let d = dupire_derivatives(&f, &g).unwrap();
        assert!(d.dt.is_none());
        assert!((d.dx[0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn refinement_preserves_nodes() {
        let g = scalar_path(&[0.0, 2.0, 1.0], 0.25, 1.0);
        let r = g.refined(2);
        assert_eq!(r.horizon(), g.horizon());
        assert_eq!(r.samples().len(), 5);
        assert_eq!(r.samples()[1][0], 1.0);
        assert_eq!(r.sup_norm(), g.sup_norm());
    }

    #[test]
    fn value_at_interpolates() {
        let g = scalar_path(&[0.0, 2.0, 1.0], 0.25, 1.0);
        assert_eq!(g.value_at(0.125)[0], 1.0);
        assert_eq!(g.value_at(0.9)[0], 1.0);
        assert_eq!(g.endpoint_weight(0.375), 0.5);
        assert_eq!(g.endpoint_weight(0.1), 0.0);
        assert_eq!(g.endpoint_weight(0.6), 1.0);
    }
}
