//! Spectral truncation of the state space `H`.
//!
//! The generator `A` is diagonal in a fixed orthonormal basis with
//! nonpositive eigenvalues, so the semigroup `e^{tA}` is a contraction, the
//! adjoint coincides with `A`, and the Yosida approximation has the closed
//! form `μλ/(μ−λ)` per mode.

use std::ops::{Add, Index, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Element of the truncated Hilbert space, stored as eigenbasis coordinates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HVec<T> {
    coords: Vec<T>,
}

impl<T: Scalar> HVec<T> {
    pub fn new(coords: Vec<T>) -> Self {
        Self { coords }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { coords: vec![T::zero(); dim] }
    }

    /// The `k`-th basis vector `e_k`.
    pub fn basis(dim: usize, k: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.coords[k] = T::one();
        v
    }

    pub fn from_f64(coords: &[f64]) -> Self {
        Self { coords: coords.iter().map(|&c| T::lit(c)).collect() }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[T] {
        &self.coords
    }

    pub fn coords_mut(&mut self) -> &mut [T] {
        &mut self.coords
    }

    pub fn into_coords(self) -> Vec<T> {
        self.coords
    }

    pub fn dot(&self, other: &Self) -> T {
        debug_assert_eq!(self.dim(), other.dim());
        self.coords.iter().zip(&other.coords).map(|(&a, &b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> T {
        self.dot(self)
    }

    pub fn norm(&self) -> T {
        self.norm_sq().sqrt()
    }

    pub fn scale(&self, c: T) -> Self {
        Self { coords: self.coords.iter().map(|&a| a * c).collect() }
    }

    /// `self + c·other`.
    pub fn axpy(&self, c: T, other: &Self) -> Self {
        Self {
            coords: self.coords.iter().zip(&other.coords).map(|(&a, &b)| a + c * b).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().all(|c| c.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.coords.iter().all(|c| c.is_zero())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.coords.iter().map(|c| c.as_f64()).collect()
    }
}

impl<T> Index<usize> for HVec<T> {
    type Output = T;
    fn index(&self, k: usize) -> &T {
        &self.coords[k]
    }
}

impl<T: Scalar> Add for &HVec<T> {
    type Output = HVec<T>;
    fn add(self, rhs: &HVec<T>) -> HVec<T> {
        debug_assert_eq!(self.dim(), rhs.dim());
        HVec { coords: self.coords.iter().zip(&rhs.coords).map(|(&a, &b)| a + b).collect() }
    }
}

impl<T: Scalar> Sub for &HVec<T> {
    type Output = HVec<T>;
    fn sub(self, rhs: &HVec<T>) -> HVec<T> {
        debug_assert_eq!(self.dim(), rhs.dim());
        HVec { coords: self.coords.iter().zip(&rhs.coords).map(|(&a, &b)| a - b).collect() }
    }
}

impl<T: Scalar> Add for HVec<T> {
    type Output = HVec<T>;
    fn add(self, rhs: HVec<T>) -> HVec<T> {
        &self + &rhs
    }
}

impl<T: Scalar> Sub for HVec<T> {
    type Output = HVec<T>;
    fn sub(self, rhs: HVec<T>) -> HVec<T> {
        &self - &rhs
    }
}

impl<T: Scalar> Neg for &HVec<T> {
    type Output = HVec<T>;
    fn neg(self) -> HVec<T> {
        HVec { coords: self.coords.iter().map(|&a| -a).collect() }
    }
}

impl<T: Scalar> Mul<T> for &HVec<T> {
    type Output = HVec<T>;
    fn mul(self, c: T) -> HVec<T> {
        self.scale(c)
    }
}

/// Finite spectral truncation of `H` carrying the diagonal generator `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSpace<T> {
    eigenvalues: Vec<T>,
}

impl<T: Scalar> SpectralSpace<T> {
    /// Builds the space from the eigenvalues of `A`; every eigenvalue must be
    /// finite and nonpositive.
    pub fn new(eigenvalues: Vec<T>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::InvalidSpace("dimension must be at least 1".into()));
        }
        if let Some((k, &l)) = eigenvalues.iter().enumerate().find(|(_, l)| !l.is_finite()) {
            return Err(Error::InvalidSpace(format!("eigenvalue {k} is not finite ({l})")));
        }
        if let Some((k, &l)) = eigenvalues.iter().enumerate().find(|(_, &l)| l > T::zero()) {
            return Err(Error::InvalidSpace(format!(
                "eigenvalue {k} = {l} is positive; the semigroup must be a contraction"
            )));
        }
        Ok(Self { eigenvalues })
    }

    /// `A = 0` on `R^dim`.
    pub fn zero_generator(dim: usize) -> Result<Self> {
        Self::new(vec![T::zero(); dim])
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[T] {
        &self.eigenvalues
    }

    /// `M₁ = sup_s |e^{sA}|`, which is 1 for a diagonal contraction.
    pub fn semigroup_bound(&self) -> T {
        T::one()
    }

    pub fn check_dim(&self, x: &HVec<T>) -> Result<()> {
        if x.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: x.dim() });
        }
        Ok(())
    }

    /// `e^{tA} x` for `t ≥ 0`.
    pub fn semigroup_apply(&self, t: T, x: &HVec<T>) -> Result<HVec<T>> {
        if t < T::zero() || t.is_nan() {
            return Err(Error::NegativeTime(t.as_f64()));
        }
        self.check_dim(x)?;
        Ok(HVec::new(
            self.eigenvalues.iter().zip(x.coords()).map(|(&l, &c)| c * (l * t).exp()).collect(),
        ))
    }

    /// `A x`.
    pub fn generator_apply(&self, x: &HVec<T>) -> Result<HVec<T>> {
        self.check_dim(x)?;
        Ok(HVec::new(self.eigenvalues.iter().zip(x.coords()).map(|(&l, &c)| l * c).collect()))
    }

    /// `A* x`; the generator is real diagonal, hence self-adjoint.
    pub fn adjoint_apply(&self, x: &HVec<T>) -> Result<HVec<T>> {
        self.generator_apply(x)
    }

    /// Yosida approximation `A_μ x = μA(μI − A)⁻¹ x`.
    pub fn yosida_apply(&self, mu: T, x: &HVec<T>) -> Result<HVec<T>> {
        if mu <= T::zero() || mu.is_nan() {
            return Err(Error::NonPositiveYosida(mu.as_f64()));
        }
        self.check_dim(x)?;
        Ok(HVec::new(
            self.eigenvalues
                .iter()
                .zip(x.coords())
                .map(|(&l, &c)| mu * l / (mu - l) * c)
                .collect(),
        ))
    }

    /// Bound on `|A_μ x − A x| / |x|`, namely `max_k λ_k²/(μ−λ_k)`.
    pub fn yosida_error_bound(&self, mu: T) -> T {
        self.eigenvalues
            .iter()
            .map(|&l| l * l / (mu - l))
            .fold(T::zero(), |a, b| a.max(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn space(l: &[f64]) -> SpectralSpace<f64> {
        SpectralSpace::new(l.to_vec()).unwrap()
    }

    #[test]
    fn semigroup_examples() {
        let s = space(&[0.0, -1.0]);
        let y = s.semigroup_apply(2f64.ln(), &HVec::new(vec![1.0, 1.0])).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-15 && (y[1] - 0.5).abs() < 1e-15);

        let x = HVec::new(vec![0.3, -4.0]);
        assert_eq!(s.semigroup_apply(0.0, &x).unwrap(), x);

        let z = space(&[0.0, 0.0]);
        let x = HVec::new(vec![3.0, -2.0]);
        assert_eq!(z.semigroup_apply(7.0, &x).unwrap(), x);
    }

    #[test]
    fn semigroup_rejects_negative_time() {
        let s = space(&[-1.0]);
        assert_eq!(
            s.semigroup_apply(-0.1, &HVec::new(vec![1.0])),
            Err(Error::NegativeTime(-0.1))
        );
    }

    #[test]
    fn space_validation() {
        assert!(SpectralSpace::<f64>::new(vec![]).is_err());
        assert!(SpectralSpace::new(vec![0.0, 0.5]).is_err());
        assert!(SpectralSpace::new(vec![f64::NAN]).is_err());
        assert!(SpectralSpace::new(vec![0.0, -3.0]).is_ok());
    }

    #[test]
    fn yosida_examples() {
        let s = space(&[0.0, -1.0]);
        let x = HVec::new(vec![1.0, 1.0]);
        let y = s.yosida_apply(1.0, &x).unwrap();
        assert_eq!(y.coords(), &[0.0, -0.5]);
        assert!(s.yosida_apply(0.0, &x).is_err());
        assert!(s.yosida_apply(-1.0, &x).is_err());
        assert!(s.yosida_apply(2.0, &HVec::zeros(2)).unwrap().is_zero());
    }

    #[test]
    fn yosida_converges_to_generator() {
        let s = space(&[0.0, -1.0]);
        let x = HVec::new(vec![1.0, 1.0]);
        let ax = s.generator_apply(&x).unwrap();
        let mut prev = f64::INFINITY;
        for e in 1..=6 {
            let mu = 10f64.powi(e);
            let err = (&s.yosida_apply(mu, &x).unwrap() - &ax).norm();
            // direct formula: |μ·(−1)/(μ+1) + 1| = 1/(μ+1)
            assert!((err - 1.0 / (mu + 1.0)).abs() < 1e-12);
            assert!(err < prev);
            prev = err;
        }
        assert!(prev < 1e-5);
    }

    #[test]
    fn adjoint_examples() {
        let s = space(&[0.0, -1.0]);
        assert_eq!(s.adjoint_apply(&HVec::new(vec![1.0, 1.0])).unwrap().coords(), &[0.0, -1.0]);
        let z = space(&[0.0, 0.0]);
        assert!(z.adjoint_apply(&HVec::new(vec![5.0, -1.0])).unwrap().is_zero());
        let s = space(&[-2.0, -3.0]);
        assert_eq!(s.adjoint_apply(&HVec::new(vec![1.0, 2.0])).unwrap().coords(), &[-2.0, -6.0]);
    }

    #[test]
    fn strong_continuity_is_monotone() {
        let s = space(&[-0.5, -3.0, 0.0]);
        let x = HVec::new(vec![1.0, -2.0, 0.7]);
        let mut prev = f64::INFINITY;
        for k in 0..30 {
            let t = 2f64.powi(-k);
            let gap = (&s.semigroup_apply(t, &x).unwrap() - &x).norm();
            assert!(gap <= prev);
            prev = gap;
        }
        assert!(prev < 1e-5);
    }

    fn arb_case() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64, f64)> {
        (1usize..4).prop_flat_map(|n| {
            (
                prop::collection::vec(-5.0..=0.0f64, n),
                prop::collection::vec(-10.0..10.0f64, n),
                0.0..5.0f64,
                0.0..5.0f64,
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn contraction((l, x, t, _s) in arb_case()) {
            let sp = space(&l);
            let x = HVec::new(x);
            prop_assert!(sp.semigroup_apply(t, &x).unwrap().norm() <= x.norm());
        }

        #[test]
        fn semigroup_law((l, x, t, s) in arb_case()) {
            let sp = space(&l);
            let x = HVec::new(x);
            let a = sp.semigroup_apply(s, &sp.semigroup_apply(t, &x).unwrap()).unwrap();
            let b = sp.semigroup_apply(s + t, &x).unwrap();
            prop_assert!((&a - &b).norm() <= 1e-12 * (1.0 + x.norm()));
        }

        #[test]
        fn yosida_error_within_bound((l, x, t, _s) in arb_case()) {
            let sp = space(&l);
            let x = HVec::new(x);
            let mu = 1.0 + 100.0 * t;
            let err = (&sp.yosida_apply(mu, &x).unwrap() - &sp.generator_apply(&x).unwrap()).norm();
            prop_assert!(err <= sp.yosida_error_bound(mu) * x.norm() * (1.0 + 1e-12) + 1e-14);
        }
    }
}
