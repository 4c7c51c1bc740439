//! Forward-mode dual numbers. Nesting `Dual<Dual<f64>>` yields second derivatives.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar type an [`Expression`](super::Expression) can be evaluated on.
pub trait Real:
    Clone
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn constant(c: f64) -> Self;
    /// Underlying real value (innermost `value` for nested duals).
    fn real(&self) -> f64;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn powi(&self, n: i32) -> Self;
    fn powf(&self, p: f64) -> Self;
    fn scale(&self, c: f64) -> Self;
}

impl Real for f64 {
    fn constant(c: f64) -> Self {
        c
    }
    fn real(&self) -> f64 {
        *self
    }
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn ln(&self) -> Self {
        f64::ln(*self)
    }
    fn powi(&self, n: i32) -> Self {
        f64::powi(*self, n)
    }
    fn powf(&self, p: f64) -> Self {
        f64::powf(*self, p)
    }
    fn scale(&self, c: f64) -> Self {
        self * c
    }
}

/// Value plus partials over the active coordinates.
///
/// An empty `partials` vector stands for all-zero partials, so constants
/// never allocate.
#[derive(Debug, Clone, PartialEq)]
pub struct Dual<T> {
    pub value: T,
    pub partials: Vec<T>,
}

impl<T: Real> Dual<T> {
    /// Independent variable with a unit partial in slot `slot` of `len`.
    pub fn variable(value: T, slot: usize, len: usize) -> Self {
        let mut partials = vec![T::constant(0.0); len];
        partials[slot] = T::constant(1.0);
        Dual { value, partials }
    }

    pub fn partial(&self, i: usize) -> T {
        self.partials.get(i).cloned().unwrap_or_else(|| T::constant(0.0))
    }

    /// Chain rule for a unary primitive with outer derivative `df`.
    fn chain(value: T, df: T, partials: &[T]) -> Self {
        Dual { value, partials: partials.iter().map(|p| p.clone() * df.clone()).collect() }
    }
}

fn zip_partials<T: Real>(a: &[T], b: &[T], f: impl Fn(Option<&T>, Option<&T>) -> T) -> Vec<T> {
    let n = a.len().max(b.len());
    (0..n).map(|i| f(a.get(i), b.get(i))).collect()
}

impl<T: Real> Add for Dual<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let partials = zip_partials(&self.partials, &rhs.partials, |a, b| match (a, b) {
            (Some(a), Some(b)) => a.clone() + b.clone(),
            (Some(a), None) => a.clone(),
            (None, Some(b)) => b.clone(),
            (None, None) => unreachable!(),
        });
        Dual { value: self.value + rhs.value, partials }
    }
}

impl<T: Real> Sub for Dual<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        let partials = zip_partials(&self.partials, &rhs.partials, |a, b| match (a, b) {
            (Some(a), Some(b)) => a.clone() - b.clone(),
            (Some(a), None) => a.clone(),
            (None, Some(b)) => -b.clone(),
            (None, None) => unreachable!(),
        });
        Dual { value: self.value - rhs.value, partials }
    }
}

impl<T: Real> Mul for Dual<T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let (u, v) = (&self.value, &rhs.value);
        let partials = zip_partials(&self.partials, &rhs.partials, |a, b| match (a, b) {
            (Some(a), Some(b)) => a.clone() * v.clone() + u.clone() * b.clone(),
            (Some(a), None) => a.clone() * v.clone(),
            (None, Some(b)) => u.clone() * b.clone(),
            (None, None) => unreachable!(),
        });
        Dual { value: self.value * rhs.value, partials }
    }
}

impl<T: Real> Div for Dual<T> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let (u, v) = (&self.value, &rhs.value);
        let v2 = v.clone() * v.clone();
        let partials = zip_partials(&self.partials, &rhs.partials, |a, b| match (a, b) {
            (Some(a), Some(b)) => (a.clone() * v.clone() - u.clone() * b.clone()) / v2.clone(),
            (Some(a), None) => a.clone() / v.clone(),
            (None, Some(b)) => -(u.clone() * b.clone()) / v2.clone(),
            (None, None) => unreachable!(),
        });
        Dual { value: self.value / rhs.value, partials }
    }
}

impl<T: Real> Neg for Dual<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Dual { value: -self.value, partials: self.partials.into_iter().map(|p| -p).collect() }
    }
}

impl<T: Real> Real for Dual<T> {
    fn constant(c: f64) -> Self {
        Dual { value: T::constant(c), partials: Vec::new() }
    }
    fn real(&self) -> f64 {
        self.value.real()
    }
    fn sin(&self) -> Self {
        Self::chain(self.value.sin(), self.value.cos(), &self.partials)
    }
    fn cos(&self) -> Self {
        Self::chain(self.value.cos(), -self.value.sin(), &self.partials)
    }
    fn exp(&self) -> Self {
        let e = self.value.exp();
        Self::chain(e.clone(), e, &self.partials)
    }
    fn ln(&self) -> Self {
        Self::chain(self.value.ln(), T::constant(1.0) / self.value.clone(), &self.partials)
    }
    fn powi(&self, n: i32) -> Self {
        if n == 0 {
            return Self::constant(1.0);
        }
        let df = self.value.powi(n - 1).scale(n as f64);
        Self::chain(self.value.powi(n), df, &self.partials)
    }
    fn powf(&self, p: f64) -> Self {
        if p == 0.0 {
            return Self::constant(1.0);
        }
        let df = self.value.powf(p - 1.0).scale(p);
        Self::chain(self.value.powf(p), df, &self.partials)
    }
    fn scale(&self, c: f64) -> Self {
        Dual { value: self.value.scale(c), partials: self.partials.iter().map(|p| p.scale(c)).collect() }
    }
}
