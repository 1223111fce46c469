//! Scalar element types the tape can run over.
//!
//! `f64` gives ordinary values and gradients. [`Dual`] carries a first-order
//! tangent alongside each value, so running the reverse pass over duals
//! differentiates the gradient itself in the seeded direction.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

pub trait Scalar:
    Copy
    + Debug
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + Send
    + Sync
    + 'static
{
    fn constant(x: f64) -> Self;
    fn primal(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;

    fn zero() -> Self {
        Self::constant(0.0)
    }

    fn scale(self, c: f64) -> Self {
        self * Self::constant(c)
    }
}

impl Scalar for f64 {
    fn constant(x: f64) -> Self {
        x
    }
    fn primal(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn scale(self, c: f64) -> Self {
        self * c
    }
}

/// Forward-mode dual number `value + tangent·ε`, `ε² = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Dual {
    pub value: f64,
    pub tangent: f64,
}

impl Dual {
    pub fn new(value: f64, tangent: f64) -> Self {
        Self { value, tangent }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, rhs: Dual) -> Dual {
        Dual::new(self.value + rhs.value, self.tangent + rhs.tangent)
    }
}

impl AddAssign for Dual {
    fn add_assign(&mut self, rhs: Dual) {
        self.value += rhs.value;
        self.tangent += rhs.tangent;
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, rhs: Dual) -> Dual {
        Dual::new(self.value - rhs.value, self.tangent - rhs.tangent)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, rhs: Dual) -> Dual {
        Dual::new(
            self.value * rhs.value,
            self.value * rhs.tangent + self.tangent * rhs.value,
        )
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, rhs: Dual) -> Dual {
        let q = self.value / rhs.value;
        Dual::new(q, (self.tangent - q * rhs.tangent) / rhs.value)
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.value, -self.tangent)
    }
}

impl Scalar for Dual {
    fn constant(x: f64) -> Self {
        Dual::new(x, 0.0)
    }
    fn primal(self) -> f64 {
        self.value
    }
    fn exp(self) -> Self {
        let e = self.value.exp();
        Dual::new(e, e * self.tangent)
    }
    fn ln(self) -> Self {
        Dual::new(self.value.ln(), self.tangent / self.value)
    }
    fn tanh(self) -> Self {
        let t = self.value.tanh();
        Dual::new(t, (1.0 - t * t) * self.tangent)
    }
    fn scale(self, c: f64) -> Self {
        Dual::new(self.value * c, self.tangent * c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn dual_tangents_match_finite_differences() {
        let x = 0.37;
        let d = Dual::new(x, 1.0);
        assert!((d.exp().tangent - fd(f64::exp, x)).abs() < 1e-8);
        assert!((d.ln().tangent - fd(f64::ln, x)).abs() < 1e-8);
        assert!((d.tanh().tangent - fd(f64::tanh, x)).abs() < 1e-8);
        let q = Dual::constant(2.0) / d;
        assert!((q.tangent - fd(|x| 2.0 / x, x)).abs() < 1e-6);
        let p = d * d * d;
        assert!((p.tangent - 3.0 * x * x).abs() < 1e-14);
    }
}
