use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

/// Scalar type the network code is generic over: plain `f64` for training,
/// [`Dual`] for directional derivatives of gradients.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + Send
    + Sync
    + std::fmt::Debug
{
    fn from_f64(x: f64) -> Self;
    fn value(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn is_finite(self) -> bool {
        self.value().is_finite()
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn value(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
}

/// Forward-mode dual number `value + tangent * eps`, `eps^2 = 0`.
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
    fn add(self, o: Dual) -> Dual {
        Dual::new(self.value + o.value, self.tangent + o.tangent)
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual::new(self.value - o.value, self.tangent - o.tangent)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual::new(self.value * o.value, self.tangent * o.value + self.value * o.tangent)
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        let v = self.value / o.value;
        Dual::new(v, (self.tangent - v * o.tangent) / o.value)
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.value, -self.tangent)
    }
}

impl AddAssign for Dual {
    fn add_assign(&mut self, o: Dual) {
        self.value += o.value;
        self.tangent += o.tangent;
    }
}

impl Real for Dual {
    fn from_f64(x: f64) -> Self {
        Dual::new(x, 0.0)
    }
    fn value(self) -> f64 {
        self.value
    }
    fn exp(self) -> Self {
        let e = self.value.exp();
        Dual::new(e, self.tangent * e)
    }
    fn ln(self) -> Self {
        Dual::new(self.value.ln(), self.tangent / self.value)
    }
    fn is_finite(self) -> bool {
        self.value.is_finite() && self.tangent.is_finite()
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    let one = T::from_f64(1.0);
    one / (one + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dual_tracks_derivatives() {
        let x = Dual::new(0.3, 1.0);
        let f = x * x * x + x.exp() / (x + Dual::from_f64(2.0));
        let h = 1e-6;
        let g = |v: f64| v * v * v + v.exp() / (v + 2.0);
        let fd = (g(0.3 + h) - g(0.3 - h)) / (2.0 * h);
        assert!((f.tangent - fd).abs() < 1e-8);
        let s = sigmoid(x);
        let sv = 1.0 / (1.0 + (-0.3f64).exp());
        assert!((s.tangent - sv * (1.0 - sv)).abs() < 1e-12);
        assert!((x.ln().tangent - 1.0 / 0.3).abs() < 1e-12);
    }
}
