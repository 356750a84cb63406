//! Forward-mode number types: plain values, first-order duals and second-order jets.

use smallvec::{smallvec, SmallVec};
use std::ops::{Add, Div, Mul, Neg, Sub};

type Buf = SmallVec<[f64; 4]>;
type HessBuf = SmallVec<[f64; 16]>;

/// Arithmetic carrier for expression evaluation.
///
/// Elementary functions are expressed through [`Scalar::chain`], which lifts a
/// scalar function given its value and first two derivatives at the current value.
pub trait Scalar:
    Clone
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn constant(value: f64, dim: usize) -> Self;
    fn variable(index: usize, value: f64, dim: usize) -> Self;
    fn value(&self) -> f64;
    fn chain(&self, f0: f64, f1: f64, f2: f64) -> Self;
}

impl Scalar for f64 {
    fn constant(value: f64, _dim: usize) -> Self {
        value
    }
    fn variable(_index: usize, value: f64, _dim: usize) -> Self {
        value
    }
    fn value(&self) -> f64 {
        *self
    }
    fn chain(&self, f0: f64, _f1: f64, _f2: f64) -> Self {
        f0
    }
}

/// Value plus gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Dual {
    pub value: f64,
    pub grad: Buf,
}

impl Scalar for Dual {
    fn constant(value: f64, dim: usize) -> Self {
        Dual { value, grad: smallvec![0.0; dim] }
    }
    fn variable(index: usize, value: f64, dim: usize) -> Self {
        let mut grad: Buf = smallvec![0.0; dim];
        grad[index] = 1.0;
        Dual { value, grad }
    }
    fn value(&self) -> f64 {
        self.value
    }
    fn chain(&self, f0: f64, f1: f64, _f2: f64) -> Self {
        Dual { value: f0, grad: self.grad.iter().map(|g| f1 * g).collect() }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(mut self, rhs: Dual) -> Dual {
        self.value += rhs.value;
        self.grad.iter_mut().zip(&rhs.grad).for_each(|(a, b)| *a += b);
        self
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(mut self, rhs: Dual) -> Dual {
        self.value -= rhs.value;
        self.grad.iter_mut().zip(&rhs.grad).for_each(|(a, b)| *a -= b);
        self
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, rhs: Dual) -> Dual {
        let grad = self.grad.iter().zip(&rhs.grad).map(|(a, b)| a * rhs.value + self.value * b).collect();
        Dual { value: self.value * rhs.value, grad }
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, rhs: Dual) -> Dual {
        let inv = 1.0 / rhs.value;
        let q = self.value * inv;
        let grad = self.grad.iter().zip(&rhs.grad).map(|(a, b)| (a - q * b) * inv).collect();
        Dual { value: q, grad }
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(mut self) -> Dual {
        self.value = -self.value;
        self.grad.iter_mut().for_each(|g| *g = -*g);
        self
    }
}

/// Value, gradient and full Hessian (row-major `dim x dim`), propagated jointly.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet2 {
    pub value: f64,
    pub grad: Buf,
    pub hess: HessBuf,
}

impl Jet2 {
    pub fn dim(&self) -> usize {
        self.grad.len()
    }
}

impl Scalar for Jet2 {
    fn constant(value: f64, dim: usize) -> Self {
        Jet2 { value, grad: smallvec![0.0; dim], hess: smallvec![0.0; dim * dim] }
    }
    fn variable(index: usize, value: f64, dim: usize) -> Self {
        let mut j = Jet2::constant(value, dim);
        j.grad[index] = 1.0;
        j
    }
    fn value(&self) -> f64 {
        self.value
    }
    fn chain(&self, f0: f64, f1: f64, f2: f64) -> Self {
        let n = self.dim();
        let grad: Buf = self.grad.iter().map(|g| f1 * g).collect();
        let mut hess: HessBuf = smallvec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                hess[i * n + j] = f1 * self.hess[i * n + j] + f2 * self.grad[i] * self.grad[j];
            }
        }
        Jet2 { value: f0, grad, hess }
    }
}

impl Add for Jet2 {
    type Output = Jet2;
    fn add(mut self, rhs: Jet2) -> Jet2 {
        self.value += rhs.value;
        self.grad.iter_mut().zip(&rhs.grad).for_each(|(a, b)| *a += b);
        self.hess.iter_mut().zip(&rhs.hess).for_each(|(a, b)| *a += b);
        self
    }
}

impl Sub for Jet2 {
    type Output = Jet2;
    fn sub(mut self, rhs: Jet2) -> Jet2 {
        self.value -= rhs.value;
        self.grad.iter_mut().zip(&rhs.grad).for_each(|(a, b)| *a -= b);
        self.hess.iter_mut().zip(&rhs.hess).for_each(|(a, b)| *a -= b);
        self
    }
}

impl Mul for Jet2 {
    type Output = Jet2;
    fn mul(self, rhs: Jet2) -> Jet2 {
        let n = self.dim();
        let (a, b) = (self.value, rhs.value);
        let grad: Buf = self.grad.iter().zip(&rhs.grad).map(|(ga, gb)| ga * b + a * gb).collect();
        let mut hess: HessBuf = smallvec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let k = i * n + j;
                hess[k] = self.hess[k] * b
                    + a * rhs.hess[k]
                    + self.grad[i] * rhs.grad[j]
                    + self.grad[j] * rhs.grad[i];
            }
        }
        Jet2 { value: a * b, grad, hess }
    }
}

impl Div for Jet2 {
    type Output = Jet2;
    fn div(self, rhs: Jet2) -> Jet2 {
        let b = rhs.value;
        let recip = rhs.chain(1.0 / b, -1.0 / (b * b), 2.0 / (b * b * b));
        self * recip
    }
}

impl Neg for Jet2 {
    type Output = Jet2;
    fn neg(mut self) -> Jet2 {
        self.value = -self.value;
        self.grad.iter_mut().for_each(|g| *g = -*g);
        self.hess.iter_mut().for_each(|h| *h = -*h);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jet_product_rule() {
        let x = Jet2::variable(0, 2.0, 2);
        let y = Jet2::variable(1, 3.0, 2);
        let p = x.clone() * x * y;
        assert_eq!(p.value, 12.0);
        assert_eq!(p.grad.as_slice(), &[12.0, 4.0]);
        assert_eq!(p.hess.as_slice(), &[6.0, 4.0, 4.0, 0.0]);
    }

    #[test]
    fn dual_quotient_rule() {
        let x = Dual::variable(0, 2.0, 1);
        let one = Dual::constant(1.0, 1);
        let q = one / x;
        assert_eq!(q.value, 0.5);
        assert_eq!(q.grad[0], -0.25);
    }
}
