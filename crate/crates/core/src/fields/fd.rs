use nalgebra::{DMatrix, DVector};

use super::{Region, ScalarField};
use crate::tolerances::{FD_FIRST_REL, FD_SECOND_REL};
use crate::{Error, Result};

/// Values that central differences can be taken of.
pub trait FdValue: Sized {
    /// `(self - minus) / denom`.
    fn quotient(self, minus: &Self, denom: f64) -> Self;
    /// `self += other * s`.
    fn add_scaled(&mut self, other: &Self, s: f64);
    fn zeros_like(&self) -> Self;
}

impl FdValue for f64 {
    fn quotient(self, minus: &Self, denom: f64) -> Self {
        (self - minus) / denom
    }

    fn add_scaled(&mut self, other: &Self, s: f64) {
        *self += other * s;
    }

    fn zeros_like(&self) -> Self {
        0.0
    }
}

impl FdValue for DVector<f64> {
    fn quotient(self, minus: &Self, denom: f64) -> Self {
        (self - minus) / denom
    }

    fn add_scaled(&mut self, other: &Self, s: f64) {
        self.axpy(s, other, 1.0);
    }

    fn zeros_like(&self) -> Self {
        DVector::zeros(self.len())
    }
}

impl FdValue for DMatrix<f64> {
    fn quotient(self, minus: &Self, denom: f64) -> Self {
        (self - minus) / denom
    }

    fn add_scaled(&mut self, other: &Self, s: f64) {
        *self += other * s;
    }

    fn zeros_like(&self) -> Self {
        DMatrix::zeros(self.nrows(), self.ncols())
    }
}

impl<T: FdValue> FdValue for Vec<T> {
    fn quotient(self, minus: &Self, denom: f64) -> Self {
        self.into_iter()
            .zip(minus)
            .map(|(a, b)| a.quotient(b, denom))
            .collect()
    }

    fn add_scaled(&mut self, other: &Self, s: f64) {
        for (a, b) in self.iter_mut().zip(other) {
            a.add_scaled(b, s);
        }
    }

    fn zeros_like(&self) -> Self {
        self.iter().map(FdValue::zeros_like).collect()
    }
}

/// Central-difference settings: relative steps for first derivatives and
/// for the outer stage of nested second derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fd {
    pub first_rel: f64,
    pub second_rel: f64,
}

impl Default for Fd {
    fn default() -> Self {
        Fd {
            first_rel: FD_FIRST_REL,
            second_rel: FD_SECOND_REL,
        }
    }
}

impl Fd {
    pub fn with_first(first_rel: f64) -> Self {
        Fd {
            first_rel,
            ..Fd::default()
        }
    }

    /// Settings for the outer difference of a nested derivative.
    pub fn outer(&self) -> Fd {
        Fd {
            first_rel: self.second_rel,
            second_rel: self.second_rel,
        }
    }

    pub fn step(&self, coord: f64) -> f64 {
        self.first_rel * coord.abs().max(1.0)
    }

    /// `∂f/∂x^axis` at `x` with step `h`.
    pub fn partial_with_step<T: FdValue>(
        &self,
        f: impl Fn(&[f64]) -> Result<T>,
        x: &[f64],
        axis: usize,
        h: f64,
        region: &Region,
    ) -> Result<T> {
        let mut plus = x.to_vec();
        let mut minus = x.to_vec();
        plus[axis] += h;
        minus[axis] -= h;
        region.check(&plus)?;
        region.check(&minus)?;
        // The realized step differs from h by rounding of x ± h.
        let denom = plus[axis] - minus[axis];
        Ok(f(&plus)?.quotient(&f(&minus)?, denom))
    }

    pub fn partial<T: FdValue>(
        &self,
        f: impl Fn(&[f64]) -> Result<T>,
        x: &[f64],
        axis: usize,
        region: &Region,
    ) -> Result<T> {
        self.partial_with_step(f, x, axis, self.step(x[axis]), region)
    }

    /// All partials `∂_σ f`, σ = 0..dim.
    pub fn gradient<T: FdValue>(
        &self,
        f: impl Fn(&[f64]) -> Result<T>,
        x: &[f64],
        region: &Region,
    ) -> Result<Vec<T>> {
        (0..x.len())
            .map(|axis| self.partial(&f, x, axis, region))
            .collect()
    }

    /// `v^σ ∂_σ f`, skipping axes with zero weight.
    pub fn directional<T: FdValue>(
        &self,
        f: impl Fn(&[f64]) -> Result<T>,
        x: &[f64],
        v: &[f64],
        region: &Region,
    ) -> Result<T> {
        if v.len() != x.len() {
            return Err(Error::dim("direction and point dimensions differ"));
        }
        let mut acc: Option<T> = None;
        for (axis, &w) in v.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let d = self.partial(&f, x, axis, region)?;
            match acc.as_mut() {
                Some(a) => a.add_scaled(&d, w),
                None => {
                    let mut a = d.zeros_like();
                    a.add_scaled(&d, w);
                    acc = Some(a);
                }
            }
        }
        match acc {
            Some(a) => Ok(a),
            None => Ok(f(x)?.zeros_like()),
        }
    }
}

/// Central difference of a scalar field; `h` defaults to `1e-5·max(1, |x_axis|)`.
pub fn fd_partial(
    f: &ScalarField,
    x: &[f64],
    axis: usize,
    h: Option<f64>,
    region: &Region,
) -> Result<f64> {
    let fd = Fd::default();
    let h = h.unwrap_or_else(|| fd.step(x[axis]));
    fd.partial_with_step(|p| f.eval(p), x, axis, h, region)
}
