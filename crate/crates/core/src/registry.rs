//! Built-in connection fixtures.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::connection::{AffineCoefficients, CoefficientField3};
use crate::fields::{Fd, MatrixField, Region, ScalarField};
use crate::{Error, Result};

/// Fixture names exposed on the command line.
pub const NAMES: [&str; 5] = ["flat", "constant", "sphere-lc", "pure-gauge", "cartan-flat"];

/// `Γ = 0` on an unbounded base.
pub fn flat(n: usize, r: usize) -> CoefficientField3 {
    CoefficientField3::zero(r, Region::unbounded(n))
}

/// Constant coefficient matrices `Γ_μ` on an unbounded base.
pub fn constant(gamma: &[DMatrix<f64>]) -> Result<CoefficientField3> {
    if gamma.is_empty() {
        return Err(Error::Dimension(
            "constant connection needs at least one matrix".into(),
        ));
    }
    CoefficientField3::constant(gamma, Region::unbounded(gamma.len()))
}

/// Polar-angle bounds of the sphere chart.
pub const SPHERE_THETA_MARGIN: f64 = 0.05;

/// Levi-Civita connection of the unit sphere in coordinates `(θ, φ)`:
/// `Γ^θ_{φφ} = −sin θ cos θ`, `Γ^φ_{θφ} = Γ^φ_{φθ} = cot θ`.
pub fn sphere_lc() -> CoefficientField3 {
    let region = Region::new(
        vec![SPHERE_THETA_MARGIN, f64::NEG_INFINITY],
        vec![PI - SPHERE_THETA_MARGIN, f64::INFINITY],
    )
    .expect("valid sphere region");
    CoefficientField3::parse(
        &[
            vec![vec!["0", "0"], vec!["0", "cot(x1)"]],
            vec![vec!["0", "-sin(x1)*cos(x1)"], vec!["cot(x1)", "0"]],
        ],
        region,
    )
    .expect("sphere coefficients parse")
}

/// Planar rotation by `angle`.
pub fn rotation(angle: f64) -> DMatrix<f64> {
    let (s, c) = angle.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

/// The flat connection `Γ_μ = −(∂_μ B) B⁻¹` of the gauge `B = rotation(α(x))`,
/// i.e. `Γ_μ = ∂_μα · [[0, 1], [−1, 0]]`.
#[derive(Clone, Debug)]
pub struct PureGauge {
    alpha: ScalarField,
    grad: Option<Vec<ScalarField>>,
    region: Region,
}

impl PureGauge {
    /// `grad`, when given, must be the gradient of `alpha`; otherwise it is
    /// obtained by central differences.
    pub fn new(alpha: ScalarField, grad: Option<Vec<ScalarField>>, region: Region) -> Result<Self> {
        let n = region.dim();
        if alpha.arity() != n {
            return Err(Error::Dimension(
                "gauge angle must be a field over the base".into(),
            ));
        }
        if let Some(g) = &grad {
            if g.len() != n || g.iter().any(|c| c.arity() != n) {
                return Err(Error::Dimension("gauge gradient needs n components".into()));
            }
        }
        Ok(PureGauge {
            alpha,
            grad,
            region,
        })
    }

    pub fn parse(alpha: &str, grad: Option<&[String]>, n: usize) -> Result<Self> {
        let alpha = ScalarField::parse_base(alpha, n)?;
        let grad = grad
            .map(|g| {
                g.iter()
                    .map(|s| ScalarField::parse_base(s, n))
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?;
        Self::new(alpha, grad, Region::unbounded(n))
    }

    pub fn n(&self) -> usize {
        self.region.dim()
    }

    pub fn angle(&self, x: &[f64]) -> Result<f64> {
        self.alpha.eval(x)
    }

    /// `B(x)`.
    pub fn gauge(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(rotation(self.alpha.eval(x)?))
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.grad {
            Some(g) => g.iter().map(|c| c.eval(x)).collect(),
            None => {
                let alpha = self.alpha.clone();
                Fd::default().gradient(|p| alpha.eval(p), x, &self.region)
            }
        }
    }

    pub fn connection(&self) -> CoefficientField3 {
        let me = self.clone();
        CoefficientField3::from_fn(2, self.region.clone(), move |x| {
            Ok(me
                .gradient(x)?
                .into_iter()
                .map(|d| DMatrix::from_row_slice(2, 2, &[0.0, d, -d, 0.0]))
                .collect())
        })
    }
}

/// The affine connection on a tangent bundle with `Γ = 0` and `G^μ_ν = δ^μ_ν`.
pub fn cartan_flat(n: usize) -> AffineCoefficients {
    AffineCoefficients::new(flat(n, n), MatrixField::identity(n, n))
        .expect("consistent cartan dimensions")
}

/// Affine connection with linear part `linear` and the Cartan choice `G = δ`.
pub fn with_cartan_inhomogeneity(linear: CoefficientField3) -> Result<AffineCoefficients> {
    let n = linear.n();
    if linear.r() != n {
        return Err(Error::Dimension(
            "the Cartan choice needs a tangent bundle (r = n)".into(),
        ));
    }
    AffineCoefficients::new(linear, MatrixField::identity(n, n))
}
