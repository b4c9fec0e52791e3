//! Connection coefficients (2-index, 3-index, affine), adapted frames and
//! coefficient transformation laws.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::fields::{
    base_vars, bundle_vars, frame_derivatives, invert, Fd, FrameField, MatrixField, Region,
    ScalarField,
};
use crate::tolerances::SINGULAR_DET;
use crate::{Error, Result};

type Gamma3Fn = dyn Fn(&[f64]) -> Result<Vec<DMatrix<f64>>> + Send + Sync;

#[derive(Clone)]
enum Gamma3Kind {
    Matrices(Vec<MatrixField>),
    Func(Arc<Gamma3Fn>),
}

/// 3-index coefficients `Γ^a_{bμ}(x)` of a linear connection: one r×r
/// matrix `Γ_μ` per base direction, entry `(a, b)`.
#[derive(Clone)]
pub struct CoefficientField3 {
    n: usize,
    r: usize,
    region: Region,
    kind: Gamma3Kind,
}

impl fmt::Debug for CoefficientField3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CoefficientField3(n={}, r={})", self.n, self.r)
    }
}

impl CoefficientField3 {
    pub fn new(r: usize, gamma: Vec<MatrixField>, region: Region) -> Result<Self> {
        let n = region.dim();
        if gamma.len() != n {
            return Err(Error::dim(format!(
                "need one coefficient matrix per base direction ({n}), got {}",
                gamma.len()
            )));
        }
        if gamma
            .iter()
            .any(|g| g.rows() != r || g.cols() != r || g.arity() != n)
        {
            return Err(Error::dim(
                "coefficient matrices must be r×r fields over the base",
            ));
        }
        Ok(CoefficientField3 {
            n,
            r,
            region,
            kind: Gamma3Kind::Matrices(gamma),
        })
    }

    /// Coefficients computed jointly for all directions by a closure.
    pub fn from_fn(
        r: usize,
        region: Region,
        f: impl Fn(&[f64]) -> Result<Vec<DMatrix<f64>>> + Send + Sync + 'static,
    ) -> Self {
        CoefficientField3 {
            n: region.dim(),
            r,
            region,
            kind: Gamma3Kind::Func(Arc::new(f)),
        }
    }

    pub fn zero(r: usize, region: Region) -> Self {
        let n = region.dim();
        CoefficientField3 {
            n,
            r,
            kind: Gamma3Kind::Matrices(vec![MatrixField::zeros(r, r, n); n]),
            region,
        }
    }

    pub fn constant(gamma: &[DMatrix<f64>], region: Region) -> Result<Self> {
        let n = region.dim();
        let r = gamma.first().map_or(0, DMatrix::nrows);
        Self::new(
            r,
            gamma.iter().map(|g| MatrixField::constant(g, n)).collect(),
            region,
        )
    }

    /// Parses `tables[mu][a][b]` as expressions in `x1..xn`.
    pub fn parse<T: AsRef<str>>(tables: &[Vec<Vec<T>>], region: Region) -> Result<Self> {
        let n = region.dim();
        let vars = base_vars(n);
        let gamma = tables
            .iter()
            .map(|t| MatrixField::parse(t, &vars))
            .collect::<Result<Vec<_>>>()?;
        let r = gamma.first().map_or(0, MatrixField::rows);
        Self::new(r, gamma, region)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    /// `[Γ_0(x), …, Γ_{n-1}(x)]`.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        self.region.check(x)?;
        match &self.kind {
            Gamma3Kind::Matrices(g) => g.iter().map(|m| m.eval(x)).collect(),
            Gamma3Kind::Func(f) => {
                let g = f(x)?;
                if g.len() != self.n || g.iter().any(|m| m.nrows() != self.r || m.ncols() != self.r)
                {
                    return Err(Error::dim("coefficient closure returned wrong shape"));
                }
                if g.iter().flat_map(|m| m.iter()).any(|v| !v.is_finite()) {
                    return Err(Error::non_finite("coefficient closure"));
                }
                Ok(g)
            }
        }
    }

    /// `Σ_μ Γ_μ v^μ`.
    pub fn contract(&self, x: &[f64], v: &[f64]) -> Result<DMatrix<f64>> {
        let g = self.eval(x)?;
        let mut acc = DMatrix::zeros(self.r, self.r);
        for (gm, &w) in g.iter().zip(v) {
            if w != 0.0 {
                acc += gm * w;
            }
        }
        Ok(acc)
    }

    /// Coefficients relative to the changed frames, as a new field.
    pub fn transformed(
        &self,
        change: &FrameChange,
        base_frame: Option<&FrameField>,
        fd: Fd,
    ) -> Result<CoefficientField3> {
        change.check_dims(self.n, self.r)?;
        let g3 = self.clone();
        let change = change.clone();
        let frame = base_frame.cloned();
        Ok(CoefficientField3::from_fn(
            self.r,
            self.region.clone(),
            move |x| transform_three_index(&g3, &change, frame.as_ref(), x, &fd),
        ))
    }
}

/// Split affine coefficients `Γ^a_μ = −Γ^a_{bμ} u^b + G^a_μ`.
#[derive(Clone, Debug)]
pub struct AffineCoefficients {
    linear: CoefficientField3,
    inhom: MatrixField,
}

impl AffineCoefficients {
    pub fn new(linear: CoefficientField3, inhom: MatrixField) -> Result<Self> {
        if inhom.rows() != linear.r() || inhom.cols() != linear.n() || inhom.arity() != linear.n() {
            return Err(Error::dim(
                "inhomogeneous part must be an r×n field over the base",
            ));
        }
        Ok(AffineCoefficients { linear, inhom })
    }

    pub fn linear(&self) -> &CoefficientField3 {
        &self.linear
    }

    pub fn inhom(&self) -> &MatrixField {
        &self.inhom
    }

    pub fn n(&self) -> usize {
        self.linear.n()
    }

    pub fn r(&self) -> usize {
        self.linear.r()
    }

    /// `G(x)`, entry `(a, μ)`.
    pub fn eval_inhom(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.linear.region().check(x)?;
        self.inhom.eval(x)
    }

    /// Both parts relative to the changed frames.
    pub fn transformed(
        &self,
        change: &FrameChange,
        base_frame: Option<&FrameField>,
        fd: Fd,
    ) -> Result<AffineCoefficients> {
        let linear = self.linear.transformed(change, base_frame, fd)?;
        let (n, r) = (self.n(), self.r());
        let inhom = self.inhom.clone();
        let ch = change.clone();
        let g = MatrixField::from_fn(r, n, n, move |x| {
            transform_inhomogeneous(&inhom.eval(x)?, &ch, x)
        });
        AffineCoefficients::new(linear, g)
    }
}

#[derive(Clone, Debug)]
enum TwoIndexSource {
    Fields(MatrixField),
    Linear(CoefficientField3),
    Affine(AffineCoefficients),
}

/// 2-index coefficients `Γ^a_μ(p)` over the bundle region, returned as an
/// r×n matrix with entry `(a, μ)`.
#[derive(Clone, Debug)]
pub struct TwoIndexField {
    n: usize,
    r: usize,
    region: Region,
    source: TwoIndexSource,
}

impl TwoIndexField {
    /// From an r×n matrix field over the n+r bundle coordinates.
    pub fn new(n: usize, r: usize, entries: MatrixField, region: Region) -> Result<Self> {
        if entries.rows() != r
            || entries.cols() != n
            || entries.arity() != n + r
            || region.dim() != n + r
        {
            return Err(Error::dim(
                "2-index coefficients must be an r×n field over E",
            ));
        }
        Ok(TwoIndexField {
            n,
            r,
            region,
            source: TwoIndexSource::Fields(entries),
        })
    }

    /// Parses `table[a][mu]` as expressions in `u1..u{n+r}`.
    pub fn parse<T: AsRef<str>>(
        n: usize,
        r: usize,
        table: &[Vec<T>],
        region: Region,
    ) -> Result<Self> {
        let entries = table
            .iter()
            .flatten()
            .map(|s| ScalarField::parse_bundle(s.as_ref(), n, r))
            .collect::<Result<Vec<_>>>()?;
        if table.len() != r || table.iter().any(|row| row.len() != n) {
            return Err(Error::dim("2-index table must have r rows of n entries"));
        }
        Self::new(n, r, MatrixField::from_entries(r, n, entries)?, region)
    }

    pub fn from_fn(
        n: usize,
        r: usize,
        region: Region,
        f: impl Fn(&[f64]) -> Result<DMatrix<f64>> + Send + Sync + 'static,
    ) -> Result<Self> {
        Self::new(n, r, MatrixField::from_fn(r, n, n + r, f), region)
    }

    /// The field `−Γ^a_{bμ}(x) u^b`; the fibre directions are unbounded.
    pub fn from_linear(g3: &CoefficientField3) -> Self {
        let region = g3.region().product(&Region::unbounded(g3.r()));
        TwoIndexField {
            n: g3.n(),
            r: g3.r(),
            region,
            source: TwoIndexSource::Linear(g3.clone()),
        }
    }

    /// The field `−Γ^a_{bμ}(x) u^b + G^a_μ(x)`.
    pub fn from_affine(aff: &AffineCoefficients) -> Self {
        let region = aff.linear().region().product(&Region::unbounded(aff.r()));
        TwoIndexField {
            n: aff.n(),
            r: aff.r(),
            region,
            source: TwoIndexSource::Affine(aff.clone()),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn eval(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        if p.len() != self.n + self.r {
            return Err(Error::dim("bundle point has wrong dimension"));
        }
        match &self.source {
            TwoIndexSource::Fields(m) => {
                self.region.check(p)?;
                m.eval(p)
            }
            TwoIndexSource::Linear(g3) => two_index_from_linear(g3, p),
            TwoIndexSource::Affine(aff) => two_index_from_affine(aff, p),
        }
    }
}

/// `Γ^a_μ(p) = −Γ^a_{bμ}(π(p)) u^b(p)`.
pub fn two_index_from_linear(g3: &CoefficientField3, p: &[f64]) -> Result<DMatrix<f64>> {
    let (n, r) = (g3.n(), g3.r());
    if p.len() != n + r {
        return Err(Error::dim("bundle point has wrong dimension"));
    }
    let gamma = g3.eval(&p[..n])?;
    let u = nalgebra::DVector::from_column_slice(&p[n..]);
    let mut out = DMatrix::zeros(r, n);
    for (mu, g) in gamma.iter().enumerate() {
        out.set_column(mu, &(-(g * &u)));
    }
    Ok(out)
}

/// `Γ^a_μ(p) = −Γ^a_{bμ}(π(p)) u^b(p) + G^a_μ(π(p))`.
pub fn two_index_from_affine(aff: &AffineCoefficients, p: &[f64]) -> Result<DMatrix<f64>> {
    let lin = two_index_from_linear(aff.linear(), p)?;
    Ok(lin + aff.eval_inhom(&p[..aff.n()])?)
}

/// An admissible change of specialized frames: base `Ẽ_μ = B^ν_μ E_ν`
/// (matrix entry `(ν, μ)`) and fibre `ẽ_a = B^b_a e_b` (entry `(b, a)`).
#[derive(Clone, Debug)]
pub struct FrameChange {
    base: MatrixField,
    fibre: MatrixField,
}

impl FrameChange {
    pub fn new(base: MatrixField, fibre: MatrixField) -> Result<Self> {
        let n = base.rows();
        if base.cols() != n || fibre.rows() != fibre.cols() {
            return Err(Error::dim("frame change blocks must be square"));
        }
        if base.arity() != n || fibre.arity() != n {
            return Err(Error::dim(
                "frame change blocks must be fields over the base",
            ));
        }
        Ok(FrameChange { base, fibre })
    }

    pub fn identity(n: usize, r: usize) -> Self {
        FrameChange {
            base: MatrixField::identity(n, n),
            fibre: MatrixField::identity(r, n),
        }
    }

    pub fn n(&self) -> usize {
        self.base.rows()
    }

    pub fn r(&self) -> usize {
        self.fibre.rows()
    }

    pub fn base(&self) -> &MatrixField {
        &self.base
    }

    pub fn fibre(&self) -> &MatrixField {
        &self.fibre
    }

    pub fn eval_base(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        checked(self.base.eval(x)?)
    }

    pub fn eval_fibre(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        checked(self.fibre.eval(x)?)
    }

    /// This change followed by `then`: matrices `B₁·B₂` on both blocks.
    pub fn then(&self, then: &FrameChange) -> Result<FrameChange> {
        let product = |a: &MatrixField, b: &MatrixField| {
            let (a, b) = (a.clone(), b.clone());
            MatrixField::from_fn(a.rows(), b.cols(), a.arity(), move |x| {
                Ok(a.eval(x)? * b.eval(x)?)
            })
        };
        FrameChange::new(
            product(&self.base, &then.base),
            product(&self.fibre, &then.fibre),
        )
    }

    /// The base frame after the change, `E·B_base`.
    pub fn changed_frame(
        &self,
        base_frame: Option<&FrameField>,
        region: &Region,
    ) -> Result<FrameField> {
        let b = self.base.clone();
        let n = self.n();
        let matrix = match base_frame {
            Some(e) => {
                let e = e.matrix().clone();
                MatrixField::from_fn(n, n, n, move |x| Ok(e.eval(x)? * b.eval(x)?))
            }
            None => b,
        };
        FrameField::new(matrix, region.clone())
    }

    fn check_dims(&self, n: usize, r: usize) -> Result<()> {
        if self.n() != n || self.r() != r {
            return Err(Error::dim(format!(
                "frame change is for (n, r) = ({}, {}), connection has ({n}, {r})",
                self.n(),
                self.r()
            )));
        }
        Ok(())
    }
}

fn checked(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let det = m.determinant();
    if det.abs() < SINGULAR_DET {
        return Err(Error::SingularFrame { det: det.abs() });
    }
    Ok(m)
}

/// A fibre-respecting bundle coordinate change given by its forward map
/// `ũ(u)`: n base components depending on `u1..un` and r fibre components.
#[derive(Clone, Debug)]
pub struct BundleCoordChange {
    n: usize,
    r: usize,
    maps: Vec<ScalarField>,
}

impl BundleCoordChange {
    pub fn new(n: usize, r: usize, maps: Vec<ScalarField>) -> Result<Self> {
        if maps.len() != n + r || maps.iter().any(|m| m.arity() != n + r) {
            return Err(Error::dim("coordinate change needs n+r components over E"));
        }
        Ok(BundleCoordChange { n, r, maps })
    }

    pub fn parse<T: AsRef<str>>(n: usize, r: usize, comps: &[T]) -> Result<Self> {
        let maps = comps
            .iter()
            .map(|s| ScalarField::parse_bundle(s.as_ref(), n, r))
            .collect::<Result<Vec<_>>>()?;
        Self::new(n, r, maps)
    }

    pub fn identity(n: usize, r: usize) -> Self {
        let vars = bundle_vars(n, r);
        let maps = vars
            .iter()
            .map(|v| ScalarField::parse(v, &vars).expect("identity map parses"))
            .collect();
        BundleCoordChange { n, r, maps }
    }

    pub fn apply(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.maps.iter().map(|m| m.eval(p)).collect()
    }

    /// `∂ũ^I/∂u^J` by central differences.
    pub fn jacobian(&self, p: &[f64], region: &Region, fd: &Fd) -> Result<DMatrix<f64>> {
        let dim = self.n + self.r;
        let mut j = DMatrix::zeros(dim, dim);
        for (i, m) in self.maps.iter().enumerate() {
            for axis in 0..dim {
                j[(i, axis)] = fd.partial(|q| m.eval(q), p, axis, region)?;
            }
        }
        Ok(j)
    }
}

/// `Γ̃^a_μ = (∂ũ^a/∂u^b Γ^b_ν + ∂ũ^a/∂u^ν) ∂u^ν/∂ũ^μ` at `p`.
pub fn transform_two_index(
    g2: &TwoIndexField,
    change: &BundleCoordChange,
    p: &[f64],
    fd: &Fd,
) -> Result<DMatrix<f64>> {
    let (n, r) = (g2.n(), g2.r());
    if change.n != n || change.r != r {
        return Err(Error::dim(
            "coordinate change and connection dimensions differ",
        ));
    }
    let gamma = g2.eval(p)?;
    let j = change.jacobian(p, g2.region(), fd)?;
    let det = j.determinant();
    if det.abs() < SINGULAR_DET {
        return Err(Error::SingularJacobian { det: det.abs() });
    }
    let j_base = j.view((0, 0), (n, n)).into_owned();
    let base_inv = invert(&j_base, |det| Error::SingularJacobian { det })?;
    let j_mixed = j.view((n, 0), (r, n));
    let j_fibre = j.view((n, n), (r, r));
    Ok((j_mixed + j_fibre * gamma) * base_inv)
}

/// `Γ̃_μ = B^ν_μ B⁻¹ (Γ_ν B + E_ν(B))` with `B` the fibre block and
/// `[B^ν_μ]` the base block; `E` defaults to the coordinate frame.
pub fn transform_three_index(
    g3: &CoefficientField3,
    change: &FrameChange,
    base_frame: Option<&FrameField>,
    x: &[f64],
    fd: &Fd,
) -> Result<Vec<DMatrix<f64>>> {
    change.check_dims(g3.n(), g3.r())?;
    let gamma = g3.eval(x)?;
    let bb = change.eval_base(x)?;
    let b = change.eval_fibre(x)?;
    let b_inv = invert(&b, |det| Error::SingularFrame { det })?;
    let partials = fd.gradient(|p| change.fibre.eval(p), x, g3.region())?;
    let e_of_b = match base_frame {
        Some(e) => frame_derivatives(&e.eval(x)?, &partials),
        None => partials,
    };
    let inner: Vec<DMatrix<f64>> = gamma
        .iter()
        .zip(&e_of_b)
        .map(|(g, eb)| &b_inv * (g * &b + eb))
        .collect();
    Ok((0..g3.n())
        .map(|mu| {
            let mut acc = DMatrix::zeros(g3.r(), g3.r());
            for (nu, m) in inner.iter().enumerate() {
                acc += m * bb[(nu, mu)];
            }
            acc
        })
        .collect())
}

/// `G̃^a_μ = B^a_b G^b_ν B^ν_μ`, the coordinate-convention product with
/// `fibre` the matrix of `ũ^a = B^a_b u^b`.
pub fn transform_inhomogeneous_sandwich(
    g: &DMatrix<f64>,
    fibre: &DMatrix<f64>,
    base: &DMatrix<f64>,
) -> DMatrix<f64> {
    fibre * g * base
}

/// The inhomogeneous part relative to changed frames: `G̃ = B⁻¹ G B_base`.
///
/// Fibre coordinates transform with the inverse of the fibre frame matrix,
/// so this is [`transform_inhomogeneous_sandwich`] with `B⁻¹`.
pub fn transform_inhomogeneous(
    g: &DMatrix<f64>,
    change: &FrameChange,
    x: &[f64],
) -> Result<DMatrix<f64>> {
    let b = change.eval_fibre(x)?;
    let b_inv = invert(&b, |det| Error::SingularFrame { det })?;
    Ok(transform_inhomogeneous_sandwich(
        g,
        &b_inv,
        &change.eval_base(x)?,
    ))
}

/// The adapted frame `X_μ = ∂_μ + Γ^b_μ ∂_b, X_a = ∂_a` as the block matrix
/// `[[1, 0], [Γ, 1]]`, and its inverse `[[1, 0], [−Γ, 1]]` (the coframe
/// `dx^μ, du^a − Γ^a_μ dx^μ`).
pub fn adapted_frame_matrix(g2: &TwoIndexField, p: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let gamma = g2.eval(p)?;
    Ok((adapted_block(&gamma, 1.0), adapted_block(&gamma, -1.0)))
}

pub(crate) fn adapted_block(gamma: &DMatrix<f64>, sign: f64) -> DMatrix<f64> {
    let (r, n) = gamma.shape();
    let mut m = DMatrix::identity(n + r, n + r);
    m.view_mut((n, 0), (r, n)).copy_from(&(gamma * sign));
    m
}

/// `°Γ^a_{bμ} = −∂Γ^a_μ/∂u^b`, returned per direction μ as r×r matrices
/// with entry `(a, b)`.
pub fn fibre_coefficients(g2: &TwoIndexField, p: &[f64], fd: &Fd) -> Result<Vec<DMatrix<f64>>> {
    let (n, r) = (g2.n(), g2.r());
    let mut out = vec![DMatrix::zeros(r, r); n];
    for b in 0..r {
        let d = fd.partial(|q| g2.eval(q), p, n + b, g2.region())?;
        for (mu, o) in out.iter_mut().enumerate() {
            for a in 0..r {
                o[(a, b)] = -d[(a, mu)];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, v)
    }

    fn within(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
        (a - b).amax() <= tol
    }

    #[test]
    fn linear_two_index_examples() {
        let z = CoefficientField3::zero(2, Region::unbounded(2));
        assert_eq!(
            two_index_from_linear(&z, &[1.0, 2.0, 3.0, 4.0])
                .unwrap()
                .amax(),
            0.0
        );

        let c = 0.7;
        let g = CoefficientField3::constant(&[m(1, 1, &[c])], Region::unbounded(1)).unwrap();
        let v = two_index_from_linear(&g, &[0.0, 2.0]).unwrap();
        assert_eq!(v[(0, 0)], -2.0 * c);
    }

    #[test]
    fn affine_two_index_examples() {
        let lin = CoefficientField3::zero(2, Region::unbounded(2));
        let g = m(2, 2, &[1.0, -2.0, 0.5, 3.0]);
        let aff = AffineCoefficients::new(lin, MatrixField::constant(&g, 2)).unwrap();
        let v = two_index_from_affine(&aff, &[0.3, -4.0, 9.0, 1.0]).unwrap();
        assert_eq!(v, g);

        let lin = CoefficientField3::parse(
            &[
                vec![vec!["x1", "x2^2"], vec!["sin(x1)", "1"]],
                vec![vec!["0", "x1*x2"], vec!["2", "cos(x2)"]],
            ],
            Region::unbounded(2),
        )
        .unwrap();
        let aff = AffineCoefficients::new(lin.clone(), MatrixField::zeros(2, 2, 2)).unwrap();
        let p = [0.4, -1.3, 2.0, 0.7];
        let a = two_index_from_affine(&aff, &p).unwrap();
        let l = two_index_from_linear(&lin, &p).unwrap();
        assert!(a
            .iter()
            .zip(l.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn two_index_law_examples() {
        let fd = Fd::default();
        let zero = TwoIndexField::from_linear(&CoefficientField3::zero(1, Region::unbounded(1)));
        let p = [0.3, 1.2];
        let id = transform_two_index(&zero, &BundleCoordChange::identity(1, 1), &p, &fd).unwrap();
        assert_eq!(id.amax(), 0.0);

        let scale = BundleCoordChange::parse(1, 1, &["2*u1", "u2"]).unwrap();
        assert!(transform_two_index(&zero, &scale, &p, &fd).unwrap().amax() < 1e-12);

        let shear = BundleCoordChange::parse(1, 1, &["u1", "u2 + u1"]).unwrap();
        let t = transform_two_index(&zero, &shear, &p, &fd).unwrap();
        assert!((t[(0, 0)] - 1.0).abs() < 1e-9);

        let g2 =
            TwoIndexField::parse(2, 1, &[vec!["u1*u3", "sin(u2)"]], Region::unbounded(3)).unwrap();
        let q = [0.2, 0.5, -1.0];
        let same = transform_two_index(&g2, &BundleCoordChange::identity(2, 1), &q, &fd).unwrap();
        assert!(within(&same, &g2.eval(&q).unwrap(), 1e-12));
    }

    #[test]
    fn singular_jacobian_reported() {
        let fd = Fd::default();
        let zero = TwoIndexField::from_linear(&CoefficientField3::zero(1, Region::unbounded(1)));
        let collapse = BundleCoordChange::parse(1, 1, &["u1", "0*u2"]).unwrap();
        assert!(matches!(
            transform_two_index(&zero, &collapse, &[0.0, 1.0], &fd),
            Err(Error::SingularJacobian { .. })
        ));
    }

    #[test]
    fn three_index_law_examples() {
        let fd = Fd::default();
        let region = Region::unbounded(2);
        let g3 = CoefficientField3::parse(
            &[
                vec![vec!["x1", "x2^2"], vec!["sin(x1)", "1"]],
                vec![vec!["0", "x1*x2"], vec!["2", "cos(x2)"]],
            ],
            region.clone(),
        )
        .unwrap();
        let x = [0.3, 0.9];
        let same = transform_three_index(&g3, &FrameChange::identity(2, 2), None, &x, &fd).unwrap();
        let orig = g3.eval(&x).unwrap();
        for (a, b) in same.iter().zip(&orig) {
            assert!(within(a, b, 1e-12));
        }

        let zero = CoefficientField3::zero(2, region);
        let constant = FrameChange::new(
            MatrixField::identity(2, 2),
            MatrixField::constant(&m(2, 2, &[2.0, 1.0, 0.0, 3.0]), 2),
        )
        .unwrap();
        let t = transform_three_index(&zero, &constant, None, &x, &fd).unwrap();
        assert!(t.iter().all(|g| g.amax() < 1e-12));

        let zero1 = CoefficientField3::zero(1, Region::unbounded(1));
        let exp = FrameChange::new(
            MatrixField::identity(1, 1),
            MatrixField::parse(&[vec!["exp(x1)"]], &["x1"]).unwrap(),
        )
        .unwrap();
        let t = transform_three_index(&zero1, &exp, None, &[0.4], &fd).unwrap();
        assert!((t[0][(0, 0)] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn inhomogeneous_law_examples() {
        let g = m(1, 1, &[3.0]);
        let v = transform_inhomogeneous_sandwich(&g, &m(1, 1, &[2.0]), &m(1, 1, &[5.0]));
        assert_eq!(v[(0, 0)], 30.0);
        // Fibre frame matrix 1/2 means fibre coordinates scale by 2.
        let change = FrameChange::new(
            MatrixField::constant(&m(1, 1, &[5.0]), 1),
            MatrixField::constant(&m(1, 1, &[0.5]), 1),
        )
        .unwrap();
        let v = transform_inhomogeneous(&g, &change, &[0.0]).unwrap();
        assert_eq!(v[(0, 0)], 30.0);
        let id = transform_inhomogeneous(&g, &FrameChange::identity(1, 1), &[0.0]).unwrap();
        assert_eq!(id, g);
        let z = transform_inhomogeneous(&m(1, 1, &[0.0]), &change, &[0.0]).unwrap();
        assert_eq!(z[(0, 0)], 0.0);
    }

    #[test]
    fn adapted_frame_examples() {
        let zero = TwoIndexField::from_linear(&CoefficientField3::zero(2, Region::unbounded(1)));
        let (a, _) = adapted_frame_matrix(&zero, &[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(a, DMatrix::identity(3, 3));

        let seven = TwoIndexField::parse(1, 1, &[vec!["7"]], Region::unbounded(2)).unwrap();
        let (a, inv) = adapted_frame_matrix(&seven, &[0.1, 0.2]).unwrap();
        assert_eq!(a[(1, 0)], 7.0);
        // Cross-check against a numerical solve.
        let solved = a.clone().try_inverse().unwrap();
        assert!(within(&solved, &inv, 1e-12));

        let g2 = TwoIndexField::parse(
            2,
            2,
            &[vec!["u1*u3", "sin(u4)"], vec!["u2 - u3^2", "exp(u1)"]],
            Region::unbounded(4),
        )
        .unwrap();
        let (a, inv) = adapted_frame_matrix(&g2, &[0.3, -0.2, 1.5, 0.4]).unwrap();
        assert!(within(&(a * inv), &DMatrix::identity(4, 4), 1e-12));
    }

    #[test]
    fn fibre_coefficient_examples() {
        let fd = Fd::default();
        let zero = TwoIndexField::from_linear(&CoefficientField3::zero(2, Region::unbounded(2)));
        let v = fibre_coefficients(&zero, &[0.0, 0.0, 1.0, 1.0], &fd).unwrap();
        assert!(v.iter().all(|g| g.amax() == 0.0));

        let c = -1.7;
        let lin = CoefficientField3::constant(&[m(1, 1, &[c])], Region::unbounded(1)).unwrap();
        let g2 = TwoIndexField::from_linear(&lin);
        for p in [[0.0, 0.0], [2.0, -3.0], [-1.0, 10.0]] {
            let v = fibre_coefficients(&g2, &p, &fd).unwrap();
            assert!((v[0][(0, 0)] - c).abs() < 1e-9);
        }

        let flat_on_fibres =
            TwoIndexField::parse(2, 1, &[vec!["sin(u1)", "u2^2"]], Region::unbounded(3)).unwrap();
        let v = fibre_coefficients(&flat_on_fibres, &[0.3, 0.4, 5.0], &fd).unwrap();
        assert!(v.iter().all(|g| g.amax() == 0.0));
    }

    #[test]
    fn fibre_coefficients_of_linear_lift() {
        let fd = Fd::default();
        let lin = CoefficientField3::parse(
            &[
                vec![vec!["x1", "x2^2"], vec!["sin(x1)", "1"]],
                vec![vec!["0", "x1*x2"], vec!["2", "cos(x2)"]],
            ],
            Region::unbounded(2),
        )
        .unwrap();
        let g2 = TwoIndexField::from_linear(&lin);
        let p = [0.6, -0.4, 3.0, -2.0];
        let v = fibre_coefficients(&g2, &p, &fd).unwrap();
        for (a, b) in v.iter().zip(lin.eval(&p[..2]).unwrap()) {
            assert!(within(a, &b, 1e-8));
        }
    }

    fn smooth_change(k: [f64; 6]) -> FrameChange {
        let vars = base_vars(2);
        let base = MatrixField::parse(
            &[
                vec![format!("2 + {}*sin(x1 + x2)", k[0]), format!("{}*x2", k[1])],
                vec![format!("{}*cos(x1)", k[2]), "1.5".to_string()],
            ],
            &vars,
        )
        .unwrap();
        let fibre = MatrixField::parse(
            &[
                vec![format!("1.8 + {}*x1*x2", k[3]), format!("{}*sin(x2)", k[4])],
                vec![format!("{}*exp(x1/2)", k[5]), "2 - 0.1*cos(x1)".to_string()],
            ],
            &vars,
        )
        .unwrap();
        FrameChange::new(base, fibre).unwrap()
    }

    fn sample_g3() -> CoefficientField3 {
        CoefficientField3::parse(
            &[
                vec![vec!["x1", "x2^2"], vec!["sin(x1)", "1"]],
                vec![vec!["0.3", "x1*x2"], vec!["-0.5", "cos(x2)"]],
            ],
            Region::unbounded(2),
        )
        .unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn three_index_group_law(
            k1 in prop::array::uniform6(-0.3f64..0.3),
            k2 in prop::array::uniform6(-0.3f64..0.3),
            x in prop::array::uniform2(-0.8f64..0.8),
        ) {
            let fd = Fd::default();
            let g3 = sample_g3();
            let (c1, c2) = (smooth_change(k1), smooth_change(k2));
            let region = g3.region().clone();
            let step1 = g3.transformed(&c1, None, fd).unwrap();
            let frame1 = c1.changed_frame(None, &region).unwrap();
            let two_steps = transform_three_index(&step1, &c2, Some(&frame1), &x, &fd).unwrap();
            let composed = transform_three_index(&g3, &c1.then(&c2).unwrap(), None, &x, &fd).unwrap();
            for (a, b) in two_steps.iter().zip(&composed) {
                for (u, v) in a.iter().zip(b.iter()) {
                    prop_assert!((u - v).abs() <= 1e-6 * v.abs().max(1.0));
                }
            }
        }

        /// The 2-index law on the induced field agrees with the 3-index law.
        #[test]
        fn two_and_three_index_laws_agree(
            k in prop::array::uniform6(-0.3f64..0.3),
            x in prop::array::uniform2(-0.8f64..0.8),
            u in prop::array::uniform2(-2.0f64..2.0),
        ) {
            let fd = Fd::default();
            let g3 = sample_g3();
            // Vector-bundle coordinate change: x̃ = x, ũ = A(x) u with A = B⁻¹.
            let change = smooth_change(k);
            let identity_base = FrameChange::new(MatrixField::identity(2, 2), change.fibre().clone()).unwrap();
            let fibre = change.fibre().clone();
            let a_of = move |q: &[f64]| -> Result<DMatrix<f64>> {
                fibre.eval(&q[..2])?.try_inverse().ok_or(Error::SingularFrame { det: 0.0 })
            };
            let maps: Vec<ScalarField> = (0..4)
                .map(|i| {
                    let a_of = a_of.clone();
                    ScalarField::from_fn(4, move |q: &[f64]| {
                        if i < 2 {
                            return Ok(q[i]);
                        }
                        let a = a_of(q)?;
                        Ok(a[(i - 2, 0)] * q[2] + a[(i - 2, 1)] * q[3])
                    })
                })
                .collect();
            let coord = BundleCoordChange::new(2, 2, maps).unwrap();
            let p = [x[0], x[1], u[0], u[1]];
            let via_two = transform_two_index(&TwoIndexField::from_linear(&g3), &coord, &p, &fd).unwrap();
            let g3t = g3.transformed(&identity_base, None, fd).unwrap();
            let pt = coord.apply(&p).unwrap();
            let via_three = two_index_from_linear(&g3t, &pt).unwrap();
            prop_assert!(within(&via_two, &via_three, 1e-6 * via_three.amax().max(1.0)));
        }

        /// Fibre coefficients of the transformed 2-index field follow the
        /// sandwich law `Ā⁻¹(°Γ_ν Ā + ∂_ν Ā)` contracted with the base block.
        #[test]
        fn fibre_coefficients_follow_sandwich_law(
            k in prop::array::uniform6(-0.3f64..0.3),
            x in prop::array::uniform2(-0.8f64..0.8),
            u in prop::array::uniform2(-2.0f64..2.0),
        ) {
            let fd = Fd::default();
            let g3 = sample_g3();
            let change = smooth_change(k);
            let g3t = g3.transformed(&change, None, fd).unwrap();
            let g2t = TwoIndexField::from_linear(&g3t);
            let p = [x[0], x[1], u[0], u[1]];
            let lhs = fibre_coefficients(&g2t, &p, &fd).unwrap();
            let g2 = TwoIndexField::from_linear(&g3);
            let orig = fibre_coefficients(&g2, &p, &fd).unwrap();
            let a = change.eval_fibre(&x).unwrap();
            let a_inv = a.clone().try_inverse().unwrap();
            let da = fd.gradient(|q| change.fibre().eval(q), &x, g3.region()).unwrap();
            let bb = change.eval_base(&x).unwrap();
            for mu in 0..2 {
                let mut rhs = DMatrix::zeros(2, 2);
                for nu in 0..2 {
                    rhs += (&a_inv * (&orig[nu] * &a + &da[nu])) * bb[(nu, mu)];
                }
                prop_assert!(within(&lhs[mu], &rhs, 1e-6 * rhs.amax().max(1.0)));
            }
        }

        /// Reading off `(−∂_b Γ^a_μ, Γ^a_μ at u = 0)` recovers the affine split.
        #[test]
        fn affine_split_round_trip(
            x in prop::array::uniform2(-0.8f64..0.8),
            u in prop::array::uniform2(-2.0f64..2.0),
        ) {
            let fd = Fd::default();
            let g3 = sample_g3();
            let gsrc = [vec!["x1 - x2", "2"], vec!["sin(x2)", "x1^2"]];
            let g = MatrixField::parse(&gsrc, &base_vars(2)).unwrap();
            let aff = AffineCoefficients::new(g3.clone(), g.clone()).unwrap();
            let g2 = TwoIndexField::from_affine(&aff);
            let at_zero = g2.eval(&[x[0], x[1], 0.0, 0.0]).unwrap();
            let gx = g.eval(&x).unwrap();
            prop_assert!(at_zero.iter().zip(gx.iter()).all(|(a, b)| a == b));
            let fc = fibre_coefficients(&g2, &[x[0], x[1], u[0], u[1]], &fd).unwrap();
            for (a, b) in fc.iter().zip(g3.eval(&x).unwrap()) {
                prop_assert!(within(a, &b, 1e-9));
            }
        }
    }
}
