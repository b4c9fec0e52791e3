//! Regions, scalar/matrix/frame/tensor fields, finite differences and the
//! Lie-derivative toolkit.

mod fd;
mod lie;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::expr::{parse, BoundExpr, ExprAst};
use crate::tolerances::SINGULAR_DET;
use crate::{Error, Result};

pub use fd::{fd_partial, Fd, FdValue};
pub use lie::{
    anholonomy, anholonomy_after_change, bracket, frame_derivatives, lie_derivative, lie_gamma,
    lie_gamma_after_change, Anholonomy,
};

/// Variable names `x1..xn` for base fields.
pub fn base_vars(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).collect()
}

/// Variable names `u1..u{n+r}` for bundle fields.
pub fn bundle_vars(n: usize, r: usize) -> Vec<String> {
    (1..=n + r).map(|i| format!("u{i}")).collect()
}

/// A box of open intervals, possibly unbounded on any axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Region {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::dim("region bounds must have equal, positive length"));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h)) {
            return Err(Error::dim("region requires lo < hi on every axis"));
        }
        Ok(Region { lo, hi })
    }

    pub fn unbounded(dim: usize) -> Self {
        Region {
            lo: vec![f64::NEG_INFINITY; dim],
            hi: vec![f64::INFINITY; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| l < v && v < h)
    }

    pub fn check(&self, x: &[f64]) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::DomainExit { point: x.to_vec() })
        }
    }

    /// Cartesian product, e.g. base region × fibre region.
    pub fn product(&self, other: &Region) -> Region {
        Region {
            lo: self.lo.iter().chain(&other.lo).copied().collect(),
            hi: self.hi.iter().chain(&other.hi).copied().collect(),
        }
    }

    /// The first `k` axes.
    pub fn leading(&self, k: usize) -> Region {
        Region {
            lo: self.lo[..k].to_vec(),
            hi: self.hi[..k].to_vec(),
        }
    }
}

type ScalarFn = dyn Fn(&[f64]) -> Result<f64> + Send + Sync;
type MatrixFn = dyn Fn(&[f64]) -> Result<DMatrix<f64>> + Send + Sync;

#[derive(Clone)]
enum ScalarKind {
    Const(f64),
    Expr(Arc<ExprAst>, Arc<BoundExpr>),
    Func(Arc<ScalarFn>),
}

/// A real function of `arity` coordinates, defined by an expression or a
/// closure.
#[derive(Clone)]
pub struct ScalarField {
    arity: usize,
    kind: ScalarKind,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ScalarKind::Const(v) => write!(f, "ScalarField({v:?})"),
            ScalarKind::Expr(ast, _) => write!(f, "ScalarField({ast})"),
            ScalarKind::Func(_) => write!(f, "ScalarField(<fn/{}>)", self.arity),
        }
    }
}

impl ScalarField {
    pub fn constant(arity: usize, value: f64) -> Self {
        ScalarField {
            arity,
            kind: ScalarKind::Const(value),
        }
    }

    pub fn zero(arity: usize) -> Self {
        Self::constant(arity, 0.0)
    }

    /// Binds `ast` against `names`, whose order fixes the coordinate order.
    pub fn from_expr<S: AsRef<str>>(ast: ExprAst, names: &[S]) -> Result<Self> {
        let bound = ast.bind(names)?;
        Ok(ScalarField {
            arity: names.len(),
            kind: ScalarKind::Expr(Arc::new(ast), Arc::new(bound)),
        })
    }

    pub fn parse<S: AsRef<str>>(source: &str, names: &[S]) -> Result<Self> {
        Self::from_expr(parse(source)?, names)
    }

    /// Parses an expression over the base coordinates `x1..xn`.
    pub fn parse_base(source: &str, n: usize) -> Result<Self> {
        Self::parse(source, &base_vars(n))
    }

    /// Parses an expression over bundle coordinates `u1..u{n+r}`; `x1..xn`
    /// are accepted as aliases of `u1..un`.
    pub fn parse_bundle(source: &str, n: usize, r: usize) -> Result<Self> {
        let ast = rename_base_aliases(parse(source)?, n);
        Self::from_expr(ast, &bundle_vars(n, r))
    }

    pub fn from_fn(
        arity: usize,
        f: impl Fn(&[f64]) -> Result<f64> + Send + Sync + 'static,
    ) -> Self {
        ScalarField {
            arity,
            kind: ScalarKind::Func(Arc::new(f)),
        }
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self.kind {
            ScalarKind::Const(v) => Some(v),
            _ => None,
        }
    }

    pub fn expr(&self) -> Option<&ExprAst> {
        match &self.kind {
            ScalarKind::Expr(ast, _) => Some(ast),
            _ => None,
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.arity {
            return Err(Error::dim(format!(
                "field of arity {} evaluated at a point of dimension {}",
                self.arity,
                x.len()
            )));
        }
        match &self.kind {
            ScalarKind::Const(v) => Ok(*v),
            ScalarKind::Expr(_, bound) => Ok(bound.eval(x)?),
            ScalarKind::Func(f) => {
                let v = f(x)?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::non_finite("field closure"))
                }
            }
        }
    }
}

fn rename_base_aliases(ast: ExprAst, n: usize) -> ExprAst {
    match ast {
        ExprAst::Var(name) => {
            let alias = name
                .strip_prefix('x')
                .and_then(|d| d.parse::<usize>().ok())
                .filter(|i| (1..=n).contains(i));
            match alias {
                Some(i) => ExprAst::Var(format!("u{i}")),
                None => ExprAst::Var(name),
            }
        }
        ExprAst::Neg(inner) => ExprAst::neg(rename_base_aliases(*inner, n)),
        ExprAst::Binary(op, l, r) => {
            ExprAst::binary(op, rename_base_aliases(*l, n), rename_base_aliases(*r, n))
        }
        ExprAst::Call(f, args) => ExprAst::Call(
            f,
            args.into_iter()
                .map(|a| rename_base_aliases(a, n))
                .collect(),
        ),
        c @ ExprAst::Const(_) => c,
    }
}

#[derive(Clone)]
enum MatrixKind {
    Entries(Vec<ScalarField>),
    Func(Arc<MatrixFn>),
}

/// A matrix-valued field; entries are stored row-major.
#[derive(Clone)]
pub struct MatrixField {
    rows: usize,
    cols: usize,
    arity: usize,
    kind: MatrixKind,
}

impl fmt::Debug for MatrixField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            MatrixKind::Entries(e) => f
                .debug_struct("MatrixField")
                .field("rows", &self.rows)
                .field("cols", &self.cols)
                .field("entries", e)
                .finish(),
            MatrixKind::Func(_) => write!(
                f,
                "MatrixField({}x{}, <fn/{}>)",
                self.rows, self.cols, self.arity
            ),
        }
    }
}

impl MatrixField {
    pub fn from_entries(rows: usize, cols: usize, entries: Vec<ScalarField>) -> Result<Self> {
        if entries.len() != rows * cols || entries.is_empty() {
            return Err(Error::dim(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                entries.len()
            )));
        }
        let arity = entries[0].arity();
        if entries.iter().any(|e| e.arity() != arity) {
            return Err(Error::dim("matrix entries have different arities"));
        }
        Ok(MatrixField {
            rows,
            cols,
            arity,
            kind: MatrixKind::Entries(entries),
        })
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        arity: usize,
        f: impl Fn(&[f64]) -> Result<DMatrix<f64>> + Send + Sync + 'static,
    ) -> Self {
        MatrixField {
            rows,
            cols,
            arity,
            kind: MatrixKind::Func(Arc::new(f)),
        }
    }

    pub fn constant(value: &DMatrix<f64>, arity: usize) -> Self {
        let entries = (0..value.nrows())
            .flat_map(|i| (0..value.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| ScalarField::constant(arity, value[(i, j)]))
            .collect();
        MatrixField {
            rows: value.nrows(),
            cols: value.ncols(),
            arity,
            kind: MatrixKind::Entries(entries),
        }
    }

    pub fn zeros(rows: usize, cols: usize, arity: usize) -> Self {
        Self::constant(&DMatrix::zeros(rows, cols), arity)
    }

    pub fn identity(m: usize, arity: usize) -> Self {
        Self::constant(&DMatrix::identity(m, m), arity)
    }

    /// Parses a row-major table of expressions.
    pub fn parse<S: AsRef<str>, T: AsRef<str>>(table: &[Vec<T>], names: &[S]) -> Result<Self> {
        let rows = table.len();
        let cols = table.first().map_or(0, Vec::len);
        if table.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("ragged expression matrix"));
        }
        let entries = table
            .iter()
            .flatten()
            .map(|s| ScalarField::parse(s.as_ref(), names))
            .collect::<Result<Vec<_>>>()?;
        Self::from_entries(rows, cols, entries)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn entry(&self, i: usize, j: usize) -> Option<&ScalarField> {
        match &self.kind {
            MatrixKind::Entries(e) => e.get(i * self.cols + j),
            MatrixKind::Func(_) => None,
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        match &self.kind {
            MatrixKind::Entries(e) => {
                let vals = e.iter().map(|s| s.eval(x)).collect::<Result<Vec<_>>>()?;
                Ok(DMatrix::from_row_slice(self.rows, self.cols, &vals))
            }
            MatrixKind::Func(f) => {
                if x.len() != self.arity {
                    return Err(Error::dim("matrix field evaluated at wrong dimension"));
                }
                let m = f(x)?;
                if m.nrows() != self.rows || m.ncols() != self.cols {
                    return Err(Error::dim("matrix closure returned wrong shape"));
                }
                if m.iter().any(|v| !v.is_finite()) {
                    return Err(Error::non_finite("matrix closure"));
                }
                Ok(m)
            }
        }
    }
}

/// A vector-valued field (sections, dual sections, vector fields).
#[derive(Clone, Debug)]
pub struct VectorField(MatrixField);

/// Components `Y^a(x)` of a section of the vector bundle.
pub type SectionField = VectorField;

/// Components `ω_a(x)` of a section of the dual bundle.
pub type DualSectionField = VectorField;

impl VectorField {
    pub fn from_components(comps: Vec<ScalarField>) -> Result<Self> {
        let n = comps.len();
        Ok(VectorField(MatrixField::from_entries(n, 1, comps)?))
    }

    pub fn from_fn(
        dim: usize,
        arity: usize,
        f: impl Fn(&[f64]) -> Result<DVector<f64>> + Send + Sync + 'static,
    ) -> Self {
        VectorField(MatrixField::from_fn(dim, 1, arity, move |x| {
            let v = f(x)?;
            let n = v.len();
            Ok(v.reshape_generic(nalgebra::Dyn(n), nalgebra::Dyn(1)))
        }))
    }

    pub fn constant(value: &[f64], arity: usize) -> Self {
        VectorField(MatrixField::constant(
            &DMatrix::from_column_slice(value.len(), 1, value),
            arity,
        ))
    }

    pub fn parse<S: AsRef<str>, T: AsRef<str>>(comps: &[T], names: &[S]) -> Result<Self> {
        let fields = comps
            .iter()
            .map(|s| ScalarField::parse(s.as_ref(), names))
            .collect::<Result<Vec<_>>>()?;
        Self::from_components(fields)
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn arity(&self) -> usize {
        self.0.arity()
    }

    pub fn component(&self, i: usize) -> Option<&ScalarField> {
        self.0.entry(i, 0)
    }

    pub fn eval(&self, x: &[f64]) -> Result<DVector<f64>> {
        let m = self.0.eval(x)?;
        Ok(DVector::from_column_slice(m.as_slice()))
    }
}

/// A frame `E_μ = E^ν_μ ∂_ν` on an m-dimensional region; column μ of the
/// matrix holds the components of `E_μ`.
#[derive(Clone, Debug)]
pub struct FrameField {
    matrix: MatrixField,
    region: Region,
}

impl FrameField {
    pub fn new(matrix: MatrixField, region: Region) -> Result<Self> {
        if matrix.rows() != matrix.cols()
            || matrix.rows() != region.dim()
            || matrix.arity() != region.dim()
        {
            return Err(Error::dim(
                "frame matrix must be m×m over an m-dimensional region",
            ));
        }
        Ok(FrameField { matrix, region })
    }

    pub fn coordinate(region: Region) -> Self {
        let m = region.dim();
        FrameField {
            matrix: MatrixField::identity(m, m),
            region,
        }
    }

    pub fn dim(&self) -> usize {
        self.region.dim()
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn matrix(&self) -> &MatrixField {
        &self.matrix
    }

    /// Frame matrix at `x`, rejecting near-singular frames.
    pub fn eval(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let e = self.matrix.eval(x)?;
        let det = e.determinant();
        if det.abs() < SINGULAR_DET {
            return Err(Error::SingularFrame { det: det.abs() });
        }
        Ok(e)
    }

    pub fn inverse(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let e = self.eval(x)?;
        invert(&e, |det| Error::SingularFrame { det })
    }
}

/// Matrix inverse with a determinant guard.
pub fn invert(m: &DMatrix<f64>, err: impl FnOnce(f64) -> Error) -> Result<DMatrix<f64>> {
    let det = m.determinant();
    if det.abs() < SINGULAR_DET {
        return Err(err(det.abs()));
    }
    m.clone().try_inverse().ok_or_else(|| err(det.abs()))
}

/// Components `S^{μ1..μr}_{ν1..νs}` of a type-(r, s) tensor field, stored
/// row-major with upper indices first.
#[derive(Clone, Debug)]
pub struct TensorField {
    up: usize,
    down: usize,
    dim: usize,
    comps: Vec<ScalarField>,
}

impl TensorField {
    pub fn new(up: usize, down: usize, dim: usize, comps: Vec<ScalarField>) -> Result<Self> {
        let want = dim.pow((up + down) as u32);
        if comps.len() != want {
            return Err(Error::dim(format!(
                "type ({up},{down}) tensor in dimension {dim} needs {want} components, got {}",
                comps.len()
            )));
        }
        Ok(TensorField {
            up,
            down,
            dim,
            comps,
        })
    }

    pub fn up(&self) -> usize {
        self.up
    }

    pub fn down(&self) -> usize {
        self.down
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.up + self.down
    }

    pub fn eval(&self, x: &[f64]) -> Result<DVector<f64>> {
        let vals = self
            .comps
            .iter()
            .map(|c| c.eval(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(DVector::from_vec(vals))
    }

    /// Multi-index of a flat position.
    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.rank()];
        for slot in idx.iter_mut().rev() {
            *slot = flat % self.dim;
            flat /= self.dim;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.dim + i)
    }
}
