//! JSON problem configuration and its conversion into library objects.

use bundlecalc::connection::{AffineCoefficients, CoefficientField3, FrameChange, TwoIndexField};
use bundlecalc::fields::{base_vars, FrameField, MatrixField, Region, SectionField, VectorField};
use bundlecalc::registry::{self, PureGauge};
use bundlecalc::transport::PathSpec;
use nalgebra::DMatrix;
use serde::Deserialize;
use serde_json::Value;

use crate::error::{CliError, ConfigContext};

/// An expression given either as text or as a plain number.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Expr {
    Text(String),
    Number(f64),
}

impl Expr {
    pub fn text(&self) -> String {
        match self {
            Expr::Text(s) => s.clone(),
            Expr::Number(v) => format!("{v:?}"),
        }
    }
}

pub fn texts(v: &[Expr]) -> Vec<String> {
    v.iter().map(Expr::text).collect()
}

pub fn table(v: &[Vec<Expr>]) -> Vec<Vec<String>> {
    v.iter().map(|row| texts(row)).collect()
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    pub steps: Option<usize>,
    pub fd_step: Option<f64>,
    pub tol: Option<f64>,
    pub samples: Option<usize>,
    /// Offset of the transport-limit covariant derivative.
    pub eps: Option<f64>,
}

/// Box bounds; `null` entries are unbounded.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub lo: Vec<Option<f64>>,
    pub hi: Vec<Option<f64>>,
}

impl Bounds {
    pub fn region(&self, dim: usize, what: &str) -> Result<Region, CliError> {
        if self.lo.len() != dim || self.hi.len() != dim {
            return Err(CliError::Config(format!(
                "{what} needs {dim} lower and upper bounds"
            )));
        }
        let lo = self
            .lo
            .iter()
            .map(|v| v.unwrap_or(f64::NEG_INFINITY))
            .collect();
        let hi = self.hi.iter().map(|v| v.unwrap_or(f64::INFINITY)).collect();
        Region::new(lo, hi).config(what)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConnectionBody {
    /// `gamma[μ][a][b] = Γ^a_{bμ}` over the base coordinates.
    ThreeIndex { gamma: Vec<Vec<Vec<Expr>>> },
    /// `gamma[a][μ] = Γ^a_μ` over the bundle coordinates.
    TwoIndex { gamma: Vec<Vec<Expr>> },
    Affine {
        gamma: Vec<Vec<Vec<Expr>>>,
        inhom: Vec<Vec<Expr>>,
    },
    Registry {
        name: String,
        #[serde(default)]
        matrices: Option<Vec<Vec<Vec<f64>>>>,
        #[serde(default)]
        alpha: Option<String>,
        #[serde(default)]
        alpha_grad: Option<Vec<String>>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PathConfig {
    Straight { from: Vec<f64>, to: Vec<f64> },
    Polyline { points: Vec<Vec<f64>> },
    Curve { comps: Vec<Expr>, t0: f64, t1: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeodesicSpec {
    pub x0: Vec<f64>,
    pub v0: Vec<f64>,
    pub length: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameChangeSpec {
    /// `B^ν_μ`, row ν, column μ.
    pub base: Vec<Vec<Expr>>,
    /// `B^b_a`, row b, column a.
    pub fibre: Vec<Vec<Expr>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MorphismSpec {
    pub base: Vec<Expr>,
    #[serde(default)]
    pub fibre_matrix: Option<Vec<Vec<Expr>>>,
    #[serde(default)]
    pub fibre: Option<Vec<Expr>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlatTransportSpec {
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub base_dim: Option<usize>,
    pub fibre_rank: Option<usize>,
    pub region: Option<Bounds>,
    pub connection: Value,
    pub target_connection: Option<Value>,
    pub frame_change: Option<FrameChangeSpec>,
    pub base_frame: Option<Vec<Vec<Expr>>>,
    pub coord_change: Option<Vec<Expr>>,
    pub path: Option<PathConfig>,
    pub p0: Option<Vec<f64>>,
    pub geodesic: Option<GeodesicSpec>,
    pub point: Option<Vec<f64>>,
    pub points: Option<Vec<Vec<f64>>>,
    pub sample_box: Option<Bounds>,
    pub section: Option<Vec<Expr>>,
    pub dual_section: Option<Vec<Expr>>,
    pub direction: Option<Vec<f64>>,
    pub vector_field: Option<Vec<Expr>>,
    pub morphism: Option<MorphismSpec>,
    pub flat_transport: Option<FlatTransportSpec>,
    #[serde(default)]
    pub params: Params,
}

/// A resolved connection of any of the three kinds.
#[derive(Clone, Debug)]
pub enum Connection {
    Linear(CoefficientField3),
    Affine(AffineCoefficients),
    General(TwoIndexField),
}

impl Connection {
    pub fn n(&self) -> usize {
        match self {
            Connection::Linear(g) => g.n(),
            Connection::Affine(a) => a.n(),
            Connection::General(g) => g.n(),
        }
    }

    pub fn r(&self) -> usize {
        match self {
            Connection::Linear(g) => g.r(),
            Connection::Affine(a) => a.r(),
            Connection::General(g) => g.r(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Connection::Linear(_) => "linear",
            Connection::Affine(_) => "affine",
            Connection::General(_) => "general",
        }
    }

    pub fn two_index(&self) -> TwoIndexField {
        match self {
            Connection::Linear(g) => TwoIndexField::from_linear(g),
            Connection::Affine(a) => TwoIndexField::from_affine(a),
            Connection::General(g) => g.clone(),
        }
    }

    pub fn linear(&self, command: &str) -> Result<&CoefficientField3, CliError> {
        match self {
            Connection::Linear(g) => Ok(g),
            _ => Err(CliError::Config(format!(
                "`{command}` needs a linear (three_index) connection, got {}",
                self.kind()
            ))),
        }
    }

    pub fn base_region(&self) -> Region {
        match self {
            Connection::Linear(g) => g.region().clone(),
            Connection::Affine(a) => a.linear().region().clone(),
            Connection::General(g) => g.region().leading(g.n()),
        }
    }
}

fn check_dim(what: &str, declared: Option<usize>, actual: usize) -> Result<(), CliError> {
    match declared {
        Some(d) if d != actual => Err(CliError::Config(format!(
            "{what} is {d} but the connection implies {actual}"
        ))),
        _ => Ok(()),
    }
}

fn three_index_dims(gamma: &[Vec<Vec<Expr>>]) -> Result<(usize, usize), CliError> {
    let n = gamma.len();
    let r = gamma.first().map_or(0, Vec::len);
    if n == 0 || r == 0 {
        return Err(CliError::Config(
            "three_index gamma needs n matrices of size r×r".into(),
        ));
    }
    Ok((n, r))
}

impl ProblemConfig {
    pub fn parse(text: &str) -> Result<(Self, Value), CliError> {
        let raw: Value = serde_json::from_str(text)
            .map_err(|e| CliError::Config(format!("config is not valid JSON: {e}")))?;
        let cfg = serde_json::from_value(raw.clone())
            .map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        Ok((cfg, raw))
    }

    fn base_region(&self, n: usize) -> Result<Option<Region>, CliError> {
        self.region
            .as_ref()
            .map(|b| b.region(n, "region"))
            .transpose()
    }

    pub fn connection(&self) -> Result<Connection, CliError> {
        let conn = self.build_connection(&self.connection, "connection")?;
        check_dim("base_dim", self.base_dim, conn.n())?;
        check_dim("fibre_rank", self.fibre_rank, conn.r())?;
        Ok(conn)
    }

    pub fn target_connection(&self, source: &Connection) -> Result<Connection, CliError> {
        match &self.target_connection {
            Some(v) => self.build_connection(v, "target_connection"),
            None => Ok(source.clone()),
        }
    }

    fn build_connection(&self, value: &Value, what: &str) -> Result<Connection, CliError> {
        let body = match value {
            Value::String(s) => match s.strip_prefix("registry:") {
                Some(name) => ConnectionBody::Registry {
                    name: name.to_string(),
                    matrices: None,
                    alpha: None,
                    alpha_grad: None,
                },
                None => {
                    return Err(CliError::Config(format!(
                        "{what}: string form must be \"registry:<name>\""
                    )))
                }
            },
            other => serde_json::from_value(other.clone())
                .map_err(|e| CliError::Config(format!("{what}: {e}")))?,
        };
        match body {
            ConnectionBody::ThreeIndex { gamma } => {
                let (n, _) = three_index_dims(&gamma)?;
                let region = self.base_region(n)?.unwrap_or_else(|| Region::unbounded(n));
                let tables: Vec<Vec<Vec<String>>> = gamma.iter().map(|m| table(m)).collect();
                Ok(Connection::Linear(
                    CoefficientField3::parse(&tables, region).config(what)?,
                ))
            }
            ConnectionBody::Affine { gamma, inhom } => {
                let (n, _) = three_index_dims(&gamma)?;
                let region = self.base_region(n)?.unwrap_or_else(|| Region::unbounded(n));
                let tables: Vec<Vec<Vec<String>>> = gamma.iter().map(|m| table(m)).collect();
                let linear = CoefficientField3::parse(&tables, region).config(what)?;
                let inhom = MatrixField::parse(&table(&inhom), &base_vars(n)).config(what)?;
                Ok(Connection::Affine(
                    AffineCoefficients::new(linear, inhom).config(what)?,
                ))
            }
            ConnectionBody::TwoIndex { gamma } => {
                let r = gamma.len();
                let n = self
                    .base_dim
                    .or_else(|| gamma.first().map(Vec::len))
                    .unwrap_or(0);
                if r == 0 || n == 0 {
                    return Err(CliError::Config(format!(
                        "{what}: two_index gamma needs r rows of n expressions"
                    )));
                }
                let base = self.base_region(n)?.unwrap_or_else(|| Region::unbounded(n));
                let region = base.product(&Region::unbounded(r));
                Ok(Connection::General(
                    TwoIndexField::parse(n, r, &table(&gamma), region).config(what)?,
                ))
            }
            ConnectionBody::Registry {
                name,
                matrices,
                alpha,
                alpha_grad,
            } => self.registry(&name, matrices, alpha, alpha_grad, what),
        }
    }

    fn registry(
        &self,
        name: &str,
        matrices: Option<Vec<Vec<Vec<f64>>>>,
        alpha: Option<String>,
        alpha_grad: Option<Vec<String>>,
        what: &str,
    ) -> Result<Connection, CliError> {
        let n = self.base_dim.unwrap_or(2);
        let linear = match name {
            "flat" => registry::flat(n, self.fibre_rank.unwrap_or(n)),
            "constant" => {
                let mats = matrices.ok_or_else(|| {
                    CliError::Config(format!("{what}: \"constant\" needs `matrices`"))
                })?;
                let mats = mats
                    .iter()
                    .map(|m| {
                        let rows = m.len();
                        if rows == 0 || m.iter().any(|row| row.len() != rows) {
                            return Err(CliError::Config(format!(
                                "{what}: constant matrices must be square"
                            )));
                        }
                        Ok(DMatrix::from_fn(rows, rows, |i, j| m[i][j]))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                registry::constant(&mats).config(what)?
            }
            "sphere-lc" => registry::sphere_lc(),
            "pure-gauge" => {
                let alpha = alpha.ok_or_else(|| {
                    CliError::Config(format!("{what}: \"pure-gauge\" needs `alpha`"))
                })?;
                PureGauge::parse(&alpha, alpha_grad.as_deref(), n)
                    .config(what)?
                    .connection()
            }
            "cartan-flat" => {
                let aff = registry::cartan_flat(n);
                return Ok(Connection::Affine(match self.base_region(n)? {
                    Some(region) => {
                        AffineCoefficients::new(restrict(aff.linear(), region), aff.inhom().clone())
                            .config(what)?
                    }
                    None => aff,
                }));
            }
            other => {
                return Err(CliError::Config(format!(
                    "{what}: unknown registry entry {other:?}; known: {}",
                    registry::NAMES.join(", ")
                )))
            }
        };
        Ok(Connection::Linear(match self.base_region(linear.n())? {
            Some(region) => restrict(&linear, region),
            None => linear,
        }))
    }

    pub fn frame_change(&self, n: usize, r: usize) -> Result<FrameChange, CliError> {
        let spec = require(&self.frame_change, "frame_change")?;
        let vars = base_vars(n);
        let base = MatrixField::parse(&table(&spec.base), &vars).config("frame_change.base")?;
        let fibre = MatrixField::parse(&table(&spec.fibre), &vars).config("frame_change.fibre")?;
        if base.rows() != n || fibre.rows() != r {
            return Err(CliError::Config(format!(
                "frame_change needs an {n}×{n} base block and an {r}×{r} fibre block"
            )));
        }
        FrameChange::new(base, fibre).config("frame_change")
    }

    pub fn base_frame(&self, region: &Region) -> Result<Option<FrameField>, CliError> {
        self.base_frame
            .as_ref()
            .map(|t| {
                let m =
                    MatrixField::parse(&table(t), &base_vars(region.dim())).config("base_frame")?;
                FrameField::new(m, region.clone()).config("base_frame")
            })
            .transpose()
    }

    pub fn section(&self, n: usize, r: usize) -> Result<SectionField, CliError> {
        let comps = require(&self.section, "section")?;
        if comps.len() != r {
            return Err(CliError::Config(format!("section needs {r} components")));
        }
        VectorField::parse(&texts(comps), &base_vars(n)).config("section")
    }

    pub fn vector_field(&self, n: usize) -> Result<Option<VectorField>, CliError> {
        self.vector_field
            .as_ref()
            .map(|comps| {
                if comps.len() != n {
                    return Err(CliError::Config(format!(
                        "vector_field needs {n} components"
                    )));
                }
                VectorField::parse(&texts(comps), &base_vars(n)).config("vector_field")
            })
            .transpose()
    }

    pub fn path(&self, n: usize, steps: usize) -> Result<PathSpec, CliError> {
        let spec = require(&self.path, "path")?;
        let path = match spec {
            PathConfig::Straight { from, to } => PathSpec::straight(from, to, steps),
            PathConfig::Polyline { points } => PathSpec::polyline(points.clone(), steps),
            PathConfig::Curve { comps, t0, t1 } => {
                PathSpec::parse_curve(&texts(comps), *t0, *t1, steps)
            }
        }
        .config("path")?;
        if path.dim() != n {
            return Err(CliError::Config(format!(
                "path has dimension {}, the base has {n}",
                path.dim()
            )));
        }
        Ok(path)
    }

    /// Explicit `points`, or `k` Halton points in the sample box.
    pub fn sample_points(
        &self,
        dim: usize,
        k: usize,
        default: &Region,
    ) -> Result<Vec<Vec<f64>>, CliError> {
        if let Some(points) = &self.points {
            if points.iter().any(|p| p.len() != dim) {
                return Err(CliError::Config(format!(
                    "points must have {dim} components"
                )));
            }
            return Ok(points.clone());
        }
        let region = match &self.sample_box {
            Some(b) => b.region(dim, "sample_box")?,
            None => default.clone(),
        };
        halton_points(&region, k)
    }
}

pub fn require<'a, T>(v: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
    v.as_ref()
        .ok_or_else(|| CliError::Config(format!("config is missing `{name}`")))
}

fn restrict(g3: &CoefficientField3, region: Region) -> CoefficientField3 {
    let inner = g3.clone();
    CoefficientField3::from_fn(g3.r(), region, move |x| inner.eval(x))
}

const HALTON_BASES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let mut result = 0.0;
    let mut scale = 1.0 / base as f64;
    while index > 0 {
        result += (index % base) as f64 * scale;
        index /= base;
        scale /= base as f64;
    }
    result
}

/// `k` Halton points in `region`; unbounded axes use `[-1, 1]`.
pub fn halton_points(region: &Region, k: usize) -> Result<Vec<Vec<f64>>, CliError> {
    let dim = region.dim();
    if dim > HALTON_BASES.len() {
        return Err(CliError::Config(format!(
            "sampling supports at most {} dimensions",
            HALTON_BASES.len()
        )));
    }
    let bounds: Vec<(f64, f64)> = (0..dim)
        .map(|i| {
            let (lo, hi) = (region.lo()[i], region.hi()[i]);
            match (lo.is_finite(), hi.is_finite()) {
                (true, true) => (lo, hi),
                (true, false) => (lo, lo + 2.0),
                (false, true) => (hi - 2.0, hi),
                (false, false) => (-1.0, 1.0),
            }
        })
        .collect();
    Ok((1..=k as u64)
        .map(|i| {
            bounds
                .iter()
                .zip(HALTON_BASES)
                .map(|(&(lo, hi), b)| lo + (hi - lo) * radical_inverse(i, b))
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halton_points_fill_the_box() {
        let region = Region::new(vec![0.0, -2.0], vec![1.0, 2.0]).unwrap();
        let pts = halton_points(&region, 27).unwrap();
        assert_eq!(pts.len(), 27);
        assert_eq!(pts[0], vec![0.5, -2.0 + 4.0 / 3.0]);
        assert!(pts.iter().all(|p| region.contains(p)));
    }

    #[test]
    fn registry_string_form() {
        let (cfg, _) = ProblemConfig::parse(r#"{"connection": "registry:sphere-lc"}"#).unwrap();
        let c = cfg.connection().unwrap();
        assert_eq!((c.n(), c.r(), c.kind()), (2, 2, "linear"));
        let (cfg, _) = ProblemConfig::parse(r#"{"connection": "registry:nope"}"#).unwrap();
        assert!(cfg.connection().is_err());
    }

    #[test]
    fn inconsistent_dimensions_are_rejected() {
        let (cfg, _) = ProblemConfig::parse(
            r#"{"base_dim": 3, "connection": {"kind": "three_index", "gamma": [[["0"]]]}}"#,
        )
        .unwrap();
        assert!(matches!(cfg.connection(), Err(CliError::Config(_))));
    }

    #[test]
    fn expression_errors_report_offsets() {
        let (cfg, _) = ProblemConfig::parse(
            r#"{"connection": {"kind": "three_index", "gamma": [[["x1 +"]]]}}"#,
        )
        .unwrap();
        let msg = cfg.connection().unwrap_err().to_string();
        assert!(msg.contains("byte 4"), "{msg}");
    }
}
