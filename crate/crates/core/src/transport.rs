//! Fixed-step RK4 integration of parallel transport, fundamental solutions,
//! geodesics and the transport-limit covariant derivative.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::connection::{AffineCoefficients, CoefficientField3, TwoIndexField};
use crate::fields::{FdValue, ScalarField, SectionField};
use crate::tolerances::{COVD_LIMIT_REL, MIN_STEPS, MIN_STEPS_PER_SEGMENT, PATH_VELOCITY_DIVISOR};
use crate::{Error, Result};

#[derive(Clone, Debug)]
enum PathShape {
    Curve {
        comps: Vec<ScalarField>,
        t0: f64,
        t1: f64,
    },
    Polyline(Vec<Vec<f64>>),
}

/// A base path with the number of RK4 steps used to integrate along it.
#[derive(Clone, Debug)]
pub struct PathSpec {
    shape: PathShape,
    steps: usize,
}

impl PathSpec {
    /// `x^μ(t)` for `t ∈ [t0, t1]`, each component a field of one variable.
    pub fn curve(comps: Vec<ScalarField>, t0: f64, t1: f64, steps: usize) -> Result<Self> {
        if !(t0 < t1) {
            return Err(Error::InvalidPath(format!(
                "need t0 < t1, got [{t0}, {t1}]"
            )));
        }
        if comps.is_empty() || comps.iter().any(|c| c.arity() != 1) {
            return Err(Error::InvalidPath(
                "curve components must be functions of t".into(),
            ));
        }
        Ok(PathSpec {
            shape: PathShape::Curve { comps, t0, t1 },
            steps,
        })
    }

    /// Parses components as expressions in `t`.
    pub fn parse_curve<T: AsRef<str>>(comps: &[T], t0: f64, t1: f64, steps: usize) -> Result<Self> {
        let fields = comps
            .iter()
            .map(|s| ScalarField::parse(s.as_ref(), &["t"]))
            .collect::<Result<Vec<_>>>()?;
        Self::curve(fields, t0, t1, steps)
    }

    pub fn polyline(points: Vec<Vec<f64>>, steps: usize) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidPath(
                "polyline needs at least two points".into(),
            ));
        }
        let dim = points[0].len();
        if dim == 0 || points.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidPath(
                "polyline points differ in dimension".into(),
            ));
        }
        Ok(PathSpec {
            shape: PathShape::Polyline(points),
            steps,
        })
    }

    pub fn straight(from: &[f64], to: &[f64], steps: usize) -> Result<Self> {
        Self::polyline(vec![from.to_vec(), to.to_vec()], steps)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn with_steps(&self, steps: usize) -> PathSpec {
        PathSpec {
            shape: self.shape.clone(),
            steps,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.shape {
            PathShape::Curve { comps, .. } => comps.len(),
            PathShape::Polyline(pts) => pts[0].len(),
        }
    }

    pub fn start(&self) -> Result<Vec<f64>> {
        match &self.shape {
            PathShape::Curve { comps, t0, .. } => comps.iter().map(|c| c.eval(&[*t0])).collect(),
            PathShape::Polyline(pts) => Ok(pts[0].clone()),
        }
    }

    pub fn end(&self) -> Result<Vec<f64>> {
        match &self.shape {
            PathShape::Curve { comps, t1, .. } => comps.iter().map(|c| c.eval(&[*t1])).collect(),
            PathShape::Polyline(pts) => Ok(pts[pts.len() - 1].clone()),
        }
    }

    /// The same image traversed backwards with the same step count.
    pub fn reversed(&self) -> PathSpec {
        let shape = match &self.shape {
            PathShape::Curve { comps, t0, t1 } => {
                let (t0, t1) = (*t0, *t1);
                let comps = comps
                    .iter()
                    .map(|c| {
                        let c = c.clone();
                        ScalarField::from_fn(1, move |t| c.eval(&[t0 + t1 - t[0]]))
                    })
                    .collect();
                PathShape::Curve { comps, t0, t1 }
            }
            PathShape::Polyline(pts) => PathShape::Polyline(pts.iter().rev().cloned().collect()),
        };
        PathSpec {
            shape,
            steps: self.steps,
        }
    }

    /// A curve restricted to `[a, b]` with `steps` steps.
    pub fn restricted(&self, a: f64, b: f64, steps: usize) -> Result<PathSpec> {
        match &self.shape {
            PathShape::Curve { comps, t0, t1 } => {
                if a < *t0 || b > *t1 {
                    return Err(Error::InvalidPath(
                        "restriction outside the interval".into(),
                    ));
                }
                PathSpec::curve(comps.clone(), a, b, steps)
            }
            PathShape::Polyline(_) => Err(Error::InvalidPath(
                "restriction is only defined for parametrized curves".into(),
            )),
        }
    }

    fn segments(&self) -> Result<Vec<Segment>> {
        if self.steps < MIN_STEPS {
            return Err(Error::StepCountTooSmall(self.steps));
        }
        match &self.shape {
            PathShape::Curve { comps, t0, t1 } => Ok(vec![Segment {
                motion: Motion::Curve {
                    comps: comps.clone(),
                    h_vel: (t1 - t0) / (PATH_VELOCITY_DIVISOR * self.steps as f64),
                },
                t0: *t0,
                t1: *t1,
                steps: self.steps,
            }]),
            PathShape::Polyline(pts) => {
                let lengths: Vec<f64> = pts
                    .windows(2)
                    .map(|w| {
                        w[0].iter()
                            .zip(&w[1])
                            .map(|(a, b)| (b - a) * (b - a))
                            .sum::<f64>()
                            .sqrt()
                    })
                    .collect();
                let total: f64 = lengths.iter().sum();
                if total == 0.0 {
                    return Ok(Vec::new());
                }
                Ok(pts
                    .windows(2)
                    .zip(&lengths)
                    .filter(|(_, &len)| len > 0.0)
                    .map(|(w, &len)| {
                        let share = (self.steps as f64 * len / total).round() as usize;
                        Segment {
                            motion: Motion::Line {
                                from: w[0].clone(),
                                to: w[1].clone(),
                            },
                            t0: 0.0,
                            t1: 1.0,
                            steps: share.max(MIN_STEPS_PER_SEGMENT),
                        }
                    })
                    .collect())
            }
        }
    }
}

#[derive(Clone, Debug)]
enum Motion {
    Curve { comps: Vec<ScalarField>, h_vel: f64 },
    Line { from: Vec<f64>, to: Vec<f64> },
}

#[derive(Clone, Debug)]
struct Segment {
    motion: Motion,
    t0: f64,
    t1: f64,
    steps: usize,
}

impl Segment {
    fn position(&self, t: f64) -> Result<Vec<f64>> {
        match &self.motion {
            Motion::Curve { comps, .. } => comps.iter().map(|c| c.eval(&[t])).collect(),
            Motion::Line { from, to } => {
                Ok(from.iter().zip(to).map(|(a, b)| a + t * (b - a)).collect())
            }
        }
    }

    fn velocity(&self, t: f64) -> Result<Vec<f64>> {
        match &self.motion {
            Motion::Curve { comps, h_vel } => comps
                .iter()
                .map(|c| {
                    let (tp, tm) = (t + h_vel, t - h_vel);
                    Ok((c.eval(&[tp])? - c.eval(&[tm])?) / (tp - tm))
                })
                .collect(),
            Motion::Line { from, to } => Ok(from.iter().zip(to).map(|(a, b)| b - a).collect()),
        }
    }
}

/// One recorded point of an integration.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub values: DVector<f64>,
}

/// Final fibre values plus the trajectory at every step boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportResult {
    pub values: DVector<f64>,
    pub samples: Vec<Sample>,
    pub steps: usize,
    /// Largest `h·|k4 − k1|∞` over all steps: how much the right-hand side
    /// varies within a step.
    pub max_stage_spread: f64,
}

struct Integration<S> {
    state: S,
    samples: Vec<(Vec<f64>, S)>,
    steps: usize,
    max_stage_spread: f64,
}

fn max_abs_diff<S: FdValue + Clone + AsSlice>(a: &S, b: &S) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

trait AsSlice {
    fn as_slice(&self) -> &[f64];
}

impl AsSlice for DVector<f64> {
    fn as_slice(&self) -> &[f64] {
        nalgebra::Matrix::as_slice(self)
    }
}

impl AsSlice for DMatrix<f64> {
    fn as_slice(&self) -> &[f64] {
        nalgebra::Matrix::as_slice(self)
    }
}

/// Classical RK4 along every segment of `path` for `dy/dt = rhs(x, ẋ, y)`.
fn integrate<S, F>(path: &PathSpec, y0: S, record: bool, rhs: F) -> Result<Integration<S>>
where
    S: FdValue + Clone + AsSlice,
    F: Fn(&[f64], &[f64], &S) -> Result<S>,
{
    let segments = path.segments()?;
    let mut y = y0;
    let mut samples = Vec::new();
    let mut steps = 0;
    let mut spread: f64 = 0.0;
    if record {
        samples.push((path.start()?, y.clone()));
    }
    for seg in &segments {
        let h = (seg.t1 - seg.t0) / seg.steps as f64;
        let eval = |t: f64, state: &S| -> Result<S> {
            let x = seg.position(t)?;
            let v = seg.velocity(t)?;
            rhs(&x, &v, state)
        };
        let shifted = |k: &S, s: f64, base: &S| {
            let mut out = base.clone();
            out.add_scaled(k, s);
            out
        };
        for i in 0..seg.steps {
            let t = seg.t0 + h * i as f64;
            let k1 = eval(t, &y)?;
            let k2 = eval(t + 0.5 * h, &shifted(&k1, 0.5 * h, &y))?;
            let k3 = eval(t + 0.5 * h, &shifted(&k2, 0.5 * h, &y))?;
            let k4 = eval(t + h, &shifted(&k3, h, &y))?;
            spread = spread.max(h.abs() * max_abs_diff(&k4, &k1));
            y.add_scaled(&k1, h / 6.0);
            y.add_scaled(&k2, h / 3.0);
            y.add_scaled(&k3, h / 3.0);
            y.add_scaled(&k4, h / 6.0);
            if y.as_slice().iter().any(|v| !v.is_finite()) {
                return Err(Error::non_finite("transport state"));
            }
            steps += 1;
            if record {
                samples.push((seg.position(t + h)?, y.clone()));
            }
        }
    }
    Ok(Integration {
        state: y,
        samples,
        steps,
        max_stage_spread: spread,
    })
}

fn vector_result(run: Integration<DVector<f64>>) -> TransportResult {
    TransportResult {
        values: run.state,
        samples: run
            .samples
            .into_iter()
            .map(|(x, values)| Sample { x, values })
            .collect(),
        steps: run.steps,
        max_stage_spread: run.max_stage_spread,
    }
}

fn check_path(path: &PathSpec, n: usize) -> Result<()> {
    if path.dim() != n {
        return Err(Error::dim(format!(
            "path has dimension {}, base has {n}",
            path.dim()
        )));
    }
    Ok(())
}

fn check_fibre(p0: &[f64], r: usize) -> Result<()> {
    if p0.len() != r {
        return Err(Error::dim(format!(
            "initial value has {} components, fibre rank is {r}",
            p0.len()
        )));
    }
    Ok(())
}

/// Integrates `dū^a/dt = Γ^a_μ(γ(t), ū) ẋ^μ` from `ū(t0) = p0`.
pub fn transport_general(
    g2: &TwoIndexField,
    path: &PathSpec,
    p0: &[f64],
) -> Result<TransportResult> {
    let (n, r) = (g2.n(), g2.r());
    check_path(path, n)?;
    check_fibre(p0, r)?;
    let mut point = vec![0.0; n + r];
    point[..n].copy_from_slice(&path.start()?);
    point[n..].copy_from_slice(p0);
    g2.region().check(&point)?;
    let run = integrate(path, DVector::from_column_slice(p0), true, |x, v, u| {
        let mut p = Vec::with_capacity(n + r);
        p.extend_from_slice(x);
        p.extend_from_slice(u.as_slice());
        let gamma = g2.eval(&p)?;
        Ok(gamma * DVector::from_column_slice(v))
    })?;
    Ok(vector_result(run))
}

fn linear_rhs(
    g3: &CoefficientField3,
    x: &[f64],
    v: &[f64],
    y: &DVector<f64>,
) -> Result<DVector<f64>> {
    let a = g3.contract(x, v)?;
    Ok(-(a * y))
}

/// Integrates `dγ̄/dt = −Γ_μ(γ(t)) γ̄ ẋ^μ` from `γ̄(t0) = X0`.
pub fn transport_linear(
    g3: &CoefficientField3,
    path: &PathSpec,
    x0: &[f64],
) -> Result<TransportResult> {
    check_path(path, g3.n())?;
    check_fibre(x0, g3.r())?;
    g3.region().check(&path.start()?)?;
    let run = integrate(path, DVector::from_column_slice(x0), true, |x, v, y| {
        linear_rhs(g3, x, v, y)
    })?;
    Ok(vector_result(run))
}

/// Solves `dY/dt = −[Γ_μ ẋ^μ] Y`, `Y(t0) = 1`.
pub fn fundamental_solution(g3: &CoefficientField3, path: &PathSpec) -> Result<DMatrix<f64>> {
    check_path(path, g3.n())?;
    g3.region().check(&path.start()?)?;
    let r = g3.r();
    let run = integrate(path, DMatrix::identity(r, r), false, |x, v, y| {
        let a = g3.contract(x, v)?;
        Ok(-(a * y))
    })?;
    Ok(run.state)
}

/// Integrates `dγ̄/dt = −Γ_μ γ̄ ẋ^μ + G_μ ẋ^μ`.
pub fn transport_affine(
    aff: &AffineCoefficients,
    path: &PathSpec,
    p0: &[f64],
) -> Result<TransportResult> {
    let g3 = aff.linear();
    check_path(path, g3.n())?;
    check_fibre(p0, g3.r())?;
    g3.region().check(&path.start()?)?;
    let run = integrate(path, DVector::from_column_slice(p0), true, |x, v, y| {
        let lin = linear_rhs(g3, x, v, y)?;
        let g = aff.eval_inhom(x)?;
        Ok(lin + g * DVector::from_column_slice(v))
    })?;
    Ok(vector_result(run))
}

/// Geodesic trajectory sampled at every step.
#[derive(Clone, Debug, PartialEq)]
pub struct Geodesic {
    pub t: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
}

impl Geodesic {
    /// The trajectory as a path, interpolated by cubic Hermite pieces built
    /// from the sampled positions and velocities.
    pub fn as_path(&self, steps: usize) -> Result<PathSpec> {
        let data = Arc::new(self.clone());
        let n = self.x[0].len();
        let comps = (0..n)
            .map(|mu| {
                let g = Arc::clone(&data);
                ScalarField::from_fn(1, move |t| Ok(g.hermite(t[0], mu)))
            })
            .collect();
        let (t0, t1) = (self.t[0], self.t[self.t.len() - 1]);
        PathSpec::curve(comps, t0, t1, steps)
    }

    fn hermite(&self, t: f64, mu: usize) -> f64 {
        let last = self.t.len() - 1;
        let h = self.t[1] - self.t[0];
        let i = (((t - self.t[0]) / h).floor().max(0.0) as usize).min(last - 1);
        let s = (t - self.t[i]) / h;
        let (x0, x1) = (self.x[i][mu], self.x[i + 1][mu]);
        let (v0, v1) = (self.v[i][mu] * h, self.v[i + 1][mu] * h);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * x0
            + (s3 - 2.0 * s2 + s) * v0
            + (-2.0 * s3 + 3.0 * s2) * x1
            + (s3 - s2) * v1
    }
}

/// Integrates `ẍ^μ + Γ^μ_{λν} ẋ^λ ẋ^ν = 0` for `t ∈ [0, T]` in `steps` steps;
/// the fibre index of the tangent-bundle coefficients is λ.
pub fn geodesic(
    g3: &CoefficientField3,
    x0: &[f64],
    v0: &[f64],
    length: f64,
    steps: usize,
) -> Result<Geodesic> {
    let n = g3.n();
    if g3.r() != n {
        return Err(Error::dim(
            "geodesics need tangent-bundle coefficients (r = n)",
        ));
    }
    if x0.len() != n || v0.len() != n {
        return Err(Error::dim(
            "initial point and velocity must have base dimension",
        ));
    }
    if steps < MIN_STEPS {
        return Err(Error::StepCountTooSmall(steps));
    }
    g3.region().check(x0)?;
    let accel = |x: &DVector<f64>, v: &DVector<f64>| -> Result<DVector<f64>> {
        let a = g3.contract(x.as_slice(), v.as_slice())?;
        Ok(-(a * v))
    };
    let h = length / steps as f64;
    let mut x = DVector::from_column_slice(x0);
    let mut v = DVector::from_column_slice(v0);
    let mut out = Geodesic {
        t: vec![0.0],
        x: vec![x.clone()],
        v: vec![v.clone()],
    };
    for i in 0..steps {
        let k1x = v.clone();
        let k1v = accel(&x, &v)?;
        let x2 = &x + &k1x * (0.5 * h);
        let v2 = &v + &k1v * (0.5 * h);
        let k2x = v2.clone();
        let k2v = accel(&x2, &v2)?;
        let x3 = &x + &k2x * (0.5 * h);
        let v3 = &v + &k2v * (0.5 * h);
        let k3x = v3.clone();
        let k3v = accel(&x3, &v3)?;
        let x4 = &x + &k3x * h;
        let v4 = &v + &k3v * h;
        let k4x = v4.clone();
        let k4v = accel(&x4, &v4)?;
        x += (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (h / 6.0);
        v += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0);
        if x.iter().chain(v.iter()).any(|c| !c.is_finite()) {
            return Err(Error::non_finite("geodesic state"));
        }
        g3.region().check(x.as_slice())?;
        out.t.push(h * (i + 1) as f64);
        out.x.push(x.clone());
        out.v.push(v.clone());
    }
    Ok(out)
}

/// Steps used for the short transports inside the limit derivative.
const LIMIT_STEPS: usize = 16;

fn limit_step(x: &[f64], eps: Option<f64>) -> f64 {
    eps.unwrap_or_else(|| COVD_LIMIT_REL * x.iter().fold(1.0f64, |m, v| m.max(v.abs())))
}

fn offset(x: &[f64], f: &[f64], s: f64) -> Vec<f64> {
    x.iter().zip(f).map(|(a, b)| a + s * b).collect()
}

/// `(∇_F Y)|_x` as the symmetric limit of transported section values:
/// `(P_{ε→0} Y(x+εF) − P_{−ε→0} Y(x−εF)) / 2ε`, each transport integrated
/// along the straight segment back to `x`.
pub fn covariant_derivative_limit(
    g3: &CoefficientField3,
    f: &[f64],
    y: &SectionField,
    x: &[f64],
    eps: Option<f64>,
) -> Result<DVector<f64>> {
    let eps = limit_step(x, eps);
    let pull = |s: f64| -> Result<DVector<f64>> {
        let from = offset(x, f, s);
        let path = PathSpec::straight(&from, x, LIMIT_STEPS)?;
        let value = y.eval(&from)?;
        Ok(transport_linear(g3, &path, value.as_slice())?.values)
    };
    Ok((pull(eps)? - pull(-eps)?) / (2.0 * eps))
}

/// The same limit for an affine connection, using the linear part of the
/// affine transport map, `P(v) − P(0)`.
pub fn covariant_derivative_limit_affine(
    aff: &AffineCoefficients,
    f: &[f64],
    y: &SectionField,
    x: &[f64],
    eps: Option<f64>,
) -> Result<DVector<f64>> {
    let eps = limit_step(x, eps);
    let zero = vec![0.0; aff.r()];
    let pull = |s: f64| -> Result<DVector<f64>> {
        let from = offset(x, f, s);
        let path = PathSpec::straight(&from, x, LIMIT_STEPS)?;
        let value = y.eval(&from)?;
        let moved = transport_affine(aff, &path, value.as_slice())?.values;
        let origin = transport_affine(aff, &path, &zero)?.values;
        Ok(moved - origin)
    };
    Ok((pull(eps)? - pull(-eps)?) / (2.0 * eps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{base_vars, MatrixField, Region, VectorField};
    use proptest::prelude::*;

    fn scalar_g3(c: f64) -> CoefficientField3 {
        CoefficientField3::constant(&[DMatrix::from_element(1, 1, c)], Region::unbounded(1))
            .unwrap()
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

    fn wiggle(steps: usize) -> PathSpec {
        PathSpec::parse_curve(&["0.3*t + 0.1*sin(3*t)", "0.5*t^2 - 0.2"], 0.0, 1.0, steps).unwrap()
    }

    #[test]
    fn zero_connection_leaves_value() {
        let zero = TwoIndexField::from_linear(&CoefficientField3::zero(2, Region::unbounded(2)));
        let res = transport_general(&zero, &wiggle(50), &[1.0, 2.0]).unwrap();
        assert_eq!(res.values.as_slice(), &[1.0, 2.0]);
        let lin = transport_linear(
            &CoefficientField3::zero(2, Region::unbounded(2)),
            &wiggle(50),
            &[3.0, -1.0],
        )
        .unwrap();
        assert_eq!(lin.values.as_slice(), &[3.0, -1.0]);
        let y = fundamental_solution(
            &CoefficientField3::zero(3, Region::unbounded(2)),
            &wiggle(20),
        )
        .unwrap();
        assert_eq!(y, DMatrix::identity(3, 3));
    }

    #[test]
    fn scalar_decay_matches_closed_form() {
        let g2 = TwoIndexField::from_linear(&scalar_g3(1.0));
        let path = PathSpec::straight(&[0.0], &[1.0], 1000).unwrap();
        let res = transport_general(&g2, &path, &[1.0]).unwrap();
        assert!((res.values[0] - (-1.0f64).exp()).abs() < 5e-10);
        assert!((res.values[0] - 0.367_879_441_17).abs() < 5e-10);
    }

    #[test]
    fn too_few_steps_rejected() {
        let path = PathSpec::straight(&[0.0], &[1.0], 7).unwrap();
        assert_eq!(
            transport_linear(&scalar_g3(1.0), &path, &[1.0]),
            Err(Error::StepCountTooSmall(7))
        );
        assert!(matches!(
            geodesic(&scalar_g3(1.0), &[0.0], &[1.0], 1.0, 4),
            Err(Error::StepCountTooSmall(4))
        ));
    }

    #[test]
    fn leaving_the_region_is_reported() {
        let g3 = CoefficientField3::zero(1, Region::new(vec![-1.0], vec![1.0]).unwrap());
        let path = PathSpec::straight(&[0.0], &[2.0], 20).unwrap();
        assert!(matches!(
            transport_linear(&g3, &path, &[1.0]),
            Err(Error::DomainExit { .. })
        ));
    }

    #[test]
    fn zero_length_path_is_identity() {
        let path = PathSpec::polyline(vec![vec![0.5, 0.5]; 3], 16).unwrap();
        let res = transport_linear(&sample_g3(), &path, &[1.0, 2.0]).unwrap();
        assert_eq!(res.values.as_slice(), &[1.0, 2.0]);
        assert_eq!(res.steps, 0);
    }

    #[test]
    fn polyline_steps_follow_lengths() {
        let path = PathSpec::polyline(vec![vec![0.0], vec![3.0], vec![3.1]], 100).unwrap();
        let segs = path.segments().unwrap();
        let steps: Vec<usize> = segs.iter().map(|s| s.steps).collect();
        assert_eq!(steps, vec![97, 3]);
        let tiny = PathSpec::polyline(vec![vec![0.0], vec![1.0], vec![1.0 + 1e-6]], 10).unwrap();
        assert_eq!(tiny.segments().unwrap()[1].steps, MIN_STEPS_PER_SEGMENT);
    }

    #[test]
    fn reversal_returns_to_start() {
        let g3 = sample_g3();
        for path in [
            wiggle(200),
            PathSpec::polyline(vec![vec![0.0, 0.0], vec![0.4, 0.1], vec![0.2, 0.7]], 200).unwrap(),
        ] {
            let there = transport_linear(&g3, &path, &[1.0, -0.5]).unwrap();
            let back = transport_linear(&g3, &path.reversed(), there.values.as_slice()).unwrap();
            assert!((back.values - DVector::from_column_slice(&[1.0, -0.5])).amax() < 1e-8);
        }
        let g2 = TwoIndexField::parse(
            2,
            1,
            &[vec!["sin(u3)*u1", "u3^2 - u2"]],
            Region::unbounded(3),
        )
        .unwrap();
        let path = wiggle(400);
        let there = transport_general(&g2, &path, &[0.3]).unwrap();
        let back = transport_general(&g2, &path.reversed(), there.values.as_slice()).unwrap();
        assert!((back.values[0] - 0.3).abs() < 1e-8);
    }

    #[test]
    fn pure_gauge_transport_is_conjugation() {
        // B = rotation by x1*x2, Γ_μ = −(∂_μ B) B⁻¹ = −∂_μ(x1 x2) J.
        let region = Region::unbounded(2);
        let g3 = CoefficientField3::parse(
            &[
                vec![vec!["0", "x2"], vec!["-x2", "0"]],
                vec![vec!["0", "x1"], vec!["-x1", "0"]],
            ],
            region,
        )
        .unwrap();
        let rot = |a: f64| DMatrix::from_row_slice(2, 2, &[a.cos(), -a.sin(), a.sin(), a.cos()]);
        let path = wiggle(1000);
        let (s, e) = (path.start().unwrap(), path.end().unwrap());
        let x0 = DVector::from_column_slice(&[0.8, -0.3]);
        let expected = rot(e[0] * e[1]) * rot(s[0] * s[1]).transpose() * &x0;
        let got = transport_linear(&g3, &path, x0.as_slice()).unwrap();
        assert!((got.values - expected).amax() < 1e-7);
    }

    #[test]
    fn commuting_constant_coefficients_exponentiate() {
        // Γ = diag(a, b) along a unit straight path, closed form exp(−Γ).
        let g = DMatrix::from_row_slice(2, 2, &[0.7, 0.0, 0.0, -1.3]);
        let g3 = CoefficientField3::constant(&[g], Region::unbounded(1)).unwrap();
        let path = PathSpec::straight(&[0.0], &[1.0], 400).unwrap();
        let y = fundamental_solution(&g3, &path).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[(-0.7f64).exp(), 0.0, 0.0, (1.3f64).exp()]);
        assert!((y - expected).amax() < 1e-8);
    }

    #[test]
    fn affine_degenerates_to_linear_bitwise() {
        let g3 = sample_g3();
        let aff = AffineCoefficients::new(g3.clone(), MatrixField::zeros(2, 2, 2)).unwrap();
        let path = wiggle(64);
        let a = transport_affine(&aff, &path, &[0.4, 1.1]).unwrap();
        let l = transport_linear(&g3, &path, &[0.4, 1.1]).unwrap();
        assert!(a
            .values
            .iter()
            .zip(l.values.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn constant_inhomogeneous_part_is_quadrature() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, -0.5, 2.0, 0.25]);
        let aff = AffineCoefficients::new(
            CoefficientField3::zero(2, Region::unbounded(2)),
            MatrixField::constant(&g, 2),
        )
        .unwrap();
        let (a, b) = ([0.1, 0.2], [1.3, -0.7]);
        let path = PathSpec::straight(&a, &b, 50).unwrap();
        let res = transport_affine(&aff, &path, &[1.0, 1.0]).unwrap();
        let disp = DVector::from_column_slice(&[b[0] - a[0], b[1] - a[1]]);
        let expected = DVector::from_column_slice(&[1.0, 1.0]) + g * disp;
        assert!((res.values - expected).amax() < 1e-10);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let g3 = scalar_g3(1.0);
        let err = |n: usize| {
            let path = PathSpec::straight(&[0.0], &[1.0], n).unwrap();
            let v = transport_linear(&g3, &path, &[1.0]).unwrap().values[0];
            (v - (-1.0f64).exp()).abs()
        };
        for n in [16, 32, 64] {
            let slope = (err(n) / err(2 * n)).log2();
            assert!((3.7..=4.3).contains(&slope), "N={n}: slope {slope}");
        }
    }

    #[test]
    fn concatenation_matches_whole_path() {
        let g3 = sample_g3();
        let whole = wiggle(200);
        let first = whole.restricted(0.0, 0.25, 50).unwrap();
        let second = whole.restricted(0.25, 1.0, 150).unwrap();
        let mid = transport_linear(&g3, &first, &[1.0, 0.5]).unwrap();
        let two = transport_linear(&g3, &second, mid.values.as_slice()).unwrap();
        let one = transport_linear(&g3, &whole, &[1.0, 0.5]).unwrap();
        assert!((two.values - one.values).amax() < 1e-9);
    }

    #[test]
    fn flat_geodesic_is_straight() {
        let g3 = CoefficientField3::zero(3, Region::unbounded(3));
        let (x0, v0) = ([0.1, -2.0, 3.0], [1.5, 0.25, -0.75]);
        let geo = geodesic(&g3, &x0, &v0, 2.0, 40).unwrap();
        for (t, x) in geo.t.iter().zip(&geo.x) {
            for mu in 0..3 {
                assert!((x[mu] - (x0[mu] + t * v0[mu])).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn limit_derivative_of_zero_connection() {
        let g3 = CoefficientField3::zero(2, Region::unbounded(2));
        let y = VectorField::parse(&["x1^2 * x2", "sin(x2)"], &base_vars(2)).unwrap();
        let x = [0.7, 0.3];
        let f = [1.0, -2.0];
        let d = covariant_derivative_limit(&g3, &f, &y, &x, None).unwrap();
        let expected = [
            2.0 * x[0] * x[1] * f[0] + x[0] * x[0] * f[1],
            x[1].cos() * f[1],
        ];
        assert!((d[0] - expected[0]).abs() < 1e-6 && (d[1] - expected[1]).abs() < 1e-6);
        let c = VectorField::constant(&[2.0, 5.0], 2);
        assert!(
            covariant_derivative_limit(&g3, &f, &c, &x, None)
                .unwrap()
                .amax()
                < 1e-12
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn transport_is_linear(
            a in -2.0f64..2.0, b in -2.0f64..2.0,
            x in prop::array::uniform2(-1.0f64..1.0),
            y in prop::array::uniform2(-1.0f64..1.0),
        ) {
            let g3 = sample_g3();
            let path = wiggle(1000);
            let p = |v: &[f64]| transport_linear(&g3, &path, v).unwrap().values;
            let combo = [a * x[0] + b * y[0], a * x[1] + b * y[1]];
            let lhs = p(&combo);
            let rhs = p(&x) * a + p(&y) * b;
            prop_assert!((lhs - rhs).amax() <= 1e-9);
        }

        #[test]
        fn fundamental_solution_superposes(x in prop::array::uniform2(-3.0f64..3.0)) {
            let g3 = sample_g3();
            let path = wiggle(300);
            let y = fundamental_solution(&g3, &path).unwrap();
            let direct = transport_linear(&g3, &path, &x).unwrap().values;
            prop_assert!((y * DVector::from_column_slice(&x) - direct).amax() <= 1e-10);
        }

        #[test]
        fn affine_transport_is_affine(rho in -2.0f64..2.0, x in prop::array::uniform2(-1.0f64..1.0)) {
            let gsrc = [vec!["x1 - x2", "2"], vec!["sin(x2)", "x1^2"]];
            let aff = AffineCoefficients::new(
                sample_g3(),
                MatrixField::parse(&gsrc, &base_vars(2)).unwrap(),
            ).unwrap();
            let path = wiggle(1000);
            let p = |v: &[f64]| transport_affine(&aff, &path, v).unwrap().values;
            let lhs = p(&[rho * x[0], rho * x[1]]);
            let rhs = p(&x) * rho + p(&[0.0, 0.0]) * (1.0 - rho);
            prop_assert!((lhs - rhs).amax() <= 1e-9);
        }
    }
}
