//! The CLI commands. Each returns a result and a diagnostics object.

use bundlecalc::calculus::{
    covariant_derivative, curvature, curvature_general_frame, dual_covariant_derivative,
    fibre_curvature_general, flat_fundamental_matrix, is_flat, lift_to_bundle, nabla_hat_oracle,
    CurvatureValues, FibreCurvature,
};
use bundlecalc::connection::{
    transform_inhomogeneous, transform_three_index, transform_two_index, BundleCoordChange,
    FrameChange, TwoIndexField,
};
use bundlecalc::fields::{
    anholonomy, anholonomy_after_change, frame_derivatives, invert, lie_gamma,
    lie_gamma_after_change, Fd, FrameField, MatrixField, Region, ScalarField, SectionField,
    VectorField,
};
use bundlecalc::morphism::{
    jacobi_adapted, jacobi_natural, preserves_connection, tangent_map_second_order,
    vb_morphism_coeffs, BundleMorphism, FibreMap,
};
use bundlecalc::tolerances::DEFAULT_TOL;
use bundlecalc::transport::{
    covariant_derivative_limit, covariant_derivative_limit_affine, fundamental_solution, geodesic,
    transport_affine, transport_general, transport_linear, PathSpec, TransportResult,
};
use bundlecalc::Error;
use bundlecalc_verify::oracles::three_index_coordinate_form;
use bundlecalc_verify::suite;
use nalgebra::{DMatrix, DVector};
use serde_json::Value;

use crate::config::{require, table, texts, Connection, ProblemConfig};
use crate::error::{CliError, ConfigContext};
use crate::json::{dvector, matrices, matrix, max_abs, max_abs_diff, num, tagged, vector};

const DEFAULT_STEPS: usize = 200;
const DEFAULT_GEODESIC_STEPS: usize = 1000;
const DEFAULT_SAMPLES: usize = 27;
/// Steps of the short transports used by transformation-law checks.
const LAW_STEPS: usize = 64;
/// Length of the segment used by the coordinate-change check.
const LAW_PATH_LENGTH: f64 = 0.1;
/// Relative offset of the transport estimate of the inhomogeneous part.
const INHOM_OFFSET_REL: f64 = 1e-4;
const NEWTON_MAX_ITER: usize = 50;
const NEWTON_TOL: f64 = 1e-14;

/// Command-line overrides of the config's numeric parameters.
#[derive(Debug, Clone, Default)]
pub struct Flags {
    pub steps: Option<usize>,
    pub fd_step: Option<f64>,
    pub tol: Option<f64>,
    pub samples: Option<usize>,
    pub suite: Option<String>,
}

impl Flags {
    pub fn to_json(&self) -> Value {
        let mut map = serde_json::Map::new();
        map.insert("steps".into(), self.steps.map_or(Value::Null, Value::from));
        map.insert("fd_step".into(), self.fd_step.map_or(Value::Null, num));
        map.insert("tol".into(), self.tol.map_or(Value::Null, num));
        map.insert(
            "samples".into(),
            self.samples.map_or(Value::Null, Value::from),
        );
        map.insert(
            "suite".into(),
            self.suite.clone().map_or(Value::Null, Value::String),
        );
        Value::Object(map)
    }
}

pub struct Outcome {
    pub result: Value,
    pub diagnostics: Value,
    /// A completed run whose verdict is a failure (exit code 1).
    pub failed: bool,
}

impl Outcome {
    fn ok(result: Value, diagnostics: Value) -> Self {
        Outcome {
            result,
            diagnostics,
            failed: false,
        }
    }
}

/// A config together with the flag overrides.
pub struct Job<'a> {
    pub cfg: &'a ProblemConfig,
    pub flags: &'a Flags,
}

impl Job<'_> {
    fn steps(&self, default: usize) -> usize {
        self.flags
            .steps
            .or(self.cfg.params.steps)
            .unwrap_or(default)
    }

    fn fd(&self) -> Result<Fd, CliError> {
        match self.flags.fd_step.or(self.cfg.params.fd_step) {
            None => Ok(Fd::default()),
            Some(h) if h.is_finite() && h > 0.0 => Ok(Fd::with_first(h)),
            Some(h) => Err(CliError::Config(format!(
                "fd step must be positive, got {h}"
            ))),
        }
    }

    fn tol(&self) -> Result<f64, CliError> {
        match self.flags.tol.or(self.cfg.params.tol) {
            None => Ok(DEFAULT_TOL),
            Some(t) if t.is_finite() && t > 0.0 => Ok(t),
            Some(t) => Err(CliError::Config(format!("tol must be positive, got {t}"))),
        }
    }

    fn samples(&self) -> Result<usize, CliError> {
        match self.flags.samples.or(self.cfg.params.samples) {
            None => Ok(DEFAULT_SAMPLES),
            Some(0) => Err(CliError::Config("samples must be at least 1".into())),
            Some(k) => Ok(k),
        }
    }

    fn vector(&self, v: &Option<Vec<f64>>, name: &str, dim: usize) -> Result<Vec<f64>, CliError> {
        let v = require(v, name)?;
        if v.len() != dim {
            return Err(CliError::Config(format!(
                "`{name}` needs {dim} components, got {}",
                v.len()
            )));
        }
        Ok(v.clone())
    }

    /// The fibre point `p0`, or the zero vector.
    fn fibre_point(&self, r: usize) -> Result<Vec<f64>, CliError> {
        match &self.cfg.p0 {
            Some(_) => self.vector(&self.cfg.p0, "p0", r),
            None => Ok(vec![0.0; r]),
        }
    }

    /// `point`, or Halton samples of the region.
    fn base_points(&self, n: usize, region: &Region) -> Result<Vec<Vec<f64>>, CliError> {
        match &self.cfg.point {
            Some(_) => Ok(vec![self.vector(&self.cfg.point, "point", n)?]),
            None => self.cfg.sample_points(n, self.samples()?, region),
        }
    }
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().chain(b).copied().collect()
}

fn flat_diff(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).amax())
        .fold(0.0, f64::max)
}

fn optional_point(p: Option<&Vec<f64>>) -> Value {
    p.map_or(Value::Null, |p| vector(p))
}

fn run_transport(
    conn: &Connection,
    path: &PathSpec,
    start: &[f64],
) -> Result<TransportResult, Error> {
    match conn {
        Connection::Linear(g3) => transport_linear(g3, path, start),
        Connection::Affine(aff) => transport_affine(aff, path, start),
        Connection::General(g2) => transport_general(g2, path, start),
    }
}

fn transport_eq(conn: &Connection) -> &'static str {
    match conn {
        Connection::Linear(_) => "4.18",
        Connection::Affine(_) => "4.66",
        Connection::General(_) => "3.26″a",
    }
}

pub fn transport(job: &Job) -> Result<Outcome, CliError> {
    let conn = job.cfg.connection()?;
    let path = job.cfg.path(conn.n(), job.steps(DEFAULT_STEPS))?;
    let p0 = job.vector(&job.cfg.p0, "p0", conn.r())?;
    let eq = transport_eq(&conn);
    let forward = run_transport(&conn, &path, &p0).numeric("transport")?;
    let back = run_transport(&conn, &path.reversed(), forward.values.as_slice())
        .numeric("reverse transport")?;
    let trajectory = forward
        .samples
        .iter()
        .map(|s| {
            tagged(
                eq,
                vec![("x", vector(&s.x)), ("values", dvector(&s.values))],
            )
        })
        .collect();
    let mut result = vec![
        ("connection_kind", Value::from(conn.kind())),
        ("start", vector(&p0)),
        ("final", dvector(&forward.values)),
        ("end_point", vector(&path.end().numeric("path")?)),
        ("trajectory", Value::Array(trajectory)),
    ];
    let mut diagnostics = vec![
        ("steps", Value::from(forward.steps)),
        ("max_stage_spread", num(forward.max_stage_spread)),
        (
            "reversal_residual",
            num(max_abs_diff(back.values.as_slice(), &p0)),
        ),
    ];
    if let Connection::Linear(g3) = &conn {
        let fundamental = fundamental_solution(g3, &path).numeric("fundamental solution")?;
        let predicted = &fundamental * DVector::from_column_slice(&p0);
        result.push((
            "fundamental_matrix",
            tagged("4.20", vec![("matrix", matrix(&fundamental))]),
        ));
        diagnostics.push((
            "fundamental_residual",
            tagged(
                "4.20",
                vec![("max_abs", num((predicted - &forward.values).amax()))],
            ),
        ));
    }
    Ok(Outcome::ok(tagged(eq, result), tagged(eq, diagnostics)))
}

pub fn geodesic_cmd(job: &Job) -> Result<Outcome, CliError> {
    let conn = job.cfg.connection()?;
    let g3 = conn.linear("geodesic")?;
    let n = g3.n();
    let spec = require(&job.cfg.geodesic, "geodesic")?;
    if spec.x0.len() != n || spec.v0.len() != n {
        return Err(CliError::Config(format!(
            "geodesic x0 and v0 need {n} components"
        )));
    }
    let steps = job.steps(DEFAULT_GEODESIC_STEPS);
    let geo = geodesic(g3, &spec.x0, &spec.v0, spec.length, steps).numeric("geodesic")?;
    let (x_end, v_end) = match (geo.x.last(), geo.v.last()) {
        (Some(x), Some(v)) => (x.clone(), v.clone()),
        _ => return Err(CliError::Numerical("geodesic produced no samples".into())),
    };
    let back = geodesic(
        g3,
        x_end.as_slice(),
        (-&v_end).as_slice(),
        spec.length,
        steps,
    )
    .numeric("reverse geodesic")?;
    let returned = back
        .x
        .last()
        .map_or(f64::NAN, |x| max_abs_diff(x.as_slice(), &spec.x0));
    let trajectory = geo
        .t
        .iter()
        .zip(&geo.x)
        .zip(&geo.v)
        .map(|((t, x), v)| {
            tagged(
                "3.27",
                vec![("t", num(*t)), ("x", dvector(x)), ("v", dvector(v))],
            )
        })
        .collect();
    let result = tagged(
        "3.27",
        vec![
            ("final_x", dvector(&x_end)),
            ("final_v", dvector(&v_end)),
            ("length", num(spec.length)),
            ("trajectory", Value::Array(trajectory)),
        ],
    );
    let diagnostics = tagged(
        "3.27",
        vec![
            ("steps", Value::from(steps)),
            ("reversal_residual", num(returned)),
        ],
    );
    Ok(Outcome::ok(result, diagnostics))
}

fn curvature_json(values: &CurvatureValues, n: usize) -> Value {
    Value::Array(
        (0..n)
            .map(|mu| Value::Array((0..n).map(|nu| matrix(values.matrix(mu, nu))).collect()))
            .collect(),
    )
}

fn fibre_curvature_json(fc: &FibreCurvature) -> Vec<(&'static str, Value)> {
    vec![
        ("R", matrices(&fc.r)),
        ("S", matrices(&fc.s)),
        ("fibre_gamma", matrices(&fc.fibre_gamma)),
        ("max_abs", num(max_abs(fc.r.iter().map(|m| m.amax())))),
    ]
}

pub fn curvature_cmd(job: &Job) -> Result<Outcome, CliError> {
    let conn = job.cfg.connection()?;
    let (n, r) = (conn.n(), conn.r());
    let fd = job.fd()?;
    let region = conn.base_region();
    let frame = job.cfg.base_frame(&region)?;
    if frame.is_some() && !matches!(conn, Connection::Linear(_)) {
        return Err(CliError::Config(
            "base_frame applies to linear connections only".into(),
        ));
    }
    let points = job.base_points(n, &region)?;
    let u = job.fibre_point(r)?;
    let g2 = conn.two_index();
    let mut entries = Vec::with_capacity(points.len());
    let mut worst: (f64, Option<&Vec<f64>>) = (0.0, None);
    let mut eq = "4.27";
    for x in &points {
        let (entry, size) = match &conn {
            Connection::Linear(g3) => {
                let values = match &frame {
                    Some(e) => {
                        eq = "6.40";
                        curvature_general_frame(g3, e, x, &fd)
                    }
                    None => curvature(g3, x, &fd),
                }
                .numeric("curvature")?;
                let size = values.max_abs();
                let entry = tagged(
                    eq,
                    vec![
                        ("x", vector(x)),
                        ("R", curvature_json(&values, n)),
                        ("max_abs", num(size)),
                    ],
                );
                (entry, size)
            }
            Connection::Affine(_) | Connection::General(_) => {
                eq = "6.19a";
                let p = concat(x, &u);
                let fc = fibre_curvature_general(&g2, None, &p, &fd).numeric("curvature")?;
                let size = max_abs(fc.r.iter().map(|m| m.amax()));
                let mut fields = vec![("x", vector(x)), ("p", vector(&p))];
                fields.extend(fibre_curvature_json(&fc));
                if let Connection::Affine(aff) = &conn {
                    let lin = curvature(aff.linear(), x, &fd).numeric("curvature")?;
                    fields.push((
                        "linear_part",
                        tagged(
                            "4.27",
                            vec![
                                ("R", curvature_json(&lin, n)),
                                ("max_abs", num(lin.max_abs())),
                            ],
                        ),
                    ));
                }
                (tagged(eq, fields), size)
            }
        };
        if worst.1.is_none() || size > worst.0 {
            worst = (size, Some(x));
        }
        entries.push(entry);
    }
    let result = tagged(
        eq,
        vec![
            ("connection_kind", Value::from(conn.kind())),
            ("points", Value::Array(entries)),
        ],
    );
    let diagnostics = tagged(
        eq,
        vec![
            ("max_abs", num(worst.0)),
            ("worst_point", optional_point(worst.1)),
            ("samples", Value::from(points.len())),
        ],
    );
    Ok(Outcome::ok(result, diagnostics))
}

pub fn flatness(job: &Job) -> Result<Outcome, CliError> {
    let conn = job.cfg.connection()?;
    let g3 = conn.linear("flatness")?;
    let fd = job.fd()?;
    let tol = job.tol()?;
    let points = job.cfg.sample_points(g3.n(), job.samples()?, g3.region())?;
    let report = is_flat(g3, &points, tol, &fd).numeric("flatness")?;
    let worst = report.worst.map(|i| &points[i]);
    let mut result = vec![
        ("flat", Value::Bool(report.flat)),
        ("max_R", num(report.max_abs)),
        ("worst_point", optional_point(worst)),
        ("samples", Value::from(points.len())),
        ("tol", num(tol)),
    ];
    let mut diagnostics = vec![("max_R", num(report.max_abs))];
    if let Some(spec) = &job.cfg.flat_transport {
        if spec.x0.len() != g3.n() || spec.x1.len() != g3.n() {
            return Err(CliError::Config(format!(
                "flat_transport x0 and x1 need {} components",
                g3.n()
            )));
        }
        let ft = flat_fundamental_matrix(g3, &spec.x0, &spec.x1, tol, job.steps(DEFAULT_STEPS))
            .numeric("flat transport")?;
        result.push((
            "flat_transport",
            tagged(
                "4.54",
                vec![
                    ("x0", vector(&spec.x0)),
                    ("x1", vector(&spec.x1)),
                    ("matrix", matrix(&ft.matrix)),
                    ("residual", num(ft.residual)),
                ],
            ),
        ));
        diagnostics.push((
            "staircase_residual",
            tagged("4.54", vec![("max_abs", num(ft.residual))]),
        ));
    }
    Ok(Outcome::ok(
        tagged("4.47", result),
        tagged("4.47", diagnostics),
    ))
}

/// `∇̂_{F^h} Y^v` at the point of the section over `x`.
fn lifted(
    g2: &TwoIndexField,
    f: &[f64],
    y: &SectionField,
    x: &[f64],
    fd: &Fd,
) -> Result<DVector<f64>, Error> {
    let (n, r) = (g2.n(), g2.r());
    let p = concat(x, y.eval(x)?.as_slice());
    nabla_hat_oracle(
        g2,
        &VectorField::constant(f, n + r),
        &lift_to_bundle(y, r),
        &p,
        fd,
    )
}

pub fn covd(job: &Job) -> Result<Outcome, CliError> {
    let conn = job.cfg.connection()?;
    let (n, r) = (conn.n(), conn.r());
    let fd = job.fd()?;
    let x = job.vector(&job.cfg.point, "point", n)?;
    let f = job.vector(&job.cfg.direction, "direction", n)?;
    let y = job.cfg.section(n, r)?;
    let eps = job.cfg.params.eps;
    let g2 = conn.two_index();
    let (formula, limit) = match &conn {
        Connection::Linear(g3) => (
            covariant_derivative(g3, &f, &y, &x, &fd),
            covariant_derivative_limit(g3, &f, &y, &x, eps),
        ),
        Connection::Affine(aff) => (
            covariant_derivative(aff.linear(), &f, &y, &x, &fd),
            covariant_derivative_limit_affine(aff, &f, &y, &x, eps),
        ),
        Connection::General(_) => {
            return Err(CliError::Config(
                "`covd` needs a linear or affine connection".into(),
            ))
        }
    };
    let formula = formula.numeric("covariant derivative")?;
    let limit = limit.numeric("transport limit")?;
    let lifted = lifted(&g2, &f, &y, &x, &fd).numeric("lifted derivative")?;
    let pairs = [
        (formula.as_slice(), limit.as_slice()),
        (formula.as_slice(), lifted.as_slice()),
        (limit.as_slice(), lifted.as_slice()),
    ]
    .map(|(a, b)| max_abs_diff(a, b));
    let mut result = vec![
        ("x", vector(&x)),
        ("direction", vector(&f)),
        ("section_value", dvector(&y.eval(&x).numeric("section")?)),
        (
            "formula",
            tagged("4.37", vec![("value", dvector(&formula))]),
        ),
        ("limit", tagged("4.38", vec![("value", dvector(&limit))])),
        ("lifted", tagged("4.32", vec![("value", dvector(&lifted))])),
    ];
    if let Some(comps) = &job.cfg.dual_section {
        let g3 = match &conn {
            Connection::Linear(g3) => g3,
            Connection::Affine(aff) => aff.linear(),
            Connection::General(_) => unreachable!("rejected above"),
        };
        if comps.len() != r {
            return Err(CliError::Config(format!(
                "dual_section needs {r} components"
            )));
        }
        let omega = VectorField::parse(&texts(comps), &bundlecalc::fields::base_vars(n))
            .config("dual_section")?;
        let value = dual_covariant_derivative(g3, &f, &omega, &x, &fd)
            .numeric("dual covariant derivative")?;
        result.push(("dual", tagged("4.43", vec![("value", dvector(&value))])));
    }
    let diagnostics = tagged(
        "4.37",
        vec![
            ("formula_vs_limit", num(pairs[0])),
            ("formula_vs_lifted", num(pairs[1])),
            ("limit_vs_lifted", num(pairs[2])),
            ("max_pairwise", num(max_abs(pairs))),
        ],
    );
    Ok(Outcome::ok(tagged("4.37", result), diagnostics))
}

fn product_field(a: &MatrixField, b: &MatrixField) -> MatrixField {
    let (a, b) = (a.clone(), b.clone());
    MatrixField::from_fn(a.rows(), b.cols(), a.arity(), move |x| {
        Ok(a.eval(x)? * b.eval(x)?)
    })
}

fn inverse_field(m: &MatrixField) -> MatrixField {
    let m = m.clone();
    MatrixField::from_fn(m.rows(), m.cols(), m.arity(), move |x| {
        invert(&m.eval(x)?, |det| Error::SingularFrame { det })
    })
}

fn law_entry(eq: &str, law: Value, other: Value, other_name: &str, gap: f64) -> Value {
    tagged(
        eq,
        vec![
            ("law", law),
            (other_name, other),
            ("max_abs_diff", num(gap)),
        ],
    )
}

/// Two-sided checks of the frame-change laws for the fibre and base frames.
fn frame_laws(
    job: &Job,
    conn: &Connection,
    change: &FrameChange,
    x: &[f64],
    fd: &Fd,
    out: &mut Vec<(&'static str, Value)>,
    gaps: &mut Vec<(&'static str, Value)>,
) -> Result<(), CliError> {
    let (n, r) = (conn.n(), conn.r());
    let g3 = match conn {
        Connection::Linear(g3) => g3,
        Connection::Affine(aff) => aff.linear(),
        Connection::General(_) => {
            return Err(CliError::Config(
                "frame_change needs a linear or affine connection".into(),
            ))
        }
    };
    let region = g3.region().clone();
    let frame = job.cfg.base_frame(&region)?;
    let old_frame = frame
        .clone()
        .unwrap_or_else(|| FrameField::coordinate(region.clone()));
    let new_frame = change
        .changed_frame(frame.as_ref(), &region)
        .config("frame_change")?;
    // Coefficients relative to the old frames (E, 1).
    let old = match &frame {
        Some(e) => {
            let to_e = FrameChange::new(e.matrix().clone(), MatrixField::identity(r, n))
                .config("base_frame")?;
            g3.transformed(&to_e, None, *fd).config("base_frame")?
        }
        None => g3.clone(),
    };
    let law = transform_three_index(&old, change, frame.as_ref(), x, fd).numeric("frame change")?;
    let (eq, other_name, other) = match &frame {
        None => (
            "4.25′",
            "coordinate_form",
            three_index_coordinate_form(g3, change, x).numeric("coordinate form")?,
        ),
        Some(e) => {
            let direct = FrameChange::new(
                product_field(e.matrix(), change.base()),
                change.fibre().clone(),
            )
            .config("frame_change")?;
            (
                "6.33",
                "from_coordinate_frame",
                transform_three_index(g3, &direct, None, x, fd).numeric("frame change")?,
            )
        }
    };
    let gap = flat_diff(&law, &other);
    out.push((
        "three_index",
        law_entry(eq, matrices(&law), matrices(&other), other_name, gap),
    ));
    gaps.push(("three_index", tagged(eq, vec![("max_abs_diff", num(gap))])));

    // Curvature relative to the new frames against the sandwich of the old.
    let moved = old
        .transformed(change, frame.as_ref(), *fd)
        .config("frame_change")?;
    let lhs = curvature_general_frame(&moved, &new_frame, x, fd).numeric("curvature")?;
    let before = curvature_general_frame(&old, &old_frame, x, fd).numeric("curvature")?;
    let base = change.eval_base(x).numeric("frame change")?;
    let b = change.eval_fibre(x).numeric("frame change")?;
    let b_inv = invert(&b, |det| Error::SingularFrame { det }).numeric("frame change")?;
    let mut law = Vec::with_capacity(n * n);
    let mut sandwich = Vec::with_capacity(n * n);
    for mu in 0..n {
        for nu in 0..n {
            let mut sum = DMatrix::zeros(r, r);
            for l in 0..n {
                for s in 0..n {
                    sum += before.matrix(l, s) * (base[(l, mu)] * base[(s, nu)]);
                }
            }
            law.push(lhs.matrix(mu, nu).clone());
            sandwich.push(&b_inv * sum * &b);
        }
    }
    let gap = flat_diff(&law, &sandwich);
    out.push((
        "curvature",
        law_entry(
            "4.28′",
            matrices(&law),
            matrices(&sandwich),
            "sandwich",
            gap,
        ),
    ));
    gaps.push((
        "curvature",
        tagged("4.28′", vec![("max_abs_diff", num(gap))]),
    ));

    // Anholonomy of the changed base frame.
    let direct = anholonomy(&new_frame, x, fd).numeric("anholonomy")?;
    let partials = fd
        .gradient(|p| change.eval_base(p), x, &region)
        .numeric("anholonomy")?;
    let e_x = old_frame.eval(x).numeric("base frame")?;
    let e_of_b = frame_derivatives(&e_x, &partials);
    let before = anholonomy(&old_frame, x, fd).numeric("anholonomy")?;
    let law = anholonomy_after_change(&before, &base, &e_of_b).numeric("anholonomy")?;
    let gap = flat_diff(&law.c, &direct.c);
    out.push((
        "anholonomy",
        law_entry(
            "2.7-1",
            matrices(&law.c),
            matrices(&direct.c),
            "direct",
            gap,
        ),
    ));
    gaps.push((
        "anholonomy",
        tagged("2.7-1", vec![("max_abs_diff", num(gap))]),
    ));

    if let Some(field) = job.cfg.vector_field(n)? {
        // Components relative to the old and the new base frames.
        let (e_inv, field_c) = (inverse_field(old_frame.matrix()), field.clone());
        let rel_old = VectorField::from_fn(n, n, move |p| Ok(e_inv.eval(p)? * field_c.eval(p)?));
        let (eb_inv, field_c) = (inverse_field(new_frame.matrix()), field.clone());
        let rel_new = VectorField::from_fn(n, n, move |p| Ok(eb_inv.eval(p)? * field_c.eval(p)?));
        let direct = lie_gamma(&new_frame, &rel_new, x, fd).numeric("lie derivative")?;
        let natural = field.eval(x).numeric("vector_field")?;
        let x_of_b = fd
            .directional(|p| change.eval_base(p), x, natural.as_slice(), &region)
            .numeric("lie derivative")?;
        let before = lie_gamma(&old_frame, &rel_old, x, fd).numeric("lie derivative")?;
        let law = lie_gamma_after_change(&before, &base, &x_of_b).numeric("lie derivative")?;
        let gap = (&law - &direct).amax();
        out.push((
            "lie_gamma",
            law_entry("2.7-3", matrix(&law), matrix(&direct), "direct", gap),
        ));
        gaps.push((
            "lie_gamma",
            tagged("2.7-3", vec![("max_abs_diff", num(gap))]),
        ));
    }

    if let Connection::Affine(aff) = conn {
        if frame.is_some() {
            return Err(CliError::Config(
                "the inhomogeneous law is reported for the coordinate base frame only".into(),
            ));
        }
        let g = aff.eval_inhom(x).numeric("inhomogeneous part")?;
        let law = transform_inhomogeneous(&g, change, x).numeric("frame change")?;
        let route = inhomogeneous_by_transport(conn, change, &base, x)?;
        let gap = (&law - &route).amax();
        out.push((
            "inhomogeneous",
            law_entry("4.63", matrix(&law), matrix(&route), "transport", gap),
        ));
        gaps.push((
            "inhomogeneous",
            tagged("4.63", vec![("max_abs_diff", num(gap))]),
        ));
    }
    Ok(())
}

/// `G̃ e_μ` from transporting the origin of the fibre a short way along
/// `B_base e_μ` and reading it off in the new fibre frame.
fn inhomogeneous_by_transport(
    conn: &Connection,
    change: &FrameChange,
    base: &DMatrix<f64>,
    x: &[f64],
) -> Result<DMatrix<f64>, CliError> {
    let (n, r) = (conn.n(), conn.r());
    let h = INHOM_OFFSET_REL * x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let zero = vec![0.0; r];
    let mut out = DMatrix::zeros(r, n);
    for mu in 0..n {
        let mut ends = Vec::with_capacity(2);
        for sign in [1.0, -1.0] {
            let to: Vec<f64> = (0..n).map(|i| x[i] + sign * h * base[(i, mu)]).collect();
            let path = PathSpec::straight(x, &to, LAW_STEPS).numeric("transport")?;
            let u = run_transport(conn, &path, &zero)
                .numeric("transport")?
                .values;
            let b = change.eval_fibre(&to).numeric("frame change")?;
            let b_inv = invert(&b, |det| Error::SingularFrame { det }).numeric("frame change")?;
            ends.push(b_inv * u);
        }
        out.set_column(mu, &((&ends[0] - &ends[1]) / (2.0 * h)));
    }
    Ok(out)
}

/// Solves `change(p) = q` by Newton iteration from `q`.
fn invert_change(change: &BundleCoordChange, q: &[f64], fd: &Fd) -> Result<Vec<f64>, Error> {
    let region = Region::unbounded(q.len());
    let mut p = q.to_vec();
    for _ in 0..NEWTON_MAX_ITER {
        let image = change.apply(&p)?;
        let residual = DVector::from_iterator(q.len(), image.iter().zip(q).map(|(a, b)| a - b));
        let scale = q.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        if residual.amax() <= NEWTON_TOL * scale {
            return Ok(p);
        }
        let j = change.jacobian(&p, &region, fd)?;
        let step = invert(&j, |det| Error::SingularJacobian { det })? * residual;
        for (pi, s) in p.iter_mut().zip(step.iter()) {
            *pi -= s;
        }
    }
    Err(Error::non_finite(
        "coordinate change inverse did not converge",
    ))
}

/// Transport before and after a bundle coordinate change.
fn coordinate_change_law(
    job: &Job,
    conn: &Connection,
    comps: &[String],
    x: &[f64],
    fd: &Fd,
    out: &mut Vec<(&'static str, Value)>,
    gaps: &mut Vec<(&'static str, Value)>,
) -> Result<(), CliError> {
    let (n, r) = (conn.n(), conn.r());
    if comps.len() != n + r {
        return Err(CliError::Config(format!(
            "coord_change needs {} components over u1..u{}",
            n + r,
            n + r
        )));
    }
    let change = BundleCoordChange::parse(n, r, comps).config("coord_change")?;
    let g2 = conn.two_index();
    let u0 = job.fibre_point(r)?;
    let p = concat(x, &u0);
    let law = transform_two_index(&g2, &change, &p, fd).numeric("coordinate change")?;

    let (g2c, ch, fdc) = (g2.clone(), change.clone(), *fd);
    let moved = TwoIndexField::from_fn(n, r, Region::unbounded(n + r), move |q| {
        transform_two_index(&g2c, &ch, &invert_change(&ch, q, &fdc)?, &fdc)
    })
    .config("coord_change")?;
    let direction = match &job.cfg.direction {
        Some(_) => job.vector(&job.cfg.direction, "direction", n)?,
        None => (0..n).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect(),
    };
    let to: Vec<f64> = x
        .iter()
        .zip(&direction)
        .map(|(a, d)| a + LAW_PATH_LENGTH * d)
        .collect();
    let old_path = PathSpec::straight(x, &to, job.steps(DEFAULT_STEPS)).config("path")?;
    let start = old_path.start().numeric("path")?;
    let image_path = image_curve(x, &to, &change, r, old_path.steps())?;
    let lifted_start = change
        .apply(&concat(&start, &u0))
        .numeric("coordinate change")?;
    let transported = transport_general(&g2, &old_path, &u0).numeric("transport")?;
    let end = old_path.end().numeric("path")?;
    let mapped = change
        .apply(&concat(&end, transported.values.as_slice()))
        .numeric("coordinate change")?;
    let direct = transport_general(&moved, &image_path, &lifted_start[n..]).numeric("transport")?;
    let gap = max_abs_diff(&mapped[n..], direct.values.as_slice());
    out.push((
        "two_index",
        tagged(
            "3.22",
            vec![
                ("p", vector(&p)),
                ("law", matrix(&law)),
                ("transport_then_change", vector(&mapped[n..])),
                ("change_then_transport", dvector(&direct.values)),
                ("max_abs_diff", num(gap)),
            ],
        ),
    ));
    gaps.push((
        "two_index",
        tagged("3.22", vec![("max_abs_diff", num(gap))]),
    ));
    Ok(())
}

/// The base image of the segment `from → to` under a fibre-respecting
/// coordinate change.
fn image_curve(
    from: &[f64],
    to: &[f64],
    change: &BundleCoordChange,
    r: usize,
    steps: usize,
) -> Result<PathSpec, CliError> {
    let comps = (0..from.len())
        .map(|i| {
            let (from, to, change) = (from.to_vec(), to.to_vec(), change.clone());
            ScalarField::from_fn(1, move |t| {
                let mut p: Vec<f64> = from
                    .iter()
                    .zip(&to)
                    .map(|(a, b)| a + t[0] * (b - a))
                    .collect();
                p.extend(std::iter::repeat_n(0.0, r));
                Ok(change.apply(&p)?[i])
            })
        })
        .collect();
    PathSpec::curve(comps, 0.0, 1.0, steps).config("path")
}

pub fn frames(job: &Job) -> Result<Outcome, CliError> {
    let conn = job.cfg.connection()?;
    let (n, r) = (conn.n(), conn.r());
    let fd = job.fd()?;
    let x = job.vector(&job.cfg.point, "point", n)?;
    let mut out = vec![("x", vector(&x))];
    let mut gaps = Vec::new();
    if job.cfg.frame_change.is_some() {
        let change = job.cfg.frame_change(n, r)?;
        frame_laws(job, &conn, &change, &x, &fd, &mut out, &mut gaps)?;
    }
    if let Some(comps) = &job.cfg.coord_change {
        coordinate_change_law(job, &conn, &texts(comps), &x, &fd, &mut out, &mut gaps)?;
    }
    if gaps.is_empty() {
        return Err(CliError::Config(
            "`frames` needs a frame_change or a coord_change block".into(),
        ));
    }
    let worst = max_abs(
        gaps.iter()
            .map(|(_, v)| v["max_abs_diff"].as_f64().unwrap_or(f64::NAN)),
    );
    let eq = if job.cfg.frame_change.is_some() {
        "6.33"
    } else {
        "3.22"
    };
    gaps.push(("max_abs_diff", num(worst)));
    Ok(Outcome::ok(tagged(eq, out), tagged(eq, gaps)))
}

pub fn morphism(job: &Job) -> Result<Outcome, CliError> {
    let source = job.cfg.connection()?;
    let target = job.cfg.target_connection(&source)?;
    let (n, r) = (source.n(), source.r());
    let fd = job.fd()?;
    let tol = job.tol()?;
    let spec = require(&job.cfg.morphism, "morphism")?;
    let region = source.base_region();
    let m = match (&spec.fibre_matrix, &spec.fibre) {
        (Some(t), None) => {
            BundleMorphism::parse_linear(&texts(&spec.base), &table(t), region.clone())
        }
        (None, Some(f)) => {
            BundleMorphism::parse_general(&texts(&spec.base), &texts(f), region.clone(), r)
        }
        _ => {
            return Err(CliError::Config(
                "morphism needs exactly one of `fibre_matrix` and `fibre`".into(),
            ))
        }
    }
    .config("morphism")?;
    if m.r() != r || target.n() != m.n_target() || target.r() != m.r_target() {
        return Err(CliError::Config(format!(
            "morphism maps (n, r) = ({}, {}) to ({}, {}); connections have ({n}, {r}) and ({}, {})",
            m.n(),
            m.r(),
            m.n_target(),
            m.r_target(),
            target.n(),
            target.r()
        )));
    }
    let (src2, tgt2) = (source.two_index(), target.two_index());
    let points = job.cfg.sample_points(
        n + r,
        job.samples()?,
        &region.product(&Region::unbounded(r)),
    )?;
    let mut entries = Vec::with_capacity(points.len());
    for p in &points {
        let natural = jacobi_natural(&m, p, &fd).numeric("jacobi matrix")?;
        let adapted = jacobi_adapted(&m, &src2, &tgt2, p, &fd).numeric("adapted jacobi matrix")?;
        entries.push(tagged(
            "5.4",
            vec![
                ("p", vector(p)),
                ("natural", matrix(&natural)),
                (
                    "adapted",
                    tagged("5.8", vec![("matrix", matrix(&adapted.matrix))]),
                ),
                (
                    "horizontal_defect",
                    tagged(
                        "5.10",
                        vec![
                            ("matrix", matrix(&adapted.horizontal_defect)),
                            ("max_abs", num(adapted.horizontal_defect.amax())),
                        ],
                    ),
                ),
            ],
        ));
    }
    let report =
        preserves_connection(&m, &src2, &tgt2, &points, tol, &fd).numeric("preservation")?;
    let mut result = vec![
        ("points", Value::Array(entries)),
        (
            "preserves",
            tagged(
                "5.11",
                vec![
                    ("preserves", Value::Bool(report.preserves)),
                    ("max_abs", num(report.max_abs)),
                    (
                        "worst_point",
                        optional_point(report.worst.map(|i| &points[i])),
                    ),
                    ("tol", num(tol)),
                ],
            ),
        ),
    ];
    if let (Connection::Linear(s3), Connection::Linear(t3)) = (&source, &target) {
        let x = &points[0][..n];
        if matches!(m.fibre(), FibreMap::Linear(_)) {
            let coeffs = vb_morphism_coeffs(&m, s3, t3, x, &fd).numeric("morphism coefficients")?;
            result.push(("vb_coefficients", coefficient_entry("5.14", x, &coeffs)));
        }
        if s3.r() == n && t3.r() == m.n_target() {
            let coeffs =
                tangent_map_second_order(m.base(), s3, t3, x, &fd).numeric("tangent map")?;
            result.push(("tangent_map", coefficient_entry("5.22", x, &coeffs)));
        }
    }
    let diagnostics = tagged(
        "5.11",
        vec![
            ("max_abs", num(report.max_abs)),
            ("samples", Value::from(points.len())),
        ],
    );
    Ok(Outcome::ok(tagged("5.11", result), diagnostics))
}

fn coefficient_entry(eq: &str, x: &[f64], coeffs: &[DMatrix<f64>]) -> Value {
    tagged(
        eq,
        vec![
            ("x", vector(x)),
            ("coefficients", matrices(coeffs)),
            ("max_abs", num(max_abs(coeffs.iter().map(|c| c.amax())))),
        ],
    )
}

/// Equation each acceptance criterion exercises, by criterion id.
const CRITERION_EQ: [&str; 13] = [
    "3.22", "4.28′", "4.37", "4.27", "4.18", "4.18", "3.27", "4.47", "4.18", "4.37", "4.68",
    "5.11", "grammar",
];

pub fn check(flags: &Flags) -> Result<Outcome, CliError> {
    let results = match flags.suite.as_deref() {
        None | Some("all") => suite::run_all(),
        Some(key) => vec![suite::run(key).ok_or_else(|| {
            let names: Vec<&str> = suite::CRITERIA.iter().map(|c| c.name).collect();
            CliError::Config(format!(
                "unknown suite {key:?}; known: all, {}",
                names.join(", ")
            ))
        })?],
    };
    let mut failed = false;
    let mut criteria = Vec::with_capacity(results.len());
    for res in &results {
        eprintln!("{res}");
        failed |= !res.passed();
        let eq = CRITERION_EQ.get(res.id - 1).copied().unwrap_or("grammar");
        let checks = res
            .checks
            .iter()
            .map(|c| {
                tagged(
                    eq,
                    vec![
                        ("label", Value::from(c.label.clone())),
                        ("value", num(c.value)),
                        ("lo", num(c.lo)),
                        ("hi", num(c.hi)),
                        ("passed", Value::Bool(c.passed())),
                    ],
                )
            })
            .collect();
        criteria.push(tagged(
            eq,
            vec![
                ("id", Value::from(res.id)),
                ("name", Value::from(res.name)),
                ("passed", Value::Bool(res.passed())),
                (
                    "error",
                    res.error.clone().map_or(Value::Null, Value::String),
                ),
                ("checks", Value::Array(checks)),
            ],
        ));
    }
    let passed = results.iter().filter(|r| r.passed()).count();
    let result = tagged(
        "suite",
        vec![
            ("criteria", Value::Array(criteria)),
            ("passed", Value::Bool(!failed)),
        ],
    );
    let diagnostics = tagged(
        "suite",
        vec![
            ("passed", Value::from(passed)),
            ("total", Value::from(results.len())),
        ],
    );
    Ok(Outcome {
        result,
        diagnostics,
        failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn job_outcome(text: &str, run: fn(&Job) -> Result<Outcome, CliError>) -> Outcome {
        let (cfg, _) = ProblemConfig::parse(text).unwrap();
        let flags = Flags::default();
        run(&Job {
            cfg: &cfg,
            flags: &flags,
        })
        .unwrap()
    }

    #[test]
    fn flat_transport_is_identity() {
        let out = job_outcome(
            r#"{"connection": "registry:flat",
                "path": {"kind": "straight", "from": [0, 0], "to": [1, 2]},
                "p0": [1, 2]}"#,
            transport,
        );
        assert_eq!(out.result["final"], vector(&[1.0, 2.0]));
        assert_eq!(out.result["eq"], "4.18");
    }

    #[test]
    fn frames_reports_small_gaps() {
        let out = job_outcome(
            r#"{"connection": {"kind": "affine",
                  "gamma": [[["0.1*x2", "x1"], ["0", "0.2"]], [["sin(x1)", "0"], ["0.3", "x1*x2"]]],
                  "inhom": [["1", "x2"], ["0.5*x1", "cos(x2)"]]},
                "frame_change": {"base": [["1 + 0.1*x2", "0"], ["0.05*x1", "1"]],
                                 "fibre": [["1", "0.1*x1"], ["0.2*sin(x2)", "1 + 0.1*x1"]]},
                "coord_change": ["u1", "u2 + 0.1*u1^2", "u3 + 0.2*u1*u4", "u4 + 0.1*sin(u2)"],
                "vector_field": ["1 + x2", "x1"],
                "point": [0.3, -0.2], "p0": [0.5, 1.0]}"#,
            frames,
        );
        let worst = out.diagnostics["max_abs_diff"].as_f64().unwrap();
        assert!(worst < 1e-6, "{}", crate::json::to_string(&out.diagnostics));
    }

    #[test]
    fn covd_definitions_agree() {
        let out = job_outcome(
            r#"{"connection": "registry:sphere-lc", "point": [1.0, 0.3],
                "direction": [0.4, -0.7], "section": ["sin(x2)", "x1*x2"],
                "dual_section": ["1", "x1"]}"#,
            covd,
        );
        assert!(out.diagnostics["max_pairwise"].as_f64().unwrap() < 1e-6);
        assert_eq!(out.result["dual"]["eq"], "4.43");
    }
}
