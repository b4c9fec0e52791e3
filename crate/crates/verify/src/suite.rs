//! The acceptance criteria as runnable, timed checks.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::fmt;
use std::time::{Duration, Instant};

use bundlecalc::calculus::{
    covariant_derivative, covariant_derivative_in_frame, curvature, curvature_commutator_oracle,
    curvature_general_frame, fibre_curvature_general, flat_fundamental_matrix, is_flat,
    lift_to_bundle, nabla_hat_oracle, section_horizontality_defect, FibreCurvature,
};
use bundlecalc::connection::{
    transform_inhomogeneous, transform_three_index, transform_two_index, BundleCoordChange,
    CoefficientField3, FrameChange, TwoIndexField,
};
use bundlecalc::expr::parse;
use bundlecalc::fields::{
    anholonomy, anholonomy_after_change, base_vars, frame_derivatives, invert, lie_gamma,
    lie_gamma_after_change, Fd, FrameField, MatrixField, Region, ScalarField, SectionField,
    VectorField,
};
use bundlecalc::morphism::{
    jacobi_adapted, jacobi_natural, preserves_connection, vb_morphism_coeffs, BaseMap,
    BundleMorphism,
};
use bundlecalc::registry::{self, PureGauge};
use bundlecalc::transport::{
    covariant_derivative_limit, covariant_derivative_limit_affine, fundamental_solution, geodesic,
    transport_affine, transport_general, transport_linear, PathSpec,
};
use bundlecalc::{Error, Result};
use nalgebra::{DMatrix, DVector};

use crate::fixtures::FixtureRng;
use crate::oracles::{self, abs_diff, rel_diff};
use crate::pratt::{oracle_sexpr, sexpr, MALFORMED_CASES, PRECEDENCE_CASES};

/// One measured quantity and its admissible interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub label: String,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Check {
    pub fn at_most(label: impl Into<String>, value: f64, limit: f64) -> Self {
        Check {
            label: label.into(),
            value,
            lo: f64::NEG_INFINITY,
            hi: limit,
        }
    }

    pub fn at_least(label: impl Into<String>, value: f64, bound: f64) -> Self {
        Check {
            label: label.into(),
            value,
            lo: bound,
            hi: f64::INFINITY,
        }
    }

    pub fn within(label: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        Check {
            label: label.into(),
            value,
            lo,
            hi,
        }
    }

    pub fn passed(&self) -> bool {
        self.value >= self.lo && self.value <= self.hi
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bound = match (self.lo.is_finite(), self.hi.is_finite()) {
            (false, true) => format!("<= {:.1e}", self.hi),
            (true, false) => format!(">= {:.1e}", self.lo),
            _ => format!("in [{}, {}]", self.lo, self.hi),
        };
        write!(f, "{}: {:.3e} ({bound})", self.label, self.value)
    }
}

/// An acceptance criterion: a named list of checks and an optional
/// wall-clock budget.
pub struct Criterion {
    pub id: usize,
    pub name: &'static str,
    pub budget: Option<Duration>,
    run: fn() -> Result<Vec<Check>>,
}

#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub id: usize,
    pub name: &'static str,
    pub checks: Vec<Check>,
    pub elapsed: Duration,
    pub budget: Option<Duration>,
    pub error: Option<String>,
}

impl CriterionResult {
    pub fn within_budget(&self) -> bool {
        self.budget.is_none_or(|b| self.elapsed <= b)
    }

    pub fn passed(&self) -> bool {
        self.error.is_none()
            && !self.checks.is_empty()
            && self.checks.iter().all(Check::passed)
            && self.within_budget()
    }

    /// The first failing check, or the check closest to its bound.
    pub fn worst(&self) -> Option<&Check> {
        self.checks.iter().find(|c| !c.passed()).or_else(|| {
            self.checks.iter().max_by(|a, b| {
                margin(a)
                    .partial_cmp(&margin(b))
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
        })
    }
}

fn margin(c: &Check) -> f64 {
    if c.hi.is_finite() && !c.lo.is_finite() {
        if c.hi == 0.0 {
            c.value
        } else {
            c.value / c.hi
        }
    } else if c.lo.is_finite() && !c.hi.is_finite() {
        c.lo / c.value
    } else {
        0.0
    }
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        write!(
            f,
            "criterion {:>2} {:<24} {verdict}  {:>8.1} ms",
            self.id,
            self.name,
            self.elapsed.as_secs_f64() * 1e3
        )?;
        if let Some(b) = self.budget {
            write!(f, " (budget {} ms)", b.as_millis())?;
        }
        if let Some(e) = &self.error {
            write!(f, "  error: {e}")
        } else if let Some(c) = self.worst() {
            write!(f, "  {c}")
        } else {
            write!(f, "  no checks")
        }
    }
}

pub const CRITERIA: [Criterion; 13] = [
    Criterion {
        id: 1,
        name: "transformation-laws",
        budget: Some(Duration::from_secs(5)),
        run: transformation_laws,
    },
    Criterion {
        id: 2,
        name: "curvature-tensoriality",
        budget: Some(Duration::from_secs(5)),
        run: curvature_tensoriality,
    },
    Criterion {
        id: 3,
        name: "oracle-triangle",
        budget: Some(Duration::from_secs(10)),
        run: oracle_triangle,
    },
    Criterion {
        id: 4,
        name: "curvature-oracle",
        budget: None,
        run: curvature_oracle,
    },
    Criterion {
        id: 5,
        name: "transport-linearity",
        budget: None,
        run: transport_linearity,
    },
    Criterion {
        id: 6,
        name: "sphere-holonomy",
        budget: Some(Duration::from_secs(2)),
        run: sphere_holonomy,
    },
    Criterion {
        id: 7,
        name: "geodesics",
        budget: None,
        run: geodesics,
    },
    Criterion {
        id: 8,
        name: "flatness",
        budget: None,
        run: flatness,
    },
    Criterion {
        id: 9,
        name: "rk4-order",
        budget: None,
        run: rk4_order,
    },
    Criterion {
        id: 10,
        name: "covariantly-constant",
        budget: None,
        run: covariantly_constant,
    },
    Criterion {
        id: 11,
        name: "affine-curvature-gap",
        budget: None,
        run: affine_curvature_gap,
    },
    Criterion {
        id: 12,
        name: "morphisms",
        budget: None,
        run: morphisms,
    },
    Criterion {
        id: 13,
        name: "parser",
        budget: None,
        run: parser,
    },
];

pub fn evaluate(c: &Criterion) -> CriterionResult {
    let start = Instant::now();
    let outcome = (c.run)();
    let elapsed = start.elapsed();
    let (checks, error) = match outcome {
        Ok(checks) => (checks, None),
        Err(e) => (Vec::new(), Some(e.to_string())),
    };
    CriterionResult {
        id: c.id,
        name: c.name,
        checks,
        elapsed,
        budget: c.budget,
        error,
    }
}

pub fn run_all() -> Vec<CriterionResult> {
    CRITERIA.iter().map(evaluate).collect()
}

/// Runs the criterion with the given number or name.
pub fn run(key: &str) -> Option<CriterionResult> {
    CRITERIA
        .iter()
        .find(|c| c.name == key || key.parse::<usize>() == Ok(c.id))
        .map(evaluate)
}

fn dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

fn inv(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    invert(m, |det| Error::SingularFrame { det })
}

fn mats_rel(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| rel_diff(x.as_slice(), y.as_slice()))
        .fold(0.0, f64::max)
}

fn mats_abs(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| abs_diff(x.as_slice(), y.as_slice()))
        .fold(0.0, f64::max)
}

fn random_section(rng: &mut FixtureRng, n: usize, r: usize, scale: f64) -> SectionField {
    let vars = base_vars(n);
    let comps: Vec<String> = (0..r).map(|_| rng.smooth_expr(&vars, scale)).collect();
    VectorField::parse(&comps, &vars).expect("fixture parses")
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().chain(b).copied().collect()
}

const FRAME_SCALE: f64 = 0.1;

fn transformation_laws() -> Result<Vec<Check>> {
    let fd = Fd::default();
    let mut rng = FixtureRng::new(1);
    let (n, r) = (2, 2);
    let mut worst = [0.0f64; 6];
    for _ in 0..20 {
        let x = rng.point(n, 1.0);
        worst[0] = worst[0].max(coordinate_change_transport(&mut rng, &x)?);

        let g3 = rng.three_index(n, r, 0.5);
        let change = rng.frame_change(n, r, FRAME_SCALE);
        let lhs = transform_three_index(&g3, &change, None, &x, &fd)?;
        let rhs = oracles::three_index_coordinate_form(&g3, &change, &x)?;
        worst[1] = worst[1].max(mats_rel(&lhs, &rhs));

        worst[2] = worst[2].max(frame_independence(&mut rng, &g3, &change, &x)?);
        worst[3] = worst[3].max(inhomogeneous_law(&mut rng, &x)?);
        let (c, l) = frame_change_laws(&mut rng)?;
        worst[4] = worst[4].max(c);
        worst[5] = worst[5].max(l);
    }
    let labels = [
        "coordinate change commutes with transport",
        "three-index law in coordinate form",
        "covariant derivative frame independence",
        "inhomogeneous law vs coordinate change",
        "anholonomy after frame change",
        "lie coefficients after frame change",
    ];
    Ok(labels
        .iter()
        .zip(worst)
        .map(|(l, v)| Check::at_most(*l, v, 1e-6))
        .collect())
}

/// Transport with a general connection, then a nonlinear fibre-respecting
/// coordinate change, against transport with the transformed coefficients
/// along the image path.
fn coordinate_change_transport(rng: &mut FixtureRng, x0: &[f64]) -> Result<f64> {
    let fd = Fd::default();
    let g2 = rng.two_index(2, 2, 0.3);
    let c: Vec<f64> = (0..5).map(|_| rng.uniform(-0.3, 0.3)).collect();
    let forward = BundleCoordChange::parse(
        2,
        2,
        &[
            "u1".to_string(),
            format!("u2 + {}*sin(u1)", c[0]),
            format!("u3 + {}*u2 + {}*u1*u3", c[1], c[2]),
            format!("u4 + {}*u3^2 + {}*u1*u3", c[3], c[4]),
        ],
    )?;
    let shear = c[0];
    let inverse = move |q: &[f64]| -> Vec<f64> {
        let x1 = q[0];
        let x2 = q[1] - c[0] * x1.sin();
        let u1 = (q[2] - c[1] * x2) / (1.0 + c[2] * x1);
        let u2 = q[3] - c[3] * u1 * u1 - c[4] * x1 * u1;
        vec![x1, x2, u1, u2]
    };
    let (g2c, fc) = (g2.clone(), forward.clone());
    let moved = TwoIndexField::from_fn(2, 2, Region::unbounded(4), move |q| {
        transform_two_index(&g2c, &fc, &inverse(q), &fd)
    })?;

    let d = rng.point(2, 0.5);
    let u0 = rng.point(2, 1.0);
    let old = [
        format!("{} + {}*t", x0[0], d[0]),
        format!("{} + {}*t", x0[1], d[1]),
    ];
    let new = [
        old[0].clone(),
        format!("{} + {shear}*sin({})", old[1], old[0]),
    ];
    let old_path = PathSpec::parse_curve(&old, 0.0, 1.0, 200)?;
    let new_path = PathSpec::parse_curve(&new, 0.0, 1.0, 200)?;

    let transported = transport_general(&g2, &old_path, &u0)?.values;
    let lhs = forward.apply(&concat(&old_path.end()?, transported.as_slice()))?;
    let start = forward.apply(&concat(x0, &u0))?;
    let rhs = transport_general(&moved, &new_path, &start[2..])?.values;
    Ok(rel_diff(&lhs[2..], rhs.as_slice()))
}

/// The covariant derivative computed from coefficients relative to two
/// successive general frame changes agrees with the natural one.
fn frame_independence(
    rng: &mut FixtureRng,
    g3: &CoefficientField3,
    first: &FrameChange,
    x: &[f64],
) -> Result<f64> {
    let fd = Fd::default();
    let (n, r) = (g3.n(), g3.r());
    let region = g3.region().clone();
    let second = rng.frame_change(n, r, FRAME_SCALE);
    let frame1 = first.changed_frame(None, &region)?;
    let g_first = g3.transformed(first, None, fd)?;
    let g_second = g_first.transformed(&second, Some(&frame1), fd)?;
    let frame2 = second.changed_frame(Some(&frame1), &region)?;
    let total = first.then(&second)?;

    let y = random_section(rng, n, r, 0.5);
    let (t, yc) = (total.clone(), y.clone());
    let y_new = VectorField::from_fn(r, n, move |p| Ok(inv(&t.eval_fibre(p)?)? * yc.eval(p)?));
    let f_nat = rng.point(n, 1.0);
    let f_new = frame2.inverse(x)? * dvec(&f_nat);
    let lhs = total.eval_fibre(x)?
        * covariant_derivative_in_frame(&g_second, &frame2, f_new.as_slice(), &y_new, x, &fd)?;
    let rhs = covariant_derivative(g3, &f_nat, &y, x, &fd)?;
    Ok(rel_diff(lhs.as_slice(), rhs.as_slice()))
}

/// Frame-based transformation of the inhomogeneous part against the
/// two-index law under `x̃ = L x`, `ũ = A(x) u`, plus the affine split of the
/// transformed coefficients.
fn inhomogeneous_law(rng: &mut FixtureRng, x: &[f64]) -> Result<f64> {
    let fd = Fd::default();
    let (n, r) = (2, 2);
    let aff = rng.affine(n, r, 0.5);
    let l = DMatrix::from_fn(n, n, |i, j| {
        f64::from(u8::from(i == j)) + rng.uniform(-0.3, 0.3)
    });
    let a = rng.near_identity(r, n, FRAME_SCALE);
    let ac = a.clone();
    let change = FrameChange::new(
        MatrixField::constant(&inv(&l)?, n),
        MatrixField::from_fn(r, r, n, move |p| inv(&ac.eval(p)?)),
    )?;
    let mut maps = Vec::with_capacity(n + r);
    for i in 0..n {
        let row: Vec<f64> = l.row(i).iter().copied().collect();
        maps.push(ScalarField::from_fn(n + r, move |p| {
            Ok(row.iter().zip(p).map(|(w, v)| w * v).sum())
        }));
    }
    for b in 0..r {
        let ac = a.clone();
        maps.push(ScalarField::from_fn(n + r, move |p| {
            Ok((ac.eval(&p[..n])? * dvec(&p[n..]))[b])
        }));
    }
    let coords = BundleCoordChange::new(n, r, maps)?;
    let g2 = TwoIndexField::from_affine(&aff);

    let inhom = transform_inhomogeneous(&aff.eval_inhom(x)?, &change, x)?;
    let at_zero = transform_two_index(&g2, &coords, &concat(x, &vec![0.0; r]), &fd)?;
    let e_inhom = rel_diff(inhom.as_slice(), at_zero.as_slice());

    let u = rng.point(r, 1.0);
    let full = transform_two_index(&g2, &coords, &concat(x, &u), &fd)?;
    let gamma = transform_three_index(aff.linear(), &change, None, x, &fd)?;
    let u_new = a.eval(x)? * dvec(&u);
    let mut expected = inhom;
    for (mu, g) in gamma.iter().enumerate() {
        let col = expected.column(mu) - g * &u_new;
        expected.set_column(mu, &col);
    }
    Ok(e_inhom.max(rel_diff(full.as_slice(), expected.as_slice())))
}

/// Anholonomy and Lie coefficients of `E·B` computed directly and from the
/// change laws.
fn frame_change_laws(rng: &mut FixtureRng) -> Result<(f64, f64)> {
    let fd = Fd::default();
    let m = 3;
    let region = Region::unbounded(m);
    let e = FrameField::new(rng.near_identity(m, m, FRAME_SCALE), region.clone())?;
    let b = rng.near_identity(m, m, FRAME_SCALE);
    let (em, bc) = (e.matrix().clone(), b.clone());
    let changed = FrameField::new(
        MatrixField::from_fn(m, m, m, move |p| Ok(em.eval(p)? * bc.eval(p)?)),
        region.clone(),
    )?;
    let x = rng.point(m, 1.0);
    let bx = b.eval(&x)?;

    let direct = anholonomy(&changed, &x, &fd)?;
    let partials = fd.gradient(|p| b.eval(p), &x, &region)?;
    let e_of_b = frame_derivatives(&e.eval(&x)?, &partials);
    let law = anholonomy_after_change(&anholonomy(&e, &x, &fd)?, &bx, &e_of_b)?;
    let e_anh = mats_rel(&direct.c, &law.c);

    let xe = random_section(rng, m, m, 0.5);
    let (bc, xc) = (b.clone(), xe.clone());
    let x_bar = VectorField::from_fn(m, m, move |p| Ok(inv(&bc.eval(p)?)? * xc.eval(p)?));
    let direct = lie_gamma(&changed, &x_bar, &x, &fd)?;
    let natural = e.eval(&x)? * xe.eval(&x)?;
    let x_of_b = fd.directional(|p| b.eval(p), &x, natural.as_slice(), &region)?;
    let law = lie_gamma_after_change(&lie_gamma(&e, &xe, &x, &fd)?, &bx, &x_of_b)?;
    Ok((e_anh, rel_diff(direct.as_slice(), law.as_slice())))
}

fn curvature_tensoriality() -> Result<Vec<Check>> {
    let fd = Fd::default();
    let mut rng = FixtureRng::new(2);
    let mut worst = 0.0f64;
    for k in 0..20 {
        let (n, r) = (2 + k % 2, 2);
        let g3 = rng.three_index(n, r, 0.5);
        let change = rng.frame_change(n, r, FRAME_SCALE);
        let x = rng.point(n, 1.0);
        let frame = change.changed_frame(None, g3.region())?;
        let moved = g3.transformed(&change, None, fd)?;
        let lhs = curvature_general_frame(&moved, &frame, &x, &fd)?;
        let natural = curvature(&g3, &x, &fd)?;
        let base = change.eval_base(&x)?;
        let b = change.eval_fibre(&x)?;
        let b_inv = inv(&b)?;
        for mu in 0..n {
            for nu in 0..n {
                let mut sum = DMatrix::zeros(r, r);
                for l in 0..n {
                    for s in 0..n {
                        sum += natural.matrix(l, s) * (base[(l, mu)] * base[(s, nu)]);
                    }
                }
                let expected = &b_inv * sum * &b;
                worst = worst.max(rel_diff(lhs.matrix(mu, nu).as_slice(), expected.as_slice()));
            }
        }
    }
    Ok(vec![Check::at_most("curvature sandwich law", worst, 1e-5)])
}

fn oracle_triangle() -> Result<Vec<Check>> {
    let fd = Fd::default();
    let mut rng = FixtureRng::new(3);
    let (n, r) = (2, 2);
    let mut linear = [0.0f64; 3];
    let mut affine = [0.0f64; 3];
    for _ in 0..10 {
        let g3 = rng.three_index(n, r, 0.5);
        let y = random_section(&mut rng, n, r, 0.5);
        let f = rng.point(n, 1.0);
        let x = rng.point(n, 1.0);
        let a = covariant_derivative(&g3, &f, &y, &x, &fd)?;
        let b = covariant_derivative_limit(&g3, &f, &y, &x, None)?;
        let c = lifted(&TwoIndexField::from_linear(&g3), &f, &y, &x, &fd)?;
        accumulate(&mut linear, &a, &b, &c);

        let aff = rng.affine(n, r, 0.5);
        let a = covariant_derivative(aff.linear(), &f, &y, &x, &fd)?;
        let b = covariant_derivative_limit_affine(&aff, &f, &y, &x, None)?;
        let c = lifted(&TwoIndexField::from_affine(&aff), &f, &y, &x, &fd)?;
        accumulate(&mut affine, &a, &b, &c);
    }
    let pairs = ["formula vs limit", "formula vs lifted", "limit vs lifted"];
    let mut out = Vec::new();
    for (kind, worst) in [("linear", linear), ("affine", affine)] {
        for (p, v) in pairs.iter().zip(worst) {
            out.push(Check::at_most(format!("{kind} {p}"), v, 1e-5));
        }
    }
    Ok(out)
}

/// `∇̂_{F^h} Y^v` at the point of the section over `x`.
fn lifted(
    g2: &TwoIndexField,
    f: &[f64],
    y: &SectionField,
    x: &[f64],
    fd: &Fd,
) -> Result<DVector<f64>> {
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

fn accumulate(worst: &mut [f64; 3], a: &DVector<f64>, b: &DVector<f64>, c: &DVector<f64>) {
    worst[0] = worst[0].max((a - b).amax());
    worst[1] = worst[1].max((a - c).amax());
    worst[2] = worst[2].max((b - c).amax());
}

fn curvature_oracle() -> Result<Vec<Check>> {
    let fd = Fd::default();
    let constant = registry::constant(&[
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
        DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 1.0, -0.3]),
    ])?;
    let vars = base_vars(2);
    let field = |c: &[&str]| VectorField::parse(c, &vars).expect("literal parses");

    let (e1, e2) = (
        VectorField::constant(&[1.0, 0.0], 2),
        VectorField::constant(&[0.0, 1.0], 2),
    );
    let y0 = [0.7, -1.2];
    let x0 = [0.3, -0.4];
    let commutator = curvature_commutator_oracle(
        &constant,
        &e1,
        &e2,
        &VectorField::constant(&y0, 2),
        &x0,
        &fd,
    )?;
    let formula = curvature(&constant, &x0, &fd)?.apply(&y0, &[1.0, 0.0], &[0.0, 1.0]);
    let exact = (commutator - formula).amax();

    let f = field(&["1 + 0.3*x2", "0.5*x1"]);
    let g = field(&["sin(x1)", "1 - 0.2*x1*x2"]);
    let y = field(&["x1*x2", "cos(x2)"]);
    let mut generic = 0.0f64;
    for x in [[0.3, -0.4], [-0.8, 0.5], [0.1, 0.9]] {
        generic = generic.max(commutator_gap(&constant, &f, &g, &y, &x, &fd)?);
    }
    let sphere = registry::sphere_lc();
    let mut sphere_gap = 0.0f64;
    for x in [[0.7, 0.2], [FRAC_PI_2, -1.0], [2.3, 2.5]] {
        sphere_gap = sphere_gap.max(commutator_gap(&sphere, &f, &g, &y, &x, &fd)?);
    }
    Ok(vec![
        Check::at_most(
            "constant, coordinate fields, constant section",
            exact,
            1e-10,
        ),
        Check::at_most("constant, general fields", generic, 1e-5),
        Check::at_most("sphere, general fields", sphere_gap, 1e-5),
    ])
}

fn commutator_gap(
    g3: &CoefficientField3,
    f: &VectorField,
    g: &VectorField,
    y: &SectionField,
    x: &[f64],
    fd: &Fd,
) -> Result<f64> {
    let commutator = curvature_commutator_oracle(g3, f, g, y, x, fd)?;
    let formula = curvature(g3, x, fd)?.apply(
        y.eval(x)?.as_slice(),
        f.eval(x)?.as_slice(),
        g.eval(x)?.as_slice(),
    );
    Ok((commutator - formula).amax())
}

fn transport_linearity() -> Result<Vec<Check>> {
    let mut rng = FixtureRng::new(5);
    let path = PathSpec::parse_curve(&["0.2 + t", "-0.3 + 0.5*sin(2*t)"], 0.0, 1.0, 1000)?;
    let g3 = rng.three_index(2, 2, 0.5);
    let aff = rng.affine(2, 2, 0.5);
    let mut linear = 0.0f64;
    let mut scaling = 0.0f64;
    let mut additive = 0.0f64;
    for _ in 0..5 {
        let (xv, yv) = (rng.point(2, 2.0), rng.point(2, 2.0));
        let (alpha, beta) = (rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0));
        let p = |v: &[f64]| -> Result<DVector<f64>> { Ok(transport_linear(&g3, &path, v)?.values) };
        let combo: Vec<f64> = xv
            .iter()
            .zip(&yv)
            .map(|(a, b)| alpha * a + beta * b)
            .collect();
        let gap = p(&combo)? - p(&xv)? * alpha - p(&yv)? * beta;
        linear = linear.max(gap.amax());

        let q =
            |v: &[f64]| -> Result<DVector<f64>> { Ok(transport_affine(&aff, &path, v)?.values) };
        let rho = rng.uniform(-2.0, 2.0);
        let zero = q(&[0.0, 0.0])?;
        let scaled: Vec<f64> = xv.iter().map(|a| rho * a).collect();
        let gap = q(&scaled)? - q(&xv)? * rho - &zero * (1.0 - rho);
        scaling = scaling.max(gap.amax());
        let sum: Vec<f64> = xv.iter().zip(&yv).map(|(a, b)| a + b).collect();
        let gap = q(&sum)? - q(&xv)? - q(&yv)? + &zero;
        additive = additive.max(gap.amax());
    }
    Ok(vec![
        Check::at_most("linear transport superposition", linear, 1e-9),
        Check::at_most("affine transport of scaled vector", scaling, 1e-9),
        Check::at_most("affine transport of sums", additive, 1e-9),
    ])
}

fn sphere_holonomy() -> Result<Vec<Check>> {
    let g3 = registry::sphere_lc();
    let [a, b, c] = oracles::rotated_octant();
    let (theta0, _) = oracles::sphere_chart(&a);
    let mut u = vec![1.0, 0.0];
    for (from, to) in [(a, b), (b, c), (c, a)] {
        let leg = oracles::quarter_arc(from, to, 4000)?;
        u = transport_linear(&g3, &leg, &u)?.values.as_slice().to_vec();
    }
    let angle = oracles::holonomy_angle(theta0, &u);
    let norm = (u[0].powi(2) + (theta0.sin() * u[1]).powi(2)).sqrt();
    Ok(vec![
        Check::at_most("holonomy angle error", (angle - FRAC_PI_2).abs(), 1e-5),
        Check::at_most("length change", (norm - 1.0).abs(), 1e-6),
    ])
}

fn geodesics() -> Result<Vec<Check>> {
    let x0 = [0.3, -0.2];
    let v0 = [1.1, 0.7];
    let straight = geodesic(&registry::flat(2, 2), &x0, &v0, 2.0, 100)?;
    let flat_gap = straight
        .t
        .iter()
        .zip(&straight.x)
        .map(|(t, x)| {
            let line = [x0[0] + v0[0] * t, x0[1] + v0[1] * t];
            abs_diff(x.as_slice(), &line)
        })
        .fold(0.0, f64::max);

    let sphere = registry::sphere_lc();
    let tilt = 0.5f64;
    let s0 = [FRAC_PI_2, 0.0];
    let w0 = [-tilt.sin(), tilt.cos()];
    let circle = geodesic(&sphere, &s0, &w0, 2.0 * PI, 4000)?;
    let samples: Vec<Vec<f64>> = circle.x.iter().map(|x| x.as_slice().to_vec()).collect();
    let residual = oracles::great_circle_residual(&s0, &w0, &samples);

    let path = circle.as_path(4000)?;
    let carried = transport_linear(&sphere, &path, &w0)?.values;
    let last = circle.v.last().expect("non-empty trajectory");
    let self_transport = (carried - last).amax();
    Ok(vec![
        Check::at_most("flat geodesic vs straight line", flat_gap, 1e-12),
        Check::at_most("tilted great-circle residual", residual, 1e-6),
        Check::at_most("velocity self-transport", self_transport, 1e-6),
    ])
}

const GAUGE_ANGLE: &str = "x1*x2 + 0.5*sin(x1)";
const GAUGE_GRADIENT: [&str; 2] = ["x2 + 0.5*cos(x1)", "x1"];

fn pure_gauge() -> Result<PureGauge> {
    let grad: Vec<String> = GAUGE_GRADIENT.iter().map(|s| s.to_string()).collect();
    PureGauge::parse(GAUGE_ANGLE, Some(&grad), 2)
}

fn grid(lo: [f64; 2], hi: [f64; 2], k: usize) -> Vec<Vec<f64>> {
    let at = |i: usize, d: usize| lo[d] + (hi[d] - lo[d]) * i as f64 / (k - 1) as f64;
    (0..k)
        .flat_map(|i| (0..k).map(move |j| vec![at(i, 0), at(j, 1)]))
        .collect()
}

fn flatness() -> Result<Vec<Check>> {
    let fd = Fd::default();
    let pg = pure_gauge()?;
    let g3 = pg.connection();
    let report = is_flat(&g3, &grid([-1.0, -1.0], [1.0, 1.0], 5), 1e-6, &fd)?;
    let (x0, x1) = ([-0.6, 0.4], [0.9, -0.7]);
    let transport = flat_fundamental_matrix(&g3, &x0, &x1, 1e-6, 400)?;
    let expected = pg.gauge(&x1)? * pg.gauge(&x0)?.transpose();
    let matrix_gap = (&transport.matrix - expected).amax();

    let sphere = is_flat(
        &registry::sphere_lc(),
        &grid([FRAC_PI_4, 0.0], [3.0 * FRAC_PI_4, 2.0], 5),
        1e-6,
        &fd,
    )?;
    Ok(vec![
        Check::at_most("pure-gauge max |R|", report.max_abs, 1e-6),
        Check::at_most(
            "pure-gauge certified",
            f64::from(u8::from(!report.flat)),
            0.0,
        ),
        Check::at_most("staircase residual", transport.residual, 1e-7),
        Check::at_most("fundamental matrix vs gauge", matrix_gap, 1e-7),
        Check::at_least("sphere max |R|", sphere.max_abs, 0.1),
        Check::at_most("sphere certified", f64::from(u8::from(sphere.flat)), 0.0),
    ])
}

fn rk4_order() -> Result<Vec<Check>> {
    let length = 3.0;
    let scalar = [DMatrix::from_element(1, 1, -2.0)];
    let rotation = [DMatrix::from_row_slice(2, 2, &[-0.3, 1.5, -1.2, 0.4])];
    let mut out = Vec::new();
    for (kind, gamma) in [("scalar", &scalar[..]), ("matrix", &rotation[..])] {
        let g3 = registry::constant(gamma)?;
        let exact = (&gamma[0] * -length).exp();
        let errors = [100usize, 200, 400, 800]
            .iter()
            .map(|&steps| {
                let path = PathSpec::straight(&[0.0], &[length], steps)?;
                Ok((fundamental_solution(&g3, &path)? - &exact).amax())
            })
            .collect::<Result<Vec<f64>>>()?;
        for (k, pair) in errors.windows(2).enumerate() {
            let slope = (pair[0] / pair[1]).log2();
            let steps = 100 << k;
            out.push(Check::within(
                format!("{kind} slope {steps}->{}", 2 * steps),
                slope,
                3.7,
                4.3,
            ));
        }
    }
    Ok(out)
}

fn covariantly_constant() -> Result<Vec<Check>> {
    let fd = Fd::default();
    let g3 = pure_gauge()?.connection();
    let g2 = TwoIndexField::from_linear(&g3);
    let (c1, c2) = (0.8, -0.6);
    let a = format!("({GAUGE_ANGLE})");
    let y = VectorField::parse(
        &[
            format!("cos{a}*{c1} - sin{a}*{c2}"),
            format!("sin{a}*{c1} + cos{a}*{c2}"),
        ],
        &base_vars(2),
    )?;
    let mut derivative = 0.0f64;
    let mut defect = 0.0f64;
    for x in grid([-1.0, -1.0], [1.0, 1.0], 3) {
        for dir in [[1.0, 0.0], [0.0, 1.0]] {
            derivative = derivative.max(covariant_derivative(&g3, &dir, &y, &x, &fd)?.amax());
        }
        defect = defect.max(section_horizontality_defect(&g2, &y, &x, &fd)?.amax());
    }
    let path = PathSpec::parse_curve(
        &["-0.7 + 1.5*t", "0.6 - 1.2*t + 0.4*sin(3*t)"],
        0.0,
        1.0,
        400,
    )?;
    let start = y.eval(&path.start()?)?;
    let carried = transport_linear(&g3, &path, start.as_slice())?.values;
    let transport = (carried - y.eval(&path.end()?)?).amax();
    Ok(vec![
        Check::at_most("covariant derivative", derivative, 1e-6),
        Check::at_most("section horizontality defect", defect, 1e-6),
        Check::at_most("transported value vs section", transport, 1e-6),
    ])
}

fn affine_curvature_gap() -> Result<Vec<Check>> {
    let fd = Fd::default();
    let mut rng = FixtureRng::new(11);
    let aff = rng.affine(2, 2, 0.5);
    let affine = TwoIndexField::from_affine(&aff);
    let linear = TwoIndexField::from_linear(aff.linear());
    let mut gap = 0.0f64;
    let mut adapted = 0.0f64;
    for _ in 0..5 {
        let x = rng.point(2, 1.0);
        let p = concat(&x, &rng.point(2, 1.0));
        let fa = fibre_curvature_general(&affine, None, &p, &fd)?;
        let fl = fibre_curvature_general(&linear, None, &p, &fd)?;
        let t = oracles::torsion_like(&aff, &x)?;
        for a in 0..2 {
            let diff = &fa.r[a] - &fl.r[a];
            gap = gap.max((diff + &t[a]).amax());
        }
        adapted = adapted.max(fibre_gap(
            &fa,
            &oracles::adapted_anholonomy(&affine, &p, &fd)?,
        ));
    }
    Ok(vec![
        Check::at_most("affine minus linear curvature plus T", gap, 1e-5),
        Check::at_most("affine curvature vs adapted anholonomy", adapted, 1e-5),
    ])
}

fn fibre_gap(a: &FibreCurvature, b: &FibreCurvature) -> f64 {
    mats_abs(&a.r, &b.r)
        .max(mats_abs(&a.s, &b.s))
        .max(mats_abs(&a.fibre_gamma, &b.fibre_gamma))
}

fn random_linear_morphism(rng: &mut FixtureRng) -> Result<BundleMorphism> {
    let vars = base_vars(2);
    let base: Vec<String> = vars
        .iter()
        .map(|v| format!("{v} + {}", rng.smooth_expr(&vars, 0.2)))
        .collect();
    let table: Vec<Vec<String>> = (0..2)
        .map(|_| (0..2).map(|_| rng.smooth_expr(&vars, 0.8)).collect())
        .collect();
    BundleMorphism::parse_linear(&base, &table, Region::unbounded(2))
}

fn morphisms() -> Result<Vec<Check>> {
    let fd = Fd::default();
    let mut rng = FixtureRng::new(12);
    let points: Vec<Vec<f64>> = (0..10).map(|_| rng.point(4, 1.0)).collect();

    let g2 = TwoIndexField::from_linear(&rng.three_index(2, 2, 0.5));
    let identity = preserves_connection(
        &BundleMorphism::identity(2, 2),
        &g2,
        &g2,
        &points,
        1e-7,
        &fd,
    )?;

    let pg = pure_gauge()?;
    let pgc = pg.clone();
    let gauge = BundleMorphism::linear(
        BaseMap::identity(Region::unbounded(2)),
        MatrixField::from_fn(2, 2, 2, move |x| Ok(pgc.gauge(x)?.transpose())),
    )?;
    let gauge_report = preserves_connection(
        &gauge,
        &TwoIndexField::from_linear(&pg.connection()),
        &TwoIndexField::from_linear(&registry::flat(2, 2)),
        &points,
        1e-6,
        &fd,
    )?;

    let mut contraction = 0.0f64;
    for _ in 0..5 {
        let m = random_linear_morphism(&mut rng)?;
        let src = rng.three_index(2, 2, 0.5);
        let tgt = rng.three_index(2, 2, 0.5);
        let x = rng.point(2, 1.0);
        let coeffs = vb_morphism_coeffs(&m, &src, &tgt, &x, &fd)?;
        for _ in 0..3 {
            let u = rng.point(2, 2.0);
            let defect = jacobi_adapted(
                &m,
                &TwoIndexField::from_linear(&src),
                &TwoIndexField::from_linear(&tgt),
                &concat(&x, &u),
                &fd,
            )?
            .horizontal_defect;
            for (mu, c) in coeffs.iter().enumerate() {
                let v = c * dvec(&u);
                contraction = contraction.max((v - defect.column(mu)).amax());
            }
        }
    }

    let first = random_linear_morphism(&mut rng)?;
    let second = random_linear_morphism(&mut rng)?;
    let general = BundleMorphism::parse_general(
        &["x1 + 0.2*sin(x2)", "x2 - 0.1*x1^2"],
        &["u3 + 0.1*u4^2", "u4 + 0.2*sin(u3)*u1"],
        Region::unbounded(2),
        2,
    )?;
    let mut chain = 0.0f64;
    for p in &points {
        for next in [&second, &general] {
            let composed = first.then(next)?;
            let direct = jacobi_natural(&composed, p, &fd)?;
            let product =
                jacobi_natural(next, &first.apply(p)?, &fd)? * jacobi_natural(&first, p, &fd)?;
            chain = chain.max(rel_diff(direct.as_slice(), product.as_slice()));
        }
    }
    Ok(vec![
        Check::at_most("identity horizontal defect", identity.max_abs, 1e-7),
        Check::at_most(
            "gauge morphism horizontal defect",
            gauge_report.max_abs,
            1e-6,
        ),
        Check::at_most(
            "coefficient contraction vs adapted defect",
            contraction,
            1e-6,
        ),
        Check::at_most("composed Jacobian chain rule", chain, 1e-6),
    ])
}

fn parser() -> Result<Vec<Check>> {
    let mut precedence = Vec::new();
    for src in PRECEDENCE_CASES {
        let ours = parse(src).map(|ast| sexpr(&ast)).ok();
        let theirs = oracle_sexpr(src);
        if ours.is_none() || ours != theirs {
            precedence.push(src);
        }
    }
    let mut malformed = Vec::new();
    for (src, offset) in MALFORMED_CASES {
        let ok = matches!(parse(src), Err(e) if e.offset == offset) && oracle_sexpr(src).is_none();
        if !ok {
            malformed.push(src);
        }
    }
    let label = |what: &str, bad: &[&str]| match bad.first() {
        Some(first) => format!("{what} (first: {first:?})"),
        None => what.to_string(),
    };
    Ok(vec![
        Check::at_least("precedence cases", PRECEDENCE_CASES.len() as f64, 50.0),
        Check::at_most(
            label("precedence mismatches", &precedence),
            precedence.len() as f64,
            0.0,
        ),
        Check::at_most(
            label("malformed offset mismatches", &malformed),
            malformed.len() as f64,
            0.0,
        ),
    ])
}
