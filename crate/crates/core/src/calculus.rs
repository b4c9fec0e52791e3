//! Covariant derivatives, lifts, curvature and the flatness toolkit.

use nalgebra::{DMatrix, DVector};

use crate::connection::{CoefficientField3, TwoIndexField};
use crate::fields::{
    anholonomy, bracket, frame_derivatives, Anholonomy, DualSectionField, Fd, FrameField, Region,
    SectionField, VectorField,
};
use crate::tolerances::{NOT_FLAT_FACTOR, SINGULAR_DET};
use crate::transport::{fundamental_solution, PathSpec};
use crate::{Error, Result};

fn check_base(g3: &CoefficientField3, f: &[f64], y: &VectorField, x: &[f64]) -> Result<()> {
    if f.len() != g3.n() || x.len() != g3.n() {
        return Err(Error::dim("direction and point must have n components"));
    }
    if y.dim() != g3.r() || y.arity() != g3.n() {
        return Err(Error::dim("section must have r components over the base"));
    }
    Ok(())
}

/// `∇_F Y = F^μ (∂_μ Y + Γ_μ Y)`.
pub fn covariant_derivative(
    g3: &CoefficientField3,
    f: &[f64],
    y: &SectionField,
    x: &[f64],
    fd: &Fd,
) -> Result<DVector<f64>> {
    check_base(g3, f, y, x)?;
    let dy = fd.directional(|p| y.eval(p), x, f, g3.region())?;
    Ok(dy + g3.contract(x, f)? * y.eval(x)?)
}

/// `∇*_F ω = F^μ (∂_μ ω_a − Γ^b_{aμ} ω_b)`.
pub fn dual_covariant_derivative(
    g3: &CoefficientField3,
    f: &[f64],
    omega: &DualSectionField,
    x: &[f64],
    fd: &Fd,
) -> Result<DVector<f64>> {
    check_base(g3, f, omega, x)?;
    let domega = fd.directional(|p| omega.eval(p), x, f, g3.region())?;
    Ok(domega - g3.contract(x, f)?.transpose() * omega.eval(x)?)
}

/// `∇_F Y = F^μ (E_μ(Y) + Γ_μ Y)` with `F` and `Γ` given relative to
/// `base_frame`.
pub fn covariant_derivative_in_frame(
    g3: &CoefficientField3,
    base_frame: &FrameField,
    f: &[f64],
    y: &SectionField,
    x: &[f64],
    fd: &Fd,
) -> Result<DVector<f64>> {
    check_base(g3, f, y, x)?;
    let e = base_frame.eval(x)?;
    let natural = &e * DVector::from_column_slice(f);
    let dy = fd.directional(|p| y.eval(p), x, natural.as_slice(), g3.region())?;
    Ok(dy + g3.contract(x, f)? * y.eval(x)?)
}

/// Curvature components `R^a_{bμν}`: `r[μ][ν]` is the r×r matrix with entry
/// `(a, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureValues {
    pub r: Vec<Vec<DMatrix<f64>>>,
}

impl CurvatureValues {
    /// Assembles the values from the `μ < ν` blocks, filling the rest by
    /// antisymmetry.
    fn from_upper(
        n: usize,
        dim: usize,
        mut block: impl FnMut(usize, usize) -> Result<DMatrix<f64>>,
    ) -> Result<Self> {
        let mut r = vec![vec![DMatrix::zeros(dim, dim); n]; n];
        for mu in 0..n {
            for nu in (mu + 1)..n {
                let m = block(mu, nu)?;
                r[nu][mu] = -&m;
                r[mu][nu] = m;
            }
        }
        Ok(CurvatureValues { r })
    }

    pub fn n(&self) -> usize {
        self.r.len()
    }

    pub fn get(&self, a: usize, b: usize, mu: usize, nu: usize) -> f64 {
        self.r[mu][nu][(a, b)]
    }

    pub fn matrix(&self, mu: usize, nu: usize) -> &DMatrix<f64> {
        &self.r[mu][nu]
    }

    /// `R^a_{bμν} Y^b F^μ G^ν`.
    pub fn apply(&self, y: &[f64], f: &[f64], g: &[f64]) -> DVector<f64> {
        let y = DVector::from_column_slice(y);
        let mut out = DVector::zeros(y.len());
        for (mu, row) in self.r.iter().enumerate() {
            for (nu, m) in row.iter().enumerate() {
                let w = f[mu] * g[nu];
                if w != 0.0 {
                    out += m * &y * w;
                }
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.r
            .iter()
            .flatten()
            .map(|m| m.amax())
            .fold(0.0, f64::max)
    }
}

/// `R_{μν} = ∂_μΓ_ν − ∂_νΓ_μ + Γ_μΓ_ν − Γ_νΓ_μ`, with partials at the outer
/// (second-derivative) step.
pub fn curvature(g3: &CoefficientField3, x: &[f64], fd: &Fd) -> Result<CurvatureValues> {
    let gamma = g3.eval(x)?;
    let d = fd.outer().gradient(|p| g3.eval(p), x, g3.region())?;
    CurvatureValues::from_upper(g3.n(), g3.r(), |mu, nu| {
        Ok(&d[mu][nu] - &d[nu][mu] + &gamma[mu] * &gamma[nu] - &gamma[nu] * &gamma[mu])
    })
}

/// Curvature relative to a general base frame:
/// `R_{μν} = E_μ(Γ_ν) − E_ν(Γ_μ) + Γ_μΓ_ν − Γ_νΓ_μ − Γ_λ C^λ_{μν}`.
pub fn curvature_general_frame(
    g3: &CoefficientField3,
    base_frame: &FrameField,
    x: &[f64],
    fd: &Fd,
) -> Result<CurvatureValues> {
    let n = g3.n();
    if base_frame.dim() != n {
        return Err(Error::dim("base frame must be n-dimensional"));
    }
    let e = base_frame.eval(x)?;
    let gamma = g3.eval(x)?;
    let d = fd.outer().gradient(|p| g3.eval(p), x, g3.region())?;
    // along[ν][μ] = E_μ(Γ_ν).
    let along: Vec<Vec<DMatrix<f64>>> = (0..n)
        .map(|nu| {
            let partials: Vec<DMatrix<f64>> = d.iter().map(|ds| ds[nu].clone()).collect();
            frame_derivatives(&e, &partials)
        })
        .collect();
    let c = anholonomy(base_frame, x, fd)?;
    CurvatureValues::from_upper(n, g3.r(), |mu, nu| {
        let mut m =
            &along[nu][mu] - &along[mu][nu] + &gamma[mu] * &gamma[nu] - &gamma[nu] * &gamma[mu];
        for (lambda, g) in gamma.iter().enumerate() {
            let w = c.get(lambda, mu, nu);
            if w != 0.0 {
                m -= g * w;
            }
        }
        Ok(m)
    })
}

/// `R(F, G)Y = ∇_F∇_G Y − ∇_G∇_F Y − ∇_{[F,G]} Y`, composed from
/// [`covariant_derivative`]; the outer derivative uses the second step.
pub fn curvature_commutator_oracle(
    g3: &CoefficientField3,
    f: &VectorField,
    g: &VectorField,
    y: &SectionField,
    x: &[f64],
    fd: &Fd,
) -> Result<DVector<f64>> {
    let n = g3.n();
    if f.dim() != n || g.dim() != n || f.arity() != n || g.arity() != n {
        return Err(Error::dim(
            "vector fields must have n components over the base",
        ));
    }
    let outer = fd.outer();
    let region = g3.region();
    let nested = |a: &VectorField, b: &VectorField| -> Result<DVector<f64>> {
        let inner = |p: &[f64]| covariant_derivative(g3, b.eval(p)?.as_slice(), y, p, fd);
        let av = a.eval(x)?;
        let d = outer.directional(inner, x, av.as_slice(), region)?;
        Ok(d + g3.contract(x, av.as_slice())? * inner(x)?)
    };
    let br = bracket(f, g, x, region, fd)?;
    Ok(nested(f, g)? - nested(g, f)? - covariant_derivative(g3, br.as_slice(), y, x, fd)?)
}

/// Fibre curvature, vertical torsion-like part and fibre coefficients of a
/// general connection relative to a bundle frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FibreCurvature {
    /// `R^a_{μν}`: `r[a][(μ, ν)]`.
    pub r: Vec<DMatrix<f64>>,
    /// `S^λ_{μν}`: `s[λ][(μ, ν)]`, the base part of `[X_μ, X_ν]`.
    pub s: Vec<DMatrix<f64>>,
    /// `°Γ^a_{bμ}`: `fibre_gamma[μ][(a, b)]`.
    pub fibre_gamma: Vec<DMatrix<f64>>,
}

/// Components of `[X_μ, X_ν] = S^λ_{μν} X_λ + R^a_{μν} X_a` and
/// `[X_μ, X_b] = (…) X_λ + °Γ^a_{bμ} X_a` for the adapted frame
/// `X_μ = e_μ + Γ^b_μ e_b`, `X_a = e_a` built on `frame_on_e` (natural
/// coordinates when `None`). The fibre vectors `e_a` must be vertical.
pub fn fibre_curvature_general(
    g2: &TwoIndexField,
    frame_on_e: Option<&FrameField>,
    p: &[f64],
    fd: &Fd,
) -> Result<FibreCurvature> {
    let (n, r) = (g2.n(), g2.r());
    let big = n + r;
    let (e, c) = match frame_on_e {
        Some(frame) => {
            if frame.dim() != big {
                return Err(Error::dim("bundle frame must be (n+r)-dimensional"));
            }
            let e = frame.eval(p)?;
            let scale = e.amax().max(1.0);
            let leak = e.view((0, n), (n, r)).amax();
            if leak > SINGULAR_DET * scale {
                return Err(Error::dim(
                    "fibre vectors of the bundle frame must be vertical",
                ));
            }
            let c = anholonomy(frame, p, fd)?;
            (e, c)
        }
        None => (DMatrix::identity(big, big), Anholonomy::zeros(big)),
    };
    let gamma = g2.eval(p)?;
    let region = g2.region();
    let along = |v: DVector<f64>| fd.directional(|q| g2.eval(q), p, v.as_slice(), region);
    let x_mu: Vec<DVector<f64>> = (0..n)
        .map(|mu| {
            let mut v = e.column(mu).into_owned();
            for b in 0..r {
                v += e.column(n + b) * gamma[(b, mu)];
            }
            v
        })
        .collect();
    // d_mu[μ][(a, ν)] = X_μ(Γ^a_ν); d_b[b][(a, μ)] = X_b(Γ^a_μ).
    let d_mu = x_mu
        .iter()
        .cloned()
        .map(along)
        .collect::<Result<Vec<_>>>()?;
    let d_b = (0..r)
        .map(|b| along(e.column(n + b).into_owned()))
        .collect::<Result<Vec<_>>>()?;
    let cc = |k: usize, i: usize, j: usize| c.get(k, i, j);

    // Splits a vector V^K e_K into adapted components: base part V^λ and
    // fibre part V^a − Γ^a_λ V^λ.
    let split = |v: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let base = v[..n].to_vec();
        let fibre = (0..r)
            .map(|a| v[n + a] - (0..n).map(|l| gamma[(a, l)] * v[l]).sum::<f64>())
            .collect();
        (base, fibre)
    };

    let mut out = FibreCurvature {
        r: vec![DMatrix::zeros(n, n); r],
        s: vec![DMatrix::zeros(n, n); n],
        fibre_gamma: vec![DMatrix::zeros(r, r); n],
    };
    let mut v = vec![0.0; big];
    for mu in 0..n {
        for nu in (mu + 1)..n {
            for (k, vk) in v.iter_mut().enumerate() {
                let mut acc = cc(k, mu, nu);
                for b in 0..r {
                    acc += gamma[(b, nu)] * cc(k, mu, n + b) + gamma[(b, mu)] * cc(k, n + b, nu);
                    for d in 0..r {
                        acc += gamma[(b, mu)] * gamma[(d, nu)] * cc(k, n + b, n + d);
                    }
                }
                *vk = acc;
            }
            for a in 0..r {
                v[n + a] += d_mu[mu][(a, nu)] - d_mu[nu][(a, mu)];
            }
            let (base, fibre) = split(&v);
            for (l, s) in base.iter().enumerate() {
                out.s[l][(mu, nu)] = *s;
                out.s[l][(nu, mu)] = -s;
            }
            for (a, f) in fibre.iter().enumerate() {
                out.r[a][(mu, nu)] = *f;
                out.r[a][(nu, mu)] = -f;
            }
        }
    }
    for mu in 0..n {
        for b in 0..r {
            for (k, vk) in v.iter_mut().enumerate() {
                let mut acc = cc(k, mu, n + b);
                for d in 0..r {
                    acc += gamma[(d, mu)] * cc(k, n + d, n + b);
                }
                *vk = acc;
            }
            for a in 0..r {
                v[n + a] -= d_b[b][(a, mu)];
            }
            let (_, fibre) = split(&v);
            for (a, f) in fibre.into_iter().enumerate() {
                out.fibre_gamma[mu][(a, b)] = f;
            }
        }
    }
    Ok(out)
}

/// `Y^v = (0, Y(π(p)))` in natural bundle components.
pub fn vertical_lift(y: &SectionField, base: &Region, p: &[f64]) -> Result<DVector<f64>> {
    let n = base.dim();
    if y.arity() != n || p.len() != n + y.dim() {
        return Err(Error::dim("bundle point must have n + r components"));
    }
    base.check(&p[..n])?;
    let values = y.eval(&p[..n])?;
    Ok(DVector::from_iterator(
        p.len(),
        std::iter::repeat_n(0.0, n).chain(values.iter().copied()),
    ))
}

/// `F^h = F^μ X_μ = (F^μ, Γ^a_μ(p) F^μ)` in natural bundle components.
pub fn horizontal_lift(f: &[f64], g2: &TwoIndexField, p: &[f64]) -> Result<DVector<f64>> {
    if f.len() != g2.n() {
        return Err(Error::dim("direction must have n components"));
    }
    let vertical = g2.eval(p)? * DVector::from_column_slice(f);
    Ok(DVector::from_iterator(
        g2.n() + g2.r(),
        f.iter().copied().chain(vertical.iter().copied()),
    ))
}

/// A base field `Z(x)` viewed as the field `Z ∘ π` on the total space.
pub fn lift_to_bundle(field: &VectorField, r: usize) -> VectorField {
    let n = field.arity();
    let inner = field.clone();
    VectorField::from_fn(field.dim(), n + r, move |p| inner.eval(&p[..n]))
}

/// `∇̂_Z̄ Ẑ = Z̄^μ {X_μ(Ẑ^a) − Ẑ^b ∂_b Γ^a_μ}`: vertical components relative
/// to `X_a = ∂_a`, for horizontal components `Z̄^μ` and vertical
/// components `Ẑ^a` given as fields on the total space.
pub fn nabla_hat_oracle(
    g2: &TwoIndexField,
    zbar: &VectorField,
    zhat: &VectorField,
    p: &[f64],
    fd: &Fd,
) -> Result<DVector<f64>> {
    let (n, r) = (g2.n(), g2.r());
    if zbar.dim() != n || zhat.dim() != r || zbar.arity() != n + r || zhat.arity() != n + r {
        return Err(Error::dim(
            "horizontal and vertical parts must be fields on E",
        ));
    }
    let region = g2.region();
    let gamma = g2.eval(p)?;
    let zb = zbar.eval(p)?;
    let zh = zhat.eval(p)?;
    let mut d_gamma = DMatrix::zeros(r, n);
    for b in 0..r {
        if zh[b] != 0.0 {
            d_gamma += fd.partial(|q| g2.eval(q), p, n + b, region)? * zh[b];
        }
    }
    let mut out = DVector::zeros(r);
    for mu in 0..n {
        if zb[mu] == 0.0 {
            continue;
        }
        let mut dir = vec![0.0; n + r];
        dir[mu] = 1.0;
        for b in 0..r {
            dir[n + b] = gamma[(b, mu)];
        }
        let xz = fd.directional(|q| zhat.eval(q), p, &dir, region)?;
        out += (xz - d_gamma.column(mu)) * zb[mu];
    }
    Ok(out)
}

/// `ω^a(Y_*(∂_μ)) = ∂_μ Y^a − Γ^a_μ(x, Y(x))` as an r×n matrix; it vanishes
/// exactly when the image of the section is horizontal.
pub fn section_horizontality_defect(
    g2: &TwoIndexField,
    y: &SectionField,
    x: &[f64],
    fd: &Fd,
) -> Result<DMatrix<f64>> {
    let (n, r) = (g2.n(), g2.r());
    if y.dim() != r || y.arity() != n || x.len() != n {
        return Err(Error::dim("section must have r components over the base"));
    }
    let base = g2.region().leading(n);
    let dy = fd.gradient(|q| y.eval(q), x, &base)?;
    let yv = y.eval(x)?;
    let p: Vec<f64> = x.iter().chain(yv.iter()).copied().collect();
    let gamma = g2.eval(&p)?;
    let mut out = DMatrix::zeros(r, n);
    for (mu, d) in dy.iter().enumerate() {
        out.set_column(mu, &(d - gamma.column(mu)));
    }
    Ok(out)
}

/// Result of a flatness test over sample points.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatnessReport {
    pub flat: bool,
    pub max_abs: f64,
    /// Index of the sample with the largest curvature.
    pub worst: Option<usize>,
}

/// Flat iff `max |R^a_{bμν}| ≤ tol` over `points`.
pub fn is_flat(
    g3: &CoefficientField3,
    points: &[Vec<f64>],
    tol: f64,
    fd: &Fd,
) -> Result<FlatnessReport> {
    let mut max_abs = 0.0;
    let mut worst = None;
    for (i, x) in points.iter().enumerate() {
        let m = curvature(g3, x, fd)?.max_abs();
        if worst.is_none() || m > max_abs {
            max_abs = m;
            worst = Some(i);
        }
    }
    Ok(FlatnessReport {
        flat: max_abs <= tol,
        max_abs,
        worst,
    })
}

/// Fundamental matrix of a flat connection and the path-independence
/// residual between two staircase integrations.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatTransport {
    pub matrix: DMatrix<f64>,
    pub residual: f64,
}

/// Corners of the axis-aligned path from `x0` to `x1` visiting the axes in
/// `order`.
fn staircase(x0: &[f64], x1: &[f64], order: impl Iterator<Item = usize>) -> Vec<Vec<f64>> {
    let mut pts = vec![x0.to_vec()];
    let mut cur = x0.to_vec();
    for axis in order {
        if cur[axis] != x1[axis] {
            cur[axis] = x1[axis];
            pts.push(cur.clone());
        }
    }
    pts
}

/// Integrates `∂_μ Y + Γ_μ Y = 0`, `Y(x0) = 1` to `x1` along the ascending
/// and descending axis staircases. Fails with `NotFlat` when the two
/// disagree by more than `100·tol`.
pub fn flat_fundamental_matrix(
    g3: &CoefficientField3,
    x0: &[f64],
    x1: &[f64],
    tol: f64,
    steps: usize,
) -> Result<FlatTransport> {
    let n = g3.n();
    if x0.len() != n || x1.len() != n {
        return Err(Error::dim("endpoints must have n components"));
    }
    g3.region().check(x0)?;
    g3.region().check(x1)?;
    if x0 == x1 {
        return Ok(FlatTransport {
            matrix: DMatrix::identity(g3.r(), g3.r()),
            residual: 0.0,
        });
    }
    let up = PathSpec::polyline(staircase(x0, x1, 0..n), steps)?;
    let down = PathSpec::polyline(staircase(x0, x1, (0..n).rev()), steps)?;
    let first = fundamental_solution(g3, &up)?;
    let second = fundamental_solution(g3, &down)?;
    let residual = (&first - &second).amax();
    let limit = NOT_FLAT_FACTOR * tol;
    if residual > limit {
        return Err(Error::NotFlat { residual, limit });
    }
    Ok(FlatTransport {
        matrix: first,
        residual,
    })
}
