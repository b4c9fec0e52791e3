//! Closed-form and independently computed reference values.

use std::f64::consts::FRAC_PI_2;

use bundlecalc::calculus::FibreCurvature;
use bundlecalc::connection::{
    adapted_frame_matrix, AffineCoefficients, CoefficientField3, FrameChange, TwoIndexField,
};
use bundlecalc::fields::{anholonomy, Fd, FrameField, MatrixField, ScalarField};
use bundlecalc::transport::PathSpec;
use bundlecalc::{Error, Result};
use nalgebra::{DMatrix, Rotation3, Vector3};

/// `max_i |a_i − b_i| / max(1, |b_i|)`.
pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "compared values differ in length");
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// `max_i |a_i − b_i|`.
pub fn abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "compared values differ in length");
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn step(x: f64) -> f64 {
    1e-5 * x.abs().max(1.0)
}

/// Plain central difference of a matrix-valued function along `axis`.
fn central(
    f: impl Fn(&[f64]) -> Result<DMatrix<f64>>,
    x: &[f64],
    axis: usize,
) -> Result<DMatrix<f64>> {
    let h = step(x[axis]);
    let mut plus = x.to_vec();
    let mut minus = x.to_vec();
    plus[axis] += h;
    minus[axis] -= h;
    Ok((f(&plus)? - f(&minus)?) / (plus[axis] - minus[axis]))
}

fn inverse(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let det = m.determinant();
    m.try_inverse()
        .ok_or(Error::SingularFrame { det: det.abs() })
}

/// The coordinate form `Γ̃_μ = B^ν_μ (A Γ_ν − ∂_ν A) A⁻¹` with `A = B_fibre⁻¹`
/// the matrix of the fibre coordinate change `ũ = A u`.
pub fn three_index_coordinate_form(
    g3: &CoefficientField3,
    change: &FrameChange,
    x: &[f64],
) -> Result<Vec<DMatrix<f64>>> {
    let gamma = g3.eval(x)?;
    let base = change.eval_base(x)?;
    let a = inverse(change.eval_fibre(x)?)?;
    let a_inv = inverse(a.clone())?;
    let inner = (0..g3.n())
        .map(|nu| {
            let da = central(|p| inverse(change.fibre().eval(p)?), x, nu)?;
            Ok((&a * &gamma[nu] - da) * &a_inv)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..g3.n())
        .map(|mu| {
            inner
                .iter()
                .enumerate()
                .fold(DMatrix::zeros(g3.r(), g3.r()), |acc, (nu, m)| {
                    acc + m * base[(nu, mu)]
                })
        })
        .collect())
}

/// `T^a_{μν} = −∂_μG^a_ν + ∂_νG^a_μ + Γ^a_{cν}G^c_μ − Γ^a_{cμ}G^c_ν`, as
/// `t[a][(μ, ν)]`.
pub fn torsion_like(aff: &AffineCoefficients, x: &[f64]) -> Result<Vec<DMatrix<f64>>> {
    let (n, r) = (aff.n(), aff.r());
    let g = aff.eval_inhom(x)?;
    let gamma = aff.linear().eval(x)?;
    let dg = (0..n)
        .map(|mu| central(|p| aff.eval_inhom(p), x, mu))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..r)
        .map(|a| {
            DMatrix::from_fn(n, n, |mu, nu| {
                let mut v = -dg[mu][(a, nu)] + dg[nu][(a, mu)];
                for c in 0..r {
                    v += gamma[nu][(a, c)] * g[(c, mu)] - gamma[mu][(a, c)] * g[(c, nu)];
                }
                v
            })
        })
        .collect())
}

/// Fibre curvature read off the anholonomy of the adapted frame
/// `[[1, 0], [Γ, 1]]` itself.
pub fn adapted_anholonomy(g2: &TwoIndexField, p: &[f64], fd: &Fd) -> Result<FibreCurvature> {
    let (n, r) = (g2.n(), g2.r());
    let field = g2.clone();
    let adapted = FrameField::new(
        MatrixField::from_fn(n + r, n + r, n + r, move |q| {
            Ok(adapted_frame_matrix(&field, q)?.0)
        }),
        g2.region().clone(),
    )?;
    let c = anholonomy(&adapted, p, fd)?;
    Ok(FibreCurvature {
        r: (0..r)
            .map(|a| c.c[n + a].view((0, 0), (n, n)).into_owned())
            .collect(),
        s: (0..n)
            .map(|l| c.c[l].view((0, 0), (n, n)).into_owned())
            .collect(),
        fibre_gamma: (0..n)
            .map(|mu| DMatrix::from_fn(r, r, |a, b| c.get(n + a, mu, n + b)))
            .collect(),
    })
}

/// Unit-sphere embedding of the chart point `(θ, φ)`.
pub fn sphere_point(theta: f64, phi: f64) -> Vector3<f64> {
    Vector3::new(
        theta.sin() * phi.cos(),
        theta.sin() * phi.sin(),
        theta.cos(),
    )
}

/// Embedded image of the chart tangent vector `(θ̇, φ̇)` at `(θ, φ)`.
pub fn sphere_tangent(theta: f64, phi: f64, dtheta: f64, dphi: f64) -> Vector3<f64> {
    let e_theta = Vector3::new(
        theta.cos() * phi.cos(),
        theta.cos() * phi.sin(),
        -theta.sin(),
    );
    let e_phi = Vector3::new(-theta.sin() * phi.sin(), theta.sin() * phi.cos(), 0.0);
    e_theta * dtheta + e_phi * dphi
}

/// Chart coordinates `(acos z, atan2(y, x))` of a unit vector.
pub fn sphere_chart(p: &Vector3<f64>) -> (f64, f64) {
    (p.z.clamp(-1.0, 1.0).acos(), p.y.atan2(p.x))
}

/// Largest distance of sampled chart points from the plane of the great
/// circle through `x0` with initial velocity `v0`.
pub fn great_circle_residual(x0: &[f64], v0: &[f64], samples: &[Vec<f64>]) -> f64 {
    let normal = sphere_point(x0[0], x0[1])
        .cross(&sphere_tangent(x0[0], x0[1], v0[0], v0[1]))
        .normalize();
    samples
        .iter()
        .map(|x| sphere_point(x[0], x[1]).dot(&normal).abs())
        .fold(0.0, f64::max)
}

/// Vertices of the octant `e1, e2, e3` rotated so that its centroid sits on
/// the chart point `(π/2, 0)`, far from the coordinate poles.
pub fn rotated_octant() -> [Vector3<f64>; 3] {
    let centroid = Vector3::new(1.0, 1.0, 1.0).normalize();
    let q = Rotation3::rotation_between(&centroid, &Vector3::x()).expect("non-antipodal");
    [q * Vector3::x(), q * Vector3::y(), q * Vector3::z()]
}

/// The quarter great-circle arc from `a` to the orthogonal unit vector `b`
/// as a chart path on `t ∈ [0, 1]`.
pub fn quarter_arc(a: Vector3<f64>, b: Vector3<f64>, steps: usize) -> Result<PathSpec> {
    let at = move |t: f64| sphere_chart(&(a * (FRAC_PI_2 * t).cos() + b * (FRAC_PI_2 * t).sin()));
    PathSpec::curve(
        vec![
            ScalarField::from_fn(1, move |t| Ok(at(t[0]).0)),
            ScalarField::from_fn(1, move |t| Ok(at(t[0]).1)),
        ],
        0.0,
        1.0,
        steps,
    )
}

/// Rotation angle from `(1, 0)` to the orthonormal components
/// `(u^θ, sin θ · u^φ)` of a transported vector, counterclockwise relative to
/// the outward normal.
pub fn holonomy_angle(theta: f64, u: &[f64]) -> f64 {
    (theta.sin() * u[1]).atan2(u[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use bundlecalc::fields::{base_vars, Region};

    #[test]
    fn rotated_octant_geometry() {
        let [a, b, c] = rotated_octant();
        assert!((a.cross(&b).dot(&c) - 1.0).abs() < 1e-12);
        let centroid = (a + b + c).normalize();
        assert!((centroid - Vector3::x()).norm() < 1e-12);
        for v in [a, b, c] {
            let (theta, phi) = sphere_chart(&v);
            assert!(theta > 0.5 && theta < 2.7 && phi.abs() < 1.2);
        }
    }

    #[test]
    fn coordinate_form_matches_hand_computation() {
        // ũ = u/(1+x1): A = 1/(1+x1), ∂A = −1/(1+x1)², Γ = 0 gives
        // Γ̃ = (1+x1)⁻¹.
        let g3 = CoefficientField3::zero(1, Region::unbounded(1));
        let change = FrameChange::new(
            MatrixField::identity(1, 1),
            MatrixField::parse(&[vec!["1 + x1"]], &base_vars(1)).unwrap(),
        )
        .unwrap();
        let v = three_index_coordinate_form(&g3, &change, &[0.5]).unwrap();
        assert!((v[0][(0, 0)] - 1.0 / 1.5).abs() < 1e-9);
    }

    #[test]
    fn torsion_like_of_identity_inhomogeneity() {
        // G = δ, Γ constant: T_{μν} = Γ_ν e_μ − Γ_μ e_ν.
        let g = vec![
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            DMatrix::zeros(2, 2),
        ];
        let lin = CoefficientField3::constant(&g, Region::unbounded(2)).unwrap();
        let aff = AffineCoefficients::new(lin, MatrixField::identity(2, 2)).unwrap();
        let t = torsion_like(&aff, &[0.1, 0.2]).unwrap();
        // T^1_{12} = Γ^1_{c2}δ^c_1 − Γ^1_{c1}δ^c_2 = 0 − 1.
        assert!((t[0][(0, 1)] + 1.0).abs() < 1e-12);
        assert!((t[0][(1, 0)] - 1.0).abs() < 1e-12);
        assert_eq!(t[1][(0, 1)], 0.0);
    }

    #[test]
    fn great_circle_residual_of_equator() {
        let samples: Vec<Vec<f64>> = (0..10).map(|k| vec![FRAC_PI_2, 0.3 * k as f64]).collect();
        assert!(great_circle_residual(&[FRAC_PI_2, 0.0], &[0.0, 1.0], &samples) < 1e-15);
    }
}
