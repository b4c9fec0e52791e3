use nalgebra::{DMatrix, DVector};

use super::{invert, Fd, FrameField, Region, TensorField, VectorField};
use crate::{Error, Result};

/// Anholonomy components `C^λ_{μν}` of a frame: `c[λ][(μ, ν)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Anholonomy {
    pub c: Vec<DMatrix<f64>>,
}

impl Anholonomy {
    pub fn zeros(dim: usize) -> Self {
        Anholonomy {
            c: vec![DMatrix::zeros(dim, dim); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn get(&self, lambda: usize, mu: usize, nu: usize) -> f64 {
        self.c[lambda][(mu, nu)]
    }

    pub fn max_abs(&self) -> f64 {
        self.c.iter().map(|m| m.amax()).fold(0.0, f64::max)
    }
}

/// `E_σ(M) = E^ρ_σ ∂_ρ M` for every frame vector, given the partials `∂_ρ M`.
pub fn frame_derivatives(frame: &DMatrix<f64>, partials: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    (0..frame.ncols())
        .map(|sigma| {
            let mut acc = DMatrix::zeros(partials[0].nrows(), partials[0].ncols());
            for (rho, p) in partials.iter().enumerate() {
                let w = frame[(rho, sigma)];
                if w != 0.0 {
                    acc += p * w;
                }
            }
            acc
        })
        .collect()
}

/// Natural components of `[F, G]^ρ = F^σ ∂_σ G^ρ − G^σ ∂_σ F^ρ` at `x`.
pub fn bracket(
    f: &VectorField,
    g: &VectorField,
    x: &[f64],
    region: &Region,
    fd: &Fd,
) -> Result<DVector<f64>> {
    let fv = f.eval(x)?;
    let gv = g.eval(x)?;
    let g_along_f = fd.directional(|p| g.eval(p), x, fv.as_slice(), region)?;
    let f_along_g = fd.directional(|p| f.eval(p), x, gv.as_slice(), region)?;
    Ok(g_along_f - f_along_g)
}

/// Solves `[E_μ, E_ν] = C^λ_{μν} E_λ` using finite-difference commutators.
pub fn anholonomy(frame: &FrameField, x: &[f64], fd: &Fd) -> Result<Anholonomy> {
    let e = frame.eval(x)?;
    let m = frame.dim();
    let partials = fd.gradient(|p| frame.matrix().eval(p), x, frame.region())?;
    // d[μ] has column ν equal to E_μ(E_ν) in natural components.
    let d = frame_derivatives(&e, &partials);
    let lu = e.clone().lu();
    let mut out = Anholonomy::zeros(m);
    for mu in 0..m {
        for nu in (mu + 1)..m {
            let comm = d[mu].column(nu) - d[nu].column(mu);
            let c = lu.solve(&comm).ok_or(Error::SingularFrame { det: 0.0 })?;
            for lambda in 0..m {
                out.c[lambda][(mu, nu)] = c[lambda];
                out.c[lambda][(nu, mu)] = -c[lambda];
            }
        }
    }
    Ok(out)
}

/// `(Γ_X)^ν_μ = −E_μ(X^ν) − C^ν_{μλ} X^λ` (row ν, column μ), where `X` holds
/// the components of the vector field relative to `frame`. Satisfies
/// `L_X E_μ = (Γ_X)^ν_μ E_ν`.
pub fn lie_gamma(
    frame: &FrameField,
    x_comps: &VectorField,
    x: &[f64],
    fd: &Fd,
) -> Result<DMatrix<f64>> {
    let m = frame.dim();
    if x_comps.dim() != m {
        return Err(Error::dim("vector field and frame dimensions differ"));
    }
    let e = frame.eval(x)?;
    let c = anholonomy(frame, x, fd)?;
    let xv = x_comps.eval(x)?;
    let mut g = DMatrix::zeros(m, m);
    for mu in 0..m {
        let e_mu_x = fd.directional(
            |p| x_comps.eval(p),
            x,
            e.column(mu).as_slice(),
            frame.region(),
        )?;
        for nu in 0..m {
            let contraction: f64 = (0..m).map(|l| c.get(nu, mu, l) * xv[l]).sum();
            g[(nu, mu)] = -e_mu_x[nu] - contraction;
        }
    }
    Ok(g)
}

/// Components of the Lie derivative `L_X S` relative to `frame`.
pub fn lie_derivative(
    frame: &FrameField,
    x_comps: &VectorField,
    s: &TensorField,
    x: &[f64],
    fd: &Fd,
) -> Result<DVector<f64>> {
    let m = frame.dim();
    if s.dim() != m {
        return Err(Error::dim("tensor and frame dimensions differ"));
    }
    let e = frame.eval(x)?;
    let xv = x_comps.eval(x)?;
    let natural = &e * &xv;
    let mut out = fd.directional(|p| s.eval(p), x, natural.as_slice(), frame.region())?;
    if s.rank() == 0 {
        return Ok(out);
    }
    let gamma = lie_gamma(frame, x_comps, x, fd)?;
    let sv = s.eval(x)?;
    for flat in 0..sv.len() {
        let idx = s.multi_index(flat);
        let mut acc = 0.0;
        for slot in 0..s.rank() {
            let mut j = idx.clone();
            for lambda in 0..m {
                j[slot] = lambda;
                let comp = sv[s.flat_index(&j)];
                if slot < s.up() {
                    acc += gamma[(idx[slot], lambda)] * comp;
                } else {
                    acc -= gamma[(lambda, idx[slot])] * comp;
                }
            }
        }
        out[flat] += acc;
    }
    Ok(out)
}

/// Anholonomy of the changed frame `Ē_μ = B^ν_μ E_ν` from that of `E`:
/// `C̄^λ_{μν} = (B⁻¹)^λ_ρ (B^σ_μ E_σ(B^ρ_ν) − B^σ_ν E_σ(B^ρ_μ) + B^σ_μ B^τ_ν C^ρ_{στ})`.
///
/// `e_of_b[σ]` is `E_σ(B)`.
pub fn anholonomy_after_change(
    c: &Anholonomy,
    b: &DMatrix<f64>,
    e_of_b: &[DMatrix<f64>],
) -> Result<Anholonomy> {
    let m = c.dim();
    let b_inv = invert(b, |det| Error::SingularFrame { det })?;
    // d[μ] = B^σ_μ E_σ(B)
    let d = frame_derivatives(b, e_of_b);
    let mut out = Anholonomy::zeros(m);
    let mut raw = vec![DMatrix::zeros(m, m); m];
    for (rho, raw_rho) in raw.iter_mut().enumerate() {
        let sandwich = b.transpose() * &c.c[rho] * b;
        for mu in 0..m {
            for nu in 0..m {
                raw_rho[(mu, nu)] = d[mu][(rho, nu)] - d[nu][(rho, mu)] + sandwich[(mu, nu)];
            }
        }
    }
    for lambda in 0..m {
        for rho in 0..m {
            let w = b_inv[(lambda, rho)];
            out.c[lambda] += &raw[rho] * w;
        }
    }
    Ok(out)
}

/// `Γ̄_X = B⁻¹ (Γ_X B + X(B))` for the changed frame `Ē = E·B`.
pub fn lie_gamma_after_change(
    gamma_x: &DMatrix<f64>,
    b: &DMatrix<f64>,
    x_of_b: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let b_inv = invert(b, |det| Error::SingularFrame { det })?;
    Ok(b_inv * (gamma_x * b + x_of_b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{base_vars, MatrixField, ScalarField};

    fn frame(table: &[[&str; 2]; 2]) -> FrameField {
        let rows: Vec<Vec<&str>> = table.iter().map(|r| r.to_vec()).collect();
        let m = MatrixField::parse(&rows, &base_vars(2)).unwrap();
        FrameField::new(m, Region::unbounded(2)).unwrap()
    }

    fn vfield(comps: &[&str], n: usize) -> VectorField {
        VectorField::parse(comps, &base_vars(n)).unwrap()
    }

    #[test]
    fn holonomic_frame_has_no_anholonomy() {
        let f = FrameField::coordinate(Region::unbounded(3));
        let c = anholonomy(&f, &[0.3, -1.0, 2.0], &Fd::default()).unwrap();
        assert_eq!(c.max_abs(), 0.0);
    }

    #[test]
    fn anholonomy_of_scaled_frame() {
        // E1 = ∂x, E2 = x ∂y: [E1, E2] = ∂y = (1/x) E2.
        let f = frame(&[["1", "0"], ["0", "x1"]]);
        let c = anholonomy(&f, &[2.0, 0.7], &Fd::default()).unwrap();
        assert!((c.get(1, 0, 1) - 0.5).abs() < 1e-9);
        assert!((c.get(1, 1, 0) + 0.5).abs() < 1e-9);
        assert!(c.get(0, 0, 1).abs() < 1e-9);
    }

    #[test]
    fn anholonomy_antisymmetric() {
        let f = frame(&[["1 + x2^2", "sin(x1)"], ["x1*x2", "2 + cos(x2)"]]);
        let c = anholonomy(&f, &[0.4, 0.9], &Fd::default()).unwrap();
        for l in 0..2 {
            for m in 0..2 {
                for n in 0..2 {
                    assert!((c.get(l, m, n) + c.get(l, n, m)).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn lie_gamma_examples() {
        let fd = Fd::default();
        let f = FrameField::coordinate(Region::unbounded(2));
        let g = lie_gamma(
            &f,
            &VectorField::constant(&[1.0, -2.0], 2),
            &[0.1, 0.2],
            &fd,
        )
        .unwrap();
        assert_eq!(g.amax(), 0.0);

        let f1 = FrameField::coordinate(Region::unbounded(1));
        let g = lie_gamma(&f1, &vfield(&["x1"], 1), &[3.7], &fd).unwrap();
        assert!((g[(0, 0)] + 1.0).abs() < 1e-9);
    }

    /// `L_X E_μ` by brackets of natural fields versus the matrix `Γ_X`.
    #[test]
    fn lie_gamma_expands_lie_bracket() {
        let fd = Fd::default();
        let region = Region::unbounded(2);
        let f = frame(&[["1 + x2^2", "sin(x1)"], ["x1*x2", "2 + cos(x2)"]]);
        let xc = vfield(&["x1 - x2^2", "exp(x1/3)"], 2);
        let p = [0.4, 0.9];
        let gamma = lie_gamma(&f, &xc, &p, &fd).unwrap();
        let frame_m = f.matrix().clone();
        let frame_c = f.clone();
        let xc2 = xc.clone();
        let x_nat = VectorField::from_fn(2, 2, move |q| Ok(frame_c.eval(q)? * xc2.eval(q)?));
        let e = f.eval(&p).unwrap();
        for mu in 0..2 {
            let fm = frame_m.clone();
            let e_mu = VectorField::from_fn(2, 2, move |q| Ok(fm.eval(q)?.column(mu).into_owned()));
            let lie = bracket(&x_nat, &e_mu, &p, &region, &fd).unwrap();
            let expected = &e * gamma.column(mu);
            assert!((lie - expected).amax() < 1e-7);
        }
    }

    #[test]
    fn constant_change_conjugates_lie_gamma() {
        let fd = Fd::default();
        let f = frame(&[["1 + x2^2", "0.3"], ["x1*x2", "2 + cos(x2)"]]);
        let b = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, -1.0, 1.5]);
        let fb_m = {
            let fm = f.matrix().clone();
            let b = b.clone();
            MatrixField::from_fn(2, 2, 2, move |q| Ok(fm.eval(q)? * &b))
        };
        let fb = FrameField::new(fb_m, Region::unbounded(2)).unwrap();
        let xc = vfield(&["x1 - x2^2", "exp(x1/3)"], 2);
        let b_inv = b.clone().try_inverse().unwrap();
        let xbar = {
            let xc = xc.clone();
            VectorField::from_fn(2, 2, move |q| Ok(&b_inv * xc.eval(q)?))
        };
        let p = [0.2, -0.6];
        let g = lie_gamma(&f, &xc, &p, &fd).unwrap();
        let gbar = lie_gamma(&fb, &xbar, &p, &fd).unwrap();
        let predicted = lie_gamma_after_change(&g, &b, &DMatrix::zeros(2, 2)).unwrap();
        assert!((gbar - predicted).amax() < 1e-8);
    }

    #[test]
    fn lie_derivative_of_scalar_and_identity() {
        let fd = Fd::default();
        let f = frame(&[["1", "x2"], ["0", "1 + x1^2"]]);
        let xc = vfield(&["x2", "-x1"], 2);
        let p = [0.5, 0.25];
        let s = TensorField::new(
            0,
            0,
            2,
            vec![ScalarField::parse_base("x1^2 * x2", 2).unwrap()],
        )
        .unwrap();
        let ls = lie_derivative(&f, &xc, &s, &p, &fd).unwrap();
        let e = f.eval(&p).unwrap();
        let nat = &e * xc.eval(&p).unwrap();
        let direct = 2.0 * p[0] * p[1] * nat[0] + p[0] * p[0] * nat[1];
        assert!((ls[0] - direct).abs() < 1e-9);

        let delta = (0..4)
            .map(|i| ScalarField::constant(2, if i % 3 == 0 { 1.0 } else { 0.0 }))
            .collect();
        let id = TensorField::new(1, 1, 2, delta).unwrap();
        let lid = lie_derivative(&f, &xc, &id, &p, &fd).unwrap();
        assert!(lid.amax() < 1e-8);
    }

    /// `(L_X θ)(Y) = X(θ(Y)) − θ([X, Y])` in the coordinate frame.
    #[test]
    fn lie_derivative_of_one_form() {
        let fd = Fd::default();
        let region = Region::unbounded(2);
        let f = FrameField::coordinate(region.clone());
        let xc = vfield(&["sin(x2)", "x1*x2"], 2);
        let theta_src = ["x2^2", "exp(x1)"];
        let theta = TensorField::new(
            0,
            1,
            2,
            theta_src
                .iter()
                .map(|s| ScalarField::parse_base(s, 2).unwrap())
                .collect(),
        )
        .unwrap();
        let y = vfield(&["1 + x1", "cos(x1*x2)"], 2);
        let p = [0.3, 0.8];
        let l = lie_derivative(&f, &xc, &theta, &p, &fd).unwrap();
        let yv = y.eval(&p).unwrap();
        let lhs = l.dot(&yv);
        let th = theta.clone();
        let yy = y.clone();
        let pairing = move |q: &[f64]| Ok(th.eval(q)?.dot(&yy.eval(q)?));
        let xv = xc.eval(&p).unwrap();
        let x_of_pairing = fd.directional(pairing, &p, xv.as_slice(), &region).unwrap();
        let br = bracket(&xc, &y, &p, &region, &fd).unwrap();
        let rhs = x_of_pairing - theta.eval(&p).unwrap().dot(&br);
        assert!((lhs - rhs).abs() < 1e-7);
    }
}
