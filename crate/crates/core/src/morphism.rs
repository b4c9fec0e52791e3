//! Bundle morphisms, their Jacobi matrices and connection preservation.

use nalgebra::{DMatrix, DVector};

use crate::connection::{adapted_block, CoefficientField3, TwoIndexField};
use crate::fields::{base_vars, Fd, MatrixField, Region, ScalarField};
use crate::tolerances::FD_MAP_SECOND_REL;
use crate::{Error, Result};

/// A smooth map `f: ℝⁿ ⊇ region → ℝ^{n′}` given by components `f^{λ'}(x)`.
#[derive(Clone, Debug)]
pub struct BaseMap {
    comps: Vec<ScalarField>,
    region: Region,
}

impl BaseMap {
    pub fn new(comps: Vec<ScalarField>, region: Region) -> Result<Self> {
        if comps.iter().any(|c| c.arity() != region.dim()) {
            return Err(Error::dim(
                "base map components must be fields over the source base",
            ));
        }
        Ok(BaseMap { comps, region })
    }

    pub fn parse<T: AsRef<str>>(comps: &[T], region: Region) -> Result<Self> {
        let n = region.dim();
        let fields = comps
            .iter()
            .map(|s| ScalarField::parse_base(s.as_ref(), n))
            .collect::<Result<Vec<_>>>()?;
        Self::new(fields, region)
    }

    pub fn identity(region: Region) -> Self {
        let n = region.dim();
        let comps = (0..n)
            .map(|i| ScalarField::from_fn(n, move |x| Ok(x[i])))
            .collect();
        BaseMap { comps, region }
    }

    /// Source dimension.
    pub fn n(&self) -> usize {
        self.region.dim()
    }

    /// Target dimension.
    pub fn n_target(&self) -> usize {
        self.comps.len()
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.region.check(x)?;
        self.comps.iter().map(|c| c.eval(x)).collect()
    }

    fn apply_vec(&self, x: &[f64]) -> Result<DVector<f64>> {
        Ok(DVector::from_vec(self.apply(x)?))
    }

    /// `f^{λ'}_μ = ∂_μ f^{λ'}` as an n′×n matrix.
    pub fn jacobian(&self, x: &[f64], fd: &Fd) -> Result<DMatrix<f64>> {
        let cols = fd.gradient(|p| self.apply_vec(p), x, &self.region)?;
        Ok(DMatrix::from_columns(&cols))
    }

    /// `g ∘ self`.
    pub fn then(&self, g: &BaseMap) -> Result<BaseMap> {
        if g.n() != self.n_target() {
            return Err(Error::dim("composed base maps have mismatched dimensions"));
        }
        let n = self.n();
        let first = self.clone();
        let comps = (0..g.n_target())
            .map(|i| {
                let first = first.clone();
                let g = g.clone();
                ScalarField::from_fn(n, move |x| {
                    let y = first.apply(x)?;
                    g.region.check(&y)?;
                    g.comps[i].eval(&y)
                })
            })
            .collect();
        Ok(BaseMap {
            comps,
            region: self.region.clone(),
        })
    }
}

/// Fibre part of a bundle morphism.
#[derive(Clone, Debug)]
pub enum FibreMap {
    /// `F^{a'}(x, u)`: r′ fields over the n+r source bundle coordinates.
    General(Vec<ScalarField>),
    /// `F^{a'} = 𝓕^{a'}_b(x) u^b` with an r′×r matrix field over the base.
    Linear(MatrixField),
}

/// A morphism `(F, f)` between bundles `E → M` and `E′ → M′`; the base part
/// of `F` is always `f ∘ π`.
#[derive(Clone, Debug)]
pub struct BundleMorphism {
    base: BaseMap,
    r: usize,
    r_target: usize,
    fibre: FibreMap,
    region: Region,
}

impl BundleMorphism {
    /// `comps` are r′ fields over the n+r bundle coordinates; `fibre_region`
    /// bounds the u-coordinates.
    pub fn general(
        base: BaseMap,
        r: usize,
        comps: Vec<ScalarField>,
        fibre_region: Region,
    ) -> Result<Self> {
        let n = base.n();
        if fibre_region.dim() != r || comps.iter().any(|c| c.arity() != n + r) {
            return Err(Error::dim(
                "fibre components must be fields over the source bundle",
            ));
        }
        let region = base.region.product(&fibre_region);
        Ok(BundleMorphism {
            r,
            r_target: comps.len(),
            fibre: FibreMap::General(comps),
            region,
            base,
        })
    }

    pub fn parse_general<S: AsRef<str>, T: AsRef<str>>(
        base: &[S],
        fibre: &[T],
        region: Region,
        r: usize,
    ) -> Result<Self> {
        let n = region.dim();
        let base = BaseMap::parse(base, region)?;
        let comps = fibre
            .iter()
            .map(|s| ScalarField::parse_bundle(s.as_ref(), n, r))
            .collect::<Result<Vec<_>>>()?;
        Self::general(base, r, comps, Region::unbounded(r))
    }

    /// A vector-bundle morphism `F = 𝓕(x) u`.
    pub fn linear(base: BaseMap, matrix: MatrixField) -> Result<Self> {
        if matrix.arity() != base.n() {
            return Err(Error::dim(
                "fibre matrix must be a field over the source base",
            ));
        }
        let r = matrix.cols();
        let region = base.region.product(&Region::unbounded(r));
        Ok(BundleMorphism {
            r,
            r_target: matrix.rows(),
            fibre: FibreMap::Linear(matrix),
            region,
            base,
        })
    }

    pub fn parse_linear<S: AsRef<str>, T: AsRef<str>>(
        base: &[S],
        matrix: &[Vec<T>],
        region: Region,
    ) -> Result<Self> {
        let names = base_vars(region.dim());
        let base = BaseMap::parse(base, region)?;
        Self::linear(base, MatrixField::parse(matrix, &names)?)
    }

    pub fn identity(n: usize, r: usize) -> Self {
        Self::linear(
            BaseMap::identity(Region::unbounded(n)),
            MatrixField::identity(r, n),
        )
        .expect("consistent identity dimensions")
    }

    pub fn n(&self) -> usize {
        self.base.n()
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn n_target(&self) -> usize {
        self.base.n_target()
    }

    pub fn r_target(&self) -> usize {
        self.r_target
    }

    pub fn base(&self) -> &BaseMap {
        &self.base
    }

    pub fn fibre(&self) -> &FibreMap {
        &self.fibre
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    fn check_point(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.n() + self.r {
            return Err(Error::dim("bundle point has wrong dimension"));
        }
        self.region.check(p)
    }

    /// `𝓕(x)` of a vector-bundle morphism.
    pub fn fibre_matrix(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        match &self.fibre {
            FibreMap::Linear(m) => {
                self.base.region.check(x)?;
                m.eval(x)
            }
            FibreMap::General(_) => Err(Error::NotFibreLinear),
        }
    }

    /// Fibre components `F^{a'}(p)`.
    pub fn fibre_values(&self, p: &[f64]) -> Result<DVector<f64>> {
        self.check_point(p)?;
        let n = self.n();
        match &self.fibre {
            FibreMap::General(comps) => comps
                .iter()
                .map(|c| c.eval(p))
                .collect::<Result<Vec<_>>>()
                .map(DVector::from_vec),
            FibreMap::Linear(m) => Ok(m.eval(&p[..n])? * DVector::from_column_slice(&p[n..])),
        }
    }

    /// `F(p) = (f(π(p)), F^{a'}(p))`.
    pub fn apply(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.check_point(p)?;
        let mut out = self.base.apply(&p[..self.n()])?;
        out.extend(self.fibre_values(p)?.iter());
        Ok(out)
    }

    /// `second ∘ self`.
    pub fn then(&self, second: &BundleMorphism) -> Result<BundleMorphism> {
        if second.n() != self.n_target() || second.r != self.r_target {
            return Err(Error::dim("composed morphisms have mismatched dimensions"));
        }
        let base = self.base.then(&second.base)?;
        if let (FibreMap::Linear(_), FibreMap::Linear(_)) = (&self.fibre, &second.fibre) {
            let (first, second) = (self.clone(), second.clone());
            let matrix = MatrixField::from_fn(second.r_target, first.r, first.n(), move |x| {
                let y = first.base.apply(x)?;
                Ok(second.fibre_matrix(&y)? * first.fibre_matrix(x)?)
            });
            return Self::linear(base, matrix);
        }
        let comps = (0..second.r_target)
            .map(|i| {
                let (first, next) = (self.clone(), second.clone());
                ScalarField::from_fn(self.n() + self.r, move |p| {
                    Ok(next.fibre_values(&first.apply(p)?)?[i])
                })
            })
            .collect();
        Ok(BundleMorphism {
            r: self.r,
            r_target: second.r_target,
            fibre: FibreMap::General(comps),
            region: self.region.clone(),
            base,
        })
    }
}

/// `[[f^{ν'}_{,μ}, 0], [F^{a'}_{,μ}, F^{a'}_{,b}]]` by central differences;
/// the upper-right block is exactly zero.
pub fn jacobi_natural(m: &BundleMorphism, p: &[f64], fd: &Fd) -> Result<DMatrix<f64>> {
    m.check_point(p)?;
    let (n, r, nt, rt) = (m.n(), m.r(), m.n_target(), m.r_target());
    let mut out = DMatrix::zeros(nt + rt, n + r);
    out.view_mut((0, 0), (nt, n))
        .copy_from(&m.base.jacobian(&p[..n], fd)?);
    let cols = fd.gradient(|q| m.fibre_values(q), p, &m.region)?;
    for (j, c) in cols.iter().enumerate() {
        out.view_mut((nt, j), (rt, 1)).copy_from(c);
    }
    Ok(out)
}

/// The Jacobi matrix relative to adapted frames on both sides.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedJacobi {
    pub matrix: DMatrix<f64>,
    /// `F^{b'}_μ = X_μ(F^{b'}) − Γ'^{b'}_{λ'}(F(p)) f^{λ'}_μ`, an r′×n matrix.
    pub horizontal_defect: DMatrix<f64>,
}

/// `adapted⁻¹(target, F(p)) · jacobi_natural · adapted(source, p)`.
pub fn jacobi_adapted(
    m: &BundleMorphism,
    source: &TwoIndexField,
    target: &TwoIndexField,
    p: &[f64],
    fd: &Fd,
) -> Result<AdaptedJacobi> {
    if source.n() != m.n()
        || source.r() != m.r()
        || target.n() != m.n_target()
        || target.r() != m.r_target()
    {
        return Err(Error::dim(
            "connections do not match the morphism's bundles",
        ));
    }
    let j = jacobi_natural(m, p, fd)?;
    let src = adapted_block(&source.eval(p)?, 1.0);
    let tgt_inv = adapted_block(&target.eval(&m.apply(p)?)?, -1.0);
    let matrix = tgt_inv * j * src;
    let horizontal_defect = matrix
        .view((m.n_target(), 0), (m.r_target(), m.n()))
        .into_owned();
    Ok(AdaptedJacobi {
        matrix,
        horizontal_defect,
    })
}

/// Result of a connection-preservation test.
#[derive(Debug, Clone, PartialEq)]
pub struct PreservationReport {
    pub preserves: bool,
    pub max_abs: f64,
    pub worst: Option<usize>,
}

/// `F_*(Δ^h) ⊆ Δ′^h` iff `max |F^{b'}_μ| ≤ tol` over `points`.
pub fn preserves_connection(
    m: &BundleMorphism,
    source: &TwoIndexField,
    target: &TwoIndexField,
    points: &[Vec<f64>],
    tol: f64,
    fd: &Fd,
) -> Result<PreservationReport> {
    let mut max_abs = 0.0;
    let mut worst = None;
    for (i, p) in points.iter().enumerate() {
        let v = jacobi_adapted(m, source, target, p, fd)?
            .horizontal_defect
            .amax();
        if worst.is_none() || v > max_abs {
            max_abs = v;
            worst = Some(i);
        }
    }
    Ok(PreservationReport {
        preserves: max_abs <= tol,
        max_abs,
        worst,
    })
}

/// `F_{aμ} = ∂_μ𝓕 − 𝓕 Γ_μ + Σ_λ' Γ'_{λ'}(f(x)) 𝓕 f^{λ'}_μ`: one r′×r matrix
/// per μ with entry `(b', a)`.
pub fn vb_morphism_coeffs(
    m: &BundleMorphism,
    source: &CoefficientField3,
    target: &CoefficientField3,
    x: &[f64],
    fd: &Fd,
) -> Result<Vec<DMatrix<f64>>> {
    if source.n() != m.n()
        || source.r() != m.r()
        || target.n() != m.n_target()
        || target.r() != m.r_target()
    {
        return Err(Error::dim(
            "connections do not match the morphism's bundles",
        ));
    }
    let cal = m.fibre_matrix(x)?;
    let d_cal = fd.gradient(|q| m.fibre_matrix(q), x, m.base.region())?;
    let gamma = source.eval(x)?;
    let jac = m.base.jacobian(x, fd)?;
    let gamma_t = target.eval(&m.base.apply(x)?)?;
    Ok((0..m.n())
        .map(|mu| {
            let mut out = &d_cal[mu] - &cal * &gamma[mu];
            for (lambda, gt) in gamma_t.iter().enumerate() {
                let w = jac[(lambda, mu)];
                if w != 0.0 {
                    out += gt * &cal * w;
                }
            }
            out
        })
        .collect())
}

/// `f^{λ'}_{μν} = ∂_ν f^{λ'}_μ − f^{λ'}_σ Γ^σ_{μν} + Γ'^{λ'}_{σ'τ'}(f(x)) f^{σ'}_μ f^{τ'}_ν`
/// for connections on the tangent bundles: one n×n matrix per λ′ with entry
/// `(μ, ν)`.
pub fn tangent_map_second_order(
    f: &BaseMap,
    source: &CoefficientField3,
    target: &CoefficientField3,
    x: &[f64],
    fd: &Fd,
) -> Result<Vec<DMatrix<f64>>> {
    let (n, nt) = (f.n(), f.n_target());
    if source.n() != n || source.r() != n || target.n() != nt || target.r() != nt {
        return Err(Error::dim(
            "tangent-bundle connections must match the base map",
        ));
    }
    let jac = f.jacobian(x, fd)?;
    let wide = Fd::with_first(FD_MAP_SECOND_REL);
    // d_jac[ν] = ∂_ν (f^{λ'}_μ), both levels at the wide step.
    let d_jac = wide.gradient(|q| f.jacobian(q, &wide), x, f.region())?;
    let gamma = source.eval(x)?;
    let gamma_t = target.eval(&f.apply(x)?)?;
    Ok((0..nt)
        .map(|l| {
            DMatrix::from_fn(n, n, |mu, nu| {
                let mut v = d_jac[nu][(l, mu)];
                for s in 0..n {
                    v -= jac[(l, s)] * gamma[nu][(s, mu)];
                }
                for (t, gt) in gamma_t.iter().enumerate() {
                    for s in 0..nt {
                        v += gt[(l, s)] * jac[(s, mu)] * jac[(t, nu)];
                    }
                }
                v
            })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::{self, PureGauge};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn gauge_pair() -> (
        BundleMorphism,
        TwoIndexField,
        TwoIndexField,
        CoefficientField3,
        CoefficientField3,
    ) {
        let pg = PureGauge::parse("x1*x2", Some(&["x2".into(), "x1".into()]), 2).unwrap();
        let pgc = pg.clone();
        let cal = MatrixField::from_fn(2, 2, 2, move |x| Ok(pgc.gauge(x)?.transpose()));
        let m = BundleMorphism::linear(BaseMap::identity(Region::unbounded(2)), cal).unwrap();
        let g3 = pg.connection();
        let zero = registry::flat(2, 2);
        (
            m,
            TwoIndexField::from_linear(&g3),
            TwoIndexField::from_linear(&zero),
            g3,
            zero,
        )
    }

    #[test]
    fn natural_jacobi_examples() {
        let fd = Fd::default();
        let id = BundleMorphism::identity(2, 3);
        let j = jacobi_natural(&id, &[0.3, -1.0, 2.0, 0.5, 4.0], &fd).unwrap();
        assert!((j - DMatrix::identity(5, 5)).amax() < 1e-9);

        let cal = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -0.5, 3.0]);
        let m = BundleMorphism::linear(
            BaseMap::identity(Region::unbounded(2)),
            MatrixField::constant(&cal, 2),
        )
        .unwrap();
        let j = jacobi_natural(&m, &[0.3, -1.0, 2.0, 0.5], &fd).unwrap();
        assert!((j.view((2, 2), (2, 2)) - &cal).amax() < 1e-9);
        assert!(j.view((2, 0), (2, 2)).amax() < 1e-9);

        let m = BundleMorphism::parse_general(
            &["x1^2", "sin(x2)", "x1*x2"],
            &["u3*exp(u1)"],
            Region::unbounded(2),
            1,
        )
        .unwrap();
        let j = jacobi_natural(&m, &[0.4, 0.9, 1.7], &fd).unwrap();
        assert_eq!(j.shape(), (4, 3));
        assert_eq!(j.view((0, 2), (3, 1)).amax(), 0.0);
        assert!((j[(3, 0)] - 1.7 * 0.4f64.exp()).abs() < 1e-8);
    }

    #[test]
    fn adapted_jacobi_examples() {
        let fd = Fd::default();
        let g2 = TwoIndexField::from_linear(&registry::sphere_lc());
        let id = BundleMorphism::identity(2, 2);
        let p = [1.0, 0.4, 0.7, -0.3];
        let a = jacobi_adapted(&id, &g2, &g2, &p, &fd).unwrap();
        assert!((a.matrix - DMatrix::identity(4, 4)).amax() < 1e-7);
        assert!(a.horizontal_defect.amax() < 1e-7);

        let zero = TwoIndexField::from_linear(&registry::flat(2, 2));
        let cal = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -0.5, 3.0]);
        let m = BundleMorphism::linear(
            BaseMap::identity(Region::unbounded(2)),
            MatrixField::constant(&cal, 2),
        )
        .unwrap();
        assert!(
            jacobi_adapted(&m, &zero, &zero, &p, &fd)
                .unwrap()
                .horizontal_defect
                .amax()
                < 1e-8
        );

        let (m, src, tgt, _, _) = gauge_pair();
        let a = jacobi_adapted(&m, &src, &tgt, &p, &fd).unwrap();
        assert!(a.horizontal_defect.amax() < 1e-6);
        assert_eq!(a.matrix.view((0, 2), (2, 2)).amax(), 0.0);
    }

    #[test]
    fn preservation_examples() {
        let fd = Fd::default();
        let pts: Vec<Vec<f64>> = (0..5)
            .map(|i| vec![PI / 4.0 + i as f64 * PI / 8.0, 0.2 * i as f64, 1.0, 0.5])
            .collect();
        let sphere = TwoIndexField::from_linear(&registry::sphere_lc());
        let zero = TwoIndexField::from_linear(&registry::flat(2, 2));
        let id = BundleMorphism::identity(2, 2);
        assert!(
            preserves_connection(&id, &sphere, &sphere, &pts, 1e-6, &fd)
                .unwrap()
                .preserves
        );
        let rep = preserves_connection(&id, &zero, &sphere, &pts, 1e-6, &fd).unwrap();
        assert!(!rep.preserves && rep.max_abs >= 0.1);
        let (m, src, tgt, _, _) = gauge_pair();
        assert!(
            preserves_connection(&m, &src, &tgt, &pts, 1e-6, &fd)
                .unwrap()
                .preserves
        );
    }

    #[test]
    fn vb_coefficient_examples() {
        let fd = Fd::default();
        let x = [0.6, -0.4];
        let zero = registry::flat(2, 2);
        let cal = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -0.5, 3.0]);
        let m = BundleMorphism::linear(
            BaseMap::identity(Region::unbounded(2)),
            MatrixField::constant(&cal, 2),
        )
        .unwrap();
        assert!(vb_morphism_coeffs(&m, &zero, &zero, &x, &fd)
            .unwrap()
            .iter()
            .all(|c| c.amax() == 0.0));

        let (m, _, _, g3, zero) = gauge_pair();
        assert!(vb_morphism_coeffs(&m, &g3, &zero, &x, &fd)
            .unwrap()
            .iter()
            .all(|c| c.amax() < 1e-6));

        let general =
            BundleMorphism::parse_general(&["x1"], &["u2^2"], Region::unbounded(1), 1).unwrap();
        assert!(matches!(
            vb_morphism_coeffs(
                &general,
                &registry::flat(1, 1),
                &registry::flat(1, 1),
                &[0.0],
                &fd
            ),
            Err(Error::NotFibreLinear)
        ));
    }

    #[test]
    fn vb_coefficients_contract_to_adapted_defect() {
        let fd = Fd::default();
        let src = CoefficientField3::parse(
            &[
                vec![vec!["x1*x2", "0.3"], vec!["sin(x2)", "-x1"]],
                vec![vec!["0.5", "cos(x1)"], vec!["x2^2", "0.1*x1"]],
            ],
            Region::unbounded(2),
        )
        .unwrap();
        // One-dimensional target fibre over a 3-dimensional base.
        let tgt = CoefficientField3::parse(
            &[vec![vec!["x3"]], vec![vec!["0.2*x2"]], vec![vec!["-x1*x3"]]],
            Region::unbounded(3),
        )
        .unwrap();
        let m = BundleMorphism::parse_linear(
            &["x1 + x2", "x1*x2", "sin(x1)"],
            &[vec!["cos(x2)", "x1^2"]],
            Region::unbounded(2),
        )
        .unwrap();
        let x = [0.4, -0.7];
        let coeffs = vb_morphism_coeffs(&m, &src, &tgt, &x, &fd).unwrap();
        for u in [[1.0, 0.0], [0.3, -2.0], [-1.5, 0.8]] {
            let p = [x[0], x[1], u[0], u[1]];
            let defect = jacobi_adapted(
                &m,
                &TwoIndexField::from_linear(&src),
                &TwoIndexField::from_linear(&tgt),
                &p,
                &fd,
            )
            .unwrap()
            .horizontal_defect;
            for mu in 0..2 {
                let v = &coeffs[mu] * DVector::from_column_slice(&u);
                assert!((v[0] - defect[(0, mu)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn second_order_examples() {
        let fd = Fd::default();
        let x = [0.3, 1.1];
        let sphere = registry::sphere_lc();
        let id = BaseMap::identity(sphere.region().clone());
        let v = tangent_map_second_order(&id, &sphere, &sphere, &x, &fd).unwrap();
        assert!(v.iter().all(|m| m.amax() < 1e-6));

        let zero = registry::flat(2, 2);
        let lin = BaseMap::parse(&["2*x1 - x2", "0.5*x1 + 3*x2"], Region::unbounded(2)).unwrap();
        let v = tangent_map_second_order(&lin, &zero, &zero, &x, &fd).unwrap();
        assert!(v.iter().all(|m| m.amax() < 1e-8));

        let quad = BaseMap::parse(&["x1^2 - x2^2", "2*x1*x2"], Region::unbounded(2)).unwrap();
        let v = tangent_map_second_order(&quad, &zero, &zero, &x, &fd).unwrap();
        let hess = [
            DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, -2.0]),
            DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 2.0, 0.0]),
        ];
        for (a, b) in v.iter().zip(&hess) {
            assert!((a - b).amax() < 1e-6);
        }
    }

    #[test]
    fn adapted_upper_right_block_is_zero() {
        let fd = Fd::default();
        let m = BundleMorphism::parse_general(
            &["x1 + x2^2", "x2"],
            &["u3*u4 + u1", "sin(u4)"],
            Region::unbounded(2),
            2,
        )
        .unwrap();
        let g2 = TwoIndexField::from_linear(&registry::sphere_lc());
        let p = [1.0, 0.2, 0.5, 0.3];
        let a = jacobi_adapted(&m, &g2, &g2, &p, &fd).unwrap();
        assert_eq!(a.matrix.view((0, 2), (2, 2)).amax(), 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn chain_rule(
            p in prop::array::uniform3(-1.0f64..1.0),
            k in -1.0f64..1.0,
        ) {
            let fd = Fd::default();
            let m1 = BundleMorphism::parse_general(
                &["x1 + 0.3*x2^2", "sin(x1) - x2"],
                &[format!("u3*cos(u1) + {k}*u2")],
                Region::unbounded(2),
                1,
            )
            .unwrap();
            let m2 = BundleMorphism::parse_linear(
                &["x1*x2", format!("x1 + {k}").as_str(), "exp(0.2*x2)"],
                &[vec!["1 + x1^2"], vec!["sin(x2)"]],
                Region::unbounded(2),
            )
            .unwrap();
            let composed = m1.then(&m2).unwrap();
            let j = jacobi_natural(&composed, &p, &fd).unwrap();
            let j1 = jacobi_natural(&m1, &p, &fd).unwrap();
            let j2 = jacobi_natural(&m2, &m1.apply(&p).unwrap(), &fd).unwrap();
            let chained = j2 * j1;
            prop_assert!((j - chained).amax() < 1e-6);
        }

        #[test]
        fn linear_composition_stays_linear(x in prop::array::uniform2(-1.0f64..1.0)) {
            let a = BundleMorphism::parse_linear(&["x2", "x1"], &[vec!["x1", "1"], vec!["0", "x2"]], Region::unbounded(2)).unwrap();
            let b = BundleMorphism::parse_linear(&["x1 + x2", "x1 - x2"], &[vec!["2", "x1"]], Region::unbounded(2)).unwrap();
            let c = a.then(&b).unwrap();
            prop_assert!(matches!(c.fibre(), FibreMap::Linear(_)));
            let y = a.base().apply(&x).unwrap();
            let expected = b.fibre_matrix(&y).unwrap() * a.fibre_matrix(&x).unwrap();
            prop_assert_eq!(c.fibre_matrix(&x).unwrap(), expected);
        }
    }
}
