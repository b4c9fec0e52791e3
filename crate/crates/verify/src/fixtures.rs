//! Deterministic random fixtures: smooth coefficient fields, frame changes
//! and sample points built from expression strings.

use bundlecalc::connection::{AffineCoefficients, CoefficientField3, FrameChange, TwoIndexField};
use bundlecalc::fields::{base_vars, bundle_vars, MatrixField, Region};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seeded generator for reproducible fixtures.
pub struct FixtureRng(ChaCha8Rng);

impl FixtureRng {
    pub fn new(seed: u64) -> Self {
        FixtureRng(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.0.gen_range(lo..hi)
    }

    pub fn point(&mut self, dim: usize, half_width: f64) -> Vec<f64> {
        (0..dim)
            .map(|_| self.uniform(-half_width, half_width))
            .collect()
    }

    fn coeff(&mut self, scale: f64) -> String {
        format!("{:.6}", self.uniform(-scale, scale))
    }

    /// A smooth scalar expression in `vars` with coefficients of size `scale`.
    pub fn smooth_expr(&mut self, vars: &[String], scale: f64) -> String {
        let pick = |rng: &mut Self| vars[rng.0.gen_range(0..vars.len())].clone();
        let a = pick(self);
        let b = pick(self);
        let c = pick(self);
        format!(
            "{} + {}*{a} + {}*sin({b}) + {}*{a}*{c} + {}*cos(0.5*{c})",
            self.coeff(scale),
            self.coeff(scale),
            self.coeff(scale),
            self.coeff(scale),
            self.coeff(scale),
        )
    }

    /// A random smooth 3-index coefficient field on an unbounded base.
    pub fn three_index(&mut self, n: usize, r: usize, scale: f64) -> CoefficientField3 {
        let vars = base_vars(n);
        let tables: Vec<Vec<Vec<String>>> = (0..n)
            .map(|_| {
                (0..r)
                    .map(|_| (0..r).map(|_| self.smooth_expr(&vars, scale)).collect())
                    .collect()
            })
            .collect();
        CoefficientField3::parse(&tables, Region::unbounded(n)).expect("fixture parses")
    }

    /// A random inhomogeneous part `G` (r×n over the base).
    pub fn inhomogeneous(&mut self, n: usize, r: usize, scale: f64) -> MatrixField {
        let vars = base_vars(n);
        let table: Vec<Vec<String>> = (0..r)
            .map(|_| (0..n).map(|_| self.smooth_expr(&vars, scale)).collect())
            .collect();
        MatrixField::parse(&table, &vars).expect("fixture parses")
    }

    pub fn affine(&mut self, n: usize, r: usize, scale: f64) -> AffineCoefficients {
        let linear = self.three_index(n, r, scale);
        AffineCoefficients::new(linear, self.inhomogeneous(n, r, scale))
            .expect("consistent fixture")
    }

    /// A general 2-index field, nonlinear in the fibre coordinates.
    pub fn two_index(&mut self, n: usize, r: usize, scale: f64) -> TwoIndexField {
        let vars = bundle_vars(n, r);
        let table: Vec<Vec<String>> = (0..r)
            .map(|_| (0..n).map(|_| self.smooth_expr(&vars, scale)).collect())
            .collect();
        TwoIndexField::parse(n, r, &table, Region::unbounded(n + r)).expect("fixture parses")
    }

    /// `1 + εM(x)` with smooth entries; invertible for `|x|` of order one
    /// when `scale` is small.
    pub fn near_identity(&mut self, m: usize, arity: usize, scale: f64) -> MatrixField {
        let vars = base_vars(arity);
        let table: Vec<Vec<String>> = (0..m)
            .map(|i| {
                (0..m)
                    .map(|j| {
                        let e = self.smooth_expr(&vars, scale);
                        if i == j {
                            format!("1 + {e}")
                        } else {
                            e
                        }
                    })
                    .collect()
            })
            .collect();
        MatrixField::parse(&table, &vars).expect("fixture parses")
    }

    pub fn frame_change(&mut self, n: usize, r: usize, scale: f64) -> FrameChange {
        FrameChange::new(
            self.near_identity(n, n, scale),
            self.near_identity(r, n, scale),
        )
        .expect("consistent fixture")
    }
}
