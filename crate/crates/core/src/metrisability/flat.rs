//! Closed-form solutions of the prolonged system for the flat structure.
//!
//! With `Π = 0` the prolonged system is solved exactly by
//! `H(z) = u(z)^{-1} C (u(z)^{-1})^*`, where `C` is a constant hermitian 3x3
//! form and `u(z)` is unipotent with `(z1, z2)` in the first column below the
//! diagonal. The state is embedded in `H` as
//!
//! ```text
//!     [  h       conj(h2)   -conj(h1) ]
//! H = [  h2      -h_{2 2̄}    h_{2 1̄}  ]
//!     [ -h1       h_{1 2̄}   -h_{1 1̄}  ]
//! ```
//!
//! (verified term by term against the gauge form of the system; transport and
//! this closed form agree along arbitrary paths).

use super::{Hermitian2, MetrisabilityError, ProlongedState};
use crate::expr::{ChartPoint, Expression, VarIndex};
use crate::structure::HermitianMetricField;
use nalgebra::DMatrix;
use num_complex::Complex64;

/// Relative eigenvalue threshold for the rank of a hermitian form.
pub const RANK_EIG_TOL: f64 = 1e-10;

/// A constant hermitian form on C³.
#[derive(Clone, Copy, Debug)]
pub struct HermitianForm3 {
    c: [[Complex64; 3]; 3],
}

impl HermitianForm3 {
    /// Builds from the diagonal `[c11, c22, c33]` and the upper off-diagonal
    /// entries `[c12, c13, c23]`.
    pub fn new(diag: [f64; 3], off: [Complex64; 3]) -> HermitianForm3 {
        let d = |x: f64| Complex64::new(x, 0.0);
        HermitianForm3 {
            c: [
                [d(diag[0]), off[0], off[1]],
                [off[0].conj(), d(diag[1]), off[2]],
                [off[1].conj(), off[2].conj(), d(diag[2])],
            ],
        }
    }

    pub fn identity() -> HermitianForm3 {
        HermitianForm3::new([1.0, 1.0, 1.0], [Complex64::new(0.0, 0.0); 3])
    }

    pub fn diagonal(diag: [f64; 3]) -> HermitianForm3 {
        HermitianForm3::new(diag, [Complex64::new(0.0, 0.0); 3])
    }

    /// Validates hermiticity of a raw matrix.
    pub fn from_matrix(
        m: [[Complex64; 3]; 3],
        tolerance: f64,
    ) -> Result<HermitianForm3, MetrisabilityError> {
        let mut residual: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                residual = residual.max((m[i][j] - m[j][i].conj()).norm() / 2.0);
            }
        }
        if residual > tolerance {
            return Err(MetrisabilityError::NotHermitian { residual, tolerance });
        }
        let mut c = [[Complex64::new(0.0, 0.0); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                c[i][j] = (m[i][j] + m[j][i].conj()) / 2.0;
            }
        }
        Ok(HermitianForm3 { c })
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.c[i][j]
    }

    /// Rank by eigenvalue count: eigenvalues of magnitude above
    /// `RANK_EIG_TOL * max |eigenvalue|`.
    ///
    /// Computed through the real symmetric embedding `[[X, -Y], [Y, X]]` of
    /// `C = X + iY`, whose spectrum doubles that of `C`.
    pub fn rank(&self) -> usize {
        let mut m = DMatrix::<f64>::zeros(6, 6);
        for i in 0..3 {
            for j in 0..3 {
                m[(i, j)] = self.c[i][j].re;
                m[(i + 3, j + 3)] = self.c[i][j].re;
                m[(i, j + 3)] = -self.c[i][j].im;
                m[(i + 3, j)] = self.c[i][j].im;
            }
        }
        let eig = m.symmetric_eigen();
        let max_abs = eig.eigenvalues.iter().map(|x| x.abs()).fold(0.0f64, f64::max);
        if max_abs == 0.0 {
            return 0;
        }
        let count = eig
            .eigenvalues
            .iter()
            .filter(|x| x.abs() > RANK_EIG_TOL * max_abs)
            .count();
        ((count as f64) / 2.0).round() as usize
    }

    pub fn max_abs(&self) -> f64 {
        self.c
            .iter()
            .flatten()
            .map(|x| x.norm())
            .fold(0.0f64, f64::max)
    }
}

// H = u^{-1} C (u^{-1})^* with u^{-1} = I - N, N carrying (z1, z2) in the
// first column below the diagonal.
fn solution_matrix(c: &HermitianForm3, p: &ChartPoint) -> [[Complex64; 3]; 3] {
    let n = [Complex64::new(0.0, 0.0), p.z1, p.z2];
    let mut h = [[Complex64::new(0.0, 0.0); 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            h[a][b] = c.get(a, b) - n[a] * c.get(0, b) - c.get(a, 0) * n[b].conj()
                + n[a] * n[b].conj() * c.get(0, 0);
        }
    }
    h
}

/// The prolonged state of the flat-structure solution attached to `C`,
/// evaluated at a chart point.
pub fn solve_flat(c: &HermitianForm3, p: &ChartPoint) -> ProlongedState {
    let h = solution_matrix(c, p);
    ProlongedState::new(
        Hermitian2::new(-h[2][2].re, h[2][1], -h[1][1].re),
        [-h[2][0], h[1][0]],
        h[0][0].re,
    )
}

/// The compatible metric family of the flat structure as a symbolic field:
/// `g = hmat(z) · det(hmat(z))^{-2}` with `hmat` drawn from the solution
/// attached to `C`. Degeneracies of `C` surface pointwise when evaluating.
pub fn flat_metric_field(c: &HermitianForm3) -> HermitianMetricField {
    let zero = Expression::zero();
    let n = [
        zero.clone(),
        Expression::var(VarIndex::Z1),
        Expression::var(VarIndex::Z2),
    ];
    let entry = |a: usize, b: usize| -> Expression {
        let cab = Expression::constant(c.get(a, b));
        let c0b = Expression::constant(c.get(0, b));
        let ca0 = Expression::constant(c.get(a, 0));
        let c00 = Expression::constant(c.get(0, 0));
        cab.sub(&n[a].mul(&c0b))
            .sub(&ca0.mul(&n[b].conj()))
            .add(&n[a].mul(&n[b].conj()).mul(&c00))
    };
    let h11 = entry(2, 2).neg();
    let h12 = entry(2, 1);
    let h22 = entry(1, 1).neg();
    let det = h11.mul(&h22).sub(&h12.mul(&h12.conj()));
    let det2 = det.mul(&det);
    HermitianMetricField::new(h11.div(&det2), h12.div(&det2), h22.div(&det2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrisability::transport::{transport, ChartPath};
    use crate::metrisability::{metric_from_h, verify_compatibility};
    use crate::structure::{sample_grid, ProjectiveStructure};

    fn cp(r: [f64; 4]) -> ChartPoint {
        ChartPoint::from_reals(r)
    }

    #[test]
    fn identity_form_at_origin() {
        let s = solve_flat(&HermitianForm3::identity(), &cp([0.0; 4]));
        assert_eq!(s.hscal, 1.0);
        assert_eq!(s.hvec, [Complex64::new(0.0, 0.0); 2]);
        assert_eq!(s.hmat.coords(), [-1.0, 0.0, 0.0, -1.0]);
    }

    #[test]
    fn identity_form_at_unit_point() {
        // At z = (1, 0): H = [[1,-1,0],[-1,2,0],[0,0,1]].
        let s = solve_flat(&HermitianForm3::identity(), &cp([1.0, 0.0, 0.0, 0.0]));
        assert_eq!(s.hscal, 1.0);
        assert_eq!(s.hvec[0], Complex64::new(0.0, 0.0));
        assert_eq!(s.hvec[1], Complex64::new(-1.0, 0.0));
        assert_eq!(s.hmat.coords(), [-1.0, 0.0, 0.0, -2.0]);
    }

    #[test]
    fn rank_one_form_gives_degenerate_block() {
        let c = HermitianForm3::diagonal([1.0, 0.0, 0.0]);
        assert_eq!(c.rank(), 1);
        let s = solve_flat(&c, &cp([0.0; 4]));
        assert_eq!(s.hmat.coords(), [0.0; 4]);
        assert!(metric_from_h(&s.hmat).is_err());
    }

    #[test]
    fn rank_counting() {
        assert_eq!(HermitianForm3::identity().rank(), 3);
        assert_eq!(HermitianForm3::diagonal([1.0, 1.0, 0.0]).rank(), 2);
        assert_eq!(HermitianForm3::diagonal([0.0, 0.0, 0.0]).rank(), 0);
        let c = HermitianForm3::new(
            [1.0, 1.0, 2.0],
            [
                Complex64::new(0.0, 1.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(0.0, 0.0),
            ],
        );
        // upper 2x2 block [[1, i], [-i, 1]] is singular, third axis independent
        assert_eq!(c.rank(), 2);
    }

    #[test]
    fn negative_identity_reproduces_fubini_study() {
        let c = HermitianForm3::diagonal([-1.0, -1.0, -1.0]);
        let g = flat_metric_field(&c);
        let fs = crate::structure::HermitianMetricField::fubini_study();
        for p in sample_grid(3, 0.8) {
            let a = g.eval_matrix(&p).unwrap();
            let b = fs.eval_matrix(&p).unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    assert!((a[i][j] - b[i][j]).norm() < 1e-12, "g_{i}{j} at {p}");
                }
            }
        }
    }

    #[test]
    fn flat_metric_field_matches_pointwise_reconstruction() {
        let c = HermitianForm3::new(
            [1.5, -0.7, 1.1],
            [
                Complex64::new(0.2, -0.4),
                Complex64::new(-0.1, 0.3),
                Complex64::new(0.5, 0.2),
            ],
        );
        let g = flat_metric_field(&c);
        for p in sample_grid(2, 0.6) {
            let s = solve_flat(&c, &p);
            if s.hmat.det().abs() < 1e-9 {
                continue;
            }
            let gv = metric_from_h(&s.hmat).unwrap();
            let ge = g.eval_matrix(&p).unwrap();
            assert!((gv.get(0, 0) - ge[0][0]).norm() < 1e-10);
            assert!((gv.get(0, 1) - ge[0][1]).norm() < 1e-10);
            assert!((gv.get(1, 1) - ge[1][1]).norm() < 1e-10);
        }
    }

    #[test]
    fn flat_metrics_are_compatible_with_the_flat_structure() {
        let c = HermitianForm3::new(
            [2.0, 1.0, 1.5],
            [
                Complex64::new(0.3, 0.1),
                Complex64::new(-0.2, 0.2),
                Complex64::new(0.1, -0.3),
            ],
        );
        let g = flat_metric_field(&c);
        let samples = sample_grid(3, 0.7);
        let report = verify_compatibility(&ProjectiveStructure::flat(), &g, &samples).unwrap();
        assert!(report.residual < 1e-9, "residual = {:e}", report.residual);
    }

    #[test]
    fn closed_form_agrees_with_transport() {
        // Independent dual route: RK4 integration of the gauge system versus
        // the algebraic solution at the endpoint.
        let c = HermitianForm3::new(
            [1.0, 0.6, -0.8],
            [
                Complex64::new(0.4, 0.2),
                Complex64::new(-0.3, 0.5),
                Complex64::new(0.2, -0.6),
            ],
        );
        let path = ChartPath::polyline(vec![
            cp([0.0, 0.0, 0.0, 0.0]),
            cp([0.5, -0.2, 0.1, 0.3]),
            cp([1.0, 0.0, -0.4, 0.2]),
        ])
        .unwrap();
        let (start, end) = path.endpoints().unwrap();
        let s0 = solve_flat(&c, &start);
        let expect = solve_flat(&c, &end);
        let got = transport(&ProjectiveStructure::flat(), &s0, &path, 1000).unwrap();
        for (a, b) in got.coords().iter().zip(expect.coords()) {
            assert!((a - b).abs() < 1e-10, "transport {a} vs closed form {b}");
        }
    }
}
