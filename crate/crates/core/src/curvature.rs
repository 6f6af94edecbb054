//! Curvature invariants of a projective structure in the coordinate gauge.
//!
//! In gauge the invariants reduce to Wirtinger derivatives of the structure
//! components and of the lowered invariants:
//!
//! * Weyl: `W^i_{kl j̄} = -∂ Π^i_{kl} / ∂ conj(z^j)`;
//! * K: `K_{ik j̄} = -∂ Π_{ik} / ∂ conj(z^j)`;
//! * Liouville: `L_i = ∂_1 Π_{i2} - ∂_2 Π_{i1} + Π_{k1} Π^k_{i2} - Π_{k2} Π^k_{i1}`.
//!
//! Coefficient extraction uses the ordered form basis `dz¹∧dz²`,
//! `dz^l ∧ conj(dz^j)` throughout.

use crate::expr::{ChartPoint, EvalError, Expression, VarIndex};
use crate::structure::{pi_lower, sym, LoweredPi, ProjectiveStructure};
use num_complex::Complex64;

/// Default sup-norm tolerance below which a curvature quantity counts as zero.
pub const VANISH_TOL: f64 = 1e-9;
/// Guard tolerance for the structural Weyl identities (symmetry, trace).
pub const WEYL_IDENTITY_TOL: f64 = 1e-12;
/// Guard tolerance for the K symmetry identity.
pub const K_SYMMETRY_TOL: f64 = 1e-10;

#[derive(Clone, Debug, thiserror::Error)]
pub enum CurvatureError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("Weyl trace identity violated: residual {residual:e} exceeds {WEYL_IDENTITY_TOL:e}")]
    WeylIdentityBreach { residual: f64 },
    #[error("K symmetry identity violated: residual {residual:e} exceeds {K_SYMMETRY_TOL:e}")]
    KSymmetryBreach { residual: f64 },
    #[error("no sample point could be evaluated")]
    NoUsableSamples,
}

/// Weyl curvature components `W^i_{kl j̄}` at a point, symmetric in `(k,l)` by
/// storage.
#[derive(Clone, Copy, Debug)]
pub struct WeylAtPoint {
    w: [[[Complex64; 2]; 3]; 2],
}

impl WeylAtPoint {
    pub fn zero() -> WeylAtPoint {
        WeylAtPoint { w: [[[Complex64::new(0.0, 0.0); 2]; 3]; 2] }
    }

    /// `W^i_{kl j̄}` with 0-based slots.
    pub fn get(&self, i: usize, k: usize, l: usize, jbar: usize) -> Complex64 {
        self.w[i][sym(k, l)][jbar]
    }

    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..2 {
            for s in 0..3 {
                for j in 0..2 {
                    m = m.max(self.w[i][s][j].norm());
                }
            }
        }
        m
    }

    /// Residual of the trace identity `W^l_{l k j̄} = 0`.
    pub fn trace_residual(&self) -> f64 {
        let mut m: f64 = 0.0;
        for k in 0..2 {
            for j in 0..2 {
                m = m.max((self.get(0, 0, k, j) + self.get(1, 1, k, j)).norm());
            }
        }
        m
    }
}

/// Components `K_{ik j̄}` at a point; both `(i,k)` orders are evaluated so the
/// symmetry identity can be checked rather than assumed.
#[derive(Clone, Copy, Debug)]
pub struct KAtPoint {
    k: [[[Complex64; 2]; 2]; 2],
}

impl KAtPoint {
    /// `K_{ik j̄}` with 0-based slots.
    pub fn get(&self, i: usize, k: usize, jbar: usize) -> Complex64 {
        self.k[i][k][jbar]
    }

    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..2 {
            for k in 0..2 {
                for j in 0..2 {
                    m = m.max(self.k[i][k][j].norm());
                }
            }
        }
        m
    }

    /// Residual of `K_{ik j̄} = K_{ki j̄}`.
    pub fn symmetry_residual(&self) -> f64 {
        let mut m: f64 = 0.0;
        for j in 0..2 {
            m = m.max((self.k[0][1][j] - self.k[1][0][j]).norm());
        }
        m
    }
}

/// Liouville curvature `(L1, L2)` at a point.
#[derive(Clone, Copy, Debug)]
pub struct LiouvilleAtPoint {
    pub l1: Complex64,
    pub l2: Complex64,
}

impl LiouvilleAtPoint {
    pub fn max_abs(&self) -> f64 {
        self.l1.norm().max(self.l2.norm())
    }
}

/// Symbolic curvature fields of a projective structure, differentiated once
/// and then evaluated pointwise. Build it once when sweeping many points.
#[derive(Clone, Debug)]
pub struct Curvature {
    w: [[[Expression; 2]; 3]; 2],
    k: [[[Expression; 2]; 2]; 2],
    l: [Expression; 2],
}

impl Curvature {
    pub fn new(pi: &ProjectiveStructure) -> Curvature {
        let zero = Expression::zero;
        let mut w: [[[Expression; 2]; 3]; 2] = [
            [[zero(), zero()], [zero(), zero()], [zero(), zero()]],
            [[zero(), zero()], [zero(), zero()], [zero(), zero()]],
        ];
        for i in 0..2 {
            for (k, l) in [(0, 0), (0, 1), (1, 1)] {
                for jbar in 0..2 {
                    w[i][sym(k, l)][jbar] = pi
                        .component(i, k, l)
                        .wirtinger(VarIndex::from_slot(jbar), true)
                        .neg();
                }
            }
        }

        let lowered = pi_lower(pi);
        let mut k: [[[Expression; 2]; 2]; 2] = [
            [[zero(), zero()], [zero(), zero()]],
            [[zero(), zero()], [zero(), zero()]],
        ];
        for i in 0..2 {
            for kk in 0..2 {
                for jbar in 0..2 {
                    k[i][kk][jbar] = lowered
                        .component(i, kk)
                        .wirtinger(VarIndex::from_slot(jbar), true)
                        .neg();
                }
            }
        }

        let l = [liouville_expr(pi, &lowered, 0), liouville_expr(pi, &lowered, 1)];
        Curvature { w, k, l }
    }

    pub fn weyl_at(&self, p: &ChartPoint) -> Result<WeylAtPoint, CurvatureError> {
        let mut out = WeylAtPoint::zero();
        for i in 0..2 {
            for s in 0..3 {
                for j in 0..2 {
                    out.w[i][s][j] = self.w[i][s][j].eval(p)?;
                }
            }
        }
        let residual = out.trace_residual();
        if residual > WEYL_IDENTITY_TOL {
            return Err(CurvatureError::WeylIdentityBreach { residual });
        }
        Ok(out)
    }

    pub fn k_at(&self, p: &ChartPoint) -> Result<KAtPoint, CurvatureError> {
        let mut out = KAtPoint { k: [[[Complex64::new(0.0, 0.0); 2]; 2]; 2] };
        for i in 0..2 {
            for kk in 0..2 {
                for j in 0..2 {
                    out.k[i][kk][j] = self.k[i][kk][j].eval(p)?;
                }
            }
        }
        let residual = out.symmetry_residual();
        if residual > K_SYMMETRY_TOL {
            return Err(CurvatureError::KSymmetryBreach { residual });
        }
        Ok(out)
    }

    pub fn liouville_at(&self, p: &ChartPoint) -> Result<LiouvilleAtPoint, CurvatureError> {
        Ok(LiouvilleAtPoint { l1: self.l[0].eval(p)?, l2: self.l[1].eval(p)? })
    }
}

// (2,0) coefficient of the lowered curvature in the ordered basis dz¹∧dz².
fn liouville_expr(pi: &ProjectiveStructure, lowered: &LoweredPi, i: usize) -> Expression {
    let d1 = lowered.component(i, 1).wirtinger(VarIndex::Z1, false);
    let d2 = lowered.component(i, 0).wirtinger(VarIndex::Z2, false);
    let mut quad = Expression::zero();
    for k in 0..2 {
        quad = quad
            .add(&lowered.component(k, 0).mul(pi.component(k, i, 1)))
            .sub(&lowered.component(k, 1).mul(pi.component(k, i, 0)));
    }
    d1.sub(&d2).add(&quad)
}

/// Weyl curvature at a point. When evaluating many points, prefer building a
/// [`Curvature`] once.
pub fn weyl(pi: &ProjectiveStructure, p: &ChartPoint) -> Result<WeylAtPoint, CurvatureError> {
    Curvature::new(pi).weyl_at(p)
}

/// K tensor at a point.
pub fn k_tensor(pi: &ProjectiveStructure, p: &ChartPoint) -> Result<KAtPoint, CurvatureError> {
    Curvature::new(pi).k_at(p)
}

/// Liouville curvature at a point.
pub fn liouville(
    pi: &ProjectiveStructure,
    p: &ChartPoint,
) -> Result<LiouvilleAtPoint, CurvatureError> {
    Curvature::new(pi).liouville_at(p)
}

/// Flatness flags of a structure over a sample set.
#[derive(Clone, Debug)]
pub struct Classification {
    pub weyl_flat: bool,
    pub liouville_flat: bool,
    /// Both of the above; the structure is flat iff Weyl and Liouville vanish.
    pub flat: bool,
    pub weyl_sup: f64,
    pub liouville_sup: f64,
    pub tolerance: f64,
    /// Points evaluated successfully.
    pub evaluated: usize,
    /// Points skipped because evaluation hit a domain error.
    pub skipped: usize,
}

/// Classifies a structure by the sup norms of its Weyl and Liouville
/// curvature over `samples`. Sample points where evaluation fails are skipped
/// and counted.
pub fn classify(
    pi: &ProjectiveStructure,
    samples: &[ChartPoint],
    tolerance: f64,
) -> Result<Classification, CurvatureError> {
    let curv = Curvature::new(pi);
    let mut weyl_sup: f64 = 0.0;
    let mut liouville_sup: f64 = 0.0;
    let mut evaluated = 0usize;
    let mut skipped = 0usize;
    for p in samples {
        let w = match curv.weyl_at(p) {
            Ok(w) => w,
            Err(CurvatureError::Eval(_)) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let l = match curv.liouville_at(p) {
            Ok(l) => l,
            Err(CurvatureError::Eval(_)) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        evaluated += 1;
        weyl_sup = weyl_sup.max(w.max_abs());
        liouville_sup = liouville_sup.max(l.max_abs());
    }
    if evaluated == 0 {
        return Err(CurvatureError::NoUsableSamples);
    }
    let weyl_flat = weyl_sup < tolerance;
    let liouville_flat = liouville_sup < tolerance;
    Ok(Classification {
        weyl_flat,
        liouville_flat,
        flat: weyl_flat && liouville_flat,
        weyl_sup,
        liouville_sup,
        tolerance,
        evaluated,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::{default_grid, levi_civita, project, sample_grid, HermitianMetricField};

    fn pi_single(src: &str) -> ProjectiveStructure {
        let mut c = [
            [Expression::zero(), Expression::zero(), Expression::zero()],
            [Expression::zero(), Expression::zero(), Expression::zero()],
        ];
        c[0][sym(1, 1)] = Expression::parse(src).unwrap();
        ProjectiveStructure::from_components_default(c).unwrap()
    }

    fn pts() -> Vec<ChartPoint> {
        sample_grid(3, 0.7)
    }

    #[test]
    fn flat_structure_has_no_curvature() {
        let pi = ProjectiveStructure::flat();
        let curv = Curvature::new(&pi);
        for p in pts() {
            assert_eq!(curv.weyl_at(&p).unwrap().max_abs(), 0.0);
            assert_eq!(curv.k_at(&p).unwrap().max_abs(), 0.0);
            assert_eq!(curv.liouville_at(&p).unwrap().max_abs(), 0.0);
        }
        let c = classify(&pi, &pts(), VANISH_TOL).unwrap();
        assert!(c.flat);
    }

    #[test]
    fn antiholomorphic_component_gives_constant_weyl() {
        // Π¹₂₂ = conj(z1): W¹₂₂ ₁̄ = -1, all other components 0, at every p.
        let pi = pi_single("conj(z1)");
        let curv = Curvature::new(&pi);
        for p in pts() {
            let w = curv.weyl_at(&p).unwrap();
            for i in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        for j in 0..2 {
                            let expect = if (i, k, l, j) == (0, 1, 1, 0) {
                                Complex64::new(-1.0, 0.0)
                            } else {
                                Complex64::new(0.0, 0.0)
                            };
                            assert_eq!(w.get(i, k, l, j), expect);
                        }
                    }
                }
            }
            // Lowered invariants vanish for this structure, so K = 0.
            assert_eq!(curv.k_at(&p).unwrap().max_abs(), 0.0);
        }
        let c = classify(&pi, &pts(), VANISH_TOL).unwrap();
        assert!(!c.weyl_flat);
    }

    #[test]
    fn holomorphic_structures_have_vanishing_weyl_and_k() {
        for src in ["z1^2", "z2^3-2*z1", "(1+i)*z1*z2"] {
            let pi = pi_single(src);
            let curv = Curvature::new(&pi);
            for p in pts() {
                assert_eq!(curv.weyl_at(&p).unwrap().max_abs(), 0.0, "W for {src}");
                assert!(curv.k_at(&p).unwrap().max_abs() < 1e-15, "K for {src}");
            }
        }
    }

    #[test]
    fn liouville_obstruction_of_square_component() {
        // Π¹₂₂ = (z¹)² -> (L1, L2) = (0, -2) at every point.
        let pi = pi_single("z1^2");
        let curv = Curvature::new(&pi);
        for p in pts() {
            let l = curv.liouville_at(&p).unwrap();
            assert!(l.l1.norm() < 1e-15);
            assert!((l.l2 + 2.0).norm() < 1e-14, "L2 at {p}: {}", l.l2);
        }
        let c = classify(&pi, &pts(), VANISH_TOL).unwrap();
        assert!(c.weyl_flat && !c.liouville_flat && !c.flat);
    }

    #[test]
    fn liouville_matches_finite_difference_oracle() {
        // Independent route: finite differences of the lowered invariants
        // plus the quadratic term, evaluated numerically.
        let structures = [pi_single("z1^2"), pi_single("z1^2*conj(z2)+z2")];
        let h = 1e-5;
        for pi in &structures {
            let lowered = pi_lower(pi);
            let curv = Curvature::new(pi);
            let low_at = |i: usize, j: usize, p: &ChartPoint| lowered.component(i, j).eval(p).unwrap();
            let d_holo = |i: usize, j: usize, slot: usize, p: &ChartPoint| {
                let mut rx1 = p.to_reals();
                let mut rx2 = p.to_reals();
                rx1[2 * slot] += h;
                rx2[2 * slot] -= h;
                let dx = (low_at(i, j, &ChartPoint::from_reals(rx1))
                    - low_at(i, j, &ChartPoint::from_reals(rx2)))
                    / (2.0 * h);
                let mut ry1 = p.to_reals();
                let mut ry2 = p.to_reals();
                ry1[2 * slot + 1] += h;
                ry2[2 * slot + 1] -= h;
                let dy = (low_at(i, j, &ChartPoint::from_reals(ry1))
                    - low_at(i, j, &ChartPoint::from_reals(ry2)))
                    / (2.0 * h);
                (dx - Complex64::new(0.0, 1.0) * dy) / 2.0
            };
            for p in sample_grid(2, 0.5) {
                for i in 0..2 {
                    let mut oracle = d_holo(i, 1, 0, &p) - d_holo(i, 0, 1, &p);
                    for k in 0..2 {
                        oracle += low_at(k, 0, &p) * pi.component(k, i, 1).eval(&p).unwrap()
                            - low_at(k, 1, &p) * pi.component(k, i, 0).eval(&p).unwrap();
                    }
                    let got = curv.liouville_at(&p).unwrap();
                    let got_i = if i == 0 { got.l1 } else { got.l2 };
                    assert!(
                        (got_i - oracle).norm() < 1e-8,
                        "L{} at {p}: {got_i} vs {oracle}",
                        i + 1
                    );
                }
            }
        }
    }

    #[test]
    fn k_symmetry_holds_on_mixed_structures() {
        let gamma = crate::structure::ChristoffelField::from_fn(|i, j, k| {
            // Arbitrary polynomial symbols mixing holomorphic and conjugated
            // variables.
            let srcs = [
                "z1*conj(z1)",
                "z2^2-conj(z2)",
                "(1-i)*z1*z2",
                "conj(z1)*conj(z2)",
                "z1+0.5*conj(z2)^2",
                "0.3*z2*conj(z1)",
            ];
            Expression::parse(srcs[(i * 3 + j + k) % srcs.len()]).unwrap()
        });
        let pi = project(&gamma);
        let curv = Curvature::new(&pi);
        for p in pts() {
            let k = curv.k_at(&p).unwrap();
            assert!(k.symmetry_residual() < 1e-12);
        }
    }

    #[test]
    fn weyl_identities_hold_on_projected_structures() {
        let g = HermitianMetricField::from_potential(
            &Expression::parse("z1*conj(z1)+z2*conj(z2)+0.2*z1^2*conj(z1)^2+0.1*z1*conj(z2)+0.1*z2*conj(z1)").unwrap(),
        );
        let pi = project(&levi_civita(&g, &pts()).unwrap());
        let curv = Curvature::new(&pi);
        for p in pts() {
            let w = curv.weyl_at(&p).unwrap();
            assert!(w.trace_residual() < 1e-13);
        }
    }

    #[test]
    fn fubini_study_classifies_flat() {
        let g = HermitianMetricField::fubini_study();
        let pi = project(&levi_civita(&g, &default_grid()).unwrap());
        let c = classify(&pi, &default_grid(), VANISH_TOL).unwrap();
        assert!(c.flat, "weyl_sup={:e} liouville_sup={:e}", c.weyl_sup, c.liouville_sup);
    }

    #[test]
    fn classification_skips_singular_points_and_reports_them() {
        let mut c = [
            [Expression::zero(), Expression::zero(), Expression::zero()],
            [Expression::zero(), Expression::zero(), Expression::zero()],
        ];
        c[0][sym(1, 1)] = Expression::parse("conj(z1)/z1").unwrap();
        // Trace-free still; origin is singular.
        let samples: Vec<ChartPoint> = vec![
            ChartPoint::from_reals([0.0, 0.0, 0.0, 0.0]),
            ChartPoint::from_reals([0.5, 0.0, 0.0, 0.0]),
        ];
        let pi = ProjectiveStructure::from_components(c, &samples, 1e9).unwrap();
        let cls = classify(&pi, &samples, VANISH_TOL).unwrap();
        assert_eq!(cls.evaluated, 1);
        assert_eq!(cls.skipped, 1);
    }
}
