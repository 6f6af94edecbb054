//! Kähler metrisability analysis.
//!
//! A compatible (pseudo-)Kähler metric corresponds, through the substitution
//! `h = g · det(g)^{-2/3}`, to a nondegenerate parallel section of a linear
//! connection on a 9-real-dimensional prolonged state `(h_{i j̄}, h_i, h)`.
//! This module provides the transform in both directions, the pointwise
//! algebraic obstruction imposed by the Weyl curvature, numeric parallel
//! transport of the prolonged system with holonomy probes, the closed-form
//! solution family of the flat structure, and the orchestrating `metrise`
//! pipeline.

use crate::curvature::{CurvatureError, WeylAtPoint};
use crate::expr::{ChartPoint, EvalError};
use crate::structure::{levi_civita, project, HermitianMetricField, ProjectiveStructure, StructureError};
use nalgebra::DMatrix;
use num_complex::Complex64;

mod flat;
mod metrise;
mod transport;

pub use flat::{flat_metric_field, solve_flat, HermitianForm3};
pub use metrise::{
    default_probe_loops, metrise, CandidateReport, MetriseOptions, MetriseReport, ObstructionStage,
};
pub use transport::{
    holonomy_defect, holonomy_matrix, prolonged_rhs, transport, ChartPath, ProlongedRhs,
    Transporter, DEFAULT_TRANSPORT_STEPS,
};

/// Determinant magnitude below which a pointwise metric or `h` counts as
/// degenerate.
pub const DEGENERATE_TOL: f64 = 1e-12;
/// Relative singular-value threshold for the algebraic null space.
pub const NULLSPACE_REL_TOL: f64 = 1e-9;
/// Allowed hermiticity/reality drift during transport, relative to the state
/// magnitude.
pub const REALITY_TOL: f64 = 1e-9;

#[derive(Clone, Debug, thiserror::Error)]
pub enum MetrisabilityError {
    #[error("matrix is degenerate: |det| = {det:e} <= {tolerance:e}")]
    Degenerate { det: f64, tolerance: f64 },
    #[error("matrix is not hermitian: residual {residual:e} exceeds {tolerance:e}")]
    NotHermitian { residual: f64, tolerance: f64 },
    #[error("reality drift {drift:e} exceeds {tolerance:e} during transport")]
    RealityDrift { drift: f64, tolerance: f64 },
    #[error("path must contain at least one point")]
    EmptyPath,
    #[error("consecutive path points coincide")]
    RepeatedPathPoint,
    #[error("path point or velocity is not finite")]
    NonFinitePath,
    #[error("holonomy requires a closed loop (first point = last point)")]
    OpenLoop,
    #[error("basepoint is not among the samples")]
    BasepointNotInSamples,
    #[error("no sample point could be evaluated")]
    NoUsableSamples,
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Curvature(#[from] CurvatureError),
    #[error(transparent)]
    Structure(#[from] StructureError),
}

/// A 2x2 hermitian matrix `h_{i j̄}`: real diagonal, conjugate off-diagonal.
#[derive(Clone, Copy, Debug)]
pub struct Hermitian2 {
    m: [[Complex64; 2]; 2],
}

impl Hermitian2 {
    pub fn new(h11: f64, h12: Complex64, h22: f64) -> Hermitian2 {
        Hermitian2 {
            m: [
                [Complex64::new(h11, 0.0), h12],
                [h12.conj(), Complex64::new(h22, 0.0)],
            ],
        }
    }

    pub fn zero() -> Hermitian2 {
        Hermitian2::new(0.0, Complex64::new(0.0, 0.0), 0.0)
    }

    pub fn identity() -> Hermitian2 {
        Hermitian2::new(1.0, Complex64::new(0.0, 0.0), 1.0)
    }

    /// Validates hermiticity of a raw matrix and stores its hermitian part.
    pub fn from_matrix(m: [[Complex64; 2]; 2], tolerance: f64) -> Result<Hermitian2, MetrisabilityError> {
        let residual = m[0][0]
            .im
            .abs()
            .max(m[1][1].im.abs())
            .max((m[0][1] - m[1][0].conj()).norm());
        if residual > tolerance {
            return Err(MetrisabilityError::NotHermitian { residual, tolerance });
        }
        Ok(Hermitian2::new(
            m[0][0].re,
            (m[0][1] + m[1][0].conj()) / 2.0,
            m[1][1].re,
        ))
    }

    /// `h_{(i+1)(j̄+1)}` with 0-based slots.
    pub fn get(&self, i: usize, jbar: usize) -> Complex64 {
        self.m[i][jbar]
    }

    /// Real determinant `h_{1 1̄} h_{2 2̄} - |h_{1 2̄}|²`.
    pub fn det(&self) -> f64 {
        self.m[0][0].re * self.m[1][1].re - self.m[0][1].norm_sqr()
    }

    pub fn max_abs(&self) -> f64 {
        self.m[0][0]
            .norm()
            .max(self.m[0][1].norm())
            .max(self.m[1][1].norm())
    }

    pub fn scale(&self, s: f64) -> Hermitian2 {
        Hermitian2::new(s * self.m[0][0].re, s * self.m[0][1], s * self.m[1][1].re)
    }

    pub fn add(&self, o: &Hermitian2) -> Hermitian2 {
        Hermitian2::new(
            self.m[0][0].re + o.m[0][0].re,
            self.m[0][1] + o.m[0][1],
            self.m[1][1].re + o.m[1][1].re,
        )
    }

    /// Real coordinates `[h11, Re h12, Im h12, h22]`.
    pub fn coords(&self) -> [f64; 4] {
        [self.m[0][0].re, self.m[0][1].re, self.m[0][1].im, self.m[1][1].re]
    }

    pub fn from_coords(c: [f64; 4]) -> Hermitian2 {
        Hermitian2::new(c[0], Complex64::new(c[1], c[2]), c[3])
    }
}

/// State of the prolonged linear system: hermitian `h_{i j̄}`, complex
/// `(h_1, h_2)`, real `h` — 9 real dimensions.
#[derive(Clone, Copy, Debug)]
pub struct ProlongedState {
    pub hmat: Hermitian2,
    pub hvec: [Complex64; 2],
    pub hscal: f64,
}

impl ProlongedState {
    pub fn new(hmat: Hermitian2, hvec: [Complex64; 2], hscal: f64) -> ProlongedState {
        ProlongedState { hmat, hvec, hscal }
    }

    pub fn zero() -> ProlongedState {
        ProlongedState::new(Hermitian2::zero(), [Complex64::new(0.0, 0.0); 2], 0.0)
    }

    /// Real coordinates
    /// `[h11, Re h12, Im h12, h22, Re h1, Im h1, Re h2, Im h2, h]`.
    pub fn coords(&self) -> [f64; 9] {
        let m = self.hmat.coords();
        [
            m[0], m[1], m[2], m[3],
            self.hvec[0].re, self.hvec[0].im,
            self.hvec[1].re, self.hvec[1].im,
            self.hscal,
        ]
    }

    pub fn from_coords(c: [f64; 9]) -> ProlongedState {
        ProlongedState::new(
            Hermitian2::from_coords([c[0], c[1], c[2], c[3]]),
            [Complex64::new(c[4], c[5]), Complex64::new(c[6], c[7])],
            c[8],
        )
    }

    /// The `idx`-th coordinate basis state, `idx < 9`.
    pub fn basis(idx: usize) -> ProlongedState {
        let mut c = [0.0; 9];
        c[idx] = 1.0;
        ProlongedState::from_coords(c)
    }

    pub fn max_abs(&self) -> f64 {
        self.hmat
            .max_abs()
            .max(self.hvec[0].norm())
            .max(self.hvec[1].norm())
            .max(self.hscal.abs())
    }

    pub fn scale(&self, s: f64) -> ProlongedState {
        ProlongedState::new(
            self.hmat.scale(s),
            [s * self.hvec[0], s * self.hvec[1]],
            s * self.hscal,
        )
    }

    pub fn add(&self, o: &ProlongedState) -> ProlongedState {
        ProlongedState::new(
            self.hmat.add(&o.hmat),
            [self.hvec[0] + o.hvec[0], self.hvec[1] + o.hvec[1]],
            self.hscal + o.hscal,
        )
    }
}

/// The h-transform of a metric at a point:
/// `h = g(p) · (real cbrt det g(p))^{-2}`.
///
/// The real cube root keeps the scale factor positive for pseudo-Kähler
/// metrics with negative determinant.
pub fn h_from_metric(
    g: &HermitianMetricField,
    p: &ChartPoint,
) -> Result<Hermitian2, MetrisabilityError> {
    let m = g.eval_matrix(p)?;
    let herm_tol = 1e-9 * m.iter().flatten().map(|c| c.norm()).fold(1.0f64, f64::max);
    let h = Hermitian2::from_matrix(m, herm_tol)?;
    let det = h.det();
    if det.abs() <= DEGENERATE_TOL {
        return Err(MetrisabilityError::Degenerate { det: det.abs(), tolerance: DEGENERATE_TOL });
    }
    let cbrt = det.cbrt();
    Ok(h.scale(1.0 / (cbrt * cbrt)))
}

/// Inverse transform at a point: `g = h · (det h)^{-2}`.
pub fn metric_from_h(h: &Hermitian2) -> Result<Hermitian2, MetrisabilityError> {
    let det = h.det();
    if det.abs() <= DEGENERATE_TOL {
        return Err(MetrisabilityError::Degenerate { det: det.abs(), tolerance: DEGENERATE_TOL });
    }
    Ok(h.scale(1.0 / (det * det)))
}

/// Pointwise algebraic obstruction residual: the largest violation, over the
/// 16 index choices, of
/// `conj(h_{j s̄}) W^s_{ik l̄} + conj(h_{l s̄}) W^s_{ik j̄}
///  = h_{k s̄} conj(W^s_{jl ī}) + h_{i s̄} conj(W^s_{jl k̄})`.
pub fn weyl_obstruction_residual(w: &WeylAtPoint, h: &Hermitian2) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..2 {
        for k in 0..2 {
            for j in 0..2 {
                for l in 0..2 {
                    worst = worst.max(obstruction_entry(w, h, i, k, j, l).norm());
                }
            }
        }
    }
    worst
}

fn obstruction_entry(
    w: &WeylAtPoint,
    h: &Hermitian2,
    i: usize,
    k: usize,
    j: usize,
    l: usize,
) -> Complex64 {
    let mut t = Complex64::new(0.0, 0.0);
    for s in 0..2 {
        t += h.get(j, s).conj() * w.get(s, i, k, l);
        t += h.get(l, s).conj() * w.get(s, i, k, j);
        t -= h.get(k, s) * w.get(s, j, l, i).conj();
        t -= h.get(i, s) * w.get(s, j, l, k).conj();
    }
    t
}

/// Basis of the hermitian solutions of the algebraic obstruction, stacked
/// over the supplied Weyl values.
#[derive(Clone, Debug)]
pub struct ObstructionSpace {
    /// Real dimension of the solution space, 0 to 4.
    pub dimension: usize,
    /// Orthonormal basis of the solution space.
    pub basis: Vec<Hermitian2>,
    /// Singular values of the stacked constraint matrix (4 entries).
    pub singular_values: Vec<f64>,
}

/// Solves the algebraic obstruction over the 4-real-dimensional space of
/// hermitian 2x2 matrices, stacked over all supplied Weyl values. With no
/// constraints the full space is returned.
pub fn obstruction_solution_space(weyls: &[WeylAtPoint]) -> ObstructionSpace {
    let basis: [Hermitian2; 4] = [
        Hermitian2::from_coords([1.0, 0.0, 0.0, 0.0]),
        Hermitian2::from_coords([0.0, 1.0, 0.0, 0.0]),
        Hermitian2::from_coords([0.0, 0.0, 1.0, 0.0]),
        Hermitian2::from_coords([0.0, 0.0, 0.0, 1.0]),
    ];
    let rows = 32 * weyls.len().max(1);
    let mut mat = DMatrix::<f64>::zeros(rows, 4);
    let mut r = 0usize;
    for w in weyls {
        for i in 0..2 {
            for k in 0..2 {
                for j in 0..2 {
                    for l in 0..2 {
                        for (col, e) in basis.iter().enumerate() {
                            let t = obstruction_entry(w, e, i, k, j, l);
                            mat[(r, col)] = t.re;
                            mat[(r + 1, col)] = t.im;
                        }
                        r += 2;
                    }
                }
            }
        }
    }
    let svd = mat.svd(false, true);
    let sigma: Vec<f64> = svd.singular_values.iter().copied().collect();
    let sigma_max = sigma.iter().copied().fold(0.0f64, f64::max);
    let threshold = NULLSPACE_REL_TOL * sigma_max;
    let v_t = svd.v_t.expect("SVD with V requested");
    let mut null_basis = Vec::new();
    for (idx, s) in sigma.iter().enumerate() {
        if *s <= threshold {
            let row = v_t.row(idx);
            null_basis.push(Hermitian2::from_coords([row[0], row[1], row[2], row[3]]));
        }
    }
    // Singular values not returned by a wide decomposition count as zero.
    for idx in sigma.len()..4 {
        let row = v_t.row(idx);
        null_basis.push(Hermitian2::from_coords([row[0], row[1], row[2], row[3]]));
    }
    ObstructionSpace { dimension: null_basis.len(), basis: null_basis, singular_values: sigma }
}

/// Residual report of [`verify_compatibility`].
#[derive(Clone, Debug)]
pub struct CompatibilityReport {
    /// Sup over samples and components of the difference between the
    /// projected Levi-Civita connection of `g` and the structure.
    pub residual: f64,
    pub evaluated: usize,
    pub skipped: usize,
}

/// Checks whether `g` is compatible with `pi`: the metric is compatible iff
/// its projected Levi-Civita connection equals the structure components.
pub fn verify_compatibility(
    pi: &ProjectiveStructure,
    g: &HermitianMetricField,
    samples: &[ChartPoint],
) -> Result<CompatibilityReport, MetrisabilityError> {
    let candidate = project(&levi_civita(g, samples)?);
    let mut sup: f64 = 0.0;
    let mut evaluated = 0usize;
    let mut skipped = 0usize;
    'points: for p in samples {
        let mut local: f64 = 0.0;
        for i in 0..2 {
            for (j, k) in [(0, 0), (0, 1), (1, 1)] {
                let a = match candidate.component(i, j, k).eval(p) {
                    Ok(v) => v,
                    Err(_) => {
                        skipped += 1;
                        continue 'points;
                    }
                };
                let b = match pi.component(i, j, k).eval(p) {
                    Ok(v) => v,
                    Err(_) => {
                        skipped += 1;
                        continue 'points;
                    }
                };
                local = local.max((a - b).norm());
            }
        }
        evaluated += 1;
        sup = sup.max(local);
    }
    if evaluated == 0 {
        return Err(MetrisabilityError::NoUsableSamples);
    }
    Ok(CompatibilityReport { residual: sup, evaluated, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature::Curvature;
    use crate::expr::Expression;
    use crate::structure::{sample_grid, sym};

    fn pt(r: [f64; 4]) -> ChartPoint {
        ChartPoint::from_reals(r)
    }

    #[test]
    fn h_transform_of_identity_is_identity() {
        let g = HermitianMetricField::identity();
        let h = h_from_metric(&g, &pt([0.3, 0.1, -0.2, 0.4])).unwrap();
        assert_eq!(h.coords(), [1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn h_transform_of_fubini_study_at_unit_point() {
        let g = HermitianMetricField::fubini_study();
        let h = h_from_metric(&g, &pt([1.0, 0.0, 0.0, 0.0])).unwrap();
        let c = h.coords();
        assert!((c[0] - 1.0).abs() < 1e-12, "h11 = {}", c[0]);
        assert!(c[1].abs() < 1e-12 && c[2].abs() < 1e-12);
        assert!((c[3] - 2.0).abs() < 1e-12, "h22 = {}", c[3]);
    }

    #[test]
    fn h_transform_of_indefinite_metric() {
        // g = diag(1, -1): det = -1, real cube root -1, (-1)^{-2} = 1.
        let g = HermitianMetricField::new(
            Expression::one(),
            Expression::zero(),
            Expression::real(-1.0),
        );
        let h = h_from_metric(&g, &pt([0.2, 0.0, 0.0, -0.5])).unwrap();
        assert_eq!(h.coords(), [1.0, 0.0, 0.0, -1.0]);
    }

    #[test]
    fn metric_from_h_examples() {
        let g = metric_from_h(&Hermitian2::identity()).unwrap();
        assert_eq!(g.coords(), [1.0, 0.0, 0.0, 1.0]);
        let g = metric_from_h(&Hermitian2::new(1.0, Complex64::new(0.0, 0.0), 2.0)).unwrap();
        assert_eq!(g.coords(), [0.25, 0.0, 0.0, 0.5]);
        match metric_from_h(&Hermitian2::new(1.0, Complex64::new(0.0, 0.0), 0.0)) {
            Err(MetrisabilityError::Degenerate { .. }) => {}
            other => panic!("expected degeneracy error, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_h_and_metric() {
        let points = sample_grid(2, 0.5);
        let g = HermitianMetricField::fubini_study();
        for p in &points {
            let h = h_from_metric(&g, p).unwrap();
            let gv = metric_from_h(&h).unwrap();
            let expect = g.eval_matrix(p).unwrap();
            assert!((gv.get(0, 0) - expect[0][0]).norm() < 1e-10);
            assert!((gv.get(0, 1) - expect[0][1]).norm() < 1e-10);
            assert!((gv.get(1, 1) - expect[1][1]).norm() < 1e-10);
            // And back again.
            let h2 = {
                let det = gv.det();
                let cbrt = det.cbrt();
                gv.scale(1.0 / (cbrt * cbrt))
            };
            for (a, b) in h.coords().iter().zip(h2.coords()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    fn pi_anti() -> ProjectiveStructure {
        let mut c = [
            [Expression::zero(), Expression::zero(), Expression::zero()],
            [Expression::zero(), Expression::zero(), Expression::zero()],
        ];
        c[0][sym(1, 1)] = Expression::parse("conj(z1)").unwrap();
        ProjectiveStructure::from_components_default(c).unwrap()
    }

    #[test]
    fn obstruction_residual_for_constant_weyl() {
        let curv = Curvature::new(&pi_anti());
        let w = curv.weyl_at(&pt([0.1, 0.2, 0.3, 0.4])).unwrap();
        let r = weyl_obstruction_residual(&w, &Hermitian2::identity());
        assert!((r - 2.0).abs() < 1e-12, "residual = {r}");
        // The worst entry is i=k=2, j=l=1 with value -2.
        let t = obstruction_entry(&w, &Hermitian2::identity(), 1, 1, 0, 0);
        assert!((t - Complex64::new(-2.0, 0.0)).norm() < 1e-12);
        // Vanishing W or vanishing h give residual 0.
        assert_eq!(weyl_obstruction_residual(&WeylAtPoint::zero(), &Hermitian2::identity()), 0.0);
        assert_eq!(weyl_obstruction_residual(&w, &Hermitian2::zero()), 0.0);
    }

    #[test]
    fn obstruction_space_of_flat_structure_is_full() {
        let ws = vec![WeylAtPoint::zero(); 9];
        let space = obstruction_solution_space(&ws);
        assert_eq!(space.dimension, 4);
    }

    #[test]
    fn obstruction_space_of_antiholomorphic_structure() {
        let curv = Curvature::new(&pi_anti());
        let ws: Vec<WeylAtPoint> = sample_grid(3, 0.6)
            .iter()
            .map(|p| curv.weyl_at(p).unwrap())
            .collect();
        let space = obstruction_solution_space(&ws);
        // Solutions are exactly multiples of diag(0, 1).
        assert_eq!(space.dimension, 1);
        let b = space.basis[0].coords();
        assert!(b[0].abs() < 1e-12 && b[1].abs() < 1e-12 && b[2].abs() < 1e-12);
        assert!((b[3].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn compatibility_of_flat_metric_with_flat_structure() {
        let samples = sample_grid(3, 0.6);
        let report =
            verify_compatibility(&ProjectiveStructure::flat(), &HermitianMetricField::identity(), &samples)
                .unwrap();
        assert_eq!(report.residual, 0.0);
        let report = verify_compatibility(
            &ProjectiveStructure::flat(),
            &HermitianMetricField::fubini_study(),
            &samples,
        )
        .unwrap();
        assert!(report.residual < 1e-9);
    }

    #[test]
    fn incompatibility_shows_as_structure_difference() {
        let samples = sample_grid(3, 0.6);
        let report =
            verify_compatibility(&pi_anti(), &HermitianMetricField::identity(), &samples).unwrap();
        let expected: f64 = samples
            .iter()
            .map(|p| p.z1.norm())
            .fold(0.0, f64::max);
        assert!((report.residual - expected).abs() < 1e-12);
        assert!(report.residual > 0.5);
    }
}
