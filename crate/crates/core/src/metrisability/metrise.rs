//! The metrisability decision pipeline.
//!
//! Stages, in order: Liouville curvature must vanish on the samples; the
//! algebraic Weyl obstruction must admit a nondegenerate hermitian solution;
//! loop transport must leave room for parallel initial states (loops whose
//! holonomy defect exceeds the threshold contribute binding linear
//! constraints); finally at least one surviving candidate must be
//! nondegenerate. Candidates are reconstructed into metric values at the
//! samples, with a finite-difference residual of the defining first-order
//! system as a per-candidate diagnostic.

use super::transport::{ChartPath, Transporter, DEFAULT_TRANSPORT_STEPS};
use super::{
    metric_from_h, obstruction_solution_space, Hermitian2, MetrisabilityError, ObstructionSpace,
    ProlongedState,
};
use crate::curvature::{Curvature, CurvatureError, LiouvilleAtPoint, WeylAtPoint};
use crate::expr::ChartPoint;
use crate::structure::ProjectiveStructure;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Stage at which a structure was rejected.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObstructionStage {
    /// Nonvanishing Liouville curvature.
    Liouville,
    /// The algebraic Weyl obstruction admits no nondegenerate solution.
    WeylAlgebraic,
    /// Loop-transport consistency eliminated every candidate direction.
    Holonomy,
    /// Candidate directions exist but all have degenerate `h`.
    Candidate,
}

impl ObstructionStage {
    pub fn name(&self) -> &'static str {
        match self {
            ObstructionStage::Liouville => "liouville",
            ObstructionStage::WeylAlgebraic => "weyl-algebraic",
            ObstructionStage::Holonomy => "holonomy",
            ObstructionStage::Candidate => "candidate",
        }
    }
}

#[derive(Clone, Debug)]
pub struct MetriseOptions {
    /// Sup-norm tolerance for "vanishes" (Liouville stage).
    pub vanish_tol: f64,
    /// Loop defect above which a loop is treated as a binding constraint.
    pub holonomy_tol: f64,
    /// `|det h|` below which a candidate is degenerate.
    pub degenerate_tol: f64,
    /// RK4 steps per unit path length.
    pub transport_steps: usize,
    /// Step for the finite-difference residual of candidates.
    pub fd_step: f64,
    /// Cap on samples used for the finite-difference residual.
    pub max_pde_points: usize,
    /// Random in-space combinations tried in addition to basis candidates.
    pub extra_candidates: usize,
}

impl Default for MetriseOptions {
    fn default() -> MetriseOptions {
        MetriseOptions {
            vanish_tol: 1e-9,
            holonomy_tol: 1e-6,
            degenerate_tol: 1e-10,
            transport_steps: DEFAULT_TRANSPORT_STEPS,
            fd_step: 1e-4,
            max_pde_points: 12,
            extra_candidates: 3,
        }
    }
}

/// One inspected candidate initial state.
#[derive(Clone, Debug)]
pub struct CandidateReport {
    pub initial: ProlongedState,
    /// `|det hmat|` at the basepoint below the degeneracy tolerance; such
    /// candidates are reported but not reconstructed.
    pub degenerate: bool,
    /// Reconstructed metric values, aligned with the samples. `None` where
    /// the transported `h` is degenerate or transport failed.
    pub metric_at_samples: Vec<Option<Hermitian2>>,
    /// Transport failures encountered during reconstruction.
    pub transport_failures: usize,
    /// Finite-difference residual of the defining first-order system at up to
    /// `max_pde_points` samples.
    pub pde_residual: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct MetriseReport {
    pub metrisable: bool,
    pub failed_stage: Option<ObstructionStage>,
    pub liouville_sup: f64,
    pub liouville_at_basepoint: LiouvilleAtPoint,
    /// Samples skipped at the Liouville/Weyl stage due to evaluation errors.
    pub skipped_samples: usize,
    pub algebraic: Option<ObstructionSpace>,
    /// Whether the algebraic solution space contains a nondegenerate element.
    pub algebraic_nondegenerate: Option<bool>,
    /// Holonomy defect per probe loop, in input order.
    pub holonomy_defects: Option<Vec<f64>>,
    /// Real dimension of the loop-consistent candidate space.
    pub candidate_dimension: Option<usize>,
    pub candidates: Vec<CandidateReport>,
}

/// Four axis-aligned square probe loops of side `side` centred at the
/// basepoint, in the (Re z¹, Im z¹), (Re z¹, Re z²), (Im z¹, Im z²) and
/// (Re z², Im z²) planes.
pub fn default_probe_loops(basepoint: &ChartPoint, side: f64) -> Vec<ChartPath> {
    let planes = [(0usize, 1usize), (0, 2), (1, 3), (2, 3)];
    let half = side / 2.0;
    planes
        .iter()
        .map(|&(a, b)| {
            let corner = |da: f64, db: f64| {
                let mut r = basepoint.to_reals();
                r[a] += da;
                r[b] += db;
                ChartPoint::from_reals(r)
            };
            ChartPath::polyline(vec![
                corner(half, half),
                corner(-half, half),
                corner(-half, -half),
                corner(half, -half),
                corner(half, half),
            ])
            .expect("probe square is a valid polyline")
        })
        .collect()
}

// Deterministic generator for in-space sampling (xorshift64*).
struct SplitRng(u64);

impl SplitRng {
    fn next_u64(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x.wrapping_mul(0x2545F4914F6CDD1D)
    }

    /// Uniform in [-1, 1].
    fn next_coeff(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 52) as f64 - 1.0
    }
}

fn points_close(a: &ChartPoint, b: &ChartPoint) -> bool {
    (a.z1 - b.z1).norm() + (a.z2 - b.z2).norm() <= 1e-12
}

/// Whether a linear space of hermitian matrices contains a nondegenerate
/// element: checked on the basis and on random combinations.
fn space_nondegenerate(basis: &[Hermitian2], tol: f64, rng: &mut SplitRng) -> bool {
    for b in basis {
        if b.det().abs() > tol {
            return true;
        }
    }
    for _ in 0..16 {
        let mut combo = Hermitian2::zero();
        for b in basis {
            combo = combo.add(&b.scale(rng.next_coeff()));
        }
        if combo.det().abs() > tol {
            return true;
        }
    }
    false
}

/// Runs the full pipeline for one structure.
///
/// `samples` must contain the basepoint. Probe loops should be closed paths
/// through regions where the structure is evaluable.
pub fn metrise(
    pi: &ProjectiveStructure,
    samples: &[ChartPoint],
    basepoint: &ChartPoint,
    loops: &[ChartPath],
    opts: &MetriseOptions,
) -> Result<MetriseReport, MetrisabilityError> {
    if !samples.iter().any(|p| points_close(p, basepoint)) {
        return Err(MetrisabilityError::BasepointNotInSamples);
    }
    let curv = Curvature::new(pi);

    // Liouville stage.
    let mut liouville_sup: f64 = 0.0;
    let mut evaluated = 0usize;
    let mut skipped = 0usize;
    let mut weyls: Vec<WeylAtPoint> = Vec::with_capacity(samples.len());
    for p in samples {
        match (curv.liouville_at(p), curv.weyl_at(p)) {
            (Ok(l), Ok(w)) => {
                evaluated += 1;
                liouville_sup = liouville_sup.max(l.max_abs());
                weyls.push(w);
            }
            (Err(CurvatureError::Eval(_)), _) | (_, Err(CurvatureError::Eval(_))) => skipped += 1,
            (Err(e), _) | (_, Err(e)) => return Err(e.into()),
        }
    }
    if evaluated == 0 {
        return Err(MetrisabilityError::NoUsableSamples);
    }
    let liouville_at_basepoint = curv.liouville_at(basepoint).map_err(flatten_curv)?;
    let mut report = MetriseReport {
        metrisable: false,
        failed_stage: None,
        liouville_sup,
        liouville_at_basepoint,
        skipped_samples: skipped,
        algebraic: None,
        algebraic_nondegenerate: None,
        holonomy_defects: None,
        candidate_dimension: None,
        candidates: Vec::new(),
    };
    if liouville_sup >= opts.vanish_tol {
        report.failed_stage = Some(ObstructionStage::Liouville);
        return Ok(report);
    }

    // Algebraic stage.
    let space = obstruction_solution_space(&weyls);
    let mut rng = SplitRng(0x5DEECE66D);
    let nondegenerate = space.dimension > 0
        && space_nondegenerate(&space.basis, opts.degenerate_tol, &mut rng);
    report.algebraic_nondegenerate = Some(nondegenerate);
    let dimension = space.dimension;
    report.algebraic = Some(space);
    if dimension == 0 || !nondegenerate {
        report.failed_stage = Some(ObstructionStage::WeylAlgebraic);
        return Ok(report);
    }

    // Holonomy stage: defects are reported; loops above the threshold become
    // binding linear constraints on the initial state. A loop that does not
    // pass through the basepoint is based there by conjugating with the
    // connecting segment, so the constraint applies to states at the
    // basepoint.
    let transporter = Transporter::new(pi);
    let mut defects = Vec::with_capacity(loops.len());
    let mut binding = Vec::new();
    for lp in loops {
        let m = based_holonomy_matrix(&transporter, lp, basepoint, opts.transport_steps)?;
        let diff = &m - DMatrix::<f64>::identity(9, 9);
        let defect = diff
            .clone()
            .svd(false, false)
            .singular_values
            .iter()
            .copied()
            .fold(0.0f64, f64::max);
        defects.push(defect);
        if defect > opts.holonomy_tol {
            binding.push(diff);
        }
    }
    report.holonomy_defects = Some(defects);

    // Candidate space: hmat constrained to the algebraic solutions, hvec and
    // hscal free, intersected with the kernels of the binding loops.
    let algebraic = report.algebraic.as_ref().expect("set above");
    let ncols = dimension + 5;
    let mut p_mat = DMatrix::<f64>::zeros(9, ncols);
    for (col, b) in algebraic.basis.iter().enumerate() {
        let coords = b.coords();
        for r in 0..4 {
            p_mat[(r, col)] = coords[r];
        }
    }
    for j in 0..5 {
        p_mat[(4 + j, dimension + j)] = 1.0;
    }
    let candidate_cols: Vec<DVector<f64>> = if binding.is_empty() {
        (0..ncols)
            .map(|c| DVector::from_fn(ncols, |r, _| if r == c { 1.0 } else { 0.0 }))
            .collect()
    } else {
        let mut stacked = DMatrix::<f64>::zeros(9 * binding.len(), ncols);
        for (idx, m) in binding.iter().enumerate() {
            let prod = m * &p_mat;
            stacked.view_mut((9 * idx, 0), (9, ncols)).copy_from(&prod);
        }
        let svd = stacked.svd(false, true);
        let sigma: Vec<f64> = svd.singular_values.iter().copied().collect();
        let v_t = svd.v_t.expect("SVD with V requested");
        let threshold = 0.1 * opts.holonomy_tol;
        let mut cols = Vec::new();
        for (idx, s) in sigma.iter().enumerate() {
            if *s <= threshold {
                cols.push(v_t.row(idx).transpose());
            }
        }
        for idx in sigma.len()..ncols {
            cols.push(v_t.row(idx).transpose());
        }
        cols
    };
    report.candidate_dimension = Some(candidate_cols.len());
    if candidate_cols.is_empty() {
        report.failed_stage = Some(ObstructionStage::Holonomy);
        return Ok(report);
    }

    // Candidate states: the null basis plus a few random unit combinations.
    let mut initials: Vec<ProlongedState> = Vec::new();
    let to_state = |x: &DVector<f64>| -> ProlongedState {
        let s = &p_mat * x;
        let mut coords = [0.0; 9];
        for r in 0..9 {
            coords[r] = s[r];
        }
        ProlongedState::from_coords(coords)
    };
    for x in &candidate_cols {
        initials.push(to_state(x));
    }
    for _ in 0..opts.extra_candidates {
        let mut x = DVector::<f64>::zeros(ncols);
        let mut norm = 0.0;
        while norm < 1e-6 {
            for c in &candidate_cols {
                let coeff = rng.next_coeff();
                x += c * coeff;
            }
            norm = x.norm();
        }
        x /= norm;
        initials.push(to_state(&x));
    }

    let mut any_reconstructed = false;
    for initial in initials {
        let degenerate = initial.hmat.det().abs() < opts.degenerate_tol;
        let mut candidate = CandidateReport {
            initial,
            degenerate,
            metric_at_samples: Vec::new(),
            transport_failures: 0,
            pde_residual: None,
        };
        if !degenerate {
            let mut states: Vec<Option<ProlongedState>> = Vec::with_capacity(samples.len());
            for p in samples {
                if points_close(p, basepoint) {
                    states.push(Some(initial));
                    continue;
                }
                let path = ChartPath::segment(*basepoint, *p)?;
                match transporter.transport(&initial, &path, opts.transport_steps) {
                    Ok(s) => states.push(Some(s)),
                    Err(_) => {
                        candidate.transport_failures += 1;
                        states.push(None);
                    }
                }
            }
            candidate.metric_at_samples = states
                .iter()
                .map(|s| s.as_ref().and_then(|st| metric_from_h(&st.hmat).ok()))
                .collect();
            candidate.pde_residual = pde_residual(
                &transporter,
                pi,
                samples,
                &states,
                opts,
            );
            if candidate.metric_at_samples.iter().any(|m| m.is_some()) {
                any_reconstructed = true;
            }
        }
        report.candidates.push(candidate);
    }

    if any_reconstructed {
        report.metrisable = true;
    } else {
        report.failed_stage = Some(ObstructionStage::Candidate);
    }
    Ok(report)
}

fn flatten_curv(e: CurvatureError) -> MetrisabilityError {
    match e {
        CurvatureError::Eval(inner) => MetrisabilityError::Eval(inner),
        other => MetrisabilityError::Curvature(other),
    }
}

// Holonomy matrix of a loop re-based at the basepoint: polyline loops get the
// connecting segments prepended/appended, parametric loops are conjugated by
// transport matrices of the connecting segments.
fn based_holonomy_matrix(
    transporter: &Transporter,
    loop_path: &ChartPath,
    basepoint: &ChartPoint,
    steps: usize,
) -> Result<DMatrix<f64>, MetrisabilityError> {
    if !loop_path.is_closed()? {
        return Err(MetrisabilityError::OpenLoop);
    }
    let (start, _) = loop_path.endpoints()?;
    if points_close(&start, basepoint) {
        return transporter.holonomy_matrix(loop_path, steps);
    }
    match loop_path {
        ChartPath::Polyline(pts) => {
            let mut based = Vec::with_capacity(pts.len() + 2);
            based.push(*basepoint);
            based.extend(pts.iter().copied());
            based.push(*basepoint);
            let based = ChartPath::polyline(based)?;
            transporter.holonomy_matrix(&based, steps)
        }
        ChartPath::Parametric { .. } => {
            let to = transporter.transport_matrix(&ChartPath::segment(*basepoint, start)?, steps)?;
            let back = transporter.transport_matrix(&ChartPath::segment(start, *basepoint)?, steps)?;
            let m = transporter.holonomy_matrix(loop_path, steps)?;
            Ok(back * m * to)
        }
    }
}

#[inline]
fn eps(i: usize, j: usize) -> f64 {
    match (i, j) {
        (0, 1) => 1.0,
        (1, 0) => -1.0,
        _ => 0.0,
    }
}

// Finite-difference residual of the first-order system
//   ∂ h_{k j̄} / ∂ z^v      = h_{s j̄} Π^s_{vk} + conj(h_j) ε_{vk}
//   ∂ h_{k j̄} / ∂ conj z^v = h_{k s̄} conj(Π^s_{vj}) + h_k ε_{vj}
// on transported candidate states, at up to `max_pde_points` samples.
fn pde_residual(
    transporter: &Transporter,
    pi: &ProjectiveStructure,
    samples: &[ChartPoint],
    states: &[Option<ProlongedState>],
    opts: &MetriseOptions,
) -> Option<f64> {
    let available: Vec<usize> = states
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.as_ref().map(|_| i))
        .collect();
    if available.is_empty() {
        return None;
    }
    let stride = (available.len() / opts.max_pde_points.max(1)).max(1);
    let delta = opts.fd_step;
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for &idx in available.iter().step_by(stride) {
        if checked >= opts.max_pde_points {
            break;
        }
        let p = samples[idx];
        let base = states[idx].as_ref().expect("available");
        // neighbours at ± delta on each real axis
        let mut neighbours: [[Option<ProlongedState>; 2]; 4] = Default::default();
        let mut ok = true;
        for axis in 0..4 {
            for (side, sign) in [(0usize, 1.0f64), (1, -1.0)] {
                let mut r = p.to_reals();
                r[axis] += sign * delta;
                let q = ChartPoint::from_reals(r);
                let path = match ChartPath::segment(p, q) {
                    Ok(path) => path,
                    Err(_) => {
                        ok = false;
                        break;
                    }
                };
                match transporter.transport(base, &path, opts.transport_steps) {
                    Ok(s) => neighbours[axis][side] = Some(s),
                    Err(_) => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                break;
            }
        }
        if !ok {
            continue;
        }
        checked += 1;
        let hm = |s: &ProlongedState, k: usize, j: usize| s.hmat.get(k, j);
        let fd = |axis: usize, k: usize, j: usize| -> Complex64 {
            let plus = neighbours[axis][0].as_ref().expect("checked");
            let minus = neighbours[axis][1].as_ref().expect("checked");
            (hm(plus, k, j) - hm(minus, k, j)) / (2.0 * delta)
        };
        let pi_at = |s: usize, v: usize, k: usize| pi.component(s, v, k).eval(&p);
        for v in 0..2 {
            for k in 0..2 {
                for j in 0..2 {
                    let dx = fd(2 * v, k, j);
                    let dy = fd(2 * v + 1, k, j);
                    let d_hol = (dx - Complex64::new(0.0, 1.0) * dy) / 2.0;
                    let d_anti = (dx + Complex64::new(0.0, 1.0) * dy) / 2.0;
                    let mut rhs_hol = base.hvec[j].conj() * eps(v, k);
                    let mut rhs_anti = base.hvec[k] * eps(v, j);
                    for s in 0..2 {
                        let pi_vk = match pi_at(s, v, k) {
                            Ok(val) => val,
                            Err(_) => return None,
                        };
                        let pi_vj = match pi_at(s, v, j) {
                            Ok(val) => val,
                            Err(_) => return None,
                        };
                        rhs_hol += hm(base, s, j) * pi_vk;
                        rhs_anti += hm(base, k, s) * pi_vj.conj();
                    }
                    worst = worst.max((d_hol - rhs_hol).norm()).max((d_anti - rhs_anti).norm());
                }
            }
        }
    }
    if checked == 0 {
        None
    } else {
        Some(worst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expression;
    use crate::metrisability::solve_flat;
    use crate::metrisability::HermitianForm3;
    use crate::structure::{sample_grid, sym};

    fn cp(r: [f64; 4]) -> ChartPoint {
        ChartPoint::from_reals(r)
    }

    fn small_samples() -> Vec<ChartPoint> {
        let mut s = sample_grid(2, 0.4);
        s.push(cp([0.0; 4]));
        s
    }

    fn pi_single(src: &str) -> ProjectiveStructure {
        let mut c = [
            [Expression::zero(), Expression::zero(), Expression::zero()],
            [Expression::zero(), Expression::zero(), Expression::zero()],
        ];
        c[0][sym(1, 1)] = Expression::parse(src).unwrap();
        ProjectiveStructure::from_components_default(c).unwrap()
    }

    fn fast_opts() -> MetriseOptions {
        MetriseOptions { transport_steps: 300, ..MetriseOptions::default() }
    }

    #[test]
    fn flat_structure_is_metrisable_with_nine_parameters() {
        let samples = small_samples();
        let basepoint = cp([0.0; 4]);
        let loops = default_probe_loops(&basepoint, 0.2);
        let report = metrise(
            &ProjectiveStructure::flat(),
            &samples,
            &basepoint,
            &loops,
            &fast_opts(),
        )
        .unwrap();
        assert!(report.metrisable);
        assert_eq!(report.failed_stage, None);
        assert_eq!(report.candidate_dimension, Some(9));
        assert_eq!(report.algebraic.as_ref().unwrap().dimension, 4);
        // Candidate states coincide with the closed-form family: check one
        // reconstructed metric against a closed-form solution with the same
        // initial state.
        let candidate = report
            .candidates
            .iter()
            .find(|c| !c.degenerate)
            .expect("some nondegenerate candidate");
        assert!(candidate.pde_residual.unwrap() < 1e-6);
        // Build the hermitian form whose flat solution has this initial state
        // at the origin, then compare transported h at another sample.
        let s0 = candidate.initial;
        let c = HermitianForm3::from_matrix(
            [
                [
                    Complex64::new(s0.hscal, 0.0),
                    s0.hvec[1].conj(),
                    -s0.hvec[0].conj(),
                ],
                [s0.hvec[1], -s0.hmat.get(1, 1), s0.hmat.get(1, 0)],
                [-s0.hvec[0], s0.hmat.get(0, 1), -s0.hmat.get(0, 0)],
            ],
            1e-12,
        )
        .unwrap();
        for (p, m) in samples.iter().zip(&candidate.metric_at_samples) {
            if let Some(m) = m {
                let expect = solve_flat(&c, p);
                let got_h = {
                    let det = m.det();
                    let cbrt = det.cbrt();
                    m.scale(1.0 / (cbrt * cbrt))
                };
                for (a, b) in got_h.coords().iter().zip(expect.hmat.coords()) {
                    assert!((a - b).abs() < 1e-6, "{a} vs {b} at {p}");
                }
            }
        }
    }

    #[test]
    fn liouville_obstructed_structure_fails_early() {
        let samples = small_samples();
        let basepoint = cp([0.0; 4]);
        let loops = default_probe_loops(&basepoint, 0.2);
        let report = metrise(&pi_single("z1^2"), &samples, &basepoint, &loops, &fast_opts()).unwrap();
        assert!(!report.metrisable);
        assert_eq!(report.failed_stage, Some(ObstructionStage::Liouville));
        assert!((report.liouville_at_basepoint.l2 + 2.0).norm() < 1e-12);
        assert!(report.algebraic.is_none());
    }

    #[test]
    fn antiholomorphic_structure_fails_at_the_algebraic_stage() {
        let samples = small_samples();
        let basepoint = cp([0.0; 4]);
        let loops = default_probe_loops(&basepoint, 0.2);
        let report =
            metrise(&pi_single("conj(z1)"), &samples, &basepoint, &loops, &fast_opts()).unwrap();
        assert!(!report.metrisable);
        assert_eq!(report.failed_stage, Some(ObstructionStage::WeylAlgebraic));
        // The solution space is the degenerate line diag(0, t): h = δ excluded.
        let space = report.algebraic.as_ref().unwrap();
        assert_eq!(space.dimension, 1);
        assert_eq!(report.algebraic_nondegenerate, Some(false));
    }

    #[test]
    fn basepoint_must_be_a_sample() {
        let samples = sample_grid(2, 0.4);
        let basepoint = cp([0.123, 0.0, 0.0, 0.0]);
        match metrise(
            &ProjectiveStructure::flat(),
            &samples,
            &basepoint,
            &[],
            &fast_opts(),
        ) {
            Err(MetrisabilityError::BasepointNotInSamples) => {}
            other => panic!("expected basepoint error, got {other:?}"),
        }
    }
}
