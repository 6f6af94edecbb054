//! Parallel transport of the prolonged linear system.
//!
//! In the coordinate gauge the connection forms are `θ⁰₀ = 0`,
//! `θ^i₀ = dz^i`, `θ^i_j = Π^i_{jk} dz^k`, `θ⁰_i = Π_{ik} dz^k`; contracting
//! with a curve velocity turns the rank-9 system into a linear ODE that is
//! integrated with classical fixed-step RK4.
//!
//! Internally the state is carried in a redundant complex form (all four
//! `h_{i j̄}` entries plus a complex scalar slot) and hermiticity/reality is
//! checked rather than enforced, so a drift beyond tolerance signals an
//! implementation bug or a singular structure instead of being silently
//! projected away.

use super::{Hermitian2, MetrisabilityError, ProlongedState, REALITY_TOL};
use crate::curvature::{Curvature, CurvatureError, KAtPoint, WeylAtPoint};
use crate::expr::{ChartPoint, Expression, VarIndex};
use crate::structure::{pi_lower, LoweredPi, ProjectiveStructure};
use nalgebra::DMatrix;
use num_complex::Complex64;

/// Default number of RK4 steps per unit of path length.
pub const DEFAULT_TRANSPORT_STEPS: usize = 1000;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[inline]
fn eps(i: usize, j: usize) -> f64 {
    // antisymmetric, eps(0,1) = 1
    match (i, j) {
        (0, 1) => 1.0,
        (1, 0) => -1.0,
        _ => 0.0,
    }
}

/// Redundant complex state used during integration.
#[derive(Clone, Copy, Debug)]
pub(crate) struct StateC {
    hm: [[Complex64; 2]; 2],
    hv: [Complex64; 2],
    hs: Complex64,
}

impl StateC {
    fn zero() -> StateC {
        StateC { hm: [[ZERO; 2]; 2], hv: [ZERO; 2], hs: ZERO }
    }

    fn axpy(&self, c: f64, o: &StateC) -> StateC {
        let mut out = *self;
        for i in 0..2 {
            for j in 0..2 {
                out.hm[i][j] += c * o.hm[i][j];
            }
            out.hv[i] += c * o.hv[i];
        }
        out.hs += c * o.hs;
        out
    }

    fn max_abs(&self) -> f64 {
        let mut m = self.hs.norm();
        for i in 0..2 {
            for j in 0..2 {
                m = m.max(self.hm[i][j].norm());
            }
            m = m.max(self.hv[i].norm());
        }
        m
    }

    /// Deviation from the hermitian/real slice.
    fn drift(&self) -> f64 {
        self.hm[0][0]
            .im
            .abs()
            .max(self.hm[1][1].im.abs())
            .max((self.hm[0][1] - self.hm[1][0].conj()).norm() / 2.0)
            .max(self.hs.im.abs())
    }

    fn check_drift(&self) -> Result<(), MetrisabilityError> {
        let tolerance = REALITY_TOL * self.max_abs().max(1.0);
        let drift = self.drift();
        if drift > tolerance {
            return Err(MetrisabilityError::RealityDrift { drift, tolerance });
        }
        Ok(())
    }

    fn to_state(self) -> ProlongedState {
        ProlongedState::new(
            Hermitian2::new(
                self.hm[0][0].re,
                (self.hm[0][1] + self.hm[1][0].conj()) / 2.0,
                self.hm[1][1].re,
            ),
            self.hv,
            self.hs.re,
        )
    }
}

impl ProlongedState {
    pub(crate) fn to_c(&self) -> StateC {
        StateC {
            hm: [
                [self.hmat.get(0, 0), self.hmat.get(0, 1)],
                [self.hmat.get(1, 0), self.hmat.get(1, 1)],
            ],
            hv: self.hvec,
            hs: Complex64::new(self.hscal, 0.0),
        }
    }
}

/// The prolonged connection contracted with a velocity at a point: a
/// real-linear map `D` with `d(state)/dt = D(state)` along a curve through
/// the point with that velocity.
#[derive(Clone, Debug)]
pub struct ProlongedRhs {
    a: [[Complex64; 2]; 2], // a[s][j] = Π^s_{jk} v^k
    b: [Complex64; 2],      // b[i] = Π_{ik} v^k
    w: WeylAtPoint,
    kt: KAtPoint,
    v: [Complex64; 2],
}

impl ProlongedRhs {
    pub(crate) fn apply_c(&self, s: &StateC) -> StateC {
        let v = self.v;
        let evec = [-v[1], v[0]]; // ε_{sj} v^s over j
        let bvec = [-self.b[1], self.b[0]]; // ε^{ij} b_j over i
        let mut d = StateC::zero();

        // d h_{i j̄} = h_{i s̄} conj(a^s_j) + h_{s j̄} a^s_i
        //             + h_i conj(ε_{sj} v^s) + conj(h_j) ε_{si} v^s
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = s.hv[i] * evec[j].conj() + s.hv[j].conj() * evec[i];
                for t in 0..2 {
                    acc += s.hm[i][t] * self.a[t][j].conj() + s.hm[t][j] * self.a[t][i];
                }
                d.hm[i][j] = acc;
            }
        }

        // d h_k = h_l a^l_k + h_{k ī} conj(ε^{ij} b_j)
        //         + (ε_{kl} h + ½ Σ_s (h_{s 1̄} W^s_{kl 2̄} - h_{s 2̄} W^s_{kl 1̄})) v^l
        for k in 0..2 {
            let mut acc = ZERO;
            for l in 0..2 {
                acc += s.hv[l] * self.a[l][k];
            }
            for i in 0..2 {
                acc += s.hm[k][i] * bvec[i].conj();
            }
            for l in 0..2 {
                let mut wsum = ZERO;
                for t in 0..2 {
                    wsum += s.hm[t][0] * self.w.get(t, k, l, 1) - s.hm[t][1] * self.w.get(t, k, l, 0);
                }
                acc += (eps(k, l) * s.hs + 0.5 * wsum) * v[l];
            }
            d.hv[k] = acc;
        }

        // d h = 2 Re(h_1 b_2) - 2 Re(h_2 b_1)
        //       + Re((h_{1 1̄} K_{2s 2̄} - h_{2 1̄} K_{1s 2̄}
        //             - h_{1 2̄} K_{2s 1̄} + h_{2 2̄} K_{1s 1̄}) v^s)
        // The K coefficient is fixed against exact parallel fields of known
        // compatible metrics; see the transport tests.
        let mut real = 2.0 * (s.hv[0] * self.b[1]).re - 2.0 * (s.hv[1] * self.b[0]).re;
        let mut ksum = ZERO;
        for t in 0..2 {
            ksum += (s.hm[0][0] * self.kt.get(1, t, 1) - s.hm[1][0] * self.kt.get(0, t, 1)
                - s.hm[0][1] * self.kt.get(1, t, 0)
                + s.hm[1][1] * self.kt.get(0, t, 0))
                * v[t];
        }
        real += ksum.re;
        d.hs = Complex64::new(real, 0.0);
        d
    }

    /// Applies the map to a physical state. On the hermitian/real slice the
    /// derivative stays on the slice.
    pub fn apply(&self, s: &ProlongedState) -> ProlongedState {
        self.apply_c(&s.to_c()).to_state()
    }
}

/// A path in the chart: either a polyline or a parametric curve
/// `t ∈ [0,1] -> (z1(t), z2(t))` whose component expressions use `z1` as the
/// (real) parameter slot.
#[derive(Clone, Debug)]
pub enum ChartPath {
    Polyline(Vec<ChartPoint>),
    Parametric {
        z1: Expression,
        z2: Expression,
        dz1: Expression,
        dz2: Expression,
    },
}

fn param_point(t: f64) -> ChartPoint {
    ChartPoint::new(Complex64::new(t, 0.0), ZERO)
}

// d/dt along the real parameter carried in the z1 slot.
fn param_derivative(e: &Expression) -> Expression {
    e.wirtinger(VarIndex::Z1, false).add(&e.wirtinger(VarIndex::Z1, true))
}

impl ChartPath {
    pub fn polyline(points: Vec<ChartPoint>) -> Result<ChartPath, MetrisabilityError> {
        if points.is_empty() {
            return Err(MetrisabilityError::EmptyPath);
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(MetrisabilityError::NonFinitePath);
        }
        for pair in points.windows(2) {
            if pair[0] == pair[1] {
                return Err(MetrisabilityError::RepeatedPathPoint);
            }
        }
        Ok(ChartPath::Polyline(points))
    }

    /// Straight segment between two points.
    pub fn segment(a: ChartPoint, b: ChartPoint) -> Result<ChartPath, MetrisabilityError> {
        if a == b {
            // zero-length path: transport is the identity
            ChartPath::polyline(vec![a])
        } else {
            ChartPath::polyline(vec![a, b])
        }
    }

    pub fn parametric(z1: Expression, z2: Expression) -> Result<ChartPath, MetrisabilityError> {
        let dz1 = param_derivative(&z1);
        let dz2 = param_derivative(&z2);
        let path = ChartPath::Parametric { z1, z2, dz1, dz2 };
        // finite sampled position and velocity
        for k in 0..=32 {
            let t = k as f64 / 32.0;
            let p = path.point_at(t)?;
            let v = path.velocity_at(t)?;
            if !p.is_finite() || !v[0].is_finite() || !v[1].is_finite() {
                return Err(MetrisabilityError::NonFinitePath);
            }
        }
        Ok(path)
    }

    pub(crate) fn point_at(&self, t: f64) -> Result<ChartPoint, MetrisabilityError> {
        match self {
            ChartPath::Polyline(_) => unreachable!("point_at is for parametric paths"),
            ChartPath::Parametric { z1, z2, .. } => {
                let tp = param_point(t);
                Ok(ChartPoint::new(z1.eval(&tp)?, z2.eval(&tp)?))
            }
        }
    }

    pub(crate) fn velocity_at(&self, t: f64) -> Result<[Complex64; 2], MetrisabilityError> {
        match self {
            ChartPath::Polyline(_) => unreachable!("velocity_at is for parametric paths"),
            ChartPath::Parametric { dz1, dz2, .. } => {
                let tp = param_point(t);
                Ok([dz1.eval(&tp)?, dz2.eval(&tp)?])
            }
        }
    }

    /// Start and end points of the path.
    pub fn endpoints(&self) -> Result<(ChartPoint, ChartPoint), MetrisabilityError> {
        match self {
            ChartPath::Polyline(pts) => Ok((pts[0], *pts.last().expect("nonempty"))),
            ChartPath::Parametric { .. } => Ok((self.point_at(0.0)?, self.point_at(1.0)?)),
        }
    }

    pub fn is_closed(&self) -> Result<bool, MetrisabilityError> {
        let (a, b) = self.endpoints()?;
        Ok((a.z1 - b.z1).norm() + (a.z2 - b.z2).norm() <= 1e-12)
    }
}

fn segment_length(a: &ChartPoint, b: &ChartPoint) -> f64 {
    ((b.z1 - a.z1).norm_sqr() + (b.z2 - a.z2).norm_sqr()).sqrt()
}

/// Reusable transport context for one structure: the symbolic curvature
/// fields are built once and evaluated along paths.
pub struct Transporter {
    pi: ProjectiveStructure,
    lowered: LoweredPi,
    curv: Curvature,
}

impl Transporter {
    pub fn new(pi: &ProjectiveStructure) -> Transporter {
        Transporter { pi: pi.clone(), lowered: pi_lower(pi), curv: Curvature::new(pi) }
    }

    /// Evaluates the connection against velocity `v` at `p`.
    pub fn rhs_at(
        &self,
        p: &ChartPoint,
        v: [Complex64; 2],
    ) -> Result<ProlongedRhs, MetrisabilityError> {
        let w = self.curv.weyl_at(p).map_err(curvature_err)?;
        let kt = self.curv.k_at(p).map_err(curvature_err)?;
        let mut a = [[ZERO; 2]; 2];
        for s in 0..2 {
            for j in 0..2 {
                let mut acc = ZERO;
                for k in 0..2 {
                    acc += self.pi.component(s, j, k).eval(p)? * v[k];
                }
                a[s][j] = acc;
            }
        }
        let mut b = [ZERO; 2];
        for i in 0..2 {
            let mut acc = ZERO;
            for k in 0..2 {
                acc += self.lowered.component(i, k).eval(p)? * v[k];
            }
            b[i] = acc;
        }
        Ok(ProlongedRhs { a, b, w, kt, v })
    }

    pub(crate) fn transport_c(
        &self,
        state0: StateC,
        path: &ChartPath,
        steps_per_unit: usize,
    ) -> Result<StateC, MetrisabilityError> {
        let mut state = state0;
        match path {
            ChartPath::Polyline(pts) => {
                for seg in pts.windows(2) {
                    let (a, b) = (seg[0], seg[1]);
                    let len = segment_length(&a, &b);
                    let n = ((steps_per_unit as f64 * len).ceil() as usize).max(1);
                    let dt = 1.0 / n as f64;
                    let v = [b.z1 - a.z1, b.z2 - a.z2];
                    let at = |t: f64| {
                        ChartPoint::new(a.z1 + t * (b.z1 - a.z1), a.z2 + t * (b.z2 - a.z2))
                    };
                    let mut rhs_start = self.rhs_at(&at(0.0), v)?;
                    for step in 0..n {
                        let t0 = step as f64 * dt;
                        let rhs_mid = self.rhs_at(&at(t0 + dt / 2.0), v)?;
                        let rhs_end = self.rhs_at(&at(t0 + dt), v)?;
                        state = rk4_step(&state, dt, &rhs_start, &rhs_mid, &rhs_mid, &rhs_end);
                        rhs_start = rhs_end;
                    }
                    state.check_drift()?;
                }
            }
            ChartPath::Parametric { .. } => {
                // trapezoid length estimate to set the step count
                let samples = 256usize;
                let mut length = 0.0;
                let mut prev_speed = {
                    let v = path.velocity_at(0.0)?;
                    (v[0].norm_sqr() + v[1].norm_sqr()).sqrt()
                };
                for k in 1..=samples {
                    let t = k as f64 / samples as f64;
                    let v = path.velocity_at(t)?;
                    let speed = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
                    length += (prev_speed + speed) / (2.0 * samples as f64);
                    prev_speed = speed;
                }
                let n = ((steps_per_unit as f64 * length).ceil() as usize).max(1);
                let dt = 1.0 / n as f64;
                let rhs = |t: f64| -> Result<ProlongedRhs, MetrisabilityError> {
                    self.rhs_at(&path.point_at(t)?, path.velocity_at(t)?)
                };
                let mut rhs_start = rhs(0.0)?;
                for step in 0..n {
                    let t0 = step as f64 * dt;
                    let rhs_mid = rhs(t0 + dt / 2.0)?;
                    let rhs_end = rhs(t0 + dt)?;
                    state = rk4_step(&state, dt, &rhs_start, &rhs_mid, &rhs_mid, &rhs_end);
                    rhs_start = rhs_end;
                }
                state.check_drift()?;
            }
        }
        Ok(state)
    }

    /// Transports a state along a path with `steps_per_unit` RK4 steps per
    /// unit of path length.
    pub fn transport(
        &self,
        state0: &ProlongedState,
        path: &ChartPath,
        steps_per_unit: usize,
    ) -> Result<ProlongedState, MetrisabilityError> {
        let out = self.transport_c(state0.to_c(), path, steps_per_unit)?;
        out.check_drift()?;
        Ok(out.to_state())
    }

    /// Transport of the 9 coordinate basis states along a path, as a 9x9 real
    /// matrix acting on initial state coordinates.
    pub fn transport_matrix(
        &self,
        path: &ChartPath,
        steps_per_unit: usize,
    ) -> Result<DMatrix<f64>, MetrisabilityError> {
        let mut m = DMatrix::<f64>::zeros(9, 9);
        for col in 0..9 {
            let out = self.transport(&ProlongedState::basis(col), path, steps_per_unit)?;
            let coords = out.coords();
            for row in 0..9 {
                m[(row, col)] = coords[row];
            }
        }
        Ok(m)
    }

    /// Loop transport of the 9 coordinate basis states, as a 9x9 real matrix.
    pub fn holonomy_matrix(
        &self,
        loop_path: &ChartPath,
        steps_per_unit: usize,
    ) -> Result<DMatrix<f64>, MetrisabilityError> {
        if !loop_path.is_closed()? {
            return Err(MetrisabilityError::OpenLoop);
        }
        self.transport_matrix(loop_path, steps_per_unit)
    }

    /// Operator norm of (loop transport - identity).
    pub fn holonomy_defect(
        &self,
        loop_path: &ChartPath,
        steps_per_unit: usize,
    ) -> Result<f64, MetrisabilityError> {
        let m = self.holonomy_matrix(loop_path, steps_per_unit)?;
        let defect = &m - DMatrix::<f64>::identity(9, 9);
        let svd = defect.svd(false, false);
        Ok(svd.singular_values.iter().copied().fold(0.0f64, f64::max))
    }
}

fn curvature_err(e: CurvatureError) -> MetrisabilityError {
    match e {
        CurvatureError::Eval(inner) => MetrisabilityError::Eval(inner),
        other => MetrisabilityError::Curvature(other),
    }
}

fn rk4_step(
    state: &StateC,
    dt: f64,
    rhs1: &ProlongedRhs,
    rhs2: &ProlongedRhs,
    rhs3: &ProlongedRhs,
    rhs4: &ProlongedRhs,
) -> StateC {
    let k1 = rhs1.apply_c(state);
    let k2 = rhs2.apply_c(&state.axpy(dt / 2.0, &k1));
    let k3 = rhs3.apply_c(&state.axpy(dt / 2.0, &k2));
    let k4 = rhs4.apply_c(&state.axpy(dt, &k3));
    let mut out = state.axpy(dt / 6.0, &k1);
    out = out.axpy(dt / 3.0, &k2);
    out = out.axpy(dt / 3.0, &k3);
    out.axpy(dt / 6.0, &k4)
}

/// One-shot evaluation of the prolonged connection at a point; build a
/// [`Transporter`] to sweep many points of the same structure.
pub fn prolonged_rhs(
    pi: &ProjectiveStructure,
    p: &ChartPoint,
    v: [Complex64; 2],
) -> Result<ProlongedRhs, MetrisabilityError> {
    Transporter::new(pi).rhs_at(p, v)
}

/// One-shot transport along a path.
pub fn transport(
    pi: &ProjectiveStructure,
    state0: &ProlongedState,
    path: &ChartPath,
    steps_per_unit: usize,
) -> Result<ProlongedState, MetrisabilityError> {
    Transporter::new(pi).transport(state0, path, steps_per_unit)
}

/// One-shot holonomy matrix of a closed loop.
pub fn holonomy_matrix(
    pi: &ProjectiveStructure,
    loop_path: &ChartPath,
    steps_per_unit: usize,
) -> Result<DMatrix<f64>, MetrisabilityError> {
    Transporter::new(pi).holonomy_matrix(loop_path, steps_per_unit)
}

/// One-shot holonomy defect of a closed loop.
pub fn holonomy_defect(
    pi: &ProjectiveStructure,
    loop_path: &ChartPath,
    steps_per_unit: usize,
) -> Result<f64, MetrisabilityError> {
    Transporter::new(pi).holonomy_defect(loop_path, steps_per_unit)
}
