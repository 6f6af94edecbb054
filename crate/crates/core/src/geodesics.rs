//! Numerical integration of generalised geodesics.
//!
//! The defining condition is reparametrisation invariant; integration fixes
//! the parametrisation gauge `d²z^j/dt² = -Π^j_{kl} ż^k ż^l`, whose solutions
//! satisfy the invariant system identically. The wedge residual re-checks the
//! condition from the samples alone, with accelerations recovered by central
//! finite differences so that it is an independent probe of the integrator.

use crate::expr::{ChartPoint, EvalError};
use crate::structure::ProjectiveStructure;
use num_complex::Complex64;

#[derive(Clone, Debug, thiserror::Error)]
pub enum GeodesicError {
    #[error("initial velocity must be nonzero")]
    ZeroInitialVelocity,
    #[error("at least one integration step is required")]
    NoSteps,
    #[error("trajectory needs at least 3 samples, got {0}")]
    TooFewSamples(usize),
    #[error("trajectory samples must have strictly increasing parameter values")]
    NonIncreasingParameter,
    #[error("trajectory samples must be finite")]
    NonFiniteSample,
    #[error("evaluation failed mid-trajectory after {} samples: {source}", partial.samples.len())]
    Domain {
        partial: GeodesicTrajectory,
        source: EvalError,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// One trajectory sample: parameter, position and velocity.
#[derive(Clone, Copy, Debug)]
pub struct GeodesicSample {
    pub t: f64,
    pub z: ChartPoint,
    pub zdot: [Complex64; 2],
}

/// A sampled trajectory with strictly increasing parameter values.
#[derive(Clone, Debug)]
pub struct GeodesicTrajectory {
    pub samples: Vec<GeodesicSample>,
}

impl GeodesicTrajectory {
    pub fn from_samples(samples: Vec<GeodesicSample>) -> Result<GeodesicTrajectory, GeodesicError> {
        for s in &samples {
            if !s.t.is_finite()
                || !s.z.is_finite()
                || !s.zdot[0].is_finite()
                || !s.zdot[1].is_finite()
            {
                return Err(GeodesicError::NonFiniteSample);
            }
        }
        for pair in samples.windows(2) {
            if pair[1].t <= pair[0].t {
                return Err(GeodesicError::NonIncreasingParameter);
            }
        }
        Ok(GeodesicTrajectory { samples })
    }

    pub fn end(&self) -> Option<&GeodesicSample> {
        self.samples.last()
    }
}

#[derive(Clone, Copy)]
struct PhaseState {
    z: [Complex64; 2],
    w: [Complex64; 2],
}

impl PhaseState {
    fn axpy(&self, c: f64, o: &PhaseState) -> PhaseState {
        PhaseState {
            z: [self.z[0] + c * o.z[0], self.z[1] + c * o.z[1]],
            w: [self.w[0] + c * o.w[0], self.w[1] + c * o.w[1]],
        }
    }

    fn is_finite(&self) -> bool {
        self.z.iter().chain(self.w.iter()).all(|c| c.is_finite())
    }
}

fn acceleration(
    pi: &ProjectiveStructure,
    z: &ChartPoint,
    w: &[Complex64; 2],
) -> Result<[Complex64; 2], EvalError> {
    let mut a = [Complex64::new(0.0, 0.0); 2];
    for j in 0..2 {
        let mut acc = Complex64::new(0.0, 0.0);
        for k in 0..2 {
            for l in 0..2 {
                acc += pi.component(j, k, l).eval(z)? * w[k] * w[l];
            }
        }
        a[j] = -acc;
    }
    Ok(a)
}

/// Integrates the gauge-fixed geodesic equation from `z0` with initial
/// velocity `v0` over `[0, t_end]` with `steps` RK4 steps. On an evaluation
/// failure the partial trajectory is returned inside the error.
pub fn integrate_geodesic(
    pi: &ProjectiveStructure,
    z0: &ChartPoint,
    v0: [Complex64; 2],
    t_end: f64,
    steps: usize,
) -> Result<GeodesicTrajectory, GeodesicError> {
    if v0[0].norm() == 0.0 && v0[1].norm() == 0.0 {
        return Err(GeodesicError::ZeroInitialVelocity);
    }
    if steps == 0 {
        return Err(GeodesicError::NoSteps);
    }
    let dt = t_end / steps as f64;
    let mut state = PhaseState { z: [z0.z1, z0.z2], w: v0 };
    let mut samples = Vec::with_capacity(steps + 1);
    samples.push(GeodesicSample { t: 0.0, z: *z0, zdot: v0 });
    let rhs = |s: &PhaseState| -> Result<PhaseState, EvalError> {
        let z = ChartPoint::new(s.z[0], s.z[1]);
        let a = acceleration(pi, &z, &s.w)?;
        Ok(PhaseState { z: s.w, w: a })
    };
    for step in 0..steps {
        let advance = || -> Result<PhaseState, EvalError> {
            let k1 = rhs(&state)?;
            let k2 = rhs(&state.axpy(dt / 2.0, &k1))?;
            let k3 = rhs(&state.axpy(dt / 2.0, &k2))?;
            let k4 = rhs(&state.axpy(dt, &k3))?;
            let mut out = state.axpy(dt / 6.0, &k1);
            out = out.axpy(dt / 3.0, &k2);
            out = out.axpy(dt / 3.0, &k3);
            Ok(out.axpy(dt / 6.0, &k4))
        };
        state = match advance() {
            Ok(s) => s,
            Err(source) => {
                return Err(GeodesicError::Domain {
                    partial: GeodesicTrajectory { samples },
                    source,
                })
            }
        };
        if !state.is_finite() {
            return Err(GeodesicError::NonFiniteSample);
        }
        samples.push(GeodesicSample {
            t: (step + 1) as f64 * dt,
            z: ChartPoint::new(state.z[0], state.z[1]),
            zdot: state.w,
        });
    }
    Ok(GeodesicTrajectory { samples })
}

/// Residual of the defining wedge condition over the interior samples:
/// `max |ż^i a^j - ż^j a^i|` with `a^j = z̈^j + Π^j_{kl} ż^k ż^l` and `z̈`
/// recovered by central differences of the sampled velocities.
pub fn wedge_residual(
    pi: &ProjectiveStructure,
    traj: &GeodesicTrajectory,
) -> Result<f64, GeodesicError> {
    let n = traj.samples.len();
    if n < 3 {
        return Err(GeodesicError::TooFewSamples(n));
    }
    let mut worst: f64 = 0.0;
    for idx in 1..n - 1 {
        let prev = &traj.samples[idx - 1];
        let here = &traj.samples[idx];
        let next = &traj.samples[idx + 1];
        let span = next.t - prev.t;
        let zddot = [
            (next.zdot[0] - prev.zdot[0]) / span,
            (next.zdot[1] - prev.zdot[1]) / span,
        ];
        let mut a = [Complex64::new(0.0, 0.0); 2];
        for j in 0..2 {
            let mut acc = zddot[j];
            for k in 0..2 {
                for l in 0..2 {
                    acc += pi.component(j, k, l).eval(&here.z)? * here.zdot[k] * here.zdot[l];
                }
            }
            a[j] = acc;
        }
        let cross = here.zdot[0] * a[1] - here.zdot[1] * a[0];
        worst = worst.max(cross.norm());
    }
    Ok(worst)
}
