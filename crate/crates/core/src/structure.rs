//! Connections and complex projective structures on a chart.
//!
//! A (pseudo-)Kähler metric is given by its hermitian component field
//! `g_{i j̄}`; its Levi-Civita connection is extracted symbolically and
//! projected onto the trace-adjusted invariants `Π^i_{jk}` that determine the
//! projective class. All symmetric pairs of lower indices are stored once.

use crate::expr::{ChartPoint, EvalError, Expression, VarIndex};
use num_complex::Complex64;

/// Tolerance below which a metric determinant counts as degenerate.
pub const DEGENERATE_DET_TOL: f64 = 1e-12;
/// Tolerance for the Kähler symmetry residual of `∂g`.
pub const KAHLER_TOL: f64 = 1e-9;
/// Tolerance for the trace-free check on directly supplied structures.
pub const TRACE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, thiserror::Error)]
pub enum StructureError {
    #[error("metric is degenerate (|det| <= {DEGENERATE_DET_TOL:e}) at every validation point")]
    DegenerateMetric,
    #[error("metric fails the Kähler symmetry check: residual {residual:e} exceeds {tolerance:e}")]
    NotKahler { residual: f64, tolerance: f64 },
    #[error("structure fails the trace-free check: residual {residual:e} exceeds {tolerance:e}")]
    NotTraceFree { residual: f64, tolerance: f64 },
    #[error("hermiticity check failed: residual {residual:e} exceeds {tolerance:e}")]
    NotHermitian { residual: f64, tolerance: f64 },
    #[error("no validation point could be evaluated")]
    NoUsableSamples,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Index into the symmetric pair storage: (0,0) -> 0, (0,1)/(1,0) -> 1, (1,1) -> 2.
#[inline]
pub(crate) fn sym(j: usize, k: usize) -> usize {
    debug_assert!(j < 2 && k < 2);
    j + k
}

/// Rectangular grid of chart points: `n` values per real axis in
/// `[-half_width, half_width]`, over all four real coordinates.
pub fn sample_grid(n: usize, half_width: f64) -> Vec<ChartPoint> {
    let axis: Vec<f64> = if n <= 1 {
        vec![0.0]
    } else {
        (0..n)
            .map(|k| -half_width + 2.0 * half_width * (k as f64) / ((n - 1) as f64))
            .collect()
    };
    let mut points = Vec::with_capacity(axis.len().pow(4));
    for &x1 in &axis {
        for &y1 in &axis {
            for &x2 in &axis {
                for &y2 in &axis {
                    points.push(ChartPoint::from_reals([x1, y1, x2, y2]));
                }
            }
        }
    }
    points
}

/// The default validation grid: 5 points per axis in `[-0.9, 0.9]^4`.
pub fn default_grid() -> Vec<ChartPoint> {
    sample_grid(5, 0.9)
}

/// Hermitian metric component field `g_{i j̄}`. The lower-left component is
/// stored as the conjugate of the upper-right one, so hermiticity holds by
/// construction.
#[derive(Clone, Debug)]
pub struct HermitianMetricField {
    g: [[Expression; 2]; 2],
}

impl HermitianMetricField {
    /// Builds the field from the independent components `g_{1 1̄}`, `g_{1 2̄}`,
    /// `g_{2 2̄}`.
    pub fn new(g11: Expression, g12: Expression, g22: Expression) -> HermitianMetricField {
        let g21 = g12.conj();
        HermitianMetricField { g: [[g11, g12], [g21, g22]] }
    }

    /// Builds the field from a real potential: `g_{i j̄} = ∂_i ∂_j̄ φ`.
    pub fn from_potential(phi: &Expression) -> HermitianMetricField {
        let d1 = phi.wirtinger(VarIndex::Z1, false);
        let d2 = phi.wirtinger(VarIndex::Z2, false);
        HermitianMetricField::new(
            d1.wirtinger(VarIndex::Z1, true),
            d1.wirtinger(VarIndex::Z2, true),
            d2.wirtinger(VarIndex::Z2, true),
        )
    }

    /// The Fubini-Study chart metric `g_{i j̄} = δ_{ij}/(1+|z|²) - z̄^i z^j/(1+|z|²)²`.
    pub fn fubini_study() -> HermitianMetricField {
        let z1 = Expression::var(VarIndex::Z1);
        let z2 = Expression::var(VarIndex::Z2);
        let q = Expression::one()
            .add(&z1.mul(&z1.conj()))
            .add(&z2.mul(&z2.conj()));
        let q2 = q.mul(&q);
        let g11 = Expression::one().div(&q).sub(&z1.conj().mul(&z1).div(&q2));
        let g12 = z1.conj().mul(&z2).div(&q2).neg();
        let g22 = Expression::one().div(&q).sub(&z2.conj().mul(&z2).div(&q2));
        HermitianMetricField::new(g11, g12, g22)
    }

    /// The flat chart metric with identity components.
    pub fn identity() -> HermitianMetricField {
        HermitianMetricField::new(Expression::one(), Expression::zero(), Expression::one())
    }

    /// Component `g_{(i+1) (j̄+1)}` with 0-based slots.
    pub fn component(&self, i: usize, jbar: usize) -> &Expression {
        &self.g[i][jbar]
    }

    /// Symbolic determinant `g_{1 1̄} g_{2 2̄} - g_{1 2̄} g_{2 1̄}`.
    pub fn det_expr(&self) -> Expression {
        self.g[0][0].mul(&self.g[1][1]).sub(&self.g[0][1].mul(&self.g[1][0]))
    }

    /// Evaluates the 2x2 component matrix at a point.
    pub fn eval_matrix(&self, p: &ChartPoint) -> Result<[[Complex64; 2]; 2], EvalError> {
        let mut m = [[Complex64::new(0.0, 0.0); 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                m[i][j] = self.g[i][j].eval(p)?;
            }
        }
        Ok(m)
    }

    /// Sup norm over `samples` of the Kähler symmetry residual
    /// `|∂_1 g_{2 j̄} - ∂_2 g_{1 j̄}|`. Points that fail to evaluate are
    /// skipped; errors out if none evaluates.
    pub fn kahler_residual(&self, samples: &[ChartPoint]) -> Result<f64, StructureError> {
        let mut residuals = Vec::with_capacity(4);
        for jbar in 0..2 {
            let a = self.g[1][jbar].wirtinger(VarIndex::Z1, false);
            let b = self.g[0][jbar].wirtinger(VarIndex::Z2, false);
            residuals.push(a.sub(&b));
        }
        let mut sup: f64 = 0.0;
        let mut evaluated = 0usize;
        for p in samples {
            let mut ok = true;
            let mut local: f64 = 0.0;
            for r in &residuals {
                match r.eval(p) {
                    Ok(v) => local = local.max(v.norm()),
                    Err(_) => {
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                evaluated += 1;
                sup = sup.max(local);
            }
        }
        if evaluated == 0 {
            return Err(StructureError::NoUsableSamples);
        }
        Ok(sup)
    }
}

/// Complex Christoffel symbols `Γ^i_{jk}`, symmetric in the lower pair.
#[derive(Clone, Debug)]
pub struct ChristoffelField {
    c: [[Expression; 3]; 2],
}

impl ChristoffelField {
    /// Builds from per-index components; `f(i, j, k)` is queried once per
    /// symmetric slot with `j <= k`.
    pub fn from_fn(mut f: impl FnMut(usize, usize, usize) -> Expression) -> ChristoffelField {
        let build = |f: &mut dyn FnMut(usize, usize, usize) -> Expression, i: usize| {
            [f(i, 0, 0), f(i, 0, 1), f(i, 1, 1)]
        };
        ChristoffelField { c: [build(&mut f, 0), build(&mut f, 1)] }
    }

    pub fn zero() -> ChristoffelField {
        ChristoffelField::from_fn(|_, _, _| Expression::zero())
    }

    /// `Γ^i_{jk}` with 0-based slots.
    pub fn component(&self, i: usize, j: usize, k: usize) -> &Expression {
        &self.c[i][sym(j, k)]
    }

    /// Trace `Γ^l_{lk}` as an expression.
    pub fn trace(&self, k: usize) -> Expression {
        self.component(0, 0, k).add(self.component(1, 1, k))
    }
}

/// The complex projective invariants `Π^i_{jk}`: symmetric in the lower pair
/// and trace-free.
#[derive(Clone, Debug)]
pub struct ProjectiveStructure {
    c: [[Expression; 3]; 2],
}

impl ProjectiveStructure {
    /// The flat structure, `Π = 0`.
    pub fn flat() -> ProjectiveStructure {
        ProjectiveStructure { c: [[Expression::zero(), Expression::zero(), Expression::zero()], [Expression::zero(), Expression::zero(), Expression::zero()]] }
    }

    /// Builds a structure from directly supplied components (symmetry is by
    /// storage), checking trace-freeness numerically on `samples`.
    pub fn from_components(
        components: [[Expression; 3]; 2],
        samples: &[ChartPoint],
        tolerance: f64,
    ) -> Result<ProjectiveStructure, StructureError> {
        let s = ProjectiveStructure { c: components };
        let residual = s.trace_residual(samples)?;
        if residual > tolerance {
            return Err(StructureError::NotTraceFree { residual, tolerance });
        }
        Ok(s)
    }

    /// As [`ProjectiveStructure::from_components`] with the default grid and
    /// tolerance.
    pub fn from_components_default(
        components: [[Expression; 3]; 2],
    ) -> Result<ProjectiveStructure, StructureError> {
        ProjectiveStructure::from_components(components, &default_grid(), TRACE_TOL)
    }

    pub(crate) fn from_components_unchecked(c: [[Expression; 3]; 2]) -> ProjectiveStructure {
        ProjectiveStructure { c }
    }

    /// `Π^i_{jk}` with 0-based slots.
    pub fn component(&self, i: usize, j: usize, k: usize) -> &Expression {
        &self.c[i][sym(j, k)]
    }

    /// Evaluates all components at a point, indexed `[i][sym(j,k)]`.
    pub fn eval_at(&self, p: &ChartPoint) -> Result<[[Complex64; 3]; 2], EvalError> {
        let mut out = [[Complex64::new(0.0, 0.0); 3]; 2];
        for i in 0..2 {
            for s in 0..3 {
                out[i][s] = self.c[i][s].eval(p)?;
            }
        }
        Ok(out)
    }

    /// Sup norm over `samples` of the trace `|Π^l_{lk}|`. Points that fail to
    /// evaluate are skipped; errors out if none evaluates.
    pub fn trace_residual(&self, samples: &[ChartPoint]) -> Result<f64, StructureError> {
        let traces = [
            self.component(0, 0, 0).add(self.component(1, 1, 0)),
            self.component(0, 0, 1).add(self.component(1, 1, 1)),
        ];
        let mut sup: f64 = 0.0;
        let mut evaluated = 0usize;
        for p in samples {
            match (traces[0].eval(p), traces[1].eval(p)) {
                (Ok(a), Ok(b)) => {
                    evaluated += 1;
                    sup = sup.max(a.norm().max(b.norm()));
                }
                _ => {}
            }
        }
        if evaluated == 0 {
            return Err(StructureError::NoUsableSamples);
        }
        Ok(sup)
    }
}

/// Lowered invariants `Π_{ij} = Π^k_{il} Π^l_{jk} - ∂_k Π^k_{ij}` (symmetric in
/// value, stored in full).
#[derive(Clone, Debug)]
pub struct LoweredPi {
    m: [[Expression; 2]; 2],
}

impl LoweredPi {
    /// `Π_{(i+1)(j+1)}` with 0-based slots.
    pub fn component(&self, i: usize, j: usize) -> &Expression {
        &self.m[i][j]
    }
}

/// Levi-Civita extraction for a Kähler metric:
/// `Γ^i_{jk} = g^{i s̄} ∂_j g_{k s̄}` with the inverse formed symbolically by
/// adjugate over determinant.
///
/// Validation on `samples`: at least one point must have `|det g|` above
/// [`DEGENERATE_DET_TOL`], and the Kähler symmetry residual must stay below
/// [`KAHLER_TOL`] (the formula presumes a Kähler metric).
pub fn levi_civita(
    g: &HermitianMetricField,
    samples: &[ChartPoint],
) -> Result<ChristoffelField, StructureError> {
    let det = g.det_expr();
    let mut evaluated = 0usize;
    let mut nondegenerate = 0usize;
    for p in samples {
        if let Ok(d) = det.eval(p) {
            evaluated += 1;
            if d.norm() > DEGENERATE_DET_TOL {
                nondegenerate += 1;
            }
        }
    }
    if evaluated == 0 {
        return Err(StructureError::NoUsableSamples);
    }
    if nondegenerate == 0 {
        return Err(StructureError::DegenerateMetric);
    }
    let residual = g.kahler_residual(samples)?;
    if residual > KAHLER_TOL {
        return Err(StructureError::NotKahler { residual, tolerance: KAHLER_TOL });
    }

    // Inverse components q[m][a] of the matrix g_{a b̄}: adjugate over determinant.
    let q = [
        [g.component(1, 1).div(&det), g.component(0, 1).neg().div(&det)],
        [g.component(1, 0).neg().div(&det), g.component(0, 0).div(&det)],
    ];
    let dg = |j: usize, k: usize, m: usize| -> Expression {
        g.component(k, m).wirtinger(VarIndex::from_slot(j), false)
    };
    Ok(ChristoffelField::from_fn(|a, j, k| {
        let mut acc = Expression::zero();
        for m in 0..2 {
            acc = acc.add(&q[m][a].mul(&dg(j, k, m)));
        }
        acc
    }))
}

/// Trace adjustment producing the projective invariants:
/// `Π^i_{jk} = Γ^i_{jk} - (1/3)(Γ^l_{lj} δ^i_k + Γ^l_{lk} δ^i_j)`.
pub fn project(gamma: &ChristoffelField) -> ProjectiveStructure {
    let third = Expression::real(1.0 / 3.0);
    let traces = [gamma.trace(0), gamma.trace(1)];
    let mut comps: [[Expression; 3]; 2] =
        [[Expression::zero(), Expression::zero(), Expression::zero()], [Expression::zero(), Expression::zero(), Expression::zero()]];
    for i in 0..2 {
        for (j, k) in [(0, 0), (0, 1), (1, 1)] {
            let mut e = gamma.component(i, j, k).clone();
            if i == k {
                e = e.sub(&third.mul(&traces[j]));
            }
            if i == j {
                e = e.sub(&third.mul(&traces[k]));
            }
            comps[i][sym(j, k)] = e;
        }
    }
    ProjectiveStructure::from_components_unchecked(comps)
}

/// Projective change of connection: `Γ̂^i_{jk} = Γ^i_{jk} + δ^i_j β_k + δ^i_k β_j`.
pub fn shift(gamma: &ChristoffelField, beta: &[Expression; 2]) -> ChristoffelField {
    ChristoffelField::from_fn(|i, j, k| {
        let mut e = gamma.component(i, j, k).clone();
        if i == j {
            e = e.add(&beta[k]);
        }
        if i == k {
            e = e.add(&beta[j]);
        }
        e
    })
}

/// The lowered invariants `Π_{ij} = Π^k_{il} Π^l_{jk} - ∂_k Π^k_{ij}`.
pub fn pi_lower(pi: &ProjectiveStructure) -> LoweredPi {
    let mut m: [[Expression; 2]; 2] =
        [[Expression::zero(), Expression::zero()], [Expression::zero(), Expression::zero()]];
    for i in 0..2 {
        for j in 0..2 {
            let mut quad = Expression::zero();
            for k in 0..2 {
                for l in 0..2 {
                    quad = quad.add(&pi.component(k, i, l).mul(pi.component(l, j, k)));
                }
            }
            let mut div = Expression::zero();
            for k in 0..2 {
                div = div.add(&pi.component(k, i, j).wirtinger(VarIndex::from_slot(k), false));
            }
            m[i][j] = quad.sub(&div);
        }
    }
    LoweredPi { m }
}
