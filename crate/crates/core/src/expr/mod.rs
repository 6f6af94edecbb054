//! Symbolic chart functions on a two-dimensional holomorphic coordinate chart.
//!
//! An [`Expression`] is an immutable tree over the chart variables `z1`, `z2`,
//! their conjugates and complex constants, closed under exact Wirtinger
//! differentiation (`z^i` and `conj(z^i)` are treated as independent).
//! Construction applies only light local simplification (constant folding,
//! additive/multiplicative units) so that repeated differentiation stays
//! bounded; no canonical form is attempted.
//!
//! Expressions are reference-counted immutable values: cloning is cheap and
//! evaluation/differentiation are pure, so they can be shared freely across
//! threads.

use num_complex::Complex64;
use std::fmt;
use std::sync::Arc;

mod parse;

pub use parse::{ParseError, ParseErrorKind};

/// Index of a chart variable, `z1` or `z2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum VarIndex {
    Z1,
    Z2,
}

impl VarIndex {
    pub const ALL: [VarIndex; 2] = [VarIndex::Z1, VarIndex::Z2];

    /// Maps a 0-based slot to a variable index.
    pub fn from_slot(slot: usize) -> VarIndex {
        match slot {
            0 => VarIndex::Z1,
            1 => VarIndex::Z2,
            _ => panic!("variable slot out of range: {slot}"),
        }
    }

    /// 0-based slot of this variable (`z1` -> 0, `z2` -> 1).
    pub fn slot(self) -> usize {
        match self {
            VarIndex::Z1 => 0,
            VarIndex::Z2 => 1,
        }
    }
}

/// A point of the coordinate chart.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChartPoint {
    pub z1: Complex64,
    pub z2: Complex64,
}

impl ChartPoint {
    pub fn new(z1: Complex64, z2: Complex64) -> ChartPoint {
        ChartPoint { z1, z2 }
    }

    /// Builds a point from real coordinates `[Re z1, Im z1, Re z2, Im z2]`.
    pub fn from_reals(r: [f64; 4]) -> ChartPoint {
        ChartPoint {
            z1: Complex64::new(r[0], r[1]),
            z2: Complex64::new(r[2], r[3]),
        }
    }

    pub fn to_reals(&self) -> [f64; 4] {
        [self.z1.re, self.z1.im, self.z2.re, self.z2.im]
    }

    pub fn coord(&self, i: VarIndex) -> Complex64 {
        match i {
            VarIndex::Z1 => self.z1,
            VarIndex::Z2 => self.z2,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.z1.re.is_finite()
            && self.z1.im.is_finite()
            && self.z2.re.is_finite()
            && self.z2.im.is_finite()
    }
}

impl fmt::Display for ChartPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.z1, self.z2)
    }
}

/// Runtime evaluation failure.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("division by zero at {at}")]
    DivisionByZero { at: ChartPoint },
}

#[derive(Debug)]
enum Node {
    Const(Complex64),
    Var(VarIndex, bool),
    Neg(Expression),
    Conj(Expression),
    Add(Expression, Expression),
    Sub(Expression, Expression),
    Mul(Expression, Expression),
    Div(Expression, Expression),
    Pow(Expression, i32),
}

/// A symbolic function of the chart variables.
#[derive(Clone)]
pub struct Expression(Arc<Node>);

impl Expression {
    fn new(node: Node) -> Expression {
        Expression(Arc::new(node))
    }

    pub fn constant(c: Complex64) -> Expression {
        Expression::new(Node::Const(c))
    }

    pub fn real(x: f64) -> Expression {
        Expression::constant(Complex64::new(x, 0.0))
    }

    pub fn zero() -> Expression {
        Expression::real(0.0)
    }

    pub fn one() -> Expression {
        Expression::real(1.0)
    }

    pub fn imag_unit() -> Expression {
        Expression::constant(Complex64::new(0.0, 1.0))
    }

    /// The chart variable `z1` or `z2`.
    pub fn var(i: VarIndex) -> Expression {
        Expression::new(Node::Var(i, false))
    }

    /// The conjugated chart variable `conj(z1)` or `conj(z2)`.
    pub fn var_conj(i: VarIndex) -> Expression {
        Expression::new(Node::Var(i, true))
    }

    fn as_const(&self) -> Option<Complex64> {
        match *self.0 {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    fn is_zero(&self) -> bool {
        self.as_const() == Some(Complex64::new(0.0, 0.0))
    }

    fn is_one(&self) -> bool {
        self.as_const() == Some(Complex64::new(1.0, 0.0))
    }

    pub fn add(&self, rhs: &Expression) -> Expression {
        if self.is_zero() {
            return rhs.clone();
        }
        if rhs.is_zero() {
            return self.clone();
        }
        if let (Some(a), Some(b)) = (self.as_const(), rhs.as_const()) {
            return Expression::constant(a + b);
        }
        Expression::new(Node::Add(self.clone(), rhs.clone()))
    }

    pub fn sub(&self, rhs: &Expression) -> Expression {
        if rhs.is_zero() {
            return self.clone();
        }
        if self.is_zero() {
            return rhs.neg();
        }
        if let (Some(a), Some(b)) = (self.as_const(), rhs.as_const()) {
            return Expression::constant(a - b);
        }
        Expression::new(Node::Sub(self.clone(), rhs.clone()))
    }

    pub fn mul(&self, rhs: &Expression) -> Expression {
        if self.is_zero() || rhs.is_zero() {
            return Expression::zero();
        }
        if self.is_one() {
            return rhs.clone();
        }
        if rhs.is_one() {
            return self.clone();
        }
        if let (Some(a), Some(b)) = (self.as_const(), rhs.as_const()) {
            return Expression::constant(a * b);
        }
        Expression::new(Node::Mul(self.clone(), rhs.clone()))
    }

    /// Quotient. `0/x` is kept unevaluated so that division-by-zero errors
    /// surface at evaluation time.
    pub fn div(&self, rhs: &Expression) -> Expression {
        if rhs.is_one() {
            return self.clone();
        }
        if let (Some(a), Some(b)) = (self.as_const(), rhs.as_const()) {
            if b != Complex64::new(0.0, 0.0) {
                return Expression::constant(a / b);
            }
        }
        Expression::new(Node::Div(self.clone(), rhs.clone()))
    }

    pub fn neg(&self) -> Expression {
        if let Some(c) = self.as_const() {
            return Expression::constant(-c);
        }
        if let Node::Neg(inner) = &*self.0 {
            return inner.clone();
        }
        Expression::new(Node::Neg(self.clone()))
    }

    pub fn conj(&self) -> Expression {
        if let Some(c) = self.as_const() {
            return Expression::constant(c.conj());
        }
        match &*self.0 {
            Node::Conj(inner) => inner.clone(),
            Node::Var(i, barred) => Expression::new(Node::Var(*i, !barred)),
            _ => Expression::new(Node::Conj(self.clone())),
        }
    }

    /// Integer power.
    pub fn powi(&self, n: i32) -> Expression {
        match n {
            0 => Expression::one(),
            1 => self.clone(),
            _ => {
                if let Some(c) = self.as_const() {
                    if c != Complex64::new(0.0, 0.0) || n > 0 {
                        return Expression::constant(c.powi(n));
                    }
                }
                Expression::new(Node::Pow(self.clone(), n))
            }
        }
    }

    /// Evaluates the expression at a chart point with standard complex
    /// arithmetic; `conj` evaluates to complex conjugation.
    pub fn eval(&self, p: &ChartPoint) -> Result<Complex64, EvalError> {
        match &*self.0 {
            Node::Const(c) => Ok(*c),
            Node::Var(i, barred) => {
                let v = p.coord(*i);
                Ok(if *barred { v.conj() } else { v })
            }
            Node::Neg(e) => Ok(-e.eval(p)?),
            Node::Conj(e) => Ok(e.eval(p)?.conj()),
            Node::Add(a, b) => Ok(a.eval(p)? + b.eval(p)?),
            Node::Sub(a, b) => Ok(a.eval(p)? - b.eval(p)?),
            Node::Mul(a, b) => Ok(a.eval(p)? * b.eval(p)?),
            Node::Div(a, b) => {
                let den = b.eval(p)?;
                if den == Complex64::new(0.0, 0.0) {
                    return Err(EvalError::DivisionByZero { at: *p });
                }
                Ok(a.eval(p)? / den)
            }
            Node::Pow(e, n) => {
                let base = e.eval(p)?;
                if *n < 0 && base == Complex64::new(0.0, 0.0) {
                    return Err(EvalError::DivisionByZero { at: *p });
                }
                Ok(base.powi(*n))
            }
        }
    }

    /// Exact Wirtinger derivative with respect to `z^i` (`barred = false`) or
    /// `conj(z^i)` (`barred = true`). Total on well-formed trees.
    pub fn wirtinger(&self, i: VarIndex, barred: bool) -> Expression {
        match &*self.0 {
            Node::Const(_) => Expression::zero(),
            Node::Var(j, vb) => {
                if *j == i && *vb == barred {
                    Expression::one()
                } else {
                    Expression::zero()
                }
            }
            Node::Neg(e) => e.wirtinger(i, barred).neg(),
            Node::Conj(e) => e.wirtinger(i, !barred).conj(),
            Node::Add(a, b) => a.wirtinger(i, barred).add(&b.wirtinger(i, barred)),
            Node::Sub(a, b) => a.wirtinger(i, barred).sub(&b.wirtinger(i, barred)),
            Node::Mul(a, b) => {
                let da = a.wirtinger(i, barred);
                let db = b.wirtinger(i, barred);
                da.mul(b).add(&a.mul(&db))
            }
            Node::Div(a, b) => {
                let da = a.wirtinger(i, barred);
                let db = b.wirtinger(i, barred);
                let num = da.mul(b).sub(&a.mul(&db));
                num.div(&b.mul(b))
            }
            Node::Pow(e, n) => {
                if *n == 0 {
                    return Expression::zero();
                }
                let de = e.wirtinger(i, barred);
                Expression::real(f64::from(*n))
                    .mul(&e.powi(n - 1))
                    .mul(&de)
            }
        }
    }

    /// Parses an expression from its textual grammar.
    pub fn parse(text: &str) -> Result<Expression, ParseError> {
        parse::parse(text)
    }

    /// Number of nodes in the tree (diagnostic).
    pub fn node_count(&self) -> usize {
        match &*self.0 {
            Node::Const(_) | Node::Var(..) => 1,
            Node::Neg(e) | Node::Conj(e) | Node::Pow(e, _) => 1 + e.node_count(),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                1 + a.node_count() + b.node_count()
            }
        }
    }
}

impl std::ops::Add for &Expression {
    type Output = Expression;
    fn add(self, rhs: &Expression) -> Expression {
        Expression::add(self, rhs)
    }
}

impl std::ops::Sub for &Expression {
    type Output = Expression;
    fn sub(self, rhs: &Expression) -> Expression {
        Expression::sub(self, rhs)
    }
}

impl std::ops::Mul for &Expression {
    type Output = Expression;
    fn mul(self, rhs: &Expression) -> Expression {
        Expression::mul(self, rhs)
    }
}

impl std::ops::Div for &Expression {
    type Output = Expression;
    fn div(self, rhs: &Expression) -> Expression {
        Expression::div(self, rhs)
    }
}

impl std::ops::Neg for &Expression {
    type Output = Expression;
    fn neg(self) -> Expression {
        Expression::neg(self)
    }
}

// Precedence levels used by the printer; matches the parsing grammar.
const PREC_ADD: u8 = 1;
const PREC_MUL: u8 = 2;
const PREC_POW: u8 = 3;
const PREC_ATOM: u8 = 4;

fn fmt_real(x: f64, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    // `{}` on f64 round-trips, so reparsing recovers the exact value.
    if x == x.trunc() && x.abs() < 1e15 {
        write!(f, "{}", x)
    } else {
        write!(f, "{}", x)
    }
}

impl Expression {
    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        let prec = match &*self.0 {
            // Complex constants print their own parentheses, reals print as
            // (possibly negated) number atoms.
            Node::Const(_) | Node::Var(..) | Node::Conj(_) | Node::Neg(_) => PREC_ATOM,
            Node::Pow(..) => PREC_POW,
            Node::Mul(..) | Node::Div(..) => PREC_MUL,
            Node::Add(..) | Node::Sub(..) => PREC_ADD,
        };
        let need_parens = prec < min_prec;
        if need_parens {
            write!(f, "(")?;
        }
        match &*self.0 {
            Node::Const(c) => {
                if c.im == 0.0 {
                    fmt_real(c.re, f)?;
                } else if c.re == 0.0 && c.im == 1.0 {
                    write!(f, "i")?;
                } else if c.re == 0.0 {
                    write!(f, "(")?;
                    fmt_real(c.im, f)?;
                    write!(f, "*i)")?;
                } else {
                    write!(f, "(")?;
                    fmt_real(c.re, f)?;
                    write!(f, "+")?;
                    fmt_real(c.im, f)?;
                    write!(f, "*i)")?;
                }
            }
            Node::Var(i, barred) => {
                let name = match i {
                    VarIndex::Z1 => "z1",
                    VarIndex::Z2 => "z2",
                };
                if *barred {
                    write!(f, "conj({name})")?;
                } else {
                    write!(f, "{name}")?;
                }
            }
            Node::Neg(e) => {
                write!(f, "-")?;
                e.fmt_prec(f, PREC_ATOM)?;
            }
            Node::Conj(e) => {
                write!(f, "conj(")?;
                e.fmt_prec(f, 0)?;
                write!(f, ")")?;
            }
            Node::Add(a, b) => {
                a.fmt_prec(f, PREC_ADD)?;
                write!(f, "+")?;
                b.fmt_prec(f, PREC_MUL)?;
            }
            Node::Sub(a, b) => {
                a.fmt_prec(f, PREC_ADD)?;
                write!(f, "-")?;
                b.fmt_prec(f, PREC_MUL)?;
            }
            Node::Mul(a, b) => {
                a.fmt_prec(f, PREC_MUL)?;
                write!(f, "*")?;
                b.fmt_prec(f, PREC_POW)?;
            }
            Node::Div(a, b) => {
                a.fmt_prec(f, PREC_MUL)?;
                write!(f, "/")?;
                b.fmt_prec(f, PREC_POW)?;
            }
            Node::Pow(e, n) => {
                e.fmt_prec(f, PREC_ATOM)?;
                write!(f, "^{n}")?;
            }
        }
        if need_parens {
            write!(f, ")")?;
        }
        Ok(())
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

impl fmt::Debug for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expression({self})")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn pt(z1: Complex64, z2: Complex64) -> ChartPoint {
        ChartPoint::new(z1, z2)
    }

    #[test]
    fn eval_product_with_conjugate() {
        let e = Expression::parse("z1*conj(z1)").unwrap();
        let v = e.eval(&pt(c(2.0, 0.0), c(0.0, 0.0))).unwrap();
        assert_eq!(v, c(4.0, 0.0));
    }

    #[test]
    fn eval_conj_variable() {
        let e = Expression::parse("conj(z2)").unwrap();
        let v = e.eval(&pt(c(0.0, 0.0), c(0.0, 1.0))).unwrap();
        assert_eq!(v, c(0.0, -1.0));
    }

    #[test]
    fn division_by_zero_is_a_domain_error() {
        let e = Expression::parse("1/z1").unwrap();
        let p = pt(c(0.0, 0.0), c(1.0, 0.0));
        match e.eval(&p) {
            Err(EvalError::DivisionByZero { at }) => assert_eq!(at, p),
            other => panic!("expected division-by-zero, got {other:?}"),
        }
    }

    #[test]
    fn zero_power_of_zero_base_is_one() {
        let e = Expression::var(VarIndex::Z1).powi(0);
        assert_eq!(e.eval(&pt(c(0.0, 0.0), c(0.0, 0.0))).unwrap(), c(1.0, 0.0));
    }

    #[test]
    fn negative_power_of_zero_is_a_domain_error() {
        let e = Expression::parse("z1^-2").unwrap();
        assert!(e.eval(&pt(c(0.0, 0.0), c(0.0, 0.0))).is_err());
    }

    #[test]
    fn derivative_of_square() {
        let e = Expression::parse("z1^2").unwrap();
        let d = e.wirtinger(VarIndex::Z1, false);
        let p = pt(c(3.0, 1.0), c(0.0, 0.0));
        assert_eq!(d.eval(&p).unwrap(), c(6.0, 2.0));
    }

    #[test]
    fn conjugate_variable_is_wirtinger_independent() {
        let e = Expression::parse("conj(z1)").unwrap();
        let d = e.wirtinger(VarIndex::Z1, false);
        assert!(d.is_zero());
    }

    #[test]
    fn product_rule_with_conjugate() {
        // d/d(conj z1) of z1*conj(z1) = z1
        let e = Expression::parse("z1*conj(z1)").unwrap();
        let d = e.wirtinger(VarIndex::Z1, true);
        let p = pt(c(0.3, -0.7), c(0.0, 0.0));
        assert_eq!(d.eval(&p).unwrap(), c(0.3, -0.7));
    }

    #[test]
    fn conjugation_duality_of_derivatives() {
        let e = Expression::parse("(1+i)*z1^2*conj(z2)+z2/(1+z1*conj(z1))").unwrap();
        let p = pt(c(0.4, 0.2), c(-0.3, 0.5));
        for i in VarIndex::ALL {
            for barred in [false, true] {
                let lhs = e.conj().wirtinger(i, barred).eval(&p).unwrap();
                let rhs = e.wirtinger(i, !barred).eval(&p).unwrap().conj();
                assert!((lhs - rhs).norm() < 1e-14, "duality failed: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn derivative_is_linear() {
        let a = Expression::parse("z1^3*conj(z2)").unwrap();
        let b = Expression::parse("z2^2+conj(z1)").unwrap();
        let lam = c(0.7, -1.3);
        let combo = Expression::constant(lam).mul(&a).add(&b);
        let p = pt(c(0.9, -0.1), c(0.2, 0.8));
        for i in VarIndex::ALL {
            for barred in [false, true] {
                let lhs = combo.wirtinger(i, barred).eval(&p).unwrap();
                let rhs =
                    lam * a.wirtinger(i, barred).eval(&p).unwrap() + b.wirtinger(i, barred).eval(&p).unwrap();
                assert!((lhs - rhs).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn display_round_trips_through_parser() {
        let sources = [
            "z1*conj(z1)",
            "(1+i)*z2^2",
            "-z1^2+3.5/(z2-2)",
            "1-2*i*z1",
            "conj(z1+z2)^3",
            "z1^-2",
            "-(z1+z2)",
        ];
        let p = pt(c(0.31, 0.77), c(-0.45, 0.12));
        for src in sources {
            let e = Expression::parse(src).unwrap();
            let printed = e.to_string();
            let reparsed = Expression::parse(&printed)
                .unwrap_or_else(|err| panic!("printed form {printed:?} failed to parse: {err}"));
            let a = e.eval(&p).unwrap();
            let b = reparsed.eval(&p).unwrap();
            assert!((a - b).norm() < 1e-14, "{src} -> {printed}: {a} vs {b}");
        }
    }

    #[test]
    fn derivative_display_round_trips() {
        let e = Expression::parse("z1^3*conj(z2)/(1+z1*conj(z1))").unwrap();
        let d = e.wirtinger(VarIndex::Z1, true);
        let printed = d.to_string();
        let reparsed = Expression::parse(&printed).unwrap();
        let p = pt(c(0.2, -0.6), c(0.4, 0.1));
        let a = d.eval(&p).unwrap();
        let b = reparsed.eval(&p).unwrap();
        assert!((a - b).norm() < 1e-14);
    }
}
