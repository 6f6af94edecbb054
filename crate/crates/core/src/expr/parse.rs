//! Recursive-descent parser for the expression grammar:
//!
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := factor (('*'|'/') factor)*
//! factor := atom ['^' integer]
//! atom   := number | 'i' | 'z1' | 'z2' | 'conj' '(' expr ')' | '-' atom | '(' expr ')'
//! ```
//!
//! Numbers are decimal with optional fraction and exponent. Errors carry the
//! byte offset of the offending input.

use super::{Expression, VarIndex};
use std::fmt;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParseErrorKind {
    UnexpectedChar(char),
    InvalidNumber,
    UnknownIdentifier(String),
    UnexpectedToken { found: String, expected: &'static str },
    UnexpectedEnd { expected: &'static str },
    ExponentOutOfRange,
    TooDeeplyNested,
}

/// Syntax error with the byte offset where it was detected.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ParseErrorKind::UnexpectedChar(c) => {
                write!(f, "syntax error at byte {}: unexpected character {c:?}", self.offset)
            }
            ParseErrorKind::InvalidNumber => {
                write!(f, "syntax error at byte {}: malformed number", self.offset)
            }
            ParseErrorKind::UnknownIdentifier(name) => {
                write!(f, "syntax error at byte {}: unknown identifier {name:?}", self.offset)
            }
            ParseErrorKind::UnexpectedToken { found, expected } => write!(
                f,
                "syntax error at byte {}: unexpected {found}, expected {expected}",
                self.offset
            ),
            ParseErrorKind::UnexpectedEnd { expected } => write!(
                f,
                "syntax error at byte {}: unexpected end of input, expected {expected}",
                self.offset
            ),
            ParseErrorKind::ExponentOutOfRange => {
                write!(f, "syntax error at byte {}: exponent out of range", self.offset)
            }
            ParseErrorKind::TooDeeplyNested => {
                write!(f, "syntax error at byte {}: expression nested too deeply", self.offset)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Number(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

impl Token {
    fn describe(&self) -> String {
        match self {
            Token::Number(x) => format!("number {x}"),
            Token::Ident(s) => format!("identifier {s:?}"),
            Token::Plus => "'+'".into(),
            Token::Minus => "'-'".into(),
            Token::Star => "'*'".into(),
            Token::Slash => "'/'".into(),
            Token::Caret => "'^'".into(),
            Token::LParen => "'('".into(),
            Token::RParen => "')'".into(),
        }
    }
}

fn lex(text: &str) -> Result<Vec<(Token, usize)>, ParseError> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let b = bytes[pos];
        match b {
            b' ' | b'\t' | b'\n' | b'\r' => pos += 1,
            b'+' => {
                tokens.push((Token::Plus, pos));
                pos += 1;
            }
            b'-' => {
                tokens.push((Token::Minus, pos));
                pos += 1;
            }
            b'*' => {
                tokens.push((Token::Star, pos));
                pos += 1;
            }
            b'/' => {
                tokens.push((Token::Slash, pos));
                pos += 1;
            }
            b'^' => {
                tokens.push((Token::Caret, pos));
                pos += 1;
            }
            b'(' => {
                tokens.push((Token::LParen, pos));
                pos += 1;
            }
            b')' => {
                tokens.push((Token::RParen, pos));
                pos += 1;
            }
            b'0'..=b'9' => {
                let start = pos;
                while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                    pos += 1;
                }
                if pos < bytes.len() && bytes[pos] == b'.' {
                    pos += 1;
                    if pos >= bytes.len() || !bytes[pos].is_ascii_digit() {
                        return Err(ParseError { offset: start, kind: ParseErrorKind::InvalidNumber });
                    }
                    while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                        pos += 1;
                    }
                }
                if pos < bytes.len() && (bytes[pos] == b'e' || bytes[pos] == b'E') {
                    let mut probe = pos + 1;
                    if probe < bytes.len() && (bytes[probe] == b'+' || bytes[probe] == b'-') {
                        probe += 1;
                    }
                    // Only consume the exponent if digits follow; otherwise the
                    // 'e' starts an identifier and will be rejected there.
                    if probe < bytes.len() && bytes[probe].is_ascii_digit() {
                        pos = probe;
                        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                            pos += 1;
                        }
                    }
                }
                let lit = &text[start..pos];
                let value: f64 = lit
                    .parse()
                    .map_err(|_| ParseError { offset: start, kind: ParseErrorKind::InvalidNumber })?;
                tokens.push((Token::Number(value), start));
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let start = pos;
                while pos < bytes.len()
                    && (bytes[pos].is_ascii_alphanumeric() || bytes[pos] == b'_')
                {
                    pos += 1;
                }
                tokens.push((Token::Ident(text[start..pos].to_string()), start));
            }
            _ => {
                let ch = text[pos..].chars().next().unwrap_or('?');
                return Err(ParseError { offset: pos, kind: ParseErrorKind::UnexpectedChar(ch) });
            }
        }
    }
    Ok(tokens)
}

const MAX_DEPTH: usize = 256;

struct Parser<'a> {
    tokens: &'a [(Token, usize)],
    cursor: usize,
    end: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&(Token, usize)> {
        self.tokens.get(self.cursor)
    }

    fn bump(&mut self) -> Option<&(Token, usize)> {
        let t = self.tokens.get(self.cursor);
        if t.is_some() {
            self.cursor += 1;
        }
        t
    }

    fn error_here(&self, expected: &'static str) -> ParseError {
        match self.peek() {
            Some((tok, offset)) => ParseError {
                offset: *offset,
                kind: ParseErrorKind::UnexpectedToken { found: tok.describe(), expected },
            },
            None => ParseError {
                offset: self.end,
                kind: ParseErrorKind::UnexpectedEnd { expected },
            },
        }
    }

    fn expr(&mut self, depth: usize) -> Result<Expression, ParseError> {
        if depth > MAX_DEPTH {
            let offset = self.peek().map_or(self.end, |t| t.1);
            return Err(ParseError { offset, kind: ParseErrorKind::TooDeeplyNested });
        }
        let mut acc = self.term(depth + 1)?;
        while let Some((tok, _)) = self.peek() {
            match tok {
                Token::Plus => {
                    self.bump();
                    let rhs = self.term(depth + 1)?;
                    acc = acc.add(&rhs);
                }
                Token::Minus => {
                    self.bump();
                    let rhs = self.term(depth + 1)?;
                    acc = acc.sub(&rhs);
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn term(&mut self, depth: usize) -> Result<Expression, ParseError> {
        let mut acc = self.factor(depth + 1)?;
        while let Some((tok, _)) = self.peek() {
            match tok {
                Token::Star => {
                    self.bump();
                    let rhs = self.factor(depth + 1)?;
                    acc = acc.mul(&rhs);
                }
                Token::Slash => {
                    self.bump();
                    let rhs = self.factor(depth + 1)?;
                    acc = acc.div(&rhs);
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn factor(&mut self, depth: usize) -> Result<Expression, ParseError> {
        let base = self.atom(depth + 1)?;
        if let Some((Token::Caret, _)) = self.peek() {
            self.bump();
            let exponent = self.integer()?;
            return Ok(base.powi(exponent));
        }
        Ok(base)
    }

    fn integer(&mut self) -> Result<i32, ParseError> {
        let mut negative = false;
        if let Some((Token::Minus, _)) = self.peek() {
            self.bump();
            negative = true;
        }
        match self.bump() {
            Some((Token::Number(x), offset)) => {
                let offset = *offset;
                let x = *x;
                if x.fract() != 0.0 || x.abs() > f64::from(i32::MAX) {
                    return Err(ParseError { offset, kind: ParseErrorKind::ExponentOutOfRange });
                }
                let mut n = x as i32;
                if negative {
                    n = -n;
                }
                Ok(n)
            }
            Some((tok, offset)) => Err(ParseError {
                offset: *offset,
                kind: ParseErrorKind::UnexpectedToken {
                    found: tok.describe(),
                    expected: "integer exponent",
                },
            }),
            None => Err(ParseError {
                offset: self.end,
                kind: ParseErrorKind::UnexpectedEnd { expected: "integer exponent" },
            }),
        }
    }

    fn atom(&mut self, depth: usize) -> Result<Expression, ParseError> {
        if depth > MAX_DEPTH {
            let offset = self.peek().map_or(self.end, |t| t.1);
            return Err(ParseError { offset, kind: ParseErrorKind::TooDeeplyNested });
        }
        match self.peek() {
            Some((Token::Number(x), _)) => {
                let x = *x;
                self.bump();
                Ok(Expression::real(x))
            }
            Some((Token::Ident(name), offset)) => {
                let name = name.clone();
                let offset = *offset;
                self.bump();
                match name.as_str() {
                    "i" => Ok(Expression::imag_unit()),
                    "z1" => Ok(Expression::var(VarIndex::Z1)),
                    "z2" => Ok(Expression::var(VarIndex::Z2)),
                    "conj" => {
                        match self.peek() {
                            Some((Token::LParen, _)) => {
                                self.bump();
                            }
                            Some((tok, offset)) => {
                                return Err(ParseError {
                                    offset: *offset,
                                    kind: ParseErrorKind::UnexpectedToken {
                                        found: tok.describe(),
                                        expected: "'(' after conj",
                                    },
                                })
                            }
                            None => {
                                return Err(ParseError {
                                    offset: self.end,
                                    kind: ParseErrorKind::UnexpectedEnd { expected: "'(' after conj" },
                                })
                            }
                        }
                        let inner = self.expr(depth + 1)?;
                        match self.bump() {
                            Some((Token::RParen, _)) => Ok(inner.conj()),
                            Some((tok, offset)) => Err(ParseError {
                                offset: *offset,
                                kind: ParseErrorKind::UnexpectedToken {
                                    found: tok.describe(),
                                    expected: "')'",
                                },
                            }),
                            None => Err(ParseError {
                                offset: self.end,
                                kind: ParseErrorKind::UnexpectedEnd { expected: "')'" },
                            }),
                        }
                    }
                    _ => Err(ParseError {
                        offset,
                        kind: ParseErrorKind::UnknownIdentifier(name),
                    }),
                }
            }
            Some((Token::Minus, _)) => {
                self.bump();
                let inner = self.atom(depth + 1)?;
                Ok(inner.neg())
            }
            Some((Token::LParen, _)) => {
                self.bump();
                let inner = self.expr(depth + 1)?;
                match self.bump() {
                    Some((Token::RParen, _)) => Ok(inner),
                    Some((tok, offset)) => Err(ParseError {
                        offset: *offset,
                        kind: ParseErrorKind::UnexpectedToken {
                            found: tok.describe(),
                            expected: "')'",
                        },
                    }),
                    None => Err(ParseError {
                        offset: self.end,
                        kind: ParseErrorKind::UnexpectedEnd { expected: "')'" },
                    }),
                }
            }
            _ => Err(self.error_here("number, 'i', 'z1', 'z2', 'conj', '-' or '('")),
        }
    }
}

pub fn parse(text: &str) -> Result<Expression, ParseError> {
    let tokens = lex(text)?;
    let mut parser = Parser { tokens: &tokens, cursor: 0, end: text.len() };
    let e = parser.expr(0)?;
    if let Some((tok, offset)) = parser.peek() {
        return Err(ParseError {
            offset: *offset,
            kind: ParseErrorKind::UnexpectedToken { found: tok.describe(), expected: "end of input" },
        });
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::ChartPoint;
    use num_complex::Complex64;

    fn eval_at(src: &str, z1: Complex64, z2: Complex64) -> Complex64 {
        Expression::parse(src)
            .unwrap()
            .eval(&ChartPoint::new(z1, z2))
            .unwrap()
    }

    #[test]
    fn unknown_identifier_is_rejected_with_offset() {
        let err = Expression::parse("z3").unwrap_err();
        assert_eq!(err.offset, 0);
        assert_eq!(err.kind, ParseErrorKind::UnknownIdentifier("z3".into()));
        let err = Expression::parse("1+w").unwrap_err();
        assert_eq!(err.offset, 2);
    }

    #[test]
    fn scaled_square_with_imaginary_unit() {
        let v = eval_at("(1+i)*z2^2", Complex64::new(0.0, 0.0), Complex64::new(0.0, 1.0));
        // (1+i) * (i)^2 = -(1+i)
        assert_eq!(v, Complex64::new(-1.0, -1.0));
    }

    #[test]
    fn precedence_and_associativity() {
        let z1 = Complex64::new(2.0, 0.0);
        let z2 = Complex64::new(3.0, 0.0);
        assert_eq!(eval_at("1+2*3", z1, z2), Complex64::new(7.0, 0.0));
        assert_eq!(eval_at("8/2/2", z1, z2), Complex64::new(2.0, 0.0));
        assert_eq!(eval_at("1-2-3", z1, z2), Complex64::new(-4.0, 0.0));
        assert_eq!(eval_at("-z1^2", z1, z2), Complex64::new(4.0, 0.0)); // (-z1)^2
        assert_eq!(eval_at("2^3", z1, z2), Complex64::new(8.0, 0.0));
    }

    #[test]
    fn numbers_with_fraction_and_exponent() {
        let z = Complex64::new(0.0, 0.0);
        assert_eq!(eval_at("2.5e1", z, z), Complex64::new(25.0, 0.0));
        assert_eq!(eval_at("1e-2", z, z), Complex64::new(0.01, 0.0));
        assert!(Expression::parse("1.").is_err());
    }

    #[test]
    fn error_offsets_point_at_the_problem() {
        let err = Expression::parse("z1+*z2").unwrap_err();
        assert_eq!(err.offset, 3);
        let err = Expression::parse("(z1+z2").unwrap_err();
        assert_eq!(err.offset, 6);
        let err = Expression::parse("z1 )").unwrap_err();
        assert_eq!(err.offset, 3);
        let err = Expression::parse("z1^z2").unwrap_err();
        assert_eq!(err.offset, 3);
    }

    #[test]
    fn negative_exponent_parses() {
        let v = eval_at("z1^-2", Complex64::new(2.0, 0.0), Complex64::new(0.0, 0.0));
        assert_eq!(v, Complex64::new(0.25, 0.0));
    }

    #[test]
    fn deep_nesting_is_bounded() {
        let mut src = String::new();
        for _ in 0..600 {
            src.push('(');
        }
        src.push_str("z1");
        for _ in 0..600 {
            src.push(')');
        }
        let err = Expression::parse(&src).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::TooDeeplyNested);
    }
}
