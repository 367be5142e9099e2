//! Runtime values: integers, exact reals, booleans, lists and score functions.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Real(BigRational),
    List(Arc<Vec<Value>>),
    Score(Arc<ScoreFn>),
}

/// A score function `s(input, r)` over a finite range.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ScoreFn {
    /// Finite table keyed by (input, range element).
    Table(BTreeMap<(Value, Value), BigRational>),
    /// Partial application of a builtin: `s(i, r) = builtin(args.., i, r)`.
    Partial { builtin: String, args: Vec<Value> },
}

impl Value {
    pub fn int(i: i64) -> Value {
        Value::Int(i)
    }

    pub fn real(n: i64, d: i64) -> Value {
        Value::Real(BigRational::new(BigInt::from(n), BigInt::from(d)))
    }

    pub fn list(items: Vec<Value>) -> Value {
        Value::List(Arc::new(items))
    }

    pub fn int_list(items: &[i64]) -> Value {
        Value::list(items.iter().map(|&i| Value::Int(i)).collect())
    }

    pub fn empty_list() -> Value {
        Value::list(Vec::new())
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Value]> {
        match self {
            Value::List(l) => Some(l.as_slice()),
            _ => None,
        }
    }

    /// Numeric value as an exact rational (ints promoted).
    pub fn as_rational(&self) -> Option<BigRational> {
        match self {
            Value::Int(i) => Some(BigRational::from_integer(BigInt::from(*i))),
            Value::Real(r) => Some(r.clone()),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Real(r) => r.to_f64(),
            _ => None,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Value::Int(_) | Value::Real(_))
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Bool(_) => "bool",
            Value::Int(_) => "int",
            Value::Real(_) => "real",
            Value::List(_) => "list",
            Value::Score(_) => "score",
        }
    }

    /// Equality with int/real promotion at every level.
    pub fn num_eq(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => a == b,
            (Value::List(a), Value::List(b)) => {
                a.len() == b.len() && a.iter().zip(b.iter()).all(|(x, y)| x.num_eq(y))
            }
            (a, b) if a.is_numeric() && b.is_numeric() => a.as_rational() == b.as_rational(),
            (a, b) => a == b,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Value::Bool(b) => serde_json::Value::Bool(*b),
            Value::Int(i) => serde_json::Value::from(*i),
            Value::Real(r) => {
                let f = r.to_f64().unwrap_or(f64::NAN);
                serde_json::Number::from_f64(f)
                    .map(serde_json::Value::Number)
                    .unwrap_or(serde_json::Value::Null)
            }
            Value::List(l) => serde_json::Value::Array(l.iter().map(Value::to_json).collect()),
            Value::Score(_) => serde_json::Value::String(self.to_string()),
        }
    }
}

/// Converts a finite f64 to the exactly equal rational.
pub fn rational_from_f64(f: f64) -> Option<BigRational> {
    BigRational::from_float(f)
}

/// Canonical text for a rational: integers as `3.0`, finite decimals as `0.25`,
/// everything else as `(1/3)`.
pub fn fmt_rational(r: &BigRational) -> String {
    if r.is_integer() {
        return format!("{}.0", r.to_integer());
    }
    let mut den = r.denom().clone();
    let two = BigInt::from(2);
    let five = BigInt::from(5);
    let mut twos = 0u32;
    let mut fives = 0u32;
    while (&den % &two).is_zero() {
        den /= &two;
        twos += 1;
    }
    while (&den % &five).is_zero() {
        den /= &five;
        fives += 1;
    }
    if !den.is_one() {
        return format!("({}/{})", r.numer(), r.denom());
    }
    let digits = twos.max(fives);
    let scaled = (r.abs() * BigRational::from_integer(BigInt::from(10).pow(digits))).to_integer();
    let s = format!("{:0>width$}", scaled, width = digits as usize + 1);
    let (int_part, frac) = s.split_at(s.len() - digits as usize);
    let sign = if r.is_negative() { "-" } else { "" };
    format!("{sign}{int_part}.{frac}")
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Real(r) => write!(f, "{}", fmt_rational(r)),
            Value::List(l) => {
                write!(f, "[")?;
                for (i, v) in l.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{v}")?;
                }
                write!(f, "]")
            }
            Value::Score(s) => match s.as_ref() {
                ScoreFn::Table(t) => {
                    write!(f, "score{{")?;
                    for (i, ((k, r), v)) in t.iter().enumerate() {
                        if i > 0 {
                            write!(f, ", ")?;
                        }
                        write!(f, "({k}, {r}): {}", fmt_rational(v))?;
                    }
                    write!(f, "}}")
                }
                ScoreFn::Partial { builtin, args } => {
                    write!(f, "score[{builtin}](")?;
                    for (i, a) in args.iter().enumerate() {
                        if i > 0 {
                            write!(f, ", ")?;
                        }
                        write!(f, "{a}")?;
                    }
                    write!(f, ")")
                }
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rational_formatting() {
        assert_eq!(fmt_rational(&BigRational::new(1.into(), 2.into())), "0.5");
        assert_eq!(fmt_rational(&BigRational::new((-1).into(), 10.into())), "-0.1");
        assert_eq!(fmt_rational(&BigRational::new(3.into(), 1.into())), "3.0");
        assert_eq!(fmt_rational(&BigRational::new(1.into(), 3.into())), "(1/3)");
        assert_eq!(fmt_rational(&BigRational::new(5.into(), 4.into())), "1.25");
    }

    #[test]
    fn promotion_equality() {
        assert!(Value::Int(2).num_eq(&Value::real(4, 2)));
        assert!(!Value::Int(2).num_eq(&Value::Bool(true)));
        assert!(Value::int_list(&[1, 2]).num_eq(&Value::int_list(&[1, 2])));
    }
}
