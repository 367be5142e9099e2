//! Evaluation of expressions and formulas over memories.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use thiserror::Error;

use super::builtins::{Registry, RegistryError};
use super::memory::Memory;
use super::value::{rational_from_f64, ScoreFn, Value};
use crate::frontend::ast::*;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("type error in {op}: {detail}")]
    Type { op: String, detail: String },
    #[error("integer overflow in {0}")]
    Overflow(String),
    #[error("unknown builtin or predicate `{0}`")]
    UnknownFunction(String),
    #[error("score function undefined at ({0}, {1})")]
    ScoreUndefined(String, String),
    #[error("no finite domain declared for `{0}`")]
    NoDomain(String),
    #[error("quantifier range too large ({0} values)")]
    RangeTooLarge(i128),
    #[error("builtin `{name}`: {detail}")]
    Builtin { name: String, detail: String },
}

fn type_err(op: &str, detail: impl Into<String>) -> EvalError {
    EvalError::Type { op: op.to_string(), detail: detail.into() }
}

/// Everything needed to evaluate expressions of a unit: builtins, predicates,
/// the mechanism range and enumerated variable domains.
#[derive(Clone, Default)]
pub struct EvalCtx {
    pub registry: Registry,
    pub preds: BTreeMap<String, PredDecl>,
    pub range: Vec<Value>,
    pub domains: BTreeMap<String, Arc<Vec<Value>>>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CtxError {
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

impl EvalCtx {
    pub fn from_header(h: &Header) -> Result<EvalCtx, CtxError> {
        let registry = Registry::for_header(h)?;
        let mut domains = BTreeMap::new();
        for v in &h.vars {
            if let Some(d) = &v.domain {
                domains.insert(v.name.clone(), Arc::new(d.enumerate()));
            }
        }
        Ok(EvalCtx {
            registry,
            preds: h.preds.iter().map(|p| (p.name.clone(), p.clone())).collect(),
            range: h.range_values().to_vec(),
            domains,
        })
    }

    /// Domain of a variable, looked up by its base (untagged) name.
    pub fn domain_of(&self, name: &str) -> Option<&Arc<Vec<Value>>> {
        self.domains.get(name).or_else(|| self.domains.get(split_tag(name).0))
    }

    pub fn eval(&self, e: &Expr, m: &Memory) -> Result<Value, EvalError> {
        let mut bound = Vec::new();
        self.ev(e, m, &mut bound)
    }

    pub fn eval_bool(&self, e: &Expr, m: &Memory) -> Result<bool, EvalError> {
        match self.eval(e, m)? {
            Value::Bool(b) => Ok(b),
            v => Err(type_err("condition", format!("expected bool, got {}", v.type_name()))),
        }
    }

    pub fn eval_int(&self, e: &Expr, m: &Memory) -> Result<i64, EvalError> {
        match self.eval(e, m)? {
            Value::Int(i) => Ok(i),
            v => Err(type_err("expression", format!("expected int, got {}", v.type_name()))),
        }
    }

    /// Evaluates with extra bound variables in scope.
    pub fn eval_with(&self, e: &Expr, m: &Memory, bound: &mut Vec<(String, Value)>) -> Result<Value, EvalError> {
        self.ev(e, m, bound)
    }

    fn lookup(&self, x: &str, m: &Memory, bound: &[(String, Value)]) -> Result<Value, EvalError> {
        if let Some((_, v)) = bound.iter().rev().find(|(n, _)| n == x) {
            return Ok(v.clone());
        }
        m.get(x).cloned().ok_or_else(|| EvalError::Unbound(x.to_string()))
    }

    fn ev_bool(&self, e: &Expr, m: &Memory, bound: &mut Vec<(String, Value)>, op: &str) -> Result<bool, EvalError> {
        match self.ev(e, m, bound)? {
            Value::Bool(b) => Ok(b),
            v => Err(type_err(op, format!("expected bool, got {}", v.type_name()))),
        }
    }

    fn ev(&self, e: &Expr, m: &Memory, bound: &mut Vec<(String, Value)>) -> Result<Value, EvalError> {
        match e {
            Expr::Var(x) => self.lookup(x, m, bound),
            Expr::Const(_, v) | Expr::Lit(v) => Ok(v.clone()),
            Expr::Label(_, inner) => self.ev(inner, m, bound),
            Expr::Unary(op, a) => {
                let v = self.ev(a, m, bound)?;
                unary(*op, v)
            }
            Expr::Binary(op, a, b) => match op {
                BinOp::And => Ok(Value::Bool(
                    self.ev_bool(a, m, bound, "&&")? && self.ev_bool(b, m, bound, "&&")?,
                )),
                BinOp::Or => Ok(Value::Bool(
                    self.ev_bool(a, m, bound, "||")? || self.ev_bool(b, m, bound, "||")?,
                )),
                BinOp::Implies => Ok(Value::Bool(
                    !self.ev_bool(a, m, bound, "==>")? || self.ev_bool(b, m, bound, "==>")?,
                )),
                _ => {
                    let x = self.ev(a, m, bound)?;
                    let y = self.ev(b, m, bound)?;
                    binary(*op, x, y)
                }
            },
            Expr::Ite(c, a, b) => {
                if self.ev_bool(c, m, bound, "ite")? {
                    self.ev(a, m, bound)
                } else {
                    self.ev(b, m, bound)
                }
            }
            Expr::ListLit(items) => {
                let mut out = Vec::with_capacity(items.len());
                for i in items {
                    out.push(self.ev(i, m, bound)?);
                }
                Ok(Value::list(out))
            }
            Expr::Call(f, args) => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.ev(a, m, bound)?);
                }
                self.call(f, vals, m)
            }
            Expr::ScorePartial(f, args) => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.ev(a, m, bound)?);
                }
                Ok(Value::Score(Arc::new(ScoreFn::Partial { builtin: f.clone(), args: vals })))
            }
            Expr::ScoreApply(s, i, r) => {
                let s = self.ev(s, m, bound)?;
                let i = self.ev(i, m, bound)?;
                let r = self.ev(r, m, bound)?;
                Ok(Value::Real(self.apply_score(&s, &i, &r)?))
            }
            Expr::MaxGap(s, e1, e2) => {
                let s = self.ev(s, m, bound)?;
                let a = self.ev(e1, m, bound)?;
                let b = self.ev(e2, m, bound)?;
                Ok(Value::Real(self.maxgap(&s, &a, &b)?))
            }
            Expr::Acc(eps, delta) => {
                let eps = self.ev(eps, m, bound)?.as_f64().ok_or_else(|| type_err("ACC", "non-numeric eps"))?;
                let delta =
                    self.ev(delta, m, bound)?.as_f64().ok_or_else(|| type_err("ACC", "non-numeric delta"))?;
                Ok(Value::Real(acc_radius(eps, delta)?))
            }
            Expr::Quant(q, v, dom, body) => {
                let values = self.quant_values(dom, m, bound)?;
                let want = *q == Quant::Exists;
                for val in values.iter() {
                    bound.push((v.clone(), val.clone()));
                    let r = self.ev_bool(body, m, bound, "quantifier");
                    bound.pop();
                    if r? == want {
                        return Ok(Value::Bool(want));
                    }
                }
                Ok(Value::Bool(!want))
            }
        }
    }

    /// The values a quantifier over `dom` ranges over.
    pub fn quant_domain(&self, dom: &QDomain, m: &Memory) -> Result<Arc<Vec<Value>>, EvalError> {
        self.quant_values(dom, m, &mut Vec::new())
    }

    fn quant_values(
        &self,
        dom: &QDomain,
        m: &Memory,
        bound: &mut Vec<(String, Value)>,
    ) -> Result<Arc<Vec<Value>>, EvalError> {
        Ok(match dom {
            QDomain::Ints(lo, hi) => {
                let lo = self.ev(lo, m, bound)?;
                let hi = self.ev(hi, m, bound)?;
                let (Some(lo), Some(hi)) = (lo.as_int(), hi.as_int()) else {
                    return Err(type_err("quantifier", "integer bounds expected"));
                };
                let n = hi as i128 - lo as i128 + 1;
                if n > 10_000_000 {
                    return Err(EvalError::RangeTooLarge(n));
                }
                Arc::new((lo..=hi).map(Value::Int).collect())
            }
            QDomain::Range => Arc::new(self.range.clone()),
            QDomain::Decl(x) => self.domain_of(x).cloned().ok_or_else(|| EvalError::NoDomain(x.clone()))?,
        })
    }

    pub fn call(&self, f: &str, args: Vec<Value>, m: &Memory) -> Result<Value, EvalError> {
        if let Some(p) = self.preds.get(f) {
            if p.params.len() != args.len() {
                return Err(type_err(f, "wrong number of arguments"));
            }
            let mut bound: Vec<(String, Value)> =
                p.params.iter().map(|(n, _)| n.clone()).zip(args).collect();
            return self.ev(&p.body, m, &mut bound);
        }
        let b = self.registry.get(f).ok_or_else(|| EvalError::UnknownFunction(f.to_string()))?;
        if b.params.len() != args.len() {
            return Err(type_err(f, "wrong number of arguments"));
        }
        (b.imp)(&args)
    }

    pub fn apply_score(&self, s: &Value, input: &Value, r: &Value) -> Result<BigRational, EvalError> {
        let Value::Score(sf) = s else {
            return Err(type_err("apply", format!("expected score, got {}", s.type_name())));
        };
        match sf.as_ref() {
            ScoreFn::Table(t) => t
                .get(&(input.clone(), r.clone()))
                .cloned()
                .ok_or_else(|| EvalError::ScoreUndefined(input.to_string(), r.to_string())),
            ScoreFn::Partial { builtin, args } => {
                let mut all = args.clone();
                all.push(input.clone());
                all.push(r.clone());
                let v = self.call(builtin, all, &Memory::new())?;
                v.as_rational().ok_or_else(|| type_err("score", "score builtin returned non-number"))
            }
        }
    }

    /// max over the range of |s(a, r) - s(b, r)|; zero for an empty range.
    pub fn maxgap(&self, s: &Value, a: &Value, b: &Value) -> Result<BigRational, EvalError> {
        let mut best = BigRational::zero();
        for r in &self.range {
            let g = (self.apply_score(s, a, r)? - self.apply_score(s, b, r)?).abs();
            if g > best {
                best = g;
            }
        }
        Ok(best)
    }
}

/// The Laplace accuracy radius 2 ln(2/δ)/ε: beyond it the two-sided tail of the
/// discrete Laplace with weights exp(-ε|r|/2) has mass at most δ.
pub fn acc_radius(eps: f64, delta: f64) -> Result<BigRational, EvalError> {
    if eps <= 0.0 || delta <= 0.0 {
        return Err(type_err("ACC", "eps and delta must be positive"));
    }
    let r = 2.0 * (2.0 / delta).ln() / eps;
    rational_from_f64(r).ok_or_else(|| type_err("ACC", "non-finite radius"))
}

fn unary(op: UnOp, v: Value) -> Result<Value, EvalError> {
    match (op, v) {
        (UnOp::Neg, Value::Int(i)) => i.checked_neg().map(Value::Int).ok_or(EvalError::Overflow("-".into())),
        (UnOp::Neg, Value::Real(r)) => Ok(Value::Real(-r)),
        (UnOp::Abs, Value::Int(i)) => i.checked_abs().map(Value::Int).ok_or(EvalError::Overflow("abs".into())),
        (UnOp::Abs, Value::Real(r)) => Ok(Value::Real(r.abs())),
        (UnOp::Not, Value::Bool(b)) => Ok(Value::Bool(!b)),
        (UnOp::Hd, Value::List(l)) => Ok(l.first().cloned().unwrap_or(Value::Int(0))),
        (UnOp::Tl, Value::List(l)) => Ok(Value::list(l.iter().skip(1).cloned().collect())),
        (UnOp::Length, Value::List(l)) => Ok(Value::Int(l.len() as i64)),
        (op, v) => Err(type_err(&format!("{op:?}"), format!("unexpected {}", v.type_name()))),
    }
}

fn rat(v: &Value, op: BinOp) -> Result<BigRational, EvalError> {
    v.as_rational()
        .ok_or_else(|| type_err(op.symbol(), format!("expected number, got {}", v.type_name())))
}

pub fn binary(op: BinOp, x: Value, y: Value) -> Result<Value, EvalError> {
    use BinOp::*;
    let ovf = || EvalError::Overflow(op.symbol().to_string());
    match op {
        Eq => return Ok(Value::Bool(x.num_eq(&y))),
        Ne => return Ok(Value::Bool(!x.num_eq(&y))),
        Iff => {
            return match (x, y) {
                (Value::Bool(a), Value::Bool(b)) => Ok(Value::Bool(a == b)),
                _ => Err(type_err("<=>", "expected bools")),
            }
        }
        Cons => {
            return match y {
                Value::List(l) => {
                    let mut v = Vec::with_capacity(l.len() + 1);
                    v.push(x);
                    v.extend(l.iter().cloned());
                    Ok(Value::list(v))
                }
                other => Err(type_err("::", format!("expected list, got {}", other.type_name()))),
            }
        }
        _ => {}
    }
    if let (Value::Int(a), Value::Int(b)) = (&x, &y) {
        let (a, b) = (*a, *b);
        return match op {
            Add => a.checked_add(b).map(Value::Int).ok_or_else(ovf),
            Sub => a.checked_sub(b).map(Value::Int).ok_or_else(ovf),
            Mul => a.checked_mul(b).map(Value::Int).ok_or_else(ovf),
            Div if b == 0 => Ok(Value::Real(BigRational::zero())),
            Div => Ok(Value::Real(BigRational::new(a.into(), b.into()))),
            IntDiv if b == 0 => Ok(Value::Int(0)),
            IntDiv => Ok(Value::Int(num_integer::Integer::div_floor(&a, &b))),
            Mod if b == 0 => Ok(Value::Int(0)),
            Mod => Ok(Value::Int(a.mod_floor(&b))),
            Min => Ok(Value::Int(a.min(b))),
            Max => Ok(Value::Int(a.max(b))),
            Lt => Ok(Value::Bool(a < b)),
            Le => Ok(Value::Bool(a <= b)),
            Gt => Ok(Value::Bool(a > b)),
            Ge => Ok(Value::Bool(a >= b)),
            _ => Err(type_err(op.symbol(), "unexpected integers")),
        };
    }
    let a = rat(&x, op)?;
    let b = rat(&y, op)?;
    match op {
        Add => Ok(Value::Real(a + b)),
        Sub => Ok(Value::Real(a - b)),
        Mul => Ok(Value::Real(a * b)),
        Div if b.is_zero() => Ok(Value::Real(BigRational::zero())),
        Div => Ok(Value::Real(a / b)),
        Min => Ok(Value::Real(a.min(b))),
        Max => Ok(Value::Real(a.max(b))),
        Lt => Ok(Value::Bool(a < b)),
        Le => Ok(Value::Bool(a <= b)),
        Gt => Ok(Value::Bool(a > b)),
        Ge => Ok(Value::Bool(a >= b)),
        _ => Err(type_err(op.symbol(), "integer operands expected")),
    }
}

/// Converts an f64 result of a transcendental builtin to an exact real value.
pub fn real_from_f64(name: &str, f: f64) -> Result<Value, EvalError> {
    rational_from_f64(f)
        .map(Value::Real)
        .ok_or_else(|| EvalError::Builtin { name: name.to_string(), detail: format!("non-finite result {f}") })
}

pub fn to_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Int(i) => Some(*i as f64),
        Value::Real(r) => r.to_f64(),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_expr;

    fn ev(src: &str, m: &Memory) -> Value {
        let ctx = EvalCtx { registry: Registry::standard(), ..Default::default() };
        ctx.eval(&parse_expr(src, &Header::default()).unwrap(), m).unwrap()
    }

    #[test]
    fn arithmetic_and_promotion() {
        let m = Memory::from_pairs([("x", Value::Int(3))]);
        assert_eq!(ev("x + 1", &m), Value::Int(4));
        assert_eq!(ev("x / 2", &m), Value::real(3, 2));
        assert_eq!(ev("x div 2", &m), Value::Int(1));
        assert_eq!(ev("-7 mod 3", &m), Value::Int(2));
        assert_eq!(ev("x + 0.5 > 3", &m), Value::Bool(true));
        assert_eq!(ev("x = 3.0", &m), Value::Bool(true));
    }

    #[test]
    fn lists_total() {
        let m = Memory::from_pairs([("l", Value::int_list(&[3, 1]))]);
        assert_eq!(ev("hd(l)", &m), Value::Int(3));
        assert_eq!(ev("tl(l)", &m), Value::int_list(&[1]));
        assert_eq!(ev("hd([])", &m), Value::Int(0));
        assert_eq!(ev("0 :: l", &m), Value::int_list(&[0, 3, 1]));
        assert_eq!(ev("length(tl(tl(tl(l))))", &m), Value::Int(0));
    }

    #[test]
    fn quantifiers() {
        let m = Memory::from_pairs([("n", Value::Int(3))]);
        assert_eq!(ev("forall v in {0..n} . v <= n", &m), Value::Bool(true));
        assert_eq!(ev("exists v in {0..n} . v * v = 4", &m), Value::Bool(true));
        assert_eq!(ev("forall v in {0..n} . v < n", &m), Value::Bool(false));
    }

    #[test]
    fn overflow_is_an_error() {
        let ctx = EvalCtx { registry: Registry::standard(), ..Default::default() };
        let e = parse_expr("9223372036854775807 + 1", &Header::default()).unwrap();
        assert!(matches!(ctx.eval(&e, &Memory::new()), Err(EvalError::Overflow(_))));
    }

    #[test]
    fn accuracy_radius_bounds_tail() {
        let r = acc_radius(1.0, 0.1).unwrap().to_f64().unwrap();
        assert!((2.0 * (-r / 2.0_f64).exp() - 0.1).abs() < 1e-12);
    }
}
