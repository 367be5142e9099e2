//! SMT-LIB2 output: one `(assert (not φ))` and `(check-sat)` per obligation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use num_rational::BigRational;
use num_traits::Signed;
use thiserror::Error;

use super::subst::subst1;
use super::wp::Obligation;
use crate::frontend::ast::*;
use crate::frontend::pretty::pretty_expr;
use crate::frontend::typecheck::TypeEnv;
use crate::values::{EvalCtx, Memory, ScoreFn, Value};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SmtError {
    #[error("cannot express `{0}` in SMT-LIB")]
    Unexpandable(String),
    #[error("type error in `{expr}`: {msg}")]
    Type { expr: String, msg: String },
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SmtOptions {
    /// Expand integer-range quantifiers with constant bounds into finite conjunctions.
    pub expand_quantifiers: bool,
}

const PRELUDE: &str = "(declare-datatypes ((IntList 0) (RealList 0)) (((inil) (icons (ihead Int) (itail IntList))) ((rnil) (rcons (rhead Real) (rtail RealList)))))
(define-fun-rec ilength ((l IntList)) Int (ite ((_ is icons) l) (+ 1 (ilength (itail l))) 0))
(define-fun-rec rlength ((l RealList)) Int (ite ((_ is rcons) l) (+ 1 (rlength (rtail l))) 0))
";

fn sort(t: &Type) -> Result<&'static str, SmtError> {
    Ok(match t {
        Type::Int => "Int",
        Type::Real => "Real",
        Type::Bool => "Bool",
        Type::List(e) if **e == Type::Real => "RealList",
        Type::List(_) => "IntList",
        Type::Score => return Err(SmtError::Unexpandable("score-typed variable".into())),
    })
}

fn int_lit(i: &num_bigint::BigInt) -> String {
    if i.is_negative() {
        format!("(- {})", -i)
    } else {
        i.to_string()
    }
}

fn real_lit(r: &BigRational) -> String {
    let body = if r.denom() == &1.into() {
        format!("{}.0", r.numer().abs())
    } else {
        format!("(/ {}.0 {}.0)", r.numer().abs(), r.denom())
    };
    if r.is_negative() {
        format!("(- {body})")
    } else {
        body
    }
}

struct Emitter<'a> {
    env: &'a TypeEnv,
    ctx: &'a EvalCtx,
    opts: SmtOptions,
    used: BTreeSet<String>,
}

type Term = (String, Type);

fn coerce(t: Term, to: &Type) -> String {
    match (&t.1, to) {
        (Type::Int, Type::Real) => format!("(to_real {})", t.0),
        _ => t.0,
    }
}

fn join(a: &Type, b: &Type) -> Type {
    if *a == Type::Real || *b == Type::Real {
        Type::Real
    } else {
        a.clone()
    }
}

impl Emitter<'_> {
    fn value(&self, v: &Value) -> Result<Term, SmtError> {
        Ok(match v {
            Value::Bool(b) => (b.to_string(), Type::Bool),
            Value::Int(i) => (int_lit(&(*i).into()), Type::Int),
            Value::Real(r) => (real_lit(r), Type::Real),
            Value::List(items) => {
                let real = items.iter().any(|x| matches!(x, Value::Real(_)));
                let (cons, nil, et) = if real { ("rcons", "rnil", Type::Real) } else { ("icons", "inil", Type::Int) };
                let mut s = nil.to_string();
                for x in items.iter().rev() {
                    let t = coerce(self.value(x)?, &et);
                    s = format!("({cons} {t} {s})");
                }
                (s, Type::List(Box::new(et)))
            }
            Value::Score(_) => return Err(SmtError::Unexpandable("score literal outside an application".into())),
        })
    }

    fn fn_name(&mut self, f: &str) -> String {
        self.used.insert(f.to_string());
        if self.ctx.preds.contains_key(f) || self.ctx.registry.get(f).is_some_and(|b| b.smt.is_some()) {
            f.to_string()
        } else {
            format!("b_{f}")
        }
    }

    fn apply(&mut self, s: &Expr, input: &Expr, r: &Expr, sc: &mut Vec<(String, Type)>) -> Result<String, SmtError> {
        let partial = match s.strip_labels() {
            Expr::ScorePartial(f, args) => Some((f.clone(), args.clone())),
            Expr::Lit(Value::Score(sf)) | Expr::Const(_, Value::Score(sf)) => match sf.as_ref() {
                ScoreFn::Partial { builtin, args } => {
                    Some((builtin.clone(), args.iter().cloned().map(Expr::Lit).collect()))
                }
                ScoreFn::Table(_) => None,
            },
            other => return Err(SmtError::Unexpandable(pretty_expr(other))),
        };
        if let Some((f, args)) = partial {
            let (params, ret) = self.env.funcs.get(&f).cloned().ok_or_else(|| SmtError::Unexpandable(f.clone()))?;
            let mut all: Vec<&Expr> = args.iter().collect();
            all.push(input);
            all.push(r);
            let mut parts = vec![self.fn_name(&f)];
            for (p, a) in params.iter().zip(all) {
                let t = self.term(a, sc)?;
                parts.push(coerce(t, p));
            }
            return Ok(coerce((format!("({})", parts.join(" ")), ret), &Type::Real));
        }
        let (Expr::Lit(Value::Score(sf)) | Expr::Const(_, Value::Score(sf))) = s.strip_labels() else { unreachable!() };
        let ScoreFn::Table(t) = sf.as_ref() else { unreachable!() };
        let it = self.term(input, sc)?;
        let rt = self.term(r, sc)?;
        let mut out = "0.0".to_string();
        for ((k, rr), v) in t.iter().rev() {
            let kt = self.value(k)?;
            let rv = self.value(rr)?;
            let j1 = join(&it.1, &kt.1);
            let j2 = join(&rt.1, &rv.1);
            out = format!(
                "(ite (and (= {} {}) (= {} {})) {} {out})",
                coerce(it.clone(), &j1),
                coerce(kt, &j1),
                coerce(rt.clone(), &j2),
                coerce(rv, &j2),
                real_lit(v)
            );
        }
        Ok(out)
    }

    fn score_eq(&mut self, a: &Expr, b: &Expr, sc: &mut Vec<(String, Type)>) -> Result<String, SmtError> {
        match (a.strip_labels(), b.strip_labels()) {
            (Expr::ScorePartial(f, xs), Expr::ScorePartial(g, ys)) if f == g && xs.len() == ys.len() => {
                let mut parts = Vec::new();
                for (x, y) in xs.iter().zip(ys) {
                    parts.push(self.term(&x.clone().eq(y.clone()), sc)?.0);
                }
                Ok(if parts.is_empty() { "true".into() } else { format!("(and {})", parts.join(" ")) })
            }
            (x, y) if x == y => Ok("true".into()),
            (Expr::Lit(x), Expr::Lit(y)) => Ok((x == y).to_string()),
            _ => Err(SmtError::Unexpandable(format!("{} = {}", pretty_expr(a), pretty_expr(b)))),
        }
    }

    fn quant(&mut self, q: Quant, v: &str, dom: &QDomain, body: &Expr, sc: &mut Vec<(String, Type)>) -> Result<Term, SmtError> {
        let (join_op, empty) = match q {
            Quant::Forall => ("and", "true"),
            Quant::Exists => ("or", "false"),
        };
        let values: Option<Vec<Value>> = match dom {
            QDomain::Range => Some(self.ctx.range.clone()),
            QDomain::Decl(x) => Some(
                self.ctx
                    .domain_of(x)
                    .ok_or_else(|| SmtError::Unexpandable(format!("dom({x}) without a declared domain")))?
                    .as_ref()
                    .clone(),
            ),
            QDomain::Ints(lo, hi) if self.opts.expand_quantifiers => {
                let m = Memory::new();
                match (self.ctx.eval_int(lo, &m), self.ctx.eval_int(hi, &m)) {
                    (Ok(a), Ok(b)) if b - a < 10_000 => Some((a..=b).map(Value::Int).collect()),
                    _ => None,
                }
            }
            QDomain::Ints(..) => None,
        };
        if let Some(vals) = values {
            let mut parts = Vec::new();
            for x in &vals {
                let inst = subst1(body, v, &Expr::Lit(x.clone()));
                parts.push(self.term(&inst, sc)?.0);
            }
            let s = match parts.len() {
                0 => empty.to_string(),
                1 => parts.pop().unwrap(),
                _ => format!("({join_op} {})", parts.join(" ")),
            };
            return Ok((s, Type::Bool));
        }
        let QDomain::Ints(lo, hi) = dom else { unreachable!() };
        let lo = coerce(self.term(lo, sc)?, &Type::Int);
        let hi = coerce(self.term(hi, sc)?, &Type::Int);
        sc.push((v.to_string(), Type::Int));
        let b = self.term(body, sc);
        sc.pop();
        let b = b?.0;
        let bounds = format!("(and (<= {lo} {v}) (<= {v} {hi}))");
        Ok(match q {
            Quant::Forall => (format!("(forall (({v} Int)) (=> {bounds} {b}))"), Type::Bool),
            Quant::Exists => (format!("(exists (({v} Int)) (and {bounds} {b}))"), Type::Bool),
        })
    }

    fn term(&mut self, e: &Expr, sc: &mut Vec<(String, Type)>) -> Result<Term, SmtError> {
        let terr = |msg: String| SmtError::Type { expr: pretty_expr(e), msg };
        Ok(match e {
            Expr::Label(_, inner) => return self.term(inner, sc),
            Expr::Var(x) => {
                let t = sc
                    .iter()
                    .rev()
                    .find(|(n, _)| n == x)
                    .map(|(_, t)| t.clone())
                    .or_else(|| self.env.vars.get(x).cloned())
                    .ok_or_else(|| terr(format!("unknown variable `{x}`")))?;
                (x.clone(), t)
            }
            Expr::Const(_, v) | Expr::Lit(v) => self.value(v)?,
            Expr::Unary(op, a) => {
                let t = self.term(a, sc)?;
                match op {
                    UnOp::Neg => (format!("(- {})", t.0), t.1),
                    UnOp::Not => (format!("(not {})", t.0), Type::Bool),
                    UnOp::Abs => {
                        let z = if t.1 == Type::Real { "0.0" } else { "0" };
                        (format!("(ite (< {0} {z}) (- {0}) {0})", t.0), t.1)
                    }
                    UnOp::Hd | UnOp::Tl | UnOp::Length => {
                        let real = t.1 == Type::List(Box::new(Type::Real));
                        let (is, head, tail, nil, len, et) = if real {
                            ("rcons", "rhead", "rtail", "rnil", "rlength", Type::Real)
                        } else {
                            ("icons", "ihead", "itail", "inil", "ilength", Type::Int)
                        };
                        let z = if real { "0.0" } else { "0" };
                        match op {
                            UnOp::Hd => (format!("(ite ((_ is {is}) {0}) ({head} {0}) {z})", t.0), et),
                            UnOp::Tl => (format!("(ite ((_ is {is}) {0}) ({tail} {0}) {nil})", t.0), t.1),
                            _ => (format!("({len} {})", t.0), Type::Int),
                        }
                    }
                }
            }
            Expr::Binary(op, a, b) => {
                if matches!(op, BinOp::Eq | BinOp::Ne) {
                    let ta = self.env.ty(a, sc).map_err(&terr)?;
                    if ta == Type::Score {
                        let s = self.score_eq(a, b, sc)?;
                        return Ok((if *op == BinOp::Ne { format!("(not {s})") } else { s }, Type::Bool));
                    }
                }
                let ta = self.term(a, sc)?;
                let tb = self.term(b, sc)?;
                let j = join(&ta.1, &tb.1);
                let num = |ta: Term, tb: Term| (coerce(ta, &j), coerce(tb, &j));
                match op {
                    BinOp::Add | BinOp::Sub | BinOp::Mul => {
                        let (x, y) = num(ta, tb);
                        (format!("({} {x} {y})", op.symbol()), j.clone())
                    }
                    BinOp::Div => {
                        let x = coerce(ta, &Type::Real);
                        let y = coerce(tb, &Type::Real);
                        (format!("(ite (= {y} 0.0) 0.0 (/ {x} {y}))"), Type::Real)
                    }
                    BinOp::IntDiv | BinOp::Mod => {
                        let f = if *op == BinOp::IntDiv { "div" } else { "mod" };
                        (format!("(ite (= {1} 0) 0 ({f} {0} {1}))", ta.0, tb.0), Type::Int)
                    }
                    BinOp::Min | BinOp::Max => {
                        let (x, y) = num(ta, tb);
                        let c = if *op == BinOp::Min { "<=" } else { ">=" };
                        (format!("(ite ({c} {x} {y}) {x} {y})"), j.clone())
                    }
                    BinOp::Cons => {
                        let real = tb.1 == Type::List(Box::new(Type::Real));
                        if real {
                            (format!("(rcons {} {})", coerce(ta, &Type::Real), tb.0), tb.1)
                        } else {
                            (format!("(icons {} {})", ta.0, tb.0), tb.1)
                        }
                    }
                    BinOp::Eq | BinOp::Ne => {
                        let (x, y) = num(ta, tb);
                        let s = format!("(= {x} {y})");
                        (if *op == BinOp::Ne { format!("(not {s})") } else { s }, Type::Bool)
                    }
                    BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => {
                        let (x, y) = num(ta, tb);
                        (format!("({} {x} {y})", op.symbol()), Type::Bool)
                    }
                    BinOp::And => (format!("(and {} {})", ta.0, tb.0), Type::Bool),
                    BinOp::Or => (format!("(or {} {})", ta.0, tb.0), Type::Bool),
                    BinOp::Implies => (format!("(=> {} {})", ta.0, tb.0), Type::Bool),
                    BinOp::Iff => (format!("(= {} {})", ta.0, tb.0), Type::Bool),
                }
            }
            Expr::Ite(c, a, b) => {
                let tc = self.term(c, sc)?;
                let ta = self.term(a, sc)?;
                let tb = self.term(b, sc)?;
                let j = join(&ta.1, &tb.1);
                (format!("(ite {} {} {})", tc.0, coerce(ta, &j), coerce(tb, &j)), j)
            }
            Expr::ListLit(items) => {
                let t = self.env.ty(e, sc).map_err(&terr)?;
                let real = t == Type::List(Box::new(Type::Real));
                let (cons, nil, et) = if real { ("rcons", "rnil", Type::Real) } else { ("icons", "inil", Type::Int) };
                let mut s = nil.to_string();
                for x in items.iter().rev() {
                    let tx = self.term(x, sc)?;
                    s = format!("({cons} {} {s})", coerce(tx, &et));
                }
                (s, t)
            }
            Expr::Call(f, args) => {
                let (params, ret) = self.env.funcs.get(f).cloned().ok_or_else(|| terr(format!("unknown `{f}`")))?;
                let mut parts = vec![self.fn_name(f)];
                for (p, a) in params.iter().zip(args) {
                    let t = self.term(a, sc)?;
                    parts.push(coerce(t, p));
                }
                (format!("({})", parts.join(" ")), ret)
            }
            Expr::ScorePartial(..) => return Err(SmtError::Unexpandable(pretty_expr(e))),
            Expr::ScoreApply(s, i, r) => (self.apply(s, i, r, sc)?, Type::Real),
            Expr::MaxGap(s, a, b) => {
                let range = self.ctx.range.clone();
                let mut out: Option<String> = None;
                for r in &range {
                    let rl = Expr::Lit(r.clone());
                    let x = self.apply(s, a, &rl, sc)?;
                    let y = self.apply(s, b, &rl, sc)?;
                    // `let` keeps the term linear in the range size.
                    let gap = format!("(let ((__d (- {x} {y}))) (ite (< __d 0.0) (- __d) __d))");
                    out = Some(match out {
                        None => gap,
                        Some(m) => format!("(let ((__m {m}) (__g {gap})) (ite (>= __m __g) __m __g))"),
                    });
                }
                (out.unwrap_or_else(|| "0.0".into()), Type::Real)
            }
            Expr::Acc(..) => {
                let v = self.ctx.eval(e, &Memory::new()).map_err(|err| terr(err.to_string()))?;
                self.value(&v)?
            }
            Expr::Quant(q, v, dom, body) => self.quant(*q, v, dom, body, sc)?,
        })
    }
}

/// Emits a self-contained script for the obligations. Variables are declared
/// with their types in `env`; builtins with SMT definitions are defined, the
/// others declared uninterpreted.
pub fn emit_smtlib(
    obs: &[Obligation],
    env: &TypeEnv,
    ctx: &EvalCtx,
    opts: SmtOptions,
) -> Result<String, SmtError> {
    let mut em = Emitter { env, ctx, opts, used: BTreeSet::new() };
    let mut bodies = Vec::new();
    let mut free = BTreeSet::new();
    for o in obs {
        free.extend(o.formula.free_vars());
        bodies.push(em.term(&o.formula, &mut Vec::new())?.0);
    }
    // Predicate bodies may use further builtins.
    let mut preds = BTreeMap::new();
    loop {
        let pending: Vec<String> =
            em.used.iter().filter(|f| ctx.preds.contains_key(*f) && !preds.contains_key(*f)).cloned().collect();
        if pending.is_empty() {
            break;
        }
        for p in pending {
            let d = &ctx.preds[&p];
            let mut sc: Vec<(String, Type)> = d.params.clone();
            let body = em.term(&d.body, &mut sc)?.0;
            let params: Result<Vec<String>, SmtError> =
                d.params.iter().map(|(n, t)| Ok(format!("({n} {})", sort(t)?))).collect();
            preds.insert(p.clone(), format!("(define-fun {p} ({}) Bool {body})", params?.join(" ")));
        }
    }
    let mut s = String::new();
    s.push_str("(set-logic ALL)\n");
    s.push_str(PRELUDE);
    for f in &em.used {
        if ctx.preds.contains_key(f) {
            continue;
        }
        let b = ctx.registry.get(f).ok_or_else(|| SmtError::Unexpandable(f.clone()))?;
        match b.smt {
            Some(def) => {
                s.push_str(def);
                s.push('\n');
            }
            None => {
                let ps: Result<Vec<&str>, SmtError> = b.params.iter().map(sort).collect();
                let _ = writeln!(s, "(declare-fun b_{f} ({}) {})", ps?.join(" "), sort(&b.ret)?);
            }
        }
    }
    for p in preds.values() {
        s.push_str(p);
        s.push('\n');
    }
    for x in &free {
        let t = env.vars.get(x).ok_or_else(|| SmtError::Type { expr: x.clone(), msg: "unknown variable".into() })?;
        let _ = writeln!(s, "(declare-const {x} {})", sort(t)?);
    }
    for (o, body) in obs.iter().zip(bodies) {
        let _ = writeln!(s, "; obligation {}: {} at {}", o.id, o.provenance.rule, o.provenance.span);
        s.push_str("(push 1)\n");
        let _ = writeln!(s, "(assert (not {body}))");
        s.push_str("(check-sat)\n(pop 1)\n");
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{parse_expr, parse_unit};
    use crate::logic::sexpr::validate_script;
    use crate::logic::wp::Status;
    use crate::values::Registry;

    fn ob(f: Expr) -> Obligation {
        Obligation { id: 0, formula: f, provenance: Provenance::new("test", Default::default(), ""), status: Status::Unverified }
    }

    #[test]
    fn simple_script_round_trips() {
        let u = parse_unit("decl x : int; return x").unwrap();
        let reg = Registry::for_header(&u.header).unwrap();
        let env = TypeEnv::source(&u.header, &reg);
        let ctx = EvalCtx::from_header(&u.header).unwrap();
        let s = emit_smtlib(&[ob(parse_expr("x + 1 > x", &u.header).unwrap())], &env, &ctx, SmtOptions::default()).unwrap();
        assert!(s.contains("(assert (not (> (+ x 1) x)))"));
        let info = validate_script(&s).unwrap();
        assert_eq!(info.check_sats, 1);
    }

    #[test]
    fn maxgap_expands_over_range() {
        let u = parse_unit("range R = [0, 1, 2]; decl a : int; decl b : int; return a").unwrap();
        let reg = Registry::for_header(&u.header).unwrap();
        let env = TypeEnv::source(&u.header, &reg);
        let ctx = EvalCtx::from_header(&u.header).unwrap();
        let f = parse_expr("maxgap(score{(0, 0): 1, (0, 1): 2, (0, 2): 3}, a, b) <= 1", &u.header).unwrap();
        let s = emit_smtlib(&[ob(f)], &env, &ctx, SmtOptions::default()).unwrap();
        // three gaps combined by two max steps
        let line = s.lines().find(|l| l.starts_with("(assert")).unwrap();
        assert_eq!(line.matches("(ite (>= __m __g)").count(), 2);
        validate_script(&s).unwrap();
    }
}
