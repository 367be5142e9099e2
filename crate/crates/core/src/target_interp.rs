//! Bounded set semantics of target programs. A failed assertion anywhere
//! makes the whole run BOTTOM.

use std::collections::{BTreeMap, BTreeSet};

use num_rational::BigRational;
use num_traits::{Signed, Zero};
use serde_json::json;
use thiserror::Error;

use crate::frontend::ast::*;
use crate::frontend::pretty::pretty_expr;
use crate::frontend::span::Span;
use crate::logic::axioms::{AxiomError, AxiomSet};
use crate::values::eval::{acc_radius, to_f64};
use crate::values::{EvalCtx, EvalError, Memory, Value};

#[derive(Debug, Error)]
pub enum TargetError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Axiom(#[from] AxiomError),
    #[error("enumeration budget of {0} memories exceeded (partial result discarded)")]
    Budget(usize),
    #[error("no finite domain for `{0}`")]
    NoDomain(String),
    #[error("source statement in target program at {0}")]
    Source(Span),
}

#[derive(Clone, Debug, PartialEq)]
pub enum TargetOutcome {
    /// An assertion failed; the first failing one is recorded.
    Bottom { span: Span, formula: String, memory: Memory },
    Mems(BTreeSet<Memory>),
}

impl TargetOutcome {
    pub fn is_bottom(&self) -> bool {
        matches!(self, TargetOutcome::Bottom { .. })
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            TargetOutcome::Bottom { span, formula, memory } => json!({
                "result": "BOTTOM", "assert": formula, "at": span.to_string(), "memory": memory.to_json()
            }),
            TargetOutcome::Mems(ms) => {
                json!({ "result": "memories", "memories": ms.iter().map(Memory::to_json).collect::<Vec<_>>() })
            }
        }
    }
}

pub struct TargetRunner<'a> {
    pub ctx: &'a EvalCtx,
    /// Domain overrides by base variable name.
    pub domains: BTreeMap<String, Vec<Value>>,
    pub axioms: Option<&'a AxiomSet>,
    pub budget: usize,
    used: usize,
}

type Step = Result<Result<BTreeSet<Memory>, TargetOutcome>, TargetError>;

fn ghost_add(m: &Memory, g: &str, amount: &BigRational) -> Memory {
    if amount.is_zero() {
        return m.clone();
    }
    let cur = m.get(g).and_then(Value::as_rational).unwrap_or_else(BigRational::zero);
    m.set(g, Value::Real(cur + amount))
}

fn rational(v: &Value, what: &str) -> Result<BigRational, EvalError> {
    v.as_rational().ok_or_else(|| EvalError::Type { op: what.into(), detail: format!("expected number, got {v}") })
}

impl<'a> TargetRunner<'a> {
    pub fn new(ctx: &'a EvalCtx) -> TargetRunner<'a> {
        TargetRunner { ctx, domains: BTreeMap::new(), axioms: None, budget: 1_000_000, used: 0 }
    }

    pub fn run(&mut self, block: &[Stmt], m: &Memory) -> Result<TargetOutcome, TargetError> {
        self.used = 0;
        Ok(match self.block(block, [m.clone()].into())? {
            Ok(ms) => TargetOutcome::Mems(ms),
            Err(bottom) => bottom,
        })
    }

    fn domain(&self, x: &str) -> Result<Vec<Value>, TargetError> {
        let base = split_tag(x).0;
        if let Some(d) = self.domains.get(base).or_else(|| self.domains.get(x)) {
            return Ok(d.clone());
        }
        self.ctx.domain_of(x).map(|d| d.as_ref().clone()).ok_or_else(|| TargetError::NoDomain(x.to_string()))
    }

    fn charge(&mut self, n: usize) -> Result<(), TargetError> {
        self.used += n;
        if self.used > self.budget {
            return Err(TargetError::Budget(self.budget));
        }
        Ok(())
    }

    fn block(&mut self, block: &[Stmt], mut ms: BTreeSet<Memory>) -> Step {
        for s in block {
            match self.stmt(s, ms)? {
                Ok(next) => ms = next,
                Err(b) => return Ok(Err(b)),
            }
        }
        Ok(Ok(ms))
    }

    fn stmt(&mut self, s: &Stmt, ms: BTreeSet<Memory>) -> Step {
        let ctx = self.ctx;
        self.charge(ms.len())?;
        let mut out = BTreeSet::new();
        match &s.kind {
            StmtKind::Skip | StmtKind::Cut(_) => return Ok(Ok(ms)),
            StmtKind::Assign(x, e) => {
                for m in ms {
                    let v = ctx.eval(e, &m)?;
                    out.insert(m.set(x, v));
                }
            }
            StmtKind::Assert(phi) => {
                for m in &ms {
                    if !ctx.eval_bool(phi, m)? {
                        return Ok(Err(TargetOutcome::Bottom {
                            span: s.span,
                            formula: pretty_expr(phi),
                            memory: m.clone(),
                        }));
                    }
                }
                return Ok(Ok(ms));
            }
            StmtKind::LapInv { vars, eps, args, spec } => {
                let dom = self.domain(&vars.0)?;
                for m in ms {
                    let a = ctx.eval(&args.0, &m)?;
                    let b = ctx.eval(&args.1, &m)?;
                    let (ra, rb) = (rational(&a, "Lap<>")?, rational(&b, "Lap<>")?);
                    let cost = (&ra - &rb).abs() * &eps.value;
                    let mut m2 = ghost_add(&m, ALPHA, &cost);
                    let support: Vec<Value> = match spec {
                        LapSpec::Accuracy(dc) if ra == rb => {
                            m2 = ghost_add(&m2, DELTA, &dc.value);
                            let radius = acc_radius(
                                to_f64(&Value::Real(eps.value.clone())).unwrap_or(0.0),
                                to_f64(&Value::Real(dc.value.clone())).unwrap_or(0.0),
                            )?
                            .floor()
                            .to_integer();
                            let c = ra.floor().to_integer();
                            let (lo, hi) = (c.clone() - &radius, c + radius);
                            let lo: i64 = lo.try_into().map_err(|_| EvalError::Overflow("ACC".into()))?;
                            let hi: i64 = hi.try_into().map_err(|_| EvalError::Overflow("ACC".into()))?;
                            self.charge((hi - lo + 1).max(0) as usize)?;
                            (lo..=hi).map(Value::Int).collect()
                        }
                        LapSpec::Accuracy(dc) => {
                            m2 = ghost_add(&m2, DELTA, &dc.value);
                            dom.clone()
                        }
                        LapSpec::Pure => dom.clone(),
                    };
                    self.charge(support.len())?;
                    for v in support {
                        let mut n = m2.set(&vars.0, v.clone());
                        n.insert(&vars.1, v);
                        out.insert(n);
                    }
                }
            }
            StmtKind::ExpInv { vars, eps, left, right } => {
                for m in ms {
                    let s1 = ctx.eval(&left.0, &m)?;
                    let s2 = ctx.eval(&right.0, &m)?;
                    if s1 != s2 {
                        return Ok(Err(TargetOutcome::Bottom {
                            span: s.span,
                            formula: format!("{} = {}", pretty_expr(&left.0), pretty_expr(&right.0)),
                            memory: m,
                        }));
                    }
                    let e1 = ctx.eval(&left.1, &m)?;
                    let e2 = ctx.eval(&right.1, &m)?;
                    let cost = ctx.maxgap(&s1, &e1, &e2)? * &eps.value;
                    let m2 = ghost_add(&m, ALPHA, &cost);
                    self.charge(ctx.range.len())?;
                    for r in &ctx.range {
                        let mut n = m2.set(&vars.0, r.clone());
                        n.insert(&vars.1, r.clone());
                        out.insert(n);
                    }
                }
            }
            StmtKind::CustomInv { vars, mech, left, right, .. } => {
                let ax = self.axioms.ok_or_else(|| AxiomError::Missing(mech.clone()))?.get(mech)?;
                let bound = "__out";
                let cases = ax.instantiate(left, right, &var(bound))?;
                let dom = self.domain(&vars.0)?;
                for m in ms {
                    let mut any = false;
                    for c in &cases {
                        if !ctx.eval_bool(&c.pre, &m)? {
                            continue;
                        }
                        any = true;
                        self.charge(dom.len())?;
                        for v in &dom {
                            let mut b = vec![(bound.to_string(), v.clone())];
                            if ctx.eval_with(&c.out, &m, &mut b)? != Value::Bool(true) {
                                continue;
                            }
                            let a = rational(&ctx.eval_with(&c.alpha, &m, &mut b)?, "axiom alpha")?;
                            let d = rational(&ctx.eval_with(&c.delta, &m, &mut b)?, "axiom delta")?;
                            let mut n = ghost_add(&ghost_add(&m, ALPHA, &a), DELTA, &d);
                            n.insert(&vars.0, v.clone());
                            n.insert(&vars.1, v.clone());
                            out.insert(n);
                        }
                    }
                    if !any {
                        return Ok(Err(TargetOutcome::Bottom {
                            span: s.span,
                            formula: format!("some `{mech}` axiom case applies"),
                            memory: m,
                        }));
                    }
                }
            }
            StmtKind::If(g, a, b) => {
                let mut yes = BTreeSet::new();
                let mut no = BTreeSet::new();
                for m in ms {
                    if ctx.eval_bool(g, &m)? {
                        yes.insert(m);
                    } else {
                        no.insert(m);
                    }
                }
                let ya = match self.block(a, yes)? {
                    Ok(x) => x,
                    Err(bt) => return Ok(Err(bt)),
                };
                let nb = match self.block(b, no)? {
                    Ok(x) => x,
                    Err(bt) => return Ok(Err(bt)),
                };
                out = ya;
                out.extend(nb);
            }
            StmtKind::While { guard, body, .. } => {
                let mut cur = ms;
                loop {
                    let mut go = BTreeSet::new();
                    for m in cur {
                        if ctx.eval_bool(guard, &m)? {
                            go.insert(m);
                        } else {
                            out.insert(m);
                        }
                    }
                    if go.is_empty() {
                        break;
                    }
                    cur = match self.block(body, go)? {
                        Ok(x) => x,
                        Err(bt) => return Ok(Err(bt)),
                    };
                }
            }
            StmtKind::ReturnPair(a, b) => {
                for m in ms {
                    let va = ctx.eval(a, &m)?;
                    let vb = ctx.eval(b, &m)?;
                    let mut n = m.set(OUT1, va);
                    n.insert(OUT2, vb);
                    out.insert(n);
                }
            }
            StmtKind::Lap { .. } | StmtKind::Exp { .. } | StmtKind::Custom { .. } | StmtKind::Return(_) => {
                return Err(TargetError::Source(s.span))
            }
        }
        Ok(Ok(out))
    }
}

/// Target memory for a pair of source memories: tagged copies plus zero ghosts.
pub fn product_memory(m1: &Memory, m2: &Memory) -> Memory {
    let mut m = Memory::new();
    for (x, v) in m1.iter() {
        m.insert(&tagged(x, 1), v.clone());
    }
    for (x, v) in m2.iter() {
        m.insert(&tagged(x, 2), v.clone());
    }
    m.insert(ALPHA, Value::Real(BigRational::zero()));
    m.insert(DELTA, Value::Real(BigRational::zero()));
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{parse_block, parse_unit, ParseOptions};

    fn setup(src: &str) -> (ProgramUnit, EvalCtx) {
        let u = parse_unit(src).unwrap();
        let ctx = EvalCtx::from_header(&u.header).unwrap();
        (u, ctx)
    }

    fn block(u: &ProgramUnit, s: &str) -> Block {
        parse_block(s, &u.header, ParseOptions { require_loop_annotations: false, check_names: false }).unwrap()
    }

    fn ghosts() -> Memory {
        Memory::from_pairs([(ALPHA, Value::real(0, 1)), (DELTA, Value::real(0, 1))])
    }

    #[test]
    fn assert_false_is_bottom() {
        let (u, ctx) = setup("decl x : int; return x");
        let out = TargetRunner::new(&ctx).run(&block(&u, "assert(false)"), &ghosts()).unwrap();
        assert!(out.is_bottom());
    }

    #[test]
    fn lap_invoke_enumerates_domain_and_charges() {
        let (u, ctx) = setup("decl x : int in {0..7}; return x");
        let b = block(&u, "(x_1, x_2) := Lap<>[0.1](5, 3)");
        let TargetOutcome::Mems(ms) = TargetRunner::new(&ctx).run(&b, &ghosts()).unwrap() else { panic!() };
        assert_eq!(ms.len(), 8);
        for m in &ms {
            assert_eq!(m.get("x_1"), m.get("x_2"));
            assert_eq!(m.get(ALPHA), Some(&Value::real(1, 5)));
        }
    }

    #[test]
    fn exp_invoke_unequal_scores_is_bottom() {
        let (u, ctx) = setup("range R = [0, 1]; decl x : int; return x");
        let b = block(&u, "(x_1, x_2) := Exp<>[1](score{(0, 0): 1, (0, 1): 0}, 0, score{(0, 0): 0, (0, 1): 0}, 0)");
        assert!(TargetRunner::new(&ctx).run(&b, &ghosts()).unwrap().is_bottom());
    }

    #[test]
    fn bottom_absorbs_later_statements() {
        let (u, ctx) = setup("decl x : int in {0..3}; return x");
        let b = block(&u, "assert(1 = 2); (x_1, x_2) := Lap<>[1](0, 0)");
        assert!(TargetRunner::new(&ctx).run(&b, &ghosts()).unwrap().is_bottom());
    }

    #[test]
    fn budget_exceeded() {
        let (u, ctx) = setup("decl x : int in {0..7}; decl y : int in {0..7}; return x");
        let b = block(&u, "(x_1, x_2) := Lap<>[1](0, 0); (y_1, y_2) := Lap<>[1](0, 0)");
        let mut r = TargetRunner::new(&ctx);
        r.budget = 20;
        assert!(matches!(r.run(&b, &ghosts()), Err(TargetError::Budget(20))));
    }
}
