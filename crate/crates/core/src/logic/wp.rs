//! Backward weakest preconditions for target programs and the privacy goal.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_traits::ToPrimitive;
use serde_json::json;
use thiserror::Error;

use super::axioms::{AxiomError, AxiomSet};
use super::subst::{subst, subst1};
use crate::frontend::ast::*;
use crate::frontend::pretty::pretty_expr;
use crate::frontend::span::Span;
use crate::values::eval::acc_radius;
use crate::values::{EvalCtx, EvalError, Memory};

#[derive(Debug, Error)]
pub enum WpError {
    #[error("{0}: missing loop annotation")]
    MissingAnnotation(Span),
    #[error(transparent)]
    Axiom(#[from] AxiomError),
    #[error("{span}: {err}")]
    Eval { span: Span, err: EvalError },
    #[error("{0}: source statement in target program")]
    Source(Span),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Status {
    Unverified,
    Falsified { memory: Memory, blame: Option<Provenance> },
    GroundVerified { assignments: u64 },
    Exported,
}

impl Status {
    pub fn name(&self) -> &'static str {
        match self {
            Status::Unverified => "unverified",
            Status::Falsified { .. } => "falsified",
            Status::GroundVerified { .. } => "ground-verified",
            Status::Exported => "exported",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Obligation {
    pub id: usize,
    pub formula: Expr,
    pub provenance: Provenance,
    pub status: Status,
}

impl Obligation {
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = json!({
            "id": self.id,
            "rule": self.provenance.rule,
            "span": self.provenance.span.to_string(),
            "detail": self.provenance.detail,
            "formula": pretty_expr(&self.formula),
            "status": self.status.name(),
        });
        match &self.status {
            Status::Falsified { memory, blame } => {
                v["counterexample"] = memory.to_json();
                if let Some(b) = blame {
                    v["blame"] = json!(b.to_string());
                }
            }
            Status::GroundVerified { assignments } => v["assignments"] = json!(assignments),
            _ => {}
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HoareTriple {
    pub pre: Expr,
    pub cmd: Block,
    pub post: Expr,
}

/// Labels each top-level conjunct of `phi` with the given rule and span.
pub fn label_conjuncts(phi: &Expr, rule: &str, span: Span) -> Expr {
    Expr::conj(phi.conjuncts().into_iter().map(|c| {
        let d = pretty_expr(&c);
        label(Provenance::new(rule, span, d), c)
    }))
}

/// {Ψ ∧ α = 0 ∧ δ = 0} product {out_1 = out_2 ∧ α ≤ ε ∧ δ ≤ δ}.
pub fn privacy_goal(unit: &ProgramUnit, product: &[Stmt]) -> HoareTriple {
    let zero = || int(0);
    let pre = unit.precondition().and(var(ALPHA).eq(zero())).and(var(DELTA).eq(zero()));
    let span = product.last().map(|s| s.span).unwrap_or_default();
    let (eps, delta) = match &unit.header.target {
        Some(t) => (t.eps.expr.clone(), t.delta.expr.clone()),
        None => (zero(), zero()),
    };
    let post = Expr::conj([
        var(OUT1).eq(var(OUT2)),
        bin(BinOp::Le, var(ALPHA), eps),
        bin(BinOp::Le, var(DELTA), delta),
    ]);
    HoareTriple { pre, cmd: product.to_vec(), post: label_conjuncts(&post, "goal", span) }
}

/// Weakest-precondition calculus; loop and cut rules emit side obligations.
pub struct VcGen<'a> {
    pub axioms: Option<&'a AxiomSet>,
    pub obligations: Vec<Obligation>,
    pub used_custom: bool,
    fresh: usize,
}

impl<'a> VcGen<'a> {
    pub fn new(axioms: Option<&'a AxiomSet>) -> VcGen<'a> {
        VcGen { axioms, obligations: Vec::new(), used_custom: false, fresh: 0 }
    }

    fn fresh(&mut self, base: &str) -> String {
        self.fresh += 1;
        format!("__{base}{}", self.fresh)
    }

    fn side(&mut self, formula: Expr, rule: &str, span: Span, detail: String) {
        if formula.is_true() {
            return;
        }
        self.obligations.push(Obligation {
            id: 0,
            formula,
            provenance: Provenance::new(rule, span, detail),
            status: Status::Unverified,
        });
    }

    pub fn wp(&mut self, block: &[Stmt], post: Expr) -> Result<Expr, WpError> {
        let mut q = post;
        for s in block.iter().rev() {
            q = self.wp_stmt(s, q)?;
        }
        Ok(q)
    }

    fn wp_stmt(&mut self, s: &Stmt, q: Expr) -> Result<Expr, WpError> {
        let sp = s.span;
        Ok(match &s.kind {
            StmtKind::Skip => q,
            StmtKind::Assign(x, e) => subst1(&q, x, e),
            StmtKind::Assert(phi) => {
                let l = label(Provenance::new("assert", sp, pretty_expr(phi)), phi.clone());
                l.and(q)
            }
            StmtKind::Cut(phi) => {
                let ob = phi.clone().implies(q);
                self.side(ob, "cut", sp, pretty_expr(phi));
                label(Provenance::new("cut", sp, pretty_expr(phi)), phi.clone())
            }
            StmtKind::LapInv { vars, eps, args, spec } => {
                let v = self.fresh("v");
                let diff = un(UnOp::Abs, bin(BinOp::Sub, args.0.clone(), args.1.clone()));
                let mut m = BTreeMap::new();
                m.insert(vars.0.clone(), var(&v));
                m.insert(vars.1.clone(), var(&v));
                m.insert(ALPHA.to_string(), bin(BinOp::Add, var(ALPHA), bin(BinOp::Mul, diff, eps.expr.clone())));
                match spec {
                    LapSpec::Pure => {
                        Expr::Quant(Quant::Forall, v, QDomain::Decl(vars.0.clone()), Box::new(subst(&q, &m)))
                    }
                    LapSpec::Accuracy(dc) => {
                        m.insert(DELTA.to_string(), bin(BinOp::Add, var(DELTA), dc.expr.clone()));
                        let body = subst(&q, &m);
                        let radius = acc_radius(
                            eps.value.to_f64().unwrap_or(0.0),
                            dc.value.to_f64().unwrap_or(0.0),
                        )
                        .map_err(|err| WpError::Eval { span: sp, err })?
                        .floor()
                        .to_integer()
                        .to_i64()
                        .ok_or(WpError::Eval { span: sp, err: EvalError::Overflow("ACC".into()) })?;
                        let c = args.0.clone();
                        let window = QDomain::Ints(
                            Box::new(bin(BinOp::Sub, c.clone(), int(radius))),
                            Box::new(bin(BinOp::Add, c, int(radius))),
                        );
                        let same = args.0.clone().eq(args.1.clone());
                        let near = Expr::Quant(Quant::Forall, v.clone(), window, Box::new(body.clone()));
                        let far = Expr::Quant(Quant::Forall, v, QDomain::Decl(vars.0.clone()), Box::new(body));
                        same.clone().implies(near).and(same.not().implies(far))
                    }
                }
            }
            StmtKind::ExpInv { vars, eps, left, right } => {
                let r = self.fresh("r");
                let cost = bin(
                    BinOp::Mul,
                    eps.expr.clone(),
                    Expr::MaxGap(Box::new(left.0.clone()), Box::new(left.1.clone()), Box::new(right.1.clone())),
                );
                let mut m = BTreeMap::new();
                m.insert(vars.0.clone(), var(&r));
                m.insert(vars.1.clone(), var(&r));
                m.insert(ALPHA.to_string(), bin(BinOp::Add, var(ALPHA), cost));
                let same = left.0.clone().eq(right.0.clone());
                let detail = pretty_expr(&same);
                label(Provenance::new("exp-scores-equal", sp, detail), same)
                    .and(Expr::Quant(Quant::Forall, r, QDomain::Range, Box::new(subst(&q, &m))))
            }
            StmtKind::CustomInv { vars, mech, left, right, .. } => {
                self.used_custom = true;
                let ax = self.axioms.ok_or_else(|| AxiomError::Missing(mech.clone()))?.get(mech)?;
                let v = self.fresh("v");
                let cases = ax.instantiate(left, right, &var(&v))?;
                let mut some = ff();
                let mut all = tt();
                for c in cases {
                    some = if some.is_false() { c.pre.clone() } else { bin(BinOp::Or, some, c.pre.clone()) };
                    let mut m = BTreeMap::new();
                    m.insert(vars.0.clone(), var(&v));
                    m.insert(vars.1.clone(), var(&v));
                    m.insert(ALPHA.to_string(), bin(BinOp::Add, var(ALPHA), c.alpha.clone()));
                    m.insert(DELTA.to_string(), bin(BinOp::Add, var(DELTA), c.delta.clone()));
                    let body = c.out.clone().implies(subst(&q, &m));
                    let each = Expr::Quant(Quant::Forall, v.clone(), QDomain::Decl(vars.0.clone()), Box::new(body));
                    all = all.and(c.pre.implies(each));
                }
                label(Provenance::new("axiom-cases-cover", sp, mech.clone()), some).and(all)
            }
            StmtKind::If(g, a, b) => {
                let wa = self.wp(a, q.clone())?;
                let wb = self.wp(b, q)?;
                g.clone().implies(wa).and(g.clone().not().implies(wb))
            }
            StmtKind::While { guard, body, ann } => {
                let ann = ann.as_ref().ok_or(WpError::MissingAnnotation(sp))?;
                let inv = &ann.invariant;
                let vnt = &ann.variant;
                let k = self.fresh("k");
                // (i) an exhausted variant forces exit
                let exit = label(Provenance::new("variant-exit", sp, pretty_expr(guard)), guard.clone().not());
                self.side(
                    inv.clone().and(bin(BinOp::Le, vnt.clone(), int(0))).implies(exit),
                    "while-variant",
                    sp,
                    pretty_expr(vnt),
                );
                // (ii) the body preserves the invariant and decreases the variant
                let goal = label_conjuncts(inv, "invariant-preserved", sp).and(label(
                    Provenance::new("variant-decreases", sp, pretty_expr(vnt)),
                    bin(BinOp::Lt, vnt.clone(), var(&k)),
                ));
                let wb = self.wp(body, goal)?;
                // k is the pre-state value of the variant
                let wb = subst1(&wb, &k, vnt);
                self.side(inv.clone().and(guard.clone()).implies(wb), "while-body", sp, pretty_expr(inv));
                // (iii) invariant and exit give the postcondition
                self.side(inv.clone().and(guard.clone().not()).implies(q), "while-exit", sp, pretty_expr(inv));
                label_conjuncts(inv, "invariant-entry", sp)
            }
            StmtKind::ReturnPair(a, b) => {
                let mut m = BTreeMap::new();
                m.insert(OUT1.to_string(), a.clone());
                m.insert(OUT2.to_string(), b.clone());
                subst(&q, &m)
            }
            StmtKind::Lap { .. } | StmtKind::Exp { .. } | StmtKind::Custom { .. } | StmtKind::Return(_) => {
                return Err(WpError::Source(sp))
            }
        })
    }

    /// All obligations of a triple: pre ⇒ wp(cmd, post) first, then the
    /// loop and cut obligations in program order.
    pub fn generate(&mut self, t: &HoareTriple) -> Result<Vec<Obligation>, WpError> {
        self.obligations.clear();
        let w = self.wp(&t.cmd, t.post.clone())?;
        let span = t.cmd.first().map(|s| s.span).unwrap_or_default();
        let mut side = std::mem::take(&mut self.obligations);
        side.sort_by_key(|o| o.provenance.span.start);
        let mut all = vec![Obligation {
            id: 0,
            formula: t.pre.clone().implies(w),
            provenance: Provenance::new("precondition", span, pretty_expr(&t.pre)),
            status: Status::Unverified,
        }];
        all.extend(side);
        for (i, o) in all.iter_mut().enumerate() {
            o.id = i;
        }
        Ok(all)
    }
}

/// Innermost label enclosing a false sub-formula, following the structure
/// of conjunctions, implications and failing universal instances.
pub fn blame(e: &Expr, ctx: &EvalCtx, m: &Memory) -> Option<Arc<Provenance>> {
    let holds = |e: &Expr| ctx.eval_bool(e, m).ok();
    match e {
        Expr::Label(p, inner) => blame(inner, ctx, m).or_else(|| Some(p.clone())),
        Expr::Binary(BinOp::And, a, b) => {
            if holds(a) == Some(false) {
                blame(a, ctx, m)
            } else {
                blame(b, ctx, m)
            }
        }
        Expr::Binary(BinOp::Implies, _, b) => blame(b, ctx, m),
        Expr::Quant(Quant::Forall, v, dom, body) => {
            let values = ctx.quant_domain(dom, m).ok()?;
            values.iter().find_map(|val| {
                let mut inner = m.clone();
                inner.insert(v, val.clone());
                match ctx.eval_bool(body, &inner) {
                    Ok(false) => blame(body, ctx, &inner),
                    _ => None,
                }
            })
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{parse_block, parse_expr, parse_unit, ParseOptions};

    fn unit() -> ProgramUnit {
        parse_unit("decl x : int in {0..3}; decl y : int; decl i : int; return x").unwrap()
    }

    fn blk(u: &ProgramUnit, s: &str) -> Block {
        parse_block(s, &u.header, ParseOptions { require_loop_annotations: false, check_names: false }).unwrap()
    }

    fn e(u: &ProgramUnit, s: &str) -> Expr {
        parse_expr(s, &u.header).unwrap()
    }

    #[test]
    fn skip_and_assign() {
        let u = unit();
        let mut g = VcGen::new(None);
        let q = e(&u, "y_1 < 3");
        assert_eq!(g.wp(&blk(&u, "skip"), q.clone()).unwrap(), q);
        let w = g.wp(&blk(&u, "y_1 := y_1 + 1"), q).unwrap();
        assert_eq!(pretty_expr(&w), "y_1 + 1 < 3");
    }

    #[test]
    fn lap_invoke_charges_alpha() {
        let u = unit();
        let mut g = VcGen::new(None);
        let w = g.wp(&blk(&u, "(x_1, x_2) := Lap<>[0.5](y_1, y_2)"), e(&u, "x_1 = x_2 && __alpha <= 1")).unwrap();
        assert_eq!(
            pretty_expr(&w),
            "forall __v1 in dom(x_1) . __v1 = __v1 && __alpha + abs(y_1 - y_2) * 0.5 <= 1"
        );
    }

    #[test]
    fn while_emits_three_obligations() {
        let u = unit();
        let b = blk(&u, "@invariant{i_1 <= 3} @variant{3 - i_1} while i_1 < 3 do i_1 := i_1 + 1");
        let t = HoareTriple { pre: e(&u, "i_1 = 0"), cmd: b, post: e(&u, "i_1 = 3") };
        let obs = VcGen::new(None).generate(&t).unwrap();
        let rules: Vec<&str> = obs.iter().map(|o| o.provenance.rule.as_str()).collect();
        assert_eq!(rules, ["precondition", "while-variant", "while-body", "while-exit"]);
    }

    #[test]
    fn missing_annotation_is_an_error() {
        let u = unit();
        let b = blk(&u, "while i_1 < 3 do i_1 := i_1 + 1");
        assert!(matches!(VcGen::new(None).wp(&b, tt()), Err(WpError::MissingAnnotation(_))));
    }
}
