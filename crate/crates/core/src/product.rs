//! The self-product: two synchronized, tagged copies of a source program with
//! paired mechanism invocations.

use std::collections::BTreeSet;

use serde_json::json;
use thiserror::Error;

use crate::frontend::ast::*;
use crate::frontend::pretty::pretty_expr;
use crate::frontend::span::Span;

/// Tags every free variable of `e` with side 1 or 2.
pub fn rename(e: &Expr, tag: u8) -> Expr {
    rename_in(e, tag, &mut Vec::new())
}

fn rename_in(e: &Expr, tag: u8, bound: &mut Vec<String>) -> Expr {
    let r = |x: &Expr, bound: &mut Vec<String>| Box::new(rename_in(x, tag, bound));
    match e {
        Expr::Var(x) if bound.contains(x) => e.clone(),
        Expr::Var(x) => Expr::Var(tagged(x, tag)),
        Expr::Const(..) | Expr::Lit(_) => e.clone(),
        Expr::Unary(op, a) => Expr::Unary(*op, r(a, bound)),
        Expr::Binary(op, a, b) => Expr::Binary(*op, r(a, bound), r(b, bound)),
        Expr::Ite(a, b, c) => Expr::Ite(r(a, bound), r(b, bound), r(c, bound)),
        Expr::ScoreApply(a, b, c) => Expr::ScoreApply(r(a, bound), r(b, bound), r(c, bound)),
        Expr::MaxGap(a, b, c) => Expr::MaxGap(r(a, bound), r(b, bound), r(c, bound)),
        Expr::Acc(a, b) => Expr::Acc(r(a, bound), r(b, bound)),
        Expr::ListLit(xs) => Expr::ListLit(xs.iter().map(|x| rename_in(x, tag, bound)).collect()),
        Expr::Call(f, xs) => Expr::Call(f.clone(), xs.iter().map(|x| rename_in(x, tag, bound)).collect()),
        Expr::ScorePartial(f, xs) => {
            Expr::ScorePartial(f.clone(), xs.iter().map(|x| rename_in(x, tag, bound)).collect())
        }
        Expr::Label(p, a) => Expr::Label(p.clone(), r(a, bound)),
        Expr::Quant(q, v, dom, body) => {
            let dom = match dom {
                QDomain::Ints(lo, hi) => QDomain::Ints(r(lo, bound), r(hi, bound)),
                d => d.clone(),
            };
            bound.push(v.clone());
            let body = r(body, bound);
            bound.pop();
            Expr::Quant(*q, v.clone(), dom, body)
        }
    }
}

/// `b_1 <=> b_2`, the synchronization condition for a guard.
pub fn sync(g: &Expr) -> Expr {
    bin(BinOp::Iff, rename(g, 1), rename(g, 2))
}

/// Self-product of a source block. Loop annotations and cuts are copied as is.
pub fn self_product(block: &[Stmt]) -> Block {
    let mut out = Vec::new();
    for s in block {
        product_stmt(s, &mut out);
    }
    out
}

fn product_stmt(s: &Stmt, out: &mut Block) {
    let sp = s.span;
    let st = |k: StmtKind| Stmt::new(k, sp);
    let pair = |x: &str| (tagged(x, 1), tagged(x, 2));
    match &s.kind {
        StmtKind::Skip => out.push(st(StmtKind::Skip)),
        StmtKind::Assign(x, e) => {
            out.push(st(StmtKind::Assign(tagged(x, 1), rename(e, 1))));
            out.push(st(StmtKind::Assign(tagged(x, 2), rename(e, 2))));
        }
        StmtKind::Lap { var, eps, arg, spec } => out.push(st(StmtKind::LapInv {
            vars: pair(var),
            eps: eps.clone(),
            args: (rename(arg, 1), rename(arg, 2)),
            spec: spec.clone(),
        })),
        StmtKind::Exp { var, eps, score, input } => out.push(st(StmtKind::ExpInv {
            vars: pair(var),
            eps: eps.clone(),
            left: (rename(score, 1), rename(input, 1)),
            right: (rename(score, 2), rename(input, 2)),
        })),
        StmtKind::Custom { var, mech, eps, args } => out.push(st(StmtKind::CustomInv {
            vars: pair(var),
            mech: mech.clone(),
            eps: eps.clone(),
            left: args.iter().map(|a| rename(a, 1)).collect(),
            right: args.iter().map(|a| rename(a, 2)).collect(),
        })),
        StmtKind::If(g, a, b) => {
            out.push(st(StmtKind::Assert(sync(g))));
            out.push(st(StmtKind::If(rename(g, 1), self_product(a), self_product(b))));
        }
        StmtKind::While { guard, body, ann } => {
            out.push(st(StmtKind::Assert(sync(guard))));
            let mut b = self_product(body);
            b.push(st(StmtKind::Assert(sync(guard))));
            out.push(st(StmtKind::While { guard: rename(guard, 1), body: b, ann: ann.clone() }));
        }
        StmtKind::Return(e) => out.push(st(StmtKind::ReturnPair(rename(e, 1), rename(e, 2)))),
        StmtKind::Cut(_) => out.push(s.clone()),
        _ => out.push(s.clone()),
    }
}

/// Origin of a taint: a Laplace/exponential sample or a custom mechanism output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaintKind {
    Noise,
    Custom,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{span}: loop guard `{guard}` reads `{var}`, which depends on sampled values")]
pub struct TaintError {
    pub guard: String,
    pub var: String,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaintWarning {
    pub message: String,
    pub span: Span,
}

#[derive(Default)]
struct Taint {
    noise: BTreeSet<String>,
    custom: BTreeSet<String>,
}

impl Taint {
    fn kind_of(&self, vars: &BTreeSet<String>) -> Option<(TaintKind, String)> {
        if let Some(x) = vars.iter().find(|x| self.noise.contains(*x)) {
            return Some((TaintKind::Noise, x.clone()));
        }
        vars.iter().find(|x| self.custom.contains(*x)).map(|x| (TaintKind::Custom, x.clone()))
    }

    fn mark(&mut self, x: &str, kind: Option<TaintKind>) -> bool {
        match kind {
            Some(TaintKind::Noise) => self.noise.insert(x.to_string()),
            Some(TaintKind::Custom) => self.custom.insert(x.to_string()),
            None => false,
        }
    }

    /// One propagation pass; `ctl` is the taint of the enclosing guards.
    fn pass(&mut self, block: &[Stmt], ctl: Option<TaintKind>) -> bool {
        let mut changed = false;
        for s in block {
            let flow = |t: &Taint, e: &[&Expr]| {
                let mut vs = BTreeSet::new();
                for x in e {
                    vs.extend(x.free_vars());
                }
                join(t.kind_of(&vs).map(|(k, _)| k), ctl)
            };
            match &s.kind {
                StmtKind::Assign(x, e) => {
                    let k = flow(self, &[e]);
                    changed |= self.mark(x, k);
                }
                StmtKind::Lap { var, .. } | StmtKind::Exp { var, .. } => {
                    changed |= self.mark(var, Some(TaintKind::Noise));
                }
                StmtKind::Custom { var, args, .. } => {
                    let refs: Vec<&Expr> = args.iter().collect();
                    let k = join(Some(TaintKind::Custom), flow(self, &refs));
                    changed |= self.mark(var, k);
                }
                StmtKind::If(g, a, b) => {
                    let k = flow(self, &[g]);
                    changed |= self.pass(a, k);
                    changed |= self.pass(b, k);
                }
                StmtKind::While { guard, body, .. } => {
                    let k = flow(self, &[guard]);
                    changed |= self.pass(body, k);
                }
                _ => {}
            }
        }
        changed
    }
}

fn join(a: Option<TaintKind>, b: Option<TaintKind>) -> Option<TaintKind> {
    match (a, b) {
        (Some(TaintKind::Noise), _) | (_, Some(TaintKind::Noise)) => Some(TaintKind::Noise),
        (Some(k), _) | (_, Some(k)) => Some(k),
        _ => None,
    }
}

/// Rejects loops whose guard depends on Laplace or exponential samples.
/// Tainted branch guards and loop guards tainted only by custom mechanisms
/// produce warnings.
pub fn taint_check(block: &[Stmt]) -> Result<Vec<TaintWarning>, TaintError> {
    let mut t = Taint::default();
    while t.pass(block, None) {}
    let mut warnings = Vec::new();
    let mut err = None;
    walk_block(block, &mut |s| {
        let (g, is_loop) = match &s.kind {
            StmtKind::If(g, ..) => (g, false),
            StmtKind::While { guard, .. } => (guard, true),
            _ => return,
        };
        let Some((kind, var)) = t.kind_of(&g.free_vars()) else { return };
        let guard = pretty_expr(g);
        match (is_loop, kind) {
            (true, TaintKind::Noise) => {
                if err.is_none() {
                    err = Some(TaintError { guard, var, span: s.span });
                }
            }
            (true, TaintKind::Custom) => warnings.push(TaintWarning {
                message: format!("loop guard `{guard}` reads `{var}`, an output of a custom mechanism"),
                span: s.span,
            }),
            (false, _) => warnings.push(TaintWarning {
                message: format!("branch guard `{guard}` reads sampled variable `{var}`"),
                span: s.span,
            }),
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(warnings),
    }
}

fn param_json(p: &Param) -> serde_json::Value {
    json!(pretty_expr(&p.expr))
}

fn spec_json(s: &LapSpec) -> serde_json::Value {
    match s {
        LapSpec::Pure => json!("pure"),
        LapSpec::Accuracy(p) => json!({ "accuracy": param_json(p) }),
    }
}

/// JSON form of a target block; expressions are rendered as canonical text.
pub fn target_json(block: &[Stmt]) -> serde_json::Value {
    serde_json::Value::Array(block.iter().map(stmt_json).collect())
}

fn stmt_json(s: &Stmt) -> serde_json::Value {
    let e = |x: &Expr| json!(pretty_expr(x));
    let es = |xs: &[Expr]| json!(xs.iter().map(pretty_expr).collect::<Vec<_>>());
    let mut v = match &s.kind {
        StmtKind::Skip => json!({ "kind": "skip" }),
        StmtKind::Assign(x, ex) => json!({ "kind": "assign", "var": x, "expr": e(ex) }),
        StmtKind::Assert(p) => json!({ "kind": "assert", "formula": e(p) }),
        StmtKind::Cut(p) => json!({ "kind": "cut", "formula": e(p) }),
        StmtKind::LapInv { vars, eps, args, spec } => json!({
            "kind": "lap-invoke", "vars": [vars.0, vars.1], "eps": param_json(eps),
            "args": [e(&args.0), e(&args.1)], "spec": spec_json(spec)
        }),
        StmtKind::ExpInv { vars, eps, left, right } => json!({
            "kind": "exp-invoke", "vars": [vars.0, vars.1], "eps": param_json(eps),
            "left": [e(&left.0), e(&left.1)], "right": [e(&right.0), e(&right.1)]
        }),
        StmtKind::CustomInv { vars, mech, eps, left, right } => json!({
            "kind": "custom-invoke", "mechanism": mech, "vars": [vars.0, vars.1],
            "eps": param_json(eps), "left": es(left), "right": es(right)
        }),
        StmtKind::If(g, a, b) => json!({
            "kind": "if", "guard": e(g), "then": target_json(a), "else": target_json(b)
        }),
        StmtKind::While { guard, body, ann } => json!({
            "kind": "while", "guard": e(guard), "body": target_json(body),
            "invariant": ann.as_ref().map(|a| pretty_expr(&a.invariant)),
            "variant": ann.as_ref().map(|a| pretty_expr(&a.variant)),
        }),
        StmtKind::ReturnPair(a, b) => json!({ "kind": "return", "pair": [e(a), e(b)] }),
        // Source-only statements do not occur in products.
        StmtKind::Lap { .. } | StmtKind::Exp { .. } | StmtKind::Custom { .. } | StmtKind::Return(_) => {
            json!({ "kind": "source" })
        }
    };
    v["line"] = json!(s.span.line);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{parse_expr, parse_unit, pretty_block};

    #[test]
    fn rename_tags_free_variables() {
        let h = parse_unit("decl x : int; decl l : list<int>; return x").unwrap().header;
        assert_eq!(pretty_expr(&rename(&parse_expr("x + 1", &h).unwrap(), 1)), "x_1 + 1");
        assert_eq!(pretty_expr(&rename(&parse_expr("hd(l)", &h).unwrap(), 2)), "hd(l_2)");
        let q = parse_expr("forall v in {0..2} . v <= x", &h).unwrap();
        assert_eq!(pretty_expr(&rename(&q, 1)), "forall v in {0..2} . v <= x_1");
    }

    #[test]
    fn intro_product() {
        let u = parse_unit("input a : int in {0..4}; decl y : int; decl x : int; y := a + a; x := Lap[0.5](y); return x")
            .unwrap();
        let p = pretty_block(&self_product(&u.body));
        assert_eq!(p, "y_1 := a_1 + a_1;\ny_2 := a_2 + a_2;\n(x_1, x_2) := Lap◇[0.5](y_1, y_2);\nreturn (x_1, x_2)\n");
    }

    #[test]
    fn noisy_loop_guard_rejected() {
        let u = parse_unit("decl x : int; x := Lap[1](0); @invariant{true} @variant{x_1} while x > 0 do x := x - 1; return x")
            .unwrap();
        let e = taint_check(&u.body).unwrap_err();
        assert_eq!(e.var, "x");
        assert!(e.to_string().contains("x > 0"));
    }

    #[test]
    fn noisy_branch_guard_warns() {
        let u = parse_unit("decl x : int; decl y : int; x := Lap[1](0); if x > 0 then y := 1 else y := 2; return y").unwrap();
        let w = taint_check(&u.body).unwrap();
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn implicit_flow_is_tracked() {
        let u = parse_unit(
            "decl x : int; decl y : int; x := Lap[1](0); if x > 0 then y := 1 else y := 2;
             @invariant{true} @variant{y_1} while y > 0 do y := y - 1; return y",
        )
        .unwrap();
        assert_eq!(taint_check(&u.body).unwrap_err().var, "y");
    }
}
