//! Capture-avoiding simultaneous substitution on formulas.

use std::collections::{BTreeMap, BTreeSet};

use crate::frontend::ast::*;

/// A name based on `base` that does not occur in `avoid`.
pub fn fresh(base: &str, avoid: &BTreeSet<String>) -> String {
    let stem = base.trim_start_matches('_');
    (0..)
        .map(|i| format!("__{stem}{i}"))
        .find(|n| !avoid.contains(n))
        .expect("unbounded name supply")
}

/// Replaces every free occurrence of each key of `map` by its expression, all at once.
pub fn subst(e: &Expr, map: &BTreeMap<String, Expr>) -> Expr {
    if map.is_empty() {
        return e.clone();
    }
    let mut fv_repl = BTreeSet::new();
    for r in map.values() {
        fv_repl.extend(r.free_vars());
    }
    go(e, map, &fv_repl)
}

pub fn subst1(e: &Expr, x: &str, r: &Expr) -> Expr {
    let mut m = BTreeMap::new();
    m.insert(x.to_string(), r.clone());
    subst(e, &m)
}

fn go(e: &Expr, map: &BTreeMap<String, Expr>, fv_repl: &BTreeSet<String>) -> Expr {
    let r = |x: &Expr| Box::new(go(x, map, fv_repl));
    let rs = |xs: &[Expr]| xs.iter().map(|x| go(x, map, fv_repl)).collect();
    match e {
        Expr::Var(x) => map.get(x).cloned().unwrap_or_else(|| e.clone()),
        Expr::Const(..) | Expr::Lit(_) => e.clone(),
        Expr::Unary(op, a) => Expr::Unary(*op, r(a)),
        Expr::Binary(op, a, b) => Expr::Binary(*op, r(a), r(b)),
        Expr::Ite(a, b, c) => Expr::Ite(r(a), r(b), r(c)),
        Expr::ScoreApply(a, b, c) => Expr::ScoreApply(r(a), r(b), r(c)),
        Expr::MaxGap(a, b, c) => Expr::MaxGap(r(a), r(b), r(c)),
        Expr::Acc(a, b) => Expr::Acc(r(a), r(b)),
        Expr::ListLit(xs) => Expr::ListLit(rs(xs)),
        Expr::Call(f, xs) => Expr::Call(f.clone(), rs(xs)),
        Expr::ScorePartial(f, xs) => Expr::ScorePartial(f.clone(), rs(xs)),
        Expr::Label(p, a) => Expr::Label(p.clone(), r(a)),
        Expr::Quant(q, v, dom, body) => {
            let dom = match dom {
                QDomain::Ints(lo, hi) => QDomain::Ints(r(lo), r(hi)),
                d => d.clone(),
            };
            let mut inner = map.clone();
            inner.remove(v);
            if inner.is_empty() {
                return Expr::Quant(*q, v.clone(), dom, body.clone());
            }
            if fv_repl.contains(v) {
                let mut avoid = fv_repl.clone();
                avoid.extend(body.free_vars());
                avoid.extend(map.keys().cloned());
                let v2 = fresh(v, &avoid);
                let renamed = subst1(body, v, &Expr::Var(v2.clone()));
                let mut fv = fv_repl.clone();
                fv.insert(v2.clone());
                return Expr::Quant(*q, v2, dom, Box::new(go(&renamed, &inner, &fv)));
            }
            Expr::Quant(*q, v.clone(), dom, Box::new(go(body, &inner, fv_repl)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{parse_expr, pretty_expr, Header};

    fn p(s: &str) -> Expr {
        parse_expr(s, &Header::default()).unwrap()
    }

    #[test]
    fn simultaneous() {
        let mut m = BTreeMap::new();
        m.insert("x".to_string(), p("y"));
        m.insert("y".to_string(), p("x"));
        assert_eq!(pretty_expr(&subst(&p("x < y"), &m)), "y < x");
    }

    #[test]
    fn bound_variables_untouched() {
        let e = subst1(&p("forall x in {0..2} . x < y"), "x", &p("5"));
        assert_eq!(pretty_expr(&e), "forall x in {0..2} . x < y");
    }

    #[test]
    fn capture_avoided() {
        let e = subst1(&p("forall v in {0..2} . v < y"), "y", &p("v + 1"));
        assert_eq!(pretty_expr(&e), "forall __v0 in {0..2} . __v0 < v + 1");
    }
}
