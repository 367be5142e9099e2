//! Canonical, deterministic text for units, blocks and expressions.

use std::fmt::Write;

use super::ast::*;
use crate::values::Value;

pub fn pretty_expr(e: &Expr) -> String {
    let mut s = String::new();
    expr_into(e, 0, &mut s);
    s
}

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Quant(..) => 1,
        Expr::Binary(op, ..) => match op {
            BinOp::Iff => 2,
            BinOp::Implies => 3,
            BinOp::Or => 4,
            BinOp::And => 5,
            BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 7,
            BinOp::Cons => 8,
            BinOp::Add | BinOp::Sub => 9,
            BinOp::Mul | BinOp::Div | BinOp::IntDiv | BinOp::Mod => 10,
            BinOp::Min | BinOp::Max => 12,
        },
        Expr::Unary(UnOp::Not, _) => 6,
        Expr::Unary(UnOp::Neg, _) => 11,
        Expr::Lit(Value::Int(i)) if *i < 0 => 11,
        Expr::Lit(Value::Real(r)) if r < &num_rational::BigRational::from_integer(0.into()) => 11,
        Expr::Label(_, inner) => prec(inner),
        _ => 12,
    }
}

fn list_into(items: &[Expr], out: &mut String) {
    for (i, a) in items.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        expr_into(a, 0, out);
    }
}

fn call_into(name: &str, items: &[&Expr], out: &mut String) {
    out.push_str(name);
    out.push('(');
    for (i, a) in items.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        expr_into(a, 0, out);
    }
    out.push(')');
}

fn expr_into(e: &Expr, ctx: u8, out: &mut String) {
    let p = prec(e);
    let paren = p < ctx;
    if paren {
        out.push('(');
    }
    match e {
        Expr::Var(x) | Expr::Const(x, _) => out.push_str(x),
        Expr::Lit(v) => {
            let _ = write!(out, "{v}");
        }
        Expr::Label(_, inner) => expr_into(inner, ctx, out),
        Expr::Unary(UnOp::Not, a) => {
            out.push('!');
            expr_into(a, 6, out);
        }
        Expr::Unary(UnOp::Neg, a) => {
            out.push('-');
            expr_into(a, 11, out);
        }
        Expr::Unary(op, a) => {
            let name = match op {
                UnOp::Abs => "abs",
                UnOp::Hd => "hd",
                UnOp::Tl => "tl",
                _ => "length",
            };
            call_into(name, &[a], out);
        }
        Expr::Binary(op @ (BinOp::Min | BinOp::Max), a, b) => call_into(op.symbol(), &[a, b], out),
        Expr::Binary(op, a, b) => {
            let (lc, rc) = match op {
                BinOp::Implies | BinOp::Cons => (p + 1, p),
                o if o.is_comparison() => (p + 1, p + 1),
                _ => (p, p + 1),
            };
            expr_into(a, lc, out);
            out.push(' ');
            out.push_str(op.symbol());
            out.push(' ');
            expr_into(b, rc, out);
        }
        Expr::Ite(a, b, c) => call_into("ite", &[a, b, c], out),
        Expr::ListLit(items) => {
            out.push('[');
            list_into(items, out);
            out.push(']');
        }
        Expr::Call(f, args) => {
            out.push_str(f);
            out.push('(');
            list_into(args, out);
            out.push(')');
        }
        Expr::ScorePartial(f, args) => {
            let _ = write!(out, "score[{f}](");
            list_into(args, out);
            out.push(')');
        }
        Expr::ScoreApply(a, b, c) => call_into("apply", &[a, b, c], out),
        Expr::MaxGap(a, b, c) => call_into("maxgap", &[a, b, c], out),
        Expr::Acc(a, b) => call_into("ACC", &[a, b], out),
        Expr::Quant(q, v, dom, body) => {
            out.push_str(match q {
                Quant::Forall => "forall ",
                Quant::Exists => "exists ",
            });
            out.push_str(v);
            out.push_str(" in ");
            match dom {
                QDomain::Ints(lo, hi) => {
                    out.push('{');
                    expr_into(lo, 9, out);
                    out.push_str("..");
                    expr_into(hi, 9, out);
                    out.push('}');
                }
                QDomain::Range => out.push_str("range"),
                QDomain::Decl(x) => {
                    let _ = write!(out, "dom({x})");
                }
            }
            out.push_str(" . ");
            expr_into(body, 1, out);
        }
    }
    if paren {
        out.push(')');
    }
}

fn param(p: &Param) -> String {
    let mut s = String::new();
    expr_into(&p.expr, 9, &mut s);
    s
}

pub fn pretty_domain(d: &Domain) -> String {
    match d {
        Domain::Ints(lo, hi) => format!("{{{lo}..{hi}}}"),
        Domain::Values(vs) => {
            let items: Vec<String> = vs.iter().map(|v| v.to_string()).collect();
            format!("{{{}}}", items.join(", "))
        }
        Domain::Bools => "bool".to_string(),
        Domain::Lists { elems, min_len, max_len } => {
            format!("lists({}, {min_len}..{max_len})", pretty_domain(elems))
        }
        Domain::Msets { elems, min_len, max_len } => {
            format!("msets({}, {min_len}..{max_len})", pretty_domain(elems))
        }
        Domain::Hist { bins, max_total } => format!("hist({bins}, {max_total})"),
    }
}

pub fn pretty_block(b: &[Stmt]) -> String {
    let mut out = String::new();
    block_into(b, 0, &mut out);
    out
}

pub fn pretty_stmt(s: &Stmt) -> String {
    let mut out = String::new();
    stmt_into(s, 0, &mut out);
    out
}

fn indent(n: usize, out: &mut String) {
    for _ in 0..n {
        out.push_str("  ");
    }
}

fn block_into(b: &[Stmt], depth: usize, out: &mut String) {
    for (i, s) in b.iter().enumerate() {
        stmt_into(s, depth, out);
        if i + 1 < b.len() {
            out.push(';');
        }
        out.push('\n');
    }
}

fn braced(b: &[Stmt], depth: usize, out: &mut String) {
    out.push_str("{\n");
    block_into(b, depth + 1, out);
    indent(depth, out);
    out.push('}');
}

fn lapspec_into(spec: &LapSpec, depth: usize, out: &mut String) {
    if let LapSpec::Accuracy(d) = spec {
        indent(depth, out);
        let _ = writeln!(out, "@lapspec{{accuracy({})}}", param(d));
    }
}

fn stmt_into(s: &Stmt, depth: usize, out: &mut String) {
    let e = pretty_expr;
    match &s.kind {
        StmtKind::While { ann: Some(a), .. } => {
            indent(depth, out);
            let _ = writeln!(out, "@invariant{{{}}}", e(&a.invariant));
            indent(depth, out);
            let _ = writeln!(out, "@variant{{{}}}", e(&a.variant));
        }
        StmtKind::Lap { spec, .. } | StmtKind::LapInv { spec, .. } => lapspec_into(spec, depth, out),
        _ => {}
    }
    indent(depth, out);
    match &s.kind {
        StmtKind::Skip => out.push_str("skip"),
        StmtKind::Assign(x, v) => {
            let _ = write!(out, "{x} := {}", e(v));
        }
        StmtKind::Lap { var, eps, arg, .. } => {
            let _ = write!(out, "{var} := Lap[{}]({})", param(eps), e(arg));
        }
        StmtKind::Exp { var, eps, score, input } => {
            let _ = write!(out, "{var} := Exp[{}]({}, {})", param(eps), e(score), e(input));
        }
        StmtKind::Custom { var, mech, eps, args } => {
            let a: Vec<String> = args.iter().map(e).collect();
            let _ = write!(out, "{var} := {mech}[{}]({})", param(eps), a.join(", "));
        }
        StmtKind::If(g, a, b) => {
            let _ = write!(out, "if {} then ", e(g));
            braced(a, depth, out);
            out.push_str(" else ");
            braced(b, depth, out);
        }
        StmtKind::While { guard, body, .. } => {
            let _ = write!(out, "while {} do ", e(guard));
            braced(body, depth, out);
        }
        StmtKind::Return(v) => {
            let _ = write!(out, "return {}", e(v));
        }
        StmtKind::Cut(phi) => {
            let _ = write!(out, "@cut{{{}}}", e(phi));
        }
        StmtKind::Assert(phi) => {
            let _ = write!(out, "assert({})", e(phi));
        }
        StmtKind::LapInv { vars, eps, args, .. } => {
            let _ = write!(
                out,
                "({}, {}) := Lap◇[{}]({}, {})",
                vars.0,
                vars.1,
                param(eps),
                e(&args.0),
                e(&args.1)
            );
        }
        StmtKind::ExpInv { vars, eps, left, right } => {
            let _ = write!(
                out,
                "({}, {}) := Exp◇[{}]({}, {}, {}, {})",
                vars.0,
                vars.1,
                param(eps),
                e(&left.0),
                e(&left.1),
                e(&right.0),
                e(&right.1)
            );
        }
        StmtKind::CustomInv { vars, mech, eps, left, right } => {
            let l: Vec<String> = left.iter().map(e).collect();
            let r: Vec<String> = right.iter().map(e).collect();
            let _ = write!(
                out,
                "({}, {}) := {mech}◇[{}]({}; {})",
                vars.0,
                vars.1,
                param(eps),
                l.join(", "),
                r.join(", ")
            );
        }
        StmtKind::ReturnPair(a, b) => {
            let _ = write!(out, "return ({}, {})", e(a), e(b));
        }
    }
}

pub fn pretty_header(h: &Header) -> String {
    let mut out = String::new();
    if let Some(n) = &h.name {
        let _ = writeln!(out, "program {n};");
    }
    for c in &h.consts {
        let _ = writeln!(out, "const {} = {};", c.name, pretty_expr(&c.expr));
    }
    if let Some((n, vals)) = &h.range {
        let items: Vec<String> = vals.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "range {n} = [{}];", items.join(", "));
    }
    for m in &h.mechanisms {
        match &m.axioms {
            Some(a) => {
                let _ = writeln!(out, "mechanism {} axioms \"{a}\";", m.name);
            }
            None => {
                let _ = writeln!(out, "mechanism {};", m.name);
            }
        }
    }
    for b in &h.builtins {
        let _ = writeln!(out, "builtin {} = {}({});", b.name, b.factory, b.args.join(", "));
    }
    for v in &h.vars {
        let kw = if v.input { "input" } else { "decl" };
        let _ = write!(out, "{kw} {} : {}", v.name, v.ty);
        if let Some(d) = &v.domain {
            let _ = write!(out, " in {}", pretty_domain(d));
        }
        out.push_str(";\n");
    }
    for p in &h.preds {
        let ps: Vec<String> = p.params.iter().map(|(n, t)| format!("{n}: {t}")).collect();
        let _ = writeln!(out, "pred {}({}) = {};", p.name, ps.join(", "), pretty_expr(&p.body));
    }
    if let Some(pre) = &h.pre {
        let _ = writeln!(out, "pre {{ {} }};", pretty_expr(pre));
    }
    if let Some(t) = &h.target {
        let _ = writeln!(out, "target ({}, {});", param(&t.eps), param(&t.delta));
    }
    out
}

pub fn pretty_unit(u: &ProgramUnit) -> String {
    let mut out = pretty_header(&u.header);
    if !out.is_empty() {
        out.push('\n');
    }
    out.push_str(&pretty_block(&u.body));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parser::{parse_expr, parse_unit};

    #[test]
    fn skip_prints_as_skip() {
        let s = Stmt::new(StmtKind::Skip, Default::default());
        assert_eq!(pretty_stmt(&s), "skip");
    }

    #[test]
    fn expression_round_trip() {
        let h = Header::default();
        for src in [
            "a && (b || c)",
            "(a ==> b) ==> c",
            "a ==> b ==> c",
            "x - (y - z)",
            "x - y - z",
            "-(x + 1) * 2",
            "forall v in {0..n} . v < x && (exists w in range . w = v)",
            "hd(l) :: tl(l) = l",
            "!(a = b) <=> a != b",
            "abs(x_1 - x_2) <= 1 && maxgap(s, d_1, d_2) <= ACC(0.5, 0.1)",
        ] {
            let e = parse_expr(src, &h).unwrap();
            let printed = pretty_expr(&e);
            assert_eq!(parse_expr(&printed, &h).unwrap(), e, "{src} -> {printed}");
        }
    }

    #[test]
    fn unit_round_trip() {
        let src = "program t; const eps = 0.5; range R = [0, 1];\n\
                   input l : list<int> in lists({0..1}, 0..2); decl x : int;\n\
                   pre { l_1 = l_2 }; target (2*eps, 0);\n\
                   x := 0; @invariant{true} @variant{length(l_1)} while 0 < length(l) do { x := Lap[eps](x + hd(l)); l := tl(l) };\n\
                   if x > 0 then skip; return x";
        let u = parse_unit(src).unwrap();
        let printed = pretty_unit(&u);
        assert_eq!(parse_unit(&printed).unwrap(), u);
        assert_eq!(pretty_unit(&parse_unit(&printed).unwrap()), printed);
    }
}
