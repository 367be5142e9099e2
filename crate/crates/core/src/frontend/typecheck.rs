//! Static types for expressions, formulas and statements.

use std::collections::BTreeMap;

use thiserror::Error;

use super::ast::*;
use super::span::Span;
use crate::values::{Registry, ScoreFn, Value};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{span}: {message}")]
pub struct TypeError {
    pub message: String,
    pub span: Span,
}

/// Typing context: variable types, predicate and builtin signatures, and the
/// element type of the mechanism range.
#[derive(Clone, Debug, Default)]
pub struct TypeEnv {
    pub vars: BTreeMap<String, Type>,
    /// Declared (untagged) variables, for `dom(x)` quantifiers.
    pub decls: BTreeMap<String, Type>,
    pub funcs: BTreeMap<String, (Vec<Type>, Type)>,
    pub range_ty: Option<Type>,
}

pub fn value_type(v: &Value) -> Type {
    match v {
        Value::Bool(_) => Type::Bool,
        Value::Int(_) => Type::Int,
        Value::Real(_) => Type::Real,
        Value::List(l) => Type::List(Box::new(l.first().map(value_type).unwrap_or(Type::Int))),
        Value::Score(_) => Type::Score,
    }
}

/// Types that may be compared or unified (ints and reals mix).
pub fn compatible(a: &Type, b: &Type) -> bool {
    match (a, b) {
        (Type::List(x), Type::List(y)) => compatible(x, y),
        (x, y) if x.is_numeric() && y.is_numeric() => true,
        (x, y) => x == y,
    }
}

/// Whether a value of type `src` may be stored in a variable of type `dst`.
pub fn assignable(dst: &Type, src: &Type) -> bool {
    match (dst, src) {
        (Type::Real, Type::Int) => true,
        (Type::List(x), Type::List(y)) => assignable(x, y),
        (x, y) => x == y,
    }
}

fn join_numeric(a: &Type, b: &Type) -> Type {
    if *a == Type::Int && *b == Type::Int {
        Type::Int
    } else {
        Type::Real
    }
}

impl TypeEnv {
    fn base(h: &Header, reg: &Registry) -> TypeEnv {
        let mut funcs = BTreeMap::new();
        for name in reg.names() {
            let b = reg.get(name).unwrap();
            funcs.insert(name.to_string(), (b.params.clone(), b.ret.clone()));
        }
        for p in &h.preds {
            funcs.insert(p.name.clone(), (p.params.iter().map(|(_, t)| t.clone()).collect(), Type::Bool));
        }
        TypeEnv {
            vars: BTreeMap::new(),
            decls: h.vars.iter().map(|v| (v.name.clone(), v.ty.clone())).collect(),
            funcs,
            range_ty: h.range_values().first().map(value_type),
        }
    }

    /// Environment of the source program: declared variables, untagged.
    pub fn source(h: &Header, reg: &Registry) -> TypeEnv {
        let mut env = TypeEnv::base(h, reg);
        env.vars = env.decls.clone();
        env
    }

    /// Environment of the product: tagged copies, ghosts and return pseudo-variables.
    pub fn product(h: &Header, reg: &Registry, ret: Option<Type>) -> TypeEnv {
        let mut env = TypeEnv::base(h, reg);
        for v in &h.vars {
            env.vars.insert(tagged(&v.name, 1), v.ty.clone());
            env.vars.insert(tagged(&v.name, 2), v.ty.clone());
        }
        env.vars.insert(ALPHA.into(), Type::Real);
        env.vars.insert(DELTA.into(), Type::Real);
        if let Some(t) = ret {
            env.vars.insert(OUT1.into(), t.clone());
            env.vars.insert(OUT2.into(), t);
        }
        env
    }

    pub fn with_var(mut self, name: &str, ty: Type) -> TypeEnv {
        self.vars.insert(name.to_string(), ty);
        self
    }

    pub fn type_of(&self, e: &Expr) -> Result<Type, String> {
        self.ty(e, &mut Vec::new())
    }

    /// Type of `e` with extra bound variables in scope.
    pub fn ty(&self, e: &Expr, scope: &mut Vec<(String, Type)>) -> Result<Type, String> {
        match e {
            Expr::Var(x) => scope
                .iter()
                .rev()
                .find(|(n, _)| n == x)
                .map(|(_, t)| t.clone())
                .or_else(|| self.vars.get(x).cloned())
                .ok_or_else(|| format!("unbound variable `{x}`")),
            Expr::Const(_, v) | Expr::Lit(v) => {
                if let Value::Score(s) = v {
                    if let (ScoreFn::Table(t), Some(rt)) = (s.as_ref(), &self.range_ty) {
                        for (_, r) in t.keys() {
                            if !compatible(&value_type(r), rt) {
                                return Err(format!("score applied outside declared range at `{r}`"));
                            }
                        }
                    }
                }
                Ok(value_type(v))
            }
            Expr::Label(_, inner) => self.ty(inner, scope),
            Expr::Unary(op, a) => {
                let t = self.ty(a, scope)?;
                match op {
                    UnOp::Neg | UnOp::Abs if t.is_numeric() => Ok(t),
                    UnOp::Not if t == Type::Bool => Ok(t),
                    UnOp::Hd => match t {
                        Type::List(inner) => Ok(*inner),
                        _ => Err(format!("hd expects a list, got {t}")),
                    },
                    UnOp::Tl if matches!(t, Type::List(_)) => Ok(t),
                    UnOp::Length if matches!(t, Type::List(_)) => Ok(Type::Int),
                    _ => Err(format!("operator {op:?} cannot be applied to {t}")),
                }
            }
            Expr::Binary(op, a, b) => {
                let ta = self.ty(a, scope)?;
                let tb = self.ty(b, scope)?;
                let sym = op.symbol();
                match op {
                    BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Min | BinOp::Max => {
                        if ta.is_numeric() && tb.is_numeric() {
                            Ok(join_numeric(&ta, &tb))
                        } else {
                            Err(format!("`{sym}` expects numbers, got {ta} and {tb}"))
                        }
                    }
                    BinOp::Div => {
                        if ta.is_numeric() && tb.is_numeric() {
                            Ok(Type::Real)
                        } else {
                            Err(format!("`/` expects numbers, got {ta} and {tb}"))
                        }
                    }
                    BinOp::IntDiv | BinOp::Mod => {
                        if ta == Type::Int && tb == Type::Int {
                            Ok(Type::Int)
                        } else {
                            Err(format!("`{sym}` expects integers, got {ta} and {tb}"))
                        }
                    }
                    BinOp::Cons => match &tb {
                        Type::List(inner) if compatible(inner, &ta) => Ok(if ta == Type::Real {
                            Type::List(Box::new(Type::Real))
                        } else {
                            tb.clone()
                        }),
                        _ => Err(format!("`::` expects an element and a list, got {ta} and {tb}")),
                    },
                    BinOp::Eq | BinOp::Ne => {
                        if compatible(&ta, &tb) {
                            Ok(Type::Bool)
                        } else {
                            Err(format!("cannot compare {ta} with {tb}"))
                        }
                    }
                    BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => {
                        if ta.is_numeric() && tb.is_numeric() {
                            Ok(Type::Bool)
                        } else {
                            Err(format!("`{sym}` expects numbers, got {ta} and {tb}"))
                        }
                    }
                    BinOp::And | BinOp::Or | BinOp::Implies | BinOp::Iff => {
                        if ta == Type::Bool && tb == Type::Bool {
                            Ok(Type::Bool)
                        } else {
                            Err(format!("`{sym}` expects booleans, got {ta} and {tb}"))
                        }
                    }
                }
            }
            Expr::Ite(c, a, b) => {
                if self.ty(c, scope)? != Type::Bool {
                    return Err("ite condition must be bool".into());
                }
                let ta = self.ty(a, scope)?;
                let tb = self.ty(b, scope)?;
                if !compatible(&ta, &tb) {
                    return Err(format!("ite branches have types {ta} and {tb}"));
                }
                Ok(if ta.is_numeric() { join_numeric(&ta, &tb) } else { ta })
            }
            Expr::ListLit(items) => {
                let mut elem: Option<Type> = None;
                for i in items {
                    let t = self.ty(i, scope)?;
                    elem = Some(match elem {
                        None => t,
                        Some(prev) if compatible(&prev, &t) => {
                            if prev.is_numeric() {
                                join_numeric(&prev, &t)
                            } else {
                                prev
                            }
                        }
                        Some(prev) => return Err(format!("list mixes {prev} and {t}")),
                    });
                }
                Ok(Type::List(Box::new(elem.unwrap_or(Type::Int))))
            }
            Expr::Call(f, args) => {
                let (params, ret) = self.funcs.get(f).ok_or_else(|| format!("unknown builtin `{f}`"))?;
                if params.len() != args.len() {
                    return Err(format!("`{f}` expects {} argument(s), got {}", params.len(), args.len()));
                }
                for (p, a) in params.iter().zip(args) {
                    let t = self.ty(a, scope)?;
                    if !assignable(p, &t) && !compatible(p, &t) {
                        return Err(format!("argument of `{f}` has type {t}, expected {p}"));
                    }
                }
                Ok(ret.clone())
            }
            Expr::ScorePartial(f, args) => {
                let (params, ret) = self.funcs.get(f).ok_or_else(|| format!("unknown builtin `{f}`"))?;
                if params.len() != args.len() + 2 {
                    return Err(format!(
                        "score[{f}] needs a builtin taking {} arguments plus input and range element",
                        args.len()
                    ));
                }
                if !ret.is_numeric() {
                    return Err(format!("score builtin `{f}` must return a number"));
                }
                for (p, a) in params.iter().zip(args) {
                    let t = self.ty(a, scope)?;
                    if !compatible(p, &t) {
                        return Err(format!("argument of score[{f}] has type {t}, expected {p}"));
                    }
                }
                if let (Some(rt), Some(pt)) = (&self.range_ty, params.last()) {
                    if !compatible(rt, pt) {
                        return Err(format!("score[{f}] is not defined over the declared range"));
                    }
                }
                Ok(Type::Score)
            }
            Expr::ScoreApply(s, i, r) => {
                if self.ty(s, scope)? != Type::Score {
                    return Err("apply expects a score function".into());
                }
                self.ty(i, scope)?;
                let rt = self.ty(r, scope)?;
                if let Some(range) = &self.range_ty {
                    if !compatible(range, &rt) {
                        return Err("score applied outside declared range".into());
                    }
                }
                Ok(Type::Real)
            }
            Expr::MaxGap(s, a, b) => {
                if self.ty(s, scope)? != Type::Score {
                    return Err("maxgap expects a score function".into());
                }
                let ta = self.ty(a, scope)?;
                let tb = self.ty(b, scope)?;
                if !compatible(&ta, &tb) {
                    return Err("maxgap inputs have different types".into());
                }
                Ok(Type::Real)
            }
            Expr::Acc(a, b) => {
                if !self.ty(a, scope)?.is_numeric() || !self.ty(b, scope)?.is_numeric() {
                    return Err("ACC expects numbers".into());
                }
                Ok(Type::Real)
            }
            Expr::Quant(_, v, dom, body) => {
                let vt = match dom {
                    QDomain::Ints(lo, hi) => {
                        if self.ty(lo, scope)? != Type::Int || self.ty(hi, scope)? != Type::Int {
                            return Err("quantifier bounds must be integers".into());
                        }
                        Type::Int
                    }
                    QDomain::Range => self.range_ty.clone().ok_or("no range declared")?,
                    QDomain::Decl(x) => self
                        .decls
                        .get(split_tag(x).0)
                        .or_else(|| self.decls.get(x))
                        .cloned()
                        .ok_or_else(|| format!("dom({x}): unknown variable"))?,
                };
                scope.push((v.clone(), vt));
                let bt = self.ty(body, scope);
                scope.pop();
                if bt? != Type::Bool {
                    return Err("quantifier body must be bool".into());
                }
                Ok(Type::Bool)
            }
        }
    }
}

/// Result of type checking a unit.
#[derive(Clone, Debug)]
pub struct TypedUnit {
    pub source_env: TypeEnv,
    pub product_env: TypeEnv,
    pub return_type: Type,
}

struct Checker<'a> {
    env: &'a TypeEnv,
    product: &'a TypeEnv,
    errors: Vec<TypeError>,
}

impl Checker<'_> {
    fn expr(&mut self, env: &TypeEnv, e: &Expr, span: Span) -> Option<Type> {
        match env.type_of(e) {
            Ok(t) => Some(t),
            Err(m) => {
                self.errors.push(TypeError { message: m, span });
                None
            }
        }
    }

    fn want(&mut self, env: &TypeEnv, e: &Expr, want: Type, what: &str, span: Span) {
        if let Some(t) = self.expr(env, e, span) {
            if t != want {
                self.errors.push(TypeError { message: format!("{what} must be {want}, got {t}"), span });
            }
        }
    }

    fn assign(&mut self, env: &TypeEnv, x: &str, t: Option<Type>, span: Span) {
        match env.vars.get(x) {
            None => self.errors.push(TypeError { message: format!("unbound variable `{x}`"), span }),
            Some(xt) => {
                if let Some(t) = t {
                    if !assignable(xt, &t) {
                        self.errors.push(TypeError {
                            message: format!("cannot assign {t} to `{x}` of type {xt}"),
                            span,
                        });
                    }
                }
            }
        }
    }

    fn lap_arg(&mut self, env: &TypeEnv, x: &str, arg: &Expr, span: Span) {
        if let Some(t) = self.expr(env, arg, span) {
            if t == Type::Real {
                self.errors.push(TypeError { message: "Laplace argument must be int".into(), span });
            } else if t != Type::Int {
                self.errors.push(TypeError { message: "Laplace argument must be numeric".into(), span });
            }
        }
        self.assign(env, x, Some(Type::Int), span);
    }

    fn block(&mut self, env: &TypeEnv, b: &[Stmt]) {
        for s in b {
            self.stmt(env, s);
        }
    }

    fn stmt(&mut self, env: &TypeEnv, s: &Stmt) {
        let sp = s.span;
        match &s.kind {
            StmtKind::Skip => {}
            StmtKind::Assign(x, e) => {
                let t = self.expr(env, e, sp);
                self.assign(env, x, t, sp);
            }
            StmtKind::Lap { var, arg, .. } => self.lap_arg(env, var, arg, sp),
            StmtKind::LapInv { vars, args, .. } => {
                self.lap_arg(env, &vars.0, &args.0, sp);
                self.lap_arg(env, &vars.1, &args.1, sp);
            }
            StmtKind::Exp { var, score, input, .. } => {
                self.exp(env, var, score, input, sp);
            }
            StmtKind::ExpInv { vars, left, right, .. } => {
                self.exp(env, &vars.0, &left.0, &left.1, sp);
                self.exp(env, &vars.1, &right.0, &right.1, sp);
            }
            StmtKind::Custom { var, args, .. } => {
                for a in args {
                    self.expr(env, a, sp);
                }
                self.assign(env, var, None, sp);
            }
            StmtKind::CustomInv { vars, left, right, .. } => {
                for a in left.iter().chain(right) {
                    self.expr(env, a, sp);
                }
                self.assign(env, &vars.0, None, sp);
                self.assign(env, &vars.1, None, sp);
            }
            StmtKind::If(g, a, b) => {
                self.want(env, g, Type::Bool, "guard", sp);
                self.block(env, a);
                self.block(env, b);
            }
            StmtKind::While { guard, body, ann } => {
                self.want(env, guard, Type::Bool, "guard", sp);
                if let Some(a) = ann {
                    let p = self.product;
                    self.want(p, &a.invariant, Type::Bool, "loop invariant", sp);
                    self.want(p, &a.variant, Type::Int, "loop variant", sp);
                }
                self.block(env, body);
            }
            StmtKind::Return(e) => {
                self.expr(env, e, sp);
            }
            StmtKind::ReturnPair(a, b) => {
                self.expr(env, a, sp);
                self.expr(env, b, sp);
            }
            StmtKind::Cut(phi) => {
                let p = self.product;
                self.want(p, phi, Type::Bool, "assertion", sp);
            }
            StmtKind::Assert(phi) => self.want(env, phi, Type::Bool, "assertion", sp),
        }
    }

    fn exp(&mut self, env: &TypeEnv, var: &str, score: &Expr, input: &Expr, sp: Span) {
        if env.range_ty.is_none() {
            self.errors.push(TypeError { message: "exponential mechanism needs a declared range".into(), span: sp });
        }
        self.want(env, score, Type::Score, "exponential mechanism score", sp);
        self.expr(env, input, sp);
        let rt = env.range_ty.clone();
        self.assign(env, var, rt, sp);
    }
}

fn return_type(env: &TypeEnv, body: &[Stmt]) -> Option<Type> {
    match body.last().map(|s| &s.kind) {
        Some(StmtKind::Return(e)) => env.type_of(e).ok(),
        _ => None,
    }
}

/// Type checks a source unit: statements, annotations, precondition and target.
pub fn typecheck(unit: &ProgramUnit, reg: &Registry) -> Result<TypedUnit, Vec<TypeError>> {
    let h = &unit.header;
    let source_env = TypeEnv::source(h, reg);
    let ret = return_type(&source_env, &unit.body);
    let product_env = TypeEnv::product(h, reg, ret.clone());
    let mut ck = Checker { env: &source_env, product: &product_env, errors: Vec::new() };
    let header_span = h.vars.first().map(|v| v.span).unwrap_or_default();
    for p in &h.preds {
        let mut penv = TypeEnv::base(h, reg);
        for (n, t) in &p.params {
            penv.vars.insert(n.clone(), t.clone());
        }
        ck.want(&penv, &p.body, Type::Bool, &format!("predicate `{}`", p.name), header_span);
    }
    if let Some(pre) = &h.pre {
        ck.want(&product_env, pre, Type::Bool, "precondition", header_span);
    }
    for v in &h.vars {
        if let Some(d) = &v.domain {
            if let Some(bad) = d.enumerate().iter().find(|x| !assignable(&v.ty, &value_type(x))) {
                ck.errors.push(TypeError {
                    message: format!("domain value {bad} does not have type {}", v.ty),
                    span: v.span,
                });
            }
        }
    }
    for s in &unit.body {
        if s.is_target_only() && !matches!(s.kind, StmtKind::ReturnPair(..)) {
            ck.errors.push(TypeError { message: "target-language statement in source program".into(), span: s.span });
        }
    }
    let env = ck.env;
    ck.block(env, &unit.body);
    if ck.errors.is_empty() {
        Ok(TypedUnit { source_env, product_env, return_type: ret.unwrap_or(Type::Int) })
    } else {
        Err(ck.errors)
    }
}

/// Type checks a target block against a product environment.
pub fn typecheck_target(block: &[Stmt], env: &TypeEnv) -> Result<(), Vec<TypeError>> {
    let mut ck = Checker { env, product: env, errors: Vec::new() };
    ck.block(env, block);
    if ck.errors.is_empty() {
        Ok(())
    } else {
        Err(ck.errors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_unit;

    fn check(src: &str) -> Result<TypedUnit, Vec<TypeError>> {
        let u = parse_unit(src).unwrap();
        let reg = Registry::for_header(&u.header).unwrap();
        typecheck(&u, &reg)
    }

    #[test]
    fn guard_must_be_bool() {
        let e = check("decl x : int; if 1 then skip else skip; return x").unwrap_err();
        assert!(e[0].message.contains("guard must be bool"));
    }

    #[test]
    fn laplace_argument_numeric() {
        let e = check("decl x : int; x := Lap[0.1](true); return x").unwrap_err();
        assert!(e[0].message.contains("Laplace argument must be numeric"));
    }

    #[test]
    fn unbound_variable_has_span() {
        let e = check("decl x : int;\nx := y + 1;\nreturn x").unwrap_err();
        assert!(e[0].message.contains("unbound variable `y`"));
        assert_eq!(e[0].span.line, 2);
    }

    #[test]
    fn score_outside_range() {
        let e = check(
            "range R = [0, 1]; decl x : int; decl d : int; x := Exp[1](score{(0, true): 1}, d); return x",
        )
        .unwrap_err();
        assert!(e[0].message.contains("outside declared range"), "{e:?}");
    }

    #[test]
    fn invariant_is_checked_in_product_scope() {
        assert!(check(
            "decl i : int; @invariant{i_1 = i_2 && __alpha = 0} @variant{3 - i_1} while i < 3 do i := i + 1; return i"
        )
        .is_ok());
        assert!(check("decl i : int; @invariant{i = 0} @variant{3} while i < 3 do i := i + 1; return i").is_err());
    }
}
