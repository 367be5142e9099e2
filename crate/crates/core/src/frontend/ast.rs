//! Syntax trees for expressions, formulas, source and target programs.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use num_rational::BigRational;

use super::span::Span;
use crate::values::Value;

pub const ALPHA: &str = "__alpha";
pub const DELTA: &str = "__delta";
pub const RET: &str = "__ret";
pub const OUT1: &str = "out_1";
pub const OUT2: &str = "out_2";

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Type {
    Int,
    Real,
    Bool,
    List(Box<Type>),
    Score,
}

impl Type {
    pub fn is_numeric(&self) -> bool {
        matches!(self, Type::Int | Type::Real)
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Type::Int => write!(f, "int"),
            Type::Real => write!(f, "real"),
            Type::Bool => write!(f, "bool"),
            Type::List(t) => write!(f, "list<{t}>"),
            Type::Score => write!(f, "score"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UnOp {
    Neg,
    Not,
    Abs,
    Hd,
    Tl,
    Length,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    /// Exact real division.
    Div,
    /// Floor division on integers.
    IntDiv,
    Mod,
    Min,
    Max,
    Cons,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
    Implies,
    Iff,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::IntDiv => "div",
            BinOp::Mod => "mod",
            BinOp::Min => "min",
            BinOp::Max => "max",
            BinOp::Cons => "::",
            BinOp::Eq => "=",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::And => "&&",
            BinOp::Or => "||",
            BinOp::Implies => "==>",
            BinOp::Iff => "<=>",
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(self, BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge)
    }

    pub fn is_logical(self) -> bool {
        matches!(self, BinOp::And | BinOp::Or | BinOp::Implies | BinOp::Iff)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Quant {
    Forall,
    Exists,
}

/// Domain of a bounded quantifier.
#[derive(Clone, Debug, PartialEq)]
pub enum QDomain {
    /// Integers `lo..hi`, inclusive.
    Ints(Box<Expr>, Box<Expr>),
    /// The declared mechanism range.
    Range,
    /// The declared domain of a (base) variable.
    Decl(String),
}

/// Where an obligation or a labelled sub-formula came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Provenance {
    pub rule: String,
    pub span: Span,
    pub detail: String,
}

impl Provenance {
    pub fn new(rule: impl Into<String>, span: Span, detail: impl Into<String>) -> Provenance {
        Provenance { rule: rule.into(), span, detail: detail.into() }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}", self.rule, self.span)?;
        if !self.detail.is_empty() {
            write!(f, " ({})", self.detail)?;
        }
        Ok(())
    }
}

/// Expressions and formulas share one syntax.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Var(String),
    /// A named header constant together with its value.
    Const(String, Value),
    Lit(Value),
    Unary(UnOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Ite(Box<Expr>, Box<Expr>, Box<Expr>),
    ListLit(Vec<Expr>),
    /// Builtin or predicate application.
    Call(String, Vec<Expr>),
    /// `score[f](args)`: partial application of builtin `f` as a score function.
    ScorePartial(String, Vec<Expr>),
    /// `apply(s, input, r)`.
    ScoreApply(Box<Expr>, Box<Expr>, Box<Expr>),
    /// `maxgap(s, e1, e2)` = max over the range of |s(e1, r) - s(e2, r)|.
    MaxGap(Box<Expr>, Box<Expr>, Box<Expr>),
    /// `ACC(eps, delta)`: the Laplace accuracy radius.
    Acc(Box<Expr>, Box<Expr>),
    Quant(Quant, String, QDomain, Box<Expr>),
    /// Transparent provenance marker used to blame counterexamples.
    Label(Arc<Provenance>, Box<Expr>),
}

pub fn var(name: &str) -> Expr {
    Expr::Var(name.to_string())
}

pub fn int(i: i64) -> Expr {
    Expr::Lit(Value::Int(i))
}

pub fn real(r: BigRational) -> Expr {
    Expr::Lit(Value::Real(r))
}

pub fn tt() -> Expr {
    Expr::Lit(Value::Bool(true))
}

pub fn ff() -> Expr {
    Expr::Lit(Value::Bool(false))
}

pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
    Expr::Binary(op, Box::new(a), Box::new(b))
}

pub fn un(op: UnOp, a: Expr) -> Expr {
    Expr::Unary(op, Box::new(a))
}

pub fn label(p: Provenance, e: Expr) -> Expr {
    Expr::Label(Arc::new(p), Box::new(e))
}

impl Expr {
    pub fn is_true(&self) -> bool {
        matches!(self.strip_labels(), Expr::Lit(Value::Bool(true)))
    }

    pub fn is_false(&self) -> bool {
        matches!(self.strip_labels(), Expr::Lit(Value::Bool(false)))
    }

    pub fn strip_labels(&self) -> &Expr {
        let mut e = self;
        while let Expr::Label(_, inner) = e {
            e = inner;
        }
        e
    }

    /// Conjunction with trivial simplification.
    pub fn and(self, other: Expr) -> Expr {
        if self.is_true() {
            other
        } else if other.is_true() {
            self
        } else {
            bin(BinOp::And, self, other)
        }
    }

    pub fn implies(self, other: Expr) -> Expr {
        if self.is_true() {
            other
        } else if other.is_true() {
            tt()
        } else {
            bin(BinOp::Implies, self, other)
        }
    }

    pub fn not(self) -> Expr {
        un(UnOp::Not, self)
    }

    pub fn eq(self, other: Expr) -> Expr {
        bin(BinOp::Eq, self, other)
    }

    pub fn conj(items: impl IntoIterator<Item = Expr>) -> Expr {
        items.into_iter().fold(tt(), Expr::and)
    }

    /// Free variables (bound quantifier variables excluded).
    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_free(&mut Vec::new(), &mut out);
        out
    }

    fn collect_free(&self, bound: &mut Vec<String>, out: &mut BTreeSet<String>) {
        match self {
            Expr::Var(x) => {
                if !bound.iter().any(|b| b == x) {
                    out.insert(x.clone());
                }
            }
            Expr::Const(..) | Expr::Lit(_) => {}
            Expr::Unary(_, a) | Expr::Label(_, a) => a.collect_free(bound, out),
            Expr::Binary(_, a, b) | Expr::Acc(a, b) => {
                a.collect_free(bound, out);
                b.collect_free(bound, out);
            }
            Expr::Ite(a, b, c) | Expr::ScoreApply(a, b, c) | Expr::MaxGap(a, b, c) => {
                a.collect_free(bound, out);
                b.collect_free(bound, out);
                c.collect_free(bound, out);
            }
            Expr::ListLit(xs) | Expr::Call(_, xs) | Expr::ScorePartial(_, xs) => {
                for x in xs {
                    x.collect_free(bound, out);
                }
            }
            Expr::Quant(_, v, dom, body) => {
                if let QDomain::Ints(lo, hi) = dom {
                    lo.collect_free(bound, out);
                    hi.collect_free(bound, out);
                }
                bound.push(v.clone());
                body.collect_free(bound, out);
                bound.pop();
            }
        }
    }

    /// Splits nested conjunctions (through labels) into their conjuncts,
    /// keeping labels on the leaves they enclose.
    pub fn conjuncts(&self) -> Vec<Expr> {
        let mut out = Vec::new();
        self.push_conjuncts(None, &mut out);
        out
    }

    fn push_conjuncts(&self, lab: Option<&Arc<Provenance>>, out: &mut Vec<Expr>) {
        match self {
            Expr::Binary(BinOp::And, a, b) => {
                a.push_conjuncts(lab, out);
                b.push_conjuncts(lab, out);
            }
            Expr::Label(p, inner) => inner.push_conjuncts(Some(p), out),
            Expr::Lit(Value::Bool(true)) => {}
            e => out.push(match lab {
                Some(p) => Expr::Label(p.clone(), Box::new(e.clone())),
                None => e.clone(),
            }),
        }
    }

    /// Number of syntax nodes.
    pub fn size(&self) -> usize {
        match self {
            Expr::Var(_) | Expr::Const(..) | Expr::Lit(_) => 1,
            Expr::Unary(_, a) | Expr::Label(_, a) => 1 + a.size(),
            Expr::Binary(_, a, b) | Expr::Acc(a, b) => 1 + a.size() + b.size(),
            Expr::Ite(a, b, c) | Expr::ScoreApply(a, b, c) | Expr::MaxGap(a, b, c) => {
                1 + a.size() + b.size() + c.size()
            }
            Expr::ListLit(xs) | Expr::Call(_, xs) | Expr::ScorePartial(_, xs) => {
                1 + xs.iter().map(Expr::size).sum::<usize>()
            }
            Expr::Quant(_, _, d, b) => {
                let ds = match d {
                    QDomain::Ints(lo, hi) => lo.size() + hi.size(),
                    _ => 0,
                };
                1 + ds + b.size()
            }
        }
    }

    pub fn contains_quantifier(&self) -> bool {
        match self {
            Expr::Quant(..) => true,
            Expr::Var(_) | Expr::Const(..) | Expr::Lit(_) => false,
            Expr::Unary(_, a) | Expr::Label(_, a) => a.contains_quantifier(),
            Expr::Binary(_, a, b) | Expr::Acc(a, b) => a.contains_quantifier() || b.contains_quantifier(),
            Expr::Ite(a, b, c) | Expr::ScoreApply(a, b, c) | Expr::MaxGap(a, b, c) => {
                a.contains_quantifier() || b.contains_quantifier() || c.contains_quantifier()
            }
            Expr::ListLit(xs) | Expr::Call(_, xs) | Expr::ScorePartial(_, xs) => {
                xs.iter().any(Expr::contains_quantifier)
            }
        }
    }
}

/// A rational parameter of a mechanism or privacy target, with the expression
/// it was written as.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub expr: Expr,
    pub value: BigRational,
}

impl Param {
    pub fn literal(value: BigRational) -> Param {
        Param { expr: real(value.clone()), value }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LapSpec {
    Pure,
    /// Accuracy specification with the given δ budget.
    Accuracy(Param),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoopAnn {
    pub invariant: Expr,
    pub variant: Expr,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stmt {
    pub kind: StmtKind,
    pub span: Span,
}

pub type Block = Vec<Stmt>;

#[derive(Clone, Debug, PartialEq)]
pub enum StmtKind {
    Skip,
    Assign(String, Expr),
    Lap { var: String, eps: Param, arg: Expr, spec: LapSpec },
    Exp { var: String, eps: Param, score: Expr, input: Expr },
    Custom { var: String, mech: String, eps: Param, args: Vec<Expr> },
    If(Expr, Block, Block),
    While { guard: Expr, body: Block, ann: Option<LoopAnn> },
    Return(Expr),
    /// Intermediate assertion for the Hoare layer; no effect on execution.
    Cut(Expr),
    Assert(Expr),
    LapInv { vars: (String, String), eps: Param, args: (Expr, Expr), spec: LapSpec },
    /// `(x1, x2) := Exp<>[eps](s1, e1, s2, e2)`.
    ExpInv { vars: (String, String), eps: Param, left: (Expr, Expr), right: (Expr, Expr) },
    CustomInv { vars: (String, String), mech: String, eps: Param, left: Vec<Expr>, right: Vec<Expr> },
    ReturnPair(Expr, Expr),
}

impl Stmt {
    pub fn new(kind: StmtKind, span: Span) -> Stmt {
        Stmt { kind, span }
    }

    pub fn is_probabilistic(&self) -> bool {
        matches!(self.kind, StmtKind::Lap { .. } | StmtKind::Exp { .. } | StmtKind::Custom { .. })
    }

    pub fn is_target_only(&self) -> bool {
        matches!(
            self.kind,
            StmtKind::Assert(_)
                | StmtKind::LapInv { .. }
                | StmtKind::ExpInv { .. }
                | StmtKind::CustomInv { .. }
                | StmtKind::ReturnPair(..)
        )
    }
}

/// Visits every statement of a block, depth first, in program order.
pub fn walk_block<'a>(block: &'a [Stmt], f: &mut impl FnMut(&'a Stmt)) {
    for s in block {
        f(s);
        match &s.kind {
            StmtKind::If(_, a, b) => {
                walk_block(a, f);
                walk_block(b, f);
            }
            StmtKind::While { body, .. } => walk_block(body, f),
            _ => {}
        }
    }
}

/// Finite value domains for variables.
#[derive(Clone, Debug, PartialEq)]
pub enum Domain {
    Ints(i64, i64),
    Values(Vec<Value>),
    Bools,
    /// Lists with elements from a domain and length within bounds.
    Lists { elems: Box<Domain>, min_len: usize, max_len: usize },
    /// Sorted lists (multisets) with elements from a domain.
    Msets { elems: Box<Domain>, min_len: usize, max_len: usize },
    /// Histograms: `bins` nonnegative counts with total at most `max_total`.
    Hist { bins: usize, max_total: i64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstDecl {
    pub name: String,
    pub expr: Expr,
    pub value: Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VarDecl {
    pub name: String,
    pub ty: Type,
    pub domain: Option<Domain>,
    pub input: bool,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MechDecl {
    pub name: String,
    pub axioms: Option<String>,
}

/// `builtin NAME = factory(args)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BuiltinDecl {
    pub name: String,
    pub factory: String,
    pub args: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredDecl {
    pub name: String,
    pub params: Vec<(String, Type)>,
    pub body: Expr,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Target {
    pub eps: Param,
    pub delta: Param,
}

/// Declarations shared by programs and derivation files.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Header {
    pub name: Option<String>,
    pub consts: Vec<ConstDecl>,
    pub vars: Vec<VarDecl>,
    pub range: Option<(String, Vec<Value>)>,
    pub mechanisms: Vec<MechDecl>,
    pub builtins: Vec<BuiltinDecl>,
    pub preds: Vec<PredDecl>,
    pub pre: Option<Expr>,
    pub target: Option<Target>,
}

impl Header {
    pub fn var(&self, name: &str) -> Option<&VarDecl> {
        self.vars.iter().find(|v| v.name == name)
    }

    pub fn inputs(&self) -> impl Iterator<Item = &VarDecl> {
        self.vars.iter().filter(|v| v.input)
    }

    pub fn range_values(&self) -> &[Value] {
        self.range.as_ref().map(|(_, v)| v.as_slice()).unwrap_or(&[])
    }

    pub fn pred(&self, name: &str) -> Option<&PredDecl> {
        self.preds.iter().find(|p| p.name == name)
    }

    pub fn mechanism(&self, name: &str) -> Option<&MechDecl> {
        self.mechanisms.iter().find(|m| m.name == name)
    }
}

/// A parsed `.pwhile` file.
#[derive(Clone, Debug, PartialEq)]
pub struct ProgramUnit {
    pub header: Header,
    pub body: Block,
}

impl ProgramUnit {
    pub fn precondition(&self) -> Expr {
        self.header.pre.clone().unwrap_or_else(tt)
    }
}

/// Name of `x` tagged with side 1 or 2.
pub fn tagged(name: &str, tag: u8) -> String {
    format!("{name}_{tag}")
}

/// Splits `x_1` into (`x`, Some(1)).
pub fn split_tag(name: &str) -> (&str, Option<u8>) {
    if let Some(base) = name.strip_suffix("_1") {
        if !base.is_empty() {
            return (base, Some(1));
        }
    }
    if let Some(base) = name.strip_suffix("_2") {
        if !base.is_empty() {
            return (base, Some(2));
        }
    }
    (name, None)
}

pub fn is_ghost(name: &str) -> bool {
    name == ALPHA || name == DELTA
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tag_split() {
        assert_eq!(split_tag("next_1"), ("next", Some(1)));
        assert_eq!(split_tag("l_2"), ("l", Some(2)));
        assert_eq!(split_tag("x"), ("x", None));
        assert_eq!(split_tag("_1"), ("_1", None));
    }

    #[test]
    fn free_vars_skip_bound() {
        let e = Expr::Quant(
            Quant::Forall,
            "v".into(),
            QDomain::Ints(Box::new(int(0)), Box::new(var("n"))),
            Box::new(bin(BinOp::Lt, var("v"), var("x"))),
        );
        let fv: Vec<_> = e.free_vars().into_iter().collect();
        assert_eq!(fv, vec!["n".to_string(), "x".to_string()]);
    }

    #[test]
    fn conjuncts_keep_labels() {
        let p = Provenance::new("post", Span::default(), "");
        let e = label(p, bin(BinOp::And, var("a"), var("b"))).and(var("c"));
        let cs = e.conjuncts();
        assert_eq!(cs.len(), 3);
        assert!(matches!(cs[0], Expr::Label(..)));
        assert!(matches!(cs[2], Expr::Var(_)));
    }
}
