//! Core apRHL derivations: a rule checker and the compilation of checked
//! derivations into Hoare triples over the self-product.

use std::collections::BTreeMap;

use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontend::ast::*;
use crate::frontend::{parse_block, parse_expr, parse_header, pretty_block, pretty_expr, ParseOptions, Span};
use crate::logic::subst::subst;
use crate::logic::wp::{label_conjuncts, HoareTriple, Obligation, Status, VcGen};
use crate::product::{rename, self_product};
use crate::values::{EvalCtx, Memory, Value};

pub const RULES: &[&str] = &["assn", "lap", "exp", "skip", "cond", "while", "seq", "weak"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AprhlError {
    #[error("derivation file: {0}")]
    Json(String),
    #[error("{path}: cannot parse {what}: {msg}")]
    Parse { path: String, what: String, msg: String },
    #[error("{path}: unsupported rule `{rule}` (only core apRHL rules have a self-product counterpart)")]
    Unsupported { path: String, rule: String },
    #[error("{path}: rule `{rule}` expects {expected} premise(s), found {found}")]
    Arity { path: String, rule: String, expected: usize, found: usize },
    #[error("{path}: rule `{rule}`: cost mismatch, expected {expected}, found {found}")]
    CostMismatch { path: String, rule: String, expected: String, found: String },
    #[error("{path}: rule `{rule}`: {detail}")]
    Shape { path: String, rule: String, detail: String },
    #[error("{path}: rule `{rule}` violated: {detail}")]
    RuleViolation { path: String, rule: String, detail: String },
    #[error("the two commands of the root judgment are not renamings of one command")]
    NotSelfComposed,
    #[error("root cost `{0}` is not a closed constant")]
    NonConstantCost(String),
    #[error("{0}")]
    Wp(String),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JudgmentJson {
    pub pre: String,
    pub c1: String,
    pub c2: String,
    pub post: String,
    pub eps: String,
    pub delta: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NodeJson {
    pub rule: String,
    #[serde(default)]
    pub params: BTreeMap<String, serde_json::Value>,
    pub judgment: JudgmentJson,
    #[serde(default)]
    pub children: Vec<NodeJson>,
}

/// Derivation file: `program` holds the declarations (a program header) the
/// judgments are written against.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DerivationFile {
    pub program: String,
    pub root: NodeJson,
}

/// ⊢ c1 ~ c2 : Ψ ⇒ Φ with cost (ε, δ). Commands are untagged; they are read
/// as the left and right copies. Formulas and costs use tagged names.
#[derive(Clone, Debug, PartialEq)]
pub struct Judgment {
    pub pre: Expr,
    pub c1: Block,
    pub c2: Block,
    pub post: Expr,
    pub eps: Expr,
    pub delta: Expr,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Rule {
    Assn,
    /// Sampling rules carry a frame: facts that survive the sampling because
    /// they do not mention the sampled variables.
    Lap { frame: Expr },
    Exp { frame: Expr },
    Skip,
    Cond,
    While { n: i64, variant: Expr, invariant: Expr },
    Seq,
    Weak,
}

impl Rule {
    pub fn name(&self) -> &'static str {
        match self {
            Rule::Assn => "assn",
            Rule::Lap { .. } => "lap",
            Rule::Exp { .. } => "exp",
            Rule::Skip => "skip",
            Rule::Cond => "cond",
            Rule::While { .. } => "while",
            Rule::Seq => "seq",
            Rule::Weak => "weak",
        }
    }

    fn arity(&self) -> usize {
        match self {
            Rule::Cond | Rule::Seq => 2,
            Rule::While { .. } | Rule::Weak => 1,
            _ => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Derivation {
    pub path: String,
    pub rule: Rule,
    pub judgment: Judgment,
    pub children: Vec<Derivation>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DerivationDoc {
    pub header: Header,
    pub root: Derivation,
}

impl DerivationDoc {
    pub fn parse(json: &str) -> Result<DerivationDoc, AprhlError> {
        let file: DerivationFile = serde_json::from_str(json).map_err(|e| AprhlError::Json(e.to_string()))?;
        let header = parse_header(&file.program).map_err(|e| AprhlError::Parse {
            path: "program".into(),
            what: "declarations".into(),
            msg: e.to_string(),
        })?;
        let root = convert(&file.root, &header, "root")?;
        Ok(DerivationDoc { header, root })
    }

    /// The program the root judgment is about (its left command).
    pub fn unit(&self) -> ProgramUnit {
        let mut header = self.header.clone();
        header.pre = Some(self.root.judgment.pre.clone());
        ProgramUnit { header, body: self.root.judgment.c1.clone() }
    }
}

fn convert(n: &NodeJson, h: &Header, path: &str) -> Result<Derivation, AprhlError> {
    let perr = |what: &str, msg: String| AprhlError::Parse { path: path.to_string(), what: what.to_string(), msg };
    let formula = |what: &str, s: &str| parse_expr(s, h).map_err(|e| perr(what, e.to_string()));
    let block = |what: &str, s: &str| {
        parse_block(s, h, ParseOptions { require_loop_annotations: false, check_names: true })
            .map_err(|e| perr(what, e.to_string()))
    };
    let rule = match n.rule.as_str() {
        "assn" => Rule::Assn,
        "lap" | "exp" => {
            let frame = match n.params.get("frame") {
                None => tt(),
                Some(v) => {
                    let t = v.as_str().ok_or_else(|| perr("params", "`frame` must be a formula".into()))?;
                    formula("frame", t)?
                }
            };
            if n.rule == "lap" {
                Rule::Lap { frame }
            } else {
                Rule::Exp { frame }
            }
        }
        "skip" => Rule::Skip,
        "cond" => Rule::Cond,
        "seq" => Rule::Seq,
        "weak" => Rule::Weak,
        "while" => {
            let n_val = n.params.get("n").and_then(serde_json::Value::as_i64).ok_or_else(|| {
                perr("params", "while needs an integer bound `n`".into())
            })?;
            let text = |k: &str| {
                n.params
                    .get(k)
                    .and_then(serde_json::Value::as_str)
                    .ok_or_else(|| perr("params", format!("while needs a `{k}` formula")))
            };
            Rule::While { n: n_val, variant: formula("variant", text("variant")?)?, invariant: formula("invariant", text("invariant")?)? }
        }
        other => return Err(AprhlError::Unsupported { path: path.to_string(), rule: other.to_string() }),
    };
    let j = &n.judgment;
    let judgment = Judgment {
        pre: formula("pre", &j.pre)?,
        c1: block("c1", &j.c1)?,
        c2: block("c2", &j.c2)?,
        post: formula("post", &j.post)?,
        eps: formula("eps", &j.eps)?,
        delta: formula("delta", &j.delta)?,
    };
    let children = n
        .children
        .iter()
        .enumerate()
        .map(|(i, c)| convert(c, h, &format!("{path}.{i}")))
        .collect::<Result<Vec<_>, _>>()?;
    if children.len() != rule.arity() {
        return Err(AprhlError::Arity {
            path: path.to_string(),
            rule: rule.name().into(),
            expected: rule.arity(),
            found: children.len(),
        });
    }
    Ok(Derivation { path: path.to_string(), rule, judgment, children })
}

type Poly = BTreeMap<Vec<String>, BigRational>;

fn poly_const(c: BigRational) -> Poly {
    let mut p = Poly::new();
    if !c.is_zero() {
        p.insert(Vec::new(), c);
    }
    p
}

fn poly_add(mut a: Poly, b: Poly, sign: i64) -> Poly {
    for (m, c) in b {
        let e = a.entry(m).or_insert_with(BigRational::zero);
        *e += c * BigRational::from_integer(sign.into());
    }
    a.retain(|_, c| !c.is_zero());
    a
}

fn poly_mul(a: &Poly, b: &Poly) -> Poly {
    let mut out = Poly::new();
    for (ma, ca) in a {
        for (mb, cb) in b {
            let mut m: Vec<String> = ma.iter().chain(mb).cloned().collect();
            m.sort();
            *out.entry(m).or_insert_with(BigRational::zero) += ca * cb;
        }
    }
    out.retain(|_, c| !c.is_zero());
    out
}

/// Polynomial normal form of a cost; non-arithmetic subterms are atoms.
fn poly(e: &Expr) -> Poly {
    let atom = |e: &Expr| {
        let mut p = Poly::new();
        p.insert(vec![pretty_expr(e)], BigRational::one());
        p
    };
    match e {
        Expr::Label(_, x) => poly(x),
        Expr::Lit(v) | Expr::Const(_, v) => match v.as_rational() {
            Some(r) => poly_const(r),
            None => atom(e),
        },
        Expr::Unary(UnOp::Neg, x) => poly_add(Poly::new(), poly(x), -1),
        Expr::Binary(BinOp::Add, a, b) => poly_add(poly(a), poly(b), 1),
        Expr::Binary(BinOp::Sub, a, b) => poly_add(poly(a), poly(b), -1),
        Expr::Binary(BinOp::Mul, a, b) => poly_mul(&poly(a), &poly(b)),
        Expr::Binary(BinOp::Div, a, b) => {
            let pb = poly(b);
            match pb.get(&Vec::new()) {
                Some(c) if pb.len() == 1 => poly_mul(&poly(a), &poly_const(c.recip())),
                _ => atom(e),
            }
        }
        _ => atom(e),
    }
}

/// Whether two cost expressions have the same polynomial normal form.
pub fn cost_eq(a: &Expr, b: &Expr) -> bool {
    poly(a) == poly(b)
}

fn closed_value(e: &Expr, ctx: &EvalCtx) -> Option<BigRational> {
    if !e.free_vars().is_empty() {
        return None;
    }
    ctx.eval(e, &Memory::new()).ok()?.as_rational()
}

fn strip_ann(b: &[Stmt]) -> Block {
    b.iter()
        .map(|s| {
            let kind = match &s.kind {
                StmtKind::If(g, t, e) => StmtKind::If(g.clone(), strip_ann(t), strip_ann(e)),
                StmtKind::While { guard, body, .. } => {
                    StmtKind::While { guard: guard.clone(), body: strip_ann(body), ann: None }
                }
                k => k.clone(),
            };
            Stmt::new(kind, Span::default())
        })
        .collect()
}

/// Program text of a block with annotations and positions dropped.
pub fn shape(b: &[Stmt]) -> String {
    pretty_block(&strip_ann(b))
}

struct Checker<'a> {
    ctx: &'a EvalCtx,
    obligations: Vec<Obligation>,
}

impl Checker<'_> {
    fn oblige(&mut self, d: &Derivation, what: &str, hyp: Expr, concl: Expr) {
        if concl.is_true() || hyp == concl {
            return;
        }
        let rule = format!("aprhl-{}-{what}", d.rule.name());
        let concl = label_conjuncts(&concl, &rule, Span::default());
        self.obligations.push(Obligation {
            id: 0,
            formula: hyp.implies(concl),
            provenance: Provenance::new(rule, Span::default(), d.path.clone()),
            status: Status::Unverified,
        });
    }

    fn cost_zero(&self, d: &Derivation) -> Result<(), AprhlError> {
        for (c, name) in [(&d.judgment.eps, "ε"), (&d.judgment.delta, "δ")] {
            if !poly(c).is_empty() {
                return Err(AprhlError::CostMismatch {
                    path: d.path.clone(),
                    rule: d.rule.name().into(),
                    expected: format!("{name} = 0"),
                    found: pretty_expr(c),
                });
            }
        }
        Ok(())
    }

    fn same_cost(&self, d: &Derivation, expected: &Expr, found: &Expr) -> Result<(), AprhlError> {
        if cost_eq(expected, found) {
            Ok(())
        } else {
            Err(AprhlError::CostMismatch {
                path: d.path.clone(),
                rule: d.rule.name().into(),
                expected: pretty_expr(expected),
                found: pretty_expr(found),
            })
        }
    }

    fn shape_err(&self, d: &Derivation, detail: impl Into<String>) -> AprhlError {
        AprhlError::Shape { path: d.path.clone(), rule: d.rule.name().into(), detail: detail.into() }
    }

    fn single<'b>(&self, d: &Derivation, b: &'b [Stmt]) -> Result<&'b StmtKind, AprhlError> {
        match b {
            [s] => Ok(&s.kind),
            _ => Err(self.shape_err(d, format!("expected a single statement, found `{}`", shape(b).trim()))),
        }
    }

    /// A leaf cost equal to `exact`, or bounded by it under the precondition.
    fn mech_cost(&mut self, d: &Derivation, exact: Expr) -> Result<(), AprhlError> {
        let j = &d.judgment;
        if !cost_eq(&exact, &j.eps) {
            self.oblige(d, "cost", j.pre.clone(), bin(BinOp::Le, exact, j.eps.clone()));
        }
        if !poly(&j.delta).is_empty() {
            return Err(AprhlError::CostMismatch {
                path: d.path.clone(),
                rule: d.rule.name().into(),
                expected: "δ = 0".into(),
                found: pretty_expr(&j.delta),
            });
        }
        Ok(())
    }

    fn framed_post(&mut self, d: &Derivation, frame: &Expr, y1: &str, y2: &str) -> Result<(), AprhlError> {
        let (t1, t2) = (tagged(y1, 1), tagged(y2, 2));
        let fv = frame.free_vars();
        if fv.contains(&t1) || fv.contains(&t2) {
            return Err(AprhlError::RuleViolation {
                path: d.path.clone(),
                rule: d.rule.name().into(),
                detail: format!("frame mentions the sampled variable {y1}"),
            });
        }
        self.oblige(d, "frame", d.judgment.pre.clone(), frame.clone());
        self.oblige(d, "post", frame.clone().and(var(&t1).eq(var(&t2))), d.judgment.post.clone());
        Ok(())
    }

    fn check(&mut self, d: &Derivation) -> Result<(), AprhlError> {
        let j = &d.judgment;
        match &d.rule {
            Rule::Assn => {
                let (x1, e1) = match self.single(d, &j.c1)? {
                    StmtKind::Assign(x, e) => (tagged(x, 1), rename(e, 1)),
                    StmtKind::Return(e) => (OUT1.to_string(), rename(e, 1)),
                    _ => return Err(self.shape_err(d, "left command is not an assignment")),
                };
                let (x2, e2) = match self.single(d, &j.c2)? {
                    StmtKind::Assign(x, e) => (tagged(x, 2), rename(e, 2)),
                    StmtKind::Return(e) => (OUT2.to_string(), rename(e, 2)),
                    _ => return Err(self.shape_err(d, "right command is not an assignment")),
                };
                self.cost_zero(d)?;
                let wp = subst(&j.post, &BTreeMap::from([(x1, e1), (x2, e2)]));
                self.oblige(d, "pre", j.pre.clone(), wp);
            }
            Rule::Lap { frame } => {
                let (StmtKind::Lap { var: y1, eps: p1, arg: a1, .. }, StmtKind::Lap { var: y2, eps: p2, arg: a2, .. }) =
                    (self.single(d, &j.c1)?, self.single(d, &j.c2)?)
                else {
                    return Err(self.shape_err(d, "commands are not Laplace samplings"));
                };
                if p1.value != p2.value {
                    return Err(self.shape_err(d, "the two samplings use different ε"));
                }
                let gap = un(UnOp::Abs, bin(BinOp::Sub, rename(a1, 1), rename(a2, 2)));
                self.mech_cost(d, bin(BinOp::Mul, gap, p1.expr.clone()))?;
                self.framed_post(d, frame, y1, y2)?;
            }
            Rule::Exp { frame } => {
                let (
                    StmtKind::Exp { var: y1, eps: p1, score: s1, input: e1 },
                    StmtKind::Exp { var: y2, eps: p2, score: s2, input: e2 },
                ) = (self.single(d, &j.c1)?, self.single(d, &j.c2)?)
                else {
                    return Err(self.shape_err(d, "commands are not exponential-mechanism samplings"));
                };
                if p1.value != p2.value {
                    return Err(self.shape_err(d, "the two samplings use different ε"));
                }
                self.oblige(d, "scores", j.pre.clone(), rename(s1, 1).eq(rename(s2, 2)));
                let gap = Expr::MaxGap(Box::new(rename(s1, 1)), Box::new(rename(e1, 1)), Box::new(rename(e2, 2)));
                self.mech_cost(d, bin(BinOp::Mul, p1.expr.clone(), gap))?;
                self.framed_post(d, frame, y1, y2)?;
            }
            Rule::Skip => {
                let skip = |b: &[Stmt]| b.iter().all(|s| s.kind == StmtKind::Skip);
                if !skip(&j.c1) || !skip(&j.c2) {
                    return Err(self.shape_err(d, "commands are not skip"));
                }
                self.cost_zero(d)?;
                self.oblige(d, "frame", j.pre.clone(), j.post.clone());
            }
            Rule::Cond => {
                let (StmtKind::If(b1, t1, e1), StmtKind::If(b2, t2, e2)) = (self.single(d, &j.c1)?, self.single(d, &j.c2)?)
                else {
                    return Err(self.shape_err(d, "commands are not conditionals"));
                };
                let [ct, ce] = d.children.as_slice() else { unreachable!() };
                for (c, l, r, which) in [(ct, t1, t2, "then"), (ce, e1, e2, "else")] {
                    if shape(&c.judgment.c1) != shape(l) || shape(&c.judgment.c2) != shape(r) {
                        return Err(self.shape_err(d, format!("{which} premise is not about the {which} branches")));
                    }
                    self.same_cost(d, &j.eps, &c.judgment.eps)?;
                    self.same_cost(d, &j.delta, &c.judgment.delta)?;
                }
                let g1 = rename(b1, 1);
                self.oblige(d, "sync", j.pre.clone(), bin(BinOp::Iff, g1.clone(), rename(b2, 2)));
                self.oblige(d, "then", j.pre.clone().and(g1.clone()), ct.judgment.pre.clone());
                self.oblige(d, "else", j.pre.clone().and(g1.not()), ce.judgment.pre.clone());
                self.oblige(d, "post", ct.judgment.post.clone(), j.post.clone());
                self.oblige(d, "post", ce.judgment.post.clone(), j.post.clone());
            }
            Rule::While { n, variant, invariant } => {
                let (
                    StmtKind::While { guard: b1, body: c1, .. },
                    StmtKind::While { guard: b2, body: c2, .. },
                ) = (self.single(d, &j.c1)?, self.single(d, &j.c2)?)
                else {
                    return Err(self.shape_err(d, "commands are not loops"));
                };
                let body = &d.children[0];
                if shape(&body.judgment.c1) != shape(c1) || shape(&body.judgment.c2) != shape(c2) {
                    return Err(self.shape_err(d, "premise is not about the loop bodies"));
                }
                let nn = int(*n);
                self.same_cost(d, &bin(BinOp::Mul, nn.clone(), body.judgment.eps.clone()), &j.eps)?;
                self.same_cost(d, &bin(BinOp::Mul, nn.clone(), body.judgment.delta.clone()), &j.delta)?;
                let g1 = rename(b1, 1);
                let theta = invariant.clone();
                self.oblige(d, "entry", j.pre.clone(), theta.clone().and(bin(BinOp::Le, int(0), variant.clone())));
                self.oblige(d, "sync", theta.clone(), bin(BinOp::Iff, g1.clone(), rename(b2, 2)));
                self.oblige(d, "bound", theta.clone().and(bin(BinOp::Le, nn, variant.clone())), g1.clone().not());
                self.oblige(d, "body-pre", theta.clone().and(g1.clone()), body.judgment.pre.clone());
                self.oblige(d, "body-post", body.judgment.post.clone(), theta.clone());
                self.oblige(d, "exit", theta.and(g1.not()), j.post.clone());
            }
            Rule::Seq => {
                let [a, b] = d.children.as_slice() else { unreachable!() };
                let cat = |x: &[Stmt], y: &[Stmt]| shape(&[x, y].concat());
                if cat(&a.judgment.c1, &b.judgment.c1) != shape(&j.c1) || cat(&a.judgment.c2, &b.judgment.c2) != shape(&j.c2)
                {
                    return Err(self.shape_err(d, "commands are not the composition of the premises"));
                }
                self.same_cost(d, &bin(BinOp::Add, a.judgment.eps.clone(), b.judgment.eps.clone()), &j.eps)?;
                self.same_cost(d, &bin(BinOp::Add, a.judgment.delta.clone(), b.judgment.delta.clone()), &j.delta)?;
                self.oblige(d, "pre", j.pre.clone(), a.judgment.pre.clone());
                self.oblige(d, "mid", a.judgment.post.clone(), b.judgment.pre.clone());
                self.oblige(d, "post", b.judgment.post.clone(), j.post.clone());
            }
            Rule::Weak => {
                let c = &d.children[0];
                if shape(&c.judgment.c1) != shape(&j.c1) || shape(&c.judgment.c2) != shape(&j.c2) {
                    return Err(self.shape_err(d, "premise is about different commands"));
                }
                for (small, big, name) in [(&c.judgment.eps, &j.eps, "ε′ ≤ ε"), (&c.judgment.delta, &j.delta, "δ′ ≤ δ")] {
                    if cost_eq(small, big) {
                        continue;
                    }
                    match (closed_value(small, self.ctx), closed_value(big, self.ctx)) {
                        (Some(s), Some(b)) if s > b => {
                            return Err(AprhlError::RuleViolation {
                                path: d.path.clone(),
                                rule: "weak".into(),
                                detail: format!("{name} fails: {} > {}", pretty_expr(small), pretty_expr(big)),
                            })
                        }
                        (Some(_), Some(_)) => {}
                        _ => self.oblige(d, "cost", j.pre.clone(), bin(BinOp::Le, small.clone(), big.clone())),
                    }
                }
                self.oblige(d, "pre", j.pre.clone(), c.judgment.pre.clone());
                self.oblige(d, "post", c.judgment.post.clone(), j.post.clone());
            }
        }
        for c in &d.children {
            self.check(c)?;
        }
        Ok(())
    }
}

/// Checks every rule instance of the derivation. Structural and cost errors
/// are reported directly; implications between assertions are returned as
/// obligations for the falsifier.
pub fn check_derivation(doc: &DerivationDoc, ctx: &EvalCtx) -> Result<Vec<Obligation>, AprhlError> {
    let mut ck = Checker { ctx, obligations: Vec::new() };
    ck.check(&doc.root)?;
    let mut obs = ck.obligations;
    for (i, o) in obs.iter_mut().enumerate() {
        o.id = i;
    }
    Ok(obs)
}

#[derive(Clone, Debug)]
pub struct Compiled {
    /// The root program with loop annotations synthesized from the derivation.
    pub unit: ProgramUnit,
    pub product: Block,
    pub triple: HoareTriple,
    pub obligations: Vec<Obligation>,
    pub notes: Vec<String>,
}

fn plus(a: Expr, b: Expr) -> Expr {
    if poly(&b).is_empty() {
        a
    } else if poly(&a).is_empty() {
        b
    } else {
        bin(BinOp::Add, a, b)
    }
}

fn times(a: Expr, b: Expr) -> Expr {
    bin(BinOp::Mul, a, b)
}

/// Rebuilds the command of a node, attaching loop annotations: the while
/// rule's Θ, the variant `n - e`, and ghost bounds offset by the cost spent
/// before the node (`oa`, `od`).
fn rebuild(d: &Derivation, oa: Expr, od: Expr) -> Block {
    let j = &d.judgment;
    match &d.rule {
        Rule::Seq => {
            let [a, b] = d.children.as_slice() else { unreachable!() };
            let mut out = rebuild(a, oa.clone(), od.clone());
            out.extend(rebuild(b, plus(oa, a.judgment.eps.clone()), plus(od, a.judgment.delta.clone())));
            out
        }
        Rule::Weak => rebuild(&d.children[0], oa, od),
        Rule::Cond => {
            let StmtKind::If(g, ..) = &j.c1[0].kind else { unreachable!() };
            let t = rebuild(&d.children[0], oa.clone(), od.clone());
            let e = rebuild(&d.children[1], oa, od);
            vec![Stmt::new(StmtKind::If(g.clone(), t, e), j.c1[0].span)]
        }
        Rule::While { n, variant, invariant } => {
            let StmtKind::While { guard, .. } = &j.c1[0].kind else { unreachable!() };
            let body = &d.children[0];
            let (eb, db) = (body.judgment.eps.clone(), body.judgment.delta.clone());
            let spent = bin(BinOp::Min, variant.clone(), int(*n));
            let inv = Expr::conj([
                invariant.clone(),
                bin(BinOp::Le, int(0), variant.clone()),
                bin(BinOp::Le, var(ALPHA), plus(oa.clone(), times(spent.clone(), eb.clone()))),
                bin(BinOp::Le, var(DELTA), plus(od.clone(), times(spent, db.clone()))),
            ]);
            let inner = rebuild(body, plus(oa, times(variant.clone(), eb)), plus(od, times(variant.clone(), db)));
            let ann = LoopAnn { invariant: inv, variant: bin(BinOp::Sub, int(*n), variant.clone()) };
            vec![Stmt::new(StmtKind::While { guard: guard.clone(), body: inner, ann: Some(ann) }, j.c1[0].span)]
        }
        _ => j.c1.clone(),
    }
}

/// {Ψ ∧ α = 0 ∧ δ = 0} T(c) {Φ ∧ α ≤ ε ∧ δ ≤ δ} for the root judgment, with
/// the obligations of the weakest-precondition calculus.
pub fn compile_to_hoare(doc: &DerivationDoc, ctx: &EvalCtx) -> Result<Compiled, AprhlError> {
    let root = &doc.root;
    let j = &root.judgment;
    if shape(&j.c1) != shape(&j.c2) {
        return Err(AprhlError::NotSelfComposed);
    }
    let ev = closed_value(&j.eps, ctx).ok_or_else(|| AprhlError::NonConstantCost(pretty_expr(&j.eps)))?;
    let dv = closed_value(&j.delta, ctx).ok_or_else(|| AprhlError::NonConstantCost(pretty_expr(&j.delta)))?;
    let body = rebuild(root, int(0), int(0));
    let product = self_product(&body);
    let mut header = doc.header.clone();
    header.pre = Some(j.pre.clone());
    header.target = Some(Target {
        eps: Param { expr: j.eps.clone(), value: ev },
        delta: Param { expr: j.delta.clone(), value: dv },
    });
    let unit = ProgramUnit { header, body };
    let zero = || int(0);
    let span = product.last().map(|s| s.span).unwrap_or_default();
    let post = j
        .post
        .clone()
        .and(bin(BinOp::Le, var(ALPHA), j.eps.clone()))
        .and(bin(BinOp::Le, var(DELTA), j.delta.clone()));
    let triple = HoareTriple {
        pre: j.pre.clone().and(var(ALPHA).eq(zero())).and(var(DELTA).eq(zero())),
        cmd: product.clone(),
        post: label_conjuncts(&post, "goal", span),
    };
    let obligations = VcGen::new(None).generate(&triple).map_err(|e| AprhlError::Wp(e.to_string()))?;
    let notes = vec![
        "ghost initialization __alpha = 0 and __delta = 0 added to the precondition".to_string(),
        "loop invariants and variants synthesized from the while-rule instances".to_string(),
    ];
    Ok(Compiled { unit, product, triple, obligations, notes })
}

/// Judgment as JSON, with commands in untagged concrete syntax.
pub fn judgment_json(j: &Judgment) -> serde_json::Value {
    serde_json::json!({
        "pre": pretty_expr(&j.pre),
        "c1": shape(&j.c1).trim_end(),
        "c2": shape(&j.c2).trim_end(),
        "post": pretty_expr(&j.post),
        "eps": pretty_expr(&j.eps),
        "delta": pretty_expr(&j.delta),
    })
}

/// Values of a closed cost, for reports.
pub fn cost_value(e: &Expr, ctx: &EvalCtx) -> Option<Value> {
    closed_value(e, ctx).map(Value::Real)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_expr;

    const HDR: &str = "input a : int in {0..4}; decl y : int in {0..8}; decl x : int in {-4..12};";

    fn node(rule: &str, pre: &str, c: &str, post: &str, eps: &str, children: Vec<serde_json::Value>) -> serde_json::Value {
        serde_json::json!({
            "rule": rule,
            "judgment": {"pre": pre, "c1": c, "c2": c, "post": post, "eps": eps, "delta": "0"},
            "children": children,
        })
    }

    fn doc(root: serde_json::Value) -> Result<DerivationDoc, AprhlError> {
        DerivationDoc::parse(&serde_json::json!({"program": HDR, "root": root}).to_string())
    }

    fn ctx() -> EvalCtx {
        EvalCtx::from_header(&parse_header(HDR).unwrap()).unwrap()
    }

    #[test]
    fn lap_instance_is_accepted() {
        let d = doc(node("lap", "true", "x := Lap[1](y)", "x_1 = x_2", "abs(y_1 - y_2) * 1", vec![])).unwrap();
        assert!(check_derivation(&d, &ctx()).unwrap().is_empty());
    }

    #[test]
    fn lap_frame_carries_unrelated_facts() {
        let mut n = node("lap", "a_1 = a_2", "x := Lap[1](y)", "a_1 = a_2 && x_1 = x_2", "abs(y_1 - y_2) * 1", vec![]);
        n["params"] = serde_json::json!({"frame": "a_1 = a_2"});
        assert!(check_derivation(&doc(n.clone()).unwrap(), &ctx()).unwrap().is_empty());
        let mut bare = n.clone();
        bare.as_object_mut().unwrap().remove("params");
        let obs = check_derivation(&doc(bare).unwrap(), &ctx()).unwrap();
        assert_eq!(obs.len(), 1);
        assert_eq!(obs[0].provenance.rule, "aprhl-lap-post");
        n["params"] = serde_json::json!({"frame": "x_1 = 0"});
        let err = check_derivation(&doc(n).unwrap(), &ctx()).unwrap_err();
        assert!(matches!(err, AprhlError::RuleViolation { .. }), "{err}");
    }

    #[test]
    fn seq_cost_must_add_up() {
        let lap = |c: &str| node("lap", "true", c, "true", "1", vec![]);
        let root = node("seq", "true", "x := Lap[1](y); y := Lap[1](x)", "true", "1", vec![lap("x := Lap[1](y)"), lap("y := Lap[1](x)")]);
        let err = check_derivation(&doc(root).unwrap(), &ctx()).unwrap_err();
        assert!(matches!(err, AprhlError::CostMismatch { .. }), "{err}");
    }

    #[test]
    fn weak_cannot_decrease_delta() {
        let mut inner = node("skip", "true", "skip", "true", "0", vec![]);
        inner["judgment"]["delta"] = "1/2".into();
        let mut root = node("weak", "true", "skip", "true", "0", vec![inner]);
        root["judgment"]["delta"] = "1/4".into();
        let err = check_derivation(&doc(root).unwrap(), &ctx()).unwrap_err();
        assert!(matches!(err, AprhlError::RuleViolation { ref detail, .. } if detail.contains("δ′ ≤ δ")), "{err}");
    }

    #[test]
    fn generalized_rules_are_rejected() {
        let root = node("while-gen", "true", "skip", "true", "0", vec![]);
        assert!(matches!(doc(root), Err(AprhlError::Unsupported { .. })));
    }

    #[test]
    fn cost_normal_form() {
        let h = parse_header(HDR).unwrap();
        let p = |s: &str| parse_expr(s, &h).unwrap();
        assert!(cost_eq(&p("3 * (1/2)"), &p("1/2 + 1/2 + 1/2")));
        assert!(cost_eq(&p("abs(y_1 - y_2) * 2"), &p("2 * abs(y_1 - y_2)")));
        assert!(!cost_eq(&p("1"), &p("2")));
    }
}
