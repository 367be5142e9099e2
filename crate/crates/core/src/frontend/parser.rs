//! Recursive-descent parser for `.pwhile` units, statement blocks and formulas.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};

use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use super::span::Span;
use super::ParseError;
use crate::values::{ScoreFn, Value};

type PResult<T> = Result<T, ParseError>;

const HEADER_KEYWORDS: &[&str] =
    &["program", "const", "input", "decl", "range", "mechanism", "builtin", "pred", "pre", "target"];

const RESERVED: &[&str] = &[
    "program", "const", "input", "decl", "range", "mechanism", "builtin", "pred", "pre", "target",
    "skip", "if", "then", "else", "while", "do", "return", "assert", "Lap", "Exp", "true", "false",
    "forall", "exists", "in", "div", "mod", "score", "dom",
];

#[derive(Clone, Copy, Debug)]
pub struct ParseOptions {
    /// Reject `while` loops without `@invariant`/`@variant`.
    pub require_loop_annotations: bool,
    /// Reject source names that end in `_1`/`_2` or start with `__`.
    pub check_names: bool,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions { require_loop_annotations: true, check_names: true }
    }
}

/// Parses a complete program unit (header and body).
pub fn parse_unit(src: &str) -> PResult<ProgramUnit> {
    let mut p = Parser::new(src, ParseOptions::default())?;
    let header = p.header()?;
    let body = p.block_items(&[Tok::Eof])?;
    p.expect(&Tok::Eof)?;
    p.check_returns(&body)?;
    Ok(ProgramUnit { header, body })
}

/// Parses header items only (used by derivation files).
pub fn parse_header(src: &str) -> PResult<Header> {
    let mut p = Parser::new(src, ParseOptions { require_loop_annotations: false, check_names: false })?;
    let h = p.header()?;
    p.expect(&Tok::Eof)?;
    Ok(h)
}

/// Parses a statement block in the scope of a header.
pub fn parse_block(src: &str, header: &Header, opts: ParseOptions) -> PResult<Block> {
    let mut p = Parser::new(src, opts)?;
    p.load_scope(header);
    let b = p.block_items(&[Tok::Eof])?;
    p.expect(&Tok::Eof)?;
    Ok(b)
}

/// Parses a single expression or formula in the scope of a header.
pub fn parse_expr(src: &str, header: &Header) -> PResult<Expr> {
    let mut p = Parser::new(src, ParseOptions { require_loop_annotations: false, check_names: false })?;
    p.load_scope(header);
    let e = p.expr()?;
    p.expect(&Tok::Eof)?;
    Ok(e)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    consts: BTreeMap<String, Value>,
    mechs: BTreeSet<String>,
    opts: ParseOptions,
}

enum Pending {
    Invariant(Expr, Span),
    Variant(Expr, Span),
    LapSpec(LapSpec, Span),
}

impl Parser {
    fn new(src: &str, opts: ParseOptions) -> PResult<Parser> {
        Ok(Parser { toks: tokenize(src)?, pos: 0, consts: BTreeMap::new(), mechs: BTreeSet::new(), opts })
    }

    fn load_scope(&mut self, h: &Header) {
        for c in &h.consts {
            self.consts.insert(c.name.clone(), c.value.clone());
        }
        for m in &h.mechanisms {
            self.mechs.insert(m.name.clone());
        }
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let i = (self.pos + k).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn span(&self) -> Span {
        self.toks[self.pos].span
    }

    fn prev_span(&self) -> Span {
        self.toks[self.pos.saturating_sub(1)].span
    }

    fn advance(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn at(&self, t: &Tok) -> bool {
        self.peek() == t
    }

    fn at_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.at(t) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.at_kw(kw) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn err<T>(&self, msg: impl Into<String>) -> PResult<T> {
        Err(ParseError::syntax(msg, self.span()))
    }

    fn expect(&mut self, t: &Tok) -> PResult<Span> {
        if self.at(t) {
            Ok(self.advance().span)
        } else {
            self.err(format!("expected {}, found {}", t.describe(), self.peek().describe()))
        }
    }

    fn expect_kw(&mut self, kw: &str) -> PResult<Span> {
        if self.at_kw(kw) {
            Ok(self.advance().span)
        } else {
            self.err(format!("expected `{kw}`, found {}", self.peek().describe()))
        }
    }

    fn ident(&mut self) -> PResult<(String, Span)> {
        match self.peek().clone() {
            Tok::Ident(s) if !RESERVED.contains(&s.as_str()) => {
                let sp = self.advance().span;
                Ok((s, sp))
            }
            other => self.err(format!("expected identifier, found {}", other.describe())),
        }
    }

    fn check_name(&self, name: &str, span: Span) -> PResult<()> {
        if !self.opts.check_names {
            return Ok(());
        }
        if name.starts_with("__") {
            return Err(ParseError::syntax(format!("name `{name}` is reserved (leading `__`)"), span));
        }
        if split_tag(name).1.is_some() {
            return Err(ParseError::syntax(
                format!("name `{name}` is reserved (suffixes _1 and _2 denote product copies)"),
                span,
            ));
        }
        Ok(())
    }

    // ---------------------------------------------------------------- header

    fn header(&mut self) -> PResult<Header> {
        let mut h = Header::default();
        let mut names: BTreeSet<String> = BTreeSet::new();
        loop {
            let Tok::Ident(kw) = self.peek().clone() else { break };
            if !HEADER_KEYWORDS.contains(&kw.as_str()) {
                break;
            }
            let kw_span = self.advance().span;
            match kw.as_str() {
                "program" => {
                    let (n, _) = self.ident()?;
                    h.name = Some(n);
                }
                "const" => {
                    let (n, sp) = self.ident()?;
                    self.declare(&mut names, &n, sp)?;
                    self.expect(&Tok::Eq)?;
                    let expr = self.expr()?;
                    let value = const_eval(&expr).map_err(|m| ParseError::syntax(m, sp))?;
                    self.consts.insert(n.clone(), value.clone());
                    h.consts.push(ConstDecl { name: n, expr, value });
                }
                "input" | "decl" => {
                    let (n, sp) = self.ident()?;
                    self.check_name(&n, sp)?;
                    self.declare(&mut names, &n, sp)?;
                    self.expect(&Tok::Colon)?;
                    let ty = self.ty()?;
                    let domain = if self.eat_kw("in") { Some(self.domain()?) } else { None };
                    h.vars.push(VarDecl { name: n, ty, domain, input: kw == "input", span: sp });
                }
                "range" => {
                    if h.range.is_some() {
                        return Err(ParseError::duplicate("duplicate range declaration", kw_span));
                    }
                    let (n, _) = self.ident()?;
                    self.expect(&Tok::Eq)?;
                    self.expect(&Tok::LBracket)?;
                    let mut vals = Vec::new();
                    if !self.at(&Tok::RBracket) {
                        loop {
                            vals.push(self.literal()?);
                            if !self.eat(&Tok::Comma) {
                                break;
                            }
                        }
                    }
                    self.expect(&Tok::RBracket)?;
                    h.range = Some((n, vals));
                }
                "mechanism" => {
                    let (n, sp) = self.ident()?;
                    self.declare(&mut names, &n, sp)?;
                    let axioms = if self.eat_kw("axioms") {
                        match self.advance().tok {
                            Tok::Str(s) => Some(s),
                            other => return self.err(format!("expected axiom file string, found {}", other.describe())),
                        }
                    } else {
                        None
                    };
                    self.mechs.insert(n.clone());
                    h.mechanisms.push(MechDecl { name: n, axioms });
                }
                "builtin" => {
                    let (n, sp) = self.ident()?;
                    self.declare(&mut names, &n, sp)?;
                    self.expect(&Tok::Eq)?;
                    let (factory, _) = self.ident()?;
                    self.expect(&Tok::LParen)?;
                    let mut args = Vec::new();
                    if !self.at(&Tok::RParen) {
                        loop {
                            args.push(self.ident()?.0);
                            if !self.eat(&Tok::Comma) {
                                break;
                            }
                        }
                    }
                    self.expect(&Tok::RParen)?;
                    h.builtins.push(BuiltinDecl { name: n, factory, args });
                }
                "pred" => {
                    let (n, sp) = self.ident()?;
                    self.declare(&mut names, &n, sp)?;
                    self.expect(&Tok::LParen)?;
                    let mut params = Vec::new();
                    if !self.at(&Tok::RParen) {
                        loop {
                            let (pn, _) = self.ident()?;
                            self.expect(&Tok::Colon)?;
                            params.push((pn, self.ty()?));
                            if !self.eat(&Tok::Comma) {
                                break;
                            }
                        }
                    }
                    self.expect(&Tok::RParen)?;
                    self.expect(&Tok::Eq)?;
                    let body = self.expr()?;
                    h.preds.push(PredDecl { name: n, params, body });
                }
                "pre" => {
                    if h.pre.is_some() {
                        return Err(ParseError::duplicate("duplicate precondition", kw_span));
                    }
                    self.expect(&Tok::LBrace)?;
                    h.pre = Some(self.expr()?);
                    self.expect(&Tok::RBrace)?;
                }
                "target" => {
                    if h.target.is_some() {
                        return Err(ParseError::duplicate("duplicate privacy target", kw_span));
                    }
                    self.expect(&Tok::LParen)?;
                    let eps = self.param(false)?;
                    self.expect(&Tok::Comma)?;
                    let delta = self.param(false)?;
                    self.expect(&Tok::RParen)?;
                    h.target = Some(Target { eps, delta });
                }
                _ => unreachable!(),
            }
            self.expect(&Tok::Semi)?;
        }
        Ok(h)
    }

    fn declare(&self, names: &mut BTreeSet<String>, n: &str, sp: Span) -> PResult<()> {
        if !names.insert(n.to_string()) {
            return Err(ParseError::duplicate(format!("duplicate declaration of `{n}`"), sp));
        }
        Ok(())
    }

    fn ty(&mut self) -> PResult<Type> {
        let (n, sp) = match self.peek().clone() {
            Tok::Ident(s) => (s, self.advance().span),
            other => return self.err(format!("expected type, found {}", other.describe())),
        };
        match n.as_str() {
            "int" => Ok(Type::Int),
            "real" => Ok(Type::Real),
            "bool" => Ok(Type::Bool),
            "score" => Ok(Type::Score),
            "list" => {
                self.expect(&Tok::Lt)?;
                let t = self.ty()?;
                self.expect(&Tok::Gt)?;
                Ok(Type::List(Box::new(t)))
            }
            _ => Err(ParseError::syntax(format!("unknown type `{n}`"), sp)),
        }
    }

    fn int_lit(&mut self) -> PResult<i64> {
        let neg = self.eat(&Tok::Minus);
        match self.peek().clone() {
            Tok::Int(i) => {
                self.advance();
                Ok(if neg { -i } else { i })
            }
            other => self.err(format!("expected integer, found {}", other.describe())),
        }
    }

    fn domain(&mut self) -> PResult<Domain> {
        if self.eat(&Tok::LBrace) {
            if self.at(&Tok::RBrace) {
                self.advance();
                return Ok(Domain::Values(Vec::new()));
            }
            let save = self.pos;
            if let Ok(lo) = self.int_lit() {
                if self.eat(&Tok::DotDot) {
                    let hi = self.int_lit()?;
                    self.expect(&Tok::RBrace)?;
                    return Ok(Domain::Ints(lo, hi));
                }
            }
            self.pos = save;
            let mut vals = Vec::new();
            loop {
                vals.push(self.literal()?);
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
            self.expect(&Tok::RBrace)?;
            return Ok(Domain::Values(vals));
        }
        let (kw, sp) = match self.peek().clone() {
            Tok::Ident(s) => (s, self.advance().span),
            other => return self.err(format!("expected domain, found {}", other.describe())),
        };
        match kw.as_str() {
            "bool" => Ok(Domain::Bools),
            "lists" | "msets" => {
                self.expect(&Tok::LParen)?;
                let elems = Box::new(self.domain()?);
                self.expect(&Tok::Comma)?;
                let lo = self.int_lit()?;
                self.expect(&Tok::DotDot)?;
                let hi = self.int_lit()?;
                self.expect(&Tok::RParen)?;
                if lo < 0 || hi < lo {
                    return Err(ParseError::syntax("invalid length bounds", sp));
                }
                let (min_len, max_len) = (lo as usize, hi as usize);
                Ok(if kw == "lists" {
                    Domain::Lists { elems, min_len, max_len }
                } else {
                    Domain::Msets { elems, min_len, max_len }
                })
            }
            "hist" => {
                self.expect(&Tok::LParen)?;
                let bins = self.int_lit()?;
                self.expect(&Tok::Comma)?;
                let max_total = self.int_lit()?;
                self.expect(&Tok::RParen)?;
                if bins < 0 || max_total < 0 {
                    return Err(ParseError::syntax("invalid histogram bounds", sp));
                }
                Ok(Domain::Hist { bins: bins as usize, max_total })
            }
            _ => Err(ParseError::syntax(format!("unknown domain `{kw}`"), sp)),
        }
    }

    /// A literal value: numbers, booleans, lists and score tables.
    fn literal(&mut self) -> PResult<Value> {
        let sp = self.span();
        match self.peek().clone() {
            Tok::Minus => {
                self.advance();
                match self.literal()? {
                    Value::Int(i) => Ok(Value::Int(-i)),
                    Value::Real(r) => Ok(Value::Real(-r)),
                    _ => Err(ParseError::syntax("expected number after `-`", sp)),
                }
            }
            Tok::Int(i) => {
                self.advance();
                Ok(Value::Int(i))
            }
            Tok::Decimal(s) => {
                self.advance();
                Ok(Value::Real(parse_decimal(&s)))
            }
            Tok::Ident(s) if s == "true" || s == "false" => {
                self.advance();
                Ok(Value::Bool(s == "true"))
            }
            Tok::Ident(s) if self.consts.contains_key(&s) => {
                self.advance();
                Ok(self.consts[&s].clone())
            }
            Tok::LBracket => {
                self.advance();
                let mut items = Vec::new();
                if !self.at(&Tok::RBracket) {
                    loop {
                        items.push(self.literal()?);
                        if !self.eat(&Tok::Comma) {
                            break;
                        }
                    }
                }
                self.expect(&Tok::RBracket)?;
                Ok(Value::list(items))
            }
            Tok::Ident(s) if s == "score" && self.peek_at(1) == &Tok::LBrace => {
                self.advance();
                self.score_table()
            }
            other => self.err(format!("expected literal, found {}", other.describe())),
        }
    }

    fn score_table(&mut self) -> PResult<Value> {
        self.expect(&Tok::LBrace)?;
        let mut table = BTreeMap::new();
        if !self.at(&Tok::RBrace) {
            loop {
                let sp = self.span();
                self.expect(&Tok::LParen)?;
                let k = self.literal()?;
                self.expect(&Tok::Comma)?;
                let r = self.literal()?;
                self.expect(&Tok::RParen)?;
                self.expect(&Tok::Colon)?;
                let v = self
                    .literal()?
                    .as_rational()
                    .ok_or_else(|| ParseError::syntax("score values must be numeric", sp))?;
                if table.insert((k, r), v).is_some() {
                    return Err(ParseError::duplicate("duplicate score table key", sp));
                }
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        self.expect(&Tok::RBrace)?;
        Ok(Value::Score(Arc::new(ScoreFn::Table(table))))
    }

    fn param(&mut self, positive: bool) -> PResult<Param> {
        let sp = self.span();
        let expr = self.add_expr()?;
        let value = const_eval(&expr)
            .map_err(|m| ParseError::syntax(m, sp))?
            .as_rational()
            .ok_or_else(|| ParseError::syntax("parameter must be numeric", sp))?;
        if value.is_negative() || (positive && value.is_zero()) {
            let want = if positive { "positive" } else { "nonnegative" };
            return Err(ParseError::syntax(format!("parameter must be {want}"), sp));
        }
        Ok(Param { expr, value })
    }

    // ------------------------------------------------------------ statements

    fn block_items(&mut self, terminators: &[Tok]) -> PResult<Block> {
        let mut out = Vec::new();
        if terminators.contains(self.peek()) {
            return Ok(out);
        }
        loop {
            out.push(self.stmt()?);
            if !self.eat(&Tok::Semi) {
                break;
            }
            if terminators.contains(self.peek()) {
                break;
            }
        }
        Ok(out)
    }

    fn sub_block(&mut self) -> PResult<Block> {
        if self.eat(&Tok::LBrace) {
            let b = self.block_items(&[Tok::RBrace])?;
            self.expect(&Tok::RBrace)?;
            Ok(b)
        } else {
            Ok(vec![self.stmt()?])
        }
    }

    fn annotation_payload(&mut self) -> PResult<Expr> {
        self.expect(&Tok::LBrace)?;
        let e = self.expr()?;
        self.expect(&Tok::RBrace)?;
        Ok(e)
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        let start = self.span();
        let mut pending = Vec::new();
        while let Tok::Annot(name) = self.peek().clone() {
            let sp = self.advance().span;
            match name.as_str() {
                "cut" => {
                    if !pending.is_empty() {
                        return Err(ParseError::annotation("annotation attached to non-loop", sp));
                    }
                    let e = self.annotation_payload()?;
                    return Ok(Stmt::new(StmtKind::Cut(e), start.to(self.prev_span())));
                }
                "invariant" => pending.push(Pending::Invariant(self.annotation_payload()?, sp)),
                "variant" => pending.push(Pending::Variant(self.annotation_payload()?, sp)),
                "lapspec" => {
                    self.expect(&Tok::LBrace)?;
                    let spec = if self.eat_kw("pure") {
                        LapSpec::Pure
                    } else if self.eat_kw("accuracy") {
                        self.expect(&Tok::LParen)?;
                        let d = self.param(true)?;
                        self.expect(&Tok::RParen)?;
                        LapSpec::Accuracy(d)
                    } else {
                        return self.err("expected `pure` or `accuracy(delta)`");
                    };
                    self.expect(&Tok::RBrace)?;
                    pending.push(Pending::LapSpec(spec, sp));
                }
                other => return Err(ParseError::annotation(format!("unknown annotation @{other}"), sp)),
            }
        }
        let mut kind = self.stmt_kind()?;
        let span = start.to(self.prev_span());
        self.attach(&mut kind, pending, span)?;
        Ok(Stmt::new(kind, span))
    }

    fn attach(&self, kind: &mut StmtKind, pending: Vec<Pending>, span: Span) -> PResult<()> {
        let mut inv = None;
        let mut variant = None;
        let mut lapspec = None;
        for p in pending {
            match p {
                Pending::Invariant(e, sp) => {
                    if !matches!(kind, StmtKind::While { .. }) {
                        return Err(ParseError::annotation("annotation attached to non-loop", sp));
                    }
                    if inv.replace(e).is_some() {
                        return Err(ParseError::duplicate("duplicate @invariant", sp));
                    }
                }
                Pending::Variant(e, sp) => {
                    if !matches!(kind, StmtKind::While { .. }) {
                        return Err(ParseError::annotation("annotation attached to non-loop", sp));
                    }
                    if variant.replace(e).is_some() {
                        return Err(ParseError::duplicate("duplicate @variant", sp));
                    }
                }
                Pending::LapSpec(s, sp) => {
                    if !matches!(kind, StmtKind::Lap { .. } | StmtKind::LapInv { .. }) {
                        return Err(ParseError::annotation(
                            "@lapspec must precede a Laplace assignment",
                            sp,
                        ));
                    }
                    if lapspec.replace(s).is_some() {
                        return Err(ParseError::duplicate("duplicate @lapspec", sp));
                    }
                }
            }
        }
        match kind {
            StmtKind::While { ann, .. } => match (inv, variant) {
                (Some(invariant), Some(variant)) => *ann = Some(LoopAnn { invariant, variant }),
                (None, None) if !self.opts.require_loop_annotations => {}
                (Some(_), None) => return Err(ParseError::annotation("loop annotation lacks @variant", span)),
                (None, Some(_)) => return Err(ParseError::annotation("loop annotation lacks @invariant", span)),
                (None, None) => return Err(ParseError::annotation("missing loop annotation", span)),
            },
            StmtKind::Lap { spec, .. } | StmtKind::LapInv { spec, .. } => {
                if let Some(s) = lapspec {
                    *spec = s;
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn stmt_kind(&mut self) -> PResult<StmtKind> {
        if self.eat_kw("skip") {
            return Ok(StmtKind::Skip);
        }
        if self.eat_kw("if") {
            let g = self.expr()?;
            self.expect_kw("then")?;
            let a = self.sub_block()?;
            let b = if self.eat_kw("else") { self.sub_block()? } else { Vec::new() };
            return Ok(StmtKind::If(g, a, b));
        }
        if self.eat_kw("while") {
            let g = self.expr()?;
            self.expect_kw("do")?;
            let body = self.sub_block()?;
            return Ok(StmtKind::While { guard: g, body, ann: None });
        }
        if self.eat_kw("return") {
            if self.at(&Tok::LParen) {
                let save = self.pos;
                self.advance();
                let a = self.expr()?;
                if self.eat(&Tok::Comma) {
                    let b = self.expr()?;
                    self.expect(&Tok::RParen)?;
                    return Ok(StmtKind::ReturnPair(a, b));
                }
                self.pos = save;
            }
            return Ok(StmtKind::Return(self.expr()?));
        }
        if self.eat_kw("assert") {
            self.expect(&Tok::LParen)?;
            let e = self.expr()?;
            self.expect(&Tok::RParen)?;
            return Ok(StmtKind::Assert(e));
        }
        if self.at(&Tok::LParen) {
            return self.paired_invoke();
        }
        let (x, sp) = self.ident()?;
        self.check_name(&x, sp)?;
        self.expect(&Tok::Assign)?;
        if self.eat_kw("Lap") {
            let eps = self.bracket_param()?;
            self.expect(&Tok::LParen)?;
            let arg = self.expr()?;
            self.expect(&Tok::RParen)?;
            return Ok(StmtKind::Lap { var: x, eps, arg, spec: LapSpec::Pure });
        }
        if self.eat_kw("Exp") {
            let eps = self.bracket_param()?;
            self.expect(&Tok::LParen)?;
            let score = self.expr()?;
            self.expect(&Tok::Comma)?;
            let input = self.expr()?;
            self.expect(&Tok::RParen)?;
            return Ok(StmtKind::Exp { var: x, eps, score, input });
        }
        if let Tok::Ident(m) = self.peek().clone() {
            if self.mechs.contains(&m) && self.peek_at(1) == &Tok::LBracket {
                self.advance();
                let eps = self.bracket_param()?;
                let args = self.call_args()?;
                return Ok(StmtKind::Custom { var: x, mech: m, eps, args });
            }
        }
        Ok(StmtKind::Assign(x, self.expr()?))
    }

    fn bracket_param(&mut self) -> PResult<Param> {
        self.expect(&Tok::LBracket)?;
        let p = self.param(true)?;
        self.expect(&Tok::RBracket)?;
        Ok(p)
    }

    fn call_args(&mut self) -> PResult<Vec<Expr>> {
        self.expect(&Tok::LParen)?;
        let mut args = Vec::new();
        if !self.at(&Tok::RParen) {
            loop {
                args.push(self.expr()?);
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        self.expect(&Tok::RParen)?;
        Ok(args)
    }

    /// `(x1, x2) := M<>[eps](...)`.
    fn paired_invoke(&mut self) -> PResult<StmtKind> {
        self.expect(&Tok::LParen)?;
        let (x1, _) = self.ident()?;
        self.expect(&Tok::Comma)?;
        let (x2, _) = self.ident()?;
        self.expect(&Tok::RParen)?;
        self.expect(&Tok::Assign)?;
        let (mech, sp) = match self.peek().clone() {
            Tok::Ident(s) => (s, self.advance().span),
            other => return self.err(format!("expected mechanism name, found {}", other.describe())),
        };
        self.expect(&Tok::Diamond)?;
        let eps = self.bracket_param()?;
        let vars = (x1, x2);
        match mech.as_str() {
            "Lap" => {
                let args = self.call_args()?;
                if args.len() != 2 {
                    return Err(ParseError::syntax("Lap<> takes two arguments", sp));
                }
                let mut it = args.into_iter();
                let a = it.next().unwrap();
                let b = it.next().unwrap();
                Ok(StmtKind::LapInv { vars, eps, args: (a, b), spec: LapSpec::Pure })
            }
            "Exp" => {
                let args = self.call_args()?;
                if args.len() != 4 {
                    return Err(ParseError::syntax("Exp<> takes four arguments (s1, e1, s2, e2)", sp));
                }
                let mut it = args.into_iter();
                let s1 = it.next().unwrap();
                let e1 = it.next().unwrap();
                let s2 = it.next().unwrap();
                let e2 = it.next().unwrap();
                Ok(StmtKind::ExpInv { vars, eps, left: (s1, e1), right: (s2, e2) })
            }
            m if self.mechs.contains(m) => {
                self.expect(&Tok::LParen)?;
                let mut left = Vec::new();
                let mut right = Vec::new();
                let mut cur = &mut left;
                if !self.at(&Tok::RParen) {
                    loop {
                        if self.eat(&Tok::Semi) {
                            cur = &mut right;
                            continue;
                        }
                        cur.push(self.expr()?);
                        if self.eat(&Tok::Comma) {
                            continue;
                        }
                        if self.at(&Tok::Semi) {
                            continue;
                        }
                        break;
                    }
                }
                self.expect(&Tok::RParen)?;
                Ok(StmtKind::CustomInv { vars, mech: m.to_string(), eps, left, right })
            }
            m => Err(ParseError::syntax(format!("unknown mechanism `{m}`"), sp)),
        }
    }

    fn check_returns(&self, body: &Block) -> PResult<()> {
        let mut spans = Vec::new();
        walk_block(body, &mut |s| {
            if matches!(s.kind, StmtKind::Return(_) | StmtKind::ReturnPair(..)) {
                spans.push(s.span);
            }
        });
        let last_is_return = body
            .last()
            .map(|s| matches!(s.kind, StmtKind::Return(_) | StmtKind::ReturnPair(..)))
            .unwrap_or(false);
        if spans.len() > 1 || (spans.len() == 1 && !last_is_return) {
            return Err(ParseError::syntax(
                "`return` must appear exactly once, at the end of the program",
                spans[0],
            ));
        }
        if spans.is_empty() {
            let sp = body.last().map(|s| s.span).unwrap_or_default();
            return Err(ParseError::syntax("program must end with `return`", sp));
        }
        Ok(())
    }

    // ----------------------------------------------------------- expressions

    pub fn expr(&mut self) -> PResult<Expr> {
        if self.at_kw("forall") || self.at_kw("exists") {
            return self.quantifier();
        }
        self.iff_expr()
    }

    fn quantifier(&mut self) -> PResult<Expr> {
        let q = if self.eat_kw("forall") {
            Quant::Forall
        } else {
            self.expect_kw("exists")?;
            Quant::Exists
        };
        let (v, _) = self.ident()?;
        self.expect_kw("in")?;
        let dom = if self.eat(&Tok::LBrace) {
            let lo = self.add_expr()?;
            self.expect(&Tok::DotDot)?;
            let hi = self.add_expr()?;
            self.expect(&Tok::RBrace)?;
            QDomain::Ints(Box::new(lo), Box::new(hi))
        } else if self.eat_kw("range") {
            QDomain::Range
        } else if self.eat_kw("dom") {
            self.expect(&Tok::LParen)?;
            let (x, _) = self.ident()?;
            self.expect(&Tok::RParen)?;
            QDomain::Decl(x)
        } else {
            return self.err("expected quantifier domain `{lo..hi}`, `range` or `dom(x)`");
        };
        self.expect(&Tok::Dot)?;
        let body = self.expr()?;
        Ok(Expr::Quant(q, v, dom, Box::new(body)))
    }

    fn iff_expr(&mut self) -> PResult<Expr> {
        let mut e = self.implies_expr()?;
        while self.eat(&Tok::Iff) {
            let r = self.implies_expr()?;
            e = bin(BinOp::Iff, e, r);
        }
        Ok(e)
    }

    fn implies_expr(&mut self) -> PResult<Expr> {
        let e = self.or_expr()?;
        if self.eat(&Tok::Implies) {
            let r = if self.at_kw("forall") || self.at_kw("exists") { self.quantifier()? } else { self.implies_expr()? };
            return Ok(bin(BinOp::Implies, e, r));
        }
        Ok(e)
    }

    fn or_expr(&mut self) -> PResult<Expr> {
        let mut e = self.and_expr()?;
        while self.eat(&Tok::OrOr) {
            let r = self.and_expr()?;
            e = bin(BinOp::Or, e, r);
        }
        Ok(e)
    }

    fn and_expr(&mut self) -> PResult<Expr> {
        let mut e = self.not_expr()?;
        while self.eat(&Tok::AndAnd) {
            let r = self.not_expr()?;
            e = bin(BinOp::And, e, r);
        }
        Ok(e)
    }

    fn not_expr(&mut self) -> PResult<Expr> {
        if self.eat(&Tok::Bang) {
            return Ok(un(UnOp::Not, self.not_expr()?));
        }
        self.cmp_expr()
    }

    fn cmp_expr(&mut self) -> PResult<Expr> {
        let e = self.cons_expr()?;
        let op = match self.peek() {
            Tok::Eq => BinOp::Eq,
            Tok::Ne => BinOp::Ne,
            Tok::Lt => BinOp::Lt,
            Tok::Le => BinOp::Le,
            Tok::Gt => BinOp::Gt,
            Tok::Ge => BinOp::Ge,
            _ => return Ok(e),
        };
        self.advance();
        let r = self.cons_expr()?;
        Ok(bin(op, e, r))
    }

    fn cons_expr(&mut self) -> PResult<Expr> {
        let e = self.add_expr()?;
        if self.eat(&Tok::ColonColon) {
            let r = self.cons_expr()?;
            return Ok(bin(BinOp::Cons, e, r));
        }
        Ok(e)
    }

    fn add_expr(&mut self) -> PResult<Expr> {
        let mut e = self.mul_expr()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(e),
            };
            self.advance();
            let r = self.mul_expr()?;
            e = bin(op, e, r);
        }
    }

    fn mul_expr(&mut self) -> PResult<Expr> {
        let mut e = self.unary_expr()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                Tok::Ident(s) if s == "div" => BinOp::IntDiv,
                Tok::Ident(s) if s == "mod" => BinOp::Mod,
                _ => return Ok(e),
            };
            self.advance();
            let r = self.unary_expr()?;
            e = bin(op, e, r);
        }
    }

    fn unary_expr(&mut self) -> PResult<Expr> {
        if self.eat(&Tok::Minus) {
            return Ok(un(UnOp::Neg, self.unary_expr()?));
        }
        self.atom()
    }

    fn atom(&mut self) -> PResult<Expr> {
        let sp = self.span();
        match self.peek().clone() {
            Tok::Int(i) => {
                self.advance();
                Ok(int(i))
            }
            Tok::Decimal(s) => {
                self.advance();
                Ok(Expr::Lit(Value::Real(parse_decimal(&s))))
            }
            Tok::LParen => {
                self.advance();
                let e = self.expr()?;
                self.expect(&Tok::RParen)?;
                Ok(e)
            }
            Tok::LBracket => {
                self.advance();
                let mut items = Vec::new();
                if !self.at(&Tok::RBracket) {
                    loop {
                        items.push(self.expr()?);
                        if !self.eat(&Tok::Comma) {
                            break;
                        }
                    }
                }
                self.expect(&Tok::RBracket)?;
                Ok(Expr::ListLit(items))
            }
            Tok::Ident(s) => self.ident_atom(s, sp),
            other => self.err(format!("expected expression, found {}", other.describe())),
        }
    }

    fn ident_atom(&mut self, s: String, sp: Span) -> PResult<Expr> {
        match s.as_str() {
            "true" | "false" => {
                self.advance();
                return Ok(Expr::Lit(Value::Bool(s == "true")));
            }
            "forall" | "exists" => return self.quantifier(),
            "score" => {
                self.advance();
                if self.at(&Tok::LBrace) {
                    return Ok(Expr::Lit(self.score_table()?));
                }
                self.expect(&Tok::LBracket)?;
                let (f, _) = self.ident()?;
                self.expect(&Tok::RBracket)?;
                let args = self.call_args()?;
                return Ok(Expr::ScorePartial(f, args));
            }
            // Prefix forms `hd l`, `tl l`, `length l`.
            "hd" | "tl" | "length" if self.peek_at(1) != &Tok::LParen => {
                self.advance();
                let op = match s.as_str() {
                    "hd" => UnOp::Hd,
                    "tl" => UnOp::Tl,
                    _ => UnOp::Length,
                };
                return Ok(un(op, self.unary_expr()?));
            }
            _ => {}
        }
        if self.peek_at(1) != &Tok::LParen {
            let (name, _) = self.ident()?;
            if let Some(v) = self.consts.get(&name) {
                return Ok(Expr::Const(name, v.clone()));
            }
            return Ok(Expr::Var(name));
        }
        self.advance();
        let args = self.call_args()?;
        let arity = |n: usize| -> PResult<()> {
            if args.len() != n {
                return Err(ParseError::syntax(format!("`{s}` takes {n} argument(s)"), sp));
            }
            Ok(())
        };
        let unary = |op| -> PResult<Expr> {
            arity(1)?;
            Ok(un(op, args[0].clone()))
        };
        match s.as_str() {
            "abs" => unary(UnOp::Abs),
            "hd" => unary(UnOp::Hd),
            "tl" => unary(UnOp::Tl),
            "length" => unary(UnOp::Length),
            "min" | "max" => {
                arity(2)?;
                let op = if s == "min" { BinOp::Min } else { BinOp::Max };
                Ok(bin(op, args[0].clone(), args[1].clone()))
            }
            "ite" => {
                arity(3)?;
                let mut it = args.into_iter();
                Ok(Expr::Ite(
                    Box::new(it.next().unwrap()),
                    Box::new(it.next().unwrap()),
                    Box::new(it.next().unwrap()),
                ))
            }
            "apply" | "maxgap" => {
                arity(3)?;
                let mut it = args.into_iter();
                let (a, b, c) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
                Ok(if s == "apply" {
                    Expr::ScoreApply(Box::new(a), Box::new(b), Box::new(c))
                } else {
                    Expr::MaxGap(Box::new(a), Box::new(b), Box::new(c))
                })
            }
            "ACC" => {
                arity(2)?;
                let mut it = args.into_iter();
                Ok(Expr::Acc(Box::new(it.next().unwrap()), Box::new(it.next().unwrap())))
            }
            _ if RESERVED.contains(&s.as_str()) => {
                Err(ParseError::syntax(format!("unexpected keyword `{s}`"), sp))
            }
            _ => Ok(Expr::Call(s, args)),
        }
    }
}

pub fn parse_decimal(s: &str) -> BigRational {
    let (int_part, frac) = s.split_once('.').unwrap_or((s, ""));
    let digits = format!("{int_part}{frac}");
    let num: BigInt = digits.parse().unwrap_or_default();
    let den = BigInt::from(10).pow(frac.len() as u32);
    BigRational::new(num, den)
}

/// Folds a constant expression (numbers, named constants, + - * / and unary minus).
pub fn const_eval(e: &Expr) -> Result<Value, String> {
    match e {
        Expr::Lit(v @ (Value::Int(_) | Value::Real(_))) => Ok(v.clone()),
        Expr::Const(_, v) => Ok(v.clone()),
        Expr::Unary(UnOp::Neg, a) => match const_eval(a)? {
            Value::Int(i) => Ok(Value::Int(-i)),
            Value::Real(r) => Ok(Value::Real(-r)),
            _ => Err("non-numeric constant".into()),
        },
        Expr::Binary(op, a, b) => {
            let (x, y) = (const_eval(a)?, const_eval(b)?);
            if let (Value::Int(i), Value::Int(j), BinOp::Add | BinOp::Sub | BinOp::Mul) = (&x, &y, op) {
                let r = match op {
                    BinOp::Add => i.checked_add(*j),
                    BinOp::Sub => i.checked_sub(*j),
                    _ => i.checked_mul(*j),
                };
                return r.map(Value::Int).ok_or_else(|| "integer overflow in constant".into());
            }
            let (x, y) = (
                x.as_rational().ok_or("non-numeric constant")?,
                y.as_rational().ok_or("non-numeric constant")?,
            );
            let r = match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div if y.is_zero() => return Err("division by zero in constant".into()),
                BinOp::Div => x / y,
                _ => return Err(format!("operator `{}` not allowed in constants", op.symbol())),
            };
            Ok(Value::Real(r))
        }
        _ => Err("expected a constant numeric expression".into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::ParseErrorKind;

    fn unit(body: &str) -> PResult<ProgramUnit> {
        parse_unit(body)
    }

    #[test]
    fn lap_then_return() {
        let u = unit("decl e : int; decl x : int; x := Lap[0.5](e); return x").unwrap();
        assert_eq!(u.body.len(), 2);
        match &u.body[0].kind {
            StmtKind::Lap { var, eps, .. } => {
                assert_eq!(var, "x");
                assert_eq!(eps.value, BigRational::new(1.into(), 2.into()));
            }
            k => panic!("unexpected {k:?}"),
        }
        assert!(matches!(u.body[1].kind, StmtKind::Return(_)));
    }

    #[test]
    fn missing_loop_annotation() {
        let e = unit("decl b : bool; while b do skip; return 0").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::Annotation);
        assert!(e.message.contains("missing loop annotation"));
    }

    #[test]
    fn annotation_on_non_loop() {
        let e = unit("decl x : int; @invariant{true} @variant{0} x := 1; return x").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::Annotation);
        assert!(e.message.contains("non-loop"));
    }

    #[test]
    fn duplicate_declaration() {
        let e = unit("decl x : int; decl x : int; return x").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::Duplicate);
        assert_eq!((e.span.line, e.span.col), (1, 20));
    }

    #[test]
    fn syntax_error_position() {
        let e = unit("decl x : int;\nx := ;\nreturn x").unwrap_err();
        assert_eq!((e.span.line, e.span.col), (2, 6));
    }

    #[test]
    fn tagged_names_rejected_in_source() {
        assert!(unit("decl x_1 : int; return x_1").is_err());
        assert!(unit("decl __a : int; return __a").is_err());
    }

    #[test]
    fn precedence() {
        let h = Header::default();
        let e = parse_expr("a && b ==> c || d", &h).unwrap();
        assert!(matches!(e, Expr::Binary(BinOp::Implies, _, _)));
        let e = parse_expr("1 + 2 * 3 = 7", &h).unwrap();
        assert!(matches!(e, Expr::Binary(BinOp::Eq, _, _)));
        let e = parse_expr("x :: y :: l", &h).unwrap();
        match e {
            Expr::Binary(BinOp::Cons, a, b) => {
                assert_eq!(*a, var("x"));
                assert!(matches!(*b, Expr::Binary(BinOp::Cons, _, _)));
            }
            _ => panic!(),
        }
    }

    #[test]
    fn constants_fold() {
        let u = unit("const eps = 1/10; const T = 2; target (2*T*eps, 0); return 0").unwrap();
        let t = u.header.target.unwrap();
        assert_eq!(t.eps.value, BigRational::new(2.into(), 5.into()));
    }

    #[test]
    fn target_statements() {
        let h = Header::default();
        let opts = ParseOptions { require_loop_annotations: false, check_names: false };
        let b = parse_block(
            "assert(b_1 <=> b_2); (x_1, x_2) := Lap<>[0.1](e_1, e_2); (y_1, y_2) := Exp◇[1](s_1, d_1, s_2, d_2); return (x_1, x_2)",
            &h,
            opts,
        )
        .unwrap();
        assert!(matches!(b[0].kind, StmtKind::Assert(_)));
        assert!(matches!(b[1].kind, StmtKind::LapInv { .. }));
        assert!(matches!(b[2].kind, StmtKind::ExpInv { .. }));
        assert!(matches!(b[3].kind, StmtKind::ReturnPair(..)));
    }

    #[test]
    fn return_must_be_last() {
        assert!(unit("decl x : int; return x; x := 1").is_err());
        assert!(unit("decl x : int; x := 1").is_err());
    }

    #[test]
    fn domains() {
        let u = unit(
            "input l : list<int> in lists({0..1}, 0..3); decl h : list<int> in hist(3, 2); decl v : int in {1, 3}; return 0",
        )
        .unwrap();
        assert_eq!(
            u.header.vars[0].domain,
            Some(Domain::Lists { elems: Box::new(Domain::Ints(0, 1)), min_len: 0, max_len: 3 })
        );
        assert_eq!(u.header.vars[1].domain, Some(Domain::Hist { bins: 3, max_total: 2 }));
        assert_eq!(u.header.vars[2].domain, Some(Domain::Values(vec![Value::Int(1), Value::Int(3)])));
    }
}
