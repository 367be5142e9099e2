//! Exact output distributions of source programs.

use std::cell::{Cell, RefCell};
use std::collections::{BTreeMap, BTreeSet};

use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::frontend::ast::*;
use crate::values::eval::to_f64;
use crate::values::{Dist, DistError, EvalCtx, EvalError, Memory, Value};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InterpError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error("Laplace window {window} too small for tolerance {tau}; minimal admissible window is {min}")]
    WindowTooSmall { window: i64, min: i64, tau: f64 },
    #[error("nontermination: iteration cap of {0} support-point steps exceeded")]
    IterationCap(u64),
    #[error("exponential mechanism over an empty range")]
    EmptyRange,
    #[error("mechanism `{0}` has no source semantics")]
    NoSemantics(String),
    #[error("value {value} of `{var}` is outside its declared domain")]
    Domain { var: String, value: String },
    #[error("program has no return statement")]
    NoReturn,
    #[error("invalid mechanism parameter: {0}")]
    BadParam(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct InterpConfig {
    /// Truncation tolerance for the Laplace tail.
    pub tau: f64,
    /// Fixed Laplace window instead of the one derived from `tau`.
    pub window: Option<i64>,
    /// Maximum number of support-point loop steps.
    pub iter_cap: u64,
}

impl Default for InterpConfig {
    fn default() -> Self {
        InterpConfig { tau: 1e-9, window: None, iter_cap: 1_000_000 }
    }
}

impl InterpConfig {
    pub fn window_for(&self, eps: f64) -> i64 {
        self.window.unwrap_or_else(|| min_window(eps, self.tau))
    }
}

/// Smallest window W with 2 exp(-W eps / 2) < tau.
pub fn min_window(eps: f64, tau: f64) -> i64 {
    (2.0 * (2.0 / tau).ln() / eps).floor() as i64 + 1
}

/// Analytic bound on the mass the untruncated discrete Laplace puts outside ±T.
pub fn tail_bound(eps: f64, t: i64) -> f64 {
    2.0 * (-(t as f64) * eps / 2.0).exp()
}

/// Normalised weights of the truncated discrete Laplace at offsets -window..=window.
pub fn lap_weights(eps: f64, window: i64) -> Vec<f64> {
    let w: Vec<f64> = (-window..=window).map(|r| (-eps * (r.abs() as f64) / 2.0).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// Truncated discrete Laplace centred at `center`: support center±window, mass
/// proportional to exp(-eps|r - center|/2).
pub fn lap_dist(eps: f64, center: i64, window: i64, tau: f64) -> Result<Dist<i64>, InterpError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(InterpError::BadParam(format!("Laplace eps {eps}")));
    }
    let min = min_window(eps, tau);
    if window < min {
        return Err(InterpError::WindowTooSmall { window, min, tau });
    }
    let w = lap_weights(eps, window);
    Ok(Dist::from_weighted((-window..=window).zip(w).map(|(r, p)| (center + r, p))))
}

/// Exponential mechanism: mass at r proportional to exp(eps score(input, r) / 2).
pub fn exp_dist(
    ctx: &EvalCtx,
    eps: f64,
    score: &Value,
    input: &Value,
    range: &[Value],
) -> Result<Dist<Value>, InterpError> {
    if range.is_empty() {
        return Err(InterpError::EmptyRange);
    }
    let mut scores = Vec::with_capacity(range.len());
    for r in range {
        let s = ctx.apply_score(score, input, r)?;
        scores.push(s.to_f64().unwrap_or(f64::NAN));
    }
    // Shifting by the maximum keeps the exponentials finite.
    let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights = range.iter().cloned().zip(scores.iter().map(|s| (eps * (s - top) / 2.0).exp()));
    Ok(Dist::normalize(weights)?)
}

/// Variables read before being written by a block, given the variables live after it.
pub fn live_before(block: &[Stmt], after: &BTreeSet<String>) -> BTreeSet<String> {
    let mut live = after.clone();
    for s in block.iter().rev() {
        live = live_stmt(s, &live);
    }
    live
}

fn add_fv(set: &mut BTreeSet<String>, e: &Expr) {
    set.extend(e.free_vars());
}

fn live_stmt(s: &Stmt, after: &BTreeSet<String>) -> BTreeSet<String> {
    let mut live = after.clone();
    match &s.kind {
        StmtKind::Skip | StmtKind::Cut(_) => {}
        StmtKind::Assign(x, e) => {
            live.remove(x);
            add_fv(&mut live, e);
        }
        StmtKind::Lap { var, arg, .. } => {
            live.remove(var);
            add_fv(&mut live, arg);
        }
        StmtKind::Exp { var, score, input, .. } => {
            live.remove(var);
            add_fv(&mut live, score);
            add_fv(&mut live, input);
        }
        StmtKind::Custom { var, args, .. } => {
            live.remove(var);
            args.iter().for_each(|a| add_fv(&mut live, a));
        }
        StmtKind::If(g, a, b) => {
            live = live_before(a, after);
            live.extend(live_before(b, after));
            add_fv(&mut live, g);
        }
        StmtKind::While { guard, body, .. } => return loop_live(guard, body, after),
        StmtKind::Return(e) => {
            live.remove(RET);
            add_fv(&mut live, e);
        }
        // Target-only statements never reach the source interpreter.
        _ => {}
    }
    live
}

/// Live set at a loop head: least fixed point of after ∪ fv(guard) ∪ live_before(body).
fn loop_live(guard: &Expr, body: &[Stmt], after: &BTreeSet<String>) -> BTreeSet<String> {
    let mut head = after.clone();
    add_fv(&mut head, guard);
    loop {
        let mut next = head.clone();
        next.extend(live_before(body, &head));
        if next == head {
            return head;
        }
        head = next;
    }
}

/// Exact interpreter for source programs over one evaluation context.
pub struct Interp<'a> {
    pub ctx: &'a EvalCtx,
    pub cfg: InterpConfig,
    types: BTreeMap<String, Type>,
    steps: Cell<u64>,
    lap_cache: RefCell<FxHashMap<u64, (i64, Vec<f64>)>>,
}

impl<'a> Interp<'a> {
    pub fn new(ctx: &'a EvalCtx, header: &Header, cfg: InterpConfig) -> Interp<'a> {
        Interp {
            ctx,
            cfg,
            types: header.vars.iter().map(|v| (v.name.clone(), v.ty.clone())).collect(),
            steps: Cell::new(0),
            lap_cache: RefCell::new(FxHashMap::default()),
        }
    }

    /// Memory assigning the given inputs and a default value to every other
    /// declared variable. Inputs outside their declared domains are rejected.
    pub fn initial_memory(&self, header: &Header, inputs: &Memory) -> Result<Memory, InterpError> {
        let mut m = Memory::new();
        for v in &header.vars {
            let value = match inputs.get(&v.name) {
                Some(x) => {
                    if let Some(d) = &v.domain {
                        if !d.contains(x) {
                            return Err(InterpError::Domain { var: v.name.clone(), value: x.to_string() });
                        }
                    }
                    self.coerce(&v.name, x.clone())
                }
                None => default_value(&v.ty),
            };
            m.insert(&v.name, value);
        }
        Ok(m)
    }

    fn coerce(&self, x: &str, v: Value) -> Value {
        match (self.types.get(x), v) {
            (Some(Type::Real), Value::Int(i)) => Value::Real(BigRational::from_integer(i.into())),
            (_, v) => v,
        }
    }

    /// Full-memory semantics of a block.
    pub fn interpret(&self, block: &[Stmt], m: &Memory) -> Result<Dist<Memory>, InterpError> {
        self.steps.set(0);
        self.exec_block(block, Dist::dirac(m.clone()), None)
    }

    /// Distribution of the returned value. Dead variables are erased along the
    /// way, which merges memories without changing the result.
    pub fn output_dist(&self, block: &[Stmt], m: &Memory) -> Result<Dist<Value>, InterpError> {
        if !matches!(block.last().map(|s| &s.kind), Some(StmtKind::Return(_))) {
            return Err(InterpError::NoReturn);
        }
        self.steps.set(0);
        let out: BTreeSet<String> = [RET.to_string()].into();
        let mut start = m.clone();
        let live = live_before(block, &out);
        start.retain(|x| live.contains(x));
        let d = self.exec_block(block, Dist::dirac(start), Some(&out))?;
        Ok(d.map(|mem| mem.get(RET).cloned().unwrap_or(Value::Int(0))))
    }

    fn exec_block(
        &self,
        block: &[Stmt],
        mut d: Dist<Memory>,
        live_out: Option<&BTreeSet<String>>,
    ) -> Result<Dist<Memory>, InterpError> {
        let lives: Option<Vec<BTreeSet<String>>> = live_out.map(|out| {
            let mut v = vec![out.clone(); block.len()];
            for i in (0..block.len().saturating_sub(1)).rev() {
                v[i] = live_stmt(&block[i + 1], &v[i + 1]);
            }
            v
        });
        let mut i = 0;
        while i < block.len() {
            // Runs of assignments are applied per memory with one merge at the end.
            let run = block[i..].iter().take_while(|s| matches!(s.kind, StmtKind::Assign(..))).count();
            if run > 1 {
                let keep = lives.as_ref().map(|l| &l[i + run - 1]);
                d = self.assign_run(&block[i..i + run], d, keep)?;
                i += run;
                continue;
            }
            let after = lives.as_ref().map(|l| &l[i]);
            d = self.exec_stmt(&block[i], d, after)?;
            if let Some(keep) = after {
                d = erase(d, keep);
            }
            i += 1;
        }
        Ok(d)
    }

    fn assign_run(
        &self,
        run: &[Stmt],
        d: Dist<Memory>,
        keep: Option<&BTreeSet<String>>,
    ) -> Result<Dist<Memory>, InterpError> {
        let mut out = Vec::with_capacity(d.len());
        for (mut m, p) in d.into_points() {
            for s in run {
                if let StmtKind::Assign(x, e) = &s.kind {
                    let v = self.ctx.eval(e, &m)?;
                    m.insert(x, self.coerce(x, v));
                }
            }
            if let Some(k) = keep {
                m.retain(|x| k.contains(x));
            }
            out.push((m, p));
        }
        Ok(Dist::from_weighted(out))
    }

    fn lap_weights(&self, eps: f64) -> Result<(i64, Vec<f64>), InterpError> {
        let key = eps.to_bits();
        if let Some(w) = self.lap_cache.borrow().get(&key) {
            return Ok(w.clone());
        }
        let window = self.cfg.window_for(eps);
        let min = min_window(eps, self.cfg.tau);
        if window < min {
            return Err(InterpError::WindowTooSmall { window, min, tau: self.cfg.tau });
        }
        let w = (window, lap_weights(eps, window));
        self.lap_cache.borrow_mut().insert(key, w.clone());
        Ok(w)
    }

    fn param(p: &Param) -> Result<f64, InterpError> {
        let e = p.value.to_f64().unwrap_or(f64::NAN);
        if e > 0.0 && e.is_finite() {
            Ok(e)
        } else {
            Err(InterpError::BadParam(format!("mechanism eps {e}")))
        }
    }

    fn exec_stmt(
        &self,
        s: &Stmt,
        d: Dist<Memory>,
        after: Option<&BTreeSet<String>>,
    ) -> Result<Dist<Memory>, InterpError> {
        let ctx = self.ctx;
        match &s.kind {
            StmtKind::Skip | StmtKind::Cut(_) => Ok(d),
            StmtKind::Assign(x, e) => d.try_map(|m| {
                let v = ctx.eval(e, m)?;
                Ok::<_, InterpError>(m.set(x, self.coerce(x, v)))
            }),
            StmtKind::Return(e) => d.try_map(|m| Ok::<_, InterpError>(m.set(RET, ctx.eval(e, m)?))),
            StmtKind::Lap { var, eps, arg, .. } => {
                let (window, w) = self.lap_weights(Self::param(eps)?)?;
                d.try_bind(|m| {
                    let c = ctx.eval_int(arg, m)?;
                    let mut base = m.clone();
                    if let Some(k) = after {
                        base.retain(|x| k.contains(x));
                    }
                    let pts = (-window..=window).zip(w.iter()).map(|(r, p)| {
                        (base.set(var, self.coerce(var, Value::Int(c + r))), *p)
                    });
                    Ok::<_, InterpError>(Dist::from_weighted(pts))
                })
            }
            StmtKind::Exp { var, eps, score, input } => {
                let e = Self::param(eps)?;
                d.try_bind(|m| {
                    let sv = ctx.eval(score, m)?;
                    let iv = ctx.eval(input, m)?;
                    let out = exp_dist(ctx, e, &sv, &iv, &ctx.range)?;
                    Ok::<_, InterpError>(out.map(|r| m.set(var, self.coerce(var, r.clone()))))
                })
            }
            StmtKind::Custom { mech, .. } => Err(InterpError::NoSemantics(mech.clone())),
            StmtKind::If(g, a, b) => {
                let (yes, no) = d.try_partition(|m| ctx.eval_bool(g, m))?;
                let ya = self.exec_block(a, yes, after)?;
                let nb = self.exec_block(b, no, after)?;
                Ok(ya.add(&nb))
            }
            StmtKind::While { guard, body, .. } => {
                let head = after.map(|a| loop_live(guard, body, a));
                let mut exit = Dist::empty();
                let mut cur = d;
                loop {
                    let (go, stop) = cur.try_partition(|m| ctx.eval_bool(guard, m))?;
                    exit = exit.add(&stop);
                    if go.is_empty() {
                        return Ok(exit);
                    }
                    let n = self.steps.get() + go.len() as u64;
                    self.steps.set(n);
                    if n > self.cfg.iter_cap {
                        return Err(InterpError::IterationCap(self.cfg.iter_cap));
                    }
                    cur = self.exec_block(body, go, head.as_ref())?;
                }
            }
            StmtKind::Assert(_)
            | StmtKind::LapInv { .. }
            | StmtKind::ExpInv { .. }
            | StmtKind::CustomInv { .. }
            | StmtKind::ReturnPair(..) => Err(InterpError::NoSemantics("target statement".into())),
        }
    }
}

fn erase(d: Dist<Memory>, keep: &BTreeSet<String>) -> Dist<Memory> {
    let needs = d.iter().any(|(m, _)| m.names().any(|x| !keep.contains(x)));
    if !needs {
        return d;
    }
    Dist::from_weighted(d.into_points().into_iter().map(|(mut m, p)| {
        m.retain(|x| keep.contains(x));
        (m, p)
    }))
}

pub fn default_value(t: &Type) -> Value {
    match t {
        Type::Int => Value::Int(0),
        Type::Real => Value::Real(BigRational::zero()),
        Type::Bool => Value::Bool(false),
        Type::List(_) => Value::empty_list(),
        Type::Score => Value::Score(std::sync::Arc::new(crate::values::ScoreFn::Table(Default::default()))),
    }
}

/// Numeric view of a value for reporting.
pub fn value_f64(v: &Value) -> Option<f64> {
    to_f64(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_unit;

    #[test]
    fn lap_symmetry_and_ratio() {
        let d = lap_dist(1.0, 0, 43, 1e-9).unwrap();
        for k in 0..=43 {
            assert!((d.mass(&k) - d.mass(&-k)).abs() < 1e-15);
        }
        assert!((d.mass(&0) / d.mass(&1) - 0.5f64.exp()).abs() < 1e-12);
        assert!((d.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lap_window_too_small_names_minimum() {
        let err = lap_dist(1.0, 0, 10, 1e-9).unwrap_err();
        assert_eq!(err, InterpError::WindowTooSmall { window: 10, min: 43, tau: 1e-9 });
        assert!(err.to_string().contains("43"));
    }

    #[test]
    fn lap_tail_beyond_ten() {
        let d = lap_dist(1.0, 0, 40, 1e-8).unwrap();
        let tail: f64 = d.iter().filter(|(r, _)| r.abs() > 10).map(|(_, p)| p).sum();
        // Independent geometric-series value of the truncated tail.
        let q = (-0.5f64).exp();
        let z = 1.0 + 2.0 * (1..=40).map(|k| q.powi(k)).sum::<f64>();
        let expected = 2.0 * (11..=40).map(|k| q.powi(k)).sum::<f64>() / z;
        assert!((tail - expected).abs() < 1e-15);
        assert!(tail <= 2.0 * (-5.0f64).exp());
    }

    #[test]
    fn exp_dist_examples() {
        let ctx = EvalCtx::default();
        let range = vec![Value::int(0), Value::int(1)];
        let table = |a: i64, b: i64| {
            let mut t = std::collections::BTreeMap::new();
            t.insert((Value::int(0), Value::int(0)), BigRational::from_integer(a.into()));
            t.insert((Value::int(0), Value::int(1)), BigRational::from_integer(b.into()));
            Value::Score(std::sync::Arc::new(crate::values::ScoreFn::Table(t)))
        };
        let u = exp_dist(&ctx, 1.0, &table(3, 3), &Value::int(0), &range).unwrap();
        assert!((u.mass(&Value::int(0)) - 0.5).abs() < 1e-12);
        // Scores 0 and 2/eps with eps = 1: ratio e.
        let r = exp_dist(&ctx, 1.0, &table(0, 2), &Value::int(0), &range).unwrap();
        assert!((r.mass(&Value::int(1)) / r.mass(&Value::int(0)) - 1f64.exp()).abs() < 1e-12);
        let single = exp_dist(&ctx, 1.0, &table(0, 2), &Value::int(0), &range[..1]).unwrap();
        assert_eq!(single.len(), 1);
        assert!(matches!(exp_dist(&ctx, 1.0, &table(0, 0), &Value::int(0), &[]), Err(InterpError::EmptyRange)));
    }

    fn run(src: &str, inputs: &[(&str, Value)]) -> (Dist<Memory>, Dist<Value>) {
        let u = parse_unit(src).unwrap();
        let ctx = EvalCtx::from_header(&u.header).unwrap();
        let it = Interp::new(&ctx, &u.header, InterpConfig::default());
        let m = it.initial_memory(&u.header, &Memory::from_pairs(inputs.iter().cloned())).unwrap();
        (it.interpret(&u.body, &m).unwrap(), it.output_dist(&u.body, &m).unwrap())
    }

    #[test]
    fn skip_is_dirac() {
        let (d, _) = run("decl x : int; skip; return x", &[]);
        assert_eq!(d.len(), 1);
    }

    #[test]
    fn laplace_output_matches_lap_dist() {
        let (_, out) = run("decl x : int; x := Lap[1](0); return x", &[]);
        let l = lap_dist(1.0, 0, min_window(1.0, 1e-9), 1e-9).unwrap();
        assert_eq!(out.len(), l.len());
        for (r, p) in l.iter() {
            assert_eq!(out.mass(&Value::int(*r)), p);
        }
    }

    #[test]
    fn two_step_counting_loop_matches_hand_expansion() {
        let src = "input l : list<int> in lists({0..1}, 0..2); decl s : int; decl x : int;
            @invariant{true} @variant{length(l_1)}
            while 0 < length(l) do { x := Lap[2](hd l); s := s + x; l := tl l };
            return s";
        let (_, out) = run(src, &[("l", Value::int_list(&[1, 0]))]);
        let w = min_window(2.0, 1e-9);
        let a = lap_dist(2.0, 1, w, 1e-9).unwrap();
        let b = lap_dist(2.0, 0, w, 1e-9).unwrap();
        let mut hand: BTreeMap<i64, f64> = BTreeMap::new();
        for (x, p) in a.iter() {
            for (y, q) in b.iter() {
                *hand.entry(x + y).or_default() += p * q;
            }
        }
        assert_eq!(out.len(), hand.len());
        for (s, p) in hand {
            assert!((out.mass(&Value::int(s)) - p).abs() < 1e-15);
        }
        assert!((out.total() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn iteration_cap_reports_nontermination() {
        let u = parse_unit("decl x : int; @invariant{true} @variant{1} while true do x := x + 1; return x").unwrap();
        let ctx = EvalCtx::from_header(&u.header).unwrap();
        let cfg = InterpConfig { iter_cap: 100, ..Default::default() };
        let it = Interp::new(&ctx, &u.header, cfg);
        let m = it.initial_memory(&u.header, &Memory::new()).unwrap();
        assert_eq!(it.output_dist(&u.body, &m), Err(InterpError::IterationCap(100)));
    }

    #[test]
    fn input_outside_domain_rejected() {
        let u = parse_unit("input a : int in {0..4}; return a").unwrap();
        let ctx = EvalCtx::from_header(&u.header).unwrap();
        let it = Interp::new(&ctx, &u.header, InterpConfig::default());
        let bad = Memory::from_pairs([("a", Value::int(9))]);
        assert!(matches!(it.initial_memory(&u.header, &bad), Err(InterpError::Domain { .. })));
    }
}
