//! Semantic privacy checks on exact output distributions.

use std::collections::BTreeMap;
use std::fmt;
use std::hash::Hash;
use std::rc::Rc;
use std::str::FromStr;

use serde_json::json;
use thiserror::Error;

use crate::frontend::ast::*;
use crate::source_interp::{lap_weights, tail_bound, Interp, InterpConfig, InterpError};
use crate::target_interp::product_memory;
use crate::values::builtins::one_more_edge;
use crate::values::domain::{add_remove_neighbors, one_entry_pm1};
use crate::values::{Dist, EvalCtx, EvalError, Memory, Value};

/// Inputs beyond this many memories are not enumerated.
pub const MAX_MEMORIES: usize = 20_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DpError {
    #[error(transparent)]
    Interp(#[from] InterpError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("input `{0}` has no finite domain")]
    NoDomain(String),
    #[error("enumeration too large: {0} input memories (limit {MAX_MEMORIES})")]
    TooLarge(usize),
    #[error("unknown adjacency `{0}` (expected one-entry-pm1, add-remove, one-edge or custom)")]
    UnknownAdjacency(String),
}

/// Δ_ε(μ1, μ2): the largest μ1(S) - e^ε μ2(S) over output sets S, realised
/// pointwise.
pub fn eps_distance<K: Clone + Ord + Hash>(mu1: &Dist<K>, mu2: &Dist<K>, eps: f64) -> f64 {
    let scale = eps.exp();
    let mut rest = mu2.iter().peekable();
    let mut total = 0.0;
    for (k, p) in mu1.iter() {
        while rest.next_if(|(k2, _)| *k2 < k).is_some() {}
        let q = rest.next_if(|(k2, _)| *k2 == k).map_or(0.0, |(_, q)| q);
        total += (p - scale * q).max(0.0);
    }
    total
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Adjacency {
    /// One input differs, by ±1 in a single list entry (or as an integer).
    OneEntryPm1,
    /// One input differs by adding or removing a record.
    AddRemove,
    /// One edge-list input gains or loses an edge.
    OneEdge,
    /// Every pair of distinct input memories; only the precondition filters.
    Custom,
}

impl FromStr for Adjacency {
    type Err = DpError;
    fn from_str(s: &str) -> Result<Adjacency, DpError> {
        match s {
            "one-entry-pm1" | "one-entry-±1" => Ok(Adjacency::OneEntryPm1),
            "add-remove" | "add/remove-record" => Ok(Adjacency::AddRemove),
            "one-edge" => Ok(Adjacency::OneEdge),
            "custom" => Ok(Adjacency::Custom),
            other => Err(DpError::UnknownAdjacency(other.to_string())),
        }
    }
}

impl fmt::Display for Adjacency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Adjacency::OneEntryPm1 => "one-entry-pm1",
            Adjacency::AddRemove => "add-remove",
            Adjacency::OneEdge => "one-edge",
            Adjacency::Custom => "custom",
        })
    }
}

fn differs_by(kind: Adjacency, d: &Domain, a: &Value, b: &Value) -> bool {
    match kind {
        Adjacency::OneEntryPm1 => match (a.as_int(), b.as_int()) {
            (Some(x), Some(y)) => (x - y).abs() == 1,
            _ => one_entry_pm1(a, b),
        },
        Adjacency::AddRemove => add_remove_neighbors(d, a, b),
        Adjacency::OneEdge => {
            let ints = |v: &Value| -> Option<Vec<i64>> { v.as_list()?.iter().map(Value::as_int).collect() };
            match (ints(a), ints(b)) {
                (Some(x), Some(y)) => one_more_edge(&x, &y) || one_more_edge(&y, &x),
                _ => false,
            }
        }
        Adjacency::Custom => true,
    }
}

/// All assignments to the declared inputs, in canonical order.
pub fn input_memories(h: &Header) -> Result<Vec<Memory>, DpError> {
    let mut out = vec![Memory::new()];
    for v in h.inputs() {
        let d = v.domain.as_ref().ok_or_else(|| DpError::NoDomain(v.name.clone()))?;
        let vals = d.enumerate();
        if out.len().saturating_mul(vals.len()) > MAX_MEMORIES {
            return Err(DpError::TooLarge(out.len().saturating_mul(vals.len())));
        }
        out = out.iter().flat_map(|m| vals.iter().map(move |x| m.set(&v.name, x.clone()))).collect();
    }
    Ok(out)
}

/// Ordered pairs of input memories related by `kind` and satisfying the
/// precondition of the unit.
pub fn adjacency_pairs(unit: &ProgramUnit, ctx: &EvalCtx, kind: Adjacency) -> Result<Vec<(Memory, Memory)>, DpError> {
    let mems = input_memories(&unit.header)?;
    let pre = unit.precondition();
    let inputs: Vec<&VarDecl> = unit.header.inputs().collect();
    let mut out = Vec::new();
    for a in &mems {
        for b in &mems {
            if a == b {
                continue;
            }
            if kind != Adjacency::Custom {
                let diff: Vec<&&VarDecl> = inputs.iter().filter(|v| a.get(&v.name) != b.get(&v.name)).collect();
                let [v] = diff.as_slice() else { continue };
                let d = v.domain.as_ref().expect("enumerated inputs have domains");
                if !differs_by(kind, d, a.get(&v.name).unwrap(), b.get(&v.name).unwrap()) {
                    continue;
                }
            }
            if ctx.eval_bool(&pre, &product_memory(a, b))? {
                out.push((a.clone(), b.clone()));
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DpReport {
    pub adjacency: String,
    pub eps: f64,
    pub delta: f64,
    pub tol: f64,
    pub pairs_checked: usize,
    pub max_distance: f64,
    pub witness_pair: Option<(Memory, Memory)>,
    pub pass: bool,
    pub warnings: Vec<String>,
}

impl DpReport {
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "adjacency": self.adjacency,
            "eps": self.eps,
            "delta": self.delta,
            "tol": self.tol,
            "pairs_checked": self.pairs_checked,
            "max_distance": self.max_distance,
            "witness_pair": self.witness_pair.as_ref().map(|(a, b)| json!([a.to_json(), b.to_json()])),
            "pass": self.pass,
            "warnings": self.warnings,
        })
    }
}

/// Default tolerance: ten times the Laplace truncation tolerance.
pub fn default_tol(cfg: &InterpConfig) -> f64 {
    10.0 * cfg.tau
}

/// Checks Δ_ε(⟦c⟧m1, ⟦c⟧m2) ≤ δ + tol on every pair, on the returned value.
pub fn dp_check(
    unit: &ProgramUnit,
    ctx: &EvalCtx,
    cfg: InterpConfig,
    pairs: &[(Memory, Memory)],
    eps: f64,
    delta: f64,
    tol: f64,
) -> Result<DpReport, DpError> {
    let interp = Interp::new(ctx, &unit.header, cfg);
    let mut cache: BTreeMap<Memory, Rc<Dist<Value>>> = BTreeMap::new();
    let mut dist = |m: &Memory| -> Result<Rc<Dist<Value>>, DpError> {
        if let Some(d) = cache.get(m) {
            return Ok(d.clone());
        }
        let init = interp.initial_memory(&unit.header, m)?;
        let d = Rc::new(interp.output_dist(&unit.body, &init)?);
        cache.insert(m.clone(), d.clone());
        Ok(d)
    };
    let mut max_distance = 0.0;
    let mut witness = None;
    for (a, b) in pairs {
        let da = dist(a)?;
        let db = dist(b)?;
        let d = eps_distance(&da, &db, eps);
        if witness.is_none() || d > max_distance {
            max_distance = d;
            witness = Some((a.clone(), b.clone()));
        }
    }
    let mut warnings = Vec::new();
    if pairs.is_empty() {
        warnings.push("no adjacent pairs: the check is vacuous".to_string());
    }
    Ok(DpReport {
        adjacency: String::new(),
        eps,
        delta,
        tol,
        pairs_checked: pairs.len(),
        max_distance,
        witness_pair: witness,
        pass: max_distance <= delta + tol,
        warnings,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TailReport {
    pub eps: f64,
    pub t: i64,
    pub window: i64,
    pub measured: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Mass the truncated Laplace centred at 0 puts outside [-t, t], against the
/// analytic bound 2 exp(-t ε / 2).
pub fn tail_check(eps: f64, t: i64, window: i64) -> TailReport {
    let w = lap_weights(eps, window);
    let measured: f64 = (-window..=window).zip(&w).filter(|(r, _)| r.abs() > t).map(|(_, p)| p).sum();
    let bound = tail_bound(eps, t);
    TailReport { eps, t, window, measured, bound, pass: measured <= bound }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DtiCheck {
    pub builtin: String,
    pub pairs: usize,
    pub violations: Vec<(Value, Value)>,
}

/// For every distance-to-instability builtin declared by the header, checks
/// q(d1) = q(d2) or DTI(d1) = DTI(d2) = 0 on all adjacent pairs of its universe.
pub fn dti_spec_check(h: &Header, ctx: &EvalCtx) -> Result<Vec<DtiCheck>, DpError> {
    let mut out = Vec::new();
    for b in h.builtins.iter().filter(|b| b.factory == "dti") {
        let [query, var] = b.args.as_slice() else { continue };
        let decl = h.var(var).ok_or_else(|| DpError::NoDomain(var.clone()))?;
        let d = decl.domain.as_ref().ok_or_else(|| DpError::NoDomain(var.clone()))?;
        let universe = d.enumerate();
        let m = Memory::new();
        let mut check = DtiCheck { builtin: b.name.clone(), pairs: 0, violations: Vec::new() };
        for x in &universe {
            for y in &universe {
                if !add_remove_neighbors(d, x, y) {
                    continue;
                }
                check.pairs += 1;
                let qx = ctx.call(query, vec![x.clone()], &m)?;
                let qy = ctx.call(query, vec![y.clone()], &m)?;
                let dx = ctx.call(&b.name, vec![x.clone()], &m)?;
                let dy = ctx.call(&b.name, vec![y.clone()], &m)?;
                let zero = Value::Int(0);
                if !(qx.num_eq(&qy) || (dx == zero && dy == zero)) {
                    check.violations.push((x.clone(), y.clone()));
                }
            }
        }
        out.push(check);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_unit;

    fn d(items: &[(&str, f64)]) -> Dist<String> {
        Dist::from_weighted(items.iter().map(|(k, p)| (k.to_string(), *p)))
    }

    #[test]
    fn distance_examples() {
        let mu = d(&[("a", 0.5), ("b", 0.5)]);
        assert_eq!(eps_distance(&mu, &mu, 0.0), 0.0);
        let nu = d(&[("a", 0.25), ("b", 0.75)]);
        assert!((eps_distance(&mu, &nu, 0.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn pm1_pairs_on_short_lists() {
        let u = parse_unit("input l : list<int> in lists({0..1}, 2..2); return 0").unwrap();
        let ctx = EvalCtx::from_header(&u.header).unwrap();
        let pairs = adjacency_pairs(&u, &ctx, Adjacency::OneEntryPm1).unwrap();
        let m = |xs: &[i64]| Memory::from_pairs([("l", Value::int_list(xs))]);
        assert!(pairs.contains(&(m(&[0, 0]), m(&[1, 0]))));
        assert!(!pairs.contains(&(m(&[0, 0]), m(&[1, 1]))));
        // 4 lists, each with 2 neighbours
        assert_eq!(pairs.len(), 8);
    }

    #[test]
    fn hist_add_remove() {
        let u = parse_unit("input h : list<int> in hist(2, 3); return 0").unwrap();
        let ctx = EvalCtx::from_header(&u.header).unwrap();
        let pairs = adjacency_pairs(&u, &ctx, Adjacency::AddRemove).unwrap();
        let m = |xs: &[i64]| Memory::from_pairs([("h", Value::int_list(xs))]);
        assert!(pairs.contains(&(m(&[1, 1]), m(&[2, 1]))));
        assert!(!pairs.contains(&(m(&[0, 0]), m(&[1, 1]))));
    }

    #[test]
    fn custom_is_precondition_filter() {
        let u = parse_unit("input a : int in {0..3}; pre { abs(a_1 - a_2) <= 1 }; return a").unwrap();
        let ctx = EvalCtx::from_header(&u.header).unwrap();
        let pairs = adjacency_pairs(&u, &ctx, Adjacency::Custom).unwrap();
        let mut expected = Vec::new();
        for i in 0..=3i64 {
            for j in 0..=3i64 {
                if i != j && (i - j).abs() <= 1 {
                    expected.push((Memory::from_pairs([("a", Value::Int(i))]), Memory::from_pairs([("a", Value::Int(j))])));
                }
            }
        }
        assert_eq!(pairs, expected);
    }

    #[test]
    fn tail_examples() {
        let r = tail_check(1.0, 10, 43);
        assert!(r.pass && r.measured <= 2.0 * (-5.0f64).exp());
        assert_eq!(tail_check(1.0, 43, 43).measured, 0.0);
        assert!(tail_check(2.0, 5, 22).pass);
    }
}
