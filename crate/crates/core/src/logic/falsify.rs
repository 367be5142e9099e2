//! Ground falsifier: enumerates assignments of an obligation's free
//! variables over finite domains, pruning with the hypotheses.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use thiserror::Error;

use super::wp::blame;
use crate::frontend::ast::*;
use crate::values::{EvalCtx, EvalError, Memory, Value};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FalsifyError {
    #[error("no finite domain for `{0}`")]
    NoDomain(String),
    #[error("while evaluating: {0}")]
    Eval(#[from] EvalError),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    Valid { assignments: u64 },
    Counterexample { memory: Memory, blame: Option<Arc<Provenance>> },
    BudgetExhausted { explored: u64 },
}

pub struct Falsifier {
    /// Evaluation context whose domains include any overrides.
    pub ctx: EvalCtx,
    /// Domains of non-program variables such as the ghosts.
    pub extra: BTreeMap<String, Arc<Vec<Value>>>,
    /// Preferred enumeration order of base variable names.
    pub order: Vec<String>,
    pub budget: u64,
}

/// A hypothesis atom `guards ⇒ x = e` usable to fix `x`.
struct EqHyp {
    guards: Vec<Expr>,
    rhs: Expr,
    ready: usize,
}

struct Plan<'a> {
    vars: Vec<String>,
    domains: Vec<Arc<Vec<Value>>>,
    checks: Vec<Vec<&'a Expr>>,
    eqs: Vec<Vec<EqHyp>>,
    conclusion: &'a Expr,
}

fn rat_gcd(a: &BigRational, b: &BigRational) -> BigRational {
    if a.is_zero() {
        return b.abs();
    }
    if b.is_zero() {
        return a.abs();
    }
    let n = (a.numer() * b.denom()).gcd(&(b.numer() * a.denom()));
    BigRational::new(n, a.denom() * b.denom())
}

/// Grid of multiples of the gcd of `steps` and `target`, from 0 to one step
/// past the target (at most `cap` points). Only zero when nothing is charged.
pub fn ghost_grid(steps: &[BigRational], target: &BigRational, cap: usize) -> Vec<Value> {
    let mut g = target.abs();
    for s in steps {
        g = rat_gcd(&g, s);
    }
    if g.is_zero() {
        return vec![Value::Real(BigRational::zero())];
    }
    let n = (target / &g).ceil().to_usize().unwrap_or(cap).min(cap.saturating_sub(2));
    (0..=n + 1).map(|k| Value::Real(&g * BigRational::from_integer(k.into()))).collect()
}

/// Mechanism eps values and accuracy deltas of a block.
pub fn mechanism_params(block: &[Stmt]) -> (Vec<BigRational>, Vec<BigRational>) {
    let mut eps = Vec::new();
    let mut del = Vec::new();
    walk_block(block, &mut |s| match &s.kind {
        StmtKind::Lap { eps: e, spec, .. } | StmtKind::LapInv { eps: e, spec, .. } => {
            eps.push(e.value.clone());
            if let LapSpec::Accuracy(d) = spec {
                del.push(d.value.clone());
            }
        }
        StmtKind::Exp { eps: e, .. }
        | StmtKind::ExpInv { eps: e, .. }
        | StmtKind::Custom { eps: e, .. }
        | StmtKind::CustomInv { eps: e, .. } => eps.push(e.value.clone()),
        _ => {}
    });
    (eps, del)
}

fn flatten_eqs(e: &Expr, guards: &mut Vec<Expr>, out: &mut Vec<(Vec<Expr>, String, Expr)>) {
    match e.strip_labels() {
        Expr::Binary(BinOp::And, a, b) => {
            flatten_eqs(a, guards, out);
            flatten_eqs(b, guards, out);
        }
        Expr::Binary(BinOp::Implies, a, b) => {
            guards.push((**a).clone());
            flatten_eqs(b, guards, out);
            guards.pop();
        }
        Expr::Binary(BinOp::Eq, a, b) => {
            if let Expr::Var(x) = a.strip_labels() {
                out.push((guards.clone(), x.clone(), (**b).clone()));
            }
            if let Expr::Var(x) = b.strip_labels() {
                out.push((guards.clone(), x.clone(), (**a).clone()));
            }
        }
        _ => {}
    }
}

impl Falsifier {
    pub fn new(ctx: EvalCtx) -> Falsifier {
        Falsifier { ctx, extra: BTreeMap::new(), order: Vec::new(), budget: 20_000_000 }
    }

    /// Falsifier for the obligations of a unit: declaration order, ghost grids
    /// derived from the mechanism parameters and the privacy target.
    pub fn for_unit(unit: &ProgramUnit, ctx: EvalCtx, product: &[Stmt]) -> Falsifier {
        let mut f = Falsifier::new(ctx);
        f.order = unit.header.vars.iter().map(|v| v.name.clone()).collect();
        let (eps, del) = mechanism_params(product);
        let (te, td) = match &unit.header.target {
            Some(t) => (t.eps.value.clone(), t.delta.value.clone()),
            None => (BigRational::zero(), BigRational::zero()),
        };
        f.extra.insert(ALPHA.into(), Arc::new(ghost_grid(&eps, &te, 400)));
        let dgrid = if del.is_empty() { vec![Value::Real(BigRational::zero())] } else { ghost_grid(&del, &td, 400) };
        f.extra.insert(DELTA.into(), Arc::new(dgrid));
        f
    }

    pub fn set_domain(&mut self, name: &str, values: Vec<Value>) {
        self.ctx.domains.insert(name.to_string(), Arc::new(values));
    }

    fn domain(&self, x: &str) -> Result<Arc<Vec<Value>>, FalsifyError> {
        if let Some(d) = self.extra.get(x) {
            return Ok(d.clone());
        }
        self.ctx.domain_of(x).cloned().ok_or_else(|| FalsifyError::NoDomain(x.to_string()))
    }

    fn rank(&self, x: &str) -> (usize, u8, String) {
        let (base, tag) = split_tag(x);
        let pos = self.order.iter().position(|o| o == base);
        match (pos, tag) {
            (Some(p), Some(t)) => (p, t, x.to_string()),
            _ if is_ghost(x) => (usize::MAX - 1, 0, x.to_string()),
            (Some(p), None) => (p, 0, x.to_string()),
            (None, _) => (usize::MAX, 0, x.to_string()),
        }
    }

    /// Checks `formula` over all assignments of its free variables.
    pub fn falsify(&self, formula: &Expr) -> Result<Outcome, FalsifyError> {
        let mut hyps = Vec::new();
        let mut concl = formula;
        while let Expr::Binary(BinOp::Implies, a, b) = concl.strip_labels() {
            hyps.extend(a.conjuncts());
            concl = b;
        }
        let mut vars: Vec<String> = formula.free_vars().into_iter().collect();
        vars.sort_by_key(|x| self.rank(x));
        let idx: BTreeMap<&str, usize> = vars.iter().enumerate().map(|(i, x)| (x.as_str(), i)).collect();
        let ready = |e: &Expr| e.free_vars().iter().map(|x| idx[x.as_str()] + 1).max().unwrap_or(0);
        let mut domains = Vec::new();
        for x in &vars {
            domains.push(self.domain(x)?);
        }
        let mut checks: Vec<Vec<&Expr>> = vec![Vec::new(); vars.len() + 1];
        for h in &hyps {
            checks[ready(h)].push(h);
        }
        let mut eqs: Vec<Vec<EqHyp>> = (0..vars.len()).map(|_| Vec::new()).collect();
        let mut flat = Vec::new();
        for h in &hyps {
            flatten_eqs(h, &mut Vec::new(), &mut flat);
        }
        for (guards, x, rhs) in flat {
            let Some(&i) = idx.get(x.as_str()) else { continue };
            let r = guards.iter().map(&ready).chain([ready(&rhs)]).max().unwrap_or(0);
            if r <= i {
                eqs[i].push(EqHyp { guards, rhs, ready: r });
            }
        }
        let plan = Plan { vars, domains, checks, eqs, conclusion: concl };
        let mut mem = Memory::new();
        let mut st = Search { explored: 0, leaves: 0 };
        for h in &plan.checks[0] {
            if !self.ctx.eval_bool(h, &mem)? {
                return Ok(Outcome::Valid { assignments: 0 });
            }
        }
        match self.dfs(&plan, 0, &mut mem, &mut st)? {
            Some(o) => Ok(o),
            None => Ok(Outcome::Valid { assignments: st.leaves }),
        }
    }

    fn forced(&self, plan: &Plan, i: usize, mem: &Memory) -> Result<Option<Value>, FalsifyError> {
        for eq in &plan.eqs[i] {
            debug_assert!(eq.ready <= i);
            let mut ok = true;
            for g in &eq.guards {
                if !self.ctx.eval_bool(g, mem)? {
                    ok = false;
                    break;
                }
            }
            if ok {
                return Ok(Some(self.ctx.eval(&eq.rhs, mem)?));
            }
        }
        Ok(None)
    }

    fn dfs(&self, plan: &Plan, i: usize, mem: &mut Memory, st: &mut Search) -> Result<Option<Outcome>, FalsifyError> {
        st.explored += 1;
        if st.explored > self.budget {
            return Ok(Some(Outcome::BudgetExhausted { explored: st.explored }));
        }
        if i == plan.vars.len() {
            st.leaves += 1;
            if self.ctx.eval_bool(plan.conclusion, mem)? {
                return Ok(None);
            }
            let ctx = &self.ctx;
            let m = mem.clone();
            let who = blame(plan.conclusion, ctx, &m);
            return Ok(Some(Outcome::Counterexample { memory: m, blame: who }));
        }
        let x = plan.vars[i].as_str();
        let dom = &plan.domains[i];
        let forced = self.forced(plan, i, mem)?;
        let cands: Vec<&Value> = match &forced {
            Some(v) => dom.iter().filter(|d| *d == v || (d.is_numeric() && d.num_eq(v))).take(1).collect(),
            None => dom.iter().collect(),
        };
        'next: for v in cands {
            mem.insert(x, v.clone());
            for h in &plan.checks[i + 1] {
                if !self.ctx.eval_bool(h, mem)? {
                    continue 'next;
                }
            }
            if let Some(o) = self.dfs(plan, i + 1, mem, st)? {
                mem.remove(x);
                return Ok(Some(o));
            }
        }
        mem.remove(x);
        Ok(None)
    }
}

struct Search {
    explored: u64,
    leaves: u64,
}

/// The free variables that would be enumerated for `formula`.
pub fn enumerated_vars(formula: &Expr) -> BTreeSet<String> {
    formula.free_vars()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{parse_expr, parse_unit};

    fn fals(src: &str, f: &str) -> Outcome {
        let u = parse_unit(src).unwrap();
        let ctx = EvalCtx::from_header(&u.header).unwrap();
        let fz = Falsifier::for_unit(&u, ctx, &[]);
        fz.falsify(&parse_expr(f, &u.header).unwrap()).unwrap()
    }

    #[test]
    fn valid_on_domain() {
        let o = fals("decl x : int in {0..5}; return x", "x >= 0 ==> x + 1 > 0");
        assert_eq!(o, Outcome::Valid { assignments: 6 });
    }

    #[test]
    fn counterexample_found() {
        let o = fals("decl x : int in {0..5}; return x", "x < 5");
        let Outcome::Counterexample { memory, .. } = o else { panic!() };
        assert_eq!(memory.get("x"), Some(&Value::int(5)));
    }

    #[test]
    fn equalities_propagate() {
        let o = fals("decl x : int in {0..5}; return x", "x_2 = x_1 ==> x_1 = x_2");
        assert_eq!(o, Outcome::Valid { assignments: 6 });
    }

    #[test]
    fn grid_of_multiples() {
        let g = ghost_grid(&[BigRational::new(1.into(), 2.into())], &BigRational::from_integer(1.into()), 100);
        assert_eq!(g, vec![Value::real(0, 1), Value::real(1, 2), Value::real(1, 1), Value::real(3, 2)]);
        assert_eq!(ghost_grid(&[], &BigRational::zero(), 10), vec![Value::real(0, 1)]);
    }

    #[test]
    fn blame_points_to_label() {
        let u = parse_unit("decl x : int in {0..2}; return x").unwrap();
        let ctx = EvalCtx::from_header(&u.header).unwrap();
        let fz = Falsifier::for_unit(&u, ctx, &[]);
        let f = label(Provenance::new("goal", Default::default(), "x < 2"), parse_expr("x < 2", &u.header).unwrap());
        let Outcome::Counterexample { blame, .. } = fz.falsify(&tt().and(f)).unwrap() else { panic!() };
        assert_eq!(blame.unwrap().rule, "goal");
    }
}
