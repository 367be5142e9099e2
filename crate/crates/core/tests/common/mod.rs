#![allow(dead_code)]

use std::collections::BTreeMap;

use num_rational::BigRational;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dpsp::corpus::Program;
use dpsp::dpcheck::{adjacency_pairs, default_tol, dp_check, eps_distance, Adjacency, DpReport};
use dpsp::frontend::ast::ALPHA;
use dpsp::frontend::{parse_expr, parse_header, parse_unit};
use dpsp::logic::subst::subst1;
use dpsp::aprhl::{check_derivation, compile_to_hoare, AprhlError, DerivationDoc};
use dpsp::logic::falsify::Falsifier;
use dpsp::logic::wp::{Obligation, Status, VcGen};
use dpsp::pipeline::{discharge, load, verify, Loaded, VerifyConfig, VerifyReport};
use dpsp::product::self_product;
use dpsp::source_interp::InterpConfig;
use dpsp::target_interp::{product_memory, TargetOutcome, TargetRunner};
use dpsp::values::{Dist, EvalCtx, Memory, Value};

pub fn load_program(p: &Program) -> Loaded {
    load(p.source, p.axioms).unwrap_or_else(|e| panic!("{}: {e}", p.name))
}

pub fn verify_program(p: &Program) -> VerifyReport {
    verify(&load_program(p), &VerifyConfig::default()).unwrap_or_else(|e| panic!("{}: {e}", p.name))
}

/// Exact check at the target ε (or `eps` when given) with the default tolerance.
pub fn dpcheck_program(p: &Program, eps: Option<f64>, delta: Option<f64>) -> DpReport {
    let l = load_program(p);
    let t = l.unit.header.target.as_ref().expect("corpus programs declare a target");
    let f = |r: &BigRational| num_traits::ToPrimitive::to_f64(r).unwrap();
    let kind: Adjacency = p.adjacency.parse().unwrap();
    let pairs = adjacency_pairs(&l.unit, &l.ctx, kind).unwrap();
    let cfg = InterpConfig::default();
    let tol = default_tol(&cfg);
    dp_check(&l.unit, &l.ctx, cfg, &pairs, eps.unwrap_or(f(&t.eps.value)), delta.unwrap_or(f(&t.delta.value)), tol)
        .unwrap()
}

/// max over all output sets S of μ1(S) - e^ε μ2(S), by enumerating subsets
/// of the joint support.
pub fn subset_max(mu1: &BTreeMap<i64, f64>, mu2: &BTreeMap<i64, f64>, eps: f64) -> f64 {
    let keys: Vec<i64> = mu1.keys().chain(mu2.keys()).copied().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    assert!(keys.len() <= 16);
    let scale = eps.exp();
    let mut best = 0.0f64;
    for mask in 0u32..(1 << keys.len()) {
        let (mut a, mut b) = (0.0, 0.0);
        for (i, k) in keys.iter().enumerate() {
            if mask & (1 << i) != 0 {
                a += mu1.get(k).copied().unwrap_or(0.0);
                b += mu2.get(k).copied().unwrap_or(0.0);
            }
        }
        best = best.max(a - scale * b);
    }
    best
}

fn random_dist(rng: &mut ChaCha8Rng, points: i64) -> BTreeMap<i64, f64> {
    let mut m = BTreeMap::new();
    for k in 0..points {
        if rng.gen_bool(0.7) {
            m.insert(k, rng.gen_range(0.0..1.0));
        }
    }
    if m.is_empty() {
        m.insert(0, 1.0);
    }
    let z: f64 = m.values().sum();
    m.values_mut().for_each(|p| *p /= z);
    m
}

/// Compares the pointwise Δ_ε against the subset oracle on `n` random pairs
/// over at most 12 points; returns the largest disagreement.
pub fn greedy_vs_subset(n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..n {
        let eps = [0.0, 0.1, 1.0][i % 3];
        let points = rng.gen_range(1..=12);
        let a = random_dist(&mut rng, points);
        let b = random_dist(&mut rng, points);
        let da = Dist::from_weighted(a.iter().map(|(k, p)| (*k, *p)));
        let db = Dist::from_weighted(b.iter().map(|(k, p)| (*k, *p)));
        worst = worst.max((eps_distance(&da, &db, eps) - subset_max(&a, &b, eps)).abs());
    }
    worst
}

fn runner(cases: u32) -> TestRunner {
    let cfg = Config { cases, failure_persistence: None, ..Config::default() };
    TestRunner::new_with_rng(cfg, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn dist_strategy() -> impl Strategy<Value = Dist<i64>> {
    prop::collection::vec((0i64..6, 0.01f64..1.0), 1..6).prop_map(Dist::from_weighted)
}

fn close(a: &Dist<i64>, b: &Dist<i64>) -> bool {
    let (pa, pb) = (a.clone().into_points(), b.clone().into_points());
    pa.len() == pb.len() && pa.iter().zip(&pb).all(|((k, p), (l, q))| k == l && (p - q).abs() <= 1e-12)
}

fn kernel_f(k: &i64) -> Dist<i64> {
    Dist::from_weighted([(*k, 0.25 + (k.rem_euclid(3) as f64) / 4.0), (k * 2 - 1, 0.25)])
}

fn kernel_g(k: &i64) -> Dist<i64> {
    Dist::from_weighted([(k + 1, 0.5), (-k, 0.5), (*k, 0.125)])
}

pub fn prop_monad_laws(cases: u32) -> Result<(), String> {
    runner(cases)
        .run(&(dist_strategy(), -4i64..6), |(m, k)| {
            prop_assert!(close(&Dist::dirac(k).bind(kernel_f), &kernel_f(&k)), "left identity");
            prop_assert!(close(&m.bind(|x| Dist::dirac(*x)), &m), "right identity");
            let lhs = m.bind(kernel_f).bind(kernel_g);
            let rhs = m.bind(|x| kernel_f(x).bind(kernel_g));
            prop_assert!(close(&lhs, &rhs), "associativity");
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn prop_delta_monotone(cases: u32) -> Result<(), String> {
    runner(cases)
        .run(&(dist_strategy(), dist_strategy(), 0.0f64..3.0, 0.0f64..3.0), |(a, b, e1, e2)| {
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            prop_assert!(eps_distance(&a, &b, hi) <= eps_distance(&a, &b, lo) + 1e-15);
            Ok(())
        })
        .map_err(|e| e.to_string())
}

const SUBST_HDR: &str = "program s; decl x : int in {-3..3}; decl y : int in {-3..3}; decl z : int in {-3..3}; decl v : int in {-3..3};";

fn term() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        Just("x".to_string()),
        Just("y".to_string()),
        Just("z".to_string()),
        Just("v".to_string()),
        (-3i64..4).prop_map(|c| if c < 0 { format!("(0 - {})", -c) } else { c.to_string() }),
    ];
    leaf.prop_recursive(3, 12, 2, |t| {
        prop_oneof![
            (t.clone(), t.clone()).prop_map(|(a, b)| format!("({a} + {b})")),
            (t.clone(), t.clone()).prop_map(|(a, b)| format!("({a} - {b})")),
            (t.clone(), t.clone()).prop_map(|(a, b)| format!("({a} * {b})")),
            t.prop_map(|a| format!("abs({a})")),
        ]
    })
}

fn formula() -> impl Strategy<Value = String> {
    let atom = prop_oneof![
        (term(), term()).prop_map(|(a, b)| format!("{a} <= {b}")),
        (term(), term()).prop_map(|(a, b)| format!("{a} = {b}")),
    ];
    atom.prop_recursive(3, 10, 2, |f| {
        prop_oneof![
            (f.clone(), f.clone()).prop_map(|(a, b)| format!("({a} && {b})")),
            (f.clone(), f.clone()).prop_map(|(a, b)| format!("({a} || {b})")),
            f.clone().prop_map(|a| format!("!({a})")),
            (-2i64..1, 0i64..3, f.clone()).prop_map(|(lo, hi, a)| format!("(forall v in {{{lo}..{hi}}} . {a})")),
            (-2i64..1, 0i64..3, f).prop_map(|(lo, hi, a)| format!("(exists v in {{{lo}..{hi}}} . {a})")),
        ]
    })
}

/// e[x := r] evaluated in m agrees with e evaluated in m[x ↦ ⟦r⟧m], also
/// when r mentions variables bound inside e.
pub fn prop_substitution(cases: u32) -> Result<(), String> {
    let h = parse_header(SUBST_HDR).unwrap();
    let ctx = EvalCtx::from_header(&h).unwrap();
    let mem = (-3i64..4, -3i64..4, -3i64..4, -3i64..4);
    runner(cases)
        .run(&(formula(), term(), mem), |(e, r, (x, y, z, v))| {
            let e = parse_expr(&e, &h).map_err(|err| TestCaseError::fail(err.to_string()))?;
            let r = parse_expr(&r, &h).map_err(|err| TestCaseError::fail(err.to_string()))?;
            let mut m = Memory::new();
            for (n, val) in [("x", x), ("y", y), ("z", z), ("v", v)] {
                m.insert(n, Value::Int(val));
            }
            let rv = ctx.eval(&r, &m).map_err(|err| TestCaseError::fail(err.to_string()))?;
            let lhs = ctx.eval(&subst1(&e, "x", &r), &m);
            let rhs = ctx.eval(&e, &m.set("x", rv));
            prop_assert_eq!(lhs, rhs);
            Ok(())
        })
        .map_err(|e| e.to_string())
}

const HOARE_HDR: &str = "program h; input a : int in {0..2}; decl x : int in {-2..4}; decl y : int in {-2..4};";

fn sterm() -> BoxedStrategy<String> {
    prop_oneof![
        Just("a".to_string()),
        Just("x".to_string()),
        Just("y".to_string()),
        (0i64..3).prop_map(|c| c.to_string()),
        (prop::sample::select(vec!["a", "x", "y"]), 0i64..3).prop_map(|(v, c)| format!("{v} + {c}")),
        (prop::sample::select(vec!["a", "x", "y"]), prop::sample::select(vec!["a", "x", "y"]))
            .prop_map(|(u, v)| format!("{u} - {v}")),
    ]
    .boxed()
}

fn stmt() -> impl Strategy<Value = String> {
    let simple = prop_oneof![
        (prop::sample::select(vec!["x", "y"]), sterm()).prop_map(|(v, t)| format!("{v} := {t}")),
        (prop::sample::select(vec!["x", "y"]), sterm()).prop_map(|(v, t)| format!("{v} := Lap[1]({t})")),
        Just("skip".to_string()),
    ];
    simple.prop_recursive(2, 8, 3, |s| {
        let blk = prop::collection::vec(s, 1..3).prop_map(|v| v.join("; "));
        (sterm(), sterm(), blk.clone(), blk).prop_map(|(g1, g2, t, e)| format!("if {g1} <= {g2} then {{ {t} }} else {{ {e} }}"))
    })
}

fn program() -> impl Strategy<Value = String> {
    prop::collection::vec(stmt(), 1..4).prop_map(|ss| format!("{HOARE_HDR}\n{};\nreturn x", ss.join(";\n")))
}

fn post() -> impl Strategy<Value = String> {
    let atom = prop_oneof![
        Just("out_1 = out_2".to_string()),
        Just("x_1 = x_2".to_string()),
        (0i64..3).prop_map(|c| format!("y_1 <= y_2 + {c}")),
        (0i64..3).prop_map(|c| format!("abs(x_1 - x_2) <= {c}")),
        (0i64..4).prop_map(|c| format!("__alpha <= {c}")),
    ];
    prop::collection::vec(atom, 1..4).prop_map(|v| v.join(" && "))
}

struct Hoare {
    ctx: EvalCtx,
    product: Vec<dpsp::frontend::ast::Stmt>,
    post: dpsp::frontend::ast::Expr,
}

fn hoare_setup(src: &str, post: &str) -> Result<Hoare, TestCaseError> {
    let unit = parse_unit(src).map_err(|e| TestCaseError::fail(format!("{e}\n{src}")))?;
    let h = unit.header.clone();
    let ctx = EvalCtx::from_header(&h).unwrap();
    let product = self_product(&unit.body);
    let post = parse_expr(post, &h).map_err(|e| TestCaseError::fail(e.to_string()))?;
    Ok(Hoare { ctx, product, post })
}

fn start_memories() -> Vec<Memory> {
    let mut out = Vec::new();
    for a1 in 0..3 {
        for a2 in 0..3 {
            let m = |a: i64| {
                let mut m = Memory::new();
                m.insert("a", Value::Int(a));
                m.insert("x", Value::Int(0));
                m.insert("y", Value::Int(0));
                m
            };
            out.push(product_memory(&m(a1), &m(a2)));
        }
    }
    out
}

/// wp(c, Q) holds in m exactly when every run of the product from m ends
/// without a failed assertion in a memory satisfying Q.
pub fn prop_hoare_consistency(cases: u32) -> Result<(), String> {
    runner(cases)
        .run(&(program(), post()), |(src, post)| {
            let t = hoare_setup(&src, &post)?;
            let wp = VcGen::new(None).wp(&t.product, t.post.clone()).map_err(|e| TestCaseError::fail(e.to_string()))?;
            for m in start_memories() {
                let holds = t.ctx.eval_bool(&wp, &m).map_err(|e| TestCaseError::fail(e.to_string()))?;
                let sem = match TargetRunner::new(&t.ctx).run(&t.product, &m).unwrap() {
                    TargetOutcome::Bottom { .. } => false,
                    TargetOutcome::Mems(ms) => {
                        let mut all = true;
                        for f in &ms {
                            all &= t.ctx.eval_bool(&t.post, f).map_err(|e| TestCaseError::fail(e.to_string()))?;
                        }
                        all
                    }
                };
                prop_assert_eq!(holds, sem, "{}\npost {}\nat {:?}", src, post, m);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

/// Starting with less privacy budget spent never hurts: if wp holds with
/// __alpha = a it holds for every smaller a.
pub fn prop_ghost_monotone(cases: u32) -> Result<(), String> {
    let grid: Vec<BigRational> = (0..5).map(|i| BigRational::new(i.into(), 2.into())).collect();
    runner(cases)
        .run(&(program(), post()), |(src, post)| {
            let t = hoare_setup(&src, &post)?;
            let wp = VcGen::new(None).wp(&t.product, t.post.clone()).map_err(|e| TestCaseError::fail(e.to_string()))?;
            for m in start_memories() {
                let mut prev = true;
                for a in &grid {
                    let holds = t
                        .ctx
                        .eval_bool(&wp, &m.set(ALPHA, Value::Real(a.clone())))
                        .map_err(|e| TestCaseError::fail(e.to_string()))?;
                    prop_assert!(prev || !holds, "wp fails at a smaller __alpha but holds at {}\n{}", a, src);
                    prev = holds;
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

/// Checks a corpus derivation, compiles it and discharges both obligation
/// sets. Returns the statuses of the rule obligations and of the compiled ones.
pub fn run_derivation(d: &dpsp::corpus::Derivation) -> Result<(Vec<Status>, Vec<Status>), AprhlError> {
    let doc = DerivationDoc::parse(d.json)?;
    let ctx = EvalCtx::from_header(&doc.header).unwrap();
    let mut obs = check_derivation(&doc, &ctx)?;
    let product = self_product(&doc.unit().body);
    let mut notes = Vec::new();
    discharge(&Falsifier::for_unit(&doc.unit(), ctx.clone(), &product), &mut obs, &mut notes);
    let mut c = compile_to_hoare(&doc, &ctx)?;
    discharge(&Falsifier::for_unit(&c.unit, ctx, &c.product), &mut c.obligations, &mut notes);
    let st = |v: Vec<Obligation>| v.into_iter().map(|o| o.status).collect();
    Ok((st(obs), st(c.obligations)))
}

pub fn all_verified(s: &[Status]) -> bool {
    s.iter().all(|s| matches!(s, Status::GroundVerified { .. }))
}
