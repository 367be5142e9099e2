//! One line per acceptance criterion. Exits nonzero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dpsp::aprhl::AprhlError;
use dpsp::corpus;
use dpsp::dpcheck::{dti_spec_check, tail_check};
use dpsp::frontend::{parse_header, pretty_block};
use dpsp::logic::wp::Status;
use dpsp::pipeline::Verdict;
use dpsp::product::self_product;
use dpsp::source_interp::{exp_dist, lap_dist, min_window};
use dpsp::values::{EvalCtx, ScoreFn, Value};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn verified(name: &str) -> Result<(), String> {
    let r = common::verify_program(corpus::program(name).unwrap());
    ensure(r.verdict == Verdict::Verified, format!("{name}: {}", r.verdict_line()))
}

fn goldens() -> Check {
    for name in ["smartsum", "mwem", "intro"] {
        let p = corpus::program(name).unwrap();
        let got = pretty_block(&self_product(&common::load_program(p).unit.body));
        ensure(got == p.golden, format!("{name} product differs from golden"))?;
    }
    Ok("smartsum, mwem, intro".into())
}

fn smartsum_verify() -> Check {
    verified("smartsum")?;
    Ok("verified".into())
}

fn smartsum_dpcheck() -> Check {
    let r = common::dpcheck_program(corpus::program("smartsum").unwrap(), None, None);
    ensure(r.tol <= 1e-8, format!("tol {}", r.tol))?;
    ensure(r.pass, format!("max distance {:e}", r.max_distance))?;
    Ok(format!("{} pairs, max distance {:e}", r.pairs_checked, r.max_distance))
}

fn mwem() -> Check {
    let p = corpus::program("mwem").unwrap();
    let l = common::load_program(p);
    let eps = &l.unit.header.target.as_ref().unwrap().eps.value;
    ensure(*eps == BigRational::new(2.into(), 5.into()), format!("target eps {eps}"))?;
    verified("mwem")?;
    let r = common::dpcheck_program(p, None, None);
    ensure(r.pass, format!("max distance {:e}", r.max_distance))?;
    Ok(format!("bound 0.4 verified, {} pairs", r.pairs_checked))
}

fn ptr() -> Check {
    let p = corpus::program("ptr").unwrap();
    verified("ptr")?;
    let r = common::dpcheck_program(p, None, None);
    ensure(r.max_distance <= r.delta + r.tol, format!("Δ {} > δ {}", r.max_distance, r.delta))?;
    let l = common::load_program(p);
    let dti = dti_spec_check(&l.unit.header, &l.ctx).map_err(|e| e.to_string())?;
    ensure(!dti.is_empty() && dti.iter().all(|d| d.violations.is_empty()), "dti spec violated")?;
    Ok(format!("Δ {:.4} ≤ δ {}, dti spec on {} pairs", r.max_distance, r.delta, dti[0].pairs))
}

fn greedy() -> Check {
    let worst = common::greedy_vs_subset(1000, 2024);
    ensure(worst <= 1e-12, format!("disagreement {worst:e}"))?;
    Ok(format!("1000 pairs, worst {worst:e}"))
}

fn mechanisms() -> Check {
    let tau = 1e-9;
    for eps in [0.5, 1.0] {
        let w = min_window(eps, tau);
        for k in 0..=3i64 {
            let a = lap_dist(eps, 0, w, tau).map_err(|e| e.to_string())?;
            let b = lap_dist(eps, k, w, tau).map_err(|e| e.to_string())?;
            let bound = (k as f64 * eps).exp() + 1e-9;
            for (r, p) in a.iter() {
                let q = b.mass(r);
                if q > 0.0 {
                    ensure(p / q <= bound && q / p <= bound, format!("lap ratio at eps {eps}, k {k}, r {r}"))?;
                }
            }
        }
    }
    for eps in [0.5, 1.0, 2.0] {
        for t in [5, 10, 20] {
            let r = tail_check(eps, t, min_window(eps, tau));
            ensure(r.pass, format!("tail at eps {eps}, T {t}: {} > {}", r.measured, r.bound))?;
        }
    }
    let h = parse_header("program m; range R = [0, 1, 2, 3];").map_err(|e| e.to_string())?;
    let ctx = EvalCtx::from_header(&h).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let mut table = BTreeMap::new();
        for input in 0..2 {
            for r in 0..4 {
                table.insert((Value::Int(input), Value::Int(r)), BigRational::from_integer(rng.gen_range(-4..=4).into()));
            }
        }
        let score = Value::Score(std::sync::Arc::new(ScoreFn::Table(table)));
        let eps = [0.5, 1.0, 2.0][rng.gen_range(0..3)];
        let (i, j) = (Value::Int(0), Value::Int(1));
        let gap = ctx.maxgap(&score, &i, &j).map_err(|e| e.to_string())?;
        let gap = num_traits::ToPrimitive::to_f64(&gap).unwrap();
        let a = exp_dist(&ctx, eps, &score, &i, &ctx.range).map_err(|e| e.to_string())?;
        let b = exp_dist(&ctx, eps, &score, &j, &ctx.range).map_err(|e| e.to_string())?;
        for r in &ctx.range {
            let (p, q) = (a.mass(r), b.mass(r));
            ensure(p / q <= (eps * gap).exp() + 1e-9, format!("exp ratio at {r}"))?;
        }
    }
    Ok("lap ratios, tails, 200 exp score maps".into())
}

fn derivations() -> Check {
    let mut n = 0;
    for d in corpus::DERIVATIONS {
        match common::run_derivation(d) {
            Ok((rules, compiled)) if d.supported => {
                ensure(common::all_verified(&rules), format!("{}: rule obligation not verified", d.name))?;
                ensure(common::all_verified(&compiled), format!("{}: compiled obligation not verified", d.name))?;
                n += 1;
            }
            Err(AprhlError::Unsupported { .. }) if !d.supported => {}
            Ok(_) => return Err(format!("{}: accepted a generalized rule", d.name)),
            Err(e) => return Err(format!("{}: {e}", d.name)),
        }
    }
    Ok(format!("{n} derivations, while-gen rejected"))
}

fn negatives() -> Check {
    let r = common::verify_program(corpus::program("smartsum_undercounted").unwrap());
    let alpha = r.obligations.iter().any(|o| {
        matches!(&o.status, Status::Falsified { blame: Some(b), .. } if b.detail.contains("__alpha"))
    });
    ensure(alpha, "undercounted smartsum: no falsified __alpha obligation")?;
    let r = common::verify_program(corpus::program("desync").unwrap());
    let sync = r.obligations.iter().any(|o| matches!(&o.status, Status::Falsified { blame: Some(b), .. } if b.rule == "assert"));
    ensure(sync, "desync: no assert counterexample")?;
    let p = corpus::program("smartsum_broken").unwrap();
    let l = common::load_program(p);
    let two_eps = num_traits::ToPrimitive::to_f64(&l.unit.header.target.as_ref().unwrap().eps.value).unwrap();
    let d = common::dpcheck_program(p, Some(two_eps), Some(0.0));
    ensure(d.max_distance > d.tol, format!("broken smartsum passes: {:e}", d.max_distance))?;
    Ok(format!("broken smartsum Δ {:.3}", d.max_distance))
}

fn properties() -> Check {
    let cases = 500;
    for (name, run) in [
        ("monad laws", common::prop_monad_laws as fn(u32) -> Result<(), String>),
        ("substitution", common::prop_substitution),
        ("wp/enumeration", common::prop_hoare_consistency),
        ("Δ monotone", common::prop_delta_monotone),
        ("ghost monotone", common::prop_ghost_monotone),
    ] {
        run(cases).map_err(|e| format!("{name}: {e}"))?;
    }
    Ok(format!("5 suites x {cases} cases"))
}

fn main() {
    let criteria: [(&str, fn() -> Check, u64); 10] = [
        ("products match goldens", goldens, 60),
        ("smartsum verifies", smartsum_verify, 30),
        ("smartsum exact check", smartsum_dpcheck, 60),
        ("mwem verifies at 0.4 and checks", mwem, 60),
        ("ptr verifies, checks, dti spec", ptr, 60),
        ("greedy distance equals subset max", greedy, 30),
        ("mechanism bounds", mechanisms, 10),
        ("aprhl derivations", derivations, 30),
        ("negative programs caught", negatives, 60),
        ("property suites", properties, 60),
    ];
    let mut failed = 0;
    for (i, (name, f, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let res = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        let res = match res {
            Ok(_) if took > Duration::from_secs(*limit) => Err(format!("took {:.1}s, limit {limit}s", took.as_secs_f64())),
            r => r,
        };
        match res {
            Ok(msg) => println!("criterion {:>2} PASS  {name}: {msg} ({:.2}s)", i + 1, took.as_secs_f64()),
            Err(msg) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {msg} ({:.2}s)", i + 1, took.as_secs_f64());
            }
        }
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
