mod common;

use dpsp::aprhl::AprhlError;
use dpsp::corpus::{self, Expect, PROGRAMS};
use dpsp::frontend::pretty_block;
use dpsp::logic::wp::Status;
use dpsp::pipeline::Verdict;
use dpsp::product::self_product;

#[test]
fn corpus_is_large_enough() {
    assert!(PROGRAMS.len() >= 6);
    assert!(PROGRAMS.iter().any(|p| p.expect == Expect::Falsified));
}

#[test]
fn products_match_goldens() {
    for p in PROGRAMS {
        let l = common::load_program(p);
        assert_eq!(pretty_block(&self_product(&l.unit.body)), p.golden, "{}", p.name);
    }
}

#[test]
fn verdicts_match_expectations() {
    for p in PROGRAMS {
        let r = common::verify_program(p);
        let got = if r.verdict == Verdict::Verified { Expect::Verified } else { Expect::Falsified };
        assert_eq!(got, p.expect, "{}: {}", p.name, r.verdict_line());
        assert_eq!(r.unsound_extension, p.axioms.is_some(), "{}", p.name);
    }
}

#[test]
fn verify_reports_are_deterministic() {
    for name in ["intro", "mwem", "desync"] {
        let p = corpus::program(name).unwrap();
        let a = serde_json::to_string(&common::verify_program(p).to_json()).unwrap();
        let b = serde_json::to_string(&common::verify_program(p).to_json()).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn undercounted_smartsum_blames_the_budget() {
    let r = common::verify_program(corpus::program("smartsum_undercounted").unwrap());
    let blamed: Vec<_> = r
        .obligations
        .iter()
        .filter_map(|o| match &o.status {
            Status::Falsified { blame: Some(b), .. } => Some(b.detail.clone()),
            _ => None,
        })
        .collect();
    assert!(blamed.iter().any(|d| d.contains("__alpha")), "{blamed:?}");
}

#[test]
fn desync_blames_the_branch_assert() {
    let r = common::verify_program(corpus::program("desync").unwrap());
    let hit = r.obligations.iter().any(|o| matches!(&o.status, Status::Falsified { blame: Some(b), .. } if b.rule == "assert"));
    assert!(hit);
}

#[test]
fn exact_checks_of_small_programs() {
    for name in ["intro", "mwem", "ptr", "smartsum_broken", "desync"] {
        let p = corpus::program(name).unwrap();
        let r = common::dpcheck_program(p, None, None);
        assert!(r.pairs_checked > 0, "{name}");
        assert_eq!(Some(r.pass), p.dp_holds, "{name}: max distance {}", r.max_distance);
    }
}

#[test]
fn ptr_needs_its_delta() {
    let r = common::dpcheck_program(corpus::program("ptr").unwrap(), None, Some(0.0));
    assert!(!r.pass);
}

#[test]
fn derivations_check_and_compile() {
    for d in corpus::DERIVATIONS.iter().filter(|d| d.supported) {
        let (rules, compiled) = common::run_derivation(d).unwrap_or_else(|e| panic!("{}: {e}", d.name));
        assert!(common::all_verified(&rules), "{}: {rules:?}", d.name);
        assert!(common::all_verified(&compiled), "{}: {compiled:?}", d.name);
    }
}

#[test]
fn every_core_rule_has_a_derivation() {
    for rule in ["assn", "lap", "exp", "skip", "cond", "while", "seq", "weak"] {
        assert!(corpus::DERIVATIONS.iter().any(|d| d.supported && d.rule == rule), "{rule}");
    }
}

#[test]
fn generalized_while_is_unsupported() {
    let d = corpus::derivation("while_gen").unwrap();
    assert!(matches!(common::run_derivation(d), Err(AprhlError::Unsupported { .. })));
}
