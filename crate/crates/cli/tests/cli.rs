use std::path::PathBuf;
use std::process::{Command, Output};

fn corpus(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "core", "corpus", name].iter().collect();
    p.to_string_lossy().into_owned()
}

fn dpsp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpsp")).args(args).env_remove("DPSP_CONFIG").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn verify_exit_codes() {
    assert_eq!(code(&dpsp(&["verify", &corpus("intro.pwhile")])), 0);
    let o = dpsp(&["verify", &corpus("desync.pwhile")]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("FALSIFIED"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&dpsp(&["verify"])), 2);
    assert_eq!(code(&dpsp(&["frobnicate"])), 2);
    assert_eq!(code(&dpsp(&["verify", &corpus("no_such_file.pwhile")])), 2);
    assert_eq!(code(&dpsp(&["dpcheck", "--adjacency", "sideways", &corpus("intro.pwhile")])), 2);
}

#[test]
fn json_output_is_deterministic() {
    for f in ["intro.pwhile", "mwem.pwhile", "smartsum_undercounted.pwhile"] {
        let a = dpsp(&["--json", "verify", &corpus(f)]);
        let b = dpsp(&["--json", "verify", &corpus(f)]);
        assert_eq!(a.stdout, b.stdout, "{f}");
        let v: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
        assert!(v["summary"]["total"].as_u64().unwrap() > 0);
    }
}

#[test]
fn product_matches_golden() {
    for name in ["intro", "smartsum", "mwem", "ptr", "vertexcover", "desync"] {
        let o = dpsp(&["product", &corpus(&format!("{name}.pwhile"))]);
        assert_eq!(code(&o), 0, "{name}");
        let golden = std::fs::read_to_string(corpus(&format!("golden/{name}.product"))).unwrap();
        assert_eq!(stdout(&o), golden, "{name}");
    }
}

#[test]
fn custom_axioms_are_flagged() {
    let o = dpsp(&["verify", &corpus("vertexcover.pwhile")]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("UNSOUND-EXTENSION"));
}

#[test]
fn dpcheck_ptr_and_its_delta() {
    assert_eq!(code(&dpsp(&["dpcheck", "--adjacency", "add-remove", &corpus("ptr.pwhile")])), 0);
    assert_eq!(code(&dpsp(&["dpcheck", "--adjacency", "add-remove", "--delta", "0", &corpus("ptr.pwhile")])), 1);
}

#[test]
fn aprhl_commands() {
    assert_eq!(code(&dpsp(&["aprhl", "check", &corpus("aprhl/laploop.json")])), 0);
    assert_eq!(code(&dpsp(&["aprhl", "compile", &corpus("aprhl/intro.json")])), 0);
    let o = dpsp(&["aprhl", "check", &corpus("aprhl/while_gen.json")]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("unsupported rule"));
}

#[test]
fn tail_check_passes() {
    assert_eq!(code(&dpsp(&["tail", "--eps", "1", "--t", "10"])), 0);
}
