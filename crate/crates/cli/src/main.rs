use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::json;

use dpsp::aprhl::{check_derivation, compile_to_hoare, judgment_json, DerivationDoc};
use dpsp::dpcheck::{adjacency_pairs, default_tol, dp_check, dti_spec_check, tail_check, Adjacency};
use dpsp::frontend::typecheck::typecheck_target;
use dpsp::frontend::{parse_expr, parse_unit, pretty_block, pretty_expr, pretty_unit, Header};
use dpsp::logic::falsify::Falsifier;
use dpsp::logic::smtlib::{emit_smtlib, SmtOptions};
use dpsp::logic::wp::{privacy_goal, Obligation, Status, VcGen};
use dpsp::pipeline::{discharge, load, verify, Loaded, Verdict, VerifyConfig};
use dpsp::product::{self_product, target_json, taint_check};
use dpsp::source_interp::{tail_bound, Interp, InterpConfig};
use dpsp::target_interp::{product_memory, TargetRunner};
use dpsp::values::{EvalCtx, Memory, Value};

#[derive(Parser)]
#[command(name = "dpsp", version, about = "Verify differential privacy of probabilistic while programs")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Falsifier node budget per obligation.
    #[arg(long, global = true)]
    budget: Option<u64>,
    /// Axiom file for custom mechanisms.
    #[arg(long, global = true)]
    axioms: Option<PathBuf>,
    /// Laplace truncation tolerance of the interpreter.
    #[arg(long = "tail-tol", global = true)]
    tail_tol: Option<f64>,
    /// Print JSON reports.
    #[arg(long, global = true)]
    json: bool,
    /// Finite domain override, `x=lo..hi` or `x={v1,v2}`.
    #[arg(long = "domain", global = true)]
    domains: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse a program and print it back.
    Parse { file: PathBuf },
    /// Type-check a program and its product.
    Typecheck { file: PathBuf },
    /// Print the self-product of a program.
    Product { file: PathBuf },
    /// Generate the verification conditions of the privacy goal.
    Vcgen {
        file: PathBuf,
        /// Write the obligations (JSON) here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write an SMT-LIB2 script here.
        #[arg(long)]
        smtlib: Option<PathBuf>,
        /// Keep integer-range quantifiers symbolic in the SMT-LIB output.
        #[arg(long)]
        symbolic: bool,
    },
    /// Search for counterexamples to the obligations on finite domains.
    Falsify { file: PathBuf },
    /// Full pipeline: product, obligations, falsification, SMT-LIB and verdict.
    Verify {
        file: PathBuf,
        #[arg(long)]
        smtlib: Option<PathBuf>,
    },
    /// Exact check of the privacy inequality over enumerated adjacent inputs.
    Dpcheck {
        file: PathBuf,
        /// one-entry-pm1, add-remove, one-edge or custom (precondition only).
        #[arg(long, default_value = "custom", value_parser = |s: &str| s.parse::<Adjacency>().map_err(|e| e.to_string()))]
        adjacency: Adjacency,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        tol: Option<f64>,
        /// Fixed Laplace window.
        #[arg(long)]
        window: Option<i64>,
    },
    /// Laplace tail mass outside ±T against its analytic bound.
    Tail {
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        t: i64,
        #[arg(long)]
        window: Option<i64>,
    },
    /// Output distribution of the source program on one input.
    Run {
        file: PathBuf,
        /// Input assignment `x=value`.
        #[arg(long = "input")]
        inputs: Vec<String>,
        /// Draw this many samples instead of printing the distribution.
        #[arg(long)]
        sample: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the product program on a pair of inputs (set semantics).
    RunTarget {
        file: PathBuf,
        /// Input assignment `x_1=value` or `x_2=value`.
        #[arg(long = "input")]
        inputs: Vec<String>,
    },
    /// Check or compile apRHL derivations.
    Aprhl {
        #[command(subcommand)]
        cmd: AprhlCmd,
    },
}

#[derive(Subcommand)]
enum AprhlCmd {
    Check { file: PathBuf },
    Compile { file: PathBuf },
}

/// Keys of the file named by `DPSP_CONFIG`; flags take precedence.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct Config {
    budget: Option<u64>,
    axioms: Option<PathBuf>,
    tail_tol: Option<f64>,
    json: Option<bool>,
    domain: Option<Vec<String>>,
    eps: Option<f64>,
    delta: Option<f64>,
    tol: Option<f64>,
    smtlib: Option<PathBuf>,
}

struct Outcome {
    ok: bool,
}

fn read(p: &Path) -> Result<String> {
    fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("JSON values serialize"));
}

fn parse_domain(spec: &str, h: &Header, ctx: &EvalCtx) -> Result<(String, Vec<Value>)> {
    let (name, dom) = spec.split_once('=').ok_or_else(|| anyhow!("--domain expects x=lo..hi, got `{spec}`"))?;
    let values = if let Some((lo, hi)) = dom.split_once("..") {
        let lo: i64 = lo.trim().parse().with_context(|| format!("bad lower bound in `{spec}`"))?;
        let hi: i64 = hi.trim().parse().with_context(|| format!("bad upper bound in `{spec}`"))?;
        (lo..=hi).map(Value::Int).collect()
    } else {
        let inner = dom.trim().trim_start_matches('{').trim_end_matches('}');
        inner.split(',').map(|v| const_value(v.trim(), h, ctx)).collect::<Result<Vec<_>>>()?
    };
    Ok((name.trim().to_string(), values))
}

fn const_value(text: &str, h: &Header, ctx: &EvalCtx) -> Result<Value> {
    let e = parse_expr(text, h).map_err(|e| anyhow!("bad value `{text}`: {e}"))?;
    ctx.eval(&e, &Memory::new()).map_err(|e| anyhow!("bad value `{text}`: {e}"))
}

fn parse_inputs(items: &[String], h: &Header, ctx: &EvalCtx) -> Result<Memory> {
    let mut m = Memory::new();
    for it in items {
        let (x, v) = it.split_once('=').ok_or_else(|| anyhow!("--input expects x=value, got `{it}`"))?;
        m.insert(x.trim(), const_value(v.trim(), h, ctx)?);
    }
    Ok(m)
}

struct App {
    common: Common,
    config: Config,
}

impl App {
    fn json(&self) -> bool {
        self.common.json || self.config.json.unwrap_or(false)
    }

    fn interp_cfg(&self, window: Option<i64>) -> InterpConfig {
        let mut c = InterpConfig::default();
        if let Some(t) = self.common.tail_tol.or(self.config.tail_tol) {
            c.tau = t;
        }
        c.window = window;
        c
    }

    fn domains(&self) -> Vec<String> {
        let mut d = self.config.domain.clone().unwrap_or_default();
        d.extend(self.common.domains.iter().cloned());
        d
    }

    /// Axioms from --axioms, the config, or the file named in the mechanism
    /// declaration (relative to the program).
    fn load(&self, file: &Path) -> Result<Loaded> {
        let src = read(file)?;
        let explicit = self.common.axioms.clone().or_else(|| self.config.axioms.clone());
        let axioms = match explicit {
            Some(p) => Some(read(&p)?),
            None => {
                let unit = parse_unit(&src).map_err(|e| anyhow!("{}: parse error at {e}", file.display()))?;
                match unit.header.mechanisms.iter().find_map(|m| m.axioms.clone()) {
                    Some(rel) => Some(read(&file.parent().unwrap_or(Path::new(".")).join(rel))?),
                    None => None,
                }
            }
        };
        load(&src, axioms.as_deref()).map_err(|e| anyhow!("{}: {e}", file.display()))
    }

    fn falsifier(&self, l: &Loaded, product: &[dpsp::frontend::Stmt]) -> Result<Falsifier> {
        let mut f = Falsifier::for_unit(&l.unit, l.ctx.clone(), product);
        if let Some(b) = self.common.budget.or(self.config.budget) {
            f.budget = b;
        }
        for d in self.domains() {
            let (x, vs) = parse_domain(&d, &l.unit.header, &l.ctx)?;
            f.set_domain(&x, vs);
        }
        Ok(f)
    }

    fn obligations_json(obs: &[Obligation]) -> serde_json::Value {
        json!(obs.iter().map(Obligation::to_json).collect::<Vec<_>>())
    }

    fn print_obligations(obs: &[Obligation]) {
        for o in obs {
            println!("[{}] {} at {} ({}): {}", o.id, o.provenance.rule, o.provenance.span, o.status.name(), pretty_expr(&o.formula));
            if let Status::Falsified { memory, blame } = &o.status {
                println!("    counterexample: {}", memory.to_json());
                if let Some(b) = blame {
                    println!("    blame: {} at {}: {}", b.rule, b.span, b.detail);
                }
            }
        }
    }

    fn run(&self, cmd: &Cmd) -> Result<Outcome> {
        match cmd {
            Cmd::Parse { file } => {
                let unit = parse_unit(&read(file)?).map_err(|e| anyhow!("{}: parse error at {e}", file.display()))?;
                print!("{}", pretty_unit(&unit));
                Ok(Outcome { ok: true })
            }
            Cmd::Typecheck { file } => {
                let l = self.load(file)?;
                let product = self_product(&l.unit.body);
                typecheck_target(&product, &l.typed.product_env)
                    .map_err(|es| anyhow!(es.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("\n")))?;
                println!("ok: returns {}", l.typed.return_type);
                Ok(Outcome { ok: true })
            }
            Cmd::Product { file } => {
                let l = self.load(file)?;
                let warnings = taint_check(&l.unit.body).map_err(|e| anyhow!("{e}"))?;
                for w in &warnings {
                    eprintln!("{}: warning: {}", w.span, w.message);
                }
                let product = self_product(&l.unit.body);
                if self.json() {
                    print_json(&target_json(&product));
                } else {
                    print!("{}", pretty_block(&product));
                }
                Ok(Outcome { ok: true })
            }
            Cmd::Vcgen { file, out, smtlib, symbolic } => {
                let l = self.load(file)?;
                taint_check(&l.unit.body).map_err(|e| anyhow!("{e}"))?;
                let product = self_product(&l.unit.body);
                let triple = privacy_goal(&l.unit, &product);
                let obs = VcGen::new(l.axioms.as_ref()).generate(&triple).map_err(|e| anyhow!("{e}"))?;
                if let Some(p) = out {
                    fs::write(p, serde_json::to_string_pretty(&Self::obligations_json(&obs))?)?;
                }
                if let Some(p) = smtlib.clone().or_else(|| self.config.smtlib.clone()) {
                    let script = emit_smtlib(&obs, &l.typed.product_env, &l.ctx, SmtOptions { expand_quantifiers: !symbolic })
                        .map_err(|e| anyhow!("{e}"))?;
                    fs::write(p, script)?;
                }
                if self.json() {
                    print_json(&Self::obligations_json(&obs));
                } else {
                    Self::print_obligations(&obs);
                }
                Ok(Outcome { ok: true })
            }
            Cmd::Falsify { file } => {
                let l = self.load(file)?;
                taint_check(&l.unit.body).map_err(|e| anyhow!("{e}"))?;
                let product = self_product(&l.unit.body);
                let triple = privacy_goal(&l.unit, &product);
                let mut obs = VcGen::new(l.axioms.as_ref()).generate(&triple).map_err(|e| anyhow!("{e}"))?;
                let f = self.falsifier(&l, &product)?;
                let mut notes = Vec::new();
                discharge(&f, &mut obs, &mut notes);
                if self.json() {
                    print_json(&json!({"obligations": Self::obligations_json(&obs), "notes": notes}));
                } else {
                    Self::print_obligations(&obs);
                    for n in &notes {
                        println!("note: {n}");
                    }
                }
                Ok(Outcome { ok: !obs.iter().any(|o| matches!(o.status, Status::Falsified { .. })) })
            }
            Cmd::Verify { file, smtlib } => {
                let l = self.load(file)?;
                let mut cfg = VerifyConfig::default();
                if let Some(b) = self.common.budget.or(self.config.budget) {
                    cfg.budget = b;
                }
                for d in self.domains() {
                    cfg.domains.push(parse_domain(&d, &l.unit.header, &l.ctx)?);
                }
                let report = verify(&l, &cfg).map_err(|e| anyhow!("{}: {e}", file.display()))?;
                if let Some(p) = smtlib.clone().or_else(|| self.config.smtlib.clone()) {
                    match &report.smtlib {
                        Ok(s) => fs::write(p, s)?,
                        Err(e) => eprintln!("warning: no SMT-LIB output: {e}"),
                    }
                }
                if self.json() {
                    print_json(&report.to_json());
                } else {
                    for w in &report.warnings {
                        println!("{w}");
                    }
                    println!(
                        "obligations: {} ground-verified, {} falsified, {} exported",
                        report.count("ground-verified"),
                        report.count("falsified"),
                        report.count("exported")
                    );
                    for o in report.obligations.iter().filter(|o| matches!(o.status, Status::Falsified { .. })) {
                        Self::print_obligations(std::slice::from_ref(o));
                    }
                    println!("{}", report.verdict_line());
                    if report.unsound_extension {
                        println!("UNSOUND-EXTENSION");
                    }
                }
                Ok(Outcome { ok: report.verdict == Verdict::Verified })
            }
            Cmd::Dpcheck { file, adjacency, eps, delta, tol, window } => {
                let l = self.load(file)?;
                let kind = *adjacency;
                let target = l.unit.header.target.as_ref();
                let f = |r: &num_rational::BigRational| num_traits::ToPrimitive::to_f64(r).unwrap_or(0.0);
                let eps = eps.or(self.config.eps).or(target.map(|t| f(&t.eps.value))).unwrap_or(0.0);
                let delta = delta.or(self.config.delta).or(target.map(|t| f(&t.delta.value))).unwrap_or(0.0);
                let cfg = self.interp_cfg(*window);
                let tol = tol.or(self.config.tol).unwrap_or_else(|| default_tol(&cfg));
                let pairs = adjacency_pairs(&l.unit, &l.ctx, kind).map_err(|e| anyhow!("{e}"))?;
                let mut report = dp_check(&l.unit, &l.ctx, cfg, &pairs, eps, delta, tol).map_err(|e| anyhow!("{e}"))?;
                report.adjacency = kind.to_string();
                let dti = dti_spec_check(&l.unit.header, &l.ctx).map_err(|e| anyhow!("{e}"))?;
                let dti_ok = dti.iter().all(|d| d.violations.is_empty());
                let mut j = report.to_json();
                j["dti"] = json!(dti
                    .iter()
                    .map(|d| json!({"builtin": d.builtin, "pairs": d.pairs, "violations": d.violations.len()}))
                    .collect::<Vec<_>>());
                if self.json() {
                    print_json(&j);
                } else {
                    for w in &report.warnings {
                        println!("warning: {w}");
                    }
                    println!(
                        "{} pairs ({}), max distance {:e} at eps {}, delta {} + tol {:e}: {}",
                        report.pairs_checked,
                        report.adjacency,
                        report.max_distance,
                        eps,
                        delta,
                        tol,
                        if report.pass { "PASS" } else { "FAIL" }
                    );
                    if let Some((a, b)) = &report.witness_pair {
                        println!("witness: {} vs {}", a.to_json(), b.to_json());
                    }
                    for d in &dti {
                        println!("{}: spec holds on {} pairs, {} violations", d.builtin, d.pairs, d.violations.len());
                    }
                }
                Ok(Outcome { ok: report.pass && dti_ok })
            }
            Cmd::Tail { eps, t, window } => {
                let w = window.unwrap_or_else(|| self.interp_cfg(None).window_for(*eps));
                let r = tail_check(*eps, *t, w);
                if self.json() {
                    print_json(&json!({"eps": r.eps, "t": r.t, "window": r.window, "measured": r.measured, "bound": r.bound, "pass": r.pass}));
                } else {
                    println!("tail beyond {} (window {}): {:e} <= {:e}: {}", r.t, r.window, r.measured, tail_bound(*eps, *t), r.pass);
                }
                Ok(Outcome { ok: r.pass })
            }
            Cmd::Run { file, inputs, sample, seed } => {
                let l = self.load(file)?;
                let interp = Interp::new(&l.ctx, &l.unit.header, self.interp_cfg(None));
                let given = parse_inputs(inputs, &l.unit.header, &l.ctx)?;
                let m = interp.initial_memory(&l.unit.header, &given).map_err(|e| anyhow!("{e}"))?;
                let d = interp.output_dist(&l.unit.body, &m).map_err(|e| anyhow!("{e}"))?;
                match sample {
                    None => {
                        let pts: Vec<_> = d.iter().map(|(v, p)| json!({"value": v.to_json(), "p": p})).collect();
                        if self.json() {
                            print_json(&json!({"distribution": pts, "total": d.total()}));
                        } else {
                            for (v, p) in d.iter() {
                                println!("{v}\t{p:.12}");
                            }
                        }
                    }
                    Some(n) => {
                        let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                        let pts: Vec<(Value, f64)> = d.iter().map(|(v, p)| (v.clone(), p)).collect();
                        let total = d.total();
                        let mut counts: BTreeMap<Value, usize> = BTreeMap::new();
                        for _ in 0..*n {
                            let mut u = rng.gen::<f64>() * total;
                            let mut pick = &pts[pts.len() - 1].0;
                            for (v, p) in &pts {
                                if u < *p {
                                    pick = v;
                                    break;
                                }
                                u -= p;
                            }
                            *counts.entry(pick.clone()).or_default() += 1;
                        }
                        if self.json() {
                            let c: Vec<_> = counts.iter().map(|(v, c)| json!({"value": v.to_json(), "count": c})).collect();
                            print_json(&json!({"samples": n, "seed": seed, "counts": c}));
                        } else {
                            for (v, c) in &counts {
                                println!("{v}\t{c}");
                            }
                        }
                    }
                }
                Ok(Outcome { ok: true })
            }
            Cmd::RunTarget { file, inputs } => {
                let l = self.load(file)?;
                let interp = Interp::new(&l.ctx, &l.unit.header, self.interp_cfg(None));
                let given = parse_inputs(inputs, &l.unit.header, &l.ctx)?;
                let side = |t: &str| {
                    let mut m = Memory::new();
                    for (x, v) in given.iter() {
                        if let Some(base) = x.strip_suffix(t) {
                            m.insert(base, v.clone());
                        }
                    }
                    interp.initial_memory(&l.unit.header, &m).map_err(|e| anyhow!("{e}"))
                };
                let start = product_memory(&side("_1")?, &side("_2")?);
                let product = self_product(&l.unit.body);
                let mut runner = TargetRunner::new(&l.ctx);
                runner.axioms = l.axioms.as_ref();
                if let Some(b) = self.common.budget.or(self.config.budget) {
                    runner.budget = b as usize;
                }
                for d in self.domains() {
                    let (x, vs) = parse_domain(&d, &l.unit.header, &l.ctx)?;
                    runner.domains.insert(x, vs);
                }
                let out = runner.run(&product, &start).map_err(|e| anyhow!("{e}"))?;
                print_json(&out.to_json());
                Ok(Outcome { ok: !out.is_bottom() })
            }
            Cmd::Aprhl { cmd } => {
                let (AprhlCmd::Check { file } | AprhlCmd::Compile { file }) = cmd;
                let doc = DerivationDoc::parse(&read(file)?).map_err(|e| anyhow!("{}: {e}", file.display()))?;
                let unit = doc.unit();
                let ctx = EvalCtx::from_header(&unit.header).map_err(|e| anyhow!("{e}"))?;
                let (mut obs, product, extra) = match cmd {
                    AprhlCmd::Check { .. } => {
                        let obs = check_derivation(&doc, &ctx).map_err(|e| anyhow!("{e}"))?;
                        (obs, self_product(&unit.body), json!({"judgment": judgment_json(&doc.root.judgment)}))
                    }
                    AprhlCmd::Compile { .. } => {
                        check_derivation(&doc, &ctx).map_err(|e| anyhow!("{e}"))?;
                        let c = compile_to_hoare(&doc, &ctx).map_err(|e| anyhow!("{e}"))?;
                        let extra = json!({
                            "pre": pretty_expr(&c.triple.pre),
                            "product": pretty_block(&c.product),
                            "post": pretty_expr(&c.triple.post),
                            "notes": c.notes,
                        });
                        (c.obligations, c.product, extra)
                    }
                };
                let mut notes = Vec::new();
                let mut f = Falsifier::for_unit(&unit, ctx.clone(), &product);
                if let Some(b) = self.common.budget.or(self.config.budget) {
                    f.budget = b;
                }
                discharge(&f, &mut obs, &mut notes);
                let ok = !obs.iter().any(|o| matches!(o.status, Status::Falsified { .. }));
                if self.json() {
                    let mut j = extra;
                    j["obligations"] = Self::obligations_json(&obs);
                    j["notes"] = json!(notes);
                    j["ok"] = json!(ok);
                    print_json(&j);
                } else {
                    if let Some(p) = extra.get("product").and_then(|p| p.as_str()) {
                        println!("{{{}}}", extra["pre"].as_str().unwrap_or(""));
                        print!("{p}");
                        println!("{{{}}}", extra["post"].as_str().unwrap_or(""));
                    }
                    Self::print_obligations(&obs);
                    for n in &notes {
                        println!("note: {n}");
                    }
                    println!("{}", if ok { "derivation OK" } else { "derivation REJECTED: side condition falsified" });
                }
                Ok(Outcome { ok })
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let config = match std::env::var_os("DPSP_CONFIG") {
        Some(p) => match fs::read_to_string(&p).map_err(anyhow::Error::from).and_then(|s| Ok(toml::from_str::<Config>(&s)?)) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: DPSP_CONFIG {}: {e}", PathBuf::from(p).display());
                return ExitCode::from(2);
            }
        },
        None => Config::default(),
    };
    let app = App { common: cli.common.clone(), config };
    match app.run(&cli.cmd) {
        Ok(o) if o.ok => ExitCode::SUCCESS,
        Ok(_) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_usage(&e) { 2 } else { 1 })
        }
    }
}

/// Unreadable inputs and malformed flags are usage errors; everything else is
/// a failed check.
fn is_usage(e: &anyhow::Error) -> bool {
    e.chain().any(|c| c.downcast_ref::<std::io::Error>().is_some())
        || e.to_string().contains("--")
}
