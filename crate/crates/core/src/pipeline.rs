//! End-to-end runs: parse, check, build the product, generate and discharge
//! obligations, and assemble the reports.

use serde_json::json;
use thiserror::Error;

use crate::frontend::ast::*;
use crate::frontend::typecheck::{typecheck_target, TypedUnit};
use crate::frontend::{parse_unit, pretty_expr, typecheck, ParseError, Span, TypeError};
use crate::logic::axioms::{AxiomError, AxiomSet};
use crate::logic::falsify::{Falsifier, FalsifyError, Outcome};
use crate::logic::smtlib::{emit_smtlib, SmtOptions};
use crate::logic::wp::{privacy_goal, HoareTriple, Obligation, Status, VcGen, WpError};
use crate::product::{self_product, taint_check, TaintError};
use crate::values::eval::CtxError;
use crate::values::{EvalCtx, Registry, RegistryError, Value};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("parse error at {0}")]
    Parse(#[from] ParseError),
    #[error("{}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("\n"))]
    Type(Vec<TypeError>),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Ctx(#[from] CtxError),
    #[error(transparent)]
    Axiom(#[from] AxiomError),
    #[error("mechanism `{0}` is declared without axioms; pass --axioms")]
    MissingAxioms(String),
    #[error(transparent)]
    Taint(#[from] TaintError),
    #[error(transparent)]
    Wp(#[from] WpError),
}

/// A parsed and type-checked program with its evaluation context.
pub struct Loaded {
    pub unit: ProgramUnit,
    pub registry: Registry,
    pub ctx: EvalCtx,
    pub typed: TypedUnit,
    pub axioms: Option<AxiomSet>,
}

/// Parses and type-checks a program. `axioms` is the axiom file text for
/// custom mechanisms, if any are declared.
pub fn load(src: &str, axioms: Option<&str>) -> Result<Loaded, PipelineError> {
    let unit = parse_unit(src)?;
    let registry = Registry::for_header(&unit.header)?;
    let typed = typecheck(&unit, &registry).map_err(PipelineError::Type)?;
    let ctx = EvalCtx::from_header(&unit.header)?;
    let axioms = match axioms {
        Some(text) => Some(AxiomSet::parse(text, &unit.header)?),
        None => match unit.header.mechanisms.first() {
            Some(m) => return Err(PipelineError::MissingAxioms(m.name.clone())),
            None => None,
        },
    };
    Ok(Loaded { unit, registry, ctx, typed, axioms })
}

#[derive(Clone, Debug)]
pub struct VerifyConfig {
    /// Node budget of the falsifier per obligation.
    pub budget: u64,
    /// Keep integer-range quantifiers symbolic in the SMT-LIB output.
    pub symbolic_quantifiers: bool,
    /// Falsifier domain overrides, ghosts included.
    pub domains: Vec<(String, Vec<Value>)>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { budget: 20_000_000, symbolic_quantifiers: false, domains: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Verdict {
    Verified,
    Falsified(Span),
}

pub struct VerifyReport {
    pub product: Block,
    pub triple: HoareTriple,
    pub obligations: Vec<Obligation>,
    pub smtlib: Result<String, String>,
    pub verdict: Verdict,
    pub unsound_extension: bool,
    pub warnings: Vec<String>,
    pub target: (String, String),
}

impl VerifyReport {
    pub fn verdict_line(&self) -> String {
        match &self.verdict {
            Verdict::Verified => {
                format!("DP({}, {}) VERIFIED (modulo exported obligations)", self.target.0, self.target.1)
            }
            Verdict::Falsified(span) => format!("FALSIFIED at {span}"),
        }
    }

    pub fn count(&self, status: &str) -> usize {
        self.obligations.iter().filter(|o| o.status.name() == status).count()
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "target": {"eps": self.target.0, "delta": self.target.1},
            "obligations": self.obligations.iter().map(Obligation::to_json).collect::<Vec<_>>(),
            "summary": {
                "total": self.obligations.len(),
                "ground_verified": self.count("ground-verified"),
                "falsified": self.count("falsified"),
                "exported": self.count("exported"),
            },
            "smtlib": match &self.smtlib {
                Ok(s) => json!({"check_sats": s.matches("(check-sat)").count()}),
                Err(e) => json!({"error": e}),
            },
            "verdict": self.verdict_line(),
            "unsound_extension": self.unsound_extension,
            "warnings": self.warnings,
        })
    }
}

/// Runs the falsifier on each obligation and records the outcome. Obligations
/// the falsifier cannot decide are marked exported (left to the SMT script).
pub fn discharge(falsifier: &Falsifier, obligations: &mut [Obligation], notes: &mut Vec<String>) {
    for o in obligations.iter_mut() {
        o.status = match falsifier.falsify(&o.formula) {
            Ok(Outcome::Valid { assignments }) => Status::GroundVerified { assignments },
            Ok(Outcome::Counterexample { memory, blame }) => {
                Status::Falsified { memory, blame: blame.map(|b| (*b).clone()) }
            }
            Ok(Outcome::BudgetExhausted { explored }) => {
                notes.push(format!("obligation {}: budget exhausted after {explored} nodes", o.id));
                Status::Exported
            }
            Err(e @ FalsifyError::NoDomain(_)) | Err(e @ FalsifyError::Eval(_)) => {
                notes.push(format!("obligation {}: {e}", o.id));
                Status::Exported
            }
        };
    }
}

/// The span a falsified obligation is blamed on.
pub fn blame_span(o: &Obligation) -> Span {
    match &o.status {
        Status::Falsified { blame: Some(b), .. } => b.span,
        _ => o.provenance.span,
    }
}

/// Product construction, obligation generation, falsification and SMT-LIB
/// emission for the privacy goal of the program.
pub fn verify(l: &Loaded, cfg: &VerifyConfig) -> Result<VerifyReport, PipelineError> {
    let mut warnings: Vec<String> = taint_check(&l.unit.body)?.into_iter().map(|w| format!("{}: warning: {}", w.span, w.message)).collect();
    let product = self_product(&l.unit.body);
    typecheck_target(&product, &l.typed.product_env).map_err(PipelineError::Type)?;
    let triple = privacy_goal(&l.unit, &product);
    let mut gen = VcGen::new(l.axioms.as_ref());
    let mut obligations = gen.generate(&triple)?;
    let mut falsifier = Falsifier::for_unit(&l.unit, l.ctx.clone(), &product);
    falsifier.budget = cfg.budget;
    for (x, vs) in &cfg.domains {
        falsifier.set_domain(x, vs.clone());
    }
    discharge(&falsifier, &mut obligations, &mut warnings);
    let smtlib = emit_smtlib(
        &obligations,
        &l.typed.product_env,
        &l.ctx,
        SmtOptions { expand_quantifiers: !cfg.symbolic_quantifiers },
    )
    .map_err(|e| e.to_string());
    let verdict = match obligations.iter().find(|o| matches!(o.status, Status::Falsified { .. })) {
        Some(o) => Verdict::Falsified(blame_span(o)),
        None => Verdict::Verified,
    };
    let target = match &l.unit.header.target {
        Some(t) => (pretty_expr(&t.eps.expr), pretty_expr(&t.delta.expr)),
        None => ("0".into(), "0".into()),
    };
    if gen.used_custom {
        warnings.push("UNSOUND-EXTENSION: custom mechanism axioms were used".into());
    }
    Ok(VerifyReport {
        product,
        triple,
        obligations,
        smtlib,
        verdict,
        unsound_extension: gen.used_custom,
        warnings,
        target,
    })
}
