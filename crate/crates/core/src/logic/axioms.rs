//! User-supplied Hoare axioms for custom mechanisms.
//!
//! An axiom file lists, per mechanism, its formal inputs, the name of the
//! output in the formulas, and a set of cases. Each case has a precondition
//! over the tagged formals (`nodes_1`, `nodes_2`, ...), a constraint on the
//! common output value, and the privacy cost charged when the case applies.

use std::collections::BTreeMap;

use serde::Deserialize;
use thiserror::Error;

use super::subst::subst;
use crate::frontend::ast::*;
use crate::frontend::{parse_expr, ParseError};

#[derive(Debug, Error)]
pub enum AxiomError {
    #[error("axiom file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("axiom `{mech}`, field {field}: {err}")]
    Formula { mech: String, field: String, err: ParseError },
    #[error("mechanism `{0}` has no axioms")]
    Missing(String),
    #[error("mechanism `{mech}` is invoked with {got} argument(s) but its axioms declare {want}")]
    Arity { mech: String, got: usize, want: usize },
}

#[derive(Deserialize)]
struct RawFile {
    mechanisms: Vec<RawMech>,
}

#[derive(Deserialize)]
struct RawMech {
    name: String,
    inputs: Vec<String>,
    output: String,
    cases: Vec<RawCase>,
}

#[derive(Deserialize)]
struct RawCase {
    pre: String,
    #[serde(default)]
    out: Option<String>,
    alpha: String,
    #[serde(default)]
    delta: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AxiomCase {
    pub pre: Expr,
    pub out: Expr,
    pub alpha: Expr,
    pub delta: Expr,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MechAxioms {
    pub name: String,
    pub inputs: Vec<String>,
    pub output: String,
    pub cases: Vec<AxiomCase>,
}

impl MechAxioms {
    /// Cases with the formals replaced by the actual arguments of both sides
    /// and the output by `out`.
    pub fn instantiate(&self, left: &[Expr], right: &[Expr], out: &Expr) -> Result<Vec<AxiomCase>, AxiomError> {
        if left.len() != self.inputs.len() || right.len() != self.inputs.len() {
            return Err(AxiomError::Arity { mech: self.name.clone(), got: left.len(), want: self.inputs.len() });
        }
        let mut m = BTreeMap::new();
        for (i, x) in self.inputs.iter().enumerate() {
            m.insert(tagged(x, 1), left[i].clone());
            m.insert(tagged(x, 2), right[i].clone());
        }
        m.insert(self.output.clone(), out.clone());
        Ok(self
            .cases
            .iter()
            .map(|c| AxiomCase {
                pre: subst(&c.pre, &m),
                out: subst(&c.out, &m),
                alpha: subst(&c.alpha, &m),
                delta: subst(&c.delta, &m),
            })
            .collect())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AxiomSet {
    pub mechs: BTreeMap<String, MechAxioms>,
}

impl AxiomSet {
    /// Parses an axiom file; formulas are read in the scope of `header`.
    pub fn parse(json: &str, header: &Header) -> Result<AxiomSet, AxiomError> {
        let raw: RawFile = serde_json::from_str(json)?;
        let mut mechs = BTreeMap::new();
        for m in raw.mechanisms {
            let f = |field: &str, s: &str| {
                parse_expr(s, header).map_err(|err| AxiomError::Formula {
                    mech: m.name.clone(),
                    field: field.to_string(),
                    err,
                })
            };
            let mut cases = Vec::new();
            for c in &m.cases {
                cases.push(AxiomCase {
                    pre: f("pre", &c.pre)?,
                    out: match &c.out {
                        Some(s) => f("out", s)?,
                        None => tt(),
                    },
                    alpha: f("alpha", &c.alpha)?,
                    delta: match &c.delta {
                        Some(s) => f("delta", s)?,
                        None => int(0),
                    },
                });
            }
            mechs.insert(
                m.name.clone(),
                MechAxioms { name: m.name.clone(), inputs: m.inputs.clone(), output: m.output.clone(), cases },
            );
        }
        Ok(AxiomSet { mechs })
    }

    pub fn get(&self, name: &str) -> Result<&MechAxioms, AxiomError> {
        self.mechs.get(name).ok_or_else(|| AxiomError::Missing(name.to_string()))
    }

    pub fn is_empty(&self) -> bool {
        self.mechs.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{parse_header, pretty_expr};

    #[test]
    fn parse_and_instantiate() {
        let h = parse_header("decl a : int; decl v : int;").unwrap();
        let json = r#"{"mechanisms": [{"name": "pick", "inputs": ["a"], "output": "v",
            "cases": [{"pre": "a_1 = a_2", "out": "v <= a_1", "alpha": "0"}]}]}"#;
        let ax = AxiomSet::parse(json, &h).unwrap();
        let m = ax.get("pick").unwrap();
        let cs = m.instantiate(&[var("x_1")], &[var("x_2")], &var("w")).unwrap();
        assert_eq!(pretty_expr(&cs[0].pre), "x_1 = x_2");
        assert_eq!(pretty_expr(&cs[0].out), "w <= x_1");
        assert!(matches!(ax.get("other"), Err(AxiomError::Missing(_))));
        assert!(matches!(m.instantiate(&[], &[], &var("w")), Err(AxiomError::Arity { .. })));
    }
}
