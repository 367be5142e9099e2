//! The example programs shipped with the toolchain, their golden products
//! and the apRHL derivations, embedded so tests and the CLI can use them
//! without touching the filesystem.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Expect {
    Verified,
    Falsified,
}

#[derive(Clone, Copy, Debug)]
pub struct Program {
    pub name: &'static str,
    pub source: &'static str,
    /// Axiom file of a custom mechanism, if the program declares one.
    pub axioms: Option<&'static str>,
    /// Pretty-printed self product.
    pub golden: &'static str,
    pub expect: Expect,
    /// Adjacency relation for exact checking, as accepted by `dpcheck`.
    pub adjacency: &'static str,
    /// Whether the exact check is expected to pass; None when it is too
    /// expensive or meaningless (custom mechanisms have no semantics).
    pub dp_holds: Option<bool>,
}

macro_rules! program {
    ($name:literal, $axioms:expr, $expect:ident, $adj:literal, $dp:expr) => {
        Program {
            name: $name,
            source: include_str!(concat!("../corpus/", $name, ".pwhile")),
            axioms: $axioms,
            golden: include_str!(concat!("../corpus/golden/", $name, ".product")),
            expect: Expect::$expect,
            adjacency: $adj,
            dp_holds: $dp,
        }
    };
}

pub const PROGRAMS: &[Program] = &[
    program!("intro", None, Verified, "custom", Some(true)),
    program!("smartsum", None, Verified, "one-entry-pm1", Some(true)),
    program!("mwem", None, Verified, "add-remove", Some(true)),
    program!("ptr", None, Verified, "add-remove", Some(true)),
    program!("vertexcover", Some(include_str!("../corpus/vertexcover.axioms.json")), Verified, "one-edge", None),
    program!("smartsum_undercounted", None, Falsified, "one-entry-pm1", None),
    program!("smartsum_broken", None, Falsified, "one-entry-pm1", Some(false)),
    program!("desync", None, Falsified, "custom", Some(false)),
];

pub fn program(name: &str) -> Option<&'static Program> {
    PROGRAMS.iter().find(|p| p.name == name)
}

#[derive(Clone, Copy, Debug)]
pub struct Derivation {
    pub name: &'static str,
    /// The rule this derivation is the showcase for.
    pub rule: &'static str,
    pub json: &'static str,
    /// False for derivations using rules without a self-product counterpart.
    pub supported: bool,
}

macro_rules! derivation {
    ($name:literal, $rule:literal, $ok:literal) => {
        Derivation {
            name: $name,
            rule: $rule,
            json: include_str!(concat!("../corpus/aprhl/", $name, ".json")),
            supported: $ok,
        }
    };
}

pub const DERIVATIONS: &[Derivation] = &[
    derivation!("intro", "seq", true),
    derivation!("laploop", "while", true),
    derivation!("rule_assn", "assn", true),
    derivation!("rule_lap", "lap", true),
    derivation!("rule_exp", "exp", true),
    derivation!("rule_skip", "skip", true),
    derivation!("rule_cond", "cond", true),
    derivation!("rule_weak", "weak", true),
    derivation!("while_gen", "while-gen", false),
];

pub fn derivation(name: &str) -> Option<&'static Derivation> {
    DERIVATIONS.iter().find(|d| d.name == name)
}
