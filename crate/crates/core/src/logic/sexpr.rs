//! S-expression reader and a structural validator for emitted SMT-LIB scripts.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SExpr {
    Atom(String),
    Str(String),
    List(Vec<SExpr>),
}

impl fmt::Display for SExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SExpr::Atom(a) => write!(f, "{a}"),
            SExpr::Str(s) => write!(f, "\"{}\"", s.replace('"', "\"\"")),
            SExpr::List(xs) => {
                write!(f, "(")?;
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        write!(f, " ")?;
                    }
                    write!(f, "{x}")?;
                }
                write!(f, ")")
            }
        }
    }
}

impl SExpr {
    pub fn atom(&self) -> Option<&str> {
        match self {
            SExpr::Atom(a) => Some(a),
            _ => None,
        }
    }

    pub fn list(&self) -> Option<&[SExpr]> {
        match self {
            SExpr::List(xs) => Some(xs),
            _ => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SExprError {
    #[error("line {line}: unbalanced `)`")]
    Unbalanced { line: usize },
    #[error("unterminated list opened on line {line}")]
    Unterminated { line: usize },
    #[error("line {line}: unterminated string or quoted symbol")]
    UnterminatedToken { line: usize },
    #[error("script: {0}")]
    Invalid(String),
}

/// Reads all top-level s-expressions; `;` starts a line comment.
pub fn parse_all(src: &str) -> Result<Vec<SExpr>, SExprError> {
    let mut stack: Vec<(Vec<SExpr>, usize)> = Vec::new();
    let mut top = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0;
    let mut line = 1;
    let push = |stack: &mut Vec<(Vec<SExpr>, usize)>, top: &mut Vec<SExpr>, e: SExpr| match stack.last_mut() {
        Some((l, _)) => l.push(e),
        None => top.push(e),
    };
    while i < chars.len() {
        let c = chars[i];
        match c {
            '\n' => {
                line += 1;
                i += 1;
            }
            c if c.is_whitespace() => i += 1,
            ';' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '(' => {
                stack.push((Vec::new(), line));
                i += 1;
            }
            ')' => {
                let (l, _) = stack.pop().ok_or(SExprError::Unbalanced { line })?;
                push(&mut stack, &mut top, SExpr::List(l));
                i += 1;
            }
            '"' => {
                let mut s = String::new();
                i += 1;
                loop {
                    match chars.get(i) {
                        None => return Err(SExprError::UnterminatedToken { line }),
                        Some('"') if chars.get(i + 1) == Some(&'"') => {
                            s.push('"');
                            i += 2;
                        }
                        Some('"') => {
                            i += 1;
                            break;
                        }
                        Some(ch) => {
                            if *ch == '\n' {
                                line += 1;
                            }
                            s.push(*ch);
                            i += 1;
                        }
                    }
                }
                push(&mut stack, &mut top, SExpr::Str(s));
            }
            '|' => {
                let start = i;
                i += 1;
                while i < chars.len() && chars[i] != '|' {
                    i += 1;
                }
                if i >= chars.len() {
                    return Err(SExprError::UnterminatedToken { line });
                }
                i += 1;
                push(&mut stack, &mut top, SExpr::Atom(chars[start..i].iter().collect()));
            }
            _ => {
                let start = i;
                while i < chars.len() && !chars[i].is_whitespace() && !"();\"|".contains(chars[i]) {
                    i += 1;
                }
                push(&mut stack, &mut top, SExpr::Atom(chars[start..i].iter().collect()));
            }
        }
    }
    if let Some((_, l)) = stack.last() {
        return Err(SExprError::Unterminated { line: *l });
    }
    Ok(top)
}

const COMMANDS: &[&str] = &[
    "set-logic",
    "set-option",
    "set-info",
    "declare-datatypes",
    "declare-const",
    "declare-fun",
    "define-fun",
    "define-fun-rec",
    "declare-sort",
    "push",
    "pop",
    "assert",
    "check-sat",
    "get-model",
    "exit",
];

const THEORY: &[&str] = &[
    "true", "false", "not", "and", "or", "=>", "=", "distinct", "ite", "xor", "+", "-", "*", "/", "div", "mod",
    "abs", "<", "<=", ">", ">=", "to_real", "to_int", "is_int", "_", "is", "forall", "exists", "let", "Int", "Real",
    "Bool",
];

/// Summary of a validated script.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScriptInfo {
    pub check_sats: usize,
    pub asserts: usize,
    pub declared: BTreeSet<String>,
}

fn is_numeral(a: &str) -> bool {
    !a.is_empty() && a.chars().all(|c| c.is_ascii_digit() || c == '.') && a.chars().next().unwrap().is_ascii_digit()
}

/// Parses a script and checks that commands are known, push/pop balance,
/// and every symbol in a term is declared, bound or part of the theories.
pub fn validate_script(src: &str) -> Result<ScriptInfo, SExprError> {
    let forms = parse_all(src)?;
    let mut declared: BTreeSet<String> = BTreeSet::new();
    let mut depth = 0i64;
    let mut info = ScriptInfo { check_sats: 0, asserts: 0, declared: BTreeSet::new() };
    let bad = |m: String| SExprError::Invalid(m);
    for f in &forms {
        let xs = f.list().ok_or_else(|| bad(format!("top-level atom `{f}`")))?;
        let head = xs.first().and_then(SExpr::atom).ok_or_else(|| bad("empty command".into()))?;
        if !COMMANDS.contains(&head) {
            return Err(bad(format!("unknown command `{head}`")));
        }
        let name = |k: usize| xs.get(k).and_then(SExpr::atom).map(str::to_string);
        match head {
            "declare-const" | "declare-fun" | "declare-sort" => {
                declared.insert(name(1).ok_or_else(|| bad(format!("{head} without a name")))?);
            }
            "define-fun" | "define-fun-rec" => {
                let n = name(1).ok_or_else(|| bad(format!("{head} without a name")))?;
                // Recursive definitions may mention themselves.
                declared.insert(n.clone());
                let params = xs.get(2).and_then(SExpr::list).ok_or_else(|| bad(format!("`{n}`: bad parameters")))?;
                let mut bound: Vec<String> = Vec::new();
                for p in params {
                    let pn = p.list().and_then(|l| l.first()).and_then(SExpr::atom);
                    bound.push(pn.ok_or_else(|| bad(format!("`{n}`: bad parameter")))?.to_string());
                }
                let body = xs.get(4).ok_or_else(|| bad(format!("`{n}`: missing body")))?;
                check_term(body, &declared, &mut bound)?;
            }
            "declare-datatypes" => {
                let sorts = xs.get(1).and_then(SExpr::list).ok_or_else(|| bad("datatype sorts".into()))?;
                for s in sorts {
                    if let Some(n) = s.list().and_then(|l| l.first()).and_then(SExpr::atom) {
                        declared.insert(n.to_string());
                    }
                }
                let decls = xs.get(2).and_then(SExpr::list).ok_or_else(|| bad("datatype constructors".into()))?;
                for d in decls {
                    for ctor in d.list().unwrap_or(&[]) {
                        let parts = ctor.list().ok_or_else(|| bad("constructor".into()))?;
                        for (k, p) in parts.iter().enumerate() {
                            let n = if k == 0 { p.atom() } else { p.list().and_then(|l| l.first()).and_then(SExpr::atom) };
                            declared.insert(n.ok_or_else(|| bad("constructor".into()))?.to_string());
                        }
                    }
                }
            }
            "push" => depth += 1,
            "pop" => {
                depth -= 1;
                if depth < 0 {
                    return Err(bad("pop without push".into()));
                }
            }
            "assert" => {
                info.asserts += 1;
                check_term(xs.get(1).ok_or_else(|| bad("empty assert".into()))?, &declared, &mut Vec::new())?;
            }
            "check-sat" => info.check_sats += 1,
            _ => {}
        }
    }
    if depth != 0 {
        return Err(bad("unbalanced push/pop".into()));
    }
    info.declared = declared;
    Ok(info)
}

fn check_term(t: &SExpr, declared: &BTreeSet<String>, bound: &mut Vec<String>) -> Result<(), SExprError> {
    match t {
        SExpr::Str(_) => Ok(()),
        SExpr::Atom(a) => {
            if is_numeral(a) || THEORY.contains(&a.as_str()) || declared.contains(a) || bound.contains(a) {
                Ok(())
            } else {
                Err(SExprError::Invalid(format!("undeclared symbol `{a}`")))
            }
        }
        SExpr::List(xs) => {
            match xs.first().and_then(SExpr::atom) {
                Some("forall") | Some("exists") => {
                    let vs = xs.get(1).and_then(SExpr::list).ok_or_else(|| SExprError::Invalid("binder".into()))?;
                    let n = bound.len();
                    for v in vs {
                        let name = v.list().and_then(|l| l.first()).and_then(SExpr::atom);
                        bound.push(name.ok_or_else(|| SExprError::Invalid("binder".into()))?.to_string());
                    }
                    let r = check_term(xs.get(2).ok_or_else(|| SExprError::Invalid("binder body".into()))?, declared, bound);
                    bound.truncate(n);
                    return r;
                }
                Some("let") => {
                    let bs = xs.get(1).and_then(SExpr::list).ok_or_else(|| SExprError::Invalid("let bindings".into()))?;
                    let mut names = Vec::new();
                    for b in bs {
                        let pair = b.list().filter(|p| p.len() == 2).ok_or_else(|| SExprError::Invalid("let binding".into()))?;
                        check_term(&pair[1], declared, bound)?;
                        names.push(pair[0].atom().ok_or_else(|| SExprError::Invalid("let binding".into()))?.to_string());
                    }
                    let n = bound.len();
                    bound.extend(names);
                    let r = check_term(xs.get(2).ok_or_else(|| SExprError::Invalid("let body".into()))?, declared, bound);
                    bound.truncate(n);
                    return r;
                }
                Some("_") => return Ok(()),
                _ => {}
            }
            for x in xs {
                check_term(x, declared, bound)?;
            }
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_nested_lists_and_comments() {
        let f = parse_all("; c\n(assert (> x 1)) (check-sat)").unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f[0].to_string(), "(assert (> x 1))");
    }

    #[test]
    fn unbalanced_detected() {
        assert!(matches!(parse_all("(a (b)"), Err(SExprError::Unterminated { line: 1 })));
        assert!(matches!(parse_all("(a))"), Err(SExprError::Unbalanced { .. })));
    }

    #[test]
    fn validator_checks_declarations() {
        let ok = "(set-logic ALL)(declare-const x Int)(push 1)(assert (not (> (+ x 1) x)))(check-sat)(pop 1)";
        let info = validate_script(ok).unwrap();
        assert_eq!((info.asserts, info.check_sats), (1, 1));
        assert!(validate_script("(assert (> y 1))").is_err());
        assert!(validate_script("(frobnicate)").is_err());
        assert!(validate_script("(push 1)").is_err());
    }
}
