//! Registry of named pure functions callable from expressions.

use std::collections::BTreeMap;
use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use super::domain::add_remove_neighbors;
use super::eval::{real_from_f64, to_f64, EvalError};
use super::value::Value;
use crate::frontend::ast::{Header, Type};

pub type BuiltinImpl = Arc<dyn Fn(&[Value]) -> Result<Value, EvalError> + Send + Sync>;

#[derive(Clone)]
pub struct Builtin {
    pub name: String,
    pub params: Vec<Type>,
    pub ret: Type,
    pub imp: BuiltinImpl,
    /// Complete SMT-LIB definition (`define-fun` / `define-fun-rec`), if any.
    pub smt: Option<&'static str>,
}

impl fmt::Debug for Builtin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Builtin({}: {:?} -> {})", self.name, self.params, self.ret)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistryError {
    #[error("builtin `{0}` is already registered")]
    Duplicate(String),
    #[error("unknown builtin factory `{0}`")]
    UnknownFactory(String),
    #[error("builtin factory `{factory}`: {detail}")]
    Factory { factory: String, detail: String },
}

#[derive(Clone, Default, Debug)]
pub struct Registry {
    map: BTreeMap<String, Builtin>,
}

fn err(name: &str, detail: impl Into<String>) -> EvalError {
    EvalError::Builtin { name: name.to_string(), detail: detail.into() }
}

fn list<'a>(name: &str, v: &'a Value) -> Result<&'a [Value], EvalError> {
    v.as_list().ok_or_else(|| err(name, format!("expected list, got {}", v.type_name())))
}

fn ints(name: &str, v: &Value) -> Result<Vec<i64>, EvalError> {
    list(name, v)?
        .iter()
        .map(|x| x.as_int().ok_or_else(|| err(name, "expected list<int>")))
        .collect()
}

fn int(name: &str, v: &Value) -> Result<i64, EvalError> {
    v.as_int().ok_or_else(|| err(name, format!("expected int, got {}", v.type_name())))
}

fn num(name: &str, v: &Value) -> Result<f64, EvalError> {
    to_f64(v).ok_or_else(|| err(name, format!("expected number, got {}", v.type_name())))
}

fn li() -> Type {
    Type::List(Box::new(Type::Int))
}

fn lr() -> Type {
    Type::List(Box::new(Type::Real))
}

/// Lower median of the sorted list; 0 for the empty list.
pub fn median(xs: &[i64]) -> i64 {
    if xs.is_empty() {
        return 0;
    }
    let mut s = xs.to_vec();
    s.sort();
    s[(s.len() - 1) / 2]
}

/// Counting query `q` over a histogram: total count of bins 0..=q.
pub fn counting_query(q: i64, h: &[f64]) -> f64 {
    h.iter().take((q.max(-1) + 1) as usize).sum()
}

/// One multiplicative-weights step towards measurement `a` of query `q`.
/// The measurement is clamped to [0, total] and the synthetic total is kept.
pub fn mw_update(d: &[f64], a: i64, q: i64) -> Vec<f64> {
    let total: f64 = d.iter().sum();
    if total <= 0.0 {
        return d.to_vec();
    }
    let a = (a as f64).clamp(0.0, total);
    let m = counting_query(q, d);
    let scaled: Vec<f64> = d
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let qi = if (i as i64) <= q { 1.0 } else { 0.0 };
            x * (qi * (a - m) / (2.0 * total)).exp()
        })
        .collect();
    let z: f64 = scaled.iter().sum();
    scaled.iter().map(|x| x * total / z).collect()
}

/// Whether `b` is `a` plus exactly one edge (edge lists compared as sets).
pub fn one_more_edge(a: &[i64], b: &[i64]) -> bool {
    let sa: std::collections::BTreeSet<i64> = a.iter().copied().collect();
    let sb: std::collections::BTreeSet<i64> = b.iter().copied().collect();
    sa.is_subset(&sb) && sb.len() == sa.len() + 1
}

/// Endpoints of an edge code `u * 10 + t`.
pub fn edge_endpoints(e: i64) -> (i64, i64) {
    (e / 10, e % 10)
}

impl Registry {
    pub fn empty() -> Registry {
        Registry::default()
    }

    pub fn register(&mut self, b: Builtin) -> Result<(), RegistryError> {
        if self.map.contains_key(&b.name) {
            return Err(RegistryError::Duplicate(b.name));
        }
        self.map.insert(b.name.clone(), b);
        Ok(())
    }

    pub fn register_fn(
        &mut self,
        name: &str,
        params: Vec<Type>,
        ret: Type,
        f: impl Fn(&[Value]) -> Result<Value, EvalError> + Send + Sync + 'static,
    ) -> Result<(), RegistryError> {
        self.register(Builtin { name: name.to_string(), params, ret, imp: Arc::new(f), smt: None })
    }

    fn std_fn(
        &mut self,
        name: &'static str,
        params: Vec<Type>,
        ret: Type,
        smt: Option<&'static str>,
        f: impl Fn(&[Value]) -> Result<Value, EvalError> + Send + Sync + 'static,
    ) {
        let b = Builtin { name: name.to_string(), params, ret, imp: Arc::new(f), smt };
        self.map.insert(name.to_string(), b);
    }

    pub fn get(&self, name: &str) -> Option<&Builtin> {
        self.map.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    /// The builtins every unit can use.
    pub fn standard() -> Registry {
        let mut r = Registry::empty();
        r.std_fn(
            "nth",
            vec![li(), Type::Int],
            Type::Int,
            Some("(define-fun-rec nth ((l IntList) (i Int)) Int (ite ((_ is inil) l) 0 (ite (= i 0) (ihead l) (nth (itail l) (- i 1)))))"),
            |a| {
                let l = ints("nth", &a[0])?;
                let i = int("nth", &a[1])?;
                Ok(Value::Int(if i >= 0 && (i as usize) < l.len() { l[i as usize] } else { 0 }))
            },
        );
        r.std_fn(
            "sum",
            vec![li()],
            Type::Int,
            Some("(define-fun-rec sum ((l IntList)) Int (ite ((_ is inil) l) 0 (+ (ihead l) (sum (itail l)))))"),
            |a| {
                let l = ints("sum", &a[0])?;
                l.iter()
                    .try_fold(0i64, |s, x| s.checked_add(*x))
                    .map(Value::Int)
                    .ok_or(EvalError::Overflow("sum".into()))
            },
        );
        r.std_fn(
            "adjacent",
            vec![li(), li()],
            Type::Bool,
            Some("(define-fun-rec adjacent ((a IntList) (b IntList)) Bool (ite ((_ is inil) a) ((_ is inil) b) (and ((_ is icons) b) (or (and (= (ihead a) (ihead b)) (adjacent (itail a) (itail b))) (and (<= (abs (- (ihead a) (ihead b))) 1) (= (itail a) (itail b)))))))"),
            |a| {
                let x = ints("adjacent", &a[0])?;
                let y = ints("adjacent", &a[1])?;
                let l1: i64 = x.iter().zip(&y).map(|(u, v)| (u - v).abs()).sum();
                Ok(Value::Bool(x.len() == y.len() && l1 <= 1))
            },
        );
        r.std_fn("hist_adjacent", vec![li(), li()], Type::Bool, None, |a| {
            let x = ints("hist_adjacent", &a[0])?;
            let y = ints("hist_adjacent", &a[1])?;
            let l1: i64 = x.iter().zip(&y).map(|(u, v)| (u - v).abs()).sum();
            Ok(Value::Bool(x.len() == y.len() && l1 <= 1))
        });
        r.std_fn("mset_adjacent", vec![li(), li()], Type::Bool, None, |a| {
            let x = list("mset_adjacent", &a[0])?;
            let y = list("mset_adjacent", &a[1])?;
            Ok(Value::Bool(super::domain::mset_distance(x, y) <= 1))
        });
        r.std_fn("median", vec![li()], Type::Int, None, |a| Ok(Value::Int(median(&ints("median", &a[0])?))));
        r.std_fn("query", vec![Type::Int, li()], Type::Int, None, |a| {
            let q = int("query", &a[0])?;
            let h = ints("query", &a[1])?;
            Ok(Value::Int(h.iter().take((q.max(-1) + 1) as usize).sum()))
        });
        r.std_fn("rquery", vec![Type::Int, lr()], Type::Real, None, |a| {
            let q = int("rquery", &a[0])?;
            let d: Vec<f64> = list("rquery", &a[1])?.iter().map(|x| num("rquery", x)).collect::<Result<_, _>>()?;
            real_from_f64("rquery", counting_query(q, &d))
        });
        r.std_fn("mw_err", vec![lr(), li(), Type::Int], Type::Real, None, |a| {
            let d: Vec<f64> = list("mw_err", &a[0])?.iter().map(|x| num("mw_err", x)).collect::<Result<_, _>>()?;
            let h: Vec<f64> = ints("mw_err", &a[1])?.iter().map(|&x| x as f64).collect();
            let q = int("mw_err", &a[2])?;
            real_from_f64("mw_err", (counting_query(q, &d) - counting_query(q, &h)).abs())
        });
        r.std_fn("update", vec![lr(), Type::Int, Type::Int], lr(), None, |a| {
            let d: Vec<f64> = list("update", &a[0])?.iter().map(|x| num("update", x)).collect::<Result<_, _>>()?;
            let m = int("update", &a[1])?;
            let q = int("update", &a[2])?;
            let out = mw_update(&d, m, q);
            Ok(Value::list(out.into_iter().map(|x| real_from_f64("update", x)).collect::<Result<_, _>>()?))
        });
        r.std_fn("sqrt", vec![Type::Real], Type::Real, None, |a| {
            let x = num("sqrt", &a[0])?;
            if x < 0.0 {
                return Err(err("sqrt", "negative argument"));
            }
            real_from_f64("sqrt", x.sqrt())
        });
        r.std_fn("log", vec![Type::Real], Type::Real, None, |a| {
            let x = num("log", &a[0])?;
            if x <= 0.0 {
                return Err(err("log", "nonpositive argument"));
            }
            real_from_f64("log", x.ln())
        });
        r.std_fn("exp", vec![Type::Real], Type::Real, None, |a| real_from_f64("exp", num("exp", &a[0])?.exp()));
        r.std_fn(
            "mem",
            vec![Type::Int, li()],
            Type::Bool,
            Some("(define-fun-rec mem ((x Int) (l IntList)) Bool (ite ((_ is inil) l) false (or (= x (ihead l)) (mem x (itail l)))))"),
            |a| {
                let x = int("mem", &a[0])?;
                Ok(Value::Bool(ints("mem", &a[1])?.contains(&x)))
            },
        );
        r.std_fn("remove", vec![li(), Type::Int], li(), None, |a| {
            let l = ints("remove", &a[0])?;
            let x = int("remove", &a[1])?;
            Ok(Value::int_list(&l.into_iter().filter(|y| *y != x).collect::<Vec<_>>()))
        });
        r.std_fn("remove_node", vec![li(), Type::Int], li(), None, |a| {
            let l = ints("remove_node", &a[0])?;
            let v = int("remove_node", &a[1])?;
            let kept: Vec<i64> = l
                .into_iter()
                .filter(|e| {
                    let (u, t) = edge_endpoints(*e);
                    u != v && t != v
                })
                .collect();
            Ok(Value::int_list(&kept))
        });
        r.std_fn("one_more_edge", vec![li(), li()], Type::Bool, None, |a| {
            Ok(Value::Bool(one_more_edge(&ints("one_more_edge", &a[0])?, &ints("one_more_edge", &a[1])?)))
        });
        r.std_fn("incident_diff", vec![li(), li(), Type::Int], Type::Bool, None, |a| {
            let x = ints("incident_diff", &a[0])?;
            let y = ints("incident_diff", &a[1])?;
            let v = int("incident_diff", &a[2])?;
            Ok(Value::Bool(y.iter().filter(|e| !x.contains(e)).any(|e| {
                let (u, t) = edge_endpoints(*e);
                u == v || t == v
            })))
        });
        r
    }

    /// Standard builtins plus the ones declared by a header.
    pub fn for_header(h: &Header) -> Result<Registry, RegistryError> {
        let mut r = Registry::standard();
        for b in &h.builtins {
            let built = match b.factory.as_str() {
                "dti" => dti_factory(&r, h, &b.name, &b.args)?,
                other => return Err(RegistryError::UnknownFactory(other.to_string())),
            };
            r.register(built)?;
        }
        Ok(r)
    }
}

/// Distance to instability of `q` at every database of the universe, for the
/// add/remove-one-record metric of `domain`. Databases from which no database
/// with a different answer is reachable get the universe size.
pub fn distance_to_instability(
    q: &dyn Fn(&Value) -> Result<Value, EvalError>,
    universe: &[Value],
    neighbors: &dyn Fn(&Value, &Value) -> bool,
) -> Result<BTreeMap<Value, i64>, EvalError> {
    let answers: Vec<Value> = universe.iter().map(q).collect::<Result<_, _>>()?;
    let adj: Vec<Vec<usize>> = (0..universe.len())
        .map(|i| (0..universe.len()).filter(|&j| j != i && neighbors(&universe[i], &universe[j])).collect())
        .collect();
    let cap = universe.len() as i64;
    let mut out = BTreeMap::new();
    for s in 0..universe.len() {
        let mut dist = vec![usize::MAX; universe.len()];
        dist[s] = 0;
        let mut queue = VecDeque::from([s]);
        let mut found = None;
        while let Some(i) = queue.pop_front() {
            if !answers[i].num_eq(&answers[s]) {
                found = Some(dist[i] as i64);
                break;
            }
            for &j in &adj[i] {
                if dist[j] == usize::MAX {
                    dist[j] = dist[i] + 1;
                    queue.push_back(j);
                }
            }
        }
        out.insert(universe[s].clone(), found.map(|d| d - 1).unwrap_or(cap));
    }
    Ok(out)
}

fn dti_factory(r: &Registry, h: &Header, name: &str, args: &[String]) -> Result<Builtin, RegistryError> {
    let ferr = |detail: String| RegistryError::Factory { factory: "dti".into(), detail };
    let [query, var] = args else {
        return Err(ferr("expected dti(query, variable)".into()));
    };
    let qb = r.get(query).ok_or_else(|| ferr(format!("unknown query builtin `{query}`")))?.clone();
    if qb.params.len() != 1 {
        return Err(ferr(format!("query `{query}` must take one argument")));
    }
    let decl = h.var(var).ok_or_else(|| ferr(format!("unknown variable `{var}`")))?;
    let domain = decl.domain.clone().ok_or_else(|| ferr(format!("variable `{var}` has no finite domain")))?;
    let universe = domain.enumerate();
    let qf = |v: &Value| (qb.imp)(std::slice::from_ref(v));
    let nb = |a: &Value, b: &Value| add_remove_neighbors(&domain, a, b);
    let table = distance_to_instability(&qf, &universe, &nb).map_err(|e| ferr(e.to_string()))?;
    let fname = name.to_string();
    Ok(Builtin {
        name: name.to_string(),
        params: vec![decl.ty.clone()],
        ret: Type::Int,
        imp: Arc::new(move |a: &[Value]| {
            table
                .get(&a[0])
                .map(|d| Value::Int(*d))
                .ok_or_else(|| err(&fname, format!("{} is outside the declared universe", a[0])))
        }),
        smt: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_rejects_duplicates() {
        let mut r = Registry::standard();
        let e = r.register_fn("hd2", vec![li()], Type::Int, |a| Ok(a[0].as_list().unwrap()[0].clone()));
        assert!(e.is_ok());
        assert_eq!((r.get("hd2").unwrap().imp)(&[Value::int_list(&[3, 1])]).unwrap(), Value::Int(3));
        assert_eq!(
            r.register_fn("sum", vec![li()], Type::Int, |_| Ok(Value::Int(0))),
            Err(RegistryError::Duplicate("sum".into()))
        );
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[0, 10, 10, 1000]), 10);
        assert_eq!(median(&[0, 0, 1000]), 0);
        assert_eq!(median(&[2, 1]), 1);
        assert_eq!(median(&[]), 0);
    }

    #[test]
    fn mw_update_is_deterministic_and_keeps_total() {
        let d = [2.0 / 3.0; 3];
        let a = mw_update(&d, 2, 0);
        let b = mw_update(&d, 2, 0);
        assert_eq!(a, b);
        assert!((a.iter().sum::<f64>() - 2.0).abs() < 1e-12);
        assert!(a[0] > a[1]);
    }

    #[test]
    fn dti_on_toy_medians() {
        let dom = crate::frontend::ast::Domain::Msets {
            elems: Box::new(crate::frontend::ast::Domain::Ints(0, 2)),
            min_len: 1,
            max_len: 3,
        };
        let universe = dom.enumerate();
        let q = |v: &Value| Ok(Value::Int(median(&v.as_list().unwrap().iter().map(|x| x.as_int().unwrap()).collect::<Vec<_>>())));
        let nb = |a: &Value, b: &Value| add_remove_neighbors(&dom, a, b);
        let t = distance_to_instability(&q, &universe, &nb).unwrap();
        // [1,1,1]: removing or adding one record keeps the median at 1
        assert!(t[&Value::int_list(&[1, 1, 1])] >= 1);
        // [0,1]: removing 0 moves the median from 0 to 1
        assert_eq!(t[&Value::int_list(&[0, 1])], 0);
        for a in &universe {
            for b in &universe {
                if nb(a, b) {
                    let same = q(a).unwrap() == q(b).unwrap();
                    assert!(same || (t[a] == 0 && t[b] == 0));
                    assert!((t[a] - t[b]).abs() <= 1);
                }
            }
        }
    }
}
