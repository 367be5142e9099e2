//! Enumeration of finite variable domains and the record-level adjacency relations.

use super::value::Value;
use crate::frontend::ast::Domain;

impl Domain {
    /// All values of the domain in canonical (sorted) order.
    pub fn enumerate(&self) -> Vec<Value> {
        let mut out = match self {
            Domain::Ints(lo, hi) => (*lo..=*hi).map(Value::Int).collect(),
            Domain::Values(vs) => vs.clone(),
            Domain::Bools => vec![Value::Bool(false), Value::Bool(true)],
            Domain::Lists { elems, min_len, max_len } => {
                let base = elems.enumerate();
                let mut out = Vec::new();
                let mut layer: Vec<Vec<Value>> = vec![Vec::new()];
                for len in 0..=*max_len {
                    if len >= *min_len {
                        out.extend(layer.iter().cloned().map(Value::list));
                    }
                    if len == *max_len {
                        break;
                    }
                    layer = layer
                        .iter()
                        .flat_map(|prefix| {
                            base.iter().map(move |v| {
                                let mut p = prefix.clone();
                                p.push(v.clone());
                                p
                            })
                        })
                        .collect();
                }
                out
            }
            Domain::Msets { elems, min_len, max_len } => {
                let base = elems.enumerate();
                let mut out = Vec::new();
                let mut cur = Vec::new();
                msets(&base, 0, *min_len, *max_len, &mut cur, &mut out);
                out
            }
            Domain::Hist { bins, max_total } => {
                let mut out = Vec::new();
                let mut cur = Vec::new();
                hists(*bins, *max_total, &mut cur, &mut out);
                out
            }
        };
        out.sort();
        out.dedup();
        out
    }

    pub fn contains(&self, v: &Value) -> bool {
        match (self, v) {
            (Domain::Ints(lo, hi), Value::Int(i)) => lo <= i && i <= hi,
            (Domain::Bools, Value::Bool(_)) => true,
            (Domain::Values(vs), v) => vs.iter().any(|w| w.num_eq(v)),
            (Domain::Lists { elems, min_len, max_len }, Value::List(l)) => {
                l.len() >= *min_len && l.len() <= *max_len && l.iter().all(|x| elems.contains(x))
            }
            (Domain::Msets { elems, min_len, max_len }, Value::List(l)) => {
                l.len() >= *min_len
                    && l.len() <= *max_len
                    && l.windows(2).all(|w| w[0] <= w[1])
                    && l.iter().all(|x| elems.contains(x))
            }
            (Domain::Hist { bins, max_total }, Value::List(l)) => {
                l.len() == *bins
                    && l.iter().all(|x| matches!(x, Value::Int(i) if *i >= 0))
                    && l.iter().filter_map(Value::as_int).sum::<i64>() <= *max_total
            }
            _ => false,
        }
    }
}

fn msets(base: &[Value], from: usize, min: usize, max: usize, cur: &mut Vec<Value>, out: &mut Vec<Value>) {
    if cur.len() >= min {
        out.push(Value::list(cur.clone()));
    }
    if cur.len() == max {
        return;
    }
    for i in from..base.len() {
        cur.push(base[i].clone());
        msets(base, i, min, max, cur, out);
        cur.pop();
    }
}

fn hists(bins: usize, left: i64, cur: &mut Vec<Value>, out: &mut Vec<Value>) {
    if cur.len() == bins {
        out.push(Value::list(cur.clone()));
        return;
    }
    for c in 0..=left {
        cur.push(Value::Int(c));
        hists(bins, left - c, cur, out);
        cur.pop();
    }
}

/// Same length, exactly one position differs, by exactly one.
pub fn one_entry_pm1(a: &Value, b: &Value) -> bool {
    match (a.as_list(), b.as_list()) {
        (Some(x), Some(y)) if x.len() == y.len() => {
            let mut diffs = 0;
            for (u, v) in x.iter().zip(y) {
                if u != v {
                    match (u.as_int(), v.as_int()) {
                        (Some(i), Some(j)) if (i - j).abs() == 1 => diffs += 1,
                        _ => return false,
                    }
                }
            }
            diffs == 1
        }
        _ => false,
    }
}

/// Histograms (same number of bins) at L1 distance exactly one.
pub fn hist_neighbors(a: &Value, b: &Value) -> bool {
    match (a.as_list(), b.as_list()) {
        (Some(x), Some(y)) if x.len() == y.len() => {
            let mut d = 0i64;
            for (u, v) in x.iter().zip(y) {
                match (u.as_int(), v.as_int()) {
                    (Some(i), Some(j)) => d += (i - j).abs(),
                    _ => return false,
                }
            }
            d == 1
        }
        _ => false,
    }
}

/// Size of the multiset symmetric difference of two lists.
pub fn mset_distance(a: &[Value], b: &[Value]) -> usize {
    let mut x: Vec<&Value> = a.iter().collect();
    let mut y: Vec<&Value> = b.iter().collect();
    x.sort();
    y.sort();
    let (mut i, mut j, mut d) = (0, 0, 0);
    while i < x.len() && j < y.len() {
        match x[i].cmp(y[j]) {
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
            std::cmp::Ordering::Less => {
                d += 1;
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                d += 1;
                j += 1;
            }
        }
    }
    d + (x.len() - i) + (y.len() - j)
}

/// Multisets differing by exactly one added or removed record.
pub fn mset_neighbors(a: &Value, b: &Value) -> bool {
    match (a.as_list(), b.as_list()) {
        (Some(x), Some(y)) => mset_distance(x, y) == 1,
        _ => false,
    }
}

/// The add/remove-one-record relation appropriate for a domain.
pub fn add_remove_neighbors(domain: &Domain, a: &Value, b: &Value) -> bool {
    match domain {
        Domain::Hist { .. } => hist_neighbors(a, b),
        _ => mset_neighbors(a, b),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn list_counts() {
        let d = Domain::Lists { elems: Box::new(Domain::Ints(0, 1)), min_len: 0, max_len: 3 };
        assert_eq!(d.enumerate().len(), 15);
        let m = Domain::Msets { elems: Box::new(Domain::Ints(0, 2)), min_len: 1, max_len: 3 };
        // 3 + 6 + 10 multisets of sizes 1, 2, 3 over 3 elements
        assert_eq!(m.enumerate().len(), 19);
        let h = Domain::Hist { bins: 3, max_total: 2 };
        // compositions of 0, 1, 2 into 3 parts: 1 + 3 + 6
        assert_eq!(h.enumerate().len(), 10);
        assert!(h.enumerate().iter().all(|v| h.contains(v)));
    }

    #[test]
    fn one_entry_examples() {
        let a = Value::int_list(&[0, 0]);
        assert!(one_entry_pm1(&a, &Value::int_list(&[1, 0])));
        assert!(!one_entry_pm1(&a, &Value::int_list(&[1, 1])));
        assert!(!one_entry_pm1(&a, &a));
    }

    #[test]
    fn histogram_add_remove() {
        assert!(hist_neighbors(&Value::int_list(&[1, 1]), &Value::int_list(&[2, 1])));
        assert!(!hist_neighbors(&Value::int_list(&[1, 1]), &Value::int_list(&[2, 2])));
    }

    #[test]
    fn multiset_distance() {
        let a = Value::int_list(&[0, 1, 1]);
        let b = Value::int_list(&[1, 1]);
        assert!(mset_neighbors(&a, &b));
        assert!(!mset_neighbors(&a, &Value::int_list(&[0, 1, 2])));
    }
}
