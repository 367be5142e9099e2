//! Immutable variable-to-value maps, ordered canonically by variable name.

use std::cell::RefCell;
use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use super::value::Value;

#[derive(Clone, Debug, Default, Hash)]
pub struct Memory {
    entries: Vec<(Arc<str>, Value)>,
}

thread_local! {
    static NAMES: RefCell<HashSet<Arc<str>>> = RefCell::new(HashSet::new());
}

/// Shared name allocation, so equal names usually compare by pointer.
fn intern(name: &str) -> Arc<str> {
    NAMES.with(|n| {
        let mut n = n.borrow_mut();
        if let Some(a) = n.get(name) {
            return a.clone();
        }
        let a: Arc<str> = Arc::from(name);
        n.insert(a.clone());
        a
    })
}

fn name_cmp(a: &Arc<str>, b: &Arc<str>) -> Ordering {
    if Arc::ptr_eq(a, b) {
        Ordering::Equal
    } else {
        a.cmp(b)
    }
}

impl PartialEq for Memory {
    fn eq(&self, other: &Memory) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Memory {}

impl PartialOrd for Memory {
    fn partial_cmp(&self, other: &Memory) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Memory {
    fn cmp(&self, other: &Memory) -> Ordering {
        for ((ka, va), (kb, vb)) in self.entries.iter().zip(&other.entries) {
            let o = name_cmp(ka, kb).then_with(|| va.cmp(vb));
            if o != Ordering::Equal {
                return o;
            }
        }
        self.entries.len().cmp(&other.entries.len())
    }
}

impl Memory {
    pub fn new() -> Memory {
        Memory::default()
    }

    pub fn from_pairs<S: AsRef<str>>(pairs: impl IntoIterator<Item = (S, Value)>) -> Memory {
        let mut m = Memory::new();
        for (k, v) in pairs {
            m.insert(k.as_ref(), v);
        }
        m
    }

    fn position(&self, name: &str) -> Result<usize, usize> {
        self.entries.binary_search_by(|(k, _)| k.as_ref().cmp(name))
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.position(name).ok().map(|i| &self.entries[i].1)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.position(name).is_ok()
    }

    /// Returns an updated copy.
    pub fn set(&self, name: &str, value: Value) -> Memory {
        let mut m = self.clone();
        m.insert(name, value);
        m
    }

    pub fn insert(&mut self, name: &str, value: Value) {
        match self.position(name) {
            Ok(i) => self.entries[i].1 = value,
            Err(i) => self.entries.insert(i, (intern(name), value)),
        }
    }

    pub fn remove(&mut self, name: &str) -> Option<Value> {
        self.position(name).ok().map(|i| self.entries.remove(i).1)
    }

    /// Keeps only the variables accepted by `keep`.
    pub fn retain(&mut self, mut keep: impl FnMut(&str) -> bool) {
        self.entries.retain(|(k, _)| keep(k));
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Value)> {
        self.entries.iter().map(|(k, v)| (k.as_ref(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_ref())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Union; entries of `other` win on conflicts.
    pub fn merged(&self, other: &Memory) -> Memory {
        let mut m = self.clone();
        for (k, v) in other.iter() {
            m.insert(k, v.clone());
        }
        m
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut obj = serde_json::Map::new();
        for (k, v) in self.iter() {
            obj.insert(k.to_string(), v.to_json());
        }
        serde_json::Value::Object(obj)
    }
}

impl fmt::Display for Memory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, (k, v)) in self.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{k} = {v}")?;
        }
        write!(f, "}}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_is_persistent() {
        let m = Memory::from_pairs([("y", Value::Int(1)), ("x", Value::Int(0))]);
        let m2 = m.set("x", Value::Int(5));
        assert_eq!(m.get("x"), Some(&Value::Int(0)));
        assert_eq!(m2.get("x"), Some(&Value::Int(5)));
        assert_eq!(m2.names().collect::<Vec<_>>(), vec!["x", "y"]);
    }

    #[test]
    fn display_is_sorted() {
        let m = Memory::from_pairs([("b", Value::Bool(true)), ("a", Value::int_list(&[1]))]);
        assert_eq!(m.to_string(), "{a = [1], b = true}");
    }
}
