//! Finite sub-distributions with exact support and float masses.

use std::hash::Hash;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("degenerate normalization: all weights are zero")]
    Degenerate,
    #[error("invalid weight {0}")]
    InvalidWeight(f64),
}

/// A finite sub-distribution. Points are kept sorted by key and every mass is
/// strictly positive.
#[derive(Clone, Debug, PartialEq)]
pub struct Dist<K> {
    points: Vec<(K, f64)>,
    total: f64,
}

impl<K: Clone + Ord + Hash> Dist<K> {
    pub fn empty() -> Dist<K> {
        Dist { points: Vec::new(), total: 0.0 }
    }

    pub fn dirac(k: K) -> Dist<K> {
        Dist { points: vec![(k, 1.0)], total: 1.0 }
    }

    /// Builds a distribution by summing the masses of equal keys. Contributions
    /// are added in iteration order, so equal inputs give bit-identical output.
    pub fn from_weighted(items: impl IntoIterator<Item = (K, f64)>) -> Dist<K> {
        let mut raw: Vec<(K, f64)> = items.into_iter().filter(|(_, p)| *p > 0.0).collect();
        // Stable, so equal keys keep their iteration order for the summation.
        raw.sort_by(|a, b| a.0.cmp(&b.0));
        let mut points: Vec<(K, f64)> = Vec::with_capacity(raw.len());
        for (k, p) in raw {
            match points.last_mut() {
                Some((last, m)) if *last == k => *m += p,
                _ => points.push((k, p)),
            }
        }
        Dist::from_sorted(points)
    }

    fn from_sorted(points: Vec<(K, f64)>) -> Dist<K> {
        let total = points.iter().map(|(_, p)| p).sum();
        Dist { points, total }
    }

    /// Normalizes nonnegative weights into a probability distribution.
    pub fn normalize(weights: impl IntoIterator<Item = (K, f64)>) -> Result<Dist<K>, DistError> {
        let raw: Vec<(K, f64)> = weights.into_iter().collect();
        for (_, w) in &raw {
            if !w.is_finite() || *w < 0.0 {
                return Err(DistError::InvalidWeight(*w));
            }
        }
        let z: f64 = raw.iter().map(|(_, w)| w).sum();
        if z <= 0.0 {
            return Err(DistError::Degenerate);
        }
        Ok(Dist::from_weighted(raw.into_iter().map(|(k, w)| (k, w / z))))
    }

    pub fn mass(&self, k: &K) -> f64 {
        match self.points.binary_search_by(|(p, _)| p.cmp(k)) {
            Ok(i) => self.points[i].1,
            Err(_) => 0.0,
        }
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&K, f64)> {
        self.points.iter().map(|(k, p)| (k, *p))
    }

    pub fn support(&self) -> impl Iterator<Item = &K> {
        self.points.iter().map(|(k, _)| k)
    }

    pub fn into_points(self) -> Vec<(K, f64)> {
        self.points
    }

    /// `f ★ μ`: mass of b is Σ_a f(a)(b)·μ(a).
    pub fn bind<K2: Clone + Ord + Hash>(&self, mut f: impl FnMut(&K) -> Dist<K2>) -> Dist<K2> {
        Dist::from_weighted(
            self.points
                .iter()
                .flat_map(|(a, p)| f(a).points.into_iter().map(move |(b, q)| (b, q * p)))
                .collect::<Vec<_>>(),
        )
    }

    pub fn try_bind<K2: Clone + Ord + Hash, E>(
        &self,
        mut f: impl FnMut(&K) -> Result<Dist<K2>, E>,
    ) -> Result<Dist<K2>, E> {
        let mut items = Vec::new();
        for (a, p) in &self.points {
            for (b, q) in f(a)?.points {
                items.push((b, q * p));
            }
        }
        Ok(Dist::from_weighted(items))
    }

    /// Pushforward along `f`.
    pub fn map<K2: Clone + Ord + Hash>(&self, mut f: impl FnMut(&K) -> K2) -> Dist<K2> {
        Dist::from_weighted(self.points.iter().map(|(k, p)| (f(k), *p)).collect::<Vec<_>>())
    }

    pub fn try_map<K2: Clone + Ord + Hash, E>(
        &self,
        mut f: impl FnMut(&K) -> Result<K2, E>,
    ) -> Result<Dist<K2>, E> {
        let mut items = Vec::with_capacity(self.points.len());
        for (k, p) in &self.points {
            items.push((f(k)?, *p));
        }
        Ok(Dist::from_weighted(items))
    }

    /// Splits the distribution by a predicate on support points.
    pub fn partition(self, mut pred: impl FnMut(&K) -> bool) -> (Dist<K>, Dist<K>) {
        let (yes, no): (Vec<_>, Vec<_>) = self.points.into_iter().partition(|(k, _)| pred(k));
        (Dist::from_sorted(yes), Dist::from_sorted(no))
    }

    pub fn try_partition<E>(
        self,
        mut pred: impl FnMut(&K) -> Result<bool, E>,
    ) -> Result<(Dist<K>, Dist<K>), E> {
        let mut yes = Vec::new();
        let mut no = Vec::new();
        for (k, p) in self.points {
            if pred(&k)? {
                yes.push((k, p));
            } else {
                no.push((k, p));
            }
        }
        Ok((Dist::from_sorted(yes), Dist::from_sorted(no)))
    }

    /// Pointwise sum of two sub-distributions.
    pub fn add(&self, other: &Dist<K>) -> Dist<K> {
        let mut out = Vec::with_capacity(self.points.len() + other.points.len());
        let (mut i, mut j) = (0, 0);
        while i < self.points.len() || j < other.points.len() {
            if j == other.points.len()
                || (i < self.points.len() && self.points[i].0 < other.points[j].0)
            {
                out.push(self.points[i].clone());
                i += 1;
            } else if i == self.points.len() || other.points[j].0 < self.points[i].0 {
                out.push(other.points[j].clone());
                j += 1;
            } else {
                out.push((self.points[i].0.clone(), self.points[i].1 + other.points[j].1));
                i += 1;
                j += 1;
            }
        }
        Dist::from_sorted(out)
    }

    /// The pointwise order: μ ⊑ ν iff μ(a) ≤ ν(a) + tol for every a.
    pub fn le(&self, other: &Dist<K>, tol: f64) -> bool {
        self.points.iter().all(|(k, p)| *p <= other.mass(k) + tol)
    }

    /// Maximum pointwise mass difference over the union of supports.
    pub fn max_abs_diff(&self, other: &Dist<K>) -> f64 {
        let a = self.points.iter().map(|(k, p)| (p - other.mass(k)).abs());
        let b = other.points.iter().map(|(k, p)| (p - self.mass(k)).abs());
        a.chain(b).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(items: &[(&'static str, f64)]) -> Dist<&'static str> {
        Dist::from_weighted(items.iter().copied())
    }

    #[test]
    fn bind_hand_expansion() {
        let mu = d(&[("m1", 0.5), ("m2", 0.5)]);
        let out = mu.bind(|m| if *m == "m1" { d(&[("a", 1.0)]) } else { d(&[("a", 0.5), ("b", 0.5)]) });
        assert!((out.mass(&"a") - 0.75).abs() < 1e-15);
        assert!((out.mass(&"b") - 0.25).abs() < 1e-15);
    }

    #[test]
    fn normalize_quotient() {
        let n = Dist::normalize([("a", 1.0), ("b", 3.0)]).unwrap();
        assert_eq!(n.mass(&"a"), 0.25);
        assert_eq!(n.mass(&"b"), 0.75);
        let s = Dist::normalize([("a", 2.0), ("b", 2.0)]).unwrap();
        assert_eq!(s.mass(&"a"), 0.5);
        assert_eq!(Dist::normalize([("a", 0.0), ("b", 0.0)]), Err(DistError::Degenerate));
    }

    #[test]
    fn dirac_and_identities() {
        let m = Dist::dirac(3);
        assert_eq!(m.mass(&3), 1.0);
        assert_eq!(m.mass(&4), 0.0);
        let f = |x: &i32| Dist::from_weighted([(x + 1, 0.5), (x + 2, 0.5)]);
        assert_eq!(m.bind(f), f(&3));
        let mu = Dist::from_weighted([(1, 0.25), (2, 0.75)]);
        assert_eq!(mu.bind(|x| Dist::dirac(*x)), mu);
    }

    #[test]
    fn zero_masses_are_pruned() {
        let mu = Dist::from_weighted([(1, 0.0), (2, 0.5)]);
        assert_eq!(mu.len(), 1);
    }

    #[test]
    fn constant_kernel() {
        let mu = d(&[("m1", 0.5), ("m2", 0.5)]);
        let nu = d(&[("x", 0.25), ("y", 0.75)]);
        let out = mu.bind(|_| nu.clone());
        assert!(out.max_abs_diff(&nu) < 1e-15);
    }
}
