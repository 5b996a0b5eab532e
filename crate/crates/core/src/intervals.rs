//! Finite unions of half-open subintervals of `[0, 1)`.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Sorted, pairwise-disjoint, non-adjacent half-open intervals `[lo, hi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSet<S> {
    intervals: Vec<(S, S)>,
}

impl<S: Scalar> Default for IntervalSet<S> {
    fn default() -> Self {
        Self::empty()
    }
}

impl<S: Scalar> IntervalSet<S> {
    pub fn empty() -> Self {
        Self {
            intervals: Vec::new(),
        }
    }

    pub fn unit() -> Self {
        Self::interval(S::zero(), S::one())
    }

    pub fn interval(lo: S, hi: S) -> Self {
        Self::from_intervals(vec![(lo, hi)])
    }

    /// Normalizes arbitrary intervals: clips to `[0,1)`, drops empty pieces, merges overlaps.
    pub fn from_intervals(raw: Vec<(S, S)>) -> Self {
        let mut v: Vec<(S, S)> = raw
            .into_iter()
            .map(|(a, b)| (S::max_of(a, S::zero()), S::min_of(b, S::one())))
            .filter(|(a, b)| a < b)
            .collect();
        v.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("comparable endpoints"));
        let mut out: Vec<(S, S)> = Vec::with_capacity(v.len());
        for (a, b) in v {
            if let Some(last) = out.last_mut() {
                if a <= last.1 {
                    if b > last.1 {
                        last.1 = b;
                    }
                    continue;
                }
            }
            out.push((a, b));
        }
        Self { intervals: out }
    }

    pub fn intervals(&self) -> &[(S, S)] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn component_count(&self) -> usize {
        self.intervals.len()
    }

    pub fn length(&self) -> S {
        self.intervals
            .iter()
            .fold(S::zero(), |acc, (a, b)| acc + (b.clone() - a.clone()))
    }

    pub fn contains(&self, x: &S) -> bool {
        let idx = self.intervals.partition_point(|(a, _)| a <= x);
        idx > 0 && *x < self.intervals[idx - 1].1
    }

    pub fn union(&self, other: &Self) -> Self {
        let mut all = self.intervals.clone();
        all.extend(other.intervals.iter().cloned());
        Self::from_intervals(all)
    }

    pub fn intersect(&self, other: &Self) -> Self {
        let mut out = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < self.intervals.len() && j < other.intervals.len() {
            let (a0, a1) = &self.intervals[i];
            let (b0, b1) = &other.intervals[j];
            let lo = S::max_of(a0.clone(), b0.clone());
            let hi = S::min_of(a1.clone(), b1.clone());
            if lo < hi {
                out.push((lo, hi));
            }
            if a1 < b1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        Self { intervals: out }
    }

    pub fn intersect_interval(&self, lo: &S, hi: &S) -> Self {
        self.intersect(&Self::interval(lo.clone(), hi.clone()))
    }

    pub fn complement(&self) -> Self {
        let mut out = Vec::new();
        let mut cursor = S::zero();
        for (a, b) in &self.intervals {
            if cursor < *a {
                out.push((cursor.clone(), a.clone()));
            }
            cursor = b.clone();
        }
        if cursor < S::one() {
            out.push((cursor, S::one()));
        }
        Self { intervals: out }
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.intersect(other) == *self
    }

    pub fn is_disjoint_from(&self, other: &Self) -> bool {
        self.intersect(other).is_empty()
    }

    /// Whether the set covers `[0,1)` up to finitely many points.
    pub fn is_unit(&self) -> bool {
        self.intervals.len() == 1
            && self.intervals[0].0 == S::zero()
            && self.intervals[0].1 == S::one()
    }

    pub fn map_scalar<T: Scalar>(&self, f: impl Fn(&S) -> T) -> IntervalSet<T> {
        IntervalSet::from_intervals(self.intervals.iter().map(|(a, b)| (f(a), f(b))).collect())
    }

    pub fn to_f64(&self) -> IntervalSet<f64> {
        self.map_scalar(|x| x.to_f64())
    }

    /// All endpoints in increasing order.
    pub fn endpoints(&self) -> Vec<S> {
        self.intervals
            .iter()
            .flat_map(|(a, b)| [a.clone(), b.clone()])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[(f64, f64)]) -> IntervalSet<f64> {
        IntervalSet::from_intervals(v.to_vec())
    }

    #[test]
    fn normalizes_and_merges() {
        let s = set(&[(0.5, 0.7), (0.1, 0.2), (0.15, 0.3), (0.3, 0.35), (0.9, 0.9)]);
        assert_eq!(s.intervals(), &[(0.1, 0.35), (0.5, 0.7)]);
        assert!((s.length() - 0.45).abs() < 1e-15);
    }

    #[test]
    fn complement_and_intersection() {
        let s = set(&[(0.1, 0.2), (0.5, 0.7)]);
        let c = s.complement();
        assert_eq!(c.intervals(), &[(0.0, 0.1), (0.2, 0.5), (0.7, 1.0)]);
        assert!(s.intersect(&c).is_empty());
        assert!(s.union(&c).is_unit());
        let t = set(&[(0.15, 0.6)]);
        assert_eq!(s.intersect(&t).intervals(), &[(0.15, 0.2), (0.5, 0.6)]);
    }

    #[test]
    fn membership_is_half_open() {
        let s = set(&[(0.25, 0.5)]);
        assert!(s.contains(&0.25));
        assert!(!s.contains(&0.5));
        assert!(!s.contains(&0.1));
    }
}
