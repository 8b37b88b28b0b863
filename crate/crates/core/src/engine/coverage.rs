//! Character-range coverage bookkeeping.
//!
//! Coverage is kept per script as a set of covered character ranges. The
//! simulator models each abstract code unit as a script of `weight`
//! characters that is either fully covered or not.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Sorted, disjoint, non-adjacent half-open ranges.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IntervalSet(Vec<(u64, u64)>);

impl IntervalSet {
    pub fn new() -> Self {
        IntervalSet(Vec::new())
    }

    pub fn from_ranges(ranges: impl IntoIterator<Item = (u64, u64)>) -> Self {
        let mut set = IntervalSet::new();
        for (s, e) in ranges {
            set.insert(s, e);
        }
        set
    }

    pub fn ranges(&self) -> &[(u64, u64)] {
        &self.0
    }

    pub fn insert(&mut self, start: u64, end: u64) {
        if start >= end {
            return;
        }
        let (mut s, mut e) = (start, end);
        let mut out = Vec::with_capacity(self.0.len() + 1);
        let mut placed = false;
        for &(a, b) in &self.0 {
            if b < s {
                out.push((a, b));
            } else if e < a {
                if !placed {
                    out.push((s, e));
                    placed = true;
                }
                out.push((a, b));
            } else {
                s = s.min(a);
                e = e.max(b);
            }
        }
        if !placed {
            out.push((s, e));
        }
        self.0 = out;
    }

    pub fn union_with(&mut self, other: &IntervalSet) {
        for &(s, e) in &other.0 {
            self.insert(s, e);
        }
    }

    /// Removes `[start, end)`.
    pub fn remove(&mut self, start: u64, end: u64) {
        if start >= end {
            return;
        }
        let mut out = Vec::with_capacity(self.0.len() + 1);
        for &(a, b) in &self.0 {
            if b <= start || a >= end {
                out.push((a, b));
                continue;
            }
            if a < start {
                out.push((a, start));
            }
            if b > end {
                out.push((end, b));
            }
        }
        self.0 = out;
    }

    pub fn len(&self) -> u64 {
        self.0.iter().map(|(a, b)| b - a).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_subset_of(&self, other: &IntervalSet) -> bool {
        self.0
            .iter()
            .all(|&(a, b)| other.0.iter().any(|&(c, d)| c <= a && b <= d))
    }
}

/// Covered character ranges keyed by script identity.
pub type CoverageMap = BTreeMap<String, IntervalSet>;

pub fn merge_into(target: &mut CoverageMap, sample: &CoverageMap) {
    for (key, set) in sample {
        target.entry(key.clone()).or_default().union_with(set);
    }
}

pub fn weight(map: &CoverageMap) -> u64 {
    map.values().map(IntervalSet::len).sum()
}

/// What one crawl covered, and the reference set it is measured against.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CoverageLedger {
    pub covered: CoverageMap,
    /// Union over every compared run; `None` until finalized.
    pub maximal_set: Option<CoverageMap>,
}

impl CoverageLedger {
    pub fn record(&mut self, sample: &CoverageMap) {
        merge_into(&mut self.covered, sample);
    }

    pub fn covered_weight(&self) -> u64 {
        weight(&self.covered)
    }

    /// Covered weight over maximal-set weight; `None` before finalization.
    pub fn ratio(&self) -> Option<f64> {
        let maximal = self.maximal_set.as_ref()?;
        let total = weight(maximal);
        Some(if total == 0 {
            0.0
        } else {
            self.covered_weight() as f64 / total as f64
        })
    }

    pub fn is_within_maximal(&self) -> bool {
        self.maximal_set.as_ref().is_some_and(|m| {
            self.covered
                .iter()
                .all(|(k, s)| m.get(k).is_some_and(|ms| s.is_subset_of(ms)) || s.is_empty())
        })
    }
}

/// Sets every ledger's maximal set to the union of all of them.
pub fn finalize_maximal_set<'a>(ledgers: impl IntoIterator<Item = &'a mut CoverageLedger>) {
    let ledgers: Vec<&mut CoverageLedger> = ledgers.into_iter().collect();
    let mut union = CoverageMap::new();
    for l in &ledgers {
        merge_into(&mut union, &l.covered);
    }
    for l in ledgers {
        l.maximal_set = Some(union.clone());
    }
}
