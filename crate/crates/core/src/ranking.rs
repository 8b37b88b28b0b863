//! Style signatures and the examination registry used to push
//! similar-looking actionables back in the exploration order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{FeatureVector, CSS_PROPERTIES, PREDICTOR_SOURCE_PROPERTIES};

pub const REGISTRY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RankingError {
    #[error("signatures have {left} and {right} slots")]
    SchemaMismatch { left: usize, right: usize },
    #[error("cannot load registry: {0}")]
    Load(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Names of the signature slots: every CSS feature followed by the
/// predictor source properties that are not CSS features themselves.
pub fn signature_schema() -> Vec<&'static str> {
    CSS_PROPERTIES
        .iter()
        .chain(PREDICTOR_SOURCE_PROPERTIES.iter())
        .copied()
        .collect()
}

/// Position-free description of how an element looks.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StyleSignature(pub Vec<String>);

impl StyleSignature {
    pub fn slots(&self) -> &[String] {
        &self.0
    }
}

pub fn signature_of(fv: &FeatureVector) -> StyleSignature {
    StyleSignature(
        fv.css
            .iter()
            .map(|v| v.to_canonical_string())
            .chain(fv.predictor_sources.iter().cloned())
            .collect(),
    )
}

/// Fraction of slots that differ.
pub fn delta(a: &StyleSignature, b: &StyleSignature) -> Result<f64, RankingError> {
    if a.0.len() != b.0.len() {
        return Err(RankingError::SchemaMismatch {
            left: a.0.len(),
            right: b.0.len(),
        });
    }
    if a.0.is_empty() {
        return Ok(0.0);
    }
    let unequal = a.0.iter().zip(&b.0).filter(|(x, y)| x != y).count();
    Ok(unequal as f64 / a.0.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub signature: StyleSignature,
    pub count: u64,
}

/// Signatures examined so far in one crawl session, with how often each
/// was examined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExaminationRegistry {
    pub epsilon: f64,
    pub entries: Vec<RegistryEntry>,
}

impl Default for ExaminationRegistry {
    fn default() -> Self {
        ExaminationRegistry::new(0.0)
    }
}

impl ExaminationRegistry {
    pub fn new(epsilon: f64) -> Self {
        ExaminationRegistry {
            epsilon,
            entries: Vec::new(),
        }
    }

    fn matches(&self, a: &StyleSignature, b: &StyleSignature) -> bool {
        if self.epsilon == 0.0 {
            a == b
        } else {
            delta(a, b).is_ok_and(|d| d < self.epsilon)
        }
    }

    /// Index of the first entry matching `sig`.
    pub fn lookup(&self, sig: &StyleSignature) -> Option<usize> {
        self.entries.iter().position(|e| self.matches(sig, &e.signature))
    }

    pub fn count_for(&self, sig: &StyleSignature) -> Option<u64> {
        self.lookup(sig).map(|i| self.entries[i].count)
    }

    pub fn record_examination(&mut self, sig: &StyleSignature) {
        match self.lookup(sig) {
            Some(i) => self.entries[i].count += 1,
            None => self.entries.push(RegistryEntry {
                signature: sig.clone(),
                count: 1,
            }),
        }
    }

    pub fn total_examinations(&self) -> u64 {
        self.entries.iter().map(|e| e.count).sum()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Orders candidates: those matching no entry first, in input order,
    /// then the rest by ascending count of the matched entry, ties in input
    /// order.
    pub fn rank<T>(&self, candidates: Vec<T>, signature: impl Fn(&T) -> &StyleSignature) -> Vec<T> {
        self.rank_keyed(candidates, |c| self.count_for(signature(c)).unwrap_or(0))
    }

    /// As [`rank`](Self::rank), with signatures stored outside the
    /// candidates.
    pub fn rank_with<'s, T>(
        &self,
        candidates: Vec<T>,
        signature: impl Fn(&T) -> &'s StyleSignature,
    ) -> Vec<T> {
        self.rank_keyed(candidates, |c| self.count_for(signature(c)).unwrap_or(0))
    }

    fn rank_keyed<T>(&self, candidates: Vec<T>, key: impl Fn(&T) -> u64) -> Vec<T> {
        let mut keyed: Vec<(u64, usize, T)> = candidates
            .into_iter()
            .enumerate()
            .map(|(i, c)| (key(&c), i, c))
            .collect();
        keyed.sort_by_key(|(k, i, _)| (*k, *i));
        keyed.into_iter().map(|(_, _, c)| c).collect()
    }

    pub fn to_json(&self) -> String {
        let file = RegistryFile {
            schema_version: REGISTRY_SCHEMA_VERSION,
            signature_schema: signature_schema().into_iter().map(String::from).collect(),
            registry: self.clone(),
        };
        serde_json::to_string_pretty(&file).expect("registry serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, RankingError> {
        let file: RegistryFile =
            serde_json::from_str(text).map_err(|e| RankingError::Load(e.to_string()))?;
        if file.schema_version != REGISTRY_SCHEMA_VERSION {
            return Err(RankingError::Load(format!(
                "unsupported schema version {}",
                file.schema_version
            )));
        }
        let schema = signature_schema();
        if file.signature_schema != schema {
            return Err(RankingError::Load("signature schema mismatch".into()));
        }
        let reg = file.registry;
        if !(reg.epsilon.is_finite() && reg.epsilon >= 0.0) {
            return Err(RankingError::Load(format!("invalid epsilon {}", reg.epsilon)));
        }
        for e in &reg.entries {
            if e.signature.0.len() != schema.len() || e.count == 0 {
                return Err(RankingError::Load("malformed registry entry".into()));
            }
        }
        Ok(reg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RankingError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RankingError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct RegistryFile {
    schema_version: u32,
    signature_schema: Vec<String>,
    #[serde(flatten)]
    registry: ExaminationRegistry,
}

/// A candidate actionable as seen by the ranking step.
#[derive(Clone, Debug, PartialEq)]
pub struct RankCandidate<Id> {
    pub id: Id,
    pub signature: StyleSignature,
}

pub fn rank_actionables<Id>(
    registry: &ExaminationRegistry,
    candidates: Vec<RankCandidate<Id>>,
) -> Vec<RankCandidate<Id>> {
    registry.rank(candidates, |c| &c.signature)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FeatureValue;
    use crate::synth::plain_element;

    fn sig(tag: &str) -> StyleSignature {
        let mut s = signature_of(&plain_element(0, "div").features);
        s.0[0] = tag.to_string();
        s
    }

    #[test]
    fn position_is_ignored() {
        let a = plain_element(0, "div").features;
        let mut b = a.clone();
        b.bounding_box.x = 999.0;
        b.dom_depth = 7;
        b.descendant_count = 3;
        b.subtree_height = 2;
        assert_eq!(signature_of(&a), signature_of(&b));
        assert_eq!(signature_of(&a).0.len(), 60);
    }

    #[test]
    fn background_url_distinguishes() {
        let a = plain_element(0, "div").features;
        let mut b = a.clone();
        let mut c = a.clone();
        let i = PREDICTOR_SOURCE_PROPERTIES.iter().position(|p| *p == "background-image").unwrap();
        b.predictor_sources[i] = "url(a.png)".into();
        c.predictor_sources[i] = "url(b.png)".into();
        // Both have a background, yet they do not look the same.
        assert_ne!(signature_of(&b), signature_of(&c));
        b.css[29] = FeatureValue::Num(0.5);
        assert_eq!(signature_of(&b).0[29], "0.5");
    }

    #[test]
    fn delta_cases() {
        let a = sig("x");
        assert_eq!(delta(&a, &a).unwrap(), 0.0);
        assert_eq!(delta(&a, &sig("y")).unwrap(), 1.0 / 60.0);
        let all = StyleSignature(a.0.iter().map(|s| format!("{s}!")).collect());
        assert_eq!(delta(&a, &all).unwrap(), 1.0);
        assert!(delta(&a, &StyleSignature(vec![])).is_err());
    }

    #[test]
    fn recording() {
        let mut reg = ExaminationRegistry::default();
        reg.record_examination(&sig("a"));
        assert_eq!(reg.entries, vec![RegistryEntry { signature: sig("a"), count: 1 }]);
        reg.record_examination(&sig("a"));
        assert_eq!(reg.len(), 1);
        assert_eq!(reg.entries[0].count, 2);
        reg.record_examination(&sig("b"));
        assert_eq!(reg.len(), 2);
        assert_eq!(reg.entries[1].count, 1);
        assert_eq!(reg.total_examinations(), 3);
    }

    #[test]
    fn epsilon_threshold_is_strict() {
        let mut reg = ExaminationRegistry::new(1.0 / 60.0);
        reg.record_examination(&sig("a"));
        // Differs in exactly one slot: delta == epsilon is not a match.
        reg.record_examination(&sig("b"));
        assert_eq!(reg.len(), 2);
        let mut loose = ExaminationRegistry::new(0.05);
        loose.record_examination(&sig("a"));
        loose.record_examination(&sig("b"));
        assert_eq!(loose.len(), 1);
        assert_eq!(loose.entries[0].count, 2);
    }

    #[test]
    fn ranking_examples() {
        let cand = |id: &'static str, s: &str| RankCandidate { id, signature: sig(s) };
        let empty = ExaminationRegistry::default();
        let input = vec![cand("A", "a"), cand("B", "b"), cand("C", "c")];
        let ids = |v: Vec<RankCandidate<&'static str>>| v.into_iter().map(|c| c.id).collect::<Vec<_>>();
        assert_eq!(ids(rank_actionables(&empty, input.clone())), vec!["A", "B", "C"]);

        let mut reg = ExaminationRegistry::default();
        for _ in 0..3 {
            reg.record_examination(&sig("a"));
        }
        reg.record_examination(&sig("b"));
        assert_eq!(ids(rank_actionables(&reg, input)), vec!["C", "B", "A"]);

        let same = vec![cand("X", "a"), cand("Y", "a")];
        assert_eq!(ids(rank_actionables(&reg, same)), vec!["X", "Y"]);
    }

    #[test]
    fn registry_file_round_trip() {
        let mut reg = ExaminationRegistry::new(0.1);
        reg.record_examination(&signature_of(&plain_element(0, "div").features));
        let text = reg.to_json();
        let back = ExaminationRegistry::from_json(&text).unwrap();
        assert_eq!(back, reg);
        assert_eq!(back.to_json(), text);
        assert!(ExaminationRegistry::from_json(&text[..20]).is_err());
    }
}
