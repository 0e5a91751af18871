//! Shot selection from a drilling bank.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::DrillBankEntry;
use crate::gateway::EmbeddingVector;

#[derive(Debug, Error, PartialEq)]
pub enum RetrievalError {
    #[error("asked for {k} shots from a bank of {size}")]
    BankTooSmall { k: usize, size: usize },
    #[error("cosine similarity of an all-zero vector")]
    ZeroVector,
    #[error("vector dimensions differ: {expected} vs {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Semantic,
    Syntactic,
    Mixed,
    Random,
}

impl StrategyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Semantic => "semantic",
            StrategyKind::Syntactic => "syntactic",
            StrategyKind::Mixed => "mixed",
            StrategyKind::Random => "random",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = RetrievalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "semantic" => Ok(StrategyKind::Semantic),
            "syntactic" => Ok(StrategyKind::Syntactic),
            "mixed" | "mix" => Ok(StrategyKind::Mixed),
            "random" => Ok(StrategyKind::Random),
            other => Err(RetrievalError::InvalidStrategy(format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionStrategy {
    pub kind: StrategyKind,
    pub k: usize,
    /// Used by `Random` only.
    pub seed: u64,
}

impl SelectionStrategy {
    pub fn new(kind: StrategyKind, k: usize, seed: u64) -> Result<Self, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidStrategy("k must be positive".into()));
        }
        if kind == StrategyKind::Mixed && k % 2 == 1 {
            return Err(RetrievalError::InvalidStrategy(format!(
                "mixed selection needs an even k, got {k}"
            )));
        }
        Ok(SelectionStrategy { kind, k, seed })
    }

    pub fn label(&self) -> String {
        format!("{} k={}", self.kind, self.k)
    }
}

impl Default for SelectionStrategy {
    fn default() -> Self {
        SelectionStrategy {
            kind: StrategyKind::Mixed,
            k: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShotSource {
    Semantic,
    Syntactic,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedShot {
    pub entry: DrillBankEntry,
    pub score: f64,
    pub source: ShotSource,
    /// 1-based.
    pub rank: usize,
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn sim_semantic(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, RetrievalError> {
    if a.dimension() != b.dimension() {
        return Err(RetrievalError::DimensionMismatch {
            expected: a.dimension(),
            got: b.dimension(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.values.iter().zip(&b.values) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(RetrievalError::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Lowercased alphanumeric runs, as a set.
pub fn tokenize(s: &str) -> BTreeSet<String> {
    s.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Share of `s`'s tokens that also occur in `s_i`. Not symmetric.
pub fn sim_syntactic(s: &str, s_i: &str) -> f64 {
    let a = tokenize(s);
    if a.is_empty() {
        return 0.0;
    }
    let b = tokenize(s_i);
    a.intersection(&b).count() as f64 / a.len() as f64
}

fn ranked(entries: &[DrillBankEntry], scores: Vec<f64>) -> Vec<(&DrillBankEntry, f64)> {
    let mut pairs: Vec<(&DrillBankEntry, f64)> = entries.iter().zip(scores).collect();
    pairs.sort_by(|(ea, sa), (eb, sb)| {
        sb.partial_cmp(sa)
            .unwrap_or(Ordering::Equal)
            .then_with(|| ea.example_id.cmp(&eb.example_id))
    });
    pairs
}

/// Every entry by descending cosine similarity, ties by ascending id.
pub fn rank_semantic<'a>(
    entries: &'a [DrillBankEntry],
    question_vec: &EmbeddingVector,
) -> Result<Vec<(&'a DrillBankEntry, f64)>, RetrievalError> {
    let scores = entries
        .iter()
        .map(|e| sim_semantic(question_vec, &e.embedding))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ranked(entries, scores))
}

/// Every entry by descending token overlap with the question.
pub fn rank_syntactic<'a>(entries: &'a [DrillBankEntry], question: &str) -> Vec<(&'a DrillBankEntry, f64)> {
    let q = tokenize(question);
    let scores = entries
        .iter()
        .map(|e| {
            if q.is_empty() {
                0.0
            } else {
                let t = tokenize(&e.question);
                q.intersection(&t).count() as f64 / q.len() as f64
            }
        })
        .collect();
    ranked(entries, scores)
}

fn finish(picked: Vec<(&DrillBankEntry, f64, ShotSource)>) -> Vec<RankedShot> {
    picked
        .into_iter()
        .enumerate()
        .map(|(i, (e, score, source))| RankedShot {
            entry: e.clone(),
            score,
            source,
            rank: i + 1,
        })
        .collect()
}

/// Picks `strategy.k` distinct entries. Mixed takes the semantic and
/// syntactic top halves; overlaps are refilled from each ranking's
/// remainder in turn, semantic first.
pub fn select_shots(
    entries: &[DrillBankEntry],
    question: &str,
    question_vec: &EmbeddingVector,
    strategy: &SelectionStrategy,
) -> Result<Vec<RankedShot>, RetrievalError> {
    let k = strategy.k;
    if k > entries.len() || entries.is_empty() {
        return Err(RetrievalError::BankTooSmall {
            k,
            size: entries.len(),
        });
    }
    let picked: Vec<(&DrillBankEntry, f64, ShotSource)> = match strategy.kind {
        StrategyKind::Semantic => rank_semantic(entries, question_vec)?
            .into_iter()
            .take(k)
            .map(|(e, s)| (e, s, ShotSource::Semantic))
            .collect(),
        StrategyKind::Syntactic => rank_syntactic(entries, question)
            .into_iter()
            .take(k)
            .map(|(e, s)| (e, s, ShotSource::Syntactic))
            .collect(),
        StrategyKind::Random => {
            let mut sorted: Vec<&DrillBankEntry> = entries.iter().collect();
            sorted.sort_by(|a, b| a.example_id.cmp(&b.example_id));
            let mut rng = ChaCha8Rng::seed_from_u64(strategy.seed);
            sample(&mut rng, sorted.len(), k)
                .into_iter()
                .map(|i| (sorted[i], 0.0, ShotSource::Random))
                .collect()
        }
        StrategyKind::Mixed => {
            if k % 2 == 1 {
                return Err(RetrievalError::InvalidStrategy(format!(
                    "mixed selection needs an even k, got {k}"
                )));
            }
            let sem = rank_semantic(entries, question_vec)?;
            let syn = rank_syntactic(entries, question);
            let half = k / 2;
            let mut seen: HashSet<&str> = HashSet::new();
            let mut out = Vec::with_capacity(k);
            let lists = [(&sem, ShotSource::Semantic), (&syn, ShotSource::Syntactic)];
            for (list, source) in lists {
                for (e, s) in list.iter().take(half) {
                    if seen.insert(e.example_id.as_str()) {
                        out.push((*e, *s, source));
                    }
                }
            }
            let mut cursors = [half, half];
            let mut turn = 0;
            while out.len() < k {
                let (list, source) = lists[turn];
                let cur = &mut cursors[turn];
                while *cur < list.len() {
                    let (e, s) = list[*cur];
                    *cur += 1;
                    if seen.insert(e.example_id.as_str()) {
                        out.push((e, s, source));
                        break;
                    }
                }
                turn = 1 - turn;
            }
            out
        }
    };
    Ok(finish(picked))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::QueryGroup;
    use proptest::prelude::*;

    fn entry(id: &str, question: &str, v: Vec<f64>) -> DrillBankEntry {
        DrillBankEntry {
            example_id: id.into(),
            group: QueryGroup::Simple,
            db_id: "d".into(),
            question: question.into(),
            schema_text: String::new(),
            reasoning: String::new(),
            sql: "SELECT 1".into(),
            embedding: EmbeddingVector::new(v),
        }
    }

    fn ev(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(v.to_vec())
    }

    #[test]
    fn cosine_examples() {
        assert!((sim_semantic(&ev(&[1.0, 2.0]), &ev(&[1.0, 2.0])).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(sim_semantic(&ev(&[1.0, 0.0, 0.0]), &ev(&[0.0, 1.0, 0.0])).unwrap(), 0.0);
        let c = sim_semantic(&ev(&[1.0, 2.0, 2.0]), &ev(&[2.0, 1.0, 2.0])).unwrap();
        assert!((c - 8.0 / 9.0).abs() < 1e-12);
        assert_eq!(sim_semantic(&ev(&[0.0, 0.0]), &ev(&[1.0, 0.0])), Err(RetrievalError::ZeroVector));
        assert!(matches!(
            sim_semantic(&ev(&[1.0]), &ev(&[1.0, 0.0])),
            Err(RetrievalError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn tokenizer() {
        let t: Vec<String> = tokenize("How many heads?").into_iter().collect();
        assert_eq!(t, vec!["heads", "how", "many"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("56-year-old").len(), 3);
    }

    #[test]
    fn overlap_ratio() {
        let s = "how many heads of the departments are older than 56";
        let si = "how many departments are there";
        assert_eq!(sim_syntactic(s, si), 0.4);
        assert!((sim_syntactic(si, s) - 0.8).abs() < 1e-12);
        assert_eq!(sim_syntactic(s, s), 1.0);
        assert_eq!(sim_syntactic("abc", "xyz"), 0.0);
        assert_eq!(sim_syntactic("", "xyz"), 0.0);
    }

    #[test]
    fn mixed_takes_both_top_halves() {
        let bank = vec![
            entry("a", "zzz", vec![1.0, 0.0]),
            entry("b", "zzz", vec![0.9, 0.1]),
            entry("c", "red apples", vec![-1.0, 0.0]),
            entry("d", "red pears", vec![-0.9, -0.2]),
            entry("e", "nothing", vec![0.0, 1.0]),
        ];
        let s = SelectionStrategy::new(StrategyKind::Mixed, 4, 0).unwrap();
        let shots = select_shots(&bank, "red apples", &ev(&[1.0, 0.0]), &s).unwrap();
        let ids: Vec<&str> = shots.iter().map(|r| r.entry.example_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b", "c", "d"]);
        assert_eq!(shots.iter().map(|r| r.rank).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    }

    #[test]
    fn mixed_refills_when_tops_coincide() {
        // semantic order: a b c d e f; syntactic order: a b e f c d
        let bank = vec![
            entry("a", "w1 w2 w3 w4", vec![1.0, 0.0]),
            entry("b", "w1 w2 w3", vec![0.99, 0.1]),
            entry("c", "x", vec![0.9, 0.3]),
            entry("d", "y", vec![0.8, 0.5]),
            entry("e", "w1 w2", vec![0.1, 1.0]),
            entry("f", "w1", vec![-0.5, 1.0]),
        ];
        let s = SelectionStrategy::new(StrategyKind::Mixed, 4, 0).unwrap();
        let shots = select_shots(&bank, "w1 w2 w3 w4", &ev(&[1.0, 0.0]), &s).unwrap();
        let ids: Vec<&str> = shots.iter().map(|r| r.entry.example_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b", "c", "e"]);
        assert_eq!(shots[2].source, ShotSource::Semantic);
        assert_eq!(shots[3].source, ShotSource::Syntactic);
    }

    #[test]
    fn errors() {
        let bank = vec![entry("a", "q", vec![1.0]), entry("b", "q", vec![1.0]), entry("c", "q", vec![1.0])];
        let s = SelectionStrategy::new(StrategyKind::Semantic, 4, 0).unwrap();
        assert_eq!(
            select_shots(&bank, "q", &ev(&[1.0]), &s),
            Err(RetrievalError::BankTooSmall { k: 4, size: 3 })
        );
        assert!(SelectionStrategy::new(StrategyKind::Mixed, 3, 0).is_err());
        assert!(SelectionStrategy::new(StrategyKind::Semantic, 0, 0).is_err());
        assert_eq!("Mixed".parse::<StrategyKind>().unwrap(), StrategyKind::Mixed);
    }

    #[test]
    fn ties_break_by_id() {
        let bank = vec![entry("b", "q", vec![1.0]), entry("a", "q", vec![1.0])];
        let s = SelectionStrategy::new(StrategyKind::Syntactic, 1, 0).unwrap();
        let shots = select_shots(&bank, "q", &ev(&[1.0]), &s).unwrap();
        assert_eq!(shots[0].entry.example_id, "a");
    }

    fn bank_strategy() -> impl Strategy<Value = Vec<DrillBankEntry>> {
        prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 4..40).prop_map(|vs| {
            vs.into_iter()
                .enumerate()
                .map(|(i, mut v)| {
                    v[0] += 1e-3;
                    entry(&format!("{i:03}"), &format!("word{} word{}", i % 5, i % 7), v)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn strategies_return_distinct_contiguous_shots(bank in bank_strategy(), seed in any::<u64>(), kind in 0usize..4) {
            let kind = [StrategyKind::Semantic, StrategyKind::Syntactic, StrategyKind::Mixed, StrategyKind::Random][kind];
            let s = SelectionStrategy::new(kind, 4, seed).unwrap();
            let shots = select_shots(&bank, "word1 word2 word3", &ev(&[0.3, -0.2, 0.5]), &s).unwrap();
            prop_assert_eq!(shots.len(), 4);
            let ids: HashSet<&str> = shots.iter().map(|r| r.entry.example_id.as_str()).collect();
            prop_assert_eq!(ids.len(), 4);
            prop_assert!(shots.iter().enumerate().all(|(i, r)| r.rank == i + 1));
            let again = select_shots(&bank, "word1 word2 word3", &ev(&[0.3, -0.2, 0.5]), &s).unwrap();
            prop_assert_eq!(shots, again);
        }

        #[test]
        fn cosine_is_symmetric_and_scale_invariant(a in prop::collection::vec(0.1f64..1.0, 5), b in prop::collection::vec(-1.0f64..1.0, 5), c in 0.01f64..100.0) {
            let (va, vb) = (ev(&a), ev(&b));
            prop_assume!(!vb.is_zero());
            prop_assert!((sim_semantic(&va, &vb).unwrap() - sim_semantic(&vb, &va).unwrap()).abs() < 1e-12);
            let scaled = EmbeddingVector::new(a.iter().map(|x| x * c).collect());
            prop_assert!((sim_semantic(&va, &scaled).unwrap() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn overlap_is_a_fraction(s in "[a-c ]{0,12}", t in "[a-c ]{0,12}") {
            let v = sim_syntactic(&s, &t);
            prop_assert!((0.0..=1.0).contains(&v));
            if !tokenize(&s).is_empty() {
                prop_assert_eq!(sim_syntactic(&s, &s), 1.0);
            }
        }

        #[test]
        fn random_with_full_k_covers_the_bank(bank in bank_strategy(), seed in any::<u64>()) {
            let s = SelectionStrategy::new(StrategyKind::Random, bank.len(), seed).unwrap();
            let shots = select_shots(&bank, "q", &ev(&[1.0, 0.0, 0.0]), &s).unwrap();
            let ids: BTreeSet<&str> = shots.iter().map(|r| r.entry.example_id.as_str()).collect();
            prop_assert_eq!(ids.len(), bank.len());
        }
    }
}
