//! Problem-group assignment: keyword labels from gold SQL, priority
//! collapse to a single group, and question classification at test time.

mod classifier;
pub mod lexer;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use classifier::{
    build_classification_prompt, parse_classification, ClassifierKind, ClassifyError,
    GroupClassifier, CLASSIFICATION_HEADER,
};

use crate::corpus::{QueryExample, QueryGroup};
use lexer::{lex, LexError, Token};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PartitionError {
    #[error("cannot lex SQL at byte {position}: {source}")]
    UnlexableSql { position: usize, source: LexError },
    #[error("example `{example_id}`: {source}")]
    InExample {
        example_id: String,
        #[source]
        source: Box<PartitionError>,
    },
}

impl From<LexError> for PartitionError {
    fn from(source: LexError) -> Self {
        PartitionError::UnlexableSql {
            position: source.position(),
            source,
        }
    }
}

/// Every group a gold query exhibits, plus the single priority label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupLabelSet {
    pub labels: BTreeSet<QueryGroup>,
    pub primary: QueryGroup,
}

impl GroupLabelSet {
    pub fn from_labels(mut labels: BTreeSet<QueryGroup>) -> Self {
        if labels.is_empty() {
            labels.insert(QueryGroup::Simple);
        }
        let primary = *labels.iter().next_back().expect("non-empty");
        GroupLabelSet { labels, primary }
    }

    pub fn contains(&self, group: QueryGroup) -> bool {
        self.labels.contains(&group)
    }
}

/// Formats like the multi-label buckets of the fine-grained analysis table:
/// `(Combination, Filtering,)`.
impl fmt::Display for GroupLabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const ORDER: [QueryGroup; 4] = [
            QueryGroup::Combination,
            QueryGroup::MultiSet,
            QueryGroup::Filtering,
            QueryGroup::Simple,
        ];
        let names: Vec<&str> = ORDER
            .iter()
            .filter(|g| self.labels.contains(g))
            .map(|g| g.title())
            .collect();
        write!(f, "({},)", names.join(", "))
    }
}

fn next_is_by(tokens: &[Token<'_>], i: usize) -> bool {
    tokens.get(i + 1).is_some_and(|t| t.is_keyword("BY"))
}

/// Keyword-driven labels: set operators → MultiSet, `GROUP BY` →
/// Combination, `WHERE` → Filtering, none → Simple. Nested subqueries count
/// toward the whole statement. `HAVING` alone does not mark Filtering.
pub fn extract_keyword_labels(sql: &str) -> Result<GroupLabelSet, PartitionError> {
    let tokens = lex(sql)?;
    let mut labels = BTreeSet::new();
    for (i, tok) in tokens.iter().enumerate() {
        if tok.is_keyword("INTERSECT") || tok.is_keyword("UNION") || tok.is_keyword("EXCEPT") {
            labels.insert(QueryGroup::MultiSet);
        } else if tok.is_keyword("GROUP") && next_is_by(&tokens, i) {
            labels.insert(QueryGroup::Combination);
        } else if tok.is_keyword("WHERE") {
            labels.insert(QueryGroup::Filtering);
        }
    }
    Ok(GroupLabelSet::from_labels(labels))
}

/// Priority group of an example: its annotation when present, else the
/// keyword label of its gold SQL.
pub fn example_group(example: &QueryExample) -> Result<QueryGroup, PartitionError> {
    if let Some(g) = example.annotated_group {
        return Ok(g);
    }
    extract_keyword_labels(&example.gold_sql)
        .map(|l| l.primary)
        .map_err(|e| e.in_example(&example.id))
}

impl PartitionError {
    fn in_example(self, id: &str) -> PartitionError {
        PartitionError::InExample {
            example_id: id.to_string(),
            source: Box::new(self),
        }
    }
}

/// Buckets training examples by the priority label of their gold SQL.
/// All four groups are always present as keys.
pub fn partition_corpus(
    examples: &[QueryExample],
) -> Result<BTreeMap<QueryGroup, Vec<QueryExample>>, PartitionError> {
    let mut buckets: BTreeMap<QueryGroup, Vec<QueryExample>> =
        QueryGroup::ALL.iter().map(|g| (*g, Vec::new())).collect();
    for ex in examples {
        let labels = extract_keyword_labels(&ex.gold_sql).map_err(|e| e.in_example(&ex.id))?;
        buckets.get_mut(&labels.primary).expect("all groups").push(ex.clone());
    }
    Ok(buckets)
}

/// Per-group counts plus the multi-label cross-tabulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionStats {
    pub total: usize,
    pub counts: BTreeMap<QueryGroup, usize>,
    /// Label-set display string → count per primary group.
    pub multi_label: BTreeMap<String, BTreeMap<QueryGroup, usize>>,
    /// Examples whose annotated group disagrees with the keyword rule.
    pub annotation_mismatches: Vec<String>,
}

pub fn partition_stats(examples: &[QueryExample]) -> Result<PartitionStats, PartitionError> {
    let mut counts: BTreeMap<QueryGroup, usize> = QueryGroup::ALL.iter().map(|g| (*g, 0)).collect();
    let mut multi_label: BTreeMap<String, BTreeMap<QueryGroup, usize>> = BTreeMap::new();
    let mut annotation_mismatches = Vec::new();
    for ex in examples {
        let labels = extract_keyword_labels(&ex.gold_sql).map_err(|e| e.in_example(&ex.id))?;
        *counts.get_mut(&labels.primary).expect("all groups") += 1;
        *multi_label
            .entry(labels.to_string())
            .or_default()
            .entry(labels.primary)
            .or_insert(0) += 1;
        if ex.annotated_group.is_some_and(|g| g != labels.primary) {
            annotation_mismatches.push(ex.id.clone());
        }
    }
    Ok(PartitionStats {
        total: examples.len(),
        counts,
        multi_label,
        annotation_mismatches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use QueryGroup::*;

    fn labels(sql: &str) -> (Vec<QueryGroup>, QueryGroup) {
        let l = extract_keyword_labels(sql).unwrap();
        (l.labels.into_iter().rev().collect(), l.primary)
    }

    #[test]
    fn intersect_with_where_is_multiset_and_filtering() {
        let (ls, p) = labels(
            "SELECT Country FROM singer WHERE Age > 40 INTERSECT SELECT Country FROM singer WHERE Age < 30",
        );
        assert_eq!(ls, vec![MultiSet, Filtering]);
        assert_eq!(p, MultiSet);
    }

    #[test]
    fn order_by_only_is_simple() {
        assert_eq!(
            labels("SELECT name, born_state, age FROM head ORDER BY age"),
            (vec![Simple], Simple)
        );
    }

    #[test]
    fn group_by_is_combination() {
        assert_eq!(
            labels(
                "SELECT T2.Hometown, COUNT(*) FROM gymnast AS T1 JOIN people AS T2 ON T1.Gymnast_ID = T2.People_ID GROUP BY T2.Hometown"
            ),
            (vec![Combination], Combination)
        );
    }

    #[test]
    fn keywords_in_literals_are_ignored() {
        assert_eq!(labels("SELECT a FROM t WHERE b = 'UNION'"), (vec![Filtering], Filtering));
        assert_eq!(labels(r#"SELECT "where" FROM "group by""#), (vec![Simple], Simple));
        assert_eq!(labels("SELECT [union] FROM t -- WHERE"), (vec![Simple], Simple));
    }

    #[test]
    fn having_alone_does_not_filter() {
        assert_eq!(
            labels("SELECT a FROM t GROUP BY a HAVING count(*) > 1"),
            (vec![Combination], Combination)
        );
    }

    #[test]
    fn nested_group_by_in_except_branch() {
        let (ls, p) = labels(
            "SELECT T1.name FROM station AS T1 JOIN status AS T2 ON T1.id = T2.station_id GROUP BY T2.station_id HAVING avg(bikes_available) > 10 EXCEPT SELECT name FROM station WHERE city = \"San Jose\"",
        );
        assert_eq!(ls, vec![MultiSet, Combination, Filtering]);
        assert_eq!(p, MultiSet);
    }

    #[test]
    fn group_without_by_is_not_combination() {
        // `group` as a column name
        assert_eq!(labels("SELECT group_id, \"group\" FROM t"), (vec![Simple], Simple));
    }

    #[test]
    fn unlexable_reports_position() {
        match extract_keyword_labels("SELECT 'oops") {
            Err(PartitionError::UnlexableSql { position, .. }) => assert_eq!(position, 7),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn label_set_display() {
        let l = extract_keyword_labels("SELECT a FROM t WHERE x INTERSECT SELECT a FROM u").unwrap();
        assert_eq!(l.to_string(), "(Multi-set, Filtering,)");
        let l = extract_keyword_labels("SELECT a FROM t WHERE x GROUP BY a").unwrap();
        assert_eq!(l.to_string(), "(Combination, Filtering,)");
    }

    fn fixture4() -> Vec<QueryExample> {
        vec![
            QueryExample::new(
                "a",
                "singer",
                "q",
                "SELECT Country FROM singer WHERE Age > 40 INTERSECT SELECT Country FROM singer WHERE Age < 30",
            ),
            QueryExample::new("b", "d", "q", "SELECT name, born_state, age FROM head ORDER BY age"),
            QueryExample::new(
                "c",
                "d",
                "q",
                "SELECT T2.Hometown, COUNT(*) FROM gymnast AS T1 JOIN people AS T2 ON T1.Gymnast_ID = T2.People_ID GROUP BY T2.Hometown",
            ),
            QueryExample::new("d", "d", "q", "SELECT Name FROM singer WHERE Age > 30"),
        ]
    }

    #[test]
    fn partition_fixture_buckets() {
        let buckets = partition_corpus(&fixture4()).unwrap();
        for g in QueryGroup::ALL {
            assert_eq!(buckets[&g].len(), 1, "{g}");
        }
        assert_eq!(buckets[&MultiSet][0].id, "a");
        assert_eq!(buckets[&Simple][0].id, "b");
        assert_eq!(buckets[&Combination][0].id, "c");
        assert_eq!(buckets[&Filtering][0].id, "d");
    }

    #[test]
    fn partition_empty_has_four_buckets() {
        let buckets = partition_corpus(&[]).unwrap();
        assert_eq!(buckets.len(), 4);
        assert!(buckets.values().all(Vec::is_empty));
    }

    #[test]
    fn partition_reports_offending_example() {
        let ex = vec![QueryExample::new("bad", "d", "q", "SELECT 'x")];
        match partition_corpus(&ex) {
            Err(PartitionError::InExample { example_id, .. }) => assert_eq!(example_id, "bad"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stats_cross_tab() {
        let stats = partition_stats(&fixture4()).unwrap();
        assert_eq!(stats.total, 4);
        assert_eq!(stats.multi_label["(Multi-set, Filtering,)"][&MultiSet], 1);
        assert_eq!(stats.multi_label["(Simple,)"][&Simple], 1);
    }
}
