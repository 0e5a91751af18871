use proptest::prelude::*;

use sqldrill::bank::{bank_file_name, load_bank, persist_bank, DrillBank, DrillBankEntry, Provenance};
use sqldrill::corpus::QueryGroup;
use sqldrill::evaluator::{ves_score, VesRecord};
use sqldrill::gateway::{estimate_tokens, usable_context, EmbeddingVector};
use sqldrill::inference::prompt_budget;
use sqldrill::partitioner::extract_keyword_labels;
use sqldrill::retriever::{sim_syntactic, tokenize};

fn group() -> impl Strategy<Value = QueryGroup> {
    prop::sample::select(QueryGroup::ALL.to_vec())
}

fn sql_fragment() -> impl Strategy<Value = String> {
    prop::sample::select(vec![
        "SELECT a FROM t",
        "WHERE a > 1",
        "GROUP BY a",
        "ORDER BY a",
        "HAVING count(*) > 1",
        "UNION",
        "INTERSECT",
        "'WHERE'",
        "\"GROUP\"",
        "(SELECT b FROM u)",
        "LIMIT 3",
    ])
    .prop_map(str::to_string)
}

proptest! {
    #[test]
    fn primary_is_highest_priority_label(parts in prop::collection::vec(sql_fragment(), 1..8)) {
        let sql = parts.join(" ");
        let labels = extract_keyword_labels(&sql).unwrap();
        prop_assert!(!labels.labels.is_empty());
        prop_assert_eq!(Some(&labels.primary), labels.labels.iter().max());
        prop_assert_eq!(labels.labels.contains(&QueryGroup::Simple), labels.labels.len() == 1 && labels.primary == QueryGroup::Simple);
    }

    #[test]
    fn syntactic_similarity_is_a_fraction(a in "[a-z ]{0,40}", b in "[a-z ]{0,40}") {
        let s = sim_syntactic(&a, &b);
        prop_assert!((0.0..=1.0).contains(&s));
        if !tokenize(&a).is_empty() {
            prop_assert_eq!(sim_syntactic(&a, &a), 1.0);
        }
    }

    #[test]
    fn budgets_leave_room_for_output(limit in 600usize..20_000) {
        prop_assert!(usable_context(limit) <= limit);
        prop_assert_eq!(prompt_budget(limit) + 512, usable_context(limit));
    }

    #[test]
    fn token_estimate_is_a_ceiling(text in ".{0,200}") {
        let n = text.chars().count();
        prop_assert_eq!(estimate_tokens(&text), n.div_ceil(4));
    }

    #[test]
    fn ves_is_bounded_by_the_best_ratio(
        records in prop::collection::vec((any::<bool>(), 0.01f64..10.0, 0.01f64..10.0), 1..30)
    ) {
        let recs: Vec<VesRecord> = records
            .iter()
            .map(|&(correct, gold_time, pred_time)| VesRecord { correct, gold_time, pred_time })
            .collect();
        let best = recs.iter().map(|r| (r.gold_time / r.pred_time).sqrt()).fold(0.0, f64::max);
        let v = ves_score(&recs);
        prop_assert!(v >= 0.0 && v <= 100.0 * best + 1e-9);
    }

    #[test]
    fn bank_files_round_trip(
        g in group(),
        rows in prop::collection::vec(("[a-zA-Z ?']{1,30}", prop::collection::vec(-1.0f64..1.0, 4)), 1..12)
    ) {
        let entries = rows
            .into_iter()
            .enumerate()
            .map(|(i, (question, values))| DrillBankEntry {
                example_id: format!("x{i}"),
                group: g,
                db_id: "db".into(),
                question,
                schema_text: "Table t, columns = [*,a]".into(),
                reasoning: "<1> think".into(),
                sql: "SELECT a FROM t".into(),
                embedding: EmbeddingVector::new(values),
            })
            .collect();
        let bank = DrillBank {
            group: g,
            entries,
            embedding_dimension: 4,
            provenance: Provenance { corpus_digest: "d".into(), model: "m".into(), built_at: "t".into() },
        };
        let dir = tempfile::tempdir().unwrap();
        let path = bank_file_name(dir.path(), g);
        persist_bank(&bank, &path).unwrap();
        prop_assert_eq!(load_bank(&path).unwrap(), bank);
    }
}
