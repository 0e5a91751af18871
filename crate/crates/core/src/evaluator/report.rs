use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{same_statement, ves_score, EvalError, Executor, VesRecord};
use crate::corpus::{DatabaseSchema, Difficulty, QueryExample, QueryGroup};
use crate::inference::Prediction;
use crate::partitioner::example_group;

/// Per-example outcome feeding the aggregate report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub example_id: String,
    pub db_id: String,
    pub difficulty: Option<Difficulty>,
    /// Gold-derived group of the example.
    pub group: QueryGroup,
    pub predicted_group: Option<QueryGroup>,
    pub correct: bool,
    /// Median seconds; `None` when not measured.
    pub gold_time: Option<f64>,
    pub pred_time: Option<f64>,
    pub prompt_tokens: usize,
    pub output_tokens: usize,
    pub latency: f64,
}

impl Verdict {
    fn ves_record(&self) -> VesRecord {
        match (self.gold_time, self.pred_time) {
            (Some(g), Some(p)) => VesRecord {
                correct: self.correct,
                gold_time: g,
                pred_time: p,
            },
            // unmeasured correct predictions are textually the gold statement
            _ => VesRecord {
                correct: self.correct,
                gold_time: 1.0,
                pred_time: 1.0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub n: usize,
    pub correct: usize,
    pub ex_percent: f64,
}

impl Bucket {
    fn add(&mut self, correct: bool) {
        self.n += 1;
        self.correct += usize::from(correct);
        self.ex_percent = 100.0 * self.correct as f64 / self.n as f64;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenStats {
    /// Mean prompt + output tokens per query.
    pub mean_tokens_per_query: f64,
    pub mean_prompt_tokens: f64,
    pub mean_output_tokens: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeStats {
    /// Mean seconds of inference per query.
    pub mean_inference_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub ex_percent: f64,
    pub ves: f64,
    pub strategy: Option<String>,
    /// Keyed by difficulty label, `unlabeled` for examples without one.
    pub by_difficulty: BTreeMap<String, Bucket>,
    /// Keyed by gold-derived group.
    pub by_group: BTreeMap<String, Bucket>,
    pub token_stats: TokenStats,
    pub time_stats: TimeStats,
}

pub const UNLABELED: &str = "unlabeled";

/// Pairs every gold example with exactly one prediction.
pub fn join_predictions<'a>(
    predictions: &'a [Prediction],
    examples: &'a [QueryExample],
) -> Result<Vec<(&'a QueryExample, &'a Prediction)>, EvalError> {
    let mut by_id: HashMap<&str, &Prediction> = HashMap::with_capacity(predictions.len());
    for p in predictions {
        if by_id.insert(p.example_id.as_str(), p).is_some() {
            return Err(EvalError::DuplicatePrediction(p.example_id.clone()));
        }
    }
    let mut out = Vec::with_capacity(examples.len());
    for ex in examples {
        let p = by_id
            .remove(ex.id.as_str())
            .ok_or_else(|| EvalError::MissingPrediction(ex.id.clone()))?;
        out.push((ex, p));
    }
    if let Some(stray) = predictions.iter().find(|p| by_id.contains_key(p.example_id.as_str())) {
        return Err(EvalError::UnknownPrediction(stray.example_id.clone()));
    }
    Ok(out)
}

/// Executes every prediction against its gold SQL. `ves_repeats` runs per
/// statement feed the median timings; textually identical statements skip
/// timing and score a ratio of 1.
pub fn evaluate_predictions(
    executor: &Executor,
    predictions: &[Prediction],
    examples: &[QueryExample],
    schemas: &BTreeMap<String, DatabaseSchema>,
    ves_repeats: usize,
) -> Result<Vec<Verdict>, EvalError> {
    let pairs = join_predictions(predictions, examples)?;
    pairs
        .par_iter()
        .map(|(ex, pred)| {
            let schema = schemas
                .get(&ex.db_id)
                .ok_or_else(|| EvalError::UnknownDb(ex.db_id.clone()))?;
            let correct = executor.ex_correct(&pred.sql, &ex.gold_sql, &ex.db_id, &schema.db_file)?;
            let (gold_time, pred_time) = if correct && !same_statement(&pred.sql, &ex.gold_sql) {
                (
                    executor.median_time(&schema.db_file, &ex.gold_sql, ves_repeats),
                    executor.median_time(&schema.db_file, &pred.sql, ves_repeats),
                )
            } else {
                (None, None)
            };
            let group = example_group(ex).unwrap_or(QueryGroup::Simple);
            Ok(Verdict {
                example_id: ex.id.clone(),
                db_id: ex.db_id.clone(),
                difficulty: ex.difficulty,
                group,
                predicted_group: pred.group,
                correct,
                gold_time,
                pred_time,
                prompt_tokens: pred.prompt_tokens,
                output_tokens: pred.output_tokens,
                latency: pred.latency,
            })
        })
        .collect()
}

fn mean(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        values.sum::<f64>() / n as f64
    }
}

pub fn aggregate(verdicts: &[Verdict], strategy: Option<String>) -> EvalReport {
    let n = verdicts.len();
    let correct = verdicts.iter().filter(|v| v.correct).count();
    let mut by_difficulty: BTreeMap<String, Bucket> = BTreeMap::new();
    let mut by_group: BTreeMap<String, Bucket> = BTreeMap::new();
    let empty = || Bucket {
        n: 0,
        correct: 0,
        ex_percent: 0.0,
    };
    for v in verdicts {
        let key = v.difficulty.map_or(UNLABELED, Difficulty::as_str);
        by_difficulty.entry(key.to_string()).or_insert_with(empty).add(v.correct);
        by_group
            .entry(v.group.as_str().to_string())
            .or_insert_with(empty)
            .add(v.correct);
    }
    let ves_records: Vec<VesRecord> = verdicts.iter().map(Verdict::ves_record).collect();
    EvalReport {
        n,
        ex_percent: if n == 0 { 0.0 } else { 100.0 * correct as f64 / n as f64 },
        ves: ves_score(&ves_records),
        strategy,
        by_difficulty,
        by_group,
        token_stats: TokenStats {
            mean_tokens_per_query: mean(
                verdicts.iter().map(|v| (v.prompt_tokens + v.output_tokens) as f64),
                n,
            ),
            mean_prompt_tokens: mean(verdicts.iter().map(|v| v.prompt_tokens as f64), n),
            mean_output_tokens: mean(verdicts.iter().map(|v| v.output_tokens as f64), n),
        },
        time_stats: TimeStats {
            mean_inference_seconds: mean(verdicts.iter().map(|v| v.latency), n),
        },
    }
}

fn table(out: &mut String, title: &str, columns: &[(String, Option<&Bucket>)], all: &Bucket) {
    let _ = writeln!(out, "{title}");
    let mut header = format!("{:<8}", "");
    let mut count = format!("{:<8}", "Count");
    let mut ex = format!("{:<8}", "EX");
    let cells = columns
        .iter()
        .map(|(name, b)| (name.as_str(), *b))
        .chain(std::iter::once(("All", Some(all))));
    for (name, bucket) in cells {
        let width = name.len().max(7) + 2;
        let _ = write!(header, "{name:>width$}");
        match bucket {
            Some(b) if b.n > 0 => {
                let _ = write!(count, "{:>width$}", b.n);
                let _ = write!(ex, "{:>width$.1}", b.ex_percent);
            }
            _ => {
                let _ = write!(count, "{:>width$}", 0);
                let _ = write!(ex, "{:>width$}", "-");
            }
        }
    }
    let _ = writeln!(out, "{}", header.trim_end());
    let _ = writeln!(out, "{count}");
    let _ = writeln!(out, "{ex}");
}

/// Human-readable report: a difficulty table (Easy/Medium/Hard/Extra/All, or
/// the BIRD levels when those labels are present), a problem-group table,
/// then VES and per-query token and time lines.
pub fn render_report(report: &EvalReport) -> String {
    let mut out = String::new();
    if let Some(s) = &report.strategy {
        let _ = writeln!(out, "Strategy: {s}");
    }
    let all = Bucket {
        n: report.n,
        correct: report.by_difficulty.values().map(|b| b.correct).sum(),
        ex_percent: report.ex_percent,
    };
    let bird = Difficulty::BIRD
        .iter()
        .any(|d| report.by_difficulty.contains_key(d.as_str()));
    let levels: &[Difficulty] = if bird { &Difficulty::BIRD } else { &Difficulty::SPIDER };
    let mut diff_cols: Vec<(String, Option<&Bucket>)> = levels
        .iter()
        .map(|d| (d.title().to_string(), report.by_difficulty.get(d.as_str())))
        .collect();
    if let Some(b) = report.by_difficulty.get(UNLABELED) {
        diff_cols.push(("Unlabeled".into(), Some(b)));
    }
    table(&mut out, "Execution accuracy by difficulty", &diff_cols, &all);
    out.push('\n');
    let group_cols: Vec<(String, Option<&Bucket>)> = [
        QueryGroup::MultiSet,
        QueryGroup::Combination,
        QueryGroup::Filtering,
        QueryGroup::Simple,
    ]
    .iter()
    .map(|g| (g.title().to_string(), report.by_group.get(g.as_str())))
    .collect();
    table(&mut out, "Execution accuracy by problem group", &group_cols, &all);
    out.push('\n');
    let _ = writeln!(out, "EX: {:.1}", report.ex_percent);
    let _ = writeln!(out, "VES: {:.2}", report.ves);
    let _ = writeln!(
        out,
        "Tokens per Query: {:.0}",
        report.token_stats.mean_tokens_per_query
    );
    let _ = writeln!(
        out,
        "Inference Time per Query: {:.2}s",
        report.time_stats.mean_inference_seconds
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn verdict(id: &str, d: Option<Difficulty>, g: QueryGroup, correct: bool) -> Verdict {
        Verdict {
            example_id: id.into(),
            db_id: "d".into(),
            difficulty: d,
            group: g,
            predicted_group: Some(g),
            correct,
            gold_time: None,
            pred_time: None,
            prompt_tokens: 100,
            output_tokens: 20,
            latency: 0.5,
        }
    }

    fn pred(id: &str) -> Prediction {
        Prediction {
            example_id: id.into(),
            db_id: "d".into(),
            group: Some(QueryGroup::Simple),
            sql: "SELECT 1".into(),
            raw_completion: String::new(),
            prompt_tokens: 0,
            output_tokens: 0,
            latency: 0.0,
            flags: vec![],
        }
    }

    #[test]
    fn three_of_four_is_75() {
        use Difficulty::*;
        let v = vec![
            verdict("1", Some(Easy), QueryGroup::Simple, true),
            verdict("2", Some(Easy), QueryGroup::Filtering, true),
            verdict("3", Some(Medium), QueryGroup::Combination, true),
            verdict("4", Some(Hard), QueryGroup::MultiSet, false),
        ];
        let r = aggregate(&v, Some("mixed k=4".into()));
        assert_eq!(r.n, 4);
        assert_eq!(r.ex_percent, 75.0);
        // hand count: easy 2/2, medium 1/1, hard 0/1
        assert_eq!(r.by_difficulty["easy"].ex_percent, 100.0);
        assert_eq!(r.by_difficulty["medium"].ex_percent, 100.0);
        assert_eq!(r.by_difficulty["hard"].ex_percent, 0.0);
        assert_eq!(r.by_difficulty.values().map(|b| b.n).sum::<usize>(), 4);
        assert_eq!(r.by_group["multi_set"].ex_percent, 0.0);
        assert_eq!(r.token_stats.mean_tokens_per_query, 120.0);
        assert_eq!(r.time_stats.mean_inference_seconds, 0.5);
        assert!((r.ves - 75.0).abs() < 1e-9);

        let text = render_report(&r);
        assert!(text.contains("Easy") && text.contains("Extra") && text.contains("All"));
        assert!(text.contains("Multi-set") && text.contains("Combination"));
        assert!(text.contains("Tokens per Query: 120"));
        assert!(text.contains("Inference Time per Query: 0.50s"));
    }

    #[test]
    fn report_json_round_trips() {
        let r = aggregate(&[verdict("1", None, QueryGroup::Simple, true)], None);
        let back: EvalReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        assert!(render_report(&r).contains("Unlabeled"));
    }

    #[test]
    fn join_errors() {
        let ex = vec![
            QueryExample::new("a", "d", "q", "SELECT 1"),
            QueryExample::new("b", "d", "q", "SELECT 1"),
        ];
        assert!(matches!(
            join_predictions(&[pred("a")], &ex),
            Err(EvalError::MissingPrediction(id)) if id == "b"
        ));
        assert!(matches!(
            join_predictions(&[pred("a"), pred("a"), pred("b")], &ex),
            Err(EvalError::DuplicatePrediction(id)) if id == "a"
        ));
        assert!(matches!(
            join_predictions(&[pred("a"), pred("b"), pred("c")], &ex),
            Err(EvalError::UnknownPrediction(id)) if id == "c"
        ));
        assert_eq!(join_predictions(&[pred("b"), pred("a")], &ex).unwrap().len(), 2);
    }
}
