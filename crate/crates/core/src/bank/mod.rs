//! Targeted drilling banks: per-group generation prompts, execution-verified
//! worked examples, and their on-disk form.

mod store;

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use store::{bank_file_name, load_bank, persist_bank, BANK_FORMAT, BANK_VERSION};

use crate::corpus::{render_schema, DatabaseSchema, DatasetFormat, QueryExample, QueryGroup};
use crate::evaluator::{EvalError, Executor};
use crate::gateway::{CompletionRequest, EmbeddingVector, Gateway, GatewayError};

const SPIDER_MULTI_SET: &str = include_str!("templates/spider_multi_set.txt");
const SPIDER_COMBINATION: &str = include_str!("templates/spider_combination.txt");
const SPIDER_FILTERING: &str = include_str!("templates/spider_filtering.txt");
const SPIDER_SIMPLE: &str = include_str!("templates/spider_simple.txt");
const BIRD_COMBINATION: &str = include_str!("templates/bird_combination.txt");
const BIRD_FILTERING: &str = include_str!("templates/bird_filtering.txt");

/// Marker that precedes the final statement in every worked answer.
pub const SQL_MARKER: &str = "SQL query:";
pub const STEP_CUE: &str = "Let's think step by step.";

/// Default per-group caps, in [`QueryGroup::ALL`] order.
pub const DEFAULT_CAPS: [(QueryGroup, usize); 4] = [
    (QueryGroup::MultiSet, 200),
    (QueryGroup::Combination, 518),
    (QueryGroup::Filtering, 377),
    (QueryGroup::Simple, 500),
];

#[derive(Debug, Error)]
pub enum BankError {
    #[error("no SQL statement found in completion")]
    NoSqlFound,
    #[error("bank for {group} is empty: none of {sampled} sampled candidates verified")]
    BankEmpty { group: QueryGroup, sampled: usize, log: Box<BuildLog> },
    #[error("bank file has format {found}, expected {expected}")]
    SchemaVersionMismatch { found: String, expected: String },
    #[error("bank file corrupt at line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("bank file io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// The few-shot generation template for a group. BIRD has dedicated
/// filtering and combination templates; its other groups reuse Spider's.
pub fn template(group: QueryGroup, format: DatasetFormat) -> &'static str {
    match (group, format) {
        (QueryGroup::Combination, DatasetFormat::Bird) => BIRD_COMBINATION,
        (QueryGroup::Filtering, DatasetFormat::Bird) => BIRD_FILTERING,
        (QueryGroup::MultiSet, _) => SPIDER_MULTI_SET,
        (QueryGroup::Combination, _) => SPIDER_COMBINATION,
        (QueryGroup::Filtering, _) => SPIDER_FILTERING,
        (QueryGroup::Simple, _) => SPIDER_SIMPLE,
    }
}

/// The instruction paragraph that opens a group's template.
pub fn template_header(group: QueryGroup, format: DatasetFormat) -> &'static str {
    let t = template(group, format);
    t.split("\n\n").next().unwrap_or(t).trim()
}

/// Groups that get a bank. BIRD lacks clearly defined multi-set queries.
pub fn bank_groups(format: DatasetFormat) -> Vec<QueryGroup> {
    QueryGroup::ALL
        .into_iter()
        .filter(|g| format == DatasetFormat::Spider || *g != QueryGroup::MultiSet)
        .collect()
}

/// The `## Tables` / `## Foreign_keys` / `## Query` block for one question.
pub fn render_query_block(schema_text: &str, question: &str) -> String {
    format!("## Tables:\n{schema_text}\n## Query:\n{question}\n")
}

/// The group template followed by the target example, left unanswered.
pub fn build_generation_prompt(
    group: QueryGroup,
    example: &QueryExample,
    schema: &DatabaseSchema,
    format: DatasetFormat,
) -> String {
    let t = template(group, format);
    let next = t.matches("\nExample ").count() + 1;
    format!(
        "{}\n\nExample {next}:\n{}",
        t.trim_end(),
        render_query_block(&render_schema(schema), &example.prompt_question())
    )
}

fn clean_statement(s: &str) -> String {
    let mut s = s.trim();
    if let Some(rest) = s.strip_prefix("```") {
        s = rest.trim_start_matches(|c: char| c.is_ascii_alphabetic()).trim();
    }
    if let Some(end) = s.find("```") {
        s = &s[..end];
    }
    s.trim().trim_end_matches(|c: char| c == ';' || c.is_whitespace()).trim().to_string()
}

fn starts_with_select(line: &str) -> bool {
    line.trim_start()
        .get(..6)
        .is_some_and(|p| p.eq_ignore_ascii_case("select"))
}

/// The statement after the last `SQL query:` marker, running to the first
/// blank line; otherwise the last line beginning with SELECT and its
/// continuation lines. Markdown fences and trailing semicolons are removed.
pub fn extract_sql(completion: &str) -> Result<String, BankError> {
    if let Some(idx) = completion.rfind(SQL_MARKER) {
        let rest = completion[idx + SQL_MARKER.len()..].trim_start();
        let body = if rest.starts_with("```") {
            rest
        } else {
            rest.split("\n\n").next().unwrap_or(rest)
        };
        let sql = clean_statement(body);
        if !sql.is_empty() {
            return Ok(sql);
        }
    }
    let lines: Vec<&str> = completion.lines().collect();
    let start = lines
        .iter()
        .rposition(|l| starts_with_select(l))
        .ok_or(BankError::NoSqlFound)?;
    let tail: Vec<&str> = lines[start..]
        .iter()
        .take_while(|l| !l.trim().is_empty() && !l.trim_start().starts_with("```"))
        .copied()
        .collect();
    let sql = clean_statement(&tail.join("\n"));
    if sql.is_empty() {
        Err(BankError::NoSqlFound)
    } else {
        Ok(sql)
    }
}

/// The worked reasoning before the final statement, without the step cue.
pub fn extract_reasoning(completion: &str) -> String {
    let head = completion
        .rfind(SQL_MARKER)
        .map_or(completion, |i| &completion[..i]);
    head.lines()
        .filter(|l| l.trim() != STEP_CUE)
        .collect::<Vec<_>>()
        .join("\n")
        .trim()
        .to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrillBankEntry {
    pub example_id: String,
    pub group: QueryGroup,
    pub db_id: String,
    pub question: String,
    pub schema_text: String,
    /// Empty for the simple group.
    pub reasoning: String,
    pub sql: String,
    pub embedding: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub corpus_digest: String,
    pub model: String,
    pub built_at: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrillBank {
    pub group: QueryGroup,
    pub entries: Vec<DrillBankEntry>,
    pub embedding_dimension: usize,
    pub provenance: Provenance,
}

impl DrillBank {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// RFC 3339 build time; `SOURCE_DATE_EPOCH` pins it for reproducible builds.
pub fn build_timestamp() -> String {
    let pinned = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| chrono::DateTime::from_timestamp(secs, 0));
    pinned
        .unwrap_or_else(chrono::Utc::now)
        .to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

#[derive(Debug, Clone)]
pub struct BuildConfig {
    pub cap: usize,
    pub seed: u64,
    pub model: String,
    pub context_limit: usize,
    pub temperature: f64,
    pub max_output_tokens: usize,
    pub format: DatasetFormat,
    pub corpus_digest: String,
    pub built_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildFailure {
    pub example_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildLog {
    pub group: QueryGroup,
    pub candidates: usize,
    pub sampled: usize,
    pub kept: usize,
    pub dropped: usize,
    pub failures: Vec<BuildFailure>,
}

/// Seeded uniform draw of up to `cap` candidates, in input order.
pub fn sample_candidates(
    candidates: &[QueryExample],
    cap: usize,
    seed: u64,
) -> Vec<&QueryExample> {
    if candidates.len() <= cap {
        return candidates.iter().collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, candidates.len(), cap).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| &candidates[i]).collect()
}

const EMBED_CHUNK: usize = 64;

struct Verified<'a> {
    example: &'a QueryExample,
    schema_text: String,
    reasoning: String,
    sql: String,
}

fn generate_one<'a>(
    group: QueryGroup,
    example: &'a QueryExample,
    schemas: &BTreeMap<String, DatabaseSchema>,
    config: &BuildConfig,
    gateway: &Gateway,
    executor: &Executor,
) -> Result<Verified<'a>, String> {
    let schema = schemas
        .get(&example.db_id)
        .ok_or_else(|| format!("unknown database {}", example.db_id))?;
    let request = CompletionRequest {
        model: config.model.clone(),
        prompt: build_generation_prompt(group, example, schema, config.format),
        temperature: config.temperature,
        max_output_tokens: config.max_output_tokens,
        context_limit: config.context_limit,
    };
    let completion = gateway.complete(&request).map_err(|e| e.to_string())?;
    let sql = extract_sql(&completion.text).map_err(|e| e.to_string())?;
    let equal = executor
        .ex_correct(&sql, &example.gold_sql, &example.db_id, &schema.db_file)
        .map_err(|e| e.to_string())?;
    if !equal {
        return Err("execution result differs from gold".into());
    }
    let reasoning = if group == QueryGroup::Simple {
        String::new()
    } else {
        extract_reasoning(&completion.text)
    };
    Ok(Verified {
        example,
        schema_text: render_schema(schema),
        reasoning,
        sql,
    })
}

/// Generates one worked answer per sampled candidate and keeps those whose
/// SQL is execution-equal to gold. Per-candidate failures are logged, not
/// fatal.
pub fn build_bank(
    group: QueryGroup,
    candidates: &[QueryExample],
    schemas: &BTreeMap<String, DatabaseSchema>,
    config: &BuildConfig,
    gateway: &Gateway,
    executor: &Executor,
) -> Result<(DrillBank, BuildLog), BankError> {
    let sampled = sample_candidates(candidates, config.cap, config.seed);
    let results: Vec<Result<Verified, String>> = sampled
        .par_iter()
        .map(|ex| generate_one(group, ex, schemas, config, gateway, executor))
        .collect();

    let mut verified = Vec::new();
    let mut failures = Vec::new();
    for (ex, r) in sampled.iter().zip(results) {
        match r {
            Ok(v) => verified.push(v),
            Err(reason) => {
                tracing::warn!(example = %ex.id, %group, "bank candidate dropped: {reason}");
                failures.push(BuildFailure {
                    example_id: ex.id.clone(),
                    reason,
                });
            }
        }
    }
    let mut log = BuildLog {
        group,
        candidates: candidates.len(),
        sampled: sampled.len(),
        kept: verified.len(),
        dropped: failures.len(),
        failures,
    };
    if verified.is_empty() {
        return Err(BankError::BankEmpty {
            group,
            sampled: sampled.len(),
            log: Box::new(log),
        });
    }

    let mut entries = Vec::with_capacity(verified.len());
    for chunk in verified.chunks(EMBED_CHUNK) {
        let questions: Vec<String> = chunk.iter().map(|v| v.example.question.clone()).collect();
        let vectors = gateway.embed(&questions)?;
        for (v, embedding) in chunk.iter().zip(vectors) {
            entries.push(DrillBankEntry {
                example_id: v.example.id.clone(),
                group,
                db_id: v.example.db_id.clone(),
                question: v.example.question.clone(),
                schema_text: v.schema_text.clone(),
                reasoning: v.reasoning.clone(),
                sql: v.sql.clone(),
                embedding,
            });
        }
    }
    entries.sort_by(|a, b| a.example_id.cmp(&b.example_id));
    entries.dedup_by(|a, b| a.example_id == b.example_id);
    log.kept = entries.len();
    let embedding_dimension = entries[0].embedding.dimension();
    Ok((
        DrillBank {
            group,
            entries,
            embedding_dimension,
            provenance: Provenance {
                corpus_digest: config.corpus_digest.clone(),
                model: config.model.clone(),
                built_at: config.built_at.clone(),
            },
        },
        log,
    ))
}

/// Re-runs the execution filter over persisted entries and returns the ids
/// that no longer match their originating gold SQL.
pub fn reverify_bank(
    bank: &DrillBank,
    gold: &[QueryExample],
    schemas: &BTreeMap<String, DatabaseSchema>,
    executor: &Executor,
) -> Vec<String> {
    let by_id = crate::corpus::index_by_id(gold);
    bank.entries
        .par_iter()
        .filter(|e| {
            let ok = by_id.get(e.example_id.as_str()).zip(schemas.get(&e.db_id)).is_some_and(
                |(ex, schema)| {
                    executor
                        .ex_correct(&e.sql, &ex.gold_sql, &e.db_id, &schema.db_file)
                        .unwrap_or(false)
                },
            );
            !ok
        })
        .map(|e| e.example_id.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn templates_carry_their_markers() {
        let ms = template(QueryGroup::MultiSet, DatasetFormat::Spider);
        assert!(ms.contains("<1> Question Decomposition"));
        assert!(ms.contains("<4> SQL Generation"));
        let f = template(QueryGroup::Filtering, DatasetFormat::Spider);
        assert!(f.contains("<1> Decomposition") && f.contains("<3> SQL Generation"));
        let s = template(QueryGroup::Simple, DatasetFormat::Spider);
        assert!(!s.contains("<1>") && !s.contains(STEP_CUE));
        assert!(s.lines().any(|l| l.starts_with("SQL query: SELECT")));
        for g in QueryGroup::ALL {
            for f in [DatasetFormat::Spider, DatasetFormat::Bird] {
                assert!(template_header(g, f).starts_with("You are a powerful text-to-SQL reasoner"));
                let t = template(g, f);
                assert_eq!(t.matches(SQL_MARKER).count(), t.matches("\nExample ").count());
            }
        }
    }

    #[test]
    fn bird_skips_multi_set() {
        assert_eq!(bank_groups(DatasetFormat::Spider).len(), 4);
        assert_eq!(
            bank_groups(DatasetFormat::Bird),
            vec![QueryGroup::Combination, QueryGroup::Filtering, QueryGroup::Simple]
        );
    }

    #[test]
    fn extraction() {
        assert_eq!(
            extract_sql("...reasoning...\nSQL query: SELECT eid FROM employee").unwrap(),
            "SELECT eid FROM employee"
        );
        assert_eq!(extract_sql("```sql\nSELECT 1\n```").unwrap(), "SELECT 1");
        assert!(matches!(extract_sql("I cannot answer"), Err(BankError::NoSqlFound)));
        assert_eq!(extract_sql("SQL query: SELECT a FROM t;\n\nDone.").unwrap(), "SELECT a FROM t");
        assert_eq!(extract_sql("SQL query:\n```sql\nSELECT a\nFROM t;\n```").unwrap(), "SELECT a\nFROM t");
        assert_eq!(extract_sql("SQL query: one\nSQL query: SELECT 2").unwrap(), "SELECT 2");
        assert_eq!(extract_sql("plan\nselect x\nfrom y\n\nbye").unwrap(), "select x\nfrom y");
    }

    #[test]
    fn reasoning_split() {
        let text = "Let's think step by step.\n<1> Do it.\nSQL query: SELECT 1";
        assert_eq!(extract_reasoning(text), "<1> Do it.");
        assert_eq!(extract_reasoning("SQL query: SELECT 1"), "");
    }

    #[test]
    fn sampling_is_seeded_and_capped() {
        let ex: Vec<QueryExample> = (0..50)
            .map(|i| QueryExample::new(format!("{i:03}"), "d", "q", "SELECT 1"))
            .collect();
        let a = sample_candidates(&ex, 10, 7);
        let b = sample_candidates(&ex, 10, 7);
        assert_eq!(a.len(), 10);
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0].id < w[1].id));
        assert_eq!(sample_candidates(&ex, 100, 7).len(), 50);
    }
}
