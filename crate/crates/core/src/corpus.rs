//! Benchmark ingestion: question/SQL records, database schemas, and the
//! textual schema layout shared by every prompt.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {reason}")]
    FileUnreadable { path: PathBuf, reason: String },
    #[error("malformed record at index {index}: {reason}")]
    MalformedRecord { index: usize, reason: String },
    #[error("database `{db_id}` has a dangling foreign key {pair:?}")]
    DanglingForeignKey { db_id: String, pair: (i64, i64) },
    #[error("database `{0}` is defined more than once")]
    DuplicateDb(String),
    #[error("database `{db_id}` defines table `{table}` more than once")]
    DuplicateTable { db_id: String, table: String },
    #[error("example `{example_id}` references unknown database `{db_id}`")]
    UnknownDb { example_id: String, db_id: String },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("train fraction {0} is outside (0, 1)")]
    BadFraction(f64),
}

/// The four problem groups. Variant order is the classification priority:
/// `MultiSet > Combination > Filtering > Simple`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryGroup {
    Simple,
    Filtering,
    Combination,
    MultiSet,
}

impl QueryGroup {
    /// All groups, highest priority first.
    pub const ALL: [QueryGroup; 4] = [
        QueryGroup::MultiSet,
        QueryGroup::Combination,
        QueryGroup::Filtering,
        QueryGroup::Simple,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            QueryGroup::MultiSet => "multi_set",
            QueryGroup::Combination => "combination",
            QueryGroup::Filtering => "filtering",
            QueryGroup::Simple => "simple",
        }
    }

    /// Column heading used in report tables.
    pub fn title(self) -> &'static str {
        match self {
            QueryGroup::MultiSet => "Multi-set",
            QueryGroup::Combination => "Combination",
            QueryGroup::Filtering => "Filtering",
            QueryGroup::Simple => "Simple",
        }
    }
}

impl fmt::Display for QueryGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QueryGroup {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect();
        match norm.as_str() {
            "multiset" => Ok(QueryGroup::MultiSet),
            "combination" => Ok(QueryGroup::Combination),
            "filtering" | "filter" => Ok(QueryGroup::Filtering),
            "simple" => Ok(QueryGroup::Simple),
            _ => Err(format!("unknown query group `{s}`")),
        }
    }
}

/// Benchmark difficulty label. Spider uses easy..extra, BIRD simple..challenging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
    Extra,
    Simple,
    Moderate,
    Challenging,
}

impl Difficulty {
    pub const SPIDER: [Difficulty; 4] = [
        Difficulty::Easy,
        Difficulty::Medium,
        Difficulty::Hard,
        Difficulty::Extra,
    ];
    pub const BIRD: [Difficulty; 3] = [
        Difficulty::Simple,
        Difficulty::Moderate,
        Difficulty::Challenging,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
            Difficulty::Extra => "extra",
            Difficulty::Simple => "simple",
            Difficulty::Moderate => "moderate",
            Difficulty::Challenging => "challenging",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Difficulty::Easy => "Easy",
            Difficulty::Medium => "Medium",
            Difficulty::Hard => "Hard",
            Difficulty::Extra => "Extra",
            Difficulty::Simple => "Simple",
            Difficulty::Moderate => "Moderate",
            Difficulty::Challenging => "Challenging",
        }
    }
}

impl FromStr for Difficulty {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "easy" => Ok(Difficulty::Easy),
            "medium" => Ok(Difficulty::Medium),
            "hard" => Ok(Difficulty::Hard),
            "extra" | "extra hard" | "extra_hard" => Ok(Difficulty::Extra),
            "simple" => Ok(Difficulty::Simple),
            "moderate" => Ok(Difficulty::Moderate),
            "challenging" => Ok(Difficulty::Challenging),
            other => Err(format!("unknown difficulty `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    #[default]
    Spider,
    Bird,
}

impl FromStr for DatasetFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "spider" => Ok(DatasetFormat::Spider),
            "bird" => Ok(DatasetFormat::Bird),
            other => Err(format!("unknown dataset format `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryExample {
    pub id: String,
    pub db_id: String,
    pub question: String,
    pub gold_sql: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<Difficulty>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotated_group: Option<QueryGroup>,
}

impl QueryExample {
    pub fn new(
        id: impl Into<String>,
        db_id: impl Into<String>,
        question: impl Into<String>,
        gold_sql: impl Into<String>,
    ) -> Self {
        QueryExample {
            id: id.into(),
            db_id: db_id.into(),
            question: question.into(),
            gold_sql: gold_sql.into(),
            evidence: None,
            difficulty: None,
            annotated_group: None,
        }
    }

    /// The question as it appears in a prompt's `## Query:` block, with the
    /// BIRD evidence appended as a hint line when present.
    pub fn prompt_question(&self) -> String {
        match self.evidence.as_deref().map(str::trim) {
            Some(hint) if !hint.is_empty() => format!("{}\nHint: {}", self.question.trim(), hint),
            _ => self.question.trim().to_string(),
        }
    }
}

fn read_json(path: &Path) -> Result<Value, CorpusError> {
    let unreadable = |reason: String| CorpusError::FileUnreadable {
        path: path.to_path_buf(),
        reason,
    };
    let text = fs::read_to_string(path).map_err(|e| unreadable(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| unreadable(e.to_string()))
}

fn string_field(rec: &Map<String, Value>, keys: &[&str]) -> Option<String> {
    keys.iter().find_map(|k| match rec.get(*k) {
        Some(Value::String(s)) => Some(s.clone()),
        Some(Value::Number(n)) => Some(n.to_string()),
        _ => None,
    })
}

/// Reads a Spider- or BIRD-style examples file. Both `query` and `SQL` are
/// accepted as the gold field regardless of `format`; `format` only decides
/// which one [`write_examples`] emits.
pub fn load_examples(path: &Path, _format: DatasetFormat) -> Result<Vec<QueryExample>, CorpusError> {
    let root = read_json(path)?;
    let Value::Array(records) = root else {
        return Err(CorpusError::FileUnreadable {
            path: path.to_path_buf(),
            reason: "expected a JSON array of records".into(),
        });
    };
    records
        .iter()
        .enumerate()
        .map(|(index, value)| parse_example(index, value))
        .collect()
}

fn parse_example(index: usize, value: &Value) -> Result<QueryExample, CorpusError> {
    let malformed = |reason: &str| CorpusError::MalformedRecord {
        index,
        reason: reason.to_string(),
    };
    let rec = value.as_object().ok_or_else(|| malformed("record is not an object"))?;
    let question = string_field(rec, &["question"])
        .filter(|q| !q.trim().is_empty())
        .ok_or_else(|| malformed("missing or empty `question`"))?;
    let gold_sql = string_field(rec, &["query", "SQL", "sql"])
        .filter(|q| !q.trim().is_empty())
        .ok_or_else(|| malformed("missing or empty gold SQL (`query` or `SQL`)"))?;
    let db_id = string_field(rec, &["db_id"])
        .filter(|d| !d.trim().is_empty())
        .ok_or_else(|| malformed("missing `db_id`"))?;
    let id = string_field(rec, &["id", "question_id"]).unwrap_or_else(|| format!("{index:05}"));
    let difficulty = match string_field(rec, &["difficulty", "hardness"]) {
        Some(d) => Some(d.parse::<Difficulty>().map_err(|e| malformed(&e))?),
        None => None,
    };
    let annotated_group = match string_field(rec, &["group"]) {
        Some(g) => Some(g.parse::<QueryGroup>().map_err(|e| malformed(&e))?),
        None => None,
    };
    let evidence = string_field(rec, &["evidence"]).filter(|e| !e.trim().is_empty());
    Ok(QueryExample {
        id,
        db_id,
        question,
        gold_sql,
        evidence,
        difficulty,
        annotated_group,
    })
}

/// Serializes examples in the benchmark record layout read by [`load_examples`].
pub fn examples_to_json(examples: &[QueryExample], format: DatasetFormat) -> Value {
    let sql_key = match format {
        DatasetFormat::Spider => "query",
        DatasetFormat::Bird => "SQL",
    };
    Value::Array(
        examples
            .iter()
            .map(|ex| {
                let mut rec = Map::new();
                rec.insert("id".into(), Value::String(ex.id.clone()));
                rec.insert("db_id".into(), Value::String(ex.db_id.clone()));
                rec.insert("question".into(), Value::String(ex.question.clone()));
                rec.insert(sql_key.into(), Value::String(ex.gold_sql.clone()));
                if let Some(e) = &ex.evidence {
                    rec.insert("evidence".into(), Value::String(e.clone()));
                }
                if let Some(d) = ex.difficulty {
                    rec.insert("difficulty".into(), Value::String(d.as_str().into()));
                }
                if let Some(g) = ex.annotated_group {
                    rec.insert("group".into(), Value::String(g.as_str().into()));
                }
                Value::Object(rec)
            })
            .collect(),
    )
}

pub fn write_examples(
    path: &Path,
    examples: &[QueryExample],
    format: DatasetFormat,
) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(&examples_to_json(examples, format))?;
    fs::write(path, text)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
}

/// One endpoint of a foreign key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnRef {
    pub table: String,
    pub column: String,
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.table, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatabaseSchema {
    pub db_id: String,
    pub tables: Vec<Table>,
    /// `(from, to)`: `from` references `to`.
    pub foreign_keys: Vec<(ColumnRef, ColumnRef)>,
    pub db_file: PathBuf,
}

impl DatabaseSchema {
    /// Where a database lives under the benchmark layout `<root>/<db_id>/<db_id>.sqlite`.
    pub fn db_path(db_root: &Path, db_id: &str) -> PathBuf {
        db_root.join(db_id).join(format!("{db_id}.sqlite"))
    }
}

#[derive(Deserialize)]
struct RawSchema {
    db_id: String,
    #[serde(default)]
    table_names_original: Option<Vec<String>>,
    #[serde(default)]
    table_names: Option<Vec<String>>,
    #[serde(default)]
    column_names_original: Option<Vec<(i64, String)>>,
    #[serde(default)]
    column_names: Option<Vec<(i64, String)>>,
    #[serde(default)]
    foreign_keys: Vec<(i64, i64)>,
}

impl RawSchema {
    fn tables(&self) -> &[String] {
        self.table_names_original
            .as_deref()
            .or(self.table_names.as_deref())
            .unwrap_or_default()
    }

    fn columns(&self) -> &[(i64, String)] {
        self.column_names_original
            .as_deref()
            .or(self.column_names.as_deref())
            .unwrap_or_default()
    }
}

/// Reads a benchmark `tables.json` and resolves foreign-key column indices to
/// `table.column` names. Database files are located under `db_root`.
pub fn load_schemas(
    path: &Path,
    db_root: &Path,
) -> Result<BTreeMap<String, DatabaseSchema>, CorpusError> {
    let root = read_json(path)?;
    let raws: Vec<RawSchema> =
        serde_json::from_value(root).map_err(|e| CorpusError::FileUnreadable {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    let mut out = BTreeMap::new();
    for raw in raws {
        let schema = resolve_schema(raw, db_root)?;
        if out.contains_key(&schema.db_id) {
            return Err(CorpusError::DuplicateDb(schema.db_id));
        }
        out.insert(schema.db_id.clone(), schema);
    }
    Ok(out)
}

fn resolve_schema(raw: RawSchema, db_root: &Path) -> Result<DatabaseSchema, CorpusError> {
    let mut seen = HashSet::new();
    for name in raw.tables() {
        if !seen.insert(name.to_lowercase()) {
            return Err(CorpusError::DuplicateTable {
                db_id: raw.db_id.clone(),
                table: name.clone(),
            });
        }
    }
    let mut tables: Vec<Table> = raw
        .tables()
        .iter()
        .map(|name| Table {
            name: name.clone(),
            columns: Vec::new(),
        })
        .collect();
    for (table_idx, column) in raw.columns() {
        if let Some(t) = usize::try_from(*table_idx).ok().and_then(|i| tables.get_mut(i)) {
            t.columns.push(column.clone());
        }
    }
    let resolve = |idx: i64| -> Option<ColumnRef> {
        let (table_idx, column) = raw.columns().get(usize::try_from(idx).ok()?)?;
        let table = raw.tables().get(usize::try_from(*table_idx).ok()?)?;
        Some(ColumnRef {
            table: table.clone(),
            column: column.clone(),
        })
    };
    let mut foreign_keys = Vec::with_capacity(raw.foreign_keys.len());
    for &(from, to) in &raw.foreign_keys {
        match (resolve(from), resolve(to)) {
            (Some(a), Some(b)) => foreign_keys.push((a, b)),
            _ => {
                return Err(CorpusError::DanglingForeignKey {
                    db_id: raw.db_id.clone(),
                    pair: (from, to),
                })
            }
        }
    }
    Ok(DatabaseSchema {
        db_file: DatabaseSchema::db_path(db_root, &raw.db_id),
        db_id: raw.db_id,
        tables,
        foreign_keys,
    })
}

/// Renders a schema as table lines followed by the foreign-key block:
///
/// ```text
/// Table aircraft, columns = [*,aid,name,distance]
/// Table certificate, columns = [*,eid,aid]
/// ## Foreign_keys:
/// [certificate.aid = aircraft.aid]
/// ```
///
/// Prompts prefix this with `## Tables:`.
pub fn render_schema(schema: &DatabaseSchema) -> String {
    let mut out = String::new();
    for table in &schema.tables {
        out.push_str("Table ");
        out.push_str(&table.name);
        out.push_str(", columns = [*");
        for col in &table.columns {
            out.push(',');
            out.push_str(col);
        }
        out.push_str("]\n");
    }
    out.push_str("## Foreign_keys:\n[");
    let fks: Vec<String> = schema
        .foreign_keys
        .iter()
        .map(|(a, b)| format!("{a} = {b}"))
        .collect();
    out.push_str(&fks.join(","));
    out.push(']');
    out
}

/// Every example's database must be known before any stage runs.
pub fn check_db_ids(
    examples: &[QueryExample],
    schemas: &BTreeMap<String, DatabaseSchema>,
) -> Result<(), CorpusError> {
    match examples.iter().find(|ex| !schemas.contains_key(&ex.db_id)) {
        Some(ex) => Err(CorpusError::UnknownDb {
            example_id: ex.id.clone(),
            db_id: ex.db_id.clone(),
        }),
        None => Ok(()),
    }
}

/// Seeded partition into `(train, eval)`. `|train| = round(fraction * N)`;
/// when difficulty labels exist the draw is stratified by label, with the
/// per-stratum quotas apportioned by largest remainder. Both halves keep the
/// input order.
pub fn split_train_eval(
    examples: &[QueryExample],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<QueryExample>, Vec<QueryExample>), CorpusError> {
    if examples.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CorpusError::BadFraction(train_fraction));
    }
    let n = examples.len();
    let target = (train_fraction * n as f64).round() as usize;

    let mut strata: BTreeMap<Option<Difficulty>, Vec<usize>> = BTreeMap::new();
    for (i, ex) in examples.iter().enumerate() {
        strata.entry(ex.difficulty).or_default().push(i);
    }

    let mut quotas: Vec<(Option<Difficulty>, usize, f64)> = strata
        .iter()
        .map(|(k, idx)| {
            let exact = train_fraction * idx.len() as f64;
            (*k, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let mut remaining = target.saturating_sub(quotas.iter().map(|q| q.1).sum());
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| quotas[b].2.total_cmp(&quotas[a].2).then(a.cmp(&b)));
    for i in order {
        if remaining == 0 {
            break;
        }
        if quotas[i].1 < strata[&quotas[i].0].len() {
            quotas[i].1 += 1;
            remaining -= 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_train = vec![false; n];
    for (key, quota, _) in &quotas {
        let mut idx = strata[key].clone();
        idx.shuffle(&mut rng);
        for &i in idx.iter().take(*quota) {
            in_train[i] = true;
        }
    }
    let (mut train, mut eval) = (Vec::new(), Vec::new());
    for (ex, chosen) in examples.iter().zip(in_train) {
        if chosen {
            train.push(ex.clone());
        } else {
            eval.push(ex.clone());
        }
    }
    Ok((train, eval))
}

/// Counts examples per difficulty label (`None` = unlabeled).
pub fn difficulty_histogram(examples: &[QueryExample]) -> BTreeMap<Option<Difficulty>, usize> {
    let mut hist = BTreeMap::new();
    for ex in examples {
        *hist.entry(ex.difficulty).or_insert(0) += 1;
    }
    hist
}

pub fn index_by_id(examples: &[QueryExample]) -> HashMap<&str, &QueryExample> {
    examples.iter().map(|e| (e.id.as_str(), e)).collect()
}

/// Hex sha256 of the examples' canonical JSON.
pub fn corpus_digest(examples: &[QueryExample]) -> String {
    let json = serde_json::to_vec(examples).unwrap_or_default();
    hex::encode(Sha256::digest(&json))
}
