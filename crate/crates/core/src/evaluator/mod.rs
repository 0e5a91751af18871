//! Execution-based evaluation: run SQL read-only against SQLite with a
//! wall-clock cutoff, compare result sets, and score EX and VES.

mod compare;
mod report;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use dashmap::DashMap;
use parking_lot::Mutex;
use rusqlite::{types::ValueRef, Connection, OpenFlags};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use compare::{cells_equal, needs_ordered_comparison, results_equal, REAL_TOLERANCE};
pub use report::{
    aggregate, evaluate_predictions, join_predictions, render_report, Bucket, EvalReport, TimeStats, TokenStats, Verdict, UNLABELED,
};

use crate::partitioner::lexer::lex;

/// One result cell, mirroring SQLite's storage classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
    Blob(Vec<u8>),
}

pub type Row = Vec<Cell>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Rows,
    SqlError,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub status: ExecStatus,
    /// Present iff `status == Rows`.
    pub rows: Option<Vec<Row>>,
    /// Seconds.
    pub elapsed: f64,
    pub error_text: Option<String>,
}

impl ExecutionOutcome {
    fn failed(status: ExecStatus, elapsed: f64, error: impl Into<String>) -> Self {
        ExecutionOutcome {
            status,
            rows: None,
            elapsed,
            error_text: Some(error.into()),
        }
    }

    pub fn is_rows(&self) -> bool {
        self.status == ExecStatus::Rows
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("results are not comparable: at least one outcome is not Rows")]
    NotComparable,
    #[error("gold SQL does not execute on `{db_id}`: {error}")]
    GoldUnexecutable { db_id: String, error: String },
    #[error("no prediction for example `{0}`")]
    MissingPrediction(String),
    #[error("more than one prediction for example `{0}`")]
    DuplicatePrediction(String),
    #[error("prediction for unknown example `{0}`")]
    UnknownPrediction(String),
    #[error("no schema for database `{0}`")]
    UnknownDb(String),
}

/// Progress-handler granularity in VM instructions.
const PROGRESS_OPS: i32 = 1_000;

fn strip_trailing(sql: &str) -> &str {
    sql.trim().trim_end_matches(|c: char| c == ';' || c.is_whitespace())
}

fn is_interrupt(e: &rusqlite::Error) -> bool {
    matches!(
        e,
        rusqlite::Error::SqliteFailure(f, _) if f.code == rusqlite::ErrorCode::OperationInterrupted
    )
}

/// Runs one statement on a fresh read-only connection. Never mutates the
/// database: the file is opened read-only, `query_only` is set, and any
/// statement SQLite does not report as read-only is refused.
pub fn execute(db_file: &Path, sql: &str, timeout: Duration) -> ExecutionOutcome {
    let started = Instant::now();
    let elapsed = || started.elapsed().as_secs_f64();
    let sql = strip_trailing(sql);
    if sql.is_empty() {
        return ExecutionOutcome::failed(ExecStatus::SqlError, 0.0, "empty statement");
    }
    if !db_file.is_file() {
        return ExecutionOutcome::failed(
            ExecStatus::SqlError,
            elapsed(),
            format!("database file {} not found", db_file.display()),
        );
    }
    let conn = match Connection::open_with_flags(
        db_file,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
    ) {
        Ok(c) => c,
        Err(e) => return ExecutionOutcome::failed(ExecStatus::SqlError, elapsed(), e.to_string()),
    };
    if let Err(e) = conn.pragma_update(None, "query_only", true) {
        return ExecutionOutcome::failed(ExecStatus::SqlError, elapsed(), e.to_string());
    }
    let deadline = started + timeout;
    conn.progress_handler(PROGRESS_OPS, Some(move || Instant::now() >= deadline));

    let result = (|| -> rusqlite::Result<Result<Vec<Row>, String>> {
        let mut stmt = conn.prepare(sql)?;
        if !stmt.readonly() {
            return Ok(Err("only read-only statements are allowed".into()));
        }
        let width = stmt.column_count();
        let mut rows = stmt.query([])?;
        let mut out = Vec::new();
        while let Some(row) = rows.next()? {
            let mut cells = Vec::with_capacity(width);
            for i in 0..width {
                cells.push(match row.get_ref(i)? {
                    ValueRef::Null => Cell::Null,
                    ValueRef::Integer(v) => Cell::Integer(v),
                    ValueRef::Real(v) => Cell::Real(v),
                    ValueRef::Text(t) => Cell::Text(String::from_utf8_lossy(t).into_owned()),
                    ValueRef::Blob(b) => Cell::Blob(b.to_vec()),
                });
            }
            out.push(cells);
        }
        Ok(Ok(out))
    })();

    match result {
        Ok(Ok(rows)) => ExecutionOutcome {
            status: ExecStatus::Rows,
            rows: Some(rows),
            elapsed: elapsed(),
            error_text: None,
        },
        Ok(Err(msg)) => ExecutionOutcome::failed(ExecStatus::SqlError, elapsed(), msg),
        Err(e) if is_interrupt(&e) || Instant::now() >= deadline => ExecutionOutcome::failed(
            ExecStatus::Timeout,
            elapsed(),
            format!("exceeded {:.3}s", timeout.as_secs_f64()),
        ),
        Err(e) => ExecutionOutcome::failed(ExecStatus::SqlError, elapsed(), e.to_string()),
    }
}

/// Executes statements with per-file serialization; distinct files run in
/// parallel.
#[derive(Debug, Clone)]
pub struct Executor {
    pub timeout: Duration,
    locks: Arc<DashMap<PathBuf, Arc<Mutex<()>>>>,
}

impl Executor {
    pub fn new(timeout: Duration) -> Self {
        Executor {
            timeout,
            locks: Arc::new(DashMap::new()),
        }
    }

    pub fn execute(&self, db_file: &Path, sql: &str) -> ExecutionOutcome {
        let lock = self
            .locks
            .entry(db_file.to_path_buf())
            .or_insert_with(|| Arc::new(Mutex::new(())))
            .clone();
        let _guard = lock.lock();
        execute(db_file, sql, self.timeout)
    }

    /// EX verdict: `pred` runs to rows equal to gold's, compared as a
    /// sequence when gold orders its top-level result and as a multiset
    /// otherwise.
    pub fn ex_correct(
        &self,
        pred_sql: &str,
        gold_sql: &str,
        db_id: &str,
        db_file: &Path,
    ) -> Result<bool, EvalError> {
        let gold = self.execute(db_file, gold_sql);
        if !gold.is_rows() {
            return Err(EvalError::GoldUnexecutable {
                db_id: db_id.to_string(),
                error: gold.error_text.unwrap_or_default(),
            });
        }
        if pred_sql.trim().is_empty() {
            return Ok(false);
        }
        let pred = self.execute(db_file, pred_sql);
        if !pred.is_rows() {
            return Ok(false);
        }
        results_equal(&pred, &gold, needs_ordered_comparison(gold_sql))
    }

    /// Median wall time over `repeats` runs; `None` unless every run returns rows.
    pub fn median_time(&self, db_file: &Path, sql: &str, repeats: usize) -> Option<f64> {
        let mut times = Vec::with_capacity(repeats.max(1));
        for _ in 0..repeats.max(1) {
            let out = self.execute(db_file, sql);
            if !out.is_rows() {
                return None;
            }
            times.push(out.elapsed);
        }
        times.sort_by(f64::total_cmp);
        let mid = times.len() / 2;
        Some(if times.len() % 2 == 1 {
            times[mid]
        } else {
            (times[mid - 1] + times[mid]) / 2.0
        })
    }
}

/// Whitespace- and case-insensitive token identity of two statements.
pub fn same_statement(a: &str, b: &str) -> bool {
    match (lex(strip_trailing(a)), lex(strip_trailing(b))) {
        (Ok(x), Ok(y)) => {
            x.len() == y.len()
                && x.iter().zip(&y).all(|(p, q)| {
                    p.kind == q.kind
                        && if p.kind == crate::partitioner::lexer::TokenKind::Word {
                            p.text.eq_ignore_ascii_case(q.text)
                        } else {
                            p.text == q.text
                        }
                })
        }
        _ => strip_trailing(a) == strip_trailing(b),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VesRecord {
    pub correct: bool,
    pub gold_time: f64,
    pub pred_time: f64,
}

/// `100/N · Σ [correct] · sqrt(gold_time / pred_time)`.
pub fn ves_score(records: &[VesRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let sum: f64 = records
        .iter()
        .filter(|r| r.correct && r.gold_time > 0.0 && r.pred_time > 0.0)
        .map(|r| (r.gold_time / r.pred_time).sqrt())
        .sum();
    100.0 * sum / records.len() as f64
}
