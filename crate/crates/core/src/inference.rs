//! One-shot inference: classify, retrieve shots, fit the prompt to the
//! context budget, issue a single completion, extract the SQL.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::{extract_sql, render_query_block, template_header, DrillBank, DrillBankEntry, STEP_CUE};
use crate::corpus::{render_schema, DatabaseSchema, DatasetFormat, QueryExample, QueryGroup};
use crate::gateway::{estimate_tokens, usable_context, CompletionRequest, EmbeddingVector, Gateway, GatewayError};
use crate::partitioner::{ClassifyError, GroupClassifier};
use crate::retriever::{select_shots, RankedShot, RetrievalError, SelectionStrategy, StrategyKind};

/// Tokens held back from the context for the completion.
pub const OUTPUT_RESERVATION: usize = 512;

pub const FLAG_EXTRACTION_FAILED: &str = "extraction_failed";
pub const FLAG_NO_QGP: &str = "no_qgp";

/// Prompt tokens available under a context limit.
pub fn prompt_budget(context_limit: usize) -> usize {
    usable_context(context_limit).saturating_sub(OUTPUT_RESERVATION)
}

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("no schema for database {0}")]
    UnknownDb(String),
    #[error("no bank loaded for group {0} or any simpler group")]
    MissingBank(QueryGroup),
    #[error("prompt with one shot needs {needed} tokens, budget is {budget}")]
    BudgetUnsatisfiable { needed: usize, budget: usize },
    #[error("no shots to assemble")]
    NoShots,
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub group: QueryGroup,
    pub shots: Vec<RankedShot>,
    pub prompt_text: String,
    pub estimated_tokens: usize,
    pub dropped_shots: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub example_id: String,
    pub db_id: String,
    /// `None` when the example failed before a group was chosen.
    pub group: Option<QueryGroup>,
    pub sql: String,
    #[serde(skip)]
    pub raw_completion: String,
    pub prompt_tokens: usize,
    pub output_tokens: usize,
    /// Seconds.
    pub latency: f64,
    pub flags: Vec<String>,
}

impl Prediction {
    fn failed(example: &QueryExample, group: Option<QueryGroup>, reason: String) -> Self {
        Prediction {
            example_id: example.id.clone(),
            db_id: example.db_id.clone(),
            group,
            sql: String::new(),
            raw_completion: String::new(),
            prompt_tokens: 0,
            output_tokens: 0,
            latency: 0.0,
            flags: vec![format!("error: {reason}")],
        }
    }
}

fn render_shot(index: usize, entry: &DrillBankEntry) -> String {
    let mut s = format!("Example {index}:\n");
    s.push_str(&render_query_block(&entry.schema_text, &entry.question));
    if !entry.reasoning.is_empty() {
        s.push_str(STEP_CUE);
        s.push('\n');
        s.push_str(&entry.reasoning);
        s.push('\n');
    }
    s.push_str("SQL query: ");
    s.push_str(&entry.sql);
    s
}

fn render_prompt(header: &str, shots: &[RankedShot], schema_text: &str, question: &str) -> String {
    let mut out = String::from(header);
    for (i, shot) in shots.iter().enumerate() {
        out.push_str("\n\n");
        out.push_str(&render_shot(i + 1, &shot.entry));
    }
    out.push_str(&format!("\n\nExample {}:\n", shots.len() + 1));
    out.push_str(&render_query_block(schema_text, question));
    out
}

/// Group header, shots in rank order, then the unanswered test block. Shots
/// are dropped from the lowest rank up until the estimate fits `budget`.
pub fn assemble_prompt(
    group: QueryGroup,
    mut shots: Vec<RankedShot>,
    schema: &DatabaseSchema,
    question: &str,
    budget: usize,
    format: DatasetFormat,
) -> Result<PromptBundle, InferenceError> {
    if shots.is_empty() {
        return Err(InferenceError::NoShots);
    }
    shots.sort_by_key(|s| s.rank);
    let header = template_header(group, format);
    let schema_text = render_schema(schema);
    let mut dropped = 0;
    loop {
        let prompt_text = render_prompt(header, &shots, &schema_text, question);
        let estimated_tokens = estimate_tokens(&prompt_text);
        if estimated_tokens <= budget {
            return Ok(PromptBundle {
                group,
                shots,
                prompt_text,
                estimated_tokens,
                dropped_shots: dropped,
            });
        }
        if shots.len() == 1 {
            return Err(InferenceError::BudgetUnsatisfiable {
                needed: estimated_tokens,
                budget,
            });
        }
        shots.pop();
        dropped += 1;
    }
}

#[derive(Debug, Clone)]
pub struct InferenceConfig {
    pub model: String,
    pub context_limit: usize,
    pub temperature: f64,
    pub format: DatasetFormat,
    pub strategy: SelectionStrategy,
    /// Rank across the union of all banks and skip classification.
    pub no_qgp: bool,
}

/// Holds loaded banks and everything one inference call needs.
pub struct InferenceEngine<'a> {
    banks: &'a BTreeMap<QueryGroup, DrillBank>,
    union: Vec<DrillBankEntry>,
    schemas: &'a BTreeMap<String, DatabaseSchema>,
    classifier: &'a GroupClassifier,
    gateway: &'a Gateway,
    config: InferenceConfig,
}

/// Outcome of one example; `bundle` is absent when no prompt was sent.
#[derive(Debug, Clone)]
pub struct InferenceRecord {
    pub prediction: Prediction,
    pub bundle: Option<PromptBundle>,
}

impl<'a> InferenceEngine<'a> {
    pub fn new(
        banks: &'a BTreeMap<QueryGroup, DrillBank>,
        schemas: &'a BTreeMap<String, DatabaseSchema>,
        classifier: &'a GroupClassifier,
        gateway: &'a Gateway,
        config: InferenceConfig,
    ) -> Self {
        let union = if config.no_qgp {
            banks.values().flat_map(|b| b.entries.iter().cloned()).collect()
        } else {
            Vec::new()
        };
        InferenceEngine {
            banks,
            union,
            schemas,
            classifier,
            gateway,
            config,
        }
    }

    fn needs_embeddings(&self) -> bool {
        matches!(self.config.strategy.kind, StrategyKind::Semantic | StrategyKind::Mixed)
    }

    /// The classified group's bank, or the nearest simpler group with one.
    fn bank_for(&self, group: QueryGroup) -> Result<&DrillBank, InferenceError> {
        QueryGroup::ALL
            .iter()
            .filter(|g| **g <= group)
            .find_map(|g| self.banks.get(g))
            .ok_or(InferenceError::MissingBank(group))
    }

    /// Classify, select, assemble and complete one example. Extraction
    /// failures are flagged on the prediction rather than returned.
    pub fn infer(
        &self,
        example: &QueryExample,
        question_vec: Option<&EmbeddingVector>,
    ) -> Result<InferenceRecord, InferenceError> {
        let schema = self
            .schemas
            .get(&example.db_id)
            .ok_or_else(|| InferenceError::UnknownDb(example.db_id.clone()))?;
        let mut flags = Vec::new();
        let placeholder;
        let question_vec = match question_vec {
            Some(v) => v,
            None if self.needs_embeddings() => {
                placeholder = self
                    .gateway
                    .embed(std::slice::from_ref(&example.question))?
                    .remove(0);
                &placeholder
            }
            None => {
                placeholder = EmbeddingVector::new(Vec::new());
                &placeholder
            }
        };
        let question = example.prompt_question();

        let (header_group, entries): (QueryGroup, &[DrillBankEntry]) = if self.config.no_qgp {
            flags.push(FLAG_NO_QGP.to_string());
            (QueryGroup::Simple, &self.union)
        } else {
            let group = self.classifier.classify(example, &render_schema(schema))?;
            let bank = self.bank_for(group)?;
            if bank.group != group {
                flags.push(format!("bank_fallback={}", bank.group.as_str()));
            }
            (group, &bank.entries)
        };
        let shots = select_shots(entries, &example.question, question_vec, &self.config.strategy)?;
        let group = if self.config.no_qgp {
            shots[0].entry.group
        } else {
            header_group
        };
        let bundle = assemble_prompt(
            header_group,
            shots,
            schema,
            &question,
            prompt_budget(self.config.context_limit),
            self.config.format,
        )?;
        if bundle.dropped_shots > 0 {
            flags.push(format!("dropped_shots={}", bundle.dropped_shots));
        }
        let completion = self.gateway.complete(&CompletionRequest {
            model: self.config.model.clone(),
            prompt: bundle.prompt_text.clone(),
            temperature: self.config.temperature,
            max_output_tokens: OUTPUT_RESERVATION,
            context_limit: self.config.context_limit,
        })?;
        let sql = match extract_sql(&completion.text) {
            Ok(sql) => sql,
            Err(_) => {
                flags.push(FLAG_EXTRACTION_FAILED.to_string());
                String::new()
            }
        };
        Ok(InferenceRecord {
            prediction: Prediction {
                example_id: example.id.clone(),
                db_id: example.db_id.clone(),
                group: Some(group),
                sql,
                raw_completion: completion.text,
                prompt_tokens: completion.prompt_tokens,
                output_tokens: completion.output_tokens,
                latency: completion.latency,
                flags,
            },
            bundle: Some(bundle),
        })
    }

    /// Runs every example, in parallel under the gateway bound. Failures
    /// become flagged predictions with empty SQL; output order follows input.
    pub fn infer_all(&self, examples: &[QueryExample]) -> Vec<InferenceRecord> {
        let mut vectors: HashMap<String, EmbeddingVector> = HashMap::new();
        if self.needs_embeddings() {
            let mut questions: Vec<String> = examples.iter().map(|e| e.question.clone()).collect();
            questions.sort();
            questions.dedup();
            for chunk in questions.chunks(64) {
                match self.gateway.embed(chunk) {
                    Ok(vs) => vectors.extend(chunk.iter().cloned().zip(vs)),
                    Err(e) => tracing::warn!("batch embedding failed, embedding per example: {e}"),
                }
            }
        }
        examples
            .par_iter()
            .map(|ex| match self.infer(ex, vectors.get(&ex.question)) {
                Ok(record) => record,
                Err(e) => {
                    tracing::warn!(example = %ex.id, "inference failed: {e}");
                    InferenceRecord {
                        prediction: Prediction::failed(ex, None, e.to_string()),
                        bundle: None,
                    }
                }
            })
            .collect()
    }
}

/// One JSON object per line, in the given order.
pub fn write_predictions(path: &Path, predictions: &[Prediction]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in predictions {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_predictions(path: &Path) -> std::io::Result<Vec<Prediction>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p = serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1))
        })?;
        out.push(p);
    }
    Ok(out)
}
