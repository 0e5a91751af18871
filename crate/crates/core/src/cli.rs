//! Batch commands: `partition`, `build-bank`, `infer`, `evaluate`, `report`
//! and `init-fixture`, driven by one JSON run configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bank::{
    bank_file_name, bank_groups, build_bank, build_timestamp, load_bank, persist_bank, BankError,
    BuildConfig, BuildLog, DrillBank, DEFAULT_CAPS,
};
use crate::corpus::{
    corpus_digest, load_examples, load_schemas, split_train_eval, CorpusError, DatabaseSchema, DatasetFormat,
    QueryExample, QueryGroup,
};
use crate::evaluator::{aggregate, evaluate_predictions, render_report, EvalError, EvalReport, Executor};
use crate::fixtures::write_fixture_corpus;
use crate::gateway::{
    Gateway, GatewayConfig, GatewayError, GatewayStats, MockBehavior, MockProvider, OpenAiProvider,
    Provider, DEFAULT_MOCK_DIMENSION,
};
use crate::inference::{read_predictions, write_predictions, InferenceConfig, InferenceEngine};
use crate::partitioner::{
    partition_corpus, partition_stats, ClassifierKind, GroupClassifier, PartitionError,
};
use crate::retriever::{SelectionStrategy, StrategyKind};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("corpus: {0}")]
    Corpus(String),
    #[error("provider: {0}")]
    Provider(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Other(_) => 1,
            CliError::Config(_) => 2,
            CliError::Corpus(_) => 3,
            CliError::Provider(_) => 4,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Corpus(e.to_string())
    }
}

impl From<PartitionError> for CliError {
    fn from(e: PartitionError) -> Self {
        CliError::Corpus(e.to_string())
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        CliError::Provider(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<BankError> for CliError {
    fn from(e: BankError) -> Self {
        match e {
            BankError::Gateway(g) => g.into(),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default)]
    pub format: DatasetFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<PathBuf>,
    /// Draws both halves from one file instead of `train`/`eval`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitConfig>,
    pub tables: PathBuf,
    pub db_root: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub source: PathBuf,
    pub train_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    MockEchoGold,
    MockConstant,
    Openai,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub model: String,
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_context")]
    pub context_limit: usize,
    /// Context used while generating bank entries; the drilling templates are long.
    #[serde(default = "default_context")]
    pub bank_context_limit: usize,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_embedding_model")]
    pub embedding_model: String,
    #[serde(default = "default_dimension")]
    pub embedding_dimension: usize,
    /// Reply of the `mock-constant` provider.
    #[serde(default)]
    pub constant_reply: Option<String>,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
    #[serde(default = "default_request_timeout")]
    pub request_timeout_secs: u64,
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}
fn default_context() -> usize {
    4096
}
fn default_parallelism() -> usize {
    4
}
fn default_embedding_model() -> String {
    "text-embedding-ada-002".into()
}
fn default_dimension() -> usize {
    DEFAULT_MOCK_DIMENSION
}
fn default_retries() -> usize {
    3
}
fn default_request_timeout() -> u64 {
    120
}
fn default_timeout() -> f64 {
    30.0
}
fn default_ves_repeats() -> usize {
    3
}
fn default_bank_output() -> usize {
    1024
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub k: usize,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            kind: StrategyKind::Mixed,
            k: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub provider: ProviderConfig,
    /// Per-group bank caps keyed by group name; missing groups use the defaults.
    #[serde(default)]
    pub bank_caps: BTreeMap<QueryGroup, usize>,
    #[serde(default = "default_bank_output")]
    pub bank_max_output_tokens: usize,
    #[serde(default)]
    pub strategy: StrategyConfig,
    #[serde(default)]
    pub no_qgp: bool,
    #[serde(default)]
    pub classifier: ClassifierKind,
    #[serde(default)]
    pub classifier_endpoint: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_ves_repeats")]
    pub ves_repeats: usize,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
}

impl RunConfig {
    /// Reads the file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let d = &mut cfg.dataset;
        let optional = [d.train.as_mut(), d.eval.as_mut(), d.split.as_mut().map(|s| &mut s.source)];
        for p in optional
            .into_iter()
            .flatten()
            .chain([&mut d.tables, &mut d.db_root, &mut cfg.output_dir])
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn cap(&self, group: QueryGroup) -> usize {
        self.bank_caps.get(&group).copied().unwrap_or_else(|| {
            DEFAULT_CAPS.iter().find(|(g, _)| *g == group).map_or(0, |(_, c)| *c)
        })
    }

    pub fn selection_strategy(&self) -> Result<SelectionStrategy, CliError> {
        SelectionStrategy::new(self.strategy.kind, self.strategy.k, self.seed)
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn strategy_label(&self) -> String {
        let base = format!("{} k={}", self.strategy.kind, self.strategy.k);
        if self.no_qgp {
            format!("{base}, w/o QGP")
        } else {
            base
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        self.selection_strategy()?;
        if self.provider.context_limit == 0 || self.provider.bank_context_limit == 0 {
            return Err(CliError::Config("context limits must be positive".into()));
        }
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return Err(CliError::Config("timeout_secs must be positive".into()));
        }
        let d = &self.dataset;
        match (&d.split, &d.train, &d.eval) {
            (Some(split), None, None) => {
                if !(split.train_fraction > 0.0 && split.train_fraction < 1.0) {
                    return Err(CliError::Config("split.train_fraction must lie in (0, 1)".into()));
                }
            }
            (None, Some(_), Some(_)) => {}
            _ => {
                return Err(CliError::Config(
                    "dataset needs either `train` and `eval` or a `split` block".into(),
                ))
            }
        }
        if self.classifier == ClassifierKind::External && self.classifier_endpoint.is_none() {
            return Err(CliError::Config("the external classifier needs `classifier_endpoint`".into()));
        }
        Ok(())
    }

    fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// Overrides shared by all commands.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Shot selection strategy: semantic, syntactic, mixed or random.
    #[arg(long, global = true)]
    pub strategy: Option<StrategyKind>,
    /// Number of shots.
    #[arg(long, global = true)]
    pub shots: Option<usize>,
    /// Retrieve from the union of all banks, skipping group classification.
    #[arg(long, global = true)]
    pub no_qgp: bool,
    /// Group classifier: gold, llm or external.
    #[arg(long, global = true)]
    pub classifier: Option<ClassifierKind>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Parser)]
#[command(name = "sqldrill", version, about = "Problem-group partitioned few-shot text-to-SQL")]
pub struct Cli {
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Label training examples by problem group and write partition.json.
    Partition,
    /// Build and verify one drill bank per group.
    BuildBank,
    /// Answer the evaluation split with one completion per question.
    Infer,
    /// Execute predictions against gold and write the report.
    Evaluate {
        /// Prediction file; defaults to <out>/predictions.jsonl.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Print a previously written report.
    Report,
    /// Write the bundled fixture corpus and a mock-provider config.
    InitFixture {
        /// Target directory.
        dir: PathBuf,
    },
}

pub fn apply_overrides(mut cfg: RunConfig, o: &Overrides) -> Result<RunConfig, CliError> {
    if let Some(kind) = o.strategy {
        cfg.strategy.kind = kind;
    }
    if let Some(k) = o.shots {
        cfg.strategy.k = k;
    }
    if o.no_qgp {
        cfg.no_qgp = true;
    }
    if let Some(c) = o.classifier {
        cfg.classifier = c;
    }
    if let Some(seed) = o.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &o.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Well-known file names under the output directory.
pub struct OutputLayout {
    pub root: PathBuf,
}

impl OutputLayout {
    pub fn partition(&self) -> PathBuf {
        self.root.join("partition.json")
    }
    pub fn banks(&self) -> PathBuf {
        self.root.join("banks")
    }
    pub fn build_log(&self) -> PathBuf {
        self.root.join("build_log.json")
    }
    pub fn predictions(&self) -> PathBuf {
        self.root.join("predictions.jsonl")
    }
    pub fn report_json(&self) -> PathBuf {
        self.root.join("report.json")
    }
    pub fn report_txt(&self) -> PathBuf {
        self.root.join("report.txt")
    }
    pub fn cache(&self) -> PathBuf {
        self.root.join("cache.jsonl")
    }
    pub fn manifest(&self, command: &str) -> PathBuf {
        self.root.join("manifests").join(format!("{command}.json"))
    }
}

/// Everything a stage command needs, loaded once.
pub struct Session {
    pub config: RunConfig,
    pub layout: OutputLayout,
}

impl Session {
    pub fn new(config: RunConfig) -> Result<Self, CliError> {
        fs::create_dir_all(&config.output_dir)?;
        let layout = OutputLayout {
            root: config.output_dir.clone(),
        };
        Ok(Session { config, layout })
    }

    fn format(&self) -> DatasetFormat {
        self.config.dataset.format
    }

    fn split(&self, split: &SplitConfig) -> Result<(Vec<QueryExample>, Vec<QueryExample>), CliError> {
        let all = load_examples(&split.source, self.format())?;
        Ok(split_train_eval(&all, split.train_fraction, self.config.seed)?)
    }

    pub fn train(&self) -> Result<Vec<QueryExample>, CliError> {
        let d = &self.config.dataset;
        let (ex, source) = match (&d.split, &d.train) {
            (Some(split), _) => (self.split(split)?.0, &split.source),
            (None, Some(path)) => (load_examples(path, self.format())?, path),
            (None, None) => return Err(CliError::Config("no training examples configured".into())),
        };
        if ex.is_empty() {
            return Err(CliError::Corpus(format!("{} holds no training examples", source.display())));
        }
        Ok(ex)
    }

    pub fn eval(&self) -> Result<Vec<QueryExample>, CliError> {
        let d = &self.config.dataset;
        match (&d.split, &d.eval) {
            (Some(split), _) => Ok(self.split(split)?.1),
            (None, Some(path)) => Ok(load_examples(path, self.format())?),
            (None, None) => Err(CliError::Config("no evaluation examples configured".into())),
        }
    }

    pub fn schemas(&self) -> Result<BTreeMap<String, DatabaseSchema>, CliError> {
        Ok(load_schemas(&self.config.dataset.tables, &self.config.dataset.db_root)?)
    }

    fn executor(&self) -> Executor {
        Executor::new(Duration::from_secs_f64(self.config.timeout_secs))
    }

    fn provider(&self, examples: &[QueryExample]) -> Result<Arc<dyn Provider>, CliError> {
        let p = &self.config.provider;
        Ok(match p.kind {
            ProviderKind::MockEchoGold => Arc::new(
                MockProvider::new(MockBehavior::echo_gold(examples)).with_dimension(p.embedding_dimension),
            ),
            ProviderKind::MockConstant => Arc::new(
                MockProvider::new(MockBehavior::Constant(
                    p.constant_reply.clone().unwrap_or_else(|| "SQL query: SELECT 999".into()),
                ))
                .with_dimension(p.embedding_dimension),
            ),
            ProviderKind::Openai => {
                let key = std::env::var(&p.api_key_env).ok().filter(|k| !k.is_empty());
                if key.is_none() {
                    return Err(CliError::Provider(format!(
                        "environment variable {} is not set",
                        p.api_key_env
                    )));
                }
                Arc::new(
                    OpenAiProvider::new(
                        p.endpoint.clone().unwrap_or_else(|| "https://api.openai.com/v1".into()),
                        key,
                        p.embedding_model.clone(),
                        Duration::from_secs(p.request_timeout_secs),
                    )
                    .map_err(|e| CliError::Provider(e.to_string()))?,
                )
            }
        })
    }

    /// A gateway over the configured provider, cached in `<out>/cache.jsonl`.
    pub fn gateway(&self, examples: &[QueryExample]) -> Result<Gateway, CliError> {
        let p = &self.config.provider;
        let gw = Gateway::new(
            self.provider(examples)?,
            GatewayConfig {
                parallelism: p.parallelism,
                max_retries: p.max_retries,
                embedding_model: p.embedding_model.clone(),
                ..GatewayConfig::default()
            },
        );
        Ok(gw.with_cache_file(&self.layout.cache())?)
    }

    fn classifier(&self, gateway: &Arc<Gateway>) -> GroupClassifier {
        match self.config.classifier {
            ClassifierKind::GoldSqlOracle => GroupClassifier::GoldSqlOracle,
            ClassifierKind::LlmPrompted => GroupClassifier::LlmPrompted {
                gateway: Arc::clone(gateway),
                model: self.config.provider.model.clone(),
                context_limit: self.config.provider.context_limit,
                temperature: self.config.provider.temperature,
            },
            ClassifierKind::External => GroupClassifier::External {
                endpoint: self.config.classifier_endpoint.clone().unwrap_or_default(),
                timeout: Duration::from_secs(self.config.provider.request_timeout_secs),
            },
        }
    }

    /// Loads whichever bank files exist.
    pub fn banks(&self) -> Result<BTreeMap<QueryGroup, DrillBank>, CliError> {
        let mut banks = BTreeMap::new();
        for group in bank_groups(self.format()) {
            let path = bank_file_name(&self.layout.banks(), group);
            if path.exists() {
                banks.insert(group, load_bank(&path)?);
            }
        }
        if banks.is_empty() {
            return Err(CliError::Other(format!(
                "no banks under {}; run build-bank first",
                self.layout.banks().display()
            )));
        }
        Ok(banks)
    }

    fn write_manifest(
        &self,
        command: &str,
        corpus: Value,
        cache_before: Option<usize>,
        gateway: Option<&Gateway>,
        outputs: &[PathBuf],
    ) -> Result<(), CliError> {
        let mut digests = BTreeMap::new();
        for path in outputs {
            if path.is_file() {
                let name = path
                    .strip_prefix(&self.layout.root)
                    .unwrap_or(path)
                    .to_string_lossy()
                    .into_owned();
                digests.insert(name, hex::encode(Sha256::digest(fs::read(path)?)));
            }
        }
        let stats: Option<GatewayStats> = gateway.map(Gateway::stats);
        let manifest = json!({
            "command": command,
            "tool_version": env!("CARGO_PKG_VERSION"),
            "config_digest": self.config.digest(),
            "config": self.config,
            "seed": self.config.seed,
            "corpus": corpus,
            "cache": {
                "entries_before": cache_before,
                "entries_after": gateway.and_then(|g| g.cache()).map(|c| c.len()),
            },
            "gateway": stats,
            "outputs": digests,
        });
        let path = self.layout.manifest(command);
        fs::create_dir_all(path.parent().expect("manifest dir"))?;
        fs::write(path, serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn cmd_partition(s: &Session) -> Result<PathBuf, CliError> {
    let train = s.train()?;
    let stats = partition_stats(&train)?;
    let path = s.layout.partition();
    write_json(&path, &stats)?;
    let mut counts = String::new();
    for g in QueryGroup::ALL {
        counts.push_str(&format!("{}: {}  ", g.title(), stats.counts[&g]));
    }
    println!("{} training examples. {}", stats.total, counts.trim_end());
    s.write_manifest(
        "partition",
        json!({ "train": corpus_digest(&train) }),
        None,
        None,
        std::slice::from_ref(&path),
    )?;
    Ok(path)
}

pub fn cmd_build_bank(s: &Session) -> Result<Vec<BuildLog>, CliError> {
    let train = s.train()?;
    let schemas = s.schemas()?;
    let buckets = partition_corpus(&train)?;
    let gateway = s.gateway(&train)?;
    let cache_before = gateway.cache().map(|c| c.len());
    let executor = s.executor();
    let digest = corpus_digest(&train);
    let built_at = build_timestamp();
    let p = &s.config.provider;

    let mut logs = Vec::new();
    let mut outputs = Vec::new();
    for group in bank_groups(s.format()) {
        let config = BuildConfig {
            cap: s.config.cap(group),
            seed: s.config.seed,
            model: p.model.clone(),
            context_limit: p.bank_context_limit,
            temperature: p.temperature,
            max_output_tokens: s.config.bank_max_output_tokens,
            format: s.format(),
            corpus_digest: digest.clone(),
            built_at: built_at.clone(),
        };
        let path = bank_file_name(&s.layout.banks(), group);
        match build_bank(group, &buckets[&group], &schemas, &config, &gateway, &executor) {
            Ok((bank, log)) => {
                persist_bank(&bank, &path)?;
                println!("{}: kept {} of {} sampled", group.title(), log.kept, log.sampled);
                outputs.push(path);
                logs.push(log);
            }
            Err(BankError::BankEmpty { log, .. }) => {
                tracing::warn!(group = group.as_str(), "bank is empty");
                println!("{}: kept 0 of {} sampled", group.title(), log.sampled);
                if path.exists() {
                    fs::remove_file(&path)?;
                }
                logs.push(*log);
            }
            Err(e) => return Err(e.into()),
        }
    }
    write_json(&s.layout.build_log(), &logs)?;
    outputs.push(s.layout.build_log());
    s.write_manifest(
        "build-bank",
        json!({ "train": digest }),
        cache_before,
        Some(&gateway),
        &outputs,
    )?;
    if logs.iter().all(|l| l.kept == 0) {
        return Err(CliError::Other("every drill bank is empty".into()));
    }
    Ok(logs)
}

pub fn cmd_infer(s: &Session) -> Result<PathBuf, CliError> {
    let eval = s.eval()?;
    let schemas = s.schemas()?;
    let banks = s.banks()?;
    let gateway = Arc::new(s.gateway(&eval)?);
    let cache_before = gateway.cache().map(|c| c.len());
    let classifier = s.classifier(&gateway);
    let p = &s.config.provider;
    let engine = InferenceEngine::new(
        &banks,
        &schemas,
        &classifier,
        &gateway,
        InferenceConfig {
            model: p.model.clone(),
            context_limit: p.context_limit,
            temperature: p.temperature,
            format: s.format(),
            strategy: s.config.selection_strategy()?,
            no_qgp: s.config.no_qgp,
        },
    );
    let records = engine.infer_all(&eval);
    let predictions: Vec<_> = records.into_iter().map(|r| r.prediction).collect();
    let failed = predictions
        .iter()
        .filter(|p| p.flags.iter().any(|f| f.starts_with("error")))
        .count();
    let path = s.layout.predictions();
    write_predictions(&path, &predictions)?;
    println!("{} predictions written, {failed} failed", predictions.len());
    let bank_digests: BTreeMap<&str, String> = banks
        .iter()
        .map(|(g, b)| (g.as_str(), b.provenance.corpus_digest.clone()))
        .collect();
    s.write_manifest(
        "infer",
        json!({ "eval": corpus_digest(&eval), "banks": bank_digests }),
        cache_before,
        Some(&gateway),
        std::slice::from_ref(&path),
    )?;
    Ok(path)
}

pub fn cmd_evaluate(s: &Session, predictions: Option<&Path>) -> Result<EvalReport, CliError> {
    let eval = s.eval()?;
    let schemas = s.schemas()?;
    let pred_path = predictions.map_or_else(|| s.layout.predictions(), Path::to_path_buf);
    let preds = read_predictions(&pred_path)?;
    let verdicts = evaluate_predictions(&s.executor(), &preds, &eval, &schemas, s.config.ves_repeats)?;
    let report = aggregate(&verdicts, Some(s.config.strategy_label()));
    write_json(&s.layout.report_json(), &report)?;
    let text = render_report(&report);
    fs::write(s.layout.report_txt(), &text)?;
    print!("{text}");
    s.write_manifest(
        "evaluate",
        json!({ "eval": corpus_digest(&eval) }),
        None,
        None,
        &[s.layout.report_json(), s.layout.report_txt()],
    )?;
    Ok(report)
}

pub fn cmd_report(s: &Session) -> Result<String, CliError> {
    let path = s.layout.report_json();
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::Other(format!("{}: {e}; run evaluate first", path.display())))?;
    let report: EvalReport = serde_json::from_str(&text)?;
    let rendered = render_report(&report);
    print!("{rendered}");
    Ok(rendered)
}

/// Writes the fixture corpus into `dir` with a `config.json` that uses the
/// echo-gold mock provider.
pub fn cmd_init_fixture(dir: &Path) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir)?;
    write_fixture_corpus(dir)?;
    let config = json!({
        "dataset": {
            "format": "spider",
            "train": "train.json",
            "eval": "dev.json",
            "tables": "tables.json",
            "db_root": "database",
        },
        "provider": {
            "kind": "mock-echo-gold",
            "model": "mock",
            "context_limit": 4096,
            "bank_context_limit": 4096,
            "parallelism": 4,
        },
        "strategy": { "kind": "mixed", "k": 4 },
        "classifier": "gold_sql_oracle",
        "seed": 0,
        "output_dir": "out",
    });
    let path = dir.join("config.json");
    write_json(&path, &config)?;
    println!("fixture corpus written to {}", dir.display());
    Ok(path)
}

/// Dispatches a parsed command line.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    if let Command::InitFixture { dir } = &cli.command {
        cmd_init_fixture(dir)?;
        return Ok(());
    }
    let path = cli
        .overrides
        .config
        .as_deref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let config = apply_overrides(RunConfig::load(path)?, &cli.overrides)?;
    let session = Session::new(config)?;
    match &cli.command {
        Command::Partition => cmd_partition(&session).map(drop),
        Command::BuildBank => cmd_build_bank(&session).map(drop),
        Command::Infer => cmd_infer(&session).map(drop),
        Command::Evaluate { predictions } => cmd_evaluate(&session, predictions.as_deref()).map(drop),
        Command::Report => cmd_report(&session).map(drop),
        Command::InitFixture { .. } => unreachable!(),
    }
}

/// Parses an argument list (without the program name) and runs it.
pub fn run_args(args: impl IntoIterator<Item = String>) -> Result<(), CliError> {
    let argv = std::iter::once("sqldrill".to_string()).chain(args);
    let cli = Cli::try_parse_from(argv).map_err(|e| CliError::Config(e.to_string()))?;
    run(&cli)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let cfg = cmd_init_fixture(dir.path()).unwrap();
        (dir, cfg)
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let (dir, cfg) = fixture();
        let c = RunConfig::load(&cfg).unwrap();
        assert_eq!(c.dataset.tables, dir.path().join("tables.json"));
        assert_eq!(c.dataset.train, Some(dir.path().join("train.json")));
        assert_eq!(c.output_dir, dir.path().join("out"));
        assert_eq!(c.cap(QueryGroup::Combination), 518);
    }

    #[test]
    fn overrides_are_validated() {
        let (_dir, cfg) = fixture();
        let base = RunConfig::load(&cfg).unwrap();
        let odd = Overrides {
            shots: Some(3),
            ..Overrides::default()
        };
        assert_eq!(apply_overrides(base.clone(), &odd).unwrap_err().exit_code(), 2);
        let sem = Overrides {
            strategy: Some(StrategyKind::Semantic),
            shots: Some(1),
            no_qgp: true,
            ..Overrides::default()
        };
        let c = apply_overrides(base, &sem).unwrap();
        assert_eq!(c.strategy_label(), "semantic k=1, w/o QGP");
    }

    #[test]
    fn exit_code_classes() {
        let (_dir, cfg) = fixture();
        let missing = Cli::try_parse_from(["sqldrill", "partition", "--config", "/nonexistent.json"]).unwrap();
        assert_eq!(run(&missing).unwrap_err().exit_code(), 2);

        let mut c = RunConfig::load(&cfg).unwrap();
        fs::write(c.dataset.train.as_ref().unwrap(), "[]").unwrap();
        let s = Session::new(c.clone()).unwrap();
        assert_eq!(cmd_partition(&s).unwrap_err().exit_code(), 3);

        c.provider.kind = ProviderKind::Openai;
        c.provider.api_key_env = "SQLDRILL_TEST_UNSET_KEY".into();
        let s = Session::new(c).unwrap();
        assert_eq!(s.gateway(&[]).err().unwrap().exit_code(), 4);
    }

    #[test]
    fn split_draws_disjoint_halves_from_one_file() {
        let (dir, cfg) = fixture();
        let mut c = RunConfig::load(&cfg).unwrap();
        c.dataset.train = None;
        c.dataset.eval = None;
        c.dataset.split = Some(SplitConfig {
            source: dir.path().join("dev.json"),
            train_fraction: 0.5,
        });
        let c = apply_overrides(c, &Overrides::default()).unwrap();
        let s = Session::new(c).unwrap();
        let (train, eval) = (s.train().unwrap(), s.eval().unwrap());
        assert_eq!(train.len() + eval.len(), 12);
        assert!(train.iter().all(|t| eval.iter().all(|e| e.id != t.id)));

        let mut bad = s.config.clone();
        bad.dataset.train = Some(dir.path().join("train.json"));
        assert_eq!(apply_overrides(bad, &Overrides::default()).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn unknown_config_fields_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"dataset":{"train":"a","eval":"b","tables":"c","db_root":"d"},"provider":{"kind":"openai","model":"m","api_key":"sk-x"}}"#).unwrap();
        assert!(matches!(RunConfig::load(&path), Err(CliError::Config(_))));
    }
}
