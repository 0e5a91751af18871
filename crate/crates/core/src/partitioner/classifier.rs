use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{extract_keyword_labels, PartitionError};
use crate::corpus::{QueryExample, QueryGroup};
use crate::gateway::{CompletionRequest, Gateway, GatewayError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    /// Keyword labels of the example's gold SQL.
    #[default]
    GoldSqlOracle,
    /// Few-shot classification prompt through the gateway.
    LlmPrompted,
    /// A separately served model behind a local HTTP endpoint.
    External,
}

impl FromStr for ClassifierKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "gold" | "gold_sql_oracle" | "oracle" => Ok(ClassifierKind::GoldSqlOracle),
            "llm" | "llm_prompted" => Ok(ClassifierKind::LlmPrompted),
            "external" => Ok(ClassifierKind::External),
            other => Err(format!("unknown classifier `{other}`")),
        }
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassifierKind::GoldSqlOracle => "gold_sql_oracle",
            ClassifierKind::LlmPrompted => "llm_prompted",
            ClassifierKind::External => "external",
        })
    }
}

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("no `Type:` line maps to a group in: {0:?}")]
    UnparseableClassification(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error("external classifier: {0}")]
    External(String),
}

pub const CLASSIFICATION_HEADER: &str = "You are a Text-to-SQL expert. Your task is to classify text-based queries.";

const CLASSIFICATION_PROMPT: &str = "\
You are a Text-to-SQL expert. Your task is to classify text-based queries. The types are defined as follows:
1. Set operations, which require complex logical connections between multiple conditions and often involve the use of intersect, except, union, and other operations;
2. Combination operations, which require grouping of specific objects and finding the maximum value or sorting, often achieved using GROUP BY;
3. Filtering problems, which select targets based on specific judgment conditions, generally completed using where statements;
4. Other simple problems, including simple retrieval and sorting.
Your task is to judge the query step by step to see if it belongs to a certain category. For example, if you think the query has the characteristics of the first type, then classify it as the first type without considering the subsequent types. If you think the query does not have the characteristics of the first type but has the second type, then classify it as the second type without considering the subsequent types.

## Example 1:
What are the ids of the students who either registered or attended a course?
Reason: We first consider Set operations. The query can be considered union logic which finds students that registered or attended a course, so it is classified as Set operations.
Type: Multi-set operations

## Example 2:
List the states where both the Secretary of 'Treasury' department and the Secretary of 'Homeland Security' were born.
Reason: We first consider Set operations. The query can be considered intersection logic which requires the intersection of states that 'Treasury' and 'Homeland Security' were born, so it is classified as Set operations.
Type: Multi-set operations

## Example 3:
Find all the zip codes in which the max dew point has never reached 70.
Reason: We first consider Set operations. The query can be seen as a difference logic, which removes zip codes that have reached a dew point of 70 from all zip codes, so it is classified as Set operations.
Type: Multi-set operations

## Example 4:
Find the name of customers who do not have an saving account.
Reason: We first consider Set operations. The query can be consiederd difference logic, which removes customers having an saving account from all customers, so it is classified as Set operations.
Type: Multi-set operations

## Example 5:
Which origin has the most number of flights?
Reason: We first consider Set operations. This query does not involve logical connection relationships. We secondly consider Combination operations. This query requires statistical counting of flights within different origins, so it is classified as Combination operations.
Type: Combination operations

## Example 6:
Which course is enrolled in by most students? Give me the course name.
Reason: We first consider Set operations. This query does not involve logical connection relationships. We secondly consider Combination operations. This query requires statistical counting of students within different courses, so it is classified as Combination operations.
Type: Combination operations

## Example 7:
Find the name of the train whose route runs through the greatest number of stations.
Reason: We first consider Set operations. This query does not involve logical connection relationships. We secondly consider Combination operations. This query requires statistical counting of running stations of different trains, so it is classified as Combination operations.
Type: Combination operations

## Example 8:
What are the names of musicals with nominee \"Bob Fosse\"?
Reason: We first consider Set operations. This query does not involve logical connection relationships. We secondly consider Combination operations. This query does not involve group count. We thirdly consider Filtering problems. This query needs to filter musicals based on the name of the nomenee, so it is classified as Filtering problems.
Type: Filtering problems

## Example 9:
How many distinct kinds of camera lenses are used to take photos of mountains in the country 'Ethiopia'?
Reason: We first consider Set operations. This query does not involve logical connection relationships. We secondly consider Combination operations. This query does not involve group count. We thirdly consider Filtering problems. This query needs to filter camera lenses based on the utilization on mountains in country 'Ethiopia', so it is classified as Filtering problems.
Type: Filtering problems

## Example 10:
How many products are there?
Reason: We first consider Set operations. This query does not involve logical connection relationships. We secondly consider Combination operations. This query does not involve group count. We thirdly consider Filtering problems. This query does not involve filter criteria. So it is classified as Other simple problems.
Type: Other simple problems
";

/// The ten-exemplar classification prompt followed by the target question.
pub fn build_classification_prompt(question: &str) -> String {
    format!("{CLASSIFICATION_PROMPT}\n## Query:\n{}\n", question.trim())
}

/// Reads the last `Type:` line of a classification completion.
pub fn parse_classification(text: &str) -> Result<QueryGroup, ClassifyError> {
    let line = text
        .lines()
        .rev()
        .map(str::trim)
        .find_map(|l| {
            let l = l.trim_start_matches(['#', '*', ' ']);
            l.get(..5)
                .filter(|p| p.eq_ignore_ascii_case("type:"))
                .map(|_| l[5..].trim().to_ascii_lowercase())
        })
        .ok_or_else(|| ClassifyError::UnparseableClassification(text.to_string()))?;
    let group = if line.contains("multi-set") || line.contains("multiset") || line.contains("set operation") {
        QueryGroup::MultiSet
    } else if line.contains("combination") {
        QueryGroup::Combination
    } else if line.contains("filter") {
        QueryGroup::Filtering
    } else if line.contains("simple") {
        QueryGroup::Simple
    } else {
        return Err(ClassifyError::UnparseableClassification(text.to_string()));
    };
    Ok(group)
}

/// One classifier per pipeline run.
#[derive(Clone)]
pub enum GroupClassifier {
    GoldSqlOracle,
    LlmPrompted {
        gateway: Arc<Gateway>,
        model: String,
        context_limit: usize,
        temperature: f64,
    },
    External {
        endpoint: String,
        timeout: Duration,
    },
}

impl fmt::Debug for GroupClassifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GroupClassifier({})", self.kind())
    }
}

#[derive(Serialize)]
struct ExternalRequest<'a> {
    question: &'a str,
    schema_text: &'a str,
}

#[derive(Deserialize)]
struct ExternalResponse {
    group: String,
}

/// Output budget for a classification reply; the exemplars' answers are well under this.
const CLASSIFY_MAX_OUTPUT: usize = 256;

impl GroupClassifier {
    pub fn kind(&self) -> ClassifierKind {
        match self {
            GroupClassifier::GoldSqlOracle => ClassifierKind::GoldSqlOracle,
            GroupClassifier::LlmPrompted { .. } => ClassifierKind::LlmPrompted,
            GroupClassifier::External { .. } => ClassifierKind::External,
        }
    }

    pub fn classify(
        &self,
        example: &QueryExample,
        schema_text: &str,
    ) -> Result<QueryGroup, ClassifyError> {
        match self {
            GroupClassifier::GoldSqlOracle => Ok(extract_keyword_labels(&example.gold_sql)?.primary),
            GroupClassifier::LlmPrompted {
                gateway,
                model,
                context_limit,
                temperature,
            } => {
                let completion = gateway.complete(&CompletionRequest {
                    model: model.clone(),
                    prompt: build_classification_prompt(&example.prompt_question()),
                    temperature: *temperature,
                    max_output_tokens: CLASSIFY_MAX_OUTPUT,
                    context_limit: *context_limit,
                })?;
                parse_classification(&completion.text)
            }
            GroupClassifier::External { endpoint, timeout } => {
                classify_external(endpoint, *timeout, &example.prompt_question(), schema_text)
            }
        }
    }
}

fn classify_external(
    endpoint: &str,
    timeout: Duration,
    question: &str,
    schema_text: &str,
) -> Result<QueryGroup, ClassifyError> {
    let ext = |e: &dyn fmt::Display| ClassifyError::External(e.to_string());
    let mut body = serde_json::to_string(&ExternalRequest {
        question,
        schema_text,
    })
    .map_err(|e| ext(&e))?;
    body.push('\n');
    let client = reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| ext(&e))?;
    let resp = client
        .post(endpoint)
        .header("content-type", "application/json")
        .body(body)
        .send()
        .map_err(|e| ext(&e))?;
    if !resp.status().is_success() {
        return Err(ClassifyError::External(format!("status {}", resp.status())));
    }
    let text = resp.text().map_err(|e| ext(&e))?;
    let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let parsed: ExternalResponse = serde_json::from_str(line).map_err(|e| ext(&e))?;
    parsed
        .group
        .parse::<QueryGroup>()
        .map_err(ClassifyError::External)
}
