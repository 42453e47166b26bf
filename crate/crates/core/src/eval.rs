//! Retrieval and answer scoring: substring and token precision/recall
//! against ground truth, binary YES/NO answer judging, and pairwise win
//! rates, all behind pluggable judge providers.
//!
//! Undefined metrics (0/0) are reported as value 0 with an explicit
//! `undefined` flag; NaN never leaves this module.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llm::LlmClient;
use crate::retrieval::QueryResult;
pub use crate::text::eval_tokenize;

/// Reference data for one question.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub question: String,
    pub reference_answer: Option<String>,
    #[serde(default)]
    pub evidence_strings: Vec<String>,
    #[serde(default)]
    pub evidence_entities: Vec<String>,
}

impl GroundTruth {
    pub fn validate(&self) -> Result<()> {
        if self.reference_answer.is_none()
            && self.evidence_strings.is_empty()
            && self.evidence_entities.is_empty()
        {
            return Err(Error::InvalidArgument(
                "ground truth needs a reference answer or evidence".into(),
            ));
        }
        Ok(())
    }
}

/// Precision/recall with the raw counts retained for aggregation. A zero
/// denominator reports value 0 and sets the matching `undefined` flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub precision_numerator: usize,
    pub precision_denominator: usize,
    pub recall_numerator: usize,
    pub recall_denominator: usize,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
}

impl PrecisionRecall {
    fn from_counts(p_num: usize, p_den: usize, r_num: usize, r_den: usize) -> Self {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                (0.0, true)
            } else {
                (num as f64 / den as f64, false)
            }
        };
        let (precision, precision_undefined) = ratio(p_num, p_den);
        let (recall, recall_undefined) = ratio(r_num, r_den);
        PrecisionRecall {
            precision,
            recall,
            precision_numerator: p_num,
            precision_denominator: p_den,
            recall_numerator: r_num,
            recall_denominator: r_den,
            precision_undefined,
            recall_undefined,
        }
    }
}

/// Case-insensitive substring matching against ground-truth strings.
///
/// Recall: fraction of evidence strings found anywhere in the retrieved
/// contexts. Precision: fraction of context chunks containing at least one
/// evidence string.
pub fn substring_precision_recall(
    contexts: &[String],
    evidence_strings: &[String],
) -> PrecisionRecall {
    let lowered_contexts: Vec<String> = contexts.iter().map(|c| c.to_lowercase()).collect();
    let haystack = lowered_contexts.join("\n");
    let lowered_evidence: Vec<String> =
        evidence_strings.iter().map(|e| e.to_lowercase()).collect();

    let recall_hits = lowered_evidence
        .iter()
        .filter(|e| haystack.contains(e.as_str()))
        .count();
    let precision_hits = lowered_contexts
        .iter()
        .filter(|c| lowered_evidence.iter().any(|e| c.contains(e.as_str())))
        .count();
    PrecisionRecall::from_counts(
        precision_hits,
        contexts.len(),
        recall_hits,
        evidence_strings.len(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenOverlap {
    /// Duplicated tokens counted once.
    #[default]
    Set,
    /// Duplicates matched by multiplicity.
    Multiset,
}

/// Token-overlap precision/recall between the retrieved contexts and the
/// ground-truth text, over the shared lowercase-alphanumeric tokens.
pub fn token_precision_recall(contexts: &[String], ground_truth_text: &str) -> PrecisionRecall {
    token_precision_recall_with(contexts, ground_truth_text, TokenOverlap::Set)
}

pub fn token_precision_recall_with(
    contexts: &[String],
    ground_truth_text: &str,
    overlap: TokenOverlap,
) -> PrecisionRecall {
    let retrieved = eval_tokenize(&contexts.join(" "));
    let truth = eval_tokenize(ground_truth_text);
    match overlap {
        TokenOverlap::Set => {
            let retrieved: HashSet<&str> = retrieved.iter().map(String::as_str).collect();
            let truth: HashSet<&str> = truth.iter().map(String::as_str).collect();
            let common = truth.intersection(&retrieved).count();
            PrecisionRecall::from_counts(common, retrieved.len(), common, truth.len())
        }
        TokenOverlap::Multiset => {
            fn count(tokens: &[String]) -> HashMap<&str, usize> {
                let mut map: HashMap<&str, usize> = HashMap::new();
                for t in tokens {
                    *map.entry(t.as_str()).or_insert(0) += 1;
                }
                map
            }
            let retrieved = count(&retrieved);
            let truth = count(&truth);
            let common: usize = truth
                .iter()
                .map(|(t, &n)| n.min(retrieved.get(t).copied().unwrap_or(0)))
                .sum();
            let r_total: usize = retrieved.values().sum();
            let t_total: usize = truth.values().sum();
            PrecisionRecall::from_counts(common, r_total, common, t_total)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "YES")]
    Yes,
    #[serde(rename = "NO")]
    No,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub verdict: Verdict,
    /// Unmodified provider output, kept for audits.
    pub raw: String,
}

/// Normalize a judge reply to the binary verdict: trim, strip terminal
/// punctuation, case-fold. Anything else fails to parse.
pub fn normalize_verdict(raw: &str) -> Option<Verdict> {
    let cleaned = raw
        .trim()
        .trim_end_matches(['.', '!', '?', ',', ';', ':'])
        .trim();
    match cleaned.to_uppercase().as_str() {
        "YES" => Some(Verdict::Yes),
        "NO" => Some(Verdict::No),
        _ => None,
    }
}

/// Grades one candidate answer against a reference.
pub trait AnswerJudge: Send + Sync {
    fn judge(&self, question: &str, candidate: &str, reference: &str) -> Result<JudgeVerdict>;
}

/// Compare a candidate answer with the reference; requires a non-empty
/// reference.
pub fn judge_oltp(
    question: &str,
    candidate: &str,
    reference: &str,
    judge: &dyn AnswerJudge,
) -> Result<JudgeVerdict> {
    if reference.is_empty() {
        return Err(Error::InvalidArgument(
            "judge_oltp requires a reference answer".into(),
        ));
    }
    judge.judge(question, candidate, reference)
}

/// Deterministic offline judge: YES iff the candidate's token multiset
/// contains the reference's (every reference token appears at least as
/// often in the candidate). A strict containment proxy, not a semantic one.
#[derive(Debug, Clone, Copy, Default)]
pub struct ContainmentJudge;

impl AnswerJudge for ContainmentJudge {
    fn judge(&self, _question: &str, candidate: &str, reference: &str) -> Result<JudgeVerdict> {
        let mut counts: HashMap<String, i64> = HashMap::new();
        for token in eval_tokenize(candidate) {
            *counts.entry(token).or_insert(0) += 1;
        }
        let mut contained = true;
        for token in eval_tokenize(reference) {
            let slot = counts.entry(token).or_insert(0);
            *slot -= 1;
            if *slot < 0 {
                contained = false;
                break;
            }
        }
        let verdict = if contained { Verdict::Yes } else { Verdict::No };
        Ok(JudgeVerdict {
            verdict,
            raw: format!("{verdict:?}").to_uppercase(),
        })
    }
}

const OLTP_JUDGE_TEMPLATE: &str = "Question: {question}\nReference answer: {reference}\n\
Candidate answer: {candidate}\n\nDoes the candidate answer convey the same facts as the \
reference answer? Reply with YES or NO only.";

/// Remote judge: asks for a bare YES/NO and retries unparseable replies up
/// to 3 times before failing.
pub struct LlmAnswerJudge {
    client: Box<dyn LlmClient>,
}

impl LlmAnswerJudge {
    pub fn new(client: Box<dyn LlmClient>) -> Self {
        LlmAnswerJudge { client }
    }
}

impl AnswerJudge for LlmAnswerJudge {
    fn judge(&self, question: &str, candidate: &str, reference: &str) -> Result<JudgeVerdict> {
        let prompt = OLTP_JUDGE_TEMPLATE
            .replace("{question}", question)
            .replace("{reference}", reference)
            .replace("{candidate}", candidate);
        let mut last = String::new();
        for _ in 0..3 {
            let raw = self.client.complete(&prompt)?;
            if let Some(verdict) = normalize_verdict(&raw) {
                return Ok(JudgeVerdict { verdict, raw });
            }
            last = raw;
        }
        Err(Error::JudgeUnparseable { attempts: 3, last })
    }
}

/// Pairwise judging criteria with the descriptions handed to the judge.
pub const CRITERIA: [(&str, &str); 3] = [
    ("comprehensiveness", "depth and thoroughness of the information"),
    ("diversity", "inclusion of multiple perspectives"),
    ("empowerment", "how well the answer informs decision-making"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preference {
    First,
    Second,
    Tie,
}

/// Judges which of two answers is better on one criterion. Called with the
/// answers in presentation order; position swapping is the caller's job.
pub trait PairwiseJudge: Send + Sync {
    fn compare(
        &self,
        question: &str,
        criterion: &str,
        first: &str,
        second: &str,
    ) -> Result<Preference>;
}

/// Deterministic offline pairwise judge using blunt per-criterion proxies:
/// total tokens for comprehensiveness, distinct tokens for diversity,
/// sentence count for empowerment. Position-independent by construction.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicPairwiseJudge;

impl PairwiseJudge for HeuristicPairwiseJudge {
    fn compare(
        &self,
        _question: &str,
        criterion: &str,
        first: &str,
        second: &str,
    ) -> Result<Preference> {
        let measure = |text: &str| -> usize {
            match criterion {
                "comprehensiveness" => eval_tokenize(text).len(),
                "diversity" => eval_tokenize(text)
                    .into_iter()
                    .collect::<HashSet<_>>()
                    .len(),
                "empowerment" => text.matches(['.', '!', '?']).count(),
                _ => eval_tokenize(text).len(),
            }
        };
        Ok(match measure(first).cmp(&measure(second)) {
            std::cmp::Ordering::Greater => Preference::First,
            std::cmp::Ordering::Less => Preference::Second,
            std::cmp::Ordering::Equal => Preference::Tie,
        })
    }
}

const PAIRWISE_JUDGE_TEMPLATE: &str = "Question: {question}\n\nAnswer 1:\n{first}\n\n\
Answer 2:\n{second}\n\nWhich answer is better on {criterion} ({description})? \
Reply with 1, 2, or TIE only.";

pub struct LlmPairwiseJudge {
    client: Box<dyn LlmClient>,
}

impl LlmPairwiseJudge {
    pub fn new(client: Box<dyn LlmClient>) -> Self {
        LlmPairwiseJudge { client }
    }
}

impl PairwiseJudge for LlmPairwiseJudge {
    fn compare(
        &self,
        question: &str,
        criterion: &str,
        first: &str,
        second: &str,
    ) -> Result<Preference> {
        let description = CRITERIA
            .iter()
            .find(|(name, _)| *name == criterion)
            .map(|(_, d)| *d)
            .unwrap_or("overall quality");
        let prompt = PAIRWISE_JUDGE_TEMPLATE
            .replace("{question}", question)
            .replace("{first}", first)
            .replace("{second}", second)
            .replace("{criterion}", criterion)
            .replace("{description}", description);
        let mut last = String::new();
        for _ in 0..3 {
            let raw = self.client.complete(&prompt)?;
            let cleaned = raw.trim().trim_end_matches(['.', '!']).trim().to_uppercase();
            match cleaned.as_str() {
                "1" | "ANSWER 1" => return Ok(Preference::First),
                "2" | "ANSWER 2" => return Ok(Preference::Second),
                "TIE" => return Ok(Preference::Tie),
                _ => last = raw,
            }
        }
        Err(Error::JudgeUnparseable { attempts: 3, last })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    AWin,
    BWin,
    Tie,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriterionWinRate {
    pub criterion: String,
    /// Mean win rate for answer A: wins plus half the ties, over repeats.
    pub win_rate: f64,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
}

/// Result of repeated pairwise judging. `verdicts[r][c]` is repeat r,
/// criterion c (in [`CRITERIA`] order).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WinRateReport {
    pub repeats: usize,
    pub criteria: Vec<CriterionWinRate>,
    pub verdicts: Vec<Vec<Outcome>>,
}

/// Judge answers A and B `repeats` times per criterion, swapping positions
/// on alternating repeats to cancel position bias; ties count one half. A
/// judge failure aborts with the partial report attached to the error.
pub fn pairwise_win_rate(
    question: &str,
    answer_a: &str,
    answer_b: &str,
    judge: &dyn PairwiseJudge,
    repeats: usize,
) -> Result<WinRateReport> {
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be >= 1".into()));
    }
    let mut verdicts: Vec<Vec<Outcome>> = Vec::with_capacity(repeats);
    for repeat in 0..repeats {
        let swapped = repeat % 2 == 1;
        let mut row = Vec::with_capacity(CRITERIA.len());
        for (criterion, _) in CRITERIA {
            let (first, second) = if swapped {
                (answer_b, answer_a)
            } else {
                (answer_a, answer_b)
            };
            let preference = match judge.compare(question, criterion, first, second) {
                Ok(p) => p,
                Err(e) => {
                    return Err(Error::PairwiseAborted {
                        completed: repeat,
                        requested: repeats,
                        reason: e.to_string(),
                        partial: Box::new(summarize_win_rates(&verdicts, repeat.max(1))),
                    })
                }
            };
            let outcome = match (preference, swapped) {
                (Preference::Tie, _) => Outcome::Tie,
                (Preference::First, false) | (Preference::Second, true) => Outcome::AWin,
                (Preference::First, true) | (Preference::Second, false) => Outcome::BWin,
            };
            row.push(outcome);
        }
        verdicts.push(row);
    }
    Ok(summarize_win_rates(&verdicts, repeats))
}

fn summarize_win_rates(verdicts: &[Vec<Outcome>], repeats: usize) -> WinRateReport {
    let criteria = CRITERIA
        .iter()
        .enumerate()
        .map(|(c, (name, _))| {
            let mut wins = 0usize;
            let mut losses = 0usize;
            let mut ties = 0usize;
            for row in verdicts {
                match row[c] {
                    Outcome::AWin => wins += 1,
                    Outcome::BWin => losses += 1,
                    Outcome::Tie => ties += 1,
                }
            }
            CriterionWinRate {
                criterion: (*name).to_owned(),
                win_rate: (wins as f64 + 0.5 * ties as f64) / repeats as f64,
                wins,
                losses,
                ties,
            }
        })
        .collect();
    WinRateReport {
        repeats,
        criteria,
        verdicts: verdicts.to_vec(),
    }
}

#[derive(Debug, Deserialize)]
struct DatasetRecord {
    question: String,
    #[serde(default)]
    answer: Option<String>,
    #[serde(default)]
    evidence: Vec<String>,
    #[serde(default)]
    entities: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

/// Load an evaluation dataset (JSONL: `question`, optional `answer`,
/// optional `evidence`, optional `entities`). Malformed lines are skipped
/// and reported rather than failing the run.
pub fn load_dataset(path: &Path) -> Result<(Vec<GroundTruth>, Vec<SkippedLine>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<DatasetRecord>(&line) {
            Ok(record) => {
                let ground_truth = GroundTruth {
                    question: record.question,
                    reference_answer: record.answer,
                    evidence_strings: record.evidence,
                    evidence_entities: record.entities,
                };
                match ground_truth.validate() {
                    Ok(()) => rows.push(ground_truth),
                    Err(e) => skipped.push(SkippedLine {
                        line: line_no,
                        reason: e.to_string(),
                    }),
                }
            }
            Err(e) => skipped.push(SkippedLine {
                line: line_no,
                reason: e.to_string(),
            }),
        }
    }
    Ok((rows, skipped))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRow {
    pub question: String,
    pub context_count: usize,
    pub substring: Option<PrecisionRecall>,
    pub token: Option<PrecisionRecall>,
    pub judge: Option<JudgeVerdict>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MetricAggregate {
    pub mean: f64,
    /// Population standard deviation.
    pub stdev: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub aggregate: BTreeMap<String, MetricAggregate>,
    pub skipped: Vec<SkippedLine>,
    pub failed_questions: usize,
}

/// Evaluate retrieval over a dataset: retrieve per question, score against
/// the ground truth, optionally judge the concatenated contexts against the
/// reference answer. Per-question failures are recorded and the run
/// continues; questions evaluate in parallel and reduce in dataset order.
pub fn run_eval<F>(
    dataset: &[GroundTruth],
    retrieve: F,
    judge: Option<&dyn AnswerJudge>,
) -> EvalReport
where
    F: Fn(&str) -> Result<QueryResult> + Sync,
{
    use rayon::prelude::*;
    let rows: Vec<EvalRow> = dataset
        .par_iter()
        .map(|gt| evaluate_question(gt, &retrieve, judge))
        .collect();

    let mut aggregate = BTreeMap::new();
    let collect = |name: &str, values: Vec<f64>| -> Option<(String, MetricAggregate)> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some((
            name.to_owned(),
            MetricAggregate {
                mean,
                stdev: variance.sqrt(),
                count: values.len(),
            },
        ))
    };
    let pick = |f: &dyn Fn(&EvalRow) -> Option<f64>| -> Vec<f64> {
        rows.iter().filter_map(|r| f(r)).collect()
    };
    let entries = [
        collect("substring_precision", pick(&|r| r.substring.map(|m| m.precision))),
        collect("substring_recall", pick(&|r| r.substring.map(|m| m.recall))),
        collect("token_precision", pick(&|r| r.token.map(|m| m.precision))),
        collect("token_recall", pick(&|r| r.token.map(|m| m.recall))),
        collect(
            "judge_yes_rate",
            pick(&|r| {
                r.judge.as_ref().map(|j| match j.verdict {
                    Verdict::Yes => 1.0,
                    Verdict::No => 0.0,
                })
            }),
        ),
    ];
    for entry in entries.into_iter().flatten() {
        aggregate.insert(entry.0, entry.1);
    }
    let failed_questions = rows.iter().filter(|r| r.error.is_some()).count();
    EvalReport {
        rows,
        aggregate,
        skipped: Vec::new(),
        failed_questions,
    }
}

fn evaluate_question<F>(gt: &GroundTruth, retrieve: &F, judge: Option<&dyn AnswerJudge>) -> EvalRow
where
    F: Fn(&str) -> Result<QueryResult> + Sync,
{
    let result = match retrieve(&gt.question) {
        Ok(r) => r,
        Err(e) => {
            return EvalRow {
                question: gt.question.clone(),
                context_count: 0,
                substring: None,
                token: None,
                judge: None,
                error: Some(e.to_string()),
            }
        }
    };
    let contexts: Vec<String> = result.contexts.iter().map(|c| c.text.clone()).collect();

    let evidence = if !gt.evidence_strings.is_empty() {
        Some(&gt.evidence_strings)
    } else if !gt.evidence_entities.is_empty() {
        Some(&gt.evidence_entities)
    } else {
        None
    };
    let substring = evidence.map(|e| substring_precision_recall(&contexts, e));

    let token_truth = if !gt.evidence_strings.is_empty() {
        Some(gt.evidence_strings.join(" "))
    } else {
        gt.reference_answer.clone()
    };
    let token = token_truth.map(|t| token_precision_recall(&contexts, &t));

    let mut error = None;
    let judge_verdict = match (judge, &gt.reference_answer) {
        (Some(judge), Some(reference)) if !reference.is_empty() => {
            let candidate = contexts.join("\n");
            match judge_oltp(&gt.question, &candidate, reference, judge) {
                Ok(verdict) => Some(verdict),
                Err(e) => {
                    error = Some(e.to_string());
                    None
                }
            }
        }
        _ => None,
    };

    EvalRow {
        question: gt.question.clone(),
        context_count: contexts.len(),
        substring,
        token,
        judge: judge_verdict,
        error,
    }
}
