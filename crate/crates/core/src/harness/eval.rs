use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::nn::{Model, Scalar};
use crate::taskgen::{TaskKind, TaskSample};
use crate::tok::{assemble_input, AssembleOptions, Vocab, EOS};

/// Lowercase and collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    s.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Bucket {
    pub n: usize,
    pub correct: usize,
    pub exact_match: f64,
}

impl Bucket {
    fn add(&mut self, hit: bool) {
        self.n += 1;
        self.correct += hit as usize;
        self.exact_match = self.correct as f64 / self.n as f64;
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: Bucket,
    pub per_kind: BTreeMap<TaskKind, Bucket>,
    pub per_depth: BTreeMap<usize, Bucket>,
}

impl EvalReport {
    pub fn exact_match(&self) -> f64 {
        self.overall.exact_match
    }
}

/// Scores any predictor against the reference answers.
pub fn evaluate_with<F>(samples: &[TaskSample], mut predict: F) -> Result<EvalReport, HarnessError>
where
    F: FnMut(&TaskSample) -> Result<String, HarnessError>,
{
    let mut report = EvalReport::default();
    for s in samples {
        let hit = normalize_answer(&predict(s)?) == normalize_answer(&s.answer);
        report.overall.add(hit);
        report.per_kind.entry(s.task_kind).or_default().add(hit);
        report.per_depth.entry(s.meta.header_depth).or_default().add(hit);
    }
    Ok(report)
}

/// Greedy decoding from the table and question alone; the reference answer
/// is never part of the decoder input.
pub fn greedy_decode<T: Scalar>(
    model: &Model<T>,
    vocab: &Vocab,
    table: &crate::table::Table,
    question: &str,
    opts: &AssembleOptions,
    max_answer_tokens: usize,
) -> Result<String, HarnessError> {
    let mut input = assemble_input(table, question, "", vocab, opts)?.prompt();
    let mut out = Vec::new();
    for _ in 0..max_answer_tokens {
        if input.len() >= model.cfg.max_seq_len {
            break;
        }
        let logits = model.logits(&input)?;
        let last = logits.row(logits.nrows() - 1);
        let mut best = 0;
        for (i, &v) in last.iter().enumerate() {
            if v > last[best] {
                best = i;
            }
        }
        if best == EOS {
            break;
        }
        out.push(best);
        input.push_text_token(best);
    }
    Ok(vocab.decode(&out)?)
}

pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    vocab: &Vocab,
    samples: &[TaskSample],
    opts: &AssembleOptions,
    max_answer_tokens: usize,
) -> Result<EvalReport, HarnessError> {
    evaluate_with(samples, |s| greedy_decode(model, vocab, &s.table, &s.text, opts, max_answer_tokens))
}
