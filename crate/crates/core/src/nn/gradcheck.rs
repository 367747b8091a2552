//! Central finite-difference check of the analytic gradients.

use std::collections::HashMap;

use ndarray::ArrayD;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{loss, loss_and_grad, Model, NnError};
use crate::tok::ModelInput;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum TensorStatus {
    Checked { entries: usize, max_rel_err: f64 },
    /// Frozen tensor: the backward pass produces nothing for it.
    NoGradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    #[serde(flatten)]
    pub status: TensorStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub eps: f64,
    pub max_rel_err: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn get(&self, name: &str) -> Option<&TensorStatus> {
        self.tensors.iter().find(|t| t.name == name).map(|t| &t.status)
    }
}

fn eval_loss(model: &Model<f64>, input: &ModelInput) -> Result<f64, NnError> {
    loss(&model.logits(input)?, input)
}

/// Relative error with denominator `max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Checks every tensor whose name contains one of `select` (all tensors if
/// `select` is empty), on up to `per_tensor` random entries each. Runs
/// without dropout.
pub fn grad_check(
    model: &Model<f64>,
    input: &ModelInput,
    eps: f64,
    select: &[&str],
    per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport, NnError> {
    let bias = model.structural_bias(input)?;
    let (logits, cache) = model.forward(input, bias.as_ref(), None)?;
    let (_, dlogits) = loss_and_grad(&logits, input)?;
    let mut grads = model.zero_grads();
    model.backward(input, &cache, &dlogits, &mut grads);
    let analytic: HashMap<String, ArrayD<f64>> =
        grads.named_tensors().into_iter().map(|(n, t)| (n, t.to_owned())).collect();

    let names: Vec<(String, usize)> = model
        .named_tensors()
        .into_iter()
        .filter(|(n, _)| select.is_empty() || select.iter().any(|s| n.contains(s)))
        .map(|(n, t)| (n, t.len()))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = model.clone();
    let mut report = GradCheckReport { eps, max_rel_err: 0.0, tensors: Vec::new() };
    for (name, len) in names {
        let Some(grad) = analytic.get(&name) else {
            report.tensors.push(TensorCheck { name, status: TensorStatus::NoGradient });
            continue;
        };
        let grad = grad.as_slice_memory_order().expect("owned gradients are contiguous");
        let picks = sample(&mut rng, len, per_tensor.min(len));
        let mut worst = 0.0f64;
        for i in picks.iter() {
            let orig = get_entry(&mut work, &name, i);
            set_entry(&mut work, &name, i, orig + eps);
            let plus = eval_loss(&work, input)?;
            set_entry(&mut work, &name, i, orig - eps);
            let minus = eval_loss(&work, input)?;
            set_entry(&mut work, &name, i, orig);
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(grad[i], numeric));
        }
        report.max_rel_err = report.max_rel_err.max(worst);
        report.tensors.push(TensorCheck { name, status: TensorStatus::Checked { entries: picks.len(), max_rel_err: worst } });
    }
    Ok(report)
}

fn get_entry(model: &mut Model<f64>, name: &str, i: usize) -> f64 {
    let mut tensors = model.named_tensors_mut();
    let (_, t) = tensors.iter_mut().find(|(n, _)| n == name).expect("tensor exists");
    t.as_slice_memory_order().expect("contiguous")[i]
}

fn set_entry(model: &mut Model<f64>, name: &str, i: usize, v: f64) {
    let mut tensors = model.named_tensors_mut();
    let (_, t) = tensors.iter_mut().find(|(n, _)| n == name).expect("tensor exists");
    t.as_slice_memory_order_mut().expect("contiguous")[i] = v;
}
