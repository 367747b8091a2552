use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::{evaluate, EvalReport};
use super::optim::{cosine_lr, AdamW};
use super::{HarnessError, RunConfig, CHECKPOINT_DIR, CONFIG_FILE, METRICS_FILE, REPORT_FILE, VOCAB_FILE};
use crate::adapters::{ParamCount, Variant};
use crate::nn::{loss_and_grad, save_checkpoint, Model};
use crate::taskgen::{generate, split, TaskSample};
use crate::tok::{assemble_input, build_vocab, AssembleOptions, ModelInput, Vocab};

const STREAM_SHUFFLE: u64 = 0;
const STREAM_DROPOUT: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    pub sample: TaskSample,
    pub input: ModelInput,
}

/// Generated, split and tokenized data for one table encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub vocab: Vocab,
    pub options: AssembleOptions,
    pub train: Vec<EncodedSample>,
    pub val: Vec<TaskSample>,
    pub test: Vec<TaskSample>,
}

fn share(total: usize, parts: usize, k: usize) -> usize {
    total / parts + usize::from(k < total % parts)
}

/// Generates every task's samples, splits them by table and builds the
/// vocabulary from the training split.
pub fn prepare_data(cfg: &RunConfig) -> Result<Dataset, HarnessError> {
    let d = &cfg.data;
    let n_tasks = d.tasks.len();
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (k, spec) in d.tasks.iter().enumerate() {
        let counts = [share(d.train, n_tasks, k), share(d.val, n_tasks, k), share(d.test, n_tasks, k)];
        let total: usize = counts.iter().sum();
        let seed = d.seed.wrapping_add(1_000_003 * k as u64);
        let samples = generate(spec.kind, seed, total, spec.dims)?;
        let ratios = counts.map(|c| c as f64 / total as f64);
        let s = split(samples, ratios, seed)?;
        train.extend(s.train);
        val.extend(s.val);
        test.extend(s.test);
    }

    let options = AssembleOptions {
        max_seq_len: cfg.model.max_seq_len,
        caps: cfg.adapter.caps(),
        encoding: cfg.adapter.variant.table_encoding(),
    };
    let corpus: Vec<String> =
        train.iter().map(|s| format!("{} {} {}", options.encoding.render(&s.table), s.text, s.answer)).collect();
    let vocab = build_vocab(&corpus)?;
    let train = train
        .into_iter()
        .map(|sample| {
            let input = assemble_input(&sample.table, &sample.text, &sample.answer, &vocab, &options)?;
            Ok(EncodedSample { sample, input })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(Dataset { vocab, options, train, val, test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub config_hash: String,
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_exact_match: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub variant: Variant,
    pub param_count: ParamCount,
    pub base_params: u64,
    pub epochs: usize,
    /// Epoch whose parameters were kept (0 = initialization).
    pub best_epoch: usize,
    pub val: EvalReport,
    pub test: EvalReport,
    pub wall_clock_secs: f64,
}

pub struct RunArtifacts {
    pub config: RunConfig,
    pub model: Model<f32>,
    pub metrics: Vec<EpochMetrics>,
    pub report: RunReport,
}

fn append_line<S: Serialize>(path: &Path, rec: &S) -> Result<(), HarnessError> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_string(rec)?;
    line.push('\n');
    f.write_all(line.as_bytes())?;
    Ok(())
}

/// Runs AdamW with a cosine schedule over `data.train`, keeps the epoch with
/// the best validation exact match, and scores it on `data.test`. With a
/// `run_dir`, writes the config snapshot, per-epoch metrics, checkpoint,
/// vocabulary and final report there.
pub fn train(cfg: &RunConfig, data: &Dataset, run_dir: Option<&Path>) -> Result<RunArtifacts, HarnessError> {
    let started = Instant::now();
    cfg.validate()?;
    let mut cfg = cfg.clone();
    cfg.model.vocab_size = data.vocab.len();
    let hash = cfg.hash()?;
    let o = cfg.optim.clone();

    if let Some(dir) = run_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(CONFIG_FILE), cfg.to_toml()?)?;
        let metrics = dir.join(METRICS_FILE);
        if metrics.exists() {
            fs::remove_file(&metrics)?;
        }
    }

    let mut model = Model::<f32>::new(cfg.model.clone(), cfg.adapter.clone())?;
    let param_count = model.param_count()?;
    let mut opt = AdamW::<f32>::new(o.beta1, o.beta2, o.eps, o.weight_decay);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(o.seed);
    shuffle_rng.set_stream(STREAM_SHUFFLE);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(o.seed);
    dropout_rng.set_stream(STREAM_DROPOUT);

    let per_step = o.batch_size * o.grad_accum;
    let steps_per_epoch = data.train.len().div_ceil(per_step);
    let total_steps = o.epochs * steps_per_epoch;
    let mut grads = model.zero_grads();
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut step = 0;
    let mut metrics = Vec::new();
    let mut best: Option<(f64, usize, Model<f32>)> = None;

    for epoch in 1..=o.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for chunk in order.chunks(per_step) {
            grads.fill_zero();
            for &i in chunk {
                let input = &data.train[i].input;
                let bias = model.structural_bias(input)?;
                let (logits, cache) = model.forward(input, bias.as_ref(), Some(&mut dropout_rng))?;
                let (loss, dlogits) = loss_and_grad(&logits, input)?;
                if !loss.is_finite() {
                    return Err(HarnessError::Diverged { epoch, step, loss: loss as f64 });
                }
                loss_sum += loss as f64;
                model.backward(input, &cache, &dlogits, &mut grads);
            }
            grads.scale(1.0 / chunk.len() as f32);
            if let Some(max) = o.max_grad_norm {
                let norm = grads.global_norm() as f64;
                if !norm.is_finite() {
                    return Err(HarnessError::Diverged { epoch, step, loss: norm });
                }
                if norm > max {
                    grads.scale((max / norm) as f32);
                }
            }
            lr = cosine_lr(o.lr, step, total_steps);
            opt.step(&mut model, &grads, lr);
            step += 1;
        }
        let val_em = if data.val.is_empty() {
            None
        } else {
            Some(evaluate(&model, &data.vocab, &data.val, &data.options, o.max_answer_tokens)?.exact_match())
        };
        let m = EpochMetrics {
            config_hash: hash.clone(),
            epoch,
            steps: step,
            train_loss: loss_sum / data.train.len().max(1) as f64,
            val_exact_match: val_em,
            lr,
        };
        if let Some(dir) = run_dir {
            append_line(&dir.join(METRICS_FILE), &m)?;
        }
        metrics.push(m);
        let score = val_em.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|(s, _, _)| score >= *s) {
            best = Some((score, epoch, model.clone()));
        }
    }

    let (best_epoch, model) = match best {
        Some((_, e, m)) => (e, m),
        None => (0, model),
    };
    let val = evaluate(&model, &data.vocab, &data.val, &data.options, o.max_answer_tokens)?;
    let test = evaluate(&model, &data.vocab, &data.test, &data.options, o.max_answer_tokens)?;
    let report = RunReport {
        config_hash: hash.clone(),
        variant: cfg.adapter.variant,
        param_count,
        base_params: cfg.model.base_params(),
        epochs: o.epochs,
        best_epoch,
        val,
        test,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    if let Some(dir) = run_dir {
        save_checkpoint(&model, &dir.join(CHECKPOINT_DIR), Some(&hash))?;
        data.vocab.save(&dir.join(VOCAB_FILE))?;
        fs::write(dir.join(REPORT_FILE), serde_json::to_string_pretty(&report)?)?;
    }
    Ok(RunArtifacts { config: cfg, model, metrics, report })
}
