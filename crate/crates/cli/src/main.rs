use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tablelora::adapters::{count_trainable, AdapterConfig, LayerSpec, ModelDims, Projection, Variant};
use tablelora::harness::{
    compare, evaluate, prepare_data, train, CompareConfig, RunConfig, CHECKPOINT_DIR, VOCAB_FILE,
};
use tablelora::nn::{grad_check, load_checkpoint, Model};
use tablelora::table::{parse_table, InputFormat};
use tablelora::taskgen::{generate, read_jsonl, write_jsonl, Dims, SizeRange, TaskKind};
use tablelora::tok::{assemble_input, AssembleOptions, TableEncoding, Vocab};

#[derive(Parser)]
#[command(name = "tablelora", version, about = "Table-aware low-rank adapters on a toy transformer")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a TSV/CSV table in one of the table encodings.
    Serialize(SerializeArgs),
    /// Generate synthetic task samples as JSON lines.
    Gen(GenArgs),
    /// Train one run from a config file.
    Train(TrainArgs),
    /// Score a trained run on a JSON-lines dataset.
    Eval(EvalArgs),
    /// Finite-difference check of the analytic gradients (64-bit).
    Gradcheck(GradcheckArgs),
    /// Train every variant over every seed and tabulate the results.
    Compare(CompareArgs),
    /// Count trainable adapter parameters.
    CountParams(CountArgs),
}

#[derive(Args)]
struct SerializeArgs {
    /// Table file; `-` reads stdin.
    input: PathBuf,
    #[arg(long, default_value = "tsv")]
    input_format: String,
    /// special, position-strings, markdown, html or csv
    #[arg(long, default_value = "special")]
    format: String,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    kind: TaskKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    rows: usize,
    #[arg(long, default_value_t = 3)]
    cols: usize,
    /// Parent rows per table (hierarchical tasks).
    #[arg(long, default_value_t = 2)]
    groups: usize,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Overrides for the matching config-file fields.
#[derive(Args, Default)]
struct RunOverrides {
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    grad_accum: Option<usize>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Comma separated subset of q,k,v,o.
    #[arg(long)]
    projections: Option<String>,
    #[arg(long)]
    layer_set: Option<LayerSpec>,
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long)]
    data_seed: Option<u64>,
}

impl RunOverrides {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(v) = self.variant {
            cfg.adapter.variant = v;
        }
        if let Some(s) = self.seed {
            cfg.model.rng_seed = s;
            cfg.optim.seed = s;
        }
        if let Some(e) = self.epochs {
            cfg.optim.epochs = e;
        }
        if let Some(lr) = self.lr {
            cfg.optim.lr = lr;
        }
        if let Some(b) = self.batch_size {
            cfg.optim.batch_size = b;
        }
        if let Some(g) = self.grad_accum {
            cfg.optim.grad_accum = g;
        }
        if let Some(r) = self.rank {
            cfg.adapter.rank = r;
        }
        if let Some(a) = self.alpha {
            cfg.adapter.alpha = a;
        }
        if let Some(d) = self.dropout {
            cfg.adapter.dropout = d;
        }
        if let Some(p) = &self.projections {
            cfg.adapter.projections = parse_projections(p)?;
        }
        if let Some(l) = &self.layer_set {
            cfg.adapter.layer_set = l.clone();
        }
        if let Some(n) = self.train_size {
            cfg.data.train = n;
        }
        if let Some(n) = self.test_size {
            cfg.data.test = n;
        }
        if let Some(s) = self.data_seed {
            cfg.data.seed = s;
        }
        Ok(())
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Run config (TOML); defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory for config snapshot, metrics, report and checkpoint.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: RunOverrides,
}

#[derive(Args)]
struct EvalArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    run: PathBuf,
    /// Samples as JSON lines.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 8)]
    max_answer_tokens: usize,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
    /// Only tensors whose name contains one of these substrings.
    #[arg(long)]
    select: Vec<String>,
    #[arg(long, default_value_t = 20)]
    per_tensor: usize,
    /// Uniform noise added to adapter tensors so zero-initialized ones get
    /// non-trivial gradients.
    #[arg(long, default_value_t = 0.1)]
    perturb: f64,
    #[command(flatten)]
    overrides: RunOverrides,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CountArgs {
    /// Read model dims and adapter settings from a run config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    n_layers: Option<usize>,
    /// Base parameter count; derived from the config's model when absent.
    #[arg(long)]
    base_params: Option<u64>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    projections: Option<String>,
    #[arg(long)]
    layer_set: Option<LayerSpec>,
    #[arg(long)]
    max_rows: Option<usize>,
    #[arg(long)]
    max_cols: Option<usize>,
    /// One pair of index embeddings per projection instead of per layer.
    #[arg(long)]
    unshared: bool,
}

fn parse_projections(s: &str) -> Result<Vec<Projection>> {
    s.split(',')
        .map(|p| match p.trim() {
            "q" | "query" => Ok(Projection::Query),
            "k" | "key" => Ok(Projection::Key),
            "v" | "value" => Ok(Projection::Value),
            "o" | "output" => Ok(Projection::Output),
            other => bail!("unknown projection {other:?}"),
        })
        .collect()
}

fn parse_encoding(s: &str) -> Result<TableEncoding> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).with_context(|| format!("unknown format {s:?}"))
}

fn load_run_config(path: Option<&Path>, overrides: &RunOverrides) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => RunConfig::default(),
    };
    overrides.apply(&mut cfg)?;
    Ok(cfg)
}

fn cmd_serialize(a: SerializeArgs) -> Result<()> {
    let raw = if a.input.as_os_str() == "-" {
        std::io::read_to_string(std::io::stdin())?
    } else {
        fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?
    };
    let fmt = match a.input_format.as_str() {
        "tsv" => InputFormat::Tsv,
        "csv" => InputFormat::Csv,
        other => bail!("unknown input format {other:?}"),
    };
    let table = parse_table(&raw, fmt)?;
    println!("{}", parse_encoding(&a.format)?.render(&table));
    Ok(())
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let dims = Dims::fixed(a.rows, a.cols).with_groups(SizeRange::fixed(a.groups));
    let samples = generate(a.kind, a.seed, a.n, dims)?;
    match a.out {
        Some(p) => write_jsonl(&samples, &p)?,
        None => {
            let tmp = std::env::temp_dir().join(format!("tablelora-gen-{}.jsonl", std::process::id()));
            write_jsonl(&samples, &tmp)?;
            print!("{}", fs::read_to_string(&tmp)?);
            fs::remove_file(tmp)?;
        }
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = load_run_config(a.config.as_deref(), &a.overrides)?;
    let data = prepare_data(&cfg)?;
    eprintln!(
        "{}: {} train / {} val / {} test samples, vocab {}",
        cfg.adapter.variant,
        data.train.len(),
        data.val.len(),
        data.test.len(),
        data.vocab.len()
    );
    let art = train(&cfg, &data, a.out.as_deref())?;
    for m in &art.metrics {
        eprintln!("epoch {:>3}  loss {:.4}  val_em {:?}", m.epoch, m.train_loss, m.val_exact_match);
    }
    println!("{}", serde_json::to_string_pretty(&art.report)?);
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let (model, _) = load_checkpoint::<f32>(&a.run.join(CHECKPOINT_DIR))?;
    let vocab = Vocab::load(&a.run.join(VOCAB_FILE))?;
    let samples = read_jsonl(&a.data)?;
    let opts = AssembleOptions {
        max_seq_len: model.cfg.max_seq_len,
        caps: model.adapter_cfg.caps(),
        encoding: model.adapter_cfg.variant.table_encoding(),
    };
    let report = evaluate(&model, &vocab, &samples, &opts, a.max_answer_tokens)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<()> {
    if !(1e-5..=1e-3).contains(&a.eps) {
        bail!("eps must lie in [1e-5, 1e-3]");
    }
    let mut cfg = load_run_config(a.config.as_deref(), &a.overrides)?;
    cfg.data.train = 1;
    cfg.data.val = 0;
    cfg.data.test = 1;
    let data = prepare_data(&cfg)?;
    cfg.model.vocab_size = data.vocab.len();
    let mut model = Model::<f64>::new(cfg.model.clone(), cfg.adapter.clone())?;
    let mut k = 0u64;
    for (_, mut t) in model.adapters.named_tensors_mut() {
        t.mapv_inplace(|v| {
            k = k.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            v + a.perturb * (((k >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0)
        });
    }
    let sample = &data.train[0].sample;
    let input = assemble_input(&sample.table, &sample.text, &sample.answer, &data.vocab, &data.options)?;
    let select: Vec<&str> = a.select.iter().map(String::as_str).collect();
    let report = grad_check(&model, &input, a.eps, &select, a.per_tensor, cfg.optim.seed)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_compare(a: CompareArgs) -> Result<()> {
    let cfg = CompareConfig::load(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let report = compare(&cfg, a.out.as_deref())?;
    print!("{}", report.render());
    Ok(())
}

fn cmd_count(a: CountArgs) -> Result<()> {
    let (mut dims, mut acfg) = match &a.config {
        Some(p) => {
            let cfg = RunConfig::load(p)?;
            let dims = ModelDims { d_model: cfg.model.d_model, n_layers: cfg.model.n_layers, base_params: cfg.model.base_params() };
            (dims, cfg.adapter)
        }
        None => (ModelDims { d_model: 4096, n_layers: 32, base_params: 6_738_415_616 }, AdapterConfig::default()),
    };
    if let Some(d) = a.d_model {
        dims.d_model = d;
    }
    if let Some(n) = a.n_layers {
        dims.n_layers = n;
    }
    if let Some(b) = a.base_params {
        dims.base_params = b;
    }
    if let Some(v) = a.variant {
        acfg.variant = v;
    }
    if let Some(r) = a.rank {
        acfg.rank = r;
    }
    if let Some(p) = &a.projections {
        acfg.projections = parse_projections(p)?;
    }
    if let Some(l) = &a.layer_set {
        acfg.layer_set = l.clone();
    }
    if let Some(m) = a.max_rows {
        acfg.max_rows = m;
    }
    if let Some(m) = a.max_cols {
        acfg.max_cols = m;
    }
    if a.unshared {
        acfg.share_index_embeddings = false;
    }
    let c = count_trainable(dims, &acfg)?;
    println!("{} trainable parameters ({:.4}% of {})", c.count, c.percent(), dims.base_params);
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Serialize(a) => cmd_serialize(a),
        Cmd::Gen(a) => cmd_gen(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Gradcheck(a) => cmd_gradcheck(a),
        Cmd::Compare(a) => cmd_compare(a),
        Cmd::CountParams(a) => cmd_count(a),
    }
}
