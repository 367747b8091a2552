//! Pre-LN GPT block stack with adapter hooks and its backward pass.

use ndarray::{s, Array1, Array2, ArrayViewD, ArrayViewMutD, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ops::{causal_softmax, gelu, gelu_backward, layer_norm, layer_norm_backward, softmax_backward, LayerNormCache};
use super::{cast, NnError, Scalar, ToyModelConfig};
use crate::adapters::{
    adapted_backward, adapted_forward, build_structural_attention_bias, count_trainable, select_layers,
    sinusoidal_rowcol_embedding, AdapterConfig, AttentionBias, EncoderKind, IndexEmbeddings, LoraParams, ModelDims,
    ParamCount, ProjAdapter, ProjCache, ProjGrads, Projection, SpecialEncoder,
};
use crate::tok::{special_id, special_of, ModelInput};
use crate::table::SpecialToken;

const STREAM_BASE: u64 = 0;
const STREAM_LORA: u64 = 1;
const STREAM_2D: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T> {
    pub ln1_g: Array1<T>,
    pub ln1_b: Array1<T>,
    /// Query, key, value and output projections, each d_model × d_model.
    pub attn: [Array2<T>; 4],
    pub ln2_g: Array1<T>,
    pub ln2_b: Array1<T>,
    /// d_ff × d_model
    pub w1: Array2<T>,
    pub b1: Array1<T>,
    /// d_model × d_ff
    pub w2: Array2<T>,
    pub b2: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseParams<T> {
    /// vocab × d_model, also the (tied) output projection.
    pub tok_emb: Array2<T>,
    /// max_seq_len × d_model
    pub pos_emb: Array2<T>,
    pub layers: Vec<LayerWeights<T>>,
    pub lnf_g: Array1<T>,
    pub lnf_b: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerAdapters<T> {
    pub projs: Vec<ProjAdapter<T>>,
    /// Index embeddings shared by every projection of the layer.
    pub emb: Option<IndexEmbeddings<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams<T> {
    pub layers: Vec<LayerAdapters<T>>,
    pub encoder: Option<SpecialEncoder<T>>,
}

/// Gradient buffers shaped like the trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    pub base: Option<BaseParams<T>>,
    pub adapters: AdapterParams<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub cfg: ToyModelConfig,
    pub adapter_cfg: AdapterConfig,
    pub base: BaseParams<T>,
    pub adapters: AdapterParams<T>,
}

struct LayerCache<T> {
    ln1: LayerNormCache<T>,
    a1: Array2<T>,
    qkv: [Array2<T>; 3],
    proj: [Option<ProjCache<T>>; 4],
    masks: [Option<Array2<T>>; 4],
    probs: Vec<Array2<T>>,
    attn: Array2<T>,
    ln2: LayerNormCache<T>,
    a2: Array2<T>,
    u: Array2<T>,
    g: Array2<T>,
}

/// Everything the backward pass needs from a forward pass.
pub struct ForwardCache<T> {
    layers: Vec<LayerCache<T>>,
    lnf: LayerNormCache<T>,
    hf: Array2<T>,
}

fn slot(p: Projection) -> usize {
    match p {
        Projection::Query => 0,
        Projection::Key => 1,
        Projection::Value => 2,
        Projection::Output => 3,
    }
}

fn fan_in_std(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

fn gaussian<T: Scalar>(rng: &mut ChaCha8Rng, shape: (usize, usize), std: f64) -> Array2<T> {
    let normal = Normal::new(0.0, std).expect("valid std");
    Array2::from_shape_simple_fn(shape, || cast(normal.sample(rng)))
}

impl<T: Scalar> BaseParams<T> {
    fn init(cfg: &ToyModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        rng.set_stream(STREAM_BASE);
        let (d, f) = (cfg.d_model, cfg.d_ff);
        let in_std = fan_in_std(d);
        let depth = (2.0 * cfg.n_layers as f64).sqrt();
        let tok_emb = gaussian(&mut rng, (cfg.vocab_size, d), in_std);
        let pos_emb = gaussian(&mut rng, (cfg.max_seq_len, d), in_std);
        let layers = (0..cfg.n_layers)
            .map(|_| LayerWeights {
                ln1_g: Array1::ones(d),
                ln1_b: Array1::zeros(d),
                attn: [
                    gaussian(&mut rng, (d, d), in_std),
                    gaussian(&mut rng, (d, d), in_std),
                    gaussian(&mut rng, (d, d), in_std),
                    gaussian(&mut rng, (d, d), in_std / depth),
                ],
                ln2_g: Array1::ones(d),
                ln2_b: Array1::zeros(d),
                w1: gaussian(&mut rng, (f, d), in_std),
                b1: Array1::zeros(f),
                w2: gaussian(&mut rng, (d, f), fan_in_std(f) / depth),
                b2: Array1::zeros(d),
            })
            .collect();
        Self { tok_emb, pos_emb, layers, lnf_g: Array1::ones(d), lnf_b: Array1::zeros(d) }
    }

    fn zeros_like(&self) -> Self {
        let z2 = |a: &Array2<T>| Array2::zeros(a.dim());
        let z1 = |a: &Array1<T>| Array1::zeros(a.dim());
        Self {
            tok_emb: z2(&self.tok_emb),
            pos_emb: z2(&self.pos_emb),
            layers: self
                .layers
                .iter()
                .map(|l| LayerWeights {
                    ln1_g: z1(&l.ln1_g),
                    ln1_b: z1(&l.ln1_b),
                    attn: [z2(&l.attn[0]), z2(&l.attn[1]), z2(&l.attn[2]), z2(&l.attn[3])],
                    ln2_g: z1(&l.ln2_g),
                    ln2_b: z1(&l.ln2_b),
                    w1: z2(&l.w1),
                    b1: z1(&l.b1),
                    w2: z2(&l.w2),
                    b2: z1(&l.b2),
                })
                .collect(),
            lnf_g: z1(&self.lnf_g),
            lnf_b: z1(&self.lnf_b),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        let mut out = vec![("tok_emb".to_string(), self.tok_emb.view().into_dyn()), ("pos_emb".into(), self.pos_emb.view().into_dyn())];
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer.{i}.ln1.g"), l.ln1_g.view().into_dyn()));
            out.push((format!("layer.{i}.ln1.b"), l.ln1_b.view().into_dyn()));
            for p in Projection::ALL {
                out.push((format!("layer.{i}.{}.w", p.short()), l.attn[slot(p)].view().into_dyn()));
            }
            out.push((format!("layer.{i}.ln2.g"), l.ln2_g.view().into_dyn()));
            out.push((format!("layer.{i}.ln2.b"), l.ln2_b.view().into_dyn()));
            out.push((format!("layer.{i}.ffn.w1"), l.w1.view().into_dyn()));
            out.push((format!("layer.{i}.ffn.b1"), l.b1.view().into_dyn()));
            out.push((format!("layer.{i}.ffn.w2"), l.w2.view().into_dyn()));
            out.push((format!("layer.{i}.ffn.b2"), l.b2.view().into_dyn()));
        }
        out.push(("ln_f.g".into(), self.lnf_g.view().into_dyn()));
        out.push(("ln_f.b".into(), self.lnf_b.view().into_dyn()));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        let mut out = vec![
            ("tok_emb".to_string(), self.tok_emb.view_mut().into_dyn()),
            ("pos_emb".into(), self.pos_emb.view_mut().into_dyn()),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer.{i}.ln1.g"), l.ln1_g.view_mut().into_dyn()));
            out.push((format!("layer.{i}.ln1.b"), l.ln1_b.view_mut().into_dyn()));
            for (p, w) in Projection::ALL.iter().zip(l.attn.iter_mut()) {
                out.push((format!("layer.{i}.{}.w", p.short()), w.view_mut().into_dyn()));
            }
            out.push((format!("layer.{i}.ln2.g"), l.ln2_g.view_mut().into_dyn()));
            out.push((format!("layer.{i}.ln2.b"), l.ln2_b.view_mut().into_dyn()));
            out.push((format!("layer.{i}.ffn.w1"), l.w1.view_mut().into_dyn()));
            out.push((format!("layer.{i}.ffn.b1"), l.b1.view_mut().into_dyn()));
            out.push((format!("layer.{i}.ffn.w2"), l.w2.view_mut().into_dyn()));
            out.push((format!("layer.{i}.ffn.b2"), l.b2.view_mut().into_dyn()));
        }
        out.push(("ln_f.g".into(), self.lnf_g.view_mut().into_dyn()));
        out.push(("ln_f.b".into(), self.lnf_b.view_mut().into_dyn()));
        out
    }
}

impl<T: Scalar> AdapterParams<T> {
    fn init(cfg: &ToyModelConfig, acfg: &AdapterConfig, base: &BaseParams<T>) -> Result<Self, NnError> {
        let d = cfg.d_model;
        let r = acfg.rank;
        let variant = acfg.variant;
        let two_d = if variant.uses_2d() { select_layers(&acfg.layer_set, cfg.n_layers)? } else { Vec::new() };

        let mut lora_rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        lora_rng.set_stream(STREAM_LORA);
        let mut emb_rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        emb_rng.set_stream(STREAM_2D);
        let new_emb = |rng: &mut ChaCha8Rng| IndexEmbeddings {
            row: gaussian(rng, (acfg.max_rows + 1, r), 1.0),
            col: gaussian(rng, (acfg.max_cols + 1, r), 1.0),
        };

        let mut projections = acfg.projections.clone();
        projections.sort();
        projections.dedup();

        let mut layers = Vec::with_capacity(cfg.n_layers);
        for i in 0..cfg.n_layers {
            let with_2d = two_d.contains(&i);
            let mut projs = Vec::new();
            if variant.has_lora() {
                for &p in &projections {
                    projs.push(ProjAdapter {
                        proj: p,
                        lora: LoraParams { a: gaussian(&mut lora_rng, (r, d), fan_in_std(d)), b: Array2::zeros((d, r)) },
                        b_tab: with_2d.then(|| Array2::zeros((d, r))),
                        own_emb: None,
                    });
                }
            }
            let emb = if with_2d && acfg.share_index_embeddings {
                Some(new_emb(&mut emb_rng))
            } else {
                if with_2d {
                    for p in &mut projs {
                        p.own_emb = Some(new_emb(&mut emb_rng));
                    }
                }
                None
            };
            layers.push(LayerAdapters { projs, emb });
        }

        // Special rows start as copies of the frozen word embeddings so the
        // encoder output equals the base embedding until training moves it.
        let encoder = variant.encoder().map(|kind| {
            let mut emb = Array2::zeros((3, d));
            for s in SpecialToken::ALL {
                emb.row_mut(s.index()).assign(&base.tok_emb.row(special_id(s)));
            }
            let (linear_w, linear_b) = match kind {
                EncoderKind::PTuning => (Some(Array2::eye(d)), Some(Array1::zeros(d))),
                EncoderKind::PromptTuning => (None, None),
            };
            SpecialEncoder { kind, emb, linear_w, linear_b }
        });
        Ok(Self { layers, encoder })
    }

    fn zeros_like(&self) -> Self {
        let z2 = |a: &Array2<T>| Array2::zeros(a.dim());
        let zemb = |e: &IndexEmbeddings<T>| IndexEmbeddings { row: z2(&e.row), col: z2(&e.col) };
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| LayerAdapters {
                    projs: l
                        .projs
                        .iter()
                        .map(|p| ProjAdapter {
                            proj: p.proj,
                            lora: LoraParams { a: z2(&p.lora.a), b: z2(&p.lora.b) },
                            b_tab: p.b_tab.as_ref().map(z2),
                            own_emb: p.own_emb.as_ref().map(zemb),
                        })
                        .collect(),
                    emb: l.emb.as_ref().map(zemb),
                })
                .collect(),
            encoder: self.encoder.as_ref().map(|e| SpecialEncoder {
                kind: e.kind,
                emb: z2(&e.emb),
                linear_w: e.linear_w.as_ref().map(z2),
                linear_b: e.linear_b.as_ref().map(|b| Array1::zeros(b.dim())),
            }),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            for p in &l.projs {
                let pre = format!("layer.{i}.{}", p.proj.short());
                out.push((format!("{pre}.A"), p.lora.a.view().into_dyn()));
                out.push((format!("{pre}.B"), p.lora.b.view().into_dyn()));
                if let Some(bt) = &p.b_tab {
                    out.push((format!("{pre}.B_tab"), bt.view().into_dyn()));
                }
                if let Some(e) = &p.own_emb {
                    out.push((format!("{pre}.emb_row"), e.row.view().into_dyn()));
                    out.push((format!("{pre}.emb_col"), e.col.view().into_dyn()));
                }
            }
            if let Some(e) = &l.emb {
                out.push((format!("layer.{i}.emb_row"), e.row.view().into_dyn()));
                out.push((format!("layer.{i}.emb_col"), e.col.view().into_dyn()));
            }
        }
        if let Some(enc) = &self.encoder {
            out.push(("special_encoder.emb".into(), enc.emb.view().into_dyn()));
            if let Some(w) = &enc.linear_w {
                out.push(("special_encoder.linear_w".into(), w.view().into_dyn()));
            }
            if let Some(b) = &enc.linear_b {
                out.push(("special_encoder.linear_b".into(), b.view().into_dyn()));
            }
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            for p in &mut l.projs {
                let pre = format!("layer.{i}.{}", p.proj.short());
                out.push((format!("{pre}.A"), p.lora.a.view_mut().into_dyn()));
                out.push((format!("{pre}.B"), p.lora.b.view_mut().into_dyn()));
                if let Some(bt) = &mut p.b_tab {
                    out.push((format!("{pre}.B_tab"), bt.view_mut().into_dyn()));
                }
                if let Some(e) = &mut p.own_emb {
                    out.push((format!("{pre}.emb_row"), e.row.view_mut().into_dyn()));
                    out.push((format!("{pre}.emb_col"), e.col.view_mut().into_dyn()));
                }
            }
            if let Some(e) = &mut l.emb {
                out.push((format!("layer.{i}.emb_row"), e.row.view_mut().into_dyn()));
                out.push((format!("layer.{i}.emb_col"), e.col.view_mut().into_dyn()));
            }
        }
        if let Some(enc) = &mut self.encoder {
            out.push(("special_encoder.emb".into(), enc.emb.view_mut().into_dyn()));
            if let Some(w) = &mut enc.linear_w {
                out.push(("special_encoder.linear_w".into(), w.view_mut().into_dyn()));
            }
            if let Some(b) = &mut enc.linear_b {
                out.push(("special_encoder.linear_b".into(), b.view_mut().into_dyn()));
            }
        }
        out
    }
}

impl<T: Scalar> Grads<T> {
    /// Trainable gradient tensors, in the same order as
    /// [`Model::trainable_tensors_mut`].
    pub fn named_tensors(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        let mut out = self.base.as_ref().map(|b| b.named_tensors()).unwrap_or_default();
        out.extend(self.adapters.named_tensors());
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        let mut out = self.base.as_mut().map(|b| b.named_tensors_mut()).unwrap_or_default();
        out.extend(self.adapters.named_tensors_mut());
        out
    }

    pub fn fill_zero(&mut self) {
        for (_, mut t) in self.named_tensors_mut() {
            t.fill(T::zero());
        }
    }

    pub fn scale(&mut self, factor: T) {
        for (_, mut t) in self.named_tensors_mut() {
            t.mapv_inplace(|v| v * factor);
        }
    }

    /// Euclidean norm over every gradient entry.
    pub fn global_norm(&self) -> T {
        self.named_tensors().iter().map(|(_, t)| t.iter().map(|v| *v * *v).fold(T::zero(), |a, b| a + b)).fold(T::zero(), |a, b| a + b).sqrt()
    }
}

impl<T: Scalar> Model<T> {
    /// Builds a model with a freshly initialized base and adapters. The base
    /// depends only on `cfg`, so every variant built from the same `cfg`
    /// shares it.
    pub fn new(cfg: ToyModelConfig, adapter_cfg: AdapterConfig) -> Result<Self, NnError> {
        cfg.validate()?;
        adapter_cfg.validate(cfg.n_layers)?;
        let base = BaseParams::init(&cfg);
        let adapters = AdapterParams::init(&cfg, &adapter_cfg, &base)?;
        Ok(Self { cfg, adapter_cfg, base, adapters })
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims { d_model: self.cfg.d_model, n_layers: self.cfg.n_layers, base_params: self.cfg.base_params() }
    }

    pub fn param_count(&self) -> Result<ParamCount, NnError> {
        Ok(count_trainable(self.dims(), &self.adapter_cfg)?)
    }

    pub fn zero_grads(&self) -> Grads<T> {
        Grads {
            base: self.adapter_cfg.variant.trains_base().then(|| self.base.zeros_like()),
            adapters: self.adapters.zeros_like(),
        }
    }

    /// Every tensor of the model, base first.
    pub fn named_tensors(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        let mut out = self.base.named_tensors();
        out.extend(self.adapters.named_tensors());
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        let mut out = self.base.named_tensors_mut();
        out.extend(self.adapters.named_tensors_mut());
        out
    }

    pub fn trainable_tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        let trains_base = self.adapter_cfg.variant.trains_base();
        let mut out = if trains_base { self.base.named_tensors_mut() } else { Vec::new() };
        out.extend(self.adapters.named_tensors_mut());
        out
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.adapter_cfg.variant.trains_base() || self.adapters.named_tensors().iter().any(|(n, _)| n == name)
    }

    /// Attention bias the configured variant applies to `input`, if any.
    pub fn structural_bias(&self, input: &ModelInput) -> Result<Option<AttentionBias>, NnError> {
        match self.adapter_cfg.variant.attention_bias() {
            Some(v) => Ok(Some(build_structural_attention_bias(&input.index_map, v, input.len())?)),
            None => Ok(None),
        }
    }

    /// Inference logits (no dropout) with the variant's own attention bias.
    pub fn logits(&self, input: &ModelInput) -> Result<Array2<T>, NnError> {
        let bias = self.structural_bias(input)?;
        Ok(self.forward(input, bias.as_ref(), None)?.0)
    }

    fn check_input(&self, input: &ModelInput) -> Result<(), NnError> {
        let len = input.len();
        if len == 0 {
            return Err(NnError::ShapeMismatch("empty input".into()));
        }
        if len > self.cfg.max_seq_len {
            return Err(NnError::TooLong { len, max: self.cfg.max_seq_len });
        }
        if input.index_map.len() != len || input.special_flags.len() != len || input.answer_mask.len() != len {
            return Err(NnError::ShapeMismatch("input side arrays disagree in length".into()));
        }
        if let Some(&id) = input.token_ids.iter().find(|&&id| id >= self.cfg.vocab_size) {
            return Err(crate::adapters::AdapterError::UnknownId(id).into());
        }
        let caps = self.adapter_cfg.caps();
        if self.adapter_cfg.variant.uses_2d() || self.adapter_cfg.variant.uses_posemb() {
            for t in 0..len {
                let (row, col) = input.index_map.get(t);
                if row > caps.max_rows || col > caps.max_cols {
                    return Err(crate::adapters::AdapterError::IndexOverflow {
                        row,
                        col,
                        max_rows: caps.max_rows,
                        max_cols: caps.max_cols,
                    }
                    .into());
                }
            }
        }
        Ok(())
    }

    fn embed(&self, input: &ModelInput) -> Result<Array2<T>, NnError> {
        let d = self.cfg.d_model;
        let enc_out = self.adapters.encoder.as_ref().map(|e| e.outputs());
        let mut x = Array2::zeros((input.len(), d));
        for (t, mut row) in x.axis_iter_mut(Axis(0)).enumerate() {
            let id = input.token_ids[t];
            let special = input.special_flags[t].then(|| special_of(id)).flatten();
            match (special, &enc_out) {
                (Some(s), Some(out)) => row.assign(&out.row(s.index())),
                _ => row.assign(&self.base.tok_emb.row(id)),
            }
            row += &self.base.pos_emb.row(t);
            if self.adapter_cfg.variant.uses_posemb() {
                row += &sinusoidal_rowcol_embedding::<T>(input.index_map.get(t), d, self.adapter_cfg.caps())?;
            }
        }
        Ok(x)
    }

    fn dropout_mask(&self, rng: Option<&mut ChaCha8Rng>, shape: (usize, usize)) -> Option<Array2<T>> {
        let p = self.adapter_cfg.dropout;
        let rng = rng?;
        if p <= 0.0 {
            return None;
        }
        let keep: T = cast(1.0 / (1.0 - p));
        Some(Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < p { T::zero() } else { keep }))
    }

    /// Logits for every position plus the cache for [`Model::backward`].
    /// Passing a dropout RNG switches adapter dropout on.
    pub fn forward(
        &self,
        input: &ModelInput,
        bias: Option<&AttentionBias>,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Array2<T>, ForwardCache<T>), NnError> {
        self.check_input(input)?;
        let len = input.len();
        if let Some(b) = bias {
            if b.len() != len {
                return Err(NnError::ShapeMismatch(format!("bias is {}×{}, input has {len} tokens", b.len(), b.len())));
            }
        }
        let d = self.cfg.d_model;
        let dh = self.cfg.head_dim();
        let inv_sqrt: T = cast(1.0 / (dh as f64).sqrt());
        let scale: T = cast(self.adapter_cfg.scale());
        let bias_t: Option<Array2<T>> = bias.map(|b| b.logits.mapv(|v| cast(v)));
        let idx = &input.index_map;

        let mut x = self.embed(input)?;
        let mut caches = Vec::with_capacity(self.cfg.n_layers);
        for (lw, la) in self.base.layers.iter().zip(&self.adapters.layers) {
            let (a1, ln1) = layer_norm(&x, &lw.ln1_g, &lw.ln1_b);
            let mut proj: [Option<ProjCache<T>>; 4] = Default::default();
            let mut masks: [Option<Array2<T>>; 4] = Default::default();
            let mut project = |p: Projection, inp: &Array2<T>, rng: Option<&mut ChaCha8Rng>| {
                let k = slot(p);
                let ad = la.projs.iter().find(|a| a.proj == p);
                if ad.is_some() {
                    masks[k] = self.dropout_mask(rng, inp.dim());
                }
                let emb = ad.and_then(|a| a.own_emb.as_ref()).or(la.emb.as_ref());
                let (h, c) = adapted_forward(&lw.attn[k], ad, emb, inp, idx, scale, masks[k].as_ref());
                proj[k] = c;
                h
            };
            let q = project(Projection::Query, &a1, dropout_rng.as_deref_mut());
            let k = project(Projection::Key, &a1, dropout_rng.as_deref_mut());
            let v = project(Projection::Value, &a1, dropout_rng.as_deref_mut());

            let mut attn = Array2::zeros((len, d));
            let mut probs = Vec::with_capacity(self.cfg.n_heads);
            for h in 0..self.cfg.n_heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * inv_sqrt;
                if let Some(b) = &bias_t {
                    for t in 0..len {
                        for s in 0..=t {
                            scores[[t, s]] += b[[t, s]];
                        }
                    }
                }
                causal_softmax(&mut scores);
                attn.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
                probs.push(scores);
            }
            let o = project(Projection::Output, &attn, dropout_rng.as_deref_mut());
            x += &o;

            let (a2, ln2) = layer_norm(&x, &lw.ln2_g, &lw.ln2_b);
            let u = a2.dot(&lw.w1.t()) + &lw.b1;
            let g = gelu(&u);
            x += &(g.dot(&lw.w2.t()) + &lw.b2);
            caches.push(LayerCache { ln1, a1, qkv: [q, k, v], proj, masks, probs, attn, ln2, a2, u, g });
        }
        let (hf, lnf) = layer_norm(&x, &self.base.lnf_g, &self.base.lnf_b);
        let logits = hf.dot(&self.base.tok_emb.t());
        Ok((logits, ForwardCache { layers: caches, lnf, hf }))
    }

    /// Accumulates gradients of the loss into `grads` given dLoss/dlogits.
    /// Frozen base tensors get nothing.
    pub fn backward(&self, input: &ModelInput, cache: &ForwardCache<T>, dlogits: &Array2<T>, grads: &mut Grads<T>) {
        let dh = self.cfg.head_dim();
        let inv_sqrt: T = cast(1.0 / (dh as f64).sqrt());
        let scale: T = cast(self.adapter_cfg.scale());
        let idx = &input.index_map;
        let len = input.len();

        let Grads { base: gbase, adapters: gad } = grads;
        let mut gbase = gbase.as_mut();

        if let Some(gb) = gbase.as_deref_mut() {
            gb.tok_emb += &dlogits.t().dot(&cache.hf);
        }
        let dhf = dlogits.dot(&self.base.tok_emb);
        let mut dx = {
            let (dg, db) = match gbase.as_deref_mut() {
                Some(gb) => (Some(&mut gb.lnf_g), Some(&mut gb.lnf_b)),
                None => (None, None),
            };
            layer_norm_backward(&dhf, &self.base.lnf_g, &cache.lnf, dg, db)
        };

        for li in (0..self.cfg.n_layers).rev() {
            let lw = &self.base.layers[li];
            let la = &self.adapters.layers[li];
            let lc = &cache.layers[li];
            let mut glw = gbase.as_deref_mut().map(|gb| &mut gb.layers[li]);
            let LayerAdapters { projs: gprojs, emb: gemb } = &mut gad.layers[li];

            // feed-forward
            let dy = &dx;
            let dg = dy.dot(&lw.w2);
            if let Some(g) = glw.as_deref_mut() {
                g.w2 += &dy.t().dot(&lc.g);
                g.b2 += &dy.sum_axis(Axis(0));
            }
            let du = gelu_backward(&lc.u, &dg);
            if let Some(g) = glw.as_deref_mut() {
                g.w1 += &du.t().dot(&lc.a2);
                g.b1 += &du.sum_axis(Axis(0));
            }
            let da2 = du.dot(&lw.w1);
            let dx_ln2 = match glw.as_deref_mut() {
                Some(g) => layer_norm_backward(&da2, &lw.ln2_g, &lc.ln2, Some(&mut g.ln2_g), Some(&mut g.ln2_b)),
                None => layer_norm_backward(&da2, &lw.ln2_g, &lc.ln2, None, None),
            };
            let dx_mid = &dx + &dx_ln2;

            let mut project_back = |p: Projection, dh_out: &Array2<T>, inp: &Array2<T>, glw: Option<&mut LayerWeights<T>>| {
                let k = slot(p);
                let pos = la.projs.iter().position(|a| a.proj == p);
                let ad = pos.map(|i| &la.projs[i]);
                let pg = pos.map(|i| {
                    let ProjAdapter { lora, b_tab, own_emb, .. } = &mut gprojs[i];
                    let emb = match own_emb.as_mut() {
                        Some(e) => Some(e),
                        None => gemb.as_mut(),
                    };
                    ProjGrads { lora, b_tab: b_tab.as_mut(), emb }
                });
                adapted_backward(
                    dh_out,
                    inp,
                    &lw.attn[k],
                    ad,
                    lc.proj[k].as_ref(),
                    idx,
                    scale,
                    lc.masks[k].as_ref(),
                    glw.map(|g| &mut g.attn[k]),
                    pg,
                )
            };

            // attention
            let dattn = project_back(Projection::Output, &dx_mid, &lc.attn, glw.as_deref_mut());
            let [q, k, v] = &lc.qkv;
            let mut dq = Array2::zeros(q.dim());
            let mut dk = Array2::zeros(k.dim());
            let mut dv = Array2::zeros(v.dim());
            for h in 0..self.cfg.n_heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let p = &lc.probs[h];
                let dout = dattn.slice(cols);
                let dp = dout.dot(&v.slice(cols).t());
                dv.slice_mut(cols).assign(&p.t().dot(&dout));
                let ds = softmax_backward(p.view(), &dp) * inv_sqrt;
                dq.slice_mut(cols).assign(&ds.dot(&k.slice(cols)));
                dk.slice_mut(cols).assign(&ds.t().dot(&q.slice(cols)));
            }
            let mut da1 = project_back(Projection::Query, &dq, &lc.a1, glw.as_deref_mut());
            da1 += &project_back(Projection::Key, &dk, &lc.a1, glw.as_deref_mut());
            da1 += &project_back(Projection::Value, &dv, &lc.a1, glw.as_deref_mut());
            let dx_ln1 = match glw {
                Some(g) => layer_norm_backward(&da1, &lw.ln1_g, &lc.ln1, Some(&mut g.ln1_g), Some(&mut g.ln1_b)),
                None => layer_norm_backward(&da1, &lw.ln1_g, &lc.ln1, None, None),
            };
            dx = dx_mid + dx_ln1;
        }

        // embedding stage
        let mut d_enc = self.adapters.encoder.as_ref().map(|e| Array2::zeros(e.emb.dim()));
        for t in 0..len {
            let id = input.token_ids[t];
            let special = input.special_flags[t].then(|| special_of(id)).flatten();
            let drow = dx.row(t);
            match (special, d_enc.as_mut()) {
                (Some(s), Some(de)) => {
                    let mut r = de.row_mut(s.index());
                    r += &drow;
                }
                _ => {
                    if let Some(gb) = gbase.as_deref_mut() {
                        let mut r = gb.tok_emb.row_mut(id);
                        r += &drow;
                    }
                }
            }
            if let Some(gb) = gbase.as_deref_mut() {
                let mut r = gb.pos_emb.row_mut(t);
                r += &drow;
            }
        }
        if let (Some(enc), Some(de), Some(genc)) = (&self.adapters.encoder, d_enc, gad.encoder.as_mut()) {
            enc.backward(&de, genc);
        }
    }
}
