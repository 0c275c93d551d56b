//! Manifold embedding network.
//!
//! A degraded `P x P x C` patch is projected per pixel onto `r` spectral
//! components, tiled into `N = (P/s)^2` tokens of width `D`, passed through
//! `L` pre-norm transformer blocks, and averaged into the manifold coordinate
//! `u`. An affine decoder reconstructs the clean patch from `u` and a linear
//! head classifies it; both losses train the network jointly.
//!
//! All tape-level functions are batched: patches enter as `[B, P*P*C]` and
//! coordinates leave as `[B, D]`.

use crate::degrade::{apply_composite, DegradationParams, DegradationSpec};
use crate::error::{Error, Result};
use crate::hsidata::{HsiCube, Patch};
use crate::numkit::{AdamW, Bound, ParamStore, Tape, Tensor, TrainSettings, Var};
use crate::seeds;

/// Patches per forward pass when encoding without gradients.
const ENCODE_CHUNK: usize = 128;

/// Architecture of the embedding network.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbedConfig {
    /// Patch side `P`.
    pub patch_size: usize,
    /// Token side `s`; must divide `P`.
    pub stride: usize,
    /// Spectral bands `C` of the input.
    pub bands: usize,
    /// Manifold dimension `D`.
    pub embed_dim: usize,
    /// Spectral bottleneck rank `r`.
    pub rank: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    /// Weight of the classification term in the joint loss.
    pub lambda_cls: f64,
    pub n_classes: usize,
}

impl EmbedConfig {
    /// Desk-scale defaults for `bands` input bands and `n_classes` classes.
    pub fn desk(bands: usize, n_classes: usize) -> Self {
        Self {
            patch_size: 9,
            stride: 3,
            bands,
            embed_dim: 64,
            rank: 8,
            layers: 2,
            heads: 4,
            ffn_mult: 4,
            lambda_cls: 0.1,
            n_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(msg));
        if self.patch_size == 0 || self.stride == 0 || self.patch_size % self.stride != 0 {
            return bad(format!(
                "stride {} must divide patch size {}",
                self.stride, self.patch_size
            ));
        }
        if self.patch_size % 2 == 0 {
            return bad(format!("patch size must be odd, got {}", self.patch_size));
        }
        if self.heads == 0 || self.embed_dim == 0 || self.embed_dim % self.heads != 0 {
            return bad(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            ));
        }
        if self.rank == 0 || self.rank >= self.bands {
            return bad(format!("rank must lie in [1, {}), got {}", self.bands, self.rank));
        }
        if self.ffn_mult == 0 || self.n_classes < 2 {
            return bad(format!(
                "ffn_mult must be positive and n_classes >= 2, got {} and {}",
                self.ffn_mult, self.n_classes
            ));
        }
        if !(self.lambda_cls >= 0.0) || !self.lambda_cls.is_finite() {
            return bad(format!("lambda_cls must be non-negative, got {}", self.lambda_cls));
        }
        Ok(())
    }

    /// Tokens per patch.
    pub fn n_tokens(&self) -> usize {
        let t = self.patch_size / self.stride;
        t * t
    }

    /// Flattened patch length `P * P * C`.
    pub fn patch_len(&self) -> usize {
        self.patch_size * self.patch_size * self.bands
    }

    fn token_width(&self) -> usize {
        self.stride * self.stride * self.rank
    }

    fn meta(&self) -> [(&'static str, f64); 10] {
        [
            ("patch_size", self.patch_size as f64),
            ("stride", self.stride as f64),
            ("bands", self.bands as f64),
            ("embed_dim", self.embed_dim as f64),
            ("rank", self.rank as f64),
            ("layers", self.layers as f64),
            ("heads", self.heads as f64),
            ("ffn_mult", self.ffn_mult as f64),
            ("lambda_cls", self.lambda_cls),
            ("n_classes", self.n_classes as f64),
        ]
    }
}

pub(crate) fn read_meta(store: &ParamStore, key: &str) -> Result<f64> {
    store.get(&format!("meta.{key}")).map(Tensor::item)
}

pub(crate) fn read_meta_usize(store: &ParamStore, key: &str) -> Result<usize> {
    let v = read_meta(store, key)?;
    if v < 0.0 || v.fract() != 0.0 || !v.is_finite() {
        return Err(Error::invalid(format!("checkpoint field meta.{key} = {v} is not a count")));
    }
    Ok(v as usize)
}

/// Copies the non-`meta.` tensors of `store`, all trainable.
pub(crate) fn strip_meta(store: &ParamStore) -> ParamStore {
    let mut params = ParamStore::new();
    for (name, t) in store.iter().filter(|(n, _)| !n.starts_with("meta.")) {
        params.insert(name, Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("valid shape").with_grad());
    }
    params
}

fn layer_key(l: usize, part: &str) -> String {
    format!("block{l}.{part}")
}

/// Expected parameter names and shapes for `cfg`, in storage order.
pub fn param_shapes(cfg: &EmbedConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.embed_dim;
    let f = cfg.ffn_mult * d;
    let mut shapes = vec![
        ("bottleneck".to_string(), vec![cfg.bands, cfg.rank]),
        ("token.w".to_string(), vec![cfg.token_width(), d]),
        ("token.b".to_string(), vec![d]),
        ("pos".to_string(), vec![cfg.n_tokens(), d]),
    ];
    for l in 0..cfg.layers {
        shapes.push((layer_key(l, "attn_gain"), vec![d]));
        for w in ["wq", "wk", "wv", "wo"] {
            shapes.push((layer_key(l, w), vec![d, d]));
        }
        shapes.push((layer_key(l, "ffn_gain"), vec![d]));
        shapes.push((layer_key(l, "w1"), vec![d, f]));
        shapes.push((layer_key(l, "w2"), vec![f, d]));
    }
    shapes.push(("final_gain".to_string(), vec![d]));
    shapes.push(("recon.w".to_string(), vec![d, cfg.patch_len()]));
    shapes.push(("recon.b".to_string(), vec![cfg.patch_len()]));
    shapes.push(("cls.w".to_string(), vec![d, cfg.n_classes]));
    shapes.push(("cls.b".to_string(), vec![cfg.n_classes]));
    shapes
}

/// Embedding network: configuration plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbedModel {
    pub config: EmbedConfig,
    pub params: ParamStore,
}

impl EmbedModel {
    /// Random initialization: fan-in scaled Gaussians for projections, unit
    /// RMS gains, zero biases, small positional and head weights.
    pub fn init(config: EmbedConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeds::rng(seeds::derive(seed, 0xE3B));
        let mut params = ParamStore::new();
        for (name, shape) in param_shapes(&config) {
            let t = if name.ends_with("gain") {
                Tensor::ones(&shape)
            } else if name.ends_with(".b") {
                Tensor::zeros(&shape)
            } else if name == "pos" || name == "recon.w" || name == "cls.w" {
                Tensor::randn(&shape, 0.02, &mut rng)
            } else {
                Tensor::randn(&shape, 1.0 / (shape[0] as f64).sqrt(), &mut rng)
            };
            params.insert(name, t.with_grad());
        }
        Ok(Self { config, params })
    }

    /// Parameters plus the configuration as `meta.*` scalars, for saving.
    pub fn to_store(&self) -> ParamStore {
        let mut store = self.params.clone();
        for (k, v) in self.config.meta() {
            store.insert(format!("meta.{k}"), Tensor::scalar(v));
        }
        store
    }

    /// Inverse of [`EmbedModel::to_store`]; checks every parameter shape.
    pub fn from_store(store: &ParamStore) -> Result<Self> {
        let config = EmbedConfig {
            patch_size: read_meta_usize(store, "patch_size")?,
            stride: read_meta_usize(store, "stride")?,
            bands: read_meta_usize(store, "bands")?,
            embed_dim: read_meta_usize(store, "embed_dim")?,
            rank: read_meta_usize(store, "rank")?,
            layers: read_meta_usize(store, "layers")?,
            heads: read_meta_usize(store, "heads")?,
            ffn_mult: read_meta_usize(store, "ffn_mult")?,
            lambda_cls: read_meta(store, "lambda_cls")?,
            n_classes: read_meta_usize(store, "n_classes")?,
        };
        config.validate()?;
        for (name, shape) in param_shapes(&config) {
            let got = store.get(&name)?.shape();
            if got != shape.as_slice() {
                return Err(Error::shape("embed checkpoint", format!("`{name}` is {got:?}, expected {shape:?}")));
            }
        }
        Ok(Self {
            config,
            params: strip_meta(store),
        })
    }

    /// Manifold coordinates of `count` flattened patches, row-major `[count, D]`.
    pub fn encode(&self, patches: &[f64]) -> Result<Vec<f64>> {
        let len = self.config.patch_len();
        if patches.len() % len != 0 {
            return Err(Error::shape(
                "encode",
                format!("{} values are not a multiple of patch length {len}", patches.len()),
            ));
        }
        let mut out = Vec::with_capacity(patches.len() / len * self.config.embed_dim);
        for chunk in patches.chunks(ENCODE_CHUNK * len) {
            let mut tape = Tape::new();
            let bound = self.params.bind_frozen(&mut tape);
            let x = tape.constant(Tensor::new(vec![chunk.len() / len, len], chunk.to_vec())?);
            let u = encode_var(&mut tape, &bound, x, &self.config)?;
            out.extend_from_slice(tape.value(u).data());
        }
        Ok(out)
    }

    /// Decoder output for coordinates `u` (`[count, D]` row-major).
    pub fn reconstruct(&self, u: &[f64]) -> Result<Vec<f64>> {
        let d = self.config.embed_dim;
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let u = tape.constant(Tensor::new(vec![u.len() / d.max(1), d], u.to_vec())?);
        let x = reconstruct(&mut tape, &bound, u)?;
        Ok(tape.value(x).data().to_vec())
    }
}

fn check_rank(tape: &Tape, op: &'static str, v: Var, rank: usize) -> Result<()> {
    if tape.shape(v).len() != rank {
        return Err(Error::shape(op, format!("expected rank {rank}, got {:?}", tape.shape(v))));
    }
    Ok(())
}

/// Batched `[B, P*P*C]` patches to tokens `[B, N, D]`.
pub fn patch_embed(tape: &mut Tape, p: &Bound, x: Var, cfg: &EmbedConfig) -> Result<Var> {
    check_rank(tape, "patch_embed", x, 2)?;
    if tape.shape(x)[1] != cfg.patch_len() {
        return Err(Error::shape(
            "patch_embed",
            format!("patch length {} for config {}x{}x{}", tape.shape(x)[1], cfg.patch_size, cfg.patch_size, cfg.bands),
        ));
    }
    let b = tape.shape(x)[0];
    let (pz, s, r, d) = (cfg.patch_size, cfg.stride, cfg.rank, cfg.embed_dim);
    let t = pz / s;
    let pixels = tape.reshape(x, &[b * pz * pz, cfg.bands])?;
    let reduced = tape.matmul(pixels, p.var("bottleneck")?)?;
    // (row = tr*s + ir, col = tc*s + ic) -> token (tr, tc), entry (ir, ic, r)
    let grid = tape.reshape(reduced, &[b, t, s, t, s, r])?;
    let tiled = tape.permute(grid, &[0, 1, 3, 2, 4, 5])?;
    let flat = tape.reshape(tiled, &[b * t * t, s * s * r])?;
    let proj = tape.matmul(flat, p.var("token.w")?)?;
    let proj = tape.add_suffix(proj, p.var("token.b")?)?;
    let tokens = tape.reshape(proj, &[b, t * t, d])?;
    tape.add_suffix(tokens, p.var("pos")?)
}

/// `[B, N, D] -> [B*h, N, dh]` with heads split out of the feature axis.
fn split_heads(tape: &mut Tape, x: Var, b: usize, n: usize, h: usize, dh: usize) -> Result<Var> {
    let x = tape.reshape(x, &[b, n, h, dh])?;
    let x = tape.permute(x, &[0, 2, 1, 3])?;
    tape.reshape(x, &[b * h, n, dh])
}

fn attention(tape: &mut Tape, p: &Bound, l: usize, x: Var, cfg: &EmbedConfig) -> Result<Var> {
    let (b, n, d) = {
        let s = tape.shape(x);
        (s[0], s[1], s[2])
    };
    let h = cfg.heads;
    let dh = d / h;
    let rows = tape.reshape(x, &[b * n, d])?;
    let proj = |tape: &mut Tape, w: &str| -> Result<Var> {
        let y = tape.matmul(rows, p.var(&layer_key(l, w))?)?;
        tape.reshape(y, &[b, n, d])
    };
    let q = proj(tape, "wq")?;
    let k = proj(tape, "wk")?;
    let v = proj(tape, "wv")?;
    let q = split_heads(tape, q, b, n, h, dh)?;
    let k = split_heads(tape, k, b, n, h, dh)?;
    let v = split_heads(tape, v, b, n, h, dh)?;
    let kt = tape.transpose(k)?;
    let scores = tape.bmm(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
    let weights = tape.softmax(scores);
    let mixed = tape.bmm(weights, v)?;
    let mixed = tape.reshape(mixed, &[b, h, n, dh])?;
    let mixed = tape.permute(mixed, &[0, 2, 1, 3])?;
    let mixed = tape.reshape(mixed, &[b * n, d])?;
    let out = tape.matmul(mixed, p.var(&layer_key(l, "wo"))?)?;
    tape.reshape(out, &[b, n, d])
}

fn feed_forward(tape: &mut Tape, p: &Bound, l: usize, x: Var) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    let rows = tape.reshape(x, &[s[0] * s[1], s[2]])?;
    let hidden = tape.matmul(rows, p.var(&layer_key(l, "w1"))?)?;
    let hidden = tape.gelu(hidden);
    let out = tape.matmul(hidden, p.var(&layer_key(l, "w2"))?)?;
    tape.reshape(out, &s)
}

/// `L` pre-norm residual blocks over tokens `[B, N, D]`.
pub fn transformer_forward(tape: &mut Tape, p: &Bound, z: Var, cfg: &EmbedConfig) -> Result<Var> {
    check_rank(tape, "transformer_forward", z, 3)?;
    let mut z = z;
    for l in 0..cfg.layers {
        let normed = tape.rms_norm(z, p.var(&layer_key(l, "attn_gain"))?)?;
        let a = attention(tape, p, l, normed, cfg)?;
        z = tape.add(z, a)?;
        let normed = tape.rms_norm(z, p.var(&layer_key(l, "ffn_gain"))?)?;
        let f = feed_forward(tape, p, l, normed)?;
        z = tape.add(z, f)?;
    }
    Ok(z)
}

/// Token average of the RMS-normalized final tokens: `[B, N, D] -> [B, D]`.
pub fn pool_manifold(tape: &mut Tape, p: &Bound, z: Var) -> Result<Var> {
    check_rank(tape, "pool_manifold", z, 3)?;
    let normed = tape.rms_norm(z, p.var("final_gain")?)?;
    tape.mean_axis(normed, 1)
}

/// Affine decoder `[B, D] -> [B, P*P*C]`.
pub fn reconstruct(tape: &mut Tape, p: &Bound, u: Var) -> Result<Var> {
    let y = tape.matmul(u, p.var("recon.w")?)?;
    tape.add_suffix(y, p.var("recon.b")?)
}

/// Linear classification logits `[B, D] -> [B, n_classes]`.
pub fn class_logits(tape: &mut Tape, p: &Bound, u: Var) -> Result<Var> {
    let y = tape.matmul(u, p.var("cls.w")?)?;
    tape.add_suffix(y, p.var("cls.b")?)
}

/// Full encoder: patches `[B, P*P*C]` to coordinates `[B, D]`.
pub fn encode_var(tape: &mut Tape, p: &Bound, x: Var, cfg: &EmbedConfig) -> Result<Var> {
    let z0 = patch_embed(tape, p, x, cfg)?;
    let zl = transformer_forward(tape, p, z0, cfg)?;
    pool_manifold(tape, p, zl)
}

/// Tape handles of the joint objective.
#[derive(Clone, Copy, Debug)]
pub struct EmbedLoss {
    pub total: Var,
    pub rec: Var,
    pub cls: Var,
    pub u: Var,
}

/// `L_rec + lambda_cls * L_cls` for degraded inputs, clean targets and
/// zero-based class indices.
pub fn embed_loss(
    tape: &mut Tape,
    p: &Bound,
    degraded: Var,
    clean: Var,
    classes: &[usize],
    cfg: &EmbedConfig,
) -> Result<EmbedLoss> {
    if tape.shape(degraded) != tape.shape(clean) {
        return Err(Error::shape(
            "embed_loss",
            format!("degraded {:?} vs clean {:?}", tape.shape(degraded), tape.shape(clean)),
        ));
    }
    let u = encode_var(tape, p, degraded, cfg)?;
    let x_hat = reconstruct(tape, p, u)?;
    let rec = tape.mse(x_hat, clean)?;
    let logits = class_logits(tape, p, u)?;
    let cls = tape.softmax_cross_entropy(logits, classes)?;
    let weighted = tape.scale(cls, cfg.lambda_cls);
    let total = tape.add(rec, weighted)?;
    Ok(EmbedLoss { total, rec, cls, u })
}

/// Epoch means of the embedding objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmbedEpoch {
    pub loss: f64,
    pub rec: f64,
    pub cls: f64,
}

/// Zero-based class index of a 1-based label.
pub(crate) fn class_index(label: u16, n_classes: usize) -> Result<usize> {
    if label == 0 || label as usize > n_classes {
        return Err(Error::invalid(format!("label {label} outside 1..={n_classes}")));
    }
    Ok(label as usize - 1)
}

/// Applies a fresh random composite degradation to one patch.
pub fn degrade_patch(patch: &Patch, seed: u64, params: &DegradationParams) -> Result<Vec<f64>> {
    let spec = DegradationSpec::random(1.0, seed);
    let cube: HsiCube = apply_composite(&patch.to_cube(), &spec, params)?;
    Ok(cube.values().iter().map(|&v| v as f64).collect())
}

/// Trains `model` on clean labeled patches. Every batch member is degraded
/// by its own freshly drawn composite spec. Returns per-epoch means.
pub fn train_embed(
    model: &mut EmbedModel,
    patches: &[Patch],
    settings: &TrainSettings,
    degradation: &DegradationParams,
) -> Result<Vec<EmbedEpoch>> {
    settings.validate()?;
    let cfg = model.config.clone();
    if patches.is_empty() {
        return Err(Error::invalid("no training patches"));
    }
    let len = cfg.patch_len();
    let mut classes = Vec::with_capacity(patches.len());
    for p in patches {
        if p.values.len() != len {
            return Err(Error::shape(
                "train_embed",
                format!("patch {:?} has {} values, expected {len}", p.center, p.values.len()),
            ));
        }
        classes.push(class_index(p.label, cfg.n_classes)?);
    }
    let mut opt = AdamW::new(settings.optimizer, &model.params);
    let mut history = Vec::with_capacity(settings.epochs);
    let mut step = 0u64;
    for epoch in 0..settings.epochs {
        let order = settings.epoch_order(patches.len(), epoch);
        let (mut sum, mut rec_sum, mut cls_sum, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for batch in order.chunks(settings.batch_size) {
            let mut noisy = Vec::with_capacity(batch.len() * len);
            let mut clean = Vec::with_capacity(batch.len() * len);
            let mut ys = Vec::with_capacity(batch.len());
            for (j, &i) in batch.iter().enumerate() {
                let member_seed = seeds::derive(settings.seed, (step << 16) | j as u64);
                noisy.extend(degrade_patch(&patches[i], member_seed, degradation)?);
                clean.extend_from_slice(&patches[i].values);
                ys.push(classes[i]);
            }
            let mut tape = Tape::new();
            let bound = model.params.bind(&mut tape);
            let x = tape.constant(Tensor::new(vec![batch.len(), len], noisy)?);
            let y = tape.constant(Tensor::new(vec![batch.len(), len], clean)?);
            let loss = embed_loss(&mut tape, &bound, x, y, &ys, &cfg)?;
            let value = tape.value(loss.total).item();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("embed loss {value} at step {step}")));
            }
            let grads = tape.backward(loss.total)?;
            model.params.accumulate(&bound, &grads);
            opt.step(&mut model.params)?;
            sum += value;
            rec_sum += tape.value(loss.rec).item();
            cls_sum += tape.value(loss.cls).item();
            batches += 1;
            step += 1;
        }
        let n = batches as f64;
        history.push(EmbedEpoch {
            loss: sum / n,
            rec: rec_sum / n,
            cls: cls_sum / n,
        });
    }
    Ok(history)
}
