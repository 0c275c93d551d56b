//! Diffusion in manifold-coordinate space.
//!
//! Coordinates are noised as `u_t = alpha(t) u_0 + sigma(t) eps` under the
//! cosine schedule `alpha = cos(pi t / 2)`, `sigma = sin(pi t / 2)`. A
//! time-conditioned MLP predicts both the injected noise and the clean
//! coordinate. At inference the head is applied once at a fixed time `t*`
//! to the scaled raw coordinate, with no noise and no sampling.

mod latents;

use std::f64::consts::FRAC_PI_2;

use rand_distr::{Distribution, StandardNormal};

use crate::embed::{read_meta_usize, strip_meta};
use crate::error::{Error, Result};
use crate::numkit::{AdamW, Bound, ParamStore, Tape, Tensor, TrainSettings, Var};
use crate::seeds;

pub use latents::{decode_latents, encode_latents, read_latents, write_latents, Latents, MSLT_MAGIC};

/// Default refinement time.
pub const DEFAULT_T_STAR: f64 = 0.25;
/// Default number of time-embedding frequency pairs.
pub const DEFAULT_FREQS: usize = 16;
const OMEGA_MIN: f64 = 1.0;
const OMEGA_MAX: f64 = 1000.0;

fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("diffusion time must lie in [0, 1], got {t}")));
    }
    Ok(())
}

/// `(alpha(t), sigma(t))` of the cosine schedule.
pub fn schedule(t: f64) -> Result<(f64, f64)> {
    check_time(t)?;
    let (s, c) = (FRAC_PI_2 * t).sin_cos();
    Ok((c, s))
}

/// Noised coordinate and the Gaussian noise drawn from `seed`.
pub fn forward_diffuse(u0: &[f64], t: f64, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let (a, s) = schedule(t)?;
    let mut rng = seeds::rng(seed);
    let eps: Vec<f64> = u0.iter().map(|_| StandardNormal.sample(&mut rng)).collect();
    let ut = u0.iter().zip(&eps).map(|(&u, &e)| a * u + s * e).collect();
    Ok((ut, eps))
}

/// Sinusoidal features at log-spaced frequencies.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeEmbedding {
    frequencies: Vec<f64>,
}

impl TimeEmbedding {
    /// `k` frequencies log-spaced from 1 to 1000.
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("time embedding needs at least one frequency"));
        }
        let frequencies = if k == 1 {
            vec![OMEGA_MIN]
        } else {
            let ratio = (OMEGA_MAX / OMEGA_MIN).ln();
            (0..k)
                .map(|i| OMEGA_MIN * (ratio * i as f64 / (k - 1) as f64).exp())
                .collect()
        };
        Ok(Self { frequencies })
    }

    /// Explicit frequency list.
    pub fn with_frequencies(frequencies: Vec<f64>) -> Result<Self> {
        if frequencies.is_empty() || frequencies.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid(format!("bad frequency list {frequencies:?}")));
        }
        Ok(Self { frequencies })
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    /// Output width `2 K_f`.
    pub fn dim(&self) -> usize {
        2 * self.frequencies.len()
    }

    /// `[sin(w_1 t), cos(w_1 t), sin(w_2 t), ...]`.
    pub fn embed(&self, t: f64) -> Result<Vec<f64>> {
        check_time(t)?;
        Ok(self
            .frequencies
            .iter()
            .flat_map(|&w| {
                let (s, c) = (w * t).sin_cos();
                [s, c]
            })
            .collect())
    }
}

/// Shape of the diffusion head.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeadConfig {
    /// Coordinate width `D`.
    pub dim: usize,
    /// Hidden width, `4 D` by default.
    pub hidden: usize,
    /// Time-embedding frequency pairs `K_f`.
    pub n_freqs: usize,
}

impl HeadConfig {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            hidden: 4 * dim,
            n_freqs: DEFAULT_FREQS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.hidden == 0 || self.n_freqs == 0 {
            return Err(Error::invalid(format!("diffusion head sizes must be positive, got {self:?}")));
        }
        Ok(())
    }

    fn shapes(&self) -> [(&'static str, Vec<usize>); 6] {
        let input = self.dim + 2 * self.n_freqs;
        [
            ("l1.w", vec![input, self.hidden]),
            ("l1.b", vec![self.hidden]),
            ("l2.w", vec![self.hidden, self.hidden]),
            ("l2.b", vec![self.hidden]),
            ("out.w", vec![self.hidden, 2 * self.dim]),
            ("out.b", vec![2 * self.dim]),
        ]
    }
}

/// Time-conditioned MLP `(u_t, gamma(t)) -> (v_pred, u_pred)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionHead {
    pub config: HeadConfig,
    pub time: TimeEmbedding,
    pub params: ParamStore,
}

impl DiffusionHead {
    pub fn init(config: HeadConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeds::rng(seeds::derive(seed, 0xD1FF));
        let mut params = ParamStore::new();
        for (name, shape) in config.shapes() {
            let t = if name.ends_with(".b") {
                Tensor::zeros(&shape)
            } else {
                Tensor::randn(&shape, 1.0 / (shape[0] as f64).sqrt(), &mut rng)
            };
            params.insert(name, t.with_grad());
        }
        Ok(Self {
            config,
            time: TimeEmbedding::new(config.n_freqs)?,
            params,
        })
    }

    pub fn to_store(&self) -> ParamStore {
        let mut store = self.params.clone();
        store.insert("meta.dim", Tensor::scalar(self.config.dim as f64));
        store.insert("meta.hidden", Tensor::scalar(self.config.hidden as f64));
        store.insert("meta.n_freqs", Tensor::scalar(self.config.n_freqs as f64));
        store
    }

    pub fn from_store(store: &ParamStore) -> Result<Self> {
        let config = HeadConfig {
            dim: read_meta_usize(store, "dim")?,
            hidden: read_meta_usize(store, "hidden")?,
            n_freqs: read_meta_usize(store, "n_freqs")?,
        };
        config.validate()?;
        for (name, shape) in config.shapes() {
            let got = store.get(name)?.shape();
            if got != shape.as_slice() {
                return Err(Error::shape("diffusion checkpoint", format!("`{name}` is {got:?}, expected {shape:?}")));
            }
        }
        Ok(Self {
            config,
            time: TimeEmbedding::new(config.n_freqs)?,
            params: strip_meta(store),
        })
    }

    /// Stacked time embeddings `[B, 2 K_f]`.
    pub fn time_features(&self, ts: &[f64]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(ts.len() * self.time.dim());
        for &t in ts {
            data.extend(self.time.embed(t)?);
        }
        Tensor::new(vec![ts.len(), self.time.dim()], data)
    }

    /// Head outputs for coordinates `u_t` (`[B, D]` row-major) at times `ts`.
    pub fn predict(&self, u_t: &[f64], ts: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let u = tape.constant(Tensor::new(vec![ts.len(), self.config.dim], u_t.to_vec())?);
        let g = tape.constant(self.time_features(ts)?);
        let (v, x) = head_forward(&mut tape, &bound, u, g, &self.config)?;
        Ok((tape.value(v).data().to_vec(), tape.value(x).data().to_vec()))
    }

    /// `(total, L_v, L_x)` for one coordinate at time `t`, noise from `seed`.
    pub fn loss(&self, u0: &[f64], t: f64, seed: u64, lambda_x: f64) -> Result<(f64, f64, f64)> {
        let (ut, eps) = forward_diffuse(u0, t, seed)?;
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let d = self.config.dim;
        let u_t = tape.constant(Tensor::new(vec![1, d], ut)?);
        let g = tape.constant(self.time_features(&[t])?);
        let eps = tape.constant(Tensor::new(vec![1, d], eps)?);
        let u0 = tape.constant(Tensor::new(vec![1, d], u0.to_vec())?);
        let l = diffusion_loss(&mut tape, &bound, u_t, g, eps, u0, lambda_x, &self.config)?;
        Ok((
            tape.value(l.total).item(),
            tape.value(l.noise).item(),
            tape.value(l.clean).item(),
        ))
    }

    /// Single-step refinement: the clean-coordinate prediction for
    /// `alpha(t*) u_raw` at time `t*`. Rows of `u_raw` are `[B, D]`.
    pub fn refine(&self, u_raw: &[f64], t_star: f64) -> Result<Vec<f64>> {
        if !(t_star > 0.0 && t_star < 1.0) {
            return Err(Error::invalid(format!("t_star must lie in (0, 1), got {t_star}")));
        }
        let d = self.config.dim;
        if u_raw.len() % d != 0 {
            return Err(Error::shape("refine", format!("{} values for width {d}", u_raw.len())));
        }
        let (a, _) = schedule(t_star)?;
        let mut out = Vec::with_capacity(u_raw.len());
        for chunk in u_raw.chunks(256 * d) {
            let scaled: Vec<f64> = chunk.iter().map(|&u| a * u).collect();
            let (_, x) = self.predict(&scaled, &vec![t_star; chunk.len() / d])?;
            out.extend(x);
        }
        Ok(out)
    }
}

/// MLP on `concat(u_t, gamma)`: returns `(v_pred, u_pred)`, each `[B, D]`.
pub fn head_forward(tape: &mut Tape, p: &Bound, u_t: Var, gamma: Var, cfg: &HeadConfig) -> Result<(Var, Var)> {
    let input = tape.concat(&[u_t, gamma])?;
    let mut h = input;
    for layer in ["l1", "l2"] {
        let y = tape.matmul(h, p.var(&format!("{layer}.w"))?)?;
        let y = tape.add_suffix(y, p.var(&format!("{layer}.b"))?)?;
        h = tape.gelu(y);
    }
    let y = tape.matmul(h, p.var("out.w")?)?;
    let y = tape.add_suffix(y, p.var("out.b")?)?;
    let v = tape.slice_last(y, 0, cfg.dim)?;
    let x = tape.slice_last(y, cfg.dim, cfg.dim)?;
    Ok((v, x))
}

/// Tape handles of the diffusion objective.
#[derive(Clone, Copy, Debug)]
pub struct DiffusionLoss {
    pub total: Var,
    /// Noise-prediction term `L_v`.
    pub noise: Var,
    /// Clean-prediction term `L_x`.
    pub clean: Var,
}

/// `L_v + lambda_x L_x` with `L_v = mse(v_pred, eps)`, `L_x = mse(u_pred, u_0)`.
#[allow(clippy::too_many_arguments)]
pub fn diffusion_loss(
    tape: &mut Tape,
    p: &Bound,
    u_t: Var,
    gamma: Var,
    eps: Var,
    u0: Var,
    lambda_x: f64,
    cfg: &HeadConfig,
) -> Result<DiffusionLoss> {
    if !(lambda_x >= 0.0) {
        return Err(Error::invalid(format!("lambda_x must be non-negative, got {lambda_x}")));
    }
    let (v, x) = head_forward(tape, p, u_t, gamma, cfg)?;
    let noise = tape.mse(v, eps)?;
    let clean = tape.mse(x, u0)?;
    let weighted = tape.scale(clean, lambda_x);
    let total = tape.add(noise, weighted)?;
    Ok(DiffusionLoss { total, noise, clean })
}

/// Epoch means of the diffusion objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffusionEpoch {
    pub loss: f64,
    pub noise: f64,
    pub clean: f64,
}

/// Trains `head` on clean coordinates with `t ~ U(0, 1)` and fresh noise per
/// sample. The embedding network is not involved.
pub fn train_diffusion(
    head: &mut DiffusionHead,
    latents: &Latents,
    settings: &TrainSettings,
    lambda_x: f64,
) -> Result<Vec<DiffusionEpoch>> {
    settings.validate()?;
    let d = head.config.dim;
    if latents.dim() != d {
        return Err(Error::shape(
            "train_diffusion",
            format!("latents of width {} for a head of width {d}", latents.dim()),
        ));
    }
    if latents.is_empty() {
        return Err(Error::invalid("no latents to train on"));
    }
    let mut opt = AdamW::new(settings.optimizer, &head.params);
    let mut rng = seeds::rng(seeds::derive(settings.seed, 0x7157));
    let mut history = Vec::with_capacity(settings.epochs);
    let mut step = 0u64;
    for epoch in 0..settings.epochs {
        let order = settings.epoch_order(latents.len(), epoch);
        let (mut sum, mut nsum, mut csum, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for batch in order.chunks(settings.batch_size) {
            let b = batch.len();
            let mut ut = Vec::with_capacity(b * d);
            let mut eps = Vec::with_capacity(b * d);
            let mut u0 = Vec::with_capacity(b * d);
            let mut ts = Vec::with_capacity(b);
            for &i in batch {
                let t: f64 = rand::Rng::random(&mut rng);
                let seed = rand::Rng::random::<u64>(&mut rng);
                let (x, e) = forward_diffuse(latents.row(i), t, seed)?;
                ut.extend(x);
                eps.extend(e);
                u0.extend_from_slice(latents.row(i));
                ts.push(t);
            }
            let mut tape = Tape::new();
            let bound = head.params.bind(&mut tape);
            let ut = tape.constant(Tensor::new(vec![b, d], ut)?);
            let g = tape.constant(head.time_features(&ts)?);
            let eps = tape.constant(Tensor::new(vec![b, d], eps)?);
            let u0 = tape.constant(Tensor::new(vec![b, d], u0)?);
            let loss = diffusion_loss(&mut tape, &bound, ut, g, eps, u0, lambda_x, &head.config)?;
            let value = tape.value(loss.total).item();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("diffusion loss {value} at step {step}")));
            }
            let grads = tape.backward(loss.total)?;
            head.params.accumulate(&bound, &grads);
            opt.step(&mut head.params)?;
            sum += value;
            nsum += tape.value(loss.noise).item();
            csum += tape.value(loss.clean).item();
            batches += 1;
            step += 1;
        }
        let n = batches as f64;
        history.push(DiffusionEpoch {
            loss: sum / n,
            noise: nsum / n,
            clean: csum / n,
        });
    }
    Ok(history)
}
