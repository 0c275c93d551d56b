//! Helpers shared by the integration test targets.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use msdiff::diffuse::{diffusion_loss, forward_diffuse, DiffusionHead, HeadConfig};
use msdiff::embed::{embed_loss, EmbedConfig, EmbedModel};
use msdiff::numkit::{grad_check, grad_check_params, ParamStore, Tape, Tensor, Var};
use msdiff::Result;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Contracts `y` with a fixed random cotangent so every output entry gets a
/// distinct nonzero weight in the scalar being differentiated.
fn contract(t: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let w = uniform(t.shape(y), -1.0, 1.0, &mut rng(seed ^ 0xC0));
    let w = t.constant(w);
    let p = t.mul(y, w)?;
    Ok(t.sum(p))
}

/// Maximum relative error of the central-difference check for every tape
/// primitive on one random instance. Binary ops are checked in each operand.
pub fn primitive_gradchecks(seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    let m = r.random_range(1..4usize);
    let k = r.random_range(1..5usize);
    let n = r.random_range(1..4usize);
    let g = r.random_range(1..3usize);
    let a = uniform(&[m, k], -2.0, 2.0, &mut r);
    let b = uniform(&[k, n], -2.0, 2.0, &mut r);
    let a3 = uniform(&[g, m, k], -2.0, 2.0, &mut r);
    let b3 = uniform(&[g, k, n], -2.0, 2.0, &mut r);
    let x = uniform(&[m, k], -2.0, 2.0, &mut r);
    let y = uniform(&[m, k], -2.0, 2.0, &mut r);
    let suffix = uniform(&[k], -1.0, 1.0, &mut r);
    let gain = uniform(&[k], 0.5, 1.5, &mut r);
    let x3 = uniform(&[g, m, k], -2.0, 2.0, &mut r);
    let labels: Vec<usize> = (0..m).map(|_| r.random_range(0..k)).collect();
    let c = seed;

    let mut out = Vec::new();
    let mut check = |name: &'static str, res: Result<f64>| out.push((name, res.expect(name)));
    let err = |f: &dyn Fn(&mut Tape, Var) -> Result<Var>, x: &Tensor| -> Result<f64> {
        Ok(grad_check(f, x)?.max_rel_error)
    };

    check("matmul.a", err(&|t, v| { let o = t.constant(b.clone()); let y = t.matmul(v, o)?; contract(t, y, c) }, &a));
    check("matmul.b", err(&|t, v| { let o = t.constant(a.clone()); let y = t.matmul(o, v)?; contract(t, y, c) }, &b));
    check("bmm.a", err(&|t, v| { let o = t.constant(b3.clone()); let y = t.bmm(v, o)?; contract(t, y, c) }, &a3));
    check("bmm.b", err(&|t, v| { let o = t.constant(a3.clone()); let y = t.bmm(o, v)?; contract(t, y, c) }, &b3));
    check("add", err(&|t, v| { let o = t.constant(y.clone()); let z = t.add(v, o)?; contract(t, z, c) }, &x));
    check("sub.a", err(&|t, v| { let o = t.constant(y.clone()); let z = t.sub(v, o)?; contract(t, z, c) }, &x));
    check("sub.b", err(&|t, v| { let o = t.constant(x.clone()); let z = t.sub(o, v)?; contract(t, z, c) }, &y));
    check("mul", err(&|t, v| { let o = t.constant(y.clone()); let z = t.mul(v, o)?; contract(t, z, c) }, &x));
    check("mul.self", err(&|t, v| { let z = t.mul(v, v)?; contract(t, z, c) }, &x));
    check("add_suffix.x", err(&|t, v| { let o = t.constant(suffix.clone()); let z = t.add_suffix(v, o)?; contract(t, z, c) }, &x3));
    check("add_suffix.b", err(&|t, v| { let o = t.constant(x3.clone()); let z = t.add_suffix(o, v)?; contract(t, z, c) }, &suffix));
    check("scale", err(&|t, v| { let z = t.scale(v, -1.7); contract(t, z, c) }, &x));
    check("gelu", err(&|t, v| { let z = t.gelu(v); contract(t, z, c) }, &x));
    check("rms_norm.x", err(&|t, v| { let o = t.constant(gain.clone()); let z = t.rms_norm(v, o)?; contract(t, z, c) }, &x3));
    check("rms_norm.gain", err(&|t, v| { let o = t.constant(x3.clone()); let z = t.rms_norm(o, v)?; contract(t, z, c) }, &gain));
    check("softmax", err(&|t, v| { let z = t.softmax(v); contract(t, z, c) }, &x3));
    check("mean_axis", err(&|t, v| { let z = t.mean_axis(v, 1)?; contract(t, z, c) }, &x3));
    check("sum", err(&|t, v| Ok(t.sum(v)), &x));
    check("mean", err(&|t, v| { let z = t.mul(v, v)?; Ok(t.mean(z)) }, &x));
    check("reshape", err(&|t, v| { let z = t.reshape(v, &[k, m])?; contract(t, z, c) }, &x));
    check("permute", err(&|t, v| { let z = t.permute(v, &[2, 0, 1])?; contract(t, z, c) }, &x3));
    check("transpose", err(&|t, v| { let z = t.transpose(v)?; contract(t, z, c) }, &x));
    check("concat", err(&|t, v| { let o = t.constant(y.clone()); let z = t.concat(&[v, o, v])?; contract(t, z, c) }, &x));
    check("slice_last", err(&|t, v| { let z = t.slice_last(v, k / 2, k - k / 2)?; contract(t, z, c) }, &x));
    check("mse.a", err(&|t, v| { let o = t.constant(y.clone()); t.mse(v, o) }, &x));
    check("mse.b", err(&|t, v| { let o = t.constant(x.clone()); t.mse(o, v) }, &y));
    check("softmax_cross_entropy", err(&|t, v| t.softmax_cross_entropy(v, &labels), &x));
    out
}

/// Minimal embedding network: `P = 3`, `D = 8`, one block. `stride` 3 gives
/// a single token; stride 1 gives nine tokens and exercises attention mixing.
pub fn tiny_embed_config(stride: usize) -> EmbedConfig {
    EmbedConfig {
        patch_size: 3,
        stride,
        bands: 4,
        embed_dim: 8,
        rank: 2,
        layers: 1,
        heads: 2,
        ffn_mult: 2,
        lambda_cls: 0.5,
        n_classes: 3,
    }
}

/// Replaces every parameter with generic random values so no gradient is
/// structurally zero (biases and gains start at 0 and 1 after init).
pub fn jitter_params(store: &mut ParamStore, scale: f64, seed: u64) {
    let mut r = rng(seed);
    let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
    for name in names {
        let t = store.get_mut(&name).unwrap();
        for v in t.data_mut() {
            *v += r.random_range(-scale..scale);
        }
    }
}

/// Central-difference check of the full embedding objective with respect to
/// every network parameter.
pub fn embed_loss_gradcheck(seed: u64, stride: usize) -> f64 {
    let cfg = tiny_embed_config(stride);
    let mut model = EmbedModel::init(cfg.clone(), seed).unwrap();
    jitter_params(&mut model.params, 0.3, seed ^ 0x5EED);
    let mut r = rng(seed ^ 0xDA7A);
    let b = 2;
    let degraded = uniform(&[b, cfg.patch_len()], 0.0, 1.0, &mut r);
    let clean = uniform(&[b, cfg.patch_len()], 0.0, 1.0, &mut r);
    let classes: Vec<usize> = (0..b).map(|_| r.random_range(0..cfg.n_classes)).collect();
    grad_check_params(
        |t, p| {
            let x = t.constant(degraded.clone());
            let y = t.constant(clean.clone());
            Ok(embed_loss(t, p, x, y, &classes, &cfg)?.total)
        },
        &model.params,
    )
    .unwrap()
    .max_rel_error
}

pub fn tiny_head_config() -> HeadConfig {
    HeadConfig {
        dim: 4,
        hidden: 12,
        n_freqs: 3,
    }
}

/// Central-difference check of the diffusion objective with respect to every
/// head parameter.
pub fn diffusion_loss_gradcheck(seed: u64) -> f64 {
    let cfg = tiny_head_config();
    let mut head = DiffusionHead::init(cfg.clone(), seed).unwrap();
    jitter_params(&mut head.params, 0.2, seed ^ 0x5EED);
    let mut r = rng(seed ^ 0xDA7A);
    let b = 3;
    let u0 = uniform(&[b, cfg.dim], -1.0, 1.0, &mut r);
    let ts: Vec<f64> = (0..b).map(|_| r.random_range(0.05..0.95)).collect();
    let mut ut = Vec::new();
    let mut eps = Vec::new();
    for (i, &t) in ts.iter().enumerate() {
        let (x, e) = forward_diffuse(&u0.data()[i * cfg.dim..(i + 1) * cfg.dim], t, seed + i as u64).unwrap();
        ut.extend(x);
        eps.extend(e);
    }
    let ut = Tensor::new(vec![b, cfg.dim], ut).unwrap();
    let eps = Tensor::new(vec![b, cfg.dim], eps).unwrap();
    let gamma = head.time_features(&ts).unwrap();
    grad_check_params(
        |t, p| {
            let x = t.constant(ut.clone());
            let g = t.constant(gamma.clone());
            let e = t.constant(eps.clone());
            let u = t.constant(u0.clone());
            Ok(diffusion_loss(t, p, x, g, e, u, 0.7, &cfg)?.total)
        },
        &head.params,
    )
    .unwrap()
    .max_rel_error
}

/// Metrics computed from the expanded list of (truth, prediction) samples.
pub fn sample_metrics(n: usize, counts: &[u64]) -> (f64, f64, f64) {
    let mut pairs = Vec::new();
    for t in 0..n {
        for p in 0..n {
            for _ in 0..counts[t * n + p] {
                pairs.push((t, p));
            }
        }
    }
    let total = pairs.len() as f64;
    let agree = pairs.iter().filter(|(t, p)| t == p).count() as f64;
    let oa = agree / total;
    let mut recalls = Vec::new();
    for c in 0..n {
        let of_c: Vec<_> = pairs.iter().filter(|(t, _)| *t == c).collect();
        if !of_c.is_empty() {
            recalls.push(of_c.iter().filter(|(_, p)| *p == c).count() as f64 / of_c.len() as f64);
        }
    }
    let aa = recalls.iter().sum::<f64>() / recalls.len() as f64;
    // chance agreement: probability that two independent draws, one from the
    // truth marginal and one from the prediction marginal, coincide
    let mut pe = 0.0;
    for c in 0..n {
        let ft = pairs.iter().filter(|(t, _)| *t == c).count() as f64 / total;
        let fp = pairs.iter().filter(|(_, p)| *p == c).count() as f64 / total;
        pe += ft * fp;
    }
    let kappa = if pe == 1.0 { 0.0 } else { (oa - pe) / (1.0 - pe) };
    (oa, aa, kappa)
}
