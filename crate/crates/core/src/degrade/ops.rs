//! The nine single-kind degradation operators.
//!
//! Each maps a cube in `[0, 1]` and an intensity `s` in `[0, 1]` to a new cube
//! clamped to `[0, 1]`. `s == 0` returns an exact copy.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::hsidata::{reflect_index, HsiCube};
use crate::seeds;

use super::jpeg;

/// Tunable constants of the operators. Defaults give visible but not
/// destructive corruption at `s = 0.5`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegradationParams {
    /// Global noise std at `s = 1`.
    pub zero_mean_sigma_max: f64,
    /// Upper bound of the per-band noise std at `s = 1`.
    pub additive_sigma_max: f64,
    /// Photon count at `s -> 0`.
    pub poisson_q_clean: f64,
    /// Photon count at `s = 1`.
    pub poisson_q_noisy: f64,
    /// Corruption probability at `s = 1`.
    pub salt_pepper_max_prob: f64,
    pub stripe_period: usize,
    /// Stripe offset bound at `s = 1`.
    pub stripe_max_offset: f64,
    /// Fraction of bands hit by stripes/deadlines at `s = 1`.
    pub band_fraction: f64,
    /// Fraction of columns zeroed per affected band at `s = 1`.
    pub deadline_col_fraction: f64,
    pub blur_sigma_max: f64,
    /// Opacity `1 - t_r` at `s = 1`.
    pub fog_max_opacity: f64,
    pub fog_light: f64,
    pub jpeg_q_base: f64,
    pub jpeg_q_slope: f64,
}

impl Default for DegradationParams {
    fn default() -> Self {
        Self {
            zero_mean_sigma_max: 0.2,
            additive_sigma_max: 0.2,
            poisson_q_clean: 1000.0,
            poisson_q_noisy: 10.0,
            salt_pepper_max_prob: 0.2,
            stripe_period: 8,
            stripe_max_offset: 0.3,
            band_fraction: 0.5,
            deadline_col_fraction: 0.1,
            blur_sigma_max: 2.0,
            fog_max_opacity: 0.8,
            fog_light: 0.9,
            jpeg_q_base: 0.02,
            jpeg_q_slope: 0.3,
        }
    }
}

#[inline]
fn clamp01(v: f64) -> f32 {
    v.clamp(0.0, 1.0) as f32
}

fn map_values(cube: &HsiCube, mut f: impl FnMut(usize, f64) -> f64) -> HsiCube {
    let mut out = cube.clone();
    for (i, v) in out.values_mut().iter_mut().enumerate() {
        *v = clamp01(f(i, *v as f64));
    }
    out
}

/// Adds `N(0, sigma^2)` to every element, `sigma = zero_mean_sigma_max * s`.
pub(super) fn zero_mean_gaussian(cube: &HsiCube, s: f64, seed: u64, p: &DegradationParams) -> HsiCube {
    let sigma = p.zero_mean_sigma_max * s;
    let mut rng = seeds::rng(seed);
    map_values(cube, |_, v| {
        let z: f64 = StandardNormal.sample(&mut rng);
        v + sigma * z
    })
}

/// Band-heterogeneous noise: `sigma_c ~ U(0, additive_sigma_max * s)` per band.
pub(super) fn additive_gaussian(cube: &HsiCube, s: f64, seed: u64, p: &DegradationParams) -> HsiCube {
    let mut rng = seeds::rng(seed);
    let cap = p.additive_sigma_max * s;
    let sigmas: Vec<f64> = (0..cube.bands()).map(|_| rng.random_range(0.0..=cap)).collect();
    let c = cube.bands();
    map_values(cube, |i, v| {
        let z: f64 = StandardNormal.sample(&mut rng);
        v + sigmas[i % c] * z
    })
}

/// Poisson draw; Knuth's product method below mean 30, rounded normal
/// approximation above.
pub fn sample_poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    if mean < 30.0 {
        let limit = (-mean).exp();
        let mut k = 0u32;
        let mut prod: f64 = rng.random();
        while prod > limit {
            k += 1;
            prod *= rng.random::<f64>();
        }
        k as f64
    } else {
        let z: f64 = StandardNormal.sample(rng);
        (mean + mean.sqrt() * z).round().max(0.0)
    }
}

/// Photon-count noise with `Q = q_clean (1 - s) + q_noisy s`.
pub(super) fn poisson(cube: &HsiCube, s: f64, seed: u64, p: &DegradationParams) -> HsiCube {
    let q = p.poisson_q_clean * (1.0 - s) + p.poisson_q_noisy * s;
    let mut rng = seeds::rng(seed);
    map_values(cube, |_, v| sample_poisson(&mut rng, v * q) / q)
}

/// Each element independently set to 1 or 0 with probability
/// `salt_pepper_max_prob * s`.
pub(super) fn salt_pepper(cube: &HsiCube, s: f64, seed: u64, p: &DegradationParams) -> HsiCube {
    let prob = (p.salt_pepper_max_prob * s).min(1.0);
    let mut rng = seeds::rng(seed);
    map_values(cube, |_, v| {
        if rng.random::<f64>() < prob {
            if rng.random::<bool>() {
                1.0
            } else {
                0.0
            }
        } else {
            v
        }
    })
}

pub(super) fn affected_band_count(bands: usize, s: f64, p: &DegradationParams) -> usize {
    ((s * bands as f64 * p.band_fraction).ceil() as usize).min(bands)
}

pub(super) fn deadline_column_count(width: usize, s: f64, p: &DegradationParams) -> usize {
    ((p.deadline_col_fraction * s * width as f64).ceil() as usize).min(width)
}

/// Periodic vertical stripes: columns `j % T == phase` in a random band
/// subset receive one additive offset per band.
pub(super) fn stripes(cube: &HsiCube, s: f64, seed: u64, p: &DegradationParams) -> HsiCube {
    let mut rng = seeds::rng(seed);
    let (h, w, c) = (cube.height(), cube.width(), cube.bands());
    let period = p.stripe_period.max(1);
    let n_bands = affected_band_count(c, s, p);
    let mut bands = index::sample(&mut rng, c, n_bands).into_vec();
    bands.sort_unstable();
    let phase = rng.random_range(0..period);
    let amp = p.stripe_max_offset * s;
    let mut out = cube.clone();
    for &b in &bands {
        let delta = rng.random_range(-amp..=amp);
        for r in 0..h {
            for col in (phase..w).step_by(period) {
                let i = out.index(r, col, b);
                out.values_mut()[i] = clamp01(cube.values()[i] as f64 + delta);
            }
        }
    }
    out
}

/// Zeroes a random set of whole columns in a random band subset.
pub(super) fn deadline(cube: &HsiCube, s: f64, seed: u64, p: &DegradationParams) -> HsiCube {
    let mut rng = seeds::rng(seed);
    let (h, w, c) = (cube.height(), cube.width(), cube.bands());
    let n_bands = affected_band_count(c, s, p);
    let n_cols = deadline_column_count(w, s, p);
    let mut bands = index::sample(&mut rng, c, n_bands).into_vec();
    bands.sort_unstable();
    let mut out = cube.clone();
    for &b in &bands {
        for col in index::sample(&mut rng, w, n_cols) {
            for r in 0..h {
                let i = out.index(r, col, b);
                out.values_mut()[i] = 0.0;
            }
        }
    }
    out
}

/// Normalized 1-D Gaussian taps for `sigma`, radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Separable Gaussian blur of each band with reflected borders.
pub(super) fn blur(cube: &HsiCube, s: f64, _seed: u64, p: &DegradationParams) -> HsiCube {
    let sigma = p.blur_sigma_max * s;
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let (h, w) = (cube.height(), cube.width());
    let mut out = cube.clone();
    let mut tmp = vec![0.0; h * w];
    for b in 0..cube.bands() {
        let plane = cube.band_plane(b);
        for r in 0..h {
            for c in 0..w {
                tmp[r * w + c] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, &t)| t * plane[r * w + reflect_index(c as isize + k as isize - radius, w)])
                    .sum();
            }
        }
        let mut res = vec![0.0; h * w];
        for r in 0..h {
            for c in 0..w {
                res[r * w + c] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, &t)| t * tmp[reflect_index(r as isize + k as isize - radius, h) * w + c])
                    .sum::<f64>()
                    .clamp(0.0, 1.0);
            }
        }
        out.set_band_plane(b, &res);
    }
    out
}

/// Uniform haze: `t_r x + (1 - t_r) A` with `t_r = 1 - fog_max_opacity * s`.
pub(super) fn fog(cube: &HsiCube, s: f64, _seed: u64, p: &DegradationParams) -> HsiCube {
    let t = 1.0 - p.fog_max_opacity * s;
    let a = p.fog_light;
    map_values(cube, |_, v| t * v + (1.0 - t) * a)
}

/// Blockwise DCT quantization with base step `jpeg_q_base + jpeg_q_slope * s`.
pub(super) fn jpeg(cube: &HsiCube, s: f64, _seed: u64, p: &DegradationParams) -> HsiCube {
    let q = p.jpeg_q_base + p.jpeg_q_slope * s;
    let (h, w) = (cube.height(), cube.width());
    let mut out = cube.clone();
    for b in 0..cube.bands() {
        let rec: Vec<f64> = jpeg::roundtrip_plane(&cube.band_plane(b), h, w, q)
            .into_iter()
            .map(|v| v.clamp(0.0, 1.0))
            .collect();
        out.set_band_plane(b, &rec);
    }
    out
}
