//! Composite degradation simulation.
//!
//! Nine single-kind operators, a Dirichlet-weighted composite `D(x; w, rho)`
//! used during training, and the eight fixed benchmark mixtures used for
//! evaluation.

pub mod jpeg;
mod ops;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::hsidata::HsiCube;
use crate::seeds;

pub use ops::{gaussian_kernel, sample_poisson, DegradationParams};

/// Number of degradation kinds.
pub const K: usize = 9;

/// Weights below this are skipped by [`apply_composite`].
pub const MIN_WEIGHT: f64 = 1e-3;

/// Degradation kinds in canonical order (index 0..8).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DegradationKind {
    Jpeg,
    ZeroMeanGaussian,
    AdditiveGaussian,
    Poisson,
    SaltPepper,
    Stripes,
    Deadline,
    Blur,
    Fog,
}

use DegradationKind::*;

impl DegradationKind {
    pub const ALL: [DegradationKind; K] = [
        Jpeg,
        ZeroMeanGaussian,
        AdditiveGaussian,
        Poisson,
        SaltPepper,
        Stripes,
        Deadline,
        Blur,
        Fog,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Jpeg => "jpeg",
            ZeroMeanGaussian => "zero-mean-gaussian",
            AdditiveGaussian => "additive-gaussian",
            Poisson => "poisson",
            SaltPepper => "salt-pepper",
            Stripes => "stripes",
            Deadline => "deadline",
            Blur => "blur",
            Fog => "fog",
        }
    }

    /// Seed of this kind's random stream within a composite run.
    pub fn derive_seed(self, seed: u64) -> u64 {
        seed ^ seeds::mix(self.index() as u64)
    }
}

impl fmt::Display for DegradationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DegradationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown degradation kind `{s}`")))
    }
}

fn check_intensity(s: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::invalid(format!("intensity must lie in [0, 1], got {s}")));
    }
    Ok(())
}

/// Applies one operator with explicit constants.
pub fn apply_kind(kind: DegradationKind, cube: &HsiCube, s: f64, seed: u64, params: &DegradationParams) -> Result<HsiCube> {
    check_intensity(s)?;
    if s == 0.0 {
        return Ok(cube.clone());
    }
    let f = match kind {
        Jpeg => ops::jpeg,
        ZeroMeanGaussian => ops::zero_mean_gaussian,
        AdditiveGaussian => ops::additive_gaussian,
        Poisson => ops::poisson,
        SaltPepper => ops::salt_pepper,
        Stripes => ops::stripes,
        Deadline => ops::deadline,
        Blur => ops::blur,
        Fog => ops::fog,
    };
    Ok(f(cube, s, seed, params))
}

macro_rules! single_kind {
    ($($(#[$doc:meta])* $name:ident => $kind:ident;)*) => {$(
        $(#[$doc])*
        pub fn $name(cube: &HsiCube, s: f64, seed: u64) -> Result<HsiCube> {
            apply_kind($kind, cube, s, seed, &DegradationParams::default())
        }
    )*};
}

single_kind! {
    /// Global-sigma Gaussian noise.
    apply_zero_mean_gaussian => ZeroMeanGaussian;
    /// Per-band-sigma Gaussian noise.
    apply_additive_gaussian => AdditiveGaussian;
    apply_poisson => Poisson;
    apply_salt_pepper => SaltPepper;
    apply_stripes => Stripes;
    apply_deadline => Deadline;
    apply_blur => Blur;
    apply_fog => Fog;
    apply_jpeg => Jpeg;
}

/// Mixing weights over the [`K`] kinds, a global intensity and a seed.
#[derive(Clone, Debug, PartialEq)]
pub struct DegradationSpec {
    pub weights: [f64; K],
    pub intensity: f64,
    pub seed: u64,
}

impl DegradationSpec {
    pub fn new(weights: [f64; K], intensity: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            weights,
            intensity,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid(format!("weights must be non-negative, got {:?}", self.weights)));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("weights must sum to 1, got {sum}")));
        }
        check_intensity(self.intensity)
    }

    /// Fresh training-time spec: `w ~ Dirichlet(alpha 1)`, `rho ~ U(0, 1)`.
    pub fn random(alpha: f64, seed: u64) -> Self {
        let mut rng = seeds::rng(seeds::derive(seed, 0xD1));
        let w = sample_dirichlet_with(&mut rng, K, alpha);
        let rho = rng.random_range(0.0..=1.0);
        Self {
            weights: w.try_into().expect("K weights"),
            intensity: rho,
            seed: seeds::derive(seed, 0xD2),
        }
    }

    /// Per-kind intensities `min(1, K w_i rho)`; zero for skipped kinds.
    pub fn kind_intensities(&self) -> [f64; K] {
        self.weights.map(|w| {
            if w < MIN_WEIGHT {
                0.0
            } else {
                (K as f64 * w * self.intensity).min(1.0)
            }
        })
    }
}

fn sample_dirichlet_with<R: Rng + ?Sized>(rng: &mut R, k: usize, alpha: f64) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha > 0");
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 {
        draws.into_iter().map(|g| g / sum).collect()
    } else {
        // every gamma draw underflowed (tiny alpha): a vertex of the simplex
        let mut w = vec![0.0; k];
        w[rng.random_range(0..k)] = 1.0;
        w
    }
}

/// Draw from `Dirichlet(alpha * 1_k)` via normalized Gamma variates.
pub fn sample_dirichlet(k: usize, alpha: f64, seed: u64) -> Result<Vec<f64>> {
    if k == 0 || !(alpha > 0.0) {
        return Err(Error::invalid(format!("dirichlet needs k >= 1 and alpha > 0, got k={k}, alpha={alpha}")));
    }
    Ok(sample_dirichlet_with(&mut seeds::rng(seed), k, alpha))
}

/// `D(x; w, rho)`: kinds applied in canonical order at `min(1, K w_i rho)`,
/// clamping after each.
pub fn apply_composite(cube: &HsiCube, spec: &DegradationSpec, params: &DegradationParams) -> Result<HsiCube> {
    spec.validate()?;
    let mut out = cube.clone();
    for (kind, s) in DegradationKind::ALL.into_iter().zip(spec.kind_intensities()) {
        if s > 0.0 {
            out = apply_kind(kind, &out, s, kind.derive_seed(spec.seed), params)?;
        }
    }
    Ok(out)
}

/// One fixed evaluation mixture.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkCase {
    pub label: &'static str,
    pub kinds: Vec<DegradationKind>,
    pub intensity: f64,
}

pub const BENCHMARK_INTENSITY: f64 = 0.5;

/// The eight composite benchmarks, kinds in their listing order.
pub fn benchmark_suite() -> Vec<BenchmarkCase> {
    let case = |label, kinds: &[DegradationKind]| BenchmarkCase {
        label,
        kinds: kinds.to_vec(),
        intensity: BENCHMARK_INTENSITY,
    };
    let all_but = |skip: &[DegradationKind]| -> Vec<DegradationKind> {
        DegradationKind::ALL.into_iter().filter(|k| !skip.contains(k)).collect()
    };
    vec![
        case("C-3-1", &[Deadline, Poisson, SaltPepper]),
        case("C-3-2", &[Jpeg, Blur, Fog]),
        case("C-3-3", &[AdditiveGaussian, Stripes, ZeroMeanGaussian]),
        case("C-3-4", &[Poisson, Blur, Fog]),
        case("C-5-1", &[Deadline, Stripes, Blur, SaltPepper, Fog]),
        case("C-5-2", &[Jpeg, AdditiveGaussian, Poisson, ZeroMeanGaussian, SaltPepper]),
        case("C-7", &all_but(&[AdditiveGaussian, Stripes])),
        case("C-9", &DegradationKind::ALL),
    ]
}

/// Looks up a benchmark by label.
pub fn benchmark_case(label: &str) -> Result<BenchmarkCase> {
    benchmark_suite()
        .into_iter()
        .find(|c| c.label == label)
        .ok_or_else(|| Error::invalid(format!("unknown benchmark case `{label}`")))
}

impl BenchmarkCase {
    /// Runs the listed kinds sequentially at the case intensity.
    pub fn apply(&self, cube: &HsiCube, seed: u64, params: &DegradationParams) -> Result<HsiCube> {
        let mut out = cube.clone();
        for &kind in &self.kinds {
            out = apply_kind(kind, &out, self.intensity, kind.derive_seed(seed), params)?;
        }
        Ok(out)
    }
}

/// Summary of a degradation's effect on a cube.
#[derive(Clone, Debug, PartialEq)]
pub struct DegradationStats {
    pub band_mse: Vec<f64>,
    /// Fraction of elements whose value changed.
    pub changed_fraction: f64,
}

pub fn degradation_stats(before: &HsiCube, after: &HsiCube) -> Result<DegradationStats> {
    if before.values().len() != after.values().len() || before.bands() != after.bands() {
        return Err(Error::shape("degradation_stats", "cubes differ in shape"));
    }
    let c = before.bands();
    let mut band_mse = vec![0.0; c];
    let mut changed = 0usize;
    for (i, (&a, &b)) in before.values().iter().zip(after.values()).enumerate() {
        let d = a as f64 - b as f64;
        band_mse[i % c] += d * d;
        changed += (a != b) as usize;
    }
    let px = (before.height() * before.width()) as f64;
    band_mse.iter_mut().for_each(|m| *m /= px);
    Ok(DegradationStats {
        band_mse,
        changed_fraction: changed as f64 / before.values().len() as f64,
    })
}
