//! Seeded synthetic scenes standing in for real hyperspectral datasets.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::seeds;

use super::{normalize, HsiCube, LabelMap};

/// Parameters of a synthetic Voronoi scene.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthSpec {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub n_classes: usize,
    pub seed: u64,
    /// Standard deviation of per-pixel spectral noise before normalization.
    pub jitter: f64,
    /// Voronoi sites per class.
    pub sites_per_class: usize,
}

impl SynthSpec {
    pub fn new(height: usize, width: usize, bands: usize, n_classes: usize, seed: u64) -> Self {
        Self {
            height,
            width,
            bands,
            n_classes,
            seed,
            jitter: 0.02,
            sites_per_class: 2,
        }
    }
}

pub fn synth_cube(height: usize, width: usize, bands: usize, n_classes: usize, seed: u64) -> Result<(HsiCube, LabelMap)> {
    SynthSpec::new(height, width, bands, n_classes, seed).generate()
}

impl SynthSpec {
    /// Voronoi regions from random sites, one class per region; each class
    /// owns a smooth spectrum made of 2-4 Gaussian bumps over the band axis.
    pub fn generate(&self) -> Result<(HsiCube, LabelMap)> {
        let (h, w, c, k) = (self.height, self.width, self.bands, self.n_classes);
        if k < 2 {
            return Err(Error::invalid(format!("need at least 2 classes, got {k}")));
        }
        if c < 4 {
            return Err(Error::invalid(format!("need at least 4 bands, got {c}")));
        }
        let n_sites = k * self.sites_per_class.max(1);
        if n_sites > h * w {
            return Err(Error::invalid(format!("{n_sites} sites do not fit a {h}x{w} scene")));
        }
        let mut rng = seeds::rng(self.seed);

        // distinct pixel sites; site i belongs to class (i mod k) + 1
        let mut sites: Vec<(usize, usize)> = Vec::with_capacity(n_sites);
        while sites.len() < n_sites {
            let s = (rng.random_range(0..h), rng.random_range(0..w));
            if !sites.contains(&s) {
                sites.push(s);
            }
        }

        let signatures: Vec<Vec<f64>> = (0..k).map(|_| signature(&mut rng, c)).collect();

        let mut labels = vec![0u16; h * w];
        for r in 0..h {
            for col in 0..w {
                let nearest = sites
                    .iter()
                    .enumerate()
                    .min_by_key(|(_, &(sr, sc))| {
                        let dr = sr as i64 - r as i64;
                        let dc = sc as i64 - col as i64;
                        dr * dr + dc * dc
                    })
                    .map(|(i, _)| i)
                    .unwrap();
                labels[r * w + col] = (nearest % k + 1) as u16;
            }
        }

        let noise = Normal::new(0.0, self.jitter.max(0.0)).expect("finite jitter");
        let mut values = Vec::with_capacity(h * w * c);
        for &l in &labels {
            for &s in &signatures[l as usize - 1] {
                let j = if self.jitter > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                values.push((s + j) as f32);
            }
        }
        let cube = normalize(&HsiCube::new(h, w, c, values)?)?;
        Ok((cube, LabelMap::new(h, w, labels)?))
    }
}

fn signature<R: Rng>(rng: &mut R, bands: usize) -> Vec<f64> {
    let n_bumps = rng.random_range(2..=4);
    let last = (bands - 1) as f64;
    let bumps: Vec<(f64, f64, f64)> = (0..n_bumps)
        .map(|_| {
            let center = rng.random_range(0.0..=last);
            let width = rng.random_range(0.08..0.25) * bands as f64;
            let amp = rng.random_range(0.3..1.0);
            (center, width, amp)
        })
        .collect();
    let base = rng.random_range(0.0..0.3);
    (0..bands)
        .map(|b| {
            let x = b as f64;
            base + bumps
                .iter()
                .map(|&(m, s, a)| a * (-(x - m) * (x - m) / (2.0 * s * s)).exp())
                .sum::<f64>()
        })
        .collect()
}
