//! Intrinsic-dimensionality estimates and embedding export.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::index;

use crate::classify::Features;
use crate::degrade::{BenchmarkCase, DegradationParams};
use crate::diffuse::{DiffusionHead, Latents};
use crate::embed::EmbedModel;
use crate::error::{Error, Result};
use crate::hsidata::{extract_patches, HsiCube, LabelMap};
use crate::seeds;

/// Fraction of the largest ratios treated as censored.
pub const TWONN_TRIM: f64 = 0.1;
/// Minimum distinct points for an estimate.
pub const TWONN_MIN_POINTS: usize = 10;

/// Representation stage a point set was taken from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    /// Flattened degraded input patches.
    DegradedRaw,
    /// Manifold coordinates `u_raw`.
    Manifold,
    /// Diffusion-refined coordinates.
    Refined,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::DegradedRaw, Stage::Manifold, Stage::Refined];

    pub fn name(self) -> &'static str {
        match self {
            Stage::DegradedRaw => "degraded-raw",
            Stage::Manifold => "manifold",
            Stage::Refined => "diffusion-refined",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Result of [`twonn_id`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoNn {
    pub estimate: f64,
    /// Distinct points used.
    pub points: usize,
    /// Exact duplicates dropped before the neighbor search.
    pub duplicates: usize,
}

fn dedup(points: &[f64], dim: usize) -> (Vec<&[f64]>, usize) {
    let mut seen = HashSet::new();
    let mut kept = Vec::new();
    for row in points.chunks(dim) {
        let key: Vec<u64> = row.iter().map(|v| (v + 0.0).to_bits()).collect();
        if seen.insert(key) {
            kept.push(row);
        }
    }
    let dropped = points.len() / dim - kept.len();
    (kept, dropped)
}

/// Two smallest squared distances from each point to the others.
fn two_nearest(rows: &[&[f64]]) -> Vec<(f64, f64)> {
    let n = rows.len();
    let mut best = vec![(f64::INFINITY, f64::INFINITY); n];
    let push = |b: &mut (f64, f64), d: f64| {
        if d < b.0 {
            b.1 = b.0;
            b.0 = d;
        } else if d < b.1 {
            b.1 = d;
        }
    };
    for i in 0..n {
        for j in i + 1..n {
            let d: f64 = rows[i].iter().zip(rows[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            push(&mut best[i], d);
            push(&mut best[j], d);
        }
    }
    best
}

/// TwoNN estimate from `n x dim` row-major points.
///
/// With `mu_i = r2 / r1`, the ratios follow a Pareto law with exponent `d`.
/// The largest [`TWONN_TRIM`] fraction is treated as right-censored at the
/// largest kept ratio, giving the maximum-likelihood estimate
/// `d = n_kept / (sum_kept ln mu_i + n_trimmed ln mu_cut)`.
pub fn twonn_id(points: &[f64], dim: usize) -> Result<TwoNn> {
    if dim == 0 || points.len() % dim != 0 {
        return Err(Error::shape("twonn_id", format!("{} values for width {dim}", points.len())));
    }
    if let Some(i) = points.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("point {}, coordinate {}", i / dim, i % dim)));
    }
    let (rows, duplicates) = dedup(points, dim);
    if rows.len() < TWONN_MIN_POINTS {
        return Err(Error::invalid(format!(
            "TwoNN needs at least {TWONN_MIN_POINTS} distinct points, got {}",
            rows.len()
        )));
    }
    let mut log_mu = Vec::with_capacity(rows.len());
    for (i, (r1, r2)) in two_nearest(&rows).into_iter().enumerate() {
        if r1 <= 0.0 {
            return Err(Error::invalid(format!("zero nearest-neighbor distance at point {i}")));
        }
        log_mu.push(0.5 * (r2 / r1).ln());
    }
    log_mu.sort_by(f64::total_cmp);
    let n = log_mu.len();
    let kept = ((1.0 - TWONN_TRIM) * n as f64).floor() as usize;
    let trimmed = n - kept;
    let cut = log_mu[kept - 1];
    let denom = log_mu[..kept].iter().sum::<f64>() + trimmed as f64 * cut;
    if denom <= 0.0 {
        return Err(Error::invalid("all neighbor ratios equal 1; dimension is unbounded"));
    }
    Ok(TwoNn {
        estimate: kept as f64 / denom,
        points: n,
        duplicates,
    })
}

/// One row of an [`id_report`].
#[derive(Clone, Debug, PartialEq)]
pub struct IdRow {
    pub case: String,
    pub stage: Stage,
    /// Width of the point set.
    pub dim: usize,
    pub estimate: std::result::Result<TwoNn, String>,
}

/// TwoNN estimates at the three representation stages for each case.
///
/// `n` pixels are drawn from `coords` without replacement (seeded); each
/// case degrades the whole cube with the same seed before extraction.
/// Estimation errors are recorded per row.
#[allow(clippy::too_many_arguments)]
pub fn id_report(
    cube: &HsiCube,
    labels: &LabelMap,
    coords: &[(usize, usize)],
    embed: &EmbedModel,
    head: &DiffusionHead,
    t_star: f64,
    cases: &[BenchmarkCase],
    n: usize,
    seed: u64,
) -> Result<Vec<IdRow>> {
    let n = n.min(coords.len());
    let mut pick = index::sample(&mut seeds::rng(seeds::derive(seed, 0x1D)), coords.len(), n).into_vec();
    pick.sort_unstable();
    let sample: Vec<(usize, usize)> = pick.into_iter().map(|i| coords[i]).collect();
    let mut rows = Vec::with_capacity(cases.len() * 3);
    for case in cases {
        let degraded = case.apply(cube, seed, &DegradationParams::default())?;
        let patches = extract_patches(&degraded, labels, &sample, embed.config.patch_size)?;
        let raw: Vec<f64> = patches.iter().flat_map(|p| p.values.iter().copied()).collect();
        let manifold = Features::Manifold(embed).extract(&patches)?;
        let refined = Latents::new(manifold.dim(), head.refine(manifold.data(), t_star)?, manifold.labels().to_vec())?;
        let sets: [(Stage, &[f64], usize); 3] = [
            (Stage::DegradedRaw, &raw, embed.config.patch_len()),
            (Stage::Manifold, manifold.data(), manifold.dim()),
            (Stage::Refined, refined.data(), refined.dim()),
        ];
        for (stage, points, dim) in sets {
            rows.push(IdRow {
                case: case.label.to_string(),
                stage,
                dim,
                estimate: twonn_id(points, dim).map_err(|e| e.to_string()),
            });
        }
    }
    Ok(rows)
}

/// CSV with header `case,stage,dim,points,id,error`.
pub fn id_table_csv(rows: &[IdRow]) -> String {
    let mut s = String::from("case,stage,dim,points,id,error\n");
    for r in rows {
        match &r.estimate {
            Ok(t) => s.push_str(&format!("{},{},{},{},{:.6},\n", r.case, r.stage, r.dim, t.points, t.estimate)),
            Err(e) => s.push_str(&format!("{},{},{},0,NaN,\"{}\"\n", r.case, r.stage, r.dim, e.replace('"', "'"))),
        }
    }
    s
}

/// Writes `label,f0,...,f{D-1}` then one row per sample, values with nine
/// significant digits.
pub fn write_embeddings<W: Write>(latents: &Latents, mut out: W) -> Result<()> {
    let header: Vec<String> = (0..latents.dim()).map(|i| format!("f{i}")).collect();
    writeln!(out, "label,{}", header.join(","))?;
    for (row, label) in latents.rows().zip(latents.labels()) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.8e}")).collect();
        writeln!(out, "{label},{}", cells.join(","))?;
    }
    Ok(())
}

pub fn export_embeddings(latents: &Latents, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_embeddings(latents, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}
