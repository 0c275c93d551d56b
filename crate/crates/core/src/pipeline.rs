//! The three training stages run in order, plus the feature ablations.
//!
//! Stage 1 trains the embedding network on degraded training patches. Stage 2
//! freezes it and trains the diffusion head on manifold coordinates of the
//! clean training patches. Stage 3 freezes both and trains a classifier on
//! features of the training patches and degraded copies of them.

use crate::classify::{evaluate, score, train_classifier, Classifier, Features, MetricsReport};
use crate::config::RunConfig;
use crate::degrade::{BenchmarkCase, DegradationParams};
use crate::diffuse::{train_diffusion, DiffusionEpoch, DiffusionHead, Latents};
use crate::embed::{degrade_patch, train_embed, EmbedEpoch, EmbedModel};
use crate::error::{Error, Result};
use crate::hsidata::{extract_patches, split_pixels, HsiCube, LabelMap, Patch, Split};
use crate::seeds;

const SPLIT_TAG: u64 = 0x5911;
const AUGMENT_TAG: u64 = 0xA06;
const EVAL_TAG: u64 = 0xE7A1;

/// A labeled cube with its train/val/test split.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub cube: HsiCube,
    pub labels: LabelMap,
    pub split: Split,
}

impl Dataset {
    /// Splits the labeled pixels with fractions and seed from `cfg`.
    pub fn new(cube: HsiCube, labels: LabelMap, cfg: &RunConfig) -> Result<Self> {
        if !labels.matches(&cube) {
            return Err(Error::shape(
                "dataset",
                format!(
                    "labels {}x{} for cube {}x{}",
                    labels.height(),
                    labels.width(),
                    cube.height(),
                    cube.width()
                ),
            ));
        }
        let split = split_pixels(&labels, &cfg.split(seeds::derive(cfg.seed, SPLIT_TAG))?)?;
        Ok(Self { cube, labels, split })
    }

    pub fn n_classes(&self) -> usize {
        self.labels.n_classes()
    }

    pub fn patches(&self, coords: &[(usize, usize)], p: usize) -> Result<Vec<Patch>> {
        extract_patches(&self.cube, &self.labels, coords, p)
    }
}

/// Stage 1.
pub fn train_embed_stage(data: &Dataset, cfg: &RunConfig) -> Result<(EmbedModel, Vec<EmbedEpoch>)> {
    let ec = cfg.embed_config(data.cube.bands(), data.n_classes());
    let mut model = EmbedModel::init(ec, cfg.init_seed(1))?;
    let patches = data.patches(&data.split.train, cfg.patch_size)?;
    let history = train_embed(&mut model, &patches, &cfg.embed_settings(), &DegradationParams::default())?;
    Ok((model, history))
}

/// Manifold coordinates of the clean patches at `coords`.
pub fn clean_latents(data: &Dataset, embed: &EmbedModel, coords: &[(usize, usize)]) -> Result<Latents> {
    let patches = data.patches(coords, embed.config.patch_size)?;
    Features::Manifold(embed).extract(&patches)
}

/// Stage 2.
pub fn train_diffusion_stage(latents: &Latents, cfg: &RunConfig) -> Result<(DiffusionHead, Vec<DiffusionEpoch>)> {
    let hc = cfg.head_config();
    if latents.dim() != hc.dim {
        return Err(Error::shape(
            "train_diffusion",
            format!("latents of width {} for embed_dim {}", latents.dim(), hc.dim),
        ));
    }
    let mut head = DiffusionHead::init(hc, cfg.init_seed(2))?;
    let history = train_diffusion(&mut head, latents, &cfg.diffusion_settings(), cfg.lambda_x)?;
    Ok((head, history))
}

/// Clean training patches followed by `cfg.augment_copies` randomly degraded
/// copies of each.
pub fn augmented_patches(data: &Dataset, cfg: &RunConfig) -> Result<Vec<Patch>> {
    let clean = data.patches(&data.split.train, cfg.patch_size)?;
    let params = DegradationParams::default();
    let mut out = clean.clone();
    for copy in 0..cfg.augment_copies {
        for (i, p) in clean.iter().enumerate() {
            let seed = seeds::derive(seeds::derive(cfg.seed, AUGMENT_TAG + copy as u64), i as u64);
            let mut q = p.clone();
            q.values = degrade_patch(p, seed, &params)?;
            out.push(q);
        }
    }
    Ok(out)
}

/// Stage 3 for a given feature extractor.
pub fn train_classifier_stage(
    features: Features<'_>,
    patches: &[Patch],
    n_classes: usize,
    cfg: &RunConfig,
) -> Result<(Classifier, Vec<f64>)> {
    let feats = features.extract(patches)?;
    let mut clf = Classifier::init(feats.dim(), n_classes, cfg.init_seed(3))?;
    let history = train_classifier(&mut clf, &feats, &cfg.classifier_settings())?;
    Ok((clf, history))
}

/// Models and loss curves of a full staged run.
#[derive(Clone, Debug)]
pub struct TrainedPipeline {
    pub embed: EmbedModel,
    pub head: DiffusionHead,
    pub classifier: Classifier,
    pub t_star: f64,
    pub embed_history: Vec<EmbedEpoch>,
    pub diffusion_history: Vec<DiffusionEpoch>,
    pub classifier_history: Vec<f64>,
}

impl TrainedPipeline {
    pub fn features(&self) -> Features<'_> {
        Features::Refined(&self.embed, &self.head, self.t_star)
    }

    /// Metrics on `coords`, optionally under a benchmark case.
    pub fn evaluate(
        &self,
        data: &Dataset,
        coords: &[(usize, usize)],
        case: Option<&BenchmarkCase>,
        seed: u64,
    ) -> Result<MetricsReport> {
        let (m, _) = evaluate(
            &data.cube,
            &data.labels,
            coords,
            self.features(),
            &self.classifier,
            case,
            seed,
        )?;
        Ok(m)
    }
}

/// Runs all three stages.
pub fn run(data: &Dataset, cfg: &RunConfig) -> Result<TrainedPipeline> {
    cfg.validate()?;
    let (embed, embed_history) = train_embed_stage(data, cfg)?;
    let latents = clean_latents(data, &embed, &data.split.train)?;
    let (head, diffusion_history) = train_diffusion_stage(&latents, cfg)?;
    let patches = augmented_patches(data, cfg)?;
    let (classifier, classifier_history) = train_classifier_stage(
        Features::Refined(&embed, &head, cfg.t_star),
        &patches,
        data.n_classes(),
        cfg,
    )?;
    Ok(TrainedPipeline {
        embed,
        head,
        classifier,
        t_star: cfg.t_star,
        embed_history,
        diffusion_history,
        classifier_history,
    })
}

/// Seed used to degrade the evaluation cube for a run configured with `cfg`.
pub fn eval_seed(cfg: &RunConfig) -> u64 {
    seeds::derive(cfg.seed, EVAL_TAG)
}

/// Classifiers for the two ablated feature stages, trained on the same
/// augmented patches and budget as the full model.
#[derive(Clone, Debug)]
pub struct Ablations {
    /// Trained on manifold coordinates without refinement.
    pub manifold: Classifier,
    /// Trained on raw center spectra.
    pub spectra: Classifier,
}

pub fn train_ablations(data: &Dataset, trained: &TrainedPipeline, cfg: &RunConfig) -> Result<Ablations> {
    let patches = augmented_patches(data, cfg)?;
    let (manifold, _) = train_classifier_stage(Features::Manifold(&trained.embed), &patches, data.n_classes(), cfg)?;
    let (spectra, _) = train_classifier_stage(Features::Spectra, &patches, data.n_classes(), cfg)?;
    Ok(Ablations { manifold, spectra })
}

/// Overall accuracies of the three variants on one case.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub case: String,
    pub full: MetricsReport,
    pub no_diffusion: MetricsReport,
    pub spectra: MetricsReport,
}

impl AblationRow {
    pub fn line(&self) -> String {
        format!(
            "case={} full_oa={:.4} no_diffusion_oa={:.4} spectra_oa={:.4}",
            self.case, self.full.oa, self.no_diffusion.oa, self.spectra.oa
        )
    }
}

/// Scores the full model and both ablations on each case, sharing one
/// degraded cube and one encoding pass per case.
pub fn ablation_table(
    data: &Dataset,
    trained: &TrainedPipeline,
    ablations: &Ablations,
    coords: &[(usize, usize)],
    cases: &[BenchmarkCase],
    seed: u64,
) -> Result<Vec<AblationRow>> {
    let params = DegradationParams::default();
    let mut rows = Vec::with_capacity(cases.len());
    for case in cases {
        let degraded = case.apply(&data.cube, seed, &params)?;
        let patches = extract_patches(&degraded, &data.labels, coords, trained.embed.config.patch_size)?;
        let u = Features::Manifold(&trained.embed).extract(&patches)?;
        let refined = Latents::new(u.dim(), trained.head.refine(u.data(), trained.t_star)?, u.labels().to_vec())?;
        let spectra = Features::Spectra.extract(&patches)?;
        let report = |clf: &Classifier, f: &Latents| -> Result<MetricsReport> { crate::classify::metrics(&score(clf, f)?) };
        rows.push(AblationRow {
            case: case.label.to_string(),
            full: report(&trained.classifier, &refined)?,
            no_diffusion: report(&ablations.manifold, &u)?,
            spectra: report(&ablations.spectra, &spectra)?,
        });
    }
    Ok(rows)
}

/// Nearest-class-centroid accuracy on raw spectra: centroids from `train`,
/// scored on `test`.
pub fn nearest_centroid_oa(cube: &HsiCube, labels: &LabelMap, train: &[(usize, usize)], test: &[(usize, usize)]) -> Result<f64> {
    let k = labels.n_classes();
    let c = cube.bands();
    let mut sums = vec![vec![0.0; c]; k];
    let mut counts = vec![0usize; k];
    for &(r, col) in train {
        let l = labels.get(r, col) as usize;
        if l == 0 {
            continue;
        }
        counts[l - 1] += 1;
        for (s, &v) in sums[l - 1].iter_mut().zip(cube.spectrum(r, col)) {
            *s += v as f64;
        }
    }
    if counts.iter().any(|&n| n == 0) {
        return Err(Error::invalid("every class needs a training pixel for its centroid"));
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|v| *v /= n as f64);
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    for &(r, col) in test {
        let l = labels.get(r, col) as usize;
        if l == 0 {
            continue;
        }
        let x = cube.spectrum(r, col);
        let best = (0..k)
            .min_by(|&a, &b| {
                let da: f64 = sums[a].iter().zip(x).map(|(m, &v)| (m - v as f64).powi(2)).sum();
                let db: f64 = sums[b].iter().zip(x).map(|(m, &v)| (m - v as f64).powi(2)).sum();
                da.total_cmp(&db)
            })
            .expect("k >= 1");
        correct += (best + 1 == l) as usize;
        total += 1;
    }
    if total == 0 {
        return Err(Error::invalid("no labeled test pixels"));
    }
    Ok(correct as f64 / total as f64)
}
