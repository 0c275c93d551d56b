//! Frozen-feature classification and accuracy metrics.
//!
//! Features come from one of three extractors (raw center spectra, manifold
//! coordinates, or diffusion-refined coordinates); a one-hidden-layer MLP is
//! trained on them with everything upstream frozen.

use crate::degrade::{BenchmarkCase, DegradationParams};
use crate::diffuse::{DiffusionHead, Latents};
use crate::embed::{class_index, read_meta_usize, strip_meta, EmbedModel};
use crate::error::{Error, Result};
use crate::hsidata::{extract_patches, HsiCube, LabelMap, Patch};
use crate::numkit::{AdamW, ParamStore, Tape, Tensor, TrainSettings};
use crate::seeds;

/// Representation fed to the classifier.
#[derive(Clone, Copy, Debug)]
pub enum Features<'a> {
    /// Center-pixel spectrum of each patch.
    Spectra,
    /// Manifold coordinate `u_raw`.
    Manifold(&'a EmbedModel),
    /// Single-step refined coordinate at time `t*`.
    Refined(&'a EmbedModel, &'a DiffusionHead, f64),
}

impl Features<'_> {
    /// Patch side the extractor consumes.
    pub fn patch_size(&self) -> usize {
        match self {
            Features::Spectra => 1,
            Features::Manifold(e) | Features::Refined(e, _, _) => e.config.patch_size,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Features::Spectra => "spectra",
            Features::Manifold(_) => "manifold",
            Features::Refined(..) => "refined",
        }
    }

    /// Feature rows for `patches`, labels carried over.
    pub fn extract(&self, patches: &[Patch]) -> Result<Latents> {
        let labels: Vec<u16> = patches.iter().map(|p| p.label).collect();
        match *self {
            Features::Spectra => {
                let dim = patches.first().map_or(1, |p| p.bands);
                let data = patches.iter().flat_map(|p| p.center_spectrum().iter().copied()).collect();
                Latents::new(dim, data, labels)
            }
            Features::Manifold(embed) => {
                let u = embed.encode(&flatten(patches))?;
                Latents::new(embed.config.embed_dim, u, labels)
            }
            Features::Refined(embed, head, t_star) => {
                if head.config.dim != embed.config.embed_dim {
                    return Err(Error::shape(
                        "extract_features",
                        format!(
                            "embedding width {} vs diffusion head width {}",
                            embed.config.embed_dim, head.config.dim
                        ),
                    ));
                }
                let u = embed.encode(&flatten(patches))?;
                Latents::new(head.config.dim, head.refine(&u, t_star)?, labels)
            }
        }
    }
}

fn flatten(patches: &[Patch]) -> Vec<f64> {
    patches.iter().flat_map(|p| p.values.iter().copied()).collect()
}

/// Manifold or refined features of `patches`; `head = None` skips refinement.
pub fn extract_features(
    patches: &[Patch],
    embed: &EmbedModel,
    head: Option<&DiffusionHead>,
    t_star: f64,
) -> Result<Latents> {
    match head {
        Some(h) => Features::Refined(embed, h, t_star).extract(patches),
        None => Features::Manifold(embed).extract(patches),
    }
}

/// One-hidden-layer MLP `in -> hidden (GELU) -> n_classes`.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub in_dim: usize,
    pub hidden: usize,
    pub n_classes: usize,
    pub params: ParamStore,
}

impl Classifier {
    /// Hidden width `2 * in_dim`.
    pub fn init(in_dim: usize, n_classes: usize, seed: u64) -> Result<Self> {
        if in_dim == 0 || n_classes < 2 {
            return Err(Error::invalid(format!(
                "classifier needs in_dim >= 1 and n_classes >= 2, got {in_dim} and {n_classes}"
            )));
        }
        let hidden = 2 * in_dim;
        let mut rng = seeds::rng(seeds::derive(seed, 0xC1A5));
        let mut params = ParamStore::new();
        for (name, shape) in Self::shapes(in_dim, hidden, n_classes) {
            let t = if name.ends_with(".b") {
                Tensor::zeros(&shape)
            } else {
                Tensor::randn(&shape, 1.0 / (shape[0] as f64).sqrt(), &mut rng)
            };
            params.insert(name, t.with_grad());
        }
        Ok(Self {
            in_dim,
            hidden,
            n_classes,
            params,
        })
    }

    fn shapes(in_dim: usize, hidden: usize, n: usize) -> [(&'static str, Vec<usize>); 4] {
        [
            ("fc1.w", vec![in_dim, hidden]),
            ("fc1.b", vec![hidden]),
            ("fc2.w", vec![hidden, n]),
            ("fc2.b", vec![n]),
        ]
    }

    pub fn to_store(&self) -> ParamStore {
        let mut store = self.params.clone();
        store.insert("meta.in_dim", Tensor::scalar(self.in_dim as f64));
        store.insert("meta.hidden", Tensor::scalar(self.hidden as f64));
        store.insert("meta.n_classes", Tensor::scalar(self.n_classes as f64));
        store
    }

    pub fn from_store(store: &ParamStore) -> Result<Self> {
        let in_dim = read_meta_usize(store, "in_dim")?;
        let hidden = read_meta_usize(store, "hidden")?;
        let n_classes = read_meta_usize(store, "n_classes")?;
        for (name, shape) in Self::shapes(in_dim, hidden, n_classes) {
            let got = store.get(name)?.shape();
            if got != shape.as_slice() {
                return Err(Error::shape("classifier checkpoint", format!("`{name}` is {got:?}, expected {shape:?}")));
            }
        }
        Ok(Self {
            in_dim,
            hidden,
            n_classes,
            params: strip_meta(store),
        })
    }

    fn logits_var(&self, tape: &mut Tape, bound: &crate::numkit::Bound, x: crate::numkit::Var) -> Result<crate::numkit::Var> {
        let h = tape.matmul(x, bound.var("fc1.w")?)?;
        let h = tape.add_suffix(h, bound.var("fc1.b")?)?;
        let h = tape.gelu(h);
        let y = tape.matmul(h, bound.var("fc2.w")?)?;
        tape.add_suffix(y, bound.var("fc2.b")?)
    }

    fn check_width(&self, latents: &Latents) -> Result<()> {
        if latents.dim() != self.in_dim {
            return Err(Error::shape(
                "classifier",
                format!("features of width {} for input width {}", latents.dim(), self.in_dim),
            ));
        }
        Ok(())
    }

    /// Logits `[len, n_classes]` row-major.
    pub fn logits(&self, latents: &Latents) -> Result<Vec<f64>> {
        self.check_width(latents)?;
        let mut out = Vec::with_capacity(latents.len() * self.n_classes);
        for chunk in latents.data().chunks(512 * self.in_dim) {
            let mut tape = Tape::new();
            let bound = self.params.bind_frozen(&mut tape);
            let x = tape.constant(Tensor::new(vec![chunk.len() / self.in_dim, self.in_dim], chunk.to_vec())?);
            let y = self.logits_var(&mut tape, &bound, x)?;
            out.extend_from_slice(tape.value(y).data());
        }
        Ok(out)
    }

    /// Predicted 1-based labels (ties go to the lower class).
    pub fn predict(&self, latents: &Latents) -> Result<Vec<u16>> {
        let logits = self.logits(latents)?;
        Ok(logits
            .chunks(self.n_classes)
            .map(|row| {
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best as u16 + 1
            })
            .collect())
    }
}

/// AdamW on softmax cross-entropy; returns the epoch-mean losses.
pub fn train_classifier(clf: &mut Classifier, latents: &Latents, settings: &TrainSettings) -> Result<Vec<f64>> {
    settings.validate()?;
    clf.check_width(latents)?;
    if latents.is_empty() {
        return Err(Error::invalid("no training features"));
    }
    let classes = latents
        .labels()
        .iter()
        .map(|&l| class_index(l, clf.n_classes))
        .collect::<Result<Vec<_>>>()?;
    let d = clf.in_dim;
    let mut opt = AdamW::new(settings.optimizer, &clf.params);
    let mut history = Vec::with_capacity(settings.epochs);
    let mut step = 0u64;
    for epoch in 0..settings.epochs {
        let order = settings.epoch_order(latents.len(), epoch);
        let (mut sum, mut batches) = (0.0, 0usize);
        for batch in order.chunks(settings.batch_size) {
            let mut x = Vec::with_capacity(batch.len() * d);
            for &i in batch {
                x.extend_from_slice(latents.row(i));
            }
            let ys: Vec<usize> = batch.iter().map(|&i| classes[i]).collect();
            let mut tape = Tape::new();
            let bound = clf.params.bind(&mut tape);
            let xv = tape.constant(Tensor::new(vec![batch.len(), d], x)?);
            let logits = clf.logits_var(&mut tape, &bound, xv)?;
            let loss = tape.softmax_cross_entropy(logits, &ys)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("classifier loss {value} at step {step}")));
            }
            let grads = tape.backward(loss)?;
            clf.params.accumulate(&bound, &grads);
            opt.step(&mut clf.params)?;
            sum += value;
            batches += 1;
            step += 1;
        }
        history.push(sum / batches as f64);
    }
    Ok(history)
}

/// Counts indexed `[truth][prediction]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self {
            n: n_classes,
            counts: vec![0; n_classes * n_classes],
        }
    }

    /// Row-major `n x n` counts.
    pub fn from_counts(n_classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != n_classes * n_classes {
            return Err(Error::shape(
                "confusion",
                format!("{} counts for {n_classes} classes", counts.len()),
            ));
        }
        Ok(Self { n: n_classes, counts })
    }

    pub fn n_classes(&self) -> usize {
        self.n
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.counts[truth * self.n..(truth + 1) * self.n].iter().sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.n).map(|t| self.get(t, pred)).sum()
    }

    /// One CSV line per truth row, no header.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in self.counts.chunks(self.n.max(1)) {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

/// Tallies zero-based `(truth, prediction)` pairs.
pub fn confusion(predictions: &[usize], truth: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if predictions.len() != truth.len() {
        return Err(Error::shape(
            "confusion",
            format!("{} predictions for {} labels", predictions.len(), truth.len()),
        ));
    }
    let mut cm = ConfusionMatrix::new(n_classes);
    for (&p, &t) in predictions.iter().zip(truth) {
        if p >= n_classes || t >= n_classes {
            return Err(Error::invalid(format!("class pair ({t}, {p}) outside 0..{n_classes}")));
        }
        cm.counts[t * n_classes + p] += 1;
    }
    Ok(cm)
}

/// Overall accuracy, average recall over non-empty classes, and Cohen's kappa.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    /// Per-class recall; `None` for classes absent from the ground truth.
    pub recalls: Vec<Option<f64>>,
    pub total: u64,
}

impl MetricsReport {
    /// `case=<label> oa=... aa=... kappa=...` with four decimals.
    pub fn line(&self, case: &str) -> String {
        format!("case={case} oa={:.4} aa={:.4} kappa={:.4}", self.oa, self.aa, self.kappa)
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::invalid("metrics of an empty confusion matrix"));
    }
    let n = cm.n_classes();
    let tot = total as f64;
    let trace: u64 = (0..n).map(|i| cm.get(i, i)).sum();
    let oa = trace as f64 / tot;
    let recalls: Vec<Option<f64>> = (0..n)
        .map(|i| {
            let r = cm.row_sum(i);
            (r > 0).then(|| cm.get(i, i) as f64 / r as f64)
        })
        .collect();
    let present: Vec<f64> = recalls.iter().flatten().copied().collect();
    let aa = present.iter().sum::<f64>() / present.len() as f64;
    let pe = (0..n)
        .map(|i| cm.row_sum(i) as f64 * cm.col_sum(i) as f64)
        .sum::<f64>()
        / (tot * tot);
    let kappa = if pe == 1.0 { 0.0 } else { (oa - pe) / (1.0 - pe) };
    Ok(MetricsReport {
        oa,
        aa,
        kappa,
        recalls,
        total,
    })
}

/// Confusion matrix of `classifier` on labeled features.
pub fn score(classifier: &Classifier, features: &Latents) -> Result<ConfusionMatrix> {
    let pred = classifier.predict(features)?;
    let n = classifier.n_classes;
    let p: Vec<usize> = pred.iter().map(|&l| l as usize - 1).collect();
    let t = features
        .labels()
        .iter()
        .map(|&l| class_index(l, n))
        .collect::<Result<Vec<_>>>()?;
    confusion(&p, &t, n)
}

/// Degrades the whole cube with `case` (if any), extracts the patches at
/// `coords`, and scores `classifier` on their features.
pub fn evaluate(
    cube: &HsiCube,
    labels: &LabelMap,
    coords: &[(usize, usize)],
    features: Features<'_>,
    classifier: &Classifier,
    case: Option<&BenchmarkCase>,
    seed: u64,
) -> Result<(MetricsReport, ConfusionMatrix)> {
    let degraded;
    let source = match case {
        Some(c) => {
            degraded = c.apply(cube, seed, &DegradationParams::default())?;
            &degraded
        }
        None => cube,
    };
    let patches = extract_patches(source, labels, coords, features.patch_size())?;
    let feats = features.extract(&patches)?;
    let cm = score(classifier, &feats)?;
    Ok((metrics(&cm)?, cm))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cm(counts: [[u64; 2]; 2]) -> ConfusionMatrix {
        ConfusionMatrix::from_counts(2, counts.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn worked_examples() {
        let m = metrics(&cm([[50, 0], [0, 50]])).unwrap();
        assert_eq!((m.oa, m.aa, m.kappa), (1.0, 1.0, 1.0));
        let m = metrics(&cm([[25, 25], [25, 25]])).unwrap();
        assert_eq!((m.oa, m.kappa), (0.5, 0.0));
        let m = metrics(&cm([[40, 10], [20, 30]])).unwrap();
        assert!((m.oa - 0.7).abs() < 1e-15);
        assert!((m.aa - 0.7).abs() < 1e-15);
        assert!((m.kappa - 0.4).abs() < 1e-12);
    }

    #[test]
    fn empty_rows_excluded_and_degenerate_kappa() {
        let m = metrics(&cm([[10, 0], [0, 0]])).unwrap();
        assert_eq!(m.recalls, vec![Some(1.0), None]);
        assert_eq!(m.aa, 1.0);
        // p_e = 1
        assert_eq!(m.kappa, 0.0);
        assert!(metrics(&ConfusionMatrix::new(3)).is_err());
    }

    #[test]
    fn confusion_tallies() {
        let c = confusion(&[0, 1, 1, 2], &[0, 1, 2, 2], 3).unwrap();
        assert_eq!(c.total(), 4);
        assert_eq!(c.get(2, 1), 1);
        assert_eq!(c.get(2, 2), 1);
        assert_eq!(confusion(&[], &[], 3).unwrap(), ConfusionMatrix::new(3));
        assert!(confusion(&[3], &[0], 3).is_err());
        assert!(confusion(&[0], &[], 3).is_err());
        assert_eq!(c.to_csv(), "1,0,0\n0,1,0\n0,1,1\n");
    }

    #[test]
    fn line_format() {
        let m = metrics(&cm([[40, 10], [20, 30]])).unwrap();
        assert_eq!(m.line("C-9"), "case=C-9 oa=0.7000 aa=0.7000 kappa=0.4000");
    }

    #[test]
    fn classifier_store_roundtrip() {
        let c = Classifier::init(3, 4, 1).unwrap();
        let back = Classifier::from_store(&c.to_store()).unwrap();
        assert_eq!(back.hidden, 6);
        let l = Latents::new(3, vec![0.1, 0.2, 0.3], vec![1]).unwrap();
        assert_eq!(back.logits(&l).unwrap(), c.logits(&l).unwrap());
    }
}
