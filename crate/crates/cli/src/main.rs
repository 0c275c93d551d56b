//! `msdiff`: staged command-line front end.
//!
//! Every command that writes an artifact also writes `<artifact>.manifest`.
//! Failures print a single `error kind=... message="..."` line on stderr and
//! exit with status 1.

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use msdiff::classify::{evaluate, train_classifier, Classifier, Features};
use msdiff::config::RunConfig;
use msdiff::degrade::{
    apply_composite, apply_kind, benchmark_case, degradation_stats, DegradationKind, DegradationParams, DegradationSpec, K,
};
use msdiff::diagnostics::{export_embeddings, id_report, id_table_csv};
use msdiff::diffuse::{read_latents, write_latents, DiffusionHead, Latents};
use msdiff::embed::EmbedModel;
use msdiff::hsidata::{extract_patches, read_cube, write_cube, HsiCube, LabelMap, SynthSpec};
use msdiff::numkit::checkpoint;
use msdiff::pipeline::{augmented_patches, eval_seed, train_diffusion_stage, train_embed_stage, Dataset};
use msdiff::Error;

use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "msdiff", version, about = "Manifold-space diffusion for degraded hyperspectral classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum FeatureKind {
    /// Diffusion-refined manifold coordinates (needs both checkpoints).
    Refined,
    /// Manifold coordinates without refinement.
    Manifold,
    /// Raw center-pixel spectra.
    Spectra,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SplitPart {
    Train,
    Val,
    Test,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic scene.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        height: usize,
        #[arg(long, default_value_t = 100)]
        width: usize,
        #[arg(long, default_value_t = 16)]
        bands: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Degrade a whole cube with a benchmark case, one kind, explicit
    /// composite weights, or a random composite.
    Degrade {
        #[arg(long = "in", visible_alias = "data")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Benchmark label such as C-9.
        #[arg(long, conflicts_with_all = ["kind", "random", "weights"])]
        case: Option<String>,
        /// Single degradation kind, e.g. salt-pepper.
        #[arg(long, requires = "intensity", conflicts_with_all = ["random", "weights"])]
        kind: Option<String>,
        #[arg(long)]
        intensity: Option<f64>,
        /// Nine comma-separated composite weights in canonical kind order.
        #[arg(long, requires = "rho", conflicts_with = "random")]
        weights: Option<String>,
        /// Global composite intensity.
        #[arg(long)]
        rho: Option<f64>,
        /// Random Dirichlet-weighted composite.
        #[arg(long)]
        random: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print per-band MSE and the changed-element fraction.
        #[arg(long)]
        stats: bool,
    },
    /// Stage 1: train the embedding network.
    TrainEmbed {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode patches of one split into manifold coordinates.
    ExtractLatents {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt_embed: Option<PathBuf>,
        /// Refine the coordinates with this diffusion head.
        #[arg(long)]
        ckpt_diff: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitPart::Train)]
        split: SplitPart,
        /// Degrade the cube with this benchmark case first.
        #[arg(long)]
        case: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage 2: train the diffusion head on extracted latents.
    TrainDiffusion {
        #[arg(long)]
        latents: PathBuf,
        /// The frozen embedding checkpoint the latents came from.
        #[arg(long)]
        ckpt_embed: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage 3: train the classifier on frozen features.
    TrainClassifier {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt_embed: Option<PathBuf>,
        #[arg(long)]
        ckpt_diff: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = FeatureKind::Refined)]
        features: FeatureKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score the classifier on the test split, optionally under a benchmark case.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt_embed: Option<PathBuf>,
        #[arg(long)]
        ckpt_diff: Option<PathBuf>,
        #[arg(long)]
        ckpt_clf: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = FeatureKind::Refined)]
        features: FeatureKind,
        /// Benchmark label, or `none` for the clean cube.
        #[arg(long, default_value = "none")]
        case: String,
        /// Degradation seed; derived from the config seed when omitted.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the confusion matrix as CSV here.
        #[arg(long)]
        dump_cm: Option<PathBuf>,
        /// Also write the metrics line to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Intrinsic-dimensionality table across representation stages.
    Id {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt_embed: Option<PathBuf>,
        #[arg(long)]
        ckpt_diff: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated benchmark labels.
        #[arg(long, default_value = "C-3-3,C-5-1,C-7,C-9")]
        cases: String,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV destination; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write latents as CSV for external visualization.
    Export {
        #[arg(long)]
        latents: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_weights(text: &str) -> Result<[f64; K]> {
    let w = text
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Validation(format!("bad --weights `{text}`: {e}")))?;
    w.try_into()
        .map_err(|w: Vec<f64>| Error::Validation(format!("--weights needs {K} values, got {}", w.len())).into())
}

fn load_config(path: Option<&Path>, manifest: &mut RunManifest) -> Result<RunConfig> {
    let cfg = match path {
        Some(p) => {
            manifest.input(p);
            RunConfig::load(p).with_context(|| format!("config {}", p.display()))?
        }
        None => RunConfig::default(),
    };
    manifest.config(&cfg);
    manifest.seed("run", cfg.seed);
    Ok(cfg)
}

fn labeled_cube(path: &Path, manifest: &mut RunManifest) -> Result<(HsiCube, LabelMap)> {
    manifest.input(path);
    let (cube, labels) = read_cube(path).with_context(|| format!("cube {}", path.display()))?;
    match labels {
        Some(l) => Ok((cube, l)),
        None => Err(Error::Validation(format!("{} carries no label block", path.display())).into()),
    }
}

fn require<'a>(path: Option<&'a PathBuf>, stage: &'static str, missing: &'static str) -> Result<&'a PathBuf> {
    path.ok_or_else(|| Error::StageOrder { stage, missing }.into())
}

fn load_embed(path: &Path, manifest: &mut RunManifest) -> Result<EmbedModel> {
    manifest.input(path);
    let store = checkpoint::load(path).with_context(|| format!("embed checkpoint {}", path.display()))?;
    Ok(EmbedModel::from_store(&store)?)
}

fn load_head(path: &Path, manifest: &mut RunManifest) -> Result<DiffusionHead> {
    manifest.input(path);
    let store = checkpoint::load(path).with_context(|| format!("diffusion checkpoint {}", path.display()))?;
    Ok(DiffusionHead::from_store(&store)?)
}

fn load_classifier(path: &Path, manifest: &mut RunManifest) -> Result<Classifier> {
    manifest.input(path);
    let store = checkpoint::load(path).with_context(|| format!("classifier checkpoint {}", path.display()))?;
    Ok(Classifier::from_store(&store)?)
}

fn finish(manifest: &mut RunManifest, out: &Path) -> Result<()> {
    manifest.output(out);
    manifest.write_for(out)?;
    Ok(())
}

/// Checkpoints needed for a feature kind, enforcing the stage order.
struct Upstream {
    embed: Option<EmbedModel>,
    head: Option<DiffusionHead>,
}

impl Upstream {
    fn load(
        kind: FeatureKind,
        embed: Option<&PathBuf>,
        diff: Option<&PathBuf>,
        stage: &'static str,
        manifest: &mut RunManifest,
    ) -> Result<Self> {
        let embed = match kind {
            FeatureKind::Spectra => None,
            _ => Some(load_embed(require(embed, stage, "train-embed")?, manifest)?),
        };
        let head = match kind {
            FeatureKind::Refined => Some(load_head(require(diff, stage, "train-diffusion")?, manifest)?),
            _ => None,
        };
        Ok(Self { embed, head })
    }

    fn features(&self, t_star: f64) -> Features<'_> {
        match (&self.embed, &self.head) {
            (Some(e), Some(h)) => Features::Refined(e, h, t_star),
            (Some(e), None) => Features::Manifold(e),
            _ => Features::Spectra,
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            out,
            height,
            width,
            bands,
            classes,
            seed,
        } => {
            let mut m = RunManifest::new("synth");
            m.seed("synth", seed);
            let (cube, labels) = SynthSpec::new(height, width, bands, classes, seed).generate()?;
            write_cube(&cube, Some(&labels), &out)?;
            m.mark("synth");
            finish(&mut m, &out)?;
            println!("wrote {} ({height}x{width}x{bands}, {classes} classes)", out.display());
        }
        Command::Degrade {
            input,
            out,
            case,
            kind,
            intensity,
            weights,
            rho,
            random,
            seed,
            stats,
        } => {
            let mut m = RunManifest::new("degrade");
            m.input(&input);
            m.seed("degrade", seed);
            let (cube, labels) = read_cube(&input)?;
            let params = DegradationParams::default();
            let degraded = match (case, kind, weights) {
                (Some(c), _, _) => benchmark_case(&c)?.apply(&cube, seed, &params)?,
                (None, Some(k), _) => {
                    let kind: DegradationKind = k.parse()?;
                    apply_kind(kind, &cube, intensity.unwrap_or(0.0), seed, &params)?
                }
                (None, None, Some(w)) => {
                    let spec = DegradationSpec::new(parse_weights(&w)?, rho.unwrap_or(0.0), seed)?;
                    apply_composite(&cube, &spec, &params)?
                }
                (None, None, None) if random => apply_composite(&cube, &DegradationSpec::random(1.0, seed), &params)?,
                (None, None, None) => bail!(Error::Validation(
                    "one of --case, --kind, --weights or --random is required".into()
                )),
            };
            if stats {
                let st = degradation_stats(&cube, &degraded)?;
                for (b, mse) in st.band_mse.iter().enumerate() {
                    println!("band={b} mse={mse:.6e}");
                }
                println!("changed_fraction={:.6}", st.changed_fraction);
            }
            write_cube(&degraded, labels.as_ref(), &out)?;
            m.mark("degrade");
            finish(&mut m, &out)?;
            println!("wrote {}", out.display());
        }
        Command::TrainEmbed { data, config, out } => {
            let mut m = RunManifest::new("train-embed");
            let cfg = load_config(config.as_deref(), &mut m)?;
            let (cube, labels) = labeled_cube(&data, &mut m)?;
            let ds = Dataset::new(cube, labels, &cfg)?;
            let (model, history) = train_embed_stage(&ds, &cfg)?;
            m.mark("train-embed");
            checkpoint::save(&model.to_store(), &out)?;
            for (i, e) in history.iter().enumerate() {
                println!("epoch={} loss={:.6} rec={:.6} cls={:.6}", i + 1, e.loss, e.rec, e.cls);
            }
            finish(&mut m, &out)?;
        }
        Command::ExtractLatents {
            data,
            ckpt_embed,
            ckpt_diff,
            config,
            split,
            case,
            out,
        } => {
            let mut m = RunManifest::new("extract-latents");
            let cfg = load_config(config.as_deref(), &mut m)?;
            let kind = if ckpt_diff.is_some() {
                FeatureKind::Refined
            } else {
                FeatureKind::Manifold
            };
            let up = Upstream::load(kind, ckpt_embed.as_ref(), ckpt_diff.as_ref(), "extract-latents", &mut m)?;
            let (cube, labels) = labeled_cube(&data, &mut m)?;
            let ds = Dataset::new(cube, labels, &cfg)?;
            let coords = match split {
                SplitPart::Train => ds.split.train.clone(),
                SplitPart::Val => ds.split.val.clone(),
                SplitPart::Test => ds.split.test.clone(),
                SplitPart::All => ds.labels.labeled(),
            };
            let source = match case {
                Some(c) => {
                    let s = eval_seed(&cfg);
                    m.seed("degrade", s);
                    benchmark_case(&c)?.apply(&ds.cube, s, &DegradationParams::default())?
                }
                None => ds.cube.clone(),
            };
            let features = up.features(cfg.t_star);
            let patches = extract_patches(&source, &ds.labels, &coords, features.patch_size())?;
            let latents = features.extract(&patches)?;
            write_latents(&latents, &out)?;
            m.mark("extract");
            finish(&mut m, &out)?;
            println!("wrote {} latents of width {} to {}", latents.len(), latents.dim(), out.display());
        }
        Command::TrainDiffusion {
            latents,
            ckpt_embed,
            config,
            out,
        } => {
            let mut m = RunManifest::new("train-diffusion");
            let cfg = load_config(config.as_deref(), &mut m)?;
            let embed = load_embed(require(ckpt_embed.as_ref(), "train-diffusion", "train-embed")?, &mut m)?;
            m.input(&latents);
            let lat = read_latents(&latents)?;
            if lat.dim() != embed.config.embed_dim || cfg.embed_dim != embed.config.embed_dim {
                bail!(Error::Validation(format!(
                    "latent width {}, config embed_dim {} and checkpoint embed_dim {} must agree",
                    lat.dim(),
                    cfg.embed_dim,
                    embed.config.embed_dim
                )));
            }
            let (head, history) = train_diffusion_stage(&lat, &cfg)?;
            m.mark("train-diffusion");
            checkpoint::save(&head.to_store(), &out)?;
            for (i, e) in history.iter().enumerate() {
                println!("epoch={} loss={:.6} noise={:.6} clean={:.6}", i + 1, e.loss, e.noise, e.clean);
            }
            finish(&mut m, &out)?;
        }
        Command::TrainClassifier {
            data,
            ckpt_embed,
            ckpt_diff,
            config,
            features,
            out,
        } => {
            let mut m = RunManifest::new("train-classifier");
            let cfg = load_config(config.as_deref(), &mut m)?;
            let up = Upstream::load(features, ckpt_embed.as_ref(), ckpt_diff.as_ref(), "train-classifier", &mut m)?;
            let (cube, labels) = labeled_cube(&data, &mut m)?;
            let ds = Dataset::new(cube, labels, &cfg)?;
            let patches = augmented_patches(&ds, &cfg)?;
            let feats: Latents = up.features(cfg.t_star).extract(&patches)?;
            let mut clf = Classifier::init(feats.dim(), ds.n_classes(), cfg.init_seed(3))?;
            let history = train_classifier(&mut clf, &feats, &cfg.classifier_settings())?;
            m.mark("train-classifier");
            checkpoint::save(&clf.to_store(), &out)?;
            for (i, loss) in history.iter().enumerate() {
                println!("epoch={} loss={loss:.6}", i + 1);
            }
            finish(&mut m, &out)?;
        }
        Command::Evaluate {
            data,
            ckpt_embed,
            ckpt_diff,
            ckpt_clf,
            config,
            features,
            case,
            seed,
            dump_cm,
            out,
        } => {
            let mut m = RunManifest::new("evaluate");
            let cfg = load_config(config.as_deref(), &mut m)?;
            let up = Upstream::load(features, ckpt_embed.as_ref(), ckpt_diff.as_ref(), "evaluate", &mut m)?;
            let clf = load_classifier(require(ckpt_clf.as_ref(), "evaluate", "train-classifier")?, &mut m)?;
            let (cube, labels) = labeled_cube(&data, &mut m)?;
            let ds = Dataset::new(cube, labels, &cfg)?;
            let bench = match case.as_str() {
                "none" => None,
                label => Some(benchmark_case(label)?),
            };
            let seed = seed.unwrap_or_else(|| eval_seed(&cfg));
            m.seed("degrade", seed);
            let (report, cm) = evaluate(
                &ds.cube,
                &ds.labels,
                &ds.split.test,
                up.features(cfg.t_star),
                &clf,
                bench.as_ref(),
                seed,
            )?;
            m.mark("evaluate");
            println!("{:>6} {:>8}", "class", "recall");
            for (i, r) in report.recalls.iter().enumerate() {
                match r {
                    Some(r) => println!("{:>6} {:>8.4}", i + 1, r),
                    None => println!("{:>6} {:>8}", i + 1, "-"),
                }
            }
            let line = report.line(&case);
            println!("{line}");
            if let Some(p) = &dump_cm {
                fs::write(p, cm.to_csv())?;
                m.output(p);
            }
            if let Some(p) = &out {
                fs::write(p, format!("{line}\n"))?;
                finish(&mut m, p)?;
            } else if let Some(p) = &dump_cm {
                m.write_for(p)?;
            }
        }
        Command::Id {
            data,
            ckpt_embed,
            ckpt_diff,
            config,
            cases,
            n,
            seed,
            out,
        } => {
            let mut m = RunManifest::new("id");
            let cfg = load_config(config.as_deref(), &mut m)?;
            m.seed("id", seed);
            let up = Upstream::load(FeatureKind::Refined, ckpt_embed.as_ref(), ckpt_diff.as_ref(), "id", &mut m)?;
            let (cube, labels) = labeled_cube(&data, &mut m)?;
            let ds = Dataset::new(cube, labels, &cfg)?;
            let cases = cases
                .split(',')
                .map(|c| benchmark_case(c.trim()))
                .collect::<msdiff::Result<Vec<_>>>()?;
            let (embed, head) = (up.embed.as_ref().unwrap(), up.head.as_ref().unwrap());
            let rows = id_report(&ds.cube, &ds.labels, &ds.split.test, embed, head, cfg.t_star, &cases, n, seed)?;
            m.mark("id");
            let csv = id_table_csv(&rows);
            match &out {
                Some(p) => {
                    fs::write(p, &csv)?;
                    finish(&mut m, p)?;
                }
                None => print!("{csv}"),
            }
        }
        Command::Export { latents, out } => {
            let mut m = RunManifest::new("export");
            m.input(&latents);
            let lat = read_latents(&latents)?;
            export_embeddings(&lat, &out)?;
            m.mark("export");
            finish(&mut m, &out)?;
            println!("wrote {} rows to {}", lat.len(), out.display());
        }
    }
    Ok(())
}

fn error_kind(err: &anyhow::Error) -> String {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Shape { .. }) => "shape".into(),
        Some(Error::Validation(_)) => "validation".into(),
        Some(Error::Format { offset, .. }) => format!("format offset={offset}"),
        Some(Error::NonFinite(_)) => "non-finite".into(),
        Some(Error::StageOrder { stage, missing }) => format!("stage-order stage={stage} missing={missing}"),
        Some(Error::Io(_)) => "io".into(),
        None if err.chain().any(|e| e.is::<std::io::Error>()) => "io".into(),
        None => "other".into(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = format!("{e:#}").replace(['\n', '"'], " ");
            eprintln!("error kind={} message=\"{message}\"", error_kind(&e));
            ExitCode::FAILURE
        }
    }
}
