//! Command-line front end. `dispatch` parses arguments, runs one subcommand
//! and maps the outcome to an exit code: 0 success, 1 validation or runtime
//! failure, 2 usage error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use super::config::ServiceConfig;
use super::http::{serve, ApiSession};
use crate::codec::{encode_batch, train, ModelSnapshot, TrainingHyperparams};
use crate::decolour::DecolourMode;
use crate::embedding::{read_embeddings, write_embeddings, EmbeddingRecord};
use crate::error::{Error, Result};
use crate::image::{load_image, save_image};
use crate::latent::{mean_embedding, EmbeddingSet, SamplerKind};
use crate::manifest::{load_all, load_manifest, FileImageSource, Split};
use crate::pipelines::{
    augment_dataset, edit_entries, normalize_dataset, training_mean, transfer_colour, AugmentationConfig,
    NormalizationConfig,
};
use crate::postprocess::{PostConfig, PostSettings};
use crate::synthbench::{generate_corpus, run_downstream_benchmark, write_corpus, ClassifierConfig, SceneDomain};

#[derive(Debug, Parser)]
#[command(name = "scci", version, about = "Skin-colour embeddings: train, encode, transfer, edit, augment, normalize")]
pub struct Cli {
    /// TOML config file; defaults to the file named by SCCI_CONFIG.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a codec on the images of a manifest.
    Train(TrainArgs),
    /// Encode one image or every image of a manifest.
    Encode(EncodeArgs),
    /// Re-colour a structure image with the colour of another image.
    Transfer(TransferArgs),
    /// Overwrite embedding entries of an image and re-synthesize.
    Edit(EditArgs),
    /// Re-colour a labelled source dataset with embeddings from a target set.
    Augment(AugmentArgs),
    /// Re-colour every image of a dataset with one embedding.
    Normalize(NormalizeArgs),
    /// Synthetic corpora and the downstream benchmark.
    Synthbench(SynthbenchArgs),
    /// Serve the HTTP API for one model.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct PostArgs {
    /// Skip the rejection-weight correction.
    #[arg(long)]
    pub no_post: bool,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Exponent p of the rejection curve h(d) = d^p.
    #[arg(long)]
    pub h_exponent: Option<f64>,
}

impl PostArgs {
    fn resolve(&self, cfg: &ServiceConfig) -> PostConfig {
        PostConfig {
            tau: self.tau.unwrap_or(cfg.post.tau),
            h_exponent: self.h_exponent.unwrap_or(cfg.post.h_exponent),
            enabled: cfg.post.enabled && !self.no_post,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub lambda_bpp: Option<f64>,
    #[arg(long)]
    pub lambda_diver: Option<f64>,
    #[arg(long)]
    pub lambda_color: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Train on fixed BT.601 greyscale instead of randomized decolourization.
    #[arg(long)]
    pub naive_decolour: bool,
    /// Write the per-epoch loss report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("input").required(true).args(["image", "manifest"])))]
pub struct EncodeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Embeddings JSONL (one `{id, values}` record per image).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub structure: PathBuf,
    #[arg(long)]
    pub colour: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub post: PostArgs,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// `INDEX=VALUE`, repeatable.
    #[arg(long = "set", value_parser = parse_edit)]
    pub edits: Vec<(usize, f64)>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub post: PostArgs,
}

fn parse_edit(s: &str) -> std::result::Result<(usize, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected INDEX=VALUE, got {s:?}"))?;
    let k = k.trim().parse().map_err(|e| format!("bad index {k:?}: {e}"))?;
    let v = v.trim().parse().map_err(|e| format!("bad value {v:?}: {e}"))?;
    Ok((k, v))
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SamplerArg {
    Reuse,
    IndependentMarginal,
}

impl From<SamplerArg> for SamplerKind {
    fn from(s: SamplerArg) -> Self {
        match s {
            SamplerArg::Reuse => SamplerKind::Reuse,
            SamplerArg::IndependentMarginal => SamplerKind::IndependentMarginal,
        }
    }
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Labelled source manifest.
    #[arg(long)]
    pub source: PathBuf,
    /// Target embeddings JSONL, as written by `encode --manifest`.
    #[arg(long)]
    pub targets: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = SamplerArg::Reuse)]
    pub sampler: SamplerArg,
    /// Also copy the source images into the output manifest.
    #[arg(long)]
    pub union_with_source: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[command(flatten)]
    pub post: PostArgs,
}

#[derive(Debug, Args)]
pub struct NormalizeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Embeddings JSONL whose mean is the normalization target; defaults to
    /// the model's training mean.
    #[arg(long)]
    pub mean_of: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[command(flatten)]
    pub post: PostArgs,
}

#[derive(Debug, Args)]
pub struct SynthbenchArgs {
    #[command(subcommand)]
    pub command: SynthbenchCommand,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DomainArg {
    Light,
    Dark,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Subcommand)]
pub enum SynthbenchCommand {
    /// Write a synthetic corpus with ground-truth scene descriptions.
    Corpus {
        #[arg(long, value_enum)]
        domain: DomainArg,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long, value_enum, default_value_t = SplitArg::Train)]
        split: SplitArg,
        /// Entry id prefix; defaults to the domain name.
        #[arg(long)]
        prefix: Option<String>,
    },
    /// Train a classifier per seed on one manifest and report accuracy on another.
    Benchmark {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Write the report as JSON instead of printing it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub addr: Option<SocketAddr>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code. Errors go to standard error.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn load_config(explicit: Option<&Path>) -> Result<ServiceConfig> {
    match explicit {
        Some(p) => ServiceConfig::load(p),
        None => ServiceConfig::from_env(),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Train(a) => run_train(a, &cfg),
        Command::Encode(a) => run_encode(a),
        Command::Transfer(a) => {
            let model = ModelSnapshot::load(&a.model)?;
            let settings = PostSettings::from_config(&a.post.resolve(&cfg))?;
            let out = transfer_colour(
                &model,
                &load_image(&a.structure)?,
                &load_image(&a.colour)?,
                &settings,
                a.seed.unwrap_or(cfg.seed),
            )?;
            save_image(&out, &a.out)
        }
        Command::Edit(a) => {
            let model = ModelSnapshot::load(&a.model)?;
            let settings = PostSettings::from_config(&a.post.resolve(&cfg))?;
            let edits: BTreeMap<usize, f64> = a.edits.iter().copied().collect();
            let out = edit_entries(&model, &load_image(&a.image)?, &edits, &settings, a.seed.unwrap_or(cfg.seed))?;
            save_image(&out, &a.out)
        }
        Command::Augment(a) => {
            let model = ModelSnapshot::load(&a.model)?;
            let source = load_manifest(&a.source)?;
            let target = EmbeddingSet::from_records(read_embeddings(&a.targets)?);
            let aug = AugmentationConfig {
                samples_per_image: a.k,
                sampler: a.sampler.into(),
                seed: a.seed.unwrap_or(cfg.seed),
                post: a.post.resolve(&cfg),
                epsilon: a.epsilon,
                union_with_source: a.union_with_source,
            };
            let m = augment_dataset(&model, &source, &FileImageSource::for_manifest(&a.source), &target, &aug, &a.out)?;
            log::info!("wrote {} entries to {}", m.len(), a.out.display());
            Ok(())
        }
        Command::Normalize(a) => {
            let model = ModelSnapshot::load(&a.model)?;
            let data = load_manifest(&a.data)?;
            let e_bar = match &a.mean_of {
                Some(p) => mean_embedding(&EmbeddingSet::from_records(read_embeddings(p)?))?,
                None => training_mean(&model)?,
            };
            let norm = NormalizationConfig { seed: a.seed.unwrap_or(cfg.seed), post: a.post.resolve(&cfg), epsilon: a.epsilon };
            let m = normalize_dataset(&model, &data, &FileImageSource::for_manifest(&a.data), &e_bar, &norm, &a.out)?;
            log::info!("wrote {} entries to {}", m.len(), a.out.display());
            Ok(())
        }
        Command::Synthbench(a) => run_synthbench(a.command, &cfg),
        Command::Serve(a) => {
            let model = Arc::new(ModelSnapshot::load(&a.model)?);
            let mut cfg = cfg;
            if let Some(seed) = a.seed {
                cfg.seed = seed;
            }
            let addr = match a.addr {
                Some(addr) => addr,
                None => cfg.addr.parse().map_err(|e| Error::Validation(format!("addr {:?}: {e}", cfg.addr)))?,
            };
            let session = Arc::new(ApiSession::new(model, cfg)?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(session, addr))
        }
    }
}

fn run_train(a: TrainArgs, cfg: &ServiceConfig) -> Result<()> {
    let defaults = TrainingHyperparams::default();
    let epsilon = a.epsilon.unwrap_or(cfg.epsilon);
    let hp = TrainingHyperparams {
        lambda_bpp_g: a.lambda_bpp.unwrap_or(defaults.lambda_bpp_g),
        lambda_diver: a.lambda_diver.unwrap_or(defaults.lambda_diver),
        lambda_color: a.lambda_color.unwrap_or(defaults.lambda_color),
        epochs: a.epochs.unwrap_or(defaults.epochs),
        learning_rate: a.learning_rate.unwrap_or(defaults.learning_rate),
        batch_size: a.batch_size.unwrap_or(defaults.batch_size),
        resolution: a.resolution.unwrap_or(cfg.resolution),
        seed: a.seed.unwrap_or(cfg.seed),
        decolour: if a.naive_decolour { DecolourMode::NaiveGreyscale } else { DecolourMode::Randomized { epsilon } },
        architecture: defaults.architecture,
    };
    let manifest = load_manifest(&a.manifest)?;
    let (model, report) = train(&manifest, &FileImageSource::for_manifest(&a.manifest), &hp)?;
    model.save(&a.out)?;
    if let Some(path) = &a.report {
        std::fs::write(path, serde_json::to_vec_pretty(&report)?)?;
    }
    Ok(())
}

fn run_encode(a: EncodeArgs) -> Result<()> {
    let model = ModelSnapshot::load(&a.model)?;
    let (ids, images) = match (&a.image, &a.manifest) {
        (Some(p), None) => {
            let id = p.file_stem().map_or_else(|| "image".to_string(), |s| s.to_string_lossy().into_owned());
            (vec![id], vec![load_image(p)?])
        }
        (None, Some(m)) => {
            let manifest = load_manifest(m)?;
            let images = load_all(&FileImageSource::for_manifest(m), &manifest, model.resolution())?;
            (manifest.entries().iter().map(|e| e.id.clone()).collect(), images)
        }
        _ => return Err(Error::argument("give exactly one of --image or --manifest")),
    };
    let records: Vec<EmbeddingRecord> = ids
        .into_iter()
        .zip(encode_batch(&model, &images)?)
        .map(|(id, values)| EmbeddingRecord { id, values })
        .collect();
    write_embeddings(&a.out, &records)
}

fn run_synthbench(cmd: SynthbenchCommand, cfg: &ServiceConfig) -> Result<()> {
    match cmd {
        SynthbenchCommand::Corpus { domain, n, out, seed, resolution, split, prefix } => {
            let domain = match domain {
                DomainArg::Light => SceneDomain::light(),
                DomainArg::Dark => SceneDomain::dark(),
            };
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            let prefix = prefix.unwrap_or_else(|| domain.name.clone());
            let (manifest, renders) =
                generate_corpus(n, &domain, seed.unwrap_or(cfg.seed), resolution.unwrap_or(cfg.resolution), &prefix, split)?;
            write_corpus(&out, &manifest, &renders)
        }
        SynthbenchCommand::Benchmark { train, test, seeds, epochs, out } => {
            let (train_m, test_m) = (load_manifest(&train)?, load_manifest(&test)?);
            let defaults = ClassifierConfig::default();
            let cc = ClassifierConfig { epochs: epochs.unwrap_or(defaults.epochs), ..defaults };
            let report = run_downstream_benchmark(
                &train_m,
                &FileImageSource::for_manifest(&train),
                &test_m,
                &FileImageSource::for_manifest(&test),
                &seeds,
                &cc,
            )?;
            let json = serde_json::to_string_pretty(&report)?;
            match out {
                Some(p) => std::fs::write(p, json)?,
                None => println!("{json}"),
            }
            Ok(())
        }
    }
}
