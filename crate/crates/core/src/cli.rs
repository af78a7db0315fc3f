//! The `ksae` command line.
//!
//! Settings resolve as defaults, then `--config` file, then flags. Every
//! command that is given `--out` writes its resolved settings there as
//! `resolved_config.txt`. Exit codes: 0 success, 2 bad input, 1 failure.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::analysis::{
    gallery_manifest, parse_manifest, pca_feature_map, sigma_label, top_activating, write_manifest, write_pfm,
    write_preview_png, AnalysisError, LatentProfile, PurityConfig, RankingRule, StdKind,
};
use crate::kv::{KvDoc, KvError};
use crate::model::ModelError;
use crate::real::{Precision, Real};
use crate::store::{
    synth_generate, write_shard, PromptMode, RowSource, ShardError, ShardMeta, ShardReader, ShardRow, ShardWriter,
    SynthSpec,
};
use crate::train::{
    bench, checkpoint_precision, dead_latent_report, train, BenchConfig, Checkpoint, CheckpointError, TrainConfig,
    TrainError, TrainOptions, CHECKPOINT_FILE,
};

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.txt";

/// Bad arguments or inputs; exits with code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Parser)]
#[command(name = "ksae", version, about = "k-sparse autoencoders over activation shards")]
struct Cli {
    /// key=value settings file; flags override it.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labeled shard from a random sparse dictionary.
    Synth(SynthArgs),
    /// Train a k-SAE on shards.
    Train(TrainArgs),
    /// Label purity (sigma_label) of top-activating samples.
    Purity(PurityArgs),
    /// Top-activating samples per latent, as a manifest.
    Tops(TopsArgs),
    /// Principal-component maps of spatial shards.
    Pca(PcaArgs),
    /// Gallery manifest, optionally with copied images.
    Gallery(GalleryArgs),
    /// Training throughput on random data.
    Bench(BenchArgs),
    /// Print shard metadata.
    Info(InfoArgs),
    /// Pack a raw f32 tensor dump into a shard.
    Convert(ConvertArgs),
}

#[derive(Debug, Args)]
#[command(rename_all = "snake_case")]
struct SynthArgs {
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    n_true: Option<usize>,
    #[arg(long)]
    k_true: Option<usize>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,
}

#[derive(Debug, Args)]
#[command(rename_all = "snake_case")]
struct TrainArgs {
    /// Input shard files.
    #[arg(long, required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    /// Resume from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Progress log interval in steps (0 = off).
    #[arg(long, default_value_t = 100)]
    log_every: u64,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    warmup_steps: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    expansion_factor: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    shuffle_buffer: Option<usize>,
    #[arg(long)]
    dead_window: Option<u64>,
    #[arg(long)]
    loss_norm: Option<String>,
    #[arg(long)]
    precision: Option<String>,
    #[arg(long)]
    adam_beta1: Option<f64>,
    #[arg(long)]
    adam_beta2: Option<f64>,
    #[arg(long)]
    adam_eps: Option<f64>,
}

#[derive(Debug, Args)]
#[command(rename_all = "snake_case")]
struct ProfileSource {
    /// Trained checkpoint; used with --data.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Shard files to profile.
    #[arg(long, num_args = 1..)]
    data: Vec<PathBuf>,
    /// Precomputed profiles (a tops/gallery manifest) instead of
    /// --checkpoint/--data.
    #[arg(long)]
    profiles: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(rename_all = "snake_case")]
struct PurityArgs {
    #[command(flatten)]
    source: ProfileSource,
    #[arg(long)]
    top_latents: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    /// population | sample
    #[arg(long)]
    std_kind: Option<String>,
    /// by_peak | by_mean | by_fire_count
    #[arg(long)]
    ranking_rule: Option<String>,
}

#[derive(Debug, Args)]
#[command(rename_all = "snake_case")]
struct TopsArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    #[arg(long)]
    m: Option<usize>,
}

#[derive(Debug, Args)]
#[command(rename_all = "snake_case")]
struct GalleryArgs {
    #[command(flatten)]
    source: ProfileSource,
    #[arg(long)]
    m: Option<usize>,
    /// Keep only this many latents, ranked by peak activation.
    #[arg(long)]
    top_latents: Option<usize>,
    /// Directory holding `<sample_id>[.png|.jpg|...]` images to copy.
    #[arg(long)]
    image_root: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(rename_all = "snake_case")]
struct PcaArgs {
    #[arg(long, required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    #[arg(long)]
    n_components: Option<usize>,
}

#[derive(Debug, Args)]
#[command(rename_all = "snake_case")]
struct BenchArgs {
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
}

#[derive(Debug, Args)]
#[command(rename_all = "snake_case")]
struct InfoArgs {
    #[arg(required = true)]
    shards: Vec<PathBuf>,
}

#[derive(Debug, Args)]
#[command(rename_all = "snake_case")]
struct ConvertArgs {
    /// Raw little-endian f32 file: rows back to back, each `d` values
    /// (pooled) or `d*H*W` values channel-major (spatial).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    d: Option<usize>,
    /// `HxW` for unpooled maps.
    #[arg(long)]
    spatial_shape: Option<String>,
    /// One sample id per line (default `row<i>`).
    #[arg(long)]
    ids: Option<PathBuf>,
    /// One integer label per line (default -1).
    #[arg(long)]
    labels: Option<PathBuf>,
    /// One class name per line, line i naming label i.
    #[arg(long)]
    label_names: Option<PathBuf>,
    #[arg(long)]
    model_id: Option<String>,
    #[arg(long)]
    layer_id: Option<String>,
    #[arg(long)]
    timestep: Option<u32>,
    #[arg(long)]
    prompt_mode: Option<String>,
    #[arg(long)]
    dataset_id: Option<String>,
    /// Output file name inside --out (default: input stem + `.acts`).
    #[arg(long)]
    name: Option<String>,
}

/// Flag values layered over a config file over defaults.
struct Resolver {
    file: KvDoc,
    resolved: KvDoc,
}

impl Resolver {
    fn new(config: Option<&Path>, known: &[&str]) -> Result<Self> {
        let file = match config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                KvDoc::parse(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => KvDoc::new(),
        };
        for (key, _) in file.entries() {
            if !known.contains(&key) && !TrainConfig::KEYS.contains(&key) {
                return Err(KvError::Unknown(key.to_string())).context("config file");
            }
        }
        Ok(Self {
            file,
            resolved: KvDoc::new(),
        })
    }

    fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: std::str::FromStr + std::fmt::Display,
        T::Err: std::fmt::Display,
    {
        let value = match flag {
            Some(v) => v,
            None => self.file.parsed(key)?.unwrap_or(default),
        };
        self.resolved.set(key, &value)?;
        Ok(value)
    }

    fn record(&mut self, key: &str, value: impl std::fmt::Display) -> Result<()> {
        self.resolved.set(key, value)?;
        Ok(())
    }
}

fn out_dir(cli_out: &Option<PathBuf>, required: bool) -> Result<Option<PathBuf>> {
    match cli_out {
        Some(p) => {
            std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
            Ok(Some(p.clone()))
        }
        None if required => Err(usage("--out is required for this command")),
        None => Ok(None),
    }
}

fn echo_config(out: Option<&Path>, doc: &KvDoc) -> Result<()> {
    if let Some(dir) = out {
        std::fs::write(dir.join(RESOLVED_CONFIG_FILE), doc.to_string())?;
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<KvError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<ShardError>() {
            return if e.is_validation() { 2 } else { 1 };
        }
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            return if e.is_validation() { 2 } else { 1 };
        }
        if let Some(e) = cause.downcast_ref::<AnalysisError>() {
            return if e.is_validation() { 2 } else { 1 };
        }
        if let Some(e) = cause.downcast_ref::<CheckpointError>() {
            return if matches!(e, CheckpointError::Io(_)) { 1 } else { 2 };
        }
        if let Some(e) = cause.downcast_ref::<ModelError>() {
            return if matches!(e, ModelError::Dimension { .. } | ModelError::InvalidK { .. } | ModelError::InvalidDims(_)) {
                2
            } else {
                1
            };
        }
    }
    1
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return 1;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(cli, a),
        Command::Train(a) => cmd_train(cli, a),
        Command::Purity(a) => cmd_purity(cli, a),
        Command::Tops(a) => cmd_tops(cli, a),
        Command::Pca(a) => cmd_pca(cli, a),
        Command::Gallery(a) => cmd_gallery(cli, a),
        Command::Bench(a) => cmd_bench(cli, a),
        Command::Info(a) => cmd_info(a),
        Command::Convert(a) => cmd_convert(cli, a),
    }
}

pub const SYNTH_DATA_FILE: &str = "synth.acts";
pub const SYNTH_DICTIONARY_FILE: &str = "dictionary.acts";

fn cmd_synth(cli: &Cli, a: &SynthArgs) -> Result<()> {
    let out = out_dir(&cli.out, true)?.expect("required");
    let mut r = Resolver::new(cli.config.as_deref(), &["d", "n_true", "k_true", "rows", "noise_sigma"])?;
    let spec = SynthSpec::new(
        r.get("d", a.d, 32)?,
        r.get("n_true", a.n_true, 64)?,
        r.get("k_true", a.k_true, 4)?,
        r.get("rows", a.rows, 10_000)?,
        r.get("noise_sigma", a.noise_sigma, 0.01)?,
        r.get("seed", cli.seed, 0)?,
    );
    let data = synth_generate(&spec)?;
    let mut shard = data.shard;
    shard.meta.label_names = (0..spec.n_true).map(|j| format!("atom{j}")).collect();
    write_shard(&shard, out.join(SYNTH_DATA_FILE))?;
    write_shard(&data.dictionary.to_shard(), out.join(SYNTH_DICTIONARY_FILE))?;
    echo_config(Some(&out), &r.resolved)?;
    println!(
        "wrote {} rows (d={}) to {}",
        shard.len(),
        spec.d,
        out.join(SYNTH_DATA_FILE).display()
    );
    Ok(())
}

fn train_config(cli: &Cli, a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(p) = &cli.config {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
        cfg.apply_kv(&KvDoc::parse(&text)?)?;
    }
    let mut flags = KvDoc::new();
    macro_rules! flag {
        ($($name:ident),*) => {
            $(if let Some(v) = &a.$name {
                flags.set(stringify!($name), v)?;
            })*
        };
    }
    flag!(
        lr,
        warmup_steps,
        batch_size,
        max_steps,
        k,
        expansion_factor,
        checkpoint_every,
        shuffle_buffer,
        dead_window,
        loss_norm,
        precision,
        adam_beta1,
        adam_beta2,
        adam_eps
    );
    if let Some(seed) = cli.seed {
        flags.set("seed", seed)?;
    }
    cfg.apply_kv(&flags)?;
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let out = out_dir(&cli.out, true)?.expect("required");
    let cfg = train_config(cli, a)?;
    echo_config(Some(&out), &cfg.to_kv())?;
    let data = RowSource::Files(a.data.clone());
    let opts = TrainOptions {
        out_dir: Some(out.clone()),
        log_every: a.log_every,
    };
    match cfg.precision {
        Precision::F32 => train_with::<f32>(&cfg, &data, a.resume.as_deref(), &opts),
        Precision::F64 => train_with::<f64>(&cfg, &data, a.resume.as_deref(), &opts),
    }
}

fn train_with<T: Real>(cfg: &TrainConfig, data: &RowSource, resume: Option<&Path>, opts: &TrainOptions) -> Result<()> {
    let resume = resume
        .map(|p| Checkpoint::<T>::load(p).with_context(|| format!("loading {}", p.display())))
        .transpose()?;
    let outcome = train::<T>(cfg, data, resume, opts)?;
    let report = dead_latent_report(&outcome.metrics);
    let last = outcome.metrics.steps.last();
    println!(
        "step {} loss {} dead_fraction {} ({} of {} latents dead)",
        outcome.checkpoint.step,
        last.map_or(f64::NAN, |m| m.loss),
        report.fraction,
        report.dead.len(),
        outcome.checkpoint.params.n
    );
    Ok(())
}

fn profiles_with<T: Real>(ck: &Path, data: &RowSource, m: usize) -> Result<(Vec<LatentProfile>, Vec<String>)> {
    let ck = Checkpoint::<T>::load(ck).with_context(|| format!("loading {}", ck.display()))?;
    let profiles = top_activating(&ck.params, data, m)?;
    Ok((profiles, data.label_names()?))
}

fn compute_profiles(ck: &Path, data: &[PathBuf], m: usize) -> Result<(Vec<LatentProfile>, Vec<String>)> {
    if data.is_empty() {
        return Err(usage("--data is required with --checkpoint"));
    }
    let data = RowSource::Files(data.to_vec());
    match checkpoint_precision(ck).with_context(|| format!("reading {}", ck.display()))? {
        Precision::F32 => profiles_with::<f32>(ck, &data, m),
        Precision::F64 => profiles_with::<f64>(ck, &data, m),
    }
}

fn load_profiles(src: &ProfileSource, m: usize, r: &mut Resolver) -> Result<(Vec<LatentProfile>, Vec<String>)> {
    match (&src.profiles, &src.checkpoint) {
        (Some(p), None) => {
            r.record("profiles", p.display())?;
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let manifest = parse_manifest(&text)?;
            Ok((manifest.profiles, manifest.label_names))
        }
        (None, Some(ck)) => {
            r.record("checkpoint", ck.display())?;
            for d in &src.data {
                r.record("data", d.display()).ok();
            }
            compute_profiles(ck, &src.data, m)
        }
        _ => Err(usage("give exactly one of --profiles or --checkpoint (with --data)")),
    }
}

pub const PURITY_FILE: &str = "purity.txt";

fn cmd_purity(cli: &Cli, a: &PurityArgs) -> Result<()> {
    let out = out_dir(&cli.out, false)?;
    let mut r = Resolver::new(cli.config.as_deref(), &["top_latents", "m", "std_kind", "ranking_rule"])?;
    let defaults = PurityConfig::default();
    let parse_err = |e: String| usage(e);
    let cfg = PurityConfig {
        top_latents: r.get("top_latents", a.top_latents, defaults.top_latents)?,
        m: r.get("m", a.m, defaults.m)?,
        std_kind: r.get(
            "std_kind",
            a.std_kind.as_deref().map(str::parse::<StdKind>).transpose().map_err(parse_err)?,
            defaults.std_kind,
        )?,
        ranking: r.get(
            "ranking_rule",
            a.ranking_rule.as_deref().map(str::parse::<RankingRule>).transpose().map_err(parse_err)?,
            defaults.ranking,
        )?,
    };
    let (profiles, _) = load_profiles(&a.source, cfg.m, &mut r)?;
    let report = sigma_label(&profiles, &cfg)?;
    print!("{report}");
    if let Some(dir) = out.as_deref() {
        std::fs::write(dir.join(PURITY_FILE), report.to_string())?;
    }
    echo_config(out.as_deref(), &r.resolved)?;
    Ok(())
}

pub const TOPS_FILE: &str = "tops.txt";

fn cmd_tops(cli: &Cli, a: &TopsArgs) -> Result<()> {
    let out = out_dir(&cli.out, true)?.expect("required");
    let mut r = Resolver::new(cli.config.as_deref(), &["m"])?;
    let m = r.get("m", a.m, 10)?;
    r.record("checkpoint", a.checkpoint.display())?;
    let (profiles, labels) = compute_profiles(&a.checkpoint, &a.data, m)?;
    std::fs::write(out.join(TOPS_FILE), write_manifest(&profiles, &labels)?)?;
    echo_config(Some(&out), &r.resolved)?;
    println!(
        "{} latents profiled, {} fired at least once",
        profiles.len(),
        profiles.iter().filter(|p| p.fire_count > 0).count()
    );
    Ok(())
}

fn cmd_gallery(cli: &Cli, a: &GalleryArgs) -> Result<()> {
    let out = out_dir(&cli.out, true)?.expect("required");
    let mut r = Resolver::new(cli.config.as_deref(), &["m", "top_latents", "image_root"])?;
    let m = r.get("m", a.m, 10)?;
    let (mut profiles, labels) = load_profiles(&a.source, m, &mut r)?;
    for p in &mut profiles {
        p.top_samples.truncate(m);
    }
    if let Some(top) = a.top_latents.or(r.file.parsed("top_latents")?) {
        r.record("top_latents", top)?;
        profiles.retain(|p| !p.top_samples.is_empty());
        profiles.sort_by(|x, y| {
            y.peak_activation
                .total_cmp(&x.peak_activation)
                .then(x.latent_id.cmp(&y.latent_id))
        });
        profiles.truncate(top);
    }
    let image_root = a.image_root.clone().or(r.file.get("image_root").map(PathBuf::from));
    if let Some(root) = &image_root {
        r.record("image_root", root.display())?;
    }
    let res = gallery_manifest(&profiles, &labels, &out, image_root.as_deref())?;
    echo_config(Some(&out), &r.resolved)?;
    println!(
        "manifest {} ({} latents); {} images copied, {} missing",
        res.manifest.display(),
        profiles.len(),
        res.copied,
        res.missing.len()
    );
    Ok(())
}

pub const PCA_SUMMARY_FILE: &str = "pca.txt";
pub const PCA_MAPS_DIR: &str = "maps";

fn file_stem_for(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect()
}

fn cmd_pca(cli: &Cli, a: &PcaArgs) -> Result<()> {
    let out = out_dir(&cli.out, true)?.expect("required");
    let mut r = Resolver::new(cli.config.as_deref(), &["n_components"])?;
    let n_components = r.get("n_components", a.n_components, 3)?;
    let pm = pca_feature_map(&RowSource::Files(a.data.clone()), n_components)?;
    let maps_dir = out.join(PCA_MAPS_DIR);
    std::fs::create_dir_all(&maps_dir)?;
    for (i, map) in pm.maps.iter().enumerate() {
        let stem = format!("{i:05}_{}", file_stem_for(&map.sample_id));
        write_pfm(&maps_dir.join(format!("{stem}.pfm")), map)?;
        write_preview_png(&maps_dir.join(format!("{stem}.png")), map)?;
    }
    let mut summary = KvDoc::new();
    summary.push("points", pm.pca.points)?;
    summary.push("rank_deficient", pm.pca.rank_deficient)?;
    summary.push("total_variance", pm.pca.total_variance)?;
    for (i, (v, ratio)) in pm.pca.explained_variance.iter().zip(pm.pca.explained_ratio()).enumerate() {
        summary.push(format!("explained_variance.{i}"), v)?;
        summary.push(format!("explained_ratio.{i}"), ratio)?;
        summary.push(format!("range.{i}"), format!("{} {}", pm.ranges[i].0, pm.ranges[i].1))?;
    }
    std::fs::write(out.join(PCA_SUMMARY_FILE), summary.to_string())?;
    echo_config(Some(&out), &r.resolved)?;
    if pm.pca.rank_deficient {
        log::warn!(
            "covariance rank below {n_components}; {} components written",
            pm.pca.components.len()
        );
    }
    print!("{summary}");
    Ok(())
}

fn cmd_bench(cli: &Cli, a: &BenchArgs) -> Result<()> {
    let out = out_dir(&cli.out, false)?;
    let mut r = Resolver::new(cli.config.as_deref(), &["d", "n", "k", "steps", "warmup"])?;
    let def = BenchConfig::default();
    let cfg = BenchConfig {
        d: r.get("d", a.d, def.d)?,
        n: r.get("n", a.n, def.n)?,
        k: r.get("k", a.k, def.k)?,
        batch_size: r.get("batch_size", a.batch_size, def.batch_size)?,
        steps: r.get("steps", a.steps, def.steps)?,
        warmup: r.get("warmup", a.warmup, def.warmup)?,
        seed: r.get("seed", cli.seed, def.seed)?,
    };
    let report = bench(&cfg)?;
    println!("{report}");
    if let Some(dir) = out.as_deref() {
        std::fs::write(dir.join("bench.txt"), format!("{report}\n"))?;
    }
    echo_config(out.as_deref(), &r.resolved)?;
    Ok(())
}

/// One-line shape summary, e.g. `d=1280, spatial 32×32`.
pub fn shape_summary(meta: &ShardMeta) -> String {
    match meta.spatial_shape {
        Some((h, w)) => format!("d={}, spatial {h}×{w}", meta.feature_dim),
        None => format!("d={}, pooled", meta.feature_dim),
    }
}

fn cmd_info(a: &InfoArgs) -> Result<()> {
    for path in &a.shards {
        let reader = ShardReader::open(path).with_context(|| format!("opening {}", path.display()))?;
        let m = reader.meta();
        println!("{}", path.display());
        println!("  {}", shape_summary(m));
        println!("  rows={} dtype={}", m.row_count, m.dtype.as_str());
        println!(
            "  model_id={} layer_id={} timestep={} prompt_mode={} dataset_id={}",
            m.model_id,
            m.layer_id,
            m.timestep,
            m.prompt_mode.as_str(),
            m.dataset_id
        );
        println!("  labels={}", m.label_names.len());
        for (k, v) in &m.extra {
            println!("  {k}={v}");
        }
    }
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    BufReader::new(f)
        .lines()
        .map(|l| l.map(|s| s.trim_end_matches('\r').to_string()))
        .collect::<std::io::Result<_>>()
        .with_context(|| format!("reading {}", path.display()))
}

fn cmd_convert(cli: &Cli, a: &ConvertArgs) -> Result<()> {
    let out = out_dir(&cli.out, true)?.expect("required");
    let mut r = Resolver::new(
        cli.config.as_deref(),
        &["d", "spatial_shape", "model_id", "layer_id", "timestep", "prompt_mode", "dataset_id"],
    )?;
    let d: usize = match a.d.or(r.file.parsed("d")?) {
        Some(d) if d > 0 => d,
        _ => return Err(usage("--d must be a positive integer")),
    };
    r.record("d", d)?;
    let mut meta = ShardMeta::new(d);
    if let Some(s) = a.spatial_shape.clone().or(r.file.get("spatial_shape").map(str::to_string)) {
        let (h, w) = s
            .split_once('x')
            .and_then(|(h, w)| Some((h.parse().ok()?, w.parse().ok()?)))
            .ok_or_else(|| usage(format!("spatial_shape must be HxW, got {s:?}")))?;
        meta.spatial_shape = Some((h, w));
        r.record("spatial_shape", s)?;
    }
    meta.model_id = r.get("model_id", a.model_id.clone(), String::new())?;
    meta.layer_id = r.get("layer_id", a.layer_id.clone(), String::new())?;
    meta.timestep = r.get("timestep", a.timestep, 0)?;
    meta.prompt_mode = r.get(
        "prompt_mode",
        a.prompt_mode
            .as_deref()
            .map(str::parse::<PromptMode>)
            .transpose()
            .map_err(|e| usage(e.to_string()))?,
        PromptMode::Empty,
    )?;
    meta.dataset_id = r.get("dataset_id", a.dataset_id.clone(), String::new())?;
    if let Some(p) = &a.label_names {
        meta.label_names = read_lines(p)?;
    }

    let per_row = meta.values_per_row();
    let bytes = std::fs::metadata(&a.input)
        .with_context(|| format!("reading {}", a.input.display()))?
        .len();
    let row_bytes = 4 * per_row as u64;
    if bytes % row_bytes != 0 {
        bail!(UsageError(format!(
            "{} has {bytes} bytes, not a multiple of the {row_bytes}-byte row size",
            a.input.display()
        )));
    }
    let rows = (bytes / row_bytes) as usize;
    let ids = a.ids.as_deref().map(read_lines).transpose()?;
    let labels: Option<Vec<i32>> = a
        .labels
        .as_deref()
        .map(|p| -> Result<Vec<i32>> {
            read_lines(p)?
                .iter()
                .enumerate()
                .map(|(i, l)| {
                    l.trim()
                        .parse()
                        .map_err(|_| usage(format!("{} line {}: bad label {l:?}", p.display(), i + 1)))
                })
                .collect()
        })
        .transpose()?;
    for (what, len) in [("ids", ids.as_ref().map(Vec::len)), ("labels", labels.as_ref().map(Vec::len))] {
        if let Some(len) = len {
            if len != rows {
                bail!(UsageError(format!("{what} file has {len} lines for {rows} rows")));
            }
        }
    }
    meta.row_count = rows as u64;
    meta.validate()?;

    let name = match &a.name {
        Some(n) => n.clone(),
        None => format!(
            "{}.acts",
            a.input.file_stem().map_or("converted".into(), |s| s.to_string_lossy())
        ),
    };
    let path = out.join(&name);
    let mut input = BufReader::new(File::open(&a.input)?);
    let mut writer = ShardWriter::new(std::io::BufWriter::new(File::create(&path)?), meta.clone())?;
    let mut buf = vec![0u8; row_bytes as usize];
    for i in 0..rows {
        input.read_exact(&mut buf)?;
        let row = ShardRow {
            sample_id: ids.as_ref().map_or_else(|| format!("row{i}"), |v| v[i].clone()),
            label: labels.as_ref().map_or(-1, |v| v[i]),
            values: buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        };
        writer.write_row(&row)?;
    }
    use std::io::Write as _;
    writer.finish()?.flush()?;
    if !meta.label_names.is_empty() {
        crate::store::write_labels_sidecar(&crate::store::labels_sidecar_path(&path), &meta.label_names)?;
    }
    r.record("name", &name)?;
    echo_config(Some(&out), &r.resolved)?;
    println!("wrote {rows} rows ({}) to {}", shape_summary(&meta), path.display());
    Ok(())
}

/// Default checkpoint location inside an output directory.
pub fn checkpoint_path(out: &Path) -> PathBuf {
    out.join(CHECKPOINT_FILE)
}
