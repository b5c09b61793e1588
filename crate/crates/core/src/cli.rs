//! Command-line front end. Exit status: 0 on success, 1 on a runtime
//! failure, 2 on a usage or configuration error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bench::bench_uncertainty;
use crate::dataio::{generate_scene, read_cloud, read_labels, sidecar_path, split_blocks, write_cloud, write_labels, BlockSpec, SceneSpec};
use crate::error::{Error, Result};
use crate::experiment::{load_model, save_model, ExperimentConfig, ModelMeta, SyntheticData};
use crate::inference::{block_uncertainty, ranking_csv, Method, RANKING_PERCENTS};
use crate::metrics::{confusion, pr_curve_csv, segmentation_scores};
use crate::report::CsvTable;
use crate::training::{alpha_table_csv, alpha_sweep, evaluate, train, EvalBlock, TrainBlock};
use crate::types::{DropoutConfig, PointCloud};
use crate::uncertainty::Acquisition;
use crate::Backbone;

#[derive(Debug, Parser)]
#[command(name = "nsamc", version, about = "Uncertainty-aware point cloud segmentation")]
pub struct Cli {
    /// Overrides the seed of the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// `key=value` settings file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output path (or prefix for commands writing several files).
    #[arg(short = 'o', long = "output", global = true)]
    pub output: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled room; writes the cloud and a `.clean` label sidecar.
    Gen(GenArgs),
    /// Train a model on one or more clouds.
    Train(TrainArgs),
    /// Segmentation scores of a model on a labeled cloud.
    Eval(EvalArgs),
    /// Per-point uncertainty, precision-recall curve and ranking IoU.
    Uq(UqArgs),
    /// Time NSA against MC uncertainty estimation.
    Bench(BenchArgs),
    /// Final mIoU per alpha over several seeds on generated noisy rooms.
    SweepAlpha(SweepAlphaArgs),
    /// Ranking IoU per sample count and dropout placement.
    #[command(name = "sweep-T")]
    SweepT(SweepTArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub points: Option<usize>,
    /// Probability of flipping labels inside the boundary band.
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training clouds (`pcs` files).
    #[arg(long, required = true)]
    pub data: Vec<PathBuf>,
    /// Validation cloud; scored against its `.clean` sidecar when present.
    #[arg(long)]
    pub val: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Score against the `.clean` sidecar instead of the file labels.
    #[arg(long)]
    pub clean: bool,
}

#[derive(Debug, Args)]
pub struct UqArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub clean: bool,
    #[arg(long, default_value = "nsa")]
    pub method: Method,
    /// Samples per point; defaults to the model's neighbor count.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub acquisition: Option<Acquisition>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Trained model; a freshly initialized one is used otherwise.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 16384)]
    pub points: usize,
    #[arg(long, value_delimiter = ',', default_value = "5,10")]
    pub samples: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
}

#[derive(Debug, Args)]
pub struct SweepAlphaArgs {
    #[arg(long, value_delimiter = ',', default_value = "0,0.3,0.5,1,2")]
    pub alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Args)]
pub struct SweepTArgs {
    #[arg(long, value_delimiter = ',', default_value = "5,10,15,20")]
    pub samples: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "Con_1,Con_2,Con_3")]
    pub configs: Vec<DropoutConfig>,
}

/// Parses the process arguments, runs the command and returns the exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig(_) | Error::NonPositiveVoxelSize(_) => 2,
        _ => 1,
    }
}

fn config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output<'a>(cli: &'a Cli, name: &str) -> Result<&'a Path> {
    cli.output
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig(format!("{name} needs -o")))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn execute(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidConfig("--threads must be >= 1".into()));
        }
        // Fails only when the pool already exists, which keeps its size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let cfg = config(cli)?;
    match &cli.command {
        Command::Gen(a) => gen(cli, &cfg, a),
        Command::Train(a) => train_cmd(cli, &cfg, a),
        Command::Eval(a) => eval_cmd(cli, a),
        Command::Uq(a) => uq_cmd(cli, a),
        Command::Bench(a) => bench_cmd(cli, &cfg, a),
        Command::SweepAlpha(a) => sweep_alpha_cmd(cli, &cfg, a),
        Command::SweepT(a) => sweep_t_cmd(cli, &cfg, a),
    }
}

fn gen(cli: &Cli, cfg: &ExperimentConfig, a: &GenArgs) -> Result<()> {
    let out = output(cli, "gen")?;
    let spec = SceneSpec {
        seed: cli.seed.unwrap_or(cfg.scene.seed),
        points: a.points.unwrap_or(cfg.scene.points),
        boundary_noise_rate: a.noise.unwrap_or(cfg.scene.boundary_noise_rate),
        ..cfg.scene.clone()
    };
    let scene = generate_scene(&spec)?;
    write_cloud(&scene.cloud, out)?;
    write_labels(&scene.clean_labels, sidecar_path(out))?;
    let flipped = scene.flipped().iter().filter(|&&f| f).count();
    println!("wrote {} points ({} flipped labels) to {}", scene.cloud.len(), flipped, out.display());
    Ok(())
}

/// Labels to score a cloud against.
fn score_labels(path: &Path, cloud: &PointCloud, clean: bool) -> Result<Vec<usize>> {
    let side = sidecar_path(path);
    if clean || side.exists() && cloud.labels.is_none() {
        let labels = read_labels(&side)?;
        if labels.len() != cloud.len() {
            return Err(Error::LengthMismatch {
                left: cloud.len(),
                right: labels.len(),
            });
        }
        return Ok(labels);
    }
    Ok(cloud.labels()?.to_vec())
}

fn eval_blocks(path: &Path, spec: &BlockSpec, seed: u64, clean: bool) -> Result<Vec<EvalBlock>> {
    let cloud = read_cloud(path)?;
    let labels = score_labels(path, &cloud, clean)?;
    Ok(split_blocks(&cloud, spec, seed)?
        .into_iter()
        .map(|b| EvalBlock {
            labels: b.source.iter().map(|&i| labels[i]).collect(),
            cloud: b.cloud,
        })
        .collect())
}

fn train_cmd(cli: &Cli, cfg: &ExperimentConfig, a: &TrainArgs) -> Result<()> {
    let out = output(cli, "train")?;
    let mut blocks = Vec::new();
    for (k, path) in a.data.iter().enumerate() {
        let cloud = read_cloud(path)?;
        for b in split_blocks(&cloud, &cfg.blocks, cfg.run.seed + k as u64)? {
            blocks.push(TrainBlock::new(b.cloud, cfg.run.neighbor_count)?);
        }
    }
    let first = blocks.first().ok_or(Error::EmptyInput)?;
    let num_classes = first.cloud.num_classes;
    let backbone = Backbone::for_cloud(cfg.backbone_config(num_classes), &first.cloud)?;
    let val = match &a.val {
        Some(p) => eval_blocks(p, &cfg.blocks, cfg.run.seed, sidecar_path(p).exists())?,
        None => Vec::new(),
    };
    let loss = cfg.loss_config();
    let report = train(&backbone, backbone.init_params(cfg.run.seed), &blocks, &val, &cfg.run, &loss)?;
    let meta = ModelMeta {
        backbone: backbone.config.clone(),
        input_dim: backbone.input_dim,
        blocks: cfg.blocks.clone(),
        neighbor_count: cfg.run.neighbor_count,
        seed: cfg.run.seed,
        loss,
        voxel_size: cfg.voxel_size,
    };
    save_model(out, &report.params, &meta)?;
    report.to_csv().write(with_suffix(out, ".csv"))?;
    if let Some(last) = report.epochs.last() {
        print!("epoch {} loss {:.4}", last.epoch, last.loss);
        if let Some(s) = &last.scores {
            print!(" mIoU {:.2}", 100.0 * s.miou);
        }
        println!();
    }
    Ok(())
}

fn eval_cmd(cli: &Cli, a: &EvalArgs) -> Result<()> {
    let (backbone, params, meta) = load_model(&a.model)?;
    let blocks = eval_blocks(&a.data, &meta.blocks, meta.seed, a.clean)?;
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for b in &blocks {
        preds.extend(backbone.forward_deterministic(&params, &b.cloud)?.argmax());
        labels.extend_from_slice(&b.labels);
    }
    let conf = confusion(&preds, &labels, backbone.config.num_classes())?;
    let scores = segmentation_scores(&conf)?;
    debug_assert_eq!(scores, evaluate(&backbone, &params, &blocks)?);
    if let Some(out) = &cli.output {
        scores.to_csv().write(out)?;
        conf.to_csv().write(with_suffix(out, ".confusion.csv"))?;
    }
    println!(
        "OA {:.2} mAcc {:.2} mIoU {:.2}",
        100.0 * scores.oacc,
        100.0 * scores.macc,
        100.0 * scores.miou
    );
    Ok(())
}

fn uq_cmd(cli: &Cli, a: &UqArgs) -> Result<()> {
    let out = output(cli, "uq")?;
    let (backbone, params, meta) = load_model(&a.model)?;
    let blocks = eval_blocks(&a.data, &meta.blocks, meta.seed, a.clean)?;
    let t = a.samples.unwrap_or(meta.neighbor_count);
    let acquisition = a.acquisition.unwrap_or(meta.loss.acquisition);
    let seed = cli.seed.unwrap_or(meta.seed);
    let res = block_uncertainty(&backbone, &params, &blocks, a.method, t, acquisition, seed)?;
    res.map.to_csv().write(with_suffix(out, ".uncertainty.csv"))?;
    pr_curve_csv(&res.pr_curve()?).write(with_suffix(out, ".pr.csv"))?;
    let ious = res.ranking_iou(meta.voxel_size, &RANKING_PERCENTS)?;
    ranking_csv(&[(a.method.to_string(), t, ious.clone())], &RANKING_PERCENTS).write(with_suffix(out, ".ranking.csv"))?;
    let shown: Vec<String> = RANKING_PERCENTS
        .iter()
        .zip(&ious)
        .map(|(p, v)| format!("{p}%: {:.3}", v))
        .collect();
    println!("{} T={} ranking IoU {}", a.method, t, shown.join(", "));
    Ok(())
}

fn bench_cmd(cli: &Cli, cfg: &ExperimentConfig, a: &BenchArgs) -> Result<()> {
    let spec = SceneSpec {
        points: a.points,
        ..cfg.scene.clone()
    };
    let scene = generate_scene(&spec)?;
    // One block holding every point.
    let whole = BlockSpec {
        edge: 1e6,
        samples: a.points,
    };
    let block = split_blocks(&scene.cloud, &whole, spec.seed)?.remove(0).cloud;
    let (backbone, params) = match &a.model {
        Some(p) => {
            let (b, params, _) = load_model(p)?;
            (b, params)
        }
        None => {
            let b = Backbone::for_cloud(cfg.backbone_config(block.num_classes), &block)?;
            let params = b.init_params(cfg.run.seed);
            (b, params)
        }
    };
    let report = bench_uncertainty(&backbone, &params, &block, &a.samples, a.repeats, cfg.run.seed)?;
    if let Some(out) = &cli.output {
        report.to_csv().write(out)?;
    }
    print!("{}", report.to_csv());
    Ok(())
}

fn sweep_alpha_cmd(cli: &Cli, cfg: &ExperimentConfig, a: &SweepAlphaArgs) -> Result<()> {
    let data = SyntheticData::generate(cfg)?;
    let backbone = data.backbone(cfg)?;
    let rows = alpha_sweep(&backbone, &data.train, &data.test, &a.alphas, &a.seeds, &cfg.run, cfg.acquisition)?;
    let table = alpha_table_csv(&rows, &a.seeds);
    if let Some(out) = &cli.output {
        table.write(out)?;
    }
    for r in &rows {
        println!("alpha {} median mIoU {:.2}", r.alpha, 100.0 * r.median_miou);
    }
    Ok(())
}

fn sweep_t_cmd(cli: &Cli, cfg: &ExperimentConfig, a: &SweepTArgs) -> Result<()> {
    let data = SyntheticData::generate(cfg)?;
    let mut rows = Vec::new();
    for &dc in &a.configs {
        let mut c = cfg.clone();
        c.run.dropout_config = dc;
        let backbone = data.backbone(&c)?;
        let report = train(&backbone, backbone.init_params(c.run.seed), &data.train, &[], &c.run, &c.loss_config())?;
        for &t in &a.samples {
            let res = block_uncertainty(&backbone, &report.params, &data.test, Method::Nsa, t, c.acquisition, c.run.seed)?;
            let ious = res.ranking_iou(c.voxel_size, &RANKING_PERCENTS)?;
            println!("{dc} T={t} ranking IoU {:?}", ious);
            rows.push((dc.to_string(), t, ious));
        }
    }
    let table: CsvTable = ranking_csv(&rows, &RANKING_PERCENTS);
    if let Some(out) = &cli.output {
        table.write(out)?;
    }
    Ok(())
}
