//! Command-line front end: `estimate`, `train`, `eval`, `synth` and `bench`.
//!
//! Exit codes: 2 for configuration errors, 3 for I/O and file-format errors,
//! 4 for numerical failures. Every output goes through a temporary file and
//! a rename, so a failed run leaves nothing behind.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use e3normals::data::{self, write_atomic, Density, PointCloud, Shape, SynthSpec};
use e3normals::estimators::{
    Estimator, JetEstimator, NetworkConfig, NetworkParams, NeuralEstimator, PcaEstimator,
};
use e3normals::eval::{
    emit_categories_csv, emit_report, MetricReport, ReportFormat, ShapeRow, DEFAULT_TAUS,
};
use e3normals::nn::{GaussNorm, LossKind};
use e3normals::pipeline::{infer_detailed, train, InferenceConfig, SigmaRule, TrainConfig};
use e3normals::Error;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::Parse { .. } | Error::ZeroNormal { .. } | Error::BadParams(_) => {
            EXIT_IO
        }
        Error::InvalidConfig(_)
        | Error::InvalidSpec(_)
        | Error::Range(_)
        | Error::LengthMismatch { .. }
        | Error::ShapeMismatch(_)
        | Error::MissingGroundTruth(_)
        | Error::NonPositiveSigma(_) => EXIT_CONFIG,
        _ => EXIT_NUMERIC,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "e3normals",
    version,
    about = "Equivariant normal estimation for point clouds"
)]
pub struct Cli {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate normals for one .xyz file.
    Estimate(EstimateArgs),
    /// Train the toy network with random frames.
    Train(TrainArgs),
    /// Score predicted normals against ground truth.
    Eval(EvalArgs),
    /// Write a synthetic shape with analytic normals.
    Synth(SynthArgs),
    /// Run estimate and eval over a configuration grid.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Pca,
    Jet,
    Neural,
}

#[derive(Debug, Clone, Args)]
pub struct EstimatorFlags {
    #[arg(long, value_enum, default_value_t = EstimatorKind::Jet)]
    pub estimator: EstimatorKind,
    #[arg(long, default_value_t = 2)]
    pub jet_order: usize,
    /// Network parameter file, required for `--estimator neural`.
    #[arg(long)]
    pub params: Option<PathBuf>,
}

impl EstimatorFlags {
    fn validate(&self, kind: EstimatorKind) -> CliResult {
        if kind == EstimatorKind::Jet && !(1..=3).contains(&self.jet_order) {
            return Err(CliError::config(format!(
                "--jet-order must be 1..=3, got {}",
                self.jet_order
            )));
        }
        if kind == EstimatorKind::Neural && self.params.is_none() {
            return Err(CliError::config("--estimator neural needs --params"));
        }
        Ok(())
    }

    fn build(&self, kind: EstimatorKind) -> CliResult<Box<dyn Estimator>> {
        self.validate(kind)?;
        Ok(match kind {
            EstimatorKind::Pca => Box::new(PcaEstimator),
            EstimatorKind::Jet => Box::new(JetEstimator {
                order: self.jet_order,
            }),
            EstimatorKind::Neural => {
                let path = self.params.as_deref().expect("validated");
                Box::new(NeuralEstimator::new(NetworkParams::read(path)?))
            }
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct PatchFlags {
    #[arg(long, default_value_t = 1400)]
    pub patch_size: usize,
    /// Neighbours per point in the proximity graph.
    #[arg(long, default_value_t = 50)]
    pub graph_k: usize,
    /// Euclidean kNN patches instead of geodesic ones.
    #[arg(long)]
    pub no_geopatch: bool,
    /// Keep every patch prediction, not only the nearest half.
    #[arg(long)]
    pub no_halfpatch: bool,
    /// Unweighted aggregation.
    #[arg(long)]
    pub no_gaussianpatch: bool,
    /// Fixed Gaussian sigma; default is half the half-patch radius.
    #[arg(long)]
    pub gauss_sigma: Option<f64>,
    /// One patch per point, keeping only the centre prediction.
    #[arg(long)]
    pub per_point: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl PatchFlags {
    fn config(&self, n_frames: usize) -> CliResult<InferenceConfig> {
        let cfg = InferenceConfig {
            patch_size: self.patch_size,
            n_frames,
            graph_k: self.graph_k,
            use_geodesic: !self.no_geopatch,
            use_half_patch: !self.no_halfpatch,
            use_gaussian_agg: !self.no_gaussianpatch,
            sigma: self
                .gauss_sigma
                .map_or(SigmaRule::HalfRadius, SigmaRule::Fixed),
            per_point_mode: self.per_point,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Optional JSON run manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub n_frames: usize,
    #[command(flatten)]
    pub estimator: EstimatorFlags,
    #[command(flatten)]
    pub patch: PatchFlags,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NormArg {
    PointCount,
    WeightSum,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory with `<stem>.xyz` and `<stem>.normals` files.
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Training stems, one per line.
    #[arg(long)]
    pub shape_list: PathBuf,
    /// Parameter file to write.
    #[arg(long)]
    pub output: PathBuf,
    /// Per-epoch loss CSV; defaults to the output path with `.loss.csv`.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 150)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1024)]
    pub patches_per_epoch: usize,
    #[arg(long, default_value_t = 1400)]
    pub patch_size: usize,
    #[arg(long, default_value_t = 2e-3)]
    pub lr_max: f64,
    #[arg(long, default_value_t = 2e-5)]
    pub lr_min: f64,
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f64,
    #[arg(long, default_value = "gau", value_parser = parse_loss)]
    pub loss: LossKind,
    #[arg(long, value_enum, default_value_t = NormArg::PointCount)]
    pub gauss_norm: NormArg,
    #[arg(long)]
    pub gauss_sigma: Option<f64>,
    /// Width of the pooled global feature.
    #[arg(long, default_value_t = 128)]
    pub fused_dim: usize,
    /// Geodesic instead of Euclidean training patches.
    #[arg(long)]
    pub geodesic_train: bool,
    #[arg(long, default_value_t = 50)]
    pub graph_k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_loss(s: &str) -> Result<LossKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory with predicted `<stem>.normals`.
    #[arg(long)]
    pub pred_dir: PathBuf,
    /// Directory with ground-truth `<stem>.normals`.
    #[arg(long)]
    pub gt_dir: PathBuf,
    #[arg(long)]
    pub shape_list: PathBuf,
    /// Receives report.csv, report.json and categories.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// PGP thresholds in degrees.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_TAUS)]
    pub taus: Vec<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ShapeArg {
    Plane,
    Sphere,
    Cylinder,
    Torus,
    Cube,
}

impl From<ShapeArg> for Shape {
    fn from(s: ShapeArg) -> Shape {
        match s {
            ShapeArg::Plane => Shape::Plane,
            ShapeArg::Sphere => Shape::Sphere,
            ShapeArg::Cylinder => Shape::Cylinder,
            ShapeArg::Torus => Shape::Torus,
            ShapeArg::Cube => Shape::Cube,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DensityArg {
    Uniform,
    Stripes,
    Gradient,
}

impl From<DensityArg> for Density {
    fn from(d: DensityArg) -> Density {
        match d {
            DensityArg::Uniform => Density::Uniform,
            DensityArg::Stripes => Density::Stripes,
            DensityArg::Gradient => Density::Gradient,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub shape: ShapeArg,
    #[arg(long, default_value_t = 10_000)]
    pub n_points: usize,
    /// Noise std as a fraction of the bounding-box diagonal.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, value_enum, default_value_t = DensityArg::Uniform)]
    pub density: DensityArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// File stem; defaults to a name built from the shape options.
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Variant {
    Default,
    NoGeopatch,
    NoHalfpatch,
    NoGaussianpatch,
    PerPoint,
}

impl Variant {
    fn name(self) -> &'static str {
        match self {
            Variant::Default => "default",
            Variant::NoGeopatch => "no-geopatch",
            Variant::NoHalfpatch => "no-halfpatch",
            Variant::NoGaussianpatch => "no-gaussianpatch",
            Variant::PerPoint => "per-point",
        }
    }

    fn apply(self, mut cfg: InferenceConfig) -> InferenceConfig {
        match self {
            Variant::Default => {}
            Variant::NoGeopatch => cfg.use_geodesic = false,
            Variant::NoHalfpatch => cfg.use_half_patch = false,
            Variant::NoGaussianpatch => cfg.use_gaussian_agg = false,
            Variant::PerPoint => cfg.per_point_mode = true,
        }
        cfg
    }
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub shape_list: PathBuf,
    /// Combined CSV, one row per shape and grid cell.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [EstimatorKind::Jet])]
    pub estimators: Vec<EstimatorKind>,
    #[arg(long, value_delimiter = ',', default_values_t = [8usize])]
    pub n_frames: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Variant::Default])]
    pub variants: Vec<Variant>,
    #[arg(long, default_value_t = 2)]
    pub jet_order: usize,
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[command(flatten)]
    pub patch: PatchFlags,
}

pub fn run(cli: Cli) -> CliResult {
    match cli.threads {
        Some(0) => Err(CliError::config("--threads must be at least 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::config(e.to_string()))?;
            pool.install(|| dispatch(&cli))
        }
        None => dispatch(&cli),
    }
}

fn dispatch(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::config(e.to_string()))?;
    Ok(write_atomic(path, |w| w.write_all(text.as_bytes()))?)
}

#[derive(Serialize)]
struct EstimateManifest<'a> {
    command: &'static str,
    version: &'static str,
    input: &'a Path,
    output: &'a Path,
    estimator: EstimatorKind,
    jet_order: usize,
    params: Option<&'a Path>,
    config: &'a InferenceConfig,
    threads: usize,
    points: usize,
    patches: usize,
    geodesic_patches: usize,
    runtime_ms: f64,
}

pub fn cmd_estimate(a: &EstimateArgs) -> CliResult {
    let cfg = a.patch.config(a.n_frames)?;
    a.estimator.validate(a.estimator.estimator)?;
    let points = data::read_xyz(&a.input)?;
    let estimator = a.estimator.build(a.estimator.estimator)?;

    let start = Instant::now();
    let out = infer_detailed(&points, estimator.as_ref(), &cfg)?;
    let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
    data::write_normals(&out.normals, &a.output)?;
    log::info!("{} normals in {runtime_ms:.1} ms", out.normals.len());

    if let Some(m) = &a.manifest {
        write_json(
            &EstimateManifest {
                command: "estimate",
                version: env!("CARGO_PKG_VERSION"),
                input: &a.input,
                output: &a.output,
                estimator: a.estimator.estimator,
                jet_order: a.estimator.jet_order,
                params: a.estimator.params.as_deref(),
                config: &cfg,
                threads: rayon::current_num_threads(),
                points: points.len(),
                patches: out.patch_count,
                geodesic_patches: out.geodesic_patches,
                runtime_ms,
            },
            m,
        )?;
    }
    Ok(())
}

fn load_shapes(dir: &Path, list: &Path) -> CliResult<Vec<PointCloud>> {
    let stems = data::read_shape_list(list)?;
    if stems.is_empty() {
        return Err(CliError::config(format!(
            "{} lists no shapes",
            list.display()
        )));
    }
    stems
        .iter()
        .map(|s| PointCloud::load(dir, s).map_err(CliError::from))
        .collect()
}

#[derive(Serialize)]
struct TrainManifest<'a> {
    command: &'static str,
    version: &'static str,
    shapes: Vec<&'a str>,
    network: &'a NetworkConfig,
    config: &'a TrainConfig,
    initial_loss: Option<f64>,
    final_loss: Option<f64>,
    threads: usize,
    runtime_ms: f64,
}

pub fn cmd_train(a: &TrainArgs) -> CliResult {
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        patches_per_epoch: a.patches_per_epoch,
        patch_size: a.patch_size,
        lr_max: a.lr_max,
        lr_min: a.lr_min,
        weight_decay: a.weight_decay,
        loss: a.loss,
        gauss_norm: match a.gauss_norm {
            NormArg::PointCount => GaussNorm::PointCount,
            NormArg::WeightSum => GaussNorm::WeightSum,
        },
        sigma: a
            .gauss_sigma
            .map_or(SigmaRule::HalfRadius, SigmaRule::Fixed),
        geodesic_patches: a.geodesic_train,
        graph_k: a.graph_k,
        seed: a.seed,
    };
    cfg.validate()?;
    let network = NetworkConfig::with_fused_dim(a.fused_dim);
    network.validate()?;
    let shapes = load_shapes(&a.data_dir, &a.shape_list)?;

    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let params = NetworkParams::init(network.clone(), &mut rng)?;
    let out = train(&shapes, params, &cfg)?;
    let runtime_ms = start.elapsed().as_secs_f64() * 1e3;

    out.params.write(&a.output)?;
    let loss_csv = a
        .loss_csv
        .clone()
        .unwrap_or_else(|| a.output.with_extension("loss.csv"));
    write_atomic(&loss_csv, |w| {
        writeln!(w, "epoch,loss")?;
        for (i, l) in out.loss_history.iter().enumerate() {
            writeln!(w, "{},{l}", i + 1)?;
        }
        Ok(())
    })?;
    if let Some(m) = &a.manifest {
        write_json(
            &TrainManifest {
                command: "train",
                version: env!("CARGO_PKG_VERSION"),
                shapes: shapes.iter().map(|s| s.name.as_str()).collect(),
                network: &network,
                config: &cfg,
                initial_loss: out.initial_loss,
                final_loss: out.loss_history.last().copied(),
                threads: rayon::current_num_threads(),
                runtime_ms,
            },
            m,
        )?;
    }
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> CliResult {
    if a.taus.is_empty() || a.taus.iter().any(|t| !(*t > 0.0)) {
        return Err(CliError::config("--taus must be positive"));
    }
    let stems = data::read_shape_list(&a.shape_list)?;
    let mut rows = Vec::with_capacity(stems.len());
    for s in &stems {
        let pred = data::read_normals(&a.pred_dir.join(format!("{s}.normals")))?;
        let gt = data::read_normals(&a.gt_dir.join(format!("{s}.normals")))?;
        if pred.len() != gt.len() {
            return Err(CliError::config(format!(
                "{s}: {} predictions for {} points",
                pred.len(),
                gt.len()
            )));
        }
        rows.push(ShapeRow::evaluate(s, &pred, &gt, &a.taus, 0.0)?);
    }
    let config = serde_json::json!({
        "pred_dir": a.pred_dir,
        "gt_dir": a.gt_dir,
        "shape_list": a.shape_list,
    });
    let report = MetricReport::new(rows, &a.taus, config)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| CliError {
        code: EXIT_IO,
        message: e.to_string(),
    })?;
    emit_report(&report, ReportFormat::Csv, &a.out_dir.join("report.csv"))?;
    emit_report(&report, ReportFormat::Json, &a.out_dir.join("report.json"))?;
    emit_categories_csv(&report, &a.out_dir.join("categories.csv"))?;
    Ok(())
}

pub fn cmd_synth(a: &SynthArgs) -> CliResult {
    let spec = SynthSpec::new(a.shape.into(), a.n_points, a.seed)
        .with_noise(a.noise)
        .with_density(a.density.into());
    let cloud = data::synthesize(&spec)?;
    let name = a.name.clone().unwrap_or_else(|| spec.default_name());
    std::fs::create_dir_all(&a.out_dir).map_err(|e| CliError {
        code: EXIT_IO,
        message: e.to_string(),
    })?;
    data::write_xyz(&cloud.positions, &a.out_dir.join(format!("{name}.xyz")))?;
    data::write_normals(
        cloud.gt_normals()?,
        &a.out_dir.join(format!("{name}.normals")),
    )?;
    Ok(())
}

pub fn cmd_bench(a: &BenchArgs) -> CliResult {
    if a.estimators.is_empty() || a.n_frames.is_empty() || a.variants.is_empty() {
        return Err(CliError::config("empty benchmark grid"));
    }
    let flags = EstimatorFlags {
        estimator: EstimatorKind::Jet,
        jet_order: a.jet_order,
        params: a.params.clone(),
    };
    let mut estimators = Vec::with_capacity(a.estimators.len());
    for &kind in &a.estimators {
        flags.validate(kind)?;
    }
    let mut grid = Vec::new();
    for &n in &a.n_frames {
        for &v in &a.variants {
            grid.push((n, v, v.apply(a.patch.config(n)?)));
        }
    }
    for cfg in grid.iter().map(|g| &g.2) {
        cfg.validate()?;
    }
    let shapes = load_shapes(&a.data_dir, &a.shape_list)?;
    for &kind in &a.estimators {
        estimators.push((kind, flags.build(kind)?));
    }

    let mut records = Vec::new();
    for shape in &shapes {
        let gt = shape.gt_normals()?;
        for (kind, est) in &estimators {
            for (n, variant, cfg) in &grid {
                let start = Instant::now();
                let out = infer_detailed(&shape.positions, est.as_ref(), cfg)?;
                let ms = start.elapsed().as_secs_f64() * 1e3;
                let row = ShapeRow::evaluate(&shape.name, &out.normals, gt, &DEFAULT_TAUS, ms)?;
                log::info!(
                    "{} {kind:?} n={n} {}: {:.3} deg",
                    shape.name,
                    variant.name(),
                    row.rmse_deg
                );
                records.push((row, *kind, *n, *variant));
            }
        }
    }

    write_atomic(&a.output, |w| {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| std::io::Error::other(e);
        out.write_record([
            "shape",
            "estimator",
            "n_frames",
            "variant",
            "rmse_deg",
            "pgp5",
            "pgp10",
            "runtime_ms",
        ])
        .map_err(io)?;
        for (row, kind, n, variant) in &records {
            out.write_record([
                row.name.clone(),
                format!("{kind:?}").to_lowercase(),
                n.to_string(),
                variant.name().to_string(),
                row.rmse_deg.to_string(),
                row.pgp[0].percent.to_string(),
                row.pgp[1].percent.to_string(),
                row.runtime_ms.to_string(),
            ])
            .map_err(io)?;
        }
        out.flush()
    })?;
    Ok(())
}
