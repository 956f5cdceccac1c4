//! `bayesdepth` command-line driver: synth, train, fuse, eval, calib.
//!
//! Every command takes an optional JSON config (`--config`), lets flags
//! override it, and writes a manifest holding the fully resolved config.
//! Feeding a manifest back through `--config` reproduces the run.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use bayesdepth::ensemble::EnsembleOutput;
use bayesdepth::imagery::{DepthMap, Dims, Mask, UncMap};
use bayesdepth::metrics::{
    auce, calibration_curve, default_p_grid, depth_metrics_with, scale_correction,
    write_curve_csv, write_metrics_csv, RelDenominator,
};
use bayesdepth::predictor::{DepthField, Optimizer, TrainConfig};
use bayesdepth::synthcolon::{Dataset, DatasetSpec, Domain, LightModel, SceneParams};
use bayesdepth::trainer::{
    regime_prediction, train_ensemble, PoseNoise, Regime, SfmConfig, TrainData,
};
use bayesdepth::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "bayesdepth", version, about = "Bayesian single-view depth workbench")]
struct Cli {
    /// Worker threads for member- and pixel-level parallelism. Outputs do
    /// not depend on this value.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic colon sequence.
    Synth(SynthArgs),
    /// Train an ensemble of depth fields.
    Train(TrainArgs),
    /// Fuse trained members into mean and variance maps.
    Fuse(FuseArgs),
    /// Depth metrics and AUCE of a fused prediction against ground truth.
    Eval(EvalArgs),
    /// Calibration curve of a fused prediction.
    Calib(CalibArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long, value_parser = parse_domain)]
    domain: Option<Domain>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_parser = parse_regime)]
    regime: Option<Regime>,
    #[arg(long)]
    members: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Target frame indices, comma separated.
    #[arg(long, value_delimiter = ',')]
    targets: Option<Vec<usize>>,
    /// Directory of fused teacher maps (student regimes).
    #[arg(long)]
    teacher: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lambda_u: Option<f64>,
    #[arg(long, value_parser = parse_optimizer)]
    optimizer: Option<Optimizer>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory written by `train`.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory written by `fuse`.
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    frame: Option<usize>,
    /// Rescale the prediction by the ratio of depth medians first.
    #[arg(long)]
    median_scale: bool,
    /// Divide relative errors by the reference depth instead of the prediction.
    #[arg(long)]
    reference_denominator: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CalibArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    frame: Option<usize>,
    #[arg(long)]
    median_scale: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_regime(s: &str) -> Result<Regime, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_domain(s: &str) -> Result<Domain, String> {
    serde_json::from_value(Value::String(s.into()))
        .map_err(|_| format!("unknown domain {s:?}; valid domains: source, shifted"))
}

fn parse_optimizer(s: &str) -> Result<Optimizer, String> {
    serde_json::from_value(Value::String(s.into())).map_err(|_| {
        format!("unknown optimizer {s:?}; valid optimizers: gradient-descent, adam")
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SynthConfig {
    seed: u64,
    domain: Domain,
    frames: usize,
    width: usize,
    height: usize,
    hfov_deg: f64,
    step_mm: f64,
    /// Domain preset when absent; its seed is always replaced by `seed`.
    scene: Option<SceneParams>,
    light: Option<LightModel>,
    out: Option<PathBuf>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let d = DatasetSpec::default();
        Self {
            seed: 0,
            domain: Domain::Source,
            frames: d.frames,
            width: d.width,
            height: d.height,
            hfov_deg: d.hfov_deg,
            step_mm: d.step_mm,
            scene: None,
            light: None,
            out: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainRunConfig {
    data: Option<PathBuf>,
    regime: Option<Regime>,
    members: usize,
    seed: u64,
    /// Middle frame when empty.
    targets: Vec<usize>,
    teacher: Option<PathBuf>,
    train: TrainConfig,
    sfm: SfmConfig,
    pose_noise: PoseNoise,
    out: Option<PathBuf>,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            data: None,
            regime: None,
            members: 5,
            seed: 1,
            targets: Vec::new(),
            teacher: None,
            train: TrainConfig::default(),
            sfm: SfmConfig::default(),
            pose_noise: PoseNoise::default(),
            out: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FuseConfig {
    model: Option<PathBuf>,
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvalConfig {
    pred: Option<PathBuf>,
    data: Option<PathBuf>,
    /// Middle frame when absent.
    frame: Option<usize>,
    median_scale: bool,
    rel_denominator: RelDenominator,
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CalibConfig {
    pred: Option<PathBuf>,
    data: Option<PathBuf>,
    frame: Option<usize>,
    median_scale: bool,
    p_grid: Vec<f64>,
    out: Option<PathBuf>,
}

impl Default for CalibConfig {
    fn default() -> Self {
        Self {
            pred: None,
            data: None,
            frame: None,
            median_scale: false,
            p_grid: default_p_grid(),
            out: None,
        }
    }
}

/// What `train` leaves next to the member fields so `fuse` can interpret them.
#[derive(Debug, Serialize, Deserialize)]
struct ModelIndex {
    regime: Regime,
    width: usize,
    height: usize,
    teacher: Option<PathBuf>,
    members: Vec<String>,
}

/// Config file contents (a bare config or a manifest of the same command).
fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>, command: &str) -> anyhow::Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let mut value: Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))?;
    if let Value::Object(map) = &mut value {
        if let Some(c) = map.remove("command") {
            ensure!(
                c == command,
                "config {} belongs to command {c}, not {command}",
                path.display()
            );
        }
        map.remove("version");
    }
    serde_json::from_value(value).with_context(|| format!("invalid config {}", path.display()))
}

fn write_manifest(path: &Path, command: &str, config: &impl Serialize) -> anyhow::Result<()> {
    let mut value = serde_json::to_value(config)?;
    if let Value::Object(map) = &mut value {
        map.insert("command".into(), command.into());
        map.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    }
    let text = serde_json::to_string_pretty(&value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// `metrics.csv` -> `metrics.manifest.json`.
fn sidecar_manifest(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.manifest.json"))
}

fn required<'a, T>(v: &'a Option<T>, flag: &str) -> anyhow::Result<&'a T> {
    v.as_ref().with_context(|| format!("missing --{flag} (flag or config key)"))
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn cmd_synth(args: SynthArgs) -> anyhow::Result<()> {
    let mut cfg: SynthConfig = load_config(args.config.as_deref(), "synth")?;
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.frames = args.frames.unwrap_or(cfg.frames);
    cfg.width = args.width.unwrap_or(cfg.width);
    cfg.height = args.height.unwrap_or(cfg.height);
    cfg.domain = args.domain.unwrap_or(cfg.domain);
    cfg.out = args.out.or(cfg.out);
    ensure!(
        cfg.frames >= 3,
        "--frames must be at least 3 (self-supervision needs a previous and a posterior view), got {}",
        cfg.frames
    );
    let (preset_scene, preset_light) = cfg.domain.preset(cfg.seed);
    let scene = SceneParams {
        seed: cfg.seed,
        ..cfg.scene.unwrap_or(preset_scene)
    };
    let light = cfg.light.unwrap_or(preset_light);
    cfg.scene = Some(scene);
    cfg.light = Some(light);
    let out = required(&cfg.out, "out")?.clone();

    let spec = DatasetSpec {
        scene,
        light,
        width: cfg.width,
        height: cfg.height,
        hfov_deg: cfg.hfov_deg,
        frames: cfg.frames,
        step_mm: cfg.step_mm,
    };
    let ds = spec.render()?;
    ds.save(&out)?;
    write_manifest(&out.join("run.json"), "synth", &cfg)?;
    eprintln!("wrote {} frames to {}", cfg.frames, out.display());
    Ok(())
}

fn default_frame(ds: &Dataset) -> usize {
    ds.frames.len() / 2
}

fn cmd_train(args: TrainArgs) -> anyhow::Result<()> {
    let mut cfg: TrainRunConfig = load_config(args.config.as_deref(), "train")?;
    cfg.data = args.data.or(cfg.data);
    cfg.regime = args.regime.or(cfg.regime);
    cfg.members = args.members.unwrap_or(cfg.members);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.targets = args.targets.unwrap_or(cfg.targets);
    cfg.teacher = args.teacher.or(cfg.teacher);
    cfg.train.steps = args.steps.unwrap_or(cfg.train.steps);
    cfg.train.learning_rate = args.lr.unwrap_or(cfg.train.learning_rate);
    cfg.train.loss.lambda_u = args.lambda_u.unwrap_or(cfg.train.loss.lambda_u);
    cfg.train.optimizer = args.optimizer.unwrap_or(cfg.train.optimizer);
    cfg.out = args.out.or(cfg.out);

    let regime = *required(&cfg.regime, "regime")?;
    let data_dir = required(&cfg.data, "data")?.clone();
    let out = required(&cfg.out, "out")?.clone();
    ensure!(cfg.members >= 1, "--members must be at least 1");
    cfg.train.validate()?;

    let ds = Dataset::load(&data_dir)
        .with_context(|| format!("loading dataset {}", data_dir.display()))?;
    if cfg.targets.is_empty() {
        cfg.targets = vec![default_frame(&ds)];
    }
    let student = matches!(regime, Regime::PlainStudent | Regime::UncertainStudent);
    if !student && cfg.teacher.is_some() {
        bail!("--teacher only applies to the student regimes");
    }
    let data = match regime {
        Regime::SupervisedGt => TrainData::supervised_gt(&ds, &cfg.targets)?,
        Regime::SupervisedSfm => TrainData::supervised_sfm(&ds, &cfg.targets, &cfg.sfm, cfg.seed)?,
        Regime::SelfSupervised => {
            TrainData::self_supervised(&ds, &cfg.targets, &cfg.pose_noise, cfg.seed)?
        }
        Regime::PlainStudent | Regime::UncertainStudent => {
            let dir = cfg
                .teacher
                .as_ref()
                .with_context(|| format!("regime {regime} needs --teacher <fused teacher dir>"))?;
            let teacher = EnsembleOutput::load(dir)
                .with_context(|| format!("loading teacher maps from {}", dir.display()))?;
            let parts = cfg
                .targets
                .iter()
                .map(|&t| {
                    let f = ds.frames.get(t).with_context(|| format!("no frame {t}"))?;
                    Ok(TrainData::student(&teacher, &f.view.valid)?)
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            TrainData::concat(parts)?
        }
    };

    let trained = train_ensemble(regime, &data, &cfg.train, cfg.members, cfg.seed)?;
    create_dir(&out)?;
    let mut names = Vec::new();
    for (i, (field, report)) in trained.iter().enumerate() {
        let name = format!("member_{i:02}.json");
        field.save_json(out.join(&name))?;
        report.write_csv(out.join(format!("loss_{i:02}.csv")))?;
        eprintln!(
            "member {i} (seed {}): loss {:.6} -> {:.6} in {:.1}s",
            report.seed,
            report.losses.first().copied().unwrap_or(f64::NAN),
            report.losses.last().copied().unwrap_or(f64::NAN),
            report.wall_clock_s
        );
        names.push(name);
    }
    let (w, h) = data.dims();
    let index = ModelIndex {
        regime,
        width: w,
        height: h,
        teacher: cfg.teacher.clone(),
        members: names,
    };
    std::fs::write(out.join("model.json"), serde_json::to_string_pretty(&index)? + "\n")?;
    write_manifest(&out.join("run.json"), "train", &cfg)
}

fn cmd_fuse(args: FuseArgs) -> anyhow::Result<()> {
    let mut cfg: FuseConfig = load_config(args.config.as_deref(), "fuse")?;
    cfg.model = args.model.or(cfg.model);
    cfg.out = args.out.or(cfg.out);
    let model = required(&cfg.model, "model")?.clone();
    let out = required(&cfg.out, "out")?.clone();

    let index_path = model.join("model.json");
    let index: ModelIndex = serde_json::from_str(
        &std::fs::read_to_string(&index_path)
            .with_context(|| format!("reading {}", index_path.display()))?,
    )?;
    let fields = index
        .members
        .iter()
        .map(|n| DepthField::load_json(model.join(n)))
        .collect::<Result<Vec<_>, _>>()?;
    let teacher = match (&index.teacher, index.regime) {
        (Some(dir), Regime::UncertainStudent) => Some(EnsembleOutput::load(dir)?),
        _ => None,
    };
    let fused = regime_prediction(index.regime, &fields, index.width, index.height, teacher.as_ref())?;
    fused.save(&out)?;
    write_manifest(&out.join("run.json"), "fuse", &cfg)
}

/// Ground truth, prediction and variance for one frame, optionally median-scaled.
struct Scored {
    gt: DepthMap,
    mask: Mask,
    pred: DepthMap,
    var: UncMap,
}

fn load_scored(
    pred_dir: &Path,
    data_dir: &Path,
    frame: &mut Option<usize>,
    median_scale: bool,
) -> anyhow::Result<Scored> {
    let fused = EnsembleOutput::load(pred_dir)
        .with_context(|| format!("loading prediction {}", pred_dir.display()))?;
    let ds = Dataset::load(data_dir)
        .with_context(|| format!("loading dataset {}", data_dir.display()))?;
    let t = *frame.get_or_insert(default_frame(&ds));
    let f = ds.frames.get(t).with_context(|| format!("dataset has no frame {t}"))?;
    let gt = f.view.depth.clone();
    let mask = f.view.valid.clone();
    let mut pred = fused.d_hat;
    let mut var = fused.var_t;
    if median_scale {
        let s = scale_correction(&gt, &pred, &mask)?;
        pred = pred.scaled(s)?;
        let v = var.data().iter().map(|x| x * s * s).collect();
        var = UncMap::new(var.width(), var.height(), var.kind(), v)?;
    }
    Ok(Scored { gt, mask, pred, var })
}

fn cmd_eval(args: EvalArgs) -> anyhow::Result<()> {
    let mut cfg: EvalConfig = load_config(args.config.as_deref(), "eval")?;
    cfg.pred = args.pred.or(cfg.pred);
    cfg.data = args.data.or(cfg.data);
    cfg.frame = args.frame.or(cfg.frame);
    cfg.median_scale |= args.median_scale;
    if args.reference_denominator {
        cfg.rel_denominator = RelDenominator::Reference;
    }
    cfg.out = args.out.or(cfg.out);
    let pred = required(&cfg.pred, "pred")?.clone();
    let data = required(&cfg.data, "data")?.clone();
    let out = required(&cfg.out, "out")?.clone();

    let s = load_scored(&pred, &data, &mut cfg.frame, cfg.median_scale)?;
    let m = depth_metrics_with(&s.gt, &s.pred, &s.mask, cfg.rel_denominator)?;
    let curve = calibration_curve(&s.gt, &s.pred, &s.var, &s.mask, &default_p_grid())?;
    let a = auce(&curve);
    write_metrics_csv(&out, &[(m, a)])?;
    write_manifest(&sidecar_manifest(&out), "eval", &cfg)?;
    println!(
        "abs_rel={} rmse={} delta1={} auce_signed={} auce_abs={}",
        m.abs_rel, m.rmse, m.delta1, a.signed, a.absolute
    );
    Ok(())
}

fn cmd_calib(args: CalibArgs) -> anyhow::Result<()> {
    let mut cfg: CalibConfig = load_config(args.config.as_deref(), "calib")?;
    cfg.pred = args.pred.or(cfg.pred);
    cfg.data = args.data.or(cfg.data);
    cfg.frame = args.frame.or(cfg.frame);
    cfg.median_scale |= args.median_scale;
    cfg.out = args.out.or(cfg.out);
    let pred = required(&cfg.pred, "pred")?.clone();
    let data = required(&cfg.data, "data")?.clone();
    let out = required(&cfg.out, "out")?.clone();

    let s = load_scored(&pred, &data, &mut cfg.frame, cfg.median_scale)?;
    let curve = calibration_curve(&s.gt, &s.pred, &s.var, &s.mask, &cfg.p_grid)?;
    let a = auce(&curve);
    write_curve_csv(&out, &curve)?;
    write_manifest(&sidecar_manifest(&out), "calib", &cfg)?;
    println!("auce_signed={} auce_abs={}", a.signed, a.absolute);
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.jobs {
        ensure!(n >= 1, "--jobs must be at least 1");
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("starting the worker pool")?;
    }
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Fuse(a) => cmd_fuse(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Calib(a) => cmd_calib(a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numeric = err.chain().any(|e| {
        matches!(
            e.downcast_ref::<Error>(),
            Some(Error::NonFiniteLoss { .. } | Error::NonFinite(_))
        )
    });
    if numeric {
        EXIT_NUMERIC
    } else {
        EXIT_USAGE
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
