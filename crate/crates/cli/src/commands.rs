use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Parser;
use log::{info, warn};
use serde_json::json;
use wsdepth::data::{
    read_color_png, write_color_png, write_dataset, write_depth_png, Dataset, DatasetConfig, DepthMap, ResizePolicy,
    SamplePair, SyntheticDatasetSpec,
};
use wsdepth::error::Error;
use wsdepth::kv::KvFile;
use wsdepth::metrics::{mirror_average_predict, predict, EvalReport, MetricsReport};
use wsdepth::networks::{Checkpoint, Model};
use wsdepth::trainer::{
    evaluate, evaluate_teacher, predict_samples, pretrain_drn, score, split_indices, student_config, teacher_config,
    train, BestModel, EvalProtocol, InputRes, RunKind, TrainState, TrainingConfig,
};

use crate::settings::{flag, merge, opt, parse_size, usage, Source};
use crate::{colormap, manifest, Cli, Command, EvalArgs, PredictArgs, ReportArgs, SynthArgs, TrainArgs};

pub const LAST_CKPT: &str = "last.ckpt";
pub const BEST_CKPT: &str = "best.ckpt";
pub const TRAIN_LOG: &str = "train.log";
pub const METRICS_FILE: &str = "metrics.json";

/// Per-run context shared by the commands.
struct Run {
    name: &'static str,
    argv: Vec<String>,
    config_file: Option<PathBuf>,
    config_text: Option<String>,
    seed: Option<u64>,
    out: PathBuf,
    started: String,
}

impl Run {
    fn source(&self) -> Source<'_> {
        match (&self.config_text, &self.config_file) {
            (Some(t), _) => Source::Text(t),
            (None, Some(p)) => Source::File(p),
            (None, None) => Source::None,
        }
    }

    fn prepare_out(&self) -> Result<()> {
        fs::create_dir_all(&self.out).with_context(|| format!("cannot create {}", self.out.display()))
    }

    /// Writes the manifest last, flagging a rerun of an identical run.
    fn finish(&self, config: &str, inputs: &[&Path], outputs: &[PathBuf]) -> Result<()> {
        let inputs = manifest::hash_inputs(inputs)?;
        let run_hash = manifest::run_hash(self.name, config, &inputs);
        let duplicate = manifest::is_duplicate(&self.out, &run_hash);
        if duplicate {
            warn!("{} already holds a run with identical command, config and inputs", self.out.display());
        }
        let outputs = outputs
            .iter()
            .map(|p| {
                Ok(manifest::FileHash {
                    path: p.clone(),
                    sha256: manifest::hash_path(p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        manifest::write(
            &self.out,
            &manifest::RunManifest {
                command: self.name.to_string(),
                argv: self.argv.clone(),
                config: config.to_string(),
                inputs,
                outputs,
                run_hash,
                duplicate,
                started: self.started.clone(),
                finished: manifest::now(),
                version: env!("CARGO_PKG_VERSION").to_string(),
            },
        )
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let started = manifest::now();
    let (cli, argv, config_text) = match &cli.replay {
        Some(path) => {
            let m = manifest::read(path)?;
            let mut replayed = Cli::try_parse_from(std::iter::once("wsdepth".to_string()).chain(m.argv.iter().cloned()))
                .map_err(|e| usage(format!("manifest arguments do not parse: {}", e.kind())))?;
            if cli.out.is_some() {
                replayed.out = cli.out.clone();
            }
            replayed.quiet |= cli.quiet;
            (replayed, m.argv, Some(m.config))
        }
        None => (cli, std::env::args().skip(1).collect(), None),
    };
    let Some(command) = cli.command else {
        return Err(usage("no command given (try --help)"));
    };
    let name = command.name();
    let out = cli.out.unwrap_or_else(|| PathBuf::from("runs").join(name));
    let run = Run {
        name,
        argv,
        config_file: cli.config,
        config_text,
        seed: cli.seed,
        out,
        started,
    };
    match &command {
        Command::SynthData(a) => synth_data(&run, a),
        Command::PretrainTeacher(a) => train_cmd(&run, a, RunKind::Teacher),
        Command::Train(a) => train_cmd(&run, a, RunKind::Student),
        Command::Eval(a) => eval(&run, a),
        Command::Predict(a) => predict_cmd(&run, a),
        Command::Report(a) => report(&run, a),
    }
}

const SYNTH_KEYS: &[&str] = &[
    "count",
    "size",
    "mu",
    "max_rects",
    "texture_amplitude",
    "d_min",
    "d_max",
    "depth_scale",
    "seed",
];

fn synth_data(run: &Run, a: &SynthArgs) -> Result<()> {
    let kv = merge(
        run.source(),
        &[
            ("count", opt(&a.count)),
            ("size", a.size.clone()),
            ("mu", opt(&a.mu)),
            ("max_rects", opt(&a.max_rects)),
            ("texture_amplitude", opt(&a.texture_amplitude)),
            ("d_min", opt(&a.d_min)),
            ("d_max", opt(&a.d_max)),
            ("depth_scale", opt(&a.depth_scale)),
            ("seed", opt(&run.seed)),
        ],
    )?;
    kv.check_keys(SYNTH_KEYS)?;
    let size = parse_size(kv.raw("size").unwrap_or("128"))?;
    let spec = SyntheticDatasetSpec {
        count: kv.get("count")?.unwrap_or(1000),
        seed: kv.get("seed")?.unwrap_or(0),
        size,
        mu: kv.get("mu")?.unwrap_or(0.5),
        depth_range: (kv.get("d_min")?.unwrap_or(1.0), kv.get("d_max")?.unwrap_or(10.0)),
        max_rects: kv.get("max_rects")?.unwrap_or(6),
        texture_amplitude: kv.get("texture_amplitude")?.unwrap_or(0.3),
    };
    let dcfg = DatasetConfig {
        depth_scale: kv.get("depth_scale")?.unwrap_or(1000.0),
        d_min: spec.depth_range.0,
        d_max: spec.depth_range.1,
        mu: spec.mu,
        resize_policy: ResizePolicy::Strict,
    };
    dcfg.validate()?;
    if spec.count == 0 {
        return Err(usage("count must be at least 1"));
    }
    if dcfg.d_max as f64 * dcfg.depth_scale > u16::MAX as f64 {
        return Err(usage(format!("d_max {} m does not fit 16 bits at depth_scale {}", dcfg.d_max, dcfg.depth_scale)));
    }
    let mut resolved = KvFile::default();
    resolved.set("count", spec.count);
    resolved.set("size", format!("{}x{}", size.0, size.1));
    resolved.set("mu", spec.mu);
    resolved.set("max_rects", spec.max_rects);
    resolved.set("texture_amplitude", spec.texture_amplitude);
    resolved.set("d_min", dcfg.d_min);
    resolved.set("d_max", dcfg.d_max);
    resolved.set("depth_scale", dcfg.depth_scale);
    resolved.set("seed", spec.seed);

    run.prepare_out()?;
    let pairs = spec.generate()?;
    write_dataset(&run.out, &dcfg, &pairs)?;
    info!("wrote {} scenes to {}", pairs.len(), run.out.display());
    run.finish(&resolved.to_string(), &[], &[run.out.clone()])
}

fn load_teacher(path: &Path) -> Result<Model> {
    let m = Checkpoint::read(path)?.model()?;
    if m.config.in_channels != 1 {
        bail!(Error::Config(format!("{} is not a teacher checkpoint (it takes {} input channels)", path.display(), m.config.in_channels)));
    }
    Ok(m)
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn best_checkpoint(best: &BestModel, kind: RunKind, cfg: &TrainingConfig, extra: &serde_json::Value) -> Checkpoint {
    Checkpoint::from_model(
        &best.model,
        json!({
            "kind": kind,
            "epoch": best.epoch,
            "metrics": best.metrics,
            "training_config": cfg.to_kv().to_string(),
            "extra": extra,
        }),
    )
}

fn train_cmd(run: &Run, a: &TrainArgs, kind: RunKind) -> Result<()> {
    let teacher_run = kind == RunKind::Teacher;
    if teacher_run && (a.teacher.is_some() || a.ablation.is_some()) {
        return Err(usage("--teacher and --ablation apply to `train` only"));
    }
    let kv = merge(
        run.source(),
        &[
            ("ablation", a.ablation.clone()),
            ("epochs", opt(&a.epochs)),
            ("batch_size", opt(&a.batch_size)),
            ("max_lr", opt(&a.max_lr)),
            ("seed", opt(&run.seed)),
        ],
    )?;
    let base = if teacher_run {
        TrainingConfig::teacher_default()
    } else {
        TrainingConfig::default()
    };
    let ds = Dataset::open(&a.data)?;
    let mut cfg = TrainingConfig::from_kv_over(base, &kv)?;
    if kv.raw("mu").is_none() {
        cfg.mu = ds.config.mu;
    } else if (cfg.mu - ds.config.mu).abs() > 1e-12 {
        bail!(Error::Config(format!("config mu {} differs from the dataset's {}", cfg.mu, ds.config.mu)));
    }
    let teacher = match (&a.teacher, cfg.ablation.distill && !teacher_run) {
        (Some(p), true) => Some(load_teacher(p)?),
        (None, true) => bail!(Error::Config("distillation is enabled but no --teacher checkpoint was given".into())),
        (Some(_), false) => {
            warn!("distillation is disabled; ignoring --teacher");
            None
        }
        (None, false) => None,
    };
    let teacher_sum = teacher.as_ref().map(|t| t.params.checksum());

    let samples = ds.load_all()?;
    let (tr, ho) = split_indices(samples.len(), cfg.holdout_frac, cfg.seed);
    info!("{} training and {} held-out samples", tr.len(), ho.len());
    let (d_min, d_max) = (ds.config.d_min, ds.config.d_max);
    let net = if teacher_run {
        teacher_config(&cfg, d_min, d_max)
    } else {
        student_config(&cfg, d_min, d_max)
    };
    let state = match &a.resume {
        Some(p) => {
            let ck = Checkpoint::read(p)?;
            let stored = ck.meta["training_config"].as_str().unwrap_or_default();
            if stored != cfg.to_kv().to_string() {
                warn!("resuming with a config that differs from the one {} was trained with", p.display());
            }
            let st = TrainState::from_checkpoint(&ck, &cfg)?;
            if st.kind != kind || st.model.config != net {
                bail!(Error::Config(format!("{} does not hold a matching {kind:?} state", p.display())));
            }
            st
        }
        None => TrainState::new(kind, Model::new(net, cfg.seed)?, &cfg),
    };

    run.prepare_out()?;
    let log_path = run.out.join(TRAIN_LOG);
    let mut log_file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(a.resume.is_some())
        .truncate(a.resume.is_none())
        .open(&log_path)
        .map_err(|e| io_err(&log_path, e))?;
    let (last_path, best_path) = (run.out.join(LAST_CKPT), run.out.join(BEST_CKPT));
    let extra = json!({ "teacher_checksum": teacher_sum });
    let mut hook = |st: &TrainState, best: Option<&BestModel>| -> wsdepth::error::Result<()> {
        let line = st.history.last().map(ToString::to_string).unwrap_or_default();
        writeln!(log_file, "{line}").map_err(|e| io_err(&log_path, e))?;
        st.to_checkpoint(&cfg).write(&last_path)?;
        if let Some(b) = best.filter(|b| b.epoch == st.epoch) {
            best_checkpoint(b, kind, &cfg, &extra).write(&best_path)?;
        }
        Ok(())
    };

    let outcome = if teacher_run {
        let maps = |idx: &[usize]| idx.iter().map(|&i| &samples[i].depth_lr).collect::<Vec<&DepthMap>>();
        pretrain_drn(state, &maps(&tr), &maps(&ho), &cfg, Some(&mut hook))?
    } else {
        let pick = |idx: &[usize]| idx.iter().map(|&i| &samples[i]).collect::<Vec<&SamplePair>>();
        let protocol = EvalProtocol::default();
        train(state, &pick(&tr), &pick(&ho), teacher.as_ref(), &cfg, &protocol, Some(&mut hook))?
    };
    if let (Some(t), Some(sum)) = (&teacher, &teacher_sum) {
        if &t.params.checksum() != sum {
            bail!("teacher parameters changed during student training");
        }
    }

    let final_model = match &outcome.best {
        Some(b) => b.model.clone(),
        None => {
            let b = BestModel {
                epoch: outcome.state.epoch,
                model: outcome.state.model.clone(),
                metrics: outcome.state.last_eval.clone().unwrap_or_else(empty_metrics),
            };
            best_checkpoint(&b, kind, &cfg, &extra).write(&best_path)?;
            b.model
        }
    };
    let mut outputs = vec![last_path.clone(), best_path.clone(), log_path.clone()];
    if !ho.is_empty() {
        let mut report = if teacher_run {
            let maps: Vec<&DepthMap> = ho.iter().map(|&i| &samples[i].depth_lr).collect();
            evaluate_teacher(&final_model, &maps)?
        } else {
            let refs: Vec<&SamplePair> = ho.iter().map(|&i| &samples[i]).collect();
            evaluate(&final_model, &refs, &EvalProtocol::default())?
        };
        rename(&mut report, &ds, &ho);
        info!("held-out (best checkpoint): {}", report.aggregate.to_line());
        let p = run.out.join(METRICS_FILE);
        fs::write(&p, report.to_json()).map_err(|e| io_err(&p, e))?;
        outputs.push(p);
    }
    let mut inputs: Vec<&Path> = vec![&a.data];
    if teacher.is_some() {
        inputs.extend(a.teacher.as_deref());
    }
    inputs.extend(a.resume.as_deref());
    run.finish(&cfg.to_kv().to_string(), &inputs, &outputs)
}

fn empty_metrics() -> MetricsReport {
    MetricsReport {
        rel: f64::NAN,
        sq_rel: f64::NAN,
        rmse: f64::NAN,
        rmse_log: f64::NAN,
        log10: f64::NAN,
        delta1: f64::NAN,
        delta2: f64::NAN,
        delta3: f64::NAN,
        n_pixels: 0,
        protocol: Default::default(),
    }
}

/// Names records after the dataset files they came from.
fn rename(report: &mut EvalReport, ds: &Dataset, idx: &[usize]) {
    for (r, &i) in report.per_image.iter_mut().zip(idx) {
        r.name = stem(&ds.names[i]);
    }
}

fn stem(name: &str) -> String {
    Path::new(name)
        .file_stem()
        .map_or_else(|| name.to_string(), |s| s.to_string_lossy().into_owned())
}

const EVAL_KEYS: &[&str] = &["input_res", "cap_m", "garg_crop", "mirror", "split", "write_images", "seed", "holdout_frac"];

fn eval(run: &Run, a: &EvalArgs) -> Result<()> {
    let kv = merge(
        run.source(),
        &[
            ("input_res", a.input_res.clone()),
            ("cap_m", opt(&a.cap)),
            ("garg_crop", flag(a.garg_crop, "true")),
            ("mirror", flag(a.no_mirror, "false")),
            ("split", a.split.clone()),
            ("write_images", flag(a.no_images, "false")),
            ("seed", opt(&run.seed)),
        ],
    )?;
    kv.check_keys(EVAL_KEYS)?;
    let ck = Checkpoint::read(&a.checkpoint)?;
    let model = ck.model()?;
    if model.config.in_channels != 3 {
        bail!(Error::Config(format!("{} is not a student checkpoint", a.checkpoint.display())));
    }
    let trained = match ck.meta["training_config"].as_str() {
        Some(t) => TrainingConfig::from_kv(&KvFile::parse(t)?)?,
        None => TrainingConfig::default(),
    };
    let protocol = EvalProtocol {
        input: kv.get("input_res")?.unwrap_or(InputRes::Hr),
        mirror: kv.get("mirror")?.unwrap_or(true),
        cap_m: match kv.raw("cap_m") {
            None | Some("none") => None,
            Some(_) => Some(kv.require("cap_m")?),
        },
        garg_crop: kv.get("garg_crop")?.unwrap_or(false),
    };
    let split: String = kv.get("split")?.unwrap_or_else(|| "all".to_string());
    let seed = kv.get("seed")?.unwrap_or(trained.seed);
    let holdout_frac = kv.get("holdout_frac")?.unwrap_or(trained.holdout_frac);
    let write_images: bool = kv.get("write_images")?.unwrap_or(true);

    let ds = Dataset::open(&a.data)?;
    let idx: Vec<usize> = match split.as_str() {
        "all" => (0..ds.len()).collect(),
        "holdout" => split_indices(ds.len(), holdout_frac, seed).1,
        other => return Err(usage(format!("split must be `all` or `holdout`, got `{other}`"))),
    };
    if idx.is_empty() {
        return Err(usage("the selected split is empty"));
    }
    let samples = idx.iter().map(|&i| ds.load(i)).collect::<wsdepth::error::Result<Vec<_>>>()?;
    let refs: Vec<&SamplePair> = samples.iter().collect();
    let preds = predict_samples(&model, &refs, &protocol)?;
    let mut report = score(preds.clone(), &refs, &protocol)?;
    rename(&mut report, &ds, &idx);

    let mut resolved = KvFile::default();
    resolved.set("input_res", format!("{:?}", protocol.input).to_lowercase());
    resolved.set("cap_m", protocol.cap_m.map_or("none".to_string(), |c| c.to_string()));
    resolved.set("garg_crop", protocol.garg_crop);
    resolved.set("mirror", protocol.mirror);
    resolved.set("split", &split);
    resolved.set("write_images", write_images);
    resolved.set("seed", seed);
    resolved.set("holdout_frac", holdout_frac);

    run.prepare_out()?;
    let (json_path, text_path) = (run.out.join("report.json"), run.out.join("report.txt"));
    fs::write(&json_path, report.to_json()).map_err(|e| io_err(&json_path, e))?;
    fs::write(&text_path, report.to_text()).map_err(|e| io_err(&text_path, e))?;
    let mut outputs = vec![json_path, text_path];
    if write_images {
        for (pred, r) in preds.iter().zip(&report.per_image) {
            write_depth_png(&run.out.join("depth").join(format!("{}.png", r.name)), pred, ds.config.depth_scale)?;
            write_color_png(&run.out.join("preview").join(format!("{}.png", r.name)), &colormap::preview(pred))?;
        }
        outputs.push(run.out.join("depth"));
        outputs.push(run.out.join("preview"));
    }
    println!("mean {}", report.aggregate.to_line());
    run.finish(&resolved.to_string(), &[&a.checkpoint, &a.data], &outputs)
}

fn predict_cmd(run: &Run, a: &PredictArgs) -> Result<()> {
    let kv = merge(
        run.source(),
        &[("mirror", flag(a.no_mirror, "false")), ("depth_scale", opt(&a.depth_scale))],
    )?;
    kv.check_keys(&["mirror", "depth_scale"])?;
    let mirror = kv.get("mirror")?.unwrap_or(true);
    let depth_scale: f64 = kv.get("depth_scale")?.unwrap_or(1000.0);
    let model = Checkpoint::read(&a.checkpoint)?.model()?;
    if model.config.in_channels != 3 {
        bail!(Error::Config(format!("{} is not a student checkpoint", a.checkpoint.display())));
    }
    if !(depth_scale > 0.0) || model.config.d_max as f64 * depth_scale > u16::MAX as f64 {
        return Err(usage(format!("depth_scale {depth_scale} cannot store depths up to {} m in 16 bits", model.config.d_max)));
    }
    let img = read_color_png(&a.image)?;
    let depth = if mirror {
        mirror_average_predict(&model, &img)?
    } else {
        predict(&model, &img)?
    };
    let name = stem(&a.image.file_name().unwrap_or_default().to_string_lossy());
    run.prepare_out()?;
    let (dp, pp) = (run.out.join(format!("{name}_depth.png")), run.out.join(format!("{name}_preview.png")));
    write_depth_png(&dp, &depth, depth_scale)?;
    write_color_png(&pp, &colormap::preview(&depth))?;
    let v = depth.values();
    let (lo, hi) = v.iter().fold((f32::MAX, f32::MIN), |(l, h), &x| (l.min(x), h.max(x)));
    println!("{} {}x{} depth {lo:.3}..{hi:.3} m", dp.display(), depth.height(), depth.width());
    let mut resolved = KvFile::default();
    resolved.set("mirror", mirror);
    resolved.set("depth_scale", depth_scale);
    run.finish(&resolved.to_string(), &[&a.checkpoint, &a.image], &[dp, pp])
}

fn report(run: &Run, a: &ReportArgs) -> Result<()> {
    let mut rows = Vec::new();
    for p in &a.reports {
        let path = if p.is_dir() { p.join("report.json") } else { p.clone() };
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let r = EvalReport::from_json(&text).map_err(|e| match e {
            Error::InvalidArgument(msg) => Error::Format { path: path.clone(), msg },
            other => other,
        })?;
        let label = path
            .parent()
            .and_then(|d| d.file_name())
            .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        rows.push((label, r.aggregate));
    }
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(3);
    let mut table = format!(
        "{:width$}  {:>8} {:>8} {:>8} {:>8} {:>8} {:>7} {:>7} {:>7} {:>9}\n",
        "run", "rel", "sq_rel", "rmse", "rmse_log", "log10", "d1", "d2", "d3", "pixels"
    );
    for (label, m) in &rows {
        table += &format!(
            "{label:width$}  {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>7.4} {:>7.4} {:>7.4} {:>9}\n",
            m.rel, m.sq_rel, m.rmse, m.rmse_log, m.log10, m.delta1, m.delta2, m.delta3, m.n_pixels
        );
    }
    print!("{table}");
    run.prepare_out()?;
    let out = run.out.join("summary.txt");
    fs::write(&out, &table).map_err(|e| io_err(&out, e))?;
    let inputs: Vec<&Path> = a.reports.iter().map(PathBuf::as_path).collect();
    run.finish("", &inputs, &[out])
}
