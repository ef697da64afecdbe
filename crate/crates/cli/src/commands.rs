use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vidalign::alignment::{AlignmentGraph, EdgeFailure, Registration};
use vidalign::grounding::ground_query;
use vidalign::io::{
    load_dataset, read_checkpoint, read_graph, read_keypoints3d, read_queries, read_string,
    write_checkpoint, write_file, write_graph, write_keypoints3d, write_matches, write_pck,
    Checkpoint, ClassRow, Dataset, IoError, PckReport,
};
use vidalign::par;
use vidalign::pipeline::{
    build_graph, evaluate_queries, evaluate_transfer, match_videos, prepare_grounding,
    register_groups, train, transfer_all, triangulate_all, PipelineConfig, PipelineError,
    TransferMode, TransferredKeypoints,
};
use vidalign::synth::{generate, SynthConfig, SynthError};

use crate::{Cli, Command, GlobalArgs, GroundCommand, Mode};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Pipeline(PipelineError),
    Synth(SynthError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 1,
            Self::Pipeline(e) if e.is_internal() => 2,
            Self::Synth(SynthError::Internal(_)) => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) => f.write_str(m),
            Self::Pipeline(e) => write!(f, "{e}"),
            Self::Synth(e) => write!(f, "{e}"),
        }
    }
}

impl<T: Into<PipelineError>> From<T> for CliError {
    fn from(e: T) -> Self {
        Self::Pipeline(e.into())
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> Result<()> {
    let threads = cli.global.threads;
    par::with_threads(threads, move || dispatch(cli))
}

fn dispatch(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Synth => synth(g),
        Command::Match => match_cmd(g),
        Command::Align => align(g),
        Command::Transfer {
            source,
            mode,
            graph,
        } => transfer(g, source.as_deref(), *mode, graph.as_deref()),
        Command::EvalPck { predictions } => eval_pck(g, predictions),
        Command::Ground { command } => match command {
            GroundCommand::Train { graph } => ground_train(g, graph.as_deref()),
            GroundCommand::Query { model, group, text } => ground_query_cmd(g, model, group, text),
            GroundCommand::Eval {
                model,
                queries,
                scales,
            } => ground_eval(g, model, queries, scales.as_deref()),
        },
    }
}

fn parse_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_string(path)?;
    toml::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: {}", path.display(), e.message())))
}

fn pipeline_config(g: &GlobalArgs) -> Result<PipelineConfig> {
    let mut cfg: PipelineConfig = match &g.config {
        Some(p) => parse_toml(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output(g: &GlobalArgs) -> Result<&Path> {
    g.output
        .as_deref()
        .ok_or_else(|| CliError::Usage("--output is required for this command".into()))
}

fn dataset(g: &GlobalArgs, cfg: &PipelineConfig) -> Result<Dataset> {
    let m = g
        .manifest
        .as_deref()
        .ok_or_else(|| CliError::Usage("--manifest is required for this command".into()))?;
    let ds = load_dataset(m, &cfg.load_options())?;
    log::info!(
        "loaded {} videos ({} discarded)",
        ds.videos.len(),
        ds.discarded.len()
    );
    Ok(ds)
}

fn toml_string<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| {
        CliError::Pipeline(PipelineError::Internal(format!(
            "report serialization: {e}"
        )))
    })
}

fn synth(g: &GlobalArgs) -> Result<()> {
    let mut cfg: SynthConfig = match &g.config {
        Some(p) => parse_toml(p)?,
        None => SynthConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    let out = output(g)?;
    let scene = generate(&cfg).map_err(CliError::Synth)?;
    let manifest = scene.write(out).map_err(CliError::Synth)?;
    write_file(&out.join("gt").join("config.toml"), toml_string(&cfg)?)?;
    println!(
        "wrote {} videos; manifest {}",
        scene.videos.len(),
        manifest.display()
    );
    Ok(())
}

fn match_cmd(g: &GlobalArgs) -> Result<()> {
    let cfg = pipeline_config(g)?;
    let out = output(g)?;
    let ds = dataset(g, &cfg)?;
    let matches = match_videos(&ds, &cfg)?;
    let dir = out.join("matches");
    for pm in &matches {
        let stem = format!("{}__{}", pm.video_a, pm.video_b);
        write_matches(&dir.join(format!("{stem}.raw.m2d")), &pm.raw)?;
        write_matches(&dir.join(format!("{stem}.flt.m2d")), &pm.filtered)?;
        let count =
            |sets: &[vidalign::matching::MatchSet]| sets.iter().map(|s| s.len()).sum::<usize>();
        println!(
            "{stem}: {} raw, {} after flow filtering",
            count(&pm.raw),
            count(&pm.filtered)
        );
    }
    Ok(())
}

fn graph_for(
    ds: &Dataset,
    cfg: &PipelineConfig,
    path: Option<&Path>,
) -> Result<(AlignmentGraph, Vec<EdgeFailure>)> {
    match path {
        Some(p) => Ok((read_graph(p)?, Vec::new())),
        None => Ok(build_graph(ds, &match_videos(ds, cfg)?, cfg)?),
    }
}

#[derive(Serialize)]
struct TransformRow {
    id: String,
    scale: f64,
    rotation: [f64; 9],
    translation: [f64; 3],
}

#[derive(Serialize)]
struct GroupRow {
    group: String,
    reference: String,
    unregistered: Vec<String>,
    transforms: Vec<TransformRow>,
}

#[derive(Serialize)]
struct FailureRow {
    from: String,
    to: String,
    error: String,
}

#[derive(Serialize)]
struct RegistrationReport {
    groups: Vec<GroupRow>,
    failed_edges: Vec<FailureRow>,
}

fn registration_report(
    regs: &BTreeMap<String, Registration>,
    failures: &[EdgeFailure],
) -> RegistrationReport {
    let groups = regs
        .iter()
        .map(|(group, r)| GroupRow {
            group: group.clone(),
            reference: r.reference.clone(),
            unregistered: r.unregistered.clone(),
            transforms: r
                .transforms
                .iter()
                .map(|(id, t)| {
                    let m = t.rotation();
                    TransformRow {
                        id: id.clone(),
                        scale: t.scale(),
                        rotation: std::array::from_fn(|k| m[(k / 3, k % 3)]),
                        translation: [t.translation().x, t.translation().y, t.translation().z],
                    }
                })
                .collect(),
        })
        .collect();
    let failed_edges = failures
        .iter()
        .map(|f| FailureRow {
            from: f.from_id.clone(),
            to: f.to_id.clone(),
            error: f.error.to_string(),
        })
        .collect();
    RegistrationReport {
        groups,
        failed_edges,
    }
}

fn align(g: &GlobalArgs) -> Result<()> {
    let cfg = pipeline_config(g)?;
    let out = output(g)?;
    let ds = dataset(g, &cfg)?;
    let (graph, failures) = graph_for(&ds, &cfg, None)?;
    for f in &failures {
        log::warn!("no edge {} - {}: {}", f.from_id, f.to_id, f.error);
    }
    let regs = register_groups(&ds, &graph, g.reference.as_deref())?;
    write_graph(&out.join("graph.agr"), &graph)?;
    write_file(
        &out.join("registration.toml"),
        toml_string(&registration_report(&regs, &failures))?,
    )?;
    println!(
        "{} edges, {} failed pairs",
        graph.edges().len(),
        failures.len()
    );
    for (group, r) in &regs {
        println!(
            "{group}: reference {}, {} registered, {} unregistered",
            r.reference,
            r.transforms.len(),
            r.unregistered.len()
        );
    }
    Ok(())
}

fn transfer(g: &GlobalArgs, source: Option<&str>, mode: Mode, graph: Option<&Path>) -> Result<()> {
    let cfg = pipeline_config(g)?;
    let out = output(g)?;
    let ds = dataset(g, &cfg)?;
    let (graph, _) = graph_for(&ds, &cfg, graph)?;
    let tri = triangulate_all(&ds);
    for (id, t) in &tri {
        for o in &t.omitted {
            log::warn!("video {id}: keypoint {} omitted ({:?})", o.name, o.reason);
        }
    }
    let mode = match mode {
        Mode::Graph => TransferMode::Graph,
        Mode::Direct => TransferMode::Direct,
    };
    let run = transfer_all(&ds, &graph, &tri, mode, source)?;
    let dir = out.join("transfer");
    for t in &run.transfers {
        write_keypoints3d(
            &dir.join(format!("{}__{}.kp3", t.source, t.target)),
            &t.target,
            &t.keypoints,
        )?;
    }
    if !run.failures.is_empty() {
        let rows: Vec<FailureRow> = run
            .failures
            .iter()
            .map(|f| FailureRow {
                from: f.source.clone(),
                to: f.target.clone(),
                error: f.reason.clone(),
            })
            .collect();
        #[derive(Serialize)]
        struct Failures {
            failed: Vec<FailureRow>,
        }
        write_file(
            &dir.join("failures.toml"),
            toml_string(&Failures { failed: rows })?,
        )?;
    }
    println!(
        "{} transfers, {} failed",
        run.transfers.len(),
        run.failures.len()
    );
    Ok(())
}

fn read_predictions(dir: &Path) -> Result<Vec<TransferredKeypoints>> {
    let entries = std::fs::read_dir(dir).map_err(|e| IoError::Io {
        path: dir.display().to_string(),
        message: e.to_string(),
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "kp3"))
        .collect();
    files.sort();
    let mut out = Vec::new();
    for f in files {
        let stem = f
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let Some((source, target)) = stem.split_once("__") else {
            return Err(CliError::Usage(format!(
                "{}: prediction files are named <source>__<target>.kp3",
                f.display()
            )));
        };
        let (frame_of, keypoints) = read_keypoints3d(&f)?;
        if frame_of != target {
            return Err(IoError::invariant(
                &f.display().to_string(),
                None,
                format!("expressed in {frame_of}, file name says {target}"),
            )
            .into());
        }
        out.push(TransferredKeypoints {
            source: source.into(),
            target: target.into(),
            keypoints,
        });
    }
    Ok(out)
}

fn eval_pck(g: &GlobalArgs, predictions: &Path) -> Result<()> {
    let cfg = pipeline_config(g)?;
    let out = output(g)?;
    let ds = dataset(g, &cfg)?;
    let preds = read_predictions(predictions)?;
    let tri = triangulate_all(&ds);
    let ev = evaluate_transfer(&ds, &tri, &preds, &cfg)?;
    for s in &ev.skipped {
        log::warn!("pair {} -> {} skipped: {}", s.source, s.target, s.reason);
    }
    let mut report = PckReport::default();
    for p in &ev.pairs {
        report
            .curves
            .insert(format!("{}__{}", p.source, p.target), p.curve.clone());
    }
    if let Some(m) = &ev.mean {
        report.curves.insert("mean".into(), m.clone());
        let summary: Vec<String> = m
            .thresholds()
            .iter()
            .zip(m.values())
            .map(|(t, v)| format!("{t}cm:{v:.4}"))
            .collect();
        println!(
            "mean PCK over {} pairs: {}",
            ev.pairs.len(),
            summary.join(" ")
        );
    } else {
        println!("no evaluable pairs");
    }
    write_pck(&out.join("pck.pck"), &report)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct Scales {
    metric_scale_cm: BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct TrainSummary {
    samples: usize,
    initial_loss: f64,
    final_loss: f64,
    train_accuracy: f64,
    loss_history: Vec<f64>,
    pairs: BTreeMap<String, usize>,
    dropped: BTreeMap<String, BTreeMap<String, usize>>,
}

fn ground_train(g: &GlobalArgs, graph: Option<&Path>) -> Result<()> {
    let cfg = pipeline_config(g)?;
    let out = output(g)?;
    let ds = dataset(g, &cfg)?;
    let (graph, _) = graph_for(&ds, &cfg, graph)?;
    let regs = register_groups(&ds, &graph, g.reference.as_deref())?;
    let data = prepare_grounding(&ds, &regs, &cfg.grounding)?;
    let (model, report) = train(&data, &cfg)?;
    let grids = data
        .grids
        .iter()
        .filter(|(k, _)| model.heads().contains_key(*k))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    let ck = Checkpoint::new(model, grids)?;
    let dir = out.join("grounding");
    write_checkpoint(&dir.join("model.gmod"), &ck)?;
    write_file(
        &dir.join("scales.toml"),
        toml_string(&Scales {
            metric_scale_cm: data.metric_scales.clone(),
        })?,
    )?;
    let summary = TrainSummary {
        samples: report.samples,
        initial_loss: report.initial_loss,
        final_loss: report
            .loss_history
            .last()
            .copied()
            .unwrap_or(report.initial_loss),
        train_accuracy: report.train_accuracy,
        loss_history: report.loss_history.clone(),
        pairs: data
            .tasks
            .iter()
            .map(|(k, t)| (k.clone(), t.pairs.len()))
            .collect(),
        dropped: data
            .dropped
            .iter()
            .map(|(k, d)| {
                (
                    k.clone(),
                    d.iter()
                        .map(|(r, n)| (r.as_str().to_string(), *n))
                        .collect(),
                )
            })
            .collect(),
    };
    write_file(&dir.join("train.toml"), toml_string(&summary)?)?;
    println!(
        "trained on {} pairs: loss {:.4} -> {:.4}, train accuracy {:.3}",
        summary.samples, summary.initial_loss, summary.final_loss, summary.train_accuracy
    );
    Ok(())
}

fn is_uniform(scores: &[f64]) -> bool {
    scores.windows(2).all(|w| w[0] == w[1])
}

fn ground_query_cmd(g: &GlobalArgs, model: &Path, group: &str, text: &str) -> Result<()> {
    let ck = read_checkpoint(model)?;
    let grid = ck.grids.get(group).ok_or_else(|| {
        CliError::Usage(format!(
            "model has no head for group {group}; known: {:?}",
            ck.grids.keys().collect::<Vec<_>>()
        ))
    })?;
    let r = ground_query(&ck.model, group, text, grid)?;
    let uniform = is_uniform(&r.scores);
    if uniform {
        log::warn!(
            "head {group} gives a uniform distribution for {text:?}; the model looks untrained"
        );
        eprintln!("warning: uniform voxel distribution; the model looks untrained");
    }
    let best = r.scores[r.label];
    let json = serde_json::json!({
        "group": group,
        "text": text,
        "label": r.label,
        "voxel": grid.active_voxels()[r.label],
        "score": best,
        "point": [r.predicted_point.x, r.predicted_point.y, r.predicted_point.z],
        "uniform": uniform,
    });
    println!("{json}");
    if let Some(out) = &g.output {
        write_file(&out.join("query.json"), format!("{json}\n"))?;
    }
    Ok(())
}

fn ground_eval(g: &GlobalArgs, model: &Path, queries: &Path, scales: Option<&Path>) -> Result<()> {
    let cfg = pipeline_config(g)?;
    let out = output(g)?;
    let ck = read_checkpoint(model)?;
    let qs = read_queries(queries)?;
    let scales_path = scales
        .map(Path::to_path_buf)
        .unwrap_or_else(|| model.with_file_name("scales.toml"));
    let scales: Scales = parse_toml(&scales_path)?;
    let ev = evaluate_queries(&qs, &ck.model, &ck.grids, &scales.metric_scale_cm, &cfg)?;
    let mut report = PckReport::default();
    report.curves.insert("method".into(), ev.method.clone());
    report.curves.insert("chance".into(), ev.chance.clone());
    for (class, n, chance, method) in &ev.classes {
        for (k, t) in cfg.grounding.thresholds.iter().enumerate() {
            report.classes.push(ClassRow {
                class: class.clone(),
                threshold_cm: *t,
                queries: *n,
                chance: chance[k],
                method: method[k],
            });
        }
    }
    write_pck(&out.join("grounding_pck.pck"), &report)?;
    for (t, (m, c)) in cfg
        .grounding
        .thresholds
        .iter()
        .zip(ev.method.values().iter().zip(ev.chance.values()))
    {
        println!("threshold {t}: method {m:.4}, chance {c:.4}");
    }
    Ok(())
}
