//! `mmm`: generate synthetic embeddings, train, evaluate and sweep.
//!
//! Exit codes: 0 success, 1 usage, 2 invalid input data or configuration,
//! 3 runtime failure (including clustering collapse and unwritable outputs).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use thiserror::Error;

use mmm_core::io::{read_embeddings, write_embeddings};
use mmm_core::metrics::{ari_report, MetricReport, METRICS_CSV_HEADER};
use mmm_core::model::{validate, PseudoLabeling};
use mmm_core::pipeline::{
    ablation_lattice, build_structures, evaluate, run_training, sweep_configs, Structures, TrainingRun,
};
use mmm_core::synth::{generate, SynthSpec};
use mmm_core::{EmbeddingSet, Label, Modality, PipelineConfig, Scope};

const VISIBLE_FILE: &str = "visible.emb";
const INFRARED_FILE: &str = "infrared.emb";

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] mmm_core::Error),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("{path}: {reason}")]
    Data { path: PathBuf, reason: String },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use mmm_core::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Read { .. } | CliError::Data { .. } => 2,
            CliError::Write { .. } => 3,
            CliError::Core(e) => match e {
                E::ClusteringCollapse { .. }
                | E::Structural(_)
                | E::Infeasible { .. }
                | E::NonFiniteCost { .. }
                | E::DegenerateLosses(_)
                | E::Metric(_) => 3,
                _ => 2,
            },
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "mmm", version, about = "Multi-memory pseudo-label matching for two-modality embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic visible/infrared pair plus a spec sidecar.
    Generate(GenerateArgs),
    /// Train on an embedding pair and write history, report and artifacts.
    Train(TrainArgs),
    /// Cluster, match and score an embedding pair without training.
    Eval(EvalArgs),
    /// Score pseudo-label files against the ground truth of an embedding pair.
    Ari(AriArgs),
    /// Train once per value of one config key, or over the ablation lattice.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Spec file of `key=value` lines; defaults apply otherwise.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Spec overrides applied after the file, last wins.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Directory holding visible.emb and infrared.emb.
    #[arg(long, conflicts_with_all = ["visible", "infrared"])]
    data: Option<PathBuf>,
    #[arg(long, requires = "infrared")]
    visible: Option<PathBuf>,
    #[arg(long, requires = "visible")]
    infrared: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Config file of `key=value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config overrides applied after the file, last wins.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Also write the metrics CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AriArgs {
    #[command(flatten)]
    data: DataArgs,
    /// One label per line for the visible samples; -1 marks noise.
    #[arg(long)]
    visible_labels: PathBuf,
    /// One label per line for the infrared samples, in the same label space.
    #[arg(long)]
    infrared_labels: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Config key to vary, or `ablation` for the five-configuration lattice.
    #[arg(long)]
    axis: String,
    /// Comma-separated values for the axis; unused for `ablation`.
    #[arg(long, value_delimiter = ',')]
    values: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    /// Number of configurations trained concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn load_set(path: &Path, expected: Modality) -> Result<EmbeddingSet> {
    let data = |reason: String| CliError::Data {
        path: path.to_path_buf(),
        reason,
    };
    let raw = read_embeddings(&read(path)?).map_err(|e| data(e.to_string()))?;
    let violations = validate(&raw);
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(data(list.join("; ")));
    }
    let set = EmbeddingSet::from_raw(raw).map_err(|e| data(e.to_string()))?;
    if set.modality().iter().any(|&m| m != expected) {
        return Err(data(format!("expected only {expected} samples")));
    }
    Ok(set)
}

impl DataArgs {
    fn paths(&self) -> Result<(PathBuf, PathBuf)> {
        match (&self.data, &self.visible, &self.infrared) {
            (Some(dir), _, _) => Ok((dir.join(VISIBLE_FILE), dir.join(INFRARED_FILE))),
            (None, Some(v), Some(r)) => Ok((v.clone(), r.clone())),
            _ => Err(CliError::Usage(
                "give --data <dir> or both --visible and --infrared".into(),
            )),
        }
    }

    fn load(&self) -> Result<(EmbeddingSet, EmbeddingSet)> {
        let (v, r) = self.paths()?;
        Ok((load_set(&v, Modality::Visible)?, load_set(&r, Modality::Infrared)?))
    }
}

fn split_override(item: &str) -> Result<(&str, &str)> {
    item.split_once('=')
        .ok_or_else(|| CliError::Usage(format!("expected KEY=VALUE, got `{item}`")))
}

impl ConfigArgs {
    fn load(&self) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_text(&read(path)?)?;
        }
        for item in &self.overrides {
            let (k, v) = split_override(item)?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn cmd_generate(args: &GenerateArgs) -> Result<String> {
    let mut spec = SynthSpec::default();
    if let Some(path) = &args.spec {
        spec = SynthSpec::from_text(&read(path)?)?;
    }
    for item in &args.overrides {
        let (k, v) = split_override(item)?;
        spec.set(k.trim(), v.trim())?;
    }
    spec.validate()?;
    let (visible, infrared) = generate(&spec)?;
    create_dir(&args.out)?;
    write(&args.out.join(VISIBLE_FILE), &write_embeddings(&visible))?;
    write(&args.out.join(INFRARED_FILE), &write_embeddings(&infrared))?;
    write(&args.out.join("spec.txt"), &spec.to_text())?;
    Ok(format!(
        "wrote {} visible and {} infrared samples (d={}) to {}\n",
        visible.len(),
        infrared.len(),
        visible.dim(),
        args.out.display()
    ))
}

fn labels_text(labels: &PseudoLabeling) -> String {
    labels.labels().iter().map(|l| format!("{l}\n")).collect()
}

fn confidence_text(structures: &Structures) -> String {
    let mut out = String::from("modality,row,label,weight\n");
    for (tag, labels, weights) in [
        (Modality::Visible.tag(), &structures.shared.visible, &structures.confidence.visible),
        (Modality::Infrared.tag(), &structures.shared.infrared, &structures.confidence.infrared),
    ] {
        for (row, (l, w)) in labels.labels().iter().zip(weights.weights()).enumerate() {
            let _ = writeln!(out, "{tag},{row},{l},{w}");
        }
    }
    out
}

fn config_json(cfg: &PipelineConfig) -> serde_json::Value {
    let map: serde_json::Map<String, serde_json::Value> = mmm_core::CONFIG_KEYS
        .iter()
        .map(|&k| (k.to_string(), json!(cfg.get(k).expect("canonical key"))))
        .collect();
    serde_json::Value::Object(map)
}

fn report_json(run: &TrainingRun) -> String {
    let cfg = &run.config;
    let [cv, cr, cj] = run.final_clusters();
    let report = json!({
        "header": {
            "matching": cfg.matching_name(),
            "n_memories": cfg.n_memories,
            "lambda_intra": cfg.lambda_intra,
            "lambda_inter": cfg.lambda_inter,
            "epochs": cfg.epochs,
            "seed": cfg.seed,
        },
        "config": config_json(cfg),
        "final": {
            "clusters": {"visible": cv, "infrared": cr, "joint": cj},
            "matched": run.final_structures.assignment.pairs().len(),
            "metrics": run.final_metrics,
        },
        "last_epoch": run.history.last().map(|r| json!({
            "epoch": r.epoch,
            "l_overall": r.loss.l_overall,
            "l_cmc": r.loss.l_cmc,
            "l_sca": r.loss.l_sca,
        })),
    });
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    text
}

fn metrics_summary(m: &MetricReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "ARI  rgb {:.4}  ir {:.4}  all {:.4}", m.ari.rgb, m.ari.ir, m.ari.all);
    for (name, r) in [
        ("infrared->visible", &m.infrared_to_visible),
        ("visible->infrared", &m.visible_to_infrared),
    ] {
        let _ = writeln!(
            out,
            "{name}: rank1 {:.4}  rank5 {:.4}  rank10 {:.4}  rank20 {:.4}  mAP {:.4}",
            r.rank[0], r.rank[1], r.rank[2], r.rank[3], r.map
        );
    }
    out
}

fn cmd_train(args: &TrainArgs) -> Result<String> {
    let cfg = args.config.load()?;
    let (visible, infrared) = args.data.load()?;
    let run = run_training(&visible, &infrared, &cfg)?;
    let out = &args.out;
    create_dir(out)?;
    write(&out.join("history.csv"), &run.history_csv())?;
    write(&out.join("report.json"), &report_json(&run))?;
    write(&out.join("config.txt"), &cfg.to_text())?;
    write(&out.join(VISIBLE_FILE), &write_embeddings(&run.visible))?;
    write(&out.join(INFRARED_FILE), &write_embeddings(&run.infrared))?;
    write(&out.join("assignment.csv"), &run.final_structures.assignment.to_csv())?;
    write(&out.join("labels_visible.txt"), &labels_text(&run.final_structures.shared.visible))?;
    write(&out.join("labels_infrared.txt"), &labels_text(&run.final_structures.shared.infrared))?;
    write(&out.join("confidence.csv"), &confidence_text(&run.final_structures))?;

    let mut msg = format!(
        "trained {} epochs ({}, lambda_intra={}, lambda_inter={})\n",
        cfg.epochs,
        cfg.matching_name(),
        cfg.lambda_intra,
        cfg.lambda_inter
    );
    if let Some(m) = &run.final_metrics {
        msg.push_str(&metrics_summary(m));
    }
    Ok(msg)
}

fn metrics_csv(m: &MetricReport) -> String {
    format!("{METRICS_CSV_HEADER}\n{}\n", m.csv_row())
}

fn cmd_eval(args: &EvalArgs) -> Result<String> {
    let cfg = args.config.load()?;
    let (visible, infrared) = args.data.load()?;
    let structures = build_structures(&visible, &infrared, &cfg, 0)?;
    let metrics = evaluate(&structures, &visible, &infrared)?.ok_or_else(|| {
        mmm_core::Error::MissingGroundTruth("evaluation needs identities on both modalities".into())
    })?;
    let csv = metrics_csv(&metrics);
    if let Some(path) = &args.out {
        write(path, &csv)?;
    }
    Ok(format!("{csv}{}", metrics_summary(&metrics)))
}

fn load_labels(path: &Path, scope: Scope, expected: usize) -> Result<PseudoLabeling> {
    let text = read(path)?;
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        labels.push(line.parse::<Label>().map_err(|_| CliError::Data {
            path: path.to_path_buf(),
            reason: format!("line {}: bad label `{line}`", i + 1),
        })?);
    }
    if labels.len() != expected {
        return Err(CliError::Data {
            path: path.to_path_buf(),
            reason: format!("{} labels for {expected} samples", labels.len()),
        });
    }
    PseudoLabeling::new(scope, labels).map_err(|e| CliError::Data {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn cmd_ari(args: &AriArgs) -> Result<String> {
    let (visible, infrared) = args.data.load()?;
    let shared = mmm_core::matching::SharedLabels {
        visible: load_labels(&args.visible_labels, Scope::Visible, visible.len())?,
        infrared: load_labels(&args.infrared_labels, Scope::Infrared, infrared.len())?,
        flipped: false,
    };
    let a = ari_report(&shared, visible.true_identity(), infrared.true_identity())?;
    Ok(format!(
        "ari_rgb,ari_ir,ari_all\n{},{},{}\nARI  rgb {:.4}  ir {:.4}  all {:.4}\n",
        a.rgb, a.ir, a.all, a.rgb, a.ir, a.all
    ))
}

fn sweep_row(name: &str, outcome: &std::result::Result<TrainingRun, mmm_core::Error>) -> String {
    match outcome {
        Ok(run) => {
            let [cv, cr, cj] = run.final_clusters();
            let metrics = run
                .final_metrics
                .as_ref()
                .map_or_else(|| ",,,,,,,".to_string(), MetricReport::csv_row);
            format!("{name},{cv},{cr},{cj},{metrics},")
        }
        Err(e) => {
            let reason = e.to_string().replace([',', '\n'], ";");
            format!("{name},,,,,,,,,,,,{reason}")
        }
    }
}

fn cmd_sweep(args: &SweepArgs) -> Result<String> {
    let base = args.config.load()?;
    let (visible, infrared) = args.data.load()?;
    let configs: Vec<(String, PipelineConfig)> = if args.axis == "ablation" {
        ablation_lattice(&base)
            .into_iter()
            .map(|(n, c)| (n.to_string(), c))
            .collect()
    } else {
        if args.values.is_empty() {
            return Err(CliError::Usage(format!("--values is required for axis `{}`", args.axis)));
        }
        sweep_configs(&base, &args.axis, &args.values)?
    };
    let jobs = args.jobs.max(1);
    let mut outcomes: Vec<Option<std::result::Result<TrainingRun, mmm_core::Error>>> =
        (0..configs.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (chunk_configs, chunk_out) in configs
            .chunks(configs.len().div_ceil(jobs).max(1))
            .zip(outcomes.chunks_mut(configs.len().div_ceil(jobs).max(1)))
        {
            let (visible, infrared) = (&visible, &infrared);
            scope.spawn(move || {
                for ((_, cfg), slot) in chunk_configs.iter().zip(chunk_out) {
                    *slot = Some(run_training(visible, infrared, cfg));
                }
            });
        }
    });

    create_dir(&args.out)?;
    let mut table = format!("{},clusters_v,clusters_r,clusters_vr,{METRICS_CSV_HEADER},error\n", args.axis);
    for (i, ((name, _), outcome)) in configs.iter().zip(&outcomes).enumerate() {
        let outcome = outcome.as_ref().expect("every configuration ran");
        table.push_str(&sweep_row(name, outcome));
        table.push('\n');
        if let Ok(run) = outcome {
            let dir = args.out.join(format!("run{i}"));
            create_dir(&dir)?;
            write(&dir.join("history.csv"), &run.history_csv())?;
            write(&dir.join("report.json"), &report_json(run))?;
        }
    }
    write(&args.out.join("sweep.csv"), &table)?;
    let failed = outcomes.iter().flatten().filter(|o| o.is_err()).count();
    Ok(format!("{table}{} of {} configurations failed\n", failed, configs.len()))
}

fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ari(a) => cmd_ari(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(msg) => {
            print!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
