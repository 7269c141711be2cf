//! The commands behind the `egp` binary. Each command reads its inputs from
//! files, computes everything in memory and only then writes its outputs, so
//! a failing command leaves the output directory untouched (except for a
//! rejected fusion plan, which is written on purpose).

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::{ExperimentConfig, ExperimentData};
use crate::entropy::{classify_states, collect_stats, EntropyReport};
use crate::error::{Error, Result};
use crate::nn::{train, EpochStats, Network};
use crate::prune::{egp_iterate, log_csv, PruneData, PruneMode};
use crate::reduce::{apply_plan, plan_reduction, Tolerance};
use crate::report::{build_reports, layer_states, model_label, ExperimentRecord, Stage};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAIN_HISTORY_FILE: &str = "train_history.csv";
pub const TRAIN_RECORD_FILE: &str = "train_record.json";
pub const PRUNED_FILE: &str = "pruned.json";
pub const PRUNE_LOG_FILE: &str = "prune_log.csv";
pub const PRUNE_RECORD_FILE: &str = "prune_record.json";
pub const ENTROPY_NEURONS_FILE: &str = "entropy_neurons.csv";
pub const ENTROPY_LAYERS_FILE: &str = "entropy_layers.csv";
pub const REDUCED_FILE: &str = "reduced.json";
pub const PLAN_FILE: &str = "plan.json";
pub const REDUCE_RECORD_FILE: &str = "reduce_record.json";
pub const SCRATCH_FILE: &str = "scratch.json";
pub const SCRATCH_HISTORY_FILE: &str = "scratch_history.csv";
pub const SCRATCH_RECORD_FILE: &str = "scratch_record.json";
pub const RESULTS_FILE: &str = "results.csv";
pub const STATES_CSV_FILE: &str = "states.csv";
pub const STATES_SVG_FILE: &str = "states.svg";
pub const ABLATION_FILE: &str = "ablation.csv";

const STATS_BATCH: usize = 256;

/// Command-line inputs shared by the commands.
#[derive(Debug, Clone, Default)]
pub struct Options {
    pub config: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub mode: Option<PruneMode>,
}

/// What a command did, for the terminal.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub summary: String,
    pub written: Vec<PathBuf>,
}

struct Loaded {
    cfg: ExperimentConfig,
    raw: String,
    data: ExperimentData,
}

fn load(opts: &Options) -> Result<Loaded> {
    let path = opts
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let raw = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::from_json(&raw)?;
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = opts.mode {
        cfg.prune.mode = mode;
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let data = cfg.load_data(base)?;
    Ok(Loaded { cfg, raw, data })
}

fn checkpoint_path(opts: &Options) -> Result<&Path> {
    opts.checkpoint
        .as_deref()
        .ok_or_else(|| Error::Config("--checkpoint is required".into()))
}

fn load_checkpoint(path: &Path, data: &ExperimentData) -> Result<Network> {
    let net = Network::load(path)?;
    if net.input_shape() != data.train.sample_shape() || net.num_outputs() != data.train.num_classes {
        return Err(Error::Shape(format!(
            "checkpoint maps {:?} to {} outputs, data has samples {:?} and {} classes",
            net.input_shape(),
            net.num_outputs(),
            data.train.sample_shape(),
            data.train.num_classes
        )));
    }
    Ok(net)
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

/// Writes every file through a temporary sibling and a rename.
fn write_outputs(out: &Path, files: &[(&str, String)]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out)?;
    let mut written = Vec::with_capacity(files.len());
    for (name, contents) in files {
        let target = out.join(name);
        let tmp = out.join(format!(".{name}.tmp"));
        fs::write(&tmp, contents)?;
        fs::rename(&tmp, &target)?;
        written.push(target);
    }
    Ok(written)
}

fn history_csv(history: &[EpochStats]) -> String {
    let mut s = String::from("epoch,loss,train_accuracy\n");
    for h in history {
        s.push_str(&format!("{},{},{}\n", h.epoch, h.loss, h.accuracy));
    }
    s
}

fn entropy_report(net: &Network, l: &Loaded) -> Result<EntropyReport> {
    let set = l.data.entropy_set(l.cfg.entropy_split);
    classify_states(&collect_stats(net, set, STATS_BATCH)?)
}

fn record(l: &Loaded, stage: Stage, mode: &str, net: &Network, top1: f64, started: Instant) -> ExperimentRecord {
    ExperimentRecord {
        stage,
        name: l.cfg.name.clone(),
        model: model_label(net),
        dataset: l.cfg.dataset_label(),
        mode: mode.into(),
        seed: l.cfg.seed,
        config: l.raw.clone(),
        topology: net.topology(),
        sparsity_pct: net.sparsity_pct(),
        train_history: Vec::new(),
        iterations: Vec::new(),
        entropy: Vec::new(),
        plan: None,
        accuracy_before_reduction: None,
        top1,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    }
}

fn train_fresh(l: &Loaded, mut net: Network) -> Result<(Network, Vec<EpochStats>)> {
    let history = train(&mut net, &l.data.train, &l.cfg.train)?;
    Ok((net, history))
}

/// Trains a fresh network from the config.
pub fn cmd_train(opts: &Options) -> Result<Outcome> {
    let started = Instant::now();
    let l = load(opts)?;
    let net = l.cfg.build_network(&l.data, l.cfg.seed)?;
    let (mut net, history) = train_fresh(&l, net)?;
    net.metadata.insert("stage".into(), "train".into());
    let top1 = net.accuracy(&l.data.test)?;
    let report = entropy_report(&net, &l)?;
    let mut rec = record(&l, Stage::Train, "dense", &net, top1, started);
    rec.train_history = history.clone();
    rec.entropy = layer_states(&report);
    let written = write_outputs(
        &opts.out,
        &[
            (CHECKPOINT_FILE, net.to_checkpoint_json()),
            (TRAIN_HISTORY_FILE, history_csv(&history)),
            (TRAIN_RECORD_FILE, rec.to_json()),
        ],
    )?;
    Ok(Outcome {
        summary: format!("trained {} for {} epochs: test top-1 {:.2}%", model_label(&net), history.len(), 100.0 * top1),
        written,
    })
}

/// Runs the iterative pruning loop on a trained checkpoint.
pub fn cmd_prune(opts: &Options) -> Result<Outcome> {
    let started = Instant::now();
    let l = load(opts)?;
    let src = checkpoint_path(opts)?;
    let net = load_checkpoint(src, &l.data)?;
    let pcfg = l.cfg.prune_config();
    let data = PruneData {
        train: &l.data.train,
        entropy: l.data.entropy_set(l.cfg.entropy_split),
        eval: Some(&l.data.test),
    };
    let outcome = egp_iterate(net, data, &pcfg)?;
    let mut net = outcome.net;
    net.metadata.insert("stage".into(), "prune".into());
    net.metadata.insert("prune_mode".into(), pcfg.mode.as_str().into());
    net.metadata.insert("source_checkpoint".into(), file_name(src));
    let top1 = net.accuracy(&l.data.test)?;
    let mut rec = record(&l, Stage::Prune, pcfg.mode.as_str(), &net, top1, started);
    rec.iterations = outcome.log.clone();
    rec.entropy = layer_states(&outcome.report);
    let written = write_outputs(
        &opts.out,
        &[
            (PRUNED_FILE, net.to_checkpoint_json()),
            (PRUNE_LOG_FILE, log_csv(&outcome.log)),
            (ENTROPY_NEURONS_FILE, outcome.report.neurons_csv()),
            (ENTROPY_LAYERS_FILE, outcome.report.layers_csv()),
            (PRUNE_RECORD_FILE, rec.to_json()),
        ],
    )?;
    Ok(Outcome {
        summary: format!(
            "{} pruning, {} iterations: sparsity {}%, {} zero-entropy layers, test top-1 {:.2}%",
            pcfg.mode.as_str(),
            outcome.log.len(),
            net.sparsity_pct(),
            outcome.report.zero_entropy_layers().len(),
            100.0 * top1
        ),
        written,
    })
}

/// Plans and applies structural edits to a checkpoint, verifying logits on
/// the entropy split.
pub fn cmd_reduce(opts: &Options) -> Result<Outcome> {
    let started = Instant::now();
    let l = load(opts)?;
    let src = checkpoint_path(opts)?;
    let net = load_checkpoint(src, &l.data)?;
    let report = entropy_report(&net, &l)?;
    let plan = plan_reduction(&net, &report)?;
    let probes = &l.data.entropy_set(l.cfg.entropy_split).images;
    let tol = Tolerance {
        max_rel_diff: l.cfg.reduce.max_rel_diff,
        ..Tolerance::default()
    };
    let (mut reduced, plan) = match apply_plan(&net, &plan, probes, tol) {
        Ok(v) => v,
        Err(Error::EquivalenceRejected(plan)) => {
            write_outputs(&opts.out, &[(PLAN_FILE, plan.to_json())])?;
            return Err(Error::EquivalenceRejected(plan));
        }
        Err(e) => return Err(e),
    };
    let mode = net.metadata.get("prune_mode").cloned().unwrap_or_else(|| "dense".into());
    reduced.metadata.insert("stage".into(), "reduce".into());
    reduced.metadata.insert("plan_hash".into(), plan.edits_hash());
    reduced.metadata.insert("source_checkpoint".into(), file_name(src));
    let before = net.accuracy(&l.data.test)?;
    let top1 = reduced.accuracy(&l.data.test)?;
    let mut rec = record(&l, Stage::Reduce, &mode, &reduced, top1, started);
    rec.sparsity_pct = net.sparsity_pct();
    rec.entropy = layer_states(&report);
    rec.plan = Some((&plan).into());
    rec.accuracy_before_reduction = Some(before);
    let written = write_outputs(
        &opts.out,
        &[
            (REDUCED_FILE, reduced.to_checkpoint_json()),
            (PLAN_FILE, plan.to_json()),
            (REDUCE_RECORD_FILE, rec.to_json()),
        ],
    )?;
    let v = plan.verification.expect("applied plans are verified");
    Ok(Outcome {
        summary: format!(
            "layers removed: {}/{} (fused {}, linearized {}); max_rel_diff {:e}; test top-1 {:.2}% -> {:.2}%",
            plan.layers_removed_count,
            plan.considered_layers,
            plan.layers_removed_count,
            plan.layers_linearized_count,
            v.max_rel_diff,
            100.0 * before,
            100.0 * top1
        ),
        written,
    })
}

/// Trains the architecture of a (reduced) checkpoint from a fresh
/// initialization for the full schedule.
pub fn cmd_scratch(opts: &Options) -> Result<Outcome> {
    let started = Instant::now();
    let l = load(opts)?;
    let src = checkpoint_path(opts)?;
    let template = load_checkpoint(src, &l.data)?;
    let (mut net, history) = train_fresh(&l, template.reinitialized(l.cfg.seed))?;
    net.metadata.insert("stage".into(), "scratch".into());
    net.metadata.insert("source_checkpoint".into(), file_name(src));
    let top1 = net.accuracy(&l.data.test)?;
    let mut rec = record(&l, Stage::Scratch, "scratch", &net, top1, started);
    rec.train_history = history.clone();
    rec.entropy = layer_states(&entropy_report(&net, &l)?);
    let written = write_outputs(
        &opts.out,
        &[
            (SCRATCH_FILE, net.to_checkpoint_json()),
            (SCRATCH_HISTORY_FILE, history_csv(&history)),
            (SCRATCH_RECORD_FILE, rec.to_json()),
        ],
    )?;
    Ok(Outcome {
        summary: format!("trained {} from scratch: test top-1 {:.2}%", model_label(&net), 100.0 * top1),
        written,
    })
}

/// Builds the results table, state distribution (CSV and SVG) and, when
/// possible, the ablation table from record files.
pub fn cmd_report(records: &[PathBuf], out: &Path) -> Result<Outcome> {
    if records.is_empty() {
        return Err(Error::Config("report needs at least one record file".into()));
    }
    let parsed = records
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p)?;
            ExperimentRecord::from_json(&text)
                .map_err(|e| Error::Report(format!("{}: {e}", p.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    let reports = build_reports(&parsed)?;
    let mut files = vec![
        (RESULTS_FILE, reports.results_csv),
        (STATES_CSV_FILE, reports.states_csv),
        (STATES_SVG_FILE, reports.states_svg),
    ];
    let ablation = reports.ablation_csv.is_some();
    if let Some(a) = reports.ablation_csv {
        files.push((ABLATION_FILE, a));
    }
    let written = write_outputs(out, &files)?;
    Ok(Outcome {
        summary: format!(
            "{} records reported{}",
            parsed.len(),
            if ablation { ", with ablation" } else { "" }
        ),
        written,
    })
}

/// Entropy report of a checkpoint on the configured split.
pub fn cmd_analyze(opts: &Options) -> Result<Outcome> {
    let l = load(opts)?;
    let net = load_checkpoint(checkpoint_path(opts)?, &l.data)?;
    let report = entropy_report(&net, &l)?;
    let top1 = net.accuracy(&l.data.test)?;
    let written = write_outputs(
        &opts.out,
        &[
            (ENTROPY_NEURONS_FILE, report.neurons_csv()),
            (ENTROPY_LAYERS_FILE, report.layers_csv()),
        ],
    )?;
    let mut summary = format!(
        "sparsity {}%, test top-1 {:.2}%, zero-entropy layers {:?}\n",
        net.sparsity_pct(),
        100.0 * top1,
        report.zero_entropy_layers()
    );
    for s in layer_states(&report) {
        summary.push_str(&format!(
            "  layer {}: {} neurons, mixed {}, always_off {}, always_on {}, mean entropy {:.6}\n",
            s.layer_index, s.n_neurons, s.mixed, s.always_off, s.always_on, s.mean_entropy
        ));
    }
    Ok(Outcome {
        summary: summary.trim_end().to_owned(),
        written,
    })
}
