//! `sesim` subcommands: synth, labels, train, eval and sweep.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use sesim_core::model::ModelState;
use sesim_core::trainer::{
    evaluate, init_model, prepare_labels, train_with, EvalSplit, Evaluation, History, TrainConfig, TrainingData,
};
use sesim_core::JumpLabelSet;

use crate::bundle::{load_bundle, save_bundle, Bundle};
use crate::config::{RunConfig, TaskArg};
use crate::error::{Error, Result};
use crate::formats::{history_row, read_checkpoint, read_history, read_labels, write_checkpoint, write_history, write_labels, write_report};
use crate::synth::generate_synthetic;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const SWEEP_JMAX: [u8; 4] = [2, 3, 4, 5];
pub const SWEEP_METAPATHS: [usize; 3] = [1, 2, 3];

#[derive(Debug, Parser)]
#[command(name = "sesim", version, about = "Self-supervised metapath pretext learning on heterogeneous graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a planted-community bundle into --out.
    Synth(SynthArgs),
    /// Build jump-number pseudo-labels for --bundle into the TSV --out.
    Labels(Common),
    /// Train on --bundle, writing a checkpoint and history into the directory --out.
    Train(Common),
    /// Evaluate --checkpoint on --bundle, writing a JSON report to --out.
    Eval(Common),
    /// Train every (j_max, metapath count) cell, one report per cell in --out.
    Sweep(Common),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub vanilla: bool,
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    #[arg(long)]
    pub jmax: Option<u8>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Number of metapaths to use (synth: to write).
    #[arg(long)]
    pub metapaths: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub intra: Option<f64>,
    #[arg(long)]
    pub inter: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub communities: Option<usize>,
    #[arg(long)]
    pub mean_degree: Option<f64>,
}

/// Config file (or defaults) with the flags applied on top.
pub fn resolve(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
        cfg.synth.seed = s;
    }
    if let Some(t) = c.task {
        cfg.task = t;
    }
    if let Some(j) = c.jmax {
        cfg.j_max = j;
    }
    if let Some(e) = c.epochs {
        cfg.epochs = e;
    }
    if let Some(m) = c.metapaths {
        cfg.metapath_count = Some(m);
        cfg.synth.metapaths = m;
    }
    if c.vanilla {
        cfg.vanilla = true;
    }
    for (slot, flag) in [
        (&mut cfg.bundle, &c.bundle),
        (&mut cfg.labels, &c.labels),
        (&mut cfg.out, &c.out),
        (&mut cfg.checkpoint, &c.checkpoint),
        (&mut cfg.history, &c.history),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    Ok(cfg)
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config(format!("--{flag} is required")))
}

fn announce(cfg: &RunConfig, err: &mut impl Write) {
    let _ = writeln!(err, "# effective configuration\n{}", cfg.to_toml());
}

/// Parses `args` (program name first) and runs the subcommand. Returns the
/// process exit status.
pub fn run<I, T>(args: I, out: &mut impl Write, err: &mut impl Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: &Command, out: &mut impl Write, err: &mut impl Write) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(a, out, err),
        Command::Labels(c) => cmd_labels(c, out, err),
        Command::Train(c) => cmd_train(c, out, err),
        Command::Eval(c) => cmd_eval(c, out, err),
        Command::Sweep(c) => cmd_sweep(c, out, err),
    }
}

fn cmd_synth(a: &SynthArgs, out: &mut impl Write, err: &mut impl Write) -> Result<()> {
    let mut cfg = resolve(&a.common)?;
    let s = &mut cfg.synth;
    if let Some(v) = a.intra {
        s.intra = v;
    }
    if let Some(v) = a.inter {
        s.inter = v;
    }
    if let Some(v) = a.noise {
        s.noise = v;
    }
    if let Some(v) = a.communities {
        s.communities = v;
    }
    if let Some(v) = a.mean_degree {
        s.mean_degree = v;
    }
    announce(&cfg, err);
    let dir = required(&cfg.out, "out")?;
    let (bundle, _) = generate_synthetic(&cfg.synth)?;
    save_bundle(&bundle, dir)?;
    for r in bundle.graph.relations() {
        let _ = writeln!(out, "relation {}: {} edges", r.edge_type, r.matrix.nnz());
    }
    Ok(())
}

fn load(cfg: &RunConfig, err: &mut impl Write) -> Result<Bundle> {
    let dir = required(&cfg.bundle, "bundle")?;
    let (bundle, report) = load_bundle(dir)?;
    if report.duplicate_edges > 0 {
        let _ = writeln!(err, "warning: dropped {} duplicate edges", report.duplicate_edges);
    }
    Ok(bundle)
}

fn cmd_labels(c: &Common, out: &mut impl Write, err: &mut impl Write) -> Result<()> {
    let cfg = resolve(c)?;
    announce(&cfg, err);
    let path = required(&cfg.out, "out")?;
    let bundle = load(&cfg, err)?;
    let tc = cfg.train_config();
    let set = prepare_labels(&bundle.graph, &bundle.metapaths, &tc)?;
    write_labels(path, &set)?;
    let chosen = sesim_core::trainer::select_metapaths(&bundle.metapaths, &tc)?;
    for m in chosen {
        let _ = writeln!(out, "metapath {}: {} labels", m.id, set.count_for(m.id));
    }
    Ok(())
}

fn read_label_file(cfg: &RunConfig, tc: &TrainConfig) -> Result<Option<JumpLabelSet>> {
    cfg.labels.as_deref().map(|p| read_labels(p, tc.j_max)).transpose()
}

/// Report fields: link prediction summarizes the validation AUC history,
/// node classification scores the test split.
pub fn report_fields(state: &ModelState, data: &TrainingData, history: &History) -> Result<Vec<(&'static str, f64)>> {
    Ok(match evaluate(state, data, EvalSplit::Test)? {
        Evaluation::Link { .. } => {
            let (peak, mean) = history
                .peak_metric()
                .zip(history.mean_metric())
                .ok_or_else(|| Error::Artifact("training history has no epochs".into()))?;
            vec![("auc_peak", peak), ("auc_mean", mean)]
        }
        Evaluation::Node { macro_f1, micro_f1 } => vec![("macro_f1", macro_f1), ("micro_f1", micro_f1)],
    })
}

fn cmd_train(c: &Common, out: &mut impl Write, err: &mut impl Write) -> Result<()> {
    let cfg = resolve(c)?;
    announce(&cfg, err);
    let dir = required(&cfg.out, "out")?;
    let bundle = load(&cfg, err)?;
    let tc = cfg.train_config();
    let labels = read_label_file(&cfg, &tc)?;
    let data = TrainingData::prepare(&bundle.graph, &bundle.metapaths, labels.as_ref(), &tc)?;
    let (state, history) = train_with(&data, &tc, |r, _| {
        let _ = writeln!(out, "{}", history_row(r));
    })?;
    let ckpt = cfg.checkpoint.clone().unwrap_or_else(|| dir.join(CHECKPOINT_FILE));
    let hist = cfg.history.clone().unwrap_or_else(|| dir.join(HISTORY_FILE));
    write_checkpoint(&ckpt, &state)?;
    write_history(&hist, &history)
}

fn cmd_eval(c: &Common, _out: &mut impl Write, err: &mut impl Write) -> Result<()> {
    let cfg = resolve(c)?;
    announce(&cfg, err);
    let report = required(&cfg.out, "out")?;
    let ckpt = required(&cfg.checkpoint, "checkpoint")?;
    let bundle = load(&cfg, err)?;
    let tc = cfg.train_config();
    let no_labels = JumpLabelSet::new(Vec::new(), tc.j_max)?;
    let data = TrainingData::prepare(&bundle.graph, &bundle.metapaths, Some(&no_labels), &tc)?;
    let mut state = init_model(&data, &tc)?;
    read_checkpoint(ckpt, &mut state)?;
    let history = match (&cfg.task, &cfg.history) {
        (TaskArg::Node, _) => History { metapaths: data.metapaths.clone(), records: Vec::new() },
        (TaskArg::Link, Some(h)) => read_history(h)?,
        (TaskArg::Link, None) => {
            let h = ckpt.with_file_name(HISTORY_FILE);
            read_history(&h).map_err(|e| Error::Artifact(format!("link evaluation needs the training history: {e}")))?
        }
    };
    write_report(report, &report_fields(&state, &data, &history)?)
}

/// Report file of one sweep cell.
pub fn sweep_cell_name(j_max: u8, metapaths: usize) -> String {
    format!("j{j_max}_m{metapaths}.json")
}

fn thread_count() -> Result<Option<usize>> {
    match std::env::var("SESIM_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| Error::Config(format!("SESIM_THREADS must be a positive integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn cmd_sweep(c: &Common, out: &mut impl Write, err: &mut impl Write) -> Result<()> {
    let cfg = resolve(c)?;
    announce(&cfg, err);
    let dir = required(&cfg.out, "out")?.to_path_buf();
    let bundle = load(&cfg, err)?;
    let cells: Vec<(u8, usize)> =
        SWEEP_JMAX.iter().flat_map(|&j| SWEEP_METAPATHS.iter().map(move |&m| (j, m))).collect();
    let run_cell = |&(j_max, m): &(u8, usize)| -> Result<PathBuf> {
        let tc = TrainConfig { j_max, metapath_count: Some(m), ..cfg.train_config() };
        let data = TrainingData::prepare(&bundle.graph, &bundle.metapaths, None, &tc)?;
        let (state, history) = train_with(&data, &tc, |_, _| {})?;
        let path = dir.join(sweep_cell_name(j_max, m));
        write_report(&path, &report_fields(&state, &data, &history)?)?;
        Ok(path)
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count()? {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("cannot start worker threads: {e}")))?;
    let results: Vec<Result<PathBuf>> = pool.install(|| cells.par_iter().map(run_cell).collect());
    for r in results {
        let _ = writeln!(out, "{}", r?.display());
    }
    Ok(())
}
