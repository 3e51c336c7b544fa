//! Command-line entry points. Each subcommand is a plain function over its
//! parsed arguments so it can be driven from tests as well as from `main`.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::ensemble::{ensemble_track_all, score, select_ensemble, EnsembleSpec, ScoreReport, ScoringMode};
use crate::error::{DstError, Result};
use crate::io::{self, export_tracker_output, load_model, read_dialogs, save_model, write_dialogs, write_ontology};
use crate::model::{Dialog, Ontology, Turn};
use crate::rules::TransitionReading;
use crate::slu::build_vocab;
use crate::synth::{generate, SynthConfig};
use crate::tracker::{track_dialog, TrackerParams, TrackerSession};
use crate::train::{train_groups, Group, GroupPlan};

/// Environment variable holding the default DSTC2 data root.
pub const DATA_ROOT_ENV: &str = "HYBRID_DST_DATA";

#[derive(Debug, Parser)]
#[command(name = "hybrid-dst", version, about = "Hybrid rule-based / LSTM dialog state tracker")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a group of trackers and write one model file per tracker.
    Train(TrainArgs),
    /// Score a model ensemble on a labeled corpus.
    Eval(EvalArgs),
    /// Dump per-turn coefficients and top beliefs for one dialog.
    Inspect(InspectArgs),
    /// Track turns read from standard input, one belief record per turn.
    Track(TrackArgs),
    /// Generate a synthetic labeled corpus and its ontology.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CorpusArgs {
    /// Corpus in the canonical line-delimited dialog format.
    #[arg(long, conflicts_with = "dstc2_list")]
    pub corpus: Option<PathBuf>,
    /// DSTC2 data root (directory holding the call directories).
    #[arg(long, env = DATA_ROOT_ENV)]
    pub dstc2_root: Option<PathBuf>,
    /// DSTC2 list file naming the calls to load.
    #[arg(long)]
    pub dstc2_list: Option<PathBuf>,
}

impl CorpusArgs {
    pub fn from_canonical(path: impl Into<PathBuf>) -> Self {
        Self {
            corpus: Some(path.into()),
            dstc2_root: None,
            dstc2_list: None,
        }
    }

    pub fn load(&self) -> Result<Vec<Dialog>> {
        match (&self.corpus, &self.dstc2_list) {
            (Some(path), None) => read_dialogs(path),
            (None, Some(list)) => {
                let root = self
                    .dstc2_root
                    .as_deref()
                    .ok_or_else(|| DstError::Config(format!("--dstc2-list needs --dstc2-root or ${DATA_ROOT_ENV}")))?;
                let corpus = io::load_dstc2(root, list)?;
                if corpus.skipped > 0 {
                    warn!("skipped {} unreadable calls", corpus.skipped);
                }
                Ok(corpus.dialogs)
            }
            _ => Err(DstError::Config("give either --corpus or --dstc2-list".into())),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: CorpusArgs,
    /// Ontology file (slot -> values).
    #[arg(long)]
    pub ontology: PathBuf,
    #[arg(long, value_enum, default_value = "a")]
    pub group: Group,
    /// Number of trackers to train.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Comma-separated seeds, one per tracker. Defaults to seed-base + i.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed_base: u64,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    /// Fraction of bag-of-words features masked per tracker (group B).
    #[arg(long, default_value_t = 0.2)]
    pub mask_rate: f64,
    /// Machine-act words must occur more than this many times.
    #[arg(long, default_value_t = 5)]
    pub min_count: usize,
    #[arg(long, value_enum, default_value = "source-none")]
    pub reading: ReadingArg,
    /// Output directory for model files.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ReadingArg {
    /// c_new applies to flows out of None.
    SourceNone,
    /// c_new applies to flows into None.
    TargetNone,
}

impl From<ReadingArg> for TransitionReading {
    fn from(r: ReadingArg) -> Self {
        match r {
            ReadingArg::SourceNone => TransitionReading::SourceNone,
            ReadingArg::TargetNone => TransitionReading::TargetNone,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Model files, or directories of `*.model` files.
    #[arg(long, required = true, num_args = 1..)]
    pub models: Vec<PathBuf>,
    #[command(flatten)]
    pub data: CorpusArgs,
    /// Refuse models trained against a different ontology.
    #[arg(long)]
    pub ontology: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all-labeled")]
    pub scoring: ScoringMode,
    /// Select a random subset of this size on --dev-corpus first.
    #[arg(long, requires = "dev_corpus")]
    pub ensemble_size: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    #[arg(long)]
    pub dev_corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the score report here as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Write challenge-style tracker output here.
    #[arg(long)]
    pub export: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: CorpusArgs,
    #[arg(long)]
    pub dialog: String,
    /// Number of belief entries listed per row.
    #[arg(long, default_value_t = 3)]
    pub top: usize,
}

#[derive(Debug, Clone, Args)]
pub struct TrackArgs {
    /// One or more models; several are averaged.
    #[arg(long, required = true, num_args = 1..)]
    pub model: Vec<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    pub dialogs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.15)]
    pub goal_change: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Move the last N dialogs into a second corpus file.
    #[arg(long, default_value_t = 0)]
    pub holdout: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, requires = "holdout")]
    pub holdout_out: Option<PathBuf>,
    #[arg(long)]
    pub ontology_out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    let stdout = std::io::stdout();
    match cli.command {
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a, &mut stdout.lock()).map(|_| ()),
        Command::Inspect(a) => cmd_inspect(&a, &mut stdout.lock()),
        Command::Track(a) => {
            let stdin = std::io::stdin();
            cmd_track(&a, stdin.lock(), &mut stdout.lock())
        }
        Command::Synth(a) => cmd_synth(&a),
    }
}

fn model_file_name(group: Group, seed: u64) -> String {
    format!("group{group:?}-seed{seed}.model")
}

/// Train and write models; returns the written paths.
pub fn cmd_train(args: &TrainArgs) -> Result<Vec<PathBuf>> {
    if args.count == 0 {
        warn!("--count 0: nothing to train");
        return Ok(Vec::new());
    }
    let seeds = if args.seeds.is_empty() {
        (0..args.count as u64).map(|i| args.seed_base + i).collect()
    } else {
        args.seeds.clone()
    };
    if seeds.len() != args.count {
        return Err(DstError::Config(format!("{} seeds for --count {}", seeds.len(), args.count)));
    }
    let ontology = io::read_ontology(&args.ontology)?;
    let corpus = args.data.load()?;
    if corpus.is_empty() {
        return Err(DstError::Data("training corpus is empty".into()));
    }
    let vocab = build_vocab(&corpus, args.min_count);
    info!("{} dialogs, {} bag-of-words features", corpus.len(), vocab.len());

    let (count_a, count_b) = match args.group {
        Group::A => (args.count, 0),
        Group::B => (0, args.count),
    };
    let plan = GroupPlan {
        count_a,
        count_b,
        seeds: seeds.clone(),
        epochs: args.epochs,
        mask_rate: args.mask_rate,
        reading: args.reading.into(),
    };
    let jobs = args.jobs.unwrap_or_else(default_jobs);
    let models = train_groups(&plan, &corpus, &vocab, &ontology, jobs)?;

    std::fs::create_dir_all(&args.out).map_err(|e| DstError::io(&args.out, e))?;
    let mut paths = Vec::with_capacity(models.len());
    for (params, &seed) in models.iter().zip(&seeds) {
        let path = args.out.join(model_file_name(args.group, seed));
        save_model(&path, params)?;
        paths.push(path);
    }
    eprintln!(
        "trained {} trackers (group A: {}, group B: {}) into {}",
        paths.len(),
        count_a,
        count_b,
        args.out.display()
    );
    Ok(paths)
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Expand directories into their `*.model` files, sorted by name.
pub fn collect_model_paths(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| DstError::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "model"))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(DstError::Config("no model files found".into()));
    }
    Ok(out)
}

pub fn load_pool(paths: &[PathBuf], ontology: Option<&Ontology>) -> Result<Vec<TrackerParams>> {
    let pool: Vec<TrackerParams> = paths.iter().map(|p| load_model(p, ontology)).collect::<Result<_>>()?;
    if let Some(first) = pool.first() {
        let hash = first.ontology.content_hash();
        if let Some(bad) = pool.iter().position(|m| m.ontology.content_hash() != hash) {
            return Err(DstError::OntologyMismatch {
                model: pool[bad].ontology.content_hash(),
                given: hash,
            });
        }
    }
    Ok(pool)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub models: Vec<String>,
    pub ensemble: Vec<usize>,
    pub score: ScoreReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selection: Option<crate::ensemble::Selection>,
}

pub fn cmd_eval(args: &EvalArgs, out: &mut impl Write) -> Result<EvalReport> {
    let ontology = args.ontology.as_deref().map(io::read_ontology).transpose()?;
    let paths = collect_model_paths(&args.models)?;
    let pool = load_pool(&paths, ontology.as_ref())?;
    let corpus = args.data.load()?;
    if !corpus.iter().any(Dialog::is_labeled) {
        return Err(DstError::Data("evaluation corpus carries no goal labels".into()));
    }

    let (spec, selection) = match (args.ensemble_size, &args.dev_corpus) {
        (Some(k), Some(dev)) => {
            let dev = read_dialogs(dev)?;
            let sel = select_ensemble(&pool, k, args.trials, &dev, args.seed, args.scoring)?;
            (sel.best.clone(), Some(sel))
        }
        _ => (EnsembleSpec::all(pool.len())?, None),
    };

    let runs = ensemble_track_all(&pool, &spec, &corpus)?;
    let report = score(&runs, &corpus, &pool[0].ontology, args.scoring)?;
    if let Some(path) = &args.export {
        export_tracker_output(&runs, &pool[0].ontology, path)?;
    }
    let eval = EvalReport {
        models: spec.members.iter().map(|&i| paths[i].display().to_string()).collect(),
        ensemble: spec.members.clone(),
        score: report,
        selection,
    };
    if let Some(path) = &args.report {
        let text = serde_json::to_string_pretty(&eval)?;
        std::fs::write(path, text).map_err(|e| DstError::io(path, e))?;
    }
    write!(out, "{}", eval.score.to_table()).map_err(|e| DstError::io("<stdout>", e))?;
    Ok(eval)
}

/// One line of `inspect` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectRow {
    pub dialog: String,
    pub turn: usize,
    pub slot: String,
    pub c_new: f64,
    pub c_override: f64,
    pub top: Vec<(String, f64)>,
}

pub fn inspect_rows(params: &TrackerParams, dialog: &Dialog, top: usize) -> Result<Vec<InspectRow>> {
    let run = track_dialog(params, dialog)?;
    let onto = &params.ontology;
    let mut rows = Vec::new();
    for t in 0..run.num_turns() {
        for (s, slot) in onto.slots().iter().enumerate() {
            let traj = crate::tracker::coefficient_trajectory(&run, onto, slot)?;
            let h = &run.slots[s].beliefs[t];
            let mut order: Vec<usize> = (0..h.len()).collect();
            order.sort_by(|&a, &b| h[b].total_cmp(&h[a]).then(a.cmp(&b)));
            rows.push(InspectRow {
                dialog: dialog.id.clone(),
                turn: t,
                slot: slot.clone(),
                c_new: traj[t].0,
                c_override: traj[t].1,
                top: order.into_iter().take(top).map(|v| (onto.value_label(s, v).to_owned(), h[v])).collect(),
            });
        }
    }
    Ok(rows)
}

pub fn read_inspect_rows(reader: impl BufRead) -> Result<Vec<InspectRow>> {
    reader
        .lines()
        .map(|l| l.map_err(|e| DstError::io("<inspect>", e)))
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}

pub fn cmd_inspect(args: &InspectArgs, out: &mut impl Write) -> Result<()> {
    let params = load_model(&args.model, None)?;
    let corpus = args.data.load()?;
    let dialog = corpus
        .iter()
        .find(|d| d.id == args.dialog)
        .ok_or_else(|| DstError::Data(format!("no dialog `{}` in corpus", args.dialog)))?;
    for row in inspect_rows(&params, dialog, args.top)? {
        writeln!(out, "{}", serde_json::to_string(&row)?).map_err(|e| DstError::io("<stdout>", e))?;
    }
    Ok(())
}

/// Input record of `track`: a dialog boundary or a turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StreamRecord {
    Dialog { dialog: String },
    Turn { turn: serde_json::Value },
}

/// Output record of `track`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StreamOutput {
    Belief {
        dialog: String,
        turn: usize,
        /// Per tracked slot, the belief vector indexed `[None, values...]`.
        beliefs: Vec<Vec<f64>>,
    },
    Error {
        line: usize,
        error: String,
    },
}

/// Averages the member sessions of an ensemble turn by turn.
struct EnsembleSession<'a> {
    members: Vec<TrackerSession<'a>>,
}

impl<'a> EnsembleSession<'a> {
    fn new(pool: &'a [TrackerParams]) -> Self {
        Self {
            members: pool.iter().map(TrackerSession::new).collect(),
        }
    }

    fn step(&mut self, turn: &Turn) -> Result<Vec<Vec<f64>>> {
        let mut outputs = self.members.iter_mut().map(|m| m.step(turn).map(|o| o.beliefs));
        let mut acc = outputs.next().expect("non-empty ensemble")?;
        let mut n = 1.0;
        for out in outputs {
            for (a, b) in acc.iter_mut().zip(out?) {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
            }
            n += 1.0;
        }
        if n > 1.0 {
            acc.iter_mut().flatten().for_each(|x| *x /= n);
        }
        Ok(acc)
    }
}

/// Track a pool's average over a record stream.
pub fn track_stream(pool: &[TrackerParams], input: impl BufRead, out: &mut impl Write) -> Result<()> {
    let io_err = |e| DstError::io("<stream>", e);
    let mut session = EnsembleSession::new(pool);
    let mut dialog = String::new();
    let mut turn_index = 0;
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<StreamRecord>(&line)
            .map_err(DstError::from)
            .and_then(|rec| match rec {
                StreamRecord::Dialog { dialog } => Ok(Err(dialog)),
                StreamRecord::Turn { turn } => crate::io::canonical_turn(turn).map(Ok),
            });
        let record = match parsed {
            Ok(Err(id)) => {
                session = EnsembleSession::new(pool);
                dialog = id;
                turn_index = 0;
                continue;
            }
            Ok(Ok(turn)) => session.step(&turn).map(|beliefs| StreamOutput::Belief {
                dialog: dialog.clone(),
                turn: turn_index,
                beliefs,
            }),
            Err(e) => Err(e),
        };
        let record = match record {
            Ok(r) => {
                turn_index += 1;
                r
            }
            Err(e) => StreamOutput::Error {
                line: n + 1,
                error: e.to_string(),
            },
        };
        writeln!(out, "{}", serde_json::to_string(&record)?).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

pub fn cmd_track(args: &TrackArgs, input: impl BufRead, out: &mut impl Write) -> Result<()> {
    let pool = load_pool(&args.model, None)?;
    track_stream(&pool, input, out)
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    if args.holdout > args.dialogs {
        return Err(DstError::Config("--holdout exceeds --dialogs".into()));
    }
    let config = SynthConfig {
        dialogs: args.dialogs,
        slu_noise: args.noise,
        goal_change: args.goal_change,
        seed: args.seed,
        ..SynthConfig::default()
    };
    let (ontology, mut dialogs) = generate(&config)?;
    let held = dialogs.split_off(dialogs.len() - args.holdout);
    write_dialogs(&args.out, &dialogs)?;
    if let Some(path) = &args.holdout_out {
        write_dialogs(path, &held)?;
    }
    write_ontology(&args.ontology_out, &ontology)?;
    eprintln!("wrote {} + {} dialogs", dialogs.len(), held.len());
    Ok(())
}

/// Read a list of paths relative to `base` (used by tests and scripts).
pub fn resolve(base: &Path, name: &str) -> PathBuf {
    base.join(name)
}
