//! Subcommand implementations.

use crate::manifest::RunManifest;
use crate::plot::{plot_csv, select_rows, PlotKind};
use crate::{Cli, Command, GlobalArgs};
use anyhow::{anyhow, Context, Result};
use clap::{Args, ValueEnum};
use log::info;
use neurotraj_core::driving_model::{self, split_dataset, Ablation, DrivingModel, TrainConfig};
use neurotraj_core::io::write_atomic;
use neurotraj_core::metrics::{aggregate, evaluate, MetricsReport};
use neurotraj_core::potential_map::PotentialMap;
use neurotraj_core::scenario_data::{
    episode_seed, map_file_name, read_dataset, relabel_causal, write_dataset, DatasetManifest, Episode, RelabelConfig,
    ScenarioSet, LABEL_DT, LABEL_LEN, MANIFEST_FILE,
};
use neurotraj_core::simulator::{
    latency_csv, run_episode, run_realtime, standard_suite, sweep_latency, ModelPlanner, OraclePlanner, Planner,
    Scenario, SimConfig, SimMode,
};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Episodes handled per forward pass in `eval`; fixed so results do not
/// depend on `--jobs`.
const EVAL_CHUNK: usize = 32;

/// Name of the run record written into dataset directories.
pub const RUN_MANIFEST_FILE: &str = "run.manifest.json";

/// Contents of the `--config` file. Every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub train: TrainConfig,
    pub sim: SimConfig,
    pub relabel: RelabelConfig,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Scenario distribution JSON; defaults apply when omitted.
    #[arg(long)]
    pub scenario_set: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of episodes.
    #[arg(long)]
    pub count: usize,
}

#[derive(Debug, Args)]
pub struct RelabelArgs {
    /// Input dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_ablation(s: &str) -> std::result::Result<Ablation, String> {
    Ablation::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Ablation::ALL.iter().map(|a| a.name()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Training variant.
    #[arg(long, default_value = "none", value_parser = parse_ablation)]
    pub ablation: Ablation,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Training log CSV; defaults to `<out>.log.csv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    All,
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Trained model file.
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Report CSV: one row per episode plus an aggregate row.
    #[arg(long)]
    pub report: PathBuf,
    /// Which part of the seeded train/val/test split to evaluate.
    #[arg(long, value_enum, default_value = "all")]
    pub split: SplitArg,
    /// Optional CSV of label and predicted positions for plotting.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Sim,
    Realtime,
}

#[derive(Debug, Args)]
pub struct PlannerArgs {
    /// Trained model file.
    #[arg(long, required_unless_present = "oracle", conflicts_with = "oracle")]
    pub model: Option<PathBuf>,
    /// Use the route-following reference planner instead of a model.
    #[arg(long)]
    pub oracle: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub planner: PlannerArgs,
    /// Scenario JSON.
    #[arg(long, required_unless_present = "suite_scenario", conflicts_with = "suite_scenario")]
    pub scenario: Option<PathBuf>,
    /// Name of a scenario from the built-in suite, e.g. `stop_03`.
    #[arg(long)]
    pub suite_scenario: Option<String>,
    #[arg(long, default_value_t = 0.0)]
    pub latency_ms: f64,
    #[arg(long, value_enum, default_value = "sim")]
    pub mode: ModeArg,
    /// Per-tick trace CSV.
    #[arg(long)]
    pub trace: PathBuf,
    /// Outcome JSON; defaults to `<trace>.outcome.json`.
    #[arg(long)]
    pub outcome: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub planner: PlannerArgs,
    /// Planning latencies in milliseconds.
    #[arg(long, value_delimiter = ',', default_value = "0,100,200,300,400,500,650,800")]
    pub latencies: Vec<f64>,
    /// Start-pose seeds per scenario.
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    /// JSON array of scenarios; the built-in 30-scenario suite when omitted.
    #[arg(long)]
    pub scenarios: Option<PathBuf>,
    /// Success-rate table CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional JSON with every episode outcome.
    #[arg(long)]
    pub outcomes: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Input CSV.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub kind: PlotKind,
    /// Output SVG.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub title: Option<String>,
    /// Keep only rows whose `episode` column equals this id.
    #[arg(long)]
    pub episode: Option<String>,
}

/// Bookkeeping shared by all commands.
struct Run<'a> {
    global: &'a GlobalArgs,
    manifest: RunManifest,
    config: PipelineConfig,
}

impl<'a> Run<'a> {
    fn start(name: &str, args: &[String], global: &'a GlobalArgs) -> Result<Self> {
        let config = match &global.config {
            Some(path) => {
                let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_slice(&bytes).with_context(|| format!("parsing config {}", path.display()))?
            }
            None => PipelineConfig::default(),
        };
        let config_json = serde_json::to_string(&config)?;
        let mut manifest = RunManifest::new(name, args, &config_json, global.seed);
        if let Some(path) = &global.config {
            manifest.input(path)?;
        }
        Ok(Self {
            global,
            manifest,
            config,
        })
    }

    fn jobs(&self) -> usize {
        self.global.jobs as usize
    }

    fn read_json<T: serde::de::DeserializeOwned>(&mut self, path: &Path) -> Result<T> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let value = serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))?;
        self.manifest.input(path)?;
        Ok(value)
    }

    fn read_dataset(&mut self, dir: &Path) -> Result<(DatasetManifest, Vec<Episode>)> {
        let (manifest, episodes) = read_dataset(dir).with_context(|| format!("reading dataset {}", dir.display()))?;
        self.manifest.input(&dir.join(MANIFEST_FILE))?;
        for (entry, ep) in manifest.episodes.iter().zip(&episodes) {
            self.manifest.input(&dir.join(&entry.file))?;
            for k in 0..ep.map_window.len() {
                self.manifest.input(&dir.join(map_file_name(&ep.id, k)))?;
            }
        }
        Ok((manifest, episodes))
    }

    fn read_model(&mut self, path: &Path) -> Result<DrivingModel> {
        let model = DrivingModel::read(path).with_context(|| format!("reading model {}", path.display()))?;
        self.manifest.input(path)?;
        Ok(model)
    }

    fn planner(&mut self, args: &PlannerArgs) -> Result<Box<dyn Planner>> {
        match &args.model {
            Some(path) if !args.oracle => Ok(Box::new(ModelPlanner {
                model: self.read_model(path)?,
            })),
            _ => Ok(Box::new(OraclePlanner::default())),
        }
    }

    fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.manifest.output(path)
    }

    fn finish_beside(self, artifact: &Path) -> Result<()> {
        self.manifest.write_beside(artifact)?;
        Ok(())
    }
}

/// Maps `f` over `items` on up to `jobs` threads; results keep input order.
pub fn parallel_map<T, R, F>(items: &[T], jobs: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(&f).collect();
    }
    let per = items.len().div_ceil(jobs);
    let parts: Vec<Result<Vec<R>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(per)
            .map(|chunk| {
                let f = &f;
                scope.spawn(move || chunk.iter().map(f).collect::<Result<Vec<R>>>())
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(anyhow!("worker thread panicked"))))
            .collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for part in parts {
        out.extend(part?);
    }
    Ok(out)
}

pub fn dispatch(cli: &Cli, args: &[String]) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Gen(a) => gen(Run::start("gen", args, g)?, a),
        Command::Relabel(a) => relabel(Run::start("relabel", args, g)?, a),
        Command::Train(a) => train(Run::start("train", args, g)?, a),
        Command::Eval(a) => eval(Run::start("eval", args, g)?, a),
        Command::Simulate(a) => simulate(Run::start("simulate", args, g)?, a),
        Command::SweepLatency(a) => sweep(Run::start("sweep-latency", args, g)?, a),
        Command::Plot(a) => plot(Run::start("plot", args, g)?, a),
    }
}

fn record_dataset(run: &mut Run, dir: &Path, manifest: &DatasetManifest, episodes: &[Episode]) -> Result<()> {
    for (entry, ep) in manifest.episodes.iter().zip(episodes) {
        run.manifest.output(&dir.join(&entry.file))?;
        for k in 0..ep.map_window.len() {
            run.manifest.output(&dir.join(map_file_name(&ep.id, k)))?;
        }
    }
    run.manifest.output(&dir.join(MANIFEST_FILE))
}

fn gen(mut run: Run, a: &GenArgs) -> Result<()> {
    let set: ScenarioSet = match &a.scenario_set {
        Some(path) => run.read_json(path)?,
        None => ScenarioSet::default(),
    };
    let seed = run.global.seed;
    let indices: Vec<usize> = (0..a.count).collect();
    let episodes = parallel_map(&indices, run.jobs(), |&i| {
        set.generate_one(seed, i).with_context(|| format!("generating episode {i}"))
    })?;
    let manifest = write_dataset(&a.out, seed, &set, &episodes)?;
    record_dataset(&mut run, &a.out, &manifest, &episodes)?;
    run.manifest.write_to(&a.out.join(RUN_MANIFEST_FILE))?;
    println!("wrote {} episodes to {}", episodes.len(), a.out.display());
    Ok(())
}

fn relabel(mut run: Run, a: &RelabelArgs) -> Result<()> {
    let (source, episodes) = run.read_dataset(&a.data)?;
    let cfg = run.config.relabel;
    let relabeled = parallel_map(&episodes, run.jobs(), |ep| {
        relabel_causal(ep, &cfg).with_context(|| format!("relabeling {}", ep.id))
    })?;
    let changed = episodes.iter().zip(&relabeled).filter(|(a, b)| a.label != b.label).count();
    let manifest = write_dataset(&a.out, source.seed, &source.scenario_set, &relabeled)?;
    record_dataset(&mut run, &a.out, &manifest, &relabeled)?;
    run.manifest.write_to(&a.out.join(RUN_MANIFEST_FILE))?;
    println!("relabeled {changed} of {} episodes into {}", relabeled.len(), a.out.display());
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

fn train(mut run: Run, a: &TrainArgs) -> Result<()> {
    let (_, episodes) = run.read_dataset(&a.data)?;
    let cfg = run.config.train.clone();
    let outcome = driving_model::train(&episodes, &cfg, a.ablation, run.global.seed, |e| {
        info!(
            "epoch {}: train {:.5} val {:.5} val ADE {:.4}",
            e.epoch, e.train_loss, e.val_loss, e.val_ade
        );
    })?;
    let model_bytes = outcome.model.to_bytes()?;
    run.write(&a.out, &model_bytes)?;
    let log_path = a.log.clone().unwrap_or_else(|| with_suffix(&a.out, ".log.csv"));
    run.write(&log_path, outcome.log.to_csv().as_bytes())?;
    let best = &outcome.log.epochs[outcome.log.best_epoch.min(outcome.log.epochs.len() - 1)];
    println!(
        "kept epoch {} (val loss {:.5}, val ADE {:.4} m); model written to {}",
        best.epoch,
        best.val_loss,
        best.val_ade,
        a.out.display()
    );
    run.finish_beside(&a.out)
}

fn report_row(w: &mut csv::Writer<Vec<u8>>, id: &str, tag: &str, r: &MetricsReport) -> Result<()> {
    w.write_record([
        id.to_string(),
        tag.to_string(),
        r.e_ad.to_string(),
        r.e_fd.to_string(),
        r.e_x.to_string(),
        r.e_y.to_string(),
        r.e_v.to_string(),
        r.n_samples.to_string(),
    ])?;
    Ok(())
}

fn eval(mut run: Run, a: &EvalArgs) -> Result<()> {
    let model = run.read_model(&a.model)?;
    let (_, episodes) = run.read_dataset(&a.data)?;
    let t = &run.config.train;
    let split = split_dataset(episodes.len(), run.global.seed, t.val_fraction, t.test_fraction);
    let idx: Vec<usize> = match a.split {
        SplitArg::All => (0..episodes.len()).collect(),
        SplitArg::Train => split.train,
        SplitArg::Val => split.val,
        SplitArg::Test => split.test,
    };
    if idx.is_empty() {
        return Err(anyhow!("no episodes in the selected split"));
    }
    let chunks: Vec<&[usize]> = idx.chunks(EVAL_CHUNK).collect();
    let per_chunk = parallel_map(&chunks, run.jobs(), |part| {
        let windows: Vec<&[PotentialMap]> = part.iter().map(|&i| episodes[i].map_window.as_slice()).collect();
        let speeds: Vec<f64> = part.iter().map(|&i| episodes[i].v0).collect();
        let trajs = model.plan_batch(&windows, &speeds)?;
        part.iter()
            .zip(trajs)
            .map(|(&i, traj)| Ok((i, evaluate(&traj, &episodes[i].label)?, traj)))
            .collect::<Result<Vec<_>>>()
    })?;
    let results: Vec<_> = per_chunk.into_iter().flatten().collect();

    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record(["id", "scenario", "e_ad", "e_fd", "e_x", "e_y", "e_v", "n_samples"])?;
    for (i, r, _) in &results {
        let ep = &episodes[*i];
        let tag = serde_json::to_value(ep.scenario_tag)?;
        report_row(&mut w, &ep.id, tag.as_str().unwrap_or(""), r)?;
    }
    let reports: Vec<MetricsReport> = results.iter().map(|(_, r, _)| *r).collect();
    let total = aggregate(&reports)?;
    report_row(&mut w, "ALL", "all", &total)?;
    let report_bytes = w.into_inner().map_err(|e| anyhow!("{e}"))?;
    run.write(&a.report, &report_bytes)?;

    if let Some(path) = &a.predictions {
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(["episode", "series", "t", "x", "y"])?;
        for (i, _, traj) in &results {
            let ep = &episodes[*i];
            for s in &ep.label {
                w.write_record([&ep.id, "label", &s.t.to_string(), &s.position[0].to_string(), &s.position[1].to_string()])?;
            }
            for k in 0..LABEL_LEN {
                let t = k as f64 * LABEL_DT;
                let p = traj.eval(t).position;
                w.write_record([&ep.id, "prediction", &t.to_string(), &p[0].to_string(), &p[1].to_string()])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| anyhow!("{e}"))?;
        run.write(path, &bytes)?;
    }
    println!(
        "{} episodes: E_ad {:.4} m, E_fd {:.4} m, E_v {:.4} m/s",
        results.len(),
        total.e_ad,
        total.e_fd,
        total.e_v
    );
    run.finish_beside(&a.report)
}

fn sim_config(run: &Run, latency_ms: f64, mode: SimMode) -> Result<SimConfig> {
    if !(latency_ms >= 0.0 && latency_ms.is_finite()) {
        return Err(anyhow!("latency must be a non-negative number of milliseconds"));
    }
    Ok(SimConfig {
        latency: latency_ms / 1000.0,
        mode,
        ..run.config.sim
    })
}

fn simulate(mut run: Run, a: &SimulateArgs) -> Result<()> {
    let planner = run.planner(&a.planner)?;
    let scenario: Scenario = match (&a.scenario, &a.suite_scenario) {
        (Some(path), _) => run.read_json(path)?,
        (None, Some(name)) => standard_suite()
            .into_iter()
            .find(|s| &s.name == name)
            .ok_or_else(|| anyhow!("no suite scenario named `{name}`"))?,
        (None, None) => return Err(anyhow!("a scenario is required")),
    };
    let mode = match a.mode {
        ModeArg::Sim => SimMode::Simulated,
        ModeArg::Realtime => SimMode::Realtime,
    };
    let cfg = sim_config(&run, a.latency_ms, mode)?;
    let seed = run.global.seed;
    let (trace, outcome) = match mode {
        SimMode::Simulated => run_episode(planner.as_ref(), &scenario, &cfg, seed)?,
        SimMode::Realtime => run_realtime(planner.as_ref(), &scenario, &cfg, seed)?,
    };
    run.write(&a.trace, trace.to_csv().as_bytes())?;
    let outcome_path = a.outcome.clone().unwrap_or_else(|| a.trace.with_extension("outcome.json"));
    run.write(&outcome_path, &serde_json::to_vec_pretty(&outcome)?)?;
    println!(
        "{}: {:?} after {:.2} s ({})",
        outcome.scenario, outcome.kind, outcome.time, outcome.reason
    );
    run.finish_beside(&a.trace)
}

fn sweep(mut run: Run, a: &SweepArgs) -> Result<()> {
    let planner = run.planner(&a.planner)?;
    let scenarios: Vec<Scenario> = match &a.scenarios {
        Some(path) => run.read_json(path)?,
        None => standard_suite(),
    };
    if a.seeds == 0 {
        return Err(anyhow!("at least one seed is required"));
    }
    let seeds: Vec<u64> = (0..a.seeds).map(|i| episode_seed(run.global.seed, i)).collect();
    let base = sim_config(&run, 0.0, SimMode::Simulated)?;
    for &l in &a.latencies {
        sim_config(&run, l, SimMode::Simulated)?;
    }
    let per_latency = parallel_map(&a.latencies, run.jobs(), |&ms| {
        info!("latency {ms} ms");
        Ok(sweep_latency(planner.as_ref(), &scenarios, &[ms / 1000.0], &seeds, &base)?)
    })?;
    let mut rows = vec![];
    let mut outcomes = vec![];
    for (r, o) in per_latency {
        rows.extend(r);
        outcomes.extend(o);
    }
    run.write(&a.out, latency_csv(&rows).as_bytes())?;
    if let Some(path) = &a.outcomes {
        run.write(path, &serde_json::to_vec_pretty(&outcomes)?)?;
    }
    for r in &rows {
        println!("{:>6} ms: {}/{} succeeded", r.latency_ms, r.successes, r.runs);
    }
    run.finish_beside(&a.out)
}

fn plot(mut run: Run, a: &PlotArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    run.manifest.input(&a.input)?;
    let text = match &a.episode {
        Some(id) => select_rows(&text, "episode", id)?,
        None => text,
    };
    let svg = plot_csv(&text, a.kind, a.title.as_deref()).with_context(|| format!("plotting {}", a.input.display()))?;
    run.write(&a.out, svg.as_bytes())?;
    run.finish_beside(&a.out)
}
