//! Command-line driver: experiment config, subcommands and result files.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::{
    cross_domain_ablation, cross_domain_votes, feature_importance, layer_sweep, lee_evaluate, lee_votes, retrieval_eval,
    retrieval_votes, run_ablation, sweep_votes, arm_votes, arm_setup, Arm, ArmResult, CrossDomainResult, DataFilter, LeeRow,
    LeeVariant, PipelineConfig, Prepared, RetrievalReport, SweepResult, LOSS_LOG_BATCHES,
};
use crate::lfm::checkpoint;
use crate::repstore::Store;
use crate::simstream::{run_online_loop, FaultInjection};

/// Everything a CLI run needs. Round-trips through TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Arms run by `ablate --grid arms`.
    pub arms: Vec<Arm>,
    pub sweep_dims: Vec<usize>,
    pub retrieval_k: usize,
    pub pipeline: PipelineConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seeds: (0..10).collect(),
            output_dir: PathBuf::from("results"),
            arms: Arm::ALL.to_vec(),
            sweep_dims: vec![16, 32, 64],
            retrieval_k: 10,
            pipeline: PipelineConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.sweep_dims.is_empty() || self.sweep_dims.contains(&0) {
            return Err(Error::Config("sweep_dims must be positive".into()));
        }
        if self.retrieval_k == 0 {
            return Err(Error::Config("retrieval_k must be positive".into()));
        }
        self.pipeline.world.validate()?;
        self.pipeline.lfm.validate()?;
        Ok(())
    }
}

#[derive(Debug, Parser)]
#[command(name = "reptransfer", version, about = "Foundation-model representation transfer experiments on a synthetic ad stream")]
pub struct Cli {
    /// TOML experiment config; embedded defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run this single seed instead of the configured list.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "REPTRANSFER_OUT")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Grid {
    Arms,
    CrossDomain,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the embedded default config as TOML.
    PrintDefaults,
    /// Pretrain the dual-branch foundation model per seed and write checkpoints.
    Pretrain,
    /// Replay the online stream through the store with one served model.
    Simulate {
        /// Checkpoint to serve from; defaults to the seed's pretrain output.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "lfm4ads")]
        arm: Arm,
        /// Online event offset where writes start being scaled.
        #[arg(long)]
        fault_at: Option<usize>,
        #[arg(long, default_value_t = 500)]
        fault_duration: u64,
        #[arg(long, default_value_t = 100.0)]
        fault_scale: f64,
    },
    /// Tap-by-width transferability sweep.
    Sweep {
        /// Use an untrained foundation model.
        #[arg(long)]
        untrained: bool,
    },
    /// Transfer ablation grid.
    Ablate {
        #[arg(long, value_enum, default_value = "arms")]
        grid: Grid,
    },
    /// Light-weight proxy ranking of representation variants.
    Lee,
    /// Standalone retrieval recall@k, trained and untrained.
    Retrieval,
    /// Per-block AUC drop of a gated-fusion model.
    Importance,
    /// Pass/fail summary from result files in the output directory.
    Report,
}

/// Parses `args`, runs, and returns the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = cli.out {
        cfg.output_dir = o;
    }
    let out = cfg.output_dir.clone();
    match cli.command {
        Command::PrintDefaults => {
            print!("{}", ExperimentConfig::default().to_toml()?);
            Ok(())
        }
        Command::Pretrain => pretrain(&cfg, &out),
        Command::Simulate { checkpoint, arm, fault_at, fault_duration, fault_scale } => {
            let fault = fault_at.map(|at| (at, fault_duration, fault_scale));
            simulate(&cfg, &out, checkpoint.as_deref(), arm, fault)
        }
        Command::Sweep { untrained } => {
            let mut rows = Vec::new();
            for &s in &cfg.seeds {
                let mut prep = Prepared::new(&cfg.pipeline, s)?;
                rows.extend(layer_sweep(&mut prep, &cfg.sweep_dims, !untrained)?);
            }
            write_table(&out, if untrained { "sweep_untrained" } else { "sweep" }, &rows)?;
            println!("sweep: {} rows; dnn tap best on {} seeds", rows.len(), sweep_votes(&rows));
            Ok(())
        }
        Command::Ablate { grid: Grid::Arms } => {
            let mut rows = Vec::new();
            for &s in &cfg.seeds {
                let mut prep = Prepared::new(&cfg.pipeline, s)?;
                let r = run_ablation(&mut prep, &cfg.arms)?;
                for a in &r {
                    println!("seed {s} {:<16} {:.4}", a.arm.name(), a.auc);
                }
                rows.extend(r);
            }
            write_table(&out, "ablation", &rows)?;
            Ok(())
        }
        Command::Ablate { grid: Grid::CrossDomain } => {
            let mut rows = Vec::new();
            for &s in &cfg.seeds {
                let mut prep = Prepared::new(&cfg.pipeline, s)?;
                rows.extend(cross_domain_ablation(&mut prep)?);
            }
            write_table(&out, "cross_domain", &rows)?;
            println!("cross-domain ordering holds on {} seeds", cross_domain_votes(&rows));
            Ok(())
        }
        Command::Lee => {
            let mut rows = Vec::new();
            for &s in &cfg.seeds {
                let mut prep = Prepared::new(&cfg.pipeline, s)?;
                let rep = lee_evaluate(&mut prep, &LeeVariant::ALL)?;
                // Timings vary run to run, so they stay out of the result files.
                eprintln!("seed {s}: proxy {:.3}s, full {:.3}s", rep.proxy_seconds, rep.full_seconds);
                rows.extend(rep.rows);
            }
            write_table(&out, "lee", &rows)?;
            println!("lee extremes agree on {} seeds", lee_votes(&rows));
            Ok(())
        }
        Command::Retrieval => {
            let mut rows = Vec::new();
            for &s in &cfg.seeds {
                let mut prep = Prepared::new(&cfg.pipeline, s)?;
                rows.push(retrieval_eval(&mut prep, cfg.retrieval_k, false)?);
                rows.push(retrieval_eval(&mut prep, cfg.retrieval_k, true)?);
            }
            write_table(&out, "retrieval", &rows)?;
            println!("recall above 3x chance on {} seeds", retrieval_votes(&rows, 3.0));
            Ok(())
        }
        Command::Importance => {
            let mut rows = Vec::new();
            for &s in &cfg.seeds {
                let mut prep = Prepared::new(&cfg.pipeline, s)?;
                rows.extend(feature_importance(&mut prep)?);
            }
            write_table(&out, "importance", &rows)?;
            Ok(())
        }
        Command::Report => report(&out),
    }
}

fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

#[derive(Serialize)]
struct LossLine {
    batch: usize,
    loss: f64,
}

fn pretrain(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    for &s in &cfg.seeds {
        let mut prep = Prepared::new(&cfg.pipeline, s)?;
        let mode = crate::lfm::BranchMode::Dual;
        let (lfm, _) = prep.pretrained(mode, DataFilter::All)?;
        let dir = seed_dir(out, s);
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("lfm.ckpt"), checkpoint::to_bytes(&lfm))?;
        let losses = prep.pretrain_losses(mode, DataFilter::All).unwrap_or_default();
        let lines: Vec<LossLine> = losses.iter().enumerate().map(|(k, &loss)| LossLine { batch: (k + 1) * LOSS_LOG_BATCHES, loss }).collect();
        write_jsonl(&dir.join("pretrain_log.jsonl"), &lines)?;
        println!("seed {s}: {} (final loss {:.4})", dir.join("lfm.ckpt").display(), losses.last().copied().unwrap_or(f64::NAN));
    }
    Ok(())
}

#[derive(Serialize)]
struct SimulateSummary {
    seed: u64,
    arm: Arm,
    events: usize,
    final_auc: f64,
    freezes: usize,
    snapshots: usize,
}

fn simulate(cfg: &ExperimentConfig, out: &Path, ckpt: Option<&Path>, arm: Arm, fault: Option<(usize, u64, f64)>) -> Result<()> {
    for &s in &cfg.seeds {
        let path = ckpt.map_or_else(|| seed_dir(out, s).join("lfm.ckpt"), Path::to_path_buf);
        if !path.exists() {
            return Err(Error::MissingPrerequisite(path));
        }
        let mut lfm = checkpoint::from_bytes(&fs::read(&path)?)?;
        let prep = Prepared::new(&cfg.pipeline, s)?;
        let want = prep.lfm_config(arm.wiring().0);
        if lfm.config != want {
            return Err(Error::Config(format!("checkpoint {} was trained with a different model config than arm {arm} needs", path.display())));
        }
        let mut setup = arm_setup(&prep, arm)?;
        if let Some((at, duration, scale)) = fault {
            let ev = prep.online.get(at).ok_or_else(|| Error::Config(format!("fault offset {at} beyond {} online events", prep.online.len())))?;
            setup.loop_config.fault = Some(FaultInjection { at_event: ev.index, duration, scale });
        }
        let mut opt = crate::nncore::Adam::new(prep.config.lfm_adam);
        let mut store = Store::new(setup.store)?;
        let mut models = [setup.served];
        let log = run_online_loop(&mut lfm, &mut opt, &mut models, &mut store, &prep.online, &setup.loop_config)?;

        let dir = seed_dir(out, s);
        fs::create_dir_all(&dir)?;
        let mut w = BufWriter::new(fs::File::create(dir.join("metrics.jsonl"))?);
        log.write_jsonl(&mut w)?;
        w.flush()?;
        write_jsonl(&dir.join("freezes.jsonl"), &log.freezes)?;
        let summary = SimulateSummary {
            seed: s,
            arm,
            events: prep.online.len(),
            final_auc: log.final_auc(0, prep.config.eval_window)?,
            freezes: log.freezes.len(),
            snapshots: log.snapshots.len(),
        };
        fs::write(dir.join("simulate.json"), serde_json::to_string_pretty(&summary).map_err(json_err)? + "\n")?;
        for r in &log.records {
            let auc = r.window_auc.get(arm.name()).copied().flatten();
            println!("seed {s} event {:>7} auc {} freezes {}", r.event_index, auc.map_or("-".into(), |a| format!("{a:.4}")), r.freezes);
        }
        for f in &log.freezes {
            println!("seed {s} freeze at event {} ({} {:?} change {:.3}); rolled back to snapshot {}", f.event_index, f.kind, f.metric, f.change, f.rolled_back_to);
        }
    }
    Ok(())
}

fn json_err(e: serde_json::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut w, r).map_err(json_err)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `<stem>.csv` and `<stem>.jsonl` under `dir`.
pub fn write_table<T: Serialize>(dir: &Path, stem: &str, rows: &[T]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join(format!("{stem}.csv"))).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    write_jsonl(&dir.join(format!("{stem}.jsonl")), rows)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Reads a `.jsonl` table; a missing file is a missing prerequisite.
pub fn read_table<T: DeserializeOwned>(dir: &Path, stem: &str) -> Result<Vec<T>> {
    let path = dir.join(format!("{stem}.jsonl"));
    if !path.exists() {
        return Err(Error::MissingPrerequisite(path));
    }
    fs::read_to_string(&path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Integrity(format!("{}: {e}", path.display()))))
        .collect()
}

/// Renders the acceptance summary that result files can decide.
pub fn render_report(
    ablation: &[ArmResult],
    sweep: &[SweepResult],
    cross: &[CrossDomainResult],
    lee: &[LeeRow],
    retrieval: &[RetrievalReport],
) -> String {
    let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
    let t = arm_votes(ablation);
    let sw = sweep_votes(sweep);
    let cd = cross_domain_votes(cross);
    let le = lee_votes(lee);
    let re = retrieval_votes(retrieval, 3.0);
    let mut s = String::new();
    let mut line = |text: String| {
        s.push_str(&text);
        s.push('\n');
    };
    line("criterion  verdict  detail".into());
    for (n, what) in [(1, "gradient fidelity"), (2, "aggregation oracle"), (3, "fault tolerance"), (8, "metric correctness"), (9, "determinism")] {
        line(format!("{n:>9}  TEST     {what}: decided by the test suite"));
    }
    line(format!(
        "{:>9}  {}     ablation ordering on {} seeds (full>sum_dual {}, sum_dual>baseline {}, sum_same<baseline {}, full>no_agg {})",
        4,
        verdict(t.all.passes(8)),
        t.all,
        t.full_over_sum_dual,
        t.sum_dual_over_baseline,
        t.sum_same_under_baseline,
        t.aggregation_helps
    ));
    line(format!("{:>9}  {}     best dnn tap >= best cross and embed_concat taps on {} seeds", 5, verdict(sw.passes(8)), sw));
    line(format!("{:>9}  {}     baseline < content < ads < combined on {} seeds", 6, verdict(cd.passes(8)), cd));
    line(format!("{:>9}  {}     proxy and full evaluation agree on best and worst variant on {} seeds (cost checked by the test suite)", 7, verdict(le.passes(10)), le));
    line(format!("{:>9}  {}     recall@k above 3x chance on {} seeds", 10, verdict(re.passes(8)), re));
    s
}

fn report(out: &Path) -> Result<()> {
    let ablation: Vec<ArmResult> = read_table(out, "ablation")?;
    let sweep: Vec<SweepResult> = read_table(out, "sweep")?;
    let cross: Vec<CrossDomainResult> = read_table(out, "cross_domain")?;
    let lee: Vec<LeeRow> = read_table(out, "lee")?;
    let retrieval: Vec<RetrievalReport> = read_table(out, "retrieval")?;
    let text = render_report(&ablation, &sweep, &cross, &lee, &retrieval);
    fs::write(out.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}
