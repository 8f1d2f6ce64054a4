use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use log::{info, warn};
use pact_bridge::BridgeClient;
use pact_core::metrics::{ask_impact, emit_report, rollout_utility, ReportFiles, ReportInput};
use pact_core::rollout::{run_setting, Agent, RolloutOptions, SettingSpec, StrategyKind};
use rayon::prelude::*;

use crate::config::{Resolved, RunConfig};
use crate::store::{self, Manifest};
use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub manifest: Manifest,
    pub utility: f64,
    pub acc: f64,
    pub ask_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub cells: Vec<CellSummary>,
    pub report: ReportFiles,
}

impl RunSummary {
    pub fn table(&self) -> String {
        let mut s = format!("{:<14} {:<4} {:>6} {:>8} {:>8} {:>8}\n", "policy", "set", "seed", "utility", "acc", "ask_rate");
        for c in &self.cells {
            s.push_str(&format!(
                "{:<14} {:<4} {:>6} {:>8.4} {:>8.4} {:>8.4}\n",
                c.manifest.policy, c.manifest.setting, c.manifest.master_seed, c.utility, c.acc, c.ask_rate
            ));
        }
        s
    }
}

struct Cell<'a> {
    strategy: StrategyKind,
    setting: &'a SettingSpec,
    seed: u64,
}

fn cells(r: &Resolved) -> Vec<Cell<'_>> {
    let mut out = Vec::new();
    for &strategy in &r.strategies {
        for setting in &r.settings {
            for &seed in &r.seeds {
                out.push(Cell { strategy, setting, seed });
            }
        }
    }
    out
}

fn run_cell(r: &Resolved, cell: &Cell<'_>, out: &Path) -> Result<(CellSummary, ReportInput), CliError> {
    let agent = match (&r.bridge, cell.strategy) {
        (Some(bridge), StrategyKind::Protocol(_)) => {
            Agent::with_reasoner(cell.strategy, r.agent, Box::new(BridgeClient::new(bridge.clone())?))?
        }
        _ => Agent::new(cell.strategy, r.agent)?,
    };
    let options = RolloutOptions {
        world: r.world,
        eval_days: r.eval_days,
    };
    let (trace, _) = run_setting(cell.setting, agent, cell.seed, &options)?;
    let manifest = store::write_cell(out, &trace, &r.config_hash, r.agent.daily_budget, r.eval_days)?;
    let days = pact_core::metrics::scored_days(&trace);
    let u = rollout_utility(&days)?;
    info!("finished {}", manifest.cell);
    Ok((
        CellSummary {
            manifest: manifest.clone(),
            utility: u.utility,
            acc: u.acc,
            ask_rate: u.ask_rate,
        },
        ReportInput {
            policy: manifest.policy,
            setting: manifest.setting,
            seed: manifest.master_seed,
            days,
        },
    ))
}

fn execute(config: &RunConfig, out: &Path, workers: usize, seed_offset: u64) -> Result<RunSummary, CliError> {
    let resolved = config.resolve(seed_offset)?;
    let cells = cells(&resolved);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Config {
            field: "--workers".into(),
            message: e.to_string(),
        })?;
    let results: Vec<Result<(CellSummary, ReportInput), CliError>> =
        pool.install(|| cells.par_iter().map(|c| run_cell(&resolved, c, out)).collect());
    let mut summaries = Vec::new();
    let mut inputs = Vec::new();
    let mut failed = Vec::new();
    for (cell, result) in cells.iter().zip(results) {
        match result {
            Ok((s, i)) => {
                summaries.push(s);
                inputs.push(i);
            }
            Err(e) => {
                let name = store::cell_name(&cell.strategy.name(), cell.setting.setting_id.short(), cell.seed);
                warn!("cell {name} failed: {e}");
                failed.push(format!("{name}: {e}"));
            }
        }
    }
    if !failed.is_empty() {
        if !inputs.is_empty() {
            emit_report(&inputs, out)?;
        }
        return Err(CliError::CellsFailed(failed));
    }
    let report = emit_report(&inputs, out)?;
    Ok(RunSummary {
        out_dir: out.to_owned(),
        cells: summaries,
        report,
    })
}

fn out_dir(config: &RunConfig, out: Option<&Path>) -> PathBuf {
    out.map_or_else(|| PathBuf::from(&config.report.out_dir), Path::to_owned)
}

/// One policy in one setting, serially over the configured seeds.
pub fn cmd_run(config_path: &Path, out: Option<&Path>, seed_offset: u64) -> Result<RunSummary, CliError> {
    let mut config = RunConfig::load(config_path)?;
    config.policy.names.clear();
    config.rollout.settings.clear();
    let out = out_dir(&config, out);
    execute(&config, &out, 1, seed_offset)
}

/// Policies x settings x seeds on a bounded worker pool.
pub fn cmd_sweep(config_path: &Path, out: Option<&Path>, workers: usize, seed_offset: u64) -> Result<RunSummary, CliError> {
    let config = RunConfig::load(config_path)?;
    let out = out_dir(&config, out);
    execute(&config, &out, workers, seed_offset)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutcome {
    pub files: ReportFiles,
    pub impact: Option<PathBuf>,
    pub cells: usize,
}

/// Rebuilds the CSV report from a trace directory; with `impact`, pairs
/// every asking cell with the `never` cell of the same setting and seed.
pub fn cmd_report(dir: &Path, out: Option<&Path>, impact: bool, force: bool) -> Result<ReportOutcome, CliError> {
    let manifests = store::list_manifests(dir)?;
    if manifests.is_empty() {
        return Err(CliError::NoTraces(dir.to_owned()));
    }
    let cells = manifests.iter().map(|m| store::load_cell(m)).collect::<Result<Vec<_>, _>>()?;
    let hashes: BTreeSet<&str> = cells.iter().map(|c| c.manifest.config_hash.as_str()).collect();
    if hashes.len() > 1 && !force {
        return Err(CliError::HashMismatch(
            cells
                .iter()
                .map(|c| format!("{} {}", c.manifest.cell, &c.manifest.config_hash[..12.min(c.manifest.config_hash.len())]))
                .collect(),
        ));
    }
    let out = out.map_or_else(|| dir.to_owned(), Path::to_owned);
    let inputs: Vec<ReportInput> = cells.iter().map(|c| c.input.clone()).collect();
    let files = emit_report(&inputs, &out)?;
    let impact = if impact { Some(write_impact(&cells, &out)?) } else { None };
    Ok(ReportOutcome {
        files,
        impact,
        cells: cells.len(),
    })
}

fn write_impact(cells: &[store::LoadedCell], out: &Path) -> Result<PathBuf, CliError> {
    let never = StrategyKind::Never.name();
    let baselines: BTreeMap<(&str, u64, &str), &store::LoadedCell> = cells
        .iter()
        .filter(|c| c.manifest.policy == never)
        .map(|c| ((c.manifest.setting.as_str(), c.manifest.master_seed, c.manifest.config_hash.as_str()), c))
        .collect();
    let mut rows = Vec::new();
    let mut unmatched = Vec::new();
    for c in cells.iter().filter(|c| c.manifest.policy != never) {
        let key = (c.manifest.setting.as_str(), c.manifest.master_seed, c.manifest.config_hash.as_str());
        match baselines.get(&key) {
            Some(base) => {
                let gains = ask_impact(&c.input.days, &base.input.days)?;
                rows.extend(gains.into_iter().map(|g| (c, g)));
            }
            None => unmatched.push(format!("{}.manifest.json", c.manifest.cell)),
        }
    }
    if !unmatched.is_empty() || rows.is_empty() {
        return Err(CliError::Unpaired(unmatched));
    }
    let path = out.join("impact.csv");
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record([
        "policy", "setting", "seed", "day", "semantic_similarity_gain", "intent_f1_gain", "task_f1_gain", "utility_gain",
    ])?;
    for (c, g) in rows {
        w.write_record([
            c.manifest.policy.clone(),
            c.manifest.setting.clone(),
            c.manifest.master_seed.to_string(),
            g.day.to_string(),
            g.semantic_similarity_gain.to_string(),
            g.intent_f1_gain.to_string(),
            g.task_f1_gain.to_string(),
            g.utility_gain.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io {
        path: path.clone(),
        source: e.into_error(),
    })?;
    store::write_atomic(&path, &bytes)?;
    Ok(path)
}
