//! Per-cell trace, truth and manifest files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use pact_core::codec::{decode_trace_record, encode_trace_record};
use pact_core::domain::HistoryRecord;
use pact_core::metrics::{ReportInput, ScoredDay, ScoredStep, StepTruth};
use pact_core::rollout::RolloutTrace;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub cell: String,
    pub policy: String,
    pub setting: String,
    pub master_seed: u64,
    pub config_hash: String,
    pub num_days: u32,
    pub eval_days: u32,
    pub daily_budget: u32,
    pub records: usize,
    pub trace_file: String,
    pub truth_file: String,
    pub update_messages: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct TruthLine {
    day: u32,
    hour: u8,
    true_intent: pact_core::domain::Label,
    required_task: pact_core::domain::Label,
}

pub fn cell_name(policy: &str, setting: &str, seed: u64) -> String {
    format!("{policy}__{setting}__seed{seed}")
}

/// Write to a sibling temp file, then rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io = |source| CliError::Io {
        path: path.to_owned(),
        source,
    };
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// Writes the cell's trace and truth files, then its manifest last, so a
/// manifest only exists for a complete cell.
pub fn write_cell(
    dir: &Path,
    trace: &RolloutTrace,
    config_hash: &str,
    daily_budget: u32,
    eval_days: u32,
) -> Result<Manifest, CliError> {
    let cell = cell_name(&trace.strategy, trace.setting.setting_id.short(), trace.master_seed);
    let mut trace_text = String::new();
    let mut truth_text = String::new();
    for day in &trace.days {
        for step in &day.steps {
            trace_text.push_str(&encode_trace_record(&step.record)?);
            trace_text.push('\n');
            let ts = &step.record.state_digest.timestamp;
            let line = TruthLine {
                day: ts.day_index,
                hour: ts.hour_slot,
                true_intent: step.latent.true_intent,
                required_task: step.latent.required_task(),
            };
            truth_text.push_str(&serde_json::to_string(&line).expect("truth serializes"));
            truth_text.push('\n');
        }
    }
    let manifest = Manifest {
        cell: cell.clone(),
        policy: trace.strategy.clone(),
        setting: trace.setting.setting_id.short().into(),
        master_seed: trace.master_seed,
        config_hash: config_hash.into(),
        num_days: trace.setting.num_days,
        eval_days,
        daily_budget,
        records: trace.days.iter().map(|d| d.steps.len()).sum(),
        trace_file: format!("{cell}.trace.jsonl"),
        truth_file: format!("{cell}.truth.jsonl"),
        update_messages: trace.updates.iter().flat_map(|u| u.messages.clone()).collect(),
    };
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_owned(),
        source,
    })?;
    write_atomic(&dir.join(&manifest.trace_file), trace_text.as_bytes())?;
    write_atomic(&dir.join(&manifest.truth_file), truth_text.as_bytes())?;
    let mut json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    json.push(b'\n');
    write_atomic(&dir.join(format!("{cell}.manifest.json")), &json)?;
    Ok(manifest)
}

pub fn list_manifests(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let io = |source| CliError::Io {
        path: dir.to_owned(),
        source,
    };
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".manifest.json"))
        .collect();
    out.sort();
    Ok(out)
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_owned()))
        .collect())
}

pub fn read_records(path: &Path) -> Result<Vec<HistoryRecord>, CliError> {
    read_lines(path)?
        .into_iter()
        .map(|(line, text)| {
            decode_trace_record(&text).map_err(|e| CliError::Trace {
                path: path.to_owned(),
                line,
                message: e.to_string(),
            })
        })
        .collect()
}

pub struct LoadedCell {
    pub manifest: Manifest,
    pub records: Vec<HistoryRecord>,
    pub input: ReportInput,
}

pub fn load_cell(manifest_path: &Path) -> Result<LoadedCell, CliError> {
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(manifest_path).map_err(|source| CliError::Io {
        path: manifest_path.to_owned(),
        source,
    })?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| CliError::Trace {
        path: manifest_path.to_owned(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let trace_path = dir.join(&manifest.trace_file);
    let truth_path = dir.join(&manifest.truth_file);
    let records = read_records(&trace_path)?;
    let truths = read_lines(&truth_path)?
        .into_iter()
        .map(|(line, text)| {
            serde_json::from_str::<TruthLine>(&text).map_err(|e| CliError::Trace {
                path: truth_path.clone(),
                line,
                message: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    if records.len() != manifest.records || truths.len() != records.len() {
        return Err(CliError::Trace {
            path: trace_path,
            line: records.len().min(truths.len()) + 1,
            message: format!(
                "manifest lists {} records; trace has {}, truth has {}",
                manifest.records,
                records.len(),
                truths.len()
            ),
        });
    }
    let mut days: Vec<ScoredDay> = Vec::new();
    for (i, (record, truth)) in records.iter().zip(&truths).enumerate() {
        let ts = &record.state_digest.timestamp;
        if (ts.day_index, ts.hour_slot) != (truth.day, truth.hour) {
            return Err(CliError::Trace {
                path: truth_path,
                line: i + 1,
                message: "truth line does not match the trace step".into(),
            });
        }
        if days.last().is_none_or(|d| d.day_index != ts.day_index) {
            days.push(ScoredDay {
                day_index: ts.day_index,
                steps: Vec::new(),
            });
        }
        days.last_mut().expect("pushed above").steps.push(ScoredStep {
            record: record.clone(),
            truth: StepTruth {
                true_intent: truth.true_intent,
                required_task: truth.required_task,
            },
        });
    }
    let input = ReportInput {
        policy: manifest.policy.clone(),
        setting: manifest.setting.clone(),
        seed: manifest.master_seed,
        days,
    };
    Ok(LoadedCell {
        manifest,
        records,
        input,
    })
}
