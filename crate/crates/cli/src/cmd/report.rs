//! `report`: aggregate JSON reports (evaluation, single-task, multi-task,
//! H∞) into CSV tables.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dtcontrol::protocol::{
    hinf_csv, multitask_breakdown_csv, multitask_csv, single_task_csv, EvalReport, HinfReport,
    MultitaskReport, ProtocolTag, SingleTaskReport,
};

use crate::run::{load_config, validation, CliError, OutArgs, RunDir};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Report JSON files (or directories scanned one level for *.json).
    inputs: Vec<PathBuf>,

    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct Cfg {
    inputs: Vec<PathBuf>,
}

enum Parsed {
    Multitask(Box<MultitaskReport>),
    Hinf(Box<HinfReport>),
    SingleTask(Box<SingleTaskReport>),
    Eval(Box<EvalReport>),
}

fn parse_report(path: &Path) -> Result<Parsed, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| validation(format!("cannot read report {}: {e}", path.display())))?;
    // Try the aggregate shapes first: their key sets are disjoint enough
    // that the first successful parse identifies the type.
    if let Ok(r) = serde_json::from_str::<MultitaskReport>(&text) {
        return Ok(Parsed::Multitask(Box::new(r)));
    }
    if let Ok(r) = serde_json::from_str::<HinfReport>(&text) {
        return Ok(Parsed::Hinf(Box::new(r)));
    }
    if let Ok(r) = serde_json::from_str::<SingleTaskReport>(&text) {
        return Ok(Parsed::SingleTask(Box::new(r)));
    }
    if let Ok(r) = serde_json::from_str::<EvalReport>(&text) {
        return Ok(Parsed::Eval(Box::new(r)));
    }
    Err(validation(format!(
        "{} is not a recognized report (expected an eval, single-task, multi-task, or hinf report)",
        path.display()
    )))
}

fn tag_label(tag: &ProtocolTag) -> String {
    match tag {
        ProtocolTag::Single => "single".into(),
        ProtocolTag::ZeroShot => "zero_shot".into(),
        ProtocolTag::KShot(k) => format!("k_shot_{k}"),
        ProtocolTag::Hinf => "hinf".into(),
        ProtocolTag::Bc => "bc".into(),
    }
}

/// Row label for an eval report: the file stem, or the parent directory's
/// name for the canonical `eval_report.json`.
fn eval_label(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("eval");
    if stem == "eval_report" {
        if let Some(parent) = path.parent().and_then(|p| p.file_name()).and_then(|s| s.to_str()) {
            return parent.to_string();
        }
    }
    stem.to_string()
}

/// Output file stem for a converted report.
fn out_stem(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    match path.parent().and_then(|p| p.file_name()).and_then(|s| s.to_str()) {
        // Qualify canonical artifact names by their run directory so two
        // inputs cannot collide.
        Some(parent) if stem.ends_with("_report") || stem == "report" => {
            format!("{parent}-{stem}")
        }
        _ => stem.to_string(),
    }
}

pub fn run(args: Args) -> Result<(), CliError> {
    let mut cfg: Cfg = load_config(args.out.config.as_deref())?;
    if !args.inputs.is_empty() {
        cfg.inputs = args.inputs;
    }
    if cfg.inputs.is_empty() {
        return Err(validation("report requires at least one input file or directory"));
    }

    // Expand directories one level.
    let mut files: Vec<PathBuf> = Vec::new();
    for input in &cfg.inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(input)
                .map_err(|e| validation(format!("cannot list {}: {e}", input.display())))?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "json"))
                .filter(|p| {
                    p.file_name()
                        .is_some_and(|n| n != "resolved_config.json" && n != "demonstrators.json")
                })
                .collect();
            found.sort();
            if found.is_empty() {
                return Err(validation(format!(
                    "directory {} contains no report JSON files",
                    input.display()
                )));
            }
            files.extend(found);
        } else {
            files.push(input.clone());
        }
    }

    let run = RunDir::prepare(&args.out, "report")?;
    run.write_snapshot("report", &cfg)?;

    let mut eval_rows: Vec<(String, EvalReport)> = Vec::new();
    let mut written: Vec<String> = Vec::new();
    for path in &files {
        match parse_report(path)? {
            Parsed::Multitask(r) => {
                let stem = out_stem(path);
                run.write_text(&format!("{stem}.csv"), &multitask_csv(&r))?;
                run.write_text(&format!("{stem}-breakdown.csv"), &multitask_breakdown_csv(&r))?;
                written.push(format!("{stem}.csv"));
                written.push(format!("{stem}-breakdown.csv"));
            }
            Parsed::Hinf(r) => {
                let stem = out_stem(path);
                run.write_text(&format!("{stem}.csv"), &hinf_csv(&r))?;
                written.push(format!("{stem}.csv"));
            }
            Parsed::SingleTask(r) => {
                let stem = out_stem(path);
                run.write_text(&format!("{stem}.csv"), &single_task_csv(&r))?;
                written.push(format!("{stem}.csv"));
            }
            Parsed::Eval(r) => eval_rows.push((eval_label(path), *r)),
        }
    }

    if !eval_rows.is_empty() {
        let mut csv = String::from(
            "label,task_id,protocol,episodes,n_diverged,mean_return,std_return,mean_normalized,std_normalized\n",
        );
        for (label, r) in &eval_rows {
            csv.push_str(&format!(
                "{label},{},{},{},{},{},{},{},{}\n",
                r.task_id,
                tag_label(&r.protocol),
                r.episodes.len(),
                r.n_diverged,
                r.mean_return,
                r.std_return,
                r.mean_normalized,
                r.std_normalized
            ));
        }
        run.write_text("evals.csv", &csv)?;
        written.push("evals.csv".into());
    }

    println!(
        "report: {} input(s) -> {} in {}",
        files.len(),
        written.join(", "),
        run.path.display()
    );
    Ok(())
}
