//! Command-line front end for the guarded-NPU simulator.
//!
//! Five subcommands cover the workflow: `configure` prints the shield
//! arrangement for a geometry, `simulate` runs one trial with a verbose
//! event log, `campaign` runs the full paired fault-injection sweep,
//! `sensitivity` sweeps classifier accuracy against upset rate by bit
//! position class, and `replay` re-runs serialized fault plans.
//!
//! Every subcommand takes `--config <file>` (JSON, missing fields filled
//! with defaults) and most take `--out <dir>`. Exit code is 0 on success
//! and nonzero on configuration or I/O errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use guardsim_core::campaign::{
    build_inventory, error_log_csv, error_rows_from, events_csv, plan_for_trial, prepare_workload,
    sensitivity_csv, site_class, trials_csv, EventRow, FaultOutcome,
};
use guardsim_core::{
    configure_shields, pipeline_schedule, run_campaign, run_sensitivity, run_trial, CampaignConfig,
    CampaignOutput, FaultPlan, ProtectionConfig, TrialResult,
};

/// Prints a line to stdout, swallowing write errors so a closed pipe
/// (`guardsim campaign | head`) truncates output quietly instead of
/// panicking mid-report.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

/// `say!` without the trailing newline, for whole-document dumps.
macro_rules! say_raw {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = write!(std::io::stdout(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(
    name = "guardsim",
    version,
    about = "Fault-injection simulator for a protected systolic-array NPU"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Campaign configuration as JSON; omitted fields take defaults.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Directory for output artifacts, created if absent.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Print the shield configuration and single-group timing for a geometry.
    Configure(Common),
    /// Run one trial under the configured protection and print its event log.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Trial index used to derive the fault plan.
        #[arg(long, default_value_t = 0)]
        trial: u64,
    },
    /// Run the full paired campaign and write report.json plus CSV artifacts.
    Campaign {
        #[command(flatten)]
        common: Common,
    },
    /// Sweep classifier accuracy against upset rate by bit position class.
    Sensitivity(Common),
    /// Re-run a serialized fault plan (plan.json or plans.jsonl) paired.
    Replay {
        #[command(flatten)]
        common: Common,
        /// FaultPlan JSON file, or a plans.jsonl written by `campaign`.
        #[arg(long, value_name = "FILE")]
        plan: PathBuf,
        /// Trial to select when the plan file holds several plans.
        #[arg(long)]
        trial: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Configure(common) => configure(&common),
        Command::Simulate { common, trial } => simulate(&common, trial),
        Command::Campaign { common } => campaign(&common),
        Command::Sensitivity(common) => sensitivity(&common),
        Command::Replay {
            common,
            plan,
            trial,
        } => replay(&common, &plan, trial),
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<CampaignConfig> {
    let config: CampaignConfig = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => CampaignConfig::default(),
    };
    config.validate().context("invalid configuration")?;
    Ok(config)
}

fn out_dir(path: &Option<PathBuf>) -> Result<Option<&Path>> {
    if let Some(dir) = path {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        return Ok(Some(dir.as_path()));
    }
    Ok(None)
}

fn write_artifact(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn pretty(value: &impl serde::Serialize) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

fn configure(common: &Common) -> Result<()> {
    let config = load_config(&common.config)?;
    let geometry = config.geometry()?;
    let shield = configure_shields(&geometry)?;
    let timing = pipeline_schedule(1, &shield)?;
    let doc = serde_json::json!({
        "geometry": geometry,
        "shield": shield,
        "single_group_timing": timing,
    });
    let text = pretty(&doc)?;
    say_raw!("{text}");
    if let Some(dir) = out_dir(&common.out)? {
        write_artifact(dir, "configure.json", &text)?;
    }
    Ok(())
}

fn outcome_counts(result: &TrialResult) -> (usize, usize, usize, usize) {
    let mut counts = (0, 0, 0, 0);
    for record in &result.records {
        match record.outcome {
            FaultOutcome::Absorbed => counts.0 += 1,
            FaultOutcome::Corrected => counts.1 += 1,
            FaultOutcome::Uncorrectable => counts.2 += 1,
            FaultOutcome::Missed => counts.3 += 1,
        }
    }
    counts
}

fn print_trial(result: &TrialResult, verbose: bool) {
    if verbose {
        for record in &result.records {
            let when = match record.pass {
                Some(p) => format!("pass {p}"),
                None => "persistent".to_string(),
            };
            say!(
                "fault: {} bit {} {} -> {}",
                site_class(&record.site),
                record.bit,
                when,
                record.outcome.name()
            );
        }
        for event in &result.events {
            say!(
                "event: pass {} {} {} latency {} cycles status {}",
                event.pass,
                event.component.name(),
                event.site,
                event.latency_cycles,
                event.status
            );
        }
    }
    let (absorbed, corrected, uncorrectable, missed) = outcome_counts(result);
    say!(
        "faults: {} injected, {absorbed} absorbed, {corrected} corrected, \
         {uncorrectable} uncorrectable, {missed} missed; {} detection events",
        result.records.len(),
        result.events.len()
    );
    if !result.predictions.is_empty() {
        say!("predictions: {:?}", result.predictions);
    }
}

fn event_rows(trial: u64, result: &TrialResult) -> Vec<EventRow> {
    result
        .events
        .iter()
        .map(|e| EventRow {
            trial,
            pass: e.pass,
            component: e.component.name(),
            site: e.site.clone(),
            latency_cycles: e.latency_cycles,
            status: e.status.clone(),
            corrected: e.corrected,
        })
        .collect()
}

fn simulate(common: &Common, trial: u64) -> Result<()> {
    let config = load_config(&common.config)?;
    let prep = prepare_workload(&config)?;
    let inventory = build_inventory(
        &prep,
        &config.faults.weights,
        config.protection.nonlinear_copies,
    );
    let plan = plan_for_trial(&config, &inventory, &prep, trial)?;
    let batch = (trial % prep.batches() as u64) as usize;
    say!(
        "trial {trial}: seed {} rate {} batch {batch}, {} transients, {} permanents",
        config.seed,
        config.rate,
        plan.transients.len(),
        plan.permanents.len()
    );
    let result = run_trial(&prep, &config.protection, &plan, batch)?;
    print_trial(&result, true);
    if let Some(dir) = out_dir(&common.out)? {
        write_artifact(dir, "plan.json", &pretty(&plan)?)?;
        write_artifact(dir, "events.csv", &events_csv(&event_rows(trial, &result)))?;
        write_artifact(
            dir,
            "error_log.csv",
            &error_log_csv(&error_rows_from(&result.error_log)),
        )?;
    }
    Ok(())
}

fn write_campaign(dir: &Path, output: &CampaignOutput) -> Result<()> {
    write_artifact(dir, "report.json", &pretty(&output.report)?)?;
    write_artifact(dir, "trials.csv", &trials_csv(&output.trial_rows))?;
    write_artifact(dir, "events.csv", &events_csv(&output.event_rows))?;
    write_artifact(dir, "error_log.csv", &error_log_csv(&output.error_rows))?;
    let mut plans = String::new();
    for plan in &output.plans {
        plans.push_str(&serde_json::to_string(plan)?);
        plans.push('\n');
    }
    write_artifact(dir, "plans.jsonl", &plans)
}

fn campaign(common: &Common) -> Result<()> {
    let config = load_config(&common.config)?;
    let output = run_campaign(&config)?;
    let report = &output.report;
    say!(
        "campaign: {} trials, {} faults injected ({} consequential)",
        report.trials,
        report.injected_faults,
        report.injected_consequential
    );
    let show = |name: &str, v: Option<f64>| match v {
        Some(v) => say!("{name}: {v:.4}"),
        None => say!("{name}: n/a (no consequential faults)"),
    };
    show("detection coverage", report.detection_coverage);
    show("correction coverage", report.correction_coverage);
    say!(
        "worst detection latency: {:.3} us at {} MHz, modeled slowdown {:.4}",
        report.worst_detection_latency_us,
        config.frequency_mhz,
        report.timing.slowdown
    );
    match out_dir(&common.out)? {
        Some(dir) => write_campaign(dir, &output)?,
        None => say_raw!("{}", pretty(report)?),
    }
    Ok(())
}

fn sensitivity(common: &Common) -> Result<()> {
    let config = load_config(&common.config)?;
    let table = run_sensitivity(&config)?;
    let csv = sensitivity_csv(&table);
    match out_dir(&common.out)? {
        Some(dir) => {
            say!(
                "sensitivity: baseline accuracy {:.4} over {} parameter words",
                table.baseline_accuracy,
                table.parameter_words
            );
            write_artifact(dir, "sensitivity.csv", &csv)?;
        }
        None => say_raw!("{csv}"),
    }
    Ok(())
}

/// Accepts either a single FaultPlan document or one plan per line.
fn load_plan(path: &Path, trial: Option<u64>) -> Result<FaultPlan> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(plan) = serde_json::from_str::<FaultPlan>(&text) {
        if let Some(t) = trial {
            if plan.trial != t {
                bail!("plan file holds trial {}, not {t}", plan.trial);
            }
        }
        return Ok(plan);
    }
    let mut plans = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let plan: FaultPlan = serde_json::from_str(line)
            .with_context(|| format!("parsing {} line {}", path.display(), i + 1))?;
        plans.push(plan);
    }
    match trial {
        Some(t) => plans
            .into_iter()
            .find(|p| p.trial == t)
            .with_context(|| format!("no plan for trial {t} in {}", path.display())),
        None if plans.len() == 1 => Ok(plans.into_iter().next().unwrap()),
        None if plans.is_empty() => bail!("{} holds no plans", path.display()),
        None => bail!(
            "{} holds {} plans; pass --trial to pick one",
            path.display(),
            plans.len()
        ),
    }
}

fn replay(common: &Common, plan_path: &Path, trial: Option<u64>) -> Result<()> {
    let config = load_config(&common.config)?;
    let plan = load_plan(plan_path, trial)?;
    if plan.master_seed != config.seed {
        eprintln!(
            "warning: plan was drawn under seed {}, config says {}; \
             site coordinates may not match the workload",
            plan.master_seed, config.seed
        );
    }
    let prep = prepare_workload(&config)?;
    let batch = (plan.trial % prep.batches() as u64) as usize;
    say!(
        "replaying trial {}: {} transients, {} permanents, batch {batch}",
        plan.trial,
        plan.transients.len(),
        plan.permanents.len()
    );
    say!("protected run:");
    let protected = run_trial(&prep, &config.protection, &plan, batch)?;
    print_trial(&protected, true);
    say!("unprotected run (same plan):");
    let unprotected = run_trial(&prep, &ProtectionConfig::none(), &plan, batch)?;
    print_trial(&unprotected, false);
    if let Some(dir) = out_dir(&common.out)? {
        write_artifact(
            dir,
            "events.csv",
            &events_csv(&event_rows(plan.trial, &protected)),
        )?;
        write_artifact(
            dir,
            "error_log.csv",
            &error_log_csv(&error_rows_from(&protected.error_log)),
        )?;
    }
    Ok(())
}
