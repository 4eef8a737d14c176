use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use rplsim::attacks::{AdversaryType, AttackBehavior};
use rplsim::check::{check_trace, tally};
use rplsim::metrics::to_dot;
use rplsim::scenarios::{
    load_scenario, run_experiment_with, run_matrix, ExperimentResult, MatrixCell, Overrides,
    ScenarioConfig,
};
use rplsim::security::SecurityMode;
use rplsim::trace::{read_jsonl, write_jsonl, Trace};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(
    name = "rplsim",
    version,
    about = "RPL security-mode and attack simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rounds: Option<u32>,
    /// Round length in seconds.
    #[arg(long)]
    duration: Option<u64>,
    /// Write per-round JSON-lines traces next to the results.
    #[arg(long)]
    trace: bool,
    /// Output root. Results go to `<out>/<scenario name>/`.
    #[arg(long, env = "RPLSIM_OUT", default_value = "results")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mode: Option<SecurityMode>,
        #[arg(long)]
        attack: Option<AttackBehavior>,
        #[arg(long)]
        adversary: Option<AdversaryType>,
    },
    /// Run all 16 experiment/scenario cells on the canonical deployment.
    Matrix {
        #[command(flatten)]
        common: Common,
    },
    /// Validate whole-trace invariants of a JSON-lines trace.
    CheckTrace { trace: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run {
            scenario,
            common,
            mode,
            attack,
            adversary,
        } => cmd_run(&scenario, &common, mode, attack, adversary),
        Command::Matrix { common } => cmd_matrix(&common),
        Command::CheckTrace { trace } => cmd_check_trace(&trace),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn summary_json(cfg: &ScenarioConfig, res: &ExperimentResult) -> Value {
    let metrics: serde_json::Map<String, Value> = res
        .summary
        .iter()
        .map(|(k, s)| {
            (
                k.clone(),
                json!({ "mean": s.mean, "ci95": s.ci95, "std_dev": s.std_dev, "n": s.n }),
            )
        })
        .collect();
    let mut v = json!({
        "name": res.name,
        "seed": res.seed,
        "rounds": res.rounds.len(),
        "duration_s": cfg.sim.duration.as_secs_f64(),
        "mode": cfg.sim.mode,
        "adversary": cfg.sim.adversary,
        "metrics": metrics,
        "modal_dodag": res.modal_dodag.as_ref().map(|m| json!({
            "share": m.share,
            "samples": m.samples,
            "parents": m.parents.iter().map(|(c, p)| (c.to_string(), json!(p))).collect::<serde_json::Map<_, _>>(),
        })),
    });
    if res.rounds.len() < 2 {
        v["note"] = json!("confidence intervals unavailable with fewer than 2 rounds");
    }
    v
}

fn write_rounds_csv(path: &Path, res: &ExperimentResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["round", "metric", "value"])?;
    for (i, r) in res.rounds.iter().enumerate() {
        for (k, v) in r.scalars() {
            w.write_record([i.to_string(), k.to_string(), v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, v)?;
    f.write_all(b"\n")?;
    Ok(())
}

fn write_traces(path: &Path, traces: Vec<(u32, Trace)>) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    let mut traces = traces;
    traces.sort_by_key(|(r, _)| *r);
    for (_, t) in traces {
        write_jsonl(&t, &mut f)?;
    }
    Ok(())
}

fn fmt_ci(s: Option<&rplsim::stats::Summary>) -> String {
    match s {
        Some(s) => match s.ci95 {
            Some(h) => format!("{:.4} ± {:.4}", s.mean, h),
            None => format!("{:.4} (CI n/a)", s.mean),
        },
        None => "-".into(),
    }
}

fn print_summary(res: &ExperimentResult) {
    println!("{} ({} rounds)", res.name, res.rounds.len());
    for (k, s) in &res.summary {
        println!("  {:<28} {}", k, fmt_ci(Some(s)));
    }
    if res.rounds.len() < 2 {
        println!("  note: confidence intervals unavailable with fewer than 2 rounds");
    }
}

fn cmd_run(
    scenario: &Path,
    common: &Common,
    mode: Option<SecurityMode>,
    attack: Option<AttackBehavior>,
    adversary: Option<AdversaryType>,
) -> Result<ExitCode> {
    let overrides = Overrides {
        seed: common.seed,
        rounds: common.rounds,
        duration_s: common.duration,
        mode,
        attack,
        adversary_type: adversary,
    };
    let cfg = load_scenario(scenario, &overrides)?;
    let dir = common.out.join(&cfg.name);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let traces = Mutex::new(Vec::new());
    let res = run_experiment_with(&cfg, |r, t| {
        if common.trace {
            traces.lock().unwrap().push((r, t.clone()));
        }
    })?;
    write_rounds_csv(&dir.join("rounds.csv"), &res)?;
    write_json(&dir.join("summary.json"), &summary_json(&cfg, &res))?;
    if common.trace {
        write_traces(&dir.join("trace.jsonl"), traces.into_inner().unwrap())?;
    }
    print_summary(&res);
    println!("results in {}", dir.display());
    Ok(ExitCode::SUCCESS)
}

const MATRIX_METRICS: [&str; 8] = [
    "pdr",
    "e2e_latency_ms",
    "ctrl_sent",
    "ctrl_received",
    "ctrl_total",
    "power_per_received_packet",
    "energy_total_mj",
    "cc_sent",
];

fn write_matrix_csv(path: &Path, cells: &[MatrixCell]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["metric".to_string(), "stat".to_string()];
    header.extend(cells.iter().map(|c| c.label()));
    w.write_record(&header)?;
    for metric in MATRIX_METRICS {
        for stat in ["mean", "ci95"] {
            let mut row = vec![metric.to_string(), stat.to_string()];
            for c in cells {
                row.push(match &c.result {
                    Ok(r) => match r.summary.get(metric) {
                        Some(s) if stat == "mean" => s.mean.to_string(),
                        Some(s) => s.ci95.map(|h| h.to_string()).unwrap_or_default(),
                        None => String::new(),
                    },
                    Err(_) => "FAILED".into(),
                });
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_matrix(common: &Common) -> Result<ExitCode> {
    let dir = common.out.join("matrix");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let traces = Mutex::new(Vec::new());
    let adjust = |cfg: &mut ScenarioConfig| {
        if let Some(s) = common.seed {
            cfg.seed = s;
        }
        if let Some(r) = common.rounds {
            cfg.rounds = r;
        }
        if let Some(d) = common.duration {
            cfg.sim.duration = rplsim::types::SimTime::from_secs(d);
        }
    };
    let cells = run_matrix(adjust, |e, a, r, t| {
        if common.trace {
            traces.lock().unwrap().push((e, a, r, t.clone()));
        }
    });
    write_matrix_csv(&dir.join("matrix.csv"), &cells)?;
    let mut summary = serde_json::Map::new();
    let mut failed = 0;
    for c in &cells {
        let mut cfg = ScenarioConfig::canonical(c.experiment, c.attack);
        adjust(&mut cfg);
        let cell_dir = dir.join(&cfg.name);
        fs::create_dir_all(&cell_dir)?;
        match &c.result {
            Ok(r) => {
                write_rounds_csv(&cell_dir.join("rounds.csv"), r)?;
                if let Some(m) = &r.modal_dodag {
                    let dot = to_dot(
                        &c.label(),
                        &m.parents,
                        cfg.sim.adversary.as_ref().map(|a| a.node),
                    );
                    fs::write(dir.join(format!("dodag-{}.dot", cfg.name)), dot)?;
                }
                summary.insert(c.label(), summary_json(&cfg, r));
                println!(
                    "{:<22} pdr {:<22} e2e {:<22} ctrl {:<24} power {}",
                    c.label(),
                    fmt_ci(r.summary.get("pdr")),
                    fmt_ci(r.summary.get("e2e_latency_ms")),
                    fmt_ci(r.summary.get("ctrl_total")),
                    fmt_ci(r.summary.get("power_per_received_packet")),
                );
            }
            Err(e) => {
                failed += 1;
                summary.insert(c.label(), json!({ "error": e.to_string() }));
                println!("{:<22} FAILED: {e}", c.label());
            }
        }
    }
    write_json(&dir.join("summary.json"), &Value::Object(summary))?;
    if common.trace {
        let mut all = traces.into_inner().unwrap();
        all.sort_by_key(|(e, a, r, _)| (*e, a.slug(), *r));
        for c in &cells {
            let name = ScenarioConfig::canonical(c.experiment, c.attack).name;
            let mine: Vec<(u32, Trace)> = all
                .iter()
                .filter(|(e, a, _, _)| *e == c.experiment && *a == c.attack)
                .map(|(_, _, r, t)| (*r, t.clone()))
                .collect();
            write_traces(&dir.join(&name).join("trace.jsonl"), mine)?;
        }
    }
    println!("results in {}", dir.display());
    Ok(if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn cmd_check_trace(path: &Path) -> Result<ExitCode> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let trace =
        read_jsonl(BufReader::new(f)).with_context(|| format!("parsing {}", path.display()))?;
    let violations = check_trace(&trace);
    for (inv, n) in tally(&violations) {
        println!("{:<22} {}", inv.name(), n);
    }
    for v in violations.iter().take(50) {
        println!("{v}");
    }
    println!("{} violations", violations.len());
    Ok(if violations.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}
