use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use ssvs::sim::{check, check_applicable, run, ScenarioConfig, Trace, Verdict, PROPERTIES};

#[derive(Parser)]
#[command(
    name = "ssvs",
    version,
    about = "Run and check self-stabilizing group communication scenarios"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and write its trace.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a scenario over a seed range and check every run.
    Fuzz {
        #[arg(long)]
        scenario: PathBuf,
        /// Inclusive-exclusive range `A..B`.
        #[arg(long, value_parser = parse_range)]
        seeds: (u64, u64),
        /// `ALL` or a comma-separated list of properties.
        #[arg(long, default_value = "ALL")]
        check: String,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Check a property (or `all`) against a trace file.
    Check {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value = "all")]
        property: String,
    },
}

fn parse_range(s: &str) -> Result<(u64, u64), String> {
    let (a, b) = s.split_once("..").ok_or("expected A..B")?;
    let a: u64 = a.trim().parse().map_err(|e| format!("{e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("{e}"))?;
    if a >= b {
        return Err("empty seed range".into());
    }
    Ok((a, b))
}

fn print(v: &Verdict) {
    let step = v.step.map(|s| format!(" @{s}")).unwrap_or_default();
    println!(
        "{} {}{}: {}",
        if v.pass { "PASS" } else { "FAIL" },
        v.property,
        step,
        v.detail
    );
}

fn verdicts(trace: &Trace, which: &str) -> Result<Vec<Verdict>, String> {
    if which.eq_ignore_ascii_case("all") {
        return Ok(check_applicable(trace));
    }
    which
        .split(',')
        .map(|p| check(trace, p.trim()).map_err(|e| format!("{e} (known: {})", PROPERTIES.join(", "))))
        .collect()
}

fn main() -> ExitCode {
    match real_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<bool, String> {
    match Cli::parse().cmd {
        Cmd::Run {
            scenario,
            seed,
            steps,
            out,
        } => {
            let mut cfg = ScenarioConfig::load(&scenario).map_err(|e| e.to_string())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(s) = steps {
                cfg.step_budget = s;
            }
            let trace = run(cfg).map_err(|e| e.to_string())?;
            let f = File::create(&out).map_err(|e| format!("{}: {e}", out.display()))?;
            let mut w = BufWriter::new(f);
            trace.write_jsonl(&mut w).map_err(|e| e.to_string())?;
            w.flush().map_err(|e| e.to_string())?;
            let vs = check_applicable(&trace);
            vs.iter().for_each(print);
            Ok(vs.iter().all(|v| v.pass))
        }
        Cmd::Fuzz {
            scenario,
            seeds,
            check: which,
            steps,
        } => {
            let mut base = ScenarioConfig::load(&scenario).map_err(|e| e.to_string())?;
            if let Some(s) = steps {
                base.step_budget = s;
            }
            let results: Vec<(u64, Result<Vec<Verdict>, String>)> = (seeds.0..seeds.1)
                .into_par_iter()
                .map(|seed| {
                    let cfg = ScenarioConfig { seed, ..base.clone() };
                    let r = run(cfg).map_err(|e| e.to_string()).and_then(|t| verdicts(&t, &which));
                    (seed, r)
                })
                .collect();
            let mut failed = 0;
            for (seed, r) in &results {
                match r {
                    Ok(vs) if vs.iter().all(|v| v.pass) => {}
                    Ok(vs) => {
                        failed += 1;
                        for v in vs.iter().filter(|v| !v.pass) {
                            print!("seed {seed}: ");
                            print(v);
                        }
                    }
                    Err(e) => return Err(e.clone()),
                }
            }
            println!("{} of {} seeds passed", results.len() - failed, results.len());
            Ok(failed == 0)
        }
        Cmd::Check { trace, property } => {
            let t = Trace::load(&trace).map_err(|e| e.to_string())?;
            let vs = verdicts(&t, &property)?;
            vs.iter().for_each(print);
            Ok(vs.iter().all(|v| v.pass))
        }
    }
}
