//! `sim`: run workloads, sweeps, litmus explorations and recipes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use pimsim::config::{Configuration, PimLatencies, SimConfig};
use pimsim::exec::Exec;
use pimsim::litmus::{builtin, explore, verdict, verdict_table, ExploreMode, LitmusTest};
use pimsim::recipe::{run_recipe, shipped, validate_recipes, Recipe, RecipeReport};
use pimsim::runner::{run_workload, sweep, sweep_csv, Axis};
use pimsim::stats::{csv_header, csv_row};
use pimsim::workloads::WorkloadSpec;

#[derive(Parser)]
#[command(name = "sim", version, about = "PIM consistency-model simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum PimLatency {
    Default,
    Zero,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Exhaustive,
    Random,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one workload and write report.json and report.csv.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        workload: PathBuf,
        /// Model or baseline: atomic, store, scope, scope-relaxed, naive,
        /// sw-flush or uncacheable. Defaults to the config's.
        #[arg(long)]
        model: Option<Configuration>,
        #[arg(long, value_enum)]
        pim_latency: Option<PimLatency>,
        /// `unbounded` or an op count.
        #[arg(long)]
        pim_buffer: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Explore litmus tests and print a verdict table.
    Litmus {
        /// Built-in suite; used when no `--file` is given.
        #[arg(long, default_value = "builtin")]
        suite: String,
        #[arg(long)]
        file: Vec<PathBuf>,
        /// Only these tests (by name).
        #[arg(long)]
        test: Vec<String>,
        /// `all` or a comma-separated list of configurations.
        #[arg(long, default_value = "all")]
        model: String,
        #[arg(long, value_enum, default_value = "exhaustive")]
        mode: Mode,
        #[arg(long, default_value_t = 14)]
        depth: usize,
        #[arg(long, default_value_t = 200_000)]
        max_runs: u64,
        #[arg(long, default_value_t = 200)]
        trials: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// One run per axis value and configuration, written as CSV.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        workload: PathBuf,
        #[arg(long)]
        axis: Axis,
        /// Comma-separated axis values; defaults depend on the axis.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        /// Comma-separated configurations; defaults to the four models and
        /// the naive and sw-flush baselines.
        #[arg(long, value_delimiter = ',')]
        configs: Vec<Configuration>,
        #[arg(long)]
        seed: Option<u64>,
        /// CSV destination; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run shipped recipes (or recipe files) and check their properties.
    Recipe {
        /// Recipe names or paths to recipe files.
        names: Vec<String>,
        #[arg(long)]
        all: bool,
        #[arg(long)]
        list: bool,
        /// Shrink every workload to its smallest scale.
        #[arg(long)]
        smallest: bool,
    },
}

type Fallible<T> = Result<T, String>;

fn load_config(path: &Option<PathBuf>) -> Fallible<SimConfig> {
    match path {
        None => Ok(SimConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            SimConfig::from_json(&text).map_err(|e| format!("{}: {e}", p.display()))
        }
    }
}

fn load_workload(path: &Path) -> Fallible<WorkloadSpec> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    WorkloadSpec::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn write(path: &Path, text: &str) -> Fallible<()> {
    fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    config: &Option<PathBuf>,
    workload: &Path,
    model: Option<Configuration>,
    pim_latency: Option<PimLatency>,
    pim_buffer: Option<String>,
    seed: Option<u64>,
    out: &Path,
) -> Fallible<bool> {
    let mut cfg = load_config(config)?;
    let spec = load_workload(workload)?;
    if let Some(c) = model {
        cfg.set_configuration(c);
    }
    if let Some(PimLatency::Zero) = pim_latency {
        cfg.pim.latency = PimLatencies::ZERO;
    }
    if let Some(b) = pim_buffer {
        cfg.pim.buffer_capacity = match b.as_str() {
            "unbounded" => None,
            n => Some(n.parse().map_err(|_| format!("--pim-buffer: expected `unbounded` or a count, got `{n}`"))?),
        };
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let r = run_workload(&cfg, &spec).map_err(|e| e.to_string())?;
    fs::create_dir_all(out).map_err(|e| format!("{}: {e}", out.display()))?;
    let doc = json!({ "report": r.report, "config": cfg, "workload": spec, "violations": r.outcome.violations });
    write(&out.join("report.json"), &serde_json::to_string_pretty(&doc).expect("report serializes"))?;
    write(
        &out.join("report.csv"),
        &format!("{}\n{}\n", csv_header(), csv_row("model", r.report.configuration.as_str(), &r.report)),
    )?;
    let rep = &r.report;
    println!(
        "{}: {} cycles, {} PIM ops, hit rate {}, {} violations, oracle {}",
        rep.configuration,
        rep.total_cycles,
        rep.pim_ops,
        rep.scope_buffer_hit_rate.map_or("n/a".into(), |h| format!("{h:.4}")),
        rep.invariant_violations,
        rep.oracle_match.map_or("n/a", |m| if m { "match" } else { "MISMATCH" }),
    );
    let ok = rep.invariant_violations == 0 && rep.oracle_match != Some(false);
    if !ok {
        for v in &r.outcome.violations {
            eprintln!("violation: {v}");
        }
        eprintln!("reproduce with --seed {}", cfg.seed);
    }
    Ok(ok)
}

fn parse_model_list(s: &str) -> Fallible<Vec<Configuration>> {
    if s == "all" {
        return Ok(Configuration::six());
    }
    s.split(',').map(|m| m.trim().parse()).collect()
}

#[allow(clippy::too_many_arguments)]
fn cmd_litmus(
    suite: &str,
    files: &[PathBuf],
    names: &[String],
    model: &str,
    mode: Mode,
    depth: usize,
    max_runs: u64,
    trials: u64,
    seed: u64,
    json_out: &Option<PathBuf>,
) -> Fallible<bool> {
    let mut tests: Vec<LitmusTest> = if files.is_empty() {
        if suite != "builtin" {
            return Err(format!("unknown suite `{suite}`; only `builtin` is available"));
        }
        builtin()
    } else {
        files
            .iter()
            .map(|p| {
                let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
                LitmusTest::parse(&text).map_err(|e| format!("{}: {e}", p.display()))
            })
            .collect::<Fallible<_>>()?
    };
    if !names.is_empty() {
        for n in names {
            if !tests.iter().any(|t| &t.name == n) {
                return Err(format!("unknown litmus test `{n}`"));
            }
        }
        tests.retain(|t| names.contains(&t.name));
    }
    let configs = parse_model_list(model)?;
    let mode = match mode {
        Mode::Exhaustive => ExploreMode::Exhaustive {
            depth_bound: depth,
            max_runs,
        },
        Mode::Random => ExploreMode::Random { trials, seed },
    };
    let exec = Exec::from_env();
    let mut verdicts = Vec::new();
    for t in &tests {
        for &c in &configs {
            verdicts.push(verdict(&explore(t, c, mode, exec), t));
        }
    }
    print!("{}", verdict_table(&verdicts));
    if let Some(p) = json_out {
        write(p, &serde_json::to_string_pretty(&verdicts).expect("verdicts serialize"))?;
    }
    Ok(verdicts.iter().all(|v| v.pass))
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    config: &Option<PathBuf>,
    workload: &Path,
    axis: Axis,
    values: Vec<String>,
    configs: Vec<Configuration>,
    seed: Option<u64>,
    out: &Option<PathBuf>,
) -> Fallible<bool> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let spec = load_workload(workload)?;
    let values = if values.is_empty() { axis.default_values() } else { values };
    let configs = if configs.is_empty() { Configuration::six() } else { configs };
    let rows = sweep(&cfg, &spec, axis, &values, &configs, Exec::from_env()).map_err(|e| e.to_string())?;
    let csv = sweep_csv(&rows);
    match out {
        Some(p) => write(p, &csv)?,
        None => print!("{csv}"),
    }
    let bad = rows.iter().filter(|r| r.report.invariant_violations > 0).count();
    if bad > 0 {
        eprintln!("{bad} runs reported invariant violations; reproduce with --seed {}", cfg.seed);
    }
    Ok(bad == 0)
}

fn print_recipe(r: &RecipeReport) {
    println!("recipe {}: {}", r.name, if r.pass { "PASS" } else { "FAIL" });
    for p in &r.properties {
        let status = match (p.holds, p.required) {
            (true, _) => "holds",
            (false, true) => "FAILS",
            (false, false) => "fails (informational)",
        };
        println!("  {status:<22} {:?}: {}", p.property, p.detail);
    }
}

fn cmd_recipe(names: &[String], all: bool, list: bool, smallest: bool) -> Fallible<bool> {
    let shipped = shipped().map_err(|e| e.to_string())?;
    if list {
        for r in &shipped {
            println!("{:<18} {}", r.name(), r.doc.description);
        }
        return Ok(true);
    }
    let exec = Exec::from_env();
    if all && smallest {
        let reports = validate_recipes(exec).map_err(|e| e.to_string())?;
        for r in &reports {
            print_recipe(r);
        }
        println!("{} recipes validated at smallest scale", reports.len());
        return Ok(true);
    }
    let mut chosen: Vec<Recipe> = Vec::new();
    if all {
        chosen = shipped.clone();
    }
    for n in names {
        match shipped.iter().find(|r| r.name() == n) {
            Some(r) => chosen.push(r.clone()),
            None => {
                let text = fs::read_to_string(n).map_err(|_| format!("unknown recipe `{n}`"))?;
                chosen.push(Recipe::from_json(&text).map_err(|e| e.to_string())?);
            }
        }
    }
    if chosen.is_empty() {
        return Err("name a recipe, or pass --all or --list".into());
    }
    let mut ok = true;
    for r in &chosen {
        let r = if smallest { r.smallest() } else { r.clone() };
        let rep = run_recipe(&r, exec).map_err(|e| e.to_string())?;
        print_recipe(&rep);
        if !smallest {
            ok &= rep.pass;
        }
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run {
            config,
            workload,
            model,
            pim_latency,
            pim_buffer,
            seed,
            out,
        } => cmd_run(&config, &workload, model, pim_latency, pim_buffer, seed, &out),
        Cmd::Litmus {
            suite,
            file,
            test,
            model,
            mode,
            depth,
            max_runs,
            trials,
            seed,
            json,
        } => cmd_litmus(&suite, &file, &test, &model, mode, depth, max_runs, trials, seed, &json),
        Cmd::Sweep {
            config,
            workload,
            axis,
            values,
            configs,
            seed,
            out,
        } => cmd_sweep(&config, &workload, axis, values, configs, seed, &out),
        Cmd::Recipe {
            names,
            all,
            list,
            smallest,
        } => cmd_recipe(&names, all, list, smallest),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
