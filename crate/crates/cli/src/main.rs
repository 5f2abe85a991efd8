//! `feeder`: generate feeder-service instances, solve them, plan charging
//! infrastructure, export the MILP and check solutions against it.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use feeder_core::bilevel::{plan, plan_csv, HeuristicSolver, LowerLevelSolver, PlanParams};
use feeder_core::instancegen::*;
use feeder_core::milpexport::{build_model, validate_solution, ExportFormat, ExportOptions, ResidualReport};
use feeder_core::model::*;
use feeder_core::preprocess::preprocess;
use feeder_core::routesched::{dump_solution, SolutionDump};
use feeder_core::search::tuning::sweep;
use feeder_core::search::{reference_solve, solve_fs_mfrp, SearchParams};

/// Exit status for invalid inputs or solutions that break constraints.
const EXIT_INVALID: u8 = 2;
/// Exit status when no feasible solution was found.
const EXIT_INFEASIBLE: u8 = 3;

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

fn fail(code: u8, message: impl Into<String>) -> anyhow::Error {
    Failure { code, message: message.into() }.into()
}

#[derive(Parser)]
#[command(name = "feeder", version, about = "Mixed-fleet feeder routing and charging-infrastructure planning")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate an instance, or a directory of demand scenarios.
    Gen(GenArgs),
    /// Run the annealing search on one instance.
    Solve(SolveArgs),
    /// Choose a charging configuration over a scenario directory.
    Plan(PlanArgs),
    /// Write the MILP of an instance as LP or MPS text.
    Export(ExportArgs),
    /// Check a solution file against every MILP constraint.
    Validate(ValidateArgs),
    /// Sweep one search parameter over a list of values.
    Tune(TuneArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Mode {
    Grid,
    CaseStudy,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Vehicle {
    Type1,
    Type2,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ChargerKind {
    Rapid,
    Superfast,
}

impl ChargerKind {
    fn infrastructure(self, chargers: u32) -> Infrastructure {
        match self {
            Self::Rapid => Infrastructure::rapid(chargers),
            Self::Superfast => Infrastructure::superfast(chargers),
        }
    }
}

#[derive(Args, Serialize)]
struct GenArgs {
    #[arg(long, value_enum, default_value = "grid")]
    mode: Mode,
    #[arg(long, default_value_t = 10)]
    requests: usize,
    /// Write this many scenario files into the `--out` directory.
    #[arg(long)]
    scenarios: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "type1")]
    vehicle: Vehicle,
    /// Initial state of charge as a share of battery capacity.
    #[arg(long, default_value_t = 0.5)]
    soc: f64,
    /// Chargers installed at the station.
    #[arg(long, default_value_t = 2)]
    chargers: u32,
    #[arg(long, value_enum, default_value = "rapid")]
    charger_type: ChargerKind,
    /// Instance file, or directory when `--scenarios` is given.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct SearchOpts {
    /// Parameter file of `key = value` lines.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    iter_max: Option<usize>,
    /// Wall-clock limit per run in seconds.
    #[arg(long)]
    time_limit: Option<f64>,
}

impl SearchOpts {
    fn load(&self) -> Result<SearchParams> {
        let mut p = match &self.params {
            Some(path) => SearchParams::parse(&read(path)?).map_err(|e| fail(EXIT_INVALID, format!("{}: {e}", path.display())))?,
            None => SearchParams::default(),
        };
        p.seed = self.seed;
        if let Some(n) = self.iter_max {
            p.iter_max = n;
        }
        if self.time_limit.is_some() {
            p.time_limit_s = self.time_limit;
        }
        p.check().map_err(|e| fail(EXIT_INVALID, e))?;
        Ok(p)
    }
}

#[derive(Args, Serialize)]
struct SolveArgs {
    #[arg(long)]
    instance: PathBuf,
    /// CO₂ reduction target; 0 solves the gasoline-only baseline.
    #[arg(long, default_value_t = 0.0)]
    pi: f64,
    /// Reference emission; estimated by a gasoline-only solve when omitted.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 1)]
    runs: usize,
    #[command(flatten)]
    search: SearchOpts,
    /// Output directory for solution.json, runs.csv and manifest.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct PlanArgs {
    /// Directory of scenario instance files.
    #[arg(long)]
    scenarios: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    pi: f64,
    /// Charger counts to try, e.g. `0..6` (inclusive) or `3`.
    #[arg(long, default_value = "0..6")]
    chargers: String,
    /// Replace the scenarios' charger technology with this one.
    #[arg(long, value_enum)]
    charger_type: Option<ChargerKind>,
    #[arg(long, default_value_t = 0.9)]
    coverage: f64,
    #[arg(long)]
    no_early_stop: bool,
    /// Independent searches per scenario and configuration.
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[command(flatten)]
    search: SearchOpts,
    /// CSV report; the manifest goes next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct ExportArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pi: f64,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value = "lp")]
    format: String,
    /// Leave out the valid inequalities.
    #[arg(long)]
    no_cuts: bool,
    #[command(flatten)]
    search: SearchOpts,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct ValidateArgs {
    /// Solution file written by `solve`.
    solution: PathBuf,
    #[arg(long)]
    instance: PathBuf,
    /// Overrides the target stored in the solution file.
    #[arg(long)]
    pi: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct TuneArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    param: String,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
    #[arg(long, default_value_t = 3)]
    runs: usize,
    #[arg(long, default_value_t = 0.0)]
    pi: f64,
    #[arg(long)]
    gamma: Option<f64>,
    #[command(flatten)]
    search: SearchOpts,
    #[arg(long)]
    out: PathBuf,
}

/// What `solve` writes and `validate` reads.
#[derive(Serialize, Deserialize)]
struct SolutionFile {
    pi: f64,
    gamma: Option<f64>,
    solution: SolutionDump,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

/// Writes through a temporary file so readers never see partial output.
fn write_atomic(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let tmp = path.with_extension("tmp~");
    fs::write(&tmp, text).with_context(|| format!("cannot write {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("cannot write {}", path.display()))
}

fn manifest(command: &str, args: &impl Serialize, outputs: &[&Path], extra: serde_json::Value) -> String {
    let v = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "args": args,
        "outputs": outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "results": extra,
    });
    let mut s = serde_json::to_string_pretty(&v).expect("manifest serializes");
    s.push('\n');
    s
}

fn load_instance(path: &Path) -> Result<Instance> {
    let inst = read_instance(path).map_err(|e| fail(EXIT_INVALID, e.to_string()))?;
    let findings = validate_instance(&inst);
    if !findings.is_empty() {
        let list: Vec<String> = findings.iter().map(|f| f.to_string()).collect();
        return Err(fail(EXIT_INVALID, format!("{} is invalid:\n  {}", path.display(), list.join("\n  "))));
    }
    preprocess(&inst).map_err(|e| fail(EXIT_INVALID, format!("{}: {e}", path.display())))
}

fn vehicle_fleet(vehicle: Vehicle, soc: f64) -> Vec<VehicleType> {
    let ev = match vehicle {
        Vehicle::Type1 => VehicleType::ev_type1(soc),
        Vehicle::Type2 => VehicleType::ev_type2(soc),
    };
    vec![ev, VehicleType::gasoline()]
}

/// Reference emission from the flag, or from a gasoline-only solve.
fn resolve_gamma(inst: &Instance, pi: f64, gamma: Option<f64>, params: &SearchParams, reps: usize) -> Result<Option<f64>> {
    if !(0.0..1.0).contains(&pi) {
        return Err(fail(EXIT_INVALID, format!("--pi must lie in [0, 1), got {pi}")));
    }
    if pi == 0.0 || gamma.is_some() {
        return Ok(gamma);
    }
    let solver = HeuristicSolver { params: params.clone(), reps: reps.max(1) };
    Ok(Some(solver.reference_emission(inst, params.seed)))
}

/// Parses `a..b` (inclusive) or a single count.
fn charger_range(s: &str) -> Result<(u32, u32)> {
    let bad = || fail(EXIT_INVALID, format!("--chargers expects `min..max` or a count, got `{s}`"));
    let (lo, hi) = match s.split_once("..") {
        Some((a, b)) => (a.trim().parse().map_err(|_| bad())?, b.trim_start_matches('=').trim().parse().map_err(|_| bad())?),
        None => {
            let n = s.trim().parse().map_err(|_| bad())?;
            (n, n)
        }
    };
    if lo > hi {
        return Err(bad());
    }
    Ok((lo, hi))
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.soc) {
        return Err(fail(EXIT_INVALID, "--soc must lie in [0, 1]"));
    }
    let params = match a.mode {
        Mode::Grid => GenParams::grid(a.requests, a.seed),
        Mode::CaseStudy => GenParams::case_study(a.requests, a.seed),
    };
    let tt = build_timetable(&TimetableSpec::feeder_day())?;
    let vts = vehicle_fleet(a.vehicle, a.soc);
    let infra = a.charger_type.infrastructure(a.chargers);
    let check = |inst: &Instance| -> Result<()> {
        let findings = validate_instance(inst);
        if findings.is_empty() {
            Ok(())
        } else {
            Err(fail(EXIT_INVALID, format!("generated instance is invalid: {}", findings[0])))
        }
    };
    match a.scenarios {
        None => {
            let inst = generate_instance(&params, &tt, &vts, &infra).map_err(|e| fail(EXIT_INVALID, e.to_string()))?;
            check(&inst)?;
            write_atomic(&a.out, &instance_to_json(&inst))?;
            let m = a.out.with_extension("manifest.json");
            write_atomic(&m, &manifest("gen", a, &[&a.out], json!({ "vertices": inst.vertices.len() })))?;
            eprintln!("wrote {}", a.out.display());
        }
        Some(n) => {
            let scenarios = generate_scenarios(&params, &tt, &vts, &infra, n).map_err(|e| fail(EXIT_INVALID, e.to_string()))?;
            let mut paths = Vec::new();
            for s in &scenarios {
                check(&s.instance)?;
                let p = a.out.join(format!("scenario_{:03}.json", s.id));
                write_atomic(&p, &instance_to_json(&s.instance))?;
                paths.push(p);
            }
            let refs: Vec<&Path> = paths.iter().map(|p| p.as_path()).collect();
            write_atomic(&a.out.join("manifest.json"), &manifest("gen", a, &refs, json!({ "scenarios": n })))?;
            eprintln!("wrote {n} scenarios to {}", a.out.display());
        }
    }
    Ok(())
}

fn cmd_solve(a: &SolveArgs) -> Result<()> {
    let inst = load_instance(&a.instance)?;
    let params = a.search.load()?;
    if a.runs == 0 {
        return Err(fail(EXIT_INVALID, "--runs must be positive"));
    }
    let gamma = resolve_gamma(&inst, a.pi, a.gamma, &params, a.runs)?;
    let cap = Co2Target { pi: a.pi, gamma }.cap().unwrap_or(f64::INFINITY);
    let mut csv = String::from("run,seed,feasible,cost,co2,n_ev,n_gv,charge_min,iterations,restarts,stop,wall_s\n");
    let mut best: Option<(f64, SolutionDump)> = None;
    for run in 0..a.runs {
        let seed = params.seed.wrapping_add(run as u64);
        let p = params.with_seed(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = if a.pi == 0.0 {
            reference_solve(&inst, &p, &mut rng)
        } else {
            Some(solve_fs_mfrp(&inst, cap, &p, &mut rng))
        };
        let Some(out) = out else { continue };
        let t = out.solution().totals(&inst);
        let stop = out.trace.stop.map_or("-".to_string(), |s| format!("{s:?}"));
        csv.push_str(&format!(
            "{run},{seed},{},{:.6},{:.6},{},{},{:.2},{},{},{stop},{:.3}\n",
            out.best.is_some(),
            t.cost,
            t.co2,
            t.n_ev,
            t.n_gv,
            t.charge_time as f64 / 60.0,
            out.trace.iterations,
            out.trace.restarts,
            out.trace.wall_s
        ));
        if let Some(sol) = &out.best {
            if best.as_ref().map_or(true, |(c, _)| sol.cost() < *c) {
                best = Some((sol.cost(), dump_solution(sol, &inst)));
            }
        }
    }
    let runs_path = a.out.join("runs.csv");
    write_atomic(&runs_path, &csv)?;
    let Some((cost, dump)) = best else {
        write_atomic(&a.out.join("manifest.json"), &manifest("solve", a, &[&runs_path], json!({ "feasible": false, "gamma": gamma })))?;
        return Err(fail(EXIT_INFEASIBLE, "no feasible solution found"));
    };
    let emitted_gamma = if a.pi == 0.0 { Some(dump.totals.co2) } else { gamma };
    let sol_path = a.out.join("solution.json");
    let file = SolutionFile { pi: a.pi, gamma: if a.pi == 0.0 { None } else { gamma }, solution: dump };
    write_atomic(&sol_path, &(serde_json::to_string_pretty(&file)? + "\n"))?;
    let results = json!({ "feasible": true, "best_cost": cost, "co2": file.solution.totals.co2, "gamma": emitted_gamma, "cap": cap.is_finite().then_some(cap) });
    write_atomic(&a.out.join("manifest.json"), &manifest("solve", a, &[&sol_path, &runs_path], results))?;
    println!("best cost {cost:.4}, co2 {:.4}", file.solution.totals.co2);
    if a.pi == 0.0 {
        println!("gamma {:.6}", file.solution.totals.co2);
    }
    Ok(())
}

fn load_scenarios(dir: &Path, charger_type: Option<ChargerKind>) -> Result<Vec<Scenario>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("cannot read {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.ends_with(".json") && name != "manifest.json" && !name.ends_with(".manifest.json")
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(fail(EXIT_INVALID, format!("no scenario files in {}", dir.display())));
    }
    let n = paths.len();
    paths
        .iter()
        .enumerate()
        .map(|(id, p)| {
            let mut inst = read_instance(p).map_err(|e| fail(EXIT_INVALID, e.to_string()))?;
            if let Some(kind) = charger_type {
                let infra = kind.infrastructure(0);
                let mut parts = inst.to_parts();
                if parts.sites.is_empty() {
                    parts.sites = infra.sites.clone();
                }
                parts.charger_types = infra.charger_types.clone();
                parts.charging_config = ChargingConfig::empty(parts.sites.len(), 1);
                inst = Instance::from_parts(parts).map_err(|e| fail(EXIT_INVALID, e.to_string()))?;
            }
            Ok(Scenario { id, probability: 1.0 / n as f64, instance: inst })
        })
        .collect()
}

fn cmd_plan(a: &PlanArgs) -> Result<()> {
    let scenarios = load_scenarios(&a.scenarios, a.charger_type)?;
    let params = a.search.load()?;
    let (lo, hi) = charger_range(&a.chargers)?;
    let pp = PlanParams {
        pi: a.pi,
        coverage: a.coverage,
        early_stop: !a.no_early_stop,
        max_per_site: hi,
        min_chargers: lo,
        max_chargers: hi,
        seed: params.seed,
    };
    let solver = HeuristicSolver { params, reps: a.reps.max(1) };
    let report = plan(&scenarios, &solver, &pp).map_err(|e| fail(EXIT_INVALID, e.to_string()))?;
    let types = &scenarios[0].instance.charger_types;
    write_atomic(&a.out, &plan_csv(&report, types))?;
    let best = report.best();
    let results = json!({
        "best_config": best.config.label(),
        "z_u": best.z_u,
        "fleet": best.fleet,
        "complete": best.complete,
        "gammas": report.gammas,
        "stopped_after": report.stopped_after,
        "evaluated": report.evaluations.len(),
    });
    write_atomic(&a.out.with_extension("manifest.json"), &manifest("plan", a, &[&a.out], results))?;
    println!("best {} with Z_U {:.4}, fleet {} EV + {} GV", best.config.label(), best.z_u, best.fleet.0, best.fleet.1);
    if !best.complete {
        return Err(fail(EXIT_INFEASIBLE, "no configuration solved every scenario"));
    }
    Ok(())
}

fn cmd_export(a: &ExportArgs) -> Result<()> {
    let inst = load_instance(&a.instance)?;
    let format = ExportFormat::from_str(&a.format).map_err(|e| fail(EXIT_INVALID, e))?;
    let params = a.search.load()?;
    let gamma = resolve_gamma(&inst, a.pi, a.gamma, &params, 1)?;
    let model = build_model(&inst, a.pi, gamma, ExportOptions { valid_inequalities: !a.no_cuts })?;
    let text = match format {
        ExportFormat::Lp => model.to_lp(),
        ExportFormat::Mps => model.to_mps(),
    };
    write_atomic(&a.out, &text)?;
    let results = json!({ "variables": model.vars.len(), "binaries": model.n_binaries(), "rows": model.rows.len(), "gamma": gamma });
    write_atomic(&a.out.with_extension("manifest.json"), &manifest("export", a, &[&a.out], results))?;
    eprintln!("wrote {} ({} variables, {} rows)", a.out.display(), model.vars.len(), model.rows.len());
    Ok(())
}

fn cmd_validate(a: &ValidateArgs) -> Result<()> {
    let inst = load_instance(&a.instance)?;
    let file: SolutionFile = serde_json::from_str(&read(&a.solution)?)
        .map_err(|e| fail(EXIT_INVALID, format!("{}: {e}", a.solution.display())))?;
    let pi = a.pi.unwrap_or(file.pi);
    let gamma = a.gamma.or(file.gamma);
    let report: ResidualReport = validate_solution(&file.solution, &inst, pi, gamma).map_err(|e| fail(EXIT_INVALID, e.to_string()))?;
    let text = serde_json::to_string_pretty(&report)? + "\n";
    match &a.out {
        Some(p) => write_atomic(p, &text)?,
        None => print!("{text}"),
    }
    let bad = report.violated(a.tolerance);
    if !bad.is_empty() {
        return Err(fail(EXIT_INVALID, format!("violated constraint families: {}", bad.join(", "))));
    }
    Ok(())
}

fn cmd_tune(a: &TuneArgs) -> Result<()> {
    let inst = load_instance(&a.instance)?;
    let params = a.search.load()?;
    if a.runs == 0 {
        return Err(fail(EXIT_INVALID, "--runs must be positive"));
    }
    let gamma = resolve_gamma(&inst, a.pi, a.gamma, &params, 1)?;
    let cap = Co2Target { pi: a.pi, gamma }.cap().unwrap_or(f64::INFINITY);
    let rows = sweep(&inst, cap, &params, &a.param, &a.values, a.runs).map_err(|e| fail(EXIT_INVALID, e))?;
    let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
    let mut csv = String::from("param,value");
    for r in 0..a.runs {
        csv.push_str(&format!(",run{r}"));
    }
    csv.push_str(",best,mean,mean_wall_s\n");
    for row in &rows {
        csv.push_str(&format!("{},{}", row.param, row.value));
        for c in &row.costs {
            csv.push(',');
            csv.push_str(&fmt(*c));
        }
        csv.push_str(&format!(",{},{},{:.3}\n", fmt(row.best), fmt(row.mean), row.mean_wall_s));
    }
    write_atomic(&a.out, &csv)?;
    let best = rows.iter().filter_map(|r| r.mean.map(|m| (m, &r.value))).min_by(|x, y| x.0.total_cmp(&y.0));
    let results = json!({ "best_value": best.map(|b| b.1), "best_mean": best.map(|b| b.0), "gamma": gamma });
    write_atomic(&a.out.with_extension("manifest.json"), &manifest("tune", a, &[&a.out], results))?;
    if best.is_none() {
        return Err(fail(EXIT_INFEASIBLE, "no run found a feasible solution"));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(fail(EXIT_INVALID, "--workers must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| anyhow!(e))?;
    }
    match &cli.cmd {
        Cmd::Gen(a) => cmd_gen(a),
        Cmd::Solve(a) => cmd_solve(a),
        Cmd::Plan(a) => cmd_plan(a),
        Cmd::Export(a) => cmd_export(a),
        Cmd::Validate(a) => cmd_validate(a),
        Cmd::Tune(a) => cmd_tune(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<Failure>().map_or(1, |f| f.code);
            ExitCode::from(code)
        }
    }
}
