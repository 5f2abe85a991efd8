//! Acceptance suite. Prints one `[PASS]` or `[FAIL]` line per criterion and
//! exits non-zero if any criterion fails. Pass criterion numbers as
//! arguments to run a subset.

mod common;

use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use common::*;
use feeder_core::bilevel::*;
use feeder_core::charging::{detect_conflicts, propagate_soc};
use feeder_core::instancegen::*;
use feeder_core::milpexport::*;
use feeder_core::oracle::*;
use feeder_core::preprocess::preprocess;
use feeder_core::routesched::*;
use feeder_core::search::*;
use feeder_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn c1_oracle_routing() -> Verdict {
    let start = Instant::now();
    let p = small_params(5000);
    let mut equal = 0;
    let mut worst = 0.0f64;
    for i in 0..50u64 {
        let inst = gv_only(2 + (i % 3) as usize, 100 + i);
        let ex = exact_solve(&inst, f64::INFINITY).unwrap().cost;
        let da = best_of(&inst, f64::INFINITY, &p, 3).unwrap_or(f64::INFINITY);
        let gap = rel_gap(da, ex);
        worst = worst.max(gap);
        if gap <= 1e-6 {
            equal += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(equal == 50 && secs < 120.0, format!("{equal}/50 equal to the oracle, worst gap {worst:.2e}, {secs:.1} s"))
}

fn c2_oracle_mixed() -> Verdict {
    let p = small_params(5000);
    let (mut within, mut capped) = (0, 0);
    let mut worst = 0.0f64;
    for i in 0..25u64 {
        let inst = mixed(2 + (i % 2) as usize, 600 + i, 0.5);
        let cap = 0.5 * exact_reference_emission(&inst).unwrap();
        let ex = exact_solve(&inst, cap).unwrap().cost;
        let best = (0..5u64)
            .filter_map(|s| solve_fs_mfrp(&inst, cap, &p, &mut ChaCha8Rng::seed_from_u64(s)).best)
            .min_by(|a, b| a.cost().total_cmp(&b.cost()));
        let Some(best) = best else { continue };
        let gap = (best.cost() - ex) / ex;
        worst = worst.max(gap);
        if gap <= 0.02 {
            within += 1;
        }
        if best.co2() <= cap {
            capped += 1;
        }
    }
    verdict(within == 25 && capped == 25, format!("{within}/25 within 2%, {capped}/25 under the cap, worst gap {:.3}%", 100.0 * worst))
}

fn solver_script() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scripts/solve_lp.py")
}

/// Optimal objective from HiGHS, or an error message.
fn highs(text: &str, ext: &str) -> Result<f64, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join(format!("model.{ext}"));
    std::fs::write(&path, text).map_err(|e| e.to_string())?;
    let out = Command::new("python3")
        .arg(solver_script())
        .arg(&path)
        .args(["--time-limit", "600"])
        .output()
        .map_err(|e| format!("python3: {e}"))?;
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).trim().to_string());
    }
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    if v["status"] != "Optimal" {
        return Err(format!("solver status {}", v["status"]));
    }
    v["objective"].as_f64().ok_or_else(|| "no objective".into())
}

fn c3_milp_cross_check() -> Verdict {
    let mut notes = Vec::new();
    let mut c10_ok = 0;
    for i in 0..5u64 {
        let inst = gv_only(10, 500 + i);
        let da = best_of(&inst, f64::INFINITY, &SearchParams::default(), 5).unwrap_or(f64::INFINITY);
        let model = build_model(&inst, 0.0, None, ExportOptions::default()).unwrap();
        match highs(&model.to_lp(), "lp") {
            Ok(opt) if rel_gap(da, opt) <= 0.01 => c10_ok += 1,
            Ok(opt) => notes.push(format!("c10 #{i}: search {da:.4} vs exact {opt:.4}")),
            Err(e) => notes.push(format!("c10 #{i}: {e}")),
        }
    }
    let mut tiny_ok = 0;
    let tiny = 12;
    for i in 0..tiny as u64 {
        let inst = if i % 3 == 0 { gv_only(3, 700 + i) } else { mixed(3, 700 + i, if i % 3 == 1 { 0.5 } else { 0.03 }) };
        let (pi, gamma) = if i % 3 == 0 { (0.0, None) } else { (0.5, Some(exact_reference_emission(&inst).unwrap())) };
        let cap = gamma.map_or(f64::INFINITY, |g| (1.0 - pi) * g);
        let ex = exact_solve(&inst, cap).unwrap();
        let dump = dump_solution(ex.solution.as_ref().unwrap(), &inst);
        let report = validate_solution(&dump, &inst, pi, gamma).unwrap();
        let mps = export_milp(&inst, pi, gamma, ExportFormat::Mps).unwrap();
        match highs(&mps, "mps") {
            Ok(opt) if rel_gap(opt, ex.cost) <= 1e-6 && report.is_feasible(1e-6) && rel_gap(report.objective, ex.cost) <= 1e-9 => {
                tiny_ok += 1
            }
            Ok(opt) => notes.push(format!(
                "tiny #{i}: oracle {:.4}, exact {opt:.4}, validated {:.4} {:?}",
                ex.cost,
                report.objective,
                report.violated(1e-6)
            )),
            Err(e) => notes.push(format!("tiny #{i}: {e}")),
        }
    }
    let mut detail = format!("c10 {c10_ok}/5 within 1% of the exported-model optimum, tiny {tiny_ok}/{tiny} three-way agreement");
    if !notes.is_empty() {
        detail.push_str(&format!(" [{}]", notes.join("; ")));
    }
    verdict(c10_ok == 5 && tiny_ok == tiny, detail)
}

/// SOC bounds and charger exclusivity of an accepted solution, checked
/// directly and through the model residuals.
fn charging_sound(sol: &Solution, inst: &Instance, check_model: bool) -> bool {
    if !detect_conflicts(sol, inst).is_empty() {
        return false;
    }
    for r in sol.routes.iter().filter(|r| r.serves_requests()) {
        let vt = &inst.vehicle_types[r.vehicle_type];
        if !vt.is_electric() {
            continue;
        }
        let prof = propagate_soc(inst, vt, &r.stops);
        if prof.overcharge > 1e-9 || prof.arrival.iter().any(|&e| e < vt.e_min - 1e-9 || e > vt.e_max + 1e-9) {
            return false;
        }
    }
    if check_model {
        let report = validate_solution(&dump_solution(sol, inst), inst, 0.0, None).unwrap();
        let fams = ["eq24", "eq27", "eq28", "eq29", "eq30", "eq31", "eq32", "chcap"];
        if fams.iter().any(|f| report.families.get(*f).copied().unwrap_or(0.0) > 1e-6) {
            return false;
        }
    }
    true
}

fn c4_charging_property() -> Verdict {
    let runs = 10_000u64;
    let (mut accepted, mut with_charging, mut bad) = (0, 0, 0);
    let tt = timetable();
    for run in 0..runs {
        let mut rng = ChaCha8Rng::seed_from_u64(run);
        let n = rng.gen_range(2..=6);
        let soc = rng.gen_range(0.02..0.3);
        let infra = Infrastructure::rapid(rng.gen_range(1..=2));
        let types = [VehicleType::ev_type1(soc), VehicleType::gasoline()];
        let inst = generate_instance(&GenParams::grid(n, run), &tt, &types, &infra).unwrap();
        let inst = preprocess(&inst).unwrap();
        let cap = if rng.gen_bool(0.5) { 0.0 } else { f64::INFINITY };
        let p = SearchParams { iter_max: 300, init_samples: 10, seed: run, ..SearchParams::default() };
        let Some(best) = solve_fs_mfrp(&inst, cap, &p, &mut rng).best else { continue };
        accepted += 1;
        if best.routes.iter().any(|r| r.has_charges()) {
            with_charging += 1;
        }
        if !charging_sound(&best, &inst, run % 10 == 0) {
            bad += 1;
        }
    }
    verdict(bad == 0, format!("{runs} runs, {accepted} accepted ({with_charging} with charging), {bad} with overlaps or SOC outside bounds"))
}

fn scale_instance(soc: f64) -> Instance {
    grid(500, 1, &[VehicleType::ev_type1(soc), VehicleType::gasoline()], &Infrastructure::rapid(2))
}

const SCALE_LIMIT_S: f64 = 45.0;

fn c5_scale() -> Verdict {
    let p = SearchParams { time_limit_s: Some(SCALE_LIMIT_S), ..SearchParams::default() };
    let start = Instant::now();
    let half = scale_instance(0.5);
    let gamma = reference_emission(&half, &p, &mut ChaCha8Rng::seed_from_u64(0));
    let out = solve_fs_mfrp(&half, 0.1 * gamma, &p, &mut ChaCha8Rng::seed_from_u64(1));
    let wall = start.elapsed().as_secs_f64();
    let (half_ok, half_note) = match &out.best {
        Some(b) => {
            let t = b.totals(&half);
            (t.charge_time > 0, format!("SOC 50%: {} EV + {} GV, {:.1} min charging, {wall:.0} s", t.n_ev, t.n_gv, minutes(t.charge_time)))
        }
        None => (false, format!("SOC 50%: no feasible solution, {wall:.0} s")),
    };
    let full = scale_instance(1.0);
    let mut charged = Vec::new();
    for seed in 0..5u64 {
        let o = solve_fs_mfrp(&full, 0.1 * gamma, &p, &mut ChaCha8Rng::seed_from_u64(100 + seed));
        charged.push(o.best.map(|b| b.totals(&full).charge_time));
    }
    let zero = charged.iter().filter(|c| **c == Some(0)).count();
    let list: Vec<String> = charged.iter().map(|c| c.map_or("infeasible".into(), |s| format!("{s} s"))).collect();
    verdict(
        half_ok && wall <= 300.0 && zero >= 4,
        format!("{half_note}; full SOC charging per seed [{}], {zero}/5 without charging", list.join(", ")),
    )
}

fn c6_monotonicity() -> Verdict {
    let p = SearchParams { time_limit_s: Some(8.0), ..SearchParams::default() };
    let mut holds = 0;
    let mut rows = Vec::new();
    for i in 0..5u64 {
        let inst = grid(100, 800 + i, &[VehicleType::ev_type1(0.5), VehicleType::gasoline()], &Infrastructure::rapid(2));
        let reference = reference_solve(&inst, &p, &mut ChaCha8Rng::seed_from_u64(i)).unwrap();
        let gv = reference.solution();
        let gamma = gv.co2();
        let run = |pi: f64| solve_fs_mfrp(&inst, (1.0 - pi) * gamma, &p, &mut ChaCha8Rng::seed_from_u64(10 + i)).best;
        let (s5, s9) = (run(0.5), run(0.9));
        let ok = match (&s5, &s9) {
            (Some(a), Some(b)) => {
                let (ta, tb) = (a.totals(&inst), b.totals(&inst));
                rows.push(format!("{:.0}/{:.0}/{:.0} ev {}/{}", gv.cost(), ta.cost, tb.cost, ta.n_ev, tb.n_ev));
                tb.cost >= ta.cost && ta.cost >= gv.cost() && tb.n_ev >= ta.n_ev
            }
            _ => {
                rows.push("infeasible".into());
                false
            }
        };
        if ok {
            holds += 1;
        }
    }
    verdict(holds >= 4, format!("{holds}/5 instances ordered (GV/π0.5/π0.9 cost, EV count): {}", rows.join("; ")))
}

fn c7_bilevel_oracle() -> Verdict {
    let sites = vec![
        SiteCandidate { id: 0, coord: Point::new(0, 0), power_limit: 125.0, opening_cost: 4.11 },
        SiteCandidate { id: 1, coord: Point::new(1000, -1000), power_limit: 125.0, opening_cost: 2.0 },
    ];
    let infra = Infrastructure { config: ChargingConfig::empty(2, 1), sites, charger_types: vec![ChargerType::rapid(0)] };
    let types = [VehicleType::ev_type1(0.05), VehicleType::gasoline()];
    let mut agree = 0;
    let mut notes = Vec::new();
    let families = 4;
    for f in 0..families as u64 {
        let sc = generate_scenarios(&GenParams::grid(3, 900 + f), &timetable(), &types, &infra, 3).unwrap();
        let params = PlanParams { pi: 0.9, early_stop: false, max_per_site: 1, ..PlanParams::default() };
        let report = plan(&sc, &OracleSolver, &params).unwrap();
        let exact = exact_best_config(&sc, 0.9, 1).unwrap();
        let best = report.best();
        if best.config == exact.config && rel_gap(best.z_u, exact.z_u) < 1e-9 && report.evaluations.len() == exact.all.len() {
            agree += 1;
        }
        notes.push(format!("{} at {:.2}", best.config.label(), best.z_u));
    }
    verdict(agree == families, format!("{agree}/{families} scenario sets pick the enumerated optimum ({})", notes.join(", ")))
}

fn c8_evaluator() -> Verdict {
    let (mut agree, mut feasible) = (0, 0);
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + seed);
        let inst = random_instance(&mut rng, 1 + (seed % 4) as usize);
        let stops = random_route(&mut rng, &inst);
        let cap = inst.vehicle_types[0].capacity;
        let res = evaluate_stops(&inst, cap, &stops);
        let expect = oracle_feasible(&inst, cap, &stops);
        if res.feasible == expect && (!res.feasible || schedule_satisfies(&inst, &stops, &res.begin)) {
            agree += 1;
        }
        feasible += expect as usize;
    }
    verdict(agree == 1000, format!("{agree}/1000 verdicts agree with the difference-constraint oracle ({feasible} feasible)"))
}

fn c9_preprocessing() -> Verdict {
    let tt = timetable();
    let mut same = 0;
    let total = 30;
    let mut eliminated = 0;
    for i in 0..total as u64 {
        let n = 2 + (i % 3) as usize;
        let types: Vec<VehicleType> = if i % 2 == 0 {
            vec![VehicleType::gasoline()]
        } else {
            vec![VehicleType::ev_type1(if i % 4 == 1 { 0.5 } else { 0.05 }), VehicleType::gasoline()]
        };
        let raw = generate_instance(&GenParams::grid(n, 1000 + i), &tt, &types, &Infrastructure::rapid(1)).unwrap();
        let pre = preprocess(&raw).unwrap();
        eliminated += pre.arc_mask.eliminated_count() - raw.arc_mask.eliminated_count();
        let cap = if i % 2 == 0 { f64::INFINITY } else { 0.5 * exact_reference_emission(&raw).unwrap() };
        let (a, b) = (exact_solve(&raw, cap).unwrap().cost, exact_solve(&pre, cap).unwrap().cost);
        if (a.is_infinite() && b.is_infinite()) || rel_gap(a, b) < 1e-9 {
            same += 1;
        }
    }
    verdict(same == total, format!("{same}/{total} optima unchanged, {eliminated} arcs eliminated in total"))
}

fn c10_percentile() -> Verdict {
    let fleets = [(36, 0), (36, 0), (36, 0), (36, 0), (37, 0)];
    let got = percentile_fleet(&fleets, 0.9).unwrap();
    verdict(got.0 == 36, format!("EV fleet {} at 90% coverage", got.0))
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("oracle equivalence, routing", c1_oracle_routing),
        ("oracle equivalence, mixed fleet with CO2 cap", c2_oracle_mixed),
        ("MILP cross-check", c3_milp_cross_check),
        ("charging synchronization properties", c4_charging_property),
        ("500-request scale run", c5_scale),
        ("CO2 and fleet monotonicity", c6_monotonicity),
        ("bi-level oracle equivalence", c7_bilevel_oracle),
        ("schedule evaluator", c8_evaluator),
        ("preprocessing safety", c9_preprocessing),
        ("percentile fleet", c10_percentile),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let v = run();
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {id:>2} {name}: {} ({:.1} s)", v.detail, start.elapsed().as_secs_f64());
        if !v.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
