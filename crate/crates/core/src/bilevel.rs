//! Charging-infrastructure planning over demand scenarios: configuration
//! enumeration, expected operating cost, early stopping on charger count
//! and percentile fleet sizing.

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::PlanError;
use crate::model::*;
use crate::preprocess::preprocess;
use crate::routesched::Solution;
use crate::search::{reference_solve, solve_fs_mfrp, SearchParams};

/// Solver used for the per-scenario routing problem.
pub trait LowerLevelSolver: Sync {
    /// Emission of the best gasoline-only plan (0 for no demand).
    fn reference_emission(&self, inst: &Instance, seed: u64) -> f64;
    /// Best feasible plan under the CO₂ cap, if any.
    fn solve(&self, inst: &Instance, cap: f64, seed: u64) -> Option<Solution>;
}

/// The annealing search, best of `reps` independent runs.
#[derive(Clone, Debug)]
pub struct HeuristicSolver {
    pub params: SearchParams,
    pub reps: usize,
}

impl HeuristicSolver {
    pub fn new(params: SearchParams) -> Self {
        Self { params, reps: 3 }
    }
}

fn run_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(rep as u64);
    r
}

impl LowerLevelSolver for HeuristicSolver {
    fn reference_emission(&self, inst: &Instance, seed: u64) -> f64 {
        (0..self.reps.max(1))
            .filter_map(|rep| reference_solve(inst, &self.params, &mut run_rng(seed, rep)))
            .map(|o| o.solution().clone())
            .min_by(|a, b| a.cost().total_cmp(&b.cost()))
            .map_or(0.0, |s| s.co2())
    }

    fn solve(&self, inst: &Instance, cap: f64, seed: u64) -> Option<Solution> {
        (0..self.reps.max(1))
            .filter_map(|rep| solve_fs_mfrp(inst, cap, &self.params, &mut run_rng(seed, rep)).best)
            .min_by(|a, b| a.cost().total_cmp(&b.cost()))
    }
}

/// Every configuration that opens each site with at most one charger type,
/// `1..=max_per_site` chargers, within the site power limit. Sorted by total
/// charger count, then by (site, type, count) entries.
pub fn enumerate_configs(sites: &[SiteCandidate], charger_types: &[ChargerType], max_per_site: u32) -> Vec<ChargingConfig> {
    let nt = charger_types.len();
    let mut configs = vec![ChargingConfig::empty(sites.len(), nt)];
    for (w, site) in sites.iter().enumerate() {
        let mut options: Vec<Option<(usize, u32)>> = vec![None];
        for (h, ct) in charger_types.iter().enumerate() {
            let by_power = if ct.power > 0.0 { (site.power_limit / ct.power + 1e-9).floor() as u32 } else { max_per_site };
            for y in 1..=max_per_site.min(by_power) {
                options.push(Some((h, y)));
            }
        }
        configs = configs
            .iter()
            .flat_map(|c| {
                options.iter().map(move |o| {
                    let mut c = c.clone();
                    if let Some((h, y)) = *o {
                        c.open[w] = true;
                        c.counts[w][h] = y;
                    }
                    c
                })
            })
            .collect();
    }
    configs.sort_by(|a, b| {
        a.total_chargers().cmp(&b.total_chargers()).then_with(|| {
            let ea: Vec<_> = a.entries().collect();
            let eb: Vec<_> = b.entries().collect();
            ea.cmp(&eb)
        })
    });
    configs
}

/// Site opening plus daily charger cost of `config`.
pub fn infrastructure_cost(config: &ChargingConfig, sites: &[SiteCandidate], charger_types: &[ChargerType]) -> f64 {
    let open: f64 = sites.iter().zip(&config.open).filter(|(_, &o)| o).map(|(s, _)| s.opening_cost).sum();
    let chargers: f64 = config.entries().map(|(_, h, y)| y as f64 * charger_types[h].daily_cost).sum();
    // an empty float sum is -0.0
    open + chargers + 0.0
}

pub fn upper_cost(config: &ChargingConfig, zbar_l: f64, sites: &[SiteCandidate], charger_types: &[ChargerType]) -> f64 {
    infrastructure_cost(config, sites, charger_types) + zbar_l
}

/// Probability-weighted mean of per-scenario costs.
pub fn expected_value(probabilities: &[f64], values: &[f64]) -> Result<f64, PlanError> {
    if probabilities.is_empty() {
        return Err(PlanError::NoScenarios);
    }
    let total: f64 = probabilities.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(PlanError::Probability(total));
    }
    Ok(probabilities.iter().zip(values).map(|(p, v)| p * v).sum())
}

/// Per-type fleet that covers the `coverage` share of scenarios: the k-th
/// smallest count per type with k = ⌊coverage·|scenarios|⌋, at least 1.
pub fn percentile_fleet(fleets: &[(usize, usize)], coverage: f64) -> Result<(usize, usize), PlanError> {
    if fleets.is_empty() {
        return Err(PlanError::NoScenarios);
    }
    if !(coverage > 0.0 && coverage <= 1.0) {
        return Err(PlanError::Coverage(coverage));
    }
    let k = ((coverage * fleets.len() as f64 + 1e-9).floor() as usize).clamp(1, fleets.len());
    let mut ev: Vec<usize> = fleets.iter().map(|f| f.0).collect();
    let mut gv: Vec<usize> = fleets.iter().map(|f| f.1).collect();
    ev.sort_unstable();
    gv.sort_unstable();
    Ok((ev[k - 1], gv[k - 1]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEval {
    pub scenario: usize,
    pub solved: bool,
    /// Operating cost, +∞ if unsolved.
    pub z_l: f64,
    pub n_ev: usize,
    pub n_gv: usize,
    pub gamma: f64,
    pub co2: f64,
    pub charging_min: f64,
    pub cpu_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigEvaluation {
    pub config: ChargingConfig,
    pub scenarios: Vec<ScenarioEval>,
    pub zbar_l: f64,
    pub infra_cost: f64,
    pub z_u: f64,
    pub fleet: (usize, usize),
    pub complete: bool,
}

impl ConfigEvaluation {
    pub fn mean_charging_min(&self) -> f64 {
        mean(self.scenarios.iter().map(|s| s.charging_min))
    }

    pub fn mean_cpu_s(&self) -> f64 {
        mean(self.scenarios.iter().map(|s| s.cpu_s))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanParams {
    pub pi: f64,
    pub coverage: f64,
    pub early_stop: bool,
    pub max_per_site: u32,
    /// Only configurations with a total charger count in this range are tried.
    pub min_chargers: u32,
    pub max_chargers: u32,
    pub seed: u64,
}

impl Default for PlanParams {
    fn default() -> Self {
        Self { pi: 0.9, coverage: 0.9, early_stop: true, max_per_site: 6, min_chargers: 0, max_chargers: u32::MAX, seed: 0 }
    }
}

/// Solver seed for one scenario; shared by every configuration.
fn scenario_seed(seed: u64, scenario: usize) -> u64 {
    seed ^ (scenario as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Reference emission Γ of every scenario.
pub fn reference_emissions(scenarios: &[Scenario], solver: &dyn LowerLevelSolver, seed: u64) -> Result<Vec<f64>, PlanError> {
    scenarios
        .par_iter()
        .map(|s| {
            let inst = preprocess(&s.instance)?;
            Ok(solver.reference_emission(&inst, scenario_seed(seed, s.id)))
        })
        .collect()
}

/// Solves every scenario under `config` and aggregates expected and upper-level cost.
pub fn expected_cost(
    config: &ChargingConfig,
    scenarios: &[Scenario],
    gammas: &[f64],
    solver: &dyn LowerLevelSolver,
    params: &PlanParams,
) -> Result<ConfigEvaluation, PlanError> {
    if scenarios.is_empty() {
        return Err(PlanError::NoScenarios);
    }
    let evals: Vec<ScenarioEval> = scenarios
        .par_iter()
        .zip(gammas)
        .map(|(s, &gamma)| {
            let inst = preprocess(&s.instance.with_charging_config(config.clone())?)?;
            let cap = if params.pi > 0.0 { (1.0 - params.pi) * gamma } else { f64::INFINITY };
            let start = Instant::now();
            let sol = solver.solve(&inst, cap, scenario_seed(params.seed, s.id));
            let cpu_s = start.elapsed().as_secs_f64();
            Ok(match sol {
                Some(sol) => {
                    let t = sol.totals(&inst);
                    ScenarioEval {
                        scenario: s.id,
                        solved: true,
                        z_l: t.cost,
                        n_ev: t.n_ev,
                        n_gv: t.n_gv,
                        gamma,
                        co2: t.co2,
                        charging_min: minutes(t.charge_time),
                        cpu_s,
                    }
                }
                None => ScenarioEval {
                    scenario: s.id,
                    solved: false,
                    z_l: f64::INFINITY,
                    n_ev: 0,
                    n_gv: 0,
                    gamma,
                    co2: f64::NAN,
                    charging_min: 0.0,
                    cpu_s,
                },
            })
        })
        .collect::<Result<_, PlanError>>()?;
    let probs: Vec<f64> = scenarios.iter().map(|s| s.probability).collect();
    let zl: Vec<f64> = evals.iter().map(|e| e.z_l).collect();
    let zbar_l = expected_value(&probs, &zl)?;
    let first = &scenarios[0].instance;
    let infra_cost = infrastructure_cost(config, &first.sites, &first.charger_types);
    let complete = evals.iter().all(|e| e.solved);
    let fleets: Vec<(usize, usize)> = evals.iter().filter(|e| e.solved).map(|e| (e.n_ev, e.n_gv)).collect();
    let fleet = if fleets.is_empty() { (0, 0) } else { percentile_fleet(&fleets, params.coverage)? };
    Ok(ConfigEvaluation { config: config.clone(), scenarios: evals, zbar_l, infra_cost, z_u: infra_cost + zbar_l, fleet, complete })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub evaluations: Vec<ConfigEvaluation>,
    /// Index into `evaluations` of the cheapest configuration.
    pub best: usize,
    /// Charger count after which the sweep stopped early.
    pub stopped_after: Option<u32>,
    pub gammas: Vec<f64>,
}

impl PlanReport {
    pub fn best(&self) -> &ConfigEvaluation {
        &self.evaluations[self.best]
    }
}

/// Lower Z_U wins; a complete evaluation beats an incomplete one; ties keep
/// the earlier (fewer chargers) configuration.
fn better(a: &ConfigEvaluation, b: &ConfigEvaluation) -> bool {
    (a.complete && !b.complete) || (a.complete == b.complete && a.z_u < b.z_u)
}

/// Evaluates configurations in charger-count order and returns the cheapest.
/// With early stopping, the sweep ends once the cheapest configuration at
/// some charger count is dearer than the cheapest at the count before.
pub fn plan(scenarios: &[Scenario], solver: &dyn LowerLevelSolver, params: &PlanParams) -> Result<PlanReport, PlanError> {
    let first = &scenarios.first().ok_or(PlanError::NoScenarios)?.instance;
    if !(params.coverage > 0.0 && params.coverage <= 1.0) {
        return Err(PlanError::Coverage(params.coverage));
    }
    let probs: Vec<f64> = scenarios.iter().map(|s| s.probability).collect();
    expected_value(&probs, &vec![0.0; probs.len()])?;
    let configs: Vec<ChargingConfig> = enumerate_configs(&first.sites, &first.charger_types, params.max_per_site)
        .into_iter()
        .filter(|c| (params.min_chargers..=params.max_chargers).contains(&c.total_chargers()))
        .collect();
    let gammas = if params.pi > 0.0 { reference_emissions(scenarios, solver, params.seed)? } else { vec![0.0; scenarios.len()] };
    let mut evaluations: Vec<ConfigEvaluation> = Vec::new();
    let mut best: Option<usize> = None;
    let mut prev_min: Option<f64> = None;
    let mut stopped_after = None;
    let mut i = 0;
    while i < configs.len() {
        let n = configs[i].total_chargers();
        let mut group_min = f64::INFINITY;
        while i < configs.len() && configs[i].total_chargers() == n {
            let ev = expected_cost(&configs[i], scenarios, &gammas, solver, params)?;
            group_min = group_min.min(ev.z_u);
            if best.map_or(true, |b| better(&ev, &evaluations[b])) {
                best = Some(evaluations.len());
            }
            evaluations.push(ev);
            i += 1;
        }
        if params.early_stop && prev_min.is_some_and(|p| group_min > p) && i < configs.len() {
            stopped_after = Some(n);
            break;
        }
        prev_min = Some(group_min);
    }
    let best = best.ok_or(PlanError::NoScenarios)?;
    Ok(PlanReport { evaluations, best, stopped_after, gammas })
}

/// Plan report as CSV, one row per evaluated configuration.
pub fn plan_csv(report: &PlanReport, charger_types: &[ChargerType]) -> String {
    let mut out = String::from("config_id,site,charger_type,n_chargers,zbar_l,infra_cost,z_u,ev_fleet,gv_fleet,mean_charging_min,mean_cpu_s,complete,best\n");
    for (id, e) in report.evaluations.iter().enumerate() {
        let entries: Vec<(usize, usize, u32)> = e.config.entries().collect();
        let sites: Vec<String> = entries.iter().map(|(w, _, _)| w.to_string()).collect();
        let types: Vec<String> = entries.iter().map(|(_, h, _)| charger_types.get(*h).map_or(h.to_string(), |c| c.name.clone())).collect();
        let _ = writeln!(
            out,
            "{id},{},{},{},{:.4},{:.4},{:.4},{},{},{:.2},{:.3},{},{}",
            if sites.is_empty() { "-".into() } else { sites.join(";") },
            if types.is_empty() { "-".into() } else { types.join(";") },
            e.config.total_chargers(),
            e.zbar_l,
            e.infra_cost,
            e.z_u,
            e.fleet.0,
            e.fleet.1,
            e.mean_charging_min(),
            e.mean_cpu_s(),
            e.complete,
            id == report.best,
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_mean_of_five_scenarios() {
        let z = [122.17, 123.45, 127.94, 110.69, 120.53];
        let v = expected_value(&[0.2; 5], &z).unwrap();
        assert!((v - 120.956).abs() < 1e-9);
        assert!(matches!(expected_value(&[0.4; 5], &z), Err(PlanError::Probability(_))));
    }
}
