//! Deterministic-annealing metaheuristic for the mixed-fleet routing problem
//! with charging, CO₂ cap and penalized objective.

pub mod insert;
pub mod ops;
mod params;
pub mod tuning;

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::charging::*;
use crate::model::*;
use crate::routesched::*;

pub use insert::Repair;
pub use ops::{apply_operator, remove_route, route_exchange_improve, Operator, Removal};
pub use params::SearchParams;

/// Read-only state shared by the operators of one search run.
pub struct Ctx<'a> {
    pub inst: &'a Instance,
    pub p: &'a SearchParams,
    /// CO₂ cap in kg, infinite when unconstrained.
    pub cap: f64,
    pub charging: ChargingParams,
}

impl<'a> Ctx<'a> {
    pub fn new(inst: &'a Instance, p: &'a SearchParams, cap: f64) -> Self {
        Self { inst, p, cap, charging: p.charging() }
    }

    pub fn finalize(&self, vt: usize, stops: Vec<Stop>) -> Route {
        finalize_route(self.inst, vt, stops, None, &self.charging)
    }

    pub fn ictx(&self, sol: &Solution) -> InsertCtx {
        InsertCtx { rho2: self.p.rho2, rho3: self.p.rho3, rho4: self.p.rho4, co2: sol.co2(), co2_cap: self.cap }
    }

    pub fn penalized(&self, sol: &Solution) -> f64 {
        penalized_terms(&sol.totals(self.inst), self.cap, self.p)
    }

    /// Route share of the penalized cost, ignoring the CO₂ term.
    pub fn route_pen(&self, r: &Route) -> f64 {
        if !r.serves_requests() {
            return 0.0;
        }
        r.cache.cost() + self.p.rho2 + self.p.rho4 * r.cache.energy_violation()
    }

    pub fn time_ok(&self, vt: usize, stops: &[Stop]) -> bool {
        schedule_stops(self.inst, self.inst.vehicle_types[vt].capacity, stops).is_ok()
    }

    /// Type for a freshly opened vehicle: electric while the CO₂ cap is
    /// exceeded, gasoline otherwise, falling back to any type with room.
    pub fn new_vehicle_type(&self, sol: &Solution) -> Option<usize> {
        let inst = self.inst;
        let room = |t: usize| sol.count_type(t) < inst.vehicle_types[t].max_count;
        let preferred = if sol.co2() > self.cap { inst.electric_type() } else { inst.gasoline_type() };
        preferred
            .filter(|&t| room(t))
            .or_else(|| (0..inst.vehicle_types.len()).find(|&t| room(t)))
    }
}

fn penalized_terms(t: &Totals, cap: f64, p: &SearchParams) -> f64 {
    t.cost
        + p.rho1 * t.n_unserved as f64
        + p.rho2 * t.n_vehicles as f64
        + p.rho3 * (t.co2 - cap).max(0.0)
        + p.rho4 * t.energy_violation
}

/// Operating cost plus penalties for unserved requests, fleet size, CO₂
/// above `cap` and missing energy.
pub fn penalized_cost(sol: &Solution, inst: &Instance, cap: f64, params: &SearchParams) -> f64 {
    penalized_terms(&sol.totals(inst), cap, params)
}

/// One randomized greedy construction.
fn construct(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Solution {
    let inst = ctx.inst;
    let mut sol = Solution::empty(inst);
    let order = insert::shuffled(&(0..inst.n_requests()).collect::<Vec<_>>(), rng);
    for r in order {
        let ictx = ctx.ictx(&sol);
        let routes = insert::shuffled(&(0..sol.routes.len()).collect::<Vec<_>>(), rng);
        let found = routes.into_iter().find_map(|k| best_insertion(&sol.routes[k], r, inst, &ictx).map(|ins| (k, ins)));
        match found {
            Some((k, ins)) => insert::insert_at(ctx, &mut sol, k, r, &ins),
            None => {
                let Some(vt) = ctx.new_vehicle_type(&sol) else { continue };
                let k = insert::open_route(ctx, &mut sol, vt);
                match best_insertion(&sol.routes[k], r, inst, &ictx) {
                    Some(ins) => insert::insert_at(ctx, &mut sol, k, r, &ins),
                    None => {
                        sol.routes.pop();
                    }
                }
            }
        }
    }
    sol.compact(inst);
    sol
}

fn sample_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Best of `init_samples` randomized greedy constructions by penalized cost.
pub fn generate_init_sol(inst: &Instance, cap: f64, params: &SearchParams, rng: &mut impl Rng) -> Solution {
    generate_init_within(&Ctx::new(inst, params, cap), rng, None)
}

fn generate_init_within(ctx: &Ctx, rng: &mut impl Rng, budget_s: Option<f64>) -> Solution {
    let seed: u64 = rng.gen();
    let start = Instant::now();
    let samples = ctx.p.init_samples.max(1);
    let chunk = rayon::current_num_threads().max(1);
    let mut best: Option<(f64, Solution)> = None;
    let mut i = 0;
    while i < samples {
        let hi = (i + chunk).min(samples);
        let batch: Vec<(f64, usize, Solution)> = (i..hi)
            .into_par_iter()
            .map(|s| {
                let sol = construct(ctx, &mut sample_rng(seed, s as u64));
                (ctx.penalized(&sol), s, sol)
            })
            .collect();
        for (c, _, sol) in batch {
            if best.as_ref().map_or(true, |b| c < b.0) {
                best = Some((c, sol));
            }
        }
        i = hi;
        if budget_s.is_some_and(|b| start.elapsed().as_secs_f64() > b) {
            break;
        }
    }
    best.map(|b| b.1).unwrap_or_else(|| Solution::empty(ctx.inst))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    IterMax,
    Stagnation,
    TimeLimit,
    Empty,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    /// Cost of the best feasible solution after each iteration (None until one exists).
    pub best_cost: Vec<Option<f64>>,
    pub iterations: usize,
    pub accepted: usize,
    pub op_counts: BTreeMap<String, usize>,
    pub repairs: usize,
    pub restarts: usize,
    pub improvements: usize,
    pub wall_s: f64,
    pub stop: Option<StopReason>,
}

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    /// Best solution meeting every constraint, if one was found.
    pub best: Option<Solution>,
    /// Lowest penalized-cost solution seen, feasible or not.
    pub best_any: Solution,
    pub trace: SearchTrace,
    pub init_cost: f64,
    pub gamma_cap: f64,
}

impl SolveOutcome {
    /// The feasible best, or the best infeasible one when none exists.
    pub fn solution(&self) -> &Solution {
        self.best.as_ref().unwrap_or(&self.best_any)
    }
}

/// Whether `sol` may become the incumbent.
pub fn is_acceptable_best(sol: &Solution, inst: &Instance, cap: f64) -> bool {
    sol.unserved.is_empty()
        && sol.is_time_feasible()
        && sol.is_energy_feasible()
        && sol.co2() <= cap + 1e-9
        && no_charging_conflict(sol, inst)
}

struct Tabu {
    order: VecDeque<u64>,
    set: HashSet<u64>,
    size: usize,
}

impl Tabu {
    fn insert(&mut self, sig: u64) -> bool {
        if !self.set.insert(sig) {
            return false;
        }
        self.order.push_back(sig);
        if self.order.len() > self.size {
            if let Some(old) = self.order.pop_front() {
                self.set.remove(&old);
            }
        }
        true
    }
}

fn needs_charging_repair(sol: &Solution, inst: &Instance) -> bool {
    !sol.is_energy_feasible() || !no_charging_conflict(sol, inst)
}

/// Runs the threshold-accepting search from a sampled greedy start.
pub fn solve_fs_mfrp(inst: &Instance, cap: f64, params: &SearchParams, rng: &mut impl Rng) -> SolveOutcome {
    let start = Instant::now();
    let ctx = Ctx::new(inst, params, cap);
    let p = params;
    let mut trace = SearchTrace::default();
    if inst.n_requests() == 0 {
        let empty = Solution::empty(inst);
        trace.stop = Some(StopReason::Empty);
        return SolveOutcome { best: Some(empty.clone()), best_any: empty, trace, init_cost: 0.0, gamma_cap: cap };
    }
    let over_time = |s: &Instant| p.time_limit_s.is_some_and(|t| s.elapsed().as_secs_f64() >= t);
    let init = generate_init_within(&ctx, rng, p.time_limit_s.map(|t| 0.1 * t));
    let init_cost = init.cost();
    let t_max = p.t_max * init_cost.max(1.0) / inst.n_requests() as f64;
    let mut t = t_max;

    let mut s = init;
    let mut s_pen = ctx.penalized(&s);
    let mut best: Option<Solution> = None;
    let mut best_any = s.clone();
    let mut best_any_pen = s_pen;
    if is_acceptable_best(&s, inst, cap) {
        best = Some(s.clone());
    }
    let mut tabu = Tabu { order: VecDeque::new(), set: HashSet::new(), size: p.tabu_size.max(1) };
    let mut i_imp = 0usize;
    let mut stagnant = 0usize;
    let mut improved_since_restart = false;
    trace.stop = Some(StopReason::IterMax);

    for iter in 0..p.iter_max {
        if over_time(&start) {
            trace.stop = Some(StopReason::TimeLimit);
            break;
        }
        trace.iterations += 1;
        let mut cand = s.clone();
        let name = if iter > 0 && p.n_remove > 0 && iter % p.n_remove == 0 {
            ops::remove_route(&ctx, &mut cand, rng);
            "remove_route"
        } else {
            let op = Operator::ALL[rng.gen_range(0..Operator::ALL.len())];
            ops::apply_operator(op, &ctx, &mut cand, rng);
            op.name()
        };
        *trace.op_counts.entry(name.to_string()).or_default() += 1;
        cand.compact(inst);
        let mut cand_pen = ctx.penalized(&cand);

        let mut improved = false;
        if cand_pen < s_pen + t {
            trace.accepted += 1;
            if cand.unserved.is_empty() {
                cand = ops::route_exchange_improve(&ctx, cand, rng);
                if cand.co2() <= cap + 1e-9 && needs_charging_repair(&cand, inst) && rng.gen::<f64>() < p.alpha_repair && tabu.insert(cand.signature()) {
                    trace.repairs += 1;
                    let repaired = repair_energy_feasibility(cand.clone(), inst, rng, &ctx.charging);
                    if let Some(r) = repair_sol(repaired, inst, rng, &ctx.charging, p.repair_k) {
                        cand = r;
                    }
                }
                cand_pen = ctx.penalized(&cand);
            }
            s = cand;
            s_pen = cand_pen;
            if is_acceptable_best(&s, inst, cap) && best.as_ref().map_or(true, |b| s.cost() < b.cost() - 1e-9) {
                best = Some(s.clone());
                improved = true;
                trace.improvements += 1;
            }
            if s_pen < best_any_pen {
                best_any = s.clone();
                best_any_pen = s_pen;
            }
        }
        trace.best_cost.push(best.as_ref().map(|b| b.cost()));

        if improved {
            i_imp = 0;
            improved_since_restart = true;
        } else {
            i_imp += 1;
            t -= t_max / p.t_red;
        }
        if t < 0.0 {
            t = rng.gen::<f64>() * t_max;
        }
        let anchor = best.as_ref().unwrap_or(&best_any);
        if i_imp > p.n_imp * anchor.n_vehicles().max(1) {
            s = anchor.clone();
            s_pen = ctx.penalized(&s);
            i_imp = 0;
            trace.restarts += 1;
            if improved_since_restart {
                stagnant = 0;
            } else {
                stagnant += 1;
            }
            improved_since_restart = false;
            if stagnant >= p.n_stagnant {
                trace.stop = Some(StopReason::Stagnation);
                break;
            }
        }
    }
    trace.wall_s = start.elapsed().as_secs_f64();
    SolveOutcome { best, best_any, trace, init_cost, gamma_cap: cap }
}

/// CO₂ of the best gasoline-only solution without an emission cap.
pub fn reference_emission(inst: &Instance, params: &SearchParams, rng: &mut impl Rng) -> f64 {
    reference_solve(inst, params, rng).map_or(0.0, |o| o.solution().co2())
}

/// The gasoline-only run behind [`reference_emission`]; None for an empty
/// instance or one without a gasoline type.
pub fn reference_solve(inst: &Instance, params: &SearchParams, rng: &mut impl Rng) -> Option<SolveOutcome> {
    if inst.n_requests() == 0 {
        return None;
    }
    let gv = inst.gasoline_type()?;
    let mut vt = inst.vehicle_types[gv].clone();
    vt.max_count = vt.max_count.max(inst.n_requests());
    let gv_only = inst.with_vehicle_types(vec![vt]);
    Some(solve_fs_mfrp(&gv_only, f64::INFINITY, params, rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn penalty_arithmetic() {
        let p = SearchParams::default();
        let t = Totals { cost: 100.0, n_unserved: 2, n_vehicles: 3, co2: 150.0, ..Totals::default() };
        assert!((penalized_terms(&t, 134.266, &p) - 1214.68).abs() < 1e-9);
        let ok = Totals { cost: 100.0, n_vehicles: 3, co2: 134.266, ..Totals::default() };
        assert!((penalized_terms(&ok, 134.266, &p) - 700.0).abs() < 1e-9);
    }
}
