//! Exhaustive solver for instances with a handful of requests.
//!
//! Scheduling here is self-contained (earliest-start fixpoint over the
//! route's difference constraints) so it can serve as a check on the
//! evaluator and on the heuristic.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::bilevel::{enumerate_configs, infrastructure_cost, LowerLevelSolver};
use crate::error::{OracleError, PlanError};
use crate::model::*;
use crate::preprocess::preprocess;
use crate::routesched::{ChargeOp, Route, Solution, Stop};

pub const MAX_REQUESTS: usize = 5;
pub const MAX_CONFIGS: usize = 8;
/// Cheapest charging plans kept per (request group, vehicle type).
const CHARGE_PLANS_KEPT: usize = 64;

/// One candidate route with its own schedule.
#[derive(Clone, Debug)]
struct Plan {
    stops: Vec<Stop>,
    cost: f64,
    co2: f64,
    /// (charger, begin, end, stop index) per charge.
    charges: Vec<(usize, Time, Time, usize)>,
}

/// Earliest begin times (depot start, stops, depot end) honouring windows,
/// travel and service times, maximum ride times and per-node lower bounds.
fn earliest_begin(inst: &Instance, stops: &[Stop], lower: &[Time]) -> Option<Vec<Time>> {
    let mut v = vec![inst.depot_start()];
    v.extend(stops.iter().map(|s| s.vertex));
    v.push(inst.depot_end());
    let m = v.len();
    let svc: Vec<Time> = (0..m)
        .map(|k| inst.vertices[v[k]].service + if k >= 1 && k < m - 1 { stops[k - 1].charge.map_or(0, |c| c.duration) } else { 0 })
        .collect();
    let mut pairs = Vec::new();
    for k in 0..m {
        if inst.is_pickup(v[k]) {
            let r = v[k] - 1;
            if let Some(d) = (k + 1..m).find(|&j| v[j] == inst.dropoff(r)) {
                pairs.push((k, d, inst.requests[r].max_ride_time));
            }
        }
    }
    let mut b: Vec<Time> = (0..m).map(|k| inst.vertices[v[k]].tw.earliest.max(lower.get(k).copied().unwrap_or(0))).collect();
    loop {
        let mut changed = false;
        for k in 1..m {
            let t = b[k - 1] + svc[k - 1] + inst.time(v[k - 1], v[k]);
            if t > b[k] {
                b[k] = t;
                changed = true;
            }
        }
        for &(p, d, l) in &pairs {
            let t = b[d] - svc[p] - l;
            if t > b[p] {
                b[p] = t;
                changed = true;
            }
        }
        if (0..m).any(|k| b[k] > inst.vertices[v[k]].tw.latest) {
            return None;
        }
        if !changed {
            return Some(b);
        }
    }
}

fn path_ok(inst: &Instance, cap: u32, stops: &[Stop]) -> Option<i64> {
    let mut prev = inst.depot_start();
    let mut load = 0i64;
    let mut dist = 0;
    for s in stops {
        if !inst.arc_allowed(prev, s.vertex) {
            return None;
        }
        dist += inst.dist_m(prev, s.vertex);
        load += inst.vertices[s.vertex].load as i64;
        if load > cap as i64 || load < 0 {
            return None;
        }
        prev = s.vertex;
    }
    if !inst.arc_allowed(prev, inst.depot_end()) {
        return None;
    }
    Some(dist + inst.dist_m(prev, inst.depot_end()))
}

/// SOC on arrival at each node; None when it leaves [E_min, E_max].
fn soc_ok(inst: &Instance, vt: &VehicleType, stops: &[Stop]) -> bool {
    let mut e = vt.e_init;
    let mut prev = inst.depot_start();
    for s in stops.iter().map(Some).chain(std::iter::once(None)) {
        let next = s.map_or(inst.depot_end(), |s| s.vertex);
        e -= vt.energy_for(inst.dist_m(prev, next));
        if e < vt.e_min - 1e-9 {
            return false;
        }
        if let Some(op) = s.and_then(|s| s.charge) {
            e += inst.charger_type_of(op.charger).energy_in(op.duration);
            if e > vt.e_max + 1e-9 {
                return false;
            }
        }
        prev = next;
    }
    true
}

fn make_plan(inst: &Instance, vt: &VehicleType, stops: Vec<Stop>, dist: i64, lower: &[Time]) -> Option<Plan> {
    let b = earliest_begin(inst, &stops, lower)?;
    let charges = stops
        .iter()
        .enumerate()
        .filter_map(|(k, s)| s.charge.map(|op| (op.charger, b[k + 1], b[k + 1] + op.duration, k)))
        .collect();
    Some(Plan { cost: vt.cost_per_m() * dist as f64 + vt.fixed_cost(), co2: vt.co2_per_m() * dist as f64, stops, charges })
}

/// Every precedence-, load- and arc-respecting visit order of `group`.
fn visit_orders(inst: &Instance, cap: u32, group: &[RequestId]) -> Vec<Vec<Stop>> {
    fn rec(inst: &Instance, cap: u32, group: &[RequestId], state: &mut Vec<u8>, seq: &mut Vec<Stop>, load: u32, out: &mut Vec<Vec<Stop>>) {
        if seq.len() == 2 * group.len() {
            out.push(seq.clone());
            return;
        }
        let prev = seq.last().map_or(inst.depot_start(), |s| s.vertex);
        for (gi, &r) in group.iter().enumerate() {
            let (v, next_load) = match state[gi] {
                0 => (inst.pickup(r), load + inst.requests[r].passengers),
                1 => (inst.dropoff(r), load - inst.requests[r].passengers),
                _ => continue,
            };
            if next_load > cap || !inst.arc_allowed(prev, v) {
                continue;
            }
            state[gi] += 1;
            seq.push(Stop::visit(v));
            rec(inst, cap, group, state, seq, next_load, out);
            seq.pop();
            state[gi] -= 1;
        }
    }
    let mut out = Vec::new();
    rec(inst, cap, group, &mut vec![0; group.len()], &mut Vec::new(), 0, &mut out);
    out
}

/// Energy needed from a charge inserted before stop `a` so that SOC stays at
/// or above E_min until `until` (exclusive stop index, or the depot end).
fn charge_need(inst: &Instance, vt: &VehicleType, stops: &[Stop], a: usize, e_arr: f64, s: VertexId, until: usize) -> f64 {
    let mut e = e_arr;
    let mut prev = s;
    let mut need: f64 = 0.0;
    for k in a..=until.min(stops.len()) {
        let next = if k == stops.len() { inst.depot_end() } else { stops[k].vertex };
        e -= vt.energy_for(inst.dist_m(prev, next));
        need = need.max(vt.e_min - e);
        if k == until {
            break;
        }
        if let Some(op) = stops[k].charge {
            e += inst.charger_type_of(op.charger).energy_in(op.duration);
        }
        prev = next;
    }
    need
}

/// SOC on arrival at the node before stop index `a` is left, i.e. after
/// service at stop a-1 (or at the depot for a = 0).
fn soc_before(inst: &Instance, vt: &VehicleType, stops: &[Stop], a: usize) -> f64 {
    let mut e = vt.e_init;
    let mut prev = inst.depot_start();
    for s in &stops[..a] {
        e -= vt.energy_for(inst.dist_m(prev, s.vertex));
        if let Some(op) = s.charge {
            e += inst.charger_type_of(op.charger).energy_in(op.duration);
        }
        prev = s.vertex;
    }
    e
}

fn insert_charge(inst: &Instance, vt: &VehicleType, stops: &[Stop], a: usize, c: usize, amount: f64) -> Option<Vec<Stop>> {
    let prev = if a == 0 { inst.depot_start() } else { stops[a - 1].vertex };
    if a > 0 && stops[a - 1].is_charge() {
        return None;
    }
    let next = stops.get(a).map_or(inst.depot_end(), |s| s.vertex);
    if !(inst.is_pickup(next) || next == inst.depot_end()) {
        return None;
    }
    let s = inst.charger_vertex(c);
    let e_arr = soc_before(inst, vt, stops, a) - vt.energy_for(inst.dist_m(prev, s));
    if e_arr < vt.e_min - 1e-9 || amount <= 1e-9 {
        return None;
    }
    let ct = inst.charger_type_of(c);
    let mut duration = ct.duration_for(amount.min(vt.e_max - e_arr));
    while duration > 0 && e_arr + ct.energy_in(duration) > vt.e_max + 1e-9 {
        duration -= 1;
    }
    let mut out = stops.to_vec();
    out.insert(a, Stop { vertex: s, charge: Some(ChargeOp { charger: c, duration, window: inst.horizon() }) });
    Some(out)
}

/// Charging variants of a fixed visit order: one or two charges, each
/// topping up either just enough for the next leg or for the rest of the route.
fn charging_variants(inst: &Instance, vt: &VehicleType, base: &[Stop]) -> Vec<Vec<Stop>> {
    let mut out = Vec::new();
    let nc = inst.chargers.len();
    for a in 0..=base.len() {
        for c in 0..nc {
            let s = inst.charger_vertex(c);
            let e_arr = soc_before(inst, vt, base, a) - vt.energy_for(inst.dist_m(if a == 0 { inst.depot_start() } else { base[a - 1].vertex }, s));
            let full = charge_need(inst, vt, base, a, e_arr, s, base.len());
            if let Some(one) = insert_charge(inst, vt, base, a, c, full) {
                out.push(one);
            }
            if inst.meta.dummies_per_charger == 0 {
                continue;
            }
            for a2 in a + 1..=base.len() {
                let partial = charge_need(inst, vt, base, a, e_arr, s, a2);
                for amount in [partial, full] {
                    let Some(first) = insert_charge(inst, vt, base, a, c, amount) else { continue };
                    for c2 in 0..nc {
                        let s2 = inst.charger_vertex(c2);
                        let idx = a2 + 1;
                        let prev = first[idx - 1].vertex;
                        let e2 = soc_before(inst, vt, &first, idx) - vt.energy_for(inst.dist_m(prev, s2));
                        let rest = charge_need(inst, vt, &first, idx, e2, s2, first.len());
                        if let Some(two) = insert_charge(inst, vt, &first, idx, c2, rest) {
                            out.push(two);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Feasible plans for serving `group` with vehicle type `vt_idx`, cheapest first.
fn group_plans(inst: &Instance, vt_idx: usize, group: &[RequestId]) -> Vec<Plan> {
    let vt = &inst.vehicle_types[vt_idx];
    let orders = visit_orders(inst, vt.capacity, group);
    let mut free: Option<Plan> = None;
    let mut charged: Vec<Plan> = Vec::new();
    for base in orders {
        let Some(dist) = path_ok(inst, vt.capacity, &base) else { continue };
        let Some(plan) = make_plan(inst, vt, base.clone(), dist, &[]) else { continue };
        if !vt.is_electric() || soc_ok(inst, vt, &base) {
            if free.as_ref().map_or(true, |f| plan.cost < f.cost - 1e-12) {
                free = Some(plan);
            }
            continue;
        }
        for stops in charging_variants(inst, vt, &base) {
            if !soc_ok(inst, vt, &stops) {
                continue;
            }
            let Some(dist) = path_ok(inst, vt.capacity, &stops) else { continue };
            if let Some(p) = make_plan(inst, vt, stops, dist, &[]) {
                charged.push(p);
            }
        }
    }
    let mut out: Vec<Plan> = free.into_iter().collect();
    charged.sort_by(|a, b| a.cost.total_cmp(&b.cost));
    charged.truncate(CHARGE_PLANS_KEPT);
    let cut = out.first().map_or(f64::INFINITY, |f| f.cost);
    out.extend(charged.into_iter().filter(|p| p.cost < cut));
    out.sort_by(|a, b| a.cost.total_cmp(&b.cost));
    out
}

/// All set partitions of `items`.
fn partitions(items: &[RequestId]) -> Vec<Vec<Vec<RequestId>>> {
    let Some((&first, rest)) = items.split_first() else { return vec![Vec::new()] };
    let mut out = Vec::new();
    for p in partitions(rest) {
        for i in 0..p.len() {
            let mut q = p.clone();
            q[i].insert(0, first);
            out.push(q);
        }
        let mut q = p;
        q.push(vec![first]);
        out.push(q);
    }
    out
}

/// Delays conflicting charges of `plan` past the occupied intervals.
fn fit_plan(inst: &Instance, vt: &VehicleType, plan: &Plan, busy: &[(usize, Time, Time)], uses: &[usize]) -> Option<Plan> {
    for &(c, _, _, _) in &plan.charges {
        if uses[c] + plan.charges.iter().filter(|x| x.0 == c).count() > inst.meta.dummies_per_charger {
            return None;
        }
    }
    let m = plan.stops.len() + 2;
    let mut lower = vec![0; m];
    let mut cur = plan.clone();
    for _ in 0..=busy.len() * plan.charges.len().max(1) {
        let clash = cur.charges.iter().find_map(|&(c, s, e, k)| {
            busy.iter().filter(|&&(bc, bs, be)| bc == c && bs < e && s < be).map(|&(_, _, be)| (k, be)).max_by_key(|x| x.1)
        });
        let Some((k, until)) = clash else { return Some(cur) };
        lower[k + 1] = lower[k + 1].max(until);
        let dist = path_ok(inst, vt.capacity, &cur.stops)?;
        let mut stops = cur.stops.clone();
        if let Some(op) = stops[k].charge.as_mut() {
            op.window = TimeWindow::new(lower[k + 1], inst.horizon().latest);
        }
        cur = make_plan(inst, vt, stops, dist, &lower)?;
    }
    None
}

#[derive(Clone, Debug)]
pub struct OracleResult {
    /// Optimal plan, None when the instance is infeasible under the cap.
    pub solution: Option<Solution>,
    pub cost: f64,
    pub co2: f64,
}

struct Search<'a> {
    inst: &'a Instance,
    cap: f64,
    bound: Vec<usize>,
    plans: &'a HashMap<(Vec<RequestId>, usize), Vec<Plan>>,
    best: Option<(f64, Vec<(usize, Plan)>)>,
}

impl Search<'_> {
    fn rec(&mut self, groups: &[Vec<RequestId>], i: usize, chosen: &mut Vec<(usize, Plan)>, counts: &mut Vec<usize>, cost: f64, co2: f64) {
        if self.best.as_ref().is_some_and(|b| cost >= b.0 - 1e-9) || co2 > self.cap + 1e-9 {
            return;
        }
        if i == groups.len() {
            self.best = Some((cost, chosen.clone()));
            return;
        }
        let inst = self.inst;
        let busy: Vec<(usize, Time, Time)> = chosen.iter().flat_map(|(_, p)| p.charges.iter().map(|&(c, s, e, _)| (c, s, e))).collect();
        let mut uses = vec![0; inst.chargers.len()];
        busy.iter().for_each(|b| uses[b.0] += 1);
        for t in 0..inst.vehicle_types.len() {
            if counts[t] >= self.bound[t] {
                continue;
            }
            let vt = &inst.vehicle_types[t];
            let Some(list) = self.plans.get(&(groups[i].clone(), t)) else { continue };
            for plan in list {
                let Some(p) = fit_plan(inst, vt, plan, &busy, &uses) else { continue };
                counts[t] += 1;
                chosen.push((t, p.clone()));
                self.rec(groups, i + 1, chosen, counts, cost + p.cost, co2 + p.co2);
                chosen.pop();
                counts[t] -= 1;
                if p.charges.is_empty() {
                    // Later entries are dearer charging variants of a route that
                    // already needs no charger time.
                    break;
                }
            }
        }
    }
}

/// Minimum-cost plan serving every request, subject to the CO₂ cap, charger
/// exclusivity and SOC bounds.
pub fn exact_solve(inst: &Instance, cap: f64) -> Result<OracleResult, OracleError> {
    let n = inst.n_requests();
    if n > MAX_REQUESTS {
        return Err(OracleError::TooLarge(format!("{n} requests, at most {MAX_REQUESTS} supported")));
    }
    if n == 0 {
        return Ok(OracleResult { solution: Some(Solution::empty(inst)), cost: 0.0, co2: 0.0 });
    }
    let reqs: Vec<RequestId> = (0..n).collect();
    let parts = partitions(&reqs);
    let mut groups: Vec<Vec<RequestId>> = parts.iter().flatten().cloned().collect();
    groups.sort();
    groups.dedup();
    let nt = inst.vehicle_types.len();
    let plans: HashMap<(Vec<RequestId>, usize), Vec<Plan>> = groups
        .par_iter()
        .flat_map_iter(|g| (0..nt).map(move |t| ((g.clone(), t), group_plans(inst, t, g))))
        .collect();
    let bound: Vec<usize> = inst.vehicle_types.iter().map(|v| v.max_count.min(n)).collect();
    let mut search = Search { inst, cap, bound, plans: &plans, best: None };
    let mut sorted_parts = parts;
    sorted_parts.sort_by_key(|p| p.len());
    for p in &sorted_parts {
        if p.iter().any(|g| (0..nt).all(|t| plans[&(g.clone(), t)].is_empty())) {
            continue;
        }
        search.rec(p, 0, &mut Vec::new(), &mut vec![0; nt], 0.0, 0.0);
    }
    Ok(match search.best {
        None => OracleResult { solution: None, cost: f64::INFINITY, co2: f64::NAN },
        Some((cost, chosen)) => {
            let mut sol = Solution { routes: Vec::new(), unserved: Vec::new(), placement: Vec::new() };
            let mut co2 = 0.0;
            for (t, p) in chosen {
                co2 += p.co2;
                sol.routes.push(Route::new(inst, t, p.stops));
            }
            sol.reindex(inst);
            OracleResult { solution: Some(sol), cost, co2 }
        }
    })
}

/// Emission of the cheapest gasoline-only plan without a cap.
pub fn exact_reference_emission(inst: &Instance) -> Result<f64, OracleError> {
    if inst.n_requests() == 0 {
        return Ok(0.0);
    }
    let Some(gv) = inst.gasoline_type() else { return Ok(0.0) };
    let mut vt = inst.vehicle_types[gv].clone();
    vt.max_count = vt.max_count.max(inst.n_requests());
    let only = inst.with_vehicle_types(vec![vt]);
    Ok(exact_solve(&only, f64::INFINITY)?.co2)
}

/// Exhaustive lower level for the planner.
#[derive(Clone, Copy, Debug, Default)]
pub struct OracleSolver;

impl LowerLevelSolver for OracleSolver {
    fn reference_emission(&self, inst: &Instance, _seed: u64) -> f64 {
        exact_reference_emission(inst).unwrap_or(f64::NAN)
    }

    fn solve(&self, inst: &Instance, cap: f64, _seed: u64) -> Option<Solution> {
        exact_solve(inst, cap).ok().and_then(|r| r.solution)
    }
}

#[derive(Clone, Debug)]
pub struct ExactConfig {
    pub config: ChargingConfig,
    pub z_u: f64,
    /// (config, Z_U) for every configuration, in enumeration order.
    pub all: Vec<(ChargingConfig, f64)>,
}

/// Cheapest configuration by full enumeration with the exact lower level.
/// Ties go to the configuration with fewer chargers.
pub fn exact_best_config(scenarios: &[Scenario], pi: f64, max_per_site: u32) -> Result<ExactConfig, PlanError> {
    let first = &scenarios.first().ok_or(PlanError::NoScenarios)?.instance;
    let configs = enumerate_configs(&first.sites, &first.charger_types, max_per_site);
    if configs.len() > MAX_CONFIGS {
        return Err(PlanError::TooManyConfigs(configs.len()));
    }
    let total: f64 = scenarios.iter().map(|s| s.probability).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(PlanError::Probability(total));
    }
    let mut gammas = Vec::with_capacity(scenarios.len());
    for s in scenarios {
        let inst = preprocess(&s.instance)?;
        gammas.push(if pi > 0.0 { exact_reference_emission(&inst)? } else { 0.0 });
    }
    let mut all = Vec::with_capacity(configs.len());
    for config in configs {
        let mut zbar = 0.0;
        for (s, &g) in scenarios.iter().zip(&gammas) {
            let inst = preprocess(&s.instance.with_charging_config(config.clone())?)?;
            let cap = if pi > 0.0 { (1.0 - pi) * g } else { f64::INFINITY };
            let r = exact_solve(&inst, cap)?;
            zbar += s.probability * r.cost;
        }
        let z_u = infrastructure_cost(&config, &first.sites, &first.charger_types) + zbar;
        all.push((config, z_u));
    }
    let (config, z_u) = all
        .iter()
        .cloned()
        .reduce(|a, b| if b.1 < a.1 { b } else { a })
        .expect("at least the empty configuration");
    Ok(ExactConfig { config, z_u, all })
}
