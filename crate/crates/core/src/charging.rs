//! State-of-charge propagation, partial-recharge scheduling, charger
//! conflicts and the energy/charging repair procedures.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::*;
use crate::routesched::*;

const EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChargingParams {
    /// Cap on the total idle time a vehicle spends waiting for chargers.
    pub max_wait: Time,
    /// Charging visits a single route may receive.
    pub max_charges: usize,
}

impl Default for ChargingParams {
    fn default() -> Self {
        Self { max_wait: 30 * 60, max_charges: 6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyProfile {
    /// SOC on arrival at every node, depots included.
    pub arrival: Vec<f64>,
    /// First node whose arrival SOC is below E_min.
    pub first_violation: Option<usize>,
    pub deficit: f64,
    pub overcharge: f64,
    pub charged: f64,
}

impl EnergyProfile {
    pub fn is_feasible(&self) -> bool {
        self.deficit <= EPS && self.overcharge <= EPS
    }
}

/// Walks the route from E_init, draining β per km and adding the energy of
/// each charging visit.
pub fn propagate_soc(inst: &Instance, vt: &VehicleType, stops: &[Stop]) -> EnergyProfile {
    let mut arrival = Vec::with_capacity(stops.len() + 2);
    let mut e = vt.e_init;
    arrival.push(e);
    let mut prev = inst.depot_start();
    let mut overcharge = 0.0;
    let mut charged = 0.0;
    let mut after_charge = |e: &mut f64, s: &Stop| {
        if let Some(op) = s.charge {
            let kwh = inst.charger_type_of(op.charger).energy_in(op.duration);
            *e += kwh;
            charged += kwh;
            overcharge += (*e - vt.e_max).max(0.0);
        }
    };
    for s in stops {
        e -= vt.energy_for(inst.dist_m(prev, s.vertex));
        arrival.push(e);
        after_charge(&mut e, s);
        prev = s.vertex;
    }
    e -= vt.energy_for(inst.dist_m(prev, inst.depot_end()));
    arrival.push(e);
    let first_violation = arrival.iter().position(|&x| x < vt.e_min - EPS);
    let min = arrival.iter().copied().fold(f64::INFINITY, f64::min);
    EnergyProfile { arrival, first_violation, deficit: (vt.e_min - min).max(0.0), overcharge, charged }
}

/// Occupied intervals `[start, end)` per physical charger.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChargerOccupancy {
    pub intervals: Vec<Vec<(Time, Time, usize)>>,
    visit_limit: usize,
}

impl ChargerOccupancy {
    pub fn new(inst: &Instance) -> Self {
        Self { intervals: vec![Vec::new(); inst.chargers.len()], visit_limit: inst.meta.dummies_per_charger }
    }

    pub fn overlaps(&self, charger: usize, start: Time, end: Time) -> bool {
        self.intervals[charger].iter().any(|&(s, e, _)| start < e && s < end)
    }

    pub fn is_full(&self, charger: usize) -> bool {
        self.intervals[charger].len() >= self.visit_limit
    }

    /// Books an interval; refuses overlaps and visits beyond the dummy count.
    pub fn add(&mut self, charger: usize, start: Time, end: Time, vehicle: usize) -> bool {
        if self.is_full(charger) || self.overlaps(charger, start, end) {
            return false;
        }
        let list = &mut self.intervals[charger];
        let pos = list.partition_point(|iv| iv.0 < start);
        list.insert(pos, (start, end, vehicle));
        true
    }

    pub fn remove_vehicle(&mut self, vehicle: usize) {
        for list in &mut self.intervals {
            list.retain(|iv| iv.2 != vehicle);
        }
    }

    /// Books every charge of a route; on refusal nothing is booked.
    pub fn add_route(&mut self, route: &Route, vehicle: usize) -> bool {
        let mut booked: Vec<(usize, Time)> = Vec::new();
        for (_, op, b) in route.charges() {
            if !self.add(op.charger, b, b + op.duration, vehicle) {
                for (c, s) in booked {
                    self.intervals[c].retain(|iv: &(Time, Time, usize)| !(iv.0 == s && iv.2 == vehicle));
                }
                return false;
            }
            booked.push((op.charger, b));
        }
        true
    }

    /// Maximal idle gaps of a charger inside `horizon`.
    pub fn free_gaps(&self, charger: usize, horizon: TimeWindow) -> Vec<(Time, Time)> {
        if self.is_full(charger) {
            return Vec::new();
        }
        let mut gaps = Vec::new();
        let mut t = horizon.earliest;
        for &(s, e, _) in &self.intervals[charger] {
            if s > t {
                gaps.push((t, s.min(horizon.latest)));
            }
            t = t.max(e);
        }
        if t < horizon.latest {
            gaps.push((t, horizon.latest));
        }
        gaps
    }
}

/// Removes charging visits, keeping request stops in order.
pub fn strip_charges(stops: &[Stop]) -> Vec<Stop> {
    stops.iter().filter(|s| !s.is_charge()).copied().collect()
}

/// Inserts partial recharges until the route is energy-feasible. Each step
/// targets the first SOC violation and tries every (arc, charger) pair at or
/// before it, preferring the least detour plus waiting, then the lowest
/// charger id, then the earliest arc. With an occupancy the charge is
/// confined to a free gap. Returns `None` when no feasible insertion exists.
pub fn schedule_charging(
    inst: &Instance,
    vt_idx: usize,
    stops: &[Stop],
    occupancy: Option<&ChargerOccupancy>,
    cfg: &ChargingParams,
) -> Option<Vec<Stop>> {
    let vt = &inst.vehicle_types[vt_idx];
    if !vt.is_electric() {
        return None;
    }
    if propagate_soc(inst, vt, stops).is_feasible() {
        return Some(stops.to_vec());
    }
    let mut cur = strip_charges(stops);
    let horizon = inst.horizon();
    for _ in 0..=cfg.max_charges {
        let prof = propagate_soc(inst, vt, &cur);
        if prof.is_feasible() {
            return Some(cur);
        }
        if prof.overcharge > EPS {
            return None;
        }
        let f = prof.first_violation?;
        let m = cur.len() + 2;
        let vs: Vec<VertexId> =
            std::iter::once(inst.depot_start()).chain(cur.iter().map(|s| s.vertex)).chain(std::iter::once(inst.depot_end())).collect();
        let begin = schedule_stops(inst, vt.capacity, &cur).ok()?;
        let spent_wait: Time = charge_waits(inst, &cur, &begin);
        let last_charge = cur.iter().rposition(|s| s.is_charge()).map_or(0, |k| k + 1);
        let mut best: Option<(Time, usize, usize, Vec<Stop>)> = None;
        for a in last_charge..f.min(m - 1) {
            let nx = vs[a + 1];
            if inst.is_charger(vs[a]) || !(inst.is_pickup(nx) || nx == inst.depot_end()) {
                continue;
            }
            for c in 0..inst.chargers.len() {
                let s = inst.charger_vertex(c);
                if !inst.arc_allowed(vs[a], s) || !inst.arc_allowed(s, nx) {
                    continue;
                }
                let e_arr = prof.arrival[a] + charged_at(inst, &cur, a) - vt.energy_for(inst.dist_m(vs[a], s));
                if e_arr < vt.e_min - EPS {
                    continue;
                }
                let mut drain = vt.energy_for(inst.dist_m(s, nx));
                let mut need: f64 = vt.e_min - (e_arr - drain);
                for k in a + 1..m - 1 {
                    drain += vt.energy_for(inst.dist_m(vs[k], vs[k + 1]));
                    need = need.max(vt.e_min - (e_arr - drain));
                }
                let amount = need.min(vt.e_max - e_arr);
                if amount <= EPS {
                    continue;
                }
                let ct = inst.charger_type_of(c);
                let mut duration = ct.duration_for(amount);
                while duration > 0 && e_arr + ct.energy_in(duration) > vt.e_max + EPS {
                    duration -= 1;
                }
                let arrive_lb = begin[a] + inst.vertices[vs[a]].service + inst.time(vs[a], s);
                let windows = match occupancy {
                    None => vec![horizon],
                    Some(occ) => occ
                        .free_gaps(c, horizon)
                        .into_iter()
                        .filter(|&(g0, g1)| g1 - g0 >= duration && g1 - duration >= arrive_lb)
                        .map(|(g0, g1)| TimeWindow::new(g0, g1 - duration))
                        .collect(),
                };
                for window in windows {
                    let op = ChargeOp { charger: c, duration, window };
                    let mut cand = cur.clone();
                    cand.insert(a, Stop::charging(inst, op));
                    let Ok(b2) = schedule_stops(inst, vt.capacity, &cand) else { continue };
                    let arrive = b2[a] + inst.vertices[vs[a]].service + charged_duration(&cur, a) + inst.time(vs[a], s);
                    let wait = (b2[a + 1] - arrive).max(0);
                    if spent_wait + wait > cfg.max_wait {
                        continue;
                    }
                    let detour = inst.time(vs[a], s) + inst.time(s, nx) - inst.time(vs[a], nx);
                    let score = detour + wait;
                    let better = match &best {
                        None => true,
                        Some((bs, bc, ba, _)) => (score, c, a) < (*bs, *bc, *ba),
                    };
                    if better {
                        best = Some((score, c, a, cand));
                    }
                    break;
                }
            }
        }
        cur = best?.3;
    }
    None
}

/// Energy charged at node `a` (a stop index shifted by the depot).
fn charged_at(inst: &Instance, stops: &[Stop], a: usize) -> f64 {
    if a == 0 {
        return 0.0;
    }
    stops[a - 1].charge.map_or(0.0, |op| inst.charger_type_of(op.charger).energy_in(op.duration))
}

fn charged_duration(stops: &[Stop], a: usize) -> Time {
    if a == 0 {
        return 0;
    }
    stops[a - 1].charge.map_or(0, |op| op.duration)
}

/// Idle time before each charge given begin times `begin`.
pub fn charge_waits(inst: &Instance, stops: &[Stop], begin: &[Time]) -> Time {
    let mut total = 0;
    for (k, s) in stops.iter().enumerate() {
        if s.is_charge() {
            let prev = if k == 0 { inst.depot_start() } else { stops[k - 1].vertex };
            let arrive = begin[k] + inst.vertices[prev].service + charged_duration(stops, k) + inst.time(prev, s.vertex);
            total += (begin[k + 1] - arrive).max(0);
        }
    }
    total
}

/// Builds a route, adding charging visits when an electric vehicle needs them.
/// If no charging plan exists the charge-free route is kept with its deficit.
pub fn finalize_route(
    inst: &Instance,
    vt_idx: usize,
    stops: Vec<Stop>,
    occupancy: Option<&ChargerOccupancy>,
    cfg: &ChargingParams,
) -> Route {
    let vt = &inst.vehicle_types[vt_idx];
    let base = strip_charges(&stops);
    if !vt.is_electric() || propagate_soc(inst, vt, &base).is_feasible() {
        return Route::new(inst, vt_idx, base);
    }
    match schedule_charging(inst, vt_idx, &base, occupancy, cfg) {
        Some(st) => Route::new(inst, vt_idx, st),
        None => Route::new(inst, vt_idx, base),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictKind {
    Overlap,
    /// More visits than dummy vertices at one charger.
    DummyOverflow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conflict {
    pub kind: ConflictKind,
    pub charger: usize,
    pub vehicles: (usize, usize),
    pub start: Time,
    pub end: Time,
}

/// Charging intervals `(start, end, route)` per physical charger.
pub fn charger_intervals(sol: &Solution, inst: &Instance) -> Vec<Vec<(Time, Time, usize)>> {
    let mut per: Vec<Vec<(Time, Time, usize)>> = vec![Vec::new(); inst.chargers.len()];
    for (ri, r) in sol.routes.iter().enumerate() {
        for (_, op, b) in r.charges() {
            per[op.charger].push((b, b + op.duration, ri));
        }
    }
    per
}

/// Every pair of charges that overlaps on a charger, plus dummy overflows.
pub fn detect_conflicts(sol: &Solution, inst: &Instance) -> Vec<Conflict> {
    let mut out = Vec::new();
    for (c, mut list) in charger_intervals(sol, inst).into_iter().enumerate() {
        list.sort_unstable();
        let mut active: Vec<(Time, Time, usize)> = Vec::new();
        for &(s, e, v) in &list {
            active.retain(|iv| iv.1 > s);
            for &(s2, e2, v2) in &active {
                out.push(Conflict { kind: ConflictKind::Overlap, charger: c, vehicles: (v2, v), start: s.max(s2), end: e.min(e2) });
            }
            if e > s {
                active.push((s, e, v));
            }
        }
        if list.len() > inst.meta.dummies_per_charger {
            out.push(Conflict { kind: ConflictKind::DummyOverflow, charger: c, vehicles: (0, 0), start: 0, end: 0 });
        }
    }
    out
}

pub fn no_charging_conflict(sol: &Solution, inst: &Instance) -> bool {
    detect_conflicts(sol, inst).is_empty()
}

fn eject_random(inst: &Instance, route: &Route, rng: &mut impl Rng) -> Option<(RequestId, Vec<Stop>)> {
    let reqs = route.requests(inst);
    let &r = reqs.choose(rng)?;
    let stops = strip_charges(&route.stops).into_iter().filter(|s| inst.request_of(s.vertex) != Some(r)).collect();
    Some((r, stops))
}

/// Ejects random requests from each energy-infeasible route until charging
/// can make it feasible again.
pub fn repair_energy_feasibility(mut sol: Solution, inst: &Instance, rng: &mut impl Rng, cfg: &ChargingParams) -> Solution {
    for k in 0..sol.routes.len() {
        while !sol.routes[k].is_energy_feasible() {
            let Some((r, stops)) = eject_random(inst, &sol.routes[k], rng) else { break };
            sol.unserved.push(r);
            let vt = sol.routes[k].vehicle_type;
            sol.routes[k] = finalize_route(inst, vt, stops, None, cfg);
        }
    }
    sol.compact(inst);
    sol
}

/// Rebuilds a conflict-free charging plan: electric routes are booked on a
/// shared occupancy in order of charged energy, clashing routes are
/// rescheduled around booked time or shed requests, and the unserved pool is
/// reinserted into electric vehicles with occupancy-aware charging.
pub fn repair_sol(mut sol: Solution, inst: &Instance, rng: &mut impl Rng, cfg: &ChargingParams, reinsert_k: usize) -> Option<Solution> {
    let mut budget = 4 * inst.n_requests() + 16;
    let mut occ = ChargerOccupancy::new(inst);
    let mut order: Vec<usize> = (0..sol.routes.len()).filter(|&k| inst.vehicle_types[sol.routes[k].vehicle_type].is_electric()).collect();
    order.sort_by(|&a, &b| sol.routes[b].cache.charged_kwh.total_cmp(&sol.routes[a].cache.charged_kwh).then(a.cmp(&b)));
    for &k in &order {
        if occ.add_route(&sol.routes[k], k) {
            continue;
        }
        let vt = sol.routes[k].vehicle_type;
        let mut stops = strip_charges(&sol.routes[k].stops);
        loop {
            let route = finalize_route(inst, vt, stops.clone(), Some(&occ), cfg);
            if route.is_energy_feasible() && route.is_time_feasible() && occ.add_route(&route, k) {
                sol.routes[k] = route;
                break;
            }
            budget = budget.checked_sub(1)?;
            let bare = Route::new(inst, vt, stops.clone());
            let Some((r, rest)) = eject_random(inst, &bare, rng) else {
                sol.routes[k] = bare;
                break;
            };
            sol.unserved.push(r);
            stops = rest;
        }
    }
    sol.reindex(inst);
    let mut pool = sol.unserved.clone();
    pool.shuffle(rng);
    let ev_type = inst.electric_type();
    for r in pool {
        budget = budget.checked_sub(1)?;
        let evs: Vec<usize> = (0..sol.routes.len()).filter(|&k| inst.vehicle_types[sol.routes[k].vehicle_type].is_electric()).collect();
        let picks: Vec<usize> = evs.choose_multiple(rng, reinsert_k.min(evs.len())).copied().collect();
        let mut best: Option<(f64, usize, Route)> = None;
        for k in picks {
            let old = &sol.routes[k];
            let base = strip_charges(&old.stops);
            let Some(ins) = best_insertion_stops(inst, old.vehicle_type, &base, r, &InsertCtx::plain()) else { continue };
            let mut trial = occ.clone();
            trial.remove_vehicle(k);
            let route = finalize_route(inst, old.vehicle_type, ins.apply(inst, &base, r), Some(&trial), cfg);
            if !route.is_energy_feasible() || !route.is_time_feasible() || !trial.add_route(&route, k) {
                continue;
            }
            let delta = route.cache.cost() - old.cache.cost();
            if best.as_ref().map_or(true, |b| delta < b.0) {
                best = Some((delta, k, route));
            }
        }
        let placed = if let Some((_, k, route)) = best {
            occ.remove_vehicle(k);
            occ.add_route(&route, k);
            sol.routes[k] = route;
            true
        } else if let Some(et) = ev_type.filter(|&et| sol.count_type(et) < inst.vehicle_types[et].max_count) {
            let stops = vec![Stop::visit(inst.pickup(r)), Stop::visit(inst.dropoff(r))];
            let route = finalize_route(inst, et, stops, Some(&occ), cfg);
            let k = sol.routes.len();
            if route.is_energy_feasible() && route.is_time_feasible() && occ.add_route(&route, k) {
                sol.routes.push(route);
                true
            } else {
                false
            }
        } else {
            false
        };
        if placed {
            sol.unserved.retain(|&u| u != r);
        }
    }
    sol.compact(inst);
    Some(sol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaps_skip_booked_time() {
        let mut occ = ChargerOccupancy { intervals: vec![Vec::new()], visit_limit: 4 };
        assert!(occ.add(0, 100, 200, 0));
        assert!(!occ.add(0, 150, 250, 1));
        assert!(occ.add(0, 200, 300, 1));
        assert_eq!(occ.free_gaps(0, TimeWindow::new(0, 1000)), vec![(0, 100), (300, 1000)]);
    }
}
