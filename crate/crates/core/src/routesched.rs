//! Route and solution encoding, schedule evaluation and cost bookkeeping.

use serde::{Deserialize, Serialize};

use crate::charging::propagate_soc;
use crate::model::*;

/// A recharge of `duration` seconds at a physical charger. The charge must
/// start inside `window`, which is how occupied charger time is kept out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChargeOp {
    pub charger: usize,
    pub duration: Time,
    pub window: TimeWindow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Stop {
    pub vertex: VertexId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub charge: Option<ChargeOp>,
}

impl Stop {
    pub fn visit(vertex: VertexId) -> Self {
        Self { vertex, charge: None }
    }

    pub fn charging(inst: &Instance, op: ChargeOp) -> Self {
        Self { vertex: inst.charger_vertex(op.charger), charge: Some(op) }
    }

    pub fn is_charge(&self) -> bool {
        self.charge.is_some()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    None,
    Structure,
    Arc,
    Load,
    TimeWindow,
    RideTime,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleResult {
    pub feasible: bool,
    pub violation: Violation,
    /// Begin times for depot start, every stop, depot end.
    pub begin: Vec<Time>,
    pub ride_times: Vec<(RequestId, Time)>,
}

#[derive(Clone, Copy, Debug)]
struct Node {
    v: VertexId,
    e: Time,
    l: Time,
    /// Service duration, charging included.
    d: Time,
    /// For a dropoff: index of its pickup node and the ride limit.
    pickup_at: usize,
    max_ride: Time,
}

const NO_PICKUP: usize = usize::MAX;

/// Lays out the depot-to-depot node sequence and checks structure, arcs and load.
fn build_nodes(inst: &Instance, capacity: u32, stops: &[Stop]) -> Result<Vec<Node>, Violation> {
    let n = inst.n_requests();
    let mut nodes = Vec::with_capacity(stops.len() + 2);
    let start = &inst.vertices[inst.depot_start()];
    nodes.push(Node { v: start.id, e: start.tw.earliest, l: start.tw.latest, d: start.service, pickup_at: NO_PICKUP, max_ride: 0 });
    let mut open: Vec<(RequestId, usize)> = Vec::new();
    let mut load: i64 = 0;
    for s in stops {
        let v = s.vertex;
        if v == 0 || v >= inst.depot_end() {
            return Err(Violation::Structure);
        }
        let vx = &inst.vertices[v];
        let idx = nodes.len();
        let mut node = Node { v, e: vx.tw.earliest, l: vx.tw.latest, d: vx.service, pickup_at: NO_PICKUP, max_ride: 0 };
        if v <= n {
            let r = v - 1;
            if open.iter().any(|&(o, _)| o == r) {
                return Err(Violation::Structure);
            }
            open.push((r, idx));
        } else if v <= 2 * n {
            let r = v - n - 1;
            let Some(pos) = open.iter().position(|&(o, _)| o == r) else {
                return Err(Violation::Structure);
            };
            node.pickup_at = open.swap_remove(pos).1;
            node.max_ride = inst.requests[r].max_ride_time;
        } else if let Some(op) = s.charge {
            if inst.vertices[v].physical_charger != Some(op.charger) || op.duration < 0 {
                return Err(Violation::Structure);
            }
            node.d += op.duration;
            node.e = node.e.max(op.window.earliest);
            node.l = node.l.min(op.window.latest);
        }
        if s.charge.is_some() && !inst.is_charger(v) {
            return Err(Violation::Structure);
        }
        load += vx.load as i64;
        if load < 0 || load > capacity as i64 {
            return Err(Violation::Load);
        }
        nodes.push(node);
    }
    if !open.is_empty() {
        return Err(Violation::Structure);
    }
    let end = &inst.vertices[inst.depot_end()];
    nodes.push(Node { v: end.id, e: end.tw.earliest, l: end.tw.latest, d: end.service, pickup_at: NO_PICKUP, max_ride: 0 });
    for w in nodes.windows(2) {
        if !inst.arc_allowed(w[0].v, w[1].v) {
            return Err(Violation::Arc);
        }
    }
    Ok(nodes)
}

struct Sched<'a> {
    nodes: &'a [Node],
    tt: Vec<Time>,
    a: Vec<Time>,
    b: Vec<Time>,
    w: Vec<Time>,
}

impl<'a> Sched<'a> {
    fn new(inst: &Instance, nodes: &'a [Node]) -> Self {
        let m = nodes.len();
        let tt = nodes.windows(2).map(|w| inst.time(w[0].v, w[1].v)).collect();
        Self { nodes, tt, a: vec![0; m], b: vec![0; m], w: vec![0; m] }
    }

    fn forward(&mut self, from: usize) {
        for k in from.max(1)..self.nodes.len() {
            self.a[k] = self.b[k - 1] + self.nodes[k - 1].d + self.tt[k - 1];
            self.b[k] = self.a[k].max(self.nodes[k].e);
            self.w[k] = self.b[k] - self.a[k];
        }
    }

    fn ride(&self, k: usize) -> Time {
        let p = self.nodes[k].pickup_at;
        self.b[k] - (self.b[p] + self.nodes[p].d)
    }

    fn tw_ok(&self) -> bool {
        self.nodes.iter().zip(&self.b).all(|(n, &b)| b >= n.e && b <= n.l)
    }

    fn rides_ok(&self) -> bool {
        (0..self.nodes.len()).all(|k| self.nodes[k].pickup_at == NO_PICKUP || self.ride(k) <= self.nodes[k].max_ride)
    }

    /// Forward time slack at node `j`.
    fn slack(&self, j: usize) -> Time {
        let mut f = Time::MAX;
        let mut wsum = 0;
        for i in j..self.nodes.len() {
            if i > j {
                wsum += self.w[i];
            }
            let mut s = self.nodes[i].l - self.b[i];
            let p = self.nodes[i].pickup_at;
            if p != NO_PICKUP && p < j {
                s = s.min(self.nodes[i].max_ride - self.ride(i));
            }
            f = f.min(wsum + s.max(0));
        }
        f
    }

    fn waiting_after(&self, j: usize) -> Time {
        self.w[j + 1..].iter().sum()
    }

    /// Earliest-start schedule with forward-slack delays that reduce ride times.
    fn eight_step(&mut self) -> Violation {
        let nodes = self.nodes;
        self.b[0] = nodes[0].e;
        self.forward(1);
        if !self.tw_ok() {
            return Violation::TimeWindow;
        }
        let f0 = self.slack(0);
        self.b[0] = nodes[0].e + f0.min(self.waiting_after(0));
        self.forward(1);
        if self.rides_ok() {
            return Violation::None;
        }
        for j in 1..nodes.len() - 1 {
            let is_pickup_origin = (j + 1..nodes.len()).any(|k| nodes[k].pickup_at == j);
            if !is_pickup_origin {
                continue;
            }
            let f = self.slack(j);
            self.w[j] += f.min(self.waiting_after(j));
            self.b[j] = self.a[j] + self.w[j];
            self.forward(j + 1);
            if self.rides_ok() {
                break;
            }
        }
        if !self.tw_ok() {
            return Violation::TimeWindow;
        }
        if !self.rides_ok() {
            return Violation::RideTime;
        }
        Violation::None
    }

    /// Least solution of the difference-constraint system; exact but slower.
    fn least_fixpoint(&mut self) -> bool {
        let nodes = self.nodes;
        let m = nodes.len();
        for k in 0..m {
            self.b[k] = nodes[k].e;
        }
        for _ in 0..=m + 1 {
            let mut changed = false;
            for k in 1..m {
                let lb = self.b[k - 1] + nodes[k - 1].d + self.tt[k - 1];
                if lb > self.b[k] {
                    self.b[k] = lb;
                    changed = true;
                }
            }
            for k in 0..m {
                let p = nodes[k].pickup_at;
                if p != NO_PICKUP {
                    let lb = self.b[k] - nodes[k].max_ride - nodes[p].d;
                    if lb > self.b[p] {
                        self.b[p] = lb;
                        changed = true;
                    }
                }
            }
            if (0..m).any(|k| self.b[k] > nodes[k].l) {
                return false;
            }
            if !changed {
                for k in 1..m {
                    self.a[k] = self.b[k - 1] + nodes[k - 1].d + self.tt[k - 1];
                    self.w[k] = self.b[k] - self.a[k];
                }
                return true;
            }
        }
        false
    }

    /// Direct per-constraint check of the current begin times.
    fn recheck(&self) -> bool {
        for k in 1..self.nodes.len() {
            if self.b[k] < self.b[k - 1] + self.nodes[k - 1].d + self.tt[k - 1] {
                return false;
            }
        }
        self.tw_ok() && self.rides_ok()
    }
}

fn schedule_nodes(inst: &Instance, nodes: &[Node]) -> Result<Vec<Time>, Violation> {
    let mut s = Sched::new(inst, nodes);
    let verdict = s.eight_step();
    match verdict {
        Violation::None if s.recheck() => Ok(s.b),
        Violation::TimeWindow => Err(Violation::TimeWindow),
        _ => {
            if s.least_fixpoint() && s.recheck() {
                Ok(s.b)
            } else {
                Err(Violation::RideTime)
            }
        }
    }
}

/// Begin times (depot start, stops, depot end) of a feasible schedule, or the
/// first violated constraint family.
pub fn schedule_stops(inst: &Instance, capacity: u32, stops: &[Stop]) -> Result<Vec<Time>, Violation> {
    let nodes = build_nodes(inst, capacity, stops)?;
    schedule_nodes(inst, &nodes)
}

pub fn evaluate_stops(inst: &Instance, capacity: u32, stops: &[Stop]) -> ScheduleResult {
    match build_nodes(inst, capacity, stops).and_then(|nodes| {
        let b = schedule_nodes(inst, &nodes)?;
        Ok((nodes, b))
    }) {
        Ok((nodes, begin)) => {
            let ride_times = nodes
                .iter()
                .enumerate()
                .filter(|(_, n)| n.pickup_at != NO_PICKUP)
                .map(|(k, n)| {
                    let p = n.pickup_at;
                    (inst.request_of(n.v).unwrap(), begin[k] - begin[p] - nodes[p].d)
                })
                .collect();
            ScheduleResult { feasible: true, violation: Violation::None, begin, ride_times }
        }
        Err(violation) => ScheduleResult { feasible: false, violation, begin: Vec::new(), ride_times: Vec::new() },
    }
}

pub fn evaluate_route(route: &Route, inst: &Instance) -> ScheduleResult {
    evaluate_stops(inst, inst.vehicle_types[route.vehicle_type].capacity, &route.stops)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RouteCache {
    pub dist_m: i64,
    /// Energy drawn from the tank or battery over the route.
    pub energy: f64,
    pub energy_cost: f64,
    pub fixed_cost: f64,
    pub co2: f64,
    /// kWh below E_min at the lowest point of the SOC profile.
    pub deficit: f64,
    /// kWh charged above E_max.
    pub overcharge: f64,
    pub charged_kwh: f64,
    pub charge_time: Time,
    /// Idle time spent at chargers before charging starts.
    pub charge_wait: Time,
    pub begin: Vec<Time>,
    pub violation: Option<Violation>,
}

impl RouteCache {
    pub fn cost(&self) -> f64 {
        self.energy_cost + self.fixed_cost
    }

    pub fn energy_violation(&self) -> f64 {
        self.deficit + self.overcharge
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub vehicle_type: usize,
    pub stops: Vec<Stop>,
    #[serde(skip)]
    pub cache: RouteCache,
}

impl Route {
    pub fn new(inst: &Instance, vehicle_type: usize, stops: Vec<Stop>) -> Self {
        let mut r = Self { vehicle_type, stops, cache: RouteCache::default() };
        r.refresh(inst);
        r
    }

    pub fn refresh(&mut self, inst: &Instance) {
        self.cache = compute_cache(inst, self.vehicle_type, &self.stops);
    }

    pub fn serves_requests(&self) -> bool {
        self.stops.iter().any(|s| !s.is_charge())
    }

    pub fn requests(&self, inst: &Instance) -> Vec<RequestId> {
        self.stops.iter().filter(|s| inst.is_pickup(s.vertex)).map(|s| s.vertex - 1).collect()
    }

    pub fn n_requests(&self, inst: &Instance) -> usize {
        self.stops.iter().filter(|s| inst.is_pickup(s.vertex)).count()
    }

    pub fn is_time_feasible(&self) -> bool {
        self.cache.violation.is_none()
    }

    pub fn is_energy_feasible(&self) -> bool {
        self.cache.energy_violation() <= 1e-9
    }

    /// Stops with every charging visit removed.
    pub fn request_stops(&self) -> Vec<Stop> {
        self.stops.iter().filter(|s| !s.is_charge()).copied().collect()
    }

    pub fn has_charges(&self) -> bool {
        self.stops.iter().any(|s| s.is_charge())
    }

    /// (stop index, op, begin time) for every charging visit.
    pub fn charges(&self) -> impl Iterator<Item = (usize, ChargeOp, Time)> + '_ {
        self.stops.iter().enumerate().filter_map(move |(k, s)| {
            s.charge.map(|op| (k, op, self.cache.begin.get(k + 1).copied().unwrap_or(0)))
        })
    }

    /// Vertex sequence including both depots.
    pub fn vertex_path(&self, inst: &Instance) -> Vec<VertexId> {
        let mut p = Vec::with_capacity(self.stops.len() + 2);
        p.push(inst.depot_start());
        p.extend(self.stops.iter().map(|s| s.vertex));
        p.push(inst.depot_end());
        p
    }
}

/// Distance over the depot-to-depot path of `stops`.
pub fn path_dist_m(inst: &Instance, stops: &[Stop]) -> i64 {
    let mut prev = inst.depot_start();
    let mut d = 0;
    for s in stops {
        d += inst.dist_m(prev, s.vertex);
        prev = s.vertex;
    }
    d + inst.dist_m(prev, inst.depot_end())
}

fn compute_cache(inst: &Instance, vt_idx: usize, stops: &[Stop]) -> RouteCache {
    let vt = &inst.vehicle_types[vt_idx];
    let dist_m = path_dist_m(inst, stops);
    let used = stops.iter().any(|s| !s.is_charge());
    let energy = vt.energy_for(dist_m);
    let mut cache = RouteCache {
        dist_m,
        energy,
        energy_cost: energy * vt.energy_price,
        fixed_cost: if used { vt.fixed_cost() } else { 0.0 },
        co2: dist_m as f64 * vt.co2_per_m(),
        ..RouteCache::default()
    };
    match schedule_stops(inst, vt.capacity, stops) {
        Ok(begin) => cache.begin = begin,
        Err(v) => cache.violation = Some(v),
    }
    if vt.is_electric() {
        let profile = propagate_soc(inst, vt, stops);
        cache.deficit = profile.deficit;
        cache.overcharge = profile.overcharge;
        cache.charged_kwh = profile.charged;
        for (k, s) in stops.iter().enumerate() {
            if let Some(op) = s.charge {
                cache.charge_time += op.duration;
                if let Some(&b) = cache.begin.get(k + 1) {
                    let prev = if k == 0 { inst.depot_start() } else { stops[k - 1].vertex };
                    let prev_b = cache.begin[k];
                    let arrive = prev_b + inst.vertices[prev].service + extra_service(&stops, k) + inst.time(prev, s.vertex);
                    cache.charge_wait += (b - arrive).max(0);
                }
            }
        }
    }
    cache
}

/// Charging time of the stop before stop `k`, if it was a charger visit.
fn extra_service(stops: &[Stop], k: usize) -> Time {
    if k == 0 {
        0
    } else {
        stops[k - 1].charge.map_or(0, |op| op.duration)
    }
}

/// Energy and fixed cost of a route (objective contribution).
pub fn route_cost(route: &Route, _inst: &Instance) -> f64 {
    route.cache.cost()
}

pub fn co2_of(route: &Route, _inst: &Instance) -> f64 {
    route.cache.co2
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub energy_cost: f64,
    pub fleet_cost: f64,
    pub cost: f64,
    pub co2: f64,
    pub n_vehicles: usize,
    pub n_ev: usize,
    pub n_gv: usize,
    pub n_unserved: usize,
    pub energy_violation: f64,
    pub charge_time: Time,
    pub charged_kwh: f64,
    pub dist_m: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub routes: Vec<Route>,
    pub unserved: Vec<RequestId>,
    /// Route index serving each request.
    #[serde(skip)]
    pub placement: Vec<Option<usize>>,
}

impl Solution {
    pub fn empty(inst: &Instance) -> Self {
        Self { routes: Vec::new(), unserved: (0..inst.n_requests()).collect(), placement: vec![None; inst.n_requests()] }
    }

    pub fn totals(&self, inst: &Instance) -> Totals {
        let mut t = Totals { n_unserved: self.unserved.len(), ..Totals::default() };
        for r in &self.routes {
            if !r.serves_requests() {
                continue;
            }
            let c = &r.cache;
            t.energy_cost += c.energy_cost;
            t.fleet_cost += c.fixed_cost;
            t.co2 += c.co2;
            t.n_vehicles += 1;
            if inst.vehicle_types[r.vehicle_type].is_electric() {
                t.n_ev += 1;
            } else {
                t.n_gv += 1;
            }
            t.energy_violation += c.energy_violation();
            t.charge_time += c.charge_time;
            t.charged_kwh += c.charged_kwh;
            t.dist_m += c.dist_m;
        }
        t.cost = t.energy_cost + t.fleet_cost;
        t
    }

    pub fn cost(&self) -> f64 {
        self.routes.iter().map(|r| r.cache.cost()).sum()
    }

    pub fn co2(&self) -> f64 {
        self.routes.iter().map(|r| r.cache.co2).sum()
    }

    pub fn n_vehicles(&self) -> usize {
        self.routes.iter().filter(|r| r.serves_requests()).count()
    }

    pub fn count_type(&self, vehicle_type: usize) -> usize {
        self.routes.iter().filter(|r| r.vehicle_type == vehicle_type && r.serves_requests()).count()
    }

    pub fn is_energy_feasible(&self) -> bool {
        self.routes.iter().all(|r| r.is_energy_feasible())
    }

    pub fn is_time_feasible(&self) -> bool {
        self.routes.iter().all(|r| r.is_time_feasible())
    }

    /// Drops routes that serve nothing and rebuilds the request index.
    pub fn compact(&mut self, inst: &Instance) {
        self.routes.retain(|r| r.serves_requests());
        self.reindex(inst);
    }

    pub fn reindex(&mut self, inst: &Instance) {
        self.placement = vec![None; inst.n_requests()];
        for (k, r) in self.routes.iter().enumerate() {
            for s in &r.stops {
                if inst.is_pickup(s.vertex) {
                    self.placement[s.vertex - 1] = Some(k);
                }
            }
        }
        self.unserved.sort_unstable();
        self.unserved.dedup();
    }

    /// Every request appears exactly once across routes and the unserved pool.
    pub fn coverage_ok(&self, inst: &Instance) -> bool {
        let mut seen = vec![0u32; inst.n_requests()];
        for r in &self.routes {
            for s in &r.stops {
                if inst.is_pickup(s.vertex) {
                    seen[s.vertex - 1] += 1;
                }
            }
        }
        for &u in &self.unserved {
            seen[u] += 1;
        }
        seen.iter().all(|&c| c == 1)
    }

    /// Order-independent fingerprint of the route set.
    pub fn signature(&self) -> u64 {
        use std::collections::hash_map::DefaultHasher;
        use std::hash::{Hash, Hasher};
        let mut seqs: Vec<(usize, Vec<VertexId>)> = self
            .routes
            .iter()
            .filter(|r| r.serves_requests())
            .map(|r| (r.vehicle_type, r.stops.iter().filter(|s| !s.is_charge()).map(|s| s.vertex).collect()))
            .collect();
        seqs.sort();
        let mut h = DefaultHasher::new();
        seqs.hash(&mut h);
        h.finish()
    }
}

/// Re-evaluates every route from its stop sequence.
pub fn recompute_caches(mut sol: Solution, inst: &Instance) -> Solution {
    for r in &mut sol.routes {
        r.refresh(inst);
    }
    sol.reindex(inst);
    sol
}

/// Where to put a request: pickup after node `pickup_after`, dropoff after
/// node `dropoff_after` (node 0 is the start depot, node k is stop k-1 of the
/// charge-free route). Equal indices mean the dropoff directly follows.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Insertion {
    pub pickup_after: usize,
    pub dropoff_after: usize,
    pub dist_delta: i64,
    pub delta: f64,
}

impl Insertion {
    /// Positions in the depot-to-depot sequence after insertion.
    pub fn positions(&self) -> (usize, usize) {
        (self.pickup_after + 1, self.dropoff_after + 2)
    }

    pub fn apply(&self, inst: &Instance, base: &[Stop], r: RequestId) -> Vec<Stop> {
        let mut out = Vec::with_capacity(base.len() + 2);
        out.extend_from_slice(&base[..self.pickup_after]);
        out.push(Stop::visit(inst.pickup(r)));
        out.extend_from_slice(&base[self.pickup_after..self.dropoff_after]);
        out.push(Stop::visit(inst.dropoff(r)));
        out.extend_from_slice(&base[self.dropoff_after..]);
        out
    }
}

/// Penalty weights and solution-level state needed to price an insertion.
#[derive(Clone, Copy, Debug)]
pub struct InsertCtx {
    pub rho2: f64,
    pub rho3: f64,
    pub rho4: f64,
    pub co2: f64,
    pub co2_cap: f64,
}

impl InsertCtx {
    pub fn plain() -> Self {
        Self { rho2: 0.0, rho3: 0.0, rho4: 0.0, co2: 0.0, co2_cap: f64::INFINITY }
    }
}

/// Penalized cost change of adding `dd` metres to a route of type `vt`.
pub fn insertion_delta(inst: &Instance, vt_idx: usize, route_dist: i64, route_used: bool, dd: i64, ctx: &InsertCtx) -> f64 {
    let vt = &inst.vehicle_types[vt_idx];
    let mut delta = vt.cost_per_m() * dd as f64;
    if !route_used {
        delta += vt.fixed_cost() + ctx.rho2;
    }
    if ctx.rho3 > 0.0 && vt.co2_per_m() > 0.0 {
        let excess = |g: f64| (g - ctx.co2_cap).max(0.0);
        delta += ctx.rho3 * (excess(ctx.co2 + vt.co2_per_m() * dd as f64) - excess(ctx.co2));
    }
    if ctx.rho4 > 0.0 && vt.is_electric() {
        let range = vt.e_init - vt.e_min;
        let gap = |d: i64| (vt.energy_for(d) - range).max(0.0);
        delta += ctx.rho4 * (gap(route_dist + dd) - gap(route_dist));
    }
    delta
}

/// Cheapest feasible pickup/dropoff placement of request `r` into a charge-free
/// stop list. Candidates are pre-filtered with earliest/latest begin-time
/// bounds and then fully evaluated in cost order.
pub fn best_insertion_stops(inst: &Instance, vt_idx: usize, base: &[Stop], r: RequestId, ctx: &InsertCtx) -> Option<Insertion> {
    let vt = &inst.vehicle_types[vt_idx];
    let cap = vt.capacity as i64;
    let p = inst.pickup(r);
    let d = inst.dropoff(r);
    let q = inst.requests[r].passengers as i64;
    if q > cap {
        return None;
    }
    let m = base.len() + 2;
    let mut vs = Vec::with_capacity(m);
    vs.push(inst.depot_start());
    vs.extend(base.iter().map(|s| s.vertex));
    vs.push(inst.depot_end());
    let svc = |k: usize| inst.vertices[vs[k]].service;
    let (e, l) = (|k: usize| inst.vertices[vs[k]].tw.earliest, |k: usize| inst.vertices[vs[k]].tw.latest);
    let mut b = vec![0; m];
    let mut load = vec![0i64; m];
    b[0] = e(0);
    for k in 1..m {
        b[k] = (b[k - 1] + svc(k - 1) + inst.time(vs[k - 1], vs[k])).max(e(k));
        load[k] = load[k - 1] + inst.vertices[vs[k]].load as i64;
    }
    let mut latest = vec![0; m];
    latest[m - 1] = l(m - 1);
    for k in (0..m - 1).rev() {
        latest[k] = l(k).min(latest[k + 1] - svc(k) - inst.time(vs[k], vs[k + 1]));
    }
    let vp = &inst.vertices[p];
    let vd = &inst.vertices[d];
    let route_dist = path_dist_m(inst, base);
    let used = !base.is_empty();
    let mut cands: Vec<(i64, usize, usize)> = Vec::new();
    for i in 0..m - 1 {
        let (a, nx) = (vs[i], vs[i + 1]);
        if load[i] + q > cap || !inst.arc_allowed(a, p) {
            continue;
        }
        let bp = (b[i] + svc(i) + inst.time(a, p)).max(vp.tw.earliest);
        if bp > vp.tw.latest {
            continue;
        }
        let dp = inst.dist_m(a, p) + inst.dist_m(p, nx) - inst.dist_m(a, nx);
        // dropoff right after the pickup
        if inst.arc_allowed(p, d) && inst.arc_allowed(d, nx) {
            let bd = (bp + vp.service + inst.time(p, d)).max(vd.tw.earliest);
            if bd <= vd.tw.latest && (bd + vd.service + inst.time(d, nx)).max(e(i + 1)) <= latest[i + 1] {
                let dd = inst.dist_m(a, p) + inst.dist_m(p, d) + inst.dist_m(d, nx) - inst.dist_m(a, nx);
                cands.push((dd, i, i));
            }
        }
        if !inst.arc_allowed(p, nx) || i + 1 >= m - 1 {
            continue;
        }
        let mut bk = (bp + vp.service + inst.time(p, nx)).max(e(i + 1));
        if bk > latest[i + 1] {
            continue;
        }
        for j in i + 1..m - 1 {
            if j > i + 1 {
                bk = (bk + svc(j - 1) + inst.time(vs[j - 1], vs[j])).max(e(j));
                if bk > latest[j] {
                    break;
                }
            }
            if load[j] + q > cap {
                break;
            }
            let (a2, nx2) = (vs[j], vs[j + 1]);
            if !inst.arc_allowed(a2, d) || !inst.arc_allowed(d, nx2) {
                continue;
            }
            let bd = (bk + svc(j) + inst.time(a2, d)).max(vd.tw.earliest);
            if bd > vd.tw.latest || (bd + vd.service + inst.time(d, nx2)).max(e(j + 1)) > latest[j + 1] {
                continue;
            }
            let dd = dp + inst.dist_m(a2, d) + inst.dist_m(d, nx2) - inst.dist_m(a2, nx2);
            cands.push((dd, i, j));
        }
    }
    cands.sort_unstable();
    for (dd, i, j) in cands {
        let ins = Insertion { pickup_after: i, dropoff_after: j, dist_delta: dd, delta: 0.0 };
        let stops = ins.apply(inst, base, r);
        if schedule_stops(inst, vt.capacity, &stops).is_ok() {
            let delta = insertion_delta(inst, vt_idx, route_dist, used, dd, ctx);
            return Some(Insertion { delta, ..ins });
        }
    }
    None
}

pub fn best_insertion(route: &Route, r: RequestId, inst: &Instance, ctx: &InsertCtx) -> Option<Insertion> {
    best_insertion_stops(inst, route.vehicle_type, &route.request_stops(), r, ctx)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisitDump {
    pub vertex: VertexId,
    pub begin: Time,
    pub load: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChargeDump {
    pub charger: usize,
    /// Dummy vertex the visit is booked on.
    pub dummy: VertexId,
    pub start: Time,
    pub duration: Time,
    pub energy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteDump {
    pub vehicle_type: usize,
    /// Vehicle index within its type (for symmetry-breaking order).
    pub vehicle_index: usize,
    pub visits: Vec<VisitDump>,
    pub charges: Vec<ChargeDump>,
    pub cost: f64,
    pub co2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionDump {
    pub routes: Vec<RouteDump>,
    pub unserved: Vec<RequestId>,
    pub totals: Totals,
}

/// Explicit schedule, loads, SOC and dummy-charger booking of a solution.
/// Dummies of one charger are assigned by start time, the earliest charge
/// taking the highest-numbered dummy.
pub fn dump_solution(sol: &Solution, inst: &Instance) -> SolutionDump {
    let used: Vec<&Route> = sol.routes.iter().filter(|r| r.serves_requests()).collect();
    let mut per_charger: Vec<Vec<(Time, usize, usize)>> = vec![Vec::new(); inst.chargers.len()];
    for (ri, r) in used.iter().enumerate() {
        for (k, op, b) in r.charges() {
            per_charger[op.charger].push((b, ri, k));
        }
    }
    let mut dummy_of = std::collections::HashMap::new();
    for (c, list) in per_charger.iter_mut().enumerate() {
        list.sort_unstable();
        let dummies = &inst.chargers[c].dummies;
        for (rank, &(_, ri, k)) in list.iter().enumerate() {
            let slot = dummies.len().checked_sub(rank + 1).map(|i| dummies[i]).unwrap_or(dummies[0]);
            dummy_of.insert((ri, k), slot);
        }
    }
    let mut type_counter = vec![0usize; inst.vehicle_types.len()];
    let routes = used
        .iter()
        .enumerate()
        .map(|(ri, r)| {
            let vt = &inst.vehicle_types[r.vehicle_type];
            let profile = vt.is_electric().then(|| propagate_soc(inst, vt, &r.stops));
            let mut visits = Vec::with_capacity(r.stops.len() + 2);
            let mut load = 0;
            let path: Vec<VertexId> = r
                .stops
                .iter()
                .enumerate()
                .map(|(k, s)| if s.is_charge() { *dummy_of.get(&(ri, k)).unwrap_or(&s.vertex) } else { s.vertex })
                .collect();
            let full: Vec<VertexId> =
                std::iter::once(inst.depot_start()).chain(path.iter().copied()).chain(std::iter::once(inst.depot_end())).collect();
            for (k, &v) in full.iter().enumerate() {
                load += inst.vertices[v].load;
                visits.push(VisitDump {
                    vertex: v,
                    begin: r.cache.begin.get(k).copied().unwrap_or(0),
                    load,
                    soc: profile.as_ref().map(|p| p.arrival[k]),
                });
            }
            let charges = r
                .charges()
                .map(|(k, op, b)| ChargeDump {
                    charger: op.charger,
                    dummy: path[k],
                    start: b,
                    duration: op.duration,
                    energy: inst.charger_type_of(op.charger).energy_in(op.duration),
                })
                .collect();
            let vehicle_index = type_counter[r.vehicle_type];
            type_counter[r.vehicle_type] += 1;
            RouteDump { vehicle_type: r.vehicle_type, vehicle_index, visits, charges, cost: r.cache.cost(), co2: r.cache.co2 }
        })
        .collect();
    SolutionDump { routes, unserved: sol.unserved.clone(), totals: sol.totals(inst) }
}
