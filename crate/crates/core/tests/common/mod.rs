#![allow(dead_code)]

use feeder_core::instancegen::*;
use feeder_core::preprocess::preprocess;
use feeder_core::routesched::{ChargeOp, Stop};
use feeder_core::search::{solve_fs_mfrp, SearchParams};
use feeder_core::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn timetable() -> Timetable {
    build_timetable(&TimetableSpec::feeder_day()).unwrap()
}

/// Preprocessed grid instance.
pub fn grid(n: usize, seed: u64, types: &[VehicleType], infra: &Infrastructure) -> Instance {
    let inst = generate_instance(&GenParams::grid(n, seed), &timetable(), types, infra).unwrap();
    preprocess(&inst).unwrap()
}

pub fn gv_only(n: usize, seed: u64) -> Instance {
    grid(n, seed, &[VehicleType::gasoline()], &Infrastructure::rapid(1))
}

pub fn mixed(n: usize, seed: u64, soc: f64) -> Instance {
    grid(n, seed, &[VehicleType::ev_type1(soc), VehicleType::gasoline()], &Infrastructure::rapid(1))
}

/// Parameters for tiny instances: short runs, few construction samples.
pub fn small_params(iter_max: usize) -> SearchParams {
    SearchParams { iter_max, init_samples: 50, ..SearchParams::default() }
}

/// Cheapest accepted cost over `runs` seeds.
pub fn best_of(inst: &Instance, cap: f64, p: &SearchParams, runs: u64) -> Option<f64> {
    (0..runs)
        .filter_map(|s| solve_fs_mfrp(inst, cap, p, &mut ChaCha8Rng::seed_from_u64(s)).best)
        .map(|b| b.cost())
        .min_by(f64::total_cmp)
}

pub fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Small hand-laid instance with random coordinates and windows inside two
/// hours, plus one rapid charger at the depot.
pub fn random_instance(rng: &mut ChaCha8Rng, n: usize) -> Instance {
    let horizon = TimeWindow::new(0, 7200);
    let mut b = InstanceBuilder::new(Point::new(0, 0), horizon);
    let infra = Infrastructure::rapid(1);
    b.sites = infra.sites;
    b.charger_types = infra.charger_types;
    b.charging_config = infra.config;
    let mut ev = VehicleType::ev_type1(0.5);
    ev.capacity = rng.gen_range(2..=6);
    b.vehicle_types = vec![ev, VehicleType::gasoline()];
    b.detour_factor = [1.0, 1.2, 1.5, 3.0][rng.gen_range(0..4)];
    let pt = |rng: &mut ChaCha8Rng| Point::new(rng.gen_range(-3000..=3000), rng.gen_range(-3000..=3000));
    let window = |rng: &mut ChaCha8Rng| {
        if rng.gen_bool(0.3) {
            horizon
        } else {
            let s = rng.gen_range(0..5400);
            TimeWindow::new(s, s + rng.gen_range(0..1800))
        }
    };
    for _ in 0..n {
        b.requests.push(RequestSpec {
            pickup: pt(rng),
            dropoff: pt(rng),
            pickup_tw: window(rng),
            dropoff_tw: window(rng),
            passengers: rng.gen_range(1..=4),
            direction: Direction::Outbound,
            pickup_service: rng.gen_range(0..=60),
            dropoff_service: 0,
        });
    }
    b.build().unwrap()
}

/// Random stop sequence of at most 8 visits: mostly well-formed pickup and
/// dropoff orderings, sometimes with charging visits or broken structure.
pub fn random_route(rng: &mut ChaCha8Rng, inst: &Instance) -> Vec<Stop> {
    let n = inst.n_requests();
    let k = rng.gen_range(1..=n.min(4));
    let mut reqs: Vec<usize> = (0..n).collect();
    reqs.shuffle(rng);
    let mut pending: Vec<usize> = reqs[..k].to_vec();
    let mut open: Vec<usize> = Vec::new();
    let mut stops = Vec::new();
    while !pending.is_empty() || !open.is_empty() {
        if !pending.is_empty() && (open.is_empty() || rng.gen_bool(0.5)) {
            let r = pending.swap_remove(rng.gen_range(0..pending.len()));
            stops.push(Stop::visit(inst.pickup(r)));
            open.push(r);
        } else {
            let r = open.swap_remove(rng.gen_range(0..open.len()));
            stops.push(Stop::visit(inst.dropoff(r)));
        }
    }
    if rng.gen_bool(0.25) && stops.len() < 8 {
        let s = rng.gen_range(0..5400);
        let op = ChargeOp { charger: 0, duration: rng.gen_range(0..900), window: TimeWindow::new(s, s + rng.gen_range(0..3600)) };
        let at = rng.gen_range(0..=stops.len());
        stops.insert(at, Stop::charging(inst, op));
    }
    if rng.gen_bool(0.1) {
        match rng.gen_range(0..3) {
            0 => {
                let i = rng.gen_range(0..stops.len());
                stops.remove(i);
            }
            1 => stops.reverse(),
            _ => {
                let s = stops[0];
                stops.push(s);
            }
        }
    }
    stops
}

/// Independent check of structure, arcs and load.
pub fn structure_ok(inst: &Instance, capacity: u32, stops: &[Stop]) -> bool {
    let n = inst.n_requests();
    let mut picked = vec![false; n];
    let mut dropped = vec![false; n];
    let mut load = 0i64;
    for s in stops {
        let v = s.vertex;
        if v == inst.depot_start() || v >= inst.depot_end() {
            return false;
        }
        if inst.is_pickup(v) {
            let r = v - 1;
            if picked[r] {
                return false;
            }
            picked[r] = true;
        } else if inst.is_dropoff(v) {
            let r = v - n - 1;
            if !picked[r] || dropped[r] {
                return false;
            }
            dropped[r] = true;
        }
        if let Some(op) = s.charge {
            if inst.vertices[v].physical_charger != Some(op.charger) || op.duration < 0 {
                return false;
            }
        }
        load += inst.vertices[v].load as i64;
        if load < 0 || load > capacity as i64 {
            return false;
        }
    }
    if picked != dropped {
        return false;
    }
    let mut path = vec![inst.depot_start()];
    path.extend(stops.iter().map(|s| s.vertex));
    path.push(inst.depot_end());
    path.windows(2).all(|w| inst.arc_allowed(w[0], w[1]))
}

struct Bounds {
    v: Vec<VertexId>,
    e: Vec<Time>,
    l: Vec<Time>,
    d: Vec<Time>,
    /// (pickup node, dropoff node, ride limit)
    rides: Vec<(usize, usize, Time)>,
}

fn bounds(inst: &Instance, stops: &[Stop]) -> Bounds {
    let mut v = vec![inst.depot_start()];
    v.extend(stops.iter().map(|s| s.vertex));
    v.push(inst.depot_end());
    let mut e: Vec<Time> = v.iter().map(|&x| inst.vertices[x].tw.earliest).collect();
    let mut l: Vec<Time> = v.iter().map(|&x| inst.vertices[x].tw.latest).collect();
    let mut d: Vec<Time> = v.iter().map(|&x| inst.vertices[x].service).collect();
    for (k, s) in stops.iter().enumerate() {
        if let Some(op) = s.charge {
            d[k + 1] += op.duration;
            e[k + 1] = e[k + 1].max(op.window.earliest);
            l[k + 1] = l[k + 1].min(op.window.latest);
        }
    }
    let mut rides = Vec::new();
    for (i, &pv) in v.iter().enumerate() {
        if let Some(r) = inst.request_of(pv).filter(|_| inst.is_pickup(pv)) {
            if let Some(j) = v.iter().position(|&x| x == inst.dropoff(r)) {
                rides.push((i, j, inst.requests[r].max_ride_time));
            }
        }
    }
    Bounds { v, e, l, d, rides }
}

/// Integer begin times satisfying every time constraint of a well-formed
/// stop sequence, found as the least solution of the difference-constraint
/// system by Bellman-Ford longest paths; None on a positive cycle.
pub fn difference_schedule(inst: &Instance, stops: &[Stop]) -> Option<Vec<Time>> {
    let bd = bounds(inst, stops);
    let m = bd.v.len();
    // x_j >= x_i + w encoded as (i, j, w); node m is the zero reference.
    let mut edges: Vec<(usize, usize, Time)> = Vec::new();
    for k in 1..m {
        edges.push((k - 1, k, bd.d[k - 1] + inst.time(bd.v[k - 1], bd.v[k])));
    }
    for k in 0..m {
        edges.push((m, k, bd.e[k]));
        edges.push((k, m, -bd.l[k]));
    }
    for &(p, q, lim) in &bd.rides {
        edges.push((q, p, -bd.d[p] - lim));
    }
    let mut x = vec![Time::MIN / 4; m + 1];
    x[m] = 0;
    for _ in 0..=m + 1 {
        let mut changed = false;
        for &(i, j, w) in &edges {
            if x[i] > Time::MIN / 4 && x[i] + w > x[j] {
                x[j] = x[i] + w;
                changed = true;
            }
        }
        if !changed {
            if x[m] > 0 {
                return None;
            }
            return Some(x[..m].to_vec());
        }
    }
    None
}

/// Whether `begin` satisfies precedence, windows and ride limits.
pub fn schedule_satisfies(inst: &Instance, stops: &[Stop], begin: &[Time]) -> bool {
    let bd = bounds(inst, stops);
    if begin.len() != bd.v.len() {
        return false;
    }
    let m = bd.v.len();
    (1..m).all(|k| begin[k] >= begin[k - 1] + bd.d[k - 1] + inst.time(bd.v[k - 1], bd.v[k]))
        && (0..m).all(|k| begin[k] >= bd.e[k] && begin[k] <= bd.l[k])
        && bd.rides.iter().all(|&(p, q, lim)| begin[q] - begin[p] - bd.d[p] <= lim)
}

/// Oracle verdict for a stop sequence.
pub fn oracle_feasible(inst: &Instance, capacity: u32, stops: &[Stop]) -> bool {
    structure_ok(inst, capacity, stops) && difference_schedule(inst, stops).is_some()
}
