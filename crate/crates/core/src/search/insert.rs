//! Request removal and (re)insertion primitives shared by the operators.

use rand::seq::SliceRandom;
use rand::Rng;

use super::Ctx;
use crate::model::*;
use crate::routesched::*;

/// Takes request `r` off its route and puts it in the unserved pool.
pub fn remove_request(ctx: &Ctx, sol: &mut Solution, r: RequestId) -> Option<usize> {
    let k = sol.placement[r]?;
    let inst = ctx.inst;
    let route = &sol.routes[k];
    let stops: Vec<Stop> = route.request_stops().into_iter().filter(|s| inst.request_of(s.vertex) != Some(r)).collect();
    sol.routes[k] = ctx.finalize(route.vehicle_type, stops);
    sol.placement[r] = None;
    sol.unserved.push(r);
    Some(k)
}

pub fn insert_at(ctx: &Ctx, sol: &mut Solution, k: usize, r: RequestId, ins: &Insertion) {
    let route = &sol.routes[k];
    let stops = ins.apply(ctx.inst, &route.request_stops(), r);
    sol.routes[k] = ctx.finalize(route.vehicle_type, stops);
    sol.placement[r] = Some(k);
    sol.unserved.retain(|&u| u != r);
}

/// Opens an empty route of type `vt` and returns its index.
pub fn open_route(ctx: &Ctx, sol: &mut Solution, vt: usize) -> usize {
    sol.routes.push(Route::new(ctx.inst, vt, Vec::new()));
    sol.routes.len() - 1
}

/// Best insertion of `r` over every route except `skip`.
pub fn best_over_routes(ctx: &Ctx, sol: &Solution, r: RequestId, skip: Option<usize>) -> Option<(usize, Insertion)> {
    let ictx = ctx.ictx(sol);
    let mut best: Option<(usize, Insertion)> = None;
    for (k, route) in sol.routes.iter().enumerate() {
        if Some(k) == skip {
            continue;
        }
        if let Some(ins) = best_insertion(route, r, ctx.inst, &ictx) {
            if best.as_ref().map_or(true, |(_, b)| ins.delta < b.delta) {
                best = Some((k, ins));
            }
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Repair {
    Greedy,
    Regret(usize),
}

/// Inserts `pool` into the existing routes by cheapest-first or k-regret
/// order, opening at most `max_new` routes for requests that fit nowhere.
/// Requests left over stay unserved.
pub fn insert_pool(ctx: &Ctx, sol: &mut Solution, pool: &[RequestId], mode: Repair, new_type: Option<usize>, max_new: usize) {
    let inst = ctx.inst;
    let plain = InsertCtx::plain();
    let mut pending: Vec<RequestId> = pool.to_vec();
    pending.sort_unstable();
    let mut cache: Vec<Vec<Option<Insertion>>> = vec![Vec::new(); pending.len()];
    let mut dirty: Vec<bool> = Vec::new();
    let mut dists: Vec<i64> = Vec::new();
    let mut opened = 0;
    while !pending.is_empty() {
        let n_routes = sol.routes.len();
        dirty.resize(n_routes, true);
        dists.resize(n_routes, 0);
        for k in 0..n_routes {
            if !dirty[k] {
                continue;
            }
            let base = sol.routes[k].request_stops();
            dists[k] = path_dist_m(inst, &base);
            for (pi, &r) in pending.iter().enumerate() {
                cache[pi].resize(n_routes, None);
                cache[pi][k] = best_insertion_stops(inst, sol.routes[k].vehicle_type, &base, r, &plain);
            }
            dirty[k] = false;
        }
        let ictx = ctx.ictx(sol);
        // (key, best delta, pending index, route, insertion)
        let mut choice: Option<(f64, f64, usize, usize, Insertion)> = None;
        for pi in 0..pending.len() {
            let mut opts: Vec<(f64, usize, Insertion)> = cache[pi]
                .iter()
                .enumerate()
                .filter_map(|(k, o)| {
                    let route = &sol.routes[k];
                    o.map(|ins| {
                        let d = insertion_delta(inst, route.vehicle_type, dists[k], route.serves_requests(), ins.dist_delta, &ictx);
                        (d, k, Insertion { delta: d, ..ins })
                    })
                })
                .collect();
            if opts.is_empty() {
                continue;
            }
            opts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let best = opts[0].0;
            let key = match mode {
                Repair::Greedy => -best,
                Repair::Regret(k) => (1..k).map(|h| opts.get(h).map_or(1e9, |o| o.0 - best)).sum(),
            };
            let better = match &choice {
                None => true,
                Some((bk, bd, _, _, _)) => key > *bk || (key == *bk && best < *bd),
            };
            if better {
                choice = Some((key, best, pi, opts[0].1, opts[0].2));
            }
        }
        match choice {
            Some((_, _, pi, k, ins)) => {
                let r = pending.remove(pi);
                cache.remove(pi);
                insert_at(ctx, sol, k, r, &ins);
                dirty[k] = true;
            }
            None => {
                let Some(vt) = new_type.filter(|_| opened < max_new) else { break };
                if sol.count_type(vt) >= inst.vehicle_types[vt].max_count {
                    break;
                }
                open_route(ctx, sol, vt);
                opened += 1;
            }
        }
    }
}

/// Savings in penalized cost from removing each served request from its route.
pub fn removal_savings(ctx: &Ctx, sol: &Solution) -> Vec<(f64, RequestId)> {
    let inst = ctx.inst;
    let mut out = Vec::new();
    for route in &sol.routes {
        let base = route.request_stops();
        let vt = &inst.vehicle_types[route.vehicle_type];
        let nreq = base.len() / 2;
        let mut vs = vec![inst.depot_start()];
        vs.extend(base.iter().map(|s| s.vertex));
        vs.push(inst.depot_end());
        for (k, s) in base.iter().enumerate() {
            if !inst.is_pickup(s.vertex) {
                continue;
            }
            let r = s.vertex - 1;
            let d = inst.dropoff(r);
            let j = base.iter().position(|x| x.vertex == d).unwrap();
            let (pi, di) = (k + 1, j + 1);
            let saved = if di == pi + 1 {
                inst.dist_m(vs[pi - 1], vs[pi]) + inst.dist_m(vs[pi], vs[di]) + inst.dist_m(vs[di], vs[di + 1])
                    - inst.dist_m(vs[pi - 1], vs[di + 1])
            } else {
                inst.dist_m(vs[pi - 1], vs[pi]) + inst.dist_m(vs[pi], vs[pi + 1]) - inst.dist_m(vs[pi - 1], vs[pi + 1])
                    + inst.dist_m(vs[di - 1], vs[di])
                    + inst.dist_m(vs[di], vs[di + 1])
                    - inst.dist_m(vs[di - 1], vs[di + 1])
            };
            let mut value = vt.cost_per_m() * saved as f64 + route.cache.energy_violation() * ctx.p.rho4 / nreq.max(1) as f64;
            if nreq == 1 {
                value += vt.fixed_cost() + ctx.p.rho2;
            }
            out.push((value, r));
        }
    }
    out
}

/// Index drawn with a bias towards the front: ⌊y^p · len⌋, y ~ U(0,1).
pub fn biased_index(len: usize, power: f64, rng: &mut impl Rng) -> usize {
    let y: f64 = rng.gen();
    ((y.powf(power) * len as f64) as usize).min(len.saturating_sub(1))
}

pub fn served(sol: &Solution) -> Vec<RequestId> {
    sol.placement.iter().enumerate().filter_map(|(r, p)| p.map(|_| r)).collect()
}

pub fn shuffled<T: Clone>(v: &[T], rng: &mut impl Rng) -> Vec<T> {
    let mut out = v.to_vec();
    out.shuffle(rng);
    out
}
