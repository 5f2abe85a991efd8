//! Time-window tightening, arc elimination and charger-pair detection.

use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::error::PreprocessError;
use crate::model::*;
use crate::routesched::{schedule_stops, Stop};

/// Shrinks pickup and dropoff windows using ride-time and travel-time bounds
/// until a fixed point is reached.
pub fn tighten_time_windows(inst: &Instance) -> Result<Instance, PreprocessError> {
    let mut out = inst.clone();
    for r in 0..inst.n_requests() {
        let req = &inst.requests[r];
        let direct = inst.direct_ride_time(r);
        if req.max_ride_time < direct {
            return Err(PreprocessError::InfeasibleRequest {
                request: r,
                reason: format!("max ride time {} s is below the direct ride time {} s", req.max_ride_time, direct),
            });
        }
        let (p, d) = (req.pickup, req.dropoff);
        let u = inst.vertices[p].service;
        let big_l = req.max_ride_time;
        loop {
            let mut pw = out.vertices[p].tw;
            let mut dw = out.vertices[d].tw;
            pw.earliest = pw.earliest.max(dw.earliest - big_l - u);
            pw.latest = pw.latest.min(dw.latest - direct - u);
            dw.earliest = dw.earliest.max(pw.earliest + u + direct);
            dw.latest = dw.latest.min(pw.latest + u + big_l);
            if pw.is_empty() || dw.is_empty() {
                return Err(PreprocessError::InfeasibleRequest { request: r, reason: "time windows become empty".into() });
            }
            let changed = pw != out.vertices[p].tw || dw != out.vertices[d].tw;
            out.vertices[p].tw = pw;
            out.vertices[d].tw = dw;
            if !changed {
                break;
            }
        }
    }
    Ok(out)
}

/// The six orderings that can serve requests `i` and `j` together.
pub fn pair_paths(inst: &Instance, i: RequestId, j: RequestId) -> [[VertexId; 4]; 6] {
    let (pi, pj, di, dj) = (inst.pickup(i), inst.pickup(j), inst.dropoff(i), inst.dropoff(j));
    [
        [pi, pj, di, dj],
        [pi, pj, dj, di],
        [pj, pi, di, dj],
        [pj, pi, dj, di],
        [pi, di, pj, dj],
        [pj, dj, pi, di],
    ]
}

/// True when some vehicle can serve both requests on one route.
pub fn requests_compatible(i: RequestId, j: RequestId, inst: &Instance) -> bool {
    assert_ne!(i, j, "a request is not paired with itself");
    let cap = inst.vehicle_types.iter().map(|v| v.capacity).max().unwrap_or(0);
    pair_paths(inst, i, j).iter().any(|path| {
        let stops: Vec<Stop> = path.iter().map(|&v| Stop::visit(v)).collect();
        schedule_stops(inst, cap, &stops).is_ok()
    })
}

/// Structural eliminations, the window rule e_i + u_i + t_ij > l_j, and all
/// arcs between the nodes of each incompatible request pair.
pub fn eliminate_arcs(inst: &Instance) -> ArcMask {
    let mut mask = inst.arc_mask.clone();
    let nv = inst.vertices.len();
    for i in 0..nv {
        let vi = &inst.vertices[i];
        for j in 0..nv {
            if i != j && vi.tw.earliest + vi.service + inst.time(i, j) > inst.vertices[j].tw.latest {
                mask.forbid(i, j);
            }
        }
    }
    let n = inst.n_requests();
    let incompatible: Vec<(usize, usize)> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| (i + 1..n).filter(move |&j| !requests_compatible(i, j, inst)).map(move |j| (i, j)))
        .collect();
    for (i, j) in incompatible {
        let a = [inst.pickup(i), inst.dropoff(i)];
        let b = [inst.pickup(j), inst.dropoff(j)];
        for &x in &a {
            for &y in &b {
                mask.forbid(x, y);
                mask.forbid(y, x);
            }
        }
    }
    mask
}

/// Triples (i, j, s), i < j, such that neither dropoff(i) → s → pickup(j)
/// nor dropoff(j) → s → pickup(i) can meet the time windows, even with zero
/// charging time.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ChargerPairSet {
    pub triples: BTreeSet<(RequestId, RequestId, VertexId)>,
}

impl ChargerPairSet {
    pub fn contains(&self, i: RequestId, j: RequestId, s: VertexId) -> bool {
        self.triples.contains(&(i.min(j), i.max(j), s))
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}

fn through_charger_feasible(inst: &Instance, from: VertexId, s: VertexId, to: VertexId) -> bool {
    let a = &inst.vertices[from];
    let sv = &inst.vertices[s];
    let b = &inst.vertices[to];
    let at_s = (a.tw.earliest + a.service + inst.time(from, s)).max(sv.tw.earliest);
    if at_s > sv.tw.latest {
        return false;
    }
    at_s + sv.service + inst.time(s, to) <= b.tw.latest
}

pub fn charger_infeasible_pairs(inst: &Instance) -> ChargerPairSet {
    let n = inst.n_requests();
    let mut triples = BTreeSet::new();
    for c in &inst.chargers {
        let s = c.dummies[0];
        for i in 0..n {
            for j in i + 1..n {
                let ij = through_charger_feasible(inst, inst.dropoff(i), s, inst.pickup(j));
                let ji = through_charger_feasible(inst, inst.dropoff(j), s, inst.pickup(i));
                if !ij && !ji {
                    for &dummy in &c.dummies {
                        triples.insert((i, j, dummy));
                    }
                }
            }
        }
    }
    ChargerPairSet { triples }
}

/// Tightens windows and installs the eliminated-arc mask.
pub fn preprocess(inst: &Instance) -> Result<Instance, PreprocessError> {
    let mut out = tighten_time_windows(inst)?;
    out.arc_mask = eliminate_arcs(&out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Direction, InstanceBuilder, Point, RequestSpec, TimeWindow};

    #[test]
    fn outbound_pickup_window_from_dropoff_window() {
        let mut b = InstanceBuilder::new(Point::new(0, 0), TimeWindow::new(5 * 3600, 24 * 3600));
        b.requests.push(RequestSpec {
            pickup: Point::new(10_000, 0),
            dropoff: Point::new(0, 0),
            pickup_tw: TimeWindow::new(5 * 3600, 24 * 3600),
            dropoff_tw: TimeWindow::new(8 * 3600 + 50 * 60, 9 * 3600),
            passengers: 1,
            direction: Direction::Outbound,
            pickup_service: 30,
            dropoff_service: 0,
        });
        let inst = b.build().unwrap();
        let t = tighten_time_windows(&inst).unwrap();
        assert_eq!(t.vertices[1].tw, TimeWindow::new(8 * 3600 + 31 * 60 + 30, 8 * 3600 + 47 * 60 + 30));
        let again = tighten_time_windows(&t).unwrap();
        assert_eq!(again.vertices, t.vertices);
    }
}
