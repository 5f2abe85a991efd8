//! Synthetic feeder-service instances, demand scenarios and instance files.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GenError, IoError};
use crate::model::*;

pub const HOUR: Time = 3600;
pub const MINUTE: Time = 60;

/// A headway band `[start, end]` with departures every `headway` seconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Band {
    pub start: Time,
    pub end: Time,
    pub headway: Time,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimetableSpec {
    pub bands: Vec<Band>,
}

impl TimetableSpec {
    /// Service from 06:00 to 23:00: 15 min headways in the peaks, 30 min in
    /// the shoulders, hourly otherwise.
    pub fn feeder_day() -> Self {
        let b = |s: i64, e: i64, h: i64| Band { start: s * HOUR, end: e * HOUR, headway: h * MINUTE };
        Self {
            bands: vec![
                b(6, 7, 30),
                b(7, 9, 15),
                b(9, 11, 30),
                b(11, 16, 60),
                b(16, 17, 30),
                b(17, 19, 15),
                b(19, 20, 30),
                b(20, 23, 60),
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timetable {
    pub departures: Vec<Time>,
}

impl Timetable {
    pub fn span(&self) -> Option<(Time, Time)> {
        Some((*self.departures.first()?, *self.departures.last()?))
    }
}

/// Expands headway bands into a sorted, de-duplicated departure list. Band
/// ends are inclusive, so adjacent bands share their boundary departure.
pub fn build_timetable(spec: &TimetableSpec) -> Result<Timetable, GenError> {
    let mut bands = spec.bands.clone();
    for b in &bands {
        if b.headway <= 0 || b.end < b.start || b.start < 0 || b.end > 24 * HOUR {
            return Err(GenError::InvalidParams(format!("bad band {b:?}")));
        }
    }
    bands.sort_by_key(|b| (b.start, b.end));
    for w in bands.windows(2) {
        if w[1].start < w[0].end {
            return Err(GenError::OverlappingBands(w[0].start, w[0].end, w[1].start, w[1].end));
        }
    }
    let mut departures = Vec::new();
    for b in &bands {
        let mut t = b.start;
        while t <= b.end {
            departures.push(t);
            t += b.headway;
        }
    }
    departures.sort_unstable();
    departures.dedup();
    Ok(Timetable { departures })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Geometry {
    /// Square of side `side_m` centred on the station.
    Square { side_m: i64 },
    /// Disc centred on the station; stops closer than `exclusion_m` are dropped.
    Disc { diameter_m: i64, exclusion_m: i64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub geometry: Geometry,
    pub stop_spacing_m: i64,
    pub n_requests: usize,
    pub passengers: (u32, u32),
    pub max_station_wait: Time,
    /// Gap between the latest station arrival and the train departure.
    pub station_buffer: Time,
    pub detour_factor: f64,
    pub service_time: Time,
    /// Share of requests heading to the station.
    pub outbound_share: f64,
    pub horizon: TimeWindow,
    /// Depot coordinate; `None` places it at the station.
    pub depot: Option<Point>,
    pub max_vertices: usize,
    pub seed: u64,
}

impl GenParams {
    /// 4 km × 4 km grid with 1 km stop spacing.
    pub fn grid(n_requests: usize, seed: u64) -> Self {
        Self {
            geometry: Geometry::Square { side_m: 4000 },
            stop_spacing_m: 1000,
            n_requests,
            passengers: (1, 4),
            max_station_wait: 10 * MINUTE,
            station_buffer: 2 * MINUTE,
            detour_factor: DEFAULT_DETOUR_FACTOR,
            service_time: 30,
            outbound_share: 0.5,
            horizon: TimeWindow::new(5 * HOUR, 24 * HOUR),
            depot: None,
            max_vertices: 20_000,
            seed,
        }
    }

    /// Disc of 17.8 km diameter; stops within 1 km of the station are walkable.
    pub fn case_study(n_requests: usize, seed: u64) -> Self {
        Self { geometry: Geometry::Disc { diameter_m: 17_800, exclusion_m: 1000 }, ..Self::grid(n_requests, seed) }
    }

    fn check(&self) -> Result<(), GenError> {
        let bad = |m: &str| Err(GenError::InvalidParams(m.into()));
        if self.stop_spacing_m <= 0 {
            return bad("stop spacing must be positive");
        }
        if self.detour_factor < 1.0 {
            return bad("detour factor must be at least 1");
        }
        let (lo, hi) = self.passengers;
        if lo < 1 || hi > 4 || lo > hi {
            return bad("passenger range must lie within 1..=4");
        }
        if !(0.0..=1.0).contains(&self.outbound_share) {
            return bad("outbound share must lie in [0, 1]");
        }
        if self.station_buffer > self.max_station_wait {
            return bad("station buffer exceeds the maximum station wait");
        }
        Ok(())
    }
}

/// Station, stops and depot of a generated service area. The station is the origin.
pub fn stop_locations(geometry: &Geometry, spacing: i64) -> Vec<Point> {
    let (reach, keep): (i64, Box<dyn Fn(&Point) -> bool>) = match *geometry {
        Geometry::Square { side_m } => {
            let half = side_m / 2;
            (half, Box::new(move |p: &Point| p.x.abs() <= half && p.y.abs() <= half && (p.x, p.y) != (0, 0)))
        }
        Geometry::Disc { diameter_m, exclusion_m } => {
            let r = diameter_m as i128 / 2;
            let ex = exclusion_m as i128;
            (
                diameter_m / 2,
                Box::new(move |p: &Point| {
                    let d2 = p.x as i128 * p.x as i128 + p.y as i128 * p.y as i128;
                    d2 <= r * r && d2 >= ex * ex && (p.x, p.y) != (0, 0)
                }),
            )
        }
    };
    let k = reach / spacing;
    let mut out = Vec::new();
    for gx in -k..=k {
        for gy in -k..=k {
            let p = Point::new(gx * spacing, gy * spacing);
            if keep(&p) {
                out.push(p);
            }
        }
    }
    out
}

/// Charging sites, charger types and configuration attached to an instance.
#[derive(Clone, Debug, PartialEq)]
pub struct Infrastructure {
    pub sites: Vec<SiteCandidate>,
    pub charger_types: Vec<ChargerType>,
    pub config: ChargingConfig,
}

impl Infrastructure {
    /// One site at the station with two 50 kW chargers.
    pub fn station_dc(chargers: u32) -> Self {
        let sites = vec![SiteCandidate { id: 0, coord: Point::new(0, 0), power_limit: 1500.0, opening_cost: 4.11 }];
        let charger_types = vec![ChargerType::dc_fast(0)];
        let config = ChargingConfig::single(1, 1, 0, 0, chargers);
        Self { sites, charger_types, config }
    }

    /// One station site offering a single charger technology.
    pub fn station_single_type(charger: ChargerType, opening_cost: f64, chargers: u32) -> Self {
        let sites = vec![SiteCandidate { id: 0, coord: Point::new(0, 0), power_limit: 1500.0, opening_cost }];
        let charger = ChargerType { id: 0, ..charger };
        Self { sites, charger_types: vec![charger], config: ChargingConfig::single(1, 1, 0, 0, chargers) }
    }

    pub fn rapid(chargers: u32) -> Self {
        Self::station_single_type(ChargerType::rapid(0), 4.11, chargers)
    }

    pub fn superfast(chargers: u32) -> Self {
        Self::station_single_type(ChargerType::superfast(0), 68.08, chargers)
    }

    pub fn none() -> Self {
        Self { sites: Vec::new(), charger_types: Vec::new(), config: ChargingConfig::default() }
    }
}

/// Draws requests from `rng` and lays out the instance.
pub fn generate_with_rng(
    params: &GenParams,
    timetable: &Timetable,
    vehicle_types: &[VehicleType],
    infra: &Infrastructure,
    rng: &mut ChaCha8Rng,
) -> Result<Instance, GenError> {
    params.check()?;
    let per = DEFAULT_DUMMIES_PER_CHARGER;
    let vertices = 2 * params.n_requests + 2 + infra.config.total_chargers() as usize * per;
    if vertices > params.max_vertices {
        return Err(GenError::VertexBudget { vertices, budget: params.max_vertices });
    }
    let stops = stop_locations(&params.geometry, params.stop_spacing_m);
    if params.n_requests > 0 && (stops.is_empty() || timetable.departures.is_empty()) {
        return Err(GenError::InvalidParams("no stops or no departures to sample from".into()));
    }
    let station = Point::new(0, 0);
    let mut b = InstanceBuilder::new(params.depot.unwrap_or(station), params.horizon);
    b.meta = Meta {
        seed: params.seed,
        params: serde_json::to_value(params).expect("params serialize"),
        speed_kmh: DEFAULT_SPEED_KMH,
        dummies_per_charger: per,
    };
    b.detour_factor = params.detour_factor;
    b.vehicle_types = vehicle_types.to_vec();
    b.sites = infra.sites.clone();
    b.charger_types = infra.charger_types.clone();
    b.charging_config = infra.config.clone();
    let h = params.horizon;
    for _ in 0..params.n_requests {
        let stop = *stops.choose(rng).expect("non-empty stops");
        let passengers = rng.gen_range(params.passengers.0..=params.passengers.1);
        let train = *timetable.departures.choose(rng).expect("non-empty timetable");
        let outbound = rng.gen_bool(params.outbound_share);
        let spec = if outbound {
            RequestSpec {
                pickup: stop,
                dropoff: station,
                pickup_tw: h,
                dropoff_tw: TimeWindow::new(train - params.max_station_wait, train - params.station_buffer),
                passengers,
                direction: Direction::Outbound,
                pickup_service: params.service_time,
                dropoff_service: 0,
            }
        } else {
            RequestSpec {
                pickup: station,
                dropoff: stop,
                pickup_tw: TimeWindow::new(train, train + params.max_station_wait),
                dropoff_tw: h,
                passengers,
                direction: Direction::Inbound,
                pickup_service: params.service_time,
                dropoff_service: 0,
            }
        };
        b.requests.push(spec);
    }
    Ok(b.build()?)
}

/// Seeded instance generation; identical inputs give identical instances.
pub fn generate_instance(
    params: &GenParams,
    timetable: &Timetable,
    vehicle_types: &[VehicleType],
    infra: &Infrastructure,
) -> Result<Instance, GenError> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    generate_with_rng(params, timetable, vehicle_types, infra, &mut rng)
}

/// RNG substream for one scenario of a seeded family.
pub fn scenario_rng(seed: u64, scenario: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(scenario as u64 + 1);
    rng
}

/// `n` independent demand days with uniform probabilities.
pub fn generate_scenarios(
    params: &GenParams,
    timetable: &Timetable,
    vehicle_types: &[VehicleType],
    infra: &Infrastructure,
    n: usize,
) -> Result<Vec<Scenario>, GenError> {
    if n == 0 {
        return Err(GenError::InvalidParams("at least one scenario is required".into()));
    }
    (0..n)
        .map(|id| {
            let mut rng = scenario_rng(params.seed, id);
            let instance = generate_with_rng(params, timetable, vehicle_types, infra, &mut rng)?;
            Ok(Scenario { id, probability: 1.0 / n as f64, instance })
        })
        .collect()
}

pub fn instance_to_json(inst: &Instance) -> String {
    let mut s = serde_json::to_string_pretty(&inst.to_parts()).expect("instance serializes");
    s.push('\n');
    s
}

pub fn instance_from_json(text: &str) -> Result<Instance, IoError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let parts: InstanceParts = serde_path_to_error::deserialize(de).map_err(|e| IoError::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    Ok(Instance::from_parts(parts)?)
}

pub fn write_instance(inst: &Instance, path: &Path) -> Result<(), IoError> {
    fs::write(path, instance_to_json(inst)).map_err(|source| IoError::Io { path: path.display().to_string(), source })
}

pub fn read_instance(path: &Path) -> Result<Instance, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::Io { path: path.display().to_string(), source })?;
    instance_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feeder_day_has_peak_departures() {
        let tt = build_timetable(&TimetableSpec::feeder_day()).unwrap();
        for t in [7 * HOUR, 7 * HOUR + 15 * MINUTE, 7 * HOUR + 30 * MINUTE] {
            assert!(tt.departures.contains(&t));
        }
        assert_eq!(tt.span(), Some((6 * HOUR, 23 * HOUR)));
    }

    #[test]
    fn single_hourly_band() {
        let spec = TimetableSpec { bands: vec![Band { start: 6 * HOUR, end: 8 * HOUR, headway: HOUR }] };
        assert_eq!(build_timetable(&spec).unwrap().departures, vec![6 * HOUR, 7 * HOUR, 8 * HOUR]);
    }

    #[test]
    fn overlapping_bands_rejected() {
        let spec = TimetableSpec {
            bands: vec![
                Band { start: 6 * HOUR, end: 8 * HOUR, headway: HOUR },
                Band { start: 7 * HOUR, end: 9 * HOUR, headway: HOUR },
            ],
        };
        assert!(matches!(build_timetable(&spec), Err(GenError::OverlappingBands(..))));
    }

    #[test]
    fn square_grid_stop_count() {
        // 5 × 5 lattice minus the station itself
        assert_eq!(stop_locations(&Geometry::Square { side_m: 4000 }, 1000).len(), 24);
    }

    #[test]
    fn vertex_budget_enforced() {
        let mut p = GenParams::grid(50, 1);
        p.max_vertices = 60;
        let tt = build_timetable(&TimetableSpec::feeder_day()).unwrap();
        let r = generate_instance(&p, &tt, &[VehicleType::gasoline()], &Infrastructure::none());
        assert!(matches!(r, Err(GenError::VertexBudget { .. })));
    }
}
