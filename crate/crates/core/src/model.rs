//! Domain types shared by every other module.
//!
//! All internal times are integer seconds from midnight and all coordinates and
//! distances are integer metres. Energy is kWh for electric vehicles and litres
//! for gasoline vehicles; money is euros per day and emissions are kg of CO₂.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::ModelError;

pub type Time = i64;
pub type VertexId = usize;
pub type RequestId = usize;

pub const DEFAULT_SPEED_KMH: f64 = 50.0;
pub const DEFAULT_DETOUR_FACTOR: f64 = 1.5;
pub const DEFAULT_DUMMIES_PER_CHARGER: usize = 4;

/// Formats seconds as decimal minutes, the unit used in reports.
pub fn minutes(t: Time) -> f64 {
    t as f64 / 60.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "(Time, Time)", from = "(Time, Time)")]
pub struct TimeWindow {
    pub earliest: Time,
    pub latest: Time,
}

impl TimeWindow {
    pub const fn new(earliest: Time, latest: Time) -> Self {
        Self { earliest, latest }
    }

    pub fn is_empty(&self) -> bool {
        self.earliest > self.latest
    }

    pub fn contains(&self, t: Time) -> bool {
        self.earliest <= t && t <= self.latest
    }

    pub fn width(&self) -> Time {
        self.latest - self.earliest
    }
}

impl From<(Time, Time)> for TimeWindow {
    fn from((e, l): (Time, Time)) -> Self {
        Self::new(e, l)
    }
}

impl From<TimeWindow> for (Time, Time) {
    fn from(tw: TimeWindow) -> Self {
        (tw.earliest, tw.latest)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Point {
    pub x: i64,
    pub y: i64,
}

impl Point {
    pub const fn new(x: i64, y: i64) -> Self {
        Self { x, y }
    }

    /// Euclidean distance in metres, rounded up so that the triangle
    /// inequality survives the integer rounding.
    pub fn dist_m(&self, other: &Point) -> i64 {
        let dx = (self.x - other.x) as i128;
        let dy = (self.y - other.y) as i128;
        ceil_sqrt(dx * dx + dy * dy) as i64
    }
}

fn ceil_sqrt(v: i128) -> i128 {
    if v <= 0 {
        return 0;
    }
    let mut s = (v as f64).sqrt() as i128;
    while s * s > v {
        s -= 1;
    }
    while (s + 1) * (s + 1) <= v {
        s += 1;
    }
    if s * s == v {
        s
    } else {
        s + 1
    }
}

/// Travel time in seconds for `metres` at `speed_kmh`, rounded up.
pub fn travel_time(metres: i64, speed_kmh: f64) -> Time {
    let metres_per_hour = (speed_kmh * 1000.0).round() as i64;
    assert!(metres_per_hour > 0, "speed must be positive");
    let num = metres as i128 * 3600;
    let den = metres_per_hour as i128;
    ((num + den - 1) / den) as Time
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VertexKind {
    DepotStart,
    DepotEnd,
    Pickup,
    Dropoff,
    ChargerDummy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub id: VertexId,
    pub kind: VertexKind,
    pub coord: Point,
    pub service: Time,
    pub load: i32,
    pub tw: TimeWindow,
    #[serde(default)]
    pub is_transit_station: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub physical_charger: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// First mile: stop to station, time window on the dropoff.
    Outbound,
    /// Last mile: station to stop, time window on the pickup.
    Inbound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: RequestId,
    pub pickup: VertexId,
    pub dropoff: VertexId,
    pub passengers: u32,
    pub direction: Direction,
    pub max_ride_time: Time,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleKind {
    Electric,
    Gasoline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleType {
    pub name: String,
    pub kind: VehicleKind,
    pub capacity: u32,
    pub e_min: f64,
    pub e_max: f64,
    pub e_init: f64,
    /// Energy per km (kWh/km or l/km).
    pub beta: f64,
    /// € per kWh or € per litre.
    pub energy_price: f64,
    /// kg CO₂ per energy unit.
    pub co2_rate: f64,
    pub daily_cost: f64,
    pub overnight_charger_cost: f64,
    /// Fleet bound n_m.
    pub max_count: usize,
}

impl VehicleType {
    /// 24-seat electric minibus.
    pub fn ev_type1(initial_soc: f64) -> Self {
        Self {
            name: "type1".into(),
            kind: VehicleKind::Electric,
            capacity: 24,
            e_min: 0.0,
            e_max: 117.0,
            e_init: 117.0 * initial_soc,
            beta: 0.938,
            energy_price: 0.23,
            co2_rate: 0.0,
            daily_cost: 23.78,
            // not published; one overnight plug per EV at a nominal daily cost
            overnight_charger_cost: 1.0,
            max_count: 1000,
        }
    }

    /// 10-seat electric van.
    pub fn ev_type2(initial_soc: f64) -> Self {
        Self {
            name: "type2".into(),
            capacity: 10,
            e_max: 85.0,
            e_init: 85.0 * initial_soc,
            beta: 0.469,
            daily_cost: 11.89,
            ..Self::ev_type1(initial_soc)
        }
    }

    /// 24-seat gasoline minibus. The published consumption (0.002 l/km) and
    /// CO₂ figure (0.176) are kept as printed; `co2_rate` is chosen so that one
    /// km emits 0.176 kg.
    pub fn gasoline() -> Self {
        Self {
            name: "gv".into(),
            kind: VehicleKind::Gasoline,
            capacity: 24,
            e_min: 0.0,
            e_max: 10000.0,
            e_init: 10000.0,
            beta: 0.002,
            energy_price: 1.83,
            co2_rate: 88.0,
            daily_cost: 16.17,
            overnight_charger_cost: 0.0,
            max_count: 1000,
        }
    }

    pub fn is_electric(&self) -> bool {
        self.kind == VehicleKind::Electric
    }

    /// Energy cost in € per metre travelled.
    pub fn cost_per_m(&self) -> f64 {
        self.energy_price * self.beta / 1000.0
    }

    /// Fixed cost charged when the vehicle leaves the depot.
    pub fn fixed_cost(&self) -> f64 {
        self.daily_cost + self.overnight_charger_cost
    }

    /// kg CO₂ per metre travelled; zero for electric vehicles.
    pub fn co2_per_m(&self) -> f64 {
        match self.kind {
            VehicleKind::Electric => 0.0,
            VehicleKind::Gasoline => self.co2_rate * self.beta / 1000.0,
        }
    }

    /// Energy consumed over `metres`.
    pub fn energy_for(&self, metres: i64) -> f64 {
        self.beta * metres as f64 / 1000.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChargerType {
    pub id: usize,
    pub name: String,
    /// kW.
    pub power: f64,
    /// €/day per charger.
    pub daily_cost: f64,
}

impl ChargerType {
    pub fn rapid(id: usize) -> Self {
        Self { id, name: "rapid".into(), power: 125.0, daily_cost: 9.59 }
    }

    pub fn superfast(id: usize) -> Self {
        Self { id, name: "superfast".into(), power: 220.0, daily_cost: 19.18 }
    }

    /// 50 kW DC charger used for the synthetic benchmark instances.
    pub fn dc_fast(id: usize) -> Self {
        Self { id, name: "dc50".into(), power: 50.0, daily_cost: 9.59 }
    }

    /// kWh per minute.
    pub fn rate_per_min(&self) -> f64 {
        self.power / 60.0
    }

    pub fn energy_in(&self, seconds: Time) -> f64 {
        self.power * seconds as f64 / 3600.0
    }

    /// Shortest whole-second duration delivering at least `kwh`.
    pub fn duration_for(&self, kwh: f64) -> Time {
        if kwh <= 0.0 {
            return 0;
        }
        let mut s = (kwh * 3600.0 / self.power).ceil() as Time;
        // guard against the float division landing one second short or long
        while self.energy_in(s) < kwh {
            s += 1;
        }
        while s > 0 && self.energy_in(s - 1) >= kwh {
            s -= 1;
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteCandidate {
    pub id: usize,
    pub coord: Point,
    /// kW.
    pub power_limit: f64,
    /// f_0, €/day.
    pub opening_cost: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChargingConfig {
    pub open: Vec<bool>,
    /// `counts[w][h]`: chargers of type `h` at site `w`.
    pub counts: Vec<Vec<u32>>,
}

impl ChargingConfig {
    pub fn empty(n_sites: usize, n_types: usize) -> Self {
        Self { open: vec![false; n_sites], counts: vec![vec![0; n_types]; n_sites] }
    }

    /// One open site `site` with `count` chargers of type `ctype`.
    pub fn single(n_sites: usize, n_types: usize, site: usize, ctype: usize, count: u32) -> Self {
        let mut c = Self::empty(n_sites, n_types);
        if count > 0 {
            c.open[site] = true;
            c.counts[site][ctype] = count;
        }
        c
    }

    pub fn total_chargers(&self) -> u32 {
        self.counts.iter().flatten().sum()
    }

    /// (site, type, count) for every non-zero entry, in site/type order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, u32)> + '_ {
        self.counts.iter().enumerate().flat_map(|(w, row)| {
            row.iter().enumerate().filter(|(_, &y)| y > 0).map(move |(h, &y)| (w, h, y))
        })
    }

    pub fn label(&self) -> String {
        let parts: Vec<String> = self.entries().map(|(w, h, y)| format!("w{w}h{h}x{y}")).collect();
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalCharger {
    pub id: usize,
    pub site: usize,
    pub charger_type: usize,
    pub coord: Point,
    pub dummies: Vec<VertexId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Co2Target {
    pub pi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

impl Co2Target {
    /// Emission cap (1-π)Γ, or +∞ when no reduction is required.
    pub fn cap(&self) -> Option<f64> {
        if self.pi > 0.0 {
            self.gamma.map(|g| (1.0 - self.pi) * g)
        } else {
            Some(f64::INFINITY)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub seed: u64,
    #[serde(default)]
    pub params: serde_json::Value,
    #[serde(default = "default_speed")]
    pub speed_kmh: f64,
    #[serde(default = "default_dummies")]
    pub dummies_per_charger: usize,
}

fn default_speed() -> f64 {
    DEFAULT_SPEED_KMH
}

fn default_dummies() -> usize {
    DEFAULT_DUMMIES_PER_CHARGER
}

impl Default for Meta {
    fn default() -> Self {
        Self {
            seed: 0,
            params: serde_json::Value::Null,
            speed_kmh: DEFAULT_SPEED_KMH,
            dummies_per_charger: DEFAULT_DUMMIES_PER_CHARGER,
        }
    }
}

/// Dense square matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Copy> Matrix<T> {
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] = v;
    }

    pub fn dim(&self) -> usize {
        self.n
    }
}

/// Arc feasibility flags. Eliminated arcs may never appear in a solution.
#[derive(Clone, Debug, PartialEq)]
pub struct ArcMask {
    allowed: Matrix<bool>,
    eliminated: usize,
}

/// Distance reported for eliminated arcs, in km.
pub const SENTINEL_KM: f64 = 1.0e6;

impl ArcMask {
    pub fn all_allowed(n: usize) -> Self {
        Self { allowed: Matrix::from_fn(n, |i, j| i != j), eliminated: n }
    }

    #[inline]
    pub fn allowed(&self, i: VertexId, j: VertexId) -> bool {
        self.allowed.get(i, j)
    }

    pub fn forbid(&mut self, i: VertexId, j: VertexId) {
        if self.allowed.get(i, j) {
            self.allowed.set(i, j, false);
            self.eliminated += 1;
        }
    }

    /// Number of eliminated ordered pairs, the diagonal included.
    pub fn eliminated_count(&self) -> usize {
        self.eliminated
    }

    pub fn dim(&self) -> usize {
        self.allowed.dim()
    }
}

/// Serializable content of an instance; derived data (matrices, charger
/// list, arc mask) is rebuilt by [`Instance::from_parts`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceParts {
    pub meta: Meta,
    pub vertices: Vec<Vertex>,
    pub requests: Vec<Request>,
    pub vehicle_types: Vec<VehicleType>,
    pub sites: Vec<SiteCandidate>,
    pub charger_types: Vec<ChargerType>,
    pub charging_config: ChargingConfig,
    pub co2: Co2Target,
}

#[derive(Clone, Debug)]
pub struct Instance {
    pub meta: Meta,
    pub vertices: Vec<Vertex>,
    pub requests: Vec<Request>,
    pub vehicle_types: Vec<VehicleType>,
    pub sites: Vec<SiteCandidate>,
    pub charger_types: Vec<ChargerType>,
    pub charging_config: ChargingConfig,
    pub co2: Co2Target,
    pub chargers: Vec<PhysicalCharger>,
    dist: Matrix<i64>,
    time: Matrix<Time>,
    pub arc_mask: ArcMask,
}

/// Everything needed to lay out an instance from request coordinates.
#[derive(Clone, Debug)]
pub struct RequestSpec {
    pub pickup: Point,
    pub dropoff: Point,
    pub pickup_tw: TimeWindow,
    pub dropoff_tw: TimeWindow,
    pub passengers: u32,
    pub direction: Direction,
    pub pickup_service: Time,
    pub dropoff_service: Time,
}

#[derive(Clone, Debug)]
pub struct InstanceBuilder {
    pub meta: Meta,
    pub depot: Point,
    pub horizon: TimeWindow,
    pub detour_factor: f64,
    pub charger_service: Time,
    pub requests: Vec<RequestSpec>,
    pub vehicle_types: Vec<VehicleType>,
    pub sites: Vec<SiteCandidate>,
    pub charger_types: Vec<ChargerType>,
    pub charging_config: ChargingConfig,
    pub co2: Co2Target,
}

impl InstanceBuilder {
    pub fn new(depot: Point, horizon: TimeWindow) -> Self {
        Self {
            meta: Meta::default(),
            depot,
            horizon,
            detour_factor: DEFAULT_DETOUR_FACTOR,
            charger_service: 0,
            requests: Vec::new(),
            vehicle_types: vec![VehicleType::ev_type1(0.5), VehicleType::gasoline()],
            sites: Vec::new(),
            charger_types: Vec::new(),
            charging_config: ChargingConfig::default(),
            co2: Co2Target { pi: 0.0, gamma: None },
        }
    }

    pub fn build(self) -> Result<Instance, ModelError> {
        let n = self.requests.len();
        let speed = self.meta.speed_kmh;
        let mut vertices = Vec::with_capacity(2 * n + 2);
        vertices.push(Vertex {
            id: 0,
            kind: VertexKind::DepotStart,
            coord: self.depot,
            service: 0,
            load: 0,
            tw: self.horizon,
            is_transit_station: false,
            physical_charger: None,
        });
        for (r, spec) in self.requests.iter().enumerate() {
            vertices.push(Vertex {
                id: r + 1,
                kind: VertexKind::Pickup,
                coord: spec.pickup,
                service: spec.pickup_service,
                load: spec.passengers as i32,
                tw: spec.pickup_tw,
                is_transit_station: spec.direction == Direction::Inbound,
                physical_charger: None,
            });
        }
        for (r, spec) in self.requests.iter().enumerate() {
            vertices.push(Vertex {
                id: n + r + 1,
                kind: VertexKind::Dropoff,
                coord: spec.dropoff,
                service: spec.dropoff_service,
                load: -(spec.passengers as i32),
                tw: spec.dropoff_tw,
                is_transit_station: spec.direction == Direction::Outbound,
                physical_charger: None,
            });
        }
        let requests = self
            .requests
            .iter()
            .enumerate()
            .map(|(r, spec)| {
                let direct = travel_time(spec.pickup.dist_m(&spec.dropoff), speed);
                Request {
                    id: r,
                    pickup: r + 1,
                    dropoff: n + r + 1,
                    passengers: spec.passengers,
                    direction: spec.direction,
                    max_ride_time: max_ride_time(direct, self.detour_factor),
                }
            })
            .collect();
        let mut parts = InstanceParts {
            meta: self.meta,
            vertices,
            requests,
            vehicle_types: self.vehicle_types,
            sites: self.sites,
            charger_types: self.charger_types,
            charging_config: self.charging_config,
            co2: self.co2,
        };
        let end = Vertex { id: 0, kind: VertexKind::DepotEnd, ..parts.vertices[0].clone() };
        append_charger_section(&mut parts, end, self.charger_service);
        Instance::from_parts(parts)
    }
}

/// L_i from a direct ride time and a detour factor.
pub fn max_ride_time(direct: Time, detour_factor: f64) -> Time {
    (direct as f64 * detour_factor).round() as Time
}

fn physical_chargers(parts: &InstanceParts) -> Vec<(usize, usize, Point)> {
    let mut out = Vec::new();
    for (w, h, y) in parts.charging_config.entries() {
        let coord = parts.sites.get(w).map(|s| s.coord).unwrap_or(Point::new(0, 0));
        for _ in 0..y {
            out.push((w, h, coord));
        }
    }
    out
}

/// Appends charger dummies and the end depot after the request vertices.
fn append_charger_section(parts: &mut InstanceParts, depot_end: Vertex, charger_service: Time) {
    let horizon = depot_end.tw;
    let per = parts.meta.dummies_per_charger;
    for (c, (_, _, coord)) in physical_chargers(parts).into_iter().enumerate() {
        for _ in 0..per {
            let id = parts.vertices.len();
            parts.vertices.push(Vertex {
                id,
                kind: VertexKind::ChargerDummy,
                coord,
                service: charger_service,
                load: 0,
                tw: horizon,
                is_transit_station: false,
                physical_charger: Some(c),
            });
        }
    }
    let id = parts.vertices.len();
    parts.vertices.push(Vertex { id, ..depot_end });
}

impl Instance {
    pub fn from_parts(parts: InstanceParts) -> Result<Self, ModelError> {
        check_layout(&parts)?;
        let speed = parts.meta.speed_kmh;
        let nv = parts.vertices.len();
        let dist = Matrix::from_fn(nv, |i, j| parts.vertices[i].coord.dist_m(&parts.vertices[j].coord));
        let time = Matrix::from_fn(nv, |i, j| travel_time(dist.get(i, j), speed));
        let mut chargers: Vec<PhysicalCharger> = physical_chargers(&parts)
            .into_iter()
            .enumerate()
            .map(|(id, (site, charger_type, coord))| PhysicalCharger {
                id,
                site,
                charger_type,
                coord,
                dummies: Vec::new(),
            })
            .collect();
        for v in &parts.vertices {
            if let (VertexKind::ChargerDummy, Some(c)) = (v.kind, v.physical_charger) {
                if let Some(ch) = chargers.get_mut(c) {
                    ch.dummies.push(v.id);
                }
            }
        }
        let mut inst = Self {
            meta: parts.meta,
            vertices: parts.vertices,
            requests: parts.requests,
            vehicle_types: parts.vehicle_types,
            sites: parts.sites,
            charger_types: parts.charger_types,
            charging_config: parts.charging_config,
            co2: parts.co2,
            chargers,
            dist,
            time,
            arc_mask: ArcMask::all_allowed(nv),
        };
        inst.arc_mask = structural_mask(&inst);
        Ok(inst)
    }

    pub fn to_parts(&self) -> InstanceParts {
        InstanceParts {
            meta: self.meta.clone(),
            vertices: self.vertices.clone(),
            requests: self.requests.clone(),
            vehicle_types: self.vehicle_types.clone(),
            sites: self.sites.clone(),
            charger_types: self.charger_types.clone(),
            charging_config: self.charging_config.clone(),
            co2: self.co2,
        }
    }

    /// Same requests under another charging configuration. The arc mask is
    /// reset to structural eliminations; rerun preprocessing afterwards.
    pub fn with_charging_config(&self, config: ChargingConfig) -> Result<Self, ModelError> {
        let n = self.n_requests();
        let end = self.vertices[self.depot_end()].clone();
        let charger_service = self.chargers_service();
        let mut parts = self.to_parts();
        parts.vertices.truncate(2 * n + 1);
        parts.charging_config = config;
        append_charger_section(&mut parts, end, charger_service);
        Self::from_parts(parts)
    }

    fn chargers_service(&self) -> Time {
        self.vertices
            .iter()
            .find(|v| v.kind == VertexKind::ChargerDummy)
            .map(|v| v.service)
            .unwrap_or(0)
    }

    /// Replaces the vehicle types, keeping everything else.
    pub fn with_vehicle_types(&self, types: Vec<VehicleType>) -> Self {
        let mut inst = self.clone();
        inst.vehicle_types = types;
        inst
    }

    #[inline]
    pub fn n_requests(&self) -> usize {
        self.requests.len()
    }

    #[inline]
    pub fn depot_start(&self) -> VertexId {
        0
    }

    #[inline]
    pub fn depot_end(&self) -> VertexId {
        self.vertices.len() - 1
    }

    #[inline]
    pub fn pickup(&self, r: RequestId) -> VertexId {
        r + 1
    }

    #[inline]
    pub fn dropoff(&self, r: RequestId) -> VertexId {
        self.n_requests() + r + 1
    }

    #[inline]
    pub fn is_pickup(&self, v: VertexId) -> bool {
        v >= 1 && v <= self.n_requests()
    }

    #[inline]
    pub fn is_dropoff(&self, v: VertexId) -> bool {
        let n = self.n_requests();
        v > n && v <= 2 * n
    }

    #[inline]
    pub fn is_charger(&self, v: VertexId) -> bool {
        v > 2 * self.n_requests() && v < self.depot_end()
    }

    /// Request served at a pickup or dropoff vertex.
    #[inline]
    pub fn request_of(&self, v: VertexId) -> Option<RequestId> {
        let n = self.n_requests();
        if v >= 1 && v <= n {
            Some(v - 1)
        } else if v > n && v <= 2 * n {
            Some(v - n - 1)
        } else {
            None
        }
    }

    #[inline]
    pub fn dist_m(&self, i: VertexId, j: VertexId) -> i64 {
        self.dist.get(i, j)
    }

    #[inline]
    pub fn time(&self, i: VertexId, j: VertexId) -> Time {
        self.time.get(i, j)
    }

    /// Arc length in km, or the sentinel for eliminated arcs.
    pub fn arc_km(&self, i: VertexId, j: VertexId) -> f64 {
        if self.arc_mask.allowed(i, j) {
            self.dist.get(i, j) as f64 / 1000.0
        } else {
            SENTINEL_KM
        }
    }

    #[inline]
    pub fn arc_allowed(&self, i: VertexId, j: VertexId) -> bool {
        self.arc_mask.allowed(i, j)
    }

    pub fn horizon(&self) -> TimeWindow {
        self.vertices[0].tw
    }

    pub fn direct_ride_time(&self, r: RequestId) -> Time {
        let req = &self.requests[r];
        self.time(req.pickup, req.dropoff)
    }

    pub fn electric_type(&self) -> Option<usize> {
        self.vehicle_types.iter().position(|v| v.is_electric())
    }

    pub fn gasoline_type(&self) -> Option<usize> {
        self.vehicle_types.iter().position(|v| !v.is_electric())
    }

    /// Number of electric vehicle types (the unused symbol `b`).
    pub fn n_electric_types(&self) -> usize {
        self.vehicle_types.iter().filter(|v| v.is_electric()).count()
    }

    pub fn charger_type_of(&self, charger: usize) -> &ChargerType {
        &self.charger_types[self.chargers[charger].charger_type]
    }

    /// First dummy vertex of a physical charger; all dummies share coordinates.
    pub fn charger_vertex(&self, charger: usize) -> VertexId {
        self.chargers[charger].dummies[0]
    }

    /// Tight big-M values (M_1, M_2, M_3) for the MILP.
    pub fn big_ms(&self) -> (f64, f64, f64) {
        let max_cap = self.vehicle_types.iter().map(|v| v.capacity).max().unwrap_or(0) as f64;
        let max_q = self.vertices.iter().map(|v| v.load.abs()).max().unwrap_or(0) as f64;
        let h = self.horizon();
        let max_service = self.vertices.iter().map(|v| v.service).max().unwrap_or(0);
        let tau_bound = self
            .chargers
            .iter()
            .map(|c| {
                let ct = &self.charger_types[c.charger_type];
                let emax = self
                    .vehicle_types
                    .iter()
                    .filter(|v| v.is_electric())
                    .map(|v| v.e_max)
                    .fold(0.0, f64::max);
                ct.duration_for(emax)
            })
            .max()
            .unwrap_or(0);
        let max_t = (0..self.vertices.len())
            .flat_map(|i| (0..self.vertices.len()).map(move |j| (i, j)))
            .map(|(i, j)| self.time(i, j))
            .max()
            .unwrap_or(0);
        let m2 = (h.latest + max_service + tau_bound + max_t) as f64;
        let max_m = (0..self.vertices.len())
            .flat_map(|i| (0..self.vertices.len()).map(move |j| (i, j)))
            .map(|(i, j)| self.dist_m(i, j))
            .max()
            .unwrap_or(0);
        // SOC differences span [E_min, E_max] plus one arc of consumption
        let m3 = self
            .vehicle_types
            .iter()
            .filter(|v| v.is_electric())
            .map(|v| v.e_max - v.e_min + v.energy_for(max_m))
            .fold(0.0, f64::max);
        (max_cap + max_q, m2, m3)
    }
}

fn check_layout(parts: &InstanceParts) -> Result<(), ModelError> {
    let n = parts.requests.len();
    let nv = parts.vertices.len();
    if nv < 2 * n + 2 {
        return Err(ModelError::Layout(format!("{nv} vertices cannot hold {n} requests")));
    }
    for (i, v) in parts.vertices.iter().enumerate() {
        if v.id != i {
            return Err(ModelError::Layout(format!("vertex at index {i} carries id {}", v.id)));
        }
    }
    let expect = |i: usize, k: VertexKind| -> Result<(), ModelError> {
        if parts.vertices[i].kind != k {
            Err(ModelError::Layout(format!("vertex {i} should be {k:?}")))
        } else {
            Ok(())
        }
    };
    expect(0, VertexKind::DepotStart)?;
    expect(nv - 1, VertexKind::DepotEnd)?;
    for r in 0..n {
        expect(r + 1, VertexKind::Pickup)?;
        expect(n + r + 1, VertexKind::Dropoff)?;
    }
    for i in 2 * n + 1..nv - 1 {
        expect(i, VertexKind::ChargerDummy)?;
    }
    for (r, req) in parts.requests.iter().enumerate() {
        if req.id != r || req.pickup != r + 1 || req.dropoff != n + r + 1 {
            return Err(ModelError::Layout(format!("request {r} is not wired to vertices ({}, {})", r + 1, n + r + 1)));
        }
    }
    let n_sites = parts.sites.len();
    let n_types = parts.charger_types.len();
    let cfg = &parts.charging_config;
    if cfg.open.len() != n_sites || cfg.counts.len() != n_sites || cfg.counts.iter().any(|r| r.len() != n_types) {
        return Err(ModelError::Layout("charging config does not match sites × charger types".into()));
    }
    if parts.meta.speed_kmh <= 0.0 {
        return Err(ModelError::Layout("speed must be positive".into()));
    }
    Ok(())
}

/// Eliminations that hold for every instance: nothing enters the start
/// depot or leaves the end depot, no dropoff-to-own-pickup, no start-to-dropoff,
/// no pickup-to-end, no charger-to-charger and no charger-to-dropoff.
fn structural_mask(inst: &Instance) -> ArcMask {
    let nv = inst.vertices.len();
    let mut mask = ArcMask::all_allowed(nv);
    let start = inst.depot_start();
    let end = inst.depot_end();
    for v in 0..nv {
        mask.forbid(v, start);
        mask.forbid(end, v);
    }
    for r in 0..inst.n_requests() {
        let p = inst.pickup(r);
        let d = inst.dropoff(r);
        mask.forbid(d, p);
        mask.forbid(start, d);
        mask.forbid(p, end);
    }
    let chargers: Vec<VertexId> = (0..nv).filter(|&v| inst.is_charger(v)).collect();
    for &a in &chargers {
        for &b in &chargers {
            mask.forbid(a, b);
        }
        // after charging the vehicle heads to a pickup or back to the depot
        for r in 0..inst.n_requests() {
            mask.forbid(a, inst.dropoff(r));
        }
    }
    mask
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    TimeWindowInverted,
    LoadSign,
    PairingBroken,
    TransitStation,
    ChargerWiring,
    ConfigClosedSite,
    ConfigHeterogeneous,
    PowerLimitExceeded,
    VehicleEnergy,
    VehicleCost,
    ChargerPower,
    ScenarioProbability,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Finding {
    pub kind: FindingKind,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.message)
    }
}

/// Lists violated structural invariants; an empty list means valid.
pub fn validate_instance(inst: &Instance) -> Vec<Finding> {
    let mut out = Vec::new();
    let mut push = |kind, message: String| out.push(Finding { kind, message });
    for v in &inst.vertices {
        if v.tw.is_empty() {
            push(FindingKind::TimeWindowInverted, format!("vertex {} has window [{}, {}]", v.id, v.tw.earliest, v.tw.latest));
        }
        let ok = match v.kind {
            VertexKind::Pickup => v.load > 0,
            VertexKind::Dropoff => v.load < 0,
            _ => v.load == 0,
        };
        if !ok {
            push(FindingKind::LoadSign, format!("vertex {} ({:?}) has load {}", v.id, v.kind, v.load));
        }
        if v.service < 0 {
            push(FindingKind::LoadSign, format!("vertex {} has negative service time", v.id));
        }
    }
    for req in &inst.requests {
        let p = &inst.vertices[req.pickup];
        let d = &inst.vertices[req.dropoff];
        if p.load != req.passengers as i32 || d.load != -(req.passengers as i32) || !(1..=4).contains(&req.passengers) {
            push(FindingKind::PairingBroken, format!("request {} loads do not match {} passengers", req.id, req.passengers));
        }
        if p.is_transit_station == d.is_transit_station {
            push(FindingKind::TransitStation, format!("request {} must have exactly one transit-station end", req.id));
        }
        if req.max_ride_time < inst.direct_ride_time(req.id) {
            push(FindingKind::PairingBroken, format!("request {} max ride time below direct ride time", req.id));
        }
    }
    let per = inst.meta.dummies_per_charger;
    let expected_dummies = inst.charging_config.total_chargers() as usize * per;
    let actual_dummies = inst.vertices.iter().filter(|v| v.kind == VertexKind::ChargerDummy).count();
    if expected_dummies != actual_dummies {
        push(FindingKind::ChargerWiring, format!("{actual_dummies} charger dummies, config needs {expected_dummies}"));
    }
    for c in &inst.chargers {
        if c.dummies.len() != per {
            push(FindingKind::ChargerWiring, format!("charger {} has {} dummies, expected {per}", c.id, c.dummies.len()));
        }
        for &d in &c.dummies {
            if inst.vertices[d].coord != c.coord {
                push(FindingKind::ChargerWiring, format!("dummy {d} not at charger {} location", c.id));
            }
        }
    }
    for v in inst.vertices.iter().filter(|v| v.kind == VertexKind::ChargerDummy) {
        if v.physical_charger.map_or(true, |c| c >= inst.chargers.len()) {
            push(FindingKind::ChargerWiring, format!("dummy {} points to no charger", v.id));
        }
    }
    out.extend(validate_config(&inst.charging_config, &inst.sites, &inst.charger_types));
    for vt in &inst.vehicle_types {
        if vt.is_electric() && !(vt.e_min <= vt.e_init && vt.e_init <= vt.e_max) {
            out.push(Finding { kind: FindingKind::VehicleEnergy, message: format!("{}: e_min ≤ e_init ≤ e_max violated", vt.name) });
        }
        if vt.beta <= 0.0 {
            out.push(Finding { kind: FindingKind::VehicleEnergy, message: format!("{}: beta must be positive", vt.name) });
        }
        if (vt.overnight_charger_cost == 0.0) != (vt.kind == VehicleKind::Gasoline) {
            out.push(Finding { kind: FindingKind::VehicleCost, message: format!("{}: overnight charger cost must be zero exactly for gasoline vehicles", vt.name) });
        }
    }
    for ct in &inst.charger_types {
        if ct.power <= 0.0 {
            out.push(Finding { kind: FindingKind::ChargerPower, message: format!("charger type {} has non-positive power", ct.name) });
        }
    }
    out
}

/// Site-opening, homogeneity and power-limit checks for one configuration.
pub fn validate_config(cfg: &ChargingConfig, sites: &[SiteCandidate], types: &[ChargerType]) -> Vec<Finding> {
    let mut out = Vec::new();
    for (w, row) in cfg.counts.iter().enumerate() {
        let total: u32 = row.iter().sum();
        if total > 0 && !cfg.open.get(w).copied().unwrap_or(false) {
            out.push(Finding { kind: FindingKind::ConfigClosedSite, message: format!("site {w} has chargers but is closed") });
        }
        if row.iter().filter(|&&y| y > 0).count() > 1 {
            out.push(Finding { kind: FindingKind::ConfigHeterogeneous, message: format!("site {w} mixes charger types") });
        }
        let power: f64 = row.iter().zip(types).map(|(&y, t)| y as f64 * t.power).sum();
        if let Some(site) = sites.get(w) {
            if power > site.power_limit + 1e-9 {
                out.push(Finding {
                    kind: FindingKind::PowerLimitExceeded,
                    message: format!("site {w} draws {power} kW over its {} kW limit", site.power_limit),
                });
            }
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub id: usize,
    pub probability: f64,
    pub instance: Instance,
}

pub fn validate_scenarios(scenarios: &[Scenario]) -> Vec<Finding> {
    let total: f64 = scenarios.iter().map(|s| s.probability).sum();
    if (total - 1.0).abs() > 1e-9 {
        vec![Finding { kind: FindingKind::ScenarioProbability, message: format!("scenario probabilities sum to {total}") }]
    } else {
        Vec::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_request(dist_m: i64) -> Instance {
        let mut b = InstanceBuilder::new(Point::new(0, 0), TimeWindow::new(0, 86_400));
        b.requests.push(RequestSpec {
            pickup: Point::new(dist_m, 0),
            dropoff: Point::new(0, 0),
            pickup_tw: TimeWindow::new(0, 86_400),
            dropoff_tw: TimeWindow::new(8 * 3600, 9 * 3600),
            passengers: 2,
            direction: Direction::Outbound,
            pickup_service: 30,
            dropoff_service: 0,
        });
        b.build().unwrap()
    }

    #[test]
    fn well_formed_instance_has_empty_report() {
        let inst = one_request(3000);
        assert!(validate_instance(&inst).is_empty(), "{:?}", validate_instance(&inst));
    }

    #[test]
    fn inverted_window_is_reported_once() {
        let mut inst = one_request(3000);
        inst.vertices[1].tw = TimeWindow::new(100, 50);
        let report = validate_instance(&inst);
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].kind, FindingKind::TimeWindowInverted);
        assert_eq!(report, validate_instance(&inst));
    }

    #[test]
    fn power_limit_caps_rapid_chargers() {
        let sites = vec![SiteCandidate { id: 0, coord: Point::new(0, 0), power_limit: 250.0, opening_cost: 4.11 }];
        let types = vec![ChargerType::rapid(0)];
        let cfg = ChargingConfig::single(1, 1, 0, 0, 3);
        let f = validate_config(&cfg, &sites, &types);
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].kind, FindingKind::PowerLimitExceeded);
        assert!(validate_config(&ChargingConfig::single(1, 1, 0, 0, 2), &sites, &types).is_empty());
    }

    #[test]
    fn direct_ride_time_at_fifty_kmh() {
        let inst = one_request(10_000);
        assert_eq!(inst.direct_ride_time(0), 12 * 60);
        assert_eq!(inst.requests[0].max_ride_time, 18 * 60);
        let inst = one_request(5_000);
        assert_eq!(inst.direct_ride_time(0), 6 * 60);
        assert_eq!(inst.requests[0].max_ride_time, 9 * 60);
        let inst = one_request(0);
        assert_eq!(inst.direct_ride_time(0), 0);
    }

    #[test]
    fn ceil_sqrt_is_exact() {
        assert_eq!(ceil_sqrt(0), 0);
        assert_eq!(ceil_sqrt(1), 1);
        assert_eq!(ceil_sqrt(2), 2);
        assert_eq!(ceil_sqrt(9), 3);
        assert_eq!(ceil_sqrt(10), 4);
        assert_eq!(Point::new(0, 0).dist_m(&Point::new(3000, 4000)), 5000);
    }

    #[test]
    fn charger_duration_is_minimal() {
        let ct = ChargerType::rapid(0);
        let s = ct.duration_for(7.16);
        assert!(ct.energy_in(s) >= 7.16);
        assert!(ct.energy_in(s - 1) < 7.16);
        // 7.16 kWh at 125 kW is about 3.44 minutes
        assert!((minutes(s) - 3.4368).abs() < 0.02);
    }

    #[test]
    fn config_change_rebuilds_dummies() {
        let inst = one_request(3000);
        let mut parts = inst.to_parts();
        parts.sites.push(SiteCandidate { id: 0, coord: Point::new(0, 0), power_limit: 1000.0, opening_cost: 4.11 });
        parts.charger_types.push(ChargerType::rapid(0));
        parts.charging_config = ChargingConfig::empty(1, 1);
        let inst = Instance::from_parts(parts).unwrap();
        let with = inst.with_charging_config(ChargingConfig::single(1, 1, 0, 0, 2)).unwrap();
        assert_eq!(with.chargers.len(), 2);
        assert_eq!(with.vertices.len(), 2 + 2 + 2 * DEFAULT_DUMMIES_PER_CHARGER);
        assert!(validate_instance(&with).is_empty(), "{:?}", validate_instance(&with));
        assert!(with.is_charger(with.charger_vertex(1)));
    }
}
