use feeder_core::charging::*;
use feeder_core::instancegen::Infrastructure;
use feeder_core::milpexport::validate_solution;
use feeder_core::routesched::*;
use feeder_core::*;

/// Requests from `(x, 0)` to the depot; all share the same windows.
fn out_and_back(xs: &[i64], soc: f64) -> Instance {
    let mut b = InstanceBuilder::new(Point::new(0, 0), TimeWindow::new(0, 20_000));
    let infra = Infrastructure::rapid(1);
    b.sites = infra.sites;
    b.charger_types = infra.charger_types;
    b.charging_config = infra.config;
    b.vehicle_types = vec![VehicleType::ev_type1(soc), VehicleType::gasoline()];
    b.detour_factor = 3.0;
    for &x in xs {
        b.requests.push(RequestSpec {
            pickup: Point::new(x, 0),
            dropoff: Point::new(0, 0),
            pickup_tw: TimeWindow::new(5000, 6000),
            dropoff_tw: TimeWindow::new(0, 20_000),
            passengers: 1,
            direction: Direction::Outbound,
            pickup_service: 0,
            dropoff_service: 0,
        });
    }
    b.build().unwrap()
}

fn trip(inst: &Instance, r: RequestId) -> Vec<Stop> {
    vec![Stop::visit(inst.pickup(r)), Stop::visit(inst.dropoff(r))]
}

#[test]
fn half_charge_falls_short_on_70_km() {
    let inst = out_and_back(&[35_000], 0.5);
    let prof = propagate_soc(&inst, &inst.vehicle_types[0], &trip(&inst, 0));
    assert!(!prof.is_feasible());
    assert!((prof.deficit - 7.16).abs() < 1e-9, "{}", prof.deficit);
    assert!((prof.arrival[0] - 58.5).abs() < 1e-12);
}

#[test]
fn full_battery_covers_100_km() {
    let inst = out_and_back(&[50_000], 1.0);
    let prof = propagate_soc(&inst, &inst.vehicle_types[0], &trip(&inst, 0));
    assert!(prof.is_feasible());
    assert!((prof.arrival.last().unwrap() - 23.2).abs() < 1e-9);
}

#[test]
fn zero_length_route_keeps_initial_soc() {
    let inst = out_and_back(&[0], 0.5);
    let prof = propagate_soc(&inst, &inst.vehicle_types[0], &trip(&inst, 0));
    assert!(prof.arrival.iter().all(|&e| (e - 58.5).abs() < 1e-12));
}

#[test]
fn partial_recharge_covers_the_deficit_only() {
    let inst = out_and_back(&[35_000], 0.5);
    let stops = schedule_charging(&inst, 0, &trip(&inst, 0), None, &ChargingParams::default()).unwrap();
    let ops: Vec<ChargeOp> = stops.iter().filter_map(|s| s.charge).collect();
    assert_eq!(ops.len(), 1);
    // 7.16 kWh at 125 kW is 206.2 s
    assert_eq!(ops[0].duration, 207);
    let route = Route::new(&inst, 0, stops);
    assert!(route.is_energy_feasible() && route.is_time_feasible());
    let gv = schedule_charging(&inst, 1, &trip(&inst, 0), None, &ChargingParams::default());
    assert!(gv.is_none());
}

#[test]
fn occupancy_rejects_overlaps() {
    let inst = out_and_back(&[1000], 0.5);
    let mut occ = ChargerOccupancy::new(&inst);
    assert!(occ.add(0, 100, 200, 0));
    assert!(occ.overlaps(0, 150, 160));
    assert!(!occ.overlaps(0, 200, 300));
    assert!(!occ.add(0, 199, 250, 1));
    assert_eq!(occ.free_gaps(0, TimeWindow::new(0, 1000)), vec![(0, 100), (200, 1000)]);
    occ.remove_vehicle(0);
    assert!(!occ.overlaps(0, 150, 160));
}

fn two_charging_routes(respect: bool) -> (Instance, Solution) {
    let inst = out_and_back(&[35_000, 35_000], 0.5);
    let cfg = ChargingParams::default();
    let a = finalize_route(&inst, 0, trip(&inst, 0), None, &cfg);
    let mut occ = ChargerOccupancy::new(&inst);
    occ.add_route(&a, 0);
    let b = finalize_route(&inst, 0, trip(&inst, 1), respect.then_some(&occ), &cfg);
    let mut sol = Solution { routes: vec![a, b], unserved: Vec::new(), placement: Vec::new() };
    sol.reindex(&inst);
    (inst, sol)
}

#[test]
fn simultaneous_charges_conflict() {
    let (inst, sol) = two_charging_routes(false);
    assert!(sol.routes.iter().all(|r| r.has_charges()));
    let conflicts = detect_conflicts(&sol, &inst);
    assert_eq!(conflicts.len(), 1);
    assert_eq!(conflicts[0].kind, ConflictKind::Overlap);
    assert!(!no_charging_conflict(&sol, &inst));
    let report = validate_solution(&dump_solution(&sol, &inst), &inst, 0.0, None).unwrap();
    let bad = report.violated(1e-6);
    assert!(bad.contains(&"eq31"), "{bad:?}");
    assert!(bad.iter().all(|&f| f == "eq30" || f == "eq31"), "{bad:?}");
}

#[test]
fn occupancy_aware_charge_is_conflict_free() {
    let (inst, sol) = two_charging_routes(true);
    assert!(sol.routes.iter().all(|r| r.has_charges() && r.is_energy_feasible()));
    assert!(no_charging_conflict(&sol, &inst));
    let report = validate_solution(&dump_solution(&sol, &inst), &inst, 0.0, None).unwrap();
    assert!(report.is_feasible(1e-6), "{:?}", report.violated(1e-6));
}

#[test]
fn more_charges_than_dummies_overflow() {
    let inst = out_and_back(&[35_000; 5], 0.5);
    let mut sol = Solution { routes: Vec::new(), unserved: Vec::new(), placement: Vec::new() };
    for r in 0..5 {
        // disjoint 207 s charges at the depot before each departure
        let t = 300 * r as Time;
        let op = ChargeOp { charger: 0, duration: 207, window: TimeWindow::new(t, t) };
        let mut stops = vec![Stop::charging(&inst, op)];
        stops.extend(trip(&inst, r));
        let route = Route::new(&inst, 0, stops);
        assert!(route.is_time_feasible() && route.is_energy_feasible());
        sol.routes.push(route);
    }
    sol.reindex(&inst);
    let kinds: Vec<ConflictKind> = detect_conflicts(&sol, &inst).iter().map(|c| c.kind).collect();
    assert_eq!(kinds, vec![ConflictKind::DummyOverflow]);
}
