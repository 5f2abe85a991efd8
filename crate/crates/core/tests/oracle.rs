mod common;

use common::*;
use feeder_core::instancegen::Infrastructure;
use feeder_core::oracle::*;
use feeder_core::search::is_acceptable_best;
use feeder_core::*;

fn far_request(types: Vec<VehicleType>, x: i64) -> Instance {
    let mut b = InstanceBuilder::new(Point::new(0, 0), TimeWindow::new(0, 20_000));
    let infra = Infrastructure::rapid(1);
    b.sites = infra.sites;
    b.charger_types = infra.charger_types;
    b.charging_config = infra.config;
    b.vehicle_types = types;
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
    b.build().unwrap()
}

#[test]
fn single_gasoline_trip() {
    let inst = far_request(vec![VehicleType::gasoline()], 35_000);
    let res = exact_solve(&inst, f64::INFINITY).unwrap();
    assert!((res.cost - 16.4262).abs() < 1e-9);
    assert!((res.co2 - 12.32).abs() < 1e-9);
    assert!((exact_reference_emission(&inst).unwrap() - 12.32).abs() < 1e-9);
}

#[test]
fn zero_cap_forces_electric_with_charging() {
    let inst = far_request(vec![VehicleType::ev_type1(0.5), VehicleType::gasoline()], 35_000);
    let res = exact_solve(&inst, 0.0).unwrap();
    let sol = res.solution.unwrap();
    assert_eq!(res.co2, 0.0);
    assert_eq!(sol.routes.len(), 1);
    assert!(sol.routes[0].has_charges());
    assert!(is_acceptable_best(&sol, &inst, 0.0));
    // 23.78 + 1 fixed, 0.23 €/kWh × 65.66 kWh
    assert!((res.cost - (24.78 + 0.23 * 65.66)).abs() < 1e-9, "{}", res.cost);
}

#[test]
fn cap_without_electric_fleet_is_infeasible() {
    let inst = far_request(vec![VehicleType::gasoline()], 35_000);
    let res = exact_solve(&inst, 1.0).unwrap();
    assert!(res.solution.is_none());
    assert!(res.cost.is_infinite());
}

#[test]
fn size_guard() {
    let inst = gv_only(MAX_REQUESTS + 1, 3);
    assert!(matches!(exact_solve(&inst, f64::INFINITY), Err(OracleError::TooLarge(_))));
    let empty = gv_only(0, 3);
    assert_eq!(exact_solve(&empty, f64::INFINITY).unwrap().cost, 0.0);
}

#[test]
fn oracle_bounds_the_heuristic() {
    for seed in 0..8 {
        let inst = mixed(3, 200 + seed, 0.5);
        let cap = 0.5 * exact_reference_emission(&inst).unwrap();
        let ex = exact_solve(&inst, cap).unwrap();
        let sol = ex.solution.as_ref().unwrap();
        assert!(is_acceptable_best(sol, &inst, cap));
        assert!((sol.cost() - ex.cost).abs() < 1e-9);
        let da = best_of(&inst, cap, &small_params(2000), 2).unwrap();
        assert!(ex.cost <= da + 1e-9, "seed {seed}: oracle {} above search {da}", ex.cost);
    }
}
