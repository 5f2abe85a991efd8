mod common;

use common::*;
use feeder_core::routesched::*;
use feeder_core::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn one_request(pickup_tw: TimeWindow, dropoff_tw: TimeWindow, detour: f64) -> Instance {
    let mut b = InstanceBuilder::new(Point::new(0, 0), TimeWindow::new(0, 10_000));
    b.detour_factor = detour;
    b.requests.push(RequestSpec {
        pickup: Point::new(3000, 4000),
        dropoff: Point::new(0, 0),
        pickup_tw,
        dropoff_tw,
        passengers: 2,
        direction: Direction::Outbound,
        pickup_service: 30,
        dropoff_service: 0,
    });
    b.build().unwrap()
}

#[test]
fn single_request_schedule_by_hand() {
    // 5 km at 50 km/h is 360 s each way.
    let inst = one_request(TimeWindow::new(1000, 2000), TimeWindow::new(0, 10_000), 1.5);
    let stops = [Stop::visit(1), Stop::visit(2)];
    let res = evaluate_stops(&inst, 24, &stops);
    assert!(res.feasible);
    assert_eq!(res.begin[1], 1000);
    assert_eq!(res.begin[2], 1000 + 30 + 360);
    assert_eq!(res.ride_times, vec![(0, 360)]);
    // the departure is delayed to avoid waiting at the pickup
    assert_eq!(res.begin[0], 1000 - 360);
}

#[test]
fn dropoff_deadline_and_ride_limit() {
    let late = one_request(TimeWindow::new(1000, 2000), TimeWindow::new(0, 1300), 1.5);
    assert_eq!(evaluate_stops(&late, 24, &[Stop::visit(1), Stop::visit(2)]).violation, Violation::TimeWindow);
    let inst = one_request(TimeWindow::new(1000, 1200), TimeWindow::new(2000, 2100), 1.5);
    // waiting for the dropoff window stretches the ride beyond 540 s
    assert_eq!(evaluate_stops(&inst, 24, &[Stop::visit(1), Stop::visit(2)]).violation, Violation::RideTime);
}

#[test]
fn structure_and_load_violations() {
    let inst = one_request(TimeWindow::new(0, 10_000), TimeWindow::new(0, 10_000), 1.5);
    assert_eq!(evaluate_stops(&inst, 24, &[Stop::visit(2), Stop::visit(1)]).violation, Violation::Structure);
    assert_eq!(evaluate_stops(&inst, 24, &[Stop::visit(1)]).violation, Violation::Structure);
    assert_eq!(evaluate_stops(&inst, 1, &[Stop::visit(1), Stop::visit(2)]).violation, Violation::Load);
}

fn check(seed: u64) -> Result<(), TestCaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 1 + (seed % 4) as usize;
    let inst = random_instance(&mut rng, n);
    let stops = random_route(&mut rng, &inst);
    let cap = inst.vehicle_types[0].capacity;
    let res = evaluate_stops(&inst, cap, &stops);
    prop_assert_eq!(res.feasible, oracle_feasible(&inst, cap, &stops), "stops {:?}", stops);
    if res.feasible {
        prop_assert!(schedule_satisfies(&inst, &stops, &res.begin));
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn verdict_matches_difference_oracle(seed in any::<u64>()) {
        check(seed)?;
    }
}

#[test]
fn oracle_agrees_on_feasible_and_infeasible_mix() {
    let (mut yes, mut no) = (0, 0);
    for seed in 0..3000 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, 3);
        let stops = random_route(&mut rng, &inst);
        let cap = inst.vehicle_types[0].capacity;
        let verdict = oracle_feasible(&inst, cap, &stops);
        assert_eq!(evaluate_stops(&inst, cap, &stops).feasible, verdict, "seed {seed}");
        if verdict {
            yes += 1;
        } else {
            no += 1;
        }
    }
    // the generator must exercise both outcomes
    assert!(yes > 300 && no > 300, "{yes} feasible, {no} infeasible");
}

