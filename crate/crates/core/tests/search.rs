mod common;

use common::*;
use feeder_core::instancegen::Infrastructure;
use feeder_core::routesched::*;
use feeder_core::search::ops::best_triple_permutation;
use feeder_core::search::*;
use feeder_core::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dist(inst: &Instance, stops: &[Stop]) -> i64 {
    let mut path = vec![inst.depot_start()];
    path.extend(stops.iter().map(|s| s.vertex));
    path.push(inst.depot_end());
    path.windows(2).map(|w| inst.dist_m(w[0], w[1])).sum()
}

#[test]
fn triple_permutation_matches_brute_force() {
    let p = SearchParams::default();
    let mut checked = 0;
    for seed in 0..12_000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, 4);
        let stops: Vec<Stop> = random_route(&mut rng, &inst).into_iter().filter(|s| !s.is_charge()).collect();
        let cap = inst.vehicle_types[0].capacity;
        if stops.len() < 3 || !oracle_feasible(&inst, cap, &stops) {
            continue;
        }
        let ctx = Ctx::new(&inst, &p, f64::INFINITY);
        for i in 0..=stops.len() - 3 {
            let mut brute: Option<i64> = None;
            for perm in [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
                let mut cand = stops.clone();
                for (o, &k) in perm.iter().enumerate() {
                    cand[i + o] = stops[i + k];
                }
                if oracle_feasible(&inst, cap, &cand) {
                    let d = dist(&inst, &cand);
                    brute = Some(brute.map_or(d, |b: i64| b.min(d)));
                }
            }
            let got = best_triple_permutation(&ctx, 0, &stops, i);
            assert_eq!(got.as_ref().map(|s| dist(&inst, s)), brute, "seed {seed} at {i}");
            if let Some(s) = got {
                assert!(oracle_feasible(&inst, cap, &s));
            }
            checked += 1;
        }
    }
    assert!(checked > 500, "only {checked} windows checked");
}

#[test]
fn penalized_cost_by_hand() {
    let mut b = InstanceBuilder::new(Point::new(0, 0), TimeWindow::new(0, 20_000));
    b.vehicle_types = vec![VehicleType::gasoline()];
    for x in [35_000, 1000] {
        b.requests.push(RequestSpec {
            pickup: Point::new(x, 0),
            dropoff: Point::new(0, 0),
            pickup_tw: TimeWindow::new(0, 20_000),
            dropoff_tw: TimeWindow::new(0, 20_000),
            passengers: 1,
            direction: Direction::Outbound,
            pickup_service: 0,
            dropoff_service: 0,
        });
    }
    let inst = b.build().unwrap();
    let route = Route::new(&inst, 0, vec![Stop::visit(1), Stop::visit(3)]);
    let mut sol = Solution { routes: vec![route], unserved: vec![1], placement: Vec::new() };
    sol.reindex(&inst);
    // 70 km: 16.17 fixed + 1.83 × 0.002 × 70 energy, 0.176 × 70 = 12.32 kg CO₂
    assert!((sol.cost() - 16.4262).abs() < 1e-9, "{}", sol.cost());
    assert!((sol.co2() - 12.32).abs() < 1e-9, "{}", sol.co2());
    let p = SearchParams::default();
    let expect = 16.4262 + 100.0 + 200.0 + 20.0 * 2.32;
    assert!((penalized_cost(&sol, &inst, 10.0, &p) - expect).abs() < 1e-9);
    assert!((penalized_cost(&sol, &inst, f64::INFINITY, &p) - 316.4262).abs() < 1e-9);
}

fn placement_consistent(sol: &Solution, inst: &Instance) -> bool {
    (0..inst.n_requests()).all(|r| match sol.placement[r] {
        Some(k) => sol.routes[k].requests(inst).contains(&r),
        None => sol.unserved.contains(&r),
    })
}

#[test]
fn operators_preserve_coverage_and_feasibility() {
    let inst = grid(12, 7, &[VehicleType::ev_type1(0.5), VehicleType::gasoline()], &Infrastructure::rapid(1));
    let p = small_params(1000);
    let ctx = Ctx::new(&inst, &p, f64::INFINITY);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut sol = generate_init_sol(&inst, f64::INFINITY, &p, &mut rng);
    assert!(sol.coverage_ok(&inst));
    let mut applied = 0;
    for step in 0..400 {
        let op = Operator::ALL[step % Operator::ALL.len()];
        let before = sol.clone();
        if apply_operator(op, &ctx, &mut sol, &mut rng) {
            applied += 1;
        } else {
            assert_eq!(sol, before, "{} changed a solution it rejected", op.name());
        }
        assert!(sol.coverage_ok(&inst), "{} broke coverage", op.name());
        assert!(placement_consistent(&sol, &inst), "{} broke placement", op.name());
        assert!(sol.routes.iter().all(|r| r.is_time_feasible()), "{}", op.name());
    }
    assert!(applied > 50);
}

#[test]
fn search_is_deterministic_per_seed() {
    let inst = mixed(8, 11, 0.5);
    let p = small_params(3000);
    let a = solve_fs_mfrp(&inst, f64::INFINITY, &p, &mut ChaCha8Rng::seed_from_u64(5));
    let b = solve_fs_mfrp(&inst, f64::INFINITY, &p, &mut ChaCha8Rng::seed_from_u64(5));
    assert_eq!(a.best, b.best);
    assert_eq!(a.trace.iterations, b.trace.iterations);
}

#[test]
fn accepted_solutions_meet_the_cap() {
    for seed in 0..6 {
        let inst = mixed(6, 40 + seed, 0.5);
        let p = small_params(2000);
        let gamma = reference_emission(&inst, &p, &mut ChaCha8Rng::seed_from_u64(0));
        let cap = 0.5 * gamma;
        let out = solve_fs_mfrp(&inst, cap, &p, &mut ChaCha8Rng::seed_from_u64(1));
        let best = out.best.expect("electric fleet can always meet the cap");
        assert!(best.co2() <= cap + 1e-9);
        assert!(best.coverage_ok(&inst) && best.unserved.is_empty());
        assert!(is_acceptable_best(&best, &inst, cap));
    }
}
