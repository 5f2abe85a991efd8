use feeder_core::bilevel::*;
use feeder_core::instancegen::*;
use feeder_core::routesched::Solution;
use feeder_core::*;

fn site(id: usize, power_limit: f64) -> SiteCandidate {
    SiteCandidate { id, coord: Point::new(0, 0), power_limit, opening_cost: 4.11 }
}

#[test]
fn one_site_one_type_gives_seven_configs() {
    let configs = enumerate_configs(&[site(0, 1500.0)], &[ChargerType::rapid(0)], 6);
    assert_eq!(configs.len(), 7);
    let counts: Vec<u32> = configs.iter().map(|c| c.total_chargers()).collect();
    assert_eq!(counts, vec![0, 1, 2, 3, 4, 5, 6]);
    assert!(!configs[0].open[0] && configs[1].open[0]);
}

#[test]
fn power_limit_caps_chargers_per_site() {
    let configs = enumerate_configs(&[site(0, 250.0)], &[ChargerType::rapid(0)], 6);
    assert_eq!(configs.iter().map(|c| c.total_chargers()).max(), Some(2));
    // superfast at 220 kW fits once under 250 kW
    let both = enumerate_configs(&[site(0, 250.0)], &[ChargerType::rapid(0), ChargerType::superfast(1)], 6);
    assert_eq!(both.len(), 1 + 2 + 1);
}

#[test]
fn two_sites_multiply_options() {
    let sites = [site(0, 1500.0), site(1, 250.0)];
    let configs = enumerate_configs(&sites, &[ChargerType::rapid(0)], 6);
    assert_eq!(configs.len(), 7 * 3);
    assert!(configs.windows(2).all(|w| w[0].total_chargers() <= w[1].total_chargers()));
}

#[test]
fn infrastructure_and_upper_cost() {
    let sites = [site(0, 1500.0)];
    let types = [ChargerType::rapid(0)];
    let three = ChargingConfig::single(1, 1, 0, 0, 3);
    assert!((infrastructure_cost(&three, &sites, &types) - (4.11 + 3.0 * 9.59)).abs() < 1e-12);
    assert!((upper_cost(&three, 100.0, &sites, &types) - 132.88).abs() < 1e-9);
    let none = ChargingConfig::empty(1, 1);
    let zero = infrastructure_cost(&none, &sites, &types);
    assert_eq!(zero, 0.0);
    assert!(zero.is_sign_positive());
}

#[test]
fn expected_value_checks_probabilities() {
    assert!((expected_value(&[0.25, 0.75], &[100.0, 200.0]).unwrap() - 175.0).abs() < 1e-12);
    assert!(matches!(expected_value(&[0.5, 0.4], &[1.0, 1.0]), Err(PlanError::Probability(_))));
    assert!(matches!(expected_value(&[], &[]), Err(PlanError::NoScenarios)));
}

#[test]
fn percentile_fleet_sizes() {
    let fleets = [(36, 1), (36, 0), (36, 2), (36, 1), (37, 1)];
    assert_eq!(percentile_fleet(&fleets, 0.9).unwrap(), (36, 1));
    assert_eq!(percentile_fleet(&fleets, 1.0).unwrap(), (37, 2));
    assert_eq!(percentile_fleet(&fleets, 0.1).unwrap(), (36, 0));
    assert!(percentile_fleet(&fleets, 0.0).is_err());
    assert!(percentile_fleet(&[], 0.9).is_err());
}

/// Serves every scenario at zero operating cost.
struct Free;

impl LowerLevelSolver for Free {
    fn reference_emission(&self, _inst: &Instance, _seed: u64) -> f64 {
        10.0
    }

    fn solve(&self, _inst: &Instance, _cap: f64, _seed: u64) -> Option<Solution> {
        Some(Solution { routes: Vec::new(), unserved: Vec::new(), placement: Vec::new() })
    }
}

fn scenarios() -> Vec<Scenario> {
    let tt = build_timetable(&TimetableSpec::feeder_day()).unwrap();
    let types = [VehicleType::ev_type1(1.0), VehicleType::gasoline()];
    generate_scenarios(&GenParams::grid(3, 1), &tt, &types, &Infrastructure::rapid(0), 2).unwrap()
}

#[test]
fn early_stop_after_costs_rise() {
    let sc = scenarios();
    let params = PlanParams { pi: 0.5, ..PlanParams::default() };
    let report = plan(&sc, &Free, &params).unwrap();
    // with free routing only infrastructure cost counts, so one charger is already dearer
    assert_eq!(report.evaluations.len(), 2);
    assert_eq!(report.stopped_after, Some(1));
    assert_eq!(report.best().config.total_chargers(), 0);
    assert_eq!(report.gammas, vec![10.0, 10.0]);
    let full = plan(&sc, &Free, &PlanParams { early_stop: false, ..params }).unwrap();
    assert_eq!(full.evaluations.len(), 7);
    assert_eq!(full.stopped_after, None);
    let csv = plan_csv(&full, &sc[0].instance.charger_types);
    assert_eq!(csv.lines().count(), 8);
}

#[test]
fn plan_rejects_bad_inputs() {
    assert!(matches!(plan(&[], &Free, &PlanParams::default()), Err(PlanError::NoScenarios)));
    let sc = scenarios();
    assert!(plan(&sc, &Free, &PlanParams { coverage: 1.5, ..PlanParams::default() }).is_err());
}
