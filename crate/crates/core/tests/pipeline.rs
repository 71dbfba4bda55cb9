use tmcflow::model::builtin_geometries;
use tmcflow::signals::{build_program, PhaseLayout, Policy, SignalProgram, Timing};
use tmcflow::sim::{evaluate, run, Controller, SimConfig};
use tmcflow::sumo::{emit_routes, emit_tls, parse_routes, parse_tls};
use tmcflow::trafficgen::{generate, BimodalProfile, DemandSpec, HourKind};

fn small_spec(seed: u64) -> DemandSpec {
    DemandSpec {
        seed,
        profile: BimodalProfile::constant(HourKind::Offpeak, 1),
        pattern: "PD".into(),
        ..DemandSpec::default()
    }
}

#[test]
fn generated_routes_survive_xml_round_trip() {
    let demand = generate(&small_spec(3)).unwrap();
    let xml = emit_routes(&demand.plans).unwrap();
    assert_eq!(parse_routes(&xml).unwrap(), demand.plans);
    assert_eq!(demand.minute_tmc.total(), demand.plans.len() as u64);
}

#[test]
fn program_round_trips_through_csv_and_tls() {
    let demand = generate(&small_spec(5)).unwrap();
    let timing = Timing::new(90, 3);
    let none = Default::default();
    let program = build_program(&demand.minute_tmc, Policy::Dynamic, &timing, &none).unwrap();

    let mut buf = Vec::new();
    program.write_csv(&mut buf).unwrap();
    let back = SignalProgram::read_csv(buf.as_slice(), PhaseLayout::ProtectedLeft).unwrap();
    assert_eq!(back, program);

    let bundle = emit_tls(&program, "J0");
    let (id, programs) = parse_tls(&bundle.to_xml().unwrap()).unwrap();
    assert_eq!(id, "J0");
    assert_eq!(programs, bundle.programs);
    assert!(programs.iter().all(|p| p.cycle() == 90));
    assert_eq!(bundle.schedule.len(), demand.minutes() as usize);
}

#[test]
fn every_controller_conserves_vehicles() {
    let demand = generate(&small_spec(9)).unwrap();
    let timing = Timing::new(60, 3);
    let peaks = Default::default();
    for geo in builtin_geometries() {
        for controller in [
            Controller::Static,
            Controller::Dynamic,
            Controller::Hybrid(&peaks),
        ] {
            let r = evaluate(&geo, &demand.plans, &demand.minute_tmc, controller, &timing).unwrap();
            assert_eq!(r.injected, demand.plans.len() as u64);
            assert_eq!(r.served + r.residual_queue, r.injected);
            assert_eq!(r.queue_series.len(), 60);
        }
    }
}

#[test]
fn longer_horizon_drains_the_queue() {
    let demand = generate(&small_spec(2)).unwrap();
    let timing = Timing::new(90, 3);
    let none = Default::default();
    let mut program = build_program(&demand.minute_tmc, Policy::Static, &timing, &none).unwrap();
    let geo = &builtin_geometries()[0];
    let short = run(geo, &demand.plans, &program, &SimConfig::new(3600)).unwrap();

    // Repeat the last plan for an extra half hour with no new arrivals.
    let last = *program.plan_at(59).unwrap();
    let mut plans: Vec<_> = (0..60)
        .map(|m| *program.plan_at(m).unwrap())
        .collect();
    plans.extend(std::iter::repeat_n(last, 30));
    program = SignalProgram::per_minute(plans).unwrap();
    let long = run(geo, &demand.plans, &program, &SimConfig::new(5400)).unwrap();
    assert!(long.served >= short.served);
    assert_eq!(long.residual_queue, 0);
}
