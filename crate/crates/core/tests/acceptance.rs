//! Acceptance suite. Each criterion prints one PASS/FAIL line; the binary
//! exits non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use tmcflow::experiment::{best_nwt, run_experiment, ExperimentSpec, PolicyName};
use tmcflow::model::{
    builtin_geometries, builtin_observed_tmc, zone_capacity_rates, Movement, TmcTable,
};
use tmcflow::rl::{delay, train, ActionSet, Hyperparams};
use tmcflow::signals::{build_program, dynamic_plan, static_plan, Policy, SignalProgram, Timing};
use tmcflow::sim::{run, SimConfig};
use tmcflow::sumo::{emit_routes, emit_tls, parse_routes, parse_tls};
use tmcflow::trafficgen::{
    generate, pattern, pattern_library, BimodalProfile, DemandSpec, HourKind, VehiclePlan,
    UNIVERSAL_PATTERN,
};
use tmcflow::trajectory::{
    classify, lcss, schematic_paths, Point, RoadUser, Trajectory, DEFAULT_EPS,
    DEFAULT_MIN_SIMILARITY,
};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

/// Capacity table for the six observed intersections: C1i, C1o, ..., C4o, TC.
const CAPACITY_TABLE: [(&str, [i64; 9]); 6] = [
    ("INT1", [84, 414, 241, 387, 226, 58, 124, 252, 103]),
    ("INT2", [60, 206, 33, 47, 150, 71, 29, 16, 44]),
    ("INT3", [320, 312, 235, 920, 181, 393, 528, 413, 189]),
    ("INT4", [73, 503, 140, 242, 155, 147, 141, 160, 84]),
    ("INT5", [388, 1946, 954, 761, 1175, 1451, 569, 1001, 483]),
    ("INT6", [447, 555, 684, 456, 533, 1795, 198, 381, 294]),
];

fn capacity_rates() -> Outcome {
    let start = Instant::now();
    let geos = builtin_geometries();
    let tmcs = builtin_observed_tmc();
    let mut worst = 0;
    for (id, expected) in CAPACITY_TABLE {
        let geo = geos
            .iter()
            .find(|g| g.id() == id)
            .ok_or(format!("{id} missing"))?;
        let (_, tmc) = tmcs
            .iter()
            .find(|(k, _)| k == id)
            .ok_or(format!("{id} counts missing"))?;
        let got = zone_capacity_rates(geo, tmc).cells();
        for (k, (&g, &e)) in got.iter().zip(&expected).enumerate() {
            let d = (g as i64 - e).abs();
            worst = worst.max(d);
            check(d <= 1, format!("{id} cell {k}: {g} vs {e}"))?;
        }
    }
    let elapsed = start.elapsed();
    check(
        elapsed < Duration::from_secs(1),
        format!("took {elapsed:?}"),
    )?;
    Ok(format!(
        "54 cells within ±1 (max deviation {worst}), {elapsed:?}"
    ))
}

fn pattern_algebra() -> Outcome {
    let lib = pattern_library();
    let get = |n: &str| pattern(n).unwrap().weights();
    for (a, b) in [("PD", "PC"), ("PF", "PB"), ("PG", "PE")] {
        let (x, y) = (get(a), get(b));
        let sum: Vec<f64> = (0..4).map(|i| x[i] + y[i]).collect();
        check(sum == UNIVERSAL_PATTERN, format!("{a}+{b} = {sum:?}"))?;
    }
    for (name, p) in &lib {
        let s: f64 = p.weights().iter().sum();
        check(s == 1.0, format!("{name} sums to {s}"))?;
    }
    Ok(format!(
        "3 complement identities exact, {} patterns sum to 1",
        lib.len()
    ))
}

fn dynamic_allocation() -> Outcome {
    let int1 = builtin_observed_tmc()[0].1;
    let plan = dynamic_plan(&int1, &Timing::new(90, 3)).map_err(|e| e.to_string())?;
    check(
        plan.greens() == [29, 21, 20, 8],
        format!("INT1 greens {:?}", plan.greens()),
    )?;
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(
            &(proptest::array::uniform12(0u64..3000), 32u32..200),
            |(counts, cycle)| {
                let t = Timing::new(cycle, 3);
                let plan = dynamic_plan(&TmcTable::from_counts(counts), &t).unwrap();
                prop_assert_eq!(plan.cycle(), cycle);
                prop_assert!(plan.greens().iter().all(|&g| g >= t.min_green));
                Ok(())
            },
        )
        .map_err(|e| e.to_string())?;
    Ok("INT1 @90 s -> (29,21,20,8); conservation on 1000 random tables".into())
}

fn program_csv(p: &SignalProgram) -> Vec<u8> {
    let mut out = Vec::new();
    p.write_csv(&mut out).unwrap();
    out
}

fn hybrid_equality() -> Outcome {
    let demand = generate(&DemandSpec {
        seed: 17,
        pattern: "PC".into(),
        ..DemandSpec::default()
    })
    .map_err(|e| e.to_string())?;
    let t = Timing::new(90, 3);
    let none = BTreeSet::new();
    let all: BTreeSet<u32> = (0..demand.minutes()).collect();
    let build = |policy, peaks: &BTreeSet<u32>| {
        build_program(&demand.minute_tmc, policy, &t, peaks).unwrap()
    };
    let stat = build(Policy::Static, &none);
    let dynm = build(Policy::Dynamic, &none);
    check(
        program_csv(&build(Policy::Hybrid, &none)) == program_csv(&stat),
        "empty peak set differs from static",
    )?;
    check(
        program_csv(&build(Policy::Hybrid, &all)) == program_csv(&dynm),
        "full peak set differs from dynamic",
    )?;

    let peaks = BimodalProfile::default().peak_minutes();
    let hybrid = build(Policy::Hybrid, &peaks);
    let fixed = static_plan(&t).unwrap();
    for m in 0..demand.minutes() {
        let expected = if (60..180).contains(&m) {
            dynm.plan_at(m)
        } else {
            Some(&fixed)
        };
        check(
            hybrid.plan_at(m) == expected,
            format!("minute {m} uses the wrong plan"),
        )?;
    }
    check(
        peaks.first() == Some(&60) && peaks.last() == Some(&179) && peaks.len() == 120,
        format!("peak window {:?}..{:?}", peaks.first(), peaks.last()),
    )?;
    Ok("hybrid(∅)=static, hybrid(all)=dynamic byte-for-byte; switches at 60 and 180".into())
}

/// Longest common subsequence by enumerating every subsequence of `a` and
/// embedding it greedily into `b`.
fn brute_lcss(a: &[Point], b: &[Point], eps: f64) -> usize {
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let len = mask.count_ones() as usize;
        if len <= best {
            continue;
        }
        let mut j = 0;
        let mut ok = true;
        for (i, p) in a.iter().enumerate() {
            if mask & (1 << i) == 0 {
                continue;
            }
            while j < b.len() && p.chebyshev(&b[j]) > eps {
                j += 1;
            }
            if j == b.len() {
                ok = false;
                break;
            }
            j += 1;
        }
        if ok {
            best = len;
        }
    }
    best
}

fn lcss_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..500 {
        let seq = |rng: &mut ChaCha8Rng| -> Vec<Point> {
            let n = rng.random_range(0..=8);
            (0..n)
                .map(|_| {
                    Point::new(
                        rng.random_range(0..10) as f64,
                        rng.random_range(0..10) as f64,
                    )
                })
                .collect()
        };
        let a = seq(&mut rng);
        let b = seq(&mut rng);
        let eps = rng.random_range(0..4) as f64;
        let (dp, bf) = (lcss(&a, &b, eps), brute_lcss(&a, &b, eps));
        check(
            dp == bf,
            format!("case {case}: dp {dp} vs brute force {bf}"),
        )?;
    }

    let paths = schematic_paths(400.0, 20.0, 10);
    let noise = Normal::new(0.0, DEFAULT_EPS / 3.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut correct = 0;
    for trial in 0..100 {
        let m = Movement::ALL[rng.random_range(0..12)];
        let points = paths
            .get(m)
            .unwrap()
            .points
            .iter()
            .map(|p| Point::new(p.x + noise.sample(&mut rng), p.y + noise.sample(&mut rng)))
            .collect();
        let t = Trajectory::new(format!("t{trial}"), RoadUser::Vehicle, points).unwrap();
        if classify(&t, &paths, DEFAULT_EPS, DEFAULT_MIN_SIMILARITY).movement() == Some(m) {
            correct += 1;
        }
    }
    check(
        correct >= 95,
        format!("noisy clones classified {correct}/100"),
    )?;
    Ok(format!(
        "DP = brute force on 500 pairs; noisy clones {correct}/100"
    ))
}

fn simulator() -> Outcome {
    let geos = builtin_geometries();
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    let scenario = (
        0usize..6,
        proptest::collection::vec((0u32..900, 0usize..12), 0..400),
        32u32..180,
        any::<bool>(),
    );
    runner
        .run(&scenario, |(g, mut departs, cycle, dynamic)| {
            departs.sort();
            let plans: Vec<VehiclePlan> = departs
                .iter()
                .enumerate()
                .map(|(i, &(d, m))| VehiclePlan {
                    id: format!("v{i}"),
                    depart: d,
                    movement: Movement::ALL[m],
                })
                .collect();
            let minute_tmc = tmcflow::trafficgen::aggregate_per_minute(&plans, 15).unwrap();
            let policy = if dynamic {
                Policy::Dynamic
            } else {
                Policy::Static
            };
            let program = build_program(
                &minute_tmc,
                policy,
                &Timing::new(cycle, 3),
                &BTreeSet::new(),
            )
            .unwrap();
            let r = run(&geos[g], &plans, &program, &SimConfig::new(900)).unwrap();
            prop_assert_eq!(r.injected, plans.len() as u64);
            prop_assert_eq!(r.injected, r.served + r.residual_queue);
            Ok(())
        })
        .map_err(|e| e.to_string())?;

    let program =
        SignalProgram::per_minute(vec![static_plan(&Timing::new(90, 3)).unwrap(); 3]).unwrap();
    let one = [VehiclePlan {
        id: "nbt".into(),
        depart: 0,
        movement: Movement::Nbt,
    }];
    let r = run(&geos[0], &one, &program, &SimConfig::new(180)).map_err(|e| e.to_string())?;
    check(
        (46..=48).contains(&r.total_wait),
        format!("NBT trace waited {} s", r.total_wait),
    )?;
    Ok(format!(
        "conservation on 1000 scenarios; NBT trace wait {} s",
        r.total_wait
    ))
}

fn qualitative_grid() -> Outcome {
    let geos = builtin_geometries();
    let sdh = vec![PolicyName::Static, PolicyName::Dynamic, PolicyName::Hybrid];
    let run_one = |pattern: &str, profile: BimodalProfile| {
        let spec = ExperimentSpec {
            profile,
            patterns: vec![pattern.into()],
            policies: sdh.clone(),
            ..ExperimentSpec::default()
        };
        run_experiment(&spec, &geos).unwrap()
    };
    let mut notes = Vec::new();
    let mut failures = Vec::new();

    // (a) uniform off-peak: static best or within 2% of the best.
    let m = run_one("PA", BimodalProfile::constant(HourKind::Offpeak, 1));
    let mut ok_a = 0;
    let mut gaps = Vec::new();
    for g in &geos {
        let best = best_nwt(&m, g.id(), "PA");
        let min = best.values().copied().fold(f64::INFINITY, f64::min);
        let s = best[&PolicyName::Static];
        gaps.push(format!("{}:{:+.1}%", g.id(), (s / min - 1.0) * 100.0));
        if s <= min * 1.02 {
            ok_a += 1;
        }
    }
    notes.push(format!(
        "(a) static within 2% on {ok_a}/6 [{}]",
        gaps.join(" ")
    ));
    if ok_a < 4 {
        failures.push("(a)");
    }

    // (b) skewed peak: dynamic no worse than static.
    let m = run_one("PC", BimodalProfile::constant(HourKind::Peak, 1));
    let ok_b = geos
        .iter()
        .filter(|g| {
            let best = best_nwt(&m, g.id(), "PC");
            best[&PolicyName::Dynamic] <= best[&PolicyName::Static]
        })
        .count();
    notes.push(format!("(b) dynamic <= static on {ok_b}/6"));
    if ok_b < 5 {
        failures.push("(b)");
    }

    // (c) default bimodal day: hybrid never worse than both others.
    let m = run_one("PA", BimodalProfile::default());
    let ok_c = geos
        .iter()
        .filter(|g| {
            let best = best_nwt(&m, g.id(), "PA");
            best[&PolicyName::Hybrid] <= best[&PolicyName::Static].max(best[&PolicyName::Dynamic])
        })
        .count();
    notes.push(format!("(c) hybrid <= max(static, dynamic) on {ok_c}/6"));
    if ok_c < 6 {
        failures.push("(c)");
    }

    let start = Instant::now();
    let full = run_experiment(&ExperimentSpec::default(), &geos).unwrap();
    let elapsed = start.elapsed();
    notes.push(format!(
        "full grid {} rows in {elapsed:.1?}",
        full.rows.len()
    ));
    if full.rows.len() != 6 * 7 * 4 * 4 || elapsed > Duration::from_secs(600) {
        failures.push("grid");
    }

    if failures.is_empty() {
        Ok(notes.join("; "))
    } else {
        Err(format!(
            "failed {}: {}",
            failures.join(","),
            notes.join("; ")
        ))
    }
}

fn rl_sanity() -> Outcome {
    let actions = ActionSet::new();
    check(actions.len() == 84, "action count")?;
    check(
        actions
            .iter()
            .all(|a| a.0.iter().map(|&k| k as u32).sum::<u32>() == 10),
        "action sums",
    )?;

    // Constant demand dominated by the west approach.
    let mut tmc = TmcTable::zero();
    tmc[Movement::Wbt] = 40;
    tmc[Movement::Nbt] = 8;
    tmc[Movement::Ebt] = 8;
    tmc[Movement::Sbt] = 8;
    let volumes = tmc.direction_volumes().map(|v| v as f64);
    let oracle = actions
        .iter()
        .min_by(|a, b| {
            let da = delay(volumes, a.greens(78.0)).unwrap();
            let db = delay(volumes, b.greens(78.0)).unwrap();
            da.partial_cmp(&db).unwrap()
        })
        .unwrap();
    check(
        oracle.0[1..].iter().all(|&k| k < oracle.0[0]),
        format!("oracle action {:?}", oracle.0),
    )?;

    let stream = tmcflow::trafficgen::MinuteTmc {
        tables: vec![tmc; 60],
    };
    let timing = Timing::new(90, 3);
    let hp = Hyperparams::default();
    let mut dominant = 0;
    let mut progress = 0;
    for seed in 0..10 {
        let trained = train(&stream, &timing, seed, &hp).map_err(|e| e.to_string())?;
        let a = trained.policy.greedy(&tmc);
        if a.0[1..].iter().all(|&k| k < a.0[0]) {
            dominant += 1;
        }
        let decile = (hp.episodes / 10).max(1);
        let mean = |s: &[tmcflow::rl::EpisodeLog]| {
            s.iter().map(|e| e.mean_reward).sum::<f64>() / s.len() as f64
        };
        if mean(&trained.log[hp.episodes - decile..]) >= mean(&trained.log[..decile]) {
            progress += 1;
        }
    }
    check(
        dominant >= 8,
        format!("dominant direction favoured in {dominant}/10 seeds"),
    )?;
    check(
        progress == 10,
        format!("last decile >= first decile in {progress}/10 seeds"),
    )?;
    Ok(format!(
        "84 exact actions; dominant share in {dominant}/10 seeds; reward progress {progress}/10"
    ))
}

fn interchange() -> Outcome {
    let demand = generate(&DemandSpec {
        seed: 3,
        profile: BimodalProfile::constant(HourKind::Offpeak, 1),
        ..DemandSpec::default()
    })
    .map_err(|e| e.to_string())?;
    let xml = emit_routes(&demand.plans).map_err(|e| e.to_string())?;
    check(
        parse_routes(&xml).map_err(|e| e.to_string())? == demand.plans,
        "route round trip",
    )?;
    check(
        parse_routes(&emit_routes(&[]).unwrap()).unwrap().is_empty(),
        "empty route document",
    )?;

    let mut docs = 0;
    let peaks = BimodalProfile::constant(HourKind::Offpeak, 1).peak_minutes();
    for cycle in [60, 90, 120, 150] {
        let t = Timing::new(cycle, 3);
        for policy in [Policy::Static, Policy::Dynamic, Policy::Hybrid] {
            let program = build_program(&demand.minute_tmc, policy, &t, &peaks).unwrap();
            let bundle = emit_tls(&program, "J0");
            let (_, parsed) = parse_tls(&bundle.to_xml().unwrap()).map_err(|e| e.to_string())?;
            check(parsed == bundle.programs, "tlLogic round trip")?;
            for p in &parsed {
                check(p.phases.len() == 8, format!("{} phases", p.phases.len()))?;
                check(
                    p.cycle() == cycle,
                    format!("phases sum to {} not {cycle}", p.cycle()),
                )?;
                docs += 1;
            }
        }
    }
    Ok(format!(
        "{} vehicles round-trip; {docs} tlLogic programs with 8 phases summing to the cycle",
        demand.plans.len()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("capacity-rate reproduction", capacity_rates),
        ("pattern algebra", pattern_algebra),
        ("dynamic allocation", dynamic_allocation),
        ("hybrid equality", hybrid_equality),
        ("lcss correctness", lcss_correctness),
        ("simulator conservation and trace", simulator),
        ("qualitative policy comparison", qualitative_grid),
        ("rl sanity", rl_sanity),
        ("interchange round trip", interchange),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({detail})", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
