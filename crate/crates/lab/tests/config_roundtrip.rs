use proptest::prelude::*;

use sandpile_lab::{Command, ExperimentConfig, Format, LawKind, LawSpec, ProbeParams, ScheduleKind};

fn command() -> impl Strategy<Value = Command> {
    prop::sample::select(vec![
        Command::Sample,
        Command::Cfprobe,
        Command::Nu,
        Command::Stabilize,
        Command::Dichotomy,
        Command::Tailbound,
        Command::ScalingSweep,
        Command::ScalingCouple,
        Command::Selftest,
    ])
}

fn law() -> impl Strategy<Value = LawSpec> {
    (
        prop::sample::select(vec![LawKind::Sas, LawKind::Pareto, LawKind::Gaussian, LawKind::Point]),
        prop::option::of(0.1f64..2.0),
        prop::option::of(1e-3f64..1e3),
    )
        .prop_map(|(kind, alpha, scale)| LawSpec { kind, alpha, scale })
}

fn probe() -> impl Strategy<Value = ProbeParams> {
    (
        prop::option::of(any::<f64>().prop_filter("finite", |x| x.is_finite())),
        prop::option::of("[0-9]{1,2}:[0-9]\\.[0-9]{1,3}"),
        prop::option::of(prop::collection::vec(1usize..512, 0..5)),
        prop::option::of(prop::collection::vec(-1e6f64..1e6, 0..4)),
        prop::option::of(prop::collection::vec(-50i64..50, 1..4)),
        prop::option::of(prop::sample::select(vec![ScheduleKind::Synchronous, ScheduleKind::Checkerboard, ScheduleKind::Psor])),
        prop::option::of(any::<bool>()),
        prop::option::of([0.0f64..10.0, 0.0f64..10.0]),
    )
        .prop_map(|(alpha, modes, ns, thetas, x, schedule, conserve, ab)| ProbeParams {
            alpha,
            modes,
            ns,
            thetas,
            x,
            schedule,
            conserve,
            ab,
            ..ProbeParams::default()
        })
}

fn config() -> impl Strategy<Value = ExperimentConfig> {
    (
        command(),
        any::<u64>(),
        1usize..6,
        prop::option::of(2usize..4096),
        prop::option::of(prop::collection::vec(0usize..100, 1..5)),
        (-1e3f64..1e3, 1e-15f64..1.0, 1usize..1_000_000),
        prop::option::of("[a-z]{1,8}(/[a-z0-9_]{1,8}){0,2}"),
        any::<bool>(),
        law(),
        probe(),
    )
        .prop_map(|(command, seed, d, n, radii, (mean, tol, reps), out, json, law, probe)| {
            let mut c = ExperimentConfig::new(command, seed);
            c.d = d;
            c.n = n;
            c.radii = radii;
            c.mean = mean;
            c.tol = tol;
            c.reps = reps;
            c.out = out.map(Into::into);
            c.format = if json { Format::Json } else { Format::Csv };
            c.law = law;
            c.probe = probe;
            c
        })
}

proptest! {
    #[test]
    fn toml_round_trip(c in config()) {
        let text = c.to_toml().unwrap();
        prop_assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn json_round_trip(c in config()) {
        let text = c.to_json().unwrap();
        prop_assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
    }

    #[test]
    fn resolution_is_idempotent(c in config()) {
        if let Ok(resolved) = c.resolve() {
            prop_assert_eq!(resolved.clone().resolve().unwrap(), resolved);
        }
    }
}
