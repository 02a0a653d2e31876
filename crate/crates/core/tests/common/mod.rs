#![allow(dead_code)]

use std::path::PathBuf;

use evmagsim::battery::CellParams;
use evmagsim::controller::{SafetyPolicy, VehicleState};
use evmagsim::coupler::{SocketLocation, SocketSpec, Vec2};
use evmagsim::engine::trace::render_trace;
use evmagsim::scenario::{Action, PackDecl, TimedAction};
use evmagsim::{EngineParams, FaultKind, Scenario, TraceRecord};
use rand::rngs::StdRng;
use rand::Rng;

pub const VEHICLE_SOCKETS: std::ops::RangeInclusive<u32> = 130..=136;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn fixture_text(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn run(scenario: &Scenario) -> Vec<TraceRecord> {
    scenario.build_world().expect("valid scenario").run_to_quiescence()
}

pub fn run_text(scenario: &Scenario) -> String {
    render_trace(&run(scenario))
}

pub fn vehicle_sockets() -> Vec<SocketSpec> {
    VEHICLE_SOCKETS
        .map(|id| SocketSpec::with_defaults(id, SocketLocation::for_vehicle_socket(id).unwrap()))
        .collect()
}

pub fn unit_vector(rng: &mut StdRng) -> Vec2 {
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    Vec2::new(angle.cos(), angle.sin())
}

fn socs(rng: &mut StdRng, max: f64) -> Vec<f64> {
    let n = rng.gen_range(1..=6);
    (0..n).map(|_| rng.gen_range(0.0..=max)).collect()
}

fn sorted(mut events: Vec<TimedAction>) -> Vec<TimedAction> {
    events.sort_by_key(|e| e.at);
    events
}

/// Default policy, interlock on, one plug at a random socket followed by a
/// drive-off in a random direction.
pub fn sweep_scenario(rng: &mut StdRng) -> Scenario {
    let sockets = vehicle_sockets();
    let socket = sockets[rng.gen_range(0..sockets.len())].id;
    let plug_at = rng.gen_range(0..=500);
    let drive_at = rng.gen_range(plug_at + 100..=60_000);
    Scenario {
        pack: PackDecl {
            params: CellParams::default(),
            socs: socs(rng, 0.9),
        },
        sockets,
        policy: SafetyPolicy::Electromagnet,
        interlock: true,
        params: EngineParams::default(),
        events: vec![
            TimedAction {
                at: plug_at,
                action: Action::Plug {
                    socket,
                    angle: rng.gen_range(-30.0..=30.0),
                },
            },
            TimedAction {
                at: drive_at,
                action: Action::Fault(FaultKind::DriveOffWhileCharging {
                    direction: unit_vector(rng),
                }),
            },
        ],
    }
}

fn random_policy(rng: &mut StdRng) -> SafetyPolicy {
    match rng.gen_range(0..3) {
        0 => SafetyPolicy::Electromagnet,
        1 => SafetyPolicy::HallResistance {
            threshold_current: rng.gen_range(0.5..9.0),
        },
        _ => SafetyPolicy::AlarmOnly {
            threshold_tension: rng.gen_range(1.0..99.0),
        },
    }
}

fn random_action(rng: &mut StdRng, sockets: &[SocketSpec]) -> Action {
    match rng.gen_range(0..6) {
        0 => Action::Plug {
            socket: sockets[rng.gen_range(0..sockets.len())].id,
            angle: rng.gen_range(-60.0..60.0),
        },
        1 => Action::Vehicle(if rng.gen() { VehicleState::Start } else { VehicleState::Static }),
        2 => Action::Move {
            dir: unit_vector(rng),
            dist: rng.gen_range(0.0..20.0),
        },
        3 => Action::Fault(FaultKind::DriveOffWhileCharging {
            direction: unit_vector(rng),
        }),
        4 => Action::Fault(FaultKind::StuckElectromagnet),
        _ => Action::Fault(FaultKind::SensorDropout {
            duration: rng.gen_range(1..500),
        }),
    }
}

/// Any policy, interlock setting and mix of events. The horizon is capped
/// so each run stays short.
pub fn runnable_scenario(rng: &mut StdRng) -> Scenario {
    let sockets = vehicle_sockets();
    let mut events = vec![TimedAction {
        at: rng.gen_range(0..500),
        action: Action::Plug {
            socket: sockets[rng.gen_range(0..sockets.len())].id,
            angle: rng.gen_range(-50.0..50.0),
        },
    }];
    for _ in 0..rng.gen_range(0..6) {
        events.push(TimedAction {
            at: rng.gen_range(0..20_000),
            action: random_action(rng, &sockets),
        });
    }
    let params = EngineParams {
        horizon_ms: 40_000,
        ..EngineParams::default()
    };
    Scenario {
        pack: PackDecl {
            params: CellParams::default(),
            socs: socs(rng, 1.0),
        },
        sockets,
        policy: random_policy(rng),
        interlock: rng.gen(),
        params,
        events: sorted(events),
    }
}

fn location(rng: &mut StdRng) -> SocketLocation {
    [SocketLocation::Front, SocketLocation::DriverSide, SocketLocation::RearSide][rng.gen_range(0..3)]
}

/// Arbitrary well-formed scenario with every field perturbed, for
/// round-trip checks. Not meant to be run.
pub fn arbitrary_scenario(rng: &mut StdRng) -> Scenario {
    let mut ids: Vec<u32> = (0..rng.gen_range(1..6)).map(|_| rng.gen_range(0..1000)).collect();
    ids.sort_unstable();
    ids.dedup();
    let sockets: Vec<SocketSpec> = ids
        .iter()
        .map(|&id| {
            SocketSpec::new(
                id,
                location(rng),
                unit_vector(rng),
                rng.gen_range(0.5..=90.0),
                rng.gen_range(0.1..50.0),
            )
            .unwrap()
        })
        .collect();
    let v_min = rng.gen_range(2.0..3.5);
    let params = CellParams::new(
        rng.gen_range(1.0..200.0),
        v_min,
        v_min + rng.gen_range(0.1..1.5),
        rng.gen_range(0.0..0.2),
    )
    .unwrap();
    let mut engine = EngineParams::default();
    if rng.gen() {
        engine.tick_ms = rng.gen_range(1..100);
        engine.omega = rng.gen_range(0.001..1.0);
        engine.motion.align_threshold = rng.gen_range(-1.0..1.0);
        engine.motion.k_tension = rng.gen_range(0.0..2.0);
        engine.motion.t_damage = rng.gen_range(1.0..500.0);
        engine.n_debounce = rng.gen_range(1..10);
        engine.speed_epsilon = rng.gen_range(0.0..1.0);
        engine.drive_speed = rng.gen_range(0.0..5.0);
        engine.charge_current = rng.gen_range(0.0..50.0);
        engine.r0 = rng.gen_range(0.01..2.0);
        engine.k_res = rng.gen_range(0.0..1.0);
        engine.hall_delta_v = rng.gen_range(0.1..20.0);
        engine.plug_gap = rng.gen_range(0.0..10.0);
        engine.horizon_ms = rng.gen_range(1..100_000_000);
    }
    let events = (0..rng.gen_range(0..12))
        .map(|_| TimedAction {
            at: rng.gen_range(0..1_000_000),
            action: random_action(rng, &sockets),
        })
        .collect();
    Scenario {
        pack: PackDecl {
            params,
            socs: socs(rng, 1.0),
        },
        sockets,
        policy: random_policy(rng),
        interlock: rng.gen(),
        params: engine,
        events: sorted(events),
    }
}
