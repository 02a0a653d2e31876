//! Charging management: vehicle state detection, the session state machine,
//! the drive interlock, and the three cable-protection policies.

use std::fmt;

use thiserror::Error;

use crate::battery::PackState;
use crate::coupler::{contact_resistance, CouplerState};

/// Shown when the vehicle starts while the cable is attached.
pub const START_DETACH_MESSAGE: &str =
    "The car enters into the non-starting state, and charging cable is disconnected";

/// Shown when a plug is inserted while the vehicle is running.
pub const PLUG_WHILE_RUNNING_MESSAGE: &str = "Vehicle is running; stop the vehicle before charging";

pub const DEFAULT_N_DEBOUNCE: usize = 3;
pub const DEFAULT_SPEED_EPSILON: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("need {needed} detection samples, have {available}")]
    InsufficientSamples { needed: usize, available: usize },
    #[error("operation requires the {expected} policy, got {found}")]
    PolicyMismatch { expected: &'static str, found: SafetyPolicy },
    #[error("supply voltage {supply} V does not exceed pack voltage {pack} V")]
    SupplyBelowPack { supply: f64, pack: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VehicleState {
    Static,
    Start,
}

impl VehicleState {
    pub fn as_str(self) -> &'static str {
        match self {
            VehicleState::Static => "static",
            VehicleState::Start => "start",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionSample {
    pub t: u64,
    pub ignition_on: bool,
    /// m/s, non-negative.
    pub wheel_speed: f64,
}

impl DetectionSample {
    fn shows_start(&self, speed_epsilon: f64) -> bool {
        self.ignition_on || self.wheel_speed > speed_epsilon
    }
}

/// Debounced vehicle state from the most recent samples.
///
/// A unanimous window of `n_debounce` samples decides; a mixed window keeps
/// `previous`.
pub fn detect_vehicle_state(
    samples: &[DetectionSample],
    n_debounce: usize,
    speed_epsilon: f64,
    previous: VehicleState,
) -> Result<VehicleState, ControllerError> {
    if n_debounce == 0 || samples.len() < n_debounce {
        return Err(ControllerError::InsufficientSamples {
            needed: n_debounce.max(1),
            available: samples.len(),
        });
    }
    let window = &samples[samples.len() - n_debounce..];
    if window.iter().all(|s| s.shows_start(speed_epsilon)) {
        Ok(VehicleState::Start)
    } else if window.iter().all(|s| !s.shows_start(speed_epsilon)) {
        Ok(VehicleState::Static)
    } else {
        Ok(previous)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FaultReason {
    Damage,
}

impl FaultReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FaultReason::Damage => "damage",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ControllerPhase {
    Idle,
    Attaching,
    Charging,
    Detaching,
    Complete,
    Fault(FaultReason),
}

impl ControllerPhase {
    pub const ALL: [ControllerPhase; 6] = [
        ControllerPhase::Idle,
        ControllerPhase::Attaching,
        ControllerPhase::Charging,
        ControllerPhase::Detaching,
        ControllerPhase::Complete,
        ControllerPhase::Fault(FaultReason::Damage),
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, ControllerPhase::Complete | ControllerPhase::Fault(_))
    }

    pub fn parse(text: &str) -> Option<Self> {
        Some(match text {
            "idle" => ControllerPhase::Idle,
            "attaching" => ControllerPhase::Attaching,
            "charging" => ControllerPhase::Charging,
            "detaching" => ControllerPhase::Detaching,
            "complete" => ControllerPhase::Complete,
            "fault:damage" => ControllerPhase::Fault(FaultReason::Damage),
            _ => return None,
        })
    }
}

impl fmt::Display for ControllerPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControllerPhase::Idle => f.write_str("idle"),
            ControllerPhase::Attaching => f.write_str("attaching"),
            ControllerPhase::Charging => f.write_str("charging"),
            ControllerPhase::Detaching => f.write_str("detaching"),
            ControllerPhase::Complete => f.write_str("complete"),
            ControllerPhase::Fault(reason) => write!(f, "fault:{}", reason.as_str()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolarityCommand {
    /// Socket pole opposite the plug medium.
    Attract,
    /// Socket pole equal to the plug medium.
    Release,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Command {
    SetPolarity(PolarityCommand),
    BeginSession,
    EndSession,
    TriggerCutoff,
    RaiseAlarm,
    EmitUi(String),
    DenyDrive,
    AllowDrive,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SetPolarity(_) => "SetPolarity",
            Command::BeginSession => "BeginSession",
            Command::EndSession => "EndSession",
            Command::TriggerCutoff => "TriggerCutoff",
            Command::RaiseAlarm => "RaiseAlarm",
            Command::EmitUi(_) => "EmitUi",
            Command::DenyDrive => "DenyDrive",
            Command::AllowDrive => "AllowDrive",
        }
    }

    fn ui(text: &str) -> Self {
        debug_assert!(!text.is_empty());
        Command::EmitUi(text.to_owned())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SafetyPolicy {
    /// Detach-at-start through electromagnet polarity reversal.
    Electromagnet,
    /// Pressure-sensitive contact resistance; session ends when the charging
    /// current drops under `threshold_current` (A).
    HallResistance { threshold_current: f64 },
    /// Tension alarm only, `threshold_tension` in N.
    AlarmOnly { threshold_tension: f64 },
}

impl SafetyPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            SafetyPolicy::Electromagnet => "electromagnet",
            SafetyPolicy::HallResistance { .. } => "hall",
            SafetyPolicy::AlarmOnly { .. } => "alarm",
        }
    }

    pub fn is_valid(&self) -> bool {
        match *self {
            SafetyPolicy::Electromagnet => true,
            SafetyPolicy::HallResistance { threshold_current } => threshold_current > 0.0,
            SafetyPolicy::AlarmOnly { threshold_tension } => threshold_tension > 0.0,
        }
    }

    /// Whether the start-state detection drives an electromagnetic detach.
    /// The resistance and alarm schemes have no magnet to reverse.
    pub fn detaches_on_start(&self) -> bool {
        matches!(self, SafetyPolicy::Electromagnet)
    }
}

impl fmt::Display for SafetyPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ControllerEvent {
    PlugInserted,
    EngagedConfirmed,
    VehicleBecameStart,
    AllCellsBypassed,
    CurrentBelowThreshold,
    TensionAboveThreshold,
    DisengagedConfirmed,
    DamageReported,
}

impl ControllerEvent {
    pub const ALL: [ControllerEvent; 8] = [
        ControllerEvent::PlugInserted,
        ControllerEvent::EngagedConfirmed,
        ControllerEvent::VehicleBecameStart,
        ControllerEvent::AllCellsBypassed,
        ControllerEvent::CurrentBelowThreshold,
        ControllerEvent::TensionAboveThreshold,
        ControllerEvent::DisengagedConfirmed,
        ControllerEvent::DamageReported,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ControllerEvent::PlugInserted => "PlugInserted",
            ControllerEvent::EngagedConfirmed => "EngagedConfirmed",
            ControllerEvent::VehicleBecameStart => "VehicleBecameStart",
            ControllerEvent::AllCellsBypassed => "AllCellsBypassed",
            ControllerEvent::CurrentBelowThreshold => "CurrentBelowThreshold",
            ControllerEvent::TensionAboveThreshold => "TensionAboveThreshold",
            ControllerEvent::DisengagedConfirmed => "DisengagedConfirmed",
            ControllerEvent::DamageReported => "DamageReported",
        }
    }
}

/// Session transition table. Total: unlisted pairs keep the phase and emit
/// nothing, and the terminal phases absorb every event.
pub fn on_event(
    phase: ControllerPhase,
    vehicle: VehicleState,
    policy: SafetyPolicy,
    event: ControllerEvent,
) -> (ControllerPhase, Vec<Command>) {
    use ControllerEvent as E;
    use ControllerPhase as P;

    if phase.is_terminal() {
        return (phase, Vec::new());
    }
    match (phase, event) {
        (_, E::DamageReported) => (P::Fault(FaultReason::Damage), vec![Command::EndSession]),
        (P::Idle, E::PlugInserted) => match vehicle {
            VehicleState::Static => (P::Attaching, vec![Command::SetPolarity(PolarityCommand::Attract)]),
            VehicleState::Start => (P::Idle, vec![Command::ui(PLUG_WHILE_RUNNING_MESSAGE)]),
        },
        (P::Attaching, E::EngagedConfirmed) => (P::Charging, vec![Command::BeginSession, Command::DenyDrive]),
        (P::Charging, E::VehicleBecameStart) => (
            P::Detaching,
            vec![
                Command::SetPolarity(PolarityCommand::Release),
                Command::EndSession,
                Command::ui(START_DETACH_MESSAGE),
            ],
        ),
        (P::Charging, E::AllCellsBypassed) => (
            P::Detaching,
            vec![
                Command::TriggerCutoff,
                Command::SetPolarity(PolarityCommand::Release),
                Command::EndSession,
            ],
        ),
        (P::Charging, E::CurrentBelowThreshold) if matches!(policy, SafetyPolicy::HallResistance { .. }) => (
            P::Detaching,
            vec![Command::EndSession, Command::SetPolarity(PolarityCommand::Release)],
        ),
        (P::Charging, E::TensionAboveThreshold) if matches!(policy, SafetyPolicy::AlarmOnly { .. }) => {
            (P::Charging, vec![Command::RaiseAlarm])
        }
        (P::Detaching, E::DisengagedConfirmed) => (P::Complete, vec![Command::AllowDrive]),
        _ => (phase, Vec::new()),
    }
}

/// Drive-interlock latch. Set by `DenyDrive`, cleared by `AllowDrive`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct InterlockState {
    pub locked: bool,
}

impl InterlockState {
    pub fn apply(&mut self, command: &Command) {
        match command {
            Command::DenyDrive => self.locked = true,
            Command::AllowDrive => self.locked = false,
            _ => {}
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriveDecision {
    Allow,
    Deny,
}

/// Refuses a drive request while the plug is held in the socket.
pub fn interlock_check(_interlock: &InterlockState, coupler: CouplerState, drive_request: bool) -> DriveDecision {
    if drive_request && coupler == CouplerState::Engaged {
        DriveDecision::Deny
    } else {
        DriveDecision::Allow
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HallReading {
    pub current: f64,
    pub below_threshold: bool,
}

/// Charging current through the pressure-sensitive contact at `tension`.
pub fn hall_evaluate(
    supply_voltage: f64,
    pack_voltage: f64,
    base_resistance: f64,
    k_resistance: f64,
    tension: f64,
    policy: &SafetyPolicy,
) -> Result<HallReading, ControllerError> {
    let SafetyPolicy::HallResistance { threshold_current } = *policy else {
        return Err(ControllerError::PolicyMismatch {
            expected: "hall",
            found: *policy,
        });
    };
    if !(supply_voltage > pack_voltage) {
        return Err(ControllerError::SupplyBelowPack {
            supply: supply_voltage,
            pack: pack_voltage,
        });
    }
    let current = (supply_voltage - pack_voltage) / contact_resistance(tension, base_resistance, k_resistance);
    Ok(HallReading {
        current,
        below_threshold: current < threshold_current,
    })
}

/// Tension at which the resistance policy's current falls to its threshold.
///
/// Solves `dv / (r0 (1 + k T)) = threshold` for `T`.
pub fn hall_crossing_tension(delta_v: f64, r0: f64, k: f64, threshold_current: f64) -> f64 {
    (delta_v / (threshold_current * r0) - 1.0) / k
}

pub fn cutoff_on_full(pack: &PackState) -> Option<ControllerEvent> {
    pack.all_bypassed().then_some(ControllerEvent::AllCellsBypassed)
}

pub fn alarm_evaluate(tension: f64, policy: &SafetyPolicy) -> Result<Option<ControllerEvent>, ControllerError> {
    let SafetyPolicy::AlarmOnly { threshold_tension } = *policy else {
        return Err(ControllerError::PolicyMismatch {
            expected: "alarm",
            found: *policy,
        });
    };
    Ok((tension > threshold_tension).then_some(ControllerEvent::TensionAboveThreshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::battery::{CellParams, PackState};

    fn sample(t: u64, ignition_on: bool, wheel_speed: f64) -> DetectionSample {
        DetectionSample {
            t,
            ignition_on,
            wheel_speed,
        }
    }

    const POLICIES: [SafetyPolicy; 3] = [
        SafetyPolicy::Electromagnet,
        SafetyPolicy::HallResistance { threshold_current: 5.0 },
        SafetyPolicy::AlarmOnly { threshold_tension: 50.0 },
    ];

    #[test]
    fn detection_unanimous_and_hysteresis() {
        let quiet: Vec<_> = (0..3).map(|i| sample(i * 10, false, 0.0)).collect();
        assert_eq!(
            detect_vehicle_state(&quiet, 3, 0.05, VehicleState::Start).unwrap(),
            VehicleState::Static
        );
        let on: Vec<_> = (0..3).map(|i| sample(i * 10, true, 0.0)).collect();
        assert_eq!(
            detect_vehicle_state(&on, 3, 0.05, VehicleState::Static).unwrap(),
            VehicleState::Start
        );
        let mixed = vec![sample(0, true, 0.0), sample(10, false, 0.0), sample(20, true, 0.0)];
        assert_eq!(
            detect_vehicle_state(&mixed, 3, 0.05, VehicleState::Static).unwrap(),
            VehicleState::Static
        );
        assert_eq!(
            detect_vehicle_state(&mixed, 3, 0.05, VehicleState::Start).unwrap(),
            VehicleState::Start
        );
    }

    #[test]
    fn detection_uses_speed_and_last_window_only() {
        let rolling = vec![
            sample(0, false, 0.0),
            sample(10, false, 0.06),
            sample(20, false, 1.0),
            sample(30, false, 0.2),
        ];
        assert_eq!(
            detect_vehicle_state(&rolling, 3, 0.05, VehicleState::Static).unwrap(),
            VehicleState::Start
        );
        let creeping = vec![sample(0, false, 0.05); 3];
        assert_eq!(
            detect_vehicle_state(&creeping, 3, 0.05, VehicleState::Start).unwrap(),
            VehicleState::Static
        );
    }

    #[test]
    fn detection_needs_samples() {
        let two = vec![sample(0, true, 0.0); 2];
        assert_eq!(
            detect_vehicle_state(&two, 3, 0.05, VehicleState::Static),
            Err(ControllerError::InsufficientSamples { needed: 3, available: 2 })
        );
    }

    #[test]
    fn transition_examples() {
        let p = SafetyPolicy::Electromagnet;
        assert_eq!(
            on_event(ControllerPhase::Idle, VehicleState::Static, p, ControllerEvent::PlugInserted),
            (ControllerPhase::Attaching, vec![Command::SetPolarity(PolarityCommand::Attract)])
        );
        let (phase, cmds) = on_event(ControllerPhase::Idle, VehicleState::Start, p, ControllerEvent::PlugInserted);
        assert_eq!(phase, ControllerPhase::Idle);
        assert!(matches!(&cmds[..], [Command::EmitUi(_)]));
        assert_eq!(
            on_event(ControllerPhase::Charging, VehicleState::Start, p, ControllerEvent::VehicleBecameStart),
            (
                ControllerPhase::Detaching,
                vec![
                    Command::SetPolarity(PolarityCommand::Release),
                    Command::EndSession,
                    Command::EmitUi(START_DETACH_MESSAGE.to_owned()),
                ]
            )
        );
        assert_eq!(
            on_event(ControllerPhase::Complete, VehicleState::Static, p, ControllerEvent::PlugInserted),
            (ControllerPhase::Complete, vec![])
        );
        assert_eq!(
            on_event(ControllerPhase::Charging, VehicleState::Static, p, ControllerEvent::AllCellsBypassed),
            (
                ControllerPhase::Detaching,
                vec![
                    Command::TriggerCutoff,
                    Command::SetPolarity(PolarityCommand::Release),
                    Command::EndSession
                ]
            )
        );
    }

    #[test]
    fn policy_specific_transitions() {
        let hall = SafetyPolicy::HallResistance { threshold_current: 5.0 };
        let alarm = SafetyPolicy::AlarmOnly { threshold_tension: 50.0 };
        let c = ControllerPhase::Charging;
        let v = VehicleState::Start;
        assert_eq!(
            on_event(c, v, hall, ControllerEvent::CurrentBelowThreshold),
            (
                ControllerPhase::Detaching,
                vec![Command::EndSession, Command::SetPolarity(PolarityCommand::Release)]
            )
        );
        assert_eq!(on_event(c, v, alarm, ControllerEvent::CurrentBelowThreshold), (c, vec![]));
        assert_eq!(
            on_event(c, v, alarm, ControllerEvent::TensionAboveThreshold),
            (c, vec![Command::RaiseAlarm])
        );
        assert_eq!(on_event(c, v, hall, ControllerEvent::TensionAboveThreshold), (c, vec![]));
    }

    #[test]
    fn damage_faults_every_live_phase() {
        for phase in ControllerPhase::ALL {
            for policy in POLICIES {
                let (next, cmds) = on_event(phase, VehicleState::Start, policy, ControllerEvent::DamageReported);
                if phase.is_terminal() {
                    assert_eq!((next, cmds.len()), (phase, 0));
                } else {
                    assert_eq!(next, ControllerPhase::Fault(FaultReason::Damage));
                    assert_eq!(cmds, vec![Command::EndSession]);
                }
            }
        }
    }

    #[test]
    fn interlock_cases() {
        let locked = InterlockState { locked: true };
        assert_eq!(interlock_check(&locked, CouplerState::Engaged, true), DriveDecision::Deny);
        assert_eq!(interlock_check(&locked, CouplerState::Disengaged, true), DriveDecision::Allow);
        assert_eq!(interlock_check(&locked, CouplerState::Engaged, false), DriveDecision::Allow);
        let mut latch = InterlockState::default();
        latch.apply(&Command::DenyDrive);
        assert!(latch.locked);
        latch.apply(&Command::AllowDrive);
        assert!(!latch.locked);
    }

    #[test]
    fn interlock_never_allows_drive_when_engaged() {
        for locked in [false, true] {
            let state = InterlockState { locked };
            assert_eq!(interlock_check(&state, CouplerState::Engaged, true), DriveDecision::Deny);
        }
    }

    #[test]
    fn hall_examples() {
        let policy = SafetyPolicy::HallResistance { threshold_current: 5.0 };
        let r = hall_evaluate(5.0, 4.0, 0.1, 0.0, 0.0, &policy).unwrap();
        assert!((r.current - 10.0).abs() < 1e-12);
        assert!(!r.below_threshold);
        // r0 (1 + k T) = 0.1 (1 + 0.45 * 20) = 1 ohm
        let r = hall_evaluate(5.0, 4.0, 0.1, 0.45, 20.0, &policy).unwrap();
        assert!((r.current - 1.0).abs() < 1e-12);
        assert!(r.below_threshold);
        assert!(matches!(
            hall_evaluate(5.0, 4.0, 0.1, 0.45, 0.0, &SafetyPolicy::Electromagnet),
            Err(ControllerError::PolicyMismatch { .. })
        ));
        assert!(matches!(
            hall_evaluate(4.0, 4.0, 0.1, 0.45, 0.0, &policy),
            Err(ControllerError::SupplyBelowPack { .. })
        ));
    }

    #[test]
    fn hall_crossing_solves_threshold() {
        let t_star = hall_crossing_tension(1.0, 0.1, 0.45, 5.0);
        let policy = SafetyPolicy::HallResistance { threshold_current: 5.0 };
        let at = hall_evaluate(5.0, 4.0, 0.1, 0.45, t_star, &policy).unwrap();
        assert!((at.current - 5.0).abs() < 1e-9);
        let after = hall_evaluate(5.0, 4.0, 0.1, 0.45, t_star + 1e-6, &policy).unwrap();
        assert!(after.below_threshold);
    }

    #[test]
    fn cutoff_examples() {
        let mut pack = PackState::new(CellParams::default(), &[1.0, 1.0], 0.0).unwrap();
        assert_eq!(cutoff_on_full(&pack), None);
        pack.cells[0].bypassed = true;
        assert_eq!(cutoff_on_full(&pack), None);
        pack.cells[1].bypassed = true;
        assert_eq!(cutoff_on_full(&pack), Some(ControllerEvent::AllCellsBypassed));
    }

    #[test]
    fn alarm_examples() {
        let policy = SafetyPolicy::AlarmOnly { threshold_tension: 50.0 };
        assert_eq!(alarm_evaluate(0.0, &policy).unwrap(), None);
        assert_eq!(alarm_evaluate(50.0, &policy).unwrap(), None);
        assert_eq!(
            alarm_evaluate(50.1, &policy).unwrap(),
            Some(ControllerEvent::TensionAboveThreshold)
        );
        let (_, cmds) = on_event(
            ControllerPhase::Charging,
            VehicleState::Start,
            policy,
            ControllerEvent::TensionAboveThreshold,
        );
        assert_eq!(cmds, vec![Command::RaiseAlarm]);
        assert!(alarm_evaluate(60.0, &SafetyPolicy::Electromagnet).is_err());
    }

    #[test]
    fn phase_names_round_trip() {
        for phase in ControllerPhase::ALL {
            assert_eq!(ControllerPhase::parse(&phase.to_string()), Some(phase));
        }
    }
}
