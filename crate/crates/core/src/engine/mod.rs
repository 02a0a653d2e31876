//! Deterministic discrete-event loop tying the coupler, pack and controller
//! together.
//!
//! Time is integer milliseconds. A periodic tick polls the sensors and
//! feeds derived events to the controller; scenario inputs and faults are
//! scheduled as ordinary events. Equal-time events run in scheduling order,
//! so scenario inputs due at a tick boundary run before that tick. The
//! engine holds no RNG, which makes equal inputs produce equal traces.

mod queue;
pub mod trace;

use std::collections::VecDeque;

use thiserror::Error;

use crate::battery::{self, PackState};
use crate::controller::{
    self, interlock_check, on_event, Command, ControllerEvent, ControllerPhase, DetectionSample,
    DriveDecision, InterlockState, PolarityCommand, SafetyPolicy, VehicleState,
};
use crate::coupler::{
    self, motion_outcome, step_detach, try_engage, CouplerState, Engagement, MotionOutcome, MotionParams,
    PlugGeometry, Polarity, SocketSpec, Vec2,
};

pub use queue::{EventQueue, Scheduled};
pub use trace::{AttrValue, RecordKind, RecordView, TraceRecord};

/// Simulated time, milliseconds.
pub type SimTime = u64;

/// Magnetic medium on the cable plug. The socket magnet takes the opposite
/// pole to attract and the same pole to release.
pub const PLUG_POLARITY: Polarity = Polarity::North;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("cannot schedule at t={at} ms, clock is already at {now} ms")]
    PastTime { at: SimTime, now: SimTime },
    #[error("socket {0} is not declared")]
    UnknownSocket(u32),
    #[error("invalid event: {0}")]
    InvalidEvent(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaultKind {
    /// The driver starts and pulls away with the cable attached.
    DriveOffWhileCharging { direction: Vec2 },
    /// The socket magnet no longer responds to a release command.
    StuckElectromagnet,
    /// Vehicle-state samples are lost for `duration` ms.
    SensorDropout { duration: SimTime },
}

impl FaultKind {
    pub fn name(&self) -> &'static str {
        match self {
            FaultKind::DriveOffWhileCharging { .. } => "driveoff",
            FaultKind::StuckElectromagnet => "stuckmagnet",
            FaultKind::SensorDropout { .. } => "dropout",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    PlugInserted { socket_id: u32, insertion_angle: f64 },
    VehicleCommand(VehicleState),
    MotionStep { direction: Vec2, displacement: f64 },
    Tick,
    Fault(FaultKind),
}

/// Tunable engine, coupler and policy parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineParams {
    pub tick_ms: SimTime,
    /// Detach angular rate, degrees per ms.
    pub omega: f64,
    pub motion: MotionParams,
    pub n_debounce: usize,
    pub speed_epsilon: f64,
    /// Vehicle speed during a drive-off, m/s.
    pub drive_speed: f64,
    /// Constant charging current, A.
    pub charge_current: f64,
    /// Unloaded contact resistance for the resistance policy, ohms.
    pub r0: f64,
    /// Contact resistance growth per newton of tension.
    pub k_res: f64,
    /// Supply voltage above the pack voltage, V.
    pub hall_delta_v: f64,
    pub plug_gap: f64,
    /// Hard stop for ticking, ms.
    pub horizon_ms: SimTime,
}

impl Default for EngineParams {
    fn default() -> Self {
        Self {
            tick_ms: 10,
            omega: coupler::DEFAULT_OMEGA_DEG_PER_MS,
            motion: MotionParams::default(),
            n_debounce: controller::DEFAULT_N_DEBOUNCE,
            speed_epsilon: controller::DEFAULT_SPEED_EPSILON,
            drive_speed: 1.0,
            charge_current: 10.0,
            r0: 0.5,
            k_res: 0.1,
            hall_delta_v: 5.0,
            plug_gap: 0.0,
            horizon_ms: 6 * 3_600_000,
        }
    }
}

impl EngineParams {
    pub fn validate(&self) -> Result<(), EngineError> {
        let checks: [(bool, &'static str); 12] = [
            (self.tick_ms > 0, "tick_ms must be positive"),
            (self.omega > 0.0, "omega must be positive"),
            (self.motion.k_tension >= 0.0, "k_tension must be non-negative"),
            (self.motion.t_damage > 0.0, "t_damage must be positive"),
            (self.motion.align_threshold.is_finite(), "align_threshold must be finite"),
            (self.n_debounce > 0, "n_debounce must be positive"),
            (self.speed_epsilon >= 0.0, "speed_epsilon must be non-negative"),
            (self.drive_speed >= 0.0, "drive_speed must be non-negative"),
            (self.charge_current >= 0.0, "charge_current must be non-negative"),
            (self.r0 > 0.0 && self.k_res >= 0.0, "r0 must be positive and k_res non-negative"),
            (self.hall_delta_v > 0.0, "hall_delta_v must be positive"),
            (self.plug_gap >= 0.0, "plug_gap must be non-negative"),
        ];
        match checks.into_iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(EngineError::InvalidParameter(msg)),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub params: EngineParams,
    pub policy: SafetyPolicy,
    pub interlock: bool,
    pub sockets: Vec<SocketSpec>,
    pub pack: PackState,
}

/// The simulated vehicle, cable and charging pile.
#[derive(Debug, Clone)]
pub struct World {
    params: EngineParams,
    policy: SafetyPolicy,
    interlock_enabled: bool,
    sockets: Vec<SocketSpec>,
    queue: EventQueue,
    next_record: u64,
    inputs_applied: u64,

    pack: PackState,
    coupler: CouplerState,
    /// Coupler phase as last seen by the induction sensor.
    sensed: CouplerState,
    plugged: Option<(SocketSpec, PlugGeometry)>,
    tension: f64,
    stuck_magnet: bool,

    phase: ControllerPhase,
    interlock: InterlockState,
    session_open: bool,
    alarm_latched: bool,

    ignition: bool,
    wheel_speed: f64,
    drive_off: Option<Vec2>,
    samples: VecDeque<DetectionSample>,
    detected: VehicleState,
    dropout_until: Option<SimTime>,
}

impl World {
    pub fn new(config: WorldConfig) -> Result<Self, EngineError> {
        config.params.validate()?;
        if !config.policy.is_valid() {
            return Err(EngineError::InvalidParameter("policy threshold must be positive"));
        }
        Ok(Self {
            params: config.params,
            policy: config.policy,
            interlock_enabled: config.interlock,
            sockets: config.sockets,
            queue: EventQueue::new(),
            next_record: 0,
            inputs_applied: 0,
            pack: config.pack.with_current(0.0),
            coupler: CouplerState::Disengaged,
            sensed: CouplerState::Disengaged,
            plugged: None,
            tension: 0.0,
            stuck_magnet: false,
            phase: ControllerPhase::Idle,
            interlock: InterlockState::default(),
            session_open: false,
            alarm_latched: false,
            ignition: false,
            wheel_speed: 0.0,
            drive_off: None,
            samples: VecDeque::new(),
            detected: VehicleState::Static,
            dropout_until: None,
        })
    }

    pub fn now(&self) -> SimTime {
        self.queue.now()
    }

    pub fn phase(&self) -> ControllerPhase {
        self.phase
    }

    pub fn coupler(&self) -> CouplerState {
        self.coupler
    }

    pub fn pack(&self) -> &PackState {
        &self.pack
    }

    pub fn tension(&self) -> f64 {
        self.tension
    }

    pub fn detected_vehicle(&self) -> VehicleState {
        self.detected
    }

    pub fn interlock(&self) -> InterlockState {
        self.interlock
    }

    pub fn session_open(&self) -> bool {
        self.session_open
    }

    pub fn params(&self) -> &EngineParams {
        &self.params
    }

    pub fn queue(&self) -> &EventQueue {
        &self.queue
    }

    pub fn socket(&self, id: u32) -> Option<&SocketSpec> {
        self.sockets.iter().find(|s| s.id == id)
    }

    pub fn schedule(&mut self, event: Event, at: SimTime) -> Result<(), EngineError> {
        match &event {
            Event::PlugInserted { socket_id, .. } if self.socket(*socket_id).is_none() => {
                return Err(EngineError::UnknownSocket(*socket_id));
            }
            Event::MotionStep { direction, displacement } => {
                if !direction.is_unit() {
                    return Err(EngineError::InvalidEvent("motion direction must be unit length"));
                }
                if !(*displacement >= 0.0) {
                    return Err(EngineError::InvalidEvent("displacement must be non-negative"));
                }
            }
            Event::Fault(kind) => validate_fault(kind)?,
            _ => {}
        }
        self.queue.schedule(event, at).map(|_| ())
    }

    /// Schedules a fault. A drive-off also schedules the start command at
    /// the same instant; the motion steps follow from the ticks.
    pub fn inject_fault(&mut self, kind: FaultKind, at: SimTime) -> Result<(), EngineError> {
        if at < self.now() {
            return Err(EngineError::PastTime { at, now: self.now() });
        }
        self.schedule(Event::Fault(kind), at)?;
        if let FaultKind::DriveOffWhileCharging { .. } = kind {
            self.schedule(Event::VehicleCommand(VehicleState::Start), at)?;
        }
        Ok(())
    }

    /// Processes the earliest queued event.
    pub fn step(&mut self) -> Vec<TraceRecord> {
        let mut out = Vec::new();
        let Some(next) = self.queue.pop() else {
            return out;
        };
        match next.event {
            Event::Tick => self.on_tick(&mut out),
            Event::PlugInserted {
                socket_id,
                insertion_angle,
            } => self.on_plug(socket_id, insertion_angle, &mut out),
            Event::VehicleCommand(state) => self.on_vehicle(state, &mut out),
            Event::MotionStep {
                direction,
                displacement,
            } => self.on_motion(direction, displacement, &mut out),
            Event::Fault(kind) => self.on_fault(kind, &mut out),
        }
        if !matches!(next.event, Event::Tick) {
            self.inputs_applied += 1;
        }
        out
    }

    /// Steps every event due at or before `t_end`.
    pub fn run_until(&mut self, t_end: SimTime) -> Vec<TraceRecord> {
        let mut trace = Vec::new();
        while self.queue.peek_time().is_some_and(|t| t <= t_end) {
            trace.extend(self.step());
        }
        trace
    }

    /// Steps until the queue drains.
    pub fn run_to_quiescence(&mut self) -> Vec<TraceRecord> {
        self.run_until(SimTime::MAX)
    }

    fn emit(&mut self, out: &mut Vec<TraceRecord>, kind: RecordKind, attrs: Vec<(&'static str, AttrValue)>) {
        let seq = self.next_record;
        self.next_record += 1;
        out.push(TraceRecord {
            t: self.now(),
            seq,
            kind,
            attrs,
        });
    }

    fn deliver(&mut self, event: ControllerEvent, out: &mut Vec<TraceRecord>) {
        self.emit(out, RecordKind::Event, vec![("name", AttrValue::Word(event.name()))]);
        let (next, commands) = on_event(self.phase, self.detected, self.policy, event);
        if next != self.phase {
            self.emit(
                out,
                RecordKind::Phase,
                vec![
                    ("from", AttrValue::Text(self.phase.to_string())),
                    ("to", AttrValue::Text(next.to_string())),
                ],
            );
            self.phase = next;
        }
        for command in commands {
            self.apply_command(command, out);
        }
    }

    fn apply_command(&mut self, command: Command, out: &mut Vec<TraceRecord>) {
        let mut attrs = vec![("name", AttrValue::Word(command.name()))];
        match &command {
            Command::SetPolarity(PolarityCommand::Attract) => attrs.push(("mode", AttrValue::Word("attract"))),
            Command::SetPolarity(PolarityCommand::Release) => attrs.push(("mode", AttrValue::Word("release"))),
            Command::EmitUi(text) => attrs.push(("text", AttrValue::Text(text.clone()))),
            _ => {}
        }
        self.emit(out, RecordKind::Cmd, attrs);
        self.interlock.apply(&command);
        match command {
            Command::SetPolarity(PolarityCommand::Attract) => self.engage(out),
            Command::SetPolarity(PolarityCommand::Release) => self.release(out),
            Command::BeginSession => self.session_open = true,
            Command::EndSession => {
                self.session_open = false;
                self.pack.current = 0.0;
            }
            Command::TriggerCutoff => {
                for cell in &mut self.pack.cells {
                    cell.bypassed = true;
                }
                self.pack.current = 0.0;
            }
            Command::RaiseAlarm | Command::EmitUi(_) | Command::DenyDrive | Command::AllowDrive => {}
        }
    }

    fn set_coupler(&mut self, next: CouplerState, out: &mut Vec<TraceRecord>) {
        self.coupler = next;
        let mut attrs = vec![("state", AttrValue::Word(next.name()))];
        if let CouplerState::Detaching { theta } = next {
            attrs.push(("theta", AttrValue::Float(theta)));
        }
        self.emit(out, RecordKind::Coupler, attrs);
    }

    fn engage(&mut self, out: &mut Vec<TraceRecord>) {
        let Some((socket, plug)) = self.plugged.clone() else {
            return;
        };
        let Ok(result) = try_engage(self.coupler, &socket, &plug, PLUG_POLARITY.complement()) else {
            return;
        };
        match result {
            Engagement::Engaged => self.set_coupler(CouplerState::Engaged, out),
            Engagement::Rejected(reason) => {
                self.emit(out, RecordKind::EngageRejected, vec![("reason", AttrValue::Word(reason.as_str()))])
            }
        }
    }

    fn release(&mut self, out: &mut Vec<TraceRecord>) {
        if self.coupler != CouplerState::Engaged {
            return;
        }
        if self.stuck_magnet {
            self.emit(out, RecordKind::PolarityIgnored, vec![("mode", AttrValue::Word("release"))]);
            return;
        }
        self.set_coupler(CouplerState::Detaching { theta: 0.0 }, out);
    }

    fn on_plug(&mut self, socket_id: u32, angle: f64, out: &mut Vec<TraceRecord>) {
        self.emit(
            out,
            RecordKind::Plug,
            vec![("socket", AttrValue::UInt(socket_id.into())), ("angle", AttrValue::Float(angle))],
        );
        let socket = self.socket(socket_id).cloned();
        if self.phase == ControllerPhase::Idle && self.plugged.is_none() {
            if let (Some(socket), Ok(plug)) = (socket, PlugGeometry::new(PLUG_POLARITY, self.params.plug_gap, angle)) {
                self.plugged = Some((socket, plug));
            }
        }
        self.deliver(ControllerEvent::PlugInserted, out);
        if self.phase == ControllerPhase::Idle {
            self.plugged = None;
        }
    }

    fn on_vehicle(&mut self, state: VehicleState, out: &mut Vec<TraceRecord>) {
        self.emit(out, RecordKind::Vehicle, vec![("state", AttrValue::Word(state.as_str()))]);
        match state {
            VehicleState::Start => {
                self.ignition = true;
                if self.drive_off.is_some() {
                    self.wheel_speed = self.params.drive_speed;
                }
            }
            VehicleState::Static => {
                self.ignition = false;
                self.wheel_speed = 0.0;
                self.drive_off = None;
            }
        }
    }

    fn on_fault(&mut self, kind: FaultKind, out: &mut Vec<TraceRecord>) {
        let mut attrs = vec![("kind", AttrValue::Word(kind.name()))];
        match kind {
            FaultKind::DriveOffWhileCharging { direction } => {
                attrs.push(("dir", AttrValue::Floats(vec![direction.x, direction.y])));
                self.drive_off = Some(direction);
                if self.ignition {
                    self.wheel_speed = self.params.drive_speed;
                }
            }
            FaultKind::StuckElectromagnet => self.stuck_magnet = true,
            FaultKind::SensorDropout { duration } => {
                attrs.push(("ms", AttrValue::UInt(duration)));
                let until = self.now() + duration;
                self.dropout_until = Some(self.dropout_until.map_or(until, |u| u.max(until)));
            }
        }
        self.emit(out, RecordKind::Fault, attrs);
    }

    fn on_motion(&mut self, direction: Vec2, displacement: f64, out: &mut Vec<TraceRecord>) {
        let attrs = vec![
            ("dir", AttrValue::Floats(vec![direction.x, direction.y])),
            ("dist", AttrValue::Float(displacement)),
        ];
        if self.interlock_enabled && interlock_check(&self.interlock, self.coupler, true) == DriveDecision::Deny {
            self.emit(out, RecordKind::MoveDenied, attrs);
            return;
        }
        self.emit(out, RecordKind::Move, attrs);
        let Some((socket, _)) = self.plugged.clone() else {
            return;
        };
        let outcome = motion_outcome(
            &socket,
            direction,
            displacement,
            self.coupler,
            self.tension,
            &self.params.motion,
        );
        match outcome {
            MotionOutcome::NoEffect => {}
            MotionOutcome::TensionRise { delta } => {
                self.tension += delta;
                self.emit(
                    out,
                    RecordKind::TensionRise,
                    vec![("delta", AttrValue::Float(delta)), ("tension", AttrValue::Float(self.tension))],
                );
            }
            MotionOutcome::SafeRelease => {
                self.coupler = outcome.apply(self.coupler);
                self.emit(out, RecordKind::SafeRelease, vec![("socket", AttrValue::UInt(socket.id.into()))]);
            }
            MotionOutcome::Damage => {
                let d = direction.dot(socket.escape_direction);
                self.tension += self.params.motion.k_tension * d.abs() * displacement;
                self.coupler = outcome.apply(self.coupler);
                self.emit(
                    out,
                    RecordKind::Damage,
                    vec![
                        ("socket", AttrValue::UInt(socket.id.into())),
                        ("tension", AttrValue::Float(self.tension)),
                    ],
                );
                self.deliver(ControllerEvent::DamageReported, out);
            }
        }
    }

    fn on_tick(&mut self, out: &mut Vec<TraceRecord>) {
        let now = self.now();
        let tick = self.params.tick_ms;
        let dropout = self.dropout_until.is_some_and(|until| now < until);
        self.emit(
            out,
            if dropout {
                RecordKind::TickDropout
            } else {
                RecordKind::Tick
            },
            Vec::new(),
        );

        // Engagement sensing lags the physical coupler by one tick.
        match (self.phase, self.sensed) {
            (ControllerPhase::Attaching, CouplerState::Engaged) => {
                self.deliver(ControllerEvent::EngagedConfirmed, out)
            }
            (ControllerPhase::Detaching, CouplerState::Disengaged) => {
                self.deliver(ControllerEvent::DisengagedConfirmed, out)
            }
            _ => {}
        }

        if let CouplerState::Detaching { .. } = self.coupler {
            if let Ok(next) = step_detach(self.coupler, self.params.omega, tick as f64) {
                self.set_coupler(next, out);
            }
        }

        if !dropout {
            self.sample_vehicle(now, out);
        }
        if self.policy.detaches_on_start()
            && self.detected == VehicleState::Start
            && self.phase == ControllerPhase::Charging
        {
            self.deliver(ControllerEvent::VehicleBecameStart, out);
        }

        if self.phase == ControllerPhase::Charging {
            self.charge_tick(now, tick, out);
        }

        if let SafetyPolicy::AlarmOnly { .. } = self.policy {
            let above = controller::alarm_evaluate(self.tension, &self.policy).ok().flatten();
            if let Some(event) = above {
                if !self.alarm_latched {
                    self.deliver(event, out);
                }
            }
            self.alarm_latched = above.is_some();
        }

        self.sensed = self.coupler;

        if self.is_live() {
            // Scheduling at or after `now` cannot fail.
            let _ = self.queue.schedule(Event::Tick, now + tick);
            if let (Some(direction), true) = (self.drive_off, self.ignition) {
                let displacement = self.wheel_speed * tick as f64;
                let _ = self.queue.schedule(
                    Event::MotionStep {
                        direction,
                        displacement,
                    },
                    now,
                );
            }
        }
    }

    fn sample_vehicle(&mut self, now: SimTime, out: &mut Vec<TraceRecord>) {
        let n = self.params.n_debounce;
        self.samples.push_back(DetectionSample {
            t: now,
            ignition_on: self.ignition,
            wheel_speed: self.wheel_speed,
        });
        while self.samples.len() > n {
            self.samples.pop_front();
        }
        let window = self.samples.make_contiguous();
        if let Ok(state) = controller::detect_vehicle_state(window, n, self.params.speed_epsilon, self.detected) {
            if state != self.detected {
                self.detected = state;
                self.emit(out, RecordKind::Detect, vec![("state", AttrValue::Word(state.as_str()))]);
            }
        }
    }

    fn charge_tick(&mut self, now: SimTime, tick: SimTime, out: &mut Vec<TraceRecord>) {
        let engaged = self.coupler == CouplerState::Engaged;
        let current = match self.policy {
            SafetyPolicy::HallResistance { .. } => {
                let current = if engaged {
                    let pack_v: f64 = self
                        .pack
                        .cells
                        .iter()
                        .map(|c| battery::terminal_voltage(c, &self.pack.params, 0.0))
                        .sum();
                    controller::hall_evaluate(
                        pack_v + self.params.hall_delta_v,
                        pack_v,
                        self.params.r0,
                        self.params.k_res,
                        self.tension,
                        &self.policy,
                    )
                    .map(|r| r.current)
                    .unwrap_or(0.0)
                } else {
                    0.0
                };
                if let SafetyPolicy::HallResistance { threshold_current } = self.policy {
                    if current < threshold_current {
                        self.deliver(ControllerEvent::CurrentBelowThreshold, out);
                    }
                }
                current
            }
            _ if engaged => self.params.charge_current,
            _ => 0.0,
        };
        if self.phase != ControllerPhase::Charging || !engaged {
            return;
        }
        self.pack.current = current;
        let (next, record) = battery::step_charge_recorded(&self.pack, tick, now);
        self.pack = next;
        self.emit(
            out,
            RecordKind::Charge,
            vec![
                ("dt", AttrValue::UInt(record.dt)),
                ("current", AttrValue::Float(record.current)),
                ("pack_v", AttrValue::Float(record.pack_voltage())),
                ("v", AttrValue::Floats(record.per_cell_voltage)),
                ("soc", AttrValue::Floats(record.per_cell_soc)),
                ("active", AttrValue::Flags(record.per_cell_active)),
                ("phase", AttrValue::Word(record.phase.as_str())),
            ],
        );
        if let Some(event) = controller::cutoff_on_full(&self.pack) {
            self.deliver(event, out);
        }
    }

    /// Whether ticking should continue: the session is not over and
    /// something can still change.
    fn is_live(&self) -> bool {
        if self.phase.is_terminal() {
            return false;
        }
        if self.now().saturating_add(self.params.tick_ms) > self.params.horizon_ms {
            return false;
        }
        if self.queue.pending_inputs() > 0 {
            return true;
        }
        let moving = self.drive_off.is_some() && self.ignition;
        match self.phase {
            // A world that has consumed no input yet is waiting for one.
            ControllerPhase::Idle => self.inputs_applied == 0,
            ControllerPhase::Attaching => self.coupler == CouplerState::Engaged,
            ControllerPhase::Charging => {
                self.coupler == CouplerState::Engaged
                    || matches!(self.policy, SafetyPolicy::HallResistance { .. })
                    || (self.policy.detaches_on_start() && self.ignition && self.detected != VehicleState::Start)
            }
            ControllerPhase::Detaching => match self.coupler {
                CouplerState::Engaged => moving && !self.interlock_enabled,
                _ => true,
            },
            ControllerPhase::Complete | ControllerPhase::Fault(_) => false,
        }
    }
}

fn validate_fault(kind: &FaultKind) -> Result<(), EngineError> {
    match kind {
        FaultKind::DriveOffWhileCharging { direction } if !direction.is_unit() => {
            Err(EngineError::InvalidEvent("drive-off direction must be unit length"))
        }
        FaultKind::SensorDropout { duration: 0 } => Err(EngineError::InvalidEvent("dropout duration must be positive")),
        _ => Ok(()),
    }
}
