//! Electromagnetic coupler between the cable plug and a vehicle socket.
//!
//! The socket carries an electromagnet whose pole is switched by the
//! controller; the plug carries a fixed magnetic medium. Unlike poles pull
//! the plug in, like poles push it out. Detaching is modelled as the plug
//! rotating about its own axis at a constant rate until it reaches the
//! parallel (90 degree) position, after which it is free.

use std::fmt;

use thiserror::Error;

/// Rotation at which a detaching plug is considered free of the socket.
pub const PARALLEL_ANGLE_DEG: f64 = 90.0;

/// Default detach angular rate: a full detach takes 1000 ms.
pub const DEFAULT_OMEGA_DEG_PER_MS: f64 = 0.09;

// Absorbs accumulated rounding when theta is built up from many equal steps.
const ANGLE_EPS: f64 = 1e-9;

const UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CouplerError {
    #[error("operation not valid while coupler is {0}")]
    InvalidPhase(CouplerState),
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    North,
    South,
}

impl Polarity {
    pub fn complement(self) -> Self {
        match self {
            Polarity::North => Polarity::South,
            Polarity::South => Polarity::North,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ForceSign {
    Attract,
    Repel,
}

/// Like poles repel, unlike poles attract.
pub fn force_sign(socket_pole: Polarity, plug_pole: Polarity) -> ForceSign {
    if socket_pole == plug_pole {
        ForceSign::Repel
    } else {
        ForceSign::Attract
    }
}

/// Plain 2-D vector in the vehicle frame (+x forward, +y towards the driver side).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const FORWARD: Vec2 = Vec2 { x: 1.0, y: 0.0 };
    pub const LATERAL: Vec2 = Vec2 { x: 0.0, y: 1.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn is_unit(self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_TOLERANCE
    }

    /// Scales to unit length. `None` for the zero vector or non-finite input.
    pub fn normalized(self) -> Option<Vec2> {
        let n = self.norm();
        if !n.is_finite() || n == 0.0 {
            return None;
        }
        Some(Vec2::new(self.x / n, self.y / n))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SocketLocation {
    Front,
    DriverSide,
    RearSide,
}

impl SocketLocation {
    /// Direction of vehicle motion along which a plug in this socket slips out.
    pub fn default_escape(self) -> Vec2 {
        match self {
            SocketLocation::Front | SocketLocation::RearSide => Vec2::FORWARD,
            SocketLocation::DriverSide => Vec2::LATERAL,
        }
    }

    /// Location of the vehicle's numbered sockets: 130 front, 131..=133
    /// driver side, 134..=136 rear seat side.
    pub fn for_vehicle_socket(id: u32) -> Option<Self> {
        match id {
            130 => Some(SocketLocation::Front),
            131..=133 => Some(SocketLocation::DriverSide),
            134..=136 => Some(SocketLocation::RearSide),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SocketLocation::Front => "front",
            SocketLocation::DriverSide => "driver",
            SocketLocation::RearSide => "rear",
        }
    }
}

pub const DEFAULT_APERTURE_HALF_ANGLE_DEG: f64 = 45.0;
pub const DEFAULT_R_MAX_MM: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SocketSpec {
    pub id: u32,
    pub location: SocketLocation,
    pub escape_direction: Vec2,
    pub aperture_half_angle: f64,
    pub r_max: f64,
}

impl SocketSpec {
    pub fn new(
        id: u32,
        location: SocketLocation,
        escape_direction: Vec2,
        aperture_half_angle: f64,
        r_max: f64,
    ) -> Result<Self, CouplerError> {
        if !escape_direction.is_unit() {
            return Err(CouplerError::InvalidParameter("escape direction must be unit length"));
        }
        if !(aperture_half_angle > 0.0 && aperture_half_angle <= 90.0) {
            return Err(CouplerError::InvalidParameter("aperture half-angle must be in (0, 90]"));
        }
        if !(r_max > 0.0 && r_max.is_finite()) {
            return Err(CouplerError::InvalidParameter("r_max must be positive"));
        }
        Ok(Self {
            id,
            location,
            escape_direction,
            aperture_half_angle,
            r_max,
        })
    }

    /// Socket with the location's default escape direction, a 45 degree
    /// aperture and a 5 mm protection radius.
    pub fn with_defaults(id: u32, location: SocketLocation) -> Self {
        Self {
            id,
            location,
            escape_direction: location.default_escape(),
            aperture_half_angle: DEFAULT_APERTURE_HALF_ANGLE_DEG,
            r_max: DEFAULT_R_MAX_MM,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlugGeometry {
    pub polarity: Polarity,
    /// Millimeters between plug face and socket contact.
    pub gap: f64,
    /// Signed degrees off the socket axis.
    pub insertion_angle: f64,
}

impl PlugGeometry {
    pub fn new(polarity: Polarity, gap: f64, insertion_angle: f64) -> Result<Self, CouplerError> {
        if !(gap >= 0.0) {
            return Err(CouplerError::InvalidParameter("gap must be non-negative"));
        }
        Ok(Self {
            polarity,
            gap,
            insertion_angle,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CouplerState {
    Disengaged,
    Engaged,
    /// Plug rotating out; `theta` in degrees, in `[0, 90)`.
    Detaching { theta: f64 },
    /// Terminal.
    Damaged,
}

impl CouplerState {
    pub fn name(&self) -> &'static str {
        match self {
            CouplerState::Disengaged => "disengaged",
            CouplerState::Engaged => "engaged",
            CouplerState::Detaching { .. } => "detaching",
            CouplerState::Damaged => "damaged",
        }
    }
}

impl fmt::Display for CouplerState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CouplerState::Detaching { theta } => write!(f, "detaching({theta:.6})"),
            other => f.write_str(other.name()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RejectReason {
    RepelForce,
    GapTooLarge,
    AngleOutOfRange,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::RepelForce => "RepelForce",
            RejectReason::GapTooLarge => "GapTooLarge",
            RejectReason::AngleOutOfRange => "AngleOutOfRange",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engagement {
    Engaged,
    Rejected(RejectReason),
}

impl Engagement {
    pub fn state(self) -> CouplerState {
        match self {
            Engagement::Engaged => CouplerState::Engaged,
            Engagement::Rejected(_) => CouplerState::Disengaged,
        }
    }
}

/// Attempts to pull the plug into the socket.
///
/// Constraints are checked in order force, gap, angle; the first violated one
/// is reported.
pub fn try_engage(
    state: CouplerState,
    socket: &SocketSpec,
    plug: &PlugGeometry,
    socket_pole: Polarity,
) -> Result<Engagement, CouplerError> {
    if state != CouplerState::Disengaged {
        return Err(CouplerError::InvalidPhase(state));
    }
    if force_sign(socket_pole, plug.polarity) == ForceSign::Repel {
        return Ok(Engagement::Rejected(RejectReason::RepelForce));
    }
    if plug.gap > socket.r_max {
        return Ok(Engagement::Rejected(RejectReason::GapTooLarge));
    }
    if plug.insertion_angle.abs() > socket.aperture_half_angle {
        return Ok(Engagement::Rejected(RejectReason::AngleOutOfRange));
    }
    Ok(Engagement::Engaged)
}

/// Advances a detaching plug by `omega * dt` degrees.
pub fn step_detach(state: CouplerState, omega: f64, dt: f64) -> Result<CouplerState, CouplerError> {
    let CouplerState::Detaching { theta } = state else {
        return Err(CouplerError::InvalidPhase(state));
    };
    if !(omega > 0.0) {
        return Err(CouplerError::InvalidParameter("omega must be positive"));
    }
    if !(dt > 0.0) {
        return Err(CouplerError::InvalidParameter("dt must be positive"));
    }
    let next = theta + omega * dt;
    if next >= PARALLEL_ANGLE_DEG - ANGLE_EPS {
        Ok(CouplerState::Disengaged)
    } else {
        Ok(CouplerState::Detaching { theta: next })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionParams {
    /// Minimum cosine between motion and escape direction for a clean slip-out.
    pub align_threshold: f64,
    /// Cable tension gained per millimeter of opposing travel, N/mm.
    pub k_tension: f64,
    /// Tension above which the cable or socket is damaged, N.
    pub t_damage: f64,
}

impl Default for MotionParams {
    fn default() -> Self {
        Self {
            align_threshold: 0.5,
            k_tension: 0.5,
            t_damage: 100.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MotionOutcome {
    NoEffect,
    SafeRelease,
    TensionRise { delta: f64 },
    Damage,
}

impl MotionOutcome {
    /// Coupler state after the outcome takes effect.
    pub fn apply(self, coupler: CouplerState) -> CouplerState {
        match self {
            MotionOutcome::SafeRelease => CouplerState::Disengaged,
            MotionOutcome::Damage => CouplerState::Damaged,
            MotionOutcome::NoEffect | MotionOutcome::TensionRise { .. } => coupler,
        }
    }
}

/// Effect of a vehicle displacement on an engaged coupler.
///
/// `tension` is the cable tension accumulated before this motion.
pub fn motion_outcome(
    socket: &SocketSpec,
    motion: Vec2,
    displacement: f64,
    coupler: CouplerState,
    tension: f64,
    params: &MotionParams,
) -> MotionOutcome {
    if coupler != CouplerState::Engaged {
        return MotionOutcome::NoEffect;
    }
    let d = motion.dot(socket.escape_direction);
    if d >= params.align_threshold {
        return MotionOutcome::SafeRelease;
    }
    if d < 0.0 {
        let delta = params.k_tension * d.abs() * displacement;
        if delta <= 0.0 {
            return MotionOutcome::NoEffect;
        }
        if tension + delta > params.t_damage {
            return MotionOutcome::Damage;
        }
        return MotionOutcome::TensionRise { delta };
    }
    MotionOutcome::NoEffect
}

/// Pressure-sensitive contact resistance, `r0 * (1 + k * max(0, tension))`.
pub fn contact_resistance(tension: f64, r0: f64, k: f64) -> f64 {
    r0 * (1.0 + k * tension.max(0.0))
}
