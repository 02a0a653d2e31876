//! Line-oriented scenario language.
//!
//! ```text
//! # comment
//! pack cells=4 capacity_ah=50 vmin=3 vmax=4.2 rint=0.05 soc=0.1,0.4,0.7,0.9
//! socket id=130 location=front
//! policy electromagnet
//! interlock on
//! set tick_ms=10
//! at 0ms plug socket=130 angle=0
//! at 60000ms fault driveoff dir=1,0
//! ```
//!
//! The parser collects every error it finds. Serialization is canonical:
//! every default is written out, keys have a fixed order and floats use
//! the shortest text that reads back to the same value.

use std::collections::HashMap;
use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::battery::{CellParams, PackState};
use crate::controller::{SafetyPolicy, VehicleState};
use crate::coupler::{SocketLocation, SocketSpec, Vec2};
use crate::engine::{EngineError, EngineParams, Event, FaultKind, SimTime, World, WorldConfig};

pub const DEFAULT_CELLS: usize = 4;
pub const DEFAULT_SOC: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PackDecl {
    pub params: CellParams,
    /// Initial SOC per cell; its length is the cell count.
    pub socs: Vec<f64>,
}

impl Default for PackDecl {
    fn default() -> Self {
        Self {
            params: CellParams::default(),
            socs: vec![DEFAULT_SOC; DEFAULT_CELLS],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Plug { socket: u32, angle: f64 },
    Vehicle(VehicleState),
    Move { dir: Vec2, dist: f64 },
    Fault(FaultKind),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimedAction {
    pub at: SimTime,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub pack: PackDecl,
    pub sockets: Vec<SocketSpec>,
    pub policy: SafetyPolicy,
    pub interlock: bool,
    pub params: EngineParams,
    pub events: Vec<TimedAction>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            pack: PackDecl::default(),
            sockets: Vec::new(),
            policy: SafetyPolicy::Electromagnet,
            interlock: true,
            params: EngineParams::default(),
            events: Vec::new(),
        }
    }
}

impl Scenario {
    pub fn world_config(&self) -> Result<WorldConfig, EngineError> {
        let pack = PackState::new(self.pack.params, &self.pack.socs, 0.0)
            .map_err(|_| EngineError::InvalidParameter("invalid pack declaration"))?;
        Ok(WorldConfig {
            params: self.params,
            policy: self.policy,
            interlock: self.interlock,
            sockets: self.sockets.clone(),
            pack,
        })
    }

    /// A world with every scenario event queued and the first tick at 0.
    pub fn build_world(&self) -> Result<World, EngineError> {
        let mut world = World::new(self.world_config()?)?;
        for event in &self.events {
            match event.action {
                Action::Plug { socket, angle } => world.schedule(
                    Event::PlugInserted {
                        socket_id: socket,
                        insertion_angle: angle,
                    },
                    event.at,
                )?,
                Action::Vehicle(state) => world.schedule(Event::VehicleCommand(state), event.at)?,
                Action::Move { dir, dist } => world.schedule(
                    Event::MotionStep {
                        direction: dir,
                        displacement: dist,
                    },
                    event.at,
                )?,
                Action::Fault(kind) => world.inject_fault(kind, event.at)?,
            }
        }
        world.schedule(Event::Tick, 0)?;
        Ok(world)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_scenario(self))
    }
}

const PARAM_KEYS: [&str; 14] = [
    "tick_ms",
    "omega",
    "align_threshold",
    "k_tension",
    "t_damage",
    "n_debounce",
    "speed_epsilon",
    "drive_speed",
    "charge_current",
    "r0",
    "k_res",
    "hall_delta_v",
    "plug_gap",
    "horizon_ms",
];

fn param_text(params: &EngineParams, key: &str) -> String {
    match key {
        "tick_ms" => params.tick_ms.to_string(),
        "omega" => params.omega.to_string(),
        "align_threshold" => params.motion.align_threshold.to_string(),
        "k_tension" => params.motion.k_tension.to_string(),
        "t_damage" => params.motion.t_damage.to_string(),
        "n_debounce" => params.n_debounce.to_string(),
        "speed_epsilon" => params.speed_epsilon.to_string(),
        "drive_speed" => params.drive_speed.to_string(),
        "charge_current" => params.charge_current.to_string(),
        "r0" => params.r0.to_string(),
        "k_res" => params.k_res.to_string(),
        "hall_delta_v" => params.hall_delta_v.to_string(),
        "plug_gap" => params.plug_gap.to_string(),
        "horizon_ms" => params.horizon_ms.to_string(),
        _ => unreachable!("unknown parameter key {key}"),
    }
}

fn set_param(params: &mut EngineParams, key: &str, value: &str) -> Result<(), String> {
    fn int<T: std::str::FromStr>(value: &str) -> Result<T, String> {
        value.parse().map_err(|_| format!("expected an integer, found `{value}`"))
    }
    let slot = match key {
        "tick_ms" => {
            params.tick_ms = int(value)?;
            return Ok(());
        }
        "n_debounce" => {
            params.n_debounce = int(value)?;
            return Ok(());
        }
        "horizon_ms" => {
            params.horizon_ms = int(value)?;
            return Ok(());
        }
        "omega" => &mut params.omega,
        "align_threshold" => &mut params.motion.align_threshold,
        "k_tension" => &mut params.motion.k_tension,
        "t_damage" => &mut params.motion.t_damage,
        "speed_epsilon" => &mut params.speed_epsilon,
        "drive_speed" => &mut params.drive_speed,
        "charge_current" => &mut params.charge_current,
        "r0" => &mut params.r0,
        "k_res" => &mut params.k_res,
        "hall_delta_v" => &mut params.hall_delta_v,
        "plug_gap" => &mut params.plug_gap,
        _ => return Err(format!("unknown parameter `{key}`")),
    };
    *slot = float(value)?;
    Ok(())
}

fn float(value: &str) -> Result<f64, String> {
    match value.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("expected a finite number, found `{value}`")),
    }
}

fn vector(value: &str) -> Result<Vec2, String> {
    let parts: Vec<&str> = value.split(',').collect();
    let [x, y] = parts[..] else {
        return Err(format!("expected `<x>,<y>`, found `{value}`"));
    };
    let v = Vec2::new(float(x)?, float(y)?);
    if v.is_unit() {
        return Ok(v);
    }
    v.normalized().ok_or_else(|| "direction must be non-zero".to_string())
}

fn join_floats(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn vec_text(v: Vec2) -> String {
    join_floats([v.x, v.y])
}

/// Canonical text form of `scenario`. Events are written in time order.
pub fn serialize_scenario(scenario: &Scenario) -> String {
    let mut out = String::new();
    let p = &scenario.pack.params;
    let _ = writeln!(
        out,
        "pack cells={} capacity_ah={} vmin={} vmax={} rint={} soc={}",
        scenario.pack.socs.len(),
        p.capacity_ah,
        p.v_min,
        p.v_max,
        p.r_int,
        join_floats(scenario.pack.socs.iter().copied())
    );
    for s in &scenario.sockets {
        let _ = writeln!(
            out,
            "socket id={} location={} escape={} aperture={} rmax={}",
            s.id,
            s.location.as_str(),
            vec_text(s.escape_direction),
            s.aperture_half_angle,
            s.r_max
        );
    }
    let policy = match scenario.policy {
        SafetyPolicy::Electromagnet => "electromagnet".to_string(),
        SafetyPolicy::HallResistance { threshold_current } => format!("hall threshold_a={threshold_current}"),
        SafetyPolicy::AlarmOnly { threshold_tension } => format!("alarm threshold_n={threshold_tension}"),
    };
    let _ = writeln!(out, "policy {policy}");
    let _ = writeln!(out, "interlock {}", if scenario.interlock { "on" } else { "off" });
    for key in PARAM_KEYS {
        let _ = writeln!(out, "set {key}={}", param_text(&scenario.params, key));
    }
    let mut events: Vec<&TimedAction> = scenario.events.iter().collect();
    events.sort_by_key(|e| e.at);
    for e in events {
        let body = match &e.action {
            Action::Plug { socket, angle } => format!("plug socket={socket} angle={angle}"),
            Action::Vehicle(state) => format!("vehicle {}", state.as_str()),
            Action::Move { dir, dist } => format!("move dir={} dist={dist}", vec_text(*dir)),
            Action::Fault(FaultKind::DriveOffWhileCharging { direction }) => {
                format!("fault driveoff dir={}", vec_text(*direction))
            }
            Action::Fault(FaultKind::StuckElectromagnet) => "fault stuckmagnet".to_string(),
            Action::Fault(FaultKind::SensorDropout { duration }) => format!("fault dropout ms={duration}"),
        };
        let _ = writeln!(out, "at {}ms {body}", e.at);
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct Token<'a> {
    text: &'a str,
    col: usize,
}

fn tokenize(line: &str) -> Vec<Token<'_>> {
    let mut tokens = Vec::new();
    let mut start: Option<usize> = None;
    let mut col_of = HashMap::new();
    for (col, (i, ch)) in line.char_indices().enumerate() {
        col_of.insert(i, col + 1);
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                tokens.push(Token {
                    text: &line[s..i],
                    col: col_of[&s],
                });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        tokens.push(Token {
            text: &line[s..],
            col: col_of[&s],
        });
    }
    tokens
}

/// Per-line error sink plus `key=value` helpers.
struct LineParser<'e> {
    line: usize,
    errors: &'e mut Vec<ParseError>,
}

impl LineParser<'_> {
    fn error(&mut self, col: usize, message: impl Into<String>) {
        self.errors.push(ParseError {
            line: self.line,
            column: col,
            message: message.into(),
        });
    }

    /// Splits `key=value` tokens, rejecting unknown and repeated keys.
    fn pairs<'a>(&mut self, tokens: &[Token<'a>], allowed: &[&str]) -> Vec<(&'a str, &'a str, usize)> {
        let mut out: Vec<(&str, &str, usize)> = Vec::new();
        for tok in tokens {
            let Some((key, value)) = tok.text.split_once('=') else {
                self.error(tok.col, format!("expected `key=value`, found `{}`", tok.text));
                continue;
            };
            let value_col = tok.col + key.chars().count() + 1;
            if !allowed.contains(&key) {
                self.error(tok.col, format!("unknown key `{key}`"));
            } else if out.iter().any(|(k, _, _)| *k == key) {
                self.error(tok.col, format!("key `{key}` given twice"));
            } else if value.is_empty() {
                self.error(value_col.min(tok.col + tok.text.chars().count() - 1), format!("missing value for `{key}`"));
            } else {
                out.push((key, value, value_col));
            }
        }
        out
    }

    fn value<T>(&mut self, col: usize, result: Result<T, String>) -> Option<T> {
        match result {
            Ok(v) => Some(v),
            Err(message) => {
                self.error(col, message);
                None
            }
        }
    }

    fn expect_end(&mut self, rest: &[Token<'_>]) {
        if let Some(tok) = rest.first() {
            self.error(tok.col, format!("unexpected `{}`", tok.text));
        }
    }
}

#[derive(Default)]
struct Seen {
    pack: Option<usize>,
    policy: Option<usize>,
    interlock: Option<usize>,
    params: HashMap<&'static str, usize>,
    sockets: HashMap<u32, usize>,
}

/// Parses a scenario, returning every error found.
pub fn parse_scenario(text: &str) -> Result<Scenario, Vec<ParseError>> {
    let mut scenario = Scenario::default();
    let mut errors = Vec::new();
    let mut seen = Seen::default();
    let mut plug_refs: Vec<(u32, usize, usize)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = raw.split_once('#').map_or(raw, |(before, _)| before);
        let tokens = tokenize(content);
        let Some((head, rest)) = tokens.split_first() else {
            continue;
        };
        let mut p = LineParser {
            line: line_no,
            errors: &mut errors,
        };
        match head.text {
            "pack" => {
                if let Some(first) = seen.pack {
                    p.error(head.col, format!("pack already declared on line {first}"));
                    continue;
                }
                seen.pack = Some(line_no);
                if let Some(pack) = parse_pack(&mut p, head, rest) {
                    scenario.pack = pack;
                }
            }
            "socket" => {
                if let Some(socket) = parse_socket(&mut p, head, rest) {
                    if let Some(first) = seen.sockets.get(&socket.id) {
                        p.error(
                            head.col,
                            format!("duplicate socket id {} (lines {first} and {line_no})", socket.id),
                        );
                    } else {
                        seen.sockets.insert(socket.id, line_no);
                        scenario.sockets.push(socket);
                    }
                }
            }
            "policy" => {
                if let Some(first) = seen.policy {
                    p.error(head.col, format!("policy already declared on line {first}"));
                    continue;
                }
                seen.policy = Some(line_no);
                if let Some(policy) = parse_policy(&mut p, head, rest) {
                    scenario.policy = policy;
                }
            }
            "interlock" => {
                if let Some(first) = seen.interlock {
                    p.error(head.col, format!("interlock already declared on line {first}"));
                    continue;
                }
                seen.interlock = Some(line_no);
                match rest.first().map(|t| t.text) {
                    Some("on") => scenario.interlock = true,
                    Some("off") => scenario.interlock = false,
                    Some(other) => p.error(rest[0].col, format!("expected `on` or `off`, found `{other}`")),
                    None => p.error(head.col, "expected `on` or `off`"),
                }
                if rest.len() > 1 {
                    p.expect_end(&rest[1..]);
                }
            }
            "set" => {
                if rest.is_empty() {
                    p.error(head.col, "expected `<param>=<value>`");
                }
                for (key, value, col) in p.pairs(rest, &PARAM_KEYS) {
                    let key = PARAM_KEYS.iter().copied().find(|k| *k == key).unwrap_or_default();
                    if let Some(first) = seen.params.get(key) {
                        p.error(col - key.len() - 1, format!("parameter `{key}` already set on line {first}"));
                        continue;
                    }
                    seen.params.insert(key, line_no);
                    let mut probe = EngineParams::default();
                    let checked = set_param(&mut probe, key, value)
                        .and_then(|_| probe.validate().map_err(|e| e.to_string()));
                    if p.value(col, checked).is_some() {
                        let _ = set_param(&mut scenario.params, key, value);
                    }
                }
            }
            "at" => {
                if let Some((event, socket_ref)) = parse_event(&mut p, head, rest) {
                    if let Some((socket, col)) = socket_ref {
                        plug_refs.push((socket, line_no, col));
                    }
                    scenario.events.push(event);
                }
            }
            other => p.error(head.col, format!("unknown directive `{other}`")),
        }
    }

    for (socket, line, column) in plug_refs {
        if !seen.sockets.contains_key(&socket) {
            errors.push(ParseError {
                line,
                column,
                message: format!("undeclared socket {socket}"),
            });
        }
    }
    errors.sort_by_key(|e| (e.line, e.column));
    if !errors.is_empty() {
        return Err(errors);
    }
    scenario.events.sort_by_key(|e| e.at);
    Ok(scenario)
}

fn parse_pack(p: &mut LineParser<'_>, head: &Token<'_>, rest: &[Token<'_>]) -> Option<PackDecl> {
    let keys = ["cells", "capacity_ah", "vmin", "vmax", "rint", "soc"];
    let defaults = CellParams::default();
    let (mut cells, mut socs) = (None, None);
    let (mut capacity, mut vmin, mut vmax, mut rint) = (
        defaults.capacity_ah,
        defaults.v_min,
        defaults.v_max,
        defaults.r_int,
    );
    let mut ok = true;
    for (key, value, col) in p.pairs(rest, &keys) {
        let parsed = match key {
            "cells" => p
                .value(
                    col,
                    value
                        .parse::<usize>()
                        .ok()
                        .filter(|&n| n > 0)
                        .ok_or_else(|| format!("cells must be a positive integer, found `{value}`")),
                )
                .map(|n| cells = Some((n, col))),
            "soc" => p
                .value(
                    col,
                    value
                        .split(',')
                        .map(|s| {
                            float(s).and_then(|v| {
                                if (0.0..=1.0).contains(&v) {
                                    Ok(v)
                                } else {
                                    Err(format!("soc {v} outside [0, 1]"))
                                }
                            })
                        })
                        .collect::<Result<Vec<_>, _>>(),
                )
                .map(|v| socs = Some((v, col))),
            _ => p.value(col, float(value)).map(|v| match key {
                "capacity_ah" => capacity = v,
                "vmin" => vmin = v,
                "vmax" => vmax = v,
                _ => rint = v,
            }),
        };
        ok &= parsed.is_some();
    }
    let params = match CellParams::new(capacity, vmin, vmax, rint) {
        Ok(params) => Some(params),
        Err(e) => {
            p.error(head.col, e.to_string());
            None
        }
    };
    let socs = match (cells, socs) {
        (None, None) => Some(vec![DEFAULT_SOC; DEFAULT_CELLS]),
        (Some((n, _)), None) => Some(vec![DEFAULT_SOC; n]),
        (None, Some((v, _))) => Some(v),
        (Some((n, _)), Some((v, _))) if v.len() == 1 => Some(vec![v[0]; n]),
        (Some((n, _)), Some((v, _))) if v.len() == n => Some(v),
        (Some((n, _)), Some((v, col))) => {
            p.error(col, format!("{} soc value(s) given for {n} cell(s)", v.len()));
            None
        }
    };
    match (ok, params, socs) {
        (true, Some(params), Some(socs)) => Some(PackDecl { params, socs }),
        _ => None,
    }
}

fn parse_location(value: &str) -> Result<SocketLocation, String> {
    match value {
        "front" => Ok(SocketLocation::Front),
        "driver" => Ok(SocketLocation::DriverSide),
        "rear" => Ok(SocketLocation::RearSide),
        _ => Err(format!("expected `front`, `driver` or `rear`, found `{value}`")),
    }
}

fn parse_socket(p: &mut LineParser<'_>, head: &Token<'_>, rest: &[Token<'_>]) -> Option<SocketSpec> {
    let keys = ["id", "location", "escape", "aperture", "rmax"];
    let (mut id, mut location, mut escape) = (None, None, None);
    let mut aperture = crate::coupler::DEFAULT_APERTURE_HALF_ANGLE_DEG;
    let mut rmax = crate::coupler::DEFAULT_R_MAX_MM;
    let mut ok = true;
    let mut aperture_col = head.col;
    for (key, value, col) in p.pairs(rest, &keys) {
        let parsed = match key {
            "id" => p
                .value(col, value.parse::<u32>().map_err(|_| format!("expected a socket number, found `{value}`")))
                .map(|v| id = Some(v)),
            "location" => p.value(col, parse_location(value)).map(|v| location = Some(v)),
            "escape" => p.value(col, vector(value)).map(|v| escape = Some(v)),
            "aperture" => {
                aperture_col = col;
                p.value(col, float(value)).map(|v| aperture = v)
            }
            _ => p.value(col, float(value)).map(|v| rmax = v),
        };
        ok &= parsed.is_some();
    }
    if id.is_none() && ok {
        p.error(head.col, "socket needs `id=`");
    }
    if location.is_none() && ok {
        p.error(head.col, "socket needs `location=`");
    }
    let (Some(id), Some(location), true) = (id, location, ok) else {
        return None;
    };
    let escape = escape.unwrap_or_else(|| location.default_escape());
    match SocketSpec::new(id, location, escape, aperture, rmax) {
        Ok(socket) => Some(socket),
        Err(e) => {
            p.error(aperture_col, e.to_string());
            None
        }
    }
}

fn parse_policy(p: &mut LineParser<'_>, head: &Token<'_>, rest: &[Token<'_>]) -> Option<SafetyPolicy> {
    let Some((kind, args)) = rest.split_first() else {
        p.error(head.col, "expected `electromagnet`, `hall` or `alarm`");
        return None;
    };
    let (key, build): (&str, fn(f64) -> SafetyPolicy) = match kind.text {
        "electromagnet" => {
            p.expect_end(args);
            return args.is_empty().then_some(SafetyPolicy::Electromagnet);
        }
        "hall" => ("threshold_a", |v| SafetyPolicy::HallResistance { threshold_current: v }),
        "alarm" => ("threshold_n", |v| SafetyPolicy::AlarmOnly { threshold_tension: v }),
        other => {
            p.error(kind.col, format!("expected `electromagnet`, `hall` or `alarm`, found `{other}`"));
            return None;
        }
    };
    let pairs = p.pairs(args, &[key]);
    if pairs.len() != args.len() {
        return None;
    }
    let Some(&(_, value, col)) = pairs.first() else {
        p.error(kind.col, format!("`{}` policy needs `{key}=`", kind.text));
        return None;
    };
    let threshold = p.value(
        col,
        float(value).and_then(|v| {
            if v > 0.0 {
                Ok(v)
            } else {
                Err(format!("threshold must be positive, found {v}"))
            }
        }),
    )?;
    Some(build(threshold))
}

type SocketRef = Option<(u32, usize)>;

fn parse_event(p: &mut LineParser<'_>, head: &Token<'_>, rest: &[Token<'_>]) -> Option<(TimedAction, SocketRef)> {
    let Some((time, rest)) = rest.split_first() else {
        p.error(head.col, "expected `<int>ms` after `at`");
        return None;
    };
    let at = time
        .text
        .strip_suffix("ms")
        .and_then(|n| n.parse::<SimTime>().ok())
        .or_else(|| {
            p.error(time.col, format!("expected `<int>ms`, found `{}`", time.text));
            None
        });
    let Some((verb, args)) = rest.split_first() else {
        p.error(time.col, "expected an action after the time");
        return None;
    };
    let mut socket_ref = None;
    let action = match verb.text {
        "plug" => {
            let pairs = p.pairs(args, &["socket", "angle"]);
            let mut ok = pairs.len() == args.len();
            let (mut socket, mut angle) = (None, 0.0);
            for (key, value, col) in pairs {
                if key == "socket" {
                    match p.value(col, value.parse::<u32>().map_err(|_| format!("expected a socket number, found `{value}`"))) {
                        Some(id) => {
                            socket = Some(id);
                            socket_ref = Some((id, col));
                        }
                        None => ok = false,
                    }
                } else {
                    match p.value(col, float(value)) {
                        Some(v) => angle = v,
                        None => ok = false,
                    }
                }
            }
            match (socket, ok) {
                (Some(socket), true) => Some(Action::Plug { socket, angle }),
                (None, true) => {
                    p.error(verb.col, "plug needs `socket=`");
                    None
                }
                _ => None,
            }
        }
        "vehicle" => {
            let state = match args.first().map(|t| t.text) {
                Some("static") => Some(VehicleState::Static),
                Some("start") => Some(VehicleState::Start),
                Some(other) => {
                    p.error(args[0].col, format!("expected `static` or `start`, found `{other}`"));
                    None
                }
                None => {
                    p.error(verb.col, "expected `static` or `start`");
                    None
                }
            };
            if args.len() > 1 {
                p.expect_end(&args[1..]);
                None
            } else {
                state.map(Action::Vehicle)
            }
        }
        "move" => {
            let pairs = p.pairs(args, &["dir", "dist"]);
            let mut ok = pairs.len() == args.len();
            let (mut dir, mut dist) = (None, None);
            for (key, value, col) in pairs {
                let parsed = if key == "dir" {
                    p.value(col, vector(value)).map(|v| dir = Some(v))
                } else {
                    p.value(
                        col,
                        float(value).and_then(|v| {
                            if v >= 0.0 {
                                Ok(v)
                            } else {
                                Err(format!("distance must be non-negative, found {v}"))
                            }
                        }),
                    )
                    .map(|v| dist = Some(v))
                };
                ok &= parsed.is_some();
            }
            match (dir, dist, ok) {
                (Some(dir), Some(dist), true) => Some(Action::Move { dir, dist }),
                (_, _, true) => {
                    p.error(verb.col, "move needs `dir=` and `dist=`");
                    None
                }
                _ => None,
            }
        }
        "fault" => parse_fault(p, verb, args).map(Action::Fault),
        other => {
            p.error(verb.col, format!("unknown action `{other}`"));
            None
        }
    };
    Some((TimedAction { at: at?, action: action? }, socket_ref))
}

fn parse_fault(p: &mut LineParser<'_>, verb: &Token<'_>, args: &[Token<'_>]) -> Option<FaultKind> {
    let Some((kind, args)) = args.split_first() else {
        p.error(verb.col, "expected `driveoff`, `stuckmagnet` or `dropout`");
        return None;
    };
    match kind.text {
        "driveoff" => {
            let pairs = p.pairs(args, &["dir"]);
            if pairs.len() != args.len() {
                return None;
            }
            let direction = match pairs.first() {
                Some(&(_, value, col)) => p.value(col, vector(value))?,
                None => Vec2::FORWARD,
            };
            Some(FaultKind::DriveOffWhileCharging { direction })
        }
        "stuckmagnet" => {
            p.expect_end(args);
            args.is_empty().then_some(FaultKind::StuckElectromagnet)
        }
        "dropout" => {
            let pairs = p.pairs(args, &["ms"]);
            if pairs.len() != args.len() {
                return None;
            }
            let Some(&(_, value, col)) = pairs.first() else {
                p.error(kind.col, "dropout needs `ms=`");
                return None;
            };
            let duration = p.value(
                col,
                value
                    .parse::<SimTime>()
                    .ok()
                    .filter(|&d| d > 0)
                    .ok_or_else(|| format!("dropout duration must be a positive integer, found `{value}`")),
            )?;
            Some(FaultKind::SensorDropout { duration })
        }
        other => {
            p.error(kind.col, format!("expected `driveoff`, `stuckmagnet` or `dropout`, found `{other}`"));
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "pack\nsocket id=130 location=front\nat 0ms plug socket=130\n";

    fn errors(text: &str) -> Vec<ParseError> {
        parse_scenario(text).expect_err("should fail")
    }

    #[test]
    fn minimal_file_fills_defaults() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert_eq!(s.pack, PackDecl::default());
        assert_eq!(s.policy, SafetyPolicy::Electromagnet);
        assert!(s.interlock);
        assert_eq!(s.params, EngineParams::default());
        assert_eq!(s.sockets, vec![SocketSpec::with_defaults(130, SocketLocation::Front)]);
        assert_eq!(
            s.events,
            vec![TimedAction {
                at: 0,
                action: Action::Plug { socket: 130, angle: 0.0 }
            }]
        );
    }

    #[test]
    fn undeclared_socket() {
        let errs = errors("pack\nsocket id=130 location=front\n\nat 5ms plug socket=999\n");
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].line, 4);
        assert_eq!(errs[0].column, 20);
        assert!(errs[0].message.contains("undeclared socket"));
    }

    #[test]
    fn duplicate_socket_names_both_lines() {
        let errs = errors("socket id=131 location=driver\n# gap\nsocket id=131 location=rear\n");
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].line, 3);
        assert!(errs[0].message.contains("lines 1 and 3"), "{}", errs[0].message);
    }

    #[test]
    fn errors_are_collected() {
        let errs = errors("pack cells=0\nbogus\nset tick_ms=0\nat 10 plug socket=1\npolicy hall\n");
        let lines: Vec<usize> = errs.iter().map(|e| e.line).collect();
        assert_eq!(lines, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn unknown_keys_rejected() {
        let errs = errors("socket id=130 location=front colour=red\n");
        assert_eq!(errs[0].column, 30);
        assert!(errs[0].message.contains("unknown key"));
        assert!(parse_scenario("set warp=9\n").is_err());
    }

    #[test]
    fn default_round_trip() {
        let s = Scenario::default();
        assert_eq!(parse_scenario(&serialize_scenario(&s)).unwrap(), s);
    }

    #[test]
    fn overrides_preserved() {
        let text = "set omega=0.123\nset k_tension=0.7\npolicy alarm threshold_n=42.5\ninterlock off\n\
                    socket id=134 location=rear escape=0,1 aperture=30 rmax=2.5\n\
                    pack cells=2 rint=0 soc=0.25,0.75\n\
                    at 10ms fault dropout ms=30\nat 5ms fault driveoff dir=-1,0\nat 5ms move dir=3,4 dist=2\n";
        let s = parse_scenario(text).unwrap();
        assert_eq!(s.params.omega, 0.123);
        assert_eq!(s.params.motion.k_tension, 0.7);
        assert_eq!(s.policy, SafetyPolicy::AlarmOnly { threshold_tension: 42.5 });
        assert!(!s.interlock);
        assert_eq!(s.sockets[0].escape_direction, Vec2::new(0.0, 1.0));
        assert_eq!(s.pack.socs, vec![0.25, 0.75]);
        assert_eq!(s.pack.params.r_int, 0.0);
        let times: Vec<SimTime> = s.events.iter().map(|e| e.at).collect();
        assert_eq!(times, vec![5, 5, 10]);
        assert!(matches!(s.events[0].action, Action::Fault(FaultKind::DriveOffWhileCharging { .. })));
        let Action::Move { dir, dist } = s.events[1].action else { panic!() };
        assert!((dir.x - 0.6).abs() < 1e-12 && (dir.y - 0.8).abs() < 1e-12);
        assert_eq!(dist, 2.0);
        let canon = serialize_scenario(&s);
        assert_eq!(parse_scenario(&canon).unwrap(), s);
        assert_eq!(serialize_scenario(&parse_scenario(&canon).unwrap()), canon);
    }

    #[test]
    fn key_order_normalized() {
        let a = parse_scenario("socket location=rear rmax=4 id=135\npack soc=0.3 cells=3\n").unwrap();
        let b = parse_scenario("pack cells=3 soc=0.3\nsocket id=135 rmax=4 location=rear\n").unwrap();
        assert_eq!(a, b);
        assert_eq!(serialize_scenario(&a), serialize_scenario(&b));
        assert!(serialize_scenario(&a).starts_with("pack cells=3 capacity_ah=50 vmin=3 vmax=4.2 rint=0.05 soc=0.3,0.3,0.3\n"));
    }

    #[test]
    fn columns_are_one_based_and_in_bounds() {
        let text = "  pack   cells=x\n\tat 1ms vehicle sideways";
        let errs = errors(text);
        let lines: Vec<&str> = text.lines().collect();
        for e in &errs {
            assert!(e.column >= 1 && e.column <= lines[e.line - 1].chars().count(), "{e}");
        }
        assert_eq!((errs[0].line, errs[0].column), (1, 16));
        assert_eq!((errs[1].line, errs[1].column), (2, 17));
    }

    #[test]
    fn driveoff_defaults_forward() {
        let s = parse_scenario("at 0ms fault driveoff\n").unwrap();
        assert_eq!(
            s.events[0].action,
            Action::Fault(FaultKind::DriveOffWhileCharging { direction: Vec2::FORWARD })
        );
    }

    #[test]
    fn zero_direction_rejected() {
        let errs = errors("at 0ms move dir=0,0 dist=1\n");
        assert!(errs[0].message.contains("non-zero"));
    }

    #[test]
    fn build_world_schedules_everything() {
        let s = parse_scenario(MINIMAL).unwrap();
        let world = s.build_world().unwrap();
        assert_eq!(world.queue().len(), 2);
        assert_eq!(world.queue().pending_inputs(), 1);
    }
}
