//! Trace records and their one-line text form:
//!
//! ```text
//! t=<ms> seq=<n> <KIND> k1=v1 k2=v2 ...
//! ```
//!
//! Keys appear in a fixed order per kind. Floats render with six fractional
//! digits, lists are comma-joined, and free text is double-quoted when it
//! contains whitespace, quotes, backslashes or `=`.

use std::borrow::Cow;
use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::battery::{ChargePhase, ChargeStepRecord};

use super::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RecordKind {
    Tick,
    /// Tick whose detection sample was suppressed by a sensor dropout.
    TickDropout,
    Plug,
    Vehicle,
    Move,
    /// Motion refused by the drive interlock.
    MoveDenied,
    Fault,
    Detect,
    Event,
    Phase,
    Cmd,
    Coupler,
    EngageRejected,
    PolarityIgnored,
    Charge,
    TensionRise,
    SafeRelease,
    Damage,
}

impl RecordKind {
    pub const ALL: [RecordKind; 18] = [
        RecordKind::Tick,
        RecordKind::TickDropout,
        RecordKind::Plug,
        RecordKind::Vehicle,
        RecordKind::Move,
        RecordKind::MoveDenied,
        RecordKind::Fault,
        RecordKind::Detect,
        RecordKind::Event,
        RecordKind::Phase,
        RecordKind::Cmd,
        RecordKind::Coupler,
        RecordKind::EngageRejected,
        RecordKind::PolarityIgnored,
        RecordKind::Charge,
        RecordKind::TensionRise,
        RecordKind::SafeRelease,
        RecordKind::Damage,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RecordKind::Tick => "TICK",
            RecordKind::TickDropout => "TICK_DROPOUT",
            RecordKind::Plug => "PLUG",
            RecordKind::Vehicle => "VEHICLE",
            RecordKind::Move => "MOVE",
            RecordKind::MoveDenied => "MOVE_DENIED",
            RecordKind::Fault => "FAULT",
            RecordKind::Detect => "DETECT",
            RecordKind::Event => "EVENT",
            RecordKind::Phase => "PHASE",
            RecordKind::Cmd => "CMD",
            RecordKind::Coupler => "COUPLER",
            RecordKind::EngageRejected => "ENGAGE_REJECTED",
            RecordKind::PolarityIgnored => "POLARITY_IGNORED",
            RecordKind::Charge => "CHARGE",
            RecordKind::TensionRise => "TENSION_RISE",
            RecordKind::SafeRelease => "SAFE_RELEASE",
            RecordKind::Damage => "DAMAGE",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == text)
    }
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttrValue {
    UInt(u64),
    Float(f64),
    Floats(Vec<f64>),
    Flags(Vec<bool>),
    Word(&'static str),
    Text(String),
}

impl AttrValue {
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            AttrValue::Float(v) => Some(v),
            AttrValue::UInt(v) => Some(v as f64),
            _ => None,
        }
    }

    pub fn as_u64(&self) -> Option<u64> {
        match *self {
            AttrValue::UInt(v) => Some(v),
            _ => None,
        }
    }
}

fn needs_quotes(text: &str) -> bool {
    text.is_empty() || text.chars().any(|c| c.is_whitespace() || matches!(c, '"' | '\\' | '='))
}

fn write_text(out: &mut String, text: &str) {
    if !needs_quotes(text) {
        out.push_str(text);
        return;
    }
    out.push('"');
    for c in text.chars() {
        if matches!(c, '"' | '\\') {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
}

impl fmt::Display for AttrValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttrValue::UInt(v) => write!(f, "{v}"),
            AttrValue::Float(v) => write!(f, "{v:.6}"),
            AttrValue::Floats(vs) => {
                for (i, v) in vs.iter().enumerate() {
                    if i > 0 {
                        f.write_char(',')?;
                    }
                    write!(f, "{v:.6}")?;
                }
                Ok(())
            }
            AttrValue::Flags(vs) => {
                for (i, v) in vs.iter().enumerate() {
                    if i > 0 {
                        f.write_char(',')?;
                    }
                    f.write_char(if *v { '1' } else { '0' })?;
                }
                Ok(())
            }
            AttrValue::Word(w) => f.write_str(w),
            AttrValue::Text(t) => {
                let mut s = String::new();
                write_text(&mut s, t);
                f.write_str(&s)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: SimTime,
    pub seq: u64,
    pub kind: RecordKind,
    pub attrs: Vec<(&'static str, AttrValue)>,
}

impl TraceRecord {
    pub fn get(&self, key: &str) -> Option<&AttrValue> {
        self.attrs.iter().find(|(k, _)| *k == key).map(|(_, v)| v)
    }

    /// Battery row carried by a `CHARGE` record.
    pub fn charge_step(&self) -> Option<ChargeStepRecord> {
        if self.kind != RecordKind::Charge {
            return None;
        }
        let AttrValue::Floats(v) = self.get("v")? else { return None };
        let AttrValue::Floats(soc) = self.get("soc")? else { return None };
        let AttrValue::Flags(active) = self.get("active")? else { return None };
        let phase = match self.get("phase")? {
            AttrValue::Word("cutoff") => ChargePhase::Cutoff,
            _ => ChargePhase::Cc,
        };
        Some(ChargeStepRecord {
            t: self.t,
            dt: self.get("dt")?.as_u64()?,
            current: self.get("current")?.as_f64()?,
            per_cell_voltage: v.clone(),
            per_cell_soc: soc.clone(),
            per_cell_active: active.clone(),
            phase,
        })
    }
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={} seq={} {}", self.t, self.seq, self.kind)?;
        for (k, v) in &self.attrs {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

/// Renders records one per line, each terminated by `\n`.
pub fn render_trace(records: &[TraceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let _ = writeln!(out, "{r}");
    }
    out
}

/// Read-only view over a record, whether built in memory or read back
/// from a trace file. Attributes are exposed in their rendered text form.
pub trait RecordView {
    fn time(&self) -> SimTime;
    fn kind_name(&self) -> &str;
    fn attr(&self, key: &str) -> Option<Cow<'_, str>>;
}

impl RecordView for TraceRecord {
    fn time(&self) -> SimTime {
        self.t
    }

    fn kind_name(&self) -> &str {
        self.kind.as_str()
    }

    fn attr(&self, key: &str) -> Option<Cow<'_, str>> {
        self.get(key).map(|v| match v {
            AttrValue::Word(w) => Cow::Borrowed(*w),
            AttrValue::Text(t) => Cow::Borrowed(t.as_str()),
            other => Cow::Owned(other.to_string()),
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct TraceParseError {
    pub line: usize,
    pub message: String,
}

/// A trace line read back from text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedRecord {
    pub t: SimTime,
    pub seq: u64,
    pub kind: String,
    pub attrs: Vec<(String, String)>,
}

impl RecordView for ParsedRecord {
    fn time(&self) -> SimTime {
        self.t
    }

    fn kind_name(&self) -> &str {
        &self.kind
    }

    fn attr(&self, key: &str) -> Option<Cow<'_, str>> {
        self.attrs.iter().find(|(k, _)| k == key).map(|(_, v)| Cow::Borrowed(v.as_str()))
    }
}

/// Splits a line into whitespace-separated tokens, honoring double quotes
/// inside a `key="..."` value.
fn tokenize(line: &str) -> Result<Vec<String>, String> {
    let mut tokens = Vec::new();
    let mut chars = line.chars().peekable();
    loop {
        while chars.peek().is_some_and(|c| c.is_whitespace()) {
            chars.next();
        }
        if chars.peek().is_none() {
            return Ok(tokens);
        }
        let mut tok = String::new();
        while let Some(&c) = chars.peek() {
            if c.is_whitespace() {
                break;
            }
            chars.next();
            if c != '"' {
                tok.push(c);
                continue;
            }
            // Quoted section; keep an opening marker so the value can be
            // told apart from a literal.
            tok.push('\u{0}');
            loop {
                match chars.next() {
                    Some('\\') => match chars.next() {
                        Some(e) => tok.push(e),
                        None => return Err("dangling escape".into()),
                    },
                    Some('"') => break,
                    Some(other) => tok.push(other),
                    None => return Err("unterminated quote".into()),
                }
            }
        }
        tokens.push(tok);
    }
}

pub fn parse_trace_line(line: &str, line_no: usize) -> Result<ParsedRecord, TraceParseError> {
    let err = |message: String| TraceParseError { line: line_no, message };
    let tokens = tokenize(line).map_err(err)?;
    let mut it = tokens.into_iter();
    let t = it
        .next()
        .and_then(|s| s.strip_prefix("t=").and_then(|v| v.parse().ok()))
        .ok_or_else(|| err("expected t=<ms>".into()))?;
    let seq = it
        .next()
        .and_then(|s| s.strip_prefix("seq=").and_then(|v| v.parse().ok()))
        .ok_or_else(|| err("expected seq=<n>".into()))?;
    let kind = it.next().ok_or_else(|| err("missing record kind".into()))?;
    if kind.is_empty() || !kind.chars().all(|c| c.is_ascii_uppercase() || c == '_') {
        return Err(err(format!("bad record kind `{kind}`")));
    }
    let mut attrs = Vec::new();
    for tok in it {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| err(format!("expected key=value, got `{}`", tok.replace('\u{0}', "\""))))?;
        attrs.push((k.to_owned(), v.replace('\u{0}', "")));
    }
    Ok(ParsedRecord { t, seq, kind, attrs })
}

/// Parses a whole trace file; blank lines are skipped.
pub fn parse_trace(text: &str) -> Result<Vec<ParsedRecord>, Vec<TraceParseError>> {
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_trace_line(line, i + 1) {
            Ok(r) => records.push(r),
            Err(e) => errors.push(e),
        }
    }
    if errors.is_empty() {
        Ok(records)
    } else {
        Err(errors)
    }
}
