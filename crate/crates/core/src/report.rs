//! Run summaries and battery CSV output.

use std::fmt::{self, Write as _};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::battery::ChargeStepRecord;
use crate::controller::ControllerPhase;
use crate::engine::{RecordView, SimTime};

const MS_PER_HOUR: f64 = 3_600_000.0;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("charge record at t={t} ms has {found} cell(s), expected {expected}")]
    CellCount { t: SimTime, found: usize, expected: usize },
    #[error("record at t={t} ms: bad `{key}` attribute")]
    BadAttribute { t: SimTime, key: &'static str },
    #[error("unknown final phase `{0}`")]
    UnknownPhase(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub sessions: u64,
    pub energy_wh: f64,
    pub damage_events: u64,
    pub alarms: u64,
    pub safe_releases: u64,
    pub final_phase: ControllerPhase,
    pub duration_ms: SimTime,
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "sessions={}", self.sessions)?;
        writeln!(f, "energy_wh={:.6}", self.energy_wh)?;
        writeln!(f, "damage_events={}", self.damage_events)?;
        writeln!(f, "alarms={}", self.alarms)?;
        writeln!(f, "safe_releases={}", self.safe_releases)?;
        writeln!(f, "final_phase={}", self.final_phase)?;
        write!(f, "duration_ms={}", self.duration_ms)
    }
}

/// Accumulates a [`RunSummary`] one record at a time. Works off the
/// rendered attribute text, so a live run and a trace read back from disk
/// agree exactly.
#[derive(Debug, Clone)]
pub struct SummaryBuilder {
    summary: RunSummary,
}

impl Default for SummaryBuilder {
    fn default() -> Self {
        Self {
            summary: RunSummary {
                sessions: 0,
                energy_wh: 0.0,
                damage_events: 0,
                alarms: 0,
                safe_releases: 0,
                final_phase: ControllerPhase::Idle,
                duration_ms: 0,
            },
        }
    }
}

impl SummaryBuilder {
    pub fn push<R: RecordView + ?Sized>(&mut self, r: &R) -> Result<(), ReportError> {
        let summary = &mut self.summary;
        summary.duration_ms = r.time();
        match r.kind_name() {
            "CMD" => match r.attr("name").as_deref() {
                Some("BeginSession") => summary.sessions += 1,
                Some("RaiseAlarm") => summary.alarms += 1,
                _ => {}
            },
            "DAMAGE" => summary.damage_events += 1,
            "SAFE_RELEASE" => summary.safe_releases += 1,
            "PHASE" => {
                let to = r.attr("to").ok_or(ReportError::BadAttribute { t: r.time(), key: "to" })?;
                summary.final_phase =
                    ControllerPhase::parse(&to).ok_or_else(|| ReportError::UnknownPhase(to.into_owned()))?;
            }
            "CHARGE" => {
                let num = |key: &'static str| -> Result<f64, ReportError> {
                    r.attr(key)
                        .and_then(|v| v.parse::<f64>().ok())
                        .ok_or(ReportError::BadAttribute { t: r.time(), key })
                };
                summary.energy_wh += num("pack_v")? * num("current")? * num("dt")? / MS_PER_HOUR;
            }
            _ => {}
        }
        Ok(())
    }

    pub fn finish(self) -> RunSummary {
        self.summary
    }
}

pub fn summarize<R: RecordView>(records: &[R]) -> Result<RunSummary, ReportError> {
    let mut builder = SummaryBuilder::default();
    for r in records {
        builder.push(r)?;
    }
    Ok(builder.finish())
}

/// Streams battery rows as CSV with `cells` voltage and SOC columns.
pub struct BatteryCsvWriter<W: Write> {
    out: W,
    cells: usize,
}

impl<W: Write> BatteryCsvWriter<W> {
    pub fn new(mut out: W, cells: usize) -> io::Result<Self> {
        let mut header = String::from("t_ms,current_a");
        for i in 1..=cells {
            let _ = write!(header, ",v_cell_{i}");
        }
        for i in 1..=cells {
            let _ = write!(header, ",soc_cell_{i}");
        }
        writeln!(out, "{header},phase")?;
        Ok(Self { out, cells })
    }

    pub fn push(&mut self, r: &ChargeStepRecord) -> Result<(), CsvRowError> {
        for found in [r.per_cell_voltage.len(), r.per_cell_soc.len()] {
            if found != self.cells {
                return Err(CsvRowError::CellCount {
                    t: r.t,
                    found,
                    expected: self.cells,
                });
            }
        }
        let mut row = format!("{},{:.6}", r.t, r.current);
        for v in r.per_cell_voltage.iter().chain(&r.per_cell_soc) {
            let _ = write!(row, ",{v:.6}");
        }
        writeln!(self.out, "{row},{}", r.phase.as_str())?;
        Ok(())
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

#[derive(Debug, Error)]
pub enum CsvRowError {
    #[error("charge record at t={t} ms has {found} cell(s), expected {expected}")]
    CellCount { t: SimTime, found: usize, expected: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// CSV text for `records` with `cells` voltage and SOC columns.
pub fn render_battery_csv(records: &[ChargeStepRecord], cells: usize) -> Result<String, ReportError> {
    let mut writer = BatteryCsvWriter::new(Vec::new(), cells).expect("writing to memory");
    for r in records {
        writer.push(r).map_err(|e| match e {
            CsvRowError::CellCount { t, found, expected } => ReportError::CellCount { t, found, expected },
            CsvRowError::Io(_) => unreachable!("writing to memory"),
        })?;
    }
    let bytes = writer.finish().expect("writing to memory");
    Ok(String::from_utf8(bytes).expect("CSV is ASCII"))
}

pub fn write_battery_csv(records: &[ChargeStepRecord], cells: usize, path: &Path) -> Result<(), ReportError> {
    let text = render_battery_csv(records, cells)?;
    fs::write(path, text).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })
}
