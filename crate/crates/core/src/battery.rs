//! Series pack under constant-current charging with per-cell cut-off.
//!
//! Cells share one parameter set. Open-circuit voltage is linear in SOC and
//! the terminal voltage adds an ohmic drop while current flows. A cell whose
//! rest voltage reaches `v_max` is bypassed so the remaining cells keep
//! charging on the series string.

use thiserror::Error;

const MS_PER_HOUR: f64 = 3_600_000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BatteryError {
    #[error("soc {0} outside [0, 1]")]
    Domain(f64),
    #[error("invalid cell parameters: {0}")]
    InvalidParams(&'static str),
    #[error("invalid pack: {0}")]
    InvalidPack(&'static str),
    #[error("recursion depth exceeded {max_depth} with {active} cell(s) still charging")]
    DepthExceeded { max_depth: usize, active: usize },
    #[error("charge records out of order at index {index}")]
    UnorderedTrace { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellParams {
    pub capacity_ah: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub r_int: f64,
}

impl CellParams {
    pub fn new(capacity_ah: f64, v_min: f64, v_max: f64, r_int: f64) -> Result<Self, BatteryError> {
        if !(capacity_ah > 0.0 && capacity_ah.is_finite()) {
            return Err(BatteryError::InvalidParams("capacity must be positive"));
        }
        if !(v_max > v_min) {
            return Err(BatteryError::InvalidParams("v_max must exceed v_min"));
        }
        if !(r_int >= 0.0) {
            return Err(BatteryError::InvalidParams("internal resistance must be non-negative"));
        }
        Ok(Self {
            capacity_ah,
            v_min,
            v_max,
            r_int,
        })
    }
}

impl Default for CellParams {
    fn default() -> Self {
        Self {
            capacity_ah: 50.0,
            v_min: 3.0,
            v_max: 4.2,
            r_int: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellState {
    pub soc: f64,
    pub bypassed: bool,
}

impl CellState {
    pub fn new(soc: f64) -> Result<Self, BatteryError> {
        if !(0.0..=1.0).contains(&soc) {
            return Err(BatteryError::Domain(soc));
        }
        Ok(Self { soc, bypassed: false })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PackState {
    pub params: CellParams,
    pub cells: Vec<CellState>,
    /// Series current through the non-bypassed cells, amperes.
    pub current: f64,
}

impl PackState {
    pub fn new(params: CellParams, socs: &[f64], current: f64) -> Result<Self, BatteryError> {
        if socs.is_empty() {
            return Err(BatteryError::InvalidPack("at least one cell required"));
        }
        if !(current >= 0.0) {
            return Err(BatteryError::InvalidPack("current must be non-negative"));
        }
        let cells = socs.iter().map(|&s| CellState::new(s)).collect::<Result<_, _>>()?;
        Ok(Self { params, cells, current })
    }

    pub fn active_count(&self) -> usize {
        self.cells.iter().filter(|c| !c.bypassed).count()
    }

    pub fn all_bypassed(&self) -> bool {
        self.cells.iter().all(|c| c.bypassed)
    }

    pub fn with_current(mut self, current: f64) -> Self {
        self.current = current;
        self
    }
}

/// One integration step as seen from the pack terminals.
#[derive(Debug, Clone, PartialEq)]
pub struct ChargeStepRecord {
    /// End of the step, milliseconds.
    pub t: u64,
    pub dt: u64,
    pub current: f64,
    /// Voltage each cell presented during the step.
    pub per_cell_voltage: Vec<f64>,
    /// SOC at the end of the step.
    pub per_cell_soc: Vec<f64>,
    /// Whether each cell carried current during the step.
    pub per_cell_active: Vec<bool>,
    pub phase: ChargePhase,
}

impl ChargeStepRecord {
    /// Sum of the voltages of the cells that carried current.
    pub fn pack_voltage(&self) -> f64 {
        self.per_cell_voltage
            .iter()
            .zip(&self.per_cell_active)
            .filter(|(_, &a)| a)
            .map(|(v, _)| v)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChargePhase {
    /// Constant current, at least one cell still on the string.
    Cc,
    /// Every cell bypassed at the end of the step.
    Cutoff,
}

impl ChargePhase {
    pub fn as_str(self) -> &'static str {
        match self {
            ChargePhase::Cc => "cc",
            ChargePhase::Cutoff => "cutoff",
        }
    }
}

pub fn ocv(soc: f64, params: &CellParams) -> Result<f64, BatteryError> {
    if !(0.0..=1.0).contains(&soc) {
        return Err(BatteryError::Domain(soc));
    }
    Ok(linear_ocv(soc, params))
}

fn linear_ocv(soc: f64, params: &CellParams) -> f64 {
    params.v_min + (params.v_max - params.v_min) * soc
}

pub fn terminal_voltage(cell: &CellState, params: &CellParams, current: f64) -> f64 {
    let rest = linear_ocv(cell.soc, params);
    if cell.bypassed {
        rest
    } else {
        rest + current * params.r_int
    }
}

fn at_cutoff(cell: &CellState, params: &CellParams) -> bool {
    // Cut-off compares the rest voltage, so a full cell terminates at v_max.
    cell.soc >= 1.0 || terminal_voltage(cell, params, 0.0) >= params.v_max
}

/// Advances every non-bypassed cell by `dt` milliseconds. A non-positive
/// `dt` leaves the pack unchanged.
pub fn step_charge(pack: &PackState, dt: f64) -> PackState {
    step_with_record(pack, dt, 0, 0).0
}

fn step_with_record(pack: &PackState, dt: f64, t_end: u64, dt_ms: u64) -> (PackState, ChargeStepRecord) {
    let mut next = pack.clone();
    let params = pack.params;
    let mut voltages = Vec::with_capacity(pack.cells.len());
    let mut active = Vec::with_capacity(pack.cells.len());
    for cell in &mut next.cells {
        if cell.bypassed || !(dt > 0.0) {
            voltages.push(terminal_voltage(cell, &params, pack.current));
            active.push(false);
            continue;
        }
        cell.soc = (cell.soc + pack.current * dt / (params.capacity_ah * MS_PER_HOUR)).min(1.0);
        voltages.push(terminal_voltage(cell, &params, pack.current));
        active.push(true);
        if at_cutoff(cell, &params) {
            cell.bypassed = true;
        }
    }
    let phase = if next.all_bypassed() {
        ChargePhase::Cutoff
    } else {
        ChargePhase::Cc
    };
    let record = ChargeStepRecord {
        t: t_end,
        dt: dt_ms,
        current: pack.current,
        per_cell_voltage: voltages,
        per_cell_soc: next.cells.iter().map(|c| c.soc).collect(),
        per_cell_active: active,
        phase,
    };
    (next, record)
}

/// Single step that also returns the trace row, used by the engine.
pub fn step_charge_recorded(pack: &PackState, dt_ms: u64, t_end: u64) -> (PackState, ChargeStepRecord) {
    step_with_record(pack, dt_ms as f64, t_end, dt_ms)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesChargeOutcome {
    pub pack: PackState,
    pub records: Vec<ChargeStepRecord>,
    /// Number of recursion levels entered.
    pub depth: usize,
    /// Cell indices in the order they were bypassed. Cells cut off in the
    /// same step are ordered by their SOC before that step, highest first.
    pub bypass_order: Vec<usize>,
}

/// Charges the pack level by level: each level steps the active set until at
/// least one more cell is bypassed, then recurses on what is left.
pub fn charge_series_recursive(
    pack: &PackState,
    dt: u64,
    max_depth: usize,
) -> Result<SeriesChargeOutcome, BatteryError> {
    if dt == 0 {
        return Err(BatteryError::InvalidPack("dt must be positive"));
    }
    let mut out = SeriesChargeOutcome {
        pack: pack.clone(),
        records: Vec::new(),
        depth: 0,
        bypass_order: Vec::new(),
    };
    charge_level(&mut out, dt, 0, max_depth)?;
    Ok(out)
}

fn charge_level(out: &mut SeriesChargeOutcome, dt: u64, depth: usize, max_depth: usize) -> Result<(), BatteryError> {
    if out.pack.all_bypassed() {
        return Ok(());
    }
    if depth >= max_depth {
        return Err(BatteryError::DepthExceeded {
            max_depth,
            active: out.pack.active_count(),
        });
    }
    out.depth = depth + 1;
    let mut t = out.records.last().map_or(0, |r| r.t);
    loop {
        t += dt;
        let (next, record) = step_charge_recorded(&out.pack, dt, t);
        let progressed = next.cells.iter().zip(&out.pack.cells).any(|(a, b)| a.soc != b.soc);
        let mut newly: Vec<usize> = next
            .cells
            .iter()
            .zip(&out.pack.cells)
            .enumerate()
            .filter(|(_, (a, b))| a.bypassed && !b.bypassed)
            .map(|(i, _)| i)
            .collect();
        newly.sort_by(|&a, &b| out.pack.cells[b].soc.total_cmp(&out.pack.cells[a].soc));
        out.pack = next;
        out.records.push(record);
        if !newly.is_empty() {
            out.bypass_order.extend(newly);
            break;
        }
        // A stalled step (e.g. zero current) cannot bypass anything; hand it
        // to the next level so the depth bound reports it.
        if !progressed {
            break;
        }
    }
    charge_level(out, dt, depth + 1, max_depth)
}

/// Energy pushed into the pack, watt-hours.
pub fn energy_delivered(records: &[ChargeStepRecord]) -> Result<f64, BatteryError> {
    let mut total = 0.0;
    for (i, r) in records.iter().enumerate() {
        if i > 0 && r.t < records[i - 1].t {
            return Err(BatteryError::UnorderedTrace { index: i });
        }
        total += r.pack_voltage() * r.current * r.dt as f64 / MS_PER_HOUR;
    }
    Ok(total.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_pack(socs: &[f64]) -> PackState {
        PackState::new(CellParams::default(), socs, 10.0).unwrap()
    }

    #[test]
    fn ocv_endpoints_and_midpoint() {
        let p = CellParams::default();
        assert_eq!(ocv(0.0, &p).unwrap(), 3.0);
        assert_eq!(ocv(1.0, &p).unwrap(), 4.2);
        assert!((ocv(0.5, &p).unwrap() - 3.6).abs() < 1e-12);
        assert_eq!(ocv(1.2, &p), Err(BatteryError::Domain(1.2)));
        assert_eq!(ocv(-0.1, &p), Err(BatteryError::Domain(-0.1)));
    }

    #[test]
    fn terminal_voltage_cases() {
        let p = CellParams::default();
        let c = CellState::new(0.5).unwrap();
        assert!((terminal_voltage(&c, &p, 0.0) - 3.6).abs() < 1e-12);
        assert!((terminal_voltage(&c, &p, 10.0) - 4.1).abs() < 1e-12);
        let b = CellState { soc: 0.5, bypassed: true };
        assert!((terminal_voltage(&b, &p, 10.0) - 3.6).abs() < 1e-12);
    }

    #[test]
    fn zero_current_leaves_pack_unchanged() {
        let pack = default_pack(&[0.2, 0.3]).with_current(0.0);
        assert_eq!(step_charge(&pack, 100.0), pack);
    }

    #[test]
    fn one_amp_hour_fills_one_ah_cell() {
        let params = CellParams::new(1.0, 3.0, 4.2, 0.05).unwrap();
        let pack = PackState::new(params, &[0.0], 1.0).unwrap();
        let next = step_charge(&pack, 3_600_000.0);
        assert_eq!(next.cells[0].soc, 1.0);
        assert!(next.cells[0].bypassed);
    }

    #[test]
    fn bypassed_cells_are_frozen() {
        let mut pack = default_pack(&[0.5, 0.5]);
        pack.cells[1].bypassed = true;
        let next = step_charge(&pack, 1000.0);
        assert_eq!(next.cells[1], pack.cells[1]);
        assert!(next.cells[0].soc > 0.5);
    }

    #[test]
    fn already_full_pack_is_base_case() {
        let mut pack = default_pack(&[1.0, 1.0]);
        for c in &mut pack.cells {
            c.bypassed = true;
        }
        let out = charge_series_recursive(&pack, 100, 2).unwrap();
        assert_eq!(out.pack, pack);
        assert!(out.records.is_empty());
        assert_eq!(out.depth, 0);
    }

    #[test]
    fn zero_current_exceeds_depth() {
        let pack = default_pack(&[0.2, 0.3]).with_current(0.0);
        let err = charge_series_recursive(&pack, 100, 2).unwrap_err();
        assert_eq!(err, BatteryError::DepthExceeded { max_depth: 2, active: 2 });
    }

    #[test]
    fn depth_bound_shorter_than_cells_fails() {
        let pack = default_pack(&[0.98, 0.99, 0.995]);
        assert!(matches!(
            charge_series_recursive(&pack, 1000, 2),
            Err(BatteryError::DepthExceeded { .. })
        ));
    }

    #[test]
    fn equal_socs_bypass_together() {
        let pack = default_pack(&[0.99, 0.99, 0.99]);
        let out = charge_series_recursive(&pack, 100, 3).unwrap();
        assert_eq!(out.depth, 1);
        assert_eq!(out.bypass_order, vec![0, 1, 2]);
    }

    #[test]
    fn energy_examples() {
        assert_eq!(energy_delivered(&[]).unwrap(), 0.0);
        let one = ChargeStepRecord {
            t: 3_600_000,
            dt: 3_600_000,
            current: 10.0,
            per_cell_voltage: vec![4.0],
            per_cell_soc: vec![0.5],
            per_cell_active: vec![true],
            phase: ChargePhase::Cc,
        };
        assert!((energy_delivered(std::slice::from_ref(&one)).unwrap() - 40.0).abs() < 1e-12);
        let mut earlier = one.clone();
        earlier.t = 10;
        assert_eq!(
            energy_delivered(&[one, earlier]),
            Err(BatteryError::UnorderedTrace { index: 1 })
        );
    }

    /// Independent explicit-Euler integration of one cell's SOC, dt in ms.
    fn euler_fill_time_ms(soc0: f64, current: f64, capacity_ah: f64, dt: f64) -> f64 {
        let rate = current / (capacity_ah * 3600.0 * 1000.0);
        let mut soc = soc0;
        let mut t = 0.0;
        while soc < 1.0 {
            soc += rate * dt;
            t += dt;
        }
        t
    }

    #[test]
    fn single_cell_fills_in_five_hours() {
        let params = CellParams::default();
        let pack = PackState::new(params, &[0.0], 10.0).unwrap();
        let out = charge_series_recursive(&pack, 100, 1).unwrap();
        assert_eq!(out.depth, 1);
        let t_end = out.records.last().unwrap().t as f64;
        let oracle = euler_fill_time_ms(0.0, 10.0, 50.0, 1.0);
        assert!((t_end - oracle).abs() <= 100.0, "{t_end} vs {oracle}");
        assert!((t_end - 5.0 * 3_600_000.0).abs() <= 100.0);
        assert_eq!(out.pack.cells[0].soc, 1.0);
    }

    #[test]
    fn session_energy_matches_capacity_times_mean_ocv() {
        // Without ohmic loss the delivered energy is capacity * dSOC * mean OCV.
        let params = CellParams::new(50.0, 3.0, 4.2, 0.0).unwrap();
        let socs = [0.1, 0.4, 0.7, 0.9];
        let pack = PackState::new(params, &socs, 10.0).unwrap();
        let out = charge_series_recursive(&pack, 100, 4).unwrap();
        let got = energy_delivered(&out.records).unwrap();
        // mean OCV over [s, 1] is v_min + span * (s + 1) / 2
        let direct: f64 = socs
            .iter()
            .map(|&s| params.capacity_ah * (1.0 - s) * (params.v_min + (params.v_max - params.v_min) * (s + 1.0) / 2.0))
            .sum();
        assert!((got - direct).abs() / direct < 0.02, "{got} vs {direct}");
    }

    #[test]
    fn energy_with_ohmic_loss_matches_quadrature() {
        let params = CellParams::default();
        let pack = PackState::new(params, &[0.6], 10.0).unwrap();
        let out = charge_series_recursive(&pack, 100, 1).unwrap();
        let got = energy_delivered(&out.records).unwrap();
        // Closed-form integral of (ocv + I r) I dt over the fill time.
        let t_h = 50.0 * 0.4 / 10.0;
        let mean_v = 3.0 + 1.2 * (0.6 + 1.0) / 2.0 + 10.0 * 0.05;
        let expected = mean_v * 10.0 * t_h;
        assert!((got - expected).abs() / expected < 1e-3, "{got} vs {expected}");
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn soc_nondecreasing_and_bounded(
                socs in prop::collection::vec(0.0f64..=1.0, 1..6),
                current in 0.0f64..200.0,
                dt in 1.0f64..100_000.0,
                steps in 1usize..50,
            ) {
                let mut pack = PackState::new(CellParams::default(), &socs, current).unwrap();
                for _ in 0..steps {
                    let next = step_charge(&pack, dt);
                    for (a, b) in next.cells.iter().zip(&pack.cells) {
                        prop_assert!(a.soc >= b.soc);
                        prop_assert!((0.0..=1.0).contains(&a.soc));
                        prop_assert!(a.bypassed || !b.bypassed);
                    }
                    pack = next;
                }
            }

            #[test]
            fn half_steps_agree_with_full_step(
                socs in prop::collection::vec(0.0f64..0.95, 1..5),
                current in 0.0f64..50.0,
                dt in 1.0f64..10_000.0,
            ) {
                let pack = PackState::new(CellParams::default(), &socs, current).unwrap();
                let full = step_charge(&pack, dt);
                let halves = step_charge(&step_charge(&pack, dt / 2.0), dt / 2.0);
                for (a, b) in full.cells.iter().zip(&halves.cells) {
                    prop_assert!((a.soc - b.soc).abs() <= 1e-6);
                }
            }

            #[test]
            fn terminal_voltage_monotone_along_trajectory(soc0 in 0.0f64..0.99, current in 0.1f64..50.0) {
                let mut pack = PackState::new(CellParams::default(), &[soc0], current).unwrap();
                let mut last = terminal_voltage(&pack.cells[0], &pack.params, current);
                while !pack.all_bypassed() {
                    pack = step_charge(&pack, 60_000.0);
                    let mut probe = pack.cells[0];
                    probe.bypassed = false;
                    let v = terminal_voltage(&probe, &pack.params, current);
                    prop_assert!(v >= last);
                    last = v;
                }
            }

            #[test]
            fn recursion_depth_bounded_by_cells(socs in prop::collection::vec(0.9f64..=1.0, 1..6)) {
                let pack = PackState::new(CellParams::default(), &socs, 10.0).unwrap();
                let out = charge_series_recursive(&pack, 1000, socs.len()).unwrap();
                prop_assert!(out.depth <= socs.len());
                prop_assert!(out.pack.all_bypassed());
                // Bypass order follows descending initial SOC.
                for w in out.bypass_order.windows(2) {
                    prop_assert!(socs[w[0]] >= socs[w[1]]);
                }
            }
        }
    }
}
