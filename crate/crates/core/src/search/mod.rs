//! Exhaustive crowbar parameter search.
//!
//! Every trial resets the target, waits for the MBR read response, fires the
//! crowbar `N` cycles later for `M` cycles and records the first command the
//! target issues afterwards. The visit order is:
//!
//! ```text
//! for N in n_range (forward or backward):
//!     for M in m_range ascending:
//!         trial(N, M)
//!         if success and stop_on_success: stop
//!         if halt: break        # power cycle, next N, M back to start
//! ```

mod log;

use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::emmc::{GO_IDLE_STATE, READ_SINGLE_BLOCK};
use crate::seed;
use crate::target::{boot, BootTrace, EmmcImage, FaultProfile, GlitchSetting, MbrFields, SimError};

pub use log::{read_summary, read_trial_log, write_summary, write_trial_log};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid search config: {0}")]
    Config(String),
    #[error("trial N={n} M={m} failed: {source}")]
    Trial {
        n: u64,
        m: u64,
        #[source]
        source: SimError,
    },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Direction {
    Forward,
    /// Start from the far end of the N range.
    #[default]
    Backward,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub f_mhz: f64,
    pub n_range: RangeInclusive<u64>,
    pub n_direction: Direction,
    pub m_range: RangeInclusive<u64>,
    /// Glitch cycles after the trigger without a command before a trial is
    /// declared halted.
    pub timeout_cycles: u64,
    pub stochastic: bool,
    pub seed: u64,
    pub stop_on_success: bool,
}

impl SearchConfig {
    /// Default timeout: covers the longest reboot spin at a divider of 9 plus
    /// the whole 36 ms window at 12 MHz.
    pub const DEFAULT_TIMEOUT: u64 = 16_000_000;

    pub fn new(f_mhz: f64, n_range: RangeInclusive<u64>, m_range: RangeInclusive<u64>) -> Self {
        Self {
            f_mhz,
            n_range,
            n_direction: Direction::default(),
            m_range,
            timeout_cycles: Self::DEFAULT_TIMEOUT,
            stochastic: false,
            seed: 0,
            stop_on_success: false,
        }
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        if !(self.f_mhz > 0.0 && self.f_mhz.is_finite()) {
            return Err(SearchError::Config(format!("frequency must be positive, got {}", self.f_mhz)));
        }
        if self.n_range.is_empty() {
            return Err(SearchError::Config("empty N range".into()));
        }
        if self.m_range.is_empty() {
            return Err(SearchError::Config("empty M range".into()));
        }
        let reach = self.n_range.end().saturating_add(*self.m_range.end());
        if self.timeout_cycles <= reach {
            return Err(SearchError::Config(format!(
                "timeout {} must exceed max N + max M = {reach}",
                self.timeout_cycles
            )));
        }
        Ok(())
    }

    /// N values in visit order.
    pub fn n_order(&self) -> Vec<u64> {
        match self.n_direction {
            Direction::Forward => self.n_range.clone().collect(),
            Direction::Backward => self.n_range.clone().rev().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialOutcome {
    Success,
    Reboot,
    Halt,
    #[serde(rename = "unknown")]
    UnknownState,
}

impl TrialOutcome {
    pub fn name(self) -> &'static str {
        match self {
            TrialOutcome::Success => "success",
            TrialOutcome::Reboot => "reboot",
            TrialOutcome::Halt => "halt",
            TrialOutcome::UnknownState => "unknown",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialRecord {
    pub n_offset: u64,
    pub m_width: u64,
    pub outcome: TrialOutcome,
    /// Index of the first command seen after the size check; `None` on halt.
    pub next_command_index: Option<u8>,
    /// Cycles from the trigger to that command, or the timeout on halt.
    pub elapsed_cycles: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowSummary {
    pub parameter: String,
    pub min: u64,
    pub max: u64,
}

/// First command after the size check, with its cycle offset from the
/// trigger, if it arrives within `timeout`.
fn next_command(trace: &BootTrace, timeout: Option<u64>) -> Option<(u8, u32, u64)> {
    let event = trace.after_check().find(|e| e.frame.is_command())?;
    let elapsed = event.cycle - trace.trigger_cycle;
    match timeout {
        Some(limit) if elapsed > limit => None,
        _ => Some((event.frame.index(), event.frame.argument(), elapsed)),
    }
}

fn classify_next(next: Option<(u8, u32, u64)>, fields: &MbrFields) -> TrialOutcome {
    match next {
        None => TrialOutcome::Halt,
        Some((READ_SINGLE_BLOCK, arg, _)) if arg == fields.bldr_offset => TrialOutcome::Success,
        Some((GO_IDLE_STATE, _, _)) => TrialOutcome::Reboot,
        Some(_) => TrialOutcome::UnknownState,
    }
}

/// Classify the first command the target issues after the size check.
pub fn classify_outcome(trace: &BootTrace, fields: &MbrFields) -> TrialOutcome {
    classify_next(next_command(trace, None), fields)
}

/// As [`classify_outcome`], treating anything later than `timeout` glitch
/// cycles after the trigger as silence.
pub fn classify_with_timeout(trace: &BootTrace, fields: &MbrFields, timeout: u64) -> TrialOutcome {
    classify_next(next_command(trace, Some(timeout)), fields)
}

/// One reset-and-boot at `(n, m)`. `m = 0` leaves the crowbar off.
pub fn run_trial(
    config: &SearchConfig,
    n: u64,
    m: u64,
    image: &EmmcImage,
    profile: &FaultProfile,
) -> Result<TrialRecord, SearchError> {
    if !config.n_range.contains(&n) || !config.m_range.contains(&m) {
        return Err(SearchError::Config(format!("(N={n}, M={m}) lies outside the configured ranges")));
    }
    let trial_seed = seed::trial_seed(config.seed, n, m, 0);
    let profile = FaultProfile { seed: trial_seed, ..profile.clone() };
    let glitch = match m {
        0 => None,
        _ => Some(GlitchSetting::new(n, m, config.f_mhz).map_err(|source| SearchError::Trial { n, m, source })?),
    };
    let trace = boot(image, glitch.as_ref(), &profile, config.stochastic)
        .map_err(|source| SearchError::Trial { n, m, source })?;
    let next = next_command(&trace, Some(config.timeout_cycles));
    Ok(TrialRecord {
        n_offset: n,
        m_width: m,
        outcome: classify_next(next, &trace.mbr),
        next_command_index: next.map(|(index, _, _)| index),
        elapsed_cycles: next.map_or(config.timeout_cycles, |(_, _, elapsed)| elapsed),
        seed: trial_seed,
    })
}

/// All M trials for one N. Returns the records and whether the search
/// should stop.
fn sweep_column(
    config: &SearchConfig,
    n: u64,
    image: &EmmcImage,
    profile: &FaultProfile,
) -> Result<(Vec<TrialRecord>, bool), SearchError> {
    let mut records = Vec::new();
    for m in config.m_range.clone() {
        let record = run_trial(config, n, m, image, profile)?;
        records.push(record);
        match record.outcome {
            TrialOutcome::Success if config.stop_on_success => return Ok((records, true)),
            TrialOutcome::Halt => break,
            _ => {}
        }
    }
    Ok((records, false))
}

/// Single-threaded sweep in visit order.
pub fn sweep_serial(
    config: &SearchConfig,
    image: &EmmcImage,
    profile: &FaultProfile,
) -> Result<Vec<TrialRecord>, SearchError> {
    config.validate()?;
    profile.validate()?;
    let mut records = Vec::new();
    for n in config.n_order() {
        let (column, stop) = sweep_column(config, n, image, profile)?;
        records.extend(column);
        if stop {
            break;
        }
    }
    Ok(records)
}

/// Sweep with N columns evaluated in parallel; the result is identical to
/// [`sweep_serial`]. Early stopping falls back to the serial path.
pub fn sweep(
    config: &SearchConfig,
    image: &EmmcImage,
    profile: &FaultProfile,
) -> Result<Vec<TrialRecord>, SearchError> {
    if config.stop_on_success {
        return sweep_serial(config, image, profile);
    }
    config.validate()?;
    profile.validate()?;
    let columns = config
        .n_order()
        .into_par_iter()
        .map(|n| sweep_column(config, n, image, profile).map(|(column, _)| column))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(columns.into_iter().flatten().collect())
}

/// Cycles of an `f_mhz` clock that fit in `window_ms`, rounded up.
pub fn estimate_n_upper_bound(window_ms: f64, f_mhz: f64) -> Result<u64, SearchError> {
    if !(window_ms > 0.0 && f_mhz > 0.0 && window_ms.is_finite() && f_mhz.is_finite()) {
        return Err(SearchError::Config("window and frequency must be positive".into()));
    }
    let cycles = window_ms * f_mhz * 1000.0;
    // Absorb representation error so exact products do not round up.
    let nearest = cycles.round();
    if (cycles - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        Ok(nearest as u64)
    } else {
        Ok(cycles.ceil() as u64)
    }
}

/// Fraction of `trials` stochastic boots at `(n, m)` that reach the
/// bootloader. Trial `i` runs with seed `trial_seed(profile.seed, n, m, i)`.
pub fn reproduce_rate(
    image: &EmmcImage,
    profile: &FaultProfile,
    f_mhz: f64,
    n: u64,
    m: u64,
    trials: u32,
) -> Result<f64, SearchError> {
    if trials == 0 {
        return Err(SearchError::Config("at least one trial is required".into()));
    }
    profile.validate()?;
    let setting = GlitchSetting::new(n, m, f_mhz)?;
    let successes = (0..trials)
        .into_par_iter()
        .map(|i| {
            let p = FaultProfile { seed: seed::trial_seed(profile.seed, n, m, i as u64), ..profile.clone() };
            let trace = boot(image, Some(&setting), &p, true)?;
            Ok(classify_outcome(&trace, &trace.mbr) == TrialOutcome::Success)
        })
        .collect::<Result<Vec<bool>, SimError>>()?
        .into_iter()
        .filter(|&s| s)
        .count();
    Ok(successes as f64 / trials as f64)
}

/// Min and max of N and M over the successful trials.
pub fn summarize_windows(records: &[TrialRecord]) -> Vec<WindowSummary> {
    let hits: Vec<&TrialRecord> = records.iter().filter(|r| r.outcome == TrialOutcome::Success).collect();
    if hits.is_empty() {
        return Vec::new();
    }
    let span = |name: &str, get: fn(&TrialRecord) -> u64| WindowSummary {
        parameter: name.to_owned(),
        min: hits.iter().map(|r| get(r)).min().expect("non-empty"),
        max: hits.iter().map(|r| get(r)).max().expect("non-empty"),
    };
    vec![span("N", |r| r.n_offset), span("M", |r| r.m_width)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::target::{apply_glitch_fault, FaultEffect};

    fn config(n: RangeInclusive<u64>, m: RangeInclusive<u64>) -> SearchConfig {
        SearchConfig::new(12.0, n, m)
    }

    fn image() -> EmmcImage {
        EmmcImage::with_bootloader(1, 0x1000)
    }

    #[test]
    fn single_trials() {
        let p = FaultProfile::measured_window();
        let c = config(0..=50_000, 0..=100);
        let hit = run_trial(&c, 40810, 50, &image(), &p).unwrap();
        assert_eq!(hit.outcome, TrialOutcome::Success);
        assert_eq!(hit.next_command_index, Some(READ_SINGLE_BLOCK));
        let early = run_trial(&c, 0, 1, &image(), &p).unwrap();
        assert_eq!(early.outcome, TrialOutcome::Reboot);
        assert_eq!(early.next_command_index, Some(GO_IDLE_STATE));
        let long = run_trial(&c, 40810, 60, &image(), &p).unwrap();
        assert_eq!(long.outcome, TrialOutcome::Halt);
        assert_eq!(long.next_command_index, None);
        assert_eq!(long.elapsed_cycles, c.timeout_cycles);
    }

    #[test]
    fn trial_outside_ranges_is_rejected() {
        let c = config(10..=20, 0..=5);
        assert!(matches!(run_trial(&c, 9, 1, &image(), &FaultProfile::measured_window()), Err(SearchError::Config(_))));
    }

    #[test]
    fn empty_image_is_a_trial_failure_not_a_halt() {
        let c = config(10..=20, 0..=5);
        let empty = EmmcImage::from_bytes(Vec::new()).unwrap();
        let err = run_trial(&c, 10, 1, &empty, &FaultProfile::measured_window()).unwrap_err();
        assert!(matches!(err, SearchError::Trial { source: SimError::EmptyImage, .. }));
    }

    #[test]
    fn short_timeout_turns_reboot_into_halt() {
        let p = FaultProfile::measured_window();
        let mut c = config(0..=10, 0..=1);
        c.timeout_cycles = 100;
        let r = run_trial(&c, 0, 1, &image(), &p).unwrap();
        assert_eq!(r.outcome, TrialOutcome::Halt);
    }

    #[test]
    fn golden_visit_order() {
        let p = FaultProfile { check_cycle: 1_000, ..FaultProfile::measured_window() };
        let mut c = config(1..=2, 0..=1);
        c.n_direction = Direction::Forward;
        let visited: Vec<(u64, u64)> =
            sweep_serial(&c, &image(), &p).unwrap().iter().map(|r| (r.n_offset, r.m_width)).collect();
        assert_eq!(visited, vec![(1, 0), (1, 1), (2, 0), (2, 1)]);
        c.n_direction = Direction::Backward;
        let visited: Vec<(u64, u64)> =
            sweep_serial(&c, &image(), &p).unwrap().iter().map(|r| (r.n_offset, r.m_width)).collect();
        assert_eq!(visited, vec![(2, 0), (2, 1), (1, 0), (1, 1)]);
    }

    #[test]
    fn halt_advances_n() {
        let p = FaultProfile { m_min: 2, m_halt: 3, ..FaultProfile::measured_window() };
        let mut c = config(5..=6, 0..=10);
        c.n_direction = Direction::Forward;
        let visited: Vec<(u64, u64)> =
            sweep_serial(&c, &image(), &p).unwrap().iter().map(|r| (r.n_offset, r.m_width)).collect();
        assert_eq!(visited, vec![(5, 0), (5, 1), (5, 2), (5, 3), (6, 0), (6, 1), (6, 2), (6, 3)]);
    }

    #[test]
    fn stop_on_first_success() {
        let p = FaultProfile::measured_window();
        let mut c = config(40_790..=40_830, 0..=100);
        c.stop_on_success = true;
        let records = sweep(&c, &image(), &p).unwrap();
        let last = records.last().unwrap();
        assert_eq!(last.outcome, TrialOutcome::Success);
        assert_eq!((last.n_offset, last.m_width), (40_820, 45));
        assert_eq!(records.iter().filter(|r| r.outcome == TrialOutcome::Success).count(), 1);
    }

    #[test]
    fn parallel_matches_serial() {
        let p = FaultProfile::measured_window();
        let c = config(40_750..=40_870, 0..=70);
        assert_eq!(sweep(&c, &image(), &p).unwrap(), sweep_serial(&c, &image(), &p).unwrap());
    }

    #[test]
    fn successes_match_fault_grid() {
        let p = FaultProfile::measured_window();
        let c = config(40_780..=40_840, 0..=60);
        let records = sweep(&c, &image(), &p).unwrap();
        let found: Vec<(u64, u64)> = records
            .iter()
            .filter(|r| r.outcome == TrialOutcome::Success)
            .map(|r| (r.n_offset, r.m_width))
            .collect();
        let mut expected = Vec::new();
        for n in c.n_order() {
            for m in 1..=60 {
                let g = GlitchSetting::new(n, m, 12.0).unwrap();
                if apply_glitch_fault(&g, &p, false) == FaultEffect::CheckBypass {
                    expected.push((n, m));
                }
            }
        }
        assert_eq!(found, expected);
    }

    #[test]
    fn window_outside_ranges_yields_nothing() {
        let p = FaultProfile::measured_window();
        let c = config(100..=140, 0..=60);
        let records = sweep(&c, &image(), &p).unwrap();
        assert!(records.iter().all(|r| r.outcome != TrialOutcome::Success));
        assert!(summarize_windows(&records).is_empty());
    }

    #[test]
    fn n_upper_bound_arithmetic() {
        assert_eq!(estimate_n_upper_bound(36.0, 12.0).unwrap(), 432_000);
        assert_eq!(estimate_n_upper_bound(1.0, 1.0).unwrap(), 1000);
        assert_eq!(estimate_n_upper_bound(0.5, 12.0).unwrap(), 6000);
        assert_eq!(estimate_n_upper_bound(0.1, 3.0).unwrap(), 300);
        assert_eq!(estimate_n_upper_bound(0.0001, 1.5).unwrap(), 1);
        assert!(estimate_n_upper_bound(0.0, 12.0).is_err());
    }

    #[test]
    fn reproduction_rate_edges() {
        let p = FaultProfile::measured_window();
        let img = EmmcImage::with_bootloader(1, 0xe0);
        assert_eq!(reproduce_rate(&img, &p, 12.0, 40_810, 50, 20).unwrap(), 1.0);
        assert_eq!(reproduce_rate(&img, &p, 12.0, 1_000, 50, 20).unwrap(), 0.0);
        assert!(reproduce_rate(&img, &p, 12.0, 40_810, 50, 0).is_err());
    }

    #[test]
    fn summaries() {
        let rec = |n, m, outcome| TrialRecord {
            n_offset: n,
            m_width: m,
            outcome,
            next_command_index: None,
            elapsed_cycles: 0,
            seed: 0,
        };
        let single = summarize_windows(&[rec(7, 3, TrialOutcome::Success), rec(9, 1, TrialOutcome::Reboot)]);
        assert_eq!(single[0], WindowSummary { parameter: "N".into(), min: 7, max: 7 });
        assert_eq!(single[1], WindowSummary { parameter: "M".into(), min: 3, max: 3 });
        assert!(summarize_windows(&[rec(9, 1, TrialOutcome::Halt)]).is_empty());
    }

    #[test]
    fn config_validation() {
        let mut c = config(0..=10, 0..=10);
        c.timeout_cycles = 20;
        assert!(c.validate().is_err());
        c.timeout_cycles = 21;
        assert!(c.validate().is_ok());
        #[allow(clippy::reversed_empty_ranges)]
        let empty = config(10..=0, 0..=1);
        assert!(empty.validate().is_err());
    }
}
