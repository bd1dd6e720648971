//! Flat `key = value` configuration files.
//!
//! `#` starts a comment that runs to the end of the line. Blank lines are
//! ignored. Keys may appear once.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::cmos::{GatePhysics, GlitchRiseTime};
use crate::target::FaultProfile;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("duplicate key `{0}`")]
    Duplicate(String),
    #[error("missing key `{0}`")]
    Missing(&'static str),
    #[error("unknown key `{0}`")]
    Unknown(String),
    #[error("key `{key}`: cannot parse {value:?}")]
    Value { key: String, value: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl FromStr for KeyValues {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax { line: i + 1, msg: format!("expected `key = value`, got {line:?}") });
            };
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1, msg: "empty key".into() });
            }
            if entries.insert(key.to_owned(), value.to_owned()).is_some() {
                return Err(ConfigError::Duplicate(key.to_owned()));
            }
        }
        Ok(Self { entries })
    }
}

impl KeyValues {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Reject any key not in `allowed`.
    pub fn only(&self, allowed: &[&str]) -> Result<(), ConfigError> {
        match self.entries.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(ConfigError::Unknown(k.clone())),
            None => Ok(()),
        }
    }

    fn parse_with<T>(&self, key: &str, parse: impl FnOnce(&str) -> Option<T>) -> Result<Option<T>, ConfigError> {
        self.get(key)
            .map(|v| parse(v).ok_or_else(|| ConfigError::Value { key: key.to_owned(), value: v.to_owned() }))
            .transpose()
    }

    pub fn opt_u64(&self, key: &str) -> Result<Option<u64>, ConfigError> {
        self.parse_with(key, parse_u64)
    }

    pub fn opt_f64(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.parse_with(key, parse_f64)
    }

    pub fn u64(&self, key: &'static str) -> Result<u64, ConfigError> {
        self.opt_u64(key)?.ok_or(ConfigError::Missing(key))
    }

    pub fn u32(&self, key: &'static str) -> Result<u32, ConfigError> {
        let v = self.u64(key)?;
        u32::try_from(v).map_err(|_| ConfigError::Value { key: key.to_owned(), value: v.to_string() })
    }

    pub fn f64(&self, key: &'static str) -> Result<f64, ConfigError> {
        self.opt_f64(key)?.ok_or(ConfigError::Missing(key))
    }
}

/// Decimal or `0x`-prefixed hexadecimal; `_` separators allowed.
pub fn parse_u64(s: &str) -> Option<u64> {
    let s = s.replace('_', "");
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16).ok(),
        None => s.parse().ok(),
    }
}

fn parse_f64(s: &str) -> Option<f64> {
    match s.to_ascii_lowercase().as_str() {
        "inf" | "infinity" => Some(f64::INFINITY),
        other => other.parse().ok().filter(|v: &f64| !v.is_nan()),
    }
}

pub const PROFILE_KEYS: [&str; 9] = [
    "check_cycle",
    "window_width",
    "m_min",
    "m_halt",
    "guard_band",
    "success_probability",
    "clock_divider",
    "chain_length",
    "seed",
];

/// Parse a fault profile. Exactly the nine profile keys are accepted; the
/// comparator's gate physics is the 0.25 um reference stage.
pub fn parse_fault_profile(text: &str) -> Result<FaultProfile, ConfigError> {
    let kv: KeyValues = text.parse()?;
    kv.only(&PROFILE_KEYS)?;
    let profile = FaultProfile {
        check_cycle: kv.u64("check_cycle")?,
        window_width: kv.u64("window_width")?,
        m_min: kv.u64("m_min")?,
        m_halt: kv.u64("m_halt")?,
        guard_band: kv.u64("guard_band")?,
        success_probability: kv.f64("success_probability")?,
        clock_divider: kv.u32("clock_divider")?,
        chain_length: kv.u32("chain_length")?,
        seed: kv.u64("seed")?,
        gate: GatePhysics::reference_250nm(),
    };
    profile.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(profile)
}

pub fn format_fault_profile(p: &FaultProfile) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "check_cycle = {}", p.check_cycle);
    let _ = writeln!(s, "window_width = {}", p.window_width);
    let _ = writeln!(s, "m_min = {}", p.m_min);
    let _ = writeln!(s, "m_halt = {}", p.m_halt);
    let _ = writeln!(s, "guard_band = {}", p.guard_band);
    let _ = writeln!(s, "success_probability = {}", p.success_probability);
    let _ = writeln!(s, "clock_divider = {}", p.clock_divider);
    let _ = writeln!(s, "chain_length = {}", p.chain_length);
    let _ = writeln!(s, "seed = {}", p.seed);
    s
}

pub const PHYSICS_KEYS: [&str; 12] = [
    "v_dd",
    "v_ss",
    "v_dd_glitch",
    "v_th",
    "v_il",
    "v_ih",
    "r_eqp",
    "r_eqn",
    "r_eqp_glitch",
    "c_load",
    "t_phl",
    "t_plh",
];

/// Timing-model evaluation request: a gate, a rise time under glitch and a
/// linear grid of glitch widths.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub physics: GatePhysics<f64>,
    pub t_glh: GlitchRiseTime<f64>,
    pub t_g_grid: Vec<f64>,
}

/// Parse the gate keys plus `t_g_min`, optional `t_g_max`/`t_g_points`
/// (default: a single point) and `t_glh`. `t_glh` may be `inf`; it defaults
/// to unbounded when `v_dd_glitch < v_th` and is required otherwise.
pub fn parse_model_params(text: &str) -> Result<ModelParams, ConfigError> {
    let kv: KeyValues = text.parse()?;
    let mut allowed = PHYSICS_KEYS.to_vec();
    allowed.extend(["t_g_min", "t_g_max", "t_g_points", "t_glh"]);
    kv.only(&allowed)?;

    let physics = GatePhysics {
        v_dd: kv.f64("v_dd")?,
        v_ss: kv.f64("v_ss")?,
        v_dd_glitch: kv.f64("v_dd_glitch")?,
        v_th: kv.f64("v_th")?,
        v_il: kv.f64("v_il")?,
        v_ih: kv.f64("v_ih")?,
        r_eqp: kv.f64("r_eqp")?,
        r_eqn: kv.f64("r_eqn")?,
        r_eqp_glitch: kv.f64("r_eqp_glitch")?,
        c_load: kv.f64("c_load")?,
        t_phl: kv.f64("t_phl")?,
        t_plh: kv.f64("t_plh")?,
    };
    physics.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;

    let t_glh = match kv.opt_f64("t_glh")? {
        Some(t) if t.is_infinite() => GlitchRiseTime::Unbounded,
        Some(t) if t > 0.0 => GlitchRiseTime::Finite(t),
        Some(t) => return Err(ConfigError::Value { key: "t_glh".into(), value: t.to_string() }),
        None if physics.glitch_starves_pmos() => GlitchRiseTime::Unbounded,
        None => return Err(ConfigError::Missing("t_glh")),
    };

    let lo = kv.f64("t_g_min")?;
    let hi = kv.opt_f64("t_g_max")?.unwrap_or(lo);
    let points = kv.opt_u64("t_g_points")?.unwrap_or(1);
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(ConfigError::Invalid(format!("glitch width grid [{lo}, {hi}] must be positive and ordered")));
    }
    if points == 0 || (points == 1 && hi != lo) {
        return Err(ConfigError::Invalid("t_g_points must be >= 1, and >= 2 for a non-degenerate range".into()));
    }
    let t_g_grid = if points == 1 {
        vec![lo]
    } else {
        (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect()
    };
    Ok(ModelParams { physics, t_glh, t_g_grid })
}

#[cfg(test)]
mod tests {
    use super::*;

    const PHYS: &str = "
        v_dd = 2.5
        v_ss = 0
        v_dd_glitch = 0
        v_th = 0.4
        v_il = 1.0
        v_ih = 1.5
        r_eqp = 31e3
        r_eqn = 13e3
        r_eqp_glitch = 62e3
        c_load = 6e-15
        t_phl = 30e-12
        t_plh = 30e-12
    ";

    #[test]
    fn key_value_syntax() {
        let kv: KeyValues = "# header\na = 1 # trailing\n\n  b=0x10\n".parse().unwrap();
        assert_eq!(kv.u64("a").unwrap(), 1);
        assert_eq!(kv.u64("b").unwrap(), 16);
        assert!(matches!("a = 1\na = 2".parse::<KeyValues>(), Err(ConfigError::Duplicate(_))));
        assert!(matches!("oops".parse::<KeyValues>(), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(kv.u64("c"), Err(ConfigError::Missing("c"))));
    }

    #[test]
    fn profile_round_trip() {
        let p = FaultProfile::measured_window();
        assert_eq!(parse_fault_profile(&format_fault_profile(&p)).unwrap(), p);
    }

    #[test]
    fn profile_rejects_unknown_and_missing_keys() {
        let text = format_fault_profile(&FaultProfile::measured_window());
        assert_eq!(parse_fault_profile(&format!("{text}extra = 1\n")), Err(ConfigError::Unknown("extra".into())));
        let missing: String = text.lines().filter(|l| !l.starts_with("m_halt")).map(|l| format!("{l}\n")).collect();
        assert_eq!(parse_fault_profile(&missing), Err(ConfigError::Missing("m_halt")));
        let bad = text.replace("m_min = 45", "m_min = 99");
        assert!(matches!(parse_fault_profile(&bad), Err(ConfigError::Invalid(_))));
        let junk = text.replace("seed = 0", "seed = many");
        assert!(matches!(parse_fault_profile(&junk), Err(ConfigError::Value { .. })));
    }

    #[test]
    fn model_params_grid() {
        let p = parse_model_params(&format!("{PHYS}t_g_min = 1e-9\nt_g_max = 3e-9\nt_g_points = 3")).unwrap();
        assert_eq!(p.t_g_grid.len(), 3);
        assert!((p.t_g_grid[1] - 2e-9).abs() < 1e-20);
        assert_eq!(p.t_glh, GlitchRiseTime::Unbounded);
        let single = parse_model_params(&format!("{PHYS}t_g_min = 1e-9\nt_glh = 2e-9")).unwrap();
        assert_eq!(single.t_g_grid, vec![1e-9]);
        assert_eq!(single.t_glh, GlitchRiseTime::Finite(2e-9));
    }

    #[test]
    fn model_params_name_missing_key() {
        let text = PHYS.replace("v_dd = 2.5", "") + "t_g_min = 1e-9";
        assert_eq!(parse_model_params(&text), Err(ConfigError::Missing("v_dd")));
        let conducting = PHYS.replace("v_dd_glitch = 0", "v_dd_glitch = 1.0") + "t_g_min = 1e-9";
        assert_eq!(parse_model_params(&conducting), Err(ConfigError::Missing("t_glh")));
    }
}
