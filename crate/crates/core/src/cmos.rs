//! Transistor-level delay model of a CMOS stage under a supply glitch.
//!
//! A glitch replaces the supply `V_DD` by `V_DD'` for the interval
//! `[tau_a, tau_b)`. Depending on what the input of the stage does during the
//! glitch, the output either ignores it, is dragged low through the PMOS, or
//! is kept from rising. The delay of the first affected stage is then carried
//! down an inverter chain at the nominal CMOS rate, and the resulting path
//! delay is compared against the clock budget to decide whether a capturing
//! register sees a setup violation.
//!
//! Everything here is generic over [`Scalar`] so the model can be evaluated in
//! `f32` or `f64`.

use std::fmt;

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{name} must be strictly positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("inconsistent voltages: {0}")]
    Voltage(&'static str),
    #[error("glitch end {tau_b} must come after glitch start {tau_a}")]
    EmptyPulse { tau_a: f64, tau_b: f64 },
    #[error("threshold fraction {0} is outside the open interval (0, 1)")]
    Threshold(f64),
    #[error("start and end voltage are both {0}")]
    FlatTransient(f64),
    #[error("chain length must be at least 1")]
    EmptyChain,
}

fn positive<T: Scalar>(name: &'static str, value: T) -> Result<T, ModelError> {
    if value > T::zero() && value.is_finite() {
        Ok(value)
    } else {
        Err(ModelError::NonPositive { name, value: value.to_f64().unwrap_or(f64::NAN) })
    }
}

/// Electrical parameters of one CMOS stage.
///
/// Voltages in volts, resistances in ohms, capacitance in farads, delays in
/// seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatePhysics<T> {
    pub v_dd: T,
    pub v_ss: T,
    /// Supply level while the glitch is active.
    pub v_dd_glitch: T,
    /// PMOS threshold voltage.
    pub v_th: T,
    pub v_il: T,
    pub v_ih: T,
    /// PMOS on-resistance with its source at `v_dd`.
    pub r_eqp: T,
    /// NMOS on-resistance with its source at `v_ss`.
    pub r_eqn: T,
    /// PMOS on-resistance with its source at `v_dd_glitch`.
    pub r_eqp_glitch: T,
    pub c_load: T,
    pub t_phl: T,
    pub t_plh: T,
}

impl<T: Scalar> GatePhysics<T> {
    /// A 0.25 um process stage with 30 ps nominal propagation delays and a
    /// full crowbar (`v_dd_glitch = v_ss`).
    pub fn reference_250nm() -> Self {
        Self {
            v_dd: T::lit(2.5),
            v_ss: T::zero(),
            v_dd_glitch: T::zero(),
            v_th: T::lit(0.4),
            v_il: T::lit(1.0),
            v_ih: T::lit(1.5),
            r_eqp: T::lit(31e3),
            r_eqn: T::lit(13e3),
            r_eqp_glitch: T::lit(62e3),
            c_load: T::lit(6e-15),
            t_phl: T::lit(30e-12),
            t_plh: T::lit(30e-12),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.v_ss <= self.v_dd_glitch && self.v_dd_glitch < self.v_dd) {
            return Err(ModelError::Voltage("expected v_ss <= v_dd_glitch < v_dd"));
        }
        if !(self.v_ss <= self.v_il && self.v_il < self.v_ih && self.v_ih <= self.v_dd) {
            return Err(ModelError::Voltage("expected v_ss <= v_il < v_ih <= v_dd"));
        }
        positive("r_eqp", self.r_eqp)?;
        positive("r_eqn", self.r_eqn)?;
        positive("r_eqp_glitch", self.r_eqp_glitch)?;
        positive("c_load", self.c_load)?;
        positive("t_phl", self.t_phl)?;
        positive("t_plh", self.t_plh)?;
        Ok(())
    }

    /// Mean nominal stage delay `(t_plh + t_phl) / 2`.
    pub fn mean_stage_delay(&self) -> T {
        (self.t_plh + self.t_phl) / T::lit(2.0)
    }

    /// True when the glitch supply cannot turn the PMOS on, so an output that
    /// should rise stays low until the supply returns.
    pub fn glitch_starves_pmos(&self) -> bool {
        self.v_dd_glitch < self.v_th
    }
}

/// Supply dip from `tau_a` to `tau_b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlitchPulse<T> {
    tau_a: T,
    tau_b: T,
}

impl<T: Scalar> GlitchPulse<T> {
    pub fn new(tau_a: T, tau_b: T) -> Result<Self, ModelError> {
        if tau_b > tau_a && (tau_b - tau_a).is_finite() {
            Ok(Self { tau_a, tau_b })
        } else {
            Err(ModelError::EmptyPulse {
                tau_a: tau_a.to_f64().unwrap_or(f64::NAN),
                tau_b: tau_b.to_f64().unwrap_or(f64::NAN),
            })
        }
    }

    /// Pulse of the given width starting at time zero.
    pub fn with_width(width: T) -> Result<Self, ModelError> {
        Self::new(T::zero(), width)
    }

    pub fn tau_a(&self) -> T {
        self.tau_a
    }

    pub fn tau_b(&self) -> T {
        self.tau_b
    }

    /// Glitch width `t_G`.
    pub fn width(&self) -> T {
        self.tau_b - self.tau_a
    }
}

/// What the stage input does while the glitch is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InputScenario {
    /// Input held at logic 0.
    NonToggle0,
    /// Input held at logic 1.
    NonToggle1,
    /// Input goes 0 to 1; the PMOS is turned off and the output must rise
    /// against the starved supply.
    Toggle0to1,
    /// Input goes 1 to 0.
    Toggle1to0,
}

impl InputScenario {
    pub const ALL: [InputScenario; 4] = [
        InputScenario::NonToggle0,
        InputScenario::NonToggle1,
        InputScenario::Toggle0to1,
        InputScenario::Toggle1to0,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InputScenario::NonToggle0 => "non_toggle_0",
            InputScenario::NonToggle1 => "non_toggle_1",
            InputScenario::Toggle0to1 => "toggle_0_to_1",
            InputScenario::Toggle1to0 => "toggle_1_to_0",
        }
    }
}

impl fmt::Display for InputScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Output rise time while the supply is glitched (`t_gLH`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GlitchRiseTime<T> {
    Finite(T),
    /// The output never rises during the glitch.
    Unbounded,
}

impl<T: Scalar> GlitchRiseTime<T> {
    /// `Unbounded` when the glitch supply sits below the PMOS threshold,
    /// otherwise the caller-supplied finite rise time.
    pub fn for_physics(phys: &GatePhysics<T>, conducting: T) -> Self {
        if phys.glitch_starves_pmos() {
            GlitchRiseTime::Unbounded
        } else {
            GlitchRiseTime::Finite(conducting)
        }
    }

    fn exceeds(&self, width: T) -> bool {
        match *self {
            GlitchRiseTime::Finite(t) => t > width,
            GlitchRiseTime::Unbounded => true,
        }
    }
}

/// One sample of an RC transient at the output node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransientState<T> {
    pub time: T,
    pub v_out: T,
    pub v_in: T,
    /// Source-to-gate voltage of the PMOS.
    pub v_sg: T,
}

/// Output fall time `t_gHL` when the PMOS drags the load toward the glitch
/// supply: `ln 2 * R_eqp' * C_L`.
pub fn fall_time_glitch<T: Scalar>(phys: &GatePhysics<T>) -> Result<T, ModelError> {
    let r = positive("r_eqp_glitch", phys.r_eqp_glitch)?;
    let c = positive("c_load", phys.c_load)?;
    Ok(T::LN_2() * r * c)
}

/// Fixed-step trapezoidal integration of a first-order RC node.
///
/// The node starts at `v_start` and relaxes toward `v_end` with time constant
/// `r * c`. Step size is `r * c / 1000`.
#[derive(Debug, Clone)]
pub struct RcTransient<T> {
    tau: T,
    step: T,
    v_end: T,
    v_in: T,
    time: T,
    v_out: T,
}

impl<T: Scalar> RcTransient<T> {
    pub const STEPS_PER_TAU: f64 = 1000.0;

    pub fn new(r: T, c: T, v_start: T, v_end: T) -> Result<Self, ModelError> {
        let tau = positive("r", r)? * positive("c", c)?;
        if v_start == v_end {
            return Err(ModelError::FlatTransient(v_start.to_f64().unwrap_or(f64::NAN)));
        }
        Ok(Self {
            tau,
            step: tau / T::lit(Self::STEPS_PER_TAU),
            v_end,
            v_in: T::zero(),
            time: T::zero(),
            v_out: v_start,
        })
    }

    /// Input voltage reported in the emitted states (default 0 V).
    pub fn with_input(mut self, v_in: T) -> Self {
        self.v_in = v_in;
        self
    }

    pub fn step(&self) -> T {
        self.step
    }

    pub fn state(&self) -> TransientState<T> {
        TransientState {
            time: self.time,
            v_out: self.v_out,
            v_in: self.v_in,
            v_sg: self.v_end - self.v_in,
        }
    }

    fn slope(&self, v: T) -> T {
        (self.v_end - v) / self.tau
    }

    fn advance(&mut self) {
        // Trapezoidal rule on dv/dt = (v_end - v) / tau, solved for v_{k+1}.
        let half = self.step / (T::lit(2.0) * self.tau);
        let next = (self.v_out * (T::one() - half) + self.v_end * half * T::lit(2.0))
            / (T::one() + half);
        self.v_out = next;
        self.time = self.time + self.step;
    }
}

impl<T: Scalar> Iterator for RcTransient<T> {
    type Item = TransientState<T>;

    fn next(&mut self) -> Option<Self::Item> {
        let state = self.state();
        self.advance();
        Some(state)
    }
}

/// First time at which the integrated RC transient from `v_start` toward
/// `v_end` crosses `v_start + threshold_fraction * (v_end - v_start)`.
///
/// The crossing inside the final step is located on the cubic Hermite
/// interpolant of the integrated samples.
pub fn transient_oracle<T: Scalar>(
    r: T,
    c: T,
    v_start: T,
    v_end: T,
    threshold_fraction: T,
) -> Result<T, ModelError> {
    if !(threshold_fraction > T::zero() && threshold_fraction < T::one()) {
        return Err(ModelError::Threshold(threshold_fraction.to_f64().unwrap_or(f64::NAN)));
    }
    let mut sim = RcTransient::new(r, c, v_start, v_end)?;
    let span = v_end - v_start;
    let progress = |v: T| (v - v_start) / span;

    let mut prev = sim.state();
    loop {
        sim.advance();
        let cur = sim.state();
        if progress(cur.v_out) >= threshold_fraction {
            return Ok(hermite_crossing(&sim, prev, cur, v_start + threshold_fraction * span));
        }
        prev = cur;
    }
}

fn hermite_crossing<T: Scalar>(
    sim: &RcTransient<T>,
    a: TransientState<T>,
    b: TransientState<T>,
    level: T,
) -> T {
    let h = b.time - a.time;
    let (p0, p1) = (a.v_out, b.v_out);
    let (m0, m1) = (sim.slope(p0) * h, sim.slope(p1) * h);
    let two = T::lit(2.0);
    let three = T::lit(3.0);
    let eval = |s: T| {
        let s2 = s * s;
        let s3 = s2 * s;
        (two * s3 - three * s2 + T::one()) * p0
            + (s3 - two * s2 + s) * m0
            + (-two * s3 + three * s2) * p1
            + (s3 - s2) * m1
    };
    let rising = p1 > p0;
    let (mut lo, mut hi) = (T::zero(), T::one());
    for _ in 0..64 {
        let mid = (lo + hi) / two;
        let below = if rising { eval(mid) < level } else { eval(mid) > level };
        if below {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    a.time + h * (lo + hi) / two
}

/// Modeled propagation delay of the first stage hit by the glitch.
///
/// Lower-bounded cases are evaluated at their bound.
pub fn gate_glitch_delay<T: Scalar>(
    scenario: InputScenario,
    phys: &GatePhysics<T>,
    pulse: &GlitchPulse<T>,
    t_glh: GlitchRiseTime<T>,
) -> Result<T, ModelError> {
    let t_g = pulse.width();
    Ok(match scenario {
        InputScenario::NonToggle0 => {
            let t_ghl = fall_time_glitch(phys)?;
            if t_ghl > t_g {
                t_g + phys.t_plh
            } else {
                t_g - t_ghl + phys.t_plh
            }
        }
        InputScenario::NonToggle1 => T::zero(),
        InputScenario::Toggle0to1 => match t_glh {
            rise if rise.exceeds(t_g) => t_g + phys.t_plh,
            GlitchRiseTime::Finite(rise) => rise,
            GlitchRiseTime::Unbounded => unreachable!("unbounded rise always exceeds the pulse"),
        },
        InputScenario::Toggle1to0 => phys.t_phl,
    })
}

/// Mean delay of the two glitch-sensitive scenarios (`t_g0`).
pub fn glitched_gate_mean_delay<T: Scalar>(
    phys: &GatePhysics<T>,
    pulse: &GlitchPulse<T>,
    t_glh: GlitchRiseTime<T>,
) -> Result<T, ModelError> {
    let low = gate_glitch_delay(InputScenario::NonToggle0, phys, pulse, t_glh)?;
    let rise = gate_glitch_delay(InputScenario::Toggle0to1, phys, pulse, t_glh)?;
    Ok((low + rise) / T::lit(2.0))
}

/// Delay through `chain_length` inverters when only the first is glitched.
pub fn chain_delay<T: Scalar>(
    t_g0: T,
    chain_length: u32,
    phys: &GatePhysics<T>,
) -> Result<T, ModelError> {
    if chain_length == 0 {
        return Err(ModelError::EmptyChain);
    }
    let tail = T::from_u32(chain_length - 1).expect("u32 fits a float");
    Ok(t_g0 + tail * phys.mean_stage_delay())
}

/// Glitch width plus the nominal delay of the whole chain.
pub fn chain_delay_bound<T: Scalar>(
    pulse: &GlitchPulse<T>,
    chain_length: u32,
    phys: &GatePhysics<T>,
) -> Result<T, ModelError> {
    if chain_length == 0 {
        return Err(ModelError::EmptyChain);
    }
    let n = T::from_u32(chain_length).expect("u32 fits a float");
    Ok(pulse.width() + n * phys.mean_stage_delay())
}

/// Setup check against an effective clock period (setup margin already
/// subtracted by the caller).
pub fn violates_timing<T: Scalar>(path_delay: T, clock_period: T) -> bool {
    path_delay > clock_period
}
