//! Gaussian-square pulse parametrization, area-preserving scaling of
//! cross-resonance pulses to arbitrary ZX angles, echoed-schedule
//! construction, and geometric schedule comparison.
//!
//! Durations are in AWG samples. The calibration fixture shipped here stands
//! in for unpublished device values; every number derived from it is a
//! property of the fixture, not of any hardware.

use crate::circuits::{Circuit, Gate};
use crate::simcore::C64;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;
use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;

#[derive(Debug, thiserror::Error)]
pub enum PulseError {
    #[error("theta {0} outside (0, pi]")]
    Theta(f64),
    #[error("invalid pulse: {0}")]
    Invalid(String),
    #[error("scaled amplitude magnitude {0} exceeds 1")]
    Amplitude(f64),
    #[error("comparison denominator is zero")]
    ZeroDenominator,
}

pub type Result<T> = std::result::Result<T, PulseError>;

/// Duration granularity in samples.
pub const DURATION_MULTIPLE: f64 = 16.0;

/// Flat-top pulse with truncated-Gaussian edges.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianSquarePulse {
    pub duration: f64,
    pub amplitude: C64,
    pub sigma: f64,
    pub width: f64,
    pub n_sigma: f64,
}

impl GaussianSquarePulse {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !(self.n_sigma > 0.0) {
            return Err(PulseError::Invalid(format!(
                "sigma {} and n_sigma {} must be positive",
                self.sigma, self.n_sigma
            )));
        }
        if self.width < 0.0 {
            return Err(PulseError::Invalid(format!("negative width {}", self.width)));
        }
        if self.duration < self.width + self.n_sigma * self.sigma - 1e-9 {
            return Err(PulseError::Invalid(format!(
                "duration {} shorter than width {} plus edge budget {}",
                self.duration,
                self.width,
                self.n_sigma * self.sigma
            )));
        }
        let cells = self.duration / DURATION_MULTIPLE;
        if (cells - cells.round()).abs() > 1e-9 {
            return Err(PulseError::Invalid(format!(
                "duration {} is not a multiple of {}",
                self.duration, DURATION_MULTIPLE
            )));
        }
        if self.amplitude.norm() > 1.0 + 1e-12 {
            return Err(PulseError::Amplitude(self.amplitude.norm()));
        }
        Ok(())
    }
}

/// Combined area of the two truncated-Gaussian edges.
fn edge_area(amp_abs: f64, sigma: f64, n_sigma: f64) -> f64 {
    amp_abs * sigma * (2.0 * PI).sqrt() * erf(n_sigma)
}

/// Closed-form pulse area: |A|w plus the Gaussian-edge contribution.
pub fn pulse_area(p: &GaussianSquarePulse) -> f64 {
    let a = p.amplitude.norm();
    a * p.width + edge_area(a, p.sigma, p.n_sigma)
}

/// Stored cross-resonance calibration for one qubit pair.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CRCalibration {
    /// Reference amplitude A* of the CR(pi/4) pulse.
    pub amplitude: C64,
    pub sigma: f64,
    /// Reference flat-top width w*.
    pub width: f64,
    pub n_sigma: f64,
    /// Stored duration of the reference pulse.
    pub duration: f64,
    /// Physical length of one sample in nanoseconds.
    pub sample_dt_ns: f64,
    /// Duration of one single-qubit pulse in samples.
    pub single_qubit_duration: f64,
    /// Amplitude ratio of the rotary compensation pulse to the CR pulse.
    pub rotary_scale: f64,
}

impl CRCalibration {
    /// Stand-in calibration with plausible magnitudes.
    pub fn fixture() -> Self {
        CRCalibration {
            amplitude: C64::from_polar(0.25, 0.5),
            sigma: 64.0,
            width: 368.0,
            n_sigma: 2.0,
            duration: 624.0,
            sample_dt_ns: 0.222,
            single_qubit_duration: 160.0,
            rotary_scale: 0.25,
        }
    }

    /// Area of the stored reference pulse.
    pub fn reference_area(&self) -> f64 {
        let a = self.amplitude.norm();
        a * self.width + edge_area(a, self.sigma, self.n_sigma)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.reference_area() > 0.0) {
            return Err(PulseError::Invalid("reference area must be positive".into()));
        }
        if !(self.sample_dt_ns > 0.0) || !(self.single_qubit_duration > 0.0) {
            return Err(PulseError::Invalid(
                "sample duration and single-qubit duration must be positive".into(),
            ));
        }
        if !(self.rotary_scale >= 0.0) {
            return Err(PulseError::Invalid("rotary scale must be nonnegative".into()));
        }
        Ok(())
    }

    fn one_qubit_pulse(&self) -> GaussianSquarePulse {
        GaussianSquarePulse {
            duration: self.single_qubit_duration,
            amplitude: C64::new(0.1, 0.0),
            sigma: self.single_qubit_duration / 4.0,
            width: 0.0,
            n_sigma: 2.0,
        }
    }
}

/// Scales the calibrated CR pulse to the target rotation angle, holding the
/// area proportional to theta.
///
/// Above the Gaussian-only area the flat-top width stretches at fixed
/// amplitude; below it the width collapses to zero and the amplitude shrinks.
/// The amplitude phase is never touched.
pub fn scale_cr(theta: f64, cal: &CRCalibration) -> Result<GaussianSquarePulse> {
    if !(theta > 0.0 && theta <= PI) {
        return Err(PulseError::Theta(theta));
    }
    cal.validate()?;
    let a_star = cal.amplitude.norm();
    let target = theta / FRAC_PI_2 * cal.reference_area();
    let cap = edge_area(a_star, cal.sigma, cal.n_sigma);
    let gauss_norm = cal.sigma * (2.0 * PI).sqrt() * erf(cal.n_sigma);
    let (width, amp_abs) = if target > cap {
        (target / a_star - gauss_norm, a_star)
    } else {
        (0.0, target / gauss_norm)
    };
    if amp_abs > 1.0 {
        return Err(PulseError::Amplitude(amp_abs));
    }
    let duration = ((width + cal.n_sigma * cal.sigma) / DURATION_MULTIPLE).ceil()
        * DURATION_MULTIPLE;
    let unit = cal.amplitude / a_star;
    let pulse = GaussianSquarePulse {
        duration,
        amplitude: unit * amp_abs,
        sigma: cal.sigma,
        width,
        n_sigma: cal.n_sigma,
    };
    pulse.validate()?;
    Ok(pulse)
}

/// Time-stamped content of one schedule channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ScheduleEvent {
    Pulse { start: f64, pulse: GaussianSquarePulse },
    PhaseShift { start: f64, phase: f64 },
}

impl ScheduleEvent {
    fn end(&self) -> f64 {
        match *self {
            ScheduleEvent::Pulse { start, ref pulse } => start + pulse.duration,
            ScheduleEvent::PhaseShift { start, .. } => start,
        }
    }
}

/// Pulses and frame shifts per channel. Drive channels are named `d<q>`,
/// two-qubit control channels `u<c><t>`.
#[derive(Clone, Debug, Default)]
pub struct PulseSchedule {
    pub channels: BTreeMap<String, Vec<ScheduleEvent>>,
    pub duration: f64,
}

impl PulseSchedule {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, channel: &str, ev: ScheduleEvent) {
        self.duration = self.duration.max(ev.end());
        self.channels.entry(channel.to_string()).or_default().push(ev);
    }

    pub fn validate(&self) -> Result<()> {
        let mut max_end = 0.0f64;
        for (name, events) in &self.channels {
            let mut cursor = f64::NEG_INFINITY;
            for ev in events {
                if let ScheduleEvent::Pulse { start, ref pulse } = *ev {
                    pulse.validate()?;
                    if start < cursor - 1e-9 {
                        return Err(PulseError::Invalid(format!(
                            "overlapping pulses on channel {name} at {start}"
                        )));
                    }
                    cursor = start + pulse.duration;
                }
                max_end = max_end.max(ev.end());
            }
        }
        if (self.duration - max_end).abs() > 1e-9 {
            return Err(PulseError::Invalid(format!(
                "stored duration {} != max channel end {max_end}",
                self.duration
            )));
        }
        Ok(())
    }

    /// Number of pulses on the drive channel of one qubit.
    pub fn drive_pulse_count(&self, q: usize) -> usize {
        self.channels
            .get(&format!("d{q}"))
            .map_or(0, |evs| {
                evs.iter()
                    .filter(|e| matches!(e, ScheduleEvent::Pulse { .. }))
                    .count()
            })
    }

    /// Summed pulse area over the two-qubit control channels.
    pub fn cr_area(&self) -> f64 {
        self.channels
            .iter()
            .filter(|(name, _)| name.starts_with('u'))
            .flat_map(|(_, evs)| evs)
            .map(|ev| match ev {
                ScheduleEvent::Pulse { pulse, .. } => pulse_area(pulse),
                ScheduleEvent::PhaseShift { .. } => 0.0,
            })
            .sum()
    }

    /// Deterministic line-oriented rendering.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "duration {:?}", self.duration);
        for (name, events) in &self.channels {
            let _ = writeln!(out, "channel {name}");
            for ev in events {
                match ev {
                    ScheduleEvent::Pulse { start, pulse } => {
                        let _ = writeln!(
                            out,
                            "pulse start={:?} d={:?} are={:?} aim={:?} sigma={:?} w={:?} nsig={:?}",
                            start,
                            pulse.duration,
                            pulse.amplitude.re,
                            pulse.amplitude.im,
                            pulse.sigma,
                            pulse.width,
                            pulse.n_sigma
                        );
                    }
                    ScheduleEvent::PhaseShift { start, phase } => {
                        let _ = writeln!(out, "phase start={:?} phi={:?}", start, phase);
                    }
                }
            }
        }
        out
    }
}

fn zx_block(
    sched: &mut PulseSchedule,
    start: f64,
    theta: f64,
    cal: &CRCalibration,
    c: usize,
    t: usize,
) -> Result<f64> {
    let cr = scale_cr(theta, cal)?;
    let rotary = GaussianSquarePulse {
        amplitude: cr.amplitude * cal.rotary_scale,
        ..cr
    };
    let neg_cr = GaussianSquarePulse { amplitude: -cr.amplitude, ..cr };
    let neg_rotary = GaussianSquarePulse { amplitude: -rotary.amplitude, ..rotary };
    let one_q = cal.one_qubit_pulse();
    let d1 = one_q.duration;
    let dcr = cr.duration;
    let drive_c = format!("d{c}");
    let control = format!("u{c}{t}");
    let drive_t = format!("d{t}");
    let mut clock = start;
    sched.push(&drive_c, ScheduleEvent::Pulse { start: clock, pulse: one_q });
    clock += d1;
    sched.push(&control, ScheduleEvent::Pulse { start: clock, pulse: cr });
    sched.push(&drive_t, ScheduleEvent::Pulse { start: clock, pulse: rotary });
    clock += dcr;
    sched.push(&drive_c, ScheduleEvent::Pulse { start: clock, pulse: one_q });
    clock += d1;
    sched.push(&control, ScheduleEvent::Pulse { start: clock, pulse: neg_cr });
    sched.push(&drive_t, ScheduleEvent::Pulse { start: clock, pulse: neg_rotary });
    clock += dcr;
    sched.push(&drive_c, ScheduleEvent::Pulse { start: clock, pulse: one_q });
    clock += d1;
    Ok(clock)
}

/// Echoed cross-resonance schedule for one ZX rotation on the pair (0, 1):
/// an opening qubit pulse, the scaled CR pulse with its rotary companion, an
/// echo pulse, the negated CR pulse, and a merged closing pulse.
pub fn build_zx_schedule(theta: f64, cal: &CRCalibration) -> Result<PulseSchedule> {
    let mut sched = PulseSchedule::new();
    zx_block(&mut sched, 0.0, theta, cal, 0, 1)?;
    sched.validate()?;
    Ok(sched)
}

/// Sequentially compiles a circuit into pulses: rotations about x or y become
/// one drive pulse, z rotations become frame shifts, and every two-qubit gate
/// becomes an echoed cross-resonance block (controlled gates at theta = pi/2).
pub fn compile_circuit_schedule(c: &Circuit, cal: &CRCalibration) -> Result<PulseSchedule> {
    let mut sched = PulseSchedule::new();
    let one_q = cal.one_qubit_pulse();
    let mut clock = 0.0;
    for g in &c.gates {
        match *g {
            Gate::Rx { q, .. } | Gate::Ry { q, .. } => {
                sched.push(
                    &format!("d{q}"),
                    ScheduleEvent::Pulse { start: clock, pulse: one_q },
                );
                clock += one_q.duration;
            }
            Gate::Rz { q, theta } => {
                sched.push(
                    &format!("d{q}"),
                    ScheduleEvent::PhaseShift { start: clock, phase: theta },
                );
            }
            Gate::Cnot { c: cq, t } | Gate::CPauli { c: cq, t, .. } => {
                clock = zx_block(&mut sched, clock, FRAC_PI_2, cal, cq, t)?;
            }
            Gate::ZxRot { c: cq, t, theta } => {
                if theta != 0.0 {
                    clock = zx_block(&mut sched, clock, theta.abs(), cal, cq, t)?;
                }
            }
        }
    }
    sched.validate()?;
    Ok(sched)
}

/// Geometric comparison of two schedules.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ScheduleComparison {
    pub duration_ratio: f64,
    pub cr_area_ratio: f64,
}

pub fn compare_schedules(a: &PulseSchedule, b: &PulseSchedule) -> Result<ScheduleComparison> {
    if b.duration <= 0.0 || b.cr_area() <= 0.0 {
        return Err(PulseError::ZeroDenominator);
    }
    Ok(ScheduleComparison {
        duration_ratio: a.duration / b.duration,
        cr_area_ratio: a.cr_area() / b.cr_area(),
    })
}
