//! Drift tracking and the retraining scheduler.
//!
//! Drift is the Frobenius norm of the embedding change between checkpoints.
//! The scheduler sums drift since the last retrain and fires when the sum
//! reaches a threshold; once a few triggers are observed, a power law fitted to
//! the drift history predicts where the remaining retrains fall.

use crate::error::{Error, Result};
use crate::matrix::ColumnMatrix;

/// Triggers observed before the schedule is extrapolated.
pub const DEFAULT_FIRST_TRIGGERS: usize = 3;

/// Relative slack when comparing accumulated drift with the threshold, so a
/// sum of `g` equal samples reaches `g` times their value despite rounding.
const THRESHOLD_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdMode {
    /// Compare accumulated drift with `theta` directly.
    Absolute,
    /// Compare accumulated drift divided by `||Z_t - Z_0||_F` with `theta`.
    Relative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftSample {
    pub event_index: u64,
    pub delta_z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Retrain,
    Wait { exhausted: bool },
}

/// `delta_z(t) ~ a * t^(-b)`, fitted in log-log space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLawFit {
    pub a: f64,
    pub b: f64,
    /// Root-mean-square residual of the log-space fit.
    pub rms: f64,
}

impl PowerLawFit {
    pub fn eval(&self, t: f64) -> f64 {
        self.a * t.powf(-self.b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleState {
    pub theta: f64,
    pub mode: ThresholdMode,
    pub budget: usize,
    pub observed_triggers: usize,
    pub trigger_times: Vec<u64>,
    pub drift_history: Vec<DriftSample>,
    pub fit: Option<PowerLawFit>,
    pub baseline_norm: f64,
    accumulated: f64,
}

#[inline]
fn reached(level: f64, theta: f64) -> bool {
    level >= theta * (1.0 - THRESHOLD_SLACK)
}

impl ScheduleState {
    pub fn new(theta: f64, mode: ThresholdMode, budget: usize) -> Result<Self> {
        if theta.is_nan() || theta < 0.0 {
            return Err(Error::InvalidConfig(format!("theta must be non-negative, got {theta}")));
        }
        Ok(Self {
            theta,
            mode,
            budget,
            observed_triggers: 0,
            trigger_times: Vec::new(),
            drift_history: Vec::new(),
            fit: None,
            baseline_norm: 0.0,
            accumulated: 0.0,
        })
    }

    /// Updates `||Z_t - Z_0||_F`, the denominator in relative mode.
    pub fn set_baseline_norm(&mut self, norm: f64) {
        self.baseline_norm = norm;
    }

    /// Drift summed since the last retrain.
    pub fn accumulated(&self) -> f64 {
        self.accumulated
    }

    pub fn remaining(&self) -> usize {
        self.budget - self.observed_triggers
    }

    fn level(&self) -> f64 {
        match self.mode {
            ThresholdMode::Absolute => self.accumulated,
            ThresholdMode::Relative if self.baseline_norm > 0.0 => self.accumulated / self.baseline_norm,
            ThresholdMode::Relative => 0.0,
        }
    }

    /// Threshold on accumulated drift in absolute units.
    pub fn absolute_threshold(&self) -> f64 {
        match self.mode {
            ThresholdMode::Absolute => self.theta,
            ThresholdMode::Relative => self.theta * self.baseline_norm,
        }
    }

    /// Records a sample and decides whether to retrain now. With `accumulate`
    /// false the sample is kept in the history but does not count toward the
    /// threshold.
    pub fn observe(&mut self, sample: DriftSample, accumulate: bool) -> Result<Decision> {
        if !(sample.delta_z >= 0.0) {
            return Err(Error::InvalidConfig(format!("drift must be non-negative, got {}", sample.delta_z)));
        }
        if let Some(last) = self.drift_history.last() {
            if sample.event_index <= last.event_index {
                return Err(Error::InvalidConfig(format!(
                    "drift samples must have increasing event indices ({} after {})",
                    sample.event_index, last.event_index
                )));
            }
        }
        self.drift_history.push(sample);
        if self.observed_triggers >= self.budget {
            return Ok(Decision::Wait { exhausted: true });
        }
        if accumulate {
            self.accumulated += sample.delta_z;
        }
        if reached(self.level(), self.theta) {
            self.accumulated = 0.0;
            self.trigger_times.push(sample.event_index);
            self.observed_triggers += 1;
            return Ok(Decision::Retrain);
        }
        Ok(Decision::Wait { exhausted: false })
    }

    /// Fits the power law to the history so far and stores it.
    pub fn refit(&mut self) -> Result<PowerLawFit> {
        let fit = fit_power_law(&self.drift_history)?;
        self.fit = Some(fit);
        Ok(fit)
    }
}

/// `||current - previous||_F`.
pub fn delta_z(previous: &ColumnMatrix, current: &ColumnMatrix) -> Result<f64> {
    current.expect_shape(previous.rows(), previous.cols())?;
    Ok(previous
        .as_slice()
        .iter()
        .zip(current.as_slice())
        .map(|(a, b)| (b - a) * (b - a))
        .sum::<f64>()
        .sqrt())
}

/// Least squares on `ln dz = ln a - b ln t`.
pub fn fit_power_law(history: &[DriftSample]) -> Result<PowerLawFit> {
    if history.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "power-law fit needs at least 3 samples, got {}",
            history.len()
        )));
    }
    if let Some(bad) = history.iter().find(|s| s.event_index == 0 || !(s.delta_z > 0.0)) {
        return Err(Error::InsufficientData(format!(
            "power-law fit needs positive times and drift values (t={}, dz={})",
            bad.event_index, bad.delta_z
        )));
    }
    let pts: Vec<(f64, f64)> = history
        .iter()
        .map(|s| ((s.event_index as f64).ln(), s.delta_z.ln()))
        .collect();
    let m = pts.len() as f64;
    let mean_x = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("all samples share one event index".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let rms = (pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum::<f64>()
        / m)
        .sqrt();
    Ok(PowerLawFit { a: intercept.exp(), b: -slope, rms })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictedSchedule {
    pub indices: Vec<u64>,
    /// True when the fitted drift did not reach the threshold often enough
    /// before `total_events` and the tail was spread evenly up to it.
    pub clamped: bool,
}

/// Spacing between drift samples, taken from the last two in the history.
fn cadence(history: &[DriftSample]) -> u64 {
    match history {
        [.., a, b] => (b.event_index - a.event_index).max(1),
        _ => 1,
    }
}

/// Predicts the remaining `budget - observed_triggers` retrain indices by
/// stepping the fitted drift forward at the history's sample cadence from the
/// last observation, and firing where the accumulated prediction reaches the
/// threshold. Indices that would land past `total_events` are replaced by an
/// even spread over what is left, ending at `total_events`.
pub fn predict_schedule(sched: &ScheduleState, total_events: u64, fit: &PowerLawFit) -> Result<PredictedSchedule> {
    if sched.observed_triggers == 0 {
        return Err(Error::InsufficientData("no observed retrain to extrapolate from".into()));
    }
    let wanted = sched.remaining();
    let step = cadence(&sched.drift_history);
    let theta = sched.absolute_threshold();
    let mut t = sched.drift_history.last().map_or(0, |s| s.event_index);
    let mut acc = sched.accumulated;
    let mut indices = Vec::with_capacity(wanted);
    while indices.len() < wanted && t + step <= total_events {
        t += step;
        acc += fit.eval(t as f64);
        if reached(acc, theta) {
            indices.push(t);
            acc = 0.0;
        }
    }
    let mut clamped = false;
    if indices.len() < wanted {
        clamped = true;
        let start = indices.last().copied().unwrap_or_else(|| *sched.trigger_times.last().unwrap());
        let missing = (wanted - indices.len()) as u64;
        let room = total_events.saturating_sub(start);
        let slots = missing.min(room);
        for i in 1..=slots {
            // ceil keeps the spread strictly increasing and ends exactly at total_events
            indices.push(start + (i * room).div_ceil(slots));
        }
    }
    Ok(PredictedSchedule { indices, clamped })
}

/// `budget` retrains at `round(j * total / budget)` for `j = 1..=budget`.
pub fn periodic_schedule(total: u64, budget: usize) -> Vec<u64> {
    let mut out: Vec<u64> = (1..=budget as u64)
        .map(|j| ((j * total) as f64 / budget as f64).round().max(1.0) as u64)
        .collect();
    out.dedup();
    out
}

/// A threshold that spends `budget` retrains over `checkpoints` intervals when
/// drift stays near the mean of `initial` samples.
pub fn calibrate_theta(initial: &[f64], checkpoints: usize, budget: usize) -> Result<f64> {
    if initial.is_empty() {
        return Err(Error::InsufficientData("no drift samples to calibrate from".into()));
    }
    let mean = initial.iter().sum::<f64>() / initial.len() as f64;
    Ok(mean * checkpoints as f64 / (budget + 1) as f64)
}

/// Sum over checkpoints of `||Z_t - Z_last||_F`, where `Z_last` is the
/// embedding at the latest retrain at or before `t`. The first timeline entry
/// counts as the initial training.
pub fn staleness(trigger_times: &[u64], timeline: &[(u64, ColumnMatrix)]) -> Result<f64> {
    let Some((first_index, _)) = timeline.first() else {
        return Ok(0.0);
    };
    let lookup = |index: u64| {
        timeline
            .iter()
            .find(|(t, _)| *t == index)
            .map(|(_, z)| z)
            .ok_or_else(|| Error::InsufficientData(format!("timeline has no checkpoint at retrain index {index}")))
    };
    for &t in trigger_times {
        lookup(t)?;
    }
    let mut total = 0.0;
    for (t, z) in timeline {
        let last = trigger_times
            .iter()
            .copied()
            .filter(|&r| r <= *t)
            .max()
            .unwrap_or(*first_index);
        total += delta_z(lookup(last)?, z)?;
    }
    Ok(total)
}
