//! Energy storage physics and the per-interval bidding reward.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

const POWER_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EssParams {
    /// Charge/discharge power rating, MW.
    pub p_max: f64,
    /// Energy capacity, MWh.
    pub e_max: f64,
    pub eta_c: f64,
    pub eta_d: f64,
    /// Depreciation cost per discharged MWh, USD.
    pub lambda_dep: f64,
    /// Hours per clearing interval.
    pub tau: f64,
    /// Fixed penalty for an infeasible dispatch, USD.
    pub penalty: f64,
}

impl Default for EssParams {
    fn default() -> Self {
        Self {
            p_max: 1.0,
            e_max: 4.0,
            eta_c: 0.95,
            eta_d: 0.95,
            lambda_dep: 10.0,
            tau: 1.0 / 12.0,
            penalty: 170.0,
        }
    }
}

impl EssParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("p_max", self.p_max),
            ("e_max", self.e_max),
            ("eta_c", self.eta_c),
            ("eta_d", self.eta_d),
            ("tau", self.tau),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("lambda_dep", self.lambda_dep), ("penalty", self.penalty)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.eta_c > 1.0 || self.eta_d > 1.0 {
            return Err(invalid("efficiencies must not exceed 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EssState {
    /// Stored energy, MWh.
    pub soc: f64,
}

impl EssState {
    pub fn new(soc: f64, params: &EssParams) -> Result<Self> {
        if !(0.0..=params.e_max).contains(&soc) {
            return Err(invalid(format!("soc {soc} outside [0, {}]", params.e_max)));
        }
        Ok(Self { soc })
    }

    pub fn frac(&self, params: &EssParams) -> f64 {
        (self.soc / params.e_max).clamp(0.0, 1.0)
    }
}

/// Splits a signed power (discharge positive) into `(charge, discharge)`.
pub fn power_split(p: f64, params: &EssParams) -> Result<(f64, f64)> {
    if !p.is_finite() || p.abs() > params.p_max + POWER_SLACK {
        return Err(invalid(format!(
            "power {p} MW exceeds rating {} MW",
            params.p_max
        )));
    }
    let p = p.clamp(-params.p_max, params.p_max);
    Ok(if p >= 0.0 { (0.0, p) } else { (-p, 0.0) })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub state: EssState,
    pub p_c: f64,
    pub p_d: f64,
    pub violated: bool,
}

/// Advances the state of charge by one interval. An infeasible request is
/// scaled down to the power that lands exactly on the violated bound.
pub fn step_soc(state: EssState, p_c: f64, p_d: f64, params: &EssParams) -> Result<StepOutcome> {
    let limit = params.p_max + POWER_SLACK;
    if !(p_c >= 0.0 && p_d >= 0.0 && p_c <= limit && p_d <= limit) {
        return Err(invalid(format!(
            "powers (charge {p_c}, discharge {p_d}) outside [0, {}]",
            params.p_max
        )));
    }
    if p_c > 0.0 && p_d > 0.0 {
        return Err(invalid("charge and discharge must not both be positive"));
    }
    let next = state.soc + params.tau * (params.eta_c * p_c - p_d / params.eta_d);
    if next > params.e_max {
        let p_c = ((params.e_max - state.soc) / (params.tau * params.eta_c)).max(0.0);
        Ok(StepOutcome {
            state: EssState { soc: params.e_max },
            p_c,
            p_d: 0.0,
            violated: true,
        })
    } else if next < 0.0 {
        let p_d = (state.soc * params.eta_d / params.tau).max(0.0);
        Ok(StepOutcome {
            state: EssState { soc: 0.0 },
            p_c: 0.0,
            p_d,
            violated: true,
        })
    } else {
        Ok(StepOutcome {
            state: EssState { soc: next },
            p_c,
            p_d,
            violated: false,
        })
    }
}

/// Net energy revenue minus depreciation, minus the penalty on violation.
pub fn reward(lambda: f64, p_c: f64, p_d: f64, violated: bool, params: &EssParams) -> f64 {
    let energy = lambda * (p_d - p_c) * params.tau;
    let depreciation = params.lambda_dep * p_d * params.tau;
    let penalty = if violated { params.penalty } else { 0.0 };
    energy - depreciation - penalty
}
