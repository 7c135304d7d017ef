//! The two market simulations: the per-interval training environment, in
//! which the policy sees the clearing price directly, and the hourly
//! backtest, in which a bid is fixed at the top of each hour and cleared
//! against the next twelve real-time prices.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{baseline_action_to_bid, BaselineKind};
use crate::data::{
    observation_at, MarketSeries, Observation, PriceRange, OBS_DIM, RT_PER_DAY, RT_PER_HOUR, STATE_DIM,
};
use crate::error::{invalid, Error, Result};
use crate::ess::{power_split, reward, step_soc, EssParams, EssState};
use crate::hdb::{
    discretize, monotonize, sample_supply_curve, BidBounds, DiscretizeOptions, Hdb, PriceGrid, SupplyCurve,
};
use crate::nn::{nnsf_power, seeded_rng, Nnsf, PolicyNet, PowerHead};
use crate::ppo::{Env, EnvStep};

/// A bidding strategy: the proposed supply-function bidder or a baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    HdbBid,
    Baseline(BaselineKind),
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::HdbBid,
        Method::Baseline(BaselineKind::HdbWoa),
        Method::Baseline(BaselineKind::DirectHdb),
        Method::Baseline(BaselineKind::PairBid),
        Method::Baseline(BaselineKind::SelfBid),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::HdbBid => "hdb-bid",
            Method::Baseline(k) => k.name(),
        }
    }

    /// Whether the policy takes the clearing price as an input.
    pub fn observes_price(self) -> bool {
        self.power_head().is_some()
    }

    pub fn power_head(self) -> Option<PowerHead> {
        match self {
            Method::HdbBid => Some(PowerHead::ZeroBand),
            Method::Baseline(BaselineKind::HdbWoa) => Some(PowerHead::Direct),
            Method::Baseline(_) => None,
        }
    }

    pub fn state_dim(self) -> usize {
        if self.observes_price() {
            STATE_DIM
        } else {
            OBS_DIM
        }
    }

    pub fn action_dim(self, n_pairs: usize) -> usize {
        match self {
            Method::HdbBid => 4,
            Method::Baseline(k) => k.action_dim(n_pairs),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid(format!("unknown method '{s}'")))
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn clamp_action(raw: &[f64]) -> Vec<f64> {
    raw.iter().map(|a| a.clamp(-1.0, 1.0)).collect()
}

/// Normalized power a method dispatches at normalized price `lambda_norm`
/// (USD price `lambda`) given a raw action.
fn dispatch(method: Method, raw: &[f64], lambda: f64, lambda_norm: f64, range: &PriceRange, n_pairs: usize) -> Result<f64> {
    let a = clamp_action(raw);
    match method {
        Method::HdbBid => Ok(nnsf_power(&a, lambda_norm)),
        Method::Baseline(kind) => {
            let bid = baseline_action_to_bid(kind, &a, &BidBounds::normalized(range), n_pairs)?;
            Ok(bid.clear(lambda))
        }
    }
}

// ---------------------------------------------------------------------------
// Training environment

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainEnvConfig {
    pub params: EssParams,
    pub range: PriceRange,
    pub n_pairs: usize,
    pub reward_scale: f64,
    pub episode_len: usize,
}

impl Default for TrainEnvConfig {
    fn default() -> Self {
        Self {
            params: EssParams::default(),
            range: PriceRange::default(),
            n_pairs: 10,
            reward_scale: 10.0,
            episode_len: RT_PER_DAY,
        }
    }
}

/// What happened in the most recent training step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub lambda: f64,
    /// Requested power, MW.
    pub requested_mw: f64,
    /// Executed (net discharge) power, MW.
    pub executed_mw: f64,
    pub reward_usd: f64,
    pub violated: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TrainEnvState {
    cursor: usize,
    t: usize,
    soc: f64,
    active: bool,
    rng: ChaCha8Rng,
}

/// One-day episodes sampled from a training series. Each step clears the
/// action at the realized price of the current interval.
pub struct TrainEnv {
    series: MarketSeries,
    method: Method,
    cfg: TrainEnvConfig,
    starts: Vec<usize>,
    rng: ChaCha8Rng,
    soc: EssState,
    cursor: usize,
    t: usize,
    active: bool,
    state: Vec<f64>,
    last: Option<StepInfo>,
}

impl TrainEnv {
    pub fn new(series: MarketSeries, method: Method, cfg: TrainEnvConfig, seed: u64) -> Result<Self> {
        series.validate()?;
        cfg.params.validate()?;
        if cfg.episode_len == 0 || !(cfg.reward_scale > 0.0) || cfg.n_pairs == 0 {
            return Err(invalid("episode_len, reward_scale and n_pairs must be positive"));
        }
        let first = series
            .first_observable_index()
            .ok_or_else(|| Error::Bounds("series has no observable interval".into()))?;
        let first = first.div_ceil(RT_PER_DAY) * RT_PER_DAY;
        let starts: Vec<usize> = (first..)
            .step_by(RT_PER_DAY)
            .take_while(|s| s + cfg.episode_len <= series.rt.len())
            .collect();
        if starts.is_empty() {
            return Err(Error::Bounds(format!(
                "series of {} days has no full episode after the observation lookback",
                series.days()
            )));
        }
        Ok(Self {
            series,
            method,
            cfg,
            starts,
            rng: seeded_rng(seed, 1),
            soc: EssState { soc: 0.0 },
            cursor: 0,
            t: 0,
            active: false,
            state: vec![0.0; method.state_dim()],
            last: None,
        })
    }

    pub fn episode_starts(&self) -> &[usize] {
        &self.starts
    }

    pub fn soc(&self) -> f64 {
        self.soc.soc
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn last_step(&self) -> Option<StepInfo> {
        self.last
    }

    pub fn series(&self) -> &MarketSeries {
        &self.series
    }

    /// Starts an episode at a given interval and state of charge.
    pub fn reset_at(&mut self, start: usize, soc: f64) -> Result<()> {
        if start + self.cfg.episode_len > self.series.rt.len() {
            return Err(Error::Bounds(format!("episode from {start} runs past the series")));
        }
        self.soc = EssState::new(soc, &self.cfg.params)?;
        self.cursor = start;
        self.t = 0;
        self.active = true;
        self.last = None;
        self.refresh_state()
    }

    fn refresh_state(&mut self) -> Result<()> {
        let frac = self.soc.frac(&self.cfg.params);
        let obs = observation_at(&self.series, self.cursor, frac, &self.cfg.range)?;
        self.state.clear();
        self.state.extend_from_slice(&obs.0);
        if self.method.observes_price() {
            let idx = self.cursor.min(self.series.rt.len() - 1);
            self.state.push(self.cfg.range.normalize(self.series.rt.values[idx]));
        }
        Ok(())
    }
}

impl Env for TrainEnv {
    fn state_dim(&self) -> usize {
        self.method.state_dim()
    }

    fn action_dim(&self) -> usize {
        self.method.action_dim(self.cfg.n_pairs)
    }

    fn reset(&mut self) -> Result<()> {
        let start = self.starts[self.rng.gen_range(0..self.starts.len())];
        let soc = self.rng.gen_range(0.0..=self.cfg.params.e_max);
        self.reset_at(start, soc)
    }

    fn observe(&self) -> &[f64] {
        &self.state
    }

    fn step(&mut self, action: &[f64]) -> Result<EnvStep> {
        if !self.active {
            return Err(Error::Usage("step called on a finished episode; reset first".into()));
        }
        if action.len() != self.action_dim() {
            return Err(Error::Dimension {
                expected: self.action_dim(),
                got: action.len(),
            });
        }
        let p = &self.cfg.params;
        let lambda = self.series.rt.values[self.cursor];
        let power = dispatch(
            self.method,
            action,
            lambda,
            self.cfg.range.normalize(lambda),
            &self.cfg.range,
            self.cfg.n_pairs,
        )?;
        let requested_mw = power * p.p_max;
        let (pc, pd) = power_split(requested_mw, p)?;
        let out = step_soc(self.soc, pc, pd, p)?;
        let r = reward(lambda, out.p_c, out.p_d, out.violated, p);
        self.soc = out.state;
        self.cursor += 1;
        self.t += 1;
        let done = self.t >= self.cfg.episode_len;
        self.active = !done;
        self.last = Some(StepInfo {
            lambda,
            requested_mw,
            executed_mw: out.p_d - out.p_c,
            reward_usd: r,
            violated: out.violated,
        });
        self.refresh_state()?;
        Ok(EnvStep {
            reward: r / self.cfg.reward_scale,
            done,
            terminal: false,
        })
    }

    fn save_state(&self) -> serde_json::Value {
        serde_json::to_value(TrainEnvState {
            cursor: self.cursor,
            t: self.t,
            soc: self.soc.soc,
            active: self.active,
            rng: self.rng.clone(),
        })
        .expect("env state serializes")
    }

    fn load_state(&mut self, state: &serde_json::Value) -> Result<()> {
        let s: TrainEnvState = serde_json::from_value(state.clone())?;
        if s.cursor > self.series.rt.len() || s.t > self.cfg.episode_len {
            return Err(Error::Checkpoint("environment state does not fit this series".into()));
        }
        self.soc = EssState::new(s.soc, &self.cfg.params)?;
        self.cursor = s.cursor;
        self.t = s.t;
        self.active = s.active;
        self.rng = s.rng;
        self.last = None;
        self.refresh_state()
    }
}

// ---------------------------------------------------------------------------
// Bidding agents

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BidConfig {
    pub range: PriceRange,
    pub n_pairs: usize,
    /// Supply-curve samples per bid.
    pub m_samples: usize,
    /// Prices evaluated per network call; `0` means all at once.
    pub batch_width: usize,
    pub discretize: DiscretizeOptions,
}

impl Default for BidConfig {
    fn default() -> Self {
        Self {
            range: PriceRange::default(),
            n_pairs: 10,
            m_samples: 512,
            batch_width: 0,
            discretize: DiscretizeOptions::default(),
        }
    }
}

/// A bid in normalized power units, with the sampled supply curves when the
/// method has one.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodBid {
    pub hdb: Hdb,
    pub raw_curve: Option<SupplyCurve>,
    pub curve: Option<SupplyCurve>,
}

/// A trained policy acting as a bidder.
#[derive(Clone, Copy)]
pub struct Agent<'a> {
    pub method: Method,
    pub policy: &'a PolicyNet,
}

impl Agent<'_> {
    pub fn bid(&self, obs: &Observation, cfg: &BidConfig) -> Result<PeriodBid> {
        match self.method.power_head() {
            Some(head) => {
                let grid = PriceGrid::new(cfg.range, cfg.m_samples)?;
                let f = Nnsf {
                    policy: self.policy,
                    head,
                };
                let width = if cfg.batch_width == 0 { cfg.m_samples } else { cfg.batch_width };
                let raw = sample_supply_curve(&f, obs, &grid, width);
                let curve = monotonize(&raw);
                let hdb = discretize(&curve, cfg.n_pairs, &cfg.discretize)?;
                Ok(PeriodBid {
                    hdb,
                    raw_curve: Some(raw),
                    curve: Some(curve),
                })
            }
            None => {
                let Method::Baseline(kind) = self.method else {
                    unreachable!("only baselines lack a power head")
                };
                let mean = self.policy.mean(&obs.0)?;
                let bounds = BidBounds::normalized(&cfg.range);
                let hdb = baseline_action_to_bid(kind, &clamp_action(&mean), &bounds, cfg.n_pairs)?
                    .into_hdb(&bounds)?;
                Ok(PeriodBid {
                    hdb,
                    raw_curve: None,
                    curve: None,
                })
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Backtest

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Clearing {
    pub lambda: f64,
    /// Cleared power, MW (discharge positive).
    pub power: f64,
    pub soc_after: f64,
    /// Market income less depreciation, raw USD. The training penalty for
    /// infeasible requests is not a market cash flow and is reported only
    /// through `violated`.
    pub reward: f64,
    pub violated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HourRecord {
    pub timestamp: DateTime<Utc>,
    /// Submitted bid, powers in MW.
    pub bid: Hdb,
    pub clearings: Vec<Clearing>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BacktestReport {
    pub total_profit_usd: f64,
    pub per_hour: Vec<HourRecord>,
}

impl BacktestReport {
    pub fn prices(&self) -> Vec<f64> {
        self.clearings().map(|c| c.lambda).collect()
    }

    pub fn clearings(&self) -> impl Iterator<Item = &Clearing> + '_ {
        self.per_hour.iter().flat_map(|h| h.clearings.iter())
    }

    pub fn violations(&self) -> usize {
        self.clearings().filter(|c| c.violated).count()
    }

    /// Flat per-interval log.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "timestamp,lambda,power_mw,soc_after_mwh,reward_usd,violated")?;
        for h in &self.per_hour {
            for (k, c) in h.clearings.iter().enumerate() {
                let t = h.timestamp + chrono::Duration::minutes(5 * k as i64);
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    t.format("%Y-%m-%dT%H:%M:%SZ"),
                    c.lambda,
                    c.power,
                    c.soc_after,
                    c.reward,
                    c.violated
                )?;
            }
        }
        Ok(())
    }
}

/// A backtest plus the supply-curve diagnostics used for approximation
/// statistics.
#[derive(Clone, Debug)]
pub struct BacktestOutcome {
    pub report: BacktestReport,
    /// Raw sampled curve of every hour (price-conditioned methods only).
    pub raw_curves: Vec<SupplyCurve>,
    /// Per-interval `|clear(bid, λ) - monotone curve(λ)|` in normalized units.
    pub clearing_errors: Vec<f64>,
}

impl BacktestOutcome {
    pub fn clearing_mae(&self) -> Option<f64> {
        (!self.clearing_errors.is_empty())
            .then(|| self.clearing_errors.iter().sum::<f64>() / self.clearing_errors.len() as f64)
    }
}

/// Hour-aligned first interval of a series at which bids can be built.
pub fn first_bid_index(series: &MarketSeries) -> Result<usize> {
    let first = series
        .first_observable_index()
        .ok_or_else(|| Error::Bounds("series has no observable interval".into()))?;
    let idx = first.div_ceil(RT_PER_HOUR) * RT_PER_HOUR;
    if idx + RT_PER_HOUR > series.rt.len() {
        return Err(Error::Bounds("series has no full hour after the observation lookback".into()));
    }
    Ok(idx)
}

/// Hourly bidding over `series` from the first observable hour to the end.
/// The observation (and state of charge) is frozen at each hour start; the
/// bid is then cleared against the hour's twelve prices with physical
/// clamping of the state of charge.
pub fn backtest(agent: Agent<'_>, series: &MarketSeries, params: &EssParams, cfg: &BidConfig, start_soc: f64) -> Result<BacktestOutcome> {
    series.validate()?;
    params.validate()?;
    let start = first_bid_index(series)?;
    let mut soc = EssState::new(start_soc, params)?;
    let hours = (series.rt.len() - start) / RT_PER_HOUR;
    let mut per_hour = Vec::with_capacity(hours);
    let mut raw_curves = vec![];
    let mut clearing_errors = vec![];
    let mut total = 0.0;
    for h in 0..hours {
        let idx = start + h * RT_PER_HOUR;
        let obs = observation_at(series, idx, soc.frac(params), &cfg.range)?;
        let bid = agent.bid(&obs, cfg)?;
        let mw = bid.hdb.scale_power(params.p_max);
        let mut clearings = Vec::with_capacity(RT_PER_HOUR);
        for k in 0..RT_PER_HOUR {
            let lambda = series.rt.values[idx + k];
            let power = mw.clear(lambda);
            if let Some(curve) = &bid.curve {
                clearing_errors.push((bid.hdb.clear(lambda) - curve.value_at(lambda)).abs());
            }
            let (pc, pd) = power_split(power, params)?;
            let out = step_soc(soc, pc, pd, params)?;
            let r = reward(lambda, out.p_c, out.p_d, false, params);
            soc = out.state;
            total += r;
            clearings.push(Clearing {
                lambda,
                power,
                soc_after: soc.soc,
                reward: r,
                violated: out.violated,
            });
        }
        if let Some(raw) = bid.raw_curve {
            raw_curves.push(raw);
        }
        per_hour.push(HourRecord {
            timestamp: series.rt.timestamp(idx),
            bid: mw,
            clearings,
        });
    }
    Ok(BacktestOutcome {
        report: BacktestReport {
            total_profit_usd: total,
            per_hour,
        },
        raw_curves,
        clearing_errors,
    })
}

/// Mean absolute gap between each cleared bid and the monotone supply curve
/// it approximates, in normalized power units.
pub fn clearing_approx_gap(agent: Agent<'_>, series: &MarketSeries, params: &EssParams, cfg: &BidConfig) -> Result<f64> {
    if agent.method.power_head().is_none() {
        return Err(invalid(format!("{} has no supply curve to approximate", agent.method)));
    }
    backtest(agent, series, params, cfg, params.e_max / 2.0)?
        .clearing_mae()
        .ok_or_else(|| Error::Bounds("backtest cleared no intervals".into()))
}
