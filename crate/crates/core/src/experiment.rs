//! End-to-end experiment plumbing shared by the command-line tool and the
//! acceptance harness: train a method, backtest it on held-out days, and
//! score it against the perfect-foresight optimum.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{captured_ratio, optimal_bid_dp, DpGrid, DpSolution};
use crate::data::{observation_at, RT_PER_HOUR, split, synth_series, MarketSeries, Observation};
use crate::env::{backtest, first_bid_index, Agent, BacktestOutcome, BidConfig, Method, TrainEnv, TrainEnvConfig};
use crate::error::{invalid, Result};
use crate::ess::EssParams;
use crate::hdb::{generate_hdb, PriceGrid, SupplyCurve};
use crate::nn::{seeded_rng, Nnsf, PolicyNet, PowerHead, ValueNet};
use crate::ppo::{LogRow, PpoConfig, Trainer};

pub const SWEEP_NS: [usize; 8] = [1, 2, 3, 4, 6, 8, 10, 15];

/// Train and test views of one price series.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: MarketSeries,
    /// Test days plus the history needed to observe from the first test hour.
    pub test: MarketSeries,
}

impl Dataset {
    pub fn from_series(full: &MarketSeries, train_frac: f64) -> Result<Self> {
        full.validate()?;
        let (train, test) = split(full, train_frac)?;
        let test = full.with_lookback(test.rt.start)?;
        Ok(Self { train, test })
    }

    pub fn synthetic(seed: u64, days: usize, train_frac: f64) -> Result<Self> {
        Self::from_series(&synth_series(seed, days)?, train_frac)
    }
}

/// Initial mean of the zero-band power magnitudes.
pub const MAGNITUDE_INIT: f64 = 0.5;

/// Fresh actor and critic for a method. Zero-band magnitudes start at
/// [`MAGNITUDE_INIT`].
pub fn init_networks(method: Method, n_pairs: usize, sigma: f64, seed: u64) -> Result<(PolicyNet, ValueNet)> {
    let mut rng = seeded_rng(seed, 0);
    let mut policy = PolicyNet::new(method.state_dim(), method.action_dim(n_pairs), sigma, &mut rng)?;
    if method.power_head() == Some(PowerHead::ZeroBand) {
        policy.set_output_mean(2, MAGNITUDE_INIT)?;
        policy.set_output_mean(3, MAGNITUDE_INIT)?;
    }
    let value = ValueNet::new(method.state_dim(), &mut rng)?;
    Ok((policy, value))
}

pub fn new_trainer(method: Method, n_pairs: usize, cfg: PpoConfig, seed: u64) -> Result<Trainer> {
    let (policy, value) = init_networks(method, n_pairs, cfg.std.initial, seed)?;
    Trainer::new(policy, value, cfg, seed)
}

pub fn train_env(series: &MarketSeries, method: Method, params: &EssParams, bid: &BidConfig, ppo: &PpoConfig, seed: u64) -> Result<TrainEnv> {
    let cfg = TrainEnvConfig {
        params: *params,
        range: bid.range,
        n_pairs: bid.n_pairs,
        reward_scale: ppo.reward_scale,
        ..TrainEnvConfig::default()
    };
    TrainEnv::new(series.clone(), method, cfg, seed)
}

/// Trains `method` from scratch on `series`.
pub fn train_method(
    series: &MarketSeries,
    method: Method,
    params: &EssParams,
    bid: &BidConfig,
    ppo: &PpoConfig,
    seed: u64,
    on_rollout: impl FnMut(&Trainer, &LogRow) -> Result<()>,
) -> Result<Trainer> {
    let mut env = train_env(series, method, params, bid, ppo, seed)?;
    let mut trainer = new_trainer(method, bid.n_pairs, *ppo, seed)?;
    trainer.train(&mut env, on_rollout)?;
    Ok(trainer)
}

/// The prices a backtest of `series` clears against.
pub fn evaluated_prices(series: &MarketSeries) -> Result<Vec<f64>> {
    let start = first_bid_index(series)?;
    let hours = (series.rt.len() - start) / RT_PER_HOUR;
    Ok(series.rt.values[start..start + hours * RT_PER_HOUR].to_vec())
}

/// Perfect-foresight optimum over the evaluated prices. The optimum is
/// solved on the capacity-derived grid and on its refinement, and the larger
/// value is kept.
pub fn optimal_bound(series: &MarketSeries, params: &EssParams, start_soc: f64, power_levels: usize) -> Result<DpSolution> {
    let prices = evaluated_prices(series)?;
    let grid = DpGrid::for_params(params, power_levels);
    let coarse = optimal_bid_dp(&prices, params, start_soc, grid)?;
    let fine = optimal_bid_dp(&prices, params, start_soc, grid.refined())?;
    Ok(if fine.profit_usd >= coarse.profit_usd { fine } else { coarse })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    pub capacity_mwh: f64,
    pub profit_usd: f64,
    pub optimal_usd: f64,
    pub captured_pct: f64,
    pub violations: usize,
}

/// Backtests a trained policy from half charge and scores it.
pub fn evaluate(
    method: Method,
    policy: &PolicyNet,
    series: &MarketSeries,
    params: &EssParams,
    bid: &BidConfig,
    optimal_usd: f64,
) -> Result<(MethodResult, BacktestOutcome)> {
    let out = backtest(Agent { method, policy }, series, params, bid, params.e_max / 2.0)?;
    let profit = out.report.total_profit_usd;
    let result = MethodResult {
        method,
        capacity_mwh: params.e_max,
        profit_usd: profit,
        optimal_usd,
        captured_pct: captured_ratio(profit, optimal_usd)?,
        violations: out.report.violations(),
    };
    Ok((result, out))
}

pub const COMPARE_HEADER: &str = "method,capacity_mwh,profit_usd,optimal_usd,captured_pct";

pub fn write_compare_csv(rows: &[MethodResult], mut w: impl Write) -> Result<()> {
    writeln!(w, "{COMPARE_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{:.4},{:.4},{:.4}",
            r.method, r.capacity_mwh, r.profit_usd, r.optimal_usd, r.captured_pct
        )?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_pairs: usize,
    pub profit_usd: f64,
    pub captured_pct: f64,
    pub clearing_mae: f64,
}

/// Backtests one price-conditioned policy at each bid dimension in `ns`.
pub fn sweep_n(
    method: Method,
    policy: &PolicyNet,
    series: &MarketSeries,
    params: &EssParams,
    bid: &BidConfig,
    ns: &[usize],
    optimal_usd: f64,
) -> Result<Vec<SweepRow>> {
    if method.power_head().is_none() {
        return Err(invalid(format!("{method} does not produce a supply curve")));
    }
    ns.iter()
        .map(|&n| {
            let cfg = BidConfig { n_pairs: n, ..*bid };
            let (r, out) = evaluate(method, policy, series, params, &cfg, optimal_usd)?;
            Ok(SweepRow {
                n_pairs: n,
                profit_usd: r.profit_usd,
                captured_pct: r.captured_pct,
                clearing_mae: out.clearing_mae().unwrap_or(0.0),
            })
        })
        .collect()
}

pub const SWEEP_HEADER: &str = "n_pairs,profit_usd,captured_pct,clearing_mae";

pub fn write_sweep_csv(rows: &[SweepRow], mut w: impl Write) -> Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{:.4},{:.4},{:.6}",
            r.n_pairs, r.profit_usd, r.captured_pct, r.clearing_mae
        )?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityStats {
    pub curves: usize,
    pub monotone_curves: usize,
    /// Sampled points over all curves.
    pub points: usize,
    /// Points that monotonizing leaves unchanged.
    pub monotone_points: usize,
}

impl MonotonicityStats {
    pub fn from_curves(curves: &[SupplyCurve]) -> Self {
        curves.iter().fold(Self::default(), |mut s, c| {
            s.curves += 1;
            s.monotone_curves += c.is_monotone() as usize;
            s.points += c.len();
            s.monotone_points += c.monotone_points();
            s
        })
    }

    pub fn curve_fraction(&self) -> f64 {
        self.monotone_curves as f64 / self.curves.max(1) as f64
    }

    pub fn point_fraction(&self) -> f64 {
        self.monotone_points as f64 / self.points.max(1) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub batch_width: usize,
    pub calls: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
}

/// Observations at the start of each bid hour of `series`, at half charge.
pub fn bid_observations(series: &MarketSeries, bid: &BidConfig) -> Result<Vec<Observation>> {
    let start = first_bid_index(series)?;
    (start..series.rt.len())
        .step_by(RT_PER_HOUR)
        .map(|idx| observation_at(series, idx, 0.5, &bid.range))
        .collect()
}

/// Times `generate_hdb` over `calls` bids per batch width.
pub fn bench_generation(
    method: Method,
    policy: &PolicyNet,
    observations: &[Observation],
    bid: &BidConfig,
    widths: &[usize],
    calls: usize,
) -> Result<Vec<BenchRow>> {
    let head = method
        .power_head()
        .ok_or_else(|| invalid(format!("{method} does not produce a supply curve")))?;
    if observations.is_empty() || calls == 0 {
        return Err(invalid("bench needs at least one observation and one call"));
    }
    let grid = PriceGrid::new(bid.range, bid.m_samples)?;
    let f = Nnsf { policy, head };
    widths
        .iter()
        .map(|&width| {
            let mut times = Vec::with_capacity(calls);
            for k in 0..calls {
                let obs = &observations[k % observations.len()];
                let t0 = Instant::now();
                let (hdb, _) = generate_hdb(&f, obs, &grid, bid.n_pairs, &bid.discretize, width)?;
                times.push(t0.elapsed().as_secs_f64() * 1e3);
                std::hint::black_box(hdb);
            }
            let mean = times.iter().sum::<f64>() / calls as f64;
            times.sort_by(f64::total_cmp);
            let pct = |q: f64| times[((q * (calls - 1) as f64).round() as usize).min(calls - 1)];
            Ok(BenchRow {
                batch_width: width,
                calls,
                mean_ms: mean,
                p50_ms: pct(0.5),
                p95_ms: pct(0.95),
            })
        })
        .collect()
}

pub const BENCH_HEADER: &str = "batch_width,calls,mean_ms,p50_ms,p95_ms";

pub fn write_bench_csv(rows: &[BenchRow], mut w: impl Write) -> Result<()> {
    writeln!(w, "{BENCH_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{:.4},{:.4},{:.4}",
            r.batch_width, r.calls, r.mean_ms, r.p50_ms, r.p95_ms
        )?;
    }
    Ok(())
}
