//! Subcommands. Each one resolves the run configuration, writes its
//! artifacts through [`Outputs`], and prints a short summary.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use hdb_core::checkpoint::Checkpoint;
use hdb_core::data::{observation_at, save_series, RT_PER_HOUR};
use hdb_core::env::{first_bid_index, Agent, BidConfig, Method};
use hdb_core::experiment::{
    bench_generation, bid_observations, evaluate, init_networks, new_trainer, optimal_bound, sweep_n, train_env,
    write_bench_csv, write_compare_csv, write_sweep_csv, Dataset, MethodResult, MonotonicityStats, SWEEP_NS,
};
use hdb_core::ppo::{write_log, Env, Trainer};
use serde::Serialize;

use crate::config::RunConfig;
use crate::outputs::{Outputs, OUT_ENV};

#[derive(Debug, Parser)]
#[command(name = "hdb-bidder", version, about = "Train and evaluate neural supply-function bidders for energy storage")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// TOML run configuration; defaults apply to anything left out.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (falls back to $HDB_BIDDER_OUT, then the config, then ./out).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub node: Option<String>,
    #[arg(long, global = true)]
    pub capacity_mwh: Option<f64>,
    #[arg(long, global = true)]
    pub n_pairs: Option<usize>,
    #[arg(long, global = true)]
    pub m_samples: Option<usize>,
    #[arg(long, global = true)]
    pub method: Option<Method>,
    /// Total training steps.
    #[arg(long, global = true)]
    pub steps: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic RT/DA price pair.
    Synth {
        #[arg(long)]
        days: Option<usize>,
    },
    /// Train one method on the training split.
    Train {
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Backtest a trained policy on the test split.
    Backtest {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write the bids a trained policy submits at chosen test hours.
    Extract {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated test-hour indices.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        hours: Vec<usize>,
    },
    /// Train and backtest every configured method against the optimum.
    Compare,
    /// Backtest one policy across bid dimensions.
    SweepN {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Time bid generation per batch width.
    Bench {
        /// Policy to time; a freshly initialized one is used when unset.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        calls: usize,
    },
}

impl GlobalArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.node {
            cfg.data.node = Some(v.clone());
        }
        if let Some(v) = self.capacity_mwh {
            cfg.ess.e_max = v;
        }
        if let Some(v) = self.n_pairs {
            cfg.bid.n_pairs = v;
        }
        if let Some(v) = self.m_samples {
            cfg.bid.m_samples = v;
        }
        if let Some(v) = self.method {
            cfg.method = v;
        }
        if let Some(v) = self.steps {
            cfg.ppo.total_steps = v;
        }
        cfg.out = self
            .out
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .or(cfg.out)
            .or_else(|| Some(PathBuf::from("out")));
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.global.resolve()?;
    let mut out = Outputs::create(cfg.out.as_deref().expect("resolved"))?;
    match execute(&cli.command, &cfg, &mut out) {
        Ok(()) => Ok(()),
        Err(e) => {
            out.discard();
            Err(e)
        }
    }
}

fn execute(cmd: &Command, cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    match cmd {
        Command::Synth { days } => synth(cfg, *days, out),
        Command::Train { resume } => train(cfg, resume.as_deref(), out),
        Command::Backtest { checkpoint } => backtest(cfg, checkpoint.as_deref(), out),
        Command::Extract { checkpoint, hours } => extract(cfg, checkpoint.as_deref(), hours, out),
        Command::Compare => compare(cfg, out),
        Command::SweepN { checkpoint } => sweep(cfg, checkpoint.as_deref(), out),
        Command::Bench { checkpoint, calls } => bench(cfg, checkpoint.as_deref(), *calls, out),
    }
}

const CHECKPOINT: &str = "checkpoint.json";

fn json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

fn synth(cfg: &RunConfig, days: Option<usize>, out: &mut Outputs) -> Result<()> {
    ensure!(cfg.data.rt_csv.is_none(), "synth writes synthetic data; unset data.rt_csv");
    let mut cfg = cfg.clone();
    if let Some(d) = days {
        cfg.data.synth_days = d;
    }
    let series = cfg.series()?;
    let rt = out.path("rt.csv")?;
    let da = out.path("da.csv")?;
    save_series(&series, &rt, &da)?;
    println!("wrote {} days for {} to {}", series.days(), series.node_id, out.dir().display());
    Ok(())
}

fn train(cfg: &RunConfig, resume: Option<&Path>, out: &mut Outputs) -> Result<()> {
    let data = cfg.dataset()?;
    let bid = cfg.bid;
    let mut env = train_env(&data.train, cfg.method, &cfg.ess, &bid, &cfg.ppo, cfg.seed)?;
    let mut trainer = match resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            ck.check_architecture(cfg.method, bid.n_pairs)?;
            ck.restore_env(&mut env)?;
            let mut t = ck.trainer;
            t.cfg.total_steps = cfg.ppo.total_steps;
            t
        }
        None => new_trainer(cfg.method, bid.n_pairs, cfg.ppo, cfg.seed)?,
    };
    let ck_path = out.path(CHECKPOINT)?;
    let every = cfg.checkpoint_every;
    let (method, n_pairs) = (cfg.method, bid.n_pairs);
    let mut rollouts = 0usize;
    while !trainer.finished() {
        let row = trainer.train_rollout(&mut env)?;
        rollouts += 1;
        if rollouts.is_multiple_of(every) {
            Checkpoint::capture(method, n_pairs, &trainer, &env).save(&ck_path)?;
            println!(
                "step {:>9}  reward/step {:>9.4} USD  sigma {:.4}",
                row.step, row.rollout_reward_mean, row.sigma
            );
        }
    }
    Checkpoint::capture(method, n_pairs, &trainer, &env).save(&ck_path)?;
    let log = out.path("train_log.csv")?;
    write_log(&trainer.log, BufWriter::new(File::create(&log)?))?;
    // The saved config describes the run, not where it was written.
    let saved = RunConfig { out: None, ..cfg.clone() };
    out.write("config.toml", saved.to_toml()?)?;
    println!("trained {method} for {} steps; checkpoint {}", trainer.step, ck_path.display());
    Ok(())
}

fn load_policy(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<(Method, BidConfig, Trainer)> {
    let path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out.as_deref().expect("resolved").join(CHECKPOINT));
    let ck = Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
    // Baselines keep the bid dimension they were trained with; supply-curve
    // policies can be discretized at any dimension.
    let mut bid = cfg.bid;
    if !ck.method.observes_price() {
        bid.n_pairs = ck.n_pairs;
    }
    ck.check_architecture(ck.method, bid.n_pairs)?;
    Ok((ck.method, bid, ck.trainer))
}

fn optimum(cfg: &RunConfig, data: &Dataset) -> Result<f64> {
    let opt = optimal_bound(&data.test, &cfg.ess, cfg.ess.e_max / 2.0, cfg.dp_power_levels)?;
    ensure!(opt.profit_usd > 0.0, "the test prices admit no profitable schedule");
    Ok(opt.profit_usd)
}

#[derive(Serialize)]
struct BacktestSummary<'a> {
    result: &'a MethodResult,
    clearing_mae: Option<f64>,
    monotonicity: Option<MonotonicityStats>,
}

fn backtest(cfg: &RunConfig, checkpoint: Option<&Path>, out: &mut Outputs) -> Result<()> {
    let (method, bid, trainer) = load_policy(cfg, checkpoint)?;
    let data = cfg.dataset()?;
    let optimal = optimum(cfg, &data)?;
    let (result, outcome) = evaluate(method, &trainer.policy, &data.test, &cfg.ess, &bid, optimal)?;
    ensure!(
        result.profit_usd <= optimal,
        "backtest profit {:.4} exceeds the optimum {optimal:.4}",
        result.profit_usd
    );
    out.write("backtest.json", json(&outcome.report)?)?;
    let csv = out.path("backtest.csv")?;
    outcome.report.write_csv(BufWriter::new(File::create(&csv)?))?;
    let summary = BacktestSummary {
        result: &result,
        clearing_mae: outcome.clearing_mae(),
        monotonicity: method
            .observes_price()
            .then(|| MonotonicityStats::from_curves(&outcome.raw_curves)),
    };
    out.write("summary.json", json(&summary)?)?;
    println!(
        "{method}: profit {:.2} USD of optimum {:.2} USD ({:.2}%), {} infeasible requests",
        result.profit_usd, optimal, result.captured_pct, result.violations
    );
    Ok(())
}

#[derive(Serialize)]
struct ExtractedBid {
    hour: usize,
    timestamp: String,
    bid: hdb_core::hdb::Hdb,
}

fn extract(cfg: &RunConfig, checkpoint: Option<&Path>, hours: &[usize], out: &mut Outputs) -> Result<()> {
    let (method, bid, trainer) = load_policy(cfg, checkpoint)?;
    let data = cfg.dataset()?;
    let start = first_bid_index(&data.test)?;
    let available = (data.test.rt.len() - start) / RT_PER_HOUR;
    let agent = Agent {
        method,
        policy: &trainer.policy,
    };
    let mut bids = Vec::with_capacity(hours.len());
    for &h in hours {
        if h >= available {
            bail!("hour {h} is outside the {available} test hours");
        }
        let idx = start + h * RT_PER_HOUR;
        let obs = observation_at(&data.test, idx, 0.5, &bid.range)?;
        let period = agent.bid(&obs, &bid)?;
        bids.push(ExtractedBid {
            hour: h,
            timestamp: data.test.rt.timestamp(idx).format("%Y-%m-%dT%H:%M:%SZ").to_string(),
            bid: period.hdb.scale_power(cfg.ess.p_max),
        });
    }
    out.write("bids.json", json(&bids)?)?;
    println!("wrote {} bids", bids.len());
    Ok(())
}

fn compare(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let data = cfg.dataset()?;
    let optimal = optimum(cfg, &data)?;
    let bid = cfg.bid;
    let mut rows = Vec::with_capacity(cfg.compare.len());
    for &method in &cfg.compare {
        let mut env = train_env(&data.train, method, &cfg.ess, &bid, &cfg.ppo, cfg.seed)?;
        let mut trainer = new_trainer(method, bid.n_pairs, cfg.ppo, cfg.seed)?;
        trainer.train(&mut env as &mut dyn Env, |_, _| Ok(()))?;
        let log = out.path(&format!("{method}/train_log.csv"))?;
        write_log(&trainer.log, BufWriter::new(File::create(&log)?))?;
        Checkpoint::capture(method, bid.n_pairs, &trainer, &env).save(&out.path(&format!("{method}/{CHECKPOINT}"))?)?;
        let (result, _) = evaluate(method, &trainer.policy, &data.test, &cfg.ess, &bid, optimal)?;
        ensure!(
            result.profit_usd <= optimal,
            "{method} profit {:.4} exceeds the optimum {optimal:.4}",
            result.profit_usd
        );
        println!("{method:>12}: {:>10.2} USD  {:>7.2}%", result.profit_usd, result.captured_pct);
        rows.push(result);
    }
    let csv = out.path("compare.csv")?;
    write_compare_csv(&rows, BufWriter::new(File::create(&csv)?))?;
    println!("optimum {optimal:.2} USD; table {}", csv.display());
    Ok(())
}

fn sweep(cfg: &RunConfig, checkpoint: Option<&Path>, out: &mut Outputs) -> Result<()> {
    let (method, bid, trainer) = load_policy(cfg, checkpoint)?;
    let data = cfg.dataset()?;
    let optimal = optimum(cfg, &data)?;
    let rows = sweep_n(method, &trainer.policy, &data.test, &cfg.ess, &bid, &SWEEP_NS, optimal)?;
    let csv = out.path("sweep_n.csv")?;
    write_sweep_csv(&rows, BufWriter::new(File::create(&csv)?))?;
    for r in &rows {
        println!("N={:>2}: {:>7.2}%  mae {:.5}", r.n_pairs, r.captured_pct, r.clearing_mae);
    }
    Ok(())
}

fn bench(cfg: &RunConfig, checkpoint: Option<&Path>, calls: usize, out: &mut Outputs) -> Result<()> {
    let (method, policy) = match checkpoint {
        Some(p) => {
            let (m, _, t) = load_policy(cfg, Some(p))?;
            (m, t.policy)
        }
        None => {
            ensure!(cfg.method.observes_price(), "{} does not generate supply curves", cfg.method);
            let (p, _) = init_networks(cfg.method, cfg.bid.n_pairs, cfg.ppo.std.initial, cfg.seed)?;
            (cfg.method, p)
        }
    };
    let data = cfg.dataset()?;
    let observations = bid_observations(&data.test, &cfg.bid)?;
    let m = cfg.bid.m_samples;
    let mut widths = vec![1, 4, 16, m];
    widths.dedup();
    let rows = bench_generation(method, &policy, &observations, &cfg.bid, &widths, calls)?;
    let csv = out.path("bench.csv")?;
    write_bench_csv(&rows, BufWriter::new(File::create(&csv)?))?;
    for r in &rows {
        println!(
            "width {:>4}: mean {:.3} ms  p50 {:.3} ms  p95 {:.3} ms",
            r.batch_width, r.mean_ms, r.p50_ms, r.p95_ms
        );
    }
    Ok(())
}
