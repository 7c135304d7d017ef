use hdb_core::data::PriceRange;
use hdb_core::env::{backtest, first_bid_index, Agent, BidConfig, Method, TrainEnvConfig, TrainEnv};
use hdb_core::ess::EssParams;
use hdb_core::experiment::Dataset;
use hdb_core::hdb::PriceGrid;
use hdb_core::nn::{Activation, Mlp, PolicyNet, HIDDEN};
use hdb_core::ppo::Env;

/// A policy whose head is the same for every state.
fn constant_policy(head: [f64; 4]) -> PolicyNet {
    let mut mlp = Mlp::zeros(&[16, HIDDEN, HIDDEN, 4], Activation::Tanh, Activation::Tanh).unwrap();
    let n = mlp.num_params();
    for (p, h) in mlp.params_mut()[n - 4..].iter_mut().zip(head) {
        *p = h.atanh();
    }
    PolicyNet { mlp, sigma: 0.25 }
}

/// Grid index whose cell `(p_k, p_{k+1})` holds none of `prices`.
fn empty_cell(grid: &PriceGrid, prices: &[f64], lo: f64, hi: f64) -> usize {
    (0..grid.prices().len() - 1)
        .filter(|&k| grid.price(k) >= lo && grid.price(k + 1) <= hi)
        .find(|&k| !prices.iter().any(|&p| p > grid.price(k) && p < grid.price(k + 1)))
        .expect("a price cell without observations")
}

#[test]
fn training_and_backtest_dispatch_coincide_for_a_three_plateau_policy() {
    let ds = Dataset::synthetic(5, 10, 0.5).unwrap();
    let params = EssParams::default();
    let bid = BidConfig::default();
    let range = PriceRange::default();
    let grid = PriceGrid::new(range, bid.m_samples).unwrap();
    let start = first_bid_index(&ds.test).unwrap();
    let prices = &ds.test.rt.values[start..start + 288];

    // Charge at or below one grid price, discharge from another; both
    // thresholds sit where no observed price can fall between the curve's
    // and the bid's breakpoints.
    let mut sorted = prices.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |f: f64| sorted[(f * 287.0) as usize];
    let j = empty_cell(&grid, prices, q(0.1), q(0.5));
    let k = empty_cell(&grid, prices, q(0.5), q(0.9)) + 1;
    let lc = range.normalize(grid.price(j)) + 1e-9;
    let ld = range.normalize(grid.price(k)) - 1e-9;
    let policy = constant_policy([lc, ld, 0.6, 0.9]);

    let out = backtest(Agent { method: Method::HdbBid, policy: &policy }, &ds.test, &params, &bid, params.e_max / 2.0).unwrap();
    let cfg = TrainEnvConfig {
        params,
        episode_len: 288,
        ..TrainEnvConfig::default()
    };
    let mut env = TrainEnv::new(ds.test.clone(), Method::HdbBid, cfg, 0).unwrap();
    env.reset_at(start, params.e_max / 2.0).unwrap();
    let head = policy.mean(env.observe()).unwrap();

    let (mut charged, mut discharged) = (0, 0);
    for (t, c) in out.report.clearings().take(288).enumerate() {
        let step = env.step(&head).unwrap();
        let info = env.last_step().unwrap();
        assert_eq!(info.lambda, c.lambda, "price at step {t}");
        assert!((info.requested_mw - c.power).abs() < 1e-12, "step {t}: {} vs {}", info.requested_mw, c.power);
        assert!((env.soc() - c.soc_after).abs() < 1e-12, "soc at step {t}");
        assert_eq!(info.violated, c.violated);
        if !c.violated {
            assert!((info.reward_usd - c.reward).abs() < 1e-9);
        }
        charged += (c.power < 0.0) as usize;
        discharged += (c.power > 0.0) as usize;
        assert_eq!(step.done, t == 287);
    }
    assert!(charged > 0 && discharged > 0, "policy should use both branches");
}
