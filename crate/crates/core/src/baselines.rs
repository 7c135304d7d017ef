//! Comparison bidders and the perfect-foresight optimum.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::ess::EssParams;
use crate::hdb::{BidBounds, BidPair, Hdb};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    /// One price-independent power per period.
    SelfBid,
    /// A charge threshold and a discharge threshold.
    PairBid,
    /// `N` raw price/power pairs emitted directly by the network.
    DirectHdb,
    /// Price-conditioned network with a plain power head.
    HdbWoa,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [Self::SelfBid, Self::PairBid, Self::DirectHdb, Self::HdbWoa];

    pub fn action_dim(self, n_pairs: usize) -> usize {
        match self {
            Self::SelfBid | Self::HdbWoa => 1,
            Self::PairBid => 4,
            Self::DirectHdb => 2 * n_pairs,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::SelfBid => "self-bid",
            Self::PairBid => "pair-bid",
            Self::DirectHdb => "direct-hdb",
            Self::HdbWoa => "hdb-woa",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid(format!("unknown baseline '{s}'")))
    }
}

/// What a baseline action commits to for one period.
#[derive(Clone, Debug, PartialEq)]
pub enum BaselineBid {
    /// Dispatched regardless of the clearing price.
    Power(f64),
    Bid(Hdb),
}

impl BaselineBid {
    pub fn clear(&self, lambda: f64) -> f64 {
        match self {
            Self::Power(p) => *p,
            Self::Bid(h) => h.clear(lambda),
        }
    }

    /// The commitment as a bid object; a fixed power becomes a flat bid.
    pub fn into_hdb(self, bounds: &BidBounds) -> Result<Hdb> {
        match self {
            Self::Power(p) => Hdb::with_floor(
                vec![BidPair {
                    price: bounds.lambda_min,
                    power: p,
                }],
                p,
                *bounds,
            ),
            Self::Bid(h) => Ok(h),
        }
    }
}

/// Maps a raw action in `[-1, 1]^dim` to the baseline's commitment. Prices
/// and powers are mapped affinely from `[-1, 1]` onto `bounds`.
pub fn baseline_action_to_bid(
    kind: BaselineKind,
    raw: &[f64],
    bounds: &BidBounds,
    n_pairs: usize,
) -> Result<BaselineBid> {
    let dim = kind.action_dim(n_pairs);
    if raw.len() != dim {
        return Err(Error::Dimension {
            expected: dim,
            got: raw.len(),
        });
    }
    if let Some(v) = raw.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
        return Err(invalid(format!("action component {v} outside [-1, 1]")));
    }
    let price = |x: f64| {
        (bounds.lambda_min + (x + 1.0) * 0.5 * (bounds.lambda_max - bounds.lambda_min))
            .clamp(bounds.lambda_min, bounds.lambda_max)
    };
    let power = |x: f64| (bounds.p_min + (x + 1.0) * 0.5 * (bounds.p_max - bounds.p_min)).clamp(bounds.p_min, bounds.p_max);
    let magnitude = |x: f64| x.abs() * bounds.p_max;
    match kind {
        BaselineKind::SelfBid | BaselineKind::HdbWoa => Ok(BaselineBid::Power(raw[0] * bounds.p_max)),
        BaselineKind::PairBid => {
            let (lc, ld) = (price(raw[0]), price(raw[1]));
            let (pc, pd) = (magnitude(raw[2]), magnitude(raw[3]));
            let pairs = vec![
                BidPair {
                    price: lc.min(ld),
                    power: 0.0,
                },
                BidPair { price: ld, power: pd },
            ];
            Ok(BaselineBid::Bid(Hdb::with_floor(pairs, -pc, *bounds)?))
        }
        BaselineKind::DirectHdb => {
            let mut prices: Vec<f64> = raw[..n_pairs].iter().map(|&x| price(x)).collect();
            let mut powers: Vec<f64> = raw[n_pairs..].iter().map(|&x| power(x)).collect();
            prices.sort_by(f64::total_cmp);
            powers.sort_by(f64::total_cmp);
            let pairs = prices
                .into_iter()
                .zip(powers)
                .map(|(price, power)| BidPair { price, power })
                .collect();
            Ok(BaselineBid::Bid(Hdb::new(pairs, *bounds)?))
        }
    }
}

// ---------------------------------------------------------------------------
// Perfect-foresight optimum

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpGrid {
    pub soc_levels: usize,
    pub power_levels: usize,
}

impl Default for DpGrid {
    fn default() -> Self {
        Self {
            soc_levels: 201,
            power_levels: 21,
        }
    }
}

impl DpGrid {
    /// A grid whose state-of-charge step is a sixteenth of the smallest
    /// nonzero energy move in the power menu, which keeps the gain available
    /// from nearest-level rounding negligible.
    pub fn for_params(params: &EssParams, power_levels: usize) -> Self {
        let half = (power_levels.max(3) / 2) as f64;
        let smallest = params.p_max / half * params.tau * params.eta_c.min(1.0 / params.eta_d);
        let levels = (16.0 * params.e_max / smallest).ceil() as usize + 1;
        Self {
            soc_levels: levels.max(Self::default().soc_levels),
            power_levels,
        }
    }

    pub fn refined(self) -> Self {
        Self {
            soc_levels: 2 * self.soc_levels - 1,
            power_levels: 2 * self.power_levels - 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpSolution {
    pub profit_usd: f64,
    /// Signed power per interval, MW (discharge positive).
    pub schedule: Vec<f64>,
    /// Grid state of charge after each interval, MWh.
    pub soc: Vec<f64>,
}

struct DpModel {
    soc_step: f64,
    levels: usize,
    menu: Vec<f64>,
    tol: f64,
}

impl DpModel {
    fn new(params: &EssParams, grid: DpGrid) -> Result<Self> {
        params.validate()?;
        if grid.soc_levels < 2 {
            return Err(invalid("soc_levels must be at least 2"));
        }
        if grid.power_levels < 3 || grid.power_levels.is_multiple_of(2) {
            return Err(invalid("power_levels must be odd and at least 3 so the menu contains 0"));
        }
        let half = (grid.power_levels / 2) as f64;
        let menu = (0..grid.power_levels)
            .map(|k| (k as f64 - half) / half * params.p_max)
            .collect();
        Ok(Self {
            soc_step: params.e_max / (grid.soc_levels - 1) as f64,
            levels: grid.soc_levels,
            menu,
            tol: 1e-9 * params.e_max,
        })
    }

    fn nearest(&self, soc: f64) -> usize {
        ((soc / self.soc_step).round() as usize).min(self.levels - 1)
    }

    /// Landing grid index for power `p` from grid level `j`, if feasible.
    fn transition(&self, j: usize, p: f64, params: &EssParams) -> Option<usize> {
        let soc = j as f64 * self.soc_step;
        let next = if p >= 0.0 {
            soc - params.tau * p / params.eta_d
        } else {
            soc - params.tau * params.eta_c * p
        };
        if next < -self.tol || next > params.e_max + self.tol {
            return None;
        }
        Some(self.nearest(next.clamp(0.0, params.e_max)))
    }
}

fn interval_profit(lambda: f64, p: f64, params: &EssParams) -> f64 {
    let (pc, pd) = if p >= 0.0 { (0.0, p) } else { (-p, 0.0) };
    (lambda * (pd - pc) - params.lambda_dep * pd) * params.tau
}

/// Perfect-foresight dynamic program over a uniform state-of-charge grid
/// and a symmetric signed-power menu. Post-transition energy is rounded to
/// the nearest grid level; moves leaving `[0, e_max]` are excluded.
pub fn optimal_bid_dp(prices: &[f64], params: &EssParams, start_soc: f64, grid: DpGrid) -> Result<DpSolution> {
    let model = DpModel::new(params, grid)?;
    if !(0.0..=params.e_max).contains(&start_soc) {
        return Err(invalid(format!("start soc {start_soc} outside [0, {}]", params.e_max)));
    }
    if let Some(i) = prices.iter().position(|p| !p.is_finite()) {
        return Err(Error::NonFinite(format!("price at interval {i}")));
    }
    let t_len = prices.len();
    let l = model.levels;
    let k_len = model.menu.len();
    let next: Vec<Option<usize>> = (0..l)
        .flat_map(|j| model.menu.iter().map(move |&p| (j, p)))
        .map(|(j, p)| model.transition(j, p, params))
        .collect();
    let mut value = vec![0.0; l];
    let mut choice = vec![0u16; t_len * l];
    let mut buf = vec![0.0; l];
    for t in (0..t_len).rev() {
        let gains: Vec<f64> = model.menu.iter().map(|&p| interval_profit(prices[t], p, params)).collect();
        let idle = k_len / 2;
        for j in 0..l {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0u16;
            // Idle first so that ties resolve to doing nothing.
            for k in std::iter::once(idle).chain((0..k_len).filter(|&k| k != idle)) {
                if let Some(jn) = next[j * k_len + k] {
                    let v = gains[k] + value[jn];
                    if v > best {
                        best = v;
                        arg = k as u16;
                    }
                }
            }
            if best == f64::NEG_INFINITY {
                return Err(Error::Infeasible(format!("no feasible move from grid level {j} at interval {t}")));
            }
            buf[j] = best;
            choice[t * l + j] = arg;
        }
        std::mem::swap(&mut value, &mut buf);
    }
    let mut j = model.nearest(start_soc);
    let profit_usd = value[j];
    let mut schedule = Vec::with_capacity(t_len);
    let mut soc = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let k = choice[t * l + j] as usize;
        schedule.push(model.menu[k]);
        j = next[j * k_len + k].expect("argmax move is feasible");
        soc.push(j as f64 * model.soc_step);
    }
    Ok(DpSolution {
        profit_usd,
        schedule,
        soc,
    })
}

/// Profit of `schedule` under the program's own accounting.
pub fn schedule_profit(prices: &[f64], schedule: &[f64], params: &EssParams) -> f64 {
    prices
        .iter()
        .zip(schedule)
        .map(|(&l, &p)| interval_profit(l, p, params))
        .sum()
}

/// Percentage of the optimum captured by `profit`.
pub fn captured_ratio(profit: f64, optimal: f64) -> Result<f64> {
    if !(optimal > 0.0) {
        return Err(invalid(format!("captured ratio undefined for optimum {optimal}")));
    }
    Ok(100.0 * profit / optimal)
}
