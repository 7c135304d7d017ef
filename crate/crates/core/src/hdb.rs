//! High-dimensional bids: representation, clearing, and extraction of a
//! market-legal N-pair bid from a sampled supply curve.
//!
//! Extraction runs in three steps. The supply function is sampled on a
//! uniform price grid, the samples are replaced by their running maximum so
//! the curve is non-decreasing, and a greedy coordinate sweep places `N`
//! price anchors on the grid, each carrying the mean power of its segment.
//! Anchor prices are always grid prices, so a curve with at most `N`
//! plateaus is reproduced exactly.

use serde::ser::SerializeSeq;
use serde::{Deserialize, Serialize, Serializer};

use crate::data::{Observation, PriceRange};
use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BidPair {
    pub price: f64,
    pub power: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BidBounds {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub p_min: f64,
    pub p_max: f64,
}

impl BidBounds {
    /// Price range with powers normalized to `[-1, 1]`.
    pub fn normalized(range: &PriceRange) -> Self {
        Self {
            lambda_min: range.min,
            lambda_max: range.max,
            p_min: -1.0,
            p_max: 1.0,
        }
    }

    pub fn price_range(&self) -> PriceRange {
        PriceRange {
            min: self.lambda_min,
            max: self.lambda_max,
        }
    }
}

/// A monotone N-pair bid. Below the first pair price the bid clears at the
/// floor power, which is `p_min` unless set explicitly.
#[derive(Clone, Debug, PartialEq)]
pub struct Hdb {
    pairs: Vec<BidPair>,
    floor: f64,
    bounds: BidBounds,
}

impl Hdb {
    pub fn new(pairs: Vec<BidPair>, bounds: BidBounds) -> Result<Self> {
        Self::with_floor(pairs, bounds.p_min, bounds)
    }

    pub fn with_floor(pairs: Vec<BidPair>, floor: f64, bounds: BidBounds) -> Result<Self> {
        let hdb = Self {
            pairs,
            floor,
            bounds,
        };
        hdb.validate()?;
        Ok(hdb)
    }

    /// Checks bounds and monotonicity of every pair (and of the floor).
    pub fn validate(&self) -> Result<()> {
        let b = &self.bounds;
        if self.pairs.is_empty() {
            return Err(invalid("bid has no pairs"));
        }
        if !(b.p_min..=b.p_max).contains(&self.floor) {
            return Err(invalid(format!("floor power {} out of bounds", self.floor)));
        }
        let mut prev = BidPair {
            price: b.lambda_min,
            power: self.floor,
        };
        for (i, pair) in self.pairs.iter().enumerate() {
            if !(b.lambda_min..=b.lambda_max).contains(&pair.price)
                || !(b.p_min..=b.p_max).contains(&pair.power)
            {
                return Err(invalid(format!("pair {i} ({}, {}) out of bounds", pair.price, pair.power)));
            }
            if pair.price < prev.price || pair.power < prev.power {
                return Err(invalid(format!("pair {i} breaks monotonicity")));
            }
            prev = *pair;
        }
        Ok(())
    }

    pub fn pairs(&self) -> &[BidPair] {
        &self.pairs
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn bounds(&self) -> &BidBounds {
        &self.bounds
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Power of the highest accepted pair, i.e. the last pair whose price
    /// does not exceed `lambda`.
    pub fn clear(&self, lambda: f64) -> f64 {
        let accepted = self.pairs.partition_point(|p| p.price <= lambda);
        if accepted == 0 {
            self.floor
        } else {
            self.pairs[accepted - 1].power
        }
    }

    /// Rescales powers (and power bounds) by `factor > 0`, e.g. normalized to MW.
    pub fn scale_power(&self, factor: f64) -> Hdb {
        let s = |v: f64| v * factor;
        Hdb {
            pairs: self
                .pairs
                .iter()
                .map(|p| BidPair {
                    price: p.price,
                    power: s(p.power),
                })
                .collect(),
            floor: s(self.floor),
            bounds: BidBounds {
                p_min: s(self.bounds.p_min),
                p_max: s(self.bounds.p_max),
                ..self.bounds
            },
        }
    }

    /// Pairs as submitted to the market. A floor above `p_min` becomes an
    /// extra leading pair at `lambda_min`, which clears identically.
    pub fn market_pairs(&self) -> Vec<BidPair> {
        let mut out = Vec::with_capacity(self.pairs.len() + 1);
        if self.floor != self.bounds.p_min {
            out.push(BidPair {
                price: self.bounds.lambda_min,
                power: self.floor,
            });
        }
        out.extend_from_slice(&self.pairs);
        out
    }
}

impl Serialize for Hdb {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let pairs = self.market_pairs();
        let mut seq = serializer.serialize_seq(Some(pairs.len()))?;
        for p in &pairs {
            seq.serialize_element(p)?;
        }
        seq.end()
    }
}

/// Uniform inclusive price grid of `m` points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceGrid {
    pub range: PriceRange,
    pub m: usize,
}

impl PriceGrid {
    pub fn new(range: PriceRange, m: usize) -> Result<Self> {
        if m < 2 {
            return Err(invalid(format!("price grid needs at least 2 points, got {m}")));
        }
        Ok(Self { range, m })
    }

    pub fn step(&self) -> f64 {
        self.range.width() / (self.m - 1) as f64
    }

    pub fn price(&self, k: usize) -> f64 {
        if k + 1 == self.m {
            self.range.max
        } else {
            self.range.min + k as f64 * self.step()
        }
    }

    pub fn prices(&self) -> Vec<f64> {
        (0..self.m).map(|k| self.price(k)).collect()
    }

    /// Grid index of the largest grid price not above `lambda`.
    pub fn floor_index(&self, lambda: f64) -> usize {
        if lambda <= self.range.min {
            return 0;
        }
        let mut k = (((lambda - self.range.min) / self.step()).floor() as usize).min(self.m - 1);
        while k + 1 < self.m && self.price(k + 1) <= lambda {
            k += 1;
        }
        while k > 0 && self.price(k) > lambda {
            k -= 1;
        }
        k
    }
}

/// A price-to-power relation evaluated at one market observation.
pub trait SupplyFunction {
    /// Writes the deterministic power (normalized to `[-1, 1]`) for each
    /// normalized input price.
    fn eval_powers(&self, obs: &Observation, prices_norm: &[f64], out: &mut [f64]);
}

#[derive(Clone, Debug, PartialEq)]
pub struct SupplyCurve {
    pub grid: PriceGrid,
    pub powers: Vec<f64>,
    pub p_min: f64,
    pub p_max: f64,
}

impl SupplyCurve {
    pub fn new(grid: PriceGrid, powers: Vec<f64>, p_min: f64, p_max: f64) -> Result<Self> {
        if powers.len() != grid.m {
            return Err(invalid(format!(
                "curve has {} samples for a {}-point grid",
                powers.len(),
                grid.m
            )));
        }
        Ok(Self {
            grid,
            powers,
            p_min,
            p_max,
        })
    }

    pub fn len(&self) -> usize {
        self.powers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.powers.is_empty()
    }

    pub fn is_monotone(&self) -> bool {
        self.powers.windows(2).all(|w| w[0] <= w[1])
    }

    /// Number of samples the running maximum leaves unchanged.
    pub fn monotone_points(&self) -> usize {
        let mut best = f64::NEG_INFINITY;
        self.powers
            .iter()
            .filter(|&&p| {
                let keep = p >= best;
                best = best.max(p);
                keep
            })
            .count()
    }

    /// Value of the (piecewise-constant) sampled curve at `lambda`.
    pub fn value_at(&self, lambda: f64) -> f64 {
        self.powers[self.grid.floor_index(lambda)]
    }
}

/// Samples `f` on the grid in batches of `batch_width` prices.
pub fn sample_supply_curve(
    f: &dyn SupplyFunction,
    obs: &Observation,
    grid: &PriceGrid,
    batch_width: usize,
) -> SupplyCurve {
    let width = batch_width.clamp(1, grid.m);
    let prices: Vec<f64> = (0..grid.m).map(|k| grid.range.normalize(grid.price(k))).collect();
    let mut powers = vec![0.0; grid.m];
    for (p_chunk, out_chunk) in prices.chunks(width).zip(powers.chunks_mut(width)) {
        f.eval_powers(obs, p_chunk, out_chunk);
    }
    for p in &mut powers {
        *p = p.clamp(-1.0, 1.0);
    }
    SupplyCurve {
        grid: *grid,
        powers,
        p_min: -1.0,
        p_max: 1.0,
    }
}

/// Running maximum of the sampled powers.
pub fn monotonize(curve: &SupplyCurve) -> SupplyCurve {
    let mut out = curve.clone();
    let mut run = f64::NEG_INFINITY;
    for p in &mut out.powers {
        run = run.max(*p);
        *p = run;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscretizeOptions {
    pub max_iters: usize,
    /// Largest level change (power units) still counted as converged.
    pub power_tol: f64,
    /// Treat the floor segment as a free anchor instead of pinning it to `p_min`.
    pub free_floor: bool,
}

impl Default for DiscretizeOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            power_tol: 1e-6,
            free_floor: false,
        }
    }
}

/// Mean of a non-decreasing slice, kept inside `[first, last]` so rounding
/// can never break ordering between adjacent segments.
fn segment_mean(powers: &[f64]) -> f64 {
    let mean = powers.iter().sum::<f64>() / powers.len() as f64;
    mean.clamp(powers[0], powers[powers.len() - 1])
}

struct Anchors<'a> {
    powers: &'a [f64],
    idx: Vec<usize>,
    levels: Vec<f64>,
    floor: f64,
}

impl Anchors<'_> {
    fn seg_end(&self, i: usize) -> usize {
        self.idx.get(i + 1).copied().unwrap_or(self.powers.len())
    }

    fn level(&self, i: usize) -> f64 {
        let (from, to) = (self.idx[i], self.seg_end(i));
        if from < to {
            segment_mean(&self.powers[from..to])
        } else {
            self.powers[from.min(self.powers.len() - 1)]
        }
    }

    fn floor_level(&self) -> f64 {
        let to = self.idx[0];
        if to > 0 {
            segment_mean(&self.powers[..to])
        } else {
            self.powers[0]
        }
    }
}

impl Anchors<'_> {
    fn lower_level(&self, i: usize) -> f64 {
        if i == 0 {
            self.floor
        } else {
            self.levels[i - 1]
        }
    }

    /// Coordinate sweeps until no anchor moves or the iteration budget runs out.
    fn sweep(&mut self, opts: &DiscretizeOptions, budget: &mut usize) {
        let n = self.idx.len();
        let m = self.powers.len();
        while *budget > 0 {
            *budget -= 1;
            let mut moved = false;
            if opts.free_floor {
                let f = self.floor_level();
                moved |= (f - self.floor).abs() > opts.power_tol;
                self.floor = f;
            }
            for i in 0..n {
                let target = 0.5 * (self.lower_level(i) + self.levels[i]);
                // Inverse lookup on the monotone curve: first sample reaching the midpoint.
                let k = self.powers.partition_point(|&v| v < target);
                let lo = if i == 0 { 0 } else { self.idx[i - 1] };
                let hi = self.idx.get(i + 1).copied().unwrap_or(m - 1);
                let k = k.clamp(lo, hi);
                if k != self.idx[i] {
                    moved = true;
                    self.idx[i] = k;
                }
                let level = self.level(i);
                moved |= (level - self.levels[i]).abs() > opts.power_tol;
                self.levels[i] = level;
            }
            if !moved {
                break;
            }
        }
    }

    fn sse(&self, from: usize, to: usize, level: f64) -> f64 {
        self.powers[from..to].iter().map(|v| (v - level).powi(2)).sum()
    }

    /// Best single split of `[from, to)`: returns `(split, error)` where the
    /// left part keeps `left_level` (or its own mean when `None`) and the
    /// right part takes its mean.
    fn best_split(&self, from: usize, to: usize, left_level: Option<f64>) -> (usize, f64) {
        let seg = &self.powers[from..to];
        let mut prefix = vec![(0.0, 0.0); seg.len() + 1];
        for (j, &v) in seg.iter().enumerate() {
            prefix[j + 1] = (prefix[j].0 + v, prefix[j].1 + v * v);
        }
        let part = |a: usize, b: usize, level: Option<f64>| -> f64 {
            if a >= b {
                return 0.0;
            }
            let (s, q) = (prefix[b].0 - prefix[a].0, prefix[b].1 - prefix[a].1);
            let len = (b - a) as f64;
            match level {
                Some(l) => q - 2.0 * l * s + len * l * l,
                None => (q - s * s / len).max(0.0),
            }
        };
        let start = if left_level.is_some() { 0 } else { 1 };
        (start..seg.len())
            .map(|j| (from + j, part(0, j, left_level) + part(j, seg.len(), None)))
            .fold((from, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best })
    }

    /// Moves a redundant anchor into the worst segment. Returns false when
    /// there is nothing to gain.
    fn reseed(&mut self, opts: &DiscretizeOptions) -> bool {
        let n = self.idx.len();
        let Some(spare) = (0..n).find(|&i| self.idx[i] == self.seg_end(i)) else {
            return false;
        };
        // Segment errors; `None` marks the floor segment.
        let mut worst: Option<(Option<usize>, f64)> = None;
        if self.idx[0] > 0 {
            let e = self.sse(0, self.idx[0], self.floor);
            worst = Some((None, e));
        }
        for i in 0..n {
            let (from, to) = (self.idx[i], self.seg_end(i));
            if to > from {
                let e = self.sse(from, to, self.levels[i]);
                if worst.is_none_or(|w| e > w.1) {
                    worst = Some((Some(i), e));
                }
            }
        }
        let Some((seg, err)) = worst else {
            return false;
        };
        if err <= 0.0 {
            return false;
        }
        let (from, to, left) = match seg {
            None => (0, self.idx[0], (!opts.free_floor).then_some(self.floor)),
            Some(i) => (self.idx[i], self.seg_end(i), None),
        };
        let (split, split_err) = self.best_split(from, to, left);
        if split_err >= err * (1.0 - 1e-12) {
            return false;
        }
        self.idx.remove(spare);
        self.idx.push(split);
        self.idx.sort_unstable();
        for i in 0..n {
            self.levels[i] = self.level(i);
        }
        if opts.free_floor {
            self.floor = self.floor_level();
        }
        true
    }
}

/// Greedy anchor placement minimizing the discrete squared error to a
/// monotone curve; see the module docs.
pub fn discretize(curve: &SupplyCurve, n: usize, opts: &DiscretizeOptions) -> Result<Hdb> {
    if n == 0 {
        return Err(invalid("bid needs at least one pair"));
    }
    if let Some(k) = curve.powers.windows(2).position(|w| w[1] < w[0]) {
        return Err(invalid(format!("supply curve is not monotone at sample {}", k + 1)));
    }
    let m = curve.len();
    let powers = &curve.powers;
    let mut a = Anchors {
        powers,
        idx: (0..n).map(|i| i * m / n).collect(),
        levels: vec![0.0; n],
        floor: curve.p_min,
    };
    for i in 0..n {
        a.levels[i] = a.level(i);
    }
    if opts.free_floor {
        a.floor = a.floor_level();
    }

    let mut budget = opts.max_iters;
    a.sweep(opts, &mut budget);
    // Sweeps can strand anchors on empty segments while another segment
    // still spans several levels; move one anchor to that segment's best
    // split and sweep again. Each move strictly lowers the error.
    for _ in 0..4 * n {
        if budget == 0 || !a.reseed(opts) {
            break;
        }
        a.sweep(opts, &mut budget);
    }

    // Output pass: fresh levels for the final anchor prices.
    for i in 0..n {
        a.levels[i] = a.level(i);
    }
    let floor = if opts.free_floor {
        a.floor_level()
    } else {
        curve.p_min
    };
    let bounds = BidBounds {
        lambda_min: curve.grid.range.min,
        lambda_max: curve.grid.range.max,
        p_min: curve.p_min,
        p_max: curve.p_max,
    };
    let pairs = a
        .idx
        .iter()
        .zip(&a.levels)
        .map(|(&k, &level)| BidPair {
            price: curve.grid.price(k),
            power: level.clamp(curve.p_min, curve.p_max),
        })
        .collect();
    Hdb::with_floor(pairs, floor.clamp(curve.p_min, curve.p_max), bounds)
}

/// Riemann-sum squared deviation between a curve and a bid on the curve's grid.
pub fn discretization_error(curve: &SupplyCurve, hdb: &Hdb) -> f64 {
    let step = curve.grid.step();
    curve
        .powers
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let d = p - hdb.clear(curve.grid.price(k));
            d * d
        })
        .sum::<f64>()
        * step
}

/// Sample, monotonize and discretize: the full bid generation for one period.
pub fn generate_hdb(
    f: &dyn SupplyFunction,
    obs: &Observation,
    grid: &PriceGrid,
    n: usize,
    opts: &DiscretizeOptions,
    batch_width: usize,
) -> Result<(Hdb, SupplyCurve)> {
    let curve = monotonize(&sample_supply_curve(f, obs, grid, batch_width));
    let hdb = discretize(&curve, n, opts)?;
    Ok((hdb, curve))
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Exhaustive anchor placement for small grids.

    use super::*;

    /// Minimum discrete error over every non-decreasing placement of `n`
    /// anchors, each level set to its segment mean, floor pinned at `p_min`.
    pub fn brute_force_min_error(curve: &SupplyCurve, n: usize) -> (f64, Vec<usize>) {
        let m = curve.len();
        let p = &curve.powers;
        let sse = |from: usize, to: usize, level: Option<f64>| -> f64 {
            if from >= to {
                return 0.0;
            }
            let seg = &p[from..to];
            let lv = level.unwrap_or_else(|| seg.iter().sum::<f64>() / seg.len() as f64);
            seg.iter().map(|v| (v - lv).powi(2)).sum()
        };
        let mut best = (f64::INFINITY, vec![]);
        let mut idx = vec![0usize; n];
        loop {
            let mut e = sse(0, idx[0], Some(curve.p_min));
            for i in 0..n {
                let end = if i + 1 < n { idx[i + 1] } else { m };
                e += sse(idx[i], end, None);
            }
            if e < best.0 {
                best = (e, idx.clone());
            }
            // Next non-decreasing index vector.
            let mut j = n;
            loop {
                if j == 0 {
                    return (best.0 * curve.grid.step(), best.1);
                }
                j -= 1;
                if idx[j] + 1 < m {
                    idx[j] += 1;
                    for t in j + 1..n {
                        idx[t] = idx[j];
                    }
                    break;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::oracle::brute_force_min_error;
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn bounds01() -> BidBounds {
        BidBounds {
            lambda_min: -50.0,
            lambda_max: 200.0,
            p_min: -1.0,
            p_max: 1.0,
        }
    }

    fn curve(range: (f64, f64), powers: Vec<f64>, p_min: f64) -> SupplyCurve {
        let grid = PriceGrid::new(PriceRange::new(range.0, range.1).unwrap(), powers.len()).unwrap();
        SupplyCurve::new(grid, powers, p_min, 1.0).unwrap()
    }

    fn step_curve(m: usize, bps: &[usize], levels: &[f64], p_min: f64) -> SupplyCurve {
        let powers = (0..m)
            .map(|k| {
                let seg = bps.iter().filter(|&&b| b <= k).count();
                levels[seg]
            })
            .collect();
        curve((0.0, 10.0), powers, p_min)
    }

    #[test]
    fn clearing_rule() {
        let pairs = vec![
            BidPair { price: 0.0, power: 0.2 },
            BidPair { price: 50.0, power: 0.6 },
            BidPair { price: 100.0, power: 1.0 },
        ];
        let hdb = Hdb::new(pairs.clone(), bounds01()).unwrap();
        assert_eq!(hdb.clear(60.0), 0.6);
        assert_eq!(hdb.clear(100.0), 1.0);
        assert_eq!(hdb.clear(-10.0), -1.0);
        let hdb = Hdb::with_floor(pairs, 0.0, bounds01()).unwrap();
        assert_eq!(hdb.clear(-10.0), 0.0);
    }

    #[test]
    fn invalid_bids_are_rejected() {
        let b = bounds01();
        let dec = vec![
            BidPair { price: 0.0, power: 0.5 },
            BidPair { price: 10.0, power: 0.2 },
        ];
        assert!(Hdb::new(dec, b).is_err());
        let unsorted = vec![
            BidPair { price: 10.0, power: 0.1 },
            BidPair { price: 0.0, power: 0.2 },
        ];
        assert!(Hdb::new(unsorted, b).is_err());
        let out = vec![BidPair { price: 300.0, power: 0.1 }];
        assert!(Hdb::new(out, b).is_err());
        assert!(Hdb::new(vec![], b).is_err());
    }

    #[test]
    fn serialized_as_pair_array() {
        let hdb = Hdb::new(vec![BidPair { price: 5.0, power: 0.5 }], bounds01()).unwrap();
        assert_eq!(serde_json::to_string(&hdb).unwrap(), r#"[{"price":5.0,"power":0.5}]"#);
        let raised = Hdb::with_floor(vec![BidPair { price: 5.0, power: 0.5 }], 0.0, bounds01()).unwrap();
        let json = serde_json::to_string(&raised).unwrap();
        assert_eq!(json, r#"[{"price":-50.0,"power":0.0},{"price":5.0,"power":0.5}]"#);
        let back: Vec<BidPair> = serde_json::from_str(&json).unwrap();
        let reparsed = Hdb::new(back, bounds01()).unwrap();
        for l in [-50.0, 0.0, 5.0, 100.0] {
            assert_eq!(reparsed.clear(l), raised.clear(l));
        }
    }

    #[test]
    fn grid_spacing_matches_reference_resolution() {
        let g = PriceGrid::new(PriceRange::default(), 512).unwrap();
        assert_eq!(g.prices().len(), 512);
        assert_abs_diff_eq!(g.step(), 250.0 / 511.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g.step(), 0.489, epsilon = 1e-3);
        assert_eq!(g.price(511), 200.0);
        assert_eq!(g.floor_index(g.price(17)), 17);
        assert_eq!(g.floor_index(g.price(17) + 0.1), 17);
        assert_eq!(g.floor_index(1e9), 511);
    }

    #[test]
    fn monotonize_examples() {
        let c = curve((0.0, 3.0), vec![0.1, 0.3, 0.2, 0.5], -1.0);
        assert_eq!(monotonize(&c).powers, vec![0.1, 0.3, 0.3, 0.5]);
        let c = curve((0.0, 3.0), vec![0.1, 0.2, 0.2, 0.5], -1.0);
        assert_eq!(monotonize(&c).powers, c.powers);
        let c = curve((0.0, 2.0), vec![1.0, 0.0, 0.0], -1.0);
        assert_eq!(monotonize(&c).powers, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn monotone_points_count_what_monotonize_keeps() {
        let c = curve((0.0, 5.0), vec![0.1, 0.5, 0.2, 0.4, 0.6, 0.6], -1.0);
        assert_eq!(c.monotone_points(), 4);
        assert!(!c.is_monotone());
        let c = curve((0.0, 2.0), vec![-1.0, 0.0, 1.0], -1.0);
        assert_eq!(c.monotone_points(), 3);
    }

    #[test]
    fn single_step_recovered_with_one_pair() {
        // Power 0 below 5, 1 from 5 on; the floor is the lower level.
        let c = step_curve(11, &[5], &[0.0, 1.0], 0.0);
        let (oracle_err, oracle_idx) = brute_force_min_error(&c, 1);
        assert_eq!(oracle_idx, vec![5]);
        assert_eq!(oracle_err, 0.0);
        let hdb = discretize(&c, 1, &DiscretizeOptions::default()).unwrap();
        assert_eq!(hdb.pairs(), &[BidPair { price: 5.0, power: 1.0 }]);
        assert_eq!(discretization_error(&c, &hdb), 0.0);
    }

    #[test]
    fn plateaus_recovered_exactly() {
        let c = step_curve(40, &[7, 19, 30], &[-0.6, -0.1, 0.3, 0.9], -1.0);
        let (oracle_err, _) = brute_force_min_error(&c, 4);
        assert!(oracle_err <= 1e-12);
        let hdb = discretize(&c, 4, &DiscretizeOptions::default()).unwrap();
        assert!(discretization_error(&c, &hdb) <= 1e-9);
        let starts: Vec<f64> = hdb.pairs().iter().map(|p| p.price).collect();
        let grid = c.grid;
        assert_eq!(starts, vec![grid.price(0), grid.price(7), grid.price(19), grid.price(30)]);
        let levels: Vec<f64> = hdb.pairs().iter().map(|p| p.power).collect();
        assert_eq!(levels, vec![-0.6, -0.1, 0.3, 0.9]);
    }

    #[test]
    fn constant_curve_gives_constant_levels() {
        for n in [1, 3, 10] {
            let c = curve((0.0, 10.0), vec![0.37; 64], -1.0);
            let hdb = discretize(&c, n, &DiscretizeOptions::default()).unwrap();
            assert_eq!(hdb.len(), n);
            assert!(hdb.pairs().iter().all(|p| p.power == 0.37));
        }
    }

    #[test]
    fn discretize_rejects_non_monotone() {
        let c = curve((0.0, 3.0), vec![0.1, 0.3, 0.2, 0.5], -1.0);
        assert!(discretize(&c, 2, &DiscretizeOptions::default()).is_err());
        assert!(discretize(&monotonize(&c), 0, &DiscretizeOptions::default()).is_err());
    }

    #[test]
    fn error_measure_cases() {
        let c = step_curve(11, &[5], &[0.0, 1.0], 0.0);
        let exact = Hdb::with_floor(vec![BidPair { price: 5.0, power: 1.0 }], 0.0, BidBounds {
            lambda_min: 0.0,
            lambda_max: 10.0,
            p_min: 0.0,
            p_max: 1.0,
        })
        .unwrap();
        assert_eq!(discretization_error(&c, &exact), 0.0);

        // Constant offset eps over all M samples: eps^2 * M * step.
        let eps = 0.05;
        let flat = curve((0.0, 10.0), vec![0.5; 11], -1.0);
        let off = Hdb::with_floor(vec![BidPair { price: 0.0, power: 0.5 + eps }], -1.0, BidBounds {
            lambda_min: 0.0,
            lambda_max: 10.0,
            p_min: -1.0,
            p_max: 1.0,
        })
        .unwrap();
        let width = 11.0 * flat.grid.step();
        assert_abs_diff_eq!(discretization_error(&flat, &off), eps * eps * width, epsilon = 1e-12);

        // Anchor one cell late on the two-plateau curve: exactly one sample misassigned.
        let late = Hdb::with_floor(vec![BidPair { price: 6.0, power: 1.0 }], 0.0, *exact.bounds()).unwrap();
        assert_abs_diff_eq!(discretization_error(&c, &late), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn free_floor_never_worse() {
        let c = monotonize(&curve(
            (0.0, 10.0),
            (0..32).map(|k| ((k as f64) / 8.0).tanh() * 0.8 - 0.3).collect(),
            -1.0,
        ));
        let pinned = discretize(&c, 3, &DiscretizeOptions::default()).unwrap();
        let free = discretize(&c, 3, &DiscretizeOptions { free_floor: true, ..Default::default() }).unwrap();
        assert!(discretization_error(&c, &free) <= discretization_error(&c, &pinned) + 1e-12);
    }

    struct StepFn(Vec<(f64, f64)>, f64);

    impl SupplyFunction for StepFn {
        fn eval_powers(&self, _obs: &Observation, prices_norm: &[f64], out: &mut [f64]) {
            for (o, &x) in out.iter_mut().zip(prices_norm) {
                *o = self.0.iter().rev().find(|(b, _)| x >= *b).map_or(self.1, |s| s.1);
            }
        }
    }

    #[test]
    fn generate_recovers_two_plateau_function() {
        let f = StepFn(vec![(0.2, 0.7)], -0.4);
        let obs = Observation([0.0; 15]);
        let grid = PriceGrid::new(PriceRange::default(), 512).unwrap();
        let (hdb, curve) = generate_hdb(&f, &obs, &grid, 2, &DiscretizeOptions::default(), 64).unwrap();
        assert_eq!(discretization_error(&curve, &hdb), 0.0);
        assert_eq!(hdb.pairs()[0].power, -0.4);
        assert_eq!(hdb.pairs()[1].power, 0.7);
        for k in 0..grid.m {
            assert_eq!(hdb.clear(grid.price(k)), curve.powers[k]);
        }

        let flat = StepFn(vec![], 0.25);
        let (hdb, _) = generate_hdb(&flat, &obs, &grid, 10, &DiscretizeOptions::default(), 512).unwrap();
        assert_eq!(hdb.len(), 10);
        assert!(hdb.pairs().iter().all(|p| p.power == 0.25));
    }

    #[test]
    fn sampling_is_batch_invariant_and_zero_for_zero_fn() {
        let f = StepFn(vec![(-0.5, -0.2), (0.1, 0.4), (0.6, 1.0)], -1.0);
        let obs = Observation([0.0; 15]);
        let grid = PriceGrid::new(PriceRange::default(), 512).unwrap();
        let a = sample_supply_curve(&f, &obs, &grid, 1);
        let b = sample_supply_curve(&f, &obs, &grid, 512);
        assert_eq!(a, b);
        let zero = StepFn(vec![], 0.0);
        assert!(sample_supply_curve(&zero, &obs, &grid, 16).powers.iter().all(|&p| p == 0.0));
    }

    fn monotone_curve_strategy() -> impl Strategy<Value = SupplyCurve> {
        (8usize..48, prop::collection::vec(0.0f64..0.2, 48), -1.0f64..0.0).prop_map(|(m, incs, start)| {
            let mut powers = Vec::with_capacity(m);
            let mut v: f64 = start;
            for inc in incs.iter().take(m) {
                v = (v + inc).min(1.0);
                powers.push(v);
            }
            curve((-50.0, 200.0), powers, -1.0)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn discretize_output_is_legal_and_no_worse_than_init(c in monotone_curve_strategy(), n in 1usize..6, free in any::<bool>()) {
            let opts = DiscretizeOptions { free_floor: free, ..Default::default() };
            let hdb = discretize(&c, n, &opts).unwrap();
            prop_assert!(hdb.validate().is_ok());
            prop_assert_eq!(hdb.len(), n);
            let init = discretize(&c, n, &DiscretizeOptions { max_iters: 0, ..opts }).unwrap();
            prop_assert!(discretization_error(&c, &hdb) <= discretization_error(&c, &init) + 1e-12);
            let again = discretize(&c, n, &opts).unwrap();
            prop_assert_eq!(hdb, again);
        }

        #[test]
        fn discretize_never_beats_oracle(c in monotone_curve_strategy(), n in 1usize..4) {
            let hdb = discretize(&c, n, &DiscretizeOptions::default()).unwrap();
            let (best, _) = brute_force_min_error(&c, n);
            prop_assert!(discretization_error(&c, &hdb) >= best - 1e-9);
        }

        #[test]
        fn monotonize_idempotent_and_dominating(powers in prop::collection::vec(-1.0f64..=1.0, 2..100)) {
            let c = curve((0.0, 1.0), powers, -1.0);
            let m = monotonize(&c);
            prop_assert!(m.is_monotone());
            prop_assert_eq!(monotonize(&m).powers, m.powers.clone());
            for (a, b) in m.powers.iter().zip(&c.powers) {
                prop_assert!(a >= b);
            }
            let kept = m.powers.iter().zip(&c.powers).filter(|(a, b)| a == b).count();
            prop_assert_eq!(c.monotone_points(), kept);
            prop_assert_eq!(c.is_monotone(), kept == c.len());
        }

        #[test]
        fn step_curves_recovered(m in 8usize..64, cuts in prop::collection::btree_set(1usize..63, 0..4), raw_levels in prop::collection::vec(-1.0f64..=1.0, 5)) {
            let cuts: Vec<usize> = cuts.into_iter().filter(|&c| c < m).collect();
            let mut levels: Vec<f64> = raw_levels[..=cuts.len()].to_vec();
            levels.sort_by(f64::total_cmp);
            let c = step_curve(m, &cuts, &levels, -1.0);
            let n = 4;
            let hdb = discretize(&c, n, &DiscretizeOptions::default()).unwrap();
            prop_assert!(discretization_error(&c, &hdb) <= 1e-9);
            for k in 0..m {
                prop_assert_eq!(hdb.clear(c.grid.price(k)), c.powers[k]);
            }
        }
    }
}
