//! Market price series and observation features.
//!
//! A [`MarketSeries`] holds one price node's real-time (5-minute) and
//! day-ahead (hourly) prices. Series come either from a CSV file pair or from
//! the seeded synthetic generator. [`observation_at`] turns a point in the
//! series plus the storage state of charge into the 15-dimensional market
//! state consumed by the bidding networks.

use std::f64::consts::PI;
use std::path::Path;

use chrono::{DateTime, Duration, TimeZone, Timelike, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const RT_STEP_MINUTES: i64 = 5;
pub const DA_STEP_MINUTES: i64 = 60;
pub const RT_PER_HOUR: usize = 12;
pub const RT_PER_DAY: usize = 288;
pub const DA_PER_DAY: usize = 24;
/// Six hours of real-time history.
pub const RT_LOOKBACK: usize = 72;
/// Four days of day-ahead history.
pub const DA_LOOKBACK: usize = 96;
pub const LOOKBACK_DAYS: i64 = 4;

pub const OBS_DIM: usize = 15;
/// Observation plus the normalized clearing price.
pub const STATE_DIM: usize = OBS_DIM + 1;

/// Closed price interval used for bidding and for normalizing network inputs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriceRange {
    pub min: f64,
    pub max: f64,
}

impl Default for PriceRange {
    fn default() -> Self {
        Self {
            min: -50.0,
            max: 200.0,
        }
    }
}

impl PriceRange {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(invalid(format!("price range [{min}, {max}] is empty")));
        }
        Ok(Self { min, max })
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }

    /// Affine map of `[min, max]` onto `[-1, 1]`, clamped.
    pub fn normalize(&self, price: f64) -> f64 {
        (2.0 * (price - self.min) / self.width() - 1.0).clamp(-1.0, 1.0)
    }

    pub fn denormalize(&self, x: f64) -> f64 {
        self.min + (x + 1.0) * 0.5 * self.width()
    }

    pub fn clamp(&self, price: f64) -> f64 {
        price.clamp(self.min, self.max)
    }
}

/// Uniformly spaced price samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceTrack {
    pub start: DateTime<Utc>,
    pub step_minutes: i64,
    pub values: Vec<f64>,
}

impl PriceTrack {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn step(&self) -> Duration {
        Duration::minutes(self.step_minutes)
    }

    pub fn timestamp(&self, i: usize) -> DateTime<Utc> {
        self.start + Duration::minutes(self.step_minutes * i as i64)
    }

    /// Exclusive end of coverage.
    pub fn end(&self) -> DateTime<Utc> {
        self.timestamp(self.len())
    }

    /// Index of the sample whose interval contains `t`.
    pub fn index_containing(&self, t: DateTime<Utc>) -> Option<usize> {
        if t < self.start {
            return None;
        }
        let idx = ((t - self.start).num_seconds() / (self.step_minutes * 60)) as usize;
        (idx < self.len()).then_some(idx)
    }

    /// Index of the sample starting exactly at `t`.
    pub fn index_at(&self, t: DateTime<Utc>) -> Option<usize> {
        let idx = self.index_containing(t)?;
        (self.timestamp(idx) == t).then_some(idx)
    }

    fn slice(&self, from: usize, to: usize) -> PriceTrack {
        PriceTrack {
            start: self.timestamp(from),
            step_minutes: self.step_minutes,
            values: self.values[from..to].to_vec(),
        }
    }

    pub fn points(&self) -> impl Iterator<Item = (DateTime<Utc>, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(|(i, &v)| (self.timestamp(i), v))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketSeries {
    pub node_id: String,
    pub rt: PriceTrack,
    pub da: PriceTrack,
}

impl MarketSeries {
    /// Checks spacing and coverage invariants.
    pub fn validate(&self) -> Result<()> {
        if self.rt.step_minutes != RT_STEP_MINUTES || self.da.step_minutes != DA_STEP_MINUTES {
            return Err(invalid("series must use 5-minute RT and hourly DA spacing"));
        }
        if self.rt.is_empty() || self.da.is_empty() {
            return Err(invalid("no rows"));
        }
        if self.rt.start.minute() != 0 || self.rt.start.second() != 0 {
            return Err(invalid("RT series must start on an hour boundary"));
        }
        if !self.rt.len().is_multiple_of(RT_PER_HOUR) {
            return Err(invalid("RT series must cover whole hours"));
        }
        if self.rt.start < self.da.start || self.rt.end() > self.da.end() {
            return Err(invalid("RT series extends beyond DA coverage"));
        }
        if let Some(i) = self
            .rt
            .values
            .iter()
            .chain(self.da.values.iter())
            .position(|v| !v.is_finite())
        {
            return Err(Error::NonFinite(format!("price at position {i}")));
        }
        Ok(())
    }

    pub fn hours(&self) -> usize {
        self.rt.len() / RT_PER_HOUR
    }

    pub fn days(&self) -> usize {
        self.rt.len() / RT_PER_DAY
    }

    /// Sub-series covering `[from, to)`, both RT and DA cut at the same
    /// timestamps (DA clipped to its own coverage).
    pub fn time_slice(&self, from: DateTime<Utc>, to: DateTime<Utc>) -> Result<MarketSeries> {
        let rt_from = self
            .rt
            .index_at(from)
            .ok_or_else(|| Error::Bounds(format!("{from} not in RT coverage")))?;
        let rt_to = if to == self.rt.end() {
            self.rt.len()
        } else {
            self.rt
                .index_at(to)
                .ok_or_else(|| Error::Bounds(format!("{to} not in RT coverage")))?
        };
        let da_from = self.da.index_containing(from.max(self.da.start)).unwrap_or(0);
        let da_to = if to >= self.da.end() {
            self.da.len()
        } else {
            self.da.index_containing(to).unwrap_or(self.da.len())
        };
        if rt_from >= rt_to {
            return Err(Error::Bounds("empty slice".into()));
        }
        Ok(MarketSeries {
            node_id: self.node_id.clone(),
            rt: self.rt.slice(rt_from, rt_to),
            da: self.da.slice(da_from, da_to),
        })
    }

    /// A copy of `self` from `start` onwards, plus the preceding four days of
    /// history so that observations are computable from `start` itself.
    pub fn with_lookback(&self, start: DateTime<Utc>) -> Result<MarketSeries> {
        let from = (start - Duration::days(LOOKBACK_DAYS)).max(self.rt.start);
        self.time_slice(from, self.rt.end())
    }

    /// First RT index at which an observation can be built.
    pub fn first_observable_index(&self) -> Option<usize> {
        let da_ready = self.da.timestamp(DA_LOOKBACK);
        let mut idx = RT_LOOKBACK;
        if self.rt.timestamp(idx) < da_ready {
            idx = ((da_ready - self.rt.start).num_minutes() / RT_STEP_MINUTES) as usize;
        }
        (idx < self.rt.len()).then_some(idx)
    }
}

// ---------------------------------------------------------------------------
// CSV ingestion

#[derive(Debug, Deserialize)]
struct CsvRow {
    timestamp: String,
    node: String,
    #[serde(alias = "rt_lmp", alias = "da_lmp")]
    price: f64,
}

fn read_track(path: &Path, price_col: &str, step_minutes: i64) -> Result<(String, PriceTrack)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?
        .clone();
    let expected = ["timestamp", "node", price_col];
    if headers.is_empty() {
        return Err(Error::Load(format!("{}: no rows", path.display())));
    }
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Load(format!(
            "{}: expected header `{}`",
            path.display(),
            expected.join(",")
        )));
    }

    let mut rows: Vec<(usize, DateTime<Utc>, f64)> = Vec::new();
    let mut node: Option<String> = None;
    for (i, record) in reader.deserialize::<CsvRow>().enumerate() {
        let row = i + 1;
        let rec = record.map_err(|e| Error::Load(format!("malformed row {row}: {e}")))?;
        let ts = DateTime::parse_from_rfc3339(&rec.timestamp)
            .map_err(|e| Error::Load(format!("malformed row {row}: bad timestamp: {e}")))?
            .with_timezone(&Utc);
        if !rec.price.is_finite() {
            return Err(Error::Load(format!("malformed row {row}: non-finite price")));
        }
        match &node {
            None => node = Some(rec.node),
            Some(n) if *n != rec.node => {
                return Err(Error::Load(format!(
                    "malformed row {row}: node `{}` differs from `{n}`",
                    rec.node
                )))
            }
            _ => {}
        }
        rows.push((row, ts, rec.price));
    }
    if rows.is_empty() {
        return Err(Error::Load(format!("{}: no rows", path.display())));
    }
    rows.sort_by_key(|r| r.1);
    let step = Duration::minutes(step_minutes);
    for pair in rows.windows(2) {
        if pair[1].1 - pair[0].1 != step {
            return Err(Error::Load(format!(
                "{}: non-uniform spacing at row {}",
                path.display(),
                pair[1].0
            )));
        }
    }
    let track = PriceTrack {
        start: rows[0].1,
        step_minutes,
        values: rows.iter().map(|r| r.2).collect(),
    };
    Ok((node.unwrap_or_default(), track))
}

/// Loads an RT/DA file pair for one node.
pub fn load_series(rt_path: &Path, da_path: &Path) -> Result<MarketSeries> {
    let (rt_node, rt) = read_track(rt_path, "rt_lmp", RT_STEP_MINUTES)?;
    let (da_node, da) = read_track(da_path, "da_lmp", DA_STEP_MINUTES)?;
    if rt_node != da_node {
        return Err(Error::Load(format!(
            "RT node `{rt_node}` and DA node `{da_node}` differ"
        )));
    }
    for (i, (ts, _)) in rt.points().enumerate() {
        if da.index_containing(ts).is_none() {
            return Err(Error::Load(format!(
                "missing DA coverage for RT row {}",
                i + 1
            )));
        }
    }
    let series = MarketSeries {
        node_id: rt_node,
        rt,
        da,
    };
    series
        .validate()
        .map_err(|e| Error::Load(e.to_string()))?;
    Ok(series)
}

fn write_track(path: &Path, node: &str, col: &str, track: &PriceTrack) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["timestamp", "node", col])?;
    for (ts, v) in track.points() {
        w.write_record([
            ts.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
            node.to_string(),
            format!("{v}"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the series as an RT/DA CSV pair in the ingestion schema.
pub fn save_series(series: &MarketSeries, rt_path: &Path, da_path: &Path) -> Result<()> {
    write_track(rt_path, &series.node_id, "rt_lmp", &series.rt)?;
    write_track(da_path, &series.node_id, "da_lmp", &series.da)
}

// ---------------------------------------------------------------------------
// Synthetic prices

pub const SYNTH_MIN_DAYS: usize = 5;

fn synth_start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
}

/// Daily load shape in USD/MWh: night trough, morning shoulder, evening peak.
fn daily_shape(hour: f64) -> f64 {
    let bump = |centre: f64, width: f64| (-((hour - centre) / width).powi(2)).exp();
    30.0 + 8.0 * (2.0 * PI * (hour - 10.0) / 24.0).sin() + 7.0 * bump(8.0, 1.5)
        + 22.0 * bump(18.5, 2.0)
        - 14.0 * bump(3.5, 2.5)
}

/// Seeded synthetic price node: a daily shape scaled by a random daily level,
/// AR(1) noise, and occasional decaying spikes and dips. DA is a smoothed
/// hourly average of RT.
pub fn synth_series(seed: u64, days: usize) -> Result<MarketSeries> {
    if days < SYNTH_MIN_DAYS {
        return Err(invalid(format!(
            "synthetic series needs at least {SYNTH_MIN_DAYS} days, got {days}"
        )));
    }
    let range = PriceRange::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 2.5).unwrap();
    let mut ar = 0.0;
    let mut spike = 0.0;
    let mut rt = Vec::with_capacity(days * RT_PER_DAY);
    for _day in 0..days {
        let level: f64 = rng.gen_range(0.8..1.25);
        let offset: f64 = rng.gen_range(-4.0..4.0);
        for step in 0..RT_PER_DAY {
            let hour = step as f64 / RT_PER_HOUR as f64;
            ar = 0.92 * ar + noise.sample(&mut rng);
            spike *= 0.75;
            // Spikes cluster in the afternoon and evening.
            let spike_rate = if (14.0..21.0).contains(&hour) { 0.012 } else { 0.002 };
            if rng.gen::<f64>() < spike_rate {
                spike += rng.gen_range(30.0..130.0);
            }
            if (0.0..6.0).contains(&hour) && rng.gen::<f64>() < 0.003 {
                spike -= rng.gen_range(20.0..60.0);
            }
            let price = daily_shape(hour) * level + offset + ar + spike;
            rt.push(range.clamp(price));
        }
    }
    let hourly: Vec<f64> = rt
        .chunks(RT_PER_HOUR)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    let da: Vec<f64> = (0..hourly.len())
        .map(|h| {
            let lo = h.saturating_sub(1);
            let hi = (h + 1).min(hourly.len() - 1);
            let w = &hourly[lo..=hi];
            range.clamp(w.iter().sum::<f64>() / w.len() as f64)
        })
        .collect();
    let start = synth_start();
    Ok(MarketSeries {
        node_id: format!("SYNTH-{seed}"),
        rt: PriceTrack {
            start,
            step_minutes: RT_STEP_MINUTES,
            values: rt,
        },
        da: PriceTrack {
            start,
            step_minutes: DA_STEP_MINUTES,
            values: da,
        },
    })
}

// ---------------------------------------------------------------------------
// Splitting

/// Chronological split at the day boundary nearest to `train_frac`.
pub fn split(series: &MarketSeries, train_frac: f64) -> Result<(MarketSeries, MarketSeries)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(invalid(format!(
            "train fraction must lie in (0, 1), got {train_frac}"
        )));
    }
    let days = series.hours() / 24;
    if days < 2 {
        return Err(invalid("split needs at least two days of data"));
    }
    let train_days = ((days as f64 * train_frac).round() as usize).clamp(1, days - 1);
    let boundary = series.rt.start + Duration::days(train_days as i64);
    let train = series.time_slice(series.rt.start, boundary)?;
    let test = series.time_slice(boundary, series.rt.end())?;
    Ok((train, test))
}

// ---------------------------------------------------------------------------
// Features

/// `(sin, cos)` of the fractional hour of day on a 24-hour cycle.
pub fn time_encoding(t: DateTime<Utc>) -> [f64; 2] {
    let hour = t.hour() as f64 + t.minute() as f64 / 60.0 + t.second() as f64 / 3600.0;
    let phase = 2.0 * PI * hour / 24.0;
    [phase.sin(), phase.cos()]
}

const ZERO_COEFF: f64 = 1e-12;

/// Amplitude (normalized by window length) and angle of DFT bins 0, 1, 2.
pub fn dft_features(window: &[f64]) -> Result<[f64; 6]> {
    if window.is_empty() {
        return Err(invalid("DFT window is empty"));
    }
    let len = window.len() as f64;
    let mut out = [0.0; 6];
    for k in 0..3 {
        let (mut re, mut im) = (0.0, 0.0);
        for (n, &x) in window.iter().enumerate() {
            let phase = -2.0 * PI * (k * n) as f64 / len;
            re += x * phase.cos();
            im += x * phase.sin();
        }
        let amp = re.hypot(im) / len;
        if amp > ZERO_COEFF {
            let mut angle = im.atan2(re);
            if angle <= -PI {
                angle = PI;
            }
            out[2 * k] = amp;
            out[2 * k + 1] = angle;
        }
    }
    Ok(out)
}

/// Market state: time encoding, RT and DA spectra, state of charge.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn time_enc(&self) -> &[f64] {
        &self.0[0..2]
    }

    pub fn rt_dft(&self) -> &[f64] {
        &self.0[2..8]
    }

    pub fn da_dft(&self) -> &[f64] {
        &self.0[8..14]
    }

    pub fn soc_frac(&self) -> f64 {
        self.0[14]
    }

    /// Full network state with the normalized clearing price appended.
    pub fn with_price(&self, price_norm: f64) -> [f64; STATE_DIM] {
        let mut s = [0.0; STATE_DIM];
        s[..OBS_DIM].copy_from_slice(&self.0);
        s[OBS_DIM] = price_norm;
        s
    }
}

/// Observation at RT index `idx` (the start of a clearing interval). Uses
/// the 72 RT prices and the 96 DA prices strictly before that instant.
pub fn observation_at(
    series: &MarketSeries,
    idx: usize,
    soc_frac: f64,
    range: &PriceRange,
) -> Result<Observation> {
    if !(0.0..=1.0).contains(&soc_frac) {
        return Err(invalid(format!("soc fraction {soc_frac} outside [0, 1]")));
    }
    if idx < RT_LOOKBACK || idx > series.rt.len() {
        return Err(Error::Bounds(format!(
            "RT index {idx} lacks {RT_LOOKBACK} points of history"
        )));
    }
    let t = series.rt.timestamp(idx);
    if t < series.da.start {
        return Err(Error::Bounds(format!("{t} precedes DA coverage")));
    }
    let da_idx = ((t - series.da.start).num_minutes() / DA_STEP_MINUTES) as usize;
    if da_idx < DA_LOOKBACK || da_idx > series.da.len() {
        return Err(Error::Bounds(format!(
            "{t} lacks {DA_LOOKBACK} hours of DA history"
        )));
    }
    let rt_window: Vec<f64> = series.rt.values[idx - RT_LOOKBACK..idx]
        .iter()
        .map(|&p| range.normalize(p))
        .collect();
    let da_window: Vec<f64> = series.da.values[da_idx - DA_LOOKBACK..da_idx]
        .iter()
        .map(|&p| range.normalize(p))
        .collect();
    let mut obs = [0.0; OBS_DIM];
    obs[0..2].copy_from_slice(&time_encoding(t));
    obs[2..8].copy_from_slice(&dft_features(&rt_window)?);
    obs[8..14].copy_from_slice(&dft_features(&da_window)?);
    obs[14] = soc_frac;
    Ok(Observation(obs))
}

/// Observation at timestamp `t`, which must fall on an RT interval start.
pub fn build_observation(
    series: &MarketSeries,
    t: DateTime<Utc>,
    soc_frac: f64,
    range: &PriceRange,
) -> Result<Observation> {
    let idx = if t == series.rt.end() {
        series.rt.len()
    } else {
        series
            .rt
            .index_at(t)
            .ok_or_else(|| Error::Bounds(format!("{t} is not an RT interval start")))?
    };
    observation_at(series, idx, soc_frac, range)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::io::Write;

    fn constant_series(price: f64, days: usize) -> MarketSeries {
        let start = synth_start();
        MarketSeries {
            node_id: "C".into(),
            rt: PriceTrack {
                start,
                step_minutes: RT_STEP_MINUTES,
                values: vec![price; days * RT_PER_DAY],
            },
            da: PriceTrack {
                start,
                step_minutes: DA_STEP_MINUTES,
                values: vec![price; days * DA_PER_DAY],
            },
        }
    }

    fn write_csv(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        let mut f = std::fs::File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn load_two_day_file_pair() {
        let dir = tempfile::tempdir().unwrap();
        let series = synth_series(3, 5).unwrap();
        let two = series
            .time_slice(series.rt.start, series.rt.start + Duration::days(2))
            .unwrap();
        let (rt, da) = (dir.path().join("rt.csv"), dir.path().join("da.csv"));
        save_series(&two, &rt, &da).unwrap();
        let loaded = load_series(&rt, &da).unwrap();
        assert_eq!(loaded.rt.len(), 576);
        assert_eq!(loaded.da.len(), 48);
        assert_eq!(loaded, two);
    }

    #[test]
    fn load_rejects_gap_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        let da = write_csv(
            dir.path(),
            "da.csv",
            "timestamp,node,da_lmp\n2024-01-01T00:00:00Z,A,10\n",
        );
        let rt = write_csv(
            dir.path(),
            "rt.csv",
            "timestamp,node,rt_lmp\n2024-01-01T00:00:00Z,A,10\n2024-01-01T00:05:00Z,A,10\n2024-01-01T00:15:00Z,A,10\n",
        );
        let err = load_series(&rt, &da).unwrap_err().to_string();
        assert!(err.contains("non-uniform spacing at row 3"), "{err}");

        let empty = write_csv(dir.path(), "empty.csv", "");
        let err = load_series(&empty, &da).unwrap_err().to_string();
        assert!(err.contains("no rows"), "{err}");
        let header_only = write_csv(dir.path(), "h.csv", "timestamp,node,rt_lmp\n");
        let err = load_series(&header_only, &da).unwrap_err().to_string();
        assert!(err.contains("no rows"), "{err}");
    }

    #[test]
    fn load_rejects_malformed_and_uncovered_rows() {
        let dir = tempfile::tempdir().unwrap();
        let da = write_csv(
            dir.path(),
            "da.csv",
            "timestamp,node,da_lmp\n2024-01-01T00:00:00Z,A,10\n",
        );
        let bad = write_csv(
            dir.path(),
            "bad.csv",
            "timestamp,node,rt_lmp\n2024-01-01T00:00:00Z,A,abc\n",
        );
        let err = load_series(&bad, &da).unwrap_err().to_string();
        assert!(err.contains("malformed row 1"), "{err}");

        let mut body = String::from("timestamp,node,rt_lmp\n");
        for i in 0..24 {
            body.push_str(&format!("2024-01-01T{:02}:{:02}:00Z,A,5\n", i / 12, (i % 12) * 5));
        }
        let rt = write_csv(dir.path(), "rt.csv", &body);
        let err = load_series(&rt, &da).unwrap_err().to_string();
        assert!(err.contains("missing DA coverage for RT row 13"), "{err}");
    }

    #[test]
    fn synth_is_deterministic_and_bounded() {
        let a = synth_series(1, 10).unwrap();
        let b = synth_series(1, 10).unwrap();
        let c = synth_series(2, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.rt.values, c.rt.values);
        assert_eq!(a.rt.len(), 10 * RT_PER_DAY);
        assert_eq!(a.da.len(), 10 * DA_PER_DAY);
        for &p in a.rt.values.iter().chain(a.da.values.iter()) {
            assert!((-50.0..=200.0).contains(&p));
        }
        a.validate().unwrap();
        assert!(synth_series(1, 4).is_err());
    }

    #[test]
    fn split_rounds_to_day_boundary() {
        let s = synth_series(1, 10).unwrap();
        let (train, test) = split(&s, 0.7).unwrap();
        assert_eq!(train.days(), 7);
        assert_eq!(test.days(), 3);
        let (train, test) = split(&s, 0.999).unwrap();
        assert_eq!((train.days(), test.days()), (9, 1));
        assert_eq!(train.rt.len() + test.rt.len(), s.rt.len());
        assert_eq!(train.da.len() + test.da.len(), s.da.len());
        assert_eq!(train.rt.end(), test.rt.start);
        let joined: Vec<f64> = train.rt.values.iter().chain(&test.rt.values).copied().collect();
        assert_eq!(joined, s.rt.values);
        assert!(split(&s, 0.0).is_err());
        assert!(split(&s, 1.0).is_err());
    }

    #[test]
    fn lookback_slice_makes_start_observable() {
        let s = synth_series(4, 10).unwrap();
        let (_, test) = split(&s, 0.7).unwrap();
        let ctx = s.with_lookback(test.rt.start).unwrap();
        let first = ctx.first_observable_index().unwrap();
        assert_eq!(ctx.rt.timestamp(first), test.rt.start);
    }

    #[test]
    fn time_encoding_quarter_points() {
        let at = |h: u32| time_encoding(Utc.with_ymd_and_hms(2024, 3, 1, h, 0, 0).unwrap());
        let [s, c] = at(0);
        assert_abs_diff_eq!(s, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c, 1.0, epsilon = 1e-12);
        let [s, c] = at(6);
        assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c, 0.0, epsilon = 1e-12);
        let [s, c] = at(12);
        assert_abs_diff_eq!(s, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn dft_of_constant_cosine_and_zero() {
        let f = dft_features(&[0.4; 72]).unwrap();
        assert_abs_diff_eq!(f[0], 0.4, epsilon = 1e-12);
        assert_eq!(&f[1..], &[0.0; 5]);

        // Oracle: direct summation of the bin-1 coefficient of cos(2πn/L).
        let len = 96;
        let w: Vec<f64> = (0..len)
            .map(|n| (2.0 * PI * n as f64 / len as f64).cos())
            .collect();
        let bin1: f64 = w
            .iter()
            .enumerate()
            .map(|(n, x)| x * (2.0 * PI * n as f64 / len as f64).cos())
            .sum::<f64>()
            / len as f64;
        let f = dft_features(&w).unwrap();
        assert_abs_diff_eq!(bin1, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(f[2], bin1, epsilon = 1e-12);
        assert_abs_diff_eq!(f[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f[4], 0.0, epsilon = 1e-12);

        assert_eq!(dft_features(&[0.0; 10]).unwrap(), [0.0; 6]);
        assert!(dft_features(&[]).is_err());
    }

    #[test]
    fn observation_of_constant_series() {
        let range = PriceRange::default();
        let price = 75.0;
        let s = constant_series(price, 6);
        let t = s.rt.start + Duration::days(5);
        let obs = build_observation(&s, t, 0.5, &range).unwrap();
        let c = range.normalize(price);
        let expected = [0.0, 1.0, c, 0.0, 0.0, 0.0, 0.0, 0.0, c, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5];
        for (a, b) in obs.0.iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        assert_eq!(obs.0.len(), OBS_DIM);
        assert_eq!(obs.with_price(0.1).len(), STATE_DIM);
    }

    #[test]
    fn observation_requires_history() {
        let range = PriceRange::default();
        let s = constant_series(10.0, 6);
        let early = s.rt.start + Duration::hours(3);
        assert!(matches!(
            build_observation(&s, early, 0.5, &range),
            Err(Error::Bounds(_))
        ));
        let no_da = s.rt.start + Duration::days(2);
        assert!(build_observation(&s, no_da, 0.5, &range).is_err());
        assert!(build_observation(&s, s.rt.start + Duration::days(5), 1.5, &range).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn observations_are_finite_and_pure(seed in 0u64..1000, hour in 0usize..24, soc in 0.0f64..=1.0) {
                let range = PriceRange::default();
                let s = synth_series(seed, 5).unwrap();
                let idx = 4 * RT_PER_DAY + hour * RT_PER_HOUR;
                let a = observation_at(&s, idx, soc, &range).unwrap();
                let b = observation_at(&s, idx, soc, &range).unwrap();
                prop_assert_eq!(a.0.map(f64::to_bits), b.0.map(f64::to_bits));
                prop_assert!(a.0.iter().all(|v| v.is_finite()));
                let r = a.time_enc()[0].hypot(a.time_enc()[1]);
                prop_assert!((r - 1.0).abs() < 1e-12);
                prop_assert!(a.rt_dft()[0] <= 1.0 && a.da_dft()[0] <= 1.0);
            }

            #[test]
            fn normalized_prices_in_unit_interval(p in -1e4f64..1e4) {
                let v = PriceRange::default().normalize(p);
                prop_assert!((-1.0..=1.0).contains(&v));
            }
        }
    }
}
