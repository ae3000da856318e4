//! Daily OHLCV market data: strict CSV ingestion and emission, integrity
//! validation, volume change-rate auditing, windowing, and a seeded
//! synthetic series generator for experiments without licensed data.
//!
//! The on-disk schema is fixed:
//!
//! ```csv
//! date,volume_musd,open,high,low,close
//! 2023-04-01,680,109.50,110.20,109.30,109.90
//! ```
//!
//! Dates are ISO `YYYY-MM-DD` and strictly increasing. Any numeric cell may
//! be empty, which loads as `None`; downstream preprocessing decides how
//! missing values are filled. Volume is millions of USD; prices are JPY per
//! USD.

use std::fmt;
use std::path::Path;

use chrono::NaiveDate;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numeric::round_half_away_from_zero;

/// The exact header every OHLCV CSV must carry.
pub const CSV_HEADER: &str = "date,volume_musd,open,high,low,close";

/// Header of the optional published change-rate sidecar file.
pub const RATES_HEADER: &str = "date,published_change_rate_pct";

/// The five numeric columns of a bar, in canonical storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Column {
    Volume,
    Open,
    High,
    Low,
    Close,
}

impl Column {
    /// All columns in canonical order (the CSV order after the date).
    pub const ALL: [Column; 5] = [
        Column::Volume,
        Column::Open,
        Column::High,
        Column::Low,
        Column::Close,
    ];

    /// The four price columns, i.e. everything but volume.
    pub const PRICES: [Column; 4] = [Column::Open, Column::High, Column::Low, Column::Close];

    /// Position of this column in [`Column::ALL`].
    pub fn index(self) -> usize {
        match self {
            Column::Volume => 0,
            Column::Open => 1,
            Column::High => 2,
            Column::Low => 3,
            Column::Close => 4,
        }
    }

    /// Column name as it appears in the CSV header.
    pub fn name(self) -> &'static str {
        match self {
            Column::Volume => "volume_musd",
            Column::Open => "open",
            Column::High => "high",
            Column::Low => "low",
            Column::Close => "close",
        }
    }
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One trading day. Any numeric field may be missing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OhlcvBar {
    pub date: NaiveDate,
    pub volume_musd: Option<f64>,
    pub open: Option<f64>,
    pub high: Option<f64>,
    pub low: Option<f64>,
    pub close: Option<f64>,
}

impl OhlcvBar {
    /// Value of `col` on this bar, if present.
    pub fn get(&self, col: Column) -> Option<f64> {
        match col {
            Column::Volume => self.volume_musd,
            Column::Open => self.open,
            Column::High => self.high,
            Column::Low => self.low,
            Column::Close => self.close,
        }
    }

    /// Checks one bar in isolation: finite values, positive prices,
    /// non-negative volume, and high/low envelope consistency.
    fn validate(&self) -> std::result::Result<(), String> {
        for col in Column::ALL {
            if let Some(v) = self.get(col) {
                if !v.is_finite() {
                    return Err(format!("{col} is not finite"));
                }
            }
        }
        if let Some(v) = self.volume_musd {
            if v < 0.0 {
                return Err(format!("volume_musd {v} is negative"));
            }
        }
        for col in Column::PRICES {
            if let Some(v) = self.get(col) {
                if v <= 0.0 {
                    return Err(format!("{col} {v} is not positive"));
                }
            }
        }
        let check = |ok: bool, msg: String| if ok { Ok(()) } else { Err(msg) };
        if let (Some(h), Some(l)) = (self.high, self.low) {
            check(h >= l, format!("high {h} below low {l}"))?;
        }
        for (name, v) in [("open", self.open), ("close", self.close)] {
            if let (Some(h), Some(v)) = (self.high, v) {
                check(h >= v, format!("high {h} below {name} {v}"))?;
            }
            if let (Some(l), Some(v)) = (self.low, v) {
                check(l <= v, format!("low {l} above {name} {v}"))?;
            }
        }
        Ok(())
    }
}

/// An ordered run of daily bars with strictly increasing dates.
#[derive(Debug, Clone, PartialEq)]
pub struct OhlcvSeries {
    bars: Vec<OhlcvBar>,
}

/// Column-major numeric view of a series; missing cells stay `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFrame {
    pub dates: Vec<NaiveDate>,
    pub columns: [Vec<Option<f64>>; 5],
}

impl OhlcvSeries {
    /// Builds a series, enforcing per-bar validity and strict date order.
    pub fn new(bars: Vec<OhlcvBar>) -> Result<Self> {
        for bar in &bars {
            bar.validate()
                .map_err(|msg| Error::invalid(format!("bar {}: {msg}", bar.date)))?;
        }
        for pair in bars.windows(2) {
            if pair[1].date <= pair[0].date {
                return Err(Error::invalid(format!(
                    "dates must be strictly increasing, got {} after {}",
                    pair[1].date, pair[0].date
                )));
            }
        }
        Ok(OhlcvSeries { bars })
    }

    pub fn bars(&self) -> &[OhlcvBar] {
        &self.bars
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn first(&self) -> Option<&OhlcvBar> {
        self.bars.first()
    }

    pub fn last(&self) -> Option<&OhlcvBar> {
        self.bars.last()
    }

    /// Appends a bar, preserving the ordering invariant.
    pub fn push(&mut self, bar: OhlcvBar) -> Result<()> {
        bar.validate()
            .map_err(|msg| Error::invalid(format!("bar {}: {msg}", bar.date)))?;
        if let Some(last) = self.bars.last() {
            if bar.date <= last.date {
                return Err(Error::invalid(format!(
                    "dates must be strictly increasing, got {} after {}",
                    bar.date, last.date
                )));
            }
        }
        self.bars.push(bar);
        Ok(())
    }

    /// The contiguous window of `len` bars starting at `start` (which must
    /// be an actual bar date).
    pub fn slice_window(&self, start: NaiveDate, len: usize) -> Result<OhlcvSeries> {
        if len == 0 {
            return Err(Error::invalid("window length must be at least 1"));
        }
        let idx = self
            .bars
            .iter()
            .position(|b| b.date == start)
            .ok_or_else(|| Error::alignment(format!("no bar dated {start} in the series")))?;
        if idx + len > self.bars.len() {
            return Err(Error::insufficient(format!(
                "window of {len} bars from {start} needs {} rows, series has {} after it",
                len,
                self.bars.len() - idx
            )));
        }
        Ok(OhlcvSeries {
            bars: self.bars[idx..idx + len].to_vec(),
        })
    }

    /// The trailing `n` bars.
    pub fn tail(&self, n: usize) -> Result<OhlcvSeries> {
        if n == 0 {
            return Err(Error::invalid("window length must be at least 1"));
        }
        if n > self.bars.len() {
            return Err(Error::insufficient(format!(
                "requested {} trailing bars, series has {}",
                n,
                self.bars.len()
            )));
        }
        Ok(OhlcvSeries {
            bars: self.bars[self.bars.len() - n..].to_vec(),
        })
    }

    /// Column-major view for numeric processing.
    pub fn to_frame(&self) -> RawFrame {
        let mut columns: [Vec<Option<f64>>; 5] = Default::default();
        for bar in &self.bars {
            for col in Column::ALL {
                columns[col.index()].push(bar.get(col));
            }
        }
        RawFrame {
            dates: self.bars.iter().map(|b| b.date).collect(),
            columns,
        }
    }

    /// Day-over-day fractional volume change: `(v_t - v_{t-1}) / v_{t-1}`.
    ///
    /// The first entry is always `None` (no previous day), as is any entry
    /// where either day's volume is missing. A zero previous volume is a
    /// domain error rather than an infinite rate.
    pub fn volume_change_rates(&self) -> Result<Vec<Option<f64>>> {
        let mut rates = Vec::with_capacity(self.bars.len());
        for (i, bar) in self.bars.iter().enumerate() {
            if i == 0 {
                rates.push(None);
                continue;
            }
            let rate = match (self.bars[i - 1].volume_musd, bar.volume_musd) {
                (Some(prev), Some(cur)) => {
                    if prev == 0.0 {
                        return Err(Error::domain(format!(
                            "zero volume on {} makes the change rate for {} undefined",
                            self.bars[i - 1].date,
                            bar.date
                        )));
                    }
                    Some((cur - prev) / prev)
                }
                _ => None,
            };
            rates.push(rate);
        }
        Ok(rates)
    }
}

/// Splits a CSV line, trimming one trailing `\r` so CRLF files load.
fn split_row(line: &str) -> Vec<&str> {
    line.strip_suffix('\r').unwrap_or(line).split(',').collect()
}

fn parse_cell(
    field: &str,
    col: &str,
    path: &str,
    line_no: usize,
) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    let v: f64 = field
        .parse()
        .map_err(|_| Error::parse(path, line_no, format!("{col}: cannot parse `{field}` as a number")))?;
    Ok(Some(v))
}

/// Loads a daily OHLCV CSV, enforcing the exact schema and all integrity
/// rules (header text, field count, date format and order, finite positive
/// prices, high/low envelope).
pub fn load_csv(path: &Path) -> Result<OhlcvSeries> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let shown = path.display().to_string();
    parse_csv_text(&text, &shown)
}

/// Parses CSV text; `path` is used only in error messages.
pub fn parse_csv_text(text: &str, path: &str) -> Result<OhlcvSeries> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "file is empty"))?;
    if header.strip_suffix('\r').unwrap_or(header) != CSV_HEADER {
        return Err(Error::parse(
            path,
            1,
            format!("expected header `{CSV_HEADER}`, found `{header}`"),
        ));
    }
    let mut bars: Vec<OhlcvBar> = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            return Err(Error::parse(path, line_no, "blank line inside data"));
        }
        let fields = split_row(line);
        if fields.len() != 6 {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected 6 fields, found {}", fields.len()),
            ));
        }
        let date = NaiveDate::parse_from_str(fields[0], "%Y-%m-%d").map_err(|_| {
            Error::parse(
                path,
                line_no,
                format!("cannot parse `{}` as a YYYY-MM-DD date", fields[0]),
            )
        })?;
        let bar = OhlcvBar {
            date,
            volume_musd: parse_cell(fields[1], "volume_musd", path, line_no)?,
            open: parse_cell(fields[2], "open", path, line_no)?,
            high: parse_cell(fields[3], "high", path, line_no)?,
            low: parse_cell(fields[4], "low", path, line_no)?,
            close: parse_cell(fields[5], "close", path, line_no)?,
        };
        bar.validate()
            .map_err(|msg| Error::parse(path, line_no, msg))?;
        if let Some(prev) = bars.last() {
            if bar.date <= prev.date {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!(
                        "dates must be strictly increasing, got {} after {}",
                        bar.date, prev.date
                    ),
                ));
            }
        }
        bars.push(bar);
    }
    if bars.is_empty() {
        return Err(Error::parse(path, 1, "no data rows"));
    }
    OhlcvSeries::new(bars)
}

fn fmt_cell(v: Option<f64>) -> String {
    match v {
        // `{}` prints the shortest decimal that round-trips the double, so
        // a load → write → load cycle is lossless.
        Some(x) => format!("{x}"),
        None => String::new(),
    }
}

/// Serializes a series back to the canonical CSV schema.
pub fn to_csv_string(series: &OhlcvSeries) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for bar in series.bars() {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            bar.date.format("%Y-%m-%d"),
            fmt_cell(bar.volume_musd),
            fmt_cell(bar.open),
            fmt_cell(bar.high),
            fmt_cell(bar.low),
            fmt_cell(bar.close),
        ));
    }
    out
}

/// Writes a series to `path` in the canonical CSV schema.
pub fn write_csv(series: &OhlcvSeries, path: &Path) -> Result<()> {
    std::fs::write(path, to_csv_string(series)).map_err(|e| Error::io(path, e))
}

/// Loads the published change-rate sidecar: `date,published_change_rate_pct`.
pub fn load_published_rates(path: &Path) -> Result<Vec<(NaiveDate, f64)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let shown = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(&shown, 1, "file is empty"))?;
    if header.strip_suffix('\r').unwrap_or(header) != RATES_HEADER {
        return Err(Error::parse(
            &shown,
            1,
            format!("expected header `{RATES_HEADER}`, found `{header}`"),
        ));
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            return Err(Error::parse(&shown, line_no, "blank line inside data"));
        }
        let fields = split_row(line);
        if fields.len() != 2 {
            return Err(Error::parse(
                &shown,
                line_no,
                format!("expected 2 fields, found {}", fields.len()),
            ));
        }
        let date = NaiveDate::parse_from_str(fields[0], "%Y-%m-%d").map_err(|_| {
            Error::parse(
                &shown,
                line_no,
                format!("cannot parse `{}` as a YYYY-MM-DD date", fields[0]),
            )
        })?;
        let pct: f64 = fields[1].parse().map_err(|_| {
            Error::parse(
                &shown,
                line_no,
                format!("cannot parse `{}` as a number", fields[1]),
            )
        })?;
        if !pct.is_finite() {
            return Err(Error::parse(&shown, line_no, "rate is not finite"));
        }
        rows.push((date, pct));
    }
    Ok(rows)
}

/// One date of the change-rate audit.
#[derive(Debug, Clone, PartialEq)]
pub struct RateAuditRow {
    pub date: NaiveDate,
    /// Recomputed day-over-day change, as a percentage rounded to one
    /// decimal (ties away from zero). `None` when it cannot be computed.
    pub recomputed_pct: Option<f64>,
    /// The externally published figure for the same date, if any.
    pub published_pct: Option<f64>,
    /// `Some(false)` flags a discrepancy; `None` means unverifiable
    /// (either side missing).
    pub agrees: Option<bool>,
}

/// Result of checking published change rates against recomputed ones.
#[derive(Debug, Clone, PartialEq)]
pub struct RateAudit {
    pub rows: Vec<RateAuditRow>,
}

impl RateAudit {
    /// The rows where the published figure contradicts the recomputed one.
    pub fn mismatches(&self) -> Vec<&RateAuditRow> {
        self.rows
            .iter()
            .filter(|r| r.agrees == Some(false))
            .collect()
    }
}

/// Recomputes volume change rates and compares them, at one-decimal display
/// precision, against externally published figures.
///
/// Published data sometimes disagrees with what its own volume column
/// implies; this audit surfaces those rows instead of silently trusting
/// either side.
pub fn audit_published_rates(
    series: &OhlcvSeries,
    published: &[(NaiveDate, f64)],
) -> Result<RateAudit> {
    let rates = series.volume_change_rates()?;
    let rows = series
        .bars()
        .iter()
        .zip(&rates)
        .map(|(bar, rate)| {
            let recomputed_pct = rate.map(|r| round_half_away_from_zero(r * 100.0, 1));
            let published_pct = published
                .iter()
                .find(|(d, _)| *d == bar.date)
                .map(|(_, p)| round_half_away_from_zero(*p, 1));
            let agrees = match (recomputed_pct, published_pct) {
                (Some(r), Some(p)) => Some((r - p).abs() < 1e-9),
                _ => None,
            };
            RateAuditRow {
                date: bar.date,
                recomputed_pct,
                published_pct,
                agrees,
            }
        })
        .collect();
    Ok(RateAudit { rows })
}

/// Controls for the synthetic daily series generator.
///
/// Prices follow geometric Brownian motion with a slow sinusoidal drift;
/// volume oscillates on the same period with Gaussian noise, and a fixed
/// fraction of volume cells is dropped to exercise missing-data handling.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub days: usize,
    pub start_date: NaiveDate,
    /// Previous close the first day opens from. JPY per USD.
    pub start_price: f64,
    /// Daily log-return standard deviation.
    pub daily_vol: f64,
    /// Amplitude of the sinusoidal daily drift, in log-return units.
    pub drift_amplitude: f64,
    /// Period of the drift (and volume) sinusoid, in days.
    pub drift_period_days: f64,
    /// Mean daily volume, millions of USD.
    pub base_volume: f64,
    /// Amplitude of the volume sinusoid, millions of USD.
    pub volume_swing: f64,
    /// Fraction of days whose volume cell is left empty.
    pub missing_volume_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            days: 400,
            start_date: NaiveDate::from_ymd_opt(2022, 1, 3).unwrap(),
            start_price: 110.0,
            daily_vol: 0.004,
            drift_amplitude: 0.002,
            drift_period_days: 30.0,
            base_volume: 700.0,
            volume_swing: 80.0,
            missing_volume_rate: 0.02,
            seed: 0,
        }
    }
}

/// Generates a synthetic daily OHLCV series.
///
/// Fully determined by the config: the same config always yields the same
/// series, byte for byte once written. Per day the RNG is consumed in a
/// fixed order (close shock, high extension, low extension, volume noise,
/// missing-volume draw), so adding fields later must extend, not reorder,
/// that sequence.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<OhlcvSeries> {
    if cfg.days == 0 {
        return Err(Error::invalid("synthetic series needs at least 1 day"));
    }
    if !(cfg.start_price > 0.0) {
        return Err(Error::invalid("start_price must be positive"));
    }
    if !(cfg.daily_vol >= 0.0) || !(cfg.drift_amplitude.is_finite()) {
        return Err(Error::invalid("daily_vol must be non-negative and finite"));
    }
    if !(cfg.drift_period_days > 0.0) {
        return Err(Error::invalid("drift_period_days must be positive"));
    }
    if !(cfg.base_volume > 0.0) || !(cfg.volume_swing >= 0.0) {
        return Err(Error::invalid(
            "base_volume must be positive and volume_swing non-negative",
        ));
    }
    if !(0.0..1.0).contains(&cfg.missing_volume_rate) {
        return Err(Error::invalid("missing_volume_rate must be in [0, 1)"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut bars = Vec::with_capacity(cfg.days);
    let mut prev_close = cfg.start_price;
    let tau = std::f64::consts::TAU;
    for t in 0..cfg.days {
        let date = cfg.start_date + chrono::Days::new(t as u64);
        let phase = tau * t as f64 / cfg.drift_period_days;
        let drift = cfg.drift_amplitude * phase.sin();
        let z: f64 = rng.sample(StandardNormal);
        let e_high: f64 = rng.sample(StandardNormal);
        let e_low: f64 = rng.sample(StandardNormal);
        let v_noise: f64 = rng.sample(StandardNormal);
        let miss: f64 = rng.random();

        let open = prev_close;
        let close = prev_close * (drift + cfg.daily_vol * z).exp();
        let high = open.max(close) * (e_high.abs() * cfg.daily_vol * 0.5).exp();
        let low = open.min(close) * (-(e_low.abs() * cfg.daily_vol * 0.5)).exp();
        let volume =
            (cfg.base_volume + cfg.volume_swing * phase.sin() + v_noise * cfg.volume_swing * 0.25)
                .round()
                .max(1.0);
        let volume = if miss < cfg.missing_volume_rate {
            None
        } else {
            Some(volume)
        };
        bars.push(OhlcvBar {
            date,
            volume_musd: volume,
            open: Some(open),
            high: Some(high),
            low: Some(low),
            close: Some(close),
        });
        prev_close = close;
    }
    OhlcvSeries::new(bars)
}
