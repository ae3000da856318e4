//! Recursive multi-day price forecasting.
//!
//! A trained generator predicts one transformed OHLC row from its condition
//! window; the fitted preprocessing pipeline maps that row back to price
//! space, the candle is repaired to a consistent high/low envelope, and the
//! predicted day is appended to the rolling window (volume carried forward
//! from the last observed day, since the generator does not emit volume) to
//! condition the next step. Horizon-many steps produce horizon rows.

use std::fmt;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gan::{GanModel, FEATURES, PRICE_FIELDS};
use crate::market_data::{Column, OhlcvBar, OhlcvSeries};
use crate::preprocess::FittedPipeline;

/// How the generator's noise input is chosen at each forecast step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZPolicy {
    /// `z = 0` — the reproducible point forecast. The default.
    Zero,
    /// One standard-normal draw per step from a ChaCha8 stream.
    FixedSeed { seed: u64 },
    /// Mean of `n` generated rows (in transformed space) per step, noise
    /// drawn from a ChaCha8 stream.
    SampleMean { n: usize, seed: u64 },
}

impl Default for ZPolicy {
    fn default() -> Self {
        ZPolicy::Zero
    }
}

impl fmt::Display for ZPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ZPolicy::Zero => write!(f, "zero-noise"),
            ZPolicy::FixedSeed { seed } => write!(f, "fixed-seed:{seed}"),
            ZPolicy::SampleMean { n, seed } => write!(f, "sample-mean:{n}:{seed}"),
        }
    }
}

/// A multi-day point forecast in price space.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastResult {
    /// Consecutive calendar dates following the last condition day.
    pub dates: Vec<NaiveDate>,
    /// One `[open, high, low, close]` row per date, JPY.
    pub predicted: Vec<[f64; PRICE_FIELDS]>,
    /// How noise was handled when this forecast was produced.
    pub z_policy: ZPolicy,
}

impl ForecastResult {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Predicted closing prices, one per forecast day.
    pub fn closes(&self) -> Vec<f64> {
        self.predicted.iter().map(|p| p[3]).collect()
    }

    /// Renders `date,pred_open,pred_high,pred_low,pred_close` rows with
    /// two-decimal JPY prices.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("date,pred_open,pred_high,pred_low,pred_close\n");
        for (date, p) in self.dates.iter().zip(&self.predicted) {
            out.push_str(&format!(
                "{date},{:.2},{:.2},{:.2},{:.2}\n",
                p[0], p[1], p[2], p[3]
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

/// Parses a forecast CSV previously written by [`ForecastResult::write_csv`].
///
/// The file format does not record the noise policy, so loaded results are
/// tagged [`ZPolicy::Zero`].
pub fn parse_csv_text(text: &str, label: &str) -> Result<ForecastResult> {
    let mut lines = text.lines().enumerate();
    let header = lines
        .next()
        .map(|(_, l)| l.trim())
        .ok_or_else(|| Error::parse(label, 1, "empty forecast file"))?;
    if header != "date,pred_open,pred_high,pred_low,pred_close" {
        return Err(Error::parse(
            label,
            1,
            format!("unexpected forecast header `{header}`"),
        ));
    }
    let mut dates = Vec::new();
    let mut predicted = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 1 + PRICE_FIELDS {
            return Err(Error::parse(
                label,
                lineno,
                format!("expected 5 fields, got {}", fields.len()),
            ));
        }
        let date = NaiveDate::parse_from_str(fields[0], "%Y-%m-%d")
            .map_err(|e| Error::parse(label, lineno, format!("bad date `{}`: {e}", fields[0])))?;
        let mut row = [0.0; PRICE_FIELDS];
        for (slot, field) in row.iter_mut().zip(&fields[1..]) {
            *slot = field
                .parse()
                .map_err(|_| Error::parse(label, lineno, format!("bad price `{field}`")))?;
        }
        if let Some(&prev) = dates.last() {
            if date <= prev {
                return Err(Error::parse(
                    label,
                    lineno,
                    format!("dates must increase: {prev} then {date}"),
                ));
            }
        }
        dates.push(date);
        predicted.push(row);
    }
    if dates.is_empty() {
        return Err(Error::insufficient(format!(
            "forecast file {label} has no data rows"
        )));
    }
    Ok(ForecastResult {
        dates,
        predicted,
        z_policy: ZPolicy::Zero,
    })
}

pub fn load_csv(path: &Path) -> Result<ForecastResult> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv_text(&text, &path.display().to_string())
}

/// Clamps a predicted candle to a consistent envelope: the high is raised to
/// cover open and close, the low lowered likewise. Open and close are never
/// changed, and a second application is a no-op.
pub fn repair_ohlc(o: f64, h: f64, l: f64, c: f64) -> Result<(f64, f64, f64, f64)> {
    for v in [o, h, l, c] {
        if !v.is_finite() {
            return Err(Error::domain(format!(
                "cannot repair a non-finite candle ({o}, {h}, {l}, {c})"
            )));
        }
    }
    Ok((o, h.max(o).max(c), l.min(o).min(c), c))
}

/// Runs the recursive forecast mechanics with an arbitrary one-step
/// generator, so the plumbing is testable without a trained model. `step`
/// maps the last `window` transformed rows to a transformed OHLC prediction.
fn forecast_with(
    pipeline: &FittedPipeline,
    condition: &OhlcvSeries,
    horizon: usize,
    window: usize,
    mut step: impl FnMut(&[[f64; FEATURES]]) -> Result<[f64; PRICE_FIELDS]>,
) -> Result<(Vec<NaiveDate>, Vec<[f64; PRICE_FIELDS]>)> {
    if horizon == 0 {
        return Err(Error::config("forecast horizon must be at least 1"));
    }
    let need = window + pipeline.row_shrinkage();
    if condition.len() < need {
        return Err(Error::insufficient(format!(
            "conditioning on {window} transformed rows under this recipe needs \
             {need} trailing days, got {}",
            condition.len()
        )));
    }
    let mut ctx = condition.tail(need)?;
    let carried_volume = ctx
        .bars()
        .iter()
        .rev()
        .find_map(|b| b.volume_musd)
        .ok_or_else(|| {
            Error::insufficient("no observed volume in the condition window to carry forward")
        })?;
    let mut dates = Vec::with_capacity(horizon);
    let mut predicted = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let raw = ctx.to_frame();
        let transformed = pipeline.apply(&raw)?;
        let start = transformed.len() - window;
        let cond: Vec<[f64; FEATURES]> = (start..transformed.len())
            .map(|t| transformed.row(t))
            .collect();
        let pred = step(&cond)?;
        let next_date = ctx.last().expect("context is non-empty").date + Duration::days(1);
        let prices = pipeline.invert_next_row(&raw, next_date, &Column::PRICES, &pred)?;
        let (o, h, l, c) = repair_ohlc(prices[0], prices[1], prices[2], prices[3])?;
        for v in [o, h, l, c] {
            if v <= 0.0 {
                return Err(Error::domain(format!(
                    "forecast for {next_date} produced a non-positive price {v}"
                )));
            }
        }
        dates.push(next_date);
        predicted.push([o, h, l, c]);
        ctx.push(OhlcvBar {
            date: next_date,
            volume_musd: Some(carried_volume),
            open: Some(o),
            high: Some(h),
            low: Some(l),
            close: Some(c),
        })?;
    }
    Ok((dates, predicted))
}

/// Predicts `horizon` days past the end of `condition`.
///
/// `condition` must supply at least `condition_window + row_shrinkage`
/// trailing days so the pipeline can produce a full transformed window; only
/// that tail is used. Forecast dates are consecutive calendar days after the
/// last condition day. Deterministic for the zero-noise and fixed-seed
/// policies.
pub fn forecast(
    model: &GanModel,
    pipeline: &FittedPipeline,
    condition: &OhlcvSeries,
    horizon: usize,
    z_policy: ZPolicy,
) -> Result<ForecastResult> {
    if let ZPolicy::SampleMean { n: 0, .. } = z_policy {
        return Err(Error::config("sample-mean noise policy needs n >= 1"));
    }
    let window = model.gen_cfg.condition_window;
    let noise_dim = model.gen_cfg.noise_dim;
    // Each forecast step draws from its own ChaCha8 stream (stream = step
    // index), so the draws for step k do not depend on how many samples
    // earlier steps consumed. Sample means with different n therefore share
    // their leading draws at every step, and running means converge.
    let step_rng = |step: usize| {
        let seed = match z_policy {
            ZPolicy::Zero => 0,
            ZPolicy::FixedSeed { seed } | ZPolicy::SampleMean { seed, .. } => seed,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(step as u64);
        rng
    };
    let mut step_index = 0usize;
    let (dates, predicted) = forecast_with(pipeline, condition, horizon, window, |cond| {
        let mut rng = step_rng(step_index);
        step_index += 1;
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.sample(StandardNormal)).collect()
        };
        match z_policy {
            ZPolicy::Zero => model.generate(cond, &vec![0.0; noise_dim]),
            ZPolicy::FixedSeed { .. } => model.generate(cond, &draw(noise_dim)),
            ZPolicy::SampleMean { n, .. } => {
                let conditions = vec![cond.to_vec(); n];
                let noises: Vec<Vec<f64>> = (0..n).map(|_| draw(noise_dim)).collect();
                let rows = model.generate_batch(&conditions, &noises)?;
                let mut mean = [0.0; PRICE_FIELDS];
                for row in &rows {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                for m in &mut mean {
                    *m /= n as f64;
                }
                Ok(mean)
            }
        }
    })?;
    Ok(ForecastResult {
        dates,
        predicted,
        z_policy,
    })
}
