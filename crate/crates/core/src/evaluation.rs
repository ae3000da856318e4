//! Root-mean-square-error accuracy reporting.
//!
//! Forecast rows are paired with actual bars by exact calendar date, the
//! per-field RMSE is computed over the aligned days, and the result renders
//! as a CSV table: one row per day with predicted, actual, and per-day error
//! columns, then an `overall` footer row carrying the per-field RMSE.

use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::forecast::ForecastResult;
use crate::gan::PRICE_FIELDS;
use crate::market_data::{Column, OhlcvSeries};

/// Root mean square error between two paired series.
pub fn rmse(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    if actual.len() != predicted.len() {
        return Err(Error::shape(format!(
            "rmse pairs {} actual with {} predicted values",
            actual.len(),
            predicted.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::insufficient("rmse of an empty series is undefined"));
    }
    let mse = actual
        .iter()
        .zip(predicted)
        .map(|(a, p)| (a - p) * (a - p))
        .sum::<f64>()
        / actual.len() as f64;
    Ok(mse.sqrt())
}

/// One evaluated day: the predicted and actual OHLC rows for a date.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportRow {
    pub date: NaiveDate,
    pub predicted: [f64; PRICE_FIELDS],
    pub actual: [f64; PRICE_FIELDS],
}

/// Per-field forecast accuracy over a run of aligned days.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    /// RMSE per field, `[open, high, low, close]`, JPY.
    pub rmse: [f64; PRICE_FIELDS],
    /// Mean squared error per field; `rmse` is its square root.
    pub mse: [f64; PRICE_FIELDS],
    /// Number of evaluated days.
    pub n: usize,
    /// The aligned (predicted, actual) pairs, in date order.
    pub rows: Vec<ReportRow>,
}

const FIELD_NAMES: [&str; PRICE_FIELDS] = ["open", "high", "low", "close"];

impl AccuracyReport {
    /// Renders the report as CSV: a row per day with predicted, actual, and
    /// per-day error columns (a single day's RMSE is its absolute error),
    /// then an `overall` footer with the per-field RMSE. Prices and errors
    /// print with two decimals.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from(
            "date,pred_open,actual_open,pred_high,actual_high,pred_low,actual_low,\
             pred_close,actual_close,rmse_open,rmse_high,rmse_low,rmse_close\n",
        );
        for row in &self.rows {
            out.push_str(&row.date.to_string());
            for i in 0..PRICE_FIELDS {
                out.push_str(&format!(",{:.2},{:.2}", row.predicted[i], row.actual[i]));
            }
            for i in 0..PRICE_FIELDS {
                out.push_str(&format!(",{:.2}", (row.predicted[i] - row.actual[i]).abs()));
            }
            out.push('\n');
        }
        out.push_str("overall,,,,,,,,");
        for v in self.rmse {
            out.push_str(&format!(",{v:.2}"));
        }
        out.push('\n');
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    /// One-line summary, two decimals: `open 0.02  high 0.02  ...`.
    pub fn summary(&self) -> String {
        FIELD_NAMES
            .iter()
            .zip(self.rmse)
            .map(|(name, v)| format!("{name} {v:.2}"))
            .collect::<Vec<_>>()
            .join("  ")
    }
}

/// Pairs every forecast day with the actual bar of the same date and
/// computes per-field accuracy. Actual days without a forecast are ignored;
/// forecast days missing from `actual` are an alignment error naming each
/// missing date.
pub fn accuracy_report(forecast: &ForecastResult, actual: &OhlcvSeries) -> Result<AccuracyReport> {
    if forecast.is_empty() {
        return Err(Error::insufficient("cannot evaluate an empty forecast"));
    }
    let bars = actual.bars();
    let mut rows = Vec::with_capacity(forecast.len());
    let mut missing = Vec::new();
    for (date, predicted) in forecast.dates.iter().zip(&forecast.predicted) {
        let Ok(idx) = bars.binary_search_by_key(date, |b| b.date) else {
            missing.push(date.to_string());
            continue;
        };
        let bar = &bars[idx];
        let mut actual_row = [0.0; PRICE_FIELDS];
        for (slot, col) in actual_row.iter_mut().zip(Column::PRICES) {
            *slot = bar.get(col).ok_or_else(|| {
                Error::invalid(format!("actual bar {date} is missing its {col} price"))
            })?;
        }
        rows.push(ReportRow {
            date: *date,
            predicted: *predicted,
            actual: actual_row,
        });
    }
    if !missing.is_empty() {
        return Err(Error::alignment(format!(
            "actual series has no bars for forecast dates: {}",
            missing.join(", ")
        )));
    }
    let n = rows.len();
    let mut mse = [0.0; PRICE_FIELDS];
    for row in &rows {
        for i in 0..PRICE_FIELDS {
            let d = row.predicted[i] - row.actual[i];
            mse[i] += d * d;
        }
    }
    let mut rmse_arr = [0.0; PRICE_FIELDS];
    for i in 0..PRICE_FIELDS {
        mse[i] /= n as f64;
        rmse_arr[i] = mse[i].sqrt();
    }
    Ok(AccuracyReport {
        rmse: rmse_arr,
        mse,
        n,
        rows,
    })
}
