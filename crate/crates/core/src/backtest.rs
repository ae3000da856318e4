//! Rule-based daily trading simulation over forecast closes.
//!
//! The strategy is one decision per day: buy when the predicted next close
//! sits above the last realized close (plus an optional dead band), sell when
//! below, hold otherwise. Profit settles at the decision day's realized
//! close. The ledger keeps two cumulative tracks side by side — the raw
//! percent-change arithmetic, and the track obtained by rounding each daily
//! P&L to one decimal before summing — because the two visibly disagree on
//! the bundled week (raw ≈ 0.874, rounded exactly 1.0) and silently picking
//! one would hide that.

use std::fmt;
use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::forecast::ForecastResult;
use crate::market_data::{Column, OhlcvSeries};

/// Daily position taken by the rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Buy,
    Sell,
    Hold,
}

impl Side {
    /// Lowercase name used in CSV ledgers.
    pub fn name(self) -> &'static str {
        match self {
            Side::Buy => "buy",
            Side::Sell => "sell",
            Side::Hold => "hold",
        }
    }

    fn sign(self) -> f64 {
        match self {
            Side::Buy => 1.0,
            Side::Sell => -1.0,
            Side::Hold => 0.0,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // `pad` (not `write_str`) so width specifiers in report templates work.
        f.pad(self.name())
    }
}

/// Knobs of the simulation; the defaults replicate the reference week.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BacktestConfig {
    /// Position size per trade, millions of USD.
    pub notional_musd: f64,
    /// Dead band around the reference close; inside it the rule holds.
    pub epsilon: f64,
    /// Flat cost charged to each buy or sell, millions of USD.
    pub fee_musd: f64,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        BacktestConfig {
            notional_musd: 100.0,
            epsilon: 0.0,
            fee_musd: 0.0,
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.notional_musd.is_finite() || self.notional_musd <= 0.0 {
            return Err(Error::config(format!(
                "notional must be a positive amount, got {}",
                self.notional_musd
            )));
        }
        if !self.epsilon.is_finite() || self.epsilon < 0.0 {
            return Err(Error::config(format!(
                "decision dead band must be finite and non-negative, got {}",
                self.epsilon
            )));
        }
        if !self.fee_musd.is_finite() || self.fee_musd < 0.0 {
            return Err(Error::config(format!(
                "per-trade fee must be finite and non-negative, got {}",
                self.fee_musd
            )));
        }
        Ok(())
    }
}

/// One settled day of the simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LedgerRow {
    pub date: NaiveDate,
    pub predicted_close: f64,
    pub actual_close: f64,
    pub side: Side,
    pub notional_musd: f64,
    /// Signed percent-change P&L in millions of USD, fees deducted.
    pub raw_pnl: f64,
    /// `raw_pnl` rounded half-away-from-zero to one decimal.
    pub rounded_pnl: f64,
    /// Running sum of `raw_pnl` up to and including this row.
    pub cumulative_raw: f64,
    /// Running sum of `rounded_pnl` up to and including this row.
    pub cumulative_rounded: f64,
}

/// The full simulation record, one row per forecast day.
#[derive(Debug, Clone, PartialEq)]
pub struct BacktestLedger {
    pub rows: Vec<LedgerRow>,
}

impl BacktestLedger {
    /// Final raw cumulative P&L, millions of USD (0 for an empty ledger).
    pub fn cumulative_raw(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.cumulative_raw)
    }

    /// Final rounded-track cumulative P&L, millions of USD.
    pub fn cumulative_rounded(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.cumulative_rounded)
    }

    /// Renders the ledger as CSV. Prices print with two decimals and the
    /// rounded track with one; raw P&L columns print in full precision so
    /// the file is an exact audit trail.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from(
            "date,pred_close,actual_close,side,notional_musd,pnl_musd_raw,\
             pnl_musd_rounded,cum_raw,cum_rounded\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.2},{:.2},{},{},{},{:.1},{},{:.1}\n",
                r.date,
                r.predicted_close,
                r.actual_close,
                r.side,
                r.notional_musd,
                r.raw_pnl,
                r.rounded_pnl,
                r.cumulative_raw,
                r.cumulative_rounded,
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

/// The daily rule: buy above the band, sell below it, hold inside it.
pub fn decide(predicted_next_close: f64, reference_close: f64, epsilon: f64) -> Result<Side> {
    for (label, v) in [
        ("predicted close", predicted_next_close),
        ("reference close", reference_close),
    ] {
        if !v.is_finite() || v <= 0.0 {
            return Err(Error::domain(format!("{label} must be positive, got {v}")));
        }
    }
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(Error::config(format!(
            "decision dead band must be finite and non-negative, got {epsilon}"
        )));
    }
    Ok(if predicted_next_close > reference_close + epsilon {
        Side::Buy
    } else if predicted_next_close < reference_close - epsilon {
        Side::Sell
    } else {
        Side::Hold
    })
}

fn round_to_one_decimal(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

/// Runs the simulation. `actual_closes` must hold one extra leading value:
/// the realized close of the day before the first forecast day, which seeds
/// the first decision. `dates` labels the forecast days.
pub fn run_backtest(
    dates: &[NaiveDate],
    predicted_closes: &[f64],
    actual_closes: &[f64],
    config: &BacktestConfig,
) -> Result<BacktestLedger> {
    config.validate()?;
    let n = predicted_closes.len();
    if n == 0 {
        return Err(Error::insufficient("cannot backtest an empty forecast"));
    }
    if actual_closes.len() != n + 1 {
        return Err(Error::shape(format!(
            "backtest pairs {n} predicted closes with {} actual closes; \
             need {} (the reference day comes first)",
            actual_closes.len(),
            n + 1
        )));
    }
    if dates.len() != n {
        return Err(Error::shape(format!(
            "backtest has {n} predicted closes but {} dates",
            dates.len()
        )));
    }
    if dates.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("backtest dates must be strictly increasing"));
    }
    for &v in actual_closes {
        if !v.is_finite() || v <= 0.0 {
            return Err(Error::domain(format!(
                "actual closes must be positive, got {v}"
            )));
        }
    }

    let mut rows = Vec::with_capacity(n);
    let mut cum_raw = 0.0;
    let mut cum_rounded = 0.0;
    for t in 0..n {
        let reference = actual_closes[t];
        let settle = actual_closes[t + 1];
        let side = decide(predicted_closes[t], reference, config.epsilon)?;
        let raw_pnl = if side == Side::Hold {
            0.0
        } else {
            let pct = (settle - reference) / reference;
            let pnl = side.sign() * (config.notional_musd * pct) - config.fee_musd;
            // A sell on a flat day yields -0.0; normalize so ledgers never
            // print a negative zero.
            if pnl == 0.0 { 0.0 } else { pnl }
        };
        let rounded_pnl = round_to_one_decimal(raw_pnl);
        cum_raw += raw_pnl;
        cum_rounded += rounded_pnl;
        rows.push(LedgerRow {
            date: dates[t],
            predicted_close: predicted_closes[t],
            actual_close: settle,
            side,
            notional_musd: config.notional_musd,
            raw_pnl,
            rounded_pnl,
            cumulative_raw: cum_raw,
            cumulative_rounded: cum_rounded,
        });
    }
    Ok(BacktestLedger { rows })
}

/// Joins a forecast with a realized series by date and runs the simulation.
/// The series must contain a bar with a close immediately before the first
/// forecast date (by position, not calendar adjacency) plus every forecast
/// date; forecast dates missing from the series are an alignment error.
pub fn ledger_from_series(
    forecast: &ForecastResult,
    actual: &OhlcvSeries,
    config: &BacktestConfig,
) -> Result<BacktestLedger> {
    if forecast.is_empty() {
        return Err(Error::insufficient("cannot backtest an empty forecast"));
    }
    let bars = actual.bars();
    let close_of = |idx: usize| -> Result<f64> {
        bars[idx].get(Column::Close).ok_or_else(|| {
            Error::invalid(format!(
                "actual bar {} is missing its close price",
                bars[idx].date
            ))
        })
    };
    let mut missing = Vec::new();
    let mut actual_closes = Vec::with_capacity(forecast.len() + 1);
    let mut first_idx = None;
    for date in &forecast.dates {
        match bars.binary_search_by_key(date, |b| b.date) {
            Ok(idx) => {
                if first_idx.is_none() {
                    first_idx = Some(idx);
                }
                actual_closes.push(close_of(idx)?);
            }
            Err(_) => missing.push(date.to_string()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::alignment(format!(
            "actual series has no bars for forecast dates: {}",
            missing.join(", ")
        )));
    }
    let first_idx = first_idx.expect("non-empty forecast");
    if first_idx == 0 {
        return Err(Error::insufficient(format!(
            "actual series needs a reference bar before the first forecast \
             date {}",
            forecast.dates[0]
        )));
    }
    actual_closes.insert(0, close_of(first_idx - 1)?);
    run_backtest(&forecast.dates, &forecast.closes(), &actual_closes, config)
}

/// Renders the ledger as a fixed-width text table (rounded P&L columns) with
/// a footer giving both cumulative tracks, raw in full precision.
pub fn roi_report(ledger: &BacktestLedger) -> Result<String> {
    if ledger.rows.is_empty() {
        return Err(Error::insufficient("cannot report on an empty ledger"));
    }
    let mut out = String::from("date        side  notional_musd  pnl_musd  cum_pnl_musd\n");
    for r in &ledger.rows {
        out.push_str(&format!(
            "{}  {:<4}  {:>13.1}  {:>8.1}  {:>12.1}\n",
            r.date, r.side, r.notional_musd, r.rounded_pnl, r.cumulative_rounded,
        ));
    }
    out.push_str(&format!(
        "cumulative return: {:.1} million USD on the rounded track, \
         {} million USD raw\n",
        ledger.cumulative_rounded(),
        ledger.cumulative_raw(),
    ));
    Ok(out)
}
