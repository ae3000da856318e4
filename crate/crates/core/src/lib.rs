//! Deterministic daily-FX forecasting and backtesting toolkit.
//!
//! The crate wires together a small but complete pipeline:
//!
//! * [`market_data`] — strict OHLCV CSV ingestion, integrity checks, change-rate
//!   auditing, and a seeded synthetic series generator.
//! * [`preprocess`] — composable, invertible column transforms (interpolation,
//!   log, differencing, z-score, seasonal decomposition).
//! * [`autodiff`] — a reverse-mode automatic differentiation engine with an
//!   Adam optimizer and a finite-difference gradient checker.
//! * [`gan`] — an LSTM generator / convolutional discriminator pair built on
//!   the autodiff graph, with binary checkpointing.
//! * [`training`] — the adversarial training loop and a toy 1-D benchmark.
//! * [`forecast`] — recursive multi-day forecasting in price space.
//! * [`arima`] — a classical ARMA baseline fit by conditional sum of squares.
//! * [`evaluation`] — RMSE and per-field accuracy reports.
//! * [`backtest`] — a rule-based daily trading simulation with raw and
//!   display-rounded profit tracks.
//! * [`cli`] — the `fxgan` command-line front end.
//!
//! Every random decision flows from explicit `u64` seeds through ChaCha8
//! streams, and every file the toolkit writes is byte-stable across reruns.

pub mod arima;
pub mod autodiff;
pub mod backtest;
pub mod cli;
pub mod error;
pub mod evaluation;
pub mod forecast;
pub mod gan;
pub mod market_data;
pub mod numeric;
pub mod preprocess;
pub mod training;

pub use error::{Error, ErrorCategory, Result};
