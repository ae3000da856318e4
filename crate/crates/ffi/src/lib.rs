//! C ABI for the fxgan toolkit.
//!
//! The surface follows three conventions, stated once here and repeated in
//! the generated header:
//!
//! * **Handles are opaque.** Constructors return a pointer that must be
//!   released with the matching `*_free`; a null return means failure.
//!   `fx_last_error_message` describes the most recent failure on the
//!   calling thread.
//! * **Scalar results go through out-parameters** and the function returns
//!   an [`FxStatus`]. `FX_STATUS_OK` (0) is success; the nonzero values
//!   mirror the library's error categories and double as the CLI's exit
//!   codes, so scripted and embedded callers see the same taxonomy.
//! * **Nothing unwinds across the boundary.** Every entry point catches
//!   panics and converts them to `FX_STATUS_PANIC`.
//!
//! Strings are NUL-terminated UTF-8. Returned message pointers stay valid
//! until the next fxgan call on the same thread; copy them if you need them
//! longer.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe, UnwindSafe};
use std::path::Path;
use std::ptr;

use fxgan::backtest::{self, BacktestConfig};
use fxgan::error::{Error, ErrorCategory};
use fxgan::evaluation;
use fxgan::forecast::{self, ForecastResult, ZPolicy};
use fxgan::gan::{DiscriminatorConfig, GanModel, GeneratorConfig};
use fxgan::market_data::{self, OhlcvSeries, SyntheticConfig};
use fxgan::preprocess::{FittedPipeline, Recipe};
use fxgan::training::{self, TrainConfig};

/// Result code of every fallible call. Zero is success; other values match
/// the error categories (and process exit codes) of the core library, plus
/// `FX_STATUS_PANIC` for a caught Rust panic.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FxStatus {
    Ok = 0,
    Panic = 1,
    Config = 2,
    Io = 3,
    Data = 4,
    Numeric = 5,
    Diverged = 6,
}

/// A daily OHLCV series.
pub struct FxSeries {
    inner: OhlcvSeries,
}

/// A trained generator/discriminator pair bundled with the fitted
/// preprocessing pipeline it was trained under.
pub struct FxModel {
    model: GanModel,
    pipeline: FittedPipeline,
}

/// A multi-day OHLC forecast.
pub struct FxForecast {
    inner: ForecastResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let sanitized: String = message.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = Some(CString::new(sanitized).expect("NULs were stripped"));
    });
}

fn clear_last_error() {
    LAST_ERROR.with(|slot| slot.borrow_mut().take());
}

fn status_of(err: &Error) -> FxStatus {
    match err.category() {
        ErrorCategory::Config => FxStatus::Config,
        ErrorCategory::Io => FxStatus::Io,
        ErrorCategory::Data => FxStatus::Data,
        ErrorCategory::Numeric => FxStatus::Numeric,
        ErrorCategory::Diverged => FxStatus::Diverged,
    }
}

/// Runs a status-returning body with panic containment.
fn guarded(body: impl FnOnce() -> Result<(), (FxStatus, String)> + UnwindSafe) -> FxStatus {
    clear_last_error();
    match catch_unwind(body) {
        Ok(Ok(())) => FxStatus::Ok,
        Ok(Err((status, message))) => {
            set_last_error(&message);
            status
        }
        Err(cause) => {
            let what = panic_text(&cause);
            set_last_error(&format!("internal panic: {what}"));
            FxStatus::Panic
        }
    }
}

/// Runs a handle-returning body with panic containment; null means failure.
fn guarded_ptr<T>(body: impl FnOnce() -> Result<*mut T, (FxStatus, String)> + UnwindSafe) -> *mut T {
    clear_last_error();
    match catch_unwind(body) {
        Ok(Ok(p)) => p,
        Ok(Err((_, message))) => {
            set_last_error(&message);
            ptr::null_mut()
        }
        Err(cause) => {
            let what = panic_text(&cause);
            set_last_error(&format!("internal panic: {what}"));
            ptr::null_mut()
        }
    }
}

fn panic_text(cause: &Box<dyn std::any::Any + Send>) -> &str {
    if let Some(s) = cause.downcast_ref::<&str>() {
        s
    } else if let Some(s) = cause.downcast_ref::<String>() {
        s
    } else {
        "unknown cause"
    }
}

fn lib_err(e: Error) -> (FxStatus, String) {
    (status_of(&e), e.to_string())
}

fn config_err(message: impl Into<String>) -> (FxStatus, String) {
    (FxStatus::Config, message.into())
}

/// # Safety
/// `ptr` must be a valid NUL-terminated string (checked non-null first).
unsafe fn read_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, (FxStatus, String)> {
    if ptr.is_null() {
        return Err(config_err(format!("{what} pointer is null")));
    }
    unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|_| config_err(format!("{what} is not valid UTF-8")))
}

unsafe fn deref<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, (FxStatus, String)> {
    if ptr.is_null() {
        Err(config_err(format!("{what} handle is null")))
    } else {
        Ok(unsafe { &*ptr })
    }
}

fn out_slot<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, (FxStatus, String)> {
    if ptr.is_null() {
        Err(config_err(format!("{what} out-pointer is null")))
    } else {
        Ok(unsafe { &mut *ptr })
    }
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

/// Returns a description of the most recent failure on this thread, or null
/// if the last call succeeded. The pointer is invalidated by the next fxgan
/// call on the same thread.
#[no_mangle]
pub extern "C" fn fx_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map(|s| s.as_ptr())
            .unwrap_or(ptr::null())
    })
}

/// The crate version as a static string; never freed by the caller.
#[no_mangle]
pub extern "C" fn fx_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

// ---------------------------------------------------------------------------
// Series
// ---------------------------------------------------------------------------

/// Loads a daily OHLCV series from a CSV file
/// (`date,volume_musd,open,high,low,close`).
///
/// # Safety
/// `path` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fx_series_load_csv(path: *const c_char) -> *mut FxSeries {
    guarded_ptr(|| {
        let path = unsafe { read_str(path, "path") }?;
        let inner = market_data::load_csv(Path::new(path)).map_err(lib_err)?;
        Ok(Box::into_raw(Box::new(FxSeries { inner })))
    })
}

/// Generates the built-in seeded synthetic series (geometric Brownian
/// motion with a sinusoidal drift), mainly for smoke tests and demos.
#[no_mangle]
pub extern "C" fn fx_series_synthetic(days: usize, seed: u64) -> *mut FxSeries {
    guarded_ptr(|| {
        let inner = market_data::generate_synthetic(&SyntheticConfig {
            days,
            seed,
            ..SyntheticConfig::default()
        })
        .map_err(lib_err)?;
        Ok(Box::into_raw(Box::new(FxSeries { inner })))
    })
}

/// Number of daily bars in the series.
///
/// # Safety
/// `series` must be a live handle from this library (or null, which yields
/// a Config error).
#[no_mangle]
pub unsafe extern "C" fn fx_series_len(series: *const FxSeries, len: *mut usize) -> FxStatus {
    guarded(AssertUnwindSafe(|| {
        let series = unsafe { deref(series, "series") }?;
        *out_slot(len, "len")? = series.inner.len();
        Ok(())
    }))
}

/// Releases a series handle. Null is a no-op.
///
/// # Safety
/// `series` must have come from this library and not been freed already.
#[no_mangle]
pub unsafe extern "C" fn fx_series_free(series: *mut FxSeries) {
    if !series.is_null() {
        drop(unsafe { Box::from_raw(series) });
    }
}

// ---------------------------------------------------------------------------
// Training and checkpoints
// ---------------------------------------------------------------------------

/// Fits the preprocessing recipe on `series` and adversarially trains a
/// fresh model on the result. `recipe` is the comma-separated step list
/// (e.g. `"interpolate,log,difference:1"`); `window` is the number of past
/// days the generator conditions on. Everything random derives from `seed`.
///
/// # Safety
/// `series` must be a live handle; `recipe` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fx_model_train(
    series: *const FxSeries,
    recipe: *const c_char,
    window: usize,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    seed: u64,
) -> *mut FxModel {
    guarded_ptr(AssertUnwindSafe(|| {
        let series = unsafe { deref(series, "series") }?;
        let recipe = Recipe::parse(unsafe { read_str(recipe, "recipe") }?).map_err(lib_err)?;
        let data =
            training::make_training_set(&series.inner, &recipe, window).map_err(lib_err)?;
        let mut model = GanModel::init(
            GeneratorConfig {
                condition_window: window,
                ..GeneratorConfig::default()
            },
            DiscriminatorConfig::default(),
            seed,
        )
        .map_err(lib_err)?;
        let cfg = TrainConfig {
            epochs,
            batch_size,
            lr: learning_rate,
            seed,
            ..TrainConfig::default()
        };
        training::train(&mut model, &data, &cfg).map_err(lib_err)?;
        Ok(Box::into_raw(Box::new(FxModel {
            model,
            pipeline: data.pipeline,
        })))
    }))
}

/// Writes the model weights and the fitted pipeline to two files.
///
/// # Safety
/// `model` must be a live handle; both paths valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn fx_model_save(
    model: *const FxModel,
    checkpoint_path: *const c_char,
    pipeline_path: *const c_char,
) -> FxStatus {
    guarded(AssertUnwindSafe(|| {
        let model = unsafe { deref(model, "model") }?;
        let checkpoint = unsafe { read_str(checkpoint_path, "checkpoint path") }?;
        let pipeline = unsafe { read_str(pipeline_path, "pipeline path") }?;
        model.model.save(Path::new(checkpoint)).map_err(lib_err)?;
        model.pipeline.save(Path::new(pipeline)).map_err(lib_err)?;
        Ok(())
    }))
}

/// Restores a model saved by [`fx_model_save`].
///
/// # Safety
/// Both paths must be valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn fx_model_load(
    checkpoint_path: *const c_char,
    pipeline_path: *const c_char,
) -> *mut FxModel {
    guarded_ptr(|| {
        let checkpoint = unsafe { read_str(checkpoint_path, "checkpoint path") }?;
        let pipeline = unsafe { read_str(pipeline_path, "pipeline path") }?;
        let model = GanModel::load(Path::new(checkpoint)).map_err(lib_err)?;
        let pipeline = FittedPipeline::load(Path::new(pipeline)).map_err(lib_err)?;
        Ok(Box::into_raw(Box::new(FxModel { model, pipeline })))
    })
}

/// Releases a model handle. Null is a no-op.
///
/// # Safety
/// `model` must have come from this library and not been freed already.
#[no_mangle]
pub unsafe extern "C" fn fx_model_free(model: *mut FxModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

// ---------------------------------------------------------------------------
// Forecasting
// ---------------------------------------------------------------------------

/// Rolls the generator forward `horizon` days past the end of `series`
/// under the deterministic zero-noise policy.
///
/// # Safety
/// `model` and `series` must be live handles.
#[no_mangle]
pub unsafe extern "C" fn fx_forecast(
    model: *const FxModel,
    series: *const FxSeries,
    horizon: usize,
) -> *mut FxForecast {
    guarded_ptr(AssertUnwindSafe(|| {
        let model = unsafe { deref(model, "model") }?;
        let series = unsafe { deref(series, "series") }?;
        let inner = forecast::forecast(
            &model.model,
            &model.pipeline,
            &series.inner,
            horizon,
            ZPolicy::Zero,
        )
        .map_err(lib_err)?;
        Ok(Box::into_raw(Box::new(FxForecast { inner })))
    }))
}

/// Number of forecast days.
///
/// # Safety
/// `forecast` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fx_forecast_len(
    forecast: *const FxForecast,
    len: *mut usize,
) -> FxStatus {
    guarded(AssertUnwindSafe(|| {
        let forecast = unsafe { deref(forecast, "forecast") }?;
        *out_slot(len, "len")? = forecast.inner.len();
        Ok(())
    }))
}

/// One predicted price. `field`: 0 = open, 1 = high, 2 = low, 3 = close.
///
/// # Safety
/// `forecast` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fx_forecast_value(
    forecast: *const FxForecast,
    day: usize,
    field: usize,
    value: *mut f64,
) -> FxStatus {
    guarded(AssertUnwindSafe(|| {
        let forecast = unsafe { deref(forecast, "forecast") }?;
        if field >= 4 {
            return Err(config_err(format!(
                "field {field} out of range (0 = open, 1 = high, 2 = low, 3 = close)"
            )));
        }
        let row = forecast.inner.predicted.get(day).ok_or_else(|| {
            config_err(format!(
                "day {day} out of range ({} forecast days)",
                forecast.inner.len()
            ))
        })?;
        *out_slot(value, "value")? = row[field];
        Ok(())
    }))
}

/// Writes the forecast as CSV (`date,pred_open,pred_high,pred_low,pred_close`).
///
/// # Safety
/// `forecast` must be a live handle; `path` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fx_forecast_write_csv(
    forecast: *const FxForecast,
    path: *const c_char,
) -> FxStatus {
    guarded(AssertUnwindSafe(|| {
        let forecast = unsafe { deref(forecast, "forecast") }?;
        let path = unsafe { read_str(path, "path") }?;
        forecast.inner.write_csv(Path::new(path)).map_err(lib_err)
    }))
}

/// Releases a forecast handle. Null is a no-op.
///
/// # Safety
/// `forecast` must have come from this library and not been freed already.
#[no_mangle]
pub unsafe extern "C" fn fx_forecast_free(forecast: *mut FxForecast) {
    if !forecast.is_null() {
        drop(unsafe { Box::from_raw(forecast) });
    }
}

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

/// Root-mean-square error of one predicted field against the realized bars,
/// matched by date. `field` indexes as in [`fx_forecast_value`].
///
/// # Safety
/// `forecast` and `actual` must be live handles.
#[no_mangle]
pub unsafe extern "C" fn fx_rmse(
    forecast: *const FxForecast,
    actual: *const FxSeries,
    field: usize,
    value: *mut f64,
) -> FxStatus {
    guarded(AssertUnwindSafe(|| {
        let forecast = unsafe { deref(forecast, "forecast") }?;
        let actual = unsafe { deref(actual, "actual") }?;
        if field >= 4 {
            return Err(config_err(format!(
                "field {field} out of range (0 = open, 1 = high, 2 = low, 3 = close)"
            )));
        }
        let report =
            evaluation::accuracy_report(&forecast.inner, &actual.inner).map_err(lib_err)?;
        *out_slot(value, "value")? = report.rmse[field];
        Ok(())
    }))
}

/// Runs the daily long/short trading rule over the forecast and reports the
/// cumulative profit in millions of USD, on both the raw track and the
/// track where each day's figure is first rounded to one decimal.
///
/// # Safety
/// `forecast` and `actual` must be live handles.
#[no_mangle]
pub unsafe extern "C" fn fx_backtest_cumulative(
    forecast: *const FxForecast,
    actual: *const FxSeries,
    notional_musd: f64,
    cumulative_raw: *mut f64,
    cumulative_rounded: *mut f64,
) -> FxStatus {
    guarded(AssertUnwindSafe(|| {
        let forecast = unsafe { deref(forecast, "forecast") }?;
        let actual = unsafe { deref(actual, "actual") }?;
        let cfg = BacktestConfig {
            notional_musd,
            ..BacktestConfig::default()
        };
        let ledger =
            backtest::ledger_from_series(&forecast.inner, &actual.inner, &cfg).map_err(lib_err)?;
        *out_slot(cumulative_raw, "cumulative_raw")? = ledger.cumulative_raw();
        *out_slot(cumulative_rounded, "cumulative_rounded")? = ledger.cumulative_rounded();
        Ok(())
    }))
}
