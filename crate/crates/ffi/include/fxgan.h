/* C interface to the fxgan forecasting/backtesting toolkit.
 * Generated by cbindgen; do not edit by hand. */

#ifndef FXGAN_H
#define FXGAN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call. Zero is success; other values match
 * the error categories (and process exit codes) of the core library, plus
 * `FX_STATUS_PANIC` for a caught Rust panic.
 */
typedef enum FxStatus {
  FX_STATUS_OK = 0,
  FX_STATUS_PANIC = 1,
  FX_STATUS_CONFIG = 2,
  FX_STATUS_IO = 3,
  FX_STATUS_DATA = 4,
  FX_STATUS_NUMERIC = 5,
  FX_STATUS_DIVERGED = 6,
} FxStatus;

/**
 * A multi-day OHLC forecast.
 */
typedef struct FxForecast FxForecast;

/**
 * A trained generator/discriminator pair bundled with the fitted
 * preprocessing pipeline it was trained under.
 */
typedef struct FxModel FxModel;

/**
 * A daily OHLCV series.
 */
typedef struct FxSeries FxSeries;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Returns a description of the most recent failure on this thread, or null
 * if the last call succeeded. The pointer is invalidated by the next fxgan
 * call on the same thread.
 */
const char *fx_last_error_message(void);

/**
 * The crate version as a static string; never freed by the caller.
 */
const char *fx_version(void);

/**
 * Loads a daily OHLCV series from a CSV file
 * (`date,volume_musd,open,high,low,close`).
 *
 * # Safety
 * `path` must be a valid NUL-terminated string.
 */
struct FxSeries *fx_series_load_csv(const char *path);

/**
 * Generates the built-in seeded synthetic series (geometric Brownian
 * motion with a sinusoidal drift), mainly for smoke tests and demos.
 */
struct FxSeries *fx_series_synthetic(uintptr_t days, uint64_t seed);

/**
 * Number of daily bars in the series.
 *
 * # Safety
 * `series` must be a live handle from this library (or null, which yields
 * a Config error).
 */
enum FxStatus fx_series_len(const struct FxSeries *series, uintptr_t *len);

/**
 * Releases a series handle. Null is a no-op.
 *
 * # Safety
 * `series` must have come from this library and not been freed already.
 */
void fx_series_free(struct FxSeries *series);

/**
 * Fits the preprocessing recipe on `series` and adversarially trains a
 * fresh model on the result. `recipe` is the comma-separated step list
 * (e.g. `"interpolate,log,difference:1"`); `window` is the number of past
 * days the generator conditions on. Everything random derives from `seed`.
 *
 * # Safety
 * `series` must be a live handle; `recipe` a valid NUL-terminated string.
 */
struct FxModel *fx_model_train(const struct FxSeries *series,
                               const char *recipe,
                               uintptr_t window,
                               uintptr_t epochs,
                               uintptr_t batch_size,
                               double learning_rate,
                               uint64_t seed);

/**
 * Writes the model weights and the fitted pipeline to two files.
 *
 * # Safety
 * `model` must be a live handle; both paths valid NUL-terminated strings.
 */
enum FxStatus fx_model_save(const struct FxModel *model,
                            const char *checkpoint_path,
                            const char *pipeline_path);

/**
 * Restores a model saved by [`fx_model_save`].
 *
 * # Safety
 * Both paths must be valid NUL-terminated strings.
 */
struct FxModel *fx_model_load(const char *checkpoint_path, const char *pipeline_path);

/**
 * Releases a model handle. Null is a no-op.
 *
 * # Safety
 * `model` must have come from this library and not been freed already.
 */
void fx_model_free(struct FxModel *model);

/**
 * Rolls the generator forward `horizon` days past the end of `series`
 * under the deterministic zero-noise policy.
 *
 * # Safety
 * `model` and `series` must be live handles.
 */
struct FxForecast *fx_forecast(const struct FxModel *model,
                               const struct FxSeries *series,
                               uintptr_t horizon);

/**
 * Number of forecast days.
 *
 * # Safety
 * `forecast` must be a live handle.
 */
enum FxStatus fx_forecast_len(const struct FxForecast *forecast, uintptr_t *len);

/**
 * One predicted price. `field`: 0 = open, 1 = high, 2 = low, 3 = close.
 *
 * # Safety
 * `forecast` must be a live handle.
 */
enum FxStatus fx_forecast_value(const struct FxForecast *forecast,
                                uintptr_t day,
                                uintptr_t field,
                                double *value);

/**
 * Writes the forecast as CSV (`date,pred_open,pred_high,pred_low,pred_close`).
 *
 * # Safety
 * `forecast` must be a live handle; `path` a valid NUL-terminated string.
 */
enum FxStatus fx_forecast_write_csv(const struct FxForecast *forecast, const char *path);

/**
 * Releases a forecast handle. Null is a no-op.
 *
 * # Safety
 * `forecast` must have come from this library and not been freed already.
 */
void fx_forecast_free(struct FxForecast *forecast);

/**
 * Root-mean-square error of one predicted field against the realized bars,
 * matched by date. `field` indexes as in [`fx_forecast_value`].
 *
 * # Safety
 * `forecast` and `actual` must be live handles.
 */
enum FxStatus fx_rmse(const struct FxForecast *forecast,
                      const struct FxSeries *actual,
                      uintptr_t field,
                      double *value);

/**
 * Runs the daily long/short trading rule over the forecast and reports the
 * cumulative profit in millions of USD, on both the raw track and the
 * track where each day's figure is first rounded to one decimal.
 *
 * # Safety
 * `forecast` and `actual` must be live handles.
 */
enum FxStatus fx_backtest_cumulative(const struct FxForecast *forecast,
                                     const struct FxSeries *actual,
                                     double notional_musd,
                                     double *cumulative_raw,
                                     double *cumulative_rounded);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FXGAN_H */
