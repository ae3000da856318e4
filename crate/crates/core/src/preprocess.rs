//! Composable, invertible column transforms for daily OHLCV frames.
//!
//! A [`Recipe`] names an ordered list of steps; [`fit`] learns whatever
//! statistics each step needs (z-score moments, differencing seeds,
//! seasonal indices) from a reference frame and returns a
//! [`FittedPipeline`] that can then transform any frame the same way,
//! reconstruct originals, and — crucially for recursive forecasting —
//! map a single model output back to price space given a context window.
//!
//! Available steps:
//!
//! * `interpolate` — fill missing cells (linear between neighbours,
//!   nearest value at the edges). Must come first if used.
//! * `log` — natural log, per column.
//! * `difference:d` — d-th order differencing; stores the first `d`
//!   values of its input stream (and their dates) as reconstruction seeds.
//! * `zscore` — centre and scale by the fitted mean and population
//!   standard deviation, per column.
//! * `deseasonalize:p` — classical additive decomposition with period `p`:
//!   subtract per-phase seasonal indices estimated around a centred
//!   moving-average trend. Indices sum to zero; phases anchor to the
//!   first fitted date so new frames align by calendar distance.
//!
//! The default daily recipe is `interpolate,log,difference:1,zscore`.

use std::fmt;
use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::market_data::{Column, RawFrame};
use crate::numeric::{mean, population_std};

/// One step of a preprocessing recipe, before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepSpec {
    Interpolate,
    Log,
    Difference { order: usize },
    ZScore,
    Deseasonalize { period: usize },
}

impl fmt::Display for StepSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepSpec::Interpolate => write!(f, "interpolate"),
            StepSpec::Log => write!(f, "log"),
            StepSpec::Difference { order } => write!(f, "difference:{order}"),
            StepSpec::ZScore => write!(f, "zscore"),
            StepSpec::Deseasonalize { period } => write!(f, "deseasonalize:{period}"),
        }
    }
}

/// An ordered list of preprocessing steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Recipe {
    pub steps: Vec<StepSpec>,
}

impl Recipe {
    /// The standard recipe for daily FX data:
    /// `interpolate,log,difference:1,zscore`.
    pub fn default_daily() -> Self {
        Recipe {
            steps: vec![
                StepSpec::Interpolate,
                StepSpec::Log,
                StepSpec::Difference { order: 1 },
                StepSpec::ZScore,
            ],
        }
    }

    /// Parses a comma-separated recipe string such as
    /// `interpolate,log,difference:1,zscore`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut steps = Vec::new();
        for token in text.split(',') {
            let token = token.trim();
            let step = match token {
                "interpolate" => StepSpec::Interpolate,
                "log" => StepSpec::Log,
                "zscore" => StepSpec::ZScore,
                "difference" => StepSpec::Difference { order: 1 },
                _ => {
                    if let Some(rest) = token.strip_prefix("difference:") {
                        let order = rest.parse().map_err(|_| {
                            Error::config(format!("bad difference order `{rest}` in recipe"))
                        })?;
                        StepSpec::Difference { order }
                    } else if let Some(rest) = token.strip_prefix("deseasonalize:") {
                        let period = rest.parse().map_err(|_| {
                            Error::config(format!("bad deseasonalize period `{rest}` in recipe"))
                        })?;
                        StepSpec::Deseasonalize { period }
                    } else {
                        return Err(Error::config(format!(
                            "unknown recipe step `{token}` (expected interpolate, log, \
                             difference:<d>, zscore, or deseasonalize:<p>)"
                        )));
                    }
                }
            };
            steps.push(step);
        }
        let recipe = Recipe { steps };
        recipe.validate()?;
        Ok(recipe)
    }

    /// Structural checks: non-empty, interpolate only in front, sane
    /// orders/periods.
    pub fn validate(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::config("recipe has no steps"));
        }
        for (i, step) in self.steps.iter().enumerate() {
            match step {
                StepSpec::Interpolate if i != 0 => {
                    return Err(Error::config(
                        "interpolate must be the first recipe step",
                    ));
                }
                StepSpec::Difference { order } if *order == 0 => {
                    return Err(Error::config("difference order must be at least 1"));
                }
                StepSpec::Deseasonalize { period } if *period < 2 => {
                    return Err(Error::config("deseasonalize period must be at least 2"));
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn has_interpolate(&self) -> bool {
        self.steps.first() == Some(&StepSpec::Interpolate)
    }
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.steps.iter().map(|s| s.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

/// A dense (no missing cells) column-major frame of the five OHLCV columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub dates: Vec<NaiveDate>,
    pub columns: [Vec<f64>; 5],
}

impl Frame {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn column(&self, col: Column) -> &[f64] {
        &self.columns[col.index()]
    }

    /// Row `t` as `[volume, open, high, low, close]`.
    pub fn row(&self, t: usize) -> [f64; 5] {
        [
            self.columns[0][t],
            self.columns[1][t],
            self.columns[2][t],
            self.columns[3][t],
            self.columns[4][t],
        ]
    }
}

/// Linear interpolation of missing cells; edge gaps copy the nearest value.
fn interpolate_columns(raw: &RawFrame) -> Result<Frame> {
    let n = raw.dates.len();
    let mut columns: [Vec<f64>; 5] = Default::default();
    for col in Column::ALL {
        let src = &raw.columns[col.index()];
        let present: Vec<usize> = (0..n).filter(|&i| src[i].is_some()).collect();
        if present.is_empty() {
            return Err(Error::invalid(format!(
                "column {col} has no values to interpolate from"
            )));
        }
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            if let Some(v) = src[i] {
                out.push(v);
                continue;
            }
            let prev = present.iter().rev().find(|&&p| p < i).copied();
            let next = present.iter().find(|&&p| p > i).copied();
            let v = match (prev, next) {
                (Some(p), Some(q)) => {
                    let vp = src[p].unwrap();
                    let vq = src[q].unwrap();
                    vp + (vq - vp) * (i - p) as f64 / (q - p) as f64
                }
                (Some(p), None) => src[p].unwrap(),
                (None, Some(q)) => src[q].unwrap(),
                (None, None) => unreachable!("present is non-empty"),
            };
            out.push(v);
        }
        columns[col.index()] = out;
    }
    Ok(Frame {
        dates: raw.dates.clone(),
        columns,
    })
}

/// Converts a raw frame to a dense one, refusing any missing cell.
fn require_dense(raw: &RawFrame) -> Result<Frame> {
    let mut columns: [Vec<f64>; 5] = Default::default();
    for col in Column::ALL {
        let src = &raw.columns[col.index()];
        let mut out = Vec::with_capacity(src.len());
        for (i, v) in src.iter().enumerate() {
            match v {
                Some(v) => out.push(*v),
                None => {
                    return Err(Error::invalid(format!(
                        "missing {col} on {}; add `interpolate` to the recipe to fill gaps",
                        raw.dates[i]
                    )));
                }
            }
        }
        columns[col.index()] = out;
    }
    Ok(Frame {
        dates: raw.dates.clone(),
        columns,
    })
}

fn diff_once(f: &Frame) -> Frame {
    let n = f.len();
    let mut columns: [Vec<f64>; 5] = Default::default();
    for c in 0..5 {
        columns[c] = (1..n).map(|t| f.columns[c][t] - f.columns[c][t - 1]).collect();
    }
    Frame {
        dates: f.dates[1..].to_vec(),
        columns,
    }
}

/// `out[0] = seed; out[i+1] = out[i] + increments[i]`.
fn integrate(seed: f64, increments: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(increments.len() + 1);
    out.push(seed);
    for inc in increments {
        out.push(out[out.len() - 1] + inc);
    }
    out
}

/// A recipe step with its fitted state.
#[derive(Debug, Clone, PartialEq)]
enum FittedStep {
    Interpolate,
    Log,
    Difference {
        order: usize,
        /// First `order` values of this step's input stream, per column.
        seeds: [Vec<f64>; 5],
        /// Dates of those seed rows, so full inversion can restore them.
        seed_dates: Vec<NaiveDate>,
    },
    ZScore {
        mean: [f64; 5],
        std: [f64; 5],
    },
    Deseasonalize {
        period: usize,
        /// Per-phase additive seasonal indices, per column; each sums to 0.
        indices: [Vec<f64>; 5],
        /// First fitted date; phases are calendar-day offsets from it.
        anchor: NaiveDate,
    },
}

impl FittedStep {
    fn fit(spec: StepSpec, input: &Frame) -> Result<FittedStep> {
        match spec {
            StepSpec::Interpolate => Ok(FittedStep::Interpolate),
            StepSpec::Log => Ok(FittedStep::Log),
            StepSpec::Difference { order } => {
                if input.len() <= order {
                    return Err(Error::insufficient(format!(
                        "difference of order {order} needs more than {order} rows, got {}",
                        input.len()
                    )));
                }
                let mut seeds: [Vec<f64>; 5] = Default::default();
                for c in 0..5 {
                    seeds[c] = input.columns[c][..order].to_vec();
                }
                Ok(FittedStep::Difference {
                    order,
                    seeds,
                    seed_dates: input.dates[..order].to_vec(),
                })
            }
            StepSpec::ZScore => {
                if input.is_empty() {
                    return Err(Error::insufficient("cannot fit z-score on an empty frame"));
                }
                let mut mu = [0.0; 5];
                let mut sd = [0.0; 5];
                for col in Column::ALL {
                    let xs = input.column(col);
                    mu[col.index()] = mean(xs);
                    sd[col.index()] = population_std(xs);
                    if sd[col.index()] == 0.0 {
                        return Err(Error::domain(format!(
                            "degenerate scale: column {col} has zero standard deviation"
                        )));
                    }
                }
                Ok(FittedStep::ZScore { mean: mu, std: sd })
            }
            StepSpec::Deseasonalize { period } => {
                if input.len() < 2 * period {
                    return Err(Error::insufficient(format!(
                        "deseasonalize with period {period} needs at least {} rows, got {}",
                        2 * period,
                        input.len()
                    )));
                }
                let anchor = input.dates[0];
                let mut indices: [Vec<f64>; 5] = Default::default();
                for col in Column::ALL {
                    indices[col.index()] =
                        seasonal_indices(input.column(col), &input.dates, anchor, period)?;
                }
                Ok(FittedStep::Deseasonalize {
                    period,
                    indices,
                    anchor,
                })
            }
        }
    }

    fn apply(&self, input: &Frame) -> Result<Frame> {
        match self {
            FittedStep::Interpolate => Ok(input.clone()),
            FittedStep::Log => {
                let mut out = input.clone();
                for col in Column::ALL {
                    for (t, v) in out.columns[col.index()].iter_mut().enumerate() {
                        if *v <= 0.0 {
                            return Err(Error::domain(format!(
                                "log of non-positive value {v} in column {col} on {}",
                                input.dates[t]
                            )));
                        }
                        *v = v.ln();
                    }
                }
                Ok(out)
            }
            FittedStep::Difference { order, .. } => {
                if input.len() <= *order {
                    return Err(Error::insufficient(format!(
                        "difference of order {order} needs more than {order} rows, got {}",
                        input.len()
                    )));
                }
                let mut out = input.clone();
                for _ in 0..*order {
                    out = diff_once(&out);
                }
                Ok(out)
            }
            FittedStep::ZScore { mean, std } => {
                let mut out = input.clone();
                for c in 0..5 {
                    for v in out.columns[c].iter_mut() {
                        *v = (*v - mean[c]) / std[c];
                    }
                }
                Ok(out)
            }
            FittedStep::Deseasonalize {
                period,
                indices,
                anchor,
            } => {
                let mut out = input.clone();
                for c in 0..5 {
                    for (t, v) in out.columns[c].iter_mut().enumerate() {
                        *v -= indices[c][phase_of(input.dates[t], *anchor, *period)];
                    }
                }
                Ok(out)
            }
        }
    }

    /// Inverse transform of a whole frame (reverse of `apply`).
    fn invert_frame(&self, output: &Frame) -> Result<Frame> {
        match self {
            FittedStep::Interpolate => Ok(output.clone()),
            FittedStep::Log => {
                let mut inp = output.clone();
                for c in 0..5 {
                    for v in inp.columns[c].iter_mut() {
                        *v = v.exp();
                    }
                }
                Ok(inp)
            }
            FittedStep::Difference {
                order,
                seeds,
                seed_dates,
            } => {
                let mut columns: [Vec<f64>; 5] = Default::default();
                for c in 0..5 {
                    // Rebuild the seed prefix of every intermediate
                    // difference tower, then integrate back up the orders.
                    let mut tower_seeds: Vec<Vec<f64>> = vec![seeds[c].clone()];
                    for j in 1..*order {
                        let prev = &tower_seeds[j - 1];
                        tower_seeds.push(
                            (1..prev.len()).map(|i| prev[i] - prev[i - 1]).collect(),
                        );
                    }
                    let mut stream = output.columns[c].clone();
                    for j in (0..*order).rev() {
                        stream = integrate(tower_seeds[j][0], &stream);
                    }
                    columns[c] = stream;
                }
                let mut dates = seed_dates.clone();
                dates.extend_from_slice(&output.dates);
                Ok(Frame { dates, columns })
            }
            FittedStep::ZScore { mean, std } => {
                let mut inp = output.clone();
                for c in 0..5 {
                    for v in inp.columns[c].iter_mut() {
                        *v = *v * std[c] + mean[c];
                    }
                }
                Ok(inp)
            }
            FittedStep::Deseasonalize {
                period,
                indices,
                anchor,
            } => {
                let mut inp = output.clone();
                for c in 0..5 {
                    for (t, v) in inp.columns[c].iter_mut().enumerate() {
                        *v += indices[c][phase_of(output.dates[t], *anchor, *period)];
                    }
                }
                Ok(inp)
            }
        }
    }

    /// Inverts one next-step value of `col`, given this step's input stream
    /// over the context window.
    fn invert_next(
        &self,
        value: f64,
        col: Column,
        next_date: NaiveDate,
        input_state: &Frame,
    ) -> Result<f64> {
        match self {
            FittedStep::Interpolate => Ok(value),
            FittedStep::Log => Ok(value.exp()),
            FittedStep::ZScore { mean, std } => {
                Ok(value * std[col.index()] + mean[col.index()])
            }
            FittedStep::Deseasonalize {
                period,
                indices,
                anchor,
            } => Ok(value + indices[col.index()][phase_of(next_date, *anchor, *period)]),
            FittedStep::Difference { order, .. } => {
                let u = input_state.column(col);
                if u.len() < *order {
                    return Err(Error::insufficient(format!(
                        "inverting a difference of order {order} needs a context of at \
                         least {order} rows, got {}",
                        u.len()
                    )));
                }
                // The next value of each difference tower is the next value
                // one order up plus the tower's own last value.
                let mut tower = u.to_vec();
                let mut lasts = vec![*tower.last().unwrap()];
                for _ in 1..*order {
                    tower = (1..tower.len()).map(|i| tower[i] - tower[i - 1]).collect();
                    lasts.push(*tower.last().unwrap());
                }
                let mut acc = value;
                for last in lasts.iter().rev() {
                    acc += last;
                }
                Ok(acc)
            }
        }
    }
}

fn phase_of(date: NaiveDate, anchor: NaiveDate, period: usize) -> usize {
    (date - anchor).num_days().rem_euclid(period as i64) as usize
}

/// Classical additive seasonal indices around a centred moving-average
/// trend. Even periods use half-weights at the window ends. The returned
/// indices are normalised to sum to zero.
fn seasonal_indices(
    xs: &[f64],
    dates: &[NaiveDate],
    anchor: NaiveDate,
    period: usize,
) -> Result<Vec<f64>> {
    let n = xs.len();
    let half = period / 2;
    let mut sums = vec![0.0; period];
    let mut counts = vec![0usize; period];
    for t in half..n - half {
        let trend = if period % 2 == 0 {
            let mut acc = 0.5 * xs[t - half] + 0.5 * xs[t + half];
            for j in (t - half + 1)..(t + half) {
                acc += xs[j];
            }
            acc / period as f64
        } else {
            let mut acc = 0.0;
            for j in (t - half)..=(t + half) {
                acc += xs[j];
            }
            acc / period as f64
        };
        let phase = phase_of(dates[t], anchor, period);
        sums[phase] += xs[t] - trend;
        counts[phase] += 1;
    }
    let mut raw = Vec::with_capacity(period);
    for (phase, (&s, &c)) in sums.iter().zip(&counts).enumerate() {
        if c == 0 {
            return Err(Error::insufficient(format!(
                "seasonal phase {phase} of {period} has no detrended samples"
            )));
        }
        raw.push(s / c as f64);
    }
    let grand = mean(&raw);
    Ok(raw.iter().map(|v| v - grand).collect())
}

/// A recipe fitted to a reference frame, ready to transform and invert.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedPipeline {
    recipe: Recipe,
    steps: Vec<FittedStep>,
}

/// Fits every step of `recipe` on `frame`, feeding each step the output of
/// the previous one.
pub fn fit(recipe: &Recipe, frame: &RawFrame) -> Result<FittedPipeline> {
    recipe.validate()?;
    let mut current = if recipe.has_interpolate() {
        interpolate_columns(frame)?
    } else {
        require_dense(frame)?
    };
    let mut steps = Vec::with_capacity(recipe.steps.len());
    for spec in &recipe.steps {
        let fitted = FittedStep::fit(*spec, &current)?;
        current = fitted.apply(&current)?;
        steps.push(fitted);
    }
    Ok(FittedPipeline {
        recipe: recipe.clone(),
        steps,
    })
}

/// Fits and immediately transforms the same frame.
pub fn fit_transform(recipe: &Recipe, frame: &RawFrame) -> Result<(FittedPipeline, Frame)> {
    let pipeline = fit(recipe, frame)?;
    let transformed = pipeline.apply(frame)?;
    Ok((pipeline, transformed))
}

impl FittedPipeline {
    pub fn recipe(&self) -> &Recipe {
        &self.recipe
    }

    /// How many rows the recipe removes from the front of a frame
    /// (the sum of all differencing orders).
    pub fn row_shrinkage(&self) -> usize {
        self.steps
            .iter()
            .map(|s| match s {
                FittedStep::Difference { order, .. } => *order,
                _ => 0,
            })
            .sum()
    }

    /// Transforms a frame with the fitted parameters.
    pub fn apply(&self, frame: &RawFrame) -> Result<Frame> {
        let mut current = if self.recipe.has_interpolate() {
            interpolate_columns(frame)?
        } else {
            require_dense(frame)?
        };
        for step in &self.steps {
            current = step.apply(&current)?;
        }
        Ok(current)
    }

    /// Reconstructs the original frame from a fully transformed one, using
    /// the stored differencing seeds. Interpolated cells stay interpolated
    /// (that information is genuinely gone).
    pub fn invert(&self, transformed: &Frame) -> Result<Frame> {
        let mut current = transformed.clone();
        for step in self.steps.iter().rev() {
            current = step.invert_frame(&current)?;
        }
        Ok(current)
    }

    /// Maps transformed-space values for the row immediately following
    /// `context` back to raw space.
    ///
    /// `cols` and `values` pair up; the returned vector is in the same
    /// order. Each column inverts independently, so a partial row (say the
    /// four prices without volume) is fine. `next_date` is the calendar
    /// date of the predicted row (needed by seasonal steps).
    pub fn invert_next_row(
        &self,
        context: &RawFrame,
        next_date: NaiveDate,
        cols: &[Column],
        values: &[f64],
    ) -> Result<Vec<f64>> {
        if cols.len() != values.len() {
            return Err(Error::invalid(format!(
                "invert_next_row got {} columns but {} values",
                cols.len(),
                values.len()
            )));
        }
        // Forward pass over the context, keeping every intermediate state:
        // states[k] is the input to step k.
        let mut states = Vec::with_capacity(self.steps.len() + 1);
        let dense = if self.recipe.has_interpolate() {
            interpolate_columns(context)?
        } else {
            require_dense(context)?
        };
        states.push(dense);
        for step in &self.steps {
            let next = step.apply(states.last().unwrap())?;
            states.push(next);
        }
        let mut out = Vec::with_capacity(values.len());
        for (&col, &v) in cols.iter().zip(values) {
            let mut acc = v;
            for (k, step) in self.steps.iter().enumerate().rev() {
                acc = step.invert_next(acc, col, next_date, &states[k])?;
            }
            out.push(acc);
        }
        Ok(out)
    }

    /// Serializes the fitted pipeline to a line-oriented `key=value` text
    /// document. Floats carry 17 significant digits so parsing reproduces
    /// them bit for bit.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("format=fxgan-pipeline\n");
        out.push_str("version=1\n");
        out.push_str(&format!("recipe={}\n", self.recipe));
        for (k, step) in self.steps.iter().enumerate() {
            match step {
                FittedStep::Interpolate | FittedStep::Log => {}
                FittedStep::Difference {
                    order,
                    seeds,
                    seed_dates,
                } => {
                    out.push_str(&format!("step{k}.order={order}\n"));
                    let dates: Vec<String> = seed_dates
                        .iter()
                        .map(|d| d.format("%Y-%m-%d").to_string())
                        .collect();
                    out.push_str(&format!("step{k}.seed_dates={}\n", dates.join(",")));
                    for col in Column::ALL {
                        out.push_str(&format!(
                            "step{k}.seeds.{}={}\n",
                            col.name(),
                            join_floats(&seeds[col.index()])
                        ));
                    }
                }
                FittedStep::ZScore { mean, std } => {
                    for col in Column::ALL {
                        out.push_str(&format!(
                            "step{k}.mean.{}={}\n",
                            col.name(),
                            fmt_float(mean[col.index()])
                        ));
                        out.push_str(&format!(
                            "step{k}.std.{}={}\n",
                            col.name(),
                            fmt_float(std[col.index()])
                        ));
                    }
                }
                FittedStep::Deseasonalize {
                    period,
                    indices,
                    anchor,
                } => {
                    out.push_str(&format!("step{k}.period={period}\n"));
                    out.push_str(&format!(
                        "step{k}.anchor={}\n",
                        anchor.format("%Y-%m-%d")
                    ));
                    for col in Column::ALL {
                        out.push_str(&format!(
                            "step{k}.indices.{}={}\n",
                            col.name(),
                            join_floats(&indices[col.index()])
                        ));
                    }
                }
            }
        }
        out
    }

    /// Parses the text document produced by [`FittedPipeline::to_text`].
    pub fn from_text(text: &str) -> Result<FittedPipeline> {
        let mut doc = KvDoc::parse(text, "pipeline")?;
        doc.expect("format", "fxgan-pipeline")?;
        doc.expect("version", "1")?;
        let recipe = Recipe::parse(&doc.take("recipe")?)?;
        let mut steps = Vec::with_capacity(recipe.steps.len());
        for (k, spec) in recipe.steps.iter().enumerate() {
            let step = match spec {
                StepSpec::Interpolate => FittedStep::Interpolate,
                StepSpec::Log => FittedStep::Log,
                StepSpec::Difference { order } => {
                    let stored: usize = doc.take_parsed(&format!("step{k}.order"))?;
                    if stored != *order {
                        return Err(doc.error(format!(
                            "step{k}.order={stored} disagrees with recipe order {order}"
                        )));
                    }
                    let seed_dates = doc
                        .take(&format!("step{k}.seed_dates"))?
                        .split(',')
                        .map(|s| {
                            NaiveDate::parse_from_str(s, "%Y-%m-%d")
                                .map_err(|_| doc.error(format!("bad seed date `{s}`")))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let mut seeds: [Vec<f64>; 5] = Default::default();
                    for col in Column::ALL {
                        seeds[col.index()] =
                            doc.take_floats(&format!("step{k}.seeds.{}", col.name()))?;
                        if seeds[col.index()].len() != *order {
                            return Err(doc.error(format!(
                                "step{k}.seeds.{} has {} values, expected {order}",
                                col.name(),
                                seeds[col.index()].len()
                            )));
                        }
                    }
                    if seed_dates.len() != *order {
                        return Err(doc.error(format!(
                            "step{k}.seed_dates has {} entries, expected {order}",
                            seed_dates.len()
                        )));
                    }
                    FittedStep::Difference {
                        order: *order,
                        seeds,
                        seed_dates,
                    }
                }
                StepSpec::ZScore => {
                    let mut mu = [0.0; 5];
                    let mut sd = [0.0; 5];
                    for col in Column::ALL {
                        mu[col.index()] =
                            doc.take_parsed(&format!("step{k}.mean.{}", col.name()))?;
                        sd[col.index()] =
                            doc.take_parsed(&format!("step{k}.std.{}", col.name()))?;
                    }
                    FittedStep::ZScore { mean: mu, std: sd }
                }
                StepSpec::Deseasonalize { period } => {
                    let stored: usize = doc.take_parsed(&format!("step{k}.period"))?;
                    if stored != *period {
                        return Err(doc.error(format!(
                            "step{k}.period={stored} disagrees with recipe period {period}"
                        )));
                    }
                    let anchor_text = doc.take(&format!("step{k}.anchor"))?;
                    let anchor = NaiveDate::parse_from_str(&anchor_text, "%Y-%m-%d")
                        .map_err(|_| doc.error(format!("bad anchor date `{anchor_text}`")))?;
                    let mut indices: [Vec<f64>; 5] = Default::default();
                    for col in Column::ALL {
                        indices[col.index()] =
                            doc.take_floats(&format!("step{k}.indices.{}", col.name()))?;
                        if indices[col.index()].len() != *period {
                            return Err(doc.error(format!(
                                "step{k}.indices.{} has {} values, expected {period}",
                                col.name(),
                                indices[col.index()].len()
                            )));
                        }
                    }
                    FittedStep::Deseasonalize {
                        period: *period,
                        indices,
                        anchor,
                    }
                }
            };
            steps.push(step);
        }
        doc.finish()?;
        Ok(FittedPipeline { recipe, steps })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<FittedPipeline> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        FittedPipeline::from_text(&text)
    }
}

/// Formats a float with 17 significant digits (1 before the point, 16
/// after, exponent notation), which is always enough to round-trip f64.
pub(crate) fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn join_floats(vs: &[f64]) -> String {
    let parts: Vec<String> = vs.iter().map(|v| fmt_float(*v)).collect();
    parts.join(",")
}

/// A tiny strict `key=value` document reader shared by the text formats.
pub(crate) struct KvDoc {
    name: String,
    entries: Vec<(String, String, bool)>,
}

impl KvDoc {
    pub(crate) fn parse(text: &str, name: &str) -> Result<KvDoc> {
        let mut entries = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::parse(name, idx + 1, format!("expected key=value, found `{line}`"))
            })?;
            entries.push((key.to_string(), value.to_string(), false));
        }
        Ok(KvDoc {
            name: name.to_string(),
            entries,
        })
    }

    pub(crate) fn error(&self, message: impl Into<String>) -> Error {
        Error::parse(&self.name, 0, message)
    }

    /// Takes a required key, marking it consumed.
    pub(crate) fn take(&mut self, key: &str) -> Result<String> {
        for entry in self.entries.iter_mut() {
            if entry.0 == key && !entry.2 {
                entry.2 = true;
                return Ok(entry.1.clone());
            }
        }
        Err(Error::parse(
            &self.name,
            0,
            format!("missing required key `{key}`"),
        ))
    }

    pub(crate) fn take_parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let raw = self.take(key)?;
        raw.parse().map_err(|_| {
            Error::parse(&self.name, 0, format!("cannot parse `{key}={raw}`"))
        })
    }

    pub(crate) fn take_floats(&mut self, key: &str) -> Result<Vec<f64>> {
        let raw = self.take(key)?;
        raw.split(',')
            .map(|s| {
                s.parse::<f64>().map_err(|_| {
                    Error::parse(&self.name, 0, format!("bad float `{s}` in `{key}`"))
                })
            })
            .collect()
    }

    pub(crate) fn expect(&mut self, key: &str, want: &str) -> Result<()> {
        let got = self.take(key)?;
        if got != want {
            return Err(Error::parse(
                &self.name,
                0,
                format!("`{key}` is `{got}`, expected `{want}`"),
            ));
        }
        Ok(())
    }

    /// Fails if any key was never consumed — catches typos and stale files.
    pub(crate) fn finish(self) -> Result<()> {
        for (key, _, used) in &self.entries {
            if !used {
                return Err(Error::parse(
                    &self.name,
                    0,
                    format!("unknown key `{key}`"),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::{generate_synthetic, parse_csv_text, SyntheticConfig};

    fn week1_frame() -> RawFrame {
        parse_csv_text(
            include_str!("../fixtures/usdjpy_daily_week1.csv"),
            "usdjpy_daily_week1.csv",
        )
        .unwrap()
        .to_frame()
    }

    fn single_value_frame(values: &[f64]) -> RawFrame {
        let start = NaiveDate::from_ymd_opt(2023, 1, 1).unwrap();
        let dates: Vec<NaiveDate> = (0..values.len())
            .map(|i| start + chrono::Days::new(i as u64))
            .collect();
        let col: Vec<Option<f64>> = values.iter().map(|v| Some(*v)).collect();
        RawFrame {
            dates,
            columns: [col.clone(), col.clone(), col.clone(), col.clone(), col],
        }
    }

    #[test]
    fn zscore_matches_hand_statistics() {
        let recipe = Recipe {
            steps: vec![StepSpec::ZScore],
        };
        let (_, out) = fit_transform(&recipe, &week1_frame()).unwrap();
        let expect = [
            -1.0263157894736668,
            -0.7631578947368397,
            -0.6315789473684075,
            1.0789473684210622,
            1.342105263157908,
        ];
        for (a, e) in out.column(Column::Close).iter().zip(expect) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
    }

    #[test]
    fn zscore_refuses_constant_columns() {
        let recipe = Recipe {
            steps: vec![StepSpec::ZScore],
        };
        let frame = single_value_frame(&[5.0, 5.0, 5.0]);
        let err = fit(&recipe, &frame).unwrap_err();
        assert!(matches!(err, Error::Domain { .. }), "{err}");
    }

    #[test]
    fn log_transform_and_domain_guard() {
        let recipe = Recipe {
            steps: vec![StepSpec::Log],
        };
        let (_, out) = fit_transform(&recipe, &week1_frame()).unwrap();
        assert!((out.column(Column::Volume)[0] - 6.522092798170152).abs() < 1e-15);

        let frame = single_value_frame(&[1.0, 0.0, 2.0]);
        assert!(matches!(
            fit(&recipe, &frame).unwrap_err(),
            Error::Domain { .. }
        ));
    }

    #[test]
    fn second_order_difference_worked_example() {
        // [1, 2, 4, 8] differenced twice is [1, 2]; the seeds are the first
        // two original values, and inversion restores the input exactly.
        let recipe = Recipe {
            steps: vec![StepSpec::Difference { order: 2 }],
        };
        let frame = single_value_frame(&[1.0, 2.0, 4.0, 8.0]);
        let (pipeline, out) = fit_transform(&recipe, &frame).unwrap();
        assert_eq!(out.column(Column::Close), &[1.0, 2.0]);
        assert_eq!(out.dates.len(), 2);
        assert_eq!(pipeline.row_shrinkage(), 2);

        let back = pipeline.invert(&out).unwrap();
        assert_eq!(back.column(Column::Close), &[1.0, 2.0, 4.0, 8.0]);
        assert_eq!(back.dates, frame.dates);

        // And the next-value inversion continues the pattern: the next
        // second difference of 1,2,4,8,16 is 4.
        let next = pipeline
            .invert_next_row(
                &frame,
                frame.dates[3] + chrono::Days::new(1),
                &[Column::Close],
                &[4.0],
            )
            .unwrap();
        assert_eq!(next, vec![16.0]);
    }

    #[test]
    fn difference_needs_enough_rows() {
        let recipe = Recipe {
            steps: vec![StepSpec::Difference { order: 3 }],
        };
        let frame = single_value_frame(&[1.0, 2.0, 3.0]);
        assert!(matches!(
            fit(&recipe, &frame).unwrap_err(),
            Error::InsufficientData { .. }
        ));
    }

    #[test]
    fn default_daily_recipe_statistics() {
        // On the reference week's closes, log-returns have mean
        // 0.00406146116639472 and population std 0.0044412443184446565;
        // the z-scored transformed column is frozen below.
        let recipe = Recipe {
            steps: vec![StepSpec::Log, StepSpec::Difference { order: 1 }, StepSpec::ZScore],
        };
        let (pipeline, out) = fit_transform(&recipe, &week1_frame()).unwrap();
        assert_eq!(out.len(), 4);
        let expect = [
            -0.5051014279985839,
            -0.710073112419685,
            1.7261453019205064,
            -0.5109707615022375,
        ];
        for (a, e) in out.column(Column::Close).iter().zip(expect) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
        // Round trip back to prices.
        let back = pipeline.invert(&out).unwrap();
        for (a, e) in back
            .column(Column::Close)
            .iter()
            .zip([109.90, 110.10, 110.20, 111.50, 111.70])
        {
            assert!((a - e).abs() < 1e-9, "{a} vs {e}");
        }
    }

    #[test]
    fn next_row_inversion_recovers_price_space() {
        // A transformed prediction of -0.5116926160156768 for the close
        // column, in log-diff-zscore space fitted on the reference week,
        // inverts to 111.90 for the following day.
        let recipe = Recipe {
            steps: vec![StepSpec::Log, StepSpec::Difference { order: 1 }, StepSpec::ZScore],
        };
        let frame = week1_frame();
        let pipeline = fit(&recipe, &frame).unwrap();
        let next = pipeline
            .invert_next_row(
                &frame,
                NaiveDate::from_ymd_opt(2023, 4, 6).unwrap(),
                &[Column::Close],
                &[-0.5116926160156768],
            )
            .unwrap();
        assert!((next[0] - 111.90).abs() < 1e-9, "{}", next[0]);
    }

    #[test]
    fn interpolation_fills_interior_and_edges() {
        let start = NaiveDate::from_ymd_opt(2023, 1, 1).unwrap();
        let dates: Vec<NaiveDate> = (0..6).map(|i| start + chrono::Days::new(i)).collect();
        let col = vec![None, Some(1.0), None, None, Some(4.0), None];
        let frame = RawFrame {
            dates,
            columns: [col.clone(), col.clone(), col.clone(), col.clone(), col],
        };
        let recipe = Recipe {
            steps: vec![StepSpec::Interpolate],
        };
        let (_, out) = fit_transform(&recipe, &frame).unwrap();
        assert_eq!(out.column(Column::Close), &[1.0, 1.0, 2.0, 3.0, 4.0, 4.0]);
    }

    #[test]
    fn interpolation_requires_at_least_one_value() {
        let frame = RawFrame {
            dates: vec![NaiveDate::from_ymd_opt(2023, 1, 1).unwrap()],
            columns: [
                vec![None],
                vec![Some(1.0)],
                vec![Some(1.0)],
                vec![Some(1.0)],
                vec![Some(1.0)],
            ],
        };
        let recipe = Recipe {
            steps: vec![StepSpec::Interpolate],
        };
        assert!(matches!(
            fit(&recipe, &frame).unwrap_err(),
            Error::InvalidData { .. }
        ));
    }

    #[test]
    fn missing_data_without_interpolation_is_rejected() {
        let start = NaiveDate::from_ymd_opt(2023, 1, 1).unwrap();
        let dates: Vec<NaiveDate> = (0..3).map(|i| start + chrono::Days::new(i)).collect();
        let frame = RawFrame {
            dates,
            columns: [
                vec![Some(1.0), None, Some(3.0)],
                vec![Some(1.0); 3],
                vec![Some(1.0); 3],
                vec![Some(1.0); 3],
                vec![Some(1.0); 3],
            ],
        };
        let recipe = Recipe {
            steps: vec![StepSpec::Log],
        };
        let err = fit(&recipe, &frame).unwrap_err();
        assert!(matches!(err, Error::InvalidData { .. }), "{err}");
        assert!(err.to_string().contains("volume_musd"), "{err}");
    }

    #[test]
    fn seasonal_indices_recover_a_planted_pattern() {
        // Linear trend plus an exact period-4 seasonal pattern: the centred
        // moving average removes the trend exactly, so the fitted indices
        // equal the planted pattern and they sum to zero.
        let s = [1.0, -2.0, 0.5, 0.5];
        let values: Vec<f64> = (0..16).map(|t| 0.5 * t as f64 + s[t % 4]).collect();
        let frame = single_value_frame(&values);
        let recipe = Recipe {
            steps: vec![StepSpec::Deseasonalize { period: 4 }],
        };
        let (pipeline, out) = fit_transform(&recipe, &frame).unwrap();
        match &pipeline.steps[0] {
            FittedStep::Deseasonalize { indices, .. } => {
                let idx = &indices[Column::Close.index()];
                for (a, e) in idx.iter().zip(s) {
                    assert!((a - e).abs() < 1e-9, "{a} vs {e}");
                }
                assert!(idx.iter().sum::<f64>().abs() < 1e-9);
            }
            other => panic!("unexpected step {other:?}"),
        }
        // What remains is the pure trend.
        for (t, v) in out.column(Column::Close).iter().enumerate() {
            assert!((v - 0.5 * t as f64).abs() < 1e-9, "t={t} v={v}");
        }
        // Round trip.
        let back = pipeline.invert(&out).unwrap();
        for (a, e) in back.column(Column::Close).iter().zip(&values) {
            assert!((a - e).abs() < 1e-9);
        }
    }

    #[test]
    fn deseasonalize_needs_two_full_periods() {
        let values: Vec<f64> = (0..7).map(|t| t as f64).collect();
        let frame = single_value_frame(&values);
        let recipe = Recipe {
            steps: vec![StepSpec::Deseasonalize { period: 4 }],
        };
        assert!(matches!(
            fit(&recipe, &frame).unwrap_err(),
            Error::InsufficientData { .. }
        ));
    }

    #[test]
    fn recipe_parsing_round_trips_and_rejects_junk() {
        let recipe = Recipe::parse("interpolate,log,difference:1,zscore").unwrap();
        assert_eq!(recipe, Recipe::default_daily());
        assert_eq!(recipe.to_string(), "interpolate,log,difference:1,zscore");
        let again = Recipe::parse(&recipe.to_string()).unwrap();
        assert_eq!(again, recipe);

        assert!(matches!(
            Recipe::parse("log,interpolate").unwrap_err(),
            Error::Config { .. }
        ));
        assert!(matches!(
            Recipe::parse("squarify").unwrap_err(),
            Error::Config { .. }
        ));
        assert!(matches!(
            Recipe::parse("difference:0").unwrap_err(),
            Error::Config { .. }
        ));
        assert!(matches!(
            Recipe::parse("deseasonalize:1").unwrap_err(),
            Error::Config { .. }
        ));
    }

    #[test]
    fn text_serialization_round_trips_exactly() {
        let recipe = Recipe::default_daily();
        let frame = week1_frame();
        let pipeline = fit(&recipe, &frame).unwrap();
        let text = pipeline.to_text();
        let parsed = FittedPipeline::from_text(&text).unwrap();
        assert_eq!(parsed, pipeline);
        // Serialization is stable: parse → print is byte-identical.
        assert_eq!(parsed.to_text(), text);
    }

    #[test]
    fn text_parser_rejects_unknown_keys_and_bad_versions() {
        let pipeline = fit(&Recipe::default_daily(), &week1_frame()).unwrap();
        let mut text = pipeline.to_text();
        text.push_str("mystery=1\n");
        assert!(FittedPipeline::from_text(&text).is_err());

        let bumped = pipeline.to_text().replace("version=1", "version=2");
        assert!(FittedPipeline::from_text(&bumped).is_err());
    }

    proptest::proptest! {
        #[test]
        fn apply_then_invert_recovers_synthetic_series(seed in 0u64..200) {
            let cfg = SyntheticConfig {
                days: 40,
                seed,
                missing_volume_rate: 0.0,
                ..SyntheticConfig::default()
            };
            let frame = generate_synthetic(&cfg).unwrap().to_frame();
            let (pipeline, out) = fit_transform(&Recipe::default_daily(), &frame).unwrap();
            let back = pipeline.invert(&out).unwrap();
            for col in Column::ALL {
                for (i, (a, b)) in back.column(col).iter()
                    .zip(frame.columns[col.index()].iter())
                    .enumerate()
                {
                    let b = b.unwrap();
                    proptest::prop_assert!(
                        (a - b).abs() < 1e-8 * b.abs().max(1.0),
                        "col {} row {}: {} vs {}", col, i, a, b
                    );
                }
            }
        }
    }
}
