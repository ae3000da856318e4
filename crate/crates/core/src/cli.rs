//! The `fxgan` command-line front end.
//!
//! Eight subcommands wire the library end to end: `ingest`, `preprocess`,
//! `train`, `forecast`, `evaluate`, `backtest`, `report`, and `gradcheck`.
//! Every run resolves one effective configuration from three layers —
//! built-in defaults, then an optional TOML file (`--config`), then flags —
//! echoes it to `<out>/config_effective.toml` for provenance, and records
//! the start time in `<out>/run_meta.txt`, the only output file that is not
//! byte-identical across reruns. All randomness flows from the single
//! `run.seed`, so repeating a command with the same inputs reproduces every
//! data artifact exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::arima; // used by `report` when an ARIMA baseline file is present
use crate::backtest::{self, BacktestConfig};
use crate::error::{Error, Result};
use crate::evaluation;
use crate::forecast::{self, ZPolicy};
use crate::gan::{network_checks, ConvSpec, DiscriminatorConfig, GanModel, GeneratorConfig};
use crate::market_data::{self, Column};
use crate::preprocess::{self, Recipe};
use crate::training::{self, AttenuationMode, GeneratorLossMode, TrainConfig};

/// Relative error above which a gradient check counts as failed.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

// ---------------------------------------------------------------------------
// Command line surface
// ---------------------------------------------------------------------------

#[derive(Parser, Debug)]
#[command(
    name = "fxgan",
    version,
    about = "Deterministic daily-FX forecasting and backtesting toolkit"
)]
pub struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Master seed for every random stream (initialisation, training,
    /// forecast noise).
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,

    /// Directory all artifacts are written into.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Promote data warnings (e.g. change-rate mismatches) to errors.
    #[arg(long, global = true)]
    pub strict: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Validate an OHLCV CSV, write a canonical copy, audit change rates.
    Ingest {
        /// OHLCV CSV to ingest (overrides `[data] series`).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Published change-rate CSV to audit against
        /// (overrides `[data] published_rates`).
        #[arg(long)]
        rates: Option<PathBuf>,
    },
    /// Fit the preprocessing recipe; write the transformed frame and the
    /// fitted parameters.
    Preprocess {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Comma-separated steps, e.g. "interpolate,log,difference:1".
        #[arg(long)]
        recipe: Option<String>,
    },
    /// Adversarially train the generator/discriminator pair.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        recipe: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long = "batch-size")]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Days of history the generator conditions on.
        #[arg(long)]
        window: Option<usize>,
    },
    /// Roll the trained generator forward from the end of the data series.
    Forecast {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Preprocessing recipe; must match the one the model was trained
        /// under.
        #[arg(long)]
        recipe: Option<String>,
        /// Checkpoint to load (default `<out>/checkpoint.bin`).
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        horizon: Option<usize>,
        /// Noise policy: zero | fixed-seed[:SEED] | sample-mean:N[:SEED].
        #[arg(long = "z-policy")]
        z_policy: Option<String>,
    },
    /// Score a forecast against realized bars (per-field RMSE).
    Evaluate {
        /// Forecast CSV (default `<out>/forecast.csv`).
        #[arg(long)]
        forecast: Option<PathBuf>,
        /// Realized OHLCV CSV (overrides `[data] actual`).
        #[arg(long)]
        actual: Option<PathBuf>,
    },
    /// Run the daily trading rule over a forecast and ledger the P&L.
    Backtest {
        #[arg(long)]
        forecast: Option<PathBuf>,
        #[arg(long)]
        actual: Option<PathBuf>,
        /// Position size per trade, millions of USD.
        #[arg(long)]
        notional: Option<f64>,
        /// Decision dead band around the reference close.
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Compose the accuracy table and the ROI ledger into one report.
    Report {
        #[arg(long)]
        forecast: Option<PathBuf>,
        #[arg(long)]
        actual: Option<PathBuf>,
        #[arg(long)]
        notional: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
        /// Optional ARIMA model file to forecast and score as a baseline.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Verify analytic gradients against central finite differences.
    Gradcheck {
        /// Number of consecutive seeds to sweep, starting at the master seed.
        #[arg(long, default_value_t = 10)]
        seeds: usize,
    },
}

// ---------------------------------------------------------------------------
// Configuration: file schema, defaults, and the resolved effective config
// ---------------------------------------------------------------------------

/// Schema version this build reads and writes.
pub const SCHEMA_VERSION: u32 = 1;

macro_rules! section {
    ($name:ident { $($(#[$meta:meta])* $field:ident : $ty:ty),+ $(,)? }) => {
        #[derive(Debug, Clone, Default, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct $name {
            $($(#[$meta])* $field: Option<$ty>,)+
        }
    };
}

section!(FileData {
    series: PathBuf,
    published_rates: PathBuf,
    actual: PathBuf,
});
section!(FilePreprocess { recipe: String });
section!(FileModel {
    window: usize,
    hidden: usize,
    noise_dim: usize,
    conv_layers: Vec<[usize; 3]>,
    dropout: f64,
});
section!(FileTrain {
    epochs: usize,
    batch_size: usize,
    lr: f64,
    attenuation: f64,
    attenuation_mode: String,
    d_steps: usize,
    gen_loss: String,
});
section!(FileForecast {
    horizon: usize,
    z_policy: String,
});
section!(FileBacktest {
    notional_musd: f64,
    epsilon: f64,
    fee_musd: f64,
});
section!(FileRun {
    seed: u64,
    out: PathBuf,
    strict: bool,
});

/// The raw, everything-optional shape of a config file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    schema_version: Option<u32>,
    #[serde(default)]
    data: FileData,
    #[serde(default)]
    preprocess: FilePreprocess,
    #[serde(default)]
    model: FileModel,
    #[serde(default)]
    train: FileTrain,
    #[serde(default)]
    forecast: FileForecast,
    #[serde(default)]
    backtest: FileBacktest,
    #[serde(default)]
    run: FileRun,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub series: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub published_rates: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub actual: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PreprocessSection {
    pub recipe: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSection {
    pub window: usize,
    pub hidden: usize,
    pub noise_dim: usize,
    pub conv_layers: Vec<[usize; 3]>,
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub attenuation: f64,
    pub attenuation_mode: String,
    pub d_steps: usize,
    pub gen_loss: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForecastSection {
    pub horizon: usize,
    pub z_policy: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BacktestSection {
    pub notional_musd: f64,
    pub epsilon: f64,
    pub fee_musd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSection {
    pub seed: u64,
    pub out: PathBuf,
    pub strict: bool,
}

/// The fully resolved configuration a run executes under. Serializes to
/// the `config_effective.toml` provenance file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub schema_version: u32,
    pub data: DataSection,
    pub preprocess: PreprocessSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub forecast: ForecastSection,
    pub backtest: BacktestSection,
    pub run: RunSection,
}

impl Default for RunConfig {
    /// Library defaults. Model and training values mirror the defaults of
    /// the corresponding library types so the two cannot drift apart.
    fn default() -> Self {
        let gen = GeneratorConfig::default();
        let dis = DiscriminatorConfig::default();
        let train = TrainConfig::default();
        let bt = BacktestConfig::default();
        RunConfig {
            schema_version: SCHEMA_VERSION,
            data: DataSection {
                series: None,
                published_rates: None,
                actual: None,
            },
            preprocess: PreprocessSection {
                recipe: Recipe::default_daily().to_string(),
            },
            model: ModelSection {
                window: gen.condition_window,
                hidden: gen.hidden,
                noise_dim: gen.noise_dim,
                conv_layers: dis
                    .conv_layers
                    .iter()
                    .map(|c| [c.out_channels, c.kernel, c.stride])
                    .collect(),
                dropout: dis.dropout,
            },
            train: TrainSection {
                epochs: train.epochs,
                batch_size: train.batch_size,
                lr: train.lr,
                attenuation: train.attenuation,
                attenuation_mode: match train.attenuation_mode {
                    AttenuationMode::AdamBeta1 => "adam-beta1".into(),
                    AttenuationMode::LrDecay => "lr-decay".into(),
                },
                d_steps: train.d_steps,
                gen_loss: match train.gen_loss {
                    GeneratorLossMode::Saturating => "saturating".into(),
                    GeneratorLossMode::NonSaturating => "non-saturating".into(),
                },
            },
            forecast: ForecastSection {
                horizon: 5,
                z_policy: "zero".into(),
            },
            backtest: BacktestSection {
                notional_musd: bt.notional_musd,
                epsilon: bt.epsilon,
                fee_musd: bt.fee_musd,
            },
            run: RunSection {
                seed: 42,
                out: PathBuf::from("out"),
                strict: false,
            },
        }
    }
}

macro_rules! merge {
    ($dst:expr, $src:expr; $($field:ident),+ $(,)?) => {
        $(if let Some(v) = $src.$field { $dst.$field = v; })+
    };
}

impl RunConfig {
    fn apply_file(&mut self, file: FileConfig) -> Result<()> {
        match file.schema_version {
            Some(SCHEMA_VERSION) => {}
            Some(v) => {
                return Err(Error::config(format!(
                    "config schema_version {v} is not supported; this build \
                     reads version {SCHEMA_VERSION}"
                )))
            }
            None => {
                return Err(Error::config(
                    "config file must declare `schema_version = 1` at top level",
                ))
            }
        }
        let d = file.data;
        if d.series.is_some() {
            self.data.series = d.series;
        }
        if d.published_rates.is_some() {
            self.data.published_rates = d.published_rates;
        }
        if d.actual.is_some() {
            self.data.actual = d.actual;
        }
        merge!(self.preprocess, file.preprocess; recipe);
        merge!(self.model, file.model; window, hidden, noise_dim, conv_layers, dropout);
        merge!(self.train, file.train;
               epochs, batch_size, lr, attenuation, attenuation_mode, d_steps, gen_loss);
        merge!(self.forecast, file.forecast; horizon, z_policy);
        merge!(self.backtest, file.backtest; notional_musd, epsilon, fee_musd);
        merge!(self.run, file.run; seed, out, strict);
        Ok(())
    }

    fn apply_cli(&mut self, cli: &Cli) {
        if let Some(seed) = cli.seed {
            self.run.seed = seed;
        }
        if let Some(out) = &cli.out {
            self.run.out = out.clone();
        }
        if cli.strict {
            self.run.strict = true;
        }
        match &cli.command {
            Command::Ingest { data, rates } => {
                if data.is_some() {
                    self.data.series = data.clone();
                }
                if rates.is_some() {
                    self.data.published_rates = rates.clone();
                }
            }
            Command::Preprocess { data, recipe } => {
                if data.is_some() {
                    self.data.series = data.clone();
                }
                if let Some(r) = recipe {
                    self.preprocess.recipe = r.clone();
                }
            }
            Command::Train {
                data,
                recipe,
                epochs,
                batch_size,
                lr,
                window,
            } => {
                if data.is_some() {
                    self.data.series = data.clone();
                }
                if let Some(r) = recipe {
                    self.preprocess.recipe = r.clone();
                }
                if let Some(v) = epochs {
                    self.train.epochs = *v;
                }
                if let Some(v) = batch_size {
                    self.train.batch_size = *v;
                }
                if let Some(v) = lr {
                    self.train.lr = *v;
                }
                if let Some(v) = window {
                    self.model.window = *v;
                }
            }
            Command::Forecast {
                data,
                recipe,
                horizon,
                z_policy,
                ..
            } => {
                if data.is_some() {
                    self.data.series = data.clone();
                }
                if let Some(r) = recipe {
                    self.preprocess.recipe = r.clone();
                }
                if let Some(v) = horizon {
                    self.forecast.horizon = *v;
                }
                if let Some(z) = z_policy {
                    self.forecast.z_policy = z.clone();
                }
            }
            Command::Evaluate { actual, .. } => {
                if actual.is_some() {
                    self.data.actual = actual.clone();
                }
            }
            Command::Backtest {
                actual,
                notional,
                epsilon,
                ..
            }
            | Command::Report {
                actual,
                notional,
                epsilon,
                ..
            } => {
                if actual.is_some() {
                    self.data.actual = actual.clone();
                }
                if let Some(v) = notional {
                    self.backtest.notional_musd = *v;
                }
                if let Some(v) = epsilon {
                    self.backtest.epsilon = *v;
                }
            }
            Command::Gradcheck { .. } => {}
        }
    }

    /// Resolves defaults, then the optional file, then flags — later layers
    /// win — and parses every stringly field once so bad values fail here,
    /// before any work starts.
    pub fn resolve(file: Option<FileConfig>, cli: &Cli) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(f) = file {
            cfg.apply_file(f)?;
        }
        cfg.apply_cli(cli);
        cfg.recipe()?;
        cfg.train_config()?;
        cfg.z_policy()?;
        if cfg.model.window == 0 {
            return Err(Error::config("model.window must be at least 1"));
        }
        Ok(cfg)
    }

    pub fn recipe(&self) -> Result<Recipe> {
        Recipe::parse(&self.preprocess.recipe)
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            condition_window: self.model.window,
            hidden: self.model.hidden,
            noise_dim: self.model.noise_dim,
        }
    }

    pub fn discriminator_config(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            conv_layers: self
                .model
                .conv_layers
                .iter()
                .map(|&[out_channels, kernel, stride]| ConvSpec {
                    out_channels,
                    kernel,
                    stride,
                })
                .collect(),
            dropout: self.model.dropout,
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let attenuation_mode = match self.train.attenuation_mode.as_str() {
            "adam-beta1" => AttenuationMode::AdamBeta1,
            "lr-decay" => AttenuationMode::LrDecay,
            other => {
                return Err(Error::config(format!(
                    "train.attenuation_mode must be \"adam-beta1\" or \
                     \"lr-decay\", got \"{other}\""
                )))
            }
        };
        let gen_loss = match self.train.gen_loss.as_str() {
            "saturating" => GeneratorLossMode::Saturating,
            "non-saturating" => GeneratorLossMode::NonSaturating,
            other => {
                return Err(Error::config(format!(
                    "train.gen_loss must be \"saturating\" or \
                     \"non-saturating\", got \"{other}\""
                )))
            }
        };
        Ok(TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            lr: self.train.lr,
            attenuation: self.train.attenuation,
            attenuation_mode,
            d_steps: self.train.d_steps,
            gen_loss,
            seed: self.run.seed,
            ..TrainConfig::default()
        })
    }

    /// Parses `forecast.z_policy`. Seeds omitted from the policy string
    /// fall back to the master seed: `zero`, `fixed-seed[:SEED]`,
    /// `sample-mean:N[:SEED]`.
    pub fn z_policy(&self) -> Result<ZPolicy> {
        let spec = self.forecast.z_policy.as_str();
        let bad = || {
            Error::config(format!(
                "forecast.z_policy must be \"zero\", \"fixed-seed[:SEED]\", \
                 or \"sample-mean:N[:SEED]\", got \"{spec}\""
            ))
        };
        let parts: Vec<&str> = spec.split(':').collect();
        match parts.as_slice() {
            ["zero"] => Ok(ZPolicy::Zero),
            ["fixed-seed"] => Ok(ZPolicy::FixedSeed {
                seed: self.run.seed,
            }),
            ["fixed-seed", s] => Ok(ZPolicy::FixedSeed {
                seed: s.parse().map_err(|_| bad())?,
            }),
            ["sample-mean", n] => Ok(ZPolicy::SampleMean {
                n: n.parse().map_err(|_| bad())?,
                seed: self.run.seed,
            }),
            ["sample-mean", n, s] => Ok(ZPolicy::SampleMean {
                n: n.parse().map_err(|_| bad())?,
                seed: s.parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }

    pub fn backtest_config(&self) -> BacktestConfig {
        BacktestConfig {
            notional_musd: self.backtest.notional_musd,
            epsilon: self.backtest.epsilon,
            fee_musd: self.backtest.fee_musd,
        }
    }

    fn require_series(&self) -> Result<&Path> {
        self.data.series.as_deref().ok_or_else(|| {
            Error::config("a data series is required: set `[data] series` or pass --data")
        })
    }

    fn require_actual(&self) -> Result<&Path> {
        self.data.actual.as_deref().ok_or_else(|| {
            Error::config(
                "a realized series is required: set `[data] actual` or pass --actual",
            )
        })
    }
}

/// Parses a config file's text. Unknown keys and wrong types are config
/// errors naming the offending field.
pub fn parse_file_config(text: &str) -> Result<FileConfig> {
    toml::from_str(text).map_err(|e| Error::config(format!("config file: {e}")))
}

fn load_file_config(path: &Path) -> Result<FileConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_file_config(&text)
}

// ---------------------------------------------------------------------------
// Run orchestration
// ---------------------------------------------------------------------------

/// Resolves the configuration and executes the chosen subcommand, writing
/// artifacts and provenance into the output directory. Everything printed
/// to stdout is deterministic; wall-clock time only reaches
/// `run_meta.txt`.
pub fn run(cli: &Cli) -> Result<()> {
    let file = match &cli.config {
        Some(path) => Some(load_file_config(path)?),
        None => None,
    };
    let cfg = RunConfig::resolve(file, cli)?;

    let out = &cfg.run.out;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let effective = toml::to_string_pretty(&cfg)
        .map_err(|e| Error::config(format!("cannot serialize effective config: {e}")))?;
    write_out(out, "config_effective.toml", &effective)?;
    let meta = format!(
        "started_utc={}\nsubcommand={}\n",
        chrono::Utc::now().to_rfc3339(),
        command_name(&cli.command),
    );
    write_out(out, "run_meta.txt", &meta)?;

    match &cli.command {
        Command::Ingest { .. } => cmd_ingest(&cfg),
        Command::Preprocess { .. } => cmd_preprocess(&cfg),
        Command::Train { .. } => cmd_train(&cfg),
        Command::Forecast { model, .. } => cmd_forecast(&cfg, model.as_deref()),
        Command::Evaluate { forecast, .. } => cmd_evaluate(&cfg, forecast.as_deref()),
        Command::Backtest { forecast, .. } => cmd_backtest(&cfg, forecast.as_deref()),
        Command::Report {
            forecast, baseline, ..
        } => cmd_report(&cfg, forecast.as_deref(), baseline.as_deref()),
        Command::Gradcheck { seeds } => cmd_gradcheck(&cfg, *seeds),
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Ingest { .. } => "ingest",
        Command::Preprocess { .. } => "preprocess",
        Command::Train { .. } => "train",
        Command::Forecast { .. } => "forecast",
        Command::Evaluate { .. } => "evaluate",
        Command::Backtest { .. } => "backtest",
        Command::Report { .. } => "report",
        Command::Gradcheck { .. } => "gradcheck",
    }
}

fn write_out(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Errors with the missing path and a pointer to the producing command when
/// a prerequisite artifact does not exist yet.
fn require_artifact(path: &Path, producer: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("missing prerequisite artifact; run `fxgan {producer}` first"),
            ),
        ))
    }
}

fn forecast_input(cfg: &RunConfig, flag: Option<&Path>) -> Result<forecast::ForecastResult> {
    let path = flag
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.run.out.join("forecast.csv"));
    require_artifact(&path, "forecast")?;
    forecast::load_csv(&path)
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn cmd_ingest(cfg: &RunConfig) -> Result<()> {
    let path = cfg.require_series()?;
    let series = market_data::load_csv(path)?;
    market_data::write_csv(&series, &cfg.run.out.join("ingested.csv"))?;

    let mut report = String::new();
    let first = series.first().expect("parser rejects empty series");
    let last = series.last().expect("parser rejects empty series");
    let _ = writeln!(report, "bars: {}", series.len());
    let _ = writeln!(report, "dates: {} .. {}", first.date, last.date);
    for col in Column::ALL {
        let missing = series.bars().iter().filter(|b| b.get(col).is_none()).count();
        if missing > 0 {
            let _ = writeln!(report, "missing {col} cells: {missing}");
        }
    }

    let mut mismatches = 0;
    if let Some(rates_path) = &cfg.data.published_rates {
        let published = market_data::load_published_rates(rates_path)?;
        let audit = market_data::audit_published_rates(&series, &published)?;
        let _ = writeln!(report, "\nchange-rate audit (volume, % day over day):");
        let _ = writeln!(report, "date        recomputed  published  verdict");
        for row in &audit.rows {
            let fmt_pct = |v: Option<f64>| match v {
                Some(p) => format!("{p:+.1}"),
                None => "n/a".to_string(),
            };
            let verdict = match row.agrees {
                Some(true) => "ok",
                Some(false) => "MISMATCH",
                None => "unverifiable",
            };
            let _ = writeln!(
                report,
                "{}  {:>10}  {:>9}  {verdict}",
                row.date,
                fmt_pct(row.recomputed_pct),
                fmt_pct(row.published_pct),
            );
        }
        mismatches = audit.mismatches().len();
        let _ = writeln!(
            report,
            "published rates contradicted by their own volume column: {mismatches}"
        );
    }

    write_out(&cfg.run.out, "ingest_report.txt", &report)?;
    print!("{report}");
    if cfg.run.strict && mismatches > 0 {
        return Err(Error::invalid(format!(
            "strict mode: {mismatches} published change rates disagree with \
             the recomputed values (see ingest_report.txt)"
        )));
    }
    Ok(())
}

fn frame_to_csv(frame: &preprocess::Frame) -> String {
    let mut out = String::from("date,volume,open,high,low,close\n");
    for t in 0..frame.len() {
        let row = frame.row(t);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            frame.dates[t], row[0], row[1], row[2], row[3], row[4]
        );
    }
    out
}

fn cmd_preprocess(cfg: &RunConfig) -> Result<()> {
    let series = market_data::load_csv(cfg.require_series()?)?;
    let recipe = cfg.recipe()?;
    let (pipeline, transformed) = preprocess::fit_transform(&recipe, &series.to_frame())?;
    write_out(&cfg.run.out, "transformed.csv", &frame_to_csv(&transformed))?;
    pipeline.save(&cfg.run.out.join("pipeline.txt"))?;
    println!("recipe: {recipe}");
    println!(
        "rows: {} in, {} out ({} consumed by differencing)",
        series.len(),
        transformed.len(),
        pipeline.row_shrinkage()
    );
    println!("wrote transformed.csv and pipeline.txt");
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let series = market_data::load_csv(cfg.require_series()?)?;
    let recipe = cfg.recipe()?;
    let data = training::make_training_set(&series, &recipe, cfg.model.window)?;
    let mut model = GanModel::init(
        cfg.generator_config(),
        cfg.discriminator_config(),
        cfg.run.seed,
    )?;
    let train_cfg = cfg.train_config()?;
    let records = training::train(&mut model, &data, &train_cfg)?;
    model.save(&cfg.run.out.join("checkpoint.bin"))?;
    write_out(
        &cfg.run.out,
        "train_log.csv",
        &training::records_to_csv(&records),
    )?;
    let first = records.first().expect("epochs >= 1 was validated");
    let last = records.last().expect("epochs >= 1 was validated");
    println!(
        "trained {} epochs on {} pairs (batch {}, lr {}, d_steps {})",
        records.len(),
        data.pairs.len(),
        train_cfg.batch_size,
        train_cfg.lr,
        train_cfg.d_steps
    );
    println!(
        "epoch {:>4}: d_loss {:.4}  g_loss {:.4}  price_mse {:.6}",
        first.epoch, first.d_loss, first.g_loss, first.price_mse
    );
    println!(
        "epoch {:>4}: d_loss {:.4}  g_loss {:.4}  price_mse {:.6}",
        last.epoch, last.d_loss, last.g_loss, last.price_mse
    );
    println!("wrote checkpoint.bin and train_log.csv");
    Ok(())
}

fn cmd_forecast(cfg: &RunConfig, model_flag: Option<&Path>) -> Result<()> {
    let series = market_data::load_csv(cfg.require_series()?)?;
    let model_path = model_flag
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.run.out.join("checkpoint.bin"));
    require_artifact(&model_path, "train")?;
    let model = GanModel::load(&model_path)?;
    let recipe = cfg.recipe()?;
    let pipeline = preprocess::fit(&recipe, &series.to_frame())?;
    let z_policy = cfg.z_policy()?;
    let result = forecast::forecast(
        &model,
        &pipeline,
        &series,
        cfg.forecast.horizon,
        z_policy,
    )?;
    result.write_csv(&cfg.run.out.join("forecast.csv"))?;
    println!(
        "forecast {} days from {} ({})",
        result.len(),
        series.last().expect("parser rejects empty series").date,
        result.z_policy
    );
    for (date, row) in result.dates.iter().zip(&result.predicted) {
        println!(
            "{date}  open {:.2}  high {:.2}  low {:.2}  close {:.2}",
            row[0], row[1], row[2], row[3]
        );
    }
    println!("wrote forecast.csv");
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig, forecast_flag: Option<&Path>) -> Result<()> {
    let predicted = forecast_input(cfg, forecast_flag)?;
    let actual = market_data::load_csv(cfg.require_actual()?)?;
    let report = evaluation::accuracy_report(&predicted, &actual)?;
    write_out(&cfg.run.out, "accuracy.csv", &report.to_csv_string())?;
    println!("evaluated {} forecast days", report.n);
    println!("rmse: {}", report.summary());
    println!("wrote accuracy.csv");
    Ok(())
}

fn cmd_backtest(cfg: &RunConfig, forecast_flag: Option<&Path>) -> Result<()> {
    let predicted = forecast_input(cfg, forecast_flag)?;
    let actual = market_data::load_csv(cfg.require_actual()?)?;
    let ledger = backtest::ledger_from_series(&predicted, &actual, &cfg.backtest_config())?;
    ledger.write_csv(&cfg.run.out.join("ledger.csv"))?;
    print!("{}", backtest::roi_report(&ledger)?);
    println!("wrote ledger.csv");
    Ok(())
}

fn cmd_report(
    cfg: &RunConfig,
    forecast_flag: Option<&Path>,
    baseline_flag: Option<&Path>,
) -> Result<()> {
    let predicted = forecast_input(cfg, forecast_flag)?;
    let actual = market_data::load_csv(cfg.require_actual()?)?;
    let accuracy = evaluation::accuracy_report(&predicted, &actual)?;
    let ledger = backtest::ledger_from_series(&predicted, &actual, &cfg.backtest_config())?;

    let mut text = String::new();
    let _ = writeln!(text, "forecast accuracy");
    let _ = writeln!(text, "=================");
    text.push_str(&accuracy.to_csv_string());
    let _ = writeln!(text, "rmse: {}", accuracy.summary());

    if let Some(baseline_path) = baseline_flag {
        require_artifact(baseline_path, "report --baseline <trained model file>")?;
        let baseline = arima::ArimaModel::load(baseline_path)?;
        let closes: Vec<f64> = actual
            .bars()
            .iter()
            .filter_map(|b| b.get(Column::Close))
            .collect();
        let history_len = closes.len().saturating_sub(predicted.len());
        let fc = baseline.forecast(&closes[..history_len], predicted.len())?;
        let actual_tail = &closes[history_len..];
        let baseline_rmse = evaluation::rmse(actual_tail, &fc)?;
        let _ = writeln!(text, "\nbaseline close forecast (ARMA)");
        let _ = writeln!(text, "==============================");
        let _ = writeln!(
            text,
            "p={} q={} rmse {:.4} over the same {} days",
            baseline.p(),
            baseline.q(),
            baseline_rmse,
            fc.len()
        );
    }

    let _ = writeln!(text, "\ntrading simulation");
    let _ = writeln!(text, "==================");
    text.push_str(&backtest::roi_report(&ledger)?);

    write_out(&cfg.run.out, "report.txt", &text)?;
    print!("{text}");
    println!("wrote report.txt");
    Ok(())
}

fn cmd_gradcheck(cfg: &RunConfig, seeds: usize) -> Result<()> {
    if seeds == 0 {
        return Err(Error::config("gradcheck needs at least one seed"));
    }
    let mut text = String::new();
    let mut failures = 0usize;
    let mut total = 0usize;
    for offset in 0..seeds as u64 {
        let seed = cfg.run.seed.wrapping_add(offset);
        let mut checks = crate::autodiff::primitive_checks(seed)?;
        checks.extend(network_checks(seed)?);
        for check in checks {
            total += 1;
            let ok = check.report.passes(GRADCHECK_TOLERANCE);
            if !ok {
                failures += 1;
            }
            let _ = writeln!(
                text,
                "{:<22} seed {seed:>3}: max rel err {:.3e} over {} entries  {}",
                check.name,
                check.report.max_rel_err,
                check.report.checked,
                if ok { "ok" } else { "FAIL" },
            );
        }
    }
    let _ = writeln!(
        text,
        "{} checks, {failures} failures (tolerance {GRADCHECK_TOLERANCE:.0e})",
        total
    );
    write_out(&cfg.run.out, "gradcheck.txt", &text)?;
    print!("{text}");
    if failures > 0 {
        return Err(Error::domain(format!(
            "{failures} of {total} gradient checks exceeded {GRADCHECK_TOLERANCE:.0e}"
        )));
    }
    Ok(())
}
