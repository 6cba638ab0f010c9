//! The `gwlcast` command line.
//!
//! Settings come from an optional TOML run configuration; command-line flags
//! override it. Exit status is 0 on success, 1 for invalid input or
//! configuration, 2 for a numerical failure.

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{ingest_csv_path, segment_gaps, Provenance, TimeSeriesFrame};
use crate::error::{Error, Result};
use crate::eval::{compare_models, rolling_forecast};
use crate::experiment::{prepare, train_regime, TestData, TrainingData, WindowConfig};
use crate::forecaster::ForecastModel;
use crate::gradcheck::{sweep, verdict, GradcheckConfig};
use crate::hydro::{generate_frame, HydroConfig};
use crate::model::{ModelKind, ModelSizes};
use crate::plot::forecast_svg;
use crate::storms::{detect_storms_all, write_events_csv, StormParams};
use crate::training::{SplitSpec, TrainConfig};

/// Environment variable that overrides `output_dir` of the run configuration.
pub const OUT_DIR_ENV: &str = "GWLCAST_OUT_DIR";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Well record to use. Without it a synthetic record is generated.
    pub csv: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotConfig {
    /// Forecast step to draw; the full horizon when absent.
    pub step: Option<usize>,
    pub hours: usize,
}

impl Default for PlotConfig {
    fn default() -> Self {
        PlotConfig { step: None, hours: 240 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub synthetic: HydroConfig,
    pub windows: WindowConfig,
    pub split: SplitSpec,
    pub storms: StormParams,
    pub model: ModelSizes,
    pub train: TrainConfig,
    pub gradcheck: GradcheckConfig,
    pub plot: PlotConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            synthetic: HydroConfig::default(),
            windows: WindowConfig::default(),
            split: SplitSpec::default(),
            storms: StormParams::default(),
            model: ModelSizes::deep_lstm(),
            train: TrainConfig::default(),
            gradcheck: GradcheckConfig::default(),
            plot: PlotConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a configuration file. A relative `data.csv` is taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(csv), Some(dir)) = (&cfg.data.csv, path.parent()) {
            if csv.is_relative() {
                cfg.data.csv = Some(dir.join(csv));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.windows.validate()?;
        self.split.validate()?;
        self.storms.validate()?;
        self.model.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.train.validate()?;
        self.synthetic.validate()?;
        Ok(())
    }

    /// The well record named by `data.csv`, or the synthetic record.
    pub fn load_frame(&self) -> Result<TimeSeriesFrame> {
        match &self.data.csv {
            Some(p) => ingest_csv_path(p),
            None => generate_frame(&self.synthetic),
        }
    }

    pub fn prepare(&self) -> Result<(TrainingData, TestData)> {
        prepare(&self.load_frame()?, &self.split, &self.windows)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "gwlcast",
    version,
    about = "Hourly groundwater level forecasting with recurrent networks"
)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides the configuration and GWLCAST_OUT_DIR.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads for forecasting.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct DataArg {
    /// Well CSV (timestamp,rainfall_mm,tide_m,gwl_m); overrides data.csv.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic well record.
    Synth {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        hours: Option<usize>,
        #[arg(long)]
        well_id: Option<String>,
        /// Output CSV; defaults to <out-dir>/<well_id>.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Detect storm events over the whole record.
    Storms {
        #[command(flatten)]
        data: DataArg,
    },
    /// Train a FULL or STORM forecaster.
    Train {
        #[arg(long)]
        regime: Provenance,
        #[arg(long)]
        model: Option<ModelKind>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        data: DataArg,
    },
    /// Rolling forecasts of one model over the test period.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArg,
    },
    /// Compare a FULL and a STORM model on the test period.
    Compare {
        #[arg(long)]
        full: PathBuf,
        #[arg(long)]
        storm: PathBuf,
        #[command(flatten)]
        data: DataArg,
    },
    /// Check analytic gradients against finite differences.
    Gradcheck {
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long)]
        hidden: Option<usize>,
        /// Flip one analytic gradient entry; the check must then fail.
        #[arg(long)]
        mutate: bool,
    },
}

/// Parses `args` (program name first), runs, and returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}

fn output_dir(cli: &Cli, cfg: &RunConfig) -> PathBuf {
    if let Some(d) = &cli.out_dir {
        return d.clone();
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(d) if !d.is_empty() => PathBuf::from(d),
        _ => cfg.output_dir.clone(),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    use std::io::Write;
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        // Fails only if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let out = output_dir(&cli, &cfg);

    match cli.command {
        Command::Synth {
            seed,
            hours,
            well_id,
            out: target,
        } => {
            if let Some(s) = seed {
                cfg.synthetic.seed = s;
            }
            if let Some(h) = hours {
                cfg.synthetic.n_hours = h;
            }
            if let Some(w) = well_id {
                cfg.synthetic.well_id = w;
            }
            cfg.synthetic.validate()?;
            let frame = generate_frame(&cfg.synthetic)?;
            let path = target.unwrap_or_else(|| out.join(format!("{}.csv", frame.well_id)));
            if let Some(dir) = path.parent() {
                if !dir.as_os_str().is_empty() {
                    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                }
            }
            frame.write_csv_path(&path)?;
            println!("wrote {} hours to {}", frame.len(), path.display());
        }
        Command::Storms { data } => {
            apply_data(&mut cfg, data);
            cfg.validate()?;
            let frame = cfg.load_frame()?;
            let segments = segment_gaps(&frame, cfg.windows.max_fill);
            let events = detect_storms_all(&segments, &cfg.storms);
            let path = out.join("storm_events.csv");
            let mut w = create(&path)?;
            write_events_csv(&events, &segments, &mut w)?;
            use std::io::Write;
            w.flush().map_err(|e| Error::io(&path, e))?;
            println!(
                "{} storm events in {} segments, written to {}",
                events.len(),
                segments.len(),
                path.display()
            );
        }
        Command::Train {
            regime,
            model,
            epochs,
            seed,
            data,
        } => {
            apply_data(&mut cfg, data);
            if let Some(k) = model {
                cfg.model = ModelSizes::default_for(k);
            }
            if let Some(e) = epochs {
                cfg.train.max_epochs = e;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            cfg.validate()?;
            let (train, _test) = cfg.prepare()?;
            let (fm, report) = train_regime(&train, regime, &cfg.windows, &cfg.storms, cfg.model, &cfg.train, |s| {
                println!(
                    "epoch {:>3}  train {:.6e}  val {:.6e}",
                    s.epoch, s.train_loss, s.val_loss
                )
            })?;
            let model_path = out.join(format!("model_{regime}.json"));
            let hist_path = out.join(format!("history_{regime}.csv"));
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            fm.save(&model_path)?;
            write_with(&hist_path, |w| report.write_csv(w))?;
            println!(
                "best epoch {} of {}, validation loss {:.6e}{}; model written to {}",
                report.best_epoch,
                report.epochs(),
                report.best_val_loss(),
                if report.stopped_early { ", stopped early" } else { "" },
                model_path.display()
            );
        }
        Command::Evaluate { model, data } => {
            apply_data(&mut cfg, data);
            cfg.validate()?;
            let fm = ForecastModel::load(&model)?;
            let (train, test) = prepare(&cfg.load_frame()?, &cfg.split, &windows_of(&cfg, &fm))?;
            let fr = rolling_forecast(&fm, &test, &train.normalizer)?;
            let path = out.join(format!("forecast_{}.csv", fm.provenance));
            write_with(&path, |w| fr.write_csv(w))?;
            let m = fr.metrics()?;
            let nse = m.nse.map_or("undefined".into(), |v| format!("{v:.4}"));
            println!(
                "{} origins: rmse {:.4} m, mae {:.4} m, nse {nse}; forecasts written to {}",
                fr.origins.len(),
                m.rmse,
                m.mae,
                path.display()
            );
        }
        Command::Compare { full, storm, data } => {
            apply_data(&mut cfg, data);
            cfg.validate()?;
            let f = ForecastModel::load(&full)?;
            let s = ForecastModel::load(&storm)?;
            f.check_compatible(&s)?;
            let (train, test) = prepare(&cfg.load_frame()?, &cfg.split, &windows_of(&cfg, &f))?;
            let report = compare_models(&f, &s, &test, &train.normalizer, &cfg.storms)?;
            write_with(&out.join("comparison.csv"), |w| report.write_table_csv(w))?;
            write_with(&out.join("horizon_rmse.csv"), |w| report.write_horizon_csv(w))?;
            let summary = report.summary();
            std::fs::write(out.join("summary.txt"), &summary).map_err(|e| Error::io(out.join("summary.txt"), e))?;
            let step = cfg.plot.step.unwrap_or(f.horizon);
            match forecast_svg(&report, &test, step, cfg.plot.hours) {
                Ok(svg) => {
                    let p = out.join("forecast_plot.svg");
                    std::fs::write(&p, svg).map_err(|e| Error::io(&p, e))?;
                }
                Err(e) => eprintln!("warning: no plot: {e}"),
            }
            print!("{summary}");
        }
        Command::Gradcheck { seeds, hidden, mutate } => {
            let mut g = cfg.gradcheck;
            if let Some(n) = seeds {
                g.seeds = n;
            }
            if let Some(h) = hidden {
                g.hidden_size = h;
            }
            let outcomes = sweep(&g, mutate)?;
            for o in &outcomes {
                println!(
                    "{:<4} seed {:>3}  max rel error {:.3e}",
                    o.kind, o.seed, o.max_rel_error
                );
            }
            let worst = verdict(&outcomes)?;
            println!("all {} checks below tolerance (worst {worst:.3e})", outcomes.len());
        }
    }
    Ok(())
}

fn apply_data(cfg: &mut RunConfig, arg: DataArg) {
    if let Some(p) = arg.data {
        cfg.data.csv = Some(p);
    }
}

/// Windows as saved with a model, gap filling as configured.
fn windows_of(cfg: &RunConfig, fm: &ForecastModel) -> WindowConfig {
    WindowConfig {
        lookback: fm.lookback,
        horizon: fm.horizon,
        max_fill: cfg.windows.max_fill,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("lookbak = 3").is_err());
        assert!(RunConfig::from_toml("[windows]\nlookbak = 3").is_err());
        let cfg = RunConfig::from_toml("[windows]\nlookback = 3").unwrap();
        assert_eq!(cfg.windows.lookback, 3);
        assert_eq!(cfg.windows.horizon, 18);
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(main_with_args(["gwlcast", "frobnicate"]), 1);
        assert_eq!(main_with_args(["gwlcast", "train", "--regime", "wet"]), 1);
        assert_eq!(main_with_args(["gwlcast", "--help"]), 0);
    }
}
