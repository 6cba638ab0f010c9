//! Train the default two-layer LSTM on two years of synthetic record and score
//! one-hour-ahead forecasts over the test period.
//!
//! cargo run --release --example train_lstm [max_epochs]

use std::time::Instant;

use gwlcast::data::Provenance;
use gwlcast::eval::rolling_forecast;
use gwlcast::experiment::{prepare, train_regime, WindowConfig};
use gwlcast::hydro::{generate_frame, HydroConfig};
use gwlcast::model::ModelSizes;
use gwlcast::storms::StormParams;
use gwlcast::training::{SplitSpec, TrainConfig};

fn main() -> gwlcast::Result<()> {
    let epochs = std::env::args().nth(1).map_or(50, |s| s.parse().expect("epoch count"));
    let hydro = HydroConfig::default();
    let frame = generate_frame(&hydro)?;
    let windows = WindowConfig::default();
    let (train, test) = prepare(&frame, &SplitSpec::default(), &windows)?;
    let cfg = TrainConfig {
        max_epochs: epochs,
        ..TrainConfig::default()
    };

    let t0 = Instant::now();
    let (model, report) = train_regime(
        &train,
        Provenance::Full,
        &windows,
        &StormParams::default(),
        ModelSizes::deep_lstm(),
        &cfg,
        |s| {
            println!(
                "epoch {:>3}  train {:.3e}  val {:.3e}  ({:.1} s)",
                s.epoch,
                s.train_loss,
                s.val_loss,
                t0.elapsed().as_secs_f64()
            )
        },
    )?;
    println!("best epoch {} of {}", report.best_epoch, report.epochs());

    let fr = rolling_forecast(&model, &test, &train.normalizer)?;
    let one = fr.step_metrics(1)?;
    println!(
        "test, 1 h ahead: rmse {:.4} m (noise floor {} m), nse {:.4}",
        one.rmse,
        hydro.noise_floor(),
        one.nse.unwrap_or(f64::NAN)
    );
    let all = fr.metrics()?;
    println!("test, all {} steps: rmse {:.4} m", fr.horizon, all.rmse);
    Ok(())
}
