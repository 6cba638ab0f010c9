//! Train a shallow RNN briefly, then issue a fresh forecast from every hour of
//! the test period and report skill by lead time.
//!
//! cargo run --release --example rolling_forecast

use gwlcast::data::Provenance;
use gwlcast::eval::{forecast_origin, rolling_forecast};
use gwlcast::experiment::{prepare, train_regime, WindowConfig};
use gwlcast::hydro::{generate_frame, HydroConfig};
use gwlcast::model::ModelSizes;
use gwlcast::storms::StormParams;
use gwlcast::training::{SplitSpec, TrainConfig};

fn main() -> gwlcast::Result<()> {
    let frame = generate_frame(&HydroConfig {
        n_hours: 6000,
        ..HydroConfig::default()
    })?;
    let windows = WindowConfig {
        lookback: 24,
        horizon: 12,
        max_fill: 3,
    };
    let (train, test) = prepare(&frame, &SplitSpec::default(), &windows)?;
    let cfg = TrainConfig {
        max_epochs: 8,
        ..TrainConfig::default()
    };
    let (model, _) = train_regime(
        &train,
        Provenance::Full,
        &windows,
        &StormParams::default(),
        ModelSizes::shallow_rnn(),
        &cfg,
        |s| println!("epoch {}  val {:.3e}", s.epoch, s.val_loss),
    )?;

    let fr = rolling_forecast(&model, &test, &train.normalizer)?;
    println!(
        "{} origins from {}",
        fr.origins.len(),
        gwlcast::data::format_timestamp(&fr.origins[0].origin)
    );
    for step in [1, 3, 6, 12] {
        let m = fr.step_metrics(step)?;
        println!(
            "{step:>2} h ahead: rmse {:.4} m  nse {:.3}",
            m.rmse,
            m.nse.unwrap_or(f64::NAN)
        );
    }

    // A single origin on its own gives the same numbers as the batch.
    let first = forecast_origin(&model, &test.segments, fr.origins[0].source)?;
    assert_eq!(first, fr.origins[0]);

    let mut head = Vec::new();
    fr.write_csv(&mut head).expect("in-memory write");
    for line in String::from_utf8_lossy(&head).lines().take(4) {
        println!("{line}");
    }
    Ok(())
}
