//! Train FULL and STORM forecasters on a storm-dominated synthetic well and
//! compare them over the test period. Writes the comparison table, per-step
//! RMSE and a forecast plot to the output directory.
//!
//! cargo run --release --example full_vs_storm [seed] [max_epochs] [out_dir]

use std::path::PathBuf;

use gwlcast::data::Provenance;
use gwlcast::eval::compare_models;
use gwlcast::experiment::{prepare, train_regime, WindowConfig};
use gwlcast::hydro::{generate_frame, recharge_tide_ratio, HydroConfig};
use gwlcast::model::ModelSizes;
use gwlcast::plot::forecast_svg;
use gwlcast::storms::{detect_storms, StormParams};
use gwlcast::training::{SplitSpec, TrainConfig};

fn main() -> gwlcast::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(1, |s| s.parse().expect("seed"));
    let epochs: usize = args.next().map_or(20, |s| s.parse().expect("epoch count"));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "full_vs_storm".into()));

    let hydro = HydroConfig::rare_intense_storms(seed);
    let frame = generate_frame(&hydro)?;
    let storms = StormParams::default();
    let whole: Vec<(usize, usize)> = detect_storms(&frame, 0, &storms)
        .iter()
        .map(|e| (e.core_start, e.end))
        .collect();
    println!(
        "{} events, recharge rise {:.1}x the tidal swing",
        whole.len(),
        recharge_tide_ratio(&frame.rainfall(), &hydro, &whole)
    );

    let windows = WindowConfig::default();
    let (train, test) = prepare(&frame, &SplitSpec::default(), &windows)?;
    let cfg = TrainConfig {
        max_epochs: epochs,
        seed,
        ..TrainConfig::default()
    };
    let mut models = Vec::new();
    for regime in [Provenance::Full, Provenance::Storm] {
        let (m, r) = train_regime(&train, regime, &windows, &storms, ModelSizes::deep_lstm(), &cfg, |_| {})?;
        println!("{regime}: best epoch {} of {}", r.best_epoch, r.epochs());
        models.push(m);
    }
    let report = compare_models(&models[0], &models[1], &test, &train.normalizer, &storms)?;
    print!("{}", report.summary());

    std::fs::create_dir_all(&out).map_err(|e| gwlcast::Error::Invalid(e.to_string()))?;
    let write = |name: &str, bytes: Vec<u8>| std::fs::write(out.join(name), bytes).expect("write output");
    let mut table = Vec::new();
    report.write_table_csv(&mut table).expect("in-memory write");
    write("comparison.csv", table);
    let mut steps = Vec::new();
    report.write_horizon_csv(&mut steps).expect("in-memory write");
    write("horizon_rmse.csv", steps);
    write(
        "forecast_plot.svg",
        forecast_svg(&report, &test, windows.horizon, 240)?.into_bytes(),
    );
    println!("outputs in {}", out.display());
    Ok(())
}
