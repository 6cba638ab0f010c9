//! Generate a synthetic well record and write it as CSV.
//!
//! cargo run --example synth_well [seed] [out.csv]

use gwlcast::hydro::{generate_frame, HydroConfig};

fn main() -> gwlcast::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().map_or(1, |s| s.parse().expect("seed"));
    let out = args.next().unwrap_or_else(|| "synthetic.csv".into());

    let cfg = HydroConfig {
        seed,
        ..HydroConfig::default()
    };
    let frame = generate_frame(&cfg)?;
    let rain = frame.rainfall();
    let gwl = frame.gwl();
    let dry = rain.iter().filter(|&&r| r == 0.0).count() as f64 / rain.len() as f64;
    let (lo, hi) = gwl
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    println!(
        "{} hours, {:.1}% dry, total rain {:.0} mm",
        frame.len(),
        100.0 * dry,
        rain.iter().sum::<f64>()
    );
    println!(
        "level between {lo:.3} and {hi:.3} m, noise floor {} m",
        cfg.noise_floor()
    );
    frame.write_csv_path(out.as_ref())?;
    println!("wrote {out}");
    Ok(())
}
