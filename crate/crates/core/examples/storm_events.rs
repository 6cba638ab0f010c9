//! Detect storm events in a well record and count the storm-only training windows.
//!
//! cargo run --example storm_events [well.csv]

use gwlcast::data::{build_windows, fit_normalizer, ingest_csv_path, segment_gaps};
use gwlcast::hydro::{generate_frame, HydroConfig};
use gwlcast::storms::{detect_storms_all, extract_storm_dataset, write_events_csv, StormParams};

fn main() -> gwlcast::Result<()> {
    let frame = match std::env::args().nth(1) {
        Some(path) => ingest_csv_path(path.as_ref())?,
        None => generate_frame(&HydroConfig::default())?,
    };
    let segments = segment_gaps(&frame, 3);
    let params = StormParams::default();
    let events = detect_storms_all(&segments, &params);

    write_events_csv(&events, &segments, std::io::stdout().lock())?;

    let hours: usize = events.iter().map(|e| e.padded_len()).sum();
    println!("\n{} events covering {hours} of {} hours", events.len(), frame.len());
    let norm = fit_normalizer(&segments)?;
    let full = build_windows(&segments, 48, 18, &norm)?;
    let storm = extract_storm_dataset(&segments, &events, 48, 18, &norm)?;
    println!("{} of {} windows target a storm", storm.len(), full.len());
    Ok(())
}
