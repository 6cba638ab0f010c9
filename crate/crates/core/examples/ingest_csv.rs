//! Read a well CSV with gaps, split it at long gaps and fit the scaling.
//!
//! cargo run --example ingest_csv [well.csv]

use gwlcast::data::{fit_normalizer, format_timestamp, ingest_csv, ingest_csv_path, segment_gaps, Channel};

const SAMPLE: &str = "timestamp,rainfall_mm,tide_m,gwl_m
2021-09-01T00:00:00Z,0,0.31,1.02
2021-09-01T01:00:00Z,2.4,0.12,1.05
2021-09-01T03:00:00Z,0.8,-0.30,1.11
2021-09-01T04:00:00Z,0,-0.41,1.10
2021-09-01T12:00:00Z,0,0.44,1.04
2021-09-01T13:00:00Z,0,0.28,1.03
";

fn main() -> gwlcast::Result<()> {
    let frame = match std::env::args().nth(1) {
        Some(path) => ingest_csv_path(path.as_ref())?,
        None => ingest_csv(SAMPLE.as_bytes(), "sample")?,
    };
    let segments = segment_gaps(&frame, 3);
    for (i, s) in segments.iter().enumerate() {
        let rows = s.rows();
        println!(
            "segment {i}: {} hours, {} to {}",
            s.len(),
            format_timestamp(&rows[0].timestamp),
            format_timestamp(&rows[rows.len() - 1].timestamp)
        );
    }
    let norm = fit_normalizer(&segments)?;
    for c in Channel::ALL {
        println!("{c}: [{}, {}]", norm.min[c as usize], norm.max[c as usize]);
    }

    match ingest_csv(
        "timestamp,rainfall_mm,tide_m,gwl_m\n2021-09-01T00:00:00Z,-1,0,1\n".as_bytes(),
        "bad",
    ) {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
