//! Raw 10-minute logger export -> hourly gap-aware series.
//!
//! Run with `cargo run --example ingest_resample`.

use chrono::Duration;
use windcast::series::{parse_csv, resample_hourly, CsvSchema};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // two hours of 10-minute data, one broken row and a hole after 02:00
    let raw = "\
time,ff,dd
2020-03-01 00:00,4.0,270
2020-03-01 00:10,4.4,280
2020-03-01 00:20,3.8,265
2020-03-01 00:30,5.1,300
2020-03-01 00:40,oops,300
2020-03-01 00:50,5.3,310
2020-03-01 01:00,6.0,315
2020-03-01 01:20,5.5,
2020-03-01 01:40,5.9,320
2020-03-01 04:00,2.0,90
";
    let schema = CsvSchema { time: "time".into(), speed: "ff".into(), direction: Some("dd".into()) };
    let report = parse_csv(raw.as_bytes(), &schema)?;
    println!("{} observations, {} rejected rows", report.observations.len(), report.errors.len());
    for e in &report.errors {
        println!("  row {}: {:?}", e.index, e.issue);
    }

    let hourly = resample_hourly(&report.observations, Duration::hours(1))?;
    println!("{} hourly slots, {} gaps", hourly.len(), hourly.len() - hourly.valid_count());
    let mut out = Vec::new();
    hourly.write_csv(&mut out)?;
    print!("{}", String::from_utf8(out)?);
    Ok(())
}
