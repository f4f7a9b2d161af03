//! RMSE and gamma of KRR on an external hourly dataset.
//!
//! ```text
//! cargo run --release --example external_comparison -- <series.csv> <cutoff> [horizon] [design]
//! ```
//!
//! The series must be in the hourly format written by `windcast ingest`.
//! Memory is chosen among {2, 6, 24, 48, 72} by 5-fold cross-validation on
//! the training part, then forced to 24 for the reported row as well.

use std::fs::File;

use windcast::evaluate::{gamma_rmse, persistence_for_rows, rmse};
use windcast::lagset::{build, Design, DesignSpec};
use windcast::model::{select_memory, Forecaster, KrrConfig, ModelConfig};
use windcast::series::{parse_timestamp, WindSeries};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    if args.len() < 3 {
        eprintln!("usage: external_comparison <series.csv> <cutoff> [horizon=1] [design=zm-s]");
        std::process::exit(2);
    }
    let series = WindSeries::read_csv(File::open(&args[1])?)?;
    let cutoff = parse_timestamp(&args[2])?;
    let horizon: usize = args.get(3).map_or(Ok(1), |s| s.parse())?;
    let design: Design = args.get(4).map_or(Ok(Design::ZmS), |s| s.parse())?;
    let config = ModelConfig::krr(KrrConfig::default(), 0);

    let (train_series, _) = series.split_at(cutoff)?;
    let chosen = select_memory(&train_series, design, horizon, &[2, 6, 24, 48, 72], &config)?;
    println!("cross-validated memory: {} h (mean R2 {:.4})", chosen.memory, chosen.mean_r2);

    for memory in [chosen.memory, 24] {
        let data = build(&series, DesignSpec::new(design, horizon, memory)?)?;
        let (train, test) = data.split_by_target(cutoff);
        let model = Forecaster::fit(&train, &config)?.forecaster;
        let pred = model.predict_dataset(&test)?;
        let r = rmse(&test.target_speed, &pred)?;
        let p = rmse(&test.target_speed, &persistence_for_rows(&series, &test))?;
        println!("mu={memory:<2} {design} h={horizon}: RMSE {r:.3}  persistence {p:.3}  gamma {:.3}", gamma_rmse(r, p)?);
    }
    Ok(())
}
