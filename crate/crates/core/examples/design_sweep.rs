//! A small sweep over two synthetic stations: locally and globally best
//! configurations and the memory comparison table.

use windcast::lagset::Design;
use windcast::model::ModelKind;
use windcast::select::{CvSettings, Grid};
use windcast::sweep::{delta_table, run_sweep_on, select_globally_best, CompareAxis, ExperimentConfig};
use windcast::synthetic::{generate, SyntheticConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let stations: Vec<(String, _)> = [("calm", 0.5, 21), ("diurnal", 2.0, 22)]
        .into_iter()
        .map(|(id, amplitude, seed)| (id.to_string(), generate(&SyntheticConfig { hours: 24 * 150, amplitude, seed, ..Default::default() })))
        .collect();
    let mut config = ExperimentConfig {
        horizons: vec![1, 6],
        memories: vec![2, 24],
        designs: vec![Design::Ss, Design::ZmS],
        models: vec![ModelKind::Linear, ModelKind::Krr],
        cutoff: Some(stations[0].1.instant(24 * 120)),
        seed: 99,
        ..Default::default()
    };
    config.krr.grid = Grid::new(vec![2.0, 8.0], vec![1e-5, 1e-2])?;
    config.krr.cv = CvSettings { folds: 5, refine_factor: 1 };

    let result = run_sweep_on(&stations, &config)?;
    println!("{} cells, {} failed", result.rows.len(), result.failed_cells());
    for &i in &result.locally_best {
        let r = &result.rows[i];
        println!("locally best  {:<8} h={:<2} {} {} mu={} NRMSE {:.4}", r.station, r.horizon, r.design, r.model, r.memory, r.nrmse.unwrap());
    }
    for h in &config.horizons {
        let g = select_globally_best(&result, *h)?;
        let worst = g.deltas.iter().filter_map(|d| d.delta).fold(0.0, f64::max);
        println!("globally best h={h:<2} {} {} mu={} (best at {} stations, max loss {:.4})", g.config.design, g.config.model, g.config.memory, g.frequency, worst);
    }
    for d in delta_table(&result.rows, CompareAxis::Memory, "2")?.iter().filter(|d| d.memory == 24 && d.model == ModelKind::Krr) {
        println!("dNRMSE(24h - 2h) {:<8} h={:<2} {:<5} {:+.4}", d.station, d.horizon, d.design.as_str(), d.delta_nrmse);
    }
    Ok(())
}
