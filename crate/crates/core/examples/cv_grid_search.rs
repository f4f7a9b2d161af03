//! Two-stage (sigma, lambda) search by blocked 5-fold cross-validation.

use windcast::kernel_model::CgOptions;
use windcast::lagset::{build, Design, DesignSpec};
use windcast::select::{grid_search, write_cv_csv, CenterPolicy, CvSettings, Grid, NystromCvFitter};
use windcast::synthetic::{generate, SyntheticConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let series = generate(&SyntheticConfig { hours: 24 * 120, seed: 5, ..Default::default() });
    let data = build(&series, DesignSpec::new(Design::ZmS, 3, 24)?)?;
    let fitter = NystromCvFitter { centers: CenterPolicy::Auto, cg: CgOptions::default(), seed: 1, standardize: true };
    let coarse = Grid::new(vec![1.0, 4.0, 16.0], vec![1e-7, 1e-4, 1e-1])?;
    let result = grid_search(&data, &coarse, &fitter, &CvSettings { folds: 5, refine_factor: 3 })?;

    println!(
        "best sigma={} lambda={:.2e} mean R2={:.4} (stage {}, {} points)",
        result.best.sigma,
        result.best.lambda,
        result.best_mean_r2,
        result.refinement_stage,
        result.table.len()
    );
    write_cv_csv(&result.table, 5, std::io::stdout())?;
    Ok(())
}
