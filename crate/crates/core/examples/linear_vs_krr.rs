//! Linear least squares against Nyström KRR, both scored against persistence.

use windcast::evaluate::{nrmse, persistence_for_rows};
use windcast::lagset::{build, Design, DesignSpec};
use windcast::model::{Forecaster, KrrConfig, ModelConfig};
use windcast::select::{CvSettings, Grid};
use windcast::synthetic::{generate, SyntheticConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let series = generate(&SyntheticConfig { hours: 24 * 240, seed: 1, ..Default::default() });
    let cutoff = series.instant(24 * 200);
    let krr = KrrConfig {
        grid: Grid::new(vec![2.0, 4.0, 8.0], vec![1e-6, 1e-4, 1e-2])?,
        cv: CvSettings { folds: 5, refine_factor: 3 },
        ..Default::default()
    };

    for (design, h, mu) in [(Design::Ss, 1, 24), (Design::Ss, 6, 24), (Design::ZmS, 6, 24)] {
        let data = build(&series, DesignSpec::new(design, h, mu)?)?;
        let (train, test) = data.split_by_target(cutoff);
        let persistence = nrmse(&test.target_speed, &persistence_for_rows(&series, &test))?;
        let linear = Forecaster::fit(&train, &ModelConfig::linear())?.forecaster;
        let kernel = Forecaster::fit(&train, &ModelConfig::krr(krr.clone(), 3))?;
        let p = kernel.forecaster.kernel_params().expect("kernel model");
        println!(
            "{:<6} h={h:<2} mu={mu:<3} persistence {:.4}  linear {:.4}  krr {:.4}  (sigma={}, lambda={:.1e}, cv R2={:.3})",
            design.as_str(),
            persistence,
            nrmse(&test.target_speed, &linear.predict_dataset(&test)?)?,
            nrmse(&test.target_speed, &kernel.forecaster.predict_dataset(&test)?)?,
            p.sigma,
            p.lambda,
            kernel.forecaster.cv.map_or(f64::NAN, |c| c.mean_r2),
        );
    }
    Ok(())
}
