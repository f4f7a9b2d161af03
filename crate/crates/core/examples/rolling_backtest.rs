//! The four update policies over the same test range.

use windcast::lagset::{Design, DesignSpec};
use windcast::model::ModelConfig;
use windcast::rolling::{run_backtest, PolicyKind, UpdatePolicy};
use windcast::synthetic::{generate, SyntheticConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let series = generate(&SyntheticConfig { hours: 24 * 365, gap_probability: 0.01, seed: 8, ..Default::default() });
    let cutoff = series.instant(24 * 300);
    let spec = DesignSpec::new(Design::ZmS, 3, 24)?;
    let config = ModelConfig::linear();

    for kind in PolicyKind::ALL {
        let policy = match kind {
            PolicyKind::Online => UpdatePolicy::online(24 * 180),
            PolicyKind::OnlineShort => UpdatePolicy::online_short(),
            other => UpdatePolicy::of_kind(other),
        };
        let report = run_backtest(&series, spec, &config, policy, cutoff)?;
        let sizes: Vec<usize> = report.windows.iter().map(|w| w.train_size()).collect();
        println!(
            "{:<13} NRMSE {:.4}  gamma {:.3}  retrains {:>2}  train rows {}..{}",
            kind.as_str(),
            report.metrics.nrmse,
            report.gamma_rmse.unwrap_or(f64::NAN),
            report.retrain_count,
            sizes.first().unwrap(),
            sizes.last().unwrap()
        );
    }
    Ok(())
}
