//! Monthly lag-24 h autocorrelation for increasing daily-cycle amplitude.

use windcast::diurnal::monthly_diurnal_strength;
use windcast::synthetic::{generate, SyntheticConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for amplitude in [0.0, 0.5, 1.0, 2.0] {
        let series = generate(&SyntheticConfig { hours: 24 * 90, amplitude, seed: 2, ..Default::default() });
        let records = monthly_diurnal_strength(&series)?;
        let cells: Vec<String> = records.iter().map(|r| format!("{} {:+.3} ({} windows)", r.month, r.r_ss_24, r.windows_used)).collect();
        println!("A = {amplitude:.1}: {}", cells.join(", "));
    }
    Ok(())
}
