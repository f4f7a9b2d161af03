//! The three input/output designs on a short synthetic series.

use windcast::lagset::{build, Design, DesignSpec};
use windcast::synthetic::{generate, SyntheticConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let series = generate(&SyntheticConfig { hours: 24 * 7, gap_probability: 0.05, seed: 11, ..Default::default() });
    println!("series: {} slots, {} present", series.len(), series.valid_count());

    for design in Design::ALL {
        let spec = DesignSpec::new(design, 3, 6)?;
        let data = build(&series, spec)?;
        println!(
            "{:<18} rows={:<4} features={:<3} outputs={}  first anchor {}",
            spec.to_string(),
            data.n_samples(),
            data.n_features(),
            data.n_outputs(),
            data.anchors[0]
        );
    }

    let data = build(&series, DesignSpec::new(Design::ZmS, 1, 2)?)?;
    let mut out = Vec::new();
    data.slice(0..3).write_csv(&mut out)?;
    print!("{}", String::from_utf8(out)?);
    Ok(())
}
