//! Small numeric helpers shared by the metric and diagnostic code.

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

pub fn mean(values: &[f64]) -> f64 {
    compensated_sum(values.iter().copied()) / values.len() as f64
}

/// Log-spaced points from `lo` to `hi` inclusive.
pub fn logspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..count)
                .map(|i| {
                    if i == count - 1 {
                        hi
                    } else if i == 0 {
                        lo
                    } else {
                        (a + (b - a) * i as f64 / (count - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensation_recovers_small_terms() {
        let values = [1e16, 1.0, -1e16];
        assert_eq!(compensated_sum(values), 1.0);
        assert_eq!(values.iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn logspace_endpoints() {
        let v = logspace(1e-7, 1e-1, 7);
        assert_eq!(v.len(), 7);
        assert_eq!(v[0], 1e-7);
        assert_eq!(v[6], 1e-1);
        assert!((v[3] - 1e-4).abs() < 1e-16);
        assert_eq!(logspace(2.0, 8.0, 1), vec![2.0]);
    }
}
