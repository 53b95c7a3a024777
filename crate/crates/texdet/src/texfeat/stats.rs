//! Shared statistical summary used by every feature family.

use crate::Real;

/// Six-number summary of a value sequence. Standard deviation uses the
/// population convention (divisor N); the median of an even-length
/// sequence is the mean of the two middle values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatsSummary<F> {
    pub mean: F,
    pub median: F,
    pub min: F,
    pub max: F,
    pub std: F,
    pub energy: F,
}

impl<F: Real> StatsSummary<F> {
    pub fn of(values: &[F]) -> Self {
        assert!(!values.is_empty(), "stats of empty sequence");
        let n = F::from_f64_lossy(values.len() as f64);
        let mut sorted: Vec<F> = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite value in stats"));
        let min = sorted[0];
        let max = sorted[sorted.len() - 1];
        let median = if sorted.len() % 2 == 1 {
            sorted[sorted.len() / 2]
        } else {
            let hi = sorted.len() / 2;
            (sorted[hi - 1] + sorted[hi]) / F::from_f64_lossy(2.0)
        };
        let sum: F = values.iter().copied().sum();
        let mean = sum / n;
        let var: F = values
            .iter()
            .map(|&v| {
                let d = v - mean;
                d * d
            })
            .sum::<F>()
            / n;
        let energy: F = values.iter().map(|&v| v * v).sum();
        Self {
            mean,
            median,
            min,
            max,
            std: var.sqrt(),
            energy,
        }
    }

    pub fn values(&self) -> [F; 6] {
        [
            self.mean,
            self.median,
            self.min,
            self.max,
            self.std,
            self.energy,
        ]
    }

    pub const NAMES: [&'static str; 6] = ["mean", "median", "min", "max", "std", "energy"];
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn basic_summary() {
        let s = StatsSummary::of(&[1.0f64, 2.0, 3.0, 4.0]);
        assert_relative_eq!(s.mean, 2.5);
        assert_relative_eq!(s.median, 2.5);
        assert_eq!(s.min, 1.0);
        assert_eq!(s.max, 4.0);
        assert_relative_eq!(s.std, (1.25f64).sqrt());
        assert_relative_eq!(s.energy, 30.0);
    }

    #[test]
    fn odd_length_median() {
        let s = StatsSummary::of(&[5.0f64, 1.0, 3.0]);
        assert_eq!(s.median, 3.0);
    }

    #[test]
    fn ordering_invariants() {
        let s = StatsSummary::of(&[-2.0f64, 7.5, 0.0, 3.25, 3.25]);
        assert!(s.min <= s.median && s.median <= s.max);
        assert!(s.min <= s.mean && s.mean <= s.max);
        assert!(s.std >= 0.0 && s.energy >= 0.0);
    }
}
