//! Moment summaries with batch-means standard errors.

use serde::{Deserialize, Serialize};

/// Number of batches used for batch-means standard errors. Series shorter
/// than twice this length fall back to one observation per batch.
pub const DEFAULT_BATCHES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample variance of the raw observations.
    pub variance: f64,
    /// Standard error of the mean.
    pub se: f64,
    pub count: usize,
}

impl Summary {
    pub const EMPTY: Summary = Summary {
        mean: 0.0,
        variance: 0.0,
        se: 0.0,
        count: 0,
    };

    /// Count-weighted combination of independent summaries. Associative.
    pub fn merge(&self, other: &Summary) -> Summary {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * nb / n;
        // Chan et al. parallel update on sums of squared deviations
        let m2 = self.variance * (na - 1.0) + other.variance * (nb - 1.0) + delta * delta * na * nb / n;
        let variance = if n > 1.0 { m2 / (n - 1.0) } else { 0.0 };
        let se = ((na / n * self.se).powi(2) + (nb / n * other.se).powi(2)).sqrt();
        Summary {
            mean,
            variance,
            se,
            count: self.count + other.count,
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Mean with an i.i.d. standard error.
pub fn iid_summary(xs: &[f64]) -> Summary {
    let variance = sample_variance(xs);
    Summary {
        mean: mean(xs),
        variance,
        se: if xs.is_empty() {
            0.0
        } else {
            (variance / xs.len() as f64).sqrt()
        },
        count: xs.len(),
    }
}

/// Mean with a batch-means standard error over [`DEFAULT_BATCHES`] batches.
pub fn batch_means(xs: &[f64]) -> Summary {
    batch_means_with(xs, DEFAULT_BATCHES)
}

/// Batch means over `batches` contiguous batches of equal size. The leftover
/// `len % batches` observations at the end enter the mean but not the SE.
pub fn batch_means_with(xs: &[f64], batches: usize) -> Summary {
    let n = xs.len();
    if n < 2 * batches.max(1) {
        return iid_summary(xs);
    }
    let size = n / batches;
    let bm: Vec<f64> = xs
        .chunks_exact(size)
        .take(batches)
        .map(mean)
        .collect();
    let se = (sample_variance(&bm) / batches as f64).sqrt();
    Summary {
        mean: mean(xs),
        variance: sample_variance(xs),
        se,
        count: n,
    }
}

/// Ordinary least squares fit `y = a + b x`; returns `(a, b, r_squared)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (mx, my) = (mean(xs), mean(ys));
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let b = sxy / sxx;
    let a = my - b * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some((a, b, r2))
}

/// Geweke-style z-score comparing the means of the first and second halves.
pub fn half_split_z(xs: &[f64]) -> f64 {
    if xs.len() < 4 {
        return 0.0;
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    let (sa, sb) = (batch_means(a), batch_means(b));
    let denom = (sa.se.powi(2) + sb.se.powi(2)).sqrt();
    if denom == 0.0 {
        if sa.mean == sb.mean {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (sa.mean - sb.mean) / denom
    }
}
