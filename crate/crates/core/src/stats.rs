//! Column statistics over score populations.

use alloc::vec::Vec;

/// Standard deviations below this are treated as zero.
pub const ZERO_VARIANCE: f64 = 1e-12;

pub fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Divide-by-N standard deviation.
pub fn population_std(xs: &[f64]) -> Option<f64> {
    let m = mean(xs)?;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
    Some(libm::sqrt(var))
}

/// Z-scores with population std; a zero-variance column maps to zeros.
pub fn zscore(xs: &[f64]) -> Vec<f64> {
    let (Some(m), Some(sd)) = (mean(xs), population_std(xs)) else {
        return Vec::new();
    };
    if sd < ZERO_VARIANCE {
        return alloc::vec![0.0; xs.len()];
    }
    xs.iter().map(|x| (x - m) / sd).collect()
}

/// Median; even-length inputs average the two middle values.
pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Some(if n % 2 == 1 { sorted[n / 2] } else { (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0 })
}

/// Pearson correlation, or `None` when it is undefined (fewer than two
/// points, mismatched lengths, or a constant column).
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (mx, my) = (mean(xs)?, mean(ys)?);
    let (sx, sy) = (population_std(xs)?, population_std(ys)?);
    if sx < ZERO_VARIANCE || sy < ZERO_VARIANCE {
        return None;
    }
    let cov = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / xs.len() as f64;
    Some((cov / (sx * sy)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

pub fn summarize(xs: &[f64]) -> Option<Summary> {
    Some(Summary {
        count: xs.len(),
        min: xs.iter().copied().reduce(f64::min)?,
        mean: mean(xs)?,
        max: xs.iter().copied().reduce(f64::max)?,
    })
}
