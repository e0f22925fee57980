//! Moment and Kolmogorov-Smirnov checks for the noise sampler.

use serde::{Deserialize, Serialize};

use crate::noise::NoiseSource;

/// Row offset keeping the summed-noise sample disjoint from the ANS sample.
const SUMMED_ROW_BASE: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
}

pub fn moments(xs: &[f64]) -> Moments {
    let n = xs.len();
    if n == 0 {
        return Moments {
            n,
            mean: 0.0,
            variance: 0.0,
        };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let variance = if n > 1 {
        xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    Moments { n, mean, variance }
}

/// Two-sample Kolmogorov-Smirnov statistic: the largest gap between the
/// empirical CDFs of `a` and `b`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Large-sample critical value of the two-sample KS statistic at level `alpha`.
pub fn ks_critical_value(alpha: f64, n: usize, m: usize) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    c * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

/// Result of checking aggregated draws against per-step sums for one delay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnsCheck {
    pub delay: u64,
    pub samples: usize,
    pub expected_variance: f64,
    pub ans: Moments,
    pub summed: Moments,
    pub mean_se: f64,
    pub variance_se: f64,
    pub ks_statistic: f64,
    pub ks_critical: f64,
    pub alpha: f64,
    pub pass_mean: bool,
    pub pass_variance: bool,
    pub pass_ks: bool,
}

impl AnsCheck {
    pub fn passed(&self) -> bool {
        self.pass_mean && self.pass_variance && self.pass_ks
    }
}

/// Mean within `k` standard errors of zero.
pub fn mean_within(m: &Moments, expected_variance: f64, k: f64) -> bool {
    let se = (expected_variance / m.n as f64).sqrt();
    m.mean.abs() <= k * se
}

/// Sample variance within `k` standard errors of `expected`
/// (normal data: SE of the variance is `expected * sqrt(2 / (n - 1))`).
pub fn variance_within(m: &Moments, expected: f64, k: f64) -> bool {
    let se = expected * (2.0 / (m.n.max(2) - 1) as f64).sqrt();
    (m.variance - expected).abs() <= k * se
}

/// Draws `samples` aggregated-noise scalars for `delay` pending iterations
/// and the same number of explicit `delay`-term sums from disjoint keys,
/// then compares both against `N(0, delay * per_step_variance)` and each
/// other.
pub fn ans_check(
    seed: u64,
    delay: u64,
    samples: usize,
    per_step_variance: f64,
    alpha: f64,
) -> AnsCheck {
    const DIM: usize = 16;
    let source = NoiseSource::new(seed, 0);
    let rows = samples.div_ceil(DIM);
    let mut ans = Vec::with_capacity(rows * DIM);
    let mut summed = Vec::with_capacity(rows * DIM);
    let mut buf = vec![0.0f64; DIM];
    let mut scratch = vec![0.0f64; DIM];
    for row in 0..rows as u64 {
        source
            .fill_ans_noise(row, delay, delay, per_step_variance, &mut buf)
            .expect("delay >= 1");
        ans.extend_from_slice(&buf);
        source.fill_summed_noise(
            SUMMED_ROW_BASE + row,
            1,
            delay,
            per_step_variance,
            &mut buf,
            &mut scratch,
        );
        summed.extend_from_slice(&buf);
    }
    ans.truncate(samples);
    summed.truncate(samples);

    let expected = delay as f64 * per_step_variance;
    let ans_m = moments(&ans);
    let summed_m = moments(&summed);
    let ks = ks_two_sample(&ans, &summed);
    let crit = ks_critical_value(alpha, ans.len(), summed.len());
    let degenerate = expected == 0.0;
    AnsCheck {
        delay,
        samples,
        expected_variance: expected,
        ans: ans_m,
        summed: summed_m,
        mean_se: (expected / samples as f64).sqrt(),
        variance_se: expected * (2.0 / (samples.max(2) - 1) as f64).sqrt(),
        ks_statistic: ks,
        ks_critical: crit,
        alpha,
        pass_mean: if degenerate {
            ans_m.mean == 0.0 && summed_m.mean == 0.0
        } else {
            mean_within(&ans_m, expected, 4.0) && mean_within(&summed_m, expected, 4.0)
        },
        pass_variance: if degenerate {
            ans_m.variance == 0.0 && summed_m.variance == 0.0
        } else {
            variance_within(&ans_m, expected, 4.0) && variance_within(&summed_m, expected, 4.0)
        },
        pass_ks: ks < crit,
    }
}
