#![allow(dead_code)]

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Asymptotic Kolmogorov survival function `Q(lambda) = 2 sum (-1)^(k-1) exp(-2 k^2 lambda^2)`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS p-value of `samples` against the CDF `cdf`.
pub fn ks_pvalue(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let sn = n.sqrt();
    kolmogorov_survival((sn + 0.12 + 0.11 / sn) * d)
}

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Two-sided p-value of Welch's large-sample z statistic for equal means.
pub fn two_sample_pvalue(a: &[f64], b: &[f64]) -> f64 {
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let se = (va / a.len() as f64 + vb / b.len() as f64).sqrt();
    if se == 0.0 {
        return if ma == mb { 1.0 } else { 0.0 };
    }
    let z = (ma - mb).abs() / se;
    2.0 * (1.0 - Normal::standard().cdf(z))
}

pub fn chi_square_pvalue(statistic: f64, dof: usize) -> f64 {
    1.0 - ChiSquared::new(dof as f64).unwrap().cdf(statistic)
}

/// Goodness of fit of integer counts to `Poisson(mean)`, pooling the upper
/// tail so every bin expects at least five events.
pub fn poisson_gof_pvalue(counts: &[usize], mean: f64) -> f64 {
    let n = counts.len() as f64;
    let mut pmf = vec![(-mean).exp()];
    let mut bins = Vec::new();
    let mut cum = 0.0;
    let mut k = 0;
    loop {
        let p = pmf[k];
        let tail = 1.0 - cum - p;
        if n * tail < 5.0 {
            bins.push((k, usize::MAX, 1.0 - cum));
            break;
        }
        bins.push((k, k, p));
        cum += p;
        k += 1;
        pmf.push(pmf[k - 1] * mean / k as f64);
    }
    let mut stat = 0.0;
    for &(lo, hi, p) in &bins {
        let observed = counts.iter().filter(|&&c| c >= lo && c <= hi).count() as f64;
        let expected = n * p;
        stat += (observed - expected).powi(2) / expected;
    }
    chi_square_pvalue(stat, bins.len() - 1)
}
