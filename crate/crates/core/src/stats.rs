//! Small numeric helpers shared across the analysis modules. Conventions
//! used throughout the crate: population moments and type-7 (linear
//! interpolation) quantiles.

/// Arithmetic mean; 0.0 for an empty slice.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population variance (divisor n).
pub fn pop_variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
pub fn pop_std(xs: &[f64]) -> f64 {
    pop_variance(xs).sqrt()
}

/// Type-7 quantile (linear interpolation at position p*(n-1)) over a sorted
/// slice. `p` clamped to [0, 1].
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    let p = p.clamp(0.0, 1.0);
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = pos - lo as f64;
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Type-7 quantile over an unsorted slice (copies and sorts).
pub fn quantile(xs: &[f64], p: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    quantile_sorted(&v, p)
}

/// Sample skewness g1 = m3 / m2^(3/2) using population moments; 0 when the
/// series is constant.
pub fn skewness(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let m2 = pop_variance(xs);
    if m2 == 0.0 || xs.is_empty() {
        return 0.0;
    }
    let m3 = xs.iter().map(|x| (x - m).powi(3)).sum::<f64>() / xs.len() as f64;
    m3 / m2.powf(1.5)
}

/// Excess kurtosis g2 = m4 / m2^2 - 3 using population moments; 0 when the
/// series is constant.
pub fn excess_kurtosis(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let m2 = pop_variance(xs);
    if m2 == 0.0 || xs.is_empty() {
        return 0.0;
    }
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / xs.len() as f64;
    m4 / (m2 * m2) - 3.0
}

/// Ordinary least squares fit y = slope*x + intercept, plus the coefficient
/// of determination r^2. Zero total variance in y yields r^2 = 0 by
/// convention (and slope 0).
pub fn ols_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let mx = mean(xs);
    let my = mean(ys);
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return (0.0, my, 0.0);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    if syy == 0.0 {
        return (slope, intercept, 0.0);
    }
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (slope * x + intercept);
            e * e
        })
        .sum();
    let r2 = 1.0 - ss_res / syy;
    let _ = n;
    (slope, intercept, r2)
}

/// Pearson correlation coefficient; NaN-free inputs assumed. Returns None if
/// either side has zero variance over the window.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    if a.len() < 2 {
        return None;
    }
    let ma = mean(a);
    let mb = mean(b);
    let mut saa = 0.0;
    let mut sbb = 0.0;
    let mut sab = 0.0;
    for (x, y) in a.iter().zip(b) {
        let da = x - ma;
        let db = y - mb;
        saa += da * da;
        sbb += db * db;
        sab += da * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

/// Average ranks (1-based, ties get the mean rank), used for Spearman.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&i, &j| xs[i].partial_cmp(&xs[j]).unwrap());
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = avg;
        }
        i = j + 1;
    }
    out
}

/// Format a float with 4 significant digits, the single rounding rule used
/// for every number that appears in rendered documents.
pub fn fmt_sig4(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = (3 - mag).max(0) as usize;
    let s = format!("{:.*}", decimals, x);
    // trim trailing zeros but keep integer part intact
    if s.contains('.') {
        let t = s.trim_end_matches('0').trim_end_matches('.');
        t.to_string()
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_type7() {
        // positions p*(n-1) with linear interpolation
        let v = [1.0, 2.0, 3.0, 4.0, 100.0];
        assert_eq!(quantile(&v, 0.25), 2.0);
        assert_eq!(quantile(&v, 0.75), 4.0);
        assert_eq!(quantile(&v, 0.5), 3.0);
        let w = [1.0, 2.0];
        assert_eq!(quantile(&w, 0.5), 1.5);
    }

    #[test]
    fn ols_exact_line() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let (a, b, r2) = ols_fit(&xs, &ys);
        assert!((a - 2.0).abs() < 1e-12);
        assert!((b - 1.0).abs() < 1e-12);
        assert!((r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ols_constant_y() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys = vec![3.0; 10];
        let (a, _, r2) = ols_fit(&xs, &ys);
        assert_eq!(a, 0.0);
        assert_eq!(r2, 0.0);
    }

    #[test]
    fn pearson_sign() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [2.0, 4.0, 6.0, 8.0];
        let c = [8.0, 6.0, 4.0, 2.0];
        assert!((pearson(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&a, &c).unwrap() + 1.0).abs() < 1e-12);
        assert!(pearson(&a, &[5.0; 4]).is_none());
    }

    #[test]
    fn ranks_with_ties() {
        assert_eq!(ranks(&[10.0, 20.0, 20.0, 30.0]), vec![1.0, 2.5, 2.5, 4.0]);
    }

    #[test]
    fn sig4_formatting() {
        assert_eq!(fmt_sig4(0.0), "0");
        assert_eq!(fmt_sig4(1234.5678), "1235");
        assert_eq!(fmt_sig4(0.0012345), "0.001234"); // round-half-even via format
        assert_eq!(fmt_sig4(3.14159), "3.142");
        assert_eq!(fmt_sig4(-2.5), "-2.5");
    }
}
