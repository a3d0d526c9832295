use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// ln Γ(x) for x > 0 (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        let s = (std::f64::consts::PI * x).sin();
        return std::f64::consts::PI.ln() - s.abs().ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + 7.5;
    for (k, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + k as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=1000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b).
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Two-sided p-value of a Student t statistic.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    inc_beta(df / 2.0, 0.5, df / (df + t * t))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: Option<f64>,
    pub df: usize,
    pub p: Option<f64>,
    pub mean_diff: f64,
    /// Differences have zero variance; no p-value is reported.
    pub degenerate: bool,
}

/// Paired two-sided t-test on a − b.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "paired t-test needs two equal-length samples of size >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let df = a.len() - 1;
    let all_equal = d.iter().all(|&x| x == d[0]);
    if var == 0.0 || all_equal {
        return Ok(TTest {
            t: None,
            df,
            p: None,
            mean_diff: mean,
            degenerate: true,
        });
    }
    let t = mean / (var / n).sqrt();
    Ok(TTest {
        t: Some(t),
        df,
        p: Some(t_two_sided_p(t, df as f64)),
        mean_diff: mean,
        degenerate: false,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationKind {
    Pearson,
    Spearman,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub coef: Option<f64>,
    pub p: Option<f64>,
    /// An input is constant.
    pub undefined: bool,
}

/// Average ranks (1-based), ties share their mean rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(x: &[f64], y: &[f64]) -> Correlation {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Correlation {
            coef: None,
            p: None,
            undefined: true,
        };
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = n - 2.0;
    let p = if r.abs() == 1.0 {
        0.0
    } else {
        t_two_sided_p(r * (df / (1.0 - r * r)).sqrt(), df)
    };
    Correlation {
        coef: Some(r),
        p: Some(p),
        undefined: false,
    }
}

pub fn rank_correlation(x: &[f64], y: &[f64], kind: CorrelationKind) -> Result<Correlation> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "correlation needs equal lengths >= 3, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    Ok(match kind {
        CorrelationKind::Pearson => pearson(x, y),
        CorrelationKind::Spearman => pearson(&average_ranks(x), &average_ranks(y)),
    })
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n − 1); 0 for a single value.
pub fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Nearest-rank percentile of sorted data, `q` in [0, 1].
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let k = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, StudentsT};
    use statrs::function::gamma::ln_gamma as sr_ln_gamma;

    #[test]
    fn ln_gamma_matches_reference() {
        for &x in &[0.1, 0.5, 1.0, 2.5, 7.0, 30.5, 170.0] {
            assert!((ln_gamma(x) - sr_ln_gamma(x)).abs() < 1e-10 * (1.0 + sr_ln_gamma(x).abs()));
        }
    }

    #[test]
    fn degenerate_cases() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!(paired_t_test(&a, &a).unwrap().degenerate);
        let b = [0.0, 1.0, 2.0, 3.0];
        let t = paired_t_test(&a, &b).unwrap();
        assert!(t.degenerate && t.p.is_none());
        assert!(paired_t_test(&a, &b[..3]).is_err());
    }

    #[test]
    fn correlation_limits() {
        let x = [1.0, 2.0, 3.0, 5.0, 8.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        for k in [CorrelationKind::Pearson, CorrelationKind::Spearman] {
            assert_eq!(rank_correlation(&x, &x, k).unwrap().coef, Some(1.0));
            assert_eq!(rank_correlation(&x, &neg, k).unwrap().coef, Some(-1.0));
            assert!(rank_correlation(&x, &[2.0; 5], k).unwrap().undefined);
        }
    }

    #[test]
    fn hand_ranked_spearman() {
        let x = [10.0, 20.0, 20.0, 40.0, 50.0, 30.0];
        let y = [1.0, 3.0, 2.0, 6.0, 4.0, 5.0];
        assert_eq!(average_ranks(&x), vec![1.0, 2.5, 2.5, 5.0, 6.0, 4.0]);
        // ranks of y: 1,3,2,6,4,5; Pearson on the rank vectors by hand
        let rx = [1.0, 2.5, 2.5, 5.0, 6.0, 4.0];
        let ry = [1.0, 3.0, 2.0, 6.0, 4.0, 5.0];
        let dot: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - 3.5) * (b - 3.5)).sum();
        let nx: f64 = rx.iter().map(|a| (a - 3.5f64).powi(2)).sum();
        let ny: f64 = ry.iter().map(|a| (a - 3.5f64).powi(2)).sum();
        let want = dot / (nx * ny).sqrt();
        let got = rank_correlation(&x, &y, CorrelationKind::Spearman).unwrap().coef.unwrap();
        assert!((got - want).abs() < 1e-15);
    }

    #[test]
    fn nearest_rank_percentiles() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(nearest_rank(&s, 0.025), 1.0);
        assert_eq!(nearest_rank(&s, 0.5), 2.0);
        assert_eq!(nearest_rank(&s, 0.975), 4.0);
    }

    proptest! {
        #[test]
        fn t_cdf_matches_reference(t in -30.0f64..30.0, df in 1usize..60) {
            let dist = StudentsT::new(0.0, 1.0, df as f64).unwrap();
            let want = 2.0 * (1.0 - dist.cdf(t.abs()));
            let got = t_two_sided_p(t, df as f64);
            prop_assert!((got - want).abs() < 1e-10, "t={} df={} got={} want={}", t, df, got, want);
        }
    }
}
