//! Statistics kernels: Pearson correlation, one-way ICC, Welch's t-test and
//! the special functions behind the Student-t distribution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Sample variance (n − 1 denominator).
pub fn sample_variance(xs: &[f64]) -> Option<f64> {
    let m = mean(xs)?;
    (xs.len() >= 2).then(|| xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64)
}

/// Standard error of the mean; `None` below two observations.
pub fn standard_error(xs: &[f64]) -> Option<f64> {
    sample_variance(xs).map(|v| (v / xs.len() as f64).sqrt())
}

/// Product-moment correlation of two equally long samples.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Domain(format!("length mismatch: {} vs {}", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::Domain("correlation needs at least two pairs".into()));
    }
    let mx = mean(xs).unwrap_or(0.0);
    let my = mean(ys).unwrap_or(0.0);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance in one input".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// [`pearson`] after dropping pairs with a missing side.
pub fn pearson_pairs(xs: &[Option<f64>], ys: &[Option<f64>]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Domain(format!("length mismatch: {} vs {}", xs.len(), ys.len())));
    }
    let (a, b): (Vec<f64>, Vec<f64>) = xs
        .iter()
        .zip(ys)
        .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
        .unzip();
    pearson(&a, &b)
}

/// One-way random-effects ICC(1) for possibly unbalanced groups:
/// `(MSB − MSW) / (MSB + (k0 − 1)·MSW)` with
/// `k0 = (N − Σnᵢ²/N) / (g − 1)`. Negative estimates are reported as 0.
pub fn icc_oneway(groups: &[Vec<f64>]) -> Result<f64> {
    let g = groups.len();
    if g < 2 {
        return Err(Error::Domain("ICC needs at least two groups".into()));
    }
    if groups.iter().any(Vec::is_empty) {
        return Err(Error::Domain("ICC groups must be non-empty".into()));
    }
    let n_total: usize = groups.iter().map(Vec::len).sum();
    if n_total <= g {
        return Err(Error::Domain("ICC needs more observations than groups".into()));
    }
    let n = n_total as f64;
    let grand = groups.iter().flatten().sum::<f64>() / n;
    let mut ssb = 0.0;
    let mut ssw = 0.0;
    for grp in groups {
        let m = grp.iter().sum::<f64>() / grp.len() as f64;
        ssb += grp.len() as f64 * (m - grand).powi(2);
        ssw += grp.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    }
    let msb = ssb / (g - 1) as f64;
    let msw = ssw / (n_total - g) as f64;
    let sum_sq: f64 = groups.iter().map(|grp| (grp.len() as f64).powi(2)).sum();
    let k0 = (n - sum_sq / n) / (g - 1) as f64;
    let denom = msb + (k0 - 1.0) * msw;
    if denom <= 0.0 {
        return Err(Error::Domain("ICC undefined: no variance in the data".into()));
    }
    Ok(((msb - msw) / denom).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided p-value.
    pub p: f64,
}

/// Welch's unequal-variance two-sample t-test.
pub fn welch_t(xs: &[f64], ys: &[f64]) -> Result<WelchTest> {
    if xs.len() < 2 || ys.len() < 2 {
        return Err(Error::Domain("each sample needs at least two observations".into()));
    }
    let (vx, vy) = (sample_variance(xs).unwrap_or(0.0), sample_variance(ys).unwrap_or(0.0));
    if vx == 0.0 && vy == 0.0 {
        return Err(Error::Domain("both samples are constant".into()));
    }
    let (nx, ny) = (xs.len() as f64, ys.len() as f64);
    let (a, b) = (vx / nx, vy / ny);
    let t = (mean(xs).unwrap_or(0.0) - mean(ys).unwrap_or(0.0)) / (a + b).sqrt();
    let df = (a + b).powi(2) / (a * a / (nx - 1.0) + b * b / (ny - 1.0));
    Ok(WelchTest { t, df, p: student_t_two_sided_p(t, df) })
}

/// `P(|T| ≥ |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    if !t.is_finite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    regularized_incomplete_beta(0.5 * df, 0.5, x).clamp(0.0, 1.0)
}

/// Student-t cumulative distribution function.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * student_t_two_sided_p(t, df);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

const LANCZOS_G: f64 = 7.0;
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

/// Natural log of the gamma function for `x > 0` (Lanczos approximation).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized incomplete beta `I_x(a, b)`, by Lentz's continued fraction.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = f64::from(m);
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

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1., 2., 3.], &[2., 4., 6.]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1., 2., 3.], &[3., 2., 1.]).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(pearson(&[1., 1., 1.], &[1., 2., 3.]), Err(Error::UndefinedCorrelation(_))));
        assert!(matches!(pearson(&[1.], &[1.]), Err(Error::Domain(_))));
        assert!(matches!(pearson(&[1., 2.], &[1.]), Err(Error::Domain(_))));
    }

    #[test]
    fn pearson_drops_missing_pairs() {
        let xs = [Some(1.0), None, Some(2.0), Some(3.0)];
        let ys = [Some(2.0), Some(100.0), Some(4.0), Some(6.0)];
        assert!((pearson_pairs(&xs, &ys).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn icc_examples() {
        let perfect = vec![vec![1., 1., 1.], vec![2., 2., 2.], vec![3., 3., 3.]];
        assert_eq!(icc_oneway(&perfect).unwrap(), 1.0);
        let none = vec![vec![1., 2., 3.], vec![1., 2., 3.], vec![1., 2., 3.]];
        assert_eq!(icc_oneway(&none).unwrap(), 0.0);
        assert!(icc_oneway(&[vec![1., 2.]]).is_err());
        assert!(icc_oneway(&[vec![1.], vec![2.]]).is_err());
        assert!(icc_oneway(&[vec![1., 1.], vec![1., 1.]]).is_err());
        assert!(icc_oneway(&[vec![], vec![1., 2.]]).is_err());
    }

    #[test]
    fn welch_examples() {
        let xs = [1., 2., 3., 4., 5.];
        let w = welch_t(&xs, &xs).unwrap();
        assert_eq!(w.t, 0.0);
        assert_eq!(w.p, 1.0);
        // reference values from scipy.stats.ttest_ind(equal_var=False)
        let w = welch_t(&xs, &[2., 3., 4., 5., 6.]).unwrap();
        assert!((w.t + 1.0).abs() < 1e-12);
        assert!((w.df - 8.0).abs() < 1e-12);
        assert!((w.p - 0.346_593_507_087_334_16).abs() < 1e-12);
        let w = welch_t(&[1.5, 2.25, 3.1, 9.0], &[0.2, 0.1, 0.4, 0.3, 0.35, 0.2]).unwrap();
        assert!((w.t - 2.164_560_392_222_792_3).abs() < 1e-12);
        assert!((w.df - 3.004_243_573_174_605_3).abs() < 1e-10);
        assert!((w.p - 0.118_936_494_520_820_58).abs() < 1e-11);
        assert!((student_t_two_sided_p(3.0, 4.5) - 0.034_380_867_888_759_61).abs() < 1e-12);
        assert!(welch_t(&[1.], &[1., 2.]).is_err());
        assert!(welch_t(&[1., 1.], &[2., 2.]).is_err());
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!(ln_gamma(2.0).abs() < 1e-14);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
        assert!((ln_gamma(10.0) - 362_880f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn incomplete_beta_closed_forms() {
        // I_x(a, 1) = x^a ; I_x(1, b) = 1 − (1 − x)^b
        for &x in &[0.01, 0.2, 0.5, 0.77, 0.99] {
            for &a in &[0.5, 1.0, 2.5, 7.0] {
                let v = regularized_incomplete_beta(a, 1.0, x);
                assert!(((v - x.powf(a)) / x.powf(a)).abs() < 1e-10, "a={a} x={x}");
                let w = regularized_incomplete_beta(1.0, a, x);
                let exact = 1.0 - (1.0 - x).powf(a);
                assert!(((w - exact) / exact).abs() < 1e-10, "b={a} x={x}");
            }
        }
    }

    proptest! {
        #[test]
        fn pearson_self_and_affine_invariance(xs in proptest::collection::vec(-100.0f64..100.0, 3..30), a in 0.1f64..10.0, b in -50.0f64..50.0) {
            prop_assume!(sample_variance(&xs).unwrap() > 1e-6);
            prop_assert!((pearson(&xs, &xs).unwrap() - 1.0).abs() < 1e-12);
            let ys: Vec<f64> = xs.iter().rev().cloned().collect();
            let r = pearson(&xs, &ys).unwrap();
            let scaled: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            prop_assert!((pearson(&scaled, &ys).unwrap() - r).abs() < 1e-9);
        }

        #[test]
        fn icc_relabel_and_shift_invariance(
            groups in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 1..6), 2..8),
            shift in -100.0f64..100.0,
        ) {
            let Ok(base) = icc_oneway(&groups) else { return Ok(()); };
            prop_assert!((0.0..=1.0).contains(&base));
            let mut rev = groups.clone();
            rev.reverse();
            prop_assert!((icc_oneway(&rev).unwrap() - base).abs() < 1e-9);
            let shifted: Vec<Vec<f64>> = groups.iter().map(|g| g.iter().map(|x| x + shift).collect()).collect();
            prop_assert!((icc_oneway(&shifted).unwrap() - base).abs() < 1e-6);
        }
    }
}
