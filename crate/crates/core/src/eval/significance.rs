//! Welch and paired t tests, one-way ANOVA and Holm correction. p values
//! come from the regularized incomplete beta function.

use serde::{Deserialize, Serialize};

use crate::stats;
use crate::{Error, Result};

const CF_TOL: f64 = 1e-12;
const CF_MAX_ITER: usize = 10_000;
const TINY: f64 = 1e-300;

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

/// `ln Γ(x)` for `x > 0` (Lanczos approximation).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
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
        if (del - 1.0).abs() < CF_TOL {
            break;
        }
    }
    h
}

/// `I_x(a, b)`.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) || !(0.0..=1.0).contains(&x) {
        return Err(Error::domain(format!("incomplete beta undefined for x={x}, a={a}, b={b}")));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(x);
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    let v = if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    };
    Ok(v.clamp(0.0, 1.0))
}

/// Two-sided tail probability of Student's t.
fn student_two_sided(t: f64, df: f64) -> Result<f64> {
    if t.is_infinite() {
        return Ok(0.0);
    }
    regularized_incomplete_beta(df / (df + t * t), df / 2.0, 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub df: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    /// Mean of `a` is smaller.
    Less,
    /// Mean of `a` is larger.
    Greater,
}

/// Two-sided Welch t test with Welch–Satterthwaite degrees of freedom.
/// Two constant samples with equal means give `t = 0, p = 1`.
pub fn welch_ttest(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::domain("Welch test needs at least two values per sample"));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (stats::mean(a), stats::mean(b));
    let (va, vb) = (stats::sample_variance(a) / na, stats::sample_variance(b) / nb);
    let se2 = va + vb;
    if se2 == 0.0 {
        let p = if ma == mb { 1.0 } else { 0.0 };
        let t = if ma == mb { 0.0 } else { (ma - mb).signum() * f64::INFINITY };
        return Ok(TestResult {
            statistic: t,
            df: na + nb - 2.0,
            p_value: p,
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    Ok(TestResult {
        statistic: t,
        df,
        p_value: student_two_sided(t, df)?,
    })
}

fn one_sided(two: TestResult, alternative: Alternative) -> TestResult {
    let half = two.p_value / 2.0;
    let toward = match alternative {
        Alternative::Less => two.statistic < 0.0,
        Alternative::Greater => two.statistic > 0.0,
    };
    let p = if two.statistic == 0.0 {
        0.5
    } else if toward {
        half
    } else {
        1.0 - half
    };
    TestResult { p_value: p, ..two }
}

pub fn welch_ttest_one_sided(a: &[f64], b: &[f64], alternative: Alternative) -> Result<TestResult> {
    welch_ttest(a, b).map(|r| one_sided(r, alternative))
}

/// Paired t test on `a[i] - b[i]`, one-sided in the given direction.
pub fn paired_ttest(a: &[f64], b: &[f64], alternative: Alternative) -> Result<TestResult> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::domain("paired test needs two equal-length samples of at least two values"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let m = stats::mean(&d);
    let se = (stats::sample_variance(&d) / n).sqrt();
    let df = n - 1.0;
    let two = if se == 0.0 {
        TestResult {
            statistic: if m == 0.0 { 0.0 } else { m.signum() * f64::INFINITY },
            df,
            p_value: if m == 0.0 { 1.0 } else { 0.0 },
        }
    } else {
        let t = m / se;
        TestResult {
            statistic: t,
            df,
            p_value: student_two_sided(t, df)?,
        }
    };
    Ok(one_sided(two, alternative))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub f: f64,
    pub df_between: f64,
    pub df_within: f64,
    pub p_value: f64,
}

/// One-way ANOVA over `groups`.
pub fn anova(groups: &[Vec<f64>]) -> Result<AnovaResult> {
    if groups.len() < 2 || groups.iter().any(|g| g.len() < 2) {
        return Err(Error::domain("ANOVA needs at least two groups of at least two values"));
    }
    let all: Vec<f64> = groups.iter().flatten().copied().collect();
    let grand = stats::mean(&all);
    if all.iter().all(|&v| v == all[0]) {
        return Err(Error::Degenerate("all values identical, F is undefined".into()));
    }
    let k = groups.len() as f64;
    let n = all.len() as f64;
    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for g in groups {
        let m = stats::mean(g);
        ss_between += g.len() as f64 * (m - grand).powi(2);
        ss_within += g.iter().map(|v| (v - m).powi(2)).sum::<f64>();
    }
    let (d1, d2) = (k - 1.0, n - k);
    let (f, p) = if ss_within == 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        let f = (ss_between / d1) / (ss_within / d2);
        (f, regularized_incomplete_beta(d2 / (d2 + d1 * f), d2 / 2.0, d1 / 2.0)?)
    };
    Ok(AnovaResult {
        f,
        df_between: d1,
        df_within: d2,
        p_value: p,
    })
}

/// Holm step-down adjusted p values, in input order.
pub fn holm_adjust(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut out = vec![0.0; m];
    let mut running: f64 = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        running = running.max(((m - rank) as f64 * p[i]).min(1.0));
        out[i] = running;
    }
    out
}
