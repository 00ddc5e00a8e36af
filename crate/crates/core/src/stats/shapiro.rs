use statrs::distribution::{ContinuousCDF, Normal};

use super::{GroupTestResult, StatsError, StatsResult};

const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056];
const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
const C3: [f64; 4] = [0.544, -0.39978, 0.025054, -6.714e-4];
const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
const G: [f64; 2] = [-2.273, 0.459];

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

/// Half of the antisymmetric coefficient vector: `a[i]` weights
/// `x₍ₙ₋ᵢ₎ − x₍ᵢ₊₁₎` for `i < n/2`.
fn coefficients(n: usize) -> Vec<f64> {
    let half = n / 2;
    if n == 3 {
        return vec![std::f64::consts::FRAC_1_SQRT_2];
    }
    let normal = Normal::standard();
    let an25 = n as f64 + 0.25;
    // positive expected order statistics of the upper half
    let m: Vec<f64> = (1..=half)
        .map(|i| -normal.inverse_cdf((i as f64 - 0.375) / an25))
        .collect();
    let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
    let ssumm2 = summ2.sqrt();
    let rsn = 1.0 / (n as f64).sqrt();
    let a1 = poly(&C1, rsn) + m[0] / ssumm2;
    let mut a = vec![0.0; half];
    a[0] = a1;
    let (first, fac) = if n > 5 {
        let a2 = m[1] / ssumm2 + poly(&C2, rsn);
        a[1] = a2;
        let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1]) / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2)).sqrt();
        (2, fac)
    } else {
        let fac = ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt();
        (1, fac)
    };
    for i in first..half {
        a[i] = m[i] / fac;
    }
    a
}

/// Shapiro–Wilk normality test, Royston (1995) approximation, 3 ≤ n ≤ 5000.
pub fn shapiro_wilk(x: &[f64]) -> StatsResult<GroupTestResult> {
    let n = x.len();
    if n < 3 {
        return Err(StatsError::TooFewObservations { needed: 2, got: n });
    }
    if n > 5000 {
        return Err(StatsError::InvalidInput(format!("Shapiro-Wilk supports n ≤ 5000, got {n}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::InvalidInput("Shapiro-Wilk input contains non-finite values".into()));
    }
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let range = s[n - 1] - s[0];
    if !(range > 0.0) {
        return Err(StatsError::ZeroVariance);
    }
    // scale for conditioning; W is scale invariant
    for v in &mut s {
        *v /= range;
    }
    let mean = s.iter().sum::<f64>() / n as f64;
    let ss: f64 = s.iter().map(|v| (v - mean).powi(2)).sum();
    let a = coefficients(n);
    let num: f64 = a
        .iter()
        .enumerate()
        .map(|(i, ai)| ai * (s[n - 1 - i] - s[i]))
        .sum();
    let w = (num * num / ss).min(1.0);

    let p = if n == 3 {
        let pi6 = 6.0 / std::f64::consts::PI;
        let stqr = std::f64::consts::FRAC_PI_3;
        (pi6 * (w.sqrt().asin() - stqr)).max(0.0).min(1.0)
    } else {
        let w1 = 1.0 - w;
        if w1 <= 0.0 {
            1.0
        } else {
            let nf = n as f64;
            let mut y = w1.ln();
            let (m, sdev) = if n <= 11 {
                let gamma = poly(&G, nf);
                if y >= gamma {
                    return Ok(result(w, 1e-99, n));
                }
                y = -(gamma - y).ln();
                (poly(&C3, nf), poly(&C4, nf).exp())
            } else {
                let ln = nf.ln();
                (poly(&C5, ln), poly(&C6, ln).exp())
            };
            Normal::new(m, sdev).map_or(f64::NAN, |d| d.sf(y))
        }
    };
    Ok(result(w, p, n))
}

fn result(w: f64, p: f64, n: usize) -> GroupTestResult {
    GroupTestResult {
        method: "shapiro-wilk".into(),
        statistic: w,
        p_value: p.clamp(0.0, 1.0),
        df: None,
        n_a: n,
        n_b: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check(x: &[f64], w: f64, p: f64) {
        let r = shapiro_wilk(x).unwrap();
        // the reference implementation evaluates in single precision
        assert!((r.statistic - w).abs() < 2e-6, "W {} vs {w}", r.statistic);
        assert!((r.p_value - p).abs() < 1e-4 * p.max(1e-3), "p {} vs {p}", r.p_value);
    }

    #[test]
    fn scipy_reference_values() {
        check(&[1.0, 2.0, 4.0], 0.9642857142857142, 0.6368868450289689);
        check(&[1.0, 2.0, 3.0, 4.0, 7.0], 0.9427295841220419, 0.685295513179879);
        check(&[2.5, 1.1, 3.7, 4.0, 9.2, 0.3, 5.5, 6.1], 0.9701054344076534, 0.8988342534573439);
        let sq: Vec<f64> = (1..12).map(|i| 0.1 * (i * i) as f64).collect();
        check(&sq, 0.9186320447076226, 0.30741084707592314);
        let wave: Vec<f64> = (1..31).map(|i| (i as f64).sin() + 0.01 * i as f64).collect();
        check(&wave, 0.909474099809461, 0.014433152851295318);
    }

    #[test]
    fn normal_quantiles_look_normal() {
        let normal = Normal::standard();
        let q: Vec<f64> = (1..=50).map(|i| normal.inverse_cdf((i as f64 - 0.375) / 50.25)).collect();
        let r = shapiro_wilk(&q).unwrap();
        assert!(r.statistic > 0.99);
        assert!(r.p_value > 0.5);
        assert!((r.statistic - 0.9984740698028733).abs() < 2e-6);
    }

    #[test]
    fn lognormal_is_rejected() {
        let normal = Normal::standard();
        let x: Vec<f64> = (1..=200).map(|i| normal.inverse_cdf((i as f64 - 0.375) / 200.25).exp()).collect();
        let r = shapiro_wilk(&x).unwrap();
        assert!(r.p_value < 0.001);
        assert!((r.statistic - 0.6633212383074829).abs() < 2e-6);
    }

    #[test]
    fn triples_in_range() {
        for t in [[0.0, 1.0, 2.0], [0.0, 0.1, 5.0], [-3.0, 2.0, 2.5]] {
            let r = shapiro_wilk(&t).unwrap();
            assert!(r.statistic > 0.0 && r.statistic <= 1.0);
            assert!((0.0..=1.0).contains(&r.p_value));
        }
    }

    #[test]
    fn constant_sample_rejected() {
        assert_eq!(shapiro_wilk(&[2.0; 10]).unwrap_err(), StatsError::ZeroVariance);
    }

    #[test]
    fn coefficients_are_normalized() {
        for n in [4, 5, 6, 11, 12, 50, 999, 5000] {
            let a = coefficients(n);
            let s: f64 = a.iter().map(|v| 2.0 * v * v).sum();
            assert!((s - 1.0).abs() < 1e-12, "n {n}: {s}");
        }
    }
}
