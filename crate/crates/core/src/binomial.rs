//! Binomial probabilities in log space.
//!
//! Point masses use Loader's saddle-point expansion (`stirlerr` + `bd0`),
//! which keeps full relative precision for counts in the tens of thousands.
//! Tails are accumulated away from the mode so every summed term is smaller
//! than the first one and the recurrence cannot lose precision to
//! cancellation.

const LN_2PI: f64 = 1.837_877_066_409_345_5;

// ln(n!) - ln(sqrt(2 pi n) (n/e)^n) for n = 0, 1, ..., 15
const STIRLERR: [f64; 16] = [
    0.0,
    0.081_061_466_795_327_26,
    0.041_340_695_955_409_29,
    0.027_677_925_684_998_34,
    0.020_790_672_103_765_093,
    0.016_644_691_189_821_19,
    0.013_876_128_823_070_748,
    0.011_896_709_945_891_77,
    0.010_411_265_261_972_096,
    0.009_255_462_182_712_733,
    0.008_330_563_433_362_871,
    0.007_573_675_487_951_841,
    0.006_942_840_107_209_53,
    0.006_408_994_188_004_207,
    0.005_951_370_112_758_848,
    0.005_554_733_551_962_801,
];

fn stirlerr(n: u64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;

    if n <= 15 {
        return STIRLERR[n as usize];
    }
    let n = n as f64;
    let nn = n * n;
    if n > 500.0 {
        (S0 - S1 / nn) / n
    } else if n > 80.0 {
        (S0 - (S1 - S2 / nn) / nn) / n
    } else if n > 35.0 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / n
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
    }
}

/// Deviance term `x ln(x/np) + np - x`, evaluated by series when `x ≈ np`.
fn bd0(x: f64, np: f64) -> f64 {
    if (x - np).abs() < 0.1 * (x + np) {
        let mut v = (x - np) / (x + np);
        let mut s = (x - np) * v;
        if s.abs() < f64::MIN_POSITIVE {
            return s;
        }
        let mut ej = 2.0 * x * v;
        v *= v;
        for j in 1..1000 {
            ej *= v;
            let next = s + ej / (2 * j + 1) as f64;
            if next == s {
                return next;
            }
            s = next;
        }
    }
    x * (x / np).ln() + np - x
}

/// `ln P(X = k)` for `X ~ Binomial(n, p)`.
pub fn ln_pmf(k: u64, n: u64, p: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&p));
    if k > n {
        return f64::NEG_INFINITY;
    }
    let q = 1.0 - p;
    if p == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if q == 0.0 {
        return if k == n { 0.0 } else { f64::NEG_INFINITY };
    }
    let nf = n as f64;
    if k == 0 {
        return if p < q { nf * (-p).ln_1p() } else { nf * q.ln() };
    }
    if k == n {
        return if q < p { nf * (-q).ln_1p() } else { nf * p.ln() };
    }
    let kf = k as f64;
    let lc = stirlerr(n) - stirlerr(k) - stirlerr(n - k) - bd0(kf, nf * p) - bd0(nf - kf, nf * q);
    let lf = LN_2PI + kf.ln() + (-kf / nf).ln_1p();
    lc - 0.5 * lf
}

/// Sum of `1 + r_1 + r_1 r_2 + ...` for ratios supplied lazily, stopping
/// once further terms no longer change the sum.
fn geometric_like_sum(mut ratio: impl FnMut(u64) -> Option<f64>) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let mut step = 0;
    while let Some(r) = ratio(step) {
        term *= r;
        if term < sum * f64::EPSILON * 0.25 {
            break;
        }
        sum += term;
        step += 1;
    }
    sum
}

/// `ln P(X ≥ k)` for `X ~ Binomial(n, p)`.
pub fn ln_upper_tail(k: u64, n: u64, p: f64) -> f64 {
    if k == 0 {
        return 0.0;
    }
    if k > n {
        return f64::NEG_INFINITY;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return 0.0;
    }
    let q = 1.0 - p;
    let odds = p / q;
    let mean = n as f64 * p;

    if k as f64 > mean {
        // terms decrease from j = k upwards
        let sum = geometric_like_sum(|step| {
            let j = k + step;
            (j < n).then(|| (n - j) as f64 / (j + 1) as f64 * odds)
        });
        (ln_pmf(k, n, p) + sum.ln()).min(0.0)
    } else {
        // 1 - P(X <= k-1); terms decrease from j = k-1 downwards
        let top = k - 1;
        let sum = geometric_like_sum(|step| {
            let j = top.checked_sub(step)?;
            (j > 0).then(|| j as f64 / (n - j + 1) as f64 / odds)
        });
        let lower = (ln_pmf(top, n, p) + sum.ln()).exp();
        (-lower.min(1.0)).ln_1p()
    }
}

/// `P(X ≥ k)` for `X ~ Binomial(n, p)`.
pub fn upper_tail(k: u64, n: u64, p: f64) -> f64 {
    ln_upper_tail(k, n, p).exp()
}

/// Upper tail of the normal approximation with continuity correction.
pub fn upper_tail_normal(k: u64, n: u64, p: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let nf = n as f64;
    let sd = (nf * p * (1.0 - p)).sqrt();
    if sd == 0.0 {
        return if (k as f64) <= nf * p { 1.0 } else { 0.0 };
    }
    let z = (k as f64 - 0.5 - nf * p) / sd;
    0.5 * statrs::function::erf::erfc(z / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ln_choose_naive(n: u64, k: u64) -> f64 {
        (1..=k).map(|i| ((n - k + i) as f64).ln() - (i as f64).ln()).sum()
    }

    #[test]
    fn stirlerr_table_matches_series_at_boundary() {
        // the series used for n > 15 should already be close at 15
        let n = 15.0_f64;
        let nn = n * n;
        let series = (1.0 / 12.0 - (1.0 / 360.0 - (1.0 / 1260.0 - (1.0 / 1680.0 - 1.0 / 1188.0 / nn) / nn) / nn) / nn) / n;
        assert!((series - STIRLERR[15]).abs() < 1e-12);
    }

    #[test]
    fn pmf_matches_naive_log_binomial() {
        for &(k, n, p) in &[(3u64, 10u64, 0.3f64), (50, 100, 0.5), (0, 7, 0.2), (7, 7, 0.9), (123, 210, 0.5)] {
            let naive = ln_choose_naive(n, k) + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln();
            assert!((ln_pmf(k, n, p) - naive).abs() < 1e-11, "k={k} n={n}");
        }
    }

    #[test]
    fn pmf_sums_to_one() {
        let n = 400;
        let total: f64 = (0..=n).map(|k| ln_pmf(k, n, 0.37).exp()).sum();
        assert!((total - 1.0).abs() < 1e-13);
    }

    #[test]
    fn tail_edges() {
        assert_eq!(upper_tail(0, 5, 0.5), 1.0);
        assert_eq!(upper_tail(6, 5, 0.5), 0.0);
        assert!((upper_tail(2, 2, 0.5) - 0.25).abs() < 1e-15);
        assert!((upper_tail(1, 1, 0.5) - 0.5).abs() < 1e-15);
        assert!((upper_tail(5, 5, 0.5) - 1.0 / 32.0).abs() < 1e-16);
    }

    #[test]
    fn tail_is_stable_at_large_n() {
        let lp = ln_upper_tail(16_000, 25_000, 0.5);
        assert!(lp.is_finite() && lp < -600.0);
        let near_one = upper_tail(12_000, 25_000, 0.5);
        assert!(near_one > 0.999_999 && near_one <= 1.0);
    }

    #[test]
    fn normal_tail_is_close_for_moderate_n() {
        let exact = upper_tail(123, 210, 0.5);
        let approx = upper_tail_normal(123, 210, 0.5);
        assert!((exact - approx).abs() < 1e-3);
    }
}
