//! Shared fixtures and independent oracles for integration tests.
#![allow(dead_code)]

use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};

use effectmod::pairs::OutcomePair;
use effectmod::{PairRecord, PairSet};

pub const GROUP_IDS: [&str; 5] = ["1", "2", "3", "4", "5"];
pub const GROUP_SIZES: [u64; 5] = [10127, 5636, 2943, 2086, 2923];

/// Published discordant counts and odds ratios per group (mortality).
pub const MORTALITY_D: [u64; 5] = [210, 293, 488, 217, 760];
pub const MORTALITY_OR: [f64; 5] = [1.41, 1.53, 1.09, 1.28, 1.18];
/// `(control-only, treated-only)` splits recovered by [`recover_splits`].
pub const MORTALITY_SPLITS: [(u64, u64); 5] = [(123, 87), (177, 116), (254, 234), (122, 95), (411, 349)];
/// Pairs where both members died; reproduces the 1-d.p. event rates.
pub const MORTALITY_BOTH: [u64; 5] = [6, 23, 63, 7, 133];

pub const ICU_D: [u64; 5] = [2675, 2361, 1282, 859, 970];
pub const ICU_OR: [f64; 5] = [1.63, 2.05, 1.67, 1.70, 1.88];
pub const ICU_SPLITS: [(u64, u64); 5] = [(1659, 1016), (1586, 775), (801, 481), (541, 318), (633, 337)];
pub const ICU_BOTH: [u64; 5] = [536, 854, 1101, 537, 1704];

pub const MORTALITY_GRID: [f64; 6] = [1.00, 1.05, 1.10, 1.15, 1.17, 1.20];
/// `MORTALITY_BOUNDS[k][g]`: published bound for group `g` at `MORTALITY_GRID[k]`.
pub const MORTALITY_BOUNDS: [[f64; 5]; 6] = [
    [0.008, 0.000, 0.195, 0.039, 0.013],
    [0.019, 0.001, 0.374, 0.080, 0.062],
    [0.042, 0.003, 0.576, 0.143, 0.184],
    [0.079, 0.010, 0.753, 0.230, 0.386],
    [0.099, 0.015, 0.809, 0.270, 0.479],
    [0.135, 0.025, 0.875, 0.335, 0.616],
];
pub const MORTALITY_COMBINED: [f64; 6] = [0.000, 0.000, 0.012, 0.032, 0.044, 0.163];

pub const ICU_GRID: [f64; 6] = [1.0, 1.5, 1.6, 1.7, 1.8, 1.9];
pub const ICU_BOUNDS: [[f64; 5]; 6] = [
    [0.000, 0.000, 0.000, 0.000, 0.000],
    [0.017, 0.000, 0.037, 0.040, 0.000],
    [0.312, 0.000, 0.254, 0.203, 0.009],
    [0.849, 0.000, 0.651, 0.511, 0.074],
    [0.993, 0.002, 0.916, 0.798, 0.276],
    [1.000, 0.047, 0.989, 0.945, 0.582],
];
pub const ICU_COMBINED: [f64; 6] = [0.000, 0.000, 0.000, 0.000, 0.049, 0.235];

/// Group 2 cross-classification, `[control][treated]` over
/// dead / alive with ICU / alive without ICU.
pub const GROUP2_CROSSTAB: [[u64; 3]; 3] = [[23, 72, 105], [60, 744, 1493], [56, 726, 2357]];

/// Outcome list with `both` concordant events, `control_only`, `treated_only`
/// and the remainder concordant without events, in that order.
pub fn outcome_sequence(n: u64, both: u64, control_only: u64, treated_only: u64) -> Vec<OutcomePair> {
    assert!(both + control_only + treated_only <= n);
    let mut v = Vec::with_capacity(n as usize);
    v.extend((0..both).map(|_| OutcomePair::new(true, true)));
    v.extend((0..control_only).map(|_| OutcomePair::new(false, true)));
    v.extend((0..treated_only).map(|_| OutcomePair::new(true, false)));
    v.extend((v.len() as u64..n).map(|_| OutcomePair::new(false, false)));
    v
}

/// 23,715 pairs with a `group` covariate and `death`/`icu` outcomes whose
/// per-group discordant counts match the published tables.
pub fn published_pairs() -> PairSet {
    let mut set = PairSet::new(vec!["group".into()], vec!["death".into(), "icu".into()]);
    for g in 0..5 {
        let n = GROUP_SIZES[g];
        let (mt, mc) = MORTALITY_SPLITS[g];
        let (it, ic) = ICU_SPLITS[g];
        let death = outcome_sequence(n, MORTALITY_BOTH[g], mt, mc);
        let icu = outcome_sequence(n, ICU_BOTH[g], it, ic);
        for (d, i) in death.into_iter().zip(icu) {
            set.pairs.push(PairRecord {
                pair_id: (set.pairs.len() + 1).to_string(),
                covariates: vec![GROUP_IDS[g].to_string()],
                outcomes: vec![d, i],
            });
        }
    }
    set
}

/// `num / den` rounded to `f64`; tiny values may flush to zero.
pub fn ratio_to_f64(num: &BigUint, den: &BigUint) -> f64 {
    if num.is_zero() {
        return 0.0;
    }
    let shift = den.bits() as i64 - num.bits() as i64 + 64;
    let q = if shift >= 0 {
        ((num << shift as u64) / den).to_f64().unwrap()
    } else {
        ((num >> (-shift) as u64) / den).to_f64().unwrap()
    };
    let half = (shift / 2) as i32;
    q * 2f64.powi(-half) * 2f64.powi(-(shift as i32 - half))
}

/// Exact `P(X ≥ t)` for `t = 0..=d`, `X ~ Binomial(d, a/(a+b))`, by
/// summing integer terms `C(d,k) a^k b^(d-k)` over `(a+b)^d`.
pub fn exact_upper_tails(d: u64, a: u64, b: u64) -> Vec<f64> {
    let den = BigUint::from(a + b).pow(d as u32);
    let mut term = BigUint::from(a).pow(d as u32);
    let mut acc = BigUint::zero();
    let mut tails = vec![0.0; d as usize + 1];
    for k in (0..=d).rev() {
        acc += &term;
        tails[k as usize] = ratio_to_f64(&acc, &den);
        if k > 0 {
            // C(d,k-1) a^(k-1) b^(d-k+1) from C(d,k) a^k b^(d-k)
            term = term * BigUint::from(k) * BigUint::from(b) / (BigUint::from(d - k + 1) * BigUint::from(a));
        }
    }
    tails
}

/// `Γ = hundredths / 100` as the success probability numerator/denominator pair.
pub fn gamma_ratio(gamma: f64) -> (u64, u64) {
    let a = (gamma * 100.0).round() as u64;
    assert!((a as f64 / 100.0 - gamma).abs() < 1e-12, "gamma {gamma} is not a multiple of 0.01");
    (a, 100)
}

#[derive(Debug, Clone)]
pub struct SplitRecovery {
    /// `(T, D - T)` candidates agreeing with the odds ratio and the `Γ = 1` entry.
    pub candidates: Vec<(u64, u64)>,
    pub chosen: (u64, u64),
    /// Largest absolute deviation from the published row at the chosen split.
    pub max_deviation: f64,
}

/// Integer search for the discordant split of one group: keep every `T`
/// whose 2-d.p. odds ratio and 3-d.p. exact `Γ = 1` tail match the table,
/// then choose the candidate closest to the whole published row.
pub fn recover_split(d: u64, odds_ratio: f64, gammas: &[f64], published: &[f64]) -> SplitRecovery {
    let tails: Vec<Vec<f64>> = gammas
        .iter()
        .map(|&g| {
            let (a, b) = gamma_ratio(g);
            exact_upper_tails(d, a, b)
        })
        .collect();
    let or_text = format!("{odds_ratio:.2}");
    let k1 = gammas.iter().position(|&g| g == 1.0).expect("grid contains 1");
    let p1_text = format!("{:.3}", published[k1]);
    let candidates: Vec<(u64, u64)> = (1..d)
        .filter(|&t| format!("{:.2}", t as f64 / (d - t) as f64) == or_text)
        .filter(|&t| format!("{:.3}", tails[k1][t as usize]) == p1_text)
        .map(|t| (t, d - t))
        .collect();
    assert!(!candidates.is_empty(), "no split for D={d}, OR={odds_ratio}");
    let deviation = |t: u64| {
        tails
            .iter()
            .zip(published)
            .map(|(row, p)| (row[t as usize] - p).abs())
            .fold(0.0, f64::max)
    };
    let chosen = *candidates
        .iter()
        .min_by(|x, y| deviation(x.0).partial_cmp(&deviation(y.0)).unwrap())
        .unwrap();
    SplitRecovery {
        max_deviation: deviation(chosen.0),
        candidates,
        chosen,
    }
}

/// Row `g` of a `[gamma][group]` table.
pub fn column(table: &[[f64; 5]; 6], g: usize) -> Vec<f64> {
    table.iter().map(|row| row[g]).collect()
}
