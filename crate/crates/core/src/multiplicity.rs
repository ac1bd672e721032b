//! Truncated-product combination of P-value bounds and closed testing over
//! all intersections of group hypotheses.
//!
//! Every P-value is handled through its logarithm: at `Γ = 1` the group
//! bounds for large discordant counts are far below `f64::MIN_POSITIVE`, and
//! so is their product.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairs::SummaryTable;
use crate::sensitivity::{summary_upper_pvalue, Direction, GammaValue, TailMethod};

pub const DEFAULT_TAU: f64 = 0.1;
pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_MAX_GROUPS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedProductParams {
    pub tau: f64,
    pub alpha: f64,
    /// Largest number of groups for which all `2^G - 1` subsets are enumerated.
    pub max_groups: usize,
}

impl Default for TruncatedProductParams {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            alpha: DEFAULT_ALPHA,
            max_groups: DEFAULT_MAX_GROUPS,
        }
    }
}

impl TruncatedProductParams {
    pub fn new(tau: f64, alpha: f64) -> Result<Self> {
        let p = Self {
            tau,
            alpha,
            ..Self::default()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_tau(self.tau)?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0,1), got {}", self.alpha)));
        }
        Ok(())
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("tau must lie in (0,1], got {tau}")))
    }
}

fn check_ln_p(ln_p: f64) -> Result<()> {
    if ln_p.is_nan() || ln_p > 0.0 {
        Err(Error::invalid(format!("P-value {} outside [0,1]", ln_p.exp())))
    } else {
        Ok(())
    }
}

/// Streaming `ln Σ exp(x_i)`.
struct LogSum {
    max: f64,
    sum: f64,
}

impl LogSum {
    fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    fn add(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if x <= self.max {
            self.sum += (x - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        }
    }

    fn value(&self) -> f64 {
        if self.sum == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

/// `ln Σ_{s<k} x^s / s!`, summed in linear space with rescaling.
fn ln_exp_partial_sum(x: f64, k: usize) -> f64 {
    const BIG: f64 = 1e280;
    if x > 1e10 {
        let (ln_x, mut ln_fact, mut acc) = (x.ln(), 0.0, LogSum::new());
        acc.add(0.0);
        for s in 1..k {
            ln_fact += (s as f64).ln();
            acc.add(s as f64 * ln_x - ln_fact);
        }
        return acc.value();
    }
    let (mut term, mut sum, mut ln_scale) = (1.0f64, 1.0f64, 0.0f64);
    for s in 1..k {
        term *= x / s as f64;
        sum += term;
        if sum > BIG {
            term /= BIG;
            sum /= BIG;
            ln_scale += BIG.ln();
        }
    }
    ln_scale + sum.ln()
}

/// `ln W` where `W` is the product of the P-values not exceeding `tau`.
pub fn ln_truncated_product_stat(ln_pvalues: &[f64], tau: f64) -> Result<f64> {
    if ln_pvalues.is_empty() {
        return Err(Error::invalid("truncated product of an empty list"));
    }
    check_tau(tau)?;
    let ln_tau = tau.ln();
    let mut acc = 0.0;
    for &lp in ln_pvalues {
        check_ln_p(lp)?;
        if lp <= ln_tau {
            acc += lp;
        }
    }
    Ok(acc)
}

/// `W = Π p_i^{1(p_i ≤ τ)}`; 1 when no P-value is at or below `tau`.
pub fn truncated_product_stat(pvalues: &[f64], tau: f64) -> Result<f64> {
    let ln: Vec<f64> = pvalues.iter().map(|p| p.ln()).collect();
    Ok(ln_truncated_product_stat(&ln, tau)?.exp())
}

/// `ln P(W ≤ w)` for `W` built from `n` independent uniforms.
///
/// Closed form of the null distribution, summed over the number `k` of
/// P-values falling below `tau`:
/// `Σ_k C(n,k)(1-τ)^(n-k) [τ^k if w > τ^k, else w Σ_{s<k} (k ln τ - ln w)^s / s!]`.
pub fn ln_truncated_product_cdf(ln_w: f64, n: usize, tau: f64) -> f64 {
    if ln_w >= 0.0 {
        return 0.0;
    }
    if ln_w == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let ln_tau = tau.ln();
    let ln_keep = (-tau).ln_1p();
    let mut ln_choose = 0.0;
    let mut total = LogSum::new();
    for k in 1..=n {
        ln_choose += ((n - k + 1) as f64 / k as f64).ln();
        let rest = n - k;
        if rest > 0 && tau == 1.0 {
            continue;
        }
        let base = ln_choose + if rest == 0 { 0.0 } else { rest as f64 * ln_keep };
        let k_ln_tau = k as f64 * ln_tau;
        if ln_w > k_ln_tau {
            total.add(base + k_ln_tau);
        } else {
            total.add(base + ln_w + ln_exp_partial_sum(k_ln_tau - ln_w, k));
        }
    }
    total.value().min(0.0)
}

/// Combined P-value from log P-values.
pub fn truncated_product_pvalue_ln(ln_pvalues: &[f64], tau: f64) -> Result<f64> {
    let ln_w = ln_truncated_product_stat(ln_pvalues, tau)?;
    Ok(ln_truncated_product_cdf(ln_w, ln_pvalues.len(), tau).exp())
}

/// Combined P-value `P(W ≤ w_obs)` under independent uniform P-values.
/// No P-value at or below `tau` gives 1.
pub fn truncated_product_pvalue(pvalues: &[f64], tau: f64) -> Result<f64> {
    let ln: Vec<f64> = pvalues.iter().map(|p| p.ln()).collect();
    truncated_product_pvalue_ln(&ln, tau)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetTest {
    /// Group ids in partition order.
    pub members: Vec<String>,
    pub p_value: f64,
    /// Largest P-value among this subset and all of its supersets.
    pub adjusted_p: f64,
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedTestingReport {
    pub gamma: Option<f64>,
    pub tau: f64,
    pub alpha: f64,
    pub group_ids: Vec<String>,
    /// Every nonempty subset, indexed by bitmask minus one.
    pub subsets: Vec<SubsetTest>,
    pub adjusted_group_pvalues: Vec<f64>,
    pub rejected_groups: Vec<String>,
}

impl ClosedTestingReport {
    fn mask_of(&self, members: &[&str]) -> Option<usize> {
        let mut mask = 0usize;
        for m in members {
            let i = self.group_ids.iter().position(|g| g == m)?;
            mask |= 1 << i;
        }
        (mask != 0).then_some(mask)
    }

    pub fn subset(&self, members: &[&str]) -> Option<&SubsetTest> {
        self.mask_of(members).map(|m| &self.subsets[m - 1])
    }

    /// The intersection of all group hypotheses.
    pub fn global(&self) -> &SubsetTest {
        self.subsets.last().expect("at least one group")
    }

    pub fn rejected_subsets(&self) -> impl Iterator<Item = &SubsetTest> {
        self.subsets.iter().filter(|s| s.rejected)
    }
}

/// Closed testing over all `2^G - 1` intersections of the group hypotheses,
/// each tested with the truncated product of its members' P-values.
pub fn closed_test(group_ids: &[String], pvalues: &[f64], params: &TruncatedProductParams) -> Result<ClosedTestingReport> {
    let ln: Vec<f64> = pvalues.iter().map(|p| p.ln()).collect();
    closed_test_ln(group_ids, &ln, params)
}

pub fn closed_test_ln(group_ids: &[String], ln_pvalues: &[f64], params: &TruncatedProductParams) -> Result<ClosedTestingReport> {
    params.validate()?;
    let g = group_ids.len();
    if g == 0 || g != ln_pvalues.len() {
        return Err(Error::invalid("need one P-value per group and at least one group"));
    }
    if g > params.max_groups || g >= usize::BITS as usize {
        return Err(Error::TooManyGroups {
            groups: g,
            limit: params.max_groups,
        });
    }
    for &lp in ln_pvalues {
        check_ln_p(lp)?;
    }

    let full = (1usize << g) - 1;
    let mut pv = vec![0.0; full + 1];
    let mut members = Vec::with_capacity(g);
    for (mask, slot) in pv.iter_mut().enumerate().skip(1) {
        members.clear();
        members.extend((0..g).filter(|i| mask >> i & 1 == 1).map(|i| ln_pvalues[i]));
        *slot = truncated_product_pvalue_ln(&members, params.tau)?;
    }

    // adjusted[m] = max over supersets of m
    let mut adjusted = pv.clone();
    for bit in 0..g {
        for mask in (1..=full).rev() {
            if mask >> bit & 1 == 0 {
                let sup = mask | 1 << bit;
                if adjusted[sup] > adjusted[mask] {
                    adjusted[mask] = adjusted[sup];
                }
            }
        }
    }

    let subsets = (1..=full)
        .map(|mask| SubsetTest {
            members: (0..g).filter(|i| mask >> i & 1 == 1).map(|i| group_ids[i].clone()).collect(),
            p_value: pv[mask],
            adjusted_p: adjusted[mask],
            rejected: adjusted[mask] <= params.alpha,
        })
        .collect::<Vec<_>>();
    let adjusted_group_pvalues: Vec<f64> = (0..g).map(|i| adjusted[1 << i]).collect();
    let rejected_groups = (0..g)
        .filter(|&i| adjusted_group_pvalues[i] <= params.alpha)
        .map(|i| group_ids[i].clone())
        .collect();

    Ok(ClosedTestingReport {
        gamma: None,
        tau: params.tau,
        alpha: params.alpha,
        group_ids: group_ids.to_vec(),
        subsets,
        adjusted_group_pvalues,
        rejected_groups,
    })
}

/// Largest `Γ` on a grid at which closed testing still rejects a hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityValue {
    pub members: Vec<String>,
    /// `None` when the hypothesis is not rejected even at `Γ = 1`.
    pub max_gamma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityScan {
    pub resolution: f64,
    pub gamma_limit: f64,
    /// One entry per nonempty subset, in the same order as
    /// [`ClosedTestingReport::subsets`].
    pub values: Vec<SensitivityValue>,
}

impl SensitivityScan {
    pub fn get(&self, members: &[&str]) -> Option<&SensitivityValue> {
        self.values
            .iter()
            .find(|v| v.members.len() == members.len() && members.iter().all(|m| v.members.iter().any(|x| x == m)))
    }

    pub fn global(&self) -> &SensitivityValue {
        self.values.last().expect("at least one group")
    }
}

/// Runs closed testing at `Γ = 1, 1 + r, 1 + 2r, ...` and records, for each
/// intersection hypothesis, the last grid point of its initial run of
/// rejections. The scan stops once the global hypothesis is retained or
/// `gamma_limit` is passed.
pub fn max_gamma_rejection(
    table: &SummaryTable,
    direction: Direction,
    method: TailMethod,
    params: &TruncatedProductParams,
    resolution: f64,
    gamma_limit: f64,
) -> Result<SensitivityScan> {
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(Error::invalid(format!("resolution must be positive, got {resolution}")));
    }
    let ids: Vec<String> = table.groups.iter().map(|s| s.group_id.clone()).collect();
    let n_subsets = (1usize << ids.len().min(usize::BITS as usize - 1)) - 1;
    let mut best: Vec<Option<f64>> = vec![None; n_subsets];
    let mut alive = vec![true; n_subsets];
    let mut report = None;

    for step in 0u64.. {
        let gamma = ((1.0 + step as f64 * resolution) * 1e9).round() / 1e9;
        if gamma > gamma_limit {
            break;
        }
        let g = GammaValue::new(gamma)?;
        let ln_p = table
            .groups
            .iter()
            .map(|s| summary_upper_pvalue(s, g, direction, method).map(|b| b.ln_p_upper))
            .collect::<Result<Vec<_>>>()?;
        let r = closed_test_ln(&ids, &ln_p, params)?;
        for (i, s) in r.subsets.iter().enumerate() {
            if alive[i] && s.rejected {
                best[i] = Some(gamma);
            } else {
                alive[i] = false;
            }
        }
        let done = !r.global().rejected;
        report = Some(r);
        if done {
            break;
        }
    }

    let members: Vec<Vec<String>> = match report {
        Some(r) => r.subsets.into_iter().map(|s| s.members).collect(),
        None => return Err(Error::invalid("gamma limit below 1")),
    };
    Ok(SensitivityScan {
        resolution,
        gamma_limit,
        values: members
            .into_iter()
            .zip(best)
            .map(|(members, max_gamma)| SensitivityValue { members, max_gamma })
            .collect(),
    })
}
