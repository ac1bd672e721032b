//! McNemar-type inference for paired binary outcomes under a bias of at most `Γ`.
//!
//! Within a discordant pair, the chance that the member who had the event is
//! the one in the direction of the alternative is at most `Γ/(1+Γ)`. The
//! count of such pairs is therefore stochastically smaller than
//! `Binomial(D, Γ/(1+Γ))` under the null, which gives the upper bound on the
//! one-sided P-value.

use serde::{Deserialize, Serialize};

use crate::binomial;
use crate::error::{Error, Result};
use crate::pairs::{DiscordantSummary, SummaryTable};

/// Sensitivity parameter `Γ ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct GammaValue(f64);

impl GammaValue {
    pub const ONE: GammaValue = GammaValue(1.0);

    pub fn new(gamma: f64) -> Result<Self> {
        if !gamma.is_finite() || gamma < 1.0 {
            return Err(Error::invalid(format!("gamma must be a finite value >= 1, got {gamma}")));
        }
        Ok(Self(gamma))
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// Upper bound `Γ/(1+Γ)` on the within-pair assignment probability.
    pub fn p_plus(self) -> f64 {
        self.0 / (1.0 + self.0)
    }
}

impl TryFrom<f64> for GammaValue {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<GammaValue> for f64 {
    fn from(g: GammaValue) -> f64 {
        g.0
    }
}

/// Which discordant pairs count as evidence against the null.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// Treatment prevents events: large counts of control-only events.
    #[default]
    ControlExcess,
    /// Treatment causes events: large counts of treated-only events.
    TreatedExcess,
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "control" | "control-excess" | "decrease" => Ok(Direction::ControlExcess),
            "treated" | "treated-excess" | "increase" => Ok(Direction::TreatedExcess),
            other => Err(Error::invalid(format!("unknown direction `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailMethod {
    #[default]
    Exact,
    NormalApprox,
}

impl std::str::FromStr for TailMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "exact" => Ok(TailMethod::Exact),
            "normal" | "normal-approx" => Ok(TailMethod::NormalApprox),
            other => Err(Error::invalid(format!("unknown tail method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueBound {
    pub group_id: String,
    pub gamma: f64,
    pub p_upper: f64,
    /// Natural log of `p_upper`; keeps precision when the bound underflows.
    pub ln_p_upper: f64,
    pub method: TailMethod,
}

/// Upper bound on the one-sided McNemar P-value: `P(X ≥ count)` for
/// `X ~ Binomial(discordant, Γ/(1+Γ))`. No discordant pairs gives 1.
pub fn mcnemar_upper_pvalue(discordant: u64, count: u64, gamma: GammaValue, method: TailMethod) -> Result<PValueBound> {
    if count > discordant {
        return Err(Error::invalid(format!(
            "count {count} exceeds discordant pairs {discordant}"
        )));
    }
    let p = gamma.p_plus();
    let (p_upper, ln_p_upper) = match method {
        TailMethod::Exact => {
            let ln = binomial::ln_upper_tail(count, discordant, p);
            (ln.exp(), ln)
        }
        TailMethod::NormalApprox => {
            let v = if discordant == 0 {
                1.0
            } else {
                binomial::upper_tail_normal(count, discordant, p)
            };
            (v, v.ln())
        }
    };
    if p_upper.is_nan() {
        return Err(Error::Numeric(format!("tail for D={discordant}, T={count}, gamma={}", gamma.get())));
    }
    Ok(PValueBound {
        group_id: String::new(),
        gamma: gamma.get(),
        p_upper,
        ln_p_upper,
        method,
    })
}

/// Bound for a group summary in the given direction.
pub fn summary_upper_pvalue(
    summary: &DiscordantSummary,
    gamma: GammaValue,
    direction: Direction,
    method: TailMethod,
) -> Result<PValueBound> {
    let mut b = mcnemar_upper_pvalue(summary.n_discordant, summary.test_count(direction), gamma, method)?;
    b.group_id = summary.group_id.clone();
    Ok(b)
}

/// Discordant-pair odds ratio `T / (D - T)` (control-only over treated-only
/// events). `None` when there are no treated-only pairs.
pub fn mcnemar_odds_ratio(summary: &DiscordantSummary) -> Option<f64> {
    (summary.n_treated_only > 0).then(|| summary.n_control_only as f64 / summary.n_treated_only as f64)
}

/// Per-group bounds over a grid of `Γ`, plus the pooled row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityGrid {
    pub outcome: String,
    pub direction: Direction,
    pub gammas: Vec<f64>,
    pub group_ids: Vec<String>,
    /// `bounds[g][k]` is the bound for group `g` at `gammas[k]`.
    pub bounds: Vec<Vec<PValueBound>>,
    pub pooled: Vec<PValueBound>,
}

impl SensitivityGrid {
    /// P-value bounds of every group at grid column `k`.
    pub fn column(&self, k: usize) -> Vec<f64> {
        self.bounds.iter().map(|row| row[k].p_upper).collect()
    }

    pub fn ln_column(&self, k: usize) -> Vec<f64> {
        self.bounds.iter().map(|row| row[k].ln_p_upper).collect()
    }
}

pub fn gamma_grid_bounds(
    table: &SummaryTable,
    gammas: &[f64],
    direction: Direction,
    method: TailMethod,
) -> Result<SensitivityGrid> {
    let gs = gammas.iter().map(|&g| GammaValue::new(g)).collect::<Result<Vec<_>>>()?;
    if gammas.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid("gamma grid must be sorted ascending"));
    }
    let row = |s: &DiscordantSummary| -> Result<Vec<PValueBound>> {
        gs.iter().map(|&g| summary_upper_pvalue(s, g, direction, method)).collect()
    };
    Ok(SensitivityGrid {
        outcome: table.outcome.clone(),
        direction,
        gammas: gammas.to_vec(),
        group_ids: table.groups.iter().map(|s| s.group_id.clone()).collect(),
        bounds: table.groups.iter().map(row).collect::<Result<_>>()?,
        pooled: row(&table.pooled)?,
    })
}

/// Amplification of a sensitivity parameter: the outcome odds multiplier
/// `Δ = (ΓΛ - 1)/(Λ - Γ)` paired with an assignment odds multiplier `Λ`.
///
/// The map is an involution in its second argument: `amplify(Γ, Δ) = Λ`.
pub fn amplify(gamma: f64, lambda: f64) -> Result<f64> {
    GammaValue::new(gamma)?;
    if !lambda.is_finite() || lambda <= gamma {
        return Err(Error::invalid(format!("lambda must exceed gamma ({gamma}), got {lambda}")));
    }
    Ok((gamma * lambda - 1.0) / (lambda - gamma))
}
