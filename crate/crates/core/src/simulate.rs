//! Synthetic matched pairs from the potential-outcomes model.
//!
//! Each pair has two units with an unobserved binary covariate `u`. Within a
//! pair the first unit is treated with probability
//! `Γ^u1 / (Γ^u1 + Γ^u2)`, so `gamma_true` bounds the odds of treatment
//! between the two. Potential outcomes `(r_T, r_C)` come from one uniform
//! draw per unit, which makes `r_T = r_C` exactly when a group's two
//! probabilities agree: the sharp null of no effect holds in such groups.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairs::{OutcomePair, PairRecord, PairSet};

fn default_u_prevalence() -> f64 {
    0.5
}

fn default_outcome() -> String {
    "y".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticGroup {
    pub label: String,
    pub n_pairs: usize,
    /// `P(r_T = 1)` for a unit with `u = 0`.
    pub p_treated: f64,
    /// `P(r_C = 1)` for a unit with `u = 0`.
    pub p_control: f64,
    /// Covariate values written for every pair in the group.
    #[serde(default)]
    pub covariates: BTreeMap<String, String>,
}

impl SyntheticGroup {
    pub fn has_effect(&self) -> bool {
        self.p_treated != self.p_control
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub groups: Vec<SyntheticGroup>,
    pub gamma_true: f64,
    #[serde(default = "default_u_prevalence")]
    pub u_prevalence: f64,
    /// Added to both outcome probabilities when `u = 1`; nonzero values make
    /// the hidden covariate a confounder.
    #[serde(default)]
    pub u_outcome_shift: f64,
    #[serde(default = "default_outcome")]
    pub outcome: String,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64, what: &str| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::invalid(format!("{what} must lie in [0,1], got {v}")))
            }
        };
        if self.groups.is_empty() {
            return Err(Error::invalid("synthetic spec needs at least one group"));
        }
        for g in &self.groups {
            unit(g.p_treated, "p_treated")?;
            unit(g.p_control, "p_control")?;
        }
        unit(self.u_prevalence, "u_prevalence")?;
        if !(self.u_outcome_shift.abs() <= 1.0) {
            return Err(Error::invalid("u_outcome_shift must lie in [-1,1]"));
        }
        if !self.gamma_true.is_finite() || self.gamma_true < 1.0 {
            return Err(Error::invalid(format!("gamma_true must be >= 1, got {}", self.gamma_true)));
        }
        let labels: BTreeSet<&String> = self.groups.iter().map(|g| &g.label).collect();
        if labels.len() != self.groups.len() {
            return Err(Error::invalid("group labels must be unique"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTruth {
    pub label: String,
    pub has_effect: bool,
    pub risk_difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub seed: u64,
    pub gamma_true: f64,
    pub groups: Vec<GroupTruth>,
}

#[derive(Debug, Clone)]
pub struct Simulated {
    /// Pairs with the group label in a `group` column plus any declared covariates.
    pub pairs: PairSet,
    pub truth: TruthRecord,
}

pub const GROUP_COLUMN: &str = "group";

pub fn simulate(spec: &SyntheticSpec) -> Result<Simulated> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let extra: BTreeSet<&String> = spec.groups.iter().flat_map(|g| g.covariates.keys()).collect();
    let mut covariates = vec![GROUP_COLUMN.to_string()];
    covariates.extend(extra.iter().map(|s| s.to_string()));
    let mut set = PairSet::new(covariates, vec![spec.outcome.clone()]);

    let clamp = |p: f64| p.clamp(0.0, 1.0);
    for g in &spec.groups {
        let mut covs = vec![g.label.clone()];
        covs.extend(extra.iter().map(|k| g.covariates.get(*k).cloned().unwrap_or_else(|| "0".into())));
        for _ in 0..g.n_pairs {
            let mut units = [(false, false, false); 2];
            for unit in &mut units {
                let u = rng.random_bool(spec.u_prevalence);
                let shift = if u { spec.u_outcome_shift } else { 0.0 };
                let v: f64 = rng.random();
                *unit = (u, v < clamp(g.p_treated + shift), v < clamp(g.p_control + shift));
            }
            let w0 = if units[0].0 { spec.gamma_true } else { 1.0 };
            let w1 = if units[1].0 { spec.gamma_true } else { 1.0 };
            let first_treated = rng.random_bool(w0 / (w0 + w1));
            let (t, c) = if first_treated { (units[0], units[1]) } else { (units[1], units[0]) };
            set.pairs.push(PairRecord {
                pair_id: (set.pairs.len() + 1).to_string(),
                covariates: covs.clone(),
                outcomes: vec![OutcomePair::new(t.1, c.2)],
            });
        }
    }

    let truth = TruthRecord {
        seed: spec.seed,
        gamma_true: spec.gamma_true,
        groups: spec
            .groups
            .iter()
            .map(|g| GroupTruth {
                label: g.label.clone(),
                has_effect: g.has_effect(),
                risk_difference: g.p_treated - g.p_control,
            })
            .collect(),
    };
    Ok(Simulated { pairs: set, truth })
}
