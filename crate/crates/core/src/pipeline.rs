//! End-to-end analysis: partition, per-group bounds over a `Γ` grid,
//! truncated-product combination, closed testing, sensitivity values and
//! amplification, assembled into a versioned report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::multiplicity::{
    closed_test_ln, max_gamma_rejection, truncated_product_pvalue_ln, ClosedTestingReport, SensitivityScan,
    TruncatedProductParams, DEFAULT_MAX_GROUPS,
};
use crate::pairs::{summarize, PairSet, SummaryTable};
use crate::sensitivity::{amplify, gamma_grid_bounds, mcnemar_odds_ratio, Direction, SensitivityGrid, TailMethod};
use crate::tree::{
    assign_groups, build_tree, describe_tree, subdivide, AnnotatedTree, CovariateSpec, Partition, PartitionSource, Tree,
    TreeConfig,
};

pub const SCHEMA_VERSION: &str = "1";
pub const MORTALITY_GAMMAS: [f64; 6] = [1.00, 1.05, 1.10, 1.15, 1.17, 1.20];
pub const ICU_GAMMAS: [f64; 6] = [1.0, 1.5, 1.6, 1.7, 1.8, 1.9];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "source", content = "column")]
pub enum GroupSource {
    Tree,
    Column(String),
}

impl std::str::FromStr for GroupSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "" => Err(Error::invalid("empty group source")),
            "tree" => Ok(GroupSource::Tree),
            col => Ok(GroupSource::Column(col.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    /// Outcomes to analyse; the first is primary and drives the tree.
    pub outcomes: Vec<String>,
    pub gammas: Vec<f64>,
    pub tau: f64,
    pub alpha: f64,
    pub tree: TreeConfig,
    pub groups: GroupSource,
    /// Restricts the tree to these covariates; all pair covariates otherwise.
    pub covariates: Option<Vec<String>>,
    pub directions: BTreeMap<String, Direction>,
    pub method: TailMethod,
    pub lambdas: Vec<f64>,
    pub resolution: f64,
    pub gamma_limit: f64,
    pub max_groups: usize,
    /// Re-split each group on the secondary outcome's unsigned differences.
    pub subdivide_secondary: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            outcomes: Vec::new(),
            gammas: MORTALITY_GAMMAS.to_vec(),
            tau: crate::multiplicity::DEFAULT_TAU,
            alpha: crate::multiplicity::DEFAULT_ALPHA,
            tree: TreeConfig::default(),
            groups: GroupSource::Tree,
            covariates: None,
            directions: BTreeMap::new(),
            method: TailMethod::Exact,
            lambdas: vec![2.0, 3.0, 4.0],
            resolution: 0.01,
            gamma_limit: 20.0,
            max_groups: DEFAULT_MAX_GROUPS,
            subdivide_secondary: false,
        }
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| Error::invalid(format!("bad value `{s}` for `{key}`"))))
        .collect()
}

fn parse_one<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse::<T>()
        .map_err(|_| Error::invalid(format!("bad value `{value}` for `{key}`")))
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: n as u64 + 1,
            message: format!("expected `key = value`, found `{line}`"),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl AnalysisConfig {
    pub fn primary(&self) -> Option<&str> {
        self.outcomes.first().map(String::as_str)
    }

    /// Sets one option by its config-file key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "outcome" | "outcomes" => self.outcomes = parse_list(key, value)?,
            "gamma" | "gammas" => self.gammas = parse_list(key, value)?,
            "tau" => self.tau = parse_one(key, value)?,
            "alpha" => self.alpha = parse_one(key, value)?,
            "lambda" | "lambdas" => self.lambdas = parse_list(key, value)?,
            "groups" => self.groups = parse_one(key, value)?,
            "covariates" => self.covariates = Some(parse_list(key, value)?),
            "method" => self.method = parse_one(key, value)?,
            "resolution" => self.resolution = parse_one(key, value)?,
            "gamma_limit" => self.gamma_limit = parse_one(key, value)?,
            "max_groups" => self.max_groups = parse_one(key, value)?,
            "min_split" => self.tree.min_split = parse_one(key, value)?,
            "min_leaf" => self.tree.min_leaf = parse_one(key, value)?,
            "cp" => self.tree.cp = parse_one(key, value)?,
            "max_depth" => self.tree.max_depth = parse_one(key, value)?,
            "subdivide_secondary" => self.subdivide_secondary = parse_one(key, value)?,
            "direction" | "directions" => {
                for item in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    let (name, dir) = item
                        .split_once('=')
                        .ok_or_else(|| Error::invalid(format!("direction `{item}` must be NAME=control|treated")))?;
                    self.directions.insert(name.trim().to_string(), dir.parse()?);
                }
            }
            other => return Err(Error::invalid(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_config_text(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn direction(&self, outcome: &str) -> Result<Direction> {
        match self.directions.get(outcome) {
            Some(&d) => Ok(d),
            None if self.primary() == Some(outcome) => Ok(Direction::ControlExcess),
            None => Err(Error::invalid(format!(
                "no direction given for secondary outcome `{outcome}` (use direction = {outcome}=control|treated)"
            ))),
        }
    }

    pub fn params(&self) -> TruncatedProductParams {
        TruncatedProductParams {
            tau: self.tau,
            alpha: self.alpha,
            max_groups: self.max_groups,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.outcomes.is_empty() {
            return Err(Error::invalid("at least one outcome is required"));
        }
        if self.gammas.is_empty() {
            return Err(Error::invalid("gamma grid is empty"));
        }
        if self.gammas.iter().any(|g| !(g.is_finite() && *g >= 1.0)) || self.gammas.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::invalid("gamma grid must be ascending with every value >= 1"));
        }
        self.params().validate()?;
        self.tree.validate()?;
        for o in &self.outcomes {
            self.direction(o)?;
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub name: String,
    pub sha256: String,
}

impl InputDigest {
    pub fn of_bytes(name: impl Into<String>, bytes: &[u8]) -> Self {
        Self {
            name: name.into(),
            sha256: hex::encode(Sha256::digest(bytes)),
        }
    }

    pub fn of_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        Ok(Self::of_bytes(name, &bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    pub inputs: Vec<InputDigest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSummary {
    pub source: PartitionSource,
    pub group_ids: Vec<String>,
    pub sizes: Vec<usize>,
}

impl From<&Partition> for PartitionSummary {
    fn from(p: &Partition) -> Self {
        Self {
            source: p.provenance,
            group_ids: p.group_ids.clone(),
            sizes: p.sizes(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplificationRow {
    pub gamma: f64,
    pub lambda: f64,
    pub delta: f64,
}

/// `(Γ, Λ, Δ)` rows for every `Λ > Γ`.
pub fn amplification_table(gammas: &[f64], lambdas: &[f64]) -> Result<Vec<AmplificationRow>> {
    let mut rows = Vec::new();
    for &gamma in gammas {
        for &lambda in lambdas {
            if lambda > gamma {
                rows.push(AmplificationRow {
                    gamma,
                    lambda,
                    delta: amplify(gamma, lambda)?,
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeReport {
    pub outcome: String,
    pub direction: Direction,
    pub partition: PartitionSummary,
    pub summaries: SummaryTable,
    /// Discordant-pair odds ratios per group, then pooled.
    pub odds_ratios: Vec<Option<f64>>,
    pub grid: SensitivityGrid,
    /// Truncated-product P-value of the global hypothesis at each `Γ`.
    pub combined: Vec<f64>,
    pub closed_tests: Vec<ClosedTestingReport>,
    pub sensitivity: SensitivityScan,
    pub amplification: Vec<AmplificationRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub schema_version: String,
    pub provenance: Provenance,
    pub config: AnalysisConfig,
    pub n_pairs: usize,
    pub partition: PartitionSummary,
    pub tree: Option<Tree>,
    pub tree_annotations: Option<AnnotatedTree>,
    pub unseen_levels: usize,
    pub outcomes: Vec<OutcomeReport>,
}

fn tree_covariates(pairs: &PairSet, config: &AnalysisConfig) -> Result<Vec<CovariateSpec>> {
    let all = CovariateSpec::infer(pairs, &[]);
    match &config.covariates {
        None => Ok(all),
        Some(names) => names
            .iter()
            .map(|n| {
                all.iter()
                    .find(|c| &c.name == n)
                    .cloned()
                    .ok_or_else(|| Error::MissingColumn(n.clone()))
            })
            .collect(),
    }
}

/// Fits the tree on the primary outcome and annotates it for reports.
pub fn fit_tree(pairs: &PairSet, config: &AnalysisConfig) -> Result<(Tree, Partition, AnnotatedTree)> {
    let primary = config.primary().ok_or_else(|| Error::invalid("no outcome given"))?;
    let specs = tree_covariates(pairs, config)?;
    let tree = build_tree(pairs, &specs, primary, &config.tree)?;
    let partition = assign_groups(&tree, pairs)?.partition;
    let table = summarize(pairs, &partition, primary)?;
    let annotated = describe_tree(&tree, &table)?;
    Ok((tree, partition, annotated))
}

pub fn analyze_outcome(
    pairs: &PairSet,
    partition: &Partition,
    outcome: &str,
    direction: Direction,
    config: &AnalysisConfig,
) -> Result<OutcomeReport> {
    let params = config.params();
    let summaries = summarize(pairs, partition, outcome)?;
    let grid = gamma_grid_bounds(&summaries, &config.gammas, direction, config.method)?;

    let mut combined = Vec::with_capacity(grid.gammas.len());
    let mut closed_tests = Vec::with_capacity(grid.gammas.len());
    for (k, &gamma) in grid.gammas.iter().enumerate() {
        let ln_p = grid.ln_column(k);
        combined.push(truncated_product_pvalue_ln(&ln_p, params.tau)?);
        let mut report = closed_test_ln(&grid.group_ids, &ln_p, &params)?;
        report.gamma = Some(gamma);
        closed_tests.push(report);
    }

    let sensitivity = max_gamma_rejection(&summaries, direction, config.method, &params, config.resolution, config.gamma_limit)?;
    let mut amp_gammas: Vec<f64> = config.gammas.iter().copied().filter(|&g| g > 1.0).collect();
    if let Some(g) = sensitivity.global().max_gamma {
        if g > 1.0 && !amp_gammas.contains(&g) {
            amp_gammas.push(g);
        }
    }
    let amplification = amplification_table(&amp_gammas, &config.lambdas)?;

    let mut odds_ratios: Vec<Option<f64>> = summaries.groups.iter().map(mcnemar_odds_ratio).collect();
    odds_ratios.push(mcnemar_odds_ratio(&summaries.pooled));
    if direction == Direction::TreatedExcess {
        for v in odds_ratios.iter_mut() {
            *v = v.and_then(|x| (x > 0.0).then(|| 1.0 / x));
        }
    }

    Ok(OutcomeReport {
        outcome: outcome.to_string(),
        direction,
        partition: partition.into(),
        summaries,
        odds_ratios,
        grid,
        combined,
        closed_tests,
        sensitivity,
        amplification,
    })
}

/// Full analysis of a pair set. Secondary outcomes reuse the primary
/// partition unless `subdivide_secondary` is set.
pub fn run_analyze(config: &AnalysisConfig, pairs: &PairSet, inputs: Vec<InputDigest>) -> Result<ReportBundle> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::invalid("pair file contains no pairs"));
    }
    for o in &config.outcomes {
        pairs.outcome_index(o)?;
    }

    let (tree, partition, annotations, unseen) = match &config.groups {
        GroupSource::Tree => {
            let (tree, partition, annotated) = fit_tree(pairs, config)?;
            (Some(tree), partition, Some(annotated), 0)
        }
        GroupSource::Column(col) => {
            let p = Partition::from_column(pairs, col)?;
            p.require_nonempty()?;
            (None, p, None, 0)
        }
    };

    let mut outcomes = Vec::with_capacity(config.outcomes.len());
    for (i, outcome) in config.outcomes.iter().enumerate() {
        let direction = config.direction(outcome)?;
        let part = if i > 0 && config.subdivide_secondary && tree.is_some() {
            let specs = tree_covariates(pairs, config)?;
            subdivide(pairs, &partition, &specs, outcome, &config.tree)?
        } else {
            partition.clone()
        };
        outcomes.push(analyze_outcome(pairs, &part, outcome, direction, config)?);
    }

    Ok(ReportBundle {
        schema_version: SCHEMA_VERSION.into(),
        provenance: Provenance {
            tool: "effectmod".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_sha256: config.digest(),
            inputs,
        },
        config: config.clone(),
        n_pairs: pairs.len(),
        partition: (&partition).into(),
        tree,
        tree_annotations: annotations,
        unseen_levels: unseen,
        outcomes,
    })
}

fn fmt_p(p: f64) -> String {
    format!("{p:.3}")
}

fn fmt_or(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.2}"))
}

fn fmt_gamma(g: f64) -> String {
    format!("{g:.2}")
}

fn set_str(ids: &[String]) -> String {
    format!("{{{}}}", ids.join(", "))
}

impl OutcomeReport {
    /// Grid as CSV: one row per `Γ`, columns for each group, pooled and combined.
    pub fn grid_csv(&self) -> Result<String> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["gamma".to_string()];
        header.extend(self.grid.group_ids.iter().map(|g| format!("group_{g}")));
        header.push("pooled".into());
        header.push("combined".into());
        wtr.write_record(&header)?;
        for (k, g) in self.grid.gammas.iter().enumerate() {
            let mut row = vec![g.to_string()];
            row.extend(self.grid.bounds.iter().map(|r| r[k].p_upper.to_string()));
            row.push(self.grid.pooled[k].p_upper.to_string());
            row.push(self.combined[k].to_string());
            wtr.write_record(&row)?;
        }
        let bytes = wtr.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("utf-8"))
    }

    /// Minimal rejected intersections: rejected, with no rejected proper subset.
    pub fn minimal_rejections(report: &ClosedTestingReport) -> Vec<Vec<String>> {
        let rejected: Vec<&Vec<String>> = report.rejected_subsets().map(|s| &s.members).collect();
        rejected
            .iter()
            .filter(|s| {
                !rejected
                    .iter()
                    .any(|t| t.len() < s.len() && t.iter().all(|m| s.contains(m)))
            })
            .map(|s| (*s).clone())
            .collect()
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let s = &self.summaries;
        let width = 10;
        let direction = match self.direction {
            Direction::ControlExcess => "control-excess",
            Direction::TreatedExcess => "treated-excess",
        };
        let _ = writeln!(out, "Outcome: {} ({direction})", self.outcome);
        let mut line = format!("{:<24}", "");
        for g in &s.groups {
            let _ = write!(line, "{:>width$}", format!("Group {}", g.group_id));
        }
        let _ = write!(line, "{:>width$}", "Pooled");
        let _ = writeln!(out, "{line}");

        let all: Vec<&crate::pairs::DiscordantSummary> = s.groups.iter().chain(std::iter::once(&s.pooled)).collect();
        let mut row = |label: &str, f: &dyn Fn(usize, &crate::pairs::DiscordantSummary) -> String| {
            let mut line = format!("{label:<24}");
            for (i, g) in all.iter().enumerate() {
                let _ = write!(line, "{:>width$}", f(i, g));
            }
            let _ = writeln!(out, "{line}");
        };
        row("Number of pairs", &|_, g| g.n_pairs.to_string());
        row("Discordant pairs", &|_, g| g.n_discordant.to_string());
        row("Percent discordant %", &|_, g| format!("{:.1}", 100.0 * g.proportion_discordant()));
        row("Odds ratio", &|i, _| fmt_or(self.odds_ratios[i]));
        row("Event %, treated", &|_, g| format!("{:.1}", 100.0 * g.event_rate_treated));
        row("Event %, control", &|_, g| format!("{:.1}", 100.0 * g.event_rate_control));

        let _ = writeln!(out, "\nUpper bounds on one-sided P-values");
        let mut line = format!("{:<8}", "Gamma");
        for g in &self.grid.group_ids {
            let _ = write!(line, "{:>width$}", format!("Group {g}"));
        }
        let _ = write!(line, "{:>12}{:>width$}", "Truncated", "Pooled");
        let _ = writeln!(out, "{line}");
        for (k, g) in self.grid.gammas.iter().enumerate() {
            let mut line = format!("{:<8}", fmt_gamma(*g));
            for r in &self.grid.bounds {
                let _ = write!(line, "{:>width$}", fmt_p(r[k].p_upper));
            }
            let _ = write!(line, "{:>12}{:>width$}", fmt_p(self.combined[k]), fmt_p(self.grid.pooled[k].p_upper));
            let _ = writeln!(out, "{line}");
        }

        if let Some(first) = self.closed_tests.first() {
            let _ = writeln!(out, "\nClosed testing (truncated product, tau={}, alpha={})", first.tau, first.alpha);
        }
        for r in &self.closed_tests {
            let minimal: Vec<String> = Self::minimal_rejections(r).iter().map(|m| set_str(m)).collect();
            let _ = writeln!(
                out,
                "  Gamma {}: global p = {}; groups rejected {}; minimal rejected intersections {}",
                fmt_gamma(r.gamma.unwrap_or(1.0)),
                fmt_p(r.global().p_value),
                set_str(&r.rejected_groups),
                if minimal.is_empty() { "none".to_string() } else { minimal.join(" ") }
            );
        }

        let _ = writeln!(out, "\nLargest Gamma still rejected (resolution {})", self.sensitivity.resolution);
        let global = self.sensitivity.global();
        let fmt_sv = |v: Option<f64>| v.map_or_else(|| "none (not rejected at Gamma=1)".to_string(), fmt_gamma);
        let _ = writeln!(out, "  global {}: {}", set_str(&global.members), fmt_sv(global.max_gamma));
        for v in self.sensitivity.values.iter().filter(|v| v.members.len() == 1) {
            let _ = writeln!(out, "  group {}: {}", v.members[0], fmt_sv(v.max_gamma));
        }

        if !self.amplification.is_empty() {
            let _ = writeln!(out, "\nAmplification (Gamma -> Lambda, Delta)");
            for a in &self.amplification {
                let _ = writeln!(out, "  Gamma {}: Lambda {:.2}, Delta {:.2}", fmt_gamma(a.gamma), a.lambda, a.delta);
            }
        }
        out
    }
}

impl ReportBundle {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "effectmod {} report (schema {}), {} pairs in {} groups",
            self.provenance.version,
            self.schema_version,
            self.n_pairs,
            self.partition.group_ids.len()
        );
        let _ = writeln!(out, "config sha256 {}", self.provenance.config_sha256);
        for i in &self.provenance.inputs {
            let _ = writeln!(out, "input {} sha256 {}", i.name, i.sha256);
        }
        if let Some(t) = &self.tree_annotations {
            let _ = writeln!(out, "\nTree on |Y| for {}", t.outcome);
            out.push_str(&t.render());
        }
        for o in &self.outcomes {
            out.push('\n');
            out.push_str(&o.render_text());
        }
        out
    }
}
