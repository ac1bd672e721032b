//! Regression tree on unsigned pair differences.
//!
//! The tree sees the pair covariates and `|Y_i|` only. Nothing in this module
//! reads which member of a discordant pair had the event, so the partition it
//! produces can be used for confirmatory tests on the same pairs.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairs::{PairSet, SummaryTable};
use crate::sensitivity::mcnemar_odds_ratio;
use crate::DiscordantSummary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovariateKind {
    Binary,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    pub kind: CovariateKind,
    /// Ordered levels; `["0", "1"]` for binary covariates.
    pub levels: Vec<String>,
}

impl CovariateSpec {
    pub fn binary(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: CovariateKind::Binary,
            levels: vec!["0".into(), "1".into()],
        }
    }

    pub fn categorical(name: impl Into<String>, levels: Vec<String>) -> Result<Self> {
        let name = name.into();
        let unique: BTreeSet<&String> = levels.iter().collect();
        if levels.is_empty() || unique.len() != levels.len() {
            return Err(Error::invalid(format!(
                "covariate `{name}` needs nonempty, unique levels"
            )));
        }
        Ok(Self {
            name,
            kind: CovariateKind::Categorical,
            levels,
        })
    }

    /// Declares every covariate of `pairs` not listed in `exclude`: binary
    /// when all values are 0/1, otherwise categorical with sorted levels.
    pub fn infer(pairs: &PairSet, exclude: &[&str]) -> Vec<CovariateSpec> {
        pairs
            .covariates
            .iter()
            .enumerate()
            .filter(|(_, name)| !exclude.contains(&name.as_str()))
            .map(|(i, name)| {
                let levels: BTreeSet<&str> = pairs.pairs.iter().map(|p| p.covariates[i].as_str()).collect();
                if levels.iter().all(|l| *l == "0" || *l == "1") {
                    CovariateSpec::binary(name.clone())
                } else {
                    CovariateSpec {
                        name: name.clone(),
                        kind: CovariateKind::Categorical,
                        levels: levels.into_iter().map(str::to_string).collect(),
                    }
                }
            })
            .collect()
    }

    fn level_index(&self, value: &str) -> Option<usize> {
        self.levels.iter().position(|l| l == value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub min_split: usize,
    pub min_leaf: usize,
    pub cp: f64,
    pub max_depth: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            min_split: 100,
            min_leaf: 50,
            cp: 0.001,
            max_depth: 5,
        }
    }
}

impl TreeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_leaf < 1 {
            return Err(Error::invalid("min_leaf must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.cp) {
            return Err(Error::invalid(format!("cp must lie in [0,1), got {}", self.cp)));
        }
        if self.max_depth < 1 {
            return Err(Error::invalid("max_depth must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Split {
    Binary { covariate: String, left_value: bool },
    Categorical { covariate: String, left_levels: Vec<String> },
}

impl Split {
    pub fn covariate(&self) -> &str {
        match self {
            Split::Binary { covariate, .. } | Split::Categorical { covariate, .. } => covariate,
        }
    }

    /// `Some(true)` when `value` is sent left, `None` for a value the split
    /// does not know about (routed right by the caller).
    fn sends_left(&self, value: &str) -> Option<bool> {
        match self {
            Split::Binary { left_value, .. } => match value {
                "0" => Some(!left_value),
                "1" => Some(*left_value),
                _ => None,
            },
            Split::Categorical { left_levels, .. } => Some(left_levels.iter().any(|l| l == value)),
        }
    }

    fn describe_side(&self, spec: &CovariateSpec, left: bool) -> String {
        match self {
            Split::Binary { covariate, left_value } => {
                let v = if left == *left_value { 1 } else { 0 };
                format!("{covariate} = {v}")
            }
            Split::Categorical { covariate, left_levels } => {
                let side: Vec<&str> = if left {
                    left_levels.iter().map(String::as_str).collect()
                } else {
                    spec.levels
                        .iter()
                        .filter(|l| !left_levels.contains(l))
                        .map(String::as_str)
                        .collect()
                };
                format!("{covariate} in {{{}}}", side.join(", "))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub node_id: usize,
    pub depth: usize,
    pub split: Option<Split>,
    pub left: Option<usize>,
    pub right: Option<usize>,
    /// Zero-based index into the partition's groups, leaves only.
    pub leaf_group: Option<usize>,
    pub n_pairs: usize,
    pub n_discordant: usize,
    pub mean_unsigned_response: f64,
    pub sse: f64,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.split.is_none()
    }
}

/// A fitted tree; nodes are stored in depth-first (pre-order) order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub outcome: String,
    pub covariates: Vec<CovariateSpec>,
    pub config: TreeConfig,
    pub root_sse: f64,
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn leaves(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    pub fn group_ids(&self) -> Vec<String> {
        (1..=self.n_leaves()).map(|i| i.to_string()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    fn spec(&self, name: &str) -> &CovariateSpec {
        self.covariates
            .iter()
            .find(|c| c.name == name)
            .expect("split covariate is declared")
    }

    /// Leaf group reached by a pair with the given covariate lookup. The flag
    /// is set when an unknown level had to be routed right.
    fn route<'a>(&self, value_of: impl Fn(&str) -> &'a str) -> (usize, bool) {
        let mut node = &self.nodes[0];
        let mut unseen = false;
        while let Some(split) = &node.split {
            let value = value_of(split.covariate());
            let left = match split.sends_left(value) {
                Some(l) => {
                    if self.spec(split.covariate()).level_index(value).is_none() {
                        unseen = true;
                    }
                    l
                }
                None => {
                    unseen = true;
                    false
                }
            };
            let next = if left { node.left } else { node.right };
            node = &self.nodes[next.expect("internal node has children")];
        }
        (node.leaf_group.expect("leaf has a group"), unseen)
    }
}

fn sse(n: f64, s: f64) -> f64 {
    if n == 0.0 {
        0.0
    } else {
        (s - s * s / n).max(0.0)
    }
}

struct Candidate {
    covariate: usize,
    /// Level indices sent left.
    left: Vec<usize>,
    gain: f64,
}

struct Builder<'a> {
    specs: &'a [CovariateSpec],
    config: TreeConfig,
    /// `levels[c][i]`: level index of covariate `c` for pair `i`.
    levels: Vec<Vec<usize>>,
    response: Vec<u8>,
    root_sse: f64,
    nodes: Vec<TreeNode>,
    n_leaves: usize,
}

impl Builder<'_> {
    fn best_split(&self, idx: &[usize]) -> Option<Candidate> {
        let n = idx.len() as f64;
        let s: f64 = idx.iter().map(|&i| self.response[i] as f64).sum();
        let parent = sse(n, s);
        let tol = 1e-12 * self.root_sse.max(1.0);
        let mut best: Option<Candidate> = None;

        for (c, spec) in self.specs.iter().enumerate() {
            let m = spec.levels.len();
            let mut counts = vec![(0usize, 0usize); m];
            for &i in idx {
                let e = &mut counts[self.levels[c][i]];
                e.0 += 1;
                e.1 += self.response[i] as usize;
            }
            let mut order: Vec<usize> = (0..m).filter(|&l| counts[l].0 > 0).collect();
            if order.len() < 2 {
                continue;
            }
            if spec.kind == CovariateKind::Categorical {
                // stable: equal means keep declaration order
                order.sort_by(|&a, &b| {
                    let ma = counts[a].1 as f64 / counts[a].0 as f64;
                    let mb = counts[b].1 as f64 / counts[b].0 as f64;
                    ma.partial_cmp(&mb).expect("finite means")
                });
            }
            let (mut nl, mut sl) = (0usize, 0usize);
            for cut in 1..order.len() {
                let (cn, cs) = counts[order[cut - 1]];
                nl += cn;
                sl += cs;
                let nr = idx.len() - nl;
                if nl < self.config.min_leaf || nr < self.config.min_leaf {
                    continue;
                }
                let gain = parent - sse(nl as f64, sl as f64) - sse(nr as f64, s - sl as f64);
                if best.as_ref().map_or(true, |b| gain > b.gain + tol) {
                    best = Some(Candidate {
                        covariate: c,
                        left: order[..cut].to_vec(),
                        gain,
                    });
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let n = idx.len();
        let s: usize = idx.iter().map(|&i| self.response[i] as usize).sum();
        let id = self.nodes.len();
        self.nodes.push(TreeNode {
            node_id: id,
            depth,
            split: None,
            left: None,
            right: None,
            leaf_group: None,
            n_pairs: n,
            n_discordant: s,
            mean_unsigned_response: if n == 0 { 0.0 } else { s as f64 / n as f64 },
            sse: sse(n as f64, s as f64),
        });

        let candidate = if n >= self.config.min_split && depth < self.config.max_depth {
            self.best_split(&idx)
        } else {
            None
        };
        match candidate {
            Some(c) if c.gain > 0.0 && c.gain >= self.config.cp * self.root_sse => {
                let spec = &self.specs[c.covariate];
                let mut in_left = vec![false; spec.levels.len()];
                for &l in &c.left {
                    in_left[l] = true;
                }
                let split = match spec.kind {
                    CovariateKind::Binary => Split::Binary {
                        covariate: spec.name.clone(),
                        left_value: in_left[1],
                    },
                    CovariateKind::Categorical => Split::Categorical {
                        covariate: spec.name.clone(),
                        left_levels: spec
                            .levels
                            .iter()
                            .enumerate()
                            .filter(|(l, _)| in_left[*l])
                            .map(|(_, v)| v.clone())
                            .collect(),
                    },
                };
                let (li, ri): (Vec<usize>, Vec<usize>) =
                    idx.into_iter().partition(|&i| in_left[self.levels[c.covariate][i]]);
                let left = self.grow(li, depth + 1);
                let right = self.grow(ri, depth + 1);
                let node = &mut self.nodes[id];
                node.split = Some(split);
                node.left = Some(left);
                node.right = Some(right);
            }
            _ => {
                self.nodes[id].leaf_group = Some(self.n_leaves);
                self.n_leaves += 1;
            }
        }
        id
    }
}

/// Greedy binary splitting of `|Y_i|` on the declared covariates.
///
/// Splits minimise the within-node sum of squares. Categorical levels are
/// ordered by mean response and only the order-respecting cuts are scanned,
/// which is exact for a 0/1 response. Ties go to the earlier covariate, then
/// the leftmost cut.
pub fn build_tree(pairs: &PairSet, covariates: &[CovariateSpec], outcome: &str, config: &TreeConfig) -> Result<Tree> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::invalid("cannot grow a tree on zero pairs"));
    }
    let outcome_idx = pairs.outcome_index(outcome)?;
    let response: Vec<u8> = pairs.pairs.iter().map(|p| p.outcomes[outcome_idx].unsigned()).collect();

    let mut levels = Vec::with_capacity(covariates.len());
    for spec in covariates {
        if spec.kind == CovariateKind::Categorical {
            CovariateSpec::categorical(spec.name.clone(), spec.levels.clone())?;
        }
        let col = pairs.covariate_index(&spec.name)?;
        let lookup: HashMap<&str, usize> = spec.levels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let column = pairs
            .pairs
            .iter()
            .map(|p| {
                let v = p.covariates[col].as_str();
                lookup.get(v).copied().ok_or_else(|| {
                    Error::invalid(format!(
                        "pair {}: covariate `{}` has undeclared level `{v}`",
                        p.pair_id, spec.name
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        levels.push(column);
    }

    let n = response.len() as f64;
    let s: f64 = response.iter().map(|&r| r as f64).sum();
    let mut builder = Builder {
        specs: covariates,
        config: *config,
        levels,
        response,
        root_sse: sse(n, s),
        nodes: Vec::new(),
        n_leaves: 0,
    };
    builder.grow((0..pairs.len()).collect(), 0);

    Ok(Tree {
        outcome: outcome.to_string(),
        covariates: covariates.to_vec(),
        config: *config,
        root_sse: builder.root_sse,
        nodes: builder.nodes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionSource {
    Tree,
    Column,
    Single,
    Subdivided,
}

/// Mutually exclusive, exhaustive assignment of pairs to groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub group_ids: Vec<String>,
    pub pair_ids: Vec<String>,
    /// Group index for each pair, aligned with `pair_ids`.
    pub assignment: Vec<usize>,
    pub provenance: PartitionSource,
}

impl Partition {
    pub fn new(group_ids: Vec<String>, pair_ids: Vec<String>, assignment: Vec<usize>, provenance: PartitionSource) -> Result<Self> {
        if pair_ids.len() != assignment.len() {
            return Err(Error::Partition("one group per pair required".into()));
        }
        if let Some(&bad) = assignment.iter().find(|&&g| g >= group_ids.len()) {
            return Err(Error::Partition(format!("group index {bad} out of range")));
        }
        let unique: BTreeSet<&String> = group_ids.iter().collect();
        if unique.len() != group_ids.len() {
            return Err(Error::Partition("duplicate group id".into()));
        }
        Ok(Self {
            group_ids,
            pair_ids,
            assignment,
            provenance,
        })
    }

    /// Everything in one group.
    pub fn single(pairs: &PairSet) -> Self {
        Self {
            group_ids: vec!["1".into()],
            pair_ids: pairs.pair_ids(),
            assignment: vec![0; pairs.len()],
            provenance: PartitionSource::Single,
        }
    }

    /// Groups given by a covariate column; numeric labels sort numerically.
    pub fn from_column(pairs: &PairSet, column: &str) -> Result<Self> {
        let values = pairs.covariate_column(column)?;
        let mut labels: Vec<&str> = values.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        if labels.iter().all(|l| l.parse::<i64>().is_ok()) {
            labels.sort_by_key(|l| l.parse::<i64>().expect("checked"));
        }
        let index: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (*l, i)).collect();
        Self::new(
            labels.iter().map(|l| l.to_string()).collect(),
            pairs.pair_ids(),
            values.iter().map(|v| index[v]).collect(),
            PartitionSource::Column,
        )
    }

    pub fn n_groups(&self) -> usize {
        self.group_ids.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.group_ids.len()];
        for &g in &self.assignment {
            sizes[g] += 1;
        }
        sizes
    }

    pub fn group_of(&self, pair_id: &str) -> Option<&str> {
        self.pair_ids
            .iter()
            .position(|p| p == pair_id)
            .map(|i| self.group_ids[self.assignment[i]].as_str())
    }

    pub fn require_nonempty(&self) -> Result<()> {
        match self.sizes().iter().position(|&n| n == 0) {
            Some(g) => Err(Error::Partition(format!("group `{}` is empty", self.group_ids[g]))),
            None => Ok(()),
        }
    }

    /// Errors unless this partition was built for exactly these pairs.
    pub fn check_matches(&self, pairs: &PairSet) -> Result<()> {
        if self.pair_ids.len() != pairs.len() || self.pair_ids.iter().zip(&pairs.pairs).any(|(a, p)| *a != p.pair_id) {
            return Err(Error::Partition("partition does not match the pair set".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub partition: Partition,
    /// Pairs carrying a covariate level unknown to the tree, routed right.
    pub unseen_levels: usize,
}

pub fn assign_groups(tree: &Tree, pairs: &PairSet) -> Result<Assignment> {
    let cols: HashMap<&str, usize> = tree
        .covariates
        .iter()
        .map(|c| Ok((c.name.as_str(), pairs.covariate_index(&c.name)?)))
        .collect::<Result<_>>()?;
    let mut unseen_levels = 0;
    let assignment = pairs
        .pairs
        .iter()
        .map(|p| {
            let (g, unseen) = tree.route(|name| p.covariates[cols[name]].as_str());
            unseen_levels += unseen as usize;
            g
        })
        .collect();
    Ok(Assignment {
        partition: Partition::new(tree.group_ids(), pairs.pair_ids(), assignment, PartitionSource::Tree)?,
        unseen_levels,
    })
}

/// Splits each group of `partition` again with a tree on another outcome.
/// Groups that do not split keep their id; others become `g.1`, `g.2`, ...
pub fn subdivide(
    pairs: &PairSet,
    partition: &Partition,
    covariates: &[CovariateSpec],
    outcome: &str,
    config: &TreeConfig,
) -> Result<Partition> {
    partition.check_matches(pairs)?;
    let mut group_ids = Vec::new();
    let mut assignment = vec![0; pairs.len()];
    for (g, gid) in partition.group_ids.iter().enumerate() {
        let members: Vec<usize> = (0..pairs.len()).filter(|&i| partition.assignment[i] == g).collect();
        if members.is_empty() {
            continue;
        }
        let sub = PairSet {
            covariates: pairs.covariates.clone(),
            outcomes: pairs.outcomes.clone(),
            pairs: members.iter().map(|&i| pairs.pairs[i].clone()).collect(),
        };
        let tree = build_tree(&sub, covariates, outcome, config)?;
        let a = assign_groups(&tree, &sub)?;
        let base = group_ids.len();
        if tree.n_leaves() == 1 {
            group_ids.push(gid.clone());
        } else {
            group_ids.extend(tree.group_ids().iter().map(|k| format!("{gid}.{k}")));
        }
        for (&i, &leaf) in members.iter().zip(&a.partition.assignment) {
            assignment[i] = base + leaf;
        }
    }
    Partition::new(group_ids, pairs.pair_ids(), assignment, PartitionSource::Subdivided)
}

/// Report annotations for one node: `A` is the discordant-pair odds ratio
/// (control over treated), `B` and `C` the treated and control event rates
/// in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeAnnotation {
    pub node_id: usize,
    pub depth: usize,
    pub label: String,
    pub group_id: Option<String>,
    pub n_pairs: u64,
    pub n_discordant: u64,
    pub odds_ratio: Option<f64>,
    pub rate_treated_pct: f64,
    pub rate_control_pct: f64,
}

impl NodeAnnotation {
    pub fn from_summary(node_id: usize, depth: usize, label: String, group_id: Option<String>, s: &DiscordantSummary) -> Self {
        Self {
            node_id,
            depth,
            label,
            group_id,
            n_pairs: s.n_pairs,
            n_discordant: s.n_discordant,
            odds_ratio: mcnemar_odds_ratio(s),
            rate_treated_pct: 100.0 * s.event_rate_treated,
            rate_control_pct: 100.0 * s.event_rate_control,
        }
    }

    pub fn abc(&self) -> String {
        let a = self.odds_ratio.map_or_else(|| "NA".to_string(), |v| format!("{v:.2}"));
        format!("A={a} B={:.1} C={:.1}", self.rate_treated_pct, self.rate_control_pct)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedTree {
    pub outcome: String,
    pub nodes: Vec<NodeAnnotation>,
}

impl AnnotatedTree {
    /// Indented text, one node per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for n in &self.nodes {
            let group = n.group_id.as_ref().map(|g| format!(" [group {g}]")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{}{}  n={} d={}{}  {}",
                "  ".repeat(n.depth),
                n.label,
                n.n_pairs,
                n.n_discordant,
                group,
                n.abc()
            );
        }
        out
    }
}

/// Annotates every node with summaries pooled from the leaves beneath it.
/// `leaf_summaries.groups` must be in leaf (group) order.
pub fn describe_tree(tree: &Tree, leaf_summaries: &SummaryTable) -> Result<AnnotatedTree> {
    if leaf_summaries.groups.len() != tree.n_leaves() {
        return Err(Error::invalid(format!(
            "{} summaries for {} leaves",
            leaf_summaries.groups.len(),
            tree.n_leaves()
        )));
    }
    let mut pooled: Vec<Option<DiscordantSummary>> = vec![None; tree.nodes.len()];
    for node in tree.nodes.iter().rev() {
        let s = match (node.leaf_group, node.left, node.right) {
            (Some(g), _, _) => leaf_summaries.groups[g].clone(),
            (None, Some(l), Some(r)) => DiscordantSummary::pooled(
                node.node_id.to_string(),
                [pooled[l].as_ref().expect("child first"), pooled[r].as_ref().expect("child first")],
            ),
            _ => return Err(Error::invalid("malformed tree node")),
        };
        pooled[node.node_id] = Some(s);
    }

    let mut labels = vec![String::from("all pairs"); tree.nodes.len()];
    for node in &tree.nodes {
        if let (Some(split), Some(l), Some(r)) = (&node.split, node.left, node.right) {
            let spec = tree.spec(split.covariate());
            labels[l] = split.describe_side(spec, true);
            labels[r] = split.describe_side(spec, false);
        }
    }

    let group_ids = tree.group_ids();
    let nodes = tree
        .nodes
        .iter()
        .map(|n| {
            NodeAnnotation::from_summary(
                n.node_id,
                n.depth,
                labels[n.node_id].clone(),
                n.leaf_group.map(|g| group_ids[g].clone()),
                pooled[n.node_id].as_ref().expect("filled"),
            )
        })
        .collect();
    Ok(AnnotatedTree {
        outcome: tree.outcome.clone(),
        nodes,
    })
}
