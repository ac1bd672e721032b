//! Patients, matched pairs and the discordant-pair counts computed from them.
//!
//! Outcomes are binary with `1 = event` (death, ICU admission, ...). A pair's
//! signed difference is `treated - control`, so a pair where only the control
//! member has the event contributes to `n_control_only`.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensitivity::Direction;
use crate::tree::Partition;

/// Column layout of a patient file. Columns not named here are ignored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientSchema {
    /// Categorical columns defining the exact-matching strata (e.g. procedure).
    pub stratum: Vec<String>,
    /// Binary refinement covariates (e.g. age>75, CHF, emergency admission).
    pub refinement: Vec<String>,
    /// Binary outcome columns.
    pub outcomes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatientRecord {
    pub patient_id: String,
    pub treated: bool,
    /// Values aligned with [`PatientSchema::stratum`].
    pub stratum_key: Vec<String>,
    /// Values aligned with [`PatientSchema::refinement`].
    pub refinement_key: Vec<bool>,
    /// Values aligned with [`PatientSchema::outcomes`].
    pub outcomes: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatientTable {
    pub schema: PatientSchema,
    pub records: Vec<PatientRecord>,
}

impl PatientTable {
    pub fn n_treated(&self) -> usize {
        self.records.iter().filter(|r| r.treated).count()
    }

    pub fn n_control(&self) -> usize {
        self.records.len() - self.n_treated()
    }

    /// Value of a stratum or refinement key for one record, as text.
    fn key_value<'a>(&self, record: &'a PatientRecord, key: KeyRef) -> &'a str {
        match key {
            KeyRef::Stratum(i) => &record.stratum_key[i],
            KeyRef::Refinement(i) => bool_str(record.refinement_key[i]),
        }
    }

    fn resolve_key(&self, name: &str) -> Result<KeyRef> {
        if let Some(i) = self.schema.stratum.iter().position(|c| c == name) {
            Ok(KeyRef::Stratum(i))
        } else if let Some(i) = self.schema.refinement.iter().position(|c| c == name) {
            Ok(KeyRef::Refinement(i))
        } else {
            Err(Error::UnknownKey(name.to_string()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum KeyRef {
    Stratum(usize),
    Refinement(usize),
}

fn bool_str(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

fn parse_binary(value: &str, line: u64, column: &str) -> Result<bool> {
    match value.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::NonBinary {
            line,
            column: column.to_string(),
            value: other.to_string(),
        }),
    }
}

fn header_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::MissingColumn(name.to_string()))
}

fn csv_error(err: csv::Error) -> Error {
    match err.position() {
        Some(pos) => Error::Parse {
            line: pos.line(),
            message: err.to_string(),
        },
        None => Error::Csv(err),
    }
}

pub fn load_patients(path: impl AsRef<Path>, schema: &PatientSchema) -> Result<PatientTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_patients(file, schema)
}

/// Parses a patient CSV (`patient_id,treated,<stratum>,<refinement>,<outcomes>`).
pub fn read_patients<R: Read>(reader: R, schema: &PatientSchema) -> Result<PatientTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    // A zero-byte file is an empty table, not a file with missing columns.
    if headers.is_empty() {
        return Ok(PatientTable {
            schema: schema.clone(),
            records: Vec::new(),
        });
    }

    let id_col = header_index(&headers, "patient_id")?;
    let treated_col = header_index(&headers, "treated")?;
    let stratum_cols = schema
        .stratum
        .iter()
        .map(|c| header_index(&headers, c))
        .collect::<Result<Vec<_>>>()?;
    let refinement_cols = schema
        .refinement
        .iter()
        .map(|c| header_index(&headers, c))
        .collect::<Result<Vec<_>>>()?;
    let outcome_cols = schema
        .outcomes
        .iter()
        .map(|c| header_index(&headers, c))
        .collect::<Result<Vec<_>>>()?;

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_error)?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |col: usize, name: &str| -> Result<&str> {
            let v = row.get(col).map(str::trim).unwrap_or("");
            if v.is_empty() {
                return Err(Error::Parse {
                    line,
                    message: format!("missing value for `{name}`"),
                });
            }
            Ok(v)
        };

        let patient_id = field(id_col, "patient_id")?.to_string();
        if !seen.insert(patient_id.clone()) {
            return Err(Error::DuplicateId(patient_id));
        }
        let treated = parse_binary(field(treated_col, "treated")?, line, "treated")?;
        let stratum_key = stratum_cols
            .iter()
            .zip(&schema.stratum)
            .map(|(&c, name)| field(c, name).map(str::to_string))
            .collect::<Result<Vec<_>>>()?;
        let refinement_key = refinement_cols
            .iter()
            .zip(&schema.refinement)
            .map(|(&c, name)| parse_binary(field(c, name)?, line, name))
            .collect::<Result<Vec<_>>>()?;
        let outcomes = outcome_cols
            .iter()
            .zip(&schema.outcomes)
            .map(|(&c, name)| parse_binary(field(c, name)?, line, name))
            .collect::<Result<Vec<_>>>()?;

        records.push(PatientRecord {
            patient_id,
            treated,
            stratum_key,
            refinement_key,
            outcomes,
        });
    }

    Ok(PatientTable {
        schema: schema.clone(),
        records,
    })
}

/// Outcome of one pair: whether the treated and the control member had the event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OutcomePair {
    pub treated: bool,
    pub control: bool,
}

impl OutcomePair {
    pub fn new(treated: bool, control: bool) -> Self {
        Self { treated, control }
    }

    /// `Y_i = treated - control`.
    pub fn signed(self) -> i8 {
        self.treated as i8 - self.control as i8
    }

    /// `|Y_i|`.
    pub fn unsigned(self) -> u8 {
        (self.treated != self.control) as u8
    }

    pub fn is_discordant(self) -> bool {
        self.treated != self.control
    }

    pub fn swapped(self) -> Self {
        Self {
            treated: self.control,
            control: self.treated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairRecord {
    pub pair_id: String,
    /// Covariate values shared by both members, aligned with [`PairSet::covariates`].
    pub covariates: Vec<String>,
    /// One entry per outcome, aligned with [`PairSet::outcomes`].
    pub outcomes: Vec<OutcomePair>,
}

impl PairRecord {
    /// Exchanges the treated and control roles, flipping the sign of every `Y_i`.
    pub fn swap_roles(&mut self) {
        for o in &mut self.outcomes {
            *o = o.swapped();
        }
    }
}

/// A collection of matched pairs together with its column layout.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PairSet {
    pub covariates: Vec<String>,
    pub outcomes: Vec<String>,
    pub pairs: Vec<PairRecord>,
}

impl PairSet {
    pub fn new(covariates: Vec<String>, outcomes: Vec<String>) -> Self {
        Self {
            covariates,
            outcomes,
            pairs: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn outcome_index(&self, name: &str) -> Result<usize> {
        self.outcomes
            .iter()
            .position(|o| o == name)
            .ok_or_else(|| Error::UnknownOutcome(name.to_string()))
    }

    pub fn covariate_index(&self, name: &str) -> Result<usize> {
        self.covariates
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    /// Outcomes of every pair for one named outcome, in pair order.
    pub fn outcome_column(&self, name: &str) -> Result<Vec<OutcomePair>> {
        let idx = self.outcome_index(name)?;
        Ok(self.pairs.iter().map(|p| p.outcomes[idx]).collect())
    }

    pub fn covariate_column(&self, name: &str) -> Result<Vec<&str>> {
        let idx = self.covariate_index(name)?;
        Ok(self.pairs.iter().map(|p| p.covariates[idx].as_str()).collect())
    }

    pub fn pair_ids(&self) -> Vec<String> {
        self.pairs.iter().map(|p| p.pair_id.clone()).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file)
    }

    /// Parses `pair_id,<covariates>,<outcome>_treated,<outcome>_control,...`.
    ///
    /// A column pair `X_treated`/`X_control` declares outcome `X`; every other
    /// column is a covariate.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers: Vec<String> = rdr
            .headers()
            .map_err(csv_error)?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let id_col = headers
            .iter()
            .position(|h| h == "pair_id")
            .ok_or_else(|| Error::MissingColumn("pair_id".into()))?;

        let mut outcomes = Vec::new();
        let mut outcome_cols = Vec::new();
        let mut used = HashSet::from([id_col]);
        for (i, h) in headers.iter().enumerate() {
            if let Some(name) = h.strip_suffix("_treated") {
                let control = format!("{name}_control");
                if let Some(j) = headers.iter().position(|c| *c == control) {
                    outcomes.push(name.to_string());
                    outcome_cols.push((i, j));
                    used.insert(i);
                    used.insert(j);
                }
            }
        }
        let covariate_cols: Vec<usize> = (0..headers.len()).filter(|i| !used.contains(i)).collect();
        let covariates = covariate_cols.iter().map(|&i| headers[i].clone()).collect();

        let mut set = PairSet::new(covariates, outcomes);
        let mut seen = HashSet::new();
        for row in rdr.records() {
            let row = row.map_err(csv_error)?;
            let line = row.position().map_or(0, |p| p.line());
            let get = |i: usize| row.get(i).map(str::trim).unwrap_or("");
            let pair_id = get(id_col).to_string();
            if pair_id.is_empty() {
                return Err(Error::Parse {
                    line,
                    message: "missing pair_id".into(),
                });
            }
            if !seen.insert(pair_id.clone()) {
                return Err(Error::Parse {
                    line,
                    message: format!("duplicate pair_id `{pair_id}`"),
                });
            }
            let mut covs = Vec::with_capacity(covariate_cols.len());
            for &i in &covariate_cols {
                let v = get(i);
                if v.is_empty() {
                    return Err(Error::Parse {
                        line,
                        message: format!("missing value for `{}`", headers[i]),
                    });
                }
                covs.push(v.to_string());
            }
            let outs = outcome_cols
                .iter()
                .map(|&(t, c)| {
                    Ok(OutcomePair::new(
                        parse_binary(get(t), line, &headers[t])?,
                        parse_binary(get(c), line, &headers[c])?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            set.pairs.push(PairRecord {
                pair_id,
                covariates: covs,
                outcomes: outs,
            });
        }
        Ok(set)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().from_writer(writer);
        let mut header = vec!["pair_id".to_string()];
        header.extend(self.covariates.iter().cloned());
        for o in &self.outcomes {
            header.push(format!("{o}_treated"));
            header.push(format!("{o}_control"));
        }
        wtr.write_record(&header)?;
        for p in &self.pairs {
            let mut row: Vec<&str> = vec![&p.pair_id];
            row.extend(p.covariates.iter().map(String::as_str));
            for o in &p.outcomes {
                row.push(bool_str(o.treated));
                row.push(bool_str(o.control));
            }
            wtr.write_record(&row)?;
        }
        wtr.flush().map_err(|e| Error::io("<pairs>", e))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

/// Per-phase counts from [`repair_exact`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairingReport {
    pub n_patients: usize,
    pub n_treated: usize,
    pub n_control: usize,
    pub fine_keys: Vec<String>,
    pub coarse_keys: Vec<String>,
    pub fine_cells: usize,
    pub fine_pairs: usize,
    pub coarse_pairs: usize,
    pub total_pairs: usize,
    pub unpaired: usize,
    pub unpaired_treated: usize,
    pub unpaired_control: usize,
}

#[derive(Debug, Clone)]
pub struct Repairing {
    pub pairs: PairSet,
    pub unpaired: Vec<PatientRecord>,
    pub report: PairingReport,
}

/// Groups record indices by cell, keeping cells in first-appearance order.
fn cells_of(
    table: &PatientTable,
    indices: &[usize],
    keys: &[KeyRef],
) -> Vec<(Vec<String>, Vec<usize>, Vec<usize>)> {
    let mut order: Vec<(Vec<String>, Vec<usize>, Vec<usize>)> = Vec::new();
    let mut lookup: HashMap<Vec<String>, usize> = HashMap::new();
    for &i in indices {
        let rec = &table.records[i];
        let key: Vec<String> = keys.iter().map(|&k| table.key_value(rec, k).to_string()).collect();
        let slot = *lookup.entry(key.clone()).or_insert_with(|| {
            order.push((key, Vec::new(), Vec::new()));
            order.len() - 1
        });
        if rec.treated {
            order[slot].1.push(i);
        } else {
            order[slot].2.push(i);
        }
    }
    order
}

/// Exact stratified re-pairing.
///
/// Phase 1 pairs treated and control patients within each cell of
/// `stratum ⊗ fine_keys`; phase 2 pairs the leftovers within each cell of
/// `stratum ⊗ coarse_keys`. Each cell yields `min(#treated, #control)` pairs,
/// matched in ascending input order.
///
/// Pairs carry the stratum columns followed by the coarse keys as covariates:
/// those are the only keys guaranteed identical within every pair.
pub fn repair_exact(
    table: &PatientTable,
    fine_keys: &[String],
    coarse_keys: &[String],
) -> Result<Repairing> {
    let stratum: Vec<KeyRef> = (0..table.schema.stratum.len()).map(KeyRef::Stratum).collect();
    let resolve = |names: &[String]| -> Result<Vec<KeyRef>> {
        let mut keys = stratum.clone();
        for n in names {
            let k = table.resolve_key(n)?;
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        Ok(keys)
    };
    let fine = resolve(fine_keys)?;
    let coarse = resolve(coarse_keys)?;

    let covariate_keys = coarse.clone();
    let covariate_names: Vec<String> = covariate_keys
        .iter()
        .map(|k| match *k {
            KeyRef::Stratum(i) => table.schema.stratum[i].clone(),
            KeyRef::Refinement(i) => table.schema.refinement[i].clone(),
        })
        .collect();

    let mut set = PairSet::new(covariate_names, table.schema.outcomes.clone());
    let mut push_pair = |t: usize, c: usize| {
        let tr = &table.records[t];
        let cr = &table.records[c];
        let covariates = covariate_keys
            .iter()
            .map(|&k| table.key_value(tr, k).to_string())
            .collect();
        let outcomes = tr
            .outcomes
            .iter()
            .zip(&cr.outcomes)
            .map(|(&a, &b)| OutcomePair::new(a, b))
            .collect();
        let pair_id = (set.pairs.len() + 1).to_string();
        set.pairs.push(PairRecord {
            pair_id,
            covariates,
            outcomes,
        });
    };

    let all: Vec<usize> = (0..table.records.len()).collect();
    let fine_cells = cells_of(table, &all, &fine);
    let mut leftovers = Vec::new();
    let mut fine_pairs = 0;
    for (_, treated, control) in &fine_cells {
        let m = treated.len().min(control.len());
        for (&t, &c) in treated.iter().zip(control) {
            push_pair(t, c);
        }
        fine_pairs += m;
        leftovers.extend_from_slice(&treated[m..]);
        leftovers.extend_from_slice(&control[m..]);
    }
    leftovers.sort_unstable();

    let mut unpaired_idx = Vec::new();
    let mut coarse_pairs = 0;
    for (_, treated, control) in cells_of(table, &leftovers, &coarse) {
        let m = treated.len().min(control.len());
        for (&t, &c) in treated.iter().zip(&control) {
            push_pair(t, c);
        }
        coarse_pairs += m;
        unpaired_idx.extend_from_slice(&treated[m..]);
        unpaired_idx.extend_from_slice(&control[m..]);
    }
    unpaired_idx.sort_unstable();
    let unpaired: Vec<PatientRecord> = unpaired_idx.iter().map(|&i| table.records[i].clone()).collect();
    let unpaired_treated = unpaired.iter().filter(|r| r.treated).count();

    let report = PairingReport {
        n_patients: table.records.len(),
        n_treated: table.n_treated(),
        n_control: table.n_control(),
        fine_keys: fine_keys.to_vec(),
        coarse_keys: coarse_keys.to_vec(),
        fine_cells: fine_cells.len(),
        fine_pairs,
        coarse_pairs,
        total_pairs: fine_pairs + coarse_pairs,
        unpaired: unpaired.len(),
        unpaired_treated,
        unpaired_control: unpaired.len() - unpaired_treated,
    };
    Ok(Repairing {
        pairs: set,
        unpaired,
        report,
    })
}

/// Discordant-pair counts for one group and one outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscordantSummary {
    pub group_id: String,
    /// `I_g`
    pub n_pairs: u64,
    /// `D`
    pub n_discordant: u64,
    /// `T`: discordant pairs where only the control member had the event.
    pub n_control_only: u64,
    /// `D - T`
    pub n_treated_only: u64,
    pub n_events_treated: u64,
    pub n_events_control: u64,
    pub event_rate_treated: f64,
    pub event_rate_control: f64,
}

impl DiscordantSummary {
    pub fn from_outcomes(group_id: impl Into<String>, outcomes: impl IntoIterator<Item = OutcomePair>) -> Self {
        let mut counts = Counts::default();
        for o in outcomes {
            counts.add(o);
        }
        counts.finish(group_id.into())
    }

    /// Builds a summary directly from discordant counts, without event totals.
    pub fn from_counts(group_id: impl Into<String>, n_pairs: u64, n_discordant: u64, n_control_only: u64) -> Result<Self> {
        if n_control_only > n_discordant || n_discordant > n_pairs {
            return Err(Error::invalid(format!(
                "need T <= D <= I, got T={n_control_only} D={n_discordant} I={n_pairs}"
            )));
        }
        Ok(Self {
            group_id: group_id.into(),
            n_pairs,
            n_discordant,
            n_control_only,
            n_treated_only: n_discordant - n_control_only,
            n_events_treated: n_discordant - n_control_only,
            n_events_control: n_control_only,
            event_rate_treated: rate(n_discordant - n_control_only, n_pairs),
            event_rate_control: rate(n_control_only, n_pairs),
        })
    }

    pub fn proportion_discordant(&self) -> f64 {
        rate(self.n_discordant, self.n_pairs)
    }

    /// Count of discordant pairs favouring the alternative in `direction`.
    pub fn test_count(&self, direction: Direction) -> u64 {
        match direction {
            Direction::ControlExcess => self.n_control_only,
            Direction::TreatedExcess => self.n_treated_only,
        }
    }

    fn merge(&mut self, other: &DiscordantSummary) {
        self.n_pairs += other.n_pairs;
        self.n_discordant += other.n_discordant;
        self.n_control_only += other.n_control_only;
        self.n_treated_only += other.n_treated_only;
        self.n_events_treated += other.n_events_treated;
        self.n_events_control += other.n_events_control;
        self.event_rate_treated = rate(self.n_events_treated, self.n_pairs);
        self.event_rate_control = rate(self.n_events_control, self.n_pairs);
    }

    /// Sums summaries; used for the pooled row and internal tree nodes.
    pub fn pooled<'a>(group_id: impl Into<String>, parts: impl IntoIterator<Item = &'a DiscordantSummary>) -> Self {
        let mut acc = Counts::default().finish(group_id.into());
        for p in parts {
            acc.merge(p);
        }
        acc
    }
}

fn rate(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Default)]
struct Counts {
    n: u64,
    control_only: u64,
    treated_only: u64,
    treated_events: u64,
    control_events: u64,
}

impl Counts {
    fn add(&mut self, o: OutcomePair) {
        self.n += 1;
        self.treated_events += o.treated as u64;
        self.control_events += o.control as u64;
        match (o.treated, o.control) {
            (false, true) => self.control_only += 1,
            (true, false) => self.treated_only += 1,
            _ => {}
        }
    }

    fn finish(self, group_id: String) -> DiscordantSummary {
        DiscordantSummary {
            group_id,
            n_pairs: self.n,
            n_discordant: self.control_only + self.treated_only,
            n_control_only: self.control_only,
            n_treated_only: self.treated_only,
            n_events_treated: self.treated_events,
            n_events_control: self.control_events,
            event_rate_treated: rate(self.treated_events, self.n),
            event_rate_control: rate(self.control_events, self.n),
        }
    }
}

/// Per-group summaries for one outcome plus the pooled row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub outcome: String,
    pub groups: Vec<DiscordantSummary>,
    pub pooled: DiscordantSummary,
}

pub fn summarize(pairs: &PairSet, partition: &Partition, outcome: &str) -> Result<SummaryTable> {
    partition.check_matches(pairs)?;
    let idx = pairs.outcome_index(outcome)?;
    let mut counts: Vec<Counts> = partition.group_ids.iter().map(|_| Counts::default()).collect();
    for (pair, &g) in pairs.pairs.iter().zip(&partition.assignment) {
        counts[g].add(pair.outcomes[idx]);
    }
    let groups: Vec<DiscordantSummary> = counts
        .into_iter()
        .zip(&partition.group_ids)
        .map(|(c, id)| c.finish(id.clone()))
        .collect();
    let pooled = DiscordantSummary::pooled("pooled", &groups);
    Ok(SummaryTable {
        outcome: outcome.to_string(),
        groups,
        pooled,
    })
}

/// One category of a composite per-member outcome, e.g. "alive, ICU" is
/// `death = 0, icu = 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisCategory {
    pub name: String,
    pub conditions: Vec<(String, bool)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub categories: Vec<AxisCategory>,
}

impl AxisSpec {
    pub fn new(categories: impl IntoIterator<Item = (impl Into<String>, Vec<(&'static str, bool)>)>) -> Self {
        Self {
            categories: categories
                .into_iter()
                .map(|(name, conds)| AxisCategory {
                    name: name.into(),
                    conditions: conds.into_iter().map(|(o, v)| (o.to_string(), v)).collect(),
                })
                .collect(),
        }
    }

    /// Dead / alive with ICU / alive without ICU.
    pub fn death_icu(death: &'static str, icu: &'static str) -> Self {
        Self::new([
            ("Dead", vec![(death, true)]),
            ("Alive, ICU", vec![(death, false), (icu, true)]),
            ("Alive, no ICU", vec![(death, false), (icu, false)]),
        ])
    }
}

/// Pair counts cross-classified by the control member's category (rows)
/// and the treated member's category (columns).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedCrossTab {
    pub categories: Vec<String>,
    /// `counts[control][treated]`
    pub counts: Vec<Vec<u64>>,
    pub row_totals: Vec<u64>,
    pub col_totals: Vec<u64>,
    pub total: u64,
}

impl PairedCrossTab {
    pub fn from_counts(categories: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = categories.len();
        if counts.len() != k || counts.iter().any(|r| r.len() != k) {
            return Err(Error::invalid("cross-tab must be square over the categories"));
        }
        let row_totals: Vec<u64> = counts.iter().map(|r| r.iter().sum()).collect();
        let col_totals: Vec<u64> = (0..k).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
        let total = row_totals.iter().sum();
        Ok(Self {
            categories,
            counts,
            row_totals,
            col_totals,
            total,
        })
    }

    /// Expands the table back into pairs. Outcomes not constrained by a
    /// category are set to 0.
    pub fn expand(&self, axis: &AxisSpec, outcomes: &[String]) -> Result<PairSet> {
        if axis.categories.len() != self.categories.len() {
            return Err(Error::invalid("axis does not match cross-tab categories"));
        }
        let profile = |cat: &AxisCategory| -> Result<Vec<bool>> {
            let mut v = vec![false; outcomes.len()];
            for (name, value) in &cat.conditions {
                let i = outcomes
                    .iter()
                    .position(|o| o == name)
                    .ok_or_else(|| Error::UnknownOutcome(name.clone()))?;
                v[i] = *value;
            }
            Ok(v)
        };
        let profiles = axis.categories.iter().map(profile).collect::<Result<Vec<_>>>()?;
        let mut set = PairSet::new(Vec::new(), outcomes.to_vec());
        for (c, row) in self.counts.iter().enumerate() {
            for (t, &n) in row.iter().enumerate() {
                for _ in 0..n {
                    let outs = profiles[t]
                        .iter()
                        .zip(&profiles[c])
                        .map(|(&a, &b)| OutcomePair::new(a, b))
                        .collect();
                    set.pairs.push(PairRecord {
                        pair_id: (set.pairs.len() + 1).to_string(),
                        covariates: Vec::new(),
                        outcomes: outs,
                    });
                }
            }
        }
        Ok(set)
    }
}

pub fn crosstab(pairs: &PairSet, axis: &AxisSpec) -> Result<PairedCrossTab> {
    let resolved: Vec<Vec<(usize, bool)>> = axis
        .categories
        .iter()
        .map(|cat| {
            cat.conditions
                .iter()
                .map(|(name, v)| Ok((pairs.outcome_index(name)?, *v)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let classify = |pair: &PairRecord, treated: bool| -> Result<usize> {
        let value = |i: usize| {
            let o = pair.outcomes[i];
            if treated {
                o.treated
            } else {
                o.control
            }
        };
        let mut hit = None;
        for (k, conds) in resolved.iter().enumerate() {
            if conds.iter().all(|&(i, v)| value(i) == v) {
                if hit.is_some() {
                    return Err(Error::invalid(format!(
                        "pair {} matches more than one category",
                        pair.pair_id
                    )));
                }
                hit = Some(k);
            }
        }
        hit.ok_or_else(|| Error::invalid(format!("pair {} matches no category", pair.pair_id)))
    };

    let k = axis.categories.len();
    let mut counts = vec![vec![0u64; k]; k];
    for pair in &pairs.pairs {
        let c = classify(pair, false)?;
        let t = classify(pair, true)?;
        counts[c][t] += 1;
    }
    PairedCrossTab::from_counts(axis.categories.iter().map(|c| c.name.clone()).collect(), counts)
}
