//! `effectmod`: batch command-line front end.
//!
//! Exit codes: 0 success, 1 input error, 2 numeric failure. Failures print a
//! JSON object `{"error", "kind", "exit_code"}` on stderr.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use effectmod::pairs::PatientSchema;
use effectmod::pipeline::{amplification_table, fit_tree, parse_config_text, InputDigest};
use effectmod::simulate::{simulate, SyntheticSpec};
use effectmod::{load_patients, repair_exact, run_analyze, AnalysisConfig, Error, PairSet};

#[derive(Parser)]
#[command(name = "effectmod", version, about = "Effect modification and sensitivity analysis for matched pairs with binary outcomes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Re-pair patients exactly within strata and write a pair CSV.
    Pair(PairArgs),
    /// Fit the regression tree on |Y| of the primary outcome.
    Tree(AnalysisArgs),
    /// Per-group bounds, combination, closed testing and amplification.
    Analyze(AnalysisArgs),
    /// Generate synthetic pairs from a JSON spec.
    Simulate(SimulateArgs),
    /// Tabulate Delta for each Gamma and Lambda.
    Amplify(AmplifyArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Args)]
struct PairArgs {
    /// Patient CSV with `patient_id`, `treated` and the named columns.
    #[arg(long)]
    patients: PathBuf,
    /// Categorical stratum columns.
    #[arg(long, value_delimiter = ',')]
    stratum: Vec<String>,
    /// Binary keys for the first pairing pass.
    #[arg(long, value_delimiter = ',')]
    fine: Vec<String>,
    /// Binary keys for pairing leftovers.
    #[arg(long, value_delimiter = ',')]
    coarse: Vec<String>,
    /// Binary outcome columns carried into the pair file.
    #[arg(long, value_delimiter = ',', required = true)]
    outcome: Vec<String>,
    /// Writes `pairs.csv` and `pairing_report.json` here; otherwise pairs go to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args)]
struct AnalysisArgs {
    /// Pair CSV as written by `pair` or `simulate`.
    #[arg(long)]
    pairs: PathBuf,
    /// Key-value config file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Outcomes, primary first.
    #[arg(long)]
    outcome: Option<String>,
    /// `tree` or the name of a group column in the pair file.
    #[arg(long)]
    groups: Option<String>,
    /// Comma-separated Gamma grid, sorted, each at least 1.
    #[arg(long)]
    gamma: Option<String>,
    /// Truncation threshold for the combined test (default 0.1).
    #[arg(long)]
    tau: Option<String>,
    /// Family-wise level for closed testing (default 0.05).
    #[arg(long)]
    alpha: Option<String>,
    /// Lambda values for the amplification table.
    #[arg(long)]
    lambda: Option<String>,
    /// Per-outcome direction, e.g. `icu=control,readmit=treated`.
    #[arg(long)]
    direction: Option<String>,
    /// `exact` or `normal`.
    #[arg(long)]
    method: Option<String>,
    /// Covariates the tree may split on; defaults to all.
    #[arg(long)]
    covariates: Option<String>,
    /// Smallest node the tree will try to split.
    #[arg(long)]
    min_split: Option<String>,
    /// Smallest leaf the tree may create.
    #[arg(long)]
    min_leaf: Option<String>,
    /// Minimum split gain as a fraction of the root error.
    #[arg(long)]
    cp: Option<String>,
    /// Maximum tree depth.
    #[arg(long)]
    max_depth: Option<String>,
    /// Step of the scan for the largest rejected Gamma.
    #[arg(long)]
    resolution: Option<String>,
    /// Upper end of that scan.
    #[arg(long)]
    gamma_limit: Option<String>,
    /// Largest group count accepted for closed testing.
    #[arg(long)]
    max_groups: Option<String>,
    /// Re-split each group on secondary outcomes.
    #[arg(long)]
    subdivide_secondary: bool,
    /// Output directory; `analyze` writes reports and grids, `tree` writes the tree and group labels.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON synthetic spec.
    #[arg(long)]
    spec: PathBuf,
    /// Overrides the seed in the spec file.
    #[arg(long)]
    seed: Option<u64>,
    /// Writes `pairs.csv` and `truth.json` here; otherwise pairs go to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AmplifyArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    gamma: Vec<f64>,
    #[arg(long, value_delimiter = ',', required = true)]
    lambda: Vec<f64>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

/// Files to write once the command has succeeded.
#[derive(Default)]
struct Output {
    stdout: String,
    files: Vec<(PathBuf, String)>,
}

impl Output {
    fn file(&mut self, dir: &Path, name: &str, contents: String) {
        self.files.push((dir.join(name), contents));
    }

    fn flush(self) -> Result<(), Error> {
        for (path, contents) in &self.files {
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
            }
            fs::write(path, contents).map_err(|e| io_err(path, e))?;
        }
        let mut out = std::io::stdout().lock();
        out.write_all(self.stdout.as_bytes()).map_err(|e| io_err(Path::new("<stdout>"), e))?;
        Ok(())
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_text(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn with_newline(mut s: String) -> String {
    if !s.ends_with('\n') {
        s.push('\n');
    }
    s
}

fn run_pair(a: PairArgs) -> Result<Output, Error> {
    let schema = PatientSchema {
        stratum: a.stratum.clone(),
        refinement: a.fine.iter().chain(&a.coarse).fold(Vec::new(), |mut v, k| {
            if !v.contains(k) && !a.stratum.contains(k) {
                v.push(k.clone());
            }
            v
        }),
        outcomes: a.outcome,
    };
    let table = load_patients(&a.patients, &schema)?;
    let result = repair_exact(&table, &a.fine, &a.coarse)?;
    let csv = result.pairs.to_csv_string()?;
    let report = &result.report;
    let mut out = Output::default();
    match a.out {
        Some(dir) => {
            out.file(&dir, "pairs.csv", csv);
            out.file(&dir, "pairing_report.json", with_newline(serde_json::to_string_pretty(report)?));
            out.stdout = match a.format {
                Format::Json => with_newline(serde_json::to_string_pretty(report)?),
                Format::Csv | Format::Text => format!(
                    "{} pairs ({} fine, {} coarse); {} of {} patients unpaired\n",
                    report.total_pairs, report.fine_pairs, report.coarse_pairs, report.unpaired, report.n_patients
                ),
            };
        }
        None => out.stdout = csv,
    }
    Ok(out)
}

fn analysis_config(a: &AnalysisArgs) -> Result<(AnalysisConfig, Vec<InputDigest>), Error> {
    let mut cfg = AnalysisConfig::default();
    let mut inputs = vec![InputDigest::of_file(&a.pairs)?];
    if let Some(path) = &a.config {
        let text = read_text(path)?;
        for (k, v) in parse_config_text(&text)? {
            cfg.set(&k, &v)?;
        }
        inputs.push(InputDigest::of_bytes(
            path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned()),
            text.as_bytes(),
        ));
    }
    let flags = [
        ("outcome", &a.outcome),
        ("groups", &a.groups),
        ("gamma", &a.gamma),
        ("tau", &a.tau),
        ("alpha", &a.alpha),
        ("lambda", &a.lambda),
        ("direction", &a.direction),
        ("method", &a.method),
        ("covariates", &a.covariates),
        ("min_split", &a.min_split),
        ("min_leaf", &a.min_leaf),
        ("cp", &a.cp),
        ("max_depth", &a.max_depth),
        ("resolution", &a.resolution),
        ("gamma_limit", &a.gamma_limit),
        ("max_groups", &a.max_groups),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    if a.subdivide_secondary {
        cfg.subdivide_secondary = true;
    }
    Ok((cfg, inputs))
}

fn run_tree(a: AnalysisArgs) -> Result<Output, Error> {
    let (cfg, _) = analysis_config(&a)?;
    if cfg.outcomes.is_empty() {
        return Err(Error::InvalidArgument("at least one outcome is required".into()));
    }
    cfg.tree.validate()?;
    let pairs = PairSet::load(&a.pairs)?;
    let (tree, partition, annotated) = fit_tree(&pairs, &cfg)?;
    let json = with_newline(tree.to_json()?);
    let text = annotated.render();
    let mut groups = String::from("pair_id,group\n");
    for (id, &g) in partition.pair_ids.iter().zip(&partition.assignment) {
        groups.push_str(&format!("{id},{}\n", partition.group_ids[g]));
    }
    let mut out = Output::default();
    if let Some(dir) = &a.out {
        out.file(dir, "tree.json", json.clone());
        out.file(dir, "tree.txt", text.clone());
        out.file(dir, "groups.csv", groups.clone());
    }
    out.stdout = match a.format {
        Format::Json => json,
        Format::Text => text,
        Format::Csv => groups,
    };
    Ok(out)
}

fn run_analyze_cmd(a: AnalysisArgs) -> Result<Output, Error> {
    let (cfg, inputs) = analysis_config(&a)?;
    cfg.validate()?;
    let pairs = PairSet::load(&a.pairs)?;
    let bundle = run_analyze(&cfg, &pairs, inputs)?;
    let json = with_newline(bundle.to_json()?);
    let text = bundle.render_text();
    let grids = bundle
        .outcomes
        .iter()
        .map(|o| o.grid_csv().map(|csv| (o.outcome.clone(), csv)))
        .collect::<Result<Vec<_>, _>>()?;

    let mut out = Output::default();
    if let Some(dir) = &a.out {
        out.file(dir, "report.json", json.clone());
        out.file(dir, "report.txt", text.clone());
        if let Some(t) = &bundle.tree {
            out.file(dir, "tree.json", with_newline(t.to_json()?));
        }
        for (name, csv) in &grids {
            out.file(dir, &format!("grid_{name}.csv"), csv.clone());
        }
    }
    out.stdout = match a.format {
        Format::Json => json,
        Format::Text => text,
        // One grid per outcome, separated by a blank line.
        Format::Csv => grids.into_iter().map(|(_, csv)| csv).collect::<Vec<_>>().join("\n"),
    };
    Ok(out)
}

fn run_simulate(a: SimulateArgs) -> Result<Output, Error> {
    let mut spec: SyntheticSpec = serde_json::from_str(&read_text(&a.spec)?)?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let sim = simulate(&spec)?;
    let csv = sim.pairs.to_csv_string()?;
    let mut out = Output::default();
    match a.out {
        Some(dir) => {
            out.file(&dir, "pairs.csv", csv);
            out.file(&dir, "truth.json", with_newline(serde_json::to_string_pretty(&sim.truth)?));
            out.stdout = format!("{} pairs written\n", sim.pairs.len());
        }
        None => out.stdout = csv,
    }
    Ok(out)
}

fn run_amplify(a: AmplifyArgs) -> Result<Output, Error> {
    for &g in &a.gamma {
        for &l in &a.lambda {
            if l <= g {
                return Err(Error::InvalidArgument(format!("lambda {l} must exceed gamma {g}")));
            }
        }
    }
    let rows = amplification_table(&a.gamma, &a.lambda)?;
    let stdout = match a.format {
        Format::Json => with_newline(serde_json::to_string_pretty(&rows)?),
        Format::Csv => {
            let mut s = String::from("gamma,lambda,delta\n");
            for r in &rows {
                s.push_str(&format!("{},{},{}\n", r.gamma, r.lambda, r.delta));
            }
            s
        }
        Format::Text => {
            let mut s = format!("{:>8}{:>10}{:>10}\n", "Gamma", "Lambda", "Delta");
            for r in &rows {
                s.push_str(&format!("{:>8.2}{:>10.2}{:>10.2}\n", r.gamma, r.lambda, r.delta));
            }
            s
        }
    };
    Ok(Output {
        stdout,
        files: Vec::new(),
    })
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Io { .. } => "io",
        Error::Parse { .. } | Error::Csv(_) | Error::Json(_) => "parse",
        Error::MissingColumn(_) => "missing_column",
        Error::DuplicateId(_) => "duplicate_id",
        Error::NonBinary { .. } => "non_binary",
        Error::UnknownKey(_) => "unknown_key",
        Error::UnknownOutcome(_) => "unknown_outcome",
        Error::Partition(_) => "partition",
        Error::InvalidArgument(_) => "invalid_argument",
        Error::TooManyGroups { .. } => "too_many_groups",
        Error::Numeric(_) => "numeric",
    }
}

fn fail(kind: &str, message: String, code: u8) -> ExitCode {
    let body = json!({ "error": message, "kind": kind, "exit_code": code });
    eprintln!("{body}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim_end().to_string(), 1),
    };
    let result = match cli.command {
        Command::Pair(a) => run_pair(a),
        Command::Tree(a) => run_tree(a),
        Command::Analyze(a) => run_analyze_cmd(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Amplify(a) => run_amplify(a),
    }
    .and_then(Output::flush);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(error_kind(&e), e.to_string(), exit_code(&e)),
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numeric() {
        2
    } else {
        1
    }
}
