//! The `posi` command line: `fit`, `infer`, `simulate` and `oracle-check`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adjust::AdjustmentParams;
use crate::error::{Error, Result};
use crate::groupsolve::{SelectionProblem, SolveOptions};
use crate::linalg::{quantile_sorted, sorted_copy, Mat, Vector};
use crate::model::{
    draw_randomization, format_float, load_dataset, mat_to_rows, parse_groups, rows_to_mat, Dataset, GroupStructure,
    RandomizationConfig, RandomizationCovariance, SelectionRecord, SigmaSpec, Variant,
};
use crate::oracle::{run_oracles, Fault};
use crate::posterior::{Adjustment, PosteriorSpec, Prior};
use crate::sampler::{credible_intervals, functional_intervals, run_chain, ChainConfig, Functional, StepSize};
use crate::simlab::{run_experiment, summarize, write_metrics_csv, write_summary_csv, F1Unit, ScenarioConfig};

#[derive(Debug, Parser)]
#[command(name = "posi", version, about = "Selection-informed Bayesian inference after randomized Group LASSO")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the randomized selection problem and freeze the selection.
    Fit(FitArgs),
    /// Sample the selection-informed posterior and report credible intervals.
    Infer(InferArgs),
    /// Run a simulation scenario and write metrics and summaries.
    Simulate(SimulateArgs),
    /// Check the implementation against its independent oracles.
    OracleCheck(OracleArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Headerless numeric CSV with the n x p design.
    #[arg(long)]
    pub x: PathBuf,
    /// Headerless CSV with the n responses.
    #[arg(long)]
    pub y: PathBuf,
    /// JSON group specification (1-based columns).
    #[arg(long)]
    pub groups: PathBuf,
    /// Isotropic randomization variance.
    #[arg(long, conflicts_with = "omega_cov")]
    pub tau2: Option<f64>,
    /// Headerless CSV with a full randomization covariance (solve coordinates).
    #[arg(long)]
    pub omega_cov: Option<PathBuf>,
    /// Headerless CSV with a realized randomization vector to use instead of
    /// drawing one; `--tau2`/`--omega-cov` still give its covariance.
    #[arg(long)]
    pub omega: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Overrides the variant named in the group file.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Noise standard deviation, or `estimate`.
    #[arg(long, default_value = "estimate")]
    pub sigma: SigmaSpec,
    /// Center and scale every column before solving.
    #[arg(long)]
    pub standardize: bool,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iters: usize,
    #[arg(long, default_value = "selection.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub selection: PathBuf,
    /// Comma-separated credible levels.
    #[arg(long, value_delimiter = ',', default_value = "0.9")]
    pub levels: Vec<f64>,
    #[arg(long, default_value_t = 1500)]
    pub draws: usize,
    #[arg(long, default_value_t = 100)]
    pub burnin: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Langevin step per coordinate (eta = step / |E|).
    #[arg(long, default_value_t = 1.0)]
    pub step: f64,
    /// `flat` or `gaussian` (isotropic, mean zero).
    #[arg(long, default_value = "flat")]
    pub prior: String,
    /// Variance of the Gaussian prior.
    #[arg(long, default_value_t = 1e6)]
    pub prior_var: f64,
    /// Group functional requests such as `l2:group=3` (repeatable).
    #[arg(long)]
    pub functional: Vec<String>,
    /// Ignore the selection adjustment (naive posterior).
    #[arg(long)]
    pub unadjusted: bool,
    #[arg(long, default_value = "intervals.csv")]
    pub out: PathBuf,
    /// Chain export; defaults to `<out>` with extension `chain.csv`.
    #[arg(long)]
    pub chain_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML or JSON scenario file.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, default_value = "results")]
    pub out_dir: PathBuf,
    /// Overrides the replication count of the config.
    #[arg(long)]
    pub replications: Option<usize>,
    /// `group` or `covariate`; overrides the config.
    #[arg(long)]
    pub f1_unit: Option<String>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Run a single oracle family.
    #[arg(long)]
    pub only: Option<String>,
    #[arg(long, hide = true, default_value = "none")]
    pub inject_fault: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub x: PathBuf,
    pub y: PathBuf,
    pub x_sha256: String,
    pub y_sha256: String,
    pub groups_sha256: String,
    pub standardize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomizationRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
    pub seed: u64,
}

impl RandomizationRecord {
    fn config(&self) -> Result<RandomizationConfig> {
        let covariance = match (&self.tau2, &self.covariance) {
            (Some(t), None) => RandomizationCovariance::Isotropic(*t),
            (None, Some(rows)) => RandomizationCovariance::Matrix(rows_to_mat(rows)),
            _ => return Err(Error::Config("give exactly one of --tau2 or --omega-cov".into())),
        };
        Ok(RandomizationConfig { covariance, seed: self.seed })
    }
}

/// Contents of `selection.json`: everything `infer` needs, including the
/// realized randomization, sealed by a SHA-256 digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionFile {
    pub inputs: InputRecord,
    pub groups: serde_json::Value,
    pub sigma: SigmaSpec,
    pub randomization: RandomizationRecord,
    pub tol: f64,
    pub max_iters: usize,
    pub record: SelectionRecord,
    pub digest: String,
}

impl SelectionFile {
    fn compute_digest(&self) -> Result<String> {
        let mut copy = self.clone();
        copy.digest.clear();
        Ok(sha256_hex(serde_json::to_string(&copy)?.as_bytes()))
    }

    pub fn seal(mut self) -> Result<Self> {
        self.digest = self.compute_digest()?;
        Ok(self)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let file: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Digest(format!("{}: cannot parse selection file: {e}", path.display())))?;
        let expect = file.compute_digest()?;
        if expect != file.digest {
            return Err(Error::Digest(format!(
                "{}: content digest {expect} does not match recorded {}",
                path.display(),
                file.digest
            )));
        }
        Ok(file)
    }

    pub fn group_structure(&self, p: usize) -> Result<GroupStructure> {
        GroupStructure::from_json(&self.groups.to_string(), p)
    }
}

/// Run metadata written next to every output.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub args: Vec<String>,
    pub seeds: serde_json::Value,
    pub config_digest: String,
    pub inputs: serde_json::Value,
    pub outputs: serde_json::Value,
    pub elapsed_seconds: f64,
    /// Not part of any digest.
    pub created_unix: u64,
}

impl Manifest {
    fn new(command: &str, args: &[String]) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            args: args.to_vec(),
            seeds: serde_json::Value::Null,
            config_digest: String::new(),
            inputs: serde_json::Value::Null,
            outputs: serde_json::Value::Null,
            elapsed_seconds: 0.0,
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }

    fn record_outputs(&mut self, paths: &[&Path]) -> Result<()> {
        let mut map = serde_json::Map::new();
        for p in paths {
            map.insert(p.display().to_string(), file_digest(p)?.into());
        }
        self.outputs = map.into();
        Ok(())
    }

    fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_os_string();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn randomization_dim(groups: &GroupStructure, p: usize) -> usize {
    match groups.variant {
        Variant::Overlapping => groups.augmented_dim(),
        _ => p,
    }
}

fn load_inputs(x: &Path, y: &Path, standardize: bool, sigma: SigmaSpec) -> Result<Dataset> {
    Ok(load_dataset(x, y, standardize)?.with_sigma(sigma))
}

pub fn cmd_fit(args: &FitArgs, argv: &[String]) -> Result<SelectionFile> {
    let started = Instant::now();
    let opts = SolveOptions { max_iters: args.max_iters, tol: args.tol };
    opts.validate()?;
    let dataset = load_inputs(&args.x, &args.y, args.standardize, args.sigma)?;
    let mut groups = parse_groups(&args.groups, dataset.p())?;
    if let Some(v) = args.variant {
        if v != groups.variant {
            let ridge = match v {
                Variant::Overlapping if groups.ridge == 0.0 => crate::model::DEFAULT_OVERLAP_RIDGE,
                Variant::Overlapping => groups.ridge,
                _ => 0.0,
            };
            let l1 = if v == Variant::Sparse { groups.l1_weight } else { 0.0 };
            groups = GroupStructure::new(v, groups.groups.clone(), groups.weights.clone(), l1, ridge, dataset.p())?;
        }
    }
    let randomization = RandomizationRecord {
        tau2: args.tau2,
        covariance: match &args.omega_cov {
            Some(p) => Some(mat_to_rows(&load_dataset_matrix(p)?)),
            None => None,
        },
        seed: args.seed,
    };
    if randomization.tau2.is_none() && randomization.covariance.is_none() {
        return Err(Error::Config("one of --tau2 or --omega-cov is required".into()));
    }
    let dim = randomization_dim(&groups, dataset.p());
    let omega = match &args.omega {
        Some(path) => {
            let m = load_dataset_matrix(path)?;
            if m.len() != dim {
                return Err(Error::Dimension(format!("{}: expected {dim} randomization values, got {}", path.display(), m.len())));
            }
            Vector::from_iterator(dim, m.iter().copied())
        }
        None => draw_randomization(&randomization.config()?, dim)?,
    };
    let problem = SelectionProblem::new(&dataset, &groups)?;
    let solution = problem.solve(&omega, &opts)?;
    let record = problem.freeze_selection(&dataset, &groups, &omega, &solution, &opts)?;

    let file = SelectionFile {
        inputs: InputRecord {
            x: args.x.clone(),
            y: args.y.clone(),
            x_sha256: file_digest(&args.x)?,
            y_sha256: file_digest(&args.y)?,
            groups_sha256: file_digest(&args.groups)?,
            standardize: args.standardize,
        },
        groups: serde_json::from_str(&groups.to_json())?,
        sigma: args.sigma,
        randomization,
        tol: args.tol,
        max_iters: args.max_iters,
        record,
        digest: String::new(),
    }
    .seal()?;
    file.write(&args.out)?;

    let mut manifest = Manifest::new("fit", argv);
    manifest.seeds = serde_json::json!({ "randomization": args.seed });
    manifest.config_digest = file.digest.clone();
    manifest.inputs = serde_json::json!({
        "x": file.inputs.x_sha256, "y": file.inputs.y_sha256, "groups": file.inputs.groups_sha256,
    });
    manifest.record_outputs(&[&args.out])?;
    manifest.elapsed_seconds = started.elapsed().as_secs_f64();
    manifest.write(&manifest_path(&args.out))?;
    Ok(file)
}

fn load_dataset_matrix(path: &Path) -> Result<Mat> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        rows.push(
            rec.iter()
                .map(|c| c.parse::<f64>().map_err(|_| Error::Parse(format!("{}: not a number: {c:?}", path.display()))))
                .collect::<Result<Vec<f64>>>()?,
        );
    }
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != c) {
        return Err(Error::Dimension(format!("{}: ragged matrix", path.display())));
    }
    Ok(rows_to_mat(&rows))
}

/// `kind:group=G` or `kind:G`, with a one-based group id.
pub fn parse_functional_request(text: &str) -> Result<(Functional, usize)> {
    let bad = || Error::Config(format!("functional request {text:?} must look like l2:group=3"));
    let (kind, rest) = text.split_once(':').ok_or_else(bad)?;
    let id = rest.trim().strip_prefix("group=").unwrap_or(rest.trim());
    let g: usize = id.parse().map_err(|_| bad())?;
    if g == 0 {
        return Err(Error::Config("group ids are 1-based".into()));
    }
    Ok((kind.parse()?, g))
}

fn resolve_input(path: &Path, selection: &Path) -> PathBuf {
    if path.is_absolute() || path.exists() {
        return path.to_path_buf();
    }
    selection.parent().map_or_else(|| path.to_path_buf(), |d| d.join(path))
}

/// Everything `infer` derives from a sealed selection file.
pub struct InferenceSetup {
    pub file: SelectionFile,
    pub dataset: Dataset,
    pub groups: GroupStructure,
    pub params: AdjustmentParams,
}

pub fn prepare_inference(selection: &Path) -> Result<InferenceSetup> {
    let file = SelectionFile::read(selection)?;
    let x = resolve_input(&file.inputs.x, selection);
    let y = resolve_input(&file.inputs.y, selection);
    for (p, d) in [(&x, &file.inputs.x_sha256), (&y, &file.inputs.y_sha256)] {
        if &file_digest(p)? != d {
            return Err(Error::Digest(format!("{} changed since the selection was made", p.display())));
        }
    }
    let dataset = load_inputs(&x, &y, file.inputs.standardize, file.sigma)?;
    let groups = file.group_structure(dataset.p())?;
    let dim = randomization_dim(&groups, dataset.p());
    let cov = file.randomization.config()?.covariance_matrix(dim)?;
    let problem = SelectionProblem::new(&dataset, &groups)?;
    let params = AdjustmentParams::build(&problem, &file.record, &dataset, &cov)?;
    Ok(InferenceSetup { file, dataset, groups, params })
}

pub fn cmd_infer(args: &InferArgs, argv: &[String]) -> Result<()> {
    let started = Instant::now();
    for &l in &args.levels {
        if !(l > 0.0 && l < 1.0) {
            return Err(Error::Config(format!("credible level must lie in (0, 1), got {l}")));
        }
    }
    let requests = args.functional.iter().map(|f| parse_functional_request(f)).collect::<Result<Vec<_>>>()?;
    let chain_cfg = ChainConfig {
        draws: args.draws,
        burn_in: args.burnin,
        step: StepSize::PerCoordinate(args.step),
        seed: args.seed,
        ..Default::default()
    };
    chain_cfg.validate()?;
    let setup = prepare_inference(&args.selection)?;
    let rec = &setup.file.record;
    let positions = rec.group_positions(&setup.groups);
    for (f, g) in &requests {
        if !rec.selected_groups.contains(&(g - 1)) {
            return Err(Error::Config(format!(
                "functional {}:group={g} refers to a group that was not selected (selected: {})",
                f.name(),
                rec.selected_groups.iter().map(|g| (g + 1).to_string()).collect::<Vec<_>>().join(",")
            )));
        }
        if *f == Functional::Variance && positions[rec.selected_groups.iter().position(|s| *s == g - 1).unwrap()].len() < 2 {
            return Err(Error::Config(format!("variance of group {g} needs at least two coefficients")));
        }
    }

    let prior = match args.prior.as_str() {
        "flat" => Prior::Flat,
        "gaussian" => Prior::isotropic(rec.n_active(), args.prior_var)?,
        other => return Err(Error::Config(format!("unknown prior {other:?} (expected flat or gaussian)"))),
    };
    let adjustment = if args.unadjusted { Adjustment::Disabled } else { Adjustment::Enabled };
    let spec = PosteriorSpec::new(setup.params, prior)?.with_adjustment(adjustment);
    let chain = run_chain(&spec, &chain_cfg)?;

    let mut levels = args.levels.clone();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let group_of = |col: usize| -> usize {
        rec.selected_groups
            .iter()
            .find(|&&g| setup.groups.groups[g].contains(&col))
            .map_or(0, |g| g + 1)
    };

    let mut w = csv::Writer::from_path(&args.out)?;
    w.write_record(["target", "column", "group", "functional", "level", "estimate", "lower", "upper"])?;
    for (j, &col) in rec.active.iter().enumerate() {
        for &level in &levels {
            let rep = credible_intervals(&chain, level)?;
            let iv = rep.intervals[j];
            w.write_record([
                "coefficient".to_string(),
                (col + 1).to_string(),
                group_of(col).to_string(),
                String::new(),
                format_float(level),
                format_float(rep.estimate[j]),
                format_float(iv.lower),
                format_float(iv.upper),
            ])?;
        }
    }
    for (f, g) in &requests {
        let k = rec.selected_groups.iter().position(|s| *s == g - 1).expect("checked above");
        let pos = &positions[k];
        let values: Vec<f64> = chain
            .draws
            .row_iter()
            .map(|row| f.apply(&pos.iter().map(|&p| row[p]).collect::<Vec<_>>()))
            .collect();
        let median = quantile_sorted(&sorted_copy(values), 0.5);
        for &level in &levels {
            let iv = functional_intervals(&chain, *f, pos, level)?;
            w.write_record([
                "functional".to_string(),
                String::new(),
                g.to_string(),
                f.name().to_string(),
                format_float(level),
                format_float(median),
                format_float(iv.lower),
                format_float(iv.upper),
            ])?;
        }
    }
    w.flush()?;

    let chain_out = args.chain_out.clone().unwrap_or_else(|| args.out.with_extension("chain.csv"));
    let names: Vec<String> = rec.active.iter().map(|c| format!("x{}", c + 1)).collect();
    chain.write_csv(&chain_out, &names)?;

    let mut manifest = Manifest::new("infer", argv);
    manifest.seeds = serde_json::json!({ "chain": args.seed, "randomization": setup.file.randomization.seed });
    manifest.config_digest = setup.file.digest.clone();
    manifest.inputs = serde_json::json!({ "selection": file_digest(&args.selection)? });
    manifest.record_outputs(&[&args.out, &chain_out])?;
    manifest.elapsed_seconds = started.elapsed().as_secs_f64();
    manifest.write(&manifest_path(&args.out))?;
    Ok(())
}

pub fn cmd_simulate(args: &SimulateArgs, argv: &[String]) -> Result<()> {
    let started = Instant::now();
    let mut config = ScenarioConfig::load(&args.config)?;
    if let Some(r) = args.replications {
        config.replications = r;
    }
    if let Some(u) = &args.f1_unit {
        config.f1_unit = match u.as_str() {
            "group" => F1Unit::Group,
            "covariate" => F1Unit::Covariate,
            other => return Err(Error::Config(format!("unknown F1 unit {other:?} (expected group or covariate)"))),
        };
    }
    config.validate()?;
    if args.jobs == Some(0) {
        return Err(Error::Config("--jobs must be positive".into()));
    }
    fs::create_dir_all(&args.out_dir)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = args.jobs {
        builder = builder.num_threads(j);
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let rows = pool.install(|| run_experiment(&config))?;
    let metrics = args.out_dir.join("metrics.csv");
    let summary = args.out_dir.join("summary.csv");
    write_metrics_csv(&rows, &metrics)?;
    write_summary_csv(&summarize(&rows), &summary)?;

    let mut manifest = Manifest::new("simulate", argv);
    manifest.seeds = serde_json::json!({ "base_seed": config.base_seed });
    manifest.config_digest = sha256_hex(serde_json::to_string(&config)?.as_bytes());
    manifest.inputs = serde_json::json!({ "config": file_digest(&args.config)?, "resolved": config });
    manifest.record_outputs(&[&metrics, &summary])?;
    manifest.elapsed_seconds = started.elapsed().as_secs_f64();
    manifest.write(&args.out_dir.join("manifest.json"))?;
    let failed = rows.iter().filter(|r| r.failed).count();
    let empty = rows.iter().filter(|r| r.empty).count();
    println!(
        "{} rows written to {} ({} empty selections, {} failures)",
        rows.len(),
        metrics.display(),
        empty,
        failed
    );
    Ok(())
}

pub fn cmd_oracle_check(args: &OracleArgs) -> Result<bool> {
    let fault: Fault = args.inject_fault.parse()?;
    let outcomes = run_oracles(args.only.as_deref(), fault)?;
    for o in &outcomes {
        println!("{o}");
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("{} oracle checks, {failed} failed", outcomes.len());
    Ok(failed == 0)
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
}

/// Parses `argv`, runs the command and returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let printable: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 4 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.verbose);
    let outcome = match &cli.command {
        Command::Fit(a) => cmd_fit(a, &printable).map(|f| {
            let groups: Vec<String> = f.record.selected_groups.iter().map(|g| (g + 1).to_string()).collect();
            let cols: Vec<String> = f.record.active.iter().map(|c| (c + 1).to_string()).collect();
            println!("selected groups [{}], columns [{}] -> {}", groups.join(","), cols.join(","), a.out.display());
            0
        }),
        Command::Infer(a) => cmd_infer(a, &printable).map(|_| {
            println!("intervals written to {}", a.out.display());
            0
        }),
        Command::Simulate(a) => cmd_simulate(a, &printable).map(|_| 0),
        Command::OracleCheck(a) => cmd_oracle_check(a).map(|ok| if ok { 0 } else { 3 }),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
