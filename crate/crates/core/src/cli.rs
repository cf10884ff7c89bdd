//! Command-line front end. Every command writes versioned CSV tables; the
//! exit status is 0 on success, 2 when results were written but some fit is
//! flagged as unconverged, and 1 on error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::agreement::{self, AgreementData, VarCompFit};
use crate::diagnostics::{SummaryRow, DEFAULT_PROBS, RHAT_BATCH_LIMIT};
use crate::hierarchy::{self, HierSamples, K};
use crate::inference::predictive::{posterior_predictive, Variant as PredictiveVariant};
use crate::inference::{sample_posterior_with, summarize, FitOptions, PriorSpec, DERIVED_NAMES};
use crate::io::{self, fmt_f64, CohortTest, Format, Table};
use crate::model::{outcomes_standard, BreathSeries, DEFAULT_THRESHOLD};
use crate::sampler::{Algorithm, SamplerConfig};
use crate::synthgen::{generate_cohort, simulate_agreement, AgreementSpec, CohortSpec};
use crate::truncation::{run_truncation_study, FitStatus, StudyConfig, Threshold, TruncationReport};

/// Environment variable holding the default worker-thread count.
pub const THREADS_ENV: &str = "MBW_THREADS";

#[derive(Debug, Parser)]
#[command(name = "mbw", version, about = "Bayesian analysis of multiple-breath washout tests")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit each test of a file and write posterior summaries.
    Fit(FitArgs),
    /// Refit every test truncated at a series of gas thresholds.
    TruncateEval(TruncateArgs),
    /// Fit the hierarchical model and write an informative prior.
    HierFit(HierArgs),
    /// Fit a two-method agreement model.
    Agree(AgreeArgs),
    /// Simulate a synthetic cohort or agreement table.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SamplerArgs {
    #[arg(long, default_value_t = 4)]
    pub chains: usize,
    #[arg(long, default_value_t = 1000)]
    pub warmup: usize,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.8)]
    pub target_accept: f64,
    #[arg(long, default_value_t = 10)]
    pub max_treedepth: usize,
    #[arg(long, value_enum, default_value_t = AlgorithmArg::Nuts)]
    pub algorithm: AlgorithmArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlgorithmArg {
    Nuts,
    RandomWalk,
}

impl SamplerArgs {
    pub fn config(&self) -> SamplerConfig {
        SamplerConfig {
            n_chains: self.chains,
            n_warmup: self.warmup,
            n_samples: self.samples,
            seed: self.seed,
            target_accept: self.target_accept,
            max_tree_depth: self.max_treedepth,
            algorithm: match self.algorithm {
                AlgorithmArg::Nuts => Algorithm::Nuts,
                AlgorithmArg::RandomWalk => Algorithm::RandomWalk,
            },
            ..SamplerConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

fn format_for(path: &Path, arg: Option<FormatArg>) -> Format {
    match arg {
        Some(FormatArg::Csv) => Format::Csv,
        Some(FormatArg::Json) => Format::Json,
        None => Format::from_path(path),
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Test file (CSV long format or JSON records).
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Only fit this test.
    #[arg(long)]
    pub test_id: Option<String>,
    /// `diffuse`, `informative:PATH`, or `embedded` for the prior stored
    /// with each JSON record.
    #[arg(long, default_value = "diffuse")]
    pub prior: String,
    /// End-test threshold for derived outcomes.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Truncate each test at this gas threshold before fitting.
    #[arg(long)]
    pub truncate: Option<Threshold>,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    /// Summary table path (default: stdout).
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Number of posterior-predictive datasets to simulate per test.
    #[arg(long, default_value_t = 0)]
    pub predictive: usize,
    #[arg(long, value_enum, default_value_t = PredictiveArg::Derivative)]
    pub predictive_variant: PredictiveArg,
    /// Posterior-predictive table path; required with --predictive.
    #[arg(long)]
    pub predictive_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PredictiveArg {
    Derivative,
    Cumulative,
}

#[derive(Debug, Args)]
pub struct TruncateArgs {
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Comma-separated thresholds such as `1/10,1/20,complete`.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<Threshold>>,
    #[arg(long, default_value = "diffuse")]
    pub prior: String,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct HierArgs {
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Share of participants used for fitting; the rest are listed as held out.
    #[arg(long, default_value_t = 1.0)]
    pub holdout_fraction: f64,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct AgreeArgs {
    /// Table with columns method,participant,replicate,value.
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = AgreeVariant::Exchangeable)]
    pub variant: AgreeVariant,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AgreeVariant {
    Exchangeable,
    Linked,
    /// Weakly identified; for exploration only.
    ExperimentalFull,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON spec: `{"cohort": {...}}` or `{"agreement": {...}}`. Missing
    /// fields take their defaults.
    pub spec: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    pub format: FormatArg,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSpec {
    pub cohort: Option<CohortSpec>,
    pub agreement: Option<AgreementSpec>,
}

type CliResult = Result<bool, String>;

/// Parses arguments, runs the command and maps the outcome to an exit code.
pub fn main() -> ExitCode {
    // Usage errors exit with 1; 2 is reserved for flagged fits.
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(u8::from(e.use_stderr()));
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("warning: at least one fit has R-hat above {RHAT_BATCH_LIMIT}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

/// Runs one command. `Ok(true)` means results were written but some fit is
/// flagged.
pub fn run(command: Command) -> CliResult {
    match command {
        Command::Fit(a) => fit(a),
        Command::TruncateEval(a) => truncate_eval(a),
        Command::HierFit(a) => hier_fit(a),
        Command::Agree(a) => agree(a),
        Command::Simulate(a) => simulate(a),
    }
}

fn read_cohort(path: &Path, format: Option<FormatArg>) -> Result<Vec<CohortTest>, String> {
    io::read_tests(path, format_for(path, format)).map_err(|e| format!("{} [{}]", e, e.kind()))
}

enum PriorChoice {
    Fixed(PriorSpec),
    Embedded,
}

fn parse_prior(s: &str) -> Result<PriorChoice, String> {
    match s {
        "diffuse" => Ok(PriorChoice::Fixed(PriorSpec::Diffuse)),
        "embedded" => Ok(PriorChoice::Embedded),
        _ => match s.strip_prefix("informative:") {
            Some(path) => io::read_prior(Path::new(path))
                .map(PriorChoice::Fixed)
                .map_err(|e| e.to_string()),
            None => Err(format!("unknown prior {s:?}; use diffuse, informative:PATH or embedded")),
        },
    }
}

fn fixed_prior(s: &str) -> Result<PriorSpec, String> {
    match parse_prior(s)? {
        PriorChoice::Fixed(p) => Ok(p),
        PriorChoice::Embedded => Err("an embedded prior is only available to `fit`".into()),
    }
}

fn emit(table: &Table, out: Option<&Path>) -> Result<(), String> {
    match out {
        Some(p) => table.write(p).map_err(|e| e.to_string()),
        None => {
            print!("{}", table.to_csv());
            Ok(())
        }
    }
}

fn summary_header(leading: &[&str]) -> Vec<String> {
    let mut h: Vec<String> = leading.iter().map(|s| s.to_string()).collect();
    h.extend(["name", "mean", "sd"].map(String::from));
    h.extend(DEFAULT_PROBS.iter().map(|p| format!("q{p}")));
    h.extend(["rhat", "ess", "mcse_mean"].map(String::from));
    h
}

fn summary_cells(r: &SummaryRow) -> Vec<String> {
    let mut c = vec![r.name.clone(), fmt_f64(r.mean), fmt_f64(r.sd)];
    c.extend(r.quantiles.iter().map(|q| fmt_f64(*q)));
    c.extend([fmt_f64(r.rhat), fmt_f64(r.ess), fmt_f64(r.mcse_mean)]);
    c
}

fn table_with(schema: &str, header: Vec<String>) -> Table {
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    Table::new(schema, &refs)
}

fn fit(a: FitArgs) -> CliResult {
    let prior_choice = parse_prior(&a.prior)?;
    let mut tests = read_cohort(&a.input, a.format)?;
    if let Some(id) = &a.test_id {
        tests.retain(|t| &t.test_id == id);
        if tests.is_empty() {
            return Err(format!("no test with id {id:?}"));
        }
    }
    if a.predictive > 0 && a.predictive_out.is_none() {
        return Err("--predictive needs --predictive-out".into());
    }
    let cfg = a.sampler.config();
    let opts = FitOptions {
        threshold: a.threshold,
        ..FitOptions::default()
    };
    let mut table = table_with("mbw-fit-summary/1", summary_header(&["test_id", "n_breaths"]));
    let mut pred = Table::new(
        "mbw-predictive/1",
        &["test_id", "dataset", "chain", "iteration", "k", "gas", "cevgm", "cevtg", "violations"],
    );
    let mut flagged = false;
    for t in &tests {
        let prior = match &prior_choice {
            PriorChoice::Fixed(p) => p.clone(),
            PriorChoice::Embedded => t
                .prior
                .clone()
                .ok_or_else(|| format!("test {} carries no prior", t.test_id))?,
        };
        let series = match a.truncate {
            Some(th) => th.apply(&t.series),
            None => t.series.clone(),
        };
        if !series.is_fittable() {
            return Err(format!("test {}: fewer than 3 breaths after truncation", t.test_id));
        }
        let s = sample_posterior_with(&series, &prior, &cfg, &opts).map_err(|e| format!("test {}: {e}", t.test_id))?;
        for w in &s.warnings {
            eprintln!("warning: test {}: {w}", t.test_id);
        }
        flagged |= s.flagged(RHAT_BATCH_LIMIT);
        for r in summarize(&s, &DEFAULT_PROBS) {
            let mut row = vec![t.test_id.clone(), series.len().to_string()];
            row.extend(summary_cells(&r));
            table.push(row);
        }
        if a.predictive > 0 {
            let variant = match a.predictive_variant {
                PredictiveArg::Derivative => PredictiveVariant::Derivative,
                PredictiveArg::Cumulative => PredictiveVariant::Cumulative,
            };
            for (i, d) in posterior_predictive(&s, a.predictive, variant, cfg.seed).iter().enumerate() {
                for k in 0..d.series.gas.len() {
                    pred.push(vec![
                        t.test_id.clone(),
                        i.to_string(),
                        d.chain.to_string(),
                        d.iteration.to_string(),
                        k.to_string(),
                        fmt_f64(d.series.gas[k]),
                        fmt_f64(d.series.cevgm[k]),
                        fmt_f64(d.series.cevtg[k]),
                        d.violations.to_string(),
                    ]);
                }
            }
        }
    }
    emit(&table, a.out.as_deref())?;
    if let Some(p) = &a.predictive_out {
        pred.write(p).map_err(|e| e.to_string())?;
    }
    Ok(flagged)
}

fn create_dir(dir: &Path) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))
}

fn truncate_eval(a: TruncateArgs) -> CliResult {
    let prior = fixed_prior(&a.prior)?;
    let tests: Vec<(String, BreathSeries)> = read_cohort(&a.input, a.format)?
        .into_iter()
        .map(|t| (t.test_id, t.series))
        .collect();
    let mut cfg = StudyConfig::new(prior, a.sampler.config());
    if let Some(t) = a.thresholds {
        cfg.thresholds = t;
    }
    let reports = run_truncation_study(&tests, &cfg);
    create_dir(&a.out_dir)?;
    let tables = truncation_tables(&reports);
    for (name, t) in ["truncation_tests.csv", "truncation_aggregate.csv", "convergence.csv"]
        .iter()
        .zip(&tables)
    {
        t.write(&a.out_dir.join(name)).map_err(|e| e.to_string())?;
    }
    for r in &reports {
        for rec in &r.records {
            if let FitStatus::Failed(e) = &rec.status {
                eprintln!("warning: test {} at {}: {e}", rec.test_id, r.threshold);
            }
        }
    }
    Ok(reports.iter().any(|r| r.n_flagged > 0))
}

/// Per-test rows, aggregate percentile rows and the flagged-proportion table.
pub fn truncation_tables(reports: &[TruncationReport]) -> [Table; 3] {
    let mut per_test = Table::new(
        "mbw-truncation-tests/1",
        &[
            "test_id",
            "threshold",
            "breaths_complete",
            "breaths_retained",
            "status",
            "flagged",
            "lci_median",
            "frc_median",
            "lci_pe_pct",
            "frc_pe_pct",
            "lci_ci_width_pct",
            "frc_ci_width_pct",
        ],
    );
    let mut agg = Table::new(
        "mbw-truncation-aggregate/1",
        &["threshold", "measure", "median", "q0.025", "q0.975", "n_fitted", "n_unfittable", "n_failed"],
    );
    let mut conv = Table::new(
        "mbw-convergence/1",
        &["threshold", "n_fitted", "n_flagged", "proportion_flagged", "breaths_saved"],
    );
    for r in reports {
        let label = r.threshold.to_string();
        for rec in &r.records {
            let status = match &rec.status {
                FitStatus::Fitted => "fitted",
                FitStatus::Unfittable => "unfittable",
                FitStatus::Failed(_) => "failed",
            };
            per_test.push(vec![
                rec.test_id.clone(),
                label.clone(),
                rec.breaths_complete.to_string(),
                rec.breaths_retained.to_string(),
                status.into(),
                u8::from(rec.flagged).to_string(),
                fmt_f64(rec.lci_median),
                fmt_f64(rec.frc_median),
                fmt_f64(rec.lci_pe),
                fmt_f64(rec.frc_pe),
                fmt_f64(rec.lci_ci_width),
                fmt_f64(rec.frc_ci_width),
            ]);
        }
        let g = &r.aggregate;
        for (name, s) in [
            ("lci_pe_pct", g.lci_pe),
            ("frc_pe_pct", g.frc_pe),
            ("lci_abs_pe_pct", g.lci_abs_pe),
            ("lci_ci_width_pct", g.lci_ci_width),
            ("frc_ci_width_pct", g.frc_ci_width),
            ("breaths_retained", g.breaths_retained),
        ] {
            agg.push(vec![
                label.clone(),
                name.into(),
                fmt_f64(s.median),
                fmt_f64(s.lower),
                fmt_f64(s.upper),
                r.n_fitted.to_string(),
                r.n_unfittable.to_string(),
                r.n_failed.to_string(),
            ]);
        }
        conv.push(vec![
            label,
            r.n_fitted.to_string(),
            r.n_flagged.to_string(),
            fmt_f64(r.flagged_proportion()),
            fmt_f64(g.breaths_saved),
        ]);
    }
    [per_test, agg, conv]
}

fn hier_fit(a: HierArgs) -> CliResult {
    let tests = read_cohort(&a.input, a.format)?;
    let keyed: Vec<(usize, &CohortTest)> = tests.iter().enumerate().collect();
    let (train, held) = hierarchy::holdout_split(
        &keyed,
        |(i, t)| (t.participant_id.unwrap_or((1u64 << 32) + *i as u64), t.replicate_id.unwrap_or(0)),
        a.holdout_fraction,
        a.sampler.seed,
    )
    .map_err(|e| e.to_string())?;
    let series: Vec<BreathSeries> = train.iter().map(|(_, t)| t.series.clone()).collect();
    let fit = hierarchy::fit_hierarchical(&series, &a.sampler.config()).map_err(|e| e.to_string())?;
    for w in &fit.warnings {
        eprintln!("warning: {w}");
    }
    let extracted = hierarchy::extract_informative_prior(&fit).map_err(|e| e.to_string())?;
    if extracted.projected {
        eprintln!("warning: median correlation matrix was not positive definite and was projected");
    }
    create_dir(&a.out_dir)?;
    let out = |name: &str| a.out_dir.join(name);
    hyper_table(&fit).write(&out("hyper_summary.csv")).map_err(|e| e.to_string())?;
    let mut full = table_with("mbw-hyper-draws-summary/1", summary_header(&[]));
    for r in fit.summary(&DEFAULT_PROBS) {
        full.push(summary_cells(&r));
    }
    full.write(&out("hyper_full.csv")).map_err(|e| e.to_string())?;
    let mut split = Table::new("mbw-holdout/1", &["test_id", "set"]);
    for (_, t) in &train {
        split.push(vec![t.test_id.clone(), "train".into()]);
    }
    for (_, t) in &held {
        split.push(vec![t.test_id.clone(), "holdout".into()]);
    }
    split.write(&out("split.csv")).map_err(|e| e.to_string())?;
    let json = io::prior_to_json(&extracted.prior).expect("extracted prior is informative");
    fs::write(out("prior.json"), json).map_err(|e| e.to_string())?;
    Ok(fit.flagged(RHAT_BATCH_LIMIT))
}

/// Population medians and intervals, random-effect SD medians and the median
/// correlation matrix multiplied by 100.
pub fn hyper_table(fit: &HierSamples) -> Table {
    let mut header = vec!["parameter", "median", "q0.025", "q0.975", "sd_w_median"];
    let corr_cols: Vec<String> = hierarchy::BETA_NAMES.iter().map(|n| format!("corr_x100_{n}")).collect();
    header.extend(corr_cols.iter().map(String::as_str));
    let mut t = Table::new("mbw-hyper-summary/1", &header);
    let rows = fit.summary(&DEFAULT_PROBS);
    let corr = |i: usize, j: usize| -> f64 {
        if i == j {
            return 1.0;
        }
        let (a, b) = (i.min(j), i.max(j));
        let name = format!("corr_{a}_{b}");
        rows.iter().find(|r| r.name == name).expect("correlation row").median
    };
    for i in 0..K {
        let r = &rows[i];
        let mut row = vec![
            hierarchy::BETA_NAMES[i].to_string(),
            fmt_f64(r.median),
            fmt_f64(r.quantiles[0]),
            fmt_f64(r.quantiles[2]),
            fmt_f64(rows[K + i].median),
        ];
        row.extend((0..K).map(|j| fmt_f64(100.0 * corr(i, j))));
        t.push(row);
    }
    t
}

fn agree(a: AgreeArgs) -> CliResult {
    let rows = io::read_agreement(&a.input).map_err(|e| e.to_string())?;
    let data = AgreementData::new(&rows).map_err(|e| e.to_string())?;
    let variant = match a.variant {
        AgreeVariant::Exchangeable => agreement::Variant::Exchangeable,
        AgreeVariant::Linked => agreement::Variant::Linked,
        AgreeVariant::ExperimentalFull => agreement::Variant::ExperimentalFull,
    };
    let fit = agreement::fit_agreement(data, variant, &a.sampler.config()).map_err(|e| e.to_string())?;
    for w in &fit.warnings {
        eprintln!("warning: {w}");
    }
    emit(&agreement_table(&fit), a.out.as_deref())?;
    Ok(fit.flagged(RHAT_BATCH_LIMIT))
}

pub fn agreement_table(fit: &VarCompFit) -> Table {
    let mut t = table_with("mbw-agreement-summary/1", summary_header(&[]));
    for r in fit.summary(&DEFAULT_PROBS) {
        t.push(summary_cells(&r));
    }
    t
}

fn simulate(a: SimulateArgs) -> CliResult {
    let text = fs::read_to_string(&a.spec).map_err(|e| format!("{}: {e}", a.spec.display()))?;
    let spec: SimulateSpec = serde_json::from_str(&text).map_err(|e| format!("spec: {e}"))?;
    create_dir(&a.out_dir)?;
    if let Some(s) = &spec.agreement {
        fs::write(a.out_dir.join("agreement.csv"), io::agreement_to_csv(&simulate_agreement(s)))
            .map_err(|e| e.to_string())?;
    }
    if spec.cohort.is_some() || spec.agreement.is_none() {
        let cs = spec.cohort.unwrap_or_default();
        let cohort = generate_cohort(&cs).map_err(|e| e.to_string())?;
        let tests: Vec<CohortTest> = cohort
            .iter()
            .map(|t| CohortTest {
                test_id: format!("t{:04}", t.test_id + 1),
                participant_id: Some(t.test_id as u64 + 1),
                replicate_id: Some(1),
                series: t.series.clone(),
                prior: None,
            })
            .collect();
        let (name, format) = match a.format {
            FormatArg::Csv => ("cohort.csv", Format::Csv),
            FormatArg::Json => ("cohort.json", Format::Json),
        };
        io::write_tests(&a.out_dir.join(name), &tests, format).map_err(|e| e.to_string())?;
        let mut header = vec!["test_id"];
        header.extend(hierarchy::BETA_NAMES);
        header.extend(["sigma_c", "sigma_v", "sigma_r", "n_breaths", "k40", "lci_standard"]);
        header.extend(DERIVED_NAMES);
        let mut truth = Table::new("mbw-truth/1", &header);
        for (t, c) in cohort.iter().zip(&tests) {
            let mut row = vec![c.test_id.clone()];
            row.extend(t.beta.iter().map(|v| fmt_f64(*v)));
            row.extend(t.noise.iter().map(|v| fmt_f64(*v)));
            row.push(t.series.len().to_string());
            match outcomes_standard(&t.series, DEFAULT_THRESHOLD) {
                Ok(Some(o)) => row.extend([fmt_f64(o.theta), fmt_f64(o.lci)]),
                _ => row.extend([fmt_f64(f64::NAN), fmt_f64(f64::NAN)]),
            }
            let m = &t.truth;
            row.extend(
                [m.asymptotic.theta, m.asymptotic.cev, m.asymptotic.frc, m.at_theta.frc, m.asymptotic.lci, m.at_theta.lci]
                    .map(fmt_f64),
            );
            truth.push(row);
        }
        truth.write(&a.out_dir.join("truth.csv")).map_err(|e| e.to_string())?;
    }
    Ok(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn thresholds_parse_from_flag() {
        let cli = Cli::try_parse_from(["mbw", "truncate-eval", "c.csv", "--out-dir", "o", "--thresholds", "1/10,1/5,complete"]).unwrap();
        let Command::TruncateEval(a) = cli.command else { panic!() };
        assert_eq!(
            a.thresholds.unwrap(),
            vec![Threshold::Reciprocal(10), Threshold::Reciprocal(5), Threshold::Complete]
        );
    }

    #[test]
    fn unknown_prior_is_an_error() {
        assert!(parse_prior("flat").is_err());
    }
}
