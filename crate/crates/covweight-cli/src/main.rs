//! `covweight`: covariate-weighted multiple testing from the command line.

mod io;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use covweight::crw::Tails;
use covweight::dcw::EffectType;
use covweight::effects::{EffectPrior, TestPopulation};
use covweight::pipeline::{run_analysis, AnalysisOptions, AnalysisResult, Method, Mode, TestCollection};
use covweight::rankprob::{rank_prob_bruteforce, rank_prob_exact_mc, rank_prob_normal_approx, McConfig};
use covweight::sim::{simulate_metrics, CovariateModel, EffectShape, SimMetrics, SimScenario, WeightSource};
use covweight::validate::{run_suite, Scale, CRITERIA};

use crate::io::num;

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser, Debug)]
#[command(name = "covweight", version, about = "Covariate-informed p-value weighting")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Weight and test a CSV of p-values and covariates.
    Analyze(AnalyzeArgs),
    /// Run a simulation campaign and write power/FDR/FWER tables.
    Simulate(SimulateArgs),
    /// Tabulate rank probabilities for one population.
    Rankprob(RankprobArgs),
    /// Run the acceptance checks and print a pass/fail table.
    Validate(ValidateArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum CliMode {
    Fwer,
    Fdr,
}

impl From<CliMode> for Mode {
    fn from(m: CliMode) -> Self {
        match m {
            CliMode::Fwer => Mode::Fwer,
            CliMode::Fdr => Mode::Fdr,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Format {
    Csv,
    Json,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse::<Method>().map_err(|e| e.to_string())
}

fn parse_tails(s: &str) -> std::result::Result<Tails, String> {
    match s {
        "1" => Ok(Tails::One),
        "2" => Ok(Tails::Two),
        _ => Err(format!("tails must be 1 or 2, got '{s}'")),
    }
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "out")]
    output_dir: PathBuf,
    /// crw-cont, crw-bin, gcw, gcw2, dcw, bh, bonferroni or bw.
    #[arg(long, default_value = "crw-cont", value_parser = parse_method)]
    method: Method,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value = "1", value_parser = parse_tails)]
    tails: Tails,
    #[arg(long, default_value_t = McConfig::default().seed)]
    seed: u64,
    #[arg(long, value_enum, default_value = "fdr")]
    mode: CliMode,
    /// Monte Carlo draws for the rank probabilities.
    #[arg(long, default_value_t = McConfig::default().replications)]
    mc_reps: usize,
    /// Fixed DCW group count (searched when absent).
    #[arg(long)]
    groups: Option<usize>,
    /// p-value bins per DCW group.
    #[arg(long, default_value_t = 20)]
    bins: usize,
    /// Use the median test effect for DCW.
    #[arg(long)]
    binary_effect: bool,
    /// Regress on raw covariates instead of Box-Cox transformed ones.
    #[arg(long)]
    no_boxcox: bool,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Scenario JSON; flags given on the command line override its fields.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value = "sim_out")]
    output_dir: PathBuf,
    /// Comma-separated method tags.
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    method: Option<Vec<Method>>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    pi0: Option<f64>,
    /// Comma-separated mean covariate effects.
    #[arg(long, value_delimiter = ',')]
    effects: Option<Vec<f64>>,
    #[arg(long)]
    cv: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<CliMode>,
    #[arg(long)]
    mc_reps: Option<usize>,
    #[arg(long)]
    groups: Option<usize>,
    #[arg(long)]
    constant_effects: bool,
    #[arg(long)]
    independent_covariate: bool,
    /// Estimate weights from each replicate instead of using true values.
    #[arg(long)]
    data_weights: bool,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args, Debug)]
struct RankprobArgs {
    #[arg(long)]
    m: usize,
    #[arg(long)]
    m0: usize,
    /// point:E, uniform:A,B, exponential:RATE or normal:MEAN,SD.
    #[arg(long, default_value = "point:2")]
    prior: String,
    /// Focal effect (default: prior mean, or 0 with --null-focal).
    #[arg(long)]
    focal: Option<f64>,
    /// Treat the focal test as null.
    #[arg(long)]
    null_focal: bool,
    #[arg(long, default_value_t = McConfig::default().replications)]
    mc_reps: usize,
    #[arg(long, default_value_t = McConfig::default().seed)]
    seed: u64,
    /// Add a brute-force column from this many simulated populations.
    #[arg(long)]
    bruteforce: Option<usize>,
    #[arg(long, default_value = "rankprob_out")]
    output_dir: PathBuf,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long, value_enum, default_value = "desk")]
    scale: CliScale,
    /// Comma-separated criterion ids (default: all).
    #[arg(long, value_delimiter = ',')]
    criteria: Option<Vec<u8>>,
    /// Write the report as JSON to this file as well.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, hide = true)]
    corrupt_cdf: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum CliScale {
    Desk,
    Full,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let r = match cli.command {
        Command::Analyze(a) => analyze(&a).map(|_| ExitCode::SUCCESS),
        Command::Simulate(a) => simulate(&a).map(|_| ExitCode::SUCCESS),
        Command::Rankprob(a) => rankprob(&a).map(|_| ExitCode::SUCCESS),
        Command::Validate(a) => validate(&a),
    };
    r.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(2)
    })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        bail!("alpha must lie in (0, 1), got {alpha}");
    }
    Ok(())
}

#[derive(Serialize)]
struct AnalyzeDiagnostics<'a> {
    schema_version: u32,
    input: String,
    method: Method,
    alpha: f64,
    mode: Mode,
    tails: Tails,
    m: usize,
    rejections: usize,
    /// δ for CRW/DCW, λ for GCW/BW.
    multiplier: f64,
    solver_path: String,
    weight_sum: f64,
    normalized: bool,
    options: &'a AnalysisOptions,
    estimates: &'a covweight::pipeline::Diagnostics,
}

fn analyze(a: &AnalyzeArgs) -> Result<()> {
    check_alpha(a.alpha)?;
    let table = io::read_input(&a.input)?;
    let mut coll = TestCollection::new(table.pvalues, table.covariates, a.tails)?;
    coll.labels = Some(table.ids);
    let options = AnalysisOptions {
        mode: a.mode.into(),
        use_boxcox: !a.no_boxcox,
        mc: McConfig { replications: a.mc_reps, seed: a.seed },
        groups: a.groups,
        bins: a.bins,
        dcw_effect: if a.binary_effect { EffectType::Binary } else { EffectType::Continuous },
        ..AnalysisOptions::default()
    };
    let res = run_analysis(&coll, a.method, a.alpha, &options)?;
    io::ensure_dir(&a.output_dir)?;
    write_weights(&a.output_dir, &coll, &res)?;
    let diag = AnalyzeDiagnostics {
        schema_version: SCHEMA_VERSION,
        input: a.input.display().to_string(),
        method: res.method,
        alpha: res.alpha,
        mode: res.mode,
        tails: a.tails,
        m: coll.len(),
        rejections: res.rejections(),
        multiplier: res.weights.delta,
        solver_path: format!("{:?}", res.weights.path),
        weight_sum: res.weights.sum(),
        normalized: res.weights.normalized,
        options: &options,
        estimates: &res.diagnostics,
    };
    io::write_json(&a.output_dir.join("diagnostics.json"), &diag)?;
    write_plotdata(&a.output_dir, &res)?;
    for w in &res.diagnostics.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!("{}: {} of {} rejected at alpha = {}", res.method, res.rejections(), coll.len(), a.alpha);
    Ok(())
}

fn write_weights(dir: &Path, coll: &TestCollection, res: &AnalysisResult) -> Result<()> {
    let ids = coll.labels.as_deref().unwrap_or_default();
    let rows = (0..coll.len()).map(|i| {
        vec![
            ids.get(i).cloned().unwrap_or_else(|| (i + 1).to_string()),
            num(coll.pvalues[i]),
            num(coll.covariates[i]),
            res.covariate_rank[i].to_string(),
            num(res.weights.weights[i]),
            num(res.adjusted_pvalues[i]),
            res.rejected[i].to_string(),
        ]
    });
    io::write_csv(
        &dir.join("weights.csv"),
        &["id", "pvalue", "covariate", "covariate_rank", "weight", "adjusted_p", "rejected"],
        rows,
    )
}

fn write_plotdata(dir: &Path, res: &AnalysisResult) -> Result<()> {
    let m = res.covariate_rank.len();
    let mut by_rank = vec![0.0; m];
    for (i, &r) in res.covariate_rank.iter().enumerate() {
        by_rank[r - 1] = res.weights.weights[i];
    }
    io::write_csv(
        &dir.join("plotdata_weights.csv"),
        &["covariate_rank", "weight"],
        by_rank.iter().enumerate().map(|(k, w)| vec![(k + 1).to_string(), num(*w)]),
    )?;
    if let Some(p) = &res.diagnostics.rank_probabilities {
        io::write_csv(
            &dir.join("plotdata_rankprob.csv"),
            &["rank", "probability"],
            p.iter().enumerate().map(|(k, v)| vec![(k + 1).to_string(), num(*v)]),
        )?;
    }
    if let Some(p) = &res.diagnostics.group_probabilities {
        io::write_csv(
            &dir.join("plotdata_group_probabilities.csv"),
            &["group", "probability"],
            p.iter().enumerate().map(|(g, v)| vec![(g + 1).to_string(), num(*v)]),
        )?;
    }
    Ok(())
}

fn scenario_from(a: &SimulateArgs) -> Result<SimScenario> {
    let mut sc = match &a.scenario {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("invalid scenario in {}", p.display()))?
        }
        None => SimScenario::default(),
    };
    macro_rules! set {
        ($($f:ident => $field:ident),*) => {$(if let Some(v) = a.$f.clone() { sc.$field = v; })*};
    }
    set!(m => m, pi0 => pi0, effects => effect_grid, cv => cv, rho => rho, block_size => block_size,
         reps => replications, alpha => alpha, seed => seed, mc_reps => mc_reps, method => methods);
    if let Some(md) = a.mode {
        sc.mode = md.into();
    }
    if a.groups.is_some() {
        sc.groups = a.groups;
    }
    if a.constant_effects {
        sc.shape = EffectShape::Constant;
    }
    if a.independent_covariate {
        sc.covariate = CovariateModel::Independent;
    }
    if a.data_weights {
        sc.source = WeightSource::Data;
    }
    sc.validate().context("invalid scenario")?;
    Ok(sc)
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let sc = scenario_from(a)?;
    let start = Instant::now();
    let metrics = simulate_metrics(&sc)?;
    io::ensure_dir(&a.output_dir)?;
    io::write_json(&a.output_dir.join("scenario.json"), &sc)?;
    match a.format {
        Format::Json => io::write_json(&a.output_dir.join("metrics.json"), &metrics.rows)?,
        Format::Csv => write_metrics_csv(&a.output_dir, &metrics)?,
    }
    write_sim_plotdata(&a.output_dir, &metrics)?;
    eprintln!("{} rows in {:.1}s", metrics.rows.len(), start.elapsed().as_secs_f64());
    Ok(())
}

fn write_metrics_csv(dir: &Path, metrics: &SimMetrics) -> Result<()> {
    let mut rows = Vec::new();
    for r in &metrics.rows {
        for (name, v, se) in [("power", r.power, r.power_se), ("fdr", r.fdr, r.fdr_se), ("fwer", r.fwer, r.fwer_se)] {
            rows.push(vec![num(r.effect), r.method.tag().to_string(), name.to_string(), num(v), num(se), r.replications.to_string()]);
        }
        rows.push(vec![
            num(r.effect),
            r.method.tag().to_string(),
            "mean_rejections".into(),
            num(r.mean_rejections),
            String::new(),
            r.replications.to_string(),
        ]);
    }
    io::write_csv(&dir.join("metrics.csv"), &["effect", "method", "metric", "value", "se", "replications"], rows)
}

/// One wide table per metric: effect down the rows, one column per method.
fn write_sim_plotdata(dir: &Path, metrics: &SimMetrics) -> Result<()> {
    let methods = &metrics.scenario.methods;
    let mut header = vec!["effect".to_string()];
    header.extend(methods.iter().map(|m| m.tag().to_string()));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    type Pick = fn(&covweight::sim::MetricRow) -> f64;
    let picks: [(&str, Pick); 3] = [("power", |r| r.power), ("fdr", |r| r.fdr), ("fwer", |r| r.fwer)];
    for (name, pick) in picks {
        let rows = metrics.scenario.effect_grid.iter().map(|&e| {
            let mut row = vec![num(e)];
            row.extend(methods.iter().map(|&m| metrics.get(e, m).map(|r| num(pick(r))).unwrap_or_default()));
            row
        });
        io::write_csv(&dir.join(format!("plotdata_{name}.csv")), &header, rows)?;
    }
    Ok(())
}

fn parse_prior(s: &str) -> Result<EffectPrior> {
    let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
    let vals: Vec<f64> = rest
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<f64>().with_context(|| format!("bad number '{t}' in prior '{s}'")))
        .collect::<Result<_>>()?;
    let need = |n: usize| -> Result<()> {
        if vals.len() != n {
            bail!("prior '{kind}' takes {n} parameter(s), got {}", vals.len());
        }
        Ok(())
    };
    let prior = match kind.to_ascii_lowercase().as_str() {
        "point" => {
            need(1)?;
            EffectPrior::PointMass { effect: vals[0] }
        }
        "uniform" => {
            need(2)?;
            EffectPrior::Uniform { a: vals[0], b: vals[1] }
        }
        "exponential" | "exp" => {
            need(1)?;
            EffectPrior::Exponential { rate: vals[0] }
        }
        "normal" => {
            need(2)?;
            EffectPrior::Normal { mean: vals[0], sd: vals[1] }
        }
        _ => bail!("unknown prior '{kind}' (expected point, uniform, exponential or normal)"),
    };
    prior.validate()?;
    Ok(prior)
}

fn rankprob(a: &RankprobArgs) -> Result<()> {
    let prior = parse_prior(&a.prior)?;
    let pop = TestPopulation::new(a.m, a.m0, prior)?;
    let focal = a.focal.unwrap_or(if a.null_focal { 0.0 } else { prior.mean() });
    let mc = McConfig { replications: a.mc_reps, seed: a.seed };
    let exact = rank_prob_exact_mc(&pop, focal, a.null_focal, &mc)?;
    let approx = rank_prob_normal_approx(&pop, focal, a.null_focal, &mc)?;
    let brute = a.bruteforce.map(|n| rank_prob_bruteforce(&pop, focal, a.null_focal, n, a.seed)).transpose()?;
    let mut header = vec!["k", "exact_mc", "exact_mc_se", "normal_approx"];
    if brute.is_some() {
        header.push("bruteforce");
    }
    header.push("deviation");
    let mut max_dev = 0.0f64;
    let rows: Vec<Vec<String>> = (0..a.m)
        .map(|k| {
            let (e, n) = (exact.probabilities[k], approx.probabilities[k]);
            let dev = (e - n).abs();
            max_dev = max_dev.max(dev);
            let mut row = vec![(k + 1).to_string(), num(e), num(exact.std_errors[k]), num(n)];
            if let Some(b) = &brute {
                row.push(num(b.probabilities[k]));
            }
            row.push(num(dev));
            row
        })
        .collect();
    io::ensure_dir(&a.output_dir)?;
    io::write_csv(&a.output_dir.join("rankprob.csv"), &header, rows)?;
    eprintln!("max |exact - approx| = {max_dev:.3e}");
    Ok(())
}

fn validate(a: &ValidateArgs) -> Result<ExitCode> {
    let ids = a.criteria.clone().unwrap_or_else(|| CRITERIA.to_vec());
    if let Some(bad) = ids.iter().find(|i| !CRITERIA.contains(i)) {
        bail!("unknown criterion {bad} (expected 1..=10)");
    }
    if a.corrupt_cdf {
        covweight::math::normal::set_corrupted_cdf(true);
    }
    let scale = match a.scale {
        CliScale::Desk => Scale::Desk,
        CliScale::Full => Scale::Full,
    };
    let reports = run_suite(&ids, scale);
    for r in &reports {
        println!("{}", r.line());
        eprintln!("  criterion {} took {:.1}s", r.id, r.seconds);
    }
    let failed: Vec<u8> = reports.iter().filter(|r| !r.passed).map(|r| r.id).collect();
    println!("{} passed, {} failed", reports.len() - failed.len(), failed.len());
    if let Some(p) = &a.report {
        io::write_json(p, &reports)?;
    }
    Ok(if failed.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
