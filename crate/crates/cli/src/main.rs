//! `cosbin` command line: simulate marked point patterns, aggregate them into
//! areal forms, fit the scenario likelihoods, and run the replicated
//! simulation experiment.
//!
//! Exit codes: 0 success, 1 usage/validation error, 2 fit did not converge
//! (result still written), 3 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use cosbin_core::experiment::{
    run_experiment, write_replicates_csv, write_summary_csv, SettingConfig,
};
use cosbin_core::likelihood::Scenario;
use cosbin_core::{
    aggregate_to_type_c, build_partition, degrade, fit_scenario, precompute_nodes, simulate_bippp,
    AggregatedData, CovariateField, DataKind, Error, FitInputs, ModelParams, NmConfig, Partition,
    PointPattern, StudyWindow,
};

#[derive(Parser)]
#[command(name = "cosbin", version, about = "Change-of-support regression for aggregated binary data")]
struct Cli {
    /// Cap on worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a marked point pattern and optionally its aggregated forms.
    Simulate(SimulateArgs),
    /// Aggregate an exact point pattern file into Type C/D/E areal data.
    Aggregate(AggregateArgs),
    /// Fit one scenario likelihood to a data file and report Wald inference.
    Fit(FitArgs),
    /// Run a replicated simulation-study setting and summarize CP/bias/efficiency.
    Experiment(ExperimentArgs),
}

#[derive(Args, Clone)]
struct FieldArgs {
    /// Intensity covariate raster (CSV `x,y,value`); repeatable.
    #[arg(long = "z-raster")]
    z_raster: Vec<PathBuf>,
    /// Constant intensity covariate value; repeatable.
    #[arg(long = "z-const", allow_negative_numbers = true)]
    z_const: Vec<f64>,
    /// Classification covariate raster (CSV `x,y,value`); repeatable.
    #[arg(long = "x-raster")]
    x_raster: Vec<PathBuf>,
    /// Constant classification covariate value; repeatable.
    #[arg(long = "x-const", allow_negative_numbers = true)]
    x_const: Vec<f64>,
    /// Study window as `xmin,xmax,ymin,ymax`; inferred from rasters when
    /// omitted, unit square if there are none.
    #[arg(long, value_delimiter = ',', num_args = 4, allow_negative_numbers = true)]
    window: Option<Vec<f64>>,
}

#[derive(Args, Clone)]
struct PartitionArgs {
    /// Subregions along x.
    #[arg(long, default_value_t = 20)]
    nx: usize,
    /// Subregions along y.
    #[arg(long, default_value_t = 20)]
    ny: usize,
    /// Quadrature subdivisions per subregion per axis.
    #[arg(long, default_value_t = 1)]
    quad_per_cell: usize,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    fields: FieldArgs,
    #[command(flatten)]
    partition: PartitionArgs,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    alpha0: f64,
    /// Intensity coefficients, comma separated, one per z covariate.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    alpha: Vec<f64>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    beta0: f64,
    /// Classification coefficients, comma separated, one per x covariate.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    beta: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Also write degraded forms, e.g. `--degrade c,d,e`.
    #[arg(long, value_delimiter = ',')]
    degrade: Vec<String>,
}

#[derive(Args)]
struct AggregateArgs {
    /// Point pattern CSV (`x,y,mark`).
    #[arg(long)]
    points: PathBuf,
    #[command(flatten)]
    partition: PartitionArgs,
    /// Window as `xmin,xmax,ymin,ymax` (default unit square).
    #[arg(long, value_delimiter = ',', num_args = 4, allow_negative_numbers = true)]
    window: Option<Vec<f64>>,
    /// Target kind: c, d, or e.
    #[arg(long)]
    kind: String,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Data file: `x,y,mark` for scenario 1, areal CSV for scenarios 2-5.
    #[arg(long)]
    data: PathBuf,
    /// Scenario number 1-5.
    #[arg(long)]
    scenario: usize,
    #[command(flatten)]
    fields: FieldArgs,
    #[command(flatten)]
    partition: PartitionArgs,
    /// Degrade the loaded areal data to this kind (c, d, or e) before fitting.
    #[arg(long)]
    kind: Option<String>,
    /// Confidence level for Wald intervals.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Optional starting values, comma separated in packing order.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    start: Option<Vec<f64>>,
    /// `truth.json` to check CI coverage against (defaults to a `truth.json`
    /// sitting next to the data file, if present).
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Output path for the fit JSON.
    #[arg(long, default_value = "fit.json")]
    out: PathBuf,
    /// Nelder-Mead iteration cap.
    #[arg(long, default_value_t = 5000)]
    max_iter: usize,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Simulation setting 1-4.
    #[arg(long)]
    setting: u8,
    /// Scenarios to fit, e.g. `--scenarios 1,2,3,4,5`.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    scenarios: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    replicates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for `summary.csv` and `replicates.csv`.
    #[arg(long)]
    out: PathBuf,
    /// Hold one covariate draw fixed across replicates.
    #[arg(long, default_value_t = false)]
    fixed_fields: bool,
    /// Pilot replicates per calibration probe.
    #[arg(long, default_value_t = 200)]
    pilot: usize,
}

#[derive(Serialize, Deserialize)]
struct TruthFile {
    schema_version: u32,
    params: ModelParams,
    seed: u64,
}

fn parse_kind(s: &str) -> Result<DataKind, Error> {
    match s.to_ascii_lowercase().as_str() {
        "c" => Ok(DataKind::TypeC),
        "d" => Ok(DataKind::TypeD),
        "e" => Ok(DataKind::TypeE),
        other => Err(Error::InvalidArgument(format!("unknown data kind `{other}`"))),
    }
}

fn parse_window(w: &[f64]) -> Result<StudyWindow, Error> {
    StudyWindow::new(w[0], w[1], w[2], w[3])
}

/// Resolve covariate fields and the common study window.
fn resolve_fields(args: &FieldArgs) -> Result<(StudyWindow, Vec<CovariateField>, Vec<CovariateField>), Error> {
    let mut rasters: Vec<(bool, CovariateField)> = Vec::new();
    for p in &args.z_raster {
        rasters.push((true, CovariateField::read_csv(p)?));
    }
    for p in &args.x_raster {
        rasters.push((false, CovariateField::read_csv(p)?));
    }
    let window = if let Some(w) = &args.window {
        parse_window(w)?
    } else if let Some((_, f)) = rasters.first() {
        f.window()
    } else {
        StudyWindow::unit_square()
    };
    for (_, f) in &rasters {
        let fw = f.window();
        let close = |a: f64, b: f64| (a - b).abs() < 1e-9;
        if !(close(fw.xmin, window.xmin)
            && close(fw.xmax, window.xmax)
            && close(fw.ymin, window.ymin)
            && close(fw.ymax, window.ymax))
        {
            return Err(Error::Validation(
                "covariate rasters do not share a common study window".into(),
            ));
        }
    }
    let mut z: Vec<CovariateField> = rasters
        .iter()
        .filter(|(is_z, _)| *is_z)
        .map(|(_, f)| f.clone())
        .collect();
    let mut x: Vec<CovariateField> = rasters
        .into_iter()
        .filter(|(is_z, _)| !*is_z)
        .map(|(_, f)| f)
        .collect();
    z.extend(args.z_const.iter().map(|&v| CovariateField::constant(window, v)));
    x.extend(args.x_const.iter().map(|&v| CovariateField::constant(window, v)));
    Ok((window, z, x))
}

fn build_part(window: StudyWindow, p: &PartitionArgs) -> Result<Partition, Error> {
    build_partition(window, p.nx, p.ny, p.quad_per_cell)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), Error> {
    let (window, z, x) = resolve_fields(&args.fields)?;
    let partition = build_part(window, &args.partition)?;
    let params = ModelParams::new(
        args.alpha0,
        args.alpha.clone(),
        args.beta0,
        args.beta.clone(),
    );
    let pattern = simulate_bippp(&params, &z, &x, &partition, args.seed)?;
    std::fs::create_dir_all(&args.out)?;
    pattern.write_csv(args.out.join("points.csv"))?;

    let truth = TruthFile { schema_version: 1, params, seed: args.seed };
    let mut json = serde_json::to_string_pretty(&truth)?;
    json.push('\n');
    std::fs::write(args.out.join("truth.json"), json)?;

    if !args.degrade.is_empty() {
        let type_c = aggregate_to_type_c(&pattern, &partition)?;
        for k in &args.degrade {
            let kind = parse_kind(k)?;
            let data = degrade(&type_c, kind)?;
            let name = format!("type_{}.csv", k.to_ascii_lowercase());
            data.write_csv(args.out.join(name))?;
        }
    }
    println!("simulated {} points -> {}", pattern.len(), args.out.display());
    Ok(())
}

fn cmd_aggregate(args: &AggregateArgs) -> Result<(), Error> {
    let window = match &args.window {
        Some(w) => parse_window(w)?,
        None => StudyWindow::unit_square(),
    };
    let partition = build_part(window, &args.partition)?;
    let pattern = PointPattern::read_csv(&args.points, window)?;
    let kind = parse_kind(&args.kind)?;
    let type_c = aggregate_to_type_c(&pattern, &partition)?;
    let data = degrade(&type_c, kind)?;
    data.write_csv(&args.out)?;
    println!(
        "aggregated {} points into {} Type {} regions -> {}",
        pattern.len(),
        data.n_regions(),
        kind,
        args.out.display()
    );
    Ok(())
}

fn load_truth(args: &FitArgs) -> Option<TruthFile> {
    let path = args
        .truth
        .clone()
        .or_else(|| {
            let p = args.data.parent().unwrap_or(Path::new(".")).join("truth.json");
            p.exists().then_some(p)
        })?;
    let text = std::fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

fn cmd_fit(args: &FitArgs) -> Result<bool, Error> {
    let scenario = Scenario::from_index(args.scenario)?;
    let (window, z, x) = resolve_fields(&args.fields)?;
    let partition = build_part(window, &args.partition)?;
    let table = precompute_nodes(&partition, &z, &x)?;

    let pattern;
    let areal;
    let (pattern_ref, areal_ref) = match scenario.expected_kind() {
        None => {
            pattern = PointPattern::read_csv(&args.data, window)?;
            (Some(&pattern), None)
        }
        Some(kind) => {
            let mut data = AggregatedData::read_csv(&args.data)?;
            if let Some(k) = &args.kind {
                data = degrade(&data, parse_kind(k)?)?;
            }
            if data.kind() != kind {
                return Err(Error::Validation(format!(
                    "scenario {} expects Type {} data (header `{}`); file is Type {}",
                    args.scenario,
                    kind,
                    expected_header(kind),
                    data.kind()
                )));
            }
            areal = data;
            (None, Some(&areal))
        }
    };

    let nm = NmConfig { max_iter: args.max_iter, ..NmConfig::default() };
    let inputs = FitInputs {
        scenario,
        pattern: pattern_ref,
        areal: areal_ref,
        x_fields: &x,
        table: &table,
        partition: &partition,
    };
    let fit = if let Some(start) = &args.start {
        // override the automatic starts by fitting from the supplied point
        cosbin_core::optimize::fit_scenario_from(&inputs, &nm, args.level, start)?
    } else {
        fit_scenario(&inputs, &nm, args.level)?
    };

    let mut json = serde_json::to_string_pretty(&fit)?;
    json.push('\n');
    std::fs::write(&args.out, json)?;

    println!("scenario {} fit ({} evaluations, {:.2}s)", fit.scenario, fit.n_evals, fit.timing_secs);
    println!("{:<10} {:>12} {:>12} {:>12} {:>12}", "param", "estimate", "se", "ci_lo", "ci_hi");
    for (i, name) in fit.param_names.iter().enumerate() {
        let se = fit.ses[i].map(|s| format!("{s:.6}")).unwrap_or_else(|| "NA".into());
        let (lo, hi) = fit.cis[i]
            .map(|(a, b)| (format!("{a:.6}"), format!("{b:.6}")))
            .unwrap_or_else(|| ("NA".into(), "NA".into()));
        println!("{:<10} {:>12.6} {:>12} {:>12} {:>12}", name, fit.estimates[i], se, lo, hi);
    }
    for fixed in &fit.fixed_params {
        println!("{fixed}: fixed at 0 (not estimated)");
    }
    println!(
        "nll = {:.6}  converged = {}  hessian condition = {:.3e}{}",
        fit.nll,
        fit.converged,
        fit.hessian_condition,
        if fit.weakly_identified { "  [weakly identified]" } else { "" }
    );

    if let Some(truth) = load_truth(args) {
        let true_beta1 = truth.params.beta.first().copied();
        if let (Some(t), Some((lo, hi))) = (true_beta1, fit.ci_for("beta1")) {
            let contains = lo <= t && t <= hi;
            println!("CI contains truth (beta1 = {t}): {}", if contains { "yes" } else { "no" });
        }
    }
    Ok(fit.converged)
}

fn expected_header(kind: DataKind) -> &'static str {
    match kind {
        DataKind::TypeC => "region_id,n1,n0",
        DataKind::TypeD => "region_id,n,v",
        DataKind::TypeE => "region_id,v",
    }
}

fn cmd_experiment(args: &ExperimentArgs) -> Result<(), Error> {
    let mut cfg = SettingConfig::paper_setting(args.setting, args.replicates, args.seed)?;
    cfg.fixed_fields = args.fixed_fields;
    cfg.calibration_pilot_replicates = args.pilot;
    let scenarios: Vec<Scenario> = args
        .scenarios
        .iter()
        .map(|&i| Scenario::from_index(i))
        .collect::<Result<_, _>>()?;
    let out = run_experiment(&cfg, &scenarios)?;
    std::fs::create_dir_all(&args.out)?;
    write_summary_csv(&out, &args.out)?;
    write_replicates_csv(&out, &args.out)?;
    let calib = serde_json::json!({
        "schema_version": 1,
        "setting": out.setting,
        "alpha0": out.alpha0,
        "beta0": out.beta0,
    });
    std::fs::write(
        args.out.join("calibration.json"),
        format!("{}\n", serde_json::to_string_pretty(&calib)?),
    )?;

    println!("setting {}: alpha0 = {:.4}, beta0 = {:.4}", out.setting, out.alpha0, out.beta0);
    println!(
        "{:<9} {:>6} {:>8} {:>10} {:>10} {:>11} {:>9}",
        "scenario", "cp", "mean_b1", "sd_b1", "eff", "mean_nj", "excluded"
    );
    for s in &out.summaries {
        println!(
            "{:<9} {:>6.3} {:>8.3} {:>10.4} {:>10} {:>11.2} {:>9}",
            s.scenario,
            s.cp,
            s.mean_beta1,
            s.sd_beta1,
            s.efficiency.map(|e| format!("{e:.3}")).unwrap_or_else(|| "NA".into()),
            s.mean_nj,
            s.excluded
        );
    }
    Ok(())
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::NumericRange(_) | Error::Calibration(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    // clap's default exit code for usage errors is 2, which this tool
    // reserves for non-convergence; remap usage errors to 1.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        // ignore failure if a pool is already installed
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a).map(|()| 0u8),
        Command::Aggregate(a) => cmd_aggregate(a).map(|()| 0u8),
        Command::Fit(a) => cmd_fit(a).map(|converged| if converged { 0 } else { 2 }),
        Command::Experiment(a) => cmd_experiment(a).map(|()| 0u8),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
