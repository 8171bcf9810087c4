//! Replicated simulation study: intercept calibration, replicate generation,
//! fitting all requested scenarios, and coverage/bias/efficiency summaries.

use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{aggregate_to_type_c, degrade, AggregatedData, DataKind};
use crate::error::{Error, Result};
use crate::grid::{
    build_partition, sample_gp_field_with, CovariateField, GpConfig, Partition, StudyWindow,
};
use crate::integrate::{precompute_nodes, region_integrals};
use crate::likelihood::Scenario;
use crate::numeric::sigmoid;
use crate::optimize::{fit_scenario, FitInputs, NmConfig};
use crate::process::{simulate_bippp_with, ModelParams};

// Seed-stream layout per master seed: replicate fields, replicate simulation,
// calibration pilots, and fixed-field mode each get disjoint stream ranges.
const STREAM_REP_FIELDS: u64 = 0;
const STREAM_REP_SIM: u64 = 1 << 33;
const STREAM_PILOT: u64 = 1 << 34;
const STREAM_FIXED_FIELDS: u64 = 1 << 35;

fn stream_rng(master: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng
}

/// One of the four factorial settings (covariate equivalence x sample size),
/// plus replicate count and reproducibility knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SettingConfig {
    pub setting_id: u8,
    pub covariate_equivalence: bool,
    /// Target mean observations per subregion (10 = small, 50 = large).
    pub target_mean_n_per_cell: f64,
    /// Target mean proportion of subregions containing a one.
    pub target_vbar: f64,
    pub alpha1: f64,
    pub beta1: f64,
    pub replicates: usize,
    pub nx: usize,
    pub ny: usize,
    pub quad_per_cell: usize,
    pub raster_mx: usize,
    pub raster_my: usize,
    pub gp: GpConfig,
    pub master_seed: u64,
    /// Redraw covariate fields per replicate (default) or hold one draw fixed.
    pub fixed_fields: bool,
    pub calibration_pilot_replicates: usize,
    pub nm: NmConfig,
    pub ci_level: f64,
}

impl SettingConfig {
    /// The four factorial settings: 1 = (x=z, small), 2 = (x=z, large),
    /// 3 = (x!=z, small), 4 = (x!=z, large). The quadrature grid is chosen to
    /// sit exactly on the covariate raster, so the integrals are exact.
    pub fn paper_setting(setting_id: u8, replicates: usize, master_seed: u64) -> Result<Self> {
        let (equiv, target_n) = match setting_id {
            1 => (true, 10.0),
            2 => (true, 50.0),
            3 => (false, 10.0),
            4 => (false, 50.0),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "setting {setting_id} not in 1..=4"
                )))
            }
        };
        Ok(SettingConfig {
            setting_id,
            covariate_equivalence: equiv,
            target_mean_n_per_cell: target_n,
            target_vbar: 0.11,
            alpha1: 1.0,
            beta1: 1.0,
            replicates,
            nx: 20,
            ny: 20,
            quad_per_cell: 2,
            raster_mx: 40,
            raster_my: 40,
            gp: GpConfig { seed: 0, ..GpConfig::default() },
            master_seed,
            fixed_fields: false,
            calibration_pilot_replicates: 200,
            nm: NmConfig::default(),
            ci_level: 0.95,
        })
    }

    fn window(&self) -> StudyWindow {
        StudyWindow::unit_square()
    }

    fn partition(&self) -> Result<Partition> {
        build_partition(self.window(), self.nx, self.ny, self.quad_per_cell)
    }

    /// Draw the (z, x) field pair for a given stream offset.
    fn draw_fields(&self, stream: u64) -> Result<(CovariateField, CovariateField)> {
        let w = self.window();
        let mut rz = stream_rng(self.master_seed, stream);
        let z = sample_gp_field_with(w, self.raster_mx, self.raster_my, &self.gp, &mut rz)?;
        let x = if self.covariate_equivalence {
            z.clone()
        } else {
            let mut rx = stream_rng(self.master_seed, stream + 1);
            sample_gp_field_with(w, self.raster_mx, self.raster_my, &self.gp, &mut rx)?
        };
        Ok((z, x))
    }

    fn replicate_fields(&self, rep: usize) -> Result<(CovariateField, CovariateField)> {
        if self.fixed_fields {
            self.draw_fields(STREAM_FIXED_FIELDS)
        } else {
            self.draw_fields(STREAM_REP_FIELDS + 2 * rep as u64)
        }
    }
}

/// Pilot replicate reduced to what the beta0 probe needs: per point, the
/// containing region, x(u), and the mark's uniform draw. Locations depend only
/// on alpha, so they are simulated once and reused across probes (common
/// random numbers keep the probe monotone in beta0).
struct PilotRep {
    n_regions: usize,
    points: Vec<(usize, f64, f64)>,
}

impl PilotRep {
    fn vbar(&self, beta0: f64, beta1: f64) -> f64 {
        let mut hit = vec![false; self.n_regions];
        for &(j, xv, t) in &self.points {
            if t < sigmoid(beta0 + beta1 * xv) {
                hit[j] = true;
            }
        }
        hit.iter().filter(|&&h| h).count() as f64 / self.n_regions as f64
    }
}

/// Calibrate (alpha0, beta0) for a setting: alpha0 by bisection on the
/// quadrature mean of lambda over pilot fields, beta0 by stochastic bisection
/// of the pilot mean of v-bar (tolerance +-0.01).
pub fn calibrate_intercepts(cfg: &SettingConfig) -> Result<(f64, f64)> {
    if cfg.calibration_pilot_replicates == 0 {
        return Err(Error::Calibration("pilot replicate count is zero".into()));
    }
    let partition = cfg.partition()?;
    let j = partition.n_regions() as f64;

    // pilot fields and their total intensity integral at alpha0 = 0
    let n_pilot = cfg.calibration_pilot_replicates;
    let pilot_fields: Vec<(CovariateField, CovariateField)> = (0..n_pilot)
        .map(|p| cfg.draw_fields(STREAM_PILOT + 2 * p as u64))
        .collect::<Result<_>>()?;
    let base_params = ModelParams::new(0.0, vec![cfg.alpha1], 0.0, vec![cfg.beta1]);
    let mut base_totals = Vec::with_capacity(n_pilot);
    for (z, x) in &pilot_fields {
        let table = precompute_nodes(&partition, std::slice::from_ref(z), std::slice::from_ref(x))?;
        base_totals.push(region_integrals(&base_params, &table)?.total_l());
    }
    let mean_base_total = base_totals.iter().sum::<f64>() / n_pilot as f64;

    // E[n_j] = e^alpha0 * mean_base_total / J, strictly increasing in alpha0
    let target = cfg.target_mean_n_per_cell;
    let mean_n = |a0: f64| (a0.exp() * mean_base_total) / j;
    let (mut lo, mut hi) = (-60.0f64, 60.0f64);
    if mean_n(lo) > target || mean_n(hi) < target {
        return Err(Error::Calibration(format!(
            "alpha0 bracket [{lo}, {hi}] does not contain target {target} \
             (f(lo)={}, f(hi)={})",
            mean_n(lo),
            mean_n(hi)
        )));
    }
    let alpha0 = loop {
        let mid = 0.5 * (lo + hi);
        if hi - lo < 1e-12 {
            break mid;
        }
        if mean_n(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    };

    // pilot point patterns at the calibrated alpha0, reduced for mark probes
    let sim_params = ModelParams::new(alpha0, vec![cfg.alpha1], 0.0, vec![cfg.beta1]);
    let pilots: Vec<PilotRep> = pilot_fields
        .iter()
        .enumerate()
        .map(|(p, (z, x))| -> Result<PilotRep> {
            let mut rng = stream_rng(cfg.master_seed, STREAM_PILOT + 2 * p as u64 + 1);
            let pat = simulate_bippp_with(
                &sim_params,
                std::slice::from_ref(z),
                std::slice::from_ref(x),
                &partition,
                &mut rng,
            )?;
            let mut points = Vec::with_capacity(pat.len());
            for &(u, _) in pat.points() {
                points.push((partition.region_of(u)?, x.value_at(u)?, rng.gen::<f64>()));
            }
            Ok(PilotRep { n_regions: partition.n_regions(), points })
        })
        .collect::<Result<_>>()?;

    let probe = |b0: f64| -> f64 {
        pilots.iter().map(|p| p.vbar(b0, cfg.beta1)).sum::<f64>() / n_pilot as f64
    };
    let tol = 0.01;
    let (mut lo, mut hi) = (-30.0f64, 10.0f64);
    let (flo, fhi) = (probe(lo), probe(hi));
    if flo > cfg.target_vbar + tol || fhi < cfg.target_vbar - tol {
        return Err(Error::Calibration(format!(
            "beta0 bracket [{lo}, {hi}] misses target vbar {} (probe(lo)={flo}, probe(hi)={fhi})",
            cfg.target_vbar
        )));
    }
    let beta0 = loop {
        let mid = 0.5 * (lo + hi);
        let v = probe(mid);
        if (v - cfg.target_vbar).abs() <= tol || hi - lo < 1e-9 {
            if (v - cfg.target_vbar).abs() > tol {
                return Err(Error::Calibration(format!(
                    "beta0 bisection collapsed at {mid} with vbar {v}, target {}",
                    cfg.target_vbar
                )));
            }
            break mid;
        }
        if v < cfg.target_vbar {
            lo = mid;
        } else {
            hi = mid;
        }
    };
    Ok((alpha0, beta0))
}

/// One scenario fit within one replicate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub scenario: usize,
    pub beta1_hat: f64,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub converged: bool,
    pub weakly_identified: bool,
    pub hessian_condition: f64,
    pub nll: f64,
}

/// Summary over replicates for one (setting, scenario) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRow {
    pub setting: u8,
    pub scenario: usize,
    pub replicates: usize,
    /// Replicates excluded from CP (non-converged or singular Hessian).
    pub excluded: usize,
    pub cp: f64,
    pub mean_beta1: f64,
    pub sd_beta1: f64,
    /// sd(beta1_hat) / sd(beta1_hat under scenario 1); None when scenario 1
    /// was not part of the run.
    pub efficiency: Option<f64>,
    pub mean_nj: f64,
    pub mean_n1j: f64,
    pub mean_n0j: f64,
    pub mean_vj: f64,
    pub weak_flag_rate: f64,
}

#[derive(Debug, Clone)]
struct RepOutcome {
    records: Vec<ReplicateRecord>,
    nj: f64,
    n1j: f64,
    n0j: f64,
    vj: f64,
}

/// Full output of a setting run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub setting: u8,
    pub alpha0: f64,
    pub beta0: f64,
    pub summaries: Vec<SummaryRow>,
    pub records: Vec<ReplicateRecord>,
}

/// Run the replicated experiment for one setting. Replicates run in parallel
/// with per-replicate seed streams; individual fit failures are recorded and
/// never abort the run. Deterministic given the master seed.
pub fn run_experiment(cfg: &SettingConfig, scenarios: &[Scenario]) -> Result<ExperimentOutput> {
    let (alpha0, beta0) = calibrate_intercepts(cfg)?;
    run_experiment_with_intercepts(cfg, scenarios, alpha0, beta0)
}

/// As [`run_experiment`] with the intercept calibration already done (lets
/// callers reuse one calibration across scenario subsets).
pub fn run_experiment_with_intercepts(
    cfg: &SettingConfig,
    scenarios: &[Scenario],
    alpha0: f64,
    beta0: f64,
) -> Result<ExperimentOutput> {
    let partition = cfg.partition()?;
    let truth = ModelParams::new(alpha0, vec![cfg.alpha1], beta0, vec![cfg.beta1]);

    let outcomes: Vec<Result<RepOutcome>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|rep| run_replicate(cfg, scenarios, &partition, &truth, rep))
        .collect();

    let mut records = Vec::new();
    let mut nj = 0.0;
    let mut n1j = 0.0;
    let mut n0j = 0.0;
    let mut vj = 0.0;
    let mut ok_reps = 0usize;
    for out in outcomes {
        // a whole-replicate failure (e.g. degenerate simulation) is dropped
        // but does not abort the run
        if let Ok(o) = out {
            records.extend(o.records);
            nj += o.nj;
            n1j += o.n1j;
            n0j += o.n0j;
            vj += o.vj;
            ok_reps += 1;
        }
    }
    let denom = ok_reps.max(1) as f64;
    let (mean_nj, mean_n1j, mean_n0j, mean_vj) = (nj / denom, n1j / denom, n0j / denom, vj / denom);

    // scenario-1 spread, the efficiency denominator
    let sd_of = |sc: usize| -> (usize, usize, f64, f64, f64, f64) {
        let all: Vec<&ReplicateRecord> = records.iter().filter(|r| r.scenario == sc).collect();
        let included: Vec<&&ReplicateRecord> =
            all.iter().filter(|r| r.converged && r.ci_lo.is_some()).collect();
        let est: Vec<f64> = included.iter().map(|r| r.beta1_hat).collect();
        let n = est.len() as f64;
        let mean = if est.is_empty() { f64::NAN } else { est.iter().sum::<f64>() / n };
        let sd = if est.len() < 2 {
            f64::NAN
        } else {
            (est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        let covered = included
            .iter()
            .filter(|r| {
                r.ci_lo.unwrap() <= cfg.beta1 && cfg.beta1 <= r.ci_hi.unwrap()
            })
            .count();
        let cp = if included.is_empty() { f64::NAN } else { covered as f64 / n };
        (all.len(), all.len() - included.len(), cp, mean, sd, {
            let weak = all.iter().filter(|r| r.weakly_identified || !r.converged).count();
            if all.is_empty() { f64::NAN } else { weak as f64 / all.len() as f64 }
        })
    };

    let s1_sd = scenarios
        .contains(&Scenario::S1Logistic)
        .then(|| sd_of(1).4)
        .filter(|sd| sd.is_finite());

    let mut summaries = Vec::new();
    for sc in scenarios {
        if cfg.replicates == 0 {
            break;
        }
        let (total, excluded, cp, mean, sd, weak_rate) = sd_of(sc.index());
        summaries.push(SummaryRow {
            setting: cfg.setting_id,
            scenario: sc.index(),
            replicates: total,
            excluded,
            cp,
            mean_beta1: mean,
            sd_beta1: sd,
            efficiency: match (sc, s1_sd) {
                (_, Some(s1)) if s1 > 0.0 => Some(sd / s1),
                _ => None,
            },
            mean_nj,
            mean_n1j,
            mean_n0j,
            mean_vj,
            weak_flag_rate: weak_rate,
        });
    }

    Ok(ExperimentOutput { setting: cfg.setting_id, alpha0, beta0, summaries, records })
}

fn run_replicate(
    cfg: &SettingConfig,
    scenarios: &[Scenario],
    partition: &Partition,
    truth: &ModelParams,
    rep: usize,
) -> Result<RepOutcome> {
    let (z, x) = cfg.replicate_fields(rep)?;
    let z_fields = std::slice::from_ref(&z);
    let x_fields = std::slice::from_ref(&x);
    let mut rng = stream_rng(cfg.master_seed, STREAM_REP_SIM + rep as u64);
    let pattern = simulate_bippp_with(truth, z_fields, x_fields, partition, &mut rng)?;
    let type_c = aggregate_to_type_c(&pattern, partition)?;
    let type_d = degrade(&type_c, DataKind::TypeD)?;
    let type_e = degrade(&type_c, DataKind::TypeE)?;
    let table = precompute_nodes(partition, z_fields, x_fields)?;

    let j = partition.n_regions() as f64;
    let (n1_sum, n0_sum, v_sum) = match (&type_c, &type_e) {
        (AggregatedData::TypeC { n1, n0 }, AggregatedData::TypeE { v }) => (
            n1.iter().sum::<u64>() as f64,
            n0.iter().sum::<u64>() as f64,
            v.iter().map(|&b| b as u64).sum::<u64>() as f64,
        ),
        _ => unreachable!(),
    };

    let mut records = Vec::with_capacity(scenarios.len());
    for &sc in scenarios {
        let areal = match sc.expected_kind() {
            None => None,
            Some(DataKind::TypeC) => Some(&type_c),
            Some(DataKind::TypeD) => Some(&type_d),
            Some(DataKind::TypeE) => Some(&type_e),
        };
        let inputs = FitInputs {
            scenario: sc,
            pattern: (sc == Scenario::S1Logistic).then_some(&pattern),
            areal,
            x_fields,
            table: &table,
            partition,
        };
        let record = match fit_scenario(&inputs, &cfg.nm, cfg.ci_level) {
            Ok(fit) => {
                let b1 = fit.estimate_for("beta1").unwrap_or(f64::NAN);
                let ci = fit.ci_for("beta1");
                ReplicateRecord {
                    replicate: rep,
                    scenario: sc.index(),
                    beta1_hat: b1,
                    ci_lo: ci.map(|c| c.0),
                    ci_hi: ci.map(|c| c.1),
                    converged: fit.converged,
                    weakly_identified: fit.weakly_identified,
                    hessian_condition: fit.hessian_condition,
                    nll: fit.nll,
                }
            }
            // fit failure (e.g. empty pattern for scenario 1): recorded as a
            // non-converged replicate
            Err(_) => ReplicateRecord {
                replicate: rep,
                scenario: sc.index(),
                beta1_hat: f64::NAN,
                ci_lo: None,
                ci_hi: None,
                converged: false,
                weakly_identified: true,
                hessian_condition: f64::INFINITY,
                nll: f64::NAN,
            },
        };
        records.push(record);
    }

    Ok(RepOutcome {
        records,
        nj: (n1_sum + n0_sum) / j,
        n1j: n1_sum / j,
        n0j: n0_sum / j,
        vj: v_sum / j,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "NA".to_string())
}

/// Write `summary.csv` (one row per scenario) into `dir`.
pub fn write_summary_csv(out: &ExperimentOutput, dir: &Path) -> Result<()> {
    let mut f = std::fs::File::create(dir.join("summary.csv"))?;
    writeln!(
        f,
        "setting,scenario,replicates,excluded,cp,mean_beta1,sd_beta1,efficiency,\
         mean_nj,mean_n1j,mean_n0j,mean_vj,weak_flag_rate"
    )?;
    for s in &out.summaries {
        writeln!(
            f,
            "{},{},{},{},{:.6},{:.6},{:.6},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            s.setting,
            s.scenario,
            s.replicates,
            s.excluded,
            s.cp,
            s.mean_beta1,
            s.sd_beta1,
            fmt_opt(s.efficiency),
            s.mean_nj,
            s.mean_n1j,
            s.mean_n0j,
            s.mean_vj,
            s.weak_flag_rate
        )?;
    }
    Ok(())
}

/// Write `replicates.csv` (one row per replicate x scenario) into `dir`.
pub fn write_replicates_csv(out: &ExperimentOutput, dir: &Path) -> Result<()> {
    let mut f = std::fs::File::create(dir.join("replicates.csv"))?;
    writeln!(
        f,
        "replicate,scenario,beta1_hat,ci_lo,ci_hi,converged,weakly_identified,\
         hessian_condition,nll"
    )?;
    for r in &out.records {
        writeln!(
            f,
            "{},{},{:.6},{},{},{},{},{:.6e},{:.6}",
            r.replicate,
            r.scenario,
            r.beta1_hat,
            fmt_opt(r.ci_lo),
            fmt_opt(r.ci_hi),
            r.converged,
            r.weakly_identified,
            r.hessian_condition,
            r.nll
        )?;
    }
    Ok(())
}
