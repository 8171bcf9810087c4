//! Derivative-free likelihood maximization (Nelder-Mead), finite-difference
//! Hessians, and Wald inference, plus the per-scenario fit driver.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::aggregate::AggregatedData;
use crate::error::{Error, Result};
use crate::grid::{CovariateField, Partition};
use crate::integrate::NodeTable;
use crate::likelihood::{
    nll_s1_logistic, nll_s2_joint_counts, nll_s3_joint_indicator, nll_s4_conditional_indicator,
    nll_s5_bernoulli_indicator, Scenario,
};
use crate::process::{ModelParams, PointPattern};

/// Condition-number threshold above which a fit is flagged as weakly
/// identified.
pub const WEAK_IDENTIFIABILITY_CONDITION: f64 = 1e8;

/// Nelder-Mead settings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NmConfig {
    pub max_iter: usize,
    pub xtol: f64,
    pub ftol: f64,
    pub initial_scale: f64,
    /// Fresh-simplex restarts from the found point after each convergence.
    pub restarts: usize,
}

impl Default for NmConfig {
    fn default() -> Self {
        NmConfig { max_iter: 5000, xtol: 1e-8, ftol: 1e-8, initial_scale: 0.1, restarts: 2 }
    }
}

/// Outcome of a Nelder-Mead run.
#[derive(Debug, Clone)]
pub struct NmResult {
    pub x: Vec<f64>,
    pub fval: f64,
    pub converged: bool,
    pub n_evals: usize,
}

/// Minimize `f` by restarted Nelder-Mead (reflection 1, expansion 2,
/// contraction 0.5, shrink 0.5).
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    start: &[f64],
    cfg: &NmConfig,
) -> Result<NmResult> {
    if cfg.max_iter == 0 || !(cfg.xtol > 0.0) || !(cfg.ftol > 0.0) {
        return Err(Error::InvalidArgument("invalid Nelder-Mead config".into()));
    }
    let dim = start.len();
    if dim == 0 {
        return Err(Error::InvalidArgument("empty start vector".into()));
    }
    let mut n_evals = 0usize;
    let mut eval = |x: &[f64]| -> f64 {
        n_evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let f0 = eval(start);
    if !f0.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "objective is not finite at the start point ({f0})"
        )));
    }

    let mut best = start.to_vec();
    let mut best_f = f0;
    let mut converged = false;

    for _restart in 0..=cfg.restarts {
        // simplex: best point plus a step along each axis
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
        simplex.push((best.clone(), best_f));
        for i in 0..dim {
            let mut x = best.clone();
            x[i] += cfg.initial_scale * x[i].abs().max(1.0);
            let fx = eval(&x);
            simplex.push((x, fx));
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));

        let mut this_converged = false;
        for _ in 0..cfg.max_iter {
            let spread = simplex[dim].1 - simplex[0].1;
            let diam = simplex[1..]
                .iter()
                .map(|(x, _)| {
                    x.iter()
                        .zip(&simplex[0].0)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0f64, f64::max)
                })
                .fold(0.0f64, f64::max);
            if diam < cfg.xtol && spread < cfg.ftol {
                this_converged = true;
                break;
            }

            // centroid of all but the worst
            let mut centroid = vec![0.0; dim];
            for (x, _) in &simplex[..dim] {
                for (c, v) in centroid.iter_mut().zip(x) {
                    *c += v;
                }
            }
            for c in &mut centroid {
                *c /= dim as f64;
            }
            let worst = simplex[dim].clone();

            let at = |t: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&worst.0)
                    .map(|(c, w)| c + t * (c - w))
                    .collect()
            };
            let xr = at(1.0);
            let fr = eval(&xr);
            if fr < simplex[0].1 {
                let xe = at(2.0);
                let fe = eval(&xe);
                simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[dim - 1].1 {
                simplex[dim] = (xr, fr);
            } else {
                // contract toward the better of worst/reflected
                let (xc, fc) = if fr < worst.1 {
                    let xc = at(0.5);
                    let fc = eval(&xc);
                    (xc, fc)
                } else {
                    let xc = at(-0.5);
                    let fc = eval(&xc);
                    (xc, fc)
                };
                if fc < worst.1.min(fr) {
                    simplex[dim] = (xc, fc);
                } else {
                    // shrink toward the best vertex
                    let best_v = simplex[0].0.clone();
                    for (x, fx) in simplex.iter_mut().skip(1) {
                        for (xi, bi) in x.iter_mut().zip(&best_v) {
                            *xi = bi + 0.5 * (*xi - bi);
                        }
                        *fx = eval(x);
                    }
                }
            }
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        }

        if simplex[0].1 <= best_f {
            best = simplex[0].0.clone();
            best_f = simplex[0].1;
        }
        converged = this_converged;
    }

    Ok(NmResult { x: best, fval: best_f, converged, n_evals })
}

/// Central-difference Hessian with per-coordinate relative step
/// `rel_step * max(1, |x_i|)`, symmetrized as (H + H')/2.
pub fn numeric_hessian<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    at: &[f64],
    rel_step: f64,
) -> Result<DMatrix<f64>> {
    let dim = at.len();
    let h: Vec<f64> = at.iter().map(|x| rel_step * x.abs().max(1.0)).collect();
    let mut eval = |x: &[f64], entry: (usize, usize)| -> Result<f64> {
        let v = f(x);
        if !v.is_finite() {
            return Err(Error::NumericRange(format!(
                "non-finite objective in Hessian stencil for entry ({}, {})",
                entry.0, entry.1
            )));
        }
        Ok(v)
    };
    let f0 = eval(at, (0, 0))?;
    let mut hess = DMatrix::zeros(dim, dim);
    let mut x = at.to_vec();
    for i in 0..dim {
        x[i] = at[i] + h[i];
        let fp = eval(&x, (i, i))?;
        x[i] = at[i] - h[i];
        let fm = eval(&x, (i, i))?;
        x[i] = at[i];
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in (i + 1)..dim {
            x[i] = at[i] + h[i];
            x[j] = at[j] + h[j];
            let fpp = eval(&x, (i, j))?;
            x[j] = at[j] - h[j];
            let fpm = eval(&x, (i, j))?;
            x[i] = at[i] - h[i];
            let fmm = eval(&x, (i, j))?;
            x[j] = at[j] + h[j];
            let fmp = eval(&x, (i, j))?;
            x[i] = at[i];
            x[j] = at[j];
            let v = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    Ok(hess)
}

/// Wald intervals: estimate +- z_{(1+level)/2} * se. `level = 0` degenerates
/// to the point estimate.
pub fn wald_ci(estimates: &[f64], ses: &[Option<f64>], level: f64) -> Result<Vec<Option<(f64, f64)>>> {
    if !(0.0..1.0).contains(&level) && level != 0.0 {
        return Err(Error::InvalidArgument(format!("CI level {level} not in [0, 1)")));
    }
    let z = if level == 0.0 {
        0.0
    } else {
        Normal::standard().inverse_cdf((1.0 + level) / 2.0)
    };
    Ok(estimates
        .iter()
        .zip(ses)
        .map(|(&est, se)| se.map(|s| (est - z * s, est + z * s)))
        .collect())
}

/// Inference summary for one maximum-likelihood fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub schema_version: u32,
    pub scenario: usize,
    pub param_names: Vec<String>,
    pub estimates: Vec<f64>,
    /// Full parameter set with fixed entries filled in (alpha0 = 0 where not
    /// estimated).
    pub params: ModelParams,
    pub nll: f64,
    /// Standard errors; `None` when the Hessian is singular or non-PD.
    pub ses: Vec<Option<f64>>,
    pub cis: Vec<Option<(f64, f64)>>,
    pub ci_level: f64,
    pub vcov: Option<Vec<Vec<f64>>>,
    pub converged: bool,
    pub hessian_condition: f64,
    pub hessian_positive_definite: bool,
    pub weakly_identified: bool,
    pub fixed_params: Vec<String>,
    pub n_evals: usize,
    pub timing_secs: f64,
    /// Data-only additive constants are dropped from `nll`; compare
    /// differences, not absolute values.
    pub nll_constants_dropped: bool,
}

impl FitResult {
    /// CI for a parameter by name, if estimated and non-singular.
    pub fn ci_for(&self, name: &str) -> Option<(f64, f64)> {
        let i = self.param_names.iter().position(|n| n == name)?;
        self.cis[i]
    }

    pub fn estimate_for(&self, name: &str) -> Option<f64> {
        let i = self.param_names.iter().position(|n| n == name)?;
        Some(self.estimates[i])
    }
}

/// Everything a scenario fit needs. `pattern` is required for scenario 1,
/// `areal` for scenarios 2-5.
pub struct FitInputs<'a> {
    pub scenario: Scenario,
    pub pattern: Option<&'a PointPattern>,
    pub areal: Option<&'a AggregatedData>,
    pub x_fields: &'a [CovariateField],
    pub table: &'a NodeTable,
    pub partition: &'a Partition,
}

impl<'a> FitInputs<'a> {
    fn validate(&self) -> Result<()> {
        match self.scenario.expected_kind() {
            None => {
                if self.pattern.is_none() {
                    return Err(Error::Validation(
                        "scenario 1 requires an exact point pattern".into(),
                    ));
                }
            }
            Some(kind) => {
                let areal = self.areal.ok_or_else(|| {
                    Error::Validation(format!(
                        "scenario {} requires Type {} areal data",
                        self.scenario.index(),
                        kind
                    ))
                })?;
                if areal.kind() != kind {
                    return Err(Error::Validation(format!(
                        "scenario {} requires Type {} data, got Type {}",
                        self.scenario.index(),
                        kind,
                        areal.kind()
                    )));
                }
                areal.validate()?;
                if areal.n_regions() != self.partition.n_regions() {
                    return Err(Error::Validation(format!(
                        "data has {} regions but partition has {}",
                        areal.n_regions(),
                        self.partition.n_regions()
                    )));
                }
            }
        }
        Ok(())
    }
}

fn scenario_objective<'a>(
    inputs: &'a FitInputs<'a>,
    n_z: usize,
    n_x: usize,
) -> impl FnMut(&[f64]) -> f64 + 'a {
    let scenario = inputs.scenario;
    move |theta: &[f64]| -> f64 {
        let params = match scenario.unpack(theta, n_z, n_x) {
            Ok(p) => p,
            Err(_) => return f64::INFINITY,
        };
        let r = match scenario {
            Scenario::S1Logistic => {
                nll_s1_logistic(&params, inputs.pattern.unwrap(), inputs.x_fields)
            }
            Scenario::S2JointCounts => {
                nll_s2_joint_counts(&params, inputs.areal.unwrap(), inputs.table)
            }
            Scenario::S3JointIndicator => {
                nll_s3_joint_indicator(&params, inputs.areal.unwrap(), inputs.table)
            }
            Scenario::S4ConditionalIndicator => {
                nll_s4_conditional_indicator(&params, inputs.areal.unwrap(), inputs.table)
            }
            Scenario::S5BernoulliIndicator => {
                nll_s5_bernoulli_indicator(&params, inputs.areal.unwrap(), inputs.table)
            }
        };
        r.unwrap_or(f64::INFINITY)
    }
}

/// Logistic fit to a pseudo-pattern, used only to seed beta starts.
fn logistic_start(
    pattern: &PointPattern,
    x_fields: &[CovariateField],
    nm: &NmConfig,
) -> Vec<f64> {
    let n_x = x_fields.len();
    let zeros = vec![0.0; 1 + n_x];
    if pattern.is_empty() {
        return zeros;
    }
    let quick = NmConfig { max_iter: 500, restarts: 0, ..*nm };
    let obj = |theta: &[f64]| -> f64 {
        let params = ModelParams::new(0.0, vec![], theta[0], theta[1..].to_vec());
        nll_s1_logistic(&params, pattern, x_fields).unwrap_or(f64::INFINITY)
    };
    match nelder_mead(obj, &zeros, &quick) {
        Ok(r) => r.x,
        Err(_) => zeros,
    }
}

/// Poisson-regression fit of region counts on region-mean z, used only to
/// seed alpha starts. Returns `[alpha0, alpha...]`.
fn poisson_start(
    counts: &[u64],
    mean_z: &[Vec<f64>],
    region_area: f64,
    n_z: usize,
    nm: &NmConfig,
) -> Vec<f64> {
    let zeros = vec![0.0; 1 + n_z];
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return zeros;
    }
    let quick = NmConfig { max_iter: 500, restarts: 0, ..*nm };
    let log_area = region_area.ln();
    let obj = |theta: &[f64]| -> f64 {
        let mut nll = 0.0;
        for (j, &n) in counts.iter().enumerate() {
            let mut eta = theta[0] + log_area;
            for k in 0..n_z {
                eta += theta[1 + k] * mean_z[j][k];
            }
            if eta > 700.0 {
                return f64::INFINITY;
            }
            nll += eta.exp() - n as f64 * eta;
        }
        nll
    };
    match nelder_mead(obj, &zeros, &quick) {
        Ok(r) => r.x,
        Err(_) => zeros,
    }
}

/// Starting free-parameter vector for a scenario, per the cheap-pilot rules:
/// beta from a logistic fit to a naive disaggregation where counts exist,
/// alpha from a Poisson regression of counts on region-mean z.
pub fn starting_values(inputs: &FitInputs<'_>, nm: &NmConfig) -> Result<Vec<f64>> {
    let n_z = inputs.table.n_z();
    let n_x = inputs.x_fields.len();
    let scenario = inputs.scenario;

    let beta_start: Vec<f64> = match (scenario, inputs.areal) {
        (Scenario::S1Logistic, _) => vec![0.0; 1 + n_x],
        (_, Some(AggregatedData::TypeC { n1, n0 })) => {
            // expand counts at subregion centroids
            let mut pts = Vec::new();
            for j in 0..n1.len() {
                let c = inputs.partition.region_centroid(j);
                pts.extend(std::iter::repeat((c, 1u8)).take(n1[j] as usize));
                pts.extend(std::iter::repeat((c, 0u8)).take(n0[j] as usize));
            }
            let pseudo = PointPattern::new(inputs.partition.window(), pts)?;
            logistic_start(&pseudo, inputs.x_fields, nm)
        }
        _ => vec![0.0; 1 + n_x],
    };

    let alpha_start: Vec<f64> = if scenario.uses_alpha() {
        let counts: Option<Vec<u64>> = match inputs.areal {
            Some(AggregatedData::TypeC { n1, n0 }) => {
                Some(n1.iter().zip(n0).map(|(a, b)| a + b).collect())
            }
            Some(AggregatedData::TypeD { n, .. }) => Some(n.clone()),
            _ => None,
        };
        match counts {
            Some(c) => poisson_start(
                &c,
                &inputs.table.region_mean_z(),
                inputs.partition.region_area(),
                n_z,
                nm,
            ),
            None => vec![0.0; 1 + n_z],
        }
    } else {
        vec![0.0; 1 + n_z]
    };

    let params = ModelParams::new(
        alpha_start[0],
        alpha_start[1..].to_vec(),
        beta_start[0],
        beta_start[1..].to_vec(),
    );
    Ok(scenario.pack(&params))
}

/// Run the full pipeline for one scenario: starts, Nelder-Mead, numerical
/// Hessian, and Wald intervals.
pub fn fit_scenario(inputs: &FitInputs<'_>, nm: &NmConfig, ci_level: f64) -> Result<FitResult> {
    inputs.validate()?;
    let start = starting_values(inputs, nm)?;
    fit_scenario_from(inputs, nm, ci_level, &start)
}

/// As [`fit_scenario`], but optimizing from a caller-supplied starting vector
/// (packed in the scenario's free-parameter order).
pub fn fit_scenario_from(
    inputs: &FitInputs<'_>,
    nm: &NmConfig,
    ci_level: f64,
    start: &[f64],
) -> Result<FitResult> {
    inputs.validate()?;
    let t0 = std::time::Instant::now();
    let n_z = inputs.table.n_z();
    let n_x = inputs.x_fields.len();
    let scenario = inputs.scenario;

    if start.len() != scenario.n_free_params(n_z, n_x) {
        return Err(Error::InvalidArgument(format!(
            "starting vector has {} entries; scenario {} expects {}",
            start.len(),
            scenario.index(),
            scenario.n_free_params(n_z, n_x)
        )));
    }
    let mut obj = scenario_objective(inputs, n_z, n_x);
    let nm_res = nelder_mead(&mut obj, start, nm)?;

    let hess = numeric_hessian(&mut obj, &nm_res.x, 1e-4);
    let dim = nm_res.x.len();
    let (vcov, ses, condition, pd) = match hess {
        Ok(h) => {
            let svd = h.clone().svd(false, false);
            let smax = svd.singular_values.max();
            let smin = svd.singular_values.min();
            let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
            let pd = h.clone().cholesky().is_some();
            match h.try_inverse() {
                Some(inv) if pd => {
                    let ses: Vec<Option<f64>> = (0..dim)
                        .map(|i| {
                            let v = inv[(i, i)];
                            (v > 0.0).then(|| v.sqrt())
                        })
                        .collect();
                    let vcov =
                        (0..dim).map(|i| (0..dim).map(|j| inv[(i, j)]).collect()).collect();
                    (Some(vcov), ses, condition, pd)
                }
                _ => (None, vec![None; dim], condition, pd),
            }
        }
        Err(_) => (None, vec![None; dim], f64::INFINITY, false),
    };
    let cis = wald_ci(&nm_res.x, &ses, ci_level)?;

    let params = scenario.unpack(&nm_res.x, n_z, n_x)?;
    Ok(FitResult {
        schema_version: 1,
        scenario: scenario.index(),
        param_names: scenario.param_names(n_z, n_x),
        estimates: nm_res.x,
        params,
        nll: nm_res.fval,
        ses,
        cis,
        ci_level,
        vcov,
        converged: nm_res.converged,
        hessian_condition: condition,
        hessian_positive_definite: pd,
        weakly_identified: condition > WEAK_IDENTIFIABILITY_CONDITION || !pd,
        fixed_params: scenario.fixed_params(),
        n_evals: nm_res.n_evals,
        timing_secs: t0.elapsed().as_secs_f64(),
        nll_constants_dropped: scenario != Scenario::S1Logistic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quadratic_1d() {
        let r = nelder_mead(|x| (x[0] - 3.0).powi(2), &[0.0], &NmConfig::default()).unwrap();
        assert!(r.converged);
        assert_relative_eq!(r.x[0], 3.0, epsilon = 1e-6);
    }

    #[test]
    fn quadratic_4d() {
        let target = [1.0, -2.0, 0.5, 4.0];
        let r = nelder_mead(
            |x| {
                x.iter()
                    .zip(&target)
                    .enumerate()
                    .map(|(i, (xi, ti))| (i as f64 + 1.0) * (xi - ti).powi(2))
                    .sum()
            },
            &[0.0; 4],
            &NmConfig::default(),
        )
        .unwrap();
        assert!(r.converged);
        for (xi, ti) in r.x.iter().zip(&target) {
            assert_relative_eq!(xi, ti, epsilon = 1e-5);
        }
    }

    #[test]
    fn never_worse_than_start() {
        // pathological objective: still must not exceed the start value
        let f = |x: &[f64]| if x[0] > 0.0 { f64::INFINITY } else { -x[0] };
        let r = nelder_mead(f, &[-1.0], &NmConfig { max_iter: 50, ..Default::default() }).unwrap();
        assert!(r.fval <= 1.0);
    }

    #[test]
    fn infinite_start_rejected() {
        assert!(nelder_mead(|_| f64::INFINITY, &[0.0], &NmConfig::default()).is_err());
    }

    #[test]
    fn hessian_of_quadratic() {
        // f = x'Ax/2 with A = [[2, 0.5], [0.5, 3]]
        let f = |x: &[f64]| x[0] * x[0] + 0.5 * x[0] * x[1] + 1.5 * x[1] * x[1];
        let h = numeric_hessian(f, &[0.3, -0.7], 1e-4).unwrap();
        assert_relative_eq!(h[(0, 0)], 2.0, epsilon = 1e-5);
        assert_relative_eq!(h[(0, 1)], 0.5, epsilon = 1e-5);
        assert_relative_eq!(h[(1, 1)], 3.0, epsilon = 1e-5);
        assert_eq!(h[(0, 1)], h[(1, 0)]);
    }

    #[test]
    fn hessian_of_exp() {
        let h = numeric_hessian(|x| x[0].exp(), &[0.0], 1e-4).unwrap();
        assert_relative_eq!(h[(0, 0)], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn wald_ci_analytic() {
        let cis = wald_ci(&[1.0], &[Some(0.5)], 0.95).unwrap();
        let (lo, hi) = cis[0].unwrap();
        assert_relative_eq!(lo, 0.020018, epsilon = 1e-5);
        assert_relative_eq!(hi, 1.979982, epsilon = 1e-5);
    }

    #[test]
    fn wald_ci_degenerate_level() {
        let cis = wald_ci(&[2.5], &[Some(0.5)], 0.0).unwrap();
        assert_eq!(cis[0].unwrap(), (2.5, 2.5));
    }

    #[test]
    fn wald_ci_singular_reported_none() {
        let cis = wald_ci(&[1.0, 2.0], &[Some(0.1), None], 0.95).unwrap();
        assert!(cis[0].is_some());
        assert!(cis[1].is_none());
    }
}
