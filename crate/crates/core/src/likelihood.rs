//! Negative log-likelihoods for the five fitting scenarios. Each is a pure
//! function of the parameters given data and precomputed covariates.
//!
//! Additive data-only constants (log factorials) are dropped throughout, so
//! only *differences* of these values are comparable across implementations.
//! A likelihood of exactly zero yields +inf, which the derivative-free
//! optimizer treats as an ordinary bad point.

use serde::{Deserialize, Serialize};

use crate::aggregate::{AggregatedData, DataKind};
use crate::error::{Error, Result};
use crate::grid::CovariateField;
use crate::integrate::{region_integrals, NodeTable};
use crate::numeric::log_sigmoid;
use crate::process::{class_predictor_at, ModelParams, PointPattern};

/// The five model/data scenarios of the simulation experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// Logistic regression on exact marked locations (Type A).
    S1Logistic,
    /// Joint Poisson model for per-region counts of ones and zeros (Type C).
    S2JointCounts,
    /// Joint model for total count and any-one indicator (Type D).
    S3JointIndicator,
    /// Conditional indicator model given the total count (Type D).
    S4ConditionalIndicator,
    /// Bernoulli indicator-only model (Type E).
    S5BernoulliIndicator,
}

impl Scenario {
    pub fn from_index(i: usize) -> Result<Self> {
        Ok(match i {
            1 => Scenario::S1Logistic,
            2 => Scenario::S2JointCounts,
            3 => Scenario::S3JointIndicator,
            4 => Scenario::S4ConditionalIndicator,
            5 => Scenario::S5BernoulliIndicator,
            _ => return Err(Error::InvalidArgument(format!("scenario index {i} not in 1..=5"))),
        })
    }

    pub fn index(self) -> usize {
        match self {
            Scenario::S1Logistic => 1,
            Scenario::S2JointCounts => 2,
            Scenario::S3JointIndicator => 3,
            Scenario::S4ConditionalIndicator => 4,
            Scenario::S5BernoulliIndicator => 5,
        }
    }

    /// Areal data kind consumed by this scenario; `None` for exact locations.
    pub fn expected_kind(self) -> Option<DataKind> {
        match self {
            Scenario::S1Logistic => None,
            Scenario::S2JointCounts => Some(DataKind::TypeC),
            Scenario::S3JointIndicator | Scenario::S4ConditionalIndicator => Some(DataKind::TypeD),
            Scenario::S5BernoulliIndicator => Some(DataKind::TypeE),
        }
    }

    /// Whether the intensity intercept alpha0 enters the likelihood. In the
    /// conditional scenario it cancels in Mj/Lj and is fixed at zero.
    pub fn estimates_alpha0(self) -> bool {
        matches!(
            self,
            Scenario::S2JointCounts | Scenario::S3JointIndicator | Scenario::S5BernoulliIndicator
        )
    }

    /// Whether any intensity parameters enter the likelihood.
    pub fn uses_alpha(self) -> bool {
        self != Scenario::S1Logistic
    }

    /// Free-parameter vector length for `n_z` intensity and `n_x`
    /// classification covariates.
    pub fn n_free_params(self, n_z: usize, n_x: usize) -> usize {
        match self {
            Scenario::S1Logistic => 1 + n_x,
            Scenario::S4ConditionalIndicator => n_z + 1 + n_x,
            _ => 1 + n_z + 1 + n_x,
        }
    }

    /// Names of the free parameters, in packing order.
    pub fn param_names(self, n_z: usize, n_x: usize) -> Vec<String> {
        let mut names = Vec::new();
        if self.uses_alpha() {
            if self.estimates_alpha0() {
                names.push("alpha0".to_string());
            }
            names.extend((1..=n_z).map(|k| format!("alpha{k}")));
        }
        names.push("beta0".to_string());
        names.extend((1..=n_x).map(|k| format!("beta{k}")));
        names
    }

    /// Parameters held fixed rather than estimated.
    pub fn fixed_params(self) -> Vec<String> {
        match self {
            Scenario::S1Logistic => vec!["alpha0".into(), "alpha".into()],
            Scenario::S4ConditionalIndicator => vec!["alpha0".into()],
            _ => vec![],
        }
    }

    /// Unpack a free-parameter vector into full model parameters. Fixed
    /// parameters are zero.
    pub fn unpack(self, theta: &[f64], n_z: usize, n_x: usize) -> Result<ModelParams> {
        if theta.len() != self.n_free_params(n_z, n_x) {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters for scenario {}, got {}",
                self.n_free_params(n_z, n_x),
                self.index(),
                theta.len()
            )));
        }
        let mut it = theta.iter().copied();
        let (alpha0, alpha) = match self {
            Scenario::S1Logistic => (0.0, vec![0.0; n_z]),
            Scenario::S4ConditionalIndicator => {
                (0.0, (0..n_z).map(|_| it.next().unwrap()).collect())
            }
            _ => {
                let a0 = it.next().unwrap();
                (a0, (0..n_z).map(|_| it.next().unwrap()).collect())
            }
        };
        let beta0 = it.next().unwrap();
        let beta: Vec<f64> = it.collect();
        Ok(ModelParams::new(alpha0, alpha, beta0, beta))
    }

    /// Inverse of [`Scenario::unpack`].
    pub fn pack(self, params: &ModelParams) -> Vec<f64> {
        let mut theta = Vec::new();
        match self {
            Scenario::S1Logistic => {}
            Scenario::S4ConditionalIndicator => theta.extend(&params.alpha),
            _ => {
                theta.push(params.alpha0);
                theta.extend(&params.alpha);
            }
        }
        theta.push(params.beta0);
        theta.extend(&params.beta);
        theta
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "S{}", self.index())
    }
}

/// Scenario 1: Bernoulli log-likelihood of the marks at exact locations.
pub fn nll_s1_logistic(
    params: &ModelParams,
    pattern: &PointPattern,
    x_fields: &[CovariateField],
) -> Result<f64> {
    if pattern.is_empty() {
        return Err(Error::InvalidArgument(
            "logistic likelihood needs at least one point".into(),
        ));
    }
    let mut nll = 0.0;
    for &(u, y) in pattern.points() {
        let eta = class_predictor_at(params, x_fields, u)?;
        // log p for y=1, log(1-p) for y=0, both in log1p form
        nll -= if y == 1 { log_sigmoid(eta) } else { log_sigmoid(-eta) };
    }
    Ok(nll)
}

fn expect_kind(data: &AggregatedData, want: DataKind) -> Result<()> {
    if data.kind() != want {
        return Err(Error::Validation(format!(
            "scenario requires Type {} data, got Type {}",
            want,
            data.kind()
        )));
    }
    Ok(())
}

/// Scenario 2: independent Poisson counts of ones (mean Mj) and zeros
/// (mean Lj - Mj) per subregion.
pub fn nll_s2_joint_counts(
    params: &ModelParams,
    data: &AggregatedData,
    table: &NodeTable,
) -> Result<f64> {
    expect_kind(data, DataKind::TypeC)?;
    let AggregatedData::TypeC { n1, n0 } = data else { unreachable!() };
    let ri = region_integrals(params, table)?;
    let mut nll = 0.0;
    for j in 0..table.n_regions() {
        let m = ri.m[j];
        let mc = ri.m_comp[j];
        nll += m + mc;
        if n1[j] > 0 {
            if m <= 0.0 {
                return Ok(f64::INFINITY);
            }
            nll -= n1[j] as f64 * m.ln();
        }
        if n0[j] > 0 {
            if mc <= 0.0 {
                return Ok(f64::INFINITY);
            }
            nll -= n0[j] as f64 * mc.ln();
        }
    }
    Ok(nll)
}

/// Bernoulli log-likelihood of the indicator given the count: v | n ~
/// Bern(1 - (1 - p_tilde)^n), evaluated from log(1 - p_tilde).
fn indicator_ll(n: u64, v: u8, log_q: f64) -> f64 {
    let n_log_q = n as f64 * log_q;
    if v == 1 {
        // log(1 - q^n)
        let one_minus = -n_log_q.exp_m1();
        if one_minus <= 0.0 {
            f64::NEG_INFINITY
        } else {
            one_minus.ln()
        }
    } else {
        n_log_q
    }
}

/// Scenario 3: joint model, Poisson total count times conditional indicator.
pub fn nll_s3_joint_indicator(
    params: &ModelParams,
    data: &AggregatedData,
    table: &NodeTable,
) -> Result<f64> {
    expect_kind(data, DataKind::TypeD)?;
    let AggregatedData::TypeD { n, v } = data else { unreachable!() };
    data.validate()?;
    let ri = region_integrals(params, table)?;
    let mut nll = 0.0;
    for j in 0..table.n_regions() {
        let l = ri.l[j];
        nll += l;
        if n[j] > 0 {
            if l <= 0.0 {
                return Ok(f64::INFINITY);
            }
            nll -= n[j] as f64 * l.ln();
            nll -= indicator_ll(n[j], v[j], ri.log_one_minus_p_tilde(j));
        }
        // n=0 regions: the indicator is deterministically 0, contributing
        // log 1 = 0 (v=1 with n=0 is rejected at validation)
    }
    if nll.is_nan() {
        return Ok(f64::INFINITY);
    }
    Ok(nll)
}

/// Scenario 4: conditional indicator model only. alpha0 cancels in Mj/Lj and
/// is not estimated; regions with n=0 contribute nothing.
pub fn nll_s4_conditional_indicator(
    params: &ModelParams,
    data: &AggregatedData,
    table: &NodeTable,
) -> Result<f64> {
    expect_kind(data, DataKind::TypeD)?;
    let AggregatedData::TypeD { n, v } = data else { unreachable!() };
    data.validate()?;
    let ri = region_integrals(params, table)?;
    let mut nll = 0.0;
    for j in 0..table.n_regions() {
        if n[j] > 0 {
            nll -= indicator_ll(n[j], v[j], ri.log_one_minus_p_tilde(j));
        }
    }
    if nll.is_nan() {
        return Ok(f64::INFINITY);
    }
    Ok(nll)
}

/// Scenario 5: indicator-only model, v ~ Bern(1 - exp(-Mj)).
pub fn nll_s5_bernoulli_indicator(
    params: &ModelParams,
    data: &AggregatedData,
    table: &NodeTable,
) -> Result<f64> {
    expect_kind(data, DataKind::TypeE)?;
    let AggregatedData::TypeE { v } = data else { unreachable!() };
    let ri = region_integrals(params, table)?;
    let mut nll = 0.0;
    for j in 0..table.n_regions() {
        let m = ri.m[j];
        if v[j] == 1 {
            // -log(1 - e^-M) via expm1
            let one_minus = -(-m).exp_m1();
            if one_minus <= 0.0 {
                return Ok(f64::INFINITY);
            }
            nll -= one_minus.ln();
        } else {
            nll += m;
        }
    }
    Ok(nll)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_partition, Point, StudyWindow};
    use crate::integrate::precompute_nodes;
    use approx::assert_relative_eq;

    fn unit() -> StudyWindow {
        StudyWindow::unit_square()
    }

    fn const_setup(
        nx: usize,
        ny: usize,
    ) -> (crate::grid::Partition, [CovariateField; 1], [CovariateField; 1]) {
        let part = build_partition(unit(), nx, ny, 1).unwrap();
        let z = [CovariateField::constant(unit(), 0.0)];
        let x = [CovariateField::constant(unit(), 0.0)];
        (part, z, x)
    }

    #[test]
    fn s1_single_point_half_prob() {
        let x = [CovariateField::constant(unit(), 0.0)];
        let pat = PointPattern::new(unit(), vec![(Point::new(0.5, 0.5), 1)]).unwrap();
        let params = ModelParams::new(0.0, vec![0.0], 0.0, vec![0.0]);
        let nll = nll_s1_logistic(&params, &pat, &x).unwrap();
        assert_relative_eq!(nll, 0.5f64.ln().abs(), max_relative = 1e-12);
    }

    #[test]
    fn s1_saturates_monotonically() {
        let x = [CovariateField::constant(unit(), 0.0)];
        let pat = PointPattern::new(
            unit(),
            vec![(Point::new(0.2, 0.2), 1), (Point::new(0.8, 0.8), 1)],
        )
        .unwrap();
        let mut prev = f64::INFINITY;
        for b0 in [0.0, 2.0, 5.0, 10.0, 40.0] {
            let params = ModelParams::new(0.0, vec![0.0], b0, vec![0.0]);
            let nll = nll_s1_logistic(&params, &pat, &x).unwrap();
            assert!(nll < prev);
            prev = nll;
        }
        assert!(prev < 1e-10);
    }

    #[test]
    fn s1_empty_pattern_rejected() {
        let x = [CovariateField::constant(unit(), 0.0)];
        let pat = PointPattern::new(unit(), vec![]).unwrap();
        let params = ModelParams::new(0.0, vec![0.0], 0.0, vec![0.0]);
        assert!(nll_s1_logistic(&params, &pat, &x).is_err());
    }

    #[test]
    fn s2_single_region_analytic() {
        // lambda = 1, p = 0.5, |A| = 1, (n1, n0) = (1, 1):
        // -[log 0.5 - 0.5 + log 0.5 - 0.5] = 2.386294
        let (part, z, x) = const_setup(1, 1);
        let table = precompute_nodes(&part, &z, &x).unwrap();
        let data = AggregatedData::TypeC { n1: vec![1], n0: vec![1] };
        let params = ModelParams::new(0.0, vec![0.0], 0.0, vec![0.0]);
        let nll = nll_s2_joint_counts(&params, &data, &table).unwrap();
        assert_relative_eq!(nll, 1.0 - 2.0 * 0.5f64.ln(), max_relative = 1e-12);
        assert_relative_eq!(nll, 2.386294, epsilon = 1e-6);
    }

    #[test]
    fn s2_empty_data_is_total_intensity() {
        let (part, z, x) = const_setup(2, 2);
        let table = precompute_nodes(&part, &z, &x).unwrap();
        let data = AggregatedData::TypeC { n1: vec![0; 4], n0: vec![0; 4] };
        let params = ModelParams::new(1.3, vec![0.0], -0.7, vec![0.0]);
        let nll = nll_s2_joint_counts(&params, &data, &table).unwrap();
        assert_relative_eq!(nll, (1.3f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn s2_zero_mean_with_positive_count_is_infinite() {
        let (part, z, x) = const_setup(1, 1);
        let table = precompute_nodes(&part, &z, &x).unwrap();
        let data = AggregatedData::TypeC { n1: vec![1], n0: vec![0] };
        // beta0 = -800 underflows p to exactly 0, so Mj = 0
        let params = ModelParams::new(0.0, vec![0.0], -800.0, vec![0.0]);
        let nll = nll_s2_joint_counts(&params, &data, &table).unwrap();
        assert!(nll.is_infinite() && nll > 0.0);
    }

    #[test]
    fn s3_single_region_analytic() {
        // lambda = 1, |A| = 1, p = 0.5, (n, v) = (2, 1):
        // -[2 log 1 - 1 + log(1 - 0.25)] = 1.287682
        let (part, z, x) = const_setup(1, 1);
        let table = precompute_nodes(&part, &z, &x).unwrap();
        let data = AggregatedData::TypeD { n: vec![2], v: vec![1] };
        let params = ModelParams::new(0.0, vec![0.0], 0.0, vec![0.0]);
        let nll = nll_s3_joint_indicator(&params, &data, &table).unwrap();
        assert_relative_eq!(nll, 1.0 - 0.75f64.ln(), max_relative = 1e-12);
        assert_relative_eq!(nll, 1.287682, epsilon = 1e-6);
    }

    #[test]
    fn s3_zero_indicator_term() {
        // (n, v) = (5, 0), p_tilde = 0.5: Bernoulli part -log(0.5^5)
        let (part, z, x) = const_setup(1, 1);
        let table = precompute_nodes(&part, &z, &x).unwrap();
        let data = AggregatedData::TypeD { n: vec![5], v: vec![0] };
        let params = ModelParams::new(0.0, vec![0.0], 0.0, vec![0.0]);
        let nll = nll_s3_joint_indicator(&params, &data, &table).unwrap();
        let poisson_part = 1.0 - 5.0 * 1.0f64.ln();
        let bern_part = -5.0 * 0.5f64.ln();
        assert_relative_eq!(nll, poisson_part + bern_part, max_relative = 1e-12);
        assert_relative_eq!(bern_part, 3.465736, epsilon = 1e-6);
    }

    #[test]
    fn s4_analytic_cases() {
        let (part, z, x) = const_setup(1, 1);
        let table = precompute_nodes(&part, &z, &x).unwrap();
        let params = ModelParams::new(0.0, vec![0.0], 0.0, vec![0.0]);

        let data = AggregatedData::TypeD { n: vec![2], v: vec![1] };
        let nll = nll_s4_conditional_indicator(&params, &data, &table).unwrap();
        assert_relative_eq!(nll, -0.75f64.ln(), max_relative = 1e-12);
        assert_relative_eq!(nll, 0.287682, epsilon = 1e-6);

        // v=0 contribution is linear in n: -n log(1 - p_tilde)
        for k in [1u64, 3, 7] {
            let data = AggregatedData::TypeD { n: vec![k], v: vec![0] };
            let nll = nll_s4_conditional_indicator(&params, &data, &table).unwrap();
            assert_relative_eq!(nll, -(k as f64) * 0.5f64.ln(), max_relative = 1e-12);
        }
    }

    #[test]
    fn s4_invariant_to_alpha0() {
        let part = build_partition(unit(), 2, 2, 2).unwrap();
        let z = [crate::grid::sample_gp_field(unit(), 4, 4, &Default::default()).unwrap()];
        let x = [crate::grid::sample_gp_field(
            unit(),
            4,
            4,
            &crate::grid::GpConfig { seed: 9, ..Default::default() },
        )
        .unwrap()];
        let table = precompute_nodes(&part, &z, &x).unwrap();
        let data = AggregatedData::TypeD { n: vec![3, 0, 2, 1], v: vec![1, 0, 0, 1] };
        let a = ModelParams::new(0.0, vec![0.8], 0.2, vec![1.1]);
        let b = ModelParams::new(5.0, vec![0.8], 0.2, vec![1.1]);
        let na = nll_s4_conditional_indicator(&a, &data, &table).unwrap();
        let nb = nll_s4_conditional_indicator(&b, &data, &table).unwrap();
        assert_relative_eq!(na, nb, max_relative = 1e-10);
    }

    #[test]
    fn s4_equals_s3_minus_poisson_part_constant_fields() {
        // decomposition oracle on constant fields, checked on a grid of
        // (beta0, beta1) values
        let part = build_partition(unit(), 2, 2, 1).unwrap();
        let z = [CovariateField::constant(unit(), 0.3)];
        let x = [CovariateField::constant(unit(), -0.4)];
        let table = precompute_nodes(&part, &z, &x).unwrap();
        let data = AggregatedData::TypeD { n: vec![3, 0, 2, 6], v: vec![1, 0, 0, 1] };
        let AggregatedData::TypeD { n, .. } = &data else { unreachable!() };
        for beta0 in [-1.0, 0.0, 0.8] {
            for beta1 in [-0.5, 0.4, 1.2] {
                let params = ModelParams::new(0.4, vec![0.9], beta0, vec![beta1]);
                let s3 = nll_s3_joint_indicator(&params, &data, &table).unwrap();
                let s4 = nll_s4_conditional_indicator(&params, &data, &table).unwrap();
                let ri = region_integrals(&params, &table).unwrap();
                let poisson: f64 = (0..4)
                    .map(|j| ri.l[j] - n[j] as f64 * ri.l[j].ln())
                    .sum();
                assert_relative_eq!(s3 - poisson, s4, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn s5_analytic_cases() {
        let (part, z, x) = const_setup(1, 1);
        let table = precompute_nodes(&part, &z, &x).unwrap();
        // M = 0.5: alpha0 = log 1, p = 0.5 over unit area
        let params = ModelParams::new(0.0, vec![0.0], 0.0, vec![0.0]);
        let data = AggregatedData::TypeE { v: vec![1] };
        let nll = nll_s5_bernoulli_indicator(&params, &data, &table).unwrap();
        assert_relative_eq!(nll, -(-(-0.5f64).exp_m1()).ln(), max_relative = 1e-12);
        assert_relative_eq!(nll, 0.932752, epsilon = 1e-6);

        // v=0 contributes exactly M
        let data0 = AggregatedData::TypeE { v: vec![0] };
        let nll0 = nll_s5_bernoulli_indicator(&params, &data0, &table).unwrap();
        assert_relative_eq!(nll0, 0.5, max_relative = 1e-12);
    }

    #[test]
    fn s5_saturation_floor() {
        // all v=1 and beta0 -> +inf: nll decreases toward sum of
        // -log(1 - e^-Lj), the weak-identifiability floor
        let (part, z, x) = const_setup(2, 2);
        let table = precompute_nodes(&part, &z, &x).unwrap();
        let data = AggregatedData::TypeE { v: vec![1; 4] };
        let lam0 = 1.5f64;
        let lj = lam0.exp() / 4.0;
        let floor = 4.0 * -(-(-lj).exp_m1()).ln();
        let mut prev = f64::INFINITY;
        for b0 in [0.0, 2.0, 6.0, 20.0] {
            let params = ModelParams::new(lam0, vec![0.0], b0, vec![0.0]);
            let nll = nll_s5_bernoulli_indicator(&params, &data, &table).unwrap();
            assert!(nll < prev);
            prev = nll;
        }
        assert_relative_eq!(prev, floor, max_relative = 1e-6);
    }

    #[test]
    fn scenario_packing_roundtrip() {
        let params = ModelParams::new(0.3, vec![1.0, -2.0], -0.5, vec![0.7]);
        for i in 1..=5 {
            let sc = Scenario::from_index(i).unwrap();
            let theta = sc.pack(&params);
            assert_eq!(theta.len(), sc.n_free_params(2, 1));
            let back = sc.unpack(&theta, 2, 1).unwrap();
            assert_eq!(back.beta0, params.beta0);
            assert_eq!(back.beta, params.beta);
            if sc.uses_alpha() {
                assert_eq!(back.alpha, params.alpha);
            }
            if sc.estimates_alpha0() {
                assert_eq!(back.alpha0, params.alpha0);
            } else {
                assert_eq!(back.alpha0, 0.0);
            }
            assert_eq!(sc.param_names(2, 1).len(), theta.len());
        }
    }

    #[test]
    fn kind_mismatch_rejected() {
        let (part, z, x) = const_setup(1, 1);
        let table = precompute_nodes(&part, &z, &x).unwrap();
        let params = ModelParams::new(0.0, vec![0.0], 0.0, vec![0.0]);
        let e = AggregatedData::TypeE { v: vec![1] };
        assert!(nll_s2_joint_counts(&params, &e, &table).is_err());
        assert!(nll_s3_joint_indicator(&params, &e, &table).is_err());
    }
}
