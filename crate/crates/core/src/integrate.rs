//! Change-of-support integrals over subregions: Lj = integral of lambda over
//! A_j and Mj = integral of lambda * p over A_j, by midpoint quadrature.

use crate::error::{Error, Result};
use crate::grid::{CovariateField, Partition};
use crate::numeric::{sigmoid, EXP_CLAMP};
use crate::process::ModelParams;

/// Covariate values tabulated once per fit at every quadrature node. The
/// dominant cost of a likelihood evaluation is the exp/logit sweep, so raster
/// lookups are hoisted out of the optimizer loop.
#[derive(Debug, Clone)]
pub struct NodeTable {
    n_regions: usize,
    nodes_per_region: usize,
    weights: Vec<f64>,
    /// Row-major `[node][covariate]` intensity covariates.
    z_vals: Vec<f64>,
    n_z: usize,
    /// Row-major `[node][covariate]` classification covariates.
    x_vals: Vec<f64>,
    n_x: usize,
}

impl NodeTable {
    pub fn n_regions(&self) -> usize {
        self.n_regions
    }

    pub fn n_z(&self) -> usize {
        self.n_z
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    /// Mean of each intensity covariate per subregion (used for start values).
    pub fn region_mean_z(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n_z]; self.n_regions];
        for j in 0..self.n_regions {
            let base = j * self.nodes_per_region;
            for t in 0..self.nodes_per_region {
                for k in 0..self.n_z {
                    out[j][k] += self.z_vals[(base + t) * self.n_z + k];
                }
            }
            for k in 0..self.n_z {
                out[j][k] /= self.nodes_per_region as f64;
            }
        }
        out
    }
}

/// Tabulate covariates at every quadrature node of the partition.
pub fn precompute_nodes(
    partition: &Partition,
    z_fields: &[CovariateField],
    x_fields: &[CovariateField],
) -> Result<NodeTable> {
    let nodes = partition.nodes();
    let n_z = z_fields.len();
    let n_x = x_fields.len();
    let mut weights = Vec::with_capacity(nodes.len());
    let mut z_vals = Vec::with_capacity(nodes.len() * n_z);
    let mut x_vals = Vec::with_capacity(nodes.len() * n_x);
    for node in nodes {
        weights.push(node.weight);
        for f in z_fields {
            z_vals.push(f.value_at(node.point)?);
        }
        for f in x_fields {
            x_vals.push(f.value_at(node.point)?);
        }
    }
    Ok(NodeTable {
        n_regions: partition.n_regions(),
        nodes_per_region: partition.quad_per_cell() * partition.quad_per_cell(),
        weights,
        z_vals,
        n_z,
        x_vals,
        n_x,
    })
}

/// Per-subregion integrals. `m_comp[j]` is the complementary integral of
/// lambda * (1 - p), accumulated directly so that `l - m` never cancels.
#[derive(Debug, Clone)]
pub struct RegionIntegrals {
    pub l: Vec<f64>,
    pub m: Vec<f64>,
    pub m_comp: Vec<f64>,
    /// Nodes whose intensity linear predictor hit the exp clamp.
    pub clamped_nodes: usize,
}

impl RegionIntegrals {
    /// Subregion-level mark probability Mj / Lj.
    pub fn p_tilde(&self, j: usize) -> f64 {
        self.m[j] / self.l[j]
    }

    /// log(1 - p_tilde_j), computed from the complementary integral.
    pub fn log_one_minus_p_tilde(&self, j: usize) -> f64 {
        self.m_comp[j].ln() - self.l[j].ln()
    }

    pub fn total_l(&self) -> f64 {
        self.l.iter().sum()
    }
}

/// Evaluate Lj and Mj for all subregions by midpoint quadrature over a
/// precomputed node table. Summation is sequential in node-index order, so
/// results are bit-reproducible.
pub fn region_integrals(params: &ModelParams, table: &NodeTable) -> Result<RegionIntegrals> {
    if params.alpha.len() != table.n_z {
        return Err(Error::InvalidArgument(format!(
            "alpha has {} coefficients but node table holds {} intensity covariates",
            params.alpha.len(),
            table.n_z
        )));
    }
    if params.beta.len() != table.n_x {
        return Err(Error::InvalidArgument(format!(
            "beta has {} coefficients but node table holds {} classification covariates",
            params.beta.len(),
            table.n_x
        )));
    }
    let mut l = vec![0.0; table.n_regions];
    let mut m = vec![0.0; table.n_regions];
    let mut m_comp = vec![0.0; table.n_regions];
    let mut clamped = 0usize;
    let per = table.nodes_per_region;
    for (i, &w) in table.weights.iter().enumerate() {
        let mut eta_z = params.alpha0;
        for (k, a) in params.alpha.iter().enumerate() {
            eta_z += a * table.z_vals[i * table.n_z + k];
        }
        if !eta_z.is_finite() {
            return Err(Error::NumericRange(format!(
                "non-finite intensity predictor at quadrature node {i}"
            )));
        }
        if eta_z.abs() >= EXP_CLAMP {
            clamped += 1;
            eta_z = eta_z.clamp(-EXP_CLAMP, EXP_CLAMP);
        }
        let lam = eta_z.exp();
        let mut eta_x = params.beta0;
        for (k, b) in params.beta.iter().enumerate() {
            eta_x += b * table.x_vals[i * table.n_x + k];
        }
        if !eta_x.is_finite() {
            return Err(Error::NumericRange(format!(
                "non-finite classification predictor at quadrature node {i}"
            )));
        }
        let p = sigmoid(eta_x);
        let q = sigmoid(-eta_x);
        let j = i / per;
        l[j] += w * lam;
        m[j] += w * lam * p;
        m_comp[j] += w * lam * q;
    }
    Ok(RegionIntegrals { l, m, m_comp, clamped_nodes: clamped })
}

/// Convenience wrapper: tabulate nodes and integrate in one call.
pub fn region_integrals_from_fields(
    params: &ModelParams,
    z_fields: &[CovariateField],
    x_fields: &[CovariateField],
    partition: &Partition,
) -> Result<RegionIntegrals> {
    let table = precompute_nodes(partition, z_fields, x_fields)?;
    region_integrals(params, &table)
}
