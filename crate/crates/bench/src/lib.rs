//! Shared fixtures for the criterion benches.

use cosbin_core::{
    aggregate_to_type_c, build_partition, degrade, precompute_nodes, sample_gp_field,
    simulate_bippp, AggregatedData, CovariateField, DataKind, GpConfig, ModelParams, NodeTable,
    Partition, PointPattern, StudyWindow,
};

/// A simulated 20x20 dataset at roughly the small-sample scale.
pub struct Fixture {
    pub partition: Partition,
    pub z: Vec<CovariateField>,
    pub x: Vec<CovariateField>,
    pub table: NodeTable,
    pub params: ModelParams,
    pub pattern: PointPattern,
    pub type_c: AggregatedData,
    pub type_d: AggregatedData,
    pub type_e: AggregatedData,
}

pub fn small_fixture(seed: u64) -> Fixture {
    let window = StudyWindow::unit_square();
    let partition = build_partition(window, 20, 20, 2).unwrap();
    let z = vec![sample_gp_field(window, 40, 40, &GpConfig { seed, ..Default::default() }).unwrap()];
    let x = vec![
        sample_gp_field(window, 40, 40, &GpConfig { seed: seed + 1, ..Default::default() }).unwrap(),
    ];
    let table = precompute_nodes(&partition, &z, &x).unwrap();
    let params = ModelParams::new((4000.0f64).ln(), vec![1.0], -3.5, vec![1.0]);
    let pattern = simulate_bippp(&params, &z, &x, &partition, seed).unwrap();
    let type_c = aggregate_to_type_c(&pattern, &partition).unwrap();
    let type_d = degrade(&type_c, DataKind::TypeD).unwrap();
    let type_e = degrade(&type_c, DataKind::TypeE).unwrap();
    Fixture { partition, z, x, table, params, pattern, type_c, type_d, type_e }
}
