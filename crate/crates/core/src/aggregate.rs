//! Aggregation of exact marked point patterns into the areal data hierarchy
//! (Types C, D, E) and degradation between types.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Partition;
use crate::process::PointPattern;

/// Aggregation level of areal data, ordered from richest to poorest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DataKind {
    /// Per-subregion counts of ones and zeros.
    TypeC,
    /// Per-subregion total count plus any-one indicator.
    TypeD,
    /// Per-subregion any-one indicator only.
    TypeE,
}

impl DataKind {
    fn rank(self) -> u8 {
        match self {
            DataKind::TypeC => 0,
            DataKind::TypeD => 1,
            DataKind::TypeE => 2,
        }
    }
}

impl std::fmt::Display for DataKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DataKind::TypeC => write!(f, "C"),
            DataKind::TypeD => write!(f, "D"),
            DataKind::TypeE => write!(f, "E"),
        }
    }
}

/// Areal data aligned to partition region order. Empty subregions are kept.
#[derive(Debug, Clone, PartialEq)]
pub enum AggregatedData {
    TypeC { n1: Vec<u64>, n0: Vec<u64> },
    TypeD { n: Vec<u64>, v: Vec<u8> },
    TypeE { v: Vec<u8> },
}

impl AggregatedData {
    pub fn kind(&self) -> DataKind {
        match self {
            AggregatedData::TypeC { .. } => DataKind::TypeC,
            AggregatedData::TypeD { .. } => DataKind::TypeD,
            AggregatedData::TypeE { .. } => DataKind::TypeE,
        }
    }

    pub fn n_regions(&self) -> usize {
        match self {
            AggregatedData::TypeC { n1, .. } => n1.len(),
            AggregatedData::TypeD { n, .. } => n.len(),
            AggregatedData::TypeE { v } => v.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AggregatedData::TypeC { n1, n0 } => {
                if n1.len() != n0.len() {
                    return Err(Error::Validation("n1 and n0 lengths differ".into()));
                }
            }
            AggregatedData::TypeD { n, v } => {
                if n.len() != v.len() {
                    return Err(Error::Validation("n and v lengths differ".into()));
                }
                for (j, (&nj, &vj)) in n.iter().zip(v).enumerate() {
                    if vj > 1 {
                        return Err(Error::Validation(format!(
                            "region {j}: indicator {vj} is not binary"
                        )));
                    }
                    if vj == 1 && nj == 0 {
                        return Err(Error::Validation(format!(
                            "region {j}: v=1 but n=0"
                        )));
                    }
                }
            }
            AggregatedData::TypeE { v } => {
                if let Some((j, &vj)) = v.iter().enumerate().find(|(_, &vj)| vj > 1) {
                    return Err(Error::Validation(format!(
                        "region {j}: indicator {vj} is not binary"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Count marks per subregion: Type C data.
pub fn aggregate_to_type_c(pattern: &PointPattern, partition: &Partition) -> Result<AggregatedData> {
    let j = partition.n_regions();
    let mut n1 = vec![0u64; j];
    let mut n0 = vec![0u64; j];
    for &(u, y) in pattern.points() {
        let r = partition.region_of(u)?;
        if y == 1 {
            n1[r] += 1;
        } else {
            n0[r] += 1;
        }
    }
    Ok(AggregatedData::TypeC { n1, n0 })
}

/// Degrade data to a strictly more aggregated kind (C -> D, C -> E, D -> E).
/// Requesting the same kind is an identity; upgrades are rejected.
pub fn degrade(data: &AggregatedData, target: DataKind) -> Result<AggregatedData> {
    if target.rank() < data.kind().rank() {
        return Err(Error::InvalidArgument(format!(
            "cannot upgrade Type {} data to Type {}",
            data.kind(),
            target
        )));
    }
    Ok(match (data, target) {
        (d, t) if d.kind() == t => d.clone(),
        (AggregatedData::TypeC { n1, n0 }, DataKind::TypeD) => AggregatedData::TypeD {
            n: n1.iter().zip(n0).map(|(a, b)| a + b).collect(),
            v: n1.iter().map(|&a| u8::from(a > 0)).collect(),
        },
        (AggregatedData::TypeC { n1, .. }, DataKind::TypeE) => {
            AggregatedData::TypeE { v: n1.iter().map(|&a| u8::from(a > 0)).collect() }
        }
        (AggregatedData::TypeD { v, .. }, DataKind::TypeE) => {
            AggregatedData::TypeE { v: v.clone() }
        }
        _ => unreachable!("rank check covers remaining combinations"),
    })
}

impl AggregatedData {
    /// Write as CSV; the header encodes the kind
    /// (`region_id,n1,n0` / `region_id,n,v` / `region_id,v`).
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        match self {
            AggregatedData::TypeC { n1, n0 } => {
                w.write_record(["region_id", "n1", "n0"])?;
                for (j, (a, b)) in n1.iter().zip(n0).enumerate() {
                    w.write_record(&[format!("{j}"), format!("{a}"), format!("{b}")])?;
                }
            }
            AggregatedData::TypeD { n, v } => {
                w.write_record(["region_id", "n", "v"])?;
                for (j, (a, b)) in n.iter().zip(v).enumerate() {
                    w.write_record(&[format!("{j}"), format!("{a}"), format!("{b}")])?;
                }
            }
            AggregatedData::TypeE { v } => {
                w.write_record(["region_id", "v"])?;
                for (j, a) in v.iter().enumerate() {
                    w.write_record(&[format!("{j}"), format!("{a}")])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Read areal data, inferring the kind from the CSV header. Rows must be
    /// sorted by `region_id` starting at 0 (partition order).
    pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let headers: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let kind = match headers.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
            ["region_id", "n1", "n0"] => DataKind::TypeC,
            ["region_id", "n", "v"] => DataKind::TypeD,
            ["region_id", "v"] => DataKind::TypeE,
            h => {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("unrecognized areal data header `{}`", h.join(",")),
                })
            }
        };
        let mut cols: Vec<Vec<u64>> = vec![Vec::new(); headers.len()];
        for (i, rec) in r.records().enumerate() {
            let line = i + 2;
            let rec = rec?;
            for (k, col) in cols.iter_mut().enumerate() {
                let raw = rec.get(k).ok_or(Error::Parse { line, msg: "missing field".into() })?;
                let val: u64 = raw.trim().parse().map_err(|e: std::num::ParseIntError| {
                    Error::Parse { line, msg: format!("`{raw}`: {e}") }
                })?;
                col.push(val);
            }
            if cols[0][i] != i as u64 {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected region_id {i}, got {}", cols[0][i]),
                });
            }
        }
        let as_u8 = |c: &[u64]| c.iter().map(|&v| v as u8).collect::<Vec<u8>>();
        let data = match kind {
            DataKind::TypeC => AggregatedData::TypeC { n1: cols[1].clone(), n0: cols[2].clone() },
            DataKind::TypeD => AggregatedData::TypeD { n: cols[1].clone(), v: as_u8(&cols[2]) },
            DataKind::TypeE => AggregatedData::TypeE { v: as_u8(&cols[1]) },
        };
        data.validate()?;
        Ok(data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_partition, Point, StudyWindow};

    fn part2x2() -> Partition {
        build_partition(StudyWindow::unit_square(), 2, 2, 1).unwrap()
    }

    #[test]
    fn empty_pattern_all_zeros() {
        let pat = PointPattern::new(StudyWindow::unit_square(), vec![]).unwrap();
        let agg = aggregate_to_type_c(&pat, &part2x2()).unwrap();
        assert_eq!(
            agg,
            AggregatedData::TypeC { n1: vec![0; 4], n0: vec![0; 4] }
        );
    }

    #[test]
    fn counts_land_in_one_cell() {
        let pat = PointPattern::new(
            StudyWindow::unit_square(),
            vec![
                (Point::new(0.1, 0.1), 1),
                (Point::new(0.2, 0.2), 0),
                (Point::new(0.15, 0.05), 1),
            ],
        )
        .unwrap();
        let agg = aggregate_to_type_c(&pat, &part2x2()).unwrap();
        assert_eq!(
            agg,
            AggregatedData::TypeC { n1: vec![2, 0, 0, 0], n0: vec![1, 0, 0, 0] }
        );
    }

    #[test]
    fn degrade_chain() {
        let c = AggregatedData::TypeC { n1: vec![2, 0, 0], n0: vec![1, 5, 0] };
        let d = degrade(&c, DataKind::TypeD).unwrap();
        assert_eq!(d, AggregatedData::TypeD { n: vec![3, 5, 0], v: vec![1, 0, 0] });
        let e = degrade(&c, DataKind::TypeE).unwrap();
        assert_eq!(e, AggregatedData::TypeE { v: vec![1, 0, 0] });
        assert_eq!(degrade(&d, DataKind::TypeE).unwrap(), e);
        // idempotent at the target
        assert_eq!(degrade(&e, DataKind::TypeE).unwrap(), e);
    }

    #[test]
    fn upgrade_rejected() {
        let e = AggregatedData::TypeE { v: vec![0, 1] };
        assert!(degrade(&e, DataKind::TypeD).is_err());
        assert!(degrade(&e, DataKind::TypeC).is_err());
        let d = AggregatedData::TypeD { n: vec![1], v: vec![1] };
        assert!(degrade(&d, DataKind::TypeC).is_err());
    }

    #[test]
    fn type_d_validation_catches_inconsistent_indicator() {
        let d = AggregatedData::TypeD { n: vec![0], v: vec![1] };
        assert!(d.validate().is_err());
    }

    #[test]
    fn csv_roundtrip_infers_kind() {
        let dir = tempfile::tempdir().unwrap();
        for data in [
            AggregatedData::TypeC { n1: vec![2, 0], n0: vec![1, 3] },
            AggregatedData::TypeD { n: vec![3, 3], v: vec![1, 0] },
            AggregatedData::TypeE { v: vec![1, 0] },
        ] {
            let path = dir.path().join(format!("type_{}.csv", data.kind()));
            data.write_csv(&path).unwrap();
            let back = AggregatedData::read_csv(&path).unwrap();
            assert_eq!(back, data);
        }
    }
}
