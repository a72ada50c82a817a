//! Quantitative evaluation of masks and velocity fields, with CSV export.

pub mod divergence;
pub mod overlap;
pub mod surface;
pub mod velocity;

use std::path::Path;

use serde::Serialize;

use crate::error::{Result, VastError};

pub use divergence::{divergence_residuals, DivergenceReport, Histogram};
pub use overlap::{overlap_scores, Confusion, OverlapScores};
pub use surface::{surface_distance, symmetric_surface_distance, KdTree, SurfaceDistanceReport};
pub use velocity::{cosine_similarity, rmse, ssim, velocity_agreement, VelocityAgreement};

/// Writes serialisable rows as CSV with a header line.
pub fn write_rows<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| VastError::io(path, e))
}

#[derive(Serialize)]
struct DistanceRow {
    point: usize,
    distance: f64,
}

pub fn write_distances(report: &SurfaceDistanceReport, path: &Path) -> Result<()> {
    let rows: Vec<DistanceRow> =
        report.distances.iter().enumerate().map(|(point, &distance)| DistanceRow { point, distance }).collect();
    write_rows(&rows, path)
}

#[derive(Serialize)]
struct BinRow {
    lower: f64,
    upper: f64,
    count: usize,
}

pub fn write_histogram(h: &Histogram, path: &Path) -> Result<()> {
    let rows: Vec<BinRow> =
        h.counts.iter().enumerate().map(|(b, &count)| BinRow { lower: h.edges[b], upper: h.edges[b + 1], count }).collect();
    write_rows(&rows, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let h = Histogram::new(&[0.0, 0.5, 1.0, 1.0], 2);
        assert_eq!(h.counts, vec![1, 3]);
        let p = dir.path().join("h.csv");
        write_histogram(&h, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "lower,upper,count\n0.0,0.5,1\n0.5,1.0,3\n");
    }
}
