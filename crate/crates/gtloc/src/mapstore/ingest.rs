//! Dataset ingestion: a directory of PGM images plus a poses CSV.
//!
//! The CSV schema is `filename,x,y,theta` (theta in radians) with a required
//! header line. Image paths are resolved relative to the CSV's directory,
//! which makes the format usable as an adapter for external datasets.

use std::path::Path;

use crate::features::{DetectorConfig, TripletLayout};
use crate::geometry::Pose2D;
use crate::image::Image;
use crate::scalar::{num, Scalar};

use super::{MapError, TextureMap};

#[derive(Debug, Clone, PartialEq)]
pub struct PoseEntry<S = f64> {
    pub filename: String,
    pub pose: Pose2D<S>,
}

/// Parses a poses CSV, validating the header.
pub fn read_poses_csv<S: Scalar>(path: impl AsRef<Path>) -> Result<Vec<PoseEntry<S>>, MapError> {
    let mut reader = csv::Reader::from_path(path.as_ref())
        .map_err(|e| MapError::Ingest(format!("open poses csv: {e}")))?;

    let headers = reader
        .headers()
        .map_err(|e| MapError::Ingest(format!("read header: {e}")))?;
    let expected = ["filename", "x", "y", "theta"];
    let got: Vec<String> = headers.iter().map(|h| h.trim().to_string()).collect();
    if got != expected {
        return Err(MapError::Ingest(format!(
            "poses csv header must be filename,x,y,theta; got {}",
            got.join(",")
        )));
    }

    let mut entries = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| MapError::Ingest(format!("row {}: {e}", line + 2)))?;
        if rec.len() != 4 {
            return Err(MapError::Ingest(format!(
                "row {}: expected 4 fields, got {}",
                line + 2,
                rec.len()
            )));
        }
        let field = |i: usize| -> Result<f64, MapError> {
            rec[i]
                .trim()
                .parse::<f64>()
                .map_err(|e| MapError::Ingest(format!("row {}: field {}: {e}", line + 2, i + 1)))
        };
        entries.push(PoseEntry {
            filename: rec[0].trim().to_string(),
            pose: Pose2D::new(num(field(1)?), num(field(2)?), num(field(3)?)),
        });
    }
    Ok(entries)
}

/// Builds a fresh map from a poses CSV and its sibling PGM images.
pub fn build_map_from_csv<S: Scalar>(
    poses_csv: impl AsRef<Path>,
    detector: DetectorConfig<S>,
    layout: TripletLayout<S>,
) -> Result<TextureMap<S>, MapError> {
    let poses_csv = poses_csv.as_ref();
    let entries = read_poses_csv::<S>(poses_csv)?;
    let dir = poses_csv.parent().unwrap_or_else(|| Path::new("."));
    let mut map = TextureMap::new(detector, layout);
    for entry in entries {
        let img = Image::load_pgm(dir.join(&entry.filename))?;
        map.add_reference(&img, entry.pose);
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_valid_csv() {
        let dir = std::env::temp_dir().join("gtloc_ingest_test");
        std::fs::create_dir_all(&dir).unwrap();
        let csv_path = dir.join("poses.csv");
        std::fs::write(
            &csv_path,
            "filename,x,y,theta\na.pgm,10.5,20.25,0.1\nb.pgm,-3,4,-1.5\n",
        )
        .unwrap();
        let entries = read_poses_csv::<f64>(&csv_path).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].filename, "a.pgm");
        assert_eq!(entries[0].pose, Pose2D::new(10.5, 20.25, 0.1));
        assert_eq!(entries[1].pose.theta, -1.5);
    }

    #[test]
    fn rejects_missing_or_wrong_header() {
        let dir = std::env::temp_dir().join("gtloc_ingest_test_hdr");
        std::fs::create_dir_all(&dir).unwrap();
        let csv_path = dir.join("bad.csv");
        std::fs::write(&csv_path, "a.pgm,1,2,3\nb.pgm,4,5,6\n").unwrap();
        assert!(matches!(
            read_poses_csv::<f64>(&csv_path),
            Err(MapError::Ingest(_))
        ));

        std::fs::write(&csv_path, "file,px,py,angle\na.pgm,1,2,3\n").unwrap();
        assert!(read_poses_csv::<f64>(&csv_path).is_err());
    }

    #[test]
    fn rejects_unparseable_values() {
        let dir = std::env::temp_dir().join("gtloc_ingest_test_vals");
        std::fs::create_dir_all(&dir).unwrap();
        let csv_path = dir.join("bad_vals.csv");
        std::fs::write(&csv_path, "filename,x,y,theta\na.pgm,1,two,3\n").unwrap();
        assert!(read_poses_csv::<f64>(&csv_path).is_err());
    }
}
