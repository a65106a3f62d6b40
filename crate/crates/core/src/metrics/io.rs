//! CSV persistence for point sets: one point per row, columns `r_1..r_K`
//! followed by `w_1..w_m` when the points carry preference tags.

use std::path::Path;

use crate::error::{usage, Result};

use super::ParetoSet;

/// A raw (unfiltered) point together with the preference that produced it.
pub type TaggedPoint = (Vec<f64>, Option<Vec<f64>>);

pub fn write_points_csv(path: &Path, points: &[TaggedPoint]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let dim = points.first().map_or(0, |p| p.0.len());
    let tag_dim = points.first().and_then(|p| p.1.as_ref()).map_or(0, Vec::len);
    let header: Vec<String> = (1..=dim)
        .map(|k| format!("r_{k}"))
        .chain((1..=tag_dim).map(|k| format!("w_{k}")))
        .collect();
    writer.write_record(&header)?;
    for (point, tag) in points {
        if point.len() != dim || tag.as_ref().map_or(0, Vec::len) != tag_dim {
            return Err(usage("write_points_csv: ragged point set"));
        }
        let row: Vec<String> = point
            .iter()
            .chain(tag.iter().flatten())
            .map(|x| format!("{x:?}"))
            .collect();
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_front_csv(path: &Path, front: &ParetoSet) -> Result<()> {
    let rows: Vec<TaggedPoint> = front.iter().map(|(p, t)| (p.clone(), t.cloned())).collect();
    write_points_csv(path, &rows)
}

pub fn read_points_csv(path: &Path) -> Result<Vec<TaggedPoint>> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    let dim = header.iter().filter(|h| h.starts_with("r_")).count();
    let tag_dim = header.iter().filter(|h| h.starts_with("w_")).count();
    if dim + tag_dim != header.len() {
        return Err(usage("points csv: unexpected column names"));
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let values: Vec<f64> = record
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|e| usage(format!("points csv: {e}"))))
            .collect::<Result<_>>()?;
        let tag = (tag_dim > 0).then(|| values[dim..].to_vec());
        out.push((values[..dim].to_vec(), tag));
    }
    Ok(out)
}
