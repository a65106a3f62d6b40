use crate::error::{usage, Result};

use super::dominates_unchecked;

/// Exact hypervolume (maximization) of the region dominated by `points` and
/// bounded below by `reference`.
///
/// Boxes are clipped at the reference, so a point that fails to exceed the
/// reference in some coordinate contributes nothing. The union volume is
/// computed by exclusive-contribution recursion over points sorted on the last
/// objective: each point adds its own box minus the volume of the later points
/// limited to that box.
pub fn hypervolume(points: &[Vec<f64>], reference: &[f64]) -> Result<f64> {
    let dim = reference.len();
    if dim == 0 {
        return Err(usage("hypervolume: empty reference point"));
    }
    if points.iter().any(|p| p.len() != dim) {
        return Err(usage("hypervolume: point dimension differs from reference"));
    }
    let inside: Vec<Vec<f64>> = points
        .iter()
        .filter(|p| p.iter().zip(reference).all(|(x, r)| x > r))
        .cloned()
        .collect();
    Ok(union_volume(nondominated(inside), reference))
}

fn box_volume(p: &[f64], reference: &[f64]) -> f64 {
    p.iter().zip(reference).map(|(x, r)| x - r).product()
}

fn nondominated(mut pts: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut i = 0;
    while i < pts.len() {
        let mut removed = false;
        for j in 0..pts.len() {
            if j != i && (dominates_unchecked(&pts[j], &pts[i]) || (j < i && pts[j] == pts[i])) {
                pts.swap_remove(i);
                removed = true;
                break;
            }
        }
        if !removed {
            i += 1;
        }
    }
    pts
}

/// Volume of a mutually non-dominated set whose points all exceed `reference`.
fn union_volume(mut pts: Vec<Vec<f64>>, reference: &[f64]) -> f64 {
    match pts.len() {
        0 => return 0.0,
        1 => return box_volume(&pts[0], reference),
        _ => {}
    }
    let dim = reference.len();
    if dim == 1 {
        return pts.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max) - reference[0];
    }
    if dim == 2 {
        pts.sort_by(|a, b| b[0].total_cmp(&a[0]));
        let mut area = 0.0;
        let mut ceiling = reference[1];
        for p in &pts {
            if p[1] > ceiling {
                area += (p[0] - reference[0]) * (p[1] - ceiling);
                ceiling = p[1];
            }
        }
        return area;
    }
    let last = dim - 1;
    pts.sort_by(|a, b| b[last].total_cmp(&a[last]));
    let mut total = 0.0;
    for i in 0..pts.len() {
        let own = box_volume(&pts[i], reference);
        let rest = &pts[i + 1..];
        if rest.is_empty() {
            total += own;
            continue;
        }
        let limited: Vec<Vec<f64>> = rest
            .iter()
            .map(|q| q.iter().zip(&pts[i]).map(|(a, b)| a.min(*b)).collect())
            .collect();
        total += own - union_volume(nondominated(limited), reference);
    }
    total
}
