//! Pareto dominance, non-dominated filtering and the front-quality indicators
//! used to score multi-objective policies: hypervolume, sparsity and expected
//! utility, plus the equidistant preference lattice used for evaluation.

mod hypervolume;
pub mod io;

pub use hypervolume::hypervolume;

use serde::{Deserialize, Serialize};

use crate::error::{usage, Result};

/// `true` iff `u` is at least as good as `v` everywhere and strictly better somewhere.
pub fn pareto_dominates(u: &[f64], v: &[f64]) -> Result<bool> {
    if u.len() != v.len() {
        return Err(usage(format!(
            "dominance check on vectors of length {} and {}",
            u.len(),
            v.len()
        )));
    }
    Ok(dominates_unchecked(u, v))
}

pub(crate) fn dominates_unchecked(u: &[f64], v: &[f64]) -> bool {
    let mut strict = false;
    for (a, b) in u.iter().zip(v) {
        if a < b {
            return false;
        }
        if a > b {
            strict = true;
        }
    }
    strict
}

/// A set of mutually non-dominated vector returns, each optionally tagged with
/// the preference that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoSet {
    points: Vec<Vec<f64>>,
    tags: Vec<Option<Vec<f64>>>,
}

impl ParetoSet {
    pub fn from_points(points: Vec<Vec<f64>>) -> Result<Self> {
        let tags = vec![None; points.len()];
        pareto_filter_tagged(points, tags)
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn tags(&self) -> &[Option<Vec<f64>>] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec<f64>, Option<&Vec<f64>>)> {
        self.points.iter().zip(self.tags.iter().map(Option::as_ref))
    }

    /// Whether `point` equals some member within `tol` in every coordinate.
    pub fn contains_approx(&self, point: &[f64], tol: f64) -> bool {
        self.points.iter().any(|p| {
            p.len() == point.len() && p.iter().zip(point).all(|(a, b)| (a - b).abs() <= tol)
        })
    }
}

/// Keeps exactly the points not dominated by any other point. Exact duplicates
/// collapse onto their first occurrence; survivors keep their input order.
pub fn pareto_filter(points: &[Vec<f64>]) -> Result<ParetoSet> {
    pareto_filter_tagged(points.to_vec(), vec![None; points.len()])
}

pub fn pareto_filter_tagged(
    points: Vec<Vec<f64>>,
    tags: Vec<Option<Vec<f64>>>,
) -> Result<ParetoSet> {
    if points.is_empty() {
        return Err(usage("pareto_filter on an empty point set"));
    }
    if tags.len() != points.len() {
        return Err(usage("pareto_filter: one tag per point required"));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(usage("pareto_filter: points of mixed dimension"));
    }
    let keep = non_dominated_mask(&points);
    let (points, tags) = points
        .into_iter()
        .zip(tags)
        .zip(keep)
        .filter_map(|(pt, k)| k.then_some(pt))
        .unzip();
    Ok(ParetoSet { points, tags })
}

/// Mask of points that survive non-dominated filtering with duplicate collapse.
pub(crate) fn non_dominated_mask(points: &[Vec<f64>]) -> Vec<bool> {
    let n = points.len();
    let mut keep = vec![true; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            if dominates_unchecked(&points[j], &points[i]) || (j < i && points[j] == points[i]) {
                keep[i] = false;
                break;
            }
        }
    }
    keep
}

/// Mean squared gap between consecutive values of each objective, with the
/// values sorted in descending order. A single point has no gaps and scores 0.
pub fn sparsity(points: &[Vec<f64>]) -> Result<f64> {
    let n = points.len();
    if n == 0 {
        return Err(usage("sparsity of an empty set"));
    }
    if n == 1 {
        return Ok(0.0);
    }
    let dim = points[0].len();
    let mut total = 0.0;
    let mut column = Vec::with_capacity(n);
    for k in 0..dim {
        column.clear();
        column.extend(points.iter().map(|p| p[k]));
        column.sort_by(|a, b| b.total_cmp(a));
        total += column.windows(2).map(|w| (w[0] - w[1]).powi(2)).sum::<f64>();
    }
    Ok(total / (n - 1) as f64)
}

/// Expected utility over `prefs` of the best signed scalar projection
/// `w·r / |w|` attained on the front.
pub fn eum(front: &ParetoSet, prefs: &[Vec<f64>]) -> Result<f64> {
    if front.is_empty() || prefs.is_empty() {
        return Err(usage("eum needs a nonempty front and preference set"));
    }
    let dim = front.dim();
    let mut acc = 0.0;
    for w in prefs {
        if w.len() != dim {
            return Err(usage("eum: preference dimension differs from front"));
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(usage("eum: zero-norm preference"));
        }
        let best = front
            .points()
            .iter()
            .map(|r| r.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / norm)
            .fold(f64::NEG_INFINITY, f64::max);
        acc += best;
    }
    Ok(acc / prefs.len() as f64)
}

/// All lattice points `k / divisions` of the `(m-1)`-simplex, ordered with the
/// first coordinate descending.
pub fn equidistant_simplex_points(m: usize, divisions: usize) -> Vec<Vec<f64>> {
    assert!(m >= 1, "simplex dimension must be positive");
    assert!(divisions >= 1, "at least one division required");
    let mut out = Vec::with_capacity(lattice_size(m, divisions));
    let mut counts = vec![0usize; m];
    fill_lattice(&mut counts, 0, divisions, divisions, &mut out);
    out
}

fn fill_lattice(
    counts: &mut [usize],
    pos: usize,
    remaining: usize,
    divisions: usize,
    out: &mut Vec<Vec<f64>>,
) {
    if pos + 1 == counts.len() {
        counts[pos] = remaining;
        out.push(counts.iter().map(|&c| c as f64 / divisions as f64).collect());
        return;
    }
    for k in (0..=remaining).rev() {
        counts[pos] = k;
        fill_lattice(counts, pos + 1, remaining - k, divisions, out);
    }
}

/// Number of lattice points, `C(divisions + m - 1, m - 1)`.
pub fn lattice_size(m: usize, divisions: usize) -> usize {
    let (n, k) = (divisions + m - 1, m - 1);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Lattice points rescaled to unit Euclidean length.
pub fn normalized_simplex_points(m: usize, divisions: usize) -> Vec<Vec<f64>> {
    equidistant_simplex_points(m, divisions)
        .into_iter()
        .map(|w| {
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            w.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

/// One scalar metric, as written to JSON metric records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub metric: String,
    pub value: f64,
    pub ref_point: Option<Vec<f64>>,
    pub n_points: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dominance_examples() {
        assert!(pareto_dominates(&[2.0, 3.0], &[1.0, 3.0]).unwrap());
        assert!(!pareto_dominates(&[1.0, 3.0], &[3.0, 1.0]).unwrap());
        assert!(!pareto_dominates(&[3.0, 1.0], &[1.0, 3.0]).unwrap());
        assert!(!pareto_dominates(&[1.0, 1.0], &[1.0, 1.0]).unwrap());
        assert!(pareto_dominates(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn filter_examples() {
        let set = pareto_filter(&[vec![1.0, 2.0], vec![2.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(set.points(), &[vec![1.0, 2.0], vec![2.0, 1.0]]);
        let single = pareto_filter(&[vec![5.0]]).unwrap();
        assert_eq!(single.points(), &[vec![5.0]]);
        let dup = pareto_filter(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(dup.len(), 1);
        assert!(pareto_filter(&[]).is_err());
        assert!(pareto_filter(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn filter_keeps_tags_aligned() {
        let set = pareto_filter_tagged(
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![Some(vec![0.5, 0.5]), Some(vec![1.0, 0.0]), Some(vec![0.0, 1.0])],
        )
        .unwrap();
        assert_eq!(set.tags(), &[Some(vec![1.0, 0.0]), Some(vec![0.0, 1.0])]);
    }

    #[test]
    fn sparsity_examples() {
        let three = [vec![0.0, 2.0], vec![1.0, 1.0], vec![2.0, 0.0]];
        assert_eq!(sparsity(&three).unwrap(), 2.0);
        assert_eq!(sparsity(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap(), 2.0);
        assert_eq!(sparsity(&[vec![3.0, -7.0, 1.0]]).unwrap(), 0.0);
        assert!(sparsity(&[]).is_err());
    }

    #[test]
    fn eum_examples() {
        let front = ParetoSet::from_points(vec![vec![1.0, 0.0]]).unwrap();
        let prefs = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(eum(&front, &prefs).unwrap(), 0.5);
        assert!(eum(&front, &[vec![0.0, 0.0]]).is_err());
    }

    #[test]
    fn eum_is_homogeneous_and_ignores_dominated_points() {
        let prefs = normalized_simplex_points(3, 4);
        let base = ParetoSet::from_points(vec![vec![1.0, 1.0, 1.0]]).unwrap();
        let scaled = ParetoSet::from_points(vec![vec![2.5, 2.5, 2.5]]).unwrap();
        let e1 = eum(&base, &prefs).unwrap();
        let e2 = eum(&scaled, &prefs).unwrap();
        assert!((e2 - 2.5 * e1).abs() < 1e-12);

        let front = ParetoSet::from_points(vec![vec![3.0, 0.0, 1.0], vec![0.0, 2.0, 2.0]]).unwrap();
        let padded = ParetoSet::from_points(vec![
            vec![3.0, 0.0, 1.0],
            vec![0.0, 2.0, 2.0],
            vec![0.0, 1.0, 1.0],
        ])
        .unwrap();
        assert_eq!(eum(&front, &prefs).unwrap(), eum(&padded, &prefs).unwrap());
    }

    #[test]
    fn simplex_lattice_examples() {
        assert_eq!(
            equidistant_simplex_points(2, 2),
            vec![vec![1.0, 0.0], vec![0.5, 0.5], vec![0.0, 1.0]]
        );
        assert_eq!(equidistant_simplex_points(3, 4).len(), 15);
        assert_eq!(equidistant_simplex_points(4, 4).len(), 35);
        assert_eq!(lattice_size(16, 5), 15504);
        assert_eq!(lattice_size(5, 5), 126);
        assert_eq!(equidistant_simplex_points(2, 20).len(), 21);
        assert_eq!(equidistant_simplex_points(3, 5).len(), 21);
    }

    #[test]
    fn filter_matches_all_pairs_oracle_on_random_set() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(50);
        let points: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..3).map(|_| rng.random_range(0..6) as f64).collect())
            .collect();
        let set = pareto_filter(&points).unwrap();
        // independent all-pairs oracle: a point survives iff nobody dominates it
        let mut expected: Vec<Vec<f64>> = Vec::new();
        for p in &points {
            let dominated = points.iter().any(|q| {
                q.iter().zip(p).all(|(a, b)| a >= b) && q.iter().zip(p).any(|(a, b)| a > b)
            });
            if !dominated && !expected.contains(p) {
                expected.push(p.clone());
            }
        }
        assert_eq!(set.points(), expected.as_slice());
    }

    fn vec_strategy(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec((-3i32..4).prop_map(f64::from), dim)
    }

    proptest! {
        #[test]
        fn dominance_is_a_strict_partial_order(
            u in vec_strategy(3), v in vec_strategy(3), w in vec_strategy(3)
        ) {
            prop_assert!(!pareto_dominates(&u, &u).unwrap());
            if pareto_dominates(&u, &v).unwrap() {
                prop_assert!(!pareto_dominates(&v, &u).unwrap());
                if pareto_dominates(&v, &w).unwrap() {
                    prop_assert!(pareto_dominates(&u, &w).unwrap());
                }
            }
        }

        #[test]
        fn filter_is_idempotent(points in prop::collection::vec(vec_strategy(3), 1..30)) {
            let once = pareto_filter(&points).unwrap();
            let twice = pareto_filter(once.points()).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn lattice_points_lie_on_simplex(m in 2usize..6, divisions in 1usize..7) {
            let pts = equidistant_simplex_points(m, divisions);
            prop_assert_eq!(pts.len(), lattice_size(m, divisions));
            for p in pts {
                prop_assert!(p.iter().all(|&x| x >= 0.0));
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
