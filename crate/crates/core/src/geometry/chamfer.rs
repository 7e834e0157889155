use super::{KdTree, Point, PointCloud, RigidTransform};
use crate::{Error, Result};

/// Reference sets at least this large are searched through a [`KdTree`];
/// smaller ones by linear scan.
pub const NN_INDEX_THRESHOLD: usize = 64;

enum Searcher<'a> {
    Linear(&'a [Point]),
    Tree(KdTree),
}

impl<'a> Searcher<'a> {
    fn new(reference: &'a [Point]) -> Self {
        if reference.len() >= NN_INDEX_THRESHOLD {
            Searcher::Tree(KdTree::build(reference))
        } else {
            Searcher::Linear(reference)
        }
    }

    #[inline]
    fn nearest(&self, q: &Point) -> (usize, f64) {
        match self {
            Searcher::Tree(t) => t.nearest(q),
            Searcher::Linear(pts) => {
                let mut best = (0, f64::INFINITY);
                for (i, p) in pts.iter().enumerate() {
                    let d2 = (p - q).norm_squared();
                    if d2 < best.1 {
                        best = (i, d2);
                    }
                }
                best
            }
        }
    }
}

/// For every query point, the index of and Euclidean distance to its nearest
/// reference point.
pub fn nearest_neighbors(query: &[Point], reference: &[Point]) -> Vec<(usize, f64)> {
    assert!(!reference.is_empty());
    let searcher = Searcher::new(reference);
    query
        .iter()
        .map(|q| {
            let (i, d2) = searcher.nearest(q);
            (i, d2.sqrt())
        })
        .collect()
}

fn directed_sum(query: &[Point], reference: &[Point]) -> f64 {
    let searcher = Searcher::new(reference);
    query.iter().map(|q| searcher.nearest(q).1.sqrt()).sum()
}

/// Sum over both directions of nearest-neighbor Euclidean distances:
/// `sum_x min_y |x - y| + sum_y min_x |y - x|`. Not averaged, not squared.
pub fn chamfer_distance(x: &PointCloud, y: &PointCloud) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidArgument(
            "Chamfer distance of an empty cloud".into(),
        ));
    }
    Ok(directed_sum(x.points(), y.points()) + directed_sum(y.points(), x.points()))
}

/// Chamfer distance between a rigidly moved source and a fixed target,
/// evaluated without rebuilding any index.
///
/// Both clouds are indexed once. The source-to-target half queries the target
/// index with `R x + t`; the target-to-source half queries the source index with
/// `R^T (y - t)`, which has the same distances because the motion is rigid.
pub struct AlignmentScorer {
    source: Vec<Point>,
    target: Vec<Point>,
    source_index: KdTree,
    target_index: KdTree,
}

impl AlignmentScorer {
    pub fn new(source: &PointCloud, target: &PointCloud) -> Self {
        Self {
            source: source.points().to_vec(),
            target: target.points().to_vec(),
            source_index: KdTree::build(source.points()),
            target_index: KdTree::build(target.points()),
        }
    }

    pub fn chamfer(&self, transform: &RigidTransform) -> f64 {
        let forward: f64 = self
            .source
            .iter()
            .map(|x| self.target_index.nearest(&transform.apply(x)).1.sqrt())
            .sum();
        let inverse = transform.inverse();
        let backward: f64 = self
            .target
            .iter()
            .map(|y| self.source_index.nearest(&inverse.apply(y)).1.sqrt())
            .sum();
        forward + backward
    }
}
