use super::Point;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone, Copy)]
struct Node {
    // leaf: points[start..end]; split: children at `left` and `left + 1`
    start: u32,
    end: u32,
    left: u32,
    axis: u8,
    split: f64,
}

impl Node {
    fn is_leaf(&self) -> bool {
        self.axis == u8::MAX
    }
}

/// Static 3-D KD-tree for exact nearest-neighbor queries.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    ids: Vec<u32>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn build(points: &[Point]) -> Self {
        assert!(!points.is_empty(), "KdTree over an empty point set");
        let mut ids: Vec<u32> = (0..points.len() as u32).collect();
        let coords: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        let mut nodes = vec![Node {
            start: 0,
            end: 0,
            left: 0,
            axis: u8::MAX,
            split: 0.0,
        }];
        Self::build_node(&coords, &mut ids, 0, points.len(), 0, &mut nodes);
        let points = ids.iter().map(|&i| coords[i as usize]).collect();
        Self { points, ids, nodes }
    }

    fn build_node(
        coords: &[[f64; 3]],
        ids: &mut [u32],
        start: usize,
        end: usize,
        slot: usize,
        nodes: &mut Vec<Node>,
    ) {
        let span = &mut ids[start..end];
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in span.iter() {
            let p = coords[i as usize];
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap();
        if span.len() <= LEAF_SIZE || hi[axis] - lo[axis] <= 0.0 {
            nodes[slot] = Node {
                start: start as u32,
                end: end as u32,
                left: 0,
                axis: u8::MAX,
                split: 0.0,
            };
            return;
        }
        let mid = span.len() / 2;
        span.select_nth_unstable_by(mid, |&a, &b| {
            coords[a as usize][axis].total_cmp(&coords[b as usize][axis])
        });
        let split = coords[span[mid] as usize][axis];
        let left = nodes.len();
        let blank = nodes[slot];
        nodes.push(blank);
        nodes.push(blank);
        nodes[slot] = Node {
            start: start as u32,
            end: end as u32,
            left: left as u32,
            axis: axis as u8,
            split,
        };
        Self::build_node(coords, ids, start, start + mid, left, nodes);
        Self::build_node(coords, ids, start + mid, end, left + 1, nodes);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index (into the slice given to [`KdTree::build`]) and squared distance of
    /// the nearest point. Ties go to the lower index.
    #[inline]
    pub fn nearest(&self, query: &Point) -> (usize, f64) {
        let q = [query.x, query.y, query.z];
        let mut best = (u32::MAX, f64::INFINITY);
        self.search(0, &q, &mut best);
        (best.0 as usize, best.1)
    }

    fn search(&self, node: usize, q: &[f64; 3], best: &mut (u32, f64)) {
        let n = self.nodes[node];
        if n.is_leaf() {
            for i in n.start as usize..n.end as usize {
                let p = self.points[i];
                let dx = p[0] - q[0];
                let dy = p[1] - q[1];
                let dz = p[2] - q[2];
                let d2 = dx * dx + dy * dy + dz * dz;
                let id = self.ids[i];
                if d2 < best.1 || (d2 == best.1 && id < best.0) {
                    *best = (id, d2);
                }
            }
            return;
        }
        let diff = q[n.axis as usize] - n.split;
        let (near, far) = if diff < 0.0 {
            (n.left, n.left + 1)
        } else {
            (n.left + 1, n.left)
        };
        self.search(near as usize, q, best);
        if diff * diff <= best.1 {
            self.search(far as usize, q, best);
        }
    }
}
