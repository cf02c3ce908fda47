use nalgebra::Vector3;

/// Squared Euclidean distance, evaluated in a fixed order so that every caller
/// gets bit-identical values.
#[inline]
pub fn dist2(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

#[derive(Clone, Debug)]
struct Node {
    /// Index into the point list.
    point: u32,
    axis: u8,
    left: u32,
    right: u32,
}

const NONE: u32 = u32::MAX;

/// Static 3-d tree for exact nearest-neighbor queries. Ties between equally
/// distant points go to the lowest point index.
#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<Vector3<f64>>,
    nodes: Vec<Node>,
    root: u32,
}

impl KdTree {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        let mut idx: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = build(&points, &mut idx, 0, &mut nodes);
        Self { points, nodes, root }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    /// Index and distance of the nearest point, `None` for an empty tree.
    pub fn nearest(&self, q: &Vector3<f64>) -> Option<(usize, f64)> {
        if self.root == NONE {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(self.root, q, &mut best);
        Some((best.0, best.1.sqrt()))
    }

    fn search(&self, node: u32, q: &Vector3<f64>, best: &mut (usize, f64)) {
        let n = &self.nodes[node as usize];
        let p = &self.points[n.point as usize];
        let d = dist2(p, q);
        let i = n.point as usize;
        if d < best.1 || (d == best.1 && i < best.0) {
            *best = (i, d);
        }
        let axis = n.axis as usize;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        if near != NONE {
            self.search(near, q, best);
        }
        // Equal plane distance can still hide a tie with a lower index.
        if far != NONE && diff * diff <= best.1 {
            self.search(far, q, best);
        }
    }
}

fn build(points: &[Vector3<f64>], idx: &mut [u32], depth: usize, nodes: &mut Vec<Node>) -> u32 {
    if idx.is_empty() {
        return NONE;
    }
    // Split on the axis of largest spread.
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for &i in idx.iter() {
        let p = &points[i as usize];
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let spread = hi - lo;
    let axis = if spread.x >= spread.y && spread.x >= spread.z {
        0
    } else if spread.y >= spread.z {
        1
    } else {
        2
    };
    let mid = idx.len() / 2;
    idx.select_nth_unstable_by(mid, |a, b| {
        points[*a as usize][axis]
            .total_cmp(&points[*b as usize][axis])
            .then(a.cmp(b))
    });
    let slot = nodes.len() as u32;
    nodes.push(Node {
        point: idx[mid],
        axis: axis as u8,
        left: NONE,
        right: NONE,
    });
    let (left, rest) = idx.split_at_mut(mid);
    let right = &mut rest[1..];
    let l = build(points, left, depth + 1, nodes);
    let r = build(points, right, depth + 1, nodes);
    nodes[slot as usize].left = l;
    nodes[slot as usize].right = r;
    slot
}
