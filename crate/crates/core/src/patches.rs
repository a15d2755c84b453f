//! Neighbourhoods: a kd-tree for exact k-nearest queries, the symmetrized
//! kNN proximity graph, Euclidean and geodesic patches, and the coverage loop
//! that picks patch seeds until every point sits in some half patch.

use std::cmp::{Ordering, Reverse};
use std::collections::hash_map::Entry;
use std::collections::{BinaryHeap, HashMap, HashSet};

use crate::error::{Error, Result};
use crate::geom::Vec3;

const LEAF_SIZE: usize = 12;

/// `(distance², index)` ordered lexicographically with a total float order.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Cand(f64, usize);

impl Eq for Cand {}

impl Ord for Cand {
    fn cmp(&self, o: &Self) -> Ordering {
        self.0.total_cmp(&o.0).then(self.1.cmp(&o.1))
    }
}

impl PartialOrd for Cand {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Exact k-nearest-neighbour index over a fixed point set.
#[derive(Debug, Clone)]
pub struct KnnIndex {
    points: Vec<Vec3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KnnIndex {
    pub fn new(points: &[Vec3]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut idx = Self {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        idx.build(0, points.len());
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let (mut lo, mut hi) = ([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]);
        for &i in &self.order[start..end] {
            for k in 0..3 {
                lo[k] = lo[k].min(self.points[i][k]);
                hi[k] = hi[k].max(self.points[i][k]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        let mid = (start + end) / 2;
        let pts = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| pts[a][axis].total_cmp(&pts[b][axis]));
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    /// The `min(k, len)` nearest points to `q` as `(index, distance)`,
    /// ascending by distance with ties broken by index.
    pub fn query(&self, q: Vec3, k: usize) -> Vec<(usize, f64)> {
        let k = k.min(self.points.len());
        if k == 0 {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, q, k, &mut heap);
        heap.into_sorted_vec().into_iter().map(|c| (c.1, c.0.sqrt())).collect()
    }

    fn search(&self, node: usize, q: Vec3, k: usize, heap: &mut BinaryHeap<Cand>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let c = Cand((self.points[i] - q).norm_squared(), i);
                    if heap.len() < k {
                        heap.push(c);
                    } else if heap.peek().is_some_and(|w| c < *w) {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, heap);
                // `<=` keeps equal-distance candidates with smaller indices reachable.
                if heap.len() < k || heap.peek().is_some_and(|w| diff * diff <= w.0) {
                    self.search(far, q, k, heap);
                }
            }
        }
    }
}

/// Undirected weighted graph with precomputed connected components.
#[derive(Debug, Clone)]
pub struct ProximityGraph {
    /// Neighbours of each node as `(node, weight)`, sorted by node.
    pub adjacency: Vec<Vec<(usize, f64)>>,
    /// Component label per node, numbered in order of first appearance.
    pub component_id: Vec<usize>,
    /// Node count per component label.
    pub component_size: Vec<usize>,
}

struct DisjointSets {
    parent: Vec<usize>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut a: usize) -> usize {
        while self.parent[a] != a {
            self.parent[a] = self.parent[self.parent[a]];
            a = self.parent[a];
        }
        a
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

impl ProximityGraph {
    /// Build from an undirected edge list. Duplicate edges keep the smaller weight.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(a, b, w) in edges {
            if a >= n || b >= n {
                return Err(Error::Range(format!("edge ({a}, {b}) outside {n} nodes")));
            }
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Range(format!("edge weight {w}")));
            }
            if a != b {
                adjacency[a].push((b, w));
                adjacency[b].push((a, w));
            }
        }
        for list in &mut adjacency {
            list.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)));
            list.dedup_by_key(|e| e.0);
        }

        let mut sets = DisjointSets::new(n);
        for (a, list) in adjacency.iter().enumerate() {
            for &(b, _) in list {
                sets.union(a, b);
            }
        }
        let mut label = HashMap::new();
        let mut component_size = Vec::new();
        let component_id = (0..n)
            .map(|i| {
                let root = sets.find(i);
                let next = label.len();
                let id = *label.entry(root).or_insert(next);
                if id == component_size.len() {
                    component_size.push(0);
                }
                component_size[id] += 1;
                id
            })
            .collect();
        Ok(Self { adjacency, component_id, component_size })
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn component_count(&self) -> usize {
        self.component_size.len()
    }

    /// Size of the connected component containing `node`.
    pub fn component_size_of(&self, node: usize) -> usize {
        self.component_size[self.component_id[node]]
    }
}

/// Symmetrized `k`-nearest-neighbour graph with Euclidean edge lengths.
pub fn build_graph(index: &KnnIndex, k: usize) -> Result<ProximityGraph> {
    if k == 0 {
        return Err(Error::InvalidConfig("graph k must be at least 1".into()));
    }
    let pts = index.points();
    let mut edges = Vec::with_capacity(pts.len() * k);
    for (i, &p) in pts.iter().enumerate() {
        for (j, d) in index.query(p, k + 1).into_iter().filter(|&(j, _)| j != i).take(k) {
            edges.push((i, j, d));
        }
    }
    ProximityGraph::from_edges(pts.len(), &edges)
}

/// Index subset of a cloud around a centre point.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub center_index: usize,
    /// Sorted by ascending `center_distances`, centre first.
    pub members: Vec<usize>,
    pub center_distances: Vec<f64>,
    pub is_geodesic: bool,
}

impl Patch {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Number of members in the half patch.
    pub fn half_len(&self) -> usize {
        self.members.len().div_ceil(2)
    }
}

/// The `ceil(len/2)` members nearest the centre.
pub fn half_patch(p: &Patch) -> &[usize] {
    &p.members[..p.half_len()]
}

/// The `n` points with the smallest shortest-path distance from `seed`.
///
/// Returns fewer when the seed's component is smaller than `n`. Equal
/// distances settle in ascending node order.
pub fn geodesic_patch(graph: &ProximityGraph, seed: usize, n: usize) -> Patch {
    let mut best: HashMap<usize, f64> = HashMap::new();
    let mut heap = BinaryHeap::new();
    let mut members = Vec::with_capacity(n);
    let mut center_distances = Vec::with_capacity(n);
    best.insert(seed, 0.0);
    heap.push(Reverse(Cand(0.0, seed)));
    let mut settled = HashSet::new();

    while let Some(Reverse(Cand(d, u))) = heap.pop() {
        if members.len() >= n {
            break;
        }
        if !settled.insert(u) || d > best[&u] {
            continue;
        }
        members.push(u);
        center_distances.push(d);
        for &(v, w) in &graph.adjacency[u] {
            if settled.contains(&v) {
                continue;
            }
            let nd = d + w;
            match best.entry(v) {
                Entry::Occupied(mut e) => {
                    if nd < *e.get() {
                        e.insert(nd);
                        heap.push(Reverse(Cand(nd, v)));
                    }
                }
                Entry::Vacant(e) => {
                    e.insert(nd);
                    heap.push(Reverse(Cand(nd, v)));
                }
            }
        }
    }
    Patch { center_index: seed, members, center_distances, is_geodesic: true }
}

/// The `n` Euclidean-nearest points to `seed`, centre first.
pub fn knn_patch(index: &KnnIndex, seed: usize, n: usize) -> Patch {
    let n = n.max(1);
    let mut hits = index.query(index.points()[seed], n);
    // Coincident points can outrank the seed on index; keep it first.
    match hits.iter().position(|&(i, _)| i == seed) {
        Some(0) => {}
        Some(pos) => {
            let s = hits.remove(pos);
            hits.insert(0, s);
        }
        None => {
            hits.pop();
            hits.insert(0, (seed, 0.0));
        }
    }
    let (members, center_distances) = hits.into_iter().unzip();
    Patch { center_index: seed, members, center_distances, is_geodesic: false }
}

/// Lowest-index point not yet covered.
pub fn select_uncovered(covered: &[bool]) -> Option<usize> {
    covered.iter().position(|&c| !c)
}

/// Patch construction over one cloud: kd-tree plus optional geodesic graph.
#[derive(Debug, Clone)]
pub struct PatchBuilder {
    pub index: KnnIndex,
    pub graph: Option<ProximityGraph>,
}

impl PatchBuilder {
    /// `graph_k = None` skips the graph and yields Euclidean patches only.
    pub fn new(points: &[Vec3], graph_k: Option<usize>) -> Result<Self> {
        let index = KnnIndex::new(points)?;
        let graph = graph_k.map(|k| build_graph(&index, k)).transpose()?;
        Ok(Self { index, graph })
    }

    /// Geodesic patch when a graph exists and the seed's component holds at
    /// least `n` points, otherwise the Euclidean kNN patch.
    pub fn patch(&self, seed: usize, n: usize) -> Patch {
        match &self.graph {
            Some(g) if g.component_size_of(seed) >= n => geodesic_patch(g, seed, n),
            _ => knn_patch(&self.index, seed, n),
        }
    }

    /// Seed patches at the lowest uncovered point and mark each half patch
    /// covered until no point is left.
    pub fn coverage(&self, n: usize) -> Vec<Patch> {
        let mut covered = vec![false; self.index.len()];
        let mut cursor = 0;
        let mut patches = Vec::new();
        while let Some(offset) = select_uncovered(&covered[cursor..]) {
            let seed = cursor + offset;
            let p = self.patch(seed, n);
            for &m in half_patch(&p) {
                covered[m] = true;
            }
            cursor = seed;
            patches.push(p);
        }
        patches
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect()
    }

    fn brute_knn(pts: &[Vec3], q: Vec3, k: usize) -> Vec<usize> {
        let mut all: Vec<(f64, usize)> = pts.iter().enumerate().map(|(i, p)| ((*p - q).norm_squared(), i)).collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|x| x.1).collect()
    }

    fn bellman_ford(g: &ProximityGraph, src: usize) -> Vec<f64> {
        let mut d = vec![f64::INFINITY; g.len()];
        d[src] = 0.0;
        for _ in 0..g.len() {
            let mut changed = false;
            for (u, list) in g.adjacency.iter().enumerate() {
                for &(v, w) in list {
                    if d[u] + w < d[v] {
                        d[v] = d[u] + w;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        d
    }

    #[test]
    fn knn_matches_brute_force() {
        let pts = random_points(500, 1);
        let idx = KnnIndex::new(&pts).unwrap();
        for q in random_points(40, 2) {
            for k in [1, 7, 50] {
                let got: Vec<usize> = idx.query(q, k).into_iter().map(|x| x.0).collect();
                assert_eq!(got, brute_knn(&pts, q, k));
            }
        }
        assert_eq!(idx.query(pts[0], 10_000).len(), 500);
    }

    #[test]
    fn knn_ties_go_to_lower_index() {
        let mut pts = Vec::new();
        for i in -5..=5 {
            for j in -5..=5 {
                pts.push(Vec3::new(i as f64, j as f64, 0.0));
            }
        }
        let idx = KnnIndex::new(&pts).unwrap();
        for q in [Vec3::ZERO, Vec3::new(0.5, 0.5, 0.0), Vec3::new(2.0, -3.0, 0.0)] {
            for k in 1..40 {
                let got: Vec<usize> = idx.query(q, k).into_iter().map(|x| x.0).collect();
                assert_eq!(got, brute_knn(&pts, q, k), "k={k}");
            }
        }
    }

    #[test]
    fn collinear_middle_point_has_degree_two() {
        let pts = [Vec3::ZERO, Vec3::X, Vec3::X * 2.0];
        let g = build_graph(&KnnIndex::new(&pts).unwrap(), 1).unwrap();
        assert_eq!(g.adjacency[1].len(), 2);
        assert_eq!(g.component_count(), 1);
    }

    #[test]
    fn complete_graph_is_one_component() {
        let pts = random_points(30, 3);
        let g = build_graph(&KnnIndex::new(&pts).unwrap(), 29).unwrap();
        assert_eq!(g.component_count(), 1);
        assert!(g.adjacency.iter().all(|l| l.len() == 29));
    }

    /// Component labels by flood fill.
    fn flood_components(g: &ProximityGraph) -> Vec<usize> {
        let mut label = vec![usize::MAX; g.len()];
        let mut next = 0;
        for s in 0..g.len() {
            if label[s] != usize::MAX {
                continue;
            }
            let mut stack = vec![s];
            label[s] = next;
            while let Some(u) = stack.pop() {
                for &(v, _) in &g.adjacency[u] {
                    if label[v] == usize::MAX {
                        label[v] = next;
                        stack.push(v);
                    }
                }
            }
            next += 1;
        }
        label
    }

    #[test]
    fn separated_clusters_split() {
        let mut pts = random_points(40, 4);
        pts.extend(random_points(40, 5).into_iter().map(|p| p + Vec3::X * 10.0));
        let g = build_graph(&KnnIndex::new(&pts).unwrap(), 5).unwrap();
        assert_eq!(g.component_count(), 2);
        assert_eq!(g.component_id, flood_components(&g));
        assert_eq!(g.component_size, vec![40, 40]);
    }

    #[test]
    fn path_graph_patch() {
        let g = ProximityGraph::from_edges(4, &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)]).unwrap();
        let p = geodesic_patch(&g, 0, 3);
        assert_eq!(p.members, vec![0, 1, 2]);
        assert_eq!(p.center_distances, vec![0.0, 1.0, 2.0]);
        assert!(p.is_geodesic);
        assert_eq!(geodesic_patch(&g, 1, 10).members.len(), 4);
    }

    #[test]
    fn dijkstra_matches_bellman_ford() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let n = rng.gen_range(2..120);
            let m = rng.gen_range(n..4 * n);
            let edges: Vec<_> = (0..m)
                .map(|_| (rng.gen_range(0..n), rng.gen_range(0..n), rng.gen_range(0.0..3.0)))
                .collect();
            let g = ProximityGraph::from_edges(n, &edges).unwrap();
            let src = rng.gen_range(0..n);
            let oracle = bellman_ford(&g, src);
            let p = geodesic_patch(&g, src, n);
            assert_eq!(p.len(), g.component_size_of(src));
            for (&m, &d) in p.members.iter().zip(&p.center_distances) {
                assert!((d - oracle[m]).abs() <= 1e-9 * oracle[m].max(1.0));
            }
        }
    }

    #[test]
    fn knn_patch_examples() {
        let pts = random_points(50, 7);
        let idx = KnnIndex::new(&pts).unwrap();
        assert_eq!(knn_patch(&idx, 3, 1).members, vec![3]);
        let all = knn_patch(&idx, 3, 500);
        assert_eq!(all.len(), 50);
        assert_eq!(all.members[0], 3);
        assert!(!all.is_geodesic);
    }

    #[test]
    fn knn_patch_on_grid_is_a_distance_sort() {
        let mut pts = Vec::new();
        for i in 0..9 {
            for j in 0..9 {
                pts.push(Vec3::new(i as f64, j as f64, 0.0));
            }
        }
        let idx = KnnIndex::new(&pts).unwrap();
        let seed = 4 * 9 + 4;
        let p = knn_patch(&idx, seed, 25);
        assert_eq!(p.members, brute_knn(&pts, pts[seed], 25));
    }

    #[test]
    fn coincident_points_keep_the_seed_first() {
        let pts = [Vec3::ZERO, Vec3::ZERO, Vec3::ZERO, Vec3::X];
        let idx = KnnIndex::new(&pts).unwrap();
        let p = knn_patch(&idx, 2, 2);
        assert_eq!(p.members[0], 2);
        assert_eq!(p.len(), 2);
    }

    #[test]
    fn select_uncovered_examples() {
        assert_eq!(select_uncovered(&[false; 5]), Some(0));
        assert_eq!(select_uncovered(&[true; 5]), None);
        assert_eq!(select_uncovered(&[true, true, false, true, false]), Some(2));
    }

    #[test]
    fn half_patch_rounds_up() {
        let mk = |n: usize| Patch {
            center_index: 0,
            members: (0..n).collect(),
            center_distances: (0..n).map(|i| i as f64).collect(),
            is_geodesic: false,
        };
        assert_eq!(half_patch(&mk(4)), &[0, 1]);
        assert_eq!(half_patch(&mk(5)), &[0, 1, 2]);
        assert_eq!(half_patch(&mk(1)), &[0]);
    }

    #[test]
    fn small_components_fall_back_to_knn() {
        let mut pts = random_points(30, 8);
        pts.extend(random_points(300, 9).into_iter().map(|p| p + Vec3::X * 50.0));
        let b = PatchBuilder::new(&pts, Some(6)).unwrap();
        assert!(!b.patch(0, 100).is_geodesic);
        assert!(b.patch(100, 100).is_geodesic);
    }

    /// Every seed is uncovered when picked, so each iteration covers at
    /// least one new point and the loop ends within `n` iterations.
    fn check_coverage(pts: &[Vec3], b: &PatchBuilder, n: usize) -> usize {
        let patches = b.coverage(n);
        assert!(patches.len() <= pts.len());
        let mut covered = vec![false; pts.len()];
        for p in &patches {
            assert!(!covered[p.center_index]);
            assert_eq!(select_uncovered(&covered), Some(p.center_index));
            for &m in half_patch(p) {
                covered[m] = true;
            }
        }
        assert!(covered.iter().all(|&c| c));
        patches.len()
    }

    #[test]
    fn coverage_loop_covers_surfaces() {
        use crate::data::{synthesize, Shape, SynthSpec};
        for shape in [Shape::Plane, Shape::Sphere, Shape::Torus, Shape::Cube] {
            let pts = synthesize(&SynthSpec::new(shape, 1500, 10)).unwrap().positions;
            let b = PatchBuilder::new(&pts, Some(10)).unwrap();
            for n in [16, 64, 200] {
                let count = check_coverage(&pts, &b, n);
                // about twice the ideal ceil(len / half) tiling on unordered clouds
                assert!(count >= pts.len().div_ceil(n.div_ceil(2)));
            }
        }
    }

    #[test]
    fn coverage_loop_covers_volumes() {
        let pts = random_points(600, 10);
        let b = PatchBuilder::new(&pts, Some(8)).unwrap();
        check_coverage(&pts, &b, 64);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn patch_distances_are_sorted(seed in 0u64..1000, n in 1usize..80, start in 0usize..150) {
            let pts = random_points(150, seed);
            let b = PatchBuilder::new(&pts, Some(6)).unwrap();
            let p = b.patch(start, n);
            prop_assert_eq!(p.members[0], start);
            prop_assert_eq!(p.center_distances[0], 0.0);
            prop_assert!(p.center_distances.windows(2).all(|w| w[0] <= w[1]));
            let mut uniq = p.members.clone();
            uniq.sort_unstable();
            uniq.dedup();
            prop_assert_eq!(uniq.len(), p.len());
        }
    }
}
