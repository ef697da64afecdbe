use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use super::{solve_similarity, AlignError, Correspondence3D, RansacConfig};
use crate::geometry::SimilarityTransform3;
use crate::par;
use crate::sampling::labeled_seed;

/// A successful pairwise alignment: `transform` maps `from` coordinates into `to`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeEstimate {
    pub from_id: String,
    pub to_id: String,
    pub transform: SimilarityTransform3,
    pub inlier_count: usize,
    pub total_count: usize,
    pub inlier_rms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeFailure {
    pub from_id: String,
    pub to_id: String,
    pub error: AlignError,
}

/// Reconstructions as nodes, one edge per successfully aligned unordered pair.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AlignmentGraph {
    nodes: BTreeSet<String>,
    edges: Vec<EdgeEstimate>,
}

impl AlignmentGraph {
    pub fn new(
        nodes: impl IntoIterator<Item = String>,
        edges: Vec<EdgeEstimate>,
    ) -> Result<Self, AlignError> {
        let nodes: BTreeSet<String> = nodes.into_iter().collect();
        let mut pairs = BTreeSet::new();
        for e in &edges {
            for id in [&e.from_id, &e.to_id] {
                if !nodes.contains(id) {
                    return Err(AlignError::InvalidGraph(format!(
                        "edge endpoint {id} is not a node"
                    )));
                }
            }
            if e.from_id == e.to_id {
                return Err(AlignError::InvalidGraph(format!(
                    "self-loop on {}",
                    e.from_id
                )));
            }
            if e.inlier_count > e.total_count {
                return Err(AlignError::InvalidGraph(format!(
                    "edge {} - {} has more inliers than correspondences",
                    e.from_id, e.to_id
                )));
            }
            if !pairs.insert(unordered(&e.from_id, &e.to_id)) {
                return Err(AlignError::InvalidGraph(format!(
                    "duplicate edge {} - {}",
                    e.from_id, e.to_id
                )));
            }
        }
        Ok(Self { nodes, edges })
    }

    pub fn nodes(&self) -> &BTreeSet<String> {
        &self.nodes
    }

    pub fn edges(&self) -> &[EdgeEstimate] {
        &self.edges
    }

    pub fn contains(&self, id: &str) -> bool {
        self.nodes.contains(id)
    }

    /// Edge between `a` and `b` in either storage direction.
    pub fn edge(&self, a: &str, b: &str) -> Option<&EdgeEstimate> {
        self.edges
            .iter()
            .find(|e| (e.from_id == a && e.to_id == b) || (e.from_id == b && e.to_id == a))
    }

    /// Transform of the single edge `a → b`, inverting the stored direction if needed.
    pub fn edge_transform(&self, a: &str, b: &str) -> Option<SimilarityTransform3> {
        self.edge(a, b).map(|e| {
            if e.from_id == a {
                e.transform
            } else {
                e.transform.inverse()
            }
        })
    }

    fn adjacency(&self) -> BTreeMap<&str, Vec<(&str, usize)>> {
        let mut adj: BTreeMap<&str, Vec<(&str, usize)>> = self
            .nodes
            .iter()
            .map(|n| (n.as_str(), Vec::new()))
            .collect();
        for e in &self.edges {
            adj.get_mut(e.from_id.as_str())
                .expect("validated")
                .push((e.to_id.as_str(), e.inlier_count));
            adj.get_mut(e.to_id.as_str())
                .expect("validated")
                .push((e.from_id.as_str(), e.inlier_count));
        }
        for v in adj.values_mut() {
            v.sort();
        }
        adj
    }

    /// Node sequence of the preferred path between two nodes.
    ///
    /// Fewest hops first; among those, the path whose weakest edge has the
    /// most inliers; remaining ties go to the lexicographically smallest node
    /// sequence. The path is always chosen from the smaller id to the larger
    /// one and reversed as needed, so both directions use the same edges.
    pub fn shortest_path(&self, from: &str, to: &str) -> Result<Vec<String>, AlignError> {
        for id in [from, to] {
            if !self.contains(id) {
                return Err(AlignError::UnknownNode(id.to_string()));
            }
        }
        if from == to {
            return Ok(vec![from.to_string()]);
        }
        let (lo, hi) = if from < to { (from, to) } else { (to, from) };
        let mut path =
            self.canonical_path(lo, hi)
                .ok_or_else(|| AlignError::NodesDisconnected {
                    from: from.to_string(),
                    to: to.to_string(),
                })?;
        if from != lo {
            path.reverse();
        }
        Ok(path)
    }

    fn canonical_path(&self, src: &str, dst: &str) -> Option<Vec<String>> {
        let adj = self.adjacency();
        let dist_s = bfs(&adj, src);
        let dist_t = bfs(&adj, dst);
        let total = *dist_s.get(dst)?;
        let on_path = |u: &str| matches!((dist_s.get(u), dist_t.get(u)), (Some(a), Some(b)) if a + b == total);

        // Nodes of the shortest-path DAG grouped by distance from `src`.
        let mut layers: Vec<Vec<&str>> = vec![Vec::new(); total + 1];
        for (&n, &d) in &dist_s {
            if on_path(n) {
                layers[d].push(n);
            }
        }
        let successors: HashMap<&str, Vec<(&str, usize)>> = layers
            .iter()
            .flatten()
            .map(|&u| {
                let du = dist_s[u];
                let next = adj[u]
                    .iter()
                    .filter(|(v, _)| on_path(v) && dist_s[v] == du + 1)
                    .copied()
                    .collect();
                (u, next)
            })
            .collect();
        let dag_edges = |u: &str| successors[u].iter().copied();

        // Best achievable bottleneck (min inliers along the path) per node.
        let mut bottleneck: HashMap<&str, usize> = HashMap::new();
        bottleneck.insert(src, usize::MAX);
        for layer in &layers {
            for &u in layer {
                let Some(&bu) = bottleneck.get(u) else {
                    continue;
                };
                for (v, w) in dag_edges(u) {
                    let cand = bu.min(w);
                    let entry = bottleneck.entry(v).or_insert(0);
                    *entry = (*entry).max(cand);
                }
            }
        }
        let target_bottleneck = bottleneck[dst];

        // Which nodes can still reach `dst` using only edges that keep the bottleneck.
        let mut reaches: BTreeSet<&str> = BTreeSet::from([dst]);
        for layer in layers.iter().rev() {
            for &u in layer {
                if dag_edges(u).any(|(v, w)| w >= target_bottleneck && reaches.contains(v)) {
                    reaches.insert(u);
                }
            }
        }

        let mut path = vec![src.to_string()];
        let mut cur = src;
        while cur != dst {
            // `adj` lists are sorted by id, so the first admissible successor is the smallest.
            let (next, _) =
                dag_edges(cur).find(|&(v, w)| w >= target_bottleneck && reaches.contains(v))?;
            path.push(next.to_string());
            cur = next;
        }
        Some(path)
    }
}

fn unordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

fn bfs<'a>(
    adj: &BTreeMap<&'a str, Vec<(&'a str, usize)>>,
    start: &'a str,
) -> HashMap<&'a str, usize> {
    let mut dist = HashMap::from([(start, 0usize)]);
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        let du = dist[u];
        for &(v, _) in &adj[u] {
            if !dist.contains_key(v) {
                dist.insert(v, du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Runs the robust solver on every pair and keeps the successes as edges.
///
/// Each pair's RANSAC seed is derived from the configured seed and the pair
/// ids, so results do not depend on scheduling. `target_diagonals` supplies
/// the bounding-box diagonal of each target reconstruction for relative
/// thresholds; missing entries fall back to the correspondence extent.
pub fn build_alignment_graph(
    node_ids: &[String],
    pairwise: &BTreeMap<(String, String), Vec<Correspondence3D>>,
    cfg: &RansacConfig,
    target_diagonals: &HashMap<String, f64>,
) -> Result<(AlignmentGraph, Vec<EdgeFailure>), AlignError> {
    cfg.validate()?;
    let nodes: BTreeSet<String> = node_ids.iter().cloned().collect();
    for (a, b) in pairwise.keys() {
        for id in [a, b] {
            if !nodes.contains(id) {
                return Err(AlignError::UnknownNode(id.clone()));
            }
        }
    }
    let jobs: Vec<(&(String, String), &Vec<Correspondence3D>)> =
        pairwise.iter().filter(|((a, b), _)| a != b).collect();
    let results = par::map(&jobs, |((a, b), corr)| {
        let pair_cfg = RansacConfig {
            seed: labeled_seed(cfg.seed, &format!("{a}|{b}")),
            ..cfg.clone()
        };
        solve_similarity(corr, &pair_cfg, target_diagonals.get(b).copied())
    });

    let mut edges = Vec::new();
    let mut failures = Vec::new();
    let mut seen = BTreeSet::new();
    for (((a, b), _), result) in jobs.iter().zip(results) {
        if !seen.insert(unordered(a, b)) {
            return Err(AlignError::InvalidGraph(format!(
                "pair {a} - {b} supplied twice"
            )));
        }
        match result {
            Ok(fit) => edges.push(EdgeEstimate {
                from_id: a.clone(),
                to_id: b.clone(),
                transform: fit.transform,
                inlier_count: fit.inlier_count,
                total_count: fit.total,
                inlier_rms: fit.inlier_rms,
            }),
            Err(error) => failures.push(EdgeFailure {
                from_id: a.clone(),
                to_id: b.clone(),
                error,
            }),
        }
    }
    Ok((AlignmentGraph::new(nodes, edges)?, failures))
}

/// Transform mapping `from` coordinates into `to` coordinates, composed along
/// the preferred shortest path.
pub fn path_transform(
    graph: &AlignmentGraph,
    from: &str,
    to: &str,
) -> Result<SimilarityTransform3, AlignError> {
    let path = graph.shortest_path(from, to)?;
    let mut acc = SimilarityTransform3::identity();
    for hop in path.windows(2) {
        let t = graph
            .edge_transform(&hop[0], &hop[1])
            .expect("path follows edges");
        acc = t.compose(&acc);
    }
    Ok(acc)
}

/// Every reconstruction mapped into the reference frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    pub reference: String,
    /// id → transform from that reconstruction's frame into the reference frame.
    pub transforms: BTreeMap<String, SimilarityTransform3>,
    /// Nodes with no path to the reference.
    pub unregistered: Vec<String>,
}

pub fn register_all(graph: &AlignmentGraph, reference: &str) -> Result<Registration, AlignError> {
    if !graph.contains(reference) {
        return Err(AlignError::UnknownReference(reference.to_string()));
    }
    let ids: Vec<&String> = graph.nodes().iter().collect();
    let results = par::map(&ids, |id| path_transform(graph, id, reference));
    let mut transforms = BTreeMap::new();
    let mut unregistered = Vec::new();
    for (id, r) in ids.into_iter().zip(results) {
        match r {
            Ok(t) => {
                transforms.insert(id.clone(), t);
            }
            Err(AlignError::NodesDisconnected { .. }) => unregistered.push(id.clone()),
            Err(e) => return Err(e),
        }
    }
    Ok(Registration {
        reference: reference.to_string(),
        transforms,
        unregistered,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{random_point, random_transform};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn edge(a: &str, b: &str, t: SimilarityTransform3, inliers: usize) -> EdgeEstimate {
        EdgeEstimate {
            from_id: a.into(),
            to_id: b.into(),
            transform: t,
            inlier_count: inliers,
            total_count: inliers,
            inlier_rms: 0.0,
        }
    }

    /// Planted world→node transforms and the edge transforms they imply.
    fn planted(n: usize, seed: u64) -> Vec<SimilarityTransform3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| random_transform(&mut rng)).collect()
    }

    fn rel(w: &[SimilarityTransform3], a: usize, b: usize) -> SimilarityTransform3 {
        w[b].compose(&w[a].inverse())
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("n{i}")).collect()
    }

    #[test]
    fn identity_for_same_node() {
        let g = AlignmentGraph::new(ids(1), vec![]).unwrap();
        assert_eq!(
            path_transform(&g, "n0", "n0").unwrap(),
            SimilarityTransform3::identity()
        );
    }

    #[test]
    fn chain_composition_matches_direct_product() {
        let w = planted(3, 61);
        let g = AlignmentGraph::new(
            ids(3),
            vec![
                edge("n0", "n1", rel(&w, 0, 1), 20),
                edge("n2", "n1", rel(&w, 2, 1), 20),
            ],
        )
        .unwrap();
        let t = path_transform(&g, "n0", "n2").unwrap();
        // direct product oracle: world→n2 ∘ (world→n0)⁻¹
        let oracle = w[2].to_homogeneous() * w[0].to_homogeneous().try_inverse().unwrap();
        assert!((t.to_homogeneous() - oracle).amax() < 1e-8);
    }

    #[test]
    fn isolated_node_is_disconnected() {
        let w = planted(3, 62);
        let g = AlignmentGraph::new(ids(3), vec![edge("n0", "n1", rel(&w, 0, 1), 20)]).unwrap();
        assert!(matches!(
            path_transform(&g, "n0", "n2"),
            Err(AlignError::NodesDisconnected { .. })
        ));
        let reg = register_all(&g, "n0").unwrap();
        assert_eq!(reg.unregistered, vec!["n2".to_string()]);
        assert_eq!(reg.transforms.len(), 2);
        assert!(matches!(
            register_all(&g, "zz"),
            Err(AlignError::UnknownReference(_))
        ));
    }

    #[test]
    fn single_node_registration() {
        let g = AlignmentGraph::new(ids(1), vec![]).unwrap();
        let reg = register_all(&g, "n0").unwrap();
        assert_eq!(reg.transforms["n0"], SimilarityTransform3::identity());
    }

    #[test]
    fn tie_breaks_prefer_strong_then_lexicographic() {
        let w = planted(4, 63);
        // Two 2-hop routes from n0 to n3: via n1 (weak) and via n2 (strong).
        let edges = vec![
            edge("n0", "n1", rel(&w, 0, 1), 5),
            edge("n1", "n3", rel(&w, 1, 3), 50),
            edge("n0", "n2", rel(&w, 0, 2), 30),
            edge("n2", "n3", rel(&w, 2, 3), 30),
        ];
        let g = AlignmentGraph::new(ids(4), edges.clone()).unwrap();
        assert_eq!(g.shortest_path("n0", "n3").unwrap(), vec!["n0", "n2", "n3"]);
        assert_eq!(g.shortest_path("n3", "n0").unwrap(), vec!["n3", "n2", "n0"]);
        let mut even = edges;
        even[0].inlier_count = 30;
        even[0].total_count = 30;
        even[1].inlier_count = 30;
        even[1].total_count = 30;
        let g = AlignmentGraph::new(ids(4), even).unwrap();
        assert_eq!(g.shortest_path("n0", "n3").unwrap(), vec!["n0", "n1", "n3"]);
    }

    #[test]
    fn rejects_duplicate_and_dangling_edges() {
        let t = SimilarityTransform3::identity();
        assert!(
            AlignmentGraph::new(ids(2), vec![edge("n0", "n1", t, 3), edge("n1", "n0", t, 3)])
                .is_err()
        );
        assert!(AlignmentGraph::new(ids(2), vec![edge("n0", "n9", t, 3)]).is_err());
    }

    fn planted_correspondences(
        w: &[SimilarityTransform3],
        a: usize,
        b: usize,
        rng: &mut ChaCha8Rng,
        n: usize,
    ) -> Vec<Correspondence3D> {
        (0..n)
            .map(|_| {
                let world = random_point(rng, 1.0);
                Correspondence3D {
                    point_a: w[a].apply(&world),
                    point_b: w[b].apply(&world),
                    frame_a: "x".into(),
                    frame_b: "y".into(),
                }
            })
            .collect()
    }

    #[test]
    fn build_graph_topologies() {
        let w = planted(4, 64);
        let mut rng = ChaCha8Rng::seed_from_u64(65);
        let mut pairwise = BTreeMap::new();
        for (a, b) in [(0, 1), (1, 2), (0, 2)] {
            pairwise.insert(
                (format!("n{a}"), format!("n{b}")),
                planted_correspondences(&w, a, b, &mut rng, 30),
            );
        }
        let cfg = RansacConfig::default();
        let (g, failures) =
            build_alignment_graph(&ids(4), &pairwise, &cfg, &HashMap::new()).unwrap();
        assert_eq!(g.edges().len(), 3);
        assert!(failures.is_empty());
        assert!(g.contains("n3"));
        assert!(g
            .edge("n0", "n1")
            .unwrap()
            .transform
            .approx_eq(&rel(&w, 0, 1), 1e-8));

        pairwise.remove(&("n0".to_string(), "n2".to_string()));
        let (g, _) = build_alignment_graph(&ids(4), &pairwise, &cfg, &HashMap::new()).unwrap();
        assert_eq!(g.edges().len(), 2);
        assert!(g.edge("n0", "n2").is_none());
        assert_eq!(g.shortest_path("n0", "n2").unwrap().len(), 3);
    }

    #[test]
    fn five_node_chain_registration_and_invariants() {
        let w = planted(5, 66);
        let edges: Vec<_> = (0..4)
            .map(|i| {
                edge(
                    &format!("n{i}"),
                    &format!("n{}", i + 1),
                    rel(&w, i, i + 1),
                    20,
                )
            })
            .collect();
        let mut edges_with_cycle = edges.clone();
        edges_with_cycle.push(edge("n4", "n1", rel(&w, 4, 1), 15));
        for es in [edges, edges_with_cycle] {
            let g = AlignmentGraph::new(ids(5), es).unwrap();
            let reg = register_all(&g, "n0").unwrap();
            for i in 0..5 {
                assert!(reg.transforms[&format!("n{i}")].approx_eq(&rel(&w, i, 0), 1e-7));
            }
            // symmetry
            for a in 0..5 {
                for b in 0..5 {
                    let (x, y) = (format!("n{a}"), format!("n{b}"));
                    let round = path_transform(&g, &x, &y)
                        .unwrap()
                        .compose(&path_transform(&g, &y, &x).unwrap());
                    assert!(round.approx_eq(&SimilarityTransform3::identity(), 1e-9));
                }
            }
            // re-rooting equivariance
            let reg2 = register_all(&g, "n3").unwrap();
            let fixed = path_transform(&g, "n0", "n3").unwrap();
            for (id, t) in &reg.transforms {
                assert!(fixed.compose(t).approx_eq(&reg2.transforms[id], 1e-7));
            }
        }
    }
}
