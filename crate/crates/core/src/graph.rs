//! Network topology and the derived r-stage objects.
//!
//! A node `j` is an r-stage neighbour of `i` when the shortest path between
//! them has length exactly `r`. Everything the model equations need from the
//! graph is derived here: the stage neighbourhood sets `N_r(i)`, the stage
//! adjacency matrices `S_r`, the connection weight matrix `W` with
//! `w_ij = 1/|N_r(i)|`, and the per-stage masked weights `W ⊙ S_r`.

use std::collections::{BTreeSet, HashMap, VecDeque};

use nalgebra::DMatrix;

use crate::error::{GngarchError, Result};

/// Undirected, unweighted, loop-free graph over `d` nodes (indices `0..d-1`).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTopology {
    d: usize,
    /// Each edge stored once as `(min, max)`.
    edges: BTreeSet<(usize, usize)>,
    /// Optional external node labels (tickers); defaults to `"0", "1", ...`.
    labels: Vec<String>,
}

impl NetworkTopology {
    /// Build a topology from an edge list. Self-loops and out-of-range
    /// endpoints are rejected; duplicate edges collapse to one.
    pub fn new(d: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if d == 0 {
            return Err(GngarchError::Invalid("node count must be positive".into()));
        }
        let mut set = BTreeSet::new();
        for &(a, b) in edges {
            if a == b {
                return Err(GngarchError::Invalid(format!("self-loop at node {a}")));
            }
            if a >= d || b >= d {
                return Err(GngarchError::Invalid(format!(
                    "edge ({a},{b}) references a node >= d = {d}"
                )));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let labels = (0..d).map(|i| i.to_string()).collect();
        Ok(Self { d, edges: set, labels })
    }

    /// Build from labelled edges; node indices are assigned in first-seen
    /// order of the labels.
    pub fn from_labelled_edges(edges: &[(String, String)]) -> Result<Self> {
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut labels = Vec::new();
        let mut idx_edges = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            let mut id_of = |name: &String| -> usize {
                *index.entry(name.clone()).or_insert_with(|| {
                    labels.push(name.clone());
                    labels.len() - 1
                })
            };
            let ia = id_of(a);
            let ib = id_of(b);
            idx_edges.push((ia, ib));
        }
        let mut topo = Self::new(labels.len(), &idx_edges)?;
        topo.labels = labels;
        Ok(topo)
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.d {
            return Err(GngarchError::Dimension(format!(
                "{} labels for {} nodes",
                labels.len(),
                self.d
            )));
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn node_count(&self) -> usize {
        self.d
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    fn adjacency_lists(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.d];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }
}

/// The sets `N_r(i)` for `r = 1..=max_stage`, computed by BFS shortest-path
/// distance from every node.
#[derive(Debug, Clone)]
pub struct StageNeighborhoods {
    d: usize,
    max_stage: usize,
    /// `sets[r-1][i]` is `N_r(i)`, sorted.
    sets: Vec<Vec<Vec<usize>>>,
}

impl StageNeighborhoods {
    pub fn max_stage(&self) -> usize {
        self.max_stage
    }

    pub fn node_count(&self) -> usize {
        self.d
    }

    /// `N_r(i)`; empty when nothing is at distance exactly `r`.
    pub fn neighbours(&self, r: usize, i: usize) -> &[usize] {
        assert!(r >= 1 && r <= self.max_stage, "stage {r} out of range");
        &self.sets[r - 1][i]
    }
}

/// `r`-stage adjacency matrix: entry `(i,j)` is 1 iff `j ∈ N_r(i)`.
#[derive(Debug, Clone)]
pub struct StageAdjacency {
    pub r: usize,
    pub s: DMatrix<f64>,
}

/// Connection weights `w_ij = 1/|N_r(i)|` where `r` is the stage of `j`
/// relative to `i`; 0 for unreachable pairs. Asymmetric in general.
#[derive(Debug, Clone)]
pub struct ConnectionWeights {
    pub w: DMatrix<f64>,
}

/// BFS from every source up to `r_max`. Unreachable pairs simply never show
/// up in any set, so disconnected graphs are fine.
pub fn stage_neighborhoods(topology: &NetworkTopology, r_max: usize) -> Result<StageNeighborhoods> {
    if r_max < 1 {
        return Err(GngarchError::Invalid("r_max must be >= 1".into()));
    }
    let d = topology.node_count();
    let adj = topology.adjacency_lists();
    let mut sets = vec![vec![Vec::new(); d]; r_max];
    for src in 0..d {
        let mut dist = vec![usize::MAX; d];
        dist[src] = 0;
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            if dist[u] >= r_max {
                continue;
            }
            for &v in &adj[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    sets[dist[v] - 1][src].push(v);
                    queue.push_back(v);
                }
            }
        }
        for stage in sets.iter_mut() {
            stage[src].sort_unstable();
        }
    }
    Ok(StageNeighborhoods { d, max_stage: r_max, sets })
}

/// The `S_r` matrix for one stage of a computed neighbourhood set.
pub fn stage_adjacency(nbhd: &StageNeighborhoods, r: usize) -> Result<StageAdjacency> {
    if r < 1 || r > nbhd.max_stage {
        return Err(GngarchError::Invalid(format!(
            "stage {r} out of range 1..={}",
            nbhd.max_stage
        )));
    }
    let d = nbhd.d;
    let mut s = DMatrix::zeros(d, d);
    for i in 0..d {
        for &j in nbhd.neighbours(r, i) {
            s[(i, j)] = 1.0;
        }
    }
    Ok(StageAdjacency { r, s })
}

/// Connection weight matrix over all stages of `nbhd`.
pub fn connection_weights(nbhd: &StageNeighborhoods) -> ConnectionWeights {
    let d = nbhd.d;
    let mut w = DMatrix::zeros(d, d);
    for r in 1..=nbhd.max_stage {
        for i in 0..d {
            let set = nbhd.neighbours(r, i);
            if set.is_empty() {
                continue;
            }
            let weight = 1.0 / set.len() as f64;
            for &j in set {
                w[(i, j)] = weight;
            }
        }
    }
    ConnectionWeights { w }
}

/// Hadamard product `W ⊙ S_r`: row `i` holds `w_ij` for `j ∈ N_r(i)` and 0
/// elsewhere, so each row sums to 1 (or 0 when `N_r(i)` is empty).
pub fn masked_weights(weights: &ConnectionWeights, stage: &StageAdjacency) -> Result<DMatrix<f64>> {
    if weights.w.nrows() != stage.s.nrows() {
        return Err(GngarchError::Dimension(format!(
            "W is {}x{} but S_{} is {}x{}",
            weights.w.nrows(),
            weights.w.ncols(),
            stage.r,
            stage.s.nrows(),
            stage.s.ncols()
        )));
    }
    Ok(weights.w.component_mul(&stage.s))
}

/// Everything the model recursion needs from the graph, precomputed:
/// the masked weight matrices `W ⊙ S_r` for `r = 1..=max_stage`.
#[derive(Debug, Clone)]
pub struct NetworkMasks {
    d: usize,
    max_stage: usize,
    masks: Vec<DMatrix<f64>>,
    weights: ConnectionWeights,
}

impl NetworkMasks {
    /// Derive the masks from a topology. `max_stage = 0` is allowed and
    /// yields no masks (a model with no neighbour terms).
    pub fn build(topology: &NetworkTopology, max_stage: usize) -> Result<Self> {
        let d = topology.node_count();
        if max_stage == 0 {
            let w = ConnectionWeights { w: DMatrix::zeros(d, d) };
            return Ok(Self { d, max_stage, masks: Vec::new(), weights: w });
        }
        let nbhd = stage_neighborhoods(topology, max_stage)?;
        let weights = connection_weights(&nbhd);
        let mut masks = Vec::with_capacity(max_stage);
        for r in 1..=max_stage {
            let s = stage_adjacency(&nbhd, r)?;
            masks.push(masked_weights(&weights, &s)?);
        }
        Ok(Self { d, max_stage, masks, weights })
    }

    pub fn node_count(&self) -> usize {
        self.d
    }

    pub fn max_stage(&self) -> usize {
        self.max_stage
    }

    /// `W ⊙ S_r` for `1 <= r <= max_stage`.
    pub fn mask(&self, r: usize) -> Result<&DMatrix<f64>> {
        self.masks.get(r.wrapping_sub(1)).ok_or_else(|| {
            GngarchError::Invalid(format!("no mask computed for stage {r} (max {})", self.max_stage))
        })
    }

    pub fn weights(&self) -> &ConnectionWeights {
        &self.weights
    }
}
