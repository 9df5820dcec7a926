//! Areal adjacency graphs and location-by-location distance matrices.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// IUGG mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// A labelled location with an optional centroid in decimal degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub label: String,
    pub centroid: Option<Centroid>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Centroid {
    pub latitude: f64,
    pub longitude: f64,
}

/// Undirected contiguity graph over areal units.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGraph {
    nodes: Vec<Node>,
    edges: Vec<(usize, usize)>,
    neighbours: Vec<Vec<usize>>,
}

impl SpatialGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn labels(&self) -> Vec<String> {
        self.nodes.iter().map(|n| n.label.clone()).collect()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.label == label)
    }

    /// Deduplicated edges as `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbours(&self, v: usize) -> &[usize] {
        &self.neighbours[v]
    }
}

/// Builds a graph from labelled nodes and label pairs. Duplicate edges
/// (in either orientation) collapse to one.
pub fn build_graph(nodes: Vec<Node>, edges: &[(String, String)]) -> Result<SpatialGraph> {
    let mut lookup = HashMap::with_capacity(nodes.len());
    for (i, n) in nodes.iter().enumerate() {
        if lookup.insert(n.label.clone(), i).is_some() {
            return Err(Error::DuplicateNode(n.label.clone()));
        }
    }
    let mut set = BTreeSet::new();
    for (a, b) in edges {
        let ia = *lookup.get(a).ok_or_else(|| Error::UnknownNode(a.clone()))?;
        let ib = *lookup.get(b).ok_or_else(|| Error::UnknownNode(b.clone()))?;
        if ia == ib {
            return Err(Error::SelfLoop(a.clone()));
        }
        set.insert((ia.min(ib), ia.max(ib)));
    }
    let edges: Vec<(usize, usize)> = set.into_iter().collect();
    let mut neighbours = vec![Vec::new(); nodes.len()];
    for &(a, b) in &edges {
        neighbours[a].push(b);
        neighbours[b].push(a);
    }
    Ok(SpatialGraph { nodes, edges, neighbours })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceSource {
    /// Hop counts; disconnected pairs are `f64::INFINITY`.
    Graph,
    /// Kilometres.
    GreatCircle,
    /// Rescaled so the largest finite entry hits a target.
    Normalized,
}

impl DistanceSource {
    pub fn as_str(self) -> &'static str {
        match self {
            DistanceSource::Graph => "graph",
            DistanceSource::GreatCircle => "great-circle",
            DistanceSource::Normalized => "normalized",
        }
    }
}

impl fmt::Display for DistanceSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Dense symmetric J×J distance matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
    source: DistanceSource,
}

impl DistanceMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>, source: DistanceSource) -> Result<Self> {
        let n = rows.len();
        let mut values = Vec::with_capacity(n * n);
        for r in rows {
            if r.len() != n {
                return Err(Error::Shape(format!("row of length {} in {n}x{n} matrix", r.len())));
            }
            values.extend(r);
        }
        Ok(Self { n, values, source })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn source(&self) -> DistanceSource {
        self.source
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    /// Largest finite entry.
    pub fn max_finite(&self) -> f64 {
        self.values.iter().copied().filter(|x| x.is_finite()).fold(0.0, f64::max)
    }

    /// Smallest strictly positive finite entry, if any.
    pub fn min_positive(&self) -> Option<f64> {
        self.values
            .iter()
            .copied()
            .filter(|&x| x > 0.0 && x.is_finite())
            .min_by(f64::total_cmp)
    }
}

/// All-pairs hop distances by breadth-first search from every vertex.
pub fn graph_distance_matrix(graph: &SpatialGraph) -> DistanceMatrix {
    let n = graph.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|src| {
            let mut dist = vec![f64::INFINITY; n];
            dist[src] = 0.0;
            let mut queue = VecDeque::from([src]);
            while let Some(u) = queue.pop_front() {
                for &v in graph.neighbours(u) {
                    if dist[v].is_infinite() {
                        dist[v] = dist[u] + 1.0;
                        queue.push_back(v);
                    }
                }
            }
            dist
        })
        .collect();
    DistanceMatrix { n, values: rows.concat(), source: DistanceSource::Graph }
}

/// Haversine distance in kilometres.
pub fn haversine_km(a: Centroid, b: Centroid) -> f64 {
    let (phi1, phi2) = (a.latitude.to_radians(), b.latitude.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.longitude - a.longitude).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Great-circle distances between node centroids.
pub fn great_circle_matrix(graph: &SpatialGraph) -> Result<DistanceMatrix> {
    let cents: Vec<Centroid> = graph
        .nodes()
        .iter()
        .map(|n| n.centroid.ok_or_else(|| Error::MissingCentroid(n.label.clone())))
        .collect::<Result<_>>()?;
    let n = cents.len();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = haversine_km(cents[i], cents[j]);
            values[i * n + j] = d;
            values[j * n + i] = d;
        }
    }
    Ok(DistanceMatrix { n, values, source: DistanceSource::GreatCircle })
}

/// Scales every finite entry so the largest finite entry equals `target`.
pub fn normalize_to_max(matrix: &DistanceMatrix, target: f64) -> Result<DistanceMatrix> {
    if !(target > 0.0 && target.is_finite()) {
        return Err(Error::InvalidScheme(format!("normalisation target {target} must be positive")));
    }
    let max = matrix.max_finite();
    if max <= 0.0 {
        return Err(Error::AllZeroMatrix);
    }
    let scale = target / max;
    let values = matrix
        .values
        .iter()
        .map(|&x| if x.is_finite() { if x == max { target } else { x * scale } } else { x })
        .collect();
    Ok(DistanceMatrix { n: matrix.n, values, source: DistanceSource::Normalized })
}
