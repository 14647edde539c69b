//! Nearest-neighbour matching and the geodesic error protocol.
//!
//! Errors are edge-graph (Dijkstra) geodesics on the target mesh divided by
//! the square root of its surface area.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::mesh::TriMesh;

#[derive(Debug, Error, PartialEq)]
pub enum CorrespError {
    #[error("descriptor matrix is empty")]
    EmptyDescriptors,
    #[error("descriptor widths differ: source {source_dim}, target {target_dim}")]
    DimensionMismatch { source_dim: usize, target_dim: usize },
    #[error("{} vertices unreachable from vertex {source_vertex} (first: {})", unreachable.len(), unreachable[0])]
    DisconnectedMesh { source_vertex: usize, unreachable: Vec<usize> },
    #[error("vertex index {index} out of range (< {bound})")]
    IndexOutOfRange { index: usize, bound: usize },
    #[error("map has {got} entries, ground truth has {expected}")]
    LengthMismatch { expected: usize, got: usize },
}

/// For each source row, the target row at minimal squared L2 distance; the
/// smallest index wins ties.
pub fn match_nn(source: &DMatrix<f64>, target: &DMatrix<f64>) -> Result<Vec<usize>, CorrespError> {
    if source.nrows() == 0 || target.nrows() == 0 || source.ncols() == 0 {
        return Err(CorrespError::EmptyDescriptors);
    }
    if source.ncols() != target.ncols() {
        return Err(CorrespError::DimensionMismatch { source_dim: source.ncols(), target_dim: target.ncols() });
    }
    let d = source.ncols();
    // row-major copies keep the inner loop contiguous
    let t_rows: Vec<f64> = target.transpose().as_slice().to_vec();
    let s_rows: Vec<f64> = source.transpose().as_slice().to_vec();
    Ok(s_rows
        .par_chunks(d)
        .map(|s| {
            let mut best = (f64::INFINITY, 0usize);
            for (j, t) in t_rows.chunks(d).enumerate() {
                let dist: f64 = s.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
                if dist < best.0 {
                    best = (dist, j);
                }
            }
            best.1
        })
        .collect())
}

#[derive(Clone, Copy, PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source shortest paths on a weighted graph; unreachable vertices get
/// `f64::INFINITY`.
pub fn dijkstra(adj: &[Vec<(usize, f64)>], source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; adj.len()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Entry(0.0, source));
    while let Some(Entry(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, w) in &adj[u] {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Entry(nd, v));
            }
        }
    }
    dist
}

/// Edge graph with Euclidean edge lengths.
pub fn edge_graph(mesh: &TriMesh) -> Vec<Vec<(usize, f64)>> {
    let v = mesh.vertices();
    let mut adj = vec![Vec::new(); mesh.vertex_count()];
    for &[a, b] in mesh.edges() {
        let w = (v[a] - v[b]).norm();
        adj[a].push((b, w));
        adj[b].push((a, w));
    }
    adj
}

fn checked(dist: Vec<f64>, source: usize) -> Result<Vec<f64>, CorrespError> {
    let unreachable: Vec<usize> = dist.iter().enumerate().filter(|(_, d)| d.is_infinite()).map(|(i, _)| i).collect();
    if unreachable.is_empty() {
        Ok(dist)
    } else {
        Err(CorrespError::DisconnectedMesh { source_vertex: source, unreachable })
    }
}

pub fn geodesic_from(mesh: &TriMesh, source: usize) -> Result<Vec<f64>, CorrespError> {
    if source >= mesh.vertex_count() {
        return Err(CorrespError::IndexOutOfRange { index: source, bound: mesh.vertex_count() });
    }
    checked(dijkstra(&edge_graph(mesh), source), source)
}

/// Geodesic rows computed on demand and kept for repeated evaluation on the
/// same target mesh.
pub struct DistanceTable {
    adj: Vec<Vec<(usize, f64)>>,
    scale: f64,
    rows: HashMap<usize, Vec<f64>>,
}

impl DistanceTable {
    pub fn new(mesh: &TriMesh) -> Self {
        DistanceTable { adj: edge_graph(mesh), scale: mesh.total_area().sqrt(), rows: HashMap::new() }
    }

    pub fn vertex_count(&self) -> usize {
        self.adj.len()
    }

    /// `sqrt(total area)` of the mesh.
    pub fn normalizer(&self) -> f64 {
        self.scale
    }

    /// Makes sure the rows for `sources` are cached.
    pub fn prepare(&mut self, sources: &[usize]) -> Result<(), CorrespError> {
        let mut todo: Vec<usize> = sources.iter().copied().filter(|s| !self.rows.contains_key(s)).collect();
        todo.sort_unstable();
        todo.dedup();
        if let Some(&bad) = todo.iter().find(|&&s| s >= self.adj.len()) {
            return Err(CorrespError::IndexOutOfRange { index: bad, bound: self.adj.len() });
        }
        let adj = &self.adj;
        let rows: Vec<(usize, Vec<f64>)> = todo.par_iter().map(|&s| (s, dijkstra(adj, s))).collect();
        for (s, row) in rows {
            let row = checked(row, s)?;
            self.rows.insert(s, row);
        }
        Ok(())
    }

    pub fn row(&mut self, source: usize) -> Result<&[f64], CorrespError> {
        self.prepare(&[source])?;
        Ok(&self.rows[&source])
    }
}

/// `0, 0.0025, ..., 0.25`.
pub fn default_radii() -> Vec<f64> {
    (0..=100).map(|i| i as f64 * 0.0025).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrespondenceResult {
    pub map: Vec<usize>,
    /// Per source vertex, normalized by `sqrt(area)` of the target.
    pub errors: Vec<f64>,
    /// Mean error times 100.
    pub age_x100: f64,
    pub cge: Vec<(f64, f64)>,
}

/// Fraction of `errors` at most `r`, for each radius.
pub fn cumulative_curve(errors: &[f64], radii: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    radii
        .iter()
        .map(|&r| {
            let count = sorted.partition_point(|&e| e <= r);
            (r, count as f64 / sorted.len().max(1) as f64)
        })
        .collect()
}

pub fn evaluate_with(corr: &[usize], gt: &[usize], table: &mut DistanceTable, radii: &[f64]) -> Result<CorrespondenceResult, CorrespError> {
    if corr.len() != gt.len() {
        return Err(CorrespError::LengthMismatch { expected: gt.len(), got: corr.len() });
    }
    let n = table.vertex_count();
    if let Some(&bad) = corr.iter().chain(gt).find(|&&i| i >= n) {
        return Err(CorrespError::IndexOutOfRange { index: bad, bound: n });
    }
    table.prepare(gt)?;
    let scale = table.normalizer();
    let errors: Vec<f64> = corr.iter().zip(gt).map(|(&p, &g)| table.rows[&g][p] / scale).collect();
    let age_x100 = if errors.is_empty() { 0.0 } else { 100.0 * errors.iter().sum::<f64>() / errors.len() as f64 };
    let cge = cumulative_curve(&errors, radii);
    Ok(CorrespondenceResult { map: corr.to_vec(), errors, age_x100, cge })
}

pub fn evaluate(corr: &[usize], gt: &[usize], target: &TriMesh, radii: &[f64]) -> Result<CorrespondenceResult, CorrespError> {
    evaluate_with(corr, gt, &mut DistanceTable::new(target), radii)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{icosphere, planar_grid};

    #[test]
    fn nn_examples() {
        let x = DMatrix::from_row_slice(4, 2, &[0.0, 1.0, 2.0, 2.0, 0.0, 1.0, 5.0, 5.0]);
        // rows 0 and 2 coincide: both map to 0
        assert_eq!(match_nn(&x, &x).unwrap(), vec![0, 1, 0, 3]);
        let y = DMatrix::from_row_slice(4, 2, &[0.0, 1.0, 2.0, 2.0, 3.0, 1.0, 5.0, 5.0]);
        assert_eq!(match_nn(&y, &y).unwrap(), vec![0, 1, 2, 3]);
        let s = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let t = DMatrix::from_column_slice(2, 1, &[0.9, 0.1]);
        assert_eq!(match_nn(&s, &t).unwrap(), vec![1, 0]);
        // relabeling equivariance
        let perm = [2, 0, 3, 1];
        let yp = y.select_rows(perm.iter());
        let m = match_nn(&y, &yp).unwrap();
        for (i, &j) in m.iter().enumerate() {
            assert_eq!(perm[j], i);
        }
        assert_eq!(match_nn(&DMatrix::zeros(0, 2), &y), Err(CorrespError::EmptyDescriptors));
        assert!(matches!(match_nn(&s, &y), Err(CorrespError::DimensionMismatch { .. })));
    }

    #[test]
    fn path_distances() {
        let adj = vec![vec![(1, 1.0)], vec![(0, 1.0), (2, 2.0)], vec![(1, 2.0)]];
        assert_eq!(dijkstra(&adj, 0), vec![0.0, 1.0, 3.0]);
    }

    fn bellman_ford(adj: &[Vec<(usize, f64)>], s: usize) -> Vec<f64> {
        let mut d = vec![f64::INFINITY; adj.len()];
        d[s] = 0.0;
        for _ in 0..adj.len() {
            for u in 0..adj.len() {
                for &(v, w) in &adj[u] {
                    if d[u] + w < d[v] {
                        d[v] = d[u] + w;
                    }
                }
            }
        }
        d
    }

    #[test]
    fn grid_matches_bellman_ford() {
        let grid = planar_grid(9, 9, 0.37).unwrap();
        assert_eq!(grid.vertex_count(), 100);
        let d = geodesic_from(&grid, 0).unwrap();
        assert_eq!(d, bellman_ford(&edge_graph(&grid), 0));
        assert_eq!(d[99], bellman_ford(&edge_graph(&grid), 99)[0]);
    }

    #[test]
    fn triangle_inequality() {
        let m = icosphere(2).unwrap();
        let mut t = DistanceTable::new(&m);
        for (a, b, c) in [(0, 50, 100), (3, 161, 7), (40, 41, 150)] {
            let ab = t.row(a).unwrap()[b];
            let ac = t.row(a).unwrap()[c];
            let bc = t.row(b).unwrap()[c];
            assert!(ac <= ab + bc + 1e-12);
        }
    }

    #[test]
    fn evaluation_examples() {
        let m = icosphere(2).unwrap();
        let n = m.vertex_count();
        let ident: Vec<usize> = (0..n).collect();
        let r = evaluate(&ident, &ident, &m, &default_radii()).unwrap();
        assert_eq!(r.age_x100, 0.0);
        assert!(r.cge.iter().all(|&(_, f)| f == 1.0));
        assert_eq!(r.cge.len(), 101);
        assert!((r.cge[100].0 - 0.25).abs() < 1e-15);

        let curve = cumulative_curve(&[0.0, 0.0, 0.5], &[0.0, 0.25, 1.0]);
        let fr: Vec<f64> = curve.iter().map(|c| c.1).collect();
        assert_eq!(fr, vec![2.0 / 3.0, 2.0 / 3.0, 1.0]);

        let shifted: Vec<usize> = (0..n).map(|i| (i + 5) % n).collect();
        let a = evaluate(&shifted, &ident, &m, &default_radii()).unwrap();
        assert!(a.age_x100 > 0.0);
        assert!(a.cge.windows(2).all(|w| w[0].1 <= w[1].1));
        let big = m.map_vertices(|p| p * 3.5).unwrap();
        let b = evaluate(&shifted, &ident, &big, &default_radii()).unwrap();
        for (x, y) in a.errors.iter().zip(&b.errors) {
            assert!((x - y).abs() < 1e-9);
        }
        assert!(matches!(evaluate(&[n], &[0], &m, &[0.0]), Err(CorrespError::IndexOutOfRange { .. })));
    }

    #[test]
    fn disconnected_reported() {
        let a = icosphere(0).unwrap();
        let mut v = a.vertices().to_vec();
        v.extend(a.vertices().iter().map(|p| p + crate::mesh::Vec3::new(5.0, 0.0, 0.0)));
        let mut f = a.faces().to_vec();
        f.extend(a.faces().iter().map(|t| [t[0] + 12, t[1] + 12, t[2] + 12]));
        let two = TriMesh::new(v, f).unwrap();
        match geodesic_from(&two, 0) {
            Err(CorrespError::DisconnectedMesh { unreachable, .. }) => assert_eq!(unreachable, (12..24).collect::<Vec<_>>()),
            other => panic!("{other:?}"),
        }
    }
}
