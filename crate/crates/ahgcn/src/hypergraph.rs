//! Location- and content-based hyperedge construction and the symmetric
//! normalized hypergraph operator.

use std::io::Write;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::sphere::{angular_distance, SphereCoord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    Location,
    Content,
}

/// Binary node-by-hyperedge incidence structure. Columns are hyperedges;
/// all-zero columns are dropped on construction.
#[derive(Debug, Clone)]
pub struct IncidenceMatrix {
    n_nodes: usize,
    entries: Array2<f64>,
    kinds: Vec<EdgeKind>,
}

impl IncidenceMatrix {
    pub fn new(entries: Array2<f64>, kinds: Vec<EdgeKind>) -> Result<Self> {
        let (n, m) = entries.dim();
        if kinds.len() != m {
            return Err(Error::Shape(format!(
                "{m} hyperedge columns but {} kind labels",
                kinds.len()
            )));
        }
        if entries.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidArgument(
                "incidence entries must be 0 or 1".into(),
            ));
        }
        let keep: Vec<usize> = (0..m)
            .filter(|&j| entries.column(j).sum() > 0.0)
            .collect();
        let entries = if keep.len() == m {
            entries
        } else {
            let mut kept = Array2::zeros((n, keep.len()));
            for (out, &j) in keep.iter().enumerate() {
                kept.column_mut(out).assign(&entries.column(j));
            }
            kept
        };
        let kinds = keep.iter().map(|&j| kinds[j]).collect();
        Ok(IncidenceMatrix {
            n_nodes: n,
            entries,
            kinds,
        })
    }

    /// An incidence structure with zero hyperedges on `n` nodes.
    pub fn empty(n: usize) -> Self {
        IncidenceMatrix {
            n_nodes: n,
            entries: Array2::zeros((n, 0)),
            kinds: Vec::new(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.entries.ncols()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn kinds(&self) -> &[EdgeKind] {
        &self.kinds
    }

    /// Node indices belonging to hyperedge `col`.
    pub fn members(&self, col: usize) -> Vec<usize> {
        self.entries
            .column(col)
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1.0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn node_degrees(&self) -> Array1<f64> {
        self.entries.sum_axis(ndarray::Axis(1))
    }

    pub fn edge_degrees(&self) -> Array1<f64> {
        self.entries.sum_axis(ndarray::Axis(0))
    }

    /// CSV dump: one row per node, columns named `loc_*` / `con_*` in order.
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        let mut loc = 0;
        let mut con = 0;
        let header: Vec<String> = self
            .kinds
            .iter()
            .map(|k| match k {
                EdgeKind::Location => {
                    loc += 1;
                    format!("loc_{}", loc - 1)
                }
                EdgeKind::Content => {
                    con += 1;
                    format!("con_{}", con - 1)
                }
            })
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.n_nodes {
            let row: Vec<String> = (0..self.n_edges())
                .map(|j| format!("{}", self.entries[[i, j]] as u8))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// One hyperedge per viewport, containing every viewport within angular
/// distance `delta` of the centroid (the centroid itself always qualifies).
pub fn build_location_hyperedges(centers: &[SphereCoord], delta: f64) -> Result<IncidenceMatrix> {
    let n = centers.len();
    if n == 0 {
        return Err(Error::InvalidArgument(
            "need at least one viewport center".into(),
        ));
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "distance threshold must be positive, got {delta}"
        )));
    }
    let mut entries = Array2::zeros((n, n));
    for i in 0..n {
        for p in 0..n {
            if angular_distance(centers[i], centers[p]) <= delta {
                entries[[p, i]] = 1.0;
            }
        }
    }
    IncidenceMatrix::new(entries, vec![EdgeKind::Location; n])
}

/// Cosine similarity with a zero-norm guard: `x.y / max(|x||y|, 1e-12)`.
pub fn cosine_similarity(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "cosine similarity over lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let nx: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let ny: f64 = y.iter().map(|a| a * a).sum::<f64>().sqrt();
    Ok(dot / (nx * ny).max(1e-12))
}

/// One hyperedge per viewport, containing the centroid plus its `k` most
/// cosine-similar other viewports (ties to the lower index). `k = 0`
/// disables content hyperedges and yields an empty structure.
pub fn build_content_hyperedges(features: &Array2<f64>, k: usize) -> Result<IncidenceMatrix> {
    let n = features.nrows();
    if k + 1 > n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} out of range for {n} nodes (need k <= n - 1)"
        )));
    }
    if k == 0 {
        return Ok(IncidenceMatrix::empty(n));
    }
    let mut entries = Array2::zeros((n, n));
    for i in 0..n {
        let xi = features.row(i);
        let xi = xi.as_slice().expect("row of standard-layout matrix");
        let mut ranked: Vec<(usize, f64)> = (0..n)
            .filter(|&p| p != i)
            .map(|p| {
                let xp = features.row(p);
                let sim = cosine_similarity(xi, xp.as_slice().unwrap()).expect("equal lengths");
                (p, sim)
            })
            .collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        entries[[i, i]] = 1.0;
        for &(p, _) in ranked.iter().take(k) {
            entries[[p, i]] = 1.0;
        }
    }
    IncidenceMatrix::new(entries, vec![EdgeKind::Content; n])
}

/// Column-wise concatenation; parts without hyperedges contribute nothing.
pub fn concat_hypergraphs(parts: &[IncidenceMatrix]) -> Result<IncidenceMatrix> {
    let Some(first) = parts.first() else {
        return Err(Error::InvalidArgument("no hypergraph parts given".into()));
    };
    let n = first.n_nodes;
    let mut kinds = Vec::new();
    let mut total = 0;
    for p in parts {
        if p.n_nodes != n {
            return Err(Error::Shape(format!(
                "cannot concatenate hypergraphs on {n} and {} nodes",
                p.n_nodes
            )));
        }
        total += p.n_edges();
        kinds.extend_from_slice(&p.kinds);
    }
    let mut entries = Array2::zeros((n, total));
    let mut at = 0;
    for p in parts {
        for j in 0..p.n_edges() {
            entries.column_mut(at).assign(&p.entries.column(j));
            at += 1;
        }
    }
    IncidenceMatrix::new(entries, kinds)
}

/// The symmetric normalized propagation operator derived from an incidence
/// matrix, with its node and edge degree diagonals.
#[derive(Debug, Clone)]
pub struct NormalizedOperator {
    matrix: Array2<f64>,
    node_degrees: Array1<f64>,
    edge_degrees: Array1<f64>,
}

impl NormalizedOperator {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn node_degrees(&self) -> &Array1<f64> {
        &self.node_degrees
    }

    pub fn edge_degrees(&self) -> &Array1<f64> {
        &self.edge_degrees
    }

    pub fn n_nodes(&self) -> usize {
        self.matrix.nrows()
    }

    /// CSV dump of the dense operator, one row per node.
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        let n = self.n_nodes();
        let header: Vec<String> = (0..n).map(|i| format!("node_{i}")).collect();
        writeln!(w, "{}", header.join(","))?;
        for i in 0..n {
            let row: Vec<String> = (0..n).map(|j| format!("{}", self.matrix[[i, j]])).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Normalize an incidence structure into the dense symmetric operator
/// `Dv^{-1/2} E De^{-1} E^T Dv^{-1/2}`. Fails if any node belongs to no
/// hyperedge.
pub fn normalize(incidence: &IncidenceMatrix) -> Result<NormalizedOperator> {
    let node_degrees = incidence.node_degrees();
    if let Some(node) = node_degrees.iter().position(|&d| d == 0.0) {
        return Err(Error::IsolatedNode { node });
    }
    let edge_degrees = incidence.edge_degrees();

    // E De^{-1} E^T, then a symmetric Dv^{-1/2} scaling. Scaling with the
    // product s_i * s_k keeps the result bitwise symmetric.
    let mut scaled = incidence.entries().clone();
    for (j, mut col) in scaled.columns_mut().into_iter().enumerate() {
        col.mapv_inplace(|v| v / edge_degrees[j]);
    }
    let mut matrix = scaled.dot(&incidence.entries().t());
    let inv_sqrt: Vec<f64> = node_degrees.iter().map(|d| 1.0 / d.sqrt()).collect();
    let n = incidence.n_nodes();
    for i in 0..n {
        for k in 0..n {
            matrix[[i, k]] *= inv_sqrt[i] * inv_sqrt[k];
        }
    }
    Ok(NormalizedOperator {
        matrix,
        node_degrees,
        edge_degrees,
    })
}
