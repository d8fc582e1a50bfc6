//! Sparse SPD matrix storage (CSR, both triangles), MatrixMarket I/O,
//! block extraction, and cluster quotient-graph construction.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kernels::DenseMatrix;

/// Symmetric positive-definite sparse matrix in CSR form.
///
/// Both triangles are stored explicitly: elimination reads row and column
/// slices all the time, and the memory doubling buys much simpler code.
/// Optional per-index coordinates ride along for geometric partitioning.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSpdMatrix {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
    coords: Option<Vec<[f64; 3]>>,
}

/// Disjoint clusters covering all indices `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub clusters: Vec<Vec<usize>>,
    pub index_to_cluster: Vec<usize>,
}

/// Cluster adjacency: p and q are neighbors iff the block A(π_p, π_q)
/// has a structural nonzero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuotientGraph {
    pub neighbors: Vec<BTreeSet<usize>>,
}

const SYMMETRY_RTOL: f64 = 1e-12;

impl SparseSpdMatrix {
    /// Builds from (row, col, value) triplets, 0-based.
    ///
    /// Entries may be given on one triangle (the mirror is materialized) or
    /// both (values must agree within 1e-12 relative). Duplicate positions
    /// are summed. Exact zeros off the diagonal are dropped so structural
    /// nonzero means numerical nonzero.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut entries: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for &(i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(Error::IndexOutOfRange {
                    index: i.max(j),
                    dim: n,
                });
            }
            if !v.is_finite() {
                return Err(Error::invalid(format!("entry ({i}, {j}) is {v}")));
            }
            *entries.entry((i, j)).or_insert(0.0) += v;
        }
        for (&(i, j), &v) in entries.clone().iter() {
            if i == j {
                continue;
            }
            match entries.get(&(j, i)) {
                Some(&w) => {
                    if (v - w).abs() > SYMMETRY_RTOL * v.abs().max(w.abs()) {
                        return Err(Error::NotSymmetric {
                            row: i,
                            col: j,
                            value: v,
                            transposed: w,
                        });
                    }
                }
                None => {
                    entries.insert((j, i), v);
                }
            }
        }
        for i in 0..n {
            let d = entries.get(&(i, i)).copied().unwrap_or(0.0);
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::NonPositiveDiagonal { index: i, value: d });
            }
        }

        let mut row_offsets = vec![0usize; n + 1];
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        for (&(i, j), &v) in entries.iter() {
            if i != j && v == 0.0 {
                continue;
            }
            row_offsets[i + 1] += 1;
            col_indices.push(j);
            values.push(v);
        }
        for i in 0..n {
            row_offsets[i + 1] += row_offsets[i];
        }
        Ok(SparseSpdMatrix {
            n,
            row_offsets,
            col_indices,
            values,
            coords: None,
        })
    }

    pub fn with_coords(mut self, coords: Vec<[f64; 3]>) -> Result<Self> {
        if coords.len() != self.n {
            return Err(Error::dim(format!(
                "{} coordinates for a dimension-{} matrix",
                coords.len(),
                self.n
            )));
        }
        self.coords = Some(coords);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Stored entries, counting both triangles.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn coords(&self) -> Option<&[[f64; 3]]> {
        self.coords.as_deref()
    }

    /// CSR row slice as (column indices, values).
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.row_offsets[i];
        let hi = self.row_offsets[i + 1];
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(pos) => vals[pos],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n, "matvec dimension");
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (&j, &v) in cols.iter().zip(vals) {
                acc += v * x[j];
            }
            y[i] = acc;
        }
        y
    }

    /// Dense copy of the submatrix on `rows × cols`.
    pub fn extract_block(&self, rows: &[usize], cols: &[usize]) -> Result<DenseMatrix> {
        for &idx in rows.iter().chain(cols) {
            if idx >= self.n {
                return Err(Error::IndexOutOfRange {
                    index: idx,
                    dim: self.n,
                });
            }
        }
        let mut col_pos: BTreeMap<usize, usize> = BTreeMap::new();
        for (pos, &c) in cols.iter().enumerate() {
            col_pos.insert(c, pos);
        }
        let mut out = DenseMatrix::zeros(rows.len(), cols.len());
        for (r, &i) in rows.iter().enumerate() {
            let (cs, vs) = self.row(i);
            for (&j, &v) in cs.iter().zip(vs) {
                if let Some(&c) = col_pos.get(&j) {
                    out.set(r, c, v);
                }
            }
        }
        Ok(out)
    }

    /// Full dense copy, for small oracles and tests.
    pub fn dense(&self) -> DenseMatrix {
        let all: Vec<usize> = (0..self.n).collect();
        self.extract_block(&all, &all).expect("full range is valid")
    }
}

impl Partition {
    pub fn new(clusters: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        let mut index_to_cluster = vec![usize::MAX; n];
        let mut covered = 0usize;
        for (c, cluster) in clusters.iter().enumerate() {
            if cluster.is_empty() {
                return Err(Error::PartitionMismatch {
                    context: format!("cluster {c} is empty"),
                });
            }
            for &i in cluster {
                if i >= n {
                    return Err(Error::PartitionMismatch {
                        context: format!("index {i} out of range {n}"),
                    });
                }
                if index_to_cluster[i] != usize::MAX {
                    return Err(Error::PartitionMismatch {
                        context: format!("index {i} appears in two clusters"),
                    });
                }
                index_to_cluster[i] = c;
                covered += 1;
            }
        }
        if covered != n {
            return Err(Error::PartitionMismatch {
                context: format!("{covered} of {n} indices covered"),
            });
        }
        let mut clusters = clusters;
        for cluster in &mut clusters {
            cluster.sort_unstable();
        }
        Ok(Partition {
            clusters,
            index_to_cluster,
        })
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.index_to_cluster.len()
    }
}

/// Builds the cluster adjacency graph of `A` under `partition`.
pub fn build_quotient_graph(a: &SparseSpdMatrix, partition: &Partition) -> Result<QuotientGraph> {
    if partition.dim() != a.dim() {
        return Err(Error::PartitionMismatch {
            context: format!(
                "partition covers {} indices, matrix has {}",
                partition.dim(),
                a.dim()
            ),
        });
    }
    let mut neighbors = vec![BTreeSet::new(); partition.len()];
    for i in 0..a.dim() {
        let p = partition.index_to_cluster[i];
        let (cols, _) = a.row(i);
        for &j in cols {
            let q = partition.index_to_cluster[j];
            if p != q {
                neighbors[p].insert(q);
                neighbors[q].insert(p);
            }
        }
    }
    Ok(QuotientGraph { neighbors })
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Reads a MatrixMarket `coordinate real` file (symmetric or general with
/// symmetric content), 1-based indices converted to 0-based.
pub fn load_matrix_market(path: impl AsRef<Path>) -> Result<SparseSpdMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = text.lines().enumerate();

    let (lno, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file, expected MatrixMarket header"))?;
    let tokens: Vec<String> = header.split_whitespace().map(str::to_lowercase).collect();
    if tokens.len() != 5 || !tokens[0].starts_with("%%matrixmarket") {
        return Err(parse_err(lno + 1, "expected `%%MatrixMarket matrix coordinate real <symmetry>` header"));
    }
    if tokens[1] != "matrix" || tokens[2] != "coordinate" || tokens[3] != "real" {
        return Err(parse_err(
            lno + 1,
            format!("unsupported format `{} {} {}`; only `matrix coordinate real`", tokens[1], tokens[2], tokens[3]),
        ));
    }
    if tokens[4] != "symmetric" && tokens[4] != "general" {
        return Err(parse_err(
            lno + 1,
            format!("unsupported symmetry `{}`; only symmetric or general", tokens[4]),
        ));
    }

    let mut size: Option<(usize, usize, usize)> = None;
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    let mut size_line = 0usize;
    for (lno, line) in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match size {
            None => {
                if fields.len() != 3 {
                    return Err(parse_err(lno + 1, "size line must be `rows cols nnz`"));
                }
                let r: usize = fields[0]
                    .parse()
                    .map_err(|_| parse_err(lno + 1, "bad row count"))?;
                let c: usize = fields[1]
                    .parse()
                    .map_err(|_| parse_err(lno + 1, "bad column count"))?;
                let z: usize = fields[2]
                    .parse()
                    .map_err(|_| parse_err(lno + 1, "bad nonzero count"))?;
                if r != c {
                    return Err(parse_err(lno + 1, format!("matrix must be square, got {r}x{c}")));
                }
                size = Some((r, c, z));
                size_line = lno + 1;
                triplets.reserve(z);
            }
            Some((r, _, z)) => {
                if triplets.len() == z {
                    return Err(parse_err(lno + 1, format!("more than the declared {z} entries")));
                }
                if fields.len() != 3 {
                    return Err(parse_err(lno + 1, "entry line must be `row col value`"));
                }
                let i: usize = fields[0]
                    .parse()
                    .map_err(|_| parse_err(lno + 1, "bad row index"))?;
                let j: usize = fields[1]
                    .parse()
                    .map_err(|_| parse_err(lno + 1, "bad column index"))?;
                let v: f64 = fields[2]
                    .parse()
                    .map_err(|_| parse_err(lno + 1, "bad value"))?;
                if i == 0 || j == 0 || i > r || j > r {
                    return Err(parse_err(
                        lno + 1,
                        format!("index ({i},{j}) outside 1..={r}"),
                    ));
                }
                triplets.push((i - 1, j - 1, v));
            }
        }
    }
    let (n, _, z) = size.ok_or_else(|| parse_err(size_line.max(1), "missing size line"))?;
    if triplets.len() != z {
        return Err(parse_err(
            size_line,
            format!("declared {z} entries, found {}", triplets.len()),
        ));
    }
    SparseSpdMatrix::from_triplets(n, &triplets)
}

/// Writes the lower triangle + diagonal as MatrixMarket `symmetric` with
/// 17 significant digits, so `load(save(A)) == A` exactly.
pub fn save_matrix_market(a: &SparseSpdMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut body = String::new();
    let mut count = 0usize;
    for i in 0..a.dim() {
        let (cols, vals) = a.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            if j <= i {
                count += 1;
                let _ = writeln!(body, "{} {} {:.16e}", i + 1, j + 1, v);
            }
        }
    }
    let text = format!(
        "%%MatrixMarket matrix coordinate real symmetric\n{} {} {}\n{}",
        a.dim(),
        a.dim(),
        count,
        body
    );
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads per-index coordinates, one `x y z` line per index.
pub fn load_coords(path: impl AsRef<Path>) -> Result<Vec<[f64; 3]>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut coords = Vec::new();
    for (lno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('%') || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_err(lno + 1, "coordinate line must be `x y z`"));
        }
        let mut xyz = [0.0; 3];
        for (k, f) in fields.iter().enumerate() {
            xyz[k] = f
                .parse()
                .map_err(|_| parse_err(lno + 1, format!("bad coordinate `{f}`")))?;
        }
        coords.push(xyz);
    }
    Ok(coords)
}

pub fn save_coords(coords: &[[f64; 3]], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for c in coords {
        let _ = writeln!(text, "{:.16e} {:.16e} {:.16e}", c[0], c[1], c[2]);
    }
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}
