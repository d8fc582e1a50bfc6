//! Cluster partitioners: recursive bisection for general matrices (by
//! coordinates when available, else by BFS level sets) and the extruded
//! partitioner that keeps every vertical line of unknowns in one cluster.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sparse::{Partition, SparseSpdMatrix};

/// Maps each matrix index to the extruded column (vertical line) it lies on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMap {
    pub index_to_column: Vec<usize>,
    /// Typical unknowns per column (the maximum cardinality).
    pub layers: usize,
}

impl ColumnMap {
    /// Builds from raw per-index column ids, renumbering them densely in
    /// ascending id order.
    pub fn new(raw_ids: Vec<usize>) -> Result<Self> {
        if raw_ids.is_empty() {
            return Err(Error::invalid("column map covers no indices"));
        }
        let mut remap: BTreeMap<usize, usize> = BTreeMap::new();
        for &id in &raw_ids {
            let next = remap.len();
            remap.entry(id).or_insert(next);
        }
        let index_to_column: Vec<usize> = raw_ids.iter().map(|id| remap[id]).collect();
        let mut sizes = vec![0usize; remap.len()];
        for &c in &index_to_column {
            sizes[c] += 1;
        }
        let layers = sizes.iter().copied().max().unwrap_or(0);
        Ok(ColumnMap {
            index_to_column,
            layers,
        })
    }

    pub fn dim(&self) -> usize {
        self.index_to_column.len()
    }

    pub fn column_count(&self) -> usize {
        self.index_to_column.iter().copied().max().map_or(0, |m| m + 1)
    }

    /// Member indices per column, each sorted ascending.
    pub fn columns(&self) -> Vec<Vec<usize>> {
        let mut cols = vec![Vec::new(); self.column_count()];
        for (i, &c) in self.index_to_column.iter().enumerate() {
            cols[c].push(i);
        }
        cols
    }
}

/// Node set handed to the recursive bisector: adjacency, optional
/// coordinates, and per-node weights (1 for plain indices, column
/// cardinality for extruded columns).
struct BisectInput {
    adj: Vec<Vec<usize>>,
    coords: Option<Vec<[f64; 3]>>,
    weights: Vec<usize>,
}

fn adjacency_of(a: &SparseSpdMatrix) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); a.dim()];
    for i in 0..a.dim() {
        let (cols, _) = a.row(i);
        for &j in cols {
            if j != i {
                adj[i].push(j);
            }
        }
    }
    adj
}

/// Splits `nodes` (already ordered by a geometric axis or BFS level set)
/// at the weighted median, guaranteeing both halves nonempty.
fn split_ordered(nodes: Vec<usize>, input: &BisectInput) -> (Vec<usize>, Vec<usize>) {
    let total: usize = nodes.iter().map(|&v| input.weights[v]).sum();
    let mut acc = 0usize;
    let mut cut = 1usize;
    for (pos, &v) in nodes.iter().enumerate() {
        acc += input.weights[v];
        if 2 * acc >= total {
            cut = (pos + 1).min(nodes.len() - 1).max(1);
            break;
        }
    }
    let (left, right) = nodes.split_at(cut);
    (left.to_vec(), right.to_vec())
}

/// Orders `nodes` along the coordinate axis of widest extent; ties broken
/// by node index so the result is deterministic.
fn order_by_coords(mut nodes: Vec<usize>, coords: &[[f64; 3]]) -> Vec<usize> {
    let mut best_axis = 0;
    let mut best_extent = f64::NEG_INFINITY;
    for axis in 0..3 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &nodes {
            lo = lo.min(coords[v][axis]);
            hi = hi.max(coords[v][axis]);
        }
        let extent = hi - lo;
        if extent > best_extent {
            best_extent = extent;
            best_axis = axis;
        }
    }
    nodes.sort_by(|&a, &b| {
        coords[a][best_axis]
            .total_cmp(&coords[b][best_axis])
            .then(a.cmp(&b))
    });
    nodes
}

/// Orders `nodes` by BFS discovery from a pseudo-peripheral node (found by
/// a double BFS). Disconnected pieces are appended in index order.
fn order_by_bfs(nodes: Vec<usize>, input: &BisectInput) -> Vec<usize> {
    let mut local = BTreeMap::new();
    for (pos, &v) in nodes.iter().enumerate() {
        local.insert(v, pos);
    }
    let bfs = |start: usize| -> Vec<usize> {
        let mut seen = vec![false; nodes.len()];
        let mut order = Vec::with_capacity(nodes.len());
        let mut queue = std::collections::VecDeque::new();
        let push = |v: usize, seen: &mut Vec<bool>, queue: &mut std::collections::VecDeque<usize>| {
            let pos = local[&v];
            if !seen[pos] {
                seen[pos] = true;
                queue.push_back(v);
            }
        };
        push(start, &mut seen, &mut queue);
        loop {
            while let Some(v) = queue.pop_front() {
                order.push(v);
                for &w in &input.adj[v] {
                    if local.contains_key(&w) {
                        push(w, &mut seen, &mut queue);
                    }
                }
            }
            if order.len() == nodes.len() {
                break;
            }
            // Disconnected: continue from the lowest unseen node.
            let next = nodes
                .iter()
                .copied()
                .find(|v| !seen[local[v]])
                .expect("unseen node exists");
            push(next, &mut seen, &mut queue);
        }
        order
    };
    let first = bfs(nodes[0]);
    let peripheral = *first.last().expect("nonempty node set");
    bfs(peripheral)
}

fn recursive_bisect(
    nodes: Vec<usize>,
    input: &BisectInput,
    target_weight: usize,
    out: &mut Vec<Vec<usize>>,
) {
    let weight: usize = nodes.iter().map(|&v| input.weights[v]).sum();
    if weight <= target_weight || nodes.len() <= 1 {
        out.push(nodes);
        return;
    }
    let ordered = match &input.coords {
        Some(c) => order_by_coords(nodes, c),
        None => order_by_bfs(nodes, input),
    };
    let (left, right) = split_ordered(ordered, input);
    recursive_bisect(left, input, target_weight, out);
    recursive_bisect(right, input, target_weight, out);
}

/// Partitions the index set of `A` into clusters of roughly
/// `target_cluster_size` indices by recursive bisection.
pub fn partition_general(a: &SparseSpdMatrix, target_cluster_size: usize) -> Result<Partition> {
    if target_cluster_size == 0 {
        return Err(Error::invalid("target cluster size must be at least 1"));
    }
    let n = a.dim();
    if n == 0 {
        return Err(Error::invalid("cannot partition an empty matrix"));
    }
    let input = BisectInput {
        adj: adjacency_of(a),
        coords: a.coords().map(|c| c.to_vec()),
        weights: vec![1; n],
    };
    let mut clusters = Vec::new();
    recursive_bisect((0..n).collect(), &input, target_cluster_size, &mut clusters);
    Partition::new(clusters, n)
}

/// Partitions so that every extruded column stays inside one cluster;
/// horizontal grouping is recursive bisection over the column-quotient
/// graph weighted by column cardinality.
pub fn partition_extruded(
    a: &SparseSpdMatrix,
    column_map: &ColumnMap,
    target_cluster_size: usize,
) -> Result<Partition> {
    if target_cluster_size == 0 {
        return Err(Error::invalid("target cluster size must be at least 1"));
    }
    if column_map.dim() != a.dim() {
        return Err(Error::PartitionMismatch {
            context: format!(
                "column map covers {} indices, matrix has {}",
                column_map.dim(),
                a.dim()
            ),
        });
    }
    let columns = column_map.columns();
    for (c, members) in columns.iter().enumerate() {
        if members.len() > target_cluster_size {
            return Err(Error::ColumnSplitRequired {
                column: c,
                size: members.len(),
                target: target_cluster_size,
            });
        }
        if members.is_empty() {
            return Err(Error::PartitionMismatch {
                context: format!("column {c} has no indices"),
            });
        }
    }

    let k = columns.len();
    let mut adj_sets = vec![std::collections::BTreeSet::new(); k];
    for i in 0..a.dim() {
        let ci = column_map.index_to_column[i];
        let (cols, _) = a.row(i);
        for &j in cols {
            let cj = column_map.index_to_column[j];
            if ci != cj {
                adj_sets[ci].insert(cj);
                adj_sets[cj].insert(ci);
            }
        }
    }
    let coords = a.coords().map(|xyz| {
        columns
            .iter()
            .map(|members| {
                let mut c = [0.0; 3];
                for &i in members {
                    for (axis, v) in c.iter_mut().enumerate() {
                        *v += xyz[i][axis];
                    }
                }
                for v in &mut c {
                    *v /= members.len() as f64;
                }
                c
            })
            .collect()
    });
    let input = BisectInput {
        adj: adj_sets.into_iter().map(|s| s.into_iter().collect()).collect(),
        coords,
        weights: columns.iter().map(Vec::len).collect(),
    };
    let mut col_clusters = Vec::new();
    recursive_bisect((0..k).collect(), &input, target_cluster_size, &mut col_clusters);
    let clusters: Vec<Vec<usize>> = col_clusters
        .into_iter()
        .map(|cols_in_cluster| {
            cols_in_cluster
                .into_iter()
                .flat_map(|c| columns[c].iter().copied())
                .collect()
        })
        .collect();
    Partition::new(clusters, a.dim())
}

/// Reads a column map file: one `index column` pair per line, 0-based.
pub fn load_colmap(path: impl AsRef<Path>) -> Result<ColumnMap> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (lno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('%') || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                line: lno + 1,
                message: "column map line must be `index column`".into(),
            });
        }
        let idx: usize = fields[0].parse().map_err(|_| Error::Parse {
            line: lno + 1,
            message: format!("bad index `{}`", fields[0]),
        })?;
        let col: usize = fields[1].parse().map_err(|_| Error::Parse {
            line: lno + 1,
            message: format!("bad column id `{}`", fields[1]),
        })?;
        pairs.push((idx, col));
    }
    if pairs.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "column map file has no entries".into(),
        });
    }
    let n = pairs.iter().map(|&(i, _)| i).max().unwrap() + 1;
    let mut raw = vec![usize::MAX; n];
    for (i, c) in pairs {
        if raw[i] != usize::MAX {
            return Err(Error::invalid(format!("index {i} mapped to two columns")));
        }
        raw[i] = c;
    }
    if let Some(missing) = raw.iter().position(|&c| c == usize::MAX) {
        return Err(Error::invalid(format!("index {missing} has no column")));
    }
    ColumnMap::new(raw)
}

pub fn save_colmap(map: &ColumnMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for (i, c) in map.index_to_column.iter().enumerate() {
        let _ = writeln!(text, "{i} {c}");
    }
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_graph(n: usize) -> SparseSpdMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
            }
        }
        SparseSpdMatrix::from_triplets(n, &t).unwrap()
    }

    /// nx x ny grid of columns, `layers` deep, unit couplings, indices
    /// column-major so each column is contiguous.
    fn extruded_grid(nx: usize, ny: usize, layers: usize) -> (SparseSpdMatrix, ColumnMap) {
        let idx = |x: usize, y: usize, z: usize| (y * nx + x) * layers + z;
        let n = nx * ny * layers;
        let mut t = Vec::new();
        for y in 0..ny {
            for x in 0..nx {
                for z in 0..layers {
                    let i = idx(x, y, z);
                    t.push((i, i, 8.0));
                    if z + 1 < layers {
                        t.push((i, idx(x, y, z + 1), -1.0));
                    }
                    if x + 1 < nx {
                        t.push((i, idx(x + 1, y, z), -1.0));
                    }
                    if y + 1 < ny {
                        t.push((i, idx(x, y + 1, z), -1.0));
                    }
                }
            }
        }
        let a = SparseSpdMatrix::from_triplets(n, &t).unwrap();
        let raw = (0..n).map(|i| i / layers).collect();
        (a, ColumnMap::new(raw).unwrap())
    }

    #[test]
    fn path_graph_bisection() {
        let a = path_graph(10);
        let p = partition_general(&a, 5).unwrap();
        assert_eq!(p.len(), 2);
        let mut sizes: Vec<usize> = p.clusters.iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![5, 5]);
        // BFS ordering keeps each half contiguous along the path.
        for cluster in &p.clusters {
            let min = *cluster.first().unwrap();
            let max = *cluster.last().unwrap();
            assert_eq!(max - min + 1, cluster.len(), "cluster not contiguous");
        }
    }

    #[test]
    fn small_matrix_single_cluster() {
        let a = path_graph(7);
        let p = partition_general(&a, 10).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.clusters[0].len(), 7);
    }

    #[test]
    fn coordinate_bisection_balances() {
        // 16 points on a line with coordinates; RCB should cut by position.
        let n = 16;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 1.0));
        }
        let coords = (0..n).map(|i| [i as f64, 0.0, 0.0]).collect();
        let a = SparseSpdMatrix::from_triplets(n, &t)
            .unwrap()
            .with_coords(coords)
            .unwrap();
        let p = partition_general(&a, 4).unwrap();
        assert_eq!(p.len(), 4);
        for cluster in &p.clusters {
            assert_eq!(cluster.len(), 4);
            let min = *cluster.first().unwrap();
            assert!(cluster.iter().enumerate().all(|(k, &v)| v == min + k));
        }
    }

    #[test]
    fn extruded_keeps_columns_whole() {
        let (a, map) = extruded_grid(2, 2, 3);
        let p = partition_extruded(&a, &map, 6).unwrap();
        assert_eq!(p.len(), 2);
        for cluster in &p.clusters {
            assert_eq!(cluster.len(), 6);
        }
        // Column integrity: all of a column's indices share a cluster.
        for members in map.columns() {
            let owners: std::collections::BTreeSet<usize> = members
                .iter()
                .map(|&i| p.index_to_cluster[i])
                .collect();
            assert_eq!(owners.len(), 1);
        }
    }

    #[test]
    fn extruded_single_column() {
        let (a, map) = extruded_grid(1, 1, 4);
        let p = partition_extruded(&a, &map, 4).unwrap();
        assert_eq!(p.len(), 1);
    }

    #[test]
    fn extruded_column_too_large() {
        let (a, map) = extruded_grid(1, 2, 10);
        match partition_extruded(&a, &map, 5) {
            Err(Error::ColumnSplitRequired { size: 10, target: 5, .. }) => {}
            other => panic!("expected ColumnSplitRequired, got {other:?}"),
        }
    }

    #[test]
    fn colmap_roundtrip() {
        let map = ColumnMap::new(vec![0, 0, 1, 1, 2, 2]).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_colmap(&map, f.path()).unwrap();
        let back = load_colmap(f.path()).unwrap();
        assert_eq!(map, back);
        assert_eq!(back.layers, 2);
        assert_eq!(back.column_count(), 3);
    }

    #[test]
    fn partition_sizes_within_bounds() {
        for n in [13usize, 57, 100, 211] {
            let a = path_graph(n);
            let target = 10;
            let p = partition_general(&a, target).unwrap();
            let total: usize = p.clusters.iter().map(Vec::len).sum();
            assert_eq!(total, n);
            for cluster in &p.clusters {
                assert!(cluster.len() <= 2 * target, "oversized cluster");
            }
            let undersized = p
                .clusters
                .iter()
                .filter(|c| c.len() < target / 2)
                .count();
            assert!(undersized <= 1, "more than one remainder cluster");
        }
    }
}
