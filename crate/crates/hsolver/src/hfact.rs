//! Multilevel approximate Cholesky factorization.
//!
//! Each level partitions the current matrix into clusters, eliminates every
//! cluster with one scaled low-rank elimination, and assembles the surviving
//! coarse unknowns (with centroid coordinates) into the next level's sparse
//! matrix. The recursion stops at a dense Cholesky factorization of the top
//! system. Applying the factorization solves approximately with the
//! congruence transforms replayed forward, the coarse system solved in the
//! middle, and the transposes replayed in reverse.

use serde::{Deserialize, Serialize};

use crate::elim::{
    apply_w, prefix_sums, scaled_lowrank_eliminate, ApplyDirection, BlockState, ElimOptions,
    EliminationRecord,
};
use crate::error::{Error, Result};
use crate::kernels::{dense_cholesky, tri_backward_t_vec, tri_forward_vec, DenseMatrix, EpsMode};
use crate::partition::{partition_extruded, partition_general, ColumnMap};
use crate::sparse::SparseSpdMatrix;

/// Hard cap on the number of levels; hitting it means the coarse systems
/// stopped shrinking long before this and something is structurally wrong.
pub const LEVEL_CAP: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partitioner {
    /// Recursive bisection on coordinates when available, BFS orders
    /// otherwise.
    General,
    /// Column-aware bisection for extruded meshes; requires a column map
    /// and applies at the finest level only (coarse levels fall back to
    /// the general partitioner on centroid coordinates).
    Extruded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Low-rank truncation tolerance.
    pub eps: f64,
    /// Whether `eps` is an absolute singular-value cutoff or relative to
    /// the largest singular value of each compressed block.
    pub eps_mode: EpsMode,
    /// Partitioning stops splitting below this cluster size.
    pub target_cluster_size: usize,
    /// Coarse systems at most this large are factored densely.
    pub stop_size: usize,
    /// Deferred compression: scale by the diagonal Cholesky factor before
    /// truncating. Turning it off reproduces the older scheme that can
    /// break down.
    pub dc: bool,
    pub partitioner: Partitioner,
    /// Optional diagonal shift added to each cluster block before its
    /// Cholesky factorization; experimentation aid, default off.
    pub jitter: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            eps: 1e-2,
            eps_mode: EpsMode::Absolute,
            target_cluster_size: 100,
            stop_size: 500,
            dc: true,
            partitioner: Partitioner::General,
            jitter: 0.0,
        }
    }
}

/// Coarse-rank summary for one level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelRankStats {
    pub level: usize,
    pub clusters: usize,
    pub dim: usize,
    pub coarse_dim: usize,
    pub mean_rank: f64,
    pub max_rank: usize,
}

#[derive(Debug, Clone)]
struct GatherEntry {
    /// Cluster segment start in this level's vector.
    offset: usize,
    /// Surviving coarse rank of the cluster.
    rank: usize,
    /// Start of the cluster's coarse unknowns in the next level's vector.
    coarse_offset: usize,
}

#[derive(Debug, Clone)]
pub struct FactorLevel {
    pub dim: usize,
    pub coarse_dim: usize,
    records: Vec<EliminationRecord>,
    gathers: Vec<GatherEntry>,
    /// Cluster layout: position `pos` of the working vector holds natural
    /// index `perm[pos]` of this level's matrix.
    perm: Vec<usize>,
}

impl FactorLevel {
    pub fn records(&self) -> &[EliminationRecord] {
        &self.records
    }
}

#[derive(Debug, Clone)]
pub struct HierFactorization {
    dim: usize,
    levels: Vec<FactorLevel>,
    /// Dense Cholesky factor of the final coarse system.
    top_chol: DenseMatrix,
    config: SolverConfig,
    rank_stats: Vec<LevelRankStats>,
}

impl HierFactorization {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn levels(&self) -> &[FactorLevel] {
        &self.levels
    }

    pub fn top_dim(&self) -> usize {
        self.top_chol.rows()
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn rank_stats(&self) -> &[LevelRankStats] {
        &self.rank_stats
    }

    /// Approximate solve `x = M^-1 b`; see [`hierarchical_solve`].
    pub fn apply(&self, b: &[f64]) -> Result<Vec<f64>> {
        hierarchical_solve(self, b)
    }

    /// Bytes held in dense factors: elimination records plus the top-level
    /// Cholesky factor.
    pub fn memory_estimate_bytes(&self) -> usize {
        let mut floats = self.top_chol.values().len();
        for level in &self.levels {
            for rec in &level.records {
                floats += rec.u_hat.values().len();
                if let Some(m) = &rec.scaling {
                    floats += m.values().len();
                }
                if let Some(m) = &rec.fine_chol {
                    floats += m.values().len();
                }
                if let Some(m) = &rec.coarse_mult {
                    floats += m.values().len();
                }
                for (_, m) in &rec.neighbor_mults {
                    floats += m.values().len();
                }
            }
        }
        floats * std::mem::size_of::<f64>()
    }
}

/// Assembles the live coarse blocks of a fully swept level into the next
/// level's sparse matrix, carrying cluster centroids as coordinates.
fn assemble_coarse(
    state: &BlockState,
    coarse_offsets: &[usize],
    coarse_dim: usize,
    centroids: Option<Vec<[f64; 3]>>,
) -> Result<SparseSpdMatrix> {
    let mut triplets = Vec::new();
    for (p, q, block) in state.stored_blocks() {
        for i in 0..block.rows() {
            for j in 0..block.cols() {
                let v = block.get(i, j);
                if v != 0.0 {
                    let gi = coarse_offsets[p] + i;
                    let gj = coarse_offsets[q] + j;
                    triplets.push((gi, gj, v));
                    if p != q {
                        triplets.push((gj, gi, v));
                    }
                }
            }
        }
    }
    let coarse = SparseSpdMatrix::from_triplets(coarse_dim, &triplets)?;
    match centroids {
        Some(c) => coarse.with_coords(c),
        None => Ok(coarse),
    }
}

/// Builds the multilevel factorization of `a`.
pub fn hierarchical_factor(
    a: &SparseSpdMatrix,
    config: &SolverConfig,
    colmap: Option<&ColumnMap>,
) -> Result<HierFactorization> {
    if config.eps < 0.0 || !config.eps.is_finite() {
        return Err(Error::invalid(format!("eps must be finite and >= 0, got {}", config.eps)));
    }
    if config.target_cluster_size == 0 {
        return Err(Error::invalid("target cluster size must be positive"));
    }
    let mut levels = Vec::new();
    let mut rank_stats = Vec::new();
    let mut current = a.clone();
    let top_chol = loop {
        if current.dim() <= config.stop_size {
            break dense_cholesky(&current.dense())?;
        }
        if levels.len() >= LEVEL_CAP {
            return Err(Error::LevelCapExceeded { cap: LEVEL_CAP });
        }
        let partition = match (config.partitioner, levels.is_empty()) {
            (Partitioner::Extruded, true) => {
                let cm = colmap.ok_or(Error::ColumnMapRequired)?;
                partition_extruded(&current, cm, config.target_cluster_size)?
            }
            _ => partition_general(&current, config.target_cluster_size)?,
        };
        let sizes: Vec<usize> = partition.clusters.iter().map(Vec::len).collect();
        let offsets = prefix_sums(&sizes);
        let mut state = BlockState::from_sparse(&current, &partition)?;
        let opts = ElimOptions {
            eps: config.eps,
            eps_mode: config.eps_mode,
            dc: config.dc,
            jitter: config.jitter,
            level: levels.len(),
        };
        let mut records = Vec::with_capacity(partition.len());
        for s in 0..partition.len() {
            records.push(scaled_lowrank_eliminate(&mut state, s, &opts, &offsets)?);
        }

        let mut gathers = Vec::with_capacity(records.len());
        let mut coarse_offsets = Vec::with_capacity(records.len());
        let mut coarse_dim = 0usize;
        for (s, rec) in records.iter().enumerate() {
            gathers.push(GatherEntry {
                offset: offsets[s],
                rank: rec.coarse_rank,
                coarse_offset: coarse_dim,
            });
            coarse_offsets.push(coarse_dim);
            coarse_dim += rec.coarse_rank;
        }

        let centroids = current.coords().map(|coords| {
            let mut out = Vec::with_capacity(coarse_dim);
            for (cluster, rec) in partition.clusters.iter().zip(&records) {
                let mut c = [0.0f64; 3];
                for &i in cluster {
                    for (axis, v) in c.iter_mut().zip(coords[i]) {
                        *axis += v;
                    }
                }
                for axis in &mut c {
                    *axis /= cluster.len() as f64;
                }
                out.extend(std::iter::repeat_n(c, rec.coarse_rank));
            }
            out
        });

        let max_rank = records.iter().map(|r| r.coarse_rank).max().unwrap_or(0);
        rank_stats.push(LevelRankStats {
            level: levels.len(),
            clusters: partition.len(),
            dim: current.dim(),
            coarse_dim,
            mean_rank: coarse_dim as f64 / partition.len() as f64,
            max_rank,
        });

        let coarse = assemble_coarse(&state, &coarse_offsets, coarse_dim, centroids)?;
        let no_shrink = coarse_dim >= current.dim();
        let perm: Vec<usize> = partition.clusters.iter().flatten().copied().collect();
        levels.push(FactorLevel {
            dim: current.dim(),
            coarse_dim,
            records,
            gathers,
            perm,
        });
        if no_shrink {
            eprintln!(
                "warning: level {} did not shrink ({} -> {} unknowns); factoring coarse system densely",
                levels.len() - 1,
                current.dim(),
                coarse_dim
            );
            break dense_cholesky(&coarse.dense())?;
        }
        current = coarse;
    };
    Ok(HierFactorization {
        dim: a.dim(),
        levels,
        top_chol,
        config: *config,
        rank_stats,
    })
}

/// Applies the factorization as an approximate inverse: forward transforms
/// level by level, dense solve on the top system, then the transposed
/// transforms in reverse. The result is exactly symmetric in `b` because
/// the backward pass is the elementwise transpose of the forward pass.
pub fn hierarchical_solve(f: &HierFactorization, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != f.dim {
        return Err(Error::dim(format!(
            "right-hand side has length {}, factorization dimension is {}",
            b.len(),
            f.dim
        )));
    }
    // Downward: permute into cluster layout, replay the congruence
    // transforms, extract the coarse prefix as the next level's vector.
    let mut stack: Vec<Vec<f64>> = Vec::with_capacity(f.levels.len());
    let mut vnat = b.to_vec();
    for level in &f.levels {
        let mut w = vec![0.0; level.dim];
        for (pos, &g) in level.perm.iter().enumerate() {
            w[pos] = vnat[g];
        }
        for rec in &level.records {
            apply_w(rec, &mut w, ApplyDirection::Forward)?;
        }
        let mut vc = vec![0.0; level.coarse_dim];
        for g in &level.gathers {
            vc[g.coarse_offset..g.coarse_offset + g.rank]
                .copy_from_slice(&w[g.offset..g.offset + g.rank]);
        }
        stack.push(w);
        vnat = vc;
    }
    tri_forward_vec(&f.top_chol, &mut vnat);
    tri_backward_t_vec(&f.top_chol, &mut vnat);
    // Upward: scatter the coarse solution back, replay the transposes in
    // reverse, undo the layout permutation.
    for level in f.levels.iter().rev() {
        let mut w = stack.pop().expect("one vector per level");
        for g in &level.gathers {
            w[g.offset..g.offset + g.rank]
                .copy_from_slice(&vnat[g.coarse_offset..g.coarse_offset + g.rank]);
        }
        for rec in level.records.iter().rev() {
            apply_w(rec, &mut w, ApplyDirection::Backward)?;
        }
        let mut out = vec![0.0; level.dim];
        for (pos, &g) in level.perm.iter().enumerate() {
            out[g] = w[pos];
        }
        vnat = out;
    }
    Ok(vnat)
}
