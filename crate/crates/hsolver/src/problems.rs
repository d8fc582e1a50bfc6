//! Synthetic ill-conditioned SPD generators: a 2D anisotropic Poisson
//! problem with a closed-form spectrum, and a 3D extruded grid with strong
//! vertical coupling and a configurable Neumann bottom that produces
//! near-singular column blocks.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::partition::ColumnMap;
use crate::sparse::SparseSpdMatrix;

/// Five-point discretization of `eps_aniso·u_xx + u_yy` on an n×n interior
/// grid with Dirichlet boundary, scaled by (n+1)² so the eigenvalue formula
/// of [`aniso_eigenvalue`] holds verbatim. Coordinates are attached for
/// geometric partitioning.
pub fn gen_aniso2d(n: usize, eps_aniso: f64) -> Result<SparseSpdMatrix> {
    if n == 0 {
        return Err(Error::invalid("grid size must be at least 1"));
    }
    if !(eps_aniso > 0.0) {
        return Err(Error::invalid("anisotropy ratio must be positive"));
    }
    let scale = ((n + 1) * (n + 1)) as f64;
    let idx = |ix: usize, iy: usize| iy * n + ix;
    let mut triplets = Vec::with_capacity(3 * n * n);
    for iy in 0..n {
        for ix in 0..n {
            let i = idx(ix, iy);
            triplets.push((i, i, 2.0 * (eps_aniso + 1.0) * scale));
            if ix + 1 < n {
                triplets.push((i, idx(ix + 1, iy), -eps_aniso * scale));
            }
            if iy + 1 < n {
                triplets.push((i, idx(ix, iy + 1), -scale));
            }
        }
    }
    let h = 1.0 / (n as f64 + 1.0);
    let coords = (0..n * n)
        .map(|i| {
            let ix = i % n;
            let iy = i / n;
            [(ix as f64 + 1.0) * h, (iy as f64 + 1.0) * h, 0.0]
        })
        .collect();
    SparseSpdMatrix::from_triplets(n * n, &triplets)?.with_coords(coords)
}

/// Closed-form eigenvalue of [`gen_aniso2d`]:
/// `4(n+1)²·[ε·sin²(πi/(2n+2)) + sin²(πj/(2n+2))]` for `1 ≤ i,j ≤ n`.
pub fn aniso_eigenvalue(n: usize, eps_aniso: f64, i: usize, j: usize) -> Result<f64> {
    if i < 1 || i > n || j < 1 || j > n {
        return Err(Error::IndexOutOfRange {
            index: i.max(j),
            dim: n,
        });
    }
    let denom = 2.0 * (n as f64) + 2.0;
    let si = (PI * i as f64 / denom).sin();
    let sj = (PI * j as f64 / denom).sin();
    let np1 = (n + 1) as f64;
    Ok(4.0 * np1 * np1 * (eps_aniso * si * si + sj * sj))
}

/// Bottom boundary condition of [`gen_extruded3d`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BottomBc {
    /// Every bottom node carries a Dirichlet term.
    Dirichlet,
    /// The given fraction of columns (a contiguous region in column order)
    /// gets a Neumann bottom; the rest stay Dirichlet.
    NeumannFraction(f64),
}

/// Seven-point stencil on an nx×ny×layers grid: horizontal couplings −1,
/// vertical couplings −vert_weight, degree-consistent diagonal. Lateral
/// walls and the top face are Neumann; the bottom is Dirichlet except for
/// a fraction of Neumann columns emulating floating shelves. Indices run
/// fastest along z so each vertical column is contiguous.
pub fn gen_extruded3d(
    nx: usize,
    ny: usize,
    layers: usize,
    vert_weight: f64,
    bottom_bc: BottomBc,
) -> Result<(SparseSpdMatrix, ColumnMap)> {
    if nx == 0 || ny == 0 || layers == 0 {
        return Err(Error::invalid("grid dimensions must be at least 1"));
    }
    if !(vert_weight >= 1.0) {
        return Err(Error::invalid("vertical weight must be at least 1"));
    }
    let ncols = nx * ny;
    let neumann_cols = match bottom_bc {
        BottomBc::Dirichlet => 0,
        BottomBc::NeumannFraction(f) => {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::invalid("neumann fraction must lie in [0, 1]"));
            }
            let k = (f * ncols as f64).floor() as usize;
            if k >= ncols {
                return Err(Error::SingularSystem {
                    context: "all columns Neumann leaves no Dirichlet term anywhere; \
                              the matrix would be singular"
                        .into(),
                });
            }
            k
        }
    };

    let idx = |x: usize, y: usize, z: usize| (y * nx + x) * layers + z;
    let col_of = |x: usize, y: usize| y * nx + x;
    let n = ncols * layers;
    let mut triplets = Vec::with_capacity(4 * n);
    for y in 0..ny {
        for x in 0..nx {
            let bottom_neumann = col_of(x, y) < neumann_cols;
            for z in 0..layers {
                let i = idx(x, y, z);
                let mut diag = 0.0;
                if x + 1 < nx {
                    triplets.push((i, idx(x + 1, y, z), -1.0));
                    diag += 1.0;
                }
                if x > 0 {
                    diag += 1.0;
                }
                if y + 1 < ny {
                    triplets.push((i, idx(x, y + 1, z), -1.0));
                    diag += 1.0;
                }
                if y > 0 {
                    diag += 1.0;
                }
                if z + 1 < layers {
                    triplets.push((i, idx(x, y, z + 1), -vert_weight));
                    diag += vert_weight;
                }
                if z > 0 {
                    diag += vert_weight;
                } else if !bottom_neumann {
                    // Dirichlet floor: the eliminated node below stays on
                    // the diagonal.
                    diag += vert_weight;
                }
                triplets.push((i, i, diag));
            }
        }
    }
    let coords = (0..n)
        .map(|i| {
            let z = i % layers;
            let c = i / layers;
            let x = c % nx;
            let y = c / nx;
            [x as f64, y as f64, z as f64]
        })
        .collect();
    let a = SparseSpdMatrix::from_triplets(n, &triplets)?.with_coords(coords)?;
    let map = ColumnMap::new((0..n).map(|i| i / layers).collect())?;
    Ok((a, map))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{dense_cholesky, extreme_singular_values};

    #[test]
    fn aniso_one_by_one() {
        let a = gen_aniso2d(1, 1.0).unwrap();
        assert_eq!(a.dim(), 1);
        assert!((a.get(0, 0) - 16.0).abs() < 1e-12);
        assert!((aniso_eigenvalue(1, 1.0, 1, 1).unwrap() - 16.0).abs() < 1e-12);
    }

    #[test]
    fn aniso_two_by_two_stencil() {
        let eps = 0.25;
        let a = gen_aniso2d(2, eps).unwrap();
        let scale = 9.0;
        let d = a.dense();
        for i in 0..4 {
            assert!((d.get(i, i) - 2.0 * (eps + 1.0) * scale).abs() < 1e-12);
        }
        // Index layout: 0=(0,0) 1=(1,0) 2=(0,1) 3=(1,1); x neighbors get
        // the eps weight, y neighbors the unit weight.
        assert!((d.get(0, 1) + eps * scale).abs() < 1e-12);
        assert!((d.get(2, 3) + eps * scale).abs() < 1e-12);
        assert!((d.get(0, 2) + scale).abs() < 1e-12);
        assert!((d.get(1, 3) + scale).abs() < 1e-12);
        assert_eq!(d.get(0, 3), 0.0);
        assert_eq!(d.get(1, 2), 0.0);
        assert!(d.max_asymmetry() == 0.0);
    }

    #[test]
    fn aniso_isotropic_case_is_laplacian() {
        let a = gen_aniso2d(3, 1.0).unwrap();
        let d = a.dense();
        assert!((d.get(0, 1) - d.get(0, 3)).abs() < 1e-12);
    }

    #[test]
    fn aniso_eigenvalue_bounds_checked() {
        assert!(aniso_eigenvalue(3, 1.0, 0, 1).is_err());
        assert!(aniso_eigenvalue(3, 1.0, 1, 4).is_err());
        assert!(aniso_eigenvalue(3, 1.0, 3, 3).is_ok());
    }

    #[test]
    fn aniso_spectrum_matches_dense_eigensolver() {
        for &(n, eps) in &[(3usize, 1.0), (4, 1e-2), (5, 1e-4)] {
            let a = gen_aniso2d(n, eps).unwrap();
            let mut formula: Vec<f64> = (1..=n)
                .flat_map(|i| (1..=n).map(move |j| (i, j)))
                .map(|(i, j)| aniso_eigenvalue(n, eps, i, j).unwrap())
                .collect();
            formula.sort_by(f64::total_cmp);
            let dense = a.dense();
            let na = nalgebra::DMatrix::from_fn(a.dim(), a.dim(), |i, j| dense.get(i, j));
            let mut eig: Vec<f64> = na.symmetric_eigen().eigenvalues.iter().copied().collect();
            eig.sort_by(f64::total_cmp);
            let scale = formula.last().copied().unwrap();
            for (f, e) in formula.iter().zip(&eig) {
                assert!((f - e).abs() <= 1e-10 * scale, "n={n} eps={eps}: {f} vs {e}");
            }
        }
    }

    #[test]
    fn aniso_is_spd() {
        let a = gen_aniso2d(8, 1e-3).unwrap();
        assert!(dense_cholesky(&a.dense()).is_ok());
    }

    #[test]
    fn extruded_single_column_tridiagonal() {
        let (a, map) = gen_extruded3d(1, 1, 3, 1.0, BottomBc::Dirichlet).unwrap();
        assert_eq!(a.dim(), 3);
        assert_eq!(map.column_count(), 1);
        let d = a.dense();
        // Bottom node keeps the Dirichlet term, top is Neumann.
        assert!((d.get(0, 0) - 2.0).abs() < 1e-12);
        assert!((d.get(1, 1) - 2.0).abs() < 1e-12);
        assert!((d.get(2, 2) - 1.0).abs() < 1e-12);
        assert!((d.get(0, 1) + 1.0).abs() < 1e-12);
        assert!((d.get(1, 2) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn extruded_column_map_shape() {
        let (a, map) = gen_extruded3d(4, 4, 6, 1e3, BottomBc::Dirichlet).unwrap();
        assert_eq!(a.dim(), 96);
        assert_eq!(map.column_count(), 16);
        assert!(map.columns().iter().all(|c| c.len() == 6));
        assert_eq!(map.layers, 6);
    }

    #[test]
    fn extruded_all_neumann_rejected() {
        assert!(matches!(
            gen_extruded3d(2, 2, 3, 1.0, BottomBc::NeumannFraction(1.0)),
            Err(Error::SingularSystem { .. })
        ));
    }

    #[test]
    fn extruded_is_spd() {
        let (a, _) = gen_extruded3d(4, 3, 5, 100.0, BottomBc::NeumannFraction(0.5)).unwrap();
        assert!(dense_cholesky(&a.dense()).is_ok());
    }

    #[test]
    fn extruded_neumann_columns_lose_definiteness() {
        // Growing the Neumann bottom region only subtracts positive
        // diagonal terms, so the matrix decreases in the definiteness
        // order and its smallest singular value must drop.
        let mut mins = Vec::new();
        for f in [0.0, 0.5, 0.9] {
            let (a, _) = gen_extruded3d(4, 4, 6, 1e3, BottomBc::NeumannFraction(f)).unwrap();
            mins.push(extreme_singular_values(&a.dense()).1);
        }
        assert!(mins[0] > mins[1] && mins[1] > mins[2], "{mins:?}");

        // Per-column view of the same mechanism: Neumann columns are
        // nearly singular next to their Dirichlet peers.
        let (a, map) = gen_extruded3d(4, 4, 6, 1e3, BottomBc::NeumannFraction(0.5)).unwrap();
        let col_sigma_min = |members: &[usize]| {
            let block = a.extract_block(members, members).unwrap();
            extreme_singular_values(&block).1
        };
        let columns = map.columns();
        let worst_neumann = columns[..8].iter().map(|c| col_sigma_min(c)).fold(f64::INFINITY, f64::min);
        let best_dirichlet = columns[8..].iter().map(|c| col_sigma_min(c)).fold(f64::INFINITY, f64::min);
        assert!(
            worst_neumann * 10.0 < best_dirichlet,
            "neumann {worst_neumann} vs dirichlet {best_dirichlet}"
        );
    }
}
