//! Direct numerical verification of the Schur-complement error analysis
//! behind the scaled (dc=on) and unscaled (dc=off) elimination schemes.
//!
//! The centerpiece is [`schur_error_experiment`]: given a 3×3-block SPD
//! system with blocks `(s, n, w)` — the cluster being eliminated, its
//! coupled neighbors, and the compressible remainder — it forms the
//! approximate Schur complement produced by one elimination step at
//! truncation tolerance `eps`, subtracts the exact Schur complement, and
//! checks the measured block errors against the closed-form bounds:
//!
//! * unscaled (dc=off), with `σ = σ_min(A_ss)` and achieved tail `ε`:
//!   `‖E_ww‖ ≤ 2ε‖A_sw‖/σ + ε²/σ`, `‖E_nw‖ ≤ ε‖A_ns‖/σ`, and
//!   `‖E‖ ≤ ε(2‖A_sw‖+‖A_ns‖)/σ + ε²/σ`;
//! * scaled (dc=on): `‖E_ww‖ = ε²` exactly with `E_ww = V̂₂V̂₂ᵀ ⪰ 0`,
//!   `‖E_nw‖ ≤ ε‖A_ns‖/√σ`, and `‖E‖ ≤ ε‖A_ns‖/√σ + ε²`.
//!
//! [`run_error_bound_trials`] sweeps randomized block systems with
//! controlled conditioning over a tolerance grid and tallies violations;
//! [`scaling_study`] runs factorization + PCG across a refinement family
//! and reports growth ratios of iterations, ranks, and factor cost.

use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hfact::{hierarchical_factor, SolverConfig};
use crate::kernels::{
    dense_cholesky, extreme_singular_values, orthonormal_complement, tri_solve, truncated_lowrank,
    DenseMatrix, EpsMode, TriSolveMode,
};
use crate::krylov::{pcg, IdentityPrecond, Preconditioner};
use crate::problems::{gen_aniso2d, gen_extruded3d, BottomBc};

/// Relative slack applied to every bound comparison, covering the roundoff
/// of evaluating the bound itself.
const BOUND_REL_SLACK: f64 = 1e-9;

/// Absolute noise floor per unit of input scale: measured errors are the
/// difference of two dense O(1)-scaled computations, so they carry roundoff
/// of order `1e-13`..`1e-14` times the block norms. Comparisons against
/// bounds (which can be exactly zero) add this floor.
const NOISE_FLOOR_PER_SCALE: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Exact Schur complement oracle
// ---------------------------------------------------------------------------

/// Exact Schur complement of the `(s, s)` block in the 3×3-block matrix
/// `[[Ass, Asn, Asw], [Ans, Ann, Anw], [Aws, Awn, Aww]]`, returned as the
/// dense `(n+w)×(n+w)` matrix
/// `[[Ann, Anw], [Awn, Aww]] − [Ans; Aws]·Ass⁻¹·[Asn, Asw]`.
///
/// Computed via the Cholesky factor of `Ass`, so it fails with
/// [`Error::NotPositiveDefinite`] when `Ass` is not SPD.
pub fn exact_schur(
    ass: &DenseMatrix,
    asn: &DenseMatrix,
    asw: &DenseMatrix,
    ann: &DenseMatrix,
    anw: &DenseMatrix,
    aww: &DenseMatrix,
) -> Result<DenseMatrix> {
    let s = ass.rows();
    let n = asn.cols();
    let w = asw.cols();
    check_block_dims(ass, asn, asw, ann, anw, aww)?;

    let g = dense_cholesky(ass)?;
    // Y_n = G⁻¹·Asn, Y_w = G⁻¹·Asw, so Ans·Ass⁻¹·Asn = Y_nᵀ·Y_n etc.
    let yn = tri_solve(&g, asn, TriSolveMode::LeftForward)?;
    let yw = tri_solve(&g, asw, TriSolveMode::LeftForward)?;

    let s_nn = ann.sub(&yn.tr_matmul(&yn));
    let s_nw = anw.sub(&yn.tr_matmul(&yw));
    let s_ww = aww.sub(&yw.tr_matmul(&yw));

    let mut out = DenseMatrix::zeros(n + w, n + w);
    paste_block(&mut out, &s_nn, 0, 0);
    paste_block(&mut out, &s_nw, 0, n);
    paste_block(&mut out, &s_nw.transpose(), n, 0);
    paste_block(&mut out, &s_ww, n, n);
    let _ = s; // dimensions already validated
    Ok(out)
}

fn check_block_dims(
    ass: &DenseMatrix,
    asn: &DenseMatrix,
    asw: &DenseMatrix,
    ann: &DenseMatrix,
    anw: &DenseMatrix,
    aww: &DenseMatrix,
) -> Result<()> {
    let s = ass.rows();
    let n = asn.cols();
    let w = asw.cols();
    if ass.cols() != s {
        return Err(Error::dim("Ass must be square"));
    }
    if asn.rows() != s || asw.rows() != s {
        return Err(Error::dim("Asn and Asw must have as many rows as Ass"));
    }
    if ann.rows() != n || ann.cols() != n || aww.rows() != w || aww.cols() != w {
        return Err(Error::dim("Ann and Aww must be square with coupling dims"));
    }
    if anw.rows() != n || anw.cols() != w {
        return Err(Error::dim("Anw must be n×w"));
    }
    Ok(())
}

fn paste_block(dst: &mut DenseMatrix, src: &DenseMatrix, r0: usize, c0: usize) {
    for i in 0..src.rows() {
        for j in 0..src.cols() {
            dst.set(r0 + i, c0 + j, src.get(i, j));
        }
    }
}

/// True iff `m` (square, symmetric) is positive definite, decided by
/// attempting a dense Cholesky factorization.
pub fn spd_check(m: &DenseMatrix) -> bool {
    m.rows() == m.cols() && dense_cholesky(m).is_ok()
}

// ---------------------------------------------------------------------------
// Block systems
// ---------------------------------------------------------------------------

/// One elimination step's worth of a symmetric 3×3 block system: the
/// diagonal block `a_ss` of the cluster being eliminated, its couplings to
/// neighbors (`a_sn`) and to the compressible remainder (`a_sw`), and the
/// trailing blocks. The full matrix is symmetric, so `a_ns = a_snᵀ` etc.
#[derive(Debug, Clone)]
pub struct SchurBlockSystem {
    pub a_ss: DenseMatrix,
    pub a_sn: DenseMatrix,
    pub a_sw: DenseMatrix,
    pub a_nn: DenseMatrix,
    pub a_nw: DenseMatrix,
    pub a_ww: DenseMatrix,
}

impl SchurBlockSystem {
    /// Block dimensions `(s, n, w)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.a_ss.rows(), self.a_sn.cols(), self.a_sw.cols())
    }

    /// Assembles the full `(s+n+w)²` symmetric matrix in `[s, n, w]` order.
    pub fn assemble(&self) -> DenseMatrix {
        let (s, n, w) = self.dims();
        let mut a = DenseMatrix::zeros(s + n + w, s + n + w);
        paste_block(&mut a, &self.a_ss, 0, 0);
        paste_block(&mut a, &self.a_sn, 0, s);
        paste_block(&mut a, &self.a_sw, 0, s + n);
        paste_block(&mut a, &self.a_sn.transpose(), s, 0);
        paste_block(&mut a, &self.a_nn, s, s);
        paste_block(&mut a, &self.a_nw, s, s + n);
        paste_block(&mut a, &self.a_sw.transpose(), s + n, 0);
        paste_block(&mut a, &self.a_nw.transpose(), s + n, s);
        paste_block(&mut a, &self.a_ww, s + n, s + n);
        a
    }

    fn validate(&self) -> Result<()> {
        check_block_dims(
            &self.a_ss, &self.a_sn, &self.a_sw, &self.a_nn, &self.a_nw, &self.a_ww,
        )
    }

    /// Largest 2-norm among the six distinct blocks; sets the roundoff scale.
    fn input_scale(&self) -> f64 {
        [
            &self.a_ss, &self.a_sn, &self.a_sw, &self.a_nn, &self.a_nw, &self.a_ww,
        ]
        .iter()
        .map(|b| if b.is_empty() { 0.0 } else { b.norm_two() })
        .fold(0.0, f64::max)
    }
}

// ---------------------------------------------------------------------------
// Error experiment
// ---------------------------------------------------------------------------

/// Measured errors and bound evaluations for one elimination step.
///
/// Block errors (`e_*_norm`) are measured by literally subtracting the
/// exact Schur complement from the approximate one, so they sit on a
/// roundoff floor of about `noise_floor` even when the analytic error is
/// zero; every `*_satisfied` comparison allows for that floor.
///
/// For the scaled scheme the ww error admits the closed form
/// `E_ww = V̂₂·V̂₂ᵀ` (the Gram matrix of the discarded part of the scaled
/// coupling), which is evaluated directly into the `identity_*` fields:
/// the Gram route avoids the subtractive cancellation that limits
/// `e_ww_norm` to the roundoff floor, so the identity `‖E_ww‖ = tail²`
/// can be checked at `1e-10` relative even for tails near `1e-4`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ErrorReport {
    /// Whether the coupling was scaled by `G⁻¹` before truncation.
    pub dc: bool,
    /// Requested truncation tolerance.
    pub eps_requested: f64,
    /// Achieved tail: largest discarded singular value. All bounds are
    /// evaluated with this value as `ε`.
    pub tail_norm: f64,
    /// Number of kept singular directions.
    pub kept_rank: usize,
    /// Block sizes of the experiment.
    pub s_size: usize,
    pub n_size: usize,
    pub w_size: usize,
    /// Extreme singular values of `a_ss`.
    pub sigma_max_ss: f64,
    pub sigma_min_ss: f64,
    /// `‖A_ns‖₂` and `‖A_sn‖₂`: equal in exact arithmetic (the matrix is
    /// symmetric); both are reported for transparency.
    pub a_ns_norm: f64,
    pub a_sn_norm: f64,
    pub a_sw_norm: f64,
    /// Measured block errors ‖approx − exact‖₂ (subtraction route).
    pub e_nn_norm: f64,
    pub e_nw_norm: f64,
    pub e_ww_norm: f64,
    /// Measured ‖E‖₂ of the full (n+w)² error matrix.
    pub e_norm: f64,
    /// Closed-form right-hand sides evaluated with the achieved tail.
    pub bound_nw: f64,
    pub bound_ww: f64,
    pub bound_total: f64,
    /// Bound satisfaction, each with relative slack plus the noise floor.
    pub nw_satisfied: bool,
    pub ww_satisfied: bool,
    pub total_satisfied: bool,
    /// The `nn` block must be exact (no approximation touches it).
    pub nn_exact: bool,
    /// All of the above satisfaction flags at once.
    pub satisfied: bool,
    /// Scaled scheme only: `‖V̂₂V̂₂ᵀ‖₂` via the Gram construction.
    pub identity_ww_norm: Option<f64>,
    /// Scaled scheme only: relative deviation `|‖V̂₂V̂₂ᵀ‖ − tail²|` over
    /// `max(tail², identity floor)`.
    pub identity_rel_dev: Option<f64>,
    /// Scaled scheme only: the Gram error block is PSD (Cholesky succeeds
    /// after a shift at the roundoff floor).
    pub identity_psd: Option<bool>,
    /// SPD check (plain Cholesky) of the approximate Schur ww block. The
    /// scaled scheme guarantees this; the unscaled one does not.
    pub approx_ww_spd: bool,
    /// Absolute roundoff floor used in the satisfaction comparisons.
    pub noise_floor: f64,
}

/// Runs one elimination step on `sys` at tolerance `eps` (interpreted as an
/// absolute singular-value threshold) with (`dc=true`) or without
/// (`dc=false`) scaling by the Cholesky factor of `a_ss` before truncation,
/// and measures the Schur-complement error against [`exact_schur`].
pub fn schur_error_experiment(sys: &SchurBlockSystem, eps: f64, dc: bool) -> Result<ErrorReport> {
    sys.validate()?;
    if !(eps >= 0.0) {
        return Err(Error::invalid("eps must be nonnegative"));
    }
    let (s, n, w) = sys.dims();
    if s == 0 || w == 0 {
        return Err(Error::invalid(
            "error experiment needs nonempty s and w blocks",
        ));
    }

    let g = dense_cholesky(&sys.a_ss)?;
    let yn = tri_solve(&g, &sys.a_sn, TriSolveMode::LeftForward)?;
    let yw = tri_solve(&g, &sys.a_sw, TriSolveMode::LeftForward)?;

    // Exact Schur blocks (same formulas as exact_schur, kept block-wise).
    let s_nn = sys.a_nn.sub(&yn.tr_matmul(&yn));
    let s_nw = sys.a_nw.sub(&yn.tr_matmul(&yw));
    let s_ww = sys.a_ww.sub(&yw.tr_matmul(&yw));

    let (sigma_max_ss, sigma_min_ss) = extreme_singular_values(&sys.a_ss);
    let a_sn_norm = if n == 0 { 0.0 } else { sys.a_sn.norm_two() };
    let a_ns_norm = if n == 0 {
        0.0
    } else {
        sys.a_sn.transpose().norm_two()
    };
    let a_sw_norm = sys.a_sw.norm_two();
    let noise_floor = NOISE_FLOOR_PER_SCALE * sys.input_scale().max(1.0);

    // Approximate Schur blocks plus, for the scaled scheme, the Gram form
    // of the ww error.
    let (t_nn, t_nw, t_ww, tail_norm, kept_rank, identity);
    if dc {
        // Truncate the scaled coupling Z = G⁻¹·A_sw = Û₁V̂₁ᵀ + Û₂V̂₂ᵀ.
        let fac = truncated_lowrank(&yw, eps, EpsMode::Absolute);
        tail_norm = fac.tail_norm;
        kept_rank = fac.rank;
        let kept = fac.u1.matmul(&fac.v1.transpose());
        t_nn = s_nn.clone();
        t_nw = sys.a_nw.sub(&yn.tr_matmul(&kept));
        t_ww = sys.a_ww.sub(&fac.v1.matmul_transb(&fac.v1));

        // Gram route: E_ww = V̂₂V̂₂ᵀ with V̂₂ᵀ = Û₂ᵀ·Z.
        let u2 = orthonormal_complement(&fac.u1);
        let v2t = u2.tr_matmul(&yw);
        let mut gram = v2t.tr_matmul(&v2t);
        gram.symmetrize();
        let id_norm = if gram.is_empty() { 0.0 } else { gram.norm_two() };
        // Below this, a Gram norm is indistinguishable from roundoff of
        // the O(‖Z‖²) products that formed it.
        let z_norm = yw.norm_two();
        let id_floor = (1e-12 * z_norm.max(1.0)).powi(2);
        let rel_dev = (id_norm - tail_norm * tail_norm).abs()
            / (tail_norm * tail_norm).max(id_floor);
        let psd = if gram.is_empty() {
            true
        } else {
            let mut shifted = gram.clone();
            let shift = 1e-14 * id_norm + 1e-30;
            for i in 0..shifted.rows() {
                shifted.set(i, i, shifted.get(i, i) + shift);
            }
            dense_cholesky(&shifted).is_ok()
        };
        identity = Some((id_norm, rel_dev, psd));
    } else {
        // Truncate the raw coupling A_sw = U₁V₁ᵀ + U₂V₂ᵀ.
        let fac = truncated_lowrank(&sys.a_sw, eps, EpsMode::Absolute);
        tail_norm = fac.tail_norm;
        kept_rank = fac.rank;
        let kept = fac.u1.matmul(&fac.v1.transpose());
        // X = Ass⁻¹·(U₁V₁ᵀ) via the two triangular solves.
        let x = tri_solve(
            &g,
            &tri_solve(&g, &kept, TriSolveMode::LeftForward)?,
            TriSolveMode::LeftBackward,
        )?;
        t_nn = s_nn.clone();
        t_nw = sys.a_nw.sub(&sys.a_sn.tr_matmul(&x));
        t_ww = sys.a_ww.sub(&kept.tr_matmul(&x));
        identity = None;
    }

    // Subtraction route: E = S_approx − S_exact, block-wise.
    let e_nn = t_nn.sub(&s_nn);
    let e_nw = t_nw.sub(&s_nw);
    let e_ww = t_ww.sub(&s_ww);
    let e_nn_norm = if e_nn.is_empty() { 0.0 } else { e_nn.norm_two() };
    let e_nw_norm = if e_nw.is_empty() { 0.0 } else { e_nw.norm_two() };
    let e_ww_norm = e_ww.norm_two();
    let mut e_full = DenseMatrix::zeros(n + w, n + w);
    paste_block(&mut e_full, &e_nn, 0, 0);
    paste_block(&mut e_full, &e_nw, 0, n);
    paste_block(&mut e_full, &e_nw.transpose(), n, 0);
    paste_block(&mut e_full, &e_ww, n, n);
    let e_norm = e_full.norm_two();

    // Bound right-hand sides with ε = achieved tail.
    let eps_hat = tail_norm;
    let (bound_nw, bound_ww, bound_total) = if dc {
        let b_nw = eps_hat * a_ns_norm / sigma_min_ss.sqrt();
        let b_ww = eps_hat * eps_hat;
        (b_nw, b_ww, b_nw + b_ww)
    } else {
        let b_nw = eps_hat * a_ns_norm / sigma_min_ss;
        let b_ww =
            2.0 * eps_hat * a_sw_norm / sigma_min_ss + eps_hat * eps_hat / sigma_min_ss;
        let b_tot = eps_hat * (2.0 * a_sw_norm + a_ns_norm) / sigma_min_ss
            + eps_hat * eps_hat / sigma_min_ss;
        (b_nw, b_ww, b_tot)
    };

    let meets = |err: f64, bound: f64| err <= bound * (1.0 + BOUND_REL_SLACK) + noise_floor;
    let nw_satisfied = meets(e_nw_norm, bound_nw);
    let ww_satisfied = meets(e_ww_norm, bound_ww);
    let total_satisfied = meets(e_norm, bound_total);
    let nn_exact = e_nn_norm <= noise_floor;
    let satisfied = nw_satisfied && ww_satisfied && total_satisfied && nn_exact;

    let approx_ww_spd = spd_check(&{
        let mut sym = t_ww.clone();
        sym.symmetrize();
        sym
    });

    let (identity_ww_norm, identity_rel_dev, identity_psd) = match identity {
        Some((a, b, c)) => (Some(a), Some(b), Some(c)),
        None => (None, None, None),
    };

    Ok(ErrorReport {
        dc,
        eps_requested: eps,
        tail_norm,
        kept_rank,
        s_size: s,
        n_size: n,
        w_size: w,
        sigma_max_ss,
        sigma_min_ss,
        a_ns_norm,
        a_sn_norm,
        a_sw_norm,
        e_nn_norm,
        e_nw_norm,
        e_ww_norm,
        e_norm,
        bound_nw,
        bound_ww,
        bound_total,
        nw_satisfied,
        ww_satisfied,
        total_satisfied,
        nn_exact,
        satisfied,
        identity_ww_norm,
        identity_rel_dev,
        identity_psd,
        approx_ww_spd,
        noise_floor,
    })
}

// ---------------------------------------------------------------------------
// Randomized block-system synthesis
// ---------------------------------------------------------------------------

/// Orthogonal matrix from the QR factorization of a uniform random square.
fn random_orthogonal(rng: &mut ChaCha8Rng, dim: usize) -> DenseMatrix {
    let m = DenseMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
    let qr = m.to_na().qr();
    DenseMatrix::from_na(&qr.q())
}

/// Geometric sequence from `hi` down to `lo` with `count` points.
fn logspace_desc(hi: f64, lo: f64, count: usize) -> Vec<f64> {
    assert!(hi > 0.0 && lo > 0.0 && count > 0);
    if count == 1 {
        return vec![hi];
    }
    let ratio = (lo / hi).powf(1.0 / (count - 1) as f64);
    let mut v = Vec::with_capacity(count);
    let mut x = hi;
    for _ in 0..count {
        v.push(x);
        x *= ratio;
    }
    v
}

/// Rectangular matrix with the prescribed singular values (padded by exact
/// zeros beyond `spectrum.len()`), built as `U·diag(spectrum)·Vᵀ` from
/// random orthogonal factors.
fn matrix_with_spectrum(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    spectrum: &[f64],
) -> DenseMatrix {
    let r = spectrum.len().min(rows.min(cols));
    let u = random_orthogonal(rng, rows).columns(0, r);
    let v = random_orthogonal(rng, cols).columns(0, r);
    let mut ud = DenseMatrix::zeros(rows, r);
    for j in 0..r {
        for i in 0..rows {
            ud.set(i, j, u.get(i, j) * spectrum[j]);
        }
    }
    ud.matmul_transb(&v)
}

/// Symmetric positive definite matrix with the prescribed eigenvalues.
fn spd_with_spectrum(rng: &mut ChaCha8Rng, dim: usize, spectrum: &[f64]) -> DenseMatrix {
    assert_eq!(spectrum.len(), dim);
    let q = random_orthogonal(rng, dim);
    let mut qd = DenseMatrix::zeros(dim, dim);
    for j in 0..dim {
        for i in 0..dim {
            qd.set(i, j, q.get(i, j) * spectrum[j]);
        }
    }
    let mut m = qd.matmul_transb(&q);
    m.symmetrize();
    m
}

/// Randomized block system with controlled conditioning.
///
/// Construction, chosen so every assembled quantity stays O(1):
/// * `a_ss` has eigenvalues geometrically spaced from `1` down to
///   `sigma_min`, so `σ_max(a_ss) = 1` and `σ_min(a_ss) = sigma_min`;
/// * couplings are scaled by `√sigma_min`, which keeps the Schur products
///   `A_·s·Ass⁻¹·A_s·` at unit scale regardless of the conditioning and
///   gives the unscaled scheme's errors room to blow up by `1/σ_min`;
/// * `a_sw` carries a wide geometric spectrum (`1` down to `1e-6` before
///   scaling) so every tolerance in a sweep truncates a different rank;
/// * `a_nn` and `a_ww` are `ρ·I` plus a small random SPD part with
///   `ρ = (‖a_sn‖+‖a_sw‖)²/sigma_min + 1/2`, which makes the assembled
///   matrix SPD with margin: the Schur complement of `a_ss` is at least
///   `(ρ − ‖a_nw‖)·I − (ρ − 1/2)·I = (1/2 − ‖a_nw‖)·I ≻ 0`.
pub fn random_block_system(
    rng: &mut ChaCha8Rng,
    s: usize,
    n: usize,
    w: usize,
    sigma_min: f64,
) -> SchurBlockSystem {
    assert!(s > 0 && w > 0, "s and w blocks must be nonempty");
    assert!(sigma_min > 0.0 && sigma_min <= 1.0);

    let a_ss = spd_with_spectrum(rng, s, &logspace_desc(1.0, sigma_min, s));

    let scale = sigma_min.sqrt();
    let sn_spec: Vec<f64> = logspace_desc(1.0, 1e-2, s.min(n).max(1))
        .iter()
        .map(|x| scale * x)
        .collect();
    let sw_spec: Vec<f64> = logspace_desc(1.0, 1e-6, s.min(w))
        .iter()
        .map(|x| scale * x)
        .collect();
    let a_sn = if n == 0 {
        DenseMatrix::zeros(s, 0)
    } else {
        matrix_with_spectrum(rng, s, n, &sn_spec)
    };
    let a_sw = matrix_with_spectrum(rng, s, w, &sw_spec);
    let a_nw = if n == 0 {
        DenseMatrix::zeros(0, w)
    } else {
        matrix_with_spectrum(rng, n, w, &logspace_desc(0.1, 1e-3, n.min(w)))
    };

    let sn_norm = if n == 0 { 0.0 } else { a_sn.norm_two() };
    let sw_norm = a_sw.norm_two();
    let rho = (sn_norm + sw_norm).powi(2) / sigma_min + 0.5;

    let bulk = |rng: &mut ChaCha8Rng, dim: usize| -> DenseMatrix {
        let evals: Vec<f64> = (0..dim).map(|_| rho + rng.random_range(0.0..0.25)).collect();
        spd_with_spectrum(rng, dim, &evals)
    };
    let a_nn = if n == 0 {
        DenseMatrix::zeros(0, 0)
    } else {
        bulk(rng, n)
    };
    let a_ww = bulk(rng, w);

    SchurBlockSystem {
        a_ss,
        a_sn,
        a_sw,
        a_nn,
        a_nw,
        a_ww,
    }
}

// ---------------------------------------------------------------------------
// Randomized error-bound trials
// ---------------------------------------------------------------------------

/// Tolerance grid used by [`run_error_bound_trials`].
pub const TRIAL_EPS_GRID: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];

/// Aggregate outcome of a randomized sweep over block systems: each trial
/// draws a system (block sizes 5–50, `σ_min(a_ss)` log-uniform in
/// `[1e-8, 1]`) and runs both schemes at every tolerance in
/// [`TRIAL_EPS_GRID`].
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrialSummary {
    pub trials: usize,
    pub eps_grid: Vec<f64>,
    /// Total experiments run (trials × grid size × 2 schemes).
    pub experiments: usize,
    /// Scaled scheme: `‖E_ww‖ = tail²` identity violations (relative
    /// deviation above 1e-10) and the largest deviation seen.
    pub identity_failures: usize,
    pub identity_max_rel_dev: f64,
    /// Scaled scheme: Gram error block failed the PSD check.
    pub psd_failures: usize,
    /// Unscaled scheme: any of the three bound checks failed.
    pub unscaled_bound_failures: usize,
    /// Scaled scheme: any of the three bound checks failed.
    pub scaled_bound_failures: usize,
    /// The `nn` block deviated beyond the roundoff floor in any scheme.
    pub nn_exactness_failures: usize,
    /// Scaled ww error exceeded the unscaled ww error (beyond roundoff).
    pub dominance_failures: usize,
    /// Scaled scheme: approximate Schur ww block failed the SPD check.
    pub corollary_failures: usize,
    /// Unscaled scheme: approximate Schur ww block indefinite. Expected
    /// for ill-conditioned draws; informational, not a failure.
    pub unscaled_ww_indefinite: usize,
    pub max_scaled_ww_error: f64,
    pub max_unscaled_ww_error: f64,
    pub elapsed_seconds: f64,
    /// True iff every failure counter above is zero.
    pub all_passed: bool,
}

/// Identity-check threshold: `‖E_ww‖` must equal `tail²` to this relative
/// accuracy in the scaled scheme.
pub const IDENTITY_REL_TOL: f64 = 1e-10;

/// Runs `trials` randomized block systems through both schemes at every
/// tolerance in [`TRIAL_EPS_GRID`] and tallies bound, identity, PSD,
/// dominance, and SPD-corollary violations. Deterministic for a fixed
/// `seed`.
pub fn run_error_bound_trials(trials: usize, seed: u64) -> Result<TrialSummary> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut summary = TrialSummary {
        trials,
        eps_grid: TRIAL_EPS_GRID.to_vec(),
        experiments: 0,
        identity_failures: 0,
        identity_max_rel_dev: 0.0,
        psd_failures: 0,
        unscaled_bound_failures: 0,
        scaled_bound_failures: 0,
        nn_exactness_failures: 0,
        dominance_failures: 0,
        corollary_failures: 0,
        unscaled_ww_indefinite: 0,
        max_scaled_ww_error: 0.0,
        max_unscaled_ww_error: 0.0,
        elapsed_seconds: 0.0,
        all_passed: false,
    };

    for _ in 0..trials {
        let s = rng.random_range(5..=50);
        let n = rng.random_range(5..=50);
        let w = rng.random_range(5..=50);
        let sigma_min = 10f64.powf(rng.random_range(-8.0..0.0));
        let sys = random_block_system(&mut rng, s, n, w, sigma_min);

        for &eps in &TRIAL_EPS_GRID {
            let rep_on = schur_error_experiment(&sys, eps, true)?;
            let rep_off = schur_error_experiment(&sys, eps, false)?;
            summary.experiments += 2;

            let dev = rep_on.identity_rel_dev.unwrap_or(0.0);
            summary.identity_max_rel_dev = summary.identity_max_rel_dev.max(dev);
            if dev > IDENTITY_REL_TOL {
                summary.identity_failures += 1;
            }
            if !rep_on.identity_psd.unwrap_or(false) {
                summary.psd_failures += 1;
            }
            if !rep_on.satisfied {
                summary.scaled_bound_failures += 1;
            }
            if !rep_off.satisfied {
                summary.unscaled_bound_failures += 1;
            }
            if !rep_on.nn_exact || !rep_off.nn_exact {
                summary.nn_exactness_failures += 1;
            }
            let floor = rep_on.noise_floor.max(rep_off.noise_floor);
            if rep_on.e_ww_norm > rep_off.e_ww_norm * (1.0 + BOUND_REL_SLACK) + floor {
                summary.dominance_failures += 1;
            }
            if !rep_on.approx_ww_spd {
                summary.corollary_failures += 1;
            }
            if !rep_off.approx_ww_spd {
                summary.unscaled_ww_indefinite += 1;
            }
            summary.max_scaled_ww_error = summary.max_scaled_ww_error.max(rep_on.e_ww_norm);
            summary.max_unscaled_ww_error =
                summary.max_unscaled_ww_error.max(rep_off.e_ww_norm);
        }
    }

    summary.elapsed_seconds = start.elapsed().as_secs_f64();
    summary.all_passed = summary.identity_failures == 0
        && summary.psd_failures == 0
        && summary.unscaled_bound_failures == 0
        && summary.scaled_bound_failures == 0
        && summary.nn_exactness_failures == 0
        && summary.dominance_failures == 0
        && summary.corollary_failures == 0;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// Zero-tolerance exactness and operator properties
// ---------------------------------------------------------------------------

/// Random sparse SPD matrix: a symmetric pattern with about `degree`
/// off-diagonal entries per row, values uniform in `[-1, 1]`, made
/// strictly diagonally dominant (hence SPD) by setting each diagonal to
/// the absolute row sum plus a positive margin.
pub fn random_sparse_spd(rng: &mut ChaCha8Rng, n: usize, degree: usize) -> crate::sparse::SparseSpdMatrix {
    use std::collections::BTreeMap;
    assert!(n > 0);
    let mut off: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for i in 0..n {
        // A chain edge keeps the graph connected; the rest are random.
        if i + 1 < n {
            off.entry((i, i + 1)).or_insert_with(|| rng.random_range(-1.0..1.0));
        }
        for _ in 0..degree {
            let j = rng.random_range(0..n);
            if j != i {
                let key = (i.min(j), i.max(j));
                off.entry(key).or_insert_with(|| rng.random_range(-1.0..1.0));
            }
        }
    }
    let mut rowsum = vec![0.0f64; n];
    for (&(i, j), &v) in &off {
        rowsum[i] += v.abs();
        rowsum[j] += v.abs();
    }
    let mut triplets: Vec<(usize, usize, f64)> =
        off.iter().map(|(&(i, j), &v)| (i, j, v)).collect();
    for (i, rs) in rowsum.iter().enumerate() {
        triplets.push((i, i, rs + rng.random_range(0.1..1.0)));
    }
    crate::sparse::SparseSpdMatrix::from_triplets(n, &triplets)
        .expect("diagonally dominant construction is valid")
}

/// One matrix's result inside an [`ExactnessReport`].
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ExactnessCase {
    pub label: String,
    pub dim: usize,
    /// ‖x_hier − x_dense‖₂ / ‖x_dense‖₂ with scaling on (dc) and off.
    pub rel_dev_scaled: f64,
    pub rel_dev_unscaled: f64,
    pub passed: bool,
}

/// Outcome of [`exactness_study`].
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ExactnessReport {
    pub cases: Vec<ExactnessCase>,
    pub tol: f64,
    pub max_rel_dev: f64,
    pub elapsed_seconds: f64,
    pub all_passed: bool,
}

/// Relative tolerance for the zero-truncation exactness check.
pub const EXACTNESS_REL_TOL: f64 = 1e-10;

/// Checks that the hierarchical factorization at truncation tolerance 0
/// reproduces the dense-Cholesky direct solution to [`EXACTNESS_REL_TOL`]
/// on `matrices` random sparse SPD systems (dims spread over 200–900) and
/// on the anisotropic 16×16 model problem, with scaling both on and off.
pub fn exactness_study(matrices: usize, seed: u64) -> Result<ExactnessReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut inputs: Vec<(String, crate::sparse::SparseSpdMatrix)> = Vec::new();
    for t in 0..matrices {
        let n = rng.random_range(200..=900);
        let degree = rng.random_range(3..=6);
        inputs.push((
            format!("random_spd_{t}(n={n})"),
            random_sparse_spd(&mut rng, n, degree),
        ));
    }
    inputs.push(("aniso2d(16)".to_string(), gen_aniso2d(16, 1e-2)?));

    let mut cases = Vec::new();
    let mut max_rel_dev = 0.0f64;
    for (label, a) in &inputs {
        let n = a.dim();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();

        // Dense direct oracle.
        let g = dense_cholesky(&a.dense())?;
        let mut x_dense = b.clone();
        crate::kernels::tri_forward_vec(&g, &mut x_dense);
        crate::kernels::tri_backward_t_vec(&g, &mut x_dense);
        let xnorm = norm2(&x_dense);

        let mut devs = [0.0f64; 2];
        for (slot, dc) in [(0usize, true), (1usize, false)] {
            let config = SolverConfig {
                eps: 0.0,
                target_cluster_size: 48,
                stop_size: 96,
                dc,
                ..SolverConfig::default()
            };
            let f = hierarchical_factor(a, &config, None)?;
            let x = f.apply(&b)?;
            let diff: f64 = x
                .iter()
                .zip(&x_dense)
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
                .sqrt();
            devs[slot] = diff / xnorm;
        }
        let passed = devs[0] <= EXACTNESS_REL_TOL && devs[1] <= EXACTNESS_REL_TOL;
        max_rel_dev = max_rel_dev.max(devs[0]).max(devs[1]);
        cases.push(ExactnessCase {
            label: label.clone(),
            dim: n,
            rel_dev_scaled: devs[0],
            rel_dev_unscaled: devs[1],
            passed,
        });
    }

    let all_passed = cases.iter().all(|c| c.passed);
    Ok(ExactnessReport {
        cases,
        tol: EXACTNESS_REL_TOL,
        max_rel_dev,
        elapsed_seconds: start.elapsed().as_secs_f64(),
        all_passed,
    })
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Outcome of [`operator_property_check`].
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct OperatorCheckReport {
    pub vectors: usize,
    /// Largest relative deviation of `⟨M⁻¹u, v⟩` from `⟨u, M⁻¹v⟩`.
    pub max_symmetry_rel_dev: f64,
    /// Smallest quadratic form `⟨M⁻¹v, v⟩` seen; must be positive.
    pub min_quadratic_form: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Verifies that the factorization's solve operator is symmetric
/// (`⟨M⁻¹u, v⟩ = ⟨u, M⁻¹v⟩` to relative `tol`) and positive definite
/// (`⟨M⁻¹v, v⟩ > 0`) on `vectors` random vectors: positivity on each,
/// symmetry on consecutive pairs.
pub fn operator_property_check(
    f: &crate::hfact::HierFactorization,
    vectors: usize,
    seed: u64,
    tol: f64,
) -> Result<OperatorCheckReport> {
    let n = f.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<Vec<f64>> = (0..vectors.max(2))
        .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let images: Vec<Vec<f64>> = draws
        .iter()
        .map(|v| f.apply(v))
        .collect::<Result<_>>()?;

    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut max_sym = 0.0f64;
    let mut min_quad = f64::INFINITY;
    for i in 0..draws.len() {
        min_quad = min_quad.min(dot(&images[i], &draws[i]));
        if i + 1 < draws.len() {
            let lhs = dot(&images[i], &draws[i + 1]);
            let rhs = dot(&draws[i], &images[i + 1]);
            let denom = lhs.abs().max(rhs.abs()).max(1e-300);
            max_sym = max_sym.max((lhs - rhs).abs() / denom);
        }
    }
    Ok(OperatorCheckReport {
        vectors: draws.len(),
        max_symmetry_rel_dev: max_sym,
        min_quadratic_form: min_quad,
        tol,
        passed: max_sym <= tol && min_quad > 0.0,
    })
}

// ---------------------------------------------------------------------------
// Scaling studies
// ---------------------------------------------------------------------------

/// A refinement family of model problems for [`scaling_study`].
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum FamilySpec {
    /// Anisotropic 2-D Laplacians on n×n grids.
    Aniso2d { sizes: Vec<usize>, eps_aniso: f64 },
    /// Extruded 3-D grids (nx, ny, layers) with strong vertical coupling
    /// and a fraction of Neumann bottom columns.
    Extruded3d {
        sizes: Vec<(usize, usize, usize)>,
        vert_weight: f64,
        neumann_fraction: f64,
    },
}

/// Preconditioner choice for [`scaling_study`].
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PrecondSpec {
    /// The hierarchical factorization with the given configuration.
    Hierarchical(SolverConfig),
    /// Zero-fill incomplete Cholesky with automatic diagonal shift.
    Ic0,
    /// Unpreconditioned CG.
    None,
}

/// One problem size's results inside a [`ScalingReport`].
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ScalingRow {
    pub label: String,
    pub dim: usize,
    pub nnz: usize,
    pub factor_seconds: f64,
    pub solve_seconds: f64,
    pub solve_seconds_per_iter: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_relres: f64,
    /// Mean kept rank per elimination level (hierarchical runs only).
    pub mean_rank_per_level: Vec<f64>,
    pub memory_estimate_bytes: usize,
}

/// Factor + PCG results across a refinement family, with growth ratios
/// between consecutive sizes.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    /// `iterations[i+1] / iterations[i]` per refinement step.
    pub iteration_growth_ratios: Vec<f64>,
    pub max_iteration_growth: Option<f64>,
    /// Factor seconds per matrix nonzero, one entry per row.
    pub factor_seconds_per_nnz: Vec<f64>,
    /// max/min of `factor_seconds_per_nnz` across rows.
    pub factor_time_per_nnz_variation: Option<f64>,
    /// Per refinement step, the largest ratio of mean kept ranks over the
    /// elimination levels the two sizes share.
    pub rank_growth_ratios: Vec<f64>,
    pub max_rank_growth: Option<f64>,
    /// False when the family has fewer than two sizes, in which case the
    /// growth metrics above are absent.
    pub growth_defined: bool,
}

/// Runs factorization + PCG on every size in `family` with the chosen
/// preconditioner and tabulates cost, iteration, and rank growth.
pub fn scaling_study(
    family: &FamilySpec,
    precond: &PrecondSpec,
    tol: f64,
    maxit: usize,
) -> Result<ScalingReport> {
    let mut rows = Vec::new();

    let problems: Vec<(String, crate::sparse::SparseSpdMatrix, Option<crate::partition::ColumnMap>)> =
        match family {
            FamilySpec::Aniso2d { sizes, eps_aniso } => {
                let mut v = Vec::new();
                for &nsz in sizes {
                    v.push((format!("{nsz}x{nsz}"), gen_aniso2d(nsz, *eps_aniso)?, None));
                }
                v
            }
            FamilySpec::Extruded3d {
                sizes,
                vert_weight,
                neumann_fraction,
            } => {
                let mut v = Vec::new();
                for &(nx, ny, nz) in sizes {
                    let bc = BottomBc::NeumannFraction(*neumann_fraction);
                    let (a, colmap) = gen_extruded3d(nx, ny, nz, *vert_weight, bc)?;
                    v.push((format!("{nx}x{ny}x{nz}"), a, Some(colmap)));
                }
                v
            }
        };

    for (label, a, colmap) in &problems {
        let b: Vec<f64> = {
            let ones = vec![1.0; a.dim()];
            a.matvec(&ones)
        };

        let t0 = Instant::now();
        let (precond_box, mean_ranks, memory): (Box<dyn Preconditioner>, Vec<f64>, usize) =
            match precond {
                PrecondSpec::Hierarchical(config) => {
                    let f = hierarchical_factor(a, config, colmap.as_ref())?;
                    let ranks = f
                        .rank_stats()
                        .iter()
                        .map(|st| st.mean_rank)
                        .collect::<Vec<_>>();
                    let mem = f.memory_estimate_bytes();
                    (Box::new(f), ranks, mem)
                }
                PrecondSpec::Ic0 => {
                    let (f, _shift) = crate::krylov::ic0_auto(a)?;
                    let mem = f.memory_estimate_bytes();
                    (Box::new(f), Vec::new(), mem)
                }
                PrecondSpec::None => (Box::new(IdentityPrecond), Vec::new(), 0),
            };
        let factor_seconds = t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        let (_x, rep) = pcg(a, &b, precond_box.as_ref(), tol, maxit)?;
        let solve_seconds = t1.elapsed().as_secs_f64();

        rows.push(ScalingRow {
            label: label.clone(),
            dim: a.dim(),
            nnz: a.nnz(),
            factor_seconds,
            solve_seconds,
            solve_seconds_per_iter: solve_seconds / rep.iterations.max(1) as f64,
            iterations: rep.iterations,
            converged: rep.converged,
            final_relres: rep.final_relres,
            mean_rank_per_level: mean_ranks,
            memory_estimate_bytes: memory,
        });
    }

    let growth_defined = rows.len() >= 2;
    let mut iteration_growth_ratios = Vec::new();
    let mut rank_growth_ratios = Vec::new();
    let factor_seconds_per_nnz: Vec<f64> = rows
        .iter()
        .map(|r| r.factor_seconds / r.nnz.max(1) as f64)
        .collect();
    for pair in rows.windows(2) {
        let (prev, next) = (&pair[0], &pair[1]);
        iteration_growth_ratios
            .push(next.iterations.max(1) as f64 / prev.iterations.max(1) as f64);
        let shared = prev.mean_rank_per_level.len().min(next.mean_rank_per_level.len());
        let mut worst: f64 = 0.0;
        for lvl in 0..shared {
            let p = prev.mean_rank_per_level[lvl];
            let q = next.mean_rank_per_level[lvl];
            if p > 0.0 {
                worst = worst.max(q / p);
            }
        }
        if shared > 0 {
            rank_growth_ratios.push(worst);
        }
    }
    let max_iteration_growth = iteration_growth_ratios.iter().copied().fold(
        None,
        |acc: Option<f64>, x| Some(acc.map_or(x, |a| a.max(x))),
    );
    let max_rank_growth = rank_growth_ratios
        .iter()
        .copied()
        .fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |a| a.max(x))));
    let factor_time_per_nnz_variation = if growth_defined {
        let lo = factor_seconds_per_nnz.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = factor_seconds_per_nnz.iter().copied().fold(0.0f64, f64::max);
        if lo > 0.0 {
            Some(hi / lo)
        } else {
            None
        }
    } else {
        None
    };

    Ok(ScalingReport {
        rows,
        iteration_growth_ratios,
        max_iteration_growth,
        factor_seconds_per_nnz,
        factor_time_per_nnz_variation,
        rank_growth_ratios,
        max_rank_growth,
        growth_defined,
    })
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::EpsMode;

    fn approx_eq(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn exact_schur_of_block_diagonal_is_trailing_blocks() {
        // Zero couplings: the Schur complement is just [[Ann, 0], [0, Aww]].
        let ass = DenseMatrix::identity(3);
        let asn = DenseMatrix::zeros(3, 2);
        let asw = DenseMatrix::zeros(3, 2);
        let ann = DenseMatrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 2.0]]);
        let anw = DenseMatrix::zeros(2, 2);
        let aww = DenseMatrix::from_rows(&[vec![3.0, 1.0], vec![1.0, 3.0]]);
        let s = exact_schur(&ass, &asn, &asw, &ann, &anw, &aww).unwrap();
        let mut expect = DenseMatrix::zeros(4, 4);
        paste_block(&mut expect, &ann, 0, 0);
        paste_block(&mut expect, &aww, 2, 2);
        assert!(s.sub(&expect).max_abs() < 1e-14);
    }

    #[test]
    fn exact_schur_matches_hand_arithmetic() {
        // A = [[4,2,0],[2,3,1],[0,1,2]], s = {0}:
        // S = [[3,1],[1,2]] − [2,0]ᵀ·(1/4)·[2,0] = [[2,1],[1,2]].
        let ass = DenseMatrix::from_rows(&[vec![4.0]]);
        let asn = DenseMatrix::from_rows(&[vec![2.0]]);
        let asw = DenseMatrix::from_rows(&[vec![0.0]]);
        let ann = DenseMatrix::from_rows(&[vec![3.0]]);
        let anw = DenseMatrix::from_rows(&[vec![1.0]]);
        let aww = DenseMatrix::from_rows(&[vec![2.0]]);
        let s = exact_schur(&ass, &asn, &asw, &ann, &anw, &aww).unwrap();
        let expect = DenseMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        assert!(s.sub(&expect).max_abs() < 1e-14);
    }

    #[test]
    fn exact_schur_matches_inverse_of_trailing_inverse_block() {
        // Independent oracle: for SPD A, (A/Ass)⁻¹ equals the trailing
        // block of A⁻¹, so S must equal the inverse of that block.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dim = 30;
        let s = 10;
        let spec: Vec<f64> = (0..dim).map(|i| 1.0 + i as f64 * 0.3).collect();
        let a = spd_with_spectrum(&mut rng, dim, &spec);

        let n = 12;
        let sys = SchurBlockSystem {
            a_ss: a.submatrix(0, s, 0, s),
            a_sn: a.submatrix(0, s, s, s + n),
            a_sw: a.submatrix(0, s, s + n, dim),
            a_nn: a.submatrix(s, s + n, s, s + n),
            a_nw: a.submatrix(s, s + n, s + n, dim),
            a_ww: a.submatrix(s + n, dim, s + n, dim),
        };
        let schur = exact_schur(&sys.a_ss, &sys.a_sn, &sys.a_sw, &sys.a_nn, &sys.a_nw, &sys.a_ww)
            .unwrap();

        let a_inv = a.to_na().try_inverse().expect("SPD matrix inverts");
        let trailing = DenseMatrix::from_na(&a_inv.view((s, s), (dim - s, dim - s)).into_owned());
        let oracle =
            DenseMatrix::from_na(&trailing.to_na().try_inverse().expect("trailing block inverts"));
        let rel = schur.sub(&oracle).norm_two() / oracle.norm_two();
        assert!(rel < 1e-10, "relative deviation {rel}");
    }

    #[test]
    fn exact_schur_rejects_indefinite_diagonal_block() {
        let ass = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        let asn = DenseMatrix::zeros(2, 1);
        let asw = DenseMatrix::zeros(2, 1);
        let ann = DenseMatrix::identity(1);
        let anw = DenseMatrix::zeros(1, 1);
        let aww = DenseMatrix::identity(1);
        let err = exact_schur(&ass, &asn, &asw, &ann, &anw, &aww).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { .. }));
    }

    #[test]
    fn spd_check_accepts_identity_rejects_indefinite() {
        assert!(spd_check(&DenseMatrix::identity(3)));
        assert!(!spd_check(&DenseMatrix::from_rows(&[
            vec![1.0, 2.0],
            vec![2.0, 1.0]
        ])));
    }

    #[test]
    fn random_block_system_is_spd_and_conditioned_as_requested() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &sigma_min in &[1.0, 1e-3, 1e-8] {
            let sys = random_block_system(&mut rng, 12, 9, 14, sigma_min);
            assert!(spd_check(&sys.assemble()), "assembled matrix SPD");
            let (hi, lo) = extreme_singular_values(&sys.a_ss);
            assert!(approx_eq(hi, 1.0, 1e-10));
            assert!(approx_eq(lo, sigma_min, 1e-8));
        }
    }

    #[test]
    fn zero_tolerance_gives_zero_error_both_schemes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sys = random_block_system(&mut rng, 10, 8, 12, 1e-4);
        for dc in [true, false] {
            let rep = schur_error_experiment(&sys, 0.0, dc).unwrap();
            assert_eq!(rep.tail_norm, 0.0);
            assert!(rep.e_nn_norm <= rep.noise_floor, "nn {}", rep.e_nn_norm);
            assert!(rep.e_nw_norm <= rep.noise_floor, "nw {}", rep.e_nw_norm);
            assert!(rep.e_ww_norm <= rep.noise_floor, "ww {}", rep.e_ww_norm);
            assert!(rep.e_norm <= rep.noise_floor);
            assert!(rep.satisfied);
        }
    }

    #[test]
    fn scaled_scheme_ww_error_is_tail_squared_and_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for &sigma_min in &[1e-2, 1e-6] {
            let sys = random_block_system(&mut rng, 20, 10, 15, sigma_min);
            let rep = schur_error_experiment(&sys, 1e-2, true).unwrap();
            assert!(rep.tail_norm > 0.0, "truncation actually happened");
            assert!(
                rep.identity_rel_dev.unwrap() <= IDENTITY_REL_TOL,
                "identity deviation {}",
                rep.identity_rel_dev.unwrap()
            );
            assert!(rep.identity_psd.unwrap());
            assert!(rep.approx_ww_spd, "scaled approximate ww block is SPD");
            assert!(rep.satisfied);
        }
    }

    #[test]
    fn unscaled_scheme_error_blows_up_with_conditioning_but_bound_holds() {
        // Near-singular a_ss: the unscaled ww error approaches its
        // first-order bound and dwarfs the scaled scheme's tail².
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let sys = random_block_system(&mut rng, 20, 10, 15, 1e-6);
        let off = schur_error_experiment(&sys, 1e-3, false).unwrap();
        let on = schur_error_experiment(&sys, 1e-3, true).unwrap();
        assert!(off.satisfied, "unscaled bounds hold");
        assert!(on.satisfied, "scaled bounds hold");
        assert!(
            off.e_ww_norm > 10.0 * on.e_ww_norm,
            "unscaled ww error {} should dwarf scaled {}",
            off.e_ww_norm,
            on.e_ww_norm
        );
    }

    #[test]
    fn error_bound_trials_pass_on_smoke_sweep() {
        let summary = run_error_bound_trials(12, 20260815).unwrap();
        assert_eq!(summary.experiments, 12 * TRIAL_EPS_GRID.len() * 2);
        assert!(
            summary.all_passed,
            "smoke sweep violations: {summary:?}"
        );
        assert!(summary.max_unscaled_ww_error >= summary.max_scaled_ww_error);
    }

    #[test]
    fn truncated_lowrank_scaled_ranks_never_below_unscaled() {
        // With σ_max(a_ss) = 1, scaling by G⁻¹ can only raise singular
        // values, so the scaled compression keeps at least as many
        // directions at the same absolute threshold.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let sys = random_block_system(&mut rng, 15, 6, 18, 1e-5);
        let g = dense_cholesky(&sys.a_ss).unwrap();
        let z = tri_solve(&g, &sys.a_sw, TriSolveMode::LeftForward).unwrap();
        for &eps in &TRIAL_EPS_GRID {
            let on = truncated_lowrank(&z, eps, EpsMode::Absolute);
            let off = truncated_lowrank(&sys.a_sw, eps, EpsMode::Absolute);
            assert!(on.rank >= off.rank, "eps {eps}: {} < {}", on.rank, off.rank);
        }
    }

    #[test]
    fn random_sparse_spd_is_spd_and_connected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_sparse_spd(&mut rng, 40, 4);
        assert_eq!(a.dim(), 40);
        assert!(a.nnz() > 40, "has off-diagonal entries");
        assert!(spd_check(&a.dense()));
    }

    #[test]
    fn exactness_study_reproduces_dense_direct_solve() {
        let report = exactness_study(2, 99).unwrap();
        assert_eq!(report.cases.len(), 3, "two random cases plus the model problem");
        assert!(
            report.all_passed,
            "max relative deviation {}",
            report.max_rel_dev
        );
    }

    #[test]
    fn operator_property_check_passes_on_truncated_factorization() {
        let a = gen_aniso2d(12, 1e-1).unwrap();
        let config = SolverConfig {
            eps: 1e-2,
            eps_mode: EpsMode::Relative,
            target_cluster_size: 16,
            stop_size: 32,
            ..SolverConfig::default()
        };
        let f = hierarchical_factor(&a, &config, None).unwrap();
        let rep = operator_property_check(&f, 100, 7, 1e-10).unwrap();
        assert!(rep.passed, "sym dev {} min quad {}", rep.max_symmetry_rel_dev, rep.min_quadratic_form);
        assert_eq!(rep.vectors, 100);
    }

    #[test]
    fn scaling_study_single_size_has_no_growth_metrics() {
        let family = FamilySpec::Aniso2d {
            sizes: vec![12],
            eps_aniso: 1e-2,
        };
        let report = scaling_study(&family, &PrecondSpec::None, 1e-8, 2000).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert!(!report.growth_defined);
        assert!(report.max_iteration_growth.is_none());
        assert!(report.iteration_growth_ratios.is_empty());
        assert!(report.rows[0].converged);
    }

    #[test]
    fn scaling_study_tabulates_hierarchical_runs() {
        let family = FamilySpec::Aniso2d {
            sizes: vec![12, 24],
            eps_aniso: 1e-1,
        };
        let config = SolverConfig {
            eps: 1e-8,
            target_cluster_size: 20,
            stop_size: 40,
            ..SolverConfig::default()
        };
        let report =
            scaling_study(&family, &PrecondSpec::Hierarchical(config), 1e-10, 200).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert!(report.growth_defined);
        assert!(report.rows.iter().all(|r| r.converged));
        assert!(report.rows.iter().all(|r| !r.mean_rank_per_level.is_empty()));
        assert_eq!(report.iteration_growth_ratios.len(), 1);
        assert!(report.max_iteration_growth.is_some());
        assert!(report.factor_time_per_nnz_variation.is_some());
    }
}
