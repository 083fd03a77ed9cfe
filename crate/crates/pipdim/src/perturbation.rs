//! Matrix-perturbation primitives: SVD, PIP matrix and loss, principal
//! angles, projector differences, subspace perturbation bounds, and unitary
//! alignment.
//!
//! Everything downstream (the selection bounds, the Monte-Carlo engine, the
//! evaluation harness) is built on the operations in this module.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerance for orthonormality checks on input factors.
pub const ORTHONORMALITY_TOL: f64 = 1e-8;

/// Full singular value decomposition `M = U diag(D) V^T` with `D`
/// non-negative and non-increasing.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    /// Left singular vectors, n x n orthogonal.
    pub u: DMatrix<f64>,
    /// Singular values, non-increasing.
    pub singular_values: DVector<f64>,
    /// Right singular vectors, n x n orthogonal.
    pub v: DMatrix<f64>,
}

impl SvdFactors {
    /// Reconstruct `U diag(D) V^T`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let n = self.u.nrows();
        let mut ud = self.u.clone();
        for j in 0..n {
            let s = self.singular_values[j];
            for i in 0..n {
                ud[(i, j)] *= s;
            }
        }
        ud * self.v.transpose()
    }

    pub fn spectrum(&self) -> Vec<f64> {
        self.singular_values.iter().copied().collect()
    }
}

/// Where an embedding came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingSource {
    /// Factorized from a clean (simulated) signal matrix.
    Oracle,
    /// Factorized from an estimated signal matrix.
    Trained,
    /// Imported from a file.
    External,
}

/// An `n x k` embedding matrix `E = U_{1:k} D_{1:k}^alpha` together with the
/// exponent it was built with.
#[derive(Debug, Clone)]
pub struct EmbeddingMatrix {
    /// Row i is the vector for token i.
    pub matrix: DMatrix<f64>,
    /// Exponent applied to the singular values, in [0, 1].
    pub alpha: f64,
    pub source: EmbeddingSource,
    /// Set when the requested dimensionality exceeded the numerical rank of
    /// the factorized matrix.
    pub rank_warning: Option<String>,
}

impl EmbeddingMatrix {
    pub fn new(matrix: DMatrix<f64>, alpha: f64, source: EmbeddingSource) -> Self {
        EmbeddingMatrix {
            matrix,
            alpha,
            source,
            rank_warning: None,
        }
    }

    /// Number of rows (vocabulary size).
    pub fn vocab_size(&self) -> usize {
        self.matrix.nrows()
    }

    /// Embedding dimensionality k.
    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn pip_matrix(&self) -> DMatrix<f64> {
        pip_matrix(&self.matrix)
    }

    pub fn pip_loss(&self, other: &EmbeddingMatrix) -> Result<f64> {
        pip_loss(&self.matrix, &other.matrix)
    }
}

fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} contains non-finite entries")))
    }
}

/// Full SVD of a square matrix.
///
/// Symmetric inputs (the usual case: every signal matrix is symmetric) go
/// through a symmetric eigendecomposition, with singular values taken as
/// absolute eigenvalues re-sorted in descending order and the sign folded
/// into `V`. Non-symmetric square inputs fall back to a general SVD.
/// Deterministic given the input; no randomized sketching.
pub fn svd(m: &DMatrix<f64>) -> Result<SvdFactors> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "svd expects a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    check_finite(m, "svd input")?;
    let n = m.nrows();
    if n == 0 {
        return Err(Error::InvalidInput("svd of an empty matrix".into()));
    }

    let scale = m.amax();
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            asym = asym.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }

    if asym <= 1e-10 * scale.max(1.0) {
        let eig = m.clone().symmetric_eigen();
        // Sort by |eigenvalue| descending; ties keep original order.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            let (ea, eb) = (eig.eigenvalues[a].abs(), eig.eigenvalues[b].abs());
            eb.partial_cmp(&ea).unwrap().then(a.cmp(&b))
        });
        let mut u = DMatrix::zeros(n, n);
        let mut v = DMatrix::zeros(n, n);
        let mut d = DVector::zeros(n);
        for (col, &idx) in order.iter().enumerate() {
            let lam = eig.eigenvalues[idx];
            d[col] = lam.abs();
            let sign = if lam < 0.0 { -1.0 } else { 1.0 };
            for row in 0..n {
                let e = eig.eigenvectors[(row, idx)];
                u[(row, col)] = e;
                v[(row, col)] = sign * e;
            }
        }
        Ok(SvdFactors {
            u,
            singular_values: d,
            v,
        })
    } else {
        let svd = m.clone().svd(true, true);
        let u = svd.u.ok_or_else(|| Error::Internal("svd did not return U".into()))?;
        let v_t = svd.v_t.ok_or_else(|| Error::Internal("svd did not return V^T".into()))?;
        Ok(SvdFactors {
            u,
            singular_values: svd.singular_values,
            v: v_t.transpose(),
        })
    }
}

/// The Pairwise Inner Product matrix `E E^T`.
pub fn pip_matrix(e: &DMatrix<f64>) -> DMatrix<f64> {
    e * e.transpose()
}

/// PIP loss `||E1 E1^T - E2 E2^T||_F` between two embeddings over the same
/// vocabulary. Column counts may differ.
///
/// The n x n PIP matrices are never materialized. The stacked matrix
/// S = [E1 E2] is QR-reduced and the loss is read off the small core
/// `|| R J R^T ||_F` with `J = diag(I, -I)`, which carries the Gram-trick
/// identity `||AA^T - BB^T||^2 = ||A^T A||^2 + ||B^T B||^2 - 2||A^T B||^2`
/// without the catastrophic cancellation the expanded form suffers when the
/// two embeddings are unitarily equivalent.
pub fn pip_loss(e1: &DMatrix<f64>, e2: &DMatrix<f64>) -> Result<f64> {
    if e1.nrows() != e2.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "pip_loss row counts differ: {} vs {}",
            e1.nrows(),
            e2.nrows()
        )));
    }
    check_finite(e1, "pip_loss first embedding")?;
    check_finite(e2, "pip_loss second embedding")?;
    let n = e1.nrows();
    let (d1, d2) = (e1.ncols(), e2.ncols());
    let mut stacked = DMatrix::zeros(n, d1 + d2);
    stacked.view_mut((0, 0), (n, d1)).copy_from(e1);
    stacked.view_mut((0, d1), (n, d2)).copy_from(e2);
    let r = stacked.qr().r();
    // core = R J R^T, J = diag(+1 x d1, -1 x d2)
    let mut rj = r.clone();
    for j in d1..(d1 + d2) {
        for i in 0..rj.nrows() {
            rj[(i, j)] = -rj[(i, j)];
        }
    }
    let core = rj * r.transpose();
    Ok(core.norm())
}

/// PIP loss computed directly from the materialized n x n PIP matrices.
///
/// O(n^2) memory; used as the independent second route in identity tests.
pub fn pip_loss_direct(e1: &DMatrix<f64>, e2: &DMatrix<f64>) -> Result<f64> {
    if e1.nrows() != e2.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "pip_loss row counts differ: {} vs {}",
            e1.nrows(),
            e2.nrows()
        )));
    }
    Ok((pip_matrix(e1) - pip_matrix(e2)).norm())
}

fn check_orthonormal(x: &DMatrix<f64>, what: &str) -> Result<()> {
    check_finite(x, what)?;
    let k = x.ncols();
    let gram = x.transpose() * x;
    for i in 0..k {
        for j in 0..k {
            let target = if i == j { 1.0 } else { 0.0 };
            if (gram[(i, j)] - target).abs() > ORTHONORMALITY_TOL {
                return Err(Error::InvalidInput(format!(
                    "{what} does not have orthonormal columns (deviation {:.2e} at ({i},{j}))",
                    (gram[(i, j)] - target).abs()
                )));
            }
        }
    }
    Ok(())
}

/// An orthonormal basis of the orthogonal complement of the column span of
/// `x0` (n x k), returned as an n x (n-k) matrix.
///
/// Realized through a full Householder QR of `[x0 | I]`; the first k columns
/// of Q reproduce the span of `x0`, the rest are its complement.
pub fn orthonormal_complement(x0: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_orthonormal(x0, "complement input")?;
    let (n, k) = (x0.nrows(), x0.ncols());
    let mut wide = DMatrix::zeros(n, k + n);
    wide.view_mut((0, 0), (n, k)).copy_from(x0);
    wide.view_mut((0, k), (n, n)).copy_from(&DMatrix::identity(n, n));
    let q = wide.qr().q();
    Ok(q.columns(k, n - k).into_owned())
}

/// Principal angles between the column spans of two n x k orthonormal
/// matrices, in radians, ascending (descending cosines).
///
/// The cosines are the singular values of `X0^T Y0`.
pub fn principal_angles(x0: &DMatrix<f64>, y0: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_orthonormal(x0, "principal_angles first factor")?;
    check_orthonormal(y0, "principal_angles second factor")?;
    if x0.nrows() != y0.nrows() || x0.ncols() != y0.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "principal_angles expects equal shapes, got {}x{} vs {}x{}",
            x0.nrows(),
            x0.ncols(),
            y0.nrows(),
            y0.ncols()
        )));
    }
    let cross = x0.transpose() * y0;
    let sv = cross.svd(false, false).singular_values;
    let angles: Vec<f64> = sv.iter().map(|c| c.clamp(-1.0, 1.0).acos()).collect();
    Ok(DVector::from_vec(angles))
}

/// `||X0 X0^T - Y0 Y0^T||_F` for two n x k orthonormal matrices.
///
/// Computed through the stabilized PIP route and cross-checked against the
/// identity `||X0 X0^T - Y0 Y0^T||_F = sqrt(2) ||X0^T Y1||_F`, where the
/// complement factor is never materialized: `||X0^T Y1||_F^2 = k - ||X0^T Y0||_F^2`.
pub fn projector_difference_norm(x0: &DMatrix<f64>, y0: &DMatrix<f64>) -> Result<f64> {
    check_orthonormal(x0, "projector_difference first factor")?;
    check_orthonormal(y0, "projector_difference second factor")?;
    if x0.nrows() != y0.nrows() || x0.ncols() != y0.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "projector_difference_norm expects equal shapes, got {}x{} vs {}x{}",
            x0.nrows(),
            x0.ncols(),
            y0.nrows(),
            y0.ncols()
        )));
    }
    let lhs = pip_loss(x0, y0)?;
    let k = x0.ncols() as f64;
    let cross_sq = (x0.transpose() * y0).norm_squared();
    let rhs = std::f64::consts::SQRT_2 * (k - cross_sq).max(0.0).sqrt();
    let tol = 1e-8 * lhs.max(1.0);
    if (lhs - rhs).abs() > tol {
        return Err(Error::Internal(format!(
            "projector-difference identity violated: direct {lhs:.12e} vs sqrt(2)||X0^T Y1|| {rhs:.12e}"
        )));
    }
    Ok(lhs)
}

fn validate_spectrum(spectrum: &[f64]) -> Result<()> {
    if spectrum.is_empty() {
        return Err(Error::InvalidInput("empty spectrum".into()));
    }
    for (i, w) in spectrum.windows(2).enumerate() {
        if !(w[0] >= w[1]) {
            return Err(Error::InvalidInput(format!(
                "spectrum is not non-increasing at index {i}"
            )));
        }
    }
    if spectrum[spectrum.len() - 1] < 0.0 {
        return Err(Error::InvalidInput("spectrum contains negative values".into()));
    }
    if spectrum.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("spectrum contains non-finite values".into()));
    }
    Ok(())
}

/// First-order Sylvester-operator estimate of the expected invariant-subspace
/// perturbation: `sigma * sqrt( sum_{r<=k<s} (lambda_r - lambda_s)^{-2} )`.
///
/// Sharper than [`sin_theta_bound`] because every singular-value gap enters,
/// not only the smallest one.
pub fn sylvester_direction_bound(spectrum: &[f64], k: usize, sigma: f64) -> Result<f64> {
    validate_spectrum(spectrum)?;
    let n = spectrum.len();
    if k == 0 || k >= n {
        return Err(Error::InvalidInput(format!(
            "split k must satisfy 1 <= k < n, got k={k}, n={n}"
        )));
    }
    if sigma < 0.0 {
        return Err(Error::InvalidInput("sigma must be non-negative".into()));
    }
    if spectrum[k - 1] - spectrum[k] <= 0.0 {
        return Err(Error::DegenerateGap { k });
    }
    let mut sum = 0.0;
    for r in 0..k {
        for s in k..n {
            let gap = spectrum[r] - spectrum[s];
            sum += 1.0 / (gap * gap);
        }
    }
    Ok(sigma * sum.sqrt())
}

/// The sine-Theta value under the same iid noise model:
/// `sigma * sqrt(k (n-k)) / delta_k` with `delta_k = lambda_k - lambda_{k+1}`.
pub fn sin_theta_bound(spectrum: &[f64], k: usize, sigma: f64) -> Result<f64> {
    validate_spectrum(spectrum)?;
    let n = spectrum.len();
    if k == 0 || k >= n {
        return Err(Error::InvalidInput(format!(
            "split k must satisfy 1 <= k < n, got k={k}, n={n}"
        )));
    }
    if sigma < 0.0 {
        return Err(Error::InvalidInput("sigma must be non-negative".into()));
    }
    let delta = spectrum[k - 1] - spectrum[k];
    if delta <= 0.0 {
        return Err(Error::DegenerateGap { k });
    }
    Ok(sigma * ((k * (n - k)) as f64).sqrt() / delta)
}

/// Align `E` onto `F` with the unitary `T = V Y^T` built from the SVDs
/// `E = U D V^T` and `F = X L Y^T`, returning `(T, ||E T - F||_F)`.
///
/// A near-zero PIP loss between `E` and `F` implies the residual is near
/// zero, i.e. the embeddings agree up to a unitary map. Left singular
/// vectors of `F` are sign-aligned to those of `E` column by column, which
/// resolves the per-column sign ambiguity of the two independent SVDs.
pub fn procrustes_align(e: &DMatrix<f64>, f: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    if e.nrows() != f.nrows() || e.ncols() != f.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "procrustes_align expects equal shapes, got {}x{} vs {}x{}",
            e.nrows(),
            e.ncols(),
            f.nrows(),
            f.ncols()
        )));
    }
    check_finite(e, "procrustes first embedding")?;
    check_finite(f, "procrustes second embedding")?;
    let k = e.ncols();

    let se = e.clone().svd(true, true);
    let u = se.u.ok_or_else(|| Error::Internal("svd did not return U".into()))?;
    let v = se
        .v_t
        .ok_or_else(|| Error::Internal("svd did not return V^T".into()))?
        .transpose();
    let sf = f.clone().svd(true, true);
    let mut x = sf.u.ok_or_else(|| Error::Internal("svd did not return U".into()))?;
    let mut y = sf
        .v_t
        .ok_or_else(|| Error::Internal("svd did not return V^T".into()))?
        .transpose();

    // Sign-align each left singular vector of F to the matching one of E,
    // flipping the paired right vector so that X L Y^T still reconstructs F.
    let pairs = x.ncols().min(u.ncols());
    for j in 0..pairs {
        if x.column(j).dot(&u.column(j)) < 0.0 {
            for i in 0..x.nrows() {
                x[(i, j)] = -x[(i, j)];
            }
            for i in 0..y.nrows() {
                y[(i, j)] = -y[(i, j)];
            }
        }
    }

    let t = v * y.transpose();
    debug_assert_eq!(t.nrows(), k);
    let residual = (e * &t - f).norm();
    Ok((t, residual))
}
