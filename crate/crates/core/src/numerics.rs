//! Dense linear-algebra helpers shared by every other module.
//!
//! Matrices and vectors are plain `nalgebra` dynamic types. All instances in
//! this crate are tiny (at most a few hundred rows), so every routine favours
//! robustness (SVD, Schur) over speed.

use nalgebra::{Complex, DMatrix, DVector, Schur, SymmetricEigen};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Thin SVD `A = U diag(s) Vᵀ` with `s` descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vector,
    pub v: Matrix,
}

fn to_faer(a: &Matrix) -> faer::Mat<f64> {
    faer::Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

/// Thin SVD through `faer`; nalgebra's bidiagonal SVD with singular vectors
/// can return wrong factors on rank-deficient input.
pub fn svd(a: &Matrix) -> Result<Svd> {
    let (r, c) = a.shape();
    let n = r.min(c);
    if n == 0 {
        return Ok(Svd {
            u: Matrix::zeros(r, 0),
            s: Vector::zeros(0),
            v: Matrix::zeros(c, 0),
        });
    }
    require_finite(a, "SVD input")?;
    let f = to_faer(a)
        .thin_svd()
        .map_err(|e| Error::NoConvergence(format!("SVD: {e:?}")))?;
    let (u, v, sd) = (f.U(), f.V(), f.S().column_vector());
    Ok(Svd {
        u: Matrix::from_fn(r, n, |i, j| u[(i, j)]),
        s: Vector::from_fn(n, |i, _| sd[i]),
        v: Matrix::from_fn(c, n, |i, j| v[(i, j)]),
    })
}

/// Singular values, descending. Non-finite input yields NaNs.
pub fn singular_values(a: &Matrix) -> Vector {
    if a.is_empty() {
        return Vector::zeros(0);
    }
    match to_faer(a).singular_values() {
        Ok(sv) => Vector::from_vec(sv),
        Err(_) => Vector::from_element(a.nrows().min(a.ncols()), f64::NAN),
    }
}

/// Relative singular-value cutoff below which a square system is singular.
pub const DEFAULT_SINGULAR_TOL: f64 = 1e-12;

/// Relative tolerance used to decide the multiplicity of the unit eigenvalue
/// of a stochastic matrix.
pub const DEFAULT_MULTIPLICITY_TOL: f64 = 1e-10;

pub fn is_finite(a: &Matrix) -> bool {
    a.iter().all(|x| x.is_finite())
}

fn require_finite(a: &Matrix, what: &str) -> Result<()> {
    if is_finite(a) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} has non-finite entries")))
    }
}

fn require_square(a: &Matrix, what: &str) -> Result<()> {
    if a.nrows() == a.ncols() {
        Ok(())
    } else {
        Err(Error::shape(format!(
            "{what} must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )))
    }
}

/// Default pseudoinverse cutoff: machine epsilon times the larger dimension.
pub fn default_rcond(a: &Matrix) -> f64 {
    f64::EPSILON * a.nrows().max(a.ncols()) as f64
}

/// Moore–Penrose pseudoinverse. Singular values below `rcond * sigma_max`
/// are treated as zero.
pub fn pinv(a: &Matrix, rcond: f64) -> Result<Matrix> {
    if a.is_empty() {
        return Err(Error::invalid("pseudoinverse of an empty matrix"));
    }
    if rcond.is_nan() || rcond < 0.0 {
        return Err(Error::invalid(format!("rcond must be >= 0, got {rcond}")));
    }
    require_finite(a, "pinv input")?;

    let f = svd(a)?;
    let sigma_max = f.s.max();
    let cutoff = rcond * sigma_max;
    let mut out = Matrix::zeros(a.ncols(), a.nrows());
    for (i, &s) in f.s.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            out += (f.v.column(i) * f.u.column(i).transpose()) / s;
        }
    }
    Ok(out)
}

/// Pseudoinverse with the default cutoff.
pub fn pinv_default(a: &Matrix) -> Result<Matrix> {
    pinv(a, default_rcond(a))
}

/// All (complex) eigenvalues, from `faer`'s eigendecomposition with
/// nalgebra's real Schur form as a fallback.
pub fn eigenvalues(a: &Matrix) -> Result<Vec<Complex<f64>>> {
    require_square(a, "eigenvalue input")?;
    require_finite(a, "eigenvalue input")?;
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    if let Ok(ev) = to_faer(a).eigenvalues() {
        if ev.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Ok(ev.iter().map(|z| Complex::new(z.re, z.im)).collect());
        }
    }
    let schur = Schur::try_new(a.clone(), f64::EPSILON, 100_000)
        .ok_or_else(|| Error::NoConvergence("Schur decomposition".into()))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(a: &Matrix) -> Result<f64> {
    Ok(eigenvalues(a)?
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Power-iteration estimate of the spectral radius, used as a cross-check
/// when the dominant eigenvalue is real and simple. Returns `None` when the
/// iteration fails to settle.
pub fn power_iteration_radius(a: &Matrix, max_iter: usize, tol: f64) -> Option<f64> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return None;
    }
    let mut x = Vector::from_fn(n, |i, _| 1.0 + 0.1 * i as f64);
    x /= x.norm();
    let mut prev = f64::NAN;
    for _ in 0..max_iter {
        let y = a * &x;
        let norm = y.norm();
        if norm == 0.0 {
            return Some(0.0);
        }
        x = y / norm;
        if (norm - prev).abs() <= tol * norm.max(1.0) {
            return Some(norm);
        }
        prev = norm;
    }
    None
}

/// Maximum absolute row sum.
pub fn inf_norm(a: &Matrix) -> f64 {
    a.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn vec_inf_norm(v: &Vector) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Largest singular value.
pub fn spectral_norm(a: &Matrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    singular_values(a).max()
}

/// Smallest eigenvalue of `M Mᵀ diag(d)`, computed through the symmetric
/// similar matrix `D^{1/2} M Mᵀ D^{1/2}`.
pub fn min_eig_mmtd(m: &Matrix, d: &Vector) -> Result<f64> {
    let k = m.nrows();
    if d.len() != k {
        return Err(Error::shape(format!(
            "diagonal has length {}, M has {} rows",
            d.len(),
            k
        )));
    }
    if d.iter().any(|&x| x.is_nan() || x <= 0.0 || !x.is_finite()) {
        return Err(Error::invalid("diagonal weights must be positive"));
    }
    require_finite(m, "M")?;
    let eig = symmetric_mmtd(m, d).symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    if min <= 1e-12 * max.max(f64::MIN_POSITIVE) {
        return Err(Error::Degenerate(format!(
            "M is rank deficient (smallest eigenvalue {min:e})"
        )));
    }
    Ok(min)
}

/// Largest eigenvalue of `M Mᵀ diag(d)` (real, nonnegative).
pub fn max_eig_mmtd(m: &Matrix, d: &Vector) -> Result<f64> {
    if d.len() != m.nrows() {
        return Err(Error::shape("diagonal length does not match M"));
    }
    Ok(symmetric_mmtd(m, d).symmetric_eigenvalues().max())
}

fn symmetric_mmtd(m: &Matrix, d: &Vector) -> Matrix {
    let sqrt_d = d.map(f64::sqrt);
    let scaled = Matrix::from_fn(m.nrows(), m.ncols(), |i, j| sqrt_d[i] * m[(i, j)]);
    let s = &scaled * scaled.transpose();
    // symmetrize against rounding
    (&s + s.transpose()) * 0.5
}

/// Solve `A x = b`; fails with [`Error::Singular`] when the smallest singular
/// value of `A` falls below `DEFAULT_SINGULAR_TOL * sigma_max`.
pub fn linear_solve(a: &Matrix, b: &Vector) -> Result<Vector> {
    linear_solve_tol(a, b, DEFAULT_SINGULAR_TOL)
}

pub fn linear_solve_tol(a: &Matrix, b: &Vector, tol: f64) -> Result<Vector> {
    require_square(a, "system matrix")?;
    if b.len() != a.nrows() {
        return Err(Error::shape(format!(
            "rhs length {} does not match {}x{} system",
            b.len(),
            a.nrows(),
            a.ncols()
        )));
    }
    require_finite(a, "system matrix")?;
    let sv = singular_values(a);
    let smax = sv.max();
    let smin = sv.min();
    if smax == 0.0 || smin <= tol * smax {
        return Err(Error::Singular(format!(
            "smallest singular value {smin:e} vs largest {smax:e}"
        )));
    }
    let x = a
        .clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Singular("LU pivot vanished".into()))?;
    Ok(x)
}

/// Stationary distribution of a row-stochastic matrix.
///
/// The unit eigenvector is taken from the null space of `Pᵀ - I`; a null
/// space of dimension above one is a multiplicity error. Power iteration
/// (Cesàro-averaged, so periodic chains settle) is the fallback when the
/// direct solve does not yield a valid distribution.
pub fn stationary_distribution(p: &Matrix) -> Result<Vector> {
    require_square(p, "transition matrix")?;
    require_finite(p, "transition matrix")?;
    let n = p.nrows();
    if n == 0 {
        return Err(Error::invalid("empty transition matrix"));
    }
    for (i, row) in p.row_iter().enumerate() {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-9 || row.iter().any(|&x| x < -1e-12) {
            return Err(Error::invalid(format!("row {i} is not a distribution")));
        }
    }

    let a = p.transpose() - Matrix::identity(n, n);
    let sv = singular_values(&a);
    let scale = sv.max().max(1.0);
    let nullity = sv
        .iter()
        .filter(|&&s| s <= DEFAULT_MULTIPLICITY_TOL * scale)
        .count();
    if nullity > 1 {
        return Err(Error::Multiplicity(format!(
            "unit eigenvalue has multiplicity {nullity}"
        )));
    }

    // Augmented least squares: [Pᵀ - I; 1ᵀ] d = [0; 1].
    let mut aug = Matrix::zeros(n + 1, n);
    aug.view_mut((0, 0), (n, n)).copy_from(&a);
    aug.row_mut(n).fill(1.0);
    let mut rhs = Vector::zeros(n + 1);
    rhs[n] = 1.0;
    let direct = pinv(&aug, 1e-14)
        .ok()
        .and_then(|p| clean_distribution(p * rhs, 1e-9));

    let d = match direct {
        Some(d) => d,
        None => power_stationary(p)?,
    };
    Ok(d)
}

fn clean_distribution(mut d: Vector, neg_tol: f64) -> Option<Vector> {
    if d.iter().any(|x| !x.is_finite() || *x < -neg_tol) {
        return None;
    }
    d.iter_mut().for_each(|x| *x = x.max(0.0));
    let s = d.sum();
    if s <= 0.0 {
        return None;
    }
    d /= s;
    Some(d)
}

fn power_stationary(p: &Matrix) -> Result<Vector> {
    let n = p.nrows();
    let pt = p.transpose();
    let mut x = Vector::from_element(n, 1.0 / n as f64);
    let mut avg = x.clone();
    for it in 1..=200_000usize {
        x = &pt * &x;
        avg += (&x - &avg) / (it as f64 + 1.0);
        if it % 100 == 0 {
            let resid = vec_inf_norm(&(&pt * &avg - &avg));
            if resid <= 1e-12 {
                return clean_distribution(avg, 1e-9).ok_or_else(|| {
                    Error::NoConvergence("power iteration left the simplex".into())
                });
            }
        }
    }
    Err(Error::NoConvergence(
        "power iteration for the stationary distribution".into(),
    ))
}

/// `diag(v)` as a dense matrix.
pub fn diag(v: &Vector) -> Matrix {
    Matrix::from_diagonal(v)
}

/// Orthonormal basis (columns) of the column space of `a`.
pub fn range_basis(a: &Matrix, rel_tol: f64) -> Matrix {
    let (r, c) = a.shape();
    if r == 0 || c == 0 {
        return Matrix::zeros(r, 0);
    }
    let Ok(f) = svd(a) else {
        return Matrix::zeros(r, 0);
    };
    let smax = f.s.max();
    let cols: Vec<usize> = f
        .s
        .iter()
        .enumerate()
        .filter(|(_, &s)| smax > 0.0 && s > rel_tol * smax)
        .map(|(i, _)| i)
        .collect();
    Matrix::from_fn(r, cols.len(), |i, j| f.u[(i, cols[j])])
}

/// Numerical rank with a relative singular-value cutoff.
pub fn rank(a: &Matrix, rel_tol: f64) -> usize {
    if a.is_empty() {
        return 0;
    }
    let sv = singular_values(a);
    let smax = sv.max();
    sv.iter().filter(|&&s| smax > 0.0 && s > rel_tol * smax).count()
}

/// Symmetric eigenvalues, ascending.
pub fn symmetric_eigenvalues(a: &Matrix) -> Vec<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}
