//! Structural matrix operators and matrix-derivative rules.
//!
//! All derivatives use numerator layout: the Jacobian of an `n`-vector with
//! respect to an `m`-vector is `n x m`, and the derivative of a matrix with
//! respect to a matrix is the derivative of `vec(Y)` with respect to `vec(X)`.
//! `vec` stacks columns; `vech` stacks the lower triangle column by column.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative tolerance used when deciding whether an input is symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Dimension bookkeeping for `vec`/`vech` of an `n x n` matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SymIndex {
    n: usize,
}

impl SymIndex {
    pub fn new(n: usize) -> Self {
        Self { n }
    }

    /// Recovers the side length from a `vech` length, if it is triangular.
    pub fn from_vech_len(len: usize) -> Option<Self> {
        // n(n+1)/2 = len
        let n = ((((8 * len + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
        (n * (n + 1) / 2 == len).then_some(Self { n })
    }

    pub fn side(&self) -> usize {
        self.n
    }

    pub fn vech_len(&self) -> usize {
        self.n * (self.n + 1) / 2
    }

    pub fn vec_len(&self) -> usize {
        self.n * self.n
    }

    /// Position of element `(row, col)` in `vech`; requires `row >= col`.
    pub fn vech_index(&self, row: usize, col: usize) -> usize {
        debug_assert!(row >= col && row < self.n);
        // columns before `col` contribute n, n-1, ..., n-col+1 entries
        col * self.n - col * col.saturating_sub(1) / 2 + (row - col)
    }

    /// Position of element `(row, col)` in `vec`.
    pub fn vec_index(&self, row: usize, col: usize) -> usize {
        col * self.n + row
    }

    /// `(row, col)` pairs in `vech` order.
    pub fn lower_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |c| (c..self.n).map(move |r| (r, c)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructuralKind {
    Elimination,
    Duplication,
    Commutation,
    RemoveFirst,
}

/// A dense 0/1 matrix with a defining structural identity.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralMatrix {
    pub kind: StructuralKind,
    pub n: usize,
    pub data: DMatrix<f64>,
}

impl StructuralMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }
}

/// Which shape `ivech` should rebuild.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VechShape {
    Symmetric,
    LowerTriangular,
}

pub fn vec(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec`] for a matrix with `rows` rows.
pub fn unvec(v: &DVector<f64>, rows: usize) -> Result<DMatrix<f64>> {
    if rows == 0 || !v.len().is_multiple_of(rows) {
        return Err(Error::ShapeMismatch(format!(
            "cannot reshape length {} into {} rows",
            v.len(),
            rows
        )));
    }
    Ok(DMatrix::from_column_slice(rows, v.len() / rows, v.as_slice()))
}

/// Largest absolute asymmetry, and the largest absolute entry.
fn asymmetry(m: &DMatrix<f64>) -> (f64, f64) {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    let mut scale = 0.0_f64;
    for c in 0..n {
        for r in 0..n {
            worst = worst.max((m[(r, c)] - m[(c, r)]).abs());
            scale = scale.max(m[(r, c)].abs());
        }
    }
    (worst, scale)
}

/// Checks symmetry within [`SYMMETRY_TOL`] relative and returns `(M + M')/2`.
pub fn checked_symmetric(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::ShapeMismatch(format!(
            "expected square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let (worst, scale) = asymmetry(m);
    if worst > SYMMETRY_TOL * scale.max(f64::MIN_POSITIVE) && worst > 0.0 {
        return Err(Error::AsymmetricInput(worst));
    }
    Ok(symmetrize(m))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Half-vectorization of a symmetric matrix.
pub fn vech(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    let s = checked_symmetric(m)?;
    Ok(vech_lower(&s))
}

/// Lower triangle of a square matrix in `vech` order, without a symmetry check.
pub fn vech_lower(m: &DMatrix<f64>) -> DVector<f64> {
    let idx = SymIndex::new(m.nrows());
    DVector::from_iterator(idx.vech_len(), idx.lower_pairs().map(|(r, c)| m[(r, c)]))
}

pub fn ivech(v: &DVector<f64>, shape: VechShape) -> Result<DMatrix<f64>> {
    let idx = SymIndex::from_vech_len(v.len()).ok_or(Error::BadLength(v.len()))?;
    let n = idx.side();
    let mut m = DMatrix::zeros(n, n);
    for (k, (r, c)) in idx.lower_pairs().enumerate() {
        m[(r, c)] = v[k];
        if shape == VechShape::Symmetric {
            m[(c, r)] = v[k];
        }
    }
    Ok(m)
}

pub fn elimination_matrix(n: usize) -> StructuralMatrix {
    let idx = SymIndex::new(n);
    let mut data = DMatrix::zeros(idx.vech_len(), idx.vec_len());
    for (k, (r, c)) in idx.lower_pairs().enumerate() {
        data[(k, idx.vec_index(r, c))] = 1.0;
    }
    StructuralMatrix {
        kind: StructuralKind::Elimination,
        n,
        data,
    }
}

pub fn duplication_matrix(n: usize) -> StructuralMatrix {
    let idx = SymIndex::new(n);
    let mut data = DMatrix::zeros(idx.vec_len(), idx.vech_len());
    for (k, (r, c)) in idx.lower_pairs().enumerate() {
        data[(idx.vec_index(r, c), k)] = 1.0;
        data[(idx.vec_index(c, r), k)] = 1.0;
    }
    StructuralMatrix {
        kind: StructuralKind::Duplication,
        n,
        data,
    }
}

/// `K` with `K vec(A) = vec(A')` for every `n x n` matrix `A`.
pub fn commutation_matrix(n: usize) -> StructuralMatrix {
    let data = commutation_rect(n, n);
    StructuralMatrix {
        kind: StructuralKind::Commutation,
        n,
        data,
    }
}

/// Commutation matrix taking `vec(A)` to `vec(A')` for an `m x n` matrix `A`.
pub fn commutation_rect(m: usize, n: usize) -> DMatrix<f64> {
    let mut k = DMatrix::zeros(m * n, m * n);
    for r in 0..m {
        for c in 0..n {
            // A[r,c] sits at c*m + r in vec(A) and at r*n + c in vec(A')
            k[(r * n + c, c * m + r)] = 1.0;
        }
    }
    k
}

/// All rows but the first of the `n x n` identity.
pub fn remove_first(n: usize) -> StructuralMatrix {
    let mut data = DMatrix::zeros(n.saturating_sub(1), n);
    for i in 1..n {
        data[(i - 1, i)] = 1.0;
    }
    StructuralMatrix {
        kind: StructuralKind::RemoveFirst,
        n,
        data,
    }
}

/// A vector as a `1 x n` dynamic matrix.
pub fn as_row(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, v.len(), v.as_slice())
}

/// A vector as an `n x 1` dynamic matrix.
pub fn as_col(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// General inverse; fails when the matrix is numerically singular.
pub fn inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::ShapeMismatch("inverse of non-square matrix".into()));
    }
    let inv = a.clone().try_inverse().ok_or(Error::SingularMatrix)?;
    let cond = a.abs().row_sum().max() * inv.abs().row_sum().max();
    if !cond.is_finite() || cond > 1e15 {
        return Err(Error::SingularMatrix);
    }
    Ok(inv)
}

/// Inverse of a symmetric matrix, returned exactly symmetric.
pub fn sym_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        let inv = ch.inverse();
        if inv.iter().all(|x| x.is_finite()) {
            return Ok(symmetrize(&inv));
        }
    }
    inverse(a).map(|m| symmetrize(&m))
}

/// `d vec(A^-1) / d vec(A) = -(A^-T kron A^-1)`.
pub fn d_inv(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let inv = inverse(a)?;
    Ok(-kron(&inv.transpose(), &inv))
}

/// `d vech(A^-1) / d vech(A) = -L (A^-1 kron A^-1) D` for symmetric `A`.
pub fn d_inv_vech(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let a = checked_symmetric(a)?;
    let inv = sym_inverse(&a)?;
    Ok(-eliminate_duplicate(&kron(&inv, &inv)))
}

/// `L X D` for an `n^2 x n^2` operator `X`.
pub fn eliminate_duplicate(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = (x.nrows() as f64).sqrt().round() as usize;
    let l = elimination_matrix(n).data;
    let d = duplication_matrix(n).data;
    l * x * d
}

/// `d vech(Y) / d vech(Y Y')` for a lower-triangular Cholesky factor `Y`,
/// the inverse of `L (I + K) (Y kron I) L'`.
pub fn d_chol_vech(y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = y.nrows();
    if !y.is_square() {
        return Err(Error::ShapeMismatch("Cholesky factor must be square".into()));
    }
    for c in 0..n {
        if y[(c, c)] <= 0.0 {
            return Err(Error::NotPositiveDefinite);
        }
        for r in 0..c {
            if y[(r, c)] != 0.0 {
                return Err(Error::ShapeMismatch("Cholesky factor must be lower triangular".into()));
            }
        }
    }
    inverse(&d_gram_vech(y))
}

/// `d vech(Y Y') / d vech(Y) = L (I + K) (Y kron I) L'` for lower-triangular `Y`.
pub fn d_gram_vech(y: &DMatrix<f64>) -> DMatrix<f64> {
    let n = y.nrows();
    let l = elimination_matrix(n).data;
    let ik = DMatrix::identity(n * n, n * n) + commutation_matrix(n).data;
    &l * ik * kron(y, &DMatrix::identity(n, n)) * l.transpose()
}

/// Operator mapping `d vec(X)` to `d vec((J X J')^-1)`:
/// `-((J X J')^-1 kron (J X J')^-1)(J kron J)`.
pub fn d_qform_inv(j: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if j.ncols() != x.nrows() || !x.is_square() {
        return Err(Error::ShapeMismatch(format!(
            "J is {}x{}, X is {}x{}",
            j.nrows(),
            j.ncols(),
            x.nrows(),
            x.ncols()
        )));
    }
    let y = j * x * j.transpose();
    let yi = inverse(&y)?;
    Ok(-kron(&yi, &yi) * kron(j, j))
}

fn check_rows(d: &DMatrix<f64>, rows: usize, what: &str) -> Result<()> {
    if d.nrows() != rows {
        return Err(Error::ShapeMismatch(format!(
            "{what} has {} rows, expected {rows}",
            d.nrows()
        )));
    }
    Ok(())
}

/// Jacobian of `vec(X Y)`: `(I kron X) dY + (Y' kron I) dX`.
pub fn d_product(x: &DMatrix<f64>, y: &DMatrix<f64>, dx: &DMatrix<f64>, dy: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (m, k) = x.shape();
    let (k2, n) = y.shape();
    if k != k2 {
        return Err(Error::ShapeMismatch(format!("X is {m}x{k}, Y is {k2}x{n}")));
    }
    check_rows(dx, m * k, "dX")?;
    check_rows(dy, k * n, "dY")?;
    if dx.ncols() != dy.ncols() {
        return Err(Error::ShapeMismatch("dX and dY differ in width".into()));
    }
    Ok(kron(&DMatrix::identity(n, n), x) * dy + kron(&y.transpose(), &DMatrix::identity(m, m)) * dx)
}

/// Jacobian of `vec(X X')`: `(I + K)(X kron I) dX`.
pub fn d_outer_gram(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (m, k) = x.shape();
    check_rows(dx, m * k, "dX")?;
    let ik = DMatrix::identity(m * m, m * m) + commutation_matrix(m).data;
    Ok(ik * kron(x, &DMatrix::identity(m, m)) * dx)
}

/// Gradient row of `tr(X Y)`: `vec(X')' dY + vec(Y')' dX`.
pub fn d_trace_prod(x: &DMatrix<f64>, y: &DMatrix<f64>, dx: &DMatrix<f64>, dy: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (m, k) = x.shape();
    if y.shape() != (k, m) {
        return Err(Error::ShapeMismatch("tr(XY) needs X m x k and Y k x m".into()));
    }
    check_rows(dx, m * k, "dX")?;
    check_rows(dy, k * m, "dY")?;
    Ok(as_row(&vec(&x.transpose())) * dy + as_row(&vec(&y.transpose())) * dx)
}

/// Gradient row of `det(X)`: `det(X) vec(X^-T)' dX`.
pub fn d_det(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    check_rows(dx, n * n, "dX")?;
    let sv = x.clone().singular_values();
    let smax = sv.max();
    if sv.min() <= 1e-12 * smax.max(f64::MIN_POSITIVE) {
        return Err(Error::SingularMatrix);
    }
    let inv = inverse(x)?;
    Ok(as_row(&vec(&inv.transpose())) * dx * x.determinant())
}

/// Gradient row of the `j`-th largest eigenvalue (0-based) of symmetric `X`:
/// `(v_j' kron v_j') dX`.
pub fn d_eig(x: &DMatrix<f64>, j: usize, dx: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    check_rows(dx, n * n, "dX")?;
    let (vals, vecs) = eigen_sym(x)?;
    if j >= n {
        return Err(Error::ShapeMismatch(format!("eigen index {j} out of range {n}")));
    }
    let spectral = vals.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let gap = (0..n)
        .filter(|&i| i != j)
        .map(|i| (vals[i] - vals[j]).abs())
        .fold(f64::INFINITY, f64::min);
    if n > 1 && gap < 1e-10 * spectral {
        return Err(Error::RepeatedEigenvalue { index: j, gap });
    }
    let v = vecs.column(j).into_owned();
    Ok(as_row(&v.kronecker(&v)) * dx)
}

/// Eigen-decomposition of a symmetric matrix: values in descending order,
/// each eigenvector sign-fixed so its largest-magnitude entry is positive.
pub fn eigen_sym(x: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let s = checked_symmetric(x)?;
    let n = s.nrows();
    let eig = SymmetricEigen::new(s);
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps the routine's order among ties
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(i).into_owned();
        let mut pivot = 0;
        for r in 1..n {
            if col[r].abs() > col[pivot].abs() {
                pivot = r;
            }
        }
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(k, &col);
    }
    Ok((values, vectors))
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn chol(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let s = checked_symmetric(x)?;
    let ch = s.cholesky().ok_or(Error::NotPositiveDefinite)?;
    Ok(ch.l())
}

/// Pseudoinverse of the best rank-`r` approximation of a symmetric PSD matrix.
pub fn pinv_rank(x: &DMatrix<f64>, r: usize) -> Result<DMatrix<f64>> {
    let (vals, vecs) = eigen_sym(x)?;
    let n = vals.len();
    if r == 0 || r > n {
        return Err(Error::RankDeficient { requested: r });
    }
    if vals[r - 1] < 1e-12 * vals[0] || vals[r - 1] <= 0.0 {
        return Err(Error::RankDeficient { requested: r });
    }
    let mut out = DMatrix::zeros(n, n);
    for k in 0..r {
        let v = vecs.column(k);
        out += (v * v.transpose()) / vals[k];
    }
    Ok(out)
}

/// Symmetric PSD square root factor `S` with `S S' = X`, negative
/// eigenvalues clipped to zero.
pub fn psd_sqrt(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (vals, vecs) = eigen_sym(x)?;
    let d = DMatrix::from_diagonal(&vals.map(|v| v.max(0.0).sqrt()));
    Ok(&vecs * d * vecs.transpose())
}

/// Central finite-difference Jacobian of `f` at `x`, with step
/// `rel_step * max(1, |x|_inf)`.
pub fn central_difference<F>(f: F, x: &DVector<f64>, rel_step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let h = rel_step * x.amax().max(1.0);
    let f0 = f(x)?;
    let mut jac = DMatrix::zeros(f0.len(), x.len());
    let mut xp = x.clone();
    for k in 0..x.len() {
        xp[k] = x[k] + h;
        let fp = f(&xp)?;
        xp[k] = x[k] - h;
        let fm = f(&xp)?;
        xp[k] = x[k];
        jac.set_column(k, &((fp - fm) / (2.0 * h)));
    }
    Ok(jac)
}

/// Default finite-difference step.
pub const FD_STEP: f64 = 1e-5;
