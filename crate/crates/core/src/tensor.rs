//! Dense complex linear algebra on multipartite Hilbert spaces.
//!
//! Choi convention used everywhere in the crate: the Choi vector of
//! `U: H_in -> H_out` is `|U>> = Σ_i |i>_in ⊗ (U|i>)_out`, input factor first,
//! and the Choi operator of a map `N` is `Σ_ij |i><j| ⊗ N(|i><j|)`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Default absolute tolerance for equality checks.
pub const DEFAULT_TOL: f64 = 1e-10;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

#[inline]
pub fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn identity(d: usize) -> CMatrix {
    CMatrix::identity(d, d)
}

pub fn pauli_x() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
}

pub fn pauli_y() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ZERO, -I, I, ZERO])
}

pub fn pauli_z() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE])
}

pub fn hadamard() -> CMatrix {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    CMatrix::from_row_slice(2, 2, &[c64(h, 0.0), c64(h, 0.0), c64(h, 0.0), c64(-h, 0.0)])
}

/// The four Paulis `I, X, Y, Z` indexed 0..4.
pub fn paulis() -> [CMatrix; 4] {
    [identity(2), pauli_x(), pauli_y(), pauli_z()]
}

pub fn from_real(m: &DMatrix<f64>) -> CMatrix {
    m.map(|x| c64(x, 0.0))
}

pub fn diag_real(values: &[f64]) -> CMatrix {
    let mut m = CMatrix::zeros(values.len(), values.len());
    for (i, v) in values.iter().enumerate() {
        m[(i, i)] = c64(*v, 0.0);
    }
    m
}

pub fn basis_vector(d: usize, i: usize) -> CVector {
    let mut v = CVector::zeros(d);
    v[i] = ONE;
    v
}

pub fn projector(v: &CVector) -> CMatrix {
    v * v.adjoint()
}

/// Kronecker product; entry `(i1*rb + i2, j1*cb + j2)` is `a[(i1,j1)] * b[(i2,j2)]`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

pub fn kron_all<'a>(factors: impl IntoIterator<Item = &'a CMatrix>) -> CMatrix {
    factors
        .into_iter()
        .fold(CMatrix::identity(1, 1), |acc, f| acc.kronecker(f))
}

pub fn kron_vec(a: &CVector, b: &CVector) -> CVector {
    a.kronecker(b)
}

pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    if a.shape() != b.shape() {
        return f64::INFINITY;
    }
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn approx_eq(a: &CMatrix, b: &CMatrix, tol: f64) -> bool {
    max_abs_diff(a, b) <= tol
}

pub fn frobenius(a: &CMatrix) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

pub fn trace(a: &CMatrix) -> C64 {
    a.diagonal().iter().sum()
}

pub fn hermiticity_error(a: &CMatrix) -> f64 {
    if !a.is_square() {
        return f64::INFINITY;
    }
    max_abs_diff(a, &a.adjoint())
}

pub fn is_hermitian(a: &CMatrix, tol: f64) -> bool {
    hermiticity_error(a) <= tol
}

pub fn unitarity_error(a: &CMatrix) -> f64 {
    if !a.is_square() {
        return f64::INFINITY;
    }
    max_abs_diff(&(a.adjoint() * a), &identity(a.nrows()))
}

pub fn is_unitary(a: &CMatrix, tol: f64) -> bool {
    unitarity_error(a) <= tol
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn hermitian_eigen(a: &CMatrix) -> (Vec<f64>, CMatrix) {
    let h = (a + a.adjoint()) * c64(0.5, 0.0);
    let eig = h.symmetric_eigen();
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vectors.set_column(k, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

pub fn min_eigenvalue(a: &CMatrix) -> f64 {
    hermitian_eigen(a).0.first().copied().unwrap_or(0.0)
}

/// PSD check; the matrix must also be Hermitian within `tol`.
pub fn is_psd(a: &CMatrix, tol: f64) -> bool {
    is_hermitian(a, tol) && min_eigenvalue(a) >= -tol
}

/// Ordered subsystem dimensions with unique labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    dims: Vec<usize>,
    labels: Vec<String>,
}

impl Layout {
    pub fn new<S: Into<String>>(dims: Vec<usize>, labels: Vec<S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if dims.len() != labels.len() {
            return Err(Error::Layout(format!(
                "{} dims but {} labels",
                dims.len(),
                labels.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::Layout("subsystem dimensions must be positive".into()));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::Layout(format!("duplicate label `{l}`")));
            }
        }
        Ok(Self { dims, labels })
    }

    /// All subsystems of dimension `d`.
    pub fn uniform<S: Into<String>>(d: usize, labels: Vec<S>) -> Result<Self> {
        let n = labels.len();
        Self::new(vec![d; n], labels)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn position(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn contains(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l == label)
    }

    pub fn dim_of(&self, label: &str) -> Result<usize> {
        Ok(self.dims[self.position(label)?])
    }

    fn positions(&self, labels: &[&str]) -> Result<Vec<usize>> {
        labels.iter().map(|l| self.position(l)).collect()
    }

    fn select(&self, positions: &[usize]) -> Layout {
        Layout {
            dims: positions.iter().map(|&p| self.dims[p]).collect(),
            labels: positions.iter().map(|&p| self.labels[p].clone()).collect(),
        }
    }
}

/// Row-major strides for a list of dims.
pub(crate) fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for k in (0..dims.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * dims[k + 1];
    }
    s
}

/// Offsets `Σ_k idx_k * stride[positions[k]]` for every multi-index over the
/// selected positions, enumerated in row-major order.
fn offsets(dims: &[usize], positions: &[usize]) -> Vec<usize> {
    let st = strides(dims);
    let mut out = vec![0usize];
    for &p in positions {
        let mut next = Vec::with_capacity(out.len() * dims[p]);
        for &o in &out {
            for i in 0..dims[p] {
                next.push(o + i * st[p]);
            }
        }
        out = next;
    }
    out
}

/// A square operator tagged with its subsystem layout.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexedOperator {
    pub matrix: CMatrix,
    pub layout: Layout,
}

impl IndexedOperator {
    pub fn new(matrix: CMatrix, layout: Layout) -> Result<Self> {
        let n = layout.total_dim();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::Dimension(format!(
                "matrix is {}x{} but layout has total dimension {n}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { matrix, layout })
    }

    pub fn trace(&self) -> C64 {
        trace(&self.matrix)
    }

    /// Trace out the subsystems named in `labels`.
    pub fn partial_trace(&self, labels: &[&str]) -> Result<Self> {
        let traced = self.layout.positions(labels)?;
        let kept: Vec<usize> = (0..self.layout.len()).filter(|p| !traced.contains(p)).collect();
        let dims = self.layout.dims();
        let keep_off = offsets(dims, &kept);
        let trace_off = offsets(dims, &traced);
        let n = keep_off.len();
        let m = &self.matrix;
        let out = CMatrix::from_fn(n, n, |r, c| {
            let (ro, co) = (keep_off[r], keep_off[c]);
            trace_off.iter().map(|&t| m[(ro + t, co + t)]).sum()
        });
        IndexedOperator::new(out, self.layout.select(&kept))
    }

    /// Keep only the named subsystems (trace out the rest), in their existing order.
    pub fn marginal(&self, keep: &[&str]) -> Result<Self> {
        for l in keep {
            self.layout.position(l)?;
        }
        let traced: Vec<&str> = self
            .layout
            .labels()
            .iter()
            .map(String::as_str)
            .filter(|l| !keep.contains(l))
            .collect();
        self.partial_trace(&traced)
    }

    /// Transpose the tensor factors named in `labels`.
    pub fn partial_transpose(&self, labels: &[&str]) -> Result<Self> {
        let sel = self.layout.positions(labels)?;
        let dims = self.layout.dims();
        let rest: Vec<usize> = (0..dims.len()).filter(|p| !sel.contains(p)).collect();
        let sel_off = offsets(dims, &sel);
        let rest_off = offsets(dims, &rest);
        let n = self.layout.total_dim();
        let mut out = CMatrix::zeros(n, n);
        for &ra in &rest_off {
            for &rb in &rest_off {
                for &sa in &sel_off {
                    for &sb in &sel_off {
                        out[(ra + sb, rb + sa)] = self.matrix[(ra + sa, rb + sb)];
                    }
                }
            }
        }
        IndexedOperator::new(out, self.layout.clone())
    }

    /// Reorder the tensor factors to the given label order.
    pub fn reorder(&self, order: &[&str]) -> Result<Self> {
        if order.len() != self.layout.len() {
            return Err(Error::Layout(format!(
                "reorder needs all {} labels, got {}",
                self.layout.len(),
                order.len()
            )));
        }
        let new_pos = self.layout.positions(order)?;
        // factor currently at position new_pos[k] moves to position k
        let mut perm = vec![0; order.len()];
        for (k, &p) in new_pos.iter().enumerate() {
            perm[p] = k;
        }
        let p = permutation_operator(&perm, self.layout.dims())?;
        let matrix = &p * &self.matrix * p.transpose();
        IndexedOperator::new(matrix, self.layout.select(&new_pos))
    }

    pub fn relabel<S: Into<String>>(&self, labels: Vec<S>) -> Result<Self> {
        let layout = Layout::new(self.layout.dims().to_vec(), labels)?;
        IndexedOperator::new(self.matrix.clone(), layout)
    }
}

/// Validate a permutation of `0..n` given as `perm[k] = image of k`.
pub fn check_permutation(perm: &[usize]) -> Result<()> {
    let mut seen = vec![false; perm.len()];
    for &p in perm {
        if p >= perm.len() || seen[p] {
            return Err(Error::Permutation(format!("{perm:?} is not a bijection")));
        }
        seen[p] = true;
    }
    Ok(())
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (k, &p) in perm.iter().enumerate() {
        inv[p] = k;
    }
    inv
}

/// Permutation operator `P_π`: the tensor factor at position `k` moves to
/// position `perm[k]`, i.e. `P_π |i_1 … i_n> = |i_{π⁻¹(1)} … i_{π⁻¹(n)}>`.
///
/// Equivalently `P_{π⁻¹} |i_1 … i_n> = |i_{π(1)} … i_{π(n)}>`, and
/// `P_π P_σ = P_{πσ}`. `dims` are the input dims.
pub fn permutation_operator(perm: &[usize], dims: &[usize]) -> Result<CMatrix> {
    if perm.len() != dims.len() {
        return Err(Error::Permutation(format!(
            "permutation of {} positions applied to {} subsystems",
            perm.len(),
            dims.len()
        )));
    }
    check_permutation(perm)?;
    let n = dims.len();
    let total: usize = dims.iter().product();
    let mut out_dims = vec![0; n];
    for k in 0..n {
        out_dims[perm[k]] = dims[k];
    }
    let out_strides = strides(&out_dims);
    let mut p = CMatrix::zeros(total, total);
    let mut idx = vec![0usize; n];
    for src in 0..total {
        let dst: usize = (0..n).map(|k| idx[k] * out_strides[perm[k]]).sum();
        p[(dst, src)] = ONE;
        // increment row-major multi-index
        for k in (0..n).rev() {
            idx[k] += 1;
            if idx[k] < dims[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    Ok(p)
}

/// Choi vector `|U>> = Σ_i |i> ⊗ U|i>`; component `(i, o)` equals `U[(o, i)]`.
pub fn choi_vector(u: &CMatrix) -> CVector {
    let (dout, din) = u.shape();
    CVector::from_fn(din * dout, |k, _| u[(k % dout, k / dout)])
}

pub fn choi_of_unitary(u: &CMatrix) -> CMatrix {
    projector(&choi_vector(u))
}

/// Choi operator of `ρ ↦ Σ_k K ρ K†`.
pub fn choi_of_kraus(kraus: &[CMatrix]) -> CMatrix {
    let (dout, din) = kraus[0].shape();
    kraus.iter().fold(CMatrix::zeros(din * dout, din * dout), |acc, k| {
        acc + choi_of_unitary(k)
    })
}

pub fn apply_kraus(kraus: &[CMatrix], rho: &CMatrix) -> CMatrix {
    kraus.iter().map(|k| k * rho * k.adjoint()).fold(
        CMatrix::zeros(kraus[0].nrows(), kraus[0].nrows()),
        |acc, x| acc + x,
    )
}

/// Apply a channel given by its Choi operator on (in, out): `N(ρ) = tr_in[J (ρᵀ ⊗ I)]`.
pub fn apply_choi(choi: &CMatrix, din: usize, rho: &CMatrix) -> CMatrix {
    let dout = choi.nrows() / din;
    CMatrix::from_fn(dout, dout, |a, b| {
        let mut s = ZERO;
        for i in 0..din {
            for j in 0..din {
                s += choi[(i * dout + a, j * dout + b)] * rho[(i, j)];
            }
        }
        s
    })
}

/// Choi operator `Σ_ij |i⟩⟨j| ⊗ M(|i⟩⟨j|)` of an arbitrary linear map on `din`-dimensional inputs.
pub fn choi_of_map(din: usize, map: impl Fn(&CMatrix) -> CMatrix) -> CMatrix {
    let mut blocks = Vec::with_capacity(din * din);
    for i in 0..din {
        for j in 0..din {
            let mut e = CMatrix::zeros(din, din);
            e[(i, j)] = ONE;
            blocks.push(map(&e));
        }
    }
    let dout = blocks[0].nrows();
    let mut out = CMatrix::zeros(din * dout, din * dout);
    for i in 0..din {
        for j in 0..din {
            out.view_mut((i * dout, j * dout), (dout, dout)).copy_from(&blocks[i * din + j]);
        }
    }
    out
}

/// Link product `A * B = tr_s[(A^{T_s} ⊗ I)(I ⊗ B)]` over the labels the two
/// operators share. The result carries the labels of `a` not in `b`,
/// followed by the labels of `b` not in `a`.
pub fn link_product(a: &IndexedOperator, b: &IndexedOperator) -> Result<IndexedOperator> {
    let shared: Vec<&str> = a
        .layout
        .labels()
        .iter()
        .map(String::as_str)
        .filter(|l| b.layout.contains(l))
        .collect();
    for l in &shared {
        let (da, db) = (a.layout.dim_of(l)?, b.layout.dim_of(l)?);
        if da != db {
            return Err(Error::Dimension(format!(
                "shared label `{l}` has dim {da} in the first operator and {db} in the second"
            )));
        }
    }
    let a_only: Vec<&str> = a
        .layout
        .labels()
        .iter()
        .map(String::as_str)
        .filter(|l| !shared.contains(l))
        .collect();
    let b_only: Vec<&str> = b
        .layout
        .labels()
        .iter()
        .map(String::as_str)
        .filter(|l| !shared.contains(l))
        .collect();
    let a_order: Vec<&str> = a_only.iter().chain(shared.iter()).copied().collect();
    let b_order: Vec<&str> = shared.iter().chain(b_only.iter()).copied().collect();
    let ap = a.reorder(&a_order)?;
    let bp = b.reorder(&b_order)?;

    let dim = |op: &IndexedOperator, ls: &[&str]| -> Result<usize> {
        ls.iter().map(|l| op.layout.dim_of(l)).product()
    };
    let x = dim(a, &a_only)?;
    let s = dim(a, &shared)?;
    let y = dim(b, &b_only)?;

    // A[(x,s''),(x',s)] -> Am[(x,x'),(s'',s)]
    let am = CMatrix::from_fn(x * x, s * s, |r, c| {
        let (xi, xj) = (r / x, r % x);
        let (s2, s1) = (c / s, c % s);
        ap.matrix[(xi * s + s2, xj * s + s1)]
    });
    // B[(s'',y),(s,y')] -> Bm[(s'',s),(y,y')]
    let bm = CMatrix::from_fn(s * s, y * y, |r, c| {
        let (s2, s1) = (r / s, r % s);
        let (yi, yj) = (c / y, c % y);
        bp.matrix[(s2 * y + yi, s1 * y + yj)]
    });
    let prod = am * bm;
    let out = CMatrix::from_fn(x * y, x * y, |r, c| {
        let (xi, yi) = (r / y, r % y);
        let (xj, yj) = (c / y, c % y);
        prod[(xi * x + xj, yi * y + yj)]
    });
    let mut dims = Vec::new();
    let mut labels = Vec::new();
    for l in &a_only {
        dims.push(a.layout.dim_of(l)?);
        labels.push(l.to_string());
    }
    for l in &b_only {
        dims.push(b.layout.dim_of(l)?);
        labels.push(l.to_string());
    }
    IndexedOperator::new(out, Layout::new(dims, labels)?)
}

/// Switch operator `F: H_B ⊗ H_A -> H_A ⊗ H_B`, `|b>⊗|a> ↦ |a>⊗|b>`.
pub fn switch_operator(da: usize, db: usize) -> CMatrix {
    let mut f = CMatrix::zeros(da * db, da * db);
    for a in 0..da {
        for b in 0..db {
            f[(a * db + b, b * da + a)] = ONE;
        }
    }
    f
}

/// Seed for reproducible random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Independent stream `k` derived from this seed.
    pub fn stream(&self, k: u64) -> ChaCha8Rng {
        let mut r = self.rng();
        r.set_stream(k);
        r
    }
}

fn gaussian_complex<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    c64(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn ginibre<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| gaussian_complex(rng))
}

/// Haar-random unitary: QR of a complex Gaussian matrix with the phases of
/// `diag(R)` moved into `Q`.
pub fn haar_unitary<R: Rng + ?Sized>(d: usize, rng: &mut R) -> CMatrix {
    let g = ginibre(d, d, rng);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        let rjj = r[(j, j)];
        let phase = if rjj.norm() > 0.0 { rjj / rjj.norm() } else { ONE };
        for i in 0..d {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// Haar-random isometry `C^din -> C^dout` (first `din` columns of a Haar unitary).
pub fn haar_isometry<R: Rng + ?Sized>(dout: usize, din: usize, rng: &mut R) -> CMatrix {
    haar_unitary(dout, rng).columns(0, din).into_owned()
}

pub fn random_pure_state<R: Rng + ?Sized>(d: usize, rng: &mut R) -> CVector {
    let v = CVector::from_fn(d, |_, _| gaussian_complex(rng));
    let n = v.norm();
    v / c64(n, 0.0)
}

/// Random density matrix: normalized Wishart `G G† / tr`, or a pure-state projector.
pub fn random_density<R: Rng + ?Sized>(d: usize, pure: bool, rng: &mut R) -> CMatrix {
    if pure {
        return projector(&random_pure_state(d, rng));
    }
    let g = ginibre(d, d, rng);
    let w = &g * g.adjoint();
    let t = trace(&w).re;
    w / c64(t, 0.0)
}

pub fn random_hermitian<R: Rng + ?Sized>(d: usize, rng: &mut R) -> CMatrix {
    let g = ginibre(d, d, rng);
    (&g + g.adjoint()) * c64(0.5, 0.0)
}
