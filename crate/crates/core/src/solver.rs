//! Operator-splitting solver for cone programs
//!
//! ```text
//! minimize   cᵀx + offset
//! subject to Ax + s = b,   s ∈ K = K_1 × … × K_p
//! ```
//!
//! with `K_i` a zero cone, nonnegative orthant, second-order cone
//! `{(t, v) : ‖v‖₂ ≤ t}` or a real PSD cone in scaled `svec` form
//! (upper triangle column by column, off-diagonals times √2).
//!
//! The iteration is an over-relaxed ADMM on the splitting `x | s`; the linear
//! step uses a cached dense Cholesky factor of `σI + AᵀRA`.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows with more nonzeros than this go through the dense Gram product.
const DENSE_ROW_NNZ: usize = 32;
/// Extra penalty weight on equality rows.
const ZERO_CONE_RHO_FACTOR: f64 = 1e3;
const SCALING_MIN: f64 = 1e-4;
const SCALING_MAX: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "dim", rename_all = "lowercase")]
pub enum Cone {
    Zero(usize),
    Nonneg(usize),
    Soc(usize),
    /// Real symmetric PSD cone of the given side, stored as `svec`.
    Psd(usize),
}

impl Cone {
    pub fn dim(&self) -> usize {
        match *self {
            Cone::Zero(n) | Cone::Nonneg(n) | Cone::Soc(n) => n,
            Cone::Psd(side) => side * (side + 1) / 2,
        }
    }
}

/// Index of entry `(i, j)`, `i ≤ j`, in `svec` order.
pub fn svec_index(i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    j * (j + 1) / 2 + i
}

pub fn svec(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = vec![0.0; n * (n + 1) / 2];
    for j in 0..n {
        for i in 0..=j {
            let w = if i == j { 1.0 } else { std::f64::consts::SQRT_2 };
            out[svec_index(i, j)] = w * 0.5 * (m[(i, j)] + m[(j, i)]);
        }
    }
    out
}

pub fn smat(v: &[f64], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            let x = v[svec_index(i, j)];
            if i == j {
                m[(i, i)] = x;
            } else {
                m[(i, j)] = x * std::f64::consts::FRAC_1_SQRT_2;
                m[(j, i)] = m[(i, j)];
            }
        }
    }
    m
}

/// Euclidean projection of `(t, v)` onto the second-order cone.
pub fn project_soc(z: &mut [f64]) {
    let t = z[0];
    let nv = z[1..].iter().map(|x| x * x).sum::<f64>().sqrt();
    if nv <= t {
        return;
    }
    if nv <= -t {
        z.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let a = 0.5 * (nv + t);
    z[0] = a;
    let f = a / nv;
    z[1..].iter_mut().for_each(|x| *x *= f);
}

/// Frobenius-nearest PSD matrix of the symmetric matrix encoded by `z`.
pub fn project_psd(z: &mut [f64], side: usize) {
    let m = smat(z, side);
    let eig = m.symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return;
    }
    let mut out = DMatrix::zeros(side, side);
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l > 0.0 {
            let v = eig.eigenvectors.column(k);
            out += l * v * v.transpose();
        }
    }
    z.copy_from_slice(&svec(&out));
}

fn project_cone(cone: &Cone, z: &mut [f64]) {
    match *cone {
        Cone::Zero(_) => z.iter_mut().for_each(|x| *x = 0.0),
        Cone::Nonneg(_) => z.iter_mut().for_each(|x| *x = x.max(0.0)),
        Cone::Soc(_) => project_soc(z),
        Cone::Psd(side) => project_psd(z, side),
    }
}

/// Sparse matrix in compressed row form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseMatrix {
    /// Build from `(row, col, value)` triplets; duplicates are summed, exact zeros dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, mut t: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(r, c, _)) = t.iter().find(|&&(r, c, _)| r >= nrows || c >= ncols) {
            return Err(Error::Dimension(format!("entry ({r},{c}) outside {nrows}x{ncols}")));
        }
        t.sort_by_key(|e| (e.0, e.1));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(t.len());
        let mut values: Vec<f64> = Vec::with_capacity(t.len());
        let mut rows = Vec::with_capacity(t.len());
        for (r, c, v) in t {
            if let (Some(&lr), Some(&lc)) = (rows.last(), indices.last()) {
                if lr == r && lc == c {
                    *values.last_mut().unwrap() += v;
                    continue;
                }
            }
            rows.push(r);
            indices.push(c);
            values.push(v);
        }
        let (mut ri, mut ci, mut vi) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..values.len() {
            if values[i] != 0.0 {
                ri.push(rows[i]);
                ci.push(indices[i]);
                vi.push(values[i]);
            }
        }
        for &r in &ri {
            indptr[r + 1] += 1;
        }
        for i in 0..nrows {
            indptr[i + 1] += indptr[i];
        }
        Ok(Self { nrows, ncols, indptr, indices: ci, values: vi })
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.indptr[i]..self.indptr[i + 1]).map(move |k| (self.indices[k], self.values[k]))
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.nrows).flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v))).collect()
    }

    /// `y = A x`.
    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    /// `x = Aᵀ y`.
    pub fn tr_mul(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        for (i, &yi) in y.iter().enumerate() {
            if yi != 0.0 {
                for (j, v) in self.row(i) {
                    out[j] += v * yi;
                }
            }
        }
        out
    }

    fn scale(&mut self, row: &[f64], col: &[f64]) {
        for i in 0..self.nrows {
            for k in self.indptr[i]..self.indptr[i + 1] {
                self.values[k] *= row[i] * col[self.indices[k]];
            }
        }
    }

    /// `Σ_{i ∈ rows} a_i a_iᵀ` restricted to the columns mapped by `pos`, as a dense matrix.
    fn gram(&self, rows: &[usize], pos: &[Option<usize>], k: usize) -> DMatrix<f64> {
        let mut g = DMatrix::<f64>::zeros(k, k);
        let entries = |i: usize| self.row(i).filter_map(|(j, v)| pos[j].map(|p| (p, v)));
        let (dense, sparse): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&i| self.indptr[i + 1] - self.indptr[i] > DENSE_ROW_NNZ);
        for &i in &sparse {
            let r: Vec<(usize, f64)> = entries(i).collect();
            for &(j, v) in &r {
                for &(l, w) in &r {
                    g[(j, l)] += v * w;
                }
            }
        }
        if !dense.is_empty() {
            let mut cols: Vec<usize> = dense.iter().flat_map(|&i| entries(i).map(|(j, _)| j)).collect();
            cols.sort_unstable();
            cols.dedup();
            let mut local = vec![usize::MAX; k];
            for (q, &j) in cols.iter().enumerate() {
                local[j] = q;
            }
            let mut m = DMatrix::<f64>::zeros(dense.len(), cols.len());
            for (r, &i) in dense.iter().enumerate() {
                for (j, v) in entries(i) {
                    m[(r, local[j])] = v;
                }
            }
            let gd = m.tr_mul(&m);
            for (a, &ja) in cols.iter().enumerate() {
                for (b, &jb) in cols.iter().enumerate() {
                    g[(ja, jb)] += gd[(a, b)];
                }
            }
        }
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariableKind {
    Free,
    /// Parameters of a PSD block of the given side.
    Psd { side: usize },
    /// Epigraph scalars of the objective.
    Epigraph,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableBlock {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub kind: VariableKind,
}

/// A cone program in standard form together with variable metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicProblem {
    pub n: usize,
    pub c: Vec<f64>,
    pub objective_offset: f64,
    pub a: SparseMatrix,
    pub b: Vec<f64>,
    pub cones: Vec<Cone>,
    pub variables: Vec<VariableBlock>,
}

impl ConicProblem {
    pub fn m(&self) -> usize {
        self.b.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m: usize = self.cones.iter().map(Cone::dim).sum();
        if m != self.b.len() || self.a.nrows != m {
            return Err(Error::Dimension(format!(
                "cones cover {m} rows, b has {}, A has {}",
                self.b.len(),
                self.a.nrows
            )));
        }
        if self.c.len() != self.n || self.a.ncols != self.n {
            return Err(Error::Dimension(format!(
                "n = {}, c has {}, A has {} columns",
                self.n,
                self.c.len(),
                self.a.ncols
            )));
        }
        for v in &self.variables {
            if v.offset + v.len > self.n {
                return Err(Error::Dimension(format!("variable block `{}` out of range", v.name)));
            }
        }
        Ok(())
    }

    pub fn cone_counts(&self) -> ConeCounts {
        let mut c = ConeCounts::default();
        for cone in &self.cones {
            match cone {
                Cone::Zero(n) => c.zero_rows += n,
                Cone::Nonneg(n) => c.nonneg_rows += n,
                Cone::Soc(_) => c.soc += 1,
                Cone::Psd(_) => c.psd += 1,
            }
        }
        c
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ProblemFile {
            version: PROBLEM_FORMAT_VERSION,
            n: self.n,
            m: self.m(),
            variables: self.variables.clone(),
            cones: self.cones.clone(),
            cone_counts: self.cone_counts(),
            a: TripletFile::from(&self.a),
            b: self.b.clone(),
            c: self.c.clone(),
            objective_offset: self.objective_offset,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: ProblemFile = serde_json::from_str(s)?;
        if f.version != PROBLEM_FORMAT_VERSION {
            return Err(Error::FormatVersion(f.version));
        }
        let triplets = f
            .a
            .rows
            .iter()
            .zip(&f.a.cols)
            .zip(&f.a.vals)
            .map(|((&r, &c), &v)| (r, c, v))
            .collect();
        let p = ConicProblem {
            n: f.n,
            c: f.c,
            objective_offset: f.objective_offset,
            a: SparseMatrix::from_triplets(f.m, f.n, triplets)?,
            b: f.b,
            cones: f.cones,
            variables: f.variables,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn export(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn import(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub const PROBLEM_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConeCounts {
    pub zero_rows: usize,
    pub nonneg_rows: usize,
    pub soc: usize,
    pub psd: usize,
}

#[derive(Serialize, Deserialize)]
struct TripletFile {
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl From<&SparseMatrix> for TripletFile {
    fn from(a: &SparseMatrix) -> Self {
        let t = a.triplets();
        Self {
            rows: t.iter().map(|x| x.0).collect(),
            cols: t.iter().map(|x| x.1).collect(),
            vals: t.iter().map(|x| x.2).collect(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ProblemFile {
    version: u32,
    n: usize,
    m: usize,
    variables: Vec<VariableBlock>,
    cones: Vec<Cone>,
    cone_counts: ConeCounts,
    a: TripletFile,
    b: Vec<f64>,
    c: Vec<f64>,
    objective_offset: f64,
}

/// Sparse linear form `Σ coef·x_j + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AffineForm {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl AffineForm {
    pub fn new(terms: Vec<(usize, f64)>, constant: f64) -> Self {
        Self { terms, constant }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(j, v)| v * x[j]).sum::<f64>()
    }
}

/// Symmetric matrix affine in the variables, required to be PSD; `entries`
/// lists the upper triangle in `svec` order (unscaled matrix entries).
#[derive(Debug, Clone, PartialEq)]
pub struct PsdConstraint {
    pub side: usize,
    pub entries: Vec<AffineForm>,
}

/// Input to [`epigraph_formulate`].
#[derive(Debug, Clone, Default)]
pub struct EpigraphSpec {
    pub n_vars: usize,
    pub variables: Vec<VariableBlock>,
    pub linear_objective: Vec<(usize, f64)>,
    /// `form = 0` rows.
    pub equalities: Vec<AffineForm>,
    pub psd: Vec<PsdConstraint>,
    /// Residual vectors; the objective gains `weight · ‖residual(x)‖₂` for each.
    pub residuals: Vec<Vec<AffineForm>>,
    pub residual_weight: f64,
}

/// Build `min ℓᵀx + w Σ_s τ_s` with `(τ_s, r_s(x)) ∈ SOC` for each residual map.
pub fn epigraph_formulate(spec: &EpigraphSpec) -> Result<ConicProblem> {
    let n_tau = spec.residuals.len();
    let n = spec.n_vars + n_tau;
    let mut c = vec![0.0; n];
    for &(j, v) in &spec.linear_objective {
        if j >= spec.n_vars {
            return Err(Error::Dimension(format!("objective references variable {j}")));
        }
        c[j] += v;
    }
    let mut triplets = Vec::new();
    let mut b = Vec::new();
    let mut cones = Vec::new();
    let mut row = 0usize;
    let check = |f: &AffineForm| -> Result<()> {
        match f.terms.iter().find(|&&(j, _)| j >= spec.n_vars) {
            Some(&(j, _)) => Err(Error::Dimension(format!("constraint references variable {j}"))),
            None => Ok(()),
        }
    };

    // f(x) = 0  ->  a x + s = -k, s ∈ {0}
    for f in &spec.equalities {
        check(f)?;
        for &(j, v) in &f.terms {
            triplets.push((row, j, v));
        }
        b.push(-f.constant);
        row += 1;
    }
    if !spec.equalities.is_empty() {
        cones.push(Cone::Zero(spec.equalities.len()));
    }

    // s = M(x) ∈ PSD  ->  -a x + s = k
    for p in &spec.psd {
        if p.entries.len() != p.side * (p.side + 1) / 2 {
            return Err(Error::Dimension(format!(
                "PSD block of side {} needs {} entries, got {}",
                p.side,
                p.side * (p.side + 1) / 2,
                p.entries.len()
            )));
        }
        for j in 0..p.side {
            for i in 0..=j {
                let f = &p.entries[svec_index(i, j)];
                check(f)?;
                let w = if i == j { 1.0 } else { std::f64::consts::SQRT_2 };
                for &(k, v) in &f.terms {
                    triplets.push((row, k, -w * v));
                }
                b.push(w * f.constant);
                row += 1;
            }
        }
        cones.push(Cone::Psd(p.side));
    }

    // s = (τ, r(x)) ∈ SOC
    for (s, r) in spec.residuals.iter().enumerate() {
        let tau = spec.n_vars + s;
        triplets.push((row, tau, -1.0));
        b.push(0.0);
        row += 1;
        for f in r {
            check(f)?;
            for &(k, v) in &f.terms {
                triplets.push((row, k, -v));
            }
            b.push(f.constant);
            row += 1;
        }
        c[tau] = spec.residual_weight;
        cones.push(Cone::Soc(r.len() + 1));
    }

    let mut variables = spec.variables.clone();
    if n_tau > 0 {
        variables.push(VariableBlock {
            name: "tau".into(),
            offset: spec.n_vars,
            len: n_tau,
            kind: VariableKind::Epigraph,
        });
    }
    let p = ConicProblem {
        n,
        c,
        objective_offset: 0.0,
        a: SparseMatrix::from_triplets(row, n, triplets)?,
        b,
        cones,
        variables,
    };
    p.validate()?;
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub max_iter: usize,
    pub eps_primal: f64,
    pub eps_dual: f64,
    pub eps_gap: f64,
    pub scaling: bool,
    pub scaling_iters: usize,
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub adaptive_rho: bool,
    /// Minimum iterations between penalty updates.
    pub adaptive_rho_interval: usize,
    pub check_interval: usize,
    /// Anderson acceleration memory; zero disables it.
    pub anderson_memory: usize,
    /// Recorded for provenance; the iteration itself is deterministic.
    pub seed: u64,
    pub verbose: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iter: 200_000,
            eps_primal: 1e-6,
            eps_dual: 1e-6,
            eps_gap: 1e-5,
            scaling: false,
            scaling_iters: 15,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            adaptive_rho: true,
            adaptive_rho_interval: 100,
            check_interval: 10,
            anderson_memory: 10,
            seed: 0,
            verbose: false,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_primal > 0.0 && self.eps_dual > 0.0 && self.eps_gap > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return Err(Error::InvalidArgument("relaxation must lie in (0, 2)".into()));
        }
        if self.rho <= 0.0 || self.sigma <= 0.0 {
            return Err(Error::InvalidArgument("rho and sigma must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    InfeasibleLikely,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `‖Ax + s − b‖∞ / (1 + max(‖Ax‖∞, ‖s‖∞, ‖b‖∞))`.
    pub primal: f64,
    /// `‖c + Aᵀλ‖∞ / (1 + max(‖c‖∞, ‖Aᵀλ‖∞))`.
    pub dual: f64,
    /// `|cᵀx + bᵀλ| / (1 + |cᵀx| + |bᵀλ|)`.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// Primal objective `cᵀx + offset`.
    pub objective: f64,
    /// Dual objective `−bᵀλ + offset`.
    pub dual_objective: f64,
    pub residuals: Residuals,
    pub iterations: usize,
    pub factorizations: usize,
    pub rho: f64,
    pub x: Vec<f64>,
    pub s: Vec<f64>,
    /// Dual variable `λ ∈ K*`.
    pub y: Vec<f64>,
    /// Fixed-point residual sampled at every convergence check, with the
    /// iteration it was taken at and the penalty epoch it belongs to.
    pub merit_history: Vec<MeritSample>,
    pub settings: SolverSettings,
}

impl SolveResult {
    pub fn block(&self, p: &ConicProblem, name: &str) -> Option<&[f64]> {
        p.variables.iter().find(|v| v.name == name).map(|v| &self.x[v.offset..v.offset + v.len])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeritSample {
    pub iteration: usize,
    pub epoch: usize,
    pub value: f64,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Scaling {
    d: Vec<f64>,
    e: Vec<f64>,
    c: f64,
}

fn cone_ranges(cones: &[Cone]) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(cones.len());
    let mut o = 0;
    for c in cones {
        out.push((o, o + c.dim()));
        o += c.dim();
    }
    out
}

/// Ruiz equilibration with row scalings averaged inside every non-separable cone.
fn equilibrate(a: &mut SparseMatrix, c: &mut [f64], b: &mut [f64], cones: &[Cone], iters: usize) -> Scaling {
    let (m, n) = (a.nrows, a.ncols);
    let mut d = vec![1.0; n];
    let mut e = vec![1.0; m];
    let ranges = cone_ranges(cones);
    for _ in 0..iters {
        let mut col_max = vec![0.0f64; n];
        let mut row_max = vec![0.0f64; m];
        for i in 0..m {
            for (j, v) in a.row(i) {
                col_max[j] = col_max[j].max(v.abs());
                row_max[i] = row_max[i].max(v.abs());
            }
        }
        let mut dd: Vec<f64> = col_max
            .iter()
            .map(|&x| if x > 0.0 { (1.0 / x.sqrt()).clamp(SCALING_MIN, SCALING_MAX) } else { 1.0 })
            .collect();
        let mut ee: Vec<f64> = row_max
            .iter()
            .map(|&x| if x > 0.0 { (1.0 / x.sqrt()).clamp(SCALING_MIN, SCALING_MAX) } else { 1.0 })
            .collect();
        // EAD is invariant under D → D/g, E → E·g; pin the geometric mean of D
        // to one so the factors cannot drift apart, then clamp and make E
        // constant on every non-separable cone.
        let mut dn: Vec<f64> = (0..n).map(|j| d[j] * dd[j]).collect();
        let mut en: Vec<f64> = (0..m).map(|i| e[i] * ee[i]).collect();
        let g = (dn.iter().map(|v| v.ln()).sum::<f64>() / n.max(1) as f64).exp();
        dn.iter_mut().for_each(|v| *v = (*v / g).clamp(SCALING_MIN, SCALING_MAX));
        en.iter_mut().for_each(|v| *v = (*v * g).clamp(SCALING_MIN, SCALING_MAX));
        for (cone, &(lo, hi)) in cones.iter().zip(&ranges) {
            if matches!(cone, Cone::Soc(_) | Cone::Psd(_)) && hi > lo {
                let mean = en[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
                en[lo..hi].iter_mut().for_each(|x| *x = mean);
            }
        }
        for j in 0..n {
            dd[j] = dn[j] / d[j];
        }
        for i in 0..m {
            ee[i] = en[i] / e[i];
        }
        a.scale(&ee, &dd);
        d = dn;
        e = en;
    }
    for j in 0..n {
        c[j] *= d[j];
    }
    for i in 0..m {
        b[i] *= e[i];
    }
    let cmax = inf_norm(c);
    let cs = if cmax > 0.0 { (1.0 / cmax).clamp(SCALING_MIN, SCALING_MAX) } else { 1.0 };
    c.iter_mut().for_each(|x| *x *= cs);
    Scaling { d, e, c: cs }
}

/// Cached factorization of `σI + AᵀRA` with `R = ρ·diag(w)`. Columns whose
/// rows touch no other column decouple and are solved by division; the
/// remaining coupled block is factored densely.
struct KktCache {
    coupled: Vec<usize>,
    decoupled: Vec<usize>,
    gram_zero: DMatrix<f64>,
    gram_rest: DMatrix<f64>,
    diag_zero: Vec<f64>,
    diag_rest: Vec<f64>,
    diag: Vec<f64>,
    factor: Option<Cholesky<f64, Dyn>>,
}

impl KktCache {
    fn new(a: &SparseMatrix, zero_rows: &[bool]) -> Self {
        let n = a.ncols;
        let mut coupled_flag = vec![false; n];
        for i in 0..a.nrows {
            if a.indptr[i + 1] - a.indptr[i] > 1 {
                for (j, _) in a.row(i) {
                    coupled_flag[j] = true;
                }
            }
        }
        let coupled: Vec<usize> = (0..n).filter(|&j| coupled_flag[j]).collect();
        let decoupled: Vec<usize> = (0..n).filter(|&j| !coupled_flag[j]).collect();
        let mut pos = vec![None; n];
        for (k, &j) in coupled.iter().enumerate() {
            pos[j] = Some(k);
        }
        let mut diag_zero = vec![0.0; n];
        let mut diag_rest = vec![0.0; n];
        for i in 0..a.nrows {
            for (j, v) in a.row(i) {
                if !coupled_flag[j] {
                    if zero_rows[i] {
                        diag_zero[j] += v * v;
                    } else {
                        diag_rest[j] += v * v;
                    }
                }
            }
        }
        let (z, r): (Vec<usize>, Vec<usize>) = (0..a.nrows).partition(|&i| zero_rows[i]);
        let k = coupled.len();
        Self {
            gram_zero: a.gram(&z, &pos, k),
            gram_rest: a.gram(&r, &pos, k),
            coupled,
            decoupled,
            diag_zero,
            diag_rest,
            diag: vec![0.0; n],
            factor: None,
        }
    }

    fn factorize(&mut self, rho: f64, sigma: f64) -> Result<()> {
        let k = self.coupled.len();
        let mut m = &self.gram_rest * rho + &self.gram_zero * (rho * ZERO_CONE_RHO_FACTOR);
        for i in 0..k {
            m[(i, i)] += sigma;
        }
        for &j in &self.decoupled {
            self.diag[j] = sigma + rho * (self.diag_rest[j] + ZERO_CONE_RHO_FACTOR * self.diag_zero[j]);
        }
        self.factor = Some(
            m.cholesky()
                .ok_or_else(|| Error::Numerical("KKT matrix is not positive definite".into()))?,
        );
        Ok(())
    }

    fn solve(&self, rhs: Vec<f64>) -> Vec<f64> {
        let mut out = rhs.clone();
        for &j in &self.decoupled {
            out[j] = rhs[j] / self.diag[j];
        }
        if !self.coupled.is_empty() {
            let mut v = DVector::from_iterator(self.coupled.len(), self.coupled.iter().map(|&j| rhs[j]));
            self.factor.as_ref().expect("factorized").solve_mut(&mut v);
            for (k, &j) in self.coupled.iter().enumerate() {
                out[j] = v[k];
            }
        }
        out
    }

    fn factor_cost(&self) -> f64 {
        let k = self.coupled.len() as f64;
        k * k * k / 3.0
    }

    fn solve_cost(&self) -> f64 {
        let k = self.coupled.len() as f64;
        2.0 * k * k
    }
}

/// Solve the cone program.
pub fn solve(p: &ConicProblem, settings: &SolverSettings) -> Result<SolveResult> {
    p.validate()?;
    settings.validate()?;
    let (m, n) = (p.m(), p.n);
    let mut a = p.a.clone();
    let mut c = p.c.clone();
    let mut b = p.b.clone();
    let scaling = if settings.scaling {
        equilibrate(&mut a, &mut c, &mut b, &p.cones, settings.scaling_iters)
    } else {
        Scaling { d: vec![1.0; n], e: vec![1.0; m], c: 1.0 }
    };

    let ranges = cone_ranges(&p.cones);
    let mut zero_rows = vec![false; m];
    for (cone, &(lo, hi)) in p.cones.iter().zip(&ranges) {
        if matches!(cone, Cone::Zero(_)) {
            zero_rows[lo..hi].iter_mut().for_each(|z| *z = true);
        }
    }
    let rho_weight: Vec<f64> = zero_rows.iter().map(|&z| if z { ZERO_CONE_RHO_FACTOR } else { 1.0 }).collect();

    let mut kkt = KktCache::new(&a, &zero_rows);
    let mut rho = settings.rho;
    kkt.factorize(rho, settings.sigma)?;
    let mut factorizations = 1;

    // deterministic estimate of the cost of a refactorization in iterations
    let iter_cost = 4.0 * a.nnz() as f64
        + kkt.solve_cost()
        + p.cones.iter().map(|c| if let Cone::Psd(s) = c { 10.0 * (*s as f64).powi(3) } else { 0.0 }).sum::<f64>();
    let factor_cost = kkt.factor_cost();
    let min_interval = settings.adaptive_rho_interval.max((5.0 * factor_cost / iter_cost.max(1.0)).ceil() as usize);
    let mut last_update = 0usize;

    let sigma = settings.sigma;
    let alpha = settings.alpha;
    let mut merit_history = Vec::new();
    let mut epoch = 0usize;

    let unscale = |x: &[f64], s: &[f64], y: &[f64]| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let xu: Vec<f64> = x.iter().zip(&scaling.d).map(|(v, d)| v * d).collect();
        let su: Vec<f64> = s.iter().zip(&scaling.e).map(|(v, e)| v / e).collect();
        // λ = −y, unscaled
        let lu: Vec<f64> = y.iter().zip(&scaling.e).map(|(v, e)| -v * e / scaling.c).collect();
        (xu, su, lu)
    };
    let residuals = |xu: &[f64], su: &[f64], lu: &[f64]| -> (Residuals, f64, f64) {
        let ax = p.a.mul(xu);
        let rp: Vec<f64> = (0..m).map(|i| ax[i] + su[i] - p.b[i]).collect();
        let atl = p.a.tr_mul(lu);
        let rd: Vec<f64> = (0..n).map(|j| p.c[j] + atl[j]).collect();
        let pobj = dot(&p.c, xu);
        let dobj = -dot(&p.b, lu);
        let res = Residuals {
            primal: inf_norm(&rp) / (1.0 + inf_norm(&ax).max(inf_norm(su)).max(inf_norm(&p.b))),
            dual: inf_norm(&rd) / (1.0 + inf_norm(&p.c).max(inf_norm(&atl))),
            gap: (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs()),
        };
        (res, pobj, dobj)
    };
    let project = |v: &[f64]| -> Vec<f64> {
        let mut z = v.to_vec();
        let mut chunks: Vec<(&Cone, &mut [f64])> = Vec::with_capacity(p.cones.len());
        let mut rest: &mut [f64] = &mut z;
        for cone in &p.cones {
            let (head, tail) = rest.split_at_mut(cone.dim());
            chunks.push((cone, head));
            rest = tail;
        }
        chunks.par_iter_mut().for_each(|(cone, z)| project_cone(cone, z));
        z
    };

    // Douglas–Rachford state w = (x, v) with v = s + y/ρ; s = Π(v), y = R(v − s).
    let mut w = vec![0.0; n + m];
    let mut rw: Vec<f64> = rho_weight.iter().map(|x| x * rho).collect();
    let metric = |rw: &[f64]| -> Vec<f64> {
        std::iter::repeat_n(sigma.sqrt(), n).chain(rw.iter().map(|r| r.sqrt())).collect()
    };
    let mut weights = metric(&rw);
    let mut anderson = Anderson::new(settings.anderson_memory);
    // accepted point before the last extrapolation, with T applied, and its merit
    let mut fallback: Option<(Vec<f64>, f64)> = None;
    let mut last_merit = f64::INFINITY;
    let mut best: Option<(f64, Vec<f64>)> = None;

    let mut iter = 0;
    let mut status = SolveStatus::MaxIter;
    while iter < settings.max_iter {
        iter += 1;
        let (x, v) = w.split_at(n);
        let s = project(v);
        let y: Vec<f64> = (0..m).map(|i| rw[i] * (v[i] - s[i])).collect();
        // x̃ = (σI + AᵀRA)⁻¹ (σx − c + Aᵀ(R(b − s) + y))
        let t: Vec<f64> = (0..m).map(|i| rw[i] * (b[i] - s[i]) + y[i]).collect();
        let at = a.tr_mul(&t);
        let rhs: Vec<f64> = (0..n).map(|j| sigma * x[j] - c[j] + at[j]).collect();
        let xt = kkt.solve(rhs);
        let axt = a.mul(&xt);
        let mut tw = Vec::with_capacity(n + m);
        tw.extend((0..n).map(|j| alpha * xt[j] + (1.0 - alpha) * x[j]));
        tw.extend((0..m).map(|i| v[i] + alpha * (b[i] - axt[i] - s[i])));
        let g: Vec<f64> = (0..n + m).map(|k| (w[k] - tw[k]) * weights[k]).collect();
        let merit = g.iter().map(|z| z * z).sum::<f64>().sqrt();

        // safeguard: an extrapolated point must not increase the fixed-point residual
        if merit > last_merit {
            if let Some((fw, fm)) = fallback.take() {
                w = fw;
                last_merit = fm;
                anderson.reset();
                continue;
            }
        }

        if iter % settings.check_interval == 0 || iter == settings.max_iter {
            merit_history.push(MeritSample { iteration: iter, epoch, value: merit });
            let (xu, su, lu) = unscale(x, &s, &y);
            let (res, pobj, dobj) = residuals(&xu, &su, &lu);
            if settings.verbose && iter % (settings.check_interval * 100) == 0 {
                eprintln!(
                    "progress phase=solver iter={iter} pobj={:.6e} dobj={:.6e} rp={:.2e} rd={:.2e} gap={:.2e} rho={rho:.2e} merit={merit:.2e}",
                    pobj + p.objective_offset,
                    dobj + p.objective_offset,
                    res.primal,
                    res.dual,
                    res.gap
                );
            }
            let score = (res.primal / settings.eps_primal)
                .max(res.dual / settings.eps_dual)
                .max(res.gap / settings.eps_gap);
            if best.as_ref().is_none_or(|(b, _)| score < *b) {
                best = Some((score, [xu, su, lu].concat()));
            }
            if res.primal <= settings.eps_primal && res.dual <= settings.eps_dual && res.gap <= settings.eps_gap {
                status = SolveStatus::Optimal;
                break;
            }
            if settings.adaptive_rho && iter - last_update >= min_interval {
                // balance scaled residuals
                let ax = a.mul(x);
                let rp = inf_norm(&(0..m).map(|i| ax[i] + s[i] - b[i]).collect::<Vec<_>>())
                    / (1e-12 + inf_norm(&ax).max(inf_norm(&s)).max(inf_norm(&b)));
                let aty = a.tr_mul(&y);
                let rd = inf_norm(&(0..n).map(|j| c[j] - aty[j]).collect::<Vec<_>>())
                    / (1e-12 + inf_norm(&c).max(inf_norm(&aty)));
                let ratio = (rp / rd.max(1e-300)).sqrt();
                if !(0.2..=5.0).contains(&ratio) && ratio.is_finite() {
                    rho = (rho * ratio).clamp(1e-6, 1e6);
                    kkt.factorize(rho, sigma)?;
                    factorizations += 1;
                    epoch += 1;
                    last_update = iter;
                    rw = rho_weight.iter().map(|x| x * rho).collect();
                    weights = metric(&rw);
                    // keep (x, s, y): re-express v in the new penalty
                    for i in 0..m {
                        w[n + i] = s[i] + y[i] / rw[i];
                    }
                    anderson.reset();
                    fallback = None;
                    last_merit = f64::INFINITY;
                    continue;
                }
            }
        }

        last_merit = merit;
        match anderson.extrapolate(&w, &g, &tw, &weights) {
            Some(next) => {
                fallback = Some((tw, merit));
                w = next;
            }
            None => {
                fallback = None;
                w = tw;
            }
        }
    }

    let (res, pobj, dobj, xu, su, lu) = if status == SolveStatus::Optimal {
        let (x, v) = w.split_at(n);
        let s = project(v);
        let y: Vec<f64> = (0..m).map(|i| rw[i] * (v[i] - s[i])).collect();
        let (xu, su, lu) = unscale(x, &s, &y);
        let (res, pobj, dobj) = residuals(&xu, &su, &lu);
        (res, pobj, dobj, xu, su, lu)
    } else {
        let (_, z) = best.expect("at least one check");
        let (xu, rest) = z.split_at(n);
        let (su, lu) = rest.split_at(m);
        let (res, pobj, dobj) = residuals(xu, su, lu);
        (res, pobj, dobj, xu.to_vec(), su.to_vec(), lu.to_vec())
    };
    if status == SolveStatus::MaxIter && res.primal > 1e3 * settings.eps_primal && res.dual <= 10.0 * settings.eps_dual {
        status = SolveStatus::InfeasibleLikely;
    }
    Ok(SolveResult {
        status,
        objective: pobj + p.objective_offset,
        dual_objective: dobj + p.objective_offset,
        residuals: res,
        iterations: iter,
        factorizations,
        rho,
        x: xu,
        s: su,
        y: lu,
        merit_history,
        settings: settings.clone(),
    })
}

/// Type-II Anderson acceleration on the fixed-point map, least squares in the solver metric.
struct Anderson {
    memory: usize,
    prev: Option<(Vec<f64>, Vec<f64>)>,
    dw: std::collections::VecDeque<Vec<f64>>,
    dg: std::collections::VecDeque<Vec<f64>>,
}

impl Anderson {
    fn new(memory: usize) -> Self {
        Self { memory, prev: None, dw: Default::default(), dg: Default::default() }
    }

    fn reset(&mut self) {
        self.prev = None;
        self.dw.clear();
        self.dg.clear();
    }

    /// `g` is the weighted residual `W(w − Tw)`; returns the extrapolated point, if any.
    fn extrapolate(&mut self, w: &[f64], g: &[f64], tw: &[f64], weights: &[f64]) -> Option<Vec<f64>> {
        if self.memory == 0 {
            return None;
        }
        if let Some((pw, pg)) = self.prev.take() {
            self.dw.push_back(w.iter().zip(&pw).map(|(a, b)| a - b).collect());
            self.dg.push_back(g.iter().zip(&pg).map(|(a, b)| a - b).collect());
            if self.dw.len() > self.memory {
                self.dw.pop_front();
                self.dg.pop_front();
            }
        }
        self.prev = Some((w.to_vec(), g.to_vec()));
        let k = self.dg.len();
        if k == 0 {
            return None;
        }
        let mut gram = DMatrix::<f64>::zeros(k, k);
        let mut rhs = DVector::<f64>::zeros(k);
        for i in 0..k {
            rhs[i] = dot(&self.dg[i], g);
            for j in 0..=i {
                let v = dot(&self.dg[i], &self.dg[j]);
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
        }
        let scale = (0..k).map(|i| gram[(i, i)]).fold(0.0f64, f64::max);
        if scale <= 0.0 {
            return None;
        }
        for i in 0..k {
            gram[(i, i)] += 1e-10 * scale;
        }
        let gamma = gram.cholesky()?.solve(&rhs);
        if gamma.iter().any(|v| !v.is_finite()) {
            return None;
        }
        // w⁺ = Tw − Σ γ_i (Δw_i − Δ(w − Tw)_i), the latter unweighted
        let mut out = tw.to_vec();
        for i in 0..k {
            let gi = gamma[i];
            for (j, o) in out.iter_mut().enumerate() {
                *o -= gi * (self.dw[i][j] - self.dg[i][j] / weights[j]);
            }
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::RngSeed;
    use rand::Rng;

    fn tight() -> SolverSettings {
        SolverSettings { eps_primal: 1e-10, eps_dual: 1e-10, eps_gap: 1e-10, ..Default::default() }
    }

    #[test]
    fn zero_residual_map() {
        let spec = EpigraphSpec {
            residuals: vec![vec![AffineForm::new(vec![], 0.0)]],
            residual_weight: 1.0,
            ..Default::default()
        };
        let p = epigraph_formulate(&spec).unwrap();
        let r = solve(&p, &tight()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!(r.objective.abs() < 1e-8 && r.x[0].abs() < 1e-8);
    }

    #[test]
    fn nearest_point() {
        let mut rng = RngSeed(1).rng();
        let target: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
        let spec = EpigraphSpec {
            n_vars: 5,
            residuals: vec![(0..5).map(|j| AffineForm::new(vec![(j, 1.0)], -target[j])).collect()],
            residual_weight: 1.0,
            ..Default::default()
        };
        let p = epigraph_formulate(&spec).unwrap();
        let r = solve(&p, &tight()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!(r.objective.abs() < 1e-8);
        for j in 0..5 {
            assert!((r.x[j] - target[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn schur_complement_trace() {
        // X = [[x0, x1], [x1, x2]]
        let spec = EpigraphSpec {
            n_vars: 3,
            linear_objective: vec![(0, 1.0), (2, 1.0)],
            equalities: vec![AffineForm::new(vec![(0, 1.0)], -1.0), AffineForm::new(vec![(1, 1.0)], -2.0)],
            psd: vec![PsdConstraint {
                side: 2,
                entries: vec![
                    AffineForm::new(vec![(0, 1.0)], 0.0),
                    AffineForm::new(vec![(1, 1.0)], 0.0),
                    AffineForm::new(vec![(2, 1.0)], 0.0),
                ],
            }],
            ..Default::default()
        };
        let p = epigraph_formulate(&spec).unwrap();
        let r = solve(&p, &tight()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.objective - 5.0).abs() < 1e-8, "{}", r.objective);
        assert!((r.x[2] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn soc_projection_cases() {
        let mut z = vec![2.0, 1.0, 1.0];
        project_soc(&mut z);
        assert_eq!(z, vec![2.0, 1.0, 1.0]);
        let mut z = vec![-2.0, 1.0, 0.0];
        project_soc(&mut z);
        assert_eq!(z, vec![0.0, 0.0, 0.0]);
        let mut z = vec![0.0, 2.0, 0.0];
        project_soc(&mut z);
        assert!((z[0] - 1.0).abs() < 1e-15 && (z[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn svec_round_trip() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0]);
        let v = svec(&m);
        assert!((smat(&v, 3) - &m).amax() < 1e-15);
        // svec preserves the trace inner product
        assert!((dot(&v, &v) - m.component_mul(&m).sum()).abs() < 1e-12);
    }

    #[test]
    fn problem_json_round_trip() {
        let spec = EpigraphSpec {
            n_vars: 2,
            linear_objective: vec![(0, 1.0)],
            equalities: vec![AffineForm::new(vec![(0, 1.0), (1, -1.0)], 0.5)],
            residuals: vec![vec![AffineForm::new(vec![(1, 2.0)], 1.0)]],
            residual_weight: 0.5,
            ..Default::default()
        };
        let p = epigraph_formulate(&spec).unwrap();
        let s = p.to_json().unwrap();
        assert!(s.contains("\"version\":1"));
        let q = ConicProblem::from_json(&s).unwrap();
        assert_eq!(p, q);
        assert_eq!(q.to_json().unwrap(), s);
    }
}
