//! Full-space and symmetry-reduced comb SDPs.
//!
//! A comb commuting with its symmetry group is written in the combined Schur
//! basis as `C = Σ_r Σ_{αβ} c^(r)_{αβ} Σ_a |p_{r,a,α}⟩⟨p_{r,a,β}|` with real
//! vectors `p` (basis columns re-indexed to causal order). Each Hermitian block
//! `c^(r)` carries `m_r²` real parameters: the diagonal, then the strict upper
//! triangle of `Re c`, then that of `Im c`.
//!
//! The unreduced problem is the same construction with the trivial basis (one
//! block of multiplicity `d^{2t+2}` and dimension one).

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::comb::{haar_samples, Architecture, CombChoi, CombSpec, MarginalSpec};
use crate::error::{Error, Result};
use crate::rep::{combined_schur_basis, CombinedBasis, SchurBasis};
use crate::solver::{
    epigraph_formulate, solve, AffineForm, ConicProblem, EpigraphSpec, PsdConstraint, SolveResult, SolverSettings,
    VariableBlock, VariableKind,
};
use crate::tensor::{c64, CMatrix, RngSeed, C64};

/// Coefficients below this are treated as structural zeros.
pub const SUPPORT_TOL: f64 = 1e-12;
/// Default cap on the number of real parameters of an unreduced problem.
pub const DEFAULT_FULL_CAP: usize = 4096;
pub const REDUCED_FORMAT_VERSION: u32 = 1;

/// Site permutations from causal to grouped order `(P, O_1…O_t, I_1…I_t, F)`;
/// `perm[k]` is the grouped position of causal site `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationChoice {
    pub pi: Vec<usize>,
    pub sigma: Vec<usize>,
}

impl PermutationChoice {
    pub fn for_architecture(&self, a: Architecture) -> &[usize] {
        match a {
            Architecture::Sequential => &self.pi,
            Architecture::Parallel => &self.sigma,
        }
    }
}

pub fn default_permutations(t: usize) -> Result<PermutationChoice> {
    if t < 1 {
        return Err(Error::InvalidArgument("t must be at least 1".into()));
    }
    let n = 2 * t + 2;
    let mut pi = vec![0; n];
    let mut sigma = vec![0; n];
    pi[n - 1] = n - 1;
    sigma[n - 1] = n - 1;
    for j in 1..=t {
        // sequential: I_j at 2j-1, O_j at 2j
        pi[2 * j - 1] = t + j;
        pi[2 * j] = j;
        // parallel: I_j at j, O_j at t+j
        sigma[j] = t + j;
        sigma[t + j] = j;
    }
    Ok(PermutationChoice { pi, sigma })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockShape {
    pub mult: usize,
    pub dim: usize,
}

/// Basis columns in causal order, stored sparsely.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTensor {
    pub d: usize,
    pub sites: usize,
    pub blocks: Vec<BlockShape>,
    /// Block offsets into `columns`; column of `(r, α, a)` is `offset_r + α·dim_r + a`.
    pub offsets: Vec<usize>,
    /// `(causal index, coefficient)` pairs per column, ascending in index.
    pub columns: Vec<Vec<(usize, f64)>>,
}

impl CoefficientTensor {
    pub fn column(&self, r: usize, alpha: usize, a: usize) -> &[(usize, f64)] {
        &self.columns[self.offsets[r] + alpha * self.blocks[r].dim + a]
    }

    pub fn total_dim(&self) -> usize {
        self.d.pow(self.sites as u32)
    }

    pub fn nnz(&self) -> usize {
        self.columns.iter().map(Vec::len).sum()
    }

    /// Dense real matrix whose columns are the basis vectors.
    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.total_dim();
        let mut q = DMatrix::zeros(n, self.columns.len());
        for (c, col) in self.columns.iter().enumerate() {
            for &(i, v) in col {
                q[(i, c)] = v;
            }
        }
        q
    }

    /// Trivial basis: the computational basis as one block.
    pub fn identity(d: usize, sites: usize) -> Self {
        let n = d.pow(sites as u32);
        Self {
            d,
            sites,
            blocks: vec![BlockShape { mult: n, dim: 1 }],
            offsets: vec![0],
            columns: (0..n).map(|i| vec![(i, 1.0)]).collect(),
        }
    }
}

/// Grouped-order index of every causal-order index.
fn grouped_index_map(d: usize, perm: &[usize]) -> Vec<usize> {
    let n = perm.len();
    let total = d.pow(n as u32);
    let stride = |k: usize| d.pow((n - 1 - k) as u32);
    (0..total)
        .map(|idx| (0..n).map(|k| ((idx / stride(k)) % d) * stride(perm[k])).sum())
        .collect()
}

/// Read the columns of `basis` (grouped order) as causal-order coefficient vectors.
pub fn coefficient_tensor(basis: &SchurBasis, perm: &[usize]) -> Result<CoefficientTensor> {
    let sites = basis.dims.len();
    let d = basis.dims.first().copied().unwrap_or(0);
    if perm.len() != sites || basis.dims.iter().any(|&x| x != d) {
        return Err(Error::Dimension("permutation does not match the basis sites".into()));
    }
    crate::tensor::check_permutation(perm)?;
    let map = grouped_index_map(d, perm);
    let columns = (0..basis.q.ncols())
        .map(|c| {
            map.iter()
                .enumerate()
                .filter_map(|(i, &g)| {
                    let v = basis.q[(g, c)];
                    (v.abs() > SUPPORT_TOL).then_some((i, v))
                })
                .collect()
        })
        .collect();
    Ok(CoefficientTensor {
        d,
        sites,
        blocks: basis.blocks.iter().map(|b| BlockShape { mult: b.mult, dim: b.dim }).collect(),
        offsets: basis.blocks.iter().map(|b| b.offset).collect(),
        columns,
    })
}

/// Real parameter layout of the Hermitian blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub mults: Vec<usize>,
    pub offsets: Vec<usize>,
    pub total: usize,
}

impl ParamLayout {
    pub fn new(mults: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(mults.len());
        let mut total = 0;
        for &m in mults {
            offsets.push(total);
            total += m * m;
        }
        Self { mults: mults.to_vec(), offsets, total }
    }

    fn tri(m: usize, a: usize, b: usize) -> usize {
        a * m - a * (a + 1) / 2 + (b - a - 1)
    }

    /// Index of `Re c_{αβ}` (symmetric).
    pub fn re(&self, r: usize, a: usize, b: usize) -> usize {
        let m = self.mults[r];
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        if a == b {
            self.offsets[r] + a
        } else {
            self.offsets[r] + m + Self::tri(m, a, b)
        }
    }

    /// Index and sign of `Im c_{αβ}` (antisymmetric, zero on the diagonal).
    pub fn im(&self, r: usize, a: usize, b: usize) -> Option<(usize, f64)> {
        let m = self.mults[r];
        match a.cmp(&b) {
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Less => Some((self.offsets[r] + m + m * (m - 1) / 2 + Self::tri(m, a, b), 1.0)),
            std::cmp::Ordering::Greater => Some((self.offsets[r] + m + m * (m - 1) / 2 + Self::tri(m, b, a), -1.0)),
        }
    }

    /// Accumulate the coefficient of `c_{αβ}` (weight `w`) onto the real parameters.
    fn add(&self, acc: &mut BTreeMap<usize, C64>, r: usize, a: usize, b: usize, w: C64) {
        *acc.entry(self.re(r, a, b)).or_insert(C64::new(0.0, 0.0)) += w;
        if let Some((k, s)) = self.im(r, a, b) {
            *acc.entry(k).or_insert(C64::new(0.0, 0.0)) += w * c64(0.0, s);
        }
    }

    pub fn blocks_from_params(&self, x: &[f64]) -> Vec<CMatrix> {
        (0..self.mults.len())
            .map(|r| {
                let m = self.mults[r];
                CMatrix::from_fn(m, m, |a, b| {
                    let im = self.im(r, a, b).map_or(0.0, |(k, s)| s * x[k]);
                    c64(x[self.re(r, a, b)], im)
                })
            })
            .collect()
    }

    pub fn params_from_blocks(&self, blocks: &[CMatrix]) -> Vec<f64> {
        let mut x = vec![0.0; self.total];
        for (r, c) in blocks.iter().enumerate() {
            let m = self.mults[r];
            for a in 0..m {
                for b in a..m {
                    let h = 0.5 * (c[(a, b)] + c[(b, a)].conj());
                    x[self.re(r, a, b)] = h.re;
                    if let Some((k, _)) = self.im(r, a, b) {
                        x[k] = h.im;
                    }
                }
            }
        }
        x
    }

    /// Entries of the real embedding `[[Re c, −Im c], [Im c, Re c]]` in `svec` order.
    fn psd_embedding(&self, r: usize) -> PsdConstraint {
        let m = self.mults[r];
        let side = 2 * m;
        let mut entries = vec![AffineForm::default(); side * (side + 1) / 2];
        for j in 0..side {
            for i in 0..=j {
                let (bi, ii) = (i / m, i % m);
                let (bj, jj) = (j / m, j % m);
                let terms = if bi == bj {
                    vec![(self.re(r, ii, jj), 1.0)]
                } else {
                    // i < j, so this is the upper-right block: −Im c
                    self.im(r, ii, jj).map(|(k, s)| vec![(k, -s)]).unwrap_or_default()
                };
                entries[crate::solver::svec_index(i, j)] = AffineForm::new(terms, 0.0);
            }
        }
        PsdConstraint { side, entries }
    }
}

/// Sparse real linear functional `Σ coef·x = rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// Marginal entries `tr_tail(C)(h, h')`, `h ≤ h'`, as complex functionals of the parameters.
fn marginal_entries(
    tensor: &CoefficientTensor,
    layout: &ParamLayout,
    traced: usize,
) -> BTreeMap<(usize, usize), BTreeMap<usize, C64>> {
    let tails = tensor.d.pow(traced as u32);
    let per_block: Vec<BTreeMap<(usize, usize), BTreeMap<usize, C64>>> = (0..tensor.blocks.len())
        .into_par_iter()
        .map(|r| {
            let shape = tensor.blocks[r];
            let mut out: BTreeMap<(usize, usize), BTreeMap<usize, C64>> = BTreeMap::new();
            let mut by_tail: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); tails];
            for a in 0..shape.dim {
                by_tail.iter_mut().for_each(Vec::clear);
                for alpha in 0..shape.mult {
                    for &(idx, v) in tensor.column(r, alpha, a) {
                        by_tail[idx % tails].push((idx / tails, alpha, v));
                    }
                }
                for group in &by_tail {
                    for &(h, alpha, v) in group {
                        for &(h2, beta, w) in group {
                            if h <= h2 {
                                let acc = out.entry((h, h2)).or_default();
                                layout.add(acc, r, alpha, beta, c64(v * w, 0.0));
                            }
                        }
                    }
                }
            }
            out
        })
        .collect();
    let mut merged: BTreeMap<(usize, usize), BTreeMap<usize, C64>> = BTreeMap::new();
    for block in per_block {
        for (key, terms) in block {
            let acc = merged.entry(key).or_default();
            for (k, v) in terms {
                *acc.entry(k).or_insert(C64::new(0.0, 0.0)) += v;
            }
        }
    }
    merged
}

fn add_scaled(acc: &mut BTreeMap<usize, C64>, src: Option<&BTreeMap<usize, C64>>, s: f64) {
    if let Some(src) = src {
        for (&k, &v) in src {
            *acc.entry(k).or_insert(C64::new(0.0, 0.0)) += v * s;
        }
    }
}

/// Real rows (real and imaginary parts) expressing one marginal constraint.
pub fn marginal_constraints(
    tensor: &CoefficientTensor,
    layout: &ParamLayout,
    spec: MarginalSpec,
) -> Result<Vec<LinearConstraint>> {
    if spec.traced + spec.lifted > tensor.sites {
        return Err(Error::InvalidArgument(format!("marginal {spec:?} on {} sites", tensor.sites)));
    }
    let entries = marginal_entries(tensor, layout, spec.traced);
    let dz = tensor.d.pow(spec.lifted as u32);
    let mut functionals: Vec<BTreeMap<usize, C64>> = Vec::new();
    let mut diag_pairs: Vec<(usize, usize)> = Vec::new();
    for (&(h, h2), terms) in &entries {
        if h % dz != h2 % dz {
            functionals.push(terms.clone());
        } else {
            diag_pairs.push((h / dz, h2 / dz));
        }
    }
    diag_pairs.sort_unstable();
    diag_pairs.dedup();
    for (x, x2) in diag_pairs {
        let mut avg = BTreeMap::new();
        for z in 0..dz {
            add_scaled(&mut avg, entries.get(&(x * dz + z, x2 * dz + z)), 1.0 / dz as f64);
        }
        for z in 0..dz {
            let mut f = BTreeMap::new();
            add_scaled(&mut f, entries.get(&(x * dz + z, x2 * dz + z)), 1.0);
            add_scaled(&mut f, Some(&avg), -1.0);
            functionals.push(f);
        }
    }
    let mut rows = Vec::with_capacity(2 * functionals.len());
    for f in functionals {
        for part in [|z: C64| z.re, |z: C64| z.im] {
            let terms: Vec<(usize, f64)> =
                f.iter().map(|(&k, &v)| (k, part(v))).filter(|&(_, v)| v.abs() > SUPPORT_TOL).collect();
            if !terms.is_empty() {
                rows.push(LinearConstraint { terms, rhs: 0.0 });
            }
        }
    }
    Ok(rows)
}

/// Merge constraints that agree as functionals after normalization.
pub fn deduplicate(rows: Vec<LinearConstraint>) -> Vec<LinearConstraint> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for row in rows {
        let scale = row.terms.iter().fold(0.0f64, |m, &(_, v)| m.max(v.abs()));
        if scale == 0.0 {
            continue;
        }
        let sign = if row.terms[0].1 < 0.0 { -1.0 } else { 1.0 };
        let s = sign / scale;
        let q = |v: f64| (v * s / SUPPORT_TOL).round() as i64;
        let key: (Vec<(usize, i64)>, i64) = (row.terms.iter().map(|&(k, v)| (k, q(v))).collect(), q(row.rhs));
        if seen.insert(key) {
            out.push(LinearConstraint { terms: row.terms.iter().map(|&(k, v)| (k, v * s)).collect(), rhs: row.rhs * s });
        }
    }
    out
}

/// `N_U†(O)` as complex matrices per parameter: entry `(a, b)` of the result is
/// `Σ_k x_k G_k(a, b)`; returned as `(k, G_k)` for the parameters that appear.
pub fn objective_blocks(
    tensor: &CoefficientTensor,
    layout: &ParamLayout,
    architecture: Architecture,
    t: usize,
    u: &CMatrix,
    o: &CMatrix,
) -> Vec<(usize, CMatrix)> {
    let d = tensor.d;
    let n = tensor.sites;
    let stride = |k: usize| d.pow((n - 1 - k) as u32);
    let slot = |k: usize| match architecture {
        Architecture::Sequential => (2 * k - 1, 2 * k),
        Architecture::Parallel => (k, t + k),
    };
    let (ipos, opos): (Vec<usize>, Vec<usize>) = (1..=t).map(slot).unzip();
    // y_c(x, f) = Σ_slots Π_k U[o_k, i_k] p_c(x, slots, f)
    let y: Vec<CMatrix> = tensor
        .columns
        .iter()
        .map(|col| {
            let mut m = CMatrix::zeros(d, d);
            for &(idx, v) in col {
                let digit = |k: usize| (idx / stride(k)) % d;
                let mut w = c64(v, 0.0);
                for (&ip, &op) in ipos.iter().zip(&opos) {
                    w *= u[(digit(op), digit(ip))];
                }
                m[(digit(0), digit(n - 1))] += w;
            }
            m
        })
        .collect();
    let mut out: BTreeMap<usize, CMatrix> = BTreeMap::new();
    for (r, shape) in tensor.blocks.iter().enumerate() {
        let col = |alpha: usize, a: usize| tensor.offsets[r] + alpha * shape.dim + a;
        let z: Vec<CMatrix> = (0..shape.mult * shape.dim)
            .map(|k| o * y[tensor.offsets[r] + k].transpose())
            .collect();
        for alpha in 0..shape.mult {
            for beta in 0..shape.mult {
                // K_{αβ} = Σ_a conj(Y_{aβ}) O Y_{aα}ᵀ multiplies c_{αβ}
                let mut k = CMatrix::zeros(d, d);
                for a in 0..shape.dim {
                    k += y[col(beta, a)].map(|v| v.conj()) * &z[alpha * shape.dim + a];
                }
                let re = layout.re(r, alpha, beta);
                *out.entry(re).or_insert_with(|| CMatrix::zeros(d, d)) += &k;
                if let Some((idx, s)) = layout.im(r, alpha, beta) {
                    *out.entry(idx).or_insert_with(|| CMatrix::zeros(d, d)) += k * c64(0.0, s);
                }
            }
        }
    }
    out.into_iter().collect()
}

/// Real residual vector of a Hermitian matrix with the Frobenius norm:
/// diagonal entries, then `√2·Re`, `√2·Im` of the strict upper triangle.
fn hermitian_components(d: usize) -> Vec<(usize, usize, bool, f64)> {
    let mut out: Vec<(usize, usize, bool, f64)> = (0..d).map(|a| (a, a, false, 1.0)).collect();
    for a in 0..d {
        for b in a + 1..d {
            out.push((a, b, false, std::f64::consts::SQRT_2));
            out.push((a, b, true, std::f64::consts::SQRT_2));
        }
    }
    out
}

fn residual_rows(blocks: &[(usize, CMatrix)], target: &CMatrix) -> Vec<AffineForm> {
    let d = target.nrows();
    hermitian_components(d)
        .into_iter()
        .map(|(a, b, imag, w)| {
            let pick = |z: C64| if imag { z.im } else { z.re };
            let terms = blocks
                .iter()
                .map(|(k, g)| (*k, w * pick(g[(a, b)])))
                .filter(|&(_, v)| v != 0.0)
                .collect();
            AffineForm::new(terms, -w * pick(target[(a, b)]))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Full,
    Reduced,
}

/// An assembled comb SDP over Hermitian block parameters.
#[derive(Debug, Clone)]
pub struct ReducedProblem {
    pub spec: CombSpec,
    pub kind: ProblemKind,
    /// Observable as given.
    pub observable: CMatrix,
    /// Observable the problem is built for (`E†OE` when the eigenbasis is not folded).
    pub working_observable: CMatrix,
    /// Eigenbasis `E` when the problem works in the eigenframe.
    pub frame: Option<CMatrix>,
    pub tensor: CoefficientTensor,
    pub layout: ParamLayout,
    pub block_labels: Vec<String>,
    pub equalities: Vec<LinearConstraint>,
    pub objective: Vec<Vec<AffineForm>>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct AssembleOptions {
    pub samples: usize,
    pub seed: RngSeed,
    /// Cap on `d^{4t+4}` for unreduced problems.
    pub full_cap: usize,
    /// Print `progress phase=...` lines to stderr.
    pub progress: bool,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        Self { samples: 2000, seed: RngSeed(42), full_cap: DEFAULT_FULL_CAP, progress: false }
    }
}

fn assemble_with(
    spec: CombSpec,
    kind: ProblemKind,
    o: &CMatrix,
    working: CMatrix,
    frame: Option<CMatrix>,
    tensor: CoefficientTensor,
    block_labels: Vec<String>,
    opts: &AssembleOptions,
) -> Result<ReducedProblem> {
    let layout = ParamLayout::new(&tensor.blocks.iter().map(|b| b.mult).collect::<Vec<_>>());
    if opts.progress {
        eprintln!("progress phase=constraints kind={kind:?} blocks={} variables={}", tensor.blocks.len(), layout.total);
    }
    let mut rows = Vec::new();
    for m in spec.marginal_specs() {
        rows.extend(marginal_constraints(&tensor, &layout, m)?);
    }
    let mut equalities = deduplicate(rows);
    // Σ_r dim_r tr c^(r) = d^{t+1}
    let trace_terms: Vec<(usize, f64)> = tensor
        .blocks
        .iter()
        .enumerate()
        .flat_map(|(r, b)| {
            let layout = &layout;
            (0..b.mult).map(move |a| (layout.re(r, a, a), b.dim as f64))
        })
        .collect();
    equalities.push(LinearConstraint { terms: trace_terms, rhs: spec.trace_target() });

    if opts.progress {
        eprintln!("progress phase=sampling constraints={} samples={} seed={}", equalities.len(), opts.samples, opts.seed.0);
    }
    let samples = haar_samples(spec.d, opts.samples, opts.seed);
    let objective: Vec<Vec<AffineForm>> = samples
        .par_iter()
        .map(|u| {
            let uw = match &frame {
                Some(e) => e.adjoint() * u * e,
                None => u.clone(),
            };
            let blocks = objective_blocks(&tensor, &layout, spec.architecture, spec.t, &uw, &working);
            residual_rows(&blocks, &(&uw * &working * uw.adjoint()))
        })
        .collect();
    Ok(ReducedProblem {
        spec,
        kind,
        observable: o.clone(),
        working_observable: working,
        frame,
        tensor,
        layout,
        block_labels,
        equalities,
        objective,
        seed: opts.seed.0,
    })
}

/// Basis data shared by assembly and reconstruction.
pub struct ReductionBasis {
    pub combined: CombinedBasis,
    pub tensor: CoefficientTensor,
}

pub fn reduction_basis(o: &CMatrix, spec: CombSpec) -> Result<ReductionBasis> {
    if o.nrows() != spec.d || o.ncols() != spec.d {
        return Err(Error::Dimension(format!("observable is {}x{}, d = {}", o.nrows(), o.ncols(), spec.d)));
    }
    let combined = combined_schur_basis(o, spec.t)?;
    let perms = default_permutations(spec.t)?;
    let tensor = coefficient_tensor(&combined.basis, perms.for_architecture(spec.architecture))?;
    Ok(ReductionBasis { combined, tensor })
}

pub fn assemble_reduced(o: &CMatrix, spec: CombSpec, opts: &AssembleOptions) -> Result<ReducedProblem> {
    let rb = reduction_basis(o, spec)?;
    let labels = rb.combined.basis.blocks.iter().map(|b| b.label.to_string()).collect();
    let (working, frame) = if rb.combined.folded {
        (o.clone(), None)
    } else {
        (rb.combined.spectrum.diagonal(), Some(rb.combined.spectrum.vectors.clone()))
    };
    assemble_with(spec, ProblemKind::Reduced, o, working, frame, rb.tensor, labels, opts)
}

pub fn assemble_full(o: &CMatrix, spec: CombSpec, opts: &AssembleOptions) -> Result<ReducedProblem> {
    if o.nrows() != spec.d || o.ncols() != spec.d {
        return Err(Error::Dimension(format!("observable is {}x{}, d = {}", o.nrows(), o.ncols(), spec.d)));
    }
    let herm = crate::tensor::hermiticity_error(o);
    if herm > crate::tensor::DEFAULT_TOL {
        return Err(Error::NotHermitian(herm));
    }
    let n = spec.total_dim();
    if n.saturating_mul(n) > opts.full_cap {
        return Err(Error::SizeCap { size: n.saturating_mul(n), cap: opts.full_cap });
    }
    let tensor = CoefficientTensor::identity(spec.d, spec.sites());
    assemble_with(spec, ProblemKind::Full, o, o.clone(), None, tensor, vec!["full".into()], opts)
}

impl ReducedProblem {
    pub fn variable_count(&self) -> usize {
        self.layout.total
    }

    pub fn sample_count(&self) -> usize {
        self.objective.len()
    }

    pub fn to_conic(&self) -> Result<ConicProblem> {
        let variables = (0..self.layout.mults.len())
            .map(|r| VariableBlock {
                name: format!("block{r}"),
                offset: self.layout.offsets[r],
                len: self.layout.mults[r] * self.layout.mults[r],
                kind: VariableKind::Psd { side: 2 * self.layout.mults[r] },
            })
            .collect();
        let spec = EpigraphSpec {
            n_vars: self.layout.total,
            variables,
            linear_objective: vec![],
            equalities: self.equalities.iter().map(|c| AffineForm::new(c.terms.clone(), -c.rhs)).collect(),
            psd: (0..self.layout.mults.len()).map(|r| self.layout.psd_embedding(r)).collect(),
            residuals: self.objective.clone(),
            residual_weight: 1.0 / self.objective.len().max(1) as f64,
        };
        epigraph_formulate(&spec)
    }

    /// Sample-average objective at the given parameters.
    pub fn objective_value(&self, x: &[f64]) -> f64 {
        let total: f64 = self
            .objective
            .iter()
            .map(|rows| rows.iter().map(|f| f.eval(x).powi(2)).sum::<f64>().sqrt())
            .sum();
        total / self.objective.len().max(1) as f64
    }

    /// Largest equality violation at the given parameters.
    pub fn constraint_residual(&self, x: &[f64]) -> f64 {
        self.equalities
            .iter()
            .map(|c| (c.terms.iter().map(|&(k, v)| v * x[k]).sum::<f64>() - c.rhs).abs())
            .fold(0.0, f64::max)
    }

    /// Comb Choi operator (causal order) of a block assignment.
    pub fn reconstruct(&self, blocks: &[CMatrix]) -> Result<CombChoi> {
        reconstruct_choi(&self.tensor, blocks, self.frame.as_ref(), self.spec)
    }

    /// Blocks of the projection of `c` onto the symmetric subspace.
    pub fn extract(&self, c: &CombChoi) -> Result<Vec<CMatrix>> {
        extract_blocks(&self.tensor, c, self.frame.as_ref())
    }

    pub fn to_json(&self) -> Result<String> {
        let (rows, (cols, vals)): (Vec<usize>, (Vec<usize>, Vec<f64>)) = self
            .equalities
            .iter()
            .enumerate()
            .flat_map(|(i, c)| c.terms.iter().map(move |&(k, v)| (i, (k, v))))
            .unzip();
        let file = ReducedFile {
            version: REDUCED_FORMAT_VERSION,
            kind: self.kind,
            d: self.spec.d,
            t: self.spec.t,
            architecture: self.spec.architecture,
            seed: self.seed,
            observable: (&self.observable).into(),
            blocks: (0..self.layout.mults.len())
                .map(|r| BlockRecord {
                    label: self.block_labels.get(r).cloned().unwrap_or_default(),
                    mult: self.tensor.blocks[r].mult,
                    dim: self.tensor.blocks[r].dim,
                    param_offset: self.layout.offsets[r],
                })
                .collect(),
            variable_count: self.layout.total,
            constraints: ConstraintRecord {
                rows,
                cols,
                vals,
                rhs: self.equalities.iter().map(|c| c.rhs).collect(),
            },
            objective: self
                .objective
                .iter()
                .map(|rows| ObjectiveRecord {
                    rows: rows.iter().map(|f| f.terms.clone()).collect(),
                    constants: rows.iter().map(|f| f.constant).collect(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn export(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct BlockRecord {
    label: String,
    mult: usize,
    dim: usize,
    param_offset: usize,
}

#[derive(Serialize, Deserialize)]
struct ConstraintRecord {
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    rhs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ObjectiveRecord {
    rows: Vec<Vec<(usize, f64)>>,
    constants: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ReducedFile {
    version: u32,
    kind: ProblemKind,
    d: usize,
    t: usize,
    architecture: Architecture,
    seed: u64,
    observable: crate::serde_cmatrix::DenseComplex,
    blocks: Vec<BlockRecord>,
    variable_count: usize,
    constraints: ConstraintRecord,
    objective: Vec<ObjectiveRecord>,
}

/// `K = Ē_P ⊗ (E_I ⊗ Ē_O)… ⊗ E_F` in causal order; conjugating by it carries
/// a comb for `E†OE` to one for `O`.
fn frame_operator(e: &CMatrix, spec: CombSpec) -> CMatrix {
    let ebar = e.map(|z| z.conj());
    let mut k = ebar.clone();
    match spec.architecture {
        Architecture::Sequential => {
            for _ in 0..spec.t {
                k = k.kronecker(e).kronecker(&ebar);
            }
        }
        Architecture::Parallel => {
            for _ in 0..spec.t {
                k = k.kronecker(e);
            }
            for _ in 0..spec.t {
                k = k.kronecker(&ebar);
            }
        }
    }
    k.kronecker(e)
}

fn block_operator(tensor: &CoefficientTensor, blocks: &[CMatrix]) -> CMatrix {
    let n = tensor.columns.len();
    let mut b = CMatrix::zeros(n, n);
    for (r, shape) in tensor.blocks.iter().enumerate() {
        for alpha in 0..shape.mult {
            for beta in 0..shape.mult {
                let v = blocks[r][(alpha, beta)];
                for a in 0..shape.dim {
                    b[(tensor.offsets[r] + alpha * shape.dim + a, tensor.offsets[r] + beta * shape.dim + a)] = v;
                }
            }
        }
    }
    b
}

/// `C = Σ_r Σ_{αβ} c^(r)_{αβ} Σ_a |p_{r,a,α}⟩⟨p_{r,a,β}|`, carried to the observable's frame.
pub fn reconstruct_choi(
    tensor: &CoefficientTensor,
    blocks: &[CMatrix],
    frame: Option<&CMatrix>,
    spec: CombSpec,
) -> Result<CombChoi> {
    if blocks.len() != tensor.blocks.len()
        || blocks.iter().zip(&tensor.blocks).any(|(c, s)| c.nrows() != s.mult || c.ncols() != s.mult)
    {
        return Err(Error::Dimension("block sizes do not match the basis".into()));
    }
    let q = tensor.dense().map(|v| c64(v, 0.0));
    let mut c = &q * block_operator(tensor, blocks) * q.transpose();
    if let Some(e) = frame {
        let k = frame_operator(e, spec);
        c = &k * c * k.adjoint();
    }
    CombChoi::new(spec, c)
}

/// `c^(r)_{αβ} = (1/dim_r) Σ_a ⟨p_{r,a,α}|C|p_{r,a,β}⟩`.
pub fn extract_blocks(tensor: &CoefficientTensor, c: &CombChoi, frame: Option<&CMatrix>) -> Result<Vec<CMatrix>> {
    let n = tensor.total_dim();
    if c.op.matrix.nrows() != n {
        return Err(Error::Dimension(format!("comb of dimension {} for a basis of {n}", c.op.matrix.nrows())));
    }
    let m = match frame {
        Some(e) => {
            let k = frame_operator(e, c.spec);
            k.adjoint() * &c.op.matrix * k
        }
        None => c.op.matrix.clone(),
    };
    let q = tensor.dense().map(|v| c64(v, 0.0));
    let g = q.transpose() * m * &q;
    Ok(tensor
        .blocks
        .iter()
        .enumerate()
        .map(|(r, s)| {
            CMatrix::from_fn(s.mult, s.mult, |alpha, beta| {
                let mut acc = c64(0.0, 0.0);
                for a in 0..s.dim {
                    acc += g[(tensor.offsets[r] + alpha * s.dim + a, tensor.offsets[r] + beta * s.dim + a)];
                }
                acc / s.dim as f64
            })
        })
        .collect())
}

/// Orthogonal projection of `c` onto the commutant of the comb's symmetry group.
pub fn symmetrize(problem: &ReducedProblem, c: &CombChoi) -> Result<CombChoi> {
    problem.reconstruct(&problem.extract(c)?)
}

/// Solution of an assembled problem.
#[derive(Debug, Clone)]
pub struct ReducedSolution {
    pub result: SolveResult,
    pub blocks: Vec<CMatrix>,
    pub comb: CombChoi,
}

pub fn solve_problem(problem: &ReducedProblem, settings: &SolverSettings) -> Result<ReducedSolution> {
    let conic = problem.to_conic()?;
    let result = solve(&conic, settings)?;
    let blocks = problem.layout.blocks_from_params(&result.x[..problem.layout.total]);
    let comb = problem.reconstruct(&blocks)?;
    Ok(ReducedSolution { result, blocks, comb })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comb::{apply_comb, dual_on_observable, random_comb, symmetry_operator, Observable};
    use crate::rep::sample_centralizer;
    use crate::tensor::{haar_unitary, max_abs_diff, pauli_z};

    fn spec(t: usize, a: Architecture) -> CombSpec {
        CombSpec::new(2, t, a).unwrap()
    }

    #[test]
    fn permutations_match_tables() {
        let p = default_permutations(1).unwrap();
        assert_eq!(p.pi, vec![0, 2, 1, 3]);
        assert_eq!(p.sigma, vec![0, 2, 1, 3]);
        let p = default_permutations(2).unwrap();
        assert_eq!(p.pi, vec![0, 3, 1, 4, 2, 5]);
        assert_eq!(p.sigma, vec![0, 3, 4, 1, 2, 5]);
    }

    #[test]
    fn tensor_reproduces_basis() {
        let rb = reduction_basis(&pauli_z(), spec(1, Architecture::Sequential)).unwrap();
        let perm = default_permutations(1).unwrap().pi;
        let p = permutation_operator_real(&perm, 2);
        let dense = rb.tensor.dense();
        assert!((&p.transpose() * &rb.combined.basis.q - &dense).amax() < 1e-12);
        let nnz = rb.combined.basis.q.iter().filter(|v| v.abs() > SUPPORT_TOL).count();
        assert_eq!(nnz, rb.tensor.nnz());
    }

    fn permutation_operator_real(perm: &[usize], d: usize) -> DMatrix<f64> {
        crate::tensor::permutation_operator(perm, &vec![d; perm.len()]).unwrap().map(|z| z.re)
    }

    #[test]
    fn variable_count_matches_formula() {
        let o = pauli_z();
        let p = assemble_reduced(&o, spec(1, Architecture::Sequential), &AssembleOptions { samples: 1, ..Default::default() })
            .unwrap();
        assert_eq!(p.variable_count(), 8);
    }

    #[test]
    fn reconstruction_round_trip_and_constraints() {
        let mut rng = RngSeed(3).rng();
        for arch in [Architecture::Sequential, Architecture::Parallel] {
            let s = spec(1, arch);
            let p = assemble_reduced(&pauli_z(), s, &AssembleOptions { samples: 4, ..Default::default() }).unwrap();
            let c = random_comb(s, 2, &mut rng).unwrap();
            let sym = symmetrize(&p, &c).unwrap();
            // symmetrization keeps the comb valid
            assert!(sym.validate(1e-9).unwrap().valid);
            // and lands in the commutant
            let spectrum = crate::rep::centralizer_decomposition(&pauli_z()).unwrap();
            for _ in 0..5 {
                let u = haar_unitary(2, &mut rng);
                let v = sample_centralizer(&spectrum, &mut rng);
                let w = sample_centralizer(&spectrum, &mut rng);
                let g = symmetry_operator(&s, &u, &v, &w);
                assert!(max_abs_diff(&(&g * &sym.op.matrix), &(&sym.op.matrix * &g)) < 1e-9);
            }
            let blocks = p.extract(&sym).unwrap();
            let back = p.reconstruct(&blocks).unwrap();
            assert!(max_abs_diff(&back.op.matrix, &sym.op.matrix) < 1e-9);
            let x = p.layout.params_from_blocks(&blocks);
            assert!(p.constraint_residual(&x) < 1e-9, "{arch}: {}", p.constraint_residual(&x));
        }
    }

    #[test]
    fn objective_blocks_match_comb_oracle() {
        let mut rng = RngSeed(11).rng();
        for arch in [Architecture::Sequential, Architecture::Parallel] {
            let s = spec(1, arch);
            let o = Observable::pauli_z();
            let p = assemble_reduced(&o.matrix, s, &AssembleOptions { samples: 1, ..Default::default() }).unwrap();
            let c = symmetrize(&p, &random_comb(s, 2, &mut rng).unwrap()).unwrap();
            let x = p.layout.params_from_blocks(&p.extract(&c).unwrap());
            for _ in 0..10 {
                let u = haar_unitary(2, &mut rng);
                let blocks = objective_blocks(&p.tensor, &p.layout, arch, 1, &u, &o.matrix);
                let mut s_val = CMatrix::zeros(2, 2);
                for (k, g) in &blocks {
                    s_val += g * c64(x[*k], 0.0);
                }
                let oracle = dual_on_observable(&apply_comb(&c, &u).unwrap().matrix, 2, &o.matrix);
                assert!(max_abs_diff(&s_val, &oracle) < 1e-9);
            }
        }
    }

    #[test]
    fn full_space_cap() {
        let s = spec(3, Architecture::Sequential);
        let err = assemble_full(&pauli_z(), s, &AssembleOptions { samples: 1, ..Default::default() }).unwrap_err();
        assert!(matches!(err, Error::SizeCap { .. }));
    }

    #[test]
    fn complex_eigenbasis_round_trip() {
        let y = crate::tensor::pauli_y();
        let s = spec(1, Architecture::Sequential);
        let p = assemble_reduced(&y, s, &AssembleOptions { samples: 3, ..Default::default() }).unwrap();
        assert!(p.frame.is_some());
        let mut rng = RngSeed(5).rng();
        let c = symmetrize(&p, &random_comb(s, 2, &mut rng).unwrap()).unwrap();
        assert!(c.validate(1e-9).unwrap().valid);
        let x = p.layout.params_from_blocks(&p.extract(&c).unwrap());
        let samples = haar_samples(2, 3, RngSeed(42));
        let direct = crate::comb::objective_on_samples(&c, &Observable::new(y).unwrap(), &samples).unwrap();
        assert!((p.objective_value(&x) - direct).abs() < 1e-9);
    }
}
