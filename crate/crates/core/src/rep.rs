//! Young diagrams, tableaux and Schur bases.
//!
//! Schur bases are built from Young symmetrizers followed by Gram–Schmidt.
//! Columns are ordered block by block, then by multiplicity index `α`, then
//! by dimension index `a`, so that inside a block the representation acts as
//! `ρ_r ⊗ I_{m_r}` with copies laid out contiguously.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{c64, haar_unitary, CMatrix};

/// Candidate vectors shorter than this after projection are discarded.
pub const GS_DROP_TOL: f64 = 1e-10;
/// Relative tolerance when merging eigenvalues into one eigenspace.
pub const EIGEN_MERGE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Partition(pub Vec<usize>);

impl Partition {
    pub fn new(parts: Vec<usize>) -> Result<Self> {
        if parts.contains(&0) || parts.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidArgument(format!(
                "{parts:?} is not a weakly decreasing list of positive integers"
            )));
        }
        Ok(Self(parts))
    }

    pub fn parts(&self) -> &[usize] {
        &self.0
    }

    pub fn n(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn rows(&self) -> usize {
        self.0.len()
    }

    /// Length of column `j` (0-based).
    pub fn column_len(&self, j: usize) -> usize {
        self.0.iter().filter(|&&p| p > j).count()
    }
}

impl std::fmt::Display for Partition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s: Vec<String> = self.0.iter().map(|p| p.to_string()).collect();
        write!(f, "({})", s.join(","))
    }
}

/// All partitions of `n` with at most `max_rows` parts, lexicographically descending.
pub fn partitions(n: usize, max_rows: usize) -> Vec<Partition> {
    fn rec(rem: usize, max_part: usize, rows_left: usize, cur: &mut Vec<usize>, out: &mut Vec<Partition>) {
        if rem == 0 {
            out.push(Partition(cur.clone()));
            return;
        }
        if rows_left == 0 {
            return;
        }
        for p in (1..=rem.min(max_part)).rev() {
            cur.push(p);
            rec(rem - p, p, rows_left - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, n, max_rows, &mut Vec::new(), &mut out);
    out
}

pub fn factorial(n: usize) -> u128 {
    (1..=n as u128).product()
}

/// Product of all hook numbers of the diagram.
pub fn hook_length(lambda: &Partition) -> u128 {
    let mut h = 1u128;
    for (i, &row) in lambda.0.iter().enumerate() {
        for j in 0..row {
            let arm = row - j - 1;
            let leg = lambda.column_len(j) - i - 1;
            h *= (arm + leg + 1) as u128;
        }
    }
    h
}

/// Number of standard tableaux, `n!/H_λ` (the symmetric-group irrep dimension).
pub fn count_syt(lambda: &Partition) -> u128 {
    factorial(lambda.n()) / hook_length(lambda)
}

/// Number of semistandard tableaux with entries in `1..=d`, `∏(d+j−i)/H_λ`
/// (the unitary-group irrep dimension).
pub fn count_ssyt(lambda: &Partition, d: usize) -> u128 {
    let mut num: i128 = 1;
    for (i, &row) in lambda.0.iter().enumerate() {
        for j in 0..row {
            num *= d as i128 + j as i128 - i as i128;
        }
    }
    if num <= 0 {
        return 0;
    }
    num as u128 / hook_length(lambda)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TableauKind {
    Standard,
    Semistandard { d: usize },
}

/// Filled Young diagram; entries are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tableau {
    pub shape: Partition,
    pub rows: Vec<Vec<usize>>,
    pub kind: TableauKind,
}

impl Tableau {
    /// Entries in row-reading order.
    pub fn reading(&self) -> Vec<usize> {
        self.rows.iter().flatten().copied().collect()
    }

    pub fn columns(&self) -> Vec<Vec<usize>> {
        let width = self.shape.0.first().copied().unwrap_or(0);
        (0..width)
            .map(|j| self.rows.iter().filter(|r| r.len() > j).map(|r| r[j]).collect())
            .collect()
    }

    pub fn is_valid(&self) -> bool {
        let shape_ok = self.rows.len() == self.shape.rows()
            && self.rows.iter().zip(&self.shape.0).all(|(r, &p)| r.len() == p);
        if !shape_ok {
            return false;
        }
        let rows_ok = |strict: bool| {
            self.rows
                .iter()
                .all(|r| r.windows(2).all(|w| if strict { w[0] < w[1] } else { w[0] <= w[1] }))
        };
        let cols_ok = self.columns().iter().all(|c| c.windows(2).all(|w| w[0] < w[1]));
        match self.kind {
            TableauKind::Standard => {
                let mut e = self.reading();
                e.sort_unstable();
                e.iter().enumerate().all(|(i, &x)| x == i + 1) && rows_ok(true) && cols_ok
            }
            TableauKind::Semistandard { d } => {
                self.reading().iter().all(|&x| x >= 1 && x <= d) && rows_ok(false) && cols_ok
            }
        }
    }
}

/// Standard tableaux of shape `λ`; the first one is the row-reading tableau.
pub fn enumerate_syt(lambda: &Partition) -> Vec<Tableau> {
    fn rec(k: usize, n: usize, lambda: &Partition, rows: &mut Vec<Vec<usize>>, out: &mut Vec<Tableau>) {
        if k > n {
            out.push(Tableau { shape: lambda.clone(), rows: rows.clone(), kind: TableauKind::Standard });
            return;
        }
        for i in 0..lambda.rows() {
            let len = rows[i].len();
            if len < lambda.0[i] && (i == 0 || rows[i - 1].len() > len) {
                rows[i].push(k);
                rec(k + 1, n, lambda, rows, out);
                rows[i].pop();
            }
        }
    }
    let mut out = Vec::new();
    let mut rows = vec![Vec::new(); lambda.rows()];
    rec(1, lambda.n(), lambda, &mut rows, &mut out);
    out
}

/// Semistandard tableaux of shape `λ` with entries in `1..=d`, lexicographic in row-reading order.
pub fn enumerate_ssyt(lambda: &Partition, d: usize) -> Vec<Tableau> {
    let boxes: Vec<(usize, usize)> = lambda
        .0
        .iter()
        .enumerate()
        .flat_map(|(i, &r)| (0..r).map(move |j| (i, j)))
        .collect();
    fn rec(
        b: usize,
        boxes: &[(usize, usize)],
        d: usize,
        lambda: &Partition,
        rows: &mut Vec<Vec<usize>>,
        out: &mut Vec<Tableau>,
    ) {
        if b == boxes.len() {
            out.push(Tableau {
                shape: lambda.clone(),
                rows: rows.clone(),
                kind: TableauKind::Semistandard { d },
            });
            return;
        }
        let (i, j) = boxes[b];
        let lo_row = if j > 0 { rows[i][j - 1] } else { 1 };
        let lo_col = if i > 0 { rows[i - 1][j] + 1 } else { 1 };
        for v in lo_row.max(lo_col)..=d {
            rows[i].push(v);
            rec(b + 1, boxes, d, lambda, rows, out);
            rows[i].pop();
        }
    }
    let mut out = Vec::new();
    let mut rows = vec![Vec::new(); lambda.rows()];
    rec(0, &boxes, d, lambda, &mut rows, &mut out);
    out
}

/// All permutations of `0..n` in lexicographic order.
pub fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

fn permutation_sign(perm: &[usize]) -> f64 {
    let mut seen = vec![false; perm.len()];
    let mut sign = 1.0;
    for s in 0..perm.len() {
        if seen[s] {
            continue;
        }
        let mut len = 0;
        let mut k = s;
        while !seen[k] {
            seen[k] = true;
            k = perm[k];
            len += 1;
        }
        if len % 2 == 0 {
            sign = -sign;
        }
    }
    sign
}

/// Permutations of `0..n` that map each set in `groups` to itself.
fn set_stabilizer(groups: &[Vec<usize>], n: usize) -> Vec<Vec<usize>> {
    let mut out = vec![(0..n).collect::<Vec<_>>()];
    for g in groups {
        let local = all_permutations(g.len());
        let mut next = Vec::with_capacity(out.len() * local.len());
        for base in &out {
            for lp in &local {
                let mut p = base.clone();
                for (k, &site) in g.iter().enumerate() {
                    p[site] = g[lp[k]];
                }
                next.push(p);
            }
        }
        out = next;
    }
    out
}

/// Apply the site permutation `perm` (factor at `k` moves to `perm[k]`) to a
/// vector on `(C^d)^{⊗n}`.
pub fn permute_sites(v: &[f64], perm: &[usize], d: usize) -> Vec<f64> {
    let n = perm.len();
    let mut stride = vec![1usize; n];
    for k in (0..n.saturating_sub(1)).rev() {
        stride[k] = stride[k + 1] * d;
    }
    let mut out = vec![0.0; v.len()];
    let mut idx = vec![0usize; n];
    for &x in v.iter() {
        if x != 0.0 {
            let dst: usize = (0..n).map(|k| idx[k] * stride[perm[k]]).sum();
            out[dst] = x;
        }
        for k in (0..n).rev() {
            idx[k] += 1;
            if idx[k] < d {
                break;
            }
            idx[k] = 0;
        }
    }
    out
}

/// Row symmetrizer and column antisymmetrizer of a standard tableau, each
/// as a list of (weight, site permutation).
fn symmetrizer_terms(tab: &Tableau) -> (Vec<(f64, Vec<usize>)>, Vec<(f64, Vec<usize>)>) {
    let n = tab.shape.n();
    let rows: Vec<Vec<usize>> = tab.rows.iter().map(|r| r.iter().map(|x| x - 1).collect()).collect();
    let cols: Vec<Vec<usize>> = tab.columns().iter().map(|c| c.iter().map(|x| x - 1).collect()).collect();
    let rnorm: u128 = rows.iter().map(|r| factorial(r.len())).product();
    let cnorm: u128 = cols.iter().map(|c| factorial(c.len())).product();
    let r = set_stabilizer(&rows, n).into_iter().map(|p| (1.0 / rnorm as f64, p)).collect();
    let c = set_stabilizer(&cols, n)
        .into_iter()
        .map(|p| (permutation_sign(&p) / cnorm as f64, p))
        .collect();
    (r, c)
}

fn apply_terms(terms: &[(f64, Vec<usize>)], v: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for (w, p) in terms {
        for (o, x) in out.iter_mut().zip(permute_sites(v, p, d)) {
            *o += w * x;
        }
    }
    out
}

/// `P_θ v = R_θ C_θ v` for a standard tableau θ acting on `(C^d)^{⊗n}`.
pub fn young_apply(tab: &Tableau, d: usize, v: &[f64]) -> Vec<f64> {
    let (r, c) = symmetrizer_terms(tab);
    apply_terms(&r, &apply_terms(&c, v, d), d)
}

/// Young symmetrizer `P_θ = R_θ C_θ`, each factor normalized by the product of
/// factorials of its row (column) lengths.
pub fn young_symmetrizer(tab: &Tableau, d: usize) -> Result<CMatrix> {
    if tab.kind != TableauKind::Standard || !tab.is_valid() {
        return Err(Error::InvalidArgument("young_symmetrizer needs a standard tableau".into()));
    }
    let n = tab.shape.n();
    let dim = d.pow(n as u32);
    let (r, c) = symmetrizer_terms(tab);
    let mut m = CMatrix::zeros(dim, dim);
    for j in 0..dim {
        let mut e = vec![0.0; dim];
        e[j] = 1.0;
        let col = apply_terms(&r, &apply_terms(&c, &e, d), d);
        for (i, x) in col.into_iter().enumerate() {
            m[(i, j)] = c64(x, 0.0);
        }
    }
    Ok(m)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Orthogonalize `v` against `basis` (two passes); returns the remainder and
/// the projection coefficients.
fn orthogonalize(v: &[f64], basis: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let mut w = v.to_vec();
    let mut coef = vec![0.0; basis.len()];
    for _ in 0..2 {
        for (k, b) in basis.iter().enumerate() {
            let c = dot(&w, b);
            coef[k] += c;
            for (x, y) in w.iter_mut().zip(b) {
                *x -= c * y;
            }
        }
    }
    (w, coef)
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Label of an irreducible block.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IrrepLabel {
    /// Partition for the `U^{⊗n}` factor.
    pub lambda: Partition,
    /// Centralizer-power factor, when present.
    pub v: Option<VLabel>,
    /// Eigenspace index of the single centralizer copy, when present.
    pub w: Option<usize>,
}

/// Irrep of `C_O` inside `V^{⊗t}`: how many sites sit in each eigenspace and the
/// per-eigenspace partitions.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VLabel {
    pub composition: Vec<usize>,
    pub partitions: Vec<Partition>,
}

impl std::fmt::Display for IrrepLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.lambda)?;
        if let Some(v) = &self.v {
            let ps: Vec<String> = v.partitions.iter().map(|p| p.to_string()).collect();
            write!(f, "|k={:?}:{}", v.composition, ps.join(""))?;
        }
        if let Some(w) = self.w {
            write!(f, "|w={w}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub label: IrrepLabel,
    /// Irrep dimension `dim V_r`.
    pub dim: usize,
    /// Multiplicity `m_r`.
    pub mult: usize,
    /// First column of the block in `Q`.
    pub offset: usize,
}

impl BlockInfo {
    /// Column of `(α, a)` inside `Q`.
    pub fn column(&self, alpha: usize, a: usize) -> usize {
        self.offset + alpha * self.dim + a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnIndex {
    pub block: usize,
    pub a: usize,
    pub alpha: usize,
}

/// Real orthogonal change of basis with its block table.
#[derive(Debug, Clone, PartialEq)]
pub struct SchurBasis {
    /// Site dimensions of the underlying tensor space.
    pub dims: Vec<usize>,
    pub q: DMatrix<f64>,
    pub blocks: Vec<BlockInfo>,
}

impl SchurBasis {
    fn from_blocks(dims: Vec<usize>, blocks: Vec<(IrrepLabel, usize, usize, Vec<Vec<f64>>)>) -> Result<Self> {
        let total: usize = dims.iter().product();
        let mut q = DMatrix::zeros(total, total);
        let mut infos = Vec::with_capacity(blocks.len());
        let mut col = 0;
        for (label, dim, mult, cols) in blocks {
            if cols.len() != dim * mult {
                return Err(Error::Basis(format!(
                    "block {label} has {} columns, expected {dim}×{mult}",
                    cols.len()
                )));
            }
            infos.push(BlockInfo { label, dim, mult, offset: col });
            for v in cols {
                q.set_column(col, &nalgebra::DVector::from_vec(v));
                col += 1;
            }
        }
        if col != total {
            return Err(Error::Basis(format!("{col} columns for a space of dimension {total}")));
        }
        Ok(Self { dims, q, blocks: infos })
    }

    pub fn total_dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn q_complex(&self) -> CMatrix {
        self.q.map(|x| c64(x, 0.0))
    }

    pub fn columns(&self) -> Vec<ColumnIndex> {
        let mut out = Vec::with_capacity(self.total_dim());
        for (b, info) in self.blocks.iter().enumerate() {
            for alpha in 0..info.mult {
                for a in 0..info.dim {
                    out.push(ColumnIndex { block: b, a, alpha });
                }
            }
        }
        out
    }

    /// `Σ_r m_r²`, the number of real parameters of a Hermitian commutant element.
    pub fn parameter_count(&self) -> usize {
        self.blocks.iter().map(|b| b.mult * b.mult).sum()
    }

    pub fn orthogonality_error(&self) -> f64 {
        let g = self.q.transpose() * &self.q;
        (g - DMatrix::<f64>::identity(self.total_dim(), self.total_dim())).amax()
    }

    /// Largest entry of `Q† ρ Q` outside the `(block, α)` diagonal blocks.
    pub fn off_block_residual(&self, rep: &CMatrix) -> f64 {
        let qc = self.q_complex();
        let m = qc.transpose() * rep * &qc;
        let cols = self.columns();
        let mut worst: f64 = 0.0;
        for (i, ci) in cols.iter().enumerate() {
            for (j, cj) in cols.iter().enumerate() {
                if ci.block != cj.block || ci.alpha != cj.alpha {
                    worst = worst.max(m[(i, j)].norm());
                }
            }
        }
        worst
    }

    /// Largest difference between the repeated copies of each block of `Q† ρ Q`.
    pub fn repetition_residual(&self, rep: &CMatrix) -> f64 {
        let qc = self.q_complex();
        let m = qc.transpose() * rep * &qc;
        let mut worst: f64 = 0.0;
        for b in &self.blocks {
            for alpha in 1..b.mult {
                for a in 0..b.dim {
                    for a2 in 0..b.dim {
                        let x = m[(b.column(0, a), b.column(0, a2))];
                        let y = m[(b.column(alpha, a), b.column(alpha, a2))];
                        worst = worst.max((x - y).norm());
                    }
                }
            }
        }
        worst
    }

    pub fn imaginary_part_max(&self) -> f64 {
        // Q is stored real by construction.
        0.0
    }

    pub fn to_json(&self) -> Result<String> {
        let file = SchurBasisFile {
            version: 1,
            dims: self.dims.clone(),
            blocks: self.blocks.clone(),
            columns: self.columns(),
            q: self.q.transpose().as_slice().to_vec(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: SchurBasisFile = serde_json::from_str(s)?;
        if f.version != 1 {
            return Err(Error::FormatVersion(f.version));
        }
        let n: usize = f.dims.iter().product();
        if f.q.len() != n * n {
            return Err(Error::Dimension(format!("{} entries for a {n}x{n} basis", f.q.len())));
        }
        Ok(Self { dims: f.dims, q: DMatrix::from_row_slice(n, n, &f.q), blocks: f.blocks })
    }
}

#[derive(Serialize, Deserialize)]
struct SchurBasisFile {
    version: u32,
    dims: Vec<usize>,
    blocks: Vec<BlockInfo>,
    columns: Vec<ColumnIndex>,
    /// Row-major entries of Q.
    q: Vec<f64>,
}

/// Per-partition Schur data for `U(d)^{⊗n}`: `vectors[α][a]` is the
/// `a`-th dimension vector of copy `α`.
struct IsotypicComponent {
    lambda: Partition,
    vectors: Vec<Vec<Vec<f64>>>,
}

fn unitary_group_components(d: usize, n: usize) -> Result<Vec<IsotypicComponent>> {
    let dim = d.pow(n as u32);
    let mut out = Vec::new();
    for lambda in partitions(n, d) {
        if n == 0 {
            out.push(IsotypicComponent { lambda, vectors: vec![vec![vec![1.0]]] });
            continue;
        }
        let theta = enumerate_syt(&lambda).remove(0);
        let n_dim = count_ssyt(&lambda, d) as usize;
        let n_mult = count_syt(&lambda) as usize;
        // site k holds the value of T in the box where θ has k+1
        let mut box_of = vec![(0, 0); n];
        for (i, row) in theta.rows.iter().enumerate() {
            for (j, &x) in row.iter().enumerate() {
                box_of[x - 1] = (i, j);
            }
        }
        let mut stride = vec![1usize; n];
        for k in (0..n - 1).rev() {
            stride[k] = stride[k + 1] * d;
        }
        let candidates = enumerate_ssyt(&lambda, d).into_iter().map(|t| {
            (0..n).map(|k| (t.rows[box_of[k].0][box_of[k].1] - 1) * stride[k]).sum::<usize>()
        });
        let mut us: Vec<Vec<f64>> = Vec::new();
        for idx in candidates.chain(0..dim) {
            if us.len() == n_dim {
                break;
            }
            let mut e = vec![0.0; dim];
            e[idx] = 1.0;
            let (w, _) = orthogonalize(&young_apply(&theta, d, &e), &us);
            let nw = norm(&w);
            if nw > GS_DROP_TOL {
                us.push(w.into_iter().map(|x| x / nw).collect());
            }
        }
        if us.len() != n_dim {
            return Err(Error::Basis(format!(
                "shape {lambda}, d={d}: found {} vectors, expected {n_dim}",
                us.len()
            )));
        }

        // copies: orthonormalize the S_n orbit of u_1, tracking coefficients
        let perms = all_permutations(n);
        let mut fs: Vec<Vec<f64>> = Vec::new();
        let mut combos: Vec<Vec<(usize, f64)>> = Vec::new();
        for (pi, p) in perms.iter().enumerate() {
            if fs.len() == n_mult {
                break;
            }
            let w0 = permute_sites(&us[0], p, d);
            let (w, coef) = orthogonalize(&w0, &fs);
            let nw = norm(&w);
            if nw > GS_DROP_TOL {
                // w = w0 − Σ_k coef_k f_k, with f_k = Σ combos[k]
                let mut combo: BTreeMap<usize, f64> = BTreeMap::new();
                combo.insert(pi, 1.0);
                for (k, c) in coef.iter().enumerate() {
                    for &(q, x) in &combos[k] {
                        *combo.entry(q).or_insert(0.0) -= c * x;
                    }
                }
                combos.push(combo.into_iter().map(|(q, x)| (q, x / nw)).collect());
                fs.push(w.into_iter().map(|x| x / nw).collect());
            }
        }
        if fs.len() != n_mult {
            return Err(Error::Basis(format!(
                "shape {lambda}, d={d}: found {} copies, expected {n_mult}",
                fs.len()
            )));
        }
        let mut vectors = Vec::with_capacity(n_mult);
        for combo in &combos {
            let mut copy = Vec::with_capacity(n_dim);
            for u in &us {
                let mut v = vec![0.0; dim];
                for &(pi, x) in combo {
                    for (o, y) in v.iter_mut().zip(permute_sites(u, &perms[pi], d)) {
                        *o += x * y;
                    }
                }
                copy.push(v);
            }
            vectors.push(copy);
        }
        out.push(IsotypicComponent { lambda, vectors });
    }
    Ok(out)
}

/// Schur basis of `(C^d)^{⊗n}` for the action `U ↦ U^{⊗n}`: blocks by
/// partition (lexicographically descending), `m_λ = #SYT`, `dim = #SSYT`.
pub fn schur_basis_unitary_group(d: usize, n: usize) -> Result<SchurBasis> {
    if d == 0 {
        return Err(Error::InvalidArgument("d must be positive".into()));
    }
    let blocks = unitary_group_components(d, n)?
        .into_iter()
        .map(|c| {
            let mult = c.vectors.len();
            let dim = c.vectors[0].len();
            let label = IrrepLabel { lambda: c.lambda, v: None, w: None };
            (label, dim, mult, c.vectors.into_iter().flatten().collect())
        })
        .collect();
    SchurBasis::from_blocks(vec![d; n], blocks)
}

/// Distinct eigenvalues of a Hermitian observable with their eigenspaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralDecomposition {
    /// Distinct eigenvalues, strictly ascending.
    pub eigenvalues: Vec<f64>,
    /// Eigenspace dimensions `l_j`.
    pub multiplicities: Vec<usize>,
    /// Unitary whose columns are eigenvectors grouped by eigenspace.
    #[serde(with = "crate::serde_cmatrix")]
    pub vectors: CMatrix,
}

impl SpectralDecomposition {
    pub fn dim(&self) -> usize {
        self.multiplicities.iter().sum()
    }

    pub fn block_count(&self) -> usize {
        self.multiplicities.len()
    }

    pub fn offsets(&self) -> Vec<usize> {
        self.multiplicities
            .iter()
            .scan(0, |acc, &l| {
                let o = *acc;
                *acc += l;
                Some(o)
            })
            .collect()
    }

    /// `Σ = diag(λ_1 … λ_1, λ_2 …)` in the eigenbasis frame.
    pub fn diagonal(&self) -> CMatrix {
        let vals: Vec<f64> = self
            .eigenvalues
            .iter()
            .zip(&self.multiplicities)
            .flat_map(|(&e, &l)| std::iter::repeat_n(e, l))
            .collect();
        crate::tensor::diag_real(&vals)
    }

    pub fn reconstruct(&self) -> CMatrix {
        &self.vectors * self.diagonal() * self.vectors.adjoint()
    }

    /// True when the eigenvector matrix is real (the frame can be folded into a real basis).
    pub fn is_real(&self) -> bool {
        self.vectors.iter().all(|z| z.im.abs() <= 1e-14)
    }
}

fn group_eigenvalues(vals: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let scale = vals.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut distinct: Vec<f64> = Vec::new();
    let mut mult: Vec<usize> = Vec::new();
    let mut sum = 0.0;
    for &v in vals {
        match distinct.last() {
            Some(&last) if (v - last).abs() <= EIGEN_MERGE_TOL * scale => {
                *mult.last_mut().unwrap() += 1;
                sum += v;
                let m = *mult.last().unwrap() as f64;
                *distinct.last_mut().unwrap() = sum / m;
            }
            _ => {
                distinct.push(v);
                mult.push(1);
                sum = v;
            }
        }
    }
    (distinct, mult)
}

/// Spectral decomposition of a Hermitian observable. Diagonal inputs use a
/// permutation frame and real symmetric inputs a real orthogonal frame.
pub fn centralizer_decomposition(o: &CMatrix) -> Result<SpectralDecomposition> {
    let herm = crate::tensor::hermiticity_error(o);
    if herm > crate::tensor::DEFAULT_TOL {
        return Err(Error::NotHermitian(herm));
    }
    let d = o.nrows();
    let off_diag = (0..d)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .filter(|(i, j)| i != j)
        .fold(0.0f64, |m, (i, j)| m.max(o[(i, j)].norm()));
    let real = o.iter().all(|z| z.im.abs() <= 1e-14);
    let (vals, vectors): (Vec<f64>, CMatrix) = if off_diag <= 1e-14 {
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&i, &j| o[(i, i)].re.total_cmp(&o[(j, j)].re));
        let mut e = CMatrix::zeros(d, d);
        for (k, &i) in order.iter().enumerate() {
            e[(i, k)] = c64(1.0, 0.0);
        }
        (order.iter().map(|&i| o[(i, i)].re).collect(), e)
    } else if real {
        let re = o.map(|z| z.re);
        let re = (&re + re.transpose()) * 0.5;
        let eig = re.symmetric_eigen();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let mut e = CMatrix::zeros(d, d);
        for (k, &i) in order.iter().enumerate() {
            for r in 0..d {
                e[(r, k)] = c64(eig.eigenvectors[(r, i)], 0.0);
            }
        }
        (order.iter().map(|&i| eig.eigenvalues[i]).collect(), e)
    } else {
        let (v, e) = crate::tensor::hermitian_eigen(o);
        (v, e)
    };
    let (eigenvalues, multiplicities) = group_eigenvalues(&vals);
    Ok(SpectralDecomposition { eigenvalues, multiplicities, vectors })
}

/// Haar-random element of the centralizer of the observable: independent Haar
/// unitaries on each eigenspace, conjugated back by the eigenbasis.
pub fn sample_centralizer<R: Rng + ?Sized>(spec: &SpectralDecomposition, rng: &mut R) -> CMatrix {
    let d = spec.dim();
    let mut block = CMatrix::zeros(d, d);
    for (&o, &l) in spec.offsets().iter().zip(&spec.multiplicities) {
        let u = haar_unitary(l, rng);
        block.view_mut((o, o), (l, l)).copy_from(&u);
    }
    &spec.vectors * block * spec.vectors.adjoint()
}

/// All compositions of `t` into `m` non-negative parts, lexicographically descending.
pub fn compositions(t: usize, m: usize) -> Vec<Vec<usize>> {
    fn rec(rem: usize, parts_left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts_left == 1 {
            cur.push(rem);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for k in (0..=rem).rev() {
            cur.push(k);
            rec(rem - k, parts_left - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if m > 0 {
        rec(t, m, &mut Vec::new(), &mut out);
    }
    out
}

/// Sequences in `0..m` of length `Σk` with `k_r` occurrences of `r`, lexicographic.
fn assignments(k: &[usize]) -> Vec<Vec<usize>> {
    fn rec(left: &mut Vec<usize>, cur: &mut Vec<usize>, n: usize, out: &mut Vec<Vec<usize>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for r in 0..left.len() {
            if left[r] > 0 {
                left[r] -= 1;
                cur.push(r);
                rec(left, cur, n, out);
                cur.pop();
                left[r] += 1;
            }
        }
    }
    let n = k.iter().sum();
    let mut out = Vec::new();
    rec(&mut k.to_vec(), &mut Vec::new(), n, &mut out);
    out
}

fn kron_real(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for &x in a {
        for &y in b {
            out.push(x * y);
        }
    }
    out
}

/// Mixed-radix index, first digit most significant.
fn mixed_index(digits: &[usize], radix: &[usize]) -> usize {
    digits.iter().zip(radix).fold(0, |acc, (&x, &r)| acc * r + x)
}

fn mixed_digits(mut idx: usize, radix: &[usize]) -> Vec<usize> {
    let mut out = vec![0; radix.len()];
    for k in (0..radix.len()).rev() {
        out[k] = idx % radix[k];
        idx /= radix[k];
    }
    out
}

/// Embed a vector on `(C^l)^{⊗k}` into `(C^d)^{⊗k}` via `i ↦ offset + i` on every site.
fn embed_block(v: &[f64], l: usize, k: usize, offset: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d.pow(k as u32)];
    for (idx, &x) in v.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        let digits = mixed_digits(idx, &vec![l; k]);
        let g: Vec<usize> = digits.iter().map(|&i| offset + i).collect();
        out[mixed_index(&g, &vec![d; k])] = x;
    }
    out
}

/// Schur basis of `(C^d)^{⊗t}` for `V ↦ V^{⊗t}`, `V` block diagonal with
/// blocks of sizes `multiplicities` (the eigenbasis frame of the observable).
pub fn centralizer_power_basis(multiplicities: &[usize], t: usize) -> Result<SchurBasis> {
    let d: usize = multiplicities.iter().sum();
    let m = multiplicities.len();
    let offsets: Vec<usize> = multiplicities
        .iter()
        .scan(0, |acc, &l| {
            let o = *acc;
            *acc += l;
            Some(o)
        })
        .collect();
    let mut blocks = Vec::new();
    for k in compositions(t, m) {
        let per_block: Vec<Vec<IsotypicComponent>> = (0..m)
            .map(|r| unitary_group_components(multiplicities[r], k[r]))
            .collect::<Result<_>>()?;
        let assigns = assignments(&k);
        let canonical = assigns.last().cloned().unwrap_or_default();
        let canonical: Vec<usize> = {
            let mut c = canonical;
            c.sort_unstable();
            c
        };
        // τ_s: j-th occurrence of r in canonical order goes to the j-th occurrence in s
        let taus: Vec<Vec<usize>> = assigns
            .iter()
            .map(|s| {
                let mut tau = vec![0; t];
                for r in 0..m {
                    let src = canonical.iter().enumerate().filter(|(_, &x)| x == r).map(|(i, _)| i);
                    let dst = s.iter().enumerate().filter(|(_, &x)| x == r).map(|(i, _)| i);
                    for (a, b) in src.zip(dst) {
                        tau[a] = b;
                    }
                }
                tau
            })
            .collect();
        let choice_counts: Vec<usize> = per_block.iter().map(Vec::len).collect();
        let n_choices: usize = choice_counts.iter().product();
        for c in 0..n_choices {
            let pick = mixed_digits(c, &choice_counts);
            let comps: Vec<&IsotypicComponent> = (0..m).map(|r| &per_block[r][pick[r]]).collect();
            let mults: Vec<usize> = comps.iter().map(|x| x.vectors.len()).collect();
            let dims: Vec<usize> = comps.iter().map(|x| x.vectors[0].len()).collect();
            let local_mult: usize = mults.iter().product();
            let dim: usize = dims.iter().product();
            let mut cols = Vec::with_capacity(assigns.len() * local_mult * dim);
            for tau in &taus {
                for am in 0..local_mult {
                    let alphas = mixed_digits(am, &mults);
                    for ad in 0..dim {
                        let aas = mixed_digits(ad, &dims);
                        let mut v = vec![1.0];
                        for r in 0..m {
                            let local = &comps[r].vectors[alphas[r]][aas[r]];
                            let e = embed_block(local, multiplicities[r], k[r], offsets[r], d);
                            v = kron_real(&v, &e);
                        }
                        cols.push(if t == 0 { v } else { permute_sites(&v, tau, d) });
                    }
                }
            }
            let label = IrrepLabel {
                lambda: Partition(vec![]),
                v: Some(VLabel {
                    composition: k.clone(),
                    partitions: comps.iter().map(|x| x.lambda.clone()).collect(),
                }),
                w: None,
            };
            blocks.push((label, dim, assigns.len() * local_mult, cols));
        }
    }
    SchurBasis::from_blocks(vec![d; t], blocks)
}

/// Basis of `C^d` for a single centralizer copy: eigenspaces in order.
fn eigenspace_basis(multiplicities: &[usize]) -> Result<SchurBasis> {
    let d: usize = multiplicities.iter().sum();
    let mut blocks = Vec::new();
    let mut o = 0;
    for (w, &l) in multiplicities.iter().enumerate() {
        let cols = (0..l)
            .map(|i| {
                let mut e = vec![0.0; d];
                e[o + i] = 1.0;
                e
            })
            .collect();
        blocks.push((IrrepLabel { lambda: Partition(vec![]), v: None, w: Some(w) }, l, 1, cols));
        o += l;
    }
    SchurBasis::from_blocks(vec![d], blocks)
}

/// Schur basis for `U^{⊗(t+1)} ⊗ V^{⊗t} ⊗ W` with `U ∈ U(d)` and `V, W` in
/// the centralizer of the observable, with the factors in that order.
#[derive(Debug, Clone)]
pub struct CombinedBasis {
    pub basis: SchurBasis,
    pub spectrum: SpectralDecomposition,
    pub t: usize,
    /// Whether the eigenbasis is folded into `Q` (computational frame). When
    /// false, `Q` block-diagonalizes the representation for the diagonalized
    /// observable `E† O E`.
    pub folded: bool,
}

impl CombinedBasis {
    /// `U^{⊗(t+1)} ⊗ V^{⊗t} ⊗ W` in the frame of this basis.
    pub fn representation(&self, u: &CMatrix, v: &CMatrix, w: &CMatrix) -> CMatrix {
        let mut m = CMatrix::identity(1, 1);
        for _ in 0..=self.t {
            m = m.kronecker(u);
        }
        for _ in 0..self.t {
            m = m.kronecker(v);
        }
        m.kronecker(w)
    }

    /// Random `(V, W)` pair from the centralizer, expressed in this basis' frame.
    pub fn sample_symmetry<R: Rng + ?Sized>(&self, rng: &mut R) -> (CMatrix, CMatrix) {
        let v = sample_centralizer(&self.spectrum, rng);
        let w = sample_centralizer(&self.spectrum, rng);
        if self.folded {
            (v, w)
        } else {
            let e = &self.spectrum.vectors;
            (e.adjoint() * v * e, e.adjoint() * w * e)
        }
    }
}

pub fn combined_schur_basis(o: &CMatrix, t: usize) -> Result<CombinedBasis> {
    if t < 1 {
        return Err(Error::InvalidArgument("t must be at least 1".into()));
    }
    let spectrum = centralizer_decomposition(o)?;
    let d = spectrum.dim();
    let qu = schur_basis_unitary_group(d, t + 1)?;
    let mut qv = centralizer_power_basis(&spectrum.multiplicities, t)?;
    let mut qw = eigenspace_basis(&spectrum.multiplicities)?;
    let folded = spectrum.is_real();
    if folded {
        let e = spectrum.vectors.map(|z| z.re);
        let mut et = DMatrix::<f64>::identity(1, 1);
        for _ in 0..t {
            et = et.kronecker(&e);
        }
        qv.q = et * &qv.q;
        qw.q = &e * &qw.q;
    }

    let mut blocks = Vec::new();
    for bu in &qu.blocks {
        for bv in &qv.blocks {
            for bw in &qw.blocks {
                let label = IrrepLabel {
                    lambda: bu.label.lambda.clone(),
                    v: bv.label.v.clone(),
                    w: bw.label.w,
                };
                let dim = bu.dim * bv.dim * bw.dim;
                let mult = bu.mult * bv.mult;
                let mut cols = Vec::with_capacity(dim * mult);
                for au in 0..bu.mult {
                    for av in 0..bv.mult {
                        for du in 0..bu.dim {
                            let cu = qu.q.column(bu.column(au, du));
                            for dv in 0..bv.dim {
                                let cv = qv.q.column(bv.column(av, dv));
                                let uv = kron_real(cu.as_slice(), cv.as_slice());
                                for dw in 0..bw.dim {
                                    let cw = qw.q.column(bw.column(0, dw));
                                    cols.push(kron_real(&uv, cw.as_slice()));
                                }
                            }
                        }
                    }
                }
                blocks.push((label, dim, mult, cols));
            }
        }
    }
    let basis = SchurBasis::from_blocks(vec![d; 2 * t + 2], blocks)?;
    Ok(CombinedBasis { basis, spectrum, t, folded })
}

/// `I_k(d) = Σ_{λ ⊢ k, ≤ d rows} (k!/H_λ)²`, the `2k`-th moment of `|tr U|` over `U(d)`.
pub fn moment_i(k: usize, d: usize) -> u128 {
    partitions(k, d).iter().map(|l| count_syt(l).pow(2)).sum()
}

fn multinomial(k: &[usize]) -> u128 {
    factorial(k.iter().sum()) / k.iter().map(|&x| factorial(x)).product::<u128>()
}

/// `J_s = Σ_{k_1+…+k_m=s} (s!/∏k_r!)² ∏_r I_{k_r}(l_r)`.
pub fn moment_j(s: usize, multiplicities: &[usize]) -> u128 {
    compositions(s, multiplicities.len())
        .iter()
        .map(|k| {
            multinomial(k).pow(2)
                * k.iter().zip(multiplicities).map(|(&kr, &l)| moment_i(kr, l)).product::<u128>()
        })
        .sum()
}

/// Number of real parameters of the reduced problem, `m · I_{t+1}(d) · J_t`.
pub fn variable_count(multiplicities: &[usize], t: usize) -> u128 {
    let d = multiplicities.iter().sum();
    multiplicities.len() as u128 * moment_i(t + 1, d) * moment_j(t, multiplicities)
}

/// Upper bound `(t+1)! t! d^{t+1}`.
pub fn variable_count_bound(d: usize, t: usize) -> u128 {
    factorial(t + 1) * factorial(t) * (d as u128).pow(t as u32 + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{approx_eq, basis_vector, diag_real, kron_all, kron_vec, RngSeed};

    fn p(v: &[usize]) -> Partition {
        Partition(v.to_vec())
    }

    #[test]
    fn partition_lists() {
        assert_eq!(partitions(2, 2), vec![p(&[2]), p(&[1, 1])]);
        assert_eq!(partitions(4, 2), vec![p(&[4]), p(&[3, 1]), p(&[2, 2])]);
        assert_eq!(partitions(0, 3), vec![p(&[])]);
        assert_eq!(partitions(5, 5).len(), 7);
    }

    #[test]
    fn hooks_and_counts() {
        assert_eq!(hook_length(&p(&[4, 3, 1])), 576);
        assert_eq!(hook_length(&p(&[1])), 1);
        assert_eq!(hook_length(&p(&[2, 2])), 12);
        assert_eq!(count_syt(&p(&[3, 1])), 3);
        assert_eq!(count_syt(&p(&[5])), 1);
        assert_eq!(enumerate_syt(&p(&[2, 2])).len(), 2);
        assert_eq!(enumerate_ssyt(&p(&[2, 1]), 2).len(), 2);
        assert_eq!(enumerate_ssyt(&p(&[2]), 2).len(), 3);
        assert_eq!(enumerate_ssyt(&p(&[1, 1, 1]), 2).len(), 0);
        assert_eq!(count_ssyt(&p(&[1, 1, 1]), 2), 0);
    }

    #[test]
    fn first_syt_is_row_reading() {
        let t = enumerate_syt(&p(&[3, 2])).remove(0);
        assert_eq!(t.rows, vec![vec![1, 2, 3], vec![4, 5]]);
        assert!(t.is_valid());
    }

    #[test]
    fn symmetrizer_examples() {
        let single = enumerate_syt(&p(&[1])).remove(0);
        assert!(approx_eq(&young_symmetrizer(&single, 3).unwrap(), &CMatrix::identity(3, 3), 0.0));

        let row = enumerate_syt(&p(&[2])).remove(0);
        let sym = young_symmetrizer(&row, 2).unwrap();
        let swap = crate::tensor::switch_operator(2, 2);
        let expected = (CMatrix::identity(4, 4) + swap.clone()) * c64(0.5, 0.0);
        assert!(approx_eq(&sym, &expected, 1e-15));

        let col = enumerate_syt(&p(&[1, 1])).remove(0);
        let anti = young_symmetrizer(&col, 2).unwrap();
        let e12 = kron_vec(&basis_vector(2, 0), &basis_vector(2, 1));
        let e21 = kron_vec(&basis_vector(2, 1), &basis_vector(2, 0));
        let got = &anti * &e12;
        assert!((got - (e12 - e21) * c64(0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn qubit_pair_schur_matrix() {
        let b = schur_basis_unitary_group(2, 2).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let expected = DMatrix::from_row_slice(
            4,
            4,
            &[1.0, 0.0, 0.0, 0.0, 0.0, h, 0.0, h, 0.0, h, 0.0, -h, 0.0, 0.0, 1.0, 0.0],
        );
        assert!((b.q - expected).amax() < 1e-12);
        assert_eq!(b.blocks.len(), 2);
        assert_eq!((b.blocks[0].dim, b.blocks[0].mult), (3, 1));
        assert_eq!((b.blocks[1].dim, b.blocks[1].mult), (1, 1));
    }

    #[test]
    fn single_site_basis_is_identity() {
        let b = schur_basis_unitary_group(3, 1).unwrap();
        assert!((b.q - DMatrix::<f64>::identity(3, 3)).amax() == 0.0);
    }

    #[test]
    fn three_qubit_blocks() {
        let b = schur_basis_unitary_group(2, 3).unwrap();
        let table: Vec<(usize, usize)> = b.blocks.iter().map(|x| (x.dim, x.mult)).collect();
        assert_eq!(table, vec![(4, 1), (2, 2)]);
        let mut rng = RngSeed(1).rng();
        for _ in 0..20 {
            let u = haar_unitary(2, &mut rng);
            let rep = kron_all([&u, &u, &u]);
            assert!(b.off_block_residual(&rep) < 1e-10);
            assert!(b.repetition_residual(&rep) < 1e-9);
        }
        assert!(b.orthogonality_error() < 1e-12);
    }

    #[test]
    fn spectral_grouping() {
        let s = centralizer_decomposition(&crate::tensor::pauli_z()).unwrap();
        assert_eq!(s.eigenvalues, vec![-1.0, 1.0]);
        assert_eq!(s.multiplicities, vec![1, 1]);
        let s = centralizer_decomposition(&CMatrix::identity(4, 4)).unwrap();
        assert_eq!(s.multiplicities, vec![4]);
        let o = diag_real(&[5.0, 5.0, 5.0, 2.0, 2.0, -1.0]);
        let s = centralizer_decomposition(&o).unwrap();
        assert_eq!(s.multiplicities, vec![1, 2, 3]);
        assert!(approx_eq(&s.reconstruct(), &o, 1e-12));
        assert!(centralizer_decomposition(&crate::tensor::pauli_y().map(|z| z * c64(0.0, 1.0))).is_err());
    }

    #[test]
    fn counting_formulas() {
        assert_eq!(moment_i(4, 6), 24);
        assert_eq!(moment_i(1, 5), 1);
        assert_eq!(moment_i(3, 2), 5);
        assert_eq!(moment_i(4, 2), 14);
        assert_eq!(moment_j(3, &[3, 3]), 48);
        assert_eq!(moment_j(3, &[1, 1]), 20);
        assert_eq!(moment_j(2, &[3]), moment_i(2, 3));
        assert_eq!(moment_j(1, &[2, 1, 3]), 3);
        assert_eq!(variable_count(&[3, 3], 3), 2304);
        assert_eq!(variable_count(&[1, 1], 3), 560);
        assert_eq!(variable_count_bound(2, 3), 2304);
    }

    #[test]
    fn combined_basis_small() {
        let cb = combined_schur_basis(&crate::tensor::pauli_z(), 1).unwrap();
        let b = &cb.basis;
        assert_eq!(b.total_dim(), 16);
        assert_eq!(b.blocks.iter().map(|x| x.dim * x.mult).sum::<usize>(), 16);
        assert_eq!(b.parameter_count(), 8);
        assert!(cb.folded);
        assert!(b.orthogonality_error() < 1e-12);
    }

    #[test]
    fn combined_basis_block_diagonalizes() {
        let mut rng = RngSeed(2).rng();
        for (o, t, count) in [
            (crate::tensor::pauli_z(), 2, 60),
            (diag_real(&[1.0, 1.0, 0.0]), 1, variable_count(&[1, 2], 1)),
        ] {
            let cb = combined_schur_basis(&o, t).unwrap();
            assert_eq!(cb.basis.parameter_count() as u128, count);
            for _ in 0..5 {
                let u = haar_unitary(o.nrows(), &mut rng);
                let (v, w) = cb.sample_symmetry(&mut rng);
                let rep = cb.representation(&u, &v, &w);
                assert!(cb.basis.off_block_residual(&rep) < 1e-10);
                assert!(cb.basis.repetition_residual(&rep) < 1e-9);
            }
        }
    }
}
