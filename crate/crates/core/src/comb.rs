//! Quantum combs: layouts, constraint validation, application to queried
//! unitaries and the shadow-inversion residual.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rep::{centralizer_decomposition, SpectralDecomposition};
use crate::serde_cmatrix::DenseComplex;
use crate::tensor::{
    c64, choi_of_kraus, choi_of_unitary, choi_vector, frobenius, haar_isometry, haar_unitary,
    hermiticity_error, identity, kron, link_product, min_eigenvalue, trace, unitarity_error,
    CMatrix, CVector, IndexedOperator, Layout, RngSeed, ZERO,
};

/// Default per-entry tolerance for comb validation.
pub const COMB_TOL: f64 = 1e-8;
/// Tolerance on the unitarity of queried operators.
pub const UNITARY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Sequential,
    Parallel,
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Architecture::Sequential => "sequential",
            Architecture::Parallel => "parallel",
        })
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sequential" | "seq" => Ok(Architecture::Sequential),
            "parallel" | "par" => Ok(Architecture::Parallel),
            other => Err(Error::InvalidArgument(format!("unknown architecture `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CombSpec {
    pub d: usize,
    pub t: usize,
    pub architecture: Architecture,
}

impl CombSpec {
    pub fn new(d: usize, t: usize, architecture: Architecture) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidArgument(format!("d must be at least 2, got {d}")));
        }
        if t < 1 {
            return Err(Error::InvalidArgument(format!("t must be at least 1, got {t}")));
        }
        Ok(Self { d, t, architecture })
    }

    /// Causal labels: `P, I1, O1, …, It, Ot, F` or `P, I1…It, O1…Ot, F`.
    pub fn labels(&self) -> Vec<String> {
        let mut out = vec!["P".to_string()];
        match self.architecture {
            Architecture::Sequential => {
                for k in 1..=self.t {
                    out.push(format!("I{k}"));
                    out.push(format!("O{k}"));
                }
            }
            Architecture::Parallel => {
                out.extend((1..=self.t).map(|k| format!("I{k}")));
                out.extend((1..=self.t).map(|k| format!("O{k}")));
            }
        }
        out.push("F".into());
        out
    }

    pub fn layout(&self) -> Layout {
        Layout::uniform(self.d, self.labels()).expect("labels are unique")
    }

    pub fn sites(&self) -> usize {
        2 * self.t + 2
    }

    pub fn total_dim(&self) -> usize {
        self.d.pow(self.sites() as u32)
    }

    /// Required trace `d_P d_O = d^{t+1}`.
    pub fn trace_target(&self) -> f64 {
        (self.d as f64).powi(self.t as i32 + 1)
    }

    /// Marginal constraints of the architecture.
    pub fn marginal_specs(&self) -> Vec<MarginalSpec> {
        match self.architecture {
            Architecture::Sequential => {
                (1..=self.t + 1).map(|j| MarginalSpec { traced: 2 * j - 1, lifted: 1 }).collect()
            }
            Architecture::Parallel => vec![
                MarginalSpec { traced: 1, lifted: self.t },
                MarginalSpec { traced: 2 * self.t + 1, lifted: 1 },
            ],
        }
    }
}

/// Constraint `tr_{last traced}(C) = tr_{last traced+lifted}(C) ⊗ I/d^lifted`,
/// sites counted in causal order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarginalSpec {
    pub traced: usize,
    pub lifted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintResidual {
    pub name: String,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub tol: f64,
    pub hermiticity: f64,
    pub min_eigenvalue: f64,
    pub trace_residual: f64,
    pub marginals: Vec<ConstraintResidual>,
    pub valid: bool,
}

impl ValidationReport {
    pub fn max_residual(&self) -> f64 {
        self.marginals
            .iter()
            .map(|m| m.residual)
            .chain([self.trace_residual, self.hermiticity, (-self.min_eigenvalue).max(0.0)])
            .fold(0.0, f64::max)
    }
}

fn check_layout(c: &IndexedOperator, spec: &CombSpec) -> Result<()> {
    if c.layout != spec.layout() {
        return Err(Error::Layout(format!(
            "expected {} layout {:?} with dim {}, got {:?} with dims {:?}",
            spec.architecture,
            spec.labels(),
            spec.d,
            c.layout.labels(),
            c.layout.dims()
        )));
    }
    Ok(())
}

/// Residual of a single marginal constraint.
pub fn marginal_residual(c: &IndexedOperator, m: MarginalSpec) -> Result<f64> {
    let labels: Vec<&str> = c.layout.labels().iter().map(String::as_str).collect();
    let n = labels.len();
    if m.traced + m.lifted > n {
        return Err(Error::InvalidArgument(format!("marginal {m:?} on {n} sites")));
    }
    let lhs = c.partial_trace(&labels[n - m.traced..])?;
    let rhs = c.partial_trace(&labels[n - m.traced - m.lifted..])?;
    let lifted_dim: usize = c.layout.dims()[n - m.traced - m.lifted..n - m.traced].iter().product();
    let rhs = kron(&rhs.matrix, &identity(lifted_dim)) / c64(lifted_dim as f64, 0.0);
    Ok(crate::tensor::max_abs_diff(&lhs.matrix, &rhs))
}

fn marginal_name(labels: &[String], m: MarginalSpec) -> String {
    let n = labels.len();
    let traced = labels[n - m.traced..].join("");
    let lifted = labels[n - m.traced - m.lifted..n - m.traced].join("");
    format!("tr_{traced} = tr_{lifted}{traced} ⊗ I_{lifted}/d")
}

fn validate(c: &IndexedOperator, spec: &CombSpec, tol: f64) -> Result<ValidationReport> {
    check_layout(c, spec)?;
    let hermiticity = hermiticity_error(&c.matrix);
    let min_eig = min_eigenvalue(&c.matrix);
    let tr = trace(&c.matrix);
    let trace_residual = (tr - c64(spec.trace_target(), 0.0)).norm();
    let labels = spec.labels();
    let marginals = spec
        .marginal_specs()
        .into_iter()
        .map(|m| {
            Ok(ConstraintResidual { name: marginal_name(&labels, m), residual: marginal_residual(c, m)? })
        })
        .collect::<Result<Vec<_>>>()?;
    let valid = hermiticity <= tol
        && min_eig >= -tol
        && trace_residual <= tol * spec.trace_target().max(1.0)
        && marginals.iter().all(|m| m.residual <= tol);
    Ok(ValidationReport { tol, hermiticity, min_eigenvalue: min_eig, trace_residual, marginals, valid })
}

/// Check positivity, the telescoping marginal chain and the trace of a sequential comb.
pub fn validate_sequential_comb(c: &IndexedOperator, t: usize, tol: f64) -> Result<ValidationReport> {
    let d = c.layout.dims().first().copied().unwrap_or(0);
    validate(c, &CombSpec::new(d, t, Architecture::Sequential)?, tol)
}

/// Check positivity, the encoder/decoder marginals and the trace of a parallel comb.
pub fn validate_parallel_comb(c: &IndexedOperator, t: usize, tol: f64) -> Result<ValidationReport> {
    let d = c.layout.dims().first().copied().unwrap_or(0);
    validate(c, &CombSpec::new(d, t, Architecture::Parallel)?, tol)
}

/// Choi operator of a comb together with its architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct CombChoi {
    pub spec: CombSpec,
    pub op: IndexedOperator,
}

impl CombChoi {
    /// Wrap a Choi operator; the layout must match the architecture. Constraints are
    /// not checked here, see [`CombChoi::validate`].
    pub fn new(spec: CombSpec, matrix: CMatrix) -> Result<Self> {
        let op = IndexedOperator::new(matrix, spec.layout())?;
        Ok(Self { spec, op })
    }

    pub fn validate(&self, tol: f64) -> Result<ValidationReport> {
        validate(&self.op, &self.spec, tol)
    }

    /// Operator reordered to `(P, F, I1, O1, …, It, Ot)` for slot contraction.
    pub fn contraction_form(&self) -> Result<ContractionForm> {
        let mut order = vec!["P".to_string(), "F".to_string()];
        for k in 1..=self.spec.t {
            order.push(format!("I{k}"));
            order.push(format!("O{k}"));
        }
        let refs: Vec<&str> = order.iter().map(String::as_str).collect();
        let op = self.op.reorder(&refs)?;
        Ok(ContractionForm { d: self.spec.d, t: self.spec.t, matrix: op.matrix })
    }

    /// Parallel comb viewed as a sequential one (parallel combs are a subset).
    pub fn as_sequential(&self) -> Result<CombChoi> {
        let spec = CombSpec { architecture: Architecture::Sequential, ..self.spec };
        let labels = spec.labels();
        let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
        Ok(CombChoi { spec, op: self.op.reorder(&refs)? })
    }

    pub fn to_json(&self) -> Result<String> {
        let file = CombFile {
            version: 1,
            architecture: self.spec.architecture,
            d: self.spec.d,
            t: self.spec.t,
            labels: self.spec.labels(),
            dims: self.op.layout.dims().to_vec(),
            matrix: DenseComplex::from(&self.op.matrix),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: CombFile = serde_json::from_str(s)?;
        if f.version != 1 {
            return Err(Error::FormatVersion(f.version));
        }
        let spec = CombSpec::new(f.d, f.t, f.architecture)?;
        if f.labels != spec.labels() || f.dims != vec![f.d; spec.sites()] {
            return Err(Error::Layout(format!("layout {:?} does not match {}", f.labels, f.architecture)));
        }
        let m = f.matrix.to_matrix().map_err(Error::Dimension)?;
        CombChoi::new(spec, m)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct CombFile {
    version: u32,
    architecture: Architecture,
    d: usize,
    t: usize,
    labels: Vec<String>,
    dims: Vec<usize>,
    matrix: DenseComplex,
}

/// Comb matrix with rows/cols ordered `(P, F, slots)`, ready for repeated
/// contraction with `|U⟩⟩⟨⟨U|^{⊗t}`.
#[derive(Debug, Clone)]
pub struct ContractionForm {
    d: usize,
    t: usize,
    matrix: CMatrix,
}

impl ContractionForm {
    /// Choi operator on `(P, F)` of the channel obtained by plugging `u` into every slot.
    pub fn apply(&self, u: &CMatrix) -> CMatrix {
        let mut vu = CVector::from_element(1, c64(1.0, 0.0));
        let cu = choi_vector(u);
        for _ in 0..self.t {
            vu = vu.kronecker(&cu);
        }
        let s = vu.len();
        let x = self.d * self.d;
        let vc = vu.map(|z| z.conj());
        let mut out = CMatrix::zeros(x, x);
        for i in 0..x {
            // w_j = Σ_s'' u[s''] A[(i,s''),(j,s)] for all (j,s)
            let rows = self.matrix.rows(i * s, s);
            let w = rows.transpose() * &vu;
            for j in 0..x {
                let mut acc = ZERO;
                for k in 0..s {
                    acc += w[j * s + k] * vc[k];
                }
                out[(i, j)] = acc;
            }
        }
        out
    }
}

/// Channel Choi on `(P, F)` induced by the comb when every slot holds `u`.
pub fn apply_comb(c: &CombChoi, u: &CMatrix) -> Result<IndexedOperator> {
    let err = unitarity_error(u);
    if u.shape() != (c.spec.d, c.spec.d) {
        return Err(Error::Dimension(format!("query must be {0}x{0}", c.spec.d)));
    }
    if err > UNITARY_TOL {
        return Err(Error::NotUnitary(err));
    }
    let m = c.contraction_form()?.apply(u);
    IndexedOperator::new(m, Layout::uniform(c.spec.d, vec!["P", "F"])?)
}

/// Reference implementation of [`apply_comb`] through explicit link products.
pub fn apply_comb_via_link(c: &CombChoi, u: &CMatrix) -> Result<IndexedOperator> {
    let mut op = c.op.clone();
    let cu = choi_of_unitary(u);
    for k in 1..=c.spec.t {
        let slot = IndexedOperator::new(cu.clone(), Layout::uniform(c.spec.d, vec![format!("I{k}"), format!("O{k}")])?)?;
        op = link_product(&op, &slot)?;
    }
    op.reorder(&["P", "F"])
}

/// Dual map applied to `o`: `N†(O)_{ab} = tr[J (|a⟩⟨b| ⊗ O)]` for a Choi `J` on (in, out).
pub fn dual_on_observable(choi: &CMatrix, din: usize, o: &CMatrix) -> CMatrix {
    let dout = choi.nrows() / din;
    CMatrix::from_fn(din, din, |a, b| {
        let mut s = ZERO;
        for f in 0..dout {
            for f2 in 0..dout {
                s += choi[(b * dout + f, a * dout + f2)] * o[(f2, f)];
            }
        }
        s
    })
}

/// Choi operator of the dual map, `E' = F Eᵀ F`.
pub fn dual_choi(choi: &CMatrix, din: usize) -> CMatrix {
    let dout = choi.nrows() / din;
    // F: H_out ⊗ H_in -> H_in ⊗ H_out; the dual's Choi lives on (out, in)
    let f = crate::tensor::switch_operator(din, dout);
    f.transpose() * choi.transpose() * f
}

/// Hermitian observable with its lazily computed spectral data.
#[derive(Debug, Clone, PartialEq)]
pub struct Observable {
    pub matrix: CMatrix,
}

impl Observable {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Dimension("observable must be square".into()));
        }
        let h = hermiticity_error(&matrix);
        if h > crate::tensor::DEFAULT_TOL {
            return Err(Error::NotHermitian(h));
        }
        Ok(Self { matrix })
    }

    pub fn pauli_z() -> Self {
        Self { matrix: crate::tensor::pauli_z() }
    }

    pub fn diagonal(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("empty diagonal".into()));
        }
        Ok(Self { matrix: crate::tensor::diag_real(values) })
    }

    /// Parse `"Z"`, `"X"`, `"Y"` or a comma-separated diagonal.
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "Z" | "z" => Ok(Self::pauli_z()),
            "X" | "x" => Ok(Self { matrix: crate::tensor::pauli_x() }),
            "Y" | "y" => Ok(Self { matrix: crate::tensor::pauli_y() }),
            other => {
                let vals = other
                    .split(',')
                    .map(|v| {
                        v.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::InvalidArgument(format!("bad observable entry `{v}`")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Self::diagonal(&vals)
            }
        }
    }

    /// Load a Hermitian matrix from a JSON file (`{rows, cols, data}` with
    /// interleaved re/im, or a nested array of real rows).
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if let Ok(dc) = serde_json::from_str::<DenseComplex>(&text) {
            return Self::new(dc.to_matrix().map_err(Error::Dimension)?);
        }
        let rows: Vec<Vec<f64>> = serde_json::from_str(&text)?;
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("observable rows must form a square matrix".into()));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| c64(rows[i][j], 0.0)))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn decomposition(&self) -> Result<SpectralDecomposition> {
        centralizer_decomposition(&self.matrix)
    }
}

/// `‖N_U†(O) − U O U†‖_F` for a channel Choi on (P, F).
pub fn channel_residual(choi: &CMatrix, o: &CMatrix, u: &CMatrix) -> f64 {
    let dual = dual_on_observable(choi, u.nrows(), o);
    frobenius(&(dual - u * o * u.adjoint()))
}

pub fn shadow_residual(c: &CombChoi, o: &Observable, u: &CMatrix) -> Result<f64> {
    Ok(channel_residual(&apply_comb(c, u)?.matrix, &o.matrix, u))
}

/// `n` Haar unitaries drawn in order from the seed's main stream.
pub fn haar_samples(d: usize, n: usize, seed: RngSeed) -> Vec<CMatrix> {
    let mut rng = seed.rng();
    (0..n).map(|_| haar_unitary(d, &mut rng)).collect()
}

/// Mean residual over the given unitaries.
pub fn objective_on_samples(c: &CombChoi, o: &Observable, samples: &[CMatrix]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    let form = c.contraction_form()?;
    let total: f64 = samples
        .par_iter()
        .map(|u| channel_residual(&form.apply(u), &o.matrix, u))
        .sum();
    Ok(total / samples.len() as f64)
}

/// Monte-Carlo estimate of `E_U ‖N_U†(O) − U O U†‖_F` over `n` Haar samples.
pub fn objective_estimate(c: &CombChoi, o: &Observable, n: usize, seed: RngSeed) -> Result<f64> {
    objective_on_samples(c, o, &haar_samples(c.spec.d, n, seed))
}

/// Random comb: Haar isometric encoders linked through auxiliary memories of
/// dimension `aux`, and a decoder with a traced environment.
pub fn random_comb<R: Rng + ?Sized>(spec: CombSpec, aux: usize, rng: &mut R) -> Result<CombChoi> {
    let d = spec.d;
    let env = d * aux;
    let lay = |pairs: Vec<(String, usize)>| {
        let (labels, dims): (Vec<String>, Vec<usize>) = pairs.into_iter().unzip();
        Layout::new(dims, labels)
    };
    let decoder = |inputs: Vec<(String, usize)>, rng: &mut R| -> Result<IndexedOperator> {
        let din: usize = inputs.iter().map(|x| x.1).product();
        let w = haar_isometry(d * env, din, rng);
        let kraus: Vec<CMatrix> = (0..env)
            .map(|k| CMatrix::from_fn(d, din, |f, i| w[(f * env + k, i)]))
            .collect();
        let mut layout = inputs;
        layout.push(("F".into(), d));
        IndexedOperator::new(choi_of_kraus(&kraus), lay(layout)?)
    };
    let op = match spec.architecture {
        Architecture::Sequential => {
            let mut acc: Option<IndexedOperator> = None;
            for k in 1..=spec.t {
                let mut layout: Vec<(String, usize)> = if k == 1 {
                    vec![("P".into(), d)]
                } else {
                    vec![(format!("O{}", k - 1), d), (format!("A{}", k - 1), aux)]
                };
                let din: usize = layout.iter().map(|x| x.1).product();
                layout.push((format!("I{k}"), d));
                layout.push((format!("A{k}"), aux));
                let v = haar_isometry(d * aux, din, rng);
                let e = IndexedOperator::new(choi_of_unitary(&v), lay(layout)?)?;
                acc = Some(match acc {
                    None => e,
                    Some(a) => link_product(&a, &e)?,
                });
            }
            let dec = decoder(vec![(format!("O{}", spec.t), d), (format!("A{}", spec.t), aux)], rng)?;
            link_product(&acc.expect("t ≥ 1"), &dec)?
        }
        Architecture::Parallel => {
            let mut layout = vec![("P".to_string(), d)];
            layout.extend((1..=spec.t).map(|k| (format!("I{k}"), d)));
            layout.push(("A".into(), aux));
            let v = haar_isometry(d.pow(spec.t as u32) * aux, d, rng);
            let enc = IndexedOperator::new(choi_of_unitary(&v), lay(layout)?)?;
            let mut inputs: Vec<(String, usize)> = (1..=spec.t).map(|k| (format!("O{k}"), d)).collect();
            inputs.push(("A".into(), aux));
            let dec = decoder(inputs, rng)?;
            link_product(&enc, &dec)?
        }
    };
    let labels = spec.labels();
    let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
    Ok(CombChoi { spec, op: op.reorder(&refs)? })
}

/// Comb that routes `P` into the first slot, each slot output into the next
/// slot input, and the last output to `F`.
pub fn identity_routing_comb(spec: CombSpec) -> Result<CombChoi> {
    let d = spec.d;
    let phi = choi_of_unitary(&identity(d));
    let seq = CombSpec { architecture: Architecture::Sequential, ..spec };
    let mut m = CMatrix::identity(1, 1);
    for _ in 0..=spec.t {
        m = kron(&m, &phi);
    }
    let c = CombChoi::new(seq, m)?;
    match spec.architecture {
        Architecture::Sequential => Ok(c),
        Architecture::Parallel if spec.t == 1 => {
            let labels = spec.labels();
            let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
            Ok(CombChoi { spec, op: c.op.reorder(&refs)? })
        }
        Architecture::Parallel => Err(Error::InvalidArgument(
            "a routing comb chaining the slots is not parallel for t > 1".into(),
        )),
    }
}

/// Comb whose output ignores all queries: slots are discarded and `F` is
/// prepared in `sigma`, `P` is traced out.
pub fn constant_comb(spec: CombSpec, sigma: &CMatrix) -> Result<CombChoi> {
    let d = spec.d;
    let mut m = CMatrix::identity(1, 1);
    // P and every slot input are discarded (identity on the input side);
    // every slot output is fed a maximally mixed input (I/d on the output side).
    let labels = spec.labels();
    for l in &labels {
        let f = if l == "F" {
            sigma.clone()
        } else if l.starts_with('I') {
            identity(d) / c64(d as f64, 0.0)
        } else {
            identity(d)
        };
        m = kron(&m, &f);
    }
    CombChoi::new(spec, m)
}

/// Symmetry operator `U ⊗ (V ⊗ U)^{⊗t} ⊗ W` (sequential) or
/// `U ⊗ V^{⊗t} ⊗ U^{⊗t} ⊗ W` (parallel) in causal order.
pub fn symmetry_operator(spec: &CombSpec, u: &CMatrix, v: &CMatrix, w: &CMatrix) -> CMatrix {
    let mut m = u.clone();
    match spec.architecture {
        Architecture::Sequential => {
            for _ in 0..spec.t {
                m = kron(&kron(&m, v), u);
            }
        }
        Architecture::Parallel => {
            for _ in 0..spec.t {
                m = kron(&m, v);
            }
            for _ in 0..spec.t {
                m = kron(&m, u);
            }
        }
    }
    kron(&m, w)
}

/// Largest commutator `‖[C, g]‖_max` over random symmetry elements.
pub fn symmetry_violation<R: Rng + ?Sized>(
    c: &CombChoi,
    o: &Observable,
    trials: usize,
    rng: &mut R,
) -> Result<f64> {
    let spec = o.decomposition()?;
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let u = haar_unitary(c.spec.d, rng);
        let v = crate::rep::sample_centralizer(&spec, rng);
        let w = crate::rep::sample_centralizer(&spec, rng);
        let g = symmetry_operator(&c.spec, &u, &v, &w);
        let comm = &g * &c.op.matrix - &c.op.matrix * &g;
        worst = worst.max(comm.iter().map(|z| z.norm()).fold(0.0, f64::max));
    }
    Ok(worst)
}

/// Monte-Carlo twirl of the comb over the symmetry group of the observable.
pub fn twirl<R: Rng + ?Sized>(c: &CombChoi, o: &Observable, samples: usize, rng: &mut R) -> Result<CombChoi> {
    let spec = o.decomposition()?;
    let n = c.op.matrix.nrows();
    let mut acc = CMatrix::zeros(n, n);
    for _ in 0..samples {
        let u = haar_unitary(c.spec.d, rng);
        let v = crate::rep::sample_centralizer(&spec, rng);
        let w = crate::rep::sample_centralizer(&spec, rng);
        let g = symmetry_operator(&c.spec, &u, &v, &w);
        acc += &g * &c.op.matrix * g.adjoint();
    }
    CombChoi::new(c.spec, acc / c64(samples as f64, 0.0))
}
