//! Explicit three-query qubit circuit for shadow inversion with `O = Z`.
//!
//! Qubit order is (anc1, anc2, anc3, data); anc2 and anc3 form the
//! two-qubit register `|j⟩` that selects a Pauli `P_j ∈ {I, X, Y, Z}`.
//! The queries are interleaved as `V0, U, V1, U, V2, U, V3`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::comb::{Architecture, CombChoi, CombSpec};
use crate::error::{Error, Result};
use crate::tensor::{
    basis_vector, c64, choi_of_kraus, choi_of_map, choi_of_unitary, hadamard, identity, kron,
    kron_vec, link_product, pauli_x, pauli_y, pauli_z, paulis, unitarity_error, CMatrix, CVector,
    IndexedOperator, Layout, RngSeed, I, ONE, ZERO,
};

/// Order in which canonical basis vectors are used to complete partial isometries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Completion {
    #[default]
    Forward,
    Reverse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CircuitGates {
    /// On (anc2, anc3, data).
    pub v0: CMatrix,
    /// On (anc1, anc2, anc3, data).
    pub v1: CMatrix,
    /// On (anc1, anc2, anc3, data).
    pub v2: CMatrix,
    /// On (anc2, anc3, data).
    pub v3: CMatrix,
    /// Base change on (anc1, anc2, anc3) used inside `v2`.
    pub g: CMatrix,
}

fn ket(bits: &str) -> CVector {
    let n = bits.len();
    let idx = usize::from_str_radix(bits, 2).expect("binary string");
    basis_vector(1 << n, idx)
}

/// `Σ_j |j⟩⟨j| ⊗ ops[j]` on (two-qubit register, data).
fn controlled(ops: &[CMatrix; 4]) -> CMatrix {
    let mut out = CMatrix::zeros(8, 8);
    for (j, op) in ops.iter().enumerate() {
        out.view_mut((2 * j, 2 * j), (2, 2)).copy_from(op);
    }
    out
}

/// The vectors `|v_jk⟩` on (anc1, anc2, anc3), `v_kj = −v_jk`.
pub fn v_vectors() -> [[CVector; 4]; 4] {
    let s = 3f64.sqrt() / 2.0;
    let h = c64(0.0, 0.5);
    let mut v: [[CVector; 4]; 4] = std::array::from_fn(|_| std::array::from_fn(|_| CVector::zeros(8)));
    v[0][1] = ket("000");
    v[0][2] = ket("001");
    v[0][3] = ket("010");
    v[1][2] = ket("110") * c64(s, 0.0) + ket("010") * h;
    v[1][3] = ket("101") * c64(s, 0.0) - ket("001") * h;
    v[2][3] = ket("100") * c64(s, 0.0) + ket("000") * h;
    for j in 0..4 {
        for k in (j + 1)..4 {
            v[k][j] = -v[j][k].clone();
        }
    }
    v
}

fn gram_schmidt_complete(cols: &[CVector], n: usize, order: Completion) -> Result<Vec<CVector>> {
    let mut basis: Vec<CVector> = Vec::with_capacity(n);
    for c in cols {
        let mut w = c.clone();
        for b in &basis {
            w -= b * b.dotc(&w);
        }
        let nw = w.norm();
        if (nw - 1.0).abs() > 1e-10 {
            return Err(Error::Numerical(format!(
                "defining vectors are not orthonormal (residual norm {nw:.3e})"
            )));
        }
        basis.push(w / c64(nw, 0.0));
    }
    let idx: Vec<usize> = match order {
        Completion::Forward => (0..n).collect(),
        Completion::Reverse => (0..n).rev().collect(),
    };
    for i in idx {
        if basis.len() == n {
            break;
        }
        let mut w = basis_vector(n, i);
        for _ in 0..2 {
            for b in &basis {
                w -= b * b.dotc(&w);
            }
        }
        let nw = w.norm();
        if nw > 1e-10 {
            basis.push(w / c64(nw, 0.0));
        }
    }
    if basis.len() != n {
        return Err(Error::Numerical("rank defect while completing a basis".into()));
    }
    Ok(basis)
}

/// Unitary mapping the normalized `domain` vectors to the normalized `image`
/// vectors; complements are matched in index order.
pub fn complete_unitary(domain: &[CVector], image: &[CVector], n: usize, order: Completion) -> Result<CMatrix> {
    if domain.len() != image.len() {
        return Err(Error::Dimension("domain and image sizes differ".into()));
    }
    let normalize = |v: &CVector| v / c64(v.norm(), 0.0);
    let a = gram_schmidt_complete(&domain.iter().map(normalize).collect::<Vec<_>>(), n, order)?;
    let b = gram_schmidt_complete(&image.iter().map(normalize).collect::<Vec<_>>(), n, order)?;
    let am = CMatrix::from_columns(&a);
    let bm = CMatrix::from_columns(&b);
    Ok(bm * am.adjoint())
}

/// Domain vectors `|0⟩|k⟩|b⟩` of `V1` and their images.
fn v1_partial() -> (Vec<CVector>, Vec<CVector>) {
    let v = v_vectors();
    let p = paulis();
    let s3 = 3f64.sqrt();
    let mut dom = Vec::new();
    let mut img = Vec::new();
    for k in 0..4 {
        for b in 0..2 {
            let phi = basis_vector(2, b);
            dom.push(kron_vec(&kron_vec(&ket("0"), &basis_vector(4, k)), &phi));
            let mut out = CVector::zeros(16);
            for j in (0..4).filter(|&j| j != k) {
                out += kron_vec(&v[j][k], &(&p[j] * &phi));
            }
            img.push(out / c64(s3, 0.0));
        }
    }
    (dom, img)
}

/// The four vectors `w_0..w_3` and the targets `t_0..t_3` defining `G`.
pub fn g_relations() -> (Vec<CVector>, Vec<CVector>) {
    let v = v_vectors();
    let w0 = -v[0][1].clone() + &v[2][3] * I - &v[0][2] - &v[1][3] * I - &v[0][3] + &v[1][2] * I;
    let w1 = v[0][1].clone() + &v[2][3] * I;
    let w2 = v[0][2].clone() - &v[1][3] * I;
    let w3 = v[0][3].clone() + &v[1][2] * I;
    let reg = |a: [f64; 4]| kron_vec(&ket("0"), &CVector::from_iterator(4, a.iter().map(|&x| c64(x, 0.0))));
    let t0 = reg([1.5, 1.5, 1.5, 1.5]);
    let t1 = reg([0.5, 0.5, -0.5, -0.5]);
    let t2 = reg([0.5, -0.5, 0.5, -0.5]);
    let t3 = reg([0.5, -0.5, -0.5, 0.5]);
    (vec![w0, w1, w2, w3], vec![t0, t1, t2, t3])
}

/// Build all gates; `order` selects the completion of `V1` and `G`.
pub fn build_gates_with(order: Completion) -> Result<CircuitGates> {
    let p = paulis();
    let h2 = kron(&hadamard(), &hadamard());
    let mut v0 = CMatrix::zeros(8, 8);
    for j in 0..4 {
        let proj = crate::tensor::projector(&basis_vector(4, j));
        v0 += kron(&(proj * &h2), &p[j]);
    }

    let (dom, img) = v1_partial();
    let v1 = complete_unitary(&dom, &img, 16, order)?;

    let (w, t) = g_relations();
    let g = complete_unitary(&w, &t, 8, order)?;
    let z = pauli_z();
    let zp: [CMatrix; 4] = std::array::from_fn(|j| &z * &p[j]);
    let shift: [CMatrix; 4] = std::array::from_fn(|j| p[(j + 1) % 4].clone());
    let v2 = kron(&identity(2), &controlled(&zp)) * kron(&g, &identity(2)) * kron(&identity(2), &controlled(&shift));

    let mut ccx = identity(8);
    ccx.view_mut((6, 6), (2, 2)).copy_from(&pauli_x());
    let ctrl = controlled(&[
        pauli_z(),
        pauli_y() * c64(0.0, -1.0),
        pauli_x() * I,
        -identity(2),
    ]);
    let v3 = ccx * kron(&h2, &identity(2)) * ctrl;

    Ok(CircuitGates { v0, v1, v2, v3, g })
}

pub fn build_gates() -> Result<CircuitGates> {
    build_gates_with(Completion::Forward)
}

impl CircuitGates {
    pub fn max_unitarity_error(&self) -> f64 {
        [&self.v0, &self.v1, &self.v2, &self.v3, &self.g]
            .iter()
            .map(|m| unitarity_error(m))
            .fold(0.0, f64::max)
    }

    /// Run the circuit on a data state; returns the 16-dimensional output
    /// and the state right after `V2` (before the last query).
    pub fn run(&self, u: &CMatrix, psi: &CVector) -> (CVector, CVector) {
        let id8 = identity(8);
        let q = kron(&id8, u);
        let mut s = kron_vec(&ket("000"), psi);
        s = kron(&identity(2), &self.v0) * s;
        s = &q * s;
        s = &self.v1 * s;
        s = &q * s;
        s = &self.v2 * s;
        let after_v2 = s.clone();
        s = &q * s;
        s = kron(&identity(2), &self.v3) * s;
        (s, after_v2)
    }

    /// Isometry `data → (anc1, anc2, anc3, data)` implemented by the circuit.
    pub fn isometry(&self, u: &CMatrix) -> CMatrix {
        let cols: Vec<CVector> = (0..2).map(|b| self.run(u, &basis_vector(2, b)).0).collect();
        CMatrix::from_columns(&cols)
    }

    /// Kraus operators `⟨a|K` for every ancilla basis state `a` (3 qubits).
    pub fn kraus(&self, u: &CMatrix) -> Vec<CMatrix> {
        let k = self.isometry(u);
        (0..8).map(|a| k.rows(2 * a, 2).into_owned()).collect()
    }
}

/// Choi operator (qubit → qubit) of the channel obtained after tracing all ancillas.
pub fn simulate_shadow_channel(gates: &CircuitGates, u: &CMatrix) -> Result<CMatrix> {
    let err = unitarity_error(u);
    if u.shape() != (2, 2) {
        return Err(Error::Dimension("the circuit queries a qubit unitary".into()));
    }
    if err > crate::comb::UNITARY_TOL {
        return Err(Error::NotUnitary(err));
    }
    Ok(choi_of_kraus(&gates.kraus(u)))
}

/// Postselect the register (anc2, anc3) on `|00⟩`: returns the outcome
/// probability for a maximally mixed input and the normalized conditional Choi.
pub fn postselected_inversion(gates: &CircuitGates, u: &CMatrix) -> Result<(f64, CMatrix)> {
    let kraus = gates.kraus(u);
    // ancilla index = anc1*4 + reg; keep reg = 0
    let kept: Vec<CMatrix> = [0usize, 4].iter().map(|&a| kraus[a].clone()).collect();
    let choi = choi_of_kraus(&kept);
    let prob = kept.iter().map(|k| (k.adjoint() * k).trace().re).sum::<f64>() / 2.0;
    if prob <= 0.0 {
        return Err(Error::Numerical("postselection outcome has zero probability".into()));
    }
    Ok((prob, choi / c64(prob, 0.0)))
}

/// Package the circuit as a three-slot sequential comb (ancillas as memory).
pub fn circuit_comb(gates: &CircuitGates) -> Result<CombChoi> {
    let lay = |pairs: &[(&str, usize)]| {
        Layout::new(pairs.iter().map(|p| p.1).collect(), pairs.iter().map(|p| p.0).collect())
    };
    // encoder: |ψ⟩ ↦ (I ⊗ V0)|000⟩|ψ⟩ with outputs (A1 = ancillas, I1 = data)
    let init = CMatrix::from_fn(16, 2, |r, c| if r == c { ONE } else { ZERO });
    let e1 = kron(&identity(2), &gates.v0) * init;
    let e1 = IndexedOperator::new(choi_of_unitary(&e1), lay(&[("P", 2), ("A1", 8), ("I1", 2)])?)?;
    let e2 = IndexedOperator::new(choi_of_unitary(&gates.v1), lay(&[("A1", 8), ("O1", 2), ("A2", 8), ("I2", 2)])?)?;
    let e3 = IndexedOperator::new(choi_of_unitary(&gates.v2), lay(&[("A2", 8), ("O2", 2), ("A3", 8), ("I3", 2)])?)?;
    let last = kron(&identity(2), &gates.v3);
    let kraus: Vec<CMatrix> = (0..8).map(|a| last.rows(2 * a, 2).into_owned()).collect();
    let dec = IndexedOperator::new(choi_of_kraus(&kraus), lay(&[("A3", 8), ("O3", 2), ("F", 2)])?)?;
    let op = link_product(&link_product(&link_product(&e1, &e2)?, &e3)?, &dec)?;
    let spec = CombSpec::new(2, 3, Architecture::Sequential)?;
    let labels = spec.labels();
    let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
    Ok(CombChoi { spec, op: op.reorder(&refs)? })
}

/// Fitted coefficients of `N_U(ρ) = p U†ρU + (1−p) ZU†ρUZ + r (U†ρUZ − ZU†ρU)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructureFit {
    pub p: f64,
    pub r_re: f64,
    pub r_im: f64,
    /// Frobenius norm of the Choi residual of the fit.
    pub residual: f64,
}

impl StructureFit {
    pub fn r_abs2(&self) -> f64 {
        self.r_re * self.r_re + self.r_im * self.r_im
    }

    /// `0 ≤ p ≤ 1`, `Re r = 0`, `|r|² ≤ p(1−p)` within `tol`.
    pub fn satisfies_constraints(&self, tol: f64) -> bool {
        self.p >= -tol && self.p <= 1.0 + tol && self.r_re.abs() <= tol && self.r_abs2() <= self.p * (1.0 - self.p) + tol
    }
}

/// Least-squares fit of a qubit channel Choi to the structure family for `u`.
pub fn fit_structure(choi: &CMatrix, u: &CMatrix) -> StructureFit {
    let z = pauli_z();
    let ud = u.adjoint();
    let a = choi_of_map(2, |rho| &ud * rho * u);
    let b = choi_of_map(2, |rho| &z * &ud * rho * u * &z);
    let dm = choi_of_map(2, |rho| &ud * rho * u * &z - &z * &ud * rho * u);
    let target = choi - &b;
    let basis = [&a - &b, dm.clone(), &dm * I];
    let n = target.len();
    let mut lhs = DMatrix::<f64>::zeros(2 * n, 3);
    let mut rhs = DVector::<f64>::zeros(2 * n);
    for (k, m) in basis.iter().enumerate() {
        for (i, z) in m.iter().enumerate() {
            lhs[(i, k)] = z.re;
            lhs[(n + i, k)] = z.im;
        }
    }
    for (i, z) in target.iter().enumerate() {
        rhs[i] = z.re;
        rhs[n + i] = z.im;
    }
    let sol = lhs
        .clone()
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .unwrap_or_else(|_| DVector::zeros(3));
    let resid = (&lhs * &sol - &rhs).norm();
    StructureFit { p: sol[0], r_re: sol[1], r_im: sol[2], residual: resid }
}

/// Choi of `M_U(ρ) = ½ U†ρU + ½ Z U†ρU Z`.
pub fn mixture_channel(u: &CMatrix) -> CMatrix {
    let z = pauli_z();
    let ud = u.adjoint();
    let s = c64(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    choi_of_kraus(&[&ud * s, &z * &ud * s])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSample {
    pub p: f64,
    pub r_im: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitReport {
    pub trials: usize,
    pub states_per_trial: usize,
    pub seed: u64,
    pub max_gate_unitarity_error: f64,
    pub max_shadow_residual: f64,
    pub max_first_ancilla_leak: f64,
    pub max_fit_residual: f64,
    pub fit_constraints_hold: bool,
    pub fits: Vec<FitSample>,
    pub postselection_probability_min: f64,
    pub postselection_probability_max: f64,
    pub max_conditional_choi_error: f64,
    pub passed: bool,
}

/// Run the circuit checks over `trials` Haar unitaries.
pub fn verify_circuit(trials: usize, states: usize, seed: RngSeed, tol: f64) -> Result<CircuitReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be positive".into()));
    }
    let gates = build_gates()?;
    let z = pauli_z();
    let mut rng = seed.rng();
    let mut max_res: f64 = 0.0;
    let mut leak: f64 = 0.0;
    let mut max_fit: f64 = 0.0;
    let mut constraints = true;
    let mut fits = Vec::with_capacity(trials);
    let (mut pmin, mut pmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut max_cond: f64 = 0.0;
    for _ in 0..trials {
        let u = crate::tensor::haar_unitary(2, &mut rng);
        let choi = simulate_shadow_channel(&gates, &u)?;
        for _ in 0..states {
            let rho = crate::tensor::random_density(2, false, &mut rng);
            let out = crate::tensor::apply_choi(&choi, 2, &rho);
            let lhs = (out * &z).trace();
            let rhs = (u.adjoint() * &rho * &u * &z).trace();
            max_res = max_res.max((lhs - rhs).norm());
        }
        let psi = crate::tensor::random_pure_state(2, &mut rng);
        let (_, mid) = gates.run(&u, &psi);
        leak = leak.max(mid.rows(8, 8).norm_squared());
        let fit = fit_structure(&choi, &u);
        max_fit = max_fit.max(fit.residual);
        constraints &= fit.satisfies_constraints(1e-8);
        fits.push(FitSample { p: fit.p, r_im: fit.r_im, residual: fit.residual });
        let (prob, cond) = postselected_inversion(&gates, &u)?;
        pmin = pmin.min(prob);
        pmax = pmax.max(prob);
        max_cond = max_cond.max(crate::tensor::max_abs_diff(&cond, &choi_of_unitary(&u.adjoint())));
    }
    let gate_err = gates.max_unitarity_error();
    let passed = gate_err < 1e-12
        && max_res < tol
        && leak < tol
        && max_fit < 1e-8
        && constraints
        && (pmin - 1.0 / 3.0).abs() < tol
        && (pmax - 1.0 / 3.0).abs() < tol
        && max_cond < tol;
    Ok(CircuitReport {
        trials,
        states_per_trial: states,
        seed: seed.0,
        max_gate_unitarity_error: gate_err,
        max_shadow_residual: max_res,
        max_first_ancilla_leak: leak,
        max_fit_residual: max_fit,
        fit_constraints_hold: constraints,
        fits,
        postselection_probability_min: pmin,
        postselection_probability_max: pmax,
        max_conditional_choi_error: max_cond,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{approx_eq, haar_unitary, max_abs_diff, random_density, random_pure_state};

    #[test]
    fn gates_are_unitary_and_match_definitions() {
        let g = build_gates().unwrap();
        assert!(g.max_unitarity_error() < 1e-12);
        let (w, t) = g_relations();
        for (wi, ti) in w.iter().zip(&t) {
            assert!((&g.g * wi - ti).norm() < 1e-12);
        }
        let (dom, img) = v1_partial();
        for (d, i) in dom.iter().zip(&img) {
            assert!((&g.v1 * d - i).norm() < 1e-12);
        }
    }

    #[test]
    fn first_step_prepares_pauli_superposition() {
        let g = build_gates().unwrap();
        let mut rng = RngSeed(1).rng();
        let p = paulis();
        for _ in 0..10 {
            let psi = random_pure_state(2, &mut rng);
            let s = &g.v0 * kron_vec(&ket("00"), &psi);
            let mut expected = CVector::zeros(8);
            for j in 0..4 {
                expected += kron_vec(&basis_vector(4, j), &(&p[j] * &psi)) * c64(0.5, 0.0);
            }
            assert!((s - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn shadow_identity_holds() {
        let g = build_gates().unwrap();
        let mut rng = RngSeed(2).rng();
        let z = pauli_z();
        for _ in 0..20 {
            let u = haar_unitary(2, &mut rng);
            let choi = simulate_shadow_channel(&g, &u).unwrap();
            for _ in 0..5 {
                let rho = random_density(2, false, &mut rng);
                let out = crate::tensor::apply_choi(&choi, 2, &rho);
                let lhs = (out * &z).trace();
                let rhs = (u.adjoint() * &rho * &u * &z).trace();
                assert!((lhs - rhs).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn completion_independence_and_phase_invariance() {
        let a = build_gates_with(Completion::Forward).unwrap();
        let b = build_gates_with(Completion::Reverse).unwrap();
        assert!(max_abs_diff(&a.v1, &b.v1) > 1e-3);
        let mut rng = RngSeed(3).rng();
        for _ in 0..10 {
            let u = haar_unitary(2, &mut rng);
            let ca = simulate_shadow_channel(&a, &u).unwrap();
            let cb = simulate_shadow_channel(&b, &u).unwrap();
            assert!(approx_eq(&ca, &cb, 1e-10));
            let phased = &u * c64(0.3f64.cos(), 0.3f64.sin());
            assert!(approx_eq(&ca, &simulate_shadow_channel(&a, &phased).unwrap(), 1e-10));
        }
    }

    #[test]
    fn postselection() {
        let g = build_gates().unwrap();
        let (p, c) = postselected_inversion(&g, &identity(2)).unwrap();
        assert!((p - 1.0 / 3.0).abs() < 1e-10);
        assert!(approx_eq(&c, &choi_of_unitary(&identity(2)), 1e-10));
    }

    #[test]
    fn structure_fits() {
        let mut rng = RngSeed(4).rng();
        let u = haar_unitary(2, &mut rng);
        let z = pauli_z();
        let f = fit_structure(&choi_of_unitary(&u.adjoint()), &u);
        assert!((f.p - 1.0).abs() < 1e-10 && f.r_abs2() < 1e-20 && f.residual < 1e-10);
        let f = fit_structure(&choi_of_unitary(&(&z * u.adjoint())), &u);
        assert!(f.p.abs() < 1e-10 && f.r_abs2() < 1e-20);
        let f = fit_structure(&mixture_channel(&u), &u);
        assert!((f.p - 0.5).abs() < 1e-12 && f.r_abs2() < 1e-24 && f.residual < 1e-12);
    }

    #[test]
    fn circuit_comb_reproduces_channel() {
        let g = build_gates().unwrap();
        let c = circuit_comb(&g).unwrap();
        assert!(c.validate(1e-9).unwrap().valid);
        let mut rng = RngSeed(5).rng();
        let o = crate::comb::Observable::pauli_z();
        for _ in 0..5 {
            let u = haar_unitary(2, &mut rng);
            let n = crate::comb::apply_comb(&c, &u).unwrap();
            assert!(approx_eq(&n.matrix, &simulate_shadow_channel(&g, &u).unwrap(), 1e-10));
            assert!(crate::comb::shadow_residual(&c, &o, &u).unwrap() < 1e-9);
        }
    }

    #[test]
    fn report_rejects_zero_trials() {
        assert!(verify_circuit(0, 1, RngSeed(1), 1e-10).is_err());
    }
}
