//! End-to-end acceptance run: one PASS/FAIL line per criterion.
//!
//! Built with `harness = false` so the report is printed as-is; the process
//! exits nonzero when any criterion fails.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::Rng;
use shadow_inversion::circuit::{
    build_gates, circuit_comb, fit_structure, mixture_channel, postselected_inversion, simulate_shadow_channel,
    verify_circuit,
};
use shadow_inversion::comb::{
    dual_choi, dual_on_observable, objective_estimate, random_comb, symmetry_violation, Architecture, CombChoi,
    CombSpec, Observable,
};
use shadow_inversion::reduction::{assemble_full, assemble_reduced, solve_problem, AssembleOptions, ReducedSolution};
use shadow_inversion::rep::{
    combined_schur_basis, count_ssyt, count_syt, enumerate_ssyt, enumerate_syt, factorial, hook_length, partitions,
    schur_basis_unitary_group, variable_count, variable_count_bound, Partition,
};
use shadow_inversion::solver::{
    epigraph_formulate, project_psd, project_soc, smat, solve, svec, AffineForm, EpigraphSpec, PsdConstraint,
    SolveStatus, SolverSettings,
};
use shadow_inversion::tensor::{
    apply_choi, choi_of_kraus, choi_vector, diag_real, haar_isometry, haar_unitary, kron_all, pauli_z,
    random_density, random_hermitian, CMatrix, RngSeed, C64,
};

type Outcome = std::result::Result<String, String>;

struct Report {
    failures: usize,
}

impl Report {
    fn run(&mut self, id: usize, name: &str, budget: Option<Duration>, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let mut outcome = f();
        let took = start.elapsed();
        if let (Some(b), Ok(detail)) = (budget, &outcome) {
            if took > b {
                outcome = Err(format!("{detail}; runtime {:.1}s exceeds {:.0}s", took.as_secs_f64(), b.as_secs_f64()));
            }
        }
        match outcome {
            Ok(detail) => println!("PASS  {id:>2}. {name}: {detail} [{:.1}s]", took.as_secs_f64()),
            Err(detail) => {
                self.failures += 1;
                println!("FAIL  {id:>2}. {name}: {detail} [{:.1}s]", took.as_secs_f64());
            }
        }
    }
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn criterion_1() -> Outcome {
    let r = verify_circuit(1000, 10, RngSeed(1), 1e-10).map_err(|e| e.to_string())?;
    check(
        r.max_shadow_residual < 1e-10 && r.max_gate_unitarity_error < 1e-12,
        format!("max |tr[N_U(ρ)Z] − tr[U†ρUZ]| = {:.2e} over 1000 U × 10 ρ", r.max_shadow_residual),
    )
}

fn criterion_2() -> Outcome {
    let gates = build_gates().map_err(|e| e.to_string())?;
    let mut rng = RngSeed(2).rng();
    let (mut prob_err, mut fid_err): (f64, f64) = (0.0, 0.0);
    for _ in 0..50 {
        let u = haar_unitary(2, &mut rng);
        let (p, cond) = postselected_inversion(&gates, &u).map_err(|e| e.to_string())?;
        prob_err = prob_err.max((p - 1.0 / 3.0).abs());
        // process fidelity ⟨⟨U†|J|U†⟩⟩ / d² for a trace-d Choi
        let v = choi_vector(&u.adjoint());
        let f = (v.adjoint() * &cond * &v)[(0, 0)].re / 4.0;
        fid_err = fid_err.max((1.0 - f).abs());
    }
    check(
        prob_err < 1e-10 && fid_err < 1e-10,
        format!("|p − 1/3| ≤ {prob_err:.2e}, |1 − F| ≤ {fid_err:.2e} over 50 U"),
    )
}

fn criterion_3() -> Outcome {
    let gates = build_gates().map_err(|e| e.to_string())?;
    let mut rng = RngSeed(3).rng();
    let (mut worst_res, mut worst_re, mut worst_slack): (f64, f64, f64) = (0.0, 0.0, f64::INFINITY);
    let mut p_range = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..100 {
        let u = haar_unitary(2, &mut rng);
        let choi = simulate_shadow_channel(&gates, &u).map_err(|e| e.to_string())?;
        let fit = fit_structure(&choi, &u);
        worst_res = worst_res.max(fit.residual);
        worst_re = worst_re.max(fit.r_re.abs());
        worst_slack = worst_slack.min(fit.p * (1.0 - fit.p) - fit.r_abs2());
        p_range = (p_range.0.min(fit.p), p_range.1.max(fit.p));
    }
    let u = haar_unitary(2, &mut rng);
    let m = fit_structure(&mixture_channel(&u), &u);
    let mix_err = (m.p - 0.5).abs().max(m.r_re.abs()).max(m.r_im.abs());
    check(
        p_range.0 >= 0.0 && p_range.1 <= 1.0 && worst_re < 1e-10 && worst_slack >= -1e-10 && worst_res < 1e-8 && mix_err < 1e-12,
        format!(
            "p ∈ [{:.4}, {:.4}], max|Re r| = {worst_re:.1e}, min(p(1−p) − |r|²) = {worst_slack:.2e}, fit residual ≤ {worst_res:.1e}; mixture off by {mix_err:.1e}",
            p_range.0, p_range.1
        ),
    )
}

const TABLE1: [(Architecture, [f64; 3]); 2] =
    [(Architecture::Sequential, [0.7058, 0.1894, 0.0]), (Architecture::Parallel, [0.7058, 0.4707, 0.3536])];

struct Solved {
    objective: f64,
    solution: ReducedSolution,
    seconds: f64,
}

fn solve_cell(o: &CMatrix, arch: Architecture, t: usize, samples: usize, seed: u64, full: bool) -> Result<Solved, String> {
    let start = Instant::now();
    let spec = CombSpec::new(2, t, arch).map_err(|e| e.to_string())?;
    let opts = AssembleOptions { samples, seed: RngSeed(seed), ..Default::default() };
    let p = if full { assemble_full(o, spec, &opts) } else { assemble_reduced(o, spec, &opts) }.map_err(|e| e.to_string())?;
    let solution = solve_problem(&p, &SolverSettings::default()).map_err(|e| e.to_string())?;
    if solution.result.status != SolveStatus::Optimal {
        return Err(format!("{arch} t={t} stopped with {:?}", solution.result.status));
    }
    let objective = p.objective_value(&solution.result.x[..p.variable_count()]);
    Ok(Solved { objective, solution, seconds: start.elapsed().as_secs_f64() })
}

type Cells = Vec<(Architecture, usize, Solved)>;

fn criterion_4(cells: &mut Cells, extra: &mut Vec<Solved>) -> Outcome {
    let z = pauli_z();
    let mut parts = Vec::new();
    let mut ok = true;
    for (arch, reference) in TABLE1 {
        for t in 1..=3 {
            let s = solve_cell(&z, arch, t, 2000, 42, false)?;
            let within = (s.objective - reference[t - 1]).abs() <= 0.02;
            let in_time = s.seconds < if t <= 2 { 120.0 } else { 1200.0 };
            ok &= within && in_time;
            parts.push(format!("{}{t}={:.4}", &arch.to_string()[..3], s.objective));
            cells.push((arch, t, s));
        }
    }
    let zero = cells.iter().find(|c| c.0 == Architecture::Sequential && c.1 == 3).map_or(f64::NAN, |c| c.2.objective);
    let second = solve_cell(&z, Architecture::Sequential, 3, 2000, 7, false)?;
    ok &= zero <= 1e-3 && second.objective <= 1e-3;
    parts.push(format!("seq3@seed7={:.1e}", second.objective));
    extra.push(second);
    check(ok, parts.join(", "))
}

fn criterion_5(extra: &mut Vec<Solved>) -> Outcome {
    let z = pauli_z();
    let mut parts = Vec::new();
    let mut ok = true;
    for (t, samples) in [(1, 2000), (2, 200)] {
        let full = solve_cell(&z, Architecture::Sequential, t, samples, 42, true)?;
        let red = solve_cell(&z, Architecture::Sequential, t, samples, 42, false)?;
        let gap = (full.objective - red.objective).abs();
        ok &= gap <= 5e-3;
        parts.push(format!(
            "t={t} ({samples} samples): full {:.5} vs reduced {:.5}, |Δ| = {gap:.1e}",
            full.objective, red.objective
        ));
        extra.push(full);
        extra.push(red);
    }
    check(ok, parts.join("; "))
}

fn criterion_6() -> Outcome {
    let n = variable_count(&[3, 3], 3);
    let mut ok = n == 2304;
    let mut parts = vec![format!("N(6,3,(3,3)) = {n}")];
    let mut counts = Vec::new();
    for (t, expected) in [(1, 8u128), (2, 60), (3, 560)] {
        let basis = combined_schur_basis(&pauli_z(), t).map_err(|e| e.to_string())?;
        let sum = basis.basis.parameter_count() as u128;
        ok &= sum == expected && variable_count(&[1, 1], t) == expected;
        counts.push(sum.to_string());
    }
    parts.push(format!("Σm_r² for Z, t=1..3 = {}", counts.join("/")));
    let mut grid = 0;
    for d in 1..=6 {
        for spectrum in partitions(d, d) {
            for t in 1..=4 {
                grid += 1;
                ok &= variable_count(spectrum.parts(), t) <= variable_count_bound(d, t);
            }
        }
    }
    parts.push(format!("bound holds on {grid} (d, spectrum, t) points"));
    check(ok, parts.join(", "))
}

fn criterion_7() -> Outcome {
    let hook = hook_length(&Partition(vec![4, 3, 1]));
    let mut ok = hook == 576;
    let mut shapes = 0;
    for n in 1..=6 {
        for lambda in partitions(n, n) {
            shapes += 1;
            let syt = enumerate_syt(&lambda);
            ok &= syt.len() as u128 == count_syt(&lambda) && count_syt(&lambda) * hook_length(&lambda) == factorial(n);
            ok &= syt.iter().all(|t| t.is_valid());
            for d in 1..=4 {
                let ssyt = enumerate_ssyt(&lambda, d);
                ok &= ssyt.len() as u128 == count_ssyt(&lambda, d) && ssyt.iter().all(|t| t.is_valid());
            }
        }
    }
    let mut rng = RngSeed(7).rng();
    let mut off: f64 = 0.0;
    let mut orth: f64 = 0.0;
    for (d, n) in [(2, 2), (2, 3), (3, 2)] {
        let b = schur_basis_unitary_group(d, n).map_err(|e| e.to_string())?;
        orth = orth.max(b.orthogonality_error());
        for _ in 0..20 {
            let u = haar_unitary(d, &mut rng);
            off = off.max(b.off_block_residual(&kron_all(std::iter::repeat_n(&u, n))));
        }
    }
    for (o, t) in [(pauli_z(), 1), (pauli_z(), 2), (diag_real(&[1.0, 1.0, 0.0]), 1)] {
        let cb = combined_schur_basis(&o, t).map_err(|e| e.to_string())?;
        orth = orth.max(cb.basis.orthogonality_error());
        for _ in 0..20 {
            let u = haar_unitary(o.nrows(), &mut rng);
            let (v, w) = cb.sample_symmetry(&mut rng);
            off = off.max(cb.basis.off_block_residual(&cb.representation(&u, &v, &w)));
        }
    }
    // Q is stored as a real matrix, so "real within 1e-10" reduces to orthogonality.
    ok &= off < 1e-10 && orth < 1e-10;
    check(
        ok,
        format!("H(4,3,1) = {hook}, {shapes} shapes enumerated, off-block ≤ {off:.1e}, ‖QᵀQ − I‖ ≤ {orth:.1e}"),
    )
}

fn random_channel<R: rand::Rng>(din: usize, dout: usize, kraus: usize, rng: &mut R) -> CMatrix {
    let v = haar_isometry(dout * kraus, din, rng);
    let ks: Vec<CMatrix> = (0..kraus).map(|k| v.rows(k * dout, dout).into_owned()).collect();
    choi_of_kraus(&ks)
}

fn criterion_8() -> Outcome {
    let mut rng = RngSeed(8).rng();
    let mut worst_valid: f64 = 0.0;
    let mut all_valid = true;
    let mut rejected = 0;
    let mut combs = 0;
    for arch in [Architecture::Sequential, Architecture::Parallel] {
        for k in 0..50 {
            let t = 1 + k % 2;
            let spec = CombSpec::new(2, t, arch).map_err(|e| e.to_string())?;
            let c = random_comb(spec, 2 + k % 3, &mut rng).map_err(|e| e.to_string())?;
            let r = c.validate(1e-10).map_err(|e| e.to_string())?;
            all_valid &= r.valid;
            worst_valid = worst_valid.max(r.max_residual());
            combs += 1;
            let n = c.op.matrix.nrows();
            let h = random_hermitian(n, &mut rng) * C64::new(1e-3, 0.0);
            let bad = CombChoi::new(spec, &c.op.matrix + h).map_err(|e| e.to_string())?;
            if !bad.validate(1e-10).map_err(|e| e.to_string())?.valid {
                rejected += 1;
            }
        }
    }
    let (mut dual_err, mut choi_err): (f64, f64) = (0.0, 0.0);
    for k in 0..50 {
        let (din, dout) = (2 + k % 2, 2 + (k / 2) % 3);
        let j = random_channel(din, dout, 1 + k % 4, &mut rng);
        let rho = random_density(din, false, &mut rng);
        let o = random_hermitian(dout, &mut rng);
        let lhs = (apply_choi(&j, din, &rho) * &o).trace();
        let dual = dual_on_observable(&j, din, &o);
        dual_err = dual_err.max((lhs - (&rho * &dual).trace()).norm());
        choi_err = choi_err.max(max_abs(&(apply_choi(&dual_choi(&j, din), dout, &o) - dual)));
    }
    check(
        all_valid && rejected == combs && dual_err < 1e-10 && choi_err < 1e-10,
        format!(
            "{combs} random combs valid (max residual {worst_valid:.1e}), {rejected}/{combs} perturbed rejected, dual identity {dual_err:.1e}, F Eᵀ F {choi_err:.1e}"
        ),
    )
}

fn criterion_9(cells: &Cells) -> Outcome {
    let o = Observable::pauli_z();
    let mut rng = RngSeed(9).rng();
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (arch, t, s) in cells {
        let v = symmetry_violation(&s.solution.comb, &o, 20, &mut rng).map_err(|e| e.to_string())?;
        worst = worst.max(v);
        parts.push(format!("{}{t} {v:.1e}", &arch.to_string()[..3]));
    }
    // The explicit circuit is optimal for t = 3 but need not be symmetric; its
    // objective is recorded as a cross-check of the zero entry.
    let circuit = circuit_comb(&build_gates().map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let circuit_obj = objective_estimate(&circuit, &o, 200, RngSeed(9)).map_err(|e| e.to_string())?;
    check(
        worst < 1e-8 && circuit_obj < 1e-10,
        format!("max ‖[C, g]‖ = {worst:.1e} ({}); circuit comb objective {circuit_obj:.1e}", parts.join(", ")),
    )
}

fn closed_form_problems() -> Result<Vec<(String, f64)>, String> {
    let tight = SolverSettings { eps_primal: 1e-10, eps_dual: 1e-10, eps_gap: 1e-10, ..Default::default() };
    let mut errs = Vec::new();

    let zero = EpigraphSpec { residuals: vec![vec![AffineForm::new(vec![], 0.0)]], residual_weight: 1.0, ..Default::default() };
    let r = solve(&epigraph_formulate(&zero).map_err(|e| e.to_string())?, &tight).map_err(|e| e.to_string())?;
    errs.push(("zero map".to_string(), r.objective.abs().max(r.x[0].abs())));

    let mut rng = RngSeed(10).rng();
    let b: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
    let nearest = EpigraphSpec {
        n_vars: 6,
        residuals: vec![(0..6).map(|j| AffineForm::new(vec![(j, 1.0)], -b[j])).collect()],
        residual_weight: 1.0,
        ..Default::default()
    };
    let r = solve(&epigraph_formulate(&nearest).map_err(|e| e.to_string())?, &tight).map_err(|e| e.to_string())?;
    let xerr = (0..6).map(|j| (r.x[j] - b[j]).abs()).fold(r.objective.abs(), f64::max);
    errs.push(("‖x − b‖".to_string(), xerr));

    let schur = EpigraphSpec {
        n_vars: 3,
        linear_objective: vec![(0, 1.0), (2, 1.0)],
        equalities: vec![AffineForm::new(vec![(0, 1.0)], -1.0), AffineForm::new(vec![(1, 1.0)], -2.0)],
        psd: vec![PsdConstraint {
            side: 2,
            entries: (0..3).map(|j| AffineForm::new(vec![(j, 1.0)], 0.0)).collect(),
        }],
        ..Default::default()
    };
    let r = solve(&epigraph_formulate(&schur).map_err(|e| e.to_string())?, &tight).map_err(|e| e.to_string())?;
    errs.push(("min tr X".to_string(), (r.objective - 5.0).abs().max((r.x[2] - 4.0).abs())));
    Ok(errs)
}

fn psd_oracle_error(x: &DMatrix<f64>) -> (f64, f64) {
    let n = x.nrows();
    let mut v = svec(x);
    project_psd(&mut v, n);
    let p = smat(&v, n);
    let eig = nalgebra::SymmetricEigen::new(x.clone());
    let clamped = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0)));
    let oracle = &eig.eigenvectors * clamped * eig.eigenvectors.transpose();
    let min_eig = nalgebra::SymmetricEigen::new(p.clone()).eigenvalues.min();
    ((p - oracle).amax(), min_eig)
}

fn soc_oracle(z: &[f64]) -> Vec<f64> {
    let (t, v) = (z[0], &z[1..]);
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nv <= t {
        z.to_vec()
    } else if nv <= -t {
        vec![0.0; z.len()]
    } else {
        let a = (nv + t) / 2.0;
        std::iter::once(a).chain(v.iter().map(|x| a * x / nv)).collect()
    }
}

fn criterion_10(merit_runs: &[(&str, &ReducedSolution)]) -> Outcome {
    let problems = closed_form_problems()?;
    let closed_ok = problems.iter().all(|(_, e)| *e < 1e-8);
    let mut rng = RngSeed(11).rng();
    let (mut psd_err, mut psd_min): (f64, f64) = (0.0, 0.0);
    let mut soc_err: f64 = 0.0;
    for k in 0..1000 {
        let n = 1 + k % 8;
        let a = DMatrix::<f64>::from_fn(n, n, |_, _| rng.random_range(-2.0..2.0));
        let (e, m) = psd_oracle_error(&((&a + a.transpose()) * 0.5));
        psd_err = psd_err.max(e);
        psd_min = psd_min.min(m);
        let len = 2 + k % 7;
        let mut z: Vec<f64> = (0..len).map(|_| rng.random_range(-2.0..2.0)).collect();
        // exercise all three regimes
        match k % 3 {
            0 => z[0] = 3.0 * len as f64,
            1 => z[0] = -3.0 * len as f64,
            _ => {}
        }
        let oracle = soc_oracle(&z);
        project_soc(&mut z);
        soc_err = soc_err.max(z.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    // Merit is the fixed-point residual; within a penalty epoch it must not
    // rise by more than round-off.
    let mut rises = Vec::new();
    let mut gaps_ok = true;
    for (name, s) in merit_runs {
        let h = &s.result.merit_history;
        let worst = h
            .windows(2)
            .filter(|w| w[0].epoch == w[1].epoch)
            .map(|w| (w[1].value - w[0].value) / w[0].value.max(1e-300))
            .fold(0.0, f64::max);
        rises.push(format!("{name} {worst:.1e}"));
        gaps_ok &= s.result.residuals.gap < s.result.settings.eps_gap;
        if worst > 1e-9 {
            gaps_ok = false;
        }
    }
    let detail = format!(
        "closed forms {}; PSD oracle {psd_err:.1e} (min eig {psd_min:.1e}); SOC oracle {soc_err:.1e}; max relative merit rise per epoch: {}",
        problems.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", "),
        rises.join(", ")
    );
    check(closed_ok && psd_err < 1e-10 && psd_min >= -1e-10 && soc_err < 1e-14 && gaps_ok, detail)
}

fn main() {
    // `cargo test` may pass harness flags such as `--nocapture`; only a
    // filter that excludes this target makes us skip.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    let mut report = Report { failures: 0 };
    let mut cells = Cells::new();
    let mut extra = Vec::new();
    report.run(1, "circuit correctness", Some(Duration::from_secs(30)), criterion_1);
    report.run(2, "postselected inversion", Some(Duration::from_secs(10)), criterion_2);
    report.run(3, "channel structure", None, criterion_3);
    report.run(4, "sequential vs parallel table", None, || criterion_4(&mut cells, &mut extra));
    report.run(5, "reduction equivalence", None, || criterion_5(&mut extra));
    report.run(6, "counting", Some(Duration::from_secs(5)), criterion_6);
    report.run(7, "representation machinery", None, criterion_7);
    report.run(8, "comb layer", None, criterion_8);
    report.run(9, "symmetry of optimal combs", None, || criterion_9(&cells));
    let mut runs: Vec<(String, &ReducedSolution)> = cells
        .iter()
        .map(|(a, t, s)| (format!("{}{t}", &a.to_string()[..3]), &s.solution))
        .collect();
    runs.extend(extra.iter().enumerate().map(|(k, s)| (format!("extra{k}"), &s.solution)));
    let named: Vec<(&str, &ReducedSolution)> = runs.iter().map(|(n, s)| (n.as_str(), *s)).collect();
    report.run(10, "solver suite", None, || criterion_10(&named));
    println!("{} of 10 criteria passed", 10 - report.failures);
    if report.failures > 0 {
        std::process::exit(1);
    }
}
