//! Scenario execution: dispatch the requested analysis, assemble the report
//! document, and render trajectory CSV dumps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cli::scenario::{amplitudes_to_state, Analysis, Scenario};
use crate::cyclic::{
    all_cyclic_analysis, guaranteed_cyclic_family, rational_superposition_family, CyclicReport,
    Tolerances,
};
use crate::precess::{integrate_e, Trajectory};
use crate::propagate::{
    oracle_propagator, propagator_closed_form, schrodinger_residual, PropagatorForm,
};
use crate::spinalg::SpinRep;
use crate::{
    max_norm, max_norm_vec, max_norm_vec3, phase_gap, reduce_phase, CMatrix, CVector, Complex64,
    Error, Result, Vec3,
};

/// The report document written by a run: the resolved scenario, one result
/// record per report of the analysis, and the diagnostics that make the
/// numbers reproducible.
#[derive(Serialize)]
pub struct Report {
    pub scenario: Scenario,
    pub results: Vec<ResultRecord>,
    pub diagnostics: Diagnostics,
}

/// One result of an analysis; the shape depends on the analysis kind.
#[derive(Serialize)]
#[serde(untagged)]
pub enum ResultRecord {
    Propagate(Box<PropagateResult>),
    Cyclic(CyclicReport),
    Check(CheckResult),
}

/// Resolved knobs the numbers depend on, echoed into every report.
#[derive(Serialize)]
pub struct Diagnostics {
    pub analysis: String,
    pub steps: usize,
    pub oracle_steps: usize,
    pub seed: u64,
    pub tolerances: Tolerances,
    pub warnings: Vec<String>,
}

/// One-period propagator with its residual diagnostics.
#[derive(Serialize)]
pub struct PropagateResult {
    /// End of the interval.
    pub t: f64,
    /// The propagator, rows of [re, im] entries.
    pub u: Vec<Vec<[f64; 2]>>,
    /// Largest entry gap between the two closed-form assemblies.
    pub form_gap: f64,
    /// Largest entry gap to the stepped reference propagator.
    pub oracle_gap: f64,
    /// Largest entry of U* U - I.
    pub unitarity_residual: f64,
    /// Largest scaled residual of the evolution equation over the grid.
    pub schrodinger_residual: f64,
    /// Phase integral alpha(tau) and its two parts.
    pub alpha: f64,
    pub alpha_geo: f64,
    pub alpha_dyn: f64,
    /// Largest renormalization applied to the trajectory.
    pub renormalization_drift: f64,
    /// Number of recorded pole transits.
    pub pole_events: usize,
}

/// One entry of the verification battery.
#[derive(Serialize)]
pub struct CheckResult {
    pub check: String,
    pub passed: bool,
    /// Worst residual observed; null when the check errored out.
    pub residual: f64,
    pub tolerance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

/// Execute the scenario's analysis and assemble the report document.
pub fn run_scenario(sc: &Scenario, warnings: Vec<String>) -> Result<Report> {
    let rep = sc.rep()?;
    let tol = sc.tolerances();
    let steps = sc.steps();
    let results = match &sc.analysis {
        Analysis::Propagate => vec![ResultRecord::Propagate(Box::new(propagate_result(
            &rep, sc, &tol,
        )?))],
        Analysis::EigenFamily => guaranteed_cyclic_family(&rep, &sc.field, steps, &tol)?
            .into_iter()
            .map(ResultRecord::Cyclic)
            .collect(),
        Analysis::Rational {
            twice_m,
            p,
            n,
            coefficients,
        } => {
            let coeffs: Vec<Complex64> = coefficients
                .iter()
                .map(|[re, im]| Complex64::new(*re, *im))
                .collect();
            vec![ResultRecord::Cyclic(rational_superposition_family(
                &rep, &sc.field, *twice_m, *p, *n, &coeffs, steps, &tol,
            )?)]
        }
        Analysis::AllCyclic { states } => {
            let vs: Vec<CVector> = states.iter().map(|s| amplitudes_to_state(s)).collect();
            all_cyclic_analysis(&rep, &sc.field, &vs, steps, &tol)?
                .into_iter()
                .map(ResultRecord::Cyclic)
                .collect()
        }
        Analysis::VerifySuite => verify_suite(&rep, sc, &tol)?
            .into_iter()
            .map(ResultRecord::Check)
            .collect(),
    };
    Ok(Report {
        scenario: sc.clone(),
        results,
        diagnostics: Diagnostics {
            analysis: sc.analysis.kind().into(),
            steps,
            oracle_steps: sc.oracle_steps(),
            seed: sc.seed(),
            tolerances: tol,
            warnings,
        },
    })
}

fn matrix_rows(u: &CMatrix) -> Vec<Vec<[f64; 2]>> {
    (0..u.nrows())
        .map(|r| (0..u.ncols()).map(|c| [u[(r, c)].re, u[(r, c)].im]).collect())
        .collect()
}

/// Direction at one node, rotated back to the lab when a working frame is
/// active.
fn lab_direction(traj: &Trajectory, node: usize) -> Vec3 {
    match &traj.frame {
        Some(f) => f.to_lab(&traj.e[node]),
        None => traj.e[node],
    }
}

fn propagate_result(rep: &SpinRep, sc: &Scenario, tol: &Tolerances) -> Result<PropagateResult> {
    let traj = integrate_e(&sc.field, sc.e0(), sc.steps(), tol.pole_eps)?;
    let last = traj.len() - 1;
    let pa = propagator_closed_form(rep, &traj, last, PropagatorForm::PhaseAboutZ)?;
    let pb = propagator_closed_form(rep, &traj, last, PropagatorForm::PhaseAboutInitialAxis)?;
    let form_gap = max_norm(&(&pa.u - &pb.u));
    let oracle = oracle_propagator(rep, &sc.field, traj.tau(), sc.oracle_steps())?;
    let oracle_gap = max_norm(&(&pa.u - &oracle));
    let dim = rep.dim();
    let unitarity_residual = max_norm(&(pa.u.adjoint() * &pa.u - CMatrix::identity(dim, dim)));
    let evolution_residual = schrodinger_residual(rep, &sc.field, &traj, PropagatorForm::PhaseAboutZ)?;
    Ok(PropagateResult {
        t: pa.t,
        u: matrix_rows(&pa.u),
        form_gap,
        oracle_gap,
        unitarity_residual,
        schrodinger_residual: evolution_residual,
        alpha: traj.alpha_tau(),
        alpha_geo: *traj.alpha_geo.last().unwrap(),
        alpha_dyn: *traj.alpha_dyn.last().unwrap(),
        renormalization_drift: traj.drift,
        pole_events: traj.pole_events.len(),
    })
}

fn check(name: &str, residual: f64, tolerance: f64) -> CheckResult {
    CheckResult {
        check: name.into(),
        passed: residual <= tolerance,
        residual,
        tolerance,
        detail: None,
    }
}

fn errored_check(name: &str, tolerance: f64, err: &Error) -> CheckResult {
    CheckResult {
        check: name.into(),
        passed: false,
        // Non-finite serializes as null, marking "no number" rather than a
        // large residual.
        residual: f64::NAN,
        tolerance,
        detail: Some(err.to_string()),
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n2 = v.norm_squared();
        if (1e-4..=1.0).contains(&n2) {
            return v / n2.sqrt();
        }
    }
}

/// Interior checkpoint nodes, evenly spaced, never 0 or the last node.
fn checkpoints(len: usize, count: usize) -> Vec<usize> {
    (1..=count)
        .map(|i| (i * (len - 1)) / (count + 1))
        .filter(|&n| n > 0 && n < len - 1)
        .collect()
}

/// The invariant battery: every library-level contract exercised on this
/// scenario's spin and program, each as one pass/fail record. Tolerances are
/// sized for desk-scale programs at the default grids.
fn verify_suite(rep: &SpinRep, sc: &Scenario, tol: &Tolerances) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed());
    let mut checks = Vec::new();

    checks.push(algebra_check(rep));
    checks.push(conjugation_check(rep, &mut rng)?);

    let traj = integrate_e(&sc.field, sc.e0(), sc.steps(), tol.pole_eps)?;
    let last = traj.len() - 1;
    let nodes = {
        let mut n = checkpoints(traj.len(), 8);
        n.push(last);
        n
    };

    // Both closed-form assemblies, along the way and at the end.
    let mut form_gap = 0.0f64;
    let mut unitarity = 0.0f64;
    let dim = rep.dim();
    let eye = CMatrix::identity(dim, dim);
    for &node in &nodes {
        let ua = propagator_closed_form(rep, &traj, node, PropagatorForm::PhaseAboutZ)?.u;
        let ub =
            propagator_closed_form(rep, &traj, node, PropagatorForm::PhaseAboutInitialAxis)?.u;
        form_gap = form_gap.max(max_norm(&(&ua - &ub)));
        unitarity = unitarity.max(max_norm(&(ua.adjoint() * &ua - &eye)));
    }
    checks.push(check("form_agreement", form_gap, 1e-10));
    checks.push(check("unitarity", unitarity, 1e-9));

    let u_tau = propagator_closed_form(rep, &traj, last, PropagatorForm::PhaseAboutZ)?.u;
    let oracle = oracle_propagator(rep, &sc.field, traj.tau(), sc.oracle_steps())?;
    checks.push(check(
        "oracle_agreement",
        max_norm(&(&u_tau - &oracle)),
        1e-6,
    ));

    // The propagator must not depend on which trajectory built it.
    let seed2 = random_unit(&mut rng);
    let traj2 = integrate_e(&sc.field, seed2, sc.steps(), tol.pole_eps)?;
    let u_tau2 = propagator_closed_form(rep, &traj2, traj2.len() - 1, PropagatorForm::PhaseAboutZ)?.u;
    checks.push(check(
        "e0_independence",
        max_norm(&(&u_tau - &u_tau2)),
        1e-6,
    ));

    checks.push(check(
        "evolution_equation_residual",
        schrodinger_residual(rep, &sc.field, &traj, PropagatorForm::PhaseAboutZ)?,
        1e-4,
    ));

    // Eigenstates of s.e(0) stay eigenstates of s.e(t), and their spin
    // vector rides the classical trajectory.
    let e0_lab = lab_direction(&traj, 0);
    let levels: Vec<i32> = rep.twice_m_ladder().collect();
    let mut eigen_residual = 0.0f64;
    let mut vector_residual = 0.0f64;
    for &node in &nodes {
        let u = propagator_closed_form(rep, &traj, node, PropagatorForm::PhaseAboutZ)?.u;
        let e_lab = lab_direction(&traj, node);
        let s_dot_e = rep.spin_dot(&e_lab);
        for &twice_m in &levels {
            let m = twice_m as f64 / 2.0;
            let psi = &u * rep.eigenstate_of_spin_dot(&e0_lab, twice_m)?;
            eigen_residual = eigen_residual
                .max(max_norm_vec(&(&s_dot_e * &psi - &psi * Complex64::new(m, 0.0))));
            let v = rep.spin_expectation(&psi)?;
            vector_residual = vector_residual.max(max_norm_vec3(&(v - e_lab.scale(m))));
        }
    }
    checks.push(check("eigenstate_transport", eigen_residual, 1e-7));
    checks.push(check("spin_vector_transport", vector_residual, 1e-7));

    checks.push(match guaranteed_cyclic_family(rep, &sc.field, sc.steps(), tol) {
        Ok(reports) => {
            let count_ok = reports.len() == rep.dim();
            let worst = reports
                .iter()
                .map(|r| {
                    r.cyclicity_residual
                        .max(phase_gap(r.delta_spectroscopic, r.delta))
                })
                .fold(0.0, f64::max);
            CheckResult {
                check: "guaranteed_family".into(),
                passed: count_ok && worst <= tol.cyclicity,
                residual: worst,
                tolerance: tol.cyclicity,
                detail: (!count_ok).then(|| {
                    format!("expected {} reports, got {}", rep.dim(), reports.len())
                }),
            }
        }
        Err(e) => errored_check("guaranteed_family", tol.cyclicity, &e),
    });

    // Phase reduction: canonical interval, idempotent.
    let mut reduction = 0.0f64;
    for _ in 0..100 {
        let x: f64 = rng.random_range(-50.0..50.0);
        let r = reduce_phase(x);
        reduction = reduction.max((reduce_phase(r) - r).abs());
        if !(r > -std::f64::consts::PI && r <= std::f64::consts::PI) {
            reduction = reduction.max(1.0);
        }
        reduction = reduction.max(phase_gap(x, r));
    }
    checks.push(check("phase_reduction", reduction, 1e-12));

    Ok(checks)
}

fn algebra_check(rep: &SpinRep) -> CheckResult {
    let i = Complex64::i();
    let (sx, sy, sz) = (rep.sx(), rep.sy(), rep.sz());
    let mut worst = 0.0f64;
    // Commutators close cyclically on i times the third matrix.
    worst = worst.max(max_norm(&(sx * sy - sy * sx - sz * i)));
    worst = worst.max(max_norm(&(sy * sz - sz * sy - sx * i)));
    worst = worst.max(max_norm(&(sz * sx - sx * sz - sy * i)));
    // The squared total spin is s(s+1) on the whole space.
    let dim = rep.dim();
    let casimir = sx * sx + sy * sy + sz * sz;
    let expected = CMatrix::identity(dim, dim) * Complex64::new(rep.s() * (rep.s() + 1.0), 0.0);
    worst = worst.max(max_norm(&(casimir - expected)));
    for m in [sx, sy, sz] {
        worst = worst.max(max_norm(&(m.adjoint() - m)));
    }
    check("algebra_invariants", worst, 1e-10)
}

fn conjugation_check(rep: &SpinRep, rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let b = random_unit(rng);
        let xi: f64 = rng.random_range(-10.0..10.0);
        let a = rep.exp_i_spin(xi, &b)?;
        let ainv = rep.exp_i_spin(-xi, &b)?;
        let sb = rep.spin_dot(&b);
        let spin = [rep.sx(), rep.sy(), rep.sz()];
        let cross = [
            rep.sz().scale(b.y) - rep.sy().scale(b.z),
            rep.sx().scale(b.z) - rep.sz().scale(b.x),
            rep.sy().scale(b.x) - rep.sx().scale(b.y),
        ];
        for k in 0..3 {
            let lhs = &a * spin[k] * &ainv;
            let bk = [b.x, b.y, b.z][k];
            let rhs = spin[k].scale(xi.cos())
                + cross[k].scale(xi.sin())
                + sb.scale(bk * (1.0 - xi.cos()));
            worst = worst.max(max_norm(&(lhs - rhs)));
        }
    }
    Ok(check("conjugation_rotation", worst, 1e-10))
}

/// Render the seeding trajectory as CSV. The direction columns are lab
/// frame; the angle and phase columns are native to the integration frame,
/// which is rotated away from the lab only when the seed starts at the south
/// pole.
pub fn trajectory_csv(sc: &Scenario) -> Result<Vec<u8>> {
    use std::io::Write as _;
    let tol = sc.tolerances();
    let traj = integrate_e(&sc.field, sc.e0(), sc.steps(), tol.pole_eps)?;
    let mut out = Vec::new();
    writeln!(out, "t,ex,ey,ez,theta,phi_unwrapped,alpha_geo,alpha_dyn")?;
    for i in 0..traj.len() {
        let e = lab_direction(&traj, i);
        writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            traj.times[i],
            e.x,
            e.y,
            e.z,
            traj.theta[i],
            traj.phi[i],
            traj.alpha_geo[i],
            traj.alpha_dyn[i],
        )?;
    }
    Ok(out)
}
