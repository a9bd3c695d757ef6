//! Cyclic solutions and their phase decomposition.
//!
//! When the end-to-end rotation of one period has an eigenvector, the
//! trajectory seeded there closes, and every spin eigenstate along it returns
//! to itself up to phase. This module builds those families, splits the
//! total phase into a dynamical part and a geometric remainder, and ties the
//! remainder to the solid angle swept by the spin expectation vector:
//!
//!   delta = m alpha(tau)          total phase of the level m state
//!   beta  = m alpha_dyn(tau)      dynamical part
//!   gamma = delta - beta          geometric part, -|m| Omega_v modulo 2 pi
//!
//! Superpositions are cyclic too when the phases of their levels cohere,
//! which happens for rational alpha(tau) = p pi / n, and for every state at
//! once when the monodromy is the identity.

use std::f64::consts::TAU;

use serde::Serialize;

use crate::field::FieldProgram;
use crate::precess::{
    closed_loop_invariants, integrate_e, monodromy, LoopInvariants, Monodromy, Trajectory,
    CLOSURE_TOL, POLE_EPS,
};
use crate::propagate::{propagator_closed_form, PropagatorForm};
use crate::spinalg::SpinRep;
use crate::{
    max_norm_vec, phase_gap, reduce_phase, CMatrix, CVector, Complex64, Error, Result, Vec3,
};

/// Largest off-diagonal magnitude tolerated when the one-period propagator
/// must be a scalar.
const SCALAR_OFF_DIAG_TOL: f64 = 1e-6;

/// Largest spread among its diagonal phases in the same situation.
const SCALAR_PHASE_TOL: f64 = 1e-6;

/// Exact internal identities between the reported phases must close this
/// tightly; only outright assembly bugs can violate them.
const IDENTITY_TOL: f64 = 1e-9;

/// Identities that lean on quadrature from two different loops get this
/// much room instead.
const FORMULA_TOL: f64 = 1e-6;

/// The endpoint propagator must not feel the seeding point.
const SEED_INDEPENDENCE_TOL: f64 = 1e-6;

/// States with an expectation vector shorter than this count as length zero.
const V0_EPS: f64 = 1e-9;

/// Knobs shared by the cyclic analyses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// Polar cap half-angle for azimuth freezing.
    pub pole_eps: f64,
    /// Endpoint gap allowed for a loop that claims to close.
    pub closure: f64,
    /// Residual allowed when a state claims to return to itself up to phase.
    pub cyclicity: f64,
    /// Distance allowed between alpha(tau) and the claimed p pi / n.
    pub rational: f64,
    /// Distance of the monodromy eigenvalue from 1 that still counts as 1.
    pub sigma: f64,
    /// Distance from the nearest integer allowed when snapping windings.
    pub k_snap: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            pole_eps: POLE_EPS,
            closure: CLOSURE_TOL,
            cyclicity: 1e-6,
            rational: 1e-6,
            sigma: 1e-6,
            k_snap: 1e-4,
        }
    }
}

/// One cyclic state and its phase decomposition over a full period.
#[derive(Debug, Clone, Serialize)]
pub struct CyclicReport {
    /// Which analysis produced the state: "eigen_family",
    /// "rational_superposition" or "all_cyclic".
    pub kind: String,
    /// The level m for eigenstates, the initial expectation length v(0)
    /// otherwise (signed for superpositions of levels, nonnegative in the
    /// all-cyclic analysis).
    pub m_or_v0: f64,
    /// Total phase over one period, reduced to (-pi, pi].
    pub delta: f64,
    /// Dynamical phase over one period, unreduced.
    pub beta: f64,
    /// Geometric remainder reduce(delta - beta).
    pub gamma: f64,
    /// Solid angle of the seeding trajectory loop.
    pub omega_e: f64,
    /// Solid angle of the expectation-vector loop; absent when v(0) = 0.
    pub omega_v: Option<f64>,
    /// Winding number of the seeding loop about the polar axis.
    #[serde(rename = "K")]
    pub big_k: i64,
    /// Phase winding alpha(tau) / 2 pi, present when the analysis pins it to
    /// an integer.
    #[serde(rename = "k")]
    pub small_k: Option<i64>,
    /// How far the evolved state sits from the claimed return, best phase
    /// removed.
    pub cyclicity_residual: f64,
    /// Total phase read off the propagator, arg <psi(0)|U(tau)|psi(0)>.
    pub delta_spectroscopic: f64,
}

/// Total phase and return residual of one state under a one-period
/// propagator.
fn state_return(u: &CMatrix, psi: &CVector) -> (f64, f64) {
    let overlap = psi.dotc(&(u * psi));
    let phase = overlap.arg();
    let gap = u * psi - psi * Complex64::from_polar(1.0, phase);
    (phase, max_norm_vec(&gap))
}

fn check_cyclicity(residual: f64, tol: &Tolerances, what: &str) -> Result<()> {
    if residual > tol.cyclicity {
        return Err(Error::Accuracy {
            what: format!("return residual of {what}"),
            residual,
            tolerance: tol.cyclicity,
        });
    }
    Ok(())
}

/// Solid angle of the expectation loop under the sign convention: positive
/// expectation vectors share the trajectory loop, negated ones sweep the
/// complement 4 pi K - Omega_e.
fn omega_v_of(m: f64, inv: &LoopInvariants) -> Option<f64> {
    if m > 0.0 {
        Some(inv.omega)
    } else if m < 0.0 {
        Some(2.0 * TAU * inv.winding as f64 - inv.omega)
    } else {
        None
    }
}

fn snap_integer(x: f64, tol: f64, what: &str) -> Result<i64> {
    let k = x.round();
    let residual = (x - k).abs();
    if residual > tol {
        return Err(Error::Accuracy {
            what: format!("{what} sits too far from an integer"),
            residual,
            tolerance: tol,
        });
    }
    Ok(k as i64)
}

/// Everything the family analyses need from one closed seeding loop.
struct ClosedLoop {
    traj: Trajectory,
    inv: LoopInvariants,
    /// Lab-frame one-period propagator assembled from the loop.
    u_tau: CMatrix,
}

fn closed_loop(
    rep: &SpinRep,
    program: &FieldProgram,
    e0: Vec3,
    steps: usize,
    tol: &Tolerances,
) -> Result<ClosedLoop> {
    let traj = integrate_e(program, e0, steps, tol.pole_eps)?;
    let inv = closed_loop_invariants(&traj, tol.closure)?;
    let last = traj.len() - 1;
    let u_tau = propagator_closed_form(rep, &traj, last, PropagatorForm::PhaseAboutZ)?.u;
    Ok(ClosedLoop { traj, inv, u_tau })
}

/// Seed direction guaranteed to close: the monodromy axis, or the polar axis
/// when every direction closes.
fn seed_direction(m: &Monodromy) -> Vec3 {
    if m.is_identity {
        Vec3::z()
    } else {
        m.axis
    }
}

/// The cyclic family that exists for every program: spin eigenstates along
/// the monodromy axis. One report per level of the representation.
pub fn guaranteed_cyclic_family(
    rep: &SpinRep,
    program: &FieldProgram,
    steps: usize,
    tol: &Tolerances,
) -> Result<Vec<CyclicReport>> {
    let mono = monodromy(program, steps, tol.pole_eps, tol.sigma)?;
    let e0 = seed_direction(&mono);
    let lp = closed_loop(rep, program, e0, steps, tol)?;
    let alpha = lp.traj.alpha_tau();
    let alpha_dyn = *lp.traj.alpha_dyn.last().unwrap();

    let mut reports = Vec::with_capacity(rep.dim());
    for twice_m in rep.twice_m_ladder().collect::<Vec<_>>() {
        let m = twice_m as f64 / 2.0;
        let chi = rep.eigenstate_of_spin_dot(&e0, twice_m)?;
        let (delta_spec, residual) = state_return(&lp.u_tau, &chi);
        check_cyclicity(residual, tol, &format!("the level {m} eigenstate"))?;

        let delta = reduce_phase(m * alpha);
        let beta = m * alpha_dyn;
        let gamma = reduce_phase(m * alpha - beta);
        let omega_v = omega_v_of(m, &lp.inv);
        if let Some(ov) = omega_v {
            let expected = reduce_phase(-m.abs() * ov);
            let gap = phase_gap(gamma, expected);
            if gap > IDENTITY_TOL {
                return Err(Error::Accuracy {
                    what: format!("geometric phase identity for level {m}"),
                    residual: gap,
                    tolerance: IDENTITY_TOL,
                });
            }
        }
        reports.push(CyclicReport {
            kind: "eigen_family".into(),
            m_or_v0: m,
            delta,
            beta,
            gamma,
            omega_e: lp.inv.omega,
            omega_v,
            big_k: lp.inv.winding,
            small_k: None,
            cyclicity_residual: residual,
            delta_spectroscopic: delta_spec,
        });
    }
    Ok(reports)
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// A superposition of levels spaced 2n apart, cyclic when alpha(tau) is the
/// rational angle p pi / n. The base level is given as 2m; `coefficients[j]`
/// weights the level m + 2 n j. Coefficients must have unit total weight. A
/// single coefficient degenerates to the eigen-family report of its level.
///
/// Fails with `NotApplicable` when alpha(tau) misses p pi / n by more than
/// the rational tolerance; the comparison is between real numbers, not
/// modulo 2 pi.
pub fn rational_superposition_family(
    rep: &SpinRep,
    program: &FieldProgram,
    twice_m_base: i32,
    p: i64,
    n: u32,
    coefficients: &[Complex64],
    steps: usize,
    tol: &Tolerances,
) -> Result<CyclicReport> {
    if n == 0 {
        return Err(Error::Precondition("the denominator n must be positive".into()));
    }
    if n == 1 {
        if p.rem_euclid(2) == 0 {
            return Err(Error::Precondition(format!(
                "alpha = {p} pi with even p makes every state cyclic; this family needs odd p"
            )));
        }
    } else if gcd(p.unsigned_abs(), n as u64) != 1 {
        return Err(Error::Precondition(format!(
            "p/n = {p}/{n} is not in lowest terms"
        )));
    }
    if rep.twice_s() < 2 * n {
        return Err(Error::Precondition(format!(
            "levels spaced 2n = {} apart need twice_s >= {}, got {}",
            2 * n,
            2 * n,
            rep.twice_s()
        )));
    }
    let weight: f64 = coefficients.iter().map(|c| c.norm_sqr()).sum();
    if (weight - 1.0).abs() > 1e-10 {
        return Err(Error::Precondition(format!(
            "coefficient weights must sum to 1, got {weight:.12}"
        )));
    }
    let twice_levels: Vec<i32> = (0..coefficients.len())
        .map(|j| twice_m_base + 4 * n as i32 * j as i32)
        .collect();
    for &tm in &twice_levels {
        rep.basis_index(tm)?;
    }

    let mono = monodromy(program, steps, tol.pole_eps, tol.sigma)?;
    let e0 = seed_direction(&mono);
    let lp = closed_loop(rep, program, e0, steps, tol)?;
    let alpha = lp.traj.alpha_tau();
    let alpha_dyn = *lp.traj.alpha_dyn.last().unwrap();

    let target = p as f64 * std::f64::consts::PI / n as f64;
    if (alpha - target).abs() > tol.rational {
        return Err(Error::NotApplicable(format!(
            "alpha(tau) = {alpha:.9} misses {p} pi / {n} = {target:.9} by more than {:.1e}",
            tol.rational
        )));
    }

    let mut psi = CVector::zeros(rep.dim());
    for (&tm, &c) in twice_levels.iter().zip(coefficients) {
        let chi = rep.eigenstate_of_spin_dot(&e0, tm)?;
        psi += chi * c;
    }
    let norm = psi.norm();
    psi /= Complex64::new(norm, 0.0);

    let m0 = twice_m_base as f64 / 2.0;
    let v0: f64 = twice_levels
        .iter()
        .zip(coefficients)
        .map(|(&tm, c)| (tm as f64 / 2.0) * c.norm_sqr())
        .sum();

    let (delta_spec, residual) = state_return(&lp.u_tau, &psi);
    check_cyclicity(residual, tol, "the rational superposition")?;

    let delta = reduce_phase(m0 * alpha);
    let beta = v0 * alpha_dyn;
    let gamma = reduce_phase(m0 * alpha - beta);
    let omega_v = omega_v_of(v0, &lp.inv);

    // Cross-check against the closed expression built from the loop
    // geometry: -|v0| Omega_v + 2 pi K (|v0| - v0) + (m0 - v0) alpha.
    let turns = 2.0 * TAU * lp.inv.winding as f64;
    let formula = match omega_v {
        Some(ov) => -v0.abs() * ov + 0.5 * turns * (v0.abs() - v0) + (m0 - v0) * alpha,
        None => m0 * alpha,
    };
    let gap = phase_gap(gamma, reduce_phase(formula));
    if gap > IDENTITY_TOL {
        return Err(Error::Accuracy {
            what: "geometric phase identity for the rational superposition".into(),
            residual: gap,
            tolerance: IDENTITY_TOL,
        });
    }

    Ok(CyclicReport {
        kind: "rational_superposition".into(),
        m_or_v0: v0,
        delta,
        beta,
        gamma,
        omega_e: lp.inv.omega,
        omega_v,
        big_k: lp.inv.winding,
        small_k: None,
        cyclicity_residual: residual,
        delta_spectroscopic: delta_spec,
    })
}

/// Phase analysis when every state is cyclic, one report per supplied state.
///
/// Applicable only when the monodromy eigenvalue is 1; anything else returns
/// `NotApplicable`. Each state's expectation vector seeds its own loop, whose
/// dynamical phase and solid angle enter the decomposition. States with a
/// vanishing expectation vector use the polar-axis loop and carry no solid
/// angle of their own.
pub fn all_cyclic_analysis(
    rep: &SpinRep,
    program: &FieldProgram,
    states: &[CVector],
    steps: usize,
    tol: &Tolerances,
) -> Result<Vec<CyclicReport>> {
    let mono = monodromy(program, steps, tol.pole_eps, tol.sigma)?;
    if !mono.is_identity {
        return Err(Error::NotApplicable(format!(
            "the one-period rotation has angle {:.6}, so only its axis hosts cyclic states",
            mono.rho
        )));
    }

    // Reference loop along the polar axis pins the scalar propagator and the
    // phase winding of the period.
    let rl = closed_loop(rep, program, Vec3::z(), steps, tol)?;
    let alpha_ref = rl.traj.alpha_tau();
    let k_ref = snap_integer(
        alpha_ref / TAU,
        tol.k_snap,
        "the reference phase winding alpha / 2 pi",
    )?;

    // With identity monodromy the one-period propagator must be a scalar.
    let dim = rep.dim();
    let ref_phase = rl.u_tau[(0, 0)].arg();
    let mut off_diag = 0.0f64;
    let mut phase_spread = 0.0f64;
    for r in 0..dim {
        for c in 0..dim {
            if r != c {
                off_diag = off_diag.max(rl.u_tau[(r, c)].norm());
            } else {
                phase_spread = phase_spread.max(phase_gap(rl.u_tau[(r, r)].arg(), ref_phase));
            }
        }
    }
    if off_diag > SCALAR_OFF_DIAG_TOL {
        return Err(Error::Accuracy {
            what: "off-diagonal weight of the one-period propagator".into(),
            residual: off_diag,
            tolerance: SCALAR_OFF_DIAG_TOL,
        });
    }
    if phase_spread > SCALAR_PHASE_TOL {
        return Err(Error::Accuracy {
            what: "diagonal phase spread of the one-period propagator".into(),
            residual: phase_spread,
            tolerance: SCALAR_PHASE_TOL,
        });
    }

    let delta = reduce_phase(TAU * k_ref as f64 * rep.s());

    let mut reports = Vec::with_capacity(states.len());
    for (idx, psi) in states.iter().enumerate() {
        let v = rep.spin_expectation(psi)?;
        let v0 = v.norm();
        let zero_v = v0 < V0_EPS;
        let lp = if zero_v {
            // Such states fall back on the polar axis loop, which is the
            // reference loop; reuse it rather than integrating again.
            ClosedLoop {
                traj: rl.traj.clone(),
                inv: rl.inv,
                u_tau: rl.u_tau.clone(),
            }
        } else {
            closed_loop(rep, program, v / v0, steps, tol)?
        };
        let alpha_dyn = *lp.traj.alpha_dyn.last().unwrap();
        let small_k = snap_integer(
            lp.traj.alpha_tau() / TAU,
            tol.k_snap,
            &format!("the phase winding of state {idx}"),
        )?;

        let (delta_spec, residual) = state_return(&rl.u_tau, psi);
        check_cyclicity(residual, tol, &format!("state {idx}"))?;

        let (m_or_v0, beta, omega_v) = if zero_v {
            (0.0, 0.0, None)
        } else {
            (v0, v0 * alpha_dyn, omega_v_of(v0, &lp.inv))
        };
        let gamma = reduce_phase(delta - beta);

        // Cross-check against the closed expression
        // -v0 Omega_v + (s - v0) 2 pi k, with the Omega_v term dropped for
        // zero expectation vectors.
        let formula = match omega_v {
            Some(ov) => -m_or_v0 * ov + (rep.s() - m_or_v0) * TAU * small_k as f64,
            None => rep.s() * TAU * k_ref as f64,
        };
        let gap = phase_gap(gamma, reduce_phase(formula));
        if gap > FORMULA_TOL {
            return Err(Error::Accuracy {
                what: format!("closed-form geometric phase for state {idx}"),
                residual: gap,
                tolerance: FORMULA_TOL,
            });
        }

        reports.push(CyclicReport {
            kind: "all_cyclic".into(),
            m_or_v0,
            delta,
            beta,
            gamma,
            omega_e: lp.inv.omega,
            omega_v,
            big_k: lp.inv.winding,
            small_k: Some(small_k),
            cyclicity_residual: residual,
            delta_spectroscopic: delta_spec,
        });
    }
    Ok(reports)
}

/// Outcome of the winding relation test at one seed.
#[derive(Debug, Clone, Serialize)]
pub struct WindingCheck {
    /// Phase winding alpha(tau) / 2 pi of the seed's loop.
    pub k: i64,
    /// Azimuthal winding of the seed's loop.
    #[serde(rename = "K")]
    pub big_k: i64,
    /// Whether k = -K held at the seed.
    pub relation_holds: bool,
    /// Phase windings found by the uniformity probes.
    pub probe_k: Vec<i64>,
}

/// Check the relation k = -K between the phase winding and the azimuthal
/// winding of the seed's loop.
///
/// The relation is only claimed on programs whose phase winding does not
/// depend on the seed, so a fixed set of probe seeds is integrated first;
/// any disagreement among them or with the seed returns `NotApplicable`.
/// Requires closed loops, so the program's monodromy must be the identity.
pub fn winding_relation_check(
    program: &FieldProgram,
    e0: Vec3,
    steps: usize,
    tol: &Tolerances,
) -> Result<WindingCheck> {
    let loop_k = |seed: Vec3, what: &str| -> Result<(i64, i64)> {
        let traj = integrate_e(program, seed, steps, tol.pole_eps)?;
        let inv = closed_loop_invariants(&traj, tol.closure)?;
        let k = snap_integer(traj.alpha_tau() / TAU, tol.k_snap, what)?;
        Ok((k, inv.winding))
    };
    let probes = [
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(0.6, 0.0, 0.8),
        Vec3::new(0.0, -0.6, 0.8),
        Vec3::new(-0.48, 0.64, -0.6),
    ];
    let mut probe_k = Vec::with_capacity(probes.len());
    for (i, seed) in probes.into_iter().enumerate() {
        let (k, _) = loop_k(seed, &format!("the phase winding of probe {i}"))?;
        probe_k.push(k);
    }
    let (k, big_k) = loop_k(e0, "the phase winding of the requested seed")?;
    if probe_k.iter().any(|&pk| pk != k) {
        return Err(Error::NotApplicable(format!(
            "the phase winding depends on the seed (probes gave {probe_k:?}, \
             the seed gave {k}), so the winding relation is not claimed"
        )));
    }
    Ok(WindingCheck {
        k,
        big_k,
        relation_holds: k == -big_k,
        probe_k,
    })
}

/// How the phase integral responds to a small move of the seeding point.
#[derive(Debug, Clone, Serialize)]
pub struct AlphaSensitivity {
    pub alpha_base: f64,
    pub alpha_perturbed: f64,
    /// alpha(perturbed) - alpha(base) at the full perturbation scale.
    pub delta_alpha: f64,
    /// The same difference at half the scale; about half of `delta_alpha`
    /// when no pole crossing separates the traces.
    pub delta_alpha_half: f64,
    pub k_base: i64,
    pub k_perturbed: i64,
    /// k_perturbed - k_base: zero for a smooth response, even when a pole
    /// crossing separates the traces.
    pub k_jump: i64,
    /// Distance of delta_alpha / 4 pi from the nearest integer.
    pub snap_residual: f64,
    /// Largest entry of the difference between the two endpoint propagators.
    pub u_gap: f64,
}

/// Move the seed by `scale * direction` along the sphere and compare phase
/// integrals and endpoint propagators.
///
/// Defined on intervals where every state is cyclic, so that alpha(tau) is
/// pinned to 2 pi k on every trace; the direction must be orthogonal to the
/// seed. A smooth response must shrink linearly with the scale and keep k;
/// when a pole crossing separates the traces, alpha jumps by a multiple of
/// 4 pi and k by an even integer. The endpoint propagator must not feel the
/// seed either way.
pub fn alpha_sensitivity(
    rep: &SpinRep,
    program: &FieldProgram,
    e0: Vec3,
    direction: Vec3,
    scale: f64,
    steps: usize,
    tol: &Tolerances,
) -> Result<AlphaSensitivity> {
    if direction.dot(&e0).abs() > 1e-10 * direction.norm().max(1.0) {
        return Err(Error::Precondition(
            "the perturbation direction must be orthogonal to the seed".into(),
        ));
    }
    if !(scale.is_finite() && scale >= 0.0) {
        return Err(Error::Precondition(format!(
            "the perturbation scale must be finite and nonnegative, got {scale}"
        )));
    }
    let mono = monodromy(program, steps, tol.pole_eps, tol.sigma)?;
    if !mono.is_identity {
        return Err(Error::NotApplicable(
            "seed sensitivity of the phase winding is defined on intervals \
             where every state is cyclic"
                .into(),
        ));
    }

    let base = integrate_e(program, e0, steps, tol.pole_eps)?;
    let moved = integrate_e(program, (e0 + direction * scale).normalize(), steps, tol.pole_eps)?;
    let half = integrate_e(
        program,
        (e0 + direction * (0.5 * scale)).normalize(),
        steps,
        tol.pole_eps,
    )?;
    let alpha_base = base.alpha_tau();
    let alpha_perturbed = moved.alpha_tau();
    let delta_alpha = alpha_perturbed - alpha_base;
    let delta_alpha_half = half.alpha_tau() - alpha_base;

    let k_base = snap_integer(alpha_base / TAU, tol.k_snap, "the base phase winding")?;
    let k_perturbed = snap_integer(
        alpha_perturbed / TAU,
        tol.k_snap,
        "the perturbed phase winding",
    )?;
    let k_jump = k_perturbed - k_base;

    let last = base.len() - 1;
    let u_base = propagator_closed_form(rep, &base, last, PropagatorForm::PhaseAboutZ)?.u;
    let u_moved = propagator_closed_form(rep, &moved, last, PropagatorForm::PhaseAboutZ)?.u;
    let u_gap = crate::max_norm(&(u_base - u_moved));
    if u_gap > SEED_INDEPENDENCE_TOL {
        return Err(Error::Accuracy {
            what: "seed dependence of the endpoint propagator".into(),
            residual: u_gap,
            tolerance: SEED_INDEPENDENCE_TOL,
        });
    }

    let x = delta_alpha / (2.0 * TAU);
    let snap_residual = (x - x.round()).abs();
    if k_jump == 0 {
        let bound = 0.75 * delta_alpha.abs() + 1e-8;
        if delta_alpha_half.abs() > bound {
            return Err(Error::Accuracy {
                what: "linear decay of the phase response with the perturbation".into(),
                residual: delta_alpha_half.abs(),
                tolerance: bound,
            });
        }
    } else {
        if k_jump.rem_euclid(2) != 0 {
            return Err(Error::Accuracy {
                what: "evenness of the phase winding jump".into(),
                residual: k_jump as f64,
                tolerance: 0.0,
            });
        }
        if snap_residual > tol.k_snap {
            return Err(Error::Accuracy {
                what: "the alpha jump sits too far from a multiple of 4 pi".into(),
                residual: snap_residual,
                tolerance: tol.k_snap,
            });
        }
    }

    Ok(AlphaSensitivity {
        alpha_base,
        alpha_perturbed,
        delta_alpha,
        delta_alpha_half,
        k_base,
        k_perturbed,
        k_jump,
        snap_residual,
        u_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::ScalarWave;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, PI};

    fn fixed_axis(axis: Vec3, omega0: f64, t_max: f64) -> FieldProgram {
        FieldProgram::FixedAxis {
            axis,
            omega: ScalarWave::Constant { value: omega0 },
            t_max,
        }
    }

    fn rotating(theta_n: f64, omega: f64, omega_b: f64, t_max: f64) -> FieldProgram {
        FieldProgram::Rotating {
            theta_n,
            omega,
            omega_b,
            t_max,
        }
    }

    #[test]
    fn eigen_family_matches_the_cone_geometry() {
        // One period of the rotating program seeds the family on the static
        // axis of the co-rotating frame, v = z + 2 n(0) up to length. The
        // trajectory is a cone of constant angles, so every quantity has a
        // closed form: Omega_e = 2 pi (1 - 2/sqrt(7)), K = 1, and
        // alpha = 2 pi (sqrt(7) - 1).
        let p = rotating(FRAC_PI_3, 1.0, 2.0, TAU);
        let rep = SpinRep::new(3).unwrap();
        let tol = Tolerances::default();
        let reports = guaranteed_cyclic_family(&rep, &p, 4096, &tol).unwrap();
        assert_eq!(reports.len(), 4);

        let s7 = 7f64.sqrt();
        let omega_e = TAU * (1.0 - 2.0 / s7);
        let alpha = TAU * (s7 - 1.0);
        let alpha_dyn = TAU * 5.0 / s7;
        for (report, twice_m) in reports.iter().zip([3i32, 1, -1, -3]) {
            let m = twice_m as f64 / 2.0;
            assert_eq!(report.kind, "eigen_family");
            assert_eq!(report.m_or_v0, m);
            assert_eq!(report.big_k, 1);
            assert!((report.omega_e - omega_e).abs() < 1e-9, "omega_e");
            assert!(phase_gap(report.delta, reduce_phase(m * alpha)) < 1e-8);
            assert!((report.beta - m * alpha_dyn).abs() < 1e-7);
            assert!(phase_gap(report.gamma, reduce_phase(-m * omega_e)) < 1e-8);
            let expected_ov = if m > 0.0 { omega_e } else { 2.0 * TAU - omega_e };
            assert!((report.omega_v.unwrap() - expected_ov).abs() < 1e-9);
            assert!(report.cyclicity_residual < 1e-7);
            assert!(phase_gap(report.delta_spectroscopic, report.delta) < 1e-6);
        }
    }

    #[test]
    fn eigen_family_on_a_half_turn_monodromy() {
        // Constant field along z for half a period: the monodromy axis is z,
        // the seed sits still, and alpha is purely dynamical, pi.
        let p = fixed_axis(Vec3::z(), 1.0, PI);
        let rep = SpinRep::new(2).unwrap();
        let reports =
            guaranteed_cyclic_family(&rep, &p, 1024, &Tolerances::default()).unwrap();
        for (report, m) in reports.iter().zip([1.0f64, 0.0, -1.0]) {
            assert_eq!(report.m_or_v0, m);
            assert!(phase_gap(report.delta, reduce_phase(m * PI)) < 1e-9);
            assert!((report.beta - m * PI).abs() < 1e-9);
            assert!(phase_gap(report.gamma, 0.0) < 1e-9);
            assert!(report.omega_e.abs() < 1e-9);
            assert_eq!(report.big_k, 0);
            if m == 0.0 {
                assert!(report.omega_v.is_none());
            }
        }
    }

    #[test]
    fn rational_half_turn_superposition() {
        // alpha(tau) = pi: levels -1 and +1 of a spin-1 cohere. With weights
        // (0.36, 0.64) the expectation length is 0.28 and the geometric
        // remainder lands on 0.72 pi.
        let p = fixed_axis(Vec3::z(), 1.0, PI);
        let rep = SpinRep::new(2).unwrap();
        let tol = Tolerances::default();
        let c = [Complex64::new(0.6, 0.0), Complex64::new(0.8, 0.0)];
        let report =
            rational_superposition_family(&rep, &p, -2, 1, 1, &c, 1024, &tol).unwrap();
        assert_eq!(report.kind, "rational_superposition");
        assert!((report.m_or_v0 - 0.28).abs() < 1e-12);
        assert!(phase_gap(report.delta, PI) < 1e-9);
        assert!((report.beta - 0.28 * PI).abs() < 1e-9);
        assert!(phase_gap(report.gamma, 0.72 * PI) < 1e-9);
        assert!(report.cyclicity_residual < 1e-9);
        assert!(phase_gap(report.delta_spectroscopic, PI) < 1e-9);

        // A balanced superposition has no expectation vector and its whole
        // phase is geometric.
        let q = 1.0 / 2f64.sqrt();
        let c_balanced = [Complex64::new(q, 0.0), Complex64::new(q, 0.0)];
        let balanced =
            rational_superposition_family(&rep, &p, -2, 1, 1, &c_balanced, 1024, &tol).unwrap();
        assert_eq!(balanced.m_or_v0, 0.0);
        assert_eq!(balanced.beta, 0.0);
        assert!(balanced.omega_v.is_none());
        assert!(phase_gap(balanced.gamma, PI) < 1e-9);
    }

    #[test]
    fn single_term_degenerates_to_the_eigen_report() {
        let p = fixed_axis(Vec3::z(), 1.0, PI);
        let rep = SpinRep::new(2).unwrap();
        let tol = Tolerances::default();
        let c = [Complex64::new(1.0, 0.0)];
        let single =
            rational_superposition_family(&rep, &p, -2, 1, 1, &c, 1024, &tol).unwrap();
        let family = guaranteed_cyclic_family(&rep, &p, 1024, &tol).unwrap();
        let eigen = family.iter().find(|r| r.m_or_v0 == -1.0).unwrap();
        assert_eq!(single.m_or_v0, eigen.m_or_v0);
        assert!(phase_gap(single.delta, eigen.delta) < 1e-12);
        assert_eq!(single.beta, eigen.beta);
        assert!(phase_gap(single.gamma, eigen.gamma) < 1e-12);
        assert_eq!(single.omega_v, eigen.omega_v);
    }

    #[test]
    fn rational_rejects_mismatched_angles_as_not_applicable() {
        // alpha(tau) = pi, but the claim is pi/2.
        let p = fixed_axis(Vec3::z(), 1.0, PI);
        let rep = SpinRep::new(4).unwrap();
        let c = [Complex64::new(0.6, 0.0), Complex64::new(0.8, 0.0)];
        let err = rational_superposition_family(
            &rep,
            &p,
            -4,
            1,
            2,
            &c,
            1024,
            &Tolerances::default(),
        )
        .unwrap_err();
        assert_eq!(err.code(), "not_applicable");
    }

    #[test]
    fn rational_validation_rejects_bad_families() {
        let p = fixed_axis(Vec3::z(), 1.0, PI);
        let rep = SpinRep::new(2).unwrap();
        let tol = Tolerances::default();
        let c = [Complex64::new(0.6, 0.0), Complex64::new(0.8, 0.0)];
        // Even p with n = 1 is the all-cyclic situation.
        assert!(rational_superposition_family(&rep, &p, -2, 2, 1, &c, 256, &tol).is_err());
        // Not in lowest terms.
        assert!(rational_superposition_family(&rep, &p, -2, 2, 4, &c, 256, &tol).is_err());
        // The representation is too small for the level spacing.
        assert!(rational_superposition_family(&rep, &p, -2, 1, 2, &c, 256, &tol).is_err());
        // Unnormalized weights.
        let c_bad = [Complex64::new(0.6, 0.0), Complex64::new(0.6, 0.0)];
        assert!(rational_superposition_family(&rep, &p, -2, 1, 1, &c_bad, 256, &tol).is_err());
    }

    #[test]
    fn all_cyclic_reports_every_state() {
        // |z + sqrt(3) x| = 2, so one period returns every trajectory.
        let p = rotating(FRAC_PI_2, 1.0, 3f64.sqrt(), TAU);
        let rep = SpinRep::new(1).unwrap();
        let tol = Tolerances::default();
        let states = vec![
            rep.eigenstate_of_spin_dot(&Vec3::x(), 1).unwrap(),
            rep.eigenstate_of_spin_dot(&Vec3::new(0.0, 0.6, -0.8), -1).unwrap(),
        ];
        // The polar-axis reference loop of a rotating program passes through
        // the pole itself, so the scalar check needs the finer grid.
        let reports = all_cyclic_analysis(&rep, &p, &states, 16384, &tol).unwrap();
        assert_eq!(reports.len(), 2);
        for report in &reports {
            assert_eq!(report.kind, "all_cyclic");
            // Every pure spin-1/2 state has expectation length 1/2.
            assert!((report.m_or_v0 - 0.5).abs() < 1e-9);
            assert!(report.cyclicity_residual < 1e-6);
            let k = report.small_k.expect("all-cyclic states carry k");
            // gamma = -v0 Omega_v + (s - v0) 2 pi k with v0 = s = 1/2.
            let expected = reduce_phase(-0.5 * report.omega_v.unwrap());
            assert!(
                phase_gap(report.gamma, expected) < 1e-6,
                "gamma {} vs -Omega_v/2 {} (k = {k})",
                report.gamma,
                expected
            );
            assert!(phase_gap(report.delta_spectroscopic, report.delta) < 1e-6);
        }
    }

    #[test]
    fn all_cyclic_handles_a_zero_expectation_state() {
        let p = rotating(FRAC_PI_2, 1.0, 3f64.sqrt(), TAU);
        let rep = SpinRep::new(2).unwrap();
        let tol = Tolerances::default();
        // Equal weights on m = +1 and m = -1 along z: expectation zero.
        let up = rep.eigenstate_of_spin_dot(&Vec3::z(), 2).unwrap();
        let dn = rep.eigenstate_of_spin_dot(&Vec3::z(), -2).unwrap();
        let q = Complex64::new(1.0 / 2f64.sqrt(), 0.0);
        let psi = up * q + dn * q;
        let reports = all_cyclic_analysis(&rep, &p, &[psi], 16384, &tol).unwrap();
        let report = &reports[0];
        assert_eq!(report.m_or_v0, 0.0);
        assert_eq!(report.beta, 0.0);
        assert!(report.omega_v.is_none());
        // Integer spin: the scalar phase is a multiple of 2 pi.
        assert!(phase_gap(report.delta, 0.0) < 1e-6);
        assert!(phase_gap(report.gamma, report.delta) < 1e-12);
    }

    #[test]
    fn all_cyclic_refuses_generic_programs() {
        let p = rotating(FRAC_PI_3, 1.0, 2.0, TAU);
        let rep = SpinRep::new(1).unwrap();
        let err = all_cyclic_analysis(&rep, &p, &[], 2048, &Tolerances::default()).unwrap_err();
        assert_eq!(err.code(), "not_applicable");
    }

    #[test]
    fn winding_relation_on_a_constant_field() {
        // Every loop of the constant z field winds once negatively while
        // alpha = +2 pi: k = -K across the sphere, and again with two turns.
        let tol = Tolerances::default();
        let p = fixed_axis(Vec3::z(), 1.0, TAU);
        let check = winding_relation_check(&p, Vec3::x(), 2048, &tol).unwrap();
        assert_eq!(check.k, 1);
        assert_eq!(check.big_k, -1);
        assert!(check.relation_holds);
        assert!(check.probe_k.iter().all(|&k| k == 1));

        let p2 = fixed_axis(Vec3::z(), 1.0, 2.0 * TAU);
        let check2 = winding_relation_check(&p2, Vec3::x(), 4096, &tol).unwrap();
        assert_eq!(check2.k, 2);
        assert_eq!(check2.big_k, -2);
        assert!(check2.relation_holds);
    }

    #[test]
    fn winding_relation_stands_down_on_nonuniform_programs() {
        // Loops of the resonant rotating program live on both sides of
        // pole-crossing walls, where the phase winding picks up different
        // 4 pi branches: k comes out seed dependent and the relation is not
        // claimed.
        let p = rotating(FRAC_PI_2, 1.0, 3f64.sqrt(), TAU);
        let err =
            winding_relation_check(&p, Vec3::x(), 4096, &Tolerances::default()).unwrap_err();
        assert_eq!(err.code(), "not_applicable");
    }

    #[test]
    fn pole_sweep_shifts_alpha_by_a_full_solid_angle() {
        // Seeds on either side of the lower pole of the meridian loop: alpha
        // moves by exactly -4 pi and k by -2 while the propagator stays put.
        let p = fixed_axis(Vec3::x(), 1.0, TAU);
        let rep = SpinRep::new(1).unwrap();
        let eps = 1e-3f64;
        let e0 = Vec3::new(eps.sin(), 0.0, eps.cos());
        let direction = Vec3::new(-eps.cos(), 0.0, eps.sin());
        let scale = (2.0 * eps).tan();
        let sens = alpha_sensitivity(
            &rep,
            &p,
            e0,
            direction,
            scale,
            32768,
            &Tolerances::default(),
        )
        .unwrap();
        assert!(
            (sens.alpha_base - TAU).abs() < 1e-5,
            "alpha base {}",
            sens.alpha_base
        );
        assert!((sens.alpha_perturbed + TAU).abs() < 1e-5);
        assert_eq!(sens.k_base, 1);
        assert_eq!(sens.k_perturbed, -1);
        assert_eq!(sens.k_jump, -2);
        assert!(sens.snap_residual < 1e-4);
        assert!(sens.u_gap < 1e-6, "u gap {:.3e}", sens.u_gap);
    }

    #[test]
    fn smooth_seeds_leave_alpha_alone() {
        // In a fixed-direction field alpha = 2 pi k for every seed, so the
        // response to a small orthogonal move is pure quadrature noise.
        let p = fixed_axis(Vec3::z(), 1.0, TAU);
        let rep = SpinRep::new(1).unwrap();
        let e0 = Vec3::new(0.6, 0.0, 0.8);
        let direction = Vec3::new(-0.8, 0.0, 0.6);
        let sens = alpha_sensitivity(
            &rep,
            &p,
            e0,
            direction,
            1e-3,
            4096,
            &Tolerances::default(),
        )
        .unwrap();
        assert_eq!(sens.k_jump, 0);
        assert!(sens.delta_alpha.abs() < 1e-6, "{:.3e}", sens.delta_alpha);
        assert!(sens.u_gap < 1e-6);
    }

    #[test]
    fn sensitivity_rejects_bad_inputs() {
        let p = fixed_axis(Vec3::z(), 1.0, TAU);
        let rep = SpinRep::new(1).unwrap();
        let tol = Tolerances::default();
        // Not orthogonal to the seed.
        let err =
            alpha_sensitivity(&rep, &p, Vec3::z(), Vec3::new(0.1, 0.0, 1.0), 1e-3, 256, &tol)
                .unwrap_err();
        assert_eq!(err.code(), "precondition");
        // Open trajectories have no pinned winding to compare.
        let open = rotating(FRAC_PI_3, 1.0, 2.0, TAU);
        let err = alpha_sensitivity(&rep, &open, Vec3::x(), Vec3::y(), 1e-3, 256, &tol)
            .unwrap_err();
        assert_eq!(err.code(), "not_applicable");
        // Zero perturbation is the trivial smooth case.
        let sens = alpha_sensitivity(&rep, &p, Vec3::x(), Vec3::y(), 0.0, 256, &tol).unwrap();
        assert_eq!(sens.delta_alpha, 0.0);
        assert_eq!(sens.k_jump, 0);
    }
}
