//! Closed-form propagators assembled from one precession trajectory.
//!
//! Once a single classical trajectory e(t) is known, the quantum propagator
//! of every spin follows without further integration. With (theta, phi) the
//! unwrapped angles of e(t), d(phi) = (-sin phi, cos phi, 0) and alpha(t) the
//! accumulated phase integral, the propagator factors as
//!
//!   U(t) = exp(-i theta_t s.d_t) exp(i alpha_t s_z) exp(i theta_0 s.d_0)
//!
//! or, commuting the phase factor to the right through the initial rotation,
//!
//!   U(t) = exp(-i theta_t s.d_t) exp(i theta_0 s.d_0) exp(i alpha_t s.e_0).
//!
//! Both forms are algebraically identical; they are kept side by side as a
//! cross-check of the assembly. The result never depends on which trajectory
//! seeded it, which is what the tests lean on hardest.

use crate::field::FieldProgram;
use crate::precess::Trajectory;
use crate::spinalg::{unit_from_angles, SpinRep};
use crate::{max_norm, Complex64, Error, Result, Vec3};

/// Where the accumulated phase exp(i alpha ...) is inserted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropagatorForm {
    /// Phase about the polar axis, between the two tilt rotations.
    PhaseAboutZ,
    /// Phase about the starting direction of the trajectory, applied first.
    PhaseAboutInitialAxis,
}

/// A propagator evaluated at one trajectory node, in the lab frame.
#[derive(Debug, Clone)]
pub struct Propagator {
    pub u: crate::CMatrix,
    pub t: f64,
    /// Phase integral alpha(t) of the seeding trajectory at this node.
    pub alpha: f64,
    pub form: PropagatorForm,
}

fn check_node(traj: &Trajectory, node: usize) -> Result<()> {
    if node >= traj.len() {
        return Err(Error::Precondition(format!(
            "node {node} is out of range for a trajectory with {} nodes",
            traj.len()
        )));
    }
    Ok(())
}

/// d(phi), the horizontal axis about which the tilt rotations act.
fn tilt_axis(phi: f64) -> Vec3 {
    Vec3::new(-phi.sin(), phi.cos(), 0.0)
}

/// The propagator in the trajectory's working frame, without the node-zero
/// shortcut or the lab conjugation.
fn frame_propagator(
    rep: &SpinRep,
    traj: &Trajectory,
    node: usize,
    form: PropagatorForm,
) -> Result<crate::CMatrix> {
    let theta_t = traj.theta[node];
    let phi_t = traj.phi[node];
    let alpha = traj.alpha(node);
    let theta_0 = traj.theta[0];
    let phi_0 = traj.phi[0];
    let left = rep.exp_i_spin(-theta_t, &tilt_axis(phi_t))?;
    let right = rep.exp_i_spin(theta_0, &tilt_axis(phi_0))?;
    Ok(match form {
        PropagatorForm::PhaseAboutZ => left * rep.exp_i_sz(alpha) * right,
        PropagatorForm::PhaseAboutInitialAxis => {
            let e0 = unit_from_angles(theta_0, phi_0);
            left * right * rep.exp_i_spin(alpha, &e0)?
        }
    })
}

/// Assemble the lab-frame propagator at one node of the trajectory.
///
/// Node 0 returns the exact identity. When the trajectory carries a working
/// frame, the result is conjugated back to the lab.
pub fn propagator_closed_form(
    rep: &SpinRep,
    traj: &Trajectory,
    node: usize,
    form: PropagatorForm,
) -> Result<Propagator> {
    check_node(traj, node)?;
    let dim = rep.dim();
    let u = if node == 0 {
        crate::CMatrix::identity(dim, dim)
    } else {
        let u = frame_propagator(rep, traj, node, form)?;
        match &traj.frame {
            Some(f) => {
                let w = rep.exp_i_spin(-f.angle, &f.axis)?;
                w.adjoint() * u * w
            }
            None => u,
        }
    };
    Ok(Propagator {
        u,
        t: traj.times[node],
        alpha: traj.alpha(node),
        form,
    })
}

/// Independent stepped reference: the time-ordered product of midpoint
/// exponentials over a uniform grid. Second-order accurate in the step size
/// and built straight from the field program, with no trajectory input.
pub fn oracle_propagator(
    rep: &SpinRep,
    program: &FieldProgram,
    t_end: f64,
    steps: usize,
) -> Result<crate::CMatrix> {
    program.validate()?;
    if steps == 0 {
        return Err(Error::Precondition("oracle steps must be at least 1".into()));
    }
    let dim = rep.dim();
    let mut u = crate::CMatrix::identity(dim, dim);
    let h = t_end / steps as f64;
    for k in 0..steps {
        let tm = t_end * ((k as f64 + 0.5) / steps as f64);
        let (w, n) = program.evaluate(tm)?;
        u = rep.exp_i_spin(w * h, &n)? * u;
    }
    Ok(u)
}

/// Largest residual of the evolution equation i dU/dt = -omega_B (s.n) U over
/// the interior nodes, one form of the closed-form propagator checked by
/// central differences. Each node's residual is scaled by
/// max(1, ||omega_B s.n||_F) so strong fields are not penalized.
pub fn schrodinger_residual(
    rep: &SpinRep,
    program: &FieldProgram,
    traj: &Trajectory,
    form: PropagatorForm,
) -> Result<f64> {
    if traj.len() < 3 {
        return Err(Error::Precondition(
            "residual checks need at least two steps".into(),
        ));
    }
    let rot = traj.frame.as_ref().map(|f| f.matrix());
    let mut us = Vec::with_capacity(traj.len());
    for node in 0..traj.len() {
        us.push(frame_propagator(rep, traj, node, form)?);
    }
    let mut worst = 0.0f64;
    for i in 1..traj.len() - 1 {
        let dt = traj.times[i + 1] - traj.times[i - 1];
        let (w, n_lab) = program.evaluate(traj.times[i])?;
        let n = match &rot {
            Some(r) => r * n_lab,
            None => n_lab,
        };
        let ham = rep.spin_dot(&n).map(|z| z * Complex64::new(-w, 0.0));
        let dudt = (&us[i + 1] - &us[i - 1]).map(|z| z * Complex64::new(0.0, 1.0 / dt));
        let residual = max_norm(&(dudt - &ham * &us[i]));
        let scale = ham.norm().max(1.0);
        worst = worst.max(residual / scale);
    }
    Ok(worst)
}

/// Residual of the transported-eigenstate identity at one node: the
/// propagator applied to an eigenstate of s.e(0) stays an eigenstate of
/// s.e(t) with the same level, so (s.e(t)) psi(t) - m psi(t) vanishes up to
/// quadrature error. Directions are taken in the lab frame.
pub fn transported_eigenstate_residual(
    rep: &SpinRep,
    traj: &Trajectory,
    node: usize,
    twice_m: i32,
    form: PropagatorForm,
) -> Result<f64> {
    check_node(traj, node)?;
    let m = twice_m as f64 / 2.0;
    let to_lab = |v: &Vec3| match &traj.frame {
        Some(f) => f.to_lab(v),
        None => *v,
    };
    let e_start = to_lab(&traj.e[0]);
    let e_now = to_lab(&traj.e[node]);
    let chi = rep.eigenstate_of_spin_dot(&e_start, twice_m)?;
    let psi = propagator_closed_form(rep, traj, node, form)?.u * chi;
    let gap = rep.spin_dot(&e_now) * &psi - &psi * Complex64::new(m, 0.0);
    Ok(crate::max_norm_vec(&gap))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{AngleTrack, ScalarWave};
    use crate::precess::{integrate_e, POLE_EPS};
    use crate::CMatrix;
    use std::f64::consts::{FRAC_PI_3, PI, TAU};

    fn rotating(theta_n: f64, omega: f64, omega_b: f64, t_max: f64) -> FieldProgram {
        FieldProgram::Rotating {
            theta_n,
            omega,
            omega_b,
            t_max,
        }
    }

    fn wobbling(t_max: f64) -> FieldProgram {
        FieldProgram::Wobbling {
            omega: ScalarWave::Sinusoid {
                base: 1.0,
                amp: 0.4,
                freq: 1.1,
                phase: 0.2,
            },
            theta: AngleTrack {
                offset: 1.1,
                rate: 0.0,
                amp: 0.3,
                freq: 0.9,
                phase: 0.5,
            },
            phi: AngleTrack {
                offset: 0.0,
                rate: 0.7,
                amp: 0.4,
                freq: 1.4,
                phase: 0.0,
            },
            t_max,
        }
    }

    /// Analytic propagator of the rotating program: passing to the co-rotating
    /// frame leaves a static effective axis v = omega z + omega_b n(0), so
    /// U(t) = exp(-i omega t s_z) exp(i |v| t s.v_hat).
    fn rotating_propagator(
        rep: &SpinRep,
        theta_n: f64,
        omega: f64,
        omega_b: f64,
        t: f64,
    ) -> CMatrix {
        let n0 = Vec3::new(theta_n.sin(), 0.0, theta_n.cos());
        let v = Vec3::z().scale(omega) + n0.scale(omega_b);
        rep.exp_i_sz(-omega * t) * rep.exp_i_spin(v.norm() * t, &v.normalize()).unwrap()
    }

    #[test]
    fn node_zero_is_the_exact_identity() {
        let p = wobbling(4.0);
        let rep = SpinRep::new(3).unwrap();
        let traj = integrate_e(&p, Vec3::new(0.6, 0.0, 0.8), 64, POLE_EPS).unwrap();
        for form in [PropagatorForm::PhaseAboutZ, PropagatorForm::PhaseAboutInitialAxis] {
            let prop = propagator_closed_form(&rep, &traj, 0, form).unwrap();
            let id = CMatrix::identity(rep.dim(), rep.dim());
            assert_eq!(prop.u, id);
            assert_eq!(prop.alpha, 0.0);
            assert_eq!(prop.t, 0.0);
        }
    }

    #[test]
    fn matches_the_rotating_frame_propagator() {
        let (theta_n, omega, omega_b) = (FRAC_PI_3, 1.0, 2.0);
        let tau = TAU;
        let p = rotating(theta_n, omega, omega_b, tau);
        let traj = integrate_e(&p, Vec3::new(0.28, -0.96, 0.0), 16384, POLE_EPS).unwrap();
        for twice_s in [1u32, 2, 3, 4] {
            let rep = SpinRep::new(twice_s).unwrap();
            for node in [2048usize, 8192, 12288, 16384] {
                let t = traj.times[node];
                let expect = rotating_propagator(&rep, theta_n, omega, omega_b, t);
                let prop =
                    propagator_closed_form(&rep, &traj, node, PropagatorForm::PhaseAboutZ)
                        .unwrap();
                let gap = max_norm(&(prop.u - expect));
                assert!(
                    gap < 1e-6,
                    "spin {twice_s}/2 node {node} off by {gap:.3e}"
                );
            }
        }
    }

    #[test]
    fn agrees_with_the_stepped_oracle() {
        let p = wobbling(3.0);
        let traj = integrate_e(&p, Vec3::new(0.0, 0.6, 0.8), 4096, POLE_EPS).unwrap();
        for twice_s in [1u32, 3] {
            let rep = SpinRep::new(twice_s).unwrap();
            let prop =
                propagator_closed_form(&rep, &traj, 4096, PropagatorForm::PhaseAboutZ).unwrap();
            let oracle = oracle_propagator(&rep, &p, 3.0, 100_000).unwrap();
            let gap = max_norm(&(prop.u.clone() - oracle));
            assert!(gap < 1e-6, "spin {twice_s}/2 off by {gap:.3e}");
        }
    }

    #[test]
    fn stepped_oracle_converges_at_second_order() {
        let p = wobbling(3.0);
        let rep = SpinRep::new(2).unwrap();
        let traj = integrate_e(&p, Vec3::new(0.0, 0.6, 0.8), 8192, POLE_EPS).unwrap();
        let truth = propagator_closed_form(&rep, &traj, 8192, PropagatorForm::PhaseAboutZ)
            .unwrap()
            .u;
        let coarse = max_norm(&(oracle_propagator(&rep, &p, 3.0, 2000).unwrap() - &truth));
        let fine = max_norm(&(oracle_propagator(&rep, &p, 3.0, 4000).unwrap() - &truth));
        let ratio = coarse / fine;
        assert!(
            (3.0..=6.0).contains(&ratio),
            "oracle convergence ratio {ratio:.2} (errors {coarse:.3e} / {fine:.3e})"
        );
    }

    #[test]
    fn the_two_forms_agree() {
        // A generic program, plus the meridian program whose trajectory
        // transits the lower pole.
        let cases = [
            (wobbling(5.0), Vec3::new(0.48, 0.6, 0.64)),
            (
                FieldProgram::FixedAxis {
                    axis: Vec3::x(),
                    omega: ScalarWave::Constant { value: 1.0 },
                    t_max: TAU,
                },
                Vec3::z(),
            ),
        ];
        for (p, e0) in cases {
            let traj = integrate_e(&p, e0, 2048, POLE_EPS).unwrap();
            for twice_s in [1u32, 2, 5] {
                let rep = SpinRep::new(twice_s).unwrap();
                for node in [0usize, 511, 1024, 2048] {
                    let a = propagator_closed_form(&rep, &traj, node, PropagatorForm::PhaseAboutZ)
                        .unwrap();
                    let b = propagator_closed_form(
                        &rep,
                        &traj,
                        node,
                        PropagatorForm::PhaseAboutInitialAxis,
                    )
                    .unwrap();
                    let gap = max_norm(&(a.u - b.u));
                    assert!(gap < 1e-10, "spin {twice_s}/2 node {node} gap {gap:.3e}");
                }
            }
        }
    }

    #[test]
    fn starting_point_does_not_change_the_propagator() {
        let p = wobbling(4.0);
        let seeds = [
            Vec3::x(),
            Vec3::new(0.6, 0.48, -0.64),
            -Vec3::z(),
        ];
        for twice_s in [1u32, 2] {
            let rep = SpinRep::new(twice_s).unwrap();
            let mut results = Vec::new();
            for e0 in seeds {
                let traj = integrate_e(&p, e0, 4096, POLE_EPS).unwrap();
                let prop = propagator_closed_form(&rep, &traj, 4096, PropagatorForm::PhaseAboutZ)
                    .unwrap();
                results.push(prop.u);
            }
            // The south seed runs in a rotated working frame; agreement here
            // exercises the conjugation back to the lab.
            for pair in results.windows(2) {
                let gap = max_norm(&(pair[0].clone() - pair[1].clone()));
                assert!(gap < 1e-6, "spin {twice_s}/2 seed disagreement {gap:.3e}");
            }
        }
    }

    #[test]
    fn framed_trajectory_reproduces_the_constant_field_propagator() {
        // For a constant field along x the propagator is exp(i omega_0 t s.x)
        // regardless of the seed; seed at the lower pole to force a frame.
        let p = FieldProgram::FixedAxis {
            axis: Vec3::x(),
            omega: ScalarWave::Constant { value: 1.0 },
            t_max: TAU,
        };
        let traj = integrate_e(&p, -Vec3::z(), 4096, POLE_EPS).unwrap();
        assert!(traj.frame.is_some());
        for twice_s in [1u32, 3] {
            let rep = SpinRep::new(twice_s).unwrap();
            for node in [1024usize, 2048, 4096] {
                let t = traj.times[node];
                let expect = rep.exp_i_spin(t, &Vec3::x()).unwrap();
                let prop = propagator_closed_form(&rep, &traj, node, PropagatorForm::PhaseAboutZ)
                    .unwrap();
                let gap = max_norm(&(prop.u - expect));
                // The working-frame trajectory runs along a meridian, and its
                // two exact pole transits each cost a quadrature error of
                // about pi h^2 / 4, so the bar sits above 1e-6 here.
                assert!(gap < 1e-5, "spin {twice_s}/2 node {node} gap {gap:.3e}");
            }
        }
    }

    #[test]
    fn propagator_stays_unitary_along_the_way() {
        let p = wobbling(5.0);
        let rep = SpinRep::new(4).unwrap();
        let traj = integrate_e(&p, Vec3::new(0.8, 0.0, 0.6), 1024, POLE_EPS).unwrap();
        let id = CMatrix::identity(rep.dim(), rep.dim());
        for node in (0..=1024).step_by(64) {
            let prop =
                propagator_closed_form(&rep, &traj, node, PropagatorForm::PhaseAboutZ).unwrap();
            let gap = max_norm(&(&prop.u * prop.u.adjoint() - &id));
            assert!(gap < 1e-10, "node {node} unitarity gap {gap:.3e}");
        }
    }

    #[test]
    fn solves_the_evolution_equation() {
        let (theta_n, omega, omega_b) = (FRAC_PI_3, 1.0, 2.0);
        let p = rotating(theta_n, omega, omega_b, TAU);
        let traj = integrate_e(&p, Vec3::new(0.28, -0.96, 0.0), 4096, POLE_EPS).unwrap();
        let rep = SpinRep::new(3).unwrap();
        let residual =
            schrodinger_residual(&rep, &p, &traj, PropagatorForm::PhaseAboutZ).unwrap();
        assert!(residual < 1e-5, "equation residual {residual:.3e}");

        let pw = wobbling(4.0);
        let traj_w = integrate_e(&pw, Vec3::new(0.0, 0.6, 0.8), 4096, POLE_EPS).unwrap();
        let rep_half = SpinRep::new(1).unwrap();
        let residual_w =
            schrodinger_residual(&rep_half, &pw, &traj_w, PropagatorForm::PhaseAboutZ).unwrap();
        assert!(residual_w < 1e-5, "equation residual {residual_w:.3e}");
    }

    #[test]
    fn transports_eigenstates_with_the_phase_integral() {
        let p = wobbling(5.0);
        let traj = integrate_e(&p, Vec3::new(0.6, 0.48, 0.64), 2048, POLE_EPS).unwrap();
        for twice_s in [1u32, 2, 3] {
            let rep = SpinRep::new(twice_s).unwrap();
            for twice_m in rep.twice_m_ladder().collect::<Vec<_>>() {
                for node in [256usize, 1024, 2048] {
                    let r = transported_eigenstate_residual(
                        &rep,
                        &traj,
                        node,
                        twice_m,
                        PropagatorForm::PhaseAboutZ,
                    )
                    .unwrap();
                    assert!(
                        r < 1e-7,
                        "spin {twice_s}/2 level {twice_m}/2 node {node} residual {r:.3e}"
                    );
                }
            }
        }
    }

    #[test]
    fn eigenstate_transport_survives_a_pole_transit() {
        // The meridian trajectory crosses the lower pole at t = pi; the
        // residual must stay small on both sides and at the far end.
        let p = FieldProgram::FixedAxis {
            axis: Vec3::x(),
            omega: ScalarWave::Constant { value: 1.0 },
            t_max: TAU,
        };
        let traj = integrate_e(&p, Vec3::z(), 4096, POLE_EPS).unwrap();
        assert_eq!(traj.pole_events.len(), 1);
        let rep = SpinRep::new(1).unwrap();
        for node in [1500usize, 2100, 3000, 4096] {
            let r = transported_eigenstate_residual(
                &rep,
                &traj,
                node,
                1,
                PropagatorForm::PhaseAboutZ,
            )
            .unwrap();
            assert!(r < 1e-6, "node {node} residual {r:.3e}");
        }
    }

    #[test]
    fn zero_field_freezes_the_propagator() {
        let p = FieldProgram::FixedAxis {
            axis: Vec3::z(),
            omega: ScalarWave::Constant { value: 0.0 },
            t_max: 2.0,
        };
        let rep = SpinRep::new(2).unwrap();
        let traj = integrate_e(&p, Vec3::new(0.6, 0.0, 0.8), 256, POLE_EPS).unwrap();
        let id = CMatrix::identity(rep.dim(), rep.dim());
        for node in [0usize, 100, 256] {
            let prop =
                propagator_closed_form(&rep, &traj, node, PropagatorForm::PhaseAboutZ).unwrap();
            assert!(max_norm(&(prop.u - &id)) < 1e-12);
        }
    }

    #[test]
    fn continuity_across_an_ideal_transit() {
        // At an exact lower-pole transit the bookkeeping jumps by
        // (phi, alpha) -> (phi +/- pi, alpha -/+ 2 pi) while theta touches pi.
        // The assembled propagator must not see the seam: build it from the
        // one-sided limits and compare.
        let rep = SpinRep::new(3).unwrap();
        let (theta, phi, alpha) = (PI, 0.83, 1.21);
        let before = rep.exp_i_spin(-theta, &tilt_axis(phi)).unwrap() * rep.exp_i_sz(alpha);
        for sign in [1.0f64, -1.0] {
            let after = rep.exp_i_spin(-theta, &tilt_axis(phi + sign * PI)).unwrap()
                * rep.exp_i_sz(alpha - sign * TAU);
            let gap = max_norm(&(before.clone() - after));
            assert!(gap < 1e-12, "transit seam {gap:.3e} for sign {sign}");
        }
    }

    #[test]
    fn oracle_rejects_empty_grids() {
        let rep = SpinRep::new(1).unwrap();
        let p = wobbling(1.0);
        assert!(oracle_propagator(&rep, &p, 1.0, 0).is_err());
        assert!(oracle_propagator(&rep, &p, 2.0, 64).is_err());
    }

    #[test]
    fn out_of_range_nodes_are_rejected() {
        let p = wobbling(1.0);
        let rep = SpinRep::new(1).unwrap();
        let traj = integrate_e(&p, Vec3::x(), 16, POLE_EPS).unwrap();
        assert!(propagator_closed_form(&rep, &traj, 17, PropagatorForm::PhaseAboutZ).is_err());
        assert!(
            transported_eigenstate_residual(&rep, &traj, 17, 1, PropagatorForm::PhaseAboutZ)
                .is_err()
        );
    }
}
