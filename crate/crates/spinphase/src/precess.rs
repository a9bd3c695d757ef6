//! Classical precession trajectories and their closed-loop geometry.
//!
//! The precession equation de/dt = -omega_B(t) n(t) x e moves a unit vector e
//! rigidly, so the map e(0) -> e(t) is a rotation. This module integrates one
//! trajectory with a fixed-step fourth-order Runge-Kutta scheme, tracks the
//! spherical angles (theta, phi) with a continuous unwrap, and accumulates the
//! two phase integrals that the propagator construction consumes:
//!
//!   alpha_geo(t) = -integral (1 - cos theta) dphi
//!   alpha_dyn(t) =  integral omega_B (e . n) dt
//!
//! The geometric integral is taken in azimuth measure: each step contributes
//! the trapezoid weight of (1 - cos theta) times the exact azimuth difference
//! of the endpoints. A fast swing past the lower pole is therefore captured
//! without resolving it in time, because the weight is nearly constant (close
//! to 2) across the swing. Transits are additionally reported as `PoleEvent`
//! bookkeeping with their nominal jumps.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{Rotation3, Unit};

use crate::field::FieldProgram;
use crate::{max_norm_mat3, reduce_phase, Complex64, Error, Mat3, Result, Vec3};

/// Polar cap half-angle below which the azimuth of a node is frozen.
pub const POLE_EPS: f64 = 1e-7;

/// Default gap allowed between the endpoints of a loop that claims to close.
pub const CLOSURE_TOL: f64 = 1e-6;

/// Largest distance from orthogonality tolerated in the end-to-end rotation.
pub const MONODROMY_PROJECTION_TOL: f64 = 1e-6;

/// Angular distance from the lower pole within which a starting point is
/// moved to a rotated working frame. Inside this cap the initial azimuth is
/// poorly conditioned, so the integration runs in coordinates where the
/// start sits near the equator instead.
const FRAME_GUARD: f64 = 1e-3;

/// Unit-length tolerance for the starting vector.
const START_UNIT_TOL: f64 = 1e-9;

/// A recorded transit of the lower pole, with the nominal discontinuities of
/// the idealized crossing: the azimuth jumps by +/- pi and the geometric
/// phase integral by the opposite-signed 2 pi. The quadrature already
/// accounts for both, so events are reporting aids, not corrections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoleEvent {
    pub t: f64,
    pub phi_jump: f64,
    pub alpha_jump: f64,
}

/// Rotation applied to every lab vector before integrating, used when the
/// starting point sits too close to the lower pole. Stored so that results
/// can be carried back: `to_lab` undoes the rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameRotation {
    pub axis: Vec3,
    pub angle: f64,
}

impl FrameRotation {
    pub fn matrix(&self) -> Mat3 {
        *Rotation3::from_axis_angle(&Unit::new_normalize(self.axis), self.angle).matrix()
    }

    /// Lab vector to working-frame vector.
    pub fn to_frame(&self, v: &Vec3) -> Vec3 {
        self.matrix() * v
    }

    /// Working-frame vector back to the lab.
    pub fn to_lab(&self, v: &Vec3) -> Vec3 {
        self.matrix().transpose() * v
    }
}

/// One integrated trajectory on the unit sphere, sampled on an even grid of
/// `steps + 1` nodes spanning [0, t_max]. Angles and phase integrals refer to
/// the working frame; `frame` records the rotation when one was needed and is
/// `None` otherwise.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub e: Vec<Vec3>,
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    pub alpha_geo: Vec<f64>,
    pub alpha_dyn: Vec<f64>,
    pub pole_events: Vec<PoleEvent>,
    /// Largest deviation of the raw step output from unit length, observed
    /// before renormalization.
    pub drift: f64,
    pub frame: Option<FrameRotation>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.len() - 1
    }

    pub fn tau(&self) -> f64 {
        *self.times.last().expect("a trajectory has at least two nodes")
    }

    /// Total phase integral alpha(t_i) = alpha_geo(t_i) + alpha_dyn(t_i).
    pub fn alpha(&self, i: usize) -> f64 {
        self.alpha_geo[i] + self.alpha_dyn[i]
    }

    pub fn alpha_tau(&self) -> f64 {
        self.alpha(self.len() - 1)
    }
}

/// Integrate the precession equation from `e0` over the full domain of the
/// program, with `steps` uniform RK4 steps.
///
/// `pole_eps` sets the polar caps inside which node azimuths are frozen; the
/// crate-wide default is [`POLE_EPS`].
pub fn integrate_e(
    program: &FieldProgram,
    e0: Vec3,
    steps: usize,
    pole_eps: f64,
) -> Result<Trajectory> {
    program.validate()?;
    if steps == 0 {
        return Err(Error::Precondition("steps must be at least 1".into()));
    }
    if !(pole_eps > 0.0 && pole_eps < 0.1) {
        return Err(Error::Precondition(format!(
            "pole_eps must lie in (0, 0.1), got {pole_eps}"
        )));
    }
    if (e0.norm() - 1.0).abs() > START_UNIT_TOL {
        return Err(Error::Precondition(format!(
            "starting vector must be unit length, got {:.12}",
            e0.norm()
        )));
    }
    let tau = program.t_max();

    let theta0 = e0.z.clamp(-1.0, 1.0).acos();
    let frame = if theta0 > PI - FRAME_GUARD {
        Some(FrameRotation {
            axis: Vec3::x(),
            angle: FRAC_PI_2,
        })
    } else {
        None
    };
    let rot = frame.as_ref().map(FrameRotation::matrix);
    let field = |t: f64| -> Result<(f64, Vec3)> {
        let (w, n) = program.evaluate(t)?;
        Ok(match &rot {
            Some(r) => (w, r * n),
            None => (w, n),
        })
    };

    let start = match &rot {
        Some(r) => (r * e0).normalize(),
        None => e0.normalize(),
    };

    let times: Vec<f64> = (0..=steps)
        .map(|i| tau * (i as f64 / steps as f64))
        .collect();

    // The precession derivative; linear in e, so antipodal starting points
    // produce exactly mirrored trajectories.
    fn deriv(w: f64, n: &Vec3, e: &Vec3) -> Vec3 {
        n.cross(e).scale(-w)
    }

    let mut e = Vec::with_capacity(steps + 1);
    e.push(start);
    let mut node_field = Vec::with_capacity(steps + 1);
    node_field.push(field(0.0)?);
    let mut drift = 0.0f64;
    for i in 0..steps {
        let h = times[i + 1] - times[i];
        let (w0, n0) = node_field[i];
        let (wm, nm) = field(times[i] + 0.5 * h)?;
        let (w1, n1) = field(times[i + 1])?;
        let ei = e[i];
        let k1 = deriv(w0, &n0, &ei);
        let k2 = deriv(wm, &nm, &(ei + k1.scale(0.5 * h)));
        let k3 = deriv(wm, &nm, &(ei + k2.scale(0.5 * h)));
        let k4 = deriv(w1, &n1, &(ei + k3.scale(h)));
        let raw = ei + (k1 + (k2 + k3).scale(2.0) + k4).scale(h / 6.0);
        let norm = raw.norm();
        drift = drift.max((norm - 1.0).abs());
        e.push(raw.scale(1.0 / norm));
        node_field.push((w1, n1));
    }

    let theta: Vec<f64> = e.iter().map(|v| v.z.clamp(-1.0, 1.0).acos()).collect();
    let polar: Vec<bool> = theta
        .iter()
        .map(|&th| th < pole_eps || th > PI - pole_eps)
        .collect();

    // Unwrapped azimuth. Polar nodes inherit the running value; everything
    // else advances by the nearest-branch difference of raw azimuths.
    let mut phi = Vec::with_capacity(steps + 1);
    phi.push(if polar[0] {
        // At a polar start the position azimuth is meaningless; anchor to the
        // direction of motion so the first unfrozen node lands nearby.
        let (w0, n0) = node_field[0];
        let v = deriv(w0, &n0, &e[0]);
        if v.x.hypot(v.y) > 0.0 {
            v.y.atan2(v.x)
        } else {
            0.0
        }
    } else {
        e[0].y.atan2(e[0].x)
    });
    for i in 0..steps {
        let dphi = if polar[i + 1] {
            0.0
        } else {
            reduce_phase(e[i + 1].y.atan2(e[i + 1].x) - phi[i])
        };
        phi.push(phi[i] + dphi);
    }

    // Phase integrals, trapezoid in azimuth measure (geometric part) and in
    // time (dynamical part). Note 1 - cos theta is exactly 1 - e_z.
    let mut alpha_geo = Vec::with_capacity(steps + 1);
    let mut alpha_dyn = Vec::with_capacity(steps + 1);
    alpha_geo.push(0.0);
    alpha_dyn.push(0.0);
    for i in 0..steps {
        let weight = 0.5 * ((1.0 - e[i].z) + (1.0 - e[i + 1].z));
        alpha_geo.push(alpha_geo[i] - weight * (phi[i + 1] - phi[i]));
        let p0 = node_field[i].0 * e[i].dot(&node_field[i].1);
        let p1 = node_field[i + 1].0 * e[i + 1].dot(&node_field[i + 1].1);
        alpha_dyn.push(alpha_dyn[i] + 0.5 * (p0 + p1) * (times[i + 1] - times[i]));
    }

    // Transit bookkeeping: group consecutive steps that either touch the
    // lower polar cap or swing the azimuth fast while deep in the southern
    // hemisphere, and record one event per group whose net swing is large.
    let pole_ish = |i: usize| -> bool {
        let th_hi = theta[i].max(theta[i + 1]);
        let th_lo = theta[i].min(theta[i + 1]);
        let dphi = phi[i + 1] - phi[i];
        th_hi > PI - pole_eps || (dphi.abs() > FRAC_PI_2 && th_lo > FRAC_PI_2)
    };
    let mut pole_events = Vec::new();
    let mut i = 0;
    while i < steps {
        if !pole_ish(i) {
            i += 1;
            continue;
        }
        let mut j = i;
        let mut swing = 0.0;
        let mut t_peak = times[i];
        let mut th_peak = f64::NEG_INFINITY;
        while j < steps && pole_ish(j) {
            swing += phi[j + 1] - phi[j];
            for k in [j, j + 1] {
                if theta[k] > th_peak {
                    th_peak = theta[k];
                    t_peak = times[k];
                }
            }
            j += 1;
        }
        if swing.abs() > FRAC_PI_2 {
            pole_events.push(PoleEvent {
                t: t_peak,
                phi_jump: PI.copysign(swing),
                alpha_jump: -TAU.copysign(swing),
            });
        }
        i = j;
    }

    Ok(Trajectory {
        times,
        e,
        theta,
        phi,
        alpha_geo,
        alpha_dyn,
        pole_events,
        drift,
        frame,
    })
}

/// Invariants of a closed trajectory: the oriented solid angle swept by the
/// loop and its winding number about the polar axis of the working frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopInvariants {
    pub omega: f64,
    pub winding: i64,
}

/// Check that the trajectory closes within `gap <= closure_tol` and return
/// its loop invariants. The solid angle is the negated geometric phase
/// integral at the endpoint; the winding number is the net azimuth advance in
/// full turns. Loops that terminate on a pole have half-integer winding and
/// round here, so interpret the result only for loops that stay clear.
pub fn closed_loop_invariants(traj: &Trajectory, closure_tol: f64) -> Result<LoopInvariants> {
    let first = traj.e.first().expect("a trajectory has at least two nodes");
    let last = traj.e.last().expect("a trajectory has at least two nodes");
    let gap = (last - first).norm();
    if gap > closure_tol {
        return Err(Error::Accuracy {
            what: "loop closure gap".into(),
            residual: gap,
            tolerance: closure_tol,
        });
    }
    let turns = (traj.phi.last().unwrap() - traj.phi[0]) / TAU;
    Ok(LoopInvariants {
        omega: -traj.alpha_geo.last().unwrap(),
        winding: turns.round() as i64,
    })
}

/// The end-to-end rotation of one period, its rotation angle and axis.
#[derive(Debug, Clone)]
pub struct Monodromy {
    /// Rotation matrix taking e(0) to e(t_max), projected onto the nearest
    /// orthogonal matrix.
    pub matrix: Mat3,
    /// How far the raw column matrix sat from the projection.
    pub projection_delta: f64,
    /// Rotation angle in [0, pi].
    pub rho: f64,
    /// Unimodular eigenvalue exp(i rho).
    pub sigma: Complex64,
    /// Rotation axis for the +rho convention. For a near-identity rotation
    /// the axis is unconstrained and defaults to the polar axis.
    pub axis: Vec3,
    /// Whether sigma is within `sigma_tol` of 1, making every starting point
    /// of the loop return to itself.
    pub is_identity: bool,
}

/// Build the end-to-end rotation by transporting the three coordinate axes
/// across the program domain, then extract its angle and axis.
pub fn monodromy(
    program: &FieldProgram,
    steps: usize,
    pole_eps: f64,
    sigma_tol: f64,
) -> Result<Monodromy> {
    let mut columns = [Vec3::zeros(); 3];
    for (k, e0) in [Vec3::x(), Vec3::y(), Vec3::z()].into_iter().enumerate() {
        let traj = integrate_e(program, e0, steps, pole_eps)?;
        columns[k] = *traj.e.last().unwrap();
    }
    let raw = Mat3::from_columns(&columns);

    let svd = raw.svd(true, true);
    let u = svd.u.expect("svd of a 3x3 matrix produces u");
    let v_t = svd.v_t.expect("svd of a 3x3 matrix produces v_t");
    let mut matrix = u * v_t;
    if matrix.determinant() < 0.0 {
        let mut u_flip = u;
        u_flip.column_mut(2).neg_mut();
        matrix = u_flip * v_t;
    }
    let projection_delta = max_norm_mat3(&(raw - matrix));
    if projection_delta > MONODROMY_PROJECTION_TOL {
        return Err(Error::Accuracy {
            what: "transported frame orthogonality".into(),
            residual: projection_delta,
            tolerance: MONODROMY_PROJECTION_TOL,
        });
    }

    let rho = (0.5 * (matrix.trace() - 1.0)).clamp(-1.0, 1.0).acos();
    let sigma = Complex64::from_polar(1.0, rho);
    let is_identity = (sigma - Complex64::new(1.0, 0.0)).norm() < sigma_tol;

    // sin(rho) * axis sits in the antisymmetric part; when that degenerates
    // (rho near pi) fall back to the symmetric part, which is 2 a a^T - I.
    let anti = Vec3::new(
        matrix[(2, 1)] - matrix[(1, 2)],
        matrix[(0, 2)] - matrix[(2, 0)],
        matrix[(1, 0)] - matrix[(0, 1)],
    )
    .scale(0.5);
    let axis = if is_identity {
        Vec3::z()
    } else if anti.norm() > 1e-4 {
        anti.normalize()
    } else {
        let sym = (matrix + Mat3::identity()).scale(0.5);
        let mut j = 0;
        for cand in 1..3 {
            if sym[(cand, cand)] > sym[(j, j)] {
                j = cand;
            }
        }
        let col = Vec3::from(sym.column(j)).normalize();
        // Both signs describe a half-turn; pick the one whose largest
        // component is positive, preferring x over y over z on ties.
        let mut big = 0;
        for cand in 1..3 {
            if col[cand].abs() > col[big].abs() {
                big = cand;
            }
        }
        if col[big] < 0.0 {
            -col
        } else {
            col
        }
    };

    Ok(Monodromy {
        matrix,
        projection_delta,
        rho,
        sigma,
        axis,
        is_identity,
    })
}
