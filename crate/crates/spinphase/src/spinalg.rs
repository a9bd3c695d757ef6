//! Spin matrices for an arbitrary representation and the operations on them
//! that the propagator needs: the projection s.b, its exponential, and its
//! eigenstates along any direction.
//!
//! A representation is labeled by the integer 2s, so half-integer spins stay
//! exact. The basis is ordered by descending magnetic quantum number, which
//! makes sz a descending diagonal ladder s, s-1, ..., -s.

use crate::{CMatrix, CVector, Complex64, Error, Result, Vec3};

/// Largest supported 2s. Bigger representations are out of scope and mostly
/// serve to catch garbage input.
pub const MAX_TWICE_S: u32 = 40;

/// Unit-vector tolerance for directions passed into the algebra.
pub const UNIT_TOL: f64 = 1e-9;

/// How far a computed eigenvalue of s.b may sit from its exact ladder value
/// before the spectral exponential refuses to snap it.
pub const LADDER_SNAP_TOL: f64 = 1e-9;

/// Residual bound enforced on constructed eigenstates.
pub const EIGENSTATE_TOL: f64 = 1e-10;

/// The three spin matrices for one representation.
#[derive(Debug, Clone)]
pub struct SpinRep {
    twice_s: u32,
    sx: CMatrix,
    sy: CMatrix,
    sz: CMatrix,
}

impl SpinRep {
    /// Build the representation with 2s = `twice_s` (1 = spin 1/2, 2 = spin 1, ...).
    ///
    /// Spin zero is rejected: a one-dimensional spin space has no dynamics.
    pub fn new(twice_s: u32) -> Result<Self> {
        if twice_s == 0 {
            return Err(Error::Precondition(
                "twice_s = 0: spin zero has a trivial one-dimensional state space".into(),
            ));
        }
        if twice_s > MAX_TWICE_S {
            return Err(Error::Precondition(format!(
                "twice_s = {twice_s} exceeds the supported maximum {MAX_TWICE_S}"
            )));
        }
        let n = twice_s as usize;
        let dim = n + 1;
        let mut sx = CMatrix::zeros(dim, dim);
        let mut sy = CMatrix::zeros(dim, dim);
        let mut sz = CMatrix::zeros(dim, dim);
        for k in 0..dim {
            sz[(k, k)] = Complex64::new((twice_s as f64 - 2.0 * k as f64) / 2.0, 0.0);
        }
        // Ladder coupling between row k-1 (m+1) and row k (m):
        // <m+1| s+ |m> = sqrt(k (2s + 1 - k)) for k = 1..=2s.
        for k in 1..dim {
            let c = ((k as f64) * ((n + 1 - k) as f64)).sqrt();
            sx[(k - 1, k)] = Complex64::new(c / 2.0, 0.0);
            sx[(k, k - 1)] = Complex64::new(c / 2.0, 0.0);
            sy[(k - 1, k)] = Complex64::new(0.0, -c / 2.0);
            sy[(k, k - 1)] = Complex64::new(0.0, c / 2.0);
        }
        Ok(SpinRep { twice_s, sx, sy, sz })
    }

    pub fn twice_s(&self) -> u32 {
        self.twice_s
    }

    /// The spin value s as a float (exact, since it is a half-integer).
    pub fn s(&self) -> f64 {
        self.twice_s as f64 / 2.0
    }

    pub fn dim(&self) -> usize {
        self.twice_s as usize + 1
    }

    pub fn sx(&self) -> &CMatrix {
        &self.sx
    }

    pub fn sy(&self) -> &CMatrix {
        &self.sy
    }

    pub fn sz(&self) -> &CMatrix {
        &self.sz
    }

    /// Magnetic quantum numbers in basis order (descending), as exact floats.
    pub fn m_ladder(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.dim()).map(move |k| (self.twice_s as f64 - 2.0 * k as f64) / 2.0)
    }

    /// Doubled magnetic quantum numbers in basis order (descending).
    pub fn twice_m_ladder(&self) -> impl Iterator<Item = i32> + '_ {
        (0..self.dim()).map(move |k| self.twice_s as i32 - 2 * k as i32)
    }

    /// Basis index of the level with doubled quantum number `twice_m`.
    ///
    /// Rejects values off the ladder: wrong parity or |m| > s.
    pub fn basis_index(&self, twice_m: i32) -> Result<usize> {
        let ts = self.twice_s as i32;
        if (twice_m - ts) % 2 != 0 {
            return Err(Error::Precondition(format!(
                "twice_m = {twice_m} has the wrong parity for twice_s = {ts}"
            )));
        }
        if twice_m.abs() > ts {
            return Err(Error::Precondition(format!(
                "twice_m = {twice_m} lies outside the ladder for twice_s = {ts}"
            )));
        }
        Ok(((ts - twice_m) / 2) as usize)
    }

    /// The projection s.b for an arbitrary real vector b (no unit requirement).
    pub fn spin_dot(&self, b: &Vec3) -> CMatrix {
        let mut out = self.sx.scale(b.x);
        out += self.sy.scale(b.y);
        out += self.sz.scale(b.z);
        out
    }

    /// exp(i xi s.b) for a unit vector b, via the spectral decomposition of
    /// s.b. The computed eigenvalues must land on the exact ladder within
    /// [`LADDER_SNAP_TOL`]; they are snapped to it before exponentiation so
    /// the result has exactly unimodular spectrum.
    pub fn exp_i_spin(&self, xi: f64, b: &Vec3) -> Result<CMatrix> {
        if (b.norm() - 1.0).abs() > UNIT_TOL {
            return Err(Error::Precondition(format!(
                "exp_i_spin needs a unit axis, got |b| = {:.12}",
                b.norm()
            )));
        }
        let dim = self.dim();
        let eig = self.spin_dot(b).symmetric_eigen();
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &c| {
            eig.eigenvalues[c]
                .partial_cmp(&eig.eigenvalues[a])
                .expect("spin_dot eigenvalues are finite")
        });
        for (k, &i) in order.iter().enumerate() {
            let m_exact = (self.twice_s as f64 - 2.0 * k as f64) / 2.0;
            let gap = (eig.eigenvalues[i] - m_exact).abs();
            if gap > LADDER_SNAP_TOL {
                return Err(Error::Accuracy {
                    what: format!("spectrum of s.b missed ladder value m = {m_exact}"),
                    residual: gap,
                    tolerance: LADDER_SNAP_TOL,
                });
            }
        }
        let mut u = CMatrix::zeros(dim, dim);
        for (k, &i) in order.iter().enumerate() {
            let m_exact = (self.twice_s as f64 - 2.0 * k as f64) / 2.0;
            let phase = Complex64::from_polar(1.0, xi * m_exact);
            let v = eig.eigenvectors.column(i);
            for r in 0..dim {
                let pr = phase * v[r];
                for c in 0..dim {
                    u[(r, c)] += pr * v[c].conj();
                }
            }
        }
        Ok(u)
    }

    /// exp(i xi s_z), assembled directly on the diagonal from the exact
    /// ladder.
    pub fn exp_i_sz(&self, xi: f64) -> CMatrix {
        let dim = self.dim();
        let mut u = CMatrix::zeros(dim, dim);
        for (k, m) in self.m_ladder().enumerate() {
            u[(k, k)] = Complex64::from_polar(1.0, xi * m);
        }
        u
    }

    /// Normalized eigenstate of s.b with eigenvalue m (given as 2m), for a
    /// unit direction b.
    ///
    /// Phase convention: the state is the rotated basis column
    /// exp(-i theta s.d) |m>, where (theta, phi) are the spherical angles of
    /// b and d = (-sin phi, cos phi, 0). For b on the z-axis (either pole)
    /// phi = 0 is used.
    pub fn eigenstate_of_spin_dot(&self, b: &Vec3, twice_m: i32) -> Result<CVector> {
        if (b.norm() - 1.0).abs() > UNIT_TOL {
            return Err(Error::Precondition(format!(
                "eigenstate_of_spin_dot needs a unit axis, got |b| = {:.12}",
                b.norm()
            )));
        }
        let idx = self.basis_index(twice_m)?;
        let theta = b.z.clamp(-1.0, 1.0).acos();
        let phi = if b.x == 0.0 && b.y == 0.0 {
            0.0
        } else {
            b.y.atan2(b.x)
        };
        let d = Vec3::new(-phi.sin(), phi.cos(), 0.0);
        let rot = self.exp_i_spin(-theta, &d)?;
        let chi: CVector = CVector::from(rot.column(idx));
        let m = twice_m as f64 / 2.0;
        let residual = {
            let mut r = self.spin_dot(b) * &chi;
            r -= chi.scale(m);
            crate::max_norm_vec(&r)
        };
        if residual > EIGENSTATE_TOL {
            return Err(Error::Accuracy {
                what: format!("eigenstate residual for m = {m}"),
                residual,
                tolerance: EIGENSTATE_TOL,
            });
        }
        Ok(chi)
    }

    /// Spin expectation vector <psi| s |psi> for a normalized state.
    pub fn spin_expectation(&self, psi: &CVector) -> Result<Vec3> {
        if psi.len() != self.dim() {
            return Err(Error::Precondition(format!(
                "state length {} does not match representation dimension {}",
                psi.len(),
                self.dim()
            )));
        }
        if (psi.norm() - 1.0).abs() > UNIT_TOL {
            return Err(Error::Precondition(format!(
                "spin_expectation needs a normalized state, got |psi| = {:.12}",
                psi.norm()
            )));
        }
        let ex = psi.dotc(&(&self.sx * psi));
        let ey = psi.dotc(&(&self.sy * psi));
        let ez = psi.dotc(&(&self.sz * psi));
        Ok(Vec3::new(ex.re, ey.re, ez.re))
    }
}

/// Direction with spherical angles (theta, phi).
pub fn unit_from_angles(theta: f64, phi: f64) -> Vec3 {
    Vec3::new(
        theta.sin() * phi.cos(),
        theta.sin() * phi.sin(),
        theta.cos(),
    )
}
