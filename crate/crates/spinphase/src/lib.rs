//! Exact spin evolution in a time-dependent uniform magnetic field.
//!
//! The time evolution operator for a spin of any size is assembled in closed
//! form from a single classical precession trajectory: integrate the unit
//! moment direction e(t), read off its spherical angles and an accumulated
//! phase, and sandwich a z-axis phase between two axis-angle exponentials.
//! On top of the propagator the crate enumerates cyclic initial states and
//! splits their total phase into dynamic and geometric parts, with the
//! geometric part tied to the solid angle swept by the moment.
//!
//! Modules follow the pipeline order:
//!
//! * [`spinalg`]: spin matrices for any representation, exponentials of
//!   spin-axis products, eigenstates along an arbitrary direction.
//! * [`field`]: declarative field programs omega_B(t), n(t).
//! * [`precess`]: the classical trajectory integrator, its angle and phase
//!   bookkeeping, solid angle and winding, and the monodromy rotation.
//! * [`propagate`]: the closed-form propagator, a brute-force time-ordered
//!   reference, and residual checks.
//! * [`cyclic`]: cyclic-state families and their phase decompositions.
//! * [`cli`]: scenario files, report serialization, and the command surface.

pub mod cli;
pub mod cyclic;
pub mod field;
pub mod precess;
pub mod propagate;
pub mod spinalg;

use std::fmt;

pub use num_complex::Complex64;

/// Dense complex matrix used for everything in spin space.
pub type CMatrix = nalgebra::DMatrix<Complex64>;
/// Dense complex column vector (a spin state).
pub type CVector = nalgebra::DVector<Complex64>;
/// Real 3-vector.
pub type Vec3 = nalgebra::Vector3<f64>;
/// Real 3x3 matrix.
pub type Mat3 = nalgebra::Matrix3<f64>;

/// Machine-readable codes for scenario configuration failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigCode {
    MissingKey,
    UnknownKey,
    MalformedNumber,
    NonUnitAxis,
    UnknownFieldKind,
    UnsupportedVersion,
    BadValue,
    Parse,
}

impl ConfigCode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ConfigCode::MissingKey => "missing_key",
            ConfigCode::UnknownKey => "unknown_key",
            ConfigCode::MalformedNumber => "malformed_number",
            ConfigCode::NonUnitAxis => "non_unit_axis",
            ConfigCode::UnknownFieldKind => "unknown_field_kind",
            ConfigCode::UnsupportedVersion => "unsupported_version",
            ConfigCode::BadValue => "bad_value",
            ConfigCode::Parse => "parse_error",
        }
    }
}

impl fmt::Display for ConfigCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument violates a documented precondition.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A field program was evaluated outside its declared time domain.
    #[error("time {t} outside field program domain [0, {t_max}]")]
    Domain { t: f64, t_max: f64 },

    /// A scenario file failed to parse or validate.
    #[error("configuration error [{code}]: {message}")]
    Config { code: ConfigCode, message: String },

    /// A numerical result missed its accuracy contract; raising the step
    /// count is the usual fix.
    #[error("{what}: residual {residual:.3e} exceeds tolerance {tolerance:.3e}; raise steps")]
    Accuracy {
        what: String,
        residual: f64,
        tolerance: f64,
    },

    /// The requested analysis does not apply to this program (for example an
    /// all-cyclic analysis when the monodromy is not the identity).
    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable code, used in error reports and exit logic.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Precondition(_) => "precondition",
            Error::Domain { .. } => "domain",
            Error::Config { code, .. } => code.as_str(),
            Error::Accuracy { .. } => "accuracy",
            Error::NotApplicable(_) => "not_applicable",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Reduce a phase to the canonical interval (-pi, pi].
pub fn reduce_phase(x: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let y = x.rem_euclid(tau);
    if y > std::f64::consts::PI {
        y - tau
    } else {
        y
    }
}

/// Distance between two phases on the circle, in [0, pi].
pub fn phase_gap(a: f64, b: f64) -> f64 {
    reduce_phase(a - b).abs()
}

/// Largest entry modulus of a complex matrix (or vector; both store entries
/// the same way). Residual thresholds in this crate are all max-entry norms
/// so that they do not scale with the representation dimension.
pub fn max_norm(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Max-entry norm of a complex vector.
pub fn max_norm_vec(v: &CVector) -> f64 {
    v.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Max-entry norm of a real 3-vector.
pub fn max_norm_vec3(v: &Vec3) -> f64 {
    v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

/// Max-entry norm of a real 3x3 matrix.
pub fn max_norm_mat3(m: &Mat3) -> f64 {
    m.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn reduce_phase_canonical_interval() {
        assert_eq!(reduce_phase(0.0), 0.0);
        assert_eq!(reduce_phase(PI), PI);
        assert_eq!(reduce_phase(-PI), PI);
        assert!((reduce_phase(3.0 * PI) - PI).abs() < 1e-15);
        assert!((reduce_phase(-0.5) + 0.5).abs() < 1e-15);
        assert!((reduce_phase(2.0 * PI) - 0.0).abs() < 1e-15);
        // idempotent
        for x in [-9.9, -3.2, 0.1, 4.7, 123.456] {
            let r = reduce_phase(x);
            assert_eq!(reduce_phase(r), r);
            assert!(r > -PI && r <= PI);
        }
    }

    #[test]
    fn phase_gap_is_circular() {
        assert!(phase_gap(PI - 1e-3, -PI + 1e-3) < 2.1e-3);
        assert!((phase_gap(0.0, PI) - PI).abs() < 1e-15);
        assert_eq!(phase_gap(1.25, 1.25), 0.0);
    }
}
