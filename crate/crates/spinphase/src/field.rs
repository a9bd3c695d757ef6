//! Declarative magnetic field programs.
//!
//! A program describes the driving term of the precession equation as a pair
//! (omega_B(t), n(t)) with unit direction n. Programs are plain data so that
//! scenario files can express them, and evaluation is a pure function of
//! (program, t): repeated calls return bitwise identical results.

use serde::{Deserialize, Serialize};

use crate::{ConfigCode, Error, Result, Vec3};

/// Default tolerance for joint continuity of piecewise programs.
pub const CONTINUITY_TOL: f64 = 1e-6;

/// Unit tolerance for axes and sample directions.
pub const AXIS_UNIT_TOL: f64 = 1e-9;

/// Relative slack applied at the upper domain edge so that a node computed
/// as t_end * (i / steps) never trips the domain check by one rounding step.
const DOMAIN_EDGE_SLACK: f64 = 1e-9;

pub(crate) mod vec3_serde {
    use super::Vec3;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Vec3, s: S) -> std::result::Result<S::Ok, S::Error> {
        let arr = [v.x, v.y, v.z];
        serde::Serialize::serialize(&arr, s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec3, D::Error> {
        let arr: Vec<f64> = Deserialize::deserialize(d)?;
        if arr.len() != 3 {
            return Err(D::Error::custom(format!(
                "expected a 3-vector, got {} entries",
                arr.len()
            )));
        }
        Ok(Vec3::new(arr[0], arr[1], arr[2]))
    }
}

/// Scalar wave forms available to programs, evaluated as a pure function of t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarWave {
    /// Constant value.
    Constant { value: f64 },
    /// base + amp * sin(freq * t + phase)
    Sinusoid {
        base: f64,
        amp: f64,
        freq: f64,
        phase: f64,
    },
}

impl ScalarWave {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            ScalarWave::Constant { value } => *value,
            ScalarWave::Sinusoid {
                base,
                amp,
                freq,
                phase,
            } => base + amp * (freq * t + phase).sin(),
        }
    }

    fn validate(&self) -> Result<()> {
        let vals: Vec<f64> = match self {
            ScalarWave::Constant { value } => vec![*value],
            ScalarWave::Sinusoid {
                base,
                amp,
                freq,
                phase,
            } => vec![*base, *amp, *freq, *phase],
        };
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config {
                code: ConfigCode::MalformedNumber,
                message: "scalar wave has a non-finite coefficient".into(),
            });
        }
        Ok(())
    }
}

/// Angle track of the form `offset + rate * t + amp * sin(freq * t + phase)`.
///
/// Unused coefficients default to zero in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AngleTrack {
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub rate: f64,
    #[serde(default)]
    pub amp: f64,
    #[serde(default)]
    pub freq: f64,
    #[serde(default)]
    pub phase: f64,
}

impl AngleTrack {
    pub fn eval(&self, t: f64) -> f64 {
        self.offset + self.rate * t + self.amp * (self.freq * t + self.phase).sin()
    }

    fn validate(&self) -> Result<()> {
        for v in [self.offset, self.rate, self.amp, self.freq, self.phase] {
            if !v.is_finite() {
                return Err(Error::Config {
                    code: ConfigCode::MalformedNumber,
                    message: "angle track has a non-finite coefficient".into(),
                });
            }
        }
        Ok(())
    }
}

/// One node of a sampled program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub t: f64,
    pub omega_b: f64,
    #[serde(with = "vec3_serde")]
    pub n: Vec3,
}

/// One segment of a piecewise program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub duration: f64,
    pub program: FieldProgram,
}

/// A magnetic field program: strength omega_B(t) and unit direction n(t) on
/// the time domain [0, t_max].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldProgram {
    /// Fixed direction, possibly time-dependent strength.
    FixedAxis {
        #[serde(with = "vec3_serde")]
        axis: Vec3,
        omega: ScalarWave,
        t_max: f64,
    },
    /// Direction on a cone of polar angle theta_n, azimuth advancing at
    /// constant rate omega, constant strength omega_b.
    Rotating {
        theta_n: f64,
        omega: f64,
        omega_b: f64,
        t_max: f64,
    },
    /// Smooth closed-form direction given by spherical angle tracks, with a
    /// scalar wave strength.
    Wobbling {
        omega: ScalarWave,
        theta: AngleTrack,
        phi: AngleTrack,
        t_max: f64,
    },
    /// Tabulated field. Between nodes the weighted vector omega_B * n is
    /// interpolated linearly; the direction is renormalized and the raw
    /// magnitude becomes omega_B.
    Sampled { samples: Vec<Sample> },
    /// Segments played back to back. Joint values of omega_B * n must agree
    /// within `continuity_tol` (default 1e-6).
    Piecewise {
        segments: Vec<Segment>,
        #[serde(default = "default_continuity_tol")]
        continuity_tol: f64,
    },
}

fn default_continuity_tol() -> f64 {
    CONTINUITY_TOL
}

impl FieldProgram {
    /// End of the declared time domain.
    pub fn t_max(&self) -> f64 {
        match self {
            FieldProgram::FixedAxis { t_max, .. }
            | FieldProgram::Rotating { t_max, .. }
            | FieldProgram::Wobbling { t_max, .. } => *t_max,
            FieldProgram::Sampled { samples } => samples.last().map(|s| s.t).unwrap_or(0.0),
            FieldProgram::Piecewise { segments, .. } => {
                segments.iter().map(|s| s.duration).sum()
            }
        }
    }

    /// Validate the program once before use: unit axes, sane grids, positive
    /// durations, continuity at piecewise joints.
    pub fn validate(&self) -> Result<()> {
        match self {
            FieldProgram::FixedAxis { axis, omega, t_max } => {
                check_unit(axis, "fixed_axis axis")?;
                omega.validate()?;
                check_t_max(*t_max)
            }
            FieldProgram::Rotating {
                theta_n,
                omega,
                omega_b,
                t_max,
            } => {
                for v in [*theta_n, *omega, *omega_b] {
                    if !v.is_finite() {
                        return Err(Error::Config {
                            code: ConfigCode::MalformedNumber,
                            message: "rotating program has a non-finite parameter".into(),
                        });
                    }
                }
                check_t_max(*t_max)
            }
            FieldProgram::Wobbling {
                omega,
                theta,
                phi,
                t_max,
            } => {
                omega.validate()?;
                theta.validate()?;
                phi.validate()?;
                check_t_max(*t_max)
            }
            FieldProgram::Sampled { samples } => {
                if samples.len() < 2 {
                    return Err(Error::Config {
                        code: ConfigCode::BadValue,
                        message: format!(
                            "sampled program needs at least 2 samples, got {}",
                            samples.len()
                        ),
                    });
                }
                if samples[0].t != 0.0 {
                    return Err(Error::Config {
                        code: ConfigCode::BadValue,
                        message: format!(
                            "sampled grid must start at t = 0, got t = {}",
                            samples[0].t
                        ),
                    });
                }
                for w in samples.windows(2) {
                    if !(w[1].t > w[0].t) {
                        return Err(Error::Config {
                            code: ConfigCode::BadValue,
                            message: format!(
                                "sample times must increase strictly, got {} then {}",
                                w[0].t, w[1].t
                            ),
                        });
                    }
                }
                for (i, s) in samples.iter().enumerate() {
                    if !s.t.is_finite() || !s.omega_b.is_finite() || !s.n.iter().all(|x| x.is_finite()) {
                        return Err(Error::Config {
                            code: ConfigCode::MalformedNumber,
                            message: format!("sample {i} has a non-finite entry"),
                        });
                    }
                    check_unit(&s.n, &format!("sample {i} direction"))?;
                }
                Ok(())
            }
            FieldProgram::Piecewise {
                segments,
                continuity_tol,
            } => {
                if segments.is_empty() {
                    return Err(Error::Config {
                        code: ConfigCode::BadValue,
                        message: "piecewise program has no segments".into(),
                    });
                }
                if !continuity_tol.is_finite() || *continuity_tol <= 0.0 {
                    return Err(Error::Config {
                        code: ConfigCode::BadValue,
                        message: "piecewise continuity_tol must be positive".into(),
                    });
                }
                for (i, seg) in segments.iter().enumerate() {
                    if !(seg.duration.is_finite() && seg.duration > 0.0) {
                        return Err(Error::Config {
                            code: ConfigCode::BadValue,
                            message: format!("segment {i} duration must be positive"),
                        });
                    }
                    if seg.duration > seg.program.t_max() + 1e-12 * seg.duration.abs() {
                        return Err(Error::Config {
                            code: ConfigCode::BadValue,
                            message: format!(
                                "segment {i} duration {} exceeds its program domain {}",
                                seg.duration,
                                seg.program.t_max()
                            ),
                        });
                    }
                    seg.program.validate()?;
                }
                for (i, pair) in segments.windows(2).enumerate() {
                    let (wl, nl) = pair[0].program.evaluate(pair[0].duration)?;
                    let (wr, nr) = pair[1].program.evaluate(0.0)?;
                    let gap = (nl.scale(wl) - nr.scale(wr)).norm();
                    if gap > *continuity_tol {
                        return Err(Error::Config {
                            code: ConfigCode::BadValue,
                            message: format!(
                                "piecewise joint {i} -> {} is discontinuous: |dB| = {gap:.3e} exceeds {continuity_tol:.3e}",
                                i + 1
                            ),
                        });
                    }
                }
                Ok(())
            }
        }
    }

    /// Evaluate (omega_B(t), n(t)). Fails with a domain error outside
    /// [0, t_max] (a relative slack of 1e-9 is allowed at the upper edge).
    pub fn evaluate(&self, t: f64) -> Result<(f64, Vec3)> {
        let t_max = self.t_max();
        if !t.is_finite() || t < 0.0 || t > t_max * (1.0 + DOMAIN_EDGE_SLACK) + f64::MIN_POSITIVE {
            return Err(Error::Domain { t, t_max });
        }
        let t = t.min(t_max);
        match self {
            FieldProgram::FixedAxis { axis, omega, .. } => Ok((omega.eval(t), *axis)),
            FieldProgram::Rotating {
                theta_n,
                omega,
                omega_b,
                ..
            } => {
                let a = omega * t;
                Ok((
                    *omega_b,
                    Vec3::new(
                        theta_n.sin() * a.cos(),
                        theta_n.sin() * a.sin(),
                        theta_n.cos(),
                    ),
                ))
            }
            FieldProgram::Wobbling {
                omega, theta, phi, ..
            } => {
                let th = theta.eval(t);
                let ph = phi.eval(t);
                Ok((
                    omega.eval(t),
                    Vec3::new(th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()),
                ))
            }
            FieldProgram::Sampled { samples } => {
                // Index of the first sample with time > t (clamped so that
                // t = t_max lands in the last interval).
                let hi = samples
                    .partition_point(|s| s.t <= t)
                    .clamp(1, samples.len() - 1);
                let lo = hi - 1;
                let (a, b) = (&samples[lo], &samples[hi]);
                let u = ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
                let w = a.n.scale(a.omega_b * (1.0 - u)) + b.n.scale(b.omega_b * u);
                let mag = w.norm();
                if mag > 1e-12 {
                    Ok((mag, w / mag))
                } else {
                    // Strength vanished; direction is irrelevant for the
                    // dynamics, keep the left node's for determinism.
                    Ok((0.0, a.n.normalize()))
                }
            }
            FieldProgram::Piecewise { segments, .. } => {
                let mut start = 0.0;
                for (i, seg) in segments.iter().enumerate() {
                    let end = start + seg.duration;
                    let last = i == segments.len() - 1;
                    if t < end || last {
                        return seg.program.evaluate((t - start).min(seg.duration).max(0.0));
                    }
                    start = end;
                }
                unreachable!("piecewise programs are validated non-empty");
            }
        }
    }
}

fn check_unit(v: &Vec3, what: &str) -> Result<()> {
    if !v.iter().all(|x| x.is_finite()) {
        return Err(Error::Config {
            code: ConfigCode::MalformedNumber,
            message: format!("{what} has a non-finite component"),
        });
    }
    if (v.norm() - 1.0).abs() > AXIS_UNIT_TOL {
        return Err(Error::Config {
            code: ConfigCode::NonUnitAxis,
            message: format!("{what} must be a unit vector, got length {:.12}", v.norm()),
        });
    }
    Ok(())
}

fn check_t_max(t_max: f64) -> Result<()> {
    if !(t_max.is_finite() && t_max > 0.0) {
        return Err(Error::Config {
            code: ConfigCode::BadValue,
            message: format!("t_max must be positive and finite, got {t_max}"),
        });
    }
    Ok(())
}
