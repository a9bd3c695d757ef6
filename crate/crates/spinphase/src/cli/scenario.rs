//! Scenario files: the versioned TOML surface of the command line tool.
//!
//! A scenario names a spin size, a field program over [0, tau], one analysis
//! with its parameters, optional tolerance overrides and output paths.
//! Parsing is strict: unknown keys anywhere in the document are rejected,
//! numbers must be finite, axes must be unit vectors, and amplitude lists
//! must carry unit weight (renormalized with a warning when they are close).

use serde::{Deserialize, Serialize};

use crate::cyclic::Tolerances;
use crate::field::{FieldProgram, AXIS_UNIT_TOL};
use crate::spinalg::SpinRep;
use crate::{Complex64, ConfigCode, CVector, Error, Result, Vec3};

/// Trajectory grid used when a scenario does not name one.
pub const DEFAULT_STEPS: usize = 4096;

/// Reference-propagator grid used when a scenario does not name one.
pub const DEFAULT_ORACLE_STEPS: usize = 100_000;

/// Seed for the randomized parts of the verification battery.
pub const DEFAULT_SEED: u64 = 7;

/// Amplitude weight gap accepted without touching the values.
const NORM_SILENT: f64 = 1e-8;

/// Amplitude weight gap still accepted, after renormalization and a warning.
const NORM_RENORM: f64 = 1e-4;

/// The whole scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Config grammar version; only 1 exists.
    pub version: i64,
    pub scenario: ScenarioCore,
    pub field: FieldProgram,
    pub analysis: Analysis,
    #[serde(default)]
    pub tolerances: ToleranceOverrides,
    #[serde(default)]
    pub output: OutputSpec,
}

/// Spin size, interval, grids and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioCore {
    /// Twice the spin quantum number; 1 is spin 1/2.
    pub twice_s: u32,
    /// End of the evolution interval; must equal the field program domain.
    pub tau: f64,
    /// Seeding direction for trajectory-level analyses; defaults to the
    /// polar axis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e0: Option<[f64; 3]>,
    /// Trajectory grid; defaults to 4096, at least 8.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// Reference-propagator grid; defaults to 100000.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_steps: Option<usize>,
    /// Seed for randomized verification draws only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// The requested analysis and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Analysis {
    /// One-period propagator with residual diagnostics.
    Propagate,
    /// The guaranteed cyclic family, one report per level.
    EigenFamily,
    /// A rational-angle superposition of levels spaced 2n apart.
    Rational {
        /// Twice the base level.
        twice_m: i32,
        /// Numerator of the claimed alpha(tau) = p pi / n.
        p: i64,
        /// Denominator of the claimed angle.
        n: u32,
        /// Complex weights as [re, im] pairs, one per level.
        coefficients: Vec<[f64; 2]>,
    },
    /// Per-state phase decomposition on an all-cyclic interval.
    AllCyclic {
        /// Initial states as amplitude lists, one [re, im] pair per basis
        /// state, highest level first.
        states: Vec<Vec<[f64; 2]>>,
    },
    /// The invariant battery over this scenario's program and spin.
    VerifySuite,
}

impl Analysis {
    pub fn kind(&self) -> &'static str {
        match self {
            Analysis::Propagate => "propagate",
            Analysis::EigenFamily => "eigen_family",
            Analysis::Rational { .. } => "rational",
            Analysis::AllCyclic { .. } => "all_cyclic",
            Analysis::VerifySuite => "verify_suite",
        }
    }
}

/// Optional overrides of the analysis tolerances.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pole_eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closure: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cyclicity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rational: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_snap: Option<f64>,
}

/// Output artifact paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Report file; written atomically.
    #[serde(default = "default_report_path")]
    pub report: String,
    /// Optional CSV dump of the seeding trajectory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory_csv: Option<String>,
}

fn default_report_path() -> String {
    "report.json".into()
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            report: default_report_path(),
            trajectory_csv: None,
        }
    }
}

impl Scenario {
    pub fn steps(&self) -> usize {
        self.scenario.steps.unwrap_or(DEFAULT_STEPS)
    }

    pub fn oracle_steps(&self) -> usize {
        self.scenario.oracle_steps.unwrap_or(DEFAULT_ORACLE_STEPS)
    }

    pub fn seed(&self) -> u64 {
        self.scenario.seed.unwrap_or(DEFAULT_SEED)
    }

    /// Seeding direction, the polar axis unless the file names one.
    pub fn e0(&self) -> Vec3 {
        match self.scenario.e0 {
            Some([x, y, z]) => Vec3::new(x, y, z),
            None => Vec3::z(),
        }
    }

    pub fn rep(&self) -> Result<SpinRep> {
        SpinRep::new(self.scenario.twice_s)
    }

    /// Analysis tolerances with the file's overrides applied.
    pub fn tolerances(&self) -> Tolerances {
        let d = Tolerances::default();
        let o = &self.tolerances;
        Tolerances {
            pole_eps: o.pole_eps.unwrap_or(d.pole_eps),
            closure: o.closure.unwrap_or(d.closure),
            cyclicity: o.cyclicity.unwrap_or(d.cyclicity),
            rational: o.rational.unwrap_or(d.rational),
            sigma: o.sigma.unwrap_or(d.sigma),
            k_snap: o.k_snap.unwrap_or(d.k_snap),
        }
    }
}

fn config_error(code: ConfigCode, message: impl Into<String>) -> Error {
    Error::Config {
        code,
        message: message.into(),
    }
}

/// Classify a TOML deserialization failure into the nearest config code.
/// The message keeps the parser's location info.
fn classify_toml_error(err: toml::de::Error) -> Error {
    let message = err.to_string();
    let code = if message.contains("missing field") {
        ConfigCode::MissingKey
    } else if message.contains("unknown variant") {
        ConfigCode::UnknownFieldKind
    } else if message.contains("unknown field") || message.contains("unexpected keys") {
        ConfigCode::UnknownKey
    } else if message.contains("invalid type") || message.contains("invalid value") {
        ConfigCode::MalformedNumber
    } else {
        ConfigCode::Parse
    };
    config_error(code, message)
}

/// Keys of `reference` that do not appear in `reparsed`, gathered
/// recursively. Deserialization through tagged enums ignores stray keys, so
/// the document is compared against its own round-trip to find them.
fn unknown_keys(reference: &toml::Value, reparsed: &toml::Value, path: &str, out: &mut Vec<String>) {
    match (reference, reparsed) {
        (toml::Value::Table(a), toml::Value::Table(b)) => {
            for (key, val) in a {
                let sub = if path.is_empty() {
                    key.clone()
                } else {
                    format!("{path}.{key}")
                };
                match b.get(key) {
                    Some(other) => unknown_keys(val, other, &sub, out),
                    None => out.push(sub),
                }
            }
        }
        (toml::Value::Array(a), toml::Value::Array(b)) => {
            for (i, (val, other)) in a.iter().zip(b).enumerate() {
                unknown_keys(val, other, &format!("{path}[{i}]"), out);
            }
        }
        _ => {}
    }
}

/// Parse and fully validate a scenario document.
///
/// Returns the scenario plus warnings (amplitude lists that were
/// renormalized). Unknown keys, malformed numbers, non-unit axes and unknown
/// field kinds each fail with their own error code.
pub fn parse_scenario(text: &str) -> Result<(Scenario, Vec<String>)> {
    // The version gate comes first so that documents from a future grammar
    // fail with the version error, not with whatever unknown key happens to
    // be hit first.
    let raw: toml::Table = text.parse().map_err(classify_toml_error)?;
    let raw = toml::Value::Table(raw);
    match raw.get("version") {
        None => {
            return Err(config_error(
                ConfigCode::MissingKey,
                "missing field `version` at the document root",
            ))
        }
        Some(toml::Value::Integer(1)) => {}
        Some(toml::Value::Integer(v)) => {
            return Err(config_error(
                ConfigCode::UnsupportedVersion,
                format!("config version {v} is not supported; this build reads version 1"),
            ))
        }
        Some(other) => {
            return Err(config_error(
                ConfigCode::MalformedNumber,
                format!("version must be the integer 1, got {other}"),
            ))
        }
    }

    let mut scenario: Scenario = toml::from_str(text).map_err(classify_toml_error)?;

    // Tagged enums swallow stray keys silently; diff the raw document
    // against the round-trip to reject them with their paths.
    let echoed = toml::Value::try_from(&scenario)
        .map_err(|e| config_error(ConfigCode::Parse, e.to_string()))?;
    let mut strays = Vec::new();
    unknown_keys(&raw, &echoed, "", &mut strays);
    if let Some(key) = strays.first() {
        return Err(config_error(
            ConfigCode::UnknownKey,
            format!("unknown key `{key}`"),
        ));
    }

    let warnings = validate_scenario(&mut scenario)?;
    Ok((scenario, warnings))
}

/// Cross-field validation and amplitude normalization. Mutates the scenario
/// only by renormalizing amplitude lists; returns one warning per list
/// touched.
fn validate_scenario(sc: &mut Scenario) -> Result<Vec<String>> {
    let rep = SpinRep::new(sc.scenario.twice_s).map_err(|e| {
        config_error(ConfigCode::BadValue, format!("twice_s: {e}"))
    })?;

    let tau = sc.scenario.tau;
    if !(tau.is_finite() && tau > 0.0) {
        return Err(config_error(
            ConfigCode::BadValue,
            format!("scenario.tau must be positive and finite, got {tau}"),
        ));
    }
    sc.field.validate()?;
    let t_max = sc.field.t_max();
    if (tau - t_max).abs() > 1e-9 * tau.max(1.0) {
        return Err(config_error(
            ConfigCode::BadValue,
            format!("scenario.tau = {tau} must equal the field program domain end {t_max}"),
        ));
    }

    if let Some(steps) = sc.scenario.steps {
        if steps < 8 {
            return Err(config_error(
                ConfigCode::BadValue,
                format!("scenario.steps must be at least 8, got {steps}"),
            ));
        }
    }
    if let Some(os) = sc.scenario.oracle_steps {
        if os < 2 {
            return Err(config_error(
                ConfigCode::BadValue,
                format!("scenario.oracle_steps must be at least 2, got {os}"),
            ));
        }
    }
    if let Some([x, y, z]) = sc.scenario.e0 {
        let v = Vec3::new(x, y, z);
        if !v.iter().all(|c| c.is_finite()) {
            return Err(config_error(
                ConfigCode::MalformedNumber,
                "scenario.e0 has a non-finite component",
            ));
        }
        if (v.norm() - 1.0).abs() > AXIS_UNIT_TOL {
            return Err(config_error(
                ConfigCode::NonUnitAxis,
                format!(
                    "scenario.e0 must be a unit vector, got length {:.12}",
                    v.norm()
                ),
            ));
        }
    }

    let t = &sc.tolerances;
    for (name, value) in [
        ("pole_eps", t.pole_eps),
        ("closure", t.closure),
        ("cyclicity", t.cyclicity),
        ("rational", t.rational),
        ("sigma", t.sigma),
        ("k_snap", t.k_snap),
    ] {
        if let Some(v) = value {
            if !(v.is_finite() && v > 0.0) {
                return Err(config_error(
                    ConfigCode::BadValue,
                    format!("tolerances.{name} must be positive and finite, got {v}"),
                ));
            }
        }
    }

    if sc.output.report.is_empty() {
        return Err(config_error(
            ConfigCode::BadValue,
            "output.report must not be empty",
        ));
    }

    let mut warnings = Vec::new();
    match &mut sc.analysis {
        Analysis::Propagate | Analysis::EigenFamily | Analysis::VerifySuite => {}
        Analysis::Rational { coefficients, n, .. } => {
            if *n == 0 {
                return Err(config_error(
                    ConfigCode::BadValue,
                    "analysis.n must be positive",
                ));
            }
            if coefficients.is_empty() {
                return Err(config_error(
                    ConfigCode::BadValue,
                    "analysis.coefficients must not be empty",
                ));
            }
            normalize_amplitudes(coefficients, "analysis.coefficients", &mut warnings)?;
        }
        Analysis::AllCyclic { states } => {
            if states.is_empty() {
                return Err(config_error(
                    ConfigCode::BadValue,
                    "analysis.states must not be empty",
                ));
            }
            for (i, state) in states.iter_mut().enumerate() {
                if state.len() != rep.dim() {
                    return Err(config_error(
                        ConfigCode::BadValue,
                        format!(
                            "analysis.states[{i}] has {} amplitudes but the representation \
                             has {} levels",
                            state.len(),
                            rep.dim()
                        ),
                    ));
                }
                normalize_amplitudes(state, &format!("analysis.states[{i}]"), &mut warnings)?;
            }
        }
    }
    Ok(warnings)
}

/// Enforce unit weight on one amplitude list: silently accept within 1e-8,
/// renormalize with a warning within 1e-4, reject beyond.
fn normalize_amplitudes(
    amps: &mut [[f64; 2]],
    what: &str,
    warnings: &mut Vec<String>,
) -> Result<()> {
    for (i, [re, im]) in amps.iter().enumerate() {
        if !(re.is_finite() && im.is_finite()) {
            return Err(config_error(
                ConfigCode::MalformedNumber,
                format!("{what}[{i}] has a non-finite amplitude"),
            ));
        }
    }
    let weight: f64 = amps.iter().map(|[re, im]| re * re + im * im).sum();
    let gap = (weight - 1.0).abs();
    if gap <= NORM_SILENT {
        // Tidy up sub-warning drift so downstream unit-weight checks never
        // trip on it, but keep exact inputs bit-identical.
        if gap > 1e-12 {
            let scale = 1.0 / weight.sqrt();
            for a in amps.iter_mut() {
                a[0] *= scale;
                a[1] *= scale;
            }
        }
        return Ok(());
    }
    if gap <= NORM_RENORM {
        let scale = 1.0 / weight.sqrt();
        for a in amps.iter_mut() {
            a[0] *= scale;
            a[1] *= scale;
        }
        warnings.push(format!(
            "{what}: weight {weight:.10} renormalized to 1 (gap {gap:.3e})"
        ));
        return Ok(());
    }
    Err(config_error(
        ConfigCode::BadValue,
        format!("{what}: weight {weight:.10} is too far from 1 (gap {gap:.3e})"),
    ))
}

/// Amplitude pairs as a state vector.
pub fn amplitudes_to_state(amps: &[[f64; 2]]) -> CVector {
    CVector::from_iterator(amps.len(), amps.iter().map(|[re, im]| Complex64::new(*re, *im)))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
version = 1

[scenario]
twice_s = 1
tau = 6.283185307179586

[field]
kind = "fixed_axis"
axis = [0.0, 0.0, 1.0]
t_max = 6.283185307179586

[field.omega]
form = "constant"
value = 1.0

[analysis]
kind = "propagate"
"#;

    #[test]
    fn minimal_scenario_fills_defaults() {
        let (sc, warnings) = parse_scenario(MINIMAL).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(sc.steps(), 4096);
        assert_eq!(sc.oracle_steps(), 100_000);
        assert_eq!(sc.seed(), DEFAULT_SEED);
        assert_eq!(sc.e0(), Vec3::z());
        assert_eq!(sc.output.report, "report.json");
        assert_eq!(sc.analysis.kind(), "propagate");
        assert_eq!(sc.tolerances(), Tolerances::default());
    }

    #[test]
    fn version_gate_comes_first() {
        let missing = MINIMAL.replace("version = 1", "");
        let err = parse_scenario(&missing).unwrap_err();
        assert_eq!(err.code(), "missing_key");
        let future = MINIMAL.replace("version = 1", "version = 2");
        let err = parse_scenario(&future).unwrap_err();
        assert_eq!(err.code(), "unsupported_version");
    }

    #[test]
    fn distinct_codes_for_distinct_mistakes() {
        let missing = MINIMAL.replace("tau = 6.283185307179586\n", "");
        assert_eq!(parse_scenario(&missing).unwrap_err().code(), "missing_key");

        let malformed = MINIMAL.replace("tau = 6.283185307179586", "tau = \"soon\"");
        assert_eq!(
            parse_scenario(&malformed).unwrap_err().code(),
            "malformed_number"
        );

        let bad_axis = MINIMAL.replace("axis = [0.0, 0.0, 1.0]", "axis = [0.0, 0.0, 2.0]");
        assert_eq!(
            parse_scenario(&bad_axis).unwrap_err().code(),
            "non_unit_axis"
        );

        let bad_kind = MINIMAL.replace("kind = \"fixed_axis\"", "kind = \"swirling\"");
        assert_eq!(
            parse_scenario(&bad_kind).unwrap_err().code(),
            "unknown_field_kind"
        );

        let stray_top = format!("{MINIMAL}\n[extra]\nx = 1\n");
        assert_eq!(parse_scenario(&stray_top).unwrap_err().code(), "unknown_key");
    }

    #[test]
    fn stray_keys_inside_tagged_tables_are_caught() {
        let stray = MINIMAL.replace(
            "t_max = 6.283185307179586\n\n[field.omega]",
            "t_max = 6.283185307179586\nextra = 3\n\n[field.omega]",
        );
        let err = parse_scenario(&stray).unwrap_err();
        assert_eq!(err.code(), "unknown_key");
        assert!(err.to_string().contains("extra"), "{err}");
    }

    #[test]
    fn tau_must_match_the_program_domain() {
        let off = MINIMAL.replace(
            "tau = 6.283185307179586",
            "tau = 6.0",
        );
        let err = parse_scenario(&off).unwrap_err();
        assert_eq!(err.code(), "bad_value");
        assert!(err.to_string().contains("domain"));
    }

    #[test]
    fn amplitude_normalization_ladder() {
        let base = MINIMAL.replace(
            "[analysis]\nkind = \"propagate\"",
            "[analysis]\nkind = \"all_cyclic\"\nstates = [[[0.6, 0.0], [0.8, 0.0]]]",
        );
        let (sc, warnings) = parse_scenario(&base).unwrap();
        assert!(warnings.is_empty());
        if let Analysis::AllCyclic { states } = &sc.analysis {
            assert_eq!(states[0], vec![[0.6, 0.0], [0.8, 0.0]]);
        } else {
            panic!("analysis kind changed");
        }

        // A weight off by 1e-5 is renormalized with a warning.
        let slightly_off = MINIMAL.replace(
            "[analysis]\nkind = \"propagate\"",
            "[analysis]\nkind = \"all_cyclic\"\nstates = [[[0.600003, 0.0], [0.8, 0.0]]]",
        );
        let (sc, warnings) = parse_scenario(&slightly_off).unwrap();
        assert_eq!(warnings.len(), 1);
        if let Analysis::AllCyclic { states } = &sc.analysis {
            let w: f64 = states[0].iter().map(|[re, im]| re * re + im * im).sum();
            assert!((w - 1.0).abs() < 1e-14);
        } else {
            panic!("analysis kind changed");
        }

        // A weight off by 1e-2 is rejected.
        let far_off = MINIMAL.replace(
            "[analysis]\nkind = \"propagate\"",
            "[analysis]\nkind = \"all_cyclic\"\nstates = [[[0.61, 0.0], [0.8, 0.0]]]",
        );
        assert_eq!(parse_scenario(&far_off).unwrap_err().code(), "bad_value");
    }

    #[test]
    fn rational_scenario_round_trips() {
        let text = r#"
version = 1

[scenario]
twice_s = 2
tau = 3.141592653589793
steps = 1024

[field]
kind = "fixed_axis"
axis = [0.0, 0.0, 1.0]
t_max = 3.141592653589793

[field.omega]
form = "constant"
value = 1.0

[analysis]
kind = "rational"
twice_m = -2
p = 1
n = 1
coefficients = [[0.6, 0.0], [0.8, 0.0]]

[tolerances]
rational = 1e-6

[output]
report = "rational.json"
"#;
        let (sc, warnings) = parse_scenario(text).unwrap();
        assert!(warnings.is_empty());
        let echoed = toml::to_string(&sc).unwrap();
        let (sc2, warnings2) = parse_scenario(&echoed).unwrap();
        assert!(warnings2.is_empty());
        assert_eq!(sc, sc2);
    }

    #[test]
    fn state_length_must_match_the_representation() {
        let wrong = MINIMAL.replace(
            "[analysis]\nkind = \"propagate\"",
            "[analysis]\nkind = \"all_cyclic\"\nstates = [[[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]]]",
        );
        let err = parse_scenario(&wrong).unwrap_err();
        assert_eq!(err.code(), "bad_value");
        assert!(err.to_string().contains("levels"));
    }

    #[test]
    fn steps_floor_is_enforced()  {
        let low = MINIMAL.replace(
            "twice_s = 1\ntau",
            "twice_s = 1\nsteps = 4\ntau",
        );
        let err = parse_scenario(&low).unwrap_err();
        assert_eq!(err.code(), "bad_value");
        assert!(err.to_string().contains("steps"));
    }
}
