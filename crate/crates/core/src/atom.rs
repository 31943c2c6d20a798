//! Physical parameters of the two-photon Rydberg excitation scheme, derived
//! scalar quantities and the state-detection model.
//!
//! Public parameters are ordinary frequencies (MHz), rates in 1/us and
//! times in us. Angular frequencies only appear inside the simulator.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boltzmann constant, J/K (exact SI value).
pub const BOLTZMANN: f64 = 1.380649e-23;
/// Mass of a rubidium-87 atom, kg.
pub const RB87_MASS: f64 = 1.443160648e-25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AtomParams {
    /// 420 nm single-photon Rabi frequency Omega_B / 2pi, MHz.
    pub omega_blue_mhz: f64,
    /// 1013 nm single-photon Rabi frequency Omega_R / 2pi, MHz.
    pub omega_red_mhz: f64,
    /// Intermediate-state detuning Delta / 2pi, MHz.
    pub delta_intermediate_mhz: f64,
    pub temperature_uk: f64,
    pub lambda_blue_nm: f64,
    pub lambda_red_nm: f64,
    /// Off-resonant scattering rate out of |g> while the 420 nm light is on, 1/us.
    pub gamma_blue_scatter: f64,
    /// Off-resonant scattering rate out of |r> from the 1013 nm light, 1/us.
    pub gamma_red_scatter: f64,
    /// Blackbody-stimulated transfer time to neighbouring Rydberg states, us.
    pub t_blackbody_us: f64,
    /// Radiative decay time to low-lying levels, us.
    pub t_radiative_us: f64,
    pub counter_propagating: bool,
}

impl Default for AtomParams {
    fn default() -> Self {
        Self {
            omega_blue_mhz: 60.0,
            omega_red_mhz: 40.0,
            delta_intermediate_mhz: 600.0,
            temperature_uk: 10.0,
            lambda_blue_nm: 420.0,
            lambda_red_nm: 1013.0,
            gamma_blue_scatter: 1.0 / 40.0,
            gamma_red_scatter: 1.0 / 80.0,
            t_blackbody_us: 230.0,
            t_radiative_us: 410.0,
            counter_propagating: true,
        }
    }
}

impl AtomParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("omega_blue_mhz", self.omega_blue_mhz),
            ("omega_red_mhz", self.omega_red_mhz),
            ("lambda_blue_nm", self.lambda_blue_nm),
            ("lambda_red_nm", self.lambda_red_nm),
            ("t_blackbody_us", self.t_blackbody_us),
            ("t_radiative_us", self.t_radiative_us),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")));
            }
        }
        let non_negative = [
            ("temperature_uk", self.temperature_uk),
            ("gamma_blue_scatter", self.gamma_blue_scatter),
            ("gamma_red_scatter", self.gamma_red_scatter),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.delta_intermediate_mhz == 0.0 || !self.delta_intermediate_mhz.is_finite() {
            return Err(Error::ZeroDetuning);
        }
        Ok(())
    }

    /// Soft checks that do not block a run.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let delta = self.delta_intermediate_mhz.abs();
        if delta < 10.0 * self.omega_blue_mhz.max(self.omega_red_mhz) {
            out.push(format!(
                "intermediate detuning {delta} MHz is not large compared to the single-photon \
                 Rabi frequencies; adiabatic elimination of |e> is questionable"
            ));
        }
        out
    }
}

/// Effective two-photon Rabi frequency Omega_B Omega_R / (2 Delta), MHz.
pub fn two_photon_rabi(p: &AtomParams) -> Result<f64> {
    if p.delta_intermediate_mhz == 0.0 {
        return Err(Error::ZeroDetuning);
    }
    Ok(p.omega_blue_mhz * p.omega_red_mhz / (2.0 * p.delta_intermediate_mhz))
}

/// Effective two-photon wavevector in rad/m.
pub fn k_eff(p: &AtomParams) -> f64 {
    let kb = 2.0 * PI / (p.lambda_blue_nm * 1e-9);
    let kr = 2.0 * PI / (p.lambda_red_nm * 1e-9);
    if p.counter_propagating {
        (kb - kr).abs()
    } else {
        kb + kr
    }
}

/// Effective wavevector in rad/um, the unit used for atom positions.
pub fn k_eff_per_um(p: &AtomParams) -> f64 {
    k_eff(p) * 1e-6
}

/// Width of the thermal two-photon Doppler shift distribution, krad/s.
pub fn doppler_sigma(p: &AtomParams) -> f64 {
    let sigma_v = (BOLTZMANN * p.temperature_uk * 1e-6 / RB87_MASS).sqrt();
    k_eff(p) * sigma_v * 1e-3
}

/// The same width as an ordinary frequency, kHz (i.e. sigma = 2pi x this).
pub fn doppler_sigma_khz(p: &AtomParams) -> f64 {
    doppler_sigma(p) / (2.0 * PI)
}

/// Total Rydberg-state lifetime (blackbody and radiative channels), us.
pub fn rydberg_lifetime(p: &AtomParams) -> f64 {
    1.0 / (1.0 / p.t_blackbody_us + 1.0 / p.t_radiative_us)
}

/// Expected |r> -> |g> contrast lifetime: Rydberg lifetime combined with
/// 1013 nm scattering, us.
pub fn combined_t1(p: &AtomParams) -> f64 {
    1.0 / (1.0 / rydberg_lifetime(p) + p.gamma_red_scatter)
}

/// Average excited-state weight of the decaying superposition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExcitedFraction {
    /// (|g> + |r>)/sqrt2: half the population is exposed to decay.
    SingleAtom,
    /// The W state always carries one excitation.
    WState,
}

impl ExcitedFraction {
    pub fn value(self) -> f64 {
        match self {
            ExcitedFraction::SingleAtom => 0.5,
            ExcitedFraction::WState => 1.0,
        }
    }
}

/// Pure dephasing time (1/T2 - fraction/T1)^-1.
pub fn pure_dephasing(t2: f64, t1: f64, fraction: ExcitedFraction) -> Result<f64> {
    if !(t2 > 0.0 && t1 > 0.0) {
        return Err(Error::InvalidParameter("T1 and T2 must be positive".into()));
    }
    let rate = 1.0 / t2 - fraction.value() / t1;
    // within rounding of zero counts as the lifetime limit too
    if rate <= 1e-12 * (1.0 / t2) {
        return Err(Error::LifetimeLimit);
    }
    Ok(1.0 / rate)
}

/// Amplitude suppression of a Lorentzian (cavity) filter at `offset_mhz`
/// from the carrier, for a filter of full width `fwhm_mhz`.
pub fn cavity_suppression(offset_mhz: f64, fwhm_mhz: f64) -> Result<f64> {
    if !(fwhm_mhz > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "cavity linewidth must be > 0, got {fwhm_mhz}"
        )));
    }
    Ok((1.0 + (2.0 * offset_mhz / fwhm_mhz).powi(2)).sqrt())
}

/// Per-atom internal level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Level {
    Ground,
    Rydberg,
    /// Rydberg state populated by blackbody transfer; dark to the drive.
    Dark,
}

impl Level {
    pub fn label(self) -> &'static str {
        match self {
            Level::Ground => "g",
            Level::Rydberg => "r",
            Level::Dark => "r'",
        }
    }

    pub fn is_rydberg_like(self) -> bool {
        !matches!(self, Level::Ground)
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Splits a product-basis label such as `"gr'"` into per-atom levels.
pub fn parse_label(label: &str) -> Result<Vec<Level>> {
    let mut out = Vec::new();
    let mut chars = label.chars().peekable();
    while let Some(c) = chars.next() {
        let level = match c {
            'g' => Level::Ground,
            'r' => {
                if matches!(chars.peek(), Some('\'') | Some('′')) {
                    chars.next();
                    Level::Dark
                } else {
                    Level::Rydberg
                }
            }
            _ => return Err(Error::UnknownLabel(label.to_string())),
        };
        out.push(level);
    }
    if out.is_empty() {
        return Err(Error::UnknownLabel(label.to_string()));
    }
    Ok(out)
}

pub fn join_label(levels: &[Level]) -> String {
    levels.iter().map(|l| l.label()).collect()
}

/// What the fluorescence image reports for one atom.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Outcome {
    Recaptured,
    Lost,
}

impl Outcome {
    /// Pattern letter: recaptured reads as "g", lost as "r".
    pub fn letter(self) -> char {
        match self {
            Outcome::Recaptured => 'g',
            Outcome::Lost => 'r',
        }
    }
}

/// Ground-state detection fidelity, either fixed or tabulated against the
/// trap-off time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GroundFidelity {
    Constant(f64),
    Table {
        /// (trap_off_time_us, f_g) pairs, times strictly increasing.
        points: Vec<(f64, f64)>,
        /// Keep the last tabulated value beyond the table end instead of
        /// failing.
        #[serde(default)]
        hold_last: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionModel {
    pub f_g: GroundFidelity,
    pub f_r: f64,
}

impl Default for DetectionModel {
    /// f_g = 0.99 up to 4 us trap-off, falling linearly to 0.955 at 8 us and
    /// held there; f_r = 0.96.
    fn default() -> Self {
        Self {
            f_g: GroundFidelity::Table {
                points: vec![(0.0, 0.99), (4.0, 0.99), (8.0, 0.955)],
                hold_last: true,
            },
            f_r: 0.96,
        }
    }
}

impl DetectionModel {
    pub fn constant(f_g: f64, f_r: f64) -> Self {
        Self {
            f_g: GroundFidelity::Constant(f_g),
            f_r,
        }
    }

    pub fn perfect() -> Self {
        Self::constant(1.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} = {p} is not a probability")))
            }
        };
        prob("f_r", self.f_r)?;
        match &self.f_g {
            GroundFidelity::Constant(f) => prob("f_g", *f)?,
            GroundFidelity::Table { points, .. } => {
                if points.is_empty() {
                    return Err(Error::InvalidParameter("f_g table is empty".into()));
                }
                for w in points.windows(2) {
                    if !(w[1].0 > w[0].0) {
                        return Err(Error::InvalidParameter(
                            "f_g table times must be strictly increasing".into(),
                        ));
                    }
                }
                for &(_, f) in points {
                    prob("f_g", f)?;
                }
            }
        }
        Ok(())
    }

    /// f_g at the given trap-off time; linear interpolation, no
    /// extrapolation unless the table holds its last value.
    pub fn f_g_at(&self, trap_off_us: f64) -> Result<f64> {
        match &self.f_g {
            GroundFidelity::Constant(f) => Ok(*f),
            GroundFidelity::Table { points, hold_last } => {
                let (t_first, f_first) = points[0];
                let (t_last, f_last) = points[points.len() - 1];
                if !trap_off_us.is_finite() || trap_off_us < t_first {
                    return Err(Error::TrapOffOutOfRange(trap_off_us));
                }
                if trap_off_us > t_last {
                    return if *hold_last {
                        Ok(f_last)
                    } else {
                        Err(Error::TrapOffOutOfRange(trap_off_us))
                    };
                }
                if points.len() == 1 {
                    return Ok(f_first);
                }
                let w = points
                    .windows(2)
                    .find(|w| trap_off_us <= w[1].0)
                    .expect("time lies inside the table");
                let ((t0, f0), (t1, f1)) = (w[0], w[1]);
                Ok(f0 + (f1 - f0) * (trap_off_us - t0) / (t1 - t0))
            }
        }
    }

    /// Outcome probabilities for a single atom in the given level.
    pub fn single_atom(&self, level: Level, trap_off_us: f64) -> Result<[(Outcome, f64); 2]> {
        Ok(match level {
            Level::Ground => {
                let f_g = self.f_g_at(trap_off_us)?;
                [(Outcome::Recaptured, f_g), (Outcome::Lost, 1.0 - f_g)]
            }
            // r' is anti-trapped exactly like r
            Level::Rydberg | Level::Dark => {
                [(Outcome::Recaptured, 1.0 - self.f_r), (Outcome::Lost, self.f_r)]
            }
        })
    }
}

/// Recapture/loss patterns for `n_atoms`, ordered gg.., g..r, .., rr.. with
/// atom 1 leftmost ("g" = recaptured, "r" = lost).
pub fn outcome_patterns(n_atoms: usize) -> Vec<String> {
    (0..1usize << n_atoms)
        .map(|bits| {
            (0..n_atoms)
                .map(|atom| {
                    if bits >> (n_atoms - 1 - atom) & 1 == 1 {
                        'r'
                    } else {
                        'g'
                    }
                })
                .collect()
        })
        .collect()
}

/// Distribution over recapture/loss patterns for atoms prepared in
/// `true_state`, each atom passing independently through the detection
/// channel. Output order follows [`outcome_patterns`].
pub fn detection_probabilities(
    d: &DetectionModel,
    true_state: &[Level],
    trap_off_us: f64,
) -> Result<Vec<(String, f64)>> {
    let n = true_state.len();
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one atom".into()));
    }
    let per_atom: Vec<[(Outcome, f64); 2]> = true_state
        .iter()
        .map(|&l| d.single_atom(l, trap_off_us))
        .collect::<Result<_>>()?;
    Ok(outcome_patterns(n)
        .into_iter()
        .map(|pattern| {
            let p = pattern
                .chars()
                .zip(&per_atom)
                .map(|(c, probs)| {
                    probs
                        .iter()
                        .find(|(o, _)| o.letter() == c)
                        .map(|(_, p)| *p)
                        .unwrap_or(0.0)
                })
                .product();
            (pattern, p)
        })
        .collect())
}
