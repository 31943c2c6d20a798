//! Declarative pulse sequences, the named presets, and the compiler that
//! turns a sequence plus one noise draw into dynamics segments.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::atom::{self, AtomParams, Level};
use crate::blockade::{BlockadeModel, TwoAtomParams};
use crate::dynamics::{ComplexMatrix, DensityMatrix, LindbladChannel, Segment, C64};
use crate::error::{Error, Result};
use crate::noise::NoiseSample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PulseElement {
    /// Global two-photon drive on every atom (420 nm light on).
    GlobalDrive {
        duration_us: f64,
        rabi_mhz: f64,
        /// Two-photon laser detuning, MHz.
        #[serde(default)]
        detuning_mhz: f64,
        /// Drive phase, rad.
        #[serde(default)]
        phase: f64,
    },
    Wait {
        duration_us: f64,
    },
    /// Light shift on the ground state of one atom.
    LocalPhaseGate {
        duration_us: f64,
        target_atom: usize,
        light_shift_mhz: f64,
    },
}

impl PulseElement {
    pub fn drive(duration_us: f64, rabi_mhz: f64) -> Self {
        PulseElement::GlobalDrive {
            duration_us,
            rabi_mhz,
            detuning_mhz: 0.0,
            phase: 0.0,
        }
    }

    pub fn wait(duration_us: f64) -> Self {
        PulseElement::Wait { duration_us }
    }

    pub fn phase_gate(duration_us: f64, target_atom: usize, light_shift_mhz: f64) -> Self {
        PulseElement::LocalPhaseGate {
            duration_us,
            target_atom,
            light_shift_mhz,
        }
    }

    pub fn duration(&self) -> f64 {
        match *self {
            PulseElement::GlobalDrive { duration_us, .. }
            | PulseElement::Wait { duration_us }
            | PulseElement::LocalPhaseGate { duration_us, .. } => duration_us,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            PulseElement::GlobalDrive { .. } => "global_drive",
            PulseElement::Wait { .. } => "wait",
            PulseElement::LocalPhaseGate { .. } => "local_phase_gate",
        }
    }

    fn validate(&self, n_atoms: usize) -> Result<()> {
        let d = self.duration();
        if !(d >= 0.0 && d.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "{} duration must be finite and >= 0, got {d}",
                self.kind()
            )));
        }
        match *self {
            PulseElement::GlobalDrive {
                rabi_mhz,
                detuning_mhz,
                phase,
                ..
            } => {
                if !(rabi_mhz >= 0.0 && rabi_mhz.is_finite()) || !detuning_mhz.is_finite() || !phase.is_finite() {
                    return Err(Error::InvalidParameter(
                        "drive needs finite rabi_mhz >= 0, detuning and phase".into(),
                    ));
                }
            }
            PulseElement::LocalPhaseGate {
                target_atom,
                light_shift_mhz,
                ..
            } => {
                if target_atom >= n_atoms {
                    return Err(Error::InvalidParameter(format!(
                        "target_atom {target_atom} out of range for {n_atoms} atom(s)"
                    )));
                }
                if !light_shift_mhz.is_finite() {
                    return Err(Error::InvalidParameter("light shift must be finite".into()));
                }
            }
            PulseElement::Wait { .. } => {}
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    elements: Vec<PulseElement>,
    n_atoms: usize,
}

impl PulseSequence {
    pub fn new(elements: Vec<PulseElement>, n_atoms: usize) -> Result<Self> {
        if !(1..=2).contains(&n_atoms) {
            return Err(Error::InvalidParameter(format!("n_atoms must be 1 or 2, got {n_atoms}")));
        }
        if elements.is_empty() {
            return Err(Error::InvalidParameter("pulse sequence is empty".into()));
        }
        for e in &elements {
            e.validate(n_atoms)?;
        }
        Ok(Self { elements, n_atoms })
    }

    /// Parses a JSON element list, e.g.
    /// `[{"kind": "global_drive", "duration_us": 0.25, "rabi_mhz": 2.0}]`.
    pub fn from_json(elements: &str, n_atoms: usize) -> Result<Self> {
        let raw: Vec<serde_json::Value> =
            serde_json::from_str(elements).map_err(|e| Error::Config(e.to_string()))?;
        let parsed = raw
            .into_iter()
            .map(|v| {
                let kind = v.get("kind").and_then(|k| k.as_str()).unwrap_or_default().to_string();
                if !["global_drive", "wait", "local_phase_gate"].contains(&kind.as_str()) {
                    return Err(Error::UnknownElement(kind));
                }
                serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(parsed, n_atoms)
    }

    pub fn elements(&self) -> &[PulseElement] {
        &self.elements
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn total_duration(&self) -> f64 {
        self.elements.iter().map(PulseElement::duration).sum()
    }
}

/// pi-pulse time for a resonant drive at `rabi_mhz`, us.
pub fn pi_time(rabi_mhz: f64) -> f64 {
    1.0 / (2.0 * rabi_mhz)
}

/// pi-pulse time on the blockaded gg <-> W transition (rate sqrt2 Omega), us.
pub fn blockaded_pi_time(rabi_mhz: f64) -> f64 {
    pi_time(SQRT_2 * rabi_mhz)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Rabi,
    T1,
    Ramsey,
    SpinEcho,
    PhaseGateEcho,
    BlockadeRabi,
    ParityScan,
    WLifetime,
    WEcho,
}

impl Preset {
    pub const ALL: [Preset; 9] = [
        Preset::Rabi,
        Preset::T1,
        Preset::Ramsey,
        Preset::SpinEcho,
        Preset::PhaseGateEcho,
        Preset::BlockadeRabi,
        Preset::ParityScan,
        Preset::WLifetime,
        Preset::WEcho,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Rabi => "rabi",
            Preset::T1 => "t1",
            Preset::Ramsey => "ramsey",
            Preset::SpinEcho => "spin_echo",
            Preset::PhaseGateEcho => "phase_gate_echo",
            Preset::BlockadeRabi => "blockade_rabi",
            Preset::ParityScan => "parity_scan",
            Preset::WLifetime => "w_lifetime",
            Preset::WEcho => "w_echo",
        }
    }

    pub fn figure(self) -> &'static str {
        match self {
            Preset::Rabi => "Fig. 1(c)",
            Preset::T1 => "Fig. 2(a)",
            Preset::Ramsey | Preset::SpinEcho => "Fig. 2(b)",
            Preset::PhaseGateEcho => "Fig. 2(c)",
            Preset::BlockadeRabi => "Fig. 3(b)",
            Preset::ParityScan => "Fig. 3(c)",
            Preset::WLifetime | Preset::WEcho => "Fig. 4",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Preset::Rabi => "single-atom resonant drive for a variable time",
            Preset::T1 => "pi, variable wait, pi: Rydberg-state lifetime",
            Preset::Ramsey => "pi/2, variable gap, pi/2: Doppler-limited T2*",
            Preset::SpinEcho => "pi/2, gap/2, pi, gap/2, pi/2: echo-refocused T2",
            Preset::PhaseGateEcho => "light-shift phase gate inside a spin echo, variable gate time",
            Preset::BlockadeRabi => "two atoms driven together for a variable time",
            Preset::ParityScan => "blockaded pi, phase gate on atom 1, 2pi echo, blockaded pi",
            Preset::WLifetime => "blockaded pi, variable wait, blockaded pi",
            Preset::WEcho => "blockaded pi, T/2, blockaded 2pi, T/2, blockaded pi",
        }
    }

    /// The scanned quantity, always in us.
    pub fn scan_variable(self) -> &'static str {
        match self {
            Preset::Rabi | Preset::BlockadeRabi => "drive_time_us",
            Preset::T1 | Preset::WLifetime => "wait_us",
            Preset::Ramsey | Preset::SpinEcho => "gap_us",
            Preset::PhaseGateEcho | Preset::ParityScan => "gate_time_us",
            Preset::WEcho => "total_wait_us",
        }
    }

    pub fn n_atoms(self) -> usize {
        match self {
            Preset::Rabi | Preset::T1 | Preset::Ramsey | Preset::SpinEcho | Preset::PhaseGateEcho => 1,
            _ => 2,
        }
    }

    /// The element list for one value of the scanned variable.
    pub fn sequence(self, x: f64, p: &SequenceParams) -> Result<PulseSequence> {
        p.validate()?;
        if !(x >= 0.0 && x.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "{} must be finite and >= 0, got {x}",
                self.scan_variable()
            )));
        }
        let om = p.rabi_mhz;
        let pi = pi_time(om);
        let pib = blockaded_pi_time(om);
        let drive = |t| PulseElement::drive(t, om);
        let wait = PulseElement::wait;
        let gate = |t| PulseElement::phase_gate(t, 0, p.light_shift_mhz);
        let gate_arm = |t: f64| {
            if t > p.echo_arm_us {
                Err(Error::InvalidParameter(format!(
                    "gate time {t} us exceeds the echo arm {} us",
                    p.echo_arm_us
                )))
            } else {
                Ok(p.echo_arm_us - t)
            }
        };
        let elements = match self {
            Preset::Rabi | Preset::BlockadeRabi => vec![drive(x)],
            Preset::T1 => vec![drive(pi), wait(x), drive(pi)],
            Preset::Ramsey => vec![drive(pi / 2.0), wait(x), drive(pi / 2.0)],
            Preset::SpinEcho => vec![
                drive(pi / 2.0),
                wait(x / 2.0),
                drive(pi),
                wait(x / 2.0),
                drive(pi / 2.0),
            ],
            Preset::PhaseGateEcho => vec![
                drive(pi / 2.0),
                gate(x),
                wait(gate_arm(x)?),
                drive(pi),
                wait(p.echo_arm_us),
                drive(pi / 2.0),
            ],
            Preset::ParityScan => vec![
                drive(pib),
                gate(x),
                wait(gate_arm(x)?),
                drive(2.0 * pib),
                wait(p.echo_arm_us),
                drive(pib),
            ],
            Preset::WLifetime => vec![drive(pib), wait(x), drive(pib)],
            Preset::WEcho => vec![drive(pib), wait(x / 2.0), drive(2.0 * pib), wait(x / 2.0), drive(pib)],
        };
        PulseSequence::new(elements, self.n_atoms())
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(name: &str) -> Result<Self> {
        if let Some(p) = Preset::ALL.iter().find(|p| p.name() == name) {
            return Ok(*p);
        }
        let suggestion = Preset::ALL
            .iter()
            .map(|p| (strsim::levenshtein(name, p.name()), p.name()))
            .min()
            .filter(|(d, _)| *d <= 3 || name.len() < 3)
            .map(|(_, n)| n.to_string());
        Err(Error::UnknownPreset {
            name: name.to_string(),
            suggestion,
        })
    }
}

/// Shorthand for `name.parse::<Preset>()?.sequence(x, params)`.
pub fn preset(name: &str, x: f64, params: &SequenceParams) -> Result<PulseSequence> {
    name.parse::<Preset>()?.sequence(x, params)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequenceParams {
    /// Single-atom Rabi frequency Omega / 2pi used for every drive, MHz.
    pub rabi_mhz: f64,
    /// Phase-gate light shift delta / 2pi, MHz.
    pub light_shift_mhz: f64,
    /// Length of each arm of the echo around a phase gate, us.
    pub echo_arm_us: f64,
}

impl Default for SequenceParams {
    fn default() -> Self {
        Self {
            rabi_mhz: 2.0,
            light_shift_mhz: 5.0,
            echo_arm_us: 0.5,
        }
    }
}

impl SequenceParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rabi_mhz > 0.0 && self.rabi_mhz.is_finite()) {
            return Err(Error::InvalidParameter(format!("rabi_mhz must be > 0, got {}", self.rabi_mhz)));
        }
        if !self.light_shift_mhz.is_finite() {
            return Err(Error::InvalidParameter("light_shift_mhz must be finite".into()));
        }
        if !(self.echo_arm_us >= 0.0 && self.echo_arm_us.is_finite()) {
            return Err(Error::InvalidParameter("echo_arm_us must be >= 0".into()));
        }
        Ok(())
    }
}

/// Which decoherence processes are switched on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Decoherence {
    /// gamma_B on |g> during drives and gamma_R |g><r| throughout.
    pub scattering: bool,
    /// |r> -> |r'> transfer (adds r' to the basis).
    pub rydberg_decay: bool,
    /// Lump radiative decay into the r -> r' rate alongside blackbody transfer.
    pub include_radiative: bool,
    /// Extra g-r coherence decay rate from laser phase noise, 1/us.
    pub gamma_laser: f64,
}

impl Default for Decoherence {
    fn default() -> Self {
        Self {
            scattering: true,
            rydberg_decay: true,
            include_radiative: true,
            gamma_laser: 0.0,
        }
    }
}

impl Decoherence {
    pub fn none() -> Self {
        Self {
            scattering: false,
            rydberg_decay: false,
            include_radiative: false,
            gamma_laser: 0.0,
        }
    }

    pub fn is_none(&self) -> bool {
        !self.scattering && !self.rydberg_decay && self.gamma_laser == 0.0
    }
}

/// Which elements see the Doppler detuning.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DopplerScope {
    /// Static detuning for the whole shot, drives included.
    #[default]
    Always,
    /// Only during waits and phase gates; for isolating refocusing from
    /// off-resonant pulse errors.
    FreeEvolution,
}

/// Everything about the physical system that a sequence is compiled against.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemModel {
    pub atom: AtomParams,
    pub two_atom: TwoAtomParams,
    pub blockade: BlockadeModel,
    pub decoherence: Decoherence,
    /// Fraction of the phase-gate light shift seen by the other atom.
    pub crosstalk_fraction: f64,
    pub doppler_scope: DopplerScope,
}

impl SystemModel {
    pub fn validate(&self) -> Result<()> {
        self.atom.validate()?;
        self.two_atom.validate()?;
        if !(self.decoherence.gamma_laser >= 0.0 && self.decoherence.gamma_laser.is_finite()) {
            return Err(Error::InvalidParameter("gamma_laser must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.crosstalk_fraction) {
            return Err(Error::InvalidParameter("crosstalk_fraction must be in [0, 1]".into()));
        }
        Ok(())
    }

    /// Per-atom levels in basis order.
    pub fn levels(&self) -> Vec<Level> {
        let mut l = vec![Level::Ground, Level::Rydberg];
        if self.decoherence.rydberg_decay {
            l.push(Level::Dark);
        }
        l
    }

    /// r -> r' rate, 1/us.
    pub fn decay_rate(&self) -> f64 {
        let mut rate = 1.0 / self.atom.t_blackbody_us;
        if self.decoherence.include_radiative {
            rate += 1.0 / self.atom.t_radiative_us;
        }
        rate
    }
}

/// Basis, segments and always-on channels for one shot.
#[derive(Clone, Debug)]
pub struct Compiled {
    pub basis: Vec<Vec<Level>>,
    pub labels: Vec<String>,
    pub segments: Vec<Segment>,
    pub channels: Vec<LindbladChannel>,
}

impl Compiled {
    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    /// All atoms in |g>.
    pub fn ground_state(&self) -> DensityMatrix {
        DensityMatrix::basis_state(&self.labels[0], self.labels.clone()).expect("ground state is in the basis")
    }
}

/// Product-basis operator builder restricted to the kept states.
struct OperatorSpace {
    per_atom: usize,
    n_atoms: usize,
    full_dim: usize,
    keep: Vec<usize>,
}

impl OperatorSpace {
    /// `op` on one atom (a per_atom x per_atom matrix), identity elsewhere.
    fn single(&self, atom: usize, op: &ComplexMatrix) -> ComplexMatrix {
        let id = ComplexMatrix::identity(self.per_atom);
        let mut full = if atom == 0 { op.clone() } else { id.clone() };
        for a in 1..self.n_atoms {
            let f = if a == atom { op } else { &id };
            full = crate::dynamics::tensor(&full, f);
        }
        debug_assert_eq!(full.dim(), self.full_dim);
        full.restrict(&self.keep)
    }

    fn projector(&self, atom: usize, level: usize) -> ComplexMatrix {
        self.single(atom, &ComplexMatrix::basis_op(self.per_atom, level, level))
    }

    fn zeros(&self) -> ComplexMatrix {
        ComplexMatrix::zeros(self.keep.len())
    }
}

fn mhz(x: f64) -> f64 {
    2.0 * PI * x
}

/// Compiles a sequence against a system model and one noise draw.
pub fn compile(seq: &PulseSequence, system: &SystemModel, noise: &NoiseSample) -> Result<Compiled> {
    let n = seq.n_atoms();
    if noise.doppler_krad_s.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: noise.doppler_krad_s.len(),
        });
    }
    if noise.position_um.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: noise.position_um.len(),
        });
    }
    system.validate()?;

    let levels = system.levels();
    let per_atom = levels.len();
    let (g, r) = (0, 1);
    let rp = 2;
    let full_dim = per_atom.pow(n as u32);
    let mut basis = Vec::new();
    let mut keep = Vec::new();
    for idx in 0..full_dim {
        let state: Vec<Level> = (0..n)
            .map(|a| levels[idx / per_atom.pow((n - 1 - a) as u32) % per_atom])
            .collect();
        let excited = state.iter().filter(|l| l.is_rydberg_like()).count();
        if n == 2 && system.blockade == BlockadeModel::Projected && excited > 1 {
            continue;
        }
        keep.push(idx);
        basis.push(state);
    }
    let labels: Vec<String> = basis.iter().map(|s| atom::join_label(s)).collect();
    let space = OperatorSpace {
        per_atom,
        n_atoms: n,
        full_dim,
        keep,
    };

    // terms shared by every element
    let doppler: Vec<f64> = noise.doppler_krad_s.iter().map(|d| d * 1e-3).collect();
    let mut doppler_h = space.zeros();
    for (a, d) in doppler.iter().enumerate() {
        doppler_h = &doppler_h - &(&space.projector(a, r) * *d);
    }
    let mut interaction = space.zeros();
    if n == 2 && system.blockade == BlockadeModel::Full {
        let rr = space.projector(0, r).matmul(&space.projector(1, r));
        interaction = &rr * mhz(system.two_atom.interaction_u_mhz);
    }
    let free = &doppler_h + &interaction;
    let k = system.two_atom.k_eff_per_um;

    let dec = &system.decoherence;
    let mut channels = Vec::new();
    let mut drive_channels = Vec::new();
    for a in 0..n {
        if dec.scattering {
            let lower = space.single(a, &ComplexMatrix::basis_op(per_atom, g, r));
            channels.push(LindbladChannel::with_rate(&lower, system.atom.gamma_red_scatter)?);
            drive_channels.push(LindbladChannel::with_rate(
                &space.projector(a, g),
                system.atom.gamma_blue_scatter,
            )?);
        }
        if dec.rydberg_decay {
            let op = space.single(a, &ComplexMatrix::basis_op(per_atom, rp, r));
            channels.push(LindbladChannel::with_rate(&op, system.decay_rate())?);
        }
    }
    if dec.gamma_laser > 0.0 {
        let mut collective = space.zeros();
        for a in 0..n {
            collective = &collective + &space.projector(a, r);
        }
        channels.push(LindbladChannel::with_rate(&collective, 2.0 * dec.gamma_laser)?);
    }

    let mut segments = Vec::with_capacity(seq.elements().len());
    for e in seq.elements() {
        let seg = match *e {
            PulseElement::GlobalDrive {
                duration_us,
                rabi_mhz,
                detuning_mhz,
                phase,
            } => {
                let mut h = match system.doppler_scope {
                    DopplerScope::Always => free.clone(),
                    DopplerScope::FreeEvolution => interaction.clone(),
                };
                let raise = ComplexMatrix::basis_op(per_atom, r, g);
                for (a, x) in noise.position_um.iter().enumerate() {
                    let c = C64::from_polar(mhz(rabi_mhz) / 2.0, k * x + phase);
                    let up = space.single(a, &raise).scale(c);
                    h = &(&h + &up) + &up.dagger();
                    h = &h - &(&space.projector(a, r) * mhz(detuning_mhz));
                }
                Segment::new(h, duration_us)?.with_channels(drive_channels.clone())?
            }
            PulseElement::Wait { duration_us } => Segment::new(free.clone(), duration_us)?,
            PulseElement::LocalPhaseGate {
                duration_us,
                target_atom,
                light_shift_mhz,
            } => {
                let mut h = &free - &(&space.projector(target_atom, g) * mhz(light_shift_mhz));
                if n == 2 && system.crosstalk_fraction > 0.0 {
                    let other = 1 - target_atom;
                    let shift = mhz(light_shift_mhz) * system.crosstalk_fraction;
                    h = &h - &(&space.projector(other, g) * shift);
                }
                Segment::new(h, duration_us)?
            }
        };
        segments.push(seg);
    }
    Ok(Compiled {
        basis,
        labels,
        segments,
        channels,
    })
}
