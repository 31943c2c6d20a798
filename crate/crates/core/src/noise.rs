//! Monte Carlo ensembles: per-shot Doppler and position draws, shot
//! evolution, the detection channel and binomial statistics.
//!
//! Every shot gets its own RNG seeded from (master_seed, scan_index,
//! shot_index), so results do not depend on how shots are scheduled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atom::{self, AtomParams, DetectionModel, Level};
use crate::dynamics::{evolve_final, DensityMatrix};
use crate::error::{Error, Result};
use crate::pulse::{compile, PulseSequence, SystemModel};

/// Environment variable holding the worker count for shot parallelism.
pub const WORKERS_ENV: &str = "RYDBERG_WORKERS";

/// One Monte Carlo draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSample {
    /// Static two-photon Doppler detuning per atom, krad/s.
    pub doppler_krad_s: Vec<f64>,
    /// Displacement of each atom from its nominal site along the drive axis, um.
    pub position_um: Vec<f64>,
}

impl NoiseSample {
    pub fn zero(n_atoms: usize) -> Self {
        Self {
            doppler_krad_s: vec![0.0; n_atoms],
            position_um: vec![0.0; n_atoms],
        }
    }
}

/// Independent Gaussian Doppler and position draws for each atom.
pub fn sample_noise<R: Rng + ?Sized>(
    sigma_doppler_krad_s: f64,
    sigma_position_um: f64,
    n_atoms: usize,
    rng: &mut R,
) -> Result<NoiseSample> {
    let doppler = Normal::new(0.0, sigma_doppler_krad_s)
        .map_err(|_| Error::InvalidParameter(format!("bad Doppler width {sigma_doppler_krad_s}")))?;
    let position = Normal::new(0.0, sigma_position_um)
        .map_err(|_| Error::InvalidParameter(format!("bad position width {sigma_position_um}")))?;
    if sigma_doppler_krad_s < 0.0 || sigma_position_um < 0.0 {
        return Err(Error::InvalidParameter("noise widths must be >= 0".into()));
    }
    let mut s = NoiseSample::zero(n_atoms);
    for a in 0..n_atoms {
        s.doppler_krad_s[a] = doppler.sample(rng);
        s.position_um[a] = position.sample(rng);
    }
    Ok(s)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable per-shot seed.
pub fn shot_seed(master_seed: u64, scan_index: u64, shot_index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master_seed) ^ scan_index) ^ shot_index)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub doppler: bool,
    /// Overrides the thermal width derived from the atom temperature, krad/s.
    pub sigma_doppler_krad_s: Option<f64>,
    pub sigma_position_um: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            doppler: true,
            sigma_doppler_krad_s: None,
            sigma_position_um: 0.2,
        }
    }
}

impl NoiseConfig {
    pub fn none() -> Self {
        Self {
            doppler: false,
            sigma_doppler_krad_s: None,
            sigma_position_um: 0.0,
        }
    }

    pub fn sigma_doppler(&self, atom: &AtomParams) -> f64 {
        if !self.doppler {
            0.0
        } else {
            self.sigma_doppler_krad_s.unwrap_or_else(|| atom::doppler_sigma(atom))
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.sigma_doppler_krad_s {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::InvalidParameter("sigma_doppler_krad_s must be >= 0".into()));
            }
        }
        if !(self.sigma_position_um >= 0.0 && self.sigma_position_um.is_finite()) {
            return Err(Error::InvalidParameter("sigma_position_um must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Average the detection-channel probabilities over shots.
    #[default]
    Expectation,
    /// One simulated recapture outcome per shot.
    Sampled,
}

#[derive(Clone, Debug)]
pub struct EnsembleConfig {
    pub n_shots: usize,
    pub mode: Mode,
    pub master_seed: u64,
    pub dt_max_us: f64,
    /// Worker threads; `None` reads [`WORKERS_ENV`] and falls back to the
    /// available parallelism.
    pub workers: Option<usize>,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            n_shots: 100,
            mode: Mode::Expectation,
            master_seed: 0,
            dt_max_us: crate::dynamics::DEFAULT_DT_MAX,
            workers: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EnsembleResult {
    pub scan_values: Vec<f64>,
    /// Recapture patterns ("g" = recaptured, "r" = lost), atom 1 first.
    pub patterns: Vec<String>,
    /// Detected pattern probabilities, indexed [scan][pattern].
    pub probabilities: Vec<Vec<f64>>,
    /// Wilson 68% interval bounds, same shape.
    pub ci_low: Vec<Vec<f64>>,
    pub ci_high: Vec<Vec<f64>>,
    /// Perfect-detection pattern probabilities (r' counted as r).
    pub ideal: Vec<Vec<f64>>,
    pub basis_labels: Vec<String>,
    /// Shot-averaged basis populations, indexed [scan][basis state].
    pub populations: Vec<Vec<f64>>,
    pub n_shots: usize,
    pub master_seed: u64,
    pub mode: Mode,
}

impl EnsembleResult {
    pub fn pattern_index(&self, pattern: &str) -> Result<usize> {
        self.patterns
            .iter()
            .position(|p| p == pattern)
            .ok_or_else(|| Error::UnknownLabel(pattern.to_string()))
    }

    /// Column of detected probabilities for one pattern.
    pub fn detected(&self, pattern: &str) -> Result<Vec<f64>> {
        let i = self.pattern_index(pattern)?;
        Ok(self.probabilities.iter().map(|row| row[i]).collect())
    }

    /// Population of one basis state across the scan.
    pub fn population_column(&self, label: &str) -> Result<Vec<f64>> {
        let i = self
            .basis_labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))?;
        Ok(self.populations.iter().map(|row| row[i]).collect())
    }

    pub fn ideal_column(&self, pattern: &str) -> Result<Vec<f64>> {
        let i = self.pattern_index(pattern)?;
        Ok(self.ideal.iter().map(|row| row[i]).collect())
    }
}

/// Wilson score interval with z = 1 (68%).
pub fn wilson_interval(p_hat: f64, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let z2 = 1.0;
    let denom = 1.0 + z2 / n;
    let center = (p_hat + z2 / (2.0 * n)) / denom;
    let half = (p_hat * (1.0 - p_hat) / n + z2 / (4.0 * n * n)).max(0.0).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Pushes a distribution over basis states through the per-atom detection
/// channel. Labels are per-atom level strings such as "gr'" and the
/// output is ordered like [`atom::outcome_patterns`].
pub fn apply_detection(
    labels: &[String],
    probabilities: &[f64],
    d: &DetectionModel,
    trap_off_us: f64,
) -> Result<Vec<(String, f64)>> {
    if labels.len() != probabilities.len() || labels.is_empty() {
        return Err(Error::MalformedDistribution(format!(
            "{} labels for {} probabilities",
            labels.len(),
            probabilities.len()
        )));
    }
    if let Some(p) = probabilities.iter().find(|p| !(**p >= -1e-9 && **p <= 1.0 + 1e-9)) {
        return Err(Error::MalformedDistribution(format!("entry {p} is not a probability")));
    }
    let total: f64 = probabilities.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::MalformedDistribution(format!("probabilities sum to {total}")));
    }
    let states = labels
        .iter()
        .map(|l| atom::parse_label(l))
        .collect::<Result<Vec<_>>>()?;
    detect_states(&states, probabilities, d, trap_off_us)
}

fn detect_states(
    states: &[Vec<Level>],
    probabilities: &[f64],
    d: &DetectionModel,
    trap_off_us: f64,
) -> Result<Vec<(String, f64)>> {
    let n_atoms = states[0].len();
    if states.iter().any(|s| s.len() != n_atoms) {
        return Err(Error::MalformedDistribution("labels describe different atom counts".into()));
    }
    let mut out: Vec<(String, f64)> = atom::outcome_patterns(n_atoms).into_iter().map(|p| (p, 0.0)).collect();
    for (state, &p) in states.iter().zip(probabilities) {
        if p == 0.0 {
            continue;
        }
        for (slot, (_, q)) in out.iter_mut().zip(atom::detection_probabilities(d, state, trap_off_us)?) {
            slot.1 += p * q;
        }
    }
    Ok(out)
}

/// Detection-channel output for a density matrix's populations.
pub fn apply_detection_to_state(rho: &DensityMatrix, d: &DetectionModel, trap_off_us: f64) -> Result<Vec<(String, f64)>> {
    apply_detection(rho.labels(), &rho.populations(), d, trap_off_us)
}

/// Draws the noise for one shot.
pub fn shot_noise(
    system: &SystemModel,
    noise: &NoiseConfig,
    n_atoms: usize,
    master_seed: u64,
    scan_index: u64,
    shot_index: u64,
) -> Result<(NoiseSample, ChaCha8Rng)> {
    let mut rng = ChaCha8Rng::seed_from_u64(shot_seed(master_seed, scan_index, shot_index));
    let s = sample_noise(
        noise.sigma_doppler(&system.atom),
        noise.sigma_position_um,
        n_atoms,
        &mut rng,
    )?;
    Ok((s, rng))
}

/// Final state of one shot, starting with every atom in |g>.
pub fn simulate_shot(
    seq: &PulseSequence,
    system: &SystemModel,
    sample: &NoiseSample,
    dt_max_us: f64,
) -> Result<DensityMatrix> {
    let c = compile(seq, system, sample)?;
    evolve_final(&c.ground_state(), &c.segments, &c.channels, dt_max_us)
}

struct ShotOutcome {
    populations: Vec<f64>,
    detected: Vec<f64>,
    ideal: Vec<f64>,
    sampled: Option<usize>,
}

pub fn worker_count(requested: Option<usize>) -> usize {
    requested
        .or_else(|| std::env::var(WORKERS_ENV).ok().and_then(|v| v.trim().parse().ok()))
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Runs `n_shots` noisy shots of `build(x)` for every scan value.
pub fn run_ensemble<F>(
    build: F,
    scan_values: &[f64],
    system: &SystemModel,
    noise: &NoiseConfig,
    detection: &DetectionModel,
    cfg: &EnsembleConfig,
) -> Result<EnsembleResult>
where
    F: Fn(f64) -> Result<PulseSequence> + Sync,
{
    if cfg.n_shots == 0 {
        return Err(Error::InvalidParameter("n_shots must be >= 1".into()));
    }
    if scan_values.is_empty() {
        return Err(Error::InvalidParameter("scan grid is empty".into()));
    }
    if !(cfg.dt_max_us > 0.0 && cfg.dt_max_us.is_finite()) {
        return Err(Error::InvalidParameter("dt_max_us must be > 0".into()));
    }
    system.validate()?;
    noise.validate()?;
    detection.validate()?;

    let sequences = scan_values.iter().map(|&x| build(x)).collect::<Result<Vec<_>>>()?;
    let n_atoms = sequences[0].n_atoms();
    if sequences.iter().any(|s| s.n_atoms() != n_atoms) {
        return Err(Error::InvalidParameter("scan mixes atom counts".into()));
    }
    // the basis only depends on the model, so any compile gives it
    let probe = compile(&sequences[0], system, &NoiseSample::zero(n_atoms))?;
    let basis = probe.basis.clone();
    let basis_labels = probe.labels.clone();
    let patterns = atom::outcome_patterns(n_atoms);
    let perfect = DetectionModel::perfect();

    let run_shot = |scan: usize, shot: usize| -> Result<ShotOutcome> {
        let seq = &sequences[scan];
        let (sample, mut rng) = shot_noise(system, noise, n_atoms, cfg.master_seed, scan as u64, shot as u64)?;
        let rho = simulate_shot(seq, system, &sample, cfg.dt_max_us)?;
        let populations = rho.populations();
        let trap_off = seq.total_duration();
        let detected: Vec<f64> = detect_states(&basis, &populations, detection, trap_off)?
            .into_iter()
            .map(|(_, p)| p)
            .collect();
        let ideal: Vec<f64> = detect_states(&basis, &populations, &perfect, trap_off)?
            .into_iter()
            .map(|(_, p)| p)
            .collect();
        let sampled = match cfg.mode {
            Mode::Expectation => None,
            Mode::Sampled => {
                let u: f64 = rng.random();
                let total: f64 = detected.iter().sum();
                let mut acc = 0.0;
                let mut pick = detected.len() - 1;
                for (i, p) in detected.iter().enumerate() {
                    acc += p / total;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                Some(pick)
            }
        };
        Ok(ShotOutcome {
            populations,
            detected,
            ideal,
            sampled,
        })
    };

    let jobs: Vec<(usize, usize)> = (0..scan_values.len())
        .flat_map(|s| (0..cfg.n_shots).map(move |k| (s, k)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count(cfg.workers))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let outcomes: Vec<Result<ShotOutcome>> =
        pool.install(|| jobs.par_iter().map(|&(s, k)| run_shot(s, k)).collect());

    // ordered reduction
    let n_scan = scan_values.len();
    let n_pat = patterns.len();
    let dim = basis_labels.len();
    let mut populations = vec![vec![0.0; dim]; n_scan];
    let mut expected = vec![vec![0.0; n_pat]; n_scan];
    let mut ideal = vec![vec![0.0; n_pat]; n_scan];
    let mut counts = vec![vec![0usize; n_pat]; n_scan];
    for (&(s, _), outcome) in jobs.iter().zip(outcomes) {
        let o = outcome?;
        for (acc, v) in populations[s].iter_mut().zip(&o.populations) {
            *acc += v;
        }
        for (acc, v) in expected[s].iter_mut().zip(&o.detected) {
            *acc += v;
        }
        for (acc, v) in ideal[s].iter_mut().zip(&o.ideal) {
            *acc += v;
        }
        if let Some(i) = o.sampled {
            counts[s][i] += 1;
        }
    }
    let n = cfg.n_shots as f64;
    for row in populations.iter_mut().chain(expected.iter_mut()).chain(ideal.iter_mut()) {
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    let probabilities = match cfg.mode {
        Mode::Expectation => expected,
        Mode::Sampled => counts
            .iter()
            .map(|row| row.iter().map(|&c| c as f64 / n).collect())
            .collect(),
    };
    let (ci_low, ci_high): (Vec<Vec<f64>>, Vec<Vec<f64>>) = probabilities
        .iter()
        .map(|row| row.iter().map(|&p| wilson_interval(p, cfg.n_shots)).unzip())
        .unzip();
    Ok(EnsembleResult {
        scan_values: scan_values.to_vec(),
        patterns,
        probabilities,
        ci_low,
        ci_high,
        ideal,
        basis_labels,
        populations,
        n_shots: cfg.n_shots,
        master_seed: cfg.master_seed,
        mode: cfg.mode,
    })
}
