//! Two-atom analytic layer: blockade Hamiltonians, the W and dark states,
//! the ideal gate unitaries, Bell-state fidelity and parity-scan analysis.
//!
//! Two-atom basis order is gg, gr, rg, rr with atom 1 on the left.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};

use crate::atom::{self, AtomParams, DetectionModel};
use crate::dynamics::{labels, tensor, ComplexMatrix, DensityMatrix, C64};
use crate::error::{Error, Result};
use crate::estimators;
use crate::noise;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoAtomParams {
    /// Rydberg-Rydberg interaction U / (2pi hbar), MHz.
    pub interaction_u_mhz: f64,
    pub separation_um: f64,
    /// Effective drive wavevector along the array axis, rad/um.
    pub k_eff_per_um: f64,
    /// Atom positions relative to the rotating-frame reference, um.
    pub positions_um: (f64, f64),
}

impl Default for TwoAtomParams {
    fn default() -> Self {
        Self::from_atom(&AtomParams::default())
    }
}

impl TwoAtomParams {
    pub fn from_atom(p: &AtomParams) -> Self {
        Self {
            interaction_u_mhz: 30.0,
            separation_um: 5.7,
            k_eff_per_um: atom::k_eff_per_um(p),
            positions_um: (0.0, 0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.separation_um > 0.0) {
            return Err(Error::InvalidParameter("separation_um must be > 0".into()));
        }
        if !(self.interaction_u_mhz >= 0.0 && self.interaction_u_mhz.is_finite()) {
            return Err(Error::InvalidParameter("interaction_u_mhz must be >= 0".into()));
        }
        if !self.k_eff_per_um.is_finite()
            || !self.positions_um.0.is_finite()
            || !self.positions_um.1.is_finite()
        {
            return Err(Error::InvalidParameter("non-finite wavevector or position".into()));
        }
        Ok(())
    }
}

/// Full 4-level model or the blockade-projected {gg, gr, rg} model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockadeModel {
    #[default]
    Full,
    Projected,
}

pub fn two_atom_labels() -> Vec<String> {
    labels(&["gg", "gr", "rg", "rr"])
}

/// (e^{ik x1}|rg> + e^{ik x2}|gr>)/sqrt2
pub fn w_state(p: &TwoAtomParams) -> Vec<C64> {
    let (x1, x2) = p.positions_um;
    let zero = C64::new(0.0, 0.0);
    vec![
        zero,
        C64::from_polar(FRAC_1_SQRT_2, p.k_eff_per_um * x2),
        C64::from_polar(FRAC_1_SQRT_2, p.k_eff_per_um * x1),
        zero,
    ]
}

/// (|gr> - |rg>)/sqrt2, zero-phase convention.
pub fn dark_state() -> Vec<C64> {
    let s = C64::new(FRAC_1_SQRT_2, 0.0);
    let zero = C64::new(0.0, 0.0);
    vec![zero, s, -s, zero]
}

/// |W><W| in the zero-phase convention used as the fidelity target.
pub fn target_w_density() -> DensityMatrix {
    let p = TwoAtomParams {
        positions_um: (0.0, 0.0),
        ..TwoAtomParams::default()
    };
    DensityMatrix::pure(&w_state(&p), two_atom_labels()).expect("W is normalized")
}

/// Ideal blockaded pi pulse X_pi^W.
pub fn x_pi_w() -> ComplexMatrix {
    let s = C64::new(0.0, FRAC_1_SQRT_2);
    let h = C64::new(0.5, 0.0);
    let zero = C64::new(0.0, 0.0);
    let one = C64::new(1.0, 0.0);
    let rows = [
        [zero, s, s, zero],
        [s, h, -h, zero],
        [s, -h, h, zero],
        [zero, zero, zero, one],
    ];
    ComplexMatrix::from_fn(4, |i, j| rows[i][j])
}

/// Light shift on atom 1's ground state for time `t_us`:
/// diag(e^{i phi}, e^{i phi}, 1, 1) with phi = 2 pi delta t.
pub fn z_phi_local(delta_mhz: f64, t_us: f64) -> ComplexMatrix {
    let phase = C64::from_polar(1.0, 2.0 * PI * delta_mhz * t_us);
    let one = C64::new(1.0, 0.0);
    ComplexMatrix::diagonal(&[phase, phase, one, one])
}

/// Resonant global drive on two atoms, H/hbar in rad/us.
///
/// `Full` returns the 4x4 operator on gg, gr, rg, rr including U|rr><rr|;
/// `Projected` drops |rr> and returns the 3x3 operator on gg, gr, rg.
pub fn blockade_hamiltonian(omega_mhz: f64, p: &TwoAtomParams, model: BlockadeModel) -> ComplexMatrix {
    let omega = 2.0 * PI * omega_mhz;
    let (x1, x2) = p.positions_um;
    let raise = ComplexMatrix::basis_op(2, 1, 0);
    let id = ComplexMatrix::identity(2);
    let half = |x: f64| C64::from_polar(omega / 2.0, p.k_eff_per_um * x);
    let a1 = tensor(&raise, &id).scale(half(x1));
    let a2 = tensor(&id, &raise).scale(half(x2));
    let drive = &a1 + &a2;
    let mut h = &drive + &drive.dagger();
    h.set(3, 3, C64::new(2.0 * PI * p.interaction_u_mhz, 0.0));
    match model {
        BlockadeModel::Full => h,
        BlockadeModel::Projected => h.restrict(&[0, 1, 2]),
    }
}

/// Bell-state fidelity with respect to the zero-phase |W>.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BellRecord {
    /// rho_{gr,gr} + rho_{rg,rg}
    pub diag_sum: f64,
    /// 2 |rho_{gr,rg}|: the parity-scan contrast
    pub offdiag_amp: f64,
    pub fidelity: f64,
}

impl BellRecord {
    /// From measured populations and parity contrast; assumes the coherence
    /// is real and positive, as the contrast measurement does.
    pub fn from_measured(diag_sum: f64, offdiag_amp: f64) -> Self {
        Self {
            diag_sum,
            offdiag_amp,
            fidelity: 0.5 * diag_sum + 0.5 * offdiag_amp,
        }
    }
}

/// F = 1/2 (rho_gr,gr + rho_rg,rg) + 1/2 (rho_gr,rg + rho_rg,gr)
pub fn bell_fidelity(rho: &DensityMatrix) -> Result<BellRecord> {
    let diag_sum = rho.population("gr")? + rho.population("rg")?;
    let c = rho.coherence("gr", "rg")?;
    let c_conj = rho.coherence("rg", "gr")?;
    Ok(BellRecord {
        diag_sum,
        offdiag_amp: 2.0 * c.norm(),
        fidelity: 0.5 * diag_sum + 0.5 * (c + c_conj).re,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParityFit {
    /// |rho_{gr,rg}|
    pub alpha: f64,
    /// arg rho_{gr,rg}
    pub theta: f64,
    pub offset: f64,
}

/// P_gg(t) after Z_phi^(1)(t) followed by X_pi^W, for each phase time.
pub fn parity_signal(rho0: &DensityMatrix, delta_mhz: f64, times: &[f64]) -> Result<Vec<f64>> {
    if rho0.dim() != 4 {
        return Err(Error::DimensionMismatch {
            expected: 4,
            found: rho0.dim(),
        });
    }
    let x = x_pi_w();
    let gg = rho0.index_of("gg")?;
    times
        .iter()
        .map(|&t| {
            let u = x.matmul(&z_phi_local(delta_mhz, t));
            Ok(rho0.matrix().conjugate(&u).get(gg, gg).re)
        })
        .collect()
}

/// Fits P_gg(t) = alpha cos(2 pi delta t + theta) + C over the phase-time
/// grid. The frequency is the experimenter-set light shift and is held
/// fixed.
pub fn parity_amplitude(rho0: &DensityMatrix, delta_mhz: f64, times: &[f64]) -> Result<ParityFit> {
    check_parity_grid(delta_mhz, times)?;
    let signal = parity_signal(rho0, delta_mhz, times)?;
    fit_parity(times, &signal, delta_mhz)
}

pub(crate) fn check_parity_grid(delta_mhz: f64, times: &[f64]) -> Result<()> {
    if times.len() < 4 {
        return Err(Error::Degenerate(format!(
            "parity scan needs at least 4 phase times, got {}",
            times.len()
        )));
    }
    if delta_mhz == 0.0 || !delta_mhz.is_finite() {
        return Err(Error::Degenerate("parity scan needs a nonzero light shift".into()));
    }
    let (lo, hi) = times
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &t| (a.min(t), b.max(t)));
    let half_period = 0.5 / delta_mhz.abs();
    if hi - lo < half_period * (1.0 - 1e-9) {
        return Err(Error::Degenerate(format!(
            "phase-time span {} us is shorter than half a period ({half_period} us)",
            hi - lo
        )));
    }
    Ok(())
}

pub(crate) fn fit_parity(times: &[f64], signal: &[f64], delta_mhz: f64) -> Result<ParityFit> {
    let fit = estimators::fit_cosine_fixed_frequency(times, signal, delta_mhz, None)?;
    Ok(ParityFit {
        alpha: fit.get("amplitude").expect("amplitude is a fit parameter"),
        theta: fit.get("phase").expect("phase is a fit parameter"),
        offset: fit.get("offset").expect("offset is a fit parameter"),
    })
}

/// The Bell record a perfect |W> would produce through the detection
/// channel: populations measured directly, coherence through a simulated
/// parity scan with ideal gates and imperfect detection.
pub fn max_measurable_fidelity(d: &DetectionModel, trap_off_us: f64) -> Result<BellRecord> {
    let w = target_w_density();
    let measured = noise::apply_detection_to_state(&w, d, trap_off_us)?;
    let pattern = |label: &str| {
        measured
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, p)| *p)
            .unwrap_or(0.0)
    };
    let diag_sum = pattern("gr") + pattern("rg");

    let delta_mhz = 1.0;
    let times: Vec<f64> = (0..16).map(|i| i as f64 / 16.0).collect();
    let x = x_pi_w();
    let signal = times
        .iter()
        .map(|&t| {
            let u = x.matmul(&z_phi_local(delta_mhz, t));
            let rho = w.transformed(&u)?;
            let out = noise::apply_detection_to_state(&rho, d, trap_off_us)?;
            Ok(out.iter().find(|(l, _)| l == "gg").map(|(_, p)| *p).unwrap_or(0.0))
        })
        .collect::<Result<Vec<f64>>>()?;
    let fit = fit_parity(&times, &signal, delta_mhz)?;
    Ok(BellRecord::from_measured(diag_sum, 2.0 * fit.alpha))
}

/// Measured fidelity divided by the detection-limited maximum.
pub fn detection_corrected_fidelity(f_meas: f64, d: &DetectionModel, trap_off_us: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&f_meas) {
        return Err(Error::InvalidParameter(format!(
            "measured fidelity {f_meas} is not in [0, 1]"
        )));
    }
    let f_max = max_measurable_fidelity(d, trap_off_us)?.fidelity;
    if f_max <= 0.0 {
        return Err(Error::Degenerate("detection-limited fidelity is zero".into()));
    }
    Ok(f_meas / f_max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: C64, b: C64, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    fn apply(m: &ComplexMatrix, v: &[C64]) -> Vec<C64> {
        m.apply(v)
    }

    fn overlap(a: &[C64], b: &[C64]) -> C64 {
        a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
    }

    #[test]
    fn w_state_phases() {
        let p = TwoAtomParams {
            positions_um: (0.0, 0.0),
            ..TwoAtomParams::default()
        };
        let w = w_state(&p);
        assert!(close(w[1], C64::new(FRAC_1_SQRT_2, 0.0), 1e-15));
        assert!(close(w[2], C64::new(FRAC_1_SQRT_2, 0.0), 1e-15));

        // k (x2 - x1) = pi gives the antisymmetric combination up to a global phase
        let shifted = TwoAtomParams {
            positions_um: (0.0, PI / p.k_eff_per_um),
            ..p.clone()
        };
        let w = w_state(&shifted);
        let d = dark_state();
        assert!((overlap(&d, &w).norm() - 1.0).abs() < 1e-12);

        for (x1, x2) in [(0.13, -0.4), (1.7, 2.2), (-3.0, 0.01)] {
            let q = TwoAtomParams {
                positions_um: (x1, x2),
                ..p.clone()
            };
            let n: f64 = w_state(&q).iter().map(|z| z.norm_sqr()).sum();
            assert!((n - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn x_pi_w_action() {
        let x = x_pi_w();
        assert!(x.is_unitary(1e-12));
        let gg = vec![C64::new(1.0, 0.0), C64::default(), C64::default(), C64::default()];
        let w = w_state(&TwoAtomParams::default());
        let out = apply(&x, &gg);
        for (o, wi) in out.iter().zip(&w) {
            assert!(close(*o, C64::new(0.0, 1.0) * wi, 1e-15));
        }
        let twice = apply(&x, &out);
        assert!(close(twice[0], C64::new(-1.0, 0.0), 1e-15));
        assert!(twice[1..].iter().all(|z| z.norm() < 1e-15));
        let d = dark_state();
        let xd = apply(&x, &d);
        for (a, b) in xd.iter().zip(&d) {
            assert!(close(*a, *b, 1e-15));
        }
    }

    #[test]
    fn z_phi_local_action() {
        assert!(z_phi_local(5.0, 0.0).approx_eq(&ComplexMatrix::identity(4), 0.0));
        let z = z_phi_local(5.0, 0.1);
        assert!(z.is_unitary(1e-12));
        let expected = ComplexMatrix::diagonal(&[
            C64::new(-1.0, 0.0),
            C64::new(-1.0, 0.0),
            C64::new(1.0, 0.0),
            C64::new(1.0, 0.0),
        ]);
        assert!(z.approx_eq(&expected, 1e-14));
        // cos(phi/2)|W> + i sin(phi/2)|D> up to global phase; at phi = pi this is |D>
        let w = w_state(&TwoAtomParams::default());
        let out = apply(&z, &w);
        assert!((overlap(&dark_state(), &out).norm() - 1.0).abs() < 1e-14);
        // intermediate phase, checked against the rotated form
        let phi: f64 = 0.7;
        let out = apply(&z_phi_local(1.0, phi / (2.0 * PI)), &w);
        let global = C64::from_polar(1.0, phi / 2.0);
        let expect: Vec<C64> = w
            .iter()
            .zip(dark_state())
            .map(|(a, b)| global * (a * (phi / 2.0).cos() + C64::new(0.0, (phi / 2.0).sin()) * b))
            .collect();
        for (a, b) in out.iter().zip(&expect) {
            assert!(close(*a, *b, 1e-14));
        }
    }

    #[test]
    fn bell_fidelity_examples() {
        let r = bell_fidelity(&target_w_density()).unwrap();
        assert!((r.fidelity - 1.0).abs() < 1e-15);
        let mix = DensityMatrix::mixture(&[0.0, 0.5, 0.5, 0.0], two_atom_labels()).unwrap();
        let r = bell_fidelity(&mix).unwrap();
        assert!((r.fidelity - 0.5).abs() < 1e-15);
        assert_eq!(r.offdiag_amp, 0.0);
        let m = BellRecord::from_measured(0.94, 0.88);
        assert!((m.fidelity - 0.91).abs() < 1e-15);
    }

    #[test]
    fn parity_amplitude_examples() {
        let times: Vec<f64> = (0..21).map(|i| i as f64 * 0.02).collect();
        let fit = parity_amplitude(&target_w_density(), 5.0, &times).unwrap();
        assert!((fit.alpha - 0.5).abs() < 1e-12);
        assert!(fit.theta.abs() < 1e-9);

        let mix = DensityMatrix::mixture(&[0.0, 0.5, 0.5, 0.0], two_atom_labels()).unwrap();
        assert!(parity_amplitude(&mix, 5.0, &times).unwrap().alpha < 1e-9);

        // rho0 = 1/2(|gr><gr| + |rg><rg|) + (alpha |gr><rg| + h.c.), alpha = 0.44
        let mut m = ComplexMatrix::zeros(4);
        m.set(1, 1, C64::new(0.5, 0.0));
        m.set(2, 2, C64::new(0.5, 0.0));
        m.set(1, 2, C64::new(0.44, 0.0));
        m.set(2, 1, C64::new(0.44, 0.0));
        let rho = DensityMatrix::new(m, two_atom_labels()).unwrap();
        let fit = parity_amplitude(&rho, 5.0, &times).unwrap();
        assert!((2.0 * fit.alpha - 0.88).abs() < 1e-12);
        // P_gg = 1/2 + alpha cos(delta t)
        assert!((fit.offset - 0.5).abs() < 1e-12);
    }

    #[test]
    fn parity_grid_validation() {
        let rho = target_w_density();
        assert!(matches!(
            parity_amplitude(&rho, 5.0, &[0.0, 0.01, 0.02]),
            Err(Error::Degenerate(_))
        ));
        // 5 MHz: half period is 0.1 us
        let short: Vec<f64> = (0..10).map(|i| i as f64 * 0.005).collect();
        assert!(matches!(parity_amplitude(&rho, 5.0, &short), Err(Error::Degenerate(_))));
    }

    #[test]
    fn projected_hamiltonian_is_collective() {
        // H = (sqrt2 Omega / 2)(|W><gg| + h.c.) in the zero-phase frame
        let p = TwoAtomParams::default();
        let h = blockade_hamiltonian(2.0, &p, BlockadeModel::Projected);
        assert_eq!(h.dim(), 3);
        let omega = 2.0 * PI * 2.0;
        let w = [C64::default(), C64::new(FRAC_1_SQRT_2, 0.0), C64::new(FRAC_1_SQRT_2, 0.0)];
        let gg = [C64::new(1.0, 0.0), C64::default(), C64::default()];
        let hw = h.apply(&w);
        for (a, b) in hw.iter().zip(&gg) {
            assert!(close(*a, b * (2f64.sqrt() * omega / 2.0), 1e-12));
        }
        let full = blockade_hamiltonian(2.0, &p, BlockadeModel::Full);
        assert!(full.is_hermitian(0.0));
        assert!((full.get(3, 3).re - 2.0 * PI * 30.0).abs() < 1e-12);
    }

    #[test]
    fn detection_corrected_examples() {
        let perfect = DetectionModel::perfect();
        assert!((detection_corrected_fidelity(0.91, &perfect, 1.0).unwrap() - 0.91).abs() < 1e-12);
        let d = DetectionModel::constant(0.99, 0.96);
        let fmax = max_measurable_fidelity(&d, 1.0).unwrap();
        assert!((detection_corrected_fidelity(fmax.fidelity, &d, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(detection_corrected_fidelity(1.5, &d, 1.0).is_err());
        let blind = DetectionModel::constant(0.5, 0.5);
        let r = max_measurable_fidelity(&blind, 1.0).unwrap();
        assert!(r.offdiag_amp < 1e-12);
    }
}
