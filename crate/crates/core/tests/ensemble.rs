//! Monte Carlo layer: determinism, echo refocusing, convergence in dt and
//! fit stability on simulated data.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rydberg_core::atom::DetectionModel;
use rydberg_core::blockade::{self, BlockadeModel};
use rydberg_core::dynamics::{
    labels, tensor, ComplexMatrix, DensityMatrix, EvolveOptions, LindbladChannel, Segment, C64, DEFAULT_DT_MAX,
};
use rydberg_core::experiments::ExperimentConfig;
use rydberg_core::noise::{self, EnsembleConfig, Mode, NoiseConfig};
use rydberg_core::pulse::{Decoherence, DopplerScope, Preset, SequenceParams, SystemModel};

fn ensemble(preset: Preset, workers: usize, mode: Mode) -> noise::EnsembleResult {
    let params = SequenceParams::default();
    let cfg = EnsembleConfig {
        n_shots: 12,
        mode,
        master_seed: 77,
        dt_max_us: DEFAULT_DT_MAX,
        workers: Some(workers),
    };
    noise::run_ensemble(
        |x| preset.sequence(x, &params),
        &[0.0, 5.0, 20.0],
        &SystemModel::default(),
        &NoiseConfig::default(),
        &DetectionModel::default(),
        &cfg,
    )
    .unwrap()
}

#[test]
fn results_do_not_depend_on_worker_count() {
    for mode in [Mode::Expectation, Mode::Sampled] {
        let reference = format!("{:?}", ensemble(Preset::WEcho, 1, mode));
        for workers in [2, 5, 8] {
            assert_eq!(format!("{:?}", ensemble(Preset::WEcho, workers, mode)), reference);
        }
    }
}

#[test]
fn different_seeds_give_different_shots() {
    let (a, _) = noise::shot_noise(&SystemModel::default(), &NoiseConfig::default(), 2, 1, 0, 0).unwrap();
    let (b, _) = noise::shot_noise(&SystemModel::default(), &NoiseConfig::default(), 2, 2, 0, 0).unwrap();
    let (c, _) = noise::shot_noise(&SystemModel::default(), &NoiseConfig::default(), 2, 1, 0, 1).unwrap();
    assert_ne!(a, b);
    assert_ne!(a, c);
}

/// 1 - P(all ground) for each shot, with that shot's largest Doppler shift.
fn echo_residuals(preset: Preset, system: &SystemModel, shots: usize) -> Vec<(f64, f64)> {
    let params = SequenceParams::default();
    let n = preset.n_atoms();
    let ground = "g".repeat(n);
    let mut out = Vec::new();
    for (i, &x) in [10.0, 40.0, 80.0].iter().enumerate() {
        let seq = preset.sequence(x, &params).unwrap();
        for shot in 0..shots {
            let (sample, _) = noise::shot_noise(system, &NoiseConfig::default(), n, 3, i as u64, shot as u64).unwrap();
            let rho = noise::simulate_shot(&seq, system, &sample, DEFAULT_DT_MAX).unwrap();
            let delta = sample.doppler_krad_s.iter().fold(0.0_f64, |m, d| m.max(d.abs())) * 1e-3;
            out.push((1.0 - rho.population(&ground).unwrap(), delta));
        }
    }
    out
}

#[test]
fn spin_echo_refocuses_static_doppler() {
    let system = SystemModel {
        decoherence: Decoherence::none(),
        doppler_scope: DopplerScope::FreeEvolution,
        ..SystemModel::default()
    };
    for (residual, _) in echo_residuals(Preset::SpinEcho, &system, 30) {
        assert!(residual.abs() <= 1e-6, "{residual:e}");
    }
}

#[test]
fn spin_echo_residual_with_detuned_pulses_is_second_order() {
    // each of the three pulses has its axis tilted by delta/Omega; the
    // amplitude errors add at most linearly, so 1 - P_g <= (2 delta/Omega)^2
    let system = SystemModel {
        decoherence: Decoherence::none(),
        ..SystemModel::default()
    };
    let omega = 2.0 * PI * SequenceParams::default().rabi_mhz;
    for (residual, delta) in echo_residuals(Preset::SpinEcho, &system, 30) {
        assert!(residual <= 4.0 * (delta / omega).powi(2) + 1e-9, "{residual:e} at delta {delta}");
    }
}

#[test]
fn w_echo_refocuses_doppler_and_position() {
    let system = SystemModel {
        blockade: BlockadeModel::Projected,
        decoherence: Decoherence::none(),
        doppler_scope: DopplerScope::FreeEvolution,
        ..SystemModel::default()
    };
    for (residual, _) in echo_residuals(Preset::WEcho, &system, 20) {
        assert!(residual.abs() <= 1e-5, "{residual:e}");
    }
}

#[test]
fn halving_the_step_leaves_rabi_populations_unchanged() {
    let system = SystemModel::default();
    let params = SequenceParams::default();
    let (sample, _) = noise::shot_noise(&system, &NoiseConfig::default(), 1, 5, 0, 0).unwrap();
    for x in [0.37, 2.5, 10.0] {
        let seq = Preset::Rabi.sequence(x, &params).unwrap();
        let a = noise::simulate_shot(&seq, &system, &sample, DEFAULT_DT_MAX).unwrap();
        let b = noise::simulate_shot(&seq, &system, &sample, DEFAULT_DT_MAX / 2.0).unwrap();
        for (p, q) in a.populations().iter().zip(b.populations()) {
            assert!((p - q).abs() < 1e-8, "x = {x}: {p} vs {q}");
        }
    }
}

#[test]
fn rabi_fit_is_stable_under_measurement_noise() {
    // the Rabi preset grid with a 27 us decay, the middle of its acceptance
    // window; the simulated preset's own sensitivity is reported by check 6
    let scan = ExperimentConfig::for_preset(Preset::Rabi).scan.unwrap().values();
    let clean: Vec<f64> = scan
        .iter()
        .map(|&t| 0.5 - 0.5 * (-t / 27.0).exp() * (2.0 * PI * 2.0 * t).cos())
        .collect();
    let rms = rydberg_core::experiments::checks::tau_noise_sensitivity(&scan, &clean, 0.01, 100).unwrap();
    assert!(rms < 0.05, "tau moves by {:.1}% rms under 0.01 noise", 100.0 * rms);
}

#[test]
fn collective_dephasing_spares_the_w_coherence() {
    let gamma = 0.3;
    let n_r = ComplexMatrix::basis_op(2, 1, 1);
    let id = ComplexMatrix::identity(2);
    let collective = &tensor(&n_r, &id) + &tensor(&id, &n_r);
    let opts = EvolveOptions {
        dt_max: DEFAULT_DT_MAX,
        sample_interval: Some(0.5),
    };
    let traj = rydberg_core::dynamics::evolve_with(
        &blockade::target_w_density(),
        &[Segment::new(ComplexMatrix::zeros(4), 20.0).unwrap()],
        &[LindbladChannel::with_rate(&collective, gamma).unwrap()],
        &opts,
    )
    .unwrap();
    for (_, rho) in &traj {
        assert!((rho.coherence("gr", "rg").unwrap() - C64::new(0.5, 0.0)).norm() <= 1e-9);
    }

    // single atom: d/dt rho_gr = -(gamma/2) rho_gr
    let s = C64::new(FRAC_1_SQRT_2, 0.0);
    let plus = DensityMatrix::pure(&[s, s], labels(&["g", "r"])).unwrap();
    let traj = rydberg_core::dynamics::evolve_with(
        &plus,
        &[Segment::new(ComplexMatrix::zeros(2), 20.0).unwrap()],
        &[LindbladChannel::with_rate(&n_r, gamma).unwrap()],
        &opts,
    )
    .unwrap();
    for (t, rho) in &traj {
        let expected = 0.5 * (-gamma * t / 2.0).exp();
        assert!((rho.coherence("g", "r").unwrap().norm() - expected).abs() <= 1e-9, "t = {t}");
    }
}
