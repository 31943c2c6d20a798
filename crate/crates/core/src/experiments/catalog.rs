use serde::Serialize;

use crate::pulse::Preset;

use super::config::ScanGrid;

/// Catalog entry for one preset.
#[derive(Clone, Debug, Serialize)]
pub struct PresetInfo {
    pub name: &'static str,
    pub figure: &'static str,
    pub description: &'static str,
    pub n_atoms: usize,
    pub scan_variable: &'static str,
    pub default_scan: ScanGrid,
    pub default_shots: usize,
    /// What the run fits and reports.
    pub analysis: &'static str,
}

pub fn info(p: Preset) -> PresetInfo {
    let (scan, shots, analysis) = match p {
        Preset::Rabi => (
            ScanGrid::new(0.0, 10.0, 101),
            200,
            "damped cosine on P(r): decay time tau_us and frequency_mhz",
        ),
        Preset::T1 => (ScanGrid::new(0.0, 100.0, 20), 200, "exponential decay of P(g): tau_us"),
        Preset::Ramsey => (
            ScanGrid::new(0.0, 12.0, 25),
            1000,
            "Gaussian decay of P(r) to 0.5: t2_star_us",
        ),
        Preset::SpinEcho => (
            ScanGrid::new(0.0, 80.0, 17),
            200,
            "exponential decay of P(g) to 0.5: t2_us and pure dephasing t_phi_us",
        ),
        Preset::PhaseGateEcho => (
            ScanGrid::new(0.0, 0.4, 21),
            200,
            "cosine at the light-shift frequency on P(g): contrast and phase",
        ),
        Preset::BlockadeRabi => (
            ScanGrid::new(0.0, 4.0, 81),
            50,
            "damped cosine on P(gg): collective frequency_mhz; max P(rr)",
        ),
        Preset::ParityScan => (
            ScanGrid::new(0.0, 0.4, 21),
            100,
            "cosine at the light-shift frequency on P(gg): contrast 2 alpha, Bell fidelity, detection-corrected fidelity",
        ),
        Preset::WLifetime => (
            ScanGrid::new(0.0, 10.0, 21),
            200,
            "Gaussian decay of P(gg): tau_us",
        ),
        Preset::WEcho => (
            ScanGrid::new(0.0, 80.0, 17),
            100,
            "exponential decay of P(gg): tau_us and pure dephasing t_phi_us",
        ),
    };
    PresetInfo {
        name: p.name(),
        figure: p.figure(),
        description: p.description(),
        n_atoms: p.n_atoms(),
        scan_variable: p.scan_variable(),
        default_scan: scan,
        default_shots: shots,
        analysis,
    }
}

pub fn list_presets() -> Vec<PresetInfo> {
    Preset::ALL.iter().map(|&p| info(p)).collect()
}
