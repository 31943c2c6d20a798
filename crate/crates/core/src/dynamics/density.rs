use crate::dynamics::matrix::{ComplexMatrix, C64};
use crate::error::{Error, Result};

pub const HERMITICITY_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-9;
pub const POSITIVITY_TOL: f64 = 1e-8;

/// Density matrix over an ordered, labelled basis.
#[derive(Clone, Debug)]
pub struct DensityMatrix {
    matrix: ComplexMatrix,
    labels: Vec<String>,
}

impl DensityMatrix {
    /// Validating constructor: Hermitian, unit trace and positive
    /// semidefinite within the crate tolerances.
    pub fn new(matrix: ComplexMatrix, labels: Vec<String>) -> Result<Self> {
        let rho = Self::from_parts(matrix, labels)?;
        rho.check_physical()?;
        Ok(rho)
    }

    /// Shape checks only; used for integrator output where trace drift and
    /// small negative eigenvalues are diagnostics rather than errors.
    pub fn from_parts(matrix: ComplexMatrix, labels: Vec<String>) -> Result<Self> {
        if labels.len() != matrix.dim() {
            return Err(Error::DimensionMismatch {
                expected: matrix.dim(),
                found: labels.len(),
            });
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::InvalidParameter(format!("duplicate basis label `{l}`")));
            }
        }
        Ok(Self { matrix, labels })
    }

    /// |psi><psi| for a normalized state vector.
    pub fn pure(state: &[C64], labels: Vec<String>) -> Result<Self> {
        let norm: f64 = state.iter().map(|z| z.norm_sqr()).sum();
        if (norm - 1.0).abs() > TRACE_TOL {
            return Err(Error::InvalidParameter(format!(
                "state vector is not normalized (norm^2 = {norm})"
            )));
        }
        Self::from_parts(ComplexMatrix::outer(state, state), labels)
    }

    /// The projector onto a single basis state.
    pub fn basis_state(label: &str, labels: Vec<String>) -> Result<Self> {
        let idx = labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))?;
        let dim = labels.len();
        Self::from_parts(ComplexMatrix::basis_op(dim, idx, idx), labels)
    }

    /// Diagonal (classical) mixture with the given weights.
    pub fn mixture(weights: &[f64], labels: Vec<String>) -> Result<Self> {
        let diag: Vec<C64> = weights.iter().map(|&w| C64::new(w, 0.0)).collect();
        Self::new(ComplexMatrix::diagonal(&diag), labels)
    }

    pub fn maximally_mixed(labels: Vec<String>) -> Self {
        let n = labels.len();
        let w = vec![1.0 / n as f64; n];
        Self::mixture(&w, labels).expect("maximally mixed state is physical")
    }

    pub fn check_physical(&self) -> Result<()> {
        let herm = self.matrix.hermiticity_error();
        if herm > HERMITICITY_TOL {
            return Err(Error::NotHermitian(herm));
        }
        let tr = self.trace();
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(Error::InvalidParameter(format!("trace {tr} differs from 1")));
        }
        let min_ev = self.min_eigenvalue();
        if min_ev < -POSITIVITY_TOL {
            return Err(Error::InvalidParameter(format!(
                "density matrix has negative eigenvalue {min_ev:e}"
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    #[inline]
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.matrix.hermitian_eigenvalues()[0]
    }

    /// Population of a basis state, clamped into [0, 1].
    pub fn population(&self, label: &str) -> Result<f64> {
        let i = self.index_of(label)?;
        Ok(clamp_probability(self.matrix.get(i, i).re))
    }

    /// All diagonal entries in basis order, clamped into [0, 1].
    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| clamp_probability(self.matrix.get(i, i).re))
            .collect()
    }

    /// <a|rho|b>
    pub fn coherence(&self, label_a: &str, label_b: &str) -> Result<C64> {
        if label_a == label_b {
            return Err(Error::InvalidParameter(
                "coherence needs two distinct labels".into(),
            ));
        }
        let a = self.index_of(label_a)?;
        let b = self.index_of(label_b)?;
        Ok(self.matrix.get(a, b))
    }

    /// U rho U^dagger with the same basis.
    pub fn transformed(&self, u: &ComplexMatrix) -> Result<Self> {
        if u.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: u.dim(),
            });
        }
        Ok(Self {
            matrix: self.matrix.conjugate(u),
            labels: self.labels.clone(),
        })
    }
}

/// Entries within 1e-8 of the unit interval are integrator noise and get
/// clamped; anything further out is reported as-is so it stays visible.
fn clamp_probability(p: f64) -> f64 {
    if (-POSITIVITY_TOL..=1.0 + POSITIVITY_TOL).contains(&p) {
        p.clamp(0.0, 1.0)
    } else {
        p
    }
}

/// Builds owned labels from string slices.
pub fn labels(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn two_atom() -> Vec<String> {
        labels(&["gg", "gr", "rg", "rr"])
    }

    fn w_state() -> DensityMatrix {
        let s = C64::new(FRAC_1_SQRT_2, 0.0);
        let z = C64::new(0.0, 0.0);
        DensityMatrix::pure(&[z, s, s, z], two_atom()).unwrap()
    }

    #[test]
    fn ground_population() {
        let rho = DensityMatrix::basis_state("g", labels(&["g", "r"])).unwrap();
        assert_eq!(rho.population("g").unwrap(), 1.0);
        assert_eq!(rho.population("r").unwrap(), 0.0);
    }

    #[test]
    fn w_state_populations_and_coherence() {
        let rho = w_state();
        assert!((rho.population("gr").unwrap() - 0.5).abs() < 1e-15);
        assert!((rho.coherence("gr", "rg").unwrap() - C64::new(0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn maximally_mixed_population() {
        let rho = DensityMatrix::maximally_mixed(two_atom());
        assert!((rho.population("rr").unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn mixture_has_no_coherence() {
        let rho = DensityMatrix::mixture(&[0.0, 0.5, 0.5, 0.0], two_atom()).unwrap();
        assert_eq!(rho.coherence("gr", "rg").unwrap(), C64::new(0.0, 0.0));
    }

    #[test]
    fn phase_shifted_coherence() {
        // rho_phi = 1/2(|gr><gr| + |rg><rg|) + (alpha e^{i delta t}|gr><rg| + h.c.), alpha = 1/2, delta t = pi
        let alpha = 0.5;
        let phase = C64::from_polar(alpha, std::f64::consts::PI);
        let mut m = ComplexMatrix::zeros(4);
        m.set(1, 1, C64::new(0.5, 0.0));
        m.set(2, 2, C64::new(0.5, 0.0));
        m.set(1, 2, phase);
        m.set(2, 1, phase.conj());
        let rho = DensityMatrix::new(m, two_atom()).unwrap();
        let c = rho.coherence("gr", "rg").unwrap();
        assert!((c - C64::new(-0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn unknown_label_is_an_error() {
        let rho = w_state();
        assert!(matches!(rho.population("xx"), Err(Error::UnknownLabel(_))));
        assert!(rho.coherence("gr", "gr").is_err());
        assert!(matches!(rho.coherence("gr", "zz"), Err(Error::UnknownLabel(_))));
    }

    #[test]
    fn validation_rejects_unphysical() {
        let labels2 = labels(&["g", "r"]);
        let not_herm = ComplexMatrix::from_real_rows(&[&[0.5, 0.3], &[0.0, 0.5]]);
        assert!(matches!(
            DensityMatrix::new(not_herm, labels2.clone()),
            Err(Error::NotHermitian(_))
        ));
        let bad_trace = ComplexMatrix::identity(2);
        assert!(DensityMatrix::new(bad_trace, labels2.clone()).is_err());
        let negative = ComplexMatrix::from_real_rows(&[&[1.5, 0.0], &[0.0, -0.5]]);
        assert!(DensityMatrix::new(negative, labels2).is_err());
    }
}
