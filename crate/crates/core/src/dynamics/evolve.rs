//! Fixed-step RK4 integration of the Lindblad master equation
//!
//! ```text
//! drho/dt = -i[H, rho] + sum_k (L_k rho L_k^dagger - 1/2 {L_k^dagger L_k, rho})
//! ```
//!
//! for piecewise-constant generators. Within a segment the equation is linear
//! and time-invariant, so one classical RK4 step of size `h` is exactly the
//! polynomial map `P = I + hL + (hL)^2/2 + (hL)^3/6 + (hL)^4/24` of the
//! Liouvillian superoperator `L`. The integrator builds `P` once per segment
//! and applies it `n` times. `L` usually splits into independent blocks
//! (free evolution with diagonal `H` decouples almost every coherence), and
//! each block picks whichever of plain repeated application or
//! binary powering of `P` is cheaper. The result is the RK4 trajectory up
//! to floating-point rounding.
//!
//! The trace is never renormalized.

use crate::dynamics::density::{DensityMatrix, HERMITICITY_TOL};
use crate::dynamics::matrix::{ComplexMatrix, C64, ONE, ZERO};
use crate::error::{Error, Result};

pub const DEFAULT_DT_MAX: f64 = 1e-3;

/// Jump operator, already scaled by sqrt(rate) (units of us^-1/2).
#[derive(Clone, Debug)]
pub struct LindbladChannel {
    operator: ComplexMatrix,
}

impl LindbladChannel {
    pub fn new(operator: ComplexMatrix) -> Self {
        Self { operator }
    }

    /// `sqrt(rate) * operator`
    pub fn with_rate(operator: &ComplexMatrix, rate: f64) -> Result<Self> {
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "channel rate must be finite and >= 0, got {rate}"
            )));
        }
        Ok(Self::new(operator * rate.sqrt()))
    }

    pub fn operator(&self) -> &ComplexMatrix {
        &self.operator
    }

    pub fn dim(&self) -> usize {
        self.operator.dim()
    }
}

/// A constant Hamiltonian (H/hbar in rad/us) applied for `duration` us.
///
/// `channels` are active only during this segment, on top of the global
/// channel list handed to [`evolve`].
#[derive(Clone, Debug)]
pub struct Segment {
    pub hamiltonian: ComplexMatrix,
    pub duration: f64,
    pub channels: Vec<LindbladChannel>,
}

impl Segment {
    pub fn new(hamiltonian: ComplexMatrix, duration: f64) -> Result<Self> {
        let seg = Self {
            hamiltonian,
            duration,
            channels: Vec::new(),
        };
        seg.validate()?;
        Ok(seg)
    }

    pub fn with_channels(mut self, channels: Vec<LindbladChannel>) -> Result<Self> {
        self.channels = channels;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "segment duration must be finite and >= 0, got {}",
                self.duration
            )));
        }
        let herm = self.hamiltonian.hermiticity_error();
        if herm > HERMITICITY_TOL {
            return Err(Error::NotHermitian(herm));
        }
        let d = self.hamiltonian.dim();
        if let Some(c) = self.channels.iter().find(|c| c.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: c.dim(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EvolveOptions {
    pub dt_max: f64,
    /// Record intermediate states roughly this often (rounded to a whole
    /// number of steps). Segment boundaries are always recorded.
    pub sample_interval: Option<f64>,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            dt_max: DEFAULT_DT_MAX,
            sample_interval: None,
        }
    }
}

pub type Trajectory = Vec<(f64, DensityMatrix)>;

/// Integrates through all segments and returns the state at t = 0 and at
/// every segment boundary.
pub fn evolve(
    rho0: &DensityMatrix,
    segments: &[Segment],
    channels: &[LindbladChannel],
    dt_max: f64,
) -> Result<Trajectory> {
    evolve_with(
        rho0,
        segments,
        channels,
        &EvolveOptions {
            dt_max,
            sample_interval: None,
        },
    )
}

pub fn evolve_with(
    rho0: &DensityMatrix,
    segments: &[Segment],
    channels: &[LindbladChannel],
    opts: &EvolveOptions,
) -> Result<Trajectory> {
    let labels = rho0.labels().to_vec();
    let dim = rho0.dim();
    let mut out = Vec::new();
    integrate(rho0, segments, channels, opts, |t, v| {
        let m = ComplexMatrix::new(dim, v.to_vec())?;
        out.push((t, DensityMatrix::from_parts(m, labels.clone())?));
        Ok(())
    })?;
    Ok(out)
}

/// Final state only; skips materializing the trajectory.
pub fn evolve_final(
    rho0: &DensityMatrix,
    segments: &[Segment],
    channels: &[LindbladChannel],
    dt_max: f64,
) -> Result<DensityMatrix> {
    let mut last = None;
    integrate(
        rho0,
        segments,
        channels,
        &EvolveOptions {
            dt_max,
            sample_interval: None,
        },
        |_, v| {
            last = Some(v.to_vec());
            Ok(())
        },
    )?;
    let m = ComplexMatrix::new(rho0.dim(), last.expect("initial state is always recorded"))?;
    DensityMatrix::from_parts(m, rho0.labels().to_vec())
}

/// Number of RK4 steps for a segment: the smallest n with duration/n <= dt_max.
pub fn step_count(duration: f64, dt_max: f64) -> usize {
    if duration <= 0.0 {
        return 0;
    }
    let ratio = duration / dt_max;
    let nearest = ratio.round();
    let n = if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        ratio.ceil()
    };
    (n as usize).max(1)
}

fn integrate(
    rho0: &DensityMatrix,
    segments: &[Segment],
    channels: &[LindbladChannel],
    opts: &EvolveOptions,
    mut record: impl FnMut(f64, &[C64]) -> Result<()>,
) -> Result<()> {
    if !(opts.dt_max > 0.0 && opts.dt_max.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "dt_max must be positive, got {}",
            opts.dt_max
        )));
    }
    let dim = rho0.dim();
    if let Some(c) = channels.iter().find(|c| c.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: c.dim(),
        });
    }
    for seg in segments {
        if seg.hamiltonian.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: seg.hamiltonian.dim(),
            });
        }
        seg.validate()?;
    }

    let mut state = rho0.matrix().as_slice().to_vec();
    let mut t0 = 0.0;
    record(0.0, &state)?;

    for seg in segments {
        let n = step_count(seg.duration, opts.dt_max);
        if n == 0 {
            record(t0, &state)?;
            continue;
        }
        let h = seg.duration / n as f64;
        let jumps: Vec<&ComplexMatrix> = channels
            .iter()
            .chain(&seg.channels)
            .map(LindbladChannel::operator)
            .collect();
        let generator = Liouvillian::build(&seg.hamiltonian, &jumps);
        let mut blocks = generator.step_blocks(h);

        let stride = opts
            .sample_interval
            .map(|s| ((s / h).round() as usize).clamp(1, n))
            .unwrap_or(n);
        let mut done = 0;
        while done < n {
            let k = stride.min(n - done);
            for block in &mut blocks {
                block.advance(&mut state, k);
            }
            done += k;
            let t = if done == n {
                t0 + seg.duration
            } else {
                t0 + done as f64 * h
            };
            if state.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
                return Err(Error::NotFinite(t));
            }
            record(t, &state)?;
        }
        t0 += seg.duration;
    }
    Ok(())
}

/// Dense Liouvillian acting on row-major vec(rho): index (i, j) -> i*d + j.
struct Liouvillian {
    size: usize,
    data: Vec<C64>,
}

impl Liouvillian {
    fn build(hamiltonian: &ComplexMatrix, jumps: &[&ComplexMatrix]) -> Self {
        let d = hamiltonian.dim();
        let size = d * d;
        let mut data = vec![ZERO; size * size];
        let at = |row: usize, col: usize| row * size + col;

        // Effective non-Hermitian generator G = -iH - 1/2 sum L^dagger L.
        // -i[H, rho] - 1/2{K, rho} = G rho + rho G^dagger
        let mut g = hamiltonian.scale(C64::new(0.0, -1.0));
        for l in jumps {
            let k = l.dagger().matmul(l);
            g = &g - &k.scale(C64::new(0.5, 0.0));
        }
        for i in 0..d {
            for k in 0..d {
                let gik = g.get(i, k);
                if gik == ZERO {
                    continue;
                }
                // (G rho)_{ij} = sum_k G_ik rho_kj
                for j in 0..d {
                    data[at(i * d + j, k * d + j)] += gik;
                }
                // (rho G^dagger)_{ji} = sum_k rho_jk conj(G_ik)
                for j in 0..d {
                    data[at(j * d + i, j * d + k)] += gik.conj();
                }
            }
        }
        // L rho L^dagger: (i, j) <- L_ik rho_kl conj(L_jl)
        for l in jumps {
            let nz: Vec<(usize, usize, C64)> = (0..d)
                .flat_map(|i| (0..d).map(move |k| (i, k)))
                .filter_map(|(i, k)| {
                    let v = l.get(i, k);
                    (v != ZERO).then_some((i, k, v))
                })
                .collect();
            for &(i, k, a) in &nz {
                for &(j, m, b) in &nz {
                    data[at(i * d + j, k * d + m)] += a * b.conj();
                }
            }
        }
        Self { size, data }
    }

    /// Connected components of the coupling graph, each with its RK4 step map.
    fn step_blocks(&self, h: f64) -> Vec<StepBlock> {
        let n = self.size;
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for r in 0..n {
            for c in 0..n {
                if r != c && self.data[r * n + c] != ZERO {
                    let (a, b) = (find(&mut parent, r), find(&mut parent, c));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut slot = vec![usize::MAX; n];
        for i in 0..n {
            let root = find(&mut parent, i);
            if slot[root] == usize::MAX {
                slot[root] = groups.len();
                groups.push(Vec::new());
            }
            groups[slot[root]].push(i);
        }
        groups
            .into_iter()
            .map(|idx| {
                let b = idx.len();
                let hl: Vec<C64> = idx
                    .iter()
                    .flat_map(|&r| idx.iter().map(move |&c| (r, c)))
                    .map(|(r, c)| self.data[r * n + c] * h)
                    .collect();
                StepBlock::new(idx, rk4_polynomial(&hl, b))
            })
            .collect()
    }
}

/// I + M + M^2/2 + M^3/6 + M^4/24, Horner form.
fn rk4_polynomial(m: &[C64], b: usize) -> Vec<C64> {
    let mut acc = identity(b);
    for k in [4.0, 3.0, 2.0, 1.0] {
        let mut next = matmul(m, &acc, b);
        for x in &mut next {
            *x /= k;
        }
        for i in 0..b {
            next[i * b + i] += ONE;
        }
        acc = next;
    }
    acc
}

fn identity(b: usize) -> Vec<C64> {
    let mut m = vec![ZERO; b * b];
    for i in 0..b {
        m[i * b + i] = ONE;
    }
    m
}

fn matmul(a: &[C64], c: &[C64], b: usize) -> Vec<C64> {
    let mut out = vec![ZERO; b * b];
    for i in 0..b {
        for k in 0..b {
            let x = a[i * b + k];
            if x == ZERO {
                continue;
            }
            let row = &c[k * b..(k + 1) * b];
            for (o, &y) in out[i * b..(i + 1) * b].iter_mut().zip(row) {
                *o += x * y;
            }
        }
    }
    out
}

fn matvec(a: &[C64], x: &[C64], b: usize, out: &mut [C64]) {
    for i in 0..b {
        out[i] = a[i * b..(i + 1) * b].iter().zip(x).map(|(&p, &q)| p * q).sum();
    }
}

struct StepBlock {
    idx: Vec<usize>,
    step: Vec<C64>,
    /// (power, step^power) from the last binary-powering call
    cached: Option<(usize, Vec<C64>)>,
}

impl StepBlock {
    fn new(idx: Vec<usize>, step: Vec<C64>) -> Self {
        Self {
            idx,
            step,
            cached: None,
        }
    }

    fn advance(&mut self, state: &mut [C64], steps: usize) {
        let b = self.idx.len();
        let mut x: Vec<C64> = self.idx.iter().map(|&i| state[i]).collect();
        let mut y = vec![ZERO; b];
        if b == 1 {
            x[0] *= self.step[0].powu(steps as u32);
        } else if self.prefer_direct(steps) {
            for _ in 0..steps {
                matvec(&self.step, &x, b, &mut y);
                std::mem::swap(&mut x, &mut y);
            }
        } else {
            let p = self.power(steps);
            matvec(p, &x, b, &mut y);
            x = y;
        }
        for (&i, v) in self.idx.iter().zip(x) {
            state[i] = v;
        }
    }

    fn prefer_direct(&self, steps: usize) -> bool {
        if matches!(&self.cached, Some((p, _)) if *p == steps) {
            return false;
        }
        let b = self.idx.len();
        let products = (usize::BITS - steps.leading_zeros()) as usize + steps.count_ones() as usize;
        steps * b * b <= products * b * b * b
    }

    fn power(&mut self, steps: usize) -> &[C64] {
        let stale = !matches!(&self.cached, Some((p, _)) if *p == steps);
        if stale {
            let b = self.idx.len();
            let mut result = identity(b);
            let mut base = self.step.clone();
            let mut e = steps;
            while e > 0 {
                if e & 1 == 1 {
                    result = matmul(&base, &result, b);
                }
                e >>= 1;
                if e > 0 {
                    base = matmul(&base, &base, b);
                }
            }
            self.cached = Some((steps, result));
        }
        &self.cached.as_ref().expect("cache filled above").1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::density::labels;
    use std::f64::consts::PI;

    fn qubit() -> Vec<String> {
        labels(&["g", "r"])
    }

    /// Textbook RK4 on the density matrix, one step at a time.
    fn naive_rk4(
        rho: &ComplexMatrix,
        h_op: &ComplexMatrix,
        jumps: &[ComplexMatrix],
        duration: f64,
        dt_max: f64,
    ) -> ComplexMatrix {
        let rhs = |r: &ComplexMatrix| {
            let mi = C64::new(0.0, -1.0);
            let mut out = &(h_op * r) - &(r * h_op);
            out = out.scale(mi);
            for l in jumps {
                let ld = l.dagger();
                let k = &ld * l;
                let jump = &(l * r) * &ld;
                let anti = &(&k * r) + &(r * &k);
                out = &(&out + &jump) - &anti.scale(C64::new(0.5, 0.0));
            }
            out
        };
        let n = step_count(duration, dt_max);
        let h = duration / n as f64;
        let mut r = rho.clone();
        for _ in 0..n {
            let k1 = rhs(&r);
            let k2 = rhs(&(&r + &(&k1 * (h / 2.0))));
            let k3 = rhs(&(&r + &(&k2 * (h / 2.0))));
            let k4 = rhs(&(&r + &(&k3 * h)));
            let sum = &(&(&k1 + &(&k2 * 2.0)) + &(&k3 * 2.0)) + &k4;
            r = &r + &(&sum * (h / 6.0));
        }
        r
    }

    fn rabi_h(omega: f64) -> ComplexMatrix {
        ComplexMatrix::from_real_rows(&[&[0.0, omega / 2.0], &[omega / 2.0, 0.0]])
    }

    #[test]
    fn pi_pulse_transfers_population() {
        let omega = 2.0 * PI * 2.0;
        let rho0 = DensityMatrix::basis_state("g", qubit()).unwrap();
        let seg = Segment::new(rabi_h(omega), 0.25).unwrap();
        let traj = evolve(&rho0, &[seg], &[], DEFAULT_DT_MAX).unwrap();
        let p_r = traj.last().unwrap().1.population("r").unwrap();
        // sin^2(Omega t / 2) = 1 at t = pi / Omega
        assert!((p_r - 1.0).abs() < 1e-6, "P_r = {p_r}");
    }

    #[test]
    fn rydberg_decay_is_exponential() {
        let labels3 = labels(&["g", "r", "r'"]);
        let rho0 = DensityMatrix::basis_state("r", labels3).unwrap();
        let jump = LindbladChannel::with_rate(&ComplexMatrix::basis_op(3, 2, 1), 1.0 / 146.0).unwrap();
        let seg = Segment::new(ComplexMatrix::zeros(3), 146.0).unwrap();
        let traj = evolve(&rho0, &[seg], &[jump], DEFAULT_DT_MAX).unwrap();
        let p_r = traj.last().unwrap().1.population("r").unwrap();
        assert!((p_r - (-1.0f64).exp()).abs() < 1e-4);
    }

    #[test]
    fn pure_dephasing_matches_analytic() {
        let gamma = 0.3;
        let plus = [C64::new(0.5f64.sqrt(), 0.0), C64::new(0.5f64.sqrt(), 0.0)];
        let rho0 = DensityMatrix::pure(&plus, qubit()).unwrap();
        let jump = LindbladChannel::with_rate(&ComplexMatrix::basis_op(2, 1, 1), gamma).unwrap();
        let segs = vec![
            Segment::new(ComplexMatrix::zeros(2), 1.3).unwrap(),
            Segment::new(ComplexMatrix::zeros(2), 2.2).unwrap(),
        ];
        let traj = evolve(&rho0, &segs, &[jump], DEFAULT_DT_MAX).unwrap();
        assert_eq!(traj.len(), 3);
        for (t, rho) in &traj {
            let c = rho.coherence("g", "r").unwrap().norm();
            let exact = 0.5 * (-gamma * t / 2.0).exp();
            assert!((c - exact).abs() < 1e-6, "t = {t}: {c} vs {exact}");
        }
    }

    #[test]
    fn block_propagation_matches_naive_rk4() {
        // three-level atom: drive g<->r, scattering and decay channels
        let d = 3;
        let omega = 2.0 * PI * 2.0;
        let mut h = ComplexMatrix::zeros(d);
        h.set(0, 1, C64::new(omega / 2.0, 0.3));
        h.set(1, 0, C64::new(omega / 2.0, -0.3));
        h.set(1, 1, C64::new(-0.27, 0.0));
        let jumps = vec![
            &ComplexMatrix::basis_op(d, 0, 1) * (1.0f64 / 80.0).sqrt(),
            &ComplexMatrix::basis_op(d, 2, 1) * (1.0f64 / 146.0).sqrt(),
            &ComplexMatrix::basis_op(d, 0, 0) * (1.0f64 / 40.0).sqrt(),
        ];
        let rho0 = DensityMatrix::basis_state("g", labels(&["g", "r", "r'"])).unwrap();
        let naive = naive_rk4(rho0.matrix(), &h, &jumps, 0.731, 1e-3);
        let channels: Vec<_> = jumps.iter().cloned().map(LindbladChannel::new).collect();
        let seg = Segment::new(h.clone(), 0.731).unwrap();
        let fast = evolve_final(&rho0, &[seg.clone()], &channels, 1e-3).unwrap();
        assert!(fast.matrix().approx_eq(&naive, 1e-12));

        // free evolution takes the binary-powering path
        let mut diag = ComplexMatrix::zeros(d);
        diag.set(1, 1, C64::new(-0.4, 0.0));
        let wait = Segment::new(diag.clone(), 3.0).unwrap();
        let fast = evolve_final(&rho0, &[seg.clone(), wait], &channels, 1e-3).unwrap();
        let mid = naive_rk4(rho0.matrix(), &h, &jumps, 0.731, 1e-3);
        let naive = naive_rk4(&mid, &diag, &jumps, 3.0, 1e-3);
        assert!(fast.matrix().approx_eq(&naive, 1e-12));
    }

    #[test]
    fn sampling_records_intermediate_points() {
        let rho0 = DensityMatrix::basis_state("g", qubit()).unwrap();
        let seg = Segment::new(rabi_h(2.0 * PI), 1.0).unwrap();
        let opts = EvolveOptions {
            dt_max: 1e-3,
            sample_interval: Some(0.1),
        };
        let traj = evolve_with(&rho0, &[seg], &[], &opts).unwrap();
        assert_eq!(traj.len(), 11);
        for (t, rho) in &traj {
            let exact = (PI * t).sin().powi(2);
            assert!((rho.population("r").unwrap() - exact).abs() < 1e-9);
        }
        assert_eq!(traj.last().unwrap().0, 1.0);
    }

    #[test]
    fn zero_duration_segment_is_identity() {
        let rho0 = DensityMatrix::basis_state("g", qubit()).unwrap();
        let seg = Segment::new(rabi_h(1.0), 0.0).unwrap();
        let traj = evolve(&rho0, &[seg], &[], 1e-3).unwrap();
        assert_eq!(traj.len(), 2);
        assert!(traj[1].1.matrix().approx_eq(rho0.matrix(), 0.0));
    }

    #[test]
    fn error_paths() {
        let rho0 = DensityMatrix::basis_state("g", qubit()).unwrap();
        let seg3 = Segment::new(ComplexMatrix::zeros(3), 1.0).unwrap();
        assert!(matches!(
            evolve(&rho0, &[seg3], &[], 1e-3),
            Err(Error::DimensionMismatch { .. })
        ));
        let mut bad = ComplexMatrix::zeros(2);
        bad.set(0, 1, C64::new(1.0, 0.0));
        assert!(matches!(Segment::new(bad.clone(), 1.0), Err(Error::NotHermitian(_))));
        // bypassing the constructor still gets caught by evolve
        let sneaky = Segment {
            hamiltonian: bad,
            duration: 1.0,
            channels: vec![],
        };
        assert!(matches!(evolve(&rho0, &[sneaky], &[], 1e-3), Err(Error::NotHermitian(_))));
        let seg = Segment::new(ComplexMatrix::zeros(2), 1.0).unwrap();
        assert!(evolve(&rho0, &[seg.clone()], &[], 0.0).is_err());
        let wrong_channel = LindbladChannel::new(ComplexMatrix::zeros(3));
        assert!(evolve(&rho0, &[seg], &[wrong_channel], 1e-3).is_err());
        assert!(Segment::new(ComplexMatrix::zeros(2), -1.0).is_err());
    }

    #[test]
    fn nan_is_detected() {
        let rho0 = DensityMatrix::basis_state("g", qubit()).unwrap();
        let mut h = ComplexMatrix::zeros(2);
        h.set(0, 0, C64::new(f64::NAN, 0.0));
        let seg = Segment {
            hamiltonian: h,
            duration: 0.01,
            channels: vec![],
        };
        let err = evolve(&rho0, &[seg], &[], 1e-3).unwrap_err();
        // NaN fails the Hermiticity comparison first or shows up in the state
        assert!(matches!(err, Error::NotFinite(_) | Error::NotHermitian(_)));
        let blowup = Segment::new(
            ComplexMatrix::zeros(2),
            1.0,
        )
        .unwrap();
        let huge = LindbladChannel::with_rate(&ComplexMatrix::basis_op(2, 1, 0), 1e300).unwrap();
        assert!(matches!(
            evolve(&rho0, &[blowup], &[huge], 1e-3),
            Err(Error::NotFinite(_))
        ));
    }

    #[test]
    fn step_count_rounding() {
        assert_eq!(step_count(0.25, 1e-3), 250);
        assert_eq!(step_count(0.2505, 1e-3), 251);
        assert_eq!(step_count(0.0, 1e-3), 0);
        assert_eq!(step_count(1e-6, 1e-3), 1);
    }
}
