//! Noise and loss models: gate depolarization, imperfect measurement,
//! amplitude damping, dephasing and the two transmissivity laws.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::density::{DensityMatrix, Mat2, C64, ONE};
use crate::error::{Error, Result};
use crate::states::{Pauli, TwoQubitState};

/// Hardware noise figures of a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    /// Success probability of a two-qubit gate.
    pub p_g: f64,
    /// Probability a measurement projects onto the correct outcome.
    pub p_m: f64,
    /// Amplitude damping time in seconds; `f64::INFINITY` disables it.
    pub t1: f64,
    /// Dephasing time in seconds; `f64::INFINITY` disables it.
    pub t2: f64,
}

impl NoiseParams {
    pub fn new(p_g: f64, p_m: f64, t1: f64, t2: f64) -> Result<Self> {
        let np = Self { p_g, p_m, t1, t2 };
        np.validate()?;
        Ok(np)
    }

    /// Perfect gates, perfect measurements and no memory noise.
    pub fn noiseless() -> Self {
        Self {
            p_g: 1.0,
            p_m: 1.0,
            t1: f64::INFINITY,
            t2: f64::INFINITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_g) {
            return Err(Error::config("p_g", format!("must lie in [0, 1], got {}", self.p_g)));
        }
        if !(0.0..=1.0).contains(&self.p_m) {
            return Err(Error::config("p_m", format!("must lie in [0, 1], got {}", self.p_m)));
        }
        if self.t1.is_nan() || self.t1 <= 0.0 {
            return Err(Error::config("t1_s", format!("must be positive, got {}", self.t1)));
        }
        if self.t2.is_nan() || self.t2 <= 0.0 {
            return Err(Error::config("t2_s", format!("must be positive, got {}", self.t2)));
        }
        if self.t2 > 2.0 * self.t1 {
            return Err(Error::config(
                "t2_s",
                format!("must not exceed 2·t1 = {}, got {}", 2.0 * self.t1, self.t2),
            ));
        }
        Ok(())
    }

    /// Decay probability accumulated over `t` seconds.
    pub fn lambda(&self, t: f64) -> f64 {
        damping_lambda(t, self.t1)
    }

    /// Phase-flip probability accumulated over `t` seconds.
    pub fn pz(&self, t: f64) -> f64 {
        dephasing_pz(t, self.t1, self.t2)
    }
}

fn damping_lambda(t: f64, t1: f64) -> f64 {
    if t1.is_infinite() {
        0.0
    } else {
        -(-t / t1).exp_m1()
    }
}

fn dephasing_pz(t: f64, t1: f64, t2: f64) -> f64 {
    let rate = 1.0 / t2 - 0.5 / t1;
    (-0.5 * (-t * rate).exp_m1()).clamp(0.0, 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Gate {
    Cnot,
    Cz,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Alice,
    Bob,
}

/// Identifies one physical qubit: the pair it belongs to and its holder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QubitLabel {
    pub pair: usize,
    pub side: Side,
}

/// Joint state of the pairs currently held in memory.
///
/// Pairs are appended as `A B` qubit couples, so a register built from
/// whole pairs is ordered `A₁ B₁ A₂ B₂ …`. Measurement removes qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRegister {
    rho: DensityMatrix,
    qubits: Vec<QubitLabel>,
}

/// Result of one sampled measurement.
#[derive(Debug, Clone)]
pub struct Measurement {
    pub outcome: i8,
    pub post: PairRegister,
    pub prob: f64,
}

/// Lower bound below which a selected branch counts as impossible.
pub const MIN_BRANCH_PROB: f64 = 1e-15;

/// Unitary taking the +1 eigenstate of `basis` to `|0⟩`.
pub(crate) fn basis_rotation(basis: Pauli) -> Result<Option<Mat2>> {
    let h = C64::new(FRAC_1_SQRT_2, 0.0);
    match basis {
        Pauli::Z => Ok(None),
        Pauli::X => Ok(Some([[h, h], [h, -h]])),
        // H · S†
        Pauli::Y => {
            let i = C64::new(0.0, 1.0);
            Ok(Some([[h, -i * h], [h, i * h]]))
        }
        Pauli::I => Err(Error::domain("cannot measure in the identity basis")),
    }
}

/// `exp(−iθX/2)`
pub(crate) fn rx(theta: f64) -> Mat2 {
    let (s, c) = (theta / 2.0).sin_cos();
    let ms = C64::new(0.0, -s);
    [[C64::new(c, 0.0), ms], [ms, C64::new(c, 0.0)]]
}

impl PairRegister {
    pub fn empty() -> Self {
        Self {
            rho: DensityMatrix::from_data(0, vec![ONE]),
            qubits: Vec::new(),
        }
    }

    pub fn from_pair(label: usize, state: &TwoQubitState) -> Self {
        let mut reg = Self::empty();
        reg.push_pair(label, state);
        reg
    }

    /// Appends a fresh pair at the end of the register.
    pub fn push_pair(&mut self, label: usize, state: &TwoQubitState) {
        debug_assert!(!self.qubits.iter().any(|q| q.pair == label), "duplicate pair label");
        self.rho = self.rho.tensor(state.rho());
        self.qubits.push(QubitLabel {
            pair: label,
            side: Side::Alice,
        });
        self.qubits.push(QubitLabel {
            pair: label,
            side: Side::Bob,
        });
    }

    pub fn rho(&self) -> &DensityMatrix {
        &self.rho
    }

    pub fn qubits(&self) -> &[QubitLabel] {
        &self.qubits
    }

    pub fn n_qubits(&self) -> usize {
        self.qubits.len()
    }

    /// Distinct pair labels in register order.
    pub fn pair_labels(&self) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        for q in &self.qubits {
            if !out.contains(&q.pair) {
                out.push(q.pair);
            }
        }
        out
    }

    pub fn contains_pair(&self, pair: usize) -> bool {
        self.qubits.iter().any(|q| q.pair == pair)
    }

    /// Position of a qubit in the register.
    pub fn position(&self, pair: usize, side: Side) -> Result<usize> {
        self.qubits
            .iter()
            .position(|q| q.pair == pair && q.side == side)
            .ok_or_else(|| Error::domain(format!("qubit {side:?} of pair {pair} is not held")))
    }

    fn check_qubit(&self, q: usize) -> Result<()> {
        if q >= self.qubits.len() {
            return Err(Error::domain(format!(
                "qubit index {q} out of range for a {}-qubit register",
                self.qubits.len()
            )));
        }
        Ok(())
    }

    /// Returns the single remaining pair.
    pub fn into_pair(self) -> Result<TwoQubitState> {
        match self.qubits.as_slice() {
            [a, b] if a.pair == b.pair && a.side == Side::Alice && b.side == Side::Bob => {
                Ok(TwoQubitState::from_trusted(self.rho))
            }
            _ => Err(Error::domain(format!(
                "register holds {} qubits, not exactly one pair",
                self.qubits.len()
            ))),
        }
    }

    /// Noiseless single-qubit unitary.
    pub fn apply_1q(&mut self, q: usize, u: &Mat2) -> Result<()> {
        self.check_qubit(q)?;
        self.rho.apply_1q(q, u);
        Ok(())
    }

    /// Two-qubit gate followed by depolarization of both qubits.
    pub fn apply_gate(&mut self, gate: Gate, i: usize, j: usize, p_g: f64) -> Result<()> {
        self.check_qubit(i)?;
        self.check_qubit(j)?;
        if i == j {
            return Err(Error::domain("gate qubits must differ"));
        }
        if !(0.0..=1.0).contains(&p_g) {
            return Err(Error::domain(format!("p_g must lie in [0, 1], got {p_g}")));
        }
        match gate {
            Gate::Cnot => self.rho.apply_cnot(i, j),
            Gate::Cz => self.rho.apply_cz(i, j),
        }
        self.rho.depolarize_pair(i, j, p_g);
        Ok(())
    }

    /// Stores every listed qubit for `dt` seconds.
    pub fn decohere(&mut self, qubits: &[usize], dt: f64, np: &NoiseParams) -> Result<()> {
        if dt.is_nan() || dt < 0.0 {
            return Err(Error::domain(format!("negative storage time {dt}")));
        }
        if dt == 0.0 {
            return Ok(());
        }
        let (lambda, pz) = (np.lambda(dt), np.pz(dt));
        for &q in qubits {
            self.check_qubit(q)?;
            self.rho.amplitude_damp(q, lambda);
            self.rho.dephase(q, pz);
        }
        Ok(())
    }

    /// Stores every qubit of the register for `dt` seconds.
    pub fn decohere_all(&mut self, dt: f64, np: &NoiseParams) -> Result<()> {
        let all: Vec<usize> = (0..self.n_qubits()).collect();
        self.decohere(&all, dt, np)
    }

    /// Probability that a noisy measurement of qubit `q` in `basis` reports +1.
    pub fn outcome_prob_plus(&self, q: usize, basis: Pauli, p_m: f64) -> Result<f64> {
        self.check_qubit(q)?;
        let mut rho = self.rho.clone();
        if let Some(u) = basis_rotation(basis)? {
            rho.apply_1q(q, &u);
        }
        let tr = rho.trace().re;
        let p0 = rho.population(q, 0) / tr;
        Ok(p_m * p0 + (1.0 - p_m) * (1.0 - p0))
    }

    /// Samples a noisy single-qubit measurement and removes the qubit.
    pub fn measure(&self, q: usize, basis: Pauli, p_m: f64, u: f64) -> Result<Measurement> {
        self.check_qubit(q)?;
        if !(0.0..=1.0).contains(&p_m) {
            return Err(Error::domain(format!("p_m must lie in [0, 1], got {p_m}")));
        }
        let mut rho = self.rho.clone();
        if let Some(rot) = basis_rotation(basis)? {
            rho.apply_1q(q, &rot);
        }
        let tr = rho.trace().re;
        let p0 = rho.population(q, 0) / tr;
        let p_plus = p_m * p0 + (1.0 - p_m) * (1.0 - p0);
        let (outcome, prob, w) = if u < p_plus {
            (1, p_plus, [p_m, 1.0 - p_m])
        } else {
            (-1, 1.0 - p_plus, [1.0 - p_m, p_m])
        };
        if prob < MIN_BRANCH_PROB {
            return Err(Error::ImpossibleOutcome(prob));
        }
        let mut post = rho.trace_out_weighted(q, w);
        post.scale(1.0 / (prob * tr));
        let mut qubits = self.qubits.clone();
        qubits.remove(q);
        Ok(Measurement {
            outcome,
            post: PairRegister { rho: post, qubits },
            prob,
        })
    }

    /// Measures both qubits of `pair` in `basis` and keeps the sum of all
    /// branches whose reported outcomes satisfy `keep_equal`, unnormalized.
    /// Returns the keep probability.
    pub(crate) fn measure_pair_coarse(&mut self, pair: usize, basis: Pauli, keep_equal: bool, p_m: f64) -> Result<f64> {
        let a = self.position(pair, Side::Alice)?;
        let b = self.position(pair, Side::Bob)?;
        if let Some(rot) = basis_rotation(basis)? {
            self.rho.apply_1q(a, &rot);
            self.rho.apply_1q(b, &rot);
        }
        let same = p_m * p_m + (1.0 - p_m) * (1.0 - p_m);
        let diff = 2.0 * p_m * (1.0 - p_m);
        let (s, d) = if keep_equal { (same, diff) } else { (diff, same) };
        let w = [[s, d], [d, s]];
        let tr = self.rho.trace().re;
        self.rho = self.rho.trace_out_pair_weighted(a, b, w);
        self.qubits.retain(|q| q.pair != pair);
        let kept = self.rho.trace().re;
        Ok(kept / tr)
    }

    pub(crate) fn normalize(&mut self) {
        let tr = self.rho.trace().re;
        if tr > 0.0 {
            self.rho.scale(1.0 / tr);
        }
    }

    /// Trace of the (possibly unnormalized) register state.
    pub fn trace(&self) -> f64 {
        self.rho.trace().re
    }

    pub fn is_valid(&self) -> bool {
        self.rho.is_valid(crate::states::STATE_TOL)
    }
}

/// `p_g·UρU† + (1−p_g)·Tr_ij(ρ)⊗I/4` on qubits `(i, j)`.
pub fn depolarize_gate(mut reg: PairRegister, gate: Gate, qubits: (usize, usize), p_g: f64) -> Result<PairRegister> {
    reg.apply_gate(gate, qubits.0, qubits.1, p_g)?;
    Ok(reg)
}

/// Imperfect projective measurement in `basis`; the outcome is +1 when
/// `u` falls below its probability.
pub fn noisy_measure(reg: &PairRegister, qubit: usize, basis: Pauli, p_m: f64, u: f64) -> Result<Measurement> {
    reg.measure(qubit, basis, p_m, u)
}

pub fn amplitude_damp(mut reg: PairRegister, qubit: usize, t: f64, t1: f64) -> Result<PairRegister> {
    if t.is_nan() || t < 0.0 {
        return Err(Error::domain(format!("negative storage time {t}")));
    }
    reg.check_qubit(qubit)?;
    reg.rho.amplitude_damp(qubit, damping_lambda(t, t1));
    Ok(reg)
}

pub fn dephase(mut reg: PairRegister, qubit: usize, t: f64, t1: f64, t2: f64) -> Result<PairRegister> {
    if t.is_nan() || t < 0.0 {
        return Err(Error::domain(format!("negative storage time {t}")));
    }
    if t2 > 2.0 * t1 {
        return Err(Error::domain(format!("t2 = {t2} exceeds 2·t1 = {}", 2.0 * t1)));
    }
    reg.check_qubit(qubit)?;
    reg.rho.dephase(qubit, dephasing_pz(t, t1, t2));
    Ok(reg)
}

/// Amplitude damping then dephasing for `dt` on each listed qubit.
pub fn decohere(mut reg: PairRegister, qubits: &[usize], dt: f64, np: &NoiseParams) -> Result<PairRegister> {
    reg.decohere(qubits, dt, np)?;
    Ok(reg)
}

/// Decoheres both qubits of a lone pair.
pub fn decohere_pair(state: &TwoQubitState, dt: f64, np: &NoiseParams) -> Result<TwoQubitState> {
    let mut rho = state.rho().clone();
    if dt < 0.0 {
        return Err(Error::domain(format!("negative storage time {dt}")));
    }
    if dt > 0.0 {
        let (lambda, pz) = (np.lambda(dt), np.pz(dt));
        for q in 0..2 {
            rho.amplitude_damp(q, lambda);
            rho.dephase(q, pz);
        }
    }
    Ok(TwoQubitState::from_trusted(rho))
}

/// `10^(−α·l/10)`
pub fn fiber_transmissivity(l_km: f64, alpha_f: f64) -> f64 {
    10f64.powf(-alpha_f * l_km / 10.0)
}

/// Aperture diameters and wavelength of a satellite downlink, in metres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SatelliteHardware {
    pub d_s: f64,
    pub d_g: f64,
    pub lambda: f64,
}

impl Default for SatelliteHardware {
    fn default() -> Self {
        Self {
            d_s: 0.2,
            d_g: 2.0,
            lambda: 737e-9,
        }
    }
}

/// Diffraction-limited free-space term, clamped to 1.
pub fn free_space_transmissivity(l_o_km: f64, hw: &SatelliteHardware) -> f64 {
    let area = |d: f64| PI * d * d / 4.0;
    let l_m = l_o_km * 1e3;
    (area(hw.d_s) * area(hw.d_g) / (hw.lambda * l_m).powi(2)).min(1.0)
}

/// Free-space term times atmospheric attenuation `exp(−α_a·l_a)`.
pub fn satellite_transmissivity(l_o_km: f64, l_a_km: f64, hw: &SatelliteHardware, alpha_a: f64) -> f64 {
    free_space_transmissivity(l_o_km, hw) * (-alpha_a * l_a_km).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::ZERO;
    use crate::states::{fidelity, make_werner, BellCoeffs};
    use proptest::prelude::*;

    fn qubit_state(amps: [C64; 2]) -> PairRegister {
        PairRegister {
            rho: DensityMatrix::from_pure(&amps),
            qubits: vec![QubitLabel {
                pair: 0,
                side: Side::Alice,
            }],
        }
    }

    #[test]
    fn unit_gate_fidelity_on_werner_one() {
        let reg = PairRegister::from_pair(0, &make_werner(1.0).unwrap());
        // CNOT then CNOT is the identity; only the noise survives.
        let reg = depolarize_gate(reg, Gate::Cnot, (0, 1), 1.0).unwrap();
        let reg = depolarize_gate(reg, Gate::Cnot, (0, 1), 0.99).unwrap();
        let f = fidelity(&reg.into_pair().unwrap());
        assert!((f - 0.9925).abs() < 1e-12);
    }

    #[test]
    fn full_depolarization() {
        let reg = PairRegister::from_pair(0, &make_werner(0.9).unwrap());
        let reg = depolarize_gate(reg, Gate::Cz, (0, 1), 0.0).unwrap();
        assert!(reg.rho().max_abs_diff(&DensityMatrix::maximally_mixed(2)) < 1e-15);
    }

    #[test]
    fn gate_index_errors() {
        let reg = PairRegister::from_pair(0, &make_werner(0.9).unwrap());
        assert!(depolarize_gate(reg.clone(), Gate::Cnot, (0, 0), 1.0).is_err());
        assert!(depolarize_gate(reg, Gate::Cnot, (0, 2), 1.0).is_err());
    }

    #[test]
    fn measure_z_on_zero() {
        let reg = qubit_state([ONE, ZERO]);
        let m = noisy_measure(&reg, 0, Pauli::Z, 1.0, 0.999).unwrap();
        assert_eq!(m.outcome, 1);
        assert!((m.prob - 1.0).abs() < 1e-15);
        assert!(matches!(
            noisy_measure(&reg, 0, Pauli::Z, 1.0, 1.0),
            Err(Error::ImpossibleOutcome(_))
        ));
        let m = noisy_measure(&reg, 0, Pauli::Z, 0.99, 0.5).unwrap();
        assert!((m.prob - 0.99).abs() < 1e-15);
        let m = noisy_measure(&reg, 0, Pauli::Z, 0.99, 0.995).unwrap();
        assert_eq!(m.outcome, -1);
        assert!((m.prob - 0.01).abs() < 1e-15);
    }

    #[test]
    fn measure_in_eigenbases() {
        let h = C64::new(FRAC_1_SQRT_2, 0.0);
        let plus = qubit_state([h, h]);
        let m = noisy_measure(&plus, 0, Pauli::X, 1.0, 0.999999).unwrap();
        assert_eq!(m.outcome, 1);
        assert!((m.prob - 1.0).abs() < 1e-12);
        let plus_i = qubit_state([h, C64::new(0.0, FRAC_1_SQRT_2)]);
        let m = noisy_measure(&plus_i, 0, Pauli::Y, 1.0, 0.999999).unwrap();
        assert_eq!(m.outcome, 1);
        let minus_i = qubit_state([h, C64::new(0.0, -FRAC_1_SQRT_2)]);
        assert!(minus_i.outcome_prob_plus(0, Pauli::Y, 1.0).unwrap() < 1e-12);
    }

    #[test]
    fn measured_qubit_leaves_partner_collapsed() {
        let reg = PairRegister::from_pair(0, &TwoQubitState::phi_plus());
        let m = noisy_measure(&reg, 0, Pauli::Z, 1.0, 0.7).unwrap();
        assert_eq!(m.outcome, -1);
        assert_eq!(
            m.post.qubits(),
            &[QubitLabel {
                pair: 0,
                side: Side::Bob
            }]
        );
        assert!((m.post.rho().population(0, 1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn amplitude_damping_examples() {
        let one = qubit_state([ZERO, ONE]);
        let same = amplitude_damp(one.clone(), 0, 0.0, 2.0).unwrap();
        assert_eq!(same, one);
        let r = amplitude_damp(one.clone(), 0, 2.0, 2.0).unwrap();
        assert!((r.rho().population(0, 1) - (-1.0f64).exp()).abs() < 1e-15);
        let r = amplitude_damp(one.clone(), 0, 1e6, 1.0).unwrap();
        assert!(r.rho().population(0, 0) > 1.0 - 1e-15);
        assert!(amplitude_damp(one, 0, -1.0, 1.0).is_err());
    }

    #[test]
    fn dephasing_examples() {
        let phi = PairRegister::from_pair(0, &TwoQubitState::phi_plus());
        let r = dephase(phi.clone(), 0, 0.0, f64::INFINITY, 1.0).unwrap();
        assert_eq!(r, phi);
        let r = dephase(phi.clone(), 0, 0.5, f64::INFINITY, 0.5).unwrap();
        let f = fidelity(&r.into_pair().unwrap());
        assert!((f - 0.683_939_720_585_721).abs() < 1e-12);
        let mut full = phi.clone();
        full.rho.dephase(0, 0.5);
        assert!(full.rho().get(0, 3).norm() < 1e-15);
        assert!(dephase(phi.clone(), 0, -1.0, 1.0, 1.0).is_err());
        assert!(dephase(phi, 0, 1.0, 1.0, 3.0).is_err());
    }

    #[test]
    fn decohere_examples() {
        let np = NoiseParams::new(1.0, 1.0, 360.0, 1e-3).unwrap();
        let w = make_werner(0.9).unwrap();
        let reg = PairRegister::from_pair(0, &w);
        assert_eq!(decohere(reg.clone(), &[0, 1], 0.0, &np).unwrap(), reg);
        let both = decohere(reg.clone(), &[0, 1], 1e-3, &np).unwrap();
        let one = decohere(reg, &[0], 1e-3, &np).unwrap();
        let fb = fidelity(&both.into_pair().unwrap());
        let fo = fidelity(&one.into_pair().unwrap());
        assert!(fb < 0.9);
        assert!(fb <= fo);
        // Bell-diagonal closed form for pure dephasing on both qubits.
        let np_inf = NoiseParams::new(1.0, 1.0, f64::INFINITY, 1e-3).unwrap();
        let pz = np_inf.pz(1e-3);
        let s = decohere_pair(&w, 1e-3, &np_inf).unwrap();
        let flip = 2.0 * pz * (1.0 - pz);
        let want = 0.9 * (1.0 - flip) + (1.0 / 30.0) * flip;
        assert!((fidelity(&s) - want).abs() < 1e-12);
    }

    #[test]
    fn noise_param_validation() {
        assert!(NoiseParams::new(1.1, 1.0, 1.0, 1.0).is_err());
        assert!(NoiseParams::new(1.0, -0.1, 1.0, 1.0).is_err());
        assert!(NoiseParams::new(1.0, 1.0, 0.0, 1.0).is_err());
        assert!(NoiseParams::new(1.0, 1.0, 1.0, 2.5).is_err());
        assert!(NoiseParams::new(1.0, 1.0, f64::INFINITY, f64::INFINITY).is_ok());
    }

    #[test]
    fn fiber_examples() {
        assert_eq!(fiber_transmissivity(0.0, 0.2), 1.0);
        assert!((fiber_transmissivity(20.0, 0.2) - 0.398_107_170_553_497).abs() < 1e-12);
        let half = fiber_transmissivity(10.0, 0.2);
        assert!((half - 0.630_957_344_480_193).abs() < 1e-12);
        assert!((half * half - fiber_transmissivity(20.0, 0.2)).abs() < 1e-12);
    }

    #[test]
    fn satellite_examples() {
        let hw = SatelliteHardware::default();
        let l_o = (400.0f64 * 400.0 + 250.0 * 250.0).sqrt();
        assert!((free_space_transmissivity(l_o, &hw) - 0.81665).abs() < 1e-4);
        assert_eq!(satellite_transmissivity(1.0, 0.0, &hw, 0.028125), 1.0);
        let eta_a = (-0.028125f64 * 5.0).exp();
        assert!((satellite_transmissivity(1.0, 5.0, &hw, 0.028125) - eta_a).abs() < 1e-15);
    }

    fn random_register() -> impl Strategy<Value = PairRegister> {
        (
            prop::collection::vec((0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64), 2),
            0.25..1.0f64,
        )
            .prop_map(|(ws, f)| {
                let mut reg = PairRegister::empty();
                let w = ws[0];
                let s = w.0 + w.1 + w.2 + 1.0;
                let c = BellCoeffs::new(1.0 / s, w.0 / s, w.1 / s, w.2 / s);
                reg.push_pair(0, &TwoQubitState::from_bell(c).unwrap());
                reg.push_pair(1, &make_werner(f).unwrap());
                // Entangle the pairs so the register is not Bell-diagonal.
                reg.rho.apply_1q(0, &rx(PI / 3.0 * ws[1].0));
                reg.rho.apply_cnot(0, 2);
                reg.rho.apply_1q(3, &rx(ws[1].1));
                reg
            })
    }

    proptest! {
        #[test]
        fn channels_are_cptp(
            reg in random_register(),
            p in 0.0..=1.0f64, t in 0.0..5.0f64,
            q in 0usize..4, basis in 1usize..4,
        ) {
            let tol = 1e-10;
            let g = depolarize_gate(reg.clone(), Gate::Cz, (q, (q + 1) % 4), p).unwrap();
            prop_assert!((g.trace() - 1.0).abs() < tol);
            prop_assert!(g.rho().min_eigenvalue() > -1e-9);
            let a = amplitude_damp(reg.clone(), q, t, 1.5).unwrap();
            prop_assert!((a.trace() - 1.0).abs() < tol);
            prop_assert!(a.rho().min_eigenvalue() > -1e-9);
            let z = dephase(reg.clone(), q, t, 2.0, 1.0).unwrap();
            prop_assert!((z.trace() - 1.0).abs() < tol);
            prop_assert!(z.rho().min_eigenvalue() > -1e-9);
            let basis = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z][basis];
            let plus = reg.outcome_prob_plus(q, basis, p).unwrap();
            let m_plus = reg.measure(q, basis, p, 0.0);
            let m_minus = reg.measure(q, basis, p, 1.0);
            let mut total = 0.0;
            for m in [m_plus, m_minus].into_iter().flatten() {
                prop_assert!((m.post.trace() - 1.0).abs() < tol);
                prop_assert!(m.post.rho().min_eigenvalue() > -1e-9);
                total += m.prob;
            }
            if plus > MIN_BRANCH_PROB && 1.0 - plus > MIN_BRANCH_PROB {
                prop_assert!((total - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn dephasing_strictly_lowers_werner_fidelity(
            f in 0.51..1.0f64, t1 in 0.0..2.0f64, dt in 1e-3..2.0f64,
        ) {
            let np = NoiseParams::new(1.0, 1.0, f64::INFINITY, 1.0).unwrap();
            let w = make_werner(f).unwrap();
            let a = fidelity(&decohere_pair(&w, t1, &np).unwrap());
            let b = fidelity(&decohere_pair(&w, t1 + dt, &np).unwrap());
            prop_assert!(b < a);
        }

        #[test]
        fn fiber_is_multiplicative(l1 in 0.0..200.0f64, l2 in 0.0..200.0f64, a in 0.0..1.0f64) {
            let lhs = fiber_transmissivity(l1 + l2, a);
            let rhs = fiber_transmissivity(l1, a) * fiber_transmissivity(l2, a);
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn unit_gate_is_unitary(reg in random_register(), c in 0usize..4, dt in 1usize..4) {
            let t = (c + dt) % 4;
            let g = depolarize_gate(reg.clone(), Gate::Cnot, (c, t), 1.0).unwrap();
            let mut want = reg.rho().clone();
            want.apply_cnot(c, t);
            prop_assert!(g.rho().max_abs_diff(&want) < 1e-12);
        }
    }
}
