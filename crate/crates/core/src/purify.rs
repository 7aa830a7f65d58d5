//! DEJMPS pumping, the purification-circuit language, and the closed-form
//! Bell-diagonal recurrence used to check them.
//!
//! # Circuit files
//!
//! One statement per line, `#` starts a comment:
//!
//! ```text
//! PAIRS 2                       # pairs consumed, kept pair included
//! MEMORIES 2                    # optional, defaults to the smallest feasible count
//! ROTATE 0 X                    # Alice applies R(+π/2), Bob its conjugate
//! GATE CNOT 0 1                 # bilateral gate, control pair then target pair
//! MEASURE 1 BASIS Z KEEP equal  # both halves of pair 1, keep on coincidence
//! ```
//!
//! Pairs are numbered in arrival order. A node loads the next pair whenever
//! one of its memories is free, so a circuit is only accepted if every
//! instruction touches pairs that can already be resident.

use std::fmt;
use std::path::Path;

use rand::Rng;

use crate::channels::{rx, Gate, NoiseParams, PairRegister, Side};
use crate::density::{Mat2, C64};
use crate::error::{Error, Result};
use crate::states::{BellCoeffs, Pauli, TwoQubitState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Keep {
    Equal,
    Unequal,
}

impl Keep {
    pub fn holds(self, a: i8, b: i8) -> bool {
        match self {
            Keep::Equal => a == b,
            Keep::Unequal => a != b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Instruction {
    /// Noiseless local rotation by π/2 about `axis`: Alice applies `R`,
    /// Bob applies `R*`, which leaves `|φ+⟩` invariant.
    Rotate {
        pair: usize,
        axis: Pauli,
    },
    Gate {
        kind: Gate,
        control: usize,
        target: usize,
    },
    Measure {
        pair: usize,
        basis: Pauli,
        keep: Keep,
    },
}

impl Instruction {
    /// Pairs touched by the instruction.
    pub fn pairs(&self) -> (usize, Option<usize>) {
        match *self {
            Instruction::Rotate { pair, .. } | Instruction::Measure { pair, .. } => (pair, None),
            Instruction::Gate { control, target, .. } => (control, Some(target)),
        }
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Instruction::Rotate { pair, axis } => write!(f, "ROTATE {pair} {axis}"),
            Instruction::Gate { kind, control, target } => {
                let k = match kind {
                    Gate::Cnot => "CNOT",
                    Gate::Cz => "CZ",
                };
                write!(f, "GATE {k} {control} {target}")
            }
            Instruction::Measure { pair, basis, keep } => {
                let k = match keep {
                    Keep::Equal => "equal",
                    Keep::Unequal => "unequal",
                };
                write!(f, "MEASURE {pair} BASIS {basis} KEEP {k}")
            }
        }
    }
}

/// Rotation pair `(Alice, Bob)` for a `ROTATE` instruction.
pub(crate) fn bilateral_rotation(axis: Pauli) -> Result<(Mat2, Mat2)> {
    let (s, c) = std::f64::consts::FRAC_PI_4.sin_cos();
    let re = |x: f64| C64::new(x, 0.0);
    let alice = match axis {
        Pauli::X => rx(std::f64::consts::FRAC_PI_2),
        Pauli::Y => [[re(c), re(-s)], [re(s), re(c)]],
        Pauli::Z => {
            let ph = C64::from_polar(1.0, std::f64::consts::FRAC_PI_4);
            [[ph.conj(), re(0.0)], [re(0.0), ph]]
        }
        Pauli::I => return Err(Error::domain("rotation axis must be X, Y or Z")),
    };
    let bob = alice.map(|row| row.map(|z| z.conj()));
    Ok((alice, bob))
}

/// A validated purification circuit.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PurificationCircuit {
    num_pairs: usize,
    memories: usize,
    instructions: Vec<Instruction>,
}

impl PurificationCircuit {
    /// Builds and validates a circuit. `memories = None` picks the smallest
    /// memory count that can run it.
    pub fn new(num_pairs: usize, memories: Option<usize>, instructions: Vec<Instruction>) -> Result<Self> {
        let mut c = Self {
            num_pairs,
            memories: memories.unwrap_or(num_pairs),
            instructions,
        };
        c.check_structure()?;
        match memories {
            Some(m) => {
                if m == 0 {
                    return Err(Error::Circuit("MEMORIES must be at least 1".into()));
                }
                c.check_memory(m)?;
            }
            None => {
                c.memories = (1..=num_pairs)
                    .find(|&m| c.check_memory(m).is_ok())
                    .expect("num_pairs memories always suffice");
            }
        }
        Ok(c)
    }

    /// Pumping with `n_steps` DEJMPS rounds on two memories.
    pub fn pumping(n_steps: usize) -> Self {
        let mut ins = Vec::with_capacity(4 * n_steps);
        for s in 1..=n_steps {
            ins.push(Instruction::Rotate {
                pair: 0,
                axis: Pauli::X,
            });
            ins.push(Instruction::Rotate {
                pair: s,
                axis: Pauli::X,
            });
            ins.push(Instruction::Gate {
                kind: Gate::Cnot,
                control: 0,
                target: s,
            });
            ins.push(Instruction::Measure {
                pair: s,
                basis: Pauli::Z,
                keep: Keep::Equal,
            });
        }
        let memories = if n_steps == 0 { 1 } else { 2 };
        Self::new(n_steps + 1, Some(memories), ins).expect("pumping circuits are valid")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut num_pairs: Option<usize> = None;
        let mut memories: Option<usize> = None;
        let mut ins = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let perr = |msg: String| Error::Parse { line, msg };
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let tok: Vec<&str> = body.split_whitespace().collect();
            let kw = tok[0].to_ascii_uppercase();
            let index = |s: &str| -> Result<usize> {
                let v: usize = s
                    .parse()
                    .map_err(|_| perr(format!("expected a non-negative integer, got `{s}`")))?;
                match num_pairs {
                    Some(n) if v >= n => Err(perr(format!("pair index {v} out of range (PAIRS {n})"))),
                    _ => Ok(v),
                }
            };
            let pauli = |s: &str| -> Result<Pauli> {
                match s.to_ascii_uppercase().as_str() {
                    "X" => Ok(Pauli::X),
                    "Y" => Ok(Pauli::Y),
                    "Z" => Ok(Pauli::Z),
                    _ => Err(perr(format!("expected X, Y or Z, got `{s}`"))),
                }
            };
            let arity = |n: usize| -> Result<()> {
                if tok.len() != n {
                    Err(perr(format!(
                        "`{kw}` takes {} argument(s), got {}",
                        n - 1,
                        tok.len() - 1
                    )))
                } else {
                    Ok(())
                }
            };
            match kw.as_str() {
                "PAIRS" | "MEMORIES" => {
                    arity(2)?;
                    if !ins.is_empty() {
                        return Err(perr(format!("`{kw}` must precede all instructions")));
                    }
                    let v: usize = tok[1]
                        .parse()
                        .map_err(|_| perr(format!("expected a positive integer, got `{}`", tok[1])))?;
                    if v == 0 {
                        return Err(perr(format!("`{kw}` must be positive")));
                    }
                    let slot = if kw == "PAIRS" { &mut num_pairs } else { &mut memories };
                    if slot.replace(v).is_some() {
                        return Err(perr(format!("duplicate `{kw}`")));
                    }
                }
                _ if num_pairs.is_none() => {
                    return Err(perr("`PAIRS n` must come first".into()));
                }
                "ROTATE" => {
                    if tok.len() != 2 && tok.len() != 3 {
                        return Err(perr("usage: ROTATE <pair> [X|Y|Z]".into()));
                    }
                    let axis = if tok.len() == 3 { pauli(tok[2])? } else { Pauli::X };
                    ins.push(Instruction::Rotate {
                        pair: index(tok[1])?,
                        axis,
                    });
                }
                "GATE" => {
                    arity(4)?;
                    let kind = match tok[1].to_ascii_uppercase().as_str() {
                        "CNOT" => Gate::Cnot,
                        "CZ" => Gate::Cz,
                        other => return Err(perr(format!("unknown gate `{other}`"))),
                    };
                    let (control, target) = (index(tok[2])?, index(tok[3])?);
                    if control == target {
                        return Err(perr("gate control and target must differ".into()));
                    }
                    ins.push(Instruction::Gate { kind, control, target });
                }
                "MEASURE" => {
                    arity(6)?;
                    if !tok[2].eq_ignore_ascii_case("BASIS") || !tok[4].eq_ignore_ascii_case("KEEP") {
                        return Err(perr("usage: MEASURE <pair> BASIS <X|Y|Z> KEEP <equal|unequal>".into()));
                    }
                    let keep = match tok[5].to_ascii_lowercase().as_str() {
                        "equal" => Keep::Equal,
                        "unequal" => Keep::Unequal,
                        other => return Err(perr(format!("unknown keep condition `{other}`"))),
                    };
                    ins.push(Instruction::Measure {
                        pair: index(tok[1])?,
                        basis: pauli(tok[3])?,
                        keep,
                    });
                }
                other => return Err(perr(format!("unknown statement `{other}`"))),
            }
        }
        let n = num_pairs.ok_or(Error::Parse {
            line: 0,
            msg: "missing `PAIRS n`".into(),
        })?;
        Self::new(n, memories, ins)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::parse(&text)
    }

    pub fn num_pairs(&self) -> usize {
        self.num_pairs
    }

    pub fn memories(&self) -> usize {
        self.memories
    }

    pub fn instructions(&self) -> &[Instruction] {
        &self.instructions
    }

    /// The pair that is never measured.
    pub fn kept_pair(&self) -> usize {
        let measured = self.measured_pairs();
        (0..self.num_pairs).find(|p| !measured.contains(p)).expect("validated")
    }

    pub fn n_measurements(&self) -> usize {
        self.measured_pairs().len()
    }

    fn measured_pairs(&self) -> Vec<usize> {
        self.instructions
            .iter()
            .filter_map(|i| match i {
                Instruction::Measure { pair, .. } => Some(*pair),
                _ => None,
            })
            .collect()
    }

    fn check_structure(&self) -> Result<()> {
        if self.num_pairs == 0 {
            return Err(Error::Circuit("a circuit needs at least one pair".into()));
        }
        let mut measured = vec![false; self.num_pairs];
        for (k, ins) in self.instructions.iter().enumerate() {
            let (a, b) = ins.pairs();
            for p in std::iter::once(a).chain(b) {
                if p >= self.num_pairs {
                    return Err(Error::Circuit(format!(
                        "instruction {} (`{ins}`) uses pair {p} but only {} pairs exist",
                        k + 1,
                        self.num_pairs
                    )));
                }
                if measured[p] {
                    return Err(Error::Circuit(format!(
                        "instruction {} (`{ins}`) uses pair {p} after it was measured",
                        k + 1
                    )));
                }
            }
            match *ins {
                Instruction::Gate { control, target, .. } if control == target => {
                    return Err(Error::Circuit(format!("instruction {} acts on one pair twice", k + 1)));
                }
                Instruction::Measure {
                    pair, basis: Pauli::I, ..
                } => {
                    return Err(Error::Circuit(format!("pair {pair} measured in the identity basis")));
                }
                Instruction::Rotate { axis: Pauli::I, .. } => {
                    return Err(Error::Circuit(format!("instruction {} has no rotation axis", k + 1)));
                }
                Instruction::Measure { pair, .. } => measured[pair] = true,
                _ => {}
            }
        }
        let survivors = measured.iter().filter(|m| !**m).count();
        if survivors != 1 {
            return Err(Error::Circuit(format!(
                "exactly one pair must stay unmeasured, found {survivors}"
            )));
        }
        Ok(())
    }

    /// Checks that eager loading into `m` memories never stalls.
    fn check_memory(&self, m: usize) -> Result<()> {
        let mut done = 0;
        for (k, ins) in self.instructions.iter().enumerate() {
            let loaded = (m + done).min(self.num_pairs);
            let (a, b) = ins.pairs();
            if let Some(p) = std::iter::once(a).chain(b).find(|&p| p >= loaded) {
                return Err(Error::Circuit(format!(
                    "instruction {} (`{ins}`) needs pair {p}, but only pairs below {loaded} fit in {m} memories",
                    k + 1
                )));
            }
            if matches!(ins, Instruction::Measure { .. }) {
                done += 1;
            }
        }
        Ok(())
    }

    /// Instructions ordered by the arrival index they must wait for:
    /// `load_bound(k)` is the number of pairs that must have arrived before
    /// instruction `k` can run.
    pub fn load_bound(&self, k: usize) -> usize {
        let (a, b) = self.instructions[k].pairs();
        a.max(b.unwrap_or(0)) + 1
    }
}

impl fmt::Display for PurificationCircuit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "PAIRS {}", self.num_pairs)?;
        writeln!(f, "MEMORIES {}", self.memories)?;
        for ins in &self.instructions {
            writeln!(f, "{ins}")?;
        }
        Ok(())
    }
}

/// Result of a sampled purification run.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub success: bool,
    /// Outcomes of the last measured pair.
    pub alice_outcome: i8,
    pub bob_outcome: i8,
    /// All `(alice, bob)` outcomes in execution order.
    pub outcomes: Vec<(i8, i8)>,
    pub post_state: TwoQubitState,
    /// Probability of the sampled outcome sequence.
    pub branch_prob: f64,
}

fn measure_pair_sampled<R: Rng + ?Sized>(
    reg: PairRegister,
    pair: usize,
    basis: Pauli,
    p_m: f64,
    rng: &mut R,
) -> Result<(PairRegister, i8, i8, f64)> {
    let qa = reg.position(pair, Side::Alice)?;
    let ma = reg.measure(qa, basis, p_m, rng.gen::<f64>())?;
    let qb = ma.post.position(pair, Side::Bob)?;
    let mb = ma.post.measure(qb, basis, p_m, rng.gen::<f64>())?;
    Ok((mb.post, ma.outcome, mb.outcome, ma.prob * mb.prob))
}

/// One DEJMPS round: `main` is kept, `sac` is consumed.
pub fn dejmps_step<R: Rng + ?Sized>(
    main: &TwoQubitState,
    sac: &TwoQubitState,
    np: &NoiseParams,
    rng: &mut R,
) -> Result<StepOutcome> {
    let mut reg = PairRegister::from_pair(0, main);
    reg.push_pair(1, sac);
    let (ra, rb) = bilateral_rotation(Pauli::X)?;
    for q in [0, 2] {
        reg.apply_1q(q, &ra)?;
        reg.apply_1q(q + 1, &rb)?;
    }
    reg.apply_gate(Gate::Cnot, 0, 2, np.p_g)?;
    reg.apply_gate(Gate::Cnot, 1, 3, np.p_g)?;
    let (reg, a, b, prob) = measure_pair_sampled(reg, 1, Pauli::Z, np.p_m, rng)?;
    Ok(StepOutcome {
        success: a == b,
        alice_outcome: a,
        bob_outcome: b,
        outcomes: vec![(a, b)],
        post_state: reg.into_pair()?,
        branch_prob: prob,
    })
}

fn apply_unitary(reg: &mut PairRegister, ins: &Instruction, p_g: f64) -> Result<()> {
    match *ins {
        Instruction::Rotate { pair, axis } => {
            let (ra, rb) = bilateral_rotation(axis)?;
            reg.apply_1q(reg.position(pair, Side::Alice)?, &ra)?;
            reg.apply_1q(reg.position(pair, Side::Bob)?, &rb)?;
        }
        Instruction::Gate { kind, control, target } => {
            for side in [Side::Alice, Side::Bob] {
                let c = reg.position(control, side)?;
                let t = reg.position(target, side)?;
                reg.apply_gate(kind, c, t, p_g)?;
            }
        }
        Instruction::Measure { .. } => unreachable!("measurements are handled by the caller"),
    }
    Ok(())
}

/// Runs a circuit with sampled outcomes. `pair_supplier(k)` yields pair `k`
/// the first time an instruction needs it.
pub fn run_circuit<R, F>(
    circ: &PurificationCircuit,
    mut pair_supplier: F,
    np: &NoiseParams,
    rng: &mut R,
) -> Result<StepOutcome>
where
    R: Rng + ?Sized,
    F: FnMut(usize) -> TwoQubitState,
{
    let mut reg = PairRegister::empty();
    let mut loaded = vec![false; circ.num_pairs];
    let mut load = |reg: &mut PairRegister, p: usize| {
        if !loaded[p] {
            loaded[p] = true;
            reg.push_pair(p, &pair_supplier(p));
        }
    };
    let mut outcomes = Vec::new();
    let mut success = true;
    let mut branch_prob = 1.0;
    for ins in circ.instructions() {
        let (a, b) = ins.pairs();
        load(&mut reg, a);
        if let Some(b) = b {
            load(&mut reg, b);
        }
        match *ins {
            Instruction::Measure { pair, basis, keep } => {
                let (next, oa, ob, p) = measure_pair_sampled(reg, pair, basis, np.p_m, rng)?;
                reg = next;
                success &= keep.holds(oa, ob);
                branch_prob *= p;
                outcomes.push((oa, ob));
            }
            _ => apply_unitary(&mut reg, ins, np.p_g)?,
        }
    }
    load(&mut reg, circ.kept_pair());
    let (alice_outcome, bob_outcome) = outcomes.last().copied().unwrap_or((1, 1));
    Ok(StepOutcome {
        success,
        alice_outcome,
        bob_outcome,
        outcomes,
        post_state: reg.into_pair()?,
        branch_prob,
    })
}

/// Applies one instruction keeping only the accepted measurement branches.
/// The register is left unnormalized; the return value is the conditional
/// probability of acceptance.
pub(crate) fn apply_coarse(reg: &mut PairRegister, ins: &Instruction, np: &NoiseParams) -> Result<f64> {
    match *ins {
        Instruction::Measure { pair, basis, keep } => {
            let p = reg.measure_pair_coarse(pair, basis, keep == Keep::Equal, np.p_m)?;
            reg.normalize();
            Ok(p)
        }
        _ => {
            apply_unitary(reg, ins, np.p_g)?;
            Ok(1.0)
        }
    }
}

/// Closed-form DEJMPS map on Bell-diagonal inputs, ordered `(φ+, ψ−, ψ+, φ−)`.
/// Returns the conditioned coefficients and the success probability.
pub fn bell_recurrence_oracle(main: &BellCoeffs, sac: &BellCoeffs) -> Result<(BellCoeffs, f64)> {
    for c in [main, sac] {
        if (c.sum() - 1.0).abs() > 1e-9 || c.as_array().iter().any(|&x| x < -1e-12) {
            return Err(Error::domain(format!("not a normalized Bell-diagonal input: {c:?}")));
        }
    }
    let (a1, b1, c1, d1) = (main.a, main.b, main.c, main.d);
    let (a2, b2, c2, d2) = (sac.a, sac.b, sac.c, sac.d);
    let n = (a1 + b1) * (a2 + b2) + (c1 + d1) * (c2 + d2);
    let post = BellCoeffs::new(
        (a1 * a2 + b1 * b2) / n,
        (c1 * d2 + d1 * c2) / n,
        (c1 * c2 + d1 * d2) / n,
        (a1 * b2 + b1 * a2) / n,
    );
    Ok((post, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::states::{bell_diagonal, fidelity, make_werner};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn oracle_werner_09() {
        let w = BellCoeffs::werner(0.9);
        let (post, p) = bell_recurrence_oracle(&w, &w).unwrap();
        assert!((post.a - 0.926_396).abs() < 5e-7);
        assert!((p - 0.875_556).abs() < 5e-7);
        let pure = BellCoeffs::new(1.0, 0.0, 0.0, 0.0);
        let (post, p) = bell_recurrence_oracle(&pure, &pure).unwrap();
        assert_eq!(post, pure);
        assert_eq!(p, 1.0);
        assert!(bell_recurrence_oracle(&BellCoeffs::new(0.5, 0.0, 0.0, 0.0), &pure).is_err());
    }

    #[test]
    fn dejmps_werner_09_noiseless() {
        let w = make_werner(0.9).unwrap();
        let np = NoiseParams::noiseless();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut seen_success = false;
        for _ in 0..20 {
            let out = dejmps_step(&w, &w, &np, &mut rng).unwrap();
            if out.success {
                seen_success = true;
                assert!((fidelity(&out.post_state) - 0.926_396).abs() < 5e-7);
            }
        }
        assert!(seen_success);
        let phi = TwoQubitState::phi_plus();
        let out = dejmps_step(&phi, &phi, &np, &mut rng).unwrap();
        assert!(out.success);
        assert!((fidelity(&out.post_state) - 1.0).abs() < 1e-12);
        assert!((out.branch_prob - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dejmps_noisy_sits_between() {
        let w = make_werner(0.9).unwrap();
        let np = NoiseParams::new(0.99, 0.99, f64::INFINITY, f64::INFINITY).unwrap();
        let mut reg = PairRegister::from_pair(0, &w);
        reg.push_pair(1, &w);
        let circ = PurificationCircuit::pumping(1);
        for ins in circ.instructions() {
            apply_coarse(&mut reg, ins, &np).unwrap();
        }
        let f = fidelity(&reg.into_pair().unwrap());
        assert!(f > 0.9 && f < 0.926_396, "{f}");
    }

    #[test]
    fn dsl_dejmps_matches_native_step() {
        let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../circuits/dejmps.circ")).unwrap();
        let circ = PurificationCircuit::parse(&text).unwrap();
        assert_eq!(circ, PurificationCircuit::pumping(1));
        let np = NoiseParams::new(0.97, 0.95, f64::INFINITY, f64::INFINITY).unwrap();
        let main = make_werner(0.8).unwrap();
        let sac = TwoQubitState::from_bell(BellCoeffs::new(0.7, 0.2, 0.06, 0.04)).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let a = dejmps_step(&main, &sac, &np, &mut r1).unwrap();
            let b = run_circuit(&circ, |k| if k == 0 { main.clone() } else { sac.clone() }, &np, &mut r2).unwrap();
            assert_eq!(
                (a.success, a.alice_outcome, a.bob_outcome),
                (b.success, b.alice_outcome, b.bob_outcome)
            );
            assert!((a.branch_prob - b.branch_prob).abs() < 1e-12);
            assert!(a.post_state.rho().max_abs_diff(b.post_state.rho()) < 1e-12);
        }
    }

    #[test]
    fn empty_circuit_is_identity() {
        let circ = PurificationCircuit::parse("PAIRS 1\n").unwrap();
        let w = make_werner(0.85).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = run_circuit(&circ, |_| w.clone(), &NoiseParams::noiseless(), &mut rng).unwrap();
        assert!(out.success);
        assert_eq!(out.post_state, w);
        assert_eq!(out.branch_prob, 1.0);
    }

    #[test]
    fn five_pair_corpus_circuit() {
        let circ = PurificationCircuit::from_file(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../circuits/five_pair_three_memory.circ"
        ))
        .unwrap();
        assert_eq!(circ.num_pairs(), 5);
        assert_eq!(circ.memories(), 3);
        assert!(PurificationCircuit::new(5, Some(2), circ.instructions().to_vec()).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let np = NoiseParams::noiseless();
        for _ in 0..20 {
            let out = run_circuit(&circ, |_| TwoQubitState::phi_plus(), &np, &mut rng).unwrap();
            assert!(out.success);
            assert!((fidelity(&out.post_state) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let cases = [
            ("GATE CNOT 0 1\n", 1),
            ("PAIRS 2\n# c\nGATE CNOT 0 2\n", 3),
            ("PAIRS 2\nGATE SWAP 0 1\n", 2),
            ("PAIRS 2\n\nMEASURE 1 BASIS Q KEEP equal\n", 3),
            ("PAIRS 2\nMEASURE 1 BASIS Z KEEP maybe\n", 2),
            ("PAIRS 2\nGATE CNOT 1 1\n", 2),
            ("PAIRS 2\nFROB 1\n", 2),
            ("PAIRS 2\nPAIRS 3\n", 2),
            ("PAIRS 2\nROTATE 0\nMEMORIES 2\n", 3),
        ];
        for (text, want) in cases {
            match PurificationCircuit::parse(text) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, want, "{text:?}"),
                other => panic!("{text:?} gave {other:?}"),
            }
        }
    }

    #[test]
    fn structural_validation() {
        let bad = [
            "PAIRS 2\n",
            "PAIRS 2\nMEASURE 0 BASIS Z KEEP equal\nMEASURE 1 BASIS Z KEEP equal\n",
            "PAIRS 3\nMEASURE 1 BASIS Z KEEP equal\nMEASURE 1 BASIS Z KEEP equal\n",
            "PAIRS 2\nMEASURE 1 BASIS Z KEEP equal\nGATE CNOT 0 1\n",
            "PAIRS 3\nMEMORIES 1\nGATE CNOT 0 1\nMEASURE 1 BASIS Z KEEP equal\nMEASURE 2 BASIS Z KEEP equal\n",
        ];
        for text in bad {
            assert!(
                matches!(PurificationCircuit::parse(text), Err(Error::Circuit(_))),
                "{text:?}"
            );
        }
        let c = PurificationCircuit::parse("PAIRS 3\nMEASURE 1 BASIS X KEEP equal\nMEASURE 2 BASIS Y KEEP unequal\n")
            .unwrap();
        assert_eq!(c.memories(), 2);
        assert_eq!(c.kept_pair(), 0);
    }

    #[test]
    fn display_roundtrip() {
        let c = PurificationCircuit::pumping(3);
        assert_eq!(PurificationCircuit::parse(&c.to_string()).unwrap(), c);
    }

    #[test]
    fn success_frequency_matches_oracle() {
        let main = TwoQubitState::from_bell(BellCoeffs::new(0.8, 0.1, 0.06, 0.04)).unwrap();
        let sac = make_werner(0.75).unwrap();
        let (_, p) = bell_recurrence_oracle(&bell_diagonal(&main), &bell_diagonal(&sac)).unwrap();
        let np = NoiseParams::noiseless();
        let mut rng = ChaCha8Rng::seed_from_u64(12345);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| dejmps_step(&main, &sac, &np, &mut rng).unwrap().success)
            .count();
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - p).abs() < 3.0 * sigma);
    }

    #[test]
    fn pumping_is_monotone_and_saturates() {
        let f0 = 0.7;
        let sac = make_werner(f0).unwrap();
        let np = NoiseParams::noiseless();
        let mut main = sac.clone();
        let mut prev = f0;
        let mut last_gain = f64::INFINITY;
        for _ in 0..40 {
            let mut reg = PairRegister::from_pair(0, &main);
            reg.push_pair(1, &sac);
            for ins in PurificationCircuit::pumping(1).instructions() {
                apply_coarse(&mut reg, ins, &np).unwrap();
            }
            main = reg.into_pair().unwrap();
            let f = fidelity(&main);
            assert!(f >= prev - 1e-12);
            last_gain = f - prev;
            prev = f;
        }
        assert!(last_gain < 1e-9);
    }

    fn bell() -> impl Strategy<Value = BellCoeffs> {
        (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64).prop_map(|(a, b, c, d)| {
            let s = a + b + c + d + 1e-9;
            let (a, b, c) = (a / s, b / s, c / s);
            BellCoeffs::new(a, b, c, 1.0 - a - b - c)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn noiseless_step_matches_oracle(m in bell(), s in bell(), seed in any::<u64>()) {
            let (want, p) = bell_recurrence_oracle(&m, &s).unwrap();
            prop_assume!(p > 1e-6);
            let main = TwoQubitState::from_bell(m).unwrap();
            let sac = TwoQubitState::from_bell(s).unwrap();
            let mut reg = PairRegister::from_pair(0, &main);
            reg.push_pair(1, &sac);
            let mut p_keep = 1.0;
            for ins in PurificationCircuit::pumping(1).instructions() {
                p_keep *= apply_coarse(&mut reg, ins, &NoiseParams::noiseless()).unwrap();
            }
            prop_assert!((p_keep - p).abs() < 1e-10);
            let got = bell_diagonal(&reg.into_pair().unwrap());
            prop_assert!(got.max_abs_diff(&want) < 1e-10);
            // The sampled step agrees on its accepted branches.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = dejmps_step(&main, &sac, &NoiseParams::noiseless(), &mut rng).unwrap();
            if out.success {
                prop_assert!(bell_diagonal(&out.post_state).max_abs_diff(&want) < 1e-10);
            }
        }

        #[test]
        fn oracle_symmetric_under_swap(m in bell(), s in bell()) {
            let (x, px) = bell_recurrence_oracle(&m, &s).unwrap();
            let (y, py) = bell_recurrence_oracle(&s, &m).unwrap();
            prop_assert!((px - py).abs() < 1e-12);
            prop_assert!(x.max_abs_diff(&y) < 1e-12);
        }
    }
}
