//! Two-qubit mixed states shared between the two nodes.
//!
//! Qubit 0 is Alice's, qubit 1 is Bob's. The Bell basis is always taken in
//! the fixed order `(φ+, ψ−, ψ+, φ−)`; every coefficient vector in this crate
//! uses that order.

use std::fmt;

use crate::density::{kron, DensityMatrix, C64, ONE, ZERO};
use crate::error::{Error, Result};

/// Validation tolerance for the density-matrix invariants.
pub const STATE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub fn matrix(self) -> [C64; 4] {
        let i = C64::new(0.0, 1.0);
        match self {
            Pauli::I => [ONE, ZERO, ZERO, ONE],
            Pauli::X => [ZERO, ONE, ONE, ZERO],
            Pauli::Y => [ZERO, -i, i, ZERO],
            Pauli::Z => [ONE, ZERO, ZERO, -ONE],
        }
    }
}

impl std::str::FromStr for Pauli {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "I" => Ok(Pauli::I),
            "X" => Ok(Pauli::X),
            "Y" => Ok(Pauli::Y),
            "Z" => Ok(Pauli::Z),
            other => Err(Error::domain(format!("unknown Pauli `{other}`"))),
        }
    }
}

impl fmt::Display for Pauli {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Pauli::I => "I",
            Pauli::X => "X",
            Pauli::Y => "Y",
            Pauli::Z => "Z",
        };
        f.write_str(s)
    }
}

/// The four Bell states as amplitude vectors, in the crate's fixed order.
pub fn bell_vectors() -> [[C64; 4]; 4] {
    let h = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    [
        [h, ZERO, ZERO, h],  // φ+
        [ZERO, h, -h, ZERO], // ψ−
        [ZERO, h, h, ZERO],  // ψ+
        [h, ZERO, ZERO, -h], // φ−
    ]
}

/// Diagonal weights of a state in the Bell basis `(φ+, ψ−, ψ+, φ−)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BellCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl BellCoeffs {
    pub const fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self { a, b, c, d }
    }

    pub fn werner(f0: f64) -> Self {
        let r = (1.0 - f0) / 3.0;
        Self::new(f0, r, r, r)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.a, self.b, self.c, self.d]
    }

    pub fn sum(&self) -> f64 {
        self.a + self.b + self.c + self.d
    }

    pub fn max_abs_diff(&self, other: &BellCoeffs) -> f64 {
        self.as_array()
            .iter()
            .zip(other.as_array())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }
}

/// A valid density matrix of one shared pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoQubitState {
    rho: DensityMatrix,
}

impl TwoQubitState {
    /// Validates and wraps a two-qubit density matrix.
    pub fn new(rho: DensityMatrix) -> Result<Self> {
        if rho.n_qubits() != 2 {
            return Err(Error::domain(format!(
                "expected a 2-qubit density matrix, got {} qubits",
                rho.n_qubits()
            )));
        }
        if !rho.is_valid(STATE_TOL) {
            return Err(Error::domain("matrix is not a valid density matrix"));
        }
        Ok(Self { rho })
    }

    /// Wraps without validation; checked in debug builds only.
    pub(crate) fn from_trusted(rho: DensityMatrix) -> Self {
        debug_assert_eq!(rho.n_qubits(), 2);
        debug_assert!((rho.trace() - ONE).norm() < 1e-6, "trace drifted");
        Self { rho }
    }

    pub fn phi_plus() -> Self {
        Self::from_trusted(DensityMatrix::from_pure(&bell_vectors()[0]))
    }

    pub fn maximally_mixed() -> Self {
        Self::from_trusted(DensityMatrix::maximally_mixed(2))
    }

    /// The Bell-diagonal state with the given weights.
    pub fn from_bell(coeffs: BellCoeffs) -> Result<Self> {
        let w = coeffs.as_array();
        if w.iter().any(|&x| x < -1e-12) || (coeffs.sum() - 1.0).abs() > STATE_TOL {
            return Err(Error::domain(format!(
                "Bell weights must be non-negative and sum to 1, got {w:?}"
            )));
        }
        let mut rho = DensityMatrix::zeros(2);
        for (weight, v) in w.iter().zip(bell_vectors()) {
            rho.add_scaled(&DensityMatrix::from_pure(&v), *weight);
        }
        Ok(Self::from_trusted(rho))
    }

    pub fn rho(&self) -> &DensityMatrix {
        &self.rho
    }

    pub fn into_rho(self) -> DensityMatrix {
        self.rho
    }

    pub fn is_valid(&self) -> bool {
        self.rho.is_valid(STATE_TOL)
    }
}

/// Werner state `((4F−1)/3)|φ+⟩⟨φ+| + ((1−F)/3)·I`.
pub fn make_werner(f0: f64) -> Result<TwoQubitState> {
    if !(0.25..=1.0).contains(&f0) {
        return Err(Error::domain(format!(
            "Werner fidelity must lie in [0.25, 1], got {f0}"
        )));
    }
    let mut rho = DensityMatrix::from_pure(&bell_vectors()[0]);
    rho.scale((4.0 * f0 - 1.0) / 3.0);
    let mut id = DensityMatrix::maximally_mixed(2);
    id.scale(4.0 * (1.0 - f0) / 3.0);
    rho.add_scaled(&id, 1.0);
    Ok(TwoQubitState::from_trusted(rho))
}

fn bell_overlap(rho: &DensityMatrix, v: &[C64; 4]) -> f64 {
    let mut acc = ZERO;
    for r in 0..4 {
        for c in 0..4 {
            acc += v[r].conj() * rho.get(r, c) * v[c];
        }
    }
    acc.re
}

/// `⟨φ+|ρ|φ+⟩`, clamped to `[0, 1]`.
pub fn fidelity(s: &TwoQubitState) -> f64 {
    bell_overlap(&s.rho, &bell_vectors()[0]).clamp(0.0, 1.0)
}

/// Diagonal of `ρ` in the Bell basis.
pub fn bell_diagonal(s: &TwoQubitState) -> BellCoeffs {
    let w = bell_vectors().map(|v| bell_overlap(&s.rho, &v));
    BellCoeffs::new(w[0], w[1], w[2], w[3])
}

/// `Tr(ρ · A⊗B)`.
pub fn pauli_expectation(s: &TwoQubitState, obs_a: Pauli, obs_b: Pauli) -> f64 {
    let op = kron(&obs_a.matrix(), 2, &obs_b.matrix(), 2);
    s.rho.expectation(&op).re
}
