//! Dense n-qubit density matrices and the handful of in-place kernels the
//! simulator needs.
//!
//! Storage is row-major `2^n × 2^n`. Qubit 0 is the most significant bit of
//! a basis index, so `a.tensor(&b)` places `a`'s qubits before `b`'s.

use nalgebra::DMatrix;
use num_complex::Complex64;

pub type C64 = Complex64;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);

/// A single-qubit operator in row-major order.
pub type Mat2 = [[C64; 2]; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    n_qubits: usize,
    dim: usize,
    data: Vec<C64>,
}

impl DensityMatrix {
    /// Wraps raw row-major data. Panics when the length is not `4^n`.
    pub fn from_data(n_qubits: usize, data: Vec<C64>) -> Self {
        let dim = 1usize << n_qubits;
        assert_eq!(data.len(), dim * dim, "density matrix data has wrong length");
        Self { n_qubits, dim, data }
    }

    pub fn zeros(n_qubits: usize) -> Self {
        let dim = 1usize << n_qubits;
        Self::from_data(n_qubits, vec![ZERO; dim * dim])
    }

    pub fn maximally_mixed(n_qubits: usize) -> Self {
        let mut m = Self::zeros(n_qubits);
        let v = 1.0 / m.dim as f64;
        for i in 0..m.dim {
            m.data[i * m.dim + i] = C64::new(v, 0.0);
        }
        m
    }

    /// `|ψ⟩⟨ψ|` for an amplitude vector (not normalized here).
    pub fn from_pure(amplitudes: &[C64]) -> Self {
        let dim = amplitudes.len();
        assert!(dim.is_power_of_two(), "state vector length must be 2^n");
        let n = dim.trailing_zeros() as usize;
        let mut data = vec![ZERO; dim * dim];
        for r in 0..dim {
            for c in 0..dim {
                data[r * dim + c] = amplitudes[r] * amplitudes[c].conj();
            }
        }
        Self::from_data(n, data)
    }

    #[inline]
    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> C64 {
        self.data[r * self.dim + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: C64) {
        self.data[r * self.dim + c] = v;
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    #[inline]
    fn mask(&self, q: usize) -> usize {
        debug_assert!(q < self.n_qubits);
        1usize << (self.n_qubits - 1 - q)
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// `self += s * other`
    pub fn add_scaled(&mut self, other: &DensityMatrix, s: f64) {
        assert_eq!(self.n_qubits, other.n_qubits);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b * s;
        }
    }

    pub fn tensor(&self, other: &DensityMatrix) -> DensityMatrix {
        let n = self.n_qubits + other.n_qubits;
        let dim = self.dim * other.dim;
        let mut data = vec![ZERO; dim * dim];
        for r1 in 0..self.dim {
            for c1 in 0..self.dim {
                let a = self.get(r1, c1);
                if a == ZERO {
                    continue;
                }
                for r2 in 0..other.dim {
                    let row = (r1 * other.dim + r2) * dim + c1 * other.dim;
                    for c2 in 0..other.dim {
                        data[row + c2] = a * other.get(r2, c2);
                    }
                }
            }
        }
        DensityMatrix::from_data(n, data)
    }

    /// `ρ ← U ρ U†` for a single-qubit `U` acting on qubit `q`.
    pub fn apply_1q(&mut self, q: usize, u: &Mat2) {
        let m = self.mask(q);
        let d = self.dim;
        // left multiply
        for r0 in (0..d).filter(|r| r & m == 0) {
            let r1 = r0 | m;
            for c in 0..d {
                let a = self.data[r0 * d + c];
                let b = self.data[r1 * d + c];
                self.data[r0 * d + c] = u[0][0] * a + u[0][1] * b;
                self.data[r1 * d + c] = u[1][0] * a + u[1][1] * b;
            }
        }
        // right multiply by U†
        let (v00, v01, v10, v11) = (u[0][0].conj(), u[0][1].conj(), u[1][0].conj(), u[1][1].conj());
        for r in 0..d {
            let row = r * d;
            for c0 in (0..d).filter(|c| c & m == 0) {
                let c1 = c0 | m;
                let a = self.data[row + c0];
                let b = self.data[row + c1];
                self.data[row + c0] = a * v00 + b * v01;
                self.data[row + c1] = a * v10 + b * v11;
            }
        }
    }

    /// Applies a permutation of basis states: `ρ'[r][c] = ρ[π(r)][π(c)]`.
    /// `perm` must be an involution.
    fn permute(&mut self, perm: impl Fn(usize) -> usize) {
        let d = self.dim;
        let old = self.data.clone();
        for r in 0..d {
            let pr = perm(r);
            for c in 0..d {
                self.data[r * d + c] = old[pr * d + perm(c)];
            }
        }
    }

    pub fn apply_cnot(&mut self, control: usize, target: usize) {
        let (mc, mt) = (self.mask(control), self.mask(target));
        self.permute(|x| if x & mc != 0 { x ^ mt } else { x });
    }

    pub fn apply_cz(&mut self, a: usize, b: usize) {
        let both = self.mask(a) | self.mask(b);
        let d = self.dim;
        let sign = |x: usize| x & both == both;
        for r in 0..d {
            for c in 0..d {
                if sign(r) != sign(c) {
                    self.data[r * d + c] = -self.data[r * d + c];
                }
            }
        }
    }

    /// `ρ ← p·ρ + (1−p)·Tr_{i,j}(ρ) ⊗ I/4`, with the identity factor placed
    /// back on qubits `i` and `j`.
    pub fn depolarize_pair(&mut self, i: usize, j: usize, p: f64) {
        if p >= 1.0 {
            return;
        }
        let (mi, mj) = (self.mask(i), self.mask(j));
        let both = mi | mj;
        let offsets = [0, mj, mi, mi | mj];
        let d = self.dim;
        let old = self.data.clone();
        self.scale(p);
        let w = (1.0 - p) / 4.0;
        for r in (0..d).filter(|r| r & both == 0) {
            for c in (0..d).filter(|c| c & both == 0) {
                let s: C64 = offsets.iter().map(|&b| old[(r | b) * d + (c | b)]).sum();
                for &b in &offsets {
                    self.data[(r | b) * d + (c | b)] += s * w;
                }
            }
        }
    }

    /// Amplitude damping with decay probability `lambda` on qubit `q`.
    pub fn amplitude_damp(&mut self, q: usize, lambda: f64) {
        if lambda <= 0.0 {
            return;
        }
        let m = self.mask(q);
        let d = self.dim;
        let keep = (1.0 - lambda).sqrt();
        for r0 in (0..d).filter(|r| r & m == 0) {
            let r1 = r0 | m;
            for c0 in (0..d).filter(|c| c & m == 0) {
                let c1 = c0 | m;
                let a11 = self.data[r1 * d + c1];
                self.data[r0 * d + c0] += a11 * lambda;
                self.data[r1 * d + c1] = a11 * (1.0 - lambda);
                self.data[r0 * d + c1] *= keep;
                self.data[r1 * d + c0] *= keep;
            }
        }
    }

    /// Phase flip with probability `pz` on qubit `q`.
    pub fn dephase(&mut self, q: usize, pz: f64) {
        if pz <= 0.0 {
            return;
        }
        let m = self.mask(q);
        let d = self.dim;
        let f = 1.0 - 2.0 * pz;
        for r in 0..d {
            for c in 0..d {
                if (r ^ c) & m != 0 {
                    self.data[r * d + c] *= f;
                }
            }
        }
    }

    /// Population of `|bit⟩` on qubit `q` (unnormalized if the trace is not 1).
    pub fn population(&self, q: usize, bit: usize) -> f64 {
        let m = self.mask(q);
        (0..self.dim)
            .filter(|i| (i & m != 0) == (bit == 1))
            .map(|i| self.get(i, i).re)
            .sum()
    }

    /// Removes qubit `q`, weighting its `|0⟩` block by `w[0]` and its `|1⟩`
    /// block by `w[1]`. With `w = [1, 1]` this is the partial trace.
    pub fn trace_out_weighted(&self, q: usize, w: [f64; 2]) -> DensityMatrix {
        let pos = self.n_qubits - 1 - q;
        let m = 1usize << pos;
        let expand = |x: usize, b: usize| ((x >> pos) << (pos + 1)) | (b * m) | (x & (m - 1));
        let mut out = DensityMatrix::zeros(self.n_qubits - 1);
        let rd = out.dim;
        for r in 0..rd {
            for c in 0..rd {
                let v = self.get(expand(r, 0), expand(c, 0)) * w[0] + self.get(expand(r, 1), expand(c, 1)) * w[1];
                out.data[r * rd + c] = v;
            }
        }
        out
    }

    /// Removes qubits `a` and `b` (a ≠ b), weighting the diagonal block
    /// `(x_a, x_b)` by `w[x_a][x_b]`.
    pub fn trace_out_pair_weighted(&self, a: usize, b: usize, w: [[f64; 2]; 2]) -> DensityMatrix {
        assert_ne!(a, b);
        // Remove the higher-index qubit first so the lower index stays valid.
        let (hi, lo, swap) = if a > b { (a, b, false) } else { (b, a, true) };
        let mut out: Option<DensityMatrix> = None;
        for x_hi in 0..2 {
            let mut wh = [0.0; 2];
            wh[x_hi] = 1.0;
            let slice = self.trace_out_weighted(hi, wh);
            let wl = if swap {
                // hi == b, lo == a
                [w[0][x_hi], w[1][x_hi]]
            } else {
                [w[x_hi][0], w[x_hi][1]]
            };
            let part = slice.trace_out_weighted(lo, wl);
            match out.as_mut() {
                Some(o) => o.add_scaled(&part, 1.0),
                None => out = Some(part),
            }
        }
        out.expect("two blocks summed")
    }

    /// `max |ρ − ρ†|`
    pub fn hermiticity_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.dim {
            for c in r..self.dim {
                worst = worst.max((self.get(r, c) - self.get(c, r).conj()).norm());
            }
        }
        worst
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        let d = self.dim;
        let m = DMatrix::from_fn(d, d, |r, c| (self.get(r, c) + self.get(c, r).conj()) * 0.5);
        m.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Largest elementwise distance to `other`.
    pub fn max_abs_diff(&self, other: &DensityMatrix) -> f64 {
        assert_eq!(self.n_qubits, other.n_qubits);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// `Tr(ρ · op)` for a full-size operator given in row-major order.
    pub fn expectation(&self, op: &[C64]) -> C64 {
        let d = self.dim;
        assert_eq!(op.len(), d * d);
        let mut acc = ZERO;
        for r in 0..d {
            for c in 0..d {
                acc += self.data[r * d + c] * op[c * d + r];
            }
        }
        acc
    }

    /// Checks the density-matrix invariants at tolerance `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        (self.trace() - ONE).norm() <= tol && self.hermiticity_error() <= tol && self.min_eigenvalue() >= -tol
    }
}

/// Kronecker product of two row-major square operators.
pub(crate) fn kron(a: &[C64], da: usize, b: &[C64], db: usize) -> Vec<C64> {
    let d = da * db;
    let mut out = vec![ZERO; d * d];
    for r1 in 0..da {
        for c1 in 0..da {
            let x = a[r1 * da + c1];
            for r2 in 0..db {
                for c2 in 0..db {
                    out[(r1 * db + r2) * d + c1 * db + c2] = x * b[r2 * db + c2];
                }
            }
        }
    }
    out
}
