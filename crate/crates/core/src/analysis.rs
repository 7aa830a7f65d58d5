//! Monte Carlo estimation and BB84 key metrics.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::density::DensityMatrix;
use crate::error::{Error, Result};
use crate::protocols::{Setup, Simulator, TrialResult};
use crate::states::{fidelity, pauli_expectation, Pauli, TwoQubitState};

/// z-value of a two-sided 95% normal interval.
pub const Z95: f64 = 1.96;

/// How Pauli correlations enter the key fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SkfMode {
    /// Error rates `e = (1 − θ)/2`.
    #[default]
    Qber,
    /// Correlations fed to the entropy as they are.
    RawTheta,
}

/// `−p log₂ p − (1−p) log₂(1−p)`, zero at both ends.
pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}

pub fn skf_bb84(rho: &TwoQubitState) -> f64 {
    skf_bb84_with(rho, SkfMode::Qber)
}

pub fn skf_bb84_with(rho: &TwoQubitState, mode: SkfMode) -> f64 {
    let tx = pauli_expectation(rho, Pauli::X, Pauli::X);
    let tz = pauli_expectation(rho, Pauli::Z, Pauli::Z);
    let arg = |t: f64| match mode {
        SkfMode::Qber => ((1.0 - t) / 2.0).clamp(0.0, 1.0),
        SkfMode::RawTheta => t.clamp(0.0, 1.0),
    };
    (1.0 - binary_entropy(arg(tx)) - binary_entropy(arg(tz))).clamp(0.0, 1.0)
}

/// Streaming mean and variance.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStats {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Sample variance; zero below two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }

    pub fn ci_halfwidth(&self) -> f64 {
        if self.n < 2 {
            return f64::INFINITY;
        }
        Z95 * self.variance().sqrt() / (self.n as f64).sqrt()
    }
}

/// `1.96 · s / √n`
pub fn ci_halfwidth(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::domain("a confidence interval needs at least two samples"));
    }
    let mut st = RunningStats::default();
    samples.iter().for_each(|&x| st.push(x));
    Ok(st.ci_halfwidth())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateOptions {
    pub n_min: usize,
    /// Relative CI halfwidth to reach on both fidelity and rate.
    pub ci_target: f64,
    pub max_trials: usize,
    pub skf_mode: SkfMode,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            n_min: 10_000,
            ci_target: 0.03,
            max_trials: 200_000,
            skf_mode: SkfMode::Qber,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Estimates {
    pub mean_fidelity: f64,
    /// Delivered pairs per second.
    pub rate: f64,
    /// Secret bits per second.
    pub skr: f64,
    pub skf: f64,
    pub ci_halfwidth_fidelity: f64,
    pub ci_halfwidth_rate: f64,
    pub n_trials: usize,
    pub n_delivered: usize,
    pub mean_time: f64,
    pub mean_state: TwoQubitState,
    /// Both intervals reached the target before the trial cap.
    pub converged: bool,
}

#[derive(Debug, Clone)]
struct Accumulator {
    fid: RunningStats,
    time: RunningStats,
    total_time: f64,
    delivered: usize,
    rho_sum: DensityMatrix,
}

impl Accumulator {
    fn new() -> Self {
        Self {
            fid: RunningStats::default(),
            time: RunningStats::default(),
            total_time: 0.0,
            delivered: 0,
            rho_sum: DensityMatrix::zeros(2),
        }
    }

    fn push(&mut self, r: &TrialResult) {
        self.time.push(r.completion_time);
        self.total_time += r.completion_time;
        if r.delivered {
            self.delivered += 1;
            self.fid.push(fidelity(&r.output_state));
            self.rho_sum.add_scaled(r.output_state.rho(), 1.0);
        }
    }

    fn rate(&self) -> f64 {
        if self.total_time > 0.0 {
            self.delivered as f64 / self.total_time
        } else {
            0.0
        }
    }

    /// Delta-method halfwidth of `1/mean_time`.
    fn rate_halfwidth(&self) -> f64 {
        let m = self.time.mean();
        if m > 0.0 {
            self.time.ci_halfwidth() / (m * m)
        } else {
            f64::INFINITY
        }
    }

    fn converged(&self, target: f64) -> bool {
        let fid_ok =
            self.fid.ci_halfwidth() < target * self.fid.mean() || (self.fid.count() >= 2 && self.fid.variance() == 0.0);
        let rate_ok =
            self.rate_halfwidth() < target * self.rate() || (self.time.count() >= 2 && self.time.variance() == 0.0);
        fid_ok && rate_ok
    }
}

/// Seed of trial `index` under run seed `seed`.
pub fn trial_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_word_pos(index as u128 * 2);
    rng.next_u64()
}

/// Runs trials `range` in parallel and returns them in index order.
pub fn run_trials(setup: &Setup, seed: u64, range: std::ops::Range<usize>) -> Result<Vec<TrialResult>> {
    Simulator::new(setup)?;
    range
        .into_par_iter()
        .map_init(
            || Simulator::new(setup).expect("validated above"),
            |sim, i| sim.run_seeded(trial_seed(seed, i as u64), None),
        )
        .collect()
}

/// Runs `n_min` trials, then further batches of `n_min` until both
/// confidence intervals are within `ci_target` of their means or the trial
/// cap is hit.
pub fn estimate(setup: &Setup, opts: &EstimateOptions, seed: u64) -> Result<Estimates> {
    if opts.n_min < 100 {
        return Err(Error::config(
            "trials_min",
            format!("must be at least 100, got {}", opts.n_min),
        ));
    }
    if !(opts.ci_target > 0.0) {
        return Err(Error::config(
            "ci_target",
            format!("must be positive, got {}", opts.ci_target),
        ));
    }
    let cap = opts.max_trials.max(opts.n_min);
    let mut acc = Accumulator::new();
    let mut done = 0;
    let mut converged = false;
    while done < cap {
        let batch = if done == 0 {
            opts.n_min
        } else {
            opts.n_min.min(cap - done)
        };
        for r in run_trials(setup, seed, done..done + batch)? {
            acc.push(&r);
        }
        done += batch;
        if acc.converged(opts.ci_target) {
            converged = true;
            break;
        }
    }
    let mean_state = if acc.delivered > 0 {
        let mut rho = acc.rho_sum.clone();
        rho.scale(1.0 / acc.delivered as f64);
        TwoQubitState::from_trusted(rho)
    } else {
        TwoQubitState::maximally_mixed()
    };
    let skf = skf_bb84_with(&mean_state, opts.skf_mode);
    let rate = acc.rate();
    Ok(Estimates {
        mean_fidelity: acc.fid.mean(),
        rate,
        skr: if acc.delivered > 0 { skf * rate } else { 0.0 },
        skf,
        ci_halfwidth_fidelity: if acc.fid.count() >= 2 {
            acc.fid.ci_halfwidth()
        } else {
            0.0
        },
        ci_halfwidth_rate: acc.rate_halfwidth(),
        n_trials: done,
        n_delivered: acc.delivered,
        mean_time: acc.time.mean(),
        mean_state,
        converged,
    })
}
