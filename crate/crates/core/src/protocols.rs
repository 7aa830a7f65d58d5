//! Timed-event simulation of NOP, BASE, HOPT and OPT over one link.
//!
//! A trial runs rounds until one of them delivers a pair. A round starts with
//! every memory free, captures pairs from the source, runs the purification
//! circuit and either delivers, fails, or (in measure-before-confirm mode) is
//! filtered after the fact. Inside the engine all times are integer
//! picoseconds.
//!
//! Per protocol:
//!
//! * BASE uses a pair once its herald has arrived, waits for every earlier
//!   outcome message before the next operation, and reloads a memory freed by
//!   a measurement only after that measurement's outcomes have been exchanged.
//! * HOPT uses a pair once its herald has arrived and never waits for outcome
//!   messages; a freed memory reloads at once.
//! * OPT uses a pair as soon as it is detected locally. A lost photon ruins
//!   the round, which the nodes learn one herald delay later.
//!
//! BASE and HOPT retry a lost attempt in the same memory once the loss is
//! heralded. Any outcome mismatch fails the round when the outcome message
//! arrives. The nodes restart at the earliest failure they know of.
//!
//! Random draws are addressed by what they decide (pair and attempt number,
//! or measurement step), so different protocols replaying the same seed see
//! the same losses and the same measurement thresholds.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channels::{decohere_pair, NoiseParams, PairRegister, Side};
use crate::error::{Error, Result};
use crate::linkmodel::{attempt_success_prob, delays, LinkConfig};
use crate::purify::{apply_coarse, Instruction, PurificationCircuit};
use crate::states::{make_werner, TwoQubitState};

pub type Ps = u64;

pub fn to_ps(seconds: f64) -> Ps {
    (seconds * 1e12).round() as Ps
}

pub fn to_s(t: Ps) -> f64 {
    t as f64 * 1e-12
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Protocol {
    Nop,
    Base,
    Hopt,
    Opt,
}

impl Protocol {
    /// Also the tie-break order of the heatmap.
    pub const ALL: [Protocol; 4] = [Protocol::Nop, Protocol::Base, Protocol::Hopt, Protocol::Opt];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Nop => "NOP",
            Protocol::Base => "BASE",
            Protocol::Hopt => "HOPT",
            Protocol::Opt => "OPT",
        }
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "NOP" => Ok(Protocol::Nop),
            "BASE" => Ok(Protocol::Base),
            "HOPT" => Ok(Protocol::Hopt),
            "OPT" => Ok(Protocol::Opt),
            _ => Err(Error::Validation(format!("unknown protocol `{s}`"))),
        }
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ProtocolKind {
    pub protocol: Protocol,
    /// Deliver at the last local operation and drop failed pairs later.
    pub measure_before_confirm: bool,
}

impl ProtocolKind {
    pub fn new(protocol: Protocol) -> Self {
        Self {
            protocol,
            measure_before_confirm: false,
        }
    }

    pub fn qkd(protocol: Protocol) -> Self {
        Self {
            protocol,
            measure_before_confirm: true,
        }
    }
}

pub const MAX_PUMPING_STEPS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub enum Scheme {
    Pumping(usize),
    Circuit(Arc<PurificationCircuit>),
}

impl Scheme {
    pub fn to_circuit(&self) -> Result<PurificationCircuit> {
        match self {
            Scheme::Pumping(n) if *n > MAX_PUMPING_STEPS => Err(Error::Validation(format!(
                "pumping supports at most {MAX_PUMPING_STEPS} steps, got {n}"
            ))),
            Scheme::Pumping(n) => Ok(PurificationCircuit::pumping(*n)),
            Scheme::Circuit(c) => Ok((**c).clone()),
        }
    }
}

/// Everything a trial depends on apart from its random draws.
#[derive(Debug, Clone)]
pub struct Setup {
    pub kind: ProtocolKind,
    pub scheme: Scheme,
    pub link: LinkConfig,
    pub np: NoiseParams,
    pub f0: f64,
    /// Duration of a bilateral gate, seconds.
    pub gate_time: f64,
    /// Duration of a measurement, seconds.
    pub meas_time: f64,
}

impl Setup {
    pub fn new(kind: ProtocolKind, scheme: Scheme, link: LinkConfig, np: NoiseParams, f0: f64) -> Self {
        Self {
            kind,
            scheme,
            link,
            np,
            f0,
            gate_time: 0.0,
            meas_time: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub delivered: bool,
    /// Seconds from trial start to delivery.
    pub completion_time: f64,
    pub output_state: TwoQubitState,
    /// Pairs captured over all rounds.
    pub pairs_consumed: u64,
    /// Source ticks used, lost ones included.
    pub attempts: u64,
    pub steps_completed: usize,
    /// Rounds that did not deliver, filtered ones included.
    pub restarts: u32,
    /// Rounds delivered locally but dropped on confirmation.
    pub filtered: u32,
    pub final_round_start: f64,
    /// Arrival of the delivered pair.
    pub main_arrival: f64,
    /// Total storage noise applied to the delivered pair.
    pub storage_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageKind {
    HeraldOk { pair: usize },
    HeraldFail { pair: usize },
    PurifyOutcome { step: usize, ok: bool },
}

/// A classical message between the nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub round: u32,
    pub send_time: f64,
    pub arrival_time: f64,
    pub kind: MessageKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionKind {
    Capture { pair: usize, tick: u64, lost: bool },
    Operation { index: usize },
    Restart,
    Filter,
    Deliver,
}

/// Something a node does, with the messages it had to wait for.
#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub round: u32,
    pub time: f64,
    pub kind: ActionKind,
    pub awaited: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct EventLog {
    pub messages: Vec<Message>,
    pub actions: Vec<Action>,
}

impl EventLog {
    fn send(&mut self, round: u32, send: Ps, arrival: Ps, kind: MessageKind) -> usize {
        self.messages.push(Message {
            round,
            send_time: to_s(send),
            arrival_time: to_s(arrival),
            kind,
        });
        self.messages.len() - 1
    }

    fn act(&mut self, round: u32, time: Ps, kind: ActionKind, awaited: Vec<usize>) {
        self.actions.push(Action {
            round,
            time: to_s(time),
            kind,
            awaited,
        });
    }

    /// One event per line: time in seconds, node, event.
    pub fn to_text(&self) -> String {
        let mut rows: Vec<(f64, String)> = Vec::new();
        for m in &self.messages {
            let what = match m.kind {
                MessageKind::HeraldOk { pair } => format!("herald_ok pair={pair}"),
                MessageKind::HeraldFail { pair } => format!("herald_fail pair={pair}"),
                MessageKind::PurifyOutcome { step, ok } => format!("purify_outcome step={step} ok={ok}"),
            };
            rows.push((
                m.arrival_time,
                format!("both recv {what} sent={:.12} round={}", m.send_time, m.round),
            ));
        }
        for a in &self.actions {
            let what = match a.kind {
                ActionKind::Capture { pair, tick, lost } => {
                    format!("capture pair={pair} tick={tick} lost={lost}")
                }
                ActionKind::Operation { index } => format!("op index={index}"),
                ActionKind::Restart => "restart".to_string(),
                ActionKind::Filter => "filter".to_string(),
                ActionKind::Deliver => "deliver".to_string(),
            };
            rows.push((a.time, format!("both {what} round={}", a.round)));
        }
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut out = String::new();
        for (t, line) in rows {
            let _ = writeln!(out, "{t:.12} {line}");
        }
        out
    }
}

/// Mean NOP delivery time `period/p + photon_delay + herald_delay`.
pub fn expected_nop_time(link: &LinkConfig) -> f64 {
    let d = delays(link);
    d.period / attempt_success_prob(link) + d.photon_delay + d.herald_delay
}

/// Runs one trial with a fresh simulator.
pub fn run_trial<R: Rng + ?Sized>(
    kind: ProtocolKind,
    scheme: &Scheme,
    link: &LinkConfig,
    np: &NoiseParams,
    f0: f64,
    rng: &mut R,
) -> Result<TrialResult> {
    let setup = Setup::new(kind, scheme.clone(), link.clone(), *np, f0);
    Simulator::new(&setup)?.run_trial(rng)
}

fn loss_word(pair: usize, attempt: u32) -> u128 {
    (((pair as u128) << 32) | attempt as u128) * 2
}

fn meas_word(step: usize) -> u128 {
    ((1u128 << 62) + step as u128) * 2
}

fn draw(rng: &mut ChaCha8Rng, word: u128) -> f64 {
    rng.set_word_pos(word);
    rng.gen::<f64>()
}

/// What made a memory available.
#[derive(Debug, Clone, Copy)]
enum Freed {
    Start,
    Lost(usize),
    Measured(usize),
}

#[derive(Debug, Clone, Copy)]
struct Attempt {
    pair: usize,
    tick: u64,
    arrival: Ps,
    lost: bool,
    freed: Freed,
}

#[derive(Debug, Clone, Copy)]
struct PairInfo {
    arrival: Ps,
    usable: Ps,
}

#[derive(Debug, Default)]
struct Timeline {
    attempts: Vec<Attempt>,
    pairs: Vec<PairInfo>,
    op_start: Vec<Ps>,
    op_done: Vec<Ps>,
    /// Earliest known failure caused by photon loss.
    loss_k: Option<Ps>,
    /// Last local operation.
    last_local: Ps,
    /// Last classical message of the round.
    last_msg: Ps,
    free: Vec<(Ps, Freed)>,
    touched: Vec<Option<Ps>>,
    mismatch: Vec<usize>,
}

impl Timeline {
    fn reset(&mut self, start: Ps, memories: usize, pairs: usize) {
        self.attempts.clear();
        self.pairs.clear();
        self.op_start.clear();
        self.op_done.clear();
        self.loss_k = None;
        self.last_local = start;
        self.last_msg = start;
        self.free.clear();
        self.free.resize(memories, (start, Freed::Start));
        self.touched.clear();
        self.touched.resize(pairs, None);
        self.mismatch.clear();
    }
}

enum RoundEnd {
    Deliver { at: Ps, state: TwoQubitState, storage: Ps },
    Fail { at: Ps },
    Filtered { at: Ps },
}

struct RoundOutcome {
    end: RoundEnd,
    pairs: u64,
    attempts: u64,
    main_arrival: Ps,
}

type MemoKey = (u64, u32, u64, u64);

struct MemoEntry {
    id: u64,
    reg: Arc<PairRegister>,
    p_keep: f64,
}

/// Cache of register states reached by a given sequence of operations and
/// storage intervals.
struct Memo {
    map: HashMap<MemoKey, MemoEntry>,
    next_id: u64,
    bytes: usize,
    cap_bytes: usize,
}

impl Memo {
    fn new(cap_bytes: usize) -> Self {
        Self {
            map: HashMap::new(),
            next_id: 1,
            bytes: 0,
            cap_bytes,
        }
    }

    fn insert(&mut self, key: MemoKey, reg: Arc<PairRegister>, p_keep: f64) -> u64 {
        let size = reg.rho().data().len() * 16 + 64;
        if self.bytes + size > self.cap_bytes {
            self.map.clear();
            self.bytes = 0;
        }
        let id = self.next_id;
        self.next_id += 1;
        self.bytes += size;
        self.map.insert(key, MemoEntry { id, reg, p_keep });
        id
    }
}

const MEMO_BYTES: usize = 64 << 20;
const NONE_DT: u64 = u64::MAX;

/// Reusable per-worker trial runner.
pub struct Simulator {
    kind: ProtocolKind,
    circuit: PurificationCircuit,
    np: NoiseParams,
    werner: TwoQubitState,
    p: f64,
    period: Ps,
    pd: Ps,
    hd: Ps,
    durations: Vec<Ps>,
    meas_step: Vec<Option<usize>>,
    memo: Memo,
    max_rounds: u64,
    kept: usize,
    n_meas: usize,
    scratch: Timeline,
}

impl Simulator {
    pub fn new(setup: &Setup) -> Result<Self> {
        setup.link.validate()?;
        setup.np.validate()?;
        let werner = make_werner(setup.f0).map_err(|e| Error::config("f0", e.to_string()))?;
        let circuit = setup.scheme.to_circuit()?;
        let p = attempt_success_prob(&setup.link);
        if !(p > 0.0) {
            return Err(Error::Validation("link success probability is zero".into()));
        }
        for (key, v) in [("gate_time_s", setup.gate_time), ("meas_time_s", setup.meas_time)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(key, format!("must be non-negative, got {v}")));
            }
        }
        let d = delays(&setup.link);
        let period = to_ps(d.period);
        if period == 0 {
            return Err(Error::config("mu_hz", "source period is below one picosecond"));
        }
        let mut step = 0;
        let mut meas_step = Vec::new();
        let mut durations = Vec::new();
        for ins in circuit.instructions() {
            match ins {
                Instruction::Measure { .. } => {
                    meas_step.push(Some(step));
                    step += 1;
                    durations.push(to_ps(setup.meas_time));
                }
                Instruction::Gate { .. } => {
                    meas_step.push(None);
                    durations.push(to_ps(setup.gate_time));
                }
                Instruction::Rotate { .. } => {
                    meas_step.push(None);
                    durations.push(0);
                }
            }
        }
        Ok(Self {
            kind: setup.kind,
            np: setup.np,
            werner,
            p,
            period,
            pd: to_ps(d.photon_delay),
            hd: to_ps(d.herald_delay),
            durations,
            meas_step,
            memo: Memo::new(MEMO_BYTES),
            max_rounds: 50_000_000,
            kept: circuit.kept_pair(),
            n_meas: circuit.n_measurements(),
            scratch: Timeline::default(),
            circuit,
        })
    }

    pub fn kind(&self) -> ProtocolKind {
        self.kind
    }

    pub fn circuit(&self) -> &PurificationCircuit {
        &self.circuit
    }

    /// Draws a trial seed from `rng` and runs the trial.
    pub fn run_trial<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<TrialResult> {
        let seed = rng.gen::<u64>();
        self.run_seeded(seed, None)
    }

    /// Runs the trial whose draws are derived from `seed`.
    pub fn run_seeded(&mut self, seed: u64, mut log: Option<&mut EventLog>) -> Result<TrialResult> {
        let base = ChaCha8Rng::seed_from_u64(seed);
        if self.kind.protocol == Protocol::Nop {
            let mut rng = base;
            return Ok(self.run_nop(&mut rng, log));
        }
        let mut start: Ps = 0;
        let mut restarts = 0u32;
        let mut filtered = 0u32;
        let mut pairs = 0u64;
        let mut attempts = 0u64;
        for round in 0..self.max_rounds {
            let mut rng = base.clone();
            rng.set_stream(round);
            let out = self.run_round(start, round as u32, &mut rng, log.as_deref_mut())?;
            pairs += out.pairs;
            attempts += out.attempts;
            match out.end {
                RoundEnd::Deliver { at, state, storage } => {
                    return Ok(TrialResult {
                        delivered: true,
                        completion_time: to_s(at),
                        output_state: state,
                        pairs_consumed: pairs,
                        attempts,
                        steps_completed: self.n_meas,
                        restarts,
                        filtered,
                        final_round_start: to_s(start),
                        main_arrival: to_s(out.main_arrival),
                        storage_time: to_s(storage),
                    });
                }
                RoundEnd::Fail { at } => {
                    restarts += 1;
                    start = at;
                }
                RoundEnd::Filtered { at } => {
                    restarts += 1;
                    filtered += 1;
                    start = at;
                }
            }
        }
        Ok(TrialResult {
            delivered: false,
            completion_time: to_s(start),
            output_state: TwoQubitState::maximally_mixed(),
            pairs_consumed: pairs,
            attempts,
            steps_completed: 0,
            restarts,
            filtered,
            final_round_start: to_s(start),
            main_arrival: to_s(start),
            storage_time: 0.0,
        })
    }

    fn run_nop(&self, rng: &mut ChaCha8Rng, log: Option<&mut EventLog>) -> TrialResult {
        let k = if self.p >= 1.0 {
            1
        } else {
            let u = draw(rng, loss_word(0, 0));
            1 + ((1.0 - u).ln() / (1.0 - self.p).ln()).floor() as u64
        };
        let arrival = k * self.period + self.pd;
        let wait = if self.kind.measure_before_confirm { 0 } else { self.hd };
        let at = arrival + wait;
        let state = decohere_pair(&self.werner, to_s(wait), &self.np).expect("non-negative wait");
        if let Some(log) = log {
            log.act(
                0,
                arrival,
                ActionKind::Capture {
                    pair: 0,
                    tick: k,
                    lost: false,
                },
                vec![],
            );
            let h = log.send(0, arrival, arrival + self.hd, MessageKind::HeraldOk { pair: 0 });
            let awaited = if self.kind.measure_before_confirm {
                vec![]
            } else {
                vec![h]
            };
            log.act(0, at, ActionKind::Deliver, awaited);
        }
        TrialResult {
            delivered: true,
            completion_time: to_s(at),
            output_state: state,
            pairs_consumed: 1,
            attempts: k,
            steps_completed: 0,
            restarts: 0,
            filtered: 0,
            final_round_start: 0.0,
            main_arrival: to_s(arrival),
            storage_time: to_s(wait),
        }
    }

    fn first_tick_after(&self, t: Ps) -> u64 {
        if t < self.pd + self.period {
            1
        } else {
            (t - self.pd) / self.period + 1
        }
    }

    fn timeline(&self, start: Ps, rng: &mut ChaCha8Rng, tl: &mut Timeline) {
        let proto = self.kind.protocol;
        let hd = self.hd;
        tl.reset(start, self.circuit.memories(), self.circuit.num_pairs());
        let mut free = std::mem::take(&mut tl.free);
        let mut cursor = 0u64;
        let mut fails = 0u32;

        let mut capture = |tl: &mut Timeline, free: &mut Vec<(Ps, Freed)>| loop {
            let (slot, tick) = free
                .iter()
                .enumerate()
                .map(|(i, &(f, _))| (i, self.first_tick_after(f).max(cursor + 1)))
                .min_by_key(|&(i, t)| (t, i))
                .expect("circuit memory budget guarantees a free slot");
            let (_, freed) = free.remove(slot);
            cursor = tick;
            let arrival = tick * self.period + self.pd;
            let q = tl.pairs.len();
            let lost = self.p < 1.0 && draw(rng, loss_word(q, fails)) >= self.p;
            tl.attempts.push(Attempt {
                pair: q,
                tick,
                arrival,
                lost,
                freed,
            });
            if proto == Protocol::Opt {
                tl.pairs.push(PairInfo {
                    arrival,
                    usable: arrival,
                });
                if lost {
                    let k = arrival + hd;
                    tl.loss_k = Some(tl.loss_k.map_or(k, |x| x.min(k)));
                }
                fails = 0;
                return;
            }
            if lost {
                free.push((arrival + hd, Freed::Lost(tl.attempts.len() - 1)));
                fails += 1;
            } else {
                tl.pairs.push(PairInfo {
                    arrival,
                    usable: arrival + hd,
                });
                fails = 0;
                return;
            }
        };

        let mut last_done = start;
        let mut outcome_wait = start;
        for (i, ins) in self.circuit.instructions().iter().enumerate() {
            let (a, b) = ins.pairs();
            let need = a.max(b.unwrap_or(0));
            while tl.pairs.len() <= need {
                capture(tl, &mut free);
            }
            let mut t = last_done.max(tl.pairs[a].usable);
            if let Some(b) = b {
                t = t.max(tl.pairs[b].usable);
            }
            if proto == Protocol::Base {
                t = t.max(outcome_wait);
            }
            let done = t + self.durations[i];
            if matches!(ins, Instruction::Measure { .. }) {
                outcome_wait = outcome_wait.max(done + hd);
                tl.last_msg = tl.last_msg.max(done + hd);
                free.push((
                    if proto == Protocol::Base { done + hd } else { done },
                    Freed::Measured(i),
                ));
            }
            tl.op_start.push(t);
            tl.op_done.push(done);
            last_done = done;
        }
        let kept = self.kept;
        while tl.pairs.len() <= kept {
            capture(tl, &mut free);
        }
        tl.last_local = last_done.max(tl.pairs[kept].usable);
        for p in &tl.pairs {
            tl.last_msg = tl.last_msg.max(p.arrival + hd);
        }
        tl.free = free;
    }

    fn run_round(
        &mut self,
        start: Ps,
        round: u32,
        rng: &mut ChaCha8Rng,
        log: Option<&mut EventLog>,
    ) -> Result<RoundOutcome> {
        let mut tl = std::mem::take(&mut self.scratch);
        self.timeline(start, rng, &mut tl);
        let hd = self.hd;
        let mut k_min = tl.loss_k.unwrap_or(Ps::MAX);
        let mut mismatch = std::mem::take(&mut tl.mismatch);
        let mut touched = std::mem::take(&mut tl.touched);

        let kept = self.kept;
        let mut kept_storage: Ps = 0;
        let mut cur_id = 0u64;
        let mut cur: Arc<PairRegister> = Arc::new(PairRegister::empty());
        let mut completed = true;

        for (i, ins) in self.circuit.instructions().iter().enumerate() {
            let t = tl.op_start[i];
            if t.saturating_add(hd) >= k_min {
                completed = false;
                break;
            }
            let (a, b) = ins.pairs();
            let mut dts = [NONE_DT; 2];
            for (slot, p) in std::iter::once(a).chain(b).enumerate() {
                let since = touched[p].unwrap_or(tl.pairs[p].arrival);
                dts[slot] = t - since;
                if p == kept {
                    kept_storage += t - since;
                }
                touched[p] = Some(t);
            }
            let key = (cur_id, i as u32, dts[0], dts[1]);
            let p_keep = match self.memo.map.get(&key) {
                Some(e) => {
                    cur_id = e.id;
                    cur = e.reg.clone();
                    e.p_keep
                }
                None => {
                    let mut reg = (*cur).clone();
                    for (slot, p) in std::iter::once(a).chain(b).enumerate() {
                        let dt = to_s(dts[slot]);
                        if reg.contains_pair(p) {
                            let qa = reg.position(p, Side::Alice)?;
                            let qb = reg.position(p, Side::Bob)?;
                            reg.decohere(&[qa, qb], dt, &self.np)?;
                        } else {
                            reg.push_pair(p, &decohere_pair(&self.werner, dt, &self.np)?);
                        }
                    }
                    let p_keep = apply_coarse(&mut reg, ins, &self.np)?;
                    let reg = Arc::new(reg);
                    cur_id = self.memo.insert(key, reg.clone(), p_keep);
                    cur = reg;
                    p_keep
                }
            };
            if let Some(step) = self.meas_step[i] {
                if draw(rng, meas_word(step)) >= p_keep {
                    mismatch.push(step);
                    k_min = k_min.min(tl.op_done[i] + hd);
                }
            }
        }

        let mbc = self.kind.measure_before_confirm;
        let end = if k_min != Ps::MAX {
            if !mbc || k_min <= tl.last_local {
                RoundEnd::Fail { at: k_min }
            } else {
                RoundEnd::Filtered { at: tl.last_local }
            }
        } else {
            debug_assert!(completed);
            let at = if mbc {
                tl.last_local
            } else {
                tl.last_local.max(tl.last_msg)
            };
            let since = touched[kept].unwrap_or(tl.pairs[kept].arrival);
            kept_storage += at - since;
            let state = if cur.contains_pair(kept) {
                let pair = (*cur).clone().into_pair()?;
                decohere_pair(&pair, to_s(at - since), &self.np)?
            } else {
                decohere_pair(&self.werner, to_s(at - since), &self.np)?
            };
            RoundEnd::Deliver {
                at,
                state,
                storage: kept_storage,
            }
        };

        if let Some(log) = log {
            self.log_round(log, round, &tl, &mismatch, &end);
        }
        let out = RoundOutcome {
            end,
            pairs: tl.pairs.len() as u64,
            attempts: tl.attempts.len() as u64,
            main_arrival: tl.pairs[kept].arrival,
        };
        tl.mismatch = mismatch;
        tl.touched = touched;
        self.scratch = tl;
        Ok(out)
    }

    fn log_round(&self, log: &mut EventLog, round: u32, tl: &Timeline, mismatch: &[usize], end: &RoundEnd) {
        let hd = self.hd;
        let proto = self.kind.protocol;
        let delivered = matches!(end, RoundEnd::Deliver { .. });
        let end_time = match *end {
            RoundEnd::Deliver { at, .. } | RoundEnd::Fail { at } | RoundEnd::Filtered { at } => at,
        };
        let n_ops = if delivered {
            tl.op_start.len()
        } else {
            tl.op_start.iter().take_while(|&&t| t < end_time).count()
        };

        let mut attempt_msg = Vec::with_capacity(tl.attempts.len());
        let mut herald: Vec<Option<usize>> = vec![None; tl.pairs.len()];
        let mut fail_msgs: Vec<(Ps, usize)> = Vec::new();
        for at in &tl.attempts {
            let (send, arrive) = (at.arrival, at.arrival + hd);
            let id = if at.lost {
                let id = log.send(round, send, arrive, MessageKind::HeraldFail { pair: at.pair });
                if proto == Protocol::Opt {
                    fail_msgs.push((arrive, id));
                }
                id
            } else {
                let id = log.send(round, send, arrive, MessageKind::HeraldOk { pair: at.pair });
                herald[at.pair] = Some(id);
                id
            };
            attempt_msg.push(id);
        }
        let mut outcome_msg: Vec<Option<usize>> = vec![None; tl.op_start.len()];
        for i in 0..n_ops {
            if let Some(step) = self.meas_step[i] {
                let m = tl.op_done[i];
                let ok = !mismatch.contains(&step);
                let id = log.send(round, m, m + hd, MessageKind::PurifyOutcome { step, ok });
                outcome_msg[i] = Some(id);
                if !ok {
                    fail_msgs.push((m + hd, id));
                }
            }
        }

        for at in &tl.attempts {
            let awaited = match at.freed {
                Freed::Start => vec![],
                Freed::Lost(j) => vec![attempt_msg[j]],
                Freed::Measured(i) if proto == Protocol::Base => outcome_msg[i].into_iter().collect(),
                Freed::Measured(_) => vec![],
            };
            if at.arrival < end_time || delivered {
                log.act(
                    round,
                    at.arrival,
                    ActionKind::Capture {
                        pair: at.pair,
                        tick: at.tick,
                        lost: at.lost,
                    },
                    awaited,
                );
            }
        }
        for (i, ins) in self.circuit.instructions().iter().enumerate().take(n_ops) {
            let mut awaited = Vec::new();
            if proto != Protocol::Opt {
                let (a, b) = ins.pairs();
                awaited.extend(std::iter::once(a).chain(b).filter_map(|p| herald[p]));
            }
            if proto == Protocol::Base {
                awaited.extend(outcome_msg[..i].iter().flatten().copied());
            }
            log.act(round, tl.op_start[i], ActionKind::Operation { index: i }, awaited);
        }
        let first_fail = fail_msgs.iter().min_by_key(|(k, _)| *k).map(|&(_, id)| id);
        match *end {
            RoundEnd::Deliver { at, .. } => {
                let awaited = if self.kind.measure_before_confirm {
                    vec![]
                } else {
                    herald
                        .iter()
                        .flatten()
                        .chain(outcome_msg.iter().flatten())
                        .copied()
                        .collect()
                };
                log.act(round, at, ActionKind::Deliver, awaited);
            }
            RoundEnd::Fail { at } => {
                log.act(round, at, ActionKind::Restart, first_fail.into_iter().collect());
            }
            RoundEnd::Filtered { at } => {
                log.act(round, at, ActionKind::Deliver, vec![]);
                if let Some(id) = first_fail {
                    let k = to_ps(log.messages[id].arrival_time);
                    log.act(round, k, ActionKind::Filter, vec![id]);
                }
            }
        }
    }
}
