//! Label source: an exact branch-and-bound solver, a brute-force enumerator
//! used as a test oracle, and classical dispatching rules.
//!
//! All solvers share the append semantics of [`SchedState`]: an operation is
//! placed at `max(job ready, machine ready)` after whatever its machine already
//! holds. Starting from an empty state this loses nothing, since every
//! semi-active schedule can be built by appending operations in start order.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::instance::{JsspInstance, Schedule, Time};
use crate::state::SchedState;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProofStatus {
    Optimal,
    Feasible,
}

impl fmt::Display for ProofStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProofStatus::Optimal => "optimal",
            ProofStatus::Feasible => "feasible",
        })
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub schedule: Schedule,
    pub makespan: Time,
    pub status: ProofStatus,
    pub nodes: u64,
    pub wall_time: Duration,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("brute force is limited to {limit} operations, instance has {ops}")]
    TooLarge { ops: usize, limit: usize },
    #[error("unknown rule `{0}` (expected spt, mwkr or fifo)")]
    UnknownRule(String),
}

/// Search budget. Hitting either limit downgrades the result to feasible.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolveLimits {
    pub time_limit: Option<Duration>,
    pub node_limit: Option<u64>,
}

impl Default for SolveLimits {
    fn default() -> Self {
        Self {
            time_limit: Some(Duration::from_secs(10)),
            node_limit: None,
        }
    }
}

impl SolveLimits {
    pub fn with_time_limit(seconds: f64) -> Self {
        Self {
            time_limit: Some(Duration::from_secs_f64(seconds)),
            node_limit: None,
        }
    }

    pub fn unlimited() -> Self {
        Self {
            time_limit: None,
            node_limit: None,
        }
    }
}

/// Mutable partial schedule used by every solver here.
#[derive(Debug, Clone)]
struct Partial<'a> {
    inst: &'a JsspInstance,
    next: Vec<usize>,
    job_ready: Vec<Time>,
    mach_ready: Vec<Time>,
    starts: Vec<Option<Time>>,
    remaining: usize,
}

impl<'a> Partial<'a> {
    fn empty(inst: &'a JsspInstance) -> Self {
        Self {
            inst,
            next: vec![0; inst.num_jobs()],
            job_ready: vec![0; inst.num_jobs()],
            mach_ready: vec![0; inst.num_machines()],
            starts: vec![None; inst.num_ops()],
            remaining: inst.num_ops(),
        }
    }

    fn from_state(state: &'a SchedState) -> Self {
        let inst = state.instance();
        let n = inst.num_jobs();
        Self {
            inst,
            next: (0..n).map(|j| state.next_op(j)).collect(),
            job_ready: (0..n).map(|j| state.job_time(j)).collect(),
            mach_ready: (0..inst.num_machines()).map(|k| state.machine_time(k)).collect(),
            starts: state.starts().to_vec(),
            remaining: state.pending_ops(),
        }
    }

    fn done(&self, j: usize) -> bool {
        self.next[j] >= self.inst.job(j).len()
    }

    fn est(&self, j: usize) -> Time {
        let op = self.inst.op(j, self.next[j]);
        self.job_ready[j].max(self.mach_ready[op.machine])
    }

    /// Places job `j`'s next operation; returns what [`undo`](Self::undo) needs.
    fn place(&mut self, j: usize) -> (Time, Time) {
        let i = self.next[j];
        let op = self.inst.op(j, i);
        let saved = (self.job_ready[j], self.mach_ready[op.machine]);
        let start = saved.0.max(saved.1);
        self.starts[self.inst.flat_index(j, i)] = Some(start);
        self.job_ready[j] = start + op.duration;
        self.mach_ready[op.machine] = start + op.duration;
        self.next[j] += 1;
        self.remaining -= 1;
        saved
    }

    fn undo(&mut self, j: usize, saved: (Time, Time)) {
        self.next[j] -= 1;
        let i = self.next[j];
        let op = self.inst.op(j, i);
        self.starts[self.inst.flat_index(j, i)] = None;
        self.job_ready[j] = saved.0;
        self.mach_ready[op.machine] = saved.1;
        self.remaining += 1;
    }

    fn makespan(&self) -> Time {
        self.job_ready.iter().copied().max().unwrap_or(0)
    }

    fn schedule(&self) -> Schedule {
        let starts = self
            .inst
            .jobs()
            .iter()
            .enumerate()
            .map(|(j, ops)| {
                (0..ops.len())
                    .map(|i| self.starts[self.inst.flat_index(j, i)].expect("complete"))
                    .collect()
            })
            .collect();
        Schedule::new(starts)
    }
}

// ---------------------------------------------------------------------------
// Dispatching rules

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DispatchRule {
    /// Shortest processing time.
    Spt,
    /// Most work remaining.
    Mwkr,
    /// First in, first out: earliest job ready time.
    Fifo,
}

impl DispatchRule {
    pub const ALL: [DispatchRule; 3] = [DispatchRule::Spt, DispatchRule::Mwkr, DispatchRule::Fifo];

    pub fn name(self) -> &'static str {
        match self {
            DispatchRule::Spt => "spt",
            DispatchRule::Mwkr => "mwkr",
            DispatchRule::Fifo => "fifo",
        }
    }
}

impl FromStr for DispatchRule {
    type Err = OracleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "spt" => Ok(DispatchRule::Spt),
            "mwkr" => Ok(DispatchRule::Mwkr),
            "fifo" => Ok(DispatchRule::Fifo),
            other => Err(OracleError::UnknownRule(other.to_string())),
        }
    }
}

fn remaining_work(p: &Partial<'_>, j: usize) -> Time {
    p.inst.job(j)[p.next[j]..].iter().map(|o| o.duration).sum()
}

fn dispatch_complete(p: &mut Partial<'_>, rule: DispatchRule) {
    let n = p.inst.num_jobs();
    while p.remaining > 0 {
        // Earliest moment any machine can start something, then the machine
        // achieving it (lowest index on ties).
        let (t_star, k_star) = (0..n)
            .filter(|&j| !p.done(j))
            .map(|j| (p.est(j), p.inst.op(j, p.next[j]).machine))
            .min()
            .expect("pending operations exist");
        let chosen = (0..n)
            .filter(|&j| !p.done(j))
            .filter(|&j| p.inst.op(j, p.next[j]).machine == k_star && p.est(j) == t_star)
            .min_by_key(|&j| match rule {
                DispatchRule::Spt => (p.inst.op(j, p.next[j]).duration as i64, j),
                DispatchRule::Mwkr => (-(remaining_work(p, j) as i64), j),
                DispatchRule::Fifo => (p.job_ready[j] as i64, j),
            })
            .expect("the argmin job is a candidate");
        p.place(chosen);
    }
}

/// Non-delay schedule: repeatedly, at the earliest moment a machine can start
/// work, run the ready operation the rule prefers.
pub fn dispatch_solve(instance: &JsspInstance, rule: DispatchRule) -> SolveResult {
    let t0 = Instant::now();
    let mut p = Partial::empty(instance);
    dispatch_complete(&mut p, rule);
    SolveResult {
        schedule: p.schedule(),
        makespan: p.makespan(),
        status: ProofStatus::Feasible,
        nodes: 0,
        wall_time: t0.elapsed(),
    }
}

/// Completes a partial state with a dispatching rule.
pub fn dispatch_from(state: &SchedState, rule: DispatchRule) -> SolveResult {
    let t0 = Instant::now();
    let mut p = Partial::from_state(state);
    dispatch_complete(&mut p, rule);
    SolveResult {
        schedule: p.schedule(),
        makespan: p.makespan(),
        status: ProofStatus::Feasible,
        nodes: 0,
        wall_time: t0.elapsed(),
    }
}

// ---------------------------------------------------------------------------
// Branch and bound

struct Search<'a> {
    p: Partial<'a>,
    /// `tail[flat]`: total duration of the job's operations after this one.
    tail: Vec<Time>,
    best: Time,
    best_starts: Vec<Option<Time>>,
    nodes: u64,
    limits: SolveLimits,
    started: Instant,
    aborted: bool,
    scratch: Vec<(Time, Time, Time)>,
}

impl<'a> Search<'a> {
    fn new(p: Partial<'a>, limits: SolveLimits) -> Self {
        let inst = p.inst;
        let mut tail = vec![0; inst.num_ops()];
        for (j, ops) in inst.jobs().iter().enumerate() {
            let mut acc = 0;
            for i in (0..ops.len()).rev() {
                tail[inst.flat_index(j, i)] = acc;
                acc += ops[i].duration;
            }
        }
        Self {
            p,
            tail,
            best: Time::MAX,
            best_starts: Vec::new(),
            nodes: 0,
            limits,
            started: Instant::now(),
            aborted: false,
            scratch: Vec::new(),
        }
    }

    fn offer(&mut self, makespan: Time, starts: &[Option<Time>]) {
        if makespan < self.best {
            self.best = makespan;
            self.best_starts = starts.to_vec();
        }
    }

    fn out_of_budget(&mut self) -> bool {
        if self.aborted {
            return true;
        }
        if let Some(limit) = self.limits.node_limit {
            if self.nodes >= limit {
                self.aborted = true;
            }
        }
        if self.nodes % 512 == 0 {
            if let Some(limit) = self.limits.time_limit {
                if self.started.elapsed() >= limit {
                    self.aborted = true;
                }
            }
        }
        self.aborted
    }

    fn lower_bound(&mut self) -> Time {
        let p = &self.p;
        let inst = p.inst;
        let mut lb = p.makespan();
        // Job bound.
        for j in 0..inst.num_jobs() {
            if !p.done(j) {
                let flat = inst.flat_index(j, p.next[j]);
                let op = inst.op(j, p.next[j]);
                lb = lb.max(p.est(j) + op.duration + self.tail[flat]);
            }
        }
        // One-machine bound with heads and tails (Jackson preemptive schedule).
        for k in 0..inst.num_machines() {
            self.scratch.clear();
            for j in 0..inst.num_jobs() {
                if p.done(j) {
                    continue;
                }
                let mut head = p.est(j);
                for (i, op) in inst.job(j).iter().enumerate().skip(p.next[j]) {
                    if op.machine == k {
                        let r = head.max(p.mach_ready[k]);
                        self.scratch.push((r, op.duration, self.tail[inst.flat_index(j, i)]));
                    }
                    head += op.duration;
                }
            }
            if !self.scratch.is_empty() {
                lb = lb.max(jackson_preemptive(&mut self.scratch));
            }
        }
        lb
    }

    fn dfs(&mut self) {
        self.nodes += 1;
        if self.out_of_budget() {
            return;
        }
        if self.p.remaining == 0 {
            let ms = self.p.makespan();
            let starts = self.p.starts.clone();
            self.offer(ms, &starts);
            return;
        }
        if self.lower_bound() >= self.best {
            return;
        }
        let inst = self.p.inst;
        let n = inst.num_jobs();
        // Giffler-Thompson: the operation with the earliest completion fixes
        // the machine; branch on every operation there that could start
        // before that completion.
        let (ect_star, k_star) = (0..n)
            .filter(|&j| !self.p.done(j))
            .map(|j| {
                let op = inst.op(j, self.p.next[j]);
                (self.p.est(j) + op.duration, op.machine)
            })
            .min()
            .expect("pending operations exist");
        let mut children: Vec<(Time, usize)> = (0..n)
            .filter(|&j| !self.p.done(j))
            .filter(|&j| inst.op(j, self.p.next[j]).machine == k_star && self.p.est(j) < ect_star)
            .map(|j| (self.p.est(j) + inst.op(j, self.p.next[j]).duration, j))
            .collect();
        children.sort_unstable();
        for (_, j) in children {
            let saved = self.p.place(j);
            self.dfs();
            self.p.undo(j, saved);
            if self.aborted {
                return;
            }
        }
    }
}

/// Optimal `max(C + q)` of a preemptive one-machine schedule with release
/// dates; a lower bound for the non-preemptive problem. Entries are
/// `(release, processing, tail)`.
fn jackson_preemptive(ops: &mut [(Time, Time, Time)]) -> Time {
    ops.sort_unstable_by_key(|o| o.0);
    let mut heap: BinaryHeap<(Time, Reverse<usize>, Time)> = BinaryHeap::new();
    let mut t = 0;
    let mut i = 0;
    let mut best = 0;
    while i < ops.len() || !heap.is_empty() {
        if heap.is_empty() {
            t = t.max(ops[i].0);
        }
        while i < ops.len() && ops[i].0 <= t {
            heap.push((ops[i].2, Reverse(i), ops[i].1));
            i += 1;
        }
        let (q, idx, rem) = heap.pop().expect("non-empty");
        let next_release = if i < ops.len() { ops[i].0 } else { Time::MAX };
        if t + rem <= next_release {
            t += rem;
            best = best.max(t + q);
        } else {
            let ran = next_release - t;
            t = next_release;
            heap.push((q, idx, rem - ran));
        }
    }
    best
}

fn run_search(p: Partial<'_>, limits: SolveLimits) -> SolveResult {
    let started = Instant::now();
    let mut search = Search::new(p, limits);
    search.started = started;
    // Incumbents from every dispatching rule.
    for rule in DispatchRule::ALL {
        let mut q = search.p.clone();
        dispatch_complete(&mut q, rule);
        let ms = q.makespan();
        search.offer(ms, &q.starts);
    }
    search.dfs();
    let mut done = search.p.clone();
    done.starts = search.best_starts.clone();
    SolveResult {
        schedule: done.schedule(),
        makespan: search.best,
        status: if search.aborted {
            ProofStatus::Feasible
        } else {
            ProofStatus::Optimal
        },
        nodes: search.nodes,
        wall_time: started.elapsed(),
    }
}

/// Depth-first branch and bound over active schedules. Returns the best
/// schedule found; `Optimal` only when the tree was exhausted.
pub fn solve_exact(instance: &JsspInstance, limits: SolveLimits) -> SolveResult {
    run_search(Partial::empty(instance), limits)
}

/// Best completion of a partial state, keeping its scheduled prefix fixed.
/// The returned schedule covers every operation.
pub fn solve_from(state: &SchedState, limits: SolveLimits) -> SolveResult {
    run_search(Partial::from_state(state), limits)
}

// ---------------------------------------------------------------------------
// Brute force

/// Operation-count ceiling for [`brute_force_small`].
pub const BRUTE_FORCE_LIMIT: usize = 16;

/// Exhaustive minimum over every schedule reachable by appending operations
/// (a superset of the active schedules). Identical partial states are
/// memoized, which keeps the enumeration exact.
pub fn brute_force_small(instance: &JsspInstance) -> Result<SolveResult, OracleError> {
    if instance.num_ops() > BRUTE_FORCE_LIMIT {
        return Err(OracleError::TooLarge {
            ops: instance.num_ops(),
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let started = Instant::now();
    let mut p = Partial::empty(instance);
    let mut memo: HashMap<Vec<Time>, Time> = HashMap::new();
    let mut nodes = 0u64;
    let best = brute_rec(&mut p, &mut memo, &mut nodes);

    // Walk the memo table back down to recover one optimal schedule.
    while p.remaining > 0 {
        let mut chosen = None;
        for j in 0..instance.num_jobs() {
            if p.done(j) {
                continue;
            }
            let saved = p.place(j);
            let v = brute_rec(&mut p, &mut memo, &mut nodes);
            p.undo(j, saved);
            if v == best {
                chosen = Some(j);
                break;
            }
        }
        p.place(chosen.expect("some child attains the optimum"));
    }
    Ok(SolveResult {
        schedule: p.schedule(),
        makespan: best,
        status: ProofStatus::Optimal,
        nodes,
        wall_time: started.elapsed(),
    })
}

fn brute_key(p: &Partial<'_>) -> Vec<Time> {
    p.next
        .iter()
        .map(|&x| x as Time)
        .chain(p.job_ready.iter().copied())
        .chain(p.mach_ready.iter().copied())
        .collect()
}

fn brute_rec(p: &mut Partial<'_>, memo: &mut HashMap<Vec<Time>, Time>, nodes: &mut u64) -> Time {
    if p.remaining == 0 {
        return p.makespan();
    }
    let key = brute_key(p);
    if let Some(&v) = memo.get(&key) {
        return v;
    }
    *nodes += 1;
    let mut best = Time::MAX;
    for j in 0..p.inst.num_jobs() {
        if p.done(j) {
            continue;
        }
        let saved = p.place(j);
        best = best.min(brute_rec(p, memo, nodes));
        p.undo(j, saved);
    }
    memo.insert(key, best);
    best
}
