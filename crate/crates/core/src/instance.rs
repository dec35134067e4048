//! Job-shop instances, schedules, the two instance file layouts, and the
//! optimal-gap metric.

use std::fmt::{self, Write as _};
use std::num::NonZeroUsize;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Integer time units. All scheduling arithmetic is exact.
pub type Time = u32;

/// Inclusive range for generated processing times.
pub const MIN_GENERATED_DURATION: Time = 1;
pub const MAX_GENERATED_DURATION: Time = 99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Operation {
    /// 0-based machine index.
    pub machine: usize,
    pub duration: Time,
}

/// A validated job-shop instance.
///
/// Each job is an ordered list of operations; the order is the mandatory
/// precedence order. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct JsspInstance {
    num_machines: usize,
    jobs: Vec<Vec<Operation>>,
    offsets: Vec<usize>,
}

#[derive(Debug, Error, PartialEq)]
pub enum InstanceError {
    #[error("instance has no jobs")]
    NoJobs,
    #[error("instance has no machines")]
    NoMachines,
    #[error("job {0} has no operations")]
    EmptyJob(usize),
    #[error("job {job} operation {op}: machine {machine} out of range (m = {machines})")]
    MachineOutOfRange {
        job: usize,
        op: usize,
        machine: usize,
        machines: usize,
    },
    #[error("job {job} operation {op}: duration must be positive")]
    ZeroDuration { job: usize, op: usize },
    #[error("schedule does not cover every operation")]
    IncompleteSchedule,
    #[error("reference makespan must be positive, got {0}")]
    NonPositiveReference(f64),
}

impl JsspInstance {
    pub fn new(num_machines: usize, jobs: Vec<Vec<Operation>>) -> Result<Self, InstanceError> {
        if jobs.is_empty() {
            return Err(InstanceError::NoJobs);
        }
        if num_machines == 0 {
            return Err(InstanceError::NoMachines);
        }
        for (j, ops) in jobs.iter().enumerate() {
            if ops.is_empty() {
                return Err(InstanceError::EmptyJob(j));
            }
            for (i, op) in ops.iter().enumerate() {
                if op.machine >= num_machines {
                    return Err(InstanceError::MachineOutOfRange {
                        job: j,
                        op: i,
                        machine: op.machine,
                        machines: num_machines,
                    });
                }
                if op.duration == 0 {
                    return Err(InstanceError::ZeroDuration { job: j, op: i });
                }
            }
        }
        let mut offsets = Vec::with_capacity(jobs.len() + 1);
        let mut acc = 0;
        for ops in &jobs {
            offsets.push(acc);
            acc += ops.len();
        }
        offsets.push(acc);
        Ok(Self {
            num_machines,
            jobs,
            offsets,
        })
    }

    /// Builds an instance from `(machine, duration)` rows. Convenience for tests.
    pub fn from_rows(num_machines: usize, rows: &[&[(usize, Time)]]) -> Result<Self, InstanceError> {
        let jobs = rows
            .iter()
            .map(|r| {
                r.iter()
                    .map(|&(machine, duration)| Operation { machine, duration })
                    .collect()
            })
            .collect();
        Self::new(num_machines, jobs)
    }

    pub fn num_jobs(&self) -> usize {
        self.jobs.len()
    }

    pub fn num_machines(&self) -> usize {
        self.num_machines
    }

    pub fn jobs(&self) -> &[Vec<Operation>] {
        &self.jobs
    }

    pub fn job(&self, j: usize) -> &[Operation] {
        &self.jobs[j]
    }

    pub fn op(&self, job: usize, index: usize) -> Operation {
        self.jobs[job][index]
    }

    pub fn num_ops(&self) -> usize {
        self.offsets[self.jobs.len()]
    }

    /// Flat index of operation `index` of `job`, in job-major order.
    pub fn flat_index(&self, job: usize, index: usize) -> usize {
        self.offsets[job] + index
    }

    /// Inverse of [`flat_index`](Self::flat_index).
    pub fn unflatten(&self, flat: usize) -> (usize, usize) {
        let job = self.offsets.partition_point(|&o| o <= flat) - 1;
        (job, flat - self.offsets[job])
    }

    pub fn max_duration(&self) -> Time {
        self.jobs
            .iter()
            .flatten()
            .map(|o| o.duration)
            .max()
            .unwrap_or(1)
    }

    pub fn max_ops_per_job(&self) -> usize {
        self.jobs.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn job_work(&self, job: usize) -> Time {
        self.jobs[job].iter().map(|o| o.duration).sum()
    }

    pub fn machine_load(&self, machine: usize) -> Time {
        self.jobs
            .iter()
            .flatten()
            .filter(|o| o.machine == machine)
            .map(|o| o.duration)
            .sum()
    }

    /// max(longest job, busiest machine): a makespan lower bound.
    pub fn trivial_lower_bound(&self) -> Time {
        let jobs = (0..self.num_jobs()).map(|j| self.job_work(j)).max();
        let machines = (0..self.num_machines).map(|k| self.machine_load(k)).max();
        jobs.into_iter().chain(machines).max().unwrap_or(0)
    }

    /// Scale applied to time-valued network features: max duration times
    /// the longest job's operation count.
    pub fn time_scale(&self) -> f64 {
        f64::from(self.max_duration()) * self.max_ops_per_job() as f64
    }

    /// Serializes to the standard layout accepted by [`parse_standard`].
    pub fn to_standard_string(&self) -> String {
        let mut s = format!("{} {}\n", self.num_jobs(), self.num_machines);
        for ops in &self.jobs {
            let row: Vec<String> = ops
                .iter()
                .map(|o| format!("{} {}", o.machine, o.duration))
                .collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }
}

/// Start time of every operation, indexed `[job][op]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Schedule {
    starts: Vec<Vec<Time>>,
}

impl Schedule {
    pub fn new(starts: Vec<Vec<Time>>) -> Self {
        Self { starts }
    }

    pub fn starts(&self) -> &[Vec<Time>] {
        &self.starts
    }

    pub fn start(&self, job: usize, op: usize) -> Time {
        self.starts[job][op]
    }

    fn covers(&self, instance: &JsspInstance) -> bool {
        self.starts.len() == instance.num_jobs()
            && self
                .starts
                .iter()
                .zip(instance.jobs())
                .all(|(s, ops)| s.len() == ops.len())
    }
}

/// C_max: the latest completion over all jobs.
pub fn makespan(instance: &JsspInstance, schedule: &Schedule) -> Result<Time, InstanceError> {
    if !schedule.covers(instance) {
        return Err(InstanceError::IncompleteSchedule);
    }
    Ok(schedule
        .starts
        .iter()
        .zip(instance.jobs())
        .flat_map(|(s, ops)| s.iter().zip(ops).map(|(&t, o)| t + o.duration))
        .max()
        .unwrap_or(0))
}

/// An `(job, op)` pair.
pub type OpRef = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// The schedule has the wrong shape for the instance.
    Shape,
    /// `later` starts before `earlier` (its job predecessor) completes.
    Precedence { earlier: OpRef, later: OpRef },
    /// Two operations overlap on `machine`.
    MachineOverlap {
        machine: usize,
        first: OpRef,
        second: OpRef,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape => write!(f, "schedule shape does not match instance"),
            Violation::Precedence { earlier, later } => write!(
                f,
                "precedence: job {} op {} starts before op {} completes",
                later.0, later.1, earlier.1
            ),
            Violation::MachineOverlap {
                machine,
                first,
                second,
            } => write!(
                f,
                "machine {machine}: ({},{}) overlaps ({},{})",
                first.0, first.1, second.0, second.1
            ),
        }
    }
}

/// Every precedence and machine-exclusivity violation in `schedule`.
pub fn validate_schedule(instance: &JsspInstance, schedule: &Schedule) -> Vec<Violation> {
    if !schedule.covers(instance) {
        return vec![Violation::Shape];
    }
    let mut out = Vec::new();
    let mut per_machine: Vec<Vec<(Time, Time, OpRef)>> = vec![Vec::new(); instance.num_machines()];
    for (j, ops) in instance.jobs().iter().enumerate() {
        for (i, op) in ops.iter().enumerate() {
            let start = schedule.start(j, i);
            if i > 0 {
                let prev_end = schedule.start(j, i - 1) + ops[i - 1].duration;
                if start < prev_end {
                    out.push(Violation::Precedence {
                        earlier: (j, i - 1),
                        later: (j, i),
                    });
                }
            }
            per_machine[op.machine].push((start, start + op.duration, (j, i)));
        }
    }
    for (machine, intervals) in per_machine.iter_mut().enumerate() {
        intervals.sort_unstable();
        for a in 0..intervals.len() {
            for b in a + 1..intervals.len() {
                let (sa, ea, ra) = intervals[a];
                let (sb, _, rb) = intervals[b];
                if sb >= ea {
                    break;
                }
                debug_assert!(sa <= sb);
                out.push(Violation::MachineOverlap {
                    machine,
                    first: ra,
                    second: rb,
                });
            }
        }
    }
    out
}

/// Optimal gap in percent: `(achieved / reference - 1) * 100`.
///
/// Negative when `achieved` beats the reference.
pub fn optimal_gap(achieved: f64, reference: f64) -> Result<f64, InstanceError> {
    if !(reference > 0.0) || !reference.is_finite() {
        return Err(InstanceError::NonPositiveReference(reference));
    }
    // Scaling the difference first keeps integer percentages exact.
    Ok(100.0 * (achieved - reference) / reference)
}

/// Uniformly random instance: each job visits every machine once in a random
/// order with durations drawn i.i.d. from `1..=99`. Deterministic in `seed`.
pub fn generate_instance(jobs: NonZeroUsize, machines: NonZeroUsize, seed: u64) -> JsspInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = machines.get();
    let rows = (0..jobs.get())
        .map(|_| {
            let mut order: Vec<usize> = (0..m).collect();
            order.shuffle(&mut rng);
            order
                .into_iter()
                .map(|machine| Operation {
                    machine,
                    duration: rng.gen_range(MIN_GENERATED_DURATION..=MAX_GENERATED_DURATION),
                })
                .collect()
        })
        .collect();
    JsspInstance::new(m, rows).expect("generated instance is valid")
}

/// Same as [`generate_instance`] with plain sizes; panics on zero.
pub fn generate(jobs: usize, machines: usize, seed: u64) -> JsspInstance {
    generate_instance(
        NonZeroUsize::new(jobs).expect("jobs >= 1"),
        NonZeroUsize::new(machines).expect("machines >= 1"),
        seed,
    )
}

// ---------------------------------------------------------------------------
// Parsing

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {kind}")]
pub struct ParseError {
    /// 1-based line number, 0 when the error concerns the whole file.
    pub line: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseErrorKind {
    #[error("empty input")]
    Empty,
    #[error("malformed header: expected `jobs machines`")]
    MalformedHeader,
    #[error("invalid number `{0}`")]
    InvalidNumber(String),
    #[error("job count mismatch: header says {expected}, found {found} rows")]
    JobCountMismatch { expected: usize, found: usize },
    #[error("row must hold a positive number of (machine, duration) pairs, got {0} tokens")]
    BadPairCount(usize),
    #[error("machine {machine} out of range (m = {machines})")]
    MachineOutOfRange { machine: i64, machines: usize },
    #[error("non-positive duration {0}")]
    NonPositiveDuration(i64),
    #[error("matrix dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("machine row is not a permutation of 1..={0}")]
    NotAPermutation(usize),
    #[error("comments are not allowed in this format")]
    CommentNotAllowed,
}

fn err(line: usize, kind: ParseErrorKind) -> ParseError {
    ParseError { line, kind }
}

fn parse_numbers(line_no: usize, line: &str) -> Result<Vec<i64>, ParseError> {
    line.split_whitespace()
        .map(|t| {
            t.parse::<i64>()
                .map_err(|_| err(line_no, ParseErrorKind::InvalidNumber(t.to_string())))
        })
        .collect()
}

/// Parses the standard layout: header `n m`, then `n` rows of
/// `machine duration` pairs with 0-based machines. Lines starting with `#`
/// and blank lines are skipped.
pub fn parse_standard(text: &str) -> Result<JsspInstance, ParseError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (hline, header) = lines.next().ok_or_else(|| err(0, ParseErrorKind::Empty))?;
    let dims = parse_numbers(hline, header).map_err(|_| err(hline, ParseErrorKind::MalformedHeader))?;
    if dims.len() != 2 || dims[0] < 1 || dims[1] < 1 {
        return Err(err(hline, ParseErrorKind::MalformedHeader));
    }
    let (n, m) = (dims[0] as usize, dims[1] as usize);

    let rows: Vec<(usize, &str)> = lines.collect();
    if rows.len() != n {
        let line = rows.get(n).map_or(hline, |r| r.0);
        return Err(err(
            line,
            ParseErrorKind::JobCountMismatch {
                expected: n,
                found: rows.len(),
            },
        ));
    }
    let mut jobs = Vec::with_capacity(n);
    for (line_no, row) in rows {
        let nums = parse_numbers(line_no, row)?;
        if nums.is_empty() || nums.len() % 2 != 0 {
            return Err(err(line_no, ParseErrorKind::BadPairCount(nums.len())));
        }
        let ops = nums
            .chunks_exact(2)
            .map(|p| checked_op(line_no, p[0], p[1], m))
            .collect::<Result<Vec<_>, _>>()?;
        jobs.push(ops);
    }
    Ok(JsspInstance::new(m, jobs).expect("rows validated during parsing"))
}

fn checked_op(line: usize, machine: i64, duration: i64, m: usize) -> Result<Operation, ParseError> {
    if machine < 0 || machine as usize >= m {
        return Err(err(
            line,
            ParseErrorKind::MachineOutOfRange {
                machine,
                machines: m,
            },
        ));
    }
    if duration <= 0 || duration > i64::from(Time::MAX) {
        return Err(err(line, ParseErrorKind::NonPositiveDuration(duration)));
    }
    Ok(Operation {
        machine: machine as usize,
        duration: duration as Time,
    })
}

/// Parses the Taillard layout: an `n x m` processing-times matrix followed by
/// an `n x m` matrix of 1-based machine indices.
///
/// Accepts the published files' label lines (`Times`, `Machines`, the
/// `Nb of jobs, ...` banner) and an optional numeric header whose first two
/// values are `n m`. A bare body with no header is also accepted, in which
/// case `n` is half the row count. Every machine row must be a permutation.
pub fn parse_taillard(text: &str) -> Result<JsspInstance, ParseError> {
    let mut numeric: Vec<(usize, Vec<i64>)> = Vec::new();
    let mut times_marker: Option<usize> = None;
    let mut machines_marker: Option<usize> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            return Err(err(line_no, ParseErrorKind::CommentNotAllowed));
        }
        if line.chars().any(|c| c.is_ascii_alphabetic()) {
            let lower = line.to_ascii_lowercase();
            if lower.starts_with("times") {
                times_marker = Some(numeric.len());
            } else if lower.starts_with("machines") {
                machines_marker = Some(numeric.len());
            }
            continue;
        }
        numeric.push((line_no, parse_numbers(line_no, line)?));
    }
    if numeric.is_empty() {
        return Err(err(0, ParseErrorKind::Empty));
    }

    let (header, body_start, split) = match (times_marker, machines_marker) {
        (Some(t), Some(mk)) => {
            let header = if t > 0 { Some(&numeric[0]) } else { None };
            (header, t, Some(mk))
        }
        (None, None) => {
            let first_cols = numeric[0].1.len();
            let rest_cols = numeric.get(1).map(|r| r.1.len());
            let has_header = numeric.len() % 2 == 1 || rest_cols.is_some_and(|c| c != first_cols);
            if has_header {
                (Some(&numeric[0]), 1, None)
            } else {
                (None, 0, None)
            }
        }
        _ => {
            return Err(err(
                0,
                ParseErrorKind::DimensionMismatch("need both `Times` and `Machines` sections".into()),
            ))
        }
    };

    let body = &numeric[body_start..];
    let split = split.map_or(body.len() / 2, |s| s - body_start);
    let (times, machines) = body.split_at(split);

    let (n, m) = match header {
        Some((line, h)) => {
            if h.len() < 2 || h[0] < 1 || h[1] < 1 {
                return Err(err(*line, ParseErrorKind::MalformedHeader));
            }
            (h[0] as usize, h[1] as usize)
        }
        None => {
            let m = times.first().map_or(0, |r| r.1.len());
            (times.len(), m)
        }
    };
    if n == 0 || m == 0 {
        return Err(err(0, ParseErrorKind::Empty));
    }
    if times.len() != n || machines.len() != n {
        return Err(err(
            body.first().map_or(0, |r| r.0),
            ParseErrorKind::DimensionMismatch(format!(
                "expected {n} rows per matrix, found {} times and {} machines",
                times.len(),
                machines.len()
            )),
        ));
    }
    for (line, row) in times.iter().chain(machines) {
        if row.len() != m {
            return Err(err(
                *line,
                ParseErrorKind::DimensionMismatch(format!("expected {m} columns, found {}", row.len())),
            ));
        }
    }

    let mut jobs = Vec::with_capacity(n);
    for ((_, trow), (mline, mrow)) in times.iter().zip(machines) {
        let mut seen = vec![false; m];
        let mut ops = Vec::with_capacity(m);
        for (&p, &k) in trow.iter().zip(mrow) {
            let op = checked_op(*mline, k - 1, p, m).map_err(|e| match e.kind {
                ParseErrorKind::MachineOutOfRange { machines, .. } => err(
                    *mline,
                    ParseErrorKind::MachineOutOfRange {
                        machine: k,
                        machines,
                    },
                ),
                _ => e,
            })?;
            if std::mem::replace(&mut seen[op.machine], true) {
                return Err(err(*mline, ParseErrorKind::NotAPermutation(m)));
            }
            ops.push(op);
        }
        jobs.push(ops);
    }
    Ok(JsspInstance::new(m, jobs).expect("rows validated during parsing"))
}

/// Instance file layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstanceFormat {
    Standard,
    Taillard,
}

/// Picks the layout: any `Times`/`Machines` label means Taillard, otherwise
/// standard.
pub fn detect_format(text: &str) -> InstanceFormat {
    let labelled = text.lines().any(|l| {
        let l = l.trim_start().to_ascii_lowercase();
        l.starts_with("times") || l.starts_with("machines")
    });
    if labelled {
        InstanceFormat::Taillard
    } else {
        InstanceFormat::Standard
    }
}

pub fn parse(text: &str, format: InstanceFormat) -> Result<JsspInstance, ParseError> {
    match format {
        InstanceFormat::Standard => parse_standard(text),
        InstanceFormat::Taillard => parse_taillard(text),
    }
}

/// Renders `job op machine start duration` lines and a trailing
/// `makespan V` line.
pub fn format_schedule(instance: &JsspInstance, schedule: &Schedule) -> Result<String, InstanceError> {
    let cmax = makespan(instance, schedule)?;
    let mut out = String::new();
    for (j, ops) in instance.jobs().iter().enumerate() {
        for (i, op) in ops.iter().enumerate() {
            let _ = writeln!(out, "{j} {i} {} {} {}", op.machine, schedule.start(j, i), op.duration);
        }
    }
    let _ = writeln!(out, "makespan {cmax}");
    Ok(out)
}

/// Reads back [`format_schedule`] output.
pub fn parse_schedule_export(instance: &JsspInstance, text: &str) -> Result<Schedule, ParseError> {
    let mut starts: Vec<Vec<Option<Time>>> = instance.jobs().iter().map(|o| vec![None; o.len()]).collect();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with("makespan") {
            continue;
        }
        let nums = parse_numbers(line_no, line)?;
        if nums.len() != 5 {
            return Err(err(line_no, ParseErrorKind::BadPairCount(nums.len())));
        }
        let (j, o, start) = (nums[0], nums[1], nums[3]);
        let slot = usize::try_from(j)
            .ok()
            .and_then(|j| starts.get_mut(j))
            .and_then(|row| usize::try_from(o).ok().and_then(|o| row.get_mut(o)))
            .ok_or_else(|| err(line_no, ParseErrorKind::DimensionMismatch(format!("no operation ({j},{o})"))))?;
        let start = Time::try_from(start).map_err(|_| err(line_no, ParseErrorKind::InvalidNumber(start.to_string())))?;
        *slot = Some(start);
    }
    let starts = starts
        .into_iter()
        .map(|row| row.into_iter().collect::<Option<Vec<_>>>())
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| err(0, ParseErrorKind::DimensionMismatch("missing operations".into())))?;
    Ok(Schedule::new(starts))
}
