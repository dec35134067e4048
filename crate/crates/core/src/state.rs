//! Scheduling environment: heterogeneous-graph state, feasible job-machine
//! pairs, the subset action space, and the transition function.
//!
//! A state keeps only pending operations as graph nodes. Time lives in the
//! per-job completion times `t_j` and per-machine completion times
//! `t_final_m`; there is no global clock.

use std::sync::Arc;

use thiserror::Error;

use crate::instance::{JsspInstance, Schedule, Time};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StateError {
    #[error("state is terminal")]
    Terminal,
    #[error("state is not terminal: {0} operations pending")]
    NotTerminal(usize),
    #[error("assignment subset is empty")]
    EmptySubset,
    #[error("machine {0} appears twice in the subset")]
    MachineConflict(usize),
    #[error("job {0} appears twice in the subset")]
    JobConflict(usize),
    #[error("stale assignment: job {job} cannot be placed on machine {machine} now")]
    Stale { job: usize, machine: usize },
    #[error("feasible list of {0} pairs is too large to enumerate (limit {MAX_ENUMERABLE})")]
    ActionSpaceTooLarge(usize),
    #[error("inconsistent start vector: {0}")]
    BadStarts(String),
}

/// Largest feasible list for which [`SchedState::enumerate_action_space`] runs.
pub const MAX_ENUMERABLE: usize = 12;

/// Features of an operation-machine (or machine-job) edge, raw units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeFeatures {
    pub processing_time: Time,
    /// Processing time over the longest remaining operation of the job.
    pub job_ratio: f64,
    /// Processing time over the longest pending operation on the machine.
    pub machine_ratio: f64,
}

impl EdgeFeatures {
    pub fn to_array(self) -> [f64; 3] {
        [f64::from(self.processing_time), self.job_ratio, self.machine_ratio]
    }
}

/// A `(job, machine)` pair whose job's first pending operation runs on the
/// machine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibleAssignment {
    pub job: usize,
    pub machine: usize,
    /// Index of the operation within its job.
    pub op: usize,
    pub earliest_start: Time,
    pub duration: Time,
    pub features: EdgeFeatures,
}

/// A non-empty set of feasible assignments with distinct machines and jobs.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentSubset {
    items: Vec<FeasibleAssignment>,
}

impl AssignmentSubset {
    pub fn new(items: Vec<FeasibleAssignment>) -> Result<Self, StateError> {
        if items.is_empty() {
            return Err(StateError::EmptySubset);
        }
        for (a, x) in items.iter().enumerate() {
            for y in &items[a + 1..] {
                if x.machine == y.machine {
                    return Err(StateError::MachineConflict(x.machine));
                }
                if x.job == y.job {
                    return Err(StateError::JobConflict(x.job));
                }
            }
        }
        Ok(Self { items })
    }

    /// Builds a subset from positions in a feasible list.
    pub fn from_indices(feasible: &[FeasibleAssignment], indices: &[usize]) -> Result<Self, StateError> {
        Self::new(indices.iter().map(|&i| feasible[i]).collect())
    }

    pub fn items(&self) -> &[FeasibleAssignment] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains_pair(&self, job: usize, machine: usize) -> bool {
        self.items.iter().any(|a| a.job == job && a.machine == machine)
    }

    /// Positions of the members in `feasible`, sorted.
    pub fn indices_in(&self, feasible: &[FeasibleAssignment]) -> Vec<usize> {
        let mut idx: Vec<usize> = self
            .items
            .iter()
            .filter_map(|a| feasible.iter().position(|f| f.job == a.job && f.machine == a.machine))
            .collect();
        idx.sort_unstable();
        idx
    }
}

/// True when no two positions in `indices` share a machine or a job.
pub fn is_conflict_free(feasible: &[FeasibleAssignment], indices: &[usize]) -> bool {
    indices.iter().enumerate().all(|(a, &i)| {
        indices[a + 1..]
            .iter()
            .all(|&k| feasible[i].machine != feasible[k].machine && feasible[i].job != feasible[k].job)
    })
}

/// Scheduling progress on one instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchedState {
    instance: Arc<JsspInstance>,
    next_op: Vec<usize>,
    job_time: Vec<Time>,
    machine_time: Vec<Time>,
    starts: Vec<Option<Time>>,
    scheduled: usize,
    transitions: usize,
}

impl SchedState {
    /// Fresh state: nothing scheduled, every job's first operation ready.
    pub fn new(instance: Arc<JsspInstance>) -> Self {
        let n = instance.num_jobs();
        let m = instance.num_machines();
        let ops = instance.num_ops();
        Self {
            instance,
            next_op: vec![0; n],
            job_time: vec![0; n],
            machine_time: vec![0; m],
            starts: vec![None; ops],
            scheduled: 0,
            transitions: 0,
        }
    }

    /// Rebuilds a state from the start times of the operations scheduled so
    /// far (flat job-major order, `None` for pending). Scheduled operations
    /// must form a prefix of every job.
    pub fn from_starts(instance: Arc<JsspInstance>, starts: Vec<Option<Time>>) -> Result<Self, StateError> {
        if starts.len() != instance.num_ops() {
            return Err(StateError::BadStarts(format!(
                "{} entries for {} operations",
                starts.len(),
                instance.num_ops()
            )));
        }
        let mut state = Self::new(instance.clone());
        for (j, ops) in instance.jobs().iter().enumerate() {
            let mut pending_seen = false;
            for (i, op) in ops.iter().enumerate() {
                match starts[instance.flat_index(j, i)] {
                    Some(t) => {
                        if pending_seen {
                            return Err(StateError::BadStarts(format!("job {j} has a gap before op {i}")));
                        }
                        let end = t + op.duration;
                        state.next_op[j] = i + 1;
                        state.job_time[j] = end;
                        state.machine_time[op.machine] = state.machine_time[op.machine].max(end);
                        state.scheduled += 1;
                    }
                    None => pending_seen = true,
                }
            }
        }
        state.starts = starts;
        Ok(state)
    }

    pub fn instance(&self) -> &JsspInstance {
        &self.instance
    }

    pub fn shared_instance(&self) -> &Arc<JsspInstance> {
        &self.instance
    }

    /// Index (within the job) of the job's first pending operation, or the
    /// job length when the job is complete.
    pub fn next_op(&self, job: usize) -> usize {
        self.next_op[job]
    }

    /// `t_j`: completion time of the job's last scheduled operation.
    pub fn job_time(&self, job: usize) -> Time {
        self.job_time[job]
    }

    /// `t_final_m`: completion time of the last operation assigned to the machine.
    pub fn machine_time(&self, machine: usize) -> Time {
        self.machine_time[machine]
    }

    pub fn starts(&self) -> &[Option<Time>] {
        &self.starts
    }

    pub fn is_job_done(&self, job: usize) -> bool {
        self.next_op[job] >= self.instance.job(job).len()
    }

    /// `r_j`.
    pub fn remaining_ops(&self, job: usize) -> usize {
        self.instance.job(job).len() - self.next_op[job]
    }

    /// `s_j`.
    pub fn remaining_work(&self, job: usize) -> Time {
        self.instance.job(job)[self.next_op[job]..].iter().map(|o| o.duration).sum()
    }

    pub fn pending_ops(&self) -> usize {
        self.instance.num_ops() - self.scheduled
    }

    pub fn scheduled_ops(&self) -> usize {
        self.scheduled
    }

    /// Number of transitions applied since the initial state.
    pub fn transitions(&self) -> usize {
        self.transitions
    }

    pub fn is_terminal(&self) -> bool {
        self.scheduled == self.instance.num_ops()
    }

    /// Latest completion among scheduled operations.
    pub fn partial_makespan(&self) -> Time {
        self.job_time.iter().copied().max().unwrap_or(0)
    }

    fn longest_remaining_in_job(&self, job: usize) -> Time {
        self.instance.job(job)[self.next_op[job]..]
            .iter()
            .map(|o| o.duration)
            .max()
            .unwrap_or(0)
    }

    fn longest_pending_per_machine(&self) -> Vec<Time> {
        let mut longest = vec![0; self.instance.num_machines()];
        for (j, ops) in self.instance.jobs().iter().enumerate() {
            for op in &ops[self.next_op[j]..] {
                longest[op.machine] = longest[op.machine].max(op.duration);
            }
        }
        longest
    }

    fn edge_features(&self, job: usize, op: usize, machine_longest: &[Time]) -> EdgeFeatures {
        let o = self.instance.op(job, op);
        let p = f64::from(o.duration);
        EdgeFeatures {
            processing_time: o.duration,
            job_ratio: p / f64::from(self.longest_remaining_in_job(job)),
            machine_ratio: p / f64::from(machine_longest[o.machine]),
        }
    }

    /// Every pair whose job's first pending operation runs on that machine,
    /// before ordering and truncation (one per unfinished job).
    pub fn all_pairs(&self) -> Vec<FeasibleAssignment> {
        let longest = self.longest_pending_per_machine();
        (0..self.instance.num_jobs())
            .filter(|&j| !self.is_job_done(j))
            .map(|j| {
                let i = self.next_op[j];
                let op = self.instance.op(j, i);
                FeasibleAssignment {
                    job: j,
                    machine: op.machine,
                    op: i,
                    earliest_start: self.job_time[j].max(self.machine_time[op.machine]),
                    duration: op.duration,
                    features: self.edge_features(j, i, &longest),
                }
            })
            .collect()
    }

    /// Feasible pairs ordered by earliest start (ties by job id), truncated
    /// to at most as many entries as there are machines.
    pub fn feasible_assignments(&self) -> Result<Vec<FeasibleAssignment>, StateError> {
        if self.is_terminal() {
            return Err(StateError::Terminal);
        }
        let mut pairs = self.all_pairs();
        pairs.sort_by_key(|a| (a.earliest_start, a.job));
        pairs.truncate(self.instance.num_machines());
        Ok(pairs)
    }

    /// Every non-empty conflict-free subset of the feasible list.
    pub fn enumerate_action_space(&self) -> Result<Vec<AssignmentSubset>, StateError> {
        let feasible = self.feasible_assignments()?;
        if feasible.len() > MAX_ENUMERABLE {
            return Err(StateError::ActionSpaceTooLarge(feasible.len()));
        }
        let mut out = Vec::new();
        let mut chosen = Vec::new();
        extend_subsets(&feasible, 0, &mut chosen, &mut out);
        Ok(out)
    }

    /// Applies every assignment of `action` simultaneously.
    pub fn apply_subset(&self, action: &AssignmentSubset) -> Result<SchedState, StateError> {
        let mut next = self.clone();
        next.apply_in_place(action)?;
        Ok(next)
    }

    pub fn apply_in_place(&mut self, action: &AssignmentSubset) -> Result<(), StateError> {
        // Re-check conflicts: the subset may have been built against another state.
        AssignmentSubset::new(action.items.clone())?;
        for a in &action.items {
            let stale = StateError::Stale {
                job: a.job,
                machine: a.machine,
            };
            if a.job >= self.instance.num_jobs() || self.is_job_done(a.job) {
                return Err(stale);
            }
            let i = self.next_op[a.job];
            if i != a.op || self.instance.op(a.job, i).machine != a.machine {
                return Err(stale);
            }
        }
        for a in &action.items {
            self.assign(a.job);
        }
        self.transitions += 1;
        Ok(())
    }

    /// Schedules the first pending operation of `job` at its earliest start.
    /// Returns the start time. Does not count as a transition.
    pub fn assign(&mut self, job: usize) -> Time {
        let i = self.next_op[job];
        let op = self.instance.op(job, i);
        let start = self.job_time[job].max(self.machine_time[op.machine]);
        let end = start + op.duration;
        self.job_time[job] = end;
        self.machine_time[op.machine] = end;
        self.starts[self.instance.flat_index(job, i)] = Some(start);
        self.next_op[job] += 1;
        self.scheduled += 1;
        start
    }

    /// Counts a transition made of raw [`assign`](Self::assign) calls.
    pub fn mark_transition(&mut self) {
        self.transitions += 1;
    }

    /// The full schedule accumulated along the way. Terminal states only.
    pub fn to_schedule(&self) -> Result<Schedule, StateError> {
        if !self.is_terminal() {
            return Err(StateError::NotTerminal(self.pending_ops()));
        }
        let starts = self
            .instance
            .jobs()
            .iter()
            .enumerate()
            .map(|(j, ops)| {
                (0..ops.len())
                    .map(|i| self.starts[self.instance.flat_index(j, i)].expect("terminal state"))
                    .collect()
            })
            .collect();
        Ok(Schedule::new(starts))
    }

    /// Node and edge features, raw units. See [`StateFeatures`] for columns.
    pub fn feature_matrices(&self) -> StateFeatures {
        let inst = &*self.instance;
        let n = inst.num_jobs();
        let m = inst.num_machines();
        let longest = self.longest_pending_per_machine();
        let t_min = self.job_time.iter().copied().min().unwrap_or(0);

        let mut job = FeatureTable::new(JOB_COLS.len());
        for j in 0..n {
            job.push(&[
                if self.is_job_done(j) { 1.0 } else { 0.0 },
                f64::from(self.job_time[j]),
                self.remaining_ops(j) as f64,
                f64::from(self.remaining_work(j)),
                f64::from(self.job_time[j] - t_min),
            ]);
        }

        let mut pending = vec![0usize; m];
        let mut assignable = vec![0usize; m];
        let mut assignable_sum = vec![0 as Time; m];
        let mut op = FeatureTable::new(OP_COLS.len());
        let mut op_ids = Vec::new();
        let mut op_machine = Vec::new();
        let mut op_machine_feat = FeatureTable::new(EDGE_COLS.len());
        let mut precedence = Vec::new();
        let mut op_job = Vec::new();
        let mut machine_job = Vec::new();
        let mut machine_job_feat = FeatureTable::new(EDGE_COLS.len());

        for (j, ops) in inst.jobs().iter().enumerate() {
            for i in self.next_op[j]..ops.len() {
                let o = ops[i];
                let node = op_ids.len();
                let first = i == self.next_op[j];
                op_ids.push(inst.flat_index(j, i));
                op.push(&[if first { 1.0 } else { 0.0 }, f64::from(o.duration)]);
                pending[o.machine] += 1;
                let feat = self.edge_features(j, i, &longest);
                op_machine.push((node, o.machine));
                op_machine_feat.push(&feat.to_array());
                op_job.push((node, j));
                if first {
                    assignable[o.machine] += 1;
                    assignable_sum[o.machine] += o.duration;
                    machine_job.push((o.machine, j));
                    machine_job_feat.push(&feat.to_array());
                } else {
                    precedence.push((node - 1, node));
                }
            }
        }

        let mut machine = FeatureTable::new(MACHINE_COLS.len());
        for k in 0..m {
            machine.push(&[
                pending[k] as f64,
                assignable[k] as f64,
                f64::from(assignable_sum[k]),
                f64::from(self.machine_time[k]),
            ]);
        }

        StateFeatures {
            job,
            machine,
            op,
            op_ids,
            op_machine,
            op_machine_feat,
            precedence,
            op_job,
            machine_job,
            machine_job_feat,
        }
    }
}

fn extend_subsets(
    feasible: &[FeasibleAssignment],
    from: usize,
    chosen: &mut Vec<FeasibleAssignment>,
    out: &mut Vec<AssignmentSubset>,
) {
    for i in from..feasible.len() {
        let cand = feasible[i];
        if chosen.iter().any(|c| c.machine == cand.machine || c.job == cand.job) {
            continue;
        }
        chosen.push(cand);
        out.push(AssignmentSubset { items: chosen.clone() });
        extend_subsets(feasible, i + 1, chosen, out);
        chosen.pop();
    }
}

/// Row-major numeric table with a fixed column count.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    cols: usize,
    data: Vec<f64>,
}

impl FeatureTable {
    pub fn new(cols: usize) -> Self {
        Self { cols, data: Vec::new() }
    }

    pub fn push(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.cols);
        self.data.extend_from_slice(row);
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.cols
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn scale_cols(&mut self, cols: &[usize], factor: f64) {
        for r in 0..self.rows() {
            for &c in cols {
                self.data[r * self.cols + c] *= factor;
            }
        }
    }
}

/// Job columns: completed flag, `t_j`, `r_j`, `s_j`, `t_j - t_min`.
pub const JOB_COLS: [&str; 5] = ["completed", "completion_time", "remaining_ops", "remaining_work", "time_from_min"];
/// Machine columns: pending count, assignable count, assignable processing sum, `t_final_m`.
pub const MACHINE_COLS: [&str; 4] = ["pending_ops", "assignable_ops", "assignable_work", "last_completion"];
/// Operation columns: ready flag, processing time.
pub const OP_COLS: [&str; 2] = ["ready", "processing_time"];
/// Edge columns for operation-machine and machine-job edges.
pub const EDGE_COLS: [&str; 3] = ["processing_time", "job_ratio", "machine_ratio"];

/// Dense features of a state.
///
/// Operation nodes are the pending operations in job-major order;
/// `op_ids` maps each node to its flat operation index. Edges reference
/// node rows: `op_machine` is `(op node, machine)`, `precedence` is
/// `(predecessor node, successor node)`, `op_job` is `(op node, job)`, and
/// `machine_job` is `(machine, job)` for each job's first pending operation.
#[derive(Debug, Clone, PartialEq)]
pub struct StateFeatures {
    pub job: FeatureTable,
    pub machine: FeatureTable,
    pub op: FeatureTable,
    pub op_ids: Vec<usize>,
    pub op_machine: Vec<(usize, usize)>,
    pub op_machine_feat: FeatureTable,
    pub precedence: Vec<(usize, usize)>,
    pub op_job: Vec<(usize, usize)>,
    pub machine_job: Vec<(usize, usize)>,
    pub machine_job_feat: FeatureTable,
}

impl StateFeatures {
    /// Scales features for network input: time-valued columns by
    /// `1 / time_scale`, counts by the job count or longest job length.
    pub fn normalized(&self, instance: &JsspInstance) -> StateFeatures {
        let time = 1.0 / instance.time_scale();
        let jobs = 1.0 / instance.num_jobs() as f64;
        let ops = 1.0 / instance.max_ops_per_job() as f64;
        let mut f = self.clone();
        f.job.scale_cols(&[1, 3, 4], time);
        f.job.scale_cols(&[2], ops);
        f.machine.scale_cols(&[0, 1], jobs);
        f.machine.scale_cols(&[2, 3], time);
        f.op.scale_cols(&[1], time);
        f.op_machine_feat.scale_cols(&[0], time);
        f.machine_job_feat.scale_cols(&[0], time);
        f
    }

    /// Normalized features of the `machine_job` edge for `(machine, job)`.
    pub fn machine_job_row(&self, machine: usize, job: usize) -> Option<&[f64]> {
        self.machine_job
            .iter()
            .position(|&e| e == (machine, job))
            .map(|r| self.machine_job_feat.row(r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate, parse_standard, validate_schedule};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn worked_4x4() -> Arc<JsspInstance> {
        Arc::new(
            parse_standard("4 4\n3 5 1 6 0 3 2 2\n3 8 0 3\n2 3 0 4 3 5\n1 6 3 4 2 5\n").unwrap(),
        )
    }

    fn pairs(list: &[FeasibleAssignment]) -> Vec<(usize, usize)> {
        list.iter().map(|a| (a.job, a.machine)).collect()
    }

    #[test]
    fn worked_example_initial_pairs() {
        let s = SchedState::new(worked_4x4());
        let f = s.feasible_assignments().unwrap();
        // (j1,m4) (j2,m4) (j3,m3) (j4,m2), 0-based.
        assert_eq!(pairs(&f), vec![(0, 3), (1, 3), (2, 2), (3, 1)]);
        let feats = s.feature_matrices();
        let mut mj = feats.machine_job.clone();
        mj.sort_unstable();
        assert_eq!(mj, vec![(1, 3), (2, 2), (3, 0), (3, 1)]);
    }

    #[test]
    fn worked_example_action_space() {
        let s = SchedState::new(worked_4x4());
        let space = s.enumerate_action_space().unwrap();
        assert_eq!(space.len(), 11);
        assert!(space
            .iter()
            .any(|a| a.len() == 3 && a.contains_pair(0, 3) && a.contains_pair(2, 2) && a.contains_pair(3, 1)));
        assert!(!space.iter().any(|a| a.contains_pair(0, 3) && a.contains_pair(1, 3)));
    }

    #[test]
    fn one_by_one() {
        let inst = Arc::new(parse_standard("1 1\n0 5").unwrap());
        let s = SchedState::new(inst);
        assert!(!s.is_terminal());
        let f = s.feasible_assignments().unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(s.enumerate_action_space().unwrap().len(), 1);
        let feats = s.feature_matrices();
        assert_eq!((feats.job.rows(), feats.machine.rows(), feats.op.rows()), (1, 1, 1));
        let t = s.apply_subset(&AssignmentSubset::new(f).unwrap()).unwrap();
        assert!(t.is_terminal());
        let sched = t.to_schedule().unwrap();
        assert_eq!(crate::instance::makespan(t.instance(), &sched), Ok(5));
        assert_eq!(t.feasible_assignments(), Err(StateError::Terminal));
        assert!(s.to_schedule().is_err());
    }

    #[test]
    fn random_six_by_six_graph_counts() {
        let s = SchedState::new(Arc::new(generate(6, 6, 3)));
        let f = s.feature_matrices();
        assert_eq!(f.job.rows() + f.machine.rows() + f.op.rows(), 48);
        assert_eq!(f.op_machine.len(), 36);
        assert_eq!(f.precedence.len(), 30);
        assert_eq!(f.op_job.len(), 36);
        assert_eq!(f.machine_job.len(), 6);
    }

    #[test]
    fn truncation_keeps_earliest() {
        // Ten single-op jobs on machine 0, four machines in total.
        let rows: Vec<Vec<(usize, Time)>> = (0..10).map(|j| vec![(0, 1 + j as Time)]).collect();
        let refs: Vec<&[(usize, Time)]> = rows.iter().map(|r| r.as_slice()).collect();
        let inst = Arc::new(JsspInstance::from_rows(4, &refs).unwrap());
        let mut s = SchedState::new(inst);
        s.assign(0);
        s.assign(1);
        let f = s.feasible_assignments().unwrap();
        assert_eq!(f.len(), 4);
        assert_eq!(f.iter().map(|a| a.job).collect::<Vec<_>>(), vec![2, 3, 4, 5]);
        assert!(f.windows(2).all(|w| w[0].earliest_start <= w[1].earliest_start));
    }

    #[test]
    fn one_unfinished_job_has_one_pair() {
        let inst = worked_4x4();
        let mut s = SchedState::new(inst);
        for j in [1, 2, 3] {
            while !s.is_job_done(j) {
                s.assign(j);
            }
        }
        assert_eq!(pairs(&s.feasible_assignments().unwrap()), vec![(0, 3)]);
    }

    #[test]
    fn transition_examples() {
        let s = SchedState::new(worked_4x4());
        let f = s.feasible_assignments().unwrap();
        let one = s.apply_subset(&AssignmentSubset::from_indices(&f, &[0]).unwrap()).unwrap();
        assert_eq!(one.job_time(0), 5);
        assert_eq!(one.machine_time(3), 5);
        assert_eq!(one.next_op(0), 1);
        let feats = one.feature_matrices();
        assert_eq!(feats.op.rows(), 11);
        // o12 is now ready.
        assert_eq!(feats.op.row(0)[0], 1.0);

        let three = s.apply_subset(&AssignmentSubset::from_indices(&f, &[0, 2, 3]).unwrap()).unwrap();
        assert_eq!((three.machine_time(3), three.machine_time(2), three.machine_time(1)), (5, 3, 6));
        assert_eq!(three.transitions(), 1);
        assert_eq!(three.scheduled_ops(), 3);

        // Re-applying the same assignment is stale.
        assert!(matches!(
            one.apply_subset(&AssignmentSubset::from_indices(&f, &[0]).unwrap()),
            Err(StateError::Stale { .. })
        ));
        assert_eq!(
            AssignmentSubset::from_indices(&f, &[0, 1]).unwrap_err(),
            StateError::MachineConflict(3)
        );
        assert_eq!(AssignmentSubset::new(vec![]).unwrap_err(), StateError::EmptySubset);
    }

    #[test]
    fn feature_formulas() {
        let s = SchedState::new(worked_4x4());
        let f = s.feature_matrices();
        for r in 0..f.job.rows() {
            assert_eq!(f.job.row(r)[4], 0.0);
        }
        // Job with remaining durations {3,4,5}: the 4-duration op edge.
        let inst = Arc::new(JsspInstance::from_rows(3, &[&[(0, 3), (1, 4), (2, 5)]]).unwrap());
        let f = SchedState::new(inst).feature_matrices();
        assert!((f.op_machine_feat.row(1)[1] - 0.8).abs() < 1e-12);
        // Machine with assignable durations {2, 8}.
        let inst = Arc::new(JsspInstance::from_rows(2, &[&[(0, 2)], &[(0, 8), (1, 1)]]).unwrap());
        let f = SchedState::new(inst).feature_matrices();
        assert_eq!(f.machine.row(0)[2], 10.0);
        assert_eq!(f.machine.row(0)[1], 2.0);
    }

    #[test]
    fn from_starts_round_trip() {
        let s = SchedState::new(worked_4x4());
        let f = s.feasible_assignments().unwrap();
        let t = s.apply_subset(&AssignmentSubset::from_indices(&f, &[0, 2, 3]).unwrap()).unwrap();
        let back = SchedState::from_starts(t.shared_instance().clone(), t.starts().to_vec()).unwrap();
        assert_eq!(back.feature_matrices(), t.feature_matrices());
        assert_eq!(back.feasible_assignments(), t.feasible_assignments());
    }

    #[test]
    fn random_rollouts_are_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..1000u64 {
            let n = rng.gen_range(1..=6);
            let m = rng.gen_range(1..=6);
            let inst = Arc::new(generate(n, m, trial));
            let total = inst.num_ops();
            let mut s = SchedState::new(inst);
            let mut events = 0;
            while !s.is_terminal() {
                let before: Vec<Time> = (0..n).map(|j| s.job_time(j)).collect();
                let f = s.feasible_assignments().unwrap();
                let mut idx: Vec<usize> = Vec::new();
                for i in 0..f.len() {
                    if rng.gen_bool(0.5) && is_conflict_free(&f, &[idx.as_slice(), &[i]].concat()) {
                        idx.push(i);
                    }
                }
                if idx.is_empty() {
                    idx.push(rng.gen_range(0..f.len()));
                }
                events += idx.len();
                s.apply_in_place(&AssignmentSubset::from_indices(&f, &idx).unwrap()).unwrap();
                assert!((0..n).all(|j| s.job_time(j) >= before[j]));
                let feats = s.feature_matrices();
                let r_sum: usize = (0..n).map(|j| s.remaining_ops(j)).sum();
                assert_eq!(r_sum, feats.op.rows());
            }
            assert_eq!(events, total);
            let sched = s.to_schedule().unwrap();
            assert!(validate_schedule(s.instance(), &sched).is_empty());
        }
    }
}
