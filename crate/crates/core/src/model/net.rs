use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::params::{Bound, Group, Init, ParamId, Params};
use super::tape::{softmax_in_place, Index, Tape, Var};
use super::tensor::{Mat, Real};
use crate::state::{FeasibleAssignment, SchedState, StateFeatures, EDGE_COLS, JOB_COLS, MACHINE_COLS, OP_COLS};

const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("feasible list is empty")]
    EmptyFeasible,
    #[error("binary vector has {got} entries, feasible list has {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("feature table {table} has {got} columns, expected {expected}")]
    Dimension { table: &'static str, expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Layer counts and widths of all three networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hgnn_layers: usize,
    pub hgnn_heads: usize,
    pub hgnn_dim: usize,
    pub tf_layers: usize,
    pub tf_heads: usize,
    pub tf_dim: usize,
    pub tf_ff: usize,
}

impl ModelConfig {
    /// Six GATv2 layers of width 32 with three heads; four-layer
    /// Transformers with eight heads and width 128.
    pub fn full() -> Self {
        Self {
            hgnn_layers: 6,
            hgnn_heads: 3,
            hgnn_dim: 32,
            tf_layers: 4,
            tf_heads: 8,
            tf_dim: 128,
            tf_ff: 128,
        }
    }

    /// Single-core profile: half the depth of [`full`](Self::full), narrower widths.
    pub fn desk() -> Self {
        Self {
            hgnn_layers: 3,
            hgnn_heads: 2,
            hgnn_dim: 16,
            tf_layers: 2,
            tf_heads: 4,
            tf_dim: 32,
            tf_ff: 64,
        }
    }

    /// Smallest useful shape, for gradient checks and unit tests.
    pub fn tiny() -> Self {
        Self {
            hgnn_layers: 2,
            hgnn_heads: 2,
            hgnn_dim: 4,
            tf_layers: 1,
            tf_heads: 2,
            tf_dim: 8,
            tf_ff: 8,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.hgnn_heads == 0 || self.hgnn_dim == 0 || self.tf_heads == 0 || self.tf_dim == 0 || self.tf_ff == 0 {
            return bad("widths and head counts must be positive");
        }
        if self.tf_dim % self.tf_heads != 0 {
            return bad("tf_dim must be divisible by tf_heads");
        }
        Ok(())
    }
}

/// Network input for one state: normalized graph features plus one token
/// per feasible assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct StateInput {
    pub features: StateFeatures,
    /// `(job, machine)` per token, in feasible-list order.
    pub pairs: Vec<(usize, usize)>,
    /// Normalized edge features per token.
    pub token_features: Vec<[f64; 3]>,
}

impl StateInput {
    pub fn from_state(state: &SchedState, feasible: &[FeasibleAssignment]) -> Self {
        let inst = state.instance();
        let features = state.feature_matrices().normalized(inst);
        let scale = inst.time_scale();
        let pairs = feasible.iter().map(|a| (a.job, a.machine)).collect();
        let token_features = feasible
            .iter()
            .map(|a| {
                let f = a.features.to_array();
                [f[0] / scale, f[1], f[2]]
            })
            .collect();
        Self { features, pairs, token_features }
    }

    pub fn num_tokens(&self) -> usize {
        self.pairs.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let f = &self.features;
        for (table, expected, got) in [
            ("job", JOB_COLS.len(), f.job.cols()),
            ("machine", MACHINE_COLS.len(), f.machine.cols()),
            ("op", OP_COLS.len(), f.op.cols()),
            ("op_machine", EDGE_COLS.len(), f.op_machine_feat.cols()),
            ("machine_job", EDGE_COLS.len(), f.machine_job_feat.cols()),
        ] {
            if expected != got {
                return Err(ModelError::Dimension { table, expected, got });
            }
        }
        if self.pairs.is_empty() {
            return Err(ModelError::EmptyFeasible);
        }
        if self.pairs.len() != self.token_features.len() {
            return Err(ModelError::LengthMismatch { expected: self.pairs.len(), got: self.token_features.len() });
        }
        Ok(())
    }
}

/// Several states packed into one disjoint graph.
#[derive(Debug, Clone)]
pub struct GraphBatch<T> {
    pub jobs: Mat<T>,
    pub machines: Mat<T>,
    pub ops: Mat<T>,
    om_feat: Mat<T>,
    om_op: Index,
    om_machine: Index,
    mj_feat: Mat<T>,
    mj_machine: Index,
    mj_job: Index,
    prec_src: Index,
    prec_dst: Index,
    oj_op: Index,
    oj_job: Index,
    pub tok_job: Index,
    pub tok_machine: Index,
    pub tok_feat: Mat<T>,
    /// Token range of state `s` is `tok_offsets[s]..tok_offsets[s + 1]`.
    pub tok_offsets: Index,
}

fn table<T: Real>(rows: usize, cols: usize, data: Vec<f64>) -> Mat<T> {
    Mat::from_vec(rows, cols, data.into_iter().map(T::from_f64).collect())
}

impl<T: Real> GraphBatch<T> {
    pub fn new(states: &[&StateInput]) -> Self {
        let mut job = Vec::new();
        let mut machine = Vec::new();
        let mut op = Vec::new();
        let mut om_feat = Vec::new();
        let (mut om_op, mut om_machine) = (Vec::new(), Vec::new());
        let mut mj_feat = Vec::new();
        let (mut mj_machine, mut mj_job) = (Vec::new(), Vec::new());
        let (mut prec_src, mut prec_dst) = (Vec::new(), Vec::new());
        let (mut oj_op, mut oj_job) = (Vec::new(), Vec::new());
        let (mut tok_job, mut tok_machine) = (Vec::new(), Vec::new());
        let mut tok_feat = Vec::new();
        let mut tok_offsets = vec![0];
        let (mut nj, mut nm, mut no) = (0, 0, 0);
        for s in states {
            let f = &s.features;
            job.extend_from_slice(f.job.data());
            machine.extend_from_slice(f.machine.data());
            op.extend_from_slice(f.op.data());
            om_feat.extend_from_slice(f.op_machine_feat.data());
            for &(o, m) in &f.op_machine {
                om_op.push(no + o);
                om_machine.push(nm + m);
            }
            mj_feat.extend_from_slice(f.machine_job_feat.data());
            for &(m, j) in &f.machine_job {
                mj_machine.push(nm + m);
                mj_job.push(nj + j);
            }
            for &(a, b) in &f.precedence {
                prec_src.push(no + a);
                prec_dst.push(no + b);
            }
            for &(o, j) in &f.op_job {
                oj_op.push(no + o);
                oj_job.push(nj + j);
            }
            for (&(j, m), feat) in s.pairs.iter().zip(&s.token_features) {
                tok_job.push(nj + j);
                tok_machine.push(nm + m);
                tok_feat.extend_from_slice(feat);
            }
            tok_offsets.push(tok_job.len());
            nj += f.job.rows();
            nm += f.machine.rows();
            no += f.op.rows();
        }
        let e = EDGE_COLS.len();
        Self {
            jobs: table(nj, JOB_COLS.len(), job),
            machines: table(nm, MACHINE_COLS.len(), machine),
            ops: table(no, OP_COLS.len(), op),
            om_feat: table(om_op.len(), e, om_feat),
            om_op: om_op.into(),
            om_machine: om_machine.into(),
            mj_feat: table(mj_job.len(), e, mj_feat),
            mj_machine: mj_machine.into(),
            mj_job: mj_job.into(),
            prec_src: prec_src.into(),
            prec_dst: prec_dst.into(),
            oj_op: oj_op.into(),
            oj_job: oj_job.into(),
            tok_job: tok_job.clone().into(),
            tok_machine: tok_machine.into(),
            tok_feat: table(tok_job.len(), e, tok_feat),
            tok_offsets: tok_offsets.into(),
        }
    }

    pub fn num_states(&self) -> usize {
        self.tok_offsets.len() - 1
    }

    pub fn num_tokens(&self) -> usize {
        self.tok_job.len()
    }

    pub fn token_range(&self, state: usize) -> std::ops::Range<usize> {
        self.tok_offsets[state]..self.tok_offsets[state + 1]
    }
}

/// Subsets to score, each expanded to all tokens of its state with a
/// membership bit.
#[derive(Debug, Clone)]
pub struct SubsetBatch<T> {
    /// Batch token index per expanded row.
    tokens: Index,
    bits: Mat<T>,
    offsets: Index,
}

impl<T: Real> SubsetBatch<T> {
    /// `subsets[i] = (state index in the graph batch, membership bits)`.
    pub fn new<G>(graph: &GraphBatch<G>, subsets: &[(usize, Vec<bool>)]) -> Result<Self, ModelError>
    where
        G: Real,
    {
        let mut tokens = Vec::new();
        let mut bits = Vec::new();
        let mut offsets = vec![0];
        for (state, bv) in subsets {
            let range = graph.token_range(*state);
            if bv.len() != range.len() {
                return Err(ModelError::LengthMismatch { expected: range.len(), got: bv.len() });
            }
            for (t, &b) in range.zip(bv) {
                tokens.push(t);
                bits.push(if b { T::one() } else { T::zero() });
            }
            offsets.push(tokens.len());
        }
        Ok(Self {
            tokens: tokens.into(),
            bits: Mat::from_vec(bits.len(), 1, bits),
            offsets: offsets.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct EdgeAttention {
    w_dst: ParamId,
    w_src: ParamId,
    w_edge: Option<ParamId>,
    a: ParamId,
}

/// Incoming edge types per destination node kind. Names read
/// destination-first: `MO` carries operation messages into machines.
#[derive(Debug, Clone, Copy)]
struct HgnnLayer {
    mo: EdgeAttention,
    mj: EdgeAttention,
    om: EdgeAttention,
    oo: EdgeAttention,
    jo: EdgeAttention,
    jm: EdgeAttention,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct TfLayer {
    ln1: Norm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln2: Norm,
    ff1: Linear,
    ff2: Linear,
}

#[derive(Debug, Clone)]
struct TfHead {
    input: Linear,
    layers: Vec<TfLayer>,
    norm: Norm,
    out: Linear,
}

#[derive(Debug, Clone)]
struct Layout {
    job_in: Linear,
    machine_in: Linear,
    op_in: Linear,
    om_edge: Linear,
    mj_edge: Linear,
    hgnn: Vec<HgnnLayer>,
    policy: TfHead,
    self_eval: TfHead,
}

struct Builder<'a, T> {
    params: &'a mut Params<T>,
    rng: ChaCha8Rng,
}

impl<T: Real> Builder<'_, T> {
    fn tensor(&mut self, name: String, shape: (usize, usize), group: Group, init: Init) -> ParamId {
        self.params.add(&mut self.rng, name, shape, group, init)
    }

    fn linear(&mut self, name: &str, fan_in: usize, out: usize, group: Group) -> Linear {
        Linear {
            w: self.tensor(format!("{name}.w"), (fan_in, out), group, Init::FanIn(fan_in)),
            b: self.tensor(format!("{name}.b"), (1, out), group, Init::Zeros),
        }
    }

    fn norm(&mut self, name: &str, dim: usize, group: Group) -> Norm {
        Norm {
            gamma: self.tensor(format!("{name}.gamma"), (1, dim), group, Init::Ones),
            beta: self.tensor(format!("{name}.beta"), (1, dim), group, Init::Zeros),
        }
    }

    fn edge(&mut self, name: &str, d: usize, heads: usize, with_edge: bool) -> EdgeAttention {
        let g = Group::Hgnn;
        let hd = d * heads;
        EdgeAttention {
            w_dst: self.tensor(format!("{name}.w1"), (d, hd), g, Init::FanIn(d)),
            w_src: self.tensor(format!("{name}.w2"), (d, hd), g, Init::FanIn(d)),
            w_edge: with_edge.then(|| self.tensor(format!("{name}.w3"), (d, hd), g, Init::FanIn(d))),
            a: self.tensor(format!("{name}.a"), (1, hd), g, Init::FanIn(d)),
        }
    }

    fn head(&mut self, name: &str, c: &ModelConfig, in_dim: usize, group: Group) -> TfHead {
        let input = self.linear(&format!("{name}.in"), in_dim, c.tf_dim, group);
        let layers = (0..c.tf_layers)
            .map(|l| {
                let p = format!("{name}.layer{l}");
                TfLayer {
                    ln1: self.norm(&format!("{p}.ln1"), c.tf_dim, group),
                    q: self.linear(&format!("{p}.q"), c.tf_dim, c.tf_dim, group),
                    k: self.linear(&format!("{p}.k"), c.tf_dim, c.tf_dim, group),
                    v: self.linear(&format!("{p}.v"), c.tf_dim, c.tf_dim, group),
                    o: self.linear(&format!("{p}.o"), c.tf_dim, c.tf_dim, group),
                    ln2: self.norm(&format!("{p}.ln2"), c.tf_dim, group),
                    ff1: self.linear(&format!("{p}.ff1"), c.tf_dim, c.tf_ff, group),
                    ff2: self.linear(&format!("{p}.ff2"), c.tf_ff, c.tf_dim, group),
                }
            })
            .collect();
        TfHead {
            input,
            layers,
            norm: self.norm(&format!("{name}.ln"), c.tf_dim, group),
            out: self.linear(&format!("{name}.out"), c.tf_dim, 1, group),
        }
    }
}

fn build_layout<T: Real>(config: &ModelConfig, params: &mut Params<T>, seed: u64) -> Layout {
    let mut b = Builder { params, rng: ChaCha8Rng::seed_from_u64(seed) };
    let (d, h) = (config.hgnn_dim, config.hgnn_heads);
    let g = Group::Hgnn;
    let e = EDGE_COLS.len();
    let job_in = b.linear("hgnn.job_in", JOB_COLS.len(), d, g);
    let machine_in = b.linear("hgnn.machine_in", MACHINE_COLS.len(), d, g);
    let op_in = b.linear("hgnn.op_in", OP_COLS.len(), d, g);
    let om_edge = b.linear("hgnn.om_edge", e, d, g);
    let mj_edge = b.linear("hgnn.mj_edge", e, d, g);
    let hgnn = (0..config.hgnn_layers)
        .map(|l| {
            let p = format!("hgnn.layer{l}");
            HgnnLayer {
                mo: b.edge(&format!("{p}.mo"), d, h, true),
                mj: b.edge(&format!("{p}.mj"), d, h, true),
                om: b.edge(&format!("{p}.om"), d, h, true),
                oo: b.edge(&format!("{p}.oo"), d, h, false),
                jo: b.edge(&format!("{p}.jo"), d, h, false),
                jm: b.edge(&format!("{p}.jm"), d, h, true),
            }
        })
        .collect();
    let policy = b.head("policy", config, 2 * d + e, Group::Policy);
    let self_eval = b.head("self_eval", config, 2 * d + e + 1, Group::SelfEval);
    Layout { job_in, machine_in, op_in, om_edge, mj_edge, hgnn, policy, self_eval }
}

/// One incoming edge type feeding a destination node kind.
struct Incoming {
    attn: EdgeAttention,
    src: Var,
    src_idx: Index,
    dst_idx: Index,
    edge: Option<Var>,
}

/// HGNN, policy head and self-evaluation head with their parameters.
#[derive(Debug, Clone)]
pub struct Model<T> {
    config: ModelConfig,
    params: Params<T>,
    layout: Layout,
}

/// Final-layer job and machine embeddings on a tape.
#[derive(Debug, Clone, Copy)]
pub struct Embeddings {
    pub jobs: Var,
    pub machines: Var,
}

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut params = Params::new();
        let layout = build_layout(&config, &mut params, seed);
        Ok(Self { config, params, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params<T> {
        &mut self.params
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model { config: self.config, params: self.params.cast(), layout: self.layout.clone() }
    }

    /// Zeroes every tensor of the policy and self-evaluation heads.
    pub fn zero_heads(&mut self) {
        let ids: Vec<ParamId> = self.params.ids().filter(|&id| self.params.spec(id).group != Group::Hgnn).collect();
        for id in ids {
            self.params.value_mut(id).data.iter_mut().for_each(|x| *x = T::zero());
        }
    }

    fn linear(&self, tape: &mut Tape<T>, p: &Bound, l: Linear, x: Var) -> Var {
        let y = tape.matmul(x, p.var(l.w));
        tape.add_row(y, p.var(l.b))
    }

    fn norm(&self, tape: &mut Tape<T>, p: &Bound, n: Norm, x: Var) -> Var {
        tape.layer_norm(x, p.var(n.gamma), p.var(n.beta))
    }

    /// GATv2 aggregation into `count` destination nodes. The softmax is
    /// shared across all incoming edge types of a node.
    fn aggregate(&self, tape: &mut Tape<T>, p: &Bound, dst: Var, count: usize, incoming: &[Incoming]) -> Var {
        let heads = self.config.hgnn_heads;
        let slope = T::from_f64(LEAKY_SLOPE);
        let mut messages = Vec::with_capacity(incoming.len());
        let mut scores = Vec::with_capacity(incoming.len());
        for inc in incoming {
            let src = tape.matmul(inc.src, p.var(inc.attn.w_src));
            let mut msg = tape.gather(src, inc.src_idx.clone());
            if let (Some(w3), Some(edge)) = (inc.attn.w_edge, inc.edge) {
                let e = tape.matmul(edge, p.var(w3));
                msg = tape.add(msg, e);
            }
            let d = tape.matmul(dst, p.var(inc.attn.w_dst));
            let d = tape.gather(d, inc.dst_idx.clone());
            let z = tape.add(msg, d);
            let z = tape.leaky_relu(z, slope);
            scores.push(tape.head_dot(z, p.var(inc.attn.a), heads));
            messages.push(msg);
        }
        let all = tape.concat_rows(&scores);
        let seg: Index = incoming.iter().flat_map(|i| i.dst_idx.iter().copied()).collect::<Vec<_>>().into();
        let alpha = tape.segment_softmax(all, seg, count);
        let mut total: Option<Var> = None;
        let mut start = 0;
        for (inc, msg) in incoming.iter().zip(messages) {
            let n = inc.dst_idx.len();
            let a = tape.slice_rows(alpha, start, n);
            start += n;
            let weighted = tape.head_scale(msg, a, heads);
            let agg = tape.scatter_add(weighted, inc.dst_idx.clone(), count);
            total = Some(match total {
                Some(t) => tape.add(t, agg),
                None => agg,
            });
        }
        let mean = tape.head_mean(total.expect("at least one edge type"), heads);
        tape.elu(mean)
    }

    /// Runs the HGNN and returns final job and machine embeddings.
    pub fn hgnn(&self, tape: &mut Tape<T>, p: &Bound, g: &GraphBatch<T>) -> Embeddings {
        let l = &self.layout;
        let (nj, nm, no) = (g.jobs.rows, g.machines.rows, g.ops.rows);
        let x = tape.constant(g.jobs.clone());
        let mut hj = self.linear(tape, p, l.job_in, x);
        let x = tape.constant(g.machines.clone());
        let mut hm = self.linear(tape, p, l.machine_in, x);
        let x = tape.constant(g.ops.clone());
        let mut ho = self.linear(tape, p, l.op_in, x);
        let x = tape.constant(g.om_feat.clone());
        let e_om = self.linear(tape, p, l.om_edge, x);
        let x = tape.constant(g.mj_feat.clone());
        let e_mj = self.linear(tape, p, l.mj_edge, x);

        for (i, layer) in l.hgnn.iter().enumerate() {
            let dm = self.aggregate(
                tape,
                p,
                hm,
                nm,
                &[
                    Incoming { attn: layer.mo, src: ho, src_idx: g.om_op.clone(), dst_idx: g.om_machine.clone(), edge: Some(e_om) },
                    Incoming { attn: layer.mj, src: hj, src_idx: g.mj_job.clone(), dst_idx: g.mj_machine.clone(), edge: Some(e_mj) },
                ],
            );
            let dj = self.aggregate(
                tape,
                p,
                hj,
                nj,
                &[
                    Incoming { attn: layer.jo, src: ho, src_idx: g.oj_op.clone(), dst_idx: g.oj_job.clone(), edge: None },
                    Incoming { attn: layer.jm, src: hm, src_idx: g.mj_machine.clone(), dst_idx: g.mj_job.clone(), edge: Some(e_mj) },
                ],
            );
            // Operation embeddings after the last layer are never read.
            if i + 1 < l.hgnn.len() {
                let d_o = self.aggregate(
                    tape,
                    p,
                    ho,
                    no,
                    &[
                        Incoming { attn: layer.om, src: hm, src_idx: g.om_machine.clone(), dst_idx: g.om_op.clone(), edge: Some(e_om) },
                        Incoming { attn: layer.oo, src: ho, src_idx: g.prec_src.clone(), dst_idx: g.prec_dst.clone(), edge: None },
                    ],
                );
                ho = tape.add(ho, d_o);
            }
            hm = tape.add(hm, dm);
            hj = tape.add(hj, dj);
        }
        Embeddings { jobs: hj, machines: hm }
    }

    fn transformer(&self, tape: &mut Tape<T>, p: &Bound, head: &TfHead, mut x: Var, offsets: &Index) -> Var {
        for layer in &head.layers {
            let a = self.norm(tape, p, layer.ln1, x);
            let q = self.linear(tape, p, layer.q, a);
            let k = self.linear(tape, p, layer.k, a);
            let v = self.linear(tape, p, layer.v, a);
            let att = tape.attention(q, k, v, self.config.tf_heads, offsets.clone());
            let o = self.linear(tape, p, layer.o, att);
            x = tape.add(x, o);
            let b = self.norm(tape, p, layer.ln2, x);
            let f = self.linear(tape, p, layer.ff1, b);
            let f = tape.gelu(f);
            let f = self.linear(tape, p, layer.ff2, f);
            x = tape.add(x, f);
        }
        self.norm(tape, p, head.norm, x)
    }

    /// Per-token policy logits, one column over all tokens of the batch.
    pub fn policy_logits(&self, tape: &mut Tape<T>, p: &Bound, g: &GraphBatch<T>, emb: Embeddings) -> Var {
        let head = &self.layout.policy;
        let j = tape.gather(emb.jobs, g.tok_job.clone());
        let m = tape.gather(emb.machines, g.tok_machine.clone());
        let f = tape.constant(g.tok_feat.clone());
        let x = tape.concat_cols(&[j, m, f]);
        let x = self.linear(tape, p, head.input, x);
        let x = self.transformer(tape, p, head, x, &g.tok_offsets);
        self.linear(tape, p, head.out, x)
    }

    /// Scores in `[0, 1]`, one row per subset.
    pub fn self_eval(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        g: &GraphBatch<T>,
        emb: Embeddings,
        subsets: &SubsetBatch<T>,
    ) -> Var {
        let head = &self.layout.self_eval;
        let jobs: Index = subsets.tokens.iter().map(|&t| g.tok_job[t]).collect::<Vec<_>>().into();
        let machines: Index = subsets.tokens.iter().map(|&t| g.tok_machine[t]).collect::<Vec<_>>().into();
        let j = tape.gather(emb.jobs, jobs);
        let m = tape.gather(emb.machines, machines);
        let feat = tape.constant(g.tok_feat.clone());
        let f = tape.gather(feat, subsets.tokens.clone());
        let bits = tape.constant(subsets.bits.clone());
        let x = tape.concat_cols(&[j, m, f, bits]);
        let x = self.linear(tape, p, head.input, x);
        let x = self.transformer(tape, p, head, x, &subsets.offsets);
        let pooled = tape.segment_mean(x, subsets.offsets.clone());
        let s = self.linear(tape, p, head.out, pooled);
        tape.sigmoid(s)
    }

    /// Policy distribution over one state's feasible list.
    pub fn policy_output(&self, input: &StateInput) -> Result<PolicyOutput, ModelError> {
        input.validate()?;
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let g = GraphBatch::new(&[input]);
        let emb = self.hgnn(&mut tape, &p, &g);
        let logits = self.policy_logits(&mut tape, &p, &g, emb);
        Ok(PolicyOutput::from_logits(tape.value(logits).data.iter().map(|&x| Real::to_f64(x)).collect()))
    }

    /// Policy output and self-evaluation scores for `subsets`, sharing one
    /// HGNN pass.
    pub fn evaluate(&self, input: &StateInput, subsets: &[Vec<bool>]) -> Result<(PolicyOutput, Vec<f64>), ModelError> {
        input.validate()?;
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let g = GraphBatch::new(&[input]);
        let emb = self.hgnn(&mut tape, &p, &g);
        let logits = self.policy_logits(&mut tape, &p, &g, emb);
        let policy = PolicyOutput::from_logits(tape.value(logits).data.iter().map(|&x| Real::to_f64(x)).collect());
        if subsets.is_empty() {
            return Ok((policy, Vec::new()));
        }
        let tagged: Vec<(usize, Vec<bool>)> = subsets.iter().map(|b| (0, b.clone())).collect();
        let sb = SubsetBatch::new(&g, &tagged)?;
        let scores = self.self_eval(&mut tape, &p, &g, emb, &sb);
        Ok((policy, tape.value(scores).data.iter().map(|&x| Real::to_f64(x)).collect()))
    }

    /// Self-evaluation score of each subset.
    pub fn score_subsets(&self, input: &StateInput, subsets: &[Vec<bool>]) -> Result<Vec<f64>, ModelError> {
        self.evaluate(input, subsets).map(|(_, s)| s)
    }
}

/// Probabilities over a feasible list plus the logits they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl PolicyOutput {
    pub fn from_logits(logits: Vec<f64>) -> Self {
        let mut probs = logits.clone();
        softmax_in_place(&mut probs);
        Self { logits, probs }
    }
}

/// Fraction of `subset` that lies in `optimal`.
pub fn true_score(subset: &[usize], optimal: &[usize]) -> Result<f64, ModelError> {
    if subset.is_empty() {
        return Err(ModelError::EmptyFeasible);
    }
    let hits = subset.iter().filter(|i| optimal.contains(i)).count();
    Ok(hits as f64 / subset.len() as f64)
}

/// Same as [`true_score`] on binary vectors of equal length.
pub fn true_score_bits(subset: &[bool], optimal: &[bool]) -> Result<f64, ModelError> {
    if subset.len() != optimal.len() {
        return Err(ModelError::LengthMismatch { expected: optimal.len(), got: subset.len() });
    }
    let size = subset.iter().filter(|&&b| b).count();
    if size == 0 {
        return Err(ModelError::EmptyFeasible);
    }
    let hits = subset.iter().zip(optimal).filter(|(&a, &b)| a && b).count();
    Ok(hits as f64 / size as f64)
}

/// `KL(predicted || target)` with the tape's clamping, for one distribution.
pub fn kl_policy_loss(predicted: &PolicyOutput, target: &[f64]) -> Result<f64, ModelError> {
    if predicted.logits.len() != target.len() {
        return Err(ModelError::LengthMismatch { expected: predicted.logits.len(), got: target.len() });
    }
    let mut tape = Tape::<f64>::new();
    let l = tape.constant(Mat::from_vec(target.len(), 1, predicted.logits.clone()));
    let offsets: Index = Rc::from(vec![0, target.len()]);
    let loss = tape.kl_loss(l, offsets, target);
    Ok(tape.value(loss).data[0])
}

/// Mean squared error between predicted and true scores.
pub fn mse_self_eval_loss(predicted: &[f64], truth: &[f64]) -> Result<f64, ModelError> {
    if predicted.len() != truth.len() {
        return Err(ModelError::LengthMismatch { expected: truth.len(), got: predicted.len() });
    }
    if predicted.is_empty() {
        return Ok(0.0);
    }
    Ok(predicted.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / predicted.len() as f64)
}

/// A supervised batch: states with target distributions, plus subsets
/// with their true scores.
#[derive(Debug, Clone)]
pub struct TrainBatch<T> {
    pub graph: GraphBatch<T>,
    /// Target probability per token, aligned with the graph's tokens.
    pub target: Vec<T>,
    pub subsets: SubsetBatch<T>,
    pub scores: Vec<T>,
}

impl<T: Real> TrainBatch<T> {
    /// `subsets[i] = (state index, bits, true score)`.
    pub fn new(
        states: &[&StateInput],
        targets: &[&[f64]],
        subsets: &[(usize, Vec<bool>, f64)],
    ) -> Result<Self, ModelError> {
        let graph = GraphBatch::new(states);
        let mut target = Vec::with_capacity(graph.num_tokens());
        for (s, t) in states.iter().zip(targets) {
            if t.len() != s.num_tokens() {
                return Err(ModelError::LengthMismatch { expected: s.num_tokens(), got: t.len() });
            }
            target.extend(t.iter().map(|&x| T::from_f64(x)));
        }
        let tagged: Vec<(usize, Vec<bool>)> = subsets.iter().map(|(s, b, _)| (*s, b.clone())).collect();
        let sb = SubsetBatch::new(&graph, &tagged)?;
        let scores = subsets.iter().map(|s| T::from_f64(s.2)).collect();
        Ok(Self { graph, target, subsets: sb, scores })
    }
}

/// Loss handles recorded by [`Model::losses`].
#[derive(Debug, Clone, Copy)]
pub struct Losses {
    pub policy: Var,
    pub self_eval: Option<Var>,
}

impl<T: Real> Model<T> {
    /// Records both losses. With `detach` the self-evaluation head reads
    /// embeddings that carry no gradient back into the HGNN.
    pub fn losses(&self, tape: &mut Tape<T>, p: &Bound, batch: &TrainBatch<T>, detach: bool) -> Losses {
        let emb = self.hgnn(tape, p, &batch.graph);
        let logits = self.policy_logits(tape, p, &batch.graph, emb);
        let policy = tape.kl_loss(logits, batch.graph.tok_offsets.clone(), &batch.target);
        let self_eval = (!batch.subsets.is_empty()).then(|| {
            let emb = if detach {
                Embeddings { jobs: tape.detach(emb.jobs), machines: tape.detach(emb.machines) }
            } else {
                emb
            };
            let s = self.self_eval(tape, p, &batch.graph, emb, &batch.subsets);
            tape.mse_loss(s, &batch.scores)
        });
        Losses { policy, self_eval }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::instance::{generate, parse_standard};
    use crate::model::gradcheck::{gradient_check, random_check_batch};

    fn sample_input(seed: u64) -> StateInput {
        let inst = Arc::new(generate(4, 3, seed));
        let mut s = SchedState::new(inst);
        let f = s.feasible_assignments().unwrap();
        s.apply_in_place(&crate::state::AssignmentSubset::new(vec![f[0]]).unwrap()).unwrap();
        let f = s.feasible_assignments().unwrap();
        StateInput::from_state(&s, &f)
    }

    fn permute_jobs(input: &StateInput, perm: &[usize]) -> StateInput {
        // perm[old] = new
        let mut out = input.clone();
        let f = &input.features;
        let n = f.job.rows();
        let mut job = crate::state::FeatureTable::new(f.job.cols());
        let mut inv = vec![0; n];
        for (old, &new) in perm.iter().enumerate() {
            inv[new] = old;
        }
        for new in 0..n {
            job.push(f.job.row(inv[new]));
        }
        out.features.job = job;
        out.features.op_job = f.op_job.iter().map(|&(o, j)| (o, perm[j])).collect();
        out.features.machine_job = f.machine_job.iter().map(|&(m, j)| (m, perm[j])).collect();
        out.pairs = input.pairs.iter().map(|&(j, m)| (perm[j], m)).collect();
        out
    }

    fn embeddings(model: &Model<f64>, input: &StateInput) -> (Mat<f64>, Mat<f64>) {
        let mut tape = Tape::new();
        let p = model.params().bind(&mut tape, false);
        let g = GraphBatch::new(&[input]);
        let e = model.hgnn(&mut tape, &p, &g);
        (tape.value(e.jobs).clone(), tape.value(e.machines).clone())
    }

    #[test]
    fn gradients_match_finite_differences() {
        let model = Model::<f64>::new(ModelConfig::tiny(), 11).unwrap();
        let batch = random_check_batch(5, 2);
        let report = gradient_check(&model, &batch, 1e-5).unwrap();
        assert!(report.max_rel_error() <= 1e-4, "{:?}", report.tensors);
        for prefix in ["hgnn.", "policy.", "self_eval."] {
            assert!(report.tensors.iter().any(|t| t.name.starts_with(prefix) && t.analytic_norm > 0.0));
        }
    }

    #[test]
    fn gradients_with_zero_heads_are_finite() {
        let mut model = Model::<f64>::new(ModelConfig::tiny(), 12).unwrap();
        model.zero_heads();
        let batch = random_check_batch(6, 2);
        let report = gradient_check(&model, &batch, 1e-5).unwrap();
        assert!(report.max_rel_error() <= 1e-4, "{:?}", report.tensors);
    }

    #[test]
    fn finite_difference_error_shrinks_with_step() {
        let model = Model::<f64>::new(ModelConfig::tiny(), 13).unwrap();
        let batch = random_check_batch(7, 1);
        let errs: Vec<f64> = [1e-3, 1e-4, 1e-5]
            .iter()
            .map(|&h| gradient_check(&model, &batch, h).unwrap().max_rel_error_above(1e-6))
            .collect();
        assert!(errs[0] > errs[1], "{errs:?}");
        // Below 1e-4 round-off takes over; it must stay under tolerance.
        assert!(errs[2] <= 1e-4, "{errs:?}");
    }

    #[test]
    fn uniform_logits_with_uniform_target_are_stationary() {
        let mut tape = Tape::<f64>::new();
        let l = tape.leaf(Mat::from_f64(4, 1, &[0.3; 4]));
        let loss = tape.kl_loss(l, Rc::from(vec![0, 4]), &[0.25; 4]);
        let g = tape.backward(&[loss]);
        assert!(g.get(l).unwrap().data.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn kl_examples() {
        let t = [0.2, 0.3, 0.5];
        let same = PolicyOutput::from_logits(t.iter().map(|x: &f64| x.ln()).collect());
        assert!(kl_policy_loss(&same, &t).unwrap().abs() < 1e-12);
        let mut last = f64::INFINITY;
        for shift in [0.0, 1.0, 2.0, 4.0] {
            let p = PolicyOutput::from_logits(vec![shift, 0.0]);
            let v = kl_policy_loss(&p, &[1.0, 0.0]).unwrap();
            assert!(v.is_finite() && v >= 0.0 && v < last);
            last = v;
        }
        let uniform = kl_policy_loss(&PolicyOutput::from_logits(vec![0.0, 0.0]), &[1.0, 0.0]).unwrap();
        let z: f64 = 1.0 + 1e-8;
        let expect = 0.5 * (0.5f64.ln() - (1.0 / z).ln()) + 0.5 * (0.5f64.ln() - (1e-8 / z).ln());
        assert!((uniform - expect).abs() < 1e-12);
        assert!(kl_policy_loss(&same, &[1.0]).is_err());
    }

    #[test]
    fn score_and_mse_examples() {
        assert_eq!(true_score(&[0, 1], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(true_score(&[3], &[0, 1]).unwrap(), 0.0);
        assert_eq!(true_score(&[0, 1, 2, 3], &[1, 3]).unwrap(), 0.5);
        assert!(true_score(&[], &[1]).is_err());
        assert_eq!(mse_self_eval_loss(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(mse_self_eval_loss(&[0.0; 4], &[1.0; 4]).unwrap(), 1.0);
        assert!((mse_self_eval_loss(&[0.2, 0.9], &[0.5, 0.5]).unwrap() - 0.125).abs() < 1e-12);
        assert!(mse_self_eval_loss(&[0.2], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn single_assignment_gets_probability_one() {
        let inst = Arc::new(parse_standard("1 1\n0 5\n").unwrap());
        let s = SchedState::new(inst);
        let f = s.feasible_assignments().unwrap();
        let model = Model::<f32>::new(ModelConfig::tiny(), 1).unwrap();
        let out = model.policy_output(&StateInput::from_state(&s, &f)).unwrap();
        assert_eq!(out.probs, vec![1.0]);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let model = Model::<f32>::new(ModelConfig::desk(), 2).unwrap();
        for seed in 0..10 {
            let out = model.policy_output(&sample_input(seed)).unwrap();
            let sum: f64 = out.probs.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(out.probs.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn hgnn_is_job_permutation_equivariant() {
        let model = Model::<f64>::new(ModelConfig::tiny(), 3).unwrap();
        let input = sample_input(9);
        let perm = [2, 0, 3, 1];
        let (j0, m0) = embeddings(&model, &input);
        let (j1, m1) = embeddings(&model, &permute_jobs(&input, &perm));
        for (old, &new) in perm.iter().enumerate() {
            for c in 0..j0.cols {
                assert!((j0.get(old, c) - j1.get(new, c)).abs() < 1e-12);
            }
        }
        for (a, b) in m0.data.iter().zip(&m1.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_layers_leave_initial_projections() {
        let config = ModelConfig { hgnn_layers: 0, ..ModelConfig::tiny() };
        let model = Model::<f64>::new(config, 4).unwrap();
        let input = sample_input(1);
        let (j, _) = embeddings(&model, &input);
        let w = model.params().value(model.params().find("hgnn.job_in.w").unwrap());
        let expect = crate::model::tensor::matmul(&Mat::from_f64(input.features.job.rows(), 5, input.features.job.data()), w);
        assert_eq!(j, expect);
    }

    #[test]
    fn zero_attention_weights_keep_residual_stream() {
        let mut model = Model::<f64>::new(ModelConfig::tiny(), 5).unwrap();
        let ids: Vec<ParamId> = model
            .params()
            .ids()
            .filter(|&id| {
                let n = &model.params().spec(id).name;
                n.starts_with("hgnn.layer")
            })
            .collect();
        for id in ids {
            model.params_mut().value_mut(id).data.iter_mut().for_each(|x| *x = 0.0);
        }
        let input = sample_input(2);
        let (j, _) = embeddings(&model, &input);
        let zero = Model { config: ModelConfig { hgnn_layers: 0, ..ModelConfig::tiny() }, ..model.clone() };
        let (j0, _) = embeddings(&zero, &input);
        assert_eq!(j, j0);
    }

    #[test]
    fn single_neighbor_attention_is_one() {
        let mut tape = Tape::<f64>::new();
        let s = tape.constant(Mat::from_f64(3, 2, &[5.0, -3.0, 0.1, 0.2, 7.0, 1.0]));
        let a = tape.segment_softmax(s, Rc::from(vec![0, 1, 1]), 2);
        assert_eq!(tape.value(a).row(0), &[1.0, 1.0]);
    }

    #[test]
    fn policy_is_token_permutation_equivariant() {
        let model = Model::<f64>::new(ModelConfig::tiny(), 6).unwrap();
        let input = sample_input(3);
        let k = input.num_tokens();
        assert!(k >= 2);
        let base = model.policy_output(&input).unwrap();
        let mut rev = input.clone();
        rev.pairs.reverse();
        rev.token_features.reverse();
        let out = model.policy_output(&rev).unwrap();
        for i in 0..k {
            assert!((base.probs[i] - out.probs[k - 1 - i]).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicate_tokens_get_equal_probability() {
        let model = Model::<f64>::new(ModelConfig::tiny(), 7).unwrap();
        let mut input = sample_input(4);
        input.pairs = vec![input.pairs[0]; 3];
        input.token_features = vec![input.token_features[0]; 3];
        let out = model.policy_output(&input).unwrap();
        for p in &out.probs {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn self_eval_is_bounded_and_permutation_invariant() {
        let model = Model::<f64>::new(ModelConfig::tiny(), 8).unwrap();
        let input = sample_input(5);
        let k = input.num_tokens();
        let bits: Vec<bool> = (0..k).map(|i| i % 2 == 0).collect();
        let s = model.score_subsets(&input, &[bits.clone(), bits.clone()]).unwrap();
        assert!(s.iter().all(|&x| (0.0..=1.0).contains(&x)));
        assert_eq!(s[0], s[1]);
        let mut rev = input.clone();
        rev.pairs.reverse();
        rev.token_features.reverse();
        let mut rbits = bits.clone();
        rbits.reverse();
        let r = model.score_subsets(&rev, &[rbits]).unwrap();
        assert!((s[0] - r[0]).abs() < 1e-12);
        assert!(matches!(model.score_subsets(&input, &[vec![true]]), Err(ModelError::LengthMismatch { .. })));
    }
}
