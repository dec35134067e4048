//! Corpus evaluation, gap tables and Gantt charts.
//!
//! `gaps.tsv` columns:
//!
//! ```text
//! instance  jobs  machines  method  makespan  reference  gap_pct  wall_ms
//! ```
//!
//! `aggregates.tsv` holds one row per (size, method) with the mean gap and
//! mean wall time; `summary.txt` is the same table aligned for reading.
//! Wall times depend on the machine running the benchmark.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::derive_seed;
use crate::engine::{greedy_rollout, seval_rollout, CandidateMode, EngineError};
use crate::instance::{detect_format, optimal_gap, parse, JsspInstance, Schedule, Time};
use crate::model::Model;
use crate::oracle::{dispatch_solve, solve_exact, DispatchRule, ProofStatus, SolveLimits};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("i/o on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {msg}")]
    Instance { path: PathBuf, msg: String },
    #[error("no reference makespan for {0} and it is too large for the oracle fallback")]
    MissingReference(String),
    #[error("oracle could not prove a reference for {0} within the time limit")]
    ReferenceTimeout(String),
    #[error("references line {line}: {msg}")]
    References { line: usize, msg: String },
    #[error("unknown method {0:?}")]
    Method(String),
    #[error("method {0} needs a checkpoint")]
    NeedsModel(Method),
    #[error("{id}, {method}: {source}")]
    Engine { id: String, method: Method, source: EngineError },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io { path: path.to_path_buf(), source }
}

/// A schedule construction method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Greedy,
    Seval(usize),
    Dispatch(DispatchRule),
    /// Branch and bound with a time limit in seconds.
    Exact(f64),
}

impl Method {
    pub fn needs_model(self) -> bool {
        matches!(self, Method::Greedy | Method::Seval(_))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Greedy => write!(f, "greedy"),
            Method::Seval(n) => write!(f, "seval{n}"),
            Method::Dispatch(r) => write!(f, "{}", r.name()),
            Method::Exact(t) => write!(f, "exact{t}"),
        }
    }
}

impl FromStr for Method {
    type Err = BenchError;

    /// `greedy`, `seval<n>` (or `seval-<n>`), `spt`, `mwkr`, `fifo`,
    /// `exact` or `exact<seconds>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        let bad = || BenchError::Method(s.to_string());
        if t == "greedy" {
            return Ok(Method::Greedy);
        }
        if let Some(n) = t.strip_prefix("seval") {
            let n: usize = n.trim_start_matches('-').parse().map_err(|_| bad())?;
            return if n == 0 { Err(bad()) } else { Ok(Method::Seval(n)) };
        }
        if let Some(rest) = t.strip_prefix("exact") {
            if rest.is_empty() {
                return Ok(Method::Exact(60.0));
            }
            let secs: f64 = rest.trim_start_matches('-').parse().map_err(|_| bad())?;
            return if secs > 0.0 { Ok(Method::Exact(secs)) } else { Err(bad()) };
        }
        t.parse::<DispatchRule>().map(Method::Dispatch).map_err(|_| bad())
    }
}

/// Parses a comma-separated method list; empty items are skipped.
pub fn parse_methods(list: &str) -> Result<Vec<Method>, BenchError> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub instance: String,
    pub jobs: usize,
    pub machines: usize,
    pub method: Method,
    pub makespan: Time,
    pub reference: Time,
    pub gap: f64,
    pub wall_time: Duration,
    pub schedule: Schedule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub jobs: usize,
    pub machines: usize,
    pub method: Method,
    pub count: usize,
    pub mean_gap: f64,
    pub mean_time: Duration,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub methods: Vec<Method>,
    /// Instance ids in evaluation order with their data.
    pub instances: Vec<(String, Arc<JsspInstance>)>,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    /// Mean gap and time per (size, method), recomputed from the rows.
    pub fn aggregates(&self) -> Vec<Aggregate> {
        let mut groups: BTreeMap<(usize, usize, usize), Vec<&BenchRow>> = BTreeMap::new();
        for r in &self.rows {
            let mi = self.methods.iter().position(|m| *m == r.method).unwrap_or(usize::MAX);
            groups.entry((r.jobs, r.machines, mi)).or_default().push(r);
        }
        groups
            .into_values()
            .map(|rows| {
                let n = rows.len();
                Aggregate {
                    jobs: rows[0].jobs,
                    machines: rows[0].machines,
                    method: rows[0].method,
                    count: n,
                    mean_gap: rows.iter().map(|r| r.gap).sum::<f64>() / n as f64,
                    mean_time: rows.iter().map(|r| r.wall_time).sum::<Duration>() / n as u32,
                }
            })
            .collect()
    }

    /// Mean gap of one method over all rows.
    pub fn mean_gap(&self, method: Method) -> Option<f64> {
        let gaps: Vec<f64> = self.rows.iter().filter(|r| r.method == method).map(|r| r.gap).collect();
        (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64)
    }
}

/// Reads `name value` lines; `#` starts a comment.
pub fn parse_references(text: &str) -> Result<HashMap<String, Time>, BenchError> {
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: &str| BenchError::References { line: i + 1, msg: msg.into() };
        let mut parts = line.split_whitespace();
        let (Some(name), Some(value), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(err("expected `name value`"));
        };
        let v: Time = value.parse().map_err(|_| err("reference is not a non-negative integer"))?;
        out.insert(name.to_string(), v);
    }
    Ok(out)
}

pub fn load_references(path: &Path) -> Result<HashMap<String, Time>, BenchError> {
    parse_references(&fs::read_to_string(path).map_err(io(path))?)
}

/// Reads every regular file in `dir` as an instance, sorted by name. The
/// id is the file stem.
pub fn load_instances(dir: &Path) -> Result<Vec<(String, Arc<JsspInstance>)>, BenchError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let text = fs::read_to_string(&p).map_err(io(&p))?;
            let inst = parse(&text, detect_format(&text))
                .map_err(|e| BenchError::Instance { path: p.clone(), msg: e.to_string() })?;
            let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((id, Arc::new(inst)))
        })
        .collect()
}

/// Largest side for which a missing reference is computed by the oracle.
pub const ORACLE_FALLBACK_SIDE: usize = 8;

/// Seconds allowed for an oracle fallback reference.
pub const ORACLE_FALLBACK_LIMIT: f64 = 60.0;

fn reference_for(id: &str, inst: &JsspInstance, refs: &HashMap<String, Time>) -> Result<Time, BenchError> {
    if let Some(&r) = refs.get(id) {
        return Ok(r);
    }
    if inst.num_jobs() > ORACLE_FALLBACK_SIDE || inst.num_machines() > ORACLE_FALLBACK_SIDE {
        return Err(BenchError::MissingReference(id.to_string()));
    }
    let res = solve_exact(inst, SolveLimits::with_time_limit(ORACLE_FALLBACK_LIMIT));
    if res.status != ProofStatus::Optimal {
        return Err(BenchError::ReferenceTimeout(id.to_string()));
    }
    Ok(res.makespan)
}

fn run_method(
    index: usize,
    id: &str,
    inst: &Arc<JsspInstance>,
    method: Method,
    model: Option<&Model<f32>>,
    seed: u64,
) -> Result<(Schedule, Time), BenchError> {
    let engine = |source| BenchError::Engine { id: id.to_string(), method, source };
    match method {
        Method::Greedy => {
            let r = greedy_rollout(inst, model.ok_or(BenchError::NeedsModel(method))?).map_err(engine)?;
            Ok((r.schedule, r.makespan))
        }
        Method::Seval(n) => {
            let m = model.ok_or(BenchError::NeedsModel(method))?;
            let r = seval_rollout(inst, m, n, CandidateMode::Maximal, derive_seed(seed, index as u64)).map_err(engine)?;
            Ok((r.schedule, r.makespan))
        }
        Method::Dispatch(rule) => {
            let r = dispatch_solve(inst, rule);
            Ok((r.schedule, r.makespan))
        }
        Method::Exact(secs) => {
            let r = solve_exact(inst, SolveLimits::with_time_limit(secs));
            Ok((r.schedule, r.makespan))
        }
    }
}

/// Evaluates every method on every instance. Instances run in parallel;
/// rows come out in instance order, then method order.
pub fn run_benchmark(
    instances: Vec<(String, Arc<JsspInstance>)>,
    methods: &[Method],
    model: Option<&Model<f32>>,
    refs: &HashMap<String, Time>,
    seed: u64,
) -> Result<BenchReport, BenchError> {
    if let Some(&m) = methods.iter().find(|m| m.needs_model()) {
        if model.is_none() {
            return Err(BenchError::NeedsModel(m));
        }
    }
    let per_instance: Vec<Vec<BenchRow>> = instances
        .par_iter()
        .enumerate()
        .map(|(index, (id, inst))| {
            if methods.is_empty() {
                return Ok(Vec::new());
            }
            let reference = reference_for(id, inst, refs)?;
            methods
                .iter()
                .map(|&method| {
                    let t = Instant::now();
                    let (schedule, makespan) = run_method(index, id, inst, method, model, seed)?;
                    let wall_time = t.elapsed();
                    let gap = optimal_gap(f64::from(makespan), f64::from(reference))
                        .map_err(|e| BenchError::Instance { path: id.into(), msg: e.to_string() })?;
                    Ok(BenchRow {
                        instance: id.clone(),
                        jobs: inst.num_jobs(),
                        machines: inst.num_machines(),
                        method,
                        makespan,
                        reference,
                        gap,
                        wall_time,
                        schedule,
                    })
                })
                .collect()
        })
        .collect::<Result<_, BenchError>>()?;
    Ok(BenchReport { methods: methods.to_vec(), instances, rows: per_instance.into_iter().flatten().collect() })
}

pub const ROW_HEADER: &str = "instance\tjobs\tmachines\tmethod\tmakespan\treference\tgap_pct\twall_ms";
pub const AGGREGATE_HEADER: &str = "size\tmethod\tcount\tmean_gap_pct\tmean_wall_ms";

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

pub fn format_rows(report: &BenchReport) -> String {
    let mut s = format!("{ROW_HEADER}\n");
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{:.4}\t{:.3}",
            r.instance,
            r.jobs,
            r.machines,
            r.method,
            r.makespan,
            r.reference,
            r.gap,
            ms(r.wall_time)
        );
    }
    s
}

pub fn format_aggregates(report: &BenchReport) -> String {
    let mut s = format!("{AGGREGATE_HEADER}\n");
    for a in report.aggregates() {
        let _ = writeln!(
            s,
            "{}x{}\t{}\t{}\t{:.4}\t{:.3}",
            a.jobs,
            a.machines,
            a.method,
            a.count,
            a.mean_gap,
            ms(a.mean_time)
        );
    }
    s
}

/// Aligned text table: one line per size, one gap column per method.
pub fn format_summary(report: &BenchReport) -> String {
    let mut s = format!("{:<8}", "size");
    for m in &report.methods {
        let _ = write!(s, "{:>12}", m.to_string());
    }
    s.push('\n');
    let aggs = report.aggregates();
    let mut sizes: Vec<(usize, usize)> = aggs.iter().map(|a| (a.jobs, a.machines)).collect();
    sizes.dedup();
    for (n, m) in sizes {
        let _ = write!(s, "{:<8}", format!("{n}x{m}"));
        for method in &report.methods {
            match aggs.iter().find(|a| a.jobs == n && a.machines == m && a.method == *method) {
                Some(a) => {
                    let _ = write!(s, "{:>11.2}%", a.mean_gap);
                }
                None => {
                    let _ = write!(s, "{:>12}", "-");
                }
            }
        }
        s.push('\n');
    }
    s.push_str("gap = (makespan - reference) / reference * 100; wall times are local to this machine\n");
    s
}

const PX_PER_UNIT: f64 = 4.0;
const ROW_HEIGHT: f64 = 20.0;
const LEFT: f64 = 40.0;

fn job_colour(job: usize) -> String {
    let hue = (job * 137) % 360;
    format!("hsl({hue},60%,65%)")
}

/// SVG Gantt chart: one row per machine, one rectangle per operation.
/// Every rectangle carries its job, machine, start and end as data
/// attributes so charts can be checked after the fact.
pub fn gantt_svg(instance: &JsspInstance, schedule: &Schedule, title: &str) -> String {
    let cmax: Time = instance
        .jobs()
        .iter()
        .enumerate()
        .flat_map(|(j, ops)| ops.iter().enumerate().map(move |(i, o)| schedule.start(j, i) + o.duration))
        .max()
        .unwrap_or(0);
    let width = LEFT + f64::from(cmax) * PX_PER_UNIT + 20.0;
    let height = ROW_HEIGHT * (instance.num_machines() as f64 + 2.0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" data-makespan=\"{cmax}\">"
    );
    let _ = writeln!(s, "<title>{}</title>", title.replace('&', "&amp;").replace('<', "&lt;"));
    for m in 0..instance.num_machines() {
        let y = ROW_HEIGHT * (m as f64 + 1.0);
        let _ = writeln!(s, "<text x=\"2\" y=\"{}\" font-size=\"10\">M{}</text>", y + 14.0, m + 1);
    }
    for (j, ops) in instance.jobs().iter().enumerate() {
        for (i, o) in ops.iter().enumerate() {
            let start = schedule.start(j, i);
            let x = LEFT + f64::from(start) * PX_PER_UNIT;
            let y = ROW_HEIGHT * (o.machine as f64 + 1.0) + 2.0;
            let w = f64::from(o.duration) * PX_PER_UNIT;
            let _ = writeln!(
                s,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{w}\" height=\"{}\" fill=\"{}\" stroke=\"black\" \
                 data-job=\"{j}\" data-op=\"{i}\" data-machine=\"{}\" data-start=\"{start}\" data-end=\"{}\"/>",
                ROW_HEIGHT - 4.0,
                job_colour(j),
                o.machine,
                start + o.duration
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// A bar read back from a chart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GanttBar {
    pub job: usize,
    pub op: usize,
    pub machine: usize,
    pub start: Time,
    pub end: Time,
}

fn attr<T: FromStr>(tag: &str, name: &str) -> Option<T> {
    let key = format!("{name}=\"");
    let at = tag.find(&key)? + key.len();
    let len = tag[at..].find('"')?;
    tag[at..at + len].parse().ok()
}

/// Reads the bars of a chart written by [`gantt_svg`].
pub fn parse_gantt_svg(text: &str) -> Vec<GanttBar> {
    text.lines()
        .filter(|l| l.starts_with("<rect"))
        .filter_map(|l| {
            Some(GanttBar {
                job: attr(l, "data-job")?,
                op: attr(l, "data-op")?,
                machine: attr(l, "data-machine")?,
                start: attr(l, "data-start")?,
                end: attr(l, "data-end")?,
            })
        })
        .collect()
}

/// Pairs of bars that overlap on the same machine.
pub fn gantt_overlaps(bars: &[GanttBar]) -> Vec<(GanttBar, GanttBar)> {
    let mut sorted = bars.to_vec();
    sorted.sort_by_key(|b| (b.machine, b.start, b.end));
    sorted.windows(2).filter(|w| w[0].machine == w[1].machine && w[1].start < w[0].end).map(|w| (w[0], w[1])).collect()
}

/// Written artifact paths.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub rows: PathBuf,
    pub aggregates: PathBuf,
    pub summary: PathBuf,
    pub gantt: Vec<PathBuf>,
}

/// Writes the tables and one Gantt chart per instance, drawn from the
/// first method's schedule.
pub fn emit_artifacts(report: &BenchReport, out: &Path) -> Result<Artifacts, BenchError> {
    fs::create_dir_all(out).map_err(io(out))?;
    let write = |name: &str, text: String| -> Result<PathBuf, BenchError> {
        let p = out.join(name);
        fs::write(&p, text).map_err(io(&p))?;
        Ok(p)
    };
    let rows = write("gaps.tsv", format_rows(report))?;
    let aggregates = write("aggregates.tsv", format_aggregates(report))?;
    let summary = write("summary.txt", format_summary(report))?;
    let mut gantt = Vec::new();
    if let Some(&first) = report.methods.first() {
        let dir = out.join("gantt");
        fs::create_dir_all(&dir).map_err(io(&dir))?;
        let by_id: HashMap<&str, &Arc<JsspInstance>> = report.instances.iter().map(|(i, x)| (i.as_str(), x)).collect();
        for r in report.rows.iter().filter(|r| r.method == first) {
            let inst = by_id[r.instance.as_str()];
            let p = dir.join(format!("{}.svg", r.instance));
            let title = format!("{} {} makespan {}", r.instance, r.method, r.makespan);
            fs::write(&p, gantt_svg(inst, &r.schedule, &title)).map_err(io(&p))?;
            gantt.push(p);
        }
    }
    Ok(Artifacts { rows, aggregates, summary, gantt })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate, parse_standard};
    use crate::model::ModelConfig;

    fn one_by_one() -> Vec<(String, Arc<JsspInstance>)> {
        vec![("one".into(), Arc::new(parse_standard("1 1\n0 5\n").unwrap()))]
    }

    #[test]
    fn method_names_round_trip() {
        for s in ["greedy", "seval16", "spt", "mwkr", "fifo", "exact5"] {
            assert_eq!(s.parse::<Method>().unwrap().to_string(), s);
        }
        assert_eq!("seval-4".parse::<Method>().unwrap(), Method::Seval(4));
        assert_eq!("exact".parse::<Method>().unwrap(), Method::Exact(60.0));
        assert!("seval0".parse::<Method>().is_err());
        assert!("beam".parse::<Method>().is_err());
        assert_eq!(parse_methods("greedy, spt,").unwrap(), vec![Method::Greedy, Method::Dispatch(DispatchRule::Spt)]);
    }

    #[test]
    fn one_by_one_greedy_has_zero_gap() {
        let model = Model::<f32>::new(ModelConfig::tiny(), 0).unwrap();
        let refs = HashMap::from([("one".to_string(), 5)]);
        let r = run_benchmark(one_by_one(), &[Method::Greedy], Some(&model), &refs, 0).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.rows[0].gap, 0.0);
    }

    #[test]
    fn report_has_a_row_per_method_and_instance() {
        let model = Model::<f32>::new(ModelConfig::tiny(), 0).unwrap();
        let insts: Vec<_> = (0..3).map(|i| (format!("r{i}"), Arc::new(generate(4, 4, i)))).collect();
        let methods = parse_methods("greedy,seval16,spt").unwrap();
        let r = run_benchmark(insts, &methods, Some(&model), &HashMap::new(), 1).unwrap();
        assert_eq!(r.rows.len(), 9);
        for i in 0..3 {
            let id = format!("r{i}");
            for m in &methods {
                assert_eq!(r.rows.iter().filter(|x| x.instance == id && x.method == *m).count(), 1);
            }
        }
        for row in &r.rows {
            assert_eq!(row.gap, optimal_gap(f64::from(row.makespan), f64::from(row.reference)).unwrap());
        }
        for a in r.aggregates() {
            let gaps: Vec<f64> = r.rows.iter().filter(|x| x.method == a.method).map(|x| x.gap).collect();
            assert!((a.mean_gap - gaps.iter().sum::<f64>() / gaps.len() as f64).abs() < 1e-12);
            assert_eq!(a.count, 3);
        }
    }

    #[test]
    fn model_methods_need_a_checkpoint() {
        assert!(matches!(
            run_benchmark(one_by_one(), &[Method::Seval(4)], None, &HashMap::new(), 0),
            Err(BenchError::NeedsModel(Method::Seval(4)))
        ));
    }

    #[test]
    fn large_instances_need_a_reference() {
        let big = vec![("big".to_string(), Arc::new(generate(10, 10, 0)))];
        let spt = [Method::Dispatch(DispatchRule::Spt)];
        assert!(matches!(run_benchmark(big.clone(), &spt, None, &HashMap::new(), 0), Err(BenchError::MissingReference(_))));
        let refs = HashMap::from([("big".to_string(), 500)]);
        assert_eq!(run_benchmark(big, &spt, None, &refs, 0).unwrap().rows[0].reference, 500);
    }

    #[test]
    fn references_file_parsing() {
        let r = parse_references("# best known\nta01 1231\nft06 55  # classic\n\n").unwrap();
        assert_eq!(r["ta01"], 1231);
        assert_eq!(r["ft06"], 55);
        assert!(matches!(parse_references("ta01\n"), Err(BenchError::References { line: 1, .. })));
        assert!(parse_references("ta01 -3\n").is_err());
    }

    #[test]
    fn empty_method_list_gives_header_only_table() {
        let dir = tempfile::tempdir().unwrap();
        let r = run_benchmark(one_by_one(), &[], None, &HashMap::new(), 0).unwrap();
        let a = emit_artifacts(&r, dir.path()).unwrap();
        assert_eq!(fs::read_to_string(a.rows).unwrap(), format!("{ROW_HEADER}\n"));
        assert!(a.gantt.is_empty());
    }

    #[test]
    fn gantt_files_parse_back_without_overlaps() {
        let dir = tempfile::tempdir().unwrap();
        let insts: Vec<_> = (0..3).map(|i| (format!("g{i}"), Arc::new(generate(5, 4, 10 + i)))).collect();
        let methods = [Method::Dispatch(DispatchRule::Mwkr), Method::Dispatch(DispatchRule::Spt)];
        let r = run_benchmark(insts, &methods, None, &HashMap::new(), 0).unwrap();
        let a = emit_artifacts(&r, dir.path()).unwrap();
        assert_eq!(a.gantt.len(), 3);
        for (path, (_, inst)) in a.gantt.iter().zip(&r.instances) {
            let bars = parse_gantt_svg(&fs::read_to_string(path).unwrap());
            assert_eq!(bars.len(), inst.num_ops());
            assert!(gantt_overlaps(&bars).is_empty());
        }
        let bad = [
            GanttBar { job: 0, op: 0, machine: 1, start: 0, end: 5 },
            GanttBar { job: 1, op: 0, machine: 1, start: 4, end: 6 },
        ];
        assert_eq!(gantt_overlaps(&bad).len(), 1);
        let summary = fs::read_to_string(a.summary).unwrap();
        assert!(summary.starts_with("size") && summary.contains("5x4"));
    }

    #[test]
    fn instances_load_from_a_directory() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("b.txt"), "1 1\n0 5\n").unwrap();
        fs::write(dir.path().join("a.txt"), "2 2\n0 1 1 2\n1 3 0 1\n").unwrap();
        let v = load_instances(dir.path()).unwrap();
        assert_eq!(v.iter().map(|x| x.0.as_str()).collect::<Vec<_>>(), ["a", "b"]);
    }
}
