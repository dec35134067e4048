use std::fs;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use seval_core::bench::{emit_artifacts, load_instances, load_references, parse_methods, run_benchmark};
use seval_core::dataset::{build_dataset, BuildConfig, Dataset};
use seval_core::engine::{greedy_rollout, seval_rollout, train, CandidateMode, TrainConfig};
use seval_core::instance::{detect_format, format_schedule, parse, JsspInstance};
use seval_core::model::{Checkpoint, ModelConfig};
use seval_core::oracle::{dispatch_solve, solve_exact, DispatchRule, SolveLimits};

#[derive(Parser)]
#[command(name = "seval", version, about = "Job-shop scheduling with learned subset policies")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Rule {
    Exact,
    Spt,
    Mwkr,
    Fifo,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Greedy,
    Seval,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    Full,
    Desk,
    Tiny,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve one instance with the exact solver or a dispatch rule.
    Solve {
        file: PathBuf,
        #[arg(long, default_value_t = 10.0)]
        time_limit: f64,
        #[arg(long, value_enum, default_value_t = Rule::Exact)]
        rule: Rule,
    },
    /// Generate a labelled training corpus.
    GenData {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        jobs: usize,
        #[arg(long)]
        machines: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        perturbed_frac: f64,
        #[arg(long, default_value_t = 10.0)]
        time_limit: f64,
    },
    /// Train the policy and self-evaluation models.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 256)]
        batch: usize,
        #[arg(long, default_value_t = 3e-4)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Profile::Desk)]
        profile: Profile,
        #[arg(long, default_value_t = 16)]
        se_subsets: usize,
    },
    /// Schedule one instance with a trained checkpoint.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Seval)]
        mode: Mode,
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Stop sampled candidates at a random size instead of at maximality.
        #[arg(long)]
        random_k: bool,
    },
    /// Evaluate methods over a directory of instances.
    Bench {
        #[arg(long)]
        instances: PathBuf,
        #[arg(long)]
        refs: Option<PathBuf>,
        #[arg(long, default_value = "greedy,seval16,spt")]
        methods: String,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn read_instance(path: &PathBuf) -> Result<Arc<JsspInstance>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let inst = parse(&text, detect_format(&text)).with_context(|| format!("parsing {}", path.display()))?;
    Ok(Arc::new(inst))
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Solve { file, time_limit, rule } => {
            let inst = read_instance(&file)?;
            let res = match rule {
                Rule::Exact => solve_exact(&inst, SolveLimits::with_time_limit(time_limit)),
                Rule::Spt => dispatch_solve(&inst, DispatchRule::Spt),
                Rule::Mwkr => dispatch_solve(&inst, DispatchRule::Mwkr),
                Rule::Fifo => dispatch_solve(&inst, DispatchRule::Fifo),
            };
            println!("makespan {}", res.makespan);
            println!("status {:?}", res.status);
            print!("{}", format_schedule(&inst, &res.schedule)?);
        }
        Cmd::GenData { count, jobs, machines, seed, out, perturbed_frac, time_limit } => {
            if count == 0 || jobs == 0 || machines == 0 {
                bail!("count, jobs and machines must be positive");
            }
            let cfg = BuildConfig { perturbed_frac, time_limit, ..BuildConfig::new(count, jobs, machines, seed) };
            let t = Instant::now();
            let ds = build_dataset(&cfg, &out)?;
            let m = &ds.manifest;
            println!(
                "{} train / {} valid samples from {} clean and {} perturbed trajectories in {:.1}s",
                m.train_samples,
                m.valid_samples,
                m.clean_trajectories,
                m.perturbed_trajectories,
                t.elapsed().as_secs_f64()
            );
            println!("perturbation rejection rate {:.3} ({} attempts)", m.rejection_rate, m.perturbed_attempts);
        }
        Cmd::Train { data, out, epochs, batch, lr, seed, profile, se_subsets } => {
            let ds = Dataset::load(&data).with_context(|| format!("loading {}", data.display()))?;
            let model = match profile {
                Profile::Full => ModelConfig::full(),
                Profile::Desk => ModelConfig::desk(),
                Profile::Tiny => ModelConfig::tiny(),
            };
            let cfg = TrainConfig { epochs, batch_size: batch, lr, seed, model, se_subsets, ..TrainConfig::default() };
            let res = train(&ds, &cfg, Some(&out))?;
            println!("epoch\ttrain_kl\ttrain_mse\tvalid_kl\tvalid_mse");
            for m in &res.log {
                let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
                println!("{}\t{:.6}\t{:.6}\t{}\t{}", m.epoch, m.train_kl, m.train_mse, opt(m.valid_kl), opt(m.valid_mse));
            }
            println!("checkpoint {} ({}) in {:.1}s", out.display(), res.checkpoint.id(), res.wall_time.as_secs_f64());
        }
        Cmd::Infer { ckpt, instance, mode, n, seed, random_k } => {
            let ck = Checkpoint::load(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
            let inst = read_instance(&instance)?;
            let cand = if random_k { CandidateMode::RandomK } else { CandidateMode::Maximal };
            let r = match mode {
                Mode::Greedy => greedy_rollout(&inst, &ck.model)?,
                Mode::Seval => seval_rollout(&inst, &ck.model, n, cand, seed)?,
            };
            println!("makespan {}", r.makespan);
            println!("steps {}", r.steps);
            print!("{}", format_schedule(&inst, &r.schedule)?);
        }
        Cmd::Bench { instances, refs, methods, ckpt, out, seed } => {
            let methods = parse_methods(&methods)?;
            let model = ckpt.map(|p| Checkpoint::load(&p).with_context(|| format!("loading {}", p.display()))).transpose()?;
            let refs = refs.map(|p| load_references(&p)).transpose()?.unwrap_or_default();
            let report = run_benchmark(load_instances(&instances)?, &methods, model.as_ref().map(|c| &c.model), &refs, seed)?;
            let a = emit_artifacts(&report, &out)?;
            print!("{}", fs::read_to_string(&a.summary)?);
            println!("{} rows, {} charts in {}", report.rows.len(), a.gantt.len(), out.display());
        }
    }
    Ok(())
}
