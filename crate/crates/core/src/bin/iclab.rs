use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use iclab::dual::{self, DualOptions};
use iclab::eval::{self, BoundConstants, EvalOptions};
use iclab::harness::{self, BaseParams, Config, SweepConfig, PARAM_KEYS, TRAIN_KEYS};
use iclab::linalg::Matrix;
use iclab::model::Preconditioner;
use iclab::pretrain;
use iclab::rng::{tags, RngStream};
use iclab::task::{gen_pretrain_batch, PretrainTask, TaskParams};
use iclab::theory::{self, BilinearKind};

/// Pre-training, max-margin solving, evaluation, and sweeps for in-context
/// classification with a linear-attention predictor.
#[derive(Parser)]
#[command(name = "iclab", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,

    /// Flat key = value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output path; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Master seed (for `sweep`, replaces the seed list).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads.
    #[arg(long, global = true, env = "ICLAB_THREADS")]
    threads: Option<usize>,

    /// Config override, repeatable; wins over the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train W by gradient descent; writes the model JSON.
    Pretrain {
        /// Where to write the `step,loss` trace; defaults to `<out>.loss.csv`
        /// beside the model when `--out` is given.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Also write the generated task batch (JSON) here.
        #[arg(long)]
        save_batch: Option<PathBuf>,
    },
    /// Solve for the max-margin W; writes the dual solution JSON.
    Solve {
        /// Task batch JSON; generated from the config when omitted.
        #[arg(long)]
        batch: Option<PathBuf>,
    },
    /// Evaluate a model JSON on fresh test tasks.
    Eval {
        #[arg(long)]
        model: PathBuf,
    },
    /// Run a parameter sweep; writes CSV.
    Sweep,
    /// Empirical checks of the supporting statements.
    Verify {
        #[command(subcommand)]
        target: Target,
    },
}

#[derive(Subcommand, Clone, Copy)]
enum Target {
    Assumptions,
    Dataset,
    Scaling,
    Concentration,
}

const DUAL_KEYS: [&str; 2] = ["dual_tol", "dual_max_sweeps"];
const EVAL_KEYS: [&str; 2] = ["n_eval_tasks", "queries_per_task"];
const VERIFY_KEYS: [&str; 9] = [
    "delta",
    "c",
    "c0",
    "C",
    "c_b",
    "d_list",
    "kind",
    "q",
    "n_samples",
];

enum Status {
    Done,
    Flagged,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Status::Done) => ExitCode::SUCCESS,
        Ok(Status::Flagged) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut c = match &cli.config {
        Some(p) => Config::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => Config::default(),
    };
    for o in &cli.overrides {
        c.set_pair(o)?;
    }
    Ok(c)
}

fn allow(c: &Config, groups: &[&[&str]]) -> Result<()> {
    let known: Vec<&str> = groups.iter().flat_map(|g| g.iter().copied()).collect();
    c.check_keys(&known)?;
    Ok(())
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => {
            let mut s = std::io::stdout().lock();
            let nl: &[u8] = if text.ends_with('\n') { b"" } else { b"\n" };
            let res = s.write_all(text.as_bytes()).and_then(|_| s.write_all(nl));
            match res {
                // reader went away (`| head`), nothing left to report
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
                r => r?,
            }
        }
    }
    Ok(())
}

fn get<T: std::str::FromStr>(c: &Config, key: &str, default: T) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    match c.get(key) {
        Some(v) => v.parse().map_err(|e| anyhow::anyhow!("{key} = `{v}`: {e}")),
        None => Ok(default),
    }
}

fn dual_options(c: &Config) -> Result<DualOptions> {
    let d = DualOptions::default();
    Ok(DualOptions {
        tol: get(c, "dual_tol", d.tol)?,
        max_sweeps: get(c, "dual_max_sweeps", d.max_sweeps)?,
    })
}

fn params(c: &Config) -> Result<TaskParams> {
    Ok(BaseParams::from_config(c)?.resolve()?)
}

fn batch_for(c: &Config, seed: u64) -> Result<(TaskParams, Vec<PretrainTask<f64>>)> {
    let p = params(c)?;
    let batch = gen_pretrain_batch(&p, RngStream::root(seed).child(tags::PRETRAIN))?;
    Ok((p, batch))
}

fn json<T: serde::Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)?)
}

fn run(cli: Cli) -> Result<Status> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be >= 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    let c = load_config(&cli)?;
    let seed = cli.seed.unwrap_or(0);
    let out = cli.out.as_deref();
    match &cli.cmd {
        Cmd::Pretrain { trace, save_batch } => {
            allow(&c, &[&PARAM_KEYS, &TRAIN_KEYS])?;
            let cfg = harness::train_config_from(&c)?;
            let (_, batch) = batch_for(&c, seed)?;
            if let Some(p) = save_batch {
                std::fs::write(p, serde_json::to_string(&batch)?)?;
            }
            let tr = pretrain::train(&cfg, &batch)?;
            let trace = trace
                .clone()
                .or_else(|| out.map(|o| o.with_extension("loss.csv")));
            if let Some(p) = trace {
                std::fs::write(&p, tr.loss_csv())
                    .with_context(|| format!("writing {}", p.display()))?;
            }
            emit(out, &tr.final_w.to_json()?)?;
        }
        Cmd::Solve { batch } => {
            allow(&c, &[&PARAM_KEYS, &DUAL_KEYS])?;
            let opts = dual_options(&c)?;
            let batch: Vec<PretrainTask<f64>> = match batch {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)
                    .with_context(|| format!("parsing {}", p.display()))?,
                None => batch_for(&c, seed)?.1,
            };
            let sol = dual::max_margin(&batch, &opts)?;
            emit(out, &sol.to_json()?)?;
            if !sol.converged {
                eprintln!(
                    "warning: dual solver did not converge (kkt violation {:e})",
                    sol.kkt_violation
                );
                return Ok(Status::Flagged);
            }
        }
        Cmd::Eval { model } => {
            allow(&c, &[&PARAM_KEYS, &EVAL_KEYS])?;
            let w = Preconditioner::<f64>::from_json(&std::fs::read_to_string(model)?)?;
            let p = params(&c)?;
            let opts = EvalOptions {
                n_tasks: get(&c, "n_eval_tasks", 2500)?,
                queries_per_task: get(&c, "queries_per_task", 1)?,
            };
            let r = eval::evaluate(&w, &p, &opts, RngStream::root(seed).child(tags::EVAL))?;
            emit(out, &json(&r)?)?;
        }
        Cmd::Sweep => {
            let mut c = c;
            if let Some(s) = cli.seed {
                c.set("seeds", &s.to_string());
            }
            let cfg = SweepConfig::from_config(&c)?;
            let res = harness::run_sweep(&cfg)?;
            emit(out, &harness::to_csv_string(&res.records)?)?;
            for (i, why) in &res.flags {
                let r = &res.records[*i];
                eprintln!("flagged: {}={} seed={}: {why}", r.axis, r.value, r.seed);
            }
            if !res.flags.is_empty() {
                return Ok(Status::Flagged);
            }
        }
        Cmd::Verify { target } => return verify(*target, &c, seed, out),
    }
    Ok(Status::Done)
}

fn verify(target: Target, c: &Config, seed: u64, out: Option<&Path>) -> Result<Status> {
    allow(c, &[&PARAM_KEYS, &DUAL_KEYS, &VERIFY_KEYS])?;
    let k = BoundConstants::default();
    let consts = BoundConstants {
        delta: get(c, "delta", k.delta)?,
        c: get(c, "c", k.c)?,
        c0: get(c, "c0", k.c0)?,
        big_c: get(c, "C", k.big_c)?,
    };
    let stream = RngStream::root(seed).child(tags::VERIFY);
    let text = match target {
        Target::Assumptions => {
            let p = params(c)?;
            let c_b = c.get("c_b").map(str::parse::<f64>).transpose()?;
            let a = eval::check_assumptions(&p, consts.delta, consts.big_c, c_b)?;
            let b = eval::theoretical_bounds(&p, &consts)?;
            json(&serde_json::json!({ "assumptions": a, "bounds": b }))?
        }
        Target::Dataset => {
            let (p, batch) = batch_for(c, seed)?;
            let s = theory::dataset_stats(&batch, &p, consts.c0, consts.delta)?;
            let id = theory::identity_margin(&batch, p.r)?;
            json(&serde_json::json!({ "stats": s, "identity_min_margin": id }))?
        }
        Target::Scaling => {
            let d_list: Vec<usize> = c
                .get("d_list")
                .unwrap_or("50,100,200")
                .split(',')
                .map(|s| s.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .context("d_list")?;
            json(&theory::scaling_sweep(
                &d_list,
                &params(c)?,
                &dual_options(c)?,
                stream,
            )?)?
        }
        Target::Concentration => {
            let p = params(c)?;
            let n: usize = get(c, "n_samples", 100_000)?;
            let q = match c.get("q").unwrap_or("random") {
                "identity" => Matrix::identity(p.d),
                "zero" => Matrix::zeros(p.d, p.d),
                "random" => theory::random_symmetric(p.d, RngStream::new(seed, tags::FIXTURE)),
                other => bail!("unknown q `{other}` (identity | zero | random)"),
            };
            let rep = match c.get("kind").unwrap_or("hanson_wright") {
                "hanson_wright" => theory::hanson_wright_check(&q, p.r_tilde, n, None, stream)?,
                "mu_q_g" => {
                    theory::bilinear_concentration_check(&BilinearKind::MuQG { q }, &p, n, stream)?
                }
                "zeta_q_zeta" => theory::bilinear_concentration_check(
                    &BilinearKind::ZetaQZeta { q },
                    &p,
                    n,
                    stream,
                )?,
                "noisy_fraction" => theory::bilinear_concentration_check(
                    &BilinearKind::NoisyFraction,
                    &p,
                    n,
                    stream,
                )?,
                other => bail!("unknown kind `{other}`"),
            };
            json(&rep)?
        }
    };
    emit(out, &text)?;
    Ok(Status::Done)
}
