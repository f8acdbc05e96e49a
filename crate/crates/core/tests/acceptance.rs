//! One PASS/FAIL line per acceptance criterion; exits nonzero if any fails.

mod common;

use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use iclab::dual::{self, DualOptions};
use iclab::eval::{self, EvalOptions};
use iclab::harness::{self, BaseParams, SweepAxis, SweepConfig, Trainer};
use iclab::linalg::Matrix;
use iclab::pretrain::{self, Init, LossKind, TrainConfig};
use iclab::rng::{tags, RngStream};
use iclab::task::{gen_pretrain_batch, TaskParams};
use iclab::theory;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn to_dense(m: &Matrix<f64>) -> common::Dense {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn gradient_correctness() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let batch = common::batch(5, 4, seed);
        let w = Matrix::from_rows(&common::random_dense(5, seed, 0.02)).unwrap();
        for (kind, ell) in [
            (LossKind::Logistic, common::logistic as fn(f64) -> f64),
            (LossKind::Exponential, common::exponential),
        ] {
            let g = to_dense(&pretrain::gradient(&w, &batch, kind).unwrap());
            let fd = common::fd_gradient(&to_dense(&w), &batch, ell, 1e-5);
            for (gr, fr) in g.iter().zip(&fd) {
                for (a, b) in gr.iter().zip(fr) {
                    worst = worst.max((a - b).abs() / b.abs().max(1e-300));
                }
            }
        }
    }
    outcome(
        worst <= 1e-6,
        format!("max relative error {worst:.2e} (tol 1e-6)"),
    )
}

fn dual_exactness() -> Outcome {
    let mut lam_err = 0.0f64;
    let mut min_margin = f64::INFINITY;
    let mut duality = 0.0f64;
    for seed in 0..20 {
        let batch = common::batch(3, 3, 100 + seed);
        let g = common::gram(&batch);
        // keeps the oracle's iteration contractive when G is large
        let trace: f64 = (0..3).map(|i| g[i][i]).sum();
        let oracle = common::projected_gradient_dual(&g, (1e-4f64).min(1.0 / trace), 1_000_000);
        let sol = dual::max_margin(&batch, &DualOptions::default()).unwrap();
        for (a, b) in sol.lambdas.iter().zip(&oracle) {
            lam_err = lam_err.max((a - b).abs());
        }
        min_margin = min_margin.min(sol.min_margin());
        let f2 = sol.w.w.frobenius_sq();
        duality = duality.max((f2 - sol.sum_lambda()).abs() / sol.sum_lambda());
    }
    outcome(
        lam_err <= 1e-4 && min_margin >= 1.0 - 1e-6 && duality <= 1e-6,
        format!("|Δλ|∞ {lam_err:.2e}, min margin {min_margin:.9}, duality gap {duality:.2e}"),
    )
}

fn implicit_bias() -> Outcome {
    let batch = common::batch(10, 30, 0);
    let cfg = TrainConfig {
        loss: LossKind::Logistic,
        step_size: 0.01,
        steps: 200_000,
        init: Init::Zero,
        record_every: 10_000,
        snapshot_every: None,
    };
    let gd = pretrain::train(&cfg, &batch).unwrap();
    let mm = dual::max_margin(&batch, &DualOptions::default()).unwrap();
    let a = dual::directional_alignment(&gd.final_w.w, &mm.w.w).unwrap();
    outcome(a >= 0.99, format!("alignment {a:.5} (need >= 0.99)"))
}

fn benign_overfitting() -> Outcome {
    let params = TaskParams::reference(1000);
    let batch = gen_pretrain_batch(&params, RngStream::root(0).child(tags::PRETRAIN)).unwrap();
    let cfg = TrainConfig::<f64> {
        steps: 300,
        step_size: 0.01,
        ..Default::default()
    };
    let w = pretrain::train(&cfg, &batch).unwrap().final_w;
    let opts = EvalOptions {
        n_tasks: 1000,
        queries_per_task: 1,
    };
    let r = eval::evaluate(&w, &params, &opts, RngStream::root(0).child(tags::EVAL)).unwrap();
    let noisy = r.noisy_label_fit_rate.unwrap_or(f64::NAN);
    let lo = 1.0 - params.p - 0.05;
    let hi = 1.0 - params.p + 0.02;
    outcome(
        r.full_memorization_rate >= 0.95 && noisy >= 0.90 && (lo..=hi).contains(&r.test_acc_mean),
        format!(
            "full_mem {:.3} (>= 0.95), noisy_fit {noisy:.3} (>= 0.90), test {:.3} in [{lo:.2}, {hi:.2}]",
            r.full_memorization_rate, r.test_acc_mean
        ),
    )
}

fn task_count_effect() -> Outcome {
    let cfg = SweepConfig {
        base: BaseParams {
            d: 200,
            beta: 0.45,
            m: 1,
            p: 0.0,
            ..Default::default()
        },
        train: TrainConfig::default(),
        axis: SweepAxis::BatchB,
        values: vec![200.0, 20.0],
        n_eval_tasks: 1000,
        queries_per_task: 1,
        seeds: vec![0, 1, 2],
        trainer: Trainer::Gd,
        dual: DualOptions::default(),
        timing: false,
    };
    let out = harness::run_sweep(&cfg).unwrap();
    let mean_at = |b: f64| {
        let rs: Vec<f64> = out
            .records
            .iter()
            .filter(|r| r.value == b)
            .map(|r| r.test_acc_mean)
            .collect();
        rs.iter().sum::<f64>() / rs.len() as f64
    };
    let (big, small) = (mean_at(200.0), mean_at(20.0));
    outcome(
        out.flags.is_empty() && big - small >= 0.05,
        format!(
            "test acc B=d {big:.4}, B=d/10 {small:.4}, gap {:.4} (need >= 0.05)",
            big - small
        ),
    )
}

fn scaling_stability() -> Outcome {
    let template = TaskParams::reference(50);
    let rep = theory::scaling_sweep(
        &[50, 100, 200],
        &template,
        &DualOptions::default(),
        RngStream::root(0),
    )
    .unwrap();
    let worst = rep
        .sum_lambda_stability
        .max(rep.trace_stability)
        .max(rep.frob_stability);
    outcome(
        worst <= 10.0 && rep.all_positive,
        format!(
            "max/min: sum_lambda {:.3}, trace {:.3}, frobenius {:.3}; positive {}",
            rep.sum_lambda_stability, rep.trace_stability, rep.frob_stability, rep.all_positive
        ),
    )
}

fn hanson_wright() -> Outcome {
    let d = 50;
    let r_tilde = (d as f64).powf(0.35);
    let mut pass = true;
    let mut worst_z = 0.0f64;
    let mut min_c = f64::INFINITY;
    for k in 0..5 {
        let q = theory::random_symmetric(d, RngStream::new(k, tags::FIXTURE));
        let rep = theory::hanson_wright_check(
            &q,
            r_tilde,
            100_000,
            None,
            RngStream::new(k, tags::VERIFY),
        )
        .unwrap();
        pass &= rep.mean.pass && rep.c_hat_positive();
        worst_z = worst_z.max((rep.mean.mean - rep.mean.expected).abs() / rep.mean.se);
        min_c = min_c.min(rep.c_hat.unwrap_or(f64::INFINITY));
    }
    outcome(
        pass,
        format!("worst |Δmean|/se {worst_z:.2} (<= 5), min ĉ {min_c:.3} (> 0)"),
    )
}

fn zero_init_losses() -> Outcome {
    let batch = common::batch(10, 30, 7);
    let w = Matrix::zeros(10, 10);
    let lg = pretrain::loss(&w, &batch, LossKind::Logistic).unwrap();
    let ex = pretrain::loss(&w, &batch, LossKind::Exponential).unwrap();
    let err = (lg - std::f64::consts::LN_2).abs();
    outcome(
        err <= 1e-12 && ex == 1.0,
        format!("logistic |L − ln 2| {err:.1e}, exponential {ex}"),
    )
}

fn determinism() -> Outcome {
    let conf =
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/benign_overfitting.conf");
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_iclab"))
            .args(["sweep", "--config"])
            .arg(&conf)
            .args(["--threads", threads])
            .output()
            .expect("spawn iclab")
    };
    let a = run("1");
    let b = run("8");
    let ok = a.status.success() && b.status.success() && !a.stdout.is_empty();
    outcome(
        ok && a.stdout == b.stdout,
        format!(
            "exit {:?}/{:?}, {} vs {} bytes, identical {}",
            a.status.code(),
            b.status.code(),
            a.stdout.len(),
            b.stdout.len(),
            a.stdout == b.stdout
        ),
    )
}

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        (
            "gradient_correctness",
            Duration::from_secs(1),
            gradient_correctness,
        ),
        (
            "dual_solver_exactness",
            Duration::from_secs(10),
            dual_exactness,
        ),
        ("implicit_bias", Duration::from_secs(120), implicit_bias),
        (
            "benign_overfitting",
            Duration::from_secs(900),
            benign_overfitting,
        ),
        (
            "task_count_effect",
            Duration::from_secs(300),
            task_count_effect,
        ),
        (
            "scaling_stability",
            Duration::from_secs(180),
            scaling_stability,
        ),
        ("hanson_wright_mean", Duration::from_secs(30), hanson_wright),
        ("zero_init_losses", Duration::MAX, zero_init_losses),
        ("sweep_determinism", Duration::MAX, determinism),
    ];
    let mut failed = 0;
    for (name, budget, check) in criteria {
        let t0 = Instant::now();
        let o = check();
        let dt = t0.elapsed();
        let in_time = dt <= budget;
        let pass = o.pass && in_time;
        if !pass {
            failed += 1;
        }
        let budget_note = if budget == Duration::MAX {
            String::new()
        } else {
            format!(" / {}s", budget.as_secs())
        };
        println!(
            "{} {name}: {} [{:.2}s{budget_note}{}]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            dt.as_secs_f64(),
            if in_time { "" } else { ", over time" }
        );
    }
    println!("{} of 9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
