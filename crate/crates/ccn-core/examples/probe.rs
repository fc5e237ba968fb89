//! Scratch probe for calibrating the synthetic experiments.

use ccn_core::circuit::compile;
use ccn_core::metrics::au_prc;
use ccn_core::mlp::{init_model, train, wrap_baseline, LossChoice, Nonlinearity, TrainConfig, WrapperKind};
use ccn_core::sweep::{sweep_experiment, SweepConfig, SweepKind};
use ccn_core::synth::gen_nine_rect;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(String::as_str).unwrap_or("exp2");
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let runs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(3);

    match mode {
        "exp2" => exp2(epochs, runs),
        "sweep" => sweep(epochs, runs),
        "lcmc" => lcmc(epochs, runs),
        _ => eprintln!("unknown mode"),
    }
}

fn lcmc(epochs: usize, runs: usize) {
    let t0 = Instant::now();
    let cfg = SweepConfig {
        runs,
        epochs,
        ..SweepConfig::default()
    };
    let report = sweep_experiment(SweepKind::LcmcSweep, &cfg).unwrap();
    for step in &report.steps {
        println!(
            "step {}: ccn au {:.4} one_err {:.4}  f+ au {:.4} one_err {:.4}",
            step.step,
            step.system("ccn").mean_of(|r| r.au_prc),
            step.system("ccn").mean_of(|r| r.one_error),
            step.system("f_plus").mean_of(|r| r.au_prc),
            step.system("f_plus").mean_of(|r| r.one_error),
        );
    }
    println!("elapsed {:.1?}", t0.elapsed());
}

fn exp2(epochs: usize, runs: usize) {
    let mut ccn_scores = Vec::new();
    let mut hcm_scores = Vec::new();
    for run in 0..runs {
        let t0 = Instant::now();
        let (data, rules) = gen_nine_rect(1000 + run as u64).unwrap();
        let circuit = compile(&rules).unwrap();
        let (x, y) = data.train();
        let (tx, ty) = data.test();
        let cfg = TrainConfig {
            epochs,
            learning_rate: 1e-2,
            seed: 42 + run as u64,
            ..TrainConfig::default()
        };
        for (name, choice, wrapper) in [
            ("ccn", LossChoice::CLoss, WrapperKind::CcnCLoss),
            ("h_cm", LossChoice::BceAfterCm, WrapperKind::HCmBce),
        ] {
            let init = init_model(&[2, 7, 9], Nonlinearity::Tanh, 7 + run as u64 * 13);
            let out = train(&init, &x, &y, None, Some(&circuit), choice, &cfg).unwrap();
            let sys = wrap_baseline(out.model, wrapper, Some(&circuit)).unwrap();
            let scores = sys.infer(&tx).unwrap();
            let s = au_prc(&scores, &ty).unwrap();
            println!(
                "run {run} {name}: au_prc = {s:.4} (final loss {:.5}) [{:.1?}]",
                out.history.last().unwrap().train_loss,
                t0.elapsed()
            );
            if name == "ccn" {
                ccn_scores.push(s);
            } else {
                hcm_scores.push(s);
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let std = |v: &[f64]| {
        let m = mean(v);
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
    };
    println!(
        "CCN  mean {:.4} std {:.4}\nh+CM mean {:.4} std {:.4}",
        mean(&ccn_scores),
        std(&ccn_scores),
        mean(&hcm_scores),
        std(&hcm_scores)
    );
}

fn sweep(epochs: usize, runs: usize) {
    let t0 = Instant::now();
    let cfg = SweepConfig {
        runs,
        epochs,
        ..SweepConfig::default()
    };
    let report = sweep_experiment(SweepKind::HmcSweep, &cfg).unwrap();
    for step in &report.steps {
        println!(
            "step {}: ccn {:.4} ({:.4})  f+ {:.4} ({:.4})  g+ {:.4} ({:.4})",
            step.step,
            step.system("ccn").mean_of(|r| r.au_prc),
            step.system("ccn").std_of(|r| r.au_prc),
            step.system("f_plus").mean_of(|r| r.au_prc),
            step.system("f_plus").std_of(|r| r.au_prc),
            step.system("g_plus").mean_of(|r| r.au_prc),
            step.system("g_plus").std_of(|r| r.au_prc),
        );
    }
    println!("elapsed {:.1?}", t0.elapsed());
}
