//! The subcommand pipelines. Each one resolves a config, runs its work,
//! writes artifacts into the output directory, and prints a short summary.

use std::fs;
use std::path::Path;

use privkd_core::nn::DenseNet;
use privkd_core::privacy::accountant::{default_orders, rdp_sgm_step, AccountantState};
use privkd_core::trainer::{
    batches_csv, evaluate, metrics_csv, pretrain_teacher, run, RunOutput, TrainConfig,
};
use privkd_core::{Error, Result};

use crate::artifacts::{Manifest, PrivacyReport, RunBlock};
use crate::config::{Config, SweepAxis};

pub fn cmd_pretrain(config_path: &Path, overrides: &[String]) -> Result<()> {
    let cfg = crate::config::load(config_path, overrides)?;
    fs::create_dir_all(&cfg.output.dir)?;
    let (private, bundle) = cfg.build_data()?;
    let teacher = pretrain_teacher(
        &private,
        &cfg.teacher.hidden,
        cfg.teacher.epochs,
        cfg.teacher.batch,
        cfg.teacher_optim(),
        cfg.teacher.seed,
    )?;
    let acc = evaluate(&teacher, &bundle.test)?;

    let teacher_path = cfg.teacher_path();
    fs::write(&teacher_path, teacher.to_json()?)?;

    let mut manifest = Manifest::new("pretrain", cfg.teacher.seed, &cfg)?;
    manifest.artifact("teacher", &teacher_path);
    manifest.run = Some(RunBlock {
        acc_teacher: acc,
        acc_student: None,
        epsilon: None,
        delta: None,
        order: None,
        sanitize_calls: None,
        accountant_steps: None,
        floor_hits_total: None,
    });
    manifest.write(&cfg.out_path("manifest_pretrain.json"))?;

    println!("wrote {}", teacher_path.display());
    println!("teacher test accuracy: {acc}");
    Ok(())
}

fn load_teacher(cfg: &Config) -> Result<DenseNet> {
    let path = cfg.teacher_path();
    if !path.exists() {
        return Err(Error::config(format!(
            "teacher checkpoint {} does not exist; run pretrain first or point \
             teacher.checkpoint at one",
            path.display()
        )));
    }
    DenseNet::from_json(&fs::read_to_string(&path)?)
}

fn run_transfer(cfg: &Config) -> Result<(TrainConfig, DenseNet, RunOutput)> {
    let teacher = load_teacher(cfg)?;
    let (_, bundle) = cfg.build_data()?;
    let tc = cfg.train_config(bundle.public.len())?;
    let out = run(&tc, &teacher, &bundle)?;
    Ok((tc, teacher, out))
}

pub fn cmd_distill(config_path: &Path, overrides: &[String]) -> Result<()> {
    let cfg = crate::config::load(config_path, overrides)?;
    fs::create_dir_all(&cfg.output.dir)?;
    let (tc, _, out) = run_transfer(&cfg)?;

    let student_path = cfg.out_path("student.json");
    fs::write(&student_path, out.student.to_json()?)?;
    let metrics_path = cfg.out_path("metrics.csv");
    fs::write(&metrics_path, metrics_csv(&out.metrics))?;
    let privacy_path = cfg.out_path("privacy.json");
    PrivacyReport::new(&tc.dp, &out.accountant, &out).write(&privacy_path)?;

    let mut manifest = Manifest::new("distill", tc.seed, &cfg)?.with_train(&tc)?;
    manifest.artifact("teacher", &cfg.teacher_path());
    manifest.artifact("student", &student_path);
    manifest.artifact("metrics", &metrics_path);
    manifest.artifact("privacy", &privacy_path);
    if tc.per_batch {
        let batches_path = cfg.out_path("batches.csv");
        fs::write(&batches_path, batches_csv(&out.batches))?;
        manifest.artifact("batches", &batches_path);
    }
    let last = out.metrics.last().expect("epochs >= 1");
    manifest.run = Some(RunBlock {
        acc_teacher: last.acc_teacher,
        acc_student: Some(last.acc_student),
        epsilon: Some(out.spend.epsilon),
        delta: Some(out.spend.delta),
        order: Some(out.spend.order),
        sanitize_calls: Some(out.sanitize_calls),
        accountant_steps: Some(out.accountant.steps()),
        floor_hits_total: Some(out.metrics.iter().map(|m| m.floor_hits).sum()),
    });
    manifest.write(&cfg.out_path("manifest_distill.json"))?;

    for m in &out.metrics {
        println!(
            "epoch {}: student {:.4}, teacher {:.4}, eps {:.4}",
            m.epoch, m.acc_student, m.acc_teacher, m.eps
        );
    }
    println!(
        "(epsilon, delta) = ({}, {}); student test accuracy {}",
        out.spend.epsilon, out.spend.delta, last.acc_student
    );
    Ok(())
}

fn parse_orders(spec: Option<&str>) -> Result<Vec<u32>> {
    match spec {
        None => Ok(default_orders()),
        Some(s) => s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<u32>()
                    .map_err(|_| Error::config(format!("orders must be integers, got `{p}`")))
            })
            .collect(),
    }
}

pub fn cmd_account(q: f64, m: f64, steps: u64, delta: f64, orders: Option<&str>) -> Result<()> {
    let orders = parse_orders(orders)?;
    let per_step = rdp_sgm_step(q, m, &orders)?;
    let mut accountant = AccountantState::new(orders)?;
    accountant.compose(&per_step, steps)?;
    let spend = accountant.to_dp(delta)?;

    println!("order  eps_rdp_per_step  eps_rdp_total  eps_at_delta");
    for (i, &alpha) in accountant.orders().iter().enumerate() {
        let total = accountant.eps_rdp()[i];
        let converted = total + (1.0 / delta).ln() / (alpha as f64 - 1.0);
        println!("{alpha:<6} {:<17.10} {total:<14.10} {converted:.10}", per_step[i]);
    }
    println!(
        "(epsilon, delta) = ({}, {}) at order {}",
        spend.epsilon, spend.delta, spend.order
    );
    Ok(())
}

fn axis_key(axis: SweepAxis) -> &'static str {
    match axis {
        SweepAxis::NPub => "n_pub",
        SweepAxis::M => "m",
        SweepAxis::Alpha => "alpha",
        SweepAxis::Epochs => "epochs",
    }
}

fn as_count(value: f64, key: &str) -> Result<usize> {
    let rounded = value.round();
    if !(value.is_finite() && (value - rounded).abs() < 1e-9 && rounded >= 1.0) {
        return Err(Error::config(format!(
            "sweep values for {key} must be positive integers, got {value}"
        )));
    }
    Ok(rounded as usize)
}

fn apply_axis(cfg: &mut Config, axis: SweepAxis, value: f64) -> Result<()> {
    match axis {
        SweepAxis::NPub => cfg.data.n_public = as_count(value, "n_pub")?,
        SweepAxis::M => cfg.privacy.noise_multiplier = value,
        SweepAxis::Alpha => cfg.transfer.alpha = value,
        SweepAxis::Epochs => cfg.transfer.epochs = as_count(value, "epochs")?,
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct SweepRow {
    value: f64,
    seed: u64,
    acc_teacher: f64,
    acc_student: f64,
    epsilon: f64,
}

/// One sweep cell: fixes the axis value, pretrains the teacher once, then
/// runs the transfer under each seed.
fn sweep_cell(base: &Config, axis: SweepAxis, value: f64, seeds: &[u64]) -> Result<Vec<SweepRow>> {
    let mut cfg = base.clone();
    apply_axis(&mut cfg, axis, value)?;
    let (private, bundle) = cfg.build_data()?;
    let teacher = pretrain_teacher(
        &private,
        &cfg.teacher.hidden,
        cfg.teacher.epochs,
        cfg.teacher.batch,
        cfg.teacher_optim(),
        cfg.teacher.seed,
    )?;
    let mut rows = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut tc = cfg.train_config(bundle.public.len())?;
        tc.seed = seed;
        let out = run(&tc, &teacher, &bundle)?;
        let last = out.metrics.last().expect("epochs >= 1");
        rows.push(SweepRow {
            value,
            seed,
            acc_teacher: last.acc_teacher,
            acc_student: last.acc_student,
            epsilon: out.spend.epsilon,
        });
    }
    Ok(rows)
}

pub fn cmd_sweep(config_path: &Path, overrides: &[String], parallel: bool) -> Result<()> {
    let cfg = crate::config::load(config_path, overrides)?;
    let sweep = cfg
        .sweep
        .clone()
        .ok_or_else(|| Error::config("sweep needs a [sweep] section".to_string()))?;
    fs::create_dir_all(&cfg.output.dir)?;

    let cells: Vec<Vec<SweepRow>> = if parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = sweep
                .values
                .iter()
                .map(|&v| {
                    let cfg = &cfg;
                    let seeds = &sweep.seeds;
                    scope.spawn(move || sweep_cell(cfg, sweep.axis, v, seeds))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sweep worker panicked"))
                .collect::<Result<_>>()
        })?
    } else {
        sweep
            .values
            .iter()
            .map(|&v| sweep_cell(&cfg, sweep.axis, v, &sweep.seeds))
            .collect::<Result<_>>()?
    };

    let key = axis_key(sweep.axis);
    let mut csv = String::from("axis,value,seed,acc_teacher,acc_student,epsilon\n");
    for cell in &cells {
        for r in cell {
            csv.push_str(&format!(
                "{key},{},{},{},{},{}\n",
                r.value, r.seed, r.acc_teacher, r.acc_student, r.epsilon
            ));
        }
    }
    let sweep_path = cfg.out_path("sweep.csv");
    fs::write(&sweep_path, csv)?;

    let mut manifest = Manifest::new("sweep", cfg.transfer.seed, &cfg)?;
    manifest.artifact("sweep", &sweep_path);
    manifest.write(&cfg.out_path("manifest_sweep.json"))?;

    for cell in &cells {
        let n = cell.len() as f64;
        let mean_s = cell.iter().map(|r| r.acc_student).sum::<f64>() / n;
        let mean_t = cell.iter().map(|r| r.acc_teacher).sum::<f64>() / n;
        let mean_e = cell.iter().map(|r| r.epsilon).sum::<f64>() / n;
        println!(
            "{key}={}: student mean {mean_s:.4} (teacher {mean_t:.4}, eps {mean_e:.4}) over {} seeds",
            cell[0].value,
            cell.len()
        );
    }
    println!("wrote {}", sweep_path.display());
    Ok(())
}
