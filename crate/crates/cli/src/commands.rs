//! Subcommand bodies. Every command writes its CSV files and a `summary.json`
//! into the configured output directory.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use picard_mpe::io;
use picard_mpe::{
    distribution_bands, exploitability, neural_picard_run, picard_run, picard_run_noisy, sample_on_grid,
    simulate_batch, slice_observable, solve_nll_direct, ControlField, GameModel, NoiseConfig, PresetId, SimMode,
    SimOptions, ValueField,
};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::Failure;

fn create(cfg: &RunConfig, name: &str) -> Result<BufWriter<File>, Failure> {
    let path = cfg.out.join(name);
    let f = File::create(&path).map_err(|e| Failure::Solver(format!("cannot create {}: {e}", path.display())))?;
    Ok(BufWriter::new(f))
}

fn write_json(cfg: &RunConfig, name: &str, value: &Value) -> Result<(), Failure> {
    let mut w = create(cfg, name)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Failure::Solver(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn model_summary(cfg: &RunConfig, model: &GameModel) -> Value {
    json!({
        "preset": cfg.model.preset.map(|p| p.as_str()),
        "d": model.d(),
        "n": model.n(),
        "horizon": model.horizon(),
        "labels": model.labels(),
    })
}

fn write_field_outputs(
    cfg: &RunConfig,
    model: &GameModel,
    value: &ValueField,
    control: &ControlField,
) -> Result<(), Failure> {
    io::write_values(model, value, create(cfg, "values.csv")?)?;
    io::write_control(model, control, create(cfg, "control.csv")?)?;
    if model.d() == 2 {
        io::write_slice(&slice_observable(model, value, 0)?, create(cfg, "slice.csv")?)?;
    }
    Ok(())
}

fn read_control(model: &GameModel, path: &Path) -> Result<ControlField, Failure> {
    let f = File::open(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok(io::read_control(model, std::io::BufReader::new(f))?)
}

fn sim_options(cfg: &RunConfig) -> SimOptions {
    SimOptions {
        mode: if cfg.mc.thinning {
            SimMode::Thinning { bound: None }
        } else {
            SimMode::Frozen
        },
        refresh: cfg.mc.refresh,
        ..SimOptions::default()
    }
}

fn report_times(cfg: &RunConfig, horizon: f64) -> Vec<f64> {
    let k = cfg.mc.points.max(2) - 1;
    (0..=k).map(|i| horizon * i as f64 / k as f64).collect()
}

pub fn picard(cfg: &RunConfig) -> Result<(), Failure> {
    let model = cfg.build_model()?;
    let pc = cfg.picard_config()?;
    let r = picard_run(&model, &pc)?;
    log::info!("picard: {} solves in {:.2} s", r.iterations_run, r.elapsed_secs);
    write_field_outputs(cfg, &model, &r.final_value, &r.final_control)?;
    io::write_convergence(&r.residuals, create(cfg, "convergence.csv")?)?;
    if cfg.picard.certify {
        io::write_exploitability(&r.exploitability, create(cfg, "exploitability.csv")?)?;
    }
    if !r.converged {
        log::warn!("no convergence to {} within {} iterations", pc.tol, pc.max_iter);
    }
    write_json(
        cfg,
        "summary.json",
        &json!({
            "command": "picard",
            "model": model_summary(cfg, &model),
            "intervals": pc.grid.intervals(),
            "rho": pc.rho,
            "tol": pc.tol,
            "converged": r.converged,
            "iterations": r.iterations_run,
            "final_residual": r.residuals.last(),
            "rate_fit": r.rate_fit.map(|f| json!({
                "slope": f.slope,
                "gamma": f.gamma(),
                "r_squared": f.r_squared,
            })),
            "max_control_norm": r.max_control_norm,
            "c_a": r.c_a,
            "exploitability": r.exploitability.last(),
        }),
    )
}

pub fn direct(cfg: &RunConfig) -> Result<(), Failure> {
    let model = cfg.build_model()?;
    let grid = cfg.time_grid()?;
    let s = solve_nll_direct(&model, &grid, &cfg.ode_config())?;
    if s.unstable {
        log::warn!("direct solve unstable: max |v| = {} against c_v = {}", s.max_abs, s.bound);
    }
    write_field_outputs(cfg, &model, &s.value, &s.control)?;
    write_json(
        cfg,
        "summary.json",
        &json!({
            "command": "direct",
            "model": model_summary(cfg, &model),
            "intervals": grid.intervals(),
            "max_abs_value": s.max_abs,
            "c_v": s.bound,
            "unstable": s.unstable,
        }),
    )
}

pub fn verify(cfg: &RunConfig, control: &Path) -> Result<(), Failure> {
    let model = cfg.build_model()?;
    let beta = read_control(&model, control)?;
    if (beta.grid().horizon() - model.horizon()).abs() > 1e-9 * model.horizon().max(1.0) {
        return Err(Failure::Config(format!(
            "control horizon {} differs from model horizon {}",
            beta.grid().horizon(),
            model.horizon()
        )));
    }
    let grid = match cfg.grid.m {
        Some(_) => cfg.time_grid()?,
        None => *beta.grid(),
    };
    let cert = exploitability(&model, &beta, &grid, &cfg.ode_config())?;
    println!(
        "epsilon = {:e} at t = {}, x = {}, counts = {:?}",
        cert.epsilon,
        cert.argmax.t,
        model.labels()[cert.argmax.x],
        cert.argmax.counts
    );
    let mut doc = serde_json::to_value(&cert).map_err(|e| Failure::Solver(e.to_string()))?;
    doc["model"] = model_summary(cfg, &model);
    write_json(cfg, "certificate.json", &doc)
}

pub fn simulate(cfg: &RunConfig, control: &Path, population: Option<&Path>) -> Result<(), Failure> {
    let model = cfg.build_model()?;
    let alpha = read_control(&model, control)?;
    let beta = match population {
        Some(p) => read_control(&model, p)?,
        None => alpha.clone(),
    };
    let theta0 = cfg.initial(model.d());
    theta0.validate(&model)?;
    let opts = sim_options(cfg);
    let records = simulate_batch(&model, &alpha, &beta, &theta0, cfg.mc.m, cfg.mc.seed, &opts)?;
    let est = picard_mpe::simulate::summarize(&model, &records);
    io::write_trajectories(&model, &records, create(cfg, "trajectories.csv")?)?;
    io::write_costs(&est.costs, create(cfg, "costs.csv")?)?;
    let times = report_times(cfg, model.horizon());
    let evaluations = cfg.evaluations();
    let bands = distribution_bands(&model, &alpha, &beta, &theta0, cfg.mc.m, evaluations, cfg.mc.seed, &times, &opts)?;
    io::write_distribution(&model, &bands, create(cfg, "distribution.csv")?)?;
    let last = bands.mean.last().cloned().unwrap_or_default();
    write_json(
        cfg,
        "summary.json",
        &json!({
            "command": "simulate",
            "model": model_summary(cfg, &model),
            "trajectories": cfg.mc.m,
            "evaluations": evaluations,
            "seed": cfg.mc.seed,
            "thinning": cfg.mc.thinning,
            "cost_mean": est.mean,
            "cost_stderr": est.stderr,
            "per_start": est.per_start,
            "terminal_distribution": last,
        }),
    )
}

pub fn neural(cfg: &RunConfig) -> Result<(), Failure> {
    let model = cfg.build_model()?;
    let theta0 = cfg.initial(model.d());
    let tc = cfg.train_config();
    let r = neural_picard_run(&model, &theta0, cfg.neural.iters, cfg.neural.rho, &tc)?;
    let mut w = create(cfg, "control.json")?;
    w.write_all(r.control.to_json()?.as_bytes())?;
    w.flush()?;
    drop(w);
    let grid = cfg.time_grid()?;
    let sampled = sample_on_grid(&model, &r.control, grid)?;
    io::write_control(&model, &sampled, create(cfg, "control.csv")?)?;
    io::write_losses(&r.losses, create(cfg, "losses.csv")?)?;
    io::write_iteration_costs(&r.costs, create(cfg, "iteration_costs.csv")?)?;
    let opts = SimOptions {
        mode: SimMode::Frozen,
        refresh: Some(cfg.mc.refresh.unwrap_or(0.01)),
        ..SimOptions::default()
    };
    let est = picard_mpe::estimate_cost(
        &model,
        &r.control,
        &r.control,
        &theta0,
        cfg.neural.eval_trajectories,
        cfg.mc.seed,
        &opts,
    )?;
    write_json(
        cfg,
        "summary.json",
        &json!({
            "command": "neural",
            "model": model_summary(cfg, &model),
            "iterations": cfg.neural.iters,
            "rho": cfg.neural.rho,
            "train": tc,
            "weights": r.control.weights(),
            "cost_mean": est.mean,
            "cost_stderr": est.stderr,
            "eval_trajectories": est.trajectories,
        }),
    )
}

pub fn noise(cfg: &RunConfig) -> Result<(), Failure> {
    let model = cfg.build_model()?;
    let pc = cfg.picard_config()?;
    let nc = NoiseConfig {
        delta: cfg.noise.delta,
        seed: cfg.noise.seed,
    };
    let (r, dev) = picard_run_noisy(&model, &pc, &nc)?;
    io::write_deviations(&dev, create(cfg, "deviations.csv")?)?;
    io::write_convergence(&r.residuals, create(cfg, "convergence.csv")?)?;
    write_json(
        cfg,
        "summary.json",
        &json!({
            "command": "noise",
            "model": model_summary(cfg, &model),
            "rho": pc.rho,
            "delta": nc.delta,
            "seed": nc.seed,
            "iterations": r.iterations_run,
            "max_deviation": dev.iter().copied().fold(0.0, f64::max),
            "final_deviation": dev.last(),
        }),
    )
}

pub fn presets_list() {
    for p in PresetId::ALL {
        println!("{:<10} {}", p.as_str(), p.description());
        println!("{:<10} N = {}, T = {}", "", p.default_n(), p.default_horizon());
        for (name, value) in p.parameters() {
            println!("{:<10} {name} = {value}", "");
        }
    }
}
