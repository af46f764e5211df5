//! CSV output and control-file input. Floats use Rust's shortest round-trip
//! formatting, so equal values always give equal bytes.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::game_model::{destination, GameModel};
use crate::grid::{ControlField, TimeGrid, ValueField};
use crate::simulate::{Actor, CostEstimate, DistributionBands, TrajectoryRecord};

fn count_headers(d: usize) -> impl Iterator<Item = String> {
    (1..=d).map(|i| format!("n_{i}"))
}

fn state_prefix(model: &GameModel, t: f64, flat: usize) -> Vec<String> {
    let (x, mu) = model.table().split(flat);
    let mut row = vec![t.to_string(), model.labels()[x].clone()];
    row.extend(model.table().counts(mu).iter().map(|c| c.to_string()));
    row
}

/// `t, x, n_1..n_d, v` for every node and joint state.
pub fn write_values<W: Write>(model: &GameModel, value: &ValueField, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string(), "x".to_string()];
    header.extend(count_headers(model.d()));
    header.push("v".into());
    w.write_record(&header)?;
    let grid = value.grid();
    for k in 0..grid.num_nodes() {
        for flat in 0..model.num_states() {
            let mut row = state_prefix(model, grid.node(k), flat);
            row.push(value.get(k, flat).to_string());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `t, x, n_1..n_d, a_1..a_{d-1}`; `a_k` is the rate towards the `k`-th state
/// other than `x`, in state order.
pub fn write_control<W: Write>(model: &GameModel, control: &ControlField, out: W) -> Result<()> {
    let d = model.d();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string(), "x".to_string()];
    header.extend(count_headers(d));
    header.extend((1..d).map(|k| format!("a_{k}")));
    w.write_record(&header)?;
    let grid = control.grid();
    for k in 0..grid.num_nodes() {
        for flat in 0..model.num_states() {
            let mut row = state_prefix(model, grid.node(k), flat);
            row.extend(control.at(k, flat).iter().map(|a| a.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn parse<T: std::str::FromStr>(field: &str, line: usize, what: &str) -> Result<T> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("line {line}: cannot parse {what} from {field:?}")))
}

/// Reads a file written by [`write_control`] back onto `model`'s state space.
/// Rows may come in any order but must cover every node and state once.
pub fn read_control<R: Read>(model: &GameModel, input: R) -> Result<ControlField> {
    let d = model.d();
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let expected = 2 + d + (d - 1);
    if header.len() != expected {
        return Err(Error::DimensionMismatch(format!(
            "control file has {} columns, model with d = {d} needs {expected}",
            header.len()
        )));
    }
    let mut rows: Vec<(f64, usize, Vec<f64>)> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let t: f64 = parse(&rec[0], line, "t")?;
        let x = model
            .labels()
            .iter()
            .position(|l| l == rec[1].trim())
            .ok_or_else(|| Error::InvalidArgument(format!("line {line}: unknown state {:?}", &rec[1])))?;
        let counts: Vec<u32> = (0..d).map(|j| parse(&rec[2 + j], line, "count")).collect::<Result<_>>()?;
        let mu = model.table().rank(&counts)?;
        let a: Vec<f64> = (0..d - 1).map(|j| parse(&rec[2 + d + j], line, "rate")).collect::<Result<_>>()?;
        rows.push((t, model.table().joint(x, mu), a));
    }
    let states = model.num_states();
    if rows.is_empty() || rows.len() % states != 0 {
        return Err(Error::DimensionMismatch(format!(
            "control file has {} rows, not a multiple of {states} states",
            rows.len()
        )));
    }
    let nodes = rows.len() / states;
    if nodes < 2 {
        return Err(Error::DimensionMismatch("control file needs at least two time nodes".into()));
    }
    let horizon = rows.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
    let grid = TimeGrid::new(horizon, nodes - 1)?;
    let tol = 1e-9 * horizon.max(1.0);
    let mut data = vec![f64::NAN; nodes * states * (d - 1)];
    let mut seen = vec![false; nodes * states];
    for (t, flat, a) in rows {
        let k = (t / grid.dt()).round() as usize;
        if k >= nodes || (grid.node(k) - t).abs() > tol {
            return Err(Error::DimensionMismatch(format!("time {t} is not on a uniform grid")));
        }
        let slot = k * states + flat;
        if seen[slot] {
            return Err(Error::InvalidArgument(format!("duplicate row for t = {t}, state {flat}")));
        }
        seen[slot] = true;
        data[slot * (d - 1)..(slot + 1) * (d - 1)].copy_from_slice(&a);
    }
    ControlField::from_vec(grid, states, d - 1, data)
}

fn write_pairs<W: Write, A: ToString, B: ToString>(
    names: [&str; 2],
    rows: impl IntoIterator<Item = (A, B)>,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(names)?;
    for (a, b) in rows {
        w.write_record([a.to_string(), b.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `iter, residual`, iterations counted from 1.
pub fn write_convergence<W: Write>(residuals: &[f64], out: W) -> Result<()> {
    write_pairs(["iter", "residual"], residuals.iter().enumerate().map(|(i, r)| (i + 1, *r)), out)
}

/// `iter, deviation`, iterations counted from 1.
pub fn write_deviations<W: Write>(deviations: &[f64], out: W) -> Result<()> {
    write_pairs(["iter", "deviation"], deviations.iter().enumerate().map(|(i, r)| (i + 1, *r)), out)
}

/// `iter, epsilon`.
pub fn write_exploitability<W: Write>(eps: &[f64], out: W) -> Result<()> {
    write_pairs(["iter", "epsilon"], eps.iter().enumerate().map(|(i, r)| (i + 1, *r)), out)
}

/// `p, z`.
pub fn write_slice<W: Write>(slice: &[(f64, f64)], out: W) -> Result<()> {
    write_pairs(["p", "z"], slice.iter().copied(), out)
}

/// `traj_id, cost`.
pub fn write_costs<W: Write>(costs: &[f64], out: W) -> Result<()> {
    write_pairs(["traj_id", "cost"], costs.iter().enumerate().map(|(i, c)| (i, *c)), out)
}

/// `iter, mean, stderr`, iterations counted from 1.
pub fn write_iteration_costs<W: Write>(costs: &[CostEstimate], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iter", "mean", "stderr"])?;
    for (i, c) in costs.iter().enumerate() {
        w.write_record([(i + 1).to_string(), c.mean.to_string(), c.stderr.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `iter, epoch, loss`.
pub fn write_losses<W: Write>(losses: &[(usize, usize, f64)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iter", "epoch", "loss"])?;
    for (i, e, l) in losses {
        w.write_record([i.to_string(), e.to_string(), l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `traj_id, event_time, actor, from, to`, one row per jump. The actor is
/// `tagged` or `untagged`.
pub fn write_trajectories<W: Write>(model: &GameModel, records: &[TrajectoryRecord], out: W) -> Result<()> {
    let labels = model.labels();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["traj_id", "event_time", "actor", "from", "to"])?;
    for (i, rec) in records.iter().enumerate() {
        for e in &rec.events {
            let actor = match e.actor {
                Actor::Tagged => "tagged",
                Actor::Untagged(_) => "untagged",
            };
            w.write_record([
                i.to_string(),
                e.time.to_string(),
                actor.to_string(),
                labels[e.from].clone(),
                labels[e.to].clone(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `t, mean_<s>, std_<s>` for every state `s`.
pub fn write_distribution<W: Write>(model: &GameModel, bands: &DistributionBands, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    for l in model.labels() {
        header.push(format!("mean_{l}"));
        header.push(format!("std_{l}"));
    }
    w.write_record(&header)?;
    for (i, t) in bands.times.iter().enumerate() {
        let mut row = vec![t.to_string()];
        for s in 0..model.d() {
            row.push(bands.mean[i][s].to_string());
            row.push(bands.std[i][s].to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Destination label of control column `a_k` at state `x`.
pub fn control_column_target(model: &GameModel, x: usize, k: usize) -> &str {
    &model.labels()[destination(x, k)]
}
