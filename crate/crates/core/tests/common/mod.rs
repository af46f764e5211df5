//! Checks shared by the property tests and the acceptance suite. Each returns
//! `Err` with a short description of the first violation.
#![allow(dead_code)]

use picard_mpe::simulate::Actor;
use picard_mpe::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = std::result::Result<(), String>;

fn mix(seed: u64, a: usize, b: usize, counts: &[u32]) -> f64 {
    let mut z = seed ^ (a as u64).wrapping_mul(0x9E37_79B9) ^ ((b as u64) << 24);
    for &c in counts {
        z = z.wrapping_mul(6364136223846793005).wrapping_add(c as u64 + 1442695040888963407);
    }
    z ^= z >> 29;
    ((z >> 33) % 1000) as f64 / 1000.0
}

/// Quadratic-cost model with pseudo-random nonnegative rates and costs.
pub fn random_model(seed: u64, d: usize, n: u32, horizon: f64) -> GameModel {
    GameModel::builder(d, n, horizon)
        .lambda0(move |x, y, c| 2.0 * mix(seed, x, y, c))
        .lambda1(move |x, y, c| 0.2 + mix(seed ^ 0xABCD, y, x, c))
        .state_cost(move |x, c| mix(seed ^ 0x1234, x, 7, c))
        .terminal_cost(move |x, c| 3.0 * mix(seed ^ 0x5678, x, 11, c))
        .build()
        .unwrap()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn generators_annihilate_constants(model: &GameModel, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = rng.gen_range(-10.0..10.0);
    let v = vec![c; model.num_states()];
    let ctrl = random_vec(&mut rng, model.num_states() * (model.d() - 1), 0.0, 3.0);
    for flat in 0..model.num_states() {
        let a = model.tagged_generator(&v, &ctrl, flat);
        let b = model.population_generator(&v, &ctrl, flat);
        if a != 0.0 || b != 0.0 {
            return Err(format!("generators on constant {c} at state {flat}: {a}, {b}"));
        }
    }
    Ok(())
}

/// `H <= l(a) + sum (lambda0 + lambda1 a) p` for random `a >= 0`, with
/// equality at the minimizer, on `samples` random points.
pub fn hamiltonian_envelope(model: &GameModel, seed: u64, samples: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = model.d() - 1;
    let mut best = vec![0.0; k];
    for _ in 0..samples {
        let flat = rng.gen_range(0..model.num_states());
        let p = random_vec(&mut rng, k, -4.0, 4.0);
        let a = random_vec(&mut rng, k, 0.0, 5.0);
        let h = model.hamiltonian(flat, &p);
        let upper = model.pre_hamiltonian(flat, &p, &a);
        if h > upper + 1e-12 {
            return Err(format!("H = {h} above {upper} at state {flat}, p = {p:?}, a = {a:?}"));
        }
        model.minimizer(flat, &p, &mut best);
        let at = model.pre_hamiltonian(flat, &p, &best);
        if (h - at).abs() > 1e-12 {
            return Err(format!("H = {h} but value at minimizer {at}"));
        }
    }
    Ok(())
}

pub fn hamiltonian_concave(model: &GameModel, seed: u64, samples: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = model.d() - 1;
    for _ in 0..samples {
        let flat = rng.gen_range(0..model.num_states());
        let p = random_vec(&mut rng, k, -4.0, 4.0);
        let q = random_vec(&mut rng, k, -4.0, 4.0);
        let mid: Vec<f64> = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
        let lhs = model.hamiltonian(flat, &mid);
        let rhs = 0.5 * (model.hamiltonian(flat, &p) + model.hamiltonian(flat, &q));
        if lhs < rhs - 1e-12 {
            return Err(format!("H not concave at state {flat}: {lhs} < {rhs}"));
        }
    }
    Ok(())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `|a(p) - a(q)| <= max lambda1 |p - q|` for the quadratic family.
pub fn minimizer_lipschitz(model: &GameModel, seed: u64, samples: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = model.d() - 1;
    let gain = (0..model.num_states())
        .flat_map(|f| (0..k).map(move |j| (f, j)))
        .map(|(f, j)| model.lambda1(f, j).abs())
        .fold(0.0, f64::max);
    let (mut a, mut b) = (vec![0.0; k], vec![0.0; k]);
    for _ in 0..samples {
        let flat = rng.gen_range(0..model.num_states());
        let p = random_vec(&mut rng, k, -4.0, 4.0);
        let q = random_vec(&mut rng, k, -4.0, 4.0);
        model.minimizer(flat, &p, &mut a);
        model.minimizer(flat, &q, &mut b);
        let da: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let dp: Vec<f64> = p.iter().zip(&q).map(|(x, y)| x - y).collect();
        if norm(&da) > gain * norm(&dp) + 1e-12 {
            return Err(format!("minimizer moved {} for |dp| = {} (gain {gain})", norm(&da), norm(&dp)));
        }
    }
    Ok(())
}

/// `0 <= v^beta <= c_v` for `beta = 0` and a random bounded control.
pub fn value_bounds(model: &GameModel, seed: u64) -> Check {
    let grid = TimeGrid::new(model.horizon(), 20).unwrap();
    let dim = model.d() - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = grid.num_nodes() * model.num_states() * dim;
    let random = ControlField::from_vec(grid, model.num_states(), dim, random_vec(&mut rng, n, 0.0, 2.0)).unwrap();
    let zero = ControlField::zeros(grid, model.num_states(), dim);
    let cfg = OdeConfig::default();
    let c_v = model.compute_bounds().c_v;
    let tol = 10.0 * (cfg.rtol * c_v + cfg.atol);
    for beta in [&zero, &random] {
        let v = solve_hjb(model, beta, &grid, &cfg).map_err(|e| e.to_string())?;
        for &x in v.data() {
            if x < -tol || x > c_v + tol {
                return Err(format!("value {x} outside [0, {c_v}]"));
            }
        }
    }
    Ok(())
}

/// Replays every event of `m` simulated paths and checks that the tagged
/// state and counts stay consistent and on the simplex.
pub fn count_conservation(model: &GameModel, m: usize, seed: u64, opts: &SimOptions) -> Check {
    let dim = model.d() - 1;
    let grid = TimeGrid::new(model.horizon(), 10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0FFEE);
    let n = grid.num_nodes() * model.num_states() * dim;
    let alpha = ControlField::from_vec(grid, model.num_states(), dim, random_vec(&mut rng, n, 0.0, 2.0)).unwrap();
    let beta = ControlField::from_vec(grid, model.num_states(), dim, random_vec(&mut rng, n, 0.0, 2.0)).unwrap();
    let theta0 = InitialDistribution::uniform(model.d());
    let recs = simulate_batch(model, &alpha, &beta, &theta0, m, seed, opts).map_err(|e| e.to_string())?;
    let table = model.table();
    for (i, rec) in recs.iter().enumerate() {
        let mut x = rec.x0;
        let mut counts = table.counts(rec.mu0).to_vec();
        let mut last = 0.0;
        for e in &rec.events {
            if !(e.time >= last && e.time <= model.horizon()) || e.from == e.to || e.to >= model.d() {
                return Err(format!("trajectory {i}: bad event {e:?}"));
            }
            last = e.time;
            match e.actor {
                Actor::Tagged => {
                    if e.from != x {
                        return Err(format!("trajectory {i}: tagged jump from {} while in {x}", e.from));
                    }
                    x = e.to;
                }
                Actor::Untagged(_) => {
                    if counts[e.from] == 0 {
                        return Err(format!("trajectory {i}: untagged jump out of empty state {}", e.from));
                    }
                    counts[e.from] -= 1;
                    counts[e.to] += 1;
                }
            }
            if counts.iter().sum::<u32>() != model.n() || table.counts(e.mu_after) != counts.as_slice() {
                return Err(format!("trajectory {i}: counts {counts:?} left the simplex or disagree with the record"));
            }
        }
    }
    Ok(())
}

/// Kolmogorov-Smirnov statistic of `samples` against Exponential(`rate`).
pub fn ks_exponential(samples: &mut [f64], rate: f64) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let f = 1.0 - (-rate * t).exp();
            (f - i as f64 / m).abs().max(((i + 1) as f64 / m - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic KS critical value at level 0.01.
pub fn ks_critical_001(m: usize) -> f64 {
    1.6276 / (m as f64).sqrt()
}

/// First pooled event times of `m` paths with constant rates, and the total
/// rate they should follow.
pub fn first_event_times(d: usize, n: u32, m: usize, seed: u64) -> (Vec<f64>, f64) {
    let (l0, l1, a, b) = (0.3, 0.7, 0.8, 0.4);
    let horizon = 60.0;
    let model = GameModel::builder(d, n, horizon)
        .lambda0(move |_, _, _| l0)
        .lambda1(move |_, _, _| l1)
        .build()
        .unwrap();
    let grid = TimeGrid::new(horizon, 4).unwrap();
    let alpha = ControlField::constant(grid, model.num_states(), d - 1, a).unwrap();
    let beta = ControlField::constant(grid, model.num_states(), d - 1, b).unwrap();
    let theta0 = InitialDistribution::uniform(d);
    let recs = simulate_batch(&model, &alpha, &beta, &theta0, m, seed, &SimOptions::default()).unwrap();
    let times = recs.iter().map(|r| r.events.first().map_or(horizon, |e| e.time)).collect();
    // every player leaves at rate (d - 1)(lambda0 + lambda1 * control)
    let rate = (d - 1) as f64 * ((l0 + l1 * a) + n as f64 * (l0 + l1 * b));
    (times, rate)
}
