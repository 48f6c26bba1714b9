//! Continuous-time jump processes: the embedded-chain / holding-time
//! realization, transition kernels by uniformization, and time
//! discretization.
//!
//! Randomness comes from ChaCha8 streams. Trajectory `k` of an ensemble
//! seeded with `s` always draws from stream `k` of key `s`, independent of
//! how the ensemble is scheduled.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chain::{entropy_rate, stationary_of_generator, Generator};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::graph::DirectedGraph;
use crate::output;
use crate::stats::poisson_weights;

/// Jump probabilities `q_ij / q_i` and holding rates `q_i` of a generator.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedChain {
    jumps: DMatrix<f64>,
    rates: Vec<f64>,
    /// Per row: successors with cumulative probabilities.
    cumulative: Vec<Vec<(usize, f64)>>,
}

impl EmbeddedChain {
    pub fn jump_matrix(&self) -> &DMatrix<f64> {
        &self.jumps
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    fn next_state<R: Rng>(&self, state: usize, rng: &mut R) -> usize {
        let row = &self.cumulative[state];
        let u: f64 = rng.random();
        row.iter()
            .find(|&&(_, c)| u < c)
            .or(row.last())
            .map(|&(j, _)| j)
            .expect("state without successors")
    }

    /// Exponential holding time by inversion, `U ∈ (0, 1]`.
    fn holding_time<R: Rng>(&self, state: usize, rng: &mut R) -> f64 {
        let u = 1.0 - rng.random::<f64>();
        -u.ln() / self.rates[state]
    }
}

pub fn embed(q: &Generator) -> Result<EmbeddedChain> {
    let m = q.matrix();
    let n = q.len();
    let rates = q.rates();
    if let Some(i) = rates.iter().position(|&r| !(r > 0.0)) {
        return Err(Error::NotGenerator(format!(
            "state {i} is absorbing (q_{i} = {})",
            rates[i]
        )));
    }
    let jumps = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { m[(i, j)] / rates[i] });
    let cumulative = (0..n)
        .map(|i| {
            let mut acc = 0.0;
            (0..n)
                .filter(|&j| jumps[(i, j)] > 0.0)
                .map(|j| {
                    acc += jumps[(i, j)];
                    (j, acc)
                })
                .collect()
        })
        .collect();
    Ok(EmbeddedChain {
        jumps,
        rates,
        cumulative,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    /// State entered by the jump.
    pub state: usize,
    /// Time spent in the previous state before the jump.
    pub holding: f64,
}

/// Sample path on `[0, horizon]`: the start state, the jumps taken before
/// the horizon, and the holding time drawn in the last state (which
/// carries the path past the horizon).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub start: usize,
    pub jumps: Vec<Jump>,
    pub final_holding: f64,
    pub horizon: f64,
}

impl Trajectory {
    pub fn jump_count(&self) -> usize {
        self.jumps.len()
    }

    /// `Z_0, Z_1, …, Z_N`
    pub fn states(&self) -> Vec<usize> {
        std::iter::once(self.start)
            .chain(self.jumps.iter().map(|j| j.state))
            .collect()
    }

    /// Holding time of every visited state, the last one included.
    pub fn holding_times(&self) -> Vec<f64> {
        self.jumps
            .iter()
            .map(|j| j.holding)
            .chain(std::iter::once(self.final_holding))
            .collect()
    }

    /// Absolute jump times `t_1, …, t_N`.
    pub fn jump_times(&self) -> Vec<f64> {
        self.jumps
            .iter()
            .scan(0.0, |t, j| {
                *t += j.holding;
                Some(*t)
            })
            .collect()
    }

    pub fn end_state(&self) -> usize {
        self.jumps.last().map_or(self.start, |j| j.state)
    }

    /// Right-continuous state at time `t`.
    pub fn state_at(&self, t: f64) -> usize {
        let mut state = self.start;
        let mut clock = 0.0;
        for j in &self.jumps {
            clock += j.holding;
            if clock > t {
                break;
            }
            state = j.state;
        }
        state
    }

    /// Checks the structural invariants against `g`; returns a description
    /// of the first violation.
    pub fn check(&self, g: &DirectedGraph) -> std::result::Result<(), String> {
        let mut prev = self.start;
        let mut clock = 0.0;
        for (k, j) in self.jumps.iter().enumerate() {
            if j.state == prev {
                return Err(format!("jump {k} is a self-jump at {prev}"));
            }
            if !g.has_edge(prev, j.state) {
                return Err(format!("jump {k} uses non-edge {prev}->{}", j.state));
            }
            if !(j.holding > 0.0) {
                return Err(format!("jump {k} has holding time {}", j.holding));
            }
            clock += j.holding;
            prev = j.state;
        }
        if clock > self.horizon {
            return Err(format!(
                "last jump at {clock} is past the horizon {}",
                self.horizon
            ));
        }
        if !(clock + self.final_holding > self.horizon) {
            return Err("final holding time does not reach the horizon".into());
        }
        Ok(())
    }
}

/// Generator for trajectory `index` of an ensemble keyed by `seed`.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn check_start(spec: &EmbeddedChain, start: usize) -> Result<()> {
    if start >= spec.len() {
        return Err(Error::InvalidArgument(format!(
            "start node {start} out of range"
        )));
    }
    Ok(())
}

pub fn sample_with<R: Rng>(
    spec: &EmbeddedChain,
    start: usize,
    horizon: f64,
    rng: &mut R,
) -> Trajectory {
    let mut state = start;
    let mut clock = 0.0;
    let mut jumps = Vec::new();
    loop {
        let hold = spec.holding_time(state, rng);
        if clock + hold > horizon {
            return Trajectory {
                start,
                jumps,
                final_holding: hold,
                horizon,
            };
        }
        clock += hold;
        state = spec.next_state(state, rng);
        jumps.push(Jump {
            state,
            holding: hold,
        });
    }
}

/// One trajectory on `[0, horizon]`, drawn from stream 0 of `seed`.
pub fn sample_trajectory(
    spec: &EmbeddedChain,
    start: usize,
    horizon: f64,
    seed: u64,
) -> Result<Trajectory> {
    check_start(spec, start)?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    Ok(sample_with(spec, start, horizon, &mut stream_rng(seed, 0)))
}

/// Trajectories `0..count`, trajectory `k` drawn from stream `k` of `seed`.
pub fn sample_ensemble(
    spec: &EmbeddedChain,
    start: usize,
    horizon: f64,
    seed: u64,
    count: usize,
    exec: Execution,
) -> Result<Vec<Trajectory>> {
    sample_trajectory(spec, start, horizon, seed)?;
    Ok(exec.map_range(count, |k| {
        sample_with(spec, start, horizon, &mut stream_rng(seed, k as u64))
    }))
}

/// Runs `count` trajectories through `visit` in index order, sampling in
/// blocks so memory stays bounded.
pub fn for_each_trajectory<F>(
    spec: &EmbeddedChain,
    start: usize,
    horizon: f64,
    seed: u64,
    count: usize,
    exec: Execution,
    mut visit: F,
) -> Result<()>
where
    F: FnMut(usize, &Trajectory),
{
    const BLOCK: usize = 1 << 16;
    sample_trajectory(spec, start, horizon, seed)?;
    let mut offset = 0;
    while offset < count {
        let len = BLOCK.min(count - offset);
        let block = exec.map_range(len, |k| {
            sample_with(
                spec,
                start,
                horizon,
                &mut stream_rng(seed, (offset + k) as u64),
            )
        });
        for (k, t) in block.iter().enumerate() {
            visit(offset + k, t);
        }
        offset += len;
    }
    Ok(())
}

/// `steps` transitions of the bivariate chain `(Z_k, T_k)` without a
/// horizon; entry `k` is `(Z_k, T_k)`. Every holding time is an
/// uncensored draw.
pub fn sample_steps<R: Rng>(
    spec: &EmbeddedChain,
    start: usize,
    steps: usize,
    rng: &mut R,
) -> Vec<(usize, f64)> {
    let mut state = start;
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let hold = spec.holding_time(state, rng);
        out.push((state, hold));
        state = spec.next_state(state, rng);
    }
    out
}

/// One line of the ensemble export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub id: u64,
    pub start: usize,
    pub states: Vec<usize>,
    pub holding_times: Vec<f64>,
    pub horizon: f64,
    pub seed: u64,
}

impl TrajectoryRecord {
    pub fn new(id: u64, seed: u64, t: &Trajectory) -> Self {
        Self {
            id,
            start: t.start,
            states: t.states(),
            holding_times: t.holding_times(),
            horizon: t.horizon,
            seed,
        }
    }

    pub fn into_trajectory(self) -> Result<Trajectory> {
        if self.states.is_empty() || self.states.len() != self.holding_times.len() {
            return Err(Error::InvalidArgument(format!(
                "record {} has mismatched states/holding_times",
                self.id
            )));
        }
        let final_holding = *self.holding_times.last().unwrap();
        let jumps = self.states[1..]
            .iter()
            .zip(&self.holding_times)
            .map(|(&state, &holding)| Jump { state, holding })
            .collect();
        Ok(Trajectory {
            start: self.start,
            jumps,
            final_holding,
            horizon: self.horizon,
        })
    }
}

pub fn write_record<W: Write>(out: &mut W, record: &TrajectoryRecord) -> Result<()> {
    out.write_all(output::to_line(record)?.as_bytes())?;
    out.write_all(b"\n")?;
    Ok(())
}

/// `exp(Qt)` by uniformization: with `r = max q_i` and `P̃ = I + Q/r`,
/// `exp(Qt) = Σ_k Poisson(k; rt) P̃^k`, truncated once the Poisson tail
/// drops below `tol`.
pub fn transition_kernel(q: &Generator, t: f64, tol: f64) -> Result<DMatrix<f64>> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "time must be nonnegative, got {t}"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let n = q.len();
    let rate = q.rates().into_iter().fold(0.0, f64::max);
    if t == 0.0 || rate == 0.0 {
        return Ok(DMatrix::identity(n, n));
    }
    let uniformized = DMatrix::identity(n, n) + q.matrix() / rate;
    let weights = poisson_weights(rate * t, tol);

    let mut power = DMatrix::identity(n, n);
    let mut kernel = DMatrix::zeros(n, n);
    for (k, w) in weights.iter().enumerate() {
        if k > 0 {
            power = &power * &uniformized;
        }
        kernel += &power * *w;
    }
    kernel.iter_mut().for_each(|v| {
        if *v < 0.0 && *v > -1e-15 {
            *v = 0.0;
        }
    });
    Ok(kernel)
}

/// Samples `X_0, X_Δ, X_2Δ, …` up to the horizon.
pub fn discretize(traj: &Trajectory, delta: f64) -> Result<Vec<usize>> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "delta must be positive, got {delta}"
        )));
    }
    // Grid points that land on the horizon up to rounding are kept.
    let last = (traj.horizon / delta * (1.0 + 1e-12)).floor() as usize;
    Ok((0..=last)
        .map(|k| traj.state_at(k as f64 * delta))
        .collect())
}

/// Small-`Δ` expansion of the per-step entropy of `X_{kΔ}`:
/// `−Δ(1 − log Δ) Σ π_i q_ii − Δ Σ_{i≠j} π_i q_ij log q_ij`.
pub fn small_delta_entropy(q: &Generator, delta: f64) -> f64 {
    let m = q.matrix();
    let pi = q.invariant_measure();
    let n = q.len();
    let mut transitions = 0.0;
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            let v = m[(i, j)];
            if v > 0.0 {
                transitions += pi[i] * v * v.ln();
            }
        }
    }
    delta * (1.0 - delta.ln()) * q.retention_rate() - delta * transitions
}

/// Exact entropy rate of the sampled chain with transition matrix
/// `exp(QΔ)`, its stationary law solved independently from `Q`.
pub fn discretized_entropy_rate(q: &Generator, delta: f64, tol: f64) -> Result<f64> {
    let kernel = transition_kernel(q, delta, tol)?;
    let pi = stationary_of_generator(q.matrix())?.pi;
    Ok(entropy_rate(&kernel, &pi))
}
