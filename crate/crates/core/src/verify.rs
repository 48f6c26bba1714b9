//! Numerical certificates for the optimality of the RB generator and for
//! path-probability equalization.
//!
//! Optimality is checked by falsification: feasible generators sampled on
//! the graph must never beat `e^{η−1} λ`, and small feasible moves away
//! from the optimizer must not increase `h_η`. The moves are taken in flow
//! coordinates `r_ij = π_i q_ij`, where feasibility is linear (every
//! off-diagonal flow pattern must be a circulation).

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chain::{
    build_discrete_rb, build_rb_generator, differential_entropy_rate, path_probability_formula,
    rows, scale_generator, EntropyConfig, Generator, PathStart,
};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::graph::{count_paths, validate, DirectedGraph, GraphMode};
use crate::jump::{embed, sample_with, stream_rng};
use crate::spectral::{stationary_rb, PerronData};
use crate::stats::{poisson_pmf, poisson_weights};

/// Flow rates `r_ij = π_i q_ij`; the diagonal holds minus the outflow.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMatrix {
    r: DMatrix<f64>,
}

impl FlowMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.r
    }

    /// `max_i |Σ_j r_ij|`
    pub fn row_balance_defect(&self) -> f64 {
        (0..self.r.nrows())
            .map(|i| self.r.row(i).sum().abs())
            .fold(0.0, f64::max)
    }

    /// `max_j |Σ_i r_ij|`
    pub fn column_balance_defect(&self) -> f64 {
        (0..self.r.ncols())
            .map(|j| self.r.column(j).sum().abs())
            .fold(0.0, f64::max)
    }
}

pub fn flow_of(q: &Generator) -> FlowMatrix {
    let pi = q.invariant_measure();
    let mut r = q.matrix().clone();
    for (i, mut row) in r.row_iter_mut().enumerate() {
        row *= pi[i];
    }
    FlowMatrix { r }
}

/// `f(r, π) = −Σ_i r_ii − Σ_{i≠j} r_ij a_ij log(r_ij / (π_i a_ij))`.
pub fn objective_f(r: &FlowMatrix, pi: &[f64], g: &DirectedGraph) -> Result<f64> {
    let m = &r.r;
    let n = g.node_count();
    if m.nrows() != n || pi.len() != n {
        return Err(Error::InvalidArgument(
            "flow, measure and graph disagree in size".into(),
        ));
    }
    let mut value = 0.0;
    for i in 0..n {
        value -= m[(i, i)];
        for j in (0..n).filter(|&j| j != i) {
            let v = m[(i, j)];
            if !g.has_edge(i, j) {
                if v != 0.0 {
                    return Err(Error::SupportViolation {
                        from: i,
                        to: j,
                        value: v,
                    });
                }
                continue;
            }
            if v > 0.0 {
                value -= v * (v / pi[i]).ln();
            }
        }
    }
    Ok(value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateRange {
    pub lo: f64,
    pub hi: f64,
}

impl Default for RateRange {
    fn default() -> Self {
        Self { lo: 0.1, hi: 10.0 }
    }
}

/// Generator with log-uniform off-diagonal rates on the edges of `g`.
pub fn sample_feasible_generator(
    g: &DirectedGraph,
    seed: u64,
    range: RateRange,
) -> Result<Generator> {
    validate(g, GraphMode::ContinuousTime).into_result()?;
    sample_generator_with(g, range, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn sample_generator_with<R: Rng>(
    g: &DirectedGraph,
    range: RateRange,
    rng: &mut R,
) -> Result<Generator> {
    if !(range.lo > 0.0 && range.lo <= range.hi && range.hi.is_finite()) {
        return Err(Error::InvalidArgument(format!("bad rate range {range:?}")));
    }
    let n = g.node_count();
    let (ln_lo, ln_hi) = (range.lo.ln(), range.hi.ln());
    let mut q = DMatrix::zeros(n, n);
    for (i, j) in g.edges() {
        let u: f64 = rng.random();
        q[(i, j)] = if ln_hi > ln_lo {
            (ln_lo + u * (ln_hi - ln_lo)).exp()
        } else {
            range.lo
        };
    }
    for i in 0..n {
        q[(i, i)] = -q.row(i).sum();
    }
    Generator::new(q)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub trials: usize,
    pub seed: u64,
    pub rate_range: RateRange,
    pub perturbations: usize,
    pub step: f64,
    pub exec: Execution,
    /// Extra generators evaluated alongside the random ones.
    pub injected: Vec<Generator>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            trials: 1000,
            seed: 42,
            rate_range: RateRange::default(),
            perturbations: 100,
            step: 1e-4,
            exec: Execution::default(),
            injected: Vec::new(),
        }
    }
}

/// A generator that beat the ceiling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub q: Vec<Vec<f64>>,
    pub pi: Vec<f64>,
    pub h_eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub nodes: usize,
    pub eta: f64,
    pub trials: usize,
    pub seed: u64,
    pub lambda: f64,
    /// `e^{η−1} λ`
    pub ceiling: f64,
    /// `h_η` of `e^{η−1} Q^RB`
    pub optimum_value: f64,
    pub max_h: f64,
    pub min_margin: f64,
    pub mean_margin: f64,
    pub violations: usize,
    pub counterexample: Option<Counterexample>,
    /// `max |f(flow_of(Q), π_Q) − h_1(Q)|` over the samples.
    pub reparameterization_defect: f64,
    /// Largest row/column balance defect of the sampled flows.
    pub flow_balance_defect: f64,
    pub perturbations: usize,
    pub step: f64,
    /// Largest `h_η(perturbed) − h_η(optimum)`.
    pub max_perturbation_gain: f64,
    pub passed: bool,
}

pub const CEILING_SLACK: f64 = 1e-9;
pub const PERTURBATION_SLACK: f64 = 1e-8;

impl SweepReport {
    /// Turns a failed report into an error carrying the counterexample.
    pub fn certify(&self) -> Result<()> {
        if self.passed {
            return Ok(());
        }
        let detail = match &self.counterexample {
            Some(c) => format!(
                "h_eta = {:.17e} exceeds ceiling {:.17e} at Q = {:?}",
                c.h_eta, self.ceiling, c.q
            ),
            None => format!(
                "perturbation gain {:e} exceeds {PERTURBATION_SLACK:e}",
                self.max_perturbation_gain
            ),
        };
        Err(Error::Certification(detail))
    }
}

pub fn maximality_sweep(
    g: &DirectedGraph,
    p: &PerronData,
    cfg: &EntropyConfig,
    opts: &SweepOptions,
) -> Result<SweepReport> {
    if opts.trials == 0 {
        return Err(Error::InvalidArgument(
            "maximality sweep needs at least one trial".into(),
        ));
    }
    validate(g, GraphMode::ContinuousTime).into_result()?;
    let ceiling = (cfg.eta - 1.0).exp() * p.lambda;
    let one = EntropyConfig::default();

    let sampled: Vec<Result<(Generator, f64, f64, f64)>> = opts.exec.map_range(opts.trials, |k| {
        let q = sample_generator_with(g, opts.rate_range, &mut stream_rng(opts.seed, k as u64))?;
        let h = differential_entropy_rate(&q, cfg);
        let flow = flow_of(&q);
        let bridge = (objective_f(&flow, q.invariant_measure(), g)?
            - differential_entropy_rate(&q, &one))
        .abs();
        let balance = flow.row_balance_defect().max(flow.column_balance_defect());
        Ok((q, h, bridge, balance))
    });

    let mut max_h = f64::NEG_INFINITY;
    let mut min_margin = f64::INFINITY;
    let mut margin_sum = 0.0;
    let mut violations = 0;
    let mut counterexample = None;
    let mut reparameterization_defect = 0.0f64;
    let mut flow_balance_defect = 0.0f64;
    let injected = opts
        .injected
        .iter()
        .map(|q| Ok((q.clone(), differential_entropy_rate(q, cfg), 0.0, 0.0)));
    let total = opts.trials + opts.injected.len();
    for item in sampled.into_iter().chain(injected) {
        let (q, h, bridge, balance) = item?;
        max_h = max_h.max(h);
        min_margin = min_margin.min(ceiling - h);
        margin_sum += ceiling - h;
        reparameterization_defect = reparameterization_defect.max(bridge);
        flow_balance_defect = flow_balance_defect.max(balance);
        if !(h <= ceiling + CEILING_SLACK) {
            violations += 1;
            if counterexample.is_none() {
                counterexample = Some(Counterexample {
                    q: rows(q.matrix()),
                    pi: q.invariant_measure().to_vec(),
                    h_eta: h,
                });
            }
        }
    }

    let optimum = scale_generator(&build_rb_generator(p, g)?, cfg);
    let optimum_value = differential_entropy_rate(&optimum, cfg);
    let (step, gains) = perturbation_gains(g, &optimum, cfg, opts)?;
    let max_perturbation_gain = gains.into_iter().fold(f64::NEG_INFINITY, f64::max);

    let passed = violations == 0 && !(max_perturbation_gain > PERTURBATION_SLACK);
    Ok(SweepReport {
        nodes: g.node_count(),
        eta: cfg.eta,
        trials: total,
        seed: opts.seed,
        lambda: p.lambda,
        ceiling,
        optimum_value,
        max_h,
        min_margin,
        mean_margin: margin_sum / total as f64,
        violations,
        counterexample,
        reparameterization_defect,
        flow_balance_defect,
        perturbations: opts.perturbations,
        step,
        max_perturbation_gain,
        passed,
    })
}

/// `h_η` gains of random feasible moves away from `optimum`. Returns the
/// step actually used (capped at half the smallest edge flow so the moved
/// flows stay positive).
fn perturbation_gains(
    g: &DirectedGraph,
    optimum: &Generator,
    cfg: &EntropyConfig,
    opts: &SweepOptions,
) -> Result<(f64, Vec<f64>)> {
    if opts.perturbations == 0 {
        return Ok((opts.step, Vec::new()));
    }
    let base = flow_of(optimum);
    let pi = optimum.invariant_measure();
    let base_value = differential_entropy_rate(optimum, cfg);
    let edges: Vec<(usize, usize)> = g.edges().collect();
    let smallest = edges
        .iter()
        .map(|&(i, j)| base.r[(i, j)])
        .fold(f64::INFINITY, f64::min);
    let step = opts.step.min(0.5 * smallest);
    let projector = CirculationProjector::new(g);
    let n = g.node_count();
    // Perturbation streams live above the trial streams.
    let stream_base = opts.trials as u64 + 1;

    let gains: Vec<Result<f64>> = opts.exec.map_range(opts.perturbations, |k| {
        let mut rng = stream_rng(opts.seed, stream_base + k as u64);
        let raw: Vec<f64> = edges
            .iter()
            .map(|_| rng.random::<f64>() * 2.0 - 1.0)
            .collect();
        let dir = projector.project(&raw);
        let norm = dir.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let z: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();

        let mut r = base.r.clone();
        for (e, &(i, j)) in edges.iter().enumerate() {
            let d = if norm > 0.0 { dir[e] / norm } else { 0.0 };
            r[(i, j)] += step * d;
        }
        let mut moved_pi: Vec<f64> = pi
            .iter()
            .zip(&z)
            .map(|(p, z)| p * (1.0 + step * z))
            .collect();
        let total: f64 = moved_pi.iter().sum();
        moved_pi.iter_mut().for_each(|p| *p /= total);

        let mut q = DMatrix::zeros(n, n);
        for &(i, j) in &edges {
            q[(i, j)] = r[(i, j)] / moved_pi[i];
        }
        for i in 0..n {
            q[(i, i)] = -q.row(i).sum();
        }
        let moved = Generator::new(q)?;
        Ok(differential_entropy_rate(&moved, cfg) - base_value)
    });
    Ok((step, gains.into_iter().collect::<Result<Vec<_>>>()?))
}

/// Orthogonal projection of edge vectors onto circulations
/// (`inflow = outflow` at every node), `d − Bᵀ L⁺ B d` with the incidence
/// matrix `B` and Laplacian `L = B Bᵀ` grounded at the last node.
struct CirculationProjector {
    edges: Vec<(usize, usize)>,
    n: usize,
    grounded: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl CirculationProjector {
    fn new(g: &DirectedGraph) -> Self {
        let n = g.node_count();
        let edges: Vec<_> = g.edges().collect();
        let mut laplacian = DMatrix::zeros(n - 1, n - 1);
        for &(i, j) in &edges {
            for (a, b, s) in [(i, i, 1.0), (j, j, 1.0), (i, j, -1.0), (j, i, -1.0)] {
                if a < n - 1 && b < n - 1 {
                    laplacian[(a, b)] += s;
                }
            }
        }
        Self {
            edges,
            n,
            grounded: laplacian.lu(),
        }
    }

    fn project(&self, d: &[f64]) -> Vec<f64> {
        let mut divergence = DVector::zeros(self.n - 1);
        for (&(i, j), &v) in self.edges.iter().zip(d) {
            if i < self.n - 1 {
                divergence[i] += v;
            }
            if j < self.n - 1 {
                divergence[j] -= v;
            }
        }
        let potential = self
            .grounded
            .solve(&divergence)
            .expect("connected graph has a grounded Laplacian");
        let at = |v: usize| if v < self.n - 1 { potential[v] } else { 0.0 };
        self.edges
            .iter()
            .zip(d)
            .map(|(&(i, j), &v)| v - (at(i) - at(j)))
            .collect()
    }
}

/// Exhibited dual variables `β_j = log φ_j`, `α_i = 1 − β_i` with the
/// value of the inner maximization they certify.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualCertificate {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Lagrangian evaluated at its maximizer `r*_ij = π_i e^{α_i+β_j−1}`.
    pub lagrangian_value: f64,
    /// `Σ_{i≠j} π_i (φ_j/φ_i) a_ij`
    pub closed_form_value: f64,
    pub lambda: f64,
}

pub fn dual_certificate(p: &PerronData, g: &DirectedGraph) -> Result<DualCertificate> {
    if p.len() != g.node_count() {
        return Err(Error::InvalidArgument(
            "eigendata and graph disagree in size".into(),
        ));
    }
    let beta: Vec<f64> = p.phi.iter().map(|v| v.ln()).collect();
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let pi = stationary_rb(p);

    let mut lagrangian_value = 0.0;
    let mut closed_form_value = 0.0;
    for (i, j) in g.edges().filter(|&(i, j)| i != j) {
        let r = pi[i] * (alpha[i] + beta[j] - 1.0).exp();
        lagrangian_value += -r * (r / pi[i]).ln() + (alpha[i] + beta[j]) * r;
        closed_form_value += pi[i] * p.phi[j] / p.phi[i];
    }
    Ok(DualCertificate {
        alpha,
        beta,
        lagrangian_value,
        closed_form_value,
        lambda: p.lambda,
    })
}

/// All walks with exactly `steps` edges from `from` to `to`, in
/// lexicographic order.
pub fn enumerate_paths(
    g: &DirectedGraph,
    from: usize,
    to: usize,
    steps: usize,
    cap: usize,
) -> Result<Vec<Vec<usize>>> {
    let n = g.node_count();
    if steps == 0 {
        return Err(Error::InvalidArgument(
            "path enumeration needs at least one step".into(),
        ));
    }
    if from >= n || to >= n {
        return Err(Error::InvalidArgument(format!(
            "nodes {from}, {to} out of range"
        )));
    }
    let count = count_paths(g, from, to, steps)?;
    if count > cap as u128 {
        return Err(Error::EnumerationCap { count, cap });
    }

    // can_finish[r][v]: some walk of exactly r edges leads from v to `to`
    let mut can_finish = vec![vec![false; n]; steps + 1];
    can_finish[0][to] = true;
    for r in 1..=steps {
        for v in 0..n {
            can_finish[r][v] = g.successors(v).iter().any(|&w| can_finish[r - 1][w]);
        }
    }

    let mut paths = Vec::with_capacity(count as usize);
    let mut path = vec![from];
    // per depth: index into the successor list of path[depth]
    let mut cursor = vec![0usize];
    if !can_finish[steps][from] {
        return Ok(paths);
    }
    while let Some(pos) = cursor.last_mut() {
        let depth = path.len() - 1;
        if depth == steps {
            paths.push(path.clone());
            cursor.pop();
            path.pop();
            continue;
        }
        let v = path[depth];
        let succ = g.successors(v);
        let remaining = steps - depth - 1;
        match succ[*pos..].iter().position(|&w| can_finish[remaining][w]) {
            Some(offset) => {
                let w = succ[*pos + offset];
                *pos += offset + 1;
                path.push(w);
                cursor.push(0);
            }
            None => {
                cursor.pop();
                path.pop();
            }
        }
    }
    Ok(paths)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathCount {
    pub path: Vec<usize>,
    pub count: u64,
    pub frequency: f64,
    /// `(frequency − joint) / σ`
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathReport {
    pub from: usize,
    pub to: usize,
    pub steps: usize,
    pub t_f: f64,
    pub seed: u64,
    pub samples: u64,
    pub vacuous: bool,
    pub paths: Vec<Vec<usize>>,
    /// `φ_j / (φ_i λ^N)`, the conditional probability of every listed path.
    pub exact_prob_each: f64,
    /// Largest `|Π p_kl − exact_prob_each|` over the listed paths.
    pub product_defect: f64,
    /// `|paths| · exact_prob_each − [(P^RB)^N]_ij`
    pub sum_rule_defect: f64,
    /// `P(exactly N jumps in [0, t_f]) = Poisson(N; λ t_f)`
    pub jump_count_prob: f64,
    /// `jump_count_prob · exact_prob_each`
    pub joint_prob_each: f64,
    pub empirical_counts: Vec<PathCount>,
    /// Largest `|c_a − c_b| / σ_ab` over path pairs.
    pub max_pair_z: f64,
    /// Largest `|z|` of the per-path joint frequencies.
    pub max_joint_z: f64,
    pub z_threshold: f64,
    pub passed: bool,
}

pub const PRODUCT_TOLERANCE: f64 = 1e-12;
pub const SUM_RULE_TOLERANCE: f64 = 1e-10;
pub const Z_THRESHOLD: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathCheckOptions {
    pub t_f: f64,
    pub samples: u64,
    pub seed: u64,
    pub cap: usize,
    pub exec: Execution,
}

impl Default for PathCheckOptions {
    fn default() -> Self {
        Self {
            t_f: 1.0,
            samples: 100_000,
            seed: 42,
            cap: 100_000,
            exec: Execution::default(),
        }
    }
}

pub fn path_equalization_check(
    g: &DirectedGraph,
    p: &PerronData,
    from: usize,
    to: usize,
    steps: usize,
    opts: &PathCheckOptions,
) -> Result<PathReport> {
    if !(opts.t_f > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "t_f must be positive, got {}",
            opts.t_f
        )));
    }
    let chain = build_discrete_rb(p, g)?;
    let transition = chain.transition();
    let paths = enumerate_paths(g, from, to, steps, opts.cap)?;
    let exact = path_probability_formula(p, from, to, steps, PathStart::Given);

    let product_defect = paths
        .iter()
        .map(|path| {
            let prod: f64 = path.windows(2).map(|w| transition[(w[0], w[1])]).product();
            (prod - exact).abs()
        })
        .fold(0.0, f64::max);
    let power = transition.pow(steps as u32);
    let sum_rule_defect = (paths.len() as f64 * exact - power[(from, to)]).abs();

    let jump_count_prob = poisson_pmf(steps, p.lambda * opts.t_f);
    let joint = jump_count_prob * exact;
    let vacuous = paths.len() < 2;
    let exact_ok = product_defect <= PRODUCT_TOLERANCE && sum_rule_defect <= SUM_RULE_TOLERANCE;

    let mut report = PathReport {
        from,
        to,
        steps,
        t_f: opts.t_f,
        seed: opts.seed,
        samples: 0,
        vacuous,
        paths: paths.clone(),
        exact_prob_each: exact,
        product_defect,
        sum_rule_defect,
        jump_count_prob,
        joint_prob_each: joint,
        empirical_counts: Vec::new(),
        max_pair_z: 0.0,
        max_joint_z: 0.0,
        z_threshold: Z_THRESHOLD,
        passed: exact_ok,
    };
    if vacuous || opts.samples == 0 {
        return Ok(report);
    }

    let spec = embed(&build_rb_generator(p, g)?)?;
    let index: HashMap<&[usize], usize> = paths
        .iter()
        .enumerate()
        .map(|(k, path)| (path.as_slice(), k))
        .collect();
    let counts = opts.exec.fold_range(
        opts.samples as usize,
        || vec![0u64; paths.len()],
        |mut acc, k| {
            let t = sample_with(&spec, from, opts.t_f, &mut stream_rng(opts.seed, k as u64));
            if t.jump_count() == steps && t.end_state() == to {
                if let Some(&slot) = index.get(t.states().as_slice()) {
                    acc[slot] += 1;
                }
            }
            acc
        },
        |mut a, b| {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            a
        },
    );

    let s = opts.samples as f64;
    let sigma_joint = (joint * (1.0 - joint) / s).sqrt();
    report.samples = opts.samples;
    report.empirical_counts = paths
        .iter()
        .zip(&counts)
        .map(|(path, &count)| {
            let frequency = count as f64 / s;
            PathCount {
                path: path.clone(),
                count,
                frequency,
                z: (frequency - joint) / sigma_joint,
            }
        })
        .collect();
    report.max_joint_z = report
        .empirical_counts
        .iter()
        .map(|c| c.z.abs())
        .fold(0.0, f64::max);
    // Var(c_a − c_b) = S (p_a + p_b − (p_a − p_b)²) under the multinomial model.
    let sigma_pair = (s * 2.0 * joint).sqrt();
    for a in 0..counts.len() {
        for b in a + 1..counts.len() {
            let z = (counts[a] as f64 - counts[b] as f64).abs() / sigma_pair;
            report.max_pair_z = report.max_pair_z.max(z);
        }
    }
    report.passed = exact_ok && report.max_pair_z < Z_THRESHOLD && report.max_joint_z < Z_THRESHOLD;
    Ok(report)
}

/// Compares `Σ_N Poisson(N; λt) · #paths(i→j, N) · φ_j/(φ_i λ^N)` with
/// `[exp(Q^RB t)]_ij`; returns `(series, kernel)`.
pub fn joint_sum_rule(
    g: &DirectedGraph,
    p: &PerronData,
    from: usize,
    to: usize,
    t: f64,
) -> Result<(f64, f64)> {
    let weights = poisson_weights(p.lambda * t, 1e-12);
    let mut series = 0.0;
    for (steps, w) in weights.iter().enumerate() {
        let count = count_paths(g, from, to, steps)? as f64;
        series += w * count * path_probability_formula(p, from, to, steps, PathStart::Given);
    }
    // Padé scaling-and-squaring, independent of the uniformization series.
    let kernel = (build_rb_generator(p, g)?.matrix() * t).exp();
    Ok((series, kernel[(from, to)]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::spectral::tests::plastic_root;
    use crate::spectral::{perron, PerronOptions};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn eig(g: &DirectedGraph) -> PerronData {
        perron(g, &PerronOptions::default()).unwrap()
    }

    fn rb(g: &DirectedGraph) -> Generator {
        build_rb_generator(&eig(g), g).unwrap()
    }

    #[test]
    fn flow_examples() {
        let r = flow_of(&rb(&fixtures::two_cycle()));
        let expected = DMatrix::from_row_slice(2, 2, &[-0.5, 0.5, 0.5, -0.5]);
        assert!((r.matrix() - expected).amax() < 1e-12);

        let r = flow_of(&rb(&fixtures::complete(3)));
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(
                    r.matrix()[(i, j)],
                    if i == j { -2.0 / 3.0 } else { 1.0 / 3.0 },
                    epsilon = 1e-12
                );
            }
        }

        let q = rb(&fixtures::plastic());
        let solved = Generator::new(q.matrix().clone()).unwrap();
        let r = flow_of(&solved);
        assert!(r.column_balance_defect() < 1e-10);
        assert!(r.row_balance_defect() < 1e-10);
    }

    #[test]
    fn objective_examples() {
        let g = fixtures::complete(3);
        let q = rb(&g);
        assert_abs_diff_eq!(
            objective_f(&flow_of(&q), q.invariant_measure(), &g).unwrap(),
            2.0,
            epsilon = 1e-12
        );

        let c = fixtures::two_cycle();
        let q = rb(&c);
        assert_abs_diff_eq!(
            objective_f(&flow_of(&q), q.invariant_measure(), &c).unwrap(),
            1.0,
            epsilon = 1e-12
        );

        // uniform circulation of strength 0.3 on K3 with uniform pi:
        // f = 6*0.3*... = -Σ r_ii - Σ r log(r/π) = 1.8 - 1.8 ln(0.9)
        let mut r = DMatrix::from_element(3, 3, 0.3);
        for i in 0..3 {
            r[(i, i)] = -0.6;
        }
        let v = objective_f(&FlowMatrix { r }, &[1.0 / 3.0; 3], &g).unwrap();
        assert_abs_diff_eq!(v, 1.8 - 1.8 * 0.9f64.ln(), epsilon = 1e-12);
        assert!(v <= 2.0);
    }

    #[test]
    fn objective_rejects_off_support_flow() {
        let g = fixtures::plastic();
        let mut r = flow_of(&rb(&g)).r;
        r[(0, 2)] = 0.1;
        assert!(matches!(
            objective_f(&FlowMatrix { r }, &[1.0 / 3.0; 3], &g),
            Err(Error::SupportViolation { from: 0, to: 2, .. })
        ));
    }

    #[test]
    fn feasible_generator_examples() {
        let g = fixtures::plastic();
        let a = sample_feasible_generator(&g, 11, RateRange::default()).unwrap();
        let b = sample_feasible_generator(&g, 11, RateRange::default()).unwrap();
        assert_eq!(a, b);
        assert!(a.invariant_defect(&g) < 1e-12);
        for (i, j) in g.edges() {
            let v = a.matrix()[(i, j)];
            assert!((0.1..=10.0).contains(&v));
        }

        let k3 = fixtures::complete(3);
        let unit = sample_feasible_generator(&k3, 3, RateRange { lo: 1.0, hi: 1.0 }).unwrap();
        assert!((unit.matrix() - rb(&k3).matrix()).amax() < 1e-12);

        assert!(sample_feasible_generator(&k3, 3, RateRange { lo: 0.0, hi: 1.0 }).is_err());
        let looped = DirectedGraph::from_edges(2, &[(0, 1), (1, 0), (0, 0)]).unwrap();
        assert!(sample_feasible_generator(&looped, 3, RateRange::default()).is_err());
    }

    #[test]
    fn sweep_k3_and_plastic() {
        for (g, lambda) in [
            (fixtures::complete(3), 2.0),
            (fixtures::plastic(), plastic_root()),
        ] {
            let p = eig(&g);
            let report =
                maximality_sweep(&g, &p, &EntropyConfig::default(), &SweepOptions::default())
                    .unwrap();
            assert!(report.passed, "{report:?}");
            assert_eq!(report.trials, 1000);
            assert_abs_diff_eq!(report.ceiling, lambda, epsilon = 1e-10);
            assert!(report.max_h <= lambda + CEILING_SLACK);
            assert!(report.max_perturbation_gain <= PERTURBATION_SLACK);
            assert!(report.reparameterization_defect < 1e-10);
            report.certify().unwrap();
        }
    }

    #[test]
    fn sweep_needs_trials() {
        let g = fixtures::complete(3);
        let opts = SweepOptions {
            trials: 0,
            ..Default::default()
        };
        assert!(maximality_sweep(&g, &eig(&g), &EntropyConfig::default(), &opts).is_err());
    }

    #[test]
    fn sweep_flags_injected_counterexample() {
        let g = fixtures::complete(3);
        let q = rb(&g);
        let mut broken = q.matrix().clone();
        for i in 0..3 {
            broken[(i, i)] *= 2.0;
        }
        let opts = SweepOptions {
            trials: 10,
            injected: vec![Generator::from_parts_unchecked(
                broken,
                q.invariant_measure().to_vec(),
            )],
            ..Default::default()
        };
        let report = maximality_sweep(&g, &eig(&g), &EntropyConfig::default(), &opts).unwrap();
        assert!(!report.passed);
        assert_eq!(report.violations, 1);
        assert_abs_diff_eq!(
            report.counterexample.as_ref().unwrap().h_eta,
            4.0,
            epsilon = 1e-12
        );
        assert!(matches!(report.certify(), Err(Error::Certification(_))));
    }

    #[test]
    fn projection_yields_circulations() {
        let g = fixtures::random_strongly_connected(6, 0.4, 9);
        let projector = CirculationProjector::new(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let raw: Vec<f64> = g.edges().map(|_| rng.random::<f64>() - 0.5).collect();
        let d = projector.project(&raw);
        let mut net = vec![0.0; g.node_count()];
        for ((i, j), v) in g.edges().zip(&d) {
            net[i] += v;
            net[j] -= v;
        }
        assert!(net.iter().all(|v| v.abs() < 1e-12), "{net:?}");
        // projecting twice changes nothing
        let again = projector.project(&d);
        assert!(d.iter().zip(&again).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn dual_certificate_examples() {
        for (g, lambda) in [
            (fixtures::complete(3), 2.0),
            (fixtures::two_cycle(), 1.0),
            (fixtures::plastic(), plastic_root()),
        ] {
            let p = eig(&g);
            let c = dual_certificate(&p, &g).unwrap();
            for (a, (b, phi)) in c.alpha.iter().zip(c.beta.iter().zip(&p.phi)) {
                assert_abs_diff_eq!(*b, phi.ln(), epsilon = 1e-12);
                assert_abs_diff_eq!(*a, 1.0 - b, epsilon = 1e-12);
            }
            assert_abs_diff_eq!(c.lagrangian_value, lambda, epsilon = 1e-10);
            assert_abs_diff_eq!(c.closed_form_value, lambda, epsilon = 1e-10);
        }
        let c = dual_certificate(&eig(&fixtures::complete(3)), &fixtures::complete(3)).unwrap();
        assert!(c.beta.iter().all(|b| (b - c.beta[0]).abs() < 1e-12));
    }

    #[test]
    fn enumeration_examples() {
        assert_eq!(
            enumerate_paths(&fixtures::complete(3), 0, 0, 2, 100).unwrap(),
            vec![vec![0, 1, 0], vec![0, 2, 0]]
        );
        assert!(enumerate_paths(&fixtures::two_cycle(), 0, 1, 2, 100)
            .unwrap()
            .is_empty());
        assert_eq!(
            enumerate_paths(&fixtures::plastic(), 0, 0, 3, 100).unwrap(),
            vec![vec![0, 1, 2, 0]]
        );
        assert!(matches!(
            enumerate_paths(&fixtures::complete(4), 0, 0, 6, 10),
            Err(Error::EnumerationCap { cap: 10, .. })
        ));
        assert!(enumerate_paths(&fixtures::complete(3), 0, 0, 0, 10).is_err());
    }

    #[test]
    fn k3_three_step_paths_have_probability_one_eighth() {
        let g = fixtures::complete(3);
        let p = eig(&g);
        let paths = enumerate_paths(&g, 0, 1, 3, 100).unwrap();
        assert_eq!(
            paths,
            vec![vec![0, 1, 0, 1], vec![0, 1, 2, 1], vec![0, 2, 0, 1]]
        );
        let opts = PathCheckOptions {
            samples: 0,
            ..Default::default()
        };
        let report = path_equalization_check(&g, &p, 0, 1, 3, &opts).unwrap();
        assert_abs_diff_eq!(report.exact_prob_each, 0.125, epsilon = 1e-12);
        assert!(report.product_defect < 1e-12);
    }

    #[test]
    fn path_check_k3_monte_carlo() {
        let g = fixtures::complete(3);
        let p = eig(&g);
        let opts = PathCheckOptions {
            samples: 200_000,
            seed: 7,
            ..Default::default()
        };
        let report = path_equalization_check(&g, &p, 0, 0, 2, &opts).unwrap();
        assert_eq!(report.paths.len(), 2);
        assert_abs_diff_eq!(report.exact_prob_each, 0.25, epsilon = 1e-12);
        let expected_joint = (-2.0f64).exp() / 2.0;
        assert_abs_diff_eq!(report.joint_prob_each, expected_joint, epsilon = 1e-12);
        assert_abs_diff_eq!(expected_joint, 0.067668, epsilon = 1e-6);
        assert!(report.passed, "{report:?}");

        let serial = PathCheckOptions {
            exec: Execution::Sequential,
            ..opts
        };
        let again = path_equalization_check(&g, &p, 0, 0, 2, &serial).unwrap();
        assert_eq!(report, again);
    }

    #[test]
    fn path_check_vacuous_case() {
        let g = fixtures::plastic();
        let report =
            path_equalization_check(&g, &eig(&g), 0, 0, 3, &PathCheckOptions::default()).unwrap();
        assert!(report.vacuous);
        assert!(report.passed);
        assert_eq!(report.samples, 0);
    }

    #[test]
    fn joint_sum_rule_plastic() {
        let g = fixtures::plastic();
        let p = eig(&g);
        for (i, j) in [(0, 0), (0, 2), (2, 1)] {
            let (series, kernel) = joint_sum_rule(&g, &p, i, j, 1.5).unwrap();
            assert_abs_diff_eq!(series, kernel, epsilon = 1e-8);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn reparameterization_is_exact(g in fixtures::strategy::strongly_connected(2..=7, true), seed in any::<u64>()) {
            let q = sample_feasible_generator(&g, seed, RateRange::default()).unwrap();
            let flow = flow_of(&q);
            prop_assert!(flow.row_balance_defect() < 1e-10);
            prop_assert!(flow.column_balance_defect() < 1e-10);
            let f = objective_f(&flow, q.invariant_measure(), &g).unwrap();
            let h = differential_entropy_rate(&q, &EntropyConfig::default());
            prop_assert!((f - h).abs() < 1e-10);
            prop_assert!(h <= eig(&g).lambda + CEILING_SLACK);
        }

        #[test]
        fn enumeration_agrees_with_counts(g in fixtures::strategy::strongly_connected(2..=5, true), steps in 1usize..=6) {
            let n = g.node_count();
            for i in 0..n {
                for j in 0..n {
                    let paths = enumerate_paths(&g, i, j, steps, 1 << 20).unwrap();
                    prop_assert_eq!(paths.len() as u128, count_paths(&g, i, j, steps).unwrap());
                    prop_assert!(paths.windows(2).all(|w| w[0] < w[1]));
                    for path in &paths {
                        prop_assert_eq!(path.len(), steps + 1);
                        prop_assert!(path.windows(2).all(|w| g.has_edge(w[0], w[1])));
                    }
                }
            }
        }
    }
}
