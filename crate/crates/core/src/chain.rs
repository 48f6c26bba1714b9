//! Discrete-time RB chain, continuous-time RB generator, and the entropy
//! functionals evaluated on them.
//!
//! Logarithms are natural throughout and `0·log 0 = 0`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{validate, DirectedGraph, GraphMode};
use crate::spectral::{stationary_rb, PerronData};

/// Row-stochastic transition matrix with its stationary law.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteChain {
    p: DMatrix<f64>,
    pi: Vec<f64>,
}

impl DiscreteChain {
    pub fn new(p: DMatrix<f64>, pi: Vec<f64>) -> Result<Self> {
        if !p.is_square() || p.nrows() != pi.len() {
            return Err(Error::InvalidArgument(
                "transition matrix and stationary law disagree in size".into(),
            ));
        }
        Ok(Self { p, pi })
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn stationary(&self) -> &[f64] {
        &self.pi
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    /// Largest violation of row-stochasticity, support, and `P'π = π`.
    pub fn invariant_defect(&self, g: &DirectedGraph) -> f64 {
        let n = self.len();
        let mut worst = 0.0f64;
        for i in 0..n {
            let row: f64 = self.p.row(i).sum();
            worst = worst.max((row - 1.0).abs());
            for j in 0..n {
                let v = self.p[(i, j)];
                if !(0.0..=1.0 + 1e-12).contains(&v) || (!g.has_edge(i, j) && v != 0.0) {
                    worst = f64::INFINITY;
                }
            }
        }
        let balance = self.p.transpose() * nalgebra::DVector::from_column_slice(&self.pi);
        for (b, p) in balance.iter().zip(&self.pi) {
            worst = worst.max((b - p).abs());
        }
        worst.max((self.pi.iter().sum::<f64>() - 1.0).abs())
    }
}

/// Infinitesimal generator `Q` with invariant measure `π`.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    q: DMatrix<f64>,
    pi: Vec<f64>,
}

impl Generator {
    /// Checks the sign and row-sum structure and solves for the invariant measure.
    pub fn new(q: DMatrix<f64>) -> Result<Self> {
        check_generator_structure(&q)?;
        let pi = stationary_of_generator(&q)?.pi;
        Ok(Self { q, pi })
    }

    /// Pairs `q` with a known invariant measure; checks `Q'π = 0`.
    pub fn with_measure(q: DMatrix<f64>, pi: Vec<f64>) -> Result<Self> {
        check_generator_structure(&q)?;
        if pi.len() != q.nrows() {
            return Err(Error::NotGenerator("measure has wrong length".into()));
        }
        let g = Self { q, pi };
        let defect = g.balance_defect();
        if defect > 1e-10 * g.scale() {
            return Err(Error::NotGenerator(format!("Q'pi has norm {defect:e}")));
        }
        Ok(g)
    }

    /// Bypasses every check. Used to feed deliberately broken instances
    /// to the verification pipeline.
    #[doc(hidden)]
    pub fn from_parts_unchecked(q: DMatrix<f64>, pi: Vec<f64>) -> Self {
        Self { q, pi }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn invariant_measure(&self) -> &[f64] {
        &self.pi
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    /// Holding rates `q_i = -q_ii`.
    pub fn rates(&self) -> Vec<f64> {
        (0..self.len()).map(|i| -self.q[(i, i)]).collect()
    }

    /// Mean retention rate `-Σ π_i q_ii`.
    pub fn retention_rate(&self) -> f64 {
        -(0..self.len())
            .map(|i| self.pi[i] * self.q[(i, i)])
            .sum::<f64>()
    }

    fn scale(&self) -> f64 {
        self.q.iter().fold(1.0f64, |m, v| m.max(v.abs()))
    }

    /// `‖Q'π‖∞`
    pub fn balance_defect(&self) -> f64 {
        let v = self.q.transpose() * nalgebra::DVector::from_column_slice(&self.pi);
        v.amax()
    }

    /// Largest violation of the generator invariants on graph `g`
    /// (row sums, balance, normalization); infinite on sign or support errors.
    pub fn invariant_defect(&self, g: &DirectedGraph) -> f64 {
        let n = self.len();
        let mut worst = 0.0f64;
        for i in 0..n {
            worst = worst.max(self.q.row(i).sum().abs());
            if !(self.q[(i, i)] < 0.0) {
                worst = f64::INFINITY;
            }
            for j in (0..n).filter(|&j| j != i) {
                let v = self.q[(i, j)];
                if v < 0.0 || (!g.has_edge(i, j) && v != 0.0) || (g.has_edge(i, j) && v == 0.0) {
                    worst = f64::INFINITY;
                }
            }
        }
        worst
            .max(self.balance_defect())
            .max((self.pi.iter().sum::<f64>() - 1.0).abs())
    }
}

fn check_generator_structure(q: &DMatrix<f64>) -> Result<()> {
    if !q.is_square() || q.nrows() < 2 {
        return Err(Error::NotGenerator(format!(
            "{}x{} is not a square matrix of size >= 2",
            q.nrows(),
            q.ncols()
        )));
    }
    let n = q.nrows();
    for i in 0..n {
        if !(q[(i, i)] < 0.0) {
            return Err(Error::NotGenerator(format!(
                "q_{i}{i} = {} is not negative",
                q[(i, i)]
            )));
        }
        for j in (0..n).filter(|&j| j != i) {
            if !(q[(i, j)] >= 0.0) {
                return Err(Error::NotGenerator(format!(
                    "q_{i}{j} = {} is negative",
                    q[(i, j)]
                )));
            }
        }
        let sum: f64 = q.row(i).sum();
        if sum.abs() > 1e-12 * q[(i, i)].abs().max(1.0) {
            return Err(Error::NotGenerator(format!("row {i} sums to {sum:e}")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyConfig {
    /// Weight of the retention-rate term.
    pub eta: f64,
}

impl EntropyConfig {
    pub fn new(eta: f64) -> Result<Self> {
        if eta > 0.0 && eta.is_finite() {
            Ok(Self { eta })
        } else {
            Err(Error::InvalidArgument(format!(
                "eta must be positive, got {eta}"
            )))
        }
    }
}

impl Default for EntropyConfig {
    fn default() -> Self {
        Self { eta: 1.0 }
    }
}

fn check_sizes(p: &PerronData, g: &DirectedGraph) -> Result<()> {
    if p.len() != g.node_count() {
        return Err(Error::InvalidArgument(format!(
            "eigendata has {} entries for a graph with {} nodes",
            p.len(),
            g.node_count()
        )));
    }
    Ok(())
}

/// `p_ij = φ_j / (λ φ_i)` on edges.
pub fn build_discrete_rb(p: &PerronData, g: &DirectedGraph) -> Result<DiscreteChain> {
    check_sizes(p, g)?;
    let n = g.node_count();
    let m = DMatrix::from_fn(n, n, |i, j| {
        if g.has_edge(i, j) {
            p.phi[j] / (p.lambda * p.phi[i])
        } else {
            0.0
        }
    });
    DiscreteChain::new(m, stationary_rb(p))
}

/// `Q = diag(φ)⁻¹ A diag(φ) − λI`. Every holding rate equals `λ`.
pub fn build_rb_generator(p: &PerronData, g: &DirectedGraph) -> Result<Generator> {
    check_sizes(p, g)?;
    validate(g, GraphMode::ContinuousTime).into_result()?;
    let n = g.node_count();
    let q = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            -p.lambda
        } else if g.has_edge(i, j) {
            p.phi[j] / p.phi[i]
        } else {
            0.0
        }
    });
    Ok(Generator {
        q,
        pi: stationary_rb(p),
    })
}

/// `e^{η−1} Q`; the invariant measure is unchanged.
pub fn scale_generator(q: &Generator, cfg: &EntropyConfig) -> Generator {
    let factor = (cfg.eta - 1.0).exp();
    Generator {
        q: &q.q * factor,
        pi: q.pi.clone(),
    }
}

/// `−Σ π_i p_ij log p_ij` for an arbitrary transition matrix and law.
pub fn entropy_rate(p: &DMatrix<f64>, pi: &[f64]) -> f64 {
    let n = pi.len();
    let mut h = 0.0;
    for i in 0..n {
        for j in 0..n {
            let v = p[(i, j)];
            if v > 0.0 {
                h -= pi[i] * v * v.ln();
            }
        }
    }
    h
}

pub fn discrete_entropy_rate(c: &DiscreteChain) -> f64 {
    entropy_rate(&c.p, &c.pi)
}

/// `h_η(Q) = −η Σ π_i q_ii − Σ_{i≠j} π_i q_ij log q_ij`.
pub fn differential_entropy_rate(q: &Generator, cfg: &EntropyConfig) -> f64 {
    let n = q.len();
    let mut transitions = 0.0;
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            let v = q.q[(i, j)];
            if v > 0.0 {
                transitions += q.pi[i] * v * v.ln();
            }
        }
    }
    cfg.eta * q.retention_rate() - transitions
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stationary {
    pub pi: Vec<f64>,
    /// `‖Q'π‖∞`
    pub residual: f64,
}

/// Solves `Q'π = 0`, `Σπ = 1`, with the normalization replacing the last
/// balance equation.
pub fn stationary_of_generator(q: &DMatrix<f64>) -> Result<Stationary> {
    if !q.is_square() {
        return Err(Error::NotGenerator("matrix is not square".into()));
    }
    let n = q.nrows();
    let mut system = q.transpose();
    for j in 0..n {
        system[(n - 1, j)] = 1.0;
    }
    let mut rhs = nalgebra::DVector::zeros(n);
    rhs[n - 1] = 1.0;

    let lu = system.lu();
    let u = lu.u();
    let pivots: Vec<f64> = (0..n).map(|i| u[(i, i)].abs()).collect();
    let largest = pivots.iter().cloned().fold(0.0, f64::max);
    let smallest = pivots.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(smallest > 1e-13 * largest) {
        return Err(Error::Singular(format!(
            "pivot ratio {:e}; support is not strongly connected",
            smallest / largest
        )));
    }
    let pi = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("LU solve failed".into()))?;
    if let Some(i) = pi.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Singular(format!(
            "pi_{i} = {:e} is not positive; some states are transient",
            pi[i]
        )));
    }
    let residual = (q.transpose() * &pi).amax();
    if residual > 1e-10 * q.amax().max(1.0) {
        return Err(Error::Singular(format!(
            "balance residual {residual:e} exceeds tolerance"
        )));
    }
    Ok(Stationary {
        pi: pi.iter().cloned().collect(),
        residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PathStart {
    /// `X_0 ~ π`
    Stationary,
    /// Conditioned on `X_0 = i`.
    Given,
}

/// Probability of one particular `steps`-step walk from `i` to `j`:
/// `φ̂_i φ_j / λ^N` from stationarity, `φ_j / (φ_i λ^N)` given the start.
/// Meaningful only when such a walk exists.
pub fn path_probability_formula(
    p: &PerronData,
    i: usize,
    j: usize,
    steps: usize,
    start: PathStart,
) -> f64 {
    let decay = p.lambda.powi(steps as i32);
    match start {
        PathStart::Stationary => p.phi_hat[i] * p.phi[j] / decay,
        PathStart::Given => p.phi[j] / (p.phi[i] * decay),
    }
}

pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().cloned().collect())
        .collect()
}

/// Everything the construction produces for one graph and `η`.
///
/// `Q` is the entropy-maximizing generator for the given `η`, i.e.
/// `e^{η−1}` times the RB generator, and `h_eta` is evaluated there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultBundle {
    pub lambda: f64,
    pub phi: Vec<f64>,
    pub phi_hat: Vec<f64>,
    pub pi: Vec<f64>,
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    pub eta: f64,
    pub h_eta: f64,
    #[serde(rename = "H_discrete")]
    pub h_discrete: f64,
    pub residual: f64,
}

impl ResultBundle {
    pub fn build(g: &DirectedGraph, perron: &PerronData, cfg: &EntropyConfig) -> Result<Self> {
        let chain = build_discrete_rb(perron, g)?;
        let generator = scale_generator(&build_rb_generator(perron, g)?, cfg);
        Ok(Self {
            lambda: perron.lambda,
            phi: perron.phi.clone(),
            phi_hat: perron.phi_hat.clone(),
            pi: chain.pi.clone(),
            p: rows(&chain.p),
            q: rows(&generator.q),
            eta: cfg.eta,
            h_eta: differential_entropy_rate(&generator, cfg),
            h_discrete: discrete_entropy_rate(&chain),
            residual: perron.residual,
        })
    }
}
