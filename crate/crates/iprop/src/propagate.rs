//! Markov-reward-process propagation of attribution maps.
//!
//! The fixed point V = AM + γ·P·V is solved by value iteration,
//! V⁰ = AM, V^{k+1} = AM + γ·P·V^k, stopping when the mean-squared
//! difference of consecutive iterates drops below `tol`. For γ < 1 the
//! update is a γ-contraction in sup-norm, so a unique fixed point
//! (I − γP)⁻¹·AM exists; a dense LU solve of that system serves as the
//! verification oracle for small node counts.

use std::time::{Duration, Instant};

use crate::attribution::AttributionMap;
use crate::error::{Error, Result};
use crate::graph::{self, PropagationConfig, SparseStochasticMatrix};
use crate::imaging;
use crate::threads;

/// Maximum node count accepted by [`closed_form_solve`] unless overridden.
pub const DEFAULT_ORACLE_CAP: usize = 4096;

#[derive(Debug, Clone)]
pub struct PropagationResult {
    pub refined: AttributionMap,
    pub iterations: usize,
    pub final_mse: f64,
    pub converged: bool,
    pub wall_time: Duration,
    /// Sup-norm of the difference between consecutive iterates, one entry
    /// per iteration. Feeds the contraction diagnostics.
    pub sup_diffs: Vec<f64>,
    /// Mean-squared difference per iteration (the stopping statistic).
    pub mse_diffs: Vec<f64>,
}

/// Value iteration starting from V⁰ = AM.
pub fn value_iterate(
    p: &SparseStochasticMatrix,
    am: &AttributionMap,
    cfg: &PropagationConfig,
) -> Result<PropagationResult> {
    value_iterate_from(p, am, am.values(), cfg)
}

/// Value iteration from an arbitrary starting vector. Converges to the same
/// fixed point as [`value_iterate`] for any start; exposed for the
/// initialization-independence checks.
pub fn value_iterate_from(
    p: &SparseStochasticMatrix,
    am: &AttributionMap,
    init: &[f64],
    cfg: &PropagationConfig,
) -> Result<PropagationResult> {
    let n = am.len();
    if p.dimension() != n {
        return Err(Error::Argument(format!(
            "transition matrix is {0}x{0} but the map has {n} pixels",
            p.dimension()
        )));
    }
    if init.len() != n {
        return Err(Error::Argument(format!(
            "initial vector has {} entries, expected {n}",
            init.len()
        )));
    }
    let start = Instant::now();
    let pool = threads::pool();
    let reward = am.values();
    let mut current = init.to_vec();
    let mut next = vec![0.0f64; n];
    let mut sup_diffs = Vec::new();
    let mut mse_diffs = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        iterations += 1;
        p.matvec_into(&current, &mut next, &pool);
        let mut sup = 0.0f64;
        let mut sq_sum = 0.0f64;
        for i in 0..n {
            let v = reward[i] + cfg.gamma * next[i];
            if !v.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite value at pixel {i} on iteration {iterations}"
                )));
            }
            let d = v - current[i];
            sup = sup.max(d.abs());
            sq_sum += d * d;
            next[i] = v;
        }
        let mse = sq_sum / n as f64;
        sup_diffs.push(sup);
        mse_diffs.push(mse);
        std::mem::swap(&mut current, &mut next);
        if mse < cfg.tol {
            converged = true;
            break;
        }
    }

    let final_mse = *mse_diffs.last().expect("at least one iteration runs");
    Ok(PropagationResult {
        refined: AttributionMap::new(am.height(), am.width(), current)?,
        iterations,
        final_mse,
        converged,
        wall_time: start.elapsed(),
        sup_diffs,
        mse_diffs,
    })
}

/// Dense closed-form solution (I − γP)⁻¹·AM by LU with partial pivoting.
///
/// Verification oracle only: refuses node counts above `cap`
/// ([`DEFAULT_ORACLE_CAP`] when `None`). The system matrix is strictly
/// diagonally dominant for γ < 1, so the factorization cannot be singular
/// on valid inputs.
pub fn closed_form_solve(
    p: &SparseStochasticMatrix,
    am: &AttributionMap,
    gamma: f64,
    cap: Option<usize>,
) -> Result<AttributionMap> {
    let n = am.len();
    let cap = cap.unwrap_or(DEFAULT_ORACLE_CAP);
    if n > cap {
        return Err(Error::Argument(format!(
            "closed-form oracle refuses {n} nodes (cap {cap}); use value iteration"
        )));
    }
    if p.dimension() != n {
        return Err(Error::Argument(format!(
            "transition matrix is {0}x{0} but the map has {n} pixels",
            p.dimension()
        )));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Argument(format!(
            "gamma must lie in [0, 1), got {gamma}"
        )));
    }
    let mut a = p.to_dense();
    a *= -gamma;
    for i in 0..n {
        a[(i, i)] += 1.0;
    }
    let rhs = nalgebra::DVector::from_column_slice(am.values());
    let solution = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular (I - gamma P) factorization".into()))?;
    AttributionMap::new(am.height(), am.width(), solution.as_slice().to_vec())
}

/// Timing and size diagnostics for one full pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineDiagnostics {
    pub graph_build: Duration,
    pub transition_build: Duration,
    pub matvec_count: usize,
    pub node_count: usize,
    pub edge_entry_count: usize,
}

#[derive(Debug, Clone)]
pub struct IpropRun {
    pub result: PropagationResult,
    pub diagnostics: PipelineDiagnostics,
}

/// The full pipeline: decode → CIELAB → K-order graph → row softmax →
/// value iteration.
pub fn run_iprop(
    image_bytes: &[u8],
    base_am: &AttributionMap,
    cfg: &PropagationConfig,
) -> Result<IpropRun> {
    let rgb = imaging::decode_image(image_bytes)?;
    if (rgb.height(), rgb.width()) != (base_am.height(), base_am.width()) {
        return Err(Error::Argument(format!(
            "image is {}x{} but the attribution map is {}x{}",
            rgb.height(),
            rgb.width(),
            base_am.height(),
            base_am.width()
        )));
    }
    let lab = imaging::rgb_to_lab(&rgb);

    let t0 = Instant::now();
    let g = graph::build_weighted_graph(&lab, cfg.k)?;
    let graph_build = t0.elapsed();

    let t1 = Instant::now();
    let p = graph::build_transition(&g)?;
    let transition_build = t1.elapsed();
    let edge_entry_count = g.edge_entry_count();
    let node_count = g.node_count();
    drop(g);

    let result = value_iterate(&p, base_am, cfg)?;
    let matvec_count = result.iterations;
    Ok(IpropRun {
        result,
        diagnostics: PipelineDiagnostics {
            graph_build,
            transition_build,
            matvec_count,
            node_count,
            edge_entry_count,
        },
    })
}

/// Max-abs elementwise difference between two equally sized maps.
pub fn max_abs_diff(a: &AttributionMap, b: &AttributionMap) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
