//! K-order pixel-similarity graph and its row-stochastic transition matrix.
//!
//! Each pixel connects to every pixel within Chebyshev offset K (at most
//! (2K+1)²−1 neighbors). Edge weights are negative combined distances
//! −(d_s + d_c), where d_s is Euclidean distance on pixel coordinates and
//! d_c is Euclidean distance in CIELAB. Transition probabilities are the
//! row-wise softmax of the weights over each node's neighbor set.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::LabImage;
use crate::threads;

/// Hyperparameters for graph construction and value iteration.
///
/// Defaults: K = floor(min(H,W)/32) clamped to ≥ 1, γ = 0.99, tol = 1e-7,
/// max_iters = 10000.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationConfig {
    pub k: usize,
    pub gamma: f64,
    pub tol: f64,
    pub max_iters: usize,
}

pub const DEFAULT_GAMMA: f64 = 0.99;
pub const DEFAULT_TOL: f64 = 1e-7;
pub const DEFAULT_MAX_ITERS: usize = 10_000;

impl PropagationConfig {
    pub fn new(k: usize, gamma: f64, tol: f64, max_iters: usize) -> Result<Self> {
        if k < 1 {
            return Err(Error::Argument("k must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Argument(format!(
                "gamma must lie in [0, 1), got {gamma}"
            )));
        }
        if tol.is_nan() || tol <= 0.0 {
            return Err(Error::Argument(format!("tol must be positive, got {tol}")));
        }
        if max_iters < 1 {
            return Err(Error::Argument("max_iters must be at least 1".into()));
        }
        Ok(Self {
            k,
            gamma,
            tol,
            max_iters,
        })
    }

    /// The default neighborhood order for an H×W image: floor(min(H,W)/32),
    /// clamped to at least 1.
    pub fn default_k(height: usize, width: usize) -> usize {
        (height.min(width) / 32).max(1)
    }
}

/// Which distance feeds the edge weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceMode {
    /// d_s + d_c (the normal weighting).
    Combined,
    /// d_s only; used by the transition-row KL analysis.
    SpatialOnly,
}

/// Undirected K-order pixel graph in compressed-row form.
/// Weights are ≤ 0 (negative distances); adjacency is symmetric and
/// self-loop free.
#[derive(Debug, Clone)]
pub struct WeightedPixelGraph {
    height: usize,
    width: usize,
    k: usize,
    row_offsets: Vec<usize>,
    cols: Vec<u32>,
    weights: Vec<f64>,
}

impl WeightedPixelGraph {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn order(&self) -> usize {
        self.k
    }

    pub fn node_count(&self) -> usize {
        self.height * self.width
    }

    pub fn edge_entry_count(&self) -> usize {
        self.cols.len()
    }

    /// Neighbor ids and weights of one node, in row-major neighbor order.
    pub fn row(&self, node: usize) -> (&[u32], &[f64]) {
        let lo = self.row_offsets[node];
        let hi = self.row_offsets[node + 1];
        (&self.cols[lo..hi], &self.weights[lo..hi])
    }
}

/// Row-stochastic sparse transition matrix in compressed-row form.
/// Every stored probability is in (0, 1] and each row sums to 1 within 1e-9.
#[derive(Debug, Clone)]
pub struct SparseStochasticMatrix {
    n: usize,
    row_offsets: Vec<usize>,
    cols: Vec<u32>,
    probs: Vec<f64>,
}

impl SparseStochasticMatrix {
    /// Assemble from explicit rows; validates stochasticity. Intended for
    /// fixtures and oracles — production matrices come from
    /// [`build_transition`].
    pub fn from_rows(rows: Vec<Vec<(u32, f64)>>) -> Result<Self> {
        let n = rows.len();
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut probs = Vec::new();
        row_offsets.push(0);
        for (i, row) in rows.into_iter().enumerate() {
            let sum: f64 = row.iter().map(|&(_, p)| p).sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Structure(format!(
                    "row {i} sums to {sum}, not 1"
                )));
            }
            for (c, p) in row {
                if c as usize >= n {
                    return Err(Error::Structure(format!(
                        "row {i} references column {c} outside 0..{n}"
                    )));
                }
                if !(p > 0.0 && p <= 1.0) {
                    return Err(Error::Structure(format!(
                        "row {i} holds probability {p} outside (0, 1]"
                    )));
                }
                cols.push(c);
                probs.push(p);
            }
            row_offsets.push(cols.len());
        }
        Ok(Self {
            n,
            row_offsets,
            cols,
            probs,
        })
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn entry_count(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, node: usize) -> (&[u32], &[f64]) {
        let lo = self.row_offsets[node];
        let hi = self.row_offsets[node + 1];
        (&self.cols[lo..hi], &self.probs[lo..hi])
    }

    /// y = P · x, row-parallel with fixed in-row summation order, so the
    /// result is bit-identical for any thread count.
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64], pool: &rayon::ThreadPool) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        // below this size the fork-join overhead outweighs the work
        if self.n < 2048 {
            for (i, out) in y.iter_mut().enumerate() {
                let (cols, probs) = self.row(i);
                let mut acc = 0.0;
                for (c, p) in cols.iter().zip(probs) {
                    acc += p * x[*c as usize];
                }
                *out = acc;
            }
            return;
        }
        pool.install(|| {
            y.par_iter_mut().enumerate().for_each(|(i, out)| {
                let (cols, probs) = self.row(i);
                let mut acc = 0.0;
                for (c, p) in cols.iter().zip(probs) {
                    acc += p * x[*c as usize];
                }
                *out = acc;
            });
        });
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            let (cols, probs) = self.row(i);
            for (c, p) in cols.iter().zip(probs) {
                m[(i, *c as usize)] = *p;
            }
        }
        m
    }
}

/// All pixels J ≠ I within Chebyshev offset `k` of node `index`, clipped to
/// the image, in row-major order.
pub fn neighborhood(index: usize, k: usize, height: usize, width: usize) -> Result<Vec<usize>> {
    let n = height * width;
    if index >= n {
        return Err(Error::Argument(format!(
            "node {index} out of range for {height}x{width} image"
        )));
    }
    if k < 1 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    let (row, col) = (index / width, index % width);
    let r0 = row.saturating_sub(k);
    let r1 = (row + k).min(height - 1);
    let c0 = col.saturating_sub(k);
    let c1 = (col + k).min(width - 1);
    let mut out = Vec::with_capacity((r1 - r0 + 1) * (c1 - c0 + 1) - 1);
    for r in r0..=r1 {
        for c in c0..=c1 {
            if r == row && c == col {
                continue;
            }
            out.push(r * width + c);
        }
    }
    Ok(out)
}

/// Spatial, color, and combined distance between two distinct pixels.
pub fn pixel_distance(lab: &LabImage, i: usize, j: usize) -> Result<(f64, f64, f64)> {
    let n = lab.height() * lab.width();
    if i >= n || j >= n {
        return Err(Error::Argument(format!(
            "node pair ({i}, {j}) out of range for {} nodes",
            n
        )));
    }
    if i == j {
        return Err(Error::Argument("self-distance is undefined".into()));
    }
    let w = lab.width();
    let (ri, ci) = ((i / w) as f64, (i % w) as f64);
    let (rj, cj) = ((j / w) as f64, (j % w) as f64);
    let d_s = ((ri - rj) * (ri - rj) + (ci - cj) * (ci - cj)).sqrt();
    let pi = lab.pixel_at(i);
    let pj = lab.pixel_at(j);
    let d_c = ((pi[0] - pj[0]).powi(2) + (pi[1] - pj[1]).powi(2) + (pi[2] - pj[2]).powi(2)).sqrt();
    Ok((d_s, d_c, d_s + d_c))
}

fn color_distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// K-order graph with weights W(I,J) = −(d_s + d_c).
pub fn build_weighted_graph(lab: &LabImage, k: usize) -> Result<WeightedPixelGraph> {
    build_weighted_graph_mode(lab, k, DistanceMode::Combined)
}

pub fn build_weighted_graph_mode(
    lab: &LabImage,
    k: usize,
    mode: DistanceMode,
) -> Result<WeightedPixelGraph> {
    if k < 1 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    let (height, width) = (lab.height(), lab.width());
    if 2 * k + 1 > height && 2 * k + 1 > width {
        log::warn!(
            "k={k} makes the {height}x{width} pixel graph near-complete; \
             construction cost grows as N^2"
        );
    }

    // Per-node degree from window truncation, then prefix-sum offsets.
    let span = |pos: usize, limit: usize| -> usize {
        let lo = pos.saturating_sub(k);
        let hi = (pos + k).min(limit - 1);
        hi - lo + 1
    };
    let n = height * width;
    let mut row_offsets = Vec::with_capacity(n + 1);
    row_offsets.push(0usize);
    let mut total = 0usize;
    for r in 0..height {
        let rs = span(r, height);
        for c in 0..width {
            total += rs * span(c, width) - 1;
            row_offsets.push(total);
        }
    }

    // d_s depends only on the offset; precompute the (2k+1)² window.
    let side = 2 * k + 1;
    let mut ds_table = vec![0.0f64; side * side];
    for dr in 0..side {
        for dc in 0..side {
            let fr = dr as f64 - k as f64;
            let fc = dc as f64 - k as f64;
            ds_table[dr * side + dc] = (fr * fr + fc * fc).sqrt();
        }
    }

    let pool = threads::pool();
    let pixels = lab.pixels();
    let rows: Vec<(Vec<u32>, Vec<f64>)> = pool.install(|| {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let (row, col) = (i / width, i % width);
                let r0 = row.saturating_sub(k);
                let r1 = (row + k).min(height - 1);
                let c0 = col.saturating_sub(k);
                let c1 = (col + k).min(width - 1);
                let cap = (r1 - r0 + 1) * (c1 - c0 + 1) - 1;
                let mut cols = Vec::with_capacity(cap);
                let mut weights = Vec::with_capacity(cap);
                let pi = pixels[i];
                for r in r0..=r1 {
                    let dr = r + k - row;
                    for c in c0..=c1 {
                        if r == row && c == col {
                            continue;
                        }
                        let j = r * width + c;
                        let d_s = ds_table[dr * side + (c + k - col)];
                        let d = match mode {
                            DistanceMode::Combined => d_s + color_distance(pi, pixels[j]),
                            DistanceMode::SpatialOnly => d_s,
                        };
                        cols.push(j as u32);
                        weights.push(-d);
                    }
                }
                (cols, weights)
            })
            .collect()
    });

    let mut cols = Vec::with_capacity(total);
    let mut weights = Vec::with_capacity(total);
    for (c, w) in rows {
        cols.extend_from_slice(&c);
        weights.extend_from_slice(&w);
    }
    debug_assert_eq!(cols.len(), total);

    Ok(WeightedPixelGraph {
        height,
        width,
        k,
        row_offsets,
        cols,
        weights,
    })
}

/// Row-wise softmax of the graph weights over each neighbor set (Eq. 1).
/// Non-neighbors get exact probability zero by never being stored.
pub fn build_transition(g: &WeightedPixelGraph) -> Result<SparseStochasticMatrix> {
    let n = g.node_count();
    for i in 0..n {
        if g.row(i).0.is_empty() {
            return Err(Error::Structure(format!(
                "node {i} has no neighbors; cannot normalize an empty row"
            )));
        }
    }
    let pool = threads::pool();
    let mut probs = vec![0.0f64; g.edge_entry_count()];
    pool.install(|| {
        // Softmax per row, max-subtracted.
        let chunks: Vec<&mut [f64]> = split_rows(&mut probs, &g.row_offsets);
        chunks.into_par_iter().enumerate().for_each(|(i, out)| {
            let (_, weights) = g.row(i);
            let max = weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (o, w) in out.iter_mut().zip(weights) {
                let e = (w - max).exp();
                *o = e;
                sum += e;
            }
            for o in out.iter_mut() {
                *o /= sum;
            }
        });
    });
    Ok(SparseStochasticMatrix {
        n,
        row_offsets: g.row_offsets.clone(),
        cols: g.cols.clone(),
        probs,
    })
}

/// Split a flat CSR value buffer into disjoint per-row slices.
fn split_rows<'a>(buf: &'a mut [f64], offsets: &[usize]) -> Vec<&'a mut [f64]> {
    let mut out = Vec::with_capacity(offsets.len() - 1);
    let mut rest = buf;
    for w in offsets.windows(2) {
        let len = w[1] - w[0];
        let (head, tail) = rest.split_at_mut(len);
        out.push(head);
        rest = tail;
    }
    out
}

/// KL divergence between two sparse transition rows over the same node
/// universe: Σ p_i · ln(p_i / q_i) over p's support.
///
/// A row built with a smaller K embeds into a larger-K row's support with
/// exact zeros outside its own neighborhood, contributing nothing. If p has
/// mass where q has none the divergence is infinite and reported as an
/// error.
pub fn transition_row_kl(
    p: (&[u32], &[f64]),
    q: (&[u32], &[f64]),
) -> Result<f64> {
    let (p_cols, p_probs) = p;
    let (q_cols, q_probs) = q;
    let mut sum = 0.0;
    let mut qi = 0usize;
    for (&c, &pv) in p_cols.iter().zip(p_probs) {
        if pv == 0.0 {
            continue;
        }
        while qi < q_cols.len() && q_cols[qi] < c {
            qi += 1;
        }
        if qi >= q_cols.len() || q_cols[qi] != c || q_probs[qi] == 0.0 {
            return Err(Error::Divergence(format!(
                "p has mass {pv} at node {c} where q has none"
            )));
        }
        sum += pv * (pv / q_probs[qi]).ln();
    }
    // Rounding can leave a tiny negative residue when p ≈ q.
    Ok(sum.max(0.0))
}

/// Median of d_c for each unique d_s over all in-neighborhood pixel pairs,
/// returned sorted by d_s ascending.
pub fn distance_profile(lab: &LabImage, k: usize) -> Result<Vec<(f64, f64)>> {
    if k < 1 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    let (height, width) = (lab.height(), lab.width());
    // Group by the exact squared integer offset so float d_s values never
    // collide approximately.
    let mut groups: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for i in 0..height * width {
        let (row, col) = (i / width, i % width);
        for j in neighborhood(i, k, height, width)? {
            if j <= i {
                continue; // each unordered pair once
            }
            let (rj, cj) = (j / width, j % width);
            let dr = rj as i64 - row as i64;
            let dc = cj as i64 - col as i64;
            let key = (dr * dr + dc * dc) as u64;
            groups
                .entry(key)
                .or_default()
                .push(color_distance(lab.pixel_at(i), lab.pixel_at(j)));
        }
    }
    Ok(groups
        .into_iter()
        .map(|(key, mut dcs)| {
            dcs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let m = dcs.len();
            let median = if m % 2 == 1 {
                dcs[m / 2]
            } else {
                0.5 * (dcs[m / 2 - 1] + dcs[m / 2])
            };
            ((key as f64).sqrt(), median)
        })
        .collect())
}
