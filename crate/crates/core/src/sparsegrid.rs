//! Clenshaw-Curtis collocation: 1D rules, full tensor grids and Smolyak
//! sparse grids on `[-1, 1]^d`, with moment estimation for uniform inputs.
//!
//! Weights are normalised to the uniform probability density, so they sum
//! to one and a weighted sum of node values is an expectation.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;

use thiserror::Error;

use crate::cycle::fmt_num;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("tensor grid with {count} points exceeds the budget of {budget}")]
    Budget { count: u128, budget: u128 },
    #[error("invalid parameter space: {0}")]
    InvalidSpace(String),
    #[error("dimension must be at least 1")]
    ZeroDimension,
}

/// Number of nodes of the nested Clenshaw-Curtis rule at `level`.
pub fn cc_size(level: usize) -> usize {
    if level == 0 {
        1
    } else {
        (1usize << level) + 1
    }
}

/// The `k`-th of `n + 1` Chebyshev extrema in ascending order. Written as a
/// sine so the centre node is exactly zero and the set is exactly symmetric.
fn chebyshev_extremum(k: usize, n: usize) -> f64 {
    let num = 2.0 * k as f64 - n as f64;
    (PI * num / (2.0 * n as f64)).sin()
}

/// Clenshaw-Curtis nodes (ascending) and probability weights for `m` points.
pub fn cc_points(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1, "a rule needs at least one node");
    if m == 1 {
        return (vec![0.0], vec![1.0]);
    }
    let n = m - 1;
    let nodes = (0..m).map(|k| chebyshev_extremum(k, n)).collect();
    let weights = (0..m)
        .map(|j| {
            let theta = j as f64 * PI / n as f64;
            let mut s = 0.0;
            for k in 1..=n / 2 {
                let b = if 2 * k == n { 1.0 } else { 2.0 };
                s += b / (4.0 * (k * k) as f64 - 1.0) * (2.0 * k as f64 * theta).cos();
            }
            let c = if j == 0 || j == n { 1.0 } else { 2.0 };
            // halve the [-1, 1] weights for the uniform density
            0.5 * c / n as f64 * (1.0 - s)
        })
        .collect();
    (nodes, weights)
}

/// One-dimensional quadrature rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule1D {
    pub level: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Nested Clenshaw-Curtis rule with `m(0) = 1`, `m(l) = 2^l + 1`.
pub fn cc_rule(level: usize) -> Rule1D {
    let (nodes, weights) = cc_points(cc_size(level));
    Rule1D {
        level,
        nodes,
        weights,
    }
}

/// Smolyak sparse grid with merged duplicate nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGrid {
    dim: usize,
    level: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl SparseGrid {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k * self.dim..(k + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on a zero chunk size
        (0..self.len()).map(move |k| self.point(k))
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weighted sum of `f` over the nodes.
    pub fn integrate<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        self.points()
            .zip(&self.weights)
            .map(|(z, w)| w * f(z))
            .sum()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "k,w")?;
        for i in 1..=self.dim {
            write!(out, ",z{i}")?;
        }
        writeln!(out)?;
        for (k, (z, w)) in self.points().zip(&self.weights).enumerate() {
            write!(out, "{k},{}", fmt_num(*w))?;
            for x in z {
                write!(out, ",{}", fmt_num(*x))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// All multi-indices of length `d` with entry sum at most `max_sum`.
fn multi_indices(d: usize, max_sum: usize) -> Vec<Vec<usize>> {
    fn rec(d: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == d {
            out.push(cur.clone());
            return;
        }
        for i in 0..=left {
            cur.push(i);
            rec(d, left - i, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(d, max_sum, &mut Vec::with_capacity(d), &mut out);
    out
}

/// Smolyak grid of `level` in `d` dimensions from nested Clenshaw-Curtis
/// rules, via the combination technique
/// `A(L, d) = sum_{L-d+1 <= |i| <= L} (-1)^(L-|i|) C(d-1, L-|i|) U^i1 x ... x U^id`.
///
/// A zero-dimensional grid is the single empty node of weight 1.
pub fn smolyak(d: usize, level: usize) -> SparseGrid {
    if d == 0 {
        return SparseGrid {
            dim: 0,
            level,
            points: Vec::new(),
            weights: vec![1.0],
        };
    }
    // Every nested node is addressed by its index on the finest level.
    let finest = level.max(1);
    let n_fine = 1usize << finest;
    let fine_index = |l: usize, j: usize| -> usize {
        if l == 0 {
            n_fine / 2
        } else {
            j << (finest - l)
        }
    };
    let rules: Vec<Rule1D> = (0..=level).map(cc_rule).collect();

    let mut acc: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    let min_sum = (level + 1).saturating_sub(d);
    for idx in multi_indices(d, level) {
        let sum: usize = idx.iter().sum();
        if sum < min_sum {
            continue;
        }
        let gap = level - sum;
        let coeff = if gap.is_multiple_of(2) { 1.0 } else { -1.0 } * binomial(d - 1, gap);
        // odometer over the tensor product of the selected 1D rules
        let sizes: Vec<usize> = idx.iter().map(|&l| rules[l].nodes.len()).collect();
        let mut pos = vec![0usize; d];
        loop {
            let mut w = coeff;
            let key: Vec<u32> = (0..d)
                .map(|k| {
                    w *= rules[idx[k]].weights[pos[k]];
                    fine_index(idx[k], pos[k]) as u32
                })
                .collect();
            *acc.entry(key).or_insert(0.0) += w;
            let mut k = 0;
            while k < d {
                pos[k] += 1;
                if pos[k] < sizes[k] {
                    break;
                }
                pos[k] = 0;
                k += 1;
            }
            if k == d {
                break;
            }
        }
    }

    let mut points = Vec::with_capacity(acc.len() * d);
    let mut weights = Vec::with_capacity(acc.len());
    for (key, w) in acc {
        points.extend(key.iter().map(|&k| chebyshev_extremum(k as usize, n_fine)));
        weights.push(w);
    }
    SparseGrid {
        dim: d,
        level,
        points,
        weights,
    }
}

/// Closed-form node count of the level-3 Clenshaw-Curtis Smolyak grid.
pub fn smolyak_level3_count(d: usize) -> usize {
    (4 * d * d * d + 6 * d * d + 14 * d + 3) / 3
}

/// Full tensor product of one Clenshaw-Curtis rule. Nodes are enumerated on
/// demand so huge grids can report their size without allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorGrid {
    dim: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

pub fn tensor_grid(d: usize, points_per_dim: usize) -> Result<TensorGrid, GridError> {
    if d == 0 {
        return Err(GridError::ZeroDimension);
    }
    let (nodes, weights) = cc_points(points_per_dim.max(1));
    Ok(TensorGrid {
        dim: d,
        nodes,
        weights,
    })
}

impl TensorGrid {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `points_per_dim^d`, saturating at `u128::MAX`.
    pub fn count(&self) -> u128 {
        (self.nodes.len() as u128)
            .checked_pow(self.dim as u32)
            .unwrap_or(u128::MAX)
    }

    /// Lazily enumerates `(point, weight)` pairs.
    pub fn iter(&self) -> impl Iterator<Item = (Vec<f64>, f64)> + '_ {
        let m = self.nodes.len();
        let mut pos = Some(vec![0usize; self.dim]);
        std::iter::from_fn(move || {
            let cur = pos.take()?;
            let z = cur.iter().map(|&j| self.nodes[j]).collect();
            let w = cur.iter().map(|&j| self.weights[j]).product();
            let mut next = cur;
            let mut k = 0;
            while k < next.len() {
                next[k] += 1;
                if next[k] < m {
                    break;
                }
                next[k] = 0;
                k += 1;
            }
            if k < next.len() {
                pos = Some(next);
            }
            Some((z, w))
        })
    }

    /// Collects all nodes, refusing when the grid exceeds `budget` points.
    pub fn materialize(&self, budget: u128) -> Result<Vec<(Vec<f64>, f64)>, GridError> {
        let count = self.count();
        if count > budget {
            return Err(GridError::Budget { count, budget });
        }
        Ok(self.iter().collect())
    }
}

/// Standard-deviation estimator used by [`moments`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StdEstimator {
    /// `sqrt(max(0, E[q²] - E[q]²))`.
    #[default]
    Centered,
    /// `sqrt(E[q²])` without subtracting the squared mean.
    Uncentered,
}

/// Mean and standard deviation of node values `values` under the grid
/// weights.
pub fn moments(
    values: &[f64],
    weights: &[f64],
    estimator: StdEstimator,
) -> Result<(f64, f64), GridError> {
    if values.len() != weights.len() {
        return Err(GridError::LengthMismatch {
            expected: weights.len(),
            got: values.len(),
        });
    }
    let mean: f64 = values.iter().zip(weights).map(|(q, w)| w * q).sum();
    let second: f64 = values.iter().zip(weights).map(|(q, w)| w * q * q).sum();
    let var = match estimator {
        StdEstimator::Centered => second - mean * mean,
        StdEstimator::Uncentered => second,
    };
    Ok((mean, var.max(0.0).sqrt()))
}

/// Moments together with their gradients, given per-node gradients
/// `grads[k]` of the node values with respect to some design vector.
///
/// Where the variance estimate is clamped at zero the standard-deviation
/// gradient is set to zero.
pub fn moments_with_gradient(
    values: &[f64],
    grads: &[Vec<f64>],
    weights: &[f64],
    estimator: StdEstimator,
) -> Result<MomentsGrad, GridError> {
    if grads.len() != weights.len() {
        return Err(GridError::LengthMismatch {
            expected: weights.len(),
            got: grads.len(),
        });
    }
    let (mean, std) = moments(values, weights, estimator)?;
    let n = grads.first().map_or(0, Vec::len);
    let mut d_mean = vec![0.0; n];
    let mut d_second = vec![0.0; n];
    for ((q, g), w) in values.iter().zip(grads).zip(weights) {
        for j in 0..n {
            d_mean[j] += w * g[j];
            d_second[j] += 2.0 * w * q * g[j];
        }
    }
    let d_std = if std > 0.0 {
        (0..n)
            .map(|j| {
                let d_var = match estimator {
                    StdEstimator::Centered => d_second[j] - 2.0 * mean * d_mean[j],
                    StdEstimator::Uncentered => d_second[j],
                };
                0.5 * d_var / std
            })
            .collect()
    } else {
        vec![0.0; n]
    };
    Ok(MomentsGrad {
        mean,
        std,
        d_mean,
        d_std,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentsGrad {
    pub mean: f64,
    pub std: f64,
    pub d_mean: Vec<f64>,
    pub d_std: Vec<f64>,
}

/// What a stochastic dimension perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamLabel {
    /// PM width, height or depth (index 0..3).
    Magnet(usize),
    /// Relative velocity shift of the i-th perturbed control point.
    VelocityShift(usize),
    /// Time shift of the i-th shifted control point.
    TimeShift(usize),
    RollingFactor,
    DragFactor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamDim {
    pub label: ParamLabel,
    pub lower: f64,
    pub upper: f64,
}

/// Physical bounds of each stochastic dimension; `[-1, 1]` maps affinely
/// onto `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterSpace {
    pub dims: Vec<ParamDim>,
}

impl ParameterSpace {
    pub fn new(dims: Vec<ParamDim>) -> Result<Self, GridError> {
        for (i, d) in dims.iter().enumerate() {
            if !(d.lower < d.upper) {
                return Err(GridError::InvalidSpace(format!(
                    "dimension {i} ({:?}) has lower {} >= upper {}",
                    d.label, d.lower, d.upper
                )));
            }
        }
        Ok(Self { dims })
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn to_physical(&self, z: &[f64]) -> Vec<f64> {
        self.dims
            .iter()
            .zip(z)
            .map(|(d, &zi)| d.lower + 0.5 * (zi + 1.0) * (d.upper - d.lower))
            .collect()
    }
}
