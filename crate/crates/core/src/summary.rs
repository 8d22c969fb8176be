//! Posterior summaries: streaming accumulation of sampled graphs and
//! partial correlations, edge inclusion probabilities, spike-and-histogram
//! partial-correlation posteriors, thresholded networks and the Pearson
//! baseline.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::{num_pairs, pair_from_index, pair_index, Graph};
use crate::gwishart::PrecisionMatrix;

pub const HIST_BINS: usize = 200;
pub const HIST_WIDTH: f64 = 2.0 / HIST_BINS as f64;
// Sentinels outside [-1, 1] so the accumulator stays JSON-serializable.
const EMPTY_MIN: f64 = 2.0;
const EMPTY_MAX: f64 = -2.0;
/// Maximum number of points kept in each cumulative-mean trace.
pub const TRACE_POINTS: u64 = 1000;

/// ρ_ij = −K_ij / √(K_ii K_jj), unit diagonal.
pub fn partial_correlations(k: &PrecisionMatrix) -> Result<DMatrix<f64>> {
    if !k.is_spd() {
        return Err(Error::NotSpd);
    }
    Ok(partial_correlations_unchecked(k))
}

pub(crate) fn partial_correlations_unchecked(k: &DMatrix<f64>) -> DMatrix<f64> {
    let p = k.nrows();
    let d: Vec<f64> = (0..p).map(|i| k[(i, i)].sqrt()).collect();
    DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else {
            (-k[(i, j)] / (d[i] * d[j])).clamp(-1.0, 1.0)
        }
    })
}

fn bin_of(rho: f64) -> usize {
    (((rho + 1.0) / HIST_WIDTH).floor() as isize).clamp(0, HIST_BINS as isize - 1) as usize
}

pub fn bin_lower_edge(bin: usize) -> f64 {
    -1.0 + bin as f64 * HIST_WIDTH
}

/// Streaming sums over retained MCMC samples.
///
/// Partial-correlation moments and histograms only see samples in which
/// the edge is present; the remaining samples are counted in the spike at
/// zero, so `spike[pair] + edge_count(pair) == sample_count` always.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorAccumulator {
    pub p: usize,
    pub sample_count: u64,
    edge_counts: Vec<u64>,
    parcor_sum: Vec<f64>,
    parcor_sumsq: Vec<f64>,
    hist: Vec<u64>,
    spike: Vec<u64>,
    present_min: Vec<f64>,
    present_max: Vec<f64>,
    /// Cumulative edge frequencies, one row per recorded point.
    pub trace: Vec<Vec<f64>>,
    pub trace_every: u64,
}

impl PosteriorAccumulator {
    /// `expected_samples` sizes the trace decimation.
    pub fn new(p: usize, expected_samples: u64) -> Self {
        let pairs = num_pairs(p);
        Self {
            p,
            sample_count: 0,
            edge_counts: vec![0; p * p],
            parcor_sum: vec![0.0; pairs],
            parcor_sumsq: vec![0.0; pairs],
            hist: vec![0; pairs * HIST_BINS],
            spike: vec![0; pairs],
            present_min: vec![EMPTY_MIN; pairs],
            present_max: vec![EMPTY_MAX; pairs],
            trace: Vec::new(),
            trace_every: expected_samples.div_ceil(TRACE_POINTS).max(1),
        }
    }

    pub fn edge_count(&self, i: usize, j: usize) -> u64 {
        self.edge_counts[i * self.p + j]
    }

    pub fn spike_count(&self, i: usize, j: usize) -> u64 {
        self.spike[pair_index(self.p, i, j)]
    }

    pub fn histogram(&self, i: usize, j: usize) -> &[u64] {
        let k = pair_index(self.p, i, j);
        &self.hist[k * HIST_BINS..(k + 1) * HIST_BINS]
    }

    /// Records one retained sample: graph plus its partial correlations.
    pub fn push(&mut self, g: &Graph, parcor: &DMatrix<f64>) {
        let p = self.p;
        self.sample_count += 1;
        let mut k = 0;
        for i in 0..p {
            for j in i + 1..p {
                if g.has_edge(i, j) {
                    self.edge_counts[i * p + j] += 1;
                    self.edge_counts[j * p + i] += 1;
                    let r = parcor[(i, j)];
                    self.parcor_sum[k] += r;
                    self.parcor_sumsq[k] += r * r;
                    self.hist[k * HIST_BINS + bin_of(r)] += 1;
                    self.present_min[k] = self.present_min[k].min(r);
                    self.present_max[k] = self.present_max[k].max(r);
                } else {
                    self.spike[k] += 1;
                }
                k += 1;
            }
        }
        if self.sample_count.is_multiple_of(self.trace_every) {
            self.trace.push(self.edge_probabilities_vec());
        }
    }

    fn edge_probabilities_vec(&self) -> Vec<f64> {
        let n = self.sample_count.max(1) as f64;
        (0..num_pairs(self.p))
            .map(|k| {
                let (i, j) = pair_from_index(self.p, k);
                self.edge_counts[i * self.p + j] as f64 / n
            })
            .collect()
    }

    /// Edge inclusion frequencies as a symmetric matrix with zero diagonal.
    pub fn edge_probabilities(&self) -> Result<DMatrix<f64>> {
        if self.sample_count == 0 {
            return Err(Error::EmptyAccumulator);
        }
        let n = self.sample_count as f64;
        Ok(DMatrix::from_fn(self.p, self.p, |i, j| self.edge_counts[i * self.p + j] as f64 / n))
    }

    /// Adds the counts and sums of `other`. Traces are per-chain: the merged
    /// accumulator keeps a trace only if exactly one side had one.
    pub fn merge(&mut self, other: &PosteriorAccumulator) {
        assert_eq!(self.p, other.p, "merging accumulators of different dimension");
        self.sample_count += other.sample_count;
        add_into(&mut self.edge_counts, &other.edge_counts);
        add_into(&mut self.hist, &other.hist);
        add_into(&mut self.spike, &other.spike);
        for (a, b) in self.parcor_sum.iter_mut().zip(&other.parcor_sum) {
            *a += b;
        }
        for (a, b) in self.parcor_sumsq.iter_mut().zip(&other.parcor_sumsq) {
            *a += b;
        }
        for (a, b) in self.present_min.iter_mut().zip(&other.present_min) {
            *a = a.min(*b);
        }
        for (a, b) in self.present_max.iter_mut().zip(&other.present_max) {
            *a = a.max(*b);
        }
        match (self.trace.is_empty(), other.trace.is_empty()) {
            (true, false) => {
                self.trace = other.trace.clone();
                self.trace_every = other.trace_every;
            }
            (false, false) => self.trace.clear(),
            _ => {}
        }
    }
}

fn add_into(a: &mut [u64], b: &[u64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSummary {
    pub i: usize,
    pub j: usize,
    pub probability: f64,
    /// Posterior mass of the spike at zero (edge absent).
    pub spike_mass: f64,
    /// Unconditional posterior mean (absent edges contribute zero).
    pub mean_parcor: f64,
    /// Mean over samples that contain the edge; zero if there are none.
    pub mean_parcor_given_edge: f64,
    /// Posterior standard deviation of the spiked distribution.
    pub sd_parcor: f64,
    pub ci90: (f64, f64),
}

/// One summary per pair (i < j), in pair order.
pub fn summarize(acc: &PosteriorAccumulator) -> Result<Vec<EdgeSummary>> {
    if acc.sample_count == 0 {
        return Err(Error::EmptyAccumulator);
    }
    let p = acc.p;
    let n = acc.sample_count as f64;
    Ok((0..num_pairs(p))
        .map(|k| {
            let (i, j) = pair_from_index(p, k);
            let present = acc.edge_counts[i * p + j];
            let spike = acc.spike[k];
            debug_assert_eq!(present + spike, acc.sample_count);
            let mean = acc.parcor_sum[k] / n;
            let second = acc.parcor_sumsq[k] / n;
            let sd = (second - mean * mean).max(0.0).sqrt();
            let cond = if present > 0 {
                acc.parcor_sum[k] / present as f64
            } else {
                0.0
            };
            let ci90 = spiked_quantiles(acc, k, &[0.05, 0.95]);
            let probability = present as f64 / n;
            EdgeSummary {
                i,
                j,
                probability,
                // complement in floating point: probability + spike_mass == 1 exactly
                spike_mass: 1.0 - probability,
                mean_parcor: mean,
                mean_parcor_given_edge: cond,
                sd_parcor: sd,
                ci90: (ci90[0], ci90[1]),
            }
        })
        .collect())
}

/// Quantiles of spike-at-zero plus histogram, interpolating linearly
/// within bins (error at most one bin width, 0.01) and clamped to the
/// observed support.
fn spiked_quantiles(acc: &PosteriorAccumulator, k: usize, probs: &[f64]) -> Vec<f64> {
    let hist = &acc.hist[k * HIST_BINS..(k + 1) * HIST_BINS];
    let spike = acc.spike[k];
    let mut support_lo = acc.present_min[k];
    let mut support_hi = acc.present_max[k];
    if spike > 0 {
        support_lo = support_lo.min(0.0);
        support_hi = support_hi.max(0.0);
    }
    // atoms in increasing order: negative bins, spike, non-negative bins
    let zero_bin = HIST_BINS / 2;
    let total = acc.sample_count as f64;
    probs
        .iter()
        .map(|&q| {
            let target = q * total;
            let mut cum = 0.0;
            let mut value = support_hi;
            for step in 0..=HIST_BINS {
                let (count, lo, is_spike) = match step.cmp(&zero_bin) {
                    std::cmp::Ordering::Less => (hist[step] as f64, bin_lower_edge(step), false),
                    std::cmp::Ordering::Equal => (spike as f64, 0.0, true),
                    std::cmp::Ordering::Greater => (hist[step - 1] as f64, bin_lower_edge(step - 1), false),
                };
                if count > 0.0 && cum + count >= target {
                    value = if is_spike {
                        0.0
                    } else {
                        lo + (target - cum) / count * HIST_WIDTH
                    };
                    break;
                }
                cum += count;
            }
            value.clamp(support_lo, support_hi)
        })
        .collect()
}

/// Network attribute for the sign of a posterior mean partial correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeSign {
    Positive,
    Negative,
    Zero,
}

impl EdgeSign {
    pub fn of(x: f64) -> Self {
        if x > 0.0 {
            EdgeSign::Positive
        } else if x < 0.0 {
            EdgeSign::Negative
        } else {
            EdgeSign::Zero
        }
    }

    /// Display color: blue for positive, red for negative.
    pub fn color(self) -> &'static str {
        match self {
            EdgeSign::Positive => "blue",
            EdgeSign::Negative => "red",
            EdgeSign::Zero => "gray",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkEdge {
    pub i: usize,
    pub j: usize,
    pub probability: f64,
    pub mean_parcor: f64,
    pub sign: EdgeSign,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub graph: Graph,
    pub edges: Vec<NetworkEdge>,
}

/// Keeps pairs whose inclusion probability is at least `threshold`.
pub fn threshold_network(summaries: &[EdgeSummary], p: usize, threshold: f64) -> Result<Network> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::ConfigInvalid(format!("threshold {threshold} must lie in (0,1)")));
    }
    let edges: Vec<NetworkEdge> = summaries
        .iter()
        .filter(|s| s.probability >= threshold)
        .map(|s| NetworkEdge {
            i: s.i,
            j: s.j,
            probability: s.probability,
            mean_parcor: s.mean_parcor,
            sign: EdgeSign::of(s.mean_parcor),
        })
        .collect();
    let pairs: Vec<(usize, usize)> = edges.iter().map(|e| (e.i, e.j)).collect();
    Ok(Network {
        graph: Graph::from_edges(p, &pairs),
        edges,
    })
}

/// Summarize then threshold; fails on an empty accumulator.
pub fn network_from_accumulator(acc: &PosteriorAccumulator, threshold: f64) -> Result<Network> {
    threshold_network(&summarize(acc)?, acc.p, threshold)
}

/// Posterior mean partial-correlation matrix with entries zeroed where the
/// inclusion probability is below `threshold`; unit diagonal.
pub fn thresholded_parcor_matrix(summaries: &[EdgeSummary], p: usize, threshold: f64) -> DMatrix<f64> {
    let mut m = DMatrix::identity(p, p);
    for s in summaries {
        if s.probability >= threshold {
            m[(s.i, s.j)] = s.mean_parcor;
            m[(s.j, s.i)] = s.mean_parcor;
        }
    }
    m
}

/// Pairwise Pearson correlations of the raw modeled columns, zeroed where
/// the two-sided t-test p-value exceeds `alpha`.
pub fn pearson_baseline(ds: &Dataset, alpha: f64) -> Result<DMatrix<f64>> {
    let y = ds.model_values();
    let names = ds.model_schema();
    pearson_matrix(&y, alpha).map_err(|e| match e {
        Error::DegenerateColumn { column, reason, .. } => Error::DegenerateColumn {
            column,
            name: names[column - 1].abbreviation.clone(),
            reason,
        },
        other => other,
    })
}

pub fn pearson_matrix(y: &DMatrix<f64>, alpha: f64) -> Result<DMatrix<f64>> {
    let (n, p) = y.shape();
    if n < 3 {
        return Err(Error::ConfigInvalid(format!("Pearson baseline needs n >= 3, got {n}")));
    }
    let mut centered = y.clone();
    let mut norms = vec![0.0; p];
    for j in 0..p {
        let mean = y.column(j).mean();
        let mut col = centered.column_mut(j);
        col.add_scalar_mut(-mean);
        norms[j] = col.norm();
        if norms[j] == 0.0 {
            return Err(Error::DegenerateColumn {
                column: j + 1,
                name: String::new(),
                reason: "zero variance".into(),
            });
        }
    }
    let df = (n - 2) as f64;
    let t_dist = if n > 2 {
        Some(StudentsT::new(0.0, 1.0, df).expect("positive df"))
    } else {
        None
    };
    let mut r = DMatrix::identity(p, p);
    for i in 0..p {
        for j in i + 1..p {
            let rij = (centered.column(i).dot(&centered.column(j)) / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            let pval = if rij.abs() >= 1.0 {
                0.0
            } else {
                let t = rij * (df / (1.0 - rij * rij)).sqrt();
                let dist = t_dist.as_ref().expect("n > 2");
                2.0 * dist.cdf(-t.abs())
            };
            let kept = if pval > alpha { 0.0 } else { rij };
            r[(i, j)] = kept;
            r[(j, i)] = kept;
        }
    }
    Ok(r)
}

/// Density statistics of a correlation-like matrix over off-diagonal pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityStats {
    pub mean_abs: f64,
    pub fraction_zero: f64,
}

pub fn density_stats(m: &DMatrix<f64>) -> DensityStats {
    let p = m.nrows();
    let pairs = num_pairs(p);
    if pairs == 0 {
        return DensityStats {
            mean_abs: 0.0,
            fraction_zero: 0.0,
        };
    }
    let (mut abs_sum, mut zeros) = (0.0, 0usize);
    for k in 0..pairs {
        let (i, j) = pair_from_index(p, k);
        abs_sum += m[(i, j)].abs();
        if m[(i, j)] == 0.0 {
            zeros += 1;
        }
    }
    DensityStats {
        mean_abs: abs_sum / pairs as f64,
        fraction_zero: zeros as f64 / pairs as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborEntry {
    pub neighbor: usize,
    pub probability: f64,
    pub mean_parcor: f64,
}

/// Top-`k` partners of `node` by inclusion probability; ties go to the
/// larger |mean_parcor|, then to the smaller neighbour index.
pub fn node_neighborhood_report(summaries: &[EdgeSummary], node: usize, k: usize) -> Vec<NeighborEntry> {
    let mut rows: Vec<NeighborEntry> = summaries
        .iter()
        .filter(|s| s.i == node || s.j == node)
        .map(|s| NeighborEntry {
            neighbor: if s.i == node { s.j } else { s.i },
            probability: s.probability,
            mean_parcor: s.mean_parcor,
        })
        .collect();
    rows.sort_by(|a, b| {
        b.probability
            .total_cmp(&a.probability)
            .then(b.mean_parcor.abs().total_cmp(&a.mean_parcor.abs()))
            .then(a.neighbor.cmp(&b.neighbor))
    });
    rows.truncate(k);
    rows
}

/// Monte Carlo standard error of the mean of a correlated series by
/// non-overlapping batch means.
pub fn batch_means_se(series: &[f64], batches: usize) -> f64 {
    let size = series.len() / batches.max(1);
    if size == 0 || batches < 2 {
        return f64::NAN;
    }
    let means: Vec<f64> = series
        .chunks_exact(size)
        .take(batches)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{VarType, VariableSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn pm(rows: &[f64], p: usize) -> PrecisionMatrix {
        PrecisionMatrix::new(DMatrix::from_row_slice(p, p, rows)).unwrap()
    }

    #[test]
    fn parcor_simple_cases() {
        let r = partial_correlations(&PrecisionMatrix::identity(3)).unwrap();
        assert_eq!(r, DMatrix::identity(3, 3));
        let r = partial_correlations(&pm(&[2.0, -1.0, -1.0, 2.0], 2)).unwrap();
        assert!((r[(0, 1)] - 0.5).abs() < 1e-15);
    }

    /// Accumulator with `present` samples at a fixed ρ and the rest absent.
    fn acc_with(present: u64, total: u64, rho: f64) -> PosteriorAccumulator {
        let mut acc = PosteriorAccumulator::new(2, total);
        let full = Graph::full(2);
        let empty = Graph::empty(2);
        let mut pc = DMatrix::identity(2, 2);
        pc[(0, 1)] = rho;
        pc[(1, 0)] = rho;
        for s in 0..total {
            if s < present {
                acc.push(&full, &pc);
            } else {
                acc.push(&empty, &DMatrix::identity(2, 2));
            }
        }
        acc
    }

    #[test]
    fn frequencies_become_probabilities() {
        let acc = acc_with(30_000, 100_000, 0.2);
        let s = summarize(&acc).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].probability, 0.30);
        assert_eq!(s[0].spike_mass, 0.70);
        let acc = acc_with(75, 100, -0.4);
        assert_eq!(summarize(&acc).unwrap()[0].spike_mass, 0.25);
    }

    #[test]
    fn constant_parcor_posterior() {
        let acc = acc_with(500, 500, 0.5);
        let s = &summarize(&acc).unwrap()[0];
        assert_eq!(s.mean_parcor, 0.5);
        assert_eq!(s.sd_parcor, 0.0);
        assert_eq!(s.ci90, (0.5, 0.5));
    }

    #[test]
    fn unconditional_mean_is_conditional_times_probability() {
        let acc = acc_with(600, 1000, 0.3);
        let s = &summarize(&acc).unwrap()[0];
        assert!((s.mean_parcor - s.mean_parcor_given_edge * s.probability).abs() < 1e-12);
        // mostly spike: the 5% quantile sits at zero, the 95% at 0.3
        assert_eq!(s.ci90.0, 0.0);
        assert!((s.ci90.1 - 0.3).abs() <= HIST_WIDTH);
    }

    #[test]
    fn empty_accumulator_errors() {
        let acc = PosteriorAccumulator::new(3, 10);
        assert_eq!(summarize(&acc).unwrap_err().kind(), "EmptyAccumulator");
        assert_eq!(network_from_accumulator(&acc, 0.5).unwrap_err().kind(), "EmptyAccumulator");
    }

    fn summary(i: usize, j: usize, probability: f64, mean: f64) -> EdgeSummary {
        EdgeSummary {
            i,
            j,
            probability,
            spike_mass: 1.0 - probability,
            mean_parcor: mean,
            mean_parcor_given_edge: mean / probability.max(1e-12),
            sd_parcor: 0.0,
            ci90: (mean, mean),
        }
    }

    #[test]
    fn threshold_is_inclusive() {
        let s = vec![summary(0, 1, 0.49, 0.1), summary(0, 2, 0.50, -0.25), summary(1, 2, 0.9, 0.3)];
        let net = threshold_network(&s, 3, 0.5).unwrap();
        assert_eq!(net.edges.len(), 2);
        assert_eq!(net.edges[0].sign, EdgeSign::Negative);
        assert_eq!(net.edges[0].sign.color(), "red");
        assert_eq!(net.edges[1].sign.color(), "blue");
        assert!(threshold_network(&s, 3, 1.0).is_err());
    }

    #[test]
    fn neighbourhood_ordering() {
        let s = vec![
            summary(0, 1, 1.0, 0.2),
            summary(0, 2, 1.0, -0.4),
            summary(0, 3, 0.3, 0.1),
            summary(1, 2, 0.9, 0.1),
            summary(0, 4, 1.0, 0.4),
        ];
        let r = node_neighborhood_report(&s, 0, 3);
        let ids: Vec<usize> = r.iter().map(|e| e.neighbor).collect();
        // 2 and 4 tie on probability and |ρ|; lower index first
        assert_eq!(ids, vec![2, 4, 1]);
    }

    #[test]
    fn ten_of_nineteen() {
        let p = 19;
        let s: Vec<EdgeSummary> = (0..num_pairs(p))
            .map(|k| {
                let (i, j) = pair_from_index(p, k);
                summary(i, j, ((i * 31 + j * 17) % 100) as f64 / 100.0, 0.1)
            })
            .collect();
        assert_eq!(node_neighborhood_report(&s, 5, 10).len(), 10);
    }

    #[test]
    fn pearson_identical_columns() {
        let schema = vec![
            VariableSpec::new("x", "x", VarType::Continuous),
            VariableSpec::new("y", "y", VarType::Continuous),
        ];
        let v: Vec<f64> = (0..20).flat_map(|i| [i as f64, i as f64]).collect();
        let ds = Dataset::from_matrix(schema, DMatrix::from_row_slice(20, 2, &v)).unwrap();
        let r = pearson_baseline(&ds, 0.05).unwrap();
        assert!((r[(0, 1)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_type_one_error_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (n, p) = (1000, 30);
        let y = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        let r = pearson_matrix(&y, 0.05).unwrap();
        let stats = density_stats(&r);
        // 435 pairs; binomial sd of the zeroed fraction is about 0.0105
        assert!((stats.fraction_zero - 0.95).abs() < 0.035, "{stats:?}");
    }

    #[test]
    fn pearson_zero_variance() {
        let mut y = DMatrix::from_fn(10, 2, |r, _| r as f64);
        y.column_mut(1).fill(3.0);
        assert_eq!(pearson_matrix(&y, 0.05).unwrap_err().kind(), "DegenerateColumn");
    }

    #[test]
    fn batch_means_of_independent_series() {
        // alternating 0/1: every batch mean is exactly 1/2
        let series: Vec<f64> = (0..1000).map(|t| (t % 2) as f64).collect();
        assert_eq!(batch_means_se(&series, 10), 0.0);
        assert!(batch_means_se(&series, 1).is_nan());
    }
}
