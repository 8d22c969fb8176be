//! Ground-truth synthetic data, the exact p = 3 posterior, and recovery metrics.
//!
//! Fixture directories hold three files:
//! - `data.csv`: the observed dataset, header = abbreviations `X1..Xp`;
//! - `schema.json`: the matching variable schema;
//! - `truth.json`: the generating [`SyntheticSpec`], the true edge list
//!   (0-based pairs) and the true precision matrix (row-major).

use std::path::Path;
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, LoadOptions, VarType, VariableSpec};
use crate::error::{Error, Result};
use crate::graph::{num_pairs, pair_from_index, Graph};
use crate::gwishart::{log_marginal_likelihood_decomposable, sample_gwishart, GWishartParams, PrecisionMatrix};
use crate::latent::initialize_latent;
use crate::mcmc::{log_graph_prior, run_chain, McmcConfig};
use crate::normal::std_normal_quantile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distortion {
    Exp,
    Cubic,
    Sigmoid,
}

impl Distortion {
    pub const CATALOG: [Distortion; 3] = [Distortion::Exp, Distortion::Cubic, Distortion::Sigmoid];

    /// Strictly increasing map.
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Distortion::Exp => x.exp(),
            Distortion::Cubic => x * x * x + x,
            Distortion::Sigmoid => 1.0 / (1.0 + (-2.0 * x).exp()),
        }
    }
}

/// Marginal map from a latent Gaussian column to an observed column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ColumnPlan {
    Identity,
    Monotone { distortion: Distortion },
    /// Equal-probability bins coded 0..k−1.
    OrdinalBins { k: usize },
    /// 1 above the latent median, 0 below.
    BinaryThreshold,
}

impl ColumnPlan {
    fn var_type(self) -> VarType {
        match self {
            ColumnPlan::Identity | ColumnPlan::Monotone { .. } => VarType::Continuous,
            ColumnPlan::OrdinalBins { .. } => VarType::DiscreteOrdinal,
            ColumnPlan::BinaryThreshold => VarType::Binary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub p: usize,
    pub n: usize,
    pub edge_density: f64,
    pub graph_seed: u64,
    pub data_seed: u64,
    /// One entry per column; empty means all identity.
    #[serde(default)]
    pub column_plan: Vec<ColumnPlan>,
}

impl SyntheticSpec {
    pub fn gaussian(p: usize, n: usize, edge_density: f64, graph_seed: u64, data_seed: u64) -> Self {
        Self {
            p,
            n,
            edge_density,
            graph_seed,
            data_seed,
            column_plan: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(Error::ConfigInvalid(format!("p = {} must be at least 2", self.p)));
        }
        if !(self.edge_density >= 0.0 && self.edge_density < 1.0) {
            return Err(Error::ConfigInvalid(format!(
                "edge_density {} must lie in [0,1)",
                self.edge_density
            )));
        }
        if !self.column_plan.is_empty() && self.column_plan.len() != self.p {
            return Err(Error::ConfigInvalid(format!(
                "column_plan has {} entries for p = {}",
                self.column_plan.len(),
                self.p
            )));
        }
        if self
            .column_plan
            .iter()
            .any(|c| matches!(c, ColumnPlan::OrdinalBins { k } if *k < 2))
        {
            return Err(Error::ConfigInvalid("ordinal bins need k ≥ 2".into()));
        }
        Ok(())
    }

    pub fn plan(&self, j: usize) -> ColumnPlan {
        self.column_plan.get(j).copied().unwrap_or(ColumnPlan::Identity)
    }

    pub fn schema(&self) -> Vec<VariableSpec> {
        (0..self.p)
            .map(|j| {
                let name = format!("X{}", j + 1);
                VariableSpec::new(&name, &name, self.plan(j).var_type())
            })
            .collect()
    }
}

/// Draws the true graph and precision matrix from `graph_seed`.
pub fn generate_truth(spec: &SyntheticSpec) -> Result<(Graph, PrecisionMatrix)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.graph_seed);
    let mut g = Graph::empty(spec.p);
    for k in 0..num_pairs(spec.p) {
        let (i, j) = pair_from_index(spec.p, k);
        if rng.random::<f64>() < spec.edge_density {
            g.set_edge(i, j, true);
        }
    }
    let k = sample_gwishart(&g, &GWishartParams::standard(spec.p), &mut rng)?;
    Ok((g, k))
}

/// n latent rows i.i.d. N(0, K⁻¹) from `data_seed`.
pub fn sample_latent_rows(k: &PrecisionMatrix, n: usize, data_seed: u64) -> Result<DMatrix<f64>> {
    let p = k.p();
    let l = Cholesky::new((**k).clone()).ok_or(Error::NotSpd)?.l();
    let lt = l.transpose();
    let mut rng = ChaCha8Rng::seed_from_u64(data_seed);
    let mut z = DMatrix::zeros(n, p);
    for r in 0..n {
        let e = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        // Lᵀ x = e gives cov(x) = (L Lᵀ)⁻¹
        let x = lt.solve_upper_triangular(&e).ok_or(Error::NotSpd)?;
        z.row_mut(r).copy_from(&x.transpose());
    }
    Ok(z)
}

/// Pushes latent columns through the spec's marginal maps.
pub fn apply_column_plan(spec: &SyntheticSpec, z: &DMatrix<f64>, k: &PrecisionMatrix) -> Result<DMatrix<f64>> {
    let sigma = crate::gwishart::spd_inverse(k)?;
    let mut y = z.clone();
    for j in 0..spec.p {
        let sd = sigma[(j, j)].sqrt();
        let plan = spec.plan(j);
        for r in 0..z.nrows() {
            let x = z[(r, j)];
            y[(r, j)] = match plan {
                ColumnPlan::Identity => x,
                ColumnPlan::Monotone { distortion } => distortion.apply(x),
                ColumnPlan::OrdinalBins { k } => {
                    (1..k).filter(|&c| x > sd * std_normal_quantile(c as f64 / k as f64)).count() as f64
                }
                ColumnPlan::BinaryThreshold => f64::from(u8::from(x > 0.0)),
            };
        }
    }
    Ok(y)
}

/// Generates the dataset, true graph and true precision matrix.
pub fn generate(spec: &SyntheticSpec) -> Result<(Dataset, Graph, PrecisionMatrix)> {
    let (g, k) = generate_truth(spec)?;
    let z = sample_latent_rows(&k, spec.n, spec.data_seed)?;
    let y = apply_column_plan(spec, &z, &k)?;
    let ds = Dataset::from_matrix_with(spec.schema(), y, LoadOptions { min_rows: 0 })?;
    Ok((ds, g, k))
}

/// Exact posterior over all graphs on three nodes.
#[derive(Debug, Clone)]
pub struct ExactPosterior {
    /// Every graph with its normalized log posterior probability.
    pub graphs: Vec<(Graph, f64)>,
    /// Symmetric matrix of marginal edge probabilities (zero diagonal).
    pub edge_probabilities: DMatrix<f64>,
}

/// Exact edge probabilities for a p = 3 dataset with continuous columns.
pub fn exact_posterior_p3(ds: &Dataset, edge_prior: f64, params: &GWishartParams) -> Result<ExactPosterior> {
    let q = ds.model_columns().len();
    if q != 3 {
        return Err(Error::UnsupportedDimension {
            p: q,
            hint: "exact enumeration is available only for three variables; use fit for larger models".into(),
        });
    }
    if ds.model_schema().iter().any(|s| s.modeled_type() != VarType::Continuous) {
        return Err(Error::SchemaMismatch(
            "exact enumeration needs every modeled column to be continuous".into(),
        ));
    }
    let latent = initialize_latent(ds)?;
    exact_posterior_from_scatter(&latent.scatter(), latent.n(), edge_prior, params)
}

/// Exact posterior from a fixed latent scatter matrix ZᵀZ on three nodes.
pub fn exact_posterior_from_scatter(
    scatter: &DMatrix<f64>,
    n: usize,
    edge_prior: f64,
    params: &GWishartParams,
) -> Result<ExactPosterior> {
    let p = scatter.nrows();
    if p != 3 {
        return Err(Error::UnsupportedDimension {
            p,
            hint: "exact enumeration is available only for three variables".into(),
        });
    }
    let mut graphs = Vec::with_capacity(8);
    for mask in 0..8u32 {
        let edges: Vec<(usize, usize)> = (0..3)
            .filter(|b| mask & (1 << b) != 0)
            .map(|b| pair_from_index(3, b as usize))
            .collect();
        let g = Graph::from_edges(3, &edges);
        let w = log_marginal_likelihood_decomposable(&g, params, scatter, n)? + log_graph_prior(&g, edge_prior);
        graphs.push((g, w));
    }
    let max = graphs.iter().map(|(_, w)| *w).fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + graphs.iter().map(|(_, w)| (w - max).exp()).sum::<f64>().ln();
    let mut probs = DMatrix::zeros(3, 3);
    for (g, w) in &mut graphs {
        *w -= log_z;
        for (i, j) in g.edges() {
            probs[(i, j)] += w.exp();
            probs[(j, i)] += w.exp();
        }
    }
    Ok(ExactPosterior {
        graphs,
        edge_probabilities: probs,
    })
}

/// Area under the ROC curve (Mann-Whitney, ties count one half).
pub fn auc(scores: &[f64], labels: &[bool]) -> f64 {
    assert_eq!(scores.len(), labels.len());
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut s = 0;
    while s < idx.len() {
        let mut e = s;
        while e + 1 < idx.len() && scores[idx[e + 1]] == scores[idx[s]] {
            e += 1;
        }
        let mid = (s + e) as f64 / 2.0 + 1.0;
        for &t in &idx[s..=e] {
            ranks[t] = mid;
        }
        s = e + 1;
    }
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return 0.5;
    }
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg)
}

pub fn f1_score(scores: &[f64], labels: &[bool], threshold: f64) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fneg += 1.0,
            _ => {}
        }
    }
    if tp == 0.0 {
        return 0.0;
    }
    2.0 * tp / (2.0 * tp + fp + fneg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Fraction of pairs in the bucket that are true edges (NaN-free: 0 when empty).
    pub edge_frequency: f64,
}

/// Ten equal-width buckets of predicted probability.
pub fn calibration(scores: &[f64], labels: &[bool]) -> Vec<CalibrationBin> {
    let mut counts = [0usize; 10];
    let mut hits = [0usize; 10];
    for (&s, &l) in scores.iter().zip(labels) {
        let b = ((s * 10.0).floor() as usize).min(9);
        counts[b] += 1;
        hits[b] += usize::from(l);
    }
    (0..10)
        .map(|b| CalibrationBin {
            lower: b as f64 / 10.0,
            upper: (b + 1) as f64 / 10.0,
            count: counts[b],
            edge_frequency: if counts[b] == 0 { 0.0 } else { hits[b] as f64 / counts[b] as f64 },
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub auc: f64,
    pub f1_at_threshold: f64,
    pub threshold: f64,
    pub calibration_bins: Vec<CalibrationBin>,
    pub runtime_seconds: f64,
}

/// Scores a matrix of edge probabilities against the true graph.
pub fn score_probabilities(probs: &DMatrix<f64>, truth: &Graph, threshold: f64) -> RecoveryReport {
    let p = truth.p();
    let (scores, labels): (Vec<f64>, Vec<bool>) = (0..num_pairs(p))
        .map(|k| {
            let (i, j) = pair_from_index(p, k);
            (probs[(i, j)], truth.has_edge(i, j))
        })
        .unzip();
    RecoveryReport {
        auc: auc(&scores, &labels),
        f1_at_threshold: f1_score(&scores, &labels, threshold),
        threshold,
        calibration_bins: calibration(&scores, &labels),
        runtime_seconds: 0.0,
    }
}

/// Fits `ds` and scores the posterior edge probabilities against `truth`.
pub fn evaluate(ds: &Dataset, truth: &Graph, cfg: &McmcConfig) -> Result<RecoveryReport> {
    let start = Instant::now();
    let run = run_chain(ds, cfg)?;
    let probs = run.accumulator.edge_probabilities()?;
    let mut report = score_probabilities(&probs, truth, 0.5);
    report.runtime_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Generates and evaluates several specs, at most `threads` at a time.
pub fn evaluate_replicates(specs: &[SyntheticSpec], cfg: &McmcConfig, threads: usize) -> Vec<Result<RecoveryReport>> {
    let threads = threads.max(1);
    let mut out = Vec::with_capacity(specs.len());
    for batch in specs.chunks(threads) {
        let results: Vec<Result<RecoveryReport>> = std::thread::scope(|s| {
            let handles: Vec<_> = batch
                .iter()
                .map(|spec| {
                    s.spawn(move || {
                        let (ds, g, _) = generate(spec)?;
                        evaluate(&ds, &g, cfg)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("replicate thread panicked")).collect()
        });
        out.extend(results);
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Truth {
    pub spec: SyntheticSpec,
    pub edges: Vec<(usize, usize)>,
    /// Row-major p × p.
    pub precision: Vec<f64>,
}

impl Truth {
    pub fn new(spec: &SyntheticSpec, g: &Graph, k: &PrecisionMatrix) -> Self {
        let p = k.p();
        Self {
            spec: spec.clone(),
            edges: g.edges(),
            precision: (0..p * p).map(|t| k[(t / p, t % p)]).collect(),
        }
    }

    pub fn graph(&self) -> Graph {
        Graph::from_edges(self.spec.p, &self.edges)
    }
}

/// Writes `data.csv`, `schema.json` and `truth.json` into `dir`.
pub fn write_fixture(dir: &Path, ds: &Dataset, truth: &Truth) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    ds.write_csv(std::fs::File::create(dir.join("data.csv"))?)?;
    std::fs::write(dir.join("schema.json"), ds.schema_json()? + "\n")?;
    std::fs::write(dir.join("truth.json"), serde_json::to_string_pretty(truth)? + "\n")?;
    Ok(())
}

pub fn read_truth(dir: &Path) -> Result<Truth> {
    Ok(serde_json::from_str(&std::fs::read_to_string(dir.join("truth.json"))?)?)
}
