//! Posterior sampler over (graph, precision matrix, latent data).
//!
//! Each iteration makes `sweep` single-edge proposals. A proposal flips one
//! uniformly chosen pair and is accepted with an exchange-algorithm ratio:
//! an auxiliary precision matrix drawn from the G-Wishart prior under the
//! proposed graph cancels the intractable prior normalizing constants. The
//! dimension change is handled in the Cholesky parametrization K = ΦᵀΦ with
//! the flipped pair ordered last, where only the single factor entry
//! φ(p−1, p) enters or leaves the free set. After the graph moves, K is
//! redrawn from its conjugate G-Wishart update and the latent columns are
//! refreshed.

use nalgebra::{Cholesky, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::{num_pairs, pair_from_index, Graph, GraphRecord};
use crate::gwishart::{sample_gwishart, GWishartParams, PrecisionMatrix};
use crate::latent::{initialize_latent, resample_latent, LatentState};
use crate::summary::{partial_correlations_unchecked, PosteriorAccumulator};

/// Convergence flag threshold on the half-vs-half edge probability gap.
pub const CONVERGENCE_TOL: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub edge_prior: f64,
    pub seed: u64,
    pub thin: usize,
    pub chains: usize,
    /// Edge proposals per iteration.
    pub sweep: usize,
    /// G-Wishart prior degrees of freedom.
    pub b: f64,
    /// Prior scale D = scale · I.
    pub scale: f64,
    /// Verify SPD, zero pattern and rank consistency at every retained iteration.
    pub debug_checks: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            iterations: 120_000,
            burn_in: 20_000,
            edge_prior: 0.2,
            seed: 1,
            thin: 1,
            chains: 1,
            sweep: 1,
            b: 3.0,
            scale: 1.0,
            debug_checks: false,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.burn_in >= self.iterations {
            return bad(format!(
                "burn_in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            ));
        }
        if !(self.edge_prior > 0.0 && self.edge_prior < 1.0) {
            return bad(format!("edge_prior {} must lie in (0,1)", self.edge_prior));
        }
        if self.thin == 0 || self.chains == 0 || self.sweep == 0 {
            return bad("thin, chains and sweep must be positive".into());
        }
        if !(self.b > 2.0) {
            return bad(format!("b = {} must exceed 2", self.b));
        }
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return bad(format!("scale = {} must be positive", self.scale));
        }
        Ok(())
    }

    pub fn prior(&self, p: usize) -> Result<GWishartParams> {
        GWishartParams::new(self.b, DMatrix::identity(p, p) * self.scale)
    }

    /// Samples retained per chain.
    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }

    pub fn proposals(&self) -> usize {
        self.iterations * self.sweep
    }
}

/// |E| log π + (pairs − |E|) log(1 − π).
pub fn log_graph_prior(g: &Graph, edge_prior: f64) -> f64 {
    let e = g.num_edges() as f64;
    let pairs = num_pairs(g.p()) as f64;
    e * edge_prior.ln() + (pairs - e) * (1.0 - edge_prior).ln()
}

/// Flips one uniformly chosen pair.
pub fn propose_edge_flip<R: Rng + ?Sized>(g: &Graph, rng: &mut R) -> (Graph, (usize, usize)) {
    let p = g.p();
    assert!(p >= 2, "edge proposals need at least two nodes");
    let (i, j) = pair_from_index(p, rng.random_range(0..num_pairs(p)));
    (g.with_toggled(i, j), (i, j))
}

/// Cholesky factor of K with nodes reordered so that `i`, `j` come last.
struct EdgeFrame {
    /// Lower factor: K_perm = L Lᵀ, so φ(a, b) = L[b, a].
    l: DMatrix<f64>,
}

impl EdgeFrame {
    fn new(k: &DMatrix<f64>, i: usize, j: usize) -> Result<Self> {
        let p = k.nrows();
        let mut perm: Vec<usize> = (0..p).filter(|&v| v != i && v != j).collect();
        perm.push(i);
        perm.push(j);
        let kp = DMatrix::from_fn(p, p, |a, b| k[(perm[a], perm[b])]);
        let l = Cholesky::new(kp).ok_or(Error::NotSpd)?.l();
        Ok(Self { l })
    }

    fn last(&self) -> usize {
        self.l.nrows() - 1
    }

    /// Diagonal factor entry of node `i`.
    fn phi_ii(&self) -> f64 {
        let q = self.last() - 1;
        self.l[(q, q)]
    }

    /// Value of φ(i, j) that makes K_ij vanish given the other entries.
    fn phi_zero(&self) -> f64 {
        let (q, r) = (self.last() - 1, self.last());
        let dot: f64 = (0..q).map(|t| self.l[(q, t)] * self.l[(r, t)]).sum();
        -dot / self.l[(q, q)]
    }

    /// log of the normalizer of the Gaussian full conditional of φ(i, j)
    /// under scale `d`, evaluated where φ(i, j) sits at its zero value,
    /// plus the Jacobian factor log φ_ii:
    /// ½ log(2π/c) + c (φ0 + β/c)² / 2 + log φ_ii with c = d_jj, β = φ_ii d_ij.
    fn term(&self, d: &DMatrix<f64>, i: usize, j: usize) -> f64 {
        let c = d[(j, j)];
        let phi_ii = self.phi_ii();
        let beta = phi_ii * d[(i, j)];
        let shifted = self.phi_zero() + beta / c;
        0.5 * (2.0 * std::f64::consts::PI / c).ln() + 0.5 * c * shifted * shifted + phi_ii.ln()
    }
}

fn single_flip(a: &Graph, b: &Graph) -> Result<Option<(usize, usize)>> {
    if a.p() != b.p() {
        return Err(Error::ConfigInvalid("graphs of different size".into()));
    }
    let p = a.p();
    let mut diff = None;
    for i in 0..p {
        for j in i + 1..p {
            if a.has_edge(i, j) != b.has_edge(i, j) {
                if diff.is_some() {
                    return Err(Error::ConfigInvalid("proposal differs in more than one pair".into()));
                }
                diff = Some((i, j));
            }
        }
    }
    Ok(diff)
}

/// Log acceptance ratio of a single-edge exchange move from
/// (`current_g`, `current_k`) to `proposed_g`.
///
/// `k_aux` must be a fresh draw from G-Wishart(b, D) under `proposed_g`.
/// All G-Wishart normalizing constants cancel; the ratio does not depend on
/// the value later drawn for the new factor entry, so it can be evaluated
/// before that draw.
pub fn exchange_accept_logratio(
    current_g: &Graph,
    current_k: &PrecisionMatrix,
    proposed_g: &Graph,
    k_aux: &PrecisionMatrix,
    scatter: &DMatrix<f64>,
    params: &GWishartParams,
    edge_prior: f64,
) -> Result<f64> {
    let Some((i, j)) = single_flip(current_g, proposed_g)? else {
        return Ok(0.0);
    };
    let adding = proposed_g.has_edge(i, j);
    let d_post = &params.d + scatter;
    let main = EdgeFrame::new(current_k, i, j)?.term(&d_post, i, j);
    let aux = EdgeFrame::new(k_aux, i, j)?.term(&params.d, i, j);
    let prior_odds = (edge_prior / (1.0 - edge_prior)).ln();
    let forward = prior_odds + main - aux;
    Ok(if adding { forward } else { -forward })
}

/// Applies an accepted flip of pair (i, j) to K.
///
/// Adding draws the new factor entry from its Gaussian full conditional
/// under the posterior scale `d_post`; removing resets it to the value that
/// zeroes K_ij. Only K_ij and K_jj change.
pub fn apply_edge_move<R: Rng + ?Sized>(
    k: &PrecisionMatrix,
    i: usize,
    j: usize,
    adding: bool,
    d_post: &DMatrix<f64>,
    rng: &mut R,
) -> Result<PrecisionMatrix> {
    let mut frame = EdgeFrame::new(k, i, j)?;
    let (q, r) = (frame.last() - 1, frame.last());
    let x = if adding {
        let c = d_post[(j, j)];
        let mean = -frame.phi_ii() * d_post[(i, j)] / c;
        let z: f64 = rng.sample(StandardNormal);
        mean + z / c.sqrt()
    } else {
        frame.phi_zero()
    };
    frame.l[(r, q)] = x;
    let off: f64 = (0..=q).map(|t| frame.l[(r, t)] * frame.l[(q, t)]).sum();
    let diag: f64 = (0..=r).map(|t| frame.l[(r, t)] * frame.l[(r, t)]).sum();
    let mut out = k.clone().into_inner();
    let off = if adding { off } else { 0.0 };
    out[(i, j)] = off;
    out[(j, i)] = off;
    out[(j, j)] = diag;
    Ok(PrecisionMatrix::new_unchecked(out))
}

#[derive(Debug, Clone)]
pub struct ChainState {
    pub g: Graph,
    pub k: PrecisionMatrix,
    pub latent: LatentState,
    pub iteration: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub iterations: u64,
    pub proposals: u64,
    pub accepted: u64,
    pub underflow_clamps: u64,
}

/// One Markov chain with its own RNG stream and accumulators.
pub struct Chain {
    cfg: McmcConfig,
    chain_index: u64,
    prior: GWishartParams,
    state: ChainState,
    scatter: DMatrix<f64>,
    rng: ChaCha8Rng,
    all: PosteriorAccumulator,
    halves: [PosteriorAccumulator; 2],
    stats: ChainStats,
}

fn chain_rng(seed: u64, chain_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain_index);
    rng
}

impl Chain {
    /// Starts from the empty graph with K drawn from its conditional.
    pub fn new(latent: LatentState, cfg: &McmcConfig, chain_index: u64) -> Result<Self> {
        cfg.validate()?;
        let p = latent.q();
        if p < 2 {
            return Err(Error::ConfigInvalid(format!("need at least two modeled variables, got {p}")));
        }
        let prior = cfg.prior(p)?;
        let mut rng = chain_rng(cfg.seed, chain_index);
        let scatter = latent.scatter();
        let g = Graph::empty(p);
        let k = sample_gwishart(&g, &prior.posterior(&scatter, latent.n()), &mut rng)?;
        let retained = cfg.retained() as u64;
        let mut halves = [PosteriorAccumulator::new(p, retained / 2), PosteriorAccumulator::new(p, retained - retained / 2)];
        for h in &mut halves {
            h.trace_every = u64::MAX;
        }
        Ok(Self {
            cfg: cfg.clone(),
            chain_index,
            prior,
            state: ChainState {
                g,
                k,
                latent,
                iteration: 0,
            },
            scatter,
            rng,
            all: PosteriorAccumulator::new(p, retained),
            halves,
            stats: ChainStats::default(),
        })
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn stats(&self) -> &ChainStats {
        &self.stats
    }

    pub fn is_finished(&self) -> bool {
        self.state.iteration >= self.cfg.iterations
    }

    /// Runs one iteration: `sweep` edge proposals, a K refresh, a latent
    /// refresh, then accumulation if the iteration is retained.
    pub fn step(&mut self) -> Result<()> {
        let it = self.state.iteration;
        self.step_inner().map_err(|e| Error::Chain {
            iteration: it,
            source: Box::new(e),
        })
    }

    fn step_inner(&mut self) -> Result<()> {
        let n = self.state.latent.n();
        let d_post = &self.prior.d + &self.scatter;
        for _ in 0..self.cfg.sweep {
            let (proposed, (i, j)) = propose_edge_flip(&self.state.g, &mut self.rng);
            let k_aux = sample_gwishart(&proposed, &self.prior, &mut self.rng)?;
            let log_ratio = exchange_accept_logratio(
                &self.state.g,
                &self.state.k,
                &proposed,
                &k_aux,
                &self.scatter,
                &self.prior,
                self.cfg.edge_prior,
            )?;
            let u: f64 = self.rng.random();
            self.stats.proposals += 1;
            if u.ln() < log_ratio {
                let adding = proposed.has_edge(i, j);
                self.state.k = apply_edge_move(&self.state.k, i, j, adding, &d_post, &mut self.rng)?;
                self.state.g = proposed;
                self.stats.accepted += 1;
            }
        }

        let post = GWishartParams {
            b: self.prior.b + n as f64,
            d: d_post,
        };
        self.state.k = sample_gwishart(&self.state.g, &post, &mut self.rng)?;

        if self.state.latent.has_latent_columns() {
            self.stats.underflow_clamps += resample_latent(&mut self.state.latent, &self.state.k, &mut self.rng);
            self.scatter = self.state.latent.scatter();
        }

        let it = self.state.iteration;
        self.state.iteration += 1;
        self.stats.iterations += 1;
        if it >= self.cfg.burn_in && (it - self.cfg.burn_in).is_multiple_of(self.cfg.thin) {
            if self.cfg.debug_checks {
                self.check_invariants()?;
            }
            let idx = (it - self.cfg.burn_in) / self.cfg.thin;
            let half = usize::from(idx >= self.cfg.retained() / 2);
            let parcor = partial_correlations_unchecked(&self.state.k);
            self.all.push(&self.state.g, &parcor);
            self.halves[half].push(&self.state.g, &parcor);
        }
        Ok(())
    }

    fn check_invariants(&self) -> Result<()> {
        if !self.state.k.is_spd() {
            return Err(Error::NotSpd);
        }
        if !self.state.k.respects(&self.state.g) {
            return Err(Error::ConfigInvalid("precision matrix violates the graph's zero pattern".into()));
        }
        if !self.state.latent.is_rank_consistent() {
            return Err(Error::ConfigInvalid("latent values lost rank consistency".into()));
        }
        Ok(())
    }

    /// Steps until `iterations` is reached (or `max_steps` more iterations ran).
    pub fn run(&mut self, max_steps: Option<usize>) -> Result<()> {
        let mut done = 0;
        while !self.is_finished() && max_steps.is_none_or(|m| done < m) {
            self.step()?;
            done += 1;
        }
        Ok(())
    }

    pub fn into_run(self) -> ChainRun {
        let [first, second] = self.halves;
        let convergence = convergence_report(&first, &second);
        ChainRun {
            accumulator: self.all,
            first_half: first,
            second_half: second,
            stats: vec![self.stats],
            convergence,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let z = &self.state.latent.z;
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: self.cfg.clone(),
            chain_index: self.chain_index,
            iteration: self.state.iteration,
            graph: GraphRecord::from(&self.state.g),
            k: self.state.k.iter().copied().collect(),
            z_shape: (z.nrows(), z.ncols()),
            z: z.iter().copied().collect(),
            rng: RngState {
                seed: self.rng.get_seed().to_vec(),
                stream: self.rng.get_stream(),
                word_pos: self.rng.get_word_pos().to_string(),
            },
            all: self.all.clone(),
            halves: self.halves.clone(),
            stats: self.stats.clone(),
        }
    }

    /// Rebuilds a chain from a checkpoint; `latent` supplies the level
    /// structure (from the same dataset) and is overwritten with the saved values.
    pub fn resume(mut latent: LatentState, cp: Checkpoint) -> Result<Self> {
        if cp.format != CHECKPOINT_FORMAT || cp.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                cp.format, cp.version
            )));
        }
        cp.config.validate()?;
        if cp.z_shape != latent.z.shape() {
            return Err(Error::Checkpoint("latent shape does not match the dataset".into()));
        }
        let p = latent.q();
        latent.z = DMatrix::from_column_slice(cp.z_shape.0, cp.z_shape.1, &cp.z);
        if cp.k.len() != p * p || cp.graph.p != p {
            return Err(Error::Checkpoint("precision matrix shape does not match".into()));
        }
        let k = PrecisionMatrix::new(DMatrix::from_column_slice(p, p, &cp.k))?;
        let seed: [u8; 32] = cp
            .rng
            .seed
            .as_slice()
            .try_into()
            .map_err(|_| Error::Checkpoint("rng seed must be 32 bytes".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(cp.rng.stream);
        rng.set_word_pos(
            cp.rng
                .word_pos
                .parse()
                .map_err(|_| Error::Checkpoint("bad rng word position".into()))?,
        );
        let prior = cp.config.prior(p)?;
        let scatter = latent.scatter();
        Ok(Self {
            cfg: cp.config,
            chain_index: cp.chain_index,
            prior,
            state: ChainState {
                g: Graph::from(&cp.graph),
                k,
                latent,
                iteration: cp.iteration,
            },
            scatter,
            rng,
            all: cp.all,
            halves: cp.halves,
            stats: cp.stats,
        })
    }
}

pub const CHECKPOINT_FORMAT: &str = "gcgm-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RngState {
    pub seed: Vec<u8>,
    pub stream: u64,
    /// u128 as decimal text.
    pub word_pos: String,
}

/// Resumable chain snapshot (JSON). Matrices are stored column-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: McmcConfig,
    pub chain_index: u64,
    pub iteration: usize,
    pub graph: GraphRecord,
    pub k: Vec<f64>,
    pub z_shape: (usize, usize),
    pub z: Vec<f64>,
    pub rng: RngState,
    pub all: PosteriorAccumulator,
    pub halves: [PosteriorAccumulator; 2],
    pub stats: ChainStats,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub max_abs_diff: f64,
    pub worst_pair: Option<(usize, usize)>,
    pub converged: bool,
    pub tolerance: f64,
    /// Cumulative edge frequencies within each half (first half's points,
    /// then second half's).
    pub traces: Vec<Vec<f64>>,
}

/// Compares edge probabilities between the two halves of retained samples.
pub fn convergence_report(first: &PosteriorAccumulator, second: &PosteriorAccumulator) -> ConvergenceReport {
    let mut worst = (0.0, None);
    if let (Ok(a), Ok(b)) = (first.edge_probabilities(), second.edge_probabilities()) {
        for k in 0..num_pairs(first.p) {
            let (i, j) = pair_from_index(first.p, k);
            let d = (a[(i, j)] - b[(i, j)]).abs();
            if d > worst.0 || worst.1.is_none() {
                worst = (d, Some((i, j)));
            }
        }
    }
    let mut traces = first.trace.clone();
    traces.extend(second.trace.iter().cloned());
    let ok = first.sample_count > 0 && second.sample_count > 0 && worst.0 <= CONVERGENCE_TOL;
    ConvergenceReport {
        max_abs_diff: worst.0,
        worst_pair: worst.1,
        converged: ok,
        tolerance: CONVERGENCE_TOL,
        traces,
    }
}

/// Output of one or more chains.
#[derive(Debug, Clone)]
pub struct ChainRun {
    pub accumulator: PosteriorAccumulator,
    pub first_half: PosteriorAccumulator,
    pub second_half: PosteriorAccumulator,
    pub stats: Vec<ChainStats>,
    pub convergence: ConvergenceReport,
}

impl ChainRun {
    fn merge(mut self, other: ChainRun) -> ChainRun {
        self.accumulator.merge(&other.accumulator);
        self.first_half.merge(&other.first_half);
        self.second_half.merge(&other.second_half);
        self.stats.extend(other.stats);
        self.convergence = convergence_report(&self.first_half, &self.second_half);
        self
    }
}

/// Runs `cfg.chains` chains on the modeled columns of `ds`.
pub fn run_chain(ds: &Dataset, cfg: &McmcConfig) -> Result<ChainRun> {
    run_chains_on(initialize_latent(ds)?, cfg, cfg.chains)
}

/// Runs `cfg.chains` chains from a latent state, using at most `threads`
/// worker threads. Chains use independent RNG streams of the same seed
/// and are merged in index order, so results do not depend on `threads`.
pub fn run_chains_on(latent: LatentState, cfg: &McmcConfig, threads: usize) -> Result<ChainRun> {
    cfg.validate()?;
    let threads = threads.max(1).min(cfg.chains);
    let mut runs: Vec<Option<Result<ChainRun>>> = (0..cfg.chains).map(|_| None).collect();
    for batch_start in (0..cfg.chains).step_by(threads) {
        let batch_end = (batch_start + threads).min(cfg.chains);
        let results: Vec<Result<ChainRun>> = std::thread::scope(|s| {
            let handles: Vec<_> = (batch_start..batch_end)
                .map(|c| {
                    let latent = latent.clone();
                    s.spawn(move || {
                        let mut chain = Chain::new(latent, cfg, c as u64)?;
                        chain.run(None)?;
                        Ok(chain.into_run())
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("chain thread panicked")).collect()
        });
        for (c, r) in (batch_start..batch_end).zip(results) {
            runs[c] = Some(r);
        }
    }
    let mut iter = runs.into_iter().map(|r| r.expect("every chain ran"));
    let mut total = iter.next().expect("at least one chain")?;
    for r in iter {
        total = total.merge(r?);
    }
    Ok(total)
}
