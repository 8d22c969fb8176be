//! G-Wishart distribution: sampling, unnormalized log-density, and exact
//! normalizing constants for decomposable graphs.
//!
//! Parametrization: for degrees of freedom `b > 2` and SPD scale `D`, the
//! density on SPD matrices K whose off-diagonal zeros follow graph G is
//! proportional to `|K|^{(b-2)/2} exp(-tr(D K)/2)`. On the full graph this
//! is the Wishart law with `b + p - 1` degrees of freedom and scale `D⁻¹`.

use std::ops::Deref;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Largest off-pattern magnitude accepted from the completion loop.
pub const COMPLETION_TOL: f64 = 1e-8;
pub const COMPLETION_MAX_SWEEPS: usize = 1000;
const COMPLETION_NEWTON_STEPS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct GWishartParams {
    pub b: f64,
    pub d: DMatrix<f64>,
}

impl GWishartParams {
    pub fn new(b: f64, d: DMatrix<f64>) -> Result<Self> {
        if !(b > 2.0) || !b.is_finite() {
            return Err(Error::ConfigInvalid(format!("degrees of freedom b = {b} must exceed 2")));
        }
        if !d.is_square() || (&d - d.transpose()).amax() > 1e-12 * (1.0 + d.amax()) {
            return Err(Error::NotSpd);
        }
        if Cholesky::new(d.clone()).is_none() {
            return Err(Error::NotSpd);
        }
        Ok(Self { b, d })
    }

    /// b = 3, D = I.
    pub fn standard(p: usize) -> Self {
        Self {
            b: 3.0,
            d: DMatrix::identity(p, p),
        }
    }

    pub fn p(&self) -> usize {
        self.d.nrows()
    }

    /// Conjugate update after observing `n` rows with scatter `s`.
    pub fn posterior(&self, s: &DMatrix<f64>, n: usize) -> Self {
        Self {
            b: self.b + n as f64,
            d: &self.d + s,
        }
    }

    pub fn is_identity_scale(&self) -> bool {
        self.d == DMatrix::identity(self.p(), self.p())
    }
}

/// Symmetric positive definite precision matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionMatrix(DMatrix<f64>);

impl PrecisionMatrix {
    /// Wraps `k` after checking symmetry and positive definiteness.
    pub fn new(k: DMatrix<f64>) -> Result<Self> {
        if !k.is_square() || (&k - k.transpose()).amax() > 1e-10 * (1.0 + k.amax()) {
            return Err(Error::NotSpd);
        }
        if Cholesky::new(k.clone()).is_none() {
            return Err(Error::NotSpd);
        }
        Ok(Self(k))
    }

    pub(crate) fn new_unchecked(k: DMatrix<f64>) -> Self {
        Self(k)
    }

    pub fn identity(p: usize) -> Self {
        Self(DMatrix::identity(p, p))
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn p(&self) -> usize {
        self.0.nrows()
    }

    /// Largest |k_ij| over non-edges of `g`.
    pub fn max_off_pattern(&self, g: &Graph) -> f64 {
        off_pattern_residual(&self.0, g)
    }

    pub fn is_spd(&self) -> bool {
        Cholesky::new(self.0.clone()).is_some()
    }

    /// True when every non-edge of `g` holds an exact zero.
    pub fn respects(&self, g: &Graph) -> bool {
        self.max_off_pattern(g) == 0.0
    }

    pub fn log_det(&self) -> Result<f64> {
        log_det_spd(&self.0)
    }
}

impl Deref for PrecisionMatrix {
    type Target = DMatrix<f64>;
    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

pub(crate) fn log_det_spd(m: &DMatrix<f64>) -> Result<f64> {
    let chol = Cholesky::new(m.clone()).ok_or(Error::NotSpd)?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

pub(crate) fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = Cholesky::new(m.clone()).ok_or(Error::NotSpd)?;
    let inv = chol.inverse();
    Ok(symmetrize(inv))
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

fn off_pattern_residual(k: &DMatrix<f64>, g: &Graph) -> f64 {
    let p = k.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..p {
        for j in i + 1..p {
            if !g.has_edge(i, j) {
                worst = worst.max(k[(i, j)].abs()).max(k[(j, i)].abs());
            }
        }
    }
    worst
}

/// Wishart draw with `df` degrees of freedom and scale Σ = L Lᵀ (Bartlett).
pub fn sample_wishart<R: Rng + ?Sized>(df: f64, scale_chol: &DMatrix<f64>, rng: &mut R) -> DMatrix<f64> {
    let p = scale_chol.nrows();
    let mut a = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        let chi = ChiSquared::new(df - i as f64).expect("positive chi-square dof");
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let la = scale_chol * a;
    symmetrize(&la * la.transpose())
}

/// Sampler output plus the residual after each completion sweep.
#[derive(Debug, Clone)]
pub struct GWishartDraw {
    pub k: PrecisionMatrix,
    pub residuals: Vec<f64>,
}

/// Draws K ~ G-Wishart(b, D) restricted to `g`.
///
/// A full Wishart draw W is inverted to Σ, then a cyclic vertex-wise
/// completion replaces each column of the working covariance by the
/// regression fit on the vertex's neighbours until the inverse satisfies
/// the zero pattern. Draws whose sweeps have not converged after
/// [`COMPLETION_MAX_SWEEPS`] are finished by Newton steps on the same
/// completion problem. Off-pattern entries are then set to exact zeros.
pub fn sample_gwishart<R: Rng + ?Sized>(g: &Graph, params: &GWishartParams, rng: &mut R) -> Result<PrecisionMatrix> {
    sample_gwishart_traced(g, params, rng).map(|d| d.k)
}

pub fn sample_gwishart_traced<R: Rng + ?Sized>(
    g: &Graph,
    params: &GWishartParams,
    rng: &mut R,
) -> Result<GWishartDraw> {
    let p = g.p();
    assert_eq!(params.p(), p, "graph and scale dimensions differ");
    let d_inv = spd_inverse(&params.d)?;
    let scale_chol = Cholesky::new(d_inv).ok_or(Error::NotSpd)?.l();
    let wishart = sample_wishart(params.b + p as f64 - 1.0, &scale_chol, rng);

    if g.num_edges() == p * p.saturating_sub(1) / 2 {
        return Ok(GWishartDraw {
            k: PrecisionMatrix::new(wishart)?,
            residuals: Vec::new(),
        });
    }

    let sigma = spd_inverse(&wishart)?;
    let neighbors: Vec<Vec<usize>> = (0..p).map(|v| g.neighbors(v)).collect();
    let mut w = sigma.clone();
    let mut residuals = Vec::new();
    let mut k = DMatrix::zeros(p, p);
    let mut converged = false;
    for _ in 0..COMPLETION_MAX_SWEEPS {
        for j in 0..p {
            complete_vertex(&mut w, &sigma, j, &neighbors[j]);
        }
        k = spd_inverse(&w)?;
        let r = off_pattern_residual(&k, g);
        residuals.push(r);
        if r <= COMPLETION_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        // slow contraction on ill-conditioned draws: finish with Newton steps
        let mut start = k.clone();
        zero_off_pattern(&mut start, g);
        if let Some(polished) = newton_completion(start, &sigma, g) {
            k = polished;
            converged = true;
        }
    }
    if !converged {
        return Err(Error::CompletionNotConverged {
            sweeps: residuals.len(),
            residual: *residuals.last().unwrap_or(&f64::NAN),
        });
    }
    zero_off_pattern(&mut k, g);
    let k = PrecisionMatrix::new(k)?;
    Ok(GWishartDraw { k, residuals })
}

fn zero_off_pattern(k: &mut DMatrix<f64>, g: &Graph) {
    let p = k.nrows();
    for i in 0..p {
        for j in 0..p {
            if i != j && !g.has_edge(i, j) {
                k[(i, j)] = 0.0;
            }
        }
    }
}

/// Newton ascent on log|K| − tr(ΣK) over matrices with the zero pattern of
/// `g`. Its maximizer is the same completion the vertex sweeps converge to:
/// (K⁻¹)_ij = Σ_ij on the diagonal and on every edge.
fn newton_completion(mut k: DMatrix<f64>, sigma: &DMatrix<f64>, g: &Graph) -> Option<DMatrix<f64>> {
    let p = k.nrows();
    let mut free: Vec<(usize, usize)> = (0..p).map(|i| (i, i)).collect();
    free.extend(g.edges());
    let m = free.len();
    let objective = |k: &DMatrix<f64>| -> Option<f64> {
        let chol = Cholesky::new(k.clone())?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Some(log_det - (sigma * k).trace())
    };
    let mut f = objective(&k)?;
    for _ in 0..COMPLETION_NEWTON_STEPS {
        let c = spd_inverse(&k).ok()?;
        let grad = DVector::from_fn(m, |a, _| {
            let (i, j) = free[a];
            let gij = c[(i, j)] - sigma[(i, j)];
            if i == j {
                gij
            } else {
                2.0 * gij
            }
        });
        let neg_hess = DMatrix::from_fn(m, m, |a, b| {
            let (i, j) = free[a];
            let (r, s) = free[b];
            match (i == j, r == s) {
                (true, true) => c[(i, r)] * c[(i, r)],
                (true, false) => 2.0 * c[(i, r)] * c[(i, s)],
                (false, true) => 2.0 * c[(i, r)] * c[(j, r)],
                (false, false) => 2.0 * (c[(j, r)] * c[(i, s)] + c[(j, s)] * c[(i, r)]),
            }
        });
        let step = Cholesky::new(neg_hess)?.solve(&grad);
        // the Newton step estimates the distance from K to the exact completion
        let distance = step.amax();
        if distance <= COMPLETION_TOL {
            return Some(k);
        }
        let decrement = grad.dot(&step);
        let mut t = 1.0;
        loop {
            let mut trial = k.clone();
            for (a, &(i, j)) in free.iter().enumerate() {
                trial[(i, j)] += t * step[a];
                if i != j {
                    trial[(j, i)] += t * step[a];
                }
            }
            if let Some(ft) = objective(&trial) {
                // inside the quadratic-convergence region of the self-concordant
                // objective, full steps are taken without comparing objective values
                if decrement < 0.1 || ft >= f + 0.25 * t * decrement {
                    k = trial;
                    f = ft;
                    break;
                }
            }
            t *= 0.5;
            if t < 1e-12 {
                return None;
            }
        }
    }
    None
}

/// Column `j` of `w` becomes W[·,N] W[N,N]⁻¹ Σ[N,j] (zero when N is empty).
fn complete_vertex(w: &mut DMatrix<f64>, sigma: &DMatrix<f64>, j: usize, nbrs: &[usize]) {
    let p = w.nrows();
    if nbrs.is_empty() {
        for i in 0..p {
            if i != j {
                w[(i, j)] = 0.0;
                w[(j, i)] = 0.0;
            }
        }
        return;
    }
    let m = nbrs.len();
    let w_nn = DMatrix::from_fn(m, m, |a, b| w[(nbrs[a], nbrs[b])]);
    let s_nj = DVector::from_fn(m, |a, _| sigma[(nbrs[a], j)]);
    let beta = match Cholesky::<f64, Dyn>::new(w_nn.clone()) {
        Some(c) => c.solve(&s_nj),
        None => w_nn.lu().solve(&s_nj).expect("neighbour block is invertible"),
    };
    for i in 0..p {
        if i == j {
            continue;
        }
        let v: f64 = nbrs.iter().zip(beta.iter()).map(|(&l, &bl)| w[(i, l)] * bl).sum();
        w[(i, j)] = v;
        w[(j, i)] = v;
    }
}

/// `((b-2)/2) log|K| - tr(D K)/2`.
pub fn log_density_unnorm(k: &PrecisionMatrix, g: &Graph, params: &GWishartParams) -> Result<f64> {
    debug_assert!(k.respects(g), "precision matrix violates the graph's zero pattern");
    let logdet = k.log_det()?;
    let trace = params.d.component_mul(k).sum();
    Ok(0.5 * (params.b - 2.0) * logdet - 0.5 * trace)
}

/// log Γ_q(a) = q(q−1)/4 · log π + Σ_{j=1..q} log Γ(a + (1−j)/2).
pub fn ln_multivariate_gamma(q: usize, a: f64) -> f64 {
    let qf = q as f64;
    qf * (qf - 1.0) / 4.0 * std::f64::consts::PI.ln()
        + (1..=q).map(|j| ln_gamma(a + (1.0 - j as f64) / 2.0)).sum::<f64>()
}

/// Log normalizing constant of the full-graph G-Wishart on `q` nodes:
/// (q(b+q−1)/2) log 2 + log Γ_q((b+q−1)/2) − ((b+q−1)/2) log|D|.
pub fn ln_wishart_const(b: f64, d: &DMatrix<f64>) -> Result<f64> {
    let q = d.nrows();
    if q == 0 {
        return Ok(0.0);
    }
    let qf = q as f64;
    let half_df = (b + qf - 1.0) / 2.0;
    Ok(qf * half_df * std::f64::consts::LN_2 + ln_multivariate_gamma(q, half_df) - half_df * log_det_spd(d)?)
}

/// Exact log I_G(b, D) for decomposable `g` with arbitrary SPD `D`.
///
/// Uses the perfect-sequence factorization Π_v I(C_v) / I(C_v ∖ {v}),
/// where C_v is v together with its earlier neighbours.
pub fn log_norm_const_decomposable_scaled(g: &Graph, params: &GWishartParams) -> Result<f64> {
    let seq = g.perfect_sequence().ok_or(Error::NotDecomposable)?;
    let sub = |nodes: &[usize]| DMatrix::from_fn(nodes.len(), nodes.len(), |a, b| params.d[(nodes[a], nodes[b])]);
    let mut total = 0.0;
    for (v, earlier) in seq {
        let mut clique = earlier.clone();
        clique.push(v);
        total += ln_wishart_const(params.b, &sub(&clique))?;
        total -= ln_wishart_const(params.b, &sub(&earlier))?;
    }
    Ok(total)
}

/// Exact log I_G(b, I) for decomposable `g`. Only identity scale is accepted.
pub fn log_norm_const_decomposable(g: &Graph, params: &GWishartParams) -> Result<f64> {
    if !params.is_identity_scale() {
        return Err(Error::UnsupportedScale);
    }
    log_norm_const_decomposable_scaled(g, params)
}

/// log P(Z | G) = log I_G(b+n, I+S) − log I_G(b, I) − (n p / 2) log 2π.
pub fn log_marginal_likelihood_decomposable(
    g: &Graph,
    params: &GWishartParams,
    scatter: &DMatrix<f64>,
    n: usize,
) -> Result<f64> {
    if !params.is_identity_scale() {
        return Err(Error::UnsupportedScale);
    }
    let post = params.posterior(scatter, n);
    let p = g.p() as f64;
    Ok(log_norm_const_decomposable_scaled(g, &post)?
        - log_norm_const_decomposable_scaled(g, params)?
        - 0.5 * n as f64 * p * (2.0 * std::f64::consts::PI).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn params_validation() {
        assert!(GWishartParams::new(2.0, DMatrix::identity(2, 2)).is_err());
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert_eq!(GWishartParams::new(3.0, bad).unwrap_err().kind(), "NotSPD");
        assert!(GWishartParams::new(3.5, DMatrix::identity(3, 3)).is_ok());
    }

    #[test]
    fn log_density_at_identity() {
        let p = GWishartParams::standard(2);
        let v = log_density_unnorm(&PrecisionMatrix::identity(2), &Graph::empty(2), &p).unwrap();
        assert!((v + 1.0).abs() < 1e-15);
    }

    #[test]
    fn log_density_scaling() {
        let p = GWishartParams::standard(1);
        let g = Graph::empty(1);
        for k in [0.3, 1.0, 4.0] {
            let a = log_density_unnorm(&PrecisionMatrix::new(DMatrix::from_element(1, 1, 2.0 * k)).unwrap(), &g, &p).unwrap();
            let b = log_density_unnorm(&PrecisionMatrix::new(DMatrix::from_element(1, 1, k)).unwrap(), &g, &p).unwrap();
            assert!((a - b - (0.5 * 2f64.ln() - k / 2.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn one_dimensional_constant_matches_quadrature() {
        // ∫_0^∞ k^{1/2} e^{-k/2} dk by Simpson on k = t², dk = 2t dt
        let f = |t: f64| 2.0 * t * t * (-t * t / 2.0).exp();
        let (hi, steps) = (12.0, 200_000);
        let h = hi / steps as f64;
        let mut s = f(0.0) + f(hi);
        for i in 1..steps {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        let quad = (s * h / 3.0).ln();
        let exact = log_norm_const_decomposable(&Graph::empty(1), &GWishartParams::standard(1)).unwrap();
        assert!((quad - exact).abs() < 1e-9, "{quad} vs {exact}");
        let closed = ln_gamma(1.5) + 1.5 * 2f64.ln();
        assert!((exact - closed).abs() < 1e-12);
    }

    #[test]
    fn empty_graph_constant_factorizes() {
        let one = log_norm_const_decomposable(&Graph::empty(1), &GWishartParams::standard(1)).unwrap();
        let two = log_norm_const_decomposable(&Graph::empty(2), &GWishartParams::standard(2)).unwrap();
        assert!((two - 2.0 * one).abs() < 1e-12);
    }

    #[test]
    fn non_identity_scale_rejected() {
        let p = GWishartParams::new(3.0, DMatrix::identity(2, 2) * 2.0).unwrap();
        assert_eq!(log_norm_const_decomposable(&Graph::full(2), &p).unwrap_err().kind(), "UnsupportedScale");
        let cycle = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]);
        assert_eq!(
            log_norm_const_decomposable(&cycle, &GWishartParams::standard(4)).unwrap_err().kind(),
            "NotDecomposable"
        );
    }

    #[test]
    fn marginal_likelihood_with_no_data_is_zero() {
        let g = Graph::from_edges(3, &[(0, 1)]);
        let v = log_marginal_likelihood_decomposable(&g, &GWishartParams::standard(3), &DMatrix::zeros(3, 3), 0).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn marginal_likelihood_p1_matches_quadrature() {
        // z = (0, 0): P(z) = ∫ (2π)^{-1} k · k^{1/2} e^{-k/2} / I(3,1) dk
        let f = |t: f64| 2.0 * t * t * t * t * (-t * t / 2.0).exp();
        let (hi, steps) = (14.0, 200_000);
        let h = hi / steps as f64;
        let mut s = f(0.0) + f(hi);
        for i in 1..steps {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        let params = GWishartParams::standard(1);
        let norm = log_norm_const_decomposable(&Graph::empty(1), &params).unwrap();
        let quad = (s * h / 3.0).ln() - norm - (2.0 * std::f64::consts::PI).ln();
        let exact = log_marginal_likelihood_decomposable(&Graph::empty(1), &params, &DMatrix::zeros(1, 1), 2).unwrap();
        assert!((quad - exact).abs() < 1e-9, "{quad} vs {exact}");
    }

    #[test]
    fn empty_graph_draw_is_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = Graph::empty(3);
        for _ in 0..50 {
            let k = sample_gwishart(&g, &GWishartParams::standard(3), &mut rng).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    if i != j {
                        assert_eq!(k[(i, j)], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn one_dimensional_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = Graph::empty(1);
        let params = GWishartParams::standard(1);
        let n = 100_000;
        let mean = (0..n).map(|_| sample_gwishart(&g, &params, &mut rng).unwrap()[(0, 0)]).sum::<f64>() / n as f64;
        assert!((mean - 3.0).abs() < 0.05, "{mean}");
    }

    #[test]
    fn completion_residual_shrinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cycle = Graph::from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (1, 3)]);
        for _ in 0..100 {
            let d = sample_gwishart_traced(&cycle, &GWishartParams::standard(5), &mut rng).unwrap();
            assert!(d.residuals.last().unwrap() <= &COMPLETION_TOL);
            for w in d.residuals.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-15, "{:?}", d.residuals);
            }
            assert!(d.k.respects(&cycle) && d.k.is_spd());
        }
    }

    #[test]
    fn newton_completion_matches_vertex_sweeps() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = Graph::from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (1, 3)]);
        let w = sample_wishart(20.0, &DMatrix::identity(5, 5), &mut rng);
        let sigma = spd_inverse(&w).unwrap();
        let nbrs: Vec<Vec<usize>> = (0..5).map(|v| g.neighbors(v)).collect();
        let mut work = sigma.clone();
        for _ in 0..500 {
            for j in 0..5 {
                complete_vertex(&mut work, &sigma, j, &nbrs[j]);
            }
        }
        let mut by_sweeps = spd_inverse(&work).unwrap();
        zero_off_pattern(&mut by_sweeps, &g);
        let start = DMatrix::from_fn(5, 5, |i, j| if i == j { 1.0 / sigma[(i, i)] } else { 0.0 });
        let by_newton = newton_completion(start, &sigma, &g).unwrap();
        assert!((by_newton - by_sweeps).amax() < 1e-8);
    }

    #[test]
    fn ill_conditioned_prior_draws_complete() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let g = Graph::from_edges(10, &[(0, 2), (0, 3), (0, 8), (1, 5), (2, 5), (2, 9), (3, 4), (3, 5), (3, 8), (3, 9), (6, 7)]);
        let params = GWishartParams::standard(10);
        for _ in 0..3000 {
            let k = sample_gwishart(&g, &params, &mut rng).unwrap();
            assert!(k.respects(&g));
        }
    }
}
