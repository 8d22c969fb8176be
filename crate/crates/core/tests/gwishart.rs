use gcgm_core::graph::Graph;
use gcgm_core::gwishart::{
    log_marginal_likelihood_decomposable, log_norm_const_decomposable, sample_gwishart, sample_gwishart_traced,
    GWishartParams, COMPLETION_TOL,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

fn moment_check(p: usize, d: DMatrix<f64>, seed: u64) {
    let b = 3.0;
    let params = GWishartParams::new(b, d.clone()).unwrap();
    let g = Graph::full(p);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws = 100_000;
    let mut sum = DMatrix::zeros(p, p);
    let mut sumsq = DMatrix::zeros(p, p);
    let mut samples = Vec::with_capacity(draws);
    for _ in 0..draws {
        let k = sample_gwishart(&g, &params, &mut rng).unwrap();
        assert!(k.is_spd());
        sum += &*k;
        sumsq += k.component_mul(&k);
        samples.push(k.into_inner());
    }
    let nf = draws as f64;
    let mean = &sum / nf;
    let var = &sumsq / nf - mean.component_mul(&mean);
    let sigma = d.clone().try_inverse().unwrap();
    let df = b + p as f64 - 1.0;
    for i in 0..p {
        for j in 0..p {
            // first moment: df·D⁻¹
            let se = (var[(i, j)] / nf).sqrt();
            let expected = df * sigma[(i, j)];
            assert!(
                (mean[(i, j)] - expected).abs() <= 3.0 * se,
                "p={p} mean[{i},{j}] = {} vs {expected} (se {se})",
                mean[(i, j)]
            );
            // second moment: Var K_ij = df (Σ_ij² + Σ_ii Σ_jj)
            let expected_var = df * (sigma[(i, j)].powi(2) + sigma[(i, i)] * sigma[(j, j)]);
            let dev: Vec<f64> = samples.iter().map(|k| (k[(i, j)] - mean[(i, j)]).powi(2)).collect();
            let dev_mean = dev.iter().sum::<f64>() / nf;
            let dev_se = (dev.iter().map(|x| (x - dev_mean).powi(2)).sum::<f64>() / nf / nf).sqrt();
            assert!(
                (var[(i, j)] - expected_var).abs() <= 3.0 * dev_se,
                "p={p} var[{i},{j}] = {} vs {expected_var} (se {dev_se})",
                var[(i, j)]
            );
        }
    }
}

#[test]
fn full_graph_moments_match_wishart() {
    moment_check(1, DMatrix::identity(1, 1), 1);
    moment_check(2, DMatrix::identity(2, 2), 2);
    moment_check(3, DMatrix::identity(3, 3), 3);
    let d = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.0, 0.3, 0.0, 0.3, 1.5]);
    moment_check(3, d, 4);
}

#[test]
fn draws_are_spd_with_exact_zeros() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cycle = Graph::from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)]);
    let params = GWishartParams::standard(5);
    for _ in 0..2_000 {
        let k = sample_gwishart(&cycle, &params, &mut rng).unwrap();
        assert!(k.is_spd());
        assert!(k.respects(&cycle));
        assert_eq!(k[(0, 2)], 0.0);
        assert_eq!(k[(3, 1)], 0.0);
    }
}

/// Monte Carlo estimate of log ∫ |K|^{(b−2)/2} exp(−tr K / 2) dK over SPD
/// matrices with the zero pattern of `g` (p = 3, b = 3), with its standard
/// error on the log scale.
fn importance_sampled_log_constant(g: &Graph, draws: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let diag = Gamma::new(2.0, 2.0).unwrap();
    let mut weights = Vec::with_capacity(draws);
    for _ in 0..draws {
        let d: Vec<f64> = (0..3).map(|_| diag.sample(&mut rng)).collect();
        let mut k = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d.clone()));
        // proposal density of the diagonal: Gamma(2, scale 2)
        let mut log_q: f64 = d.iter().map(|&x| x.ln() - x / 2.0 - 4f64.ln()).sum();
        for (i, j) in g.edges() {
            let half = (d[i] * d[j]).sqrt();
            let v = half * (2.0 * rng.random::<f64>() - 1.0);
            k[(i, j)] = v;
            k[(j, i)] = v;
            log_q -= (2.0 * half).ln();
        }
        let w = match nalgebra::Cholesky::new(k.clone()) {
            Some(c) => {
                let log_det = 2.0 * c.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
                (0.5 * log_det - 0.5 * k.trace() - log_q).exp()
            }
            None => 0.0,
        };
        weights.push(w);
    }
    let n = draws as f64;
    let mean = weights.iter().sum::<f64>() / n;
    let var = weights.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean.ln(), (var / n).sqrt() / mean)
}

#[test]
fn decomposable_constants_match_importance_sampling() {
    let params = GWishartParams::standard(3);
    for (name, g) in [
        ("path", Graph::from_edges(3, &[(0, 1), (1, 2)])),
        ("triangle", Graph::full(3)),
    ] {
        let exact = log_norm_const_decomposable(&g, &params).unwrap();
        let (estimate, se) = importance_sampled_log_constant(&g, 400_000, 6);
        assert!((exact - estimate).abs() <= 3.0 * se, "{name}: exact {exact}, estimate {estimate} ± {se}");
    }
}

#[test]
fn empty_graph_beats_full_graph_on_independent_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let params = GWishartParams::standard(2);
    let n = 500;
    let mut wins = 0;
    for _ in 0..100 {
        let z = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let s = z.tr_mul(&z);
        let empty = log_marginal_likelihood_decomposable(&Graph::empty(2), &params, &s, n).unwrap();
        let full = log_marginal_likelihood_decomposable(&Graph::full(2), &params, &s, n).unwrap();
        wins += usize::from(empty > full);
    }
    assert!(wins >= 95, "empty graph preferred in {wins} of 100 replicates");
}

#[test]
fn completion_residuals_decrease_on_random_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let p = rng.random_range(4..9);
        let mut g = Graph::empty(p);
        for i in 0..p {
            for j in i + 1..p {
                if rng.random::<f64>() < 0.4 {
                    g.set_edge(i, j, true);
                }
            }
        }
        let draw = sample_gwishart_traced(&g, &GWishartParams::standard(p), &mut rng).unwrap();
        let r = &draw.residuals;
        if r.len() < 1000 {
            assert!(r.windows(2).all(|w| w[1] <= w[0]), "{r:?}");
            assert!(r.is_empty() || *r.last().unwrap() <= COMPLETION_TOL);
        }
        assert!(draw.k.respects(&g));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn decomposable_constant_is_invariant_under_relabeling(
        mask in 0u32..(1 << 10),
        perm in Just((0..5usize).collect::<Vec<_>>()).prop_shuffle(),
        b in 2.5f64..8.0,
    ) {
        let edges: Vec<(usize, usize)> = (0..10)
            .filter(|t| mask & (1 << t) != 0)
            .map(|t| gcgm_core::graph::pair_from_index(5, t as usize))
            .collect();
        let g = Graph::from_edges(5, &edges);
        prop_assume!(g.is_decomposable());
        let params = GWishartParams::new(b, DMatrix::identity(5, 5)).unwrap();
        let a = log_norm_const_decomposable(&g, &params).unwrap();
        let c = log_norm_const_decomposable(&g.relabel(&perm), &params).unwrap();
        prop_assert!((a - c).abs() <= 1e-10 * a.abs().max(1.0));
    }
}
