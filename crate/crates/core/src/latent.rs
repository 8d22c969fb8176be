//! Gaussian latent matrix of the copula model.
//!
//! Continuous columns are mapped once to normal scores of their mid-ranks
//! and never change afterwards. Discrete columns (ordinal or binary) keep
//! latent values that are redrawn every MCMC iteration from their normal
//! full conditional, truncated so that the ordering of observed levels is
//! preserved (extended rank likelihood).
//!
//! Update contract for a discrete column: levels are visited in ascending
//! order; for each level the bounds (max of the level below, min of the
//! level above) are frozen, then every row at that level is redrawn from its
//! own truncated conditional. Rows sharing a level are conditionally
//! independent given the other levels, so this block update is an exact Gibbs
//! step. Everything runs on one thread in row order, which makes the output a
//! pure function of (state, K, rng stream).

use nalgebra::DMatrix;
use rand::Rng;

use crate::dataset::{Dataset, VarType};
use crate::error::{Error, Result};
use crate::normal::{sample_truncated_normal, std_normal_quantile};

/// Mid-ranks (1-based, ties share their average rank).
pub fn mid_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1 ..= end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Normal scores z = Φ⁻¹(r / (n+1)) of the mid-ranks r.
///
/// Only the ordering of the input matters, so any strictly increasing
/// transform of the column yields identical output.
pub fn continuous_transform(column: &[f64]) -> Result<Vec<f64>> {
    let n = column.len();
    if n == 0 || column.iter().all(|&v| v == column[0]) {
        return Err(Error::DegenerateColumn {
            column: 0,
            name: String::new(),
            reason: "column is constant".into(),
        });
    }
    let scale = (n + 1) as f64;
    Ok(mid_ranks(column)
        .into_iter()
        .map(|r| std_normal_quantile(r / scale))
        .collect())
}

/// Row membership of each observed level of a discrete column.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelIndex {
    /// Distinct observed values, ascending.
    pub values: Vec<f64>,
    /// `rows[k]` lists the rows observed at `values[k]`.
    pub rows: Vec<Vec<usize>>,
    /// Level index of each row.
    pub level_of_row: Vec<usize>,
}

impl LevelIndex {
    fn new(column: &[f64]) -> Self {
        let mut values: Vec<f64> = column.to_vec();
        values.sort_by(f64::total_cmp);
        values.dedup();
        let level_of_row: Vec<usize> = column
            .iter()
            .map(|v| values.binary_search_by(|x| x.total_cmp(v)).expect("level present"))
            .collect();
        let mut rows = vec![Vec::new(); values.len()];
        for (r, &k) in level_of_row.iter().enumerate() {
            rows[k].push(r);
        }
        Self {
            values,
            rows,
            level_of_row,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LatentDiagnostics {
    /// Cells whose truncation interval had no representable mass.
    pub underflow_clamps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    /// n × q latent matrix, one column per modeled variable.
    pub z: DMatrix<f64>,
    pub is_latent_column: Vec<bool>,
    /// Level structure for latent columns; `None` for continuous ones.
    pub levels: Vec<Option<LevelIndex>>,
    /// Truncation bounds per level from the most recent sweep.
    pub level_bounds: Vec<Option<Vec<(f64, f64)>>>,
    pub diagnostics: LatentDiagnostics,
}

/// Builds the starting latent state for the modeled columns of `ds`.
///
/// Discrete columns start at the normal scores of their mid-ranks, which
/// is rank-consistent by construction.
pub fn initialize_latent(ds: &Dataset) -> Result<LatentState> {
    let schema = ds.model_schema();
    let y = ds.model_values();
    let types: Vec<VarType> = schema.iter().map(|s| s.modeled_type()).collect();
    let mut state = LatentState::from_observed(&y, &types).map_err(|e| match e {
        Error::DegenerateColumn { column, reason, .. } => Error::DegenerateColumn {
            column,
            name: schema[column - 1].abbreviation.clone(),
            reason,
        },
        other => other,
    })?;
    state.refresh_bounds();
    Ok(state)
}

impl LatentState {
    /// Initializes from an observed matrix and the modeling type of each column.
    pub fn from_observed(y: &DMatrix<f64>, types: &[VarType]) -> Result<Self> {
        let (n, q) = y.shape();
        assert_eq!(types.len(), q);
        let mut z = DMatrix::zeros(n, q);
        let mut is_latent = vec![false; q];
        let mut levels = vec![None; q];
        if n > 0 {
            for j in 0..q {
                let col: Vec<f64> = y.column(j).iter().copied().collect();
                let scores = continuous_transform(&col).map_err(|e| match e {
                    Error::DegenerateColumn { reason, .. } => Error::DegenerateColumn {
                        column: j + 1,
                        name: String::new(),
                        reason,
                    },
                    other => other,
                })?;
                z.set_column(j, &nalgebra::DVector::from_vec(scores));
                if types[j] != VarType::Continuous {
                    is_latent[j] = true;
                    levels[j] = Some(LevelIndex::new(&col));
                }
            }
        }
        let level_bounds = vec![None; q];
        let mut state = Self {
            z,
            is_latent_column: is_latent,
            levels,
            level_bounds,
            diagnostics: LatentDiagnostics::default(),
        };
        state.refresh_bounds();
        Ok(state)
    }

    /// A state with no observations, used for prior-only runs.
    pub fn empty(q: usize) -> Self {
        Self {
            z: DMatrix::zeros(0, q),
            is_latent_column: vec![false; q],
            levels: vec![None; q],
            level_bounds: vec![None; q],
            diagnostics: LatentDiagnostics::default(),
        }
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn q(&self) -> usize {
        self.z.ncols()
    }

    pub fn has_latent_columns(&self) -> bool {
        self.is_latent_column.iter().any(|&b| b)
    }

    /// Scatter matrix ZᵀZ.
    pub fn scatter(&self) -> DMatrix<f64> {
        self.z.tr_mul(&self.z)
    }

    /// Open truncation interval for level `k` of latent column `j` given
    /// the current latent values of the other levels.
    pub fn level_bounds(&self, j: usize, k: usize) -> (f64, f64) {
        let idx = self.levels[j].as_ref().expect("latent column");
        let lo = if k == 0 {
            f64::NEG_INFINITY
        } else {
            idx.rows[k - 1]
                .iter()
                .map(|&r| self.z[(r, j)])
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let hi = if k + 1 == idx.values.len() {
            f64::INFINITY
        } else {
            idx.rows[k + 1]
                .iter()
                .map(|&r| self.z[(r, j)])
                .fold(f64::INFINITY, f64::min)
        };
        (lo, hi)
    }

    fn refresh_bounds(&mut self) {
        for j in 0..self.q() {
            self.level_bounds[j] = self.levels[j].as_ref().map(|idx| {
                (0..idx.values.len()).map(|k| self.level_bounds(j, k)).collect()
            });
        }
    }

    /// Checks Y[s,j] < Y[t,j] ⟹ Z[s,j] < Z[t,j] for every latent column.
    pub fn is_rank_consistent(&self) -> bool {
        (0..self.q()).all(|j| match &self.levels[j] {
            None => true,
            Some(idx) => {
                let mut prev_max = f64::NEG_INFINITY;
                idx.rows.iter().all(|rows| {
                    let lo = rows.iter().map(|&r| self.z[(r, j)]).fold(f64::INFINITY, f64::min);
                    let hi = rows.iter().map(|&r| self.z[(r, j)]).fold(f64::NEG_INFINITY, f64::max);
                    let ok = prev_max < lo;
                    prev_max = hi;
                    ok
                })
            }
        })
    }
}

/// One Gibbs sweep over all latent columns given precision matrix `k`.
///
/// For row s of column j the full conditional is N(μ, 1/K[j,j]) with
/// μ = −Σ_{t≠j} K[j,t]·Z[s,t] / K[j,j], truncated to the rank bounds.
/// Returns the number of cells that hit the underflow fallback.
pub fn resample_latent<R: Rng + ?Sized>(state: &mut LatentState, k: &DMatrix<f64>, rng: &mut R) -> u64 {
    let q = state.q();
    assert_eq!(k.shape(), (q, q), "precision matrix dimension");
    let n = state.n();
    let mut clamps = 0;
    let mut mu = vec![0.0; n];
    for j in 0..q {
        if !state.is_latent_column[j] {
            continue;
        }
        let kjj = k[(j, j)];
        let sd = (1.0 / kjj).sqrt();
        mu.iter_mut().for_each(|m| *m = 0.0);
        for t in 0..q {
            let kjt = k[(j, t)];
            if t == j || kjt == 0.0 {
                continue;
            }
            let col = state.z.column(t);
            for (m, z) in mu.iter_mut().zip(col.iter()) {
                *m -= kjt * z;
            }
        }
        mu.iter_mut().for_each(|m| *m /= kjj);

        let n_levels = state.levels[j].as_ref().expect("latent column").values.len();
        let mut bounds = Vec::with_capacity(n_levels);
        for lvl in 0..n_levels {
            let (lo, hi) = state.level_bounds(j, lvl);
            bounds.push((lo, hi));
            let rows = &state.levels[j].as_ref().expect("latent column").rows[lvl];
            for &r in rows {
                let d = sample_truncated_normal(mu[r], sd, lo, hi, rng);
                if d.underflow {
                    clamps += 1;
                }
                state.z[(r, j)] = d.value;
            }
        }
        state.level_bounds[j] = Some(bounds);
    }
    state.diagnostics.underflow_clamps += clamps;
    clamps
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::VariableSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Φ by composite Simpson quadrature of the density; independent of erfc.
    fn cdf_by_quadrature(x: f64) -> f64 {
        let steps = 20_000;
        let h = x / steps as f64;
        let f = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = f(0.0) + f(x);
        for i in 1..steps {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(i as f64 * h);
        }
        0.5 + s * h / 3.0
    }

    fn quantile_by_bisection(u: f64) -> f64 {
        let (mut lo, mut hi) = (-10.0, 10.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if cdf_by_quadrature(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn transform_matches_quantile_oracle() {
        let z = continuous_transform(&[3.2, 1.1, 5.0]).unwrap();
        let expected = [
            quantile_by_bisection(0.5),
            quantile_by_bisection(0.25),
            quantile_by_bisection(0.75),
        ];
        for (a, b) in z.iter().zip(expected) {
            assert!((a - b).abs() < 1e-4);
        }
        assert!((z[1] + 0.67449).abs() < 1e-4);
        assert!((z[2] - 0.67449).abs() < 1e-4);
    }

    #[test]
    fn transform_uses_mid_ranks_for_ties() {
        assert_eq!(mid_ranks(&[1.0, 1.0, 2.0]), vec![1.5, 1.5, 3.0]);
        let z = continuous_transform(&[1.0, 1.0, 2.0]).unwrap();
        assert!((z[0] - quantile_by_bisection(0.375)).abs() < 1e-6);
        assert_eq!(z[0], z[1]);
        assert!((z[2] - quantile_by_bisection(0.75)).abs() < 1e-6);
    }

    #[test]
    fn transform_depends_only_on_order() {
        let a = continuous_transform(&[1.0, 2.0, 3.0]).unwrap();
        let b = continuous_transform(&[10.0, 200.0, 3000.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn transform_rejects_constant() {
        assert_eq!(continuous_transform(&[2.0; 4]).unwrap_err().kind(), "DegenerateColumn");
    }

    #[test]
    fn odd_tie_free_scores_have_zero_mean() {
        for n in [3usize, 11, 101, 1001] {
            let col: Vec<f64> = (0..n).map(|i| ((i * 7919) % n) as f64).collect();
            let z = continuous_transform(&col).unwrap();
            let mean = z.iter().sum::<f64>() / n as f64;
            assert!(mean.abs() < 1e-12, "n={n} mean={mean}");
        }
    }

    fn ordinal_state(y: &[f64], z: &[f64]) -> LatentState {
        let ym = DMatrix::from_column_slice(y.len(), 1, y);
        let mut s = LatentState::from_observed(&ym, &[VarType::DiscreteOrdinal]).unwrap();
        s.z = DMatrix::from_column_slice(z.len(), 1, z);
        s
    }

    #[test]
    fn bounds_come_from_neighbouring_levels() {
        let s = ordinal_state(&[0.0, 1.0, 1.0, 2.0], &[-1.2, -0.3, 0.1, 0.9]);
        assert_eq!(s.level_bounds(0, 1), (-1.2, 0.9));
        assert_eq!(s.level_bounds(0, 0), (f64::NEG_INFINITY, -0.3));
        assert_eq!(s.level_bounds(0, 2), (0.1, f64::INFINITY));
    }

    #[test]
    fn binary_start_is_rank_consistent() {
        let schema = vec![
            VariableSpec::new("b", "b", VarType::Binary),
            VariableSpec::new("x", "x", VarType::Continuous),
        ];
        let y = DMatrix::from_row_slice(
            12,
            2,
            &[
                0., 1., 1., 2., 0., 3., 1., 4., 0., 5., 1., 6., 0., 7., 1., 8., 0., 9., 1., 10., 0., 11., 1., 12.,
            ],
        );
        let ds = Dataset::from_matrix(schema, y).unwrap();
        let s = initialize_latent(&ds).unwrap();
        assert_eq!(s.is_latent_column, vec![true, false]);
        let zeros_max = (0..12).step_by(2).map(|r| s.z[(r, 0)]).fold(f64::MIN, f64::max);
        let ones_min = (1..12).step_by(2).map(|r| s.z[(r, 0)]).fold(f64::MAX, f64::min);
        assert!(zeros_max < ones_min);
        assert!(s.is_rank_consistent());
    }

    #[test]
    fn identity_precision_gives_standard_conditionals() {
        // with K = I each cell is N(0,1) truncated to its bounds; a single
        // binary column with one row per level has half-line bounds at
        // the other row's value, so check moments over many sweeps
        let mut s = ordinal_state(&[0.0, 1.0], &[-0.5, 0.5]);
        let k = DMatrix::identity(1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut sum = 0.0;
        let sweeps = 50_000;
        for _ in 0..sweeps {
            resample_latent(&mut s, &k, &mut rng);
            assert!(s.z[(0, 0)] < s.z[(1, 0)]);
            sum += s.z[(1, 0)];
        }
        // stationary law is two iid N(0,1) conditioned on z0 < z1:
        // E[max] = 1/√π
        let expected = 1.0 / std::f64::consts::PI.sqrt();
        assert!((sum / sweeps as f64 - expected).abs() < 0.02);
    }

    #[test]
    fn resampling_is_deterministic_for_a_seed() {
        let y = DMatrix::from_row_slice(6, 2, &[0., 1.2, 1., 0.3, 2., -0.7, 1., 2.2, 0., -1.0, 2., 0.1]);
        let types = [VarType::DiscreteOrdinal, VarType::Continuous];
        let base = LatentState::from_observed(&y, &types).unwrap();
        let k = DMatrix::from_row_slice(2, 2, &[2.0, -0.6, -0.6, 1.5]);
        let run = || {
            let mut s = base.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            for _ in 0..10 {
                resample_latent(&mut s, &k, &mut rng);
            }
            s.z
        };
        assert_eq!(run(), run());
        let mut s = base.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        resample_latent(&mut s, &k, &mut rng);
        assert_eq!(s.z.column(1), base.z.column(1));
    }
}
