use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::attribution::grouping::Grouping;
use crate::attribution::explained_column;
use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::models::Model;

/// Largest group count [`exact_shapley`] will enumerate.
pub const MAX_EXACT_GROUPS: usize = 12;

const ROWS_PER_PASS: usize = 2048;

/// Evaluates the explained output column for every row of a flat
/// `[rows, T, B]` buffer.
fn eval_rows(model: &Model, rows: &[f32], column: usize) -> Result<Vec<f64>> {
    let (t, b) = model.input_shape();
    let len = t * b;
    let mut out = Vec::with_capacity(rows.len() / len);
    let m = model.output_dim();
    for chunk in rows.chunks(ROWS_PER_PASS * len) {
        let n = chunk.len() / len;
        let y = model.predict(&Tensor::new(vec![n, t, b], chunk.to_vec())?)?;
        out.extend(y.data().chunks_exact(m).map(|r| r[column] as f64));
    }
    Ok(out)
}

/// Permutation-sampling estimate for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SvsEstimate {
    pub scores: Vec<f64>,
    /// Standard error of each score (sample std of the marginal
    /// contributions over √permutations).
    pub std_errors: Vec<f64>,
}

/// Shapley value sampling over feature groups.
///
/// Each sampled permutation adds the groups of `x` one at a time on top of
/// `baseline`; a group's score is its mean marginal change of the explained
/// output.
pub fn svs_sample(
    model: &Model,
    x: &[f32],
    baseline: &[f32],
    grouping: &Grouping,
    n_permutations: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SvsEstimate> {
    check_lengths(model, x, baseline)?;
    let column = explained_column(model, x)?;
    let g = grouping.len();
    let len = x.len();
    let mut mean = vec![0f64; g];
    let mut m2 = vec![0f64; g];
    let mut seen = 0usize;
    let mut order: Vec<usize> = (0..g).collect();

    let perms_per_pass = (ROWS_PER_PASS / (g + 1)).max(1);
    let mut remaining = n_permutations;
    while remaining > 0 {
        let batch = remaining.min(perms_per_pass);
        remaining -= batch;
        let mut rows = Vec::with_capacity(batch * (g + 1) * len);
        let mut orders = Vec::with_capacity(batch);
        for _ in 0..batch {
            order.shuffle(rng);
            let mut current = baseline.to_vec();
            rows.extend_from_slice(&current);
            for &grp in &order {
                for &c in &grouping.cells[grp] {
                    current[c] = x[c];
                }
                rows.extend_from_slice(&current);
            }
            orders.push(order.clone());
        }
        let values = eval_rows(model, &rows, column)?;
        for (p, perm) in orders.iter().enumerate() {
            seen += 1;
            let v = &values[p * (g + 1)..(p + 1) * (g + 1)];
            for (j, &grp) in perm.iter().enumerate() {
                let delta = v[j + 1] - v[j];
                let d = delta - mean[grp];
                mean[grp] += d / seen as f64;
                m2[grp] += d * (delta - mean[grp]);
            }
        }
    }
    let std_errors = m2
        .iter()
        .map(|&s| {
            if seen > 1 {
                (s / (seen - 1) as f64 / seen as f64).sqrt()
            } else {
                0.0
            }
        })
        .collect();
    Ok(SvsEstimate {
        scores: mean,
        std_errors,
    })
}

/// Exact group Shapley values by enumerating all `2^G` coalitions.
pub fn exact_shapley(
    model: &Model,
    x: &[f32],
    baseline: &[f32],
    grouping: &Grouping,
) -> Result<Vec<f64>> {
    check_lengths(model, x, baseline)?;
    let g = grouping.len();
    if g > MAX_EXACT_GROUPS {
        return Err(Error::Attribution(format!(
            "exact Shapley enumerates 2^{g} coalitions; at most {MAX_EXACT_GROUPS} groups allowed"
        )));
    }
    let column = explained_column(model, x)?;
    let n_coalitions = 1usize << g;
    let mut rows = Vec::with_capacity(n_coalitions * x.len());
    for mask in 0..n_coalitions {
        let mut row = baseline.to_vec();
        for (grp, cells) in grouping.cells.iter().enumerate() {
            if mask & (1 << grp) != 0 {
                for &c in cells {
                    row[c] = x[c];
                }
            }
        }
        rows.extend_from_slice(&row);
    }
    let value = eval_rows(model, &rows, column)?;

    // weight(s) = s!(G−s−1)!/G!
    let fact: Vec<f64> = (0..=g)
        .scan(1f64, |acc, k| {
            if k > 0 {
                *acc *= k as f64;
            }
            Some(*acc)
        })
        .collect();
    let weight = |s: usize| fact[s] * fact[g - s - 1] / fact[g];
    let mut phi = vec![0f64; g];
    for mask in 0..n_coalitions {
        let size = mask.count_ones() as usize;
        for (i, p) in phi.iter_mut().enumerate() {
            if mask & (1 << i) == 0 {
                *p += weight(size) * (value[mask | (1 << i)] - value[mask]);
            }
        }
    }
    Ok(phi)
}

fn check_lengths(model: &Model, x: &[f32], baseline: &[f32]) -> Result<()> {
    let (t, b) = model.input_shape();
    if x.len() != t * b || baseline.len() != t * b {
        return Err(Error::Shape(format!(
            "sample ({}) and baseline ({}) must both hold T·B = {} values",
            x.len(),
            baseline.len(),
            t * b
        )));
    }
    Ok(())
}
