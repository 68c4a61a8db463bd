//! Discrete hidden Markov models with exact inference.
//!
//! All likelihood computation is carried out with per-step scaling (forward,
//! Baum-Welch) or in the log domain (Viterbi), so long sequences do not
//! underflow.

// Dynamic-programming recurrences read clearest with explicit indices.
#![allow(clippy::needless_range_loop)]

use crate::error::{GarError, Result};

const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// A discrete HMM: `N` hidden states over a vocabulary of `M` symbols, with a
/// row-stochastic transition matrix `A` (`N x N`), emission matrix `B`
/// (`N x M`), and initial distribution `pi`. Immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct HmmModel {
    n: usize,
    m: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    pi: Vec<f64>,
    state_labels: Vec<String>,
}

impl HmmModel {
    pub fn new(
        n: usize,
        m: usize,
        a: Vec<f64>,
        b: Vec<f64>,
        pi: Vec<f64>,
        state_labels: Vec<String>,
    ) -> Result<HmmModel> {
        if n < 1 {
            return Err(GarError::Validation("model needs at least one state".into()));
        }
        if m < 2 {
            return Err(GarError::Validation(
                "vocabulary must hold at least two symbols".into(),
            ));
        }
        if a.len() != n * n || b.len() != n * m || pi.len() != n || state_labels.len() != n {
            return Err(GarError::Validation("matrix dimensions do not match".into()));
        }
        check_rows("A", &a, n, n)?;
        check_rows("B", &b, n, m)?;
        check_rows("pi", &pi, 1, n)?;
        Ok(HmmModel {
            n,
            m,
            a,
            b,
            pi,
            state_labels,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn vocab_size(&self) -> usize {
        self.m
    }

    pub fn transition(&self, from: usize, to: usize) -> f64 {
        self.a[from * self.n + to]
    }

    pub fn emission(&self, state: usize, symbol: usize) -> f64 {
        self.b[state * self.m + symbol]
    }

    pub fn initial(&self, state: usize) -> f64 {
        self.pi[state]
    }

    pub fn state_labels(&self) -> &[String] {
        &self.state_labels
    }

    pub fn transition_matrix(&self) -> &[f64] {
        &self.a
    }

    pub fn emission_matrix(&self) -> &[f64] {
        &self.b
    }

    pub fn initial_distribution(&self) -> &[f64] {
        &self.pi
    }

    fn check_codes(&self, codes: &[usize]) -> Result<()> {
        if codes.is_empty() {
            return Err(GarError::Domain("empty observation sequence".into()));
        }
        if let Some(&bad) = codes.iter().find(|&&c| c >= self.m) {
            return Err(GarError::Domain(format!(
                "symbol code {bad} exceeds vocabulary size {}",
                self.m
            )));
        }
        Ok(())
    }

    /// Log of the total probability of the sequence, summed over all state
    /// paths. Returns negative infinity when the sequence is impossible under
    /// the model (a zero-probability symbol), never underflows otherwise.
    pub fn forward_log_likelihood(&self, codes: &[usize]) -> Result<f64> {
        self.check_codes(codes)?;
        let mut alpha = vec![0.0; self.n];
        let mut log_likelihood = 0.0;
        for (t, &code) in codes.iter().enumerate() {
            let mut next = vec![0.0; self.n];
            if t == 0 {
                for i in 0..self.n {
                    next[i] = self.pi[i] * self.emission(i, code);
                }
            } else {
                for j in 0..self.n {
                    let mut acc = 0.0;
                    for i in 0..self.n {
                        acc += alpha[i] * self.transition(i, j);
                    }
                    next[j] = acc * self.emission(j, code);
                }
            }
            let scale: f64 = next.iter().sum();
            if scale <= 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            for v in &mut next {
                *v /= scale;
            }
            log_likelihood += scale.ln();
            alpha = next;
        }
        Ok(log_likelihood)
    }

    /// The state path maximizing the joint probability of path and sequence,
    /// with its log score. Ties break toward the lower state index.
    pub fn viterbi(&self, codes: &[usize]) -> Result<(Vec<usize>, f64)> {
        self.check_codes(codes)?;
        let t_len = codes.len();
        let mut delta = vec![f64::NEG_INFINITY; self.n];
        let mut backptr = vec![vec![0usize; self.n]; t_len];
        for i in 0..self.n {
            delta[i] = self.pi[i].ln() + self.emission(i, codes[0]).ln();
        }
        for t in 1..t_len {
            let mut next = vec![f64::NEG_INFINITY; self.n];
            for j in 0..self.n {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = 0;
                for i in 0..self.n {
                    let cand = delta[i] + self.transition(i, j).ln();
                    if cand > best {
                        best = cand;
                        best_i = i;
                    }
                }
                next[j] = best + self.emission(j, codes[t]).ln();
                backptr[t][j] = best_i;
            }
            delta = next;
        }
        let mut best_state = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (i, &score) in delta.iter().enumerate() {
            if score > best_score {
                best_score = score;
                best_state = i;
            }
        }
        let mut path = vec![0usize; t_len];
        path[t_len - 1] = best_state;
        for t in (1..t_len).rev() {
            path[t - 1] = backptr[t][path[t]];
        }
        Ok((path, best_score))
    }
}

fn check_rows(name: &str, data: &[f64], rows: usize, cols: usize) -> Result<()> {
    for r in 0..rows {
        let row = &data[r * cols..(r + 1) * cols];
        if row.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(GarError::Validation(format!(
                "{name} row {r} contains a negative or non-finite entry"
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(GarError::Validation(format!(
                "{name} row {r} sums to {sum}, not 1"
            )));
        }
    }
    Ok(())
}

/// Result of Baum-Welch re-estimation.
#[derive(Clone, Debug)]
pub struct BaumWelchOutcome {
    pub model: HmmModel,
    /// Total log-likelihood of the training sequences before each iteration,
    /// plus one final entry for the returned model. Non-decreasing.
    pub log_likelihoods: Vec<f64>,
    pub iterations: usize,
}

/// Expectation-maximization re-estimation of a model on one or more coded
/// sequences. Stops after `max_iter` iterations or when the total
/// log-likelihood improves by less than `tol`. Row-stochasticity is preserved
/// after every iteration; states or transitions the data never touches keep
/// their current parameters.
pub fn baum_welch(
    model: &HmmModel,
    sequences: &[Vec<usize>],
    max_iter: usize,
    tol: f64,
) -> Result<BaumWelchOutcome> {
    if sequences.is_empty() || sequences.iter().any(Vec::is_empty) {
        return Err(GarError::Domain(
            "baum_welch needs at least one nonempty sequence".into(),
        ));
    }
    if max_iter < 1 {
        return Err(GarError::Domain("max_iter must be at least 1".into()));
    }
    if tol.is_nan() || tol <= 0.0 {
        return Err(GarError::Domain("tol must be positive".into()));
    }
    for seq in sequences {
        model.check_codes(seq)?;
    }

    let n = model.n;
    let m = model.m;
    let mut current = model.clone();
    let mut lls = vec![total_log_likelihood(&current, sequences)?];
    let mut iterations = 0;

    for _ in 0..max_iter {
        let mut a_num = vec![0.0; n * n];
        let mut a_den = vec![0.0; n];
        let mut b_num = vec![0.0; n * m];
        let mut b_den = vec![0.0; n];
        let mut pi_acc = vec![0.0; n];

        for seq in sequences {
            accumulate(&current, seq, &mut a_num, &mut a_den, &mut b_num, &mut b_den, &mut pi_acc)?;
        }

        let mut a = current.a.clone();
        for i in 0..n {
            if a_den[i] > 0.0 {
                for j in 0..n {
                    a[i * n + j] = a_num[i * n + j] / a_den[i];
                }
                normalize_row(&mut a[i * n..(i + 1) * n]);
            }
        }
        let mut b = current.b.clone();
        for i in 0..n {
            if b_den[i] > 0.0 {
                for k in 0..m {
                    b[i * m + k] = b_num[i * m + k] / b_den[i];
                }
                normalize_row(&mut b[i * m..(i + 1) * m]);
            }
        }
        let mut pi = vec![0.0; n];
        for i in 0..n {
            pi[i] = pi_acc[i] / sequences.len() as f64;
        }
        normalize_row(&mut pi);

        current = HmmModel::new(n, m, a, b, pi, current.state_labels.clone())?;
        iterations += 1;
        let ll = total_log_likelihood(&current, sequences)?;
        let improved = ll - lls.last().copied().unwrap_or(f64::NEG_INFINITY);
        lls.push(ll);
        if improved.abs() < tol {
            break;
        }
    }

    Ok(BaumWelchOutcome {
        model: current,
        log_likelihoods: lls,
        iterations,
    })
}

fn total_log_likelihood(model: &HmmModel, sequences: &[Vec<usize>]) -> Result<f64> {
    let mut total = 0.0;
    for seq in sequences {
        let ll = model.forward_log_likelihood(seq)?;
        if ll == f64::NEG_INFINITY {
            return Err(GarError::Domain(
                "a training sequence has zero probability under the model".into(),
            ));
        }
        total += ll;
    }
    Ok(total)
}

fn normalize_row(row: &mut [f64]) {
    let sum: f64 = row.iter().sum();
    if sum > 0.0 {
        for v in row {
            *v /= sum;
        }
    }
}

/// Scaled forward-backward pass accumulating the expected-count statistics
/// for one sequence.
#[allow(clippy::too_many_arguments)]
fn accumulate(
    model: &HmmModel,
    seq: &[usize],
    a_num: &mut [f64],
    a_den: &mut [f64],
    b_num: &mut [f64],
    b_den: &mut [f64],
    pi_acc: &mut [f64],
) -> Result<()> {
    let n = model.n;
    let m = model.m;
    let t_len = seq.len();

    // Scaled forward.
    let mut alphas = vec![vec![0.0; n]; t_len];
    for (t, &code) in seq.iter().enumerate() {
        for j in 0..n {
            alphas[t][j] = if t == 0 {
                model.pi[j] * model.emission(j, code)
            } else {
                (0..n)
                    .map(|i| alphas[t - 1][i] * model.transition(i, j))
                    .sum::<f64>()
                    * model.emission(j, code)
            };
        }
        let scale: f64 = alphas[t].iter().sum();
        if scale <= 0.0 {
            return Err(GarError::Domain(
                "a training sequence has zero probability under the model".into(),
            ));
        }
        for v in &mut alphas[t] {
            *v /= scale;
        }
    }

    // Scaled backward (normalized per step; scale constants cancel below).
    let mut betas = vec![vec![0.0; n]; t_len];
    betas[t_len - 1] = vec![1.0; n];
    for t in (0..t_len - 1).rev() {
        for i in 0..n {
            betas[t][i] = (0..n)
                .map(|j| model.transition(i, j) * model.emission(j, seq[t + 1]) * betas[t + 1][j])
                .sum();
        }
        let scale: f64 = betas[t].iter().sum();
        if scale > 0.0 {
            for v in &mut betas[t] {
                *v /= scale;
            }
        }
    }

    // Per-step posteriors, normalized locally.
    let mut gammas = vec![vec![0.0; n]; t_len];
    for t in 0..t_len {
        for i in 0..n {
            gammas[t][i] = alphas[t][i] * betas[t][i];
        }
        normalize_row(&mut gammas[t]);
    }

    for i in 0..n {
        pi_acc[i] += gammas[0][i];
    }
    for t in 0..t_len {
        for i in 0..n {
            b_num[i * m + seq[t]] += gammas[t][i];
            b_den[i] += gammas[t][i];
        }
    }
    for t in 0..t_len - 1 {
        let mut xi = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                xi[i * n + j] = alphas[t][i]
                    * model.transition(i, j)
                    * model.emission(j, seq[t + 1])
                    * betas[t + 1][j];
            }
        }
        normalize_row(&mut xi);
        for i in 0..n {
            for j in 0..n {
                a_num[i * n + j] += xi[i * n + j];
                a_den[i] += xi[i * n + j];
            }
        }
    }
    Ok(())
}
