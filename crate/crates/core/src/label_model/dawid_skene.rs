use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::VoteMatrix;
use crate::hashing::fnv1a64;
use crate::{Error, Result};

use super::{check_prior, majority_vote, SoftLabels};

pub const ALPHA_MIN: f64 = 0.01;
pub const ALPHA_MAX: f64 = 0.99;
pub const DEFAULT_RESTARTS: usize = 8;

/// Relative log-likelihood gap below which two starts count as tied; of
/// the order of what stopping at `tol` leaves unconverged.
const LL_TIE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct DawidSkeneConfig {
    /// Stop once no parameter moves by more than this.
    pub tol: f64,
    pub max_iter: usize,
    /// Hold π here instead of re-estimating it.
    pub fixed_prior: Option<Vec<f64>>,
    /// Prior for all-abstain rows of the majority-vote initialization.
    pub init_prior: Option<Vec<f64>>,
    pub full_confusion: bool,
    /// Random starts tried after majority vote and its mirror image.
    pub restarts: usize,
    /// Seed for the random starts.
    pub seed: u64,
}

impl Default for DawidSkeneConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 1000,
            fixed_prior: None,
            init_prior: None,
            full_confusion: false,
            restarts: DEFAULT_RESTARTS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DawidSkeneParams {
    pub lf_names: Vec<String>,
    /// P(vote = y | y, vote cast). Under full confusion, the prior-weighted
    /// diagonal of the confusion matrix.
    pub alpha: Vec<f64>,
    /// P(vote cast), independent of the class.
    pub beta: Vec<f64>,
    pub prior: Vec<f64>,
    /// `confusion[j][y][l]` = P(vote = l | y, vote cast), when enabled.
    pub confusion: Option<Vec<Vec<Vec<f64>>>>,
}

impl DawidSkeneParams {
    pub fn k(&self) -> usize {
        self.prior.len()
    }

    fn log_factor(&self, j: usize, y: usize, vote: usize) -> f64 {
        match &self.confusion {
            Some(c) => c[j][y][vote].ln(),
            None if vote == y => self.alpha[j].ln(),
            None => ((1.0 - self.alpha[j]) / (self.k() - 1) as f64).ln(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DawidSkeneFit {
    pub params: DawidSkeneParams,
    pub iterations: usize,
    pub converged: bool,
    /// Observed-data log-likelihood of the initial and each later estimate.
    pub log_likelihood: Vec<f64>,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Posteriors under `params` and the observed-data log-likelihood.
fn e_step(params: &DawidSkeneParams, matrix: &VoteMatrix) -> (Vec<Vec<f64>>, f64) {
    let k = params.k();
    let log_prior: Vec<f64> = params.prior.iter().map(|p| p.ln()).collect();
    let mut ll = 0.0;
    let q = matrix
        .rows
        .iter()
        .map(|row| {
            let mut logs = log_prior.clone();
            for (j, v) in row.iter().enumerate() {
                if let Some(l) = v.label {
                    for (y, lg) in logs.iter_mut().enumerate() {
                        *lg += params.log_factor(j, y, l);
                    }
                }
            }
            let z = log_sum_exp(&logs);
            ll += z;
            let mut post: Vec<f64> = logs.iter().map(|lg| (lg - z).exp()).collect();
            let total: f64 = post.iter().sum();
            post.iter_mut().for_each(|p| *p /= total);
            debug_assert_eq!(post.len(), k);
            post
        })
        .collect();
    (q, ll)
}

/// Maximizes the expected complete-data log-likelihood. `smoothed` adds one
/// pseudo-count per class.
fn m_step(
    q: &[Vec<f64>],
    matrix: &VoteMatrix,
    k: usize,
    fixed_prior: Option<&[f64]>,
    previous: Option<&DawidSkeneParams>,
    full_confusion: bool,
    smoothed: bool,
) -> DawidSkeneParams {
    let n = matrix.n();
    let m = matrix.m();
    let (add, add_k) = if smoothed {
        (1.0, k as f64)
    } else {
        (0.0, 0.0)
    };
    let prior = match fixed_prior {
        Some(p) => p.to_vec(),
        None => (0..k)
            .map(|y| q.iter().map(|r| r[y]).sum::<f64>() / n as f64)
            .collect(),
    };
    let mut alpha = Vec::with_capacity(m);
    let mut beta = Vec::with_capacity(m);
    let mut confusion = full_confusion.then(Vec::new);
    for j in 0..m {
        let covered: Vec<(usize, usize)> = matrix
            .column(j)
            .enumerate()
            .filter_map(|(i, v)| v.label.map(|l| (i, l)))
            .collect();
        beta.push(covered.len() as f64 / n as f64);
        match confusion.as_mut() {
            None => {
                let s: f64 = covered.iter().map(|&(i, l)| q[i][l]).sum();
                let denom = covered.len() as f64 + add_k;
                let a = if denom > 0.0 {
                    (s + add) / denom
                } else {
                    previous.map_or(1.0 / k as f64, |p| p.alpha[j])
                };
                alpha.push(a.clamp(ALPHA_MIN, ALPHA_MAX));
            }
            Some(conf) => {
                let mut cj = vec![vec![0.0; k]; k];
                for y in 0..k {
                    let mut num = vec![add; k];
                    let mut den = add_k;
                    for &(i, l) in &covered {
                        num[l] += q[i][y];
                        den += q[i][y];
                    }
                    let row: Vec<f64> = if den > 0.0 {
                        num.iter()
                            .map(|x| (x / den).clamp(ALPHA_MIN, ALPHA_MAX))
                            .collect()
                    } else {
                        match previous.and_then(|p| p.confusion.as_ref()) {
                            Some(pc) => pc[j][y].clone(),
                            None => vec![1.0 / k as f64; k],
                        }
                    };
                    let total: f64 = row.iter().sum();
                    cj[y] = row.iter().map(|x| x / total).collect();
                }
                alpha.push((0..k).map(|y| prior[y] * cj[y][y]).sum());
                conf.push(cj);
            }
        }
    }
    DawidSkeneParams {
        lf_names: matrix.lf_names.clone(),
        alpha,
        beta,
        prior,
        confusion,
    }
}

/// Largest move of any α, confusion entry or prior entry. The prior counts
/// so a fit with every α at a clamp keeps iterating until π settles.
fn max_change(a: &DawidSkeneParams, b: &DawidSkeneParams) -> f64 {
    let mut d = a
        .alpha
        .iter()
        .zip(&b.alpha)
        .chain(a.prior.iter().zip(&b.prior))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    if let (Some(ca), Some(cb)) = (&a.confusion, &b.confusion) {
        for (x, y) in ca
            .iter()
            .flatten()
            .flatten()
            .zip(cb.iter().flatten().flatten())
        {
            d = d.max((x - y).abs());
        }
    }
    d
}

/// EM for the Dawid-Skene model with abstentions.
///
/// The first start is majority vote; then its mirror image (classes
/// rotated by one) and the posteriors of `restarts` random α draws keyed
/// by `seed` and labeling-function name.
/// Each start runs to convergence and the highest final log-likelihood
/// wins, ties going to the earlier start, so majority vote keeps any
/// optimum it shares with another start. Within a start the first M-step
/// is Laplace smoothed and later M-steps are exact maximizers under the α
/// clamps, so its log-likelihood trace is non-decreasing.
pub fn fit_dawid_skene(
    matrix: &VoteMatrix,
    k: usize,
    config: &DawidSkeneConfig,
) -> Result<DawidSkeneFit> {
    if matrix.m() == 0 {
        return Err(Error::Contract(
            "Dawid-Skene needs at least one labeling function".into(),
        ));
    }
    if matrix.n() == 0 {
        return Err(Error::Contract(
            "Dawid-Skene needs at least one example".into(),
        ));
    }
    let uniform = vec![1.0 / k as f64; k];
    let init_prior = config
        .fixed_prior
        .as_deref()
        .or(config.init_prior.as_deref())
        .unwrap_or(&uniform);
    if init_prior.len() != k {
        return Err(Error::Contract(format!(
            "prior has {} entries for {k} classes",
            init_prior.len()
        )));
    }
    check_prior(init_prior, matrix)?;

    let mv = majority_vote(matrix, init_prior)?.rows;
    let mirror: Vec<Vec<f64>> = mv
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.rotate_right(1);
            r
        })
        .collect();
    let mut best = run_em(&mv, matrix, k, config);
    let mut starts = vec![mirror];
    for r in 0..config.restarts as u64 {
        let params = DawidSkeneParams {
            lf_names: matrix.lf_names.clone(),
            alpha: matrix
                .lf_names
                .iter()
                .map(|name| restart_alpha(config.seed, r, name))
                .collect(),
            beta: vec![1.0; matrix.m()],
            prior: init_prior.to_vec(),
            confusion: None,
        };
        starts.push(e_step(&params, matrix).0);
    }
    for q0 in &starts {
        let fit = run_em(q0, matrix, k, config);
        let (a, b) = (fit.final_ll(), best.final_ll());
        if a - b > LL_TIE * (1.0 + b.abs()) {
            best = fit;
        }
    }
    Ok(best)
}

/// Starting α for one labeling function in restart `r`. Keyed by name so
/// that permuting columns permutes the starts.
fn restart_alpha(seed: u64, r: u64, name: &str) -> f64 {
    let key = seed ^ fnv1a64(name.as_bytes()) ^ r.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    ChaCha8Rng::seed_from_u64(key).random_range(ALPHA_MIN..ALPHA_MAX)
}

/// EM from initial posteriors `q0` until no α moves by more than `tol`.
fn run_em(
    q0: &[Vec<f64>],
    matrix: &VoteMatrix,
    k: usize,
    config: &DawidSkeneConfig,
) -> DawidSkeneFit {
    let fixed = config.fixed_prior.as_deref();
    let mut params = m_step(q0, matrix, k, fixed, None, config.full_confusion, true);
    let (mut q, ll) = e_step(&params, matrix);
    let mut trace = vec![ll];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iter {
        let next = m_step(
            &q,
            matrix,
            k,
            fixed,
            Some(&params),
            config.full_confusion,
            false,
        );
        let delta = max_change(&params, &next);
        params = next;
        let (q_next, ll) = e_step(&params, matrix);
        q = q_next;
        trace.push(ll);
        iterations += 1;
        if delta < config.tol {
            converged = true;
            break;
        }
    }
    DawidSkeneFit {
        params,
        iterations,
        converged,
        log_likelihood: trace,
    }
}

impl DawidSkeneFit {
    pub fn final_ll(&self) -> f64 {
        *self
            .log_likelihood
            .last()
            .expect("trace holds the initial estimate")
    }
}

/// One E-step with frozen parameters.
pub fn infer(params: &DawidSkeneParams, matrix: &VoteMatrix) -> Result<SoftLabels> {
    if params.lf_names != matrix.lf_names {
        return Err(Error::Contract(format!(
            "parameters fitted for {:?}, matrix has {:?}",
            params.lf_names, matrix.lf_names
        )));
    }
    check_prior(&params.prior, matrix)?;
    let (rows, _) = e_step(params, matrix);
    SoftLabels::new(matrix.example_ids.clone(), rows, "ds", params.prior.clone())
}

/// Observed-data log-likelihood of `matrix` under `params`, excluding the
/// abstention terms (constant in α and π).
pub fn log_likelihood(params: &DawidSkeneParams, matrix: &VoteMatrix) -> f64 {
    e_step(params, matrix).1
}
