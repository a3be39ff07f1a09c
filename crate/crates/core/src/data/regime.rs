//! Regime-switching symbol source: a slow hidden Markov regime picks which
//! emission distribution produces each fast symbol. The exact forward
//! algorithm gives the per-token likelihood floor any model can reach.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::tensor::split_rng;

/// Minimum pairwise total-variation distance between generated emission rows.
pub const MIN_REGIME_SEPARATION: f64 = 0.2;
const DIRICHLET_CONCENTRATION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegimeParams {
    pub n_regimes: usize,
    pub n_symbols: usize,
    pub switch_prob: f64,
    pub seed: u64,
}

impl Default for RegimeParams {
    fn default() -> Self {
        Self { n_regimes: 4, n_symbols: 8, switch_prob: 1.0 / 64.0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeSource {
    switch_prob: f64,
    emissions: Vec<Vec<f64>>,
    seed: u64,
}

fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

impl RegimeSource {
    /// Draws emission rows from a symmetric Dirichlet until every pair of
    /// rows is at least [`MIN_REGIME_SEPARATION`] apart in total variation.
    pub fn generate(params: &RegimeParams) -> Result<Self> {
        let RegimeParams { n_regimes, n_symbols, switch_prob, seed } = *params;
        if n_regimes == 0 || n_symbols < 2 {
            return config_err("need at least one regime and two symbols");
        }
        let gamma = Gamma::new(DIRICHLET_CONCENTRATION, 1.0).expect("valid gamma parameters");
        let mut rng = split_rng(seed, "regime.emissions");
        for _ in 0..10_000 {
            let emissions: Vec<Vec<f64>> = (0..n_regimes)
                .map(|_| {
                    let raw: Vec<f64> = (0..n_symbols).map(|_| gamma.sample(&mut rng)).collect();
                    let z: f64 = raw.iter().sum();
                    raw.iter().map(|v| v / z).collect()
                })
                .collect();
            let src = Self::with_emissions(emissions, switch_prob, seed)?;
            if src.min_separation() >= MIN_REGIME_SEPARATION {
                return Ok(src);
            }
        }
        config_err(format!("could not draw {n_regimes} separated regimes over {n_symbols} symbols"))
    }

    /// Source with explicit emission rows (each must sum to 1).
    pub fn with_emissions(emissions: Vec<Vec<f64>>, switch_prob: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&switch_prob) {
            return config_err(format!("switch probability {switch_prob} outside [0, 1]"));
        }
        let Some(s) = emissions.first().map(Vec::len) else {
            return config_err("no regimes given");
        };
        for (r, row) in emissions.iter().enumerate() {
            if row.len() != s || row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return config_err(format!("emission row {r} is not a distribution over {s} symbols"));
            }
            if (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return config_err(format!("emission row {r} does not sum to 1"));
            }
        }
        Ok(Self { switch_prob, emissions, seed })
    }

    pub fn n_regimes(&self) -> usize {
        self.emissions.len()
    }

    pub fn n_symbols(&self) -> usize {
        self.emissions[0].len()
    }

    pub fn switch_prob(&self) -> f64 {
        self.switch_prob
    }

    pub fn emissions(&self) -> &[Vec<f64>] {
        &self.emissions
    }

    /// Smallest pairwise total-variation distance between regimes
    /// (`+∞` with a single regime).
    pub fn min_separation(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.emissions.len() {
            for j in i + 1..self.emissions.len() {
                best = best.min(total_variation(&self.emissions[i], &self.emissions[j]));
            }
        }
        best
    }

    /// Probability of moving from regime `from` to regime `to`.
    pub fn transition(&self, from: usize, to: usize) -> f64 {
        let r = self.n_regimes();
        if r == 1 {
            1.0
        } else if from == to {
            1.0 - self.switch_prob
        } else {
            self.switch_prob / (r - 1) as f64
        }
    }

    /// Samples `length` symbols; returns `(tokens, hidden regimes)`.
    /// `stream` selects an independent sample path under the same source.
    pub fn generate_stream(&self, length: usize, stream: u64) -> (Vec<usize>, Vec<usize>) {
        let mut rng = split_rng(self.seed, &format!("regime.stream.{stream}"));
        let r = self.n_regimes();
        let mut state = rng.random_range(0..r);
        let mut tokens = Vec::with_capacity(length);
        let mut states = Vec::with_capacity(length);
        for t in 0..length {
            if t > 0 && r > 1 && rng.random::<f64>() < self.switch_prob {
                let other = rng.random_range(0..r - 1);
                state = if other >= state { other + 1 } else { other };
            }
            let u: f64 = rng.random();
            let row = &self.emissions[state];
            let mut acc = 0.0;
            let mut symbol = row.len() - 1;
            for (s, &p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    symbol = s;
                    break;
                }
            }
            tokens.push(symbol);
            states.push(state);
        }
        (tokens, states)
    }

    /// Exact negative log-likelihood per token (nats) under this source, via
    /// the scaled forward algorithm with a uniform initial regime.
    pub fn oracle_nll(&self, tokens: &[usize]) -> Result<f64> {
        if tokens.is_empty() {
            return Ok(0.0);
        }
        Ok(self.total_nll(tokens)? / tokens.len() as f64)
    }

    /// Mean NLL of `window[1..]` given everything before it inside the
    /// window: the best any predictor limited to that window can do.
    pub fn conditional_nll(&self, window: &[usize]) -> Result<f64> {
        if window.len() < 2 {
            return config_err("a window needs at least two tokens");
        }
        Ok((self.total_nll(window)? - self.total_nll(&window[..1])?) / (window.len() - 1) as f64)
    }

    /// Total `−ln p(tokens)`.
    pub fn total_nll(&self, tokens: &[usize]) -> Result<f64> {
        if tokens.is_empty() {
            return Ok(0.0);
        }
        let r = self.n_regimes();
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.n_symbols()) {
            return config_err(format!("symbol {bad} outside alphabet of {}", self.n_symbols()));
        }
        let mut alpha: Vec<f64> = (0..r).map(|k| self.emissions[k][tokens[0]] / r as f64).collect();
        let mut log_lik = 0.0;
        let mut next = vec![0.0; r];
        for (t, &tok) in tokens.iter().enumerate() {
            if t > 0 {
                for (to, slot) in next.iter_mut().enumerate() {
                    let prior: f64 = (0..r).map(|from| alpha[from] * self.transition(from, to)).sum();
                    *slot = prior * self.emissions[to][tok];
                }
                std::mem::swap(&mut alpha, &mut next);
            }
            let scale: f64 = alpha.iter().sum();
            if scale <= 0.0 {
                return Ok(f64::INFINITY);
            }
            log_lik += scale.ln();
            alpha.iter_mut().for_each(|a| *a /= scale);
        }
        Ok(-log_lik)
    }
}

/// Plug-in unigram entropy (nats) of a token stream.
pub fn unigram_entropy(tokens: &[usize]) -> f64 {
    let max = tokens.iter().copied().max().unwrap_or(0);
    let mut counts = vec![0usize; max + 1];
    tokens.iter().for_each(|&t| counts[t] += 1);
    let n = tokens.len() as f64;
    counts.iter().filter(|&&c| c > 0).map(|&c| {
        let p = c as f64 / n;
        -p * p.ln()
    }).sum()
}
