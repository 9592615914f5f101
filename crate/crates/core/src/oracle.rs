//! Brute-force enumeration oracle.
//!
//! Every exact quantity the trellis passes compute is reproduced here by
//! direct summation over words, with no shared code path: posteriors sum
//! over the codeword set, discriminated quantities sum over all `2^n`
//! binary words. Block lengths are hard-guarded.

use crate::code::{bpsk, CoupledCode, LinearCode};
use crate::passes::{sym_index, DiscriminatorState};
use crate::{Error, Result};
use std::collections::HashMap;

pub const ENUMERATION_GUARD: usize = 24;

/// All `2^n` BPSK words of length `n` (guarded).
pub fn all_words(n: usize) -> Result<Vec<Vec<i8>>> {
    if n > ENUMERATION_GUARD {
        return Err(Error::EnumerationGuard(n, ENUMERATION_GUARD));
    }
    Ok((0u64..(1 << n))
        .map(|bits| {
            (0..n)
                .map(|i| if (bits >> i) & 1 == 1 { -1i8 } else { 1 })
                .collect()
        })
        .collect())
}

/// Correlation `Σ g_i s_i` of a word with a gain vector.
pub fn correlation(word: &[i8], gain: &[f64]) -> f64 {
    word.iter().zip(gain).map(|(&s, g)| s as f64 * g).sum()
}

/// `exp2` weights of the words under a gain vector, normalized to sum 1.
pub fn normalized_weights(words: &[Vec<i8>], gain: &[f64]) -> Vec<f64> {
    let exps: Vec<f64> = words.iter().map(|w| correlation(w, gain)).collect();
    let peak = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = exps.iter().map(|e| (e - peak).exp2()).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    weights
}

/// Per-position half log2-ratios of a weighted word set.
pub fn symbol_half_ratios(words: &[Vec<i8>], weights: &[f64]) -> Vec<f64> {
    let n = words.first().map_or(0, |w| w.len());
    (0..n)
        .map(|i| {
            let mut mass = [0.0f64; 2];
            for (w, &wt) in words.iter().zip(weights) {
                mass[sym_index(w[i])] += wt;
            }
            crate::trellis::half_log2_ratio(mass[0], mass[1])
        })
        .collect()
}

/// Exhaustive posteriors of a coupled code given normalized channel ratios.
#[derive(Debug, Clone)]
pub struct OracleResult {
    /// Maximum-correlation codeword (the ML word).
    pub ml_word: Vec<i8>,
    pub ml_metric: f64,
    /// Number of codewords sharing the maximum metric exactly.
    pub ml_ties: usize,
    /// `(codeword, posterior probability)` over the overall code.
    pub word_posterior: Vec<(Vec<i8>, f64)>,
    /// Overall symbol half log-ratios `L_i`.
    pub symbol_l: Vec<f64>,
    pub symbol_posterior: Vec<[f64; 2]>,
}

/// Enumerate the coupled code and compute exact word and symbol
/// posteriors under `P(s|r) ∝ exp2(Σ r_i s_i)`.
pub fn oracle(code: &CoupledCode, r: &[f64]) -> Result<OracleResult> {
    if code.n() > ENUMERATION_GUARD {
        return Err(Error::EnumerationGuard(code.n(), ENUMERATION_GUARD));
    }
    if r.len() != code.n() {
        return Err(Error::Dimension("ratio vector length != n".into()));
    }
    let words: Vec<Vec<i8>> = code.codewords()?.iter().map(|bits| bpsk(bits)).collect();
    oracle_over_words(words, r)
}

/// Same as [`oracle`] for a plain linear code.
pub fn oracle_linear(code: &LinearCode, g: &[f64]) -> Result<OracleResult> {
    if code.n() > ENUMERATION_GUARD {
        return Err(Error::EnumerationGuard(code.n(), ENUMERATION_GUARD));
    }
    let words: Vec<Vec<i8>> = code.codewords()?.iter().map(|bits| bpsk(bits)).collect();
    oracle_over_words(words, g)
}

fn oracle_over_words(words: Vec<Vec<i8>>, r: &[f64]) -> Result<OracleResult> {
    if words.is_empty() {
        return Err(Error::Internal("empty word set".into()));
    }
    let weights = normalized_weights(&words, r);
    let metrics: Vec<f64> = words.iter().map(|w| correlation(w, r)).collect();
    let ml_metric = metrics.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ml_ties = metrics.iter().filter(|&&m| m == ml_metric).count();
    let ml_idx = metrics.iter().position(|&m| m == ml_metric).unwrap();
    let symbol_l = symbol_half_ratios(&words, &weights);
    let n = words[0].len();
    let mut symbol_posterior = vec![[0.0f64; 2]; n];
    for (w, &wt) in words.iter().zip(&weights) {
        for i in 0..n {
            symbol_posterior[i][sym_index(w[i])] += wt;
        }
    }
    Ok(OracleResult {
        ml_word: words[ml_idx].clone(),
        ml_metric,
        ml_ties,
        word_posterior: words.into_iter().zip(weights).collect(),
        symbol_l,
        symbol_posterior,
    })
}

/// Discriminated quantities by direct summation over all of `S`
/// (definitions evaluated verbatim, independent of any trellis).
#[derive(Debug, Clone)]
pub struct DiscrimOracle {
    /// Discriminated half log-ratios `L⊗_i`.
    pub l: Vec<f64>,
    /// Discriminated symbol posteriors per position.
    pub posterior: Vec<[f64; 2]>,
    /// Word-level discriminated distribution over active keys, sorted.
    pub word_u: Vec<(Vec<i64>, f64)>,
}

/// Evaluate the discriminated symbol probabilities and the discriminated
/// distribution of `u` for an integer-grid discriminator by summing over
/// all `2^n` words.
pub fn oracle_discriminated(
    code: &CoupledCode,
    m: &DiscriminatorState,
) -> Result<DiscrimOracle> {
    let n = code.n();
    if m.n() != n {
        return Err(Error::Dimension("discriminator length != n".into()));
    }
    let steps = m
        .lattice()
        .ok_or_else(|| Error::NotOnLattice("oracle requires a declared lattice".into()))?
        .to_vec();
    let active: Vec<usize> = m
        .vectors()
        .enumerate()
        .filter(|(_, v)| v.iter().any(|&x| x != 0.0))
        .map(|(idx, _)| idx)
        .collect();
    let vectors: Vec<&[f64]> = m.vectors().collect();
    let words = all_words(n)?;
    let nc = code.num_constituents();

    let key_of = |w: &[i8]| -> Vec<i64> {
        active
            .iter()
            .map(|&l| {
                let u: f64 = w.iter().zip(vectors[l]).map(|(&s, v)| s as f64 * v).sum();
                (u / steps[l]).round() as i64
            })
            .collect()
    };

    // Membership masks per constituent.
    let member: Vec<Vec<bool>> = (0..nc)
        .map(|l| {
            words
                .iter()
                .map(|w| {
                    let bits: Vec<u8> = code
                        .permutation(l)
                        .iter()
                        .map(|&p| u8::from(w[p] < 0))
                        .collect();
                    code.constituent(l).is_codeword(&bits)
                })
                .collect()
        })
        .collect();

    // Per-measure weights: constituents exclude their own transfer vector.
    let gains: Vec<Vec<f64>> = (0..nc)
        .map(|l| m.measure_gain(Some(l)))
        .chain(std::iter::once(m.measure_gain(None)))
        .collect();
    let weights: Vec<Vec<f64>> = gains
        .iter()
        .map(|g| normalized_weights(&words, g))
        .collect();

    // Word-level maps per measure.
    let mut word_maps: Vec<HashMap<Vec<i64>, f64>> = vec![HashMap::new(); nc + 1];
    for (wi, w) in words.iter().enumerate() {
        let key = key_of(w);
        for l in 0..nc {
            if member[l][wi] {
                *word_maps[l].entry(key.clone()).or_insert(0.0) += weights[l][wi];
            }
        }
        *word_maps[nc].entry(key).or_insert(0.0) += weights[nc][wi];
    }
    let mut word_u: Vec<(Vec<i64>, f64)> = Vec::new();
    let mut total = 0.0;
    for (key, &den) in &word_maps[nc] {
        if den == 0.0 {
            continue;
        }
        let mut num = 1.0f64;
        for map in word_maps.iter().take(nc) {
            num *= map.get(key).copied().unwrap_or(0.0);
        }
        let v = num / den.powi(nc as i32 - 1);
        if v > 0.0 {
            word_u.push((key.clone(), v));
            total += v;
        }
    }
    for (_, v) in &mut word_u {
        *v /= total;
    }
    word_u.sort_by(|a, b| a.0.cmp(&b.0));

    // Symbol-conditioned version.
    let mut l_out = Vec::with_capacity(n);
    let mut posterior = Vec::with_capacity(n);
    for i in 0..n {
        let mut mass = [0.0f64; 2];
        for x in [1i8, -1] {
            let mut maps: Vec<HashMap<Vec<i64>, f64>> = vec![HashMap::new(); nc + 1];
            for (wi, w) in words.iter().enumerate() {
                if w[i] != x {
                    continue;
                }
                let key = key_of(w);
                for l in 0..nc {
                    if member[l][wi] {
                        *maps[l].entry(key.clone()).or_insert(0.0) += weights[l][wi];
                    }
                }
                *maps[nc].entry(key).or_insert(0.0) += weights[nc][wi];
            }
            let mut acc = 0.0;
            for (key, &den) in &maps[nc] {
                if den == 0.0 {
                    continue;
                }
                let mut num = 1.0f64;
                for map in maps.iter().take(nc) {
                    num *= map.get(key).copied().unwrap_or(0.0);
                }
                acc += num / den.powi(nc as i32 - 1);
            }
            mass[sym_index(x)] = acc;
        }
        let total = mass[0] + mass[1];
        l_out.push(crate::trellis::half_log2_ratio(mass[0], mass[1]));
        posterior.push([mass[0] / total, mass[1] / total]);
    }
    Ok(DiscrimOracle {
        l: l_out,
        posterior,
        word_u,
    })
}
