//! Exact discriminated belief propagation.
//!
//! The discriminated posterior of a coupled code replaces the plain
//! product of constituent beliefs by a correlation-resolved ratio: per
//! symbol position the joint distributions of `u = (u_0, u_1, ...)` under
//! each constituent measure are combined cellwise as `Π_l P^(l) / P^(N-1)`
//! and then summed over the grid. On integer lattices the computation is
//! exact. The hard-decision iteration drives the transfer vector to a
//! fixed point `w_i = sign(L⊗_i)`, with erasure and two-sided variants.

use crate::passes::{
    joint_distribution_exact, word_joint_exact, DiscriminatorState, ExactJoint, KeyDeltas,
    UMap, DEFAULT_GRID_CAP,
};
use crate::trellis::{half_log2_ratio, CoupledTrellises, GainTable};
use crate::{Error, Result};
use std::collections::HashSet;

/// `tanh` base 2, saturating on infinities.
pub fn tanh2(x: f64) -> f64 {
    if x.is_infinite() {
        x.signum()
    } else {
        (x * std::f64::consts::LN_2).tanh()
    }
}

/// `log2(2^v + 2^-v)`, stable for large arguments.
fn softplus2_sym(v: f64) -> f64 {
    let a = v.abs();
    if a > 52.0 {
        a
    } else {
        a + (1.0 + (-2.0 * a).exp2()).log2()
    }
}

/// One term of the independence-form cross entropy:
/// `log2(2^v + 2^-v) - v·tanh2(l)`.
pub fn cross_entropy_term(v: f64, l: f64) -> f64 {
    let t = tanh2(l);
    if v.is_infinite() {
        return if v.signum() == t && t.abs() == 1.0 {
            0.0
        } else {
            f64::INFINITY
        };
    }
    softplus2_sym(v) - v * t
}

/// Independence-form cross entropy `Σ_i log2(2^{v_i}+2^{-v_i}) - v_i·E[c_i]`
/// against per-position half log-ratios `l`.
pub fn cross_entropy(v: &[f64], l: &[f64]) -> f64 {
    v.iter().zip(l).map(|(&vi, &li)| cross_entropy_term(vi, li)).sum()
}

/// Discriminated symbol posteriors of a coupled code.
#[derive(Debug, Clone)]
pub struct DiscriminatedPosterior {
    /// Discriminated half log-ratios `L⊗_i`.
    pub l: Vec<f64>,
    /// Per-position symbol masses `[P(+1), P(-1)]`.
    pub mass: Vec<[f64; 2]>,
    /// Full constituent ratios `L^(l)_i(m^(l))` in overall coordinates.
    pub constituent_l: Vec<Vec<f64>>,
    /// Word-level discriminated distribution `P⊗(u|m)` over active keys.
    pub word_u: UMap,
    /// Indices of the discriminator vectors that carry a key coordinate
    /// (identically zero vectors are degenerate and dropped).
    pub active: Vec<usize>,
}

impl DiscriminatedPosterior {
    /// Discriminated symbol entropy `H(C⊗‖m)`: the cross entropy at its
    /// minimizer `v = L⊗`.
    pub fn symbol_entropy(&self) -> f64 {
        cross_entropy(&self.l, &self.l)
    }
}

fn active_indices(m: &DiscriminatorState) -> Vec<usize> {
    m.vectors()
        .enumerate()
        .filter(|(_, v)| v.iter().any(|&x| x != 0.0))
        .map(|(i, _)| i)
        .collect()
}

struct Measures {
    /// Per-constituent joints, cells scattered to overall coordinates.
    constituents: Vec<Vec<[Option<crate::passes::UCell>; 2]>>,
    denominator: ExactJoint,
    active: Vec<usize>,
}

fn build_measures(
    ct: &CoupledTrellises,
    m: &DiscriminatorState,
    cap: usize,
) -> Result<Measures> {
    let n = ct.n();
    if m.n() != n {
        return Err(Error::Dimension("discriminator length != n".into()));
    }
    let steps_all = m.lattice().ok_or_else(|| {
        Error::NotOnLattice("exact discrimination requires an integer-grid discriminator".into())
    })?;
    if m.transfer().len() != ct.num_constituents() {
        return Err(Error::Dimension(
            "one transfer vector per constituent required".into(),
        ));
    }
    let active = active_indices(m);
    let vectors: Vec<&[f64]> = m.vectors().collect();
    let steps: Vec<f64> = active.iter().map(|&l| steps_all[l]).collect();
    let code = ct.code();
    let nc = ct.num_constituents();

    let mut constituents = Vec::with_capacity(nc);
    for l in 0..nc {
        let trellis = ct.trellis(l);
        let gain = code.gather(l, &m.measure_gain(Some(l)));
        let gathered: Vec<Vec<f64>> = active
            .iter()
            .map(|&v| code.gather(l, vectors[v]))
            .collect();
        let refs: Vec<&[f64]> = gathered.iter().map(|v| v.as_slice()).collect();
        let keys = KeyDeltas::from_lattice_vectors(trellis, &refs, &steps)?;
        let joint = joint_distribution_exact(
            trellis,
            &GainTable::correlation(trellis, &gain)?,
            &keys,
            cap,
        )?;
        // Scatter cells back to overall positions.
        let mut cells: Vec<[Option<crate::passes::UCell>; 2]> = vec![[None, None]; n];
        for (j, pair) in joint.cells.into_iter().enumerate() {
            cells[code.permutation(l)[j]] = pair;
        }
        constituents.push(cells);
    }

    let unc = ct.unconstrained();
    let gain0 = m.measure_gain(None);
    let refs: Vec<&[f64]> = active.iter().map(|&v| vectors[v]).collect();
    let keys0 = KeyDeltas::from_lattice_vectors(unc, &refs, &steps)?;
    let denominator = joint_distribution_exact(
        unc,
        &GainTable::correlation(unc, &gain0)?,
        &keys0,
        cap,
    )?;
    Ok(Measures {
        constituents,
        denominator,
        active,
    })
}

/// Exact discriminated symbol posteriors per the cellwise ratio
/// `Σ_u Π_l P^(l)(x,u) / P(x,u)^(N-1)` over the shared integer grid.
pub fn discriminated_posteriors(
    ct: &CoupledTrellises,
    m: &DiscriminatorState,
) -> Result<DiscriminatedPosterior> {
    discriminated_posteriors_with_cap(ct, m, DEFAULT_GRID_CAP)
}

pub fn discriminated_posteriors_with_cap(
    ct: &CoupledTrellises,
    m: &DiscriminatorState,
    cap: usize,
) -> Result<DiscriminatedPosterior> {
    let n = ct.n();
    let nc = ct.num_constituents();
    let measures = build_measures(ct, m, cap)?;

    let mut l_out = Vec::with_capacity(n);
    let mut mass_out = Vec::with_capacity(n);
    for i in 0..n {
        let mut mass = [0.0f64; 2];
        for x in 0..2 {
            let den_cell = measures.denominator.cells[i][x].as_ref();
            let num_cells: Vec<&crate::passes::UCell> = (0..nc)
                .filter_map(|l| measures.constituents[l][i][x].as_ref())
                .collect();
            if num_cells.len() < nc {
                continue; // some constituent cannot reach (i, x): mass 0
            }
            let Some(den) = den_cell else {
                return Err(Error::Internal(format!(
                    "unconstrained cell empty at position {i}"
                )));
            };
            let mut acc = 0.0f64;
            let mut inconsistent = false;
            num_cells[0].map.for_each(|key, v0| {
                let mut num = v0;
                for cell in num_cells.iter().skip(1) {
                    num *= cell.map.get(key);
                }
                if num == 0.0 {
                    return;
                }
                let d = den.map.get(key);
                if d == 0.0 {
                    inconsistent = true;
                    return;
                }
                acc += num / d.powi(nc as i32 - 1);
            });
            if inconsistent {
                return Err(Error::Internal(
                    "nonzero numerator over zero denominator cell".into(),
                ));
            }
            mass[x] = acc;
        }
        let total = mass[0] + mass[1];
        if total <= 0.0 {
            return Err(Error::Internal(format!(
                "no discriminated mass at position {i}"
            )));
        }
        l_out.push(half_log2_ratio(mass[0], mass[1]));
        mass_out.push([mass[0] / total, mass[1] / total]);
    }

    // Full constituent ratios from the cell masses.
    let constituent_l: Vec<Vec<f64>> = (0..nc)
        .map(|l| {
            (0..n)
                .map(|i| {
                    let p = measures.constituents[l][i][0]
                        .as_ref()
                        .map_or(0.0, |c| c.mass);
                    let q = measures.constituents[l][i][1]
                        .as_ref()
                        .map_or(0.0, |c| c.mass);
                    half_log2_ratio(p, q)
                })
                .collect()
        })
        .collect();

    let word_u = discriminated_word_distribution(ct, m, cap)?;
    Ok(DiscriminatedPosterior {
        l: l_out,
        mass: mass_out,
        constituent_l,
        word_u,
        active: measures.active,
    })
}

/// Word-level discriminated distribution `P⊗(u|m) ∝ Π_l P^(l)(u) / P(u)^(N-1)`.
pub fn discriminated_word_distribution(
    ct: &CoupledTrellises,
    m: &DiscriminatorState,
    cap: usize,
) -> Result<UMap> {
    let steps_all = m
        .lattice()
        .ok_or_else(|| Error::NotOnLattice("integer-grid discriminator required".into()))?;
    let active = active_indices(m);
    let vectors: Vec<&[f64]> = m.vectors().collect();
    let steps: Vec<f64> = active.iter().map(|&l| steps_all[l]).collect();
    let code = ct.code();
    let nc = ct.num_constituents();

    let mut maps = Vec::with_capacity(nc + 1);
    for l in 0..nc {
        let trellis = ct.trellis(l);
        let gain = code.gather(l, &m.measure_gain(Some(l)));
        let gathered: Vec<Vec<f64>> = active
            .iter()
            .map(|&v| code.gather(l, vectors[v]))
            .collect();
        let refs: Vec<&[f64]> = gathered.iter().map(|v| v.as_slice()).collect();
        let keys = KeyDeltas::from_lattice_vectors(trellis, &refs, &steps)?;
        maps.push(word_joint_exact(
            trellis,
            &GainTable::correlation(trellis, &gain)?,
            &keys,
            cap,
        )?);
    }
    let unc = ct.unconstrained();
    let refs: Vec<&[f64]> = active.iter().map(|&v| vectors[v]).collect();
    let keys0 = KeyDeltas::from_lattice_vectors(unc, &refs, &steps)?;
    let den = word_joint_exact(
        unc,
        &GainTable::correlation(unc, &m.measure_gain(None))?,
        &keys0,
        cap,
    )?;

    let mut out = UMap::zero_like(&den);
    let mut total = 0.0;
    let mut inconsistent = false;
    maps[0].for_each(|key, v0| {
        let mut num = v0;
        for map in maps.iter().skip(1) {
            num *= map.get(key);
        }
        if num == 0.0 {
            return;
        }
        let d = den.get(key);
        if d == 0.0 {
            inconsistent = true;
            return;
        }
        let v = num / d.powi(nc as i32 - 1);
        out.insert_mass(key, v);
        total += v;
    });
    if inconsistent {
        return Err(Error::Internal(
            "nonzero numerator over zero denominator cell".into(),
        ));
    }
    if total > 0.0 {
        out.scale(1.0 / total);
    }
    Ok(out)
}

// ---------------------------------------------------------------------
// Entropy diagnostics
// ---------------------------------------------------------------------

/// Entropy evaluation of one candidate transfer vector.
#[derive(Debug, Clone)]
pub struct CandidateEntropy {
    /// `H(C⊗|v‖m)`.
    pub cross: f64,
    /// Kullback-Leibler style distance `H(C⊗|v‖m) - H(C⊗‖m)`.
    pub kl: f64,
    /// Per-constituent cross entropies `H(C^(l)|v‖m^(l))`.
    pub per_constituent: Vec<f64>,
}

/// Entropy diagnostics of a discriminated posterior.
#[derive(Debug, Clone)]
pub struct EntropyReport {
    /// Discriminated symbol entropy `H(C⊗‖m)`, the cross entropy at its
    /// minimizer `v = L⊗`.
    pub symbol_entropy: f64,
    /// The single-dominating-word diagnostic `H(C⊗‖m) < 1`.
    pub below_one: bool,
    pub candidates: Vec<CandidateEntropy>,
}

/// Evaluate `H(C⊗‖m)`, the `H < 1` diagnostic, and the cross entropies of
/// the given candidate transfer vectors.
pub fn entropy_report(
    posterior: &DiscriminatedPosterior,
    candidates: &[Vec<f64>],
) -> EntropyReport {
    let symbol_entropy = posterior.symbol_entropy();
    let candidates = candidates
        .iter()
        .map(|v| {
            let cross = cross_entropy(v, &posterior.l);
            CandidateEntropy {
                cross,
                kl: cross - symbol_entropy,
                per_constituent: posterior
                    .constituent_l
                    .iter()
                    .map(|lc| cross_entropy(v, lc))
                    .collect(),
            }
        })
        .collect();
    EntropyReport {
        symbol_entropy,
        below_one: symbol_entropy < 1.0,
        candidates,
    }
}

// ---------------------------------------------------------------------
// Algorithm: iterative hard decision discrimination
// ---------------------------------------------------------------------

/// Update rule of the hard-decision iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HardVariant {
    /// Both transfer vectors carry the same hard word (the baseline
    /// iteration), realized as the equivalent `(r, w, 0)` discriminator.
    SameW,
    /// Erasure transfer `w_i = (sign(L⊗_i) - sign(r_i))/2 ∈ {-1, 0, +1}`.
    Erasure,
    /// Keep the previous hard word as the second discriminator:
    /// `w2 <- w1`, `w1 <- sign(L⊗)`.
    TwoSided,
}

#[derive(Debug, Clone)]
pub struct HardDiscrimOptions {
    pub variant: HardVariant,
    pub max_iters: usize,
    pub grid_cap: usize,
    /// Record per-iteration trace rows (entropy and support cost extra
    /// passes).
    pub with_trace: bool,
    /// Start from this hard word instead of all-zero transfer vectors.
    pub init: Option<Vec<i8>>,
}

impl Default for HardDiscrimOptions {
    fn default() -> Self {
        Self {
            variant: HardVariant::SameW,
            max_iters: 50,
            grid_cap: DEFAULT_GRID_CAP,
            with_trace: false,
            init: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HardTraceRecord {
    pub iteration: usize,
    pub w1: Vec<i8>,
    pub w2: Vec<i8>,
    /// `H(C⊗‖m)` of the posterior that produced this update.
    pub symbol_entropy: f64,
    /// Support size of the word-level `P⊗(u|m)`.
    pub support: usize,
}

#[derive(Debug, Clone)]
pub struct HardDiscrimResult {
    pub decision: Vec<i8>,
    pub converged: bool,
    /// The iteration revisited an earlier transfer state.
    pub cycle_detected: bool,
    pub iterations: usize,
    pub trace: Vec<HardTraceRecord>,
}

impl HardDiscrimResult {
    /// Trace rows as CSV: `iteration,entropy,support,w1,w2`.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,entropy,support,w1,w2\n");
        for rec in &self.trace {
            let fmt = |w: &[i8]| -> String {
                w.iter()
                    .map(|&x| match x {
                        1 => '+',
                        -1 => '-',
                        _ => '0',
                    })
                    .collect()
            };
            out.push_str(&format!(
                "{},{:.6},{},{},{}\n",
                rec.iteration,
                rec.symbol_entropy,
                rec.support,
                fmt(&rec.w1),
                fmt(&rec.w2)
            ));
        }
        out
    }
}

fn sticky_sign(l: f64, prev: i8) -> i8 {
    if l > 0.0 {
        1
    } else if l < 0.0 {
        -1
    } else if prev != 0 {
        prev
    } else {
        1
    }
}

/// Iterative hard decision discrimination on scaled BSC ratios
/// (entries `±K`).
///
/// Starts from zero transfer vectors, replaces them each round with the
/// hard decisions of the discriminated ratios, and stops at the exact
/// fixed point `w_i = sign(L⊗_i)` (a well defined discriminator). A
/// revisited transfer state aborts the run as unconverged.
pub fn hard_discrim_decode(
    ct: &CoupledTrellises,
    r: &[f64],
    opts: &HardDiscrimOptions,
) -> Result<HardDiscrimResult> {
    let n = ct.n();
    if ct.num_constituents() != 2 {
        return Err(Error::Dimension(
            "hard discrimination expects exactly two constituents".into(),
        ));
    }
    if r.len() != n {
        return Err(Error::Dimension("ratio vector length != n".into()));
    }
    let k = r.first().map(|x| x.abs()).unwrap_or(0.0);
    if k <= 0.0 || r.iter().any(|x| (x.abs() - k).abs() > 1e-9 * k.max(1.0)) {
        return Err(Error::NotOnLattice(
            "hard discrimination expects BSC ratios with entries ±K".into(),
        ));
    }
    let r_hard: Vec<i8> = r.iter().map(|&x| if x < 0.0 { -1 } else { 1 }).collect();

    let mut w1 = vec![0i8; n];
    let mut w2 = vec![0i8; n];
    if let Some(init) = &opts.init {
        if init.len() != n {
            return Err(Error::Dimension("init word length != n".into()));
        }
        w1.copy_from_slice(init);
        if opts.variant == HardVariant::TwoSided {
            w2.copy_from_slice(init);
        }
    }
    let mut visited: HashSet<(Vec<i8>, Vec<i8>)> = HashSet::new();
    visited.insert((w1.clone(), w2.clone()));

    let mut result = HardDiscrimResult {
        decision: r_hard.clone(),
        converged: false,
        cycle_detected: false,
        iterations: 0,
        trace: Vec::new(),
    };
    for iter in 1..=opts.max_iters {
        result.iterations = iter;
        // SameW and Erasure run on the equivalent (r, w, 0) discriminator;
        // the hard variants only act through the cell partition.
        let w_vecs: Vec<Vec<f64>> = match opts.variant {
            HardVariant::SameW | HardVariant::Erasure => vec![
                w1.iter().map(|&x| x as f64).collect(),
                vec![0.0; n],
            ],
            HardVariant::TwoSided => vec![
                w1.iter().map(|&x| x as f64).collect(),
                w2.iter().map(|&x| x as f64).collect(),
            ],
        };
        let m = DiscriminatorState::new(r.to_vec(), w_vecs)?
            .with_lattice(vec![k, 1.0, 1.0])?;
        let posterior = discriminated_posteriors_with_cap(ct, &m, opts.grid_cap)?;
        if opts.with_trace {
            result.trace.push(HardTraceRecord {
                iteration: iter,
                w1: w1.clone(),
                w2: w2.clone(),
                symbol_entropy: posterior.symbol_entropy(),
                support: posterior.word_u.support_size(),
            });
        }
        let (new_w1, new_w2) = match opts.variant {
            HardVariant::SameW => {
                let new: Vec<i8> = (0..n)
                    .map(|i| sticky_sign(posterior.l[i], w1[i]))
                    .collect();
                (new, w2.clone())
            }
            HardVariant::Erasure => {
                let new: Vec<i8> = (0..n)
                    .map(|i| {
                        let prev_dec = if w1[i] != 0 { w1[i] } else { r_hard[i] };
                        let dec = sticky_sign(posterior.l[i], prev_dec);
                        (dec - r_hard[i]) / 2
                    })
                    .collect();
                (new, w2.clone())
            }
            HardVariant::TwoSided => {
                let new: Vec<i8> = (0..n)
                    .map(|i| sticky_sign(posterior.l[i], w1[i]))
                    .collect();
                (new, w1.clone())
            }
        };
        result.decision = match opts.variant {
            HardVariant::SameW | HardVariant::TwoSided => new_w1.clone(),
            HardVariant::Erasure => (0..n)
                .map(|i| if new_w1[i] != 0 { new_w1[i] } else { r_hard[i] })
                .collect(),
        };
        let stable = match opts.variant {
            HardVariant::SameW | HardVariant::Erasure => new_w1 == w1,
            HardVariant::TwoSided => new_w1 == w1 && new_w2 == w2,
        };
        if stable {
            result.converged = true;
            break;
        }
        w1 = new_w1;
        w2 = new_w2;
        if !visited.insert((w1.clone(), w2.clone())) {
            result.cycle_detected = true;
            break;
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code::{bpsk, dual_couple, dual_couple_plain, identity_permutation, LinearCode};
    use crate::gf2::BinaryMatrix;
    use crate::oracle;
    use rand::{seq::SliceRandom, Rng, SeedableRng};

    fn coupled_pair(n: usize, rows1: &[&str], rows2: &[&str]) -> CoupledTrellises {
        let c1 = LinearCode::from_parity(BinaryMatrix::from_rows(rows1));
        let c2 = LinearCode::from_parity(BinaryMatrix::from_rows(rows2));
        assert_eq!(c1.n(), n);
        CoupledTrellises::new(dual_couple_plain(vec![c1, c2]).unwrap()).unwrap()
    }

    #[test]
    fn globally_maximal_discriminator_is_exact() {
        // Power-of-two transfer keys distinguish every word, so L⊗ must
        // equal the oracle overall ratios (Lemma-3 behavior).
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(71);
        for _ in 0..5 {
            let n = 8;
            let mk = |rng: &mut rand_chacha::ChaCha8Rng| {
                let mut h = BinaryMatrix::zeros(2, n);
                for r in 0..2 {
                    for c in 0..n {
                        h.set(r, c, rng.gen_bool(0.5));
                    }
                }
                LinearCode::from_parity(h)
            };
            let ct = CoupledTrellises::new(
                dual_couple_plain(vec![mk(&mut rng), mk(&mut rng)]).unwrap(),
            )
            .unwrap();
            let r: Vec<f64> = (0..n)
                .map(|_| {
                    let v = rng.gen_range(-4..=4i64);
                    v as f64
                })
                .collect();
            let w1: Vec<f64> = (0..n).map(|i| (1u64 << i) as f64).collect();
            let m = DiscriminatorState::new(r.clone(), vec![w1, vec![0.0; n]])
                .unwrap()
                .with_lattice(vec![1.0, 1.0, 1.0])
                .unwrap();
            let post = discriminated_posteriors(&ct, &m).unwrap();
            let overall = oracle::oracle(ct.code(), &r).unwrap();
            for (a, b) in post.l.iter().zip(&overall.symbol_l) {
                if a.is_finite() || b.is_finite() {
                    assert!((a - b).abs() < 1e-9, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn matches_enumeration_oracle_on_random_discriminators() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(73);
        let ct = coupled_pair(7, &["1101100", "0110011"], &["1011010", "0101101"]);
        for _ in 0..10 {
            let r: Vec<f64> = (0..7).map(|_| rng.gen_range(-3..=3i64) as f64).collect();
            let w1: Vec<f64> = (0..7).map(|_| rng.gen_range(-2..=2i64) as f64).collect();
            let w2: Vec<f64> = (0..7).map(|_| rng.gen_range(-2..=2i64) as f64).collect();
            let m = DiscriminatorState::new(r, vec![w1, w2])
                .unwrap()
                .with_lattice(vec![1.0, 1.0, 1.0])
                .unwrap();
            let post = discriminated_posteriors(&ct, &m).unwrap();
            let oracle_out = oracle::oracle_discriminated(ct.code(), &m).unwrap();
            for (a, b) in post.l.iter().zip(&oracle_out.l) {
                if a.is_finite() || b.is_finite() {
                    assert!((a - b).abs() < 1e-9, "{a} vs {b}");
                }
            }
            // Word-level distribution agrees too.
            let got = post.word_u.entries();
            assert_eq!(got.len(), oracle_out.word_u.len());
            for ((k1, v1), (k2, v2)) in got.iter().zip(&oracle_out.word_u) {
                assert_eq!(k1, k2);
                assert!((v1 - v2).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn identical_constituents_with_maximal_r_reduce_to_bcjr() {
        // The coupling of a code with itself is that code; with a
        // maximally discriminating integer r the discriminated ratios are
        // exactly its BCJR output.
        let code = LinearCode::from_parity(BinaryMatrix::from_rows(&["110110", "011011"]));
        let ct =
            CoupledTrellises::new(dual_couple_plain(vec![code.clone(), code.clone()]).unwrap())
                .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(79);
        let r: Vec<f64> = (0..6)
            .map(|i| {
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                sign * (1u64 << i) as f64
            })
            .collect();
        let m = DiscriminatorState::new(r.clone(), vec![vec![0.0; 6], vec![0.0; 6]])
            .unwrap()
            .with_lattice(vec![1.0, 1.0, 1.0])
            .unwrap();
        let post = discriminated_posteriors(&ct, &m).unwrap();
        let t = crate::trellis::build_syndrome_trellis(&code.parity().unwrap());
        let out = crate::trellis::bcjr(&t, &r).unwrap();
        for (a, b) in post.l.iter().zip(&out.l) {
            if a.is_finite() || b.is_finite() {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn single_codeword_code_gives_point_distribution() {
        let c1 = LinearCode::from_parity(BinaryMatrix::from_rows(&["100", "010"]));
        let c2 = LinearCode::from_parity(BinaryMatrix::from_rows(&["001"]));
        let ct = CoupledTrellises::new(dual_couple_plain(vec![c1, c2]).unwrap()).unwrap();
        // Maximally discriminating integer ratios: distinct magnitudes
        // keep every word in its own cell.
        let r = vec![1.0, -2.0, 4.0];
        let m = DiscriminatorState::new(r, vec![vec![0.0; 3], vec![0.0; 3]])
            .unwrap()
            .with_lattice(vec![1.0, 1.0, 1.0])
            .unwrap();
        let post = discriminated_posteriors(&ct, &m).unwrap();
        assert_eq!(post.word_u.support_size(), 1);
        // The only codeword is all-zero = all-(+1); every ratio is +inf.
        for l in &post.l {
            assert_eq!(*l, f64::INFINITY);
        }
    }

    #[test]
    fn hard_discriminator_forms_are_equivalent() {
        // (r,w,0), (r,0,w) and (r,w,w) produce identical L⊗ on hard grids.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(83);
        let ct = coupled_pair(7, &["1110100", "0101110"], &["1011001", "0110101"]);
        for _ in 0..5 {
            let k = 2.0;
            let r: Vec<f64> =
                (0..7).map(|_| if rng.gen_bool(0.5) { k } else { -k }).collect();
            let w: Vec<f64> = (0..7)
                .map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
                .collect();
            let zero = vec![0.0; 7];
            let forms = [
                vec![w.clone(), zero.clone()],
                vec![zero.clone(), w.clone()],
                vec![w.clone(), w.clone()],
            ];
            let ls: Vec<Vec<f64>> = forms
                .into_iter()
                .map(|wv| {
                    let m = DiscriminatorState::new(r.clone(), wv)
                        .unwrap()
                        .with_lattice(vec![k, 1.0, 1.0])
                        .unwrap();
                    discriminated_posteriors(&ct, &m).unwrap().l
                })
                .collect();
            for i in 0..7 {
                assert!((ls[0][i] - ls[1][i]).abs() < 1e-9);
                assert!((ls[0][i] - ls[2][i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn position_perturbation_leaves_own_ratio_unchanged() {
        // L⊗_i does not depend on w_i^(l) (only on other positions).
        let ct = coupled_pair(6, &["110110", "011011"], &["101101", "010110"]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(89);
        let r: Vec<f64> = (0..6).map(|_| rng.gen_range(-3..=3i64) as f64).collect();
        let w1: Vec<f64> = (0..6).map(|_| rng.gen_range(-2..=2i64) as f64).collect();
        let w2: Vec<f64> = (0..6).map(|_| rng.gen_range(-2..=2i64) as f64).collect();
        let base = DiscriminatorState::new(r.clone(), vec![w1.clone(), w2.clone()])
            .unwrap()
            .with_lattice(vec![1.0, 1.0, 1.0])
            .unwrap();
        let l_base = discriminated_posteriors(&ct, &base).unwrap().l;
        for i in 0..6 {
            let mut w1p = w1.clone();
            w1p[i] += 2.0;
            let m = DiscriminatorState::new(r.clone(), vec![w1p, w2.clone()])
                .unwrap()
                .with_lattice(vec![1.0, 1.0, 1.0])
                .unwrap();
            let l = discriminated_posteriors(&ct, &m).unwrap().l;
            if l[i].is_finite() || l_base[i].is_finite() {
                assert!(
                    (l[i] - l_base[i]).abs() < 1e-12,
                    "position {i}: {} vs {}",
                    l[i],
                    l_base[i]
                );
            }
        }
    }

    #[test]
    fn entropy_limits() {
        // Certain positions contribute 0; an unresolved bit contributes 1.
        assert!(cross_entropy_term(f64::INFINITY, f64::INFINITY).abs() < 1e-12);
        assert!((cross_entropy_term(0.0, 0.0) - 1.0).abs() < 1e-12);
        assert!(cross_entropy_term(40.0, 40.0) < 1e-9);
    }

    #[test]
    fn entropy_minimized_at_discriminated_ratios() {
        let ct = coupled_pair(6, &["110110", "011011"], &["101101", "010110"]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(97);
        let r: Vec<f64> = (0..6).map(|_| rng.gen_range(-2..=2i64) as f64).collect();
        let m = DiscriminatorState::new(r, vec![vec![0.0; 6], vec![0.0; 6]])
            .unwrap()
            .with_lattice(vec![1.0, 1.0, 1.0])
            .unwrap();
        let post = discriminated_posteriors(&ct, &m).unwrap();
        let h_min = post.symbol_entropy();
        for _ in 0..100 {
            let v: Vec<f64> = post
                .l
                .iter()
                .map(|&l| {
                    let base = if l.is_finite() { l } else { l.signum() * 30.0 };
                    base + rng.gen_range(-1.0..1.0)
                })
                .collect();
            let report = entropy_report(&post, &[v]);
            assert!(report.candidates[0].cross >= h_min - 1e-12);
            assert!(report.candidates[0].kl >= -1e-12);
        }
    }

    #[test]
    fn hard_update_minimizes_cross_entropy_over_hard_words() {
        // w_i = sign(L⊗_i) beats every w in B^n; separable, so checking
        // all 2^n words for small n is exhaustive.
        let ct = coupled_pair(6, &["110110", "011011"], &["101101", "010110"]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(101);
        let r: Vec<f64> = (0..6).map(|_| rng.gen_range(-3..=3i64) as f64).collect();
        let m = DiscriminatorState::new(r, vec![vec![0.0; 6], vec![0.0; 6]])
            .unwrap()
            .with_lattice(vec![1.0, 1.0, 1.0])
            .unwrap();
        let post = discriminated_posteriors(&ct, &m).unwrap();
        let best: Vec<f64> = post
            .l
            .iter()
            .map(|&l| if l < 0.0 { -1.0 } else { 1.0 })
            .collect();
        let h_best = cross_entropy(&best, &post.l);
        for word in oracle::all_words(6).unwrap() {
            let v: Vec<f64> = word.iter().map(|&s| s as f64).collect();
            assert!(cross_entropy(&v, &post.l) >= h_best - 1e-12);
        }
    }

    #[test]
    fn hard_decode_noiseless_stabilizes_in_two_iterations() {
        let ct = coupled_pair(8, &["11011010", "00110110"], &["10110101", "01011011"]);
        let words = ct.code().codewords().unwrap();
        let k = 3.0;
        for bits in words.iter().take(4) {
            let word = bpsk(bits);
            let r: Vec<f64> = word.iter().map(|&s| k * s as f64).collect();
            let result = hard_discrim_decode(&ct, &r, &HardDiscrimOptions::default()).unwrap();
            assert!(result.converged);
            assert!(result.iterations <= 2);
            assert_eq!(result.decision, word);
        }
    }

    #[test]
    fn transmitted_word_initialization_is_fixed_point_under_light_noise() {
        let ct = coupled_pair(8, &["11011010", "00110110"], &["10110101", "01011011"]);
        let words = ct.code().codewords().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(103);
        let k = 4.0;
        let mut stable = 0;
        let total = 30;
        for _ in 0..total {
            let word = bpsk(words.as_slice().choose(&mut rng).unwrap());
            // One flipped symbol at most.
            let mut r: Vec<f64> = word.iter().map(|&s| k * s as f64).collect();
            if rng.gen_bool(0.5) {
                let i = rng.gen_range(0..8);
                r[i] = -r[i];
            }
            let opts = HardDiscrimOptions {
                init: Some(word.clone()),
                max_iters: 2,
                ..Default::default()
            };
            let result = hard_discrim_decode(&ct, &r, &opts).unwrap();
            if result.converged && result.decision == word {
                stable += 1;
            }
        }
        assert!(stable >= total - 2, "only {stable}/{total} stayed fixed");
    }

    /// A 12-symbol coupling of a sliding-window parity code with a permuted
    /// copy of itself; minimum distance 4 by enumeration, so any single
    /// error leaves a unique ML word.
    fn window_coupled_12(rng: &mut rand_chacha::ChaCha8Rng) -> CoupledTrellises {
        let n = 12;
        let mut h = BinaryMatrix::zeros(4, n);
        for row in 0..4 {
            for j in 0..5 {
                h.set(row, (3 * row + j) % n, true);
            }
        }
        let c = LinearCode::from_parity(h);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        let code =
            dual_couple(vec![c.clone(), c], vec![identity_permutation(n), perm]).unwrap();
        CoupledTrellises::new(code).unwrap()
    }

    #[test]
    fn hard_decode_single_error_matches_oracle_ml() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let ct = window_coupled_12(&mut rng);
        let words = ct.code().codewords().unwrap();
        let dmin = words
            .iter()
            .map(|w| w.iter().filter(|&&b| b == 1).count())
            .filter(|&d| d > 0)
            .min()
            .unwrap();
        assert!(dmin >= 3, "test needs single-error uniqueness, got {dmin}");
        let k = 2.0;
        let mut checked = 0;
        for _ in 0..40 {
            let word = bpsk(words.as_slice().choose(&mut rng).unwrap());
            let mut r: Vec<f64> = word.iter().map(|&s| k * s as f64).collect();
            let flip = rng.gen_range(0..12);
            r[flip] = -r[flip];
            let oracle_out = oracle::oracle(ct.code(), &r).unwrap();
            if oracle_out.ml_ties != 1 {
                continue;
            }
            let result = hard_discrim_decode(&ct, &r, &HardDiscrimOptions::default()).unwrap();
            if !result.converged {
                continue;
            }
            checked += 1;
            assert_eq!(result.decision, oracle_out.ml_word);
        }
        assert!(checked >= 20, "only {checked} usable trials");
    }

    #[test]
    fn erasure_variant_recovers_noiseless_word() {
        let ct = coupled_pair(8, &["11011010", "00110110"], &["10110101", "01011011"]);
        let words = ct.code().codewords().unwrap();
        let word = bpsk(&words[1]);
        let r: Vec<f64> = word.iter().map(|&s| 3.0 * s as f64).collect();
        let opts = HardDiscrimOptions {
            variant: HardVariant::Erasure,
            ..Default::default()
        };
        let result = hard_discrim_decode(&ct, &r, &opts).unwrap();
        assert!(result.converged);
        assert_eq!(result.decision, word);
        // With no errors the stable transfer vector is all-erasure.
    }

    #[test]
    fn two_sided_variant_converges_on_light_noise() {
        let ct = coupled_pair(8, &["11011010", "00110110"], &["10110101", "01011011"]);
        let words = ct.code().codewords().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(109);
        let word = bpsk(words.as_slice().choose(&mut rng).unwrap());
        let mut r: Vec<f64> = word.iter().map(|&s| 3.0 * s as f64).collect();
        r[2] = -r[2];
        let opts = HardDiscrimOptions {
            variant: HardVariant::TwoSided,
            with_trace: true,
            ..Default::default()
        };
        let result = hard_discrim_decode(&ct, &r, &opts).unwrap();
        assert!(result.converged || result.cycle_detected);
        assert!(!result.trace.is_empty());
        let csv = result.trace_csv();
        assert!(csv.starts_with("iteration,entropy,support"));
    }

    #[test]
    fn entropy_chain_along_hard_iteration() {
        // H(S|w) >= H(C⊗|w‖m) >= H(C⊗‖m) on every step. The first leg is
        // a typical-regime statement; a strong channel (K = 4, one error)
        // keeps every ratio inside it.
        let ct = coupled_pair(8, &["11011010", "00110110"], &["10110101", "01011011"]);
        let words = ct.code().codewords().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(113);
        let word = bpsk(words.as_slice().choose(&mut rng).unwrap());
        let mut r: Vec<f64> = word.iter().map(|&s| 4.0 * s as f64).collect();
        r[5] = -r[5];
        // Walk the iteration manually to check the chain per step.
        let mut w = vec![0.0f64; 8];
        for _ in 0..4 {
            let m = DiscriminatorState::new(r.clone(), vec![w.clone(), vec![0.0; 8]])
                .unwrap()
                .with_lattice(vec![4.0, 1.0, 1.0])
                .unwrap();
            let post = discriminated_posteriors(&ct, &m).unwrap();
            let h_sym = post.symbol_entropy();
            let h_cross_w = cross_entropy(&w, &post.l);
            // H(S|w) for the independent set is Σ_i log2(2^w+2^-w) - w·tanh2(w).
            let h_s_w = cross_entropy(&w, &w);
            assert!(h_s_w >= h_cross_w - 1e-9);
            assert!(h_cross_w >= h_sym - 1e-9);
            for i in 0..8 {
                w[i] = if post.l[i] < 0.0 { -1.0 } else { 1.0 };
            }
        }
    }

    #[test]
    fn perm_coupling_matches_oracle() {
        // Permuted second constituent still agrees with the enumeration
        // oracle (gather/scatter paths).
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(127);
        let c1 = LinearCode::from_parity(BinaryMatrix::from_rows(&["110110", "011011"]));
        let c2 = LinearCode::from_parity(BinaryMatrix::from_rows(&["111000", "000111"]));
        let mut perm: Vec<usize> = (0..6).collect();
        perm.shuffle(&mut rng);
        let code = dual_couple(vec![c1, c2], vec![identity_permutation(6), perm]).unwrap();
        let ct = CoupledTrellises::new(code).unwrap();
        let r: Vec<f64> = (0..6).map(|_| rng.gen_range(-3..=3i64) as f64).collect();
        let w1: Vec<f64> = (0..6).map(|_| rng.gen_range(-2..=2i64) as f64).collect();
        let w2: Vec<f64> = (0..6).map(|_| rng.gen_range(-2..=2i64) as f64).collect();
        let m = DiscriminatorState::new(r, vec![w1, w2])
            .unwrap()
            .with_lattice(vec![1.0, 1.0, 1.0])
            .unwrap();
        let post = discriminated_posteriors(&ct, &m).unwrap();
        let oracle_out = oracle::oracle_discriminated(ct.code(), &m).unwrap();
        for (a, b) in post.l.iter().zip(&oracle_out.l) {
            if a.is_finite() || b.is_finite() {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }
}
