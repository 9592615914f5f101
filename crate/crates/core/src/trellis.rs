//! Layered trellises for linear block codes and linear ISI channels, plus
//! the classic two-way passes: max-correlation Viterbi and sum-product
//! BCJR, together with the hard-decision distance spectrum.
//!
//! A trellis has one start state at layer 0 and one end state at layer
//! `n`; start-to-end paths biject with the represented word set. Symbols
//! are BPSK values in `{-1,+1}`; edge outputs carry the channel output for
//! ISI trellises and the symbol itself otherwise.

use crate::gf2::BinaryMatrix;
use crate::{Error, Result};
use std::collections::HashMap;

pub const DEFAULT_ISI_MEMORY_CAP: usize = 12;

/// One trellis edge inside a layer.
#[derive(Debug, Clone, Copy)]
pub struct Edge {
    pub from: u32,
    pub to: u32,
    /// BPSK symbol consumed by this edge.
    pub symbol: i8,
    /// Channel output for ISI trellises, else the symbol value.
    pub output: f64,
}

/// Layered state graph; see the module docs.
#[derive(Debug, Clone)]
pub struct Trellis {
    n: usize,
    /// Number of states per layer (`n + 1` entries).
    states: Vec<usize>,
    /// Edges per layer (`n` entries); deterministic construction order.
    layers: Vec<Vec<Edge>>,
}

impl Trellis {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn states_at(&self, layer: usize) -> usize {
        self.states[layer]
    }

    pub fn max_states(&self) -> usize {
        self.states.iter().copied().max().unwrap_or(0)
    }

    pub fn layer(&self, i: usize) -> &[Edge] {
        &self.layers[i]
    }

    /// Number of start-to-end paths (exact for counts below 2^53).
    pub fn path_count(&self) -> f64 {
        let mut counts = vec![1.0f64];
        for i in 0..self.n {
            let mut next = vec![0.0f64; self.states[i + 1]];
            for e in &self.layers[i] {
                next[e.to as usize] += counts[e.from as usize];
            }
            counts = next;
        }
        counts.iter().sum()
    }

    /// Enumerate all words represented by the trellis (guarded).
    pub fn words(&self) -> Result<Vec<Vec<i8>>> {
        if self.n > 24 {
            return Err(Error::EnumerationGuard(self.n, 24));
        }
        let mut partial: Vec<(u32, Vec<i8>)> = vec![(0, Vec::new())];
        for i in 0..self.n {
            let mut next = Vec::new();
            for (state, word) in &partial {
                for e in &self.layers[i] {
                    if e.from == *state {
                        let mut w = word.clone();
                        w.push(e.symbol);
                        next.push((e.to, w));
                    }
                }
            }
            partial = next;
        }
        Ok(partial.into_iter().map(|(_, w)| w).collect())
    }

    /// Text dump, one line per edge: `layer state -> state symbol output`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, layer) in self.layers.iter().enumerate() {
            for e in layer {
                out.push_str(&format!(
                    "{} {} -> {} {:+} {}\n",
                    i, e.from, e.to, e.symbol, e.output
                ));
            }
        }
        out
    }
}

/// Incrementally maintained GF(2) basis over bit-packed vectors, used to
/// test membership in the span of the remaining parity columns.
#[derive(Clone, Default)]
struct Gf2Basis {
    /// (pivot bit, reduced vector) pairs with distinct pivots.
    vectors: Vec<(usize, Vec<u64>)>,
}

impl Gf2Basis {
    fn reduce(&self, v: &mut [u64]) {
        for (pivot, b) in &self.vectors {
            if (v[pivot / 64] >> (pivot % 64)) & 1 == 1 {
                for (x, y) in v.iter_mut().zip(b) {
                    *x ^= y;
                }
            }
        }
    }

    fn insert(&mut self, mut v: Vec<u64>) {
        self.reduce(&mut v);
        if let Some(pivot) = highest_bit(&v) {
            self.vectors.push((pivot, v));
        }
    }

    fn contains(&self, v: &[u64]) -> bool {
        let mut w = v.to_vec();
        self.reduce(&mut w);
        w.iter().all(|&x| x == 0)
    }
}

fn highest_bit(v: &[u64]) -> Option<usize> {
    for (i, &w) in v.iter().enumerate().rev() {
        if w != 0 {
            return Some(i * 64 + 63 - w.leading_zeros() as usize);
        }
    }
    None
}

/// Build the syndrome trellis of a parity check matrix.
///
/// States at layer `i` are the partial syndromes reachable by prefixes and
/// completable to the zero syndrome, so the trellis is trimmed by
/// construction. Rank-deficient matrices are fine; dependent rows collapse.
pub fn build_syndrome_trellis(h: &BinaryMatrix) -> Trellis {
    let n = h.cols();
    let m = h.rows();
    let words = m.div_ceil(64).max(1);
    let cols: Vec<Vec<u64>> = (0..n)
        .map(|c| {
            let mut v = vec![0u64; words];
            for r in 0..m {
                if h.get(r, c) {
                    v[r / 64] |= 1 << (r % 64);
                }
            }
            v
        })
        .collect();

    // suffix_span[i] = span of columns i..n.
    let mut suffix_span = vec![Gf2Basis::default(); n + 1];
    for i in (0..n).rev() {
        let mut basis = suffix_span[i + 1].clone();
        basis.insert(cols[i].clone());
        suffix_span[i] = basis;
    }

    let mut states = vec![1usize];
    let mut layers = Vec::with_capacity(n);
    let mut current: Vec<Vec<u64>> = vec![vec![0u64; words]];
    for i in 0..n {
        let mut next: Vec<Vec<u64>> = Vec::new();
        let mut index: HashMap<Vec<u64>, u32> = HashMap::new();
        let mut edges = Vec::new();
        for (from, syndrome) in current.iter().enumerate() {
            for symbol in [1i8, -1] {
                let mut t = syndrome.clone();
                if symbol == -1 {
                    for (x, y) in t.iter_mut().zip(&cols[i]) {
                        *x ^= y;
                    }
                }
                if !suffix_span[i + 1].contains(&t) {
                    continue;
                }
                let to = *index.entry(t.clone()).or_insert_with(|| {
                    next.push(t.clone());
                    (next.len() - 1) as u32
                });
                edges.push(Edge {
                    from: from as u32,
                    to,
                    symbol,
                    output: symbol as f64,
                });
            }
        }
        states.push(next.len());
        layers.push(edges);
        current = next;
    }
    debug_assert_eq!(*states.last().unwrap(), 1);
    Trellis { n, states, layers }
}

/// The trivial one-state-per-layer trellis of the unconstrained word set.
pub fn unconstrained_trellis(n: usize) -> Trellis {
    build_syndrome_trellis(&BinaryMatrix::zeros(0, n))
}

/// Build the shift-register trellis of a real-tap ISI channel
/// `v_i = sum_j q_j s_{i-j}` with zero-padded past.
///
/// States remember exactly the past symbols still read by future layers,
/// so the trellis has a single start and end state and at most `2^M`
/// states per layer.
pub fn build_isi_trellis(taps: &[f64], n: usize) -> Result<Trellis> {
    build_isi_trellis_with_cap(taps, n, DEFAULT_ISI_MEMORY_CAP)
}

pub fn build_isi_trellis_with_cap(taps: &[f64], n: usize, cap: usize) -> Result<Trellis> {
    if taps.is_empty() {
        return Err(Error::Dimension("at least one channel tap required".into()));
    }
    if taps.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("channel taps".into()));
    }
    let memory = taps.len() - 1;
    if memory > cap {
        return Err(Error::MemoryCap(memory, cap));
    }
    // Memory still needed after layer t: symbols max(1, t-M+1)..=t, read by
    // layers t+1..=n. Nothing is needed at the two boundary layers.
    let mem_at = |t: usize| -> usize {
        if t == 0 || t >= n {
            0
        } else {
            t.min(memory)
        }
    };
    let mut states = vec![1usize];
    let mut layers = Vec::with_capacity(n);
    for t in 1..=n {
        let m_prev = mem_at(t - 1);
        let m_next = mem_at(t);
        let mut edges = Vec::new();
        for from in 0..(1usize << m_prev) {
            // Bit j of `from` encodes symbol s_{t-1-j}: 1 means -1.
            let sym_at = |idx: usize| -> f64 {
                // Symbol s_{t - j} for j >= 1; zero-padded before the start.
                let j = idx;
                if t < j + 1 {
                    return 0.0;
                }
                let pos = t - j; // 1-based symbol index
                if pos == 0 {
                    return 0.0;
                }
                let bit = j - 1; // state bit for s_{t-1-(j-1)} = s_{t-j}
                if bit < m_prev {
                    if (from >> bit) & 1 == 1 {
                        -1.0
                    } else {
                        1.0
                    }
                } else {
                    // Symbol existed but is no longer tracked: it can only
                    // be untracked if no future layer reads it, and layer t
                    // reads it, so this cannot happen.
                    unreachable!("symbol read but not tracked")
                }
            };
            for symbol in [1i8, -1] {
                let mut output = taps[0] * symbol as f64;
                for (j, &q) in taps.iter().enumerate().skip(1) {
                    output += q * sym_at(j);
                }
                // New state: (s_t, s_{t-1}, ...) truncated to m_next bits.
                let mut to = 0usize;
                if m_next > 0 {
                    to = ((from << 1) | usize::from(symbol == -1)) & ((1 << m_next) - 1);
                }
                edges.push(Edge {
                    from: from as u32,
                    to: to as u32,
                    symbol,
                    output,
                });
            }
        }
        states.push(1usize << m_next);
        layers.push(edges);
    }
    Ok(Trellis { n, states, layers })
}

/// Additive per-edge log2-domain gains for a trellis, one entry per edge
/// per layer, with the peak-normalized `exp2` weights precomputed once.
/// All probability passes consume this table.
#[derive(Debug, Clone)]
pub struct GainTable {
    pub gains: Vec<Vec<f64>>,
    /// `exp2(gain - layer peak)` per edge; bounded by 1.
    weights: Vec<Vec<f64>>,
}

impl GainTable {
    fn from_gains(gains: Vec<Vec<f64>>) -> Self {
        let weights = gains
            .iter()
            .map(|layer| {
                let peak = layer_peak(layer);
                layer.iter().map(|g| (g - peak).exp2()).collect()
            })
            .collect();
        Self { gains, weights }
    }

    #[inline]
    pub(crate) fn weight(&self, layer: usize, edge: usize) -> f64 {
        self.weights[layer][edge]
    }

    /// Correlation gains `g_i * symbol` from a per-position vector, the
    /// `P(r|s) ∝ exp2(Σ r_i s_i)` convention.
    pub fn correlation(trellis: &Trellis, g: &[f64]) -> Result<Self> {
        if g.len() != trellis.n() {
            return Err(Error::Dimension(format!(
                "gain vector length {} != n = {}",
                g.len(),
                trellis.n()
            )));
        }
        if g.iter().any(|x| x.is_nan()) {
            return Err(Error::NonFinite("gain vector".into()));
        }
        let gains = (0..trellis.n())
            .map(|i| {
                trellis
                    .layer(i)
                    .iter()
                    .map(|e| g[i] * e.symbol as f64)
                    .collect()
            })
            .collect();
        Ok(Self::from_gains(gains))
    }

    /// Per-symbol gains from explicit `[gain(+1), gain(-1)]` pairs.
    pub fn per_symbol(trellis: &Trellis, metric: &[[f64; 2]]) -> Result<Self> {
        if metric.len() != trellis.n() {
            return Err(Error::Dimension("metric length != n".into()));
        }
        let gains = (0..trellis.n())
            .map(|i| {
                trellis
                    .layer(i)
                    .iter()
                    .map(|e| metric[i][usize::from(e.symbol == -1)])
                    .collect()
            })
            .collect();
        Ok(Self::from_gains(gains))
    }

    /// Gaussian ISI edge gains `-(log2 e / 2σ²) (r_i - v_e)²` from raw
    /// channel observations and the trellis edge outputs.
    pub fn isi(trellis: &Trellis, observed: &[f64], sigma2: f64) -> Result<Self> {
        if observed.len() != trellis.n() {
            return Err(Error::Dimension("observation length != n".into()));
        }
        if sigma2 <= 0.0 {
            return Err(Error::InvalidChannel("sigma2 must be positive".into()));
        }
        let scale = std::f64::consts::LOG2_E / (2.0 * sigma2);
        let gains = (0..trellis.n())
            .map(|i| {
                trellis
                    .layer(i)
                    .iter()
                    .map(|e| {
                        let d = observed[i] - e.output;
                        -scale * d * d
                    })
                    .collect()
            })
            .collect();
        Ok(Self::from_gains(gains))
    }
}

/// Max-correlation Viterbi over per-edge gains.
///
/// Ties prefer the `+1` symbol, then the lower predecessor state index.
pub fn viterbi_gains(trellis: &Trellis, gains: &GainTable) -> (Vec<i8>, f64) {
    let n = trellis.n();
    let mut metric = vec![0.0f64];
    // Backpointer per (layer, state): edge index in that layer.
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut next = vec![f64::NEG_INFINITY; trellis.states_at(i + 1)];
        let mut choice = vec![usize::MAX; trellis.states_at(i + 1)];
        for (ei, e) in trellis.layer(i).iter().enumerate() {
            let cand = metric[e.from as usize] + gains.gains[i][ei];
            let to = e.to as usize;
            let better = if choice[to] == usize::MAX {
                true
            } else if cand != next[to] {
                cand > next[to]
            } else {
                let cur = trellis.layer(i)[choice[to]];
                // Tie-break: prefer +1 symbol, then lower predecessor index.
                e.symbol > cur.symbol || (e.symbol == cur.symbol && e.from < cur.from)
            };
            if better {
                next[to] = cand;
                choice[to] = ei;
            }
        }
        metric = next;
        back.push(choice);
    }
    let mut word = vec![0i8; n];
    let mut state = 0usize; // single end state
    for i in (0..n).rev() {
        let e = trellis.layer(i)[back[i][state]];
        word[i] = e.symbol;
        state = e.from as usize;
    }
    (word, metric[0])
}

/// Viterbi with correlation metric `Σ g_i c_i`.
pub fn viterbi(trellis: &Trellis, g: &[f64]) -> Result<(Vec<i8>, f64)> {
    Ok(viterbi_gains(trellis, &GainTable::correlation(trellis, g)?))
}

/// Output of a [`bcjr`] run: exact code-conditioned symbol posteriors.
#[derive(Debug, Clone)]
pub struct BcjrOutput {
    /// Half log2-ratios `L_i = ½ log2 P(+1)/P(-1)`; infinite when a symbol
    /// value is unreachable.
    pub l: Vec<f64>,
    /// Posterior `[P(+1), P(-1)]` per position.
    pub posterior: Vec<[f64; 2]>,
}

impl BcjrOutput {
    /// Extrinsic ratios `L̆ = L - g` against the input gains.
    pub fn extrinsic(&self, g: &[f64]) -> Vec<f64> {
        self.l.iter().zip(g).map(|(l, gi)| l - gi).collect()
    }
}

/// Forward pass of per-state masses, renormalized per layer.
/// Returns masses per layer (layer 0 through n).
pub(crate) fn forward_masses(trellis: &Trellis, gains: &GainTable) -> Vec<Vec<f64>> {
    let n = trellis.n();
    let mut all = Vec::with_capacity(n + 1);
    all.push(vec![1.0f64]);
    for i in 0..n {
        let mut next = vec![0.0f64; trellis.states_at(i + 1)];
        for (ei, e) in trellis.layer(i).iter().enumerate() {
            next[e.to as usize] += all[i][e.from as usize] * gains.weight(i, ei);
        }
        normalize_in_place(&mut next);
        all.push(next);
    }
    all
}

pub(crate) fn backward_masses(trellis: &Trellis, gains: &GainTable) -> Vec<Vec<f64>> {
    let n = trellis.n();
    let mut all = vec![Vec::new(); n + 1];
    all[n] = vec![1.0f64];
    for i in (0..n).rev() {
        let mut prev = vec![0.0f64; trellis.states_at(i)];
        for (ei, e) in trellis.layer(i).iter().enumerate() {
            prev[e.from as usize] += all[i + 1][e.to as usize] * gains.weight(i, ei);
        }
        normalize_in_place(&mut prev);
        all[i] = prev;
    }
    all
}

pub(crate) fn layer_peak(gains: &[f64]) -> f64 {
    gains.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn normalize_in_place(v: &mut [f64]) {
    let total: f64 = v.iter().sum();
    if total > 0.0 {
        for x in v.iter_mut() {
            *x /= total;
        }
    }
}

/// Sum-product (BCJR) pass over per-edge gains.
pub fn bcjr_gains(trellis: &Trellis, gains: &GainTable) -> BcjrOutput {
    let n = trellis.n();
    let alpha = forward_masses(trellis, gains);
    let beta = backward_masses(trellis, gains);
    let mut l = Vec::with_capacity(n);
    let mut posterior = Vec::with_capacity(n);
    for i in 0..n {
        let mut mass = [0.0f64; 2];
        for (ei, e) in trellis.layer(i).iter().enumerate() {
            mass[usize::from(e.symbol == -1)] += alpha[i][e.from as usize]
                * gains.weight(i, ei)
                * beta[i + 1][e.to as usize];
        }
        let total = mass[0] + mass[1];
        let p = [mass[0] / total, mass[1] / total];
        l.push(half_log2_ratio(p[0], p[1]));
        posterior.push(p);
    }
    BcjrOutput { l, posterior }
}

/// BCJR with the correlation metric from per-position half log-ratios.
pub fn bcjr(trellis: &Trellis, l_in: &[f64]) -> Result<BcjrOutput> {
    if l_in.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("bcjr input ratios".into()));
    }
    Ok(bcjr_gains(trellis, &GainTable::correlation(trellis, l_in)?))
}

/// `½ log2(p / q)` with signed infinities for empty sides.
pub fn half_log2_ratio(p: f64, q: f64) -> f64 {
    if p == 0.0 && q == 0.0 {
        0.0
    } else if q == 0.0 {
        f64::INFINITY
    } else if p == 0.0 {
        f64::NEG_INFINITY
    } else {
        0.5 * (p / q).log2()
    }
}

/// Hamming distance spectrum of the trellis word set against a reference
/// word, with the optional BSC reweighting `P(t|r) ∝ D(t) p^t (1-p)^(n-t)`.
#[derive(Debug, Clone)]
pub struct DistanceDistribution {
    /// `d[t]` = number of words at distance `t` (exact below 2^53).
    pub d: Vec<f64>,
    /// Normalized `P(t|r)` when a crossover probability was supplied.
    pub p: Option<Vec<f64>>,
}

pub fn distance_distribution(
    trellis: &Trellis,
    reference: &[i8],
    channel_p: Option<f64>,
) -> Result<DistanceDistribution> {
    let n = trellis.n();
    if reference.len() != n {
        return Err(Error::Dimension("reference length != n".into()));
    }
    if reference.iter().any(|&s| s != 1 && s != -1) {
        return Err(Error::Dimension("reference entries must be ±1".into()));
    }
    // Forward pass of per-state distance counts.
    let mut counts: Vec<Vec<f64>> = vec![vec![0.0; n + 1]];
    counts[0][0] = 1.0;
    for i in 0..n {
        let mut next = vec![vec![0.0; n + 1]; trellis.states_at(i + 1)];
        for e in trellis.layer(i) {
            let shift = usize::from(e.symbol != reference[i]);
            let src = &counts[e.from as usize];
            let dst = &mut next[e.to as usize];
            for t in 0..=n - shift {
                dst[t + shift] += src[t];
            }
        }
        counts = next;
    }
    let d = counts.into_iter().next().unwrap();
    let p = match channel_p {
        None => None,
        Some(p) => {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidChannel("p outside [0,1]".into()));
            }
            // Work in log domain against the peak to avoid underflow.
            let logs: Vec<f64> = d
                .iter()
                .enumerate()
                .map(|(t, &count)| {
                    if count == 0.0 {
                        f64::NEG_INFINITY
                    } else {
                        count.log2() + t as f64 * p.log2() + (n - t) as f64 * (1.0 - p).log2()
                    }
                })
                .collect();
            let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut weights: Vec<f64> = logs.iter().map(|&x| (x - peak).exp2()).collect();
            let total: f64 = weights.iter().sum();
            for w in weights.iter_mut() {
                *w /= total;
            }
            Some(weights)
        }
    };
    Ok(DistanceDistribution { d, p })
}

/// A coupled code bundled with the syndrome trellises of its constituents
/// (built once, in constituent coordinate order) and the unconstrained
/// denominator trellis. Immutable after construction; decode calls share
/// it freely.
#[derive(Debug, Clone)]
pub struct CoupledTrellises {
    code: crate::code::CoupledCode,
    trellises: Vec<Trellis>,
    unconstrained: Trellis,
}

impl CoupledTrellises {
    pub fn new(code: crate::code::CoupledCode) -> Result<Self> {
        let trellises = (0..code.num_constituents())
            .map(|l| Ok(build_syndrome_trellis(&code.constituent(l).parity()?)))
            .collect::<Result<Vec<_>>>()?;
        let unconstrained = unconstrained_trellis(code.n());
        Ok(Self {
            code,
            trellises,
            unconstrained,
        })
    }

    pub fn code(&self) -> &crate::code::CoupledCode {
        &self.code
    }

    pub fn n(&self) -> usize {
        self.code.n()
    }

    pub fn num_constituents(&self) -> usize {
        self.trellises.len()
    }

    /// Constituent trellis `l`, laid out in that constituent's own
    /// coordinate order (gather metrics through the code's permutation).
    pub fn trellis(&self, l: usize) -> &Trellis {
        &self.trellises[l]
    }

    /// One-state-per-layer trellis of the unconstrained word set, in
    /// overall coordinates.
    pub fn unconstrained(&self) -> &Trellis {
        &self.unconstrained
    }
}
