//! Linear code representations and the coupling constructions that build an
//! overall code from constituents: dual coupling (parity stacking /
//! codeword-set intersection), direct coupling, concatenation and the
//! LDPC edge expansion.

use crate::gf2::{self, BinaryMatrix};
use crate::{Error, Result};

/// A binary linear code, described by a generator and/or parity matrix.
#[derive(Debug, Clone)]
pub struct LinearCode {
    n: usize,
    k: usize,
    generator: Option<BinaryMatrix>,
    parity: Option<BinaryMatrix>,
}

impl LinearCode {
    /// Code defined by a parity check matrix (rows may be dependent; the
    /// dimension is `n - rank(H)`).
    pub fn from_parity(h: BinaryMatrix) -> Self {
        let n = h.cols();
        let k = n - gf2::rank(&h);
        Self {
            n,
            k,
            generator: None,
            parity: Some(h),
        }
    }

    /// Code defined by a full-rank generator matrix.
    pub fn from_generator(g: BinaryMatrix) -> Result<Self> {
        let (k, n) = (g.rows(), g.cols());
        if gf2::rank(&g) != k {
            return Err(Error::RankDeficient("generator rows are dependent".into()));
        }
        Ok(Self {
            n,
            k,
            generator: Some(g),
            parity: None,
        })
    }

    /// The unconstrained length-`n` code (every word is a codeword).
    pub fn unconstrained(n: usize) -> Self {
        Self::from_parity(BinaryMatrix::zeros(0, n))
    }

    /// Single parity check code of length `n`.
    pub fn single_parity_check(n: usize) -> Self {
        let mut h = BinaryMatrix::zeros(1, n);
        for c in 0..n {
            h.set(0, c, true);
        }
        Self::from_parity(h)
    }

    /// Repetition code of length `n` (all symbols equal).
    pub fn repetition(n: usize) -> Self {
        let mut h = BinaryMatrix::zeros(n.saturating_sub(1), n);
        for r in 0..n.saturating_sub(1) {
            h.set(r, r, true);
            h.set(r, r + 1, true);
        }
        Self::from_parity(h)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Parity check matrix, derived from the generator when absent.
    pub fn parity(&self) -> Result<BinaryMatrix> {
        match &self.parity {
            Some(h) => Ok(h.clone()),
            None => gf2::parity_from_generator(self.generator.as_ref().unwrap()),
        }
    }

    /// Generator matrix, derived from the parity matrix when absent.
    pub fn generator(&self) -> BinaryMatrix {
        match &self.generator {
            Some(g) => g.clone(),
            None => gf2::generator_from_parity(self.parity.as_ref().unwrap()),
        }
    }

    /// True iff the 0/1 word satisfies every parity check.
    pub fn is_codeword(&self, word: &[u8]) -> bool {
        match &self.parity {
            Some(h) => h.annihilates(word),
            None => {
                // Membership via rank: word is in the row space of G.
                let g = self.generator.as_ref().unwrap();
                let mut m = BinaryMatrix::zeros(g.rows() + 1, self.n);
                for r in 0..g.rows() {
                    for c in 0..self.n {
                        m.set(r, c, g.get(r, c));
                    }
                }
                for (c, &b) in word.iter().enumerate() {
                    m.set(g.rows(), c, b == 1);
                }
                gf2::rank(&m) == g.rows()
            }
        }
    }

    /// Encode a length-`k` message into a codeword.
    pub fn encode(&self, message: &[u8]) -> Result<Vec<u8>> {
        if message.len() != self.k {
            return Err(Error::Dimension(format!(
                "message length {} != k = {}",
                message.len(),
                self.k
            )));
        }
        let g = self.generator();
        let mut word = vec![0u8; self.n];
        for (r, &b) in message.iter().enumerate() {
            if b & 1 == 1 {
                for c in 0..self.n {
                    word[c] ^= u8::from(g.get(r, c));
                }
            }
        }
        Ok(word)
    }

    /// All `2^k` codewords, enumerated from the generator. Guarded to
    /// small dimensions.
    pub fn codewords(&self) -> Result<Vec<Vec<u8>>> {
        if self.k > 24 {
            return Err(Error::EnumerationGuard(self.k, 24));
        }
        let g = self.generator();
        let mut words = Vec::with_capacity(1 << self.k);
        for m in 0u32..(1 << self.k) {
            let msg: Vec<u8> = (0..self.k).map(|i| ((m >> i) & 1) as u8).collect();
            let mut word = vec![0u8; self.n];
            for (r, &b) in msg.iter().enumerate() {
                if b == 1 {
                    for c in 0..self.n {
                        word[c] ^= u8::from(g.get(r, c));
                    }
                }
            }
            words.push(word);
        }
        Ok(words)
    }
}

/// BPSK map `0 → +1`, `1 → -1` applied to a bit word.
pub fn bpsk(word: &[u8]) -> Vec<i8> {
    word.iter().map(|&b| if b == 0 { 1 } else { -1 }).collect()
}

/// Inverse BPSK map on hard symbols.
pub fn bpsk_inverse(symbols: &[i8]) -> Vec<u8> {
    symbols.iter().map(|&s| u8::from(s < 0)).collect()
}

/// A coupled code: the intersection of permuted constituent codes, with an
/// optional puncturing mask applied at transmission time.
///
/// `permutations[l][j]` is the overall position feeding position `j` of
/// constituent `l`; the constituent constrains the reordered word
/// `y_j = c_{perm[j]}`. Puncturing never shrinks the code, it only zeroes
/// the channel information of masked-out positions.
#[derive(Debug, Clone)]
pub struct CoupledCode {
    n: usize,
    constituents: Vec<LinearCode>,
    permutations: Vec<Vec<usize>>,
    /// 1 = transmitted, 0 = punctured.
    puncture_mask: Vec<u8>,
}

impl CoupledCode {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_constituents(&self) -> usize {
        self.constituents.len()
    }

    pub fn constituent(&self, l: usize) -> &LinearCode {
        &self.constituents[l]
    }

    pub fn permutation(&self, l: usize) -> &[usize] {
        &self.permutations[l]
    }

    pub fn puncture_mask(&self) -> &[u8] {
        &self.puncture_mask
    }

    pub fn set_puncture_mask(&mut self, mask: Vec<u8>) -> Result<()> {
        if mask.len() != self.n {
            return Err(Error::Dimension("puncture mask length".into()));
        }
        self.puncture_mask = mask;
        Ok(())
    }

    /// Parity matrices of all constituents, columns permuted into overall
    /// coordinates, stacked into the overall parity check matrix.
    pub fn stacked_parity(&self) -> Result<BinaryMatrix> {
        let mut stacked = BinaryMatrix::zeros(0, self.n);
        for (code, perm) in self.constituents.iter().zip(&self.permutations) {
            let h = code.parity()?;
            // h constrains y_j = c_{perm[j]}: overall column perm[j] gets
            // constituent column j.
            let mut overall = BinaryMatrix::zeros(h.rows(), self.n);
            for j in 0..self.n {
                for r in 0..h.rows() {
                    if h.get(r, j) {
                        overall.set(r, perm[j], true);
                    }
                }
            }
            stacked = stacked.stack(&overall)?;
        }
        Ok(stacked)
    }

    /// Dimension of the overall code.
    pub fn dimension(&self) -> Result<usize> {
        Ok(self.n - gf2::rank(&self.stacked_parity()?))
    }

    /// The overall code as a plain linear code.
    pub fn overall(&self) -> Result<LinearCode> {
        Ok(LinearCode::from_parity(self.stacked_parity()?))
    }

    /// True iff the word lies in every permuted constituent.
    pub fn is_codeword(&self, word: &[u8]) -> bool {
        self.constituents
            .iter()
            .zip(&self.permutations)
            .all(|(code, perm)| {
                let permuted: Vec<u8> = perm.iter().map(|&p| word[p]).collect();
                code.is_codeword(&permuted)
            })
    }

    /// Enumerate the overall codeword set (guarded).
    pub fn codewords(&self) -> Result<Vec<Vec<u8>>> {
        self.overall()?.codewords()
    }

    /// Encode a message with the overall code's generator.
    pub fn encode(&self, message: &[u8]) -> Result<Vec<u8>> {
        self.overall()?.encode(message)
    }

    /// Gather an overall-coordinate vector into constituent `l`'s order.
    pub fn gather<T: Copy>(&self, l: usize, overall: &[T]) -> Vec<T> {
        self.permutations[l].iter().map(|&p| overall[p]).collect()
    }

    /// Scatter a constituent-coordinate vector back to overall order.
    pub fn scatter<T: Copy + Default>(&self, l: usize, constituent: &[T]) -> Vec<T> {
        let mut out = vec![T::default(); self.n];
        for (j, &p) in self.permutations[l].iter().enumerate() {
            out[p] = constituent[j];
        }
        out
    }
}

/// Identity permutation of length `n`.
pub fn identity_permutation(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// Dual coupling: the overall code is the intersection of the permuted
/// constituent codeword sets, equivalently the null space of the stacked
/// permuted parity matrices.
pub fn dual_couple(
    codes: Vec<LinearCode>,
    permutations: Vec<Vec<usize>>,
) -> Result<CoupledCode> {
    if codes.is_empty() {
        return Err(Error::Dimension("need at least one constituent".into()));
    }
    let n = codes[0].n();
    if codes.iter().any(|c| c.n() != n) {
        return Err(Error::Dimension("constituent block lengths differ".into()));
    }
    if permutations.len() != codes.len() {
        return Err(Error::Dimension(
            "one permutation per constituent required".into(),
        ));
    }
    for perm in &permutations {
        if perm.len() != n {
            return Err(Error::Dimension("permutation length != n".into()));
        }
        let mut seen = vec![false; n];
        for &p in perm {
            if p >= n || seen[p] {
                return Err(Error::Dimension("not a permutation".into()));
            }
            seen[p] = true;
        }
    }
    Ok(CoupledCode {
        n,
        constituents: codes,
        permutations,
        puncture_mask: vec![1; n],
    })
}

/// Dual coupling with identity permutations.
pub fn dual_couple_plain(codes: Vec<LinearCode>) -> Result<CoupledCode> {
    let n = codes.first().map_or(0, |c| c.n());
    let perms = vec![identity_permutation(n); codes.len()];
    dual_couple(codes, perms)
}

fn systematic_parts(g: &BinaryMatrix) -> Result<BinaryMatrix> {
    let (k, n) = (g.rows(), g.cols());
    if n < k {
        return Err(Error::Dimension("generator wider than long".into()));
    }
    for r in 0..k {
        for c in 0..k {
            if g.get(r, c) != (r == c) {
                return Err(Error::NotSystematic(
                    "leading k x k block is not the identity".into(),
                ));
            }
        }
    }
    let mut p = BinaryMatrix::zeros(k, n - k);
    for r in 0..k {
        for c in k..n {
            p.set(r, c - k, g.get(r, c));
        }
    }
    Ok(p)
}

/// Direct coupling of two systematic generators `G_l = [I | P_l]` with an
/// input permutation `pi` feeding the second encoder.
///
/// Returns the overall generator `[I | P1 | P2']` (with `P2'` the permuted
/// second redundancy part) and the equivalent dually coupled code whose
/// stacked parity has the block structure
/// `[H_s1 H_r1 0 ; H_s2' 0 H_r2]`.
pub fn direct_couple(
    g1: &BinaryMatrix,
    g2: &BinaryMatrix,
    pi: &[usize],
) -> Result<(BinaryMatrix, CoupledCode)> {
    let k = g1.rows();
    if g2.rows() != k {
        return Err(Error::Dimension("generators have different k".into()));
    }
    if pi.len() != k {
        return Err(Error::Dimension("input permutation length != k".into()));
    }
    let p1 = systematic_parts(g1)?;
    let p2 = systematic_parts(g2)?;
    let (r1, r2) = (p1.cols(), p2.cols());
    let n = k + r1 + r2;

    // Overall generator [I | P1 | P2'] with P2'[r] = P2[row fed by input r].
    // Input permutation: encoder 2 sees y = x∘pi, i.e. y_j = x_{pi[j]}, so
    // message bit r drives row j of P2 whenever pi[j] = r.
    let mut g = BinaryMatrix::zeros(k, n);
    for r in 0..k {
        g.set(r, r, true);
        for c in 0..r1 {
            g.set(r, k + c, p1.get(r, c));
        }
    }
    for j in 0..k {
        let r = pi[j];
        for c in 0..r2 {
            if p2.get(j, c) {
                let cur = g.get(r, k + r1 + c);
                g.set(r, k + r1 + c, !cur);
            }
        }
    }

    // Constituent 1: [H_s1 H_r1 | 0], free on the second redundancy block.
    let h1 = gf2::parity_from_generator(g1)?;
    let mut h1o = BinaryMatrix::zeros(h1.rows(), n);
    for r in 0..h1.rows() {
        for c in 0..k + r1 {
            h1o.set(r, c, h1.get(r, c));
        }
    }
    // Constituent 2: checks on (x∘pi, red2); systematic column j of H2
    // lands on overall column pi[j].
    let h2 = gf2::parity_from_generator(g2)?;
    let mut h2o = BinaryMatrix::zeros(h2.rows(), n);
    for r in 0..h2.rows() {
        for j in 0..k {
            if h2.get(r, j) {
                h2o.set(r, pi[j], true);
            }
        }
        for c in 0..r2 {
            h2o.set(r, k + r1 + c, h2.get(r, k + c));
        }
    }

    let coupled = dual_couple_plain(vec![
        LinearCode::from_parity(h1o),
        LinearCode::from_parity(h2o),
    ])?;
    Ok((g, coupled))
}

/// Concatenation `c = x·G1·G2` with a systematic outer map `G2 = [I | P2]`.
///
/// Returns the overall generator `G1·G2` and the equivalent dual coupling
/// `[H1 0 ; H_s2 H_r2]` of Theorem-style block form.
pub fn concatenate(
    g1: &BinaryMatrix,
    g2: &BinaryMatrix,
) -> Result<(BinaryMatrix, CoupledCode)> {
    if g1.cols() != g2.rows() {
        return Err(Error::Dimension(format!(
            "inner dimension mismatch: {} vs {}",
            g1.cols(),
            g2.rows()
        )));
    }
    let n1 = g1.cols();
    let n = g2.cols();
    systematic_parts(g2)?;
    let overall = g1.multiply(g2)?;

    // Constituent A: first n1 coordinates form a word of code(G1), the rest
    // are free.
    let h1 = gf2::parity_from_generator(g1)?;
    let mut h1o = BinaryMatrix::zeros(h1.rows(), n);
    for r in 0..h1.rows() {
        for c in 0..n1 {
            h1o.set(r, c, h1.get(r, c));
        }
    }
    // Constituent B: the full word is a codeword of code(G2).
    let h2 = gf2::parity_from_generator(g2)?;
    let coupled = dual_couple_plain(vec![
        LinearCode::from_parity(h1o),
        LinearCode::from_parity(h2),
    ])?;
    Ok((overall, coupled))
}

/// LDPC edge expansion: one repetition code per parity-matrix column (its
/// length the column weight), one single parity check per row, coupled on
/// the edge-expanded length. Edges are ordered column-major; the puncture
/// mask keeps the first edge of every column.
pub fn ldpc_to_coupled(h: &BinaryMatrix) -> Result<CoupledCode> {
    let (m, n) = (h.rows(), h.cols());
    // Column-major edge order (convention; the construction does not fix it).
    let mut edges: Vec<(usize, usize)> = Vec::new(); // (row, col)
    for c in 0..n {
        let mut weight = 0;
        for r in 0..m {
            if h.get(r, c) {
                edges.push((r, c));
                weight += 1;
            }
        }
        if weight == 0 {
            return Err(Error::ZeroColumn(c));
        }
    }
    let ne = edges.len();

    // Constituent 1: juxtaposed repetition codes, one per column.
    let mut rep_rows: Vec<(usize, usize)> = Vec::new(); // pairs of equal edges
    let mut idx = 0;
    for c in 0..n {
        let w = (0..m).filter(|&r| h.get(r, c)).count();
        for j in 1..w {
            rep_rows.push((idx + j - 1, idx + j));
        }
        idx += w;
        let _ = c;
    }
    let mut h_rep = BinaryMatrix::zeros(rep_rows.len(), ne);
    for (r, &(a, b)) in rep_rows.iter().enumerate() {
        h_rep.set(r, a, true);
        h_rep.set(r, b, true);
    }

    // Constituent 2: one single parity check per row of H.
    let mut h_spc = BinaryMatrix::zeros(m, ne);
    for (e, &(r, _)) in edges.iter().enumerate() {
        h_spc.set(r, e, true);
    }

    // Keep one symbol per repetition code: the first edge of every column.
    let mut mask = vec![0u8; ne];
    let mut idx = 0;
    for c in 0..n {
        let w = (0..m).filter(|&r| h.get(r, c)).count();
        mask[idx] = 1;
        idx += w;
    }

    let mut coupled = dual_couple_plain(vec![
        LinearCode::from_parity(h_rep),
        LinearCode::from_parity(h_spc),
    ])?;
    coupled.set_puncture_mask(mask)?;
    Ok(coupled)
}
