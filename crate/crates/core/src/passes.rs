//! Per-symbol distribution passes over a trellis: conditional moments of
//! correlation coordinates, exact joint distributions on integer grids,
//! and windowed histogram approximations.
//!
//! Every pass runs the same two-way scheme. Forward accumulators carry
//! prefix quantities per state, backward accumulators carry suffix
//! quantities, and the per-position result combines both across the edges
//! of one layer via the additive decomposition `u = u_fwd + u_edge + u_bwd`
//! with conditional independence given the state. Masses are renormalized
//! per layer against the peak edge gain, so arbitrarily strong beliefs
//! stay inside the floating range.

use crate::linalg::SymMat;
use crate::trellis::{GainTable, Trellis};
use crate::{Error, Result};
use std::collections::HashMap;

pub const DEFAULT_GRID_CAP: usize = 1_000_000;
/// Dense grids are used up to this many addressable keys per map.
const DENSE_LIMIT: usize = 1 << 16;
const LATTICE_TOL: f64 = 1e-9;

/// Index of a BPSK symbol in per-position cell arrays: `+1 -> 0`, `-1 -> 1`.
#[inline]
pub fn sym_index(x: i8) -> usize {
    usize::from(x == -1)
}

/// The discriminator `m = (r, w1, ..., wL)`: received half log-ratios plus
/// the transfer vectors steering the discrimination. By convention the
/// received vector is coordinate 0.
#[derive(Debug, Clone)]
pub struct DiscriminatorState {
    r: Vec<f64>,
    w: Vec<Vec<f64>>,
    /// Declared lattice step per vector (coordinate 0 first). `None` means
    /// no lattice is claimed and exact-grid passes are unavailable.
    lattice: Option<Vec<f64>>,
}

impl DiscriminatorState {
    pub fn new(r: Vec<f64>, w: Vec<Vec<f64>>) -> Result<Self> {
        let n = r.len();
        if w.iter().any(|v| v.len() != n) {
            return Err(Error::Dimension("transfer vector length != n".into()));
        }
        if r.iter().chain(w.iter().flatten()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("discriminator vectors".into()));
        }
        Ok(Self { r, w, lattice: None })
    }

    /// Declare lattice steps (one per vector, received vector first) and
    /// verify every entry lies on its step.
    pub fn with_lattice(mut self, steps: Vec<f64>) -> Result<Self> {
        if steps.len() != self.w.len() + 1 {
            return Err(Error::Dimension("one lattice step per vector".into()));
        }
        for (idx, (v, &step)) in self.vectors().zip(&steps).enumerate() {
            if step <= 0.0 {
                return Err(Error::NotOnLattice(format!(
                    "vector {idx}: nonpositive step"
                )));
            }
            for (i, &x) in v.iter().enumerate() {
                let k = (x / step).round();
                if (x - k * step).abs() > LATTICE_TOL * step.max(1.0) {
                    return Err(Error::NotOnLattice(format!(
                        "vector {idx} entry {i} = {x} not a multiple of {step}"
                    )));
                }
            }
        }
        self.lattice = Some(steps);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.r.len()
    }

    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn transfer(&self) -> &[Vec<f64>] {
        &self.w
    }

    /// All vectors, received vector first (the `w0 = r` convention).
    pub fn vectors(&self) -> impl Iterator<Item = &[f64]> {
        std::iter::once(self.r.as_slice()).chain(self.w.iter().map(|v| v.as_slice()))
    }

    pub fn num_vectors(&self) -> usize {
        self.w.len() + 1
    }

    pub fn is_integer_grid(&self) -> bool {
        self.lattice.is_some()
    }

    pub fn lattice(&self) -> Option<&[f64]> {
        self.lattice.as_deref()
    }

    /// Measure gain vector: `r + Σ_{k≠l} w_k` for constituent `l`
    /// (0-based), or `r + Σ_k w_k` for the unconstrained measure.
    pub fn measure_gain(&self, exclude: Option<usize>) -> Vec<f64> {
        let mut g = self.r.clone();
        for (k, w) in self.w.iter().enumerate() {
            if Some(k) != exclude {
                for (gi, wi) in g.iter_mut().zip(w) {
                    *gi += wi;
                }
            }
        }
        g
    }
}

/// Per-layer, per-edge increments of each correlation coordinate, stored
/// flat (one slice of `d` values per edge).
#[derive(Debug, Clone)]
pub struct CoordDeltas {
    d: usize,
    /// Cumulative edge count before each layer.
    layer_offsets: Vec<usize>,
    flat: Vec<f64>,
}

impl CoordDeltas {
    pub fn empty(trellis: &Trellis) -> Self {
        let mut layer_offsets = Vec::with_capacity(trellis.n() + 1);
        let mut acc = 0;
        for i in 0..trellis.n() {
            layer_offsets.push(acc);
            acc += trellis.layer(i).len();
        }
        layer_offsets.push(acc);
        Self {
            d: 0,
            layer_offsets,
            flat: Vec::new(),
        }
    }

    fn push_column(&mut self, column: impl Fn(usize, usize) -> f64, trellis: &Trellis) {
        let edges = *self.layer_offsets.last().unwrap();
        let d_new = self.d + 1;
        let mut flat = vec![0.0f64; edges * d_new];
        for i in 0..trellis.n() {
            let base = self.layer_offsets[i];
            for ei in 0..trellis.layer(i).len() {
                let dst = (base + ei) * d_new;
                let src = (base + ei) * self.d;
                flat[dst..dst + self.d].copy_from_slice(&self.flat[src..src + self.d]);
                flat[dst + self.d] = column(i, ei);
            }
        }
        self.flat = flat;
        self.d = d_new;
    }

    /// Append a correlation coordinate `u = v · s` (increment `v_i * sym`).
    pub fn push_vector(&mut self, trellis: &Trellis, v: &[f64]) -> Result<()> {
        if v.len() != trellis.n() {
            return Err(Error::Dimension("coordinate vector length != n".into()));
        }
        self.push_column(|i, ei| v[i] * trellis.layer(i)[ei].symbol as f64, trellis);
        Ok(())
    }

    /// Append a coordinate with explicit per-edge increments (used for the
    /// channel-likelihood coordinate of ISI trellises).
    pub fn push_edge_values(&mut self, trellis: &Trellis, values: &GainTable) -> Result<()> {
        if values.gains.len() + 1 != self.layer_offsets.len() {
            return Err(Error::Dimension("edge value table shape".into()));
        }
        for (i, vals) in values.gains.iter().enumerate() {
            if vals.len() != self.layer_offsets[i + 1] - self.layer_offsets[i] {
                return Err(Error::Dimension("edge value table shape".into()));
            }
        }
        self.push_column(|i, ei| values.gains[i][ei], trellis);
        Ok(())
    }

    pub fn from_vectors(trellis: &Trellis, vectors: &[&[f64]]) -> Result<Self> {
        let mut cd = Self::empty(trellis);
        for v in vectors {
            cd.push_vector(trellis, v)?;
        }
        Ok(cd)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    fn at(&self, layer: usize, edge: usize) -> &[f64] {
        let idx = (self.layer_offsets[layer] + edge) * self.d;
        &self.flat[idx..idx + self.d]
    }
}

// ---------------------------------------------------------------------
// Conditional moments
// ---------------------------------------------------------------------

/// Which moments to accumulate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentOrder {
    Mean,
    MeanAndCovariance,
}

/// Mass, conditional means and raw second moments of the coordinates for
/// one `(position, symbol)` cell.
#[derive(Debug, Clone)]
pub struct MomentCell {
    /// Posterior symbol probability; cells of one position sum to 1.
    pub mass: f64,
    pub mean: Vec<f64>,
    /// Raw second moments `E[u_l u_k]`, row-major `d x d`; present for
    /// order-2 runs.
    pub raw2: Option<Vec<f64>>,
}

impl MomentCell {
    /// Central covariance `E[u uᵀ] - μμᵀ`, symmetrized.
    pub fn covariance(&self) -> SymMat {
        let d = self.mean.len();
        let raw = self.raw2.as_ref().expect("order-2 moments required");
        let mut a = SymMat::zeros(d);
        for l in 0..d {
            for k in 0..d {
                let v = raw[l * d + k] - self.mean[l] * self.mean[k];
                a.set(l, k, v);
            }
        }
        // Symmetrize against accumulation round-off.
        for l in 0..d {
            for k in l + 1..d {
                let v = 0.5 * (a.get(l, k) + a.get(k, l));
                a.set(l, k, v);
                a.set(k, l, v);
            }
        }
        a
    }
}

/// Conditional moments per `(position, symbol)`.
#[derive(Debug, Clone)]
pub struct MomentTable {
    pub d: usize,
    pub cells: Vec<[Option<MomentCell>; 2]>,
}

/// Per-layer accumulators in one allocation: masses first, then the
/// per-state means, then the per-state raw second moments.
struct MomentNodes {
    data: Vec<f64>,
    states: usize,
    d: usize,
    second: bool,
}

impl MomentNodes {
    fn new(states: usize, d: usize, order: MomentOrder) -> Self {
        let second = order == MomentOrder::MeanAndCovariance;
        let len = states * (1 + d + if second { d * d } else { 0 });
        Self {
            data: vec![0.0; len],
            states,
            d,
            second,
        }
    }

    fn start(states: usize, d: usize, order: MomentOrder) -> Self {
        let mut n = Self::new(states, d, order);
        n.data[0] = 1.0;
        n
    }

    #[inline]
    fn mass(&self, s: usize) -> f64 {
        self.data[s]
    }

    #[inline]
    fn mean(&self, s: usize) -> &[f64] {
        let base = self.states + s * self.d;
        &self.data[base..base + self.d]
    }

    #[inline]
    fn raw2(&self, s: usize) -> &[f64] {
        let dd = self.d * self.d;
        let base = self.states * (1 + self.d) + s * dd;
        &self.data[base..base + dd]
    }

    /// Mutable (mass slice, mean slice, raw2 slice) views.
    fn split_mut(&mut self) -> (&mut [f64], &mut [f64], &mut [f64]) {
        let (mass, rest) = self.data.split_at_mut(self.states);
        let (mean, raw2) = rest.split_at_mut(self.states * self.d);
        (mass, mean, raw2)
    }
}

/// Flat per-`(position, symbol)` moment rows (one allocation per field);
/// the cell-level [`MomentTable`] is built from this on request.
#[derive(Debug, Clone)]
pub(crate) struct FlatMoments {
    pub(crate) d: usize,
    /// `mass[i*2 + x]`; zero marks an unreachable cell.
    pub(crate) mass: Vec<f64>,
    /// `mean[(i*2 + x)*d + l]`, already normalized per cell.
    pub(crate) mean: Vec<f64>,
    /// `raw2[(i*2 + x)*d*d + l*d + k]`, symmetric; empty for order-1 runs.
    pub(crate) raw2: Vec<f64>,
}

/// Exact conditional moments `E[u_l | c_i = x]` (and raw second moments
/// for order 2) of the coordinates under the trellis word set weighted by
/// `exp2` of the gains. Unreachable `(i, x)` cells come back empty.
pub fn conditional_moments(
    trellis: &Trellis,
    gains: &GainTable,
    coords: &CoordDeltas,
    order: MomentOrder,
) -> MomentTable {
    let flat = conditional_moments_flat(trellis, gains, coords, order);
    let n = trellis.n();
    let d = flat.d;
    let second = order == MomentOrder::MeanAndCovariance;
    let mut cells = Vec::with_capacity(n);
    for i in 0..n {
        let mut pair: [Option<MomentCell>; 2] = [None, None];
        for x in 0..2 {
            let row = i * 2 + x;
            if flat.mass[row] > 0.0 {
                pair[x] = Some(MomentCell {
                    mass: flat.mass[row],
                    mean: flat.mean[row * d..(row + 1) * d].to_vec(),
                    raw2: second
                        .then(|| flat.raw2[row * d * d..(row + 1) * d * d].to_vec()),
                });
            }
        }
        cells.push(pair);
    }
    MomentTable { d, cells }
}

pub(crate) fn conditional_moments_flat(
    trellis: &Trellis,
    gains: &GainTable,
    coords: &CoordDeltas,
    order: MomentOrder,
) -> FlatMoments {
    // Monomorphic copies for the small dimensions that dominate decoding:
    // fixed trip counts let the compiler unroll the moment loops.
    match coords.d() {
        1 => conditional_moments_flat_impl::<1>(trellis, gains, coords, order),
        2 => conditional_moments_flat_impl::<2>(trellis, gains, coords, order),
        3 => conditional_moments_flat_impl::<3>(trellis, gains, coords, order),
        _ => conditional_moments_flat_impl::<0>(trellis, gains, coords, order),
    }
}

fn conditional_moments_flat_impl<const DC: usize>(
    trellis: &Trellis,
    gains: &GainTable,
    coords: &CoordDeltas,
    order: MomentOrder,
) -> FlatMoments {
    let n = trellis.n();
    let d = if DC == 0 { coords.d() } else { DC };
    let second = order == MomentOrder::MeanAndCovariance;

    // Forward prefix accumulators per layer.
    let mut fwd = Vec::with_capacity(n + 1);
    fwd.push(MomentNodes::start(1, d, order));
    for i in 0..n {
        let mut next = MomentNodes::new(trellis.states_at(i + 1), d, order);
        {
            let src = &fwd[i];
            let (mass, mean, raw2) = next.split_mut();
            for (ei, e) in trellis.layer(i).iter().enumerate() {
                let (a, b) = (e.from as usize, e.to as usize);
                let wgt = src.mass(a) * gains.weight(i, ei);
                if wgt == 0.0 {
                    continue;
                }
                let delta = coords.at(i, ei);
                mass[b] += wgt;
                let mean_a = src.mean(a);
                for l in 0..d {
                    mean[b * d + l] += wgt * (mean_a[l] + delta[l]);
                }
                if second {
                    // Upper triangle only; mirrored when finished.
                    let raw_a = src.raw2(a);
                    let raw_b = &mut raw2[b * d * d..(b + 1) * d * d];
                    for l in 0..d {
                        for k in l..d {
                            let v = raw_a[l * d + k]
                                + delta[l] * mean_a[k]
                                + delta[k] * mean_a[l]
                                + delta[l] * delta[k];
                            raw_b[l * d + k] += wgt * v;
                        }
                    }
                }
            }
        }
        finish_nodes(&mut next);
        fwd.push(next);
    }

    // Backward suffix accumulators per layer.
    let mut bwd: Vec<MomentNodes> = (0..=n).map(|_| MomentNodes::new(0, d, order)).collect();
    bwd[n] = MomentNodes::start(1, d, order);
    for i in (0..n).rev() {
        let mut prev = MomentNodes::new(trellis.states_at(i), d, order);
        {
            let src = &bwd[i + 1];
            let (mass, mean, raw2) = prev.split_mut();
            for (ei, e) in trellis.layer(i).iter().enumerate() {
                let (a, b) = (e.from as usize, e.to as usize);
                let wgt = src.mass(b) * gains.weight(i, ei);
                if wgt == 0.0 {
                    continue;
                }
                let delta = coords.at(i, ei);
                mass[a] += wgt;
                let mean_b = src.mean(b);
                for l in 0..d {
                    mean[a * d + l] += wgt * (mean_b[l] + delta[l]);
                }
                if second {
                    let raw_b = src.raw2(b);
                    let raw_a = &mut raw2[a * d * d..(a + 1) * d * d];
                    for l in 0..d {
                        for k in l..d {
                            let v = raw_b[l * d + k]
                                + delta[l] * mean_b[k]
                                + delta[k] * mean_b[l]
                                + delta[l] * delta[k];
                            raw_a[l * d + k] += wgt * v;
                        }
                    }
                }
            }
        }
        finish_nodes(&mut prev);
        bwd[i] = prev;
    }

    // Per-position combine across the layer's edges, written to flat rows.
    let mut out = FlatMoments {
        d,
        mass: vec![0.0; n * 2],
        mean: vec![0.0; n * 2 * d],
        raw2: if second { vec![0.0; n * 2 * d * d] } else { Vec::new() },
    };
    for i in 0..n {
        for (ei, e) in trellis.layer(i).iter().enumerate() {
            let (a, b) = (e.from as usize, e.to as usize);
            let wgt = fwd[i].mass(a) * gains.weight(i, ei) * bwd[i + 1].mass(b);
            if wgt == 0.0 {
                continue;
            }
            let delta = coords.at(i, ei);
            let x = sym_index(e.symbol);
            out.mass[i * 2 + x] += wgt;
            let mf = fwd[i].mean(a);
            let mb = bwd[i + 1].mean(b);
            let row = i * 2 + x;
            let mean = &mut out.mean[row * d..(row + 1) * d];
            for l in 0..d {
                mean[l] += wgt * (mf[l] + delta[l] + mb[l]);
            }
            if second {
                let rf = fwd[i].raw2(a);
                let rb = bwd[i + 1].raw2(b);
                let acc = &mut out.raw2[row * d * d..(row + 1) * d * d];
                for l in 0..d {
                    for k in l..d {
                        let v = rf[l * d + k]
                            + rb[l * d + k]
                            + delta[l] * delta[k]
                            + mf[l] * delta[k]
                            + delta[l] * mf[k]
                            + mf[l] * mb[k]
                            + mb[l] * mf[k]
                            + delta[l] * mb[k]
                            + mb[l] * delta[k];
                        acc[l * d + k] += wgt * v;
                    }
                }
            }
        }
        let total = out.mass[i * 2] + out.mass[i * 2 + 1];
        for x in 0..2 {
            let row = i * 2 + x;
            if out.mass[row] > 0.0 {
                let inv = 1.0 / out.mass[row];
                for l in 0..d {
                    out.mean[row * d + l] *= inv;
                }
                if second {
                    let acc = &mut out.raw2[row * d * d..(row + 1) * d * d];
                    for l in 0..d {
                        for k in l..d {
                            acc[l * d + k] *= inv;
                            acc[k * d + l] = acc[l * d + k];
                        }
                    }
                }
                out.mass[row] /= total;
            }
        }
    }
    out
}

fn finish_nodes(nodes: &mut MomentNodes) {
    let d = nodes.d;
    let second = nodes.second;
    let states = nodes.states;
    let (mass, mean, raw2) = nodes.split_mut();
    let total: f64 = mass.iter().sum();
    for s in 0..states {
        if mass[s] > 0.0 {
            let inv = 1.0 / mass[s];
            for l in 0..d {
                mean[s * d + l] *= inv;
            }
            if second {
                let raw = &mut raw2[s * d * d..(s + 1) * d * d];
                for l in 0..d {
                    for k in l..d {
                        raw[l * d + k] *= inv;
                        raw[k * d + l] = raw[l * d + k];
                    }
                }
            }
        }
        if total > 0.0 {
            mass[s] /= total;
        }
    }
}

// ---------------------------------------------------------------------
// Exact joint distributions on integer grids
// ---------------------------------------------------------------------

/// Integer key increments per layer and edge, one entry per coordinate.
#[derive(Debug, Clone)]
pub struct KeyDeltas {
    d: usize,
    deltas: Vec<Vec<Vec<i64>>>,
    /// Worst-case absolute key per coordinate (sum of per-layer maxima).
    range: Vec<i64>,
    /// Lattice step per coordinate, to map keys back to real values.
    steps: Vec<f64>,
}

impl KeyDeltas {
    /// Build from lattice vectors: coordinate `l` has integer key
    /// `u_l / step_l`.
    pub fn from_lattice_vectors(
        trellis: &Trellis,
        vectors: &[&[f64]],
        steps: &[f64],
    ) -> Result<Self> {
        if vectors.len() != steps.len() {
            return Err(Error::Dimension("one step per vector".into()));
        }
        let n = trellis.n();
        let d = vectors.len();
        let mut deltas: Vec<Vec<Vec<i64>>> = Vec::with_capacity(n);
        let mut range = vec![0i64; d];
        let mut per_pos = vec![vec![0i64; n]; d];
        for (l, (&v, &step)) in vectors.iter().zip(steps).enumerate() {
            if v.len() != n {
                return Err(Error::Dimension("vector length != n".into()));
            }
            if step <= 0.0 {
                return Err(Error::NotOnLattice("nonpositive step".into()));
            }
            for (i, &x) in v.iter().enumerate() {
                let k = (x / step).round();
                if (x - k * step).abs() > LATTICE_TOL * step.max(1.0) {
                    return Err(Error::NotOnLattice(format!(
                        "vector {l} entry {i} off its lattice"
                    )));
                }
                per_pos[l][i] = k as i64;
            }
            range[l] = v.iter().map(|&x| (x / step).round().abs() as i64).sum();
        }
        for i in 0..n {
            let layer: Vec<Vec<i64>> = trellis
                .layer(i)
                .iter()
                .map(|e| (0..d).map(|l| per_pos[l][i] * e.symbol as i64).collect())
                .collect();
            deltas.push(layer);
        }
        Ok(Self {
            d,
            deltas,
            range,
            steps: steps.to_vec(),
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    /// Real coordinate values of an integer key.
    pub fn key_to_values(&self, key: &[i64]) -> Vec<f64> {
        key.iter()
            .zip(&self.steps)
            .map(|(&k, &s)| k as f64 * s)
            .collect()
    }

    fn layout(&self) -> ULayout {
        ULayout::new(&self.range)
    }
}

/// Addressing layout shared by all maps of one pass.
#[derive(Debug, Clone)]
struct ULayout {
    d: usize,
    lo: Vec<i64>,
    size: Vec<usize>,
    stride: Vec<usize>,
    dense: bool,
}

impl ULayout {
    fn new(range: &[i64]) -> Self {
        let d = range.len();
        let lo: Vec<i64> = range.iter().map(|&r| -r).collect();
        let size: Vec<usize> = range.iter().map(|&r| (2 * r + 1) as usize).collect();
        let mut volume = 1usize;
        let mut ok = true;
        for &s in &size {
            volume = volume.saturating_mul(s);
            ok &= volume <= DENSE_LIMIT;
        }
        let mut stride = vec![0usize; d];
        if ok {
            let mut acc = 1;
            for l in (0..d).rev() {
                stride[l] = acc;
                acc *= size[l];
            }
        }
        Self {
            d,
            lo,
            size,
            stride,
            dense: ok && d > 0,
        }
    }

    fn volume(&self) -> usize {
        self.size.iter().product()
    }

    #[inline]
    fn index(&self, key: &[i64]) -> usize {
        let mut idx = 0;
        for l in 0..self.d {
            idx += (key[l] - self.lo[l]) as usize * self.stride[l];
        }
        idx
    }
}

type ULayoutRef = std::sync::Arc<ULayout>;

/// A finite distribution over integer correlation keys.
///
/// Small bounded key spaces use a dense grid with a live bounding box;
/// anything larger falls back to a hash map.
#[derive(Debug, Clone)]
pub struct UMap {
    layout: ULayoutRef,
    dense: Option<DenseGrid>,
    sparse: Option<HashMap<Vec<i64>, f64>>,
}

#[derive(Debug, Clone)]
struct DenseGrid {
    data: Vec<f64>,
    /// Inclusive live bounding box of nonzero keys, per coordinate.
    bb_lo: Vec<i64>,
    bb_hi: Vec<i64>,
    any: bool,
}

impl UMap {
    pub(crate) fn zero_like(other: &UMap) -> Self {
        Self::zero(&other.layout)
    }

    pub(crate) fn insert_mass(&mut self, key: &[i64], v: f64) {
        self.add(key, v);
    }

    fn zero(layout: &ULayoutRef) -> Self {
        if layout.dense {
            Self {
                layout: layout.clone(),
                dense: Some(DenseGrid {
                    data: vec![0.0; layout.volume()],
                    bb_lo: vec![0; layout.d],
                    bb_hi: vec![0; layout.d],
                    any: false,
                }),
                sparse: None,
            }
        } else {
            Self {
                layout: layout.clone(),
                dense: None,
                sparse: Some(HashMap::new()),
            }
        }
    }

    pub fn d(&self) -> usize {
        self.layout.d
    }

    pub fn support_size(&self) -> usize {
        let mut count = 0;
        self.for_each(|_, _| count += 1);
        count
    }

    pub fn total(&self) -> f64 {
        let mut t = 0.0;
        self.for_each(|_, v| t += v);
        t
    }

    pub fn get(&self, key: &[i64]) -> f64 {
        if let Some(g) = &self.dense {
            g.data[self.layout.index(key)]
        } else {
            *self.sparse.as_ref().unwrap().get(key).unwrap_or(&0.0)
        }
    }

    fn add(&mut self, key: &[i64], v: f64) {
        if v == 0.0 {
            return;
        }
        if let Some(g) = &mut self.dense {
            let idx = self.layout.index(key);
            if !g.any {
                g.bb_lo.copy_from_slice(key);
                g.bb_hi.copy_from_slice(key);
                g.any = true;
            } else {
                for l in 0..self.layout.d {
                    g.bb_lo[l] = g.bb_lo[l].min(key[l]);
                    g.bb_hi[l] = g.bb_hi[l].max(key[l]);
                }
            }
            g.data[idx] += v;
        } else {
            *self
                .sparse
                .as_mut()
                .unwrap()
                .entry(key.to_vec())
                .or_insert(0.0) += v;
        }
    }

    pub fn scale(&mut self, f: f64) {
        if let Some(g) = &mut self.dense {
            for v in &mut g.data {
                *v *= f;
            }
        } else {
            for v in self.sparse.as_mut().unwrap().values_mut() {
                *v *= f;
            }
        }
    }

    /// Visit every nonzero entry as `(key, value)`.
    pub fn for_each<F: FnMut(&[i64], f64)>(&self, mut f: F) {
        if let Some(g) = &self.dense {
            if !g.any {
                return;
            }
            let d = self.layout.d;
            let mut key = g.bb_lo.clone();
            loop {
                let v = g.data[self.layout.index(&key)];
                if v != 0.0 {
                    f(&key, v);
                }
                // Advance the odometer inside the bounding box.
                let mut l = d;
                loop {
                    if l == 0 {
                        return;
                    }
                    l -= 1;
                    if key[l] < g.bb_hi[l] {
                        key[l] += 1;
                        for ll in l + 1..d {
                            key[ll] = g.bb_lo[ll];
                        }
                        break;
                    }
                    key[l] = g.bb_lo[l];
                }
            }
        } else {
            for (k, &v) in self.sparse.as_ref().unwrap() {
                if v != 0.0 {
                    f(k, v);
                }
            }
        }
    }

    /// Sorted `(key, value)` entries; handy for deterministic output.
    pub fn entries(&self) -> Vec<(Vec<i64>, f64)> {
        let mut out = Vec::new();
        self.for_each(|k, v| out.push((k.to_vec(), v)));
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// `self += src shifted by delta, times factor`.
    fn add_shifted(&mut self, src: &UMap, delta: &[i64], factor: f64) {
        let mut key = vec![0i64; self.layout.d];
        src.for_each(|k, v| {
            for l in 0..k.len() {
                key[l] = k[l] + delta[l];
            }
            self.add(&key, v * factor);
        });
    }

    /// `self += (fwd ⊛ shift ⊛ bwd) * factor`, the two-way combine.
    fn add_combined(&mut self, fwd: &UMap, bwd: &UMap, delta: &[i64], factor: f64) {
        let d = self.layout.d;
        let mut key = vec![0i64; d];
        fwd.for_each(|kf, vf| {
            let w = vf * factor;
            bwd.for_each(|kb, vb| {
                for l in 0..d {
                    key[l] = kf[l] + delta[l] + kb[l];
                }
                self.add(&key, w * vb);
            });
        });
    }
}

/// Exact joint distribution for one `(position, symbol)` cell.
#[derive(Debug, Clone)]
pub struct UCell {
    /// Posterior symbol probability (cells of one position sum to 1).
    pub mass: f64,
    /// Joint map over keys; values sum to `mass`.
    pub map: UMap,
}

#[derive(Debug, Clone)]
pub struct ExactJoint {
    pub d: usize,
    pub cells: Vec<[Option<UCell>; 2]>,
}

fn umap_pass(
    trellis: &Trellis,
    gains: &GainTable,
    keys: &KeyDeltas,
    layout: &ULayoutRef,
    cap: usize,
    forward: bool,
) -> Result<Vec<Vec<UMap>>> {
    let n = trellis.n();
    let mut all: Vec<Vec<UMap>> = (0..=n).map(|_| Vec::new()).collect();
    let mut point = UMap::zero(layout);
    point.add(&vec![0i64; keys.d()], 1.0);
    let boundary = if forward { 0 } else { n };
    all[boundary] = vec![point];
    let order: Vec<usize> = if forward {
        (0..n).collect()
    } else {
        (0..n).rev().collect()
    };
    for i in order {
        let (src_layer, dst_layer, dst_states) = if forward {
            (i, i + 1, trellis.states_at(i + 1))
        } else {
            (i + 1, i, trellis.states_at(i))
        };
        let mut next: Vec<UMap> = (0..dst_states).map(|_| UMap::zero(layout)).collect();
        for (ei, e) in trellis.layer(i).iter().enumerate() {
            let (src, dst) = if forward {
                (e.from as usize, e.to as usize)
            } else {
                (e.to as usize, e.from as usize)
            };
            next[dst].add_shifted(&all[src_layer][src], &keys.deltas[i][ei], gains.weight(i, ei));
        }
        let total: f64 = next.iter().map(|m| m.total()).sum();
        let support: usize = next.iter().map(|m| m.support_size()).sum();
        if support > cap {
            return Err(Error::GridBlowup { size: support, cap });
        }
        if total > 0.0 {
            for m in &mut next {
                m.scale(1.0 / total);
            }
        }
        all[dst_layer] = next;
    }
    Ok(all)
}

/// Exact per-`(position, symbol)` joint distributions of the integer
/// correlation keys under the trellis word set weighted by the gains.
pub fn joint_distribution_exact(
    trellis: &Trellis,
    gains: &GainTable,
    keys: &KeyDeltas,
    cap: usize,
) -> Result<ExactJoint> {
    let n = trellis.n();
    let layout = std::sync::Arc::new(keys.layout());
    let fwd = umap_pass(trellis, gains, keys, &layout, cap, true)?;
    let bwd = umap_pass(trellis, gains, keys, &layout, cap, false)?;
    let mut cells = Vec::with_capacity(n);
    for i in 0..n {
        let mut maps = [UMap::zero(&layout), UMap::zero(&layout)];
        for (ei, e) in trellis.layer(i).iter().enumerate() {
            maps[sym_index(e.symbol)].add_combined(
                &fwd[i][e.from as usize],
                &bwd[i + 1][e.to as usize],
                &keys.deltas[i][ei],
                gains.weight(i, ei),
            );
        }
        let masses = [maps[0].total(), maps[1].total()];
        let total = masses[0] + masses[1];
        let mut pair: [Option<UCell>; 2] = [None, None];
        for (x, mut map) in maps.into_iter().enumerate() {
            if masses[x] > 0.0 {
                map.scale(1.0 / total);
                pair[x] = Some(UCell {
                    mass: masses[x] / total,
                    map,
                });
            }
        }
        cells.push(pair);
    }
    Ok(ExactJoint { d: keys.d(), cells })
}

/// Word-level joint distribution of the keys (no symbol conditioning),
/// normalized to total mass 1.
pub fn word_joint_exact(
    trellis: &Trellis,
    gains: &GainTable,
    keys: &KeyDeltas,
    cap: usize,
) -> Result<UMap> {
    let layout = std::sync::Arc::new(keys.layout());
    let fwd = umap_pass(trellis, gains, keys, &layout, cap, true)?;
    let mut end = fwd
        .into_iter()
        .next_back()
        .unwrap()
        .into_iter()
        .next()
        .unwrap();
    let total = end.total();
    if total > 0.0 {
        end.scale(1.0 / total);
    }
    Ok(end)
}

// ---------------------------------------------------------------------
// Windowed histograms
// ---------------------------------------------------------------------

/// 1-D windowed histogram of one correlation coordinate: `bins[Q + t]`
/// covers `origin + (t - ½)ε .. origin + (t + ½)ε`.
#[derive(Debug, Clone)]
pub struct Histogram1D {
    /// Window anchor, the running mean snapped to the bin lattice.
    pub origin: f64,
    pub epsilon: f64,
    pub bins: Vec<f64>,
}

impl Histogram1D {
    /// Expectation implied by the binned mass.
    pub fn mean(&self) -> f64 {
        let q = (self.bins.len() - 1) / 2;
        let total: f64 = self.bins.iter().sum();
        if total == 0.0 {
            return self.origin;
        }
        let mut acc = 0.0;
        for (idx, &m) in self.bins.iter().enumerate() {
            acc += m * (idx as f64 - q as f64) * self.epsilon;
        }
        self.origin + acc / total
    }
}

#[derive(Debug, Clone)]
pub struct HistogramCell {
    pub mass: f64,
    /// One histogram per coordinate (the per-coordinate marginals); bins
    /// sum to `mass` up to window leakage.
    pub coords: Vec<Histogram1D>,
}

#[derive(Debug, Clone)]
pub struct HistogramJoint {
    pub cells: Vec<[Option<HistogramCell>; 2]>,
    /// Worst leaked mass fraction over all junctions and cells.
    pub max_leak: f64,
    /// Set when `max_leak` exceeds 1e-6.
    pub truncation_warning: bool,
}

#[derive(Clone)]
struct HistNode {
    mass: f64,
    /// Per coordinate: (window origin, bins normalized to sum 1).
    coords: Vec<(f64, Vec<f64>)>,
}

fn snap(x: f64, epsilon: f64) -> f64 {
    (x / epsilon).round() * epsilon
}

/// Deposit `src` bins (centered at `src_origin`) into `dst` (centered at
/// `dst_origin`), splitting each bin over the two covering destination
/// bins (the rectangle interpolation). Returns leaked mass.
fn deposit(
    dst: &mut [f64],
    dst_origin: f64,
    src: &[f64],
    src_origin: f64,
    epsilon: f64,
    factor: f64,
) -> f64 {
    let q = (dst.len() as i64 - 1) / 2;
    let shift = (src_origin - dst_origin) / epsilon;
    let base = shift.floor();
    let b = shift - base;
    let a = 1.0 - b;
    let qsrc = (src.len() as i64 - 1) / 2;
    let mut leak = 0.0;
    for (idx, &m) in src.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        let t = idx as i64 - qsrc + base as i64;
        for (off, frac) in [(0i64, a), (1, b)] {
            if frac == 0.0 {
                continue;
            }
            let slot = t + off;
            if slot.abs() <= q {
                dst[(slot + q) as usize] += m * factor * frac;
            } else {
                leak += m * factor * frac;
            }
        }
    }
    leak
}

/// Per-`(position, symbol)` windowed histograms of each coordinate.
///
/// Lengthening shifts the window with the running mean; junctions merge
/// with the two-coefficient rectangle split `a + b = 1`,
/// `b = frac(Δμ/ε)`; the forward/backward combine is an exact on-grid
/// convolution before one final recentering. Mass pushed outside the `±Q`
/// window counts as leak and is flagged above 1e-6.
pub fn histogram_distribution(
    trellis: &Trellis,
    gains: &GainTable,
    coords: &CoordDeltas,
    epsilon: f64,
    q: usize,
) -> Result<HistogramJoint> {
    if epsilon <= 0.0 {
        return Err(Error::Dimension("epsilon must be positive".into()));
    }
    if q == 0 {
        return Err(Error::Dimension("Q must be at least 1".into()));
    }
    let n = trellis.n();
    let d = coords.d();
    let nbins = 2 * q + 1;
    let mut max_leak = 0.0f64;

    let start = || HistNode {
        mass: 1.0,
        coords: (0..d)
            .map(|_| {
                let mut bins = vec![0.0; nbins];
                bins[q] = 1.0;
                (0.0, bins)
            })
            .collect(),
    };

    let mut fwd: Vec<Vec<HistNode>> = Vec::with_capacity(n + 1);
    fwd.push(vec![start()]);
    for i in 0..n {
        let next = hist_step(
            trellis,
            gains,
            coords,
            &fwd[i],
            i,
            trellis.states_at(i + 1),
            epsilon,
            q,
            true,
            &mut max_leak,
        );
        fwd.push(next);
    }
    let mut bwd: Vec<Vec<HistNode>> = (0..=n).map(|_| Vec::new()).collect();
    bwd[n] = vec![start()];
    for i in (0..n).rev() {
        let prev = hist_step(
            trellis,
            gains,
            coords,
            &bwd[i + 1],
            i,
            trellis.states_at(i),
            epsilon,
            q,
            false,
            &mut max_leak,
        );
        bwd[i] = prev;
    }

    let mut cells = Vec::with_capacity(n);
    for i in 0..n {
        let mut mass = [0.0f64; 2];
        let mut mean = [vec![0.0; d], vec![0.0; d]];
        // First sweep: cell masses and window anchors.
        for (ei, e) in trellis.layer(i).iter().enumerate() {
            let (a, b) = (e.from as usize, e.to as usize);
            let wgt = fwd[i][a].mass * gains.weight(i, ei) * bwd[i + 1][b].mass;
            if wgt == 0.0 {
                continue;
            }
            let x = sym_index(e.symbol);
            mass[x] += wgt;
            for l in 0..d {
                let mu =
                    fwd[i][a].coords[l].0 + coords.at(i, ei)[l] + bwd[i + 1][b].coords[l].0;
                mean[x][l] += wgt * mu;
            }
        }
        let total = mass[0] + mass[1];
        let mut pair: [Option<HistogramCell>; 2] = [None, None];
        for x in 0..2 {
            if mass[x] == 0.0 {
                continue;
            }
            let origins: Vec<f64> = (0..d)
                .map(|l| snap(mean[x][l] / mass[x], epsilon))
                .collect();
            let mut bins = vec![vec![0.0; nbins]; d];
            // Second sweep: convolve forward and backward bins per edge.
            for (ei, e) in trellis.layer(i).iter().enumerate() {
                if sym_index(e.symbol) != x {
                    continue;
                }
                let (a, b) = (e.from as usize, e.to as usize);
                let wgt = fwd[i][a].mass * gains.weight(i, ei) * bwd[i + 1][b].mass / mass[x];
                if wgt == 0.0 {
                    continue;
                }
                for l in 0..d {
                    let (of, hf) = &fwd[i][a].coords[l];
                    let (ob, hb) = &bwd[i + 1][b].coords[l];
                    let src_origin = of + coords.at(i, ei)[l] + ob;
                    // The two offset grids share the ε lattice, so their
                    // convolution is exact; only the final recentering may
                    // split bins.
                    let mut conv = vec![0.0; 2 * nbins - 1];
                    for (t1, &v1) in hf.iter().enumerate() {
                        if v1 == 0.0 {
                            continue;
                        }
                        for (t2, &v2) in hb.iter().enumerate() {
                            if v2 != 0.0 {
                                conv[t1 + t2] += v1 * v2;
                            }
                        }
                    }
                    let leak =
                        deposit(&mut bins[l], origins[l], &conv, src_origin, epsilon, wgt);
                    max_leak = max_leak.max(leak);
                }
            }
            let cell_mass = mass[x] / total;
            for hl in &mut bins {
                for v in hl.iter_mut() {
                    *v *= cell_mass;
                }
            }
            pair[x] = Some(HistogramCell {
                mass: cell_mass,
                coords: origins
                    .into_iter()
                    .zip(bins)
                    .map(|(origin, bins)| Histogram1D {
                        origin,
                        epsilon,
                        bins,
                    })
                    .collect(),
            });
        }
        cells.push(pair);
    }
    Ok(HistogramJoint {
        cells,
        max_leak,
        truncation_warning: max_leak > 1e-6,
    })
}

#[allow(clippy::too_many_arguments)]
fn hist_step(
    trellis: &Trellis,
    gains: &GainTable,
    coords: &CoordDeltas,
    cur: &[HistNode],
    layer: usize,
    out_states: usize,
    epsilon: f64,
    q: usize,
    forward: bool,
    max_leak: &mut f64,
) -> Vec<HistNode> {
    let d = coords.d();
    let nbins = 2 * q + 1;
    let mut mass = vec![0.0f64; out_states];
    let mut mean = vec![0.0f64; out_states * d];
    for (ei, e) in trellis.layer(layer).iter().enumerate() {
        let (src, dst) = if forward {
            (e.from as usize, e.to as usize)
        } else {
            (e.to as usize, e.from as usize)
        };
        let wgt = cur[src].mass * gains.weight(layer, ei);
        if wgt == 0.0 {
            continue;
        }
        mass[dst] += wgt;
        for l in 0..d {
            mean[dst * d + l] += wgt * (cur[src].coords[l].0 + coords.at(layer, ei)[l]);
        }
    }
    let mut out: Vec<HistNode> = (0..out_states)
        .map(|s| HistNode {
            mass: 0.0,
            coords: (0..d)
                .map(|l| {
                    let origin = if mass[s] > 0.0 {
                        snap(mean[s * d + l] / mass[s], epsilon)
                    } else {
                        0.0
                    };
                    (origin, vec![0.0; nbins])
                })
                .collect(),
        })
        .collect();
    for (ei, e) in trellis.layer(layer).iter().enumerate() {
        let (src, dst) = if forward {
            (e.from as usize, e.to as usize)
        } else {
            (e.to as usize, e.from as usize)
        };
        let wgt = cur[src].mass * gains.weight(layer, ei);
        if wgt == 0.0 {
            continue;
        }
        let frac = wgt / mass[dst];
        for l in 0..d {
            let src_origin = cur[src].coords[l].0 + coords.at(layer, ei)[l];
            let dst_origin = out[dst].coords[l].0;
            let src_bins = cur[src].coords[l].1.clone();
            let leak = deposit(
                &mut out[dst].coords[l].1,
                dst_origin,
                &src_bins,
                src_origin,
                epsilon,
                frac,
            );
            *max_leak = (*max_leak).max(leak);
        }
    }
    let total: f64 = mass.iter().sum();
    for (s, node) in out.iter_mut().enumerate() {
        node.mass = if total > 0.0 { mass[s] / total } else { 0.0 };
    }
    out
}
