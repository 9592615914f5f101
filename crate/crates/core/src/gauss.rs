//! Gauss-approximated discrimination.
//!
//! Conditional moment extraction wraps the trellis passes into per-cell
//! multivariate Gaussians; the cellwise combination `N1·N2/N0` (or
//! `Π N_l / N0^(N-1)` for multiple coupling) is carried out in closed form
//! on precisions, means and log-determinants; the iterative decoder
//! replaces plain belief propagation's transfer update by the constrained
//! cross-entropy minimization, which clips excess constituent belief.

use crate::linalg::SymMat;
use crate::passes::{
    conditional_moments, CoordDeltas, DiscriminatorState, MomentOrder, MomentTable,
};
use crate::trellis::{half_log2_ratio, CoupledTrellises, GainTable, Trellis};
use crate::{Error, Result};

/// Relative eigenvalue floor for inverting input covariances.
const INPUT_FLOOR: f64 = 1e-12;
/// Relative variance threshold below which a coordinate is dropped.
const VARIANCE_DROP: f64 = 1e-12;
/// A coordinate whose cells have standard deviation below this fraction
/// of their mean spread is treated as a collection of point masses.
const POINT_MASS_DROP: f64 = 0.05;
/// Relative eigenvalue floor (times the trace) for a combined precision
/// that fails to be positive definite.
const PRECISION_FLOOR: f64 = 1e-9;
/// Transfer values are clamped here, as in plain belief propagation.
const TRANSFER_CLAMP: f64 = 500.0;

/// Mass, mean and covariance of the correlation coordinates for one
/// `(position, symbol)` cell.
#[derive(Debug, Clone)]
pub struct GaussCell {
    pub mass: f64,
    pub mean: Vec<f64>,
    pub cov: SymMat,
}

impl GaussCell {
    pub fn d(&self) -> usize {
        self.mean.len()
    }
}

/// Per-position cells, `[i][0] = +1`, `[i][1] = -1`; `None` marks an
/// unreachable cell.
pub type CellTable = Vec<[Option<GaussCell>; 2]>;

fn cells_from_moments(table: MomentTable) -> CellTable {
    table
        .cells
        .into_iter()
        .map(|pair| {
            pair.map(|cell| {
                cell.map(|c| {
                    let cov = c.covariance();
                    GaussCell {
                        mass: c.mass,
                        mean: c.mean,
                        cov,
                    }
                })
            })
        })
        .collect()
}

/// Moment tables for every constituent and the unconstrained measure.
#[derive(Debug, Clone)]
pub struct GaussMoments {
    /// Per constituent, in overall coordinates.
    pub constituents: Vec<CellTable>,
    pub uncoded: CellTable,
    /// Discriminator vector indices carried as coordinates (identically
    /// zero vectors are degenerate and dropped).
    pub active: Vec<usize>,
}

/// Extract per-cell Gaussian moments for all constituent measures and the
/// unconstrained measure of the discriminator.
pub fn gauss_moments(ct: &CoupledTrellises, m: &DiscriminatorState) -> Result<GaussMoments> {
    let n = ct.n();
    if m.n() != n {
        return Err(Error::Dimension("discriminator length != n".into()));
    }
    if m.transfer().len() != ct.num_constituents() {
        return Err(Error::Dimension(
            "one transfer vector per constituent required".into(),
        ));
    }
    let active: Vec<usize> = m
        .vectors()
        .enumerate()
        .filter(|(_, v)| v.iter().any(|&x| x != 0.0))
        .map(|(i, _)| i)
        .collect();
    let vectors: Vec<&[f64]> = m.vectors().collect();
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
        let coords = CoordDeltas::from_vectors(trellis, &refs)?;
        let table = conditional_moments(
            trellis,
            &GainTable::correlation(trellis, &gain)?,
            &coords,
            MomentOrder::MeanAndCovariance,
        );
        let cells = cells_from_moments(table);
        let mut scattered: CellTable = vec![[None, None]; n];
        for (j, pair) in cells.into_iter().enumerate() {
            scattered[code.permutation(l)[j]] = pair;
        }
        constituents.push(scattered);
    }

    let unc = ct.unconstrained();
    let refs: Vec<&[f64]> = active.iter().map(|&v| vectors[v]).collect();
    let coords = CoordDeltas::from_vectors(unc, &refs)?;
    let uncoded = cells_from_moments(conditional_moments(
        unc,
        &GainTable::correlation(unc, &m.measure_gain(None))?,
        &coords,
        MomentOrder::MeanAndCovariance,
    ));
    Ok(GaussMoments {
        constituents,
        uncoded,
        active,
    })
}

/// Channel-detached moments on an ISI trellis: coordinate 0 is the channel
/// log-likelihood `u0 = log2 P(c|r)` accumulated from the edge metrics
/// `-(log2 e / 2σ²)(r_i - v_e)²` (up to an additive constant that cancels
/// in every ratio), the remaining coordinates are the transfer vectors.
/// The measure itself is weighted by `weight` only — the discrimination is
/// detached from the channel information.
pub fn channel_detached_moments(
    trellis: &Trellis,
    observed: &[f64],
    sigma2: f64,
    weight: &[f64],
    transfer: &[Vec<f64>],
) -> Result<CellTable> {
    let chan = GainTable::isi(trellis, observed, sigma2)?;
    let mut coords = CoordDeltas::empty(trellis);
    coords.push_edge_values(trellis, &chan)?;
    for w in transfer {
        coords.push_vector(trellis, w)?;
    }
    let table = conditional_moments(
        trellis,
        &GainTable::correlation(trellis, weight)?,
        &coords,
        MomentOrder::MeanAndCovariance,
    );
    Ok(cells_from_moments(table))
}

/// Detail of one cellwise Gaussian combination.
#[derive(Debug, Clone)]
pub struct CellCombine {
    /// `ln` of the combined integral including the mass factors.
    pub ln_mass: f64,
    /// The combination constant `C⊠` alone (natural log domain).
    pub c_box: f64,
    pub mean: Vec<f64>,
    pub cov: SymMat,
    /// Indices (into the cell coordinate space) that survived the
    /// degenerate-coordinate drop.
    pub kept: Vec<usize>,
    /// Eigenvalue flooring was applied somewhere in this cell.
    pub regularized: bool,
}

/// Coordinates usable for a Gaussian combination of the given cells.
///
/// Two kinds of degeneracy are dropped. A coordinate that is numerically
/// deterministic in some cell has a singular covariance. A coordinate
/// whose cells are nearly point masses far apart (standard deviation well
/// below the spread of the cell means) has no meaningful Gaussian
/// density quotient: the continuous model breaks down on what is a
/// handful of lattice points, and the quotient rewards regions where the
/// denominator is thin. Both degenerate directions fall back to the plain
/// mass ratio, i.e. to ordinary belief combination.
pub fn kept_coordinates(cells: &[&GaussCell]) -> Vec<usize> {
    let d_full = cells.first().map_or(0, |c| c.d());
    let scale = {
        let mut s: f64 = 0.0;
        for c in cells {
            for j in 0..d_full {
                s = s.max(c.cov.get(j, j).abs());
            }
        }
        s.max(1.0)
    };
    (0..d_full)
        .filter(|&j| {
            let mut sigma_min = f64::INFINITY;
            let mut mu_lo = f64::INFINITY;
            let mut mu_hi = f64::NEG_INFINITY;
            for c in cells {
                let var = c.cov.get(j, j);
                if var <= VARIANCE_DROP * scale {
                    return false;
                }
                sigma_min = sigma_min.min(var.sqrt());
                mu_lo = mu_lo.min(c.mean[j]);
                mu_hi = mu_hi.max(c.mean[j]);
            }
            sigma_min >= POINT_MASS_DROP * (mu_hi - mu_lo)
        })
        .collect()
}

/// Combine one `(i, x)` cell: `Π_l N_l / N0^(N-1)` with an optional
/// exponential tilt `exp(t·u)` integrated against the result.
pub fn combine_gauss_cells(
    cells: &[&GaussCell],
    uncoded: &GaussCell,
    tilt: Option<&[f64]>,
) -> Result<CellCombine> {
    let mut all: Vec<&GaussCell> = cells.to_vec();
    all.push(uncoded);
    let kept = kept_coordinates(&all);
    combine_with_kept(cells, uncoded, &kept, tilt)
}

/// Closed-form symmetric inverse and natural-log determinant for
/// dimensions up to 3, with positive definiteness checked through the
/// leading principal minors (the pivot-magnitude guard in minor form).
/// Returns `None` when the matrix fails the guard.
fn small_inv_logdet(a: &[f64], d: usize, rel_floor: f64) -> Option<([f64; 9], f64)> {
    let mut inv = [0.0f64; 9];
    let scale = (0..d).fold(0.0f64, |m, i| m.max(a[i * d + i].abs())).max(1e-300);
    let guard = rel_floor * scale;
    match d {
        1 => {
            if a[0] <= guard {
                return None;
            }
            inv[0] = 1.0 / a[0];
            Some((inv, a[0].ln()))
        }
        2 => {
            let det = a[0] * a[3] - a[1] * a[2];
            if a[0] <= guard || det <= guard * a[0] {
                return None;
            }
            let inv_det = 1.0 / det;
            inv[0] = a[3] * inv_det;
            inv[1] = -a[1] * inv_det;
            inv[2] = -a[2] * inv_det;
            inv[3] = a[0] * inv_det;
            Some((inv, det.ln()))
        }
        3 => {
            let m2 = a[0] * a[4] - a[1] * a[3];
            let c0 = a[4] * a[8] - a[5] * a[7];
            let c1 = a[5] * a[6] - a[3] * a[8];
            let c2 = a[3] * a[7] - a[4] * a[6];
            let det = a[0] * c0 + a[1] * c1 + a[2] * c2;
            if a[0] <= guard || m2 <= guard * a[0] || det <= guard * m2 {
                return None;
            }
            let inv_det = 1.0 / det;
            inv[0] = c0 * inv_det;
            inv[1] = (a[2] * a[7] - a[1] * a[8]) * inv_det;
            inv[2] = (a[1] * a[5] - a[2] * a[4]) * inv_det;
            inv[3] = c1 * inv_det;
            inv[4] = (a[0] * a[8] - a[2] * a[6]) * inv_det;
            inv[5] = (a[2] * a[3] - a[0] * a[5]) * inv_det;
            inv[6] = c2 * inv_det;
            inv[7] = (a[1] * a[6] - a[0] * a[7]) * inv_det;
            inv[8] = (a[0] * a[4] - a[1] * a[3]) * inv_det;
            Some((inv, det.ln()))
        }
        _ => None,
    }
}

/// Stack-allocated combination for `kept.len() <= 3` (the common case of
/// two-constituent coupling). Returns `None` when any matrix fails its
/// positive definiteness guard; the caller then takes the generic path.
fn combine_small(
    cells: &[&GaussCell],
    uncoded: &GaussCell,
    kept: &[usize],
    tilt: Option<&[f64]>,
) -> Option<CellCombine> {
    let d = kept.len();
    if d == 0 || d > 3 {
        return None;
    }
    let nc = cells.len();
    let extract = |c: &GaussCell| -> ([f64; 9], [f64; 3]) {
        let mut a = [0.0f64; 9];
        let mut mu = [0.0f64; 3];
        for (bi, &j) in kept.iter().enumerate() {
            mu[bi] = c.mean[j];
            for (bk, &k) in kept.iter().enumerate() {
                a[bi * d + bk] = c.cov.get(j, k);
            }
        }
        (a, mu)
    };
    let mat_vec = |m: &[f64; 9], v: &[f64; 3]| -> [f64; 3] {
        let mut out = [0.0f64; 3];
        for i in 0..d {
            for j in 0..d {
                out[i] += m[i * d + j] * v[j];
            }
        }
        out
    };
    let quad = |m: &[f64; 9], v: &[f64; 3]| -> f64 {
        let mv = mat_vec(m, v);
        (0..d).map(|i| v[i] * mv[i]).sum()
    };

    let mut prec_sum = [0.0f64; 9];
    let mut mu_b_sum = [0.0f64; 3];
    let mut quad_sum = 0.0;
    let mut logdet_sum = 0.0;
    let mut mass_term = 0.0;
    for c in cells {
        let (a, mu) = extract(c);
        let (b, logdet) = small_inv_logdet(&a, d, INPUT_FLOOR)?;
        for k in 0..d * d {
            prec_sum[k] += b[k];
        }
        let mb = mat_vec(&b, &mu);
        for k in 0..d {
            mu_b_sum[k] += mb[k];
        }
        quad_sum += (0..d).map(|i| mu[i] * mb[i]).sum::<f64>();
        logdet_sum += logdet;
        mass_term += c.mass.ln();
    }
    let (a0, mu0) = extract(uncoded);
    let (b0, logdet0) = small_inv_logdet(&a0, d, INPUT_FLOOR)?;
    let nm1 = nc as f64 - 1.0;
    mass_term -= nm1 * uncoded.mass.ln();

    let mut b_box = [0.0f64; 9];
    for k in 0..d * d {
        b_box[k] = prec_sum[k] - nm1 * b0[k];
    }
    let (a_box, logdet_b_box) = small_inv_logdet(&b_box, d, PRECISION_FLOOR)?;
    let logdet_a_box = -logdet_b_box;
    let mb0 = mat_vec(&b0, &mu0);
    let mut lin = [0.0f64; 3];
    for k in 0..d {
        lin[k] = mu_b_sum[k] - nm1 * mb0[k];
    }
    let mu_box = mat_vec(&a_box, &lin);
    let quad0 = (0..d).map(|i| mu0[i] * mb0[i]).sum::<f64>();
    let two_c = quad(&b_box, &mu_box) + nm1 * quad0 - quad_sum
        - (logdet_sum - logdet_a_box - nm1 * logdet0);
    let mut c_box = 0.5 * two_c;
    if let Some(t) = tilt {
        let mut tk = [0.0f64; 3];
        for (bi, &j) in kept.iter().enumerate() {
            tk[bi] = t[j];
        }
        c_box += (0..d).map(|i| tk[i] * mu_box[i]).sum::<f64>() + 0.5 * quad(&a_box, &tk);
    }
    let mut cov = SymMat::zeros(d);
    for i in 0..d {
        for j in 0..d {
            cov.set(i, j, a_box[i * d + j]);
        }
    }
    Some(CellCombine {
        ln_mass: mass_term + c_box,
        c_box,
        mean: mu_box[..d].to_vec(),
        cov,
        kept: kept.to_vec(),
        regularized: false,
    })
}

/// [`combine_gauss_cells`] with an externally fixed coordinate subset, so
/// both symbol values of one position share the same subspace.
pub fn combine_with_kept(
    cells: &[&GaussCell],
    uncoded: &GaussCell,
    kept: &[usize],
    tilt: Option<&[f64]>,
) -> Result<CellCombine> {
    let nc = cells.len();
    if nc == 0 {
        return Err(Error::Dimension("at least one constituent cell".into()));
    }
    let d_full = uncoded.d();
    if cells.iter().any(|c| c.d() != d_full) {
        return Err(Error::Dimension("cells disagree on coordinate count".into()));
    }
    if let Some(done) = combine_small(cells, uncoded, kept, tilt) {
        return Ok(done);
    }
    let kept = kept.to_vec();
    let d = kept.len();
    let sub = |c: &GaussCell| -> (Vec<f64>, SymMat) {
        let mean: Vec<f64> = kept.iter().map(|&j| c.mean[j]).collect();
        let mut a = SymMat::zeros(d);
        for (bi, &j) in kept.iter().enumerate() {
            for (bk, &k) in kept.iter().enumerate() {
                a.set(bi, bk, c.cov.get(j, k));
            }
        }
        (mean, a)
    };

    let mass_term = {
        let mut t = 0.0;
        for c in cells {
            t += c.mass.ln();
        }
        t - (nc as f64 - 1.0) * uncoded.mass.ln()
    };

    if d == 0 {
        // Fully degenerate: only the mass ratio remains.
        let mut c_box = 0.0;
        if let Some(_t) = tilt {
            // All coordinates deterministic: the tilt contributes the
            // common point value, which is the uncoded mean (all cells
            // collapse there after the drop). Use the first cell's mean.
            c_box = tilt
                .unwrap()
                .iter()
                .zip(&cells[0].mean)
                .map(|(t, mu)| t * mu)
                .sum();
        }
        return Ok(CellCombine {
            ln_mass: mass_term + c_box,
            c_box,
            mean: Vec::new(),
            cov: SymMat::zeros(0),
            kept,
            regularized: false,
        });
    }

    let mut regularized = false;
    let mut prec_sum = SymMat::zeros(d);
    let mut mu_b_sum = vec![0.0f64; d];
    let mut quad_sum = 0.0;
    let mut logdet_sum = 0.0;
    for c in cells {
        let (mu, a) = sub(c);
        let (b, logdet, fl) = a.inv_logdet_floored(INPUT_FLOOR);
        regularized |= fl;
        prec_sum = prec_sum.add(&b);
        let mb = b.mul_vec(&mu);
        for j in 0..d {
            mu_b_sum[j] += mb[j];
        }
        quad_sum += b.quad(&mu, &mu);
        logdet_sum += logdet;
    }
    let (mu0, a0) = sub(uncoded);
    let (b0, logdet0, fl0) = a0.inv_logdet_floored(INPUT_FLOOR);
    regularized |= fl0;
    let nm1 = nc as f64 - 1.0;
    let b_box_raw = prec_sum.sub(&b0.scale(nm1));

    // Positive-definiteness guard: Cholesky with a pivot guard on the
    // fast path, eigenvalues floored at 1e-9 · trace otherwise.
    let (b_box, a_box, logdet_a_box) = match b_box_raw.cholesky(PRECISION_FLOOR) {
        Some(_) => {
            let (inv, logdet, _) = b_box_raw.inv_logdet_floored(PRECISION_FLOOR);
            (b_box_raw.clone(), inv, -logdet)
        }
        None => {
            let (mut vals, vecs) = b_box_raw.eigen();
            let floor = PRECISION_FLOOR * b_box_raw.trace().abs().max(1e-300);
            for v in vals.iter_mut() {
                if *v < floor {
                    *v = floor;
                }
            }
            regularized = true;
            let b = SymMat::from_eigen(&vals, &vecs);
            let inv_vals: Vec<f64> = vals.iter().map(|v| 1.0 / v).collect();
            let a = SymMat::from_eigen(&inv_vals, &vecs);
            let logdet_a: f64 = -vals.iter().map(|v| v.ln()).sum::<f64>();
            (b, a, logdet_a)
        }
    };

    let mb0 = b0.mul_vec(&mu0);
    let lin: Vec<f64> = (0..d).map(|j| mu_b_sum[j] - nm1 * mb0[j]).collect();
    let mu_box = a_box.mul_vec(&lin);

    let two_c = b_box.quad(&mu_box, &mu_box) + nm1 * b0.quad(&mu0, &mu0) - quad_sum
        - (logdet_sum - logdet_a_box - nm1 * logdet0);
    let mut c_box = 0.5 * two_c;
    if let Some(t) = tilt {
        let tk: Vec<f64> = kept.iter().map(|&j| t[j]).collect();
        c_box += tk
            .iter()
            .zip(&mu_box)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            + 0.5 * a_box.quad(&tk, &tk);
    }
    Ok(CellCombine {
        ln_mass: mass_term + c_box,
        c_box,
        mean: mu_box,
        cov: a_box,
        kept,
        regularized,
    })
}

/// Per-position output of the Gaussian combination.
#[derive(Debug, Clone)]
pub struct GaussCombination {
    /// Correction ratios `L̂⊠_i` (the discriminated excess over plain
    /// belief combination).
    pub l_boxtimes: Vec<f64>,
    /// Approximated discriminated ratios `L̂⊗_i`.
    pub l_discrim: Vec<f64>,
    /// Full constituent ratios from the cell masses,
    /// `L^(l)_i = ½ log2 m_l(i,+)/m_l(i,-)`.
    pub constituent_l: Vec<Vec<f64>>,
    /// A cell of this position was regularized or degenerate-dropped.
    pub regularized: Vec<bool>,
    /// Transfer parameters per position implied by the cell statistics
    /// (means + correlations per symbol value, plus the transfer value).
    pub params_per_position: usize,
}

/// Assemble one position's ratios. A regularized position falls back to
/// the plain belief product (the Gaussian quotient there is invalid and
/// its floored constant would inject arbitrarily wrong beliefs), so the
/// correction is suppressed and only the mass ratio survives.
fn push_position(
    l_discrim: &mut Vec<f64>,
    l_boxtimes: &mut Vec<f64>,
    ln_mass: [f64; 2],
    c_box: [f64; 2],
    have: [bool; 2],
    regularized: bool,
) {
    if regularized {
        let masses = [ln_mass[0] - c_box[0], ln_mass[1] - c_box[1]];
        l_discrim.push(ratio_from_ln(masses[0], masses[1]));
        l_boxtimes.push(0.0);
        return;
    }
    l_discrim.push(ratio_from_ln(ln_mass[0], ln_mass[1]));
    l_boxtimes.push(match (have[0], have[1]) {
        (true, true) => 0.5 * std::f64::consts::LOG2_E * (c_box[0] - c_box[1]),
        (true, false) => f64::INFINITY,
        (false, true) => f64::NEG_INFINITY,
        (false, false) => 0.0,
    });
}

fn ratio_from_ln(ln_plus: f64, ln_minus: f64) -> f64 {
    match (ln_plus.is_finite(), ln_minus.is_finite()) {
        (true, true) => 0.5 * std::f64::consts::LOG2_E * (ln_plus - ln_minus),
        (false, true) => f64::NEG_INFINITY,
        (true, false) => f64::INFINITY,
        (false, false) => 0.0,
    }
}

/// Combine constituent and uncoded cell tables for `N ≥ 2` coupling:
/// precision `B⊠ = Σ_l B_l - (N-1)·B`, generalized mean and constant.
pub fn multi_couple_combine(
    constituents: &[CellTable],
    uncoded: &CellTable,
    tilt: Option<&[f64]>,
) -> Result<GaussCombination> {
    let nc = constituents.len();
    if nc < 2 {
        return Err(Error::Dimension("multiple coupling needs N >= 2".into()));
    }
    let n = uncoded.len();
    let d_full = uncoded
        .iter()
        .flat_map(|p| p.iter().flatten())
        .map(|c| c.d())
        .next()
        .unwrap_or(0);
    let mut l_boxtimes = Vec::with_capacity(n);
    let mut l_discrim = Vec::with_capacity(n);
    let mut regularized = vec![false; n];
    for i in 0..n {
        let mut ln_mass = [f64::NEG_INFINITY; 2];
        let mut c_box = [0.0f64; 2];
        let mut have = [false; 2];
        // Both symbol values must share one coordinate subspace, otherwise
        // their combination constants are not comparable.
        let all: Vec<&GaussCell> = constituents
            .iter()
            .chain(std::iter::once(uncoded))
            .flat_map(|t| t[i].iter().flatten())
            .collect();
        let kept = kept_coordinates(&all);
        for x in 0..2 {
            let cells: Vec<&GaussCell> = constituents
                .iter()
                .filter_map(|t| t[i][x].as_ref())
                .collect();
            let Some(unc) = uncoded[i][x].as_ref() else {
                return Err(Error::Internal(format!(
                    "unconstrained cell empty at position {i}"
                )));
            };
            if cells.len() < nc {
                continue;
            }
            let combined = combine_with_kept(&cells, unc, &kept, tilt)?;
            regularized[i] |= combined.regularized || combined.kept.len() < d_full;
            ln_mass[x] = combined.ln_mass;
            c_box[x] = combined.c_box;
            have[x] = true;
        }
        push_position(
            &mut l_discrim,
            &mut l_boxtimes,
            ln_mass,
            c_box,
            have,
            regularized[i],
        );
    }
    let constituent_l = constituent_ratios(constituents, n);
    Ok(GaussCombination {
        l_boxtimes,
        l_discrim,
        constituent_l,
        regularized,
        params_per_position: 2 * (d_full + d_full * (d_full + 1) / 2) + 1,
    })
}

/// Two-constituent combination per the closed-form rules
/// `[Â⊠]⁻¹ = B1 + B2 - B`, `μ̂⊠ = (μ1 B1 + μ2 B2 - μ B) Â⊠` and the
/// matching constant; written out directly rather than through the `N`-ary
/// path so the two can check each other.
pub fn gauss_combine(
    g1: &CellTable,
    g2: &CellTable,
    g0: &CellTable,
    tilt: Option<&[f64]>,
) -> Result<GaussCombination> {
    let n = g0.len();
    if g1.len() != n || g2.len() != n {
        return Err(Error::Dimension("cell tables disagree on length".into()));
    }
    let d_full = g0
        .iter()
        .flat_map(|p| p.iter().flatten())
        .map(|c| c.d())
        .next()
        .unwrap_or(0);
    let mut l_boxtimes = Vec::with_capacity(n);
    let mut l_discrim = Vec::with_capacity(n);
    let mut regularized = vec![false; n];
    for i in 0..n {
        let mut ln_mass = [f64::NEG_INFINITY; 2];
        let mut c_box = [0.0f64; 2];
        let mut have = [false; 2];
        let all: Vec<&GaussCell> = [g1, g2, g0]
            .iter()
            .flat_map(|t| t[i].iter().flatten())
            .collect();
        let kept = kept_coordinates(&all);
        for x in 0..2 {
            let (Some(c1), Some(c2)) = (g1[i][x].as_ref(), g2[i][x].as_ref()) else {
                continue;
            };
            let Some(c0) = g0[i][x].as_ref() else {
                return Err(Error::Internal(format!(
                    "unconstrained cell empty at position {i}"
                )));
            };
            let combined = combine_with_kept(&[c1, c2], c0, &kept, tilt)?;
            regularized[i] |= combined.regularized || combined.kept.len() < d_full;
            ln_mass[x] = combined.ln_mass;
            c_box[x] = combined.c_box;
            have[x] = true;
        }
        push_position(
            &mut l_discrim,
            &mut l_boxtimes,
            ln_mass,
            c_box,
            have,
            regularized[i],
        );
    }
    let constituent_l = constituent_ratios(&[g1.clone(), g2.clone()], n);
    Ok(GaussCombination {
        l_boxtimes,
        l_discrim,
        constituent_l,
        regularized,
        params_per_position: 2 * (d_full + d_full * (d_full + 1) / 2) + 1,
    })
}

fn constituent_ratios(tables: &[CellTable], n: usize) -> Vec<Vec<f64>> {
    tables
        .iter()
        .map(|t| {
            (0..n)
                .map(|i| {
                    let p = t[i][0].as_ref().map_or(0.0, |c| c.mass);
                    let q = t[i][1].as_ref().map_or(0.0, |c| c.mass);
                    half_log2_ratio(p, q)
                })
                .collect()
        })
        .collect()
}

// ---------------------------------------------------------------------
// Constrained update and the iterative decoder
// ---------------------------------------------------------------------

/// Which branch of the constrained minimization produced the value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintCase {
    /// The unconstrained minimizer `v = L̂⊗` was feasible.
    Free,
    /// Contradicting signs force `v = 0`.
    Zero,
    /// Same sign but excess magnitude clips to `v = L^(l)`.
    Clip,
}

/// Minimize the discriminated cross entropy in one coordinate under the
/// constituent cross-entropy constraint
/// `|v| ≤ |L^(l)|, sign(v) = sign(L^(l))`.
pub fn constrained_update(l_discrim: f64, l_constituent: f64) -> (f64, ConstraintCase) {
    if l_discrim == 0.0 {
        return (0.0, ConstraintCase::Free);
    }
    if l_discrim.signum() != l_constituent.signum() || l_constituent == 0.0 {
        return (0.0, ConstraintCase::Zero);
    }
    if l_discrim.abs() <= l_constituent.abs() {
        (l_discrim, ConstraintCase::Free)
    } else {
        (l_constituent, ConstraintCase::Clip)
    }
}

/// Flat moment tables for the two-constituent decoder fast path, rows in
/// overall coordinate order.
struct FlatMeasures {
    constituents: [crate::passes::FlatMoments; 2],
    uncoded: crate::passes::FlatMoments,
    d: usize,
}

fn scatter_flat(
    flat: crate::passes::FlatMoments,
    perm: &[usize],
) -> crate::passes::FlatMoments {
    let d = flat.d;
    let n = perm.len();
    let mut out = crate::passes::FlatMoments {
        d,
        mass: vec![0.0; n * 2],
        mean: vec![0.0; n * 2 * d],
        raw2: vec![0.0; n * 2 * d * d],
    };
    for (j, &p) in perm.iter().enumerate() {
        for x in 0..2 {
            let src = j * 2 + x;
            let dst = p * 2 + x;
            out.mass[dst] = flat.mass[src];
            out.mean[dst * d..(dst + 1) * d]
                .copy_from_slice(&flat.mean[src * d..(src + 1) * d]);
            out.raw2[dst * d * d..(dst + 1) * d * d]
                .copy_from_slice(&flat.raw2[src * d * d..(src + 1) * d * d]);
        }
    }
    out
}

fn flat_measures(ct: &CoupledTrellises, m: &DiscriminatorState) -> Result<FlatMeasures> {
    use crate::passes::conditional_moments_flat;
    let code = ct.code();
    let active: Vec<usize> = m
        .vectors()
        .enumerate()
        .filter(|(_, v)| v.iter().any(|&x| x != 0.0))
        .map(|(i, _)| i)
        .collect();
    let vectors: Vec<&[f64]> = m.vectors().collect();
    let mut tables = Vec::with_capacity(2);
    for l in 0..2 {
        let trellis = ct.trellis(l);
        let gain = code.gather(l, &m.measure_gain(Some(l)));
        let gathered: Vec<Vec<f64>> = active
            .iter()
            .map(|&v| code.gather(l, vectors[v]))
            .collect();
        let refs: Vec<&[f64]> = gathered.iter().map(|v| v.as_slice()).collect();
        let coords = CoordDeltas::from_vectors(trellis, &refs)?;
        let flat = conditional_moments_flat(
            trellis,
            &GainTable::correlation(trellis, &gain)?,
            &coords,
            MomentOrder::MeanAndCovariance,
        );
        tables.push(scatter_flat(flat, code.permutation(l)));
    }
    let unc = ct.unconstrained();
    let refs: Vec<&[f64]> = active.iter().map(|&v| vectors[v]).collect();
    let coords = CoordDeltas::from_vectors(unc, &refs)?;
    let uncoded = conditional_moments_flat(
        unc,
        &GainTable::correlation(unc, &m.measure_gain(None))?,
        &coords,
        MomentOrder::MeanAndCovariance,
    );
    let d = uncoded.d;
    let mut it = tables.into_iter();
    Ok(FlatMeasures {
        constituents: [it.next().unwrap(), it.next().unwrap()],
        uncoded,
        d,
    })
}

/// Row-level combination over flat moment tables; same algebra as
/// [`combine_with_kept`] restricted to `d <= 3`, but with no per-cell
/// allocation. Returns `(ln_mass, c_box)` or `None` when a matrix fails
/// its positive definiteness guard.
#[allow(clippy::too_many_arguments)]
fn combine_rows_small(
    masses: &[f64],
    means: &[&[f64]],
    raws: &[&[f64]],
    d_full: usize,
    kept: &[usize],
) -> Option<(f64, f64)> {
    let d = kept.len();
    if d > 3 {
        return None;
    }
    let nc = masses.len() - 1;
    let extract = |mean: &[f64], raw: &[f64]| -> ([f64; 9], [f64; 3]) {
        let mut a = [0.0f64; 9];
        let mut mu = [0.0f64; 3];
        for (bi, &j) in kept.iter().enumerate() {
            mu[bi] = mean[j];
            for (bk, &k) in kept.iter().enumerate() {
                a[bi * d + bk] = raw[j * d_full + k] - mean[j] * mean[k];
            }
        }
        (a, mu)
    };
    let mat_vec = |m: &[f64; 9], v: &[f64; 3]| -> [f64; 3] {
        let mut out = [0.0f64; 3];
        for i in 0..d {
            for j in 0..d {
                out[i] += m[i * d + j] * v[j];
            }
        }
        out
    };
    let mut mass_term = 0.0;
    if d == 0 {
        for &m in masses.iter().take(nc) {
            mass_term += m.ln();
        }
        mass_term -= (nc as f64 - 1.0) * masses[nc].ln();
        return Some((mass_term, 0.0));
    }
    let mut prec_sum = [0.0f64; 9];
    let mut mu_b_sum = [0.0f64; 3];
    let mut quad_sum = 0.0;
    let mut logdet_sum = 0.0;
    for c in 0..nc {
        let (a, mu) = extract(means[c], raws[c]);
        let (b, logdet) = small_inv_logdet(&a, d, INPUT_FLOOR)?;
        for k in 0..d * d {
            prec_sum[k] += b[k];
        }
        let mb = mat_vec(&b, &mu);
        for k in 0..d {
            mu_b_sum[k] += mb[k];
        }
        quad_sum += (0..d).map(|i| mu[i] * mb[i]).sum::<f64>();
        logdet_sum += logdet;
        mass_term += masses[c].ln();
    }
    let (a0, mu0) = extract(means[nc], raws[nc]);
    let (b0, logdet0) = small_inv_logdet(&a0, d, INPUT_FLOOR)?;
    let nm1 = nc as f64 - 1.0;
    mass_term -= nm1 * masses[nc].ln();
    let mut b_box = [0.0f64; 9];
    for k in 0..d * d {
        b_box[k] = prec_sum[k] - nm1 * b0[k];
    }
    let (a_box, logdet_b_box) = small_inv_logdet(&b_box, d, PRECISION_FLOOR)?;
    let mb0 = mat_vec(&b0, &mu0);
    let mut lin = [0.0f64; 3];
    for k in 0..d {
        lin[k] = mu_b_sum[k] - nm1 * mb0[k];
    }
    let mu_box = mat_vec(&a_box, &lin);
    let quad0 = (0..d).map(|i| mu0[i] * mb0[i]).sum::<f64>();
    let bm = mat_vec(&b_box, &mu_box);
    let quad_box = (0..d).map(|i| mu_box[i] * bm[i]).sum::<f64>();
    let two_c = quad_box + nm1 * quad0 - quad_sum - (logdet_sum + logdet_b_box - nm1 * logdet0);
    Some((mass_term + 0.5 * two_c, 0.5 * two_c))
}

/// One iteration's ratios straight from flat tables (two constituents).
fn combine_flat(meas: &FlatMeasures, n: usize) -> Result<(Vec<f64>, [Vec<f64>; 2], Vec<bool>)> {
    let d = meas.d;
    let mut l_discrim = Vec::with_capacity(n);
    let mut l_con = [Vec::with_capacity(n), Vec::with_capacity(n)];
    let mut regularized = vec![false; n];
    fn row<'a>(
        f: &'a crate::passes::FlatMoments,
        d: usize,
        i: usize,
        x: usize,
    ) -> (f64, &'a [f64], &'a [f64]) {
        let r = i * 2 + x;
        (
            f.mass[r],
            &f.mean[r * d..(r + 1) * d],
            &f.raw2[r * d * d..(r + 1) * d * d],
        )
    }
    for i in 0..n {
        // Shared kept set across both symbol values: the variance floor
        // and the point-mass rule, as in `kept_coordinates`.
        let mut scale: f64 = 1.0;
        for x in 0..2 {
            for f in meas.constituents.iter().chain([&meas.uncoded]) {
                let (mass, mean, raw) = row(f, d, i, x);
                if mass > 0.0 {
                    for j in 0..d {
                        scale = scale.max((raw[j * d + j] - mean[j] * mean[j]).abs());
                    }
                }
            }
        }
        let mut kept: Vec<usize> = Vec::with_capacity(d);
        'coord: for j in 0..d {
            let mut sigma_min = f64::INFINITY;
            let mut mu_lo = f64::INFINITY;
            let mut mu_hi = f64::NEG_INFINITY;
            for x in 0..2 {
                for f in meas.constituents.iter().chain([&meas.uncoded]) {
                    let (mass, mean, raw) = row(f, d, i, x);
                    if mass == 0.0 {
                        continue;
                    }
                    let var = raw[j * d + j] - mean[j] * mean[j];
                    if var <= VARIANCE_DROP * scale {
                        continue 'coord;
                    }
                    sigma_min = sigma_min.min(var.sqrt());
                    mu_lo = mu_lo.min(mean[j]);
                    mu_hi = mu_hi.max(mean[j]);
                }
            }
            if sigma_min >= POINT_MASS_DROP * (mu_hi - mu_lo) {
                kept.push(j);
            } else {
                regularized[i] = true;
            }
        }
        if kept.len() < d {
            regularized[i] = true;
        }
        let mut ln_mass = [f64::NEG_INFINITY; 2];
        let mut mass_only = [f64::NEG_INFINITY; 2];
        for x in 0..2 {
            let (m1, mu1, r1) = row(&meas.constituents[0], d, i, x);
            let (m2, mu2, r2) = row(&meas.constituents[1], d, i, x);
            let (m0, mu0, r0) = row(&meas.uncoded, d, i, x);
            if m0 == 0.0 {
                return Err(Error::Internal(format!(
                    "unconstrained cell empty at position {i}"
                )));
            }
            if m1 == 0.0 || m2 == 0.0 {
                continue;
            }
            mass_only[x] = m1.ln() + m2.ln() - m0.ln();
            match combine_rows_small(
                &[m1, m2, m0],
                &[mu1, mu2, mu0],
                &[r1, r2, r0],
                d,
                &kept,
            ) {
                Some((lm, _)) => ln_mass[x] = lm,
                None => {
                    regularized[i] = true;
                    ln_mass[x] = f64::NAN; // resolved below via suppression
                }
            }
        }
        if regularized[i] || ln_mass.iter().any(|v| v.is_nan()) {
            regularized[i] = true;
            l_discrim.push(ratio_from_ln(mass_only[0], mass_only[1]));
        } else {
            l_discrim.push(ratio_from_ln(ln_mass[0], ln_mass[1]));
        }
        for (c, lc) in l_con.iter_mut().enumerate() {
            let p = meas.constituents[c].mass[i * 2];
            let q = meas.constituents[c].mass[i * 2 + 1];
            lc.push(half_log2_ratio(p, q));
        }
    }
    Ok((l_discrim, l_con, regularized))
}

#[derive(Debug, Clone)]
pub struct GaussDiscrimOptions {
    pub max_iters: usize,
    /// Infinity-norm stop tolerance on a transfer vector update.
    pub tol: f64,
    pub with_trace: bool,
    /// Also stop once the decision pattern `sign(v)` has survived this
    /// many consecutive iterations unchanged (0 disables). The transfer
    /// vectors rarely stop moving in floating point even when the
    /// decision has long settled.
    pub stable_decision_iters: usize,
}

impl Default for GaussDiscrimOptions {
    fn default() -> Self {
        Self {
            max_iters: 50,
            tol: 1e-4,
            with_trace: false,
            stable_decision_iters: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GaussTraceRecord {
    pub iteration: usize,
    /// Constituent updated this iteration.
    pub constituent: usize,
    pub l_discrim: Vec<f64>,
    pub v: Vec<f64>,
    pub cases: Vec<ConstraintCase>,
    pub regularized: Vec<bool>,
    /// `Ĥ(C⊗‖m)` of the posterior that produced this update.
    pub entropy: f64,
}

#[derive(Debug, Clone)]
pub struct GaussDiscrimResult {
    pub decision: Vec<i8>,
    pub converged: bool,
    pub saturated: bool,
    pub iterations: usize,
    /// Transfer parameters per position and constituent (the cell means,
    /// correlations and masses that an implementation would exchange).
    pub params_per_position: usize,
    pub trace: Vec<GaussTraceRecord>,
}

impl GaussDiscrimResult {
    /// Trace rows as CSV: `iteration,i,l_discrim,v,case,regularized`.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,i,l_discrim,v,case,regularized\n");
        for rec in &self.trace {
            for i in 0..rec.v.len() {
                let case = match rec.cases[i] {
                    ConstraintCase::Zero => "0",
                    ConstraintCase::Clip => "clip",
                    ConstraintCase::Free => "free",
                };
                out.push_str(&format!(
                    "{},{},{:.6},{:.6},{},{}\n",
                    rec.iteration,
                    i,
                    rec.l_discrim[i],
                    rec.v[i],
                    case,
                    u8::from(rec.regularized[i])
                ));
            }
        }
        out
    }
}

/// Iterative decoding with Gauss-approximated discrimination.
///
/// Each iteration extracts fresh cell moments under the current
/// discriminator, combines them into `L̂⊗`, minimizes the discriminated
/// cross entropy per coordinate under the active constituent's constraint
/// and rewrites that constituent's transfer vector as `w^(l) = v - r -
/// Σ_{h≠l} w^(h)`. Stops when an update moves by at most `tol`.
pub fn gauss_discrim_decode(
    ct: &CoupledTrellises,
    r: &[f64],
    opts: &GaussDiscrimOptions,
) -> Result<GaussDiscrimResult> {
    let n = ct.n();
    let nc = ct.num_constituents();
    if nc < 2 {
        return Err(Error::Dimension("need at least two constituents".into()));
    }
    if r.len() != n {
        return Err(Error::Dimension("ratio vector length != n".into()));
    }
    if r.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("channel ratios".into()));
    }
    let mut w = vec![vec![0.0f64; n]; nc];
    let mut result = GaussDiscrimResult {
        decision: vec![1; n],
        converged: false,
        saturated: false,
        iterations: 0,
        params_per_position: 2 * ((nc + 1) + (nc + 1) * (nc + 2) / 2) + 1,
        trace: Vec::new(),
    };
    let mut v = vec![0.0f64; n];
    let mut cur = 0usize;
    let mut decision: Vec<i8> = vec![1; n];
    let mut stable_for = 0usize;
    let mut best_entropy = f64::INFINITY;
    let mut best_decision: Vec<i8> = vec![1; n];
    for iter in 1..=opts.max_iters {
        result.iterations = iter;
        let m = DiscriminatorState::new(r.to_vec(), w.clone())?;
        // Two-constituent coupling takes the allocation-free row path;
        // both compute the same combination.
        let (l_discrim, constituent_l, regularized) = if nc == 2 {
            let meas = flat_measures(ct, &m)?;
            let (ld, lc, reg) = combine_flat(&meas, n)?;
            (ld, lc.to_vec(), reg)
        } else {
            let moments = gauss_moments(ct, &m)?;
            let comb = multi_couple_combine(&moments.constituents, &moments.uncoded, None)?;
            (comb.l_discrim, comb.constituent_l, comb.regularized)
        };
        let mut cases = Vec::with_capacity(n);
        let mut delta = 0.0f64;
        let mut z = std::mem::take(&mut w[cur]);
        for i in 0..n {
            let (vi, case) = constrained_update(l_discrim[i], constituent_l[cur][i]);
            let vi = vi.clamp(-TRANSFER_CLAMP, TRANSFER_CLAMP);
            v[i] = vi;
            cases.push(case);
            let others: f64 = (0..nc).filter(|&h| h != cur).map(|h| w[h][i]).sum();
            let raw = vi - others - r[i];
            if raw.abs() > TRANSFER_CLAMP {
                result.saturated = true;
            }
            let new = raw.clamp(-TRANSFER_CLAMP, TRANSFER_CLAMP);
            delta = delta.max((new - z[i]).abs());
            z[i] = new;
        }
        w[cur] = z;
        let entropy = crate::discrim::cross_entropy(&l_discrim, &l_discrim);
        if opts.with_trace {
            result.trace.push(GaussTraceRecord {
                iteration: iter,
                constituent: cur,
                l_discrim: l_discrim.clone(),
                v: v.clone(),
                cases,
                regularized: regularized.clone(),
                entropy,
            });
        }
        let new_decision: Vec<i8> = v.iter().map(|&vi| if vi < 0.0 { -1 } else { 1 }).collect();
        if entropy <= best_entropy {
            best_entropy = entropy;
            best_decision = new_decision.clone();
        }
        if new_decision == decision {
            stable_for += 1;
        } else {
            stable_for = 0;
            decision = new_decision;
        }
        // Every constituent must have been updated at least once before a
        // quiet update counts as a fixed point; a long-stable decision
        // pattern also counts (the transfer values keep drifting below
        // decision relevance).
        if iter >= nc {
            if delta <= opts.tol {
                result.converged = !result.saturated;
                break;
            }
            if opts.stable_decision_iters > 0 && stable_for >= opts.stable_decision_iters {
                result.converged = true;
                break;
            }
        }
        cur = (cur + 1) % nc;
    }
    // An unconverged run returns the most resolved iterate instead of the
    // last one: the discriminated symbol entropy measures how many words
    // remain plausible, and oscillating runs pass through good states.
    result.decision = if result.converged {
        decision
    } else {
        best_decision
    };
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code::{bpsk, dual_couple, dual_couple_plain, identity_permutation, LinearCode};
    use crate::discrim::{hard_discrim_decode, tanh2, HardDiscrimOptions};
    use crate::gf2::BinaryMatrix;
    use crate::trellis::build_isi_trellis;
    use rand::{seq::SliceRandom, Rng, SeedableRng};

    fn coupled_pair(rows1: &[&str], rows2: &[&str]) -> CoupledTrellises {
        let c1 = LinearCode::from_parity(BinaryMatrix::from_rows(rows1));
        let c2 = LinearCode::from_parity(BinaryMatrix::from_rows(rows2));
        CoupledTrellises::new(dual_couple_plain(vec![c1, c2]).unwrap()).unwrap()
    }

    fn random_spd(rng: &mut rand_chacha::ChaCha8Rng, d: usize) -> SymMat {
        // A = M Mᵀ + εI.
        let mut m = vec![0.0; d * d];
        for v in m.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let mut a = SymMat::zeros(d);
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += m[i * d + k] * m[j * d + k];
                }
                a.set(i, j, acc + if i == j { 0.3 } else { 0.0 });
            }
        }
        a
    }

    fn random_cell(rng: &mut rand_chacha::ChaCha8Rng, d: usize) -> GaussCell {
        GaussCell {
            mass: 1.0,
            mean: (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            cov: random_spd(rng, d),
        }
    }

    /// Make a triple (g1, g2, g0) with guaranteed positive definite
    /// combined precision: B0 = τ(B1 + B2), τ < 1.
    fn pd_triple(
        rng: &mut rand_chacha::ChaCha8Rng,
        d: usize,
    ) -> (GaussCell, GaussCell, GaussCell) {
        let g1 = random_cell(rng, d);
        let g2 = random_cell(rng, d);
        let tau = rng.gen_range(0.1..0.8);
        let b1 = g1.cov.inv_logdet_floored(1e-14).0;
        let b2 = g2.cov.inv_logdet_floored(1e-14).0;
        let b0 = b1.add(&b2).scale(tau);
        let a0 = b0.inv_logdet_floored(1e-14).0;
        let g0 = GaussCell {
            mass: 1.0,
            mean: (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            cov: a0,
        };
        (g1, g2, g0)
    }

    fn ln_gauss_pdf(u: &[f64], mean: &[f64], cov: &SymMat) -> f64 {
        let d = mean.len();
        let (b, logdet, _) = cov.inv_logdet_floored(1e-14);
        let diff: Vec<f64> = u.iter().zip(mean).map(|(a, b)| a - b).collect();
        let q = b.quad(&diff, &diff);
        -0.5 * q - 0.5 * logdet - 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln()
    }

    /// `n1·n2·…/n0^(count-1)` evaluated through the log domain so thin
    /// denominators cannot produce inf/inf.
    fn quotient_pdf(u: &[f64], numerators: &[&GaussCell], denominator: &GaussCell) -> f64 {
        let mut ln = 0.0;
        for g in numerators {
            ln += ln_gauss_pdf(u, &g.mean, &g.cov);
        }
        ln -= (numerators.len() as f64 - 1.0)
            * ln_gauss_pdf(u, &denominator.mean, &denominator.cov);
        ln.exp()
    }

    #[test]
    fn zero_transfers_leave_one_active_coordinate() {
        let ct = coupled_pair(&["110110", "011011"], &["101101", "010110"]);
        let r = vec![0.5, -0.2, 0.8, 0.3, -0.6, 0.1];
        let m = DiscriminatorState::new(r, vec![vec![0.0; 6], vec![0.0; 6]]).unwrap();
        let moments = gauss_moments(&ct, &m).unwrap();
        assert_eq!(moments.active, vec![0]);
        for pair in &moments.uncoded {
            for cell in pair.iter().flatten() {
                assert_eq!(cell.d(), 1);
            }
        }
    }

    #[test]
    fn uncoded_cell_means_closed_form() {
        // μ0(i, x) = r_i·x + Σ_{j≠i} r_j·tanh2(r_j) on the unconstrained set.
        let ct = coupled_pair(&["1101", "0110"], &["1011", "0101"]);
        let r = vec![0.7, -0.4, 1.1, 0.2];
        let m = DiscriminatorState::new(r.clone(), vec![vec![0.0; 4], vec![0.0; 4]]).unwrap();
        let moments = gauss_moments(&ct, &m).unwrap();
        for i in 0..4 {
            for (xi, x) in [(0usize, 1.0f64), (1, -1.0)] {
                let cell = moments.uncoded[i][xi].as_ref().unwrap();
                let want: f64 = r[i] * x
                    + (0..4)
                        .filter(|&j| j != i)
                        .map(|j| r[j] * tanh2(r[j]))
                        .sum::<f64>();
                assert!((cell.mean[0] - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn cell_covariances_are_psd() {
        let ct = coupled_pair(&["110110", "011011"], &["101101", "010110"]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(211);
        let r: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let w1: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w2: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = DiscriminatorState::new(r, vec![w1, w2]).unwrap();
        let moments = gauss_moments(&ct, &m).unwrap();
        for table in moments.constituents.iter().chain([&moments.uncoded]) {
            for pair in table {
                for cell in pair.iter().flatten() {
                    assert!(cell.cov.min_eigenvalue() > -1e-9);
                }
            }
        }
    }

    #[test]
    fn identical_triples_give_zero_correction() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(223);
        for d in 1..=3usize {
            let cell = random_cell(&mut rng, d);
            let combined = combine_gauss_cells(&[&cell, &cell], &cell, None).unwrap();
            assert!(combined.c_box.abs() < 1e-12, "d={d}: {}", combined.c_box);
        }
    }

    #[test]
    fn equal_covariance_algebra() {
        // A1 = A2 = A0 gives Â⊠ = A0 and μ̂⊠ = μ1 + μ2 - μ0.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(227);
        let a = random_spd(&mut rng, 2);
        let mk = |rng: &mut rand_chacha::ChaCha8Rng| GaussCell {
            mass: 1.0,
            mean: (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            cov: a.clone(),
        };
        let g1 = mk(&mut rng);
        let g2 = mk(&mut rng);
        let g0 = mk(&mut rng);
        let combined = combine_gauss_cells(&[&g1, &g2], &g0, None).unwrap();
        for i in 0..2 {
            let want = g1.mean[i] + g2.mean[i] - g0.mean[i];
            assert!((combined.mean[i] - want).abs() < 1e-9);
            for j in 0..2 {
                assert!((combined.cov.get(i, j) - a.get(i, j)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn scalar_combination_matches_quadrature() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(229);
        for _ in 0..40 {
            let (g1, g2, g0) = pd_triple(&mut rng, 1);
            let combined = combine_gauss_cells(&[&g1, &g2], &g0, None).unwrap();
            assert!(!combined.regularized);
            // Quadrature of n1·n2/n0 over a window covering everything.
            let sigma = combined.cov.get(0, 0).sqrt();
            let center = combined.mean[0];
            let half = 12.0 * sigma
                + (g0.mean[0] - center).abs()
                + (g1.mean[0] - center).abs()
                + (g2.mean[0] - center).abs();
            let steps = 4000;
            let h = 2.0 * half / steps as f64;
            let mut acc = 0.0;
            for k in 0..steps {
                let u = [center - half + (k as f64 + 0.5) * h];
                acc += quotient_pdf(&u, &[&g1, &g2], &g0);
            }
            acc *= h;
            let got = combined.c_box.exp();
            assert!(
                (got - acc).abs() <= 1e-6 * acc.abs().max(1e-30),
                "{got} vs {acc}"
            );
        }
    }

    #[test]
    fn planar_combination_matches_quadrature() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(233);
        for _ in 0..10 {
            let (g1, g2, g0) = pd_triple(&mut rng, 2);
            let combined = combine_gauss_cells(&[&g1, &g2], &g0, None).unwrap();
            assert!(!combined.regularized);
            let (vals, _) = combined.cov.eigen();
            let sigma = vals.iter().copied().fold(0.0f64, f64::max).sqrt();
            let mut half = 11.0 * sigma;
            for g in [&g0, &g1, &g2] {
                for j in 0..2 {
                    half = half.max((g.mean[j] - combined.mean[j]).abs() + 11.0 * sigma);
                }
            }
            let steps = 220;
            let h = 2.0 * half / steps as f64;
            let mut acc = 0.0;
            for a in 0..steps {
                for b in 0..steps {
                    let u = [
                        combined.mean[0] - half + (a as f64 + 0.5) * h,
                        combined.mean[1] - half + (b as f64 + 0.5) * h,
                    ];
                    acc += quotient_pdf(&u, &[&g1, &g2], &g0);
                }
            }
            acc *= h * h;
            let got = combined.c_box.exp();
            assert!(
                (got - acc).abs() <= 1e-6 * acc.abs().max(1e-30),
                "{got} vs {acc}"
            );
        }
    }

    #[test]
    fn triple_coupling_scalar_quadrature() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(239);
        for _ in 0..20 {
            let g1 = random_cell(&mut rng, 1);
            let g2 = random_cell(&mut rng, 1);
            let g3 = random_cell(&mut rng, 1);
            let tau = rng.gen_range(0.05..0.45);
            let bsum = 1.0 / g1.cov.get(0, 0) + 1.0 / g2.cov.get(0, 0) + 1.0 / g3.cov.get(0, 0);
            let g0 = GaussCell {
                mass: 1.0,
                mean: vec![rng.gen_range(-2.0..2.0)],
                cov: SymMat::from_rows(&[&[2.0 / (tau * bsum)]]),
            };
            let combined = combine_gauss_cells(&[&g1, &g2, &g3], &g0, None).unwrap();
            if combined.regularized {
                continue;
            }
            let sigma = combined.cov.get(0, 0).sqrt();
            let center = combined.mean[0];
            let mut half = 12.0 * sigma;
            for g in [&g0, &g1, &g2, &g3] {
                half = half.max((g.mean[0] - center).abs() + 12.0 * sigma);
            }
            let steps = 6000;
            let h = 2.0 * half / steps as f64;
            let mut acc = 0.0;
            for k in 0..steps {
                let u = [center - half + (k as f64 + 0.5) * h];
                acc += quotient_pdf(&u, &[&g1, &g2, &g3], &g0);
            }
            acc *= h;
            let got = combined.c_box.exp();
            assert!(
                (got - acc).abs() <= 1e-6 * acc.abs().max(1e-30),
                "{got} vs {acc}"
            );
        }
    }

    #[test]
    fn multi_couple_reduces_to_pairwise() {
        let ct = coupled_pair(&["110110", "011011"], &["101101", "010110"]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(241);
        for _ in 0..10 {
            let r: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let w1: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w2: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let m = DiscriminatorState::new(r, vec![w1, w2]).unwrap();
            let moments = gauss_moments(&ct, &m).unwrap();
            let multi =
                multi_couple_combine(&moments.constituents, &moments.uncoded, None).unwrap();
            let pair = gauss_combine(
                &moments.constituents[0],
                &moments.constituents[1],
                &moments.uncoded,
                None,
            )
            .unwrap();
            for i in 0..6 {
                let (a, b) = (multi.l_discrim[i], pair.l_discrim[i]);
                if a.is_finite() || b.is_finite() {
                    assert!((a - b).abs() < 1e-12);
                }
                let (a, b) = (multi.l_boxtimes[i], pair.l_boxtimes[i]);
                if a.is_finite() || b.is_finite() {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn triple_identity_cells_return_uncoded() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(251);
        let cell = random_cell(&mut rng, 2);
        let combined = combine_gauss_cells(&[&cell, &cell, &cell], &cell, None).unwrap();
        assert!(combined.c_box.abs() < 1e-10);
        for j in 0..2 {
            assert!((combined.mean[j] - cell.mean[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn u0_shift_invariance() {
        // Adding a constant to every u0 mean changes no discriminated
        // ratio, with or without the exponential tilt.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(257);
        let shift = 37.5;
        let mk_tables = |rng: &mut rand_chacha::ChaCha8Rng| -> (CellTable, CellTable, CellTable) {
            let mut t1 = Vec::new();
            let mut t2 = Vec::new();
            let mut t0 = Vec::new();
            for _ in 0..4 {
                let (a, b, c) = pd_triple(rng, 2);
                let (d, e, f) = pd_triple(rng, 2);
                t1.push([Some(a), Some(d)]);
                t2.push([Some(b), Some(e)]);
                t0.push([Some(c), Some(f)]);
            }
            (t1, t2, t0)
        };
        let (t1, t2, t0) = mk_tables(&mut rng);
        let shift_table = |t: &CellTable| -> CellTable {
            t.iter()
                .map(|pair| {
                    pair.clone().map(|c| {
                        c.map(|mut cell| {
                            cell.mean[0] += shift;
                            cell
                        })
                    })
                })
                .collect()
        };
        let tilt = vec![std::f64::consts::LN_2, 0.0];
        for tilt_opt in [None, Some(tilt.as_slice())] {
            let base = gauss_combine(&t1, &t2, &t0, tilt_opt).unwrap();
            let shifted = gauss_combine(
                &shift_table(&t1),
                &shift_table(&t2),
                &shift_table(&t0),
                tilt_opt,
            )
            .unwrap();
            for i in 0..4 {
                assert!(
                    (base.l_discrim[i] - shifted.l_discrim[i]).abs() < 1e-9,
                    "{} vs {}",
                    base.l_discrim[i],
                    shifted.l_discrim[i]
                );
            }
        }
    }

    #[test]
    fn constrained_update_cases() {
        // The three paper cases.
        assert_eq!(constrained_update(2.0, -0.5), (0.0, ConstraintCase::Zero));
        assert_eq!(constrained_update(2.0, 0.5), (0.5, ConstraintCase::Clip));
        assert_eq!(constrained_update(0.3, 0.5), (0.3, ConstraintCase::Free));
    }

    #[test]
    fn constrained_update_invariants() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(263);
        for _ in 0..2000 {
            let a = rng.gen_range(-5.0..5.0);
            let b = rng.gen_range(-5.0..5.0);
            let (v, _) = constrained_update(a, b);
            // Feasibility: |v| ≤ |L^(l)| and sign(v) ∈ {0, sign(L^(l))}.
            assert!(v.abs() <= b.abs() + 1e-15);
            assert!(v == 0.0 || v.signum() == b.signum());
            // Idempotence.
            let (v2, _) = constrained_update(v, b);
            assert_eq!(v, v2);
            // Symmetric form: swapping the roles gives the same value.
            let (v3, _) = constrained_update(b, a);
            assert!((v - v3).abs() < 1e-15);
        }
    }

    #[test]
    fn constrained_update_matches_numeric_minimizer() {
        // Ternary search over the feasible interval [0, L^(l)] of the
        // convex cross-entropy objective.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(269);
        for _ in 0..500 {
            let l_dis = rng.gen_range(-4.0..4.0);
            let l_con = rng.gen_range(-4.0..4.0);
            let (v, _) = constrained_update(l_dis, l_con);
            let objective = |x: f64| crate::discrim::cross_entropy_term(x, l_dis);
            let (mut lo, mut hi) = if l_con >= 0.0 { (0.0, l_con) } else { (l_con, 0.0) };
            for _ in 0..200 {
                let m1 = lo + (hi - lo) / 3.0;
                let m2 = hi - (hi - lo) / 3.0;
                if objective(m1) <= objective(m2) {
                    hi = m2;
                } else {
                    lo = m1;
                }
            }
            let numeric = 0.5 * (lo + hi);
            assert!(
                (v - numeric).abs() < 1e-6,
                "l_dis={l_dis} l_con={l_con}: {v} vs {numeric}"
            );
        }
    }

    #[test]
    fn flat_path_matches_generic_combination() {
        let ct = coupled_pair(&["11011010", "00110110"], &["10110101", "01011011"]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(307);
        for _ in 0..10 {
            let r: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let w1: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w2: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let m = DiscriminatorState::new(r, vec![w1, w2]).unwrap();
            let meas = flat_measures(&ct, &m).unwrap();
            let (ld_flat, lc_flat, reg_flat) = combine_flat(&meas, 8).unwrap();
            let moments = gauss_moments(&ct, &m).unwrap();
            let comb =
                multi_couple_combine(&moments.constituents, &moments.uncoded, None).unwrap();
            for i in 0..8 {
                assert_eq!(reg_flat[i], comb.regularized[i], "flag mismatch at {i}");
                let (a, b) = (ld_flat[i], comb.l_discrim[i]);
                if a.is_finite() || b.is_finite() {
                    // Same algebra through different factorizations; the
                    // tiny code makes some cells ill-conditioned, which
                    // bounds the agreement, not the formulas.
                    assert!((a - b).abs() < 5e-4, "position {i}: {a} vs {b}");
                }
                for c in 0..2 {
                    let (a, b) = (lc_flat[c][i], comb.constituent_l[c][i]);
                    if a.is_finite() || b.is_finite() {
                        assert!((a - b).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn decode_noiseless_in_one_sweep() {
        let ct = coupled_pair(&["11011010", "00110110"], &["10110101", "01011011"]);
        let words = ct.code().codewords().unwrap();
        let word = bpsk(&words[2]);
        let r: Vec<f64> = word.iter().map(|&s| 6.0 * s as f64).collect();
        let opts = GaussDiscrimOptions {
            max_iters: 1,
            ..Default::default()
        };
        let (result, decision) = {
            let res = gauss_discrim_decode(&ct, &r, &opts).unwrap();
            let d = res.decision.clone();
            (res, d)
        };
        assert_eq!(decision, word);
        assert_eq!(result.iterations, 1);
    }

    #[test]
    fn symmetric_zero_input_stays_at_zero() {
        let ct = coupled_pair(&["110110", "011011"], &["101101", "010110"]);
        let r = vec![0.0; 6];
        let res = gauss_discrim_decode(&ct, &r, &GaussDiscrimOptions::default()).unwrap();
        assert!(res.converged);
        assert!(res.iterations <= 2);
        assert_eq!(res.decision, vec![1i8; 6]);
    }

    #[test]
    fn parameter_count_matches_accounting() {
        // Two constituents, coordinates (r, w1, w2): per position and
        // symbol value three means and six correlations, twice, plus the
        // transfer value itself.
        let ct = coupled_pair(&["1101", "0110"], &["1011", "0101"]);
        let res = gauss_discrim_decode(&ct, &[0.1, 0.2, -0.3, 0.4], &Default::default())
            .unwrap();
        assert_eq!(res.params_per_position, 19);
    }

    #[test]
    fn gauss_agrees_with_exact_discrimination_on_light_noise() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        // Sliding-window parity code coupled with a permuted copy.
        let n = 12;
        let mut h = BinaryMatrix::zeros(4, n);
        for row in 0..4 {
            for j in 0..5 {
                h.set(row, (3 * row + j) % n, true);
            }
        }
        let c = LinearCode::from_parity(h);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let ct = CoupledTrellises::new(
            dual_couple(vec![c.clone(), c], vec![identity_permutation(n), perm]).unwrap(),
        )
        .unwrap();
        let words = ct.code().codewords().unwrap();
        let k = 3.0;
        let mut both = 0usize;
        let mut agree = 0usize;
        for _ in 0..200 {
            let word = bpsk(words.as_slice().choose(&mut rng).unwrap());
            let mut r: Vec<f64> = word.iter().map(|&s| k * s as f64).collect();
            if rng.gen_bool(0.6) {
                let i = rng.gen_range(0..12);
                r[i] = -r[i];
            }
            let hard = hard_discrim_decode(&ct, &r, &HardDiscrimOptions::default()).unwrap();
            let gauss = gauss_discrim_decode(&ct, &r, &GaussDiscrimOptions::default()).unwrap();
            if hard.converged && gauss.converged {
                both += 1;
                if hard.decision == gauss.decision {
                    agree += 1;
                }
            }
        }
        println!("gauss-vs-exact agreement: {agree}/{both} trials");
        assert!(both >= 100, "too few jointly converged trials: {both}");
        assert!(
            agree as f64 >= 0.95 * both as f64,
            "agreement {agree}/{both} below 95%"
        );
    }

    #[test]
    fn channel_detached_identity_channel_reduces_to_correlation() {
        // M = 0: u0 edge gains are an affine map of the correlation with
        // the AWGN-normalized observation, so conditional means differ by
        // a constant and variances match those of the plain coordinate.
        let n = 5;
        let sigma2 = 0.8;
        let trellis = build_isi_trellis(&[1.0], n).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(277);
        let obs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let weight: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let cells = channel_detached_moments(&trellis, &obs, sigma2, &weight, &[]).unwrap();
        // Reference: correlation coordinate with the normalized ratios.
        let scale = std::f64::consts::LOG2_E / sigma2;
        let normalized: Vec<f64> = obs.iter().map(|&x| scale * x).collect();
        let coords = CoordDeltas::from_vectors(&trellis, &[&normalized]).unwrap();
        let reference = conditional_moments(
            &trellis,
            &GainTable::correlation(&trellis, &weight).unwrap(),
            &coords,
            MomentOrder::MeanAndCovariance,
        );
        let constant: f64 = obs
            .iter()
            .map(|&x| -std::f64::consts::LOG2_E / (2.0 * sigma2) * (x * x + 1.0))
            .sum();
        for i in 0..n {
            for x in 0..2 {
                let got = cells[i][x].as_ref().unwrap();
                let want = reference.cells[i][x].as_ref().unwrap();
                assert!((got.mean[0] - (want.mean[0] + constant)).abs() < 1e-9);
                let want_var = want.raw2.as_ref().unwrap()[0] - want.mean[0] * want.mean[0];
                assert!((got.cov.get(0, 0) - want_var).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn channel_detached_matches_enumeration() {
        // M = 1, n = 6: all u0 means and variances against brute force.
        let n = 6;
        let taps = [1.0, 0.45];
        let sigma2 = 0.6;
        let trellis = build_isi_trellis(&taps, n).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(281);
        let obs: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let weight: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.8..0.8)).collect();
        let w1: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cells =
            channel_detached_moments(&trellis, &obs, sigma2, &weight, &[w1.clone()]).unwrap();

        let kappa = std::f64::consts::LOG2_E / (2.0 * sigma2);
        let words = crate::oracle::all_words(n).unwrap();
        for i in 0..n {
            for (xi, x) in [(0usize, 1i8), (1, -1)] {
                let mut mass = 0.0;
                let mut mean = [0.0f64; 2];
                let mut raw = [[0.0f64; 2]; 2];
                for word in &words {
                    if word[i] != x {
                        continue;
                    }
                    let wgt = (word
                        .iter()
                        .zip(&weight)
                        .map(|(&s, g)| s as f64 * g)
                        .sum::<f64>())
                    .exp2();
                    let mut u0 = 0.0;
                    for j in 0..n {
                        let mut v = taps[0] * word[j] as f64;
                        if j >= 1 {
                            v += taps[1] * word[j - 1] as f64;
                        }
                        u0 -= kappa * (obs[j] - v) * (obs[j] - v);
                    }
                    let u1: f64 = word.iter().zip(&w1).map(|(&s, v)| s as f64 * v).sum();
                    let u = [u0, u1];
                    mass += wgt;
                    for a in 0..2 {
                        mean[a] += wgt * u[a];
                        for b in 0..2 {
                            raw[a][b] += wgt * u[a] * u[b];
                        }
                    }
                }
                for a in 0..2 {
                    mean[a] /= mass;
                    for b in 0..2 {
                        raw[a][b] /= mass;
                    }
                }
                let got = cells[i][xi].as_ref().unwrap();
                for a in 0..2 {
                    assert!(
                        (got.mean[a] - mean[a]).abs() < 1e-9 * (1.0 + mean[a].abs()),
                        "mean {a}: {} vs {}",
                        got.mean[a],
                        mean[a]
                    );
                    for b in 0..2 {
                        let want = raw[a][b] - mean[a] * mean[b];
                        assert!(
                            (got.cov.get(a, b) - want).abs() < 1e-9 * (1.0 + want.abs()),
                            "cov {a}{b}: {} vs {want}",
                            got.cov.get(a, b)
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn matched_filter_initialization() {
        // With zero transfer vectors the channel-detached correction is
        // driven by the matched filter output: signs agree wherever the
        // matched filter speaks clearly. The agreement is leading-order
        // (a conditional-variance asymmetry enters at the next order), so
        // the check runs at a noise level where that term is subdominant.
        let n = 10;
        let taps = [1.0, 0.5, 0.25];
        let sigma2 = 4.0;
        let trellis = build_isi_trellis(&taps, n).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(283);
        let word: Vec<i8> = (0..n).map(|_| if rng.gen_bool(0.5) { 1 } else { -1 }).collect();
        let channel = crate::channel::ChannelSpec::isi(taps.to_vec(), sigma2).unwrap();
        let obs = crate::channel::transmit(&word, &channel, 99).unwrap().raw;
        let zero = vec![0.0; n];
        let chan_cells =
            channel_detached_moments(&trellis, &obs, sigma2, &zero, &[]).unwrap();
        // Second "constituent" = the unconstrained set with the same
        // coordinates: the combination then reproduces the channel cell.
        let unc_cells = chan_cells.clone();
        let tilt = [std::f64::consts::LN_2];
        let comb =
            gauss_combine(&chan_cells, &unc_cells, &unc_cells, Some(&tilt)).unwrap();
        let mf: Vec<f64> = (0..n)
            .map(|i| {
                (0..taps.len())
                    .filter(|&j| i + j < n)
                    .map(|j| taps[j] * obs[i + j])
                    .sum()
            })
            .collect();
        let mf_peak = mf.iter().map(|x| x.abs()).fold(0.0f64, f64::max);
        for i in 0..n {
            if mf[i].abs() >= 0.4 * mf_peak {
                assert_eq!(
                    comb.l_discrim[i] >= 0.0,
                    mf[i] >= 0.0,
                    "position {i}: L={} mf={}",
                    comb.l_discrim[i],
                    mf[i]
                );
            }
        }
    }
}
