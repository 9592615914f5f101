//! Channel models (BSC, AWGN, real-tap ISI) and the normalization of raw
//! observations into the canonical form `P(r|s) ∝ exp2(Σ r_i s_i)`.

use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Channel specification. Construct through the checked constructors.
#[derive(Debug, Clone, PartialEq)]
pub enum ChannelSpec {
    /// Binary symmetric channel with crossover probability `p`.
    Bsc { p: f64 },
    /// Real AWGN with noise variance `sigma2` per dimension.
    Awgn { sigma2: f64 },
    /// Linear ISI channel `r_i = Σ_j q_j s_{i-j} + e_i` with real taps.
    Isi { taps: Vec<f64>, sigma2: f64 },
}

impl ChannelSpec {
    pub fn bsc(p: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&p) {
            return Err(Error::InvalidChannel(format!(
                "BSC crossover {p} outside [0, 0.5)"
            )));
        }
        Ok(Self::Bsc { p })
    }

    pub fn awgn(sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidChannel(format!(
                "AWGN variance {sigma2} must be positive"
            )));
        }
        Ok(Self::Awgn { sigma2 })
    }

    pub fn isi(taps: Vec<f64>, sigma2: f64) -> Result<Self> {
        if taps.is_empty() || taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidChannel("ISI taps must be finite".into()));
        }
        if taps[0] == 0.0 {
            return Err(Error::InvalidChannel("leading ISI tap is zero".into()));
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidChannel("ISI variance must be positive".into()));
        }
        Ok(Self::Isi { taps, sigma2 })
    }

    /// The per-symbol LLR scale `K`: `log2((1-p)/p)` for the BSC and
    /// `log2(e)/σ²` for unit-amplitude BPSK over AWGN.
    pub fn llr_scale(&self) -> Result<f64> {
        match self {
            Self::Bsc { p } => {
                if *p == 0.0 {
                    return Err(Error::InvalidChannel(
                        "K undefined for a noiseless BSC".into(),
                    ));
                }
                Ok(((1.0 - p) / p).log2())
            }
            Self::Awgn { sigma2 } => Ok(std::f64::consts::LOG2_E / sigma2),
            Self::Isi { .. } => Err(Error::InvalidChannel(
                "ISI has no per-symbol LLR; use the ISI trellis metric".into(),
            )),
        }
    }
}

/// A channel observation: the raw output and, for memoryless channels,
/// the normalized half log-ratio vector.
#[derive(Debug, Clone)]
pub struct Observation {
    pub raw: Vec<f64>,
    /// `K · raw`; absent for ISI where the likelihood lives on the trellis.
    pub normalized: Option<Vec<f64>>,
    pub channel: ChannelSpec,
}

/// Deterministic per-trial RNG derived from a seed. ChaCha8 is seedable,
/// portable and documented, so observations are byte-stable across runs
/// and platforms.
pub fn trial_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mix a master seed with (point, trial) indices so per-trial streams are
/// order independent. SplitMix64 finalizer.
pub fn derive_seed(master: u64, point: u64, trial: u64) -> u64 {
    let mut z = master
        .wrapping_add(point.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(trial.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Transmit a BPSK word over the channel with a fresh RNG from `seed`.
pub fn transmit(word: &[i8], channel: &ChannelSpec, seed: u64) -> Result<Observation> {
    transmit_with_rng(word, channel, &mut trial_rng(seed))
}

pub fn transmit_with_rng(
    word: &[i8],
    channel: &ChannelSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Observation> {
    if word.iter().any(|&s| s != 1 && s != -1) {
        return Err(Error::Dimension("transmit expects ±1 symbols".into()));
    }
    let raw: Vec<f64> = match channel {
        ChannelSpec::Bsc { p } => word
            .iter()
            .map(|&s| {
                let flip = rng.gen_bool(*p);
                if flip {
                    -s as f64
                } else {
                    s as f64
                }
            })
            .collect(),
        ChannelSpec::Awgn { sigma2 } => {
            let normal = Normal::new(0.0, sigma2.sqrt()).unwrap();
            word.iter()
                .map(|&s| s as f64 + normal.sample(rng))
                .collect()
        }
        ChannelSpec::Isi { taps, sigma2 } => {
            let normal = Normal::new(0.0, sigma2.sqrt()).unwrap();
            (0..word.len())
                .map(|i| {
                    let mut v = 0.0;
                    for (j, &q) in taps.iter().enumerate() {
                        if i >= j {
                            v += q * word[i - j] as f64;
                        }
                    }
                    v + normal.sample(rng)
                })
                .collect()
        }
    };
    let normalized = match channel {
        ChannelSpec::Isi { .. } => None,
        ChannelSpec::Bsc { p } if *p == 0.0 => None,
        _ => Some(normalize_llr(&raw, channel)?),
    };
    Ok(Observation {
        raw,
        normalized,
        channel: channel.clone(),
    })
}

/// Normalize a raw observation to half log-ratios `r_i = K·raw_i` so that
/// `P(r|s) ∝ exp2(Σ r_i s_i)`.
pub fn normalize_llr(raw: &[f64], channel: &ChannelSpec) -> Result<Vec<f64>> {
    let k = channel.llr_scale()?;
    Ok(raw.iter().map(|&x| k * x).collect())
}

/// Zero out the channel information of punctured (mask 0) positions.
pub fn puncture_llr(r: &[f64], mask: &[u8]) -> Result<Vec<f64>> {
    if r.len() != mask.len() {
        return Err(Error::Dimension("mask length != n".into()));
    }
    Ok(r.iter()
        .zip(mask)
        .map(|(&x, &m)| if m == 1 { x } else { 0.0 })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code::LinearCode;
    use crate::trellis::{bcjr, build_syndrome_trellis};

    #[test]
    fn noiseless_bsc_returns_word() {
        let channel = ChannelSpec::bsc(0.0).unwrap();
        let word = vec![1i8, -1, 1, 1];
        let obs = transmit(&word, &channel, 7).unwrap();
        assert_eq!(obs.raw, vec![1.0, -1.0, 1.0, 1.0]);
        assert!(obs.normalized.is_none());
    }

    #[test]
    fn tiny_awgn_variance_approaches_word() {
        let channel = ChannelSpec::awgn(1e-12).unwrap();
        let word = vec![1i8, -1, 1];
        let obs = transmit(&word, &channel, 7).unwrap();
        for (raw, &s) in obs.raw.iter().zip(&word) {
            assert!((raw - s as f64).abs() < 1e-4);
        }
    }

    #[test]
    fn fixed_seed_reproduces_observation() {
        let channel = ChannelSpec::awgn(0.8).unwrap();
        let word = vec![1i8; 32];
        let a = transmit(&word, &channel, 1234).unwrap();
        let b = transmit(&word, &channel, 1234).unwrap();
        assert_eq!(a.raw, b.raw);
        let c = transmit(&word, &channel, 1235).unwrap();
        assert_ne!(a.raw, c.raw);
    }

    #[test]
    fn bsc_scale_is_log2_odds() {
        let channel = ChannelSpec::bsc(0.25).unwrap();
        let r = normalize_llr(&[1.0, -1.0], &channel).unwrap();
        assert!((r[0] - 3.0f64.log2()).abs() < 1e-12);
        assert!((r[1] + 3.0f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn bsc_scale_vanishes_toward_half() {
        let channel = ChannelSpec::bsc(0.499999).unwrap();
        let r = normalize_llr(&[1.0], &channel).unwrap();
        assert!(r[0].abs() < 1e-5);
    }

    #[test]
    fn normalize_rejects_degenerate_bsc() {
        assert!(normalize_llr(&[1.0], &ChannelSpec::bsc(0.0).unwrap()).is_err());
        assert!(ChannelSpec::bsc(0.5).is_err());
        assert!(ChannelSpec::bsc(0.7).is_err());
    }

    #[test]
    fn awgn_density_ratio_property() {
        // exp2(2 r_i) must equal p(raw|+1)/p(raw|-1) for the true Gaussian
        // densities.
        use rand::Rng;
        let sigma2 = 0.73;
        let channel = ChannelSpec::awgn(sigma2).unwrap();
        let mut rng = trial_rng(99);
        for _ in 0..1000 {
            let raw: f64 = rng.gen_range(-3.0..3.0);
            let r = normalize_llr(&[raw], &channel).unwrap()[0];
            let density = |s: f64| (-(raw - s) * (raw - s) / (2.0 * sigma2)).exp();
            let ratio = density(1.0) / density(-1.0);
            assert!(((2.0 * r).exp2() - ratio).abs() <= 1e-12 * ratio.max(1.0));
        }
    }

    #[test]
    fn empirical_bsc_flip_rate() {
        let p = 0.1;
        let channel = ChannelSpec::bsc(p).unwrap();
        let word = vec![1i8; 100_000];
        let obs = transmit(&word, &channel, 4242).unwrap();
        let flips = obs.raw.iter().filter(|&&x| x < 0.0).count() as f64;
        let n = word.len() as f64;
        let stderr = (p * (1.0 - p) / n).sqrt();
        assert!((flips / n - p).abs() < 3.0 * stderr);
    }

    #[test]
    fn empirical_awgn_variance() {
        let sigma2 = 1.7;
        let channel = ChannelSpec::awgn(sigma2).unwrap();
        let word = vec![1i8; 100_000];
        let obs = transmit(&word, &channel, 777).unwrap();
        let n = word.len() as f64;
        let var = obs.raw.iter().map(|&x| (x - 1.0) * (x - 1.0)).sum::<f64>() / n;
        // Var of the sample variance of a Gaussian is 2σ⁴/n.
        let stderr = (2.0 * sigma2 * sigma2 / n).sqrt();
        assert!((var - sigma2).abs() < 3.0 * stderr);
    }

    #[test]
    fn isi_observation_has_no_normalized_field() {
        let channel = ChannelSpec::isi(vec![1.0, 0.4], 0.5).unwrap();
        let obs = transmit(&[1, -1, 1], &channel, 3).unwrap();
        assert!(obs.normalized.is_none());
        assert!(normalize_llr(&obs.raw, &channel).is_err());
    }

    #[test]
    fn puncture_masks() {
        let r = [1.0, -2.0, 3.0];
        assert_eq!(puncture_llr(&r, &[1, 1, 1]).unwrap(), vec![1.0, -2.0, 3.0]);
        assert_eq!(puncture_llr(&r, &[0, 0, 0]).unwrap(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn punctured_spc_position_gets_extrinsic_only_posterior() {
        // Zero LLR on a punctured position: the code posterior there is
        // exactly the extrinsic combination of the others.
        let code = LinearCode::single_parity_check(4);
        let t = build_syndrome_trellis(&code.parity().unwrap());
        let r = [0.8, -0.3, 1.1, 0.6];
        let punctured = puncture_llr(&r, &[1, 1, 1, 0]).unwrap();
        let out = bcjr(&t, &punctured).unwrap();
        let ext = out.extrinsic(&punctured);
        assert!((out.l[3] - ext[3]).abs() < 1e-12);
        // Oracle: the extrinsic is the tanh-rule over the other positions.
        let tanh2 = |x: f64| (x * std::f64::consts::LN_2).tanh();
        let atanh2 = |x: f64| x.atanh() / std::f64::consts::LN_2;
        let want = atanh2(tanh2(punctured[0]) * tanh2(punctured[1]) * tanh2(punctured[2]));
        assert!((out.l[3] - want).abs() < 1e-9);
    }

    proptest::proptest! {
        #[test]
        fn normalization_is_linear_and_sign_preserving(
            p in 0.01f64..0.49,
            raw in proptest::collection::vec(-5.0f64..5.0, 1..20)
        ) {
            let channel = ChannelSpec::bsc(p).unwrap();
            let r = normalize_llr(&raw, &channel).unwrap();
            let k = channel.llr_scale().unwrap();
            proptest::prop_assert!(k > 0.0);
            for (x, y) in raw.iter().zip(&r) {
                proptest::prop_assert!((y - k * x).abs() < 1e-12);
                proptest::prop_assert_eq!(x.signum(), y.signum());
            }
        }
    }
}
