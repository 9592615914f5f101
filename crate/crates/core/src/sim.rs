//! Monte Carlo channel-simulation harness: sweep a channel parameter,
//! decode independently seeded trials in parallel, and emit byte-stable
//! CSV/JSON records.

use crate::bp::{bp_decode, BpOptions};
use crate::channel::{derive_seed, normalize_llr, puncture_llr, transmit_with_rng, trial_rng,
    ChannelSpec};
use crate::code::{bpsk, CoupledCode};
use crate::discrim::{hard_discrim_decode, HardDiscrimOptions, HardVariant};
use crate::gauss::{gauss_discrim_decode, GaussDiscrimOptions};
use crate::gf2::BinaryMatrix;
use crate::trellis::{viterbi_gains, CoupledTrellises, GainTable};
use crate::{Error, Result};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    Bp,
    HardDiscrim,
    GaussDiscrim,
    ViterbiConstituent,
}

impl DecoderKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bp" => Ok(Self::Bp),
            "hard_discrim" | "hard" => Ok(Self::HardDiscrim),
            "gauss_discrim" | "gauss" => Ok(Self::GaussDiscrim),
            "viterbi_constituent" | "viterbi" => Ok(Self::ViterbiConstituent),
            _ => Err(Error::Parse(format!("unknown decoder `{s}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Bp => "bp",
            Self::HardDiscrim => "hard_discrim",
            Self::GaussDiscrim => "gauss_discrim",
            Self::ViterbiConstituent => "viterbi_constituent",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    /// Sweep over the crossover probability `p`.
    Bsc,
    /// Sweep over the noise variance `σ²`.
    Awgn,
}

impl ChannelKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bsc" => Ok(Self::Bsc),
            "awgn" => Ok(Self::Awgn),
            _ => Err(Error::Parse(format!("unknown channel `{s}`"))),
        }
    }

    pub fn spec(&self, param: f64) -> Result<ChannelSpec> {
        match self {
            Self::Bsc => ChannelSpec::bsc(param),
            Self::Awgn => ChannelSpec::awgn(param),
        }
    }
}

/// A complete simulation request.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub code: CoupledCode,
    /// Where the code definition came from, for the run record.
    pub code_path: String,
    pub channel: ChannelKind,
    /// Channel parameter per sweep point (`p` or `σ²`).
    pub sweep: Vec<f64>,
    pub decoder: DecoderKind,
    pub trials: u64,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop tolerance for the iterative decoders; `None` picks the
    /// decoder's default.
    pub tol: Option<f64>,
    /// Histogram diagnostics parameters, recorded with the run.
    pub epsilon: f64,
    pub q: usize,
}

pub const CONFIG_KEYS: &[&str] = &[
    "code", "channel", "sweep", "decoder", "trials", "seed", "max_iters", "tol", "epsilon",
    "Q",
];

/// Parse the plain key-value config format. `base` resolves relative code
/// file paths.
pub fn parse_config(text: &str, base: &std::path::Path) -> Result<SimConfig> {
    let mut code = None;
    let mut code_path = String::new();
    let mut channel = None;
    let mut sweep = Vec::new();
    let mut decoder = None;
    let mut trials = 1000u64;
    let mut seed = 1u64;
    let mut max_iters = 50usize;
    let mut tol = None;
    let mut epsilon = 1.0f64;
    let mut q = 32usize;
    for raw in text.lines() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = match line.split_once('=') {
            Some((k, v)) => (k.trim(), v.trim()),
            None => line
                .split_once(char::is_whitespace)
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Parse(format!("bad config line `{line}`")))?,
        };
        match key {
            "code" => {
                let path = base.join(value);
                let text = std::fs::read_to_string(&path).map_err(|e| {
                    Error::Parse(format!("cannot read code file {}: {e}", path.display()))
                })?;
                code = Some(crate::codefile::parse(&text)?);
                code_path = value.to_string();
            }
            "channel" => channel = Some(ChannelKind::parse(value)?),
            "sweep" => {
                sweep = value
                    .split_whitespace()
                    .map(|t| {
                        t.parse::<f64>()
                            .map_err(|_| Error::Parse(format!("bad sweep value `{t}`")))
                    })
                    .collect::<Result<_>>()?;
            }
            "decoder" => decoder = Some(DecoderKind::parse(value)?),
            "trials" => {
                trials = value
                    .parse()
                    .map_err(|_| Error::Parse("bad trials".into()))?;
            }
            "seed" => {
                seed = value.parse().map_err(|_| Error::Parse("bad seed".into()))?;
            }
            "max_iters" => {
                max_iters = value
                    .parse()
                    .map_err(|_| Error::Parse("bad max_iters".into()))?;
            }
            "tol" => {
                tol = Some(value.parse().map_err(|_| Error::Parse("bad tol".into()))?);
            }
            "epsilon" => {
                epsilon = value
                    .parse()
                    .map_err(|_| Error::Parse("bad epsilon".into()))?;
            }
            "Q" => {
                q = value.parse().map_err(|_| Error::Parse("bad Q".into()))?;
            }
            other => return Err(Error::Parse(format!("unknown config key `{other}`"))),
        }
    }
    let code = code.ok_or_else(|| Error::Parse("config misses `code`".into()))?;
    let channel = channel.ok_or_else(|| Error::Parse("config misses `channel`".into()))?;
    let decoder = decoder.ok_or_else(|| Error::Parse("config misses `decoder`".into()))?;
    if sweep.is_empty() {
        return Err(Error::Parse("config misses `sweep`".into()));
    }
    Ok(SimConfig {
        code,
        code_path,
        channel,
        sweep,
        decoder,
        trials,
        seed,
        max_iters,
        tol,
        epsilon,
        q,
    })
}

/// Aggregated statistics of one sweep point.
#[derive(Debug, Clone, Serialize)]
pub struct PointStats {
    pub param: f64,
    pub trials: u64,
    pub bit_errors: u64,
    pub word_errors: u64,
    pub ber: f64,
    pub wer: f64,
    pub mean_iters: f64,
    pub converged_frac: f64,
    /// Hard-decision errors of the raw channel on transmitted positions.
    pub uncoded_bit_errors: u64,
    pub uncoded_ber: f64,
    /// Trials whose decoder returned an error (counted as word errors).
    pub decoder_failures: u64,
}

#[derive(Debug, Clone)]
pub struct SimResults {
    pub points: Vec<PointStats>,
    pub decoder: DecoderKind,
    pub seed: u64,
    pub n_transmitted: usize,
    pub config_record: ConfigRecord,
}

/// The resolved configuration embedded into the JSON run record.
#[derive(Debug, Clone, Serialize)]
pub struct ConfigRecord {
    pub code: String,
    pub n: usize,
    pub k: usize,
    pub constituents: usize,
    pub n_transmitted: usize,
    pub channel: ChannelKind,
    pub sweep: Vec<f64>,
    pub decoder: DecoderKind,
    pub trials: u64,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
    pub epsilon: f64,
    #[serde(rename = "Q")]
    pub q: usize,
}

#[derive(Default, Clone, Copy)]
struct TrialTally {
    bit_errors: u64,
    word_errors: u64,
    iterations: u64,
    converged: u64,
    uncoded_bit_errors: u64,
    failures: u64,
}

impl TrialTally {
    fn merge(mut self, other: TrialTally) -> TrialTally {
        self.bit_errors += other.bit_errors;
        self.word_errors += other.word_errors;
        self.iterations += other.iterations;
        self.converged += other.converged;
        self.uncoded_bit_errors += other.uncoded_bit_errors;
        self.failures += other.failures;
        self
    }
}

/// Run the whole sweep. Trials execute in parallel with per-trial derived
/// seeds, so the statistics are independent of execution order and
/// bit-identical across repeats.
pub fn run_monte_carlo(config: &SimConfig) -> Result<SimResults> {
    let ct = CoupledTrellises::new(config.code.clone())?;
    let overall = config.code.overall()?;
    let generator = overall.generator();
    let k = generator.rows();
    let mask = config.code.puncture_mask().to_vec();
    let n_transmitted = mask.iter().filter(|&&b| b == 1).count();
    if n_transmitted == 0 {
        return Err(Error::Dimension("puncture mask keeps no position".into()));
    }
    let tol = config.tol.unwrap_or(match config.decoder {
        DecoderKind::GaussDiscrim => 1e-4,
        _ => 1e-6,
    });

    let mut points = Vec::with_capacity(config.sweep.len());
    for (pi, &param) in config.sweep.iter().enumerate() {
        let channel = config.channel.spec(param)?;
        let tally = (0..config.trials)
            .into_par_iter()
            .map(|trial| {
                run_trial(
                    config,
                    &ct,
                    &generator,
                    k,
                    &mask,
                    &channel,
                    tol,
                    derive_seed(config.seed, pi as u64, trial),
                )
            })
            .reduce(TrialTally::default, TrialTally::merge);
        let denom = (config.trials * n_transmitted as u64) as f64;
        if tally.failures > 0 {
            eprintln!(
                "point {param}: {} decoder failures counted as word errors",
                tally.failures
            );
        }
        points.push(PointStats {
            param,
            trials: config.trials,
            bit_errors: tally.bit_errors,
            word_errors: tally.word_errors,
            ber: tally.bit_errors as f64 / denom,
            wer: tally.word_errors as f64 / config.trials as f64,
            mean_iters: tally.iterations as f64 / config.trials as f64,
            converged_frac: tally.converged as f64 / config.trials as f64,
            uncoded_bit_errors: tally.uncoded_bit_errors,
            uncoded_ber: tally.uncoded_bit_errors as f64 / denom,
            decoder_failures: tally.failures,
        });
    }
    Ok(SimResults {
        points,
        decoder: config.decoder,
        seed: config.seed,
        n_transmitted,
        config_record: ConfigRecord {
            code: config.code_path.clone(),
            n: config.code.n(),
            k,
            constituents: config.code.num_constituents(),
            n_transmitted,
            channel: config.channel,
            sweep: config.sweep.clone(),
            decoder: config.decoder,
            trials: config.trials,
            seed: config.seed,
            max_iters: config.max_iters,
            tol,
            epsilon: config.epsilon,
            q: config.q,
        },
    })
}

#[allow(clippy::too_many_arguments)]
fn run_trial(
    config: &SimConfig,
    ct: &CoupledTrellises,
    generator: &BinaryMatrix,
    k: usize,
    mask: &[u8],
    channel: &ChannelSpec,
    tol: f64,
    seed: u64,
) -> TrialTally {
    let mut rng = trial_rng(seed);
    let n = ct.n();
    // Random message, encoded through the overall generator.
    let mut bits = vec![0u8; n];
    for row in 0..k {
        if rng.gen_bool(0.5) {
            for (c, b) in bits.iter_mut().enumerate() {
                *b ^= u8::from(generator.get(row, c));
            }
        }
    }
    let word = bpsk(&bits);
    let obs = transmit_with_rng(&word, channel, &mut rng).expect("valid word");
    let r_full = match normalize_llr(&obs.raw, channel) {
        Ok(r) => r,
        Err(_) => obs.raw.clone(), // noiseless BSC: ±1 already decides
    };
    let r = puncture_llr(&r_full, mask).expect("mask length");

    let mut tally = TrialTally::default();
    // Uncoded reference: hard decisions straight off the channel.
    for i in 0..n {
        if mask[i] == 1 && (obs.raw[i] < 0.0) != (word[i] < 0) {
            tally.uncoded_bit_errors += 1;
        }
    }

    let decoded: Result<(Vec<i8>, usize, bool)> = match config.decoder {
        DecoderKind::Bp => {
            let opts = BpOptions {
                max_iters: config.max_iters,
                tol,
                history_cap: 0,
            };
            bp_decode(ct, &r, &opts).map(|(d, s)| (d, s.iterations, s.converged))
        }
        DecoderKind::HardDiscrim => {
            let opts = HardDiscrimOptions {
                variant: HardVariant::SameW,
                max_iters: config.max_iters,
                ..Default::default()
            };
            hard_discrim_decode(ct, &r, &opts)
                .map(|res| (res.decision, res.iterations, res.converged))
        }
        DecoderKind::GaussDiscrim => {
            let opts = GaussDiscrimOptions {
                max_iters: config.max_iters,
                tol,
                ..Default::default()
            };
            gauss_discrim_decode(ct, &r, &opts)
                .map(|res| (res.decision, res.iterations, res.converged))
        }
        DecoderKind::ViterbiConstituent => {
            let gain = ct.code().gather(0, &r);
            GainTable::correlation(ct.trellis(0), &gain).map(|g| {
                let (word_c, _) = viterbi_gains(ct.trellis(0), &g);
                (ct.code().scatter(0, &word_c), 1, true)
            })
        }
    };
    match decoded {
        Ok((decision, iterations, converged)) => {
            let mut wrong = 0u64;
            for i in 0..n {
                if mask[i] == 1 && decision[i] != word[i] {
                    wrong += 1;
                }
            }
            tally.bit_errors += wrong;
            if wrong > 0 {
                tally.word_errors += 1;
            }
            tally.iterations += iterations as u64;
            if converged {
                tally.converged += 1;
            }
        }
        Err(_) => {
            // A failed decode counts as a word error; the uncoded hard
            // decision stands in for the bit count.
            tally.failures += 1;
            tally.word_errors += 1;
            tally.bit_errors += tally.uncoded_bit_errors;
        }
    }
    tally
}

impl SimResults {
    /// Fixed-schema CSV; identical configs and seeds give identical bytes.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "point_param,trials,bit_errors,word_errors,ber,wer,mean_iters,converged_frac,decoder,seed\n",
        );
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{},{:.6e},{:.6e},{:.4},{:.6},{},{}\n",
                p.param,
                p.trials,
                p.bit_errors,
                p.word_errors,
                p.ber,
                p.wer,
                p.mean_iters,
                p.converged_frac,
                self.decoder.name(),
                self.seed
            ));
        }
        out
    }

    /// JSON run record embedding the fully resolved configuration.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Record<'a> {
            config: &'a ConfigRecord,
            points: &'a [PointStats],
        }
        serde_json::to_string_pretty(&Record {
            config: &self.config_record,
            points: &self.points,
        })
        .expect("serializable record")
    }
}
