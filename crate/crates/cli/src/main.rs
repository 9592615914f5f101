//! Command line front end: encode and decode with coupled-code files,
//! drive Monte Carlo sweeps, run the enumeration oracle, and exercise the
//! invariant battery.
//!
//! Exit codes: 0 success, 1 usage/config errors, 2 runtime failures.

use clap::{Args, Parser, Subcommand};
use dbp_core::bp::{bp_decode, BpOptions};
use dbp_core::code::{bpsk, CoupledCode};
use dbp_core::discrim::{hard_discrim_decode, HardDiscrimOptions, HardVariant};
use dbp_core::gauss::{gauss_discrim_decode, GaussDiscrimOptions};
use dbp_core::oracle;
use dbp_core::sim::{parse_config, run_monte_carlo};
use dbp_core::trellis::{bcjr, viterbi_gains, CoupledTrellises, GainTable};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "dbp",
    about = "Dually coupled code decoding toolkit",
    version,
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a message with the overall code of a code file.
    Encode(EncodeArgs),
    /// Decode an observation file of normalized half log-ratios.
    Decode(DecodeArgs),
    /// Run a Monte Carlo sweep from a config file.
    Simulate(SimulateArgs),
    /// Small-block exact reports and decoder comparisons by enumeration.
    Oracle(OracleArgs),
    /// Run the built-in invariant battery.
    Check,
}

#[derive(Args)]
struct EncodeArgs {
    /// Code definition file.
    #[arg(long)]
    code: PathBuf,
    /// Message bits, e.g. `1011`.
    #[arg(long)]
    message: String,
    /// Print the BPSK word instead of bits.
    #[arg(long)]
    bpsk: bool,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    code: PathBuf,
    /// Observation file: whitespace-separated normalized half log-ratios.
    #[arg(long)]
    obs: PathBuf,
    /// Decoder: bp | hard | hard-erasure | hard-two-sided | gauss | viterbi.
    #[arg(long, default_value = "bp")]
    decoder: String,
    #[arg(long, default_value_t = 50)]
    max_iters: usize,
    /// Stop tolerance for bp/gauss.
    #[arg(long)]
    tol: Option<f64>,
    /// Write a per-iteration trace CSV here.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Config file with the documented keys (code, channel, sweep,
    /// decoder, trials, seed, max_iters, tol, epsilon, Q).
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output prefix: writes `<prefix>.csv` and `<prefix>.json`.
    #[arg(long, default_value = "simrun")]
    out: String,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    code: PathBuf,
    /// Observation file; a seeded random observation is drawn when absent.
    #[arg(long)]
    obs: Option<PathBuf>,
    /// Compare a decoder against the enumeration: bcjr | viterbi | discrim.
    #[arg(long)]
    compare: Option<String>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes, everything else is
            // a usage error.
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Encode(args) => cmd_encode(args),
        Command::Decode(args) => cmd_decode(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Oracle(args) => cmd_oracle(args),
        Command::Check => cmd_check(),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_code(path: &Path) -> Result<CoupledCode, String> {
    let text =
        std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    dbp_core::codefile::parse(&text).map_err(|e| e.to_string())
}

fn load_obs(path: &Path) -> Result<Vec<f64>, String> {
    let text =
        std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| format!("bad observation value `{t}`"))
        })
        .collect()
}

fn bits_string(word: &[i8]) -> String {
    word.iter().map(|&s| if s < 0 { '1' } else { '0' }).collect()
}

fn cmd_encode(args: EncodeArgs) -> Result<ExitCode, String> {
    let code = load_code(&args.code)?;
    let message: Vec<u8> = args
        .message
        .chars()
        .map(|c| match c {
            '0' => Ok(0u8),
            '1' => Ok(1u8),
            _ => Err(format!("bad message character `{c}`")),
        })
        .collect::<Result<_, _>>()?;
    let word = code.encode(&message).map_err(|e| e.to_string())?;
    if args.bpsk {
        let symbols: Vec<String> = bpsk(&word).iter().map(|s| format!("{s:+}")).collect();
        println!("{}", symbols.join(" "));
    } else {
        println!("{}", word.iter().map(|b| b.to_string()).collect::<String>());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_decode(args: DecodeArgs) -> Result<ExitCode, String> {
    let code = load_code(&args.code)?;
    let r = load_obs(&args.obs)?;
    if r.len() != code.n() {
        return Err(format!(
            "observation has {} values, code length is {}",
            r.len(),
            code.n()
        ));
    }
    let ct = CoupledTrellises::new(code).map_err(|e| e.to_string())?;
    let mut trace_text: Option<String> = None;
    let (decision, iterations, converged) = match args.decoder.as_str() {
        "bp" => {
            let opts = BpOptions {
                max_iters: args.max_iters,
                tol: args.tol.unwrap_or(1e-6),
                history_cap: 0,
            };
            let (d, s) = bp_decode(&ct, &r, &opts).map_err(|e| e.to_string())?;
            (d, s.iterations, s.converged)
        }
        "hard" | "hard-erasure" | "hard-two-sided" => {
            let variant = match args.decoder.as_str() {
                "hard" => HardVariant::SameW,
                "hard-erasure" => HardVariant::Erasure,
                _ => HardVariant::TwoSided,
            };
            let opts = HardDiscrimOptions {
                variant,
                max_iters: args.max_iters,
                with_trace: args.trace.is_some(),
                ..Default::default()
            };
            let res = hard_discrim_decode(&ct, &r, &opts).map_err(|e| e.to_string())?;
            if args.trace.is_some() {
                trace_text = Some(res.trace_csv());
            }
            (res.decision, res.iterations, res.converged)
        }
        "gauss" => {
            let opts = GaussDiscrimOptions {
                max_iters: args.max_iters,
                tol: args.tol.unwrap_or(1e-4),
                with_trace: args.trace.is_some(),
                ..Default::default()
            };
            let res = gauss_discrim_decode(&ct, &r, &opts).map_err(|e| e.to_string())?;
            if args.trace.is_some() {
                trace_text = Some(res.trace_csv());
            }
            (res.decision, res.iterations, res.converged)
        }
        "viterbi" => {
            let gain = ct.code().gather(0, &r);
            let table =
                GainTable::correlation(ct.trellis(0), &gain).map_err(|e| e.to_string())?;
            let (word, _) = viterbi_gains(ct.trellis(0), &table);
            (ct.code().scatter(0, &word), 1, true)
        }
        other => return Err(format!("unknown decoder `{other}`")),
    };
    if let (Some(path), Some(text)) = (&args.trace, &trace_text) {
        std::fs::write(path, text).map_err(|e| e.to_string())?;
    }
    println!("decision: {}", bits_string(&decision));
    println!("iterations: {iterations}");
    println!("converged: {converged}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_simulate(args: SimulateArgs) -> Result<ExitCode, String> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| format!("{}: {e}", args.config.display()))?;
    let base = args
        .config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let mut config = parse_config(&text, &base).map_err(|e| e.to_string())?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let results = run_monte_carlo(&config).map_err(|e| e.to_string())?;
    let csv_path = format!("{}.csv", args.out);
    let json_path = format!("{}.json", args.out);
    std::fs::write(&csv_path, results.to_csv()).map_err(|e| e.to_string())?;
    std::fs::write(&json_path, results.to_json()).map_err(|e| e.to_string())?;
    for p in &results.points {
        println!(
            "param {:>8}: ber {:.3e} wer {:.3e} uncoded {:.3e} iters {:.2} converged {:.3}",
            p.param, p.ber, p.wer, p.uncoded_ber, p.mean_iters, p.converged_frac
        );
    }
    println!("wrote {csv_path} and {json_path}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_oracle(args: OracleArgs) -> Result<ExitCode, String> {
    let code = load_code(&args.code)?;
    if code.n() > 24 {
        return Err("oracle guard: block length above 24".into());
    }
    let r = match &args.obs {
        Some(path) => load_obs(path)?,
        None => {
            use rand::Rng;
            let mut rng = dbp_core::channel::trial_rng(args.seed);
            (0..code.n()).map(|_| rng.gen_range(-2.0..2.0)).collect()
        }
    };
    let out = oracle::oracle(&code, &r).map_err(|e| e.to_string())?;
    match args.compare.as_deref() {
        None => {
            println!("ml word: {}", bits_string(&out.ml_word));
            println!("ml correlation: {:.6}", out.ml_metric);
            for (i, l) in out.symbol_l.iter().enumerate() {
                println!("L[{i}] = {l:.9}");
            }
        }
        Some("bcjr") => {
            // Whole-code BCJR on the stacked parity trellis against the
            // enumeration posteriors.
            let overall = code.overall().map_err(|e| e.to_string())?;
            let trellis = dbp_core::trellis::build_syndrome_trellis(
                &overall.parity().map_err(|e| e.to_string())?,
            );
            let bc = bcjr(&trellis, &r).map_err(|e| e.to_string())?;
            let mut worst = 0.0f64;
            for (a, b) in bc.l.iter().zip(&out.symbol_l) {
                if a.is_finite() || b.is_finite() {
                    worst = worst.max((a - b).abs());
                }
            }
            println!("max |ΔL| = {worst:.3e}");
            if worst > 1e-9 {
                return Err(format!("bcjr deviates from enumeration by {worst:.3e}"));
            }
        }
        Some("viterbi") => {
            let overall = code.overall().map_err(|e| e.to_string())?;
            let trellis = dbp_core::trellis::build_syndrome_trellis(
                &overall.parity().map_err(|e| e.to_string())?,
            );
            let table = GainTable::correlation(&trellis, &r).map_err(|e| e.to_string())?;
            let (word, metric) = viterbi_gains(&trellis, &table);
            println!("viterbi:  {} ({metric:.6})", bits_string(&word));
            println!("oracle:   {} ({:.6})", bits_string(&out.ml_word), out.ml_metric);
            if (metric - out.ml_metric).abs() > 1e-9 {
                return Err("viterbi metric deviates from oracle".into());
            }
        }
        Some("discrim") => {
            // Trellis-based discriminated ratios against direct summation,
            // using a hard transfer vector from the channel signs.
            let ct = CoupledTrellises::new(code.clone()).map_err(|e| e.to_string())?;
            let rq: Vec<f64> = r.iter().map(|x| x.round()).collect();
            let w: Vec<f64> = rq.iter().map(|&x| if x < 0.0 { -1.0 } else { 1.0 }).collect();
            let m = dbp_core::passes::DiscriminatorState::new(
                rq,
                vec![w, vec![0.0; code.n()]],
            )
            .and_then(|m| m.with_lattice(vec![1.0, 1.0, 1.0]))
            .map_err(|e| e.to_string())?;
            let post =
                dbp_core::discrim::discriminated_posteriors(&ct, &m).map_err(|e| e.to_string())?;
            let reference =
                oracle::oracle_discriminated(&code, &m).map_err(|e| e.to_string())?;
            let mut worst = 0.0f64;
            for (a, b) in post.l.iter().zip(&reference.l) {
                if a.is_finite() || b.is_finite() {
                    worst = worst.max((a - b).abs());
                }
            }
            println!("max |ΔL⊗| = {worst:.3e} (integer-rounded observation)");
            if worst > 1e-9 {
                return Err(format!("discrimination deviates by {worst:.3e}"));
            }
        }
        Some(other) => return Err(format!("unknown comparison `{other}`")),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_check() -> Result<ExitCode, String> {
    let mut all_ok = true;
    let mut report = |name: &str, ok: bool, detail: String| {
        println!("{}: {} {}", if ok { "PASS" } else { "FAIL" }, name, detail);
        all_ok &= ok;
    };

    // Trellis vs enumeration on random codes.
    {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let n = rng.gen_range(3..10usize);
            let m = rng.gen_range(0..=n);
            let mut h = dbp_core::gf2::BinaryMatrix::zeros(m, n);
            for r in 0..m {
                for c in 0..n {
                    h.set(r, c, rng.gen_bool(0.5));
                }
            }
            let code = dbp_core::code::LinearCode::from_parity(h.clone());
            let trellis = dbp_core::trellis::build_syndrome_trellis(&h);
            let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let bc = bcjr(&trellis, &g).map_err(|e| e.to_string())?;
            let reference = oracle::oracle_linear(&code, &g).map_err(|e| e.to_string())?;
            for (a, b) in bc.l.iter().zip(&reference.symbol_l) {
                if a.is_finite() || b.is_finite() {
                    worst = worst.max((a - b).abs());
                }
            }
        }
        report(
            "bcjr matches enumeration on random codes",
            worst <= 1e-9,
            format!("(max |ΔL| = {worst:.2e})"),
        );
    }

    // Distance spectrum of the length-5 single parity check code.
    {
        let code = dbp_core::code::LinearCode::single_parity_check(5);
        let trellis = dbp_core::trellis::build_syndrome_trellis(
            &code.parity().map_err(|e| e.to_string())?,
        );
        let dd = dbp_core::trellis::distance_distribution(&trellis, &[1; 5], None)
            .map_err(|e| e.to_string())?;
        let ok = dd.d == vec![1.0, 0.0, 10.0, 0.0, 5.0, 0.0];
        report("distance spectrum of SPC(5)", ok, format!("({:?})", dd.d));
    }

    // Channel normalization density ratio.
    {
        use rand::Rng;
        let channel = dbp_core::channel::ChannelSpec::awgn(0.9).map_err(|e| e.to_string())?;
        let mut rng = dbp_core::channel::trial_rng(11);
        let mut ok = true;
        for _ in 0..200 {
            let raw: f64 = rng.gen_range(-3.0..3.0);
            let r = dbp_core::channel::normalize_llr(&[raw], &channel)
                .map_err(|e| e.to_string())?[0];
            let density = |s: f64| (-(raw - s) * (raw - s) / (2.0 * 0.9)).exp();
            let ratio = density(1.0) / density(-1.0);
            ok &= ((2.0 * r).exp2() - ratio).abs() <= 1e-12 * ratio.max(1.0);
        }
        report("awgn normalization density ratio", ok, String::new());
    }

    // Gaussian combination against quadrature in one dimension.
    {
        use dbp_core::gauss::{combine_gauss_cells, GaussCell};
        use dbp_core::linalg::SymMat;
        let g = |mean: f64, var: f64| GaussCell {
            mass: 1.0,
            mean: vec![mean],
            cov: SymMat::from_rows(&[&[var]]),
        };
        let (g1, g2, g0) = (g(0.4, 1.1), g(-0.3, 0.8), g(0.2, 3.0));
        let combined = combine_gauss_cells(&[&g1, &g2], &g0, None).map_err(|e| e.to_string())?;
        let sigma = combined.cov.get(0, 0).sqrt();
        let (lo, hi) = (combined.mean[0] - 14.0 * sigma, combined.mean[0] + 14.0 * sigma);
        let steps = 20000;
        let h = (hi - lo) / steps as f64;
        let pdf = |u: f64, mean: f64, var: f64| {
            (-(u - mean) * (u - mean) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
        };
        let mut acc = 0.0;
        for k in 0..steps {
            let u = lo + (k as f64 + 0.5) * h;
            acc += pdf(u, 0.4, 1.1) * pdf(u, -0.3, 0.8) / pdf(u, 0.2, 3.0);
        }
        acc *= h;
        let got = combined.c_box.exp();
        let ok = (got - acc).abs() <= 1e-6 * acc;
        report(
            "gaussian combination matches quadrature",
            ok,
            format!("({got:.9} vs {acc:.9})"),
        );
    }

    if all_ok {
        Ok(ExitCode::SUCCESS)
    } else {
        Err("invariant battery failed".into())
    }
}
