use dbp_core::code::{dual_couple, identity_permutation, LinearCode};
use dbp_core::gf2::BinaryMatrix;
use dbp_core::sim::*;
use rand::{seq::SliceRandom, SeedableRng};
use std::time::Instant;

fn window_parity(n: usize, window: usize, stride: usize) -> BinaryMatrix {
    let mut offsets = Vec::new();
    let mut j = 0;
    while j + window < n { offsets.push(j); j += stride; }
    offsets.push(n - window);
    let mut h = BinaryMatrix::zeros(offsets.len(), n);
    for (row, &off) in offsets.iter().enumerate() {
        for c in off..off + window { h.set(row, c, true); }
    }
    h
}

fn main() {
    let n = 512;
    let h = window_parity(n, 5, 3);
    let c = LinearCode::from_parity(h);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let code = dual_couple(vec![c.clone(), c], vec![identity_permutation(n), perm]).unwrap();

    for (decoder, max_iters) in [(DecoderKind::GaussDiscrim, 10), (DecoderKind::GaussDiscrim, 11)] {
        let config = SimConfig {
            code: code.clone(),
            code_path: "inline".into(),
            channel: ChannelKind::Awgn,
            sweep: vec![0.4, 0.55, 0.7, 0.9, 1.1],
            decoder,
            trials: 2000,
            seed: 7,
            max_iters,
            tol: None,
            epsilon: 1.0,
            q: 32,
        };
        let t0 = Instant::now();
        let res = run_monte_carlo(&config).unwrap();
        let dt = t0.elapsed().as_secs_f64();
        println!("--- {:?} maxit={max_iters}: {dt:.1}s for 300 trials x 5 points", decoder);
        for p in &res.points {
            println!("  σ²={:<5} ber={:.4e} uncoded={:.4e} ratio={:.2} iters={:.1} conv={:.2}",
                p.param, p.ber, p.uncoded_ber, p.uncoded_ber / p.ber.max(1e-12), p.mean_iters, p.converged_frac);
        }
    }
}
