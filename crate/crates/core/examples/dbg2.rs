use dbp_core::code::{dual_couple, identity_permutation, LinearCode};
use dbp_core::gauss::*;
use dbp_core::gf2::BinaryMatrix;
use dbp_core::passes::DiscriminatorState;
use dbp_core::trellis::CoupledTrellises;
use rand::{Rng, SeedableRng, seq::SliceRandom};
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
    let ct = CoupledTrellises::new(code).unwrap();
    let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let w1: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w2: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let m = DiscriminatorState::new(r.clone(), vec![w1, w2]).unwrap();

    let t0 = Instant::now();
    let reps = 100;
    for _ in 0..reps { std::hint::black_box(gauss_moments(&ct, &m).unwrap()); }
    println!("gauss_moments: {:.2} ms", t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);

    let moments = gauss_moments(&ct, &m).unwrap();
    let t0 = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(multi_couple_combine(&moments.constituents, &moments.uncoded, None).unwrap());
    }
    println!("multi_couple_combine: {:.2} ms", t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);

    // attribution: single conditional_moments pass on constituent trellis
    use dbp_core::passes::{conditional_moments, CoordDeltas, MomentOrder};
    use dbp_core::trellis::GainTable;
    let gain0 = ct.code().gather(0, &m.measure_gain(Some(0)));
    let vecs: Vec<Vec<f64>> = m.vectors().map(|v| ct.code().gather(0, v)).collect();
    let refs: Vec<&[f64]> = vecs.iter().map(|v| v.as_slice()).collect();
    let coords = CoordDeltas::from_vectors(ct.trellis(0), &refs).unwrap();
    let gt = GainTable::correlation(ct.trellis(0), &gain0).unwrap();
    let t0 = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(conditional_moments(ct.trellis(0), &gt, &coords, MomentOrder::MeanAndCovariance));
    }
    println!("conditional_moments (1 constituent, prebuilt tables): {:.2} ms", t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);

    let t0 = Instant::now();
    for _ in 0..reps {
        let gain0 = ct.code().gather(0, &m.measure_gain(Some(0)));
        let vecs: Vec<Vec<f64>> = m.vectors().map(|v| ct.code().gather(0, v)).collect();
        let refs: Vec<&[f64]> = vecs.iter().map(|v| v.as_slice()).collect();
        let coords = CoordDeltas::from_vectors(ct.trellis(0), &refs).unwrap();
        let gt = GainTable::correlation(ct.trellis(0), &gain0).unwrap();
        std::hint::black_box((coords.d(), gt.gains.len()));
    }
    println!("table construction only: {:.2} ms", t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);

    // bcjr for comparison
    let gains = dbp_core::trellis::GainTable::correlation(ct.trellis(0), &r).unwrap();
    let t0 = Instant::now();
    for _ in 0..reps { std::hint::black_box(dbp_core::trellis::bcjr_gains(ct.trellis(0), &gains)); }
    println!("bcjr: {:.2} ms", t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);
}
// appended: finer attribution
