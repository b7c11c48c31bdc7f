//! Regenerates the frozen Monte Carlo oracle values in `common/frozen.rs`:
//! `cargo test --release --test oracles -- --ignored --nocapture`.

mod common;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const DRAWS: usize = 10_000_000;

fn argmax(latent: &[f64]) -> usize {
    (0..latent.len()).fold(0, |b, i| if latent[i] > latent[b] { i } else { b })
}

fn report(name: &str, x: &[f64]) {
    let (m, se) = mean_se(x);
    println!("pub const {name}: (f64, f64) = ({m:?}, {se:?});");
}

#[test]
#[ignore]
fn regenerate() {
    // P(U_1 - U_0 <= 0), U_1 ~ Logistic(0, 1), U_0 ~ N(0, 1)
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let n01 = Normal::new(0.0, 1.0).unwrap();
    let x: Vec<f64> = (0..DRAWS)
        .map(|_| {
            let p: f64 = rng.random_range(f64::EPSILON..1.0);
            let l = (p / (1.0 - p)).ln();
            f64::from(l - n01.sample(&mut rng) <= 0.0)
        })
        .collect();
    report("LOGISTIC_NORMAL_CDF0", &x);

    let e = figure1_errors();
    let mut draw = e.sampler(102);
    let x: Vec<f64> = (0..DRAWS)
        .map(|_| {
            let v = e.v(&draw());
            f64::from(v[0] <= 0.5 && v[2] <= 0.5)
        })
        .collect();
    report("FIGURE1_JOINT_CDF_HALF", &x);

    let mut draw = e.sampler(103);
    let mut counts = [Vec::with_capacity(DRAWS), Vec::new(), Vec::new()];
    counts[1].reserve(DRAWS);
    counts[2].reserve(DRAWS);
    for _ in 0..DRAWS {
        let u = draw();
        let d = argmax(&[-u[0], -u[1], -u[2]]);
        for (t, c) in counts.iter_mut().enumerate() {
            c.push(f64::from(d == t));
        }
    }
    for (t, c) in counts.iter().enumerate() {
        report(&format!("FIGURE1_ZERO_UTILITY_SHARE_{t}"), c);
    }

    // E[V_2 1{V_0 < 0.9, V_2 < 0.5}]
    let mut draw = e.sampler(104);
    let x: Vec<f64> = (0..DRAWS)
        .map(|_| {
            let v = e.v(&draw());
            if v[0] < 0.9 && v[2] < 0.5 {
                v[2]
            } else {
                0.0
            }
        })
        .collect();
    report("FIGURE1_COND_MEAN_V2_D1", &x);

    // shares with z ~ N(0, I) and utilities (2 z_0, 0, 2 z_1)
    let mut draw = e.sampler(105);
    let mut zr = ChaCha8Rng::seed_from_u64(106);
    let mut counts = [Vec::new(), Vec::new(), Vec::new()];
    for _ in 0..DRAWS {
        let u = draw();
        let (z0, z1) = (n01.sample(&mut zr), n01.sample(&mut zr));
        let d = argmax(&[2.0 * z0 - u[0], -u[1], 2.0 * z1 - u[2]]);
        for (t, c) in counts.iter_mut().enumerate() {
            c.push(f64::from(d == t));
        }
    }
    for (t, c) in counts.iter().enumerate() {
        report(&format!("FIGURE1_SHARE_{t}"), c);
    }
}
