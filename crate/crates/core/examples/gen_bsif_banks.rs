//! Regenerates the shipped BSIF filter banks under `data/bsif/`.
//!
//! Filters are the leading principal components of zero-mean patches drawn
//! from seeded 1/f noise images (natural-image power spectrum). The output
//! uses the same JSON format as externally learned banks, so those can
//! replace these files directly.
//!
//! Run with: cargo run -p smad-core --example gen_bsif_banks

use std::path::PathBuf;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

const IMAGES: usize = 13;
const SIDE: usize = 256;
const PATCHES: usize = 60_000;
const SIZES: [usize; 8] = [3, 5, 7, 9, 11, 13, 15, 17];
const BITS: std::ops::RangeInclusive<usize> = 5..=12;

fn pink_noise(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = SIDE;
    let mut data: Vec<Complex64> = (0..n * n)
        .map(|_| Complex64::new(rng.sample(StandardNormal), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let transpose = |d: &mut Vec<Complex64>| {
        let mut t = d.clone();
        for y in 0..n {
            for x in 0..n {
                t[x * n + y] = d[y * n + x];
            }
        }
        *d = t;
    };
    for row in data.chunks_exact_mut(n) {
        fwd.process(row);
    }
    transpose(&mut data);
    for row in data.chunks_exact_mut(n) {
        fwd.process(row);
    }
    transpose(&mut data);
    for y in 0..n {
        let fy = if y <= n / 2 { y } else { n - y } as f64;
        for x in 0..n {
            let fx = if x <= n / 2 { x } else { n - x } as f64;
            let f = (fx * fx + fy * fy).sqrt();
            data[y * n + x] *= if f == 0.0 { 0.0 } else { 1.0 / f };
        }
    }
    for row in data.chunks_exact_mut(n) {
        inv.process(row);
    }
    transpose(&mut data);
    for row in data.chunks_exact_mut(n) {
        inv.process(row);
    }
    data.iter().map(|c| c.re).collect()
}

fn learn(images: &[Vec<f64>], size: usize, rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<f64>) {
    let d = size * size;
    let mut cov = DMatrix::<f64>::zeros(d, d);
    let mut patch = vec![0.0; d];
    for _ in 0..PATCHES {
        let img = &images[rng.random_range(0..images.len())];
        let x0 = rng.random_range(0..=SIDE - size);
        let y0 = rng.random_range(0..=SIDE - size);
        for y in 0..size {
            for x in 0..size {
                patch[y * size + x] = img[(y0 + y) * SIDE + x0 + x];
            }
        }
        let mean = patch.iter().sum::<f64>() / d as f64;
        patch.iter_mut().for_each(|v| *v -= mean);
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += patch[i] * patch[j];
            }
        }
    }
    cov /= PATCHES as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let filters = order
        .iter()
        .map(|&i| {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let mean = v.iter().sum::<f64>() / d as f64;
            v.iter_mut().for_each(|x| *x -= mean);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let pivot = v
                .iter()
                .copied()
                .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
            v.iter().map(|x| sign * x / norm).collect()
        })
        .collect();
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    (filters, values)
}

fn main() {
    let out = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/bsif");
    std::fs::create_dir_all(&out).expect("create data/bsif");
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_B51F);
    let images: Vec<Vec<f64>> = (0..IMAGES).map(|_| pink_noise(&mut rng)).collect();

    for size in SIZES {
        let (filters, _) = learn(&images, size, &mut rng);
        for bits in BITS.clone().filter(|&b| b < size * size) {
            let id = format!("{size}x{size}_{bits}bit");
            let rows: Vec<String> = filters[..bits]
                .iter()
                .map(|f| {
                    let vals: Vec<String> = f.iter().map(|v| format!("{v:.12}")).collect();
                    format!("    [{}]", vals.join(", "))
                })
                .collect();
            let json = format!(
                "{{\n  \"source_id\": \"{id}\",\n  \"size\": {size},\n  \"bits\": {bits},\n  \"filters\": [\n{}\n  ]\n}}\n",
                rows.join(",\n")
            );
            let path = out.join(format!("bsif_{id}.json"));
            std::fs::write(&path, json).expect("write bank");
            println!("wrote {}", path.display());
        }
    }
}
