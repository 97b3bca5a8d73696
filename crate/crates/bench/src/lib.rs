//! Deterministic fixtures shared by the benchmarks.

use ndarray::Array2;

/// Cheap reproducible value in [0, 1) from an index.
pub fn hash01(i: u64) -> f64 {
    let mut z = i.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    ((z ^ (z >> 31)) >> 11) as f64 / (1u64 << 53) as f64
}

/// Two seconds of a 16 kHz tone mix with a little noise.
pub fn clip_samples(seed: u64) -> Vec<f32> {
    (0..32_000u64)
        .map(|i| {
            let t = i as f64 / 16_000.0;
            let s = 0.5 * (2.0 * std::f64::consts::PI * 220.0 * t).sin()
                + 0.2 * (2.0 * std::f64::consts::PI * 1_300.0 * t).sin()
                + 0.05 * (hash01(seed * 1_000_003 + i) - 0.5);
            s as f32
        })
        .collect()
}

/// Row-stochastic matrix whose rows lean towards `i % k`.
pub fn prob_rows(n: usize, k: usize, seed: u64) -> Array2<f64> {
    let mut p = Array2::from_shape_fn((n, k), |(i, j)| {
        let base = hash01(seed ^ ((i * k + j) as u64) << 1) + 0.05;
        if j == i % k {
            base + 1.5
        } else {
            base
        }
    });
    for mut row in p.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    p
}

/// Features with class signal in the first columns, as stacked meta rows.
pub fn meta_rows(n: usize, width: usize, k: usize) -> (Array2<f64>, Vec<usize>) {
    let y: Vec<usize> = (0..n).map(|i| (hash01(i as u64 * 7 + 1) * k as f64) as usize).collect();
    let x = Array2::from_shape_fn((n, width), |(i, j)| {
        let noise = hash01((i * width + j) as u64 + 99);
        if j < k && y[i] == j {
            0.6 + 0.4 * noise
        } else {
            noise * 0.7
        }
    });
    (x, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_well_formed() {
        assert!((0..1000).map(hash01).all(|v| (0.0..1.0).contains(&v)));
        let p = prob_rows(50, 3, 1);
        for r in p.rows() {
            assert!((r.sum() - 1.0).abs() < 1e-12);
        }
        let (x, y) = meta_rows(40, 11, 3);
        assert_eq!(x.dim(), (40, 11));
        assert!(y.iter().all(|&c| c < 3));
    }
}
