#![allow(dead_code)]

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use uddl::{Dictionary, FeatureMatrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

pub fn features(m: Array2<f64>) -> FeatureMatrix<f64> {
    FeatureMatrix::new(m).unwrap()
}

pub fn normalize_columns(mut m: Array2<f64>) -> Array2<f64> {
    for mut c in m.columns_mut() {
        let n = c.dot(&c).sqrt();
        c.mapv_inplace(|v| v / n);
    }
    m
}

pub fn coherence(m: &Array2<f64>) -> f64 {
    let g = m.t().dot(m);
    let mut mu: f64 = 0.0;
    for i in 0..g.nrows() {
        for j in 0..i {
            mu = mu.max(g[[i, j]].abs());
        }
    }
    mu
}

/// Unit-norm `d x k` dictionary with mutual coherence below `bound`, obtained by
/// gradient descent on the sum of high powers of the pairwise inner products.
pub fn incoherent_dictionary(
    d: usize,
    k: usize,
    bound: f64,
    rng: &mut impl Rng,
) -> Dictionary<f64> {
    loop {
        let mut m = normalize_columns(gaussian(d, k, rng));
        for _ in 0..2000 {
            if coherence(&m) < bound {
                return Dictionary::new(m).unwrap();
            }
            let g = m.t().dot(&m);
            let mut grad = Array2::<f64>::zeros((d, k));
            for i in 0..k {
                for j in 0..k {
                    if i != j {
                        let c = g[[i, j]];
                        let w = c.powi(7);
                        let col = m.column(j).to_owned() * w;
                        let mut gi = grad.column_mut(i);
                        gi += &col;
                    }
                }
            }
            let scale = grad.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1e-12);
            m = normalize_columns(&m - &(grad * (0.05 / scale)));
        }
    }
}

pub fn dist2(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Brute-force nearest column of `pool` to `x`, lowest index on ties.
pub fn nearest(pool: &Array2<f64>, x: ArrayView1<'_, f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, c) in pool.columns().into_iter().enumerate() {
        let d = dist2(c, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Greedy bipartite matching on |inner product|: fraction of `truth` atoms whose
/// match exceeds `threshold`.
pub fn recovered_fraction(learned: &Array2<f64>, truth: &Array2<f64>, threshold: f64) -> f64 {
    let ip = truth.t().dot(learned).mapv(f64::abs);
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..ip.nrows() {
        for j in 0..ip.ncols() {
            pairs.push((ip[[i, j]], i, j));
        }
    }
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut used_t = vec![false; ip.nrows()];
    let mut used_l = vec![false; ip.ncols()];
    let mut hits = 0;
    for (v, i, j) in pairs {
        if used_t[i] || used_l[j] {
            continue;
        }
        used_t[i] = true;
        used_l[j] = true;
        if v > threshold {
            hits += 1;
        }
    }
    hits as f64 / truth.ncols() as f64
}

pub fn vec_close(a: &Array1<f64>, b: &Array1<f64>, tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}
