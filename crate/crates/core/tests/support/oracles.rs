//! Brute-force reference computations. Nothing here calls into the library's
//! ranking, selection or greedy code paths.
#![allow(dead_code)]

/// Perplexity in product form: (prod p)^(-1/N).
pub fn perplexity_product(probs: &[f64]) -> f64 {
    let product: f64 = probs.iter().product();
    product.powf(-1.0 / probs.len() as f64)
}

/// Rank by counting: 1 + #smaller + (#equal - 1) / 2.
pub fn explicit_ranks(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .map(|v| {
            let smaller = values.iter().filter(|w| *w < v).count() as f64;
            let equal = values.iter().filter(|w| *w == v).count() as f64;
            1.0 + smaller + (equal - 1.0) / 2.0
        })
        .collect()
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx.sqrt() * vy.sqrt())
}

pub fn spearman_oracle(x: &[f64], y: &[f64]) -> f64 {
    pearson(&explicit_ranks(x), &explicit_ranks(y))
}

/// Indices selected by "top `budget` IFD strictly below `cap`", ties to the
/// earlier index, computed by counting how many eligible samples outrank each one.
pub fn select_oracle(ifds: &[f64], budget: usize, cap: f64) -> Vec<usize> {
    let eligible: Vec<usize> = (0..ifds.len()).filter(|&i| ifds[i] < cap).collect();
    let mut placed: Vec<(usize, usize)> = eligible
        .iter()
        .map(|&i| {
            let ahead = eligible
                .iter()
                .filter(|&&j| ifds[j] > ifds[i] || (ifds[j] == ifds[i] && j < i))
                .count();
            (ahead, i)
        })
        .filter(|(ahead, _)| *ahead < budget)
        .collect();
    placed.sort();
    placed.into_iter().map(|(_, i)| i).collect()
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// F(S) = sum over ground points of the best clipped cosine to S.
pub fn facility_value(points: &[Vec<f32>], ground: &[usize], selected: &[usize]) -> f64 {
    ground
        .iter()
        .map(|&i| {
            selected
                .iter()
                .map(|&j| cosine(&points[i], &points[j]).max(0.0))
                .fold(0.0, f64::max)
        })
        .sum()
}

/// Best F over all size-k subsets of `ground`.
pub fn facility_opt(points: &[Vec<f32>], ground: &[usize], k: usize) -> f64 {
    let m = ground.len();
    let mut best = 0.0f64;
    for mask in 0u32..(1 << m) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let subset: Vec<usize> = (0..m).filter(|b| mask & (1 << b) != 0).map(|b| ground[b]).collect();
        best = best.max(facility_value(points, ground, &subset));
    }
    best
}
