//! Maximum-likelihood decoding, erasure decoding and the validation test.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, Normal};

use crate::channels::{ChannelKind, ChannelModel, Observation};
use crate::codebook::Codebook;

/// Outcome of a decoder allowed to refuse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Decoded(usize),
    Erasure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Validation {
    Accept,
    Erase,
}

/// Packs binary observations into 64-bit words, bit `n` of word `n / 64`.
/// Returns `None` if any observation is real-valued.
pub fn pack_bits(y: &[Observation]) -> Option<Vec<u64>> {
    let mut words = vec![0u64; y.len().div_ceil(64)];
    for (n, o) in y.iter().enumerate() {
        if o.as_bit()? {
            words[n / 64] |= 1 << (n % 64);
        }
    }
    Some(words)
}

/// Hamming distance between row `m` and packed observations.
#[inline]
pub fn mismatches(cb: &Codebook, m: usize, ybits: &[u64]) -> u32 {
    cb.row_words(m).iter().zip(ybits).map(|(a, b)| (a ^ b).count_ones()).sum()
}

/// Row with the fewest mismatches, ties to the smallest index.
pub fn min_distance_row(cb: &Codebook, ybits: &[u64]) -> (usize, u32) {
    let mut best = (0, u32::MAX);
    for m in 0..cb.rows() {
        let d = mismatches(cb, m, ybits);
        if d < best.1 {
            best = (m, d);
        }
    }
    best
}

/// `log2 P(y | row m)` for every row when decoding with query size `q_decode`.
pub fn row_log_likelihoods(cb: &Codebook, y: &[Observation], model: &ChannelModel, q_decode: f64) -> Vec<f64> {
    assert_eq!(y.len(), cb.cols(), "observation length must equal the codebook length");
    match model.kind() {
        ChannelKind::LinearBsc { .. } => {
            let ybits = pack_bits(y).expect("binary channel needs bit observations");
            let p = model.effective_crossover(q_decode).unwrap();
            let n = cb.cols() as u32;
            (0..cb.rows())
                .map(|m| bsc_log_likelihood(n, mismatches(cb, m, &ybits), p))
                .collect()
        }
        ChannelKind::GaussianPair { .. } => {
            let (base, diff) = gaussian_terms(y, model, q_decode);
            (0..cb.rows()).map(|m| base + masked_sum(cb.row_words(m), &diff)).collect()
        }
    }
}

/// `log2` likelihood of `d` mismatches out of `n` through BSC(p), with `0 log 0 = 0`.
pub fn bsc_log_likelihood(n: u32, d: u32, p: f64) -> f64 {
    let agree = if n > d { (n - d) as f64 * (1.0 - p).log2() } else { 0.0 };
    let flip = if d > 0 { d as f64 * p.log2() } else { 0.0 };
    agree + flip
}

/// Log-likelihood of the all-zero codeword and per-position increments
/// `log2 P(y_n|1) - log2 P(y_n|0)`.
pub fn gaussian_terms(y: &[Observation], model: &ChannelModel, q: f64) -> (f64, Vec<f64>) {
    let mut base = 0.0;
    let diff = y
        .iter()
        .map(|o| {
            let v = o.as_real().expect("Gaussian channel needs real observations");
            let l1 = model.ln_density(v, true, q) / LN_2;
            let l0 = model.ln_density(v, false, q) / LN_2;
            base += l0;
            l1 - l0
        })
        .collect();
    (base, diff)
}

/// Sum of `diff[n]` over the set bits of `words`.
#[inline]
pub fn masked_sum(words: &[u64], diff: &[f64]) -> f64 {
    let mut s = 0.0;
    for (k, &w) in words.iter().enumerate() {
        let mut v = w;
        while v != 0 {
            s += diff[k * 64 + v.trailing_zeros() as usize];
            v &= v - 1;
        }
    }
    s
}

fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (m, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = m;
        }
    }
    best
}

/// Maximum-likelihood row under the memoryless channel `P_{q_decode}`,
/// ties to the smallest index.
pub fn ml_decode(cb: &Codebook, y: &[Observation], model: &ChannelModel, q_decode: f64) -> usize {
    if let (ChannelKind::LinearBsc { .. }, Some(ybits)) = (model.kind(), pack_bits(y)) {
        assert_eq!(y.len(), cb.cols(), "observation length must equal the codebook length");
        let p = model.effective_crossover(q_decode).unwrap();
        if p >= 0.5 {
            return 0;
        }
        return min_distance_row(cb, &ybits).0;
    }
    argmax(&row_log_likelihoods(cb, y, model, q_decode))
}

/// `log2 sum_i 2^{s_i}` over the scores except index `skip`.
fn log2_sum_except(scores: &[f64], skip: usize) -> f64 {
    let max = scores
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != skip)
        .map(|(_, &s)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = scores
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != skip)
        .map(|(_, &s)| (s - max).exp2())
        .sum();
    max + sum.log2()
}

/// Erasure decoding: outputs the ML row `m` when
/// `P(y|x_m) / sum_{m' != m} P(y|x_m') >= 2^{N T}`, otherwise erases.
pub fn forney_decision(
    cb: &Codebook,
    y: &[Observation],
    model: &ChannelModel,
    q_decode: f64,
    threshold: f64,
) -> Decision {
    let scores = row_log_likelihoods(cb, y, model, q_decode);
    forney_from_scores(&scores, cb.cols(), threshold)
}

/// Erasure rule on precomputed `log2` row likelihoods. A tie for the
/// largest likelihood always erases.
pub fn forney_from_scores(scores: &[f64], n: usize, threshold: f64) -> Decision {
    let best = argmax(scores);
    if scores.iter().enumerate().any(|(i, &s)| i != best && s == scores[best]) {
        return Decision::Erasure;
    }
    let rest = log2_sum_except(scores, best);
    let margin = scores[best] - rest;
    // an empty competitor set or -inf competitors give an infinite ratio
    if margin.is_nan() || margin < n as f64 * threshold {
        Decision::Erasure
    } else {
        Decision::Decoded(best)
    }
}

/// Log-likelihood ratio (bits) of validation observations, hit versus miss,
/// through `P_delta`.
pub fn validation_llr(y_val: &[Observation], model: &ChannelModel, delta: f64) -> f64 {
    match model.kind() {
        ChannelKind::LinearBsc { .. } => {
            let p = model.effective_crossover(delta).unwrap();
            let k = y_val.iter().filter(|o| o.as_bit() == Some(true)).count();
            bsc_llr(k, y_val.len(), p)
        }
        ChannelKind::GaussianPair { .. } => y_val
            .iter()
            .map(|o| {
                let v = o.as_real().expect("Gaussian channel needs real observations");
                (model.ln_density(v, true, delta) - model.ln_density(v, false, delta)) / LN_2
            })
            .sum(),
    }
}

/// LLR of `k` ones among `len` BSC(p) outputs.
pub fn bsc_llr(k: usize, len: usize, p: f64) -> f64 {
    if p == 0.0 {
        return if k == len { f64::INFINITY } else { f64::NEG_INFINITY };
    }
    (2.0 * k as f64 - len as f64) * ((1.0 - p) / p).log2()
}

/// Accepts the hypothesis that the probed interval holds the target iff the
/// log-likelihood ratio is at least `threshold`.
pub fn validation_test(y_val: &[Observation], model: &ChannelModel, delta: f64, threshold: f64) -> Validation {
    if validation_llr(y_val, model, delta) >= threshold {
        Validation::Accept
    } else {
        Validation::Erase
    }
}

/// Neyman-Pearson threshold for `len` validation queries: the largest
/// threshold whose probability of erasing a correct estimate is at most
/// `false_erase`. Exact binomial for the BSC, normal approximation of the
/// LLR sum for the Gaussian pair.
pub fn np_threshold(model: &ChannelModel, delta: f64, len: usize, false_erase: f64) -> f64 {
    if len == 0 {
        return f64::NEG_INFINITY;
    }
    match model.kind() {
        ChannelKind::LinearBsc { .. } => {
            let p = model.effective_crossover(delta).unwrap();
            if p == 0.0 {
                // a hit never produces a zero; demand all ones
                return 0.0;
            }
            if p >= 0.5 {
                return f64::NEG_INFINITY;
            }
            let k = bsc_accept_count(len, p, false_erase);
            bsc_llr(k, len, p)
        }
        ChannelKind::GaussianPair { .. } => {
            let (mean, var) = gaussian_llr_moments(model, delta);
            let z = Normal::new(0.0, 1.0).unwrap().inverse_cdf(false_erase.clamp(1e-300, 1.0 - 1e-16));
            len as f64 * mean + (len as f64 * var).sqrt() * z
        }
    }
}

/// Smallest number of ones `k` to accept such that a hit (ones with
/// probability `1 - p`) falls below `k` with probability at most `false_erase`.
pub fn bsc_accept_count(len: usize, p: f64, false_erase: f64) -> usize {
    let hits = Binomial::new(1.0 - p, len as u64).unwrap();
    // P(K < k) = cdf(k - 1); increasing in k
    let mut k = 0;
    while k < len && hits.cdf(k as u64) <= false_erase {
        k += 1;
    }
    k
}

/// Mean and variance (bits) of the per-query validation LLR under a hit.
pub fn gaussian_llr_moments(model: &ChannelModel, delta: f64) -> (f64, f64) {
    let (m1, v1) = model.gaussian_params(true, delta).unwrap();
    let (_, v0) = model.gaussian_params(false, delta).unwrap();
    // LLR(y) ln 2 = const + b y + c y^2 with the miss mean at zero
    let b = m1 / v1;
    let c = 0.5 / v0 - 0.5 / v1;
    let var_y = v1;
    let var = b * b * var_y + 2.0 * c * c * var_y * var_y + 4.0 * c * c * m1 * m1 * var_y + 4.0 * b * c * m1 * var_y;
    (model.divergence_c1(delta), var / (LN_2 * LN_2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::Discrete;

    fn bits(v: usize, n: usize) -> Vec<Observation> {
        (0..n).map(|k| Observation::Bit((v >> k) & 1 == 1)).collect()
    }

    fn random_rows(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Vec<Vec<bool>> {
        (0..m).map(|_| (0..n).map(|_| rng.random::<bool>()).collect()).collect()
    }

    /// Posterior argmax with a uniform row prior, computed by products of
    /// per-symbol probabilities rather than distances.
    fn posterior_argmax(rows: &[Vec<bool>], y: &[Observation], eps: f64) -> usize {
        let post: Vec<f64> = rows
            .iter()
            .map(|r| {
                r.iter()
                    .zip(y)
                    .map(|(&x, o)| if o.as_bit() == Some(x) { 1.0 - eps } else { eps })
                    .product::<f64>()
                    / rows.len() as f64
            })
            .collect();
        let mut best = 0;
        for (i, &p) in post.iter().enumerate() {
            if p > post[best] * (1.0 + 1e-12) {
                best = i;
            }
        }
        best
    }

    #[test]
    fn clean_channel_recovers_row() {
        let model = ChannelModel::linear_bsc(0.0, 0.0).unwrap();
        let rows: Vec<Vec<bool>> = (0..8).map(|m| (0..3).map(|k| (m >> k) & 1 == 1).collect()).collect();
        let cb = Codebook::from_rows(&rows, 0.5, 0).unwrap();
        for m in 0..8 {
            let y: Vec<Observation> = rows[m].iter().map(|&b| Observation::Bit(b)).collect();
            assert_eq!(ml_decode(&cb, &y, &model, 0.5), m);
            assert_eq!(forney_decision(&cb, &y, &model, 0.5, 1e6), Decision::Decoded(m));
        }
    }

    #[test]
    fn identical_rows_tie_to_first() {
        let model = ChannelModel::linear_bsc(0.0, 0.1).unwrap();
        let cb = Codebook::from_rows(&vec![vec![true, false, true]; 5], 0.5, 0).unwrap();
        assert_eq!(ml_decode(&cb, &bits(0b011, 3), &model, 0.5), 0);
        let g = ChannelModel::gaussian_pair(1.0, 0.0, 0.0).unwrap();
        let y = vec![Observation::Real(0.3); 3];
        assert_eq!(ml_decode(&cb, &y, &g, 0.5), 0);
    }

    #[test]
    fn ml_matches_posterior_exhaustively() {
        let model = ChannelModel::linear_bsc(0.0, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for m in 2..=8 {
            for n in 1..=6 {
                for _ in 0..5 {
                    let rows = random_rows(&mut rng, m, n);
                    let cb = Codebook::from_rows(&rows, 0.5, 0).unwrap();
                    for v in 0..1usize << n {
                        let y = bits(v, n);
                        assert_eq!(ml_decode(&cb, &y, &model, 0.3), posterior_argmax(&rows, &y, 0.1));
                    }
                }
            }
        }
    }

    #[test]
    fn gaussian_scores_match_direct_sum() {
        let g = ChannelModel::gaussian_pair(1.0, 0.5, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cb = Codebook::generate(20, 70, 0.3, 5).unwrap();
        let y: Vec<Observation> = (0..70).map(|_| Observation::Real(rng.random::<f64>() * 3.0 - 1.0)).collect();
        let scores = row_log_likelihoods(&cb, &y, &g, 0.3);
        for m in 0..20 {
            let direct: f64 = (0..70).map(|n| g.log_likelihood(y[n], cb.bit(m, n), 0.3).unwrap()).sum();
            assert!((scores[m] - direct).abs() < 1e-9);
        }
    }

    #[test]
    fn forney_erases_everything_at_huge_threshold() {
        let model = ChannelModel::linear_bsc(0.0, 0.1).unwrap();
        let cb = Codebook::generate(8, 6, 0.5, 3).unwrap();
        for v in 0..64 {
            assert_eq!(forney_decision(&cb, &bits(v, 6), &model, 0.5, 50.0), Decision::Erasure);
        }
    }

    #[test]
    fn forney_undetected_errors_shrink_with_threshold() {
        let model = ChannelModel::linear_bsc(0.0, 0.1).unwrap();
        let cb = Codebook::generate(8, 6, 0.5, 17).unwrap();
        let rows: Vec<Vec<bool>> = (0..8).map(|m| (0..6).map(|n| cb.bit(m, n)).collect()).collect();
        // undetected-error mass summed over true rows and all outputs
        let mass = |t: f64| -> f64 {
            let mut total = 0.0;
            for truth in 0..8 {
                for v in 0..64usize {
                    let y = bits(v, 6);
                    if let Decision::Decoded(m) = forney_decision(&cb, &y, &model, 0.5, t) {
                        if m != truth {
                            let d = (0..6).filter(|&n| rows[truth][n] != ((v >> n) & 1 == 1)).count();
                            total += 0.1f64.powi(d as i32) * 0.9f64.powi(6 - d as i32);
                        }
                    }
                }
            }
            total
        };
        let mut prev = f64::INFINITY;
        for t in [0.0, 0.1, 0.2, 0.4, 0.8] {
            let e = mass(t);
            assert!(e <= prev + 1e-15);
            prev = e;
        }
    }

    #[test]
    fn forney_at_zero_threshold_erases_or_agrees_with_ml() {
        let model = ChannelModel::linear_bsc(0.0, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let rows = random_rows(&mut rng, 8, 6);
            let cb = Codebook::from_rows(&rows, 0.5, 0).unwrap();
            for v in 0..64 {
                let y = bits(v, 6);
                let ml = ml_decode(&cb, &y, &model, 0.5);
                match forney_decision(&cb, &y, &model, 0.5, 0.0) {
                    Decision::Decoded(m) => assert_eq!(m, ml),
                    Decision::Erasure => {}
                }
            }
        }
        // exact tie between the two best rows always erases
        let cb = Codebook::from_rows(&[vec![true, true], vec![true, true]], 0.5, 0).unwrap();
        assert_eq!(forney_decision(&cb, &bits(3, 2), &model, 0.5, 0.0), Decision::Erasure);
    }

    #[test]
    fn very_negative_threshold_always_accepts() {
        let model = ChannelModel::linear_bsc(0.0, 0.1).unwrap();
        let y = bits(0, 30);
        assert_eq!(validation_test(&y, &model, 0.001, -1e300), Validation::Accept);
        let g = ChannelModel::gaussian_pair(1.0, 0.0, 0.0).unwrap();
        let y = vec![Observation::Real(-5.0); 30];
        assert_eq!(validation_test(&y, &g, 0.001, -1e300), Validation::Accept);
    }

    /// Per-query acceptance fraction theta with D(theta || p) = target.
    fn theta_for_exponent(p: f64, target: f64) -> f64 {
        let (mut lo, mut hi) = (p, 1.0 - 1e-15);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if crate::infotheory::binary_kl(mid, p) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn hit_accepted_at_half_stein_exponent() {
        let model = ChannelModel::linear_bsc(0.0, 0.1).unwrap();
        let p = 0.1;
        let len = 200;
        let theta = theta_for_exponent(p, 0.5 * model.divergence_c1(0.001));
        let k = (theta * len as f64).ceil() as usize;
        let threshold = bsc_llr(k, len, p);
        // exact binomial oracle for the hit acceptance probability
        let exact = 1.0 - Binomial::new(1.0 - p, len as u64).unwrap().cdf(k as u64 - 1);
        assert!(exact >= 0.99, "{exact}");
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let trials = 20_000;
        let accepted = (0..trials)
            .filter(|_| {
                let y: Vec<Observation> = (0..len).map(|_| model.sample_output(true, 0.001, &mut rng)).collect();
                validation_test(&y, &model, 0.001, threshold) == Validation::Accept
            })
            .count();
        assert!(accepted as f64 / trials as f64 >= 0.99);
    }

    #[test]
    fn false_accept_decays_at_the_chosen_exponent() {
        let model = ChannelModel::linear_bsc(0.0, 0.3).unwrap();
        let p = 0.3;
        let target = 0.05;
        let theta = theta_for_exponent(p, target);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let trials = 200_000;
        let mut rates = Vec::new();
        let lens = [50usize, 100, 150];
        for &len in &lens {
            let k = (theta * len as f64).ceil() as usize;
            let threshold = bsc_llr(k, len, p);
            let hits = (0..trials)
                .filter(|_| {
                    let y: Vec<Observation> = (0..len).map(|_| model.sample_output(false, 0.0, &mut rng)).collect();
                    validation_test(&y, &model, 0.0, threshold) == Validation::Accept
                })
                .count();
            rates.push(hits as f64 / trials as f64);
        }
        let slope = (rates[0].log2() - rates[2].log2()) / (lens[2] - lens[0]) as f64;
        assert!(rates[0] > rates[1] && rates[1] > rates[2]);
        assert!(slope <= model.divergence_c1(0.0));
        assert!((slope - target).abs() < 0.5 * target, "slope {slope}");
    }

    #[test]
    fn np_threshold_meets_false_erase_target() {
        let model = ChannelModel::linear_bsc(0.7, 0.1).unwrap();
        for len in [4usize, 5, 6, 20, 60] {
            let t = np_threshold(&model, 0.001, len, 1e-2);
            let p = model.effective_crossover(0.001).unwrap();
            let hits = Binomial::new(1.0 - p, len as u64).unwrap();
            // P(erase | hit) = P(LLR < t)
            let erase: f64 = (0..=len)
                .filter(|&k| bsc_llr(k, len, p) < t)
                .map(|k| hits.pmf(k as u64))
                .sum();
            assert!(erase <= 1e-2, "len {len}: {erase}");
            // one step lower would exceed the target or accept everything
            let k = bsc_accept_count(len, p, 1e-2);
            assert!(k == 0 || hits.cdf(k as u64) > 1e-2);
        }
        assert_eq!(np_threshold(&model, 0.001, 0, 1e-2), f64::NEG_INFINITY);
    }

    #[test]
    fn gaussian_llr_moments_match_monte_carlo() {
        let g = ChannelModel::gaussian_pair(0.8, 0.5, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 400_000;
        let samples: Vec<f64> = (0..n)
            .map(|_| validation_llr(&[g.sample_output(true, 0.01, &mut rng)], &g, 0.01))
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n as f64;
        let (m, v) = gaussian_llr_moments(&g, 0.01);
        assert!((mean - m).abs() < 5e-3, "{mean} vs {m}");
        assert!((var - v).abs() / v < 2e-2, "{var} vs {v}");
    }

}
