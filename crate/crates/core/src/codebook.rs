//! Random query codebooks.
//!
//! Row `m` of an `M x N` binary matrix is the codeword of one sensor (a
//! `1/M`-wide interval of the circle); column `n` selects the sensors probed
//! by query `n`. A dither rotates the assignment of rows to sensors by a
//! whole number of sensors, `shift = floor(dither * M)`, so sensor `j` is
//! served by row `(j - shift) mod M`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::infotheory::binary_kl;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodebookError {
    #[error("codebook needs at least 2 rows and 1 column, got {rows} x {cols}")]
    Shape { rows: usize, cols: usize },
    #[error("generation prior {0} is outside (0, 1)")]
    Prior(f64),
    #[error("column tolerance {0} must be positive")]
    Tolerance(f64),
    #[error("no column with weight within {tolerance} of the prior after {attempts} redraws")]
    Concentration { tolerance: f64, attempts: usize },
}

/// Cap on redraws of a single column by [`Codebook::generate_concentrated`].
pub const MAX_COLUMN_REDRAWS: usize = 10_000;

/// An `M x N` binary query matrix with its generation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    rows: usize,
    cols: usize,
    words: usize,
    prior: f64,
    seed: u64,
    dither: f64,
    shift: usize,
    column_tolerance: Option<f64>,
    dithered: bool,
    bits: Vec<u64>,
    weights: Vec<u32>,
}

/// Everything needed to rebuild a codebook; the bits themselves are never stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodebookDescriptor {
    pub rows: usize,
    pub cols: usize,
    pub prior: f64,
    pub seed: u64,
    pub dither: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column_tolerance: Option<f64>,
    /// False when the dither was discarded after generation.
    #[serde(default = "yes")]
    pub dithered: bool,
}

fn yes() -> bool {
    true
}

/// 64 independent Bernoulli bits with `P(1) = threshold / 2^64`.
///
/// Compares 64 uniform integers against the threshold one bit plane at a
/// time, most significant first, stopping once every lane is decided.
pub fn bernoulli_word<R: RngCore + ?Sized>(rng: &mut R, threshold: u64) -> u64 {
    let mut ones = 0u64;
    let mut open = !0u64;
    for k in (0..64).rev() {
        let r = rng.next_u64();
        if (threshold >> k) & 1 == 1 {
            ones |= open & !r;
            open &= r;
        } else {
            open &= !r;
        }
        if open == 0 {
            break;
        }
    }
    ones
}

/// `round(q 2^64)`, saturating.
fn threshold(q: f64) -> u64 {
    let t = (q * 18_446_744_073_709_551_616.0).round();
    if t >= 18_446_744_073_709_551_615.0 {
        u64::MAX
    } else {
        t as u64
    }
}

impl Codebook {
    /// Draws the dither and then every bit i.i.d. `Bern(q)` from the stream
    /// seeded with `seed`.
    pub fn generate(rows: usize, cols: usize, q: f64, seed: u64) -> Result<Self, CodebookError> {
        if rows < 2 || cols < 1 {
            return Err(CodebookError::Shape { rows, cols });
        }
        if !(q > 0.0 && q < 1.0) {
            return Err(CodebookError::Prior(q));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dither: f64 = rng.random();
        let words = cols.div_ceil(64);
        let t = threshold(q);
        let tail = tail_mask(cols);
        let mut bits = Vec::with_capacity(rows * words);
        for _ in 0..rows {
            for w in 0..words {
                let mut v = bernoulli_word(&mut rng, t);
                if w + 1 == words {
                    v &= tail;
                }
                bits.push(v);
            }
        }
        let mut cb = Codebook {
            rows,
            cols,
            words,
            prior: q,
            seed,
            dither,
            shift: shift_of(dither, rows),
            column_tolerance: None,
            dithered: true,
            bits,
            weights: Vec::new(),
        };
        cb.recount();
        Ok(cb)
    }

    /// Like [`Codebook::generate`], then redraws (from a second stream of the same seed) every
    /// column whose weight fraction is farther than `tolerance` from `q`,
    /// until all columns satisfy the concentration event.
    pub fn generate_concentrated(
        rows: usize,
        cols: usize,
        q: f64,
        seed: u64,
        tolerance: f64,
    ) -> Result<Self, CodebookError> {
        if !(tolerance > 0.0) {
            return Err(CodebookError::Tolerance(tolerance));
        }
        let mut cb = Self::generate(rows, cols, q, seed)?;
        cb.column_tolerance = Some(tolerance);
        // redraws come from a separate stream of the same seed
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        for n in 0..cols {
            let mut attempts = 0;
            while !cb.column_ok(n, tolerance) {
                attempts += 1;
                if attempts > MAX_COLUMN_REDRAWS {
                    return Err(CodebookError::Concentration { tolerance, attempts });
                }
                for m in 0..rows {
                    let b = rng.random::<f64>() < q;
                    cb.set_bit(m, n, b);
                }
                cb.weights[n] = (0..rows).filter(|&m| cb.bit(m, n)).count() as u32;
            }
        }
        Ok(cb)
    }

    /// Codebook with explicit rows, for tests and exhaustive checks.
    pub fn from_rows(rows: &[Vec<bool>], prior: f64, shift: usize) -> Result<Self, CodebookError> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if m < 2 || n < 1 || rows.iter().any(|r| r.len() != n) {
            return Err(CodebookError::Shape { rows: m, cols: n });
        }
        let words = n.div_ceil(64);
        let mut cb = Codebook {
            rows: m,
            cols: n,
            words,
            prior,
            seed: 0,
            dither: (shift % m) as f64 / m as f64,
            shift: shift % m,
            column_tolerance: None,
            dithered: true,
            bits: vec![0; m * words],
            weights: Vec::new(),
        };
        for (i, r) in rows.iter().enumerate() {
            for (j, &b) in r.iter().enumerate() {
                cb.set_bit(i, j, b);
            }
        }
        cb.recount();
        Ok(cb)
    }

    /// Regenerates the codebook a descriptor refers to.
    pub fn from_descriptor(d: &CodebookDescriptor) -> Result<Self, CodebookError> {
        let cb = match d.column_tolerance {
            Some(t) => Self::generate_concentrated(d.rows, d.cols, d.prior, d.seed, t)?,
            None => Self::generate(d.rows, d.cols, d.prior, d.seed)?,
        };
        Ok(if d.dithered { cb } else { cb.without_dither() })
    }

    pub fn descriptor(&self) -> CodebookDescriptor {
        CodebookDescriptor {
            rows: self.rows,
            cols: self.cols,
            prior: self.prior,
            seed: self.seed,
            dither: self.dither,
            column_tolerance: self.column_tolerance,
            dithered: self.dithered,
        }
    }

    /// Same bits with the identity row-to-sensor assignment.
    pub fn without_dither(mut self) -> Self {
        self.dither = 0.0;
        self.shift = 0;
        self.dithered = false;
        self
    }

    fn recount(&mut self) {
        let mut w = vec![0u32; self.cols];
        for m in 0..self.rows {
            for (k, &word) in self.row_words(m).iter().enumerate() {
                let mut v = word;
                while v != 0 {
                    w[k * 64 + v.trailing_zeros() as usize] += 1;
                    v &= v - 1;
                }
            }
        }
        self.weights = w;
    }

    fn set_bit(&mut self, m: usize, n: usize, b: bool) {
        let idx = m * self.words + n / 64;
        let mask = 1u64 << (n % 64);
        if b {
            self.bits[idx] |= mask;
        } else {
            self.bits[idx] &= !mask;
        }
    }

    fn column_ok(&self, n: usize, tol: f64) -> bool {
        (self.weights[n] as f64 / self.rows as f64 - self.prior).abs() <= tol
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn prior(&self) -> f64 {
        self.prior
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dither(&self) -> f64 {
        self.dither
    }

    /// Integer rotation applied by the dither.
    pub fn shift(&self) -> usize {
        self.shift
    }

    pub fn column_tolerance(&self) -> Option<f64> {
        self.column_tolerance
    }

    /// Words per row; bit `n` of a row lives in word `n / 64`, position `n % 64`.
    pub fn words_per_row(&self) -> usize {
        self.words
    }

    pub fn row_words(&self, m: usize) -> &[u64] {
        &self.bits[m * self.words..(m + 1) * self.words]
    }

    pub fn bit(&self, m: usize, n: usize) -> bool {
        (self.bits[m * self.words + n / 64] >> (n % 64)) & 1 == 1
    }

    /// Number of ones in column `n`.
    pub fn column_weight(&self, n: usize) -> usize {
        self.weights[n] as usize
    }

    /// Query size `|S_n| = weight / M` of column `n`.
    pub fn query_size(&self, n: usize) -> f64 {
        self.weights[n] as f64 / self.rows as f64
    }

    pub fn row_of_sensor(&self, sensor: usize) -> usize {
        (sensor + self.rows - self.shift) % self.rows
    }

    pub fn sensor_of_row(&self, row: usize) -> usize {
        (row + self.shift) % self.rows
    }

    /// Sensors probed by query `n` (0-based), in increasing order, and the query size.
    pub fn query_set(&self, n: usize) -> (Vec<usize>, f64) {
        let set = (0..self.rows).filter(|&j| self.bit(self.row_of_sensor(j), n)).collect();
        (set, self.query_size(n))
    }

    /// Row whose codeword the target at position `w` answers with.
    pub fn encode_target(&self, w: f64) -> usize {
        self.row_of_sensor(sensor_index(w, self.rows))
    }

    /// Whether every column weight fraction lies within `eps` of the prior,
    /// and the largest deviation.
    pub fn concentration_event(&self, eps: f64) -> (bool, f64) {
        let worst = (0..self.cols)
            .map(|n| (self.query_size(n) - self.prior).abs())
            .fold(0.0, f64::max);
        (worst <= eps, worst)
    }
}

/// Sensor `floor(w M)` containing position `w` in [0, 1).
pub fn sensor_index(w: f64, rows: usize) -> usize {
    let w = w.rem_euclid(1.0);
    ((w * rows as f64) as usize).min(rows - 1)
}

fn shift_of(dither: f64, rows: usize) -> usize {
    ((dither * rows as f64) as usize).min(rows - 1)
}

fn tail_mask(cols: usize) -> u64 {
    match cols % 64 {
        0 => !0,
        r => (1u64 << r) - 1,
    }
}

/// Chernoff bound on the probability that some column weight fraction of an
/// i.i.d. `Bern(q)` codebook deviates from `q` by more than `eps`:
/// `min(1, N (2^{-M D(q+eps||q)} + 2^{-M D(q-eps||q)}))`.
pub fn concentration_failure_bound(rows: usize, cols: usize, q: f64, eps: f64) -> f64 {
    let m = rows as f64;
    let upper = if q + eps < 1.0 { (-m * binary_kl(q + eps, q)).exp2() } else { 0.0 };
    let lower = if q - eps > 0.0 { (-m * binary_kl(q - eps, q)).exp2() } else { 0.0 };
    (cols as f64 * (upper + lower)).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn bernoulli_word_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &q in &[0.01, 0.15, 0.5, 0.93] {
            let t = threshold(q);
            let n = 20_000;
            let ones: u32 = (0..n).map(|_| bernoulli_word(&mut rng, t).count_ones()).sum();
            let total = 64.0 * n as f64;
            let sigma = (q * (1.0 - q) / total).sqrt();
            assert!((ones as f64 / total - q).abs() < 4.0 * sigma, "q={q}");
        }
    }

    #[test]
    fn near_one_prior_gives_all_ones() {
        let cb = Codebook::generate(50, 70, 1.0 - 1e-12, 3).unwrap();
        let ones: usize = (0..70).map(|n| cb.column_weight(n)).sum();
        // expected number of zeros is 3.5e-9
        assert_eq!(ones, 50 * 70);
    }

    #[test]
    fn column_weight_mean() {
        let (m, n, q) = (1000, 100, 0.3);
        let cb = Codebook::generate(m, n, q, 42).unwrap();
        let mean = (0..n).map(|c| cb.query_size(c)).sum::<f64>() / n as f64;
        let sigma = (q * (1.0 - q) / (m * n) as f64).sqrt();
        assert!((mean - q).abs() < 4.0 * sigma, "{mean}");
    }

    #[test]
    fn generation_is_deterministic() {
        let a = Codebook::generate(300, 130, 0.2, 9).unwrap();
        let b = Codebook::generate(300, 130, 0.2, 9).unwrap();
        assert_eq!(a, b);
        let c = Codebook::generate(300, 130, 0.2, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(Codebook::generate(1, 5, 0.5, 0).is_err());
        assert!(Codebook::generate(4, 0, 0.5, 0).is_err());
        assert!(Codebook::generate(4, 5, 1.0, 0).is_err());
        assert!(Codebook::generate(4, 5, 0.0, 0).is_err());
    }

    #[test]
    fn query_set_examples() {
        let rows = vec![vec![false, true, true], vec![false, true, false], vec![false, true, true]];
        let cb = Codebook::from_rows(&rows, 0.5, 0).unwrap();
        assert_eq!(cb.query_set(0), (vec![], 0.0));
        assert_eq!(cb.query_set(1), (vec![0, 1, 2], 1.0));
        assert_eq!(cb.query_set(2).0, vec![0, 2]);
        let shifted = Codebook::from_rows(&rows, 0.5, 1).unwrap();
        // row 1 now serves sensor 2
        assert_eq!(shifted.query_set(2).0, vec![0, 1]);
    }

    #[test]
    fn zero_dither_support_is_raw_column() {
        let cb = Codebook::generate(40, 10, 0.4, 5).unwrap().without_dither();
        for n in 0..10 {
            let raw: Vec<usize> = (0..40).filter(|&m| cb.bit(m, n)).collect();
            assert_eq!(cb.query_set(n).0, raw);
        }
    }

    #[test]
    fn encode_target_examples() {
        let cb = Codebook::generate(16, 8, 0.3, 77).unwrap();
        assert_eq!(cb.encode_target(cb.dither()), 0);
        let rows = vec![vec![true]; 4];
        let cb = Codebook::from_rows(&rows, 0.5, 0).unwrap();
        assert_eq!(cb.encode_target(0.6), 2);
        assert_eq!(cb.encode_target(0.0), 0);
        assert_eq!(cb.encode_target(0.999_999), 3);
    }

    #[test]
    fn encode_target_uniform_histogram() {
        let m = 16;
        let cb = Codebook::generate(m, 4, 0.5, 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 1_000_000;
        let mut hist = vec![0u64; m];
        for _ in 0..n {
            hist[cb.encode_target(rng.random::<f64>())] += 1;
        }
        let e = n as f64 / m as f64;
        let chi2: f64 = hist.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        let crit = ChiSquared::new((m - 1) as f64).unwrap().inverse_cdf(0.99);
        assert!(chi2 < crit, "{chi2} >= {crit}");
    }

    #[test]
    fn concentration_trivial_tolerance() {
        let cb = Codebook::generate(5, 20, 0.3, 1).unwrap();
        assert!(cb.concentration_event(0.7).0);
    }

    #[test]
    fn concentration_two_by_one_exhaustive() {
        for (a, b) in [(false, false), (false, true), (true, false), (true, true)] {
            let cb = Codebook::from_rows(&[vec![a], vec![b]], 0.5, 0).unwrap();
            assert_eq!(cb.concentration_event(0.1).0, a != b);
        }
    }

    #[test]
    fn concentration_failures_below_chernoff_bound() {
        let (m, n, q, eps) = (100_000, 50, 0.3, 0.02);
        let bound = concentration_failure_bound(m, n, q, eps);
        let failures = (0..1000u64)
            .filter(|&s| !Codebook::generate(m, n, q, s).unwrap().concentration_event(eps).0)
            .count();
        assert!(failures as f64 / 1000.0 <= bound, "{failures} failures, bound {bound}");
    }

    #[test]
    fn chernoff_bound_against_exact_binomial_tail() {
        use statrs::distribution::{Binomial, DiscreteCDF};
        let (m, q, eps) = (200, 0.3, 0.08);
        let bin = Binomial::new(q, m as u64).unwrap();
        let hi = ((q + eps) * m as f64).floor() as u64;
        let lo = ((q - eps) * m as f64).ceil() as u64;
        let exact_one_column = bin.sf(hi) + bin.cdf(lo - 1);
        assert!(exact_one_column <= concentration_failure_bound(m, 1, q, eps));
    }

    #[test]
    fn column_fractions_converge() {
        let q = 0.3;
        let mut prev = f64::INFINITY;
        for &m in &[1_000, 10_000, 100_000] {
            let cb = Codebook::generate(m, 40, q, 2).unwrap();
            let (_, worst) = cb.concentration_event(1.0);
            let mean = (0..40).map(|c| cb.query_size(c)).sum::<f64>() / 40.0;
            let sigma = (q * (1.0 - q) / (40 * m) as f64).sqrt();
            assert!((mean - q).abs() < 4.0 * sigma);
            assert!(worst < prev);
            prev = worst;
        }
    }

    #[test]
    fn concentrated_generation_meets_tolerance() {
        let cb = Codebook::generate_concentrated(10, 200, 0.15, 4, 0.05).unwrap();
        assert!(cb.concentration_event(0.05).0);
        let again = Codebook::from_descriptor(&cb.descriptor()).unwrap();
        assert_eq!(cb, again);
        assert!(Codebook::generate_concentrated(10, 5, 0.15, 4, 0.0).is_err());
    }

    /// The clean answer pattern seen by a target depends only on its row;
    /// a uniform rotation and a uniform target both make the row uniform.
    #[test]
    fn dither_equivalence_exhaustive() {
        for m in 2..=8usize {
            for n in 1..=4usize {
                let mut rng = ChaCha8Rng::seed_from_u64((m * 10 + n) as u64);
                for _ in 0..20 {
                    let rows: Vec<Vec<bool>> =
                        (0..m).map(|_| (0..n).map(|_| rng.random::<bool>()).collect()).collect();
                    let pattern = |cb: &Codebook, sensor: usize| -> usize {
                        let r = cb.row_of_sensor(sensor);
                        (0..n).fold(0, |acc, k| acc | (cb.bit(r, k) as usize) << k)
                    };
                    for w_sensor in 0..m {
                        let mut dithered = vec![0usize; 1 << n];
                        for s in 0..m {
                            let cb = Codebook::from_rows(&rows, 0.5, s).unwrap();
                            dithered[pattern(&cb, w_sensor)] += 1;
                        }
                        let plain = Codebook::from_rows(&rows, 0.5, 0).unwrap();
                        let mut uniform_w = vec![0usize; 1 << n];
                        for j in 0..m {
                            uniform_w[pattern(&plain, j)] += 1;
                        }
                        assert_eq!(dithered, uniform_w);
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn descriptor_round_trip(rows in 2usize..200, cols in 1usize..150, q in 0.01f64..0.99, seed: u64) {
            let cb = Codebook::generate(rows, cols, q, seed).unwrap();
            let json = serde_json::to_string(&cb.descriptor()).unwrap();
            let d: CodebookDescriptor = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(Codebook::from_descriptor(&d).unwrap(), cb);
        }

        #[test]
        fn sensor_row_bijection(rows in 2usize..300, seed: u64) {
            let cb = Codebook::generate(rows, 3, 0.5, seed).unwrap();
            for j in 0..rows {
                prop_assert_eq!(cb.sensor_of_row(cb.row_of_sensor(j)), j);
            }
        }

        #[test]
        fn query_size_matches_set(rows in 2usize..100, cols in 1usize..80, q in 0.05f64..0.95, seed: u64) {
            let cb = Codebook::generate(rows, cols, q, seed).unwrap();
            for n in 0..cols {
                let (set, size) = cb.query_set(n);
                prop_assert_eq!(set.len(), cb.column_weight(n));
                prop_assert!((size - set.len() as f64 / rows as f64).abs() < 1e-15);
            }
        }
    }
}
