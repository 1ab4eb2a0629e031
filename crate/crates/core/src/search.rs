//! One-dimensional maximization: exhaustive grid scan followed by a
//! golden-section polish around the best grid point.

const INV_PHI: f64 = 0.618_033_988_749_894_9;
const GOLDEN_ITERS: usize = 200;

/// Result of a bounded 1-D maximization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Maximum {
    pub arg: f64,
    pub value: f64,
    /// True when golden-section found a better point than the grid.
    pub refined: bool,
    /// Index of the best grid point and the number of grid points.
    pub grid_index: usize,
    pub grid_len: usize,
}

impl Maximum {
    pub fn at_lower_edge(&self) -> bool {
        self.grid_index == 0
    }

    pub fn at_upper_edge(&self) -> bool {
        self.grid_index + 1 == self.grid_len
    }
}

/// Uniform grid of `lo, lo + step, ...` ending exactly at `hi`.
pub fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    assert!(step > 0.0 && hi >= lo);
    let n = ((hi - lo) / step - 1e-9).ceil().max(0.0) as usize;
    let mut pts: Vec<f64> = (0..n).map(|i| lo + i as f64 * step).collect();
    pts.push(hi);
    pts
}

/// Golden-section search for the maximum of `f` on `[a, b]`.
pub fn golden_max<E, F>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> Result<(f64, f64), E>
where
    F: FnMut(f64) -> Result<f64, E>,
{
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    for _ in 0..GOLDEN_ITERS {
        if (b - a).abs() <= tol {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc >= fd { (c, fc) } else { (d, fd) })
}

/// Maximizes `f` over `[lo, hi]`: grid scan with ties going to the smaller
/// argument, then golden-section search on the bracket around the best
/// grid point. The refined point is kept only if it strictly improves.
pub fn grid_then_golden<E, F>(mut f: F, lo: f64, hi: f64, step: f64) -> Result<Maximum, E>
where
    F: FnMut(f64) -> Result<f64, E>,
{
    let pts = grid(lo, hi, step);
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &x) in pts.iter().enumerate() {
        let v = f(x)?;
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    let mut out = Maximum {
        arg: pts[best],
        value: best_val,
        refined: false,
        grid_index: best,
        grid_len: pts.len(),
    };
    if pts.len() < 2 {
        return Ok(out);
    }
    let a = pts[best.saturating_sub(1)];
    let b = pts[(best + 1).min(pts.len() - 1)];
    let (x, v) = golden_max(&mut f, a, b, 1e-12 * (1.0 + b.abs()))?;
    if v > best_val {
        out.arg = x;
        out.value = v;
        out.refined = true;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    fn ok(v: f64) -> Result<f64, Infallible> {
        Ok(v)
    }

    #[test]
    fn grid_ends_at_hi() {
        let g = grid(0.0, 1.0, 0.3);
        assert_eq!(g.len(), 5);
        assert_eq!(*g.last().unwrap(), 1.0);
        let g = grid(0.0, 0.5, 1e-3);
        assert_eq!(g.len(), 501);
        assert!((g[250] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn golden_finds_parabola_peak() {
        let (x, v) = golden_max(|x| ok(-(x - 0.3).powi(2) + 2.0), 0.0, 1.0, 1e-12).unwrap();
        assert!((x - 0.3).abs() < 1e-6);
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn grid_then_golden_finds_global_peak_of_bimodal() {
        // local peak at 0.2 (height 1) and global near 0.773 (height 1.5)
        let f = |x: f64| ok((-(x - 0.2).powi(2) * 400.0).exp() + 1.5 * (-(x - 0.7731).powi(2) * 900.0).exp());
        let m = grid_then_golden(f, 0.0, 1.0, 1e-2).unwrap();
        assert!((m.arg - 0.7731).abs() < 1e-6);
        assert!(m.refined);
    }

    #[test]
    fn monotone_function_hits_edge() {
        let m = grid_then_golden(ok, 0.0, 0.5, 1e-3).unwrap();
        assert_eq!(m.arg, 0.5);
        assert!(m.at_upper_edge());
        assert!(!m.refined);
    }

    #[test]
    fn ties_prefer_smaller_argument() {
        let m = grid_then_golden(|_| ok(1.0), 0.0, 1.0, 0.1).unwrap();
        assert_eq!(m.arg, 0.0);
    }
}
