//! Image quality, distance-error and depth-completion metrics.
//!
//! Depth metrics evaluate only pixels valid in both maps whose ground truth
//! lies in [`VALID_DEPTH`]. All functions are pure.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::imaging::{argmax2, ProfileAxis};

/// Depth range (m) treated as valid ground truth.
pub const VALID_DEPTH: (f64, f64) = (0.3, 0.6);

/// Energy-normalized Shannon entropy (nats) of a magnitude image.
pub fn image_entropy(magnitudes: &Array2<f64>) -> Result<f64> {
    if magnitudes.iter().any(|m| !m.is_finite()) {
        return Err(Error::domain("magnitudes must be finite"));
    }
    let energy: f64 = magnitudes.iter().map(|m| m * m).sum();
    if !(energy > 0.0) {
        return Err(Error::domain("image has no energy"));
    }
    let h = magnitudes
        .iter()
        .map(|m| m * m / energy)
        .filter(|p| *p > 0.0)
        .map(|p| -p * p.ln())
        .sum::<f64>();
    Ok(h.max(0.0))
}

/// Sorted absolute distance errors.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCdf {
    pub errors: Vec<f64>,
    pub median: f64,
}

impl ErrorCdf {
    /// Fraction of errors at or below `e`.
    pub fn fraction_below(&self, e: f64) -> f64 {
        self.errors.partition_point(|x| *x <= e) as f64 / self.errors.len() as f64
    }
}

pub fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

pub fn distance_error_cdf(estimates: &[f64], truth: f64) -> Result<ErrorCdf> {
    if estimates.is_empty() {
        return Err(Error::domain("no estimates"));
    }
    if !truth.is_finite() || estimates.iter().any(|e| !e.is_finite()) {
        return Err(Error::domain("distances must be finite"));
    }
    let mut errors: Vec<f64> = estimates.iter().map(|e| (e - truth).abs()).collect();
    errors.sort_by(f64::total_cmp);
    let median = median(&errors);
    Ok(ErrorCdf { errors, median })
}

/// Extent of the region above `peak - threshold_db` along `axis`, measured
/// on the line through the magnitude centroid of that region.
///
/// Grids are indexed `[x][y]`; `pitch` is the spacing along the chosen axis.
pub fn estimate_extent(magnitudes: &Array2<f64>, pitch: f64, threshold_db: f64, axis: ProfileAxis) -> Result<f64> {
    if !(pitch > 0.0) || !(threshold_db > 0.0) {
        return Err(Error::domain("pitch and threshold must be positive"));
    }
    let (pi, pj) = argmax2(magnitudes);
    let peak = magnitudes[[pi, pj]];
    if !(peak > 0.0) || !peak.is_finite() {
        return Err(Error::NoPeak("image has no positive peak".into()));
    }
    let level = peak * 10f64.powf(-threshold_db / 20.0);
    let (mut w, mut cx, mut cy) = (0.0, 0.0, 0.0);
    for ((i, j), m) in magnitudes.indexed_iter() {
        if *m >= level {
            w += m;
            cx += m * i as f64;
            cy += m * j as f64;
        }
    }
    let line: Vec<f64> = match axis {
        ProfileAxis::Horizontal => magnitudes.column((cy / w).round() as usize).to_vec(),
        ProfileAxis::Vertical => magnitudes.row((cx / w).round() as usize).to_vec(),
    };
    let above: Vec<usize> = (0..line.len()).filter(|&i| line[i] >= level).collect();
    let (Some(&first), Some(&last)) = (above.first(), above.last()) else {
        return Err(Error::NoPeak("centroid line never reaches the threshold".into()));
    };
    if first == 0 || last + 1 == line.len() {
        return Err(Error::NoPeak("no threshold crossing inside the image".into()));
    }
    let interp = |inside: usize, outside: usize| {
        let t = (line[inside] - level) / (line[inside] - line[outside]);
        inside as f64 + t * (outside as f64 - inside as f64)
    };
    Ok((interp(last, last + 1) - interp(first, first - 1)) * pitch)
}

/// Real depth grid (`H × W`, meters) with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub values: Array2<f64>,
    pub valid_mask: Array2<bool>,
}

impl DepthMap {
    pub fn new(values: Array2<f64>, valid_mask: Array2<bool>) -> Result<Self> {
        if values.dim() != valid_mask.dim() {
            return Err(Error::shape(format!(
                "depth {:?} and mask {:?} differ in shape",
                values.dim(),
                valid_mask.dim()
            )));
        }
        if values.iter().zip(valid_mask.iter()).any(|(v, m)| *m && !v.is_finite()) {
            return Err(Error::domain("valid depth values must be finite"));
        }
        Ok(Self { values, valid_mask })
    }

    /// Every finite value is valid.
    pub fn from_values(values: Array2<f64>) -> Self {
        let valid_mask = values.mapv(f64::is_finite);
        Self { values, valid_mask }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }
}

/// Pixels valid in both maps with ground truth inside [`VALID_DEPTH`].
pub fn evaluation_mask(pred: &DepthMap, truth: &DepthMap) -> Result<Array2<bool>> {
    if pred.dim() != truth.dim() {
        return Err(Error::shape(format!(
            "prediction {:?} and ground truth {:?} differ in shape",
            pred.dim(),
            truth.dim()
        )));
    }
    let (lo, hi) = VALID_DEPTH;
    Ok(Array2::from_shape_fn(pred.dim(), |p| {
        pred.valid_mask[p] && truth.valid_mask[p] && truth.values[p] >= lo && truth.values[p] <= hi
    }))
}

fn masked_pairs(pred: &DepthMap, truth: &DepthMap) -> Result<Vec<(f64, f64)>> {
    let mask = evaluation_mask(pred, truth)?;
    let pairs: Vec<(f64, f64)> = mask
        .indexed_iter()
        .filter(|(_, m)| **m)
        .map(|(p, _)| (pred.values[p], truth.values[p]))
        .collect();
    if pairs.is_empty() {
        return Err(Error::domain("no valid pixels to evaluate"));
    }
    Ok(pairs)
}

pub fn depth_rmse(pred: &DepthMap, truth: &DepthMap) -> Result<f64> {
    let pairs = masked_pairs(pred, truth)?;
    let sse: f64 = pairs.iter().map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / pairs.len() as f64).sqrt())
}

pub fn depth_mae(pred: &DepthMap, truth: &DepthMap) -> Result<f64> {
    let pairs = masked_pairs(pred, truth)?;
    Ok(pairs.iter().map(|(p, t)| (p - t).abs()).sum::<f64>() / pairs.len() as f64)
}

/// Percentage of pixels with `max(p/t, t/p) < delta`; non-positive
/// predictions count as failures.
pub fn threshold_delta(pred: &DepthMap, truth: &DepthMap, delta: f64) -> Result<f64> {
    if !(delta > 1.0) {
        return Err(Error::domain(format!("delta must exceed 1, got {delta}")));
    }
    let pairs = masked_pairs(pred, truth)?;
    let hits = pairs
        .iter()
        .filter(|(p, t)| *p > 0.0 && (p / t).max(t / p) < delta)
        .count();
    Ok(100.0 * hits as f64 / pairs.len() as f64)
}

/// Sum of squared depth differences over valid pixels.
pub fn loss_depth(pred: &DepthMap, truth: &DepthMap) -> Result<f64> {
    let pairs = masked_pairs(pred, truth)?;
    Ok(pairs.iter().map(|(p, t)| (p - t) * (p - t)).sum())
}

/// Unnormalized surface normal `t_h × t_w = (D_w, D_h, -1)` at `(h, w)`
/// from forward differences.
pub fn surface_normal(d: &Array2<f64>, h: usize, w: usize) -> [f64; 3] {
    let dw = d[[h, w + 1]] - d[[h, w]];
    let dh = d[[h + 1, w]] - d[[h, w]];
    [dw, dh, -1.0]
}

/// `Σ_p (1 - cos∠(n_pred, n_truth))` over pixels whose right and lower
/// neighbors are valid as well.
pub fn loss_surface_normal(pred: &DepthMap, truth: &DepthMap) -> Result<f64> {
    let mask = evaluation_mask(pred, truth)?;
    let (h_n, w_n) = mask.dim();
    if h_n < 2 || w_n < 2 {
        return Err(Error::shape("surface normals need at least a 2x2 map"));
    }
    let mut loss = 0.0;
    let mut used = 0usize;
    for h in 0..h_n - 1 {
        for w in 0..w_n - 1 {
            if !(mask[[h, w]] && mask[[h, w + 1]] && mask[[h + 1, w]]) {
                continue;
            }
            let a = surface_normal(&pred.values, h, w);
            let b = surface_normal(&truth.values, h, w);
            let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
            let na = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
            let nb = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
            loss += 1.0 - (dot / (na * nb)).clamp(-1.0, 1.0);
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::domain("no pixel has valid forward neighbors"));
    }
    Ok(loss)
}

/// Divergence of `N(mu, diag(sigma²))` from the standard normal.
pub fn kl_standard_normal(mu: &[f64], sigma: &[f64]) -> Result<f64> {
    if mu.len() != sigma.len() {
        return Err(Error::shape("mu and sigma differ in length"));
    }
    if sigma.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::domain("sigma must be positive"));
    }
    Ok(0.5
        * mu.iter()
            .zip(sigma)
            .map(|(m, s)| m * m + s * s - (s * s).ln() - 1.0)
            .sum::<f64>())
}

pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_BETA: f64 = 0.01;

/// `l_d + alpha l_kl + beta l_sn`.
pub fn combined_loss(l_d: f64, l_kl: f64, l_sn: f64, alpha: f64, beta: f64) -> f64 {
    l_d + alpha * l_kl + beta * l_sn
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn map(values: Array2<f64>) -> DepthMap {
        DepthMap::from_values(values)
    }

    #[test]
    fn entropy_examples() {
        let mut one = Array2::zeros((4, 4));
        one[[2, 1]] = 3.0;
        assert_eq!(image_entropy(&one).unwrap(), 0.0);
        let flat = Array2::from_elem((5, 7), 0.3);
        assert!((image_entropy(&flat).unwrap() - 35f64.ln()).abs() < 1e-12);
        let m = array![[0.5f64.sqrt(), 0.5], [0.125f64.sqrt(), 0.125f64.sqrt()]];
        let expected: f64 = [0.5f64, 0.25, 0.125, 0.125].iter().map(|p| -p * p.ln()).sum();
        assert!((image_entropy(&m).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 1.2130).abs() < 1e-4);
        assert!(image_entropy(&Array2::zeros((3, 3))).is_err());
    }

    #[test]
    fn cdf_examples() {
        let c = distance_error_cdf(&[0.11, 0.13], 0.12).unwrap();
        assert!((c.errors[0] - 0.01).abs() < 1e-12 && (c.errors[1] - 0.01).abs() < 1e-12);
        assert!((c.median - 0.01).abs() < 1e-12);
        let z = distance_error_cdf(&[0.3; 5], 0.3).unwrap();
        assert!(z.errors.iter().all(|e| *e == 0.0) && z.median == 0.0);
        assert!(distance_error_cdf(&[], 0.1).is_err());
        let c = distance_error_cdf(&[0.5, 0.1, 0.3], 0.0).unwrap();
        assert_eq!(c.errors, vec![0.1, 0.3, 0.5]);
        assert_eq!(c.median, 0.3);
        assert!((c.fraction_below(0.3) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn cdf_median_of_uniform_errors() {
        use rand::{Rng, SeedableRng};
        // one uniform draw per stratum of [0, 1e-2]
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let est: Vec<f64> = (0..101)
            .map(|i| 0.2 + (i as f64 + rng.random_range(0.0..1.0)) * 1e-2 / 101.0)
            .collect();
        let c = distance_error_cdf(&est, 0.2).unwrap();
        assert!((c.median - 5e-3).abs() < 1e-3);
    }

    #[test]
    fn extent_of_box_and_errors() {
        let mut m = Array2::zeros((20, 9));
        for i in 5..15 {
            m[[i, 4]] = 1.0;
        }
        // crossings land half way between the last lit and first dark pixel
        let e = estimate_extent(&m, 1e-3, 6.0, ProfileAxis::Horizontal).unwrap();
        let t = 1.0 - 10f64.powf(-6.0 / 20.0);
        assert!((e - (9.0 + 2.0 * t) * 1e-3).abs() < 1e-12);
        let flat = Array2::from_elem((6, 6), 1.0);
        assert!(estimate_extent(&flat, 1e-3, 3.0, ProfileAxis::Vertical).is_err());
        assert!(estimate_extent(&Array2::zeros((4, 4)), 1e-3, 3.0, ProfileAxis::Vertical).is_err());
    }

    #[test]
    fn depth_examples() {
        let t = map(Array2::from_elem((2, 2), 0.4));
        let p = map(Array2::from_elem((2, 2), 0.41));
        assert!((depth_rmse(&p, &t).unwrap() - 0.01).abs() < 1e-12);
        assert_eq!(depth_rmse(&t, &t).unwrap(), 0.0);
        let p2 = map(array![[0.42, 0.38]]);
        let t2 = map(array![[0.4, 0.4]]);
        assert!((depth_mae(&p2, &t2).unwrap() - 0.02).abs() < 1e-12);
        assert_eq!(threshold_delta(&t, &t, 1.05).unwrap(), 100.0);
        let scaled = map(t.values.mapv(|v| 1.2 * v));
        assert_eq!(threshold_delta(&scaled, &t, 1.10).unwrap(), 0.0);
        assert_eq!(threshold_delta(&scaled, &t, 1.25).unwrap(), 100.0);
        assert!(threshold_delta(&t, &t, 1.0).is_err());
        let mut one_off = t.clone();
        one_off.values[[0, 1]] += 0.1;
        assert!((loss_depth(&one_off, &t).unwrap() - 0.01).abs() < 1e-12);
    }

    #[test]
    fn invalid_truth_is_excluded() {
        let t = map(array![[0.2, 0.4], [0.7, 0.5]]);
        let mut p = t.clone();
        p.values[[0, 0]] = 9.0;
        p.values[[1, 0]] = -3.0;
        assert_eq!(depth_rmse(&p, &t).unwrap(), 0.0);
        let out = map(Array2::from_elem((2, 2), 0.9));
        assert!(matches!(depth_rmse(&out, &out), Err(Error::Domain(_))));
        let small = map(Array2::from_elem((1, 2), 0.4));
        assert!(matches!(depth_rmse(&small, &t), Err(Error::Shape(_))));
    }

    #[test]
    fn non_positive_prediction_fails_delta() {
        let t = map(array![[0.4, 0.4]]);
        let p = map(array![[0.0, 0.4]]);
        assert_eq!(threshold_delta(&p, &t, 1.25).unwrap(), 50.0);
    }

    #[test]
    fn surface_normal_examples() {
        let plane =
            |a: f64, b: f64, c: f64| map(Array2::from_shape_fn((5, 6), |(h, w)| c + a * h as f64 + b * w as f64));
        let t = plane(0.01, -0.02, 0.45);
        assert!(loss_surface_normal(&t, &t).unwrap().abs() < 1e-12);
        assert!(loss_surface_normal(&plane(0.01, -0.02, 0.35), &t).unwrap().abs() < 1e-12);
        // flat versus slope s along w: each of the 4x5 gradient pixels
        // contributes 1 - 1/sqrt(1 + s²)
        let s = 0.03;
        let flat = plane(0.0, 0.0, 0.4);
        let tilted = plane(0.0, s, 0.4);
        let expected = 20.0 * (1.0 - 1.0 / (1.0 + s * s).sqrt());
        assert!((loss_surface_normal(&flat, &tilted).unwrap() - expected).abs() < 1e-12);
        let mut sparse = t.clone();
        sparse.valid_mask.fill(false);
        sparse.valid_mask[[0, 0]] = true;
        assert!(loss_surface_normal(&sparse, &t).is_err());
    }

    #[test]
    fn normal_orientation() {
        let d = array![[0.0, 2.0], [3.0, 0.0]];
        assert_eq!(surface_normal(&d, 0, 0), [2.0, 3.0, -1.0]);
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_standard_normal(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!((kl_standard_normal(&[1.0], &[1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(kl_standard_normal(&[0.0], &[0.0]).is_err());
        assert!(kl_standard_normal(&[0.0], &[-1.0]).is_err());
    }

    #[test]
    fn kl_matches_quadrature() {
        // divergence of independent components is the sum of 1-D integrals
        fn kl_1d(mu: f64, sigma: f64) -> f64 {
            let q = |x: f64| {
                let z = (x - mu) / sigma;
                (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
            };
            let p = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
            let (a, b, n) = (mu - 12.0 * sigma, mu + 12.0 * sigma, 200_000);
            let h = (b - a) / n as f64;
            // composite Simpson
            let f = |x: f64| {
                let qx = q(x);
                if qx > 0.0 {
                    qx * (qx / p(x)).ln()
                } else {
                    0.0
                }
            };
            let mut s = f(a) + f(b);
            for i in 1..n {
                s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * h / 3.0
        }
        let oracle = kl_1d(0.5, 2.0) + kl_1d(-0.5, 0.5);
        let closed = kl_standard_normal(&[0.5, -0.5], &[2.0, 0.5]).unwrap();
        assert!((closed - oracle).abs() < 1e-8, "{closed} vs {oracle}");
    }

    #[test]
    fn combined_defaults() {
        assert!((combined_loss(1.0, 2.0, 3.0, DEFAULT_ALPHA, DEFAULT_BETA) - 1.23).abs() < 1e-15);
    }
}
