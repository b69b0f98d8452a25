//! Per-channel phase calibration against a reference point target, plus the
//! signal conditioning steps applied before imaging.
//!
//! A channel error multiplies the IF signal by `α_l exp(j 2π f_l t)` with
//! `f_l = K τ_l`. Given the position of a strong point reflector, the ideal
//! return `r(t)` is known, so `r̃(t) r*(t)` is a complex tone at `f_l` whose
//! frequency is found from the peak of its zero-padded spectrum.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::imaging::ComplexImage;
use crate::signal_model::{distance, phasor_cycles, ChannelError, RadarConfig, RawDataCube, Vec3};

/// Magnitude spectrum of one fast-time vector and the distance of its peak.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeProfile {
    pub magnitudes: Vec<f64>,
    pub peak_bin: usize,
    pub peak_distance: f64,
}

impl RangeProfile {
    /// Distance of bin `b`.
    pub fn bin_distance(&self, cfg: &RadarConfig, b: usize) -> f64 {
        bin_to_distance(cfg, b, self.magnitudes.len())
    }

    /// Bins that are strict local maxima above `floor` times the peak.
    pub fn local_maxima(&self, floor: f64) -> Vec<usize> {
        let m = &self.magnitudes;
        let level = floor * m[self.peak_bin];
        (1..m.len().saturating_sub(1))
            .filter(|&i| m[i] > m[i - 1] && m[i] > m[i + 1] && m[i] >= level)
            .collect()
    }
}

fn bin_to_distance(cfg: &RadarConfig, b: usize, n_fft: usize) -> f64 {
    b as f64 * cfg.sample_rate * cfg.speed_of_light / (2.0 * cfg.slope() * n_fft as f64)
}

fn padded_spectrum(fft: &Arc<dyn Fft<f64>>, signal: impl Iterator<Item = Complex64>, n_fft: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = signal.collect();
    buf.resize(n_fft, Complex64::new(0.0, 0.0));
    fft.process(&mut buf);
    buf
}

/// Zero-padded range FFT of one fast-time vector.
///
/// Bin `b` of the `zero_pad · n` point spectrum maps to
/// `d = b fs c / (2 K N_fft)`; all bins are read as positive beat
/// frequencies.
pub fn range_profile(signal: &[Complex64], cfg: &RadarConfig, zero_pad: usize) -> Result<RangeProfile> {
    if zero_pad < 1 {
        return Err(Error::domain("zero padding factor must be at least 1"));
    }
    if signal.is_empty() {
        return Err(Error::NoPeak("empty signal".into()));
    }
    let n_fft = signal.len() * zero_pad;
    let fft = FftPlanner::new().plan_fft_forward(n_fft);
    let spec = padded_spectrum(&fft, signal.iter().copied(), n_fft);
    let magnitudes: Vec<f64> = spec.iter().map(|v| v.norm()).collect();
    let peak_bin = argmax(&magnitudes);
    if !(magnitudes[peak_bin] > 0.0) {
        return Err(Error::NoPeak("signal has no energy".into()));
    }
    Ok(RangeProfile {
        peak_distance: bin_to_distance(cfg, peak_bin, n_fft),
        magnitudes,
        peak_bin,
    })
}

/// First index of the maximum.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Multilateration result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceEstimate {
    pub point: Vec3,
    /// RMS of `|p_k - x̂| - d_k` over all poses (m).
    pub residual_norm: f64,
}

fn check_ranges(positions: &[Vec3], distances: &[f64], min: usize) -> Result<()> {
    if positions.len() != distances.len() {
        return Err(Error::shape(format!(
            "{} positions but {} distances",
            positions.len(),
            distances.len()
        )));
    }
    if positions.len() < min {
        return Err(Error::geometry(format!(
            "need at least {min} poses, got {}",
            positions.len()
        )));
    }
    if distances.iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(Error::domain("distances must be finite and non-negative"));
    }
    Ok(())
}

fn rank_tolerance(s: &DVector<f64>) -> f64 {
    s.max() * 1e-9
}

/// Recovers a point from its distances to known poses.
///
/// Subtracting the first sphere equation from the others leaves a linear
/// system in the unknown point, solved in the least-squares sense and then
/// refined by one Gauss-Newton pass on the range residuals. Collinear or
/// coplanar poses leave the system rank deficient and are rejected; see
/// [`estimate_reference_point_planar`] for scans confined to a plane.
pub fn estimate_reference_point(positions: &[Vec3], distances: &[f64]) -> Result<ReferenceEstimate> {
    check_ranges(positions, distances, 4)?;
    let p0 = Vector3::from(positions[0]);
    let d0 = distances[0];
    let m = positions.len() - 1;
    let mut a = DMatrix::zeros(m, 3);
    let mut b = DVector::zeros(m);
    for (r, (p, d)) in positions[1..].iter().zip(&distances[1..]).enumerate() {
        let pk = Vector3::from(*p);
        let row = 2.0 * (pk - p0);
        a.set_row(r, &row.transpose());
        b[r] = pk.norm_squared() - p0.norm_squared() - d * d + d0 * d0;
    }
    let svd = a.svd(true, true);
    let tol = rank_tolerance(&svd.singular_values);
    if svd.rank(tol) < 3 {
        return Err(Error::geometry(
            "poses are collinear or coplanar; the linearized system is rank deficient",
        ));
    }
    let x = svd.solve(&b, tol).map_err(|e| Error::geometry(e.to_string()))?;
    let point = gauss_newton_step([x[0], x[1], x[2]], positions, distances)?;
    Ok(ReferenceEstimate {
        point,
        residual_norm: rms_residual(point, positions, distances),
    })
}

/// Multilateration for poses lying in one plane.
///
/// In-plane coordinates come from the same pairwise-difference system
/// restricted to the plane; the out-of-plane offset follows from the mean
/// squared range and is placed on the side of the plane that `facing`
/// points to. One Gauss-Newton pass follows.
pub fn estimate_reference_point_planar(
    positions: &[Vec3],
    distances: &[f64],
    facing: Vec3,
) -> Result<ReferenceEstimate> {
    check_ranges(positions, distances, 3)?;
    let n = positions.len();
    let centroid = positions
        .iter()
        .fold(Vector3::zeros(), |acc, p| acc + Vector3::from(*p))
        / n as f64;
    let mut centered = DMatrix::zeros(n, 3);
    for (r, p) in positions.iter().enumerate() {
        centered.set_row(r, &(Vector3::from(*p) - centroid).transpose());
    }
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let s = &svd.singular_values;
    // singular values are sorted in decreasing order
    if s[1] <= rank_tolerance(s) {
        return Err(Error::geometry("poses are collinear"));
    }
    let u = Vector3::new(v_t[(0, 0)], v_t[(0, 1)], v_t[(0, 2)]);
    let v = Vector3::new(v_t[(1, 0)], v_t[(1, 1)], v_t[(1, 2)]);
    let mut normal: Vector3<f64> = u.cross(&v).normalize();
    if normal.dot(&Vector3::from(facing)) < 0.0 {
        normal = -normal;
    }

    let local: Vec<[f64; 2]> = positions
        .iter()
        .map(|p| {
            let q = Vector3::from(*p) - centroid;
            [q.dot(&u), q.dot(&v)]
        })
        .collect();
    let mut a = DMatrix::zeros(n - 1, 2);
    let mut b = DVector::zeros(n - 1);
    let (q0, d0) = (local[0], distances[0]);
    for r in 1..n {
        let q = local[r];
        a[(r - 1, 0)] = 2.0 * (q[0] - q0[0]);
        a[(r - 1, 1)] = 2.0 * (q[1] - q0[1]);
        b[r - 1] = q[0] * q[0] + q[1] * q[1] - q0[0] * q0[0] - q0[1] * q0[1] - distances[r] * distances[r] + d0 * d0;
    }
    let svd2 = a.svd(true, true);
    let tol = rank_tolerance(&svd2.singular_values);
    if svd2.rank(tol) < 2 {
        return Err(Error::geometry("in-plane system is rank deficient"));
    }
    let ab = svd2.solve(&b, tol).map_err(|e| Error::geometry(e.to_string()))?;
    let h2 = local
        .iter()
        .zip(distances)
        .map(|(q, d)| d * d - (ab[0] - q[0]).powi(2) - (ab[1] - q[1]).powi(2))
        .sum::<f64>()
        / n as f64;
    let start = centroid + u * ab[0] + v * ab[1] + normal * h2.max(0.0).sqrt();
    let point = gauss_newton_step([start[0], start[1], start[2]], positions, distances)?;
    Ok(ReferenceEstimate {
        point,
        residual_norm: rms_residual(point, positions, distances),
    })
}

fn gauss_newton_step(x: Vec3, positions: &[Vec3], distances: &[f64]) -> Result<Vec3> {
    let mut jtj = Matrix3::zeros();
    let mut jtr = Vector3::zeros();
    for (p, d) in positions.iter().zip(distances) {
        let diff = Vector3::from(x) - Vector3::from(*p);
        let range = diff.norm();
        if range == 0.0 {
            continue;
        }
        let j = diff / range;
        let r = range - d;
        jtj += j * j.transpose();
        jtr += j * r;
    }
    match jtj.try_inverse() {
        Some(inv) => {
            let step = inv * jtr;
            Ok([x[0] - step[0], x[1] - step[1], x[2] - step[2]])
        }
        // a point lying in the pose plane has no range sensitivity along the normal
        None => Ok(x),
    }
}

fn rms_residual(x: Vec3, positions: &[Vec3], distances: &[f64]) -> f64 {
    let ss: f64 = positions
        .iter()
        .zip(distances)
        .map(|(p, d)| (distance(x, *p) - d).powi(2))
        .sum();
    (ss / positions.len() as f64).sqrt()
}

/// Centered moving average; near the ends the window shrinks symmetrically.
pub fn average_adjacent_distances(distances: &[f64], window: usize) -> Result<Vec<f64>> {
    if distances.is_empty() {
        return Err(Error::domain("no distances to average"));
    }
    if window == 0 || window.is_multiple_of(2) || window > distances.len() {
        return Err(Error::config(format!(
            "window must be odd and at most {}, got {window}",
            distances.len()
        )));
    }
    let n = distances.len();
    let half = window / 2;
    Ok((0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            let span = &distances[i - h..=i + h];
            span.iter().sum::<f64>() / span.len() as f64
        })
        .collect())
}

/// Unit-gain IF samples of a point at `point` seen from `pose`.
pub fn reference_signal(cfg: &RadarConfig, pose: Vec3, point: Vec3) -> Vec<Complex64> {
    let tau = 2.0 * distance(pose, point) / cfg.speed_of_light;
    let k = cfg.slope();
    (0..cfg.n_samples)
        .map(|i| phasor_cycles((cfg.start_frequency + k * cfg.sample_time(i)) * tau))
        .collect()
}

/// How phase rates are picked from the per-channel spectra.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EstimationMode {
    /// Each channel takes the peak of its own spectrum.
    #[default]
    PerChannel,
    /// All channels share the peak of the summed power spectrum.
    Joint,
}

/// Estimated per-channel phase rate and complex gain.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationModel {
    pub phase_rates: Vec<f64>,
    pub gains: Vec<Complex64>,
}

impl CalibrationModel {
    pub fn identity(n_channels: usize) -> Self {
        Self {
            phase_rates: vec![0.0; n_channels],
            gains: vec![Complex64::new(1.0, 0.0); n_channels],
        }
    }

    /// Model matching a set of injected errors exactly.
    pub fn from_errors(cfg: &RadarConfig, errors: &[ChannelError]) -> Self {
        Self {
            phase_rates: errors.iter().map(|e| e.phase_rate(cfg)).collect(),
            gains: errors.iter().map(|e| e.gain).collect(),
        }
    }

    pub fn n_channels(&self) -> usize {
        self.phase_rates.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.phase_rates.len() != self.gains.len() {
            return Err(Error::shape("phase rate and gain counts differ"));
        }
        let ok = self.phase_rates.iter().all(|f| f.is_finite())
            && self
                .gains
                .iter()
                .all(|g| g.re.is_finite() && g.im.is_finite() && g.norm() > 0.0);
        if !ok {
            return Err(Error::domain("calibration entries must be finite with non-zero gain"));
        }
        Ok(())
    }
}

/// Frequency of bin `m` in an `n_fft` point spectrum, wrapping the upper
/// half to negative frequencies.
pub fn bin_frequency(m: usize, n_fft: usize, sample_rate: f64) -> f64 {
    let signed = if m < n_fft.div_ceil(2) {
        m as f64
    } else {
        m as f64 - n_fft as f64
    };
    signed * sample_rate / n_fft as f64
}

/// Accumulates `|W_l(f)|²` over observations and picks the peak frequency.
struct PhaseRateAccumulator {
    fft: Arc<dyn Fft<f64>>,
    n_fft: usize,
    power: Vec<Vec<f64>>,
}

impl PhaseRateAccumulator {
    fn new(n_channels: usize, n_samples: usize, zero_pad: usize) -> Result<Self> {
        if zero_pad < 1 {
            return Err(Error::domain("zero padding factor must be at least 1"));
        }
        let n_fft = n_samples * zero_pad;
        Ok(Self {
            fft: FftPlanner::new().plan_fft_forward(n_fft),
            n_fft,
            power: vec![vec![0.0; n_fft]; n_channels],
        })
    }

    fn add(&mut self, channel: usize, measured: &[Complex64], reference: &[Complex64]) {
        let w = padded_spectrum(
            &self.fft,
            measured.iter().zip(reference).map(|(m, r)| m * r.conj()),
            self.n_fft,
        );
        for (acc, v) in self.power[channel].iter_mut().zip(&w) {
            *acc += v.norm_sqr();
        }
    }

    fn peaks(&self, mode: EstimationMode, sample_rate: f64) -> Result<Vec<f64>> {
        let pick = |p: &[f64]| -> Result<f64> {
            let b = argmax(p);
            if !(p[b] > 0.0) {
                return Err(Error::NoPeak("reference-compensated signal has no energy".into()));
            }
            Ok(bin_frequency(b, self.n_fft, sample_rate))
        };
        match mode {
            EstimationMode::PerChannel => self.power.iter().map(|p| pick(p)).collect(),
            EstimationMode::Joint => {
                let mut total = vec![0.0; self.n_fft];
                for p in &self.power {
                    for (t, v) in total.iter_mut().zip(p) {
                        *t += v;
                    }
                }
                let f = pick(&total)?;
                Ok(vec![f; self.power.len()])
            }
        }
    }
}

fn check_reference(reference: &[Complex64]) -> Result<()> {
    if reference.iter().all(|r| r.norm_sqr() == 0.0) {
        return Err(Error::domain("reference signal is zero"));
    }
    Ok(())
}

/// Estimates phase rates and gains from one observation per channel.
///
/// `W_l` is the zero-padded FFT of `measured_l · conj(reference)`; the gain
/// is the mean of that product after removing the estimated ramp.
pub fn estimate_phase_rate(
    cfg: &RadarConfig,
    measured: &[Vec<Complex64>],
    reference: &[Complex64],
    zero_pad: usize,
    mode: EstimationMode,
) -> Result<CalibrationModel> {
    check_reference(reference)?;
    if measured.iter().any(|m| m.len() != reference.len()) {
        return Err(Error::shape("measured and reference lengths differ"));
    }
    let mut acc = PhaseRateAccumulator::new(measured.len(), reference.len(), zero_pad)?;
    for (l, m) in measured.iter().enumerate() {
        acc.add(l, m, reference);
    }
    let phase_rates = acc.peaks(mode, cfg.sample_rate)?;
    let gains = measured
        .iter()
        .zip(&phase_rates)
        .map(|(m, &f)| {
            let sum: Complex64 = m
                .iter()
                .zip(reference)
                .enumerate()
                .map(|(i, (m, r))| m * r.conj() * phasor_cycles(-f * cfg.sample_time(i)))
                .sum();
            sum / m.len() as f64
        })
        .collect();
    Ok(CalibrationModel { phase_rates, gains })
}

/// Estimates the calibration model from a cube observing a point reflector
/// at `point`, pooling the spectra of every aperture position.
pub fn estimate_from_cube(
    cube: &RawDataCube,
    point: Vec3,
    zero_pad: usize,
    mode: EstimationMode,
) -> Result<CalibrationModel> {
    let cfg = cube.config;
    let n_ch = cube.n_channels();
    let mut acc = PhaseRateAccumulator::new(n_ch, cfg.n_samples, zero_pad)?;
    let mut observations = Vec::with_capacity(cube.poses.len() * n_ch);
    for ix in 0..cube.n_x() {
        for iy in 0..cube.n_y() {
            for l in 0..n_ch {
                let reference = reference_signal(&cfg, cube.element_position(ix, iy, l), point);
                let measured = cube.samples.slice(ndarray::s![ix, iy, l, ..]).to_vec();
                acc.add(l, &measured, &reference);
                observations.push((l, measured, reference));
            }
        }
    }
    let phase_rates = acc.peaks(mode, cfg.sample_rate)?;
    let ramps: Vec<Vec<Complex64>> = phase_rates
        .iter()
        .map(|&f| {
            (0..cfg.n_samples)
                .map(|i| phasor_cycles(-f * cfg.sample_time(i)))
                .collect()
        })
        .collect();
    let mut sums = vec![Complex64::new(0.0, 0.0); n_ch];
    let mut counts = vec![0usize; n_ch];
    for (l, m, r) in &observations {
        for ((m, r), e) in m.iter().zip(r).zip(&ramps[*l]) {
            sums[*l] += m * r.conj() * e;
        }
        counts[*l] += m.len();
    }
    let gains: Vec<Complex64> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    if gains.iter().any(|g| g.norm() == 0.0) {
        return Err(Error::NoPeak("a channel carries no reference energy".into()));
    }
    Ok(CalibrationModel { phase_rates, gains })
}

/// Locates the reference reflector from per-element range peaks.
///
/// At each aperture position the channels' peak distances are smoothed with
/// [`average_adjacent_distances`] before entering the multilateration. A
/// planar aperture is resolved toward `+z`.
pub fn estimate_reference_from_cube(cube: &RawDataCube, zero_pad: usize, window: usize) -> Result<ReferenceEstimate> {
    let cfg = cube.config;
    let n_ch = cube.n_channels();
    let mut window = window.min(n_ch).max(1);
    if window.is_multiple_of(2) {
        window -= 1;
    }
    let mut positions = Vec::with_capacity(cube.poses.len() * n_ch);
    let mut ranges = Vec::with_capacity(cube.poses.len() * n_ch);
    for ix in 0..cube.n_x() {
        for iy in 0..cube.n_y() {
            let mut per_channel = Vec::with_capacity(n_ch);
            for l in 0..n_ch {
                let v = cube.samples.slice(ndarray::s![ix, iy, l, ..]).to_vec();
                per_channel.push(range_profile(&v, &cfg, zero_pad)?.peak_distance);
            }
            let smoothed = average_adjacent_distances(&per_channel, window)?;
            for (l, d) in smoothed.into_iter().enumerate() {
                positions.push(cube.element_position(ix, iy, l));
                ranges.push(d);
            }
        }
    }
    match estimate_reference_point(&positions, &ranges) {
        Err(Error::Geometry(_)) => estimate_reference_point_planar(&positions, &ranges, [0.0, 0.0, 1.0]),
        other => other,
    }
}

/// Divides channel `l` by `α̂_l` and removes the `f̂_l` phase ramp.
pub fn compensate(cube: &RawDataCube, model: &CalibrationModel) -> Result<RawDataCube> {
    model.validate()?;
    if model.n_channels() != cube.n_channels() {
        return Err(Error::shape(format!(
            "model has {} channels, cube has {}",
            model.n_channels(),
            cube.n_channels()
        )));
    }
    let cfg = cube.config;
    let factors: Vec<Vec<Complex64>> = model
        .phase_rates
        .iter()
        .zip(&model.gains)
        .map(|(&f, g)| {
            let inv = g.inv();
            (0..cfg.n_samples)
                .map(|i| inv * phasor_cycles(-f * cfg.sample_time(i)))
                .collect()
        })
        .collect();
    let mut out = cube.clone();
    for mut plane in out.samples.outer_iter_mut() {
        for mut node in plane.outer_iter_mut() {
            for (l, mut row) in node.outer_iter_mut().enumerate() {
                for (v, f) in row.iter_mut().zip(&factors[l]) {
                    *v *= f;
                }
            }
        }
    }
    Ok(out)
}

/// Least-squares polynomial smoothing of a real sequence.
///
/// Each output sample is the value at that sample of the degree-`order`
/// polynomial fitted to the `window` samples around it. Near the ends the
/// window is truncated to the available samples and the degree drops if the
/// window gets too short for it.
pub fn sg_smooth(signal: &[f64], window: usize, order: usize) -> Result<Vec<f64>> {
    if window.is_multiple_of(2) || order >= window || window > signal.len() {
        return Err(Error::config(format!(
            "Savitzky-Golay needs an odd window with order < window <= length \
             (window {window}, order {order}, length {})",
            signal.len()
        )));
    }
    let n = signal.len();
    let half = window / 2;
    let interior = sg_weights(half, half, order, half);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(n - 1);
        let value = if i - lo == half && hi - i == half {
            dot(&interior, &signal[lo..=hi])
        } else {
            let w = sg_weights(i - lo, hi - i, order, half);
            dot(&w, &signal[lo..=hi])
        };
        out.push(value);
    }
    Ok(out)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Weights that evaluate, at offset 0, the least-squares polynomial through
/// samples at offsets `-left..=right`.
fn sg_weights(left: usize, right: usize, order: usize, scale: usize) -> Vec<f64> {
    let len = left + right + 1;
    let degree = order.min(len - 1);
    let s = scale.max(1) as f64;
    let vander = DMatrix::from_fn(len, degree + 1, |r, c| {
        let z = (r as f64 - left as f64) / s;
        z.powi(c as i32)
    });
    let pinv = vander
        .pseudo_inverse(1e-12)
        .expect("Vandermonde pseudo-inverse with valid epsilon");
    (0..len).map(|j| pinv[(0, j)]).collect()
}

/// Band-pass S-G filter: short-window smoothing minus long-window smoothing,
/// applied to real and imaginary parts separately.
pub fn sg_filter(
    signal: &[Complex64],
    short_window: usize,
    long_window: usize,
    order: usize,
) -> Result<Vec<Complex64>> {
    if short_window > long_window {
        return Err(Error::config("short window exceeds long window"));
    }
    let re: Vec<f64> = signal.iter().map(|v| v.re).collect();
    let im: Vec<f64> = signal.iter().map(|v| v.im).collect();
    let sr = sg_smooth(&re, short_window, order)?;
    let lr = sg_smooth(&re, long_window, order)?;
    let si = sg_smooth(&im, short_window, order)?;
    let li = sg_smooth(&im, long_window, order)?;
    Ok((0..signal.len())
        .map(|i| Complex64::new(sr[i] - lr[i], si[i] - li[i]))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SgParams {
    pub short_window: usize,
    pub long_window: usize,
    pub order: usize,
}

impl Default for SgParams {
    fn default() -> Self {
        Self {
            short_window: 11,
            long_window: 101,
            order: 3,
        }
    }
}

impl SgParams {
    /// Clamps both windows to `len` and forces them odd.
    pub fn clamped(&self, len: usize) -> SgParams {
        let odd_at_most = |w: usize| {
            let w = w.min(len);
            if w.is_multiple_of(2) {
                w.saturating_sub(1)
            } else {
                w
            }
        };
        let long_window = odd_at_most(self.long_window);
        let short_window = odd_at_most(self.short_window).min(long_window);
        SgParams {
            short_window,
            long_window,
            order: self.order,
        }
    }
}

/// Applies [`sg_filter`] to every fast-time vector of a cube.
pub fn condition_cube(cube: &RawDataCube, params: &SgParams) -> Result<RawDataCube> {
    let p = params.clamped(cube.n_samples());
    let mut out = cube.clone();
    for mut plane in out.samples.outer_iter_mut() {
        for mut node in plane.outer_iter_mut() {
            for mut row in node.outer_iter_mut() {
                let filtered = sg_filter(&row.to_vec(), p.short_window, p.long_window, p.order)?;
                for (v, f) in row.iter_mut().zip(filtered) {
                    *v = f;
                }
            }
        }
    }
    Ok(out)
}

/// Element-wise difference of a scene image and a background image on the
/// same grid.
pub fn background_subtract(scene: &ComplexImage, background: &ComplexImage) -> Result<ComplexImage> {
    if !scene.same_grid(background) {
        return Err(Error::shape("scene and background images are on different grids"));
    }
    let mut out = scene.clone();
    out.values = &scene.values - &background.values;
    Ok(out)
}
