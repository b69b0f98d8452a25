//! FMCW waveform, scene and aperture geometry, and raw data synthesis.
//!
//! The intermediate-frequency (beat) signal of a point scatterer at one-way
//! distance `d` is
//!
//! ```text
//! r(t) = g * exp(j 2π (f0 + K t) τ),   τ = 2d / c
//! ```
//!
//! which in the wavenumber domain reads `g * exp(j 2 k d)` with
//! `k = 2π (f0 + K t) / c`. Amplitude does not depend on distance.

use std::f64::consts::PI;

use ndarray::parallel::prelude::*;
use ndarray::{Array4, Axis};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Propagation speed in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// A point or offset in meters.
pub type Vec3 = [f64; 3];

pub(crate) fn distance(a: Vec3, b: Vec3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

pub(crate) fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// `exp(j 2π cycles)` with the integer part of `cycles` removed first.
#[inline]
pub(crate) fn phasor_cycles(cycles: f64) -> Complex64 {
    Complex64::cis(2.0 * PI * (cycles - cycles.round()))
}

/// FMCW waveform and sampling parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadarConfig {
    /// Chirp start frequency (Hz).
    pub start_frequency: f64,
    /// Swept bandwidth (Hz).
    pub bandwidth: f64,
    /// Chirp duration (s).
    pub chirp_duration: f64,
    /// Complex sample rate (Hz).
    pub sample_rate: f64,
    /// Samples per chirp.
    pub n_samples: usize,
    /// Propagation speed (m/s).
    pub speed_of_light: f64,
}

impl Default for RadarConfig {
    /// 61.8 GHz start, 3.6 GHz sweep, 4.4 MHz sampling, 256 samples per chirp.
    fn default() -> Self {
        Self::with_samples(256)
    }
}

impl RadarConfig {
    pub fn new(
        start_frequency: f64,
        bandwidth: f64,
        chirp_duration: f64,
        sample_rate: f64,
        n_samples: usize,
    ) -> Result<Self> {
        let cfg = Self {
            start_frequency,
            bandwidth,
            chirp_duration,
            sample_rate,
            n_samples,
            speed_of_light: SPEED_OF_LIGHT,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Default waveform with `n_samples` per chirp; the chirp lasts exactly
    /// as long as the sampling window so the full bandwidth is observed.
    pub fn with_samples(n_samples: usize) -> Self {
        let sample_rate = 4.4e6;
        Self {
            start_frequency: 61.8e9,
            bandwidth: 3.6e9,
            chirp_duration: n_samples as f64 / sample_rate,
            sample_rate,
            n_samples,
            speed_of_light: SPEED_OF_LIGHT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.start_frequency,
            self.bandwidth,
            self.chirp_duration,
            self.sample_rate,
            self.speed_of_light,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::config("radar parameters must be finite"));
        }
        if self.bandwidth <= 0.0 || self.chirp_duration <= 0.0 || self.sample_rate <= 0.0 {
            return Err(Error::config(
                "bandwidth, chirp duration and sample rate must be positive",
            ));
        }
        if self.speed_of_light <= 0.0 {
            return Err(Error::config("propagation speed must be positive"));
        }
        if self.n_samples < 2 {
            return Err(Error::config("at least two samples per chirp are required"));
        }
        let slope = self.slope();
        if !slope.is_finite() || slope <= 0.0 {
            return Err(Error::config("frequency slope must be finite and positive"));
        }
        let window = self.n_samples as f64 / self.sample_rate;
        if window > self.chirp_duration * (1.0 + 1e-12) {
            return Err(Error::config(format!(
                "{} samples at {} Hz span {window:e} s, longer than the {:e} s chirp",
                self.n_samples, self.sample_rate, self.chirp_duration
            )));
        }
        Ok(())
    }

    /// Frequency slope `K = B / T` (Hz/s).
    pub fn slope(&self) -> f64 {
        self.bandwidth / self.chirp_duration
    }

    pub fn sample_time(&self, i: usize) -> f64 {
        i as f64 / self.sample_rate
    }

    pub fn sample_times(&self) -> Vec<f64> {
        (0..self.n_samples).map(|i| self.sample_time(i)).collect()
    }

    /// Wavelength at the start frequency.
    pub fn wavelength(&self) -> f64 {
        self.speed_of_light / self.start_frequency
    }

    /// Range resolution `c / 2B`.
    pub fn range_resolution(&self) -> f64 {
        self.speed_of_light / (2.0 * self.bandwidth)
    }

    /// Beat frequency produced by a target at one-way distance `d`.
    pub fn beat_frequency(&self, d: f64) -> f64 {
        2.0 * d * self.slope() / self.speed_of_light
    }
}

/// Whether the residual video phase `-0.5 K τ²` is kept in the IF model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PhaseModel {
    #[default]
    Approximate,
    Exact,
}

/// Transmitted chirp `exp(j 2π (f0 t + 0.5 K t²))`.
pub fn chirp_phase(cfg: &RadarConfig, t: f64) -> Result<Complex64> {
    if !(0.0..=cfg.chirp_duration).contains(&t) {
        return Err(Error::domain(format!(
            "time {t:e} s outside chirp [0, {:e}]",
            cfg.chirp_duration
        )));
    }
    let cycles = cfg.start_frequency * t + 0.5 * cfg.slope() * t * t;
    Ok(phasor_cycles(cycles))
}

/// One IF sample of a scatterer with reflectivity `g` at one-way distance `d`.
pub fn if_sample(cfg: &RadarConfig, t: f64, d: f64, g: Complex64) -> Result<Complex64> {
    if_sample_with(cfg, t, d, g, PhaseModel::Approximate)
}

pub fn if_sample_with(cfg: &RadarConfig, t: f64, d: f64, g: Complex64, model: PhaseModel) -> Result<Complex64> {
    if !(d >= 0.0) {
        return Err(Error::domain(format!("distance must be non-negative, got {d}")));
    }
    if !(0.0..=cfg.chirp_duration).contains(&t) {
        return Err(Error::domain(format!(
            "time {t:e} s outside chirp [0, {:e}]",
            cfg.chirp_duration
        )));
    }
    Ok(g * phasor_cycles(if_cycles(cfg, t, d, model)))
}

#[inline]
fn if_cycles(cfg: &RadarConfig, t: f64, d: f64, model: PhaseModel) -> f64 {
    let tau = 2.0 * d / cfg.speed_of_light;
    let k = cfg.slope();
    let mut cycles = (cfg.start_frequency + k * t) * tau;
    if model == PhaseModel::Exact {
        cycles -= 0.5 * k * tau * tau;
    }
    cycles
}

/// Wavenumbers `k_i = 2π (f0 + K t_i) / c` of the fast-time samples.
pub fn wavenumber_samples(cfg: &RadarConfig) -> Vec<f64> {
    let k = cfg.slope();
    (0..cfg.n_samples)
        .map(|i| 2.0 * PI * (cfg.start_frequency + k * cfg.sample_time(i)) / cfg.speed_of_light)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointScatterer {
    pub position: Vec3,
    pub reflectivity: Complex64,
}

impl PointScatterer {
    pub fn new(position: Vec3, reflectivity: Complex64) -> Self {
        Self { position, reflectivity }
    }

    pub fn unit(position: Vec3) -> Self {
        Self::new(position, Complex64::new(1.0, 0.0))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Scene {
    pub scatterers: Vec<PointScatterer>,
}

impl Scene {
    pub fn new(scatterers: Vec<PointScatterer>) -> Self {
        Self { scatterers }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.scatterers.iter().enumerate() {
            let finite = s.position.iter().all(|v| v.is_finite())
                && s.reflectivity.re.is_finite()
                && s.reflectivity.im.is_finite();
            if !finite {
                return Err(Error::config(format!("scatterer {i} is not finite")));
            }
        }
        Ok(())
    }

    /// Scene holding the scatterers of both inputs.
    pub fn union(&self, other: &Scene) -> Scene {
        let mut scatterers = self.scatterers.clone();
        scatterers.extend_from_slice(&other.scatterers);
        Scene { scatterers }
    }

    /// `n` unit scatterers evenly spaced on a circle in the plane `z`.
    pub fn ring(center: Vec3, diameter: f64, n: usize) -> Scene {
        let r = 0.5 * diameter;
        let scatterers = (0..n)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / n as f64;
                PointScatterer::unit([center[0] + r * a.cos(), center[1] + r * a.sin(), center[2]])
            })
            .collect();
        Scene { scatterers }
    }
}

/// A single virtual element record: position, acquisition time and channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AperturePose {
    pub position: Vec3,
    pub timestamp: f64,
    pub channel: usize,
}

/// Position and acquisition time of one aperture grid node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPose {
    pub position: Vec3,
    pub timestamp: f64,
}

/// Uniform planar scan: `n_x × n_y` nodes swept in serpentine order, one
/// radar frame per node.
#[derive(Debug, Clone, PartialEq)]
pub struct ApertureGrid {
    pub n_x: usize,
    pub n_y: usize,
    pub pitch_x: f64,
    pub pitch_y: f64,
    /// Position of node `(0, 0)`.
    pub origin: Vec3,
    /// Per-channel virtual element offset from the node position.
    pub channel_offsets: Vec<Vec3>,
    /// Time between consecutive nodes along the scan.
    pub frame_period: f64,
    pub start_time: f64,
}

impl ApertureGrid {
    /// Single-channel grid centered on the origin in the `z = 0` plane.
    pub fn centered(n_x: usize, n_y: usize, pitch: f64) -> Self {
        Self {
            n_x,
            n_y,
            pitch_x: pitch,
            pitch_y: pitch,
            origin: [
                -0.5 * pitch * (n_x as f64 - 1.0),
                -0.5 * pitch * (n_y as f64 - 1.0),
                0.0,
            ],
            channel_offsets: vec![[0.0; 3]],
            frame_period: 1.0 / 80.0,
            start_time: 0.0,
        }
    }

    /// `n` channels spaced `spacing` apart along x, centered on the node.
    pub fn linear_channels(n: usize, spacing: f64) -> Vec<Vec3> {
        let mid = 0.5 * (n as f64 - 1.0);
        (0..n).map(|l| [(l as f64 - mid) * spacing, 0.0, 0.0]).collect()
    }

    pub fn with_channels(mut self, offsets: Vec<Vec3>) -> Self {
        self.channel_offsets = offsets;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_x == 0 || self.n_y == 0 {
            return Err(Error::config("aperture grid has no positions"));
        }
        if self.channel_offsets.is_empty() {
            return Err(Error::config("aperture grid has no channels"));
        }
        if !(self.pitch_x > 0.0 && self.pitch_y > 0.0) {
            return Err(Error::config("grid pitch must be positive"));
        }
        if !(self.frame_period > 0.0) || !self.start_time.is_finite() {
            return Err(Error::config("frame period must be positive"));
        }
        Ok(())
    }

    pub fn node_position(&self, ix: usize, iy: usize) -> Vec3 {
        [
            self.origin[0] + ix as f64 * self.pitch_x,
            self.origin[1] + iy as f64 * self.pitch_y,
            self.origin[2],
        ]
    }

    /// Position in the serpentine scan: rows along x, alternating direction.
    pub fn scan_index(&self, ix: usize, iy: usize) -> usize {
        let along = if iy.is_multiple_of(2) { ix } else { self.n_x - 1 - ix };
        iy * self.n_x + along
    }

    /// Grid cells in scan order.
    pub fn scan_order(&self) -> Vec<(usize, usize)> {
        (0..self.n_y)
            .flat_map(|iy| {
                let n_x = self.n_x;
                (0..n_x).map(move |a| (if iy % 2 == 0 { a } else { n_x - 1 - a }, iy))
            })
            .collect()
    }

    /// Grid poses in row-major `[x][y]` order.
    pub fn poses(&self) -> Vec<GridPose> {
        let mut poses = Vec::with_capacity(self.n_x * self.n_y);
        for ix in 0..self.n_x {
            for iy in 0..self.n_y {
                poses.push(GridPose {
                    position: self.node_position(ix, iy),
                    timestamp: self.start_time + self.scan_index(ix, iy) as f64 * self.frame_period,
                });
            }
        }
        poses
    }
}

/// Complex IF samples over an aperture grid, indexed `[x][y][channel][sample]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataCube {
    pub config: RadarConfig,
    /// Node poses in row-major `[x][y]` order.
    pub poses: Vec<GridPose>,
    /// Virtual element offset of each channel relative to the node.
    pub channel_offsets: Vec<Vec3>,
    pub samples: Array4<Complex64>,
}

impl RawDataCube {
    pub fn new(
        config: RadarConfig,
        poses: Vec<GridPose>,
        channel_offsets: Vec<Vec3>,
        samples: Array4<Complex64>,
    ) -> Result<Self> {
        let cube = Self {
            config,
            poses,
            channel_offsets,
            samples,
        };
        cube.validate()?;
        Ok(cube)
    }

    /// All-zero cube laid out on `grid`.
    pub fn zeros(config: RadarConfig, grid: &ApertureGrid) -> Self {
        Self {
            config,
            poses: grid.poses(),
            channel_offsets: grid.channel_offsets.clone(),
            samples: Array4::zeros((grid.n_x, grid.n_y, grid.channel_offsets.len(), config.n_samples)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let (n_x, n_y, n_ch, n_s) = self.samples.dim();
        if n_s != self.config.n_samples {
            return Err(Error::shape(format!(
                "cube has {n_s} samples per chirp, config says {}",
                self.config.n_samples
            )));
        }
        if self.poses.len() != n_x * n_y {
            return Err(Error::shape(format!(
                "{} poses for a {n_x}x{n_y} grid",
                self.poses.len()
            )));
        }
        if self.channel_offsets.len() != n_ch {
            return Err(Error::shape(format!(
                "{} channel offsets for {n_ch} channels",
                self.channel_offsets.len()
            )));
        }
        if self
            .poses
            .iter()
            .any(|p| !p.timestamp.is_finite() || p.position.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::format("non-finite pose"));
        }
        if self.samples.iter().any(|s| !s.re.is_finite() || !s.im.is_finite()) {
            return Err(Error::format("non-finite sample"));
        }
        Ok(())
    }

    pub fn n_x(&self) -> usize {
        self.samples.dim().0
    }

    pub fn n_y(&self) -> usize {
        self.samples.dim().1
    }

    pub fn n_channels(&self) -> usize {
        self.samples.dim().2
    }

    pub fn n_samples(&self) -> usize {
        self.samples.dim().3
    }

    pub fn pose(&self, ix: usize, iy: usize) -> &GridPose {
        &self.poses[ix * self.n_y() + iy]
    }

    /// Virtual element position of `channel` at node `(ix, iy)`.
    pub fn element_position(&self, ix: usize, iy: usize, channel: usize) -> Vec3 {
        add(self.pose(ix, iy).position, self.channel_offsets[channel])
    }

    /// Every virtual element as a pose record, ordered `[x][y][channel]`.
    pub fn virtual_poses(&self) -> Vec<AperturePose> {
        let mut out = Vec::with_capacity(self.poses.len() * self.n_channels());
        for ix in 0..self.n_x() {
            for iy in 0..self.n_y() {
                for ch in 0..self.n_channels() {
                    out.push(AperturePose {
                        position: self.element_position(ix, iy, ch),
                        timestamp: self.pose(ix, iy).timestamp,
                        channel: ch,
                    });
                }
            }
        }
        out
    }

    /// Largest sample magnitude.
    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.norm()))
    }
}

/// Per-channel residual gain and delay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelError {
    pub gain: Complex64,
    /// Residual delay τ_l (s).
    pub delay: f64,
}

impl ChannelError {
    pub fn identity() -> Self {
        Self {
            gain: Complex64::new(1.0, 0.0),
            delay: 0.0,
        }
    }

    /// Phase rate `f_l = K τ_l` (Hz).
    pub fn phase_rate(&self, cfg: &RadarConfig) -> f64 {
        cfg.slope() * self.delay
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gain.norm() > 0.0) || !self.gain.norm().is_finite() {
            return Err(Error::config("channel gain must be finite and non-zero"));
        }
        if !self.delay.is_finite() {
            return Err(Error::config("channel delay must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationOptions {
    /// Per-component standard deviation of circular complex Gaussian noise.
    pub noise_sigma: f64,
    pub seed: u64,
    pub phase_model: PhaseModel,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            noise_sigma: 0.0,
            seed: 0,
            phase_model: PhaseModel::Approximate,
        }
    }
}

/// Synthesizes the raw data cube of `scene` seen from every virtual element
/// of `grid`.
///
/// Each sample is the superposition of the scatterers' IF samples in scene
/// order. Noise, when requested, is drawn sequentially in `[x][y][ch][s]`
/// order from a ChaCha8 stream seeded with `opts.seed`, so the result does
/// not depend on the thread schedule.
pub fn simulate_cube(
    cfg: &RadarConfig,
    scene: &Scene,
    grid: &ApertureGrid,
    opts: &SimulationOptions,
) -> Result<RawDataCube> {
    cfg.validate()?;
    grid.validate()?;
    scene.validate()?;
    if !(opts.noise_sigma >= 0.0) {
        return Err(Error::config("noise sigma must be non-negative"));
    }
    let mut cube = RawDataCube::zeros(*cfg, grid);
    let times = cfg.sample_times();
    let n_y = grid.n_y;
    let poses = cube.poses.clone();
    let offsets = cube.channel_offsets.clone();
    let model = opts.phase_model;

    cube.samples
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(ix, mut plane)| {
            for iy in 0..n_y {
                let node = poses[ix * n_y + iy].position;
                for (ch, offset) in offsets.iter().enumerate() {
                    let element = add(node, *offset);
                    let mut row = plane.slice_mut(ndarray::s![iy, ch, ..]);
                    for s in &scene.scatterers {
                        let d = distance(element, s.position);
                        for (out, &t) in row.iter_mut().zip(&times) {
                            *out += s.reflectivity * phasor_cycles(if_cycles(cfg, t, d, model));
                        }
                    }
                }
            }
        });

    if opts.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let normal =
            Normal::new(0.0, opts.noise_sigma).map_err(|e| Error::config(format!("noise distribution: {e}")))?;
        for v in cube.samples.iter_mut() {
            let re = normal.sample(&mut rng);
            let im = normal.sample(&mut rng);
            *v += Complex64::new(re, im);
        }
    }
    Ok(cube)
}

/// Applies `α_l exp(j 2π K τ_l t)` to every sample of channel `l`.
pub fn inject_channel_error(cube: &RawDataCube, errors: &[ChannelError]) -> Result<RawDataCube> {
    if errors.len() != cube.n_channels() {
        return Err(Error::config(format!(
            "{} channel errors for {} channels",
            errors.len(),
            cube.n_channels()
        )));
    }
    for e in errors {
        e.validate()?;
    }
    let cfg = cube.config;
    let factors: Vec<Vec<Complex64>> = errors
        .iter()
        .map(|e| {
            let rate = e.phase_rate(&cfg);
            (0..cfg.n_samples)
                .map(|i| e.gain * phasor_cycles(rate * cfg.sample_time(i)))
                .collect()
        })
        .collect();
    let mut out = cube.clone();
    for mut plane in out.samples.outer_iter_mut() {
        for mut node in plane.outer_iter_mut() {
            for (ch, mut row) in node.outer_iter_mut().enumerate() {
                for (v, f) in row.iter_mut().zip(&factors[ch]) {
                    *v *= f;
                }
            }
        }
    }
    Ok(out)
}
