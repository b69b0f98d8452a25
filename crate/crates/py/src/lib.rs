//! Python bindings. Arrays cross the boundary as nested lists; complex
//! samples map to Python `complex`.

use std::path::PathBuf;

use mmsar::calibration::{self, CalibrationModel, EstimationMode};
use mmsar::imaging::{self, ImageGrid, ProfileAxis, RmaOptions};
use mmsar::metrics::{self, DepthMap};
use mmsar::signal_model::{self as sm, ApertureGrid, ChannelError, PointScatterer, Scene, SimulationOptions};
use mmsar::Error;
use ndarray::Array2;
use num_complex::Complex64;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn grid_2d<T: Clone>(rows: Vec<Vec<T>>, what: &str) -> PyResult<Array2<T>> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if h == 0 || w == 0 || rows.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err(format!(
            "{what} must be a non-empty rectangular list of lists"
        )));
    }
    Ok(Array2::from_shape_vec((h, w), rows.into_iter().flatten().collect()).expect("rectangular"))
}

fn rows<T: Clone>(a: &Array2<T>) -> Vec<Vec<T>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

/// FMCW chirp parameters.
#[pyclass(name = "RadarConfig", module = "mmsar", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyRadarConfig(sm::RadarConfig);

#[pymethods]
impl PyRadarConfig {
    #[new]
    #[pyo3(signature = (start_frequency=61.8e9, bandwidth=3.6e9, sample_rate=4.4e6, n_samples=256, chirp_duration=None))]
    fn new(
        start_frequency: f64,
        bandwidth: f64,
        sample_rate: f64,
        n_samples: usize,
        chirp_duration: Option<f64>,
    ) -> PyResult<Self> {
        let duration = chirp_duration.unwrap_or(n_samples as f64 / sample_rate);
        sm::RadarConfig::new(start_frequency, bandwidth, duration, sample_rate, n_samples)
            .map(Self)
            .map_err(py_err)
    }

    #[getter]
    fn start_frequency(&self) -> f64 {
        self.0.start_frequency
    }

    #[getter]
    fn bandwidth(&self) -> f64 {
        self.0.bandwidth
    }

    #[getter]
    fn sample_rate(&self) -> f64 {
        self.0.sample_rate
    }

    #[getter]
    fn n_samples(&self) -> usize {
        self.0.n_samples
    }

    #[getter]
    fn slope(&self) -> f64 {
        self.0.slope()
    }

    #[getter]
    fn wavelength(&self) -> f64 {
        self.0.wavelength()
    }

    #[getter]
    fn range_resolution(&self) -> f64 {
        self.0.range_resolution()
    }

    /// Beat frequency of a reflector at distance `d` (m).
    fn beat_frequency(&self, d: f64) -> f64 {
        self.0.beat_frequency(d)
    }

    fn wavenumbers(&self) -> Vec<f64> {
        sm::wavenumber_samples(&self.0)
    }

    fn __repr__(&self) -> String {
        format!(
            "RadarConfig(start_frequency={}, bandwidth={}, sample_rate={}, n_samples={})",
            self.0.start_frequency, self.0.bandwidth, self.0.sample_rate, self.0.n_samples
        )
    }
}

/// Raw IF samples indexed `[ix][iy][channel][sample]`.
#[pyclass(name = "Cube", module = "mmsar", frozen)]
struct PyCube(sm::RawDataCube);

#[pymethods]
impl PyCube {
    /// `(n_x, n_y, n_channels, n_samples)`
    #[getter]
    fn shape(&self) -> (usize, usize, usize, usize) {
        self.0.samples.dim()
    }

    #[getter]
    fn config(&self) -> PyRadarConfig {
        PyRadarConfig(self.0.config)
    }

    fn max_abs(&self) -> f64 {
        self.0.max_abs()
    }

    /// Samples of one aperture position and channel.
    fn signal(&self, ix: usize, iy: usize, channel: usize) -> PyResult<Vec<Complex64>> {
        let (n_x, n_y, n_ch, _) = self.0.samples.dim();
        if ix >= n_x || iy >= n_y || channel >= n_ch {
            return Err(PyValueError::new_err("index out of range"));
        }
        Ok(self.0.samples.slice(ndarray::s![ix, iy, channel, ..]).to_vec())
    }

    /// Element positions `(x, y, z)` for every position and channel.
    fn element_positions(&self) -> Vec<(f64, f64, f64)> {
        self.0
            .virtual_poses()
            .iter()
            .map(|p| (p.position[0], p.position[1], p.position[2]))
            .collect()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        mmsar::io::write_cube(&path, &self.0).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        mmsar::io::read_cube(&path).map(Self).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Cube(shape={:?})", self.0.samples.dim())
    }
}

/// A focused complex image indexed `[ix][iy]`.
#[pyclass(name = "Image", module = "mmsar", frozen)]
struct PyImage(imaging::ComplexImage);

#[pymethods]
impl PyImage {
    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.0.values.dim()
    }

    #[getter]
    fn origin(&self) -> (f64, f64) {
        (self.0.origin[0], self.0.origin[1])
    }

    #[getter]
    fn pitch(&self) -> (f64, f64) {
        (self.0.pitch[0], self.0.pitch[1])
    }

    #[getter]
    fn plane_z(&self) -> f64 {
        self.0.plane_z
    }

    fn values(&self) -> Vec<Vec<Complex64>> {
        rows(&self.0.values)
    }

    fn magnitudes(&self) -> Vec<Vec<f64>> {
        rows(&imaging::magnitude_image(&self.0))
    }

    fn peak_index(&self) -> (usize, usize) {
        self.0.peak_index()
    }

    /// `(x, y)` of the brightest pixel.
    fn peak_position(&self) -> (f64, f64) {
        let (ix, iy) = self.0.peak_index();
        (self.0.x(ix), self.0.y(iy))
    }

    fn entropy(&self) -> PyResult<f64> {
        metrics::image_entropy(&imaging::magnitude_image(&self.0)).map_err(py_err)
    }

    /// 3 dB width (m) and sinc-fit correlation of the profile through the peak.
    #[pyo3(signature = (axis="horizontal"))]
    fn beam_profile<'py>(&self, py: Python<'py>, axis: &str) -> PyResult<Bound<'py, PyDict>> {
        let axis: ProfileAxis = axis.parse().map_err(py_err)?;
        let profile = imaging::peak_profile(&self.0, axis).map_err(py_err)?;
        let fit = imaging::fit_sinc(&profile).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("width_3db", profile.width_3db)?;
        d.set_item("sinc_correlation", fit.correlation)?;
        d.set_item("offsets", profile.offsets)?;
        d.set_item("amplitudes", profile.amplitudes)?;
        Ok(d)
    }

    /// Extent (m) of the region within `threshold_db` of the peak.
    #[pyo3(signature = (threshold_db=3.0, axis="horizontal"))]
    fn extent(&self, threshold_db: f64, axis: &str) -> PyResult<f64> {
        let axis: ProfileAxis = axis.parse().map_err(py_err)?;
        let pitch = match axis {
            ProfileAxis::Horizontal => self.0.pitch[0],
            ProfileAxis::Vertical => self.0.pitch[1],
        };
        metrics::estimate_extent(&imaging::magnitude_image(&self.0), pitch, threshold_db, axis).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Image(shape={:?}, plane_z={})", self.0.values.dim(), self.0.plane_z)
    }
}

/// Simulates a cube for point scatterers `(x, y, z, reflectivity)` on a
/// centered `n_x` × `n_y` grid.
#[pyfunction]
#[pyo3(signature = (config, scatterers, n_x, n_y, pitch, n_channels=1, channel_spacing=0.0, noise_sigma=0.0, seed=0))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    config: &PyRadarConfig,
    scatterers: Vec<(f64, f64, f64, Complex64)>,
    n_x: usize,
    n_y: usize,
    pitch: f64,
    n_channels: usize,
    channel_spacing: f64,
    noise_sigma: f64,
    seed: u64,
) -> PyResult<PyCube> {
    let scene = Scene::new(
        scatterers
            .into_iter()
            .map(|(x, y, z, g)| PointScatterer::new([x, y, z], g))
            .collect(),
    );
    let grid = ApertureGrid::centered(n_x, n_y, pitch)
        .with_channels(ApertureGrid::linear_channels(n_channels, channel_spacing));
    let opts = SimulationOptions {
        noise_sigma,
        seed,
        ..Default::default()
    };
    let cfg = config.0;
    py.detach(|| sm::simulate_cube(&cfg, &scene, &grid, &opts))
        .map(PyCube)
        .map_err(py_err)
}

/// Applies per-channel `(gain, delay_s)` errors.
#[pyfunction]
fn inject_errors(cube: &PyCube, errors: Vec<(Complex64, f64)>) -> PyResult<PyCube> {
    let errors: Vec<ChannelError> = errors
        .into_iter()
        .map(|(gain, delay)| ChannelError { gain, delay })
        .collect();
    sm::inject_channel_error(&cube.0, &errors).map(PyCube).map_err(py_err)
}

/// Estimates `(phase_rates, gains)` from a cube observing a reflector at `point`.
#[pyfunction]
#[pyo3(signature = (cube, point, zero_pad=8, joint=false))]
fn calibrate(
    py: Python<'_>,
    cube: &PyCube,
    point: (f64, f64, f64),
    zero_pad: usize,
    joint: bool,
) -> PyResult<(Vec<f64>, Vec<Complex64>)> {
    let mode = if joint {
        EstimationMode::Joint
    } else {
        EstimationMode::PerChannel
    };
    let model = py
        .detach(|| calibration::estimate_from_cube(&cube.0, [point.0, point.1, point.2], zero_pad, mode))
        .map_err(py_err)?;
    Ok((model.phase_rates, model.gains))
}

/// Removes a calibration model `(phase_rates, gains)` from a cube.
#[pyfunction]
fn compensate(cube: &PyCube, phase_rates: Vec<f64>, gains: Vec<Complex64>) -> PyResult<PyCube> {
    let model = CalibrationModel { phase_rates, gains };
    calibration::compensate(&cube.0, &model).map(PyCube).map_err(py_err)
}

/// Range-migration image on the plane `z = z0`.
#[pyfunction]
#[pyo3(signature = (cube, z0, upsample=1, hann=false))]
fn rma(py: Python<'_>, cube: &PyCube, z0: f64, upsample: usize, hann: bool) -> PyResult<PyImage> {
    let opts = RmaOptions {
        upsample,
        hann,
        ..Default::default()
    };
    py.detach(|| imaging::rma_image(&cube.0, z0, &opts))
        .map(PyImage)
        .map_err(py_err)
}

/// Backprojection image on a pixel grid; defaults to the aperture node grid.
#[pyfunction]
#[pyo3(signature = (cube, z0, n_x=None, n_y=None, pitch=None, center=(0.0, 0.0)))]
fn backprojection(
    py: Python<'_>,
    cube: &PyCube,
    z0: f64,
    n_x: Option<usize>,
    n_y: Option<usize>,
    pitch: Option<f64>,
    center: (f64, f64),
) -> PyResult<PyImage> {
    let grid = match (n_x, n_y, pitch) {
        (None, None, None) => ImageGrid::of_aperture(&cube.0).map_err(py_err)?,
        (Some(nx), Some(ny), Some(p)) => ImageGrid::centered([center.0, center.1], nx, ny, [p, p]),
        _ => return Err(PyValueError::new_err("give all of n_x, n_y and pitch, or none")),
    };
    py.detach(|| imaging::backprojection_image(&cube.0, &grid, z0))
        .map(PyImage)
        .map_err(py_err)
}

/// Least-squares reflector position from element positions and ranges.
#[pyfunction]
fn locate_reflector(positions: Vec<(f64, f64, f64)>, distances: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let positions: Vec<[f64; 3]> = positions.into_iter().map(|(x, y, z)| [x, y, z]).collect();
    let est = calibration::estimate_reference_point(&positions, &distances).map_err(py_err)?;
    Ok((est.point[0], est.point[1], est.point[2]))
}

/// Shannon entropy (nats) of a magnitude image.
#[pyfunction]
fn image_entropy(magnitudes: Vec<Vec<f64>>) -> PyResult<f64> {
    metrics::image_entropy(&grid_2d(magnitudes, "magnitudes")?).map_err(py_err)
}

/// Depth-completion metrics of `pred` against `truth` (lists of rows).
#[pyfunction]
#[pyo3(signature = (pred, truth, pred_mask=None, truth_mask=None))]
fn depth_metrics<'py>(
    py: Python<'py>,
    pred: Vec<Vec<f64>>,
    truth: Vec<Vec<f64>>,
    pred_mask: Option<Vec<Vec<bool>>>,
    truth_mask: Option<Vec<Vec<bool>>>,
) -> PyResult<Bound<'py, PyDict>> {
    let map = |v: Vec<Vec<f64>>, m: Option<Vec<Vec<bool>>>, what: &str| -> PyResult<DepthMap> {
        let values = grid_2d(v, what)?;
        match m {
            Some(m) => DepthMap::new(values, grid_2d(m, what)?).map_err(py_err),
            None => Ok(DepthMap::from_values(values)),
        }
    };
    let pred = map(pred, pred_mask, "pred")?;
    let truth = map(truth, truth_mask, "truth")?;
    let d = PyDict::new(py);
    d.set_item("rmse", metrics::depth_rmse(&pred, &truth).map_err(py_err)?)?;
    d.set_item("mae", metrics::depth_mae(&pred, &truth).map_err(py_err)?)?;
    for delta in [1.05, 1.10, 1.25] {
        d.set_item(
            format!("delta_{delta:.2}"),
            metrics::threshold_delta(&pred, &truth, delta).map_err(py_err)?,
        )?;
    }
    d.set_item("loss_depth", metrics::loss_depth(&pred, &truth).map_err(py_err)?)?;
    match metrics::loss_surface_normal(&pred, &truth) {
        Ok(v) => d.set_item("loss_surface_normal", v)?,
        Err(Error::Domain(_)) => d.set_item("loss_surface_normal", f64::NAN)?,
        Err(e) => return Err(py_err(e)),
    }
    Ok(d)
}

/// Divergence of `N(mu, diag(sigma²))` from the standard normal.
#[pyfunction]
fn kl_standard_normal(mu: Vec<f64>, sigma: Vec<f64>) -> PyResult<f64> {
    metrics::kl_standard_normal(&mu, &sigma).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (l_d, l_kl, l_sn, alpha=metrics::DEFAULT_ALPHA, beta=metrics::DEFAULT_BETA))]
fn combined_loss(l_d: f64, l_kl: f64, l_sn: f64, alpha: f64, beta: f64) -> f64 {
    metrics::combined_loss(l_d, l_kl, l_sn, alpha, beta)
}

#[pymodule]
#[pyo3(name = "mmsar")]
fn mmsar_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRadarConfig>()?;
    m.add_class::<PyCube>()?;
    m.add_class::<PyImage>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(inject_errors, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(compensate, m)?)?;
    m.add_function(wrap_pyfunction!(rma, m)?)?;
    m.add_function(wrap_pyfunction!(backprojection, m)?)?;
    m.add_function(wrap_pyfunction!(locate_reflector, m)?)?;
    m.add_function(wrap_pyfunction!(image_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(depth_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(kl_standard_normal, m)?)?;
    m.add_function(wrap_pyfunction!(combined_loss, m)?)?;
    Ok(())
}
