//! File formats: text scene/pose/stream/model files, the `FGCB` cube and
//! `FGFR` frame-stream binaries, image exports, depth maps and key=value
//! configuration.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, Array4};
use num_complex::Complex64;

use crate::calibration::CalibrationModel;
use crate::error::{Error, Result};
use crate::imaging::ComplexImage;
use crate::metrics::DepthMap;
use crate::signal_model::{
    ApertureGrid, AperturePose, ChannelError, GridPose, PointScatterer, RadarConfig, RawDataCube, Scene, SPEED_OF_LIGHT,
};
use crate::stream_sync::{TimestampedFrame, TimestampedPose};

const CUBE_MAGIC: &[u8; 4] = b"FGCB";
const CUBE_VERSION: u16 = 1;
const FRAME_MAGIC: &[u8; 4] = b"FGFR";

/// Non-empty, non-comment lines with their 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn parse_fields<const N: usize>(line: &str, lineno: usize) -> Result<[f64; N]> {
    let parts: Vec<&str> = line.split(',').map(str::trim).collect();
    if parts.len() != N {
        return Err(Error::format(format!(
            "line {lineno}: expected {N} comma-separated fields, found {}",
            parts.len()
        )));
    }
    let mut out = [0.0; N];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = p
            .parse()
            .map_err(|_| Error::format(format!("line {lineno}: '{p}' is not a number")))?;
    }
    Ok(out)
}

fn as_index(v: f64, lineno: usize) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v < u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(Error::format(format!(
            "line {lineno}: '{v}' is not a non-negative integer"
        )))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

// ---- scene and poses -------------------------------------------------------

pub fn parse_scene(text: &str) -> Result<Scene> {
    let scatterers = data_lines(text)
        .map(|(n, l)| {
            let [x, y, z, re, im] = parse_fields::<5>(l, n)?;
            Ok(PointScatterer::new([x, y, z], Complex64::new(re, im)))
        })
        .collect::<Result<Vec<_>>>()?;
    let scene = Scene::new(scatterers);
    scene.validate()?;
    Ok(scene)
}

pub fn format_scene(scene: &Scene) -> String {
    let mut s = String::from("# x,y,z,re,im\n");
    for p in &scene.scatterers {
        let [x, y, z] = p.position;
        s.push_str(&format!("{x},{y},{z},{},{}\n", p.reflectivity.re, p.reflectivity.im));
    }
    s
}

pub fn read_scene(path: &Path) -> Result<Scene> {
    parse_scene(&std::fs::read_to_string(path)?)
}

pub fn write_scene(path: &Path, scene: &Scene) -> Result<()> {
    write_text(path, &format_scene(scene))
}

pub fn parse_poses(text: &str) -> Result<Vec<AperturePose>> {
    data_lines(text)
        .map(|(n, l)| {
            let [x, y, z, t, ch] = parse_fields::<5>(l, n)?;
            Ok(AperturePose {
                position: [x, y, z],
                timestamp: t,
                channel: as_index(ch, n)?,
            })
        })
        .collect()
}

pub fn format_poses(poses: &[AperturePose]) -> String {
    let mut s = String::from("# x,y,z,t,channel\n");
    for p in poses {
        let [x, y, z] = p.position;
        s.push_str(&format!("{x},{y},{z},{},{}\n", p.timestamp, p.channel));
    }
    s
}

pub fn write_poses(path: &Path, poses: &[AperturePose]) -> Result<()> {
    write_text(path, &format_poses(poses))
}

pub fn read_poses(path: &Path) -> Result<Vec<AperturePose>> {
    parse_poses(&std::fs::read_to_string(path)?)
}

// ---- binary helpers --------------------------------------------------------

struct Reader<R> {
    inner: R,
    what: &'static str,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::format(format!("{} is truncated", self.what)),
            _ => Error::Io(e),
        })?;
        Ok(b)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes()?))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn iq(&mut self) -> Result<Complex64> {
        let b: [u8; 8] = self.bytes()?;
        let re = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        let im = f32::from_le_bytes([b[4], b[5], b[6], b[7]]);
        Ok(Complex64::new(re as f64, im as f64))
    }

    fn expect_end(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        match self.inner.read(&mut b)? {
            0 => Ok(()),
            _ => Err(Error::format(format!("{} has trailing bytes", self.what))),
        }
    }
}

fn put_iq(w: &mut impl Write, v: Complex64) -> Result<()> {
    w.write_all(&(v.re as f32).to_le_bytes())?;
    w.write_all(&(v.im as f32).to_le_bytes())?;
    Ok(())
}

fn dim_u32(n: usize, name: &str) -> Result<[u8; 4]> {
    u32::try_from(n)
        .map(u32::to_le_bytes)
        .map_err(|_| Error::shape(format!("{name} = {n} does not fit in u32")))
}

// ---- FGCB cube -------------------------------------------------------------

/// Writes a cube; samples are stored as f32 I/Q. Channel offsets are not
/// part of the format.
pub fn write_cube_to(w: &mut impl Write, cube: &RawDataCube) -> Result<()> {
    cube.validate()?;
    let (n_x, n_y, n_ch, n_s) = cube.samples.dim();
    w.write_all(CUBE_MAGIC)?;
    w.write_all(&CUBE_VERSION.to_le_bytes())?;
    for (n, name) in [(n_x, "n_x"), (n_y, "n_y"), (n_ch, "n_channels"), (n_s, "n_samples")] {
        w.write_all(&dim_u32(n, name)?)?;
    }
    let c = &cube.config;
    for v in [
        c.start_frequency,
        c.bandwidth,
        c.chirp_duration,
        c.sample_rate,
        c.n_samples as f64,
        c.speed_of_light,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for p in &cube.poses {
        for v in [p.position[0], p.position[1], p.position[2], p.timestamp] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    for v in cube.samples.iter() {
        put_iq(w, *v)?;
    }
    Ok(())
}

/// Reads a cube; channel offsets are set to zero.
pub fn read_cube_from(r: impl Read) -> Result<RawDataCube> {
    let mut r = Reader {
        inner: r,
        what: "cube file",
    };
    if &r.bytes::<4>()? != CUBE_MAGIC {
        return Err(Error::format("cube file has bad magic"));
    }
    let version = r.u16()?;
    if version != CUBE_VERSION {
        return Err(Error::format(format!("unsupported cube version {version}")));
    }
    let (n_x, n_y, n_ch, n_s) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
    let mut c = [0.0; 6];
    for v in &mut c {
        *v = r.f64()?;
    }
    if c[4] != n_s as f64 {
        return Err(Error::format("sample count in header and config disagree"));
    }
    let config = RadarConfig {
        start_frequency: c[0],
        bandwidth: c[1],
        chirp_duration: c[2],
        sample_rate: c[3],
        n_samples: n_s,
        speed_of_light: c[5],
    };
    config.validate().map_err(|e| Error::format(e.to_string()))?;
    let mut poses = Vec::with_capacity(n_x.saturating_mul(n_y).min(1 << 24));
    for _ in 0..n_x * n_y {
        let (x, y, z, t) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
        poses.push(GridPose {
            position: [x, y, z],
            timestamp: t,
        });
    }
    let total = n_x * n_y * n_ch * n_s;
    let mut data = Vec::with_capacity(total.min(1 << 28));
    for _ in 0..total {
        data.push(r.iq()?);
    }
    r.expect_end()?;
    let samples = Array4::from_shape_vec((n_x, n_y, n_ch, n_s), data).map_err(|e| Error::format(e.to_string()))?;
    RawDataCube::new(config, poses, vec![[0.0; 3]; n_ch], samples).map_err(|e| Error::format(e.to_string()))
}

pub fn write_cube(path: &Path, cube: &RawDataCube) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_cube_to(&mut w, cube)?;
    w.flush()?;
    Ok(())
}

pub fn read_cube(path: &Path) -> Result<RawDataCube> {
    read_cube_from(BufReader::new(File::open(path)?))
}

// ---- streams ---------------------------------------------------------------

pub fn parse_pose_stream(text: &str) -> Result<Vec<TimestampedPose>> {
    data_lines(text)
        .map(|(n, l)| {
            let [t, x, y, z] = parse_fields::<4>(l, n)?;
            Ok(TimestampedPose {
                position: [x, y, z],
                timestamp: t,
            })
        })
        .collect()
}

pub fn format_pose_stream(poses: &[TimestampedPose]) -> String {
    let mut s = String::from("# t,x,y,z\n");
    for p in poses {
        let [x, y, z] = p.position;
        s.push_str(&format!("{},{x},{y},{z}\n", p.timestamp));
    }
    s
}

pub fn read_pose_stream(path: &Path) -> Result<Vec<TimestampedPose>> {
    parse_pose_stream(&std::fs::read_to_string(path)?)
}

pub fn write_pose_stream(path: &Path, poses: &[TimestampedPose]) -> Result<()> {
    write_text(path, &format_pose_stream(poses))
}

pub fn write_frames_to(w: &mut impl Write, frames: &[TimestampedFrame]) -> Result<()> {
    let (n_ch, n_s) = frames.first().map(|f| f.samples.dim()).unwrap_or((0, 0));
    if frames.iter().any(|f| f.samples.dim() != (n_ch, n_s)) {
        return Err(Error::shape("frames differ in shape"));
    }
    w.write_all(FRAME_MAGIC)?;
    w.write_all(&dim_u32(frames.len(), "n_frames")?)?;
    w.write_all(&dim_u32(n_ch, "n_channels")?)?;
    w.write_all(&dim_u32(n_s, "n_samples")?)?;
    for f in frames {
        w.write_all(&f.timestamp.to_le_bytes())?;
        for v in f.samples.iter() {
            put_iq(w, *v)?;
        }
    }
    Ok(())
}

pub fn read_frames_from(r: impl Read) -> Result<Vec<TimestampedFrame>> {
    let mut r = Reader {
        inner: r,
        what: "frame file",
    };
    if &r.bytes::<4>()? != FRAME_MAGIC {
        return Err(Error::format("frame file has bad magic"));
    }
    let (n_f, n_ch, n_s) = (r.u32()?, r.u32()?, r.u32()?);
    let mut frames = Vec::with_capacity(n_f.min(1 << 20));
    for _ in 0..n_f {
        let timestamp = r.f64()?;
        let mut data = Vec::with_capacity(n_ch * n_s);
        for _ in 0..n_ch * n_s {
            data.push(r.iq()?);
        }
        frames.push(TimestampedFrame {
            timestamp,
            samples: Array2::from_shape_vec((n_ch, n_s), data).map_err(|e| Error::format(e.to_string()))?,
        });
    }
    r.expect_end()?;
    Ok(frames)
}

pub fn write_frames(path: &Path, frames: &[TimestampedFrame]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_frames_to(&mut w, frames)?;
    w.flush()?;
    Ok(())
}

pub fn read_frames(path: &Path) -> Result<Vec<TimestampedFrame>> {
    read_frames_from(BufReader::new(File::open(path)?))
}

// ---- calibration and channel errors -----------------------------------------

pub fn format_calibration(model: &CalibrationModel) -> String {
    let mut s = String::from("# channel,f_hat_hz,alpha_re,alpha_im\n");
    for (l, (f, a)) in model.phase_rates.iter().zip(&model.gains).enumerate() {
        s.push_str(&format!("{l},{f},{},{}\n", a.re, a.im));
    }
    s
}

/// Rows may come in any order but must cover channels `0..n` once each.
pub fn parse_calibration(text: &str) -> Result<CalibrationModel> {
    let rows = data_lines(text)
        .map(|(n, l)| {
            let [ch, f, re, im] = parse_fields::<4>(l, n)?;
            Ok((as_index(ch, n)?, f, Complex64::new(re, im)))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len();
    let mut model = CalibrationModel::identity(n);
    let mut seen = vec![false; n];
    for (ch, f, a) in rows {
        if ch >= n || seen[ch] {
            return Err(Error::format(format!("channel {ch} missing or repeated")));
        }
        seen[ch] = true;
        model.phase_rates[ch] = f;
        model.gains[ch] = a;
    }
    model.validate().map_err(|e| Error::format(e.to_string()))?;
    Ok(model)
}

pub fn read_calibration(path: &Path) -> Result<CalibrationModel> {
    parse_calibration(&std::fs::read_to_string(path)?)
}

pub fn write_calibration(path: &Path, model: &CalibrationModel) -> Result<()> {
    write_text(path, &format_calibration(model))
}

pub fn format_channel_errors(errors: &[ChannelError]) -> String {
    let mut s = String::from("# channel,gain_re,gain_im,delay_s\n");
    for (l, e) in errors.iter().enumerate() {
        s.push_str(&format!("{l},{},{},{}\n", e.gain.re, e.gain.im, e.delay));
    }
    s
}

/// Channel error rows `channel,gain_re,gain_im,delay_s` in channel order.
pub fn parse_channel_errors(text: &str) -> Result<Vec<ChannelError>> {
    data_lines(text)
        .enumerate()
        .map(|(i, (n, l))| {
            let [ch, re, im, delay] = parse_fields::<4>(l, n)?;
            if as_index(ch, n)? != i {
                return Err(Error::format(format!("line {n}: expected channel {i}")));
            }
            let e = ChannelError {
                gain: Complex64::new(re, im),
                delay,
            };
            e.validate().map_err(|e| Error::format(e.to_string()))?;
            Ok(e)
        })
        .collect()
}

pub fn read_channel_errors(path: &Path) -> Result<Vec<ChannelError>> {
    parse_channel_errors(&std::fs::read_to_string(path)?)
}

pub fn write_channel_errors(path: &Path, errors: &[ChannelError]) -> Result<()> {
    write_text(path, &format_channel_errors(errors))
}

// ---- images ----------------------------------------------------------------

/// 16-bit binary PGM of the min-max normalized magnitude. Image rows are
/// y values, increasing downward; columns are x.
pub fn format_pgm(img: &ComplexImage) -> Vec<u8> {
    let (n_x, n_y) = img.values.dim();
    let mag = img.values.mapv(|v| v.norm());
    let lo = mag.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mag.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut out = format!("P5\n{n_x} {n_y}\n65535\n").into_bytes();
    out.reserve(2 * n_x * n_y);
    for iy in 0..n_y {
        for ix in 0..n_x {
            let v = if span > 0.0 {
                ((mag[[ix, iy]] - lo) / span * 65535.0).round() as u16
            } else {
                0
            };
            out.extend_from_slice(&v.to_be_bytes());
        }
    }
    out
}

/// `re,im` per pixel, one line each, in `[x][y]` order after a dimension
/// header.
pub fn format_image_csv(img: &ComplexImage) -> String {
    let (n_x, n_y) = img.values.dim();
    let mut s = format!("# n_x={n_x} n_y={n_y} order=x-major\n");
    for v in img.values.iter() {
        s.push_str(&format!("{:e},{:e}\n", v.re, v.im));
    }
    s
}

pub fn format_image_meta(img: &ComplexImage) -> String {
    format!(
        "n_x={}\nn_y={}\norigin_x={}\norigin_y={}\npitch_x={}\npitch_y={}\nplane_z={}\n",
        img.n_x(),
        img.n_y(),
        img.origin[0],
        img.origin[1],
        img.pitch[0],
        img.pitch[1],
        img.plane_z
    )
}

/// Writes `<stem>.pgm`, `<stem>.csv` and `<stem>.meta`.
pub fn write_image(stem: &Path, img: &ComplexImage) -> Result<()> {
    std::fs::write(stem.with_extension("pgm"), format_pgm(img))?;
    write_text(&stem.with_extension("csv"), &format_image_csv(img))?;
    write_text(&stem.with_extension("meta"), &format_image_meta(img))
}

/// Reads an image back from its CSV and metadata sidecar.
pub fn read_image(stem: &Path) -> Result<ComplexImage> {
    let meta = parse_key_values(&std::fs::read_to_string(stem.with_extension("meta"))?)?;
    let n_x = meta.usize("n_x")?;
    let n_y = meta.usize("n_y")?;
    let text = std::fs::read_to_string(stem.with_extension("csv"))?;
    let data = data_lines(&text)
        .map(|(n, l)| {
            let [re, im] = parse_fields::<2>(l, n)?;
            Ok(Complex64::new(re, im))
        })
        .collect::<Result<Vec<_>>>()?;
    let values = Array2::from_shape_vec((n_x, n_y), data)
        .map_err(|_| Error::format("image CSV does not match the sidecar dimensions"))?;
    ComplexImage::new(
        values,
        [meta.f64("origin_x")?, meta.f64("origin_y")?],
        [meta.f64("pitch_x")?, meta.f64("pitch_y")?],
        meta.f64("plane_z")?,
    )
}

// ---- depth maps ------------------------------------------------------------

fn parse_grid(text: &str, what: &str) -> Result<Array2<f64>> {
    let mut lines = data_lines(text);
    let (n, header) = lines.next().ok_or_else(|| Error::format(format!("{what} is empty")))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| Error::format(format!("line {n}: bad header '{header}'")))
        })
        .collect::<Result<_>>()?;
    let [h, w] = dims[..] else {
        return Err(Error::format(format!("line {n}: header must be 'H W'")));
    };
    let mut data = Vec::with_capacity(h * w);
    let mut rows = 0;
    for (n, l) in lines {
        let row: Vec<f64> = l
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::format(format!("line {n}: '{t}' is not a number")))
            })
            .collect::<Result<_>>()?;
        if row.len() != w {
            return Err(Error::format(format!(
                "line {n}: expected {w} values, found {}",
                row.len()
            )));
        }
        data.extend(row);
        rows += 1;
    }
    if rows != h {
        return Err(Error::format(format!("{what}: expected {h} rows, found {rows}")));
    }
    Ok(Array2::from_shape_vec((h, w), data).expect("row lengths checked"))
}

/// Depth map from its text form, optionally with a 0/1 mask; without a mask
/// every finite value is valid.
pub fn parse_depth_map(text: &str, mask: Option<&str>) -> Result<DepthMap> {
    let values = parse_grid(text, "depth map")?;
    match mask {
        None => Ok(DepthMap::from_values(values)),
        Some(m) => {
            let m = parse_grid(m, "mask")?;
            if m.iter().any(|v| *v != 0.0 && *v != 1.0) {
                return Err(Error::format("mask values must be 0 or 1"));
            }
            DepthMap::new(values, m.mapv(|v| v == 1.0))
        }
    }
}

pub fn format_depth_map(map: &DepthMap) -> String {
    let (h, w) = map.dim();
    let mut s = format!("{h} {w}\n");
    for row in map.values.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&cells.join(" "));
        s.push('\n');
    }
    s
}

pub fn read_depth_map(path: &Path, mask: Option<&Path>) -> Result<DepthMap> {
    let text = std::fs::read_to_string(path)?;
    let mask = mask.map(std::fs::read_to_string).transpose()?;
    parse_depth_map(&text, mask.as_deref())
}

// ---- key=value configuration ----------------------------------------------

/// Parsed `key = value` lines; `#` starts a comment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues(pub BTreeMap<String, String>);

pub fn parse_key_values(text: &str) -> Result<KeyValues> {
    let mut map = BTreeMap::new();
    for (n, l) in data_lines(text) {
        let (k, v) = l
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {n}: expected key=value")))?;
        if map.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(Error::config(format!("line {n}: duplicate key '{}'", k.trim())));
        }
    }
    Ok(KeyValues(map))
}

impl KeyValues {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::config(format!("{key}: cannot parse '{v}'")))
            })
            .transpose()
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        self.parsed(key)?
            .ok_or_else(|| Error::config(format!("missing key '{key}'")))
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.parsed(key)?
            .ok_or_else(|| Error::config(format!("missing key '{key}'")))
    }
}

/// Radar parameters; missing keys take the defaults of
/// [`RadarConfig::with_samples`].
pub fn radar_config(kv: &KeyValues) -> Result<RadarConfig> {
    let n = kv.usize_or("n_samples", 256)?;
    let d = RadarConfig::with_samples(n);
    let fs = kv.f64_or("sample_rate", d.sample_rate)?;
    let cfg = RadarConfig {
        start_frequency: kv.f64_or("start_frequency", d.start_frequency)?,
        bandwidth: kv.f64_or("bandwidth", d.bandwidth)?,
        chirp_duration: kv.f64_or("chirp_duration", n as f64 / fs)?,
        sample_rate: fs,
        n_samples: n,
        speed_of_light: kv.f64_or("speed_of_light", SPEED_OF_LIGHT)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Aperture grid centered at `(center_x, center_y, origin_z)` with
/// `n_channels` elements spaced `channel_spacing` along x.
pub fn aperture_grid(kv: &KeyValues) -> Result<ApertureGrid> {
    let pitch = kv.f64_or("pitch", 2.4e-3)?;
    let mut grid = ApertureGrid::centered(kv.usize_or("n_x", 41)?, kv.usize_or("n_y", 21)?, pitch);
    grid.pitch_x = kv.f64_or("pitch_x", pitch)?;
    grid.pitch_y = kv.f64_or("pitch_y", pitch)?;
    let cx = kv.f64_or("center_x", 0.0)?;
    let cy = kv.f64_or("center_y", 0.0)?;
    grid.origin = [
        cx - 0.5 * grid.pitch_x * (grid.n_x as f64 - 1.0),
        cy - 0.5 * grid.pitch_y * (grid.n_y as f64 - 1.0),
        kv.f64_or("origin_z", 0.0)?,
    ];
    grid.frame_period = kv.f64_or("frame_period", grid.frame_period)?;
    grid.start_time = kv.f64_or("start_time", grid.start_time)?;
    let n_ch = kv.usize_or("n_channels", 1)?;
    grid.channel_offsets = ApertureGrid::linear_channels(n_ch, kv.f64_or("channel_spacing", 0.0)?);
    grid.validate()?;
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_model::{simulate_cube, SimulationOptions};

    fn small_cube() -> RawDataCube {
        let grid = ApertureGrid::centered(3, 2, 2.4e-3).with_channels(ApertureGrid::linear_channels(2, 1e-3));
        let scene = Scene::new(vec![PointScatterer::unit([0.0, 0.0, 0.3])]);
        simulate_cube(
            &RadarConfig::with_samples(8),
            &scene,
            &grid,
            &SimulationOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn scene_round_trip() {
        let text = "# ring\n0.1,0.2,0.3,1,0\n\n-0.1,0,0.25,0.5,-0.5 # tail\n";
        let scene = parse_scene(text).unwrap();
        assert_eq!(scene.scatterers.len(), 2);
        assert_eq!(parse_scene(&format_scene(&scene)).unwrap(), scene);
        assert!(matches!(parse_scene("1,2,3\n"), Err(Error::Format(_))));
        assert!(matches!(parse_scene("1,2,x,1,0\n"), Err(Error::Format(_))));
    }

    #[test]
    fn cube_round_trip_is_f32_exact() {
        let cube = small_cube();
        let mut buf = Vec::new();
        write_cube_to(&mut buf, &cube).unwrap();
        assert_eq!(&buf[..4], b"FGCB");
        let back = read_cube_from(buf.as_slice()).unwrap();
        assert_eq!(back.config, cube.config);
        assert_eq!(back.poses, cube.poses);
        for (a, b) in back.samples.iter().zip(cube.samples.iter()) {
            assert_eq!(a.re, b.re as f32 as f64);
            assert_eq!(a.im, b.im as f32 as f64);
        }
        let mut again = Vec::new();
        write_cube_to(&mut again, &back).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn cube_rejects_malformed_input() {
        let mut buf = Vec::new();
        write_cube_to(&mut buf, &small_cube()).unwrap();
        assert!(matches!(read_cube_from(&buf[..buf.len() - 3]), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_cube_from(bad.as_slice()), Err(Error::Format(_))));
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(read_cube_from(long.as_slice()), Err(Error::Format(_))));
        assert!(matches!(read_cube_from(&buf[..10]), Err(Error::Format(_))));
    }

    #[test]
    fn frames_round_trip() {
        let frames: Vec<TimestampedFrame> = (0..3)
            .map(|i| TimestampedFrame {
                timestamp: 0.0125 * i as f64,
                samples: Array2::from_elem((2, 4), Complex64::new(i as f64, 0.5)),
            })
            .collect();
        let mut buf = Vec::new();
        write_frames_to(&mut buf, &frames).unwrap();
        assert_eq!(read_frames_from(buf.as_slice()).unwrap(), frames);
        assert!(matches!(read_frames_from(&buf[..buf.len() - 1]), Err(Error::Format(_))));
    }

    #[test]
    fn pose_stream_round_trip() {
        let poses = vec![
            TimestampedPose {
                position: [0.1, -0.2, 0.0],
                timestamp: 0.001,
            },
            TimestampedPose {
                position: [0.1024, -0.2, 0.0],
                timestamp: 0.002,
            },
        ];
        assert_eq!(parse_pose_stream(&format_pose_stream(&poses)).unwrap(), poses);
    }

    #[test]
    fn calibration_round_trip_and_order() {
        let model = CalibrationModel {
            phase_rates: vec![0.0, 17187.5, -34375.0],
            gains: vec![
                Complex64::new(1.0, 0.0),
                Complex64::new(0.5, 0.25),
                Complex64::new(-2.0, 0.0),
            ],
        };
        assert_eq!(parse_calibration(&format_calibration(&model)).unwrap(), model);
        let shuffled = "2,-34375,-2,0\n0,0,1,0\n1,17187.5,0.5,0.25\n";
        assert_eq!(parse_calibration(shuffled).unwrap(), model);
        assert!(parse_calibration("0,0,1,0\n0,0,1,0\n").is_err());
    }

    #[test]
    fn channel_errors_round_trip() {
        let errs = vec![
            ChannelError::identity(),
            ChannelError {
                gain: Complex64::new(0.7, -0.2),
                delay: 3.5e-10,
            },
        ];
        assert_eq!(parse_channel_errors(&format_channel_errors(&errs)).unwrap(), errs);
    }

    #[test]
    fn pgm_layout() {
        let mut v = Array2::zeros((3, 2));
        v[[2, 0]] = Complex64::new(2.0, 0.0);
        v[[0, 1]] = Complex64::new(0.0, 1.0);
        let img = ComplexImage::new(v, [0.0, 0.0], [1.0, 1.0], 0.3).unwrap();
        let pgm = format_pgm(&img);
        let header = b"P5\n3 2\n65535\n";
        assert_eq!(&pgm[..header.len()], header);
        let px: Vec<u16> = pgm[header.len()..]
            .chunks(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        assert_eq!(px, vec![0, 0, 65535, 32768, 0, 0]);
    }

    #[test]
    fn image_round_trip() {
        let v = Array2::from_shape_fn((4, 3), |(i, j)| Complex64::new(i as f64 * 0.1, -(j as f64) / 3.0));
        let img = ComplexImage::new(v, [-0.01, 0.02], [2.4e-3, 1.2e-3], 0.3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("img");
        write_image(&stem, &img).unwrap();
        assert_eq!(read_image(&stem).unwrap(), img);
    }

    #[test]
    fn depth_map_parsing() {
        let m = parse_depth_map("2 3\n0.3 0.4 0.5\n0.6 0.7 nan\n", None).unwrap();
        assert_eq!(m.dim(), (2, 3));
        assert!(!m.valid_mask[[1, 2]]);
        let masked = parse_depth_map("1 2\n0.4 0.5\n", Some("1 2\n1 0\n")).unwrap();
        assert_eq!(masked.valid_mask.iter().copied().collect::<Vec<_>>(), vec![true, false]);
        assert!(parse_depth_map("2 2\n0.4 0.5\n", None).is_err());
        assert!(matches!(
            parse_depth_map("1 2\n0.4 0.5\n", Some("2 1\n1\n1\n")),
            Err(Error::Shape(_))
        ));
        assert_eq!(
            parse_depth_map(&format_depth_map(&m), None).unwrap().values[[0, 1]],
            0.4
        );
    }

    #[test]
    fn config_parsing() {
        let kv =
            parse_key_values("n_samples = 64\nn_x=5 # comment\nn_y=4\nn_channels=2\nchannel_spacing=0.001\n").unwrap();
        let cfg = radar_config(&kv).unwrap();
        assert_eq!(cfg.n_samples, 64);
        assert!((cfg.chirp_duration - 64.0 / 4.4e6).abs() < 1e-18);
        let grid = aperture_grid(&kv).unwrap();
        assert_eq!((grid.n_x, grid.n_y, grid.channel_offsets.len()), (5, 4, 2));
        assert!(parse_key_values("a=1\na=2\n").is_err());
        assert!(radar_config(&parse_key_values("bandwidth=abc").unwrap()).is_err());
    }
}
