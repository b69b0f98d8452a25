//! Alignment of the robot pose stream with the radar frame stream.
//!
//! The arm reports poses at a high rate (1 kHz by default) while the radar
//! emits frames at a low rate (80 FPS). The arm's first and last timestamps
//! bound the usable radar data; every pose that lands on an aperture grid
//! node is paired with the radar frame nearest in time, and the paired frames
//! are stacked into a [`RawDataCube`].

use ndarray::{Array2, Array4};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Cell, Error, Result};
use crate::signal_model::{ApertureGrid, GridPose, RadarConfig, RawDataCube, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimestampedPose {
    pub position: Vec3,
    pub timestamp: f64,
}

/// One radar frame: `[n_channels, n_samples]` complex samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TimestampedFrame {
    pub timestamp: f64,
    pub samples: Array2<Complex64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentReport {
    /// `(pose index, frame index)` pairs, one per target pose, in pose order.
    pub matches: Vec<(usize, usize)>,
    /// Frames not selected by any pose.
    pub dropped_frames: usize,
    /// Largest `|t_frame - t_pose|` over the matches (s).
    pub max_mismatch: f64,
}

fn check_increasing(name: &str, times: impl Iterator<Item = f64>) -> Result<()> {
    let mut prev = f64::NEG_INFINITY;
    for (i, t) in times.enumerate() {
        if !t.is_finite() {
            return Err(Error::domain(format!("{name} timestamp {i} is not finite")));
        }
        if t <= prev {
            return Err(Error::domain(format!(
                "{name} timestamps not strictly increasing at index {i}"
            )));
        }
        prev = t;
    }
    Ok(())
}

/// Frames whose timestamps fall within the pose stream's time span.
pub fn trim_streams<'a>(poses: &[TimestampedPose], frames: &'a [TimestampedFrame]) -> Result<&'a [TimestampedFrame]> {
    if poses.is_empty() {
        return Err(Error::domain("pose stream is empty"));
    }
    if frames.is_empty() {
        return Err(Error::domain("frame stream is empty"));
    }
    check_increasing("pose", poses.iter().map(|p| p.timestamp))?;
    check_increasing("frame", frames.iter().map(|f| f.timestamp))?;
    let start = poses[0].timestamp;
    let end = poses[poses.len() - 1].timestamp;
    let lo = frames.partition_point(|f| f.timestamp < start);
    let hi = frames.partition_point(|f| f.timestamp <= end);
    Ok(&frames[lo..hi.max(lo)])
}

/// Pairs every target pose with the frame nearest in time. Ties go to the
/// earlier frame.
pub fn align(target_poses: &[TimestampedPose], frames: &[TimestampedFrame]) -> Result<AlignmentReport> {
    if frames.is_empty() {
        return Err(Error::domain("no frames to align against"));
    }
    check_increasing("frame", frames.iter().map(|f| f.timestamp))?;
    let mut used = vec![false; frames.len()];
    let mut matches = Vec::with_capacity(target_poses.len());
    let mut max_mismatch = 0.0_f64;
    for (pi, pose) in target_poses.iter().enumerate() {
        let t = pose.timestamp;
        if !t.is_finite() {
            return Err(Error::domain(format!("pose timestamp {pi} is not finite")));
        }
        let after = frames.partition_point(|f| f.timestamp < t);
        let best = if after == 0 {
            0
        } else if after == frames.len() {
            after - 1
        } else {
            let before_gap = t - frames[after - 1].timestamp;
            let after_gap = frames[after].timestamp - t;
            if before_gap <= after_gap {
                after - 1
            } else {
                after
            }
        };
        max_mismatch = max_mismatch.max((frames[best].timestamp - t).abs());
        used[best] = true;
        matches.push((pi, best));
    }
    Ok(AlignmentReport {
        matches,
        dropped_frames: used.iter().filter(|u| !**u).count(),
        max_mismatch,
    })
}

/// Grid node whose position lies within a quarter pitch of `position`.
pub fn grid_cell(grid: &ApertureGrid, position: Vec3) -> Option<Cell> {
    let fx = (position[0] - grid.origin[0]) / grid.pitch_x;
    let fy = (position[1] - grid.origin[1]) / grid.pitch_y;
    let ix = fx.round();
    let iy = fy.round();
    if ix < 0.0 || iy < 0.0 || ix >= grid.n_x as f64 || iy >= grid.n_y as f64 {
        return None;
    }
    let tol_z = 0.25 * grid.pitch_x.min(grid.pitch_y);
    if (fx - ix).abs() > 0.25 || (fy - iy).abs() > 0.25 || (position[2] - grid.origin[2]).abs() > tol_z {
        return None;
    }
    Some((ix as usize, iy as usize))
}

/// For every grid node, the pose closest to it (earliest on ties), returned
/// in time order. Nodes no pose comes near are left out.
pub fn select_grid_poses(poses: &[TimestampedPose], grid: &ApertureGrid) -> Vec<TimestampedPose> {
    let mut best: Vec<Option<(f64, usize)>> = vec![None; grid.n_x * grid.n_y];
    for (i, p) in poses.iter().enumerate() {
        if let Some((ix, iy)) = grid_cell(grid, p.position) {
            let node = grid.node_position(ix, iy);
            let d = crate::signal_model::distance(node, p.position);
            let slot = &mut best[ix * grid.n_y + iy];
            if slot.is_none_or(|(bd, _)| d < bd) {
                *slot = Some((d, i));
            }
        }
    }
    let mut picked: Vec<usize> = best.into_iter().flatten().map(|(_, i)| i).collect();
    picked.sort_unstable();
    picked.into_iter().map(|i| poses[i]).collect()
}

/// Stacks the matched frames into a cube on `grid`.
///
/// Every grid cell must be covered by exactly one match; otherwise a
/// [`Error::Structural`] lists the offending cells.
pub fn build_signal_matrix(
    report: &AlignmentReport,
    poses: &[TimestampedPose],
    frames: &[TimestampedFrame],
    grid: &ApertureGrid,
    config: &RadarConfig,
) -> Result<RawDataCube> {
    grid.validate()?;
    config.validate()?;
    let n_ch = grid.channel_offsets.len();
    let n_s = config.n_samples;
    let mut owner: Vec<Option<(usize, usize)>> = vec![None; grid.n_x * grid.n_y];
    let mut duplicated = Vec::new();
    for &(pi, fi) in &report.matches {
        let pose = poses
            .get(pi)
            .ok_or_else(|| Error::domain(format!("match refers to missing pose {pi}")))?;
        let frame = frames
            .get(fi)
            .ok_or_else(|| Error::domain(format!("match refers to missing frame {fi}")))?;
        if frame.samples.dim() != (n_ch, n_s) {
            return Err(Error::shape(format!(
                "frame {fi} has shape {:?}, expected ({n_ch}, {n_s})",
                frame.samples.dim()
            )));
        }
        let Some(cell) = grid_cell(grid, pose.position) else {
            return Err(Error::geometry(format!(
                "pose {pi} at {:?} is not on any grid node",
                pose.position
            )));
        };
        let slot = &mut owner[cell.0 * grid.n_y + cell.1];
        if slot.is_some() {
            if !duplicated.contains(&cell) {
                duplicated.push(cell);
            }
        } else {
            *slot = Some((pi, fi));
        }
    }
    let uncovered: Vec<Cell> = (0..grid.n_x)
        .flat_map(|ix| (0..grid.n_y).map(move |iy| (ix, iy)))
        .filter(|&(ix, iy)| owner[ix * grid.n_y + iy].is_none())
        .collect();
    if !uncovered.is_empty() || !duplicated.is_empty() {
        duplicated.sort_unstable();
        return Err(Error::Structural { uncovered, duplicated });
    }

    let mut samples = Array4::zeros((grid.n_x, grid.n_y, n_ch, n_s));
    let mut cube_poses = Vec::with_capacity(grid.n_x * grid.n_y);
    for ix in 0..grid.n_x {
        for iy in 0..grid.n_y {
            let (pi, fi) = owner[ix * grid.n_y + iy].expect("coverage checked");
            samples
                .slice_mut(ndarray::s![ix, iy, .., ..])
                .assign(&frames[fi].samples);
            cube_poses.push(GridPose {
                position: poses[pi].position,
                timestamp: poses[pi].timestamp,
            });
        }
    }
    RawDataCube::new(*config, cube_poses, grid.channel_offsets.clone(), samples)
}

/// Runs trim, node selection, alignment and assembly in sequence.
pub fn assemble_cube(
    poses: &[TimestampedPose],
    frames: &[TimestampedFrame],
    grid: &ApertureGrid,
    config: &RadarConfig,
) -> Result<(RawDataCube, AlignmentReport)> {
    let trimmed = trim_streams(poses, frames)?;
    let targets = select_grid_poses(poses, grid);
    let report = align(&targets, trimmed)?;
    let cube = build_signal_matrix(&report, &targets, trimmed, grid, config)?;
    Ok((cube, report))
}

/// Parameters for turning a cube back into asynchronous streams.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamSynthesis {
    /// Pose stream rate (Hz).
    pub pose_rate: f64,
    /// Bound on the frame timestamp jitter (s). Must stay below half the
    /// node spacing in time so that the nearest frame is unambiguous.
    pub max_jitter: f64,
    /// Frames recorded before the arm starts moving.
    pub lead_frames: usize,
    /// Frames recorded after the arm stops.
    pub trail_frames: usize,
    pub seed: u64,
}

impl Default for StreamSynthesis {
    fn default() -> Self {
        Self {
            pose_rate: 1000.0,
            max_jitter: 0.003,
            lead_frames: 40,
            trail_frames: 10,
            seed: 0,
        }
    }
}

/// Serializes a cube into the pose and frame streams a live acquisition
/// would produce.
///
/// Node visits are taken from the cube pose timestamps. Between consecutive
/// visits, and briefly before the first and after the last, the arm moves
/// linearly and reports at `pose_rate`; the radar
/// stamps each node's frame with a uniformly jittered timestamp and keeps
/// running before and after the sweep.
pub fn synthesize_streams(
    cube: &RawDataCube,
    params: &StreamSynthesis,
) -> Result<(Vec<TimestampedPose>, Vec<TimestampedFrame>)> {
    if !(params.pose_rate > 0.0) || !(params.max_jitter >= 0.0) {
        return Err(Error::config("pose rate must be positive and jitter non-negative"));
    }
    let n_y = cube.n_y();
    let mut order: Vec<usize> = (0..cube.poses.len()).collect();
    order.sort_by(|&a, &b| cube.poses[a].timestamp.total_cmp(&cube.poses[b].timestamp));
    let visits: Vec<&GridPose> = order.iter().map(|&i| &cube.poses[i]).collect();
    let min_gap = visits
        .windows(2)
        .map(|w| w[1].timestamp - w[0].timestamp)
        .fold(f64::INFINITY, f64::min);
    if min_gap <= 0.0 {
        return Err(Error::domain("cube pose timestamps must be distinct"));
    }
    let frame_period = if min_gap.is_finite() { min_gap } else { 1.0 / 80.0 };
    if params.max_jitter >= 0.5 * frame_period {
        return Err(Error::config(format!(
            "jitter {} s is not below half a frame period",
            params.max_jitter
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let dt = 1.0 / params.pose_rate;

    // The arm is already moving towards the first node and keeps moving past
    // the last one, so every node frame, jittered either way, lies inside the
    // pose stream's time span.
    let n_roll = (params.max_jitter / dt).ceil() as usize + 1;
    let velocity = |from: &GridPose, to: &GridPose| -> Vec3 {
        let gap = to.timestamp - from.timestamp;
        [
            (to.position[0] - from.position[0]) / gap,
            (to.position[1] - from.position[1]) / gap,
            (to.position[2] - from.position[2]) / gap,
        ]
    };
    let (v_in, v_out) = match visits.len() {
        1 => ([1e-6, 0.0, 0.0], [1e-6, 0.0, 0.0]),
        n => (velocity(visits[0], visits[1]), velocity(visits[n - 2], visits[n - 1])),
    };
    let drift = |p: Vec3, v: Vec3, t: f64| [p[0] + v[0] * t, p[1] + v[1] * t, p[2] + v[2] * t];

    let mut poses = Vec::new();
    for m in (1..=n_roll).rev() {
        let t = -(m as f64) * dt;
        poses.push(TimestampedPose {
            position: drift(visits[0].position, v_in, t),
            timestamp: visits[0].timestamp + t,
        });
    }
    for (s, v) in visits.iter().enumerate() {
        poses.push(TimestampedPose {
            position: v.position,
            timestamp: v.timestamp,
        });
        if let Some(next) = visits.get(s + 1) {
            let span = next.timestamp - v.timestamp;
            let mut m = 1;
            loop {
                let t = v.timestamp + m as f64 * dt;
                if t >= next.timestamp - 0.5 * dt {
                    break;
                }
                let a = (t - v.timestamp) / span;
                let p = [
                    v.position[0] + a * (next.position[0] - v.position[0]),
                    v.position[1] + a * (next.position[1] - v.position[1]),
                    v.position[2] + a * (next.position[2] - v.position[2]),
                ];
                poses.push(TimestampedPose {
                    position: p,
                    timestamp: t,
                });
                m += 1;
            }
        }
    }

    let end = visits[visits.len() - 1];
    for m in 1..=n_roll {
        let t = m as f64 * dt;
        poses.push(TimestampedPose {
            position: drift(end.position, v_out, t),
            timestamp: end.timestamp + t,
        });
    }

    let (n_ch, n_s) = (cube.n_channels(), cube.n_samples());
    let jitter = |rng: &mut ChaCha8Rng| {
        if params.max_jitter > 0.0 {
            rng.random_range(-params.max_jitter..params.max_jitter)
        } else {
            0.0
        }
    };
    let idle = |rng: &mut ChaCha8Rng| {
        Array2::from_shape_fn((n_ch, n_s), |_| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    };
    let first = visits[0].timestamp;
    let last = visits[visits.len() - 1].timestamp;
    let mut frames = Vec::new();
    for m in (1..=params.lead_frames).rev() {
        let t = first - m as f64 * frame_period + jitter(&mut rng);
        let samples = idle(&mut rng);
        frames.push(TimestampedFrame { timestamp: t, samples });
    }
    for (&idx, v) in order.iter().zip(&visits) {
        let (ix, iy) = (idx / n_y, idx % n_y);
        frames.push(TimestampedFrame {
            timestamp: v.timestamp + jitter(&mut rng),
            samples: cube.samples.slice(ndarray::s![ix, iy, .., ..]).to_owned(),
        });
    }
    for m in 1..=params.trail_frames {
        let t = last + m as f64 * frame_period + jitter(&mut rng);
        let samples = idle(&mut rng);
        frames.push(TimestampedFrame { timestamp: t, samples });
    }
    Ok((poses, frames))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_model::{simulate_cube, PointScatterer, Scene, SimulationOptions};

    fn frame(t: f64) -> TimestampedFrame {
        TimestampedFrame {
            timestamp: t,
            samples: Array2::zeros((1, 2)),
        }
    }

    fn pose(t: f64) -> TimestampedPose {
        TimestampedPose {
            position: [0.0; 3],
            timestamp: t,
        }
    }

    #[test]
    fn trim_keeps_frames_inside_pose_window() {
        let poses = [pose(1.0), pose(1.5), pose(2.0)];
        let frames = [frame(0.9), frame(1.1), frame(2.1)];
        let kept = trim_streams(&poses, &frames).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].timestamp, 1.1);

        let inside = [frame(1.2), frame(1.8)];
        assert_eq!(trim_streams(&poses, &inside).unwrap(), &inside[..]);

        // radar running half a second before the arm
        let early: Vec<_> = (0..30).map(|i| frame(0.5 + 0.05 * i as f64)).collect();
        let kept = trim_streams(&poses, &early).unwrap();
        assert!(kept.iter().all(|f| f.timestamp >= 1.0));
        assert!(trim_streams(&[], &frames).is_err());
        assert!(trim_streams(&poses, &[]).is_err());
        assert!(trim_streams(&poses, &[frame(1.2), frame(1.1)]).is_err());
    }

    #[test]
    fn identical_timestamps_give_identity_alignment() {
        let ts: Vec<f64> = (0..10).map(|i| 0.01 * i as f64).collect();
        let poses: Vec<_> = ts.iter().map(|&t| pose(t)).collect();
        let frames: Vec<_> = ts.iter().map(|&t| frame(t)).collect();
        let r = align(&poses, &frames).unwrap();
        assert!(r.matches.iter().all(|&(p, f)| p == f));
        assert_eq!(r.max_mismatch, 0.0);
        assert_eq!(r.dropped_frames, 0);
    }

    #[test]
    fn nearest_frame_matches_exhaustive_search() {
        let frames: Vec<_> = (0..20).map(|i| frame(0.0125 * i as f64)).collect();
        let poses: Vec<_> = (0..240).map(|i| pose(0.001 * i as f64)).collect();
        let r = align(&poses, &frames).unwrap();
        for &(pi, fi) in &r.matches {
            let t = poses[pi].timestamp;
            let best = frames
                .iter()
                .map(|f| (f.timestamp - t).abs())
                .fold(f64::INFINITY, f64::min);
            assert_eq!((frames[fi].timestamp - t).abs(), best);
        }
        // pose at t = 12.5 ms sits on frame 1
        let r = align(&[pose(0.0125)], &frames).unwrap();
        assert_eq!(r.matches, vec![(0, 1)]);
    }

    #[test]
    fn ties_choose_earlier_frame() {
        let frames = [frame(0.0), frame(0.5), frame(1.0)];
        let r = align(&[pose(0.25), pose(0.75)], &frames).unwrap();
        assert_eq!(r.matches, vec![(0, 0), (1, 1)]);
        assert_eq!(r.dropped_frames, 1);
        assert!(align(&[pose(0.25)], &[]).is_err());
    }

    #[test]
    fn single_cell_grid() {
        let mut grid = ApertureGrid::centered(1, 1, 0.01);
        grid.channel_offsets = vec![[0.0; 3]];
        let cfg = RadarConfig::with_samples(2);
        let poses = [pose(0.0)];
        let frames = [frame(0.001)];
        let r = align(&poses, &frames).unwrap();
        let cube = build_signal_matrix(&r, &poses, &frames, &grid, &cfg).unwrap();
        assert_eq!(cube.poses.len(), 1);
        assert_eq!(cube.samples.dim(), (1, 1, 1, 2));
    }

    #[test]
    fn missing_cell_is_reported() {
        let grid = ApertureGrid::centered(2, 1, 0.01);
        let cfg = RadarConfig::with_samples(2);
        let poses = [TimestampedPose {
            position: grid.node_position(0, 0),
            timestamp: 0.0,
        }];
        let frames = [frame(0.0)];
        let r = align(&poses, &frames).unwrap();
        match build_signal_matrix(&r, &poses, &frames, &grid, &cfg) {
            Err(Error::Structural { uncovered, duplicated }) => {
                assert_eq!(uncovered, vec![(1, 0)]);
                assert!(duplicated.is_empty());
            }
            other => panic!("unexpected {other:?}"),
        }
        let twice = [
            poses[0],
            TimestampedPose {
                position: grid.node_position(0, 0),
                timestamp: 1.0,
            },
        ];
        let r = align(&twice, &frames).unwrap();
        match build_signal_matrix(&r, &twice, &frames, &grid, &cfg) {
            Err(Error::Structural { duplicated, .. }) => assert_eq!(duplicated, vec![(0, 0)]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn grid_cell_tolerance_is_a_quarter_pitch() {
        let grid = ApertureGrid::centered(3, 3, 0.01);
        let node = grid.node_position(1, 2);
        assert_eq!(grid_cell(&grid, node), Some((1, 2)));
        assert_eq!(grid_cell(&grid, [node[0] + 0.0024, node[1], node[2]]), Some((1, 2)));
        assert_eq!(grid_cell(&grid, [node[0] + 0.0026, node[1], node[2]]), None);
        assert_eq!(grid_cell(&grid, [node[0] + 0.05, node[1], node[2]]), None);
    }

    #[test]
    fn streams_round_trip_to_the_same_cube() {
        let cfg = RadarConfig::with_samples(8);
        let grid = ApertureGrid::centered(5, 3, 2.4e-3).with_channels(ApertureGrid::linear_channels(2, 2.4e-3));
        let scene = Scene::new(vec![PointScatterer::unit([0.0, 0.0, 0.3])]);
        let opts = SimulationOptions {
            noise_sigma: 0.01,
            seed: 3,
            ..Default::default()
        };
        let cube = simulate_cube(&cfg, &scene, &grid, &opts).unwrap();
        let (poses, frames) = synthesize_streams(&cube, &StreamSynthesis::default()).unwrap();
        assert!(poses.len() > 10 * cube.poses.len());
        let (rebuilt, report) = assemble_cube(&poses, &frames, &grid, &cfg).unwrap();
        assert_eq!(rebuilt.poses, cube.poses);
        assert_eq!(rebuilt.channel_offsets, cube.channel_offsets);
        for (i, (a, b)) in rebuilt.samples.iter().zip(cube.samples.iter()).enumerate() {
            assert_eq!(a, b, "sample {i}");
        }
        assert!(report.max_mismatch < 0.5 / 80.0);
    }
}
