//! Trajectory ingestion: external CSV formats, speed filtering, and slicing
//! rasterized sequences into supervised (k input, tau target) windows.

use std::collections::BTreeMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::grid::{rasterize_sequence, FieldSequence, GridSpec, PedObservation, Trajectory};

/// One supervised training sample: `k` observed frames and the `tau` frames
/// that follow them, cut from one contiguous rasterization.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetWindow {
    pub input: FieldSequence,
    pub target: FieldSequence,
}

/// Windowing parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestConfig {
    pub spec: GridSpec,
    /// Observed frames per window.
    pub k: usize,
    /// Forecast frames per window.
    pub tau: usize,
    /// Frame step between consecutive window starts.
    pub stride: usize,
    /// Samples faster than this are dropped as tracker glitches, m/s.
    pub max_speed: f64,
}

impl IngestConfig {
    pub fn new(spec: GridSpec, k: usize, tau: usize, stride: usize) -> Result<Self> {
        if k == 0 || tau == 0 || stride == 0 {
            return Err(Error::InvalidConfig(format!(
                "k, tau, and stride must be at least 1, got k={k} tau={tau} stride={stride}"
            )));
        }
        Ok(Self { spec, k, tau, stride, max_speed: 5.0 })
    }
}

fn parse_field<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("cannot parse {what} from {s:?}"),
    })
}

fn group_by_pid(mut rows: Vec<PedObservation>) -> Vec<Trajectory> {
    rows.sort_by(|a, b| a.pid.cmp(&b.pid).then(a.time.total_cmp(&b.time)));
    let mut by_pid: BTreeMap<u64, Vec<PedObservation>> = BTreeMap::new();
    for r in rows {
        by_pid.entry(r.pid).or_default().push(r);
    }
    by_pid
        .into_iter()
        .map(|(pid, samples)| Trajectory { pid, samples })
        .collect()
}

/// Parses raw tracker CSV rows
/// `time(ms), person_id, x(mm), y(mm), z(mm), velocity(mm/s), motion_angle(rad), facing_angle(rad)`
/// into SI-unit trajectories. The velocity vector is reconstructed as
/// speed · (cos θ, sin θ) from the motion angle. Rows faster than
/// `max_speed` are dropped.
pub fn parse_atc_csv(bytes: &[u8], max_speed: f64) -> Result<Vec<Trajectory>> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::Parse { line: 0, msg: format!("not valid UTF-8: {e}") })?;
    let mut rows = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 8 comma-separated fields, got {}", fields.len()),
            });
        }
        let time_ms: f64 = parse_field(fields[0], line, "time")?;
        let pid: u64 = parse_field(fields[1], line, "person id")?;
        let x_mm: f64 = parse_field(fields[2], line, "x")?;
        let y_mm: f64 = parse_field(fields[3], line, "y")?;
        let _z_mm: f64 = parse_field(fields[4], line, "z")?;
        let speed_mm: f64 = parse_field(fields[5], line, "velocity")?;
        let motion_angle: f64 = parse_field(fields[6], line, "motion angle")?;
        let _facing: f64 = parse_field(fields[7], line, "facing angle")?;

        if speed_mm > max_speed * 1000.0 {
            continue;
        }
        let speed = speed_mm / 1000.0;
        rows.push(PedObservation {
            time: time_ms / 1000.0,
            pid,
            pos: [x_mm / 1000.0, y_mm / 1000.0],
            vel: [speed * motion_angle.cos(), speed * motion_angle.sin()],
        });
    }
    Ok(group_by_pid(rows))
}

const CANONICAL_HEADER: &str = "time,pid,x,y,vx,vy";

/// Parses the canonical trajectory CSV (header `time,pid,x,y,vx,vy`, SI
/// units). Out-of-order rows are re-sorted by time within each pedestrian.
pub fn parse_canonical_csv(bytes: &[u8]) -> Result<Vec<Trajectory>> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::Parse { line: 0, msg: format!("not valid UTF-8: {e}") })?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CANONICAL_HEADER => {}
        Some((_, h)) => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header {CANONICAL_HEADER:?}, got {h:?}"),
            })
        }
        None => return Ok(Vec::new()),
    }
    let mut rows = Vec::new();
    for (n, raw) in lines {
        let line = n + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 6 comma-separated fields, got {}", fields.len()),
            });
        }
        rows.push(PedObservation {
            time: parse_field(fields[0], line, "time")?,
            pid: parse_field(fields[1], line, "pid")?,
            pos: [parse_field(fields[2], line, "x")?, parse_field(fields[3], line, "y")?],
            vel: [parse_field(fields[4], line, "vx")?, parse_field(fields[5], line, "vy")?],
        });
    }
    Ok(group_by_pid(rows))
}

/// Writes trajectories as canonical CSV with 9 significant digits, a stable
/// fixed point of parse-then-write.
pub fn write_canonical_csv<W: Write>(w: &mut W, trajs: &[Trajectory]) -> Result<()> {
    writeln!(w, "{CANONICAL_HEADER}")?;
    for traj in trajs {
        for s in &traj.samples {
            writeln!(
                w,
                "{:.8e},{},{:.8e},{:.8e},{:.8e},{:.8e}",
                s.time, traj.pid, s.pos[0], s.pos[1], s.vel[0], s.vel[1]
            )?;
        }
    }
    Ok(())
}

/// Rasterizes the trajectories' full time range once and slices it into
/// supervised windows every `stride` frames. Windows whose target frames
/// hold no density are discarded (their loss would be undefined).
pub fn window_dataset(trajs: &[Trajectory], cfg: &IngestConfig) -> Result<Vec<DatasetWindow>> {
    let times: Vec<f64> = trajs.iter().flat_map(|t| t.samples.iter().map(|s| s.time)).collect();
    let (Some(&t_min), Some(&t_max)) = (
        times.iter().min_by(|a, b| a.total_cmp(b)),
        times.iter().max_by(|a, b| a.total_cmp(b)),
    ) else {
        return Ok(Vec::new());
    };

    let dt = cfg.spec.frame_dt;
    let n_frames = ((t_max - t_min) / dt).floor() as usize + 1;
    let span = cfg.k + cfg.tau;
    if n_frames < span {
        return Ok(Vec::new());
    }
    let full = rasterize_sequence(trajs, &cfg.spec, t_min, n_frames)?;

    let mut windows = Vec::new();
    let mut start = 0;
    while start + span <= n_frames {
        let target = full.slice(start + cfg.k, cfg.tau)?;
        if target.frames.iter().any(|f| !f.is_empty()) {
            windows.push(DatasetWindow { input: full.slice(start, cfg.k)?, target });
        }
        start += cfg.stride;
    }
    Ok(windows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{make_corpus, simulate, CorpusKind};

    #[test]
    fn atc_row_converts_units() {
        let trajs = parse_atc_csv(b"1000,5,2000,3000,0,1000,0.0,0.0\n", 5.0).unwrap();
        assert_eq!(trajs.len(), 1);
        let s = trajs[0].samples[0];
        assert_eq!(trajs[0].pid, 5);
        assert_eq!(s.time, 1.0);
        assert_eq!(s.pos, [2.0, 3.0]);
        assert!((s.vel[0] - 1.0).abs() < 1e-12 && s.vel[1].abs() < 1e-12);
    }

    #[test]
    fn atc_parser_errors_and_filters() {
        assert!(parse_atc_csv(b"", 5.0).unwrap().is_empty());
        match parse_atc_csv(b"1000,5,2000,3000,0,1000,0.0,0.0\n1000,abc,0,0,0,0,0,0\n", 5.0) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        // 6000 mm/s exceeds the 5 m/s filter.
        let trajs = parse_atc_csv(b"1000,5,0,0,0,6000,0.0,0.0\n", 5.0).unwrap();
        assert!(trajs.is_empty());
    }

    #[test]
    fn canonical_roundtrip_and_sorting() {
        let spec = make_corpus(CorpusKind::Blob, 9, 1).remove(0);
        let trajs = simulate(&spec).unwrap();
        let mut buf = Vec::new();
        write_canonical_csv(&mut buf, &trajs).unwrap();
        let back = parse_canonical_csv(&buf).unwrap();
        assert_eq!(back.len(), trajs.len());
        for (a, b) in trajs.iter().zip(&back) {
            assert_eq!(a.pid, b.pid);
            assert_eq!(a.samples.len(), b.samples.len());
            for (sa, sb) in a.samples.iter().zip(&b.samples) {
                assert!((sa.time - sb.time).abs() < 1e-6);
                assert!((sa.pos[0] - sb.pos[0]).abs() < 1e-6);
                assert!((sa.vel[1] - sb.vel[1]).abs() < 1e-6);
            }
        }
        // Writing the parsed copy reproduces the bytes: stable fixed point.
        let mut buf2 = Vec::new();
        write_canonical_csv(&mut buf2, &back).unwrap();
        assert_eq!(buf, buf2);

        let shuffled = b"time,pid,x,y,vx,vy\n2.0,1,1.0,0.0,0.0,0.0\n1.0,1,0.0,0.0,0.0,0.0\n";
        let t = parse_canonical_csv(shuffled).unwrap();
        assert_eq!(t[0].samples[0].time, 1.0);
        assert_eq!(t[0].samples[1].time, 2.0);

        assert!(matches!(
            parse_canonical_csv(b"wrong,header\n"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    fn straight_walker(duration_frames: usize) -> Vec<Trajectory> {
        let samples = (0..duration_frames)
            .map(|t| PedObservation {
                time: t as f64,
                pid: 1,
                pos: [2.0 + 0.5 * t as f64, 6.0],
                vel: [0.5, 0.0],
            })
            .collect();
        vec![Trajectory { pid: 1, samples }]
    }

    #[test]
    fn window_counts_match_arithmetic() {
        let spec = GridSpec::new([0.0, 0.0], 1.0, 12, 36, 1.0).unwrap();
        // 30 frames, k=10, tau=10, stride=5: starts at 0, 5, 10.
        let cfg = IngestConfig { stride: 5, ..IngestConfig::new(spec.clone(), 10, 10, 1).unwrap() };
        let windows = window_dataset(&straight_walker(30), &cfg).unwrap();
        assert_eq!(windows.len(), 3);

        // Exactly k + tau frames with stride 1: a single window.
        let cfg1 = IngestConfig::new(spec.clone(), 10, 10, 1).unwrap();
        assert_eq!(window_dataset(&straight_walker(20), &cfg1).unwrap().len(), 1);

        // Too short: none.
        assert!(window_dataset(&straight_walker(12), &cfg1).unwrap().is_empty());
        // Empty scene: none.
        assert!(window_dataset(&[], &cfg1).unwrap().is_empty());
    }

    #[test]
    fn windows_are_exact_slices() {
        let spec = GridSpec::new([0.0, 0.0], 1.0, 12, 36, 1.0).unwrap();
        let trajs = straight_walker(30);
        let cfg = IngestConfig { stride: 5, ..IngestConfig::new(spec.clone(), 10, 10, 1).unwrap() };
        let full = rasterize_sequence(&trajs, &spec, 0.0, 30).unwrap();
        for (w, start) in window_dataset(&trajs, &cfg).unwrap().iter().zip([0usize, 5, 10]) {
            assert_eq!(w.input.frames[..], full.frames[start..start + 10]);
            assert_eq!(w.target.frames[..], full.frames[start + 10..start + 20]);
        }
    }
}
