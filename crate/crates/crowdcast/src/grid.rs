//! Macroscopic crowd representation: grid fields of density, mean velocity,
//! and velocity variance, plus rasterization from point observations and
//! continuous space-time field evaluation.

use crate::error::{Error, Result};
use crate::par;

/// Geometry and timing of the field grid. Cells are square, `cell_size` on a
/// side; cell `(i, j)` spans rows (y) by columns (x) starting at `origin`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    /// World position of the grid's lower corner (min x, min y), meters.
    pub origin: [f64; 2],
    /// Cell edge length, meters.
    pub cell_size: f64,
    /// Number of rows (y direction).
    pub height: usize,
    /// Number of columns (x direction).
    pub width: usize,
    /// Time between consecutive frames, seconds.
    pub frame_dt: f64,
}

impl GridSpec {
    pub fn new(origin: [f64; 2], cell_size: f64, height: usize, width: usize, frame_dt: f64) -> Result<Self> {
        if !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(Error::InvalidConfig(format!("cell_size must be positive, got {cell_size}")));
        }
        if height == 0 || width == 0 {
            return Err(Error::InvalidConfig(format!("grid must be at least 1x1, got {height}x{width}")));
        }
        if !(frame_dt > 0.0) || !frame_dt.is_finite() {
            return Err(Error::InvalidConfig(format!("frame_dt must be positive, got {frame_dt}")));
        }
        Ok(Self { origin, cell_size, height, width, frame_dt })
    }

    /// World center of cell `(i, j)`.
    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin[0] + (j as f64 + 0.5) * self.cell_size,
            self.origin[1] + (i as f64 + 0.5) * self.cell_size,
        ]
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_size * self.cell_size
    }

    /// Whether a world position lies inside the grid rectangle.
    pub fn contains(&self, pos: [f64; 2]) -> bool {
        let [x, y] = pos;
        x >= self.origin[0]
            && y >= self.origin[1]
            && x <= self.origin[0] + self.width as f64 * self.cell_size
            && y <= self.origin[1] + self.height as f64 * self.cell_size
    }

    /// Grid rectangle as (min, max) corners.
    pub fn bounds(&self) -> ([f64; 2], [f64; 2]) {
        (
            self.origin,
            [
                self.origin[0] + self.width as f64 * self.cell_size,
                self.origin[1] + self.height as f64 * self.cell_size,
            ],
        )
    }
}

/// Per-cell crowd state: density, mean velocity, scalar velocity variance.
///
/// Empty-cell convention: `rho == 0` implies `mu_v == [0, 0]` and
/// `sigma2_v == 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CellState {
    /// Pedestrians per unit area.
    pub rho: f64,
    /// Mean pedestrian velocity, m/s.
    pub mu_v: [f64; 2],
    /// Scalar velocity variance E‖v − mu_v‖², m²/s².
    pub sigma2_v: f64,
}

/// One time frame of crowd fields over the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CrowdField {
    pub spec: GridSpec,
    /// Row-major `height × width` cell states.
    pub cells: Vec<CellState>,
    /// Integer time index of this frame.
    pub frame_index: i64,
}

impl CrowdField {
    pub fn zeros(spec: GridSpec, frame_index: i64) -> Self {
        let cells = vec![CellState::default(); spec.height * spec.width];
        Self { spec, cells, frame_index }
    }

    pub fn cell(&self, i: usize, j: usize) -> &CellState {
        &self.cells[i * self.spec.width + j]
    }

    pub fn cell_mut(&mut self, i: usize, j: usize) -> &mut CellState {
        &mut self.cells[i * self.spec.width + j]
    }

    /// True when no cell holds any density.
    pub fn is_empty(&self) -> bool {
        self.cells.iter().all(|c| c.rho == 0.0)
    }
}

/// Time-ordered stack of [`CrowdField`]s. Frame `i` carries nominal time
/// `t0 + i * frame_dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSequence {
    pub spec: GridSpec,
    pub frames: Vec<CrowdField>,
    /// Absolute time of the first frame, seconds.
    pub t0: f64,
}

impl FieldSequence {
    pub fn new(spec: GridSpec, frames: Vec<CrowdField>, t0: f64) -> Result<Self> {
        for (n, pair) in frames.windows(2).enumerate() {
            if pair[1].frame_index != pair[0].frame_index + 1 {
                return Err(Error::InvalidConfig(format!(
                    "frame indices must be consecutive, got {} then {} at position {}",
                    pair[0].frame_index,
                    pair[1].frame_index,
                    n
                )));
            }
        }
        if let Some(f) = frames.iter().find(|f| f.spec != spec) {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{} grid", spec.height, spec.width),
                got: format!("{}x{} grid", f.spec.height, f.spec.width),
            });
        }
        Ok(Self { spec, frames, t0 })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn start_index(&self) -> i64 {
        self.frames.first().map_or(0, |f| f.frame_index)
    }

    /// Nominal time of frame `i`.
    pub fn frame_time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.spec.frame_dt
    }

    /// Contiguous sub-sequence `[from, from + len)` sharing this sequence's
    /// frames bit for bit.
    pub fn slice(&self, from: usize, len: usize) -> Result<FieldSequence> {
        if from + len > self.frames.len() {
            return Err(Error::InvalidConfig(format!(
                "slice [{from}, {}) out of range for {} frames",
                from + len,
                self.frames.len()
            )));
        }
        Ok(FieldSequence {
            spec: self.spec.clone(),
            frames: self.frames[from..from + len].to_vec(),
            t0: self.frame_time(from),
        })
    }

    /// Same frames with the time axis re-anchored so the first frame sits at
    /// `t0` (used when planning in a local clock).
    pub fn with_t0(&self, t0: f64) -> FieldSequence {
        FieldSequence { spec: self.spec.clone(), frames: self.frames.clone(), t0 }
    }
}

/// Raw timestamped pedestrian sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PedObservation {
    /// Sample time, seconds.
    pub time: f64,
    /// Pedestrian id.
    pub pid: u64,
    /// Position, meters.
    pub pos: [f64; 2],
    /// Velocity, m/s.
    pub vel: [f64; 2],
}

impl PedObservation {
    fn check_finite(&self) -> Result<()> {
        let vals = [self.time, self.pos[0], self.pos[1], self.vel[0], self.vel[1]];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "non-finite observation for pid {}: pos ({}, {}), vel ({}, {})",
                self.pid, self.pos[0], self.pos[1], self.vel[0], self.vel[1]
            )));
        }
        Ok(())
    }
}

/// Splat weights of a point onto the four surrounding cell centers.
/// Returns up to four `(row, col, weight)` triples; weights for cells outside
/// the grid are dropped.
pub(crate) fn splat(spec: &GridSpec, pos: [f64; 2]) -> [(i64, i64, f64); 4] {
    let u = (pos[0] - spec.origin[0]) / spec.cell_size - 0.5;
    let v = (pos[1] - spec.origin[1]) / spec.cell_size - 0.5;
    let j0 = u.floor();
    let i0 = v.floor();
    let fx = u - j0;
    let fy = v - i0;
    let (i0, j0) = (i0 as i64, j0 as i64);
    [
        (i0, j0, (1.0 - fx) * (1.0 - fy)),
        (i0, j0 + 1, fx * (1.0 - fy)),
        (i0 + 1, j0, (1.0 - fx) * fy),
        (i0 + 1, j0 + 1, fx * fy),
    ]
}

/// Converts one frame's point observations into a [`CrowdField`].
///
/// Each pedestrian's unit mass is bilinearly splatted onto the four nearest
/// cell centers; density is splatted mass over cell area, and the velocity
/// moments are splat-weight-weighted first and second moments. Pedestrians
/// outside the grid rectangle are dropped.
pub fn rasterize_frame(obs: &[PedObservation], spec: &GridSpec, frame_index: i64) -> Result<CrowdField> {
    let (h, w) = (spec.height, spec.width);
    let mut wsum = vec![0.0f64; h * w];
    let mut wv = vec![[0.0f64; 2]; h * w];
    let mut wv2 = vec![0.0f64; h * w];

    for o in obs {
        o.check_finite()?;
        if !spec.contains(o.pos) {
            continue;
        }
        for (i, j, wt) in splat(spec, o.pos) {
            if i < 0 || j < 0 || i >= h as i64 || j >= w as i64 || wt == 0.0 {
                continue;
            }
            let idx = i as usize * w + j as usize;
            wsum[idx] += wt;
            wv[idx][0] += wt * o.vel[0];
            wv[idx][1] += wt * o.vel[1];
            wv2[idx] += wt * (o.vel[0] * o.vel[0] + o.vel[1] * o.vel[1]);
        }
    }

    let area = spec.cell_area();
    let mut field = CrowdField::zeros(spec.clone(), frame_index);
    for (idx, cell) in field.cells.iter_mut().enumerate() {
        if wsum[idx] > 0.0 {
            let mu = [wv[idx][0] / wsum[idx], wv[idx][1] / wsum[idx]];
            let second = wv2[idx] / wsum[idx];
            cell.rho = wsum[idx] / area;
            cell.mu_v = mu;
            // Var = E‖v‖² − ‖μ‖²; clamp roundoff.
            cell.sigma2_v = (second - (mu[0] * mu[0] + mu[1] * mu[1])).max(0.0);
        }
    }
    Ok(field)
}

/// Per-pedestrian timestamped samples; the raw input to rasterization.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub pid: u64,
    /// Time-ordered samples.
    pub samples: Vec<PedObservation>,
}

/// Rasterizes trajectories into `n_frames` consecutive frames starting at
/// `t0`. Frame `f` holds observations with time in
/// `[t0 + f·frame_dt, t0 + (f+1)·frame_dt)`; a pedestrian sampled several
/// times inside a frame contributes its temporally last sample.
pub fn rasterize_sequence(
    trajs: &[Trajectory],
    spec: &GridSpec,
    t0: f64,
    n_frames: usize,
) -> Result<FieldSequence> {
    if n_frames == 0 {
        return Err(Error::InvalidConfig("n_frames must be at least 1".into()));
    }
    let dt = spec.frame_dt;
    let mut per_frame: Vec<Vec<PedObservation>> = vec![Vec::new(); n_frames];
    for traj in trajs {
        let mut last_frame: Option<usize> = None;
        for s in &traj.samples {
            let rel = (s.time - t0) / dt;
            if rel < 0.0 || rel >= n_frames as f64 {
                last_frame = None;
                continue;
            }
            let f = rel.floor() as usize;
            if last_frame == Some(f) {
                // Later sample in the same frame wins.
                *per_frame[f].last_mut().unwrap() = *s;
            } else {
                per_frame[f].push(*s);
                last_frame = Some(f);
            }
        }
    }

    let frames: Vec<Result<CrowdField>> = par::map_indexed(n_frames, |f| {
        rasterize_frame(&per_frame[f], spec, f as i64)
    });
    let frames = frames.into_iter().collect::<Result<Vec<_>>>()?;
    FieldSequence::new(spec.clone(), frames, t0)
}

/// Bilinear interpolation of a single frame at a world position. Cell-center
/// indices are clamped to the grid edge, so the result is continuous on the
/// whole grid rectangle.
pub(crate) fn bilinear_clamped(field: &CrowdField, pos: [f64; 2]) -> CellState {
    let spec = &field.spec;
    let u = (pos[0] - spec.origin[0]) / spec.cell_size - 0.5;
    let v = (pos[1] - spec.origin[1]) / spec.cell_size - 0.5;
    let j0 = u.floor();
    let i0 = v.floor();
    let fx = u - j0;
    let fy = v - i0;
    let clamp = |n: f64, hi: usize| (n.max(0.0) as usize).min(hi - 1);
    let j0c = clamp(j0, spec.width);
    let j1c = clamp(j0 + 1.0, spec.width);
    let i0c = clamp(i0, spec.height);
    let i1c = clamp(i0 + 1.0, spec.height);

    let corners = [
        (field.cell(i0c, j0c), (1.0 - fx) * (1.0 - fy)),
        (field.cell(i0c, j1c), fx * (1.0 - fy)),
        (field.cell(i1c, j0c), (1.0 - fx) * fy),
        (field.cell(i1c, j1c), fx * fy),
    ];
    let mut out = CellState::default();
    for (c, wt) in corners {
        out.rho += wt * c.rho;
        out.mu_v[0] += wt * c.mu_v[0];
        out.mu_v[1] += wt * c.mu_v[1];
        out.sigma2_v += wt * c.sigma2_v;
    }
    out
}

/// Evaluates a field sequence at a continuous space-time point: bilinear in
/// space over the four surrounding cell centers, linear in time between the
/// two bracketing frames. Times outside the covered range clamp to the
/// nearest frame (hold-first / hold-last).
pub fn sample_field(seq: &FieldSequence, pos: [f64; 2], time: f64) -> Result<CellState> {
    if seq.frames.is_empty() {
        return Err(Error::InvalidConfig("cannot sample an empty sequence".into()));
    }
    if !seq.spec.contains(pos) {
        return Err(Error::OutOfDomain { x: pos[0], y: pos[1] });
    }
    let s = (time - seq.t0) / seq.spec.frame_dt;
    let last = seq.frames.len() - 1;
    if s <= 0.0 {
        return Ok(bilinear_clamped(&seq.frames[0], pos));
    }
    if s >= last as f64 {
        return Ok(bilinear_clamped(&seq.frames[last], pos));
    }
    let f0 = s.floor() as usize;
    let a = s - f0 as f64;
    let c0 = bilinear_clamped(&seq.frames[f0], pos);
    let c1 = bilinear_clamped(&seq.frames[f0 + 1], pos);
    Ok(CellState {
        rho: (1.0 - a) * c0.rho + a * c1.rho,
        mu_v: [
            (1.0 - a) * c0.mu_v[0] + a * c1.mu_v[0],
            (1.0 - a) * c0.mu_v[1] + a * c1.mu_v[1],
        ],
        sigma2_v: (1.0 - a) * c0.sigma2_v + a * c1.sigma2_v,
    })
}

/// Total pedestrian mass of a frame: Σ rho · cell_area.
pub fn total_mass(field: &CrowdField) -> f64 {
    let area = field.spec.cell_area();
    field.cells.iter().map(|c| c.rho).sum::<f64>() * area
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub(crate) fn spec_36x12() -> GridSpec {
        GridSpec::new([0.0, 0.0], 1.0, 12, 36, 1.0).unwrap()
    }

    fn obs(pid: u64, time: f64, pos: [f64; 2], vel: [f64; 2]) -> PedObservation {
        PedObservation { time, pid, pos, vel }
    }

    #[test]
    fn empty_frame_is_all_zero() {
        let f = rasterize_frame(&[], &spec_36x12(), 0).unwrap();
        assert!(f.is_empty());
        assert_eq!(total_mass(&f), 0.0);
    }

    #[test]
    fn delta_at_cell_center() {
        let spec = spec_36x12();
        // Center of cell (6, 10).
        let f = rasterize_frame(&[obs(1, 0.0, [10.5, 6.5], [1.0, 0.0])], &spec, 0).unwrap();
        let c = f.cell(6, 10);
        assert_relative_eq!(c.rho, 1.0, max_relative = 1e-12);
        assert_eq!(c.mu_v, [1.0, 0.0]);
        assert_eq!(c.sigma2_v, 0.0);
        let occupied = f.cells.iter().filter(|c| c.rho != 0.0).count();
        assert_eq!(occupied, 1);
    }

    #[test]
    fn opposing_pair_mean_and_variance() {
        // Hand evaluation: two unit-speed walkers in one cell, mu = 0,
        // sigma2 = E‖v − mu‖² = 1.
        let spec = spec_36x12();
        let f = rasterize_frame(
            &[
                obs(1, 0.0, [10.5, 6.5], [1.0, 0.0]),
                obs(2, 0.0, [10.5, 6.5], [-1.0, 0.0]),
            ],
            &spec,
            0,
        )
        .unwrap();
        let c = f.cell(6, 10);
        assert_relative_eq!(c.rho, 2.0, max_relative = 1e-12);
        assert_relative_eq!(c.mu_v[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(c.sigma2_v, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn out_of_bounds_dropped_and_nonfinite_rejected() {
        let spec = spec_36x12();
        let f = rasterize_frame(&[obs(1, 0.0, [-3.0, 5.0], [0.0, 0.0])], &spec, 0).unwrap();
        assert!(f.is_empty());
        let bad = rasterize_frame(&[obs(1, 0.0, [f64::NAN, 5.0], [0.0, 0.0])], &spec, 0);
        assert!(bad.is_err());
    }

    #[test]
    fn mass_conserved_for_interior_pedestrians() {
        let spec = spec_36x12();
        let peds: Vec<_> = (0..7)
            .map(|k| obs(k, 0.0, [3.3 + 4.1 * k as f64, 2.2 + 0.9 * (k % 5) as f64], [0.3, -0.2]))
            .collect();
        for p in &peds {
            assert!(p.pos[0] > 1.0 && p.pos[0] < 35.0 && p.pos[1] > 1.0 && p.pos[1] < 11.0);
        }
        let f = rasterize_frame(&peds, &spec, 0).unwrap();
        assert!((total_mass(&f) - 7.0).abs() < 1e-9);
    }

    #[test]
    fn walker_advances_one_column_per_frame() {
        let spec = spec_36x12();
        let samples: Vec<_> = (0..5).map(|t| obs(7, t as f64, [5.5 + t as f64, 6.5], [1.0, 0.0])).collect();
        let traj = Trajectory { pid: 7, samples };
        let seq = rasterize_sequence(&[traj], &spec, 0.0, 5).unwrap();
        for (f, frame) in seq.frames.iter().enumerate() {
            assert_relative_eq!(frame.cell(6, 5 + f).rho, 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn rasterize_sequence_is_deterministic_and_validates() {
        let spec = spec_36x12();
        let traj = Trajectory {
            pid: 1,
            samples: vec![obs(1, 0.2, [4.0, 4.0], [1.0, 0.0]), obs(1, 0.7, [4.5, 4.0], [1.0, 0.0])],
        };
        let a = rasterize_sequence(std::slice::from_ref(&traj), &spec, 0.0, 3).unwrap();
        let b = rasterize_sequence(std::slice::from_ref(&traj), &spec, 0.0, 3).unwrap();
        assert_eq!(a, b);
        assert!(rasterize_sequence(&[], &spec, 0.0, 0).is_err());
        // Two samples in frame 0: the later one (at x = 4.5) wins.
        assert_relative_eq!(total_mass(&a.frames[0]), 1.0, max_relative = 1e-12);
        assert_relative_eq!(a.frames[0].cell(3, 4).rho, 0.5, max_relative = 1e-12);
    }

    #[test]
    fn entirely_outside_trajectories_rasterize_to_zero() {
        let spec = spec_36x12();
        let traj = Trajectory {
            pid: 1,
            samples: vec![obs(1, 0.0, [-5.0, -5.0], [1.0, 0.0]), obs(1, 1.0, [-4.0, -5.0], [1.0, 0.0])],
        };
        let seq = rasterize_sequence(&[traj], &spec, 0.0, 2).unwrap();
        assert!(seq.frames.iter().all(|f| f.is_empty()));
    }

    #[test]
    fn sample_field_identities() {
        let spec = spec_36x12();
        let mut f0 = CrowdField::zeros(spec.clone(), 0);
        f0.cell_mut(6, 10).rho = 0.2;
        f0.cell_mut(6, 10).mu_v = [1.0, -0.5];
        let mut f1 = CrowdField::zeros(spec.clone(), 1);
        f1.cell_mut(6, 10).rho = 0.4;
        let seq = FieldSequence::new(spec.clone(), vec![f0, f1], 0.0).unwrap();

        // Exactly at a cell center at a frame time.
        let c = sample_field(&seq, [10.5, 6.5], 0.0).unwrap();
        assert_eq!(c.rho, 0.2);
        assert_eq!(c.mu_v, [1.0, -0.5]);

        // Midway between cell centers (10,6) and (11,6): rho 0.2 and 0.
        let c = sample_field(&seq, [11.0, 6.5], 0.0).unwrap();
        assert_relative_eq!(c.rho, 0.1, max_relative = 1e-12);

        // Halfway between frames: 0.2 and 0.4 interpolate to 0.3.
        let c = sample_field(&seq, [10.5, 6.5], 0.5).unwrap();
        assert_relative_eq!(c.rho, 0.3, max_relative = 1e-12);

        // Hold-last beyond the final frame.
        let c = sample_field(&seq, [10.5, 6.5], 9.0).unwrap();
        assert_relative_eq!(c.rho, 0.4, max_relative = 1e-12);

        assert!(sample_field(&seq, [-1.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn total_mass_is_linear_in_rho() {
        let spec = spec_36x12();
        let f = rasterize_frame(&[obs(1, 0.0, [10.2, 6.7], [1.0, 0.0])], &spec, 0).unwrap();
        let mut doubled = f.clone();
        for c in &mut doubled.cells {
            c.rho *= 2.0;
        }
        assert_relative_eq!(total_mass(&doubled), 2.0 * total_mass(&f), max_relative = 1e-12);
    }

    #[test]
    fn translation_by_one_cell_shifts_field() {
        let spec = spec_36x12();
        let base: Vec<_> = (0..5)
            .map(|k| obs(k, 0.0, [7.3 + 2.0 * k as f64, 3.1 + 1.3 * k as f64], [0.5, 0.1 * k as f64]))
            .collect();
        let shifted: Vec<_> = base
            .iter()
            .map(|o| PedObservation { pos: [o.pos[0] + 1.0, o.pos[1]], ..*o })
            .collect();
        let fa = rasterize_frame(&base, &spec, 0).unwrap();
        let fb = rasterize_frame(&shifted, &spec, 0).unwrap();
        for i in 0..12 {
            for j in 0..34 {
                let a = fa.cell(i, j);
                let b = fb.cell(i, j + 1);
                assert_relative_eq!(a.rho, b.rho, epsilon = 1e-12);
                assert_relative_eq!(a.mu_v[0], b.mu_v[0], epsilon = 1e-12);
                assert_relative_eq!(a.sigma2_v, b.sigma2_v, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn sample_field_is_continuous() {
        let spec = spec_36x12();
        let f = rasterize_frame(
            &[obs(1, 0.0, [10.3, 6.1], [1.0, 0.0]), obs(2, 0.0, [11.0, 6.5], [0.0, 1.0])],
            &spec,
            0,
        )
        .unwrap();
        let seq = FieldSequence::new(spec, vec![f], 0.0).unwrap();
        // Probe across cell boundaries, including the exact boundary line.
        for step in 0..200 {
            let x = 9.0 + step as f64 * 0.02;
            let a = sample_field(&seq, [x, 6.2], 0.0).unwrap();
            let b = sample_field(&seq, [x + 1e-6, 6.2], 0.0).unwrap();
            assert!((a.rho - b.rho).abs() < 1e-3);
        }
    }
}
