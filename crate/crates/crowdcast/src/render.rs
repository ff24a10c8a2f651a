//! Field and plan rendering to portable pixmaps (binary PPM, one image per
//! frame): density as blue shading, mean velocity as black segments from
//! cell centers, velocity variance as red circles, and plan waypoints
//! overlaid as colored paths with a marker at the frame time.

use std::io::Write;

use crate::error::Result;
use crate::grid::{CrowdField, FieldSequence};
use crate::invasive::RobotState;

pub const PATH_PRIMARY: [u8; 3] = [0, 150, 40]; // green
pub const PATH_REFERENCE: [u8; 3] = [0, 0, 0]; // black

/// Simple RGB framebuffer.
pub struct Image {
    pub width: usize,
    pub height: usize,
    rgb: Vec<u8>,
}

impl Image {
    fn blank(width: usize, height: usize) -> Self {
        Self { width, height, rgb: vec![255; width * height * 3] }
    }

    fn put(&mut self, x: i64, y: i64, color: [u8; 3]) {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return;
        }
        let at = (y as usize * self.width + x as usize) * 3;
        self.rgb[at..at + 3].copy_from_slice(&color);
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let at = (y * self.width + x) * 3;
        [self.rgb[at], self.rgb[at + 1], self.rgb[at + 2]]
    }

    fn line(&mut self, a: [f64; 2], b: [f64; 2], color: [u8; 3]) {
        let steps = ((b[0] - a[0]).abs().max((b[1] - a[1]).abs()).ceil() as usize).max(1);
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let x = a[0] + t * (b[0] - a[0]);
            let y = a[1] + t * (b[1] - a[1]);
            self.put(x.round() as i64, y.round() as i64, color);
        }
    }

    fn circle(&mut self, center: [f64; 2], radius: f64, color: [u8; 3]) {
        let n = ((2.0 * std::f64::consts::PI * radius).ceil() as usize).max(8);
        for s in 0..n {
            let a = 2.0 * std::f64::consts::PI * s as f64 / n as f64;
            self.put(
                (center[0] + radius * a.cos()).round() as i64,
                (center[1] + radius * a.sin()).round() as i64,
                color,
            );
        }
    }

    fn blob(&mut self, center: [f64; 2], half: i64, color: [u8; 3]) {
        for dy in -half..=half {
            for dx in -half..=half {
                self.put(center[0].round() as i64 + dx, center[1].round() as i64 + dy, color);
            }
        }
    }

    /// Binary PPM (P6).
    pub fn write_ppm<W: Write>(&self, w: &mut W) -> Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.rgb)?;
        Ok(())
    }
}

/// Rendering parameters.
#[derive(Debug, Clone)]
pub struct RenderOptions {
    /// Pixels per grid cell.
    pub scale: usize,
    /// Density mapped to full blue; defaults to the sequence maximum.
    pub rho_max: Option<f64>,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { scale: 16, rho_max: None }
    }
}

/// A plan polyline to overlay.
pub struct PlanOverlay<'a> {
    pub waypoints: &'a [RobotState],
    pub color: [u8; 3],
}

fn world_to_px(frame: &CrowdField, scale: usize, pos: [f64; 2]) -> [f64; 2] {
    let spec = &frame.spec;
    let px = (pos[0] - spec.origin[0]) / spec.cell_size * scale as f64;
    // Row 0 is the bottom of the world; image rows grow downward.
    let py = (spec.height as f64 - (pos[1] - spec.origin[1]) / spec.cell_size) * scale as f64;
    [px, py]
}

/// Renders one frame with its overlays; `time` positions the plan markers.
pub fn render_frame(frame: &CrowdField, opts: &RenderOptions, overlays: &[PlanOverlay], time: f64) -> Image {
    let spec = &frame.spec;
    let s = opts.scale.max(2);
    let mut img = Image::blank(spec.width * s, spec.height * s);

    let rho_max = opts
        .rho_max
        .unwrap_or_else(|| frame.cells.iter().map(|c| c.rho).fold(0.0, f64::max))
        .max(1e-9);

    // Density shading, white → blue.
    for i in 0..spec.height {
        for j in 0..spec.width {
            let c = frame.cell(i, j);
            if c.rho <= 0.0 {
                continue;
            }
            let b = (255.0 * (c.rho / rho_max).min(1.0)) as u8;
            let color = [255 - b, 255 - b, 255];
            let (px0, py0) = (j * s, (spec.height - 1 - i) * s);
            for py in py0..py0 + s {
                for px in px0..px0 + s {
                    img.put(px as i64, py as i64, color);
                }
            }
        }
    }

    // Variance circles and velocity segments from cell centers.
    for i in 0..spec.height {
        for j in 0..spec.width {
            let c = frame.cell(i, j);
            if c.rho <= 0.0 {
                continue;
            }
            let center = world_to_px(frame, s, spec.cell_center(i, j));
            if c.sigma2_v > 0.0 {
                let radius = c.sigma2_v.sqrt() / spec.cell_size * s as f64 * 0.5;
                img.circle(center, radius.min(s as f64), [220, 0, 0]);
            }
            let speed2 = c.mu_v[0] * c.mu_v[0] + c.mu_v[1] * c.mu_v[1];
            if speed2 > 1e-12 {
                let tip = [
                    center[0] + c.mu_v[0] * s as f64 * 0.45,
                    center[1] - c.mu_v[1] * s as f64 * 0.45,
                ];
                img.line(center, tip, [0, 0, 0]);
            }
        }
    }

    for overlay in overlays {
        for pair in overlay.waypoints.windows(2) {
            img.line(
                world_to_px(frame, s, pair[0].pos),
                world_to_px(frame, s, pair[1].pos),
                overlay.color,
            );
        }
        // Marker at the robot's position at this frame's time.
        if let Some(pos) = position_at(overlay.waypoints, time) {
            img.blob(world_to_px(frame, s, pos), (s / 4).max(2) as i64, overlay.color);
        }
    }
    img
}

/// Interpolates a waypoint chain at `time`; None outside its span.
fn position_at(waypoints: &[RobotState], time: f64) -> Option<[f64; 2]> {
    let first = waypoints.first()?;
    if time < first.time {
        return None;
    }
    for pair in waypoints.windows(2) {
        if time <= pair[1].time {
            let dt = pair[1].time - pair[0].time;
            let f = if dt > 0.0 { (time - pair[0].time) / dt } else { 0.0 };
            return Some([
                pair[0].pos[0] + f * (pair[1].pos[0] - pair[0].pos[0]),
                pair[0].pos[1] + f * (pair[1].pos[1] - pair[0].pos[1]),
            ]);
        }
    }
    waypoints.last().map(|w| w.pos)
}

/// Renders every frame of a sequence.
pub fn render_sequence(seq: &FieldSequence, opts: &RenderOptions, overlays: &[PlanOverlay]) -> Vec<Image> {
    // A shared density scale keeps shading comparable across frames.
    let rho_max = opts.rho_max.unwrap_or_else(|| {
        seq.frames
            .iter()
            .flat_map(|f| f.cells.iter().map(|c| c.rho))
            .fold(0.0, f64::max)
    });
    let opts = RenderOptions { rho_max: Some(rho_max), ..opts.clone() };
    seq.frames
        .iter()
        .enumerate()
        .map(|(i, f)| render_frame(f, &opts, overlays, seq.frame_time(i)))
        .collect()
}
