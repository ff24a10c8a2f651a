//! Non-learned comparison predictors.

use crate::error::{Error, Result};
use crate::grid::{CellState, CrowdField, FieldSequence};

use super::Predictor;

/// Repeats the last observed frame tau times.
pub struct Persistence;

impl Predictor for Persistence {
    fn predict(&self, input: &FieldSequence, tau: usize) -> Result<FieldSequence> {
        let last = input
            .frames
            .last()
            .ok_or_else(|| Error::InvalidConfig("persistence needs at least one input frame".into()))?;
        let frames = (0..tau)
            .map(|i| CrowdField {
                spec: last.spec.clone(),
                cells: last.cells.clone(),
                frame_index: last.frame_index + 1 + i as i64,
            })
            .collect();
        FieldSequence::new(input.spec.clone(), frames, input.t0 + input.len() as f64 * input.spec.frame_dt)
    }

    fn name(&self) -> &'static str {
        "persistence"
    }
}

/// Transports the crowd fields by their own mean velocity, one frame step at
/// a time, applied recursively from the last observed frame.
///
/// Each occupied cell's mass is carried to `center + mu_v·dt` and bilinearly
/// splatted there, with the velocity and variance combined as first and
/// second moments of the arriving mass (the same splat the rasterizer uses).
/// A destination-side backtrace cannot do this job here: empty cells carry
/// zero velocity by convention, so a gather would starve the crowd's leading
/// edge and bleed mass. Mass pushed outside the grid leaves the domain.
pub struct Advection;

fn advect_step(prev: &CrowdField, frame_index: i64) -> CrowdField {
    let spec = &prev.spec;
    let dt = spec.frame_dt;
    let (h, w) = (spec.height, spec.width);
    let mut wsum = vec![0.0f64; h * w];
    let mut wv = vec![[0.0f64; 2]; h * w];
    let mut wv2 = vec![0.0f64; h * w];

    let area = spec.cell_area();
    for i in 0..h {
        for j in 0..w {
            let c = prev.cell(i, j);
            if c.rho <= 0.0 {
                continue;
            }
            let mass = c.rho * area;
            let center = spec.cell_center(i, j);
            let dest = [center[0] + c.mu_v[0] * dt, center[1] + c.mu_v[1] * dt];
            // Second moment of the cell's velocity distribution.
            let second = c.sigma2_v + c.mu_v[0] * c.mu_v[0] + c.mu_v[1] * c.mu_v[1];
            for (di, dj, wt) in crate::grid::splat(spec, dest) {
                if di < 0 || dj < 0 || di >= h as i64 || dj >= w as i64 || wt == 0.0 {
                    continue;
                }
                let idx = di as usize * w + dj as usize;
                let m = wt * mass;
                wsum[idx] += m;
                wv[idx][0] += m * c.mu_v[0];
                wv[idx][1] += m * c.mu_v[1];
                wv2[idx] += m * second;
            }
        }
    }

    let mut next = CrowdField::zeros(spec.clone(), frame_index);
    for (idx, cell) in next.cells.iter_mut().enumerate() {
        if wsum[idx] > 0.0 {
            let mu = [wv[idx][0] / wsum[idx], wv[idx][1] / wsum[idx]];
            *cell = CellState {
                rho: wsum[idx] / area,
                mu_v: mu,
                sigma2_v: (wv2[idx] / wsum[idx] - (mu[0] * mu[0] + mu[1] * mu[1])).max(0.0),
            };
        }
    }
    next
}

impl Predictor for Advection {
    fn predict(&self, input: &FieldSequence, tau: usize) -> Result<FieldSequence> {
        let last = input
            .frames
            .last()
            .ok_or_else(|| Error::InvalidConfig("advection needs at least one input frame".into()))?;
        let mut frames = Vec::with_capacity(tau);
        let mut cur = last.clone();
        for i in 0..tau {
            cur = advect_step(&cur, last.frame_index + 1 + i as i64);
            frames.push(cur.clone());
        }
        FieldSequence::new(input.spec.clone(), frames, input.t0 + input.len() as f64 * input.spec.frame_dt)
    }

    fn name(&self) -> &'static str {
        "advection"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{total_mass, GridSpec};

    fn spec() -> GridSpec {
        GridSpec::new([0.0, 0.0], 1.0, 12, 36, 1.0).unwrap()
    }

    fn blob_field(center_col: usize, vel: [f64; 2]) -> CrowdField {
        let mut f = CrowdField::zeros(spec(), 0);
        for di in 0..3 {
            for dj in 0..3 {
                let c = f.cell_mut(4 + di, center_col + dj);
                c.rho = 1.0 + (di + dj) as f64 * 0.25;
                c.mu_v = vel;
                c.sigma2_v = 0.1;
            }
        }
        f
    }

    #[test]
    fn zero_velocity_advection_matches_persistence() {
        let f = blob_field(10, [0.0, 0.0]);
        let input = FieldSequence::new(spec(), vec![f], 0.0).unwrap();
        let a = Advection.predict(&input, 3).unwrap();
        let p = Persistence.predict(&input, 3).unwrap();
        for (fa, fp) in a.frames.iter().zip(&p.frames) {
            for (ca, cp) in fa.cells.iter().zip(&fp.cells) {
                assert!((ca.rho - cp.rho).abs() < 1e-12);
                assert!((ca.mu_v[0] - cp.mu_v[0]).abs() < 1e-12);
                assert!((ca.sigma2_v - cp.sigma2_v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_velocity_translates_one_column_per_frame() {
        let f = blob_field(10, [1.0, 0.0]);
        let mass0 = total_mass(&f);
        let input = FieldSequence::new(spec(), vec![f.clone()], 0.0).unwrap();
        let out = Advection.predict(&input, 3).unwrap();
        for (step, frame) in out.frames.iter().enumerate() {
            // Exact integer-cell translation of the bilinear sampling.
            for di in 0..3 {
                for dj in 0..3 {
                    let want = f.cell(4 + di, 10 + dj).rho;
                    let got = frame.cell(4 + di, 10 + dj + step + 1).rho;
                    assert!((want - got).abs() < 1e-12);
                }
            }
            assert!((total_mass(frame) - mass0).abs() < 1e-6, "mass drifted at step {step}");
        }
    }

    #[test]
    fn predictions_preserve_spec_and_signs() {
        let f = blob_field(30, [1.3, 0.4]);
        let input = FieldSequence::new(spec(), vec![f], 0.0).unwrap();
        for p in [&Advection as &dyn Predictor, &Persistence] {
            let out = p.predict(&input, 12).unwrap();
            assert_eq!(out.spec, input.spec);
            assert_eq!(out.len(), 12);
            for fr in &out.frames {
                for c in &fr.cells {
                    assert!(c.rho >= 0.0 && c.sigma2_v >= 0.0);
                    if c.rho == 0.0 {
                        assert_eq!(c.mu_v, [0.0, 0.0]);
                        assert_eq!(c.sigma2_v, 0.0);
                    }
                }
            }
        }
    }
}
