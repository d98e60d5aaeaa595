//! Hemispherical phased array: element layout, pose and tilt search.
//!
//! 1024 sites are laid out on a Fibonacci spiral over the upper hemisphere
//! (site 0 at the pole, heights `1 - i/1024`), 34 of them (every 30th index)
//! are disabled, leaving 990 active emitters. The assembly is rotated about
//! the focus by `tilt_x` around x, then `tilt_y` around y.

use std::io::Write;

use nalgebra::{Rotation3, Unit as UnitVec, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::WorldPoint;

pub const SITE_COUNT: usize = 1024;
pub const DISABLED_STRIDE: usize = 30;
pub const LAST_DISABLED: usize = 990;
pub const ENABLED_COUNT: usize = 990;
pub const MAX_TILT_DEG: f64 = 10.0;
pub const DEFAULT_RADIUS_MM: f64 = 150.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub index: usize,
    pub position: WorldPoint,
    /// Unit vector from the element towards the focus.
    pub inward_normal: Vector3<f64>,
    pub enabled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub focus: WorldPoint,
    pub tilt_x: f64,
    pub tilt_y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransducerArray {
    radius: f64,
    elements: Vec<Element>,
    pose: Pose,
}

pub fn check_tilt(tilt_x: f64, tilt_y: f64) -> Result<()> {
    let ok = |t: f64| t.is_finite() && t.abs() <= MAX_TILT_DEG + 1e-12;
    if ok(tilt_x) && ok(tilt_y) {
        Ok(())
    } else {
        Err(Error::TiltOutOfBounds { tilt_x, tilt_y })
    }
}

/// Sites 0, 30, …, 990 are disabled (34 of them).
fn site_enabled(i: usize) -> bool {
    i % DISABLED_STRIDE != 0 || i > LAST_DISABLED
}

/// Unit direction of spiral site `i` in the array frame (pole = +z).
pub fn site_direction(i: usize) -> Vector3<f64> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let z = 1.0 - i as f64 / SITE_COUNT as f64;
    let rho = (1.0 - z * z).max(0.0).sqrt();
    let phi = golden * i as f64;
    Vector3::new(rho * phi.cos(), rho * phi.sin(), z)
}

pub fn tilt_rotation(tilt_x: f64, tilt_y: f64) -> Rotation3<f64> {
    let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), tilt_x.to_radians());
    let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), tilt_y.to_radians());
    ry * rx
}

pub fn build_array(radius: f64, focus: WorldPoint, tilt_x: f64, tilt_y: f64) -> Result<TransducerArray> {
    check_tilt(tilt_x, tilt_y)?;
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidParameter(format!("array radius must be positive, got {radius}")));
    }
    if !focus.iter().all(|c| c.is_finite()) {
        return Err(Error::InvalidParameter("focus must be finite".into()));
    }
    let rot = tilt_rotation(tilt_x, tilt_y);
    let elements = (0..SITE_COUNT)
        .map(|i| {
            let dir = UnitVec::new_normalize(rot * site_direction(i));
            Element {
                index: i,
                position: focus + dir.into_inner() * radius,
                inward_normal: -dir.into_inner(),
                enabled: site_enabled(i),
            }
        })
        .collect();
    Ok(TransducerArray {
        radius,
        elements,
        pose: Pose { focus, tilt_x, tilt_y },
    })
}

impl TransducerArray {
    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn pose(&self) -> Pose {
        self.pose
    }

    pub fn focus(&self) -> WorldPoint {
        self.pose.focus
    }

    /// All 1024 sites, including disabled ones.
    pub fn sites(&self) -> &[Element] {
        &self.elements
    }

    pub fn enabled(&self) -> impl Iterator<Item = &Element> + '_ {
        self.elements.iter().filter(|e| e.enabled)
    }

    pub fn enabled_count(&self) -> usize {
        self.enabled().count()
    }

    /// CSV export: `index,x,y,z,enabled`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "index,x,y,z,enabled")?;
        for e in &self.elements {
            writeln!(
                w,
                "{},{:.6},{:.6},{:.6},{}",
                e.index,
                e.position.x,
                e.position.y,
                e.position.z,
                u8::from(e.enabled)
            )?;
        }
        Ok(())
    }
}

/// Best pose found by [`optimize_tilt`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TiltOptimum {
    pub tilt_x: f64,
    pub tilt_y: f64,
    pub nae: usize,
}

/// Tilt values `-10, -10 + step, ..., +10` (the upper bound included when reachable).
pub fn tilt_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidParameter(format!("tilt step must be positive, got {step}")));
    }
    let n = (2.0 * MAX_TILT_DEG / step + 1e-9).floor() as usize;
    Ok((0..=n)
        .map(|i| {
            let t = -MAX_TILT_DEG + i as f64 * step;
            // snap the accumulated value onto the exact bound / zero
            if (t - MAX_TILT_DEG).abs() < 1e-9 {
                MAX_TILT_DEG
            } else if t.abs() < 1e-9 {
                0.0
            } else {
                t
            }
        })
        .collect())
}

/// Exhaustive search over the tilt grid for the pose with most active
/// elements. Ties: smallest tilt magnitude, then smaller `tilt_x`, then `tilt_y`.
pub fn optimize_tilt<B, E>(build: B, evaluate: E, step: f64) -> Result<TiltOptimum>
where
    B: Fn(f64, f64) -> Result<TransducerArray> + Sync,
    E: Fn(&TransducerArray) -> Result<usize> + Sync,
{
    let axis = tilt_grid(step)?;
    let poses: Vec<(f64, f64)> = axis
        .iter()
        .flat_map(|&tx| axis.iter().map(move |&ty| (tx, ty)))
        .collect();
    let scored: Vec<Result<TiltOptimum>> = poses
        .par_iter()
        .map(|&(tx, ty)| {
            let array = build(tx, ty)?;
            Ok(TiltOptimum {
                tilt_x: tx,
                tilt_y: ty,
                nae: evaluate(&array)?,
            })
        })
        .collect();
    let mut best: Option<TiltOptimum> = None;
    for s in scored {
        let s = s?;
        best = Some(match best {
            None => s,
            Some(b) if better(&s, &b) => s,
            Some(b) => b,
        });
    }
    best.ok_or_else(|| Error::InvalidParameter("empty tilt grid".into()))
}

fn better(a: &TiltOptimum, b: &TiltOptimum) -> bool {
    if a.nae != b.nae {
        return a.nae > b.nae;
    }
    let na = a.tilt_x.hypot(a.tilt_y);
    let nb = b.tilt_x.hypot(b.tilt_y);
    if (na - nb).abs() > 1e-12 {
        return na < nb;
    }
    if a.tilt_x != b.tilt_x {
        return a.tilt_x < b.tilt_x;
    }
    a.tilt_y < b.tilt_y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pole_geometry() {
        let f = WorldPoint::new(10.0, -5.0, 3.0);
        let a = build_array(150.0, f, 0.0, 0.0).unwrap();
        let pole = &a.sites()[0];
        assert!((pole.position - (f + Vector3::new(0.0, 0.0, 150.0))).norm() < 1e-12);
        assert!((pole.inward_normal - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
    }

    #[test]
    fn enabled_sites_are_990() {
        for (tx, ty) in [(0.0, 0.0), (10.0, -10.0), (-3.5, 7.25)] {
            let a = build_array(150.0, WorldPoint::origin(), tx, ty).unwrap();
            assert_eq!(a.sites().len(), SITE_COUNT);
            assert_eq!(a.enabled_count(), ENABLED_COUNT);
            let disabled: Vec<usize> = a.sites().iter().filter(|e| !e.enabled).map(|e| e.index).collect();
            assert_eq!(disabled, (0..=990).step_by(30).collect::<Vec<_>>());
        }
    }

    #[test]
    fn tilted_elements_stay_on_sphere() {
        let f = WorldPoint::new(-20.0, 12.0, 40.0);
        let a = build_array(150.0, f, 9.0, -7.0).unwrap();
        for e in a.enabled() {
            assert!(((e.position - f).norm() - 150.0).abs() < 1e-6);
            assert!((e.inward_normal.norm() - 1.0).abs() < 1e-12);
            let to_focus = (f - e.position).normalize();
            assert!((to_focus - e.inward_normal).norm() < 1e-9);
        }
    }

    #[test]
    fn tilt_bound_enforced() {
        assert!(matches!(
            build_array(150.0, WorldPoint::origin(), 10.5, 0.0),
            Err(Error::TiltOutOfBounds { .. })
        ));
        assert!(build_array(150.0, WorldPoint::origin(), -10.0, 10.0).is_ok());
    }

    #[test]
    fn rotation_order_is_x_then_y() {
        let a = build_array(100.0, WorldPoint::origin(), 10.0, 0.0).unwrap();
        let b = build_array(100.0, WorldPoint::origin(), 0.0, 10.0).unwrap();
        // tilt_x rotates the pole toward -y, tilt_y toward +x
        assert!(a.sites()[0].position.y < -17.0);
        assert!(b.sites()[0].position.x > 17.0);
        let c = build_array(100.0, WorldPoint::origin(), 10.0, 10.0).unwrap();
        let expect = tilt_rotation(0.0, 10.0) * (tilt_rotation(10.0, 0.0) * Vector3::new(0.0, 0.0, 100.0));
        assert!((c.sites()[0].position.coords - expect).norm() < 1e-9);
    }

    #[test]
    fn build_is_deterministic() {
        let a = build_array(150.0, WorldPoint::new(1.0, 2.0, 3.0), 4.0, -2.0).unwrap();
        let b = build_array(150.0, WorldPoint::new(1.0, 2.0, 3.0), 4.0, -2.0).unwrap();
        for (x, y) in a.sites().iter().zip(b.sites()) {
            assert_eq!(x.position.coords.as_slice(), y.position.coords.as_slice());
        }
    }

    #[test]
    fn sites_are_well_separated() {
        let dirs: Vec<_> = (0..SITE_COUNT).map(site_direction).collect();
        let mut min_angle = f64::INFINITY;
        for i in 0..dirs.len() {
            for j in i + 1..dirs.len() {
                let c = dirs[i].dot(&dirs[j]).clamp(-1.0, 1.0);
                min_angle = min_angle.min(c.acos().to_degrees());
            }
        }
        assert!(min_angle > 2.0, "min separation {min_angle}°");
        assert!(dirs.iter().all(|d| d.z > 0.0));
    }

    #[test]
    fn tilt_grid_covers_bounds() {
        let g = tilt_grid(1.0).unwrap();
        assert_eq!(g.len(), 21);
        assert_eq!(g[0], -10.0);
        assert_eq!(g[10], 0.0);
        assert_eq!(g[20], 10.0);
        assert_eq!(tilt_grid(0.5).unwrap().len(), 41);
        assert!(tilt_grid(0.0).is_err());
    }

    #[test]
    fn constant_evaluator_ties_to_zero_tilt() {
        let best = optimize_tilt(
            |tx, ty| build_array(50.0, WorldPoint::origin(), tx, ty),
            |_| Ok(500),
            1.0,
        )
        .unwrap();
        assert_eq!((best.tilt_x, best.tilt_y, best.nae), (0.0, 0.0, 500));
    }

    #[test]
    fn optimizer_finds_unique_peak() {
        let best = optimize_tilt(
            |tx, ty| build_array(50.0, WorldPoint::origin(), tx, ty),
            |a| {
                let p = a.pose();
                Ok((1000.0 - (p.tilt_x - 4.0).powi(2) - (p.tilt_y + 6.0).powi(2)) as usize)
            },
            1.0,
        )
        .unwrap();
        assert_eq!((best.tilt_x, best.tilt_y), (4.0, -6.0));
    }

    #[test]
    fn tie_break_prefers_smaller_tilt_x_at_equal_norm() {
        let best = optimize_tilt(
            |tx, ty| build_array(50.0, WorldPoint::origin(), tx, ty),
            |a| {
                let p = a.pose();
                Ok(if p.tilt_x.hypot(p.tilt_y) == 5.0 { 10 } else { 1 })
            },
            1.0,
        )
        .unwrap();
        assert_eq!((best.tilt_x, best.tilt_y), (-5.0, 0.0));
    }

    #[test]
    fn evaluator_errors_propagate() {
        let r = optimize_tilt(
            |tx, ty| build_array(50.0, WorldPoint::origin(), tx, ty),
            |_| Err(Error::EmptyMask),
            5.0,
        );
        assert!(matches!(r, Err(Error::EmptyMask)));
    }

    #[test]
    fn csv_export() {
        let a = build_array(150.0, WorldPoint::origin(), 0.0, 0.0).unwrap();
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1025);
        assert_eq!(lines[0], "index,x,y,z,enabled");
        assert_eq!(lines[1], "0,0.000000,0.000000,150.000000,0");
        assert!(lines[2].ends_with(",1"));
    }
}
