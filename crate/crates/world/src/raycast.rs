//! Pinhole depth camera built from closed-form ray intersections.

use crd_vision::DepthImage;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WorldError};
use crate::geometry::{body_to_world, Vec3};
use crate::scenario::{Heightfield, Obstacle, ScenarioSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    pub height: usize,
    pub width: usize,
    /// Horizontal field of view, degrees.
    pub hfov_deg: f64,
    pub max_range: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            height: 64,
            width: 64,
            hfov_deg: 90.0,
            max_range: 20.0,
        }
    }
}

impl SensorConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.height.is_power_of_two() || !self.width.is_power_of_two() {
            return Err(WorldError::Config(format!(
                "sensor size {}x{} must be powers of two",
                self.height, self.width
            )));
        }
        if !(self.hfov_deg > 0.0 && self.hfov_deg < 180.0) {
            return Err(WorldError::Config(format!("hfov {} out of (0, 180)", self.hfov_deg)));
        }
        if !(self.max_range > 0.0 && self.max_range.is_finite()) {
            return Err(WorldError::Config("max_range must be positive".into()));
        }
        Ok(())
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        (self.width as f64 / 2.0) / (self.hfov_deg.to_radians() / 2.0).tan()
    }

    /// Unit ray direction in the body frame (forward, left, up) for a pixel.
    /// Pixel `(height/2, width/2)` looks straight ahead.
    pub fn body_direction(&self, row: usize, col: usize) -> Vec3 {
        let f = self.focal();
        let left = (self.width as f64 / 2.0 - col as f64) / f;
        let up = (self.height as f64 / 2.0 - row as f64) / f;
        Vec3::new(1.0, left, up).normalized()
    }
}

/// Interval of ray parameters inside a solid, trimmed to `t >= 0`.
fn enter(interval: Option<(f64, f64)>) -> Option<f64> {
    let (t0, t1) = interval?;
    if t1 < 0.0 || t0 > t1 {
        None
    } else {
        Some(t0.max(0.0))
    }
}

fn slab(o: f64, d: f64, lo: f64, hi: f64) -> Option<(f64, f64)> {
    if d == 0.0 {
        return (lo..=hi).contains(&o).then_some((f64::NEG_INFINITY, f64::INFINITY));
    }
    let (a, b) = ((lo - o) / d, (hi - o) / d);
    Some((a.min(b), a.max(b)))
}

fn intersect(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    (a.0.max(b.0), a.1.min(b.1))
}

/// Roots of `a t^2 + 2 b t + c = 0` as an interval, if real.
fn quadratic(a: f64, b: f64, c: f64) -> Option<(f64, f64)> {
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    // numerically stable pairing
    let q = if b > 0.0 { -b - s } else { -b + s };
    if q == 0.0 {
        return Some((0.0, 0.0));
    }
    let (r0, r1) = (q / a, c / q);
    Some((r0.min(r1), r0.max(r1)))
}

/// Distance along unit `d` to a vertical cylinder on z = 0, or `None`.
pub fn ray_cylinder(o: Vec3, d: Vec3, cx: f64, cy: f64, radius: f64, height: f64) -> Option<f64> {
    let (px, py) = (o.x - cx, o.y - cy);
    let a = d.x * d.x + d.y * d.y;
    let c = px * px + py * py - radius * radius;
    let radial = if a == 0.0 {
        (c <= 0.0).then_some((f64::NEG_INFINITY, f64::INFINITY))
    } else {
        quadratic(a, px * d.x + py * d.y, c)
    };
    let vertical = slab(o.z, d.z, 0.0, height)?;
    enter(radial.map(|r| intersect(r, vertical)))
}

pub fn ray_box(o: Vec3, d: Vec3, center: Vec3, half: Vec3) -> Option<f64> {
    let x = slab(o.x, d.x, center.x - half.x, center.x + half.x)?;
    let y = slab(o.y, d.y, center.y - half.y, center.y + half.y)?;
    let z = slab(o.z, d.z, center.z - half.z, center.z + half.z)?;
    enter(Some(intersect(intersect(x, y), z)))
}

pub fn ray_sphere(o: Vec3, d: Vec3, center: Vec3, radius: f64) -> Option<f64> {
    let p = o - center;
    enter(quadratic(d.dot(d), p.dot(d), p.dot(p) - radius * radius))
}

pub fn ray_obstacle(o: Vec3, d: Vec3, obstacle: &Obstacle) -> Option<f64> {
    match *obstacle {
        Obstacle::Cylinder {
            center_x,
            center_y,
            radius,
            height,
        } => ray_cylinder(o, d, center_x, center_y, radius, height),
        Obstacle::Box {
            center,
            half_extents,
        } => ray_box(o, d, center, half_extents),
    }
}

/// Per-field constants the march needs; computing them scans the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeightStats {
    pub min: f64,
    pub max: f64,
    pub slope: f64,
}

impl HeightStats {
    pub fn of(field: &Heightfield) -> Self {
        HeightStats {
            min: field.min_height(),
            max: field.max_height(),
            slope: field.max_slope(),
        }
    }
}

/// First ray parameter at which the ray meets the ground, up to `t_max`.
pub fn ray_heightfield(o: Vec3, d: Vec3, field: &Heightfield, t_max: f64) -> Option<f64> {
    march(o, d, field, &HeightStats::of(field), t_max)
}

/// Steps by clearance over the worst-case closing rate, so the march never
/// passes through the surface; the returned distance is at most the true one.
fn march(o: Vec3, d: Vec3, field: &Heightfield, stats: &HeightStats, t_max: f64) -> Option<f64> {
    let f = |t: f64| o.z + t * d.z - field.height_at(o.x + t * d.x, o.y + t * d.y);
    if f(0.0) <= 0.0 {
        return Some(0.0);
    }
    let top = stats.max;
    if stats.min == stats.max {
        if d.z >= 0.0 {
            return None;
        }
        let t = (top - o.z) / d.z;
        return (t <= t_max).then_some(t);
    }
    let mut t = 0.0;
    if o.z > top {
        if d.z >= 0.0 {
            return None;
        }
        t = (top - o.z) / d.z;
    }
    let closing = stats.slope * d.x.hypot(d.y) - d.z;
    if closing <= 0.0 {
        return None;
    }
    let min_step = 1e-2;
    while t <= t_max {
        let gap = f(t);
        if gap <= 1e-9 {
            return Some(t);
        }
        let z = o.z + t * d.z;
        if z > top && d.z >= 0.0 {
            return None;
        }
        let safe = gap / closing;
        if safe >= min_step {
            t += safe;
            continue;
        }
        let next = t + min_step;
        if f(next) > 0.0 {
            t = next;
            continue;
        }
        let (mut lo, mut hi) = (t, next);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        return (lo <= t_max).then_some(lo);
    }
    None
}

/// Everything a ray can hit: the scenario plus spheres of `sphere_radius`
/// around the other UAVs.
pub struct Scene<'a> {
    spec: &'a ScenarioSpec,
    others: &'a [Vec3],
    sphere_radius: f64,
    terrain: Option<HeightStats>,
}

impl<'a> Scene<'a> {
    pub fn new(spec: &'a ScenarioSpec, others: &'a [Vec3], sphere_radius: f64) -> Self {
        Scene {
            spec,
            others,
            sphere_radius,
            terrain: spec.terrain.as_ref().map(HeightStats::of),
        }
    }

    /// Nearest hit distance along unit `d`, up to `t_max`.
    pub fn cast(&self, o: Vec3, d: Vec3, t_max: f64) -> Option<f64> {
        let hits = self
            .spec
            .obstacles
            .iter()
            .map(|obstacle| ray_obstacle(o, d, obstacle))
            .chain(self.others.iter().map(|&c| ray_sphere(o, d, c, self.sphere_radius)));
        let best = hits.flatten().filter(|t| *t <= t_max).reduce(f64::min);
        let ground = match (&self.spec.terrain, &self.terrain) {
            (Some(field), Some(stats)) => march(o, d, field, stats, best.unwrap_or(t_max)),
            _ => None,
        };
        match (best, ground) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }
}

/// Depth image seen from `position` with heading `yaw`, level pitch.
/// Each pixel is the range to the nearest hit plus the scenario's surface
/// texture, clamped to `[0, max_range]`; rays that hit nothing read `max_range`.
pub fn render_depth(
    spec: &ScenarioSpec,
    sensor: &SensorConfig,
    position: Vec3,
    yaw: f64,
    others: &[Vec3],
    sphere_radius: f64,
) -> Result<DepthImage> {
    sensor.validate()?;
    let scene = Scene::new(spec, others, sphere_radius);
    let mut data = Vec::with_capacity(sensor.height * sensor.width);
    for row in 0..sensor.height {
        for col in 0..sensor.width {
            let d = body_to_world(sensor.body_direction(row, col), yaw);
            let depth = match scene.cast(position, d, sensor.max_range) {
                Some(t) => t + spec.texture.offset(position + d * t),
                None => sensor.max_range,
            };
            data.push(depth);
        }
    }
    Ok(DepthImage::from_clamped(
        sensor.height,
        sensor.width,
        sensor.max_range,
        &data,
    )?)
}
