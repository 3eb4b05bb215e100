//! Procedural scenario descriptions: bounds, terrain, obstacles and the
//! per-domain surface texture that shifts depth-image statistics.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WorldError};
use crate::geometry::{Aabb, Vec3};

/// Horizontal half-width of generated worlds, meters.
pub const WORLD_HALF_WIDTH: f64 = 20.0;
/// Ceiling of generated worlds, meters.
pub const WORLD_CEILING: f64 = 12.0;
/// Obstacle centres are drawn inside this radius around the origin.
pub const ARENA_RADIUS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Playground,
    Grassland,
    SnowMountain,
    Forest,
}

impl Domain {
    pub const ALL: [Domain; 4] = [
        Domain::Playground,
        Domain::Grassland,
        Domain::SnowMountain,
        Domain::Forest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Domain::Playground => "playground",
            Domain::Grassland => "grassland",
            Domain::SnowMountain => "snow_mountain",
            Domain::Forest => "forest",
        }
    }

    fn params(self) -> DomainParams {
        match self {
            Domain::Playground => DomainParams {
                count: 6,
                radius_range: [0.8, 1.5],
                height_range: [4.0, 8.0],
                roughness: 0.0,
                terrain_frequency: [0.0, 0.0],
                texture_amplitude: 0.05,
                texture_frequency: 0.5,
                boxes: false,
            },
            Domain::Grassland => DomainParams {
                count: 4,
                radius_range: [0.4, 1.0],
                height_range: [1.0, 3.0],
                roughness: 0.4,
                terrain_frequency: [0.1, 0.25],
                texture_amplitude: 0.15,
                texture_frequency: 2.0,
                boxes: true,
            },
            Domain::SnowMountain => DomainParams {
                count: 10,
                radius_range: [0.4, 1.0],
                height_range: [3.0, 7.0],
                roughness: 2.0,
                terrain_frequency: [0.25, 0.5],
                texture_amplitude: 0.5,
                texture_frequency: 1.5,
                boxes: false,
            },
            Domain::Forest => DomainParams {
                count: 40,
                radius_range: [0.15, 0.35],
                height_range: [6.0, 10.0],
                roughness: 0.0,
                terrain_frequency: [0.0, 0.0],
                texture_amplitude: 0.1,
                texture_frequency: 4.0,
                boxes: false,
            },
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Domain {
    type Err = WorldError;

    fn from_str(s: &str) -> Result<Self> {
        Domain::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| WorldError::Config(format!("unknown domain `{s}`")))
    }
}

struct DomainParams {
    count: usize,
    radius_range: [f64; 2],
    height_range: [f64; 2],
    roughness: f64,
    terrain_frequency: [f64; 2],
    texture_amplitude: f64,
    texture_frequency: f64,
    boxes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Obstacle {
    /// Vertical cylinder standing on z = 0.
    Cylinder {
        center_x: f64,
        center_y: f64,
        radius: f64,
        height: f64,
    },
    Box { center: Vec3, half_extents: Vec3 },
}

impl Obstacle {
    /// Signed distance from `p` to the surface (negative inside).
    pub fn signed_distance(&self, p: Vec3) -> f64 {
        match *self {
            Obstacle::Cylinder {
                center_x,
                center_y,
                radius,
                height,
            } => {
                let dr = (p.x - center_x).hypot(p.y - center_y) - radius;
                let dz = (p.z - height).max(-p.z);
                dr.max(dz).min(0.0) + dr.max(0.0).hypot(dz.max(0.0))
            }
            Obstacle::Box {
                center,
                half_extents,
            } => {
                let q = Vec3::new(
                    (p.x - center.x).abs() - half_extents.x,
                    (p.y - center.y).abs() - half_extents.y,
                    (p.z - center.z).abs() - half_extents.z,
                );
                let outside = Vec3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
                outside + q.x.max(q.y).max(q.z).min(0.0)
            }
        }
    }

    fn inside(&self, bounds: &Aabb) -> bool {
        match *self {
            Obstacle::Cylinder {
                center_x,
                center_y,
                radius,
                height,
            } => {
                radius > 0.0
                    && height > 0.0
                    && center_x - radius >= bounds.min.x
                    && center_x + radius <= bounds.max.x
                    && center_y - radius >= bounds.min.y
                    && center_y + radius <= bounds.max.y
                    && height <= bounds.max.z
                    && bounds.min.z <= 0.0
            }
            Obstacle::Box {
                center,
                half_extents: h,
            } => {
                h.x > 0.0
                    && h.y > 0.0
                    && h.z > 0.0
                    && bounds.contains(center - h)
                    && bounds.contains(center + h)
            }
        }
    }
}

/// Regular grid of ground heights with bilinear interpolation. Queries
/// outside the grid clamp to its edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Heightfield {
    pub origin_x: f64,
    pub origin_y: f64,
    pub cell: f64,
    pub nx: usize,
    pub ny: usize,
    /// Row-major by y: `heights[iy * nx + ix]`.
    pub heights: Vec<f64>,
}

impl Heightfield {
    pub fn flat(bounds: &Aabb, cell: f64) -> Self {
        let nx = ((bounds.max.x - bounds.min.x) / cell).round() as usize + 1;
        let ny = ((bounds.max.y - bounds.min.y) / cell).round() as usize + 1;
        Heightfield {
            origin_x: bounds.min.x,
            origin_y: bounds.min.y,
            cell,
            nx,
            ny,
            heights: vec![0.0; nx * ny],
        }
    }

    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        let fx = ((x - self.origin_x) / self.cell).clamp(0.0, (self.nx - 1) as f64);
        let fy = ((y - self.origin_y) / self.cell).clamp(0.0, (self.ny - 1) as f64);
        let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
        let (ix1, iy1) = ((ix + 1).min(self.nx - 1), (iy + 1).min(self.ny - 1));
        let (tx, ty) = (fx - ix as f64, fy - iy as f64);
        let h = |i: usize, j: usize| self.heights[j * self.nx + i];
        let lo = h(ix, iy) * (1.0 - tx) + h(ix1, iy) * tx;
        let hi = h(ix, iy1) * (1.0 - tx) + h(ix1, iy1) * tx;
        lo * (1.0 - ty) + hi * ty
    }

    pub fn max_height(&self) -> f64 {
        self.heights.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_height(&self) -> f64 {
        self.heights.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_flat(&self) -> bool {
        self.max_height() == self.min_height()
    }

    /// Upper bound on |grad h| of the bilinear surface.
    pub fn max_slope(&self) -> f64 {
        let mut s: f64 = 0.0;
        for j in 0..self.ny {
            for i in 0..self.nx {
                let h = self.heights[j * self.nx + i];
                if i + 1 < self.nx {
                    s = s.max((self.heights[j * self.nx + i + 1] - h).abs());
                }
                if j + 1 < self.ny {
                    s = s.max((self.heights[(j + 1) * self.nx + i] - h).abs());
                }
            }
        }
        s / self.cell * std::f64::consts::SQRT_2
    }

    /// Euclidean distance from `p` to the surface, 0 at or below it.
    ///
    /// Only surface points within horizontal radius `c` (the vertical
    /// clearance) can be closer than `c`, so that disc is scanned on a
    /// quarter-cell lattice and the best sample is polished by pattern search.
    pub fn distance(&self, p: Vec3) -> f64 {
        let c = p.z - self.height_at(p.x, p.y);
        if c <= 0.0 {
            return 0.0;
        }
        if self.is_flat() || p.z - self.max_height() >= c {
            return c;
        }
        let dist = |x: f64, y: f64| {
            let dz = p.z - self.height_at(x, y);
            ((x - p.x).powi(2) + (y - p.y).powi(2) + dz * dz).sqrt()
        };
        let step = self.cell / 4.0;
        let n = (c / step).ceil() as i64;
        let (mut best, mut bx, mut by) = (c, p.x, p.y);
        for j in -n..=n {
            for i in -n..=n {
                let (x, y) = (p.x + i as f64 * step, p.y + j as f64 * step);
                let d = dist(x, y);
                if d < best {
                    (best, bx, by) = (d, x, y);
                }
            }
        }
        let mut h = step;
        while h > 1e-9 {
            let mut moved = false;
            for (dx, dy) in [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0), (1.0, 1.0), (-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0)] {
                let d = dist(bx + dx * h, by + dy * h);
                if d < best {
                    (best, bx, by) = (d, bx + dx * h, by + dy * h);
                    moved = true;
                }
            }
            if !moved {
                h *= 0.5;
            }
        }
        best
    }
}

/// Additive, surface-anchored depth texture emulating background appearance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextureProfile {
    /// Peak absolute perturbation, meters.
    pub amplitude: f64,
    /// Spatial frequency, radians per meter.
    pub frequency: f64,
    pub phase_x: f64,
    pub phase_y: f64,
}

impl TextureProfile {
    pub const NONE: TextureProfile = TextureProfile {
        amplitude: 0.0,
        frequency: 0.0,
        phase_x: 0.0,
        phase_y: 0.0,
    };

    /// Perturbation for a ray hitting the world at `p`; within `[-amplitude, amplitude]`.
    pub fn offset(&self, p: Vec3) -> f64 {
        if self.amplitude == 0.0 {
            return 0.0;
        }
        let f = self.frequency;
        self.amplitude * (f * p.x + self.phase_x).sin() * (f * (p.y + p.z) + self.phase_y).sin()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub domain_name: String,
    pub seed: u64,
    /// Leaving these bounds is a collision; `None` means unbounded.
    pub bounds: Option<Aabb>,
    /// Ground surface; `None` means no ground at all.
    pub terrain: Option<Heightfield>,
    pub obstacles: Vec<Obstacle>,
    /// Obstacles per square meter of arena.
    pub obstacle_density: f64,
    pub obstacle_radius_range: [f64; 2],
    pub terrain_roughness: f64,
    pub texture: TextureProfile,
}

impl ScenarioSpec {
    /// A world with nothing in it: no ground, no bounds, no obstacles.
    pub fn empty() -> Self {
        ScenarioSpec {
            domain_name: "empty".into(),
            seed: 0,
            bounds: None,
            terrain: None,
            obstacles: Vec::new(),
            obstacle_density: 0.0,
            obstacle_radius_range: [0.0, 0.0],
            terrain_roughness: 0.0,
            texture: TextureProfile::NONE,
        }
    }

    /// Bounded flat-ground world without obstacles or texture.
    pub fn open_field() -> Self {
        let bounds = default_bounds();
        ScenarioSpec {
            domain_name: "open_field".into(),
            bounds: Some(bounds),
            terrain: Some(Heightfield::flat(&bounds, 1.0)),
            ..Self::empty()
        }
    }

    pub fn terrain_height(&self, x: f64, y: f64) -> Option<f64> {
        self.terrain.as_ref().map(|t| t.height_at(x, y))
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(t) = &self.terrain {
            if t.nx < 2 || t.ny < 2 || t.heights.len() != t.nx * t.ny || t.cell <= 0.0 {
                return Err(WorldError::Config("malformed heightfield grid".into()));
            }
            if t.heights.iter().any(|h| !(*h >= 0.0 && h.is_finite())) {
                return Err(WorldError::Config("heightfield must be nonnegative".into()));
            }
        }
        if let Some(b) = &self.bounds {
            for (i, o) in self.obstacles.iter().enumerate() {
                if !o.inside(b) {
                    return Err(WorldError::Config(format!("obstacle {i} leaves the bounds")));
                }
            }
        }
        if self.texture.amplitude < 0.0 {
            return Err(WorldError::Config("texture amplitude must be >= 0".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| WorldError::Toml(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ScenarioSpec = toml::from_str(text).map_err(|e| WorldError::Toml(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

pub fn default_bounds() -> Aabb {
    Aabb {
        min: Vec3::new(-WORLD_HALF_WIDTH, -WORLD_HALF_WIDTH, 0.0),
        max: Vec3::new(WORLD_HALF_WIDTH, WORLD_HALF_WIDTH, WORLD_CEILING),
    }
}

fn sample(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..range[1])
    }
}

fn generate_terrain(rng: &mut ChaCha8Rng, bounds: &Aabb, p: &DomainParams) -> Heightfield {
    let mut field = Heightfield::flat(bounds, 1.0);
    if p.roughness == 0.0 {
        return field;
    }
    let waves: Vec<[f64; 4]> = (0..4)
        .map(|_| {
            [
                sample(rng, p.terrain_frequency),
                sample(rng, p.terrain_frequency),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.0..2.0 * PI),
            ]
        })
        .collect();
    for j in 0..field.ny {
        for i in 0..field.nx {
            let x = field.origin_x + i as f64 * field.cell;
            let y = field.origin_y + j as f64 * field.cell;
            field.heights[j * field.nx + i] = waves
                .iter()
                .map(|w| (w[0] * x + w[2]).sin() * (w[1] * y + w[3]).sin())
                .sum();
        }
    }
    let (lo, hi) = (field.min_height(), field.max_height());
    let span = (hi - lo).max(1e-12);
    field
        .heights
        .iter_mut()
        .for_each(|h| *h = p.roughness * (*h - lo) / span);
    field
}

/// Builds the procedural scenario for a named domain. Pure in `(name, seed)`.
pub fn generate_scenario(domain_name: &str, seed: u64) -> Result<ScenarioSpec> {
    let domain: Domain = domain_name.parse()?;
    let p = domain.params();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(domain as u64 + 1);
    let bounds = default_bounds();
    let terrain = generate_terrain(&mut rng, &bounds, &p);
    let mut obstacles = Vec::with_capacity(p.count);
    for _ in 0..p.count {
        let r = ARENA_RADIUS * rng.random_range(0.0f64..1.0).sqrt();
        let theta = rng.random_range(0.0..2.0 * PI);
        let (cx, cy) = (r * theta.cos(), r * theta.sin());
        let size = sample(&mut rng, p.radius_range);
        let height = sample(&mut rng, p.height_range);
        obstacles.push(if p.boxes {
            let aspect = rng.random_range(0.6..1.0);
            Obstacle::Box {
                center: Vec3::new(cx, cy, height / 2.0),
                half_extents: Vec3::new(size, size * aspect, height / 2.0),
            }
        } else {
            Obstacle::Cylinder {
                center_x: cx,
                center_y: cy,
                radius: size,
                height,
            }
        });
    }
    let texture = TextureProfile {
        amplitude: p.texture_amplitude,
        frequency: p.texture_frequency,
        phase_x: rng.random_range(0.0..2.0 * PI),
        phase_y: rng.random_range(0.0..2.0 * PI),
    };
    let spec = ScenarioSpec {
        domain_name: domain.name().into(),
        seed,
        bounds: Some(bounds),
        terrain: Some(terrain),
        obstacles,
        obstacle_density: p.count as f64 / (PI * ARENA_RADIUS * ARENA_RADIUS),
        obstacle_radius_range: p.radius_range,
        terrain_roughness: p.roughness,
        texture,
    };
    spec.validate()?;
    Ok(spec)
}
