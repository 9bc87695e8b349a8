use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Class;
use crate::error::{Error, Result};
use crate::rng::rng;

/// Parameters of the procedural world generator. Extents are in meters on
/// the ground plane, with the sensor mount at the origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub cars: usize,
    pub trucks: usize,
    pub bikes: usize,
    pub persons: usize,
    /// Background objects (poles and blocks) labeled as background.
    pub clutter: usize,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            x_min: 3.0,
            x_max: 30.0,
            y_min: -14.0,
            y_max: 14.0,
            cars: 4,
            trucks: 1,
            bikes: 3,
            persons: 4,
            clutter: 4,
        }
    }
}

impl WorldSpec {
    pub fn empty(&self) -> Self {
        Self {
            cars: 0,
            trucks: 0,
            bikes: 0,
            persons: 0,
            clutter: 0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.x_min, self.x_max, self.y_min, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !ok || self.x_max <= self.x_min || self.y_max <= self.y_min {
            return Err(Error::DegenerateExtent(format!(
                "x [{}, {}], y [{}, {}]",
                self.x_min, self.x_max, self.y_min, self.y_max
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    /// Axis-aligned box.
    Box { min: [f64; 3], max: [f64; 3] },
    /// Vertical cylinder with a flat top.
    Cylinder {
        center: [f64; 2],
        radius: f64,
        z_min: f64,
        z_max: f64,
    },
}

impl Shape {
    fn footprint(&self) -> [f64; 4] {
        match *self {
            Shape::Box { min, max } => [min[0], max[0], min[1], max[1]],
            Shape::Cylinder { center, radius, .. } => [
                center[0] - radius,
                center[0] + radius,
                center[1] - radius,
                center[1] + radius,
            ],
        }
    }

    /// Nearest intersection with `t` in `(t_min, t_max]`; returns `t` and the
    /// z component of the surface normal.
    pub fn intersect(&self, o: [f64; 3], d: [f64; 3], t_min: f64, t_max: f64) -> Option<(f64, f64)> {
        match *self {
            Shape::Box { min, max } => {
                let mut t0 = t_min;
                let mut t1 = t_max;
                let mut axis = usize::MAX;
                for a in 0..3 {
                    if d[a].abs() < 1e-15 {
                        if o[a] < min[a] || o[a] > max[a] {
                            return None;
                        }
                        continue;
                    }
                    let inv = 1.0 / d[a];
                    let (mut ta, mut tb) = ((min[a] - o[a]) * inv, (max[a] - o[a]) * inv);
                    if ta > tb {
                        std::mem::swap(&mut ta, &mut tb);
                    }
                    if ta > t0 {
                        t0 = ta;
                        axis = a;
                    }
                    t1 = t1.min(tb);
                    if t0 > t1 {
                        return None;
                    }
                }
                // origin inside the box: no entering surface
                if axis == usize::MAX {
                    return None;
                }
                let nz = if axis == 2 { -d[2].signum() } else { 0.0 };
                Some((t0, nz))
            }
            Shape::Cylinder {
                center,
                radius,
                z_min,
                z_max,
            } => {
                let mut best: Option<(f64, f64)> = None;
                let (ox, oy) = (o[0] - center[0], o[1] - center[1]);
                let a = d[0] * d[0] + d[1] * d[1];
                if a > 1e-15 {
                    let b = 2.0 * (ox * d[0] + oy * d[1]);
                    let c = ox * ox + oy * oy - radius * radius;
                    let disc = b * b - 4.0 * a * c;
                    if disc >= 0.0 {
                        let t = (-b - disc.sqrt()) / (2.0 * a);
                        let z = o[2] + t * d[2];
                        if t > t_min && t <= t_max && z >= z_min && z <= z_max {
                            best = Some((t, 0.0));
                        }
                    }
                }
                // caps
                if d[2].abs() > 1e-15 {
                    for (zc, nz) in [(z_max, 1.0), (z_min, -1.0)] {
                        let t = (zc - o[2]) / d[2];
                        if t > t_min && t <= t_max && nz * d[2] < 0.0 {
                            let (x, y) = (ox + t * d[0], oy + t * d[1]);
                            if x * x + y * y <= radius * radius
                                && best.is_none_or(|(tb, _)| t < tb)
                            {
                                best = Some((t, nz));
                            }
                        }
                    }
                }
                best
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorldObject {
    pub shape: Shape,
    pub class: Class,
    /// Camera-visible reflectance in [0, 1].
    pub albedo: f64,
    /// LiDAR reflectivity in [0, 1].
    pub reflectivity: f64,
}

/// A ground plane at z = 0 plus a set of labeled solids.
#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub spec: WorldSpec,
    pub objects: Vec<WorldObject>,
}

pub const GROUND_ALBEDO: f64 = 0.2;
pub const GROUND_REFLECTIVITY: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub class: Class,
    pub normal_z: f64,
    pub albedo: f64,
    pub reflectivity: f64,
}

impl World {
    /// Nearest surface hit along `o + t d` with `t <= t_max`.
    pub fn intersect(&self, o: [f64; 3], d: [f64; 3], t_max: f64) -> Option<Hit> {
        const T_MIN: f64 = 1e-9;
        let mut best: Option<Hit> = None;
        if d[2] < 0.0 && o[2] > 0.0 {
            let t = -o[2] / d[2];
            if t > T_MIN && t <= t_max {
                best = Some(Hit {
                    t,
                    class: Class::Background,
                    normal_z: 1.0,
                    albedo: GROUND_ALBEDO,
                    reflectivity: GROUND_REFLECTIVITY,
                });
            }
        }
        for obj in &self.objects {
            let limit = best.map_or(t_max, |h| h.t);
            if let Some((t, normal_z)) = obj.shape.intersect(o, d, T_MIN, limit) {
                if best.is_none_or(|h| t < h.t) {
                    best = Some(Hit {
                        t,
                        class: obj.class,
                        normal_z,
                        albedo: obj.albedo,
                        reflectivity: obj.reflectivity,
                    });
                }
            }
        }
        best
    }
}

struct Template {
    class: Class,
    albedo: f64,
    reflectivity: f64,
}

fn template(class: Class) -> Template {
    let (albedo, reflectivity) = match class {
        Class::Car => (0.55, 0.7),
        Class::Truck => (0.45, 0.6),
        Class::Bike => (0.7, 0.4),
        Class::Person => (0.35, 0.3),
        Class::Background => (0.5, 0.5),
    };
    Template {
        class,
        albedo,
        reflectivity,
    }
}

fn sample_shape(class: Class, x: f64, y: f64, r: &mut crate::rng::Rng) -> Shape {
    let boxed = |l: (f64, f64), w: (f64, f64), h: (f64, f64), r: &mut crate::rng::Rng| {
        let (l, w, h) = (r.random_range(l.0..l.1), r.random_range(w.0..w.1), r.random_range(h.0..h.1));
        Shape::Box {
            min: [x - l / 2.0, y - w / 2.0, 0.0],
            max: [x + l / 2.0, y + w / 2.0, h],
        }
    };
    match class {
        Class::Car => boxed((3.8, 4.6), (1.7, 1.9), (1.4, 1.6), r),
        Class::Truck => boxed((6.0, 9.0), (2.3, 2.6), (2.8, 3.5), r),
        Class::Bike => boxed((1.6, 1.9), (0.5, 0.7), (1.0, 1.3), r),
        Class::Person => Shape::Cylinder {
            center: [x, y],
            radius: r.random_range(0.25..0.35),
            z_min: 0.0,
            z_max: r.random_range(1.6..1.9),
        },
        Class::Background => {
            if r.random_bool(0.5) {
                Shape::Cylinder {
                    center: [x, y],
                    radius: r.random_range(0.1..0.2),
                    z_min: 0.0,
                    z_max: r.random_range(2.5..4.5),
                }
            } else {
                boxed((1.0, 3.0), (1.0, 3.0), (0.8, 2.0), r)
            }
        }
    }
}

const PLACEMENT_ATTEMPTS: usize = 100;
const PLACEMENT_MARGIN: f64 = 0.3;

/// Generates a world from `seed`. Objects that cannot be placed without
/// overlap after a bounded number of attempts are skipped.
pub fn generate_world(seed: u64, spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let mut r = rng(seed);
    let mut objects: Vec<WorldObject> = Vec::new();
    let plan = [
        (Class::Truck, spec.trucks),
        (Class::Car, spec.cars),
        (Class::Bike, spec.bikes),
        (Class::Person, spec.persons),
        (Class::Background, spec.clutter),
    ];
    for (class, count) in plan {
        let t = template(class);
        for _ in 0..count {
            for _ in 0..PLACEMENT_ATTEMPTS {
                let x = r.random_range(spec.x_min..spec.x_max);
                let y = r.random_range(spec.y_min..spec.y_max);
                let shape = sample_shape(class, x, y, &mut r);
                let fp = shape.footprint();
                let inside = fp[0] >= spec.x_min
                    && fp[1] <= spec.x_max
                    && fp[2] >= spec.y_min
                    && fp[3] <= spec.y_max;
                let clear = objects.iter().all(|o| {
                    let q = o.shape.footprint();
                    fp[1] + PLACEMENT_MARGIN < q[0]
                        || q[1] + PLACEMENT_MARGIN < fp[0]
                        || fp[3] + PLACEMENT_MARGIN < q[2]
                        || q[3] + PLACEMENT_MARGIN < fp[2]
                });
                if inside && clear {
                    objects.push(WorldObject {
                        shape,
                        class: t.class,
                        albedo: (t.albedo + r.random_range(-0.08..0.08)).clamp(0.0, 1.0),
                        reflectivity: (t.reflectivity + r.random_range(-0.05..0.05))
                            .clamp(0.0, 1.0),
                    });
                    break;
                }
            }
        }
    }
    Ok(World {
        spec: spec.clone(),
        objects,
    })
}
