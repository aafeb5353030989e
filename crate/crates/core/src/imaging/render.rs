use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::raster::Raster;
use super::scene::{Scene, SceneObject, ShapeKind, Texture};

/// Width of one stripe in canvas units.
pub const STRIPE_WIDTH: f64 = 0.04;
/// Stripe shade relative to the base color.
const STRIPE_SHADE: f64 = 0.45;

/// Non-semantic viewpoint noise: a global brightness offset in
/// `[-brightness, brightness]` levels and a translation in `[-shift, shift]`
/// pixels on each axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Jitter {
    pub brightness: i32,
    pub shift: i32,
}

impl Jitter {
    pub const NONE: Jitter = Jitter {
        brightness: 0,
        shift: 0,
    };
}

impl Default for Jitter {
    fn default() -> Self {
        Jitter {
            brightness: 8,
            shift: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Renderer {
    pub side: usize,
    pub jitter: Jitter,
}

impl Default for Renderer {
    fn default() -> Self {
        Renderer {
            side: 48,
            jitter: Jitter::default(),
        }
    }
}

impl Renderer {
    /// Deterministic function of `(scene, jitter_seed)`. Objects are drawn in
    /// list order; a pixel is covered when its center falls inside the shape.
    pub fn render(&self, scene: &Scene, jitter_seed: u64) -> Raster {
        let mut rng = ChaCha8Rng::seed_from_u64(jitter_seed);
        let j = self.jitter;
        let brightness = rng.gen_range(-j.brightness..=j.brightness);
        let dx = rng.gen_range(-j.shift..=j.shift) as f64;
        let dy = rng.gen_range(-j.shift..=j.shift) as f64;

        let side = self.side;
        let bg = scene.background_rgb();
        let mut out = Raster::filled(side, side, bg);
        for y in 0..side {
            for x in 0..side {
                let u = (x as f64 + 0.5 - dx) / side as f64;
                let v = (y as f64 + 0.5 - dy) / side as f64;
                let mut px = bg;
                for o in &scene.objects {
                    if covers(o, u, v) {
                        px = shade(o, u);
                    }
                }
                out.set_pixel(x, y, px.map(|c| (c as i32 + brightness).clamp(0, 255) as u8));
            }
        }
        out
    }
}

fn shade(o: &SceneObject, u: f64) -> [u8; 3] {
    let base = o.color.rgb();
    match o.texture {
        Texture::Solid => base,
        Texture::Striped => {
            let band = ((u - o.center.0) / STRIPE_WIDTH).floor() as i64;
            if band.rem_euclid(2) == 0 {
                base
            } else {
                base.map(|c| (c as f64 * STRIPE_SHADE).round() as u8)
            }
        }
    }
}

/// Point-in-shape test in canvas units. Every shape is inscribed in the
/// circle of the object's radius.
pub fn covers(o: &SceneObject, u: f64, v: f64) -> bool {
    let r = o.radius();
    let (x, y) = (u - o.center.0, v - o.center.1);
    match o.shape {
        ShapeKind::Circle => x * x + y * y <= r * r,
        ShapeKind::Square => {
            let h = r * std::f64::consts::FRAC_1_SQRT_2;
            x.abs() <= h && y.abs() <= h
        }
        ShapeKind::Triangle => {
            // apex up; vertices at 90, 210 and 330 degrees
            let s3 = 3f64.sqrt() / 2.0;
            let verts = [(0.0, -r), (-s3 * r, 0.5 * r), (s3 * r, 0.5 * r)];
            let edge = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0);
            let e0 = edge(verts[0], verts[1]);
            let e1 = edge(verts[1], verts[2]);
            let e2 = edge(verts[2], verts[0]);
            (e0 <= 0.0 && e1 <= 0.0 && e2 <= 0.0) || (e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::scene::{ColorName, Size};

    fn circle_scene() -> Scene {
        Scene {
            background: 0,
            objects: vec![SceneObject {
                shape: ShapeKind::Circle,
                color: ColorName::Red,
                texture: Texture::Solid,
                size: Size::Large,
                center: (0.5, 0.5),
            }],
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let r = Renderer::default();
        let s = circle_scene();
        assert_eq!(r.render(&s, 11), r.render(&s, 11));
        assert_ne!(r.render(&s, 11), r.render(&s, 12));
    }

    #[test]
    fn empty_scene_is_pure_background() {
        let r = Renderer::default();
        let s = Scene {
            background: 1,
            objects: vec![],
        };
        let img = r.render(&s, 3);
        let first = img.pixel(0, 0);
        assert!((0..48).all(|y| (0..48).all(|x| img.pixel(x, y) == first)));
        let flat = Renderer {
            side: 48,
            jitter: Jitter::NONE,
        }
        .render(&s, 3);
        assert_eq!(flat.pixel(5, 5), s.background_rgb());
    }

    #[test]
    fn large_circle_covers_pi_r_squared() {
        let r = Renderer {
            side: 48,
            jitter: Jitter::NONE,
        };
        let s = circle_scene();
        let img = r.render(&s, 0);
        let red = ColorName::Red.rgb();
        let covered = (0..48)
            .flat_map(|y| (0..48).map(move |x| (x, y)))
            .filter(|&(x, y)| img.pixel(x, y) == red)
            .count() as f64;
        let radius_px = LARGE_PX;
        let expect = std::f64::consts::PI * radius_px * radius_px;
        assert!((covered - expect).abs() / expect < 0.10, "{covered} vs {expect}");
    }
    const LARGE_PX: f64 = crate::imaging::scene::LARGE_RADIUS * 48.0;

    #[test]
    fn stripes_alternate() {
        let r = Renderer {
            side: 96,
            jitter: Jitter::NONE,
        };
        let mut s = circle_scene();
        s.objects[0].texture = Texture::Striped;
        let img = r.render(&s, 0);
        let row: Vec<[u8; 3]> = (36..60).map(|x| img.pixel(x, 48)).collect();
        assert!(row.windows(2).any(|w| w[0] != w[1]));
    }
}
