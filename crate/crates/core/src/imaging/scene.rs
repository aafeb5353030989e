use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IdcError, Result};

pub const MIN_OBJECTS: usize = 2;
pub const MAX_OBJECTS: usize = 5;
pub const SMALL_RADIUS: f64 = 0.11;
pub const LARGE_RADIUS: f64 = 0.16;
/// Placement attempts per object before a scene sample is restarted.
pub const MAX_RETRIES: usize = 1000;

macro_rules! named_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn name(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }

            pub fn from_name(s: &str) -> Option<Self> {
                match s { $($text => Some($name::$variant),)+ _ => None }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
    };
}

named_enum!(ShapeKind {
    Circle => "circle",
    Square => "square",
    Triangle => "triangle",
});

named_enum!(
    /// The eight object colors.
    ColorName {
        Gray => "gray",
        Red => "red",
        Blue => "blue",
        Green => "green",
        Brown => "brown",
        Purple => "purple",
        Cyan => "cyan",
        Yellow => "yellow",
    }
);

named_enum!(
    /// Surface pattern; stands in for material.
    Texture {
        Solid => "solid",
        Striped => "striped",
    }
);

named_enum!(Size {
    Small => "small",
    Large => "large",
});

impl ColorName {
    pub fn rgb(self) -> [u8; 3] {
        match self {
            ColorName::Gray => [87, 87, 87],
            ColorName::Red => [173, 35, 35],
            ColorName::Blue => [42, 75, 215],
            ColorName::Green => [29, 105, 20],
            ColorName::Brown => [129, 74, 25],
            ColorName::Purple => [129, 38, 192],
            ColorName::Cyan => [41, 208, 208],
            ColorName::Yellow => [255, 238, 51],
        }
    }
}

impl Size {
    pub fn radius(self) -> f64 {
        match self {
            Size::Small => SMALL_RADIUS,
            Size::Large => LARGE_RADIUS,
        }
    }
}

pub const BACKGROUNDS: [[u8; 3]; 3] = [[225, 225, 225], [205, 215, 230], [235, 225, 205]];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: ShapeKind,
    pub color: ColorName,
    pub texture: Texture,
    pub size: Size,
    /// Canvas units, origin top-left, y down.
    pub center: (f64, f64),
}

impl SceneObject {
    /// Radius of the circle every shape is inscribed in.
    pub fn radius(&self) -> f64 {
        self.size.radius()
    }

    pub fn inside_canvas(&self) -> bool {
        let r = self.radius();
        let (x, y) = self.center;
        x - r >= 0.0 && x + r <= 1.0 && y - r >= 0.0 && y + r <= 1.0
    }

    pub fn overlaps(&self, other: &SceneObject) -> bool {
        let (dx, dy) = (self.center.0 - other.center.0, self.center.1 - other.center.1);
        (dx * dx + dy * dy).sqrt() <= self.radius() + other.radius()
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let size = *Size::ALL.choose(rng).unwrap();
        let r = size.radius();
        SceneObject {
            shape: *ShapeKind::ALL.choose(rng).unwrap(),
            color: *ColorName::ALL.choose(rng).unwrap(),
            texture: *Texture::ALL.choose(rng).unwrap(),
            size,
            center: (rng.gen_range(r..=1.0 - r), rng.gen_range(r..=1.0 - r)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub background: usize,
    pub objects: Vec<SceneObject>,
}

impl Scene {
    pub fn background_rgb(&self) -> [u8; 3] {
        BACKGROUNDS[self.background % BACKGROUNDS.len()]
    }

    /// Whether `obj` could be placed without leaving the canvas or touching
    /// any object other than the one at `skip`.
    pub fn fits(&self, obj: &SceneObject, skip: Option<usize>) -> bool {
        obj.inside_canvas()
            && self
                .objects
                .iter()
                .enumerate()
                .all(|(i, o)| Some(i) == skip || !obj.overlaps(o))
    }

    /// Geometric invariants plus an object count in `[min, MAX_OBJECTS]`.
    pub fn validate_with(&self, min_objects: usize) -> Result<()> {
        let n = self.objects.len();
        if n < min_objects || n > MAX_OBJECTS {
            return Err(IdcError::InvalidArgument(format!(
                "scene has {n} objects, expected {min_objects}..={MAX_OBJECTS}"
            )));
        }
        if self.background >= BACKGROUNDS.len() {
            return Err(IdcError::InvalidArgument(format!(
                "background id {} out of range",
                self.background
            )));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if !o.inside_canvas() {
                return Err(IdcError::InvalidArgument(format!("object {i} leaves the canvas")));
            }
            for (j, p) in self.objects.iter().enumerate().skip(i + 1) {
                if o.overlaps(p) {
                    return Err(IdcError::InvalidArgument(format!("objects {i} and {j} overlap")));
                }
            }
        }
        Ok(())
    }

    /// Invariants for an unedited scene: 2 to 5 objects.
    pub fn validate(&self) -> Result<()> {
        self.validate_with(MIN_OBJECTS)
    }

    /// Invariants after an edit; a Drop may leave a single object.
    pub fn validate_edited(&self) -> Result<()> {
        self.validate_with(1)
    }
}

/// Samples a scene with 2 to 5 objects.
pub fn sample_scene<R: Rng + ?Sized>(rng: &mut R) -> Result<Scene> {
    sample_scene_with(rng, MIN_OBJECTS, MAX_OBJECTS)
}

/// Samples a valid scene whose object count is uniform in `[min, max]`.
pub fn sample_scene_with<R: Rng + ?Sized>(rng: &mut R, min: usize, max: usize) -> Result<Scene> {
    if min < 1 || min > max || max > MAX_OBJECTS {
        return Err(IdcError::InvalidArgument(format!("object count range {min}..={max}")));
    }
    let n = rng.gen_range(min..=max);
    let background = rng.gen_range(0..BACKGROUNDS.len());
    'restart: for _ in 0..MAX_RETRIES {
        let mut scene = Scene {
            background,
            objects: Vec::with_capacity(n),
        };
        for _ in 0..n {
            let placed = (0..MAX_RETRIES).find_map(|_| {
                let o = SceneObject::random(rng);
                scene.fits(&o, None).then_some(o)
            });
            match placed {
                Some(o) => scene.objects.push(o),
                None => continue 'restart,
            }
        }
        return Ok(scene);
    }
    Err(IdcError::Sampling {
        category: "scene".into(),
        retries: MAX_RETRIES,
    })
}
