use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scene::{ColorName, Scene, SceneObject, Texture, MAX_OBJECTS, MAX_RETRIES};
use crate::dataset::caption::caption_template;
use crate::error::{IdcError, Result};

/// Minimum displacement of a Move along its dominant axis, in canvas units.
pub const MOVE_THRESHOLD: f64 = 0.15;

/// Change taxonomy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Color,
    Texture,
    Move,
    Add,
    Drop,
    Same,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Color,
        Category::Texture,
        Category::Move,
        Category::Add,
        Category::Drop,
        Category::Same,
    ];

    /// Lowercase key used in JSON records.
    pub fn key(self) -> &'static str {
        match self {
            Category::Color => "color",
            Category::Texture => "texture",
            Category::Move => "move",
            Category::Add => "add",
            Category::Drop => "drop",
            Category::Same => "same",
        }
    }

    pub fn from_key(s: &str) -> Option<Self> {
        Category::ALL.into_iter().find(|c| c.key() == s)
    }

    pub fn title(self) -> &'static str {
        match self {
            Category::Color => "Color",
            Category::Texture => "Texture",
            Category::Move => "Move",
            Category::Add => "Add",
            Category::Drop => "Drop",
            Category::Same => "Same",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.title())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum EditChange {
    Color(ColorName),
    Texture(Texture),
    Move { to: (f64, f64) },
    Add(SceneObject),
    Drop,
    Same,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditInstruction {
    pub category: Category,
    /// Index of the edited object; absent for Add and Same.
    pub target: Option<usize>,
    pub change: EditChange,
    /// Canonical instruction text.
    pub text: String,
}

impl EditInstruction {
    /// Builds an instruction and fills in its canonical text.
    pub fn new(scene: &Scene, target: Option<usize>, change: EditChange) -> Result<Self> {
        let category = match change {
            EditChange::Color(_) => Category::Color,
            EditChange::Texture(_) => Category::Texture,
            EditChange::Move { .. } => Category::Move,
            EditChange::Add(_) => Category::Add,
            EditChange::Drop => Category::Drop,
            EditChange::Same => Category::Same,
        };
        let mut edit = EditInstruction {
            category,
            target,
            change,
            text: String::new(),
        };
        edit.text = caption_template(&edit, scene)?;
        Ok(edit)
    }
}

fn target_object<'a>(scene: &'a Scene, edit: &EditInstruction) -> Result<(usize, &'a SceneObject)> {
    let idx = edit
        .target
        .ok_or_else(|| IdcError::InvalidArgument(format!("{} edit without a target object", edit.category)))?;
    scene.objects.get(idx).map(|o| (idx, o)).ok_or_else(|| {
        IdcError::InvalidArgument(format!(
            "target index {idx} out of range for a scene of {} objects",
            scene.objects.len()
        ))
    })
}

/// Applies an edit, checking the result against the scene invariants.
pub fn apply_edit(scene: &Scene, edit: &EditInstruction) -> Result<Scene> {
    let mut out = scene.clone();
    match &edit.change {
        EditChange::Same => return Ok(out),
        EditChange::Add(obj) => out.objects.push(obj.clone()),
        EditChange::Color(c) => {
            let (i, _) = target_object(scene, edit)?;
            out.objects[i].color = *c;
        }
        EditChange::Texture(t) => {
            let (i, _) = target_object(scene, edit)?;
            out.objects[i].texture = *t;
        }
        EditChange::Move { to } => {
            let (i, _) = target_object(scene, edit)?;
            out.objects[i].center = *to;
        }
        EditChange::Drop => {
            let (i, _) = target_object(scene, edit)?;
            out.objects.remove(i);
        }
    }
    out.validate_edited()?;
    Ok(out)
}

/// Samples an edit of `category` applicable to `scene`, rejection-sampling
/// geometry until the edited scene is valid.
pub fn sample_edit<R: Rng + ?Sized>(rng: &mut R, category: Category, scene: &Scene) -> Result<EditInstruction> {
    let n = scene.objects.len();
    let fail = || IdcError::Sampling {
        category: category.key().into(),
        retries: MAX_RETRIES,
    };
    match category {
        Category::Same => EditInstruction::new(scene, None, EditChange::Same),
        Category::Color => {
            if n == 0 {
                return Err(IdcError::InvalidArgument("color edit on an empty scene".into()));
            }
            let i = rng.gen_range(0..n);
            let current = scene.objects[i].color;
            let choices: Vec<ColorName> = ColorName::ALL.iter().copied().filter(|&c| c != current).collect();
            let c = *choices.choose(rng).unwrap();
            EditInstruction::new(scene, Some(i), EditChange::Color(c))
        }
        Category::Texture => {
            if n == 0 {
                return Err(IdcError::InvalidArgument("texture edit on an empty scene".into()));
            }
            let i = rng.gen_range(0..n);
            let t = match scene.objects[i].texture {
                Texture::Solid => Texture::Striped,
                Texture::Striped => Texture::Solid,
            };
            EditInstruction::new(scene, Some(i), EditChange::Texture(t))
        }
        Category::Move => {
            if n == 0 {
                return Err(IdcError::InvalidArgument("move edit on an empty scene".into()));
            }
            for _ in 0..MAX_RETRIES {
                let i = rng.gen_range(0..n);
                let obj = &scene.objects[i];
                let r = obj.radius();
                let to = (rng.gen_range(r..=1.0 - r), rng.gen_range(r..=1.0 - r));
                let (dx, dy) = (to.0 - obj.center.0, to.1 - obj.center.1);
                if dx.abs().max(dy.abs()) < MOVE_THRESHOLD {
                    continue;
                }
                let moved = SceneObject {
                    center: to,
                    ..obj.clone()
                };
                if scene.fits(&moved, Some(i)) {
                    return EditInstruction::new(scene, Some(i), EditChange::Move { to });
                }
            }
            Err(fail())
        }
        Category::Add => {
            if n >= MAX_OBJECTS {
                return Err(IdcError::InvalidArgument(format!(
                    "add edit needs at most {} objects, scene has {n}",
                    MAX_OBJECTS - 1
                )));
            }
            for _ in 0..MAX_RETRIES {
                let o = SceneObject::random(rng);
                if scene.fits(&o, None) {
                    return EditInstruction::new(scene, None, EditChange::Add(o));
                }
            }
            Err(fail())
        }
        Category::Drop => {
            if n < 2 {
                return Err(IdcError::InvalidArgument(format!(
                    "drop edit needs at least 2 objects, scene has {n}"
                )));
            }
            let i = rng.gen_range(0..n);
            EditInstruction::new(scene, Some(i), EditChange::Drop)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::render::{Jitter, Renderer};
    use crate::imaging::scene::{sample_scene, sample_scene_with, ShapeKind, Size};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_objects() -> Scene {
        let mk = |shape, color, center| SceneObject {
            shape,
            color,
            texture: Texture::Solid,
            size: Size::Small,
            center,
        };
        Scene {
            background: 0,
            objects: vec![
                mk(ShapeKind::Circle, ColorName::Red, (0.2, 0.2)),
                mk(ShapeKind::Square, ColorName::Blue, (0.7, 0.7)),
            ],
        }
    }

    #[test]
    fn drop_on_two_objects_leaves_one() {
        let s = two_objects();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = sample_edit(&mut rng, Category::Drop, &s).unwrap();
        let out = apply_edit(&s, &e).unwrap();
        assert_eq!(out.objects.len(), 1);
        let one = Scene {
            background: 0,
            objects: out.objects.clone(),
        };
        assert!(sample_edit(&mut rng, Category::Drop, &one).is_err());
    }

    #[test]
    fn color_edit_changes_exactly_one_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let s = sample_scene(&mut rng).unwrap();
            let e = sample_edit(&mut rng, Category::Color, &s).unwrap();
            let out = apply_edit(&s, &e).unwrap();
            let diffs: Vec<usize> = (0..s.objects.len())
                .filter(|&i| s.objects[i] != out.objects[i])
                .collect();
            assert_eq!(diffs.len(), 1);
            let (a, b) = (&s.objects[diffs[0]], &out.objects[diffs[0]]);
            assert_ne!(a.color, b.color);
            assert_eq!(
                (a.shape, a.texture, a.size, a.center),
                (b.shape, b.texture, b.size, b.center)
            );
        }
    }

    #[test]
    fn same_is_identity() {
        let s = two_objects();
        let e = EditInstruction::new(&s, None, EditChange::Same).unwrap();
        assert_eq!(apply_edit(&s, &e).unwrap(), s);
    }

    #[test]
    fn move_displaces_one_center_past_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let s = sample_scene(&mut rng).unwrap();
            let e = sample_edit(&mut rng, Category::Move, &s).unwrap();
            let out = apply_edit(&s, &e).unwrap();
            let moved: Vec<usize> = (0..s.objects.len())
                .filter(|&i| s.objects[i].center != out.objects[i].center)
                .collect();
            assert_eq!(moved.len(), 1);
            let (a, b) = (s.objects[moved[0]].center, out.objects[moved[0]].center);
            assert!(((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt() >= MOVE_THRESHOLD);
        }
    }

    #[test]
    fn add_then_drop_added_restores_scene() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let s = sample_scene_with(&mut rng, 2, 4).unwrap();
            let add = sample_edit(&mut rng, Category::Add, &s).unwrap();
            let added = apply_edit(&s, &add).unwrap();
            let last = added.objects.len() - 1;
            let drop = EditInstruction::new(&added, Some(last), EditChange::Drop).unwrap();
            assert_eq!(apply_edit(&added, &drop).unwrap(), s);
        }
    }

    #[test]
    fn invalid_target_rejected() {
        let s = two_objects();
        let e = EditInstruction {
            category: Category::Drop,
            target: Some(7),
            change: EditChange::Drop,
            text: String::new(),
        };
        assert!(matches!(apply_edit(&s, &e), Err(IdcError::InvalidArgument(_))));
    }

    #[test]
    fn full_scene_rejects_add() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = sample_scene_with(&mut rng, 5, 5).unwrap();
        assert!(sample_edit(&mut rng, Category::Add, &s).is_err());
    }

    #[test]
    fn every_semantic_edit_changes_pixels() {
        let r = Renderer::default();
        let flat = Renderer {
            side: 48,
            jitter: Jitter::NONE,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for k in 0..300u64 {
            let s = sample_scene_with(&mut rng, 2, 4).unwrap();
            for cat in Category::ALL {
                let e = sample_edit(&mut rng, cat, &s).unwrap();
                let out = apply_edit(&s, &e).unwrap();
                out.validate_edited().unwrap();
                let same = r.render(&s, k) == r.render(&out, k);
                assert_eq!(same, cat == Category::Same, "{cat} edit, scene {k}");
                assert_eq!(flat.render(&s, k) == flat.render(&out, k), cat == Category::Same);
            }
        }
    }
}
