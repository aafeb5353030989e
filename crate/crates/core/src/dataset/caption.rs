//! Caption templates, rule-based paraphrases and template inversion.
//!
//! Every surface form of a caption is a pattern over literal words and typed
//! slots. The first pattern of each category is the canonical template; the
//! rest are paraphrases built from synonym substitution and clause
//! reordering. Slot vocabularies are disjoint, so any caption parses back to at
//! most one `(category, slots)` pair.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{IdcError, Result};
use crate::imaging::edit::{Category, EditChange, EditInstruction};
use crate::imaging::scene::{ColorName, Scene, SceneObject, ShapeKind, Size, Texture};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Slot {
    Size,
    Texture,
    Color,
    Shape,
    Direction,
    NewColor,
    NewTexture,
}

impl Slot {
    fn tag(self) -> &'static str {
        match self {
            Slot::Size => "<size>",
            Slot::Texture => "<texture>",
            Slot::Color => "<color>",
            Slot::Shape => "<shape>",
            Slot::Direction => "<dir>",
            Slot::NewColor => "<newcolor>",
            Slot::NewTexture => "<newtexture>",
        }
    }

    fn from_tag(s: &str) -> Option<Slot> {
        [
            Slot::Size,
            Slot::Texture,
            Slot::Color,
            Slot::Shape,
            Slot::Direction,
            Slot::NewColor,
            Slot::NewTexture,
        ]
        .into_iter()
        .find(|t| t.tag() == s)
    }

    fn accepts(self, word: &str) -> bool {
        match self {
            Slot::Size => Size::from_name(word).is_some(),
            Slot::Texture | Slot::NewTexture => Texture::from_name(word).is_some(),
            Slot::Color | Slot::NewColor => ColorName::from_name(word).is_some(),
            Slot::Shape => ShapeKind::from_name(word).is_some(),
            Slot::Direction => DIRECTIONS.contains(&word),
        }
    }
}

pub const DIRECTIONS: [&str; 4] = ["left", "right", "up", "down"];

const COLOR_PATTERNS: &[&str] = &[
    "the <size> <texture> <shape> turned <newcolor>",
    "the <size> <texture> <shape> became <newcolor>",
    "the <size> <texture> <shape> changed to <newcolor>",
    "the <size> <texture> <shape> is now <newcolor>",
    "the color of the <size> <texture> <shape> changed to <newcolor>",
    "someone painted the <size> <texture> <shape> <newcolor>",
];

const TEXTURE_PATTERNS: &[&str] = &[
    "the <size> <color> <shape> became <newtexture>",
    "the <size> <color> <shape> turned <newtexture>",
    "the <size> <color> <shape> changed to <newtexture>",
    "the <size> <color> <shape> is now <newtexture>",
    "the texture of the <size> <color> <shape> changed to <newtexture>",
];

const MOVE_PATTERNS: &[&str] = &[
    "the <size> <texture> <shape> moved <dir>",
    "the <size> <texture> <shape> was moved <dir>",
    "the <size> <texture> <shape> shifted <dir>",
    "the <size> <texture> <shape> has moved <dir>",
    "someone moved the <size> <texture> <shape> <dir>",
];

const ADD_PATTERNS: &[&str] = &[
    "a <size> <texture> <color> <shape> was added",
    "a <size> <texture> <color> <shape> appeared",
    "someone added a <size> <texture> <color> <shape>",
    "there is a new <size> <texture> <color> <shape>",
    "a <size> <texture> <color> <shape> has been added",
];

const DROP_PATTERNS: &[&str] = &[
    "the <size> <texture> <shape> was removed",
    "the <size> <texture> <shape> was deleted",
    "the <size> <texture> <shape> was dropped",
    "the <size> <texture> <shape> disappeared",
    "someone removed the <size> <texture> <shape>",
    "the <size> <texture> <shape> is gone",
];

const SAME_PATTERNS: &[&str] = &[
    "no change was made",
    "nothing changed",
    "there is no change",
    "the scene is unchanged",
    "nothing was modified",
    "no difference",
];

pub fn patterns(category: Category) -> &'static [&'static str] {
    match category {
        Category::Color => COLOR_PATTERNS,
        Category::Texture => TEXTURE_PATTERNS,
        Category::Move => MOVE_PATTERNS,
        Category::Add => ADD_PATTERNS,
        Category::Drop => DROP_PATTERNS,
        Category::Same => SAME_PATTERNS,
    }
}

pub type SlotValues = BTreeMap<Slot, String>;

/// What a caption says: category plus the attribute words it names.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedCaption {
    pub category: Category,
    pub pattern: usize,
    pub slots: SlotValues,
}

fn fill(pattern: &str, slots: &SlotValues) -> Result<String> {
    let words: Result<Vec<&str>> = pattern
        .split(' ')
        .map(|w| match Slot::from_tag(w) {
            Some(slot) => slots
                .get(&slot)
                .map(String::as_str)
                .ok_or_else(|| IdcError::Paraphrase(format!("no value for slot {w}"))),
            None => Ok(w),
        })
        .collect();
    Ok(words?.join(" "))
}

fn match_pattern(pattern: &str, words: &[&str]) -> Option<SlotValues> {
    let pw: Vec<&str> = pattern.split(' ').collect();
    if pw.len() != words.len() {
        return None;
    }
    let mut slots = SlotValues::new();
    for (p, w) in pw.iter().zip(words) {
        match Slot::from_tag(p) {
            Some(slot) if slot.accepts(w) => {
                slots.insert(slot, (*w).to_string());
            }
            Some(_) => return None,
            None if p == w => {}
            None => return None,
        }
    }
    Some(slots)
}

/// Template inversion. Fails if the caption matches no pattern or more than one.
pub fn parse_caption(caption: &str) -> Result<ParsedCaption> {
    let lowered = caption.to_lowercase();
    let words: Vec<&str> = lowered.split_whitespace().collect();
    let mut found = Vec::new();
    for cat in Category::ALL {
        for (i, p) in patterns(cat).iter().enumerate() {
            if let Some(slots) = match_pattern(p, &words) {
                found.push(ParsedCaption {
                    category: cat,
                    pattern: i,
                    slots,
                });
            }
        }
    }
    match found.len() {
        1 => Ok(found.pop().unwrap()),
        0 => Err(IdcError::Paraphrase(format!(
            "caption matches no template: {caption:?}"
        ))),
        n => Err(IdcError::Paraphrase(format!(
            "caption matches {n} templates: {caption:?}"
        ))),
    }
}

/// Direction word for a displacement, by dominant axis (y grows downward).
pub fn direction(from: (f64, f64), to: (f64, f64)) -> &'static str {
    let (dx, dy) = (to.0 - from.0, to.1 - from.1);
    if dx.abs() >= dy.abs() {
        if dx >= 0.0 {
            "right"
        } else {
            "left"
        }
    } else if dy >= 0.0 {
        "down"
    } else {
        "up"
    }
}

fn object_slots(o: &SceneObject) -> SlotValues {
    let mut s = SlotValues::new();
    s.insert(Slot::Size, o.size.name().into());
    s.insert(Slot::Texture, o.texture.name().into());
    s.insert(Slot::Color, o.color.name().into());
    s.insert(Slot::Shape, o.shape.name().into());
    s
}

/// Slot values an edit of `scene` should be described with. Slots a pattern
/// does not mention are ignored when filling.
pub fn edit_slots(edit: &EditInstruction, scene: &Scene) -> Result<SlotValues> {
    let target = || -> Result<&SceneObject> {
        edit.target
            .and_then(|i| scene.objects.get(i))
            .ok_or_else(|| IdcError::InvalidArgument(format!("{} edit has no valid target", edit.category)))
    };
    Ok(match &edit.change {
        EditChange::Same => SlotValues::new(),
        EditChange::Add(o) => object_slots(o),
        EditChange::Drop => object_slots(target()?),
        EditChange::Color(c) => {
            let mut s = object_slots(target()?);
            s.insert(Slot::NewColor, c.name().into());
            s
        }
        EditChange::Texture(t) => {
            let mut s = object_slots(target()?);
            s.insert(Slot::NewTexture, t.name().into());
            s
        }
        EditChange::Move { to } => {
            let o = target()?;
            let mut s = object_slots(o);
            s.insert(Slot::Direction, direction(o.center, *to).into());
            s
        }
    })
}

/// Restricts slot values to the ones a category's patterns mention.
pub fn mentioned(category: Category, slots: &SlotValues) -> SlotValues {
    let canonical = patterns(category)[0];
    slots
        .iter()
        .filter(|(k, _)| canonical.split(' ').any(|w| w == k.tag()))
        .map(|(k, v)| (*k, v.clone()))
        .collect()
}

/// Canonical caption: lowercase, no punctuation.
pub fn caption_template(edit: &EditInstruction, scene: &Scene) -> Result<String> {
    let slots = edit_slots(edit, scene)?;
    fill(patterns(edit.category)[0], &slots)
}

/// `k` distinct rewordings of `caption`, none equal to it, each parsing back
/// to the same category and slot values.
pub fn paraphrase<R: Rng + ?Sized>(caption: &str, k: usize, rng: &mut R) -> Result<Vec<String>> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let parsed = parse_caption(caption)?;
    let mut options: Vec<usize> = (0..patterns(parsed.category).len())
        .filter(|&i| i != parsed.pattern)
        .collect();
    if options.len() < k {
        return Err(IdcError::Paraphrase(format!(
            "{} captions have {} alternative forms, {k} requested",
            parsed.category,
            options.len()
        )));
    }
    options.shuffle(rng);
    options[..k]
        .iter()
        .map(|&i| fill(patterns(parsed.category)[i], &parsed.slots))
        .collect()
}
