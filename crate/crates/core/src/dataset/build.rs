use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::caption::paraphrase;
use super::store::{Dataset, DatasetManifest, Split, Triplet, TEST_REFERENCES, TRIPLETS_FILE};
use crate::error::{IdcError, Result};
use crate::imaging::{
    apply_edit, augment, sample_edit, sample_scene_with, AugmentConfig, Category, Jitter, Raster, Renderer,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub n_originals: usize,
    pub variants_per_original: usize,
    /// Held-out test triplets as a fraction of `n_originals * variants_per_original`.
    pub test_fraction: f64,
    pub val_fraction: f64,
    pub seed: u64,
    pub render_side: usize,
    pub train_jitter: Jitter,
    pub test_jitter: Jitter,
    pub test_augment: AugmentConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_originals: 250,
            variants_per_original: 8,
            test_fraction: 0.1,
            val_fraction: 0.05,
            seed: 0,
            render_side: 48,
            train_jitter: Jitter {
                brightness: 4,
                shift: 1,
            },
            test_jitter: Jitter::default(),
            test_augment: AugmentConfig::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(IdcError::Config(m));
        if self.n_originals == 0 {
            return bad("n_originals must be positive".into());
        }
        if self.variants_per_original == 0 {
            return bad("variants_per_original must be positive".into());
        }
        for (name, f) in [
            ("test_fraction", self.test_fraction),
            ("val_fraction", self.val_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("{name} must lie in [0, 1], got {f}"));
            }
        }
        if self.render_side < 8 {
            return bad(format!("render_side {} is too small", self.render_side));
        }
        Ok(())
    }

    pub fn pool(&self) -> usize {
        self.n_originals * self.variants_per_original
    }

    pub fn held_out(&self, split: Split) -> usize {
        let f = match split {
            Split::Train => return self.pool(),
            Split::Val => self.val_fraction,
            Split::Test => self.test_fraction,
        };
        (f * self.pool() as f64).round() as usize
    }
}

/// Independent RNG stream for one original, keyed by (seed, split, index) so the
/// output does not depend on how work is spread across threads.
pub fn stream_rng(seed: u64, split: Split, index: usize) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(split.key().as_bytes());
    h.update((index as u64).to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

type Generated = (Vec<Triplet>, Vec<(String, Raster)>);

fn train_original(cfg: &DatasetConfig, o: usize) -> Result<Generated> {
    let v_count = cfg.variants_per_original;
    let mut rng = stream_rng(cfg.seed, Split::Train, o);
    // 2..=4 objects keeps every category applicable: Drop needs two, Add needs room
    let scene = sample_scene_with(&mut rng, 2, 4)?;
    let renderer = Renderer {
        side: cfg.render_side,
        jitter: cfg.train_jitter,
    };
    let ref_path = format!("images/train-{o:05}-ref.ppm");
    let mut images = vec![(ref_path.clone(), renderer.render(&scene, rng.gen()))];
    let mut triplets = Vec::with_capacity(v_count);
    for v in 0..v_count {
        let category = Category::ALL[(o * v_count + v) % Category::ALL.len()];
        let edit = sample_edit(&mut rng, category, &scene)?;
        let edited = apply_edit(&scene, &edit)?;
        let mod_path = format!("images/train-{o:05}-{v}-mod.ppm");
        images.push((mod_path.clone(), renderer.render(&edited, rng.gen())));
        triplets.push(Triplet {
            id: format!("train-{o:05}-{v}"),
            ref_image: ref_path.clone(),
            mod_image: mod_path,
            captions: vec![edit.text],
            category,
            variant_index: v,
            split: Split::Train,
        });
    }
    Ok((triplets, images))
}

/// Held-out items `first..last` all belong to original `o`. They are rendered
/// under the stronger jitter regime plus augmentation and carry the canonical
/// caption and four paraphrases.
fn held_out_original(cfg: &DatasetConfig, split: Split, o: usize, last: usize) -> Result<Generated> {
    let v_count = cfg.variants_per_original;
    let first = o * v_count;
    let mut rng = stream_rng(cfg.seed, split, o);
    let scene = sample_scene_with(&mut rng, 2, 4)?;
    let renderer = Renderer {
        side: cfg.render_side,
        jitter: cfg.test_jitter,
    };
    let tag = split.key();
    let ref_path = format!("images/{tag}-{o:05}-ref.ppm");
    let ref_img = renderer.render(&scene, rng.gen());
    let mut images = vec![(ref_path.clone(), augment(&ref_img, &mut rng, &cfg.test_augment))];
    let mut triplets = Vec::new();
    for i in first..last {
        let v = i - first;
        let category = Category::ALL[i % Category::ALL.len()];
        let edit = sample_edit(&mut rng, category, &scene)?;
        let edited = apply_edit(&scene, &edit)?;
        let mod_img = renderer.render(&edited, rng.gen());
        let mod_path = format!("images/{tag}-{o:05}-{v}-mod.ppm");
        images.push((mod_path.clone(), augment(&mod_img, &mut rng, &cfg.test_augment)));
        let mut captions = vec![edit.text.clone()];
        captions.extend(paraphrase(&edit.text, TEST_REFERENCES - 1, &mut rng)?);
        triplets.push(Triplet {
            id: format!("{tag}-{i:05}"),
            ref_image: ref_path.clone(),
            mod_image: mod_path,
            captions,
            category,
            variant_index: v,
            split,
        });
    }
    Ok((triplets, images))
}

/// Generates all records and images in memory. Pure function of `cfg`.
pub fn generate(cfg: &DatasetConfig) -> Result<Generated> {
    cfg.validate()?;
    let v_count = cfg.variants_per_original;
    let mut jobs: Vec<(Split, usize, usize)> = (0..cfg.n_originals).map(|o| (Split::Train, o, 0)).collect();
    for split in [Split::Val, Split::Test] {
        let n = cfg.held_out(split);
        for o in 0..n.div_ceil(v_count) {
            jobs.push((split, o, ((o + 1) * v_count).min(n)));
        }
    }
    let parts: Vec<Generated> = jobs
        .par_iter()
        .map(|&(split, o, last)| match split {
            Split::Train => train_original(cfg, o),
            _ => held_out_original(cfg, split, o, last),
        })
        .collect::<Result<_>>()?;
    let mut triplets = Vec::new();
    let mut images = Vec::new();
    for (t, i) in parts {
        triplets.extend(t);
        images.extend(i);
    }
    Ok((triplets, images))
}

/// Generates a dataset and writes it under `out_dir`.
pub fn build_dataset(cfg: &DatasetConfig, out_dir: impl AsRef<Path>) -> Result<Dataset> {
    let root = out_dir.as_ref().to_path_buf();
    let (triplets, images) = generate(cfg)?;
    fs::create_dir_all(&root).map_err(|e| IdcError::io(&root, e))?;
    let mut files: Vec<String> = images.iter().map(|(p, _)| p.clone()).collect();
    files.push(TRIPLETS_FILE.to_string());
    files.sort();
    let ds = Dataset {
        manifest: DatasetManifest::tally(cfg, &triplets, files),
        root,
        triplets,
    };
    ds.save(&images)?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::caption::parse_caption;
    use crate::dataset::vocab::{detokenize, tokenize};
    use std::collections::BTreeMap;

    fn small(seed: u64) -> DatasetConfig {
        DatasetConfig {
            n_originals: 10,
            test_fraction: 0.2,
            val_fraction: 0.1,
            seed,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn ten_originals_give_eighty_train_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let ds = build_dataset(&small(1), dir.path()).unwrap();
        assert_eq!(ds.manifest.count(Split::Train), 80);
        assert_eq!(ds.manifest.count(Split::Test), 16);
        assert_eq!(ds.manifest.count(Split::Val), 8);
        let mut per_original: BTreeMap<&str, usize> = BTreeMap::new();
        for t in ds.split(Split::Train) {
            *per_original.entry(&t.id[..11]).or_default() += 1;
        }
        assert!(per_original.values().all(|&n| n == 8));
    }

    #[test]
    fn test_split_is_balanced_and_has_five_references() {
        let (triplets, _) = generate(&DatasetConfig {
            n_originals: 13,
            test_fraction: 0.3,
            ..DatasetConfig::default()
        })
        .unwrap();
        let test: Vec<_> = triplets.iter().filter(|t| t.split == Split::Test).collect();
        assert_eq!(test.len(), 31);
        let mut counts: BTreeMap<Category, usize> = BTreeMap::new();
        for t in &test {
            assert_eq!(t.captions.len(), 5);
            let distinct: std::collections::BTreeSet<_> = t.captions.iter().collect();
            assert_eq!(distinct.len(), 5);
            for c in &t.captions {
                assert_eq!(parse_caption(c).unwrap().category, t.category);
            }
            *counts.entry(t.category).or_default() += 1;
        }
        let (lo, hi) = (counts.values().min().unwrap(), counts.values().max().unwrap());
        assert_eq!(counts.len(), 6);
        assert!(hi - lo <= 1, "{counts:?}");
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        build_dataset(&small(5), a.path()).unwrap();
        build_dataset(&small(5), b.path()).unwrap();
        for f in ["manifest.json", "triplets.jsonl", "images/test-00001-ref.ppm"] {
            assert_eq!(
                fs::read(a.path().join(f)).unwrap(),
                fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
        let c = tempfile::tempdir().unwrap();
        build_dataset(&small(6), c.path()).unwrap();
        assert_ne!(
            fs::read(a.path().join("triplets.jsonl")).unwrap(),
            fs::read(c.path().join("triplets.jsonl")).unwrap()
        );
    }

    #[test]
    fn generation_independent_of_thread_count() {
        let cfg = small(9);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| generate(&cfg)).unwrap();
        let b = three.install(|| generate(&cfg)).unwrap();
        assert_eq!(a.0, b.0);
        assert!(a.1.iter().zip(&b.1).all(|(x, y)| x == y));
    }

    #[test]
    fn save_load_round_trip_and_recount() {
        let dir = tempfile::tempdir().unwrap();
        let built = build_dataset(&small(2), dir.path()).unwrap();
        let loaded = Dataset::load(dir.path()).unwrap();
        assert_eq!(loaded.triplets, built.triplets);
        assert_eq!(loaded.manifest, built.manifest);
        let t = &loaded.triplets[0];
        let (r, m) = loaded.load_pair(t).unwrap();
        assert_eq!((r.width(), m.height()), (48, 48));
    }

    #[test]
    fn vocab_covers_train_and_fits_caption_length() {
        let dir = tempfile::tempdir().unwrap();
        let ds = build_dataset(&small(3), dir.path()).unwrap();
        let vocab = ds.vocab();
        for t in ds.split(Split::Train) {
            let ids = tokenize(&t.captions[0], &vocab);
            assert_eq!(detokenize(&ids, &vocab), t.captions[0]);
            // BOS/EOS added by the model still fit in 24 positions
            assert!(ids.len() + 1 < 24);
        }
    }

    #[test]
    fn truncated_line_names_line_number() {
        let dir = tempfile::tempdir().unwrap();
        build_dataset(&small(4), dir.path()).unwrap();
        let path = dir.path().join(TRIPLETS_FILE);
        let text = fs::read_to_string(&path).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        let cut = &lines[2][..lines[2].len() / 2].to_string();
        lines[2] = cut;
        fs::write(&path, lines.join("\n")).unwrap();
        match Dataset::load(dir.path()) {
            Err(IdcError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_bad_records() {
        let dir = tempfile::tempdir().unwrap();
        build_dataset(&small(4), dir.path()).unwrap();
        let path = dir.path().join(TRIPLETS_FILE);
        let original = fs::read_to_string(&path).unwrap();

        fs::write(
            &path,
            original.replacen("\"category\":\"color\"", "\"category\":\"text\"", 1),
        )
        .unwrap();
        assert!(matches!(
            Dataset::load(dir.path()),
            Err(IdcError::Parse { line: 1, .. })
        ));

        fs::write(&path, &original).unwrap();
        fs::remove_file(dir.path().join("images/train-00000-3-mod.ppm")).unwrap();
        match Dataset::load(dir.path()) {
            Err(IdcError::Record { id, .. }) => assert_eq!(id, "train-00000-3"),
            other => panic!("expected record error, got {other:?}"),
        }
    }

    #[test]
    fn test_record_with_four_captions_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ds = build_dataset(&small(4), dir.path()).unwrap();
        let path = dir.path().join(TRIPLETS_FILE);
        let mut out = String::new();
        for t in &ds.triplets {
            let mut t = t.clone();
            if t.split == Split::Test && t.id == "test-00002" {
                t.captions.pop();
            }
            out.push_str(&serde_json::to_string(&t).unwrap());
            out.push('\n');
        }
        fs::write(&path, out).unwrap();
        match Dataset::load(dir.path()) {
            Err(IdcError::Record { id, .. }) => assert_eq!(id, "test-00002"),
            other => panic!("expected record error, got {other:?}"),
        }
    }
}
