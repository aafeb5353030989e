use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::build::DatasetConfig;
use super::vocab::Vocab;
use crate::error::{IdcError, Result};
use crate::imaging::{Category, Raster};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRIPLETS_FILE: &str = "triplets.jsonl";
pub const TEST_REFERENCES: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn key(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// One JSON-Lines record. Image paths are relative to the dataset root.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Triplet {
    pub id: String,
    #[serde(rename = "ref")]
    pub ref_image: String,
    #[serde(rename = "mod")]
    pub mod_image: String,
    pub captions: Vec<String>,
    pub category: Category,
    #[serde(rename = "variant")]
    pub variant_index: usize,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub seed: u64,
    pub config: DatasetConfig,
    pub counts: BTreeMap<Split, usize>,
    pub per_category: BTreeMap<Split, BTreeMap<Category, usize>>,
    pub files: Vec<String>,
}

impl DatasetManifest {
    pub(crate) fn tally(config: &DatasetConfig, triplets: &[Triplet], files: Vec<String>) -> Self {
        let (counts, per_category) = recount(triplets);
        DatasetManifest {
            format_version: FORMAT_VERSION,
            seed: config.seed,
            config: config.clone(),
            counts,
            per_category,
            files,
        }
    }

    pub fn count(&self, split: Split) -> usize {
        self.counts.get(&split).copied().unwrap_or(0)
    }

    /// Markdown table of per-split, per-category counts.
    pub fn summary_table(&self) -> String {
        let mut out = String::from("| split | total |");
        for c in Category::ALL {
            out.push_str(&format!(" {} |", c.title()));
        }
        out.push_str("\n|---|---|");
        out.push_str(&"---|".repeat(Category::ALL.len()));
        out.push('\n');
        for s in Split::ALL {
            out.push_str(&format!("| {} | {} |", s.key(), self.count(s)));
            for c in Category::ALL {
                let n = self.per_category.get(&s).and_then(|m| m.get(&c)).copied().unwrap_or(0);
                out.push_str(&format!(" {n} |"));
            }
            out.push('\n');
        }
        out
    }
}

type Counts = (BTreeMap<Split, usize>, BTreeMap<Split, BTreeMap<Category, usize>>);

fn recount(triplets: &[Triplet]) -> Counts {
    let mut counts: BTreeMap<Split, usize> = Split::ALL.iter().map(|&s| (s, 0)).collect();
    let mut per_category: BTreeMap<Split, BTreeMap<Category, usize>> = Split::ALL
        .iter()
        .map(|&s| (s, Category::ALL.iter().map(|&c| (c, 0)).collect()))
        .collect();
    for t in triplets {
        *counts.get_mut(&t.split).unwrap() += 1;
        *per_category.get_mut(&t.split).unwrap().get_mut(&t.category).unwrap() += 1;
    }
    (counts, per_category)
}

/// A dataset on disk: manifest plus records, images loaded on demand.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub triplets: Vec<Triplet>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Triplet> {
        self.triplets.iter().filter(move |t| t.split == split)
    }

    pub fn load_pair(&self, t: &Triplet) -> Result<(Raster, Raster)> {
        Ok((
            Raster::load_ppm(&self.root.join(&t.ref_image))?,
            Raster::load_ppm(&self.root.join(&t.mod_image))?,
        ))
    }

    /// Vocabulary over this dataset's train captions only.
    pub fn vocab(&self) -> Vocab {
        Vocab::build(
            self.split(Split::Train)
                .flat_map(|t| t.captions.iter().map(String::as_str)),
        )
    }

    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let manifest_path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path).map_err(|e| IdcError::io(&manifest_path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| IdcError::Parse {
            path: manifest_path.clone(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(IdcError::Parse {
                path: manifest_path,
                line: 1,
                message: format!(
                    "format version {} is not supported (expected {FORMAT_VERSION})",
                    manifest.format_version
                ),
            });
        }

        let path = root.join(TRIPLETS_FILE);
        let mut triplets = Vec::new();
        let mut seen = HashSet::new();
        for t in read_jsonl::<Triplet>(&path)? {
            validate(&root, &manifest, &t)?;
            if !seen.insert(t.id.clone()) {
                return Err(record(&t.id, "duplicate id"));
            }
            triplets.push(t);
        }

        let (counts, per_category) = recount(&triplets);
        if counts != manifest.counts || per_category != manifest.per_category {
            return Err(IdcError::Record {
                id: MANIFEST_FILE.into(),
                message: format!(
                    "manifest counts {:?} disagree with records {:?}",
                    manifest.counts, counts
                ),
            });
        }
        Ok(Dataset {
            root,
            manifest,
            triplets,
        })
    }

    pub(crate) fn save(&self, images: &[(String, Raster)]) -> Result<()> {
        let img_dir = self.root.join("images");
        fs::create_dir_all(&img_dir).map_err(|e| IdcError::io(&img_dir, e))?;
        for (rel, img) in images {
            img.save_ppm(&self.root.join(rel))?;
        }
        write_jsonl(&self.root.join(TRIPLETS_FILE), &self.triplets)?;
        let mut manifest = serde_json::to_vec_pretty(&self.manifest)?;
        manifest.push(b'\n');
        write_file(&self.root.join(MANIFEST_FILE), &manifest)
    }
}

/// One JSON value per non-blank line; parse errors carry the line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| IdcError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| IdcError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| IdcError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for t in items {
        serde_json::to_writer(&mut buf, t)?;
        buf.push(b'\n');
    }
    write_file(path, &buf)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| IdcError::io(path, e))?;
    f.write_all(bytes).map_err(|e| IdcError::io(path, e))
}

fn record(id: &str, message: impl Into<String>) -> IdcError {
    IdcError::Record {
        id: id.to_string(),
        message: message.into(),
    }
}

fn validate(root: &Path, manifest: &DatasetManifest, t: &Triplet) -> Result<()> {
    match t.split {
        Split::Train if t.captions.is_empty() => return Err(record(&t.id, "train triplet has no caption")),
        Split::Test if t.captions.len() != TEST_REFERENCES => {
            return Err(record(
                &t.id,
                format!(
                    "test triplet has {} captions, expected {TEST_REFERENCES}",
                    t.captions.len()
                ),
            ))
        }
        Split::Val if t.captions.is_empty() => return Err(record(&t.id, "val triplet has no caption")),
        _ => {}
    }
    if t.variant_index >= manifest.config.variants_per_original {
        return Err(record(&t.id, format!("variant {} out of range", t.variant_index)));
    }
    for rel in [&t.ref_image, &t.mod_image] {
        if !root.join(rel).is_file() {
            return Err(record(&t.id, format!("missing image {rel}")));
        }
    }
    Ok(())
}
