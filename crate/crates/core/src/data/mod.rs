//! Labeled image collections, their on-disk layout, and train/test splits.
//!
//! Directory datasets follow `root/<class>/<sample_group>/<image>.ppm`.
//! Classes, groups and files are visited in lexicographic order, so item
//! order depends only on the directory contents.

pub mod netpbm;
mod splits;
mod synthetic;

pub use netpbm::{load_netpbm, load_ppm, save_pgm, save_ppm, PixelMapping};
pub use splits::{fixed_list_split, holdout_split, kth_style_splits, SplitMode, SplitPlan};
pub use synthetic::{gen_synthetic, GratingClass, SyntheticSpec};

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Item {
    /// `[C, S, S]` with samples in `[0, 1]`.
    pub image: Tensor,
    pub label: usize,
    /// Index of the item's sample group within its class.
    pub group: usize,
    /// Path relative to the dataset root, `/`-separated, for file-backed items.
    pub path: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub classes: Vec<String>,
    pub items: Vec<Item>,
    /// Side length every image was scaled to.
    pub image_size: usize,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.items.first().map_or(0, |i| i.image.shape()[0])
    }

    /// Number of distinct sample groups of each class.
    pub fn groups_per_class(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes()];
        for it in &self.items {
            counts[it.label] = counts[it.label].max(it.group + 1);
        }
        counts
    }

    /// Checks dense labels and consistent image shapes.
    pub fn validate(&self) -> Result<()> {
        let k = self.num_classes();
        let mut seen = vec![false; k];
        for (i, it) in self.items.iter().enumerate() {
            if it.label >= k {
                return Err(Error::Ingestion(format!(
                    "item {i} has label {} of {k}",
                    it.label
                )));
            }
            seen[it.label] = true;
            let s = it.image.shape();
            if s.len() != 3 || s[1] != self.image_size || s[2] != self.image_size {
                return Err(Error::Ingestion(format!(
                    "item {i} has shape {s:?}, expected [C, {0}, {0}]",
                    self.image_size
                )));
            }
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::Ingestion(format!(
                "class {} has no items",
                self.classes[missing]
            )));
        }
        Ok(())
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

fn is_image(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("ppm") || e.eq_ignore_ascii_case("pgm"))
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Loads every image under `root`, scaled (nearest neighbour) to
/// `image_size × image_size` with three channels; graymaps are replicated.
/// Images placed directly in a class directory form one extra group.
pub fn ingest_directory(root: impl AsRef<Path>, image_size: usize) -> Result<Dataset> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::Ingestion(format!(
            "{} is not a directory",
            root.display()
        )));
    }
    if image_size == 0 {
        return Err(Error::arg("image size must be positive"));
    }
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    if class_dirs.is_empty() {
        return Err(Error::Ingestion(format!(
            "{} contains no class directories",
            root.display()
        )));
    }

    let mut classes = Vec::with_capacity(class_dirs.len());
    let mut items = Vec::new();
    for (label, class_dir) in class_dirs.iter().enumerate() {
        let class = file_name(class_dir);
        let entries = sorted_entries(class_dir)?;
        let mut groups: Vec<(String, Vec<PathBuf>)> = Vec::new();
        let loose: Vec<PathBuf> = entries.iter().filter(|p| is_image(p)).cloned().collect();
        if !loose.is_empty() {
            groups.push((String::new(), loose));
        }
        for dir in entries.iter().filter(|p| p.is_dir()) {
            let files: Vec<PathBuf> = sorted_entries(dir)?
                .into_iter()
                .filter(|p| is_image(p))
                .collect();
            if !files.is_empty() {
                groups.push((file_name(dir), files));
            }
        }
        if groups.is_empty() {
            return Err(Error::Ingestion(format!(
                "class {class} contains no images"
            )));
        }
        for (group, (group_name, files)) in groups.into_iter().enumerate() {
            for file in files {
                let raw = load_netpbm(&file)?;
                let rgb = if raw.shape()[0] == 1 {
                    let plane = raw.data();
                    let data = plane.iter().chain(plane).chain(plane).copied().collect();
                    Tensor::new(&[3, raw.shape()[1], raw.shape()[2]], data)?
                } else {
                    raw
                };
                let image = netpbm::resize_nearest(&rgb, image_size, image_size)?;
                let mut rel = vec![class.clone()];
                if !group_name.is_empty() {
                    rel.push(group_name.clone());
                }
                rel.push(file_name(&file));
                items.push(Item {
                    image,
                    label,
                    group,
                    path: Some(rel.join("/")),
                });
            }
        }
        classes.push(class);
    }
    let ds = Dataset {
        classes,
        items,
        image_size,
    };
    ds.validate()?;
    Ok(ds)
}
