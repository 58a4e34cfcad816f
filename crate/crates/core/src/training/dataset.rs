use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::resample::resize_bicubic;

/// Name of the optional manifest inside a dataset folder.
pub const MANIFEST: &str = "index.tsv";

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "JPG"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetEntry {
    pub path: PathBuf,
    pub split: String,
    pub captions: Vec<String>,
}

/// A folder of RGB images, optionally described by `index.tsv`.
///
/// Manifest lines are `path<TAB>split[<TAB>caption]...`; paths are relative
/// to the folder and `#` starts a comment line. Without a manifest every
/// image file in the folder (non-recursive, sorted) belongs to split `all`.
#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
    entries: Vec<DatasetEntry>,
}

impl Dataset {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        if !root.is_dir() {
            return Err(Error::Dataset(format!("{} is not a directory", root.display())));
        }
        let manifest = root.join(MANIFEST);
        let entries = if manifest.exists() {
            parse_manifest(&fs::read_to_string(&manifest)?, &root)?
        } else {
            let mut paths: Vec<PathBuf> = fs::read_dir(&root)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.extension()
                        .and_then(|e| e.to_str())
                        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e))
                })
                .collect();
            paths.sort();
            paths
                .into_iter()
                .map(|path| DatasetEntry {
                    path,
                    split: "all".into(),
                    captions: Vec::new(),
                })
                .collect()
        };
        Ok(Self { root, entries })
    }

    pub fn from_entries(root: impl Into<PathBuf>, entries: Vec<DatasetEntry>) -> Self {
        Self {
            root: root.into(),
            entries,
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entries(&self) -> &[DatasetEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries of one split; `None` keeps everything.
    pub fn split(&self, name: Option<&str>) -> Self {
        match name {
            None => self.clone(),
            Some(name) => Self {
                root: self.root.clone(),
                entries: self.entries.iter().filter(|e| e.split == name).cloned().collect(),
            },
        }
    }
}

fn parse_manifest(text: &str, root: &Path) -> Result<Vec<DatasetEntry>> {
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let path = fields.next().unwrap_or_default().trim();
        let split = fields.next().map(str::trim).unwrap_or_default();
        if path.is_empty() || split.is_empty() {
            return Err(Error::Dataset(format!(
                "{MANIFEST} line {}: expected `path<TAB>split`",
                n + 1
            )));
        }
        entries.push(DatasetEntry {
            path: root.join(path),
            split: split.to_string(),
            captions: fields.map(str::trim).filter(|c| !c.is_empty()).map(String::from).collect(),
        });
    }
    Ok(entries)
}

/// Reads an image as RGB, center-crops it square and resizes it to `side`.
pub fn load_square(path: &Path, side: usize) -> Result<ImageTensor> {
    let img = ImageTensor::open(path)?;
    let s = img.height().min(img.width());
    let (y0, x0) = ((img.height() - s) / 2, (img.width() - s) / 2);
    let cropped = if img.height() == img.width() {
        img
    } else {
        ImageTensor::from_fn(3, s, s, img.space(), |c, y, x| img.get(c, y + y0, x + x0))
    };
    resize_bicubic(&cropped, side, side)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_parsing() {
        let root = Path::new("/data");
        let e = parse_manifest("# header\na.png\ttrain\tA red car\tSome car\nb.png\ttest\n\n", root).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e[0].captions, vec!["A red car", "Some car"]);
        assert_eq!(e[1].path, root.join("b.png"));
        assert!(e[1].captions.is_empty());
        assert!(parse_manifest("lonely.png\n", root).is_err());
    }
}
