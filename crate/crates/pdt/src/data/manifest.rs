//! Dataset manifest: plain-text CSV `id,domain,split,path` with a header
//! row, LF line endings, paths relative to the manifest's directory.

use crate::error::{Error, Result};
use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            _ => Err(Error::Data(format!("unknown domain '{s}'"))),
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    EvalGallery,
    EvalProbe,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::EvalGallery => "eval_gallery",
            Split::EvalProbe => "eval_probe",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "eval_gallery" => Ok(Split::EvalGallery),
            "eval_probe" => Ok(Split::EvalProbe),
            _ => Err(Error::Data(format!("unknown split '{s}'"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub id: u32,
    pub domain: Domain,
    pub split: Split,
    pub path: String,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    /// Base directory that row paths are relative to.
    pub dir: PathBuf,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        match lines.next() {
            Some("id,domain,split,path") => {}
            other => {
                return Err(Error::Data(format!(
                    "{}: bad or missing header row: {:?}",
                    path.display(),
                    other
                )))
            }
        }
        let mut rows = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 4 {
                return Err(Error::Data(format!(
                    "{} line {}: expected 4 fields, got {}",
                    path.display(),
                    lineno + 2,
                    parts.len()
                )));
            }
            rows.push(ManifestRow {
                id: parts[0]
                    .parse()
                    .map_err(|_| Error::Data(format!("bad id '{}'", parts[0])))?,
                domain: Domain::parse(parts[1])?,
                split: Split::parse(parts[2])?,
                path: parts[3].to_string(),
            });
        }
        let dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        let m = Manifest { rows, dir };
        m.validate()?;
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = String::from("id,domain,split,path\n");
        for r in &self.rows {
            text.push_str(&format!("{},{},{},{}\n", r.id, r.domain, r.split, r.path));
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Absolute path of a row's image file.
    pub fn resolve(&self, row: &ManifestRow) -> PathBuf {
        self.dir.join(&row.path)
    }

    pub fn ids_in_split(&self, split: Split) -> BTreeSet<u32> {
        self.rows
            .iter()
            .filter(|r| r.split == split)
            .map(|r| r.id)
            .collect()
    }

    pub fn rows_in(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    /// Identity-disjointness and closed-set invariants.
    pub fn validate(&self) -> Result<()> {
        let train: BTreeSet<u32> = self
            .rows
            .iter()
            .filter(|r| matches!(r.split, Split::Train | Split::Val))
            .map(|r| r.id)
            .collect();
        let eval: BTreeSet<u32> = self
            .rows
            .iter()
            .filter(|r| matches!(r.split, Split::EvalGallery | Split::EvalProbe))
            .map(|r| r.id)
            .collect();
        if let Some(id) = train.intersection(&eval).next() {
            return Err(Error::Data(format!(
                "identity {id} appears in both train/val and eval splits"
            )));
        }
        let gallery = self.ids_in_split(Split::EvalGallery);
        for id in self.ids_in_split(Split::EvalProbe) {
            if !gallery.contains(&id) {
                return Err(Error::Data(format!(
                    "probe identity {id} missing from eval gallery (closed-set violation)"
                )));
            }
        }
        Ok(())
    }
}
