use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result, ResultExt};
use crate::record::Label;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::format(format!(
                "split must be train, val or test, got {other:?}"
            ))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Resolved against the manifest's directory when relative.
    pub path: PathBuf,
    pub label: Label,
    pub split: Split,
}

/// Rows of `path,label,split` with a header line.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(f, base).with_context(|| format!("reading {}", path.display()))
    }

    pub fn parse<R: Read>(reader: R, base: &Path) -> Result<Self> {
        let mut csv = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = csv.headers()?.clone();
        let column = |name: &str| {
            headers
                .iter()
                .position(|h| h.eq_ignore_ascii_case(name))
                .ok_or_else(|| Error::format(format!("manifest has no {name:?} column")))
        };
        let (pc, lc, sc) = (column("path")?, column("label")?, column("split")?);
        let mut entries = Vec::new();
        for (i, row) in csv.records().enumerate() {
            let row = row?;
            let field = |c: usize| row.get(c).unwrap_or("");
            let line = i + 2;
            let raw = field(pc);
            if raw.is_empty() {
                return Err(Error::format(format!("manifest line {line}: empty path")));
            }
            entries.push(ManifestEntry {
                path: base.join(raw),
                label: field(lc)
                    .parse()
                    .with_context(|| format!("manifest line {line}"))?,
                split: field(sc)
                    .parse()
                    .with_context(|| format!("manifest line {line}"))?,
            });
        }
        Ok(Manifest { entries })
    }

    pub fn filter(&self, split: Split) -> Manifest {
        Manifest {
            entries: self
                .entries
                .iter()
                .filter(|e| e.split == split)
                .cloned()
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
