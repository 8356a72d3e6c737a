//! Global semantic descriptors.
//!
//! The 768-d descriptor comes either from an embedding file produced by an
//! external backbone, or from a deterministic stub keyed by the image's
//! content id.
//!
//! Embedding file layout (little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SPCE"
//! 4       4     version (u32) = 1
//! 8       8     record count (u64)
//! 16      4     dimension (u32) = 768
//! 20      ...   count × { content id [32 bytes], 768 × f32 }
//! ```

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result, ResultExt};
use crate::preprocess::RgbImage;

pub const GLOBAL_DIM: usize = 768;

const SPCE_MAGIC: &[u8; 4] = b"SPCE";
const SPCE_VERSION: u32 = 1;
const SPCE_HEADER: usize = 20;
const SPCE_RECORD: usize = 32 + 4 * GLOBAL_DIM;

/// SHA-256 of `width (u32 LE) ‖ height (u32 LE) ‖ RGB bytes` of the decoded,
/// pre-resize image.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContentId(pub [u8; 32]);

impl ContentId {
    pub fn of_image(img: &RgbImage) -> Self {
        let mut h = Sha256::new();
        h.update((img.width() as u32).to_le_bytes());
        h.update((img.height() as u32).to_le_bytes());
        h.update(img.pixels());
        ContentId(h.finalize().into())
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Display for ContentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for ContentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContentId({})", &self.to_hex()[..16])
    }
}

/// Exactly 768 finite values.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalDescriptor(Vec<f32>);

impl GlobalDescriptor {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.len() != GLOBAL_DIM {
            return Err(Error::shape(format!(
                "global descriptor needs {GLOBAL_DIM} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(
                "global descriptor contains a non-finite value",
            ));
        }
        Ok(GlobalDescriptor(values))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }
}

/// Deterministic unit-norm pseudo-random descriptor seeded by `id`.
pub fn stub(id: &ContentId) -> GlobalDescriptor {
    let mut rng = ChaCha8Rng::from_seed(id.0);
    let raw: Vec<f64> = (0..GLOBAL_DIM)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    GlobalDescriptor(raw.iter().map(|v| (v / norm) as f32).collect())
}

/// An in-memory embedding file with an id index.
#[derive(Clone, Debug, Default)]
pub struct EmbeddingFile {
    ids: Vec<ContentId>,
    vectors: Vec<GlobalDescriptor>,
    index: HashMap<ContentId, usize>,
}

impl EmbeddingFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Add a record. Re-inserting an id with the same vector is a no-op;
    /// with a different vector it is an error.
    pub fn insert(&mut self, id: ContentId, descriptor: GlobalDescriptor) -> Result<()> {
        if let Some(&i) = self.index.get(&id) {
            if self.vectors[i] == descriptor {
                return Ok(());
            }
            return Err(Error::format(format!(
                "conflicting embeddings for content id {id}"
            )));
        }
        self.index.insert(id, self.ids.len());
        self.ids.push(id);
        self.vectors.push(descriptor);
        Ok(())
    }

    pub fn lookup(&self, id: &ContentId) -> Result<&GlobalDescriptor> {
        self.index
            .get(id)
            .map(|&i| &self.vectors[i])
            .ok_or(Error::MissingEmbedding(*id))
    }

    pub fn contains(&self, id: &ContentId) -> bool {
        self.index.contains_key(id)
    }

    pub fn ids(&self) -> &[ContentId] {
        &self.ids
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(SPCE_MAGIC)?;
        w.write_all(&SPCE_VERSION.to_le_bytes())?;
        w.write_all(&(self.ids.len() as u64).to_le_bytes())?;
        w.write_all(&(GLOBAL_DIM as u32).to_le_bytes())?;
        for (id, v) in self.ids.iter().zip(&self.vectors) {
            w.write_all(&id.0)?;
            for x in v.as_slice() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        self.write_to(BufWriter::new(f))
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; SPCE_HEADER];
        r.read_exact(&mut header)
            .map_err(|_| Error::format("embedding file shorter than its header"))?;
        if &header[0..4] != SPCE_MAGIC {
            return Err(Error::format("bad embedding file magic"));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != SPCE_VERSION {
            return Err(Error::format(format!(
                "unsupported embedding file version {version}"
            )));
        }
        let count = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(header[16..20].try_into().unwrap()) as usize;
        if dim != GLOBAL_DIM {
            return Err(Error::format(format!(
                "embedding dimension {dim}, expected {GLOBAL_DIM}"
            )));
        }
        let mut file = EmbeddingFile::new();
        let mut rec = vec![0u8; SPCE_RECORD];
        for i in 0..count {
            r.read_exact(&mut rec).map_err(|_| {
                Error::format(format!("embedding file truncated at record {i} of {count}"))
            })?;
            let id = ContentId(rec[..32].try_into().unwrap());
            let values = rec[32..]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            if file.contains(&id) {
                return Err(Error::format(format!(
                    "duplicate content id {id} in embedding file"
                )));
            }
            file.insert(id, GlobalDescriptor::new(values)?)?;
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::format("trailing bytes after embedding records"));
        }
        Ok(file)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        Self::read_from(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
    }
}

/// Where global descriptors come from.
#[derive(Clone, Debug)]
pub enum SemanticProvider {
    Stub,
    File {
        embeddings: EmbeddingFile,
        fallback_to_stub: bool,
    },
}

impl SemanticProvider {
    pub fn descriptor(&self, id: &ContentId) -> Result<GlobalDescriptor> {
        match self {
            SemanticProvider::Stub => Ok(stub(id)),
            SemanticProvider::File {
                embeddings,
                fallback_to_stub,
            } => match embeddings.lookup(id) {
                Ok(v) => Ok(v.clone()),
                Err(Error::MissingEmbedding(_)) if *fallback_to_stub => Ok(stub(id)),
                Err(e) => Err(e),
            },
        }
    }
}
