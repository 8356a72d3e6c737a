//! SPDS dataset files.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SPDS"
//! 4       4     version (u32) = 1
//! 8       4     flags (u32); bit 0 = patch matrices stored inline
//! 12      8     record count (u64)
//! 20      ...   count × fixed-size record
//! ```
//!
//! A record is `content id [32] ‖ label (u8, 0 = real, 1 = fake) ‖ 768 ×
//! f32 global ‖ 9 × f32 spectral ‖ 8 × f32 statistics`, followed by
//! `2401 × 243 × f32` patch values (row-major) when bit 0 is set. Without
//! patches a record is 3173 bytes. All values are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;
use std::sync::Mutex;

use crate::error::{Error, Result, ResultExt};
use crate::preprocess::{
    FftFeatures, PatchMatrix, StatFeatures, FFT_FEATURES, PATCH_COUNT, PATCH_DIM, STAT_FEATURES,
};
use crate::record::{Label, MultiViewRecord, RecordSource};
use crate::semantic::{ContentId, GlobalDescriptor, GLOBAL_DIM};

const MAGIC: &[u8; 4] = b"SPDS";
pub const DATASET_VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 20;
const FLAG_PATCHES: u32 = 1;
const COUNT_OFFSET: u64 = 12;

/// Bytes per record for the given flag.
pub const fn record_len(patches_inline: bool) -> usize {
    let compact = 32 + 1 + 4 * (GLOBAL_DIM + FFT_FEATURES + STAT_FEATURES);
    if patches_inline {
        compact + 4 * PATCH_COUNT * PATCH_DIM
    } else {
        compact
    }
}

fn put_f32s(buf: &mut Vec<u8>, values: &[f32]) {
    buf.reserve(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn get_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect()
}

pub fn encode_record(record: &MultiViewRecord, patches_inline: bool) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(record_len(patches_inline));
    buf.extend_from_slice(&record.id.0);
    buf.push(record.label as u8);
    put_f32s(&mut buf, record.global.as_slice());
    put_f32s(&mut buf, record.fft.as_slice());
    put_f32s(&mut buf, record.stat.as_slice());
    if patches_inline {
        put_f32s(&mut buf, record.patches()?.data());
    }
    debug_assert_eq!(buf.len(), record_len(patches_inline));
    Ok(buf)
}

pub fn decode_record(bytes: &[u8], patches_inline: bool) -> Result<MultiViewRecord> {
    if bytes.len() != record_len(patches_inline) {
        return Err(Error::format(format!("record of {} bytes", bytes.len())));
    }
    let id = ContentId(bytes[..32].try_into().unwrap());
    let label = Label::from_u8(bytes[32])?;
    let mut at = 33;
    let mut take = |n: usize| {
        let values = get_f32s(&bytes[at..at + 4 * n]);
        at += 4 * n;
        values
    };
    let global = GlobalDescriptor::new(take(GLOBAL_DIM))?;
    let fft = FftFeatures(take(FFT_FEATURES).try_into().unwrap());
    let stat = StatFeatures(take(STAT_FEATURES).try_into().unwrap());
    let patches = if patches_inline {
        Some(PatchMatrix::from_vec(take(PATCH_COUNT * PATCH_DIM))?)
    } else {
        None
    };
    Ok(MultiViewRecord {
        id,
        label,
        global,
        fft,
        stat,
        patches,
    })
}

/// Appends records and fixes up the header count on [`finish`](Self::finish).
pub struct DatasetWriter<W: Write + Seek> {
    out: W,
    patches_inline: bool,
    count: u64,
}

impl DatasetWriter<BufWriter<File>> {
    pub fn create(path: &Path, patches_inline: bool) -> Result<Self> {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        Self::new(BufWriter::new(f), patches_inline)
    }
}

impl<W: Write + Seek> DatasetWriter<W> {
    pub fn new(mut out: W, patches_inline: bool) -> Result<Self> {
        out.write_all(MAGIC)?;
        out.write_all(&DATASET_VERSION.to_le_bytes())?;
        let flags = if patches_inline { FLAG_PATCHES } else { 0 };
        out.write_all(&flags.to_le_bytes())?;
        out.write_all(&0u64.to_le_bytes())?;
        Ok(DatasetWriter {
            out,
            patches_inline,
            count: 0,
        })
    }

    pub fn patches_inline(&self) -> bool {
        self.patches_inline
    }

    pub fn push(&mut self, record: &MultiViewRecord) -> Result<()> {
        self.out
            .write_all(&encode_record(record, self.patches_inline)?)?;
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Write the final count and flush; returns the sink.
    pub fn finish(mut self) -> Result<W> {
        self.out.seek(SeekFrom::Start(COUNT_OFFSET))?;
        self.out.write_all(&self.count.to_le_bytes())?;
        self.out.seek(SeekFrom::End(0))?;
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Random-access reader. Safe to share between threads.
pub struct DatasetReader<R: Read + Seek = BufReader<File>> {
    inner: Mutex<R>,
    patches_inline: bool,
    count: usize,
}

impl DatasetReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        Self::new(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
    }
}

impl<R: Read + Seek> DatasetReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut header = [0u8; HEADER_LEN as usize];
        inner.seek(SeekFrom::Start(0))?;
        inner
            .read_exact(&mut header)
            .map_err(|_| Error::format("dataset shorter than its header"))?;
        if &header[0..4] != MAGIC {
            return Err(Error::format("bad dataset magic"));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != DATASET_VERSION {
            return Err(Error::format(format!(
                "unsupported dataset version {version}"
            )));
        }
        let flags = u32::from_le_bytes(header[8..12].try_into().unwrap());
        if flags & !FLAG_PATCHES != 0 {
            return Err(Error::format(format!("unknown dataset flags {flags:#x}")));
        }
        let patches_inline = flags & FLAG_PATCHES != 0;
        let count = u64::from_le_bytes(header[12..20].try_into().unwrap());
        let len = inner.seek(SeekFrom::End(0))?;
        let expected = (count as u128) * record_len(patches_inline) as u128 + HEADER_LEN as u128;
        if len as u128 != expected {
            return Err(Error::format(format!(
                "dataset is {len} bytes but its header implies {expected}"
            )));
        }
        Ok(DatasetReader {
            inner: Mutex::new(inner),
            patches_inline,
            count: count as usize,
        })
    }

    pub fn patches_inline(&self) -> bool {
        self.patches_inline
    }

    pub fn read_record(&self, index: usize) -> Result<MultiViewRecord> {
        if index >= self.count {
            return Err(Error::Index {
                index,
                len: self.count,
            });
        }
        let size = record_len(self.patches_inline);
        let mut buf = vec![0u8; size];
        {
            let mut r = self.inner.lock().unwrap_or_else(|e| e.into_inner());
            r.seek(SeekFrom::Start(HEADER_LEN + (index * size) as u64))?;
            r.read_exact(&mut buf)?;
        }
        decode_record(&buf, self.patches_inline).with_context(|| format!("record {index}"))
    }
}

impl<R: Read + Seek + Send> RecordSource for DatasetReader<R> {
    fn len(&self) -> usize {
        self.count
    }

    fn record(&self, index: usize) -> Result<MultiViewRecord> {
        self.read_record(index)
    }
}
