//! Feature extraction from images into dataset files.

mod format;
mod manifest;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{Seek, Write};
use std::path::PathBuf;

use rayon::prelude::*;

pub use format::{
    decode_record, encode_record, record_len, DatasetReader, DatasetWriter, DATASET_VERSION,
    HEADER_LEN,
};
pub use manifest::{Manifest, ManifestEntry, Split};

use crate::degrade::{apply_level, DegradationLevel};
use crate::error::{Error, Result, ResultExt};
use crate::preprocess::{
    fft_features, prepare, resize_bilinear, stat_features, unfold_patches, RgbImage,
};
use crate::record::{Label, MultiViewRecord, RecordSource};
use crate::semantic::{ContentId, SemanticProvider};
use crate::train::StageData;

/// Images decoded and featurized concurrently before their records are
/// written in order.
const EXTRACT_CHUNK: usize = 16;

/// All four views of `img`, keyed by its content id.
pub fn extract_record(
    img: &RgbImage,
    label: Label,
    provider: &SemanticProvider,
    include_patches: bool,
) -> Result<MultiViewRecord> {
    extract_with_id(
        ContentId::of_image(img),
        img,
        label,
        provider,
        include_patches,
    )
}

/// Like [`extract_record`] but with the id supplied, for images that were
/// already resized after their id was taken.
pub fn extract_with_id(
    id: ContentId,
    img: &RgbImage,
    label: Label,
    provider: &SemanticProvider,
    include_patches: bool,
) -> Result<MultiViewRecord> {
    let x = prepare(img)?;
    Ok(MultiViewRecord {
        id,
        label,
        global: provider.descriptor(&id)?,
        fft: fft_features(&x)?,
        stat: stat_features(&x)?,
        patches: include_patches.then(|| unfold_patches(&x)),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OnError {
    /// Log and continue with the next image.
    Skip,
    #[default]
    Abort,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ExtractOptions {
    pub include_patches: bool,
    /// Applies to images that are missing or fail to decode.
    pub on_error: OnError,
}

#[derive(Debug, Default)]
pub struct ExtractSummary {
    pub written: u64,
    pub skipped: Vec<(PathBuf, String)>,
}

/// Extract every manifest entry, in manifest order, into `writer`.
pub fn extract<W: Write + Seek>(
    manifest: &Manifest,
    provider: &SemanticProvider,
    options: ExtractOptions,
    writer: &mut DatasetWriter<W>,
) -> Result<ExtractSummary> {
    if writer.patches_inline() != options.include_patches {
        return Err(Error::config(
            "writer patch flag disagrees with extraction options",
        ));
    }
    let mut summary = ExtractSummary::default();
    for chunk in manifest.entries.chunks(EXTRACT_CHUNK) {
        let results: Vec<Result<MultiViewRecord, (bool, Error)>> = chunk
            .par_iter()
            .map(|entry| {
                let img = RgbImage::open(&entry.path).map_err(|e| (true, e))?;
                extract_record(&img, entry.label, provider, options.include_patches)
                    .with_context(|| format!("extracting {}", entry.path.display()))
                    .map_err(|e| (false, e))
            })
            .collect();
        for (entry, result) in chunk.iter().zip(results) {
            match result {
                Ok(record) => {
                    writer.push(&record)?;
                    summary.written += 1;
                }
                Err((true, e)) if options.on_error == OnError::Skip => {
                    log::warn!("skipping {}: {e}", entry.path.display());
                    summary.skipped.push((entry.path.clone(), e.to_string()));
                }
                Err((_, e)) => return Err(e),
            }
        }
    }
    Ok(summary)
}

fn is_image_error(e: &Error) -> bool {
    matches!(e.root(), Error::Image(_) | Error::Io(_) | Error::Format(_))
}

/// Fills in missing patch matrices by re-reading the source image. Images
/// are matched to records by content id.
pub struct RecomputePatches<S: RecordSource> {
    inner: S,
    paths: HashMap<ContentId, PathBuf>,
}

impl<S: RecordSource> RecomputePatches<S> {
    /// Decodes every manifest image once to learn its content id.
    pub fn new(inner: S, manifest: &Manifest) -> Result<Self> {
        let ids = manifest
            .entries
            .par_iter()
            .filter_map(|e| match RgbImage::open(&e.path) {
                Ok(img) => Some(Ok((ContentId::of_image(&img), e.path.clone()))),
                Err(err) if is_image_error(&err) => {
                    log::warn!("{}: {err}", e.path.display());
                    None
                }
                Err(err) => Some(Err(err)),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RecomputePatches {
            inner,
            paths: ids.into_iter().collect(),
        })
    }
}

impl<S: RecordSource> RecordSource for RecomputePatches<S> {
    fn len(&self) -> usize {
        self.inner.len()
    }

    fn record(&self, index: usize) -> Result<MultiViewRecord> {
        let mut record = self.inner.record(index)?;
        if record.patches.is_none() {
            let path = self.paths.get(&record.id).ok_or_else(|| {
                Error::format(format!("no manifest image has content id {}", record.id))
            })?;
            let img = RgbImage::open(path)?;
            if ContentId::of_image(&img) != record.id {
                return Err(Error::format(format!(
                    "{} changed since extraction",
                    path.display()
                )));
            }
            record.patches = Some(unfold_patches(&prepare(&img)?));
        }
        Ok(record)
    }
}

/// Labeled images degraded on demand for progressive fine-tuning. Each
/// degraded image gets the content id of its degraded pixels.
pub struct ImageStageData {
    images: Vec<(RgbImage, Label)>,
    provider: SemanticProvider,
}

impl ImageStageData {
    pub fn new(images: Vec<(RgbImage, Label)>, provider: SemanticProvider) -> Self {
        ImageStageData { images, provider }
    }

    pub fn from_manifest(manifest: &Manifest, provider: SemanticProvider) -> Result<Self> {
        let images = manifest
            .entries
            .par_iter()
            .map(|e| Ok((RgbImage::open(&e.path)?, e.label)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(images, provider))
    }
}

/// Degraded images, stored at model resolution.
pub struct DegradedSource<'a> {
    items: Vec<(ContentId, Label, RgbImage)>,
    provider: &'a SemanticProvider,
}

impl RecordSource for DegradedSource<'_> {
    fn len(&self) -> usize {
        self.items.len()
    }

    fn record(&self, index: usize) -> Result<MultiViewRecord> {
        let (id, label, img) = self.items.get(index).ok_or(Error::Index {
            index,
            len: self.items.len(),
        })?;
        extract_with_id(*id, img, *label, self.provider, true)
    }
}

impl StageData for ImageStageData {
    fn degraded(&self, level: DegradationLevel) -> Result<Box<dyn RecordSource + '_>> {
        let items = self
            .images
            .par_iter()
            .map(|(img, label)| {
                let d = apply_level(img, level)?;
                Ok((ContentId::of_image(&d), *label, resize_bilinear(&d)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Box::new(DegradedSource {
            items,
            provider: &self.provider,
        }))
    }
}

fn list(out: &mut String, name: &str, values: &[f32]) {
    write!(out, "{name} ({}):", values.len()).unwrap();
    for v in values {
        write!(out, " {v}").unwrap();
    }
    out.push('\n');
}

/// Human-readable dump of a record. Patch rows are included when `patches`
/// is set and the record carries them.
pub fn describe_record(record: &MultiViewRecord, patches: bool) -> String {
    let mut out = String::new();
    writeln!(out, "id: {}", record.id).unwrap();
    writeln!(out, "label: {} ({})", record.label as u8, record.label).unwrap();
    list(&mut out, "global", record.global.as_slice());
    list(&mut out, "fft", record.fft.as_slice());
    list(&mut out, "stat", record.stat.as_slice());
    match (&record.patches, patches) {
        (Some(p), true) => {
            for i in 0..crate::preprocess::PATCH_COUNT {
                list(&mut out, &format!("patch[{i}]"), p.row(i));
            }
        }
        (Some(_), false) => writeln!(out, "patches: present (2401x243)").unwrap(),
        (None, _) => writeln!(out, "patches: not stored").unwrap(),
    }
    out
}
