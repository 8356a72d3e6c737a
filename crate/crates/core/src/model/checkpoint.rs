//! Checkpoint files.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SPCK"
//! 4       4     version (u32) = 1
//! 8       4     flags (u32); bit 0 = optimizer state present
//! 12      8     optimizer step counter (u64), 0 without optimizer state
//! 20      4     section count (u32)
//! 24      ...   sections
//! ```
//!
//! Each section is `name length (u32) ‖ UTF-8 name ‖ rank (u32) ‖ rank × dim
//! (u32) ‖ values (f32)`. All integers and floats are little-endian.
//! Parameter sections use the names from the parameter layout
//! (`global.w1`, …). Optimizer moments are stored as `adamw.m/<name>` and
//! `adamw.v/<name>`. Sections may appear in any order; writers emit the
//! parameters in layout order followed by first and then second moments.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::{ModelParams, PARAM_LAYOUT};
use crate::error::{Error, Result, ResultExt};
use crate::tensor::Tensor;
use crate::train::OptimizerState;

const MAGIC: &[u8; 4] = b"SPCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const FLAG_OPTIMIZER: u32 = 1;
const FIRST_MOMENT: &str = "adamw.m/";
const SECOND_MOMENT: &str = "adamw.v/";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn new(params: ModelParams) -> Self {
        Checkpoint {
            params,
            optimizer: None,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut sections: Vec<(String, &Tensor)> = self
            .params
            .iter()
            .map(|(id, t)| (id.spec().name.to_string(), t))
            .collect();
        let (flags, step) = match &self.optimizer {
            Some(state) => {
                for (id, t) in state.first_moment().iter() {
                    sections.push((format!("{FIRST_MOMENT}{}", id.spec().name), t));
                }
                for (id, t) in state.second_moment().iter() {
                    sections.push((format!("{SECOND_MOMENT}{}", id.spec().name), t));
                }
                (FLAG_OPTIMIZER, state.step())
            }
            None => (0, 0),
        };

        w.write_all(MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&flags.to_le_bytes())?;
        w.write_all(&step.to_le_bytes())?;
        w.write_all(&(sections.len() as u32).to_le_bytes())?;
        for (name, t) in sections {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        self.write_to(BufWriter::new(f))
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 24];
        r.read_exact(&mut header)
            .map_err(|_| Error::format("checkpoint shorter than its header"))?;
        if &header[0..4] != MAGIC {
            return Err(Error::format("bad checkpoint magic"));
        }
        let version = u32_at(&header, 4);
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let flags = u32_at(&header, 8);
        let step = u64::from_le_bytes(header[12..20].try_into().unwrap());
        let count = u32_at(&header, 20) as usize;

        let mut sections = HashMap::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            if name_len > 4096 {
                return Err(Error::format("implausible section name length"));
            }
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name =
                String::from_utf8(name).map_err(|_| Error::format("section name is not UTF-8"))?;
            let rank = read_u32(&mut r)? as usize;
            if rank > 8 {
                return Err(Error::format(format!("section {name} has rank {rank}")));
            }
            let shape = (0..rank)
                .map(|_| read_u32(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let mut bytes = vec![0u8; 4 * n];
            r.read_exact(&mut bytes)
                .map_err(|_| Error::format(format!("section {name} truncated")))?;
            let data = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            if sections
                .insert(name.clone(), Tensor::new(shape, data)?)
                .is_some()
            {
                return Err(Error::format(format!("duplicate section {name}")));
            }
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::format("trailing bytes after checkpoint sections"));
        }

        let mut take_group = |prefix: &str| -> Result<ModelParams> {
            let tensors = PARAM_LAYOUT
                .iter()
                .map(|s| {
                    let key = format!("{prefix}{}", s.name);
                    sections
                        .remove(&key)
                        .ok_or_else(|| Error::format(format!("checkpoint lacks section {key}")))
                })
                .collect::<Result<Vec<_>>>()?;
            ModelParams::from_tensors(tensors)
        };
        let params = take_group("")?;
        let optimizer = if flags & FLAG_OPTIMIZER != 0 {
            let m = take_group(FIRST_MOMENT)?;
            let v = take_group(SECOND_MOMENT)?;
            Some(OptimizerState::from_parts(m, v, step)?)
        } else {
            None
        };
        if let Some(extra) = sections.keys().next() {
            return Err(Error::format(format!(
                "unexpected checkpoint section {extra}"
            )));
        }
        Ok(Checkpoint { params, optimizer })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        Self::read_from(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
    }
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::format("checkpoint truncated"))?;
    Ok(u32::from_le_bytes(b))
}
