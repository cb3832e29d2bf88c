//! Precomputed news embeddings and the VLNR container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "VLNR" | version u32 = 1 | d_e u32 | count u32
//! count x ( id_len u16 | id bytes (UTF-8) | 4 * d_e f64: image, title, topic, subtopic )
//! ```
//!
//! `count` includes the reserved `__BLANK__` entry, whose image slot holds the
//! blank-image vector (its other slots are written as zeros). The writer puts
//! it last; the reader accepts any order.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use indexmap::IndexMap;
use rand::Rng;

use crate::encoder::{Field, NewsFeatures};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VLNR";
pub const VERSION: u32 = 1;
pub const BLANK_ID: &str = "__BLANK__";

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    entries: IndexMap<String, NewsFeatures>,
    blank: Vec<f64>,
}

impl EmbeddingStore {
    pub fn new(dim: usize, blank: Vec<f64>) -> Result<Self> {
        if blank.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: blank.len(),
            });
        }
        Ok(Self {
            dim,
            entries: IndexMap::new(),
            blank,
        })
    }

    pub fn insert(&mut self, id: impl Into<String>, features: NewsFeatures) -> Result<()> {
        let id = id.into();
        if id == BLANK_ID {
            return Err(Error::InvalidArgument(format!("`{BLANK_ID}` is a reserved id")));
        }
        if id.len() > u16::MAX as usize {
            return Err(Error::InvalidArgument(format!("news id longer than {} bytes", u16::MAX)));
        }
        for f in Field::ALL {
            if features.field(f).len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    found: features.field(f).len(),
                });
            }
        }
        if self.entries.insert(id.clone(), features).is_some() {
            return Err(Error::DuplicateNewsId(id));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blank(&self) -> &[f64] {
        &self.blank
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&NewsFeatures> {
        self.entries.get(id)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.entries.get_index_of(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &NewsFeatures)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Number of entries whose image differs from the blank vector.
    pub fn non_blank_images(&self) -> usize {
        self.entries.values().filter(|f| f.image != self.blank).count()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&((self.entries.len() + 1) as u32).to_le_bytes())?;
        let zeros = vec![0.0; self.dim];
        let blank = NewsFeatures::new(self.blank.clone(), zeros.clone(), zeros.clone(), zeros)?;
        for (id, f) in self.entries.iter().chain(std::iter::once((&BLANK_ID.to_string(), &blank))) {
            w.write_all(&(id.len() as u16).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
            for field in Field::ALL {
                for v in f.field(field) {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::UnrecognizedEmbeddingFile);
        }
        r.pos = 4;
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let dim = r.u32("dimension")? as usize;
        let count = r.u32("entry count")? as usize;
        let mut entries = IndexMap::new();
        let mut blank = None;
        for i in 0..count {
            let len = r.u16(&format!("id length of entry {i}"))? as usize;
            let id = std::str::from_utf8(r.take(len, &format!("id of entry {i}"))?)
                .map_err(|_| Error::InvalidArgument(format!("entry {i}: id is not UTF-8")))?
                .to_string();
            let mut fields: Vec<Vec<f64>> = Vec::with_capacity(4);
            for field in Field::ALL {
                let raw = r.take(8 * dim, &format!("{} vector of `{id}`", field.short_name()))?;
                fields.push(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect());
            }
            if id == BLANK_ID {
                blank = Some(fields.swap_remove(0));
                continue;
            }
            let mut it = fields.into_iter();
            let f = NewsFeatures::new(it.next().unwrap(), it.next().unwrap(), it.next().unwrap(), it.next().unwrap())?;
            if entries.insert(id.clone(), f).is_some() {
                return Err(Error::DuplicateNewsId(id));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::InvalidArgument(format!(
                "{} trailing bytes after the last entry",
                bytes.len() - r.pos
            )));
        }
        let blank = blank.ok_or(Error::MissingBlank)?;
        Ok(Self { dim, entries, blank })
    }

    /// Replaces the image vector of the listed entries with the blank vector.
    pub fn blank_images(&mut self, ids: &[usize]) {
        for &i in ids {
            self.entries[i].image.clone_from(&self.blank);
        }
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated(format!(
                "{what}: need {n} bytes at offset {}, {} left",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    EmbeddingStore::from_bytes(&crate::error::read_file(path.as_ref())?)
}

/// Loads and checks the vector width against the model configuration.
pub fn load_embeddings_with_dim(path: impl AsRef<Path>, dim: usize) -> Result<EmbeddingStore> {
    let store = load_embeddings(path)?;
    if store.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: store.dim(),
        });
    }
    Ok(store)
}

/// Writes through a temporary sibling file and renames it into place.
pub fn save_embeddings(store: &EmbeddingStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("vlnr.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        store.write_to(&mut w)?;
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Keeps each news item's image with probability `proportion` and swaps in
/// the blank vector otherwise. Item `i` is kept iff its uniform draw `u_i`
/// is below `proportion`, so one seed yields nested blank sets across
/// proportions.
pub fn degrade_images<R: Rng + ?Sized>(store: &EmbeddingStore, proportion: f64, rng: &mut R) -> Result<EmbeddingStore> {
    if !(0.0..=1.0).contains(&proportion) {
        return Err(Error::InvalidArgument(format!("image proportion {proportion} outside [0, 1]")));
    }
    let mut out = store.clone();
    let drop: Vec<usize> = (0..store.len())
        .filter(|_| rng.gen::<f64>() >= proportion)
        .collect();
    out.blank_images(&drop);
    Ok(out)
}
