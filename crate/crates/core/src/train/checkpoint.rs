//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//! magic `GLRCKPT\0`, version u32, then length-prefixed sections: model
//! config as TOML, vocabulary words, label names, dual-attention state as
//! JSON, and the named parameters (name, rank, dims as u64, f64 data).

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::data::Vocabulary;
use crate::encoder::DualAttentionState;
use crate::error::{Error, Result};
use crate::label::LabelVocabulary;
use crate::model::{ModelConfig, ReportModel};

pub const MAGIC: &[u8; 8] = b"GLRCKPT\0";
pub const VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.0.extend_from_slice(s.as_bytes());
    }

    fn strings(&mut self, items: &[String]) {
        self.u64(items.len() as u64);
        for s in items {
            self.str(s);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| bad("truncated file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n).ok().filter(|&n| n <= self.buf.len()).ok_or_else(|| bad(format!("length {n} exceeds file")))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| bad("invalid utf-8"))
    }

    fn strings(&mut self) -> Result<Vec<String>> {
        let n = self.len()?;
        (0..n).map(|_| self.str()).collect()
    }
}

pub fn to_bytes(model: &ReportModel) -> Result<Vec<u8>> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.str(&toml::to_string(&model.config).map_err(|e| bad(e.to_string()))?);
    w.strings(model.vocab.words());
    w.strings(model.labels.names());
    w.str(&serde_json::to_string(&model.dual_state).map_err(|e| bad(e.to_string()))?);
    w.u64(model.store.len() as u64);
    for (_, name, t) in model.store.iter() {
        w.str(name);
        w.u32(t.shape().len() as u32);
        for &d in t.shape() {
            w.u64(d as u64);
        }
        for &x in t.data() {
            w.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(w.0)
}

pub fn from_bytes(buf: &[u8]) -> Result<ReportModel> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(MAGIC.len()).ok() != Some(MAGIC.as_slice()) {
        return Err(bad("not a checkpoint file"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let config: ModelConfig = toml::from_str(&r.str()?).map_err(|e| bad(format!("config: {e}")))?;
    let vocab = Vocabulary::from_words(r.strings()?)?;
    let labels = LabelVocabulary::new(r.strings()?)?;
    let dual: DualAttentionState = serde_json::from_str(&r.str()?).map_err(|e| bad(format!("dual state: {e}")))?;
    let mut model = ReportModel::new(config, vocab, labels, 0)?;
    if dual.w_dwa.len() != model.config.encoder.heads {
        return Err(bad(format!("dual state has {} heads", dual.w_dwa.len())));
    }
    model.dual_state = dual;
    let count = r.len()?;
    if count != model.store.len() {
        return Err(bad(format!("{count} tensors stored, model has {}", model.store.len())));
    }
    let mut seen = vec![false; count];
    for _ in 0..count {
        let name = r.str()?;
        let id = model.store.id(&name).ok_or_else(|| bad(format!("unknown tensor {name}")))?;
        if std::mem::replace(&mut seen[id.index()], true) {
            return Err(bad(format!("tensor {name} stored twice")));
        }
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
        let t = model.store.get_mut(id);
        if dims != t.shape() {
            return Err(bad(format!("tensor {name}: stored shape {dims:?}, model expects {:?}", t.shape())));
        }
        let raw = r.take(8 * t.len())?;
        for (x, b) in t.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
            *x = f64::from_le_bytes(b.try_into().expect("8 bytes"));
        }
    }
    if r.pos != buf.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(model)
}

/// Write to a sibling temp file, then rename over `path`.
pub fn save(model: &ReportModel, path: &Path) -> Result<()> {
    let bytes = to_bytes(model)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ReportModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
