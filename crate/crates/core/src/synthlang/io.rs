use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::corpus::{Corpus, CorpusConfig, TextPair, Utterance};
use super::language::LanguageSpec;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"ADPC";
const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub text: usize,
}

/// `manifest.json` of a corpus directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u16,
    pub language_id: String,
    pub seed: u64,
    pub feature_dim: usize,
    pub counts: SplitCounts,
    pub config: CorpusConfig,
}

impl Manifest {
    pub fn of(corpus: &Corpus, feature_dim: usize) -> Self {
        Manifest {
            format_version: VERSION,
            language_id: corpus.language_id.clone(),
            seed: corpus.seed,
            feature_dim,
            counts: SplitCounts {
                train: corpus.train.len(),
                valid: corpus.valid.len(),
                test: corpus.test.len(),
                text: corpus.text.len(),
            },
            config: corpus.config.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

struct Record<'a> {
    concepts: &'a [usize],
    frames: Option<&'a Tensor<f32>>,
    first: &'a str,
    second: &'a str,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Corpus(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn encode_records<'a>(records: impl ExactSizeIterator<Item = Record<'a>>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, records.len())?;
    for rec in records {
        put_u32(&mut out, rec.concepts.len())?;
        for &c in rec.concepts {
            put_u32(&mut out, c)?;
        }
        let (rows, cols) = rec.frames.map_or((0, 0), |f| (f.rows(), f.cols()));
        put_u32(&mut out, rows)?;
        put_u32(&mut out, cols)?;
        if let Some(f) = rec.frames {
            for &x in f.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        put_str(&mut out, rec.first)?;
        put_str(&mut out, rec.second)?;
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Corpus("truncated split file".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Corpus("invalid UTF-8 text".into()))
    }
}

type RawRecord = (Vec<usize>, Option<Tensor<f32>>, String, String);

fn decode_records(bytes: &[u8]) -> Result<Vec<RawRecord>> {
    let mut c = Cursor { bytes, at: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Corpus("bad split file magic".into()));
    }
    let version = u16::from_le_bytes(c.take(2)?.try_into().expect("2 bytes"));
    if version != VERSION {
        return Err(Error::Corpus(format!("unsupported split file version {version}")));
    }
    let n = c.u32()?;
    let mut out = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let k = c.u32()?;
        let concepts = (0..k).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
        let (rows, cols) = (c.u32()?, c.u32()?);
        let frames = if rows * cols > 0 {
            let raw = c.take(rows * cols * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            Some(Tensor::new([rows, cols], data)?)
        } else {
            None
        };
        out.push((concepts, frames, c.string()?, c.string()?));
    }
    if c.at != bytes.len() {
        return Err(Error::Corpus("trailing bytes in split file".into()));
    }
    Ok(out)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `manifest.json`, `language.json` and one binary file per
/// non-empty split.
pub fn write_corpus(dir: &Path, corpus: &Corpus, spec: &LanguageSpec) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest::of(corpus, spec.params.feature_dim);
    write_file(&dir.join("manifest.json"), manifest.to_json()?.as_bytes())?;
    write_file(&dir.join("language.json"), (serde_json::to_string_pretty(spec)? + "\n").as_bytes())?;
    for split in super::Split::ALL {
        let utts = corpus.split(split);
        let path = dir.join(format!("{}.bin", split.as_str()));
        if utts.is_empty() {
            if path.exists() {
                fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
            }
            continue;
        }
        let bytes = encode_records(utts.iter().map(|u| Record {
            concepts: &u.concepts,
            frames: Some(&u.frames),
            first: &u.transcript,
            second: &u.source_text,
        }))?;
        write_file(&path, &bytes)?;
    }
    let path = dir.join("text.bin");
    if corpus.text.is_empty() {
        if path.exists() {
            fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
        }
    } else {
        let bytes = encode_records(corpus.text.iter().map(|t| Record {
            concepts: &t.concepts,
            frames: None,
            first: &t.target_text,
            second: &t.source_text,
        }))?;
        write_file(&path, &bytes)?;
    }
    Ok(())
}

fn read_split(dir: &Path, name: &str, expected: usize) -> Result<Vec<RawRecord>> {
    let path = dir.join(format!("{name}.bin"));
    if expected == 0 {
        return Ok(Vec::new());
    }
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let recs = decode_records(&bytes)?;
    if recs.len() != expected {
        return Err(Error::Corpus(format!(
            "{name}.bin holds {} records, manifest says {expected}",
            recs.len()
        )));
    }
    Ok(recs)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let s = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Manifest::from_json(&s)
}

pub fn read_language(dir: &Path) -> Result<LanguageSpec> {
    let path = dir.join("language.json");
    let s = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&s)?)
}

pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let m = read_manifest(dir)?;
    let speech = |name: &str, n: usize| -> Result<Vec<Utterance>> {
        read_split(dir, name, n)?
            .into_iter()
            .map(|(concepts, frames, transcript, source_text)| {
                let frames = frames.ok_or_else(|| Error::Corpus(format!("{name}.bin record without frames")))?;
                if frames.cols() != m.feature_dim {
                    return Err(Error::Corpus(format!("{name}.bin frame width {} != {}", frames.cols(), m.feature_dim)));
                }
                Ok(Utterance {
                    concepts,
                    frames,
                    transcript,
                    source_text,
                })
            })
            .collect()
    };
    Ok(Corpus {
        language_id: m.language_id.clone(),
        seed: m.seed,
        config: m.config.clone(),
        train: speech("train", m.counts.train)?,
        valid: speech("valid", m.counts.valid)?,
        test: speech("test", m.counts.test)?,
        text: read_split(dir, "text", m.counts.text)?
            .into_iter()
            .map(|(concepts, _, target_text, source_text)| TextPair {
                concepts,
                source_text,
                target_text,
            })
            .collect(),
    })
}
