//! Corpus persistence: `manifest.json` plus one JSONL file per split, one
//! utterance per line with a CRC32 integrity field.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusManifest, Utterance, SPLITS};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct UtteranceRecord {
    crc32: String,
    utterance: Utterance,
}

/// Serialize one utterance to its JSONL line (no trailing newline). The CRC
/// covers the canonical JSON of the utterance object.
pub fn utterance_line(utt: &Utterance) -> Result<String> {
    let body = serde_json::to_string(utt)?;
    let crc = crc32fast::hash(body.as_bytes());
    let record = UtteranceRecord {
        crc32: format!("{:08x}", crc),
        utterance: utt.clone(),
    };
    Ok(serde_json::to_string(&record)?)
}

/// Parse one JSONL line, verifying the checksum.
pub fn read_utterance_line(line: &str) -> Result<Utterance> {
    let record: UtteranceRecord = serde_json::from_str(line)?;
    let body = serde_json::to_string(&record.utterance)?;
    let crc = format!("{:08x}", crc32fast::hash(body.as_bytes()));
    if crc != record.crc32 {
        return Err(Error::Checksum(format!(
            "utterance {}: stored crc {} != computed {}",
            record.utterance.id, record.crc32, crc
        )));
    }
    Ok(record.utterance)
}

/// Write `manifest.json` and `{train,dev,test}.jsonl` under `dir`.
pub fn save_corpus(dir: &Path, manifest: &CorpusManifest, utterances: &[Utterance]) -> Result<()> {
    manifest.validate()?;
    fs::create_dir_all(dir)?;
    let manifest_json = serde_json::to_string_pretty(manifest)?;
    fs::write(dir.join("manifest.json"), manifest_json)?;
    let by_id: std::collections::BTreeMap<u32, &Utterance> =
        utterances.iter().map(|u| (u.id, u)).collect();
    for split in SPLITS {
        let ids = manifest.splits.get(split)?;
        let mut file = File::create(dir.join(format!("{split}.jsonl")))?;
        for id in ids {
            let utt = by_id
                .get(id)
                .ok_or_else(|| Error::Corpus(format!("split {split} lists missing id {id}")))?;
            let line = utterance_line(utt)?;
            file.write_all(line.as_bytes())?;
            file.write_all(b"\n")?;
        }
        file.flush()?;
    }
    Ok(())
}

/// Open handle to a corpus directory.
pub struct CorpusHandle {
    pub manifest: CorpusManifest,
    dir: PathBuf,
}

/// Load and validate a corpus manifest; utterances are read lazily.
pub fn load_corpus(dir: &Path) -> Result<CorpusHandle> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::UpstreamMissing(format!("manifest {}: {}", path.display(), e)))?;
    let manifest: CorpusManifest = serde_json::from_str(&text)?;
    manifest.validate()?;
    Ok(CorpusHandle {
        manifest,
        dir: dir.to_path_buf(),
    })
}

impl CorpusHandle {
    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Stream a split without holding all utterances resident.
    pub fn iter_split(&self, split: &str) -> Result<UtteranceIter<BufReader<File>>> {
        self.manifest.splits.get(split)?;
        let path = self.dir.join(format!("{split}.jsonl"));
        let file = File::open(&path)
            .map_err(|e| Error::UpstreamMissing(format!("{}: {}", path.display(), e)))?;
        Ok(UtteranceIter {
            reader: BufReader::new(file),
            line: String::new(),
        })
    }

    /// Read a whole split into memory, verifying ids against the manifest.
    pub fn load_split(&self, split: &str) -> Result<Vec<Utterance>> {
        let ids = self.manifest.splits.get(split)?;
        let utts: Vec<Utterance> = self.iter_split(split)?.collect::<Result<_>>()?;
        if utts.len() != ids.len() || utts.iter().zip(ids).any(|(u, &id)| u.id != id) {
            return Err(Error::Corpus(format!(
                "split {split} contents disagree with manifest ids"
            )));
        }
        Ok(utts)
    }
}

/// Streaming line-by-line utterance reader over any buffered source.
pub struct UtteranceIter<R: BufRead> {
    reader: R,
    line: String,
}

impl<R: BufRead> UtteranceIter<R> {
    pub fn from_reader(reader: R) -> Self {
        UtteranceIter {
            reader,
            line: String::new(),
        }
    }
}

impl<R: BufRead> Iterator for UtteranceIter<R> {
    type Item = Result<Utterance>;

    fn next(&mut self) -> Option<Self::Item> {
        self.line.clear();
        match self.reader.read_line(&mut self.line) {
            Ok(0) => None,
            Ok(_) => {
                let line = self.line.trim_end();
                if line.is_empty() {
                    return self.next();
                }
                Some(read_utterance_line(line))
            }
            Err(e) => Some(Err(e.into())),
        }
    }
}

/// Reader wrapper that counts consumed bytes; lets tests assert that
/// streaming stops early instead of slurping the file.
pub struct CountingReader<R: Read> {
    inner: R,
    pub bytes_read: u64,
}

impl<R: Read> CountingReader<R> {
    pub fn new(inner: R) -> Self {
        CountingReader {
            inner,
            bytes_read: 0,
        }
    }
}

impl<R: Read> Read for CountingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.bytes_read += n as u64;
        Ok(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_utterances, CorpusConfig};

    fn tiny_config(seed: u64) -> CorpusConfig {
        CorpusConfig {
            seed,
            n_train: 6,
            n_dev: 2,
            n_test: 3,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (manifest, utts) = generate_utterances(&tiny_config(7)).unwrap();
        save_corpus(dir.path(), &manifest, &utts).unwrap();
        let handle = load_corpus(dir.path()).unwrap();
        assert_eq!(handle.manifest, manifest);
        for split in SPLITS {
            let loaded = handle.load_split(split).unwrap();
            let ids = manifest.splits.get(split).unwrap();
            assert_eq!(loaded.len(), ids.len());
            for (u, &id) in loaded.iter().zip(ids) {
                assert_eq!(u.id, id);
                assert_eq!(u, &utts[id as usize]);
            }
        }
    }

    #[test]
    fn regeneration_with_same_seed_is_byte_identical() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let cfg = tiny_config(21);
        let (m1, u1) = generate_utterances(&cfg).unwrap();
        let (m2, u2) = generate_utterances(&cfg).unwrap();
        save_corpus(d1.path(), &m1, &u1).unwrap();
        save_corpus(d2.path(), &m2, &u2).unwrap();
        for name in ["manifest.json", "train.jsonl", "dev.jsonl", "test.jsonl"] {
            let a = fs::read(d1.path().join(name)).unwrap();
            let b = fs::read(d2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs");
        }
    }

    #[test]
    fn corrupted_record_is_a_checksum_error() {
        let (_m, utts) = generate_utterances(&tiny_config(3)).unwrap();
        let line = utterance_line(&utts[0]).unwrap();
        // Flip a digit inside the payload, keeping valid JSON.
        let patched = line.replacen("\"id\":0", "\"id\":7", 1);
        assert_ne!(line, patched, "patch must apply");
        match read_utterance_line(&patched) {
            Err(Error::Checksum(_)) => {}
            other => panic!("expected checksum error, got {other:?}"),
        }
    }

    #[test]
    fn iterator_streams_lazily() {
        let dir = tempfile::tempdir().unwrap();
        let (manifest, utts) = generate_utterances(&tiny_config(9)).unwrap();
        save_corpus(dir.path(), &manifest, &utts).unwrap();
        let file = File::open(dir.path().join("train.jsonl")).unwrap();
        let total = file.metadata().unwrap().len();
        let counting = CountingReader::new(file);
        let mut iter = UtteranceIter::from_reader(BufReader::with_capacity(256, counting));
        let first = iter.next().unwrap().unwrap();
        assert_eq!(first.id, 0);
        let consumed = iter.reader.get_ref().bytes_read;
        assert!(
            consumed < total / 2,
            "consumed {consumed} of {total} bytes after one record"
        );
    }
}
