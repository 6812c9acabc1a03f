//! Tokenized training records in an indexed binary file.
//!
//! Layout (little endian): magic, u32 version, u64 header length, JSON
//! header, u64 record count, one u64 offset per record (relative to the
//! first record), then the records. A record is a u8 channel count followed
//! per channel by the prefix (u32 length, content ids, pitch ids) and the
//! target streams (u32 length, content units, pitch units).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::FORMAT_VERSION;
use crate::token_codec::{assemble_example, AssembledExample, PrefixSequence, StreamPair, Vocabulary};

const MAGIC: &[u8; 8] = b"CHATSDS\0";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetHeader {
    /// "dialogue" or "tts".
    pub kind: String,
    pub vocab_size: usize,
    pub context_len: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenRecord {
    pub prefixes: Vec<PrefixSequence>,
    pub targets: Vec<StreamPair>,
}

impl TokenRecord {
    pub fn assemble(&self, vocab: &Vocabulary, max_duration: u32) -> Result<AssembledExample> {
        assemble_example(vocab, &self.prefixes, &self.targets, max_duration)
    }

    fn encode(&self, out: &mut Vec<u8>) {
        out.push(self.prefixes.len() as u8);
        let put = |out: &mut Vec<u8>, xs: &[u32]| xs.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        for (p, t) in self.prefixes.iter().zip(&self.targets) {
            out.extend_from_slice(&(p.len() as u32).to_le_bytes());
            put(out, &p.content);
            put(out, &p.pitch);
            out.extend_from_slice(&(t.len() as u32).to_le_bytes());
            put(out, &t.content);
            put(out, &t.pitch);
        }
    }

    fn decode(mut b: &[u8]) -> Result<Self> {
        let channels = take(&mut b, 1)?[0] as usize;
        if channels == 0 || channels > 2 {
            return Err(Error::Format(format!("record with {channels} channels")));
        }
        let mut prefixes = Vec::with_capacity(channels);
        let mut targets = Vec::with_capacity(channels);
        for _ in 0..channels {
            let n = take_u32(&mut b)? as usize;
            prefixes.push(PrefixSequence { content: take_ids(&mut b, n)?, pitch: take_ids(&mut b, n)? });
            let n = take_u32(&mut b)? as usize;
            targets.push(StreamPair { content: take_ids(&mut b, n)?, pitch: take_ids(&mut b, n)? });
        }
        if !b.is_empty() {
            return Err(Error::Format("trailing bytes in record".into()));
        }
        Ok(TokenRecord { prefixes, targets })
    }
}

fn take<'a>(b: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if b.len() < n {
        return Err(Error::Format("truncated dataset file".into()));
    }
    let (x, rest) = b.split_at(n);
    *b = rest;
    Ok(x)
}

fn take_u32(b: &mut &[u8]) -> Result<u32> {
    Ok(u32::from_le_bytes(take(b, 4)?.try_into().unwrap()))
}

fn take_u64(b: &mut &[u8]) -> Result<u64> {
    Ok(u64::from_le_bytes(take(b, 8)?.try_into().unwrap()))
}

fn take_ids(b: &mut &[u8], n: usize) -> Result<Vec<u32>> {
    let raw = take(b, n.checked_mul(4).ok_or_else(|| Error::Format("bad length".into()))?)?;
    Ok(raw.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect())
}

pub fn encode_records(header: &DatasetHeader, records: &[TokenRecord]) -> Result<Vec<u8>> {
    let head = serde_json::to_vec(header)?;
    let mut body = Vec::new();
    let mut offsets = Vec::with_capacity(records.len());
    for r in records {
        if r.prefixes.len() != r.targets.len() {
            return Err(Error::input("record needs one target per prefix"));
        }
        offsets.push(body.len() as u64);
        r.encode(&mut body);
    }
    let mut out = Vec::with_capacity(32 + head.len() + 8 * offsets.len() + body.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(head.len() as u64).to_le_bytes());
    out.extend_from_slice(&head);
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for o in offsets {
        out.extend_from_slice(&o.to_le_bytes());
    }
    out.extend_from_slice(&body);
    Ok(out)
}

/// An opened record file; records are decoded on access.
#[derive(Clone, Debug)]
pub struct RecordFile {
    pub header: DatasetHeader,
    offsets: Vec<usize>,
    body: Vec<u8>,
}

impl RecordFile {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut b = bytes;
        if take(&mut b, 8)? != MAGIC {
            return Err(Error::Format("not a dataset file".into()));
        }
        let version = take_u32(&mut b)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let hlen = take_u64(&mut b)? as usize;
        let header = serde_json::from_slice(take(&mut b, hlen)?)?;
        let n = take_u64(&mut b)? as usize;
        let mut offsets = Vec::with_capacity(n.min(b.len() / 8));
        for _ in 0..n {
            offsets.push(take_u64(&mut b)? as usize);
        }
        let body = b.to_vec();
        if offsets.windows(2).any(|w| w[1] < w[0]) || offsets.last().is_some_and(|&o| o >= body.len()) {
            return Err(Error::Format("dataset index is corrupt".into()));
        }
        Ok(RecordFile { header, offsets, body })
    }

    pub fn open(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn get(&self, i: usize) -> Result<TokenRecord> {
        let start = *self.offsets.get(i).ok_or_else(|| Error::input(format!("record {i} out of range")))?;
        let end = self.offsets.get(i + 1).copied().unwrap_or(self.body.len());
        TokenRecord::decode(&self.body[start..end])
    }

    pub fn records(&self) -> Result<Vec<TokenRecord>> {
        (0..self.len()).map(|i| self.get(i)).collect()
    }
}

pub fn write_records(path: &Path, header: &DatasetHeader, records: &[TokenRecord]) -> Result<()> {
    let bytes = encode_records(header, records)?;
    crate::io::write_bytes(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(seed: u32, channels: usize, plen: usize, tlen: usize) -> TokenRecord {
        let ids = |k: u32, n: usize| (0..n as u32).map(|i| (i * 7 + k) % 97).collect::<Vec<u32>>();
        TokenRecord {
            prefixes: (0..channels as u32)
                .map(|c| PrefixSequence { content: ids(seed + c, plen), pitch: ids(seed + c + 1, plen) })
                .collect(),
            targets: (0..channels as u32)
                .map(|c| StreamPair { content: ids(seed + 3 * c, tlen), pitch: ids(seed + 5, tlen) })
                .collect(),
        }
    }

    fn header() -> DatasetHeader {
        DatasetHeader { kind: "dialogue".into(), vocab_size: 120, context_len: 50 }
    }

    #[test]
    fn empty_file_round_trips() {
        let f = RecordFile::from_bytes(&encode_records(&header(), &[]).unwrap()).unwrap();
        assert!(f.is_empty());
        assert_eq!(f.header, header());
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = encode_records(&header(), &[record(1, 2, 4, 3)]).unwrap();
        assert!(RecordFile::from_bytes(&bytes[..bytes.len() - 1]).unwrap().get(0).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(RecordFile::from_bytes(&bad).is_err());
    }

    proptest! {
        #[test]
        fn records_round_trip(specs in prop::collection::vec((0u32..50, 1usize..=2, 1usize..20, 0usize..30), 0..12)) {
            let recs: Vec<TokenRecord> = specs.iter().map(|&(s, c, p, t)| record(s, c, p, t)).collect();
            let f = RecordFile::from_bytes(&encode_records(&header(), &recs).unwrap()).unwrap();
            prop_assert_eq!(f.len(), recs.len());
            for (i, r) in recs.iter().enumerate() {
                prop_assert_eq!(&f.get(i).unwrap(), r);
            }
        }
    }
}
