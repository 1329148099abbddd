//! Corpus file format.
//!
//! Layout: magic `OCRS`, u8 version, u32 record count, u16 height,
//! u16 width, u8 channels, then per record the raw image bytes followed
//! by the label bytes. All integers little-endian; round trips are
//! byte-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{CorpusRecord, DataError};

const MAGIC: &[u8; 4] = b"OCRS";
const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusHeader {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

pub fn write_corpus(
    records: &[CorpusRecord],
    height: usize,
    width: usize,
    channels: usize,
    path: &Path,
) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(records.len() as u32).to_le_bytes())?;
    w.write_all(&(height as u16).to_le_bytes())?;
    w.write_all(&(width as u16).to_le_bytes())?;
    w.write_all(&[channels as u8])?;
    for rec in records {
        assert_eq!(rec.image.len(), height * width * channels);
        assert_eq!(rec.labels.len(), height * width);
        w.write_all(&rec.image)?;
        w.write_all(&rec.labels)?;
    }
    w.flush()?;
    Ok(())
}

/// Streaming reader: the header is parsed eagerly, records on demand.
pub struct CorpusReader {
    reader: BufReader<File>,
    header: CorpusHeader,
    next: usize,
}

impl CorpusReader {
    pub fn open(path: &Path) -> Result<Self, DataError> {
        let mut reader = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        read_exact(&mut reader, &mut magic)?;
        if &magic != MAGIC {
            return Err(DataError::BadMagic(magic));
        }
        let mut v = [0u8; 1];
        read_exact(&mut reader, &mut v)?;
        if v[0] != VERSION {
            return Err(DataError::BadVersion {
                found: v[0],
                expected: VERSION,
            });
        }
        let mut b4 = [0u8; 4];
        read_exact(&mut reader, &mut b4)?;
        let count = u32::from_le_bytes(b4) as usize;
        let mut b2 = [0u8; 2];
        read_exact(&mut reader, &mut b2)?;
        let height = u16::from_le_bytes(b2) as usize;
        read_exact(&mut reader, &mut b2)?;
        let width = u16::from_le_bytes(b2) as usize;
        read_exact(&mut reader, &mut v)?;
        let channels = v[0] as usize;
        Ok(Self {
            reader,
            header: CorpusHeader {
                count,
                height,
                width,
                channels,
            },
            next: 0,
        })
    }

    pub fn header(&self) -> CorpusHeader {
        self.header
    }

    pub fn next_record(&mut self) -> Result<Option<CorpusRecord>, DataError> {
        if self.next >= self.header.count {
            return Ok(None);
        }
        let n = self.header.height * self.header.width;
        let mut image = vec![0u8; n * self.header.channels];
        read_exact(&mut self.reader, &mut image)?;
        let mut labels = vec![0u8; n];
        read_exact(&mut self.reader, &mut labels)?;
        self.next += 1;
        Ok(Some(CorpusRecord { image, labels }))
    }
}

/// Read a whole corpus into memory.
pub fn read_corpus(path: &Path) -> Result<(CorpusHeader, Vec<CorpusRecord>), DataError> {
    let mut reader = CorpusReader::open(path)?;
    let mut records = Vec::with_capacity(reader.header().count);
    while let Some(rec) = reader.next_record()? {
        records.push(rec);
    }
    Ok((reader.header(), records))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), DataError> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            return Err(DataError::Truncated {
                expected: buf.len() - filled,
                actual: 0,
            });
        }
        filled += n;
    }
    Ok(())
}
