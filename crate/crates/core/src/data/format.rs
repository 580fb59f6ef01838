//! Dataset file format, all integers little-endian:
//!
//! ```text
//! "DBDS"  u16 version  u32 record count
//! per record: u8 label, u32 subject, f64 start time (s), u32 channels, u32 len,
//!             channels * len f32 values (row-major)
//! u32 CRC-32 of every preceding byte
//! ```
//!
//! Window values are stored as `f32`. Writing rounds each value to the nearest
//! `f32`, so a round trip is exact for values that are already
//! `f32`-representable and `write(read(file))` always reproduces `file`.

use std::fs;
use std::path::Path;

use super::{StateLabel, WindowedSample};
use crate::binio::{put_f64, put_u16, put_u32, to_u32, Reader};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"DBDS";
pub const DATASET_VERSION: u16 = 1;

pub fn encode_dataset(samples: &[WindowedSample]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(DATASET_MAGIC);
    put_u16(&mut out, DATASET_VERSION);
    put_u32(&mut out, to_u32(samples.len(), "record count")?);
    for s in samples {
        if s.window.len() != s.channels * s.len {
            return Err(Error::Dimension(format!(
                "sample at {} s: {} values for {} x {}",
                s.start_s,
                s.window.len(),
                s.channels,
                s.len
            )));
        }
        out.push(s.label as u8);
        put_u32(&mut out, s.subject);
        put_f64(&mut out, s.start_s);
        put_u32(&mut out, to_u32(s.channels, "channels")?);
        put_u32(&mut out, to_u32(s.len, "window length")?);
        for &v in &s.window {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    put_u32(&mut out, crc);
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Vec<WindowedSample>> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4, "magic")?;
    if magic != DATASET_MAGIC {
        return Err(Error::Format(format!("bad dataset magic {magic:?}")));
    }
    let version = r.u16("version")?;
    if version != DATASET_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let count = r.u32("record count")? as usize;
    let mut samples = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let label = StateLabel::from_class(r.u8(&format!("record {i} label"))?)
            .map_err(|e| Error::Format(format!("record {i}: {e}")))?;
        let subject = r.u32(&format!("record {i} subject"))?;
        let start_s = r.f64(&format!("record {i} start time"))?;
        let channels = r.u32(&format!("record {i} channels"))? as usize;
        let len = r.u32(&format!("record {i} length"))? as usize;
        let n = channels
            .checked_mul(len)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format(format!("record {i}: payload size overflows")))?;
        let raw = r.take(n, &format!("record {i} payload"))?;
        let window = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        samples.push(WindowedSample { subject, label, start_s, channels, len, window });
    }
    let body_end = r.position();
    let stored = r.u32("trailing CRC-32")?;
    if r.remaining() != 0 {
        return Err(Error::Format(format!("{} unexpected bytes after CRC", r.remaining())));
    }
    let actual = crc32fast::hash(&bytes[..body_end]);
    if stored != actual {
        return Err(Error::Format(format!("CRC mismatch: stored {stored:08x}, computed {actual:08x}")));
    }
    Ok(samples)
}

pub fn write_dataset(path: impl AsRef<Path>, samples: &[WindowedSample]) -> Result<()> {
    fs::write(path, encode_dataset(samples)?)?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<WindowedSample>> {
    decode_dataset(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(subject: u32, label: StateLabel, start: f64) -> WindowedSample {
        WindowedSample {
            subject,
            label,
            start_s: start,
            channels: 2,
            len: 3,
            window: vec![0.5, -1.25, 3.0, 0.0, 1.0, -0.75],
        }
    }

    #[test]
    fn round_trip() {
        let s = vec![sample(3, StateLabel::Preictal, 17_900.0), sample(3, StateLabel::Interictal, 20.5)];
        let bytes = encode_dataset(&s).unwrap();
        let back = decode_dataset(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(encode_dataset(&back).unwrap(), bytes);
    }

    #[test]
    fn empty_file_round_trips() {
        let bytes = encode_dataset(&[]).unwrap();
        assert_eq!(bytes.len(), 4 + 2 + 4 + 4);
        assert!(decode_dataset(&bytes).unwrap().is_empty());
    }

    #[test]
    fn truncation_names_the_region() {
        let bytes = encode_dataset(&[sample(1, StateLabel::Preictal, 0.0)]).unwrap();
        let err = decode_dataset(&bytes[..bytes.len() - 10]).unwrap_err().to_string();
        assert!(err.contains("record 0 payload"), "{err}");
        let err = decode_dataset(&bytes[..bytes.len() - 2]).unwrap_err().to_string();
        assert!(err.contains("CRC"), "{err}");
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = encode_dataset(&[sample(1, StateLabel::Preictal, 0.0)]).unwrap();
        let payload = bytes.len() - 6;
        bytes[payload] ^= 0x40;
        let err = decode_dataset(&bytes).unwrap_err();
        assert!(matches!(&err, Error::Format(m) if m.contains("CRC")), "{err}");
        assert_eq!(err.exit_code(), 3);
        bytes[0] = b'Z';
        assert!(matches!(decode_dataset(&bytes), Err(Error::Format(m)) if m.contains("magic")));
    }
}
