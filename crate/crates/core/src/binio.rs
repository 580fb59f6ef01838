//! Little-endian cursor with truncation errors that name the region being read.

use crate::error::{Error, Result};

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize, region: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Format(format!(
                "truncated file: {region} needs {n} bytes at offset {}, only {} remain",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, region: &str) -> Result<[u8; N]> {
        Ok(self.take(N, region)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self, region: &str) -> Result<u8> {
        Ok(self.array::<1>(region)?[0])
    }

    pub fn u16(&mut self, region: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array(region)?))
    }

    pub fn u32(&mut self, region: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(region)?))
    }

    pub fn u64(&mut self, region: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(region)?))
    }

    pub fn f64(&mut self, region: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array(region)?))
    }
}

pub(crate) fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} = {v} does not fit in u32")))
}
