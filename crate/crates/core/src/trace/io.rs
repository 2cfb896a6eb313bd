//! Trace wire formats.
//!
//! Text: a `#gendatacarto-trace v1 T=<T> N=<N>` header followed by UTF-8
//! lines `epoch,sample_id,loss`. An empty loss field marks the cell
//! explicitly missing.
//!
//! Binary: magic `GDCT`, version u16=1, T and N as u64 little-endian, N
//! length-prefixed (u32) sample ids, T*N IEEE-754 f64 little-endian
//! row-major cells, and a trailing CRC32 of everything before it. Binary
//! carries complete traces only.

use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{LossTrace, TraceBuilder};

pub(crate) const MAGIC: &[u8; 4] = b"GDCT";
pub(crate) const VERSION: u16 = 1;
const HEADER_PREFIX: &str = "#gendatacarto-trace v1 ";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    Text,
    Binary,
}

impl TraceFormat {
    /// Sniffs the format from the first bytes of a stream.
    pub fn detect(head: &[u8]) -> TraceFormat {
        if head.starts_with(MAGIC) {
            TraceFormat::Binary
        } else {
            TraceFormat::Text
        }
    }
}

fn malformed(location: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Malformed {
        location: location.into(),
        reason: reason.into(),
    }
}

impl<F: Scalar> LossTrace<F> {
    pub fn read(reader: impl Read, format: TraceFormat) -> Result<Self> {
        match format {
            TraceFormat::Text => Self::read_text(std::io::BufReader::new(reader)),
            TraceFormat::Binary => Self::read_binary(reader),
        }
    }

    pub fn write(&self, writer: impl Write, format: TraceFormat) -> Result<()> {
        match format {
            TraceFormat::Text => self.write_text(writer),
            TraceFormat::Binary => self.write_binary(writer),
        }
    }

    /// Reads a trace from a file, sniffing text vs binary from the magic.
    pub fn read_path(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read(&bytes[..], TraceFormat::detect(&bytes))
    }

    pub fn read_text(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| malformed("line 1", "empty input, expected header"))??;
        let (t_decl, n_decl) = parse_header(&header)?;

        let mut builder = TraceBuilder::new();
        for (lineno, line) in lines.enumerate() {
            let lineno = lineno + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let at = || format!("line {lineno}");
            let mut fields = line.splitn(3, ',');
            let epoch_str = fields.next().unwrap_or("");
            let sample_id = fields
                .next()
                .ok_or_else(|| malformed(at(), "expected epoch,sample_id,loss"))?;
            let loss_str = fields
                .next()
                .ok_or_else(|| malformed(at(), "expected epoch,sample_id,loss"))?;
            let epoch: usize = epoch_str
                .trim()
                .parse()
                .map_err(|_| malformed(at(), format!("bad epoch {epoch_str:?}")))?;
            if epoch < 1 || epoch > t_decl {
                return Err(malformed(
                    at(),
                    format!("epoch {epoch} outside declared 1..={t_decl}"),
                ));
            }
            if loss_str.trim().is_empty() {
                builder.mark_missing(epoch, sample_id)?;
            } else {
                let loss: f64 = loss_str
                    .trim()
                    .parse()
                    .map_err(|_| malformed(at(), format!("bad loss {loss_str:?}")))?;
                builder
                    .record(epoch, sample_id, F::from_f64_cell(loss))
                    .map_err(|e| match e {
                        Error::NonFiniteLoss { epoch, sample_id } => {
                            malformed(at(), format!("non-finite loss at epoch {epoch}, sample {sample_id:?}"))
                        }
                        other => other,
                    })?;
            }
            if builder.sample_ids().len() > n_decl {
                return Err(malformed(
                    at(),
                    format!("more than the declared N={n_decl} sample ids"),
                ));
            }
        }

        let seen = builder.sample_ids().len();
        if seen < n_decl {
            return Err(Error::IncompleteEpoch {
                epoch: 1,
                present: seen,
                expected: n_decl,
            });
        }
        builder.lock_schema();
        let trace = builder.finalize()?;
        if trace.epochs() != t_decl {
            return Err(Error::IncompleteEpoch {
                epoch: trace.epochs() + 1,
                present: 0,
                expected: n_decl,
            });
        }
        Ok(trace)
    }

    pub fn write_text(&self, mut writer: impl Write) -> Result<()> {
        for id in self.sample_ids() {
            if id.contains(',') || id.contains('\n') || id.contains('\r') {
                return Err(Error::InvalidConfig(format!(
                    "sample id {id:?} cannot be written in text format"
                )));
            }
        }
        writeln!(
            writer,
            "{HEADER_PREFIX}T={} N={}",
            self.epochs(),
            self.samples()
        )?;
        for t in 1..=self.epochs() {
            for (i, id) in self.sample_ids().iter().enumerate() {
                match self.get(t, i) {
                    Some(v) => writeln!(writer, "{t},{id},{v}")?,
                    None => writeln!(writer, "{t},{id},")?,
                }
            }
        }
        Ok(())
    }

    pub fn read_binary(mut reader: impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        reader.read_to_end(&mut buf)?;
        let mut cur = Cursor::new(&buf);

        let magic = cur.take_bytes(4, "magic")?;
        if magic != MAGIC {
            return Err(malformed("byte 0", "bad magic, expected GDCT"));
        }
        let version = cur.take_u16("version")?;
        if version != VERSION {
            return Err(malformed(
                "byte 4",
                format!("unsupported version {version}"),
            ));
        }
        let epochs = cur.take_u64("epoch count")? as usize;
        let samples = cur.take_u64("sample count")? as usize;
        if epochs == 0 || samples == 0 || epochs.checked_mul(samples).is_none() {
            return Err(malformed("byte 6", "implausible dimensions"));
        }
        let mut ids = Vec::with_capacity(samples);
        for _ in 0..samples {
            let at = cur.offset;
            let len = cur.take_u32("sample id length")? as usize;
            let bytes = cur.take_bytes(len, "sample id")?;
            let id = std::str::from_utf8(bytes)
                .map_err(|_| malformed(format!("byte {at}"), "sample id is not UTF-8"))?;
            ids.push(id.to_string());
        }
        let mut values = Vec::with_capacity(epochs * samples);
        for t in 0..epochs {
            for i in 0..samples {
                let at = cur.offset;
                let v = cur.take_f64("cell")?;
                if !v.is_finite() {
                    return Err(malformed(
                        format!("byte {at}"),
                        format!("non-finite cell at epoch {}, sample {:?}", t + 1, ids[i]),
                    ));
                }
                values.push(F::from_f64_cell(v));
            }
        }
        let payload_end = cur.offset;
        let stored_crc = cur.take_u32("crc32")?;
        if cur.offset != buf.len() {
            return Err(malformed(
                format!("byte {}", cur.offset),
                "trailing bytes after CRC",
            ));
        }
        let actual_crc = crc32fast::hash(&buf[..payload_end]);
        if stored_crc != actual_crc {
            return Err(malformed(
                format!("byte {payload_end}"),
                format!("CRC mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"),
            ));
        }
        Self::from_parts(epochs, ids, values, None, 0)
    }

    pub fn write_binary(&self, mut writer: impl Write) -> Result<()> {
        if !self.is_complete() {
            let missing = self.epochs() * self.samples() - self.present_cells();
            return Err(Error::IncompleteBinaryEmit { missing });
        }
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.epochs() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.samples() as u64).to_le_bytes());
        for id in self.sample_ids() {
            buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
            buf.extend_from_slice(id.as_bytes());
        }
        for t in 1..=self.epochs() {
            for i in 0..self.samples() {
                let v = self.get(t, i).expect("complete trace");
                buf.extend_from_slice(&v.to_f64_cell().to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        writer.write_all(&buf)?;
        Ok(())
    }

    pub fn to_binary_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_binary(&mut buf)?;
        Ok(buf)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, offset: 0 }
    }

    fn take_bytes(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.offset + n > self.buf.len() {
            return Err(malformed(
                format!("byte {}", self.offset),
                format!("truncated while reading {what}"),
            ));
        }
        let out = &self.buf[self.offset..self.offset + n];
        self.offset += n;
        Ok(out)
    }

    fn take_u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take_bytes(2, what)?.try_into().unwrap(),
        ))
    }

    fn take_u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take_bytes(4, what)?.try_into().unwrap(),
        ))
    }

    fn take_u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take_bytes(8, what)?.try_into().unwrap(),
        ))
    }

    fn take_f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take_bytes(8, what)?.try_into().unwrap(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_trace() -> LossTrace<f64> {
        LossTrace::from_rows(
            vec!["s0".into(), "s1".into()],
            vec![vec![2.5, 1.0], vec![0.5, 1.5]],
        )
        .unwrap()
    }

    #[test]
    fn text_round_trip_preserves_cells() {
        let t = sample_trace();
        let mut out = Vec::new();
        t.write_text(&mut out).unwrap();
        let back: LossTrace<f64> = LossTrace::read_text(&out[..]).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn smallest_valid_text_trace_parses() {
        let input = "#gendatacarto-trace v1 T=2 N=1\n1,s0,2.5\n2,s0,1.25\n";
        let t: LossTrace<f64> = LossTrace::read_text(input.as_bytes()).unwrap();
        assert_eq!(t.epochs(), 2);
        assert_eq!(t.samples(), 1);
        assert_eq!(t.get(2, 0), Some(1.25));
    }

    #[test]
    fn header_n_mismatch_is_incomplete_epoch() {
        let input = "#gendatacarto-trace v1 T=2 N=3\n1,a,1.0\n1,b,1.0\n2,a,1.0\n2,b,1.0\n";
        let err = LossTrace::<f64>::read_text(input.as_bytes()).unwrap_err();
        assert!(matches!(
            err,
            Error::IncompleteEpoch {
                present: 2,
                expected: 3,
                ..
            }
        ));
    }

    #[test]
    fn text_errors_carry_line_numbers() {
        let input = "#gendatacarto-trace v1 T=2 N=1\n1,s0,2.5\n2,s0,oops\n";
        match LossTrace::<f64>::read_text(input.as_bytes()) {
            Err(Error::Malformed { location, .. }) => assert_eq!(location, "line 3"),
            other => panic!("expected Malformed, got {other:?}"),
        }
    }

    #[test]
    fn text_missing_cells_round_trip() {
        let mut b = TraceBuilder::new();
        b.record(1, "a", 1.0).unwrap();
        b.mark_missing(1, "b").unwrap();
        b.record(2, "a", 0.5).unwrap();
        b.record(2, "b", 0.25).unwrap();
        let t = b.finalize().unwrap();
        let mut out = Vec::new();
        t.write_text(&mut out).unwrap();
        let back: LossTrace<f64> = LossTrace::read_text(&out[..]).unwrap();
        assert_eq!(back.get(1, 1), None);
        assert_eq!(back.get(2, 1), Some(0.25));
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let t = sample_trace();
        let bytes = t.to_binary_bytes().unwrap();
        let back: LossTrace<f64> = LossTrace::read_binary(&bytes[..]).unwrap();
        assert_eq!(back, t);
        let again = back.to_binary_bytes().unwrap();
        assert_eq!(again, bytes);
    }

    #[test]
    fn binary_detects_corruption_with_offset() {
        let t = sample_trace();
        let mut bytes = t.to_binary_bytes().unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        match LossTrace::<f64>::read_binary(&bytes[..]) {
            Err(Error::Malformed { reason, .. }) => {
                assert!(reason.contains("CRC") || reason.contains("non-finite"), "{reason}");
            }
            other => panic!("expected Malformed, got {other:?}"),
        }
    }

    #[test]
    fn binary_rejects_bad_magic() {
        let err = LossTrace::<f64>::read_binary(&b"NOPE"[..]).unwrap_err();
        assert!(matches!(err, Error::Malformed { .. }));
    }

    #[test]
    fn binary_emit_requires_complete_trace() {
        let mut b = TraceBuilder::new();
        b.record(1, "a", 1.0).unwrap();
        b.mark_missing(2, "a").unwrap();
        let t = b.finalize().unwrap();
        assert!(matches!(
            t.write_binary(Vec::new()),
            Err(Error::IncompleteBinaryEmit { missing: 1 })
        ));
    }

    #[test]
    fn format_detection() {
        assert_eq!(TraceFormat::detect(b"GDCT...."), TraceFormat::Binary);
        assert_eq!(TraceFormat::detect(b"#gendata"), TraceFormat::Text);
    }
}

fn parse_header(line: &str) -> Result<(usize, usize)> {
    let rest = line
        .strip_prefix(HEADER_PREFIX)
        .ok_or_else(|| malformed("line 1", format!("bad header {line:?}")))?;
    let mut t = None;
    let mut n = None;
    for part in rest.split_whitespace() {
        if let Some(v) = part.strip_prefix("T=") {
            t = v.parse::<usize>().ok();
        } else if let Some(v) = part.strip_prefix("N=") {
            n = v.parse::<usize>().ok();
        }
    }
    match (t, n) {
        (Some(t), Some(n)) if t >= 1 && n >= 1 => Ok((t, n)),
        _ => Err(malformed("line 1", "header must declare T=<int> N=<int>")),
    }
}
