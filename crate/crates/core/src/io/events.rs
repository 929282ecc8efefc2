//! Event files.
//!
//! Binary layout: a 16-byte header (`EVMG`, version 1, kind `E`, two reserved
//! bytes, record count as u64) followed by 13-byte little-endian records
//! `t: f64, x: u16, y: u16, p: i8`.
//!
//! CSV layout: one `t,x,y,p` record per line with an optional header line.
//! Timestamps are written in shortest round-trip form so CSV is lossless too.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use super::raster::{MAGIC, VERSION};
use crate::error::{Error, FormatError, Result};
use crate::events::Event;

pub const EVENT_KIND: u8 = b'E';
pub const EVENT_HEADER_LEN: usize = 16;
pub const EVENT_RECORD_LEN: usize = 13;
pub const CSV_HEADER: &str = "t,x,y,p";

fn event_header(count: u64) -> [u8; EVENT_HEADER_LEN] {
    let mut h = [0u8; EVENT_HEADER_LEN];
    h[..4].copy_from_slice(&MAGIC);
    h[4] = VERSION;
    h[5] = EVENT_KIND;
    h[8..].copy_from_slice(&count.to_le_bytes());
    h
}

fn parse_event_header(bytes: &[u8]) -> Result<u64, FormatError> {
    if bytes.len() >= 4 && bytes[..4] != MAGIC {
        return Err(FormatError::BadMagic(bytes[..4].try_into().expect("length checked")));
    }
    if bytes.len() < EVENT_HEADER_LEN {
        return Err(FormatError::TruncatedHeader {
            expected: EVENT_HEADER_LEN,
            got: bytes.len(),
        });
    }
    if bytes[4] != VERSION {
        return Err(FormatError::UnsupportedVersion(bytes[4]));
    }
    if bytes[5] != EVENT_KIND {
        return Err(FormatError::WrongKind {
            expected: EVENT_KIND as char,
            found: bytes[5] as char,
        });
    }
    Ok(u64::from_le_bytes(bytes[8..16].try_into().expect("length checked")))
}

fn encode_record(e: &Event, out: &mut Vec<u8>) {
    out.extend_from_slice(&e.t.to_le_bytes());
    out.extend_from_slice(&e.x.to_le_bytes());
    out.extend_from_slice(&e.y.to_le_bytes());
    out.push(e.p as u8);
}

fn decode_record(index: usize, rec: &[u8]) -> Result<Event, FormatError> {
    let e = Event {
        t: f64::from_le_bytes(rec[..8].try_into().expect("record length")),
        x: u16::from_le_bytes([rec[8], rec[9]]),
        y: u16::from_le_bytes([rec[10], rec[11]]),
        p: rec[12] as i8,
    };
    check_record(index, &e)?;
    Ok(e)
}

fn check_record(index: usize, e: &Event) -> Result<(), FormatError> {
    if !e.t.is_finite() {
        return Err(FormatError::InvalidRecord {
            index,
            reason: format!("non-finite timestamp {}", e.t),
        });
    }
    if e.p != 1 && e.p != -1 {
        return Err(FormatError::InvalidRecord {
            index,
            reason: format!("polarity {}", e.p),
        });
    }
    Ok(())
}

pub fn encode_events(events: &[Event]) -> Vec<u8> {
    let mut out = Vec::with_capacity(EVENT_HEADER_LEN + EVENT_RECORD_LEN * events.len());
    out.extend_from_slice(&event_header(events.len() as u64));
    for e in events {
        encode_record(e, &mut out);
    }
    out
}

pub fn decode_events(bytes: &[u8]) -> Result<Vec<Event>, FormatError> {
    let count = parse_event_header(bytes)?;
    let got = (bytes.len() - EVENT_HEADER_LEN) as u64;
    let expected = count.checked_mul(EVENT_RECORD_LEN as u64).ok_or_else(|| FormatError::TooLarge(format!("{count} events")))?;
    if got < expected {
        return Err(FormatError::TruncatedPayload { expected, got });
    }
    if got > expected {
        return Err(FormatError::TrailingBytes(got - expected));
    }
    bytes[EVENT_HEADER_LEN..]
        .chunks_exact(EVENT_RECORD_LEN)
        .enumerate()
        .map(|(i, rec)| decode_record(i, rec))
        .collect()
}

fn parse_csv_line(line_no: usize, line: &str) -> Result<Event, FormatError> {
    let err = |reason: String| FormatError::Csv { line: line_no, reason };
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 4 {
        return Err(err(format!("expected 4 fields, found {}", fields.len())));
    }
    let t: f64 = fields[0].parse().map_err(|_| err(format!("bad timestamp {:?}", fields[0])))?;
    let x: u16 = fields[1].parse().map_err(|_| err(format!("bad x {:?}", fields[1])))?;
    let y: u16 = fields[2].parse().map_err(|_| err(format!("bad y {:?}", fields[2])))?;
    let p: i8 = fields[3].parse().map_err(|_| err(format!("bad polarity {:?}", fields[3])))?;
    let e = Event { t, x, y, p };
    check_record(line_no, &e).map_err(|e| match e {
        FormatError::InvalidRecord { reason, .. } => err(reason),
        other => other,
    })?;
    Ok(e)
}

fn is_csv_header(line: &str) -> bool {
    line.split(',').map(str::trim).eq(["t", "x", "y", "p"])
}

pub fn parse_events_csv(text: &str) -> Result<Vec<Event>, FormatError> {
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && is_csv_header(line)) {
            continue;
        }
        events.push(parse_csv_line(i + 1, line)?);
    }
    Ok(events)
}

pub fn write_events_csv<W: Write>(mut out: W, events: &[Event]) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for e in events {
        writeln!(out, "{:?},{},{},{}", e.t, e.x, e.y, e.p)?;
    }
    Ok(())
}

/// Binary when the file starts with the magic bytes, CSV otherwise.
pub fn decode_events_any(bytes: &[u8]) -> Result<Vec<Event>, FormatError> {
    if bytes.starts_with(&MAGIC) {
        return decode_events(bytes);
    }
    let text = std::str::from_utf8(bytes).map_err(|e| FormatError::Csv {
        line: 1 + bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count(),
        reason: "invalid UTF-8".into(),
    })?;
    parse_events_csv(text)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_events(events: &[Event], path: impl AsRef<Path>) -> Result<()> {
    let mut w = create(path.as_ref())?;
    w.write_all(&encode_events(events))?;
    w.flush()?;
    Ok(())
}

pub fn write_events_csv_file(events: &[Event], path: impl AsRef<Path>) -> Result<()> {
    let mut w = create(path.as_ref())?;
    write_events_csv(&mut w, events)?;
    w.flush()?;
    Ok(())
}

pub fn read_events(path: impl AsRef<Path>) -> Result<Vec<Event>> {
    let mut bytes = Vec::new();
    open(path.as_ref())?.read_to_end(&mut bytes)?;
    Ok(decode_events_any(&bytes)?)
}

/// Appends binary event records and patches the header count on `finish`.
pub struct EventWriter {
    out: BufWriter<File>,
    count: u64,
}

impl EventWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let mut out = create(path.as_ref())?;
        out.write_all(&event_header(0))?;
        Ok(Self { out, count: 0 })
    }

    pub fn write(&mut self, events: &[Event]) -> Result<()> {
        let mut buf = Vec::with_capacity(events.len() * EVENT_RECORD_LEN);
        for e in events {
            encode_record(e, &mut buf);
        }
        self.out.write_all(&buf)?;
        self.count += events.len() as u64;
        Ok(())
    }

    pub fn finish(mut self) -> Result<u64> {
        self.out.flush()?;
        let file = self.out.get_mut();
        file.seek(SeekFrom::Start(8))?;
        file.write_all(&self.count.to_le_bytes())?;
        file.flush()?;
        Ok(self.count)
    }
}

/// Streams events from a binary or CSV file without loading it whole.
pub struct EventReader {
    inner: Source,
    index: usize,
}

enum Source {
    Binary { file: BufReader<File>, remaining: u64 },
    Csv { lines: std::io::Lines<BufReader<File>> },
}

impl EventReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = open(path)?;
        let len = file.metadata()?.len();
        let mut file = BufReader::new(file);
        let binary = file.fill_buf()?.starts_with(&MAGIC);
        let inner = if binary {
            let mut head = vec![0u8; EVENT_HEADER_LEN.min(len as usize)];
            file.read_exact(&mut head)?;
            let count = parse_event_header(&head)?;
            let got = len - EVENT_HEADER_LEN as u64;
            let expected = count
                .checked_mul(EVENT_RECORD_LEN as u64)
                .ok_or_else(|| FormatError::TooLarge(format!("{count} events")))?;
            if got < expected {
                return Err(FormatError::TruncatedPayload { expected, got }.into());
            }
            if got > expected {
                return Err(FormatError::TrailingBytes(got - expected).into());
            }
            Source::Binary { file, remaining: count }
        } else {
            Source::Csv { lines: file.lines() }
        };
        Ok(Self { inner, index: 0 })
    }
}

impl Iterator for EventReader {
    type Item = Result<Event>;

    fn next(&mut self) -> Option<Self::Item> {
        let index = self.index;
        self.index += 1;
        match &mut self.inner {
            Source::Binary { file, remaining } => {
                if *remaining == 0 {
                    return None;
                }
                *remaining -= 1;
                let mut rec = [0u8; EVENT_RECORD_LEN];
                Some(
                    file.read_exact(&mut rec)
                        .map_err(Error::from)
                        .and_then(|_| decode_record(index, &rec).map_err(Error::from)),
                )
            }
            Source::Csv { lines } => loop {
                let line_no = self.index;
                let line = match lines.next()? {
                    Ok(l) => l,
                    Err(e) => return Some(Err(e.into())),
                };
                let trimmed = line.trim();
                if trimmed.is_empty() || (line_no == 1 && is_csv_header(trimmed)) {
                    self.index += 1;
                    continue;
                }
                return Some(parse_csv_line(line_no, trimmed).map_err(Error::from));
            },
        }
    }
}
