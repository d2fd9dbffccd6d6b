//! `.eclt` raw stream container (little-endian).
//!
//! ```text
//! header  : magic "ECLT" (4) | version u16 = 1 | width u16 | height u16 | reserved u32 = 0
//! frame*  : timestamp_us u64 | sequence_step u8 | width·height bytes, row-major 8-bit gray
//! ```
//!
//! Frames run to end of file; there is no frame count.

use std::io::{self, Read, Write};

use super::frame::RawSubframe;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::STEPS_PER_SEQUENCE;

pub const MAGIC: [u8; 4] = *b"ECLT";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 14;
const FRAME_HEADER_LEN: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamHeader {
    pub width: u16,
    pub height: u16,
}

impl StreamHeader {
    fn frame_bytes(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

pub struct StreamWriter<W: Write> {
    sink: W,
    header: StreamHeader,
    written: u64,
    last_timestamp: Option<u64>,
}

impl<W: Write> StreamWriter<W> {
    pub fn new(mut sink: W, header: StreamHeader) -> Result<Self> {
        let mut buf = [0u8; HEADER_LEN];
        buf[..4].copy_from_slice(&MAGIC);
        buf[4..6].copy_from_slice(&VERSION.to_le_bytes());
        buf[6..8].copy_from_slice(&header.width.to_le_bytes());
        buf[8..10].copy_from_slice(&header.height.to_le_bytes());
        sink.write_all(&buf)?;
        Ok(Self {
            sink,
            header,
            written: HEADER_LEN as u64,
            last_timestamp: None,
        })
    }

    pub fn write(&mut self, frame: &RawSubframe) -> Result<()> {
        if frame.image.width() != self.header.width as usize
            || frame.image.height() != self.header.height as usize
        {
            return Err(Error::ShapeMismatch(format!(
                "frame is {}x{}, stream is {}x{}",
                frame.image.width(),
                frame.image.height(),
                self.header.width,
                self.header.height
            )));
        }
        if frame.sequence_step as usize >= STEPS_PER_SEQUENCE {
            return Err(Error::InvalidArgument(format!(
                "sequence step {}",
                frame.sequence_step
            )));
        }
        if self.last_timestamp.is_some_and(|t| frame.timestamp_us < t) {
            return Err(Error::InvalidArgument("timestamps must be monotone".into()));
        }
        self.last_timestamp = Some(frame.timestamp_us);
        self.sink.write_all(&frame.timestamp_us.to_le_bytes())?;
        self.sink.write_all(&[frame.sequence_step])?;
        self.sink.write_all(frame.image.pixels())?;
        self.written += (FRAME_HEADER_LEN + frame.image.pixels().len()) as u64;
        Ok(())
    }

    /// Flushes and returns the number of bytes written.
    pub fn finish(mut self) -> Result<u64> {
        self.sink.flush()?;
        Ok(self.written)
    }
}

/// Writes a whole stream; returns the byte count.
pub fn encode_stream<'a, W: Write>(
    header: StreamHeader,
    frames: impl IntoIterator<Item = &'a RawSubframe>,
    sink: W,
) -> Result<u64> {
    let mut w = StreamWriter::new(sink, header)?;
    for f in frames {
        w.write(f)?;
    }
    w.finish()
}

/// Streaming decoder; yields frames in stored order.
pub struct StreamReader<R: Read> {
    source: R,
    header: StreamHeader,
    index: usize,
    done: bool,
}

/// Fills `buf` as far as possible; returns bytes read (short only at EOF).
fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(n)
}

impl<R: Read> StreamReader<R> {
    pub fn new(mut source: R) -> Result<Self> {
        let mut buf = [0u8; HEADER_LEN];
        let n = read_full(&mut source, &mut buf)?;
        if n >= 4 && buf[..4] != MAGIC {
            return Err(Error::BadMagic {
                expected: MAGIC,
                found: buf[..4].try_into().unwrap(),
            });
        }
        if n < HEADER_LEN {
            return Err(Error::format("truncated stream header"));
        }
        let version = u16::from_le_bytes([buf[4], buf[5]]);
        if version != VERSION {
            return Err(Error::VersionMismatch {
                expected: VERSION,
                found: version,
            });
        }
        let header = StreamHeader {
            width: u16::from_le_bytes([buf[6], buf[7]]),
            height: u16::from_le_bytes([buf[8], buf[9]]),
        };
        Ok(Self {
            source,
            header,
            index: 0,
            done: false,
        })
    }

    pub fn header(&self) -> StreamHeader {
        self.header
    }

    fn next_frame(&mut self) -> Result<Option<RawSubframe>> {
        let mut head = [0u8; FRAME_HEADER_LEN];
        let n = read_full(&mut self.source, &mut head)?;
        if n == 0 {
            return Ok(None);
        }
        if n < FRAME_HEADER_LEN {
            return Err(Error::Truncated { frame: self.index });
        }
        let mut pixels = vec![0u8; self.header.frame_bytes()];
        if read_full(&mut self.source, &mut pixels)? < pixels.len() {
            return Err(Error::Truncated { frame: self.index });
        }
        let step = head[8];
        if step as usize >= STEPS_PER_SEQUENCE {
            return Err(Error::format(format!(
                "frame {} has sequence step {step}",
                self.index
            )));
        }
        self.index += 1;
        Ok(Some(RawSubframe {
            timestamp_us: u64::from_le_bytes(head[..8].try_into().unwrap()),
            sequence_step: step,
            image: Image::from_vec(
                self.header.width as usize,
                self.header.height as usize,
                pixels,
            )?,
        }))
    }
}

impl<R: Read> Iterator for StreamReader<R> {
    type Item = Result<RawSubframe>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let r = self.next_frame().transpose();
        if !matches!(r, Some(Ok(_))) {
            self.done = true;
        }
        r
    }
}

pub fn decode_stream<R: Read>(source: R) -> Result<(StreamHeader, Vec<RawSubframe>)> {
    let reader = StreamReader::new(source)?;
    let header = reader.header();
    let frames = reader.collect::<Result<Vec<_>>>()?;
    Ok((header, frames))
}
