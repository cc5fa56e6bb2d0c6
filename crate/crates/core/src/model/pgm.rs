//! Binary PGM (P5) frame I/O and directory streaming.
//!
//! A stream is either a directory of files named `frame_%06d.pgm` or a text
//! file listing one PGM path per line (relative paths resolve against the
//! list file's directory).

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::Frame;

/// Reads a binary (P5) PGM. Only 8-bit images (maxval <= 255) are supported.
pub fn read_pgm(path: &Path) -> Result<(u32, u32, Vec<u8>)> {
    let mut raw = Vec::new();
    fs::File::open(path)
        .map_err(|e| Error::Format { path: path.to_owned(), reason: e.to_string() })?
        .read_to_end(&mut raw)?;
    let fail = |reason: &str| Error::Format { path: path.to_owned(), reason: reason.to_string() };

    if raw.len() < 2 || &raw[..2] != b"P5" {
        return Err(fail("missing P5 magic"));
    }
    // Header tokens: width, height, maxval. '#' starts a comment to end of line.
    let mut pos = 2usize;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        // skip whitespace and comments
        loop {
            match raw.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < raw.len() && raw[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(fail("truncated header")),
            }
        }
        let start = pos;
        while pos < raw.len() && raw[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(fail("expected integer in header"));
        }
        let text = std::str::from_utf8(&raw[start..pos]).unwrap();
        *field = text.parse::<u32>().map_err(|_| fail("header value out of range"))?;
    }
    // Single whitespace byte separates maxval from pixel data.
    match raw.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(fail("missing separator after maxval")),
    }
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    if maxval == 0 || maxval > 255 {
        return Err(fail(&format!("unsupported maxval {maxval}, only 8-bit PGM is accepted")));
    }
    if w == 0 || h == 0 {
        return Err(fail("zero dimension"));
    }
    let expected = w as usize * h as usize;
    if raw.len() - pos < expected {
        return Err(fail(&format!("pixel data truncated: expected {expected} bytes, found {}", raw.len() - pos)));
    }
    Ok((w, h, raw[pos..pos + expected].to_vec()))
}

/// Writes an 8-bit binary PGM.
pub fn write_pgm(path: &Path, width: u32, height: u32, pixels: &[u8]) -> Result<()> {
    assert_eq!(pixels.len(), width as usize * height as usize);
    let mut out = BufWriter::new(fs::File::create(path)?);
    write!(out, "P5\n{width} {height}\n255\n")?;
    out.write_all(pixels)?;
    Ok(())
}

/// Canonical frame file name for index `i`.
pub fn frame_file_name(i: u32) -> String {
    format!("frame_{i:06}.pgm")
}

/// An ordered stream of frames backed by files on disk.
///
/// Frames are loaded lazily in index order; all frames must share dimensions.
pub struct FrameStream {
    files: Vec<PathBuf>,
    fps: f64,
    next: usize,
    dims: Option<(u32, u32)>,
}

impl FrameStream {
    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }
}

impl Iterator for FrameStream {
    type Item = Result<Frame>;

    fn next(&mut self) -> Option<Self::Item> {
        let path = self.files.get(self.next)?.clone();
        let index = self.next as u32;
        self.next += 1;
        let item = read_pgm(&path).and_then(|(w, h, pixels)| {
            match self.dims {
                None => self.dims = Some((w, h)),
                Some(d) if d != (w, h) => {
                    return Err(Error::Stream(format!(
                        "dimension mismatch in {}: {w}x{h} after {}x{}",
                        path.display(),
                        d.0,
                        d.1
                    )))
                }
                _ => {}
            }
            Frame::new(w, h, pixels, index, Frame::timestamp_for(index, self.fps))
        });
        Some(item)
    }
}

/// Opens a frame stream from a directory of `frame_%06d.pgm` files or a list
/// file with one path per line. An empty directory yields an empty stream.
pub fn load_frame_sequence(path: &Path, fps: f64) -> Result<FrameStream> {
    if fps <= 0.0 {
        return Err(Error::Config(format!("fps must be positive, got {fps}")));
    }
    let files = if path.is_dir() {
        let mut indexed: Vec<(u32, PathBuf)> = Vec::new();
        for entry in fs::read_dir(path)? {
            let p = entry?.path();
            if let Some(i) = parse_frame_index(&p) {
                indexed.push((i, p));
            }
        }
        indexed.sort();
        indexed.into_iter().map(|(_, p)| p).collect()
    } else {
        let base = path.parent().map(Path::to_owned).unwrap_or_default();
        fs::read_to_string(path)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| {
                let p = PathBuf::from(l);
                if p.is_absolute() {
                    p
                } else {
                    base.join(p)
                }
            })
            .collect()
    };
    Ok(FrameStream { files, fps, next: 0, dims: None })
}

fn parse_frame_index(path: &Path) -> Option<u32> {
    let name = path.file_name()?.to_str()?;
    let rest = name.strip_prefix("frame_")?.strip_suffix(".pgm")?;
    if rest.len() == 6 && rest.bytes().all(|b| b.is_ascii_digit()) {
        rest.parse().ok()
    } else {
        None
    }
}
