//! Line-delimited JSON sequence files and CSV export.
//!
//! ```text
//! {"frame_rate_hz":30.0,"encoding":"absolute"}
//! {"t":0,"joints":[x0,y0,z0, ..., x15,y15,z15]}
//! {"t":1,"joints":[...]}
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{Encoding, JointId, SkeletonPose, SkeletonSequence};

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    frame_rate_hz: f64,
    encoding: EncodingTag,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum EncodingTag {
    Absolute,
    Relative,
}

impl From<Encoding> for EncodingTag {
    fn from(e: Encoding) -> Self {
        match e {
            Encoding::Absolute => EncodingTag::Absolute,
            Encoding::RelativeToParent => EncodingTag::Relative,
        }
    }
}

impl From<EncodingTag> for Encoding {
    fn from(e: EncodingTag) -> Self {
        match e {
            EncodingTag::Absolute => Encoding::Absolute,
            EncodingTag::Relative => Encoding::RelativeToParent,
        }
    }
}

#[derive(Serialize)]
struct FrameOut<'a> {
    t: usize,
    joints: &'a [f64],
}

#[derive(Deserialize)]
struct FrameIn {
    t: usize,
    joints: Vec<f64>,
}

pub fn write_sequence<W: Write>(mut w: W, seq: &SkeletonSequence) -> Result<()> {
    let header = Header {
        frame_rate_hz: seq.frame_rate_hz(),
        encoding: seq.encoding().into(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for (t, f) in seq.frames().iter().enumerate() {
        let line = FrameOut {
            t,
            joints: &f.coords()[..],
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a sequence; `origin` only labels errors.
pub fn read_sequence<R: BufRead>(r: R, origin: &Path) -> Result<SkeletonSequence> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: origin.to_path_buf(),
        msg: format!("line {line}: {msg}"),
    };
    let mut lines = r.lines().enumerate().filter(|(_, l)| match l {
        Ok(s) => !s.trim().is_empty(),
        Err(_) => true,
    });
    let (_, first) = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing header".into()))?;
    let header: Header =
        serde_json::from_str(&first?).map_err(|e| parse_err(1, format!("bad header: {e}")))?;
    let encoding: Encoding = header.encoding.into();

    let mut frames = Vec::new();
    for (i, line) in lines {
        let line = line?;
        let fl: FrameIn =
            serde_json::from_str(&line).map_err(|e| parse_err(i + 1, e.to_string()))?;
        if fl.t != frames.len() {
            return Err(parse_err(
                i + 1,
                format!("expected frame index {}, found {}", frames.len(), fl.t),
            ));
        }
        let pose = SkeletonPose::from_slice(&fl.joints, encoding)
            .map_err(|e| parse_err(i + 1, e.to_string()))?;
        frames.push(pose);
    }
    SkeletonSequence::new(frames, header.frame_rate_hz).map_err(|e| parse_err(0, e.to_string()))
}

pub fn save_sequence(path: impl AsRef<Path>, seq: &SkeletonSequence) -> Result<()> {
    let f = File::create(path.as_ref())?;
    write_sequence(BufWriter::new(f), seq)
}

pub fn load_sequence(path: impl AsRef<Path>) -> Result<SkeletonSequence> {
    let path = path.as_ref();
    let f = File::open(path)?;
    read_sequence(BufReader::new(f), path)
}

/// `frame` plus one column per coordinate, e.g. `spinemid_x`.
pub fn csv_header() -> String {
    let mut cols = vec!["frame".to_string()];
    for j in JointId::ALL {
        for axis in ["x", "y", "z"] {
            cols.push(format!("{}_{axis}", j.name()));
        }
    }
    cols.join(",")
}

pub fn write_csv<W: Write>(mut w: W, seq: &SkeletonSequence) -> Result<()> {
    writeln!(w, "{}", csv_header())?;
    for (t, f) in seq.frames().iter().enumerate() {
        write!(w, "{t}")?;
        for c in f.coords() {
            write!(w, ",{c}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(path: impl AsRef<Path>, seq: &SkeletonSequence) -> Result<()> {
    let f = File::create(path.as_ref())?;
    write_csv(BufWriter::new(f), seq)
}
