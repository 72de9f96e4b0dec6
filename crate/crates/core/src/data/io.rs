//! Binary epoch files and a wide CSV interchange format.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! ```text
//! "NGEP" u16 version f64 fs u32 C u32 T
//! C × (u16 byte length, UTF-8 channel name)
//! u32 epoch count
//! per epoch: u8 group, u8 label, u16 participant, u16 block, u16 trial,
//!            f64 angular error, C×T f64 samples (channel-major)
//! ```
//!
//! Channel positions are not stored; they come from the built-in 10-20 table
//! or from a layout supplied by the caller.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{DataError, EpochDataset, Group, Label, TrialEpoch};
use crate::graph::{ChannelLayout, GraphError};
use crate::nn::Tensor;

const MAGIC: &[u8; 4] = b"NGEP";
const VERSION: u16 = 1;
const RECORD_HEADER: usize = 1 + 1 + 2 + 2 + 2 + 8;

/// Serializes a dataset to any writer.
pub fn write_epochs<W: Write>(ds: &EpochDataset, mut w: W) -> Result<(), DataError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&ds.fs().to_le_bytes());
    buf.extend_from_slice(&(ds.n_channels() as u32).to_le_bytes());
    buf.extend_from_slice(&(ds.n_times() as u32).to_le_bytes());
    for name in ds.layout().names() {
        let bytes = name.as_bytes();
        let len = u16::try_from(bytes.len())
            .map_err(|_| DataError::Inconsistent(format!("channel name `{name}` too long")))?;
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(bytes);
    }
    buf.extend_from_slice(&(ds.len() as u32).to_le_bytes());
    w.write_all(&buf)?;
    for e in ds.epochs() {
        buf.clear();
        buf.push(e.group.code());
        buf.push(e.label.class() as u8);
        buf.extend_from_slice(&e.participant.to_le_bytes());
        buf.extend_from_slice(&e.block_index.to_le_bytes());
        buf.extend_from_slice(&e.trial_index.to_le_bytes());
        buf.extend_from_slice(&e.angular_error_deg.to_le_bytes());
        for v in e.signal.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn save_epochs(ds: &EpochDataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let file = fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_epochs(ds, &mut w)?;
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Option<f64> {
        self.take(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

/// Builds the layout for a file's channel names, from `layout` when given
/// (matched case-insensitively, reordered to file order) or the 10-20 table.
fn resolve_layout(
    names: &[String],
    layout: Option<&ChannelLayout>,
) -> Result<ChannelLayout, DataError> {
    match layout {
        None => Ok(ChannelLayout::from_names(names)?),
        Some(l) => {
            let channels = names
                .iter()
                .map(|n| {
                    l.index_of(n)
                        .map(|i| l.channels()[i].clone())
                        .ok_or_else(|| GraphError::UnknownChannel(n.clone()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(ChannelLayout::new(channels, Some(l.head_radius()))?)
        }
    }
}

/// Parses an epoch file image.
pub fn read_epochs(
    bytes: &[u8],
    layout: Option<&ChannelLayout>,
) -> Result<EpochDataset, DataError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4).ok_or(DataError::BadMagic)? != MAGIC {
        return Err(DataError::BadMagic);
    }
    let version = cur.u16().ok_or(DataError::TruncatedHeader)?;
    if version != VERSION {
        return Err(DataError::Version {
            found: version,
            expected: VERSION,
        });
    }
    let fs = cur.f64().ok_or(DataError::TruncatedHeader)?;
    let c = cur.u32().ok_or(DataError::TruncatedHeader)? as usize;
    let t = cur.u32().ok_or(DataError::TruncatedHeader)? as usize;
    if c == 0 || t == 0 {
        return Err(DataError::Inconsistent(format!(
            "header declares C = {c}, T = {t}"
        )));
    }
    let mut names = Vec::with_capacity(c);
    for _ in 0..c {
        let len = cur.u16().ok_or(DataError::TruncatedHeader)? as usize;
        let raw = cur.take(len).ok_or(DataError::TruncatedHeader)?;
        let name = std::str::from_utf8(raw)
            .map_err(|_| DataError::Inconsistent("channel name is not UTF-8".into()))?;
        names.push(name.to_string());
    }
    let count = cur.u32().ok_or(DataError::TruncatedHeader)? as usize;
    let layout = resolve_layout(&names, layout)?;

    let record = RECORD_HEADER + 8 * c * t;
    let mut epochs = Vec::with_capacity(count);
    for k in 0..count {
        let rec = cur.take(record).ok_or(DataError::Truncated(k))?;
        let mut r = Cursor { bytes: rec, pos: 0 };
        let g = r.take(1).expect("sized")[0];
        let group = Group::from_code(g)
            .ok_or_else(|| DataError::Inconsistent(format!("epoch {k}: unknown group code {g}")))?;
        let l = r.take(1).expect("sized")[0];
        let label = Label::from_class(l as usize)
            .ok_or_else(|| DataError::Inconsistent(format!("epoch {k}: unknown label code {l}")))?;
        let participant = r.u16().expect("sized");
        let block_index = r.u16().expect("sized");
        let trial_index = r.u16().expect("sized");
        let angular_error_deg = r.f64().expect("sized");
        let signal: Vec<f64> = (0..c * t).map(|_| r.f64().expect("sized")).collect();
        epochs.push(TrialEpoch {
            signal: Tensor::new(vec![c, t], signal).expect("sized"),
            label,
            participant,
            group,
            angular_error_deg,
            block_index,
            trial_index,
        });
    }
    let extra = bytes.len() - cur.pos;
    if extra > 0 {
        return Err(DataError::TrailingBytes(extra));
    }
    EpochDataset::new(epochs, fs, layout)
}

pub fn load_epochs(
    path: impl AsRef<Path>,
    layout: Option<&ChannelLayout>,
) -> Result<EpochDataset, DataError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    read_epochs(&bytes, layout)
}

const CSV_META: [&str; 8] = [
    "epoch",
    "group",
    "participant",
    "block",
    "trial",
    "label",
    "angular_error_deg",
    "sample",
];

/// Writes one row per time sample with one column per channel.
pub fn export_csv<W: Write>(ds: &EpochDataset, w: W) -> Result<(), DataError> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = CSV_META.iter().map(|s| s.to_string()).collect();
    header.extend(ds.layout().names());
    out.write_record(&header).map_err(csv_io)?;
    let t = ds.n_times();
    for (k, e) in ds.epochs().iter().enumerate() {
        for s in 0..t {
            let mut row = vec![
                k.to_string(),
                e.group.name().to_string(),
                e.participant.to_string(),
                e.block_index.to_string(),
                e.trial_index.to_string(),
                e.label.name().to_string(),
                format!("{:?}", e.angular_error_deg),
                s.to_string(),
            ];
            row.extend((0..ds.n_channels()).map(|c| format!("{:?}", e.signal.data()[c * t + s])));
            out.write_record(&row).map_err(csv_io)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> DataError {
    DataError::Csv {
        line: e.position().map_or(0, |p| p.line() as usize),
        msg: e.to_string(),
    }
}

struct PendingEpoch {
    id: String,
    meta: TrialEpoch,
    columns: Vec<Vec<f64>>,
}

/// Reads the wide CSV format written by [`export_csv`]. Rows of one epoch must be
/// contiguous with `sample` counting from 0; every epoch must have the same length.
pub fn import_csv<R: Read>(
    r: R,
    fs: f64,
    layout: Option<&ChannelLayout>,
) -> Result<EpochDataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(r);
    let header = rdr.headers().map_err(csv_io)?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() <= CSV_META.len()
        || !cols[..CSV_META.len()]
            .iter()
            .zip(CSV_META)
            .all(|(a, b)| a.eq_ignore_ascii_case(b))
    {
        return Err(DataError::Csv {
            line: 1,
            msg: format!("header must start with {}", CSV_META.join(",")),
        });
    }
    let names: Vec<String> = cols[CSV_META.len()..]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let layout = resolve_layout(&names, layout)?;
    let c = names.len();

    let mut done: Vec<PendingEpoch> = Vec::new();
    let mut current: Option<PendingEpoch> = None;
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(csv_io)?;
        let bad = |msg: String| DataError::Csv { line, msg };
        if rec.len() != cols.len() {
            return Err(bad(format!(
                "expected {} fields, got {}",
                cols.len(),
                rec.len()
            )));
        }
        let num = |idx: usize| -> Result<f64, DataError> {
            rec[idx]
                .parse::<f64>()
                .map_err(|_| bad(format!("`{}` is not a number", &rec[idx])))
        };
        let int = |idx: usize| -> Result<u16, DataError> {
            rec[idx]
                .parse::<u16>()
                .map_err(|_| bad(format!("`{}` is not a 16-bit integer", &rec[idx])))
        };
        let id = rec[0].to_string();
        let sample: usize = rec[7]
            .parse()
            .map_err(|_| bad(format!("bad sample index `{}`", &rec[7])))?;
        let meta = TrialEpoch {
            signal: Tensor::zeros(&[0]),
            group: rec[1].parse().map_err(bad)?,
            participant: int(2)?,
            block_index: int(3)?,
            trial_index: int(4)?,
            label: rec[5].parse().map_err(bad)?,
            angular_error_deg: num(6)?,
        };
        if current.as_ref().is_some_and(|p| p.id != id) {
            done.push(current.take().expect("checked"));
        }
        let pending = current.get_or_insert_with(|| PendingEpoch {
            id: id.clone(),
            meta: meta.clone(),
            columns: vec![Vec::new(); c],
        });
        if pending.meta != meta {
            return Err(bad(format!("metadata changes within epoch `{id}`")));
        }
        if sample != pending.columns[0].len() {
            return Err(bad(format!(
                "epoch `{id}`: expected sample {}, got {sample}",
                pending.columns[0].len()
            )));
        }
        for (ch, col) in pending.columns.iter_mut().enumerate() {
            col.push(num(CSV_META.len() + ch)?);
        }
    }
    done.extend(current);

    let t = done.first().map_or(0, |p| p.columns[0].len());
    let mut epochs = Vec::with_capacity(done.len());
    for (k, p) in done.into_iter().enumerate() {
        let len = p.columns[0].len();
        if len != t {
            return Err(DataError::Inconsistent(format!(
                "epoch {k} (`{}`) has {len} samples, expected {t}",
                p.id
            )));
        }
        let mut e = p.meta;
        e.signal = Tensor::new(vec![c, t], p.columns.concat()).expect("sized");
        epochs.push(e);
    }
    EpochDataset::new(epochs, fs, layout)
}
