//! Snapshot files: a plain-text header followed by little-endian f64 arrays.
//!
//! ```text
//! grflab-snapshot 1
//! dim 3
//! n 16
//! variant grf
//! stencil_order 4
//! time 0.25
//! field g ll 0 32768
//! field h lll 32768 884736
//! end_header
//! <payload>
//! ```
//!
//! Field lines give name, variance codes, byte offset into the payload and
//! byte length. Times are written in shortest round-trip form.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::flow::{FlowState, Variant};
use crate::grid::{Grid, StencilOrder};
use crate::tensor::{lower, MetricField, TensorField, Variance};

pub const SNAPSHOT_VERSION: u32 = 1;
const MAGIC: &str = "grflab-snapshot";
const END: &str = "end_header\n";

/// A stored state with the run settings needed to interpret it.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub variant: Variant,
    pub stencil_order: StencilOrder,
    pub state: FlowState,
}

fn fields(s: &FlowState) -> Vec<(&'static str, &TensorField)> {
    let mut out = vec![("g", s.g.value()), ("h", &s.h)];
    if let Some(a) = &s.a {
        out.push(("a", a));
    }
    if let Some(b) = &s.b {
        out.push(("b", b));
    }
    out
}

/// Serialize a snapshot into bytes.
pub fn encode_snapshot(s: &FlowState, variant: Variant, order: StencilOrder) -> Vec<u8> {
    let grid = s.grid();
    let mut header = format!(
        "{MAGIC} {SNAPSHOT_VERSION}\ndim {}\nn {}\nvariant {}\nstencil_order {}\ntime {}\n",
        grid.dim(),
        grid.resolution(),
        variant.name(),
        order.order(),
        s.time
    );
    let mut offset = 0usize;
    let list = fields(s);
    for (name, f) in &list {
        let codes: String = f.variance().iter().map(|v| v.code()).collect();
        let bytes = f.data().len() * 8;
        header.push_str(&format!("field {name} {codes} {offset} {bytes}\n"));
        offset += bytes;
    }
    header.push_str(END);
    let mut out = Vec::with_capacity(header.len() + offset);
    out.extend_from_slice(header.as_bytes());
    for (_, f) in &list {
        for v in f.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_snapshot(s: &FlowState, variant: Variant, order: StencilOrder, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode_snapshot(s, variant, order))?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    decode_snapshot(&fs::read(path)?)
}

fn format_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

struct FieldEntry {
    name: String,
    variance: Vec<Variance>,
    offset: usize,
    bytes: usize,
}

fn header_value<'a>(lines: &mut impl Iterator<Item = &'a str>, key: &str) -> Result<&'a str> {
    match lines.next().and_then(|l| l.strip_prefix(key)).and_then(|r| r.strip_prefix(' ')) {
        Some(v) => Ok(v),
        None => format_err(format!("expected `{key}` header line")),
    }
}

fn number<T: std::str::FromStr>(s: &str, key: &str) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Format(format!("bad value for `{key}`: {s}")))
}

/// Parse a snapshot from bytes; never returns a partially filled state.
pub fn decode_snapshot(bytes: &[u8]) -> Result<Snapshot> {
    let end = match find(bytes, END.as_bytes()) {
        Some(i) => i + END.len(),
        None if bytes.starts_with(MAGIC.as_bytes()) => return Err(Error::Truncated("header has no end marker".into())),
        None => return format_err("not a snapshot file"),
    };
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| Error::Format("header is not UTF-8".into()))?;
    let mut lines = header.lines();
    let version: u32 = number(header_value(&mut lines, MAGIC)?, "version")?;
    if version != SNAPSHOT_VERSION {
        return Err(Error::VersionMismatch { found: version, expected: SNAPSHOT_VERSION });
    }
    let dim: usize = number(header_value(&mut lines, "dim")?, "dim")?;
    let n: usize = number(header_value(&mut lines, "n")?, "n")?;
    let grid = Grid::new(dim, n).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let variant_name = header_value(&mut lines, "variant")?;
    let variant = Variant::parse(variant_name).map_or_else(|| format_err(format!("unknown variant {variant_name}")), Ok)?;
    let stencil_order = match number::<u32>(header_value(&mut lines, "stencil_order")?, "stencil_order")? {
        2 => StencilOrder::Second,
        4 => StencilOrder::Fourth,
        o => return format_err(format!("unsupported stencil order {o}")),
    };
    let time: f64 = number(header_value(&mut lines, "time")?, "time")?;

    let mut entries = Vec::new();
    for line in lines {
        if line == END.trim_end() {
            break;
        }
        let parts: Vec<&str> = line.split(' ').collect();
        if parts.len() != 5 || parts[0] != "field" {
            return format_err(format!("bad field line `{line}`"));
        }
        let variance = parts[2]
            .chars()
            .map(|c| Variance::from_code(c).ok_or_else(|| Error::Format(format!("bad variance code `{c}`"))))
            .collect::<Result<Vec<_>>>()?;
        entries.push(FieldEntry {
            name: parts[1].to_string(),
            variance,
            offset: number(parts[3], "offset")?,
            bytes: number(parts[4], "bytes")?,
        });
    }

    let payload = &bytes[end..];
    let mut expected_offset = 0;
    for e in &entries {
        let want = grid.len() * dim.pow(e.variance.len() as u32) * 8;
        if e.bytes != want {
            return Err(Error::ShapeMismatch(format!(
                "field {} declares {} bytes, grid and rank imply {want}",
                e.name, e.bytes
            )));
        }
        if e.offset != expected_offset {
            return format_err(format!("field {} offset {} is not contiguous", e.name, e.offset));
        }
        expected_offset += e.bytes;
    }
    if payload.len() < expected_offset {
        return Err(Error::Truncated(format!("payload has {} bytes, header declares {expected_offset}", payload.len())));
    }
    if payload.len() > expected_offset {
        return format_err(format!("{} trailing bytes after payload", payload.len() - expected_offset));
    }

    let load = |e: &FieldEntry| -> Result<TensorField> {
        let data = payload[e.offset..e.offset + e.bytes]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        TensorField::from_data(grid, e.variance.clone(), data)
    };
    let find_field = |name: &str, rank: usize, required: bool| -> Result<Option<TensorField>> {
        match entries.iter().find(|e| e.name == name) {
            Some(e) if e.variance != lower(rank) => {
                Err(Error::ShapeMismatch(format!("field {name} must be a covariant {rank}-tensor")))
            }
            Some(e) => load(e).map(Some),
            None if required => format_err(format!("missing field {name}")),
            None => Ok(None),
        }
    };
    if let Some(e) = entries.iter().find(|e| !["g", "h", "a", "b"].contains(&e.name.as_str())) {
        return format_err(format!("unknown field {}", e.name));
    }
    let g = MetricField::new(find_field("g", 2, true)?.expect("required"))?;
    let h = find_field("h", 3, true)?.expect("required");
    let a = find_field("a", 1, false)?;
    let b = find_field("b", 2, false)?;
    if a.is_some() != b.is_some() {
        return format_err("potentials a and b must appear together");
    }
    let state = FlowState { time, g, h, a, b };
    Ok(Snapshot { variant, stencil_order, state })
}

fn find(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

/// File name of the `index`-th stored snapshot.
pub fn snapshot_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("snap_{index:06}.grfs"))
}

/// All snapshot files in a directory, in index order.
pub fn list_snapshots(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "grfs"))
        .collect();
    out.sort();
    Ok(out)
}
