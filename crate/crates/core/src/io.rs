//! File formats: sample text files, GIRF rasters, PGM import, PPM previews,
//! mosaic layouts and flat `key = value` configuration files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::estimators::{SUCCESS_MAX, SUCCESS_MIN};
use crate::gi0::{Gi0Params, MosaicSpec, Raster, Region, SampleSet};

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn parse_num<T: std::str::FromStr>(line: usize, what: &str, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::format(format!("line {line}: invalid {what} `{s}`")))
}

// ---------------------------------------------------------------------------
// Sample sets

/// One value per line, preceded by `# alpha=<a> gamma=<g> L=<l>` when the
/// generating law is known. Values use the shortest exact decimal form.
pub fn format_samples(set: &SampleSet) -> String {
    let mut out = String::with_capacity(set.len() * 20);
    if let Some(p) = set.truth {
        writeln!(out, "# alpha={} gamma={} L={}", p.alpha, p.gamma, p.looks).unwrap();
    }
    for v in set.values() {
        writeln!(out, "{v}").unwrap();
    }
    out
}

pub fn parse_samples(text: &str) -> Result<SampleSet> {
    let mut truth = None;
    let mut values = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('#') {
            if i != 0 {
                return Err(Error::format(format!("line {line_no}: header must be the first line")));
            }
            truth = Some(parse_sample_header(line_no, header)?);
            continue;
        }
        let v: f64 = parse_num(line_no, "sample value", line)?;
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::format(format!("line {line_no}: sample values must be positive")));
        }
        values.push(v);
    }
    if values.is_empty() {
        return Err(Error::format("sample file holds no values"));
    }
    SampleSet::new(values, truth)
}

fn parse_sample_header(line: usize, header: &str) -> Result<Gi0Params> {
    let (mut alpha, mut gamma, mut looks) = (None, None, None);
    for token in header.split_whitespace() {
        let (k, v) = token
            .split_once('=')
            .ok_or_else(|| Error::format(format!("line {line}: malformed header token `{token}`")))?;
        match k {
            "alpha" => alpha = Some(parse_num::<f64>(line, "alpha", v)?),
            "gamma" => gamma = Some(parse_num::<f64>(line, "gamma", v)?),
            "L" => looks = Some(parse_num::<u32>(line, "L", v)?),
            _ => return Err(Error::format(format!("line {line}: unknown header key `{k}`"))),
        }
    }
    match (alpha, gamma, looks) {
        (Some(a), Some(g), Some(l)) => Gi0Params::new(a, g, l)
            .map_err(|e| Error::format(format!("line {line}: {e}"))),
        _ => Err(Error::format(format!("line {line}: header needs alpha, gamma and L"))),
    }
}

pub fn save_samples(set: &SampleSet, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), format_samples(set).as_bytes())
}

pub fn load_samples(path: impl AsRef<Path>) -> Result<SampleSet> {
    let path = path.as_ref();
    parse_samples(&read_text(path)?)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Rasters

const GIRF_MAGIC: &str = "GIRF";
const GIRF_VERSION: u32 = 1;

/// `GIRF 1 <width> <height>\n` followed by little-endian f32 pixels, row-major.
pub fn encode_girf(raster: &Raster) -> Vec<u8> {
    let header = format!("{GIRF_MAGIC} {GIRF_VERSION} {} {}\n", raster.width(), raster.height());
    let mut out = Vec::with_capacity(header.len() + 4 * raster.pixels().len());
    out.extend_from_slice(header.as_bytes());
    for &v in raster.pixels() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_girf(bytes: &[u8]) -> Result<Raster> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format("GIRF header is not terminated"))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::format("GIRF header is not ASCII"))?;
    let fields: Vec<&str> = header.split(' ').collect();
    if fields.len() != 4 || fields[0] != GIRF_MAGIC {
        return Err(Error::format(format!("bad GIRF header `{header}`")));
    }
    let version: u32 = parse_num(1, "GIRF version", fields[1])?;
    if version != GIRF_VERSION {
        return Err(Error::Version {
            found: fields[1].into(),
            expected: GIRF_VERSION,
        });
    }
    let width: usize = parse_num(1, "width", fields[2])?;
    let height: usize = parse_num(1, "height", fields[3])?;
    let body = &bytes[nl + 1..];
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format("GIRF dimensions overflow"))?;
    if body.len() != expected {
        return Err(Error::format(format!(
            "GIRF body has {} bytes, expected {expected}",
            body.len()
        )));
    }
    let pixels = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Raster::new(width, height, pixels).map_err(|e| Error::format(format!("GIRF: {e}")))
}

/// Splits the whitespace/comment-separated header tokens of a netpbm file.
fn netpbm_tokens(bytes: &[u8], count: usize) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::with_capacity(count);
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if i >= bytes.len() {
            return Err(Error::format("truncated PGM header"));
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    Ok((tokens, i))
}

/// Reads an 8- or 16-bit grayscale PGM (plain P2 or binary P5).
pub fn decode_pgm(bytes: &[u8]) -> Result<Raster> {
    let (head, end) = netpbm_tokens(bytes, 4)?;
    let magic = head[0].as_str();
    if magic != "P2" && magic != "P5" {
        return Err(Error::format(format!("unsupported PGM magic `{magic}`")));
    }
    let width: usize = parse_num(1, "PGM width", &head[1])?;
    let height: usize = parse_num(1, "PGM height", &head[2])?;
    let maxval: u32 = parse_num(1, "PGM maxval", &head[3])?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(format!("PGM maxval {maxval} out of range")));
    }
    let n = width * height;
    let pixels: Vec<f64> = if magic == "P2" {
        let text = std::str::from_utf8(&bytes[end..]).map_err(|_| Error::format("P2 body is not ASCII"))?;
        let vals = text
            .split_whitespace()
            .map(|t| parse_num::<u32>(0, "PGM sample", t).map(f64::from))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != n {
            return Err(Error::format(format!("P2 body has {} samples, expected {n}", vals.len())));
        }
        vals
    } else {
        // exactly one whitespace byte separates the header from binary data
        let body = bytes.get(end + 1..).unwrap_or(&[]);
        let depth = if maxval < 256 { 1 } else { 2 };
        if body.len() != n * depth {
            return Err(Error::format(format!(
                "P5 body has {} bytes, expected {}",
                body.len(),
                n * depth
            )));
        }
        if depth == 1 {
            body.iter().map(|&b| f64::from(b)).collect()
        } else {
            body.chunks_exact(2)
                .map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])))
                .collect()
        }
    };
    if pixels.iter().any(|&v| v > f64::from(maxval)) {
        return Err(Error::format("PGM sample exceeds maxval"));
    }
    Raster::new(width, height, pixels).map_err(|e| Error::format(format!("PGM: {e}")))
}

/// Binary PGM with values rounded and clamped to `0..=maxval`.
pub fn encode_pgm(raster: &Raster, maxval: u16) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", raster.width(), raster.height(), maxval).into_bytes();
    for &v in raster.pixels() {
        let q = v.round().clamp(0.0, f64::from(maxval)) as u16;
        if maxval < 256 {
            out.push(q as u8);
        } else {
            out.extend_from_slice(&q.to_be_bytes());
        }
    }
    out
}

/// Loads a GIRF or PGM raster, recognised by its magic bytes.
pub fn load_raster(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let decoded = if bytes.starts_with(GIRF_MAGIC.as_bytes()) {
        decode_girf(&bytes)
    } else if bytes.starts_with(b"P2") || bytes.starts_with(b"P5") {
        decode_pgm(&bytes)
    } else {
        Err(Error::format("unrecognised raster format"))
    };
    decoded.map_err(|e| match e {
        Error::Format(m) => Error::format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn save_raster(raster: &Raster, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_girf(raster))
}

/// Binary PPM preview of a roughness map: values clipped to the success band
/// and mapped linearly from black (−15, smooth) to white (−1.5, rough).
pub fn render_ppm(map: &Raster) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", map.width(), map.height()).into_bytes();
    for &v in map.pixels() {
        let t = (v.clamp(SUCCESS_MIN, SUCCESS_MAX) - SUCCESS_MIN) / (SUCCESS_MAX - SUCCESS_MIN);
        let g = (255.0 * t).round() as u8;
        out.extend_from_slice(&[g, g, g]);
    }
    out
}

// ---------------------------------------------------------------------------
// Flat key-value text

/// Parsed `key = value` file. `#` starts a comment; keys may appear once.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
    lines: BTreeMap<String, usize>,
}

impl ConfigFile {
    /// Parses `text`, rejecting any key outside `allowed`.
    pub fn parse(text: &str, allowed: &[&str]) -> Result<Self> {
        let mut cfg = ConfigFile::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::param(format!("line {line_no}: expected `key = value`")))?;
            let (k, v) = (k.trim(), v.trim());
            if !allowed.contains(&k) {
                return Err(Error::param(format!(
                    "line {line_no}: unknown key `{k}` (allowed: {})",
                    allowed.join(", ")
                )));
            }
            if cfg.entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::param(format!("line {line_no}: duplicate key `{k}`")));
            }
            cfg.lines.insert(k.to_string(), line_no);
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, allowed: &[&str]) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&read_text(path)?, allowed)
            .map_err(|e| Error::param(format!("{}: {}", path.display(), strip_kind(e))))
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn bad(&self, key: &str, what: &str) -> Error {
        match self.lines.get(key) {
            Some(l) => Error::param(format!("line {l}: `{key}` {what}")),
            None => Error::param(format!("`{key}` {what}")),
        }
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|v| v.parse().map_err(|_| self.bad(key, &format!("has invalid value `{v}`"))))
            .transpose()
    }

    /// A comma- or whitespace-separated list, or an inclusive `start:step:stop` range.
    pub fn get_list<T: std::str::FromStr + FromRange>(&self, key: &str) -> Result<Option<Vec<T>>> {
        let Some(v) = self.raw(key) else {
            return Ok(None);
        };
        let list = parse_list::<T>(v).ok_or_else(|| self.bad(key, &format!("has invalid list `{v}`")))?;
        if list.is_empty() {
            return Err(self.bad(key, "is empty"));
        }
        Ok(Some(list))
    }

    /// Canonical text: keys sorted, one per line.
    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

fn strip_kind(e: Error) -> String {
    match e {
        Error::Parameter(m) | Error::Format(m) | Error::Spec(m) => m,
        other => other.to_string(),
    }
}

/// Numeric types that can expand a `start:step:stop` range.
pub trait FromRange: Sized {
    fn expand(start: &str, step: &str, stop: &str) -> Option<Vec<Self>>;
}

impl FromRange for f64 {
    fn expand(start: &str, step: &str, stop: &str) -> Option<Vec<f64>> {
        let (a, s, b): (f64, f64, f64) = (start.parse().ok()?, step.parse().ok()?, stop.parse().ok()?);
        if !(a.is_finite() && s.is_finite() && b.is_finite()) || s == 0.0 || (b - a) / s < -1e-9 {
            return None;
        }
        let count = ((b - a) / s + 1e-9).floor() as usize + 1;
        if count > 1_000_000 {
            return None;
        }
        Some((0..count).map(|i| a + s * i as f64).collect())
    }
}

macro_rules! int_range {
    ($($t:ty),*) => {$(
        impl FromRange for $t {
            fn expand(start: &str, step: &str, stop: &str) -> Option<Vec<$t>> {
                let (a, s, b): ($t, $t, $t) = (start.parse().ok()?, step.parse().ok()?, stop.parse().ok()?);
                if s == 0 || b < a || (b - a) / s > 1_000_000 {
                    return None;
                }
                Some((a..=b).step_by(s as usize).collect())
            }
        }
    )*};
}
int_range!(usize, u32, u64);

impl FromRange for String {
    fn expand(_: &str, _: &str, _: &str) -> Option<Vec<String>> {
        None
    }
}

pub fn parse_list<T: std::str::FromStr + FromRange>(v: &str) -> Option<Vec<T>> {
    let parts: Vec<&str> = v.split(':').map(str::trim).collect();
    match parts.len() {
        1 => v
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse().ok())
            .collect(),
        3 => T::expand(parts[0], parts[1], parts[2]),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// Mosaic layouts

/// ```text
/// width = 256
/// height = 256
/// looks = 1
/// region = 0 0 128 256 -1.5
/// region = 128 0 128 256 -15
/// ```
/// Each `region` line is `x y width height alpha`.
pub fn parse_mosaic_spec(text: &str) -> Result<MosaicSpec> {
    let (mut width, mut height, mut looks) = (None, None, None);
    let mut regions = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| Error::Spec(format!("line {line_no}: expected `key = value`")))?;
        let num = |what: &str, s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::Spec(format!("line {line_no}: invalid {what} `{s}`")))
        };
        let once = |slot: &Option<usize>| -> Result<()> {
            match slot {
                Some(_) => Err(Error::Spec(format!("line {line_no}: duplicate key `{k}`"))),
                None => Ok(()),
            }
        };
        match k {
            "width" => {
                once(&width)?;
                width = Some(num("width", v)?);
            }
            "height" => {
                once(&height)?;
                height = Some(num("height", v)?);
            }
            "looks" => {
                once(&looks)?;
                looks = Some(num("looks", v)?);
            }
            "region" => {
                let f: Vec<&str> = v.split_whitespace().collect();
                if f.len() != 5 {
                    return Err(Error::Spec(format!(
                        "line {line_no}: region needs `x y width height alpha`"
                    )));
                }
                let alpha: f64 = f[4]
                    .parse()
                    .map_err(|_| Error::Spec(format!("line {line_no}: invalid alpha `{}`", f[4])))?;
                regions.push(Region {
                    x: num("x", f[0])?,
                    y: num("y", f[1])?,
                    width: num("width", f[2])?,
                    height: num("height", f[3])?,
                    alpha,
                });
            }
            _ => return Err(Error::Spec(format!("line {line_no}: unknown key `{k}`"))),
        }
    }
    let need = |v: Option<usize>, k: &str| v.ok_or_else(|| Error::Spec(format!("missing `{k}`")));
    let looks = u32::try_from(need(looks, "looks")?)
        .map_err(|_| Error::Spec("looks out of range".into()))?;
    let spec = MosaicSpec {
        width: need(width, "width")?,
        height: need(height, "height")?,
        looks,
        regions,
    };
    spec.validate()?;
    Ok(spec)
}

pub fn format_mosaic_spec(spec: &MosaicSpec) -> String {
    let mut out = format!(
        "width = {}\nheight = {}\nlooks = {}\n",
        spec.width, spec.height, spec.looks
    );
    for r in &spec.regions {
        writeln!(out, "region = {} {} {} {} {}", r.x, r.y, r.width, r.height, r.alpha).unwrap();
    }
    out
}

pub fn load_mosaic_spec(path: impl AsRef<Path>) -> Result<MosaicSpec> {
    let path = path.as_ref();
    parse_mosaic_spec(&read_text(path)?).map_err(|e| match e {
        Error::Spec(m) => Error::Spec(format!("{}: {m}", path.display())),
        other => other,
    })
}
