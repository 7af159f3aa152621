//! Line-oriented model file:
//!
//! ```text
//! GI0NN 1
//! layers 2 8 4 1
//! act tanh tanh id
//! meta nm=2 looks=1 amin=-15 amax=-1.5 kernels= seed=42
//! W 8 2
//! <8 rows of 2 values>
//! b 8
//! <one row of 8 values>
//! ...
//! crc32 1c291ca3
//! ```
//!
//! Parameters are written with 17 significant digits, so files round-trip
//! bit-exactly. Image-mode models append ` dims=<w>x<h>` to the meta line.
//! The checksum covers every byte before the `crc32` line.

use std::fmt::Write as _;
use std::path::Path;

use super::{Activation, Dense, MlpModel, ModelMeta};
use crate::error::{Error, Result};

const MAGIC: &str = "GI0NN";
const VERSION: u32 = 1;

fn fmt_param(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn serialize_model(model: &MlpModel) -> String {
    let mut out = String::new();
    let sizes = model.layer_sizes();
    let meta = model.meta();
    writeln!(out, "{MAGIC} {VERSION}").unwrap();
    let sizes_txt: Vec<String> = sizes.iter().map(|s| s.to_string()).collect();
    writeln!(out, "layers {}", sizes_txt.join(" ")).unwrap();
    let acts: Vec<&str> = model.layers().iter().map(|l| l.activation.tag()).collect();
    writeln!(out, "act {}", acts.join(" ")).unwrap();
    let kernels: Vec<String> = meta.kernels.iter().map(|k| k.to_string()).collect();
    write!(
        out,
        "meta nm={} looks={} amin={} amax={} kernels={} seed={}",
        meta.moments,
        meta.looks,
        meta.alpha_min,
        meta.alpha_max,
        kernels.join(","),
        meta.seed
    )
    .unwrap();
    if let Some((w, h)) = meta.dims {
        write!(out, " dims={w}x{h}").unwrap();
    }
    out.push('\n');
    for layer in model.layers() {
        writeln!(out, "W {} {}", layer.rows, layer.cols).unwrap();
        for row in layer.weights.chunks(layer.cols) {
            let txt: Vec<String> = row.iter().map(|v| fmt_param(*v)).collect();
            writeln!(out, "{}", txt.join(" ")).unwrap();
        }
        writeln!(out, "b {}", layer.rows).unwrap();
        let txt: Vec<String> = layer.bias.iter().map(|v| fmt_param(*v)).collect();
        writeln!(out, "{}", txt.join(" ")).unwrap();
    }
    let crc = crc32fast::hash(out.as_bytes());
    writeln!(out, "crc32 {crc:08x}").unwrap();
    out
}

/// CRC-32 of the serialized model body.
pub fn model_checksum(model: &MlpModel) -> u32 {
    let text = serialize_model(model);
    let body_end = text.trim_end_matches('\n').rfind('\n').map(|i| i + 1).unwrap_or(0);
    crc32fast::hash(&text.as_bytes()[..body_end])
}

pub fn save_model(model: &MlpModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, serialize_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MlpModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_model(&text)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.inner
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| Error::format(format!("unexpected end of file, expected {what}")))
    }
}

fn bad(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::format(format!("line {line}: {msg}"))
}

fn parse_num<T: std::str::FromStr>(line: usize, tok: &str, what: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| bad(line, format!("invalid {what} `{tok}`")))
}

fn parse_row(line: usize, text: &str, expected: usize) -> Result<Vec<f64>> {
    let row: Vec<f64> = text
        .split_whitespace()
        .map(|t| parse_num(line, t, "parameter"))
        .collect::<Result<_>>()?;
    if row.len() != expected {
        return Err(bad(line, format!("expected {expected} values, found {}", row.len())));
    }
    Ok(row)
}

pub fn parse_model(text: &str) -> Result<MlpModel> {
    // Checksum first: it covers everything before the final line.
    let trimmed = text.strip_suffix('\n').unwrap_or(text);
    let body_end = trimmed.rfind('\n').map(|i| i + 1).unwrap_or(0);
    let crc_line = &trimmed[body_end..];
    let total_lines = trimmed.lines().count();
    let stored = crc_line
        .strip_prefix("crc32 ")
        .ok_or_else(|| bad(total_lines, "missing `crc32 <hex>` trailer"))?;
    let computed = format!("{:08x}", crc32fast::hash(&text.as_bytes()[..body_end]));

    let mut lines = Lines {
        inner: text[..body_end].lines().enumerate(),
    };

    let (n, header) = lines.next("header")?;
    let mut tok = header.split_whitespace();
    if tok.next() != Some(MAGIC) {
        return Err(bad(n, format!("expected `{MAGIC} {VERSION}` header")));
    }
    let version = tok.next().unwrap_or("");
    if version != VERSION.to_string() {
        return Err(Error::Version {
            found: version.to_string(),
            expected: VERSION,
        });
    }
    if stored != computed {
        return Err(Error::Integrity {
            stored: stored.to_string(),
            computed,
        });
    }

    let (n, layers_line) = lines.next("layer sizes")?;
    let sizes: Vec<usize> = match layers_line.strip_prefix("layers ") {
        Some(rest) => rest
            .split_whitespace()
            .map(|t| parse_num(n, t, "layer size"))
            .collect::<Result<_>>()?,
        None => return Err(bad(n, "expected `layers <sizes...>`")),
    };
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(bad(n, "layer sizes must list at least two positive widths"));
    }

    let (n, act_line) = lines.next("activations")?;
    let acts: Vec<Activation> = match act_line.strip_prefix("act ") {
        Some(rest) => rest
            .split_whitespace()
            .map(|t| Activation::from_tag(t).ok_or_else(|| bad(n, format!("unknown activation `{t}`"))))
            .collect::<Result<_>>()?,
        None => return Err(bad(n, "expected `act <tags...>`")),
    };
    if acts.len() != sizes.len() - 1 {
        return Err(bad(n, format!("expected {} activations, found {}", sizes.len() - 1, acts.len())));
    }

    let (n, meta_line) = lines.next("metadata")?;
    let meta = parse_meta(n, meta_line)?;
    if meta.moments != sizes[0] {
        return Err(bad(n, format!("nm={} disagrees with input width {}", meta.moments, sizes[0])));
    }

    let mut layers = Vec::with_capacity(acts.len());
    for (q, act) in acts.iter().enumerate() {
        let (rows, cols) = (sizes[q + 1], sizes[q]);
        let (n, w_head) = lines.next("weight header")?;
        if w_head != format!("W {rows} {cols}") {
            return Err(bad(n, format!("expected `W {rows} {cols}`, found `{w_head}`")));
        }
        let mut weights = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (n, row) = lines.next("weight row")?;
            weights.extend(parse_row(n, row, cols)?);
        }
        let (n, b_head) = lines.next("bias header")?;
        if b_head != format!("b {rows}") {
            return Err(bad(n, format!("expected `b {rows}`, found `{b_head}`")));
        }
        let (n, row) = lines.next("bias row")?;
        let bias = parse_row(n, row, rows)?;
        layers.push(Dense {
            rows,
            cols,
            weights,
            bias,
            activation: *act,
        });
    }
    if let Ok((n, extra)) = lines.next("") {
        return Err(bad(n, format!("unexpected trailing content `{extra}`")));
    }
    MlpModel::from_layers(layers, meta)
}

fn parse_meta(n: usize, line: &str) -> Result<ModelMeta> {
    let rest = line
        .strip_prefix("meta ")
        .ok_or_else(|| bad(n, "expected `meta key=value ...`"))?;
    let mut meta = ModelMeta::new(0, 0);
    let mut seen = Vec::new();
    for field in rest.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| bad(n, format!("malformed metadata field `{field}`")))?;
        match key {
            "nm" => meta.moments = parse_num(n, value, "nm")?,
            "looks" => meta.looks = parse_num(n, value, "looks")?,
            "amin" => meta.alpha_min = parse_num(n, value, "amin")?,
            "amax" => meta.alpha_max = parse_num(n, value, "amax")?,
            "kernels" => {
                meta.kernels = value
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(|k| parse_num(n, k, "kernel"))
                    .collect::<Result<_>>()?
            }
            "seed" => meta.seed = parse_num(n, value, "seed")?,
            "dims" => {
                let (w, h) = value
                    .split_once('x')
                    .ok_or_else(|| bad(n, format!("invalid dims `{value}`")))?;
                meta.dims = Some((parse_num(n, w, "width")?, parse_num(n, h, "height")?));
            }
            other => return Err(bad(n, format!("unknown metadata key `{other}`"))),
        }
        seen.push(key);
    }
    for required in ["nm", "looks", "amin", "amax", "kernels", "seed"] {
        if !seen.contains(&required) {
            return Err(bad(n, format!("metadata is missing `{required}`")));
        }
    }
    if meta.looks == 0 {
        return Err(bad(n, "looks must be at least 1"));
    }
    Ok(meta)
}
