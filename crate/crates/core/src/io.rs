//! Tensor containers, 8-bit images and checkpoints.
//!
//! A tensor container is `"DCTN"`, version `1`, dtype `0` (f32), a `u32`
//! rank, `rank` `u32` dims and the little-endian payload. A checkpoint is a
//! sequence of `(u32 name length, UTF-8 name, container)` records, one per
//! parameter in store order, preceded by a `meta.dcnet` record describing the
//! graph configuration.
//!
//! Every write goes to a temporary sibling file that is renamed into place,
//! and every read validates the whole input before returning anything.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::auxmaps::BinaryMask;
use crate::dcnet::{DCNet, DCNetConfig, Dataset, Sample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TENSOR_MAGIC: &[u8; 4] = b"DCTN";
pub const TENSOR_VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 0;
/// Name of the checkpoint record holding the graph configuration.
pub const META_RECORD: &str = "meta.dcnet";

fn format_err<T>(offset: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::Format {
        offset: offset as u64,
        message: message.into(),
    })
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return format_err(self.pos, format!("truncated {what}: need {n} bytes"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Appends the container encoding of `t` (always rank 4).
pub fn encode_tensor_into(t: &Tensor, out: &mut Vec<u8>) {
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(TENSOR_VERSION);
    out.push(DTYPE_F32);
    out.extend_from_slice(&4u32.to_le_bytes());
    for d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(18 + 4 * t.len());
    encode_tensor_into(t, &mut out);
    out
}

fn read_tensor(r: &mut Reader) -> Result<Tensor> {
    let start = r.pos;
    if r.take(4, "magic")? != TENSOR_MAGIC {
        return format_err(start, "bad tensor magic");
    }
    let at = r.pos;
    let version = r.u8("version")?;
    if version != TENSOR_VERSION {
        return format_err(at, format!("unsupported version {version}"));
    }
    let at = r.pos;
    let dtype = r.u8("dtype")?;
    if dtype != DTYPE_F32 {
        return format_err(at, format!("unsupported dtype {dtype}"));
    }
    let at = r.pos;
    let rank = r.u32("rank")? as usize;
    if rank == 0 || rank > 4 {
        return format_err(at, format!("rank {rank} outside 1..=4"));
    }
    let mut shape = [1usize; 4];
    for i in 0..rank {
        shape[4 - rank + i] = r.u32("dims")? as usize;
    }
    let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
    let Some(bytes) = count.and_then(|c| c.checked_mul(4)) else {
        return format_err(at, "dims overflow");
    };
    let payload = r.take(bytes, "payload")?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(shape, data)
}

/// Decodes exactly one container occupying all of `bytes`.
pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let mut r = Reader { bytes, pos: 0 };
    let t = read_tensor(&mut r)?;
    if !r.done() {
        return format_err(r.pos, "trailing bytes after tensor");
    }
    Ok(t)
}

pub fn save_tensor(t: &Tensor, path: &Path) -> Result<()> {
    write_atomic(path, &encode_tensor(t))
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    decode_tensor(&fs::read(path)?)
}

/// Reads the next whitespace-delimited header token, skipping `#` comments.
fn header_token<'a>(r: &mut Reader<'a>) -> Result<(usize, &'a [u8])> {
    loop {
        match r.bytes.get(r.pos) {
            Some(b) if b.is_ascii_whitespace() => r.pos += 1,
            Some(b'#') => {
                while r.bytes.get(r.pos).is_some_and(|&b| b != b'\n') {
                    r.pos += 1;
                }
            }
            Some(_) => break,
            None => return format_err(r.pos, "truncated header"),
        }
    }
    let start = r.pos;
    while r.bytes.get(r.pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        r.pos += 1;
    }
    Ok((start, &r.bytes[start..r.pos]))
}

fn header_number(r: &mut Reader, what: &str) -> Result<(usize, usize)> {
    let (at, tok) = header_token(r)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&v| v > 0)
        .map_or_else(|| format_err(at, format!("bad {what}")), |v| Ok((at, v)))
}

/// Parses a binary `P5` (gray) or `P6` (RGB) image with maxval 255 into a
/// `(1, c, h, w)` tensor with values `v / 255`.
pub fn decode_pnm(bytes: &[u8]) -> Result<Tensor> {
    let mut r = Reader { bytes, pos: 0 };
    let channels = match r.take(2, "magic")? {
        b"P5" => 1,
        b"P6" => 3,
        _ => return format_err(0, "expected P5 or P6 magic"),
    };
    let (_, w) = header_number(&mut r, "width")?;
    let (_, h) = header_number(&mut r, "height")?;
    let (at, maxval) = header_number(&mut r, "maxval")?;
    if maxval != 255 {
        return format_err(at, "only maxval 255 is supported");
    }
    let at = r.pos;
    if !r.u8("header terminator")?.is_ascii_whitespace() {
        return format_err(at, "expected whitespace after maxval");
    }
    let pixels = r.take(channels * h * w, "pixel data")?;
    if !r.done() {
        return format_err(r.pos, "trailing bytes after pixel data");
    }
    Ok(Tensor::from_fn([1, channels, h, w], |_, c, y, x| {
        pixels[(y * w + x) * channels + c] as f32 / 255.0
    }))
}

pub fn read_pgm(path: &Path) -> Result<Tensor> {
    let t = decode_pnm(&fs::read(path)?)?;
    if t.dims().1 != 1 {
        return format_err(0, "expected a P5 gray image");
    }
    Ok(t)
}

/// Reads a `P5` or `P6` image.
pub fn read_image(path: &Path) -> Result<Tensor> {
    decode_pnm(&fs::read(path)?)
}

/// Encodes a `(1, 1, h, w)` tensor as `P5`, quantizing round half up after
/// clamping to `[0, 1]`.
pub fn encode_pgm(t: &Tensor) -> Result<Vec<u8>> {
    let (n, c, h, w) = t.dims();
    if n != 1 || c != 1 {
        return crate::error::invalid(format!("PGM needs a (1, 1, h, w) tensor, got {:?}", t.shape()));
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(t.data().iter().map(|&v| {
        let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        crate::metrics::quantize(v)
    }));
    Ok(out)
}

pub fn write_pgm(t: &Tensor, path: &Path) -> Result<()> {
    write_atomic(path, &encode_pgm(t)?)
}

/// Encodes a `(1, 3, h, w)` tensor as `P6`.
pub fn encode_ppm(t: &Tensor) -> Result<Vec<u8>> {
    let (n, c, h, w) = t.dims();
    if n != 1 || c != 3 {
        return crate::error::invalid(format!("PPM needs a (1, 3, h, w) tensor, got {:?}", t.shape()));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                let v = t.at(0, ch, y, x);
                out.push(crate::metrics::quantize(if v.is_nan() {
                    0.0
                } else {
                    v.clamp(0.0, 1.0)
                }));
            }
        }
    }
    Ok(out)
}

pub fn write_ppm(t: &Tensor, path: &Path) -> Result<()> {
    write_atomic(path, &encode_ppm(t)?)
}

/// Files in `dir` with extension `ext`, sorted by name.
pub fn list_files(dir: &Path, ext: &str) -> Result<Vec<std::path::PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext)) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Loads `dir/images/<name>.ppm` (or `.pgm`, replicated to three channels)
/// paired with `dir/masks/<name>.pgm`. Masks are thresholded at 0.5.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let masks = list_files(&dir.join("masks"), "pgm")?;
    if masks.is_empty() {
        return crate::error::invalid(format!("no masks under {}", dir.join("masks").display()));
    }
    let mut samples = Vec::with_capacity(masks.len());
    for mask_path in masks {
        let name = stem(&mask_path);
        let ppm = dir.join("images").join(format!("{name}.ppm"));
        let pgm = dir.join("images").join(format!("{name}.pgm"));
        let image = if ppm.is_file() {
            read_image(&ppm)?
        } else if pgm.is_file() {
            let g = read_pgm(&pgm)?;
            Tensor::from_fn([1, 3, g.dims().2, g.dims().3], |_, _, y, x| g.at(0, 0, y, x))
        } else {
            return crate::error::invalid(format!("no image for mask `{name}`"));
        };
        let mask = BinaryMask::threshold(&read_pgm(&mask_path)?)?;
        samples.push(Sample::from_mask(name, image, &mask)?);
    }
    Ok(Dataset { samples })
}

/// Writes the images and masks of `data` in the layout read by [`load_dataset`].
pub fn save_dataset(data: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("masks"))?;
    for s in &data.samples {
        write_ppm(&s.image, &dir.join("images").join(format!("{}.ppm", s.name)))?;
        write_pgm(&s.saliency, &dir.join("masks").join(format!("{}.pgm", s.name)))?;
    }
    Ok(())
}

fn config_to_meta(cfg: &DCNetConfig, merged: bool) -> Tensor {
    let mut v = vec![
        cfg.encoder_stages as f32,
        cfg.blocks_per_stage as f32,
        cfg.in_channels as f32,
        cfg.input_size.0 as f32,
        cfg.input_size.1 as f32,
        merged as u8 as f32,
    ];
    v.extend(cfg.widths.iter().map(|&w| w as f32));
    let len = v.len();
    Tensor::new([1, 1, 1, len], v).expect("sized")
}

fn meta_to_config(t: &Tensor, offset: usize) -> Result<(DCNetConfig, bool)> {
    let v = t.data();
    let as_count = |x: f32| -> Option<usize> { (x >= 0.0 && x.fract() == 0.0 && x < 1e7).then_some(x as usize) };
    let fields: Option<Vec<usize>> = v.iter().map(|&x| as_count(x)).collect();
    let Some(f) = fields.filter(|f| f.len() >= 6 && f[5] <= 1) else {
        return format_err(offset, "malformed meta record");
    };
    let cfg = DCNetConfig {
        encoder_stages: f[0],
        blocks_per_stage: f[1],
        in_channels: f[2],
        input_size: (f[3], f[4]),
        widths: f[6..].to_vec(),
    };
    if cfg.widths.len() != cfg.encoder_stages {
        return format_err(offset, "meta widths do not match stage count");
    }
    Ok((cfg, f[5] == 1))
}

pub fn encode_checkpoint(net: &DCNet) -> Vec<u8> {
    let mut out = Vec::new();
    let mut record = |name: &str, t: &Tensor| {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        encode_tensor_into(t, &mut out);
    };
    record(META_RECORD, &config_to_meta(&net.config, net.is_merged()));
    for p in net.store.iter() {
        record(&p.name, &p.value);
    }
    out
}

pub fn save_checkpoint(net: &DCNet, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(net))
}

/// Parsed checkpoint records in file order, meta record included.
pub fn decode_records(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    let mut records: Vec<(String, Tensor)> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    while !r.done() {
        let at = r.pos;
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Format {
                offset: (at + 4) as u64,
                message: "record name is not UTF-8".into(),
            })?
            .to_string();
        if !seen.insert(name.clone()) {
            return format_err(at, format!("duplicate record `{name}`"));
        }
        let t = read_tensor(&mut r)?;
        records.push((name, t));
    }
    Ok(records)
}

/// Copies every record into `net`, failing without modification when names
/// or shapes disagree.
fn assign_records(net: &mut DCNet, records: &[(String, Tensor)]) -> Result<()> {
    let params: Vec<_> = records.iter().filter(|(n, _)| n != META_RECORD).collect();
    for p in net.store.iter() {
        let Some((_, t)) = params.iter().find(|(n, _)| *n == p.name) else {
            return Err(Error::ParameterMismatch {
                name: p.name.clone(),
                message: "missing from checkpoint".into(),
            });
        };
        if t.shape() != p.value.shape() {
            return Err(Error::ParameterMismatch {
                name: p.name.clone(),
                message: format!("checkpoint shape {:?}, graph shape {:?}", t.shape(), p.value.shape()),
            });
        }
    }
    if let Some((name, _)) = params.iter().find(|(n, _)| net.store.id(n).is_none()) {
        return Err(Error::ParameterMismatch {
            name: name.clone(),
            message: "not present in graph".into(),
        });
    }
    for (name, t) in params {
        let id = net.store.id(name).expect("checked above");
        net.store.set_value(id, t.clone())?;
    }
    Ok(())
}

/// Rebuilds the graph described by the checkpoint and loads its parameters.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<DCNet> {
    let records = decode_records(bytes)?;
    let Some((_, meta)) = records.first().filter(|(n, _)| n == META_RECORD) else {
        return format_err(0, format!("first record must be `{META_RECORD}`"));
    };
    let (cfg, merged) = meta_to_config(meta, 0)?;
    let mut net = DCNet::build_layout(&cfg, merged, 0)?;
    assign_records(&mut net, &records)?;
    Ok(net)
}

pub fn load_checkpoint(path: &Path) -> Result<DCNet> {
    decode_checkpoint(&fs::read(path)?)
}

/// Loads a checkpoint into an existing graph of the same shape tree. On any
/// error `net` is left untouched.
pub fn load_checkpoint_into(net: &mut DCNet, path: &Path) -> Result<()> {
    let records = decode_records(&fs::read(path)?)?;
    assign_records(net, &records)
}
