//! Model file: magic `DLHM`, `u16` version, `u32` layer count, then one
//! table entry per layer (`u32` kind, `u32` attribute count, attributes,
//! `u32` tensor count, per tensor `u32` rank and `u32` dims), followed by all
//! tensors as `f32` in table order. Little-endian throughout.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{BatchNorm, CnnConfig, CnnModel, Conv3, Dense};
use crate::dataset::Cursor;
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"DLHM";
pub const MODEL_VERSION: u16 = 1;

const INPUT: u32 = 0;
const CONV: u32 = 1;
const NORM: u32 = 2;
const DENSE: u32 = 3;
const DROPOUT: u32 = 4;
const REGRESSION: u32 = 5;
const KINDS: [u32; 10] = [INPUT, CONV, NORM, CONV, NORM, DENSE, DROPOUT, DENSE, DROPOUT, REGRESSION];

struct Entry {
    kind: u32,
    attrs: Vec<usize>,
    tensors: Vec<(Vec<usize>, Vec<f64>)>,
}

fn conv_entry(c: &Conv3) -> Entry {
    Entry {
        kind: CONV,
        attrs: vec![3, c.c_in, c.c_out],
        tensors: vec![
            (vec![3, 3, c.c_in, c.c_out], c.weight.clone()),
            (vec![c.c_out], c.bias.clone()),
        ],
    }
}

fn norm_entry(n: &BatchNorm) -> Entry {
    let c = n.gamma.len();
    Entry {
        kind: NORM,
        attrs: vec![c],
        tensors: [&n.gamma, &n.beta, &n.running_mean, &n.running_var]
            .iter()
            .map(|v| (vec![c], v.to_vec()))
            .collect(),
    }
}

fn dense_entry(kind: u32, d: &Dense) -> Entry {
    Entry {
        kind,
        attrs: vec![d.n_in, d.n_out],
        tensors: vec![
            (vec![d.n_in, d.n_out], d.weight.clone()),
            (vec![d.n_out], d.bias.clone()),
        ],
    }
}

fn entries(m: &CnnModel) -> Vec<Entry> {
    let (h, w, c) = m.config.input_shape;
    let dropout = || Entry {
        kind: DROPOUT,
        attrs: vec![],
        tensors: vec![(vec![1], vec![m.config.dropout_p])],
    };
    vec![
        Entry {
            kind: INPUT,
            attrs: vec![h, w, c],
            tensors: vec![],
        },
        conv_entry(&m.conv1),
        norm_entry(&m.norm1),
        conv_entry(&m.conv2),
        norm_entry(&m.norm2),
        dense_entry(DENSE, &m.dense1),
        dropout(),
        dense_entry(DENSE, &m.dense2),
        dropout(),
        dense_entry(REGRESSION, &m.output),
    ]
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Invalid(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn to_bytes(model: &CnnModel) -> Result<Vec<u8>> {
    let table = entries(model);
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    put_u32(&mut out, table.len())?;
    for e in &table {
        out.extend_from_slice(&e.kind.to_le_bytes());
        put_u32(&mut out, e.attrs.len())?;
        for &a in &e.attrs {
            put_u32(&mut out, a)?;
        }
        put_u32(&mut out, e.tensors.len())?;
        for (shape, _) in &e.tensors {
            put_u32(&mut out, shape.len())?;
            for &d in shape {
                put_u32(&mut out, d)?;
            }
        }
    }
    for e in &table {
        for (_, data) in &e.tensors {
            for &v in data {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn save_model(model: &CnnModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<CnnModel> {
    from_bytes(&std::fs::read(path)?)
}

/// SHA-256 of [`to_bytes`], lowercase hex.
pub fn checksum(model: &CnnModel) -> Result<String> {
    let digest = Sha256::digest(to_bytes(model)?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

struct RawEntry {
    kind: u32,
    attrs: Vec<usize>,
    shapes: Vec<Vec<usize>>,
    offset: u64,
}

fn format_err(offset: u64, msg: impl Into<String>) -> Error {
    Error::Format {
        offset,
        msg: msg.into(),
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<CnnModel> {
    let mut cur = Cursor::new(buf);
    let magic = cur.take(4, "magic")?;
    if magic != MODEL_MAGIC {
        return Err(format_err(0, format!("bad magic {magic:?}, expected {MODEL_MAGIC:?}")));
    }
    let version = cur.u16("version")?;
    if version != MODEL_VERSION {
        return Err(format_err(4, format!("unsupported model version {version}")));
    }
    let n_layers = cur.u32("layer count")? as usize;
    if n_layers != KINDS.len() {
        return Err(format_err(6, format!("{n_layers} layers, expected {}", KINDS.len())));
    }
    let mut raw = Vec::with_capacity(n_layers);
    for (i, &expected) in KINDS.iter().enumerate() {
        let offset = cur.offset();
        let kind = cur.u32("layer kind")?;
        if kind != expected {
            return Err(format_err(offset, format!("layer {i} has kind {kind}, expected {expected}")));
        }
        let n_attrs = cur.u32("attribute count")? as usize;
        if n_attrs > 8 {
            return Err(format_err(offset, format!("layer {i} declares {n_attrs} attributes")));
        }
        let attrs = (0..n_attrs)
            .map(|_| cur.u32("attribute").map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let n_tensors = cur.u32("tensor count")? as usize;
        if n_tensors > 8 {
            return Err(format_err(offset, format!("layer {i} declares {n_tensors} tensors")));
        }
        let mut shapes = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let rank = cur.u32("tensor rank")? as usize;
            if rank > 4 {
                return Err(format_err(offset, format!("layer {i} has a tensor of rank {rank}")));
            }
            shapes.push(
                (0..rank)
                    .map(|_| cur.u32("tensor dimension").map(|v| v as usize))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        raw.push(RawEntry {
            kind,
            attrs,
            shapes,
            offset,
        });
    }

    let payload: u128 = raw
        .iter()
        .flat_map(|e| &e.shapes)
        .map(|s| s.iter().map(|&d| d as u128).product::<u128>())
        .sum();
    let available = (buf.len() as u64 - cur.offset()) as u128;
    if payload * 4 != available {
        return Err(format_err(
            cur.offset(),
            format!("shape table promises {} payload bytes, file has {available}", payload * 4),
        ));
    }
    let mut tensors = Vec::with_capacity(raw.len());
    for e in &raw {
        let mut ts = Vec::with_capacity(e.shapes.len());
        for s in &e.shapes {
            let n = s.iter().product();
            ts.push(cur.f32s(n, "tensor data")?.into_iter().map(f64::from).collect::<Vec<f64>>());
        }
        tensors.push(ts);
    }
    cur.finish()?;

    let expect = |e: &RawEntry, attrs: usize, shapes: &[Vec<usize>]| -> Result<()> {
        if e.attrs.len() != attrs || e.shapes != shapes {
            return Err(format_err(
                e.offset,
                format!("layer kind {} has attributes {:?} and shapes {:?}", e.kind, e.attrs, e.shapes),
            ));
        }
        Ok(())
    };
    let attr = |e: &RawEntry, k: usize| -> Result<usize> {
        e.attrs
            .get(k)
            .copied()
            .ok_or_else(|| format_err(e.offset, format!("layer kind {} missing attribute {k}", e.kind)))
    };
    let input = &raw[0];
    let (h, w, c) = (attr(input, 0)?, attr(input, 1)?, attr(input, 2)?);
    expect(input, 3, &[])?;
    let f = attr(&raw[1], 2)?;
    let u = attr(&raw[5], 1)?;
    let out_len = attr(&raw[9], 1)?;
    let conv_shapes = |ci: usize| vec![vec![3, 3, ci, f], vec![f]];
    expect(&raw[1], 3, &conv_shapes(c))?;
    expect(&raw[3], 3, &conv_shapes(f))?;
    for k in [2, 4] {
        expect(&raw[k], 1, &vec![vec![f]; 4])?;
    }
    expect(&raw[5], 2, &[vec![h * w * f, u], vec![u]])?;
    expect(&raw[7], 2, &[vec![u, u], vec![u]])?;
    expect(&raw[9], 2, &[vec![u, out_len], vec![out_len]])?;
    expect(&raw[6], 0, &[vec![1]])?;
    expect(&raw[8], 0, &[vec![1]])?;
    let p = tensors[6][0][0];
    if tensors[8][0][0] != p {
        return Err(format_err(raw[8].offset, "dropout layers disagree on probability"));
    }

    let mut tensors = tensors.into_iter();
    let mut next_layer = || tensors.next().expect("ten layers");
    next_layer();
    let conv = |ci: usize, t: Vec<Vec<f64>>| {
        let mut t = t.into_iter();
        Conv3 {
            c_in: ci,
            c_out: f,
            weight: t.next().expect("weight"),
            bias: t.next().expect("bias"),
        }
    };
    let norm = |t: Vec<Vec<f64>>| {
        let mut t = t.into_iter();
        BatchNorm {
            gamma: t.next().expect("gamma"),
            beta: t.next().expect("beta"),
            running_mean: t.next().expect("mean"),
            running_var: t.next().expect("var"),
        }
    };
    let dense = |n_in: usize, n_out: usize, t: Vec<Vec<f64>>| {
        let mut t = t.into_iter();
        Dense {
            n_in,
            n_out,
            weight: t.next().expect("weight"),
            bias: t.next().expect("bias"),
        }
    };
    let conv1 = conv(c, next_layer());
    let norm1 = norm(next_layer());
    let conv2 = conv(f, next_layer());
    let norm2 = norm(next_layer());
    let dense1 = dense(h * w * f, u, next_layer());
    next_layer();
    let dense2 = dense(u, u, next_layer());
    next_layer();
    let output = dense(u, out_len, next_layer());
    let config = CnnConfig {
        conv_filters: f,
        fc_units: u,
        dropout_p: p,
        input_shape: (h, w, c),
        output_len: out_len,
    };
    config
        .validate()
        .map_err(|e| format_err(raw[6].offset, e.to_string()))?;
    let model = CnnModel::from_layers(config, conv1, norm1, conv2, norm2, dense1, dense2, output)?;
    if !model.is_finite() {
        return Err(format_err(raw[0].offset, "non-finite parameter values"));
    }
    Ok(model)
}
