//! Plain-text checkpoint: a versioned header, the network shape and window
//! length, the standardization statistics, then every tensor by name.
//! Values are written in shortest round-trip form, so save and load are
//! exact and identical parameters give identical files.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grf_net::features::Standardizer;
use crate::grf_net::model::{NetParams, NetShape};
use crate::grf_net::GrfNet;
use crate::sim::imu::CHANNELS;

pub const HEADER: &str = "# kneeassist grf-net checkpoint v1";

fn join(values: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{v}").expect("writing to a String");
    }
    s
}

pub fn to_string(net: &GrfNet) -> String {
    let sh = net.params.shape;
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    writeln!(
        out,
        "shape inputs {} hidden {} mlp_hidden {} fused {} window {}",
        sh.inputs, sh.hidden, sh.mlp_hidden, sh.fused, net.window_len
    )
    .unwrap();
    writeln!(out, "mean {}", join(&net.standardizer.mean)).unwrap();
    writeln!(out, "std {}", join(&net.standardizer.std)).unwrap();
    for t in net.params.tensors() {
        let dims: Vec<String> = t.dims.iter().map(|d| d.to_string()).collect();
        writeln!(out, "tensor {} {}", t.name, dims.join(" ")).unwrap();
        writeln!(out, "{}", join(t.data)).unwrap();
    }
    out
}

fn bad(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("line {line}: {msg}"))
}

fn floats(line: usize, s: &str) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|v| v.parse::<f64>().map_err(|_| bad(line, format!("'{v}' is not a number"))))
        .collect()
}

fn channel_stats(line: usize, text: Option<&str>, key: &str) -> Result<[f64; CHANNELS]> {
    let text = text.ok_or_else(|| bad(line, format!("missing '{key}' line")))?;
    let rest = text
        .strip_prefix(key)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| bad(line, format!("expected '{key}'")))?;
    let v = floats(line, rest)?;
    v.try_into()
        .map_err(|v: Vec<f64>| bad(line, format!("'{key}' has {} values, expected {CHANNELS}", v.len())))
}

pub fn from_str(text: &str) -> Result<GrfNet> {
    let mut lines = text.lines();
    match lines.next() {
        Some(HEADER) => {}
        Some(h) if h.starts_with("# kneeassist grf-net checkpoint") => {
            return Err(bad(1, format!("unsupported checkpoint version '{h}', expected '{HEADER}'")))
        }
        _ => return Err(bad(1, "not a grf-net checkpoint")),
    }

    let shape_line = lines.next().ok_or_else(|| bad(2, "missing shape line"))?;
    let tok: Vec<&str> = shape_line.split_whitespace().collect();
    let keys = ["inputs", "hidden", "mlp_hidden", "fused", "window"];
    if tok.len() != 11 || tok[0] != "shape" || (0..5).any(|i| tok[1 + 2 * i] != keys[i]) {
        return Err(bad(2, "malformed shape line"));
    }
    let num = |i: usize| tok[2 + 2 * i].parse::<usize>().map_err(|_| bad(2, format!("bad {}", keys[i])));
    let shape = NetShape { inputs: num(0)?, hidden: num(1)?, mlp_hidden: num(2)?, fused: num(3)? };
    let window_len = num(4)?;
    shape.validate().map_err(|e| bad(2, e))?;
    if shape.inputs != CHANNELS {
        return Err(bad(2, format!("network has {} input channels, expected {CHANNELS}", shape.inputs)));
    }
    let mean = channel_stats(3, lines.next(), "mean")?;
    let std = channel_stats(4, lines.next(), "std")?;

    let mut params = NetParams::zeros(shape);
    let mut line_no = 4;
    for t in params.tensors_mut() {
        line_no += 1;
        let head = lines.next().ok_or_else(|| bad(line_no, format!("missing tensor {}", t.name)))?;
        let tok: Vec<&str> = head.split_whitespace().collect();
        if tok.len() < 2 || tok[0] != "tensor" || tok[1] != t.name {
            return Err(bad(line_no, format!("expected tensor {}", t.name)));
        }
        let dims: Vec<usize> = tok[2..]
            .iter()
            .map(|d| d.parse().map_err(|_| bad(line_no, format!("bad dimension '{d}'"))))
            .collect::<Result<_>>()?;
        if dims != t.dims {
            return Err(bad(line_no, format!("tensor {} has dims {:?}, expected {:?}", t.name, dims, t.dims)));
        }
        line_no += 1;
        let values = floats(line_no, lines.next().unwrap_or(""))?;
        if values.len() != t.data.len() {
            return Err(bad(
                line_no,
                format!("tensor {} has {} values, expected {}", t.name, values.len(), t.data.len()),
            ));
        }
        t.data.copy_from_slice(&values);
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(bad(line_no + 1, "trailing content after last tensor"));
    }
    if !params.is_finite() {
        return Err(Error::Checkpoint("non-finite parameter".into()));
    }
    GrfNet::new(params, Standardizer { mean, std }, window_len)
}
