//! Model checkpoints: a JSON header line followed by one line per tensor with
//! base64-packed little-endian `f32` values.

use std::io::{BufRead, Write};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{HeadMode, ModelParams, ModelShape};
use crate::dataset::io::{pack_f32, unpack_f32};
use crate::error::{Error, Result};

pub const CHECKPOINT_SCHEMA: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    schema: u32,
    #[serde(rename = "D")]
    dim: usize,
    w: usize,
    #[serde(rename = "K")]
    num_classes: usize,
    hidden: usize,
    head_mode: HeadMode,
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    data: String,
}

const NAMES: [&str; 4] = ["w1", "b1", "w2", "b2"];

/// Writes `params` as 32-bit floats. Refuses non-finite parameters.
pub fn write_checkpoint<W: Write>(params: &ModelParams, mut out: W) -> Result<()> {
    if !params.is_finite() {
        return Err(Error::Dimension(
            "refusing to checkpoint non-finite parameters".into(),
        ));
    }
    let s = params.shape;
    let header = Header {
        schema: CHECKPOINT_SCHEMA,
        dim: s.dim,
        w: s.context,
        num_classes: s.num_classes,
        hidden: s.hidden,
        head_mode: s.head_mode,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    let shapes = [
        params.w1.shape().to_vec(),
        params.b1.shape().to_vec(),
        params.w2.shape().to_vec(),
        params.b2.shape().to_vec(),
    ];
    for ((name, shape), tensor) in NAMES.iter().zip(shapes).zip(params.tensors()) {
        let values: Vec<f32> = tensor.iter().map(|&v| v as f32).collect();
        let record = TensorRecord {
            name: name.to_string(),
            shape,
            data: pack_f32(&values),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(input: R) -> Result<ModelParams> {
    let mut lines = input.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::parse(1, "missing checkpoint header"))??;
    let header: Header =
        serde_json::from_str(&header_line).map_err(|e| Error::parse(1, e.to_string()))?;
    if header.schema != CHECKPOINT_SCHEMA {
        return Err(Error::Schema {
            found: header.schema,
            expected: CHECKPOINT_SCHEMA,
        });
    }
    let shape = ModelShape {
        dim: header.dim,
        context: header.w,
        num_classes: header.num_classes,
        hidden: header.hidden,
        head_mode: header.head_mode,
    };
    let mut params = ModelParams::zeros(shape);
    let expected = [
        params.w1.shape().to_vec(),
        params.b1.shape().to_vec(),
        params.w2.shape().to_vec(),
        params.b2.shape().to_vec(),
    ];
    let mut tensors: Vec<Vec<f64>> = Vec::with_capacity(4);
    for (i, name) in NAMES.iter().enumerate() {
        let line_no = i + 2;
        let line = lines
            .next()
            .ok_or_else(|| Error::parse(line_no, format!("missing tensor {name}")))??;
        let record: TensorRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(line_no, e.to_string()))?;
        if record.name != *name || record.shape != expected[i] {
            return Err(Error::parse(
                line_no,
                format!(
                    "expected tensor {name} {:?}, found {} {:?}",
                    expected[i], record.name, record.shape
                ),
            ));
        }
        let values = unpack_f32(&record.data).map_err(|e| Error::parse(line_no, e))?;
        if values.len() != expected[i].iter().product::<usize>() {
            return Err(Error::parse(line_no, "tensor length does not match shape"));
        }
        tensors.push(values.into_iter().map(f64::from).collect());
    }
    let mut it = tensors.into_iter();
    let (i, h, o) = (shape.input_dim(), shape.hidden, shape.outputs());
    params.w1 = Array2::from_shape_vec((i, h), it.next().unwrap()).expect("checked length");
    params.b1 = Array1::from_vec(it.next().unwrap());
    params.w2 = Array2::from_shape_vec((h, o), it.next().unwrap()).expect("checked length");
    params.b2 = Array1::from_vec(it.next().unwrap());
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_at_f32_precision() {
        let params = ModelParams::init(ModelShape::new(4, 3, HeadMode::Clip), 11);
        let mut buf = Vec::new();
        write_checkpoint(&params, &mut buf).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.shape, params.shape);
        for (a, b) in back.tensors().iter().zip(params.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(*x, *y as f32 as f64);
            }
        }
    }

    #[test]
    fn non_finite_params_are_never_written() {
        let mut params = ModelParams::zeros(ModelShape::new(2, 1, HeadMode::Frame));
        params.b2[0] = f64::NAN;
        let mut buf = Vec::new();
        assert!(write_checkpoint(&params, &mut buf).is_err());
        assert!(buf.is_empty());
    }
}
