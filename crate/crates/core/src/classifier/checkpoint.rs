//! Binary model checkpoints.
//!
//! Layout (little-endian): `IGM1`, mode byte, u64 channels, u64 in_dim,
//! u64 hidden, u64 classes, then per channel W1 and W2 row-major as f64.
//! The mode byte's low nibble is the mode (0 os_mlp, 1 sgc, 2 gcn); bit 4
//! marks an identity nonlinearity on a mode that defaults to ReLU.

use std::io::{Read, Write};

use ndarray::Array2;

use super::{Activation, ChannelWeights, ClassifierModel, Mode};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"IGM1";
const IDENTITY_FLAG: u8 = 0x10;

fn mode_byte(model: &ClassifierModel) -> u8 {
    let base = match model.mode {
        Mode::OsMlp => 0,
        Mode::Sgc => 1,
        Mode::GcnBaseline => 2,
    };
    if model.activation != model.mode.default_activation() {
        base | IDENTITY_FLAG
    } else {
        base
    }
}

pub fn write_checkpoint<W: Write>(model: &ClassifierModel, mut w: W) -> Result<()> {
    model.validate()?;
    w.write_all(MAGIC)?;
    w.write_all(&[mode_byte(model)])?;
    for dim in [model.num_channels(), model.in_dim(), model.hidden(), model.num_classes()] {
        w.write_all(&(dim as u64).to_le_bytes())?;
    }
    for ch in &model.channels {
        for v in ch.w1.iter().chain(ch.w2.iter()) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_block<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let mut data = Vec::with_capacity(rows * cols);
    let mut b = [0u8; 8];
    for _ in 0..rows * cols {
        r.read_exact(&mut b)?;
        data.push(f64::from_le_bytes(b));
    }
    Ok(Array2::from_shape_vec((rows, cols), data).expect("block shape"))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ClassifierModel> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a model checkpoint (bad magic)".into()));
    }
    let mut byte = [0u8; 1];
    r.read_exact(&mut byte)?;
    let mode = match byte[0] & 0x0f {
        0 => Mode::OsMlp,
        1 => Mode::Sgc,
        2 => Mode::GcnBaseline,
        m => return Err(Error::Format(format!("unknown mode byte {m}"))),
    };
    let activation = if byte[0] & IDENTITY_FLAG != 0 {
        Activation::Identity
    } else {
        mode.default_activation()
    };
    let dims: Vec<usize> = (0..4)
        .map(|_| read_u64(&mut r).map(|v| v as usize))
        .collect::<Result<_>>()?;
    let (s, in_dim, hidden, classes) = (dims[0], dims[1], dims[2], dims[3]);
    if s == 0 || in_dim == 0 || hidden == 0 || classes < 2 {
        return Err(Error::Format(format!("implausible checkpoint dims {dims:?}")));
    }
    let channels = (0..s)
        .map(|_| {
            Ok(ChannelWeights {
                w1: read_block(&mut r, in_dim, hidden)?,
                w2: read_block(&mut r, hidden, classes)?,
            })
        })
        .collect::<Result<_>>()?;
    let model = ClassifierModel {
        mode,
        activation,
        channels,
    };
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn roundtrip_is_exact() {
        let mut rng = Rng::new(3);
        for (mode, act) in [
            (Mode::OsMlp, Activation::Relu),
            (Mode::Sgc, Activation::Identity),
            (Mode::GcnBaseline, Activation::Identity),
        ] {
            let model = ClassifierModel::init(mode, 2, 5, 3, 2, &mut rng).with_activation(act);
            let mut buf = Vec::new();
            write_checkpoint(&model, &mut buf).unwrap();
            assert_eq!(&buf[..4], b"IGM1");
            assert_eq!(buf.len(), 4 + 1 + 32 + 2 * 8 * (5 * 3 + 3 * 2));
            assert_eq!(read_checkpoint(&buf[..]).unwrap(), model);
        }
    }

    #[test]
    fn bad_magic_rejected() {
        assert!(read_checkpoint(&b"IGF1\0\0\0\0"[..]).is_err());
    }

    #[test]
    fn truncated_rejected() {
        let model = ClassifierModel::zeros(Mode::OsMlp, 1, 2, 2, 2);
        let mut buf = Vec::new();
        write_checkpoint(&model, &mut buf).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(read_checkpoint(&buf[..]).is_err());
    }
}
