//! PNG images and FLO1 flow files.

use std::path::Path;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Shape, Tensor};

pub const FLOW_MAGIC: [u8; 4] = *b"FLO1";

/// Any PNG, converted to 8-bit RGB, as a `(1, 3, h, w)` tensor in `[0, 1]`.
pub fn read_png(path: &Path) -> Result<Tensor> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw();
    Ok(Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| raw[(y * w + x) * 3 + c] as f64 / 255.0))
}

/// Write the first sample of an RGB batch, clamped and rounded to 8 bits.
pub fn write_png(path: &Path, t: &Tensor) -> Result<()> {
    let s = t.shape();
    if s.c != 3 || s.n == 0 {
        return Err(shape_err("write_png", format!("expected an RGB image, got {s}")));
    }
    let mut raw = vec![0u8; s.h * s.w * 3];
    for y in 0..s.h {
        for x in 0..s.w {
            for c in 0..3 {
                raw[(y * s.w + x) * 3 + c] = (t.at(0, c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    image::save_buffer(path, &raw, s.w as u32, s.h as u32, image::ExtendedColorType::Rgb8)?;
    Ok(())
}

/// Serialize a `(1, 2, h, w)` flow: magic, u32 h, u32 w, x plane, y plane (f32 LE).
pub fn encode_flow(flow: &Tensor) -> Result<Vec<u8>> {
    let s = flow.shape();
    if s.n != 1 || s.c != 2 {
        return Err(shape_err("write_flow", format!("expected (1, 2, h, w), got {s}")));
    }
    let mut out = Vec::with_capacity(12 + 8 * s.h * s.w);
    out.extend_from_slice(&FLOW_MAGIC);
    out.extend_from_slice(&(s.h as u32).to_le_bytes());
    out.extend_from_slice(&(s.w as u32).to_le_bytes());
    for v in flow.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_flow(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 4 {
        return Err(Error::Truncated { what: "flow file", detail: format!("{} bytes", bytes.len()) });
    }
    let found: [u8; 4] = bytes[..4].try_into().unwrap();
    if found != FLOW_MAGIC {
        return Err(Error::BadMagic { expected: FLOW_MAGIC, found });
    }
    if bytes.len() < 12 {
        return Err(Error::Truncated { what: "flow file", detail: "missing dimensions".into() });
    }
    let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let need = 12 + 8 * h * w;
    if bytes.len() != need {
        return Err(Error::Truncated { what: "flow file", detail: format!("{} bytes, expected {need} for {h}x{w}", bytes.len()) });
    }
    let data = bytes[12..].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect();
    Tensor::from_vec(Shape::new(1, 2, h, w), data)
}

pub fn write_flow(path: &Path, flow: &Tensor) -> Result<()> {
    std::fs::write(path, encode_flow(flow)?)?;
    Ok(())
}

pub fn read_flow(path: &Path) -> Result<Tensor> {
    decode_flow(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flow_layout() {
        let f = Tensor::from_vec(Shape::new(1, 2, 1, 2), vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let b = encode_flow(&f).unwrap();
        assert_eq!(&b[..4], b"FLO1");
        assert_eq!(b.len(), 12 + 16);
        assert_eq!(f32::from_le_bytes(b[16..20].try_into().unwrap()), -2.0);
        assert_eq!(decode_flow(&b).unwrap(), f);
    }

    #[test]
    fn truncated_flow_rejected() {
        let f = Tensor::zeros(Shape::new(1, 2, 2, 2));
        let b = encode_flow(&f).unwrap();
        assert!(matches!(decode_flow(&b[..b.len() - 1]), Err(Error::Truncated { .. })));
    }
}
