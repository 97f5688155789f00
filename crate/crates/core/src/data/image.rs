use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Decode an 8-bit PNG into `[3, H, W]` with values `v / 255`.
///
/// Grayscale is replicated to three channels and alpha is dropped. Palette
/// and sub-byte images are expanded to 8 bits first; 16-bit images are
/// rejected.
pub fn decode_png(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let decode_err = |e: png::DecodingError| Error::Decode {
        path: path.to_path_buf(),
        msg: e.to_string(),
    };
    let mut decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    decoder.set_transformations(Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(decode_err)?;
    let depth = reader.info().bit_depth;
    if depth == BitDepth::Sixteen {
        return Err(Error::UnsupportedBitDepth {
            path: path.to_path_buf(),
            depth: 16,
        });
    }
    let size = reader.output_buffer_size().ok_or_else(|| Error::Decode {
        path: path.to_path_buf(),
        msg: "image too large".into(),
    })?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(decode_err)?;
    let (w, h) = (frame.width as usize, frame.height as usize);
    let channels = match frame.color_type {
        ColorType::Grayscale => 1,
        ColorType::GrayscaleAlpha => 2,
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        ColorType::Indexed => {
            return Err(Error::Decode {
                path: path.to_path_buf(),
                msg: "palette was not expanded".into(),
            })
        }
    };
    let pixels = &buf[..frame.buffer_size()];
    let plane = h * w;
    let mut out = vec![0f32; 3 * plane];
    for (i, px) in pixels.chunks_exact(channels).enumerate() {
        for c in 0..3 {
            let v = if channels < 3 { px[0] } else { px[c] };
            out[c * plane + i] = f32::from(v) / 255.0;
        }
    }
    Tensor::new(&[3, h, w], out)
}

/// Write 8-bit interleaved RGB pixels as a PNG with fixed encoder settings,
/// so identical pixels always produce identical files.
pub fn encode_png_rgb(path: impl AsRef<Path>, width: u32, height: u32, rgb: &[u8]) -> Result<()> {
    let file = BufWriter::new(File::create(path.as_ref())?);
    let mut enc = png::Encoder::new(file, width, height);
    enc.set_color(ColorType::Rgb);
    enc.set_depth(BitDepth::Eight);
    let encode_err = |e: png::EncodingError| Error::Decode {
        path: path.as_ref().to_path_buf(),
        msg: e.to_string(),
    };
    let mut writer = enc.write_header().map_err(encode_err)?;
    writer.write_image_data(rgb).map_err(encode_err)?;
    writer.finish().map_err(encode_err)?;
    Ok(())
}
