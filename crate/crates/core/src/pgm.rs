//! Binary PGM (P5) export of digit tiles.

use std::path::Path;

use crate::error::{Error, Result};
use crate::mnist::{to_byte, Image, IMAGE_SIDE};

/// Gray level of the 1-pixel lines between tiles.
pub const SEPARATOR: u8 = 128;

/// Encodes `images` as a grid with `cols` tiles per row, row-major, with a
/// 1-pixel separator between tiles. Missing tiles in the last row are black.
pub fn encode_grid(images: &[Image], cols: usize) -> Result<Vec<u8>> {
    if cols == 0 {
        return Err(Error::Parameter("grid needs at least one column".into()));
    }
    let n = images.len().max(1);
    let rows = n.div_ceil(cols);
    let width = cols * IMAGE_SIDE + cols - 1;
    let height = rows * IMAGE_SIDE + rows - 1;
    let mut px = vec![SEPARATOR; width * height];
    for tr in 0..rows {
        for tc in 0..cols {
            let img = images.get(tr * cols + tc);
            for r in 0..IMAGE_SIDE {
                for c in 0..IMAGE_SIDE {
                    let y = tr * (IMAGE_SIDE + 1) + r;
                    let x = tc * (IMAGE_SIDE + 1) + c;
                    px[y * width + x] = img.map_or(0, |i| to_byte(i.get(r, c)));
                }
            }
        }
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(px);
    Ok(out)
}

pub fn write_grid(path: impl AsRef<Path>, images: &[Image], cols: usize) -> Result<()> {
    crate::weights::write(path.as_ref(), &encode_grid(images, cols)?)
}
