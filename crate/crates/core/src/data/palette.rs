//! Class-colour palettes and label-map colourisation.

use super::image_io::RgbImage;
use crate::error::{Error, Result};
use crate::metrics::{LabelMap, IGNORE_LABEL};

/// The PASCAL VOC colour map: bits of the class id are spread over the high
/// bits of the three channels.
pub fn voc_palette(n: usize) -> Vec<[u8; 3]> {
    (0..n)
        .map(|i| {
            let mut c = i;
            let mut rgb = [0u8; 3];
            for j in 0..8 {
                for (k, ch) in rgb.iter_mut().enumerate() {
                    *ch |= (((c >> k) & 1) as u8) << (7 - j);
                }
                c >>= 3;
            }
            rgb
        })
        .collect()
}

/// Palette lookup per pixel; ignored pixels are black.
pub fn colorize_labels(label: &LabelMap, palette: &[[u8; 3]]) -> Result<RgbImage> {
    let mut img = RgbImage::new(label.width(), label.height());
    for (px, &v) in label.data().iter().enumerate() {
        let rgb = if v == IGNORE_LABEL {
            [0, 0, 0]
        } else {
            *palette.get(v as usize).ok_or_else(|| {
                Error::Evaluation(format!(
                    "class {v} at pixel {px} has no palette entry ({} colours)",
                    palette.len()
                ))
            })?
        };
        img.data[px * 3..px * 3 + 3].copy_from_slice(&rgb);
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_voc_entries() {
        let p = voc_palette(21);
        assert_eq!(p[0], [0, 0, 0]);
        assert_eq!(p[1], [128, 0, 0]);
        assert_eq!(p[2], [0, 128, 0]);
        assert_eq!(p[15], [192, 128, 128]);
        assert_eq!(p[20], [0, 64, 128]);
    }

    #[test]
    fn colorize_and_invert() {
        let p = voc_palette(5);
        let lab = LabelMap::new(2, 3, vec![0, 1, 2, 3, 4, 255]).unwrap();
        let img = colorize_labels(&lab, &p).unwrap();
        assert_eq!(img.pixel(2, 1), [0, 0, 0]);
        let back: Vec<u8> = (0..5)
            .map(|i| {
                let px = img.pixel(i % 3, i / 3);
                p.iter().position(|&c| c == px).unwrap() as u8
            })
            .collect();
        assert_eq!(back, &lab.data()[..5]);
    }

    #[test]
    fn background_is_solid() {
        let p = voc_palette(3);
        let img = colorize_labels(&LabelMap::filled(4, 4, 0), &p).unwrap();
        assert!(img.data.chunks(3).all(|c| c == p[0]));
    }

    #[test]
    fn short_palette_errors() {
        let lab = LabelMap::filled(1, 1, 5);
        assert!(colorize_labels(&lab, &voc_palette(5)).is_err());
    }
}
