use serde::{Deserialize, Serialize};

use crate::{Error, Result, Rng, Tensor};

/// Zero-pad every side by `pad`, then crop a `crop × crop` window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PadCrop {
    pub pad: usize,
    pub crop: usize,
}

/// Training-time image augmentation for `(n, c, h, w)` batches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Augment {
    #[serde(default)]
    pub flip_horizontal: bool,
    #[serde(default)]
    pub pad_crop: Option<PadCrop>,
}

impl Augment {
    pub fn is_identity(&self) -> bool {
        !self.flip_horizontal && self.pad_crop.is_none()
    }

    /// Draws, per image, a flip coin (if enabled) and then a crop offset (if
    /// enabled), and applies them.
    pub fn apply(&self, batch: &Tensor, rng: &mut Rng) -> Result<Tensor> {
        if self.is_identity() {
            return Ok(batch.clone());
        }
        let (n, _, h, w) = image_dims(batch)?;
        if let Some(pc) = self.pad_crop {
            check_crop(pc, h, w)?;
        }
        let mut flips = Vec::with_capacity(n);
        let mut offsets = Vec::with_capacity(n);
        for _ in 0..n {
            flips.push(self.flip_horizontal && rng.bernoulli(0.5));
            if let Some(pc) = self.pad_crop {
                let oy = rng.below(h + 2 * pc.pad - pc.crop + 1);
                let ox = rng.below(w + 2 * pc.pad - pc.crop + 1);
                offsets.push((oy, ox));
            }
        }
        let flipped = flip_horizontal(batch, &flips)?;
        match self.pad_crop {
            Some(pc) => pad_crop(&flipped, pc, &offsets),
            None => Ok(flipped),
        }
    }
}

fn image_dims(batch: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match *batch.shape() {
        [n, c, h, w] => Ok((n, c, h, w)),
        ref s => Err(Error::Shape(format!("augmentation needs (n, c, h, w), got {s:?}"))),
    }
}

fn check_crop(pc: PadCrop, h: usize, w: usize) -> Result<()> {
    if pc.crop == 0 || pc.crop > h + 2 * pc.pad || pc.crop > w + 2 * pc.pad {
        return Err(Error::Config(format!(
            "crop {} does not fit a {h}x{w} image padded by {}",
            pc.crop, pc.pad
        )));
    }
    Ok(())
}

/// Mirrors the width axis of every image whose mask entry is set.
pub fn flip_horizontal(batch: &Tensor, mask: &[bool]) -> Result<Tensor> {
    let (n, c, h, w) = image_dims(batch)?;
    if mask.len() != n {
        return Err(Error::Shape(format!("{} flip flags for {n} images", mask.len())));
    }
    let mut out = batch.clone();
    for (i, _) in mask.iter().enumerate().filter(|(_, &f)| f) {
        for line in out.row_mut(i).chunks_mut(w).take(c * h) {
            line.reverse();
        }
    }
    Ok(out)
}

/// Zero-pads each image and crops the window whose top-left corner in the
/// padded image is `offsets[i]`.
pub fn pad_crop(batch: &Tensor, pc: PadCrop, offsets: &[(usize, usize)]) -> Result<Tensor> {
    let (n, c, h, w) = image_dims(batch)?;
    check_crop(pc, h, w)?;
    if offsets.len() != n {
        return Err(Error::Shape(format!("{} offsets for {n} images", offsets.len())));
    }
    let (ph, pw) = (h + 2 * pc.pad, w + 2 * pc.pad);
    let k = pc.crop;
    let mut data = vec![0.0; n * c * k * k];
    for (i, &(oy, ox)) in offsets.iter().enumerate() {
        if oy + k > ph || ox + k > pw {
            return Err(Error::Config(format!("offset ({oy}, {ox}) leaves the padded image")));
        }
        let src = batch.row(i);
        for ch in 0..c {
            for y in 0..k {
                let sy = (oy + y).checked_sub(pc.pad).filter(|&v| v < h);
                let Some(sy) = sy else { continue };
                for x in 0..k {
                    if let Some(sx) = (ox + x).checked_sub(pc.pad).filter(|&v| v < w) {
                        data[((i * c + ch) * k + y) * k + x] = src[(ch * h + sy) * w + sx];
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, c, k, k], data)
}
