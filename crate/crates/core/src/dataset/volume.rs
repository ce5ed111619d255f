//! Per-frame scalar maps: binary object masks and conspicuity channels.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{list_frames, Channel, DatasetError, Feature, ObjectCategory};
use crate::geometry::CropRect;

/// A stack of equally sized frames of `f32` values, row-major per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    width: u32,
    height: u32,
    frames: usize,
    data: Vec<f32>,
}

impl Volume {
    pub fn new(
        width: u32,
        height: u32,
        frames: usize,
        data: Vec<f32>,
    ) -> Result<Self, DatasetError> {
        let expected = width as usize * height as usize * frames;
        if data.len() != expected {
            return Err(DatasetError::Integrity(format!(
                "volume {width}x{height}x{frames} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            frames,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, frames: usize, value: f32) -> Self {
        Self {
            width,
            height,
            frames,
            data: vec![value; width as usize * height as usize * frames],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn frame_count(&self) -> usize {
        self.frames
    }

    pub fn dims(&self) -> (u32, u32, usize) {
        (self.width, self.height, self.frames)
    }

    pub fn values(&self) -> &[f32] {
        &self.data
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        let n = self.width as usize * self.height as usize;
        &self.data[i * n..(i + 1) * n]
    }

    pub fn get(&self, frame: usize, x: u32, y: u32) -> f32 {
        self.frame(frame)[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, frame: usize, x: u32, y: u32, value: f32) {
        let n = self.width as usize * self.height as usize;
        let w = self.width as usize;
        self.data[frame * n + y as usize * w + x as usize] = value;
    }

    /// Sum of all values across frames. Uses the same accumulation order as
    /// [`Volume::sum_rect`], so a full-frame rectangle reproduces it exactly.
    pub fn sum_all(&self) -> f64 {
        self.sum_rect(&CropRect::full(self.width, self.height))
    }

    /// Sum over the pixels inside `rect` across all frames. The rectangle is
    /// clipped to the volume.
    pub fn sum_rect(&self, rect: &CropRect) -> f64 {
        let x0 = rect.x.min(self.width) as usize;
        let y0 = rect.y.min(self.height) as usize;
        let x1 = (rect.right().min(u64::from(self.width))) as usize;
        let y1 = (rect.bottom().min(u64::from(self.height))) as usize;
        let w = self.width as usize;
        let mut total = 0.0;
        for f in 0..self.frames {
            let frame = self.frame(f);
            for y in y0..y1 {
                total += frame[y * w + x0..y * w + x1]
                    .iter()
                    .map(|&v| f64::from(v))
                    .sum::<f64>();
            }
        }
        total
    }

    /// Copy with frames re-ordered: output frame `i` is input frame `order[i]`.
    pub fn reordered(&self, order: &[usize]) -> Result<Volume, DatasetError> {
        if order.len() != self.frames {
            return Err(DatasetError::Integrity(format!(
                "frame order of length {} applied to {} frames",
                order.len(),
                self.frames
            )));
        }
        let mut data = Vec::with_capacity(self.data.len());
        for &i in order {
            if i >= self.frames {
                return Err(DatasetError::Integrity(format!(
                    "frame index {i} out of range"
                )));
            }
            data.extend_from_slice(self.frame(i));
        }
        Volume::new(self.width, self.height, self.frames, data)
    }

    /// Writes the raw little-endian `f32` stream and its JSON sidecar
    /// (same path, `.json` extension).
    pub fn write_raw(&self, path: &Path, channel: Channel) -> Result<(), DatasetError> {
        let mut bytes = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, bytes).map_err(|e| DatasetError::io(path, e))?;
        let sidecar = MapSidecar {
            width: self.width,
            height: self.height,
            frames: self.frames,
            channel,
        };
        let side_path = path.with_extension("json");
        let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
        fs::write(&side_path, text).map_err(|e| DatasetError::io(side_path, e))
    }

    /// Writes one 8-bit PNG per frame (`000000.png`, ...), 255 where the value
    /// is non-zero.
    pub fn write_mask_pngs(&self, dir: &Path) -> Result<(), DatasetError> {
        fs::create_dir_all(dir).map_err(|e| DatasetError::io(dir, e))?;
        for f in 0..self.frames {
            let pixels: Vec<u8> = self
                .frame(f)
                .iter()
                .map(|&v| if v != 0.0 { 255 } else { 0 })
                .collect();
            let img = image::GrayImage::from_raw(self.width, self.height, pixels)
                .expect("buffer sized to frame");
            let path = dir.join(format!("{f:06}.png"));
            img.save(&path).map_err(|e| DatasetError::Image {
                path: path.clone(),
                message: e.to_string(),
            })?;
        }
        Ok(())
    }
}

/// Reads a directory of 8-bit single-channel mask frames (0 outside, 255 inside).
pub fn load_mask_volume(dir: &Path, frame_size: (u32, u32)) -> Result<Volume, DatasetError> {
    let files = list_frames(dir)?;
    if files.is_empty() {
        return Err(DatasetError::Missing(format!(
            "no mask frames in {}",
            dir.display()
        )));
    }
    let (w, h) = frame_size;
    let mut data = Vec::with_capacity(w as usize * h as usize * files.len());
    for path in &files {
        let img = image::open(path)
            .map_err(|e| DatasetError::Image {
                path: path.clone(),
                message: e.to_string(),
            })?
            .into_luma8();
        if img.dimensions() != frame_size {
            return Err(DatasetError::Integrity(format!(
                "mask {} is {:?}, expected {:?}",
                path.display(),
                img.dimensions(),
                frame_size
            )));
        }
        for &v in img.as_raw() {
            data.push(match v {
                0 => 0.0,
                255 => 1.0,
                other => {
                    return Err(DatasetError::Integrity(format!(
                        "mask {} holds value {other}; only 0 and 255 are allowed",
                        path.display()
                    )))
                }
            });
        }
    }
    Volume::new(w, h, files.len(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapSidecar {
    pub width: u32,
    pub height: u32,
    pub frames: usize,
    pub channel: Channel,
}

/// Reads a raw little-endian `f32` conspicuity map and validates it against
/// its sidecar. Values must lie in [0, 1].
pub fn load_conspicuity_map(path: &Path) -> Result<(MapSidecar, Volume), DatasetError> {
    let side_path: PathBuf = path.with_extension("json");
    let side_text = fs::read_to_string(&side_path).map_err(|e| DatasetError::io(&side_path, e))?;
    let sidecar: MapSidecar =
        serde_json::from_str(&side_text).map_err(|e| DatasetError::Parse {
            path: side_path.clone(),
            field: "sidecar".into(),
            message: e.to_string(),
        })?;
    let bytes = fs::read(path).map_err(|e| DatasetError::io(path, e))?;
    let expected = sidecar.width as usize * sidecar.height as usize * sidecar.frames * 4;
    if bytes.len() != expected {
        return Err(DatasetError::Integrity(format!(
            "{} holds {} bytes, sidecar implies {expected}",
            path.display(),
            bytes.len()
        )));
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(DatasetError::Integrity(format!(
            "{} holds value {bad} outside [0, 1]",
            path.display()
        )));
    }
    let volume = Volume::new(sidecar.width, sidecar.height, sidecar.frames, data)?;
    Ok((sidecar, volume))
}

/// Object masks of one clip. Background is derived as every pixel covered by
/// none of the three stored categories.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub active_hand: Volume,
    pub active_object: Volume,
    pub contextual_objects: Volume,
}

impl MaskSet {
    pub fn new(
        active_hand: Volume,
        active_object: Volume,
        contextual_objects: Volume,
    ) -> Result<Self, DatasetError> {
        if active_hand.dims() != active_object.dims()
            || active_hand.dims() != contextual_objects.dims()
        {
            return Err(DatasetError::Integrity(
                "mask categories differ in dimensions".into(),
            ));
        }
        Ok(Self {
            active_hand,
            active_object,
            contextual_objects,
        })
    }

    pub fn load(dirs: [&Path; 3], frame_size: (u32, u32)) -> Result<Self, DatasetError> {
        Self::new(
            load_mask_volume(dirs[0], frame_size)?,
            load_mask_volume(dirs[1], frame_size)?,
            load_mask_volume(dirs[2], frame_size)?,
        )
    }

    pub fn dims(&self) -> (u32, u32, usize) {
        self.active_hand.dims()
    }

    pub fn category(&self, category: ObjectCategory) -> &Volume {
        match category {
            ObjectCategory::ActiveHand => &self.active_hand,
            ObjectCategory::ActiveObject => &self.active_object,
            ObjectCategory::ContextualObjects => &self.contextual_objects,
        }
    }

    pub fn background(&self) -> Volume {
        let data = self
            .active_hand
            .values()
            .iter()
            .zip(self.active_object.values())
            .zip(self.contextual_objects.values())
            .map(|((&h, &o), &c)| {
                if h == 0.0 && o == 0.0 && c == 0.0 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let (w, h, f) = self.dims();
        Volume::new(w, h, f, data).expect("same dimensions as the stored masks")
    }

    /// Volume for an object feature; `None` for channel features.
    pub fn feature(&self, feature: Feature) -> Option<Volume> {
        match feature {
            Feature::ActiveHand => Some(self.active_hand.clone()),
            Feature::ActiveObject => Some(self.active_object.clone()),
            Feature::ContextualObjects => Some(self.contextual_objects.clone()),
            Feature::Background => Some(self.background()),
            _ => None,
        }
    }
}

/// Conspicuity channels of one clip (or of one scrambled node).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConspicuityMapSet {
    pub channels: BTreeMap<Channel, Volume>,
}

impl ConspicuityMapSet {
    pub fn insert(&mut self, channel: Channel, volume: Volume) -> Result<(), DatasetError> {
        if let Some(existing) = self.channels.values().next() {
            if existing.dims() != volume.dims() {
                return Err(DatasetError::Integrity(format!(
                    "channel {channel:?} has dimensions {:?}, others {:?}",
                    volume.dims(),
                    existing.dims()
                )));
            }
        }
        self.channels.insert(channel, volume);
        Ok(())
    }

    pub fn get(&self, channel: Channel) -> Option<&Volume> {
        self.channels.get(&channel)
    }
}
