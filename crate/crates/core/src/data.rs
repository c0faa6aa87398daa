//! Discovery and loading of clip triplets (`lr/`, `dn/`, `gt/`).
//!
//! A triplet directory holds three frame folders produced by the degrade
//! pipeline: the degraded low-resolution stream, the blur-free downsampled
//! stream, and ground truth. A data root is either one triplet directory
//! or a directory of them; clips load in name order so downstream results
//! are reproducible.

use std::path::Path;

use ndarray::Array3;

use crate::degradation::ClipTriplet;
use crate::error::{IkError, Result};
use crate::model::UPSCALE;
use crate::sequence::{load_sequence, save_sequence};

/// One named clip with its three frame streams.
#[derive(Debug, Clone)]
pub struct ClipData {
    pub name: String,
    pub lr: Vec<Array3<f32>>,
    pub dn: Vec<Array3<f32>>,
    pub gt: Vec<Array3<f32>>,
}

impl ClipData {
    /// Adopt an in-memory degradation result.
    pub fn from_triplet(name: impl Into<String>, triplet: &ClipTriplet) -> Self {
        ClipData {
            name: name.into(),
            lr: triplet.lr.clone(),
            dn: triplet.dn.clone(),
            gt: triplet.gt.clone(),
        }
    }

    pub fn frames(&self) -> usize {
        self.lr.len()
    }

    /// Low-resolution spatial size `(H, W)`.
    pub fn lr_size(&self) -> (usize, usize) {
        let (_, h, w) = self.lr[0].dim();
        (h, w)
    }

    fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(IkError::Data(format!("clip {:?}: {msg}", self.name)));
        if self.lr.is_empty() {
            return fail("no frames".to_string());
        }
        if self.lr.len() != self.dn.len() || self.lr.len() != self.gt.len() {
            return fail(format!(
                "stream lengths differ: lr {}, dn {}, gt {}",
                self.lr.len(),
                self.dn.len(),
                self.gt.len()
            ));
        }
        let (c, h, w) = self.lr[0].dim();
        if c != 3 {
            return fail(format!("expected RGB frames, got {c} channels"));
        }
        if self.dn[0].dim() != (c, h, w) {
            return fail(format!(
                "dn frames are {:?}, lr frames are {:?}",
                self.dn[0].dim(),
                (c, h, w)
            ));
        }
        if self.gt[0].dim() != (c, h * UPSCALE, w * UPSCALE) {
            return fail(format!(
                "gt frames are {:?}, expected {:?} ({UPSCALE}x the lr size)",
                self.gt[0].dim(),
                (c, h * UPSCALE, w * UPSCALE)
            ));
        }
        Ok(())
    }
}

/// All clips under a data root.
#[derive(Debug, Clone)]
pub struct TripletSet {
    clips: Vec<ClipData>,
}

fn is_triplet_dir(dir: &Path) -> bool {
    ["lr", "dn", "gt"].iter().all(|sub| dir.join(sub).is_dir())
}

fn load_clip(dir: &Path, name: String) -> Result<ClipData> {
    let clip = ClipData {
        name,
        lr: load_sequence(&dir.join("lr"))?,
        dn: load_sequence(&dir.join("dn"))?,
        gt: load_sequence(&dir.join("gt"))?,
    };
    clip.validate()?;
    Ok(clip)
}

impl TripletSet {
    /// Validate and adopt in-memory clips.
    pub fn from_clips(clips: Vec<ClipData>) -> Result<Self> {
        if clips.is_empty() {
            return Err(IkError::Data("no clips given".to_string()));
        }
        for clip in &clips {
            clip.validate()?;
        }
        Ok(TripletSet { clips })
    }

    /// Load every triplet under `root` (or `root` itself), in name order.
    pub fn load(root: &Path) -> Result<Self> {
        if is_triplet_dir(root) {
            let name = root
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "clip".to_string());
            return TripletSet::from_clips(vec![load_clip(root, name)?]);
        }
        let entries = std::fs::read_dir(root).map_err(|e| IkError::io(root, e))?;
        let mut dirs: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| is_triplet_dir(p))
            .collect();
        dirs.sort();
        if dirs.is_empty() {
            return Err(IkError::Data(format!(
                "no clip triplets (lr/dn/gt) under {}",
                root.display()
            )));
        }
        let clips = dirs
            .into_iter()
            .map(|dir| {
                let name = dir
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default();
                load_clip(&dir, name)
            })
            .collect::<Result<Vec<_>>>()?;
        TripletSet::from_clips(clips)
    }

    pub fn clips(&self) -> &[ClipData] {
        &self.clips
    }
}

/// Write a degradation result as a triplet directory plus manifest.
pub fn save_triplet(dir: &Path, triplet: &ClipTriplet) -> Result<()> {
    save_sequence(&dir.join("lr"), &triplet.lr)?;
    save_sequence(&dir.join("dn"), &triplet.dn)?;
    save_sequence(&dir.join("gt"), &triplet.gt)?;
    triplet.manifest.save(&dir.join("manifest.json"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degradation::{make_triplet, synthetic_clip, DegradationConfig, Scenario};

    fn tiny_triplet(seed: u64) -> ClipTriplet {
        let gt = synthetic_clip(2, 32, 32, seed);
        make_triplet(&gt, &DegradationConfig::new(Scenario::Gaussian), seed).unwrap()
    }

    #[test]
    fn single_and_multi_clip_roots_both_load() -> Result<()> {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        save_triplet(&root.join("b_clip"), &tiny_triplet(1))?;
        save_triplet(&root.join("a_clip"), &tiny_triplet(2))?;

        let set = TripletSet::load(root)?;
        assert_eq!(set.clips().len(), 2);
        // Name order, not directory creation order.
        assert_eq!(set.clips()[0].name, "a_clip");
        assert_eq!(set.clips()[1].name, "b_clip");
        assert_eq!(set.clips()[0].lr_size(), (8, 8));
        assert_eq!(set.clips()[0].frames(), 2);

        let single = TripletSet::load(&root.join("a_clip"))?;
        assert_eq!(single.clips().len(), 1);
        assert_eq!(single.clips()[0].name, "a_clip");
        Ok(())
    }

    #[test]
    fn loading_round_trips_the_frames() -> Result<()> {
        let dir = tempfile::tempdir().unwrap();
        let triplet = tiny_triplet(3);
        save_triplet(dir.path(), &triplet)?;
        let set = TripletSet::load(dir.path())?;
        let clip = &set.clips()[0];
        // PNG quantizes to 8 bits; half a step is the worst case.
        for (a, b) in clip.gt.iter().zip(&triplet.gt) {
            let max = a
                .iter()
                .zip(b.iter())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f32, f32::max);
            assert!(max <= 0.5 / 255.0 + 1e-6, "max {max}");
        }
        Ok(())
    }

    #[test]
    fn empty_roots_and_broken_triplets_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let err = TripletSet::load(dir.path()).unwrap_err();
        assert_eq!(err.class(), "data");

        // gt stream at the wrong scale.
        let triplet = tiny_triplet(4);
        let clip = ClipData {
            name: "bad".into(),
            lr: triplet.lr.clone(),
            dn: triplet.dn.clone(),
            gt: triplet.lr.clone(),
        };
        let err = TripletSet::from_clips(vec![clip]).unwrap_err();
        assert_eq!(err.class(), "data");
        assert!(err.to_string().contains("bad"), "{err}");

        // Stream lengths differ.
        let mut short = ClipData::from_triplet("short", &triplet);
        short.dn.pop();
        let err = TripletSet::from_clips(vec![short]).unwrap_err();
        assert!(err.to_string().contains("lengths differ"), "{err}");
    }
}
