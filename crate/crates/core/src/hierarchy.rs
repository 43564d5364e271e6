//! Scene / object / texture patch geometry for one training pair.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{center_crop_region, random_region, PatchRegion};
use crate::rng::RandomState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HierarchySpec {
    /// Side of the square scene patch.
    pub scene_size: usize,
    pub objects_per_scene: usize,
    /// Object area as a fraction of scene area.
    pub object_fraction: f64,
    /// Texture area as a fraction of object area.
    pub texture_fraction: f64,
}

impl Default for HierarchySpec {
    fn default() -> Self {
        Self {
            scene_size: 64,
            objects_per_scene: 4,
            object_fraction: 0.25,
            texture_fraction: 0.25,
        }
    }
}

impl HierarchySpec {
    pub fn validate(&self) -> Result<()> {
        if self.scene_size == 0 || !self.scene_size.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "scene_size must be a positive multiple of 4, got {}",
                self.scene_size
            )));
        }
        if self.objects_per_scene == 0 {
            return Err(Error::Config("objects_per_scene must be at least 1".into()));
        }
        for (name, f) in [
            ("object_fraction", self.object_fraction),
            ("texture_fraction", self.texture_fraction),
        ] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1], got {f}")));
            }
        }
        Ok(())
    }

    pub fn object_side(&self) -> usize {
        center_crop_region(PatchRegion::square(0, 0, self.scene_size), self.object_fraction)
            .map(|r| r.height)
            .unwrap_or(self.scene_size)
    }

    pub fn texture_side(&self) -> usize {
        center_crop_region(PatchRegion::square(0, 0, self.object_side()), self.texture_fraction)
            .map(|r| r.height)
            .unwrap_or(1)
    }
}

/// Matched regions: the generated side is read from the enhanced scene, the
/// target side from the reference scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchPair {
    pub source: PatchRegion,
    pub target: PatchRegion,
}

/// Patch geometry for one pair. `scene` is in image coordinates and is shared
/// by source and target; object and texture regions are relative to the
/// scene patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchPairSet {
    pub scene: PatchRegion,
    pub objects: Vec<PatchPair>,
    pub textures: Vec<PatchPair>,
    texture_fraction: f64,
}

impl PatchPairSet {
    pub fn scene_src(&self) -> PatchRegion {
        self.scene
    }

    pub fn scene_tgt(&self) -> PatchRegion {
        self.scene
    }

    /// The scene patch in its own coordinates.
    pub fn scene_frame(&self) -> PatchRegion {
        PatchRegion::new(0, 0, self.scene.height, self.scene.width)
    }

    /// Moves the source side of object `index` (e.g. after window pairing) and
    /// re-derives its texture crop.
    pub fn set_object_source(&mut self, index: usize, source: PatchRegion) -> Result<()> {
        source.check_inside(self.scene.height, self.scene.width)?;
        let obj = self
            .objects
            .get_mut(index)
            .ok_or_else(|| Error::param(format!("no object patch {index}")))?;
        obj.source = source;
        self.textures[index].source = center_crop_region(source, self.texture_fraction)?;
        Ok(())
    }
}

/// Samples one scene patch, `objects_per_scene` object patches inside it and
/// the centered texture patch of each object.
pub fn sample_hierarchy(
    img_h: usize,
    img_w: usize,
    spec: &HierarchySpec,
    rng: &mut RandomState,
) -> Result<PatchPairSet> {
    spec.validate()?;
    let s = spec.scene_size;
    if s > img_h || s > img_w {
        return Err(Error::param(format!(
            "scene patch {s}x{s} larger than image {img_h}x{img_w}"
        )));
    }
    let scene = random_region(img_h, img_w, s, s, rng)?;
    let side = spec.object_side();
    let mut objects = Vec::with_capacity(spec.objects_per_scene);
    let mut textures = Vec::with_capacity(spec.objects_per_scene);
    for _ in 0..spec.objects_per_scene {
        let obj = random_region(s, s, side, side, rng)?;
        let tex = center_crop_region(obj, spec.texture_fraction)?;
        objects.push(PatchPair {
            source: obj,
            target: obj,
        });
        textures.push(PatchPair {
            source: tex,
            target: tex,
        });
    }
    Ok(PatchPairSet {
        scene,
        objects,
        textures,
        texture_fraction: spec.texture_fraction,
    })
}
