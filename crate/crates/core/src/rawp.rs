//! Ranked window pairing.
//!
//! For a fixed target object patch, slide a `window x window` frame over a
//! search area of the source scene with a fixed stride, score every
//! placement by its summed absolute RGB difference to the target, and keep
//! the lowest-scoring placement. Because enhancement is residual and
//! geometry-preserving, the same location in the generated scene is the
//! generated counterpart of the matched source patch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImageBuffer, PatchRegion};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpec {
    pub area_w: usize,
    pub area_h: usize,
    /// Side of the square sliding window; equals the object patch side.
    pub window: usize,
    pub stride: usize,
}

impl Default for SearchSpec {
    fn default() -> Self {
        Self::for_window(32)
    }
}

impl SearchSpec {
    /// Search area of 1.5x the window per side, stride 4.
    pub fn for_window(window: usize) -> Self {
        let area = (window * 3).div_ceil(2);
        Self {
            area_w: area,
            area_h: area,
            window,
            stride: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::Config("search stride must be at least 1".into()));
        }
        if self.window == 0 || self.window > self.area_w.min(self.area_h) {
            return Err(Error::Config(format!(
                "search window {} must be between 1 and the area size {}x{}",
                self.window, self.area_h, self.area_w
            )));
        }
        Ok(())
    }

    /// Placements per axis for an area of the configured size.
    pub fn candidate_grid(&self) -> (usize, usize) {
        (
            (self.area_h - self.window) / self.stride + 1,
            (self.area_w - self.window) / self.stride + 1,
        )
    }
}

/// Candidate scores laid out row-major over the placement grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub area: PatchRegion,
    pub rows: usize,
    pub cols: usize,
    pub stride: usize,
    pub values: Vec<f64>,
}

impl ScoreTable {
    pub fn region_at(&self, row: usize, col: usize, window: usize) -> PatchRegion {
        PatchRegion::square(
            self.area.top + row * self.stride,
            self.area.left + col * self.stride,
            window,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Matched window in source-scene coordinates.
    pub best_region: PatchRegion,
    pub score: f64,
    pub all_scores: Option<ScoreTable>,
}

/// Sum of absolute differences over every pixel and channel.
pub fn pairing_score(candidate: &ImageBuffer, target: &ImageBuffer) -> Result<f64> {
    if !candidate.same_shape(target) || candidate.channels() != 3 {
        return Err(Error::param(format!(
            "pairing needs equal RGB patches, got {}x{}x{} and {}x{}x{}",
            candidate.height(),
            candidate.width(),
            candidate.channels(),
            target.height(),
            target.width(),
            target.channels()
        )));
    }
    Ok(candidate
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b).abs())
        .sum())
}

/// Search area centered on `anchor`, shifted to stay inside the scene and
/// shrunk to the scene when the scene is smaller.
pub fn search_area(
    anchor: PatchRegion,
    scene_h: usize,
    scene_w: usize,
    spec: &SearchSpec,
) -> PatchRegion {
    let place = |start: usize, len: usize, area: usize, bound: usize| -> (usize, usize) {
        let area = area.min(bound);
        let centered = start as i64 + (len as i64 - area as i64).div_euclid(2);
        let top = centered.clamp(0, (bound - area) as i64) as usize;
        (top, area)
    };
    let (top, h) = place(anchor.top, anchor.height, spec.area_h, scene_h);
    let (left, w) = place(anchor.left, anchor.width, spec.area_w, scene_w);
    PatchRegion::new(top, left, h, w)
}

fn window_score(scene: &ImageBuffer, target: &ImageBuffer, top: usize, left: usize) -> f64 {
    let z = target.width();
    let row = z * 3;
    let mut sum = 0.0;
    for y in 0..target.height() {
        let s0 = ((top + y) * scene.width() + left) * 3;
        let t0 = y * row;
        let srow = &scene.data()[s0..s0 + row];
        let trow = &target.data()[t0..t0 + row];
        // One running sum so the value equals `pairing_score` on the crop.
        sum = srow.iter().zip(trow).fold(sum, |acc, (a, b)| acc + (a - b).abs());
    }
    sum
}

/// Best-aligned source window for `target_patch` around `anchor`. Ties go to
/// the smallest top, then the smallest left.
pub fn find_best_match(
    source_scene: &ImageBuffer,
    target_patch: &ImageBuffer,
    anchor: PatchRegion,
    spec: &SearchSpec,
) -> Result<MatchResult> {
    find_best_match_impl(source_scene, target_patch, anchor, spec, false)
}

/// Same as [`find_best_match`], retaining the full score table.
pub fn find_best_match_with_scores(
    source_scene: &ImageBuffer,
    target_patch: &ImageBuffer,
    anchor: PatchRegion,
    spec: &SearchSpec,
) -> Result<MatchResult> {
    find_best_match_impl(source_scene, target_patch, anchor, spec, true)
}

fn find_best_match_impl(
    scene: &ImageBuffer,
    target: &ImageBuffer,
    anchor: PatchRegion,
    spec: &SearchSpec,
    keep: bool,
) -> Result<MatchResult> {
    if spec.stride == 0 {
        return Err(Error::Geometry("search stride must be at least 1".into()));
    }
    if scene.channels() != 3 || target.channels() != 3 {
        return Err(Error::param("window pairing operates on RGB images"));
    }
    let z = spec.window;
    if target.height() != z || target.width() != z {
        return Err(Error::Geometry(format!(
            "target patch is {}x{}, search window is {z}x{z}",
            target.height(),
            target.width()
        )));
    }
    let area = search_area(anchor, scene.height(), scene.width(), spec);
    if z == 0 || area.height < z || area.width < z {
        return Err(Error::Geometry(format!(
            "no {z}x{z} placement fits search area {area} of a {}x{} scene",
            scene.height(),
            scene.width()
        )));
    }
    let rows = (area.height - z) / spec.stride + 1;
    let cols = (area.width - z) / spec.stride + 1;
    let mut values = Vec::with_capacity(if keep { rows * cols } else { 0 });
    let mut best = (f64::INFINITY, 0, 0);
    for r in 0..rows {
        for c in 0..cols {
            let score = window_score(scene, target, area.top + r * spec.stride, area.left + c * spec.stride);
            if score < best.0 {
                best = (score, r, c);
            }
            if keep {
                values.push(score);
            }
        }
    }
    let best_region = PatchRegion::square(
        area.top + best.1 * spec.stride,
        area.left + best.2 * spec.stride,
        z,
    );
    Ok(MatchResult {
        best_region,
        score: best.0,
        all_scores: keep.then_some(ScoreTable {
            area,
            rows,
            cols,
            stride: spec.stride,
            values,
        }),
    })
}

/// Counterpart of the matched source window in the generated scene.
pub fn map_to_generated(found: &MatchResult, generated_scene: &ImageBuffer) -> Result<ImageBuffer> {
    found
        .best_region
        .check_inside(generated_scene.height(), generated_scene.width())
        .map_err(|e| Error::Geometry(e.to_string()))?;
    generated_scene.crop(found.best_region)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> ImageBuffer {
        ImageBuffer::from_fn(h, w, 3, |y, x, c| ((y * 7 + x * 13 + c * 5) % 31) as f64 / 30.0).unwrap()
    }

    #[test]
    fn score_examples() {
        let a = ramp(3, 3);
        assert_eq!(pairing_score(&a, &a).unwrap(), 0.0);
        let black = ImageBuffer::filled(1, 1, 3, 0.0).unwrap();
        let white = ImageBuffer::filled(1, 1, 3, 1.0).unwrap();
        assert_eq!(pairing_score(&black, &white).unwrap(), 3.0);
        let half = ImageBuffer::filled(2, 2, 3, 0.5).unwrap();
        let quarter = ImageBuffer::filled(2, 2, 3, 0.25).unwrap();
        assert_eq!(pairing_score(&half, &quarter).unwrap(), 3.0);
        assert!(pairing_score(&half, &black).is_err());
    }

    #[test]
    fn exact_match_at_anchor() {
        let scene = ramp(32, 32);
        let anchor = PatchRegion::square(8, 8, 8);
        let target = scene.crop(anchor).unwrap();
        let spec = SearchSpec {
            area_w: 16,
            area_h: 16,
            window: 8,
            stride: 4,
        };
        let m = find_best_match(&scene, &target, anchor, &spec).unwrap();
        assert_eq!(m.best_region, anchor);
        assert_eq!(m.score, 0.0);
    }

    #[test]
    fn shifted_plant_is_recovered() {
        let scene = ImageBuffer::filled(32, 32, 3, 0.5).unwrap();
        let target = ramp(8, 8);
        let anchor = PatchRegion::square(12, 12, 8);
        let shifted = PatchRegion::square(16, 12, 8);
        let mut data = scene.into_data();
        for y in 0..8 {
            for x in 0..8 {
                for c in 0..3 {
                    data[((shifted.top + y) * 32 + shifted.left + x) * 3 + c] = target.get(y, x, c);
                }
            }
        }
        let scene = ImageBuffer::new(32, 32, 3, data).unwrap();
        let spec = SearchSpec {
            area_w: 16,
            area_h: 16,
            window: 8,
            stride: 4,
        };
        let m = find_best_match(&scene, &target, anchor, &spec).unwrap();
        assert_eq!(m.best_region, shifted);
        assert_eq!(m.score, 0.0);
    }

    #[test]
    fn uniform_scene_ties_to_first_candidate() {
        let scene = ImageBuffer::filled(24, 24, 3, 0.3).unwrap();
        let target = ramp(8, 8);
        let anchor = PatchRegion::square(8, 8, 8);
        let spec = SearchSpec::for_window(8);
        let m = find_best_match_with_scores(&scene, &target, anchor, &spec).unwrap();
        let table = m.all_scores.as_ref().unwrap();
        assert_eq!(m.best_region, table.region_at(0, 0, 8));
        let uniform = ImageBuffer::filled(8, 8, 3, 0.3).unwrap();
        assert_eq!(m.score, pairing_score(&uniform, &target).unwrap());
        let min = table.values.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(m.score, min);
    }

    #[test]
    fn area_is_clamped_to_scene() {
        let spec = SearchSpec::for_window(32);
        assert_eq!(spec.area_h, 48);
        let a = search_area(PatchRegion::square(0, 0, 32), 64, 64, &spec);
        assert_eq!(a, PatchRegion::square(0, 0, 48));
        let a = search_area(PatchRegion::square(32, 32, 32), 64, 64, &spec);
        assert_eq!(a, PatchRegion::square(16, 16, 48));
        let a = search_area(PatchRegion::square(16, 16, 32), 64, 64, &spec);
        assert_eq!(a, PatchRegion::square(8, 8, 48));
        let a = search_area(PatchRegion::square(0, 0, 32), 40, 36, &spec);
        assert_eq!(a, PatchRegion::new(0, 0, 40, 36));
    }

    #[test]
    fn no_placement_is_geometry_error() {
        let scene = ramp(6, 6);
        let target = ramp(8, 8);
        let spec = SearchSpec::for_window(8);
        assert!(matches!(
            find_best_match(&scene, &target, PatchRegion::square(0, 0, 8), &spec),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn mapping_crops_generated_scene() {
        let generated = ramp(16, 16);
        let found = MatchResult {
            best_region: PatchRegion::square(0, 0, 4),
            score: 0.0,
            all_scores: None,
        };
        assert_eq!(
            map_to_generated(&found, &generated).unwrap(),
            generated.crop(PatchRegion::square(0, 0, 4)).unwrap()
        );
        let whole = MatchResult {
            best_region: generated.full_region(),
            ..found.clone()
        };
        assert_eq!(map_to_generated(&whole, &generated).unwrap(), generated);
        let outside = MatchResult {
            best_region: PatchRegion::square(14, 14, 4),
            ..found
        };
        assert!(matches!(map_to_generated(&outside, &generated), Err(Error::Geometry(_))));
    }
}
