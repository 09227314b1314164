//! Visual input construction for each fixation: a fixed-size patch crop or
//! the full stimulus with a drawn fixation marker.

use std::fmt;
use std::io::Cursor;
use std::str::FromStr;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ImageEncoder, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::dataset::PixelPoint;

#[derive(Debug, Error)]
pub enum EncodingError {
    #[error("patch size must be positive")]
    ZeroPatchSize,
    #[error("invalid marker spec: {0}")]
    InvalidMarker(String),
    #[error("fixation center ({px},{py}) outside {width}x{height} image")]
    CenterOutOfBounds {
        px: u32,
        py: u32,
        width: u32,
        height: u32,
    },
    #[error("image encoding failed: {0}")]
    Image(#[from] image::ImageError),
    #[error("unknown encoding condition {0:?}")]
    UnknownCondition(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchSpec {
    pub size_px: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MarkerSpec {
    pub circle_radius_px: u32,
    pub outline_width_px: u32,
    pub center_dot_radius_px: u32,
    pub color: [u8; 3],
}

impl Default for MarkerSpec {
    fn default() -> Self {
        Self {
            circle_radius_px: 100,
            outline_width_px: 3,
            center_dot_radius_px: 5,
            color: [255, 0, 0],
        }
    }
}

impl MarkerSpec {
    pub fn validate(&self) -> Result<(), EncodingError> {
        if self.circle_radius_px == 0 || self.outline_width_px == 0 || self.center_dot_radius_px == 0
        {
            return Err(EncodingError::InvalidMarker(
                "radii and outline width must be positive".into(),
            ));
        }
        if self.circle_radius_px <= self.center_dot_radius_px {
            return Err(EncodingError::InvalidMarker(
                "circle radius must exceed the center dot radius".into(),
            ));
        }
        Ok(())
    }
}

/// How a fixation is presented to the VLM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EncodingCondition {
    Patch(PatchSpec),
    Marker(MarkerSpec),
}

impl EncodingCondition {
    pub const STANDARD_NAMES: [&'static str; 4] = ["patch96", "patch192", "patch256", "marker"];

    pub fn patch(size_px: u32) -> Self {
        Self::Patch(PatchSpec { size_px })
    }

    pub fn marker() -> Self {
        Self::Marker(MarkerSpec::default())
    }

    /// The four standard conditions, in reporting order.
    pub fn standard() -> Vec<Self> {
        vec![
            Self::patch(96),
            Self::patch(192),
            Self::patch(256),
            Self::marker(),
        ]
    }

    pub fn name(&self) -> String {
        match self {
            Self::Patch(p) => format!("patch{}", p.size_px),
            Self::Marker(_) => "marker".to_string(),
        }
    }

    pub fn is_patch(&self) -> bool {
        matches!(self, Self::Patch(_))
    }
}

impl fmt::Display for EncodingCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for EncodingCondition {
    type Err = EncodingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "patch96" => Ok(Self::patch(96)),
            "patch192" => Ok(Self::patch(192)),
            "patch256" => Ok(Self::patch(256)),
            "marker" => Ok(Self::marker()),
            other => Err(EncodingError::UnknownCondition(other.to_string())),
        }
    }
}

impl EncodingCondition {
    /// Accepts any `patch<N>` size in addition to the four standard names.
    pub fn parse_any(s: &str) -> Result<Self, EncodingError> {
        if let Ok(c) = s.parse() {
            return Ok(c);
        }
        match s.strip_prefix("patch").and_then(|n| n.parse::<u32>().ok()) {
            Some(n) if n > 0 => Ok(Self::patch(n)),
            _ => Err(EncodingError::UnknownCondition(s.to_string())),
        }
    }
}

impl TryFrom<String> for EncodingCondition {
    type Error = EncodingError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::parse_any(&value)
    }
}

impl From<EncodingCondition> for String {
    fn from(c: EncodingCondition) -> Self {
        c.name()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FixationRef {
    pub image_id: String,
    pub subject_id: String,
    pub fixation_index: usize,
}

#[derive(Debug, Clone)]
pub struct EncodedFixation {
    pub condition: EncodingCondition,
    /// PNG bytes sent to the VLM.
    pub png: Vec<u8>,
    pub width: u32,
    pub height: u32,
    pub provenance: FixationRef,
}

impl EncodedFixation {
    pub fn dump_file_name(&self) -> String {
        format!(
            "{}_{}_{}_{}.png",
            self.provenance.image_id,
            self.provenance.subject_id,
            self.provenance.fixation_index,
            self.condition
        )
    }
}

/// Half-open crop window `[x0, x1) x [y0, y1)` in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchWindow {
    pub x0: u32,
    pub x1: u32,
    pub y0: u32,
    pub y1: u32,
}

/// Start of the output window on one axis. Negative only when `size`
/// exceeds `extent`, in which case the extent is centered and padded.
fn window_start(center: u32, size: u32, extent: u32) -> i64 {
    let (c, s, e) = (i64::from(center), i64::from(size), i64::from(extent));
    if s > e {
        -((s - e) / 2)
    } else {
        (c - s / 2).clamp(0, e - s)
    }
}

/// The in-image window covered by a patch of `size` centered on `center`,
/// translated to stay inside the image.
pub fn patch_window(center: PixelPoint, size: u32, width: u32, height: u32) -> PatchWindow {
    let sx = window_start(center.px, size, width);
    let sy = window_start(center.py, size, height);
    let clip = |start: i64, extent: u32| -> (u32, u32) {
        let lo = start.max(0) as u32;
        let hi = (start + i64::from(size)).min(i64::from(extent)) as u32;
        (lo, hi)
    };
    let (x0, x1) = clip(sx, width);
    let (y0, y1) = clip(sy, height);
    PatchWindow { x0, x1, y0, y1 }
}

fn check_center(image: &RgbImage, center: PixelPoint) -> Result<(), EncodingError> {
    if center.px >= image.width() || center.py >= image.height() {
        return Err(EncodingError::CenterOutOfBounds {
            px: center.px,
            py: center.py,
            width: image.width(),
            height: image.height(),
        });
    }
    Ok(())
}

/// Crops an `s x s` patch. Windows that would cross the border are slid
/// back inside; when `s` exceeds an image dimension the missing rows or
/// columns replicate the nearest edge pixel.
pub fn extract_patch(
    image: &RgbImage,
    center: PixelPoint,
    spec: PatchSpec,
) -> Result<RgbImage, EncodingError> {
    let s = spec.size_px;
    if s == 0 {
        return Err(EncodingError::ZeroPatchSize);
    }
    check_center(image, center)?;
    let (w, h) = image.dimensions();
    if s > w || s > h {
        warn!(size = s, width = w, height = h, "patch exceeds image; edge-replicating");
    }
    let sx = window_start(center.px, s, w);
    let sy = window_start(center.py, s, h);
    let max_x = i64::from(w) - 1;
    let max_y = i64::from(h) - 1;
    Ok(RgbImage::from_fn(s, s, |i, j| {
        let x = (sx + i64::from(i)).clamp(0, max_x) as u32;
        let y = (sy + i64::from(j)).clamp(0, max_y) as u32;
        *image.get_pixel(x, y)
    }))
}

/// Draws the fixation marker: a circle outline whose stroke spans
/// `radius ± width/2`, and a filled center dot. No anti-aliasing; pixels
/// that fall outside the image are dropped.
pub fn render_marker(
    image: &RgbImage,
    center: PixelPoint,
    spec: &MarkerSpec,
) -> Result<RgbImage, EncodingError> {
    spec.validate()?;
    check_center(image, center)?;
    let mut out = image.clone();
    let r = f64::from(spec.circle_radius_px);
    let half = f64::from(spec.outline_width_px) / 2.0;
    let inner_sq = (r - half).max(0.0).powi(2);
    let outer_sq = (r + half).powi(2);
    let dot_sq = f64::from(spec.center_dot_radius_px).powi(2);
    let color = Rgb(spec.color);

    let reach = (r + half).ceil() as i64 + 1;
    let (cx, cy) = (i64::from(center.px), i64::from(center.py));
    let x_lo = (cx - reach).max(0);
    let x_hi = (cx + reach).min(i64::from(image.width()) - 1);
    let y_lo = (cy - reach).max(0);
    let y_hi = (cy + reach).min(i64::from(image.height()) - 1);
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            let (dx, dy) = ((x - cx) as f64, (y - cy) as f64);
            let d_sq = dx * dx + dy * dy;
            if d_sq <= dot_sq || (inner_sq..=outer_sq).contains(&d_sq) {
                out.put_pixel(x as u32, y as u32, color);
            }
        }
    }
    Ok(out)
}

/// Lossless PNG encoding with fixed settings so equal rasters give equal bytes.
pub fn encode_png(image: &RgbImage) -> Result<Vec<u8>, EncodingError> {
    let mut buf = Cursor::new(Vec::new());
    PngEncoder::new_with_quality(&mut buf, CompressionType::Fast, FilterType::Adaptive)
        .write_image(
            image.as_raw(),
            image.width(),
            image.height(),
            image::ExtendedColorType::Rgb8,
        )?;
    Ok(buf.into_inner())
}

pub fn encode_fixation(
    image: &RgbImage,
    center: PixelPoint,
    condition: EncodingCondition,
    provenance: FixationRef,
) -> Result<EncodedFixation, EncodingError> {
    let raster = match &condition {
        EncodingCondition::Patch(spec) => extract_patch(image, center, *spec)?,
        EncodingCondition::Marker(spec) => render_marker(image, center, spec)?,
    };
    Ok(EncodedFixation {
        condition,
        png: encode_png(&raster)?,
        width: raster.width(),
        height: raster.height(),
        provenance,
    })
}
