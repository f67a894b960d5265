//! Deterministic two-domain synthetic world.
//!
//! Scenes are LiDAR sweeps over a flat ground plane with labeled cars and
//! unlabeled clutter. The pretrained vision backbone, LVLM, text encoder and
//! open-vocabulary 2D detector are replaced by pure functions of the scene
//! content and a seed.

mod codebook;
pub mod io;
mod lidar;
mod lifting;
mod oracles;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Box3D, CameraModel, GeometryError};

pub use codebook::{C_IMG, C_TEXT};
pub use lidar::{beam_resample, generate_scene, ring_elevation, LIDAR_HEIGHT};
pub use lifting::{lift_2d_to_3d, min_area_rect, GROUND_CLEARANCE};
pub use oracles::{
    background_feature_oracle, image_feature_oracle, image_feature_oracle_with, mock_2d_detector,
    region_object, sample_background_boxes, text_description_oracle, text_feature_oracle,
    Mock2dConfig, IMAGE_NOISE,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid domain config: {0}")]
    InvalidConfig(String),
    #[error("ring index {ring} not below source beam count {beams}")]
    UnknownRing { ring: u16, beams: usize },
    #[error("target beam count must be at least 2, got {0}")]
    TooFewBeams(usize),
    #[error("object attributes incomplete: {0}")]
    InvalidAttributes(String),
    #[error("cannot parse description {0:?}")]
    Unparseable(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("dataset format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

macro_rules! vocabulary {
    ($name:ident { $($variant:ident => $word:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn word(self) -> &'static str {
                match self { $($name::$variant => $word),+ }
            }

            pub fn from_word(w: &str) -> Option<Self> {
                match w { $($word => Some($name::$variant),)+ _ => None }
            }

            pub fn index(self) -> usize {
                self as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.word())
            }
        }
    };
}

vocabulary!(Color {
    White => "white",
    Black => "black",
    Silver => "silver",
    Gray => "gray",
    Red => "red",
    Blue => "blue",
    Green => "green",
    Yellow => "yellow",
});

vocabulary!(BodyStyle {
    Sedan => "sedan",
    Suv => "suv",
    Hatchback => "hatchback",
    Van => "van",
});

vocabulary!(SizeClass {
    Small => "small",
    Medium => "medium",
    Large => "large",
});

/// One categorical appearance attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Attribute {
    Color(Color),
    Size(SizeClass),
    Body(BodyStyle),
}

/// Ordered set of appearance attributes.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AttributeSet(pub BTreeSet<Attribute>);

impl AttributeSet {
    pub fn new(color: Color, size: SizeClass, body: BodyStyle) -> Self {
        Self(
            [Attribute::Color(color), Attribute::Size(size), Attribute::Body(body)]
                .into_iter()
                .collect(),
        )
    }

    pub fn color(&self) -> Option<Color> {
        self.0.iter().find_map(|a| match a {
            Attribute::Color(c) => Some(*c),
            _ => None,
        })
    }

    pub fn size(&self) -> Option<SizeClass> {
        self.0.iter().find_map(|a| match a {
            Attribute::Size(s) => Some(*s),
            _ => None,
        })
    }

    pub fn body(&self) -> Option<BodyStyle> {
        self.0.iter().find_map(|a| match a {
            Attribute::Body(b) => Some(*b),
            _ => None,
        })
    }

    /// The `(color, size, body)` triple, if exactly one of each is present.
    pub fn triple(&self) -> Result<(Color, SizeClass, BodyStyle), SynthError> {
        if self.0.len() != 3 {
            return Err(SynthError::InvalidAttributes(format!(
                "expected one color, size and body style, got {} attributes",
                self.0.len()
            )));
        }
        match (self.color(), self.size(), self.body()) {
            (Some(c), Some(s), Some(b)) => Ok((c, s, b)),
            _ => Err(SynthError::InvalidAttributes(
                "missing color, size or body style".into(),
            )),
        }
    }

    /// Number of shared attributes.
    pub fn overlap(&self, other: &AttributeSet) -> usize {
        self.0.intersection(&other.0).count()
    }
}

/// Nominal car dimensions `(l, w, h)` for an archetype before domain shift.
pub fn nominal_dims(size: SizeClass, body: BodyStyle) -> [f64; 3] {
    let base = match body {
        BodyStyle::Sedan => [4.5, 1.80, 1.45],
        BodyStyle::Suv => [4.7, 1.90, 1.75],
        BodyStyle::Hatchback => [4.0, 1.75, 1.50],
        BodyStyle::Van => [5.0, 1.95, 1.95],
    };
    let s = match size {
        SizeClass::Small => 0.92,
        SizeClass::Medium => 1.0,
        SizeClass::Large => 1.08,
    };
    [base[0] * s, base[1] * s, base[2] * s.sqrt()]
}

/// A labeled car.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub object_id: u32,
    pub bbox: Box3D<f64>,
    pub attributes: AttributeSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainTag {
    Source,
    Target,
}

/// The knobs that separate the two synthetic domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub tag: DomainTag,
    pub beam_count: usize,
    /// Multiplicative offset on `(l, w, h)`.
    pub size_shift: [f64; 3],
    pub point_noise_sigma: f64,
    /// Fraction of rings removed per sweep.
    pub dropout_rate: f64,
    pub camera_rig: Vec<CameraModel<f64>>,
    /// Expected labeled objects per scene.
    pub object_density: f64,
    /// Fraction of objects placed beyond 30 m.
    pub far_bias: f64,
    /// Expected unlabeled clutter items per scene.
    pub clutter_density: f64,
    /// Horizontal angular step between returns, degrees.
    pub azimuth_step_deg: f64,
}

impl DomainConfig {
    /// 64-beam source domain with nominal object sizes.
    pub fn source() -> Self {
        Self {
            tag: DomainTag::Source,
            beam_count: 64,
            size_shift: [1.0, 1.0, 1.0],
            point_noise_sigma: 0.02,
            dropout_rate: 0.0,
            camera_rig: default_camera_rig(),
            object_density: 8.0,
            far_bias: 0.35,
            clutter_density: 6.0,
            azimuth_step_deg: 0.25,
        }
    }

    /// 32-beam target domain with larger objects and more clutter.
    pub fn target() -> Self {
        Self {
            tag: DomainTag::Target,
            beam_count: 32,
            size_shift: [1.15, 1.1, 1.05],
            clutter_density: 8.0,
            ..Self::source()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.beam_count < 4 || self.beam_count > u16::MAX as usize {
            return bad(format!("beam_count {} must be >= 4", self.beam_count));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if !(self.point_noise_sigma >= 0.0) {
            return bad("point_noise_sigma must be non-negative".into());
        }
        if self.size_shift.iter().any(|s| !(*s > 0.0)) {
            return bad("size_shift entries must be positive".into());
        }
        if !(self.object_density >= 0.0 && self.clutter_density >= 0.0) {
            return bad("densities must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.far_bias) {
            return bad(format!("far_bias {} outside [0, 1]", self.far_bias));
        }
        if !(self.azimuth_step_deg > 0.01) {
            return bad("azimuth_step_deg must exceed 0.01".into());
        }
        if self.camera_rig.is_empty() {
            return bad("camera_rig is empty".into());
        }
        for cam in &self.camera_rig {
            CameraModel::new(cam.id, cam.k, cam.e, cam.width, cam.height)?;
        }
        Ok(())
    }
}

/// Three forward cameras covering roughly +-90 degrees.
pub fn default_camera_rig() -> Vec<CameraModel<f64>> {
    let yaws = [0.0, 0.96, -0.96];
    yaws.iter()
        .enumerate()
        .map(|(i, &yaw)| {
            CameraModel::looking_along(i as u32, [1.2, 0.0, 1.6], yaw, 460.0, 640.0, 480.0)
                .expect("static rig is valid")
        })
        .collect()
}

/// Who produced a LiDAR return.
pub const OWNER_GROUND: i32 = -1;
pub const OWNER_CLUTTER: i32 = -2;

/// One LiDAR return: ego-frame position, ring index, and the index of the
/// labeled object it hit (or one of the `OWNER_*` codes).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarPoint {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub ring: u16,
    pub owner: i32,
}

impl LidarPoint {
    pub fn xyz(&self) -> [f64; 3] {
        [self.x as f64, self.y as f64, self.z as f64]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: u64,
    pub domain_tag: DomainTag,
    pub rng_seed: u64,
    pub beam_count: usize,
    pub points: Vec<LidarPoint>,
    pub objects: Vec<ObjectSpec>,
    pub cameras: Vec<CameraModel<f64>>,
}

impl Scene {
    pub fn labels(&self) -> Vec<Box3D<f64>> {
        self.objects.iter().map(|o| o.bbox).collect()
    }

    pub fn points_of(&self, object_index: usize) -> impl Iterator<Item = &LidarPoint> {
        self.points
            .iter()
            .filter(move |p| p.owner == object_index as i32)
    }
}

/// Generates `count` scenes with seeds derived from `base_seed`.
pub fn generate_split(cfg: &DomainConfig, count: usize, base_seed: u64) -> Result<Vec<Scene>, SynthError> {
    cfg.validate()?;
    (0..count)
        .map(|i| {
            let seed = split_seed(base_seed, i as u64);
            let mut s = generate_scene(cfg, seed)?;
            s.scene_id = i as u64;
            Ok(s)
        })
        .collect()
}

/// Per-scene seed derivation shared by data generation and training.
pub fn split_seed(base: u64, index: u64) -> u64 {
    mix64(base ^ mix64(index.wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes a sequence of words into one seed.
pub fn hash_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x243f_6a88_85a3_08d3u64, |acc, &p| mix64(acc ^ p))
}
