use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiscSize {
    Small,
    Medium,
    Large,
}

impl DiscSize {
    pub const ALL: [DiscSize; 3] = [DiscSize::Small, DiscSize::Medium, DiscSize::Large];

    pub fn as_str(self) -> &'static str {
        match self {
            DiscSize::Small => "small",
            DiscSize::Medium => "medium",
            DiscSize::Large => "large",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RimColor {
    Pink,
    Pale,
}

impl RimColor {
    pub fn as_str(self) -> &'static str {
        match self {
            RimColor::Pink => "pink",
            RimColor::Pale => "pale",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Risk {
    #[serde(rename = "high risk")]
    High,
    #[serde(rename = "low risk")]
    Low,
}

impl Risk {
    pub fn as_str(self) -> &'static str {
        match self {
            Risk::High => "high risk",
            Risk::Low => "low risk",
        }
    }
}

/// One record. Field names follow the public glaucoma JSON schema; fields
/// not listed here survive a load/save round trip in `extra`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlaucomaSample {
    pub optic_disc_size: DiscSize,
    pub cup_to_disc_ratio: f64,
    pub isnt_rule_followed: bool,
    pub rim_pallor: bool,
    pub rim_color: RimColor,
    pub bayoneting: bool,
    pub sharp_edge: bool,
    pub laminar_dot_sign: bool,
    pub notching: bool,
    pub rim_thinning: bool,
    pub additional_observations: Option<String>,
    pub neuroretinal_rim: String,
    pub glaucoma_risk_assessment: Risk,
    pub confidence_level: f64,
    pub report: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl GlaucomaSample {
    /// The seven boolean findings in factor order.
    pub fn findings(&self) -> [bool; 7] {
        [
            self.isnt_rule_followed,
            self.rim_pallor,
            self.bayoneting,
            self.sharp_edge,
            self.laminar_dot_sign,
            self.notching,
            self.rim_thinning,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.cup_to_disc_ratio) {
            return Err(Error::Validation(format!(
                "cup_to_disc_ratio {} outside [0, 1]",
                self.cup_to_disc_ratio
            )));
        }
        if !(0.0..=1.0).contains(&self.confidence_level) {
            return Err(Error::Validation(format!(
                "confidence_level {} outside [0, 1]",
                self.confidence_level
            )));
        }
        Ok(())
    }

    /// Multi-hot labels in [`crate::label::DEFAULT_LABELS`] order.
    pub fn labels(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.findings().iter().map(|&b| f64::from(u8::from(b))).collect();
        v.push(f64::from(u8::from(self.glaucoma_risk_assessment == Risk::High)));
        v
    }
}

/// Length of the factor vector.
pub const FACTOR_DIM: usize = 13;

/// Factor index map:
///
/// | index | field |
/// |-------|-------|
/// | 0..7  | isnt_rule_followed, rim_pallor, bayoneting, sharp_edge, laminar_dot_sign, notching, rim_thinning (0/1) |
/// | 7..10 | optic_disc_size one-hot: small, medium, large |
/// | 10    | cup_to_disc_ratio |
/// | 11    | rim_color is pale (0/1) |
/// | 12    | confidence_level |
pub fn encode_factors(s: &GlaucomaSample) -> Vec<f64> {
    let mut v = Vec::with_capacity(FACTOR_DIM);
    v.extend(s.findings().iter().map(|&b| f64::from(u8::from(b))));
    let mut disc = [0.0; 3];
    disc[s.optic_disc_size.index()] = 1.0;
    v.extend(disc);
    v.push(s.cup_to_disc_ratio);
    v.push(f64::from(u8::from(s.rim_color == RimColor::Pale)));
    v.push(s.confidence_level);
    v
}
