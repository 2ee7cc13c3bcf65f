//! Dependent click model: the user scans the list top-down, clicks with a
//! grade-dependent probability and, after a click, stops with a
//! grade-dependent probability.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::data::MAX_GRADE;
use crate::error::{Error, Result};

const GRADES: usize = MAX_GRADE as usize + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClickModelName {
    Perfect,
    Navigational,
    Informational,
    Custom,
}

impl fmt::Display for ClickModelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClickModelName::Perfect => "perfect",
            ClickModelName::Navigational => "navigational",
            ClickModelName::Informational => "informational",
            ClickModelName::Custom => "custom",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClickModelConfig {
    pub name: ClickModelName,
    /// `P(click | grade)` for grades 0..=4.
    pub click_prob: [f64; GRADES],
    /// `P(stop | click, grade)` for grades 0..=4.
    pub stop_prob: [f64; GRADES],
}

impl ClickModelConfig {
    pub fn perfect() -> Self {
        ClickModelConfig {
            name: ClickModelName::Perfect,
            click_prob: [0.0, 0.2, 0.4, 0.8, 1.0],
            stop_prob: [0.0, 0.0, 0.0, 0.0, 0.0],
        }
    }

    pub fn navigational() -> Self {
        ClickModelConfig {
            name: ClickModelName::Navigational,
            click_prob: [0.05, 0.3, 0.5, 0.7, 0.95],
            stop_prob: [0.2, 0.3, 0.5, 0.7, 0.9],
        }
    }

    pub fn informational() -> Self {
        ClickModelConfig {
            name: ClickModelName::Informational,
            click_prob: [0.4, 0.6, 0.7, 0.8, 0.9],
            stop_prob: [0.1, 0.2, 0.3, 0.4, 0.5],
        }
    }

    pub fn custom(click_prob: [f64; GRADES], stop_prob: [f64; GRADES]) -> Result<Self> {
        let cfg = ClickModelConfig {
            name: ClickModelName::Custom,
            click_prob,
            stop_prob,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for p in self.click_prob.iter().chain(&self.stop_prob) {
            if !(0.0..=1.0).contains(p) {
                return Err(Error::Validation(format!(
                    "click model probability {p} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    pub fn all_standard() -> [ClickModelConfig; 3] {
        [
            ClickModelConfig::perfect(),
            ClickModelConfig::navigational(),
            ClickModelConfig::informational(),
        ]
    }
}

impl FromStr for ClickModelConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "perfect" | "per" => Ok(ClickModelConfig::perfect()),
            "navigational" | "nav" => Ok(ClickModelConfig::navigational()),
            "informational" | "inf" => Ok(ClickModelConfig::informational()),
            other => Err(Error::Config(format!(
                "unknown click model '{other}' (custom models take click_prob/stop_prob)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClickOutcome {
    pub clicks: Vec<bool>,
    /// 1-based position where examination ended; 0 for an empty list.
    pub examined_through: usize,
}

impl ClickOutcome {
    pub fn num_clicks(&self) -> usize {
        self.clicks.iter().filter(|&&c| c).count()
    }
}

/// Simulates one examination of `grades` (display order). Draws one uniform
/// number per examined position for the click and, after a click, one for
/// the stop decision, in scan order.
pub fn simulate<R: Rng + ?Sized>(
    grades: &[u8],
    config: &ClickModelConfig,
    rng: &mut R,
) -> Result<ClickOutcome> {
    if let Some(bad) = grades.iter().find(|&&g| g > MAX_GRADE) {
        return Err(Error::Validation(format!("grade {bad} outside 0..={MAX_GRADE}")));
    }
    let mut clicks = vec![false; grades.len()];
    let mut examined_through = grades.len();
    for (pos, &g) in grades.iter().enumerate() {
        let g = usize::from(g);
        if rng.gen::<f64>() < config.click_prob[g] {
            clicks[pos] = true;
            if rng.gen::<f64>() < config.stop_prob[g] {
                examined_through = pos + 1;
                break;
            }
        }
    }
    Ok(ClickOutcome {
        clicks,
        examined_through,
    })
}
