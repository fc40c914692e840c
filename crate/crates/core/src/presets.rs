//! Published hyperparameter rows for three reasoning models.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rescale::GainPolicy;
use crate::taxonomy::{Boundaries, Thresholds};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    KimiVl,
    OceanR1,
    R1Onevision,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PresetValues {
    pub boundaries: Boundaries,
    pub thresholds: Thresholds,
    pub g_perc: f64,
    pub g_reas: f64,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::KimiVl, Preset::OceanR1, Preset::R1Onevision];

    pub fn values(self) -> PresetValues {
        // (reas_first, tau_reas, g_reas, perc_last, tau_perc, g_perc)
        let (lr, tr, gr, lp, tp, gp) = match self {
            Preset::KimiVl => (5, 0.01, 1.40, 10, 0.27, 1.20),
            Preset::OceanR1 => (3, 0.01, 1.30, 7, 0.22, 1.16),
            Preset::R1Onevision => (3, 0.01, 1.30, 7, 0.30, 1.20),
        };
        PresetValues {
            boundaries: Boundaries::new(lp, lr),
            thresholds: Thresholds { tau_perc: tp, tau_reas: tr },
            g_perc: gp,
            g_reas: gr,
        }
    }

    pub fn policy(self) -> GainPolicy {
        let v = self.values();
        GainPolicy::ClassConditioned {
            g_perc: v.g_perc,
            g_reas: v.g_reas,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::KimiVl => "kimi-vl",
            Preset::OceanR1 => "ocean-r1",
            Preset::R1Onevision => "r1-onevision",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown preset {s:?} (kimi-vl, ocean-r1, r1-onevision)")))
    }
}
