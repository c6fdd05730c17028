//! Progressive resolution schedule and fade bookkeeping.

use crate::{Error, Result};

/// Resolution at a growth level: 4x4 at level 0, doubling per level.
pub fn resolution(level: usize) -> usize {
    1 << (level + 2)
}

/// Growth level of a resolution, if it is one.
pub fn level_of(n: usize) -> Result<usize> {
    if n >= 4 && n.is_power_of_two() && n <= 128 {
        Ok(n.trailing_zeros() as usize - 2)
    } else {
        Err(Error::Shape(format!("{n} is not a supported resolution (4..=128, power of 2)")))
    }
}

/// One training phase at a fixed resolution level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Phase {
    pub level: usize,
    /// Images shown while blending the new top block in (0 for the first phase).
    pub fade_images: u64,
    /// Images shown after the blend saturates at alpha = 1.
    pub stabilize_images: u64,
}

/// Ordered phases; levels rise by exactly one per phase starting at 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProgressiveSchedule {
    pub phases: Vec<Phase>,
}

impl ProgressiveSchedule {
    pub fn new(phases: Vec<Phase>) -> Result<Self> {
        if phases.is_empty() {
            return Err(Error::Config("schedule: at least one phase required".into()));
        }
        if phases[0].level != 0 {
            return Err(Error::Config(format!(
                "schedule: first phase must be level 0 (4x4), got level {}",
                phases[0].level
            )));
        }
        if phases[0].fade_images != 0 {
            return Err(Error::Config("schedule: first phase cannot fade (no previous level)".into()));
        }
        for w in phases.windows(2) {
            if w[1].level != w[0].level + 1 {
                return Err(Error::Config(format!(
                    "schedule: levels must increase by 1, got {} after {}",
                    w[1].level, w[0].level
                )));
            }
        }
        Ok(ProgressiveSchedule { phases })
    }

    pub fn top_level(&self) -> usize {
        self.phases.last().expect("validated nonempty").level
    }

    pub fn total_images(&self) -> u64 {
        self.phases.iter().map(|p| p.fade_images + p.stabilize_images).sum()
    }

    /// Parse the `res:fade:stabilize` comma list, e.g.
    /// `4:0:16000,8:12000:12000,16:12000:12000,32:12000:20000`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut phases = Vec::new();
        for part in text.split(',') {
            let fields: Vec<&str> = part.trim().split(':').collect();
            if fields.len() != 3 {
                return Err(Error::Config(format!(
                    "schedule: expected res:fade:stabilize, got '{part}'"
                )));
            }
            let res: usize = fields[0]
                .parse()
                .map_err(|_| Error::Config(format!("schedule: bad resolution '{}'", fields[0])))?;
            let fade: u64 = fields[1]
                .parse()
                .map_err(|_| Error::Config(format!("schedule: bad fade count '{}'", fields[1])))?;
            let stab: u64 = fields[2]
                .parse()
                .map_err(|_| Error::Config(format!("schedule: bad stabilize count '{}'", fields[2])))?;
            phases.push(Phase { level: level_of(res)?, fade_images: fade, stabilize_images: stab });
        }
        ProgressiveSchedule::new(phases)
    }

    pub fn to_text(&self) -> String {
        self.phases
            .iter()
            .map(|p| format!("{}:{}:{}", resolution(p.level), p.fade_images, p.stabilize_images))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Current blend position: the level being trained and alpha in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FadeState {
    pub level: usize,
    pub alpha: f64,
}

impl FadeState {
    pub fn new(level: usize, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!("alpha must be in [0,1], got {alpha}")));
        }
        Ok(FadeState { level, alpha })
    }

    pub fn stabilized(level: usize) -> Self {
        FadeState { level, alpha: 1.0 }
    }

    /// Alpha after `shown` of `fade_images` images: linear ramp, exactly 1 at
    /// the end of the fade (and for every step after).
    pub fn alpha_at(shown: u64, fade_images: u64) -> f64 {
        if fade_images == 0 || shown >= fade_images {
            1.0
        } else {
            shown as f64 / fade_images as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trips() {
        let s = ProgressiveSchedule::parse("4:0:100,8:50:60,16:70:80").unwrap();
        assert_eq!(s.phases.len(), 3);
        assert_eq!(s.top_level(), 2);
        assert_eq!(s.total_images(), 100 + 110 + 150);
        assert_eq!(s.to_text(), "4:0:100,8:50:60,16:70:80");
    }

    #[test]
    fn rejects_level_skip_and_nonzero_first_fade() {
        assert!(ProgressiveSchedule::parse("4:0:10,16:5:5").is_err());
        assert!(ProgressiveSchedule::parse("4:5:10").is_err());
        assert!(ProgressiveSchedule::parse("8:0:10").is_err());
    }

    #[test]
    fn alpha_ramp_is_linear_and_clips() {
        assert_eq!(FadeState::alpha_at(0, 100), 0.0);
        assert_eq!(FadeState::alpha_at(25, 100), 0.25);
        assert_eq!(FadeState::alpha_at(100, 100), 1.0);
        assert_eq!(FadeState::alpha_at(150, 100), 1.0);
        assert_eq!(FadeState::alpha_at(7, 0), 1.0);
    }

    #[test]
    fn resolutions_follow_levels() {
        let expected = [4, 8, 16, 32, 64, 128];
        for (level, &res) in expected.iter().enumerate() {
            assert_eq!(resolution(level), res);
            assert_eq!(level_of(res).unwrap(), level);
        }
        assert!(level_of(2).is_err());
        assert!(level_of(256).is_err());
    }
}
