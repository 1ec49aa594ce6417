use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Resolutions `start_res, 2*start_res, ..., final_res`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionSchedule {
    pub start_res: usize,
    pub final_res: usize,
}

impl ResolutionSchedule {
    pub fn new(start_res: usize, final_res: usize) -> Result<Self> {
        let s = ResolutionSchedule { start_res, final_res };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.start_res.is_power_of_two() || !self.final_res.is_power_of_two() {
            return Err(Error::InvalidArgument(
                "schedule resolutions must be powers of two".into(),
            ));
        }
        if self.start_res < 4 || self.final_res < self.start_res {
            return Err(Error::InvalidArgument(format!(
                "invalid schedule {}->{}: need 4 <= start <= final",
                self.start_res, self.final_res
            )));
        }
        Ok(())
    }

    pub fn num_stages(&self) -> usize {
        (self.final_res / self.start_res).trailing_zeros() as usize + 1
    }

    pub fn resolution(&self, stage: usize) -> Result<usize> {
        if stage >= self.num_stages() {
            return Err(Error::InvalidArgument(format!(
                "stage {stage} outside schedule {}->{} ({} stages)",
                self.start_res,
                self.final_res,
                self.num_stages()
            )));
        }
        Ok(self.start_res << stage)
    }

    pub fn resolutions(&self) -> Vec<usize> {
        (0..self.num_stages()).map(|k| self.start_res << k).collect()
    }
}

/// Epoch budget of one stage. `fade_epochs` may be fractional; alpha is
/// evaluated per optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub stage: usize,
    pub resolution: usize,
    pub epochs: usize,
    pub fade_epochs: f64,
}

impl StagePlan {
    /// Fade weight after `progress` epochs into this stage.
    pub fn alpha_at(&self, progress: f64) -> f64 {
        if self.stage == 0 || self.fade_epochs <= 0.0 {
            return 1.0;
        }
        (progress / self.fade_epochs).clamp(0.0, 1.0)
    }
}

/// Splits `epochs_total` evenly over the stages; leftover epochs go to the
/// last stages, one each.
pub fn stage_schedule(
    epochs_total: usize,
    schedule: &ResolutionSchedule,
    fade_fraction: f64,
) -> Result<Vec<StagePlan>> {
    schedule.validate()?;
    let k = schedule.num_stages();
    if epochs_total < k {
        return Err(Error::InvalidArgument(format!(
            "{epochs_total} epochs cannot cover {k} stages"
        )));
    }
    if !(fade_fraction > 0.0 && fade_fraction <= 1.0) {
        return Err(Error::InvalidArgument("fade_fraction must lie in (0, 1]".into()));
    }
    let (base, rem) = (epochs_total / k, epochs_total % k);
    Ok((0..k)
        .map(|stage| {
            let epochs = base + usize::from(stage >= k - rem);
            StagePlan {
                stage,
                resolution: schedule.start_res << stage,
                epochs,
                fade_epochs: if stage == 0 { 0.0 } else { fade_fraction * epochs as f64 },
            }
        })
        .collect())
}
