//! Progressive context-extension schedules and PoSE position-id plans.
//!
//! Each stage doubles the maximum position and quadruples the RoPE base.
//! When the hardware cannot hold a full-length sequence, the stage trains on
//! shorter sequences whose position ids skip ahead so that they still span
//! the target length.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("training length {train_len} exceeds target length {target_len}")]
    TrainExceedsTarget { train_len: usize, target_len: usize },
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("stage {0} overflows the position range")]
    Overflow(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub stage_index: usize,
    pub max_position: u64,
    pub train_seq_len: u64,
    pub rope_theta: f64,
    pub learning_rate: f64,
    pub max_steps: u32,
    pub warmup_steps: u32,
    /// Training sequences are shorter than `max_position`.
    pub pose: bool,
}

/// Inputs to [`progressive_schedule`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleParams {
    pub start_max_position: u64,
    pub start_theta: f64,
    pub n_stages: usize,
    pub hardware_cap: u64,
    pub learning_rate: f64,
    pub max_steps: u32,
    pub warmup_steps: u32,
}

impl Default for ScheduleParams {
    /// 128k / θ = 500k start, three stages, 512k physical sequences, and
    /// the 8B model's optimizer settings.
    fn default() -> Self {
        Self {
            start_max_position: 131_072,
            start_theta: 500_000.0,
            n_stages: 3,
            hardware_cap: 524_288,
            learning_rate: 1e-5,
            max_steps: 50,
            warmup_steps: 10,
        }
    }
}

/// Stage `k` (0-based) gets `max_position = start · 2^(k+1)` and
/// `θ = start_θ · 4^(k+1)`; `train_seq_len` is capped by the hardware.
pub fn progressive_schedule(p: &ScheduleParams) -> Result<Vec<StageConfig>, PlanError> {
    if p.n_stages == 0 {
        return Err(PlanError::NonPositive("n_stages"));
    }
    if p.start_max_position == 0 {
        return Err(PlanError::NonPositive("start_max_position"));
    }
    if p.hardware_cap == 0 {
        return Err(PlanError::NonPositive("hardware_cap"));
    }
    if p.start_theta.is_nan() || p.start_theta <= 0.0 {
        return Err(PlanError::NonPositive("start_theta"));
    }
    (0..p.n_stages)
        .map(|k| {
            let shift = u32::try_from(k + 1).map_err(|_| PlanError::Overflow(k))?;
            let max_position = 2u64
                .checked_pow(shift)
                .and_then(|m| m.checked_mul(p.start_max_position))
                .ok_or(PlanError::Overflow(k))?;
            let train_seq_len = max_position.min(p.hardware_cap);
            Ok(StageConfig {
                stage_index: k,
                max_position,
                train_seq_len,
                rope_theta: p.start_theta * 4f64.powi(k as i32 + 1),
                learning_rate: p.learning_rate,
                max_steps: p.max_steps,
                warmup_steps: p.warmup_steps,
                pose: train_seq_len < max_position,
            })
        })
        .collect()
}

/// Position ids for one training sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionPlan {
    pub positions: Vec<u64>,
    pub train_len: usize,
    pub target_len: usize,
    /// Length of the first segment.
    pub cut: usize,
    /// Gap inserted before the second segment.
    pub skip: usize,
}

impl PositionPlan {
    pub fn is_valid(&self) -> bool {
        self.positions.len() == self.train_len
            && self.positions.windows(2).all(|w| w[0] < w[1])
            && self.positions.last().is_none_or(|&p| p < self.target_len as u64)
    }
}

/// Two-segment positional skip: positions `[0, c)` followed by
/// `[c + u, u + train_len)`, with the cut `c` uniform in `[0, train_len]`
/// and the skip `u` uniform in `[0, target_len − train_len]`.
pub fn pose_position_ids(train_len: usize, target_len: usize, seed: u64) -> Result<PositionPlan, PlanError> {
    if train_len > target_len {
        return Err(PlanError::TrainExceedsTarget { train_len, target_len });
    }
    let mut rng = seed::rng(seed::derive_named(seed, "pose"));
    let cut = rng.gen_range(0..=train_len);
    let skip = rng.gen_range(0..=target_len - train_len);
    let positions = (0..cut as u64).chain((cut + skip) as u64..(train_len + skip) as u64).collect();
    Ok(PositionPlan { positions, train_len, target_len, cut, skip })
}

/// Human-readable table of a schedule.
pub fn format_schedule(stages: &[StageConfig]) -> String {
    let mut out = String::from("stage  max_position  train_seq_len  rope_theta  lr        steps  warmup  pose\n");
    for s in stages {
        out.push_str(&format!(
            "{:<5}  {:<12}  {:<13}  {:<10}  {:<8.0e}  {:<5}  {:<6}  {}\n",
            s.stage_index + 1,
            human_tokens(s.max_position),
            human_tokens(s.train_seq_len),
            human_count(s.rope_theta),
            s.learning_rate,
            s.max_steps,
            s.warmup_steps,
            if s.pose { "yes" } else { "no" }
        ));
    }
    out
}

/// 262144 → "256k", 1048576 → "1M".
pub fn human_tokens(n: u64) -> String {
    if n >= 1 << 20 && n.is_multiple_of(1 << 20) {
        format!("{}M", n >> 20)
    } else if n >= 1 << 10 && n.is_multiple_of(1 << 10) {
        format!("{}k", n >> 10)
    } else {
        n.to_string()
    }
}

/// 2000000 → "2M", 500000 → "500k".
pub fn human_count(x: f64) -> String {
    if x >= 1e6 && (x / 1e6).fract() == 0.0 {
        format!("{}M", x / 1e6)
    } else if x >= 1e3 && (x / 1e3).fract() == 0.0 {
        format!("{}k", x / 1e3)
    } else {
        x.to_string()
    }
}
