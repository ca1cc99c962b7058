//! Closed-form multiply-accumulate counts for one attention layer.

use crate::config::AttentionMode;

/// MACs of the score stage (`q·k + q·r_q + k·r_k`, three per channel per
/// query-member pair) and the mix stage (`w·(v + r_v)`, one per channel).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlopCount {
    pub score: u64,
    pub mix: u64,
}

impl FlopCount {
    pub fn total(&self) -> u64 {
        self.score + self.mix
    }
}

/// Count for one layer over an `h x w` map with span `m` and `hidden`
/// channels. Axial attends over `m` positions per query, full over `m²`.
/// Head count does not change the total since heads partition the channels.
pub fn attention_flop_count(h: usize, w: usize, m: usize, hidden: usize, mode: AttentionMode) -> FlopCount {
    let members = match mode {
        AttentionMode::Axial => m,
        AttentionMode::Full => m * m,
    } as u64;
    let pairs = (h * w) as u64 * members;
    FlopCount {
        score: 3 * pairs * hidden as u64,
        mix: pairs * hidden as u64,
    }
}
