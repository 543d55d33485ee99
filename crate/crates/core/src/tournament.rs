//! Single-elimination bracket over candidate responses.
//!
//! Candidates are seeded by index (0 is the top seed). When the pool is not a
//! power of two, the top seeds receive first-round byes. Each match presents
//! its two candidates to the judge in an order drawn from the seeded stream,
//! so positional bias cannot systematically favor a bracket slot. The full
//! match list is recorded; the same candidates, judge, and seed always
//! reproduce the same trace and champion.

use async_trait::async_trait;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::digest::{stream_rng, text_digest};
use crate::inference::InferenceError;
use crate::types::Label;

/// Outcome of one pairwise comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub winner: Label,
    pub tokens: u64,
}

/// A pairwise preference judge.
#[async_trait]
pub trait PairwiseJudge: Send + Sync {
    /// Decide whether `response_a` (position A) or `response_b` (position B)
    /// is better for `prompt`.
    async fn judge(
        &self,
        prompt: &str,
        response_a: &str,
        response_b: &str,
    ) -> Result<Judgment, InferenceError>;
}

#[async_trait]
impl<F, Fut> PairwiseJudge for F
where
    F: Fn(String, String, String) -> Fut + Send + Sync,
    Fut: std::future::Future<Output = Result<Judgment, InferenceError>> + Send,
{
    async fn judge(
        &self,
        prompt: &str,
        response_a: &str,
        response_b: &str,
    ) -> Result<Judgment, InferenceError> {
        self(prompt.to_string(), response_a.to_string(), response_b.to_string()).await
    }
}

/// One played match. `left`/`right` are candidate indices with `left` the
/// better seed; `swapped` records whether `right` was shown in position A.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub round: u32,
    pub match_index: u32,
    pub left: usize,
    pub right: usize,
    pub swapped: bool,
    pub winner: usize,
}

/// Complete record of a bracket run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TournamentTrace {
    pub seed: u64,
    pub entrants: usize,
    pub matches: Vec<MatchRecord>,
    pub champion: usize,
    pub first_round_losers: Vec<usize>,
    pub total_tokens: u64,
}

/// Run a bracket over `candidates` and return the full trace.
pub async fn run_bracket(
    prompt: &str,
    candidates: &[String],
    judge: &dyn PairwiseJudge,
    seed: u64,
) -> Result<TournamentTrace, InferenceError> {
    if candidates.is_empty() {
        return Err(InferenceError::EmptyCandidates);
    }
    let prompt_digest = text_digest(prompt);
    let mut matches = Vec::new();
    let mut first_round_losers = Vec::new();
    let mut total_tokens = 0u64;

    // Round 1 trims the field to the next lower power of two; top seeds sit
    // out. With 2n - P entrants playing (P = next power of two), the
    // survivor count is always a power of two afterwards.
    let pool = candidates.len();
    let next_pow = pool.next_power_of_two();
    let byes = next_pow - pool;

    let mut round = 1u32;
    let mut survivors: Vec<usize> = (0..byes).collect();
    let mut field: Vec<usize> = (byes..pool).collect();

    loop {
        let mut winners = Vec::with_capacity(field.len() / 2);
        let pairs = field.len() / 2;
        for match_index in 0..pairs {
            let left = field[match_index];
            let right = field[field.len() - 1 - match_index];
            let mut rng = stream_rng(
                seed,
                "tournament.match",
                &[
                    prompt_digest.as_bytes(),
                    &round.to_le_bytes(),
                    &(match_index as u32).to_le_bytes(),
                ],
            );
            let swapped = rng.random_range(0..2u8) == 1;
            let (pos_a, pos_b) = if swapped { (right, left) } else { (left, right) };
            let judgment = judge
                .judge(prompt, &candidates[pos_a], &candidates[pos_b])
                .await?;
            total_tokens += judgment.tokens;
            let winner = match judgment.winner {
                Label::A => pos_a,
                Label::B => pos_b,
            };
            let loser = if winner == left { right } else { left };
            matches.push(MatchRecord {
                round,
                match_index: match_index as u32,
                left,
                right,
                swapped,
                winner,
            });
            if round == 1 {
                first_round_losers.push(loser);
            }
            winners.push(winner);
        }

        survivors.extend(winners);
        survivors.sort_unstable();
        if survivors.len() <= 1 {
            let champion = survivors.first().copied().unwrap_or(field[0]);
            return Ok(TournamentTrace {
                seed,
                entrants: pool,
                matches,
                champion,
                first_round_losers,
                total_tokens,
            });
        }
        field = std::mem::take(&mut survivors);
        round += 1;
    }
}

/// Re-derive the champion from a recorded match list by elimination.
/// Returns `None` when the trace is inconsistent with single elimination
/// over `entrants` candidates.
pub fn replay_champion(trace: &TournamentTrace) -> Option<usize> {
    if trace.entrants == 0 {
        return None;
    }
    if trace.entrants == 1 {
        return Some(0);
    }
    let mut alive: Vec<bool> = vec![true; trace.entrants];
    for m in &trace.matches {
        let loser = if m.winner == m.left { m.right } else { m.left };
        if m.winner >= alive.len() || loser >= alive.len() || !alive[m.winner] || !alive[loser] {
            return None;
        }
        alive[loser] = false;
    }
    let survivors: Vec<usize> = (0..trace.entrants).filter(|&i| alive[i]).collect();
    match survivors.as_slice() {
        [champion] => Some(*champion),
        _ => None,
    }
}
