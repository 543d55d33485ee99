//! `judge`: verdict records over preference examples.

use std::path::Path;

use rubric_rm::exec::map_concurrent;
use rubric_rm::inference::{best_of_n, judge_rubric_free, judge_selective, vote_rubric_free};
use rubric_rm::records::{ProgressLog, RecordWriter};
use rubric_rm::synthesis::PreferenceExample;

use super::{AnyJudge, CandidateSet, Context_, Outcome, VerdictRecord};
use crate::runlog::RunLog;
use crate::{JudgeChoice, JudgeMode};

#[allow(clippy::too_many_arguments)]
pub async fn run(
    ctx: &Context_,
    mode: JudgeMode,
    input: &Path,
    out: &Path,
    votes: Option<u32>,
    temperature: Option<f64>,
    judge_choice: JudgeChoice,
    resume: bool,
) -> anyhow::Result<Outcome> {
    let log = RunLog::beside(out);
    let progress = ProgressLog::for_output(out);
    let completed = if resume {
        progress.completed()?
    } else {
        progress.clear()?;
        Default::default()
    };

    let records: Vec<VerdictRecord> = match mode {
        JudgeMode::BestOfN => {
            let mut sets: Vec<CandidateSet> = super::read_input(input)?;
            sets.sort_by(|a, b| a.id.cmp(&b.id));
            sets.retain(|s| !completed.contains(&s.id));
            let judge = AnyJudge::build(ctx, judge_choice)?;
            let judge = &judge;
            let seed = ctx.config.seed;
            log.progress(&format!("best-of-n over {} candidate set(s)", sets.len()));
            map_concurrent(sets, ctx.config.concurrency(), |set| async move {
                match best_of_n(&set.prompt, &set.candidates, judge, seed).await {
                    Ok((winner, trace)) => VerdictRecord {
                        id: set.id,
                        final_answer: None,
                        assessment: None,
                        fallback_used: false,
                        verifier_calls: trace.matches.len() as u32,
                        generator_calls: 0,
                        tokens: trace.total_tokens,
                        tally_a: None,
                        tally_b: None,
                        tie_broken: None,
                        invalid_votes: None,
                        winner_index: Some(winner),
                        error: None,
                    },
                    Err(e) => VerdictRecord::failed(set.id, e.to_string()),
                }
            })
            .await
        }
        _ => {
            let mut examples: Vec<PreferenceExample> = super::read_input(input)?;
            examples.sort_by(|a, b| a.id.cmp(&b.id));
            examples.retain(|e| !completed.contains(&e.id));
            log.progress(&format!("judging {} example(s)", examples.len()));

            let generator = match mode {
                JudgeMode::Selective => Some(ctx.config.build_oracle("generator")?),
                _ => None,
            };
            let verifier = ctx.config.build_oracle("verifier")?;
            let inference = ctx.config.inference;
            let seed = ctx.config.seed;
            let vote_budget = votes.unwrap_or(ctx.config.eval.votes);
            let vote_temperature = temperature.unwrap_or(1.0);

            map_concurrent(examples, ctx.config.concurrency(), |example| {
                let generator = generator.clone();
                let verifier = verifier.clone();
                async move {
                    let id = example.id.clone();
                    match mode {
                        JudgeMode::Selective => {
                            let generator = generator.expect("selective mode builds a generator");
                            match judge_selective(
                                &example.prompt,
                                &example.response_a,
                                &example.response_b,
                                generator.as_ref(),
                                verifier.as_ref(),
                                inference.rubric_temperature,
                                inference.verifier_temperature,
                                inference.max_new_tokens,
                                seed,
                            )
                            .await
                            {
                                Ok(outcome) => VerdictRecord {
                                    id,
                                    final_answer: Some(outcome.final_answer),
                                    assessment: outcome.assessment,
                                    fallback_used: outcome.fallback_used,
                                    verifier_calls: outcome.verifier_calls,
                                    generator_calls: outcome.generator_calls,
                                    tokens: outcome.total_tokens,
                                    tally_a: None,
                                    tally_b: None,
                                    tie_broken: None,
                                    invalid_votes: None,
                                    winner_index: None,
                                    error: None,
                                },
                                Err(e) => VerdictRecord::failed(id, e.to_string()),
                            }
                        }
                        JudgeMode::RubricFree => {
                            match judge_rubric_free(
                                &example.prompt,
                                &example.response_a,
                                &example.response_b,
                                verifier.as_ref(),
                                inference.verifier_temperature,
                                inference.max_new_tokens,
                                Some(rubric_rm::digest::stream_seed(
                                    seed,
                                    "cli.judge.rubric_free",
                                    &[example.id.as_bytes()],
                                )),
                            )
                            .await
                            {
                                Ok((verdict, tokens)) => VerdictRecord {
                                    id,
                                    final_answer: Some(verdict.answer),
                                    assessment: None,
                                    fallback_used: false,
                                    verifier_calls: 1,
                                    generator_calls: 0,
                                    tokens,
                                    tally_a: None,
                                    tally_b: None,
                                    tie_broken: None,
                                    invalid_votes: None,
                                    winner_index: None,
                                    error: None,
                                },
                                Err(e) => VerdictRecord::failed(id, e.to_string()),
                            }
                        }
                        JudgeMode::Vote => {
                            match vote_rubric_free(
                                &example.prompt,
                                &example.response_a,
                                &example.response_b,
                                verifier.as_ref(),
                                vote_budget,
                                vote_temperature,
                                inference.max_new_tokens,
                                seed,
                            )
                            .await
                            {
                                Ok((vote, tokens, invalid)) => VerdictRecord {
                                    id,
                                    final_answer: Some(vote.winner),
                                    assessment: None,
                                    fallback_used: false,
                                    verifier_calls: vote_budget,
                                    generator_calls: 0,
                                    tokens,
                                    tally_a: Some(vote.tally_a),
                                    tally_b: Some(vote.tally_b),
                                    tie_broken: Some(vote.tie_broken),
                                    invalid_votes: Some(invalid),
                                    winner_index: None,
                                    error: None,
                                },
                                Err(e) => VerdictRecord::failed(id, e.to_string()),
                            }
                        }
                        JudgeMode::BestOfN => unreachable!("handled above"),
                    }
                }
            })
            .await
        }
    };

    let mut writer = if resume {
        RecordWriter::append(out, &ctx.digest)?
    } else {
        RecordWriter::create(out, &ctx.digest)?
    };
    let mut item_errors = 0u32;
    for record in &records {
        writer.write(record)?;
        match &record.error {
            Some(error) => {
                item_errors += 1;
                log.event(
                    "judge.error",
                    serde_json::json!({ "id": record.id, "error": error }),
                );
            }
            None => progress.mark(&record.id)?,
        }
    }
    let written = writer.finish()?;
    log.event(
        "judge.done",
        serde_json::json!({ "written": written, "errors": item_errors }),
    );
    println!(
        "{}",
        serde_json::json!({
            "command": "judge",
            "written": written,
            "errors": item_errors,
            "out": out.display().to_string(),
        })
    );
    Ok(Outcome::from_errors(item_errors))
}
