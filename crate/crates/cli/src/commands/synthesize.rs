//! `synthesize`: contrastive rubric pairs for every input example.

use std::path::Path;

use rubric_rm::exec::map_concurrent;
use rubric_rm::records::{ProgressLog, RecordWriter};
use rubric_rm::synthesis::{synthesize, PreferenceExample, SynthesisRecord};

use super::{Context_, Outcome};
use crate::runlog::RunLog;

pub async fn run(ctx: &Context_, input: &Path, out: &Path, resume: bool) -> anyhow::Result<Outcome> {
    let log = RunLog::beside(out);
    let mut examples: Vec<PreferenceExample> = super::read_input(input)?;
    examples.sort_by(|a, b| a.id.cmp(&b.id));
    let total = examples.len();
    {
        let mut ids: Vec<&str> = examples.iter().map(|e| e.id.as_str()).collect();
        ids.dedup();
        anyhow::ensure!(ids.len() == total, "example ids must be unique within {}", input.display());
    }

    let progress = ProgressLog::for_output(out);
    let completed = if resume {
        progress.completed()?
    } else {
        progress.clear()?;
        Default::default()
    };
    let pending: Vec<PreferenceExample> = examples
        .into_iter()
        .filter(|e| !completed.contains(&e.id))
        .collect();
    log.event(
        "synthesize.start",
        serde_json::json!({
            "input": input.display().to_string(),
            "total": total,
            "pending": pending.len(),
            "resume": resume,
            "config_digest": ctx.digest,
        }),
    );
    log.progress(&format!(
        "synthesizing {} example(s) ({} already complete)",
        pending.len(),
        total - pending.len()
    ));

    let generator = ctx.config.build_oracle("generator")?;
    let verifier = ctx.config.build_oracle("verifier")?;
    let params = ctx.config.synthesis.params(ctx.config.seed);

    let results: Vec<(String, Result<SynthesisRecord, String>)> =
        map_concurrent(pending, ctx.config.concurrency(), |example| {
            let generator = generator.clone();
            let verifier = verifier.clone();
            async move {
                let id = example.id.clone();
                let outcome = synthesize(&example, generator.as_ref(), verifier.as_ref(), &params)
                    .await
                    .map_err(|e| e.to_string());
                (id, outcome)
            }
        })
        .await;

    let mut writer = if resume {
        RecordWriter::append(out, &ctx.digest)?
    } else {
        RecordWriter::create(out, &ctx.digest)?
    };
    let mut paired = 0u64;
    let mut discarded = 0u64;
    let mut item_errors = 0u32;
    for (id, outcome) in results {
        match outcome {
            Ok(record) => {
                if record.is_paired() {
                    paired += 1;
                } else {
                    discarded += 1;
                }
                writer.write(&record)?;
                progress.mark(&id)?;
                log.event(
                    "synthesize.example",
                    serde_json::json!({
                        "id": id,
                        "status": if record.is_paired() { "paired" } else { "discarded" },
                        "rounds_used": record.rounds_used,
                    }),
                );
            }
            Err(error) => {
                // Not marked complete: a resume retries this example.
                item_errors += 1;
                log.event(
                    "synthesize.error",
                    serde_json::json!({ "id": id, "error": error }),
                );
            }
        }
    }
    let written = writer.finish()?;

    log.event(
        "synthesize.done",
        serde_json::json!({
            "written": written,
            "paired": paired,
            "discarded": discarded,
            "errors": item_errors,
        }),
    );
    log.progress(&format!(
        "wrote {written} record(s): {paired} paired, {discarded} discarded, {item_errors} failed"
    ));
    println!(
        "{}",
        serde_json::json!({
            "command": "synthesize",
            "written": written,
            "paired": paired,
            "discarded": discarded,
            "errors": item_errors,
            "out": out.display().to_string(),
        })
    );

    // Survival bookkeeping must close: every pending example is accounted.
    let processed = paired + discarded + u64::from(item_errors);
    anyhow::ensure!(
        processed + completed.len() as u64 == total as u64,
        "bookkeeping mismatch: {processed} processed + {} completed != {total}",
        completed.len()
    );
    Ok(Outcome::from_errors(item_errors))
}
