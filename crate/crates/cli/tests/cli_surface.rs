//! Drive every CLI path not already exercised by the acceptance suite:
//! vote and best-of-n judging, preference-pair and rejection emission, and
//! the mix/delta/quality/latency/consistent metrics.

use std::path::Path;
use std::process::{Command, Stdio};

use rubric_rm::mock_oracle::{Script, ScriptResponse};
use rubric_rm::prompts::{
    render_quality_eval, render_rubric_augmented, render_rubric_free,
};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_rubric-rm")
}

fn write_config(dir: &Path, extra: &str) {
    std::fs::write(
        dir.join("run.toml"),
        format!(
            r#"seed = 9
concurrency = 2

[endpoints.generator]
base_address = "mock://generator.json"
model_id = "g"

[endpoints.verifier]
base_address = "mock://verifier.json"
model_id = "v"
supports_logprobs = true

[endpoints.scorer]
base_address = "mock://scorer.json"
model_id = "s"

[endpoints.policy]
base_address = "mock://policy.json"
model_id = "p"
{extra}"#
        ),
    )
    .unwrap();
}

fn run_ok(dir: &Path, args: &[&str]) -> String {
    let output = Command::new(bin())
        .current_dir(dir)
        .args(args)
        .stderr(Stdio::null())
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "rubric-rm {args:?} exited {:?}: {}",
        output.status.code(),
        String::from_utf8_lossy(&output.stdout),
    );
    String::from_utf8(output.stdout).unwrap()
}

fn free_verdict(answer: &str, tokens: u64) -> ScriptResponse {
    ScriptResponse::new(format!("<analyze>x</analyze><answer>{answer}</answer>"), tokens)
}

/// Verifier entries covering every ordered presentation of `candidates`,
/// always preferring the lexicographically smaller text.
fn pairwise_min_judge_script(prompt: &str, candidates: &[String]) -> Script {
    let mut script = Script::new();
    for a in candidates {
        for b in candidates {
            if a == b {
                continue;
            }
            let rendered = render_rubric_free(prompt, a, b).unwrap();
            let answer = if a < b { "A" } else { "B" };
            script.push_for_prompt(&rendered.text, vec![free_verdict(answer, 5)]);
        }
    }
    script
}

#[test]
fn judge_vote_mode_folds_majority() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "");
    std::fs::write(
        dir.path().join("examples.jsonl"),
        "{\"id\":\"v1\",\"prompt\":\"q\",\"response_a\":\"a\",\"response_b\":\"b\",\"gold\":\"A\"}\n",
    )
    .unwrap();

    let rendered = render_rubric_free("q", "a", "b").unwrap();
    let mut verifier = Script::new();
    // 5 votes cycle: A, A, B, A, A -> 4:1.
    verifier.push_for_prompt(
        &rendered.text,
        vec![
            free_verdict("A", 5),
            free_verdict("A", 5),
            free_verdict("B", 5),
        ],
    );
    verifier.save(&dir.path().join("verifier.json")).unwrap();
    Script::new().save(&dir.path().join("generator.json")).unwrap();
    Script::new().save(&dir.path().join("scorer.json")).unwrap();
    Script::new().save(&dir.path().join("policy.json")).unwrap();

    run_ok(
        dir.path(),
        &[
            "--config", "run.toml", "judge", "--mode", "vote", "--input", "examples.jsonl",
            "--out", "verdicts.jsonl", "--votes", "5",
        ],
    );
    let line = std::fs::read_to_string(dir.path().join("verdicts.jsonl")).unwrap();
    let record: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    assert_eq!(record["final_answer"], serde_json::json!("A"));
    assert_eq!(record["tally_a"], serde_json::json!(4));
    assert_eq!(record["tally_b"], serde_json::json!(1));
    assert_eq!(record["verifier_calls"], serde_json::json!(5));
}

#[test]
fn judge_best_of_n_reports_champion() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "");
    let candidates: Vec<String> = (0..4).map(|i| format!("cand{i}")).collect();
    std::fs::write(
        dir.path().join("sets.jsonl"),
        serde_json::json!({"id": "s1", "prompt": "pick", "candidates": candidates}).to_string() + "\n",
    )
    .unwrap();

    pairwise_min_judge_script("pick", &candidates)
        .save(&dir.path().join("verifier.json"))
        .unwrap();
    Script::new().save(&dir.path().join("generator.json")).unwrap();
    Script::new().save(&dir.path().join("scorer.json")).unwrap();
    Script::new().save(&dir.path().join("policy.json")).unwrap();

    run_ok(
        dir.path(),
        &[
            "--config", "run.toml", "judge", "--mode", "best-of-n", "--input", "sets.jsonl",
            "--out", "winners.jsonl", "--judge", "rubric-free",
        ],
    );
    let line = std::fs::read_to_string(dir.path().join("winners.jsonl")).unwrap();
    let record: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    assert_eq!(record["winner_index"], serde_json::json!(0));
    assert_eq!(record["verifier_calls"], serde_json::json!(3)); // n-1 matches
}

#[test]
fn emit_pref_pairs_and_rejection_from_policy_samples() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "");
    std::fs::write(dir.path().join("prompts.jsonl"), "{\"prompt\":\"write a haiku\"}\n").unwrap();

    let candidates: Vec<String> = (0..4).map(|i| format!("poem {i}")).collect();
    let mut policy = Script::new();
    policy.push_for_prompt(
        "write a haiku",
        candidates.iter().map(|c| ScriptResponse::new(c.clone(), 7)).collect(),
    );
    // Two commands sample independently; digest entries are reusable.
    policy.save(&dir.path().join("policy.json")).unwrap();
    pairwise_min_judge_script("write a haiku", &candidates)
        .save(&dir.path().join("verifier.json"))
        .unwrap();
    Script::new().save(&dir.path().join("generator.json")).unwrap();
    Script::new().save(&dir.path().join("scorer.json")).unwrap();

    let out = run_ok(
        dir.path(),
        &[
            "--config", "run.toml", "emit", "--kind", "pref-pairs", "--input", "prompts.jsonl",
            "--out", "pairs.jsonl", "--n", "4", "--judge", "rubric-free",
        ],
    );
    assert!(out.contains("\"pairs\":1"));
    let line = std::fs::read_to_string(dir.path().join("pairs.jsonl")).unwrap();
    let record: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    assert_eq!(record["chosen_response"], serde_json::json!("poem 0"));
    assert_ne!(record["rejected_response"], record["chosen_response"]);
    let losers = record["provenance"]["first_round_losers"].as_array().unwrap();
    assert!(losers.contains(&record["rejected_index"]));

    run_ok(
        dir.path(),
        &[
            "--config", "run.toml", "emit", "--kind", "rejection", "--input", "prompts.jsonl",
            "--out", "selected.jsonl", "--n", "4", "--judge", "rubric-free",
        ],
    );
    let line = std::fs::read_to_string(dir.path().join("selected.jsonl")).unwrap();
    let record: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    assert_eq!(record["response"], serde_json::json!("poem 0"));
}

#[test]
fn evaluate_consistent_pairwise_and_latency_over_benchmark() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "");
    let mut bench = String::new();
    let mut verifier = Script::new();
    for i in 0..4 {
        let (prompt, chosen, rejected) = (format!("q{i}"), format!("good{i}"), format!("bad{i}"));
        bench.push_str(&format!(
            "{}\n",
            serde_json::json!({
                "id": format!("b{i}"), "prompt": prompt, "chosen": chosen,
                "rejected": [rejected], "subset_tag": "hard",
            })
        ));
        // Content-aware judge: picks the chosen text in either position.
        let both = render_rubric_free(&prompt, &chosen, &rejected).unwrap();
        verifier.push_for_prompt(&both.text, vec![free_verdict("A", 6)]);
        let swapped = render_rubric_free(&prompt, &rejected, &chosen).unwrap();
        verifier.push_for_prompt(&swapped.text, vec![free_verdict("B", 6)]);
    }
    std::fs::write(dir.path().join("bench.jsonl"), bench).unwrap();
    verifier.save(&dir.path().join("verifier.json")).unwrap();
    Script::new().save(&dir.path().join("generator.json")).unwrap();
    Script::new().save(&dir.path().join("scorer.json")).unwrap();
    Script::new().save(&dir.path().join("policy.json")).unwrap();

    run_ok(
        dir.path(),
        &[
            "--config", "run.toml", "evaluate", "--metric", "pairwise", "--input", "bench.jsonl",
            "--out", "pairwise.json", "--judge", "rubric-free", "--order", "both",
        ],
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("pairwise.json")).unwrap())
            .unwrap();
    assert_eq!(report["accuracy"], serde_json::json!(1.0));
    assert_eq!(report["per_order_accuracy"], serde_json::json!([1.0, 1.0]));
    assert!(dir.path().join("pairwise.json.outcomes.jsonl").exists());

    run_ok(
        dir.path(),
        &[
            "--config", "run.toml", "evaluate", "--metric", "consistent", "--input", "bench.jsonl",
            "--out", "consistent.json", "--judge", "rubric-free",
        ],
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("consistent.json")).unwrap())
            .unwrap();
    assert_eq!(report["accuracy"], serde_json::json!(1.0));
    assert_eq!(report["consistency_rate"], serde_json::json!(1.0));

    run_ok(
        dir.path(),
        &[
            "--config", "run.toml", "evaluate", "--metric", "latency", "--input", "bench.jsonl",
            "--out", "latency.json", "--judge", "rubric-free", "--warmup", "1",
        ],
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("latency.json")).unwrap())
            .unwrap();
    assert_eq!(report["measured_items"], serde_json::json!(3));
    assert!(report["mean_ms"].as_f64().unwrap() >= 0.0);
}

#[test]
fn evaluate_mix_follows_assignment() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "");
    let mut pool = String::new();
    let mut verifier = Script::new();
    for i in 0..10 {
        let (prompt, a, b) = (format!("q{i}"), format!("good{i}"), format!("bad{i}"));
        let high = format!("<analyze>use facts</analyze>\n<criteria_1>Helpfulness</criteria_1>\n<rubric_1>Is {i} factual?</rubric_1>");
        let low = format!("<analyze>use vibes</analyze>\n<criteria_1>Safety</criteria_1>\n<rubric_1>Is {i} stylish?</rubric_1>");
        pool.push_str(&format!(
            "{}\n",
            serde_json::json!({
                "id": format!("m{i}"), "prompt": prompt, "response_a": a, "response_b": b,
                "gold": "A", "high_rubric": high, "low_rubric": low,
            })
        ));
        // High rubric steers to the gold answer, low to the wrong one.
        let aug_high = render_rubric_augmented(&prompt, &a, &b, &high).unwrap();
        verifier.push_for_prompt(
            &aug_high.text,
            vec![ScriptResponse::new(
                "<analyze>v</analyze><rubric>helpful</rubric><answer>A</answer>",
                8,
            )],
        );
        let aug_low = render_rubric_augmented(&prompt, &a, &b, &low).unwrap();
        verifier.push_for_prompt(
            &aug_low.text,
            vec![ScriptResponse::new(
                "<analyze>v</analyze><rubric>helpful</rubric><answer>B</answer>",
                8,
            )],
        );
    }
    std::fs::write(dir.path().join("pool.jsonl"), pool).unwrap();
    verifier.save(&dir.path().join("verifier.json")).unwrap();
    Script::new().save(&dir.path().join("generator.json")).unwrap();
    Script::new().save(&dir.path().join("scorer.json")).unwrap();
    Script::new().save(&dir.path().join("policy.json")).unwrap();

    // follow-always: accuracy equals the high-rubric share exactly.
    for (spec, expected) in [("9:1", 0.9), ("5:5", 0.5), ("1:9", 0.1)] {
        let out = format!("mix_{}.json", spec.replace(':', "_"));
        run_ok(
            dir.path(),
            &[
                "--config", "run.toml", "evaluate", "--metric", "mix", "--input", "pool.jsonl",
                "--out", &out, "--mix", spec, "--mix-mode", "follow-always",
            ],
        );
        let report: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(&out)).unwrap()).unwrap();
        assert_eq!(report["accuracy"].as_f64().unwrap(), expected, "{spec}");
        assert_eq!(report["spec"], serde_json::json!(spec));
    }
}

#[test]
fn evaluate_delta_and_quality_with_scripted_scorers() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "");

    // Delta: one example, rubric shifts p(gold) from ~0.6 to ~0.8.
    let (prompt, a, b) = ("q", "good", "bad");
    std::fs::write(
        dir.path().join("examples.jsonl"),
        serde_json::json!({
            "id": "d1", "prompt": prompt, "response_a": a, "response_b": b, "gold": "A",
        })
        .to_string()
            + "\n",
    )
    .unwrap();
    let rubric = "<analyze>aim</analyze>\n<criteria_1>Helpfulness</criteria_1>\n<rubric_1>Useful?</rubric_1>";
    let mut generator = Script::new();
    let gen_prompt =
        rubric_rm::prompts::render_rubric_generation(prompt, a, b).unwrap();
    generator.push_for_prompt(&gen_prompt.text, vec![ScriptResponse::new(rubric, 20)]);
    generator.save(&dir.path().join("generator.json")).unwrap();

    let p_with = 0.8f64;
    let p_without = 0.6f64;
    let lp = |p: f64| (p.ln(), (1.0 - p).ln());
    let mut verifier = Script::new();
    let free = render_rubric_free(prompt, a, b).unwrap();
    let (la, lb) = lp(p_without);
    verifier.push_for_prompt(&free.text, vec![free_verdict("A", 5).with_answer_logprobs(la, lb)]);
    let aug = render_rubric_augmented(prompt, a, b, rubric).unwrap();
    let (la, lb) = lp(p_with);
    verifier.push_for_prompt(
        &aug.text,
        vec![ScriptResponse::new(
            "<analyze>v</analyze><rubric>helpful</rubric><answer>A</answer>",
            5,
        )
        .with_answer_logprobs(la, lb)],
    );
    verifier.save(&dir.path().join("verifier.json")).unwrap();

    // Quality: three rubrics scoring 2, 3, 4.
    let mut quality_inputs = String::new();
    let mut scorer = Script::new();
    for (i, score) in [(0, 2u8), (1, 3), (2, 4)] {
        let rubric_text = format!("rubric body {i}");
        quality_inputs.push_str(&format!(
            "{}\n",
            serde_json::json!({
                "id": format!("r{i}"), "question": "q", "response_a": "a", "response_b": "b",
                "rubric": rubric_text,
            })
        ));
        let rendered = render_quality_eval("q", "a", "b", &rubric_text).unwrap();
        scorer.push_for_prompt(
            &rendered.text,
            vec![ScriptResponse::new(
                format!("<evaluation>ok {i}</evaluation>\n<score>{score}</score>"),
                6,
            )],
        );
    }
    std::fs::write(dir.path().join("rubrics.jsonl"), quality_inputs).unwrap();
    scorer.save(&dir.path().join("scorer.json")).unwrap();
    Script::new().save(&dir.path().join("policy.json")).unwrap();

    run_ok(
        dir.path(),
        &[
            "--config", "run.toml", "evaluate", "--metric", "delta", "--input", "examples.jsonl",
            "--out", "delta.json",
        ],
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("delta.json")).unwrap())
            .unwrap();
    assert_eq!(report["n_examples"], serde_json::json!(1));
    let outcomes = std::fs::read_to_string(dir.path().join("delta.json.outcomes.jsonl")).unwrap();
    let outcome: serde_json::Value = serde_json::from_str(outcomes.lines().next().unwrap()).unwrap();
    let delta = outcome["delta"].as_f64().unwrap();
    assert!((delta - 0.2).abs() < 1e-9, "delta {delta}");
    let mass: u64 = report["histogram"]
        .as_array()
        .unwrap()
        .iter()
        .map(|bin| bin[1].as_u64().unwrap())
        .sum();
    assert_eq!(mass, 1);

    run_ok(
        dir.path(),
        &[
            "--config", "run.toml", "evaluate", "--metric", "quality", "--input", "rubrics.jsonl",
            "--out", "quality.json",
        ],
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("quality.json")).unwrap())
            .unwrap();
    assert_eq!(report["mean"], serde_json::json!(3.0));
    assert_eq!(report["histogram"], serde_json::json!([0, 1, 1, 1, 0]));
    assert_eq!(report["high"], serde_json::json!(1));
    assert_eq!(report["mid"], serde_json::json!(1));
    assert_eq!(report["low"], serde_json::json!(1));
}

#[test]
fn schema_command_prints_embedded_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_ok(dir.path(), &["schema"]);
    let parsed: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(parsed["records"]["grpo_task"].is_object());
    assert!(parsed["records"]["mock_script"].is_object());
}
