//! Command contract checks: exit-code classes, argument validation, and a
//! small end-to-end pipeline through every subcommand.

use clap::Parser;
use scout_cli::{execute, AppError, Cli};
use std::path::Path;

fn run(args: &[&str]) -> Result<(), AppError> {
    let mut argv = vec!["scout"];
    argv.extend_from_slice(args);
    let cli = Cli::try_parse_from(argv).expect("arguments should parse");
    execute(cli)
}

fn exit_code(args: &[&str]) -> i32 {
    match run(args) {
        Ok(()) => 0,
        Err(e) => e.exit_code(),
    }
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

#[test]
fn bad_invocations_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.jsonl");
    let out_s = out.to_str().unwrap();

    assert_eq!(exit_code(&["gen", "--n", "0", "--out", out_s]), 2);

    // a corpus to aim the other commands at
    assert_eq!(exit_code(&["gen", "--n", "2", "--seed", "5", "--out", out_s]), 0);
    let model = dir.path().join("m.json");
    let model_s = model.to_str().unwrap();

    // unknown query class
    assert_eq!(
        exit_code(&[
            "train", "--corpus", out_s, "--query", "nothere", "--iterations", "1",
            "--out-model", model_s,
        ]),
        2
    );
    // background is not a queryable class
    assert_eq!(
        exit_code(&[
            "train", "--corpus", out_s, "--query", "background", "--iterations", "1",
            "--out-model", model_s,
        ]),
        2
    );
    // malformed subset flag
    assert_eq!(
        exit_code(&[
            "train", "--corpus", out_s, "--query", "chair", "--subset", "doptimal:x",
            "--out-model", model_s,
        ]),
        2
    );
    // malformed match mode and method list
    assert_eq!(
        exit_code(&["eval", "--corpus", out_s, "--query", "chair", "--match", "nearest"]),
        2
    );
    assert_eq!(
        exit_code(&["eval", "--corpus", out_s, "--query", "chair", "--match", "iou:1.5"]),
        2
    );
    assert_eq!(
        exit_code(&["eval", "--corpus", out_s, "--query", "chair", "--methods", "sideways"]),
        2
    );
    // the full method without a model or traces
    assert_eq!(
        exit_code(&["eval", "--corpus", out_s, "--query", "chair", "--methods", "full"]),
        2
    );
    // the scene method without a model
    assert_eq!(
        exit_code(&["eval", "--corpus", out_s, "--query", "chair", "--methods", "scene"]),
        2
    );
}

#[test]
fn broken_inputs_exit_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.jsonl");
    let model = dir.path().join("m.json");

    assert_eq!(
        exit_code(&[
            "train", "--corpus", missing.to_str().unwrap(), "--query", "chair",
            "--out-model", model.to_str().unwrap(),
        ]),
        3
    );

    // ragged feature table
    let table = dir.path().join("table.csv");
    write(&table, "id,f1,f2,keep\na,1.0,2.0,1\nb,1.0,0\n");
    assert_eq!(exit_code(&["subset", "--features", table.to_str().unwrap()]), 3);

    // table with no data rows
    write(&table, "id,f1,f2,keep\n# nothing\n");
    assert_eq!(exit_code(&["subset", "--features", table.to_str().unwrap()]), 3);

    // unparsable value past the header line
    write(&table, "id,f1,f2,keep\na,1.0,2.0,1\nb,oops,3.0,0\n");
    assert_eq!(exit_code(&["subset", "--features", table.to_str().unwrap()]), 3);

    // corrupt trace file
    let corpus = dir.path().join("c.jsonl");
    assert_eq!(
        exit_code(&["gen", "--n", "2", "--seed", "5", "--out", corpus.to_str().unwrap()]),
        0
    );
    let traces = dir.path().join("t.jsonl");
    write(&traces, "{not json}\n");
    assert_eq!(
        exit_code(&[
            "eval", "--corpus", corpus.to_str().unwrap(), "--query", "chair",
            "--traces", traces.to_str().unwrap(), "--methods", "full",
        ]),
        3
    );
}

#[test]
fn feature_tables_accept_headers_comments_and_boolean_labels() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("table.csv");
    write(
        &table,
        "id,f1,f2,keep\n# comment line\n\nr1,0.0,0.0,true\nr2,9.0,1.0,false\nr3,1.0,9.0,0\nr4,5.0,5.0,1\n",
    );
    let out = dir.path().join("picked.txt");
    assert_eq!(
        exit_code(&[
            "subset", "--features", table.to_str().unwrap(), "--k", "3",
            "--out", out.to_str().unwrap(),
        ]),
        0
    );
    let text = std::fs::read_to_string(&out).unwrap();
    let ids: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(ids.len(), 3);
    // both labeled rows survive
    assert!(ids.contains(&"r1"));
    assert!(ids.contains(&"r4"));
    assert!(text.lines().any(|l| l.starts_with("# logdet=")));

    // subset size below the labeled-row count is a usage error
    assert_eq!(
        exit_code(&["subset", "--features", table.to_str().unwrap(), "--k", "1"]),
        2
    );
}

#[test]
fn the_full_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    let s = |path: &std::path::PathBuf| path.to_str().unwrap().to_string();

    let config = p("gen.conf");
    write(&config, "classes=chair,table\ntop_k=15\n");
    let corpus = p("corpus.jsonl");
    assert_eq!(
        exit_code(&[
            "gen", "--config", &s(&config), "--n", "10", "--seed", "3", "--out", &s(&corpus),
        ]),
        0
    );
    let lines = std::fs::read_to_string(&corpus).unwrap().lines().count();
    assert_eq!(lines, 10);

    let model_full = p("full.json");
    assert_eq!(
        exit_code(&[
            "train", "--corpus", &s(&corpus), "--config", &s(&config), "--query", "chair",
            "--iterations", "1", "--budget", "6", "--out-model", &s(&model_full),
            "--diagnostics", &s(&p("diag.json")),
        ]),
        0
    );
    assert!(p("diag.json").exists());

    let model_unary = p("unary.json");
    assert_eq!(
        exit_code(&[
            "train", "--corpus", &s(&corpus), "--config", &s(&config), "--query", "chair",
            "--features", "unary", "--iterations", "1", "--budget", "6",
            "--subset", "doptimal", "--out-model", &s(&model_unary),
        ]),
        0
    );

    let traces = p("traces.jsonl");
    assert_eq!(
        exit_code(&[
            "search", "--model", &s(&model_full), "--corpus", &s(&corpus),
            "--config", &s(&config), "--budget", "6", "--out", &s(&traces),
        ]),
        0
    );
    assert_eq!(std::fs::read_to_string(&traces).unwrap().lines().count(), 10);

    let csv = p("curves.csv");
    assert_eq!(
        exit_code(&[
            "eval", "--corpus", &s(&corpus), "--config", &s(&config), "--query", "chair",
            "--interval", "5", "--model-full", &s(&model_full),
            "--model-unary", &s(&model_unary), "--out", &s(&csv),
        ]),
        0
    );
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("method,query_class,regions_processed,ap"));
    let rows: Vec<&str> = lines.collect();
    // three methods, budgets 5/10/15
    assert_eq!(rows.len(), 9);
    assert!(rows.iter().all(|r| r.split(',').count() == 4));
    for method in ["proposal_rank", "scene_context", "scene_plus_objects"] {
        assert_eq!(rows.iter().filter(|r| r.starts_with(method)).count(), 3);
    }

    // replaying recorded traces matches a capped fresh evaluation
    let replay = p("replay.csv");
    assert_eq!(
        exit_code(&[
            "eval", "--corpus", &s(&corpus), "--config", &s(&config), "--query", "chair",
            "--interval", "3", "--budget-max", "6", "--traces", &s(&traces),
            "--methods", "full", "--out", &s(&replay),
        ]),
        0
    );
    let direct = p("direct.csv");
    assert_eq!(
        exit_code(&[
            "eval", "--corpus", &s(&corpus), "--config", &s(&config), "--query", "chair",
            "--interval", "3", "--budget-max", "6", "--model-full", &s(&model_full),
            "--methods", "full", "--out", &s(&direct),
        ]),
        0
    );
    assert_eq!(
        std::fs::read_to_string(&replay).unwrap(),
        std::fs::read_to_string(&direct).unwrap()
    );

    // model with a stored query class works without --query
    let traces2 = p("traces2.jsonl");
    assert_eq!(
        exit_code(&[
            "search", "--model", &s(&model_full), "--corpus", &s(&corpus),
            "--config", &s(&config), "--budget", "4", "--out", &s(&traces2),
        ]),
        0
    );
}
