//! External classifiers driven through shell fixtures.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use fairgen_core::adapters::{
    classify_batch, run_conformance, write_png, AdapterError, ClassifierHandle, ClassifierKind,
    ExternalCommand,
};
use fairgen_core::cohort::{build_manifest, CohortSpec, Manifest};

/// Answers every request with `melanoma 1.0`; anything else gets `ERROR`.
const ECHO: &str = r#"
read -r hs
[ "$hs" = "FAIRGEN-PROTO 1" ] || exit 3
echo "FAIRGEN-PROTO 1"
while IFS= read -r line; do
  case "$line" in
    END) echo END; exit 0 ;;
    "PREDICT "*" "*)
      rest=${line#PREDICT }
      id=${rest%% *}
      path=${rest#* }
      if [ -f "$path" ]; then echo "RESULT $id melanoma 1.0"; else echo "RESULT $id error 0"; fi ;;
    *) echo "ERROR malformed request" ;;
  esac
done
"#;

struct Fixture {
    dir: tempfile::TempDir,
    manifest: Manifest,
    images: Vec<PathBuf>,
}

fn fixture(n_per_cell: u32, image_dir: &str) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let manifest = build_manifest(&CohortSpec {
        n_per_cell,
        ..CohortSpec::default()
    })
    .unwrap();
    let img_dir = dir.path().join(image_dir);
    std::fs::create_dir_all(&img_dir).unwrap();
    let images = manifest
        .rows
        .iter()
        .map(|r| {
            let p = img_dir.join(format!("{}.png", r.sample_id));
            write_png(&p, &[0.5; 16], 4).unwrap();
            p
        })
        .collect();
    Fixture {
        dir,
        manifest,
        images,
    }
}

fn script(dir: &Path, name: &str, body: &str) -> ExternalCommand {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    let mut cmd = ExternalCommand::new(format!("sh '{}'", path.display()));
    cmd.timeout = Duration::from_secs(10);
    cmd
}

fn handle(cmd: ExternalCommand) -> ClassifierHandle {
    ClassifierHandle {
        name: "ext".into(),
        kind: ClassifierKind::External(cmd),
    }
}

fn run(
    f: &Fixture,
    cmd: ExternalCommand,
) -> Result<Vec<fairgen_core::adapters::PredictionRecord>, AdapterError> {
    classify_batch(
        &handle(cmd),
        f.manifest.vocabulary(),
        &f.manifest.rows,
        &f.images,
    )
}

#[test]
fn echo_classifier_answers_every_row_in_manifest_order() {
    // 336 rows: more than one request chunk.
    let f = fixture(3, "images");
    let cmd = script(f.dir.path(), "echo.sh", ECHO);
    let records = run(&f, cmd).unwrap();
    assert_eq!(records.len(), 336);
    for (row, rec) in f.manifest.rows.iter().zip(&records) {
        assert_eq!(rec.sample_id, row.sample_id);
        assert_eq!(rec.predicted_label, "melanoma");
        assert_eq!(rec.score, 1.0);
    }
}

#[test]
fn image_paths_may_contain_spaces() {
    let f = fixture(1, "with spaces");
    let cmd = script(f.dir.path(), "echo.sh", ECHO);
    let records = run(&f, cmd).unwrap();
    assert!(records.iter().all(|r| r.predicted_label == "melanoma"));
}

#[test]
fn echo_classifier_passes_conformance() {
    let dir = tempfile::tempdir().unwrap();
    let cmd = script(dir.path(), "echo.sh", ECHO);
    let report = run_conformance(&cmd, &dir.path().join("scratch")).unwrap();
    let text = report.to_string();
    assert!(report.passed(), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 5);
}

#[test]
fn conformance_flags_a_classifier_that_ignores_malformed_lines() {
    let dir = tempfile::tempdir().unwrap();
    let lax = ECHO.replace(r#"*) echo "ERROR malformed request" ;;"#, "*) ;;");
    let mut cmd = script(dir.path(), "lax.sh", &lax);
    cmd.timeout = Duration::from_millis(500);
    let report = run_conformance(&cmd, &dir.path().join("scratch")).unwrap();
    assert!(!report.passed());
    assert!(report
        .to_string()
        .contains("FAIL malformed request answered with ERROR"));
}

#[test]
fn missing_image_is_reported_before_spawning() {
    let mut f = fixture(1, "images");
    f.images[5] = f.dir.path().join("nope.png");
    let cmd = script(f.dir.path(), "never.sh", "touch spawned\n");
    match run(&f, cmd) {
        Err(AdapterError::MissingImage { sample_id, .. }) => {
            assert_eq!(sample_id, f.manifest.rows[5].sample_id)
        }
        other => panic!("{other:?}"),
    }
    assert!(!f.dir.path().join("spawned").exists());
}

#[test]
fn truncated_output_names_the_missing_rows() {
    let f = fixture(1, "images");
    let body = r#"
read -r hs; echo "FAIRGEN-PROTO 1"
n=0
while IFS= read -r line; do
  n=$((n+1))
  if [ $n -le 3 ]; then set -- $line; echo "RESULT $2 melanoma 0.9"; else exit 0; fi
done
"#;
    match run(&f, script(f.dir.path(), "trunc.sh", body)) {
        Err(AdapterError::Missing { sample_id, missing }) => {
            assert_eq!(sample_id, f.manifest.rows[3].sample_id);
            assert_eq!(missing, 109);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn malformed_and_unknown_responses_are_rejected() {
    let f = fixture(1, "images");
    let cases = [
        ("RESULT $2 melanoma", "malformed"),
        ("RESULT $2 melanoma 1.5", "malformed"),
        ("RESULT $2 melanoma abc", "malformed"),
        ("RESULT x$2 melanoma 0.5", "unknown"),
        ("ERROR cannot load model", "remote"),
    ];
    for (reply, want) in cases {
        let body = format!(
            "read -r hs; echo \"FAIRGEN-PROTO 1\"\nwhile IFS= read -r line; do set -- $line; echo \"{reply}\"; done\n"
        );
        let err = run(&f, script(f.dir.path(), "bad.sh", &body)).unwrap_err();
        let ok = match (want, &err) {
            ("malformed", AdapterError::Malformed { .. }) => true,
            ("unknown", AdapterError::UnknownId { .. }) => true,
            ("remote", AdapterError::Remote { message }) => message == "cannot load model",
            _ => false,
        };
        assert!(ok, "{reply}: {err:?}");
    }
}

#[test]
fn duplicate_responses_are_rejected() {
    let f = fixture(1, "images");
    let body = "read -r hs; echo \"FAIRGEN-PROTO 1\"\nwhile IFS= read -r line; do set -- $line; echo \"RESULT $2 melanoma 1\"; echo \"RESULT $2 melanoma 1\"; done\n";
    let err = run(&f, script(f.dir.path(), "dup.sh", body)).unwrap_err();
    assert!(matches!(err, AdapterError::DuplicateId { .. }), "{err:?}");
}

#[test]
fn out_of_order_responses_within_a_chunk_are_accepted() {
    let f = fixture(1, "images");
    // Buffers all 112 requests (one chunk), then answers in reverse.
    let body = r#"
read -r hs; echo "FAIRGEN-PROTO 1"
ids=""
n=0
while IFS= read -r line; do
  [ "$line" = END ] && { echo END; exit 0; }
  set -- $line
  ids="$2 $ids"; n=$((n+1))
  if [ $n -eq 112 ]; then for i in $ids; do echo "RESULT $i melanoma 0.7"; done; fi
done
"#;
    let records = run(&f, script(f.dir.path(), "rev.sh", body)).unwrap();
    for (row, rec) in f.manifest.rows.iter().zip(&records) {
        assert_eq!(rec.sample_id, row.sample_id);
    }
}

#[test]
fn silent_classifier_times_out_and_is_killed() {
    let f = fixture(1, "images");
    let mut cmd = script(
        f.dir.path(),
        "slow.sh",
        "read -r hs; echo \"FAIRGEN-PROTO 1\"\nsleep 30\n",
    );
    cmd.timeout = Duration::from_millis(500);
    let start = Instant::now();
    let err = run(&f, cmd).unwrap_err();
    assert!(matches!(err, AdapterError::Timeout { .. }), "{err:?}");
    assert!(
        start.elapsed() < Duration::from_secs(10),
        "{:?}",
        start.elapsed()
    );
}

#[test]
fn failed_start_and_bad_exit_status_are_errors() {
    let f = fixture(1, "images");
    let err = run(
        &f,
        script(f.dir.path(), "dead.sh", "echo 'no weights' >&2; exit 7\n"),
    )
    .unwrap_err();
    assert!(
        matches!(
            err,
            AdapterError::Handshake { line: None } | AdapterError::Pipe(_)
        ),
        "{err:?}"
    );

    let body = ECHO.replace(
        "END) echo END; exit 0 ;;",
        "END) echo END; echo oops >&2; exit 5 ;;",
    );
    match run(&f, script(f.dir.path(), "exit5.sh", &body)) {
        Err(AdapterError::Exit { status, stderr }) => {
            assert!(status.contains('5'), "{status}");
            assert!(stderr.contains("oops"), "{stderr}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn wrong_handshake_is_rejected() {
    let f = fixture(1, "images");
    let err = run(
        &f,
        script(
            f.dir.path(),
            "v2.sh",
            "read -r hs; echo 'FAIRGEN-PROTO 2'\n",
        ),
    )
    .unwrap_err();
    match err {
        AdapterError::Handshake { line } => assert_eq!(line.as_deref(), Some("FAIRGEN-PROTO 2")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn unreadable_image_reported_as_error_label_is_a_wrong_prediction() {
    let f = fixture(1, "images");
    std::fs::remove_file(&f.images[0]).unwrap();
    std::fs::create_dir(&f.images[0]).unwrap_or(());
    // classify_batch requires regular files; call the command directly.
    let cmd = script(f.dir.path(), "echo.sh", ECHO);
    let records = cmd.classify(&f.manifest.rows, &f.images).unwrap();
    assert_eq!(records[0].predicted_label, "error");
    assert_eq!(records[0].score, 0.0);
    assert_eq!(records[1].predicted_label, "melanoma");
}
