use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
cohort.n_per_cell = 1
train.steps = 50
train.samples_per_cell = 1
sampler.steps = 5
";

const ECHO: &str = r#"read -r hs; echo "FAIRGEN-PROTO 1"
while IFS= read -r line; do
  case "$line" in
    END) echo END; exit 0 ;;
    "PREDICT "*" "*) set -- $line; echo "RESULT $2 melanoma 1.0" ;;
    *) echo "ERROR malformed" ;;
  esac
done
"#;

fn fairgen(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairgen"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("audit.cfg");
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn default_manifest_has_11200_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = fairgen(dir.path(), &["manifest", "--out", "run"]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert!(stdout(&o).starts_with("11200 rows\n"), "{}", stdout(&o));
    assert!(dir.path().join("run/manifest.jsonl").is_file());
}

#[test]
fn singleton_vocabulary_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cohort.sexes = female\ncohort.age_bands = 50\ncohort.skin_types = III\ncohort.n_per_cell = 1\n",
    );
    let o = fairgen(dir.path(), &["manifest", "--config", &cfg, "--out", "run"]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert!(stdout(&o).starts_with("1 row\n"), "{}", stdout(&o));
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    for text in [
        "cohort.sexes =\n",
        "no.such.key = 1\n",
        "seed = 1\nseed = 2\n",
    ] {
        let cfg = write_config(dir.path(), text);
        let o = fairgen(dir.path(), &["manifest", "--config", &cfg]);
        assert_eq!(o.status.code(), Some(2), "{text}: {o:?}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("error:"));
    }
    let o = fairgen(dir.path(), &["manifest", "--preset", "huge"]);
    assert_eq!(o.status.code(), Some(2));
    let o = fairgen(dir.path(), &["manifest", "--config", "missing.cfg"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn tampered_manifest_exits_with_4_and_missing_checkpoint_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let o = fairgen(dir.path(), &["manifest", "-c", &cfg, "-o", "run"]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");

    let o = fairgen(dir.path(), &["generate", "-c", &cfg, "-o", "run"]);
    assert_eq!(o.status.code(), Some(3), "{o:?}");

    let path = dir.path().join("run/manifest.jsonl");
    let text = fs::read_to_string(&path).unwrap();
    fs::write(
        &path,
        text.replacen("sex=male", "sex=female", 1).replacen(
            "\"sex\":\"male\"",
            "\"sex\":\"female\"",
            1,
        ),
    )
    .unwrap();
    let o = fairgen(dir.path(), &["generate", "-c", &cfg, "-o", "run"]);
    assert_eq!(o.status.code(), Some(4), "{o:?}");
}

#[test]
fn staged_commands_match_a_single_audit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let o = fairgen(
        dir.path(),
        &["audit", "-c", &cfg, "-o", "one", "--workers", "1"],
    );
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert!(stdout(&o).contains("Skin Type"), "{}", stdout(&o));

    for stage in ["train", "manifest", "generate", "evaluate", "report"] {
        let o = fairgen(
            dir.path(),
            &[stage, "-c", &cfg, "-o", "two", "--workers", "2"],
        );
        assert_eq!(o.status.code(), Some(0), "{stage}: {o:?}");
    }
    for file in [
        "manifest.jsonl",
        "model.ckpt",
        "loss_trace.csv",
        "predictions/planted-skin.jsonl",
    ] {
        let a = fs::read(dir.path().join("one").join(file)).unwrap();
        let b = fs::read(dir.path().join("two").join(file)).unwrap();
        assert!(a == b, "{file} differs");
    }
    let summary = fs::read_to_string(dir.path().join("one/run_summary.json")).unwrap();
    assert!(summary.contains("\"config_hash\""));
}

#[test]
fn conformance_command_reports_per_check() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("echo.sh"), ECHO).unwrap();
    let o = fairgen(
        dir.path(),
        &["conformance", "--command", "sh echo.sh", "--timeout", "5"],
    );
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert_eq!(
        stdout(&o).lines().filter(|l| l.starts_with("PASS")).count(),
        5
    );

    fs::write(
        dir.path().join("mute.sh"),
        "read -r hs; echo 'FAIRGEN-PROTO 1'; cat > /dev/null\n",
    )
    .unwrap();
    let o = fairgen(
        dir.path(),
        &["conformance", "--command", "sh mute.sh", "--timeout", "0.5"],
    );
    assert_ne!(o.status.code(), Some(0), "{o:?}");
}
