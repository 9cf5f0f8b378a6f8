use std::path::Path;
use std::process::Command;

const MODEL: &str = r#"{"family": {"eta": {"re": 4}, "a": [{"i": 0, "j": 0, "k": 0, "re": 1}]}}"#;

fn implab(args: &[&str], config: &Path, out: &Path) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_implab"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .expect("running implab")
        .status
        .code()
        .unwrap_or(-1)
}

fn with_config(text: &str, f: impl FnOnce(&Path, &Path)) {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, text).unwrap();
    f(&config, &dir.path().join("out"));
}

#[test]
fn malformed_json_exits_2() {
    for text in ["", "{", "[]", r#"{"family": 3}"#, r#"{"family": {"eta": {"re": 4}}, "extra": true}"#] {
        with_config(text, |cfg, out| assert_eq!(implab(&["validate"], cfg, out), 2, "{text}"));
    }
}

#[test]
fn unknown_subcommand_exits_2() {
    with_config(MODEL, |cfg, out| assert_eq!(implab(&["bogus"], cfg, out), 2));
}

#[test]
fn eta_two_is_a_hypothesis_violation() {
    let text = r#"{"family": {"eta": {"re": 2}, "a": [{"i": 0, "j": 0, "k": 0, "re": 1}]}}"#;
    with_config(text, |cfg, out| {
        assert_eq!(implab(&["validate"], cfg, out), 3);
        let report = std::fs::read_to_string(out.join("validate.csv")).unwrap();
        assert!(report.lines().any(|l| l.starts_with("Re eta>3,FAIL")), "{report}");
        assert_eq!(implab(&["fatou"], cfg, out), 3);
    });
}

#[test]
fn model_validates_and_writes_fixed_points() {
    with_config(MODEL, |cfg, out| {
        assert_eq!(implab(&["validate"], cfg, out), 0);
        assert_eq!(implab(&["fixed-points", "--threads", "1"], cfg, out), 0);
        let csv = std::fs::read_to_string(out.join("fixed_points.csv")).unwrap();
        assert!(csv.starts_with("eps,x_re,x_im,y_re,y_im,"));
        assert!(!csv.contains('\r'));
        assert_eq!(csv.lines().count(), 1 + 2 * 3);
    });
}

#[test]
fn basin_render_with_tiny_budget_exits_4() {
    let text = r#"{"family": {"eta": {"re": 4}, "a": [{"i": 0, "j": 0, "k": 0, "re": 1}]},
                   "render": {"width": 4, "height": 4, "budget": 1, "window": [-0.02, 0.02, -0.4, 0.4]}}"#;
    with_config(text, |cfg, out| {
        assert_eq!(implab(&["render", "basin"], cfg, out), 4);
        let img = std::fs::read(out.join("render_basin.ppm")).unwrap();
        assert!(img.starts_with(b"P6\n#"));
    });
}
