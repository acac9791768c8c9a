mod common;

use std::fs;

use common::{code, edit, path_str, read_csv, simulated_study, studies, synthcontrol, text};

const SMALL: &str = "n_donors = 8\nn_pre = 10\nn_post = 4\nnoise_sd = 0.2\neffect = -3.0\nseed = 5\n";

#[test]
fn validate_exit_codes() {
    let good = studies().join("simulated/study.toml");
    let out = synthcontrol(&["validate", "--config", path_str(&good)]);
    assert_eq!(code(&out), 0);
    assert!(text(&out).0.contains("0 violations"));

    let dir = tempfile::tempdir().unwrap();
    let study = simulated_study(dir.path(), SMALL);
    edit(&study, "t0 = 11", "t0 = 30");
    let out = synthcontrol(&["validate", "--config", path_str(&study)]);
    assert_eq!(code(&out), 1);
    assert!(text(&out).1.contains("study rejected"));

    let missing = dir.path().join("nope.toml");
    assert_eq!(code(&synthcontrol(&["validate", "--config", path_str(&missing)])), 2);

    let unknown_key = dir.path().join("bad.toml");
    fs::write(&unknown_key, "[data]\npanels = []\nbogus = 1\n").unwrap();
    let out = synthcontrol(&["validate", "--config", path_str(&unknown_key)]);
    assert_eq!(code(&out), 2);
    assert!(text(&out).1.contains("bogus"), "{:?}", text(&out));

    // the data files of the replication templates are not bundled
    let template = studies().join("replication/gdp.toml");
    assert_eq!(code(&synthcontrol(&["validate", "--config", path_str(&template)])), 2);
}

#[test]
fn bundled_configs_parse() {
    for name in ["simulated/study.toml", "clone/study.toml", "replication/gdp.toml", "replication/institutions.toml"] {
        let path = studies().join(name);
        let bytes = fs::read(&path).unwrap();
        synthcontrol_cli::config::parse_study_config(&path, &bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn fit_writes_consistent_files() {
    let dir = tempfile::tempdir().unwrap();
    let study = simulated_study(dir.path(), SMALL);
    let out_dir = dir.path().join("out");
    let out = synthcontrol(&["fit", "--config", path_str(&study), "--out", path_str(&out_dir)]);
    assert_eq!(code(&out), 0, "{:?}", text(&out));

    let weights = read_csv(&out_dir.join("weights.csv"));
    assert_eq!(weights[0], ["unit", "weight"]);
    assert_eq!(weights.len(), 9);
    let sum: f64 = weights[1..].iter().map(|r| r[1].parse::<f64>().unwrap()).sum();
    assert!((sum - 1.0).abs() <= 1e-9);

    let gaps = read_csv(&out_dir.join("gaps.csv"));
    assert_eq!(gaps[0], ["period", "observed", "synthetic", "gap"]);
    assert_eq!(gaps.len(), 15);
    for r in &gaps[1..] {
        let v: Vec<f64> = r[1..].iter().map(|x| x.parse().unwrap()).collect();
        assert!((v[0] - v[1] - v[2]).abs() <= 1e-9);
    }

    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["donors"], 8);
    assert_eq!(summary["t0"], 11);
    assert_eq!(summary["config_sha256"].as_str().unwrap().len(), 64);
    assert!(fs::read_to_string(out_dir.join("paths.svg")).unwrap().starts_with("<svg"));
    assert_eq!(read_csv(&out_dir.join("balance.csv"))[0], ["predictor", "weight", "treated", "synthetic"]);
}

#[test]
fn clone_study_puts_all_weight_on_the_copy() {
    let dir = tempfile::tempdir().unwrap();
    let out = synthcontrol(&["fit", "--config", path_str(&studies().join("clone/study.toml")), "--out", path_str(dir.path())]);
    assert_eq!(code(&out), 0, "{:?}", text(&out));
    let weights = read_csv(&dir.path().join("weights.csv"));
    let d05: f64 = weights.iter().find(|r| r[0] == "d05").unwrap()[1].parse().unwrap();
    assert!(d05 >= 0.999, "{d05}");
    assert!(weights.iter().all(|r| r[0] != "treated"));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert!(summary["pre_rmspe"].as_f64().unwrap() <= 1e-6);
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let study = simulated_study(dir.path(), SMALL);
    edit(&study, "apply_inclusion_filter = true", "apply_inclusion_filter = false");
    let run = |name: &str, jobs: &str| {
        let out_dir = dir.path().join(name);
        let out = synthcontrol(&["placebo", "--config", path_str(&study), "--out", path_str(&out_dir), "--jobs", jobs]);
        assert_eq!(code(&out), 0, "{:?}", text(&out));
        out_dir
    };
    let a = run("a", "1");
    let b = run("b", "1");
    let c = run("c", "4");
    for file in ["weights.csv", "gaps.csv", "pvalues.csv", "placebo_gaps.csv", "exclusions.csv", "summary.json", "paths.svg"] {
        let first = fs::read(a.join(file)).unwrap();
        assert_eq!(first, fs::read(b.join(file)).unwrap(), "{file} differs between runs");
        assert_eq!(first, fs::read(c.join(file)).unwrap(), "{file} differs between --jobs 1 and 4");
    }
}

#[test]
fn large_effect_has_zero_p_value() {
    let dir = tempfile::tempdir().unwrap();
    let study = simulated_study(dir.path(), "n_donors = 10\nn_pre = 10\nn_post = 3\nnoise_sd = 0.1\neffect = -40.0\nseed = 3\n");
    edit(&study, "apply_inclusion_filter = true", "apply_inclusion_filter = false");
    let out = synthcontrol(&["placebo", "--config", path_str(&study), "--out", path_str(dir.path())]);
    assert_eq!(code(&out), 0, "{:?}", text(&out));
    let p = read_csv(&dir.path().join("pvalues.csv"));
    assert_eq!(p[0], ["period", "p", "numerator", "denominator"]);
    assert_eq!(p.len(), 4);
    for row in &p[1..] {
        assert_eq!(row[1], "0");
        assert_eq!(row[2], "0");
    }
    let exclusions = read_csv(&dir.path().join("exclusions.csv"));
    assert_eq!(exclusions.len(), 11);
    for row in &exclusions[1..] {
        let ratio: f64 = row[2].parse().unwrap();
        let expected = if ratio > 4.0 { ("excluded", "mspe>4x") } else { ("included", "") };
        assert_eq!((row[3].as_str(), row[4].as_str()), expected, "{row:?}");
    }
}

#[test]
fn discard_filter_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let study = simulated_study(dir.path(), SMALL);
    edit(&study, "apply_inclusion_filter = true", "apply_inclusion_filter = false");
    edit(&study, "mspe_discard_ratio = 4.0", "mspe_discard_ratio = 1.5");
    let out = synthcontrol(&["placebo", "--config", path_str(&study), "--out", path_str(dir.path())]);
    assert_eq!(code(&out), 0, "{:?}", text(&out));
    let exclusions = read_csv(&dir.path().join("exclusions.csv"));
    let excluded: Vec<&Vec<String>> = exclusions[1..].iter().filter(|r| r[3] == "excluded").collect();
    assert!(!excluded.is_empty());
    assert!(excluded.iter().all(|r| r[4] == "mspe>1.5x"));
    let included = exclusions.len() - 1 - excluded.len();
    let p = read_csv(&dir.path().join("pvalues.csv"));
    assert_eq!(p[1][3], included.to_string());
}

#[test]
fn perfect_fit_leaves_no_reference_placebos() {
    let dir = tempfile::tempdir().unwrap();
    let out = synthcontrol(&["placebo", "--config", path_str(&studies().join("clone/study.toml")), "--out", path_str(dir.path())]);
    assert_eq!(code(&out), 1);
    let (_, err) = text(&out);
    assert!(err.contains("empty reference distribution"), "{err}");
    assert!(err.contains("mspe>"), "{err}");
}

#[test]
fn robustness_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let study = simulated_study(dir.path(), SMALL);
    let donors: Vec<String> = (1..=8).map(|j| format!("\"d{j:02}\"")).collect();
    let mut text_cfg = fs::read_to_string(&study).unwrap();
    text_cfg.push_str(&format!(
        "\n[robustness]\nmode = \"frozen-v\"\nin_time = [7, 11]\n\n[[robustness.pools]]\nname = \"full\"\nkeep = [{}]\n",
        donors.join(", ")
    ));
    fs::write(&study, text_cfg).unwrap();
    let out = synthcontrol(&["robustness", "--config", path_str(&study), "--out", path_str(dir.path())]);
    assert_eq!(code(&out), 0, "{:?}", text(&out));
    let dir = dir.path().join("robustness");
    let ranking = read_csv(&dir.join("ranking.csv"));
    assert_eq!(ranking[0][..3], ["rank", "variant", "status"]);
    let row = |label: &str| ranking.iter().find(|r| r[1] == label).unwrap_or_else(|| panic!("{label} missing"));
    let full = row("pool:full");
    assert_eq!((full[2].as_str(), full[4].as_str(), full[8].as_str()), ("ok", "0", "0"));
    assert_eq!(row("in-time:11")[2], "infeasible");
    assert_eq!(row("in-time:7")[2], "ok");
    assert!(ranking.iter().any(|r| r[1].starts_with("leave-one-out:")));
    assert!(dir.join("baseline_weights.csv").exists());
    assert!(dir.join("pool_full_weights.csv").exists());
    assert!(dir.join("in-time_7.csv").exists());
}

#[test]
fn simulate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let design = "n_donors = 20\nn_pre = 15\nn_post = 10\neffect = -5.0\nseed = 11\n";
    let study = simulated_study(dir.path(), design);
    let first = fs::read(dir.path().join("panel.csv")).unwrap();
    simulated_study(dir.path(), design);
    assert_eq!(first, fs::read(dir.path().join("panel.csv")).unwrap());

    let out = synthcontrol(&["fit", "--config", path_str(&study), "--out", path_str(&dir.path().join("fit"))]);
    assert_eq!(code(&out), 0, "{:?}", text(&out));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("fit/summary.json")).unwrap()).unwrap();
    let att = summary["att"].as_f64().unwrap();
    assert!((att + 5.0).abs() <= 1e-6, "att {att}");

    let other = dir.path().join("other");
    fs::create_dir(&other).unwrap();
    let design_path = dir.path().join("design.toml");
    let out = synthcontrol(&["simulate", "--config", path_str(&design_path), "--out", path_str(&other), "--seed", "12"]);
    assert_eq!(code(&out), 0);
    assert_ne!(first, fs::read(other.join("panel.csv")).unwrap());
}
