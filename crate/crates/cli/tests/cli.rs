//! End-to-end checks of the binary: staged commands chained through files
//! must reproduce the fused `study` run number-for-number, and exit codes
//! must reflect replicate outcomes.

use std::path::Path;
use std::process::{Command, Output};

use microsdc::study::{smoke_population_spec, StudyConfig, SynthesisOptions};
use microsdc::ForestParams;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_microsdc"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "command failed: {:?}\nstdout: {}\nstderr: {}",
        cmd,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

/// Rows of a CSV filtered to `survey_type == label`, with the replicate and
/// survey_type columns stripped so staged output can be compared directly.
fn fused_rows(csv: &str, label: &str) -> Vec<String> {
    csv.lines()
        .skip(1)
        .filter_map(|line| {
            let (replicate, rest) = line.split_once(',')?;
            let (ty, rest) = rest.split_once(',')?;
            (replicate == "0" && ty == label).then(|| rest.to_string())
        })
        .collect()
}

#[test]
fn staged_commands_reproduce_the_fused_study() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path();
    let spec = smoke_population_spec();
    let spec_path = base.join("pop_spec.json");
    std::fs::write(&spec_path, serde_json::to_string(&spec).unwrap()).unwrap();
    let constraints_path = base.join("constraints.json");
    std::fs::write(
        &constraints_path,
        serde_json::to_string(&spec.constraints).unwrap(),
    )
    .unwrap();

    // Fused run: one replicate, intermediates kept for comparison.
    let fused = base.join("fused");
    let config = StudyConfig {
        replicates: 1,
        master_seed: 5,
        population_spec: Some(spec_path.clone()),
        attack: ForestParams {
            n_trees: 20,
            ..Default::default()
        },
        synthesis: SynthesisOptions::default(),
        output_dir: fused.clone(),
        keep_intermediates: true,
        ..Default::default()
    };
    let config_path = base.join("study.json");
    std::fs::write(&config_path, serde_json::to_string(&config).unwrap()).unwrap();
    run_ok(bin().args(["study", "--config"]).arg(&config_path));

    // Staged run with the same seed and replicate streams.
    let staged = base.join("staged");
    std::fs::create_dir_all(&staged).unwrap();
    run_ok(
        bin()
            .args(["popgen", "--seed", "5", "--spec"])
            .arg(&spec_path)
            .arg("--out")
            .arg(&staged),
    );
    assert_eq!(
        read(&staged.join("population.csv")),
        read(&fused.join("population.csv")),
        "staged population differs from the fused run"
    );
    assert_eq!(
        read(&staged.join("geography.geojson")),
        read(&fused.join("geography.geojson"))
    );

    run_ok(
        bin()
            .args(["sample", "--seed", "5", "--replicate", "0", "--population"])
            .arg(staged.join("population.csv"))
            .arg("--out")
            .arg(staged.join("true.csv")),
    );
    assert_eq!(
        read(&staged.join("true.csv")),
        read(&fused.join("reps/rep000/true.csv"))
    );

    run_ok(
        bin()
            .args(["geomask", "--seed", "5", "--replicate", "0", "--survey"])
            .arg(staged.join("true.csv"))
            .arg("--geography")
            .arg(staged.join("geography.geojson"))
            .arg("--out")
            .arg(staged.join("geomasked.csv")),
    );
    assert_eq!(
        read(&staged.join("geomasked.csv")),
        read(&fused.join("reps/rep000/geomasked.csv"))
    );

    run_ok(
        bin()
            .args(["synthesize", "--seed", "5", "--replicate", "0", "--survey"])
            .arg(staged.join("true.csv"))
            .arg("--constraints")
            .arg(&constraints_path)
            .arg("--out")
            .arg(staged.join("synthetic.csv")),
    );
    assert_eq!(
        read(&staged.join("synthetic.csv")),
        read(&fused.join("reps/rep000/synthetic.csv")),
        "synthesize stage does not reproduce the fused synthetic survey"
    );

    // Uniqueness + attack numbers match the fused results rows.
    run_ok(
        bin()
            .args(["risk", "--seed", "5", "--replicate", "0", "--survey"])
            .arg(staged.join("synthetic.csv"))
            .args(["--label", "synthetic", "--population"])
            .arg(staged.join("population.csv"))
            .arg("--out")
            .arg(staged.join("uniq.csv")),
    );
    let staged_uniq: Vec<String> = read(&staged.join("uniq.csv"))
        .lines()
        .skip(1)
        .map(str::to_string)
        .collect();
    let fused_uniq: Vec<String> = fused_rows(&read(&fused.join("results/uniqueness.csv")), "synthetic")
        .into_iter()
        .map(|rest| format!("synthetic,{rest}"))
        .collect();
    assert_eq!(staged_uniq, fused_uniq);

    run_ok(
        bin()
            .args(["risk", "--seed", "5", "--replicate", "0", "--trees", "20", "--survey"])
            .arg(staged.join("true.csv"))
            .args(["--population"])
            .arg(staged.join("population.csv"))
            .arg("--train")
            .arg(staged.join("geomasked.csv"))
            .args(["--trained-on", "geomasked", "--attack-out"])
            .arg(staged.join("attack.csv"))
            .arg("--out")
            .arg(staged.join("true_uniq.csv")),
    );
    let staged_attack: Vec<String> = read(&staged.join("attack.csv"))
        .lines()
        .skip(1)
        .map(str::to_string)
        .collect();
    let fused_attack: Vec<String> = fused_rows(&read(&fused.join("results/attack.csv")), "geomasked")
        .into_iter()
        .map(|rest| format!("geomasked,{rest}"))
        .collect();
    assert_eq!(staged_attack, fused_attack);

    // KL cells match the fused utility rows for the synthetic survey.
    let utility_out = run_ok(
        bin()
            .args(["utility", "--survey"])
            .arg(staged.join("synthetic.csv"))
            .arg("--census")
            .arg(staged.join("population.csv"))
            .arg("--out")
            .arg(staged.join("kl.csv")),
    );
    let staged_cells: Vec<String> = read(&staged.join("kl.csv"))
        .lines()
        .skip(1)
        .map(str::to_string)
        .collect();
    let fused_cells = fused_rows(&read(&fused.join("results/kl_cells.csv")), "synthetic");
    assert_eq!(staged_cells, fused_cells);
    let stdout = String::from_utf8_lossy(&utility_out.stdout);
    let z_overall: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("z_overall="))
        .expect("overall score printed")
        .parse()
        .unwrap();
    let fused_overall: f64 = fused_rows(&read(&fused.join("results/kl_overall.csv")), "synthetic")[0]
        .parse()
        .unwrap();
    assert_eq!(z_overall, fused_overall);

    // Area-level fit matches the fused run for the true survey.
    run_ok(
        bin()
            .args(["sae", "--survey"])
            .arg(staged.join("true.csv"))
            .arg("--covariates")
            .arg(fused.join("covariates.csv"))
            .arg("--out")
            .arg(staged.join("fit.json"))
            .arg("--predictions")
            .arg(staged.join("pred.csv")),
    );
    let fit: serde_json::Value = serde_json::from_str(&read(&staged.join("fit.json"))).unwrap();
    let staged_sigma = fit["sigma2_u"].as_f64().unwrap();
    let fused_sigma: f64 = fused_rows(&read(&fused.join("results/sae.csv")), "true")[0]
        .split(',')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(staged_sigma, fused_sigma);
    assert!(read(&staged.join("pred.csv")).lines().count() > 1);
}

#[test]
fn study_failures_set_the_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path();
    let spec_path = base.join("pop_spec.json");
    std::fs::write(
        &spec_path,
        serde_json::to_string(&smoke_population_spec()).unwrap(),
    )
    .unwrap();
    // Covariates keyed by zips that do not exist: the area-level stage
    // fails in every replicate.
    let covariates = base.join("covariates.csv");
    std::fs::write(&covariates, "zip_id,x\nnowhere,1.0\n").unwrap();

    let out = bin()
        .args(["study", "--replicates", "1", "--seed", "5", "--population-spec"])
        .arg(&spec_path)
        .arg("--covariates")
        .arg(&covariates)
        .arg("--out")
        .arg(base.join("out"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("stage sae"),
        "expected a stage summary, got: {stderr}"
    );

    // Fail-fast surfaces the first stage error directly.
    let out = bin()
        .args(["study", "--replicates", "1", "--seed", "5", "--fail-fast", "--population-spec"])
        .arg(&spec_path)
        .arg("--covariates")
        .arg(&covariates)
        .arg("--out")
        .arg(base.join("out2"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("replicate 0"),
        "expected the failing replicate in: {stderr}"
    );
}
