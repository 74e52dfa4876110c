//! End-to-end tests of the `supermap` binary: exit codes, artifacts, and
//! report lines, driven through real files in temporary directories.

use std::path::{Path, PathBuf};
use std::process::Command;

use nalgebra::DMatrix;
use num_complex::Complex64;

use supermap_cli::format::{matrix_from_rows, ChoiFile};
use supermap_core::choi::MapChoi;
use supermap_core::comb::{random_super_instrument, random_superchannel};
use supermap_core::supermap::{identity_supermap, SuperChoi, SupermapDims};
use supermap_core::tensor::{pauli_x, FactoredMatrix};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_supermap")
}

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn run_in(dir: &Path, args: &[&str], envs: &[(&str, &str)]) -> Run {
    let mut cmd = Command::new(bin());
    cmd.args(args).current_dir(dir).env_remove("SUPERMAP_TOL");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("binary runs");
    Run {
        code: out.status.code().expect("exit code"),
        stdout: String::from_utf8(out.stdout).expect("utf8 stdout"),
        stderr: String::from_utf8(out.stderr).expect("utf8 stderr"),
    }
}

fn qubit_dims() -> SupermapDims {
    SupermapDims::new(2, 2, 2, 2).unwrap()
}

fn write_supermap(path: &Path, s: &SuperChoi) {
    ChoiFile::from_supermap(s).store(path).unwrap();
}

fn load_supermap(path: &Path) -> SuperChoi {
    ChoiFile::load(path).unwrap().as_supermap().unwrap()
}

fn demo_counterexample(dir: &Path) -> PathBuf {
    let r = run_in(dir, &["demo", "--restarts", "4"], &[]);
    assert_eq!(r.code, 0, "stderr: {}", r.stderr);
    dir.join("counterexample.json")
}

#[test]
fn demo_writes_the_file_and_prints_the_summary_line() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_in(dir.path(), &["demo", "--restarts", "6"], &[]);
    assert_eq!(r.code, 0, "stderr: {}", r.stderr);
    assert!(
        r.stdout.contains("seesaw <= 1.000000, sdp = 2.000000"),
        "stdout: {}",
        r.stdout
    );
    let file = ChoiFile::load(&dir.path().join("counterexample.json")).unwrap();
    let theta = file.as_supermap().unwrap();
    assert!(theta.is_cpp().unwrap());
}

#[test]
fn demo_is_deterministic_for_a_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_in(dir.path(), &["demo", "--restarts", "4", "--seed", "11"], &[]);
    let b = run_in(dir.path(), &["demo", "--restarts", "4", "--seed", "11"], &[]);
    assert_eq!(a.code, 0);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn verify_exit_codes_follow_the_property() {
    let dir = tempfile::tempdir().unwrap();
    let cex = demo_counterexample(dir.path());
    let cex = cex.to_str().unwrap();

    let r = run_in(dir.path(), &["verify", cex, "--check", "cpp"], &[]);
    assert_eq!(r.code, 0, "stderr: {}", r.stderr);

    let r = run_in(dir.path(), &["verify", cex, "--check", "complete"], &[]);
    assert_eq!(r.code, 1);
    assert!(r.stdout.contains("alpha = 2.000000"), "stdout: {}", r.stdout);

    let r = run_in(dir.path(), &["verify", cex, "--check", "superchannel"], &[]);
    assert_eq!(r.code, 1);

    let r = run_in(
        dir.path(),
        &["verify", cex, "--check", "cptni", "--restarts", "4"],
        &[],
    );
    assert_eq!(r.code, 0, "stdout: {}", r.stdout);

    let id_path = dir.path().join("identity.json");
    write_supermap(&id_path, &identity_supermap(qubit_dims()).unwrap());
    let r = run_in(
        dir.path(),
        &["verify", id_path.to_str().unwrap(), "--check", "superchannel"],
        &[],
    );
    assert_eq!(r.code, 0, "stdout: {}", r.stdout);
}

#[test]
fn invalid_inputs_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();

    let r = run_in(dir.path(), &["verify", "missing.json", "--check", "cpp"], &[]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("cannot read"));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"kind\": 3}").unwrap();
    let r = run_in(
        dir.path(),
        &["verify", bad.to_str().unwrap(), "--check", "cpp"],
        &[],
    );
    assert_eq!(r.code, 2);

    // non-Hermitian matrix
    let skew = dir.path().join("skew.json");
    std::fs::write(
        &skew,
        r#"{"kind":"state","dims":{"d":2},"matrix":[[[0.0,0.0],[1.0,0.0]],[[2.0,0.0],[0.0,0.0]]]}"#,
    )
    .unwrap();
    let r = run_in(
        dir.path(),
        &["verify", skew.to_str().unwrap(), "--check", "cpp"],
        &[],
    );
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("Hermitian"), "stderr: {}", r.stderr);

    // right file, wrong kind
    let map_path = dir.path().join("channel.json");
    ChoiFile::from_map(&MapChoi::identity(2))
        .store(&map_path)
        .unwrap();
    let r = run_in(
        dir.path(),
        &["verify", map_path.to_str().unwrap(), "--check", "cpp"],
        &[],
    );
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("kind"), "stderr: {}", r.stderr);
}

#[test]
fn tol_env_var_is_honored_and_validated() {
    let dir = tempfile::tempdir().unwrap();
    let cex = demo_counterexample(dir.path());
    let cex = cex.to_str().unwrap();

    // alpha = 2 passes a tolerance of 3 supplied through the environment
    let r = run_in(
        dir.path(),
        &["verify", cex, "--check", "complete"],
        &[("SUPERMAP_TOL", "3.0")],
    );
    assert_eq!(r.code, 0, "stdout: {}", r.stdout);

    // the flag wins over the environment
    let r = run_in(
        dir.path(),
        &["verify", cex, "--check", "complete", "--tol", "1e-6"],
        &[("SUPERMAP_TOL", "3.0")],
    );
    assert_eq!(r.code, 1);

    let r = run_in(
        dir.path(),
        &["verify", cex, "--check", "cpp"],
        &[("SUPERMAP_TOL", "banana")],
    );
    assert_eq!(r.code, 2);
}

#[test]
fn complete_writes_a_partner_that_restores_the_superchannel_conditions() {
    let dir = tempfile::tempdir().unwrap();
    let half = identity_supermap(qubit_dims()).unwrap().scaled(0.5);
    let half_path = dir.path().join("half.json");
    write_supermap(&half_path, &half);

    let r = run_in(
        dir.path(),
        &["complete", half_path.to_str().unwrap()],
        &[],
    );
    assert_eq!(r.code, 0, "stderr: {}", r.stderr);
    let partner = load_supermap(&dir.path().join("half.partner.json"));
    let total = half.try_add(&partner).unwrap();
    assert!(total
        .superchannel_report()
        .unwrap()
        .is_superchannel(1e-7));
}

#[test]
fn complete_on_a_superchannel_leaves_almost_nothing_to_add() {
    let dir = tempfile::tempdir().unwrap();
    let sc = random_superchannel(qubit_dims(), 2, 41).unwrap();
    let sc_path = dir.path().join("sc.json");
    write_supermap(&sc_path, &sc);
    let out = dir.path().join("partner.json");
    let r = run_in(
        dir.path(),
        &[
            "complete",
            sc_path.to_str().unwrap(),
            "--output",
            out.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(r.code, 0, "stderr: {}", r.stderr);
    let partner = load_supermap(&out);
    assert!(partner.factored().frobenius_norm() <= 1e-6);
}

#[test]
fn complete_refuses_the_counterexample_citing_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let cex = demo_counterexample(dir.path());
    let r = run_in(dir.path(), &["complete", cex.to_str().unwrap()], &[]);
    assert_eq!(r.code, 1);
    assert!(r.stdout.contains("alpha = 2.000000"), "stdout: {}", r.stdout);
}

#[test]
fn decompose_then_recompose_reproduces_the_superchannel() {
    let dir = tempfile::tempdir().unwrap();
    let sc = random_superchannel(qubit_dims(), 2, 17).unwrap();
    let sc_path = dir.path().join("sc.json");
    write_supermap(&sc_path, &sc);

    let r = run_in(
        dir.path(),
        &["decompose", sc_path.to_str().unwrap(), "--out-dir", "comb"],
        &[],
    );
    assert_eq!(r.code, 0, "stderr: {}", r.stderr);
    assert!(r.stdout.contains("roundtrip residual"), "stdout: {}", r.stdout);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("comb/manifest.json")).unwrap())
            .unwrap();
    assert!(manifest["roundtrip_residual"].as_f64().unwrap() <= 1e-6);

    let r = run_in(
        dir.path(),
        &[
            "recompose",
            "comb/pre.json",
            "comb/post_0.json",
            "--output",
            "rebuilt.json",
        ],
        &[],
    );
    assert_eq!(r.code, 0, "stderr: {}", r.stderr);
    let rebuilt = load_supermap(&dir.path().join("rebuilt.json"));
    let dist = rebuilt
        .factored()
        .frobenius_distance(sc.factored())
        .unwrap();
    assert!(dist <= 1e-6, "distance {dist}");
}

#[test]
fn instrument_decomposition_round_trips_each_branch() {
    let dir = tempfile::tempdir().unwrap();
    let branches = random_super_instrument(qubit_dims(), 1, 2, 23).unwrap();
    let mut args: Vec<String> = vec!["decompose".to_string()];
    for (x, b) in branches.iter().enumerate() {
        let p = dir.path().join(format!("branch_{x}.json"));
        write_supermap(&p, b);
        args.push(p.to_str().unwrap().to_string());
    }
    args.push("--out-dir".to_string());
    args.push("comb".to_string());
    let arg_refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let r = run_in(dir.path(), &arg_refs, &[]);
    assert_eq!(r.code, 0, "stderr: {}", r.stderr);

    for (x, b) in branches.iter().enumerate() {
        let out = format!("branch_{x}_rebuilt.json");
        let branch_flag = x.to_string();
        let r = run_in(
            dir.path(),
            &[
                "recompose",
                "comb/pre.json",
                "comb/post_0.json",
                "comb/post_1.json",
                "--branch",
                &branch_flag,
                "--output",
                &out,
            ],
            &[],
        );
        assert_eq!(r.code, 0, "stderr: {}", r.stderr);
        let rebuilt = load_supermap(&dir.path().join(&out));
        let dist = rebuilt.factored().frobenius_distance(b.factored()).unwrap();
        assert!(dist <= 1e-6, "branch {x}: distance {dist}");
    }
}

#[test]
fn recompose_without_dims_information_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    // a bare channel file carries no supermap dimensions
    let pre = dir.path().join("pre.json");
    ChoiFile::from_map(&MapChoi::identity(2)).store(&pre).unwrap();
    let post = dir.path().join("post.json");
    ChoiFile::from_map(&MapChoi::identity(2)).store(&post).unwrap();
    let r = run_in(
        dir.path(),
        &[
            "recompose",
            "pre.json",
            "post.json",
            "--output",
            "out.json",
        ],
        &[],
    );
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("--dims"), "stderr: {}", r.stderr);
}

#[test]
fn apply_through_the_identity_supermap_acts_like_the_channel() {
    let dir = tempfile::tempdir().unwrap();
    let id_path = dir.path().join("identity.json");
    write_supermap(&id_path, &identity_supermap(qubit_dims()).unwrap());

    let flip = MapChoi::conjugation(&pauli_x()).unwrap();
    let flip_path = dir.path().join("flip.json");
    ChoiFile::from_map(&flip).store(&flip_path).unwrap();

    let mut zero = DMatrix::<Complex64>::zeros(2, 2);
    zero[(0, 0)] = Complex64::new(1.0, 0.0);
    let state = FactoredMatrix::new(zero, &[("S", 2)]).unwrap();
    let state_path = dir.path().join("zero.json");
    ChoiFile::from_state(&state).store(&state_path).unwrap();

    let r = run_in(
        dir.path(),
        &[
            "apply",
            "identity.json",
            "flip.json",
            "zero.json",
            "--output",
            "out.json",
        ],
        &[],
    );
    assert_eq!(r.code, 0, "stderr: {}", r.stderr);
    assert!(r.stdout.contains("trace = 1.000000000"), "stdout: {}", r.stdout);
    let out = ChoiFile::load(&dir.path().join("out.json")).unwrap();
    let m = out.as_state().unwrap();
    // |0><0| flipped to |1><1|
    assert!((m.matrix()[(1, 1)].re - 1.0).abs() < 1e-9);
    assert!(m.matrix()[(0, 0)].norm() < 1e-9);
}

#[test]
fn json_reports_are_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let cex = demo_counterexample(dir.path());
    let r = run_in(
        dir.path(),
        &["verify", cex.to_str().unwrap(), "--check", "complete", "--json"],
        &[],
    );
    assert_eq!(r.code, 1);
    let v: serde_json::Value = serde_json::from_str(&r.stdout).expect("valid json");
    assert_eq!(v["command"], "verify");
    assert_eq!(v["holds"], false);
    assert!((v["alpha"].as_f64().unwrap() - 2.0).abs() < 1e-6);
    // the witness strategy is embedded as a matrix
    let witness = matrix_from_rows(
        &serde_json::from_value::<Vec<Vec<[f64; 2]>>>(v["witness"].clone()).unwrap(),
    )
    .unwrap();
    assert_eq!(witness.nrows(), 8);

    let r = run_in(
        dir.path(),
        &["demo", "--restarts", "4", "--json"],
        &[],
    );
    assert_eq!(r.code, 0);
    let v: serde_json::Value = serde_json::from_str(&r.stdout).expect("valid json");
    assert!(v["summary"]
        .as_str()
        .unwrap()
        .contains("seesaw <= 1.000000, sdp = 2.000000"));
}

#[test]
fn stored_files_reload_bit_exactly_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let sc = random_superchannel(qubit_dims(), 1, 5).unwrap();
    let path = dir.path().join("sc.json");
    write_supermap(&path, &sc);
    let reloaded = load_supermap(&path);
    let a = sc.matrix();
    let b = reloaded.matrix();
    for r in 0..a.nrows() {
        for c in 0..a.ncols() {
            assert_eq!(a[(r, c)].re.to_bits(), b[(r, c)].re.to_bits());
            assert_eq!(a[(r, c)].im.to_bits(), b[(r, c)].im.to_bits());
        }
    }
}
