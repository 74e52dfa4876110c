//! `supermap`: verify, complete, decompose, recompose, and apply quantum
//! supermaps stored as Choi-matrix JSON files.
//!
//! Exit codes are a stable contract: 0 the command succeeded and any checked
//! property holds, 1 a checked property fails, 2 the input is invalid, 3 a
//! numerical procedure failed.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde_json::json;

use supermap_cli::format::{rows_from_matrix, ChoiFile};
use supermap_core::certify::{
    complete_cptni_value, complete_to_superchannel, product_value_lower_bound, SeesawOptions,
};
use supermap_core::comb::{decompose_super_instrument, decompose_superchannel, CombRealization};
use supermap_core::supermap::{singlet_counterexample, SuperChoi, SupermapDims};
use supermap_core::Error as CoreError;

const EXIT_HOLDS: u8 = 0;
const EXIT_FAILS: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "supermap",
    version,
    about = "Verify, complete, decompose, and apply quantum supermaps in the Choi picture"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Verdict tolerance; defaults to the SUPERMAP_TOL environment variable
    /// or 1e-6.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Interior-point solver tolerance.
    #[arg(long, global = true, default_value_t = 1e-8)]
    sdp_tol: f64,
    /// Base seed for the randomized product-strategy search.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Restarts for the product-strategy search.
    #[arg(long, global = true, default_value_t = 32)]
    restarts: usize,
    /// Emit machine-readable JSON reports on stdout.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Check one property of a supermap file.
    Verify {
        path: PathBuf,
        #[arg(long, value_enum)]
        check: Check,
    },
    /// Complete a supermap to a superchannel; writes the partner supermap.
    Complete {
        path: PathBuf,
        /// Output path (default: `<input stem>.partner.json`).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Factor a superchannel (or instrument branch files) into a
    /// pre-processing channel, memory, and post-processing branches.
    Decompose {
        /// One superchannel file, or several files forming an instrument.
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Rebuild a supermap from a pre-processing file and post-processing
    /// branch files.
    Recompose {
        pre: PathBuf,
        #[arg(required = true)]
        posts: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        /// Recompose only this branch instead of the sum.
        #[arg(long)]
        branch: Option<usize>,
        /// Override the supermap dimensions as `a0,a1,b0,b1` (otherwise
        /// taken from the pre-processing file's meta block).
        #[arg(long)]
        dims: Option<String>,
    },
    /// Apply a supermap to a channel, then the result to a state.
    Apply {
        supermap: PathBuf,
        channel: PathBuf,
        state: PathBuf,
        /// Also write the output state to this path.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write the singlet supermap and reproduce the two values separating
    /// product from correlated strategies.
    Demo {
        #[arg(long, default_value = "counterexample.json")]
        output: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Check {
    /// Positive Choi operator (completely positivity-preserving).
    Cpp,
    /// Product strategies never exceed probability 1 (search-based).
    Cptni,
    /// Correlated strategies never exceed probability 1 (exact program).
    Complete,
    /// Structural superchannel conditions.
    Superchannel,
}

struct Failure {
    code: u8,
    message: String,
}

type CmdResult = Result<u8, Failure>;

fn input_failure(message: String) -> Failure {
    Failure {
        code: EXIT_INPUT,
        message,
    }
}

fn core_failure(e: CoreError) -> Failure {
    let code = match &e {
        CoreError::SolverFailure(_)
        | CoreError::NumericalFailure(_)
        | CoreError::MarginalMismatch { .. } => EXIT_NUMERICAL,
        CoreError::NotCpp { .. }
        | CoreError::NotPsd { .. }
        | CoreError::NotCptni { .. }
        | CoreError::NotCompletelyCptni { .. }
        | CoreError::NotSuperchannel { .. }
        | CoreError::BranchesDoNotSumToSuperchannel { .. }
        | CoreError::BadMarginal { .. } => EXIT_FAILS,
        _ => EXIT_INPUT,
    };
    Failure {
        code,
        message: e.to_string(),
    }
}

struct Globals {
    tol: f64,
    sdp_tol: f64,
    seed: u64,
    restarts: usize,
    json: bool,
}

fn resolve_tol(flag: Option<f64>) -> Result<f64, Failure> {
    if let Some(t) = flag {
        return Ok(t);
    }
    match std::env::var("SUPERMAP_TOL") {
        Ok(s) => s
            .trim()
            .parse::<f64>()
            .map_err(|_| input_failure(format!("SUPERMAP_TOL is not a number: `{s}`"))),
        Err(_) => Ok(1e-6),
    }
}

fn seesaw_options(g: &Globals) -> SeesawOptions {
    SeesawOptions {
        restarts: g.restarts,
        seed: g.seed,
        sdp_tol: g.sdp_tol,
        ..SeesawOptions::default()
    }
}

fn load_supermap(path: &Path) -> Result<SuperChoi, Failure> {
    let file = ChoiFile::load(path).map_err(input_failure)?;
    file.as_supermap()
        .map_err(|e| input_failure(format!("{}: {e}", path.display())))
}

fn print_matrix(m: &DMatrix<Complex64>) {
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols())
            .map(|c| format!("{:+.6}{:+.6}i", m[(r, c)].re, m[(r, c)].im))
            .collect();
        println!("  {}", row.join("  "));
    }
}

fn emit(g: &Globals, report: serde_json::Value, text: &[String]) {
    if g.json {
        println!("{}", serde_json::to_string_pretty(&report).unwrap());
    } else {
        for line in text {
            println!("{line}");
        }
    }
}

fn cmd_verify(path: &Path, check: Check, g: &Globals) -> CmdResult {
    let theta = load_supermap(path)?;
    match check {
        Check::Cpp => {
            let residual = theta.psd_residual().map_err(core_failure)?;
            let holds = theta.is_cpp().map_err(core_failure)?;
            emit(
                g,
                json!({
                    "command": "verify", "check": "cpp", "holds": holds,
                    "psd_residual": residual,
                }),
                &[
                    "check: positive Choi operator".to_string(),
                    format!("negative-part residual = {residual:.3e}"),
                    format!("holds: {holds}"),
                ],
            );
            Ok(if holds { EXIT_HOLDS } else { EXIT_FAILS })
        }
        Check::Superchannel => {
            let rep = theta.superchannel_report().map_err(core_failure)?;
            let holds = rep.is_superchannel(g.tol);
            emit(
                g,
                json!({
                    "command": "verify", "check": "superchannel", "holds": holds,
                    "tol": g.tol,
                    "psd_residual": rep.psd_residual,
                    "marginal_residual": rep.marginal_residual,
                    "identity_residual": rep.identity_residual,
                }),
                &[
                    "check: structural superchannel conditions".to_string(),
                    format!("psd residual       = {:.3e}", rep.psd_residual),
                    format!("marginal residual  = {:.3e}", rep.marginal_residual),
                    format!("identity residual  = {:.3e}", rep.identity_residual),
                    format!("holds at tol {:.1e}: {holds}", g.tol),
                ],
            );
            Ok(if holds { EXIT_HOLDS } else { EXIT_FAILS })
        }
        Check::Complete => {
            let cert = complete_cptni_value(&theta, g.sdp_tol).map_err(core_failure)?;
            let holds = cert.alpha <= 1.0 + g.tol;
            emit(
                g,
                json!({
                    "command": "verify", "check": "complete", "holds": holds,
                    "tol": g.tol,
                    "alpha": cert.alpha,
                    "dual": theta.dims().a0 as f64 * cert.dual_trace,
                    "iterations": cert.iterations,
                    "witness": rows_from_matrix(cert.witness.matrix()),
                }),
                &[
                    "check: correlated strategies bounded by 1".to_string(),
                    format!("alpha = {:.9}", cert.alpha),
                    format!(
                        "dual  = {:.9} ({} iterations)",
                        theta.dims().a0 as f64 * cert.dual_trace,
                        cert.iterations
                    ),
                    format!("holds (alpha <= 1 + {:.1e}): {holds}", g.tol),
                ],
            );
            Ok(if holds { EXIT_HOLDS } else { EXIT_FAILS })
        }
        Check::Cptni => {
            let outcome =
                product_value_lower_bound(&theta, &seesaw_options(g)).map_err(core_failure)?;
            let holds = outcome.value <= 1.0 + g.tol;
            emit(
                g,
                json!({
                    "command": "verify", "check": "cptni", "holds": holds,
                    "tol": g.tol,
                    "best_product_value": outcome.value,
                    "restarts": g.restarts,
                    "witness_channel": rows_from_matrix(outcome.channel.matrix()),
                    "witness_state": rows_from_matrix(outcome.state.matrix()),
                }),
                &[
                    "check: product strategies bounded by 1 (search-based)".to_string(),
                    format!(
                        "best value over {} restarts = {:.9}",
                        g.restarts, outcome.value
                    ),
                    format!("holds (value <= 1 + {:.1e}): {holds}", g.tol),
                ],
            );
            Ok(if holds { EXIT_HOLDS } else { EXIT_FAILS })
        }
    }
}

fn cmd_complete(path: &Path, output: Option<&Path>, g: &Globals) -> CmdResult {
    let theta = load_supermap(path)?;
    let default_out = path.with_extension("partner.json");
    let out = output.unwrap_or(&default_out);
    match complete_to_superchannel(&theta, g.sdp_tol, g.tol) {
        Ok(comp) => {
            let file = ChoiFile::from_supermap(&comp.partner).with_meta(json!({
                "role": "completion-partner",
                "alpha": comp.alpha,
                "total_psd_residual": comp.report.psd_residual,
                "total_marginal_residual": comp.report.marginal_residual,
                "total_identity_residual": comp.report.identity_residual,
            }));
            file.store(out).map_err(input_failure)?;
            emit(
                g,
                json!({
                    "command": "complete", "holds": true,
                    "alpha": comp.alpha,
                    "output": out.display().to_string(),
                    "total_psd_residual": comp.report.psd_residual,
                    "total_marginal_residual": comp.report.marginal_residual,
                    "total_identity_residual": comp.report.identity_residual,
                }),
                &[
                    format!("alpha = {:.9}", comp.alpha),
                    format!("wrote partner supermap to {}", out.display()),
                    format!(
                        "total psd residual      = {:.3e}",
                        comp.report.psd_residual
                    ),
                    format!(
                        "total marginal residual = {:.3e}",
                        comp.report.marginal_residual
                    ),
                    format!(
                        "total identity residual = {:.3e}",
                        comp.report.identity_residual
                    ),
                ],
            );
            Ok(EXIT_HOLDS)
        }
        Err(CoreError::NotCompletelyCptni { alpha }) => {
            emit(
                g,
                json!({
                    "command": "complete", "holds": false,
                    "alpha": alpha, "tol": g.tol,
                }),
                &[
                    format!("alpha = {alpha:.9} exceeds 1 + {:.1e}", g.tol),
                    "no completion to a superchannel exists".to_string(),
                ],
            );
            Ok(EXIT_FAILS)
        }
        Err(e) => Err(core_failure(e)),
    }
}

fn comb_meta(dims: SupermapDims, e0: usize, role: &str, branch: Option<usize>) -> serde_json::Value {
    let mut m = json!({
        "role": role,
        "dims": {"a0": dims.a0, "a1": dims.a1, "b0": dims.b0, "b1": dims.b1},
        "e0": e0,
    });
    if let Some(x) = branch {
        m["branch"] = json!(x);
    }
    m
}

fn cmd_decompose(paths: &[PathBuf], out_dir: &Path, g: &Globals) -> CmdResult {
    let branches: Vec<SuperChoi> = paths
        .iter()
        .map(|p| load_supermap(p))
        .collect::<Result<_, _>>()?;
    let comb = if branches.len() == 1 {
        decompose_superchannel(&branches[0], g.tol).map_err(core_failure)?
    } else {
        decompose_super_instrument(&branches, g.tol).map_err(core_failure)?
    };
    let mut residual: f64 = 0.0;
    for (x, b) in branches.iter().enumerate() {
        let back = comb.recompose_branch(x).map_err(core_failure)?;
        residual = residual.max(
            back.factored()
                .frobenius_distance(b.factored())
                .map_err(core_failure)?,
        );
    }
    std::fs::create_dir_all(out_dir)
        .map_err(|e| input_failure(format!("cannot create {}: {e}", out_dir.display())))?;
    let dims = comb.dims;
    let pre_path = out_dir.join("pre.json");
    ChoiFile::from_map(&comb.pre)
        .with_meta(comb_meta(dims, comb.e0_dim, "pre", None))
        .store(&pre_path)
        .map_err(input_failure)?;
    let mut post_names = Vec::new();
    for (x, p) in comb.posts.iter().enumerate() {
        let name = format!("post_{x}.json");
        ChoiFile::from_map(p)
            .with_meta(comb_meta(dims, comb.e0_dim, "post", Some(x)))
            .store(&out_dir.join(&name))
            .map_err(input_failure)?;
        post_names.push(name);
    }
    let manifest = json!({
        "e0_dim": comb.e0_dim,
        "dims": {"a0": dims.a0, "a1": dims.a1, "b0": dims.b0, "b1": dims.b1},
        "pre": "pre.json",
        "posts": post_names,
        "roundtrip_residual": residual,
    });
    let manifest_path = out_dir.join("manifest.json");
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).unwrap() + "\n",
    )
    .map_err(|e| input_failure(format!("cannot write {}: {e}", manifest_path.display())))?;
    emit(
        g,
        json!({
            "command": "decompose",
            "out_dir": out_dir.display().to_string(),
            "e0_dim": comb.e0_dim,
            "posts": comb.posts.len(),
            "roundtrip_residual": residual,
        }),
        &[
            format!("memory dimension e0 = {}", comb.e0_dim),
            format!("wrote pre.json and {} post file(s) to {}", comb.posts.len(), out_dir.display()),
            format!("roundtrip residual = {residual:.3e}"),
        ],
    );
    Ok(EXIT_HOLDS)
}

fn parse_dims_flag(s: &str) -> Result<SupermapDims, Failure> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(input_failure(format!(
            "--dims expects `a0,a1,b0,b1`, got `{s}`"
        )));
    }
    let mut v = [0usize; 4];
    for (i, p) in parts.iter().enumerate() {
        v[i] = p
            .parse()
            .map_err(|_| input_failure(format!("--dims entry `{p}` is not an integer")))?;
    }
    SupermapDims::new(v[0], v[1], v[2], v[3]).map_err(core_failure)
}

fn dims_from_meta(file: &ChoiFile) -> Option<SupermapDims> {
    let dims = file.meta.as_ref()?.get("dims")?;
    let get = |k: &str| dims.get(k)?.as_u64().map(|v| v as usize);
    SupermapDims::new(get("a0")?, get("a1")?, get("b0")?, get("b1")?).ok()
}

fn cmd_recompose(
    pre: &Path,
    posts: &[PathBuf],
    output: &Path,
    branch: Option<usize>,
    dims_flag: Option<&str>,
    g: &Globals,
) -> CmdResult {
    let pre_file = ChoiFile::load(pre).map_err(input_failure)?;
    let pre_map = pre_file
        .as_map()
        .map_err(|e| input_failure(format!("{}: {e}", pre.display())))?;
    let dims = match dims_flag {
        Some(s) => parse_dims_flag(s)?,
        None => dims_from_meta(&pre_file).ok_or_else(|| {
            input_failure(
                "supermap dimensions unavailable: pass --dims a0,a1,b0,b1 or use a pre file \
                 written by `decompose`"
                    .to_string(),
            )
        })?,
    };
    if pre_map.d_out() % dims.a0 != 0 {
        return Err(input_failure(format!(
            "pre-processing output dimension {} is not divisible by a0 = {}",
            pre_map.d_out(),
            dims.a0
        )));
    }
    let e0_dim = pre_map.d_out() / dims.a0;
    let post_maps: Vec<_> = posts
        .iter()
        .map(|p| {
            ChoiFile::load(p)
                .map_err(input_failure)?
                .as_map()
                .map_err(|e| input_failure(format!("{}: {e}", p.display())))
        })
        .collect::<Result<_, _>>()?;
    let comb = CombRealization {
        pre: pre_map,
        posts: post_maps,
        e0_dim,
        dims,
    };
    let theta = match branch {
        Some(x) => comb.recompose_branch(x).map_err(core_failure)?,
        None => comb.recompose_total().map_err(core_failure)?,
    };
    ChoiFile::from_supermap(&theta)
        .store(output)
        .map_err(input_failure)?;
    emit(
        g,
        json!({
            "command": "recompose",
            "output": output.display().to_string(),
            "branch": branch,
        }),
        &[format!("wrote supermap to {}", output.display())],
    );
    Ok(EXIT_HOLDS)
}

fn cmd_apply(
    supermap: &Path,
    channel: &Path,
    state: &Path,
    output: Option<&Path>,
    g: &Globals,
) -> CmdResult {
    let theta = load_supermap(supermap)?;
    let n = ChoiFile::load(channel)
        .map_err(input_failure)?
        .as_map()
        .map_err(|e| input_failure(format!("{}: {e}", channel.display())))?;
    let rho = ChoiFile::load(state)
        .map_err(input_failure)?
        .as_state()
        .map_err(|e| input_failure(format!("{}: {e}", state.display())))?;
    let f = theta.apply_to(&n).map_err(core_failure)?;
    let out = f.apply(&rho).map_err(core_failure)?;
    let trace = out.trace().re;
    if let Some(p) = output {
        ChoiFile::from_state(&out)
            .with_meta(json!({"trace": trace}))
            .store(p)
            .map_err(input_failure)?;
    }
    emit(
        g,
        json!({
            "command": "apply",
            "trace": trace,
            "state": rows_from_matrix(out.matrix()),
            "output": output.map(|p| p.display().to_string()),
        }),
        &[format!("trace = {trace:.9}")],
    );
    if !g.json {
        println!("output state (d = {}):", out.dim());
        print_matrix(out.matrix());
        if let Some(p) = output {
            println!("wrote output state to {}", p.display());
        }
    }
    Ok(EXIT_HOLDS)
}

fn cmd_demo(output: &Path, g: &Globals) -> CmdResult {
    let cex = singlet_counterexample();
    ChoiFile::from_supermap(&cex)
        .with_meta(json!({
            "description": "identity on A0, singlet block on (A1, B0), uniform on B1; \
                            product strategies reach only 1 but correlated strategies reach 2",
        }))
        .store(output)
        .map_err(input_failure)?;
    let outcome = product_value_lower_bound(&cex, &seesaw_options(g)).map_err(core_failure)?;
    let cert = complete_cptni_value(&cex, g.sdp_tol).map_err(core_failure)?;
    let summary = format!("seesaw <= {:.6}, sdp = {:.6}", outcome.value, cert.alpha);
    emit(
        g,
        json!({
            "command": "demo",
            "output": output.display().to_string(),
            "product_value": outcome.value,
            "alpha": cert.alpha,
            "summary": summary,
            "witness": rows_from_matrix(cert.witness.matrix()),
        }),
        &[
            format!("wrote {}", output.display()),
            format!(
                "best product strategy ({} restarts): value = {:.9}",
                g.restarts, outcome.value
            ),
            format!("correlated-strategy optimum: alpha = {:.9}", cert.alpha),
            summary.clone(),
        ],
    );
    if !g.json {
        println!("optimal correlated strategy operator on (A0, A1, B0):");
        print_matrix(cert.witness.matrix());
    }
    Ok(EXIT_HOLDS)
}

fn run(cli: Cli) -> CmdResult {
    let g = Globals {
        tol: resolve_tol(cli.tol)?,
        sdp_tol: cli.sdp_tol,
        seed: cli.seed,
        restarts: cli.restarts,
        json: cli.json,
    };
    match &cli.command {
        Command::Verify { path, check } => cmd_verify(path, *check, &g),
        Command::Complete { path, output } => cmd_complete(path, output.as_deref(), &g),
        Command::Decompose { paths, out_dir } => cmd_decompose(paths, out_dir, &g),
        Command::Recompose {
            pre,
            posts,
            output,
            branch,
            dims,
        } => cmd_recompose(pre, posts, output, *branch, dims.as_deref(), &g),
        Command::Apply {
            supermap,
            channel,
            state,
            output,
        } => cmd_apply(supermap, channel, state, output.as_deref(), &g),
        Command::Demo { output } => cmd_demo(output, &g),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    };
    std::io::stdout().flush().ok();
    ExitCode::from(code)
}
