use std::fs;
use std::path::{Path, PathBuf};

use hqh::covariance::CovarianceState;
use hqh::data::{self, ClusterSpec};
use hqh::eval::{self, BatchExperiment, EvalConfig, ExperimentReport, OnlineExperiment};
use hqh::hashing::{self, BatchPipelineConfig};
use hqh::matrix::DataMatrix;
use hqh::model::{HashModel, OrthogonalTransform};
use hqh::rotation::{fit_rotation, unifdiag_fit, IsoHashConfig, RotationMethod};
use hqh::seed;
use hqh::theory::{self, GaussianDataSpec, Th3Params};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::*;
use crate::CliError;

/// Whether a command's checks passed; only `verify` can fail.
pub enum Outcome {
    Pass,
    Fail,
}

type CliResult = Result<Outcome, CliError>;

/// The resolved configuration echoed into every output; it is also a valid
/// `--config` file.
fn envelope(command: &str, args: &impl Serialize) -> Value {
    json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "args": args,
    })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

/// Writes `text` to `out`, or standard output.
fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => write_file(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON value serializes");
    s.push('\n');
    s
}

/// Binary outputs cannot hold the config; it goes next to them.
fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn to_value(v: &impl Serialize) -> Value {
    serde_json::to_value(v).expect("report serializes")
}

pub fn run(command: Command) -> CliResult {
    match command {
        Command::Fit(a) => fit(a),
        Command::Encode(a) => encode(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Synth(a) => synth(a),
        Command::Verify(VerifyCommand::Th1(a)) => verify_th1(a),
        Command::Verify(VerifyCommand::Th2(a)) => verify_th2(a),
        Command::Verify(VerifyCommand::Th3(a)) => verify_th3(a),
        Command::Nearzero(a) => nearzero(a),
        Command::Info(a) => info(a),
    }
}

fn covariance_report(model: &HashModel) -> Result<Value, CliError> {
    let cov = model.covariance();
    let rotated = cov.rotated(model.transform().matrix())?;
    let tau = cov.tau();
    let residual = rotated.diagonal_residual();
    Ok(json!({
        "tau": tau,
        "rotated_diagonal": rotated.diagonal(),
        "max_diagonal_deviation": residual,
        "relative_deviation": if tau > 0.0 { residual / tau } else { 0.0 },
        "transform_orthonormality_residual": model.transform().orthonormality_residual(),
        "basis_orthonormality_residual": model.basis().orthonormality_residual(),
    }))
}

fn fit(args: FitArgs) -> CliResult {
    let config = envelope("fit", &args);
    let x = data::load_dataset(&args.input)?;
    let model = hashing::fit_batch(
        &x,
        &BatchPipelineConfig {
            c: args.c,
            rotation_method: args.method,
            itq_iters: args.itq_iters,
            isohash: IsoHashConfig::default(),
            seed: args.seed,
        },
    )?;
    hashing::save_model(&args.out, &model, Some(&config))?;
    let report = json!({
        "config": config,
        "model": args.out,
        "d": model.dim(),
        "c": model.code_len(),
        "n": x.len(),
        "rotation": model.transform().provenance(),
        "covariance": covariance_report(&model)?,
    });
    print!("{}", pretty(&report));
    Ok(Outcome::Pass)
}

fn encode(args: EncodeArgs) -> CliResult {
    let config = envelope("encode", &args);
    let model = hashing::load_model(&args.model)?;
    let x = data::load_dataset(&args.input)?;
    let codes = hashing::encode_all(&model, &x)?;
    hashing::write_codes(&args.out, &codes)?;
    write_file(&sidecar(&args.out), pretty(&config))?;
    let report = json!({
        "config": config,
        "codes": args.out,
        "n": codes.len(),
        "c": model.code_len(),
    });
    print!("{}", pretty(&report));
    Ok(Outcome::Pass)
}

fn eval_cmd(args: EvalArgs) -> CliResult {
    let config = envelope("eval", &args);
    let train = data::load_dataset(&args.data)?;
    let queries = args.queries.as_ref().map(data::load_dataset).transpose()?;
    let eval_config = EvalConfig {
        n_queries: args.n_queries,
        frac: args.frac,
        threshold_basis: args.threshold_basis,
        k: args.k,
        itq_iters: args.itq_iters,
        isohash: IsoHashConfig::default(),
        timing: args.timing,
    };
    let methods: Vec<RotationMethod> = match &args.methods {
        Some(m) => m.clone(),
        None => RotationMethod::ALL
            .into_iter()
            .filter(|m| args.mode == Mode::Batch || m.is_streamable())
            .collect(),
    };
    let mut report = match args.mode {
        Mode::Batch => {
            let exp = BatchExperiment {
                methods,
                c_values: args.c.clone(),
                seeds: args.seeds.clone(),
                eval: eval_config,
            };
            match &queries {
                Some(q) => eval::run_batch_experiment_split(&train, q, &exp)?,
                None => eval::run_batch_experiment(&train, &exp)?,
            }
        }
        Mode::Online => {
            let mut rows = Vec::new();
            for &c in &args.c {
                let exp = OnlineExperiment {
                    methods: methods.clone(),
                    c,
                    seeds: args.seeds.clone(),
                    checkpoint_every: args.checkpoint,
                    max_samples: args.max_samples,
                    beta: args.beta,
                    refit_every: args.refit_every,
                    eval: eval_config.clone(),
                };
                let part = match &queries {
                    Some(q) => eval::run_online_experiment_split(&train, q, &exp)?,
                    None => eval::run_online_experiment(&train, &exp)?,
                };
                rows.extend(part.rows);
            }
            ExperimentReport { mode: "online".into(), config: Value::Null, rows }
        }
    };
    report.config = config;
    emit(args.out.as_deref(), &report.to_csv())?;
    if let Some(path) = &args.summary {
        write_file(path, pretty(&report.summary_json()))?;
    }
    Ok(Outcome::Pass)
}

fn synth(args: SynthArgs) -> CliResult {
    let config = envelope("synth", &args);
    let spec = ClusterSpec {
        n_clusters: args.n_clusters,
        points_per_cluster: args.points_per_cluster,
        d: args.d,
        centroid_scale: args.centroid_scale,
        noise_sigma: args.noise_sigma,
        seed: args.seed,
    };
    let ds = data::generate_clusters(&spec)?;
    let comment = format!("config: {config}");
    data::write_dataset(&args.out, &ds.data, Some(&comment))?;
    if args.out.extension().and_then(|e| e.to_str()) == Some("fvecs") {
        write_file(&sidecar(&args.out), pretty(&config))?;
    }
    let labels = args.labels.clone().unwrap_or_else(|| {
        let mut s = args.out.as_os_str().to_owned();
        s.push(".labels");
        PathBuf::from(s)
    });
    data::write_labels(&labels, &ds.labels, Some(&comment))?;
    let report = json!({
        "config": config,
        "data": args.out,
        "labels": labels,
        "n": ds.data.len(),
        "d": ds.data.dim(),
    });
    print!("{}", pretty(&report));
    Ok(Outcome::Pass)
}

fn gaussian_spec(args: &SigmaArgs, seed: u64) -> Result<GaussianDataSpec, CliError> {
    let sigma = if let Some(diag) = &args.diag {
        DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(diag))
    } else if let Some(path) = &args.sigma {
        let m = data::load_csv(path, false)?;
        // rows of the file are the points of the loaded matrix, so transpose back
        m.values().transpose()
    } else {
        DMatrix::identity(args.c, args.c) * args.variance
    };
    Ok(GaussianDataSpec::new(sigma, seed)?)
}

fn rotation_for(spec: &GaussianDataSpec, method: RotationMethod, seed: u64) -> Result<OrthogonalTransform, CliError> {
    let cov = CovarianceState::new(spec.sigma().clone(), false)?;
    if method == RotationMethod::UnifDiag {
        return Ok(unifdiag_fit(&cov)?.transform);
    }
    let rotation_seed = seed::derive_u64(seed, "verify-rotation", 0);
    Ok(fit_rotation(method, None, &cov, 0, &IsoHashConfig::default(), rotation_seed)?)
}

fn verdict(config: Value, report: Value, pass: bool, out: Option<&Path>) -> CliResult {
    let doc = json!({ "config": config, "report": report, "pass": pass });
    let text = pretty(&doc);
    if let Some(path) = out {
        write_file(path, &text)?;
    }
    print!("{text}");
    Ok(if pass { Outcome::Pass } else { Outcome::Fail })
}

fn verify_th1(args: Th1Args) -> CliResult {
    let config = envelope("verify th1", &args);
    let spec = gaussian_spec(&args.sigma, args.seed)?;
    let r = rotation_for(&spec, args.rotation, args.seed)?;
    let orthant = theory::verify_orthant_bound(&spec, &r, args.eps, args.trials)?;
    let optimality = theory::check_uniformization_optimality(
        &spec,
        args.haar,
        seed::derive_u64(args.seed, "verify-haar", 0),
    )?;
    let pass = orthant.pass && optimality.pass;
    let report = json!({ "orthant": orthant, "optimality": optimality });
    verdict(config, report, pass, args.out.as_deref())
}

fn verify_th2(args: Th2Args) -> CliResult {
    let config = envelope("verify th2", &args);
    let spec = gaussian_spec(&args.sigma, args.seed)?;
    let r = rotation_for(&spec, args.rotation, args.seed)?;
    let report = theory::verify_th2(&spec, &r, args.eps, args.pairs)?;
    let pass = report.pass;
    verdict(config, to_value(&report), pass, args.out.as_deref())
}

fn verify_th3(args: Th3Args) -> CliResult {
    let config = envelope("verify th3", &args);
    let params = Th3Params {
        l: args.l,
        delta: args.delta,
        eps_pca: args.eps_pca,
        rho: args.rho,
        eta: args.eta,
        c: args.c,
    };
    let report = theory::verify_th3(&params, args.trials, args.seed)?;
    let pass = report.empirical.as_ref().is_some_and(|e| e.pass);
    verdict(config, to_value(&report), pass, args.out.as_deref())
}

fn nearzero(args: NearzeroArgs) -> CliResult {
    let config = envelope("nearzero", &args);
    let model = hashing::load_model(&args.model)?;
    let x = data::load_dataset(&args.data)?;
    let rotated = hashing::project_all(&model, &x)?;
    let unrotated = model.transform().matrix().transpose() * &rotated;
    let scale = if args.relative { model.covariance().tau().sqrt() } else { 1.0 };
    let grid: Vec<f64> = args.eps.iter().map(|e| e * scale).collect();
    let after = theory::near_zero_cdf(&rotated, &grid)?;
    let before = theory::near_zero_cdf(&unrotated, &grid)?;
    let mut csv = format!("# config: {config}\nepsilon,rotated_cdf,unrotated_cdf\n");
    for ((e, a), b) in grid.iter().zip(&after).zip(&before) {
        csv.push_str(&format!("{e},{a},{b}\n"));
    }
    emit(args.out.as_deref(), &csv)?;
    Ok(Outcome::Pass)
}

fn describe_data(x: &DataMatrix) -> Value {
    json!({ "kind": "dataset", "n": x.len(), "d": x.dim() })
}

fn info(args: InfoArgs) -> CliResult {
    let config = envelope("info", &args);
    let details = match &args.path {
        None => json!({
            "kind": "build",
            "version": env!("CARGO_PKG_VERSION"),
            "methods": RotationMethod::ALL,
            "threads": rayon::current_num_threads(),
        }),
        Some(path) => {
            let bytes = fs::read(path).map_err(|source| CliError::Io { path: path.clone(), source })?;
            match bytes.get(..4) {
                Some(b"HQH1") => {
                    let (model, meta) = hashing::model_from_bytes(&bytes)?;
                    json!({
                        "kind": "model",
                        "d": model.dim(),
                        "c": model.code_len(),
                        "rotation": model.transform().provenance(),
                        "samples": model.centering().count(),
                        "covariance": covariance_report(&model)?,
                        "meta": meta,
                    })
                }
                Some(b"HQC1") => {
                    let codes = hashing::codes_from_bytes(&bytes)?;
                    json!({
                        "kind": "codes",
                        "n": codes.len(),
                        "c": codes.first().map_or(0, |c| c.len()),
                    })
                }
                _ => describe_data(&data::load_dataset(path)?),
            }
        }
    };
    print!("{}", pretty(&json!({ "config": config, "info": details })));
    Ok(Outcome::Pass)
}
