use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use causalbias::estimators::{bias_report, posterior, report_from, BiasReport, ReportOptions};
use causalbias::inference::{compose_full_posterior, Method, Query};
use causalbias::zoo::{ascvd_summary, builtin, treatment_grid, LinearModelParams, ModelParams};
use causalbias::{CausalGraph, Error, Scm, ScmSpec, VariableId};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "causalbias", version, about = "Identifiability and causal bias in structural causal models")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Global {
    /// JSON model file, or `builtin:<name>`.
    #[arg(long, global = true)]
    model: Option<String>,
    /// Parameter of a built-in linear model, e.g. `alpha=5`.
    #[arg(long = "param", global = true, value_name = "NAME=VALUE")]
    params: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Posterior draws (Laplace), particles (importance sampling) or rows (simulate).
    #[arg(long, global = true)]
    samples: Option<usize>,
    #[arg(long, global = true, value_enum)]
    method: Option<MethodArg>,
    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: Format,
    /// Output file; standard output if absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Laplace,
    Is,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Laplace => Method::Laplace,
            MethodArg::Is => Method::ImportanceSampling,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Decide identifiability by covariate adjustment.
    Identify {
        /// Observed variable (repeatable); defaults to the model's declared set.
        #[arg(long, value_name = "NAME")]
        observe: Vec<String>,
    },
    /// Sample the observational distribution.
    Simulate {
        /// Print group statistics of the statin model instead of the rows.
        #[arg(long)]
        summary: bool,
        #[arg(long, default_value_t = 0.5)]
        statin_threshold: f64,
    },
    /// Average partial effect on the treated.
    Effect(Estimation),
    /// Full bias report.
    Bias {
        #[command(flatten)]
        est: Estimation,
        /// Write the weighted exogenous posterior draws to this CSV file.
        #[arg(long)]
        posterior_out: Option<PathBuf>,
    },
    /// Scripted experiments.
    #[command(subcommand)]
    Experiment(Experiment),
}

#[derive(Args)]
struct Estimation {
    /// Treatment value.
    #[arg(long, allow_negative_numbers = true)]
    x: f64,
    /// Observation `NAME=VALUE` (repeatable). Unlisted variables are latent.
    #[arg(long, value_name = "NAME=VALUE")]
    observe: Vec<String>,
}

#[derive(Subcommand)]
enum Experiment {
    /// |B| over a treatment grid with V2 unobserved and observed.
    LesserEvil {
        #[arg(long, value_delimiter = ',', default_value = "1,5", allow_negative_numbers = true)]
        alpha: Vec<f64>,
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        beta: f64,
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        gamma: f64,
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        delta: f64,
        #[arg(long, default_value_t = 200)]
        points: usize,
        /// Observed value of V2.
        #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
        v2: f64,
    },
    /// Effect and bias on random draws of the statin model for five observed sets.
    Ascvd {
        #[arg(long, default_value_t = 200)]
        draws: usize,
    },
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_numerical() { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure {
            code: 1,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

type Outcome = std::result::Result<u8, Failure>;

fn main() -> ExitCode {
    causalbias::parallel::init_threads_from_env();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let g = cli.global;
    match cli.command {
        Command::Identify { observe } => identify(&g, &observe),
        Command::Simulate {
            summary,
            statin_threshold,
        } => simulate(&g, summary, statin_threshold),
        Command::Effect(est) => effect(&g, &est),
        Command::Bias { est, posterior_out } => bias(&g, &est, posterior_out),
        Command::Experiment(Experiment::LesserEvil {
            alpha,
            beta,
            gamma,
            delta,
            points,
            v2,
        }) => lesser_evil(&g, &alpha, beta, gamma, delta, points, v2),
        Command::Experiment(Experiment::Ascvd { draws }) => ascvd(&g, draws),
    }
}

fn writer(g: &Global) -> io::Result<Box<dyn Write>> {
    Ok(match &g.out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn emit(g: &Global, text: &str) -> io::Result<()> {
    let mut w = writer(g)?;
    w.write_all(text.as_bytes())?;
    if !text.ends_with('\n') {
        w.write_all(b"\n")?;
    }
    w.flush()
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serialisable")
}

fn linear_params(g: &Global) -> std::result::Result<Option<ModelParams>, Failure> {
    if g.params.is_empty() {
        return Ok(None);
    }
    let mut p = LinearModelParams::default();
    for kv in &g.params {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("parameter `{kv}` is not NAME=VALUE")))?;
        let v: f64 = v.trim().parse().map_err(|_| usage(format!("parameter `{kv}` has no numeric value")))?;
        match k.trim() {
            "alpha" => p.alpha = v,
            "beta" => p.beta = v,
            "gamma" => p.gamma = v,
            "delta" => p.delta = v,
            other => return Err(usage(format!("unknown parameter `{other}`"))),
        }
    }
    Ok(Some(ModelParams::Linear(p)))
}

fn load_model(g: &Global) -> std::result::Result<Scm, Failure> {
    let m = g.model.as_deref().ok_or_else(|| usage("--model is required"))?;
    if let Some(name) = m.strip_prefix("builtin:") {
        return Ok(builtin(name, linear_params(g)?.as_ref())?);
    }
    if !g.params.is_empty() {
        return Err(usage("--param applies to built-in models only"));
    }
    let text = std::fs::read_to_string(m).map_err(|e| usage(format!("{m}: {e}")))?;
    Ok(ScmSpec::from_json(&text)?.build()?)
}

fn identify(g: &Global, observe: &[String]) -> Outcome {
    let scm = load_model(g)?;
    let observed: Vec<VariableId> = if observe.is_empty() {
        scm.roles().observed.iter().cloned().collect()
    } else {
        observe
            .iter()
            .map(|o| VariableId::new(o.split_once('=').map_or(o.as_str(), |(k, _)| k)))
            .collect()
    };
    let roles = scm.roles();
    scm.with_observed(observed.clone())?;
    let graph = CausalGraph::from_scm(&scm)?;
    let verdict = graph.identifiable_by_adjustment(roles.treatment.as_str(), roles.outcome.as_str(), &observed)?;
    emit(g, &json(&verdict))?;
    Ok(if verdict.identifiable { 0 } else { 3 })
}

fn simulate(g: &Global, summary: bool, threshold: f64) -> Outcome {
    let scm = load_model(g)?;
    let data = scm.sample_observational(g.samples.unwrap_or(3000), g.seed.unwrap_or(42))?;
    if summary {
        let s = ascvd_summary(&data, threshold)?;
        let text = match g.format {
            Format::Csv => s.to_csv(),
            Format::Json => json(&s),
        };
        emit(g, &text)?;
        return Ok(0);
    }
    match g.format {
        Format::Csv => {
            let mut w = writer(g)?;
            data.write_csv(&mut w)?;
            w.flush()?;
        }
        Format::Json => {
            let rows: Vec<std::collections::BTreeMap<&str, f64>> = data
                .rows()
                .map(|r| data.columns.iter().map(|c| c.as_str()).zip(r.iter().copied()).collect())
                .collect();
            emit(g, &json(&rows))?;
        }
    }
    Ok(0)
}

fn query(est: &Estimation) -> std::result::Result<Query, Failure> {
    let mut q = Query::new(est.x);
    for o in &est.observe {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| usage(format!("observation `{o}` needs a value: NAME=VALUE")))?;
        let v: f64 = v.trim().parse().map_err(|_| usage(format!("observation `{o}` has no numeric value")))?;
        q = q.observe(k.trim(), v);
    }
    Ok(q)
}

fn options(g: &Global, default_method: Method) -> std::result::Result<ReportOptions, Failure> {
    let method = g.method.map(Method::from).unwrap_or(default_method);
    let samples = g.samples.unwrap_or(match method {
        Method::Laplace => 10_000,
        Method::ImportanceSampling => 100_000,
    });
    if samples == 0 {
        return Err(usage("--samples must be at least 1"));
    }
    Ok(ReportOptions {
        method,
        samples,
        seed: g.seed.unwrap_or(42),
        ..Default::default()
    })
}

#[derive(Serialize)]
struct EffectOut<'a> {
    x: f64,
    effect_c: f64,
    std_error: f64,
    n: usize,
    n_eff: f64,
    method: &'a str,
    seed: u64,
    diagnostics: &'a causalbias::inference::Diagnostics,
}

fn effect(g: &Global, est: &Estimation) -> Outcome {
    let scm = load_model(g)?;
    let q = query(est)?;
    let r = bias_report(&scm, &q, &options(g, Method::Laplace)?)?;
    let out = EffectOut {
        x: r.x,
        effect_c: r.effect_c,
        std_error: r.std_errors.effect_c,
        n: r.n_used,
        n_eff: r.n_eff,
        method: r.method.as_str(),
        seed: r.seed,
        diagnostics: &r.diagnostics,
    };
    let text = match g.format {
        Format::Csv => format!(
            "x,C,se_C,n,n_eff,method,seed\n{:.16e},{:.16e},{:.16e},{},{:.16e},{},{}\n",
            out.x, out.effect_c, out.std_error, out.n, out.n_eff, out.method, out.seed
        ),
        Format::Json => json(&out),
    };
    emit(g, &text)?;
    warn(&r);
    Ok(0)
}

fn warn(r: &BiasReport) {
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
}

fn bias(g: &Global, est: &Estimation, posterior_out: Option<PathBuf>) -> Outcome {
    let scm = load_model(g)?;
    let q = query(est)?;
    let opts = options(g, Method::Laplace)?;
    let post = posterior(&scm, &q, &opts)?;
    let draws = post.draws(opts.samples, opts.seed)?;
    let r = report_from(&scm, &q, &post, &draws)?;
    let text = match g.format {
        Format::Csv => format!("{}\n{}\n", r.csv_header(), r.csv_row()),
        Format::Json => r.to_json(),
    };
    emit(g, &text)?;
    if let Some(path) = posterior_out {
        let full = compose_full_posterior(&scm, &draws, &q)?;
        let mut w = BufWriter::new(File::create(&path).map_err(|e| usage(format!("{}: {e}", path.display())))?);
        let names: Vec<&str> = scm.exogenous().iter().map(|e| e.name.as_str()).collect();
        writeln!(w, "{},weight", names.join(","))?;
        for s in &full {
            let vals: Vec<String> = names.iter().map(|n| format!("{:.16e}", s.u[*n])).collect();
            writeln!(w, "{},{:.16e}", vals.join(","), s.weight)?;
        }
        w.flush()?;
    }
    warn(&r);
    Ok(0)
}

#[derive(Serialize)]
struct LesserEvilRow {
    alpha: f64,
    beta: f64,
    gamma: f64,
    delta: f64,
    x: f64,
    abs_b_unobserved: f64,
    se_unobserved: f64,
    abs_b_observed: f64,
    se_observed: f64,
}

fn lesser_evil(g: &Global, alphas: &[f64], beta: f64, gamma: f64, delta: f64, points: usize, v2: f64) -> Outcome {
    if points == 0 {
        return Err(usage("--points must be at least 1"));
    }
    let opts = options(g, Method::Laplace)?;
    let grid = treatment_grid(-20.0, 20.0, points);
    let mut rows = Vec::new();
    for &alpha in alphas {
        let p = LinearModelParams {
            alpha,
            beta,
            gamma,
            delta,
        };
        let scm = builtin("lesser-evil", Some(&ModelParams::Linear(p)))?;
        let part: Vec<causalbias::Result<LesserEvilRow>> = grid
            .par_iter()
            .map(|&x| {
                let un = bias_report(&scm, &Query::new(x), &opts)?;
                let ob = bias_report(&scm, &Query::new(x).observe("V2", v2), &opts)?;
                Ok(LesserEvilRow {
                    alpha,
                    beta,
                    gamma,
                    delta,
                    x,
                    abs_b_unobserved: un.bias_b.abs(),
                    se_unobserved: un.std_errors.bias_b,
                    abs_b_observed: ob.bias_b.abs(),
                    se_observed: ob.std_errors.bias_b,
                })
            })
            .collect();
        for r in part {
            rows.push(r?);
        }
    }
    let text = match g.format {
        Format::Json => json(&rows),
        Format::Csv => {
            let mut s = String::from("alpha,beta,gamma,delta,x,abs_B_unobserved,se_unobserved,abs_B_observed,se_observed\n");
            for r in &rows {
                s.push_str(&format!(
                    "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                    r.alpha, r.beta, r.gamma, r.delta, r.x, r.abs_b_unobserved, r.se_unobserved, r.abs_b_observed, r.se_observed
                ));
            }
            s
        }
    };
    emit(g, &text)?;
    Ok(0)
}

const SETS: [(&str, &[&str]); 5] = [
    ("A,L,F,D", &["A", "L", "F", "D"]),
    ("", &[]),
    ("A,L,F,D,M", &["A", "L", "F", "D", "M"]),
    ("A,L,F,D,H", &["A", "L", "F", "D", "H"]),
    ("H,M", &["H", "M"]),
];

#[derive(Serialize)]
struct AscvdRow {
    draw: usize,
    observed: String,
    x: f64,
    effect_c: f64,
    bias_b: f64,
    se_c: f64,
    se_b: f64,
    n_eff: f64,
}

#[derive(Serialize)]
struct AscvdSummaryRow {
    observed: String,
    mean_c: f64,
    sd_c: f64,
    mean_b: f64,
    sd_b: f64,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

fn ascvd(g: &Global, draws: usize) -> Outcome {
    if draws == 0 {
        return Err(usage("--draws must be at least 1"));
    }
    let scm = match g.model {
        Some(_) => load_model(g)?,
        None => builtin("ascvd", None)?,
    };
    let mut opts = options(g, Method::ImportanceSampling)?;
    let seed = opts.seed;
    let data = scm.sample_observational(draws, seed)?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (label, names) in SETS {
        let mut set_rows = Vec::with_capacity(draws);
        for k in 0..draws {
            let row = data.row(k);
            let x = row[data.column_index("X")?];
            let mut q = Query::new(x);
            for n in names {
                q = q.observe(n, row[data.column_index(n)?]);
            }
            opts.seed = seed + k as u64;
            let r = bias_report(&scm, &q, &opts)?;
            set_rows.push(AscvdRow {
                draw: k,
                observed: label.to_string(),
                x,
                effect_c: r.effect_c,
                bias_b: r.bias_b,
                se_c: r.std_errors.effect_c,
                se_b: r.std_errors.bias_b,
                n_eff: r.n_eff,
            });
        }
        let (mean_c, sd_c) = mean_sd(&set_rows.iter().map(|r| r.effect_c).collect::<Vec<_>>());
        let (mean_b, sd_b) = mean_sd(&set_rows.iter().map(|r| r.bias_b).collect::<Vec<_>>());
        summary.push(AscvdSummaryRow {
            observed: label.to_string(),
            mean_c,
            sd_c,
            mean_b,
            sd_b,
        });
        rows.extend(set_rows);
    }
    let text = match g.format {
        Format::Json => json(&serde_json::json!({ "rows": rows, "summary": summary })),
        Format::Csv => {
            let mut s = String::from("draw,observed,x,C,B,se_C,se_B,n_eff\n");
            for r in &rows {
                s.push_str(&format!(
                    "{},\"{}\",{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                    r.draw, r.observed, r.x, r.effect_c, r.bias_b, r.se_c, r.se_b, r.n_eff
                ));
            }
            s.push_str("\nobserved,mean_C,sd_C,mean_B,sd_B\n");
            for r in &summary {
                s.push_str(&format!(
                    "\"{}\",{:.16e},{:.16e},{:.16e},{:.16e}\n",
                    r.observed, r.mean_c, r.sd_c, r.mean_b, r.sd_b
                ));
            }
            s
        }
    };
    emit(g, &text)?;
    Ok(0)
}
