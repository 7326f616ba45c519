//! The five commands. Each reads a [`RunConfig`], writes its files under
//! `out` and returns the summary it printed. Outputs depend only on the
//! configuration, so reruns are byte-identical.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use flexcmtf::basis::{BasisFamily, BasisSpec};
use flexcmtf::decompose::{cmtf_solve, ctd_solve, Init, SolveReport, SolverConfig};
use flexcmtf::flexnet::metrics::{accuracy, accuracy_drop, matrix_nmse, tensor_nmse};
use flexcmtf::flexnet::{fine_tune, FineTuneConfig, FlexibleLayer};
use flexcmtf::io;
use flexcmtf::refnet::{
    build_f, build_jacobian_tensor, gaussian_blobs, sample_points, train_ref, Activation,
    DenseLayer, Loss, RefNetwork, Reference, SampleMode, SampleSet, Targets,
};
use flexcmtf::{Tensor3, Toy};
use nalgebra::{DMatrix, DVector};

use crate::config::RunConfig;
use crate::error::{AtStage, CliError, Stage};

pub const METRICS_CSV_HEADER: &str = "metric,value";
pub const SWEEP_CSV_HEADER: &str =
    "sweep_value,matrix_nmse,tensor_nmse,accuracy_drop,compression_ratio";

/// Ordered `metric,value` pairs; values are preformatted.
pub type Summary = Vec<(String, String)>;

fn real(x: f64) -> String {
    format!("{x:?}")
}

pub fn metrics_csv(summary: &Summary) -> String {
    let mut out = format!("{METRICS_CSV_HEADER}\n");
    for (k, v) in summary {
        let _ = writeln!(out, "{k},{v}");
    }
    out
}

/// Parses a file written by [`metrics_csv`].
pub fn parse_metrics_csv(text: &str) -> Result<Summary, CliError> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_CSV_HEADER) {
        return Err(CliError::new(Stage::Input, "metrics CSV header"));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split_once(',')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| CliError::new(Stage::Input, format!("metrics row '{l}'")))
        })
        .collect()
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::new(Stage::Io, format!("{}: {e}", path.display())))
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::new(Stage::Io, format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, text)
        .map_err(|e| CliError::new(Stage::Io, format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.path("out").unwrap_or_else(|| PathBuf::from("."))
}

fn load_matrix(path: &Path) -> Result<DMatrix<f64>, CliError> {
    io::parse_matrix(&read_file(path)?).at(Stage::Input)
}

fn load_labels(path: &Path) -> Result<Vec<usize>, CliError> {
    io::parse_labels(&read_file(path)?).at(Stage::Input)
}

fn apply_layers(layers: &[DenseLayer], x: &DMatrix<f64>) -> flexcmtf::Result<DMatrix<f64>> {
    if layers.is_empty() {
        return Ok(x.clone());
    }
    RefNetwork::new(layers.to_vec())?.forward_batch(x)
}

/// The function to compress, plus the network layers around it when it is
/// a slice of a larger network.
pub enum LoadedReference {
    Network {
        prefix: Vec<DenseLayer>,
        sub: RefNetwork,
        suffix: Vec<DenseLayer>,
    },
    Toy(Toy),
    Model(FlexibleLayer),
}

fn parse_range(text: &str, layers: usize) -> Result<std::ops::Range<usize>, CliError> {
    let bad = || CliError::new(Stage::Config, format!("invalid subnet '{text}' (use a..b)"));
    let (a, b) = text
        .split_once("..")
        .or_else(|| text.split_once(':'))
        .ok_or_else(bad)?;
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().parse().map_err(|_| bad())?;
    if a >= b || b > layers {
        return Err(CliError::new(
            Stage::Config,
            format!("subnet {a}..{b} outside a {layers}-layer network"),
        ));
    }
    Ok(a..b)
}

impl LoadedReference {
    pub fn load(cfg: &RunConfig) -> Result<Self, CliError> {
        let path = cfg.require_path("reference")?;
        let text = read_file(&path)?;
        let kind = text.split_ascii_whitespace().next().unwrap_or("");
        let subnet = cfg.raw("subnet");
        if subnet.is_some() && kind != "refnet" {
            return Err(CliError::new(
                Stage::Config,
                "subnet only applies to network references",
            ));
        }
        match kind {
            "refnet" => {
                let net = io::parse_network(&text).at(Stage::Input)?;
                let k = net.layers.len();
                let range = match subnet {
                    Some(s) => parse_range(s, k)?,
                    None => 0..k,
                };
                Ok(LoadedReference::Network {
                    prefix: net.layers[..range.start].to_vec(),
                    suffix: net.layers[range.end..].to_vec(),
                    sub: net.slice(range).at(Stage::Input)?,
                })
            }
            "toy" => Ok(LoadedReference::Toy(Toy::parse_file(&text).at(Stage::Input)?)),
            "flexlayer" => Ok(LoadedReference::Model(io::parse_model(&text).at(Stage::Input)?)),
            _ => Err(CliError::new(
                Stage::Input,
                format!("{}: not a refnet, toy or flexlayer file", path.display()),
            )),
        }
    }

    pub fn function(&self) -> &dyn Reference {
        match self {
            LoadedReference::Network { sub, .. } => sub,
            LoadedReference::Toy(t) => t,
            LoadedReference::Model(m) => m,
        }
    }

    /// Parameters of the replaced part, when it has any.
    pub fn original_param_count(&self) -> Option<usize> {
        match self {
            LoadedReference::Network { sub, .. } => Some(sub.param_count()),
            LoadedReference::Toy(_) => None,
            LoadedReference::Model(m) => Some(m.param_count()),
        }
    }

    /// Maps inputs of the whole pipeline to inputs of the replaced part.
    pub fn to_sub_inputs(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, CliError> {
        match self {
            LoadedReference::Network { prefix, .. } => apply_layers(prefix, x).at(Stage::Eval),
            _ => Ok(x.clone()),
        }
    }

    fn finish(&self, y: &DMatrix<f64>) -> Result<DMatrix<f64>, CliError> {
        match self {
            LoadedReference::Network { suffix, .. } => apply_layers(suffix, y).at(Stage::Eval),
            _ => Ok(y.clone()),
        }
    }

    pub fn full_forward(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, CliError> {
        let inner = self.to_sub_inputs(x)?;
        let mid = batch_eval(self.function(), &inner)?;
        self.finish(&mid)
    }

    /// The pipeline with `model` substituted for the replaced part.
    pub fn hybrid_forward(
        &self,
        model: &FlexibleLayer,
        x: &DMatrix<f64>,
    ) -> Result<DMatrix<f64>, CliError> {
        let inner = self.to_sub_inputs(x)?;
        let mid = model.predict_batch(&inner).at(Stage::Eval)?;
        self.finish(&mid)
    }
}

fn batch_eval(f: &dyn Reference, x: &DMatrix<f64>) -> Result<DMatrix<f64>, CliError> {
    let samples = SampleSet::new(x.clone(), "evaluation").at(Stage::Eval)?;
    build_f(f, &samples).at(Stage::Eval)
}

fn sample_mode(
    cfg: &RunConfig,
    reference: Option<&LoadedReference>,
    default: &str,
) -> Result<SampleMode, CliError> {
    match cfg.raw("sampling").unwrap_or(default) {
        "gaussian" => Ok(SampleMode::Gaussian),
        "uniform" => Ok(SampleMode::Uniform {
            low: cfg.get_or("low", -1.0)?,
            high: cfg.get_or("high", 1.0)?,
        }),
        "dataset" => {
            let path = cfg.require_path("dataset")?;
            let data = load_matrix(&path)?;
            let data = match reference {
                Some(r) => r.to_sub_inputs(&data)?,
                None => data,
            };
            Ok(SampleMode::Dataset(data))
        }
        other => Err(CliError::new(
            Stage::Config,
            format!("unknown sampling mode '{other}'"),
        )),
    }
}

/// Sampling points with the reference's `F` and Jacobian tensor.
pub struct Problem {
    pub samples: SampleSet,
    pub t: Tensor3,
    pub f: DMatrix<f64>,
}

pub fn build_problem(
    reference: &LoadedReference,
    mode: &SampleMode,
    count: usize,
    seed: u64,
) -> Result<Problem, CliError> {
    let func = reference.function();
    let samples = sample_points(mode, func.input_dim(), count, seed).at(Stage::Sample)?;
    let t = build_jacobian_tensor(func, &samples).at(Stage::Reference)?;
    let f = build_f(func, &samples).at(Stage::Reference)?;
    Ok(Problem { samples, t, f })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Cmtf,
    Ctd,
}

#[derive(Debug, Clone)]
pub struct CompressSettings {
    pub method: Method,
    pub spec: BasisSpec,
    pub solver: SolverConfig,
    pub offset_correct: bool,
    pub finetune: Option<FineTuneConfig>,
}

impl CompressSettings {
    pub fn from_config(cfg: &RunConfig) -> Result<Self, CliError> {
        let method = match cfg.raw("method").unwrap_or("cmtf") {
            "cmtf" => Method::Cmtf,
            "ctd" => Method::Ctd,
            other => {
                return Err(CliError::new(
                    Stage::Config,
                    format!("unknown method '{other}' (expected cmtf or ctd)"),
                ))
            }
        };
        let family: BasisFamily = cfg
            .raw("basis")
            .unwrap_or("polynomial")
            .parse()
            .at(Stage::Config)?;
        let spec = BasisSpec::new(family, cfg.get_or("degree", 3)?).at(Stage::Config)?;
        let d = SolverConfig::default();
        let solver = SolverConfig {
            rank: cfg.require("rank")?,
            lambda0: cfg.get_or("lambda0", d.lambda0)?,
            lambda_growth: cfg.get_or("lambda_growth", d.lambda_growth)?,
            growth_period: cfg.get_or("growth_period", d.growth_period)?,
            max_iters: cfg.get_or("max_iters", d.max_iters)?,
            rel_tol: cfg.get_or("rel_tol", d.rel_tol)?,
            pinv_rel_tol: cfg.get_or("pinv_rel_tol", d.pinv_rel_tol)?,
            restarts: cfg.get_or("restarts", d.restarts)?,
            seed: cfg.get_or("seed", 0)?,
            init: cfg
                .raw("init")
                .map(str::parse::<Init>)
                .transpose()
                .at(Stage::Config)?
                .unwrap_or(d.init),
            init_sweeps: cfg.get_or("init_sweeps", d.init_sweeps)?,
            freeze_knots: cfg.get_bool("freeze_knots", d.freeze_knots)?,
        };
        solver.validate().at(Stage::Config)?;
        if solver.max_iters == 0 {
            return Err(CliError::new(Stage::Config, "max_iters must be >= 1"));
        }
        let steps: usize = cfg.get_or("finetune_steps", 0)?;
        let finetune = (steps > 0)
            .then(|| -> Result<_, CliError> {
                let lr: f64 = cfg.get_or("finetune_lr", FineTuneConfig::default().lr)?;
                if !(lr >= 0.0) || !lr.is_finite() {
                    return Err(CliError::new(Stage::Config, "finetune_lr must be >= 0"));
                }
                Ok(FineTuneConfig {
                    steps,
                    lr,
                    tune_v: cfg.get_bool("finetune_v", false)?,
                })
            })
            .transpose()?;
        Ok(CompressSettings {
            method,
            spec,
            solver,
            offset_correct: cfg.get_bool("offset_correct", true)?,
            finetune,
        })
    }
}

pub struct Compressed {
    pub model: FlexibleLayer,
    pub report: SolveReport,
}

/// Solve, offset correction (CTD only) and optional fine-tuning.
pub fn solve(
    reference: &LoadedReference,
    problem: &Problem,
    settings: &CompressSettings,
) -> Result<Compressed, CliError> {
    let (mut model, report) = match settings.method {
        Method::Cmtf => cmtf_solve(
            &problem.t,
            &problem.f,
            &settings.spec,
            &problem.samples,
            &settings.solver,
        ),
        Method::Ctd => ctd_solve(&problem.t, &settings.spec, &problem.samples, &settings.solver),
    }
    .at(Stage::Solve)?;
    if settings.method == Method::Ctd && settings.offset_correct {
        let func = reference.function();
        let f0 = func
            .eval(&vec![0.0; func.input_dim()])
            .at(Stage::Reference)?;
        model = model.offset_correct(&f0).at(Stage::Solve)?;
    }
    if let Some(ft) = &settings.finetune {
        model = fine_tune(&model, &problem.samples.u, &problem.f, ft)
            .at(Stage::FineTune)?
            .model;
    }
    Ok(Compressed { model, report })
}

/// Tensor and matrix NMSE of `model` on the training problem.
pub fn fit_metrics(model: &FlexibleLayer, problem: &Problem) -> Result<(f64, f64), CliError> {
    let t_hat = build_jacobian_tensor(model, &problem.samples).at(Stage::Eval)?;
    let f_hat = model.predict_batch(&problem.samples.u).at(Stage::Eval)?;
    Ok((
        tensor_nmse(&t_hat, &problem.t).at(Stage::Eval)?,
        matrix_nmse(&f_hat, &problem.f).at(Stage::Eval)?,
    ))
}

pub struct HeldOut {
    /// Inputs of the whole pipeline.
    pub x: DMatrix<f64>,
    pub labels: Option<Vec<usize>>,
}

/// `eval_data` (+ `labels`) when given, otherwise fresh points drawn with
/// seed `seed + 1` and the sampling mode of the problem.
pub fn held_out(
    cfg: &RunConfig,
    reference: &LoadedReference,
    default_mode: &str,
) -> Result<HeldOut, CliError> {
    let labels = cfg.path("labels").map(|p| load_labels(&p)).transpose()?;
    if let Some(path) = cfg.path("eval_data") {
        let x = load_matrix(&path)?;
        if let Some(l) = &labels {
            if l.len() != x.ncols() {
                return Err(CliError::new(
                    Stage::Eval,
                    format!("{} labels for {} evaluation points", l.len(), x.ncols()),
                ));
            }
        }
        return Ok(HeldOut { x, labels });
    }
    if labels.is_some() {
        return Err(CliError::new(Stage::Config, "labels need eval_data"));
    }
    // Fresh points live in the replaced part's input space, so they are
    // only meaningful when there is no prefix.
    if matches!(reference, LoadedReference::Network { prefix, .. } if !prefix.is_empty()) {
        return Err(CliError::new(
            Stage::Config,
            "evaluating a subnet with a prefix needs eval_data",
        ));
    }
    let mode = sample_mode(cfg, Some(reference), default_mode)?;
    let count = match cfg.get("eval_samples")? {
        Some(c) => c,
        None => cfg.get_or("samples", 200)?,
    };
    let seed: u64 = cfg.get_or("seed", 0)?;
    let s = sample_points(&mode, reference.function().input_dim(), count, seed.wrapping_add(1))
        .at(Stage::Sample)?;
    Ok(HeldOut { x: s.u, labels: None })
}

pub struct EvalMetrics {
    pub matrix_nmse: f64,
    /// `(original, hybrid)` accuracy in percent when labels are known.
    pub accuracy: Option<(f64, f64)>,
}

pub fn evaluate(
    reference: &LoadedReference,
    model: &FlexibleLayer,
    held: &HeldOut,
) -> Result<EvalMetrics, CliError> {
    let func = reference.function();
    if model.input_dim() != func.input_dim() || model.output_dim() != func.output_dim() {
        return Err(CliError::new(
            Stage::Eval,
            format!(
                "model maps {} -> {}, reference maps {} -> {}",
                model.input_dim(),
                model.output_dim(),
                func.input_dim(),
                func.output_dim()
            ),
        ));
    }
    let inner = reference.to_sub_inputs(&held.x)?;
    let f_ref = batch_eval(func, &inner)?;
    let f_hat = model.predict_batch(&inner).at(Stage::Eval)?;
    let nmse = matrix_nmse(&f_hat, &f_ref).at(Stage::Eval)?;
    let accuracy = match &held.labels {
        None => None,
        Some(labels) => {
            let orig = accuracy(&reference.full_forward(&held.x)?, labels).at(Stage::Eval)?;
            let hyb = accuracy(&reference.hybrid_forward(model, &held.x)?, labels).at(Stage::Eval)?;
            Some((orig, hyb))
        }
    };
    Ok(EvalMetrics {
        matrix_nmse: nmse,
        accuracy,
    })
}

fn push_accuracy(summary: &mut Summary, acc: Option<(f64, f64)>) {
    if let Some((orig, hyb)) = acc {
        summary.push(("accuracy_orig".into(), real(orig)));
        summary.push(("accuracy_hybrid".into(), real(hyb)));
        summary.push(("accuracy_drop".into(), real(accuracy_drop(orig, hyb))));
    }
}

pub fn cmd_gen_toy(cfg: &RunConfig) -> Result<Summary, CliError> {
    let toy: Toy = cfg.raw("toy").unwrap_or("both").parse().at(Stage::Config)?;
    let reference = LoadedReference::Toy(toy);
    let mode = sample_mode(cfg, None, "uniform")?;
    let mode = match (cfg.has("sampling"), mode) {
        // the toy box defaults to [-3, 3]
        (false, _) => SampleMode::Uniform {
            low: cfg.get_or("low", -3.0)?,
            high: cfg.get_or("high", 3.0)?,
        },
        (true, m) => m,
    };
    let count = cfg.get_or("samples", 500)?;
    let problem = build_problem(&reference, &mode, count, cfg.get_or("seed", 0)?)?;
    let dir = out_dir(cfg);
    write_file(&dir, "reference.toy", &toy.file_text())?;
    write_file(&dir, "samples.txt", &io::write_matrix(&problem.samples.u))?;
    write_file(&dir, "F.txt", &io::write_matrix(&problem.f))?;
    write_file(&dir, "J.txt", &io::write_tensor(&problem.t))?;
    Ok(vec![
        ("toy".into(), toy.name().into()),
        ("samples".into(), count.to_string()),
        ("sampling".into(), mode.describe()),
    ])
}

pub fn cmd_train_ref(cfg: &RunConfig) -> Result<Summary, CliError> {
    let seed: u64 = cfg.get_or("seed", 0)?;
    let widths: Vec<usize> = cfg
        .get_list("widths")?
        .ok_or_else(|| CliError::new(Stage::Config, "missing required key 'widths'"))?;
    let activations: Vec<Activation> = match cfg.raw("activations") {
        Some(raw) => raw
            .split(',')
            .map(|a| a.parse::<Activation>())
            .collect::<flexcmtf::Result<_>>()
            .at(Stage::Config)?,
        None => {
            // hidden tanh layers, linear output
            let k = widths.len().saturating_sub(1);
            (0..k)
                .map(|i| if i + 1 == k { Activation::Identity } else { Activation::Tanh })
                .collect()
        }
    };
    let dir = out_dir(cfg);
    let mut summary = Summary::new();
    let (x, targets) = match cfg.raw("data") {
        Some("blobs") => {
            let classes: usize = cfg.get_or("classes", 2)?;
            let per_class: usize = cfg.get_or("per_class", 100)?;
            let test_per_class: usize = cfg.get_or("test_per_class", per_class)?;
            let dim = *widths.first().unwrap_or(&0);
            let (all, labels) = gaussian_blobs(
                dim,
                classes,
                per_class + test_per_class,
                cfg.get_or("separation", 3.0)?,
                cfg.get_or("spread", 1.0)?,
                seed,
            )
            .at(Stage::Config)?;
            let split = classes * per_class;
            let x = all.columns(0, split).into_owned();
            let y = labels[..split].to_vec();
            write_file(&dir, "data.txt", &io::write_matrix(&x))?;
            write_file(&dir, "labels.txt", &io::write_labels(&y))?;
            if test_per_class > 0 {
                let tx = all.columns(split, all.ncols() - split).into_owned();
                write_file(&dir, "test_data.txt", &io::write_matrix(&tx))?;
                write_file(&dir, "test_labels.txt", &io::write_labels(&labels[split..]))?;
            }
            (x, Targets::Classes(y))
        }
        Some(path) => {
            let x = load_matrix(Path::new(path))?;
            let tpath = cfg.require_path("targets")?;
            let text = read_file(&tpath)?;
            let targets = if text.trim_start().starts_with("labels") {
                Targets::Classes(io::parse_labels(&text).at(Stage::Input)?)
            } else {
                Targets::Values(io::parse_matrix(&text).at(Stage::Input)?)
            };
            (x, targets)
        }
        None => return Err(CliError::new(Stage::Config, "missing required key 'data'")),
    };
    let loss = match cfg.raw("loss") {
        Some("mse") => Loss::Mse,
        Some("softmax-ce" | "cross-entropy") => Loss::SoftmaxCrossEntropy,
        Some(other) => {
            return Err(CliError::new(Stage::Config, format!("unknown loss '{other}'")))
        }
        None => match targets {
            Targets::Classes(_) => Loss::SoftmaxCrossEntropy,
            Targets::Values(_) => Loss::Mse,
        },
    };
    let steps: usize = cfg.get_or("steps", 1000)?;
    let lr: f64 = cfg.get_or("lr", 0.1)?;
    if !(lr >= 0.0) || !lr.is_finite() {
        return Err(CliError::new(Stage::Config, "lr must be >= 0"));
    }
    let net = RefNetwork::random(&widths, &activations, seed).at(Stage::Config)?;
    let outcome = train_ref(&net, &x, &targets, loss, steps, lr).at(Stage::Train)?;
    let mut trace = String::from("step,loss\n");
    for (i, l) in outcome.loss_trace.iter().enumerate() {
        let _ = writeln!(trace, "{i},{l:?}");
    }
    write_file(&dir, "network.txt", &io::write_network(&outcome.net))?;
    write_file(&dir, "train_loss.csv", &trace)?;
    summary.push(("param_count".into(), outcome.net.param_count().to_string()));
    summary.push((
        "final_loss".into(),
        real(*outcome.loss_trace.last().unwrap_or(&f64::NAN)),
    ));
    if let Targets::Classes(labels) = &targets {
        let scores = outcome.net.forward_batch(&x).at(Stage::Train)?;
        summary.push((
            "train_accuracy".into(),
            real(accuracy(&scores, labels).at(Stage::Train)?),
        ));
    }
    Ok(summary)
}

fn compression_ratio(model: &FlexibleLayer, reference: &LoadedReference) -> f64 {
    reference
        .original_param_count()
        .and_then(|orig| model.compression_ratio(orig).ok())
        .unwrap_or(f64::NAN)
}

pub fn cmd_compress(cfg: &RunConfig) -> Result<Summary, CliError> {
    let settings = CompressSettings::from_config(cfg)?;
    let reference = LoadedReference::load(cfg)?;
    let mode = sample_mode(cfg, Some(&reference), "gaussian")?;
    let count: usize = cfg.get_or("samples", 200)?;
    let problem = build_problem(&reference, &mode, count, settings.solver.seed)?;
    let out = solve(&reference, &problem, &settings)?;
    let (t_nmse, m_nmse) = fit_metrics(&out.model, &problem)?;

    let mut summary: Summary = vec![
        (
            "method".into(),
            match settings.method {
                Method::Cmtf => "cmtf".into(),
                Method::Ctd => "ctd".into(),
            },
        ),
        ("sampling".into(), mode.describe()),
        ("samples".into(), count.to_string()),
        ("rank".into(), settings.solver.rank.to_string()),
        ("basis".into(), settings.spec.family.name().into()),
        ("degree".into(), settings.spec.degree.to_string()),
        ("chosen_iter".into(), out.report.chosen_iter.to_string()),
        ("iterations".into(), out.report.records.len().to_string()),
        ("converged".into(), out.report.converged.to_string()),
        ("restart".into(), out.report.restart.to_string()),
        ("reinits".into(), out.report.reinit_log.len().to_string()),
        ("tensor_nmse".into(), real(t_nmse)),
        ("matrix_nmse".into(), real(m_nmse)),
        ("param_count".into(), out.model.param_count().to_string()),
        (
            "original_param_count".into(),
            reference
                .original_param_count()
                .map_or("NaN".into(), |c| c.to_string()),
        ),
        (
            "compression_ratio".into(),
            real(compression_ratio(&out.model, &reference)),
        ),
    ];
    if cfg.has("eval_data") {
        let held = held_out(cfg, &reference, "gaussian")?;
        let ev = evaluate(&reference, &out.model, &held)?;
        summary.push(("heldout_matrix_nmse".into(), real(ev.matrix_nmse)));
        push_accuracy(&mut summary, ev.accuracy);
    } else if cfg.has("labels") {
        return Err(CliError::new(Stage::Config, "labels need eval_data"));
    }

    let dir = out_dir(cfg);
    write_file(&dir, "model.txt", &io::write_model(&out.model))?;
    write_file(&dir, "report.csv", &out.report.to_csv())?;
    write_file(&dir, "metrics.csv", &metrics_csv(&summary))?;
    Ok(summary)
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<Summary, CliError> {
    let reference = LoadedReference::load(cfg)?;
    let model = io::parse_model(&read_file(&cfg.require_path("model")?)?).at(Stage::Input)?;
    let held = held_out(cfg, &reference, "gaussian")?;
    let ev = evaluate(&reference, &model, &held)?;
    let mut summary: Summary = vec![
        ("eval_points".into(), held.x.ncols().to_string()),
        ("matrix_nmse".into(), real(ev.matrix_nmse)),
    ];
    push_accuracy(&mut summary, ev.accuracy);
    write_file(&out_dir(cfg), "eval.csv", &metrics_csv(&summary))?;
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SweepKey {
    Rank,
    Degree,
    Basis,
}

fn apply_sweep_value(
    base: &CompressSettings,
    key: SweepKey,
    value: &str,
) -> Result<CompressSettings, CliError> {
    let mut s = base.clone();
    let bad = || CliError::new(Stage::Config, format!("invalid sweep value '{value}'"));
    match key {
        SweepKey::Rank => s.solver.rank = value.parse().map_err(|_| bad())?,
        SweepKey::Degree => {
            let d = value.parse().map_err(|_| bad())?;
            s.spec = BasisSpec::new(s.spec.family, d).at(Stage::Config)?;
        }
        SweepKey::Basis => {
            let family: BasisFamily = value.parse().at(Stage::Config)?;
            s.spec = BasisSpec::new(family, s.spec.degree).at(Stage::Config)?;
        }
    }
    Ok(s)
}

pub struct SweepRow {
    pub value: String,
    pub matrix_nmse: f64,
    pub tensor_nmse: f64,
    pub accuracy_drop: f64,
    pub compression_ratio: f64,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:?},{:?},{:?},{:?}",
            r.value, r.matrix_nmse, r.tensor_nmse, r.accuracy_drop, r.compression_ratio
        );
    }
    out
}

pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRow>, CliError> {
    let mut lines = text.lines();
    if lines.next() != Some(SWEEP_CSV_HEADER) {
        return Err(CliError::new(Stage::Input, "sweep CSV header"));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| CliError::new(Stage::Input, format!("sweep row '{l}'")))
            };
            if f.len() != 5 {
                return Err(CliError::new(Stage::Input, format!("sweep row '{l}'")));
            }
            Ok(SweepRow {
                value: f[0].to_string(),
                matrix_nmse: num(f[1])?,
                tensor_nmse: num(f[2])?,
                accuracy_drop: num(f[3])?,
                compression_ratio: num(f[4])?,
            })
        })
        .collect()
}

fn sweep_point(
    reference: &LoadedReference,
    problem: &Problem,
    held: &HeldOut,
    settings: &CompressSettings,
) -> Result<(f64, f64, f64, f64), CliError> {
    let out = solve(reference, problem, settings)?;
    let (t_nmse, _) = fit_metrics(&out.model, problem)?;
    let ev = evaluate(reference, &out.model, held)?;
    let drop = ev
        .accuracy
        .map_or(f64::NAN, |(orig, hyb)| accuracy_drop(orig, hyb));
    Ok((
        ev.matrix_nmse,
        t_nmse,
        drop,
        compression_ratio(&out.model, reference),
    ))
}

/// One compress + held-out evaluation per sweep value, all with the same
/// seed and sampling points. Failed points become NaN rows.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<Summary, CliError> {
    let key = match cfg.raw("sweep_key") {
        Some("rank" | "r") => SweepKey::Rank,
        Some("degree" | "d") => SweepKey::Degree,
        Some("basis") => SweepKey::Basis,
        Some(other) => {
            return Err(CliError::new(
                Stage::Config,
                format!("unknown sweep_key '{other}' (expected rank, degree or basis)"),
            ))
        }
        None => return Err(CliError::new(Stage::Config, "missing required key 'sweep_key'")),
    };
    let values: Vec<String> = cfg
        .raw("sweep_values")
        .map(|v| {
            v.split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect()
        })
        .unwrap_or_default();
    if values.is_empty() {
        return Err(CliError::new(Stage::Config, "sweep_values is empty"));
    }
    let mut base_cfg = cfg.clone();
    if key == SweepKey::Rank && !cfg.has("rank") {
        // placeholder, replaced per point
        base_cfg.set("rank", "1")?;
    }
    let base = CompressSettings::from_config(&base_cfg)?;
    let reference = LoadedReference::load(cfg)?;
    let mode = sample_mode(cfg, Some(&reference), "gaussian")?;
    let count: usize = cfg.get_or("samples", 200)?;
    let problem = build_problem(&reference, &mode, count, base.solver.seed)?;
    let held = held_out(cfg, &reference, "gaussian")?;

    let mut rows = Vec::with_capacity(values.len());
    let mut failed = 0usize;
    for value in &values {
        let result = apply_sweep_value(&base, key, value)
            .and_then(|s| sweep_point(&reference, &problem, &held, &s));
        let (m, t, a, c) = result.unwrap_or_else(|e| {
            eprintln!("sweep point {value}: {e}");
            failed += 1;
            (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
        });
        rows.push(SweepRow {
            value: value.clone(),
            matrix_nmse: m,
            tensor_nmse: t,
            accuracy_drop: a,
            compression_ratio: c,
        });
    }
    write_file(&out_dir(cfg), "sweep.csv", &sweep_csv(&rows))?;
    Ok(vec![
        ("points".into(), rows.len().to_string()),
        ("failed".into(), failed.to_string()),
    ])
}

/// Exact flexible-layer form of a network whose layers are all affine
/// (identity activations): one branch per output with `g(t) = t`.
pub fn export_affine(net: &RefNetwork) -> Result<FlexibleLayer, CliError> {
    if net
        .layers
        .iter()
        .any(|l| l.activation != Activation::Identity)
    {
        return Err(CliError::new(
            Stage::Input,
            "only all-identity networks have an exact affine export",
        ));
    }
    let m = net.input_dim();
    let n = net.output_dim();
    // f(u) = A^T u + b
    let mut a = DMatrix::<f64>::identity(m, m);
    let mut b = DVector::<f64>::zeros(m);
    for layer in &net.layers {
        a = &a * &layer.weights[0];
        b = layer.weights[0].transpose() * &b + &layer.bias[0];
    }
    let spec = BasisSpec::polynomial(1).at(Stage::Input)?;
    let mut coeffs = DMatrix::zeros(2, n);
    coeffs.row_mut(1).fill(1.0);
    let knots = vec![flexcmtf::KnotSet::from_extrema(&spec, 0.0, 0.0); n];
    FlexibleLayer::new(a, DMatrix::identity(n, n), spec, knots, coeffs, b).at(Stage::Input)
}
