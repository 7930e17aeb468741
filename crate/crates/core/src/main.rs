use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use eventcause::dataset::{sample_file, write_instance_level, Dataset, DatasetError};
use eventcause::estimand::{BackdoorConfig, DeltaEstimate, EstimateScheme, TemporalTemplate};
use eventcause::eval::{
    evaluate_delta, evaluate_mcqa, read_records, render_report, summarize, write_records, BackdoorDeltas, DeltaSource,
    EvalError, EvalOptions, EvalRun, GraphDeltas, McqaConfig, OracleDeltas, OriginalDeltas, PerActivity, Precedence,
    ReportFormat, ScorerSet, TemporalDeltas,
};
use eventcause::graph::ActivityGraphs;
use eventcause::io::{load_bundle, load_bundle_unchecked, load_esd_corpus, IoError, LoadOptions};
use eventcause::prompt::{dump_templates, McqaTemplate};
use eventcause::scorer::{OracleScorer, RemoteScorer, RemoteScorerConfig, Scorer, UniformScorer};
use eventcause::trajectory::{
    count_trajectories, delta_original, CountLevel, EsdCorpus, GraphEstimator, TransitionScheme,
};
use eventcause::triplets::{create_triplets, make_hard_variant, Variant};

#[derive(Parser)]
#[command(
    name = "eventcause",
    version,
    about = "Causal event reasoning benchmarks over activity graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a bundle against every activity-graph invariant.
    Validate {
        bundle: PathBuf,
        #[arg(long)]
        strict: bool,
    },
    /// Generate a balanced triplet dataset from a bundle.
    Generate {
        bundle: PathBuf,
        #[arg(long)]
        hard: bool,
        #[arg(long, value_enum, default_value = "node")]
        level: LevelArg,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        strict: bool,
    },
    /// Draw a frozen uniform sample from a dataset.
    Sample {
        dataset: PathBuf,
        #[arg(short, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Count start-to-end trajectories.
    Count {
        bundle: PathBuf,
        #[arg(long, value_enum, default_value = "compact")]
        level: CountLevelArg,
        #[arg(long)]
        from: Option<String>,
        #[arg(long)]
        to: Option<String>,
    },
    /// Graph-statistical average treatment effects.
    Ate {
        #[command(subcommand)]
        command: AteCommand,
    },
    /// Evaluate a dataset.
    Eval {
        #[command(subcommand)]
        command: EvalCommand,
    },
    /// Summarize evaluation records.
    Report {
        #[arg(required = true)]
        records: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: FormatArg,
    },
    /// Print every prompt template with placeholders.
    DumpTemplates,
}

#[derive(Subcommand)]
enum AteCommand {
    /// Closed-form estimate under a random-walk transition scheme.
    Graph {
        bundle: PathBuf,
        #[arg(long, value_enum, default_value = "trajectory")]
        scheme: TransitionArg,
        #[arg(long, default_value = "all")]
        pairs: String,
    },
    /// Stratified estimate from observed event sequences.
    Original {
        bundle: PathBuf,
        esds: PathBuf,
        #[arg(long, default_value = "all")]
        pairs: String,
    },
}

#[derive(Args)]
struct EvalCommon {
    dataset: PathBuf,
    /// Activity bundles; required by graph-aware schemes and the oracle scorer.
    #[arg(long = "bundle")]
    bundles: Vec<PathBuf>,
    /// Row name in reports.
    #[arg(long)]
    label: Option<String>,
    /// Write per-triplet records (JSON lines).
    #[arg(long)]
    records: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    format: FormatArg,
}

#[derive(Args)]
struct ScorerArgs {
    /// `oracle`, `anti-oracle`, `uniform`, `remote` (endpoint from the
    /// environment) or an endpoint URL.
    #[arg(long)]
    scorer: Option<String>,
    #[arg(long, default_value = "default")]
    model: String,
    #[arg(long, default_value_t = 0.4)]
    margin: f64,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Direct multiple-choice prompting.
    Mcqa {
        #[command(flatten)]
        common: EvalCommon,
        #[command(flatten)]
        scorer: ScorerArgs,
        #[arg(long, value_enum, default_value = "v1")]
        template: TemplateArg,
    },
    /// Argmax of causal strength between premise and each choice.
    Delta {
        #[command(flatten)]
        common: EvalCommon,
        #[command(flatten)]
        scorer: ScorerArgs,
        #[arg(long, default_value = "backdoor")]
        scheme: EstimateScheme,
        /// Event-sequence files for the `o` scheme.
        #[arg(long = "esds")]
        esds: Vec<PathBuf>,
        #[arg(long, default_value_t = eventcause::estimand::DEFAULT_TRAJECTORY_SAMPLES)]
        trajectories: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "masked")]
        temporal_template: TemporalArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Node,
    Instance,
}

#[derive(Clone, Copy, ValueEnum)]
enum CountLevelArg {
    Compact,
    Total,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransitionArg {
    Node,
    Trajectory,
}

#[derive(Clone, Copy, ValueEnum)]
enum TemplateArg {
    V1,
    V2,
}

#[derive(Clone, Copy, ValueEnum)]
enum TemporalArg {
    Masked,
    Mcqa,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Text,
    Csv,
    Json,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Text => ReportFormat::Text,
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Json => ReportFormat::Json,
        }
    }
}

/// Failures split by exit code: 1 for invalid inputs, 2 for everything else.
enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let validation = e.chain().any(|c| {
            c.downcast_ref::<IoError>().is_some_and(IoError::is_validation)
                || matches!(
                    c.downcast_ref::<DatasetError>(),
                    Some(DatasetError::ManifestMismatch { .. } | DatasetError::Parse { .. })
                )
        });
        if validation {
            Failure::Validation(e)
        } else {
            Failure::Runtime(e)
        }
    }
}

macro_rules! failure_from {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                anyhow::Error::from(e).into()
            }
        }
    )*};
}

failure_from!(IoError, EvalError, DatasetError);

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn out(text: &str) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    stdout.write_all(text.as_bytes())?;
    stdout.flush()?;
    Ok(())
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Validate { bundle, strict } => {
            let (graphs, report) = load_bundle_unchecked(&bundle, LoadOptions { strict })?;
            if report.is_ok() {
                out(&format!("ok: {} ({} nodes)\n", graphs.activity, graphs.nodes().len()))?;
                Ok(())
            } else {
                for v in &report.violations {
                    eprintln!("{}: {v}", bundle.display());
                }
                Err(Failure::Validation(anyhow!("{} violation(s)", report.violations.len())))
            }
        }
        Command::Generate {
            bundle,
            hard,
            level,
            output,
            seed,
            strict,
        } => {
            let graphs = load_bundle(&bundle, LoadOptions { strict })?;
            let mut triplets = create_triplets(&graphs).context("generating triplets")?;
            let variant = if hard {
                triplets = make_hard_variant(&triplets, &graphs).context("building hard variant")?;
                Variant::CausallyHard
            } else {
                Variant::Causal
            };
            let manifest = match level {
                LevelArg::Node => {
                    let ds =
                        Dataset::build_node_level(&triplets, &graphs, variant, seed).context("building dataset")?;
                    ds.write(&output).context("writing dataset")?;
                    ds.manifest
                }
                LevelArg::Instance => {
                    write_instance_level(&output, &triplets, &graphs, variant, seed).context("writing dataset")?
                }
            };
            eprintln!(
                "wrote {} records to {} (digest {})",
                manifest.count,
                output.display(),
                manifest.digest
            );
            Ok(())
        }
        Command::Sample {
            dataset,
            n,
            seed,
            output,
        } => {
            let manifest = sample_file(&dataset, &output, n, seed).context("sampling")?;
            eprintln!(
                "wrote {} records to {} (digest {})",
                manifest.count,
                output.display(),
                manifest.digest
            );
            Ok(())
        }
        Command::Count {
            bundle,
            level,
            from,
            to,
        } => {
            let graphs = load_bundle(&bundle, LoadOptions::default())?;
            let g_o = graphs.observational();
            let from = from.unwrap_or_else(|| g_o.id(g_o.start()).to_string());
            let to = to.unwrap_or_else(|| g_o.id(g_o.end()).to_string());
            let level = match level {
                CountLevelArg::Compact => CountLevel::Compact,
                CountLevelArg::Total => CountLevel::Total,
            };
            let count = count_trajectories(&graphs, &from, &to, level).context("counting trajectories")?;
            out(&format!("{}\n", count.value))?;
            Ok(())
        }
        Command::Ate { command } => ate(command),
        Command::Eval { command } => eval(command),
        Command::Report { records, format } => {
            let mut all = Vec::new();
            for path in &records {
                all.extend(read_records(path)?);
            }
            let reports = summarize(&all)?;
            out(&render_report(&reports, format.into())?)?;
            Ok(())
        }
        Command::DumpTemplates => {
            let mut text = String::new();
            for (name, body) in dump_templates() {
                text.push_str(&format!("== {name}\n{body}\n\n"));
            }
            out(&text)?;
            Ok(())
        }
    }
}

fn parse_pairs(spec: &str, graphs: &ActivityGraphs) -> Result<Vec<(String, String)>> {
    let g_o = graphs.observational();
    if spec == "all" {
        let topo = g_o.topological_order()?;
        let order = topo.order();
        let mut pairs = Vec::new();
        for (i, &a) in order.iter().enumerate() {
            for &b in &order[i + 1..] {
                pairs.push((g_o.id(a).to_string(), g_o.id(b).to_string()));
            }
        }
        return Ok(pairs);
    }
    let text = fs::read_to_string(spec).with_context(|| format!("reading pairs file {spec}"))?;
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [e1, e2] = parts[..] else {
            bail!("{spec}:{}: expected two node ids", n + 1);
        };
        pairs.push((e1.to_string(), e2.to_string()));
    }
    Ok(pairs)
}

fn print_estimates(rows: &[DeltaEstimate]) -> Result<()> {
    let mut text = String::from("e1\te2\tdelta\ttreatment\tcontrol\tempty_strata\n");
    for d in rows {
        text.push_str(&format!(
            "{}\t{}\t{:.12}\t{:.12}\t{:.12}\t{}\n",
            d.e1, d.e2, d.value, d.treatment, d.control, d.empty_strata
        ));
    }
    out(&text)
}

fn ate(command: AteCommand) -> Result<(), Failure> {
    match command {
        AteCommand::Graph { bundle, scheme, pairs } => {
            let graphs = load_bundle(&bundle, LoadOptions::default())?;
            let scheme = match scheme {
                TransitionArg::Node => TransitionScheme::NodeUniform,
                TransitionArg::Trajectory => TransitionScheme::TrajectoryUniform,
            };
            let est = GraphEstimator::new(graphs.observational(), scheme).context("building transition matrix")?;
            let rows = parse_pairs(&pairs, &graphs)?
                .iter()
                .map(|(a, b)| est.delta(a, b).with_context(|| format!("pair {a} {b}")))
                .collect::<Result<Vec<_>>>()?;
            print_estimates(&rows)?;
            Ok(())
        }
        AteCommand::Original { bundle, esds, pairs } => {
            let graphs = load_bundle(&bundle, LoadOptions::default())?;
            let corpus = load_esd_corpus(&esds, &graphs)?;
            let rows = parse_pairs(&pairs, &graphs)?
                .iter()
                .map(|(a, b)| {
                    delta_original(&corpus, graphs.observational(), a, b).with_context(|| format!("pair {a} {b}"))
                })
                .collect::<Result<Vec<_>>>()?;
            print_estimates(&rows)?;
            Ok(())
        }
    }
}

fn load_bundles(paths: &[PathBuf]) -> Result<Vec<ActivityGraphs>, Failure> {
    let mut seen = BTreeMap::new();
    let mut out = Vec::new();
    for p in paths {
        let g = load_bundle(p, LoadOptions::default())?;
        if let Some(prev) = seen.insert(g.activity.clone(), p.clone()) {
            return Err(Failure::Validation(anyhow!(
                "activity {:?} is defined by both {} and {}",
                g.activity,
                prev.display(),
                p.display()
            )));
        }
        out.push(g);
    }
    Ok(out)
}

fn require_bundles(graphs: &[ActivityGraphs], what: &str) -> Result<()> {
    if graphs.is_empty() {
        bail!("{what} needs at least one --bundle");
    }
    Ok(())
}

fn build_scorer(args: &ScorerArgs, graphs: &[ActivityGraphs]) -> Result<(Box<dyn ScorerSet>, String)> {
    let spec = args.scorer.as_deref().ok_or_else(|| anyhow!("--scorer is required"))?;
    Ok(match spec {
        "uniform" => (Box::new(UniformScorer), "uniform".into()),
        "oracle" | "anti-oracle" => {
            require_bundles(graphs, "the oracle scorer")?;
            let mut map = PerActivity::default();
            for g in graphs {
                let mut o = OracleScorer::new(g.causal().clone(), args.margin)?;
                if spec == "anti-oracle" {
                    o = o.inverted();
                }
                map.0.insert(g.activity.clone(), Box::new(o) as Box<dyn Scorer>);
            }
            (Box::new(map), spec.into())
        }
        _ => {
            let mut config = RemoteScorerConfig::new("", args.model.clone()).with_env()?;
            if spec != "remote" {
                config.endpoint = spec.to_string();
            }
            let scorer = RemoteScorer::new(config)?;
            let name = scorer.name();
            (Box::new(scorer), name)
        }
    })
}

fn finish(run: EvalRun, common: &EvalCommon) -> Result<(), Failure> {
    let failures: Vec<_> = run.failures().collect();
    if !failures.is_empty() {
        eprintln!("warning: {} triplet(s) failed and were excluded", failures.len());
        for r in failures.iter().take(5) {
            eprintln!("  {}", r.error.as_deref().unwrap_or_default());
        }
    }
    if let Some(path) = &common.records {
        write_records(path, &run.records)?;
    }
    let reports = run.reports()?;
    out(&render_report(&reports, common.format.into())?)?;
    Ok(())
}

fn options(common: &EvalCommon, default_label: String) -> EvalOptions {
    EvalOptions {
        scheme: common.label.clone().unwrap_or(default_label),
        checkpoint: common.checkpoint.clone(),
    }
}

fn read_dataset(path: &Path) -> Result<Dataset, Failure> {
    Ok(Dataset::read(path).with_context(|| format!("reading dataset {}", path.display()))?)
}

fn eval(command: EvalCommand) -> Result<(), Failure> {
    match command {
        EvalCommand::Mcqa {
            common,
            scorer,
            template,
        } => {
            let dataset = read_dataset(&common.dataset)?;
            let graphs = load_bundles(&common.bundles)?;
            let (scorers, name) = build_scorer(&scorer, &graphs)?;
            let (template, tname) = match template {
                TemplateArg::V1 => (McqaTemplate::V1, "v1"),
                TemplateArg::V2 => (McqaTemplate::V2, "v2"),
            };
            let config = McqaConfig {
                template,
                examples: None,
            };
            let opts = options(&common, format!("mcqa-{tname}:{name}"));
            let run = evaluate_mcqa(&dataset, scorers.as_ref(), &config, &opts)?;
            finish(run, &common)
        }
        EvalCommand::Delta {
            common,
            scorer,
            scheme,
            esds,
            trajectories,
            seed,
            temporal_template,
        } => {
            let dataset = read_dataset(&common.dataset)?;
            let graphs = load_bundles(&common.bundles)?;
            require_bundles(&graphs, &format!("scheme {scheme}"))?;
            let refs: Vec<&ActivityGraphs> = graphs.iter().collect();
            let precedence = Precedence::new(refs.iter().copied())?;
            let scorer_name = scorer.scorer.clone().unwrap_or_default();
            let label = match scheme {
                EstimateScheme::Temporal | EstimateScheme::BackdoorLm => format!("delta-{scheme}:{scorer_name}"),
                _ => format!("delta-{scheme}"),
            };
            let opts = options(&common, label);
            let corpora: Vec<EsdCorpus>;
            let lm: Box<dyn ScorerSet>;
            let source: Box<dyn DeltaSource + '_> = match scheme {
                EstimateScheme::Node => Box::new(GraphDeltas::new(TransitionScheme::NodeUniform, &refs)?),
                EstimateScheme::Trajectory => Box::new(GraphDeltas::new(TransitionScheme::TrajectoryUniform, &refs)?),
                EstimateScheme::Oracle => Box::new(OracleDeltas::new(&refs)),
                EstimateScheme::Original => {
                    if esds.len() != graphs.len() {
                        return Err(Failure::Runtime(anyhow!("scheme o needs one --esds file per --bundle")));
                    }
                    corpora = graphs
                        .iter()
                        .zip(&esds)
                        .map(|(g, p)| load_esd_corpus(p, g))
                        .collect::<Result<_, _>>()?;
                    let pairs: Vec<_> = refs.iter().copied().zip(corpora.iter()).collect();
                    Box::new(OriginalDeltas::new(&pairs))
                }
                EstimateScheme::BackdoorLm => {
                    lm = build_scorer(&scorer, &graphs)?.0;
                    let config = BackdoorConfig { trajectories, seed };
                    Box::new(BackdoorDeltas::new(lm.as_ref(), &refs, config)?)
                }
                EstimateScheme::Temporal => {
                    lm = build_scorer(&scorer, &graphs)?.0;
                    let t = match temporal_template {
                        TemporalArg::Masked => TemporalTemplate::Masked,
                        TemporalArg::Mcqa => TemporalTemplate::Mcqa,
                    };
                    Box::new(TemporalDeltas::new(lm.as_ref(), &refs, t))
                }
            };
            let run = evaluate_delta(&dataset, source.as_ref(), &precedence, &opts)?;
            finish(run, &common)
        }
    }
}
