mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use ignn_core::adaptive::{predict_schedule, Decision, ScheduleState, ThresholdMode, DEFAULT_FIRST_TRIGGERS};
use ignn_core::formats::{self, SavedState};
use ignn_core::oracle::verify_state;
use ignn_core::synth::{sbm_init, sbm_migrate, sparse_features, SbmConfig};
use ignn_core::{apply_events, batch_update, propagate_all, EventLog, PropagationConfig, PropagationState, UpdateReport};

use manifest::RunManifest;

const EXIT_OTHER: u8 = 1;
const EXIT_PARSE: u8 = 2;
const EXIT_INVARIANT: u8 = 3;
const EXIT_BOUND: u8 = 4;
const EXIT_ORACLE_INFEASIBLE: u8 = 5;

#[derive(Parser)]
#[command(name = "ignn", version, about = "Incremental approximate graph propagation")]
struct Cli {
    /// Worker threads for column-parallel work; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0, env = "IGNN_THREADS")]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Propagate a signal over a graph from scratch and save the state.
    Init {
        #[arg(long, env = "IGNN_GRAPH")]
        graph: PathBuf,
        /// Signal matrix (n x d) in the binary matrix format.
        #[arg(long, env = "IGNN_FEATURES")]
        features: PathBuf,
        #[arg(long, env = "IGNN_ALPHA")]
        alpha: f64,
        #[arg(long, env = "IGNN_BETA")]
        beta: f64,
        #[arg(long, env = "IGNN_EPSILON")]
        epsilon: f64,
        #[arg(long, env = "IGNN_OUT_STATE")]
        out_state: PathBuf,
    },
    /// Apply an event file to a saved state.
    Apply {
        #[arg(long, env = "IGNN_STATE")]
        state: PathBuf,
        #[arg(long, env = "IGNN_EVENTS")]
        events: PathBuf,
        /// Apply events in batches of this size instead of one by one.
        #[arg(long, env = "IGNN_BATCH")]
        batch: Option<usize>,
        /// Also propagate the final graph from scratch and report its push count.
        #[arg(long, env = "IGNN_COMPARE_SCRATCH")]
        compare_scratch: bool,
        #[arg(long, env = "IGNN_OUT_STATE")]
        out_state: PathBuf,
    },
    /// Check a saved state against the exact dense solution.
    Verify {
        #[arg(long, env = "IGNN_STATE")]
        state: PathBuf,
        /// Check against this graph instead of the one saved with the state.
        #[arg(long, env = "IGNN_GRAPH")]
        graph: Option<PathBuf>,
        /// Check against this signal instead of the one saved with the state.
        #[arg(long, env = "IGNN_FEATURES")]
        features: Option<PathBuf>,
    },
    /// Generate a dynamic stochastic block model graph with migrating nodes.
    GenSbm {
        #[arg(long, env = "IGNN_NODES")]
        nodes: usize,
        #[arg(long, env = "IGNN_BLOCKS")]
        blocks: usize,
        #[arg(long, env = "IGNN_INTRA")]
        intra: f64,
        #[arg(long, env = "IGNN_INTER")]
        inter: f64,
        #[arg(long, env = "IGNN_SNAPSHOTS")]
        snapshots: usize,
        #[arg(long, env = "IGNN_MIGRANTS")]
        migrants: usize,
        #[arg(long, env = "IGNN_SEED")]
        seed: u64,
        /// Columns of the generated feature matrix.
        #[arg(long, default_value_t = 16, env = "IGNN_DIMS")]
        dims: usize,
        #[arg(long, env = "IGNN_OUT_DIR")]
        out_dir: PathBuf,
    },
    /// Fit the drift curve and predict the full retraining schedule.
    Schedule {
        #[arg(long, env = "IGNN_DRIFT_LOG")]
        drift_log: PathBuf,
        #[arg(long, env = "IGNN_THETA")]
        theta: f64,
        #[arg(long, value_enum, default_value_t = Mode::Abs, env = "IGNN_MODE")]
        mode: Mode,
        #[arg(long, env = "IGNN_BUDGET")]
        budget: usize,
        #[arg(long, env = "IGNN_TOTAL_EVENTS")]
        total_events: u64,
        /// Retrains observed before the curve is fitted.
        #[arg(long, default_value_t = DEFAULT_FIRST_TRIGGERS, env = "IGNN_FIRST_TRIGGERS")]
        first_triggers: usize,
        #[arg(long, env = "IGNN_OUT")]
        out: PathBuf,
    },
    /// Export the estimate matrix of a saved state.
    Snapshot {
        #[arg(long, env = "IGNN_STATE")]
        state: PathBuf,
        #[arg(long, env = "IGNN_OUT_MATRIX")]
        out_matrix: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Abs,
    Rel,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = match configure_threads(cli.threads) {
        Ok(t) => t,
        Err(e) => return fail(&e),
    };
    let mut manifest = RunManifest::new(command_name(&cli.command), threads);
    let started = Instant::now();
    let outcome = run(cli.command, &mut manifest);
    manifest.wall("total", started.elapsed());
    print!("{}", manifest.render());
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => fail(&e),
    }
}

fn fail(e: &anyhow::Error) -> ExitCode {
    eprintln!("error: {e:#}");
    ExitCode::from(exit_code(e))
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<ignn_core::Error>()) {
        Some(ignn_core::Error::Parse { .. } | ignn_core::Error::MatrixFormat(_)) => EXIT_PARSE,
        Some(ignn_core::Error::OracleInfeasible { .. }) => EXIT_ORACLE_INFEASIBLE,
        _ => EXIT_OTHER,
    }
}

#[cfg(feature = "parallel")]
fn configure_threads(threads: usize) -> Result<usize> {
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("building the worker pool")?;
    }
    Ok(rayon::current_num_threads())
}

#[cfg(not(feature = "parallel"))]
fn configure_threads(_threads: usize) -> Result<usize> {
    Ok(1)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Init { .. } => "init",
        Command::Apply { .. } => "apply",
        Command::Verify { .. } => "verify",
        Command::GenSbm { .. } => "gen-sbm",
        Command::Schedule { .. } => "schedule",
        Command::Snapshot { .. } => "snapshot",
    }
}

fn run(command: Command, m: &mut RunManifest) -> Result<u8> {
    match command {
        Command::Init { graph, features, alpha, beta, epsilon, out_state } => {
            init(&graph, &features, PropagationConfig::new(alpha, beta, epsilon)?, &out_state, m)
        }
        Command::Apply { state, events, batch, compare_scratch, out_state } => {
            apply(&state, &events, batch, compare_scratch, &out_state, m)
        }
        Command::Verify { state, graph, features } => verify(&state, graph.as_deref(), features.as_deref(), m),
        Command::GenSbm { nodes, blocks, intra, inter, snapshots, migrants, seed, dims, out_dir } => {
            let cfg = SbmConfig {
                nodes,
                blocks,
                intra_degree: intra,
                inter_degree: inter,
                migrants_per_step: migrants,
                seed,
            };
            gen_sbm(&cfg, snapshots, dims, &out_dir, m)
        }
        Command::Schedule { drift_log, theta, mode, budget, total_events, first_triggers, out } => {
            schedule(&drift_log, theta, mode, budget, total_events, first_triggers, &out, m)
        }
        Command::Snapshot { state, out_matrix } => snapshot(&state, &out_matrix, m),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_graph(path: &Path, m: &mut RunManifest) -> Result<ignn_core::Graph> {
    m.digest_file("graph", path)?;
    let parsed = formats::parse_edge_list(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))?;
    m.set("graph.duplicate_edges", parsed.duplicates);
    if parsed.duplicates > 0 {
        eprintln!("warning: {} duplicate edge lines in {}", parsed.duplicates, path.display());
    }
    Ok(parsed.graph)
}

fn load_features(path: &Path, m: &mut RunManifest) -> Result<ignn_core::ColumnMatrix> {
    m.digest_file("features", path)?;
    formats::load_matrix(path).with_context(|| format!("parsing {}", path.display()))
}

fn load_state(dir: &Path, m: &mut RunManifest) -> Result<SavedState> {
    for (name, file) in [
        ("state.header", formats::STATE_HEADER_FILE),
        ("state.graph", formats::GRAPH_FILE),
        ("state.estimate", formats::ESTIMATE_FILE),
        ("state.residual", formats::RESIDUAL_FILE),
        ("state.signal", formats::SIGNAL_FILE),
    ] {
        m.digest_file(name, &dir.join(file))?;
    }
    let saved = formats::load_state(dir).with_context(|| format!("loading state from {}", dir.display()))?;
    m.config(&saved.config);
    m.set("nodes", saved.graph.node_count());
    m.set("edges", saved.graph.edge_count());
    m.set("dims", saved.state.dims());
    Ok(saved)
}

fn save_state(dir: &Path, saved: &SavedState, m: &RunManifest) -> Result<()> {
    formats::save_state(dir, &saved.config, &saved.graph, &saved.state)
        .with_context(|| format!("writing state to {}", dir.display()))?;
    m.write_into(dir)
}

fn init(graph: &Path, features: &Path, config: PropagationConfig, out: &Path, m: &mut RunManifest) -> Result<u8> {
    m.config(&config);
    let started = Instant::now();
    let graph = load_graph(graph, m)?;
    let signal = load_features(features, m)?;
    if signal.rows() != graph.node_count() {
        bail!("features have {} rows but the graph has {} nodes", signal.rows(), graph.node_count());
    }
    m.set("nodes", graph.node_count());
    m.set("edges", graph.edge_count());
    m.set("dims", signal.cols());
    m.wall("load", started.elapsed());
    let mut state = PropagationState::new(&graph, signal)?;
    let stats = propagate_all(&graph, &config, &mut state)?;
    m.phase("init", &stats);
    save_state(out, &SavedState { config, graph, state }, m)?;
    Ok(0)
}

fn apply(
    dir: &Path,
    events: &Path,
    batch: Option<usize>,
    compare_scratch: bool,
    out: &Path,
    m: &mut RunManifest,
) -> Result<u8> {
    let mut saved = load_state(dir, m)?;
    m.digest_file("events", events)?;
    let log: EventLog = formats::parse_events(&read_text(events)?).with_context(|| format!("parsing {}", events.display()))?;
    if log.node_count != saved.graph.node_count() {
        bail!("event file is for {} nodes but the state has {}", log.node_count, saved.graph.node_count());
    }
    let SavedState { config, graph, state } = &mut saved;
    let report = match batch {
        None => {
            m.set("mode", "sequential");
            apply_events(graph, state, config, &log.events)?
        }
        Some(0) => bail!("--batch must be at least 1"),
        Some(size) => {
            m.set("mode", format!("batch:{size}"));
            let mut total = UpdateReport::default();
            for (k, chunk) in log.events.chunks(size).enumerate() {
                let r = batch_update(graph, state, config, chunk).map_err(|e| match e {
                    ignn_core::Error::InvalidEvent { index, source } => {
                        ignn_core::Error::InvalidEvent { index: k * size + index, source }
                    }
                    other => other,
                })?;
                total.events_applied += r.events_applied;
                total.residual_increments += r.residual_increments;
                total.push_stats.merge(&r.push_stats);
            }
            total
        }
    };
    m.set("events", report.events_applied);
    m.set("residual_increments", report.residual_increments);
    m.phase("apply", &report.push_stats);
    let per_event = if report.events_applied > 0 {
        report.push_stats.pushes as f64 / report.events_applied as f64
    } else {
        0.0
    };
    m.set("pushes_per_event", per_event);
    if compare_scratch {
        let mut scratch = PropagationState::new(graph, state.signal().clone())?;
        let stats = propagate_all(graph, config, &mut scratch)?;
        m.phase("scratch", &stats);
    }
    save_state(out, &saved, m)?;
    Ok(0)
}

fn verify(dir: &Path, graph: Option<&Path>, features: Option<&Path>, m: &mut RunManifest) -> Result<u8> {
    let saved = load_state(dir, m)?;
    let g = match graph {
        Some(path) => load_graph(path, m)?,
        None => saved.graph,
    };
    let state = match features {
        Some(path) => {
            let signal = load_features(path, m)?;
            PropagationState::from_parts(saved.state.estimate().clone(), saved.state.residual().clone(), signal)?
        }
        None => saved.state,
    };
    let started = Instant::now();
    let report = verify_state(&g, &saved.config, &state)?;
    m.wall("oracle", started.elapsed());
    m.set("identity_residual", report.max_identity_residual);
    m.set("worst_identity_column", report.worst_identity_column);
    m.set("bound_violation", report.max_bound_violation);
    m.set("worst_bound_column", report.worst_bound_column);
    m.set("worst_bound_node", report.worst_bound_node);
    let (status, code) = if !report.invariant_ok {
        ("invariant_violation", EXIT_INVARIANT)
    } else if !report.bound_ok {
        ("bound_violation", EXIT_BOUND)
    } else {
        ("ok", 0)
    };
    m.set("status", status);
    if code != 0 {
        eprintln!(
            "verification failed: {status} (worst identity column {}, worst bound node {} in column {})",
            report.worst_identity_column, report.worst_bound_node, report.worst_bound_column
        );
    }
    Ok(code)
}

fn events_file_name(step: usize) -> String {
    format!("events_{step}.txt")
}

fn labels_file_name(step: usize) -> String {
    format!("labels_{step}.txt")
}

fn gen_sbm(cfg: &SbmConfig, snapshots: usize, dims: usize, out: &Path, m: &mut RunManifest) -> Result<u8> {
    m.set("seed", cfg.seed);
    m.set("nodes", cfg.nodes);
    m.set("blocks", cfg.blocks);
    m.set("intra_degree", cfg.intra_degree);
    m.set("inter_degree", cfg.inter_degree);
    m.set("migrants_per_step", cfg.migrants_per_step);
    m.set("snapshots", snapshots);
    m.set("dims", dims);
    let started = Instant::now();
    let (mut g, mut labels, mut rng) = sbm_init(cfg)?;
    let features = sparse_features(cfg.nodes, dims, &mut rng);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join(formats::GRAPH_FILE), formats::write_edge_list(&g))?;
    fs::write(out.join(labels_file_name(0)), formats::write_labels(&labels.labels))?;
    formats::save_matrix(&out.join("features.ignn"), &features)?;
    m.set("edges.0", g.edge_count());
    let mut total_events = 0;
    for step in 1..=snapshots {
        let events = sbm_migrate(&g, &mut labels, cfg, &mut rng);
        let log = EventLog { node_count: cfg.nodes, events };
        log.replay(&mut g)?;
        total_events += log.len();
        fs::write(out.join(events_file_name(step)), formats::write_events(&log))?;
        fs::write(out.join(labels_file_name(step)), formats::write_labels(&labels.labels))?;
        m.set(format!("events.{step}"), log.len());
    }
    m.set("events.total", total_events);
    m.set("edges.final", g.edge_count());
    m.wall("generate", started.elapsed());
    m.write_into(out)?;
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn schedule(
    drift_log: &Path,
    theta: f64,
    mode: Mode,
    budget: usize,
    total_events: u64,
    first_triggers: usize,
    out: &Path,
    m: &mut RunManifest,
) -> Result<u8> {
    m.digest_file("drift_log", drift_log)?;
    let records = formats::parse_drift_log(&read_text(drift_log)?).with_context(|| format!("parsing {}", drift_log.display()))?;
    let mode = match mode {
        Mode::Abs => ThresholdMode::Absolute,
        Mode::Rel => ThresholdMode::Relative,
    };
    m.set("theta", theta);
    m.set("mode", if mode == ThresholdMode::Absolute { "abs" } else { "rel" });
    m.set("budget", budget);
    m.set("total_events", total_events);
    let mut sched = ScheduleState::new(theta, mode, budget)?;
    let wanted = first_triggers.min(budget);
    for (line, r) in records.iter().enumerate() {
        if sched.observed_triggers >= wanted {
            break;
        }
        if mode == ThresholdMode::Relative {
            let baseline = r
                .baseline
                .with_context(|| format!("relative mode needs a baseline column (record {})", line + 1))?;
            sched.set_baseline_norm(baseline);
        }
        if let Decision::Wait { exhausted: true } = sched.observe(r.sample, true)? {
            break;
        }
    }
    m.set("samples_observed", sched.drift_history.len());
    m.set("observed_triggers", sched.observed_triggers);
    let mut indices = sched.trigger_times.clone();
    if sched.remaining() > 0 {
        let fit = sched.refit()?;
        m.set("fit.a", fit.a);
        m.set("fit.b", fit.b);
        m.set("fit.rms", fit.rms);
        let predicted = predict_schedule(&sched, total_events, &fit)?;
        m.set("clamped", predicted.clamped);
        indices.extend(predicted.indices);
    }
    m.set("retrains", indices.len());
    fs::write(out, formats::write_schedule(&indices)).with_context(|| format!("writing {}", out.display()))?;
    Ok(0)
}

fn snapshot(dir: &Path, out: &Path, m: &mut RunManifest) -> Result<u8> {
    let saved = load_state(dir, m)?;
    formats::save_matrix(out, saved.state.embedding()).with_context(|| format!("writing {}", out.display()))?;
    Ok(0)
}
