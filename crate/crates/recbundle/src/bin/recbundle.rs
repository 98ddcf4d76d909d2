//! Command-line entry points: train, diagnose, simulate, report.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use recbundle::error::Error;
use recbundle::fiber::{load_model, save_model};
use recbundle::ingest::{build_user_graph, filter_min_length, parse_interactions, LogFormat};
use recbundle::report::{diagnose, read_report_json, report_to_csv, write_plotdata, write_report_json};
use recbundle::simulate::{cocoon_report, gen_world, run_loop, sim_model, write_trace_csv, write_trace_json, SimConfig};
use recbundle::training::{train, HolMode, TrainConfig};

const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "recbundle", version, about = "Geometric diagnostics for recommender feedback loops", disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the reference fiber model with geometric regularizers.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "generic_csv")]
        format: LogFormat,
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 0.1)]
        step_size: f64,
        #[arg(long, default_value_t = 0.0)]
        lambda_curv: f64,
        #[arg(long, default_value_t = 0.0)]
        lambda_hol: f64,
        #[arg(long, default_value = "off")]
        hol_mode: HolMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        graph_k: usize,
        #[arg(long, default_value_t = 1)]
        min_common: usize,
        #[arg(long, default_value_t = 2)]
        min_len: usize,
        #[arg(long, default_value_t = 1)]
        curvature_every: usize,
        #[arg(long, default_value_t = 50)]
        bptt_window: usize,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        /// Output model JSON.
        #[arg(long)]
        out: PathBuf,
        /// Optional training-trace CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Compute the geometry report for a trained model over a dataset.
    Diagnose {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "generic_csv")]
        format: LogFormat,
        #[arg(long, default_value_t = 5)]
        graph_k: usize,
        #[arg(long, default_value_t = 1)]
        min_common: usize,
        #[arg(long, default_value_t = 1)]
        min_len: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the closed interaction-recommendation-feedback loop.
    Simulate {
        #[arg(long, default_value_t = 200)]
        users: usize,
        #[arg(long, default_value_t = 500)]
        items: usize,
        #[arg(long, default_value_t = 8)]
        topics: usize,
        #[arg(long, default_value_t = 100)]
        rounds: usize,
        #[arg(long, default_value_t = 10)]
        slate: usize,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        #[arg(long, default_value_t = 0.3)]
        concentration: f64,
        #[arg(long, default_value_t = 0.03)]
        choice_temp: f64,
        #[arg(long, default_value_t = 0.001)]
        online_step_size: f64,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output trace JSON.
        #[arg(long)]
        out: PathBuf,
        /// Optional per-user CSV table.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Re-emit a saved geometry report as json, csv, or plotdata.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        format: String,
        /// Output path (required for plotdata; stdout otherwise).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train {
            data,
            format,
            dim,
            epochs,
            step_size,
            lambda_curv,
            lambda_hol,
            hol_mode,
            seed,
            graph_k,
            min_common,
            min_len,
            curvature_every,
            bptt_window,
            tau,
            out,
            trace,
        } => {
            let ds = parse_interactions(&data, format)?;
            let ds = filter_min_length(&ds, min_len.max(2))?;
            let graph = build_user_graph(&ds, graph_k, min_common)?;
            let cfg = TrainConfig {
                dim,
                epochs,
                step_size,
                lambda_curv,
                lambda_hol,
                hol_mode,
                seed,
                curvature_every,
                bptt_window,
                tau,
            };
            let (model, conn, train_trace) = train(&ds, &graph, &cfg)?;
            save_model(&model, &conn, &out)?;
            if let Some(trace_path) = trace {
                train_trace.write_csv(&trace_path)?;
            }
            if let Some(last) = train_trace.epochs.last() {
                println!(
                    "trained {} epochs: task_loss={:.6} mean_omega={:.6} mean_gbi={:.6}",
                    train_trace.epochs.len(),
                    last.task_loss,
                    last.mean_omega,
                    last.mean_gbi
                );
            }
            println!("model written to {}", out.display());
            Ok(())
        }
        Command::Diagnose { model, data, format, graph_k, min_common, min_len, out } => {
            let (fiber_model, conn) = load_model(&model)?;
            let ds = parse_interactions(&data, format)?;
            let ds = filter_min_length(&ds, min_len)?;
            if ds.n_items > fiber_model.n_items {
                return Err(Error::Data(format!(
                    "dataset has {} items but model supports {}",
                    ds.n_items, fiber_model.n_items
                )));
            }
            let graph = build_user_graph(&ds, graph_k, min_common)?;
            let provenance = serde_json::json!({
                "toolkit_version": TOOLKIT_VERSION,
                "model_path": model.display().to_string(),
                "data_path": data.display().to_string(),
                "graph_k": graph_k,
                "min_common": min_common,
                "min_len": min_len,
                "entropy_proxy": "top-10 renormalized softmax, nats",
                "graph_construction": "kNN over Jaccard similarity of item sets",
            });
            let report = diagnose(
                &fiber_model,
                &conn,
                &ds,
                &graph,
                &data.display().to_string(),
                "tanh-recurrence reference",
                provenance,
            )?;
            write_report_json(&report, &out)?;
            println!(
                "diagnosed {} users: mean_omega={:.6} mean_rho={:.6} mean_gbi={:.6}",
                report.per_user.len(),
                report.mean_omega,
                report.mean_rho,
                report.mean_gbi
            );
            println!("report written to {}", out.display());
            Ok(())
        }
        Command::Simulate {
            users,
            items,
            topics,
            rounds,
            slate,
            epsilon,
            concentration,
            choice_temp,
            online_step_size,
            dim,
            seed,
            out,
            csv,
        } => {
            let world = gen_world(users, items, topics, concentration, seed)?;
            let model = sim_model(&world, dim, seed)?;
            let conn = recbundle::fiber::Connection::identity(dim, 1.0)?;
            let cfg = SimConfig {
                rounds,
                slate_size: slate,
                epsilon,
                choice_temp,
                online_step_size,
                seed: seed.wrapping_add(1),
            };
            let trace = run_loop(&world, &model, &conn, &cfg)?;
            write_trace_json(&trace, &out)?;
            if let Some(csv_path) = csv {
                write_trace_csv(&trace, &csv_path)?;
            }
            let summary = cocoon_report(&trace)?;
            println!(
                "simulated {} users x {} rounds: mean_gbi={:.4} mean_rho={:.4} mean_entropy={:.4}",
                users, rounds, summary.mean_gbi, summary.mean_rho, summary.mean_entropy
            );
            match summary.pearson_gbi_entropy {
                Some(c) => println!("pearson(gbi, entropy) = {c:.4}"),
                None => println!("pearson(gbi, entropy) undefined (degenerate variance)"),
            }
            match summary.pearson_rho_entropy {
                Some(c) => println!("pearson(rho, entropy) = {c:.4}"),
                None => println!("pearson(rho, entropy) undefined (degenerate variance)"),
            }
            println!("trace written to {}", out.display());
            Ok(())
        }
        Command::Report { input, format, out } => {
            let report = read_report_json(&input)?;
            match format.as_str() {
                "json" => {
                    let text = serde_json::to_string_pretty(&report)
                        .map_err(|e| Error::Data(format!("report serialization failed: {e}")))?;
                    match out {
                        Some(path) => std::fs::write(&path, text)
                            .map_err(|e| Error::Io { path: path.display().to_string(), source: e })?,
                        None => println!("{text}"),
                    }
                }
                "csv" => {
                    let text = report_to_csv(&report);
                    match out {
                        Some(path) => std::fs::write(&path, text)
                            .map_err(|e| Error::Io { path: path.display().to_string(), source: e })?,
                        None => print!("{text}"),
                    }
                }
                "plotdata" => {
                    let prefix = out.ok_or_else(|| {
                        Error::Usage("--out is required for --format plotdata".into())
                    })?;
                    write_plotdata(&report, &prefix)?;
                    println!(
                        "wrote {} and {}",
                        prefix.with_extension("gbi_entropy.dat").display(),
                        prefix.with_extension("rho_entropy.dat").display()
                    );
                }
                other => return Err(Error::Usage(format!("unknown report format '{other}'"))),
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are not usage errors
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
