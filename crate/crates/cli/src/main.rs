//! GNGARCH command-line interface.
//!
//! Exit codes: 0 success, 2 configuration/validation error, 3 numeric
//! failure or divergence, 4 I/O error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gngarch::GngarchError;

#[derive(Parser)]
#[command(name = "gngarch", version, about = "Generalised Network GARCH toolkit")]
struct Cli {
    /// Print progress information to stderr.
    #[arg(long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a GNGARCH/GTN-GARCH path and write panel, variance and
    /// covariance traces.
    Simulate {
        /// JSON config: graph, orders, params, t_total, burn_frac, seed.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit model parameters to a return panel.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        /// Loss function: mse, qlike or nll.
        #[arg(long)]
        loss: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Optional JSON file with fit settings, orders and the initial point.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Report destination (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Forecast conditional variances and covariances past the panel end.
    Forecast {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        /// Fit report or model spec JSON.
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        horizon: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a correlation-of-correlation network from a price panel.
    Network {
        #[arg(long)]
        prices: PathBuf,
        #[arg(long, default_value_t = 0.70)]
        quantile: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stylised-fact diagnostics and pre-modelling tests.
    Diagnose {
        #[arg(long)]
        panel: PathBuf,
        /// Fit report for model-implied diagnostics (needs --graph).
        #[arg(long)]
        fit: Option<PathBuf>,
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        h_max: usize,
        #[arg(long, default_value_t = 3)]
        r_max: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify the VARMA identities on a simulated trace.
    VarmaCheck {
        #[arg(long)]
        panel: PathBuf,
        #[arg(long)]
        variance: PathBuf,
        #[arg(long)]
        cov_trace: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        /// Model spec JSON (orders + params).
        #[arg(long)]
        params: PathBuf,
        /// Residuals JSON destination.
        #[arg(long)]
        out: PathBuf,
        /// Optional directory for dense transfer-matrix dumps.
        #[arg(long)]
        dump_transfer: Option<PathBuf>,
    },
    /// Aligned per-node variance traces: proxy, rescaled GNGARCH,
    /// RiskMetrics and univariate GARCH.
    Compare {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        /// Fit report or model spec JSON.
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value_t = 0.94)]
        lambda: f64,
        #[arg(long, default_value_t = 252)]
        window: usize,
        /// Epochs for the per-node univariate GARCH benchmark fits.
        #[arg(long, default_value_t = 500)]
        garch_epochs: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code_for(err: &GngarchError) -> u8 {
    match err {
        GngarchError::Invalid(_)
        | GngarchError::Dimension(_)
        | GngarchError::InsufficientHistory { .. }
        | GngarchError::Json(_) => 2,
        GngarchError::Divergence { .. } | GngarchError::Numeric(_) => 3,
        GngarchError::Io(_) => 4,
        GngarchError::Csv(e) => {
            if e.is_io_error() {
                4
            } else {
                2
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let verbose = cli.verbose;
    let result = match cli.command {
        Command::Simulate { config, out, seed } => commands::simulate(&config, &out, seed, verbose),
        Command::Fit { data, graph, loss, epochs, lr, config, out } => {
            commands::fit(&data, &graph, loss.as_deref(), epochs, lr, config.as_deref(), &out, verbose)
        }
        Command::Forecast { data, graph, params, horizon, out } => {
            commands::forecast(&data, &graph, &params, horizon, &out)
        }
        Command::Network { prices, quantile, out } => commands::network(&prices, quantile, &out),
        Command::Diagnose { panel, fit, graph, h_max, r_max, out } => {
            commands::diagnose(&panel, fit.as_deref(), graph.as_deref(), h_max, r_max, &out)
        }
        Command::VarmaCheck { panel, variance, cov_trace, graph, params, out, dump_transfer } => {
            commands::varma_check(
                &panel,
                &variance,
                &cov_trace,
                &graph,
                &params,
                &out,
                dump_transfer.as_deref(),
            )
        }
        Command::Compare { data, graph, params, lambda, window, garch_epochs, out } => {
            commands::compare(&data, &graph, &params, lambda, window, garch_epochs, &out, verbose)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
