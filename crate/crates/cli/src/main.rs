mod proptest_suite;
mod settings;

use clap::{Args, Parser, Subcommand};
use settings::Settings;
use sgot_core::bench::{bench_scaling, BenchMethod, BenchSpec};
use sgot_core::eval::{
    distance_matrix, kernel_matrix, matrix_to_text, run_protocol, EvalProtocol,
};
use sgot_core::sgcn::SgcnParams;
use sgot_core::train::{train, write_loss_history};
use sgot_core::{GraphDataset64, SgcnParams64};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "sgot",
    version,
    about = "Graph metric learning with sliced optimal transport"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default, Clone)]
struct CommonArgs {
    /// TUD-format dataset directory
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Feature recipe: raw-continuous | one-hot-labels | degree | extended-concat
    #[arg(long)]
    recipe: Option<String>,
    /// Clamp degrees above this value before one-hot encoding
    #[arg(long)]
    degree_cap: Option<usize>,
    /// Standardize continuous attribute columns
    #[arg(long)]
    standardize: bool,
    /// Distance: rpw2 | sw2 | pw2
    #[arg(long)]
    distance: Option<String>,
    /// Loss: nccml | nca
    #[arg(long)]
    loss: Option<String>,
    /// Convolution depth r
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Use symmetric degree normalization of A + I
    #[arg(long)]
    normalize_adjacency: bool,
    /// RPW2 implementation: sequential | quadratic
    #[arg(long = "impl")]
    implementation: Option<String>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flat key=value config file; CLI flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train Theta on a whole dataset and save the checkpoint
    Train(CommonArgs),
    /// Run the full cross-validation protocol and write the report
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        folds: Option<usize>,
        /// Extend the depth grid from {1..4} to {1..7}
        #[arg(long)]
        extended_depth: bool,
    },
    /// Export the pairwise distance matrix
    Distances {
        #[command(flatten)]
        common: CommonArgs,
        /// Saved Theta checkpoint; a fresh seeded init is used when absent
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Export kernel matrices K = exp(-lambda d)
    Kernel {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Single lambda; the full grid is exported when absent
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Runtime scaling benchmark over distribution sizes
    Bench {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated distribution sizes
        #[arg(long)]
        sizes: Option<String>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        reps: Option<usize>,
        /// Comma-separated subset of rpw2-seq,rpw2-quad,sw2,pw2,w2-oracle
        #[arg(long)]
        methods: Option<String>,
        /// Memory budget in GiB for the quadratic cost matrix
        #[arg(long)]
        budget_gib: Option<usize>,
    },
    /// Run the seeded invariant suite; exits 0 iff every property holds
    Proptest {
        #[arg(long)]
        seed: Option<u64>,
        /// Instances per property
        #[arg(long, default_value_t = 200)]
        cases: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's own help/version output still exits 0
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    // the invariant suite deliberately probes degenerate inputs; keep the
    // per-instance warnings out of its pass/fail output
    let default_level = match cli.command {
        Command::Proptest { .. } => "error",
        _ => "warn",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default_level))
        .init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> sgot_core::Result<()> {
    match command {
        Command::Train(common) => cmd_train(&Settings::resolve(&common)?),
        Command::Evaluate {
            common,
            runs,
            folds,
            extended_depth,
        } => cmd_evaluate(&Settings::resolve(&common)?, runs, folds, extended_depth),
        Command::Distances { common, checkpoint } => {
            cmd_distances(&Settings::resolve(&common)?, checkpoint.as_deref())
        }
        Command::Kernel {
            common,
            checkpoint,
            lambda,
        } => cmd_kernel(&Settings::resolve(&common)?, checkpoint.as_deref(), lambda),
        Command::Bench {
            common,
            sizes,
            dim,
            reps,
            methods,
            budget_gib,
        } => cmd_bench(
            &Settings::resolve(&common)?,
            sizes.as_deref(),
            dim,
            reps,
            methods.as_deref(),
            budget_gib,
        ),
        Command::Proptest { seed, cases } => proptest_suite::run(seed.unwrap_or(0), cases),
    }
}

fn load_params(
    checkpoint: Option<&std::path::Path>,
    dataset: &GraphDataset64,
    settings: &Settings,
) -> sgot_core::Result<SgcnParams64> {
    match checkpoint {
        Some(path) => SgcnParams::load(path),
        None => {
            let q = dataset.attr_dim();
            SgcnParams::init(
                q,
                q.min(5),
                settings.depth,
                settings.normalize_adjacency,
                settings.seed,
            )
        }
    }
}

fn cmd_train(settings: &Settings) -> sgot_core::Result<()> {
    let dataset = settings.load_dataset()?;
    let out = settings.ensure_out_dir()?;
    let q = dataset.attr_dim();
    let params = SgcnParams::init(
        q,
        q.min(5),
        settings.depth,
        settings.normalize_adjacency,
        settings.seed,
    )?;
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let (trained, history) = train(&dataset, &indices, params, &settings.train_config())?;
    trained.save(&out.join("theta.txt"))?;
    write_loss_history(&out.join("loss_history.csv"), &history)?;
    settings.write_manifest(&out, "train")?;
    println!(
        "trained {} epochs on {} graphs; final loss {}",
        settings.epochs,
        dataset.len(),
        history.last().map_or(f64::NAN, |r| r.loss)
    );
    Ok(())
}

fn cmd_evaluate(
    settings: &Settings,
    runs: Option<usize>,
    folds: Option<usize>,
    extended_depth: bool,
) -> sgot_core::Result<()> {
    let dataset = settings.load_dataset()?;
    let out = settings.ensure_out_dir()?;
    let mut protocol = EvalProtocol {
        seed: settings.seed,
        ..EvalProtocol::default()
    };
    if extended_depth {
        protocol = protocol.with_extended_depth();
    }
    if let Some(r) = runs {
        protocol.runs = r;
    }
    if let Some(f) = folds {
        protocol.folds = f;
    }
    let report = run_protocol(&dataset, &protocol, &settings.train_config())?;
    settings.write_text(&out.join("report.csv"), &report.to_csv())?;
    settings.write_manifest(&out, "evaluate")?;
    println!(
        "mean test accuracy {:.4} +- {:.4} over {} runs",
        report.mean_test_acc,
        report.std_test_acc,
        report.runs.len()
    );
    Ok(())
}

fn cmd_distances(
    settings: &Settings,
    checkpoint: Option<&std::path::Path>,
) -> sgot_core::Result<()> {
    let dataset = settings.load_dataset()?;
    let out = settings.ensure_out_dir()?;
    let params = load_params(checkpoint, &dataset, settings)?;
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let matrix = distance_matrix(
        &dataset,
        &indices,
        &params,
        settings.distance,
        &settings.sliced_config(),
        settings.implementation,
    )?;
    settings.write_text(&out.join("distances.txt"), &matrix_to_text(&matrix.values))?;
    settings.write_manifest(&out, "distances")?;
    println!("wrote {}x{} distance matrix", matrix.len(), matrix.len());
    Ok(())
}

fn cmd_kernel(
    settings: &Settings,
    checkpoint: Option<&std::path::Path>,
    lambda: Option<f64>,
) -> sgot_core::Result<()> {
    let dataset = settings.load_dataset()?;
    let out = settings.ensure_out_dir()?;
    let params = load_params(checkpoint, &dataset, settings)?;
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let matrix = distance_matrix(
        &dataset,
        &indices,
        &params,
        settings.distance,
        &settings.sliced_config(),
        settings.implementation,
    )?;
    let protocol = EvalProtocol::default();
    match lambda {
        Some(l) => {
            let k = kernel_matrix(&matrix, l)?;
            settings.write_text(&out.join("kernel.txt"), &matrix_to_text(&k))?;
        }
        None => {
            for (i, &l) in protocol.lambda_grid.iter().enumerate() {
                let k = kernel_matrix(&matrix, l)?;
                settings.write_text(&out.join(format!("kernel_{i}.txt")), &matrix_to_text(&k))?;
            }
        }
    }
    // hyperparameter grids for external SVM consumers
    let mut grids = String::from("name,values\n");
    let join = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    grids.push_str(&format!("lambda,{}\n", join(&protocol.lambda_grid)));
    grids.push_str(&format!("C,{}\n", join(&protocol.c_grid)));
    settings.write_text(&out.join("grids.csv"), &grids)?;
    settings.write_manifest(&out, "kernel")?;
    println!("wrote kernel export for {} graphs", matrix.len());
    Ok(())
}

fn cmd_bench(
    settings: &Settings,
    sizes: Option<&str>,
    dim: Option<usize>,
    reps: Option<usize>,
    methods: Option<&str>,
    budget_gib: Option<usize>,
) -> sgot_core::Result<()> {
    let out = settings.ensure_out_dir()?;
    let mut spec = BenchSpec {
        seed: settings.seed,
        ..BenchSpec::default()
    };
    if let Some(s) = sizes {
        spec.sizes = s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| sgot_core::Error::Config(format!("bad size '{t}'")))
            })
            .collect::<sgot_core::Result<_>>()?;
    }
    if let Some(d) = dim {
        spec.dim = d;
    }
    if let Some(r) = reps {
        spec.repetitions = r;
    }
    if let Some(m) = methods {
        spec.methods = m
            .split(',')
            .map(|t| BenchMethod::parse(t.trim()))
            .collect::<sgot_core::Result<_>>()?;
    }
    if let Some(g) = budget_gib {
        spec.memory_budget_bytes = g * 1024 * 1024 * 1024;
    }
    let table = bench_scaling(&spec)?;
    settings.write_text(&out.join("bench.csv"), &table.to_csv())?;

    let top_hi = *spec.sizes.last().expect("validated non-empty");
    let top_lo = (top_hi / 10).max(1);
    let mut slopes = String::from("method,slope_top_decade\n");
    for &m in &spec.methods {
        match table.log_log_slope(m, top_lo, top_hi) {
            Some(s) => slopes.push_str(&format!("{},{s}\n", m.name())),
            None => slopes.push_str(&format!("{},\n", m.name())),
        }
    }
    settings.write_text(&out.join("slopes.csv"), &slopes)?;
    settings.write_manifest(&out, "bench")?;
    print!("{}", table.to_csv());
    print!("{slopes}");
    Ok(())
}
