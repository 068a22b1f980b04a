use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use treetomo::estimate::{estimate_distances, log_det_distances};
use treetomo::harness::{draw_rates, run_experiment, Algorithm, ExperimentConfig};
use treetomo::newick::{parse_newick, to_newick};
use treetomo::tree::{generate_tree, TreeGenConfig};
use treetomo::{
    DistanceMatrix, EstimatorConfig, LinkMetric, SampleSet, TreeKind, ZeroCountPolicy,
};

#[derive(Parser)]
#[command(name = "treetomo", version, about = "Loss tomography on logical routing trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Binary,
    General,
}

impl From<Kind> for TreeKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Binary => TreeKind::Binary,
            Kind::General => TreeKind::General,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Algo {
    Nj,
    Rnj,
}

#[derive(Clone, Copy, ValueEnum)]
enum ZeroCount {
    Clamp,
    Error,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a random logical tree and write it as Newick.
    GenTree {
        #[arg(long)]
        leaves: usize,
        #[arg(long, value_enum, default_value = "binary")]
        kind: Kind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Children cap for general trees.
        #[arg(long, default_value_t = 5)]
        max_children: usize,
        #[arg(long, default_value = "s")]
        root_label: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate probes on a tree. Rates are drawn from the given range, or
    /// taken from the tree's branch lengths when no range is given.
    Simulate {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long, requires = "alpha_high")]
        alpha_low: Option<f64>,
        #[arg(long, requires = "alpha_low")]
        alpha_high: Option<f64>,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Reverse multicast: the tree root is the receiver.
        #[arg(long)]
        reverse: bool,
        #[arg(long)]
        out: PathBuf,
        /// Also write the tree with the true link lengths.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Estimate the loss-metric distance matrix from probe outcomes.
    Estimate {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long, value_enum, default_value = "clamp")]
        zero_count: ZeroCount,
        #[arg(long, default_value_t = 0.5)]
        clamp_value: f64,
        #[arg(long)]
        out: PathBuf,
        /// Also write log-det distances between destinations.
        #[arg(long)]
        log_det: Option<PathBuf>,
    },
    /// Reconstruct a tree from a distance matrix whose first label is the source.
    Infer {
        #[arg(long)]
        dist: PathBuf,
        #[arg(long, value_enum, default_value = "rnj")]
        algo: Algo,
        #[arg(long, value_enum, default_value = "binary")]
        kind: Kind,
        /// Minimum link length estimate (general trees).
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        links: Option<PathBuf>,
    },
    /// Run a Monte-Carlo experiment described by a key=value config file.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn read_tree(path: &Path) -> Result<(treetomo::RoutedTree, Option<LinkMetric>)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_newick(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, format!("{text}\n")).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenTree {
            leaves,
            kind,
            seed,
            max_children,
            root_label,
            out,
        } => {
            let cfg = TreeGenConfig {
                kind: kind.into(),
                max_children,
                root_label,
                ..TreeGenConfig::default()
            };
            let tree = generate_tree(leaves, &cfg, seed)?;
            write_text(&out, &to_newick(&tree, None))?;
        }
        Command::Simulate {
            tree,
            alpha_low,
            alpha_high,
            n,
            seed,
            reverse,
            out,
            truth,
        } => {
            let (t, lengths) = read_tree(&tree)?;
            let metric = match (alpha_low.zip(alpha_high), lengths) {
                (Some(range), _) => draw_rates(&t, range, treetomo::rng::mix_seed(seed, &[1]))?,
                (None, Some(m)) => LinkMetric::from_rates(
                    m.lengths().iter().map(|(&k, &d)| (k, (-d).exp())),
                )?,
                (None, None) => bail!("tree has no branch lengths; pass --alpha-low and --alpha-high"),
            };
            let samples = if reverse {
                treetomo::simulate_reverse_multicast(&t.mirrored(), &metric, n, seed)?
            } else {
                treetomo::simulate_multicast(&t, &metric, n, seed)?
            };
            samples.write_csv(create(&out)?)?;
            if let Some(path) = truth {
                write_text(&path, &to_newick(&t, Some(&metric)))?;
            }
        }
        Command::Estimate {
            samples,
            zero_count,
            clamp_value,
            out,
            log_det,
        } => {
            let s = SampleSet::read_csv(open(&samples)?)?;
            let cfg = EstimatorConfig {
                zero_count_policy: match zero_count {
                    ZeroCount::Clamp => ZeroCountPolicy::Clamp,
                    ZeroCount::Error => ZeroCountPolicy::Error,
                },
                clamp_value,
            };
            let est = estimate_distances(&s, &cfg)?;
            if est.clamped_counts > 0 {
                log::warn!("{} zero counts replaced by {clamp_value}", est.clamped_counts);
            }
            est.matrix.write_csv(create(&out)?)?;
            if let Some(path) = log_det {
                log_det_distances(&s, &cfg)?.write_csv(create(&path)?)?;
            }
        }
        Command::Infer {
            dist,
            algo,
            kind,
            delta,
            out,
            links,
        } => {
            let d = DistanceMatrix::read_csv(open(&dist)?)?;
            let kind: TreeKind = kind.into();
            let delta = match (kind, delta) {
                (TreeKind::General, None) => bail!("--delta is required for general trees"),
                (_, d) => d.unwrap_or(1.0),
            };
            let algorithm = match algo {
                Algo::Nj => Algorithm::Nj,
                Algo::Rnj => Algorithm::Rnj,
            };
            let inferred = algorithm.infer(kind, &d, delta)?;
            let flagged = inferred.rates().values().filter(|r| r.flagged).count();
            if flagged > 0 {
                log::warn!("{flagged} links have non-positive inferred length");
            }
            write_text(&out, &to_newick(inferred.tree(), Some(inferred.lengths())))?;
            if let Some(path) = links {
                inferred.write_link_table(create(&path)?)?;
            }
        }
        Command::Experiment { config, out } => {
            let cfg = ExperimentConfig::from_file(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let res = run_experiment(&cfg)?;
            res.write_csv(create(&out)?)?;
            for r in &res.rows {
                println!(
                    "{:>4} n={:<8} correct={:.3} eps_E={}",
                    r.algorithm,
                    r.sample_size,
                    r.fraction_correct,
                    r.mean_eps_e.map_or("-".into(), |e| format!("{e:.4}"))
                );
            }
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
