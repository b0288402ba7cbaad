use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use selfmix::data::{load_csv, save_csv};
use selfmix::harness::{
    analyze_losses, render_summary, run_arms, summary_path, ExperimentConfig, Method, Summary,
};
use selfmix::noise::{inject, IdnOptions, NoiseType, TransitionMap};
use selfmix::synth::SynthConfig;
use selfmix::{Error, Result};

/// Noisy-label text classification experiments.
#[derive(Parser, Debug)]
#[command(name = "selfmix", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Corrupt the labels of a clean CSV corpus.
    InjectNoise(InjectArgs),
    /// Train the plain cross-entropy baseline.
    TrainBaseline {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train with SelfMix.
    TrainSelfmix {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train both arms and write a comparison summary.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Histogram of a saved model's per-sample losses on a corpus.
    AnalyzeLosses {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
    /// Print the summary of a finished run.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Write a synthetic topic corpus (train.csv, test.csv).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2000)]
        train: usize,
        #[arg(long, default_value_t = 500)]
        test: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
    },
}

#[derive(Args, Debug)]
struct InjectArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Output directory for noisy.csv and manifest.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "type")]
    noise_type: String,
    #[arg(long)]
    ratio: f64,
    #[arg(long)]
    seed: u64,
    /// Targets t(0), t(1), ... for asymmetric noise; defaults to c -> c+1 mod C.
    #[arg(long)]
    transition: Option<PathBuf>,
    /// Class count; inferred from the largest label when omitted.
    #[arg(long)]
    classes: Option<usize>,
    /// Fraction of the data the instance-dependent auxiliary model trains on.
    #[arg(long, default_value_t = 0.1)]
    aux_fraction: f64,
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Argument(format!("no such file {}", path.display())))
    }
}

fn inject_noise(args: &InjectArgs) -> Result<()> {
    let (input, out) = (&args.input, &args.out);
    let (ratio, seed, aux_fraction) = (args.ratio, args.seed, args.aux_fraction);
    let noise_type: NoiseType = args.noise_type.parse()?;
    require_file(input)?;
    if let Some(t) = &args.transition {
        require_file(t)?;
    }
    let transition = args
        .transition
        .as_deref()
        .map(TransitionMap::load)
        .transpose()?;
    let clean = load_csv(input, args.classes)?;
    let idn = IdnOptions {
        aux_subset_fraction: aux_fraction,
        ..IdnOptions::default()
    };
    let (noisy, mut manifest) = inject(&clean, noise_type, ratio, seed, transition.as_ref(), &idn)?;
    manifest.echo = vec![
        format!("in = {}", input.display()),
        format!("type = {noise_type}"),
        format!("ratio = {ratio}"),
        format!("seed = {seed}"),
        format!("classes = {}", clean.num_classes()),
    ];
    if let Some(t) = &transition {
        manifest.echo.push(format!("transition = {}", t.to_line()));
    }
    if noise_type == NoiseType::InstanceDependent {
        manifest.echo.push(format!("aux_fraction = {aux_fraction}"));
    }
    std::fs::create_dir_all(out)?;
    save_csv(&noisy, &out.join("noisy.csv"))?;
    manifest.save(&out.join("manifest.csv"))?;
    println!(
        "flipped {} of {} labels; wrote {}",
        manifest.flips.len(),
        clean.len(),
        out.display()
    );
    Ok(())
}

fn train(config: &Path, methods: &[Method]) -> Result<()> {
    let config = ExperimentConfig::load(config)?;
    let summary = run_arms(&config, methods)?;
    print!("{}", render_summary(&summary));
    println!("outputs in {}", config.output_dir.display());
    Ok(())
}

fn report(dir: &Path) -> Result<()> {
    let path = summary_path(dir);
    if !path.is_file() {
        return Err(Error::Argument(format!(
            "no summary.json in {}",
            dir.display()
        )));
    }
    print!("{}", render_summary(&Summary::load(&path)?));
    Ok(())
}

fn synth(out: &Path, seed: u64, train: usize, test: usize, classes: usize) -> Result<()> {
    let cfg = SynthConfig {
        seed,
        train_size: train,
        test_size: test,
        num_classes: classes,
        ..SynthConfig::default()
    };
    let (tr, te) = cfg.generate()?;
    std::fs::create_dir_all(out)?;
    save_csv(&tr, &out.join("train.csv"))?;
    save_csv(&te, &out.join("test.csv"))?;
    println!(
        "wrote {} train and {} test examples to {}",
        tr.len(),
        te.len(),
        out.display()
    );
    Ok(())
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::InjectNoise(args) => inject_noise(&args),
        Command::TrainBaseline { config } => train(&config, &[Method::Baseline]),
        Command::TrainSelfmix { config } => train(&config, &[Method::SelfMix]),
        Command::Run { config } => train(&config, &[Method::Baseline, Method::SelfMix]),
        Command::AnalyzeLosses {
            model,
            data,
            out,
            bins,
        } => {
            require_file(&model)?;
            require_file(&data)?;
            let hist = analyze_losses(&model, &data, &out, bins)?;
            let noisy: usize = hist.iter().map(|b| b.noisy).sum();
            let total: usize = hist.iter().map(|b| b.clean + b.noisy).sum();
            println!(
                "binned {total} losses ({noisy} noisy) into {}",
                out.display()
            );
            Ok(())
        }
        Command::Report { dir } => report(&dir),
        Command::Synth {
            out,
            seed,
            train,
            test,
            classes,
        } => synth(&out, seed, train, test, classes),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 1 } else { 2 })
        }
    }
}
