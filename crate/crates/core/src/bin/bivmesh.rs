use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bivmesh::cohort::read_demographics;
use bivmesh::pipeline::{
    export_mesh, format_attrition, load_config, load_text_mesh, read_manifest, run_pipeline, Config, ExportFormat,
    RunOptions, Scope, Stage,
};

/// Biventricular meshes from cardiac label volumes.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Select end-diastolic and end-systolic frames.
    Frames(BatchArgs),
    /// Extract contours at the selected frames.
    Contours(BatchArgs),
    /// Fit the template surface to the contours.
    Fit(BatchArgs),
    /// Build the volumetric mesh from the fitted surface.
    Volumize(BatchArgs),
    /// Compute ventricular coordinates and fibers.
    Fields(BatchArgs),
    /// Mask and mesh phenotypes.
    Phenotypes(BatchArgs),
    /// Phenotypes followed by outlier exclusion.
    Qc(BatchArgs),
    /// Binning, reference meshes and population statistics.
    Cohort(BatchArgs),
    /// Every stage; the cohort stage runs when demographics are found.
    Run(BatchArgs),
    /// Convert a stored text mesh.
    Export(ExportArgs),
}

#[derive(Args)]
struct BatchArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// JSON configuration; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
    /// Single worker and reproducible output.
    #[arg(long)]
    reference_mode: bool,
    /// Defaults to demographics.csv beside the manifest.
    #[arg(long)]
    demographics: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    /// Stem of the .pts/.elem(/.lon) files.
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long, value_enum)]
    format: ExportFormat,
    /// Output stem.
    #[arg(long)]
    out: PathBuf,
}

fn batch(args: &BatchArgs, until: Stage, scope: Scope) -> bivmesh::Result<()> {
    let cfg = match &args.config {
        Some(p) => load_config(p)?,
        None => Config::default(),
    };
    let rows = read_manifest(&args.manifest)?;
    let demo_path = args.demographics.clone().unwrap_or_else(|| {
        args.manifest.parent().unwrap_or(".".as_ref()).join("demographics.csv")
    });
    let demographics = match scope {
        Scope::Cohort if args.demographics.is_some() || demo_path.exists() => Some(read_demographics(&demo_path)?),
        _ => None,
    };
    let mut opts = RunOptions::new(&args.out_dir);
    opts.reference_mode = args.reference_mode;
    opts.until = until;
    opts.scope = scope;
    if let Some(w) = args.workers {
        opts.workers = w;
    }
    let summary = run_pipeline(&rows, demographics.as_deref(), &cfg, &opts)?;
    print!("{}", format_attrition(&summary.attrition));
    for s in &summary.subjects {
        if let Some(f) = &s.failure {
            eprintln!("{}: {} failed: {}", s.subject_id, f.stage.name(), f.message);
        }
    }
    for n in &summary.notes {
        eprintln!("{n}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Frames(a) => batch(a, Stage::Frames, Scope::Subjects),
        Command::Contours(a) => batch(a, Stage::Contours, Scope::Subjects),
        Command::Fit(a) => batch(a, Stage::Fit, Scope::Subjects),
        Command::Volumize(a) => batch(a, Stage::Volumize, Scope::Subjects),
        Command::Fields(a) => batch(a, Stage::Fields, Scope::Subjects),
        Command::Phenotypes(a) => batch(a, Stage::Phenotypes, Scope::Subjects),
        Command::Qc(a) => batch(a, Stage::Phenotypes, Scope::Qc),
        Command::Cohort(a) => {
            if a.demographics.is_none() && !a.manifest.with_file_name("demographics.csv").exists() {
                eprintln!("cohort needs --demographics or demographics.csv beside the manifest");
                return ExitCode::from(2);
            }
            batch(a, Stage::Phenotypes, Scope::Cohort)
        }
        Command::Run(a) => batch(a, Stage::Phenotypes, Scope::Cohort),
        Command::Export(a) => load_text_mesh(&a.mesh).and_then(|(mesh, uvc)| {
            for p in export_mesh(&mesh, uvc.as_ref(), a.format, &a.out)? {
                println!("{}", p.display());
            }
            Ok(())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
