//! Writes a batch of synthetic subjects and runs the full pipeline on it.
//!
//! `cargo run --example batch_pipeline -- [n_subjects] [out_dir]`

use bivmesh::cohort::read_demographics;
use bivmesh::pipeline::batch::write_phantom_batch;
use bivmesh::pipeline::{format_attrition, run_pipeline, Config, RunOptions};

fn main() -> bivmesh::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(10, |a| a.parse().expect("subject count"));
    let out = args.next().map_or_else(|| std::env::temp_dir().join("bivmesh-batch"), Into::into);
    let batch = write_phantom_batch(&out.join("inputs"), n)?;
    let demo = read_demographics(&batch.demographics)?;
    let opts = RunOptions::new(out.join("run"));
    let t = std::time::Instant::now();
    let summary = run_pipeline(&batch.rows, Some(&demo), &Config::default(), &opts)?;
    println!("{} subjects in {:.1} s ({} reused)", n, t.elapsed().as_secs_f64(), summary.reused_subjects);
    print!("{}", format_attrition(&summary.attrition));
    for s in &summary.subjects {
        if let Some(f) = &s.failure {
            println!("{}: {:?} at {}: {}", s.subject_id, f.category, f.stage.name(), f.message);
        }
    }
    for b in &summary.bins {
        println!("bin {}_{}_{}: {} members, emitted {} {}", b.sex, b.age_bin, b.bmi_bin, b.n_members, b.emitted, b.failure_reason);
    }
    for note in &summary.notes {
        println!("note: {note}");
    }
    println!("artifacts in {}", opts.out_dir.display());
    Ok(())
}
