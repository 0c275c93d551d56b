//! Full staged run on a synthetic scene, printing losses and test metrics.
//!
//! `cargo run --release -p msdiff-core --example desk_run -- [seed]`

use std::time::Instant;

use msdiff::config::RunConfig;
use msdiff::degrade::{benchmark_case, benchmark_suite};
use msdiff::diagnostics::{id_report, id_table_csv};
use msdiff::hsidata::synth_cube;
use msdiff::pipeline::{ablation_table, eval_seed, run, train_ablations, Dataset};

fn main() -> msdiff::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let cfg = RunConfig {
        seed,
        ..RunConfig::default()
    };
    let (cube, labels) = synth_cube(100, 100, 16, 4, seed)?;
    let data = Dataset::new(cube, labels, &cfg)?;
    let t = Instant::now();
    let trained = run(&data, &cfg)?;
    println!("trained in {:.1}s", t.elapsed().as_secs_f64());
    for (i, e) in trained.embed_history.iter().enumerate() {
        println!("embed epoch {:>2} loss={:.5} rec={:.5} cls={:.4}", i + 1, e.loss, e.rec, e.cls);
    }
    for (i, e) in trained.diffusion_history.iter().enumerate() {
        println!("diffusion epoch {:>2} loss={:.5} noise={:.5} clean={:.5}", i + 1, e.loss, e.noise, e.clean);
    }
    let t = Instant::now();
    let clean = trained.evaluate(&data, &data.split.test, None, eval_seed(&cfg))?;
    println!("{} ({:.1}s)", clean.line("clean"), t.elapsed().as_secs_f64());
    let t = Instant::now();
    let abl = train_ablations(&data, &trained, &cfg)?;
    let rows = ablation_table(&data, &trained, &abl, &data.split.test, &benchmark_suite(), eval_seed(&cfg))?;
    for r in &rows {
        println!("{}", r.line());
    }
    println!("ablations in {:.1}s", t.elapsed().as_secs_f64());
    let t = Instant::now();
    let cases = ["C-3-3", "C-5-1", "C-7", "C-9"]
        .iter()
        .map(|c| benchmark_case(c))
        .collect::<msdiff::Result<Vec<_>>>()?;
    let ids = id_report(
        &data.cube,
        &data.labels,
        &data.split.test,
        &trained.embed,
        &trained.head,
        trained.t_star,
        &cases,
        1000,
        eval_seed(&cfg),
    )?;
    print!("{}", id_table_csv(&ids));
    println!("id report in {:.1}s", t.elapsed().as_secs_f64());
    Ok(())
}
