//! Trains the micro network on the floor-contact task and reports held-out
//! contact F1 per refinement step before and after.
use graft::network::{ArchConfig, GraftWeights, Init};
use graft::training::bench::{ContactBench, ContactBenchConfig};
use graft::training::{LossWeights, MicroTrainConfig};

fn main() -> graft::Result<()> {
    let iterations = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(60);
    let bench = ContactBench::new(ContactBenchConfig::default())?;
    let mut w = GraftWeights::new(ArchConfig::micro(), Init::Random { seed: 1, zero_heads: true })?;
    let lw = LossWeights::default();
    let show = |w: &GraftWeights, tag: &str| -> graft::Result<()> {
        let f1: Vec<String> = bench.f1_by_step(w, 3)?.iter().map(|f| format!("{f:.3}")).collect();
        println!("{tag}: rollout loss {:.1}, F1 by step [{}]", bench.rollout_loss(w, 3, &lw)?, f1.join(", "));
        Ok(())
    };
    show(&w, "before")?;
    let report = bench.train(&mut w, &MicroTrainConfig { iterations, ..Default::default() })?;
    println!("trained {} parameters for {iterations} iterations in {:.1} s", report.trained_params, report.wall_s);
    show(&w, "after")
}
