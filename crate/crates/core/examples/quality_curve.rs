//! Held-out F1 while training, sampled every few iterations.
use graft::network::{ArchConfig, GraftWeights, Init};
use graft::training::bench::{quality_curve, ContactBench, ContactBenchConfig};
use graft::training::MicroTrainConfig;

fn main() -> graft::Result<()> {
    let bench = ContactBench::new(ContactBenchConfig { eval_count: 8, ..Default::default() })?;
    let mut w = GraftWeights::new(ArchConfig::micro(), Init::Random { seed: 1, zero_heads: true })?;
    let cfg = MicroTrainConfig { iterations: 30, ..Default::default() };
    let (rows, _) = quality_curve(&bench, &mut w, &cfg, 3, 10)?;
    println!("iteration,train_loss,f1,wall_ms");
    for r in rows {
        println!("{},{:.2},{:.4},{:.0}", r.iteration, r.train_loss, r.f1, r.wall_ms);
    }
    Ok(())
}
