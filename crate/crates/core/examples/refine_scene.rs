//! Refines perturbed humans with a briefly trained micro network and scores
//! every step against ground truth.
use graft::io::synth::{synthesize_scenario, ScenarioConfig};
use graft::metrics::{evaluate, DEFAULT_CONTACT_TAU};
use graft::network::{ArchConfig, GraftWeights, Init};
use graft::refine::{refine, RefinementConfig};
use graft::scene::SpatialIndex;
use graft::training::bench::{ContactBench, ContactBenchConfig};
use graft::training::MicroTrainConfig;

fn main() -> graft::Result<()> {
    let bench = ContactBench::new(ContactBenchConfig::default())?;
    let mut w = GraftWeights::new(ArchConfig::micro(), Init::Random { seed: 1, zero_heads: true })?;
    bench.train(&mut w, &MicroTrainConfig { iterations: 80, ..Default::default() })?;

    let sc = synthesize_scenario(&ScenarioConfig { seed: 1001, difficulty: 2.0, humans: 2, ..Default::default() })?;
    let index = SpatialIndex::new(sc.cloud.clone());
    let out = refine(&sc.init, &sc.model, &index, None, &w, &RefinementConfig::default())?;
    for (h, (_, traj)) in out.iter().enumerate() {
        let gt = sc.model.forward(&sc.gt[h])?;
        println!("human {h}:");
        for (k, s) in traj.states.iter().enumerate() {
            let r = evaluate(&sc.model, &sc.model.forward(s)?, &index, &gt, &index, DEFAULT_CONTACT_TAU)?;
            println!("  step {k}: F1 {:.3}, V2S {:.1} mm, PA-MPJPE {:.1} mm", r.f1, r.v2s_mm, r.pa_mpjpe_mm);
        }
    }
    Ok(())
}
