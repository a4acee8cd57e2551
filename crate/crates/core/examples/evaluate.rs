//! Scores a noisy initialization against ground truth with every metric.
use graft::io::synth::{synthesize_scenario, ScenarioConfig};
use graft::metrics::{evaluate, DEFAULT_CONTACT_TAU};
use graft::scene::SpatialIndex;

fn main() -> graft::Result<()> {
    let sc = synthesize_scenario(&ScenarioConfig { humans: 3, ..Default::default() })?;
    let index = SpatialIndex::new(sc.cloud.clone());
    for (h, (pred, gt)) in sc.init.iter().zip(&sc.gt).enumerate() {
        let r = evaluate(
            &sc.model,
            &sc.model.forward(pred)?,
            &index,
            &sc.model.forward(gt)?,
            &index,
            DEFAULT_CONTACT_TAU,
        )?;
        println!("human {h}: {}", serde_json::to_string(&r).expect("report serializes"));
    }
    Ok(())
}
