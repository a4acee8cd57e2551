//! Builds a synthetic scene with perturbed humans and reports how far the
//! initialization sits from the ground truth.
use graft::io::synth::{contact_count, synthesize_scenario, ScenarioConfig, ScenarioKind};

fn main() -> graft::Result<()> {
    for kind in [ScenarioKind::FloorOnly, ScenarioKind::Standing, ScenarioKind::Seated] {
        let sc = synthesize_scenario(&ScenarioConfig { kind, humans: 2, ..Default::default() })?;
        println!("{kind:?}: {} scene points, {} vertices per body", sc.cloud.len(), sc.model.num_vertices());
        for (h, (gt, init)) in sc.gt.iter().zip(&sc.init).enumerate() {
            let shift = (gt.translation_vec() - init.translation_vec()).norm();
            println!(
                "  human {h}: contacts gt {} init {}, root offset {:.3} m",
                contact_count(&sc.model, gt, &sc.cloud)?,
                contact_count(&sc.model, init, &sc.cloud)?,
                shift
            );
        }
    }
    Ok(())
}
