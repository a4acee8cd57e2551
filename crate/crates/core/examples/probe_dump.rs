//! Prints the nearest-scene probes of the ground-truth body, grouped by token.
use graft::io::synth::{synthesize_scenario, ScenarioConfig};
use graft::probes::{BodyFrame, ProbeSet, TokenAnchors};
use graft::scene::SpatialIndex;

fn main() -> graft::Result<()> {
    let sc = synthesize_scenario(&ScenarioConfig::default())?;
    let index = SpatialIndex::new(sc.cloud.clone());
    let state = &sc.gt[0];
    let mesh = sc.model.forward(state)?;
    let set = ProbeSet::collect(&index, &BodyFrame::new(&sc.model, &mesh, state)?, &TokenAnchors::new(&sc.model, &mesh)?)?;
    let groups = [("body", &set.body), ("left hand", &set.hands[0]), ("right hand", &set.hands[1]), ("surface", &set.surface)];
    for (name, records) in groups {
        let closest = records.iter().min_by(|a, b| a.distance.total_cmp(&b.distance)).expect("groups are nonempty");
        println!(
            "{name}: {} probes, closest {:.1} mm at point {}",
            records.len(),
            closest.distance * 1000.0,
            closest.point_id
        );
    }
    Ok(())
}
