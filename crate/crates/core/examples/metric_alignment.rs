//! Puts a human at the wrong metric scale and recovers it from the depth
//! of the scene point behind the head.
use graft::body_model::absorb_scale;
use graft::io::synth::{synthesize_scenario, ScenarioConfig};
use graft::refine::metric_align;
use graft::scene::ScenePointCloud;

fn main() -> graft::Result<()> {
    let sc = synthesize_scenario(&ScenarioConfig::default())?;
    let gt = &sc.gt[0];
    let gt_mesh = sc.model.forward(gt)?;
    // A pointmap sees the person too, so add their surface to the scene.
    let mut points = sc.cloud.points().to_vec();
    points.extend_from_slice(&gt_mesh.vertices);
    let cloud = ScenePointCloud::with_estimated_normals(points, *sc.cloud.camera_origin(), 16)?;
    let head = sc.model.head_joint();
    for wrong in [0.7, 0.9, 1.25] {
        let off = absorb_scale(gt, wrong, &sc.model)?;
        let (fixed, s) = metric_align(&off, &sc.model, &cloud, &sc.intrinsics)?;
        let err = (sc.model.forward(&fixed)?.joints[head] - gt_mesh.joints[head]).norm();
        println!("scale {wrong}: alignment factor {s:.4}, head error after {:.1} mm", err * 1000.0);
    }
    Ok(())
}
