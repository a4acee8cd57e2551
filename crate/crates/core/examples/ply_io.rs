//! Writes a scene as binary PLY, reads it back with estimated normals and
//! compares the two.
use graft::io::ply::{read_cloud, write_cloud};
use graft::io::synth::{synthesize_scenario, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sc = synthesize_scenario(&ScenarioConfig::default())?;
    let path = std::env::temp_dir().join("graft-example-scene.ply");
    write_cloud(&path, &sc.cloud)?;
    let back = read_cloud(&path, *sc.cloud.camera_origin(), 16)?;
    let pos = back.points().iter().zip(sc.cloud.points()).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max);
    let cos = back.normals().iter().zip(sc.cloud.normals()).map(|(a, b)| a.dot(b)).fold(1.0, f64::min);
    println!(
        "{} points, {} bytes; max position change {pos:e} m, worst normal agreement cos {cos:.4}",
        back.len(),
        std::fs::metadata(&path)?.len()
    );
    Ok(())
}
