//! Folds a metric scale into shape and translation and checks how far the
//! result is from a plain scaling of the posed mesh.
use graft::body_model::absorb_scale;
use graft::io::synth::{synthesize_scenario, ScenarioConfig};

fn main() -> graft::Result<()> {
    let sc = synthesize_scenario(&ScenarioConfig::default())?;
    let m = &sc.model;
    let s0 = &sc.gt[0];
    let base = m.forward(s0)?;
    for s in [0.8, 1.0, 1.1, 1.5] {
        let scaled = m.forward(&absorb_scale(s0, s, m)?)?;
        let worst = scaled
            .vertices
            .iter()
            .zip(&base.vertices)
            .map(|(a, b)| (a - b * s).norm())
            .fold(0.0, f64::max);
        println!("s = {s}: largest departure from a uniform scaling {:.2} mm", worst * 1000.0);
    }
    Ok(())
}
