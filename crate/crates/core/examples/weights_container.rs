//! Initializes network weights, saves them in single and double precision,
//! and reloads both.
use graft::io::container::TensorContainer;
use graft::network::{ArchConfig, GraftWeights, Init};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("graft-weights-example");
    std::fs::create_dir_all(&dir)?;
    for (name, arch) in [("micro", ArchConfig::micro()), ("full", ArchConfig::full())] {
        let w = GraftWeights::new(arch, Init::Random { seed: 7, zero_heads: true })?;
        for double in [false, true] {
            let path = dir.join(format!("{name}-{}.grft", if double { "f64" } else { "f32" }));
            w.to_container(double).write(&path)?;
            let back = GraftWeights::from_container(&TensorContainer::read(&path)?)?;
            let err = back.data().iter().zip(w.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            println!(
                "{name}: {} params, {} bytes on disk, max reload error {err:e}",
                w.num_params(),
                std::fs::metadata(&path)?.len()
            );
        }
    }
    Ok(())
}
