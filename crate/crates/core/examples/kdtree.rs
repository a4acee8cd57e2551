//! Nearest and k-nearest queries on a random cloud, checked against a scan.
use graft::scene::kdtree::{dist2, KdTree};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut point = || Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(1.0..5.0));
    let cloud: Vec<Vector3<f64>> = (0..50_000).map(|_| point()).collect();
    let queries: Vec<Vector3<f64>> = (0..1000).map(|_| point()).collect();
    let tree = KdTree::build(cloud.clone());

    let t = std::time::Instant::now();
    let fast: Vec<_> = queries.iter().map(|q| tree.nearest(q).expect("nonempty")).collect();
    let tree_ms = t.elapsed().as_secs_f64() * 1e3;
    let t = std::time::Instant::now();
    let slow: Vec<_> = queries
        .iter()
        .map(|q| cloud.iter().map(|p| dist2(p, q)).enumerate().min_by(|a, b| a.1.total_cmp(&b.1)).expect("nonempty"))
        .collect();
    let scan_ms = t.elapsed().as_secs_f64() * 1e3;
    let agree = fast.iter().zip(&slow).filter(|(a, b)| a == b).count();
    println!("{agree}/{} nearest queries agree; tree {tree_ms:.1} ms, scan {scan_ms:.1} ms", queries.len());
    let knn = tree.knn(&queries[0], 5);
    println!("5 nearest to the first query: {:?}", knn.iter().map(|(i, d)| (*i, d.sqrt())).collect::<Vec<_>>());
}
