//! Prints the localizability metrics and the registration error for the four
//! reference scenes, seen from the origin.

use std::time::Instant;

use solmplan::geometry::PlanarPose;
use solmplan::metric::{evaluate, MetricConfig, Strategy};
use solmplan::observation::{build_observations, MapRef, ObservationParams};
use solmplan::registration::{mde, MdeParams};
use solmplan::scan::{simulate_scan, LidarModel};
use solmplan::scene::{canonical, SceneModel, SceneParams};

fn main() -> solmplan::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let lidar = LidarModel::mid70_like();
    let obs = ObservationParams::default();
    let cfg = MetricConfig::default();
    let pose = PlanarPose::identity();
    println!(
        "{:16} {:>9} {:>9} {:>9} {:>10} {:>8}",
        "scene", "q_min", "q_n", "q_max", "mde", "time"
    );
    for desc in canonical::comparison_scenes() {
        let t = Instant::now();
        let scene = SceneModel::build(&desc, &SceneParams::default(), seed)?;
        let scan = simulate_scan(&scene.bvh, &pose, &lidar, seed);
        let map = MapRef {
            cloud: &scene.map,
            bvh: Some(&scene.bvh),
        };
        let set = build_observations(&scan, &map, &pose, lidar.mount_height, &obs)?;
        let r = evaluate(&set, &cfg)?;
        let params = MdeParams {
            seed,
            ..Default::default()
        };
        let m = mde(&scene, &pose, &lidar, &obs, &params)?;
        println!(
            "{:16} {:9.4} {:9.4} {:9.4} {:10.3e} {:8.2?}",
            desc.name,
            r.q_for(Strategy::Min, &cfg),
            r.q_for(Strategy::N, &cfg),
            r.q_for(Strategy::Max, &cfg),
            m.mde,
            t.elapsed()
        );
    }
    Ok(())
}
