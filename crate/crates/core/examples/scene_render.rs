//! One synthetic scene: its boxes, a coarse depth map and the LiDAR-like
//! occupancy the teacher is built from.

use liga::scene::{gen_scene, render_depth, sample_lidar_points, voxelize, SceneConfig, SceneGeometry};

fn main() -> liga::Result<()> {
    let g = SceneGeometry::desk();
    let cfg = SceneConfig::default();
    let scene = gen_scene("demo", cfg.scene_seed(2), &cfg, &g)?;
    for b in &scene.boxes {
        println!("class {} at ({:.2}, {:.2}, {:.2}) size {:.2}x{:.2}x{:.2} yaw {:.2}", b.class_id, b.x, b.y, b.z, b.l, b.w, b.h, b.theta);
    }
    let depth = render_depth(&scene)?;
    let [h, w] = g.image;
    let shades = [b'@', b'#', b'+', b'-', b'.'];
    for v in (0..h).step_by(3) {
        let row: Vec<u8> = (0..w)
            .step_by(2)
            .map(|u| {
                let i = v * w + u;
                if depth.valid.data()[i] == 0.0 {
                    b' '
                } else {
                    let t = (depth.depth.data()[i] - g.binning.z_min()) / (g.binning.z_max() - g.binning.z_min());
                    shades[((t * shades.len() as f64) as usize).min(shades.len() - 1)]
                }
            })
            .collect();
        println!("{}", String::from_utf8_lossy(&row));
    }
    let occ = voxelize(&sample_lidar_points(&scene, 200), &g.grid)?;
    println!("{} occupied voxels of {}", occ.count(), occ.tensor.numel());
    Ok(())
}
