//! Anchor targets of one generated scene: IoU matching in BEV for the 3D
//! head and ATSS with reprojected centers for the 2D head.

use liga::assignment::{assign_3d_targets, atss_assign_2d, generate_anchors, Anchor2DSet, AnchorClassSpec, CenterMode, ClassThresholds, Gt2D, ATSS_STRIDES, ATSS_TOP_K};
use liga::scene::{gen_scene, render_depth, visible_boxes_2d, SceneConfig, SceneGeometry};

fn main() -> liga::Result<()> {
    let g = SceneGeometry::desk();
    let cfg = SceneConfig::default();
    let scene = gen_scene("demo", cfg.scene_seed(1), &cfg, &g)?;
    let grid = generate_anchors(&g.grid, &AnchorClassSpec::kitti_defaults(g.ground_y))?;
    let a = assign_3d_targets(&grid.anchors, &scene.boxes, &ClassThresholds::default())?;
    println!("{} anchors, {} objects, {} positives", grid.len(), scene.boxes.len(), a.num_pos());
    for p in a.positives.iter().take(5) {
        println!("  anchor {} -> object {} residuals {:?}", p.anchor, p.gt, p.residuals.map(|r| (r * 100.0).round() / 100.0));
    }

    let depth = render_depth(&scene)?;
    let gts: Vec<Gt2D> = scene
        .boxes
        .iter()
        .zip(visible_boxes_2d(&depth, scene.boxes.len()))
        .filter_map(|(b, bbox)| Some(Gt2D { bbox: bbox?, center3d: g.rig.reproject_box_center(b).ok()? }))
        .collect();
    let [h, w] = g.image;
    let strides: Vec<f64> = ATSS_STRIDES.iter().map(|s| s / g.rig.stride()).collect();
    let set = Anchor2DSet::new(h, w, &strides, 8.0)?;
    for mode in [CenterMode::Reprojected3d, CenterMode::Box2d] {
        let labels = atss_assign_2d(&set, &gts, ATSS_TOP_K, mode)?;
        println!("{mode:?}: {} of {} 2D anchors positive", labels.iter().filter(|l| l.is_some()).count(), set.len());
    }
    Ok(())
}
