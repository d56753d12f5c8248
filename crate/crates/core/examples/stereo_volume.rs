//! Plane-sweep volume of a noiseless scene: at one front-face pixel the
//! left/right disagreement vanishes at the true bin and grows away from it.

use liga::scene::{cast_image, gen_scene, non_occluded_mask, render_depth, render_stereo_features, SceneConfig, SceneGeometry};
use liga::tensor::Tape;
use liga::volumes::build_stereo_volume;

fn main() -> liga::Result<()> {
    let cfg = SceneConfig {
        noise_sigma: 0.0,
        bin_aligned: true,
        ..SceneConfig::default()
    };
    let scene = gen_scene("demo", cfg.scene_seed(0), &cfg, &SceneGeometry::desk())?;
    let g = scene.geometry;
    let [h, w] = g.image;
    let depth = render_depth(&scene)?;
    let st = render_stereo_features(&scene, &depth, 0.0)?;
    let mask = non_occluded_mask(&scene, &depth, &cast_image(&scene, g.rig.baseline()));

    let mut tape = Tape::new();
    let l = tape.constant(st.left.clone());
    let r = tape.constant(st.right.clone());
    let vol = build_stereo_volume(&mut tape, l, r, &g.rig, &g.binning)?;
    println!("volume shape {:?}", tape.shape(vol.var));

    let pixel = (0..h * w).find(|&p| {
        let t = g.binning.bin_of_depth(depth.depth.data()[p]);
        mask.data()[p] == 1.0 && (t - t.round()).abs() < 1e-9
    });
    let Some(p) = pixel else {
        println!("no front-face pixel in view");
        return Ok(());
    };
    let z = depth.depth.data()[p];
    let true_bin = g.binning.bin_of_depth(z).round() as usize;
    println!("pixel (u={}, v={}) depth {z:.2} m, bin {true_bin}", p % w, p / w);
    let v = tape.value(vol.var);
    let (c, d) = (st.left.shape()[0], g.binning.count());
    for bin in true_bin.saturating_sub(4)..(true_bin + 5).min(d) {
        let err = (0..c)
            .map(|ch| (v.data()[((c + ch) * d + bin) * h * w + p] - v.data()[(ch * d + bin) * h * w + p]).abs())
            .fold(0.0, f64::max);
        println!("  bin {bin:2} depth {:5.2}  max |right - left| {err:.3e}", g.binning.depth_of_bin(bin)?);
    }
    Ok(())
}
