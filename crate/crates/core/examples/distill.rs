//! Short training runs with and without feature imitation on a small scene
//! set, compared on validation feature MSE and car AP.

use liga::eval::{class_ap, IouMode};
use liga::harness::{cmd_gen, imitation_mse, load_prepared, scene_results, train, Context, RunConfig};

fn main() -> liga::Result<()> {
    let dir = std::env::temp_dir().join("liga_distill_example");
    let mut cfg = RunConfig {
        val_scenes: 4,
        scene_dir: dir.join("scenes"),
        out_dir: dir.join("out"),
        ..RunConfig::default()
    };
    cfg.scenes.count = 8;
    cfg.train.steps = 60;
    cmd_gen(&cfg)?;
    let ctx = Context::new(&cfg.geometry)?;
    let scenes = load_prepared(&cfg.train_dir(), &ctx, &cfg)?;
    let val = load_prepared(&cfg.val_dir(), &ctx, &cfg)?;
    for imitation in [false, true] {
        let (params, rows) = train(&cfg, &ctx, &scenes, imitation)?;
        let last = rows.last().expect("at least one row");
        let res = scene_results(&ctx, &params, &val, &cfg.decode)?;
        let ap = class_ap(&res, 0, 0.5, IouMode::ThreeD)?;
        let mse = imitation_mse(&ctx, &params, &val, &cfg.imitation_layers)?;
        println!("imitation {imitation}: final train loss {:.3}, val car AP@0.5 {ap:.4}, feature mse {mse:?}", last.total);
    }
    Ok(())
}
