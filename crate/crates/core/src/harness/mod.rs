//! The four experiment commands behind the `liga` binary.
//!
//! Every command reads one [`RunConfig`] and writes plain files: scene sets
//! with a hashed manifest, a gradcheck report, a per-step loss CSV with a
//! JSON checkpoint, and an AP table with predictions.

mod config;
mod gradcheck;
mod model;
mod predict;
mod train;

pub use config::{DecodeConfig, Fault, GradcheckConfig, RunConfig, TrainConfig};
pub use gradcheck::{run_gradcheck, suite_ops, GradcheckReport, OpReport};
pub use model::{
    features, gt_2d, init_params, losses, Checkpoint, Context, Features, Params, PreparedScene,
    TapeParams,
};
pub use predict::{decode_detections, dump_maps, imitation_mse, nms_bev, predict, scene_results};
pub use train::{effective_weights, metrics_csv, train, LogRow};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::boxes::Detection;
use crate::error::{ensure, Error, Result};
use crate::eval::{ap_table_csv, evaluate};
use crate::losses::ImitationLayer;
use crate::scene::{generate_scene_set, load_scene, read_manifest, Manifest};
use crate::tensor::write_tsr;

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const AP_FILE: &str = "ap.csv";
pub const PREDICTIONS_FILE: &str = "predictions.json";
pub const IMITATION_MSE_FILE: &str = "imitation_mse.csv";
pub const GRADCHECK_FILE: &str = "gradcheck.csv";

/// Process exit code for an error: 2 for numerical failures, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        2
    } else {
        1
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes the training and validation scene sets.
pub fn cmd_gen(cfg: &RunConfig) -> Result<(Manifest, Manifest)> {
    let train = generate_scene_set(&cfg.train_dir(), &cfg.scenes, &cfg.geometry)?;
    let val = generate_scene_set(&cfg.val_dir(), &cfg.val_scene_config(), &cfg.geometry)?;
    Ok((train, val))
}

/// Runs the gradient suite and writes its report; fails with a numerical
/// error when any op reaches the tolerance.
pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<GradcheckReport> {
    let report = run_gradcheck(&cfg.gradcheck)?;
    write_file(&cfg.out_dir.join(GRADCHECK_FILE), report.csv())?;
    if !report.passed() {
        let failing: Vec<&str> = report
            .ops
            .iter()
            .filter(|o| o.worst >= report.tolerance)
            .map(|o| o.op)
            .collect();
        return Err(Error::Numerical(format!(
            "gradcheck failed for {} (worst relative error {:e})",
            failing.join(", "),
            report.worst()
        )));
    }
    Ok(report)
}

/// Loads and prepares every scene of a set.
pub fn load_prepared(dir: &Path, ctx: &Context, cfg: &RunConfig) -> Result<Vec<PreparedScene>> {
    let manifest = read_manifest(dir)?;
    manifest
        .scenes
        .iter()
        .map(|e| {
            let data = load_scene(&Manifest::scene_dir(dir, &e.id))?;
            PreparedScene::new(data, ctx, &cfg.match_thresholds)
        })
        .collect()
}

fn dump_volumes(out: &Path, ctx: &Context, params: &Params, scene: &PreparedScene) -> Result<()> {
    let dir = out.join("volumes").join(&scene.data.scene.id);
    for (name, t) in dump_maps(ctx, params, &scene.data)? {
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_tsr(dir.join(name), &t)?;
    }
    Ok(())
}

/// Trains on the training set and writes the loss log and checkpoint.
pub fn cmd_train(cfg: &RunConfig, imitation: bool, dump_volume: bool) -> Result<Vec<LogRow>> {
    let ctx = Context::new(&cfg.geometry)?;
    let scenes = load_prepared(&cfg.train_dir(), &ctx, cfg)?;
    let (params, rows) = train(cfg, &ctx, &scenes, imitation)?;
    write_file(&cfg.out_dir.join(METRICS_FILE), metrics_csv(&rows))?;
    let ckpt = Checkpoint::from_params(cfg.train.steps, &params);
    write_file(&cfg.out_dir.join(CHECKPOINT_FILE), serde_json::to_vec(&ckpt)?)?;
    if dump_volume {
        dump_volumes(&cfg.out_dir, &ctx, &params, &scenes[0])?;
    }
    Ok(rows)
}

pub fn read_checkpoint(path: &Path) -> Result<Params> {
    ensure!(path.exists(), Config, "checkpoint {} does not exist", path.display());
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_slice(&bytes).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    ckpt.to_params()
}

#[derive(Serialize)]
struct ScenePredictions<'a> {
    scene_id: &'a str,
    detections: &'a [Detection],
}

/// Results of [`cmd_eval`].
pub struct EvalOutput {
    pub ap_csv: String,
    pub imitation_mse: BTreeMap<ImitationLayer, f64>,
}

pub fn imitation_mse_csv(mse: &BTreeMap<ImitationLayer, f64>) -> String {
    let mut s = String::from("layer,mse\n");
    for (layer, v) in mse {
        let _ = writeln!(s, "{layer},{v}");
    }
    s
}

/// Evaluates the checkpoint in the output directory on the validation set.
pub fn cmd_eval(cfg: &RunConfig, dump_volume: bool) -> Result<EvalOutput> {
    let params = read_checkpoint(&cfg.out_dir.join(CHECKPOINT_FILE))?;
    let ctx = Context::new(&cfg.geometry)?;
    let scenes = load_prepared(&cfg.val_dir(), &ctx, cfg)?;
    let results = scene_results(&ctx, &params, &scenes, &cfg.decode)?;
    let rows = evaluate(&results, &cfg.eval)?;
    let ap_csv = ap_table_csv(&rows);
    write_file(&cfg.out_dir.join(AP_FILE), &ap_csv)?;
    let preds: Vec<ScenePredictions<'_>> = results
        .iter()
        .map(|r| ScenePredictions {
            scene_id: &r.scene_id,
            detections: &r.detections,
        })
        .collect();
    write_file(&cfg.out_dir.join(PREDICTIONS_FILE), serde_json::to_vec_pretty(&preds)?)?;
    let mse = imitation_mse(&ctx, &params, &scenes, &cfg.imitation_layers)?;
    write_file(&cfg.out_dir.join(IMITATION_MSE_FILE), imitation_mse_csv(&mse))?;
    if dump_volume {
        if let Some(s) = scenes.first() {
            dump_volumes(&cfg.out_dir, &ctx, &params, s)?;
        }
    }
    Ok(EvalOutput {
        ap_csv,
        imitation_mse: mse,
    })
}
