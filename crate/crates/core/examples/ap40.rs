//! AP over 40 recall positions: the hand-checkable case and a ranked list
//! with ties.

use liga::eval::ap40;

fn main() -> liga::Result<()> {
    let hand = ap40(&[true, false, true], &[0.9, 0.8, 0.7], 2)?;
    println!("hit, miss, hit over 2 objects: AP {hand} (5/6 = {})", 5.0 / 6.0);
    let flags = [true, true, false, true, false, false, true];
    let scores = [0.95, 0.9, 0.9, 0.7, 0.6, 0.6, 0.2];
    for num_gt in [4, 5, 8] {
        println!("{} detections, {num_gt} objects: AP {:.4}", flags.len(), ap40(&flags, &scores, num_gt)?);
    }
    println!("no objects, no detections: AP {}", ap40(&[], &[], 0)?);
    Ok(())
}
