//! Feature imitation on a toy map: the loss only sees positions inside
//! both masks and ignores per-channel teacher scale.

use liga::losses::{imitation_layer_loss, normalize_teacher, Adapter, MaskPair};
use liga::tensor::{Tape, Tensor};

fn loss(student: &Tensor, teacher: &Tensor, masks: &MaskPair) -> liga::Result<f64> {
    let mut tape = Tape::new();
    let s = tape.constant(student.clone());
    let adapter = Adapter {
        weight: tape.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0])?),
        bias: tape.constant(Tensor::zeros(&[2])?),
        relu_after: false,
    };
    let l = imitation_layer_loss(&mut tape, s, &adapter, teacher, masks)?;
    tape.value(l).item()
}

fn main() -> liga::Result<()> {
    let teacher = Tensor::new(vec![2, 4], vec![0.0, 2.0, 4.0, 0.0, 1.0, 0.0, 3.0, 5.0])?;
    let masks = MaskPair::new(
        Tensor::new(vec![4], vec![1.0, 1.0, 1.0, 0.0])?,
        Tensor::new(vec![4], vec![0.0, 1.0, 1.0, 1.0])?,
    )?;
    println!("M_fg * M_sp = {:?}", masks.combined());
    let target = normalize_teacher(&teacher);
    println!("normalized teacher {:?}", target.data());
    println!("student = normalized teacher: {}", loss(&target, &teacher, &masks)?);

    let student = Tensor::new(vec![2, 4], vec![0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5])?;
    let base = loss(&student, &teacher, &masks)?;
    let scaled = Tensor::new(vec![2, 4], teacher.data().iter().enumerate().map(|(i, v)| v * if i < 4 { 8.0 } else { 0.25 }).collect())?;
    let mut outside = student.data().to_vec();
    outside[0] = 100.0;
    outside[7] = -100.0;
    let outside = Tensor::new(vec![2, 4], outside)?;
    println!("constant student: {base}");
    println!("teacher channels rescaled: {}", loss(&student, &scaled, &masks)?);
    println!("student changed outside the mask: {}", loss(&outside, &teacher, &masks)?);
    Ok(())
}
