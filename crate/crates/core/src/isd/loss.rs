use crate::error::{KgeError, Result};
use crate::numkernel::{kl_divergence, softmax_temp, Tape, Tensor, Var};

/// `(T² / d) · KL(softmax(l_s / T) ‖ softmax(l_t / T))`.
pub fn distill_loss(student: &Tensor, teacher: &Tensor, temperature: f64) -> Result<f64> {
    if student.len() != teacher.len() {
        return Err(KgeError::dim(
            "distill_loss",
            student.shape(),
            teacher.shape(),
        ));
    }
    let ps = softmax_temp(student, temperature)?;
    let pt = softmax_temp(teacher, temperature)?;
    let kl = kl_divergence(&ps, &pt)?;
    Ok(temperature * temperature / student.len() as f64 * kl)
}

/// Tape version of [`distill_loss`]; `teacher` never receives a gradient.
pub fn distill_loss_on_tape(
    tape: &mut Tape<'_>,
    student: Var,
    teacher: Var,
    temperature: f64,
) -> Result<Var> {
    let d = tape.value(student).len() as f64;
    tape.distill_kl(student, teacher, temperature, temperature * temperature / d)
}

/// `(1 - β)·bce + β·kl`.
pub fn total_loss(bce: f64, kl: f64, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    Ok((1.0 - beta) * bce + beta * kl)
}

pub(crate) fn check_beta(beta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&beta) {
        Ok(())
    } else {
        Err(KgeError::Parameter(format!(
            "beta must lie in [0, 1], got {beta}"
        )))
    }
}

/// Tape version of [`total_loss`]. Without a distillation term the result is
/// `(1 - β)·bce`, the cold-start convention.
pub fn total_loss_on_tape(
    tape: &mut Tape<'_>,
    bce: Var,
    kl: Option<Var>,
    beta: f64,
) -> Result<Var> {
    check_beta(beta)?;
    let task = tape.scale(bce, 1.0 - beta);
    match kl {
        None => Ok(task),
        Some(kl) => {
            let distill = tape.scale(kl, beta);
            tape.add(task, distill)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_vectors_give_zero() {
        let l = Tensor::from_vec(vec![0.3, -1.0, 2.5]);
        assert_eq!(distill_loss(&l, &l, 1e5).unwrap(), 0.0);
    }

    #[test]
    fn hand_value_at_unit_temperature() {
        let s = Tensor::from_vec(vec![2f64.ln(), 0.0]);
        let t = Tensor::from_vec(vec![0.0, 0.0]);
        let expect = 0.5 * (2.0 / 3.0 * (4.0f64 / 3.0).ln() + 1.0 / 3.0 * (2.0f64 / 3.0).ln());
        let got = distill_loss(&s, &t, 1.0).unwrap();
        assert!((got - expect).abs() < 1e-15);
        assert!((got - 0.028_316_5).abs() < 1e-7);
    }

    #[test]
    fn total_loss_mixing() {
        assert_eq!(total_loss(4.0, 8.0, 0.0).unwrap(), 4.0);
        assert_eq!(total_loss(4.0, 8.0, 1.0).unwrap(), 8.0);
        assert_eq!(total_loss(4.0, 8.0, 0.25).unwrap(), 5.0);
        assert!(total_loss(4.0, 8.0, 1.5).is_err());
    }
}
