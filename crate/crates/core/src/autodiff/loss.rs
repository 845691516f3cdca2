use super::{Tape, Var};
use crate::error::{Error, Result};

fn check_shapes(tape: &Tape, op: &'static str, pred: Var, target: Var) -> Result<()> {
    if tape.shape(pred) != tape.shape(target) {
        return Err(Error::Shape {
            op,
            left: tape.shape(pred),
            right: tape.shape(target),
        });
    }
    Ok(())
}

/// Mean binary cross-entropy of logits against `{0, 1}` targets.
pub fn bce_with_logits(tape: &mut Tape, logits: Var, target: Var) -> Result<Var> {
    check_shapes(tape, "bce_with_logits", logits, target)?;
    if let Some(bad) = tape
        .value(target)
        .data()
        .iter()
        .find(|&&t| t != 0.0 && t != 1.0)
    {
        return Err(Error::Domain(format!(
            "binary cross-entropy target {bad} is not 0 or 1"
        )));
    }
    // softplus(x) - t x == -[t ln σ(x) + (1 - t) ln(1 - σ(x))]
    let sp = tape.softplus(logits);
    let tx = tape.mul(target, logits)?;
    let per = tape.sub(sp, tx)?;
    Ok(tape.mean(per))
}

/// Mean squared error.
pub fn mse(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    check_shapes(tape, "mse", pred, target)?;
    let d = tape.sub(pred, target)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.mean(sq))
}

/// `Σ |t_i|`.
pub fn l1_norm(tape: &mut Tape, t: Var) -> Var {
    let a = tape.abs(t);
    tape.sum(a)
}

/// `Σ t_i²`.
pub fn l2_norm_sq(tape: &mut Tape, t: Var) -> Result<Var> {
    let sq = tape.mul(t, t)?;
    Ok(tape.sum(sq))
}
