use rand::Rng;

use super::{AutogradError, Real, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn check_rate(rate: f64) -> Result<(), AutogradError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(AutogradError::Contract(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    Ok(())
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, otherwise
/// `1 / (1 - rate)`.
pub fn dropout_mask<T: Real, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    rate: f64,
    rng: &mut R,
) -> Result<Tensor<T>, AutogradError> {
    check_rate(rate)?;
    let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
    let data = (0..rows * cols)
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect();
    Ok(Tensor::new(rows, cols, data))
}

/// Applies inverted dropout in [`Mode::Train`]; identity in [`Mode::Eval`].
pub fn apply_dropout<T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<'_, T>,
    x: Var,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Var, AutogradError> {
    check_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x);
    }
    let [rows, cols] = tape.shape(x);
    let mask = tape.constant(dropout_mask(rows, cols, rate, rng)?)?;
    tape.mul(x, mask)
}
