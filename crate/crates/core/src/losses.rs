//! Cycle-consistency loss and the total objective.
//!
//! ```text
//! cyc   = L1(D_cyc, D) + L1(C_cyc, C) + fourier_weight * (F(D_cyc, D) + F(C_cyc, C))
//! total = lambda_cyc * cyc + lambda_dacr * dacr
//! ```
//!
//! `L1` is the mean absolute difference and `F` is
//! [`crate::spectral::fourier_distance_var`].

use alloc::format;
use alloc::string::ToString;

use crate::spectral::{fourier_distance_var, image_tensor, FourierMode};
use crate::tape::{Tape, Var};
use crate::{Error, Result, RgbImage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_cyc: f64,
    pub lambda_dacr: f64,
    pub fourier_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_cyc: 1.0, lambda_dacr: 0.8, fourier_weight: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_cyc", self.lambda_cyc),
            ("lambda_dacr", self.lambda_dacr),
            ("fourier_weight", self.fourier_weight),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

pub fn l1_var(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::dims(tape.shape(a), tape.shape(b)));
    }
    let d = tape.sub(a, b);
    let d = tape.abs(d);
    Ok(tape.mean(d))
}

fn pair_var(tape: &mut Tape, cyc: Var, orig: Var, fourier_weight: f64, mode: FourierMode) -> Result<Var> {
    let l1 = l1_var(tape, cyc, orig)?;
    if fourier_weight == 0.0 {
        return Ok(l1);
    }
    let f = fourier_distance_var(tape, cyc, orig, mode)?;
    let f = tape.scale(f, fourier_weight);
    Ok(tape.add(l1, f))
}

/// Cycle loss for one degraded and one clean reconstruction pair.
pub fn cycle_loss_var(
    tape: &mut Tape,
    d_cyc: Var,
    d_orig: Var,
    c_cyc: Var,
    c_orig: Var,
    fourier_weight: f64,
    mode: FourierMode,
) -> Result<Var> {
    let d = pair_var(tape, d_cyc, d_orig, fourier_weight, mode)?;
    let c = pair_var(tape, c_cyc, c_orig, fourier_weight, mode)?;
    Ok(tape.add(d, c))
}

pub fn cycle_loss(d_cyc: &RgbImage, d_orig: &RgbImage, c_cyc: &RgbImage, c_orig: &RgbImage, fourier_weight: f64) -> Result<f64> {
    cycle_loss_with(d_cyc, d_orig, c_cyc, c_orig, fourier_weight, FourierMode::default())
}

pub fn cycle_loss_with(
    d_cyc: &RgbImage,
    d_orig: &RgbImage,
    c_cyc: &RgbImage,
    c_orig: &RgbImage,
    fourier_weight: f64,
    mode: FourierMode,
) -> Result<f64> {
    d_cyc.ensure_same_dims(d_orig)?;
    c_cyc.ensure_same_dims(c_orig)?;
    let mut tape = Tape::new();
    let vars = [d_cyc, d_orig, c_cyc, c_orig].map(|i| tape.constant(image_tensor(i)));
    let l = cycle_loss_var(&mut tape, vars[0], vars[1], vars[2], vars[3], fourier_weight, mode)?;
    Ok(tape.scalar_value(l))
}

pub fn total_loss(l_cyc: f64, l_dacr: f64, w: &LossWeights) -> Result<f64> {
    for (term, v) in [("cycle", l_cyc), ("dacr", l_dacr)] {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss { term: term.to_string(), index: None });
        }
    }
    Ok(w.lambda_cyc * l_cyc + w.lambda_dacr * l_dacr)
}
