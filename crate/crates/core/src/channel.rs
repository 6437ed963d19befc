//! Real AWGN channel, SNR conversions, Shannon capacity and the
//! finite-blocklength normal-approximation rate bound.

use crate::error::{Error, Result};
use crate::rng::SplitRng;
use statrs::function::erf::erfc;

const LOG2_E: f64 = std::f64::consts::LOG2_E;

/// SNR point with its matching noise standard deviation.
///
/// The codeword is unit average power, so gamma_linear = 1 / sigma^2 ties
/// the two fields together.
#[derive(Clone, Copy, Debug)]
pub struct ChannelParams {
    pub snr_db: f64,
    pub sigma: f64,
}

impl ChannelParams {
    pub fn from_snr_db(snr_db: f64) -> Self {
        Self {
            snr_db,
            sigma: snr_db_to_sigma(snr_db),
        }
    }

    pub fn gamma_linear(&self) -> f64 {
        db_to_linear(self.snr_db)
    }
}

#[inline]
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[inline]
pub fn linear_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

/// Noise standard deviation for a unit-power signal at the given SNR:
/// sigma = 10^(-snr_db / 20).
#[inline]
pub fn snr_db_to_sigma(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 20.0)
}

/// y = x + z with z i.i.d. N(0, sigma^2).
pub fn awgn(x: &[f64], sigma: f64, rng: &mut SplitRng) -> Result<Vec<f64>> {
    if sigma < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "negative noise deviation {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(x.to_vec());
    }
    Ok(x.iter().map(|&v| v + sigma * rng.gaussian()).collect())
}

/// Capacity of the real AWGN channel with unit power constraint:
/// C = (1/2) log2(1 + gamma).
#[inline]
pub fn shannon_capacity(gamma_linear: f64) -> f64 {
    0.5 * (1.0 + gamma_linear).log2()
}

/// SNR (dB) at which Shannon capacity equals rate R: 10 log10(2^(2R) - 1).
#[inline]
pub fn shannon_snr_db(rate: f64) -> f64 {
    10.0 * (2f64.powf(2.0 * rate) - 1.0).log10()
}

/// Gaussian tail function Q(x) = P(N(0,1) > x).
#[inline]
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Inverse Gaussian tail function.
///
/// Acklam's rational approximation of the inverse normal CDF seeds a Newton
/// iteration on Q itself, polished until |Q(x) - p| <= 1e-13 * p.
pub fn inv_q(p: f64) -> Result<f64> {
    if !(0.0 < p && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "inv_q argument {p} outside (0, 1)"
        )));
    }
    // Work on the lower tail where Q is well conditioned; mirror the rest.
    if p > 0.5 {
        return Ok(-inv_q_lower(1.0 - p));
    }
    Ok(inv_q_lower(p))
}

/// inv_q for p in (0, 0.5]; the Newton step is well conditioned there.
fn inv_q_lower(p: f64) -> f64 {
    let mut x = -inv_normal_cdf_acklam(p);
    for _ in 0..50 {
        let err = q_function(x) - p;
        if err.abs() <= 1e-13 * p {
            break;
        }
        // Q'(x) = -phi(x)
        let phi = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        if phi == 0.0 {
            break;
        }
        x += err / phi;
    }
    x
}

/// Acklam's inverse normal CDF approximation (relative error ~1.15e-9).
fn inv_normal_cdf_acklam(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Channel dispersion V(gamma) = gamma (gamma + 2) / (2 (gamma + 1)^2) * log2^2(e).
#[inline]
pub fn fbl_dispersion(gamma_linear: f64) -> f64 {
    gamma_linear * (gamma_linear + 2.0) / (2.0 * (gamma_linear + 1.0).powi(2)) * LOG2_E * LOG2_E
}

/// Normal-approximation maximum rate at block length n and error target pe:
/// R*(gamma, pe, n) = C(gamma) - sqrt(V(gamma)/n) Q^-1(pe) + 3 log2(n) / (2n).
pub fn fbl_max_rate(gamma_linear: f64, pe: f64, n: usize) -> Result<f64> {
    if gamma_linear <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "non-positive SNR {gamma_linear}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("block length 0".into()));
    }
    let qinv = inv_q(pe)?;
    let nf = n as f64;
    Ok(shannon_capacity(gamma_linear) - (fbl_dispersion(gamma_linear) / nf).sqrt() * qinv
        + 1.5 * nf.log2() / nf)
}

/// Smallest SNR (dB) at which `fbl_max_rate` reaches the rate, by bisection.
pub fn fbl_threshold_snr_db(rate: f64, pe: f64, n: usize) -> Result<f64> {
    if rate <= 0.0 {
        return Err(Error::InvalidArgument(format!("non-positive rate {rate}")));
    }
    let reaches = |db: f64| -> Result<bool> { Ok(fbl_max_rate(db_to_linear(db), pe, n)? >= rate) };
    let mut lo = -40.0;
    let mut hi = 40.0;
    // The bound is strictly increasing in gamma; widen until bracketed.
    while !reaches(hi)? {
        hi += 20.0;
        if hi > 200.0 {
            return Err(Error::InvalidArgument(
                "rate unreachable within 200 dB".into(),
            ));
        }
    }
    while reaches(lo)? {
        lo -= 20.0;
    }
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if reaches(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
