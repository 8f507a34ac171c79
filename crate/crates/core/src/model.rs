//! The sinc pulse model of a single FMCW depth profile.
//!
//! A pixel is described by four parameters: amplitude `ê`, pulse width `σ`,
//! surface depth `μ` and phase `φ`. The complex model sample at depth `z` is
//!
//! ```text
//! f(z) = ê · sinc(σ (z − μ)) · exp(−i (ω z − φ))
//! ```
//!
//! with the normalized `sinc(t) = sin(πt) / (πt)`. Complex samples are stored
//! interleaved as `[re₀, im₀, re₁, im₁, …]`, which is also the row layout of
//! [`jacobian`].
//!
//! Every function here is pure and operates in 64-bit floating point.

use std::f64::consts::PI;
use std::ops::Deref;

use nalgebra::{Dyn, OMatrix, U4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this magnitude `sinc_deriv` switches to its Taylor series.
pub const SINC_DERIV_SWITCH: f64 = 1e-6;

/// Default angular frequency in radians per depth sample.
pub const DEFAULT_OMEGA: f64 = 2.0;

/// Default number of depth samples per pixel after cropping.
pub const DEFAULT_NZ: usize = 91;

/// Normalized sinc, exactly 1 at the origin.
#[inline]
pub fn sinc(t: f64) -> f64 {
    if t == 0.0 {
        1.0
    } else {
        let x = PI * t;
        x.sin() / x
    }
}

/// Derivative of [`sinc`].
#[inline]
pub fn sinc_deriv(t: f64) -> f64 {
    if t.abs() <= SINC_DERIV_SWITCH {
        // −π²t/3 + π⁴t³/30
        let p2 = PI * PI;
        t * (-p2 / 3.0 + p2 * p2 * t * t / 30.0)
    } else {
        let x = PI * t;
        (x.cos() - x.sin() / x) / t
    }
}

/// Wraps an angle into `[−π, π)`. Values already in range are returned unchanged.
#[inline]
pub fn wrap_phase(phi: f64) -> f64 {
    if (-PI..PI).contains(&phi) {
        return phi;
    }
    let two_pi = 2.0 * PI;
    let mut w = phi - two_pi * ((phi + PI) / two_pi).floor();
    // floor rounding can land exactly on the open end
    if w >= PI {
        w -= two_pi;
    }
    if w < -PI {
        w = -PI;
    }
    w
}

/// The four per-pixel unknowns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelParams {
    /// Reflectance amplitude `ê ≥ 0`.
    pub amplitude: f64,
    /// Pulse width `σ > 0`, inverse depth-sample units.
    pub width: f64,
    /// Surface depth `μ`, depth-sample units.
    pub depth: f64,
    /// Phase `φ`, radians in `[−π, π)`.
    pub phase: f64,
}

impl PixelParams {
    /// Validates the parameters and wraps the phase.
    pub fn new(amplitude: f64, width: f64, depth: f64, phase: f64) -> Result<Self> {
        if ![amplitude, width, depth, phase]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::InvalidParams("non-finite parameter".into()));
        }
        if amplitude < 0.0 {
            return Err(Error::InvalidParams(format!("amplitude {amplitude} < 0")));
        }
        if width <= 0.0 {
            return Err(Error::InvalidParams(format!("width {width} <= 0")));
        }
        Ok(Self {
            amplitude,
            width,
            depth,
            phase: wrap_phase(phase),
        })
    }

    #[inline]
    pub fn to_array(self) -> [f64; 4] {
        [self.amplitude, self.width, self.depth, self.phase]
    }

    /// Builds parameters from `[ê, σ, μ, φ]` without validation.
    #[inline]
    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            amplitude: a[0],
            width: a[1],
            depth: a[2],
            phase: a[3],
        }
    }

    /// Intensity `ê²`.
    #[inline]
    pub fn intensity(&self) -> f64 {
        intensity(self)
    }
}

/// Sampling grid and carrier frequency of the acquisition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionConfig {
    z_grid: Vec<f64>,
    omega: f64,
}

impl AcquisitionConfig {
    pub fn new(z_grid: Vec<f64>, omega: f64) -> Result<Self> {
        if z_grid.is_empty() {
            return Err(Error::InvalidConfig("empty z grid".into()));
        }
        if !z_grid.iter().all(|z| z.is_finite()) || z_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig(
                "z grid must be finite and strictly increasing".into(),
            ));
        }
        if !(omega.is_finite() && omega > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "omega must be positive, got {omega}"
            )));
        }
        Ok(Self { z_grid, omega })
    }

    /// Integer grid `0..n_z` with the given carrier frequency.
    pub fn uniform(n_z: usize, omega: f64) -> Result<Self> {
        Self::new((0..n_z).map(|i| i as f64).collect(), omega)
    }

    #[inline]
    pub fn z_grid(&self) -> &[f64] {
        &self.z_grid
    }

    #[inline]
    pub fn omega(&self) -> f64 {
        self.omega
    }

    #[inline]
    pub fn n_z(&self) -> usize {
        self.z_grid.len()
    }

    /// First and last grid positions.
    pub fn extent(&self) -> (f64, f64) {
        (self.z_grid[0], self.z_grid[self.z_grid.len() - 1])
    }

    /// Average distance between neighbouring depths, 1 for a single sample.
    pub fn mean_spacing(&self) -> f64 {
        let (lo, hi) = self.extent();
        if self.z_grid.len() > 1 {
            (hi - lo) / (self.z_grid.len() - 1) as f64
        } else {
            1.0
        }
    }

    pub fn midpoint(&self) -> f64 {
        let (lo, hi) = self.extent();
        0.5 * (lo + hi)
    }
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self::uniform(DEFAULT_NZ, DEFAULT_OMEGA).expect("default grid is valid")
    }
}

/// One pixel's complex depth profile, interleaved real/imaginary.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal(Vec<f64>);

impl Signal {
    pub fn from_interleaved(samples: Vec<f64>) -> Result<Self> {
        if !samples.len().is_multiple_of(2) {
            return Err(Error::InvalidParams("odd interleaved length".into()));
        }
        if !samples.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParams("non-finite sample".into()));
        }
        Ok(Self(samples))
    }

    pub fn from_channels(re: &[f64], im: &[f64]) -> Result<Self> {
        if re.len() != im.len() {
            return Err(Error::ChannelMismatch {
                re: re.len(),
                im: im.len(),
            });
        }
        let data = re.iter().zip(im).flat_map(|(&r, &i)| [r, i]).collect();
        Self::from_interleaved(data)
    }

    pub fn zeros(n_z: usize) -> Self {
        Self(vec![0.0; 2 * n_z])
    }

    #[inline]
    pub fn n_z(&self) -> usize {
        self.0.len() / 2
    }

    #[inline]
    pub fn re(&self, i: usize) -> f64 {
        self.0[2 * i]
    }

    #[inline]
    pub fn im(&self, i: usize) -> f64 {
        self.0[2 * i + 1]
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Signal {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Squared magnitude of complex sample `i` of an interleaved buffer.
#[inline]
pub(crate) fn power_at(samples: &[f64], i: usize) -> f64 {
    let (re, im) = (samples[2 * i], samples[2 * i + 1]);
    re * re + im * im
}

/// Jacobian of the interleaved model signal, `2 n_z × 4`.
pub type Jacobian = OMatrix<f64, Dyn, U4>;

/// Evaluates the model for raw `[ê, σ, μ, φ]` into an interleaved buffer.
pub fn forward_into(theta: &[f64; 4], cfg: &AcquisitionConfig, out: &mut [f64]) {
    let [amp, width, depth, phase] = *theta;
    assert_eq!(out.len(), 2 * cfg.n_z(), "output buffer length");
    for (i, &z) in cfg.z_grid.iter().enumerate() {
        let env = amp * sinc(width * (z - depth));
        let (s, c) = (phase - cfg.omega * z).sin_cos();
        out[2 * i] = env * c;
        out[2 * i + 1] = env * s;
    }
}

/// Model signal at the grid positions.
pub fn forward(p: &PixelParams, cfg: &AcquisitionConfig) -> Signal {
    let mut out = vec![0.0; 2 * cfg.n_z()];
    forward_into(&p.to_array(), cfg, &mut out);
    Signal(out)
}

/// Writes residual `f − g` and the model Jacobian for raw parameters; returns the loss.
pub(crate) fn residual_jacobian_into(
    theta: &[f64; 4],
    g: &[f64],
    cfg: &AcquisitionConfig,
    residual: &mut [f64],
    jac: &mut Jacobian,
) -> f64 {
    let [amp, width, depth, phase] = *theta;
    let n = cfg.n_z();
    assert_eq!(g.len(), 2 * n, "signal length");
    let mut loss = 0.0;
    for (i, &z) in cfg.z_grid.iter().enumerate() {
        let dz = z - depth;
        let t = width * dz;
        let s = sinc(t);
        let ds = sinc_deriv(t);
        let (sn, cs) = (phase - cfg.omega * z).sin_cos();
        let env = amp * s;
        let (fr, fi) = (env * cs, env * sn);
        let (rr, ri) = (fr - g[2 * i], fi - g[2 * i + 1]);
        residual[2 * i] = rr;
        residual[2 * i + 1] = ri;
        loss += rr * rr + ri * ri;

        let d_width = amp * ds * dz;
        let d_depth = -amp * ds * width;
        jac[(2 * i, 0)] = s * cs;
        jac[(2 * i + 1, 0)] = s * sn;
        jac[(2 * i, 1)] = d_width * cs;
        jac[(2 * i + 1, 1)] = d_width * sn;
        jac[(2 * i, 2)] = d_depth * cs;
        jac[(2 * i + 1, 2)] = d_depth * sn;
        // ∂f/∂φ = i·f
        jac[(2 * i, 3)] = -fi;
        jac[(2 * i + 1, 3)] = fr;
    }
    loss
}

/// Partial derivatives `∂f/∂ê, ∂f/∂σ, ∂f/∂μ, ∂f/∂φ` as columns.
pub fn jacobian(p: &PixelParams, cfg: &AcquisitionConfig) -> Jacobian {
    let n = cfg.n_z();
    let mut jac = Jacobian::zeros(2 * n);
    let mut residual = vec![0.0; 2 * n];
    let zeros = vec![0.0; 2 * n];
    residual_jacobian_into(&p.to_array(), &zeros, cfg, &mut residual, &mut jac);
    jac
}

/// Squared residual `‖f(θ) − g‖²` for raw parameters.
///
/// Evaluated through [`forward_into`] so that a signal produced by [`forward`]
/// has exactly zero loss.
pub fn loss_raw(theta: &[f64; 4], g: &[f64], cfg: &AcquisitionConfig) -> f64 {
    assert_eq!(g.len(), 2 * cfg.n_z(), "signal length");
    let mut f = vec![0.0; g.len()];
    forward_into(theta, cfg, &mut f);
    f.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Loss and its gradient `2 Jᵀ r` for raw parameters.
///
/// The parameters are not required to satisfy [`PixelParams`] invariants; the
/// encoder evaluates this at unconstrained network outputs.
pub fn loss_and_gradient_raw(
    theta: &[f64; 4],
    g: &[f64],
    cfg: &AcquisitionConfig,
) -> (f64, [f64; 4]) {
    let [amp, width, depth, phase] = *theta;
    assert_eq!(g.len(), 2 * cfg.n_z(), "signal length");
    let mut loss = 0.0;
    let mut grad = [0.0; 4];
    for (i, &z) in cfg.z_grid.iter().enumerate() {
        let dz = z - depth;
        let t = width * dz;
        let s = sinc(t);
        let ds = sinc_deriv(t);
        let (sn, cs) = (phase - cfg.omega * z).sin_cos();
        let env = amp * s;
        let (fr, fi) = (env * cs, env * sn);
        let (rr, ri) = (fr - g[2 * i], fi - g[2 * i + 1]);
        loss += rr * rr + ri * ri;
        // residual projected onto the phasor and its quadrature
        let along = rr * cs + ri * sn;
        grad[0] += s * along;
        grad[1] += amp * ds * dz * along;
        grad[2] -= amp * ds * width * along;
        grad[3] += ri * fr - rr * fi;
    }
    (loss, grad.map(|v| 2.0 * v))
}

/// Per-pixel loss: sum of squared residuals over all `2 n_z` real components.
pub fn pixel_loss(p: &PixelParams, g: &[f64], cfg: &AcquisitionConfig) -> f64 {
    loss_raw(&p.to_array(), g, cfg)
}

/// Gradient of [`pixel_loss`] with respect to `[ê, σ, μ, φ]`.
pub fn loss_gradient(p: &PixelParams, g: &[f64], cfg: &AcquisitionConfig) -> [f64; 4] {
    loss_and_gradient_raw(&p.to_array(), g, cfg).1
}

/// Intensity `ê²`, the squared model magnitude at `z = μ`.
#[inline]
pub fn intensity(p: &PixelParams) -> f64 {
    p.amplitude * p.amplitude
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg91() -> AcquisitionConfig {
        AcquisitionConfig::default()
    }

    fn random_params(rng: &mut impl Rng) -> PixelParams {
        PixelParams::new(
            rng.random_range(0.1..5.0),
            rng.random_range(0.05..1.0),
            rng.random_range(10.0..80.0),
            rng.random_range(-PI..PI),
        )
        .unwrap()
    }

    #[test]
    fn sinc_values() {
        assert_eq!(sinc(0.0), 1.0);
        assert!(sinc(1.0).abs() < 1e-15);
        assert_relative_eq!(sinc(0.5), 2.0 / PI, epsilon = 1e-15);
        assert!((sinc(1e-8) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sinc_range() {
        let lo = -0.2172 * 1.01;
        for k in 0..200_000 {
            let t = -50.0 + k as f64 * 5e-4;
            let s = sinc(t);
            assert!((lo..=1.0).contains(&s), "sinc({t}) = {s}");
        }
    }

    #[test]
    fn sinc_deriv_values() {
        assert_eq!(sinc_deriv(0.0), 0.0);
        assert_relative_eq!(sinc_deriv(1.0), -1.0, epsilon = 1e-14);
        // central difference oracle with step 1e-5
        let h = 1e-5;
        let t = 1e-9;
        let fd = (sinc(t + h) - sinc(t - h)) / (2.0 * h);
        assert!((sinc_deriv(t) - fd).abs() < 1e-10);
        assert_relative_eq!(sinc_deriv(t), -3.289868e-9, max_relative = 1e-6);
    }

    #[test]
    fn sinc_deriv_continuous_at_switch() {
        let below = sinc_deriv(SINC_DERIV_SWITCH);
        let above = sinc_deriv(SINC_DERIV_SWITCH * (1.0 + 1e-12));
        assert!((below - above).abs() < 1e-9, "{below} vs {above}");
        let below = sinc_deriv(-SINC_DERIV_SWITCH);
        let above = sinc_deriv(-SINC_DERIV_SWITCH * (1.0 + 1e-12));
        assert!((below - above).abs() < 1e-9);
    }

    #[test]
    fn wrap_phase_canonical() {
        assert_eq!(wrap_phase(0.3), 0.3);
        assert_eq!(wrap_phase(-PI), -PI);
        assert_relative_eq!(wrap_phase(PI), -PI);
        assert_relative_eq!(wrap_phase(3.0 * PI + 0.25), -PI + 0.25, epsilon = 1e-12);
        assert_relative_eq!(wrap_phase(-7.0), -7.0 + 2.0 * PI, epsilon = 1e-12);
    }

    #[test]
    fn params_validate() {
        assert!(PixelParams::new(-0.1, 0.2, 1.0, 0.0).is_err());
        assert!(PixelParams::new(1.0, 0.0, 1.0, 0.0).is_err());
        assert!(PixelParams::new(1.0, 0.2, f64::NAN, 0.0).is_err());
        let p = PixelParams::new(1.0, 0.2, 1.0, 4.0).unwrap();
        assert_relative_eq!(p.phase, 4.0 - 2.0 * PI, epsilon = 1e-15);
    }

    #[test]
    fn config_validate() {
        assert!(AcquisitionConfig::new(vec![], 2.0).is_err());
        assert!(AcquisitionConfig::new(vec![0.0, 0.0], 2.0).is_err());
        assert!(AcquisitionConfig::new(vec![0.0, 1.0], 0.0).is_err());
        let cfg = cfg91();
        assert_eq!(cfg.n_z(), 91);
        assert_eq!(cfg.omega(), 2.0);
        assert_eq!(cfg.midpoint(), 45.0);
    }

    #[test]
    fn zero_amplitude_gives_zero_signal() {
        let p = PixelParams::new(0.0, 0.3, 12.5, 1.0).unwrap();
        assert!(forward(&p, &cfg91()).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_matches_golden_file() {
        let text = include_str!("../tests/data/forward_golden.csv");
        let cfg = cfg91();
        let p = PixelParams::new(1.0, 0.2, 45.0, 0.7).unwrap();
        let f = forward(&p, &cfg);
        let mut rows = 0;
        let mut golden_loss = None;
        for line in text.lines() {
            let cols: Vec<&str> = line.split(',').collect();
            if cols[0] == "loss" {
                golden_loss = Some(cols[1].parse::<f64>().unwrap());
                continue;
            }
            let i: usize = cols[0].parse().unwrap();
            let re: f64 = cols[2].parse().unwrap();
            let im: f64 = cols[3].parse().unwrap();
            assert!((f.re(i) - re).abs() < 1e-14, "re[{i}]");
            assert!((f.im(i) - im).abs() < 1e-14, "im[{i}]");
            rows += 1;
        }
        assert_eq!(rows, 91);

        let g: Vec<f64> = (0..91)
            .flat_map(|i| {
                [
                    0.3 * (0.11 * i as f64).cos(),
                    -0.2 * (0.07 * i as f64).sin(),
                ]
            })
            .collect();
        assert_relative_eq!(
            pixel_loss(&p, &g, &cfg),
            golden_loss.unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn magnitude_at_depth_is_amplitude() {
        let cfg = cfg91();
        let p = PixelParams::new(2.5, 0.4, 30.0, -1.2).unwrap();
        let f = forward(&p, &cfg);
        assert_relative_eq!(power_at(&f, 30).sqrt(), 2.5, max_relative = 1e-14);
        assert_relative_eq!(power_at(&f, 30), intensity(&p), max_relative = 1e-14);
    }

    #[test]
    fn intensity_values() {
        assert_eq!(
            intensity(&PixelParams::new(0.0, 1.0, 0.0, 0.0).unwrap()),
            0.0
        );
        assert_eq!(
            intensity(&PixelParams::new(3.0, 1.0, 0.0, 0.0).unwrap()),
            9.0
        );
    }

    fn fd_jacobian(p: &PixelParams, cfg: &AcquisitionConfig, h: f64) -> Vec<Vec<f64>> {
        let base = p.to_array();
        (0..4)
            .map(|k| {
                let mut plus = base;
                let mut minus = base;
                plus[k] += h;
                minus[k] -= h;
                let mut fp = vec![0.0; 2 * cfg.n_z()];
                let mut fm = vec![0.0; 2 * cfg.n_z()];
                forward_into(&plus, cfg, &mut fp);
                forward_into(&minus, cfg, &mut fm);
                fp.iter()
                    .zip(&fm)
                    .map(|(a, b)| (a - b) / (2.0 * h))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn jacobian_zero_amplitude_columns() {
        let p = PixelParams::new(0.0, 0.3, 40.0, 0.5).unwrap();
        let jac = jacobian(&p, &cfg91());
        for col in 1..4 {
            assert!(jac.column(col).iter().all(|&v| v == 0.0));
        }
        // ∂f/∂ê stays the unit-amplitude pulse
        let unit = forward(
            &PixelParams {
                amplitude: 1.0,
                ..p
            },
            &cfg91(),
        );
        for (a, b) in jac.column(0).iter().zip(unit.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn jacobian_phase_column_at_depth() {
        let p = PixelParams::new(1.7, 0.3, 40.0, 0.5).unwrap();
        let jac = jacobian(&p, &cfg91());
        let m = (jac[(80, 3)].powi(2) + jac[(81, 3)].powi(2)).sqrt();
        assert_relative_eq!(m, 1.7, max_relative = 1e-14);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let cfg = cfg91();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let p = random_params(&mut rng);
            let jac = jacobian(&p, &cfg);
            let fd = fd_jacobian(&p, &cfg, 1e-6);
            for (k, col) in fd.iter().enumerate() {
                let scale = col.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
                for (row, &v) in col.iter().enumerate() {
                    let err = (jac[(row, k)] - v).abs() / scale;
                    assert!(err < 1e-6, "param {k} row {row}: {} vs {v}", jac[(row, k)]);
                }
            }
        }
    }

    #[test]
    fn gradient_vanishes_at_exact_fit() {
        let cfg = cfg91();
        let p = PixelParams::new(1.3, 0.25, 33.3, 2.0).unwrap();
        let g = forward(&p, &cfg);
        assert_eq!(pixel_loss(&p, &g, &cfg), 0.0);
        assert_eq!(loss_gradient(&p, &g, &cfg), [0.0; 4]);
    }

    #[test]
    fn gradient_amplitude_component_against_zero_signal() {
        let cfg = cfg91();
        let p = PixelParams::new(1.9, 0.15, 47.2, -0.4).unwrap();
        let g = vec![0.0; 182];
        let expected: f64 = 2.0
            * p.amplitude
            * cfg
                .z_grid()
                .iter()
                .map(|&z| sinc(p.width * (z - p.depth)).powi(2))
                .sum::<f64>();
        assert_relative_eq!(
            loss_gradient(&p, &g, &cfg)[0],
            expected,
            max_relative = 1e-13
        );
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = cfg91();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let p = random_params(&mut rng);
            let q = random_params(&mut rng);
            let mut g = forward(&q, &cfg).into_inner();
            g.iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
            let grad = loss_gradient(&p, &g, &cfg);
            let h = 1e-6;
            let base = p.to_array();
            let fd: Vec<f64> = (0..4)
                .map(|k| {
                    let (mut a, mut b) = (base, base);
                    a[k] += h;
                    b[k] -= h;
                    (loss_raw(&a, &g, &cfg) - loss_raw(&b, &g, &cfg)) / (2.0 * h)
                })
                .collect();
            let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
            for k in 0..4 {
                assert!(
                    (grad[k] - fd[k]).abs() / scale < 1e-5,
                    "k={k}: {} vs {}",
                    grad[k],
                    fd[k]
                );
            }
        }
    }

    #[test]
    fn jacobian_consistent_with_gradient() {
        let cfg = cfg91();
        let p = PixelParams::new(2.0, 0.3, 44.1, 0.9).unwrap();
        let g: Vec<f64> = (0..182).map(|i| ((i as f64) * 0.37).sin() * 0.2).collect();
        let mut r = vec![0.0; 182];
        let mut jac = Jacobian::zeros(182);
        let loss = residual_jacobian_into(&p.to_array(), &g, &cfg, &mut r, &mut jac);
        let grad = jac.transpose() * nalgebra::DVector::from_vec(r) * 2.0;
        let (l2, g2) = loss_and_gradient_raw(&p.to_array(), &g, &cfg);
        assert_relative_eq!(loss, l2, max_relative = 1e-14);
        for k in 0..4 {
            assert_relative_eq!(grad[k], g2[k], max_relative = 1e-10, epsilon = 1e-12);
        }
    }

    proptest! {
        #[test]
        fn phase_periodicity(a in 0.0..5.0f64, s in 0.05..1.0f64, m in 0.0..90.0f64, phi in -PI..PI) {
            let cfg = cfg91();
            let p = PixelParams::new(a, s, m, phi).unwrap();
            let q = PixelParams::new(a, s, m, phi + 2.0 * PI).unwrap();
            let (fp, fq) = (forward(&p, &cfg), forward(&q, &cfg));
            for (x, y) in fp.iter().zip(fq.iter()) {
                prop_assert!((x - y).abs() <= 1e-12 * a.max(1.0));
            }
        }

        #[test]
        fn amplitude_linearity(a in 0.0..5.0f64, c in 0.0..4.0f64, s in 0.05..1.0f64, m in 0.0..90.0f64, phi in -PI..PI) {
            let cfg = cfg91();
            let base = forward(&PixelParams::new(a, s, m, phi).unwrap(), &cfg);
            let scaled = forward(&PixelParams::new(c * a, s, m, phi).unwrap(), &cfg);
            for (x, y) in base.iter().zip(scaled.iter()) {
                prop_assert!((c * x - y).abs() <= 1e-13 * (c * a).max(1.0));
            }
        }

        #[test]
        fn exact_model_has_zero_loss(a in 0.0..5.0f64, s in 0.001..2.0f64, m in -10.0..100.0f64, phi in -PI..PI) {
            let cfg = cfg91();
            let p = PixelParams::new(a, s, m, phi).unwrap();
            prop_assert_eq!(pixel_loss(&p, &forward(&p, &cfg), &cfg), 0.0);
        }
    }
}
