//! Constant-velocity Kalman filter on `(cx, cy, aspect, height)` boxes.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use super::TrackerError;
use crate::geometry::BBox;

pub type StateVector = SVector<f64, 8>;
pub type StateCovariance = SMatrix<f64, 8, 8>;
pub type Measurement = SVector<f64, 4>;
pub type MeasurementCovariance = SMatrix<f64, 4, 4>;

/// Filter parameters. Noise standard deviations scale with the box height,
/// with fixed small values for the aspect components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KalmanModel {
    /// Time step in frames between predicts. 0 makes `F` the identity.
    pub dt: f64,
    pub std_weight_position: f64,
    pub std_weight_velocity: f64,
    /// Multiplier on the process noise `Q`; 0 disables it.
    pub process_noise_scale: f64,
    /// Multiplier on the observation noise `R`; 0 disables it.
    pub measurement_noise_scale: f64,
}

impl Default for KalmanModel {
    fn default() -> Self {
        Self {
            dt: 1.0,
            std_weight_position: 1.0 / 20.0,
            std_weight_velocity: 1.0 / 160.0,
            process_noise_scale: 1.0,
            measurement_noise_scale: 1.0,
        }
    }
}

impl KalmanModel {
    pub fn validate(&self) -> Result<(), String> {
        let vals = [
            self.dt,
            self.std_weight_position,
            self.std_weight_velocity,
            self.process_noise_scale,
            self.measurement_noise_scale,
        ];
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err("kalman parameters must be finite and non-negative".into());
        }
        Ok(())
    }

    pub fn transition(&self) -> StateCovariance {
        let mut f = StateCovariance::identity();
        for i in 0..4 {
            f[(i, i + 4)] = self.dt;
        }
        f
    }

    pub fn observation(&self) -> SMatrix<f64, 4, 8> {
        let mut h = SMatrix::<f64, 4, 8>::zeros();
        for i in 0..4 {
            h[(i, i)] = 1.0;
        }
        h
    }

    pub fn process_noise(&self, mean: &StateVector) -> StateCovariance {
        let h = mean[3].abs();
        let p = self.std_weight_position * h;
        let v = self.std_weight_velocity * h;
        let std = [p, p, 1e-2, p, v, v, 1e-5, v];
        let s = self.process_noise_scale;
        StateCovariance::from_diagonal(&StateVector::from_iterator(std.iter().map(|x| s * x * x)))
    }

    pub fn measurement_noise(&self, mean: &StateVector) -> MeasurementCovariance {
        let p = self.std_weight_position * mean[3].abs();
        let std = [p, p, 1e-1, p];
        let s = self.measurement_noise_scale;
        MeasurementCovariance::from_diagonal(&Measurement::from_iterator(std.iter().map(|x| s * x * x)))
    }

    /// New state at `bbox` with zero velocity.
    pub fn initiate(&self, bbox: &BBox) -> (StateVector, StateCovariance) {
        let z = bbox.to_xyah();
        let mut mean = StateVector::zeros();
        mean.fixed_rows_mut::<4>(0).copy_from_slice(&z);
        let h = z[3];
        let p = 2.0 * self.std_weight_position * h;
        let v = 10.0 * self.std_weight_velocity * h;
        let std = [p, p, 1e-2, p, v, v, 1e-5, v];
        let cov = StateCovariance::from_diagonal(&StateVector::from_iterator(std.iter().map(|x| x * x)));
        (mean, cov)
    }

    /// `mean <- F mean`, `cov <- F cov F^T + Q`.
    pub fn predict(
        &self,
        mean: &StateVector,
        cov: &StateCovariance,
    ) -> Result<(StateVector, StateCovariance), TrackerError> {
        let f = self.transition();
        let mean_out = f * mean;
        let cov_out = symmetrize(f * cov * f.transpose() + self.process_noise(mean));
        check_finite(&mean_out, &cov_out)?;
        Ok((mean_out, cov_out))
    }

    /// Mean and covariance in measurement space.
    pub fn project(&self, mean: &StateVector, cov: &StateCovariance) -> (Measurement, MeasurementCovariance) {
        let h = self.observation();
        (
            h * mean,
            symmetrize(h * cov * h.transpose() + self.measurement_noise(mean)),
        )
    }

    /// Kalman correction with the Joseph-form covariance update.
    pub fn update(
        &self,
        mean: &StateVector,
        cov: &StateCovariance,
        bbox: &BBox,
    ) -> Result<(StateVector, StateCovariance), TrackerError> {
        let h = self.observation();
        let r = self.measurement_noise(mean);
        let (projected, s) = self.project(mean, cov);
        let chol = s.cholesky().ok_or(TrackerError::SingularInnovation)?;
        // K = P H^T S^-1, solved as S K^T = H P
        let gain = chol.solve(&(h * cov)).transpose();
        let innovation = Measurement::from_column_slice(&bbox.to_xyah()) - projected;
        let mean_out = mean + gain * innovation;
        let ikh = StateCovariance::identity() - gain * h;
        let cov_out = symmetrize(ikh * cov * ikh.transpose() + gain * r * gain.transpose());
        check_finite(&mean_out, &cov_out)?;
        Ok((mean_out, cov_out))
    }

    /// The box described by the first four state components.
    pub fn state_bbox(&self, mean: &StateVector) -> Result<BBox, TrackerError> {
        BBox::from_xyah(mean[0], mean[1], mean[2], mean[3]).map_err(|_| TrackerError::NonFiniteState)
    }
}

fn symmetrize<const N: usize>(m: SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (m + m.transpose()) * 0.5
}

fn check_finite(mean: &StateVector, cov: &StateCovariance) -> Result<(), TrackerError> {
    if mean.iter().chain(cov.iter()).all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TrackerError::NonFiniteState)
    }
}
