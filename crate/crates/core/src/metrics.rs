//! Open-loop displacement and speed errors, matched by timestamp.

use crate::geometry::Pose2;
use crate::neural_trajectory::ContinuousTrajectory;
use crate::scenario_data::TrajectorySample;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Average displacement error.
    pub e_ad: f64,
    /// Final displacement error.
    pub e_fd: f64,
    /// Mean absolute longitudinal error.
    pub e_x: f64,
    /// Mean absolute lateral error.
    pub e_y: f64,
    /// Mean absolute speed error.
    pub e_v: f64,
    pub n_samples: usize,
}

/// Compares a prediction with a label, both in the vehicle frame at `t0`.
pub fn evaluate(traj: &ContinuousTrajectory, label: &[TrajectorySample]) -> Result<MetricsReport> {
    evaluate_in_frame(traj, label, &Pose2::IDENTITY)
}

/// Compares a prediction with a label, both expressed in a world frame in
/// which the vehicle at `t0` has pose `frame`. Longitudinal and lateral
/// errors are taken along that pose's axes.
pub fn evaluate_in_frame(
    traj: &ContinuousTrajectory,
    label: &[TrajectorySample],
    frame: &Pose2,
) -> Result<MetricsReport> {
    let Some(last) = label.last() else {
        return Err(Error::EmptyLabel);
    };
    let n = label.len() as f64;
    let mut report = MetricsReport {
        n_samples: label.len(),
        ..Default::default()
    };
    for s in label {
        let pred = traj.eval(s.t);
        let d = frame.rotate_to_local([pred.position[0] - s.position[0], pred.position[1] - s.position[1]]);
        report.e_ad += d[0].hypot(d[1]) / n;
        report.e_x += d[0].abs() / n;
        report.e_y += d[1].abs() / n;
        report.e_v += (pred.speed() - s.speed).abs() / n;
    }
    let pred = traj.eval(last.t);
    report.e_fd = (pred.position[0] - last.position[0]).hypot(pred.position[1] - last.position[1]);
    Ok(report)
}

/// Sample-count-weighted mean of several reports. The final displacement is
/// weighted by sample count as well.
pub fn aggregate(reports: &[MetricsReport]) -> Result<MetricsReport> {
    let total: usize = reports.iter().map(|r| r.n_samples).sum();
    if reports.is_empty() || total == 0 {
        return Err(Error::EmptyReports);
    }
    if let [single] = reports {
        return Ok(*single);
    }
    let mut out = MetricsReport {
        n_samples: total,
        ..Default::default()
    };
    let total = total as f64;
    for r in reports {
        let w = r.n_samples as f64 / total;
        out.e_ad += w * r.e_ad;
        out.e_fd += w * r.e_fd;
        out.e_x += w * r.e_x;
        out.e_y += w * r.e_y;
        out.e_v += w * r.e_v;
    }
    Ok(out)
}
