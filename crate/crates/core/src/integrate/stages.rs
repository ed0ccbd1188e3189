//! Stage-state providers for the adjoint sweeps.

use nalgebra::DVector;

use super::Trajectory;
use crate::error::{Error, Result};
use crate::tableau::ImexTableau;

/// Source of the stage states `Y_n^(i)` at which adjoint Jacobians are evaluated.
pub trait StageStates: Sync {
    fn stage(&self, n: usize, i: usize) -> DVector<f64>;
}

/// Exact stage values stored by the forward pass.
pub struct StoredStages<'a>(pub &'a Trajectory);

impl StageStates for StoredStages<'_> {
    fn stage(&self, n: usize, i: usize) -> DVector<f64> {
        self.0.stages_y[n][i].clone()
    }
}

/// Named stage-state sources, as selected on the command line.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum StageSource {
    #[default]
    Stored,
    Poly2,
    Poly3,
}

impl StageSource {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "stored" => Ok(StageSource::Stored),
            "poly2" => Ok(StageSource::Poly2),
            "poly3" => Ok(StageSource::Poly3),
            other => Err(Error::UnknownName {
                kind: "stage source",
                name: other.to_string(),
                available: vec!["stored".into(), "poly2".into(), "poly3".into()],
            }),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StageSource::Stored => "stored",
            StageSource::Poly2 => "poly2",
            StageSource::Poly3 => "poly3",
        }
    }

    /// Builds the provider for a trajectory.
    pub fn provider<'a>(
        self,
        tab: &ImexTableau,
        traj: &'a Trajectory,
    ) -> Result<Box<dyn StageStates + 'a>> {
        match self {
            StageSource::Stored => Ok(Box::new(StoredStages(traj))),
            StageSource::Poly2 => Ok(Box::new(interpolate_stage_states(tab, traj, 2)?)),
            StageSource::Poly3 => Ok(Box::new(interpolate_stage_states(tab, traj, 3)?)),
        }
    }
}

/// Stage states reconstructed from grid values: `Y_n^(i) ≈ y(t_n + c̃_i h)` by
/// Lagrange interpolation through `order + 1` consecutive grid points.
pub struct InterpolatedStages<'a> {
    traj: &'a Trajectory,
    c: DVector<f64>,
    order: usize,
}

pub fn interpolate_stage_states<'a>(
    tab: &ImexTableau,
    traj: &'a Trajectory,
    order: usize,
) -> Result<InterpolatedStages<'a>> {
    if !(2..=3).contains(&order) {
        return Err(Error::Domain(format!("interpolation order must be 2 or 3, got {order}")));
    }
    if traj.steps() < order {
        return Err(Error::Precondition(format!(
            "interpolation of order {order} needs at least {order} steps"
        )));
    }
    Ok(InterpolatedStages {
        traj,
        c: tab.c_exp(),
        order,
    })
}

impl InterpolatedStages<'_> {
    /// Value at grid coordinate `tau = t / h`.
    pub fn at(&self, tau: f64) -> DVector<f64> {
        let y = &self.traj.y;
        let last = y.len() - 1;
        let d = self.order;
        // stencil centred on tau, shifted inside the grid near the ends
        let start = (tau - d as f64 / 2.0 + 0.5).floor();
        let start = start.clamp(0.0, (last - d) as f64) as usize;
        let nodes: Vec<usize> = (start..=start + d).collect();
        if let Some(&hit) = nodes.iter().find(|&&m| m as f64 == tau) {
            return y[hit].clone();
        }
        let mut out = DVector::zeros(y[0].len());
        for &m in &nodes {
            let weight: f64 = nodes
                .iter()
                .filter(|&&q| q != m)
                .map(|&q| (tau - q as f64) / (m as f64 - q as f64))
                .product();
            out += &y[m] * weight;
        }
        out
    }
}

impl StageStates for InterpolatedStages<'_> {
    fn stage(&self, n: usize, i: usize) -> DVector<f64> {
        self.at(n as f64 + self.c[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tableau::builtin;

    fn cubic_traj(steps: usize) -> Trajectory {
        let h = 1.0 / steps as f64;
        let times: Vec<f64> = (0..=steps).map(|n| n as f64 * h).collect();
        Trajectory {
            h,
            y: times.iter().map(|t| DVector::from_element(1, t.powi(3))).collect(),
            times,
            stages_y: vec![],
            stages_k_exp: vec![],
            stages_k_imp: vec![],
        }
    }

    #[test]
    fn cubic_reproduced_by_order_three() {
        let tab = builtin("imex-gsa").unwrap();
        let traj = cubic_traj(10);
        let interp = interpolate_stage_states(&tab, &traj, 3).unwrap();
        let c = tab.c_exp();
        for n in 0..10 {
            for i in 0..tab.stages {
                let t = (n as f64 + c[i]) * traj.h;
                assert!((interp.stage(n, i)[0] - t.powi(3)).abs() <= 1e-13, "n={n} i={i}");
            }
        }
    }

    #[test]
    fn grid_points_returned_exactly() {
        let tab = builtin("imex-ssp2").unwrap();
        let traj = cubic_traj(6);
        let interp = interpolate_stage_states(&tab, &traj, 2).unwrap();
        for n in 0..6 {
            assert_eq!(interp.stage(n, 0), traj.y[n]);
        }
    }

    #[test]
    fn quadratic_reproduced_by_order_two() {
        let tab = builtin("imex-sa3").unwrap();
        let mut traj = cubic_traj(8);
        for (t, y) in traj.times.iter().zip(traj.y.iter_mut()) {
            y[0] = 1.0 - 2.0 * t + 3.0 * t * t;
        }
        let interp = interpolate_stage_states(&tab, &traj, 2).unwrap();
        for tau in [0.0, 0.3, 2.5, 7.9, 8.0] {
            let t = tau * traj.h;
            assert!((interp.at(tau)[0] - (1.0 - 2.0 * t + 3.0 * t * t)).abs() <= 1e-13);
        }
    }

    #[test]
    fn too_few_steps() {
        let tab = builtin("imex-ssp2").unwrap();
        let traj = cubic_traj(2);
        assert!(interpolate_stage_states(&tab, &traj, 3).is_err());
        assert!(StageSource::parse("poly4").is_err());
        assert_eq!(StageSource::parse("poly3").unwrap().name(), "poly3");
    }
}
