//! Monte Carlo survey of `E ||Phi_N||^2_{H^{-alpha}}` across window sizes.

use serde::Serialize;

use crate::basis::kernel_bound;
use crate::error::Result;
use crate::stats::engine::{run_replicas, FieldObservable, FieldSource, ReplicaConfig, StatKind};
use crate::stats::{weighted_slope, Rule, Trend, Verdict};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TightnessRow {
    pub n: usize,
    pub mean: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TightnessReport {
    pub alpha: f64,
    pub k_max: usize,
    pub rows: Vec<TightnessRow>,
    pub trend: Trend,
    /// `alpha <= d/2`: outside the range where the norm is controlled.
    pub below_critical: bool,
    pub kernel_bound: f64,
    pub kernel_bound_doubled: f64,
    pub verdicts: Vec<Verdict>,
}

#[allow(clippy::too_many_arguments)]
pub fn tightness_survey(
    source: FieldSource,
    observable: FieldObservable,
    n_list: &[usize],
    alpha: f64,
    k_max: usize,
    kernel_grid: usize,
    replicas: u64,
    seed: u64,
) -> Result<TightnessReport> {
    let d = source.dimension();
    let stat = StatKind::SobolevNorm { alpha, k_max };
    let run = run_replicas(&ReplicaConfig {
        source,
        gradient_axis: None,
        observable,
        test_functions: vec![],
        n_list: n_list.to_vec(),
        stats: vec![stat],
        replicas,
        seed,
        c_m: None,
    })?;
    let rows: Vec<TightnessRow> = n_list
        .iter()
        .enumerate()
        .map(|(i, &n)| TightnessRow { n, mean: run.accumulator.mean(i), se: run.accumulator.se_mean(i) })
        .collect();
    let x: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.mean).collect();
    let se: Vec<f64> = rows.iter().map(|r| r.se).collect();
    let trend = weighted_slope(&x, &y, &se)?;
    let kb = kernel_bound(d, alpha, kernel_grid, k_max);
    let kb2 = kernel_bound(d, alpha, kernel_grid, 2 * k_max);
    let below_critical = alpha <= d as f64 / 2.0;
    let verdicts = vec![
        Verdict::new("tightness_slope", trend.slope, 0.0, Rule::AtMost { max: 2.0 * trend.se }),
        Verdict::new("kernel_bound_doubling", kb.value, kb2.value, Rule::Relative { tol: 0.01 }),
        Verdict::flag("alpha_above_critical", !below_critical),
    ];
    Ok(TightnessReport {
        alpha,
        k_max,
        rows,
        trend,
        below_critical,
        kernel_bound: kb.value,
        kernel_bound_doubled: kb2.value,
        verdicts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::CovarianceModel;
    use crate::hermite::HermiteExpansion;

    #[test]
    fn delta_h2_is_bounded() {
        let e = HermiteExpansion::from_coefficients(1.0, 0.0, &[(2, 1.0)]).unwrap();
        let rep = tightness_survey(
            FieldSource::Torus { model: CovarianceModel::delta(1), m: 66 },
            FieldObservable::from_expansion(e),
            &[9, 17, 33],
            1.0,
            64,
            32,
            300,
            1,
        )
        .unwrap();
        assert!(rep.verdicts[0].pass, "{rep:?}");
        assert!(!rep.below_critical);
    }
}
