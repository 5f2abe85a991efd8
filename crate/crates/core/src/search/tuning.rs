//! One-parameter-at-a-time sweeps over the search parameters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{solve_fs_mfrp, SearchParams};
use crate::model::Instance;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneRow {
    pub param: String,
    pub value: String,
    /// Best feasible cost per run; None when a run found nothing feasible.
    pub costs: Vec<Option<f64>>,
    pub best: Option<f64>,
    pub mean: Option<f64>,
    pub mean_wall_s: f64,
}

/// Solves `inst` `runs` times for every value of `param`, seeds `seed + run`.
pub fn sweep(
    inst: &Instance,
    cap: f64,
    base: &SearchParams,
    param: &str,
    values: &[String],
    runs: usize,
) -> Result<Vec<TuneRow>, String> {
    let mut rows = Vec::with_capacity(values.len());
    for v in values {
        let mut p = base.clone();
        p.set(param, v)?;
        p.check()?;
        let mut costs = Vec::with_capacity(runs);
        let mut wall = 0.0;
        for run in 0..runs {
            let mut rng = ChaCha8Rng::seed_from_u64(p.seed.wrapping_add(run as u64));
            let out = solve_fs_mfrp(inst, cap, &p, &mut rng);
            wall += out.trace.wall_s;
            costs.push(out.best.as_ref().map(|s| s.cost()));
        }
        let ok: Vec<f64> = costs.iter().flatten().copied().collect();
        let best = ok.iter().copied().reduce(f64::min);
        let mean = (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64);
        rows.push(TuneRow { param: param.to_string(), value: v.clone(), costs, best, mean, mean_wall_s: wall / runs.max(1) as f64 });
    }
    Ok(rows)
}
