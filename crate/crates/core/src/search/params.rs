use serde::{Deserialize, Serialize};

use crate::charging::ChargingParams;
use crate::model::Time;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchParams {
    /// Penalty per unserved request.
    pub rho1: f64,
    /// Penalty per used vehicle.
    pub rho2: f64,
    /// Penalty per kg of CO₂ above the target.
    pub rho3: f64,
    /// Penalty per kWh of missing energy.
    pub rho4: f64,
    /// Remove-route runs every `n_remove` iterations.
    pub n_remove: usize,
    /// Restarts without improvement before stopping.
    pub n_stagnant: usize,
    pub iter_max: usize,
    /// Restart once the non-improving streak exceeds `n_imp` × vehicles.
    pub n_imp: usize,
    /// The threshold drops by T_max / t_red per non-improving iteration.
    pub t_red: f64,
    /// T_max = t_max × initial cost / request count.
    pub t_max: f64,
    pub delta_min: f64,
    pub delta_max: f64,
    /// Probability of running the charging repair on a candidate.
    pub alpha_repair: f64,
    pub regret_k_min: usize,
    pub regret_k_max: usize,
    pub init_samples: usize,
    pub seed: u64,
    /// Most requests a single removal may take out.
    pub remove_cap: usize,
    /// Wall-clock budget in seconds; unset means iteration-bounded only.
    pub time_limit_s: Option<f64>,
    /// Electric vehicles sampled when reinserting during charging repair.
    pub repair_k: usize,
    pub shaw_distance: f64,
    pub shaw_time: f64,
    pub shaw_load: f64,
    pub max_charge_wait: Time,
    pub max_charges: usize,
    pub tabu_size: usize,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            rho1: 100.0,
            rho2: 200.0,
            rho3: 20.0,
            rho4: 0.3,
            n_remove: 250,
            n_stagnant: 150,
            iter_max: 100_000,
            n_imp: 300,
            t_red: 400.0,
            t_max: 0.9,
            delta_min: 0.2,
            delta_max: 0.5,
            alpha_repair: 1.0,
            regret_k_min: 2,
            regret_k_max: 3,
            init_samples: 500,
            seed: 0,
            remove_cap: 60,
            time_limit_s: None,
            repair_k: 3,
            shaw_distance: 9.0,
            shaw_time: 3.0,
            shaw_load: 2.0,
            max_charge_wait: 30 * 60,
            max_charges: 6,
            tabu_size: 10_000,
        }
    }
}

impl SearchParams {
    pub fn charging(&self) -> ChargingParams {
        ChargingParams { max_wait: self.max_charge_wait, max_charges: self.max_charges }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn check(&self) -> Result<(), String> {
        let positive = [self.rho1, self.rho2, self.rho3, self.rho4, self.t_red, self.t_max];
        if positive.iter().any(|&v| !(v > 0.0)) {
            return Err("penalties and threshold parameters must be positive".into());
        }
        if self.n_remove == 0 || self.n_stagnant == 0 || self.n_imp == 0 || self.init_samples == 0 {
            return Err("iteration counts must be positive".into());
        }
        if !(0.0 < self.delta_min && self.delta_min <= self.delta_max && self.delta_max <= 1.0) {
            return Err("destruction range must satisfy 0 < delta_min <= delta_max <= 1".into());
        }
        if self.regret_k_min < 2 || self.regret_k_min > self.regret_k_max {
            return Err("regret range must satisfy 2 <= regret_k_min <= regret_k_max".into());
        }
        if !(0.0..=1.0).contains(&self.alpha_repair) {
            return Err("alpha_repair must lie in [0, 1]".into());
        }
        Ok(())
    }

    /// Sets one field from its textual value, e.g. `("rho1", "80")`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let mut map = match serde_json::to_value(&*self) {
            Ok(serde_json::Value::Object(m)) => m,
            _ => unreachable!("params serialize to an object"),
        };
        if !map.contains_key(key) {
            return Err(format!("unknown parameter `{key}`"));
        }
        let v = serde_json::from_str(value.trim()).unwrap_or_else(|_| serde_json::Value::String(value.trim().to_string()));
        map.insert(key.to_string(), v);
        *self = serde_json::from_value(serde_json::Value::Object(map)).map_err(|e| format!("parameter `{key}`: {e}"))?;
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut p = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected key = value", n + 1))?;
            p.set(k.trim(), v).map_err(|e| format!("line {}: {e}", n + 1))?;
        }
        p.check()?;
        Ok(p)
    }

    pub fn to_text(&self) -> String {
        let map = match serde_json::to_value(self) {
            Ok(serde_json::Value::Object(m)) => m,
            _ => unreachable!(),
        };
        map.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut p = SearchParams::default();
        p.set("rho1", "80").unwrap();
        p.set("time_limit_s", "12.5").unwrap();
        let back = SearchParams::parse(&p.to_text()).unwrap();
        assert_eq!(back, p);
        assert!(p.set("nope", "1").is_err());
        assert!(SearchParams::parse("rho1 = -1").is_err());
    }
}
