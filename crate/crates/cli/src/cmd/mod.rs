pub mod adapt;
pub mod env_sim;
pub mod eval;
pub mod fit_demonstrator;
pub mod gen_data;
pub mod hinf_compare;
pub mod report;
pub mod train;

use serde::{Deserialize, Serialize};

use dtcontrol::classical::SearchConfig;

/// Partial override of the derivative-free search settings; unset fields
/// keep their defaults. The search seed is always derived from the
/// command's `--seed`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchPatch {
    pub population: Option<usize>,
    pub iterations: Option<usize>,
    pub episodes_per_eval: Option<usize>,
    pub sigma0: Option<f64>,
    pub sigma_decay: Option<f64>,
    pub elite_frac: Option<f64>,
    pub plateau_patience: Option<usize>,
}

impl SearchPatch {
    pub fn apply(&self, seed: u64) -> SearchConfig {
        let mut s = SearchConfig {
            seed,
            ..SearchConfig::default()
        };
        crate::run::overlay(&mut s.population, self.population);
        crate::run::overlay(&mut s.iterations, self.iterations);
        crate::run::overlay(&mut s.episodes_per_eval, self.episodes_per_eval);
        crate::run::overlay(&mut s.sigma0, self.sigma0);
        crate::run::overlay(&mut s.sigma_decay, self.sigma_decay);
        crate::run::overlay(&mut s.elite_frac, self.elite_frac);
        crate::run::overlay(&mut s.plateau_patience, self.plateau_patience);
        s
    }
}
