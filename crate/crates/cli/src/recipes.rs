//! Ready-made experiment configs, one per reproduced figure.

use serde_json::{json, Value};

use crate::config::ExperimentConfig;

/// Recipe names with a one-line description.
pub const RECIPES: &[(&str, &str)] = &[
    ("fig2", "logical probability vs Γ, L=10, K=1.1, rejection mode, two temperatures, mean-field fit"),
    ("fig3-top", "order-parameter histograms, L=16, Δβ=1.645, Γ=3.05, K ∈ {1,2,4}"),
    ("fig3-bottom", "order-parameter histograms, L=16, K=1, Δβ=1.645, decreasing Γ"),
    ("bias-curves", "⟨H_Δ⟩ and ⟨|M_AFM|⟩ vs Γ, L=16, Δβ=1.645, K ∈ {1,2}"),
    ("fig4", "Binder cumulant vs Γ, uniform embedding K ∈ {1,2}, two temperatures"),
    ("fig5", "data collapse of the fig4 Binder curves"),
    ("fig8", "realization-averaged Binder curves, random embedding K ∈ {1,2}, Δβ=1.064, with collapse"),
    ("fig9", "critical Γ vs K, random embedding, Δβ=1.064, collapse per K and linear fit"),
    ("fig10", "Binder distribution over 150 realizations, K=2, Δβ=1.064, Γ=2.92"),
    ("fig11", "binning convergence of the histogram peak, L=16, Δβ=1.645, Γ=3.05, K ∈ {1,2}"),
    ("fig12", "L=2 comparison of all three modes with the dense oracle, Δβ=1, ℓ=75, 2^14 sweeps"),
    ("fig13", "L=2, K=2 rejection-mode P_L against the dense oracle, Δβ=1, ℓ=75, 2^14 sweeps"),
    ("ell-convergence", "order parameter vs ℓ, Δβ=1.645, Γ=2.95, K ∈ {1,2}; use with ell-scan"),
];

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn binder_uniform() -> Value {
    json!({
        "name": "binder-uniform",
        "problem": {"L": [8, 12, 16, 20]},
        "embedding": {"scheme": "uniform", "K": [1, 2], "realizations": 20},
        "model": {"gamma_list": linspace(2.5, 3.7, 25), "beta": [1.064, 1.645]},
        "qmc": {"mode": "lc", "sweeps": 1 << 17},
        "analysis": {"collapse": {}}
    })
}

fn small_lattice(name: &str, k: Value, modes: Value) -> Value {
    json!({
        "name": name,
        "problem": {"L": 2},
        "embedding": {"scheme": "random", "K": k, "J_F": -2.0},
        "model": {"gamma_list": linspace(0.2, 6.0, 10), "beta": 1.0},
        "qmc": {"mode": modes, "sweeps": 1 << 14, "ell": 75},
        "analysis": {"oracle": true}
    })
}

fn recipe_value(name: &str) -> Option<Value> {
    Some(match name {
        "fig2" => json!({
            "name": "fig2",
            "problem": {"L": 10},
            "embedding": {"scheme": "random", "K": 1.1},
            "model": {"gamma_list": linspace(0.5, 5.0, 10), "beta": [1.064, 1.645]},
            "qmc": {"mode": "rejection", "sweeps": 1 << 17},
            "analysis": {"mean_field_fit": true}
        }),
        "fig3-top" => json!({
            "name": "fig3-top",
            "problem": {"L": 16},
            "embedding": {"scheme": "random", "K": [1, 2, 4]},
            "model": {"gamma_list": [3.05], "beta": 1.645},
            "qmc": {"mode": "lc", "sweeps": 1 << 18, "ell": 250},
            "analysis": {"histogram": {"bins": 41, "lo": -1.0, "hi": 1.0}}
        }),
        "fig3-bottom" => json!({
            "name": "fig3-bottom",
            "problem": {"L": 16},
            "embedding": {"K": 1},
            "model": {"gamma_list": [3.05, 2.9, 2.75, 2.6], "beta": 1.645},
            "qmc": {"mode": "lc", "sweeps": 1 << 18},
            "analysis": {"histogram": {"bins": 41, "lo": -1.0, "hi": 1.0}}
        }),
        "bias-curves" => json!({
            "name": "bias-curves",
            "problem": {"L": 16},
            "embedding": {"scheme": "random", "K": [1, 2]},
            "model": {"gamma_list": linspace(2.0, 4.0, 11), "beta": 1.645},
            "qmc": {"mode": "lc", "sweeps": 1 << 17}
        }),
        "fig4" => binder_uniform(),
        "fig5" => {
            let mut v = binder_uniform();
            v["analysis"]["collapse"] = json!({"refine": true});
            v
        }
        "fig8" => json!({
            "name": "fig8",
            "problem": {"L": [8, 12, 16, 20]},
            "embedding": {"scheme": "random", "K": [1, 2], "realizations": 30},
            "model": {"gamma_list": linspace(2.5, 3.5, 21), "beta": 1.064},
            "qmc": {"mode": "lc", "sweeps": 1 << 17},
            "analysis": {"collapse": {}}
        }),
        "fig9" => json!({
            "name": "fig9",
            "problem": {"L": [8, 12, 16, 20]},
            "embedding": {"scheme": "random", "K": [1, 1.25, 1.5, 1.75, 2, 2.5, 3], "realizations": 30},
            "model": {"gamma_list": linspace(2.5, 3.7, 25), "beta": 1.064},
            "qmc": {"mode": "lc", "sweeps": 1 << 17, "ell": 250},
            "analysis": {"collapse": {}}
        }),
        "fig10" => json!({
            "name": "fig10",
            "problem": {"L": [8, 12, 16, 20]},
            "embedding": {"scheme": "random", "K": 2, "realizations": 150},
            "model": {"gamma_list": [2.92], "beta": 1.064},
            "qmc": {"mode": "lc", "sweeps": 1 << 17},
            "analysis": {"binder_distribution": true}
        }),
        "fig11" => json!({
            "name": "fig11",
            "problem": {"L": 16},
            "embedding": {"scheme": "random", "K": [1, 2]},
            "model": {"gamma_list": [3.05], "beta": 1.645},
            "qmc": {"mode": "lc", "sweeps": 1 << 20, "ell": 150},
            "analysis": {"histogram": {"bins": 41, "lo": -1.0, "hi": 1.0}}
        }),
        "fig12" => small_lattice("fig12", json!([1, 2]), json!(["standard", "rejection", "lc"])),
        "fig13" => small_lattice("fig13", json!(2), json!("rejection")),
        "ell-convergence" => json!({
            "name": "ell-convergence",
            "problem": {"L": 16},
            "embedding": {"scheme": "random", "K": [1, 2]},
            "model": {"gamma_list": [2.95], "beta": 1.645},
            "qmc": {"mode": "lc", "sweeps": 1 << 19},
            "analysis": {"ell_list": [50, 100, 150, 200, 250, 300]}
        }),
        _ => return None,
    })
}

/// The raw JSON document of a recipe, ready for `--set` overrides.
pub fn recipe_document(name: &str) -> Option<Value> {
    recipe_value(name)
}

pub fn recipe(name: &str) -> Option<ExperimentConfig> {
    recipe_value(name).map(|v| ExperimentConfig::from_value(v).expect("recipes are valid configs"))
}

/// Newline-separated `name  description` listing.
pub fn listing() -> String {
    RECIPES.iter().map(|(n, d)| format!("{n:<16} {d}")).collect::<Vec<_>>().join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use embedqmc::qmc::Mode;

    #[test]
    fn every_recipe_parses_and_validates() {
        for (name, _) in RECIPES {
            let c = recipe(name).unwrap_or_else(|| panic!("{name} missing"));
            c.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
            crate::runner::plan(&c).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        assert!(recipe("fig99").is_none());
    }

    #[test]
    fn fig12_matches_the_small_lattice_setting() {
        let c = recipe("fig12").unwrap();
        assert_eq!(c.problem.side_lengths, vec![2]);
        assert_eq!(c.embedding.k, vec![1.0, 2.0]);
        assert_eq!(c.embedding.j_f, -2.0);
        assert_eq!(c.model.beta, vec![1.0]);
        assert_eq!(c.qmc.ell, Some(75));
        assert_eq!(c.qmc.sweeps, 1 << 14);
        assert_eq!(c.qmc.mode, vec![Mode::Standard, Mode::Rejection, Mode::Lc]);
        assert_eq!(c.model.gamma_list.len(), 10);
        assert_eq!(c.model.gamma_list[0], 0.2);
        assert_eq!(c.model.gamma_list[9], 6.0);
        assert!(c.analysis.oracle);
        let grid: Vec<f64> = (0..10).map(|i| 0.2 + 5.8 * i as f64 / 9.0).collect();
        let text = serde_json::to_string(&c).unwrap();
        let back = ExperimentConfig::from_value(serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back.model.gamma_list, grid, "Γ grid must survive a JSON round trip bit-exactly");
    }

    #[test]
    fn fig3_top_and_fig9_parameters() {
        let c = recipe("fig3-top").unwrap();
        assert_eq!(c.problem.side_lengths, vec![16]);
        assert_eq!(c.model.beta, vec![1.645]);
        assert_eq!(c.model.gamma_list, vec![3.05]);
        assert_eq!(c.embedding.k, vec![1.0, 2.0, 4.0]);
        assert!(c.qmc.sweeps >= 1 << 18);
        let c = recipe("fig9").unwrap();
        assert_eq!(c.model.beta, vec![1.064]);
        assert!(c.embedding.k.len() >= 3);
        assert!(c.analysis.collapse.is_some());
    }

    #[test]
    fn fig4_and_fig5_share_runs() {
        let a = recipe("fig4").unwrap();
        let b = recipe("fig5").unwrap();
        assert_eq!(a.experiment_id(), b.experiment_id());
    }

    #[test]
    fn listing_names_every_recipe() {
        let l = listing();
        assert!(RECIPES.iter().all(|(n, _)| l.contains(n)));
    }
}
