//! Browser bindings for three demo operations: multi-memory versus
//! single-memory matching on a synthetic pair, mixture-based confidence for a
//! list of losses, and a short training run with its history.
//!
//! Each operation has a plain Rust form returning JSON text, which the
//! exported wrappers forward to JavaScript.

use serde_json::json;
use wasm_bindgen::prelude::*;

use mmm_core::pipeline::{build_structures, evaluate, run_training, Structures};
use mmm_core::reliability::{confidence, fit_gmm2, IdLossVector};
use mmm_core::synth::{generate, SynthSpec};
use mmm_core::{PipelineConfig, Scope};

/// Largest spec the page will generate, to keep the tab responsive.
pub const MAX_SAMPLES: usize = 4000;

fn spec_from(text: &str) -> Result<SynthSpec, String> {
    let spec = SynthSpec::from_text(text).map_err(|e| e.to_string())?;
    let total = spec.identities * spec.samples_per_identity_per_modality * 2;
    if total > MAX_SAMPLES {
        return Err(format!("{total} samples requested; the demo allows at most {MAX_SAMPLES}"));
    }
    Ok(spec)
}

fn config_from(text: &str) -> Result<PipelineConfig, String> {
    PipelineConfig::from_text(text).map_err(|e| e.to_string())
}

fn matching_json(s: &Structures, ari_all: Option<f64>) -> serde_json::Value {
    let pairs: Vec<serde_json::Value> = s
        .assignment
        .pairs()
        .into_iter()
        .map(|(v, r, c)| json!([v, r, c]))
        .collect();
    json!({
        "clusters": [
            s.labels.visible.cluster_count(),
            s.labels.infrared.cluster_count(),
            s.labels.joint.cluster_count(),
        ],
        "pairs": pairs,
        "total_cost": s.assignment.total_cost(),
        "ari_all": ari_all,
    })
}

/// Clusters one synthetic pair and matches it with `n_memories` and with a
/// single memory per cluster.
pub fn matching_demo(spec_text: &str, n_memories: usize) -> Result<String, String> {
    let spec = spec_from(spec_text)?;
    let (visible, infrared) = generate(&spec).map_err(|e| e.to_string())?;
    let mut out = serde_json::Map::new();
    for (key, n) in [("multi", n_memories), ("single", 1)] {
        let cfg = PipelineConfig {
            n_memories: n,
            seed: spec.seed,
            ..PipelineConfig::default()
        };
        cfg.validate().map_err(|e| e.to_string())?;
        let s = build_structures(&visible, &infrared, &cfg, 0).map_err(|e| e.to_string())?;
        let metrics = evaluate(&s, &visible, &infrared).map_err(|e| e.to_string())?;
        out.insert(key.into(), matching_json(&s, metrics.map(|m| m.ari.all)));
    }
    Ok(serde_json::Value::Object(out).to_string())
}

/// Fits the two-component mixture to losses separated by commas or
/// whitespace and returns each loss with its confidence.
pub fn confidence_demo(losses_text: &str) -> Result<String, String> {
    let losses: Vec<f64> = losses_text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| format!("not a number: `{t}`")))
        .collect::<Result<_, _>>()?;
    let v = IdLossVector {
        scope: Scope::Visible,
        included: vec![true; losses.len()],
        losses,
    };
    let fit = fit_gmm2(&v).map_err(|e| e.to_string())?;
    let weights = confidence(&v, &fit);
    Ok(json!({
        "means": fit.means,
        "variances": fit.variances,
        "mix": fit.mix,
        "iterations": fit.iterations,
        "log_likelihood": fit.log_likelihood,
        "losses": v.losses,
        "weights": weights.weights(),
    })
    .to_string())
}

/// Trains on a synthetic pair and returns the history CSV and final metrics.
pub fn training_demo(spec_text: &str, config_text: &str) -> Result<String, String> {
    let spec = spec_from(spec_text)?;
    let cfg = config_from(config_text)?;
    let (visible, infrared) = generate(&spec).map_err(|e| e.to_string())?;
    let run = run_training(&visible, &infrared, &cfg).map_err(|e| e.to_string())?;
    Ok(json!({
        "matching": cfg.matching_name(),
        "history_csv": run.history_csv(),
        "final_clusters": run.final_clusters(),
        "final_metrics": run.final_metrics,
    })
    .to_string())
}

#[wasm_bindgen(js_name = matchingDemo)]
pub fn matching_demo_js(spec_text: &str, n_memories: usize) -> Result<String, JsValue> {
    matching_demo(spec_text, n_memories).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = confidenceDemo)]
pub fn confidence_demo_js(losses_text: &str) -> Result<String, JsValue> {
    confidence_demo(losses_text).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = trainingDemo)]
pub fn training_demo_js(spec_text: &str, config_text: &str) -> Result<String, JsValue> {
    training_demo(spec_text, config_text).map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "identities=5\nsamples_per_identity_per_modality=8\nseed=1\n";

    #[test]
    fn matching_reports_both_setups() {
        let v: serde_json::Value = serde_json::from_str(&matching_demo(SMALL, 4).unwrap()).unwrap();
        for key in ["multi", "single"] {
            assert!(v[key]["pairs"].as_array().is_some(), "{v}");
            assert!(v[key]["ari_all"].as_f64().is_some());
        }
    }

    #[test]
    fn confidence_splits_two_groups() {
        let v: serde_json::Value =
            serde_json::from_str(&confidence_demo("0.1, 0.2 0.15,0.12\n3.0 3.1 2.9").unwrap()).unwrap();
        let w: Vec<f64> = v["weights"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        assert!(w[..4].iter().all(|&x| x > 0.5));
        assert!(w[4..].iter().all(|&x| x < 0.5));
    }

    #[test]
    fn bad_inputs_are_messages() {
        assert!(confidence_demo("1, x").unwrap_err().contains("`x`"));
        assert!(confidence_demo("1").is_err());
        assert!(matching_demo("identities=0", 4).is_err());
        assert!(matching_demo("identities=1000\nsamples_per_identity_per_modality=100", 4)
            .unwrap_err()
            .contains("at most"));
        assert!(training_demo(SMALL, "lambda=2").unwrap_err().contains("lambda_intra"));
    }

    #[test]
    fn training_returns_history() {
        let v: serde_json::Value = serde_json::from_str(&training_demo(SMALL, "epochs=2").unwrap()).unwrap();
        let csv = v["history_csv"].as_str().unwrap();
        assert!(csv.starts_with("epoch,l_v"));
        assert_eq!(csv.lines().count(), 3);
    }
}
