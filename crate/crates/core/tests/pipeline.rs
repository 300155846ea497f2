use mmm_core::io::{read_embeddings, write_embeddings};
use mmm_core::pipeline::{ablation_lattice, build_structures, evaluate, run_training, sweep_configs, ABLATION_NAMES};
use mmm_core::synth::{generate, SynthSpec};
use mmm_core::{EmbeddingSet, PipelineConfig};

fn small_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        identities: 8,
        samples_per_identity_per_modality: 10,
        seed,
        ..SynthSpec::default()
    }
}

#[test]
fn embeddings_survive_a_text_round_trip() {
    let (v, _) = generate(&small_spec(3)).unwrap();
    let text = write_embeddings(&v);
    let back = EmbeddingSet::from_raw(read_embeddings(&text).unwrap()).unwrap();
    assert_eq!(back.len(), v.len());
    assert_eq!(back.true_identity(), v.true_identity());
    let diff = (&back.features() - &v.features()).mapv(f64::abs);
    assert!(diff.iter().all(|&d| d < 1e-12));
}

#[test]
fn structures_cover_every_sample() {
    let (v, r) = generate(&small_spec(1)).unwrap();
    let s = build_structures(&v, &r, &PipelineConfig::default(), 0).unwrap();
    assert_eq!(s.shared.visible.len(), v.len());
    assert_eq!(s.shared.infrared.len(), r.len());
    assert_eq!(s.labels.joint.len(), v.len() + r.len());
    let m = evaluate(&s, &v, &r).unwrap().unwrap();
    assert!(m.ari.all > 0.5, "{m:?}");
}

#[test]
fn short_training_is_deterministic() {
    let (v, r) = generate(&small_spec(2)).unwrap();
    let cfg = PipelineConfig {
        epochs: 3,
        ..PipelineConfig::default()
    };
    let a = run_training(&v, &r, &cfg).unwrap();
    let b = run_training(&v, &r, &cfg).unwrap();
    assert_eq!(a.history_csv(), b.history_csv());
    assert_eq!(a.history.len(), 3);
    assert_eq!(a.final_metrics, b.final_metrics);
}

#[test]
fn ablation_and_sweep_build_valid_configs() {
    let base = PipelineConfig::default();
    let lattice = ablation_lattice(&base);
    assert_eq!(lattice.iter().map(|(n, _)| *n).collect::<Vec<_>>(), ABLATION_NAMES);
    assert!(lattice.iter().all(|(_, c)| c.validate().is_ok()));
    let values: Vec<String> = (1..=5).map(|n| n.to_string()).collect();
    let sweep = sweep_configs(&base, "n_memories", &values).unwrap();
    assert_eq!(sweep.iter().map(|(_, c)| c.n_memories).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
    assert!(sweep_configs(&base, "n_memories", &["0".into()]).is_err());
}
