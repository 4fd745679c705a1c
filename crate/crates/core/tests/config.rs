use migrants::experiment::{presets, ExperimentConfig, InitialSpec, KernelFamily, Mode};
use migrants::kernels::Family;
use migrants::Error;

fn key_of(e: Error) -> String {
    match e {
        Error::Config { key, .. } => key,
        other => panic!("expected a config error, got {other}"),
    }
}

#[test]
fn overrides_take_precedence() {
    let cfg = ExperimentConfig::load(
        None,
        Some("full-long"),
        &["run.replicates=7".into(), "run.initial.kappa=0.25".into(), "mode=compare".into()],
    )
    .unwrap();
    let run = cfg.run.as_ref().unwrap();
    assert_eq!(run.replicates, 7);
    assert_eq!(run.initial, InitialSpec::Poisson { kappa: 0.25 });
    assert_eq!(cfg.mode, Some(Mode::Compare));
    assert_eq!(cfg.analysis.n_max, 6);
}

#[test]
fn file_layers_over_preset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    std::fs::write(&path, "[run]\nreplicates = 11\n[model.a_plus]\nfamily = \"tophat\"\nmass = 0.5\nscale = 1.0\n").unwrap();
    let cfg = ExperimentConfig::load(Some(&path), Some("full-long"), &["run.replicates=12".into()]).unwrap();
    assert_eq!(cfg.run.as_ref().unwrap().replicates, 12);
    let p = cfg.model().unwrap().params().unwrap();
    assert_eq!(p.a_plus().family(), Family::TopHat);
    assert!((p.attraction_mass() - 0.5).abs() < 1e-12);
    assert_eq!(cfg.model.as_ref().unwrap().a_plus.family, KernelFamily::Tophat);
}

#[test]
fn mass_sets_the_l1_norm() {
    for name in presets::NAMES {
        let cfg = ExperimentConfig::load(None, Some(name), &[]).unwrap();
        let spec = cfg.model.as_ref().unwrap();
        let p = spec.params().unwrap();
        for (ks, k) in [(&spec.a_plus, p.a_plus()), (&spec.a_minus, p.a_minus())] {
            if let Some(m) = ks.mass {
                assert!((k.l1_norm().unwrap() - m).abs() < 1e-12 * m.max(1.0), "{name}");
            }
        }
    }
}

#[test]
fn hash_tracks_content() {
    let a = ExperimentConfig::load(None, Some("contact"), &[]).unwrap();
    let b = ExperimentConfig::load(None, Some("contact"), &[]).unwrap();
    let c = ExperimentConfig::load(None, Some("contact"), &["run.master_seed=5".into()]).unwrap();
    assert_eq!(a.hash(), b.hash());
    assert_ne!(a.hash(), c.hash());
    assert_eq!(a.hash().len(), 64);
}

#[test]
fn resolved_config_round_trips() {
    let a = ExperimentConfig::load(None, Some("bolker-pacala"), &["kinetic.source=\"additive\"".into()]).unwrap();
    let text = toml::to_string(&a).unwrap();
    let b = ExperimentConfig::from_toml_str(&text).unwrap();
    assert_eq!(a, b);
}

#[test]
fn diagnostics_name_the_key() {
    let load = |sets: &[&str]| {
        let sets: Vec<String> = sets.iter().map(|s| s.to_string()).collect();
        ExperimentConfig::load(None, Some("contact"), &sets).unwrap_err()
    };
    assert_eq!(key_of(load(&["run.t_end=-1"])), "run.t_end");
    assert_eq!(key_of(load(&["run.event_cap=0"])), "run.event_cap");
    assert_eq!(key_of(load(&["analysis.n_max=9"])), "analysis.n_max");
    assert_eq!(key_of(load(&["analysis.r_max=6.0"])), "analysis.r_max");
    assert_eq!(key_of(load(&["kinetic.nodes=1"])), "kinetic.nodes");
    assert_eq!(key_of(load(&["model.a_plus.amplitude=1.0"])), "model.a_plus");
    assert_eq!(key_of(load(&["model.b_minus.family=\"gaussian\""])), "model.b_minus");
    assert_eq!(key_of(load(&["analysis.probes=[{ lo = [8.0, 8.0], hi = [11.0, 11.0] }]"])), "analysis.probes[0]");
    assert_eq!(key_of(load(&["run.initial.kind=\"lattice\""])), "run.initial.kind");
    assert_eq!(key_of(load(&["run=3"])), "run");
    assert_eq!(key_of(load(&["run.replicates.x=3"])), "run.replicates");
    assert_eq!(key_of(load(&["novalue"])), "novalue");
}

#[test]
fn string_fallback_for_bare_words() {
    let cfg = ExperimentConfig::load(None, Some("contact"), &["mode=verify".into(), "kinetic.source=additive".into()]).unwrap();
    assert_eq!(cfg.mode, Some(Mode::Verify));
}

#[test]
fn default_probe_is_centred() {
    let cfg = ExperimentConfig::load(None, Some("contact"), &["analysis.probes=[]".into()]).unwrap();
    let p = cfg.model().unwrap().params().unwrap();
    let probes = cfg.analysis.probe_boxes(p.window()).unwrap();
    assert_eq!(probes.len(), 1);
    assert_eq!(probes[0].lo[..2], [2.5, 2.5]);
    assert_eq!(probes[0].hi[..2], [7.5, 7.5]);
}
