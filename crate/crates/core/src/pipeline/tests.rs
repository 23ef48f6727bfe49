use super::*;
use crate::datagen::{generate_dataset, generate_gallery};
use crate::encoders::IdClipModel;

fn quick(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.pretrain.max_epochs = 2;
    cfg.idclip.max_epochs = 3;
    cfg.idclip.prompt_warmup_epochs = 1;
    cfg.paths = PathsConfig {
        manifest: dir.join("data/manifest.jsonl"),
        run_dir: dir.join("run"),
    };
    cfg
}

fn quiet(_: &EpochRecord) {}

#[test]
fn config_json_round_trips_and_rejects_unknown_fields() {
    let cfg = RunConfig::default();
    assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    let err = RunConfig::from_json(r#"{"sed": 1}"#).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert_eq!(RunConfig::from_json(r#"{"idclip": {"epochs": 4}}"#).unwrap_err().exit_code(), 2);
    assert_eq!(RunConfig::from_json("[1]").unwrap_err().exit_code(), 2);
    let partial = RunConfig::from_json(r#"{"seed": 7, "idclip": {"max_epochs": 4}}"#).unwrap();
    assert_eq!(partial.seed, 7);
    assert_eq!(partial.idclip.max_epochs, 4);
    let rest = TrainConfig {
        max_epochs: 4,
        ..cfg.idclip.clone()
    };
    assert_eq!(partial.idclip, rest);
    assert_eq!(partial.pretrain, cfg.pretrain);
}

#[test]
fn hash_ignores_paths_but_not_seed() {
    let a = RunConfig::default();
    let mut b = a.clone();
    b.paths.run_dir = PathBuf::from("elsewhere");
    assert_eq!(a.hash(), b.hash());
    b.seed = 1;
    assert_ne!(a.hash(), b.hash());
}

#[test]
fn exit_codes_follow_the_error_class() {
    assert_eq!(PipelineError::Version { found: 2, expected: 1 }.exit_code(), 4);
    assert_eq!(PipelineError::Dependency("x".into()).exit_code(), 3);
    assert_eq!(PipelineError::Format("x".into()).exit_code(), 3);
    assert_eq!(PipelineError::Data(DataError::Constraint("x".into())).exit_code(), 2);
    assert_eq!(PipelineError::Data(DataError::Version { found: 9, expected: 1 }).exit_code(), 4);
    assert_eq!(PipelineError::Query(QueryError::GalleryMiss("x".into())).exit_code(), 3);
}

#[test]
fn infeasible_config_is_a_constraint_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick(dir.path());
    cfg.data.swaps_per_context = 1;
    let err = cmd_gen(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
    assert!(!cfg.paths.manifest.exists());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let model = IdClipModel::new(ModelConfig::default(), 3);
    let ids = model.identity_ids();
    let ckpt = Checkpoint::from_model(&model, &ids, "abc", Phase::Idclip, 2);
    let bytes = ckpt.encode();
    let back = Checkpoint::decode(&bytes).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(back.encode(), bytes);
    let rebuilt = back.to_model().unwrap();
    for ((_, na, a), (_, nb, b)) in model.store.iter().zip(rebuilt.store.iter()) {
        assert_eq!(na, nb);
        assert_eq!(a.shape(), b.shape());
        let bits = |t: &crate::tensor::Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b), "{na}");
    }
    let flagged: Vec<bool> = back.sections.iter().map(|s| s.trainable).collect();
    assert_eq!(flagged.iter().filter(|&&t| t).count(), ids.len());
}

#[test]
fn unknown_checkpoint_version_is_rejected() {
    let model = IdClipModel::new(ModelConfig::default(), 0);
    let mut bytes = Checkpoint::from_model(&model, &[], "", Phase::BackbonePretrain, 0).encode();
    bytes[8..12].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    let err = Checkpoint::decode(&bytes).unwrap_err();
    assert_eq!(err, PipelineError::Version { found: CHECKPOINT_VERSION + 1, expected: CHECKPOINT_VERSION });
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn dataset_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick(dir.path());
    let out = cmd_gen(&cfg).unwrap();
    assert!(out.report.is_clean());
    let (data, gallery) = load_dataset(&cfg.paths.manifest).unwrap();
    let d = &cfg.data;
    let (g, t) = generate_gallery(d.num_identities, d.d_face, d.face_jitter, d.seed).unwrap();
    assert_eq!(data, generate_dataset(d, &g, &t).unwrap());
    assert_eq!(gallery, g);
}

#[test]
fn tensor_file_must_match_its_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick(dir.path());
    cmd_gen(&cfg).unwrap();
    let bytes = std::fs::read(sidecar_path(&cfg.paths.manifest)).unwrap();
    cfg.data.seed = 1;
    let d = &cfg.data;
    let (g, t) = generate_gallery(d.num_identities, d.d_face, d.face_jitter, d.seed).unwrap();
    let other = generate_dataset(d, &g, &t).unwrap().manifest;
    assert!(matches!(decode_tensors(other, &bytes), Err(PipelineError::Format(_))));
}

#[test]
fn idclip_without_backbone_is_a_dependency_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick(dir.path());
    cmd_gen(&cfg).unwrap();
    let err = cmd_train(&cfg, TrainPhase::Idclip, None, &mut quiet).err().unwrap();
    assert!(matches!(err, PipelineError::Dependency(_)), "{err}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn zero_learning_rate_leaves_every_epoch_at_init() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick(dir.path());
    cmd_gen(&cfg).unwrap();
    cmd_train(&cfg, TrainPhase::Pretrain, None, &mut quiet).unwrap();
    cfg.idclip.learning_rate = 0.0;
    cmd_train(&cfg, TrainPhase::Idclip, None, &mut quiet).unwrap();
    let backbone = Checkpoint::load(&cfg.paths.run_dir.join(BACKBONE_FILE)).unwrap().to_model().unwrap();
    let init = identity_init(&cfg, &backbone).unwrap();
    let trainable = init.identity_ids();
    let want = Checkpoint::from_model(&init, &trainable, &cfg.hash(), Phase::Idclip, 0);
    for e in 1..=cfg.idclip.max_epochs {
        let got = Checkpoint::load(&cfg.paths.run_dir.join(epoch_file(e))).unwrap();
        assert_eq!(got.epoch, e);
        assert_eq!(got.sections, want.sections, "epoch {e}");
    }
}

#[test]
fn best_checkpoint_is_the_argmax_of_the_logged_val_rsum() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick(dir.path());
    cmd_gen(&cfg).unwrap();
    let mut seen = Vec::new();
    let out = cmd_train(&cfg, TrainPhase::All, None, &mut |r| seen.push(r.clone())).unwrap();
    let log = std::fs::read_to_string(cfg.paths.run_dir.join(IDCLIP_LOG)).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    let records: Vec<EpochRecord> = lines[..lines.len() - 1].iter().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), cfg.idclip.max_epochs);
    let mut best = 0;
    for (i, r) in records.iter().enumerate() {
        if r.val_rsum.unwrap() > records[best].val_rsum.unwrap() {
            best = i;
        }
    }
    let best_epoch = records[best].epoch;
    assert_eq!(out.best_epoch, Some(best_epoch));
    assert_eq!(lines.last().unwrap(), &format!("{{\"best_epoch\":{best_epoch}}}"));
    let a = Checkpoint::load(&cfg.paths.run_dir.join(BEST_FILE)).unwrap();
    let b = Checkpoint::load(&cfg.paths.run_dir.join(epoch_file(best_epoch))).unwrap();
    assert_eq!(a.sections, b.sections);
    assert_eq!(seen.len(), cfg.pretrain.max_epochs + cfg.idclip.max_epochs);
    let pre = std::fs::read_to_string(cfg.paths.run_dir.join(PRETRAIN_LOG)).unwrap();
    assert_eq!(pre.lines().count(), cfg.pretrain.max_epochs);
    assert!(pre.contains("val_context_r1"));
}

#[test]
fn search_clamps_k_and_reports_gallery_misses() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick(dir.path());
    cmd_gen(&cfg).unwrap();
    cmd_train(&cfg, TrainPhase::Pretrain, None, &mut quiet).unwrap();
    let req = SearchRequest {
        checkpoint: cfg.paths.run_dir.join(BACKBONE_FILE),
        query: "[ENTITY] is reading a book in a library".into(),
        name: "person_0001".into(),
        strategy: ExpansionStrategy::TokOnly,
        k: 1000,
    };
    let hits = cmd_search(&cfg, &req).unwrap();
    let (data, _) = load_dataset(&cfg.paths.manifest).unwrap();
    assert_eq!(hits.len(), data.manifest.images_in(cfg.eval.split).count());
    assert!(hits.windows(2).all(|w| w[0].similarity >= w[1].similarity));
    assert_eq!(hits, cmd_search(&cfg, &req).unwrap());
    let miss = SearchRequest { name: "nobody".into(), ..req.clone() };
    let err = cmd_search(&cfg, &miss).unwrap_err();
    assert!(matches!(err, PipelineError::Query(QueryError::GalleryMiss(_))));
    assert_eq!(err.exit_code(), 3);
    let plain = SearchRequest { query: "a library".into(), ..req };
    assert!(matches!(cmd_search(&cfg, &plain), Err(PipelineError::Config(_))));
}

#[test]
fn eval_writes_one_report_per_combination() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick(dir.path());
    cmd_gen(&cfg).unwrap();
    cmd_train(&cfg, TrainPhase::All, None, &mut quiet).unwrap();
    let req = EvalRequest {
        checkpoint: cfg.paths.run_dir.join(BEST_FILE),
        out_dir: dir.path().join("eval"),
    };
    let reports = cmd_eval(&cfg, &req).unwrap();
    // 2 strategies × 2 policies in context, plus one entity-only per strategy
    assert_eq!(reports.len(), 6);
    for r in &reports {
        let sum: f64 = r.recall.values().sum();
        assert!((r.rsum - sum).abs() < 1e-9);
        assert_eq!(r.config_hash, cfg.hash());
    }
    let csv = std::fs::read_to_string(req.out_dir.join("reports.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
}
