use std::collections::BTreeMap;

use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::datagen::{generate_dataset, generate_gallery, grammar, Dataset, DatasetConfig};
use crate::seed;
use crate::tensor::kernels;

fn data() -> (Dataset, FaceGallery) {
    let cfg = DatasetConfig {
        d_face: 16,
        patch_pixels: 8,
        seed: 21,
        ..DatasetConfig::default()
    };
    let (g, t) = generate_gallery(cfg.num_identities, cfg.d_face, cfg.face_jitter, cfg.seed).unwrap();
    (generate_dataset(&cfg, &g, &t).unwrap(), g)
}

fn unit(seed: u64) -> Vec<f64> {
    let mut rng = seed::rng(seed, "unit", &[]);
    let v: Vec<f64> = (0..16).map(|_| StandardNormal.sample(&mut rng)).collect();
    kernels::normalized(&v)
}

fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0, |h, b| seed::derive(h, "s", &[u64::from(b)]))
}

/// Independent random embedding per image and per query.
struct RandomModel;

impl RetrievalModel for RandomModel {
    fn embed_image(&self, patches: &Tensor) -> Result<Vec<f64>, EvalError> {
        Ok(unit(patches.data().iter().fold(1, |h, v| seed::derive(h, "img", &[v.to_bits()]))))
    }

    fn embed_query(&self, q: &CompoundQuery, _: &FaceGallery) -> Result<Vec<f64>, EvalError> {
        Ok(unit(hash_str(&format!("{}|{}|{}", q.caption.text(), q.name, q.strategy))))
    }

    fn embed_entity(&self, name: &str, s: ExpansionStrategy, _: &[String], _: &FaceGallery) -> Result<Vec<f64>, EvalError> {
        Ok(unit(hash_str(&format!("{name}|{s}"))))
    }
}

/// Answers every query with the embedding of its true image.
struct OracleModel {
    images: Vec<(Tensor, Vec<f64>)>,
    by_caption: BTreeMap<(String, String), Vec<f64>>,
    by_name: BTreeMap<String, Vec<f64>>,
}

impl OracleModel {
    /// Entity queries resolve to the identity's first image in `split`.
    fn new(ds: &Dataset, split: Split) -> Self {
        let m = &ds.manifest;
        let emb: Vec<Vec<f64>> = (0..ds.patches.len() as u64).map(|i| unit(i + 100)).collect();
        let images = ds.patches.iter().cloned().zip(emb.iter().cloned()).collect();
        let by_caption = m
            .captions
            .iter()
            .map(|c| ((c.text.clone(), c.entity.clone()), emb[c.image_id as usize].clone()))
            .collect();
        let mut by_name = BTreeMap::new();
        for img in m.images_in(split) {
            by_name
                .entry(m.name_of(img.identity_id).unwrap().to_string())
                .or_insert_with(|| emb[img.image_id as usize].clone());
        }
        Self {
            images,
            by_caption,
            by_name,
        }
    }
}

impl RetrievalModel for OracleModel {
    fn embed_image(&self, patches: &Tensor) -> Result<Vec<f64>, EvalError> {
        Ok(self.images.iter().find(|(p, _)| p == patches).unwrap().1.clone())
    }

    fn embed_query(&self, q: &CompoundQuery, g: &FaceGallery) -> Result<Vec<f64>, EvalError> {
        if q.strategy.uses_face() {
            g.lookup_face(&q.name)?;
        }
        Ok(self.by_caption[&(q.caption.text().to_string(), q.name.clone())].clone())
    }

    fn embed_entity(&self, name: &str, _: ExpansionStrategy, _: &[String], _: &FaceGallery) -> Result<Vec<f64>, EvalError> {
        Ok(self.by_name[name].clone())
    }
}

fn prompts() -> Vec<String> {
    grammar::DEFAULT_ENTITY_PROMPTS.iter().map(|s| s.to_string()).collect()
}

#[test]
fn oracle_model_gets_perfect_recall() {
    let (ds, g) = data();
    let model = OracleModel::new(&ds, Split::Test);
    let images = embed_split(&model, &ds.manifest, &ds.patches, Split::Test).unwrap();
    for policy in [TemplatePolicy::Single(1), TemplatePolicy::AllTemplatesAvg] {
        let r = evaluate_entity_in_context(&model, &ds.manifest, &images, &g, ExpansionStrategy::TokOnly, policy).unwrap();
        assert!(r.recall.values().all(|&v| v == 100.0), "{r:?}");
        assert_eq!(r.rsum, 400.0);
    }
}

#[test]
fn oracle_entity_only_with_one_image_per_identity() {
    let (mut ds, g) = data();
    // Keep the first test image of each identity only.
    let mut seen = BTreeSet::new();
    let keep: BTreeSet<u32> = ds
        .manifest
        .images_in(Split::Test)
        .filter(|i| seen.insert(i.identity_id))
        .map(|i| i.image_id)
        .collect();
    ds.manifest.images.retain(|i| i.split != Split::Test || keep.contains(&i.image_id));
    let model = OracleModel::new(&ds, Split::Test);
    let images = embed_split(&model, &ds.manifest, &ds.patches, Split::Test).unwrap();
    let r = evaluate_entity_only(&model, &ds.manifest, &images, &g, ExpansionStrategy::TokOnly, &prompts()).unwrap();
    assert_eq!(r.recall[&1], 100.0);
    assert_eq!(r.num_queries, keep.len());
}

fn within_3_sigma(observed_percent: f64, p: f64, n: usize) {
    let sigma = (p * (1.0 - p) / n as f64).sqrt();
    let obs = observed_percent / 100.0;
    assert!((obs - p).abs() <= 3.0 * sigma + 1e-12, "observed {obs}, expected {p} ± {}", 3.0 * sigma);
}

#[test]
fn random_model_is_at_chance_for_captions() {
    let (ds, g) = data();
    let images = embed_split(&RandomModel, &ds.manifest, &ds.patches, Split::Train).unwrap();
    let n = images.index.len();
    let r = evaluate_entity_in_context(&RandomModel, &ds.manifest, &images, &g, ExpansionStrategy::TokOnly, TemplatePolicy::AllTemplatesAvg).unwrap();
    for &k in &[1usize, 5, 10] {
        within_3_sigma(r.recall[&k], k as f64 / n as f64, r.num_queries);
    }
    assert_eq!(r.recall[&50], 100.0);
}

#[test]
fn random_model_is_at_chance_for_entities() {
    let (ds, g) = data();
    let images = embed_split(&RandomModel, &ds.manifest, &ds.patches, Split::Train).unwrap();
    let n = images.index.len() as f64;
    let r = evaluate_entity_only(&RandomModel, &ds.manifest, &images, &g, ExpansionStrategy::TokOnly, &prompts()).unwrap();
    // 48 train images over 16 identities: three each.
    within_3_sigma(r.recall[&1], 3.0 / n, r.num_queries);
}

#[test]
fn context_retrieval_counts_every_image_of_the_context() {
    let (ds, _) = data();
    let m = &ds.manifest;
    for split in Split::ALL {
        for ctx in &m.contexts {
            let brute: BTreeSet<u32> = m
                .images
                .iter()
                .filter(|i| i.split == split && i.context_id == ctx.context_id)
                .map(|i| i.image_id)
                .collect();
            assert_eq!(relevant_for_context(m, split, ctx.context_id), brute);
        }
    }
    let images = embed_split(&RandomModel, m, &ds.patches, Split::Train).unwrap();
    let r = evaluate_context_retrieval(&RandomModel, m, &images, TemplatePolicy::Single(2)).unwrap();
    assert_eq!(r.task, Task::ContextRetrieval);
    assert_eq!(r.num_queries, 48 * 3);
    // four images per context among 48
    within_3_sigma(r.recall[&1], 4.0 / 48.0, r.num_queries);
}

#[test]
fn all_templates_avg_is_mean_of_single_template_reports() {
    let (ds, g) = data();
    let images = embed_split(&RandomModel, &ds.manifest, &ds.patches, Split::Val).unwrap();
    let s = ExpansionStrategy::NameThenTok;
    let avg = evaluate_entity_in_context(&RandomModel, &ds.manifest, &images, &g, s, TemplatePolicy::AllTemplatesAvg).unwrap();
    let k = ds.manifest.templates.len() as u32;
    let singles: Vec<MetricsReport> = (1..=k)
        .map(|t| evaluate_entity_in_context(&RandomModel, &ds.manifest, &images, &g, s, TemplatePolicy::Single(t)).unwrap())
        .collect();
    for key in RECALL_KS {
        let mean = singles.iter().map(|r| r.recall[&key]).sum::<f64>() / f64::from(k);
        assert!((avg.recall[&key] - mean).abs() < 1e-9);
    }
    assert_eq!(avg.num_queries, singles.iter().map(|r| r.num_queries).sum::<usize>());
}

#[test]
fn relevant_sets_match_a_brute_force_scan() {
    let (ds, _) = data();
    for split in Split::ALL {
        for id in 0..16 {
            let mut brute = BTreeSet::new();
            for i in 0..ds.manifest.images.len() {
                let img = &ds.manifest.images[i];
                if img.split == split && img.identity_id == id {
                    brute.insert(img.image_id);
                }
            }
            assert_eq!(relevant_for_identity(&ds.manifest, split, id), brute);
        }
    }
}

#[test]
fn gallery_misses_are_recorded_not_fatal() {
    let (ds, full) = data();
    let mut g = FaceGallery::new();
    for (name, e) in full.iter().filter(|(n, _)| *n != "person_0001") {
        g.insert(name.to_string(), e.identity_id, e.face.clone()).unwrap();
    }
    let model = OracleModel::new(&ds, Split::Train);
    let images = embed_split(&model, &ds.manifest, &ds.patches, Split::Train).unwrap();
    let r = evaluate_entity_in_context(&model, &ds.manifest, &images, &g, ExpansionStrategy::TokOnly, TemplatePolicy::Single(1)).unwrap();
    assert!(!r.notes.is_empty());
    assert_eq!(r.num_queries + r.notes.len(), 48 * 3);
    let r = evaluate_entity_in_context(&model, &ds.manifest, &images, &g, ExpansionStrategy::NameOnly, TemplatePolicy::Single(1)).unwrap();
    assert!(r.notes.is_empty());
}

#[test]
fn reports_are_consistent_and_serializable() {
    let (ds, g) = data();
    let images = embed_split(&RandomModel, &ds.manifest, &ds.patches, Split::Test).unwrap();
    let r = evaluate_entity_in_context(&RandomModel, &ds.manifest, &images, &g, ExpansionStrategy::TokOnly, TemplatePolicy::Single(1))
        .unwrap()
        .with_provenance(5, "abc");
    let sum: f64 = r.recall.values().sum();
    assert!((r.rsum - sum).abs() < 1e-9);
    assert_eq!(r.recall.keys().copied().collect::<Vec<_>>(), RECALL_KS.to_vec());
    let json = serde_json::to_string(&r).unwrap();
    let back: MetricsReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, r);
    assert_eq!(r.csv_row().split(',').count(), MetricsReport::CSV_HEADER.split(',').count());
    assert!(r.csv_row().starts_with("entity_in_context,tok,single_t1,test,"));
}

#[test]
fn out_of_range_template_is_a_usage_error() {
    let (ds, g) = data();
    let images = embed_split(&RandomModel, &ds.manifest, &ds.patches, Split::Test).unwrap();
    for t in [0, 6] {
        assert!(matches!(
            evaluate_entity_in_context(&RandomModel, &ds.manifest, &images, &g, ExpansionStrategy::TokOnly, TemplatePolicy::Single(t)),
            Err(EvalError::Usage(_))
        ));
    }
}

#[test]
fn untrained_model_evaluates_deterministically() {
    let (ds, g) = data();
    let cfg = crate::encoders::ModelConfig {
        d_face: 16,
        patch_pixels: 8,
        ..Default::default()
    };
    let model = IdClipModel::new(cfg, 1);
    let images = embed_split(&model, &ds.manifest, &ds.patches, Split::Test).unwrap();
    let a = evaluate_entity_in_context(&model, &ds.manifest, &images, &g, ExpansionStrategy::TokOnly, TemplatePolicy::Single(1)).unwrap();
    let b = evaluate_entity_in_context(&model, &ds.manifest, &images, &g, ExpansionStrategy::TokOnly, TemplatePolicy::Single(1)).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(a.num_queries, 12 * 3);
}
