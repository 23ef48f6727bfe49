//! Expansion of a 50-caption corpus under every strategy, checked against a
//! plain string-replacement oracle and a checked-in golden file.
//!
//! Set `IDCLIP_BLESS=1` to rewrite the golden file.

use std::collections::BTreeSet;
use std::path::PathBuf;

use idclip_core::datagen::{generate_dataset, generate_gallery, DatasetConfig};
use idclip_core::query::{detokenize, expand_entity, AnonymizedCaption, ExpansionStrategy};

fn corpus() -> Vec<(String, String)> {
    let cfg = DatasetConfig::default();
    let (g, t) = generate_gallery(cfg.num_identities, cfg.d_face, cfg.face_jitter, cfg.seed).unwrap();
    let ds = generate_dataset(&cfg, &g, &t).unwrap();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, c) in ds.manifest.captions.iter().enumerate().step_by(7) {
        if !seen.insert(c.text.clone()) {
            continue;
        }
        let name = if i % 3 == 0 { "Gianni Morandi".to_string() } else { c.entity.clone() };
        out.push((c.text.clone(), name));
        if out.len() == 50 {
            break;
        }
    }
    assert_eq!(out.len(), 50);
    out
}

fn oracle(text: &str, strategy: ExpansionStrategy, name: &str) -> String {
    match strategy {
        ExpansionStrategy::TokOnly => text.replace("[ENTITY]", "[TOK]"),
        ExpansionStrategy::NameOnly => text.replace("[ENTITY]", name),
        ExpansionStrategy::TokThenName => text.replace("[ENTITY]", &format!("[TOK] {name}")),
        ExpansionStrategy::NameThenTok => text.replace("[ENTITY]", &format!("{name} [TOK]")),
        ExpansionStrategy::PrefixTokNameInline => {
            let body = text.replace("[ENTITY]", name);
            let stop = if body.ends_with(['.', '!', '?', ',', ';', ':']) { "" } else { "." };
            format!("[TOK]. {body}{stop}")
        }
    }
}

#[test]
fn expansion_matches_oracle_and_golden_file() {
    let mut rendered = String::new();
    for (text, name) in corpus() {
        let caption = AnonymizedCaption::new(text.clone(), 0).unwrap();
        for s in ExpansionStrategy::ALL {
            let got = detokenize(&expand_entity(&caption, s, &name));
            assert_eq!(got, oracle(&text, s, &name), "{s} on {text:?}");
            rendered.push_str(&format!("{s}\t{got}\n"));
        }
    }
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/expand_golden.tsv");
    if std::env::var_os("IDCLIP_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &rendered).unwrap();
    }
    let golden = std::fs::read_to_string(&path).expect("golden file missing; run with IDCLIP_BLESS=1");
    assert_eq!(rendered.lines().count(), 250);
    assert_eq!(rendered, golden);
}
