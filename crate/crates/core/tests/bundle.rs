use std::fs;

use compo_core::backend::bundle::{BundleFiles, BUNDLE_FILES, GOLDEN, MERGES};
use compo_core::backend::{EmbeddingBackend, MockBackend, MockWorldConfig, TextQuery};
use compo_core::{Error, ErrorClass};

#[test]
fn bundle_without_merges_is_incomplete() {
    let dir = tempfile::tempdir().unwrap();
    for f in BUNDLE_FILES.iter().filter(|f| **f != MERGES) {
        fs::write(dir.path().join(f), b"").unwrap();
    }
    let err = BundleFiles::new(dir.path()).check_complete().unwrap_err();
    assert!(matches!(&err, Error::BundleIncomplete { missing, .. } if missing == &[MERGES.to_string()]));
    assert!(err.to_string().contains(MERGES));
    assert_ne!(err.class(), ErrorClass::Numerical);
}

#[test]
fn golden_fixtures_load_from_the_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let backend = MockBackend::new(MockWorldConfig::perfect(4)).unwrap();
    let text = "a photo";
    let emb = backend.embed_texts(&[TextQuery { text, components: Some(&[]) }]).unwrap();
    let fixtures = serde_json::json!({ "texts": [{ "text": text, "embedding": emb[0] }] });
    fs::write(dir.path().join(GOLDEN), fixtures.to_string()).unwrap();
    let golden = BundleFiles::new(dir.path()).golden_fixtures().unwrap();
    assert_eq!(golden.texts.len(), 1);
    assert_eq!(golden.texts[0].text, text);
    // Fixtures carry plain text, which only a real encoder can embed.
    let err = golden.parity(&backend, dir.path()).unwrap_err();
    assert!(matches!(err, Error::MockResolutionError(_)));
}
