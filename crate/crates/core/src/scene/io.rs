//! File formats: feature JSON, one-caption-per-line text and the vocabulary list.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{RegionFeatureSet, SceneError, TokenSequence, Vocabulary};

#[derive(Serialize, Deserialize)]
struct FeatureFile {
    dim: usize,
    v: Vec<Vec<f64>>,
    v_prime: Vec<Vec<f64>>,
}

fn io_err(path: &Path, e: std::io::Error) -> SceneError {
    SceneError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn save_features(path: &Path, feats: &RegionFeatureSet) -> Result<(), SceneError> {
    let file = FeatureFile {
        dim: feats.dim(),
        v: feats.attribute_rows(),
        v_prime: feats.interaction_rows(),
    };
    let mut text = serde_json::to_string(&file).map_err(|e| SceneError::Format(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn parse_features(text: &str) -> Result<RegionFeatureSet, SceneError> {
    let file: FeatureFile = serde_json::from_str(text).map_err(|e| SceneError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    for (name, rows) in [("v", &file.v), ("v_prime", &file.v_prime)] {
        if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != file.dim) {
            return Err(SceneError::Format(format!(
                "{name} row {i} has {} entries but header dim is {}",
                row.len(),
                file.dim
            )));
        }
    }
    RegionFeatureSet::new(file.v, file.v_prime)
}

pub fn load_features(path: &Path) -> Result<RegionFeatureSet, SceneError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_features(&text)
}

/// Content tokens one per line; line `n` (0-based) is id `n + 4`.
pub fn write_vocabulary(path: &Path, vocab: &Vocabulary) -> Result<(), SceneError> {
    let mut text = String::new();
    for t in vocab.content_tokens() {
        text.push_str(t);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_vocabulary(path: &Path) -> Result<Vocabulary, SceneError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let tokens: Vec<&str> = text.lines().collect();
    Vocabulary::new(&tokens)
}

pub fn write_captions(
    path: &Path,
    vocab: &Vocabulary,
    captions: &[TokenSequence],
) -> Result<(), SceneError> {
    let mut text = String::new();
    for c in captions {
        text.push_str(&vocab.decode(c));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_captions(path: &Path, vocab: &Vocabulary) -> Result<Vec<TokenSequence>, SceneError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| vocab.encode(l))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, scene_to_features, SceneConfig};

    fn sample_features() -> RegionFeatureSet {
        let s = generate_scene(
            3,
            &SceneConfig {
                min_objects: 3,
                ..SceneConfig::default()
            },
        )
        .unwrap();
        scene_to_features(&s, 16, 0.2, 11).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.json");
        let f = sample_features();
        save_features(&path, &f).unwrap();
        let g = load_features(&path).unwrap();
        let bits =
            |t: &crate::tensor::Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(f.attributes()), bits(g.attributes()));
        assert_eq!(
            bits(f.interactions().unwrap()),
            bits(g.interactions().unwrap())
        );
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let f = sample_features();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.json");
        save_features(&path, &f).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let cut = &text[..text.len() / 2];
        assert!(matches!(
            parse_features(cut),
            Err(SceneError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn short_row_is_named() {
        let row16 = vec![0.5; 16];
        let row15 = vec![0.5; 15];
        let text = serde_json::json!({"dim": 16, "v": [row16, row15], "v_prime": []}).to_string();
        match parse_features(&text) {
            Err(SceneError::Format(m)) => assert!(m.contains("v row 1"), "{m}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_interactions_allowed() {
        let text = r#"{"dim": 2, "v": [[1.0, 2.0]], "v_prime": []}"#;
        let f = parse_features(text).unwrap();
        assert_eq!((f.k1(), f.k2()), (1, 0));
    }

    #[test]
    fn vocab_and_caption_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SceneConfig::default();
        let vocab = cfg.vocabulary().unwrap();
        let vp = dir.path().join("vocab.txt");
        write_vocabulary(&vp, &vocab).unwrap();
        let text = fs::read_to_string(&vp).unwrap();
        assert_eq!(text.lines().next(), Some("a"));
        assert_eq!(read_vocabulary(&vp).unwrap(), vocab);

        let caps = vec![
            vocab.encode("a red square").unwrap(),
            vocab.encode("a blue star above a red circle").unwrap(),
        ];
        let cp = dir.path().join("c.txt");
        write_captions(&cp, &vocab, &caps).unwrap();
        assert_eq!(
            fs::read_to_string(&cp).unwrap(),
            "a red square\na blue star above a red circle\n"
        );
        assert_eq!(read_captions(&cp, &vocab).unwrap(), caps);
    }
}
