//! Metric micro-corpora with frozen reference scores.

#![allow(dead_code)]

use aitpr_core::metrics::tokenize;

pub type Corpus = (Vec<Vec<String>>, Vec<Vec<Vec<String>>>);

pub fn corpus(items: &[(&str, &[&str])]) -> Corpus {
    (
        items.iter().map(|(c, _)| tokenize(c)).collect(),
        items
            .iter()
            .map(|(_, rs)| rs.iter().map(|r| tokenize(r)).collect())
            .collect(),
    )
}

pub fn shapes() -> Corpus {
    corpus(&[
        (
            "a red square left-of a blue circle",
            &[
                "a red square left-of a blue circle",
                "a blue circle right-of a red square",
            ],
        ),
        (
            "a green star above a green star",
            &[
                "a green star above a yellow triangle",
                "a yellow triangle below a green star",
            ],
        ),
        ("a yellow circle", &["a yellow circle"]),
    ])
}

pub fn cat() -> Corpus {
    corpus(&[
        ("the cat sat", &["the cat sat down"]),
        (
            "a dog ran in the park",
            &["the dog ran in a park", "a dog was running in the park"],
        ),
        ("blue sky", &["green grass grows"]),
    ])
}

pub fn repeats() -> Corpus {
    corpus(&[
        (
            "the the the the",
            &["the cat is on the mat", "there is a cat on the mat"],
        ),
        (
            "a cat on the mat",
            &["the cat is on the mat", "a cat is on a mat"],
        ),
        ("on the mat a cat is", &["a cat sits on the mat"]),
        ("cat cat on mat mat", &["a cat on a mat"]),
    ])
}

pub struct Expected {
    pub bleu: [f64; 4],
    pub rouge_per: &'static [f64],
    pub cider: f64,
    pub cider_per: &'static [f64],
}

// Reference values from separate implementations: sacrebleu (no tokenizer,
// no smoothing) for BLEU, the COCO caption toolkit scorers for ROUGE-L and
// CIDEr-D.
pub const SHAPES: Expected = Expected {
    bleu: [
        0.8823529411764705,
        0.8696565534786725,
        0.8521481865384635,
        0.8253756626060355,
    ],
    rouge_per: &[1.0, 0.7142857142857143, 1.0],
    cider: 6.107383715184604,
    cider_per: &[7.28112451422785, 3.5410266313259644, 7.5],
};
pub const CAT: Expected = Expected {
    bleu: [
        0.6821614784251477,
        0.7054501100935601,
        0.6290817353765321,
        0.0,
    ],
    rouge_per: &[0.8356164383561644, 0.7587064676616916, 0.0],
    cider: 3.2376400560659526,
    cider_per: &[5.791298879958111, 3.9216212882397476, 0.0],
};
pub const REPEATS: Expected = Expected {
    bleu: [
        0.6455309823187931,
        0.4930324316525118,
        0.32670204365221844,
        0.0,
    ],
    rouge_per: &[0.3860759493670886, 0.7155425219941348, 0.5, 0.6],
    cider: 0.5568520285265661,
    cider_per: &[
        0.42794541922401386,
        1.0400697227309739,
        0.35907258763855915,
        0.40032038451271784,
    ],
};
