use std::collections::BTreeSet;

use chrono::{TimeZone, Utc};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uxfeedback::corpus::{Comment, LabelSource, Sentiment};
use uxfeedback::summarize::{
    eligible, repair, validate, Attribute, CategorySummary, Citation, DraftSource, SummaryConfig,
    SummaryDraft,
};

const LABELS: [&str; 5] = ["Usability", "Functionality", "Error", "Help", "Performance"];
const WORDS: [&str; 12] = [
    "menu",
    "slow",
    "crash",
    "export",
    "great",
    "confusing",
    "docs",
    "license",
    "button",
    "fast",
    "helpful",
    "freeze",
];

fn comment(id: usize, rng: &mut ChaCha8Rng) -> Comment {
    let len = rng.gen_range(3..12);
    let text: Vec<&str> = (0..len)
        .map(|_| WORDS[rng.gen_range(0..WORDS.len())])
        .collect();
    let labels: BTreeSet<String> = LABELS
        .iter()
        .filter(|_| rng.gen_bool(0.35))
        .map(|s| s.to_string())
        .collect();
    Comment {
        id: format!("c{id:03}"),
        product_id: "P".into(),
        timestamp: Utc.with_ymd_and_hms(2024, 2, 1, 0, 0, 0).unwrap(),
        text: text.join(" "),
        language: "en".into(),
        translated_text: None,
        sentiment: Some(Sentiment::ALL[rng.gen_range(0..3)]),
        labels,
        label_source: LabelSource::Human,
    }
}

fn corpus(n: usize, seed: u64) -> Vec<Comment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| comment(i, &mut rng)).collect()
}

/// A draft whose every citation is a verbatim word run of its comment.
fn clean_draft(comments: &[Comment], rng: &mut ChaCha8Rng) -> SummaryDraft {
    let categories = LABELS[..3]
        .iter()
        .map(|name| CategorySummary {
            name: name.to_string(),
            attributes: (0..rng.gen_range(1..4))
                .map(|a| Attribute {
                    statement: format!("{name} statement {a}"),
                    citations: (0..rng.gen_range(1..4))
                        .map(|_| {
                            let c = &comments[rng.gen_range(0..comments.len())];
                            let words: Vec<&str> = c.text.split(' ').collect();
                            let start = rng.gen_range(0..words.len());
                            let end = rng.gen_range(start + 1..=words.len());
                            Citation {
                                id: c.id.clone(),
                                extract: words[start..end].join(" "),
                            }
                        })
                        .collect(),
                })
                .collect(),
        })
        .collect();
    SummaryDraft {
        product_id: "P".into(),
        source: DraftSource::Endpoint,
        categories,
    }
}

#[test]
fn every_single_citation_mutation_is_caught() {
    let cfg = SummaryConfig::default();
    let comments = corpus(40, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut caught = 0;
    for m in 0..100 {
        let mut draft = clean_draft(&comments, &mut rng);
        assert!(validate(&draft, &comments, &cfg).all_supported());
        let attrs: Vec<(usize, usize)> = draft
            .categories
            .iter()
            .enumerate()
            .flat_map(|(i, c)| (0..c.attributes.len()).map(move |j| (i, j)))
            .collect();
        let (i, j) = attrs[rng.gen_range(0..attrs.len())];
        let cits = &mut draft.categories[i].attributes[j].citations;
        let k = rng.gen_range(0..cits.len());
        if m % 2 == 0 {
            cits[k].id = format!("missing-{m}");
        } else {
            // a word that never occurs in any comment
            cits[k].extract = format!("{} zebra", cits[k].extract);
        }
        if !validate(&draft, &comments, &cfg).all_supported() {
            caught += 1;
        }
    }
    assert_eq!(caught, 100);
}

proptest! {
    #[test]
    fn eligibility_is_monotone_in_comment_count(n in 1usize..60, extra in 1usize..30, seed in 0u64..1000) {
        let cfg = SummaryConfig::default();
        let all = corpus(n + extra, seed);
        if eligible(&all[..n], &cfg).eligible {
            prop_assert!(eligible(&all, &cfg).eligible);
        }
    }

    #[test]
    fn repair_is_idempotent_and_never_adds(seed in 0u64..500, corrupt in 0usize..6) {
        let cfg = SummaryConfig::default();
        let comments = corpus(30, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
        let mut draft = clean_draft(&comments, &mut rng);
        for _ in 0..corrupt {
            let i = rng.gen_range(0..draft.categories.len());
            let j = rng.gen_range(0..draft.categories[i].attributes.len());
            draft.categories[i].attributes[j].citations[0].id = "gone".into();
        }
        let count = |d: &SummaryDraft| d.categories.iter().map(|c| c.attributes.len()).sum::<usize>();
        let r = validate(&draft, &comments, &cfg);
        let once = repair(&draft, &r, &comments, &BTreeSet::new(), &cfg);
        prop_assert!(count(&once.draft) <= count(&draft));
        let r2 = validate(&once.draft, &comments, &cfg);
        prop_assert!(r2.all_supported());
        let twice = repair(&once.draft, &r2, &comments, &BTreeSet::new(), &cfg);
        prop_assert_eq!(twice.draft, once.draft);
    }
}
