//! Synthetic corpora and datasets: hand-shaped toy graphs for planted
//! similarity scenarios, and a seeded generator for benchmark runs.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Component, Corpus, Document, ModalPayload, Subcomponent};
use crate::eval::{BenchmarkItem, GoldComponent};

/// Component spec for [`toy_corpus`].
#[derive(Debug, Clone, Copy)]
pub struct ToyComponent<'a> {
    pub id: &'a str,
    pub subs: &'a [&'a str],
    pub links: &'a [&'a str],
}

pub const fn toy<'a>(id: &'a str, subs: &'a [&'a str], links: &'a [&'a str]) -> ToyComponent<'a> {
    ToyComponent { id, subs, links }
}

pub fn toy_title(doc: &str) -> String {
    format!("Title {doc}")
}

pub fn toy_summary(doc: &str) -> String {
    format!("summary of {doc}")
}

pub fn toy_content(doc: &str, comp: &str) -> String {
    format!("content of {doc}/{comp}")
}

pub fn toy_sub(doc: &str, comp: &str, sub: &str) -> String {
    format!("row {doc}/{comp}/{sub}")
}

/// Corpus whose every text is a fixed function of its identifiers, so
/// planted embedders can address nodes by text.
pub fn toy_corpus(docs: &[(&str, &[ToyComponent<'_>])]) -> Corpus {
    Corpus {
        documents: docs
            .iter()
            .map(|(doc, comps)| Document {
                doc_id: doc.to_string(),
                title: toy_title(doc),
                summary: Some(toy_summary(doc)),
                components: comps
                    .iter()
                    .map(|c| Component {
                        component_id: c.id.to_string(),
                        content: ModalPayload::Paragraph(toy_content(doc, c.id)),
                        subcomponents: c
                            .subs
                            .iter()
                            .map(|s| Subcomponent { sub_id: s.to_string(), content: toy_sub(doc, c.id, s) })
                            .collect(),
                        links: c.links.iter().map(|l| l.to_string()).collect(),
                    })
                    .collect(),
            })
            .collect(),
    }
}

const SYLLABLES: &[&str] = &[
    "ka", "ro", "mi", "tel", "san", "vor", "lu", "pen", "dra", "ost", "qui", "bel", "nar", "zo", "fen", "ith",
];
const KINDS: &[&str] = &["city", "river", "company", "festival", "observatory", "museum"];
const ATTRIBUTES: &[&str] = &["founding year", "population", "elevation", "area", "budget", "length"];
const RELATIONS: &[&str] = &["sister city", "partner", "neighbor", "rival"];

fn name(rng: &mut ChaCha8Rng, used: &mut BTreeSet<String>) -> String {
    loop {
        let n = rng.random_range(2..=3);
        let mut s: String = (0..n).map(|_| *SYLLABLES.choose(rng).unwrap()).collect();
        s[..1].make_ascii_uppercase();
        if used.insert(s.clone()) {
            return s;
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub documents: usize,
    pub questions: usize,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions { documents: 40, questions: 12, seed: 7 }
    }
}

/// Seeded corpus of entity documents, each with a description paragraph
/// linking to a related entity, an attribute table and a captioned image,
/// plus two-hop questions: "what is the A of the R of X?" whose gold is the
/// table of X's related entity.
pub fn generate(opts: &SynthOptions) -> (Corpus, Vec<BenchmarkItem>) {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut used = BTreeSet::new();
    let n = opts.documents.max(2);
    let names: Vec<String> = (0..n).map(|_| name(&mut rng, &mut used)).collect();
    let kinds: Vec<&str> = (0..n).map(|_| *KINDS.choose(&mut rng).unwrap()).collect();
    let mut documents = Vec::with_capacity(n);
    let mut related = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let rel = *RELATIONS.choose(&mut rng).unwrap();
        related.push((j, rel));
        let attrs: Vec<(&str, u32)> =
            ATTRIBUTES.iter().map(|a| (*a, rng.random_range(100..10_000))).collect();
        values.push(attrs.clone());
        let doc_id = format!("doc{i:03}");
        let rows: Vec<Subcomponent> = attrs
            .iter()
            .enumerate()
            .map(|(r, (a, v))| Subcomponent { sub_id: format!("r{r}"), content: format!("{} {a} | {v}", names[i]) })
            .collect();
        let table_text = rows.iter().map(|r| r.content.clone()).collect::<Vec<_>>().join("\n");
        let desc = format!(
            "{} is a {} whose {rel} is {}. {} is often mentioned alongside {}.",
            names[i], kinds[i], names[j], names[i], names[j]
        );
        let sentences: Vec<Subcomponent> = desc
            .split(". ")
            .enumerate()
            .map(|(s, t)| Subcomponent { sub_id: format!("s{s}"), content: t.trim_end_matches('.').to_string() })
            .collect();
        documents.push(Document {
            doc_id: doc_id.clone(),
            title: names[i].clone(),
            summary: Some(format!("{} is a {} known for its {rel} {}.", names[i], kinds[i], names[j])),
            components: vec![
                Component {
                    component_id: "p0".into(),
                    content: ModalPayload::Paragraph(desc),
                    subcomponents: sentences,
                    links: vec![format!("doc{j:03}")],
                },
                Component {
                    component_id: "t0".into(),
                    content: ModalPayload::Table(table_text),
                    subcomponents: rows,
                    links: vec![],
                },
                Component {
                    component_id: "i0".into(),
                    content: ModalPayload::Image {
                        media_ref: format!("media/{doc_id}.png"),
                        caption: Some(format!("Photograph of {} the {}", names[i], kinds[i])),
                    },
                    subcomponents: vec![],
                    links: vec![],
                },
            ],
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let items = order
        .into_iter()
        .take(opts.questions)
        .enumerate()
        .map(|(q, i)| {
            let (j, rel) = related[i];
            let (attr, value) = *values[j].choose(&mut rng).unwrap();
            BenchmarkItem {
                qid: format!("q{q:03}"),
                question: format!("What is the {attr} of the {rel} of {}?", names[i]),
                gold_components: vec![GoldComponent { doc_id: format!("doc{j:03}"), component_id: "t0".into() }],
                gold_answer: value.to_string(),
            }
        })
        .collect();
    (Corpus { documents }, items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::validate_corpus;

    #[test]
    fn toy_corpus_is_addressable_by_text() {
        let c = toy_corpus(&[("d1", &[toy("c1", &["s1"], &["d2"])]), ("d2", &[])]);
        assert!(validate_corpus(&c).is_clean());
        assert_eq!(c.documents[0].components[0].subcomponents[0].content, toy_sub("d1", "c1", "s1"));
        assert_eq!(c.documents[0].components[0].content.as_text(), toy_content("d1", "c1"));
    }

    #[test]
    fn generator_is_seeded_and_clean() {
        let opts = SynthOptions { documents: 20, questions: 5, seed: 3 };
        let (c1, q1) = generate(&opts);
        let (c2, q2) = generate(&opts);
        assert_eq!(c1, c2);
        assert_eq!(q1, q2);
        assert_eq!(c1.documents.len(), 20);
        assert_eq!(q1.len(), 5);
        assert!(validate_corpus(&c1).is_clean());
        for q in &q1 {
            let g = &q.gold_components[0];
            assert!(c1.document(&g.doc_id).unwrap().component(&g.component_id).is_some());
        }
        assert_ne!(generate(&SynthOptions { seed: 4, ..opts }).0, c1);
    }
}
