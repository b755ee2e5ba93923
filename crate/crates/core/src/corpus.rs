//! Corpus data model: documents made of ordered multimodal components,
//! each with optional subcomponents and navigational links to other
//! documents.
//!
//! The on-disk form is one JSON document record per line:
//!
//! ```text
//! {"doc_id":"d1","title":"...","summary":"...","components":[
//!   {"component_id":"c1","modality":"paragraph","content":"...",
//!    "subcomponents":[{"sub_id":"s1","content":"..."}],"links":["d2"]}]}
//! ```
//!
//! Image content is an object `{"media_ref": "...", "caption": "..."}`;
//! paragraph and table content is a string (tables use one serialized row
//! per line).

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("duplicate document id `{0}`")]
    DuplicateDocId(String),
    #[error("unknown component {doc_id}/{component_id}")]
    UnknownComponent { doc_id: String, component_id: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Paragraph,
    Table,
    Image,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Paragraph => "paragraph",
            Modality::Table => "table",
            Modality::Image => "image",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Raw content of a component. The variant always agrees with the
/// component's [`Modality`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModalPayload {
    Paragraph(String),
    /// Serialized rows, one per line.
    Table(String),
    Image {
        media_ref: String,
        caption: Option<String>,
    },
}

impl ModalPayload {
    pub fn modality(&self) -> Modality {
        match self {
            ModalPayload::Paragraph(_) => Modality::Paragraph,
            ModalPayload::Table(_) => Modality::Table,
            ModalPayload::Image { .. } => Modality::Image,
        }
    }

    /// Text rendering used for previews and LLM prompts. Images render as
    /// their caption followed by the media reference.
    pub fn as_text(&self) -> String {
        match self {
            ModalPayload::Paragraph(t) | ModalPayload::Table(t) => t.clone(),
            ModalPayload::Image { media_ref, caption } => match caption {
                Some(c) if !c.is_empty() => format!("{c} [image: {media_ref}]"),
                _ => format!("[image: {media_ref}]"),
            },
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            ModalPayload::Paragraph(t) | ModalPayload::Table(t) => t.trim().is_empty(),
            ModalPayload::Image { media_ref, .. } => media_ref.trim().is_empty(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subcomponent {
    pub sub_id: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub component_id: String,
    pub content: ModalPayload,
    pub subcomponents: Vec<Subcomponent>,
    pub links: Vec<String>,
}

impl Component {
    pub fn modality(&self) -> Modality {
        self.content.modality()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub summary: Option<String>,
    pub components: Vec<Component>,
}

impl Document {
    pub fn component(&self, component_id: &str) -> Option<&Component> {
        self.components
            .iter()
            .find(|c| c.component_id == component_id)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub documents: Vec<Document>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DanglingLink {
    pub doc_id: String,
    pub component_id: String,
    pub target: String,
}

/// Problems found by [`validate_corpus`]. Identifiers in `duplicate_ids`
/// and `empty_payloads` are slash-joined paths (`d1`, `d1/c1`, `d1/c1/s1`).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub dangling_links: Vec<DanglingLink>,
    pub duplicate_ids: Vec<String>,
    pub empty_payloads: Vec<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.dangling_links.is_empty() && self.duplicate_ids.is_empty() && self.empty_payloads.is_empty()
    }
}

impl Corpus {
    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.doc_id == doc_id)
    }

    pub fn component_count(&self) -> usize {
        self.documents.iter().map(|d| d.components.len()).sum()
    }

    pub fn subcomponent_count(&self) -> usize {
        self.documents
            .iter()
            .flat_map(|d| &d.components)
            .map(|c| c.subcomponents.len())
            .sum()
    }

    /// Writes the corpus in the line-delimited record format.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), CorpusError> {
        for doc in &self.documents {
            let record = DocumentRecord::from(doc);
            let line = serde_json::to_string(&record).expect("corpus records always serialize");
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }
}

/// Parses a line-delimited corpus. Blank lines are skipped; any other line
/// that fails to decode aborts with its 1-based line number.
pub fn parse_corpus<R: BufRead>(input: R) -> Result<Corpus, CorpusError> {
    let mut documents = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DocumentRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: line_no,
            reason: e.to_string(),
        })?;
        let doc = record.into_document().map_err(|reason| CorpusError::Parse { line: line_no, reason })?;
        if !seen.insert(doc.doc_id.clone()) {
            return Err(CorpusError::DuplicateDocId(doc.doc_id));
        }
        documents.push(doc);
    }
    Ok(Corpus { documents })
}

pub fn parse_corpus_str(input: &str) -> Result<Corpus, CorpusError> {
    parse_corpus(input.as_bytes())
}

/// Reports dangling links, duplicate identifiers at every level, and empty
/// payloads. Never mutates the corpus.
pub fn validate_corpus(corpus: &Corpus) -> ValidationReport {
    let mut report = ValidationReport::default();
    let doc_ids: HashSet<&str> = corpus.documents.iter().map(|d| d.doc_id.as_str()).collect();

    let mut doc_counts: HashMap<&str, usize> = HashMap::new();
    for doc in &corpus.documents {
        let n = doc_counts.entry(doc.doc_id.as_str()).or_default();
        *n += 1;
        if *n == 2 {
            report.duplicate_ids.push(doc.doc_id.clone());
        }
    }

    for doc in &corpus.documents {
        let mut comp_seen = HashSet::new();
        for comp in &doc.components {
            let path = format!("{}/{}", doc.doc_id, comp.component_id);
            if !comp_seen.insert(comp.component_id.as_str()) {
                report.duplicate_ids.push(path.clone());
            }
            if comp.content.is_empty() {
                report.empty_payloads.push(path.clone());
            }
            let mut sub_seen = HashSet::new();
            for sub in &comp.subcomponents {
                let sub_path = format!("{path}/{}", sub.sub_id);
                if !sub_seen.insert(sub.sub_id.as_str()) {
                    report.duplicate_ids.push(sub_path.clone());
                }
                if sub.content.trim().is_empty() {
                    report.empty_payloads.push(sub_path);
                }
            }
            for target in &comp.links {
                if !doc_ids.contains(target.as_str()) {
                    report.dangling_links.push(DanglingLink {
                        doc_id: doc.doc_id.clone(),
                        component_id: comp.component_id.clone(),
                        target: target.clone(),
                    });
                }
            }
        }
    }
    report
}

/// Resolves a component's links to documents present in the corpus;
/// dangling targets are excluded.
pub fn link_targets(corpus: &Corpus, doc_id: &str, component_id: &str) -> Result<BTreeSet<String>, CorpusError> {
    let comp = corpus
        .document(doc_id)
        .and_then(|d| d.component(component_id))
        .ok_or_else(|| CorpusError::UnknownComponent {
            doc_id: doc_id.to_string(),
            component_id: component_id.to_string(),
        })?;
    Ok(comp
        .links
        .iter()
        .filter(|t| corpus.document(t).is_some())
        .cloned()
        .collect())
}

// Wire records. Kept separate from the domain types so the domain can
// enforce the modality/payload pairing.

#[derive(Debug, Serialize, Deserialize)]
struct DocumentRecord {
    doc_id: String,
    title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    summary: Option<String>,
    #[serde(default)]
    components: Vec<ComponentRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ComponentRecord {
    component_id: String,
    modality: Modality,
    content: ContentRecord,
    #[serde(default)]
    subcomponents: Vec<SubcomponentRecord>,
    #[serde(default)]
    links: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum ContentRecord {
    Text(String),
    Media {
        media_ref: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        caption: Option<String>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct SubcomponentRecord {
    sub_id: String,
    content: String,
}

impl DocumentRecord {
    fn into_document(self) -> Result<Document, String> {
        let mut components = Vec::with_capacity(self.components.len());
        for c in self.components {
            let content = match (c.modality, c.content) {
                (Modality::Paragraph, ContentRecord::Text(t)) => ModalPayload::Paragraph(t),
                (Modality::Table, ContentRecord::Text(t)) => ModalPayload::Table(t),
                (Modality::Image, ContentRecord::Media { media_ref, caption }) => {
                    ModalPayload::Image { media_ref, caption }
                }
                (m, _) => {
                    return Err(format!(
                        "component `{}`: content shape does not match modality `{m}`",
                        c.component_id
                    ))
                }
            };
            components.push(Component {
                component_id: c.component_id,
                content,
                subcomponents: c
                    .subcomponents
                    .into_iter()
                    .map(|s| Subcomponent { sub_id: s.sub_id, content: s.content })
                    .collect(),
                links: c.links,
            });
        }
        Ok(Document { doc_id: self.doc_id, title: self.title, summary: self.summary, components })
    }
}

impl From<&Document> for DocumentRecord {
    fn from(doc: &Document) -> Self {
        DocumentRecord {
            doc_id: doc.doc_id.clone(),
            title: doc.title.clone(),
            summary: doc.summary.clone(),
            components: doc
                .components
                .iter()
                .map(|c| ComponentRecord {
                    component_id: c.component_id.clone(),
                    modality: c.modality(),
                    content: match &c.content {
                        ModalPayload::Paragraph(t) | ModalPayload::Table(t) => ContentRecord::Text(t.clone()),
                        ModalPayload::Image { media_ref, caption } => ContentRecord::Media {
                            media_ref: media_ref.clone(),
                            caption: caption.clone(),
                        },
                    },
                    subcomponents: c
                        .subcomponents
                        .iter()
                        .map(|s| SubcomponentRecord { sub_id: s.sub_id.clone(), content: s.content.clone() })
                        .collect(),
                    links: c.links.clone(),
                })
                .collect(),
        }
    }
}
