use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ClassRule, KgBuilder, KnowledgeGraph, RawAssertion, RawTriple, Split};
use crate::error::DataError;

pub const TRIPLES_FILE: &str = "train_triples.txt";
pub const CLASSMAP_FILE: &str = "classmap.tsv";

pub fn tuples_file(split: Split) -> String {
    format!("{}_tuples.txt", split.name())
}

/// What to do with a valid/test entity that never occurs in training data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnknownEntityPolicy {
    #[default]
    Reject,
    /// Register the entity with an empty neighborhood.
    AddIsolated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadOptions {
    pub include_inverse: bool,
    pub unknown_entities: UnknownEntityPolicy,
    pub class_rule: ClassRule,
    /// Honor `classmap.tsv` when present in the dataset directory.
    pub use_classmap_file: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            include_inverse: true,
            unknown_entities: UnknownEntityPolicy::Reject,
            class_rule: ClassRule::FirstPathSegment,
            use_classmap_file: true,
        }
    }
}

fn read(dir: &Path, name: &str, what: &'static str) -> Result<(PathBuf, String), DataError> {
    let path = dir.join(name);
    if !path.is_file() {
        return Err(DataError::MissingFile { what, path });
    }
    let text = fs::read_to_string(&path).map_err(|source| DataError::Io {
        path: path.clone(),
        source,
    })?;
    Ok((path, text))
}

/// Yields `(line number, fields)` for every non-blank line; each line must
/// have exactly `arity` non-empty tab-separated fields.
fn records<'a>(
    path: &'a Path,
    text: &'a str,
    arity: usize,
) -> impl Iterator<Item = Result<(usize, Vec<&'a str>), DataError>> + 'a {
    text.lines().enumerate().filter_map(move |(i, raw)| {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            return None;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != arity || fields.iter().any(|f| f.is_empty()) {
            return Some(Err(DataError::Parse {
                path: path.to_owned(),
                line: i + 1,
                msg: format!(
                    "expected {arity} non-empty tab-separated fields, found {}",
                    fields.len()
                ),
            }));
        }
        Some(Ok((i + 1, fields)))
    })
}

/// Loads `train_triples.txt`, `{train,valid,test}_tuples.txt` and the optional
/// `classmap.tsv` from `dir`.
pub fn load_dataset(dir: impl AsRef<Path>, options: &LoadOptions) -> Result<KnowledgeGraph, DataError> {
    let dir = dir.as_ref();
    let mut builder = KgBuilder::new(options.clone());

    let (path, text) = read(dir, TRIPLES_FILE, "train triples")?;
    for rec in records(&path, &text, 3) {
        let (_, f) = rec?;
        builder.raw_triple(RawTriple {
            head: f[0].to_owned(),
            rel: f[1].to_owned(),
            tail: f[2].to_owned(),
        });
    }

    for (split, what) in [
        (Split::Train, "train tuples"),
        (Split::Valid, "valid tuples"),
        (Split::Test, "test tuples"),
    ] {
        let (path, text) = read(dir, &tuples_file(split), what)?;
        for rec in records(&path, &text, 2) {
            let (line, f) = rec?;
            builder.raw_assertion(
                split,
                RawAssertion {
                    entity: f[0].to_owned(),
                    ty: f[1].to_owned(),
                    line,
                },
            );
        }
    }

    if options.use_classmap_file && dir.join(CLASSMAP_FILE).is_file() {
        let (path, text) = read(dir, CLASSMAP_FILE, "class map")?;
        let mut overrides = HashMap::new();
        for rec in records(&path, &text, 2) {
            let (_, f) = rec?;
            overrides.insert(f[0].to_owned(), f[1].to_owned());
        }
        builder.class_overrides(overrides);
    }

    builder.build()
}

/// Writes a graph back out in the on-disk format read by [`load_dataset`].
pub fn write_dataset(kg: &KnowledgeGraph, dir: impl AsRef<Path>) -> Result<(), DataError> {
    use std::fmt::Write as _;
    let dir = dir.as_ref();
    let io = |path: PathBuf| move |source| DataError::Io { path, source };
    fs::create_dir_all(dir).map_err(io(dir.to_owned()))?;
    let v = kg.vocab();
    let mut out = String::new();
    for t in kg.triples() {
        let _ = writeln!(
            out,
            "{}\t{}\t{}",
            v.entities.label(t.head.index()),
            v.relations.label(t.rel.index()),
            v.entities.label(t.tail.index())
        );
    }
    let p = dir.join(TRIPLES_FILE);
    fs::write(&p, out).map_err(io(p.clone()))?;
    for split in Split::ALL {
        let mut out = String::new();
        for a in kg.assertions_in(split) {
            let _ = writeln!(
                out,
                "{}\t{}",
                v.entities.label(a.entity.index()),
                v.types.label(a.ty.index())
            );
        }
        let p = dir.join(tuples_file(split));
        fs::write(&p, out).map_err(io(p.clone()))?;
    }
    Ok(())
}
