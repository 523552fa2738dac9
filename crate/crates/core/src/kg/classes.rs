use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::vocab::class_relation_label;
use super::{ClassId, RelationId, TypeId, Vocab};
use crate::error::DataError;

/// How a type label is mapped onto its class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(try_from = "String", into = "String")]
pub enum ClassRule {
    /// `/medicine/disease` -> `medicine`; labels without `/` map to themselves.
    #[default]
    FirstPathSegment,
    /// Every type is its own class.
    WholeLabel,
    /// First `k` path segments, e.g. depth 2 maps `/a/b/c` to `a/b`.
    PrefixDepth(usize),
}

impl ClassRule {
    fn class_of<'a>(&self, label: &'a str) -> Result<std::borrow::Cow<'a, str>, DataError> {
        if label.is_empty() {
            return Err(DataError::EmptyLabel);
        }
        let depth = match *self {
            ClassRule::WholeLabel => return Ok(label.into()),
            ClassRule::FirstPathSegment => 1,
            ClassRule::PrefixDepth(k) => k.max(1),
        };
        let trimmed = label.strip_prefix('/').unwrap_or(label);
        let segments: Vec<&str> = trimmed.split('/').filter(|s| !s.is_empty()).collect();
        if segments.is_empty() {
            return Ok(label.into());
        }
        let take = depth.min(segments.len());
        if take == 1 {
            Ok(segments[0].into())
        } else {
            Ok(segments[..take].join("/").into())
        }
    }
}

impl fmt::Display for ClassRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassRule::FirstPathSegment => f.write_str("first-path-segment"),
            ClassRule::WholeLabel => f.write_str("whole-label"),
            ClassRule::PrefixDepth(k) => write!(f, "prefix-depth:{k}"),
        }
    }
}

impl FromStr for ClassRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "first-path-segment" => Ok(ClassRule::FirstPathSegment),
            "whole-label" => Ok(ClassRule::WholeLabel),
            _ => s
                .strip_prefix("prefix-depth:")
                .and_then(|k| k.parse().ok())
                .filter(|&k: &usize| k > 0)
                .map(ClassRule::PrefixDepth)
                .ok_or_else(|| {
                    format!(
                        "unknown class rule `{s}` (expected first-path-segment | whole-label | prefix-depth:K)"
                    )
                }),
        }
    }
}

impl TryFrom<String> for ClassRule {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ClassRule> for String {
    fn from(r: ClassRule) -> Self {
        r.to_string()
    }
}

/// Type -> class clustering plus the class-membership relation of each class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap {
    pub type_to_class: Vec<ClassId>,
    pub class_to_relation: Vec<RelationId>,
}

impl ClassMap {
    pub fn class_of(&self, ty: TypeId) -> ClassId {
        self.type_to_class[ty.index()]
    }

    /// The `belongs_class_*` relation for the class of `ty`.
    pub fn class_relation(&self, ty: TypeId) -> RelationId {
        self.class_to_relation[self.class_of(ty).index()]
    }

    pub fn num_classes(&self) -> usize {
        self.class_to_relation.len()
    }
}

/// Assigns every type label a class and registers one fresh
/// `belongs_class_<class>` relation per class in `relations`.
///
/// `overrides` maps type labels to explicit class labels and takes precedence
/// over `rule`. Returns the class vocabulary together with the map.
pub fn extract_classes<'a>(
    type_labels: impl IntoIterator<Item = &'a str>,
    rule: ClassRule,
    overrides: Option<&HashMap<String, String>>,
    relations: &mut Vocab,
) -> Result<(Vocab, ClassMap), DataError> {
    let mut classes = Vocab::new();
    let mut type_to_class = Vec::new();
    for label in type_labels {
        let class = match overrides.and_then(|o| o.get(label)) {
            Some(c) if !c.is_empty() => std::borrow::Cow::Borrowed(c.as_str()),
            Some(_) => return Err(DataError::EmptyLabel),
            None => rule.class_of(label)?,
        };
        type_to_class.push(ClassId::from_index(classes.intern(&class)));
    }
    let mut class_to_relation = Vec::with_capacity(classes.len());
    for class in classes.iter() {
        let label = class_relation_label(class);
        let id = relations
            .insert_new(label.clone())
            .ok_or(DataError::LabelCollision(label))?;
        class_to_relation.push(RelationId::from_index(id));
    }
    Ok((
        classes,
        ClassMap {
            type_to_class,
            class_to_relation,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(labels: &[&str], rule: ClassRule) -> (Vocab, ClassMap, Vocab) {
        let mut rels = Vocab::new();
        let (c, m) = extract_classes(labels.iter().copied(), rule, None, &mut rels).unwrap();
        (c, m, rels)
    }

    #[test]
    fn medicine_types_share_a_class() {
        let (classes, map, rels) = run(
            &["/medicine/disease", "/medicine/symptom", "/medicine/drug"],
            ClassRule::FirstPathSegment,
        );
        assert_eq!(classes.len(), 1);
        assert_eq!(classes.label(0), "medicine");
        assert!(map.type_to_class.iter().all(|c| c.index() == 0));
        assert_eq!(rels.label(map.class_to_relation[0].index()), "belongs_class_medicine");
    }

    #[test]
    fn single_segment_maps_to_itself() {
        let (classes, _, _) = run(&["person"], ClassRule::FirstPathSegment);
        assert_eq!(classes.label(0), "person");
    }

    #[test]
    fn whole_label_and_prefix_depth() {
        let (c, _, _) = run(&["/a/b/c", "/a/b/d", "/a/e"], ClassRule::WholeLabel);
        assert_eq!(c.len(), 3);
        let (c, m, _) = run(&["/a/b/c", "/a/b/d", "/a/e"], ClassRule::PrefixDepth(2));
        assert_eq!(c.iter().collect::<Vec<_>>(), ["a/b", "a/e"]);
        assert_eq!(m.type_to_class[0], m.type_to_class[1]);
    }

    #[test]
    fn empty_label_is_rejected() {
        let mut rels = Vocab::new();
        let err = extract_classes([""], ClassRule::FirstPathSegment, None, &mut rels).unwrap_err();
        assert!(matches!(err, DataError::EmptyLabel));
    }

    #[test]
    fn overrides_win() {
        let mut rels = Vocab::new();
        let o: HashMap<_, _> = [("/x/y".to_string(), "custom".to_string())].into();
        let (c, _) =
            extract_classes(["/x/y", "/x/z"], ClassRule::FirstPathSegment, Some(&o), &mut rels)
                .unwrap();
        assert_eq!(c.iter().collect::<Vec<_>>(), ["custom", "x"]);
    }

    #[test]
    fn deterministic_and_idempotent() {
        let labels = ["/m/a", "/n/b", "/m/c", "solo"];
        let a = run(&labels, ClassRule::FirstPathSegment);
        let b = run(&labels, ClassRule::FirstPathSegment);
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        // Re-clustering class labels yields the same partition.
        let names: Vec<String> = a.0.iter().map(str::to_owned).collect();
        let c = run(&names.iter().map(String::as_str).collect::<Vec<_>>(), ClassRule::FirstPathSegment);
        assert_eq!(c.0, a.0);
    }

    #[test]
    fn rule_parsing() {
        assert_eq!("first-path-segment".parse::<ClassRule>(), Ok(ClassRule::FirstPathSegment));
        assert_eq!("prefix-depth:3".parse::<ClassRule>(), Ok(ClassRule::PrefixDepth(3)));
        assert!("prefix-depth:0".parse::<ClassRule>().is_err());
        assert_eq!(ClassRule::PrefixDepth(2).to_string().parse::<ClassRule>(), Ok(ClassRule::PrefixDepth(2)));
    }
}
