//! BIOES tag inventory over a set of entity types, and conversion between
//! entity spans and tag sequences.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered, non-empty list of distinct entity-type names.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct EntityTypeSet {
    names: Vec<String>,
}

impl EntityTypeSet {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::invalid("entity type set must not be empty"));
        }
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::invalid(format!("entity type {i} has an empty name")));
            }
            if name.chars().any(char::is_whitespace) || name.contains('-') {
                return Err(Error::invalid(format!(
                    "entity type {name:?} must not contain whitespace or '-'"
                )));
            }
            if names[..i].contains(name) {
                return Err(Error::invalid(format!("duplicate entity type {name:?}")));
            }
        }
        Ok(EntityTypeSet { names })
    }

    /// Parses a comma-separated list such as `PER,LOC,ORG,MISC`.
    pub fn parse_list(list: &str) -> Result<Self> {
        Self::new(list.split(',').map(str::trim).filter(|s| !s.is_empty()))
    }

    pub fn conll() -> Self {
        Self::new(["PER", "LOC", "ORG", "MISC"]).expect("static type list is valid")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

impl TryFrom<Vec<String>> for EntityTypeSet {
    type Error = Error;

    fn try_from(names: Vec<String>) -> Result<Self> {
        EntityTypeSet::new(names)
    }
}

impl From<EntityTypeSet> for Vec<String> {
    fn from(set: EntityTypeSet) -> Self {
        set.names
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TagKind {
    B,
    I,
    E,
    S,
    O,
}

/// One token-level label. Every kind except `Outside` carries an entity type index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Tag {
    Begin(usize),
    Inside(usize),
    End(usize),
    Single(usize),
    Outside,
}

impl Tag {
    pub fn kind(self) -> TagKind {
        match self {
            Tag::Begin(_) => TagKind::B,
            Tag::Inside(_) => TagKind::I,
            Tag::End(_) => TagKind::E,
            Tag::Single(_) => TagKind::S,
            Tag::Outside => TagKind::O,
        }
    }

    pub fn type_index(self) -> Option<usize> {
        match self {
            Tag::Begin(t) | Tag::Inside(t) | Tag::End(t) | Tag::Single(t) => Some(t),
            Tag::Outside => None,
        }
    }

    /// True when an entity is still open after this tag.
    fn opens(self) -> bool {
        matches!(self, Tag::Begin(_) | Tag::Inside(_))
    }
}

/// Whether `next` may follow `prev` under BIOES. `None` stands for the
/// sentence boundary: START when it is `prev`, STOP when it is `next`.
pub fn can_follow(prev: Option<Tag>, next: Option<Tag>) -> bool {
    match (prev, next) {
        (Some(p), n) if p.opens() => match n {
            Some(Tag::Inside(t)) | Some(Tag::End(t)) => p.type_index() == Some(t),
            _ => false,
        },
        (_, Some(Tag::Inside(_)) | Some(Tag::End(_))) => false,
        _ => true,
    }
}

/// The full tag inventory: B, I, E, S for every type in order, then O.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSpace {
    types: EntityTypeSet,
    tags: Vec<Tag>,
}

pub fn build_label_space(types: EntityTypeSet) -> LabelSpace {
    let mut tags = Vec::with_capacity(4 * types.len() + 1);
    for t in 0..types.len() {
        tags.extend([Tag::Begin(t), Tag::Inside(t), Tag::End(t), Tag::Single(t)]);
    }
    tags.push(Tag::Outside);
    LabelSpace { types, tags }
}

impl LabelSpace {
    pub fn new(types: EntityTypeSet) -> Self {
        build_label_space(types)
    }

    pub fn from_names<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        Ok(build_label_space(EntityTypeSet::new(names)?))
    }

    pub fn types(&self) -> &EntityTypeSet {
        &self.types
    }

    pub fn num_types(&self) -> usize {
        self.types.len()
    }

    /// Number of tags, `4 * num_types + 1`.
    pub fn size(&self) -> usize {
        self.tags.len()
    }

    pub fn tags(&self) -> &[Tag] {
        &self.tags
    }

    pub fn tag(&self, index: usize) -> Tag {
        self.tags[index]
    }

    pub fn outside_index(&self) -> usize {
        self.tags.len() - 1
    }

    pub fn index_of(&self, tag: Tag) -> usize {
        match tag {
            Tag::Begin(t) => 4 * t,
            Tag::Inside(t) => 4 * t + 1,
            Tag::End(t) => 4 * t + 2,
            Tag::Single(t) => 4 * t + 3,
            Tag::Outside => self.outside_index(),
        }
    }

    pub fn contains(&self, tag: Tag) -> bool {
        tag.type_index().is_none_or(|t| t < self.num_types())
    }

    pub fn parse_tag(&self, s: &str) -> Result<Tag> {
        if s == "O" {
            return Ok(Tag::Outside);
        }
        let (prefix, name) = s
            .split_once('-')
            .ok_or_else(|| Error::invalid(format!("malformed tag {s:?}")))?;
        let t = self
            .types
            .index_of(name)
            .ok_or_else(|| Error::invalid(format!("unknown entity type in tag {s:?}")))?;
        match prefix {
            "B" => Ok(Tag::Begin(t)),
            "I" => Ok(Tag::Inside(t)),
            "E" => Ok(Tag::End(t)),
            "S" => Ok(Tag::Single(t)),
            _ => Err(Error::invalid(format!("unknown tag prefix in {s:?}"))),
        }
    }

    pub fn display(&self, tag: Tag) -> DisplayTag<'_> {
        DisplayTag { space: self, tag }
    }
}

pub struct DisplayTag<'a> {
    space: &'a LabelSpace,
    tag: Tag,
}

impl fmt::Display for DisplayTag<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prefix = match self.tag.kind() {
            TagKind::B => "B",
            TagKind::I => "I",
            TagKind::E => "E",
            TagKind::S => "S",
            TagKind::O => return f.write_str("O"),
        };
        let t = self.tag.type_index().expect("typed tag");
        write!(f, "{prefix}-{}", self.space.types.name(t))
    }
}

/// Inclusive token range `[start, end]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SpanBounds {
    pub start: usize,
    pub end: usize,
}

impl SpanBounds {
    pub fn new(start: usize, end: usize) -> Self {
        SpanBounds { start, end }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// A typed entity over inclusive token range `[start, end]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub type_index: usize,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, type_index: usize) -> Self {
        EntitySpan {
            start,
            end,
            type_index,
        }
    }

    pub fn bounds(&self) -> SpanBounds {
        SpanBounds::new(self.start, self.end)
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// The unique tag sequence realizing one entity of type `type_index` over
/// `length` tokens.
pub fn span_tag_sequence(type_index: usize, length: usize) -> Result<Vec<Tag>> {
    match length {
        0 => Err(Error::invalid("span length must be at least 1")),
        1 => Ok(vec![Tag::Single(type_index)]),
        n => {
            let mut tags = Vec::with_capacity(n);
            tags.push(Tag::Begin(type_index));
            tags.extend(std::iter::repeat_n(Tag::Inside(type_index), n - 2));
            tags.push(Tag::End(type_index));
            Ok(tags)
        }
    }
}

pub fn encode_entities(sentence_length: usize, spans: &[EntitySpan]) -> Result<Vec<Tag>> {
    let mut tags = vec![Tag::Outside; sentence_length];
    let mut taken = vec![false; sentence_length];
    for span in spans {
        if span.start > span.end || span.end >= sentence_length {
            return Err(Error::invalid(format!(
                "span ({}, {}) out of bounds for sentence of length {sentence_length}",
                span.start, span.end
            )));
        }
        if taken[span.start..=span.end].iter().any(|&t| t) {
            return Err(Error::invalid(format!(
                "span ({}, {}) overlaps another span",
                span.start, span.end
            )));
        }
        let seq = span_tag_sequence(span.type_index, span.len())?;
        tags[span.start..=span.end].copy_from_slice(&seq);
        taken[span.start..=span.end].fill(true);
    }
    Ok(tags)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    /// Reject any BIOES violation.
    Strict,
    /// Skip ill-formed fragments. Diagnostics only.
    Lenient,
}

pub fn decode_tags(tags: &[Tag], mode: DecodeMode) -> Result<Vec<EntitySpan>> {
    let mut spans = Vec::new();
    // (start, type) of the entity currently open, if any
    let mut open: Option<(usize, usize)> = None;
    for (i, &tag) in tags.iter().enumerate() {
        let prev = open.map(|(_, t)| Tag::Inside(t));
        if !can_follow(prev, Some(tag)) {
            if mode == DecodeMode::Strict {
                return Err(Error::IllegalSequence {
                    position: i,
                    sentence: None,
                });
            }
            open = None;
            if matches!(tag, Tag::Inside(_) | Tag::End(_)) {
                continue;
            }
        }
        match tag {
            Tag::Begin(t) => open = Some((i, t)),
            Tag::Inside(_) => {}
            Tag::End(t) => {
                let (start, _) = open.take().expect("legal E closes an open entity");
                spans.push(EntitySpan::new(start, i, t));
            }
            Tag::Single(t) => spans.push(EntitySpan::new(i, i, t)),
            Tag::Outside => {}
        }
    }
    if open.is_some() && mode == DecodeMode::Strict {
        return Err(Error::IllegalSequence {
            position: tags.len(),
            sentence: None,
        });
    }
    Ok(spans)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conll() -> LabelSpace {
        LabelSpace::new(EntityTypeSet::conll())
    }

    const PER: usize = 0;
    const LOC: usize = 1;

    #[test]
    fn label_space_sizes() {
        assert_eq!(conll().size(), 17);
        let per = LabelSpace::from_names(["PER"]).unwrap();
        assert_eq!(
            per.tags(),
            &[
                Tag::Begin(0),
                Tag::Inside(0),
                Tag::End(0),
                Tag::Single(0),
                Tag::Outside
            ]
        );
        for n in 1..=10 {
            let names: Vec<String> = (0..n).map(|i| format!("T{i}")).collect();
            assert_eq!(LabelSpace::from_names(names).unwrap().size(), 4 * n + 1);
        }
    }

    #[test]
    fn bad_type_sets() {
        assert!(EntityTypeSet::new(Vec::<String>::new()).is_err());
        assert!(EntityTypeSet::new(["PER", "PER"]).is_err());
        assert!(EntityTypeSet::new(["PER", ""]).is_err());
    }

    #[test]
    fn tag_index_roundtrip() {
        let space = conll();
        for (i, &tag) in space.tags().iter().enumerate() {
            assert_eq!(space.index_of(tag), i);
            let text = space.display(tag).to_string();
            assert_eq!(space.parse_tag(&text).unwrap(), tag);
        }
        assert!(space.parse_tag("X-PER").is_err());
        assert!(space.parse_tag("B-FOO").is_err());
    }

    #[test]
    fn encode_examples() {
        let tags = encode_entities(5, &[EntitySpan::new(0, 2, PER), EntitySpan::new(4, 4, LOC)])
            .unwrap();
        assert_eq!(
            tags,
            vec![
                Tag::Begin(PER),
                Tag::Inside(PER),
                Tag::End(PER),
                Tag::Outside,
                Tag::Single(LOC)
            ]
        );
        assert_eq!(encode_entities(3, &[]).unwrap(), vec![Tag::Outside; 3]);
        assert!(encode_entities(3, &[EntitySpan::new(0, 1, PER), EntitySpan::new(1, 2, LOC)]).is_err());
        assert!(encode_entities(3, &[EntitySpan::new(2, 3, PER)]).is_err());
    }

    #[test]
    fn decode_examples() {
        let spans = decode_tags(&[Tag::Begin(PER), Tag::End(PER), Tag::Outside], DecodeMode::Strict)
            .unwrap();
        assert_eq!(spans, vec![EntitySpan::new(0, 1, PER)]);

        let err = decode_tags(&[Tag::Single(PER), Tag::Inside(PER)], DecodeMode::Strict).unwrap_err();
        assert!(matches!(err, Error::IllegalSequence { position: 1, .. }));

        let err = decode_tags(&[Tag::Outside, Tag::Begin(PER)], DecodeMode::Strict).unwrap_err();
        assert!(matches!(err, Error::IllegalSequence { position: 2, .. }));

        let err = decode_tags(&[Tag::Begin(PER), Tag::End(LOC)], DecodeMode::Strict).unwrap_err();
        assert!(matches!(err, Error::IllegalSequence { position: 1, .. }));
    }

    #[test]
    fn lenient_skips_fragments() {
        let tags = [
            Tag::Inside(PER),
            Tag::Single(LOC),
            Tag::Begin(PER),
            Tag::Single(PER),
            Tag::Begin(LOC),
            Tag::End(LOC),
            Tag::Begin(PER),
        ];
        let spans = decode_tags(&tags, DecodeMode::Lenient).unwrap();
        assert_eq!(
            spans,
            vec![
                EntitySpan::new(1, 1, LOC),
                EntitySpan::new(3, 3, PER),
                EntitySpan::new(4, 5, LOC)
            ]
        );
    }

    #[test]
    fn span_sequences() {
        assert_eq!(span_tag_sequence(PER, 1).unwrap(), vec![Tag::Single(PER)]);
        assert_eq!(
            span_tag_sequence(LOC, 3).unwrap(),
            vec![Tag::Begin(LOC), Tag::Inside(LOC), Tag::End(LOC)]
        );
        assert!(span_tag_sequence(2, 0).is_err());
    }

    /// All legal span sets over `len` tokens with `n_types` types.
    fn all_span_sets(len: usize, n_types: usize) -> Vec<Vec<EntitySpan>> {
        fn go(pos: usize, len: usize, n_types: usize, cur: &mut Vec<EntitySpan>, out: &mut Vec<Vec<EntitySpan>>) {
            if pos >= len {
                out.push(cur.clone());
                return;
            }
            go(pos + 1, len, n_types, cur, out);
            for end in pos..len {
                for t in 0..n_types {
                    cur.push(EntitySpan::new(pos, end, t));
                    go(end + 1, len, n_types, cur, out);
                    cur.pop();
                }
            }
        }
        let mut out = Vec::new();
        go(0, len, n_types, &mut Vec::new(), &mut out);
        out
    }

    #[test]
    fn exhaustive_roundtrip() {
        for n_types in 1..=2 {
            for len in 0..=6 {
                for spans in all_span_sets(len, n_types) {
                    let tags = encode_entities(len, &spans).unwrap();
                    assert_eq!(decode_tags(&tags, DecodeMode::Strict).unwrap(), spans);
                }
            }
        }
    }

    #[test]
    fn exactly_one_legal_sequence_per_class_and_length() {
        // Enumerate every tag sequence over a span and count those that
        // strictly decode to a single entity covering the whole span.
        let space = LabelSpace::from_names(["A", "B"]).unwrap();
        let k = space.size();
        for len in 1..=4usize {
            let mut counts = vec![0usize; space.num_types()];
            for code in 0..k.pow(len as u32) {
                let mut c = code;
                let tags: Vec<Tag> = (0..len)
                    .map(|_| {
                        let t = space.tag(c % k);
                        c /= k;
                        t
                    })
                    .collect();
                if let Ok(spans) = decode_tags(&tags, DecodeMode::Strict) {
                    if let [s] = spans.as_slice() {
                        if s.start == 0 && s.end == len - 1 {
                            counts[s.type_index] += 1;
                            assert_eq!(tags, span_tag_sequence(s.type_index, len).unwrap());
                        }
                    }
                }
            }
            assert_eq!(counts, vec![1, 1]);
        }
    }
}
