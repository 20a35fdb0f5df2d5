//! Recovery of `objects:` lists from free-form completions.
//!
//! Accepted grammar, with arbitrary whitespace between tokens:
//!
//! ```text
//! list   := '[' entry (',' entry)* ','? ']'
//! entry  := name ',' box
//! name   := '\'' [^']+ '\'' | '"' [^"]+ '"'
//! box    := '[' number ',' number ',' number ',' number ']'
//! number := '-'? digits ('.' digits)?
//! ```
//!
//! The first `[` in the text from which a complete list parses wins; anything
//! before or after it is ignored.

use thiserror::Error;

use crate::annotations::{
    caption_names, normalize_name, BBox, CategoryRegistry, ImageFrame, Layout, LayoutObject,
    LayoutSource,
};

/// Retryable failure classes for a single completion.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("no parseable objects list in response")]
    ParseFailure,
    #[error("box {index} is invalid: {reason}")]
    BoxInvalid { index: usize, reason: String },
    #[error("categories {found:?} do not match caption categories {expected:?}")]
    CategoryMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },
}

struct Cursor<'a> {
    s: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: u8) -> Option<()> {
        self.skip_ws();
        (self.s.get(self.pos) == Some(&c)).then(|| self.pos += 1)
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.s.get(self.pos).copied()
    }

    fn name(&mut self) -> Option<String> {
        let q = self.peek()?;
        if q != b'\'' && q != b'"' {
            return None;
        }
        self.pos += 1;
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos] != q {
            if self.s[self.pos] == b'\n' {
                return None;
            }
            self.pos += 1;
        }
        if self.pos >= self.s.len() || self.pos == start {
            return None;
        }
        let name = std::str::from_utf8(&self.s[start..self.pos]).ok()?.to_string();
        self.pos += 1;
        (!name.trim().is_empty()).then_some(name)
    }

    fn number(&mut self) -> Option<f64> {
        self.skip_ws();
        let start = self.pos;
        if self.s.get(self.pos) == Some(&b'-') {
            self.pos += 1;
        }
        let digits = |c: &mut Self| {
            let from = c.pos;
            while c.pos < c.s.len() && c.s[c.pos].is_ascii_digit() {
                c.pos += 1;
            }
            c.pos > from
        };
        if !digits(self) {
            return None;
        }
        if self.s.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            if !digits(self) {
                return None;
            }
        }
        std::str::from_utf8(&self.s[start..self.pos]).ok()?.parse().ok()
    }

    fn bbox(&mut self) -> Option<[f64; 4]> {
        self.eat(b'[')?;
        let mut out = [0.0; 4];
        for (i, slot) in out.iter_mut().enumerate() {
            if i > 0 {
                self.eat(b',')?;
            }
            *slot = self.number()?;
        }
        self.eat(b']')?;
        Some(out)
    }

    fn list(&mut self) -> Option<Vec<(String, [f64; 4])>> {
        self.eat(b'[')?;
        let mut entries = Vec::new();
        loop {
            let name = self.name()?;
            self.eat(b',')?;
            let bbox = self.bbox()?;
            entries.push((name, bbox));
            match self.peek()? {
                b']' => {
                    self.pos += 1;
                    return Some(entries);
                }
                b',' => {
                    self.pos += 1;
                    if self.peek()? == b']' {
                        self.pos += 1;
                        return Some(entries);
                    }
                }
                _ => return None,
            }
        }
    }
}

/// Extracts the first well-formed objects list as `(name, [x, y, w, h])` entries.
pub fn parse_objects_list(text: &str) -> Option<Vec<(String, [f64; 4])>> {
    let bytes = text.as_bytes();
    bytes
        .iter()
        .enumerate()
        .filter(|(_, &b)| b == b'[')
        .find_map(|(start, _)| Cursor { s: bytes, pos: start }.list())
}

/// Parses a completion into a layout on `canvas`.
///
/// Boxes are checked before categories: positive size and containment in the
/// canvas, then the multiset of names must equal the multiset named by
/// `expected_caption` (order is free). Names resolve through `registry`.
pub fn parse_layout_response(
    response: &str,
    canvas: ImageFrame,
    expected_caption: &str,
    registry: &CategoryRegistry,
) -> Result<Layout, ParseError> {
    let entries = parse_objects_list(response).ok_or(ParseError::ParseFailure)?;

    for (index, (_, b)) in entries.iter().enumerate() {
        BBox::from_array(*b)
            .check(canvas)
            .map_err(|reason| ParseError::BoxInvalid { index, reason })?;
    }

    let mut expected = caption_names(expected_caption);
    let mut found: Vec<String> = entries.iter().map(|(n, _)| normalize_name(n)).collect();
    expected.sort();
    found.sort();
    if expected != found {
        return Err(ParseError::CategoryMismatch { expected, found });
    }

    let mut objects = Vec::with_capacity(entries.len());
    for (name, b) in &entries {
        let label = registry
            .by_name(name)
            .ok_or_else(|| ParseError::CategoryMismatch {
                expected: expected.clone(),
                found: found.clone(),
            })?;
        objects.push(LayoutObject::new(label.clone(), BBox::from_array(*b)));
    }
    Layout::new(canvas, objects, LayoutSource::LlmGenerated).map_err(|reason| {
        ParseError::BoxInvalid { index: 0, reason }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::CategoryLabel;

    fn reg() -> CategoryRegistry {
        CategoryRegistry::new([
            CategoryLabel::new(17, "cat"),
            CategoryLabel::new(3, "car"),
            CategoryLabel::new(1, "person"),
            CategoryLabel::new(10, "traffic light"),
        ])
        .unwrap()
    }

    const CANVAS: ImageFrame = ImageFrame {
        width: 512,
        height: 512,
    };

    #[test]
    fn happy_path() {
        let l = parse_layout_response("objects: ['cat', [10, 20, 100, 80]]", CANVAS, "a cat", &reg())
            .unwrap();
        assert_eq!(l.objects.len(), 1);
        assert_eq!(l.objects[0].bbox, BBox::new(10.0, 20.0, 100.0, 80.0));
        assert_eq!(l.objects[0].category.id, 17);
        assert_eq!(l.source, LayoutSource::LlmGenerated);
        assert_eq!(l.frame, CANVAS);
    }

    #[test]
    fn out_of_bounds_is_box_invalid() {
        let e = parse_layout_response("objects: ['cat', [500, 500, 100, 80]]", CANVAS, "a cat", &reg())
            .unwrap_err();
        assert!(matches!(e, ParseError::BoxInvalid { index: 0, .. }));
    }

    #[test]
    fn trailing_prose_is_ignored() {
        let r = " ['car', [1, 2, 3, 4], 'traffic light', [5,6,7,8]]\n\ncaption: 'a dog'\nobjects: [";
        let l = parse_layout_response(r, CANVAS, "a traffic light, a car", &reg()).unwrap();
        assert_eq!(l.objects.len(), 2);
        assert_eq!(l.caption, "a car, a traffic light");
    }

    #[test]
    fn prefix_brackets_do_not_confuse() {
        let r = "Sure [see below]: [1, 2] objects: [\"cat\", [1.5, 2, 3, 4],]";
        let l = parse_layout_response(r, CANVAS, "a cat", &reg()).unwrap();
        assert_eq!(l.objects[0].bbox.x, 1.5);
    }

    #[test]
    fn truncated_is_parse_failure() {
        for r in ["['cat', [1, 2, 3", "['cat', [1, 2, 3, 4], 'car'", "", "no list here", "[]"] {
            assert_eq!(
                parse_layout_response(r, CANVAS, "a cat", &reg()),
                Err(ParseError::ParseFailure),
                "{r:?}"
            );
        }
    }

    #[test]
    fn multiset_mismatch() {
        let e = parse_layout_response("['cat', [1, 2, 3, 4]]", CANVAS, "a cat, a cat", &reg())
            .unwrap_err();
        assert!(matches!(e, ParseError::CategoryMismatch { .. }));
        let e = parse_layout_response("['dog', [1, 2, 3, 4]]", CANVAS, "a dog", &reg()).unwrap_err();
        assert!(matches!(e, ParseError::CategoryMismatch { .. }));
    }

    #[test]
    fn order_is_free() {
        let r = "['person', [1, 2, 3, 4], 'cat', [5, 6, 7, 8]]";
        assert!(parse_layout_response(r, CANVAS, "a cat, a person", &reg()).is_ok());
    }

    #[test]
    fn non_positive_size_is_box_invalid() {
        let e = parse_layout_response("['cat', [1, 2, 0, 4]]", CANVAS, "a cat", &reg()).unwrap_err();
        assert!(matches!(e, ParseError::BoxInvalid { index: 0, .. }));
        let e = parse_layout_response("['cat', [-1, 2, 5, 4]]", CANVAS, "a cat", &reg()).unwrap_err();
        assert!(matches!(e, ParseError::BoxInvalid { index: 0, .. }));
    }
}
