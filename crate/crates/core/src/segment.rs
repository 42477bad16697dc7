//! Incremental sentence segmentation of backend output.
//!
//! The rule is deliberately plain: a chunk ends at `.`, `!` or `?` when the
//! next character is whitespace. No abbreviation handling. Whatever is left
//! when the stream closes is flushed as a final chunk.

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

#[derive(Debug, Default, Clone)]
pub struct StreamSegmenter {
    buf: String,
}

impl StreamSegmenter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feeds more text; returns the chunks it completed.
    pub fn push(&mut self, text: &str) -> Vec<String> {
        self.buf.push_str(text);
        let mut out = Vec::new();
        let mut start = 0;
        let mut prev_terminal = false;
        for (i, c) in self.buf.char_indices() {
            if prev_terminal && c.is_whitespace() {
                let piece = self.buf[start..i].trim();
                if !piece.is_empty() {
                    out.push(piece.to_string());
                }
                start = i;
            }
            prev_terminal = is_terminal(c);
        }
        self.buf.drain(..start);
        out
    }

    /// Flushes the trailing fragment, if any.
    pub fn finish(&mut self) -> Option<String> {
        let rest = std::mem::take(&mut self.buf);
        let rest = rest.trim();
        (!rest.is_empty()).then(|| rest.to_string())
    }
}

/// Segments a complete text.
pub fn segment_text(text: &str) -> Vec<String> {
    let mut seg = StreamSegmenter::new();
    let mut out = seg.push(text);
    out.extend(seg.finish());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_sentences() {
        assert_eq!(
            segment_text("It is Everest. It stands at 8849 m."),
            vec!["It is Everest.", "It stands at 8849 m."]
        );
    }

    #[test]
    fn flush_on_close() {
        let mut s = StreamSegmenter::new();
        assert!(s.push("Located in Nepal").is_empty());
        assert_eq!(s.finish().as_deref(), Some("Located in Nepal"));
        assert_eq!(s.finish(), None);
    }

    #[test]
    fn incremental_split_point() {
        let mut s = StreamSegmenter::new();
        let mut out = s.push("It is Ev");
        out.extend(s.push("erest. Done."));
        out.extend(s.finish());
        assert_eq!(out, vec!["It is Everest.", "Done."]);
    }

    #[test]
    fn punctuation_needs_whitespace() {
        assert_eq!(segment_text("v1.2 is out!Really? Yes"), vec!["v1.2 is out!Really?", "Yes"]);
        let mut s = StreamSegmenter::new();
        assert!(s.push("Wait.").is_empty());
        assert_eq!(s.push("\nNext"), vec!["Wait."]);
    }

    #[test]
    fn whitespace_only_is_dropped() {
        assert!(segment_text("   \n ").is_empty());
        assert_eq!(segment_text("A.   B."), vec!["A.", "B."]);
    }

    fn normalize(s: &str) -> String {
        s.split_whitespace().collect::<Vec<_>>().join(" ")
    }

    proptest! {
        #[test]
        fn split_points_do_not_matter(
            text in "[a-zA-Z0-9 .!?\n]{0,80}",
            cuts in proptest::collection::vec(0usize..80, 0..6),
        ) {
            let whole = segment_text(&text);
            let mut cuts: Vec<usize> = cuts.into_iter().filter(|&c| c <= text.len()).collect();
            cuts.sort_unstable();
            let mut s = StreamSegmenter::new();
            let mut out = Vec::new();
            let mut prev = 0;
            for c in cuts {
                out.extend(s.push(&text[prev..c]));
                prev = c;
            }
            out.extend(s.push(&text[prev..]));
            out.extend(s.finish());
            prop_assert_eq!(&out, &whole);
            prop_assert!(out.iter().all(|c| !c.trim().is_empty()));
            prop_assert_eq!(normalize(&out.join(" ")), normalize(&text));
        }
    }
}
