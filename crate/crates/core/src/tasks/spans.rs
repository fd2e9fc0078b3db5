use crate::metrics::Span;

/// Maximal runs of equal non-background tags.
pub fn spans_from_frames(tags: &[usize]) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut t = 0;
    while t < tags.len() {
        let tag = tags[t];
        let start = t;
        while t < tags.len() && tags[t] == tag {
            t += 1;
        }
        if tag != 0 {
            spans.push(Span { tag, start, end: t });
        }
    }
    spans
}

/// Frame tags of length `len` with `spans` painted over background.
pub fn frames_from_spans(spans: &[Span], len: usize) -> Vec<usize> {
    let mut tags = vec![0; len];
    for s in spans {
        for t in &mut tags[s.start..s.end.min(len)] {
            *t = s.tag;
        }
    }
    tags
}
