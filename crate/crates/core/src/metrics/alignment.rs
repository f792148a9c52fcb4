use crate::error::Result;
use crate::gridworld::{Observation, SymbolicImage};
use crate::refgame::RefGame;
use crate::vocab::{TokenId, Vocabulary, EOS};
use serde::{Deserialize, Serialize};

/// Alignment accuracies in percent over `samples` evaluated messages.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub samples: usize,
    pub skipped: usize,
    pub any_colour: f64,
    pub any_shape: f64,
    pub all_colour: f64,
    pub all_shape: f64,
    pub any_object: f64,
    pub all_object: f64,
}

impl AlignmentReport {
    pub fn entries(&self) -> [(&'static str, f64); 6] {
        [
            ("any_colour", self.any_colour),
            ("any_shape", self.any_shape),
            ("all_colour", self.all_colour),
            ("all_shape", self.all_shape),
            ("any_object", self.any_object),
            ("all_object", self.all_object),
        ]
    }

    /// `any_X ≥ all_X` for every attribute.
    pub fn dominance_holds(&self) -> bool {
        self.any_colour >= self.all_colour && self.any_shape >= self.all_shape && self.any_object >= self.all_object
    }
}

/// A message paired with the symbolic view of the stimulus it describes.
#[derive(Debug, Clone)]
pub struct AlignmentSample<'a> {
    pub message: &'a [TokenId],
    pub view: Option<&'a SymbolicImage>,
}

/// Credit rules: `any_*` needs one visible attribute's token in the message;
/// `all_*` needs a non-empty visible set with every token present;
/// `*_object` applies the same to (colour, shape) token pairs.
pub fn alignment_report(samples: &[AlignmentSample<'_>], vocab: &Vocabulary) -> AlignmentReport {
    let mut counts = [0usize; 6];
    let mut evaluated = 0usize;
    let mut skipped = 0usize;
    for s in samples {
        let Some(view) = s.view else {
            skipped += 1;
            continue;
        };
        evaluated += 1;
        let end = s.message.iter().position(|&t| t == EOS).unwrap_or(s.message.len());
        let msg = &s.message[..end];
        let has = |t: TokenId| msg.contains(&t);
        let colours: Vec<TokenId> = view.visible_colours().iter().map(|c| vocab.colour(c.index())).collect();
        let shapes: Vec<TokenId> = view.visible_shapes().iter().map(|s| vocab.shape(s.index())).collect();
        let objects: Vec<(TokenId, TokenId)> = view
            .objects()
            .map(|(c, s)| (vocab.colour(c.index()), vocab.shape(s.index())))
            .collect();
        let object_hit = |&(c, s): &(TokenId, TokenId)| has(c) && has(s);
        let credit = [
            colours.iter().any(|&t| has(t)),
            shapes.iter().any(|&t| has(t)),
            !colours.is_empty() && colours.iter().all(|&t| has(t)),
            !shapes.is_empty() && shapes.iter().all(|&t| has(t)),
            objects.iter().any(object_hit),
            !objects.is_empty() && objects.iter().all(object_hit),
        ];
        for (c, hit) in counts.iter_mut().zip(credit) {
            *c += usize::from(hit);
        }
    }
    let pct = |c: usize| if evaluated == 0 { 0.0 } else { 100.0 * c as f64 / evaluated as f64 };
    AlignmentReport {
        samples: evaluated,
        skipped,
        any_colour: pct(counts[0]),
        any_shape: pct(counts[1]),
        all_colour: pct(counts[2]),
        all_shape: pct(counts[3]),
        any_object: pct(counts[4]),
        all_object: pct(counts[5]),
    }
}

/// Greedy speaker messages for `observations`, scored against their views.
pub fn speaker_alignment(game: &RefGame, observations: &[Observation], vocab: &Vocabulary) -> Result<AlignmentReport> {
    let mut messages = Vec::with_capacity(observations.len());
    for chunk in observations.chunks(64) {
        let inputs: Vec<Vec<f32>> = chunk.iter().map(|o| o.pixels()).collect::<Result<_>>()?;
        messages.extend(game.describe(&inputs)?);
    }
    let samples: Vec<AlignmentSample<'_>> = messages
        .iter()
        .zip(observations)
        .map(|(m, o)| AlignmentSample {
            message: m,
            view: Some(o.view()),
        })
        .collect();
    Ok(alignment_report(&samples, vocab))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{Colour, Shape, SymbolicCell};

    fn view(objects: &[(Colour, Shape)]) -> SymbolicImage {
        let mut v = SymbolicImage::empty();
        for (i, (c, s)) in objects.iter().enumerate() {
            v.set(
                i / 7,
                i % 7,
                SymbolicCell {
                    shape: s.index(),
                    colour: c.index(),
                    present: true,
                },
            );
        }
        v
    }

    #[test]
    fn oracle_speaker_scores_full_marks() {
        let vocab = Vocabulary::default();
        let views = [
            view(&[(Colour::Green, Shape::Key), (Colour::Red, Shape::Ball)]),
            view(&[(Colour::Blue, Shape::Box)]),
        ];
        let messages: Vec<Vec<TokenId>> = views
            .iter()
            .map(|v| v.objects().flat_map(|(c, s)| [vocab.colour(c.index()), vocab.shape(s.index())]).collect())
            .collect();
        let samples: Vec<_> = messages
            .iter()
            .zip(&views)
            .map(|(m, v)| AlignmentSample { message: m, view: Some(v) })
            .collect();
        let r = alignment_report(&samples, &vocab);
        for (_, v) in r.entries() {
            assert_eq!(v, 100.0);
        }
    }

    #[test]
    fn partial_messages_and_skips() {
        let vocab = Vocabulary::default();
        let v = view(&[(Colour::Green, Shape::Key), (Colour::Red, Shape::Ball)]);
        let empty = SymbolicImage::empty();
        // green + ball: one colour, one shape, no whole object
        let m1 = vec![vocab.colour(Colour::Green.index()), vocab.shape(Shape::Ball.index())];
        // tokens after EoS do not count
        let m2 = vec![EOS, vocab.colour(Colour::Green.index())];
        let samples = [
            AlignmentSample { message: &m1, view: Some(&v) },
            AlignmentSample { message: &m2, view: Some(&v) },
            AlignmentSample { message: &m1, view: Some(&empty) },
            AlignmentSample { message: &m1, view: None },
        ];
        let r = alignment_report(&samples, &vocab);
        assert_eq!((r.samples, r.skipped), (3, 1));
        assert!((r.any_colour - 100.0 / 3.0).abs() < 1e-9);
        assert!((r.any_shape - 100.0 / 3.0).abs() < 1e-9);
        assert_eq!(r.all_colour, 0.0);
        assert_eq!(r.any_object, 0.0);
        assert!(r.dominance_holds());
    }
}
