use pixdial_tensor::rng::{stream_rng, Stream};

use super::conllu::Sentence;
use crate::error::Result;
use crate::render::Perturber;

/// Copies `sentences` with every token form perturbed; annotations, comments
/// and raw lines are untouched. A form perturbed away entirely keeps its
/// first character so each token stays renderable.
pub fn make_dialect_eval(sentences: &[Sentence], rate: f64, seed: u64) -> Result<Vec<Sentence>> {
    let perturber = Perturber::default();
    let mut rng = stream_rng(seed, Stream::Perturb);
    let mut out = sentences.to_vec();
    for sentence in &mut out {
        for token in &mut sentence.tokens {
            let form = perturber.perturb(&token.form, rate, &mut rng)?;
            token.form = if form.is_empty() {
                token.form.chars().next().map(String::from).unwrap_or_default()
            } else {
                form
            };
        }
    }
    Ok(out)
}
