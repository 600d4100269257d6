//! Seeded template grammar producing small German-like corpora with gold
//! UPOS tags and dependency trees. The output is a test fixture, not a
//! linguistic resource.

use std::path::Path;

use pixdial_tensor::rng::{stream_rng, SeededRng, Stream};
use rand::seq::SliceRandom;
use rand::Rng;

use super::classification::{serialize_tsv, LabeledText};
use super::conllu::{serialize_conllu, Sentence, Token, Upos};
use crate::error::{Error, Result};

/// Version tag of the fixture set; bump when the grammar changes.
pub const FIXTURE_VERSION: &str = "v1";

#[derive(Clone, Copy)]
enum Gender {
    M,
    F,
    N,
}

struct Noun {
    form: &'static str,
    gender: Gender,
}

const fn n(form: &'static str, gender: Gender) -> Noun {
    Noun { form, gender }
}

const NOUNS: &[Noun] = &[
    n("Hund", Gender::M),
    n("Mann", Gender::M),
    n("Bäcker", Gender::M),
    n("Lehrer", Gender::M),
    n("Garten", Gender::M),
    n("Bahnhof", Gender::M),
    n("Zug", Gender::M),
    n("Apfel", Gender::M),
    n("Katze", Gender::F),
    n("Frau", Gender::F),
    n("Stadt", Gender::F),
    n("Straße", Gender::F),
    n("Schule", Gender::F),
    n("Blume", Gender::F),
    n("Küche", Gender::F),
    n("Kind", Gender::N),
    n("Haus", Gender::N),
    n("Buch", Gender::N),
    n("Brot", Gender::N),
    n("Mädchen", Gender::N),
    n("Fenster", Gender::N),
    n("Dorf", Gender::N),
];

const PLURALS: &[&str] = &["Kinder", "Hunde", "Katzen", "Frauen", "Männer", "Äpfel", "Bücher", "Blumen"];
const ADJECTIVES: &[&str] = &["alt", "klein", "groß", "schön", "müde", "neu", "rot", "grün", "lustig", "süß"];
const TRANSITIVE: &[(&str, &str)] = &[
    ("sieht", "gesehen"),
    ("kauft", "gekauft"),
    ("liest", "gelesen"),
    ("sucht", "gesucht"),
    ("findet", "gefunden"),
    ("hört", "gehört"),
    ("bringt", "gebracht"),
    ("öffnet", "geöffnet"),
    ("malt", "gemalt"),
    ("mag", "gemocht"),
];
const INTRANSITIVE: &[(&str, &str)] = &[
    ("schläft", "schlafen"),
    ("läuft", "laufen"),
    ("wartet", "warten"),
    ("spielt", "spielen"),
    ("lacht", "lachen"),
    ("singt", "singen"),
    ("arbeitet", "arbeiten"),
    ("wohnt", "wohnen"),
];
const PRONOUNS: &[&str] = &["er", "sie", "es", "man"];
const NAMES: &[&str] = &["Anna", "Max", "Maria", "Paul", "Jonas", "Lena"];
const ADVERBS: &[&str] = &["heute", "gern", "oft", "dort", "morgen", "immer", "schnell"];
const PREPOSITIONS: &[&str] = &["in", "mit", "bei", "von", "aus", "neben"];
const NUMERALS: &[&str] = &["zwei", "drei", "vier", "fünf", "sechs"];
const SAY_VERBS: &[&str] = &["sagt", "glaubt", "weiß", "hofft"];
const SCONJS: &[&str] = &["dass", "weil", "ob"];
const CCONJS: &[&str] = &["und", "oder"];
const INTERJECTIONS: &[&str] = &["ja", "nein", "ach", "oh"];
const FOREIGN: &[&str] = &["okay", "sorry", "cool"];

fn pick<'a, T>(rng: &mut SeededRng, items: &'a [T]) -> &'a T {
    items.choose(rng).expect("non-empty lexicon")
}

fn article(g: Gender, case: Case) -> &'static str {
    match (g, case) {
        (Gender::M, Case::Nom) => "der",
        (Gender::M, Case::Acc) => "den",
        (Gender::M, Case::Dat) => "dem",
        (Gender::F, Case::Dat) => "der",
        (Gender::F, _) => "die",
        (Gender::N, Case::Dat) => "dem",
        (Gender::N, _) => "das",
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Case {
    Nom,
    Acc,
    Dat,
}

fn attributive(adj: &str, g: Gender, case: Case) -> String {
    let strong = matches!((g, case), (Gender::M, Case::Acc)) || case == Case::Dat;
    format!("{adj}{}", if strong { "en" } else { "e" })
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Sentence under construction; heads are 1-based, 0 for the root.
#[derive(Default)]
struct Builder {
    words: Vec<(String, Upos, usize, &'static str)>,
}

impl Builder {
    fn push(&mut self, form: impl Into<String>, upos: Upos, head: usize, rel: &'static str) -> usize {
        self.words.push((form.into(), upos, head, rel));
        self.words.len()
    }

    fn next_id(&self) -> usize {
        self.words.len() + 1
    }

    fn set_head(&mut self, id: usize, head: usize) {
        self.words[id - 1].2 = head;
    }

    /// Noun phrase with optional adjective; returns the noun's id. The noun's
    /// head is set later by the caller via `set_head`.
    fn noun_phrase(&mut self, rng: &mut SeededRng, case: Case, adj_prob: f64) -> usize {
        let noun = pick(rng, NOUNS);
        let det = self.next_id();
        let with_adj = rng.gen_bool(adj_prob);
        let noun_id = det + 1 + usize::from(with_adj);
        self.push(article(noun.gender, case), Upos::Det, noun_id, "det");
        if with_adj {
            let adj = attributive(pick(rng, ADJECTIVES), noun.gender, case);
            self.push(adj, Upos::Adj, noun_id, "amod");
        }
        self.push(noun.form, Upos::Noun, 0, "_")
    }

    fn subject(&mut self, rng: &mut SeededRng) -> usize {
        match rng.gen_range(0..3) {
            0 => self.push(*pick(rng, NAMES), Upos::Propn, 0, "nsubj"),
            1 => self.push(*pick(rng, PRONOUNS), Upos::Pron, 0, "nsubj"),
            _ => {
                let id = self.noun_phrase(rng, Case::Nom, 0.4);
                self.words[id - 1].3 = "nsubj";
                id
            }
        }
    }

    /// Capitalizes the first word; lemmas keep the uncapitalized form.
    fn finish(self) -> Sentence {
        let tokens = self
            .words
            .into_iter()
            .enumerate()
            .map(|(i, (lemma, upos, head, rel))| {
                let form = if i == 0 { capitalize(&lemma) } else { lemma.clone() };
                let mut t = Token::annotated(i + 1, &form, upos, head, rel);
                t.lemma = lemma;
                t
            })
            .collect();
        Sentence::new(tokens)
    }
}

fn transitive(rng: &mut SeededRng) -> Builder {
    let mut b = Builder::default();
    let subj = b.subject(rng);
    let verb = b.push(pick(rng, TRANSITIVE).0, Upos::Verb, 0, "root");
    b.set_head(subj, verb);
    let obj = b.noun_phrase(rng, Case::Acc, 0.3);
    b.words[obj - 1].3 = "obj";
    b.set_head(obj, verb);
    if rng.gen_bool(0.4) {
        b.push(*pick(rng, ADVERBS), Upos::Adv, verb, "advmod");
    }
    b.push(".", Upos::Punct, verb, "punct");
    b
}

fn prepositional(rng: &mut SeededRng) -> Builder {
    let mut b = Builder::default();
    let subj = b.subject(rng);
    let verb = b.push(pick(rng, INTRANSITIVE).0, Upos::Verb, 0, "root");
    b.set_head(subj, verb);
    if rng.gen_bool(0.3) {
        b.push(*pick(rng, ADVERBS), Upos::Adv, verb, "advmod");
    }
    let case = b.push(*pick(rng, PREPOSITIONS), Upos::Adp, 0, "case");
    let noun = b.noun_phrase(rng, Case::Dat, 0.2);
    b.words[noun - 1].3 = "obl";
    b.set_head(noun, verb);
    b.set_head(case, noun);
    b.push(".", Upos::Punct, verb, "punct");
    b
}

fn copula(rng: &mut SeededRng) -> Builder {
    let mut b = Builder::default();
    let subj = b.subject(rng);
    let cop = b.push("ist", Upos::Aux, 0, "cop");
    let adv = rng.gen_bool(0.4).then(|| b.push("sehr", Upos::Adv, 0, "advmod"));
    let adj = b.push(*pick(rng, ADJECTIVES), Upos::Adj, 0, "root");
    b.set_head(subj, adj);
    b.set_head(cop, adj);
    if let Some(a) = adv {
        b.set_head(a, adj);
    }
    b.push(".", Upos::Punct, adj, "punct");
    b
}

fn coordination(rng: &mut SeededRng) -> Builder {
    let mut b = Builder::default();
    let first = b.push(*pick(rng, NAMES), Upos::Propn, 0, "nsubj");
    let cc = b.push(*pick(rng, CCONJS), Upos::Cconj, 0, "cc");
    let second = b.push(*pick(rng, NAMES), Upos::Propn, first, "conj");
    b.set_head(cc, second);
    let verb = b.push(pick(rng, INTRANSITIVE).1, Upos::Verb, 0, "root");
    b.set_head(first, verb);
    if rng.gen_bool(0.5) {
        b.push(*pick(rng, ADVERBS), Upos::Adv, verb, "advmod");
    }
    b.push(".", Upos::Punct, verb, "punct");
    b
}

fn perfect_negated(rng: &mut SeededRng) -> Builder {
    let mut b = Builder::default();
    let subj = b.subject(rng);
    let aux = b.push("hat", Upos::Aux, 0, "aux");
    let obj = b.noun_phrase(rng, Case::Acc, 0.2);
    b.words[obj - 1].3 = "obj";
    let neg = rng.gen_bool(0.6).then(|| b.push("nicht", Upos::Part, 0, "advmod"));
    let verb = b.push(pick(rng, TRANSITIVE).1, Upos::Verb, 0, "root");
    for id in [subj, aux, obj] {
        b.set_head(id, verb);
    }
    if let Some(n) = neg {
        b.set_head(n, verb);
    }
    b.push(".", Upos::Punct, verb, "punct");
    b
}

fn subordinate(rng: &mut SeededRng) -> Builder {
    let mut b = Builder::default();
    let subj = b.push(*pick(rng, PRONOUNS), Upos::Pron, 0, "nsubj");
    let main = b.push(*pick(rng, SAY_VERBS), Upos::Verb, 0, "root");
    b.set_head(subj, main);
    let comma = b.push(",", Upos::Punct, 0, "punct");
    let mark = b.push(*pick(rng, SCONJS), Upos::Sconj, 0, "mark");
    let inner_subj = b.noun_phrase(rng, Case::Nom, 0.3);
    b.words[inner_subj - 1].3 = "nsubj";
    let inner = b.push(pick(rng, INTRANSITIVE).0, Upos::Verb, main, "ccomp");
    for id in [comma, mark, inner_subj] {
        b.set_head(id, inner);
    }
    b.push(".", Upos::Punct, main, "punct");
    b
}

fn interjection(rng: &mut SeededRng) -> Builder {
    let mut b = Builder::default();
    let intj = b.push(*pick(rng, INTERJECTIONS), Upos::Intj, 0, "discourse");
    let comma = b.push(",", Upos::Punct, 0, "punct");
    let subj = b.subject(rng);
    let cop = b.push("ist", Upos::Aux, 0, "cop");
    let adj = b.push(*pick(rng, ADJECTIVES), Upos::Adj, 0, "root");
    for id in [intj, comma, subj, cop] {
        b.set_head(id, adj);
    }
    b.push("!", Upos::Punct, adj, "punct");
    b
}

fn numeral(rng: &mut SeededRng) -> Builder {
    let mut b = Builder::default();
    b.push(*pick(rng, NUMERALS), Upos::Num, 2, "nummod");
    let noun = b.push(*pick(rng, PLURALS), Upos::Noun, 0, "nsubj");
    let verb = b.push(pick(rng, INTRANSITIVE).1, Upos::Verb, 0, "root");
    b.set_head(noun, verb);
    b.push(".", Upos::Punct, verb, "punct");
    b
}

fn percent(rng: &mut SeededRng) -> Builder {
    let mut b = Builder::default();
    let subj = b.noun_phrase(rng, Case::Nom, 0.0);
    b.words[subj - 1].3 = "nsubj";
    let verb = b.push(*pick(rng, &["steigt", "fällt", "wächst"]), Upos::Verb, 0, "root");
    b.set_head(subj, verb);
    let case = b.push("um", Upos::Adp, 0, "case");
    let num = b.push(rng.gen_range(2..40).to_string(), Upos::Num, 0, "nummod");
    let sym = b.push("%", Upos::Sym, verb, "obl");
    b.set_head(case, sym);
    b.set_head(num, sym);
    b.push(".", Upos::Punct, verb, "punct");
    b
}

fn question(rng: &mut SeededRng) -> Builder {
    let mut b = Builder::default();
    let verb = b.push(pick(rng, TRANSITIVE).0, Upos::Verb, 0, "root");
    b.push(*pick(rng, NAMES), Upos::Propn, verb, "nsubj");
    let obj = b.noun_phrase(rng, Case::Acc, 0.3);
    b.words[obj - 1].3 = "obj";
    b.set_head(obj, verb);
    b.push("?", Upos::Punct, verb, "punct");
    b
}

fn foreign(rng: &mut SeededRng) -> Builder {
    let mut b = Builder::default();
    let subj = b.push(*pick(rng, NAMES), Upos::Propn, 0, "nsubj");
    let verb = b.push("sagt", Upos::Verb, 0, "root");
    b.set_head(subj, verb);
    b.push(*pick(rng, FOREIGN), Upos::X, verb, "obj");
    b.push(".", Upos::Punct, verb, "punct");
    b
}

type Template = fn(&mut SeededRng) -> Builder;

const TEMPLATES: &[(Template, u32)] = &[
    (transitive, 6),
    (prepositional, 5),
    (copula, 4),
    (coordination, 3),
    (perfect_negated, 4),
    (subordinate, 3),
    (interjection, 2),
    (numeral, 2),
    (percent, 1),
    (question, 2),
    (foreign, 1),
];

fn sentence(rng: &mut SeededRng) -> Sentence {
    let total: u32 = TEMPLATES.iter().map(|t| t.1).sum();
    let mut draw = rng.gen_range(0..total);
    for (template, weight) in TEMPLATES {
        if draw < *weight {
            return template(rng).finish();
        }
        draw -= weight;
    }
    unreachable!("weights cover the draw")
}

/// `count` annotated sentences with `# sent_id` and `# text` comments.
pub fn generate_treebank(count: usize, seed: u64, prefix: &str) -> Vec<Sentence> {
    let mut rng = stream_rng(seed, Stream::Synthetic);
    (0..count)
        .map(|i| {
            let mut s = sentence(&mut rng);
            s.comments = vec![format!("# sent_id = {prefix}-{}", i + 1), format!("# text = {}", s.text())];
            s
        })
        .collect()
}

/// Plain text lines for pretraining.
pub fn generate_corpus(count: usize, seed: u64) -> Vec<String> {
    let mut rng = stream_rng(seed, Stream::Synthetic);
    (0..count).map(|_| sentence(&mut rng).text()).collect()
}

const TOPICS: &[(&str, &[&str], &[&str])] = &[
    (
        "essen",
        &["Brot", "Kuchen", "Suppe", "Käse", "Apfel", "Brötchen"],
        &["schmeckt gut", "ist frisch", "ist süß", "liegt auf dem Tisch"],
    ),
    (
        "reise",
        &["Zug", "Bahnhof", "Flughafen", "Koffer", "Ticket", "Hotel"],
        &["ist voll", "kommt später", "liegt weit weg", "ist teuer"],
    ),
    (
        "wetter",
        &["Regen", "Wind", "Schnee", "Sonne", "Himmel", "Nebel"],
        &["ist heute stark", "kommt morgen", "bleibt lange", "ist schön"],
    ),
];

/// Topic-labelled sentences; the topic decides the vocabulary.
pub fn generate_topics(count: usize, seed: u64) -> Vec<LabeledText> {
    let mut rng = stream_rng(seed, Stream::Synthetic);
    (0..count)
        .map(|_| {
            let (label, nouns, rests) = pick(&mut rng, TOPICS);
            let opener = *pick(&mut rng, &["Der", "Dieser", "Unser", "Ein"]);
            let text = format!("{opener} {} {} .", pick(&mut rng, nouns), pick(&mut rng, rests));
            LabeledText {
                text,
                label: label.to_string(),
                variety: "standard".into(),
            }
        })
        .collect()
}

/// File name → contents for the shipped fixture set.
pub fn fixture_files() -> Result<Vec<(&'static str, String)>> {
    Ok(vec![
        ("overfit.conllu", serialize_conllu(&generate_treebank(32, 4, "overfit"))?),
        ("train.conllu", serialize_conllu(&generate_treebank(200, 1, "train"))?),
        ("dev.conllu", serialize_conllu(&generate_treebank(50, 2, "dev"))?),
        ("test.conllu", serialize_conllu(&generate_treebank(100, 3, "test"))?),
        ("corpus.txt", generate_corpus(1000, 5).join("\n") + "\n"),
        ("topics.tsv", serialize_tsv(&generate_topics(150, 6))),
    ])
}

pub fn write_fixtures(dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, contents) in fixture_files()? {
        let path = dir.join(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::conllu::parse_conllu;

    #[test]
    fn sentences_are_valid_trees() {
        for s in generate_treebank(500, 11, "t") {
            s.validate().unwrap_or_else(|e| panic!("{}: {e}", s.text()));
            assert!(s.has_tree() && s.has_upos());
        }
    }

    #[test]
    fn deterministic_and_round_trips() {
        let a = serialize_conllu(&generate_treebank(20, 3, "x")).unwrap();
        assert_eq!(a, serialize_conllu(&generate_treebank(20, 3, "x")).unwrap());
        assert_eq!(serialize_conllu(&parse_conllu(&a).unwrap()).unwrap(), a);
    }

    #[test]
    fn covers_every_upos_tag() {
        let bank = generate_treebank(500, 1, "t");
        for tag in Upos::ALL {
            assert!(bank.iter().flat_map(|s| &s.tokens).any(|t| t.upos == Some(tag)), "{tag}");
        }
    }

    #[test]
    fn topics_are_labelled() {
        let rows = generate_topics(30, 0);
        assert!(rows.iter().all(|r| ["essen", "reise", "wetter"].contains(&r.label.as_str())));
    }
}
