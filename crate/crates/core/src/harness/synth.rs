//! A small synthetic child-directed corpus with Zipfian word frequencies.

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const NOUNS: &[&str] = &[
    "ball", "dog", "baby", "book", "cat", "cup", "car", "milk", "juice", "shoe", "duck", "bear", "apple", "bird", "hat", "bed", "toy",
    "box", "fish", "cookie", "spoon", "truck", "chair", "door", "water", "sock", "train", "boat", "cow", "horse", "pig", "bunny",
    "banana", "cake", "bottle", "blanket", "table", "window", "flower", "tree", "moon", "sun", "frog", "bus", "doll", "puppy",
    "kitty", "hand", "nose", "bath",
];
pub const VERBS: &[&str] = &[
    "see", "want", "like", "get", "find", "eat", "push", "throw", "hold", "open", "wash", "hug", "read", "drink", "take", "kiss", "fix",
    "give",
];
pub const ADJECTIVES: &[&str] = &["big", "little", "red", "blue", "hot", "wet", "soft", "happy", "dirty", "yellow", "green", "funny", "cold", "pretty"];
pub const INTRANSITIVE: &[&str] = &["go", "run", "jump", "sleep", "sit", "play", "swim", "fly", "hide", "dance", "sing", "fall"];
pub const FUNCTION_WORDS: &[&str] = &[
    "the", "a", "is", "you", "it", "that", "this", "and", "to", "on", "in", "with", "do", "what", "where", "can", "at", "my", "your",
    "we", "no", "yes", "oh", "there", "here", "up", "down", "does", "say", "are", "let's", "look", "now", "some", "more", "over", "or",
    "then", "after", "if", "together", "for", "going", "please", "i", "think", "wants", "put", "did", "time",
];

/// `{N}` noun, `{V}` transitive verb, `{A}` adjective, `{I}` intransitive verb.
const TEMPLATES: &[(&str, f64)] = &[
    ("look at the {A} {N} on the {N} over there", 4.0),
    ("do you want the {N} or the {N}", 4.0),
    ("can you {V} the {N} and give it to the {N}", 3.0),
    ("the {A} {N} wants to {I} with the {N}", 3.0),
    ("let's {V} the {N} and then we can {I}", 3.0),
    ("where did you put the {A} {N} this time", 2.0),
    ("oh no the {N} is {A} let's {V} it now", 2.0),
    ("that is a {A} {N} and this is a {A} {N}", 3.0),
    ("we can {V} the {N} after we {I}", 2.0),
    ("do you see the {N} {I} in the {N}", 3.0),
    ("is that your {N} or is it my {N}", 2.0),
    ("you can {V} the {A} {N} if you want", 3.0),
    ("the {N} and the {N} can {I} together", 2.0),
    ("here is a {A} {N} for you to {V}", 2.0),
    ("look the {N} is going to {I} now", 3.0),
    ("what does the {A} {N} say to the {N}", 2.0),
    ("yes you can {V} the {N} with your {N}", 2.0),
    ("there is a {N} up there on the {N}", 2.0),
    ("let's {I} and then {V} the {A} {N}", 2.0),
    ("do you want to {V} the {N} now", 4.0),
    ("the {N} is {A} and the {N} is {A}", 2.0),
    ("can the {N} {I} like the {N}", 2.0),
    ("put the {N} in the {N} please", 2.0),
    ("i think the {N} wants some more {N}", 2.0),
];

struct Zipf<'a> {
    words: &'a [&'a str],
    dist: WeightedIndex<f64>,
}

impl<'a> Zipf<'a> {
    fn new(words: &'a [&'a str], s: f64) -> Self {
        let w: Vec<f64> = (1..=words.len()).map(|r| (r as f64).powf(-s)).collect();
        Self { words, dist: WeightedIndex::new(w).expect("non-empty lexicon") }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> &'a str {
        self.words[self.dist.sample(rng)]
    }
}

/// `n` sentences, one per line, lowercase without punctuation.
pub fn generate_corpus(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let templates = WeightedIndex::new(TEMPLATES.iter().map(|t| t.1)).expect("weights");
    let nouns = Zipf::new(NOUNS, 1.0);
    let verbs = Zipf::new(VERBS, 0.9);
    let adjs = Zipf::new(ADJECTIVES, 0.9);
    let intr = Zipf::new(INTRANSITIVE, 0.9);
    (0..n)
        .map(|_| {
            let t = TEMPLATES[templates.sample(&mut rng)].0;
            t.split(' ')
                .map(|tok| match tok {
                    "{N}" => nouns.draw(&mut rng),
                    "{V}" => verbs.draw(&mut rng),
                    "{A}" => adjs.draw(&mut rng),
                    "{I}" => intr.draw(&mut rng),
                    w => w,
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

/// `word category` lines for every lexicon word.
pub fn pos_map_text() -> String {
    let mut out = String::from("# word category\n");
    for (words, cat) in [(NOUNS, "noun"), (VERBS, "predicate"), (ADJECTIVES, "predicate"), (INTRANSITIVE, "predicate"), (FUNCTION_WORDS, "function")] {
        for w in words {
            out.push_str(&format!("{w} {cat}\n"));
        }
    }
    out
}
