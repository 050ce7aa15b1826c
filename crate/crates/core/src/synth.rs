//! Synthetic traces with known geometry.
//!
//! These stand in for extractor output in fixtures and tests: a sample is
//! tokenized into words, every token is given a 2D trajectory across the
//! layers that mimics the four observed phases, and the trajectory is
//! embedded into a random 2-frame of the hidden space with isotropic noise.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::annotate::{assign_categories, find_supporting_sentence, Category};
use crate::linalg::Matrix;
use crate::projection::Point;
use crate::trace::{
    encode_trace, Dtype, HiddenStateTrace, Prediction, Segment, TokenRecord, TraceError, TraceManifest, MAX_TOKENS,
};

#[derive(Debug, Clone, PartialEq)]
pub struct SampleText {
    pub question: String,
    pub context: String,
    /// Gold answer; also used as the synthetic prediction.
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelShape {
    pub model_name: String,
    pub num_layers: usize,
    pub hidden_size: usize,
    pub includes_embedding_layer: bool,
}

impl ModelShape {
    pub fn base() -> Self {
        Self {
            model_name: "bert-base-uncased (synthetic)".into(),
            num_layers: 12,
            hidden_size: 768,
            includes_embedding_layer: true,
        }
    }

    pub fn large() -> Self {
        Self {
            model_name: "bert-large-uncased (synthetic)".into(),
            num_layers: 24,
            hidden_size: 1024,
            includes_embedding_layer: true,
        }
    }

    pub fn tiny(num_layers: usize, hidden_size: usize) -> Self {
        Self {
            model_name: "tiny (synthetic)".into(),
            num_layers,
            hidden_size,
            includes_embedding_layer: true,
        }
    }
}

fn word_tokens(text: &str, segment: Segment, out: &mut Vec<TokenRecord>) {
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_alphanumeric() {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '\'') {
                i += 1;
            }
            out.push(TokenRecord::span(
                chars[start..i].iter().collect::<String>(),
                segment,
                start,
                i,
            ));
        } else {
            out.push(TokenRecord::span(c.to_string(), segment, i, i + 1));
            i += 1;
        }
    }
}

/// `[CLS] question [SEP] context [SEP]`, split into words and punctuation.
/// Context tokens beyond the 512 token limit are dropped.
pub fn tokenize(question: &str, context: &str) -> Vec<TokenRecord> {
    let mut tokens = vec![TokenRecord::special("[CLS]")];
    word_tokens(question, Segment::Question, &mut tokens);
    tokens.push(TokenRecord::special("[SEP]"));
    let mut ctx = Vec::new();
    word_tokens(context, Segment::Context, &mut ctx);
    ctx.truncate(MAX_TOKENS.saturating_sub(tokens.len() + 1));
    tokens.extend(ctx);
    tokens.push(TokenRecord::special("[SEP]"));
    tokens
}

/// Token span of the first case-insensitive match of `answer` among the
/// context tokens.
fn locate_answer(tokens: &[TokenRecord], context: &str, answer: &str) -> Option<Prediction> {
    let mut wanted = Vec::new();
    word_tokens(answer, Segment::Context, &mut wanted);
    if wanted.is_empty() {
        return None;
    }
    let wanted: Vec<String> = wanted.iter().map(|t| t.text.to_lowercase()).collect();
    let start = (0..tokens.len()).find(|&s| {
        s + wanted.len() <= tokens.len()
            && tokens[s..s + wanted.len()]
                .iter()
                .zip(&wanted)
                .all(|(t, w)| t.segment == Segment::Context && t.text.to_lowercase() == *w)
    })?;
    let end = start + wanted.len() - 1;
    let (cs, ce) = (tokens[start].char_start?, tokens[end].char_end?);
    Some(Prediction {
        answer_start_token: start,
        answer_end_token: end,
        answer_text: context.chars().skip(cs).take(ce - cs).collect(),
    })
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

fn lerp(a: Point, b: Point, t: f64) -> Point {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t]
}

fn topic_anchor(word: &str) -> Point {
    let mut h = DefaultHasher::new();
    word.to_lowercase().hash(&mut h);
    let angle = (h.finish() % 3600) as f64 * std::f64::consts::PI / 1800.0;
    [4.0 * angle.cos(), 4.0 * angle.sin()]
}

/// Embeds 2D layers into `hidden_size` dims through a random orthonormal
/// 2-frame plus a per-layer offset. With `noise > 0`, isotropic Gaussian noise
/// of that standard deviation is added to every entry.
pub fn embed_layers(layers: &[Vec<Point>], hidden_size: usize, noise: f64, seed: u64) -> Vec<Matrix<f32>> {
    assert!(hidden_size >= 2, "need at least two hidden dims");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaussian = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    let mut e1: Vec<f64> = (0..hidden_size).map(|_| gaussian(&mut rng)).collect();
    let n1 = e1.iter().map(|x| x * x).sum::<f64>().sqrt();
    e1.iter_mut().for_each(|x| *x /= n1);
    let mut e2: Vec<f64> = (0..hidden_size).map(|_| gaussian(&mut rng)).collect();
    let dot: f64 = e1.iter().zip(&e2).map(|(a, b)| a * b).sum();
    e2.iter_mut().zip(&e1).for_each(|(x, a)| *x -= dot * a);
    let n2 = e2.iter().map(|x| x * x).sum::<f64>().sqrt();
    e2.iter_mut().for_each(|x| *x /= n2);

    layers
        .iter()
        .map(|points| {
            let offset: Vec<f64> = (0..hidden_size).map(|_| 0.5 * gaussian(&mut rng)).collect();
            let mut data = Vec::with_capacity(points.len() * hidden_size);
            for p in points {
                for j in 0..hidden_size {
                    let mut v = offset[j] + p[0] * e1[j] + p[1] * e2[j];
                    if noise > 0.0 {
                        v += noise * gaussian(&mut rng);
                    }
                    data.push(v as f32);
                }
            }
            Matrix::from_vec(points.len(), hidden_size, data)
        })
        .collect()
}

/// Builds a trace whose layers walk through the four phases: topical
/// clusters, context consolidation, question/fact convergence, and finally
/// answer separation.
pub fn build_trace(sample: &SampleText, shape: &ModelShape, seed: u64) -> Result<HiddenStateTrace, TraceError> {
    let tokens = tokenize(&sample.question, &sample.context);
    let prediction = locate_answer(&tokens, &sample.context, &sample.answer);
    let manifest = TraceManifest {
        model_name: shape.model_name.clone(),
        num_layers: shape.num_layers,
        hidden_size: shape.hidden_size,
        stored_layers: shape.num_layers + usize::from(shape.includes_embedding_layer),
        includes_embedding_layer: shape.includes_embedding_layer,
        num_tokens: tokens.len(),
        tokens,
        prediction,
        gold_answer_text: Some(sample.answer.clone()).filter(|a| !a.is_empty()),
        question_text: Some(sample.question.clone()),
        context_text: Some(sample.context.clone()),
        task: None,
        dtype: Dtype::F32Le,
    };
    let span = find_supporting_sentence(&sample.context, &sample.answer);
    let categories = assign_categories(&manifest, span).categories;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter: Vec<Point> = (0..manifest.num_tokens)
        .map(|_| {
            let x: f64 = StandardNormal.sample(&mut rng);
            let y: f64 = StandardNormal.sample(&mut rng);
            [0.35 * x, 0.35 * y]
        })
        .collect();

    let matched = [3.0, 3.0];
    let context_home = [-5.0, 1.0];
    let answer_home = [12.0, -2.0];
    let first_block = usize::from(!shape.includes_embedding_layer);
    let layers: Vec<Vec<Point>> = (first_block..=shape.num_layers)
        .map(|block| {
            let progress = block as f64 / shape.num_layers as f64;
            let w_context = smoothstep((progress - 0.2) / 0.4);
            let w_match = smoothstep((progress - 0.4) / 0.3);
            let w_answer = smoothstep((progress - 0.75) / 0.2);
            let scale = 1.0 + progress;
            manifest
                .tokens
                .iter()
                .zip(&categories)
                .zip(&jitter)
                .map(|((tok, cat), j)| {
                    let topical = topic_anchor(&tok.text);
                    let base = match (tok.segment, cat) {
                        (Segment::Special, _) => lerp(topical, [0.0, -6.0], w_context),
                        (_, Category::Context) => lerp(topical, context_home, w_context),
                        (_, Category::Answer) => lerp(lerp(topical, matched, w_match), answer_home, w_answer),
                        _ => lerp(topical, matched, w_match),
                    };
                    let wobble: f64 = rng.random_range(-0.15..0.15);
                    [scale * (base[0] + j[0] + wobble), scale * (base[1] + j[1] - wobble)]
                })
                .collect()
        })
        .collect();

    let hidden = embed_layers(&layers, shape.hidden_size, 0.02, seed ^ 0x9e37_79b9);
    HiddenStateTrace::new(manifest, hidden)
}

/// Minimal phase geometry with exact, noise-free layers: question tokens
/// approach the supporting fact linearly from `distance` to 0 over the first
/// three quarters of the blocks, and the answer leaves the fact in the last
/// quarter. Context and special tokens stay on a fixed ring.
pub fn converging_trace(shape: &ModelShape, distance: f64, seed: u64) -> Result<HiddenStateTrace, TraceError> {
    let sample = SampleText {
        question: "Where is the football?".into(),
        context: "Mary went to the garden. Sandra went back to the office. John dropped the football in the kitchen. Daniel travelled to the hallway.".into(),
        answer: "kitchen".into(),
    };
    let mut trace = build_trace(&sample, shape, seed)?;
    let span = find_supporting_sentence(&sample.context, &sample.answer);
    let categories = assign_categories(&trace.manifest, span).categories;

    let n = categories.len();
    let l = shape.num_layers as f64;
    let meet = (0.75 * l).ceil();
    let first_block = usize::from(!shape.includes_embedding_layer);
    let offset = |i: usize, r: f64| {
        let a = i as f64 * 2.399_963;
        [r * a.cos(), r * a.sin()]
    };
    let layers: Vec<Vec<Point>> = (first_block..=shape.num_layers)
        .map(|block| {
            let b = block as f64;
            let gap = distance * (1.0 - b / meet).max(0.0);
            let escape = 3.0 * distance * ((b - meet) / (l - meet).max(1.0)).max(0.0);
            (0..n)
                .map(|i| {
                    let o = offset(i, 0.3);
                    match categories[i] {
                        Category::Question => [gap + o[0], o[1]],
                        Category::SupportingFact => o,
                        Category::Answer => [o[0], escape + o[1]],
                        Category::Context => {
                            let ring = offset(i, 8.0);
                            [ring[0] - 4.0, ring[1] - 4.0]
                        }
                    }
                })
                .collect()
        })
        .collect();
    trace.layers = embed_layers(&layers, shape.hidden_size, 0.0, seed);
    trace.validate()?;
    Ok(trace)
}

/// A valid trace with random shape, text and values, for round-trip and
/// fuzz testing. Values include signed zeros, subnormals and large
/// magnitudes so encoders cannot get away with lossy conversions.
pub fn random_trace(seed: u64, max_words: usize, max_layers: usize, max_hidden: usize) -> HiddenStateTrace {
    const WORDS: [&str; 12] = [
        "the", "garden", "Mary", "went", "to", "kitchen", "Zürich", "naïve", "42", "x", "\"q\"", "ok",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let text = |rng: &mut ChaCha8Rng, n: usize| {
        (0..n)
            .map(|_| WORDS[rng.random_range(0..WORDS.len())])
            .collect::<Vec<_>>()
            .join(" ")
            + "."
    };
    let n = rng.random_range(0..=max_words.min(8));
    let question = text(&mut rng, n);
    let n = rng.random_range(0..=max_words);
    let context = text(&mut rng, n);
    let tokens = if rng.random_bool(0.05) {
        vec![TokenRecord::special("[CLS]")]
    } else {
        tokenize(&question, &context)
    };
    let context_tokens: Vec<usize> = (0..tokens.len())
        .filter(|&i| tokens[i].segment == Segment::Context)
        .collect();
    let prediction = (!context_tokens.is_empty() && rng.random_bool(0.7)).then(|| {
        let a = rng.random_range(0..context_tokens.len());
        let b = rng.random_range(a..context_tokens.len().min(a + 4));
        let (start, end) = (context_tokens[a], context_tokens[b]);
        let (cs, ce) = (tokens[start].char_start.unwrap(), tokens[end].char_end.unwrap());
        Prediction {
            answer_start_token: start,
            answer_end_token: end,
            answer_text: context.chars().skip(cs).take(ce - cs).collect(),
        }
    });
    let num_layers = rng.random_range(1..=max_layers.max(1));
    let includes_embedding_layer = rng.random_bool(0.5);
    let hidden_size = rng.random_range(1..=max_hidden.max(1));
    let manifest = TraceManifest {
        model_name: format!("random-{seed}"),
        num_layers,
        hidden_size,
        stored_layers: num_layers + usize::from(includes_embedding_layer),
        includes_embedding_layer,
        num_tokens: tokens.len(),
        tokens,
        gold_answer_text: prediction
            .as_ref()
            .map(|p| p.answer_text.clone())
            .filter(|_| rng.random_bool(0.5)),
        prediction,
        question_text: Some(question),
        context_text: Some(context),
        task: rng.random_bool(0.5).then(|| "custom".to_string()),
        dtype: Dtype::F32Le,
    };
    let layers = (0..manifest.stored_layers)
        .map(|_| {
            let data = (0..manifest.num_tokens * hidden_size)
                .map(|_| match rng.random_range(0..20) {
                    0 => -0.0,
                    1 => f32::MIN_POSITIVE / 8.0,
                    2 => f32::MAX,
                    3 => -1e30,
                    _ => {
                        let g: f32 = StandardNormal.sample(&mut rng);
                        g * 3.0
                    }
                })
                .collect();
            Matrix::from_vec(manifest.num_tokens, hidden_size, data)
        })
        .collect();
    HiddenStateTrace::new(manifest, layers).expect("random trace is valid")
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub id: String,
    pub task: String,
    pub sample: SampleText,
    pub shape: ModelShape,
}

impl Fixture {
    pub fn build(&self, seed: u64) -> Result<HiddenStateTrace, TraceError> {
        let mut trace = build_trace(&self.sample, &self.shape, seed)?;
        trace.manifest.task = Some(self.task.clone());
        Ok(trace)
    }
}

/// bAbI tasks whose answers are spans of the story.
pub const BABI_SPAN_TASKS: [u8; 12] = [1, 2, 3, 4, 5, 11, 12, 13, 14, 15, 16, 20];

fn babi_story(task: u8) -> (&'static str, &'static str, &'static str) {
    match task {
        1 => ("Where is Mary?", "Mary moved to the bathroom. John went to the hallway. Daniel went back to the office.", "bathroom"),
        2 => ("Where is the football?", "John picked up the football. Mary went to the garden. John journeyed to the kitchen. Sandra went to the office.", "kitchen"),
        3 => ("Where was the apple before the bedroom?", "Mary got the apple. Mary went to the garden. Mary travelled to the office. Mary went to the bedroom. John went to the hallway.", "office"),
        4 => ("What is the kitchen east of?", "The office is east of the hallway. The kitchen is east of the office. The garden is west of the bathroom.", "office"),
        5 => ("Who gave the milk to Fred?", "Bill travelled to the office. Jeff picked up the milk. Jeff gave the milk to Fred. Fred went to the garden.", "Jeff"),
        11 => ("Where is Daniel?", "Mary went back to the bathroom. After that she went to the bedroom. Daniel went to the kitchen. Then he journeyed to the hallway.", "hallway"),
        12 => ("Where is John?", "Mary and Daniel went to the bathroom. John and Sandra travelled to the garden. Sandra and Mary moved to the office.", "garden"),
        13 => ("Where is Sandra?", "Daniel and Sandra journeyed to the office. Then they went to the garden. John and Mary travelled to the hallway.", "garden"),
        14 => ("Where was Julie before the school?", "This morning Julie went to the park. Yesterday Julie was at the cinema. This afternoon Julie went to the school. Bill went to the kitchen.", "park"),
        15 => ("What is Gertrude afraid of?", "Wolves are afraid of mice. Sheep are afraid of cats. Gertrude is a sheep. Winona is a wolf.", "cats"),
        16 => ("What color is Greg?", "Lily is a swan. Lily is white. Bernhard is green. Greg is a swan. Brian is a lion.", "white"),
        20 => ("Why did Sumit go to the kitchen?", "Sumit is hungry. Sumit went back to the kitchen. Yann is tired. Yann went to the bedroom.", "hungry"),
        _ => ("", "", ""),
    }
}

/// Small samples in the style of each supported task.
pub fn bundled_fixtures() -> Vec<Fixture> {
    let mut out = vec![
        Fixture {
            id: "squad_01".into(),
            task: "squad".into(),
            sample: SampleText {
                question: "What did the Normans fuse with in the 10th and 11th centuries?".into(),
                context: "The Normans were the people who in the 10th and 11th centuries gave their name to Normandy, a region in France. They were descended from Norse raiders and pirates from Denmark, Iceland and Norway. Through generations of assimilation and mixing with the native Frankish and Roman-Gaulish populations, their descendants would gradually merge with the Carolingian-based cultures of West Francia.".into(),
                answer: "Carolingian-based cultures".into(),
            },
            shape: ModelShape::base(),
        },
        Fixture {
            id: "squad_02".into(),
            task: "squad".into(),
            sample: SampleText {
                question: "Which river flows through the city of Warsaw?".into(),
                context: "Warsaw is the capital and largest city of Poland. The metropolis stands on the Vistula River in east-central Poland. Its population is officially estimated at 1.8 million residents.".into(),
                answer: "Vistula River".into(),
            },
            shape: ModelShape::base(),
        },
        Fixture {
            id: "hotpot_01".into(),
            task: "hotpot".into(),
            sample: SampleText {
                question: "Which city is the university attended by the author of The Hobbit located in?".into(),
                context: "The Hobbit is a children's fantasy novel by English author J. R. R. Tolkien. It was published in 1937. Tolkien studied at Exeter College of the University of Oxford. The University of Oxford is a collegiate research university located in Oxford, England. Exeter College was founded in 1314.".into(),
                answer: "Oxford, England".into(),
            },
            shape: ModelShape::large(),
        },
    ];
    for task in BABI_SPAN_TASKS {
        let (q, c, a) = babi_story(task);
        out.push(Fixture {
            id: format!("babi_task{task:02}"),
            task: "babi".into(),
            sample: SampleText {
                question: q.into(),
                context: c.into(),
                answer: a.into(),
            },
            shape: ModelShape::base(),
        });
    }
    out
}

/// Writes every bundled fixture as `<id>.vbtr` into `dir`.
pub fn write_fixtures(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    bundled_fixtures()
        .iter()
        .enumerate()
        .map(|(i, fixture)| {
            let trace = fixture
                .build(1000 + i as u64)
                .and_then(|t| encode_trace(&t))
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
            let path = dir.join(format!("{}.vbtr", fixture.id));
            std::fs::write(&path, trace)?;
            Ok(path)
        })
        .collect()
}
