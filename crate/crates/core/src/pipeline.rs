//! The end-to-end commands behind the `pee` binary. Each command reads its
//! inputs from the [`Config`] plus explicit paths, writes its artifact, and
//! streams line-delimited JSON records to `sink`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::Config;
use crate::corpus::{
    build_vocab, compute_tfidf, conversations_to_examples, detokenize, load_any_corpus, load_embeddings,
    load_personachat_conversations, parse_embeddings, tokenize, Conversation, DialogueExample, Vocabulary,
    NUM_RESERVED,
};
use crate::error::{Error, Result};
use crate::expansion::{expand_persona, persona_vocab, ExpansionResult, WordVectors};
use crate::metrics::{evaluate, EvalItem, EvalReport};
use crate::net::{generate, Generation, ModelInput, PeeModel, StepDiagnostics, TrainingExample};
use crate::topic::{train_topic_model, TopicModel};
use crate::train::{train_model, EpochRecord, TrainOptions, TrainOutcome};

/// Expansion records keyed by conversation index.
pub type Expansions = BTreeMap<usize, ExpansionResult>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicEpoch {
    pub epoch: usize,
    pub loss: f64,
}

/// One generated response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub conversation: usize,
    /// position of the example within the data file
    pub example: usize,
    pub response: String,
    pub ids: Vec<usize>,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub persona_weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<Vec<StepDiagnostics>>,
}

pub fn rng_for(config: &Config) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(config.seed)
}

fn emit<T: Serialize>(sink: &mut dyn Write, record: &T) -> Result<()> {
    let line = serde_json::to_string(record)?;
    writeln!(sink, "{line}").map_err(|e| Error::io("<output>", e))
}

fn required<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::Config(format!("no {what} data path given (set paths.{what})")))
}

/// Trains the topic model on `paths.train`, `paths.topic_corpora` and
/// `extra_corpora` merged, one document per conversation.
pub fn cmd_pretrain_topic(
    config: &Config,
    extra_corpora: &[PathBuf],
    out: &Path,
    sink: &mut dyn Write,
) -> Result<Vec<TopicEpoch>> {
    let paths: Vec<&Path> = config
        .paths
        .train
        .iter()
        .chain(&config.paths.topic_corpora)
        .chain(extra_corpora)
        .map(PathBuf::as_path)
        .collect();
    if paths.is_empty() {
        return Err(Error::Config("no corpora given for topic pretraining".into()));
    }
    let mut documents = Vec::new();
    for p in &paths {
        documents.extend(load_any_corpus(p)?.iter().map(Conversation::document));
    }
    let vocab = build_vocab(&documents, config.topic.vocab_size + NUM_RESERVED, true);
    let tfidf = compute_tfidf(&documents, &vocab);
    log::info!(
        "topic corpus: {} documents from {} files, {} words",
        documents.len(),
        paths.len(),
        vocab.len() - NUM_RESERVED
    );
    let (model, trace) = train_topic_model(&tfidf, vocab, &config.topic, &mut rng_for(config))?;
    Checkpoint::topic(&model, &config.topic)?.save(out)?;
    let records: Vec<TopicEpoch> = trace
        .into_iter()
        .enumerate()
        .map(|(epoch, loss)| TopicEpoch { epoch, loss })
        .collect();
    for r in &records {
        emit(sink, r)?;
    }
    Ok(records)
}

pub fn load_topic(config: &Config, path: &Path) -> Result<TopicModel> {
    let (model, _) = Checkpoint::load(path)?.into_topic()?;
    let words = model.vocab.len() - NUM_RESERVED;
    if words > config.topic.vocab_size {
        return Err(Error::Checkpoint(format!(
            "{}: topic vocabulary has {words} words, config allows topic.vocab_size = {}",
            path.display(),
            config.topic.vocab_size
        )));
    }
    Ok(model)
}

/// Expansion of one persona with the configured `m` and `n_w`.
pub fn expand_conversation(
    config: &Config,
    topic: &TopicModel,
    vectors: &WordVectors,
    conversation: usize,
    persona: &[Vec<String>],
) -> Result<ExpansionResult> {
    let words = persona_vocab(persona, &topic.vocab);
    Ok(ExpansionResult {
        conversation,
        words: expand_persona(&words, vectors, config.expansion.m, config.expansion.n_w)?,
    })
}

/// One expansion record per conversation of `data` (default `paths.train`).
pub fn cmd_expand(
    config: &Config,
    topic_checkpoint: &Path,
    data: Option<&Path>,
    sink: &mut dyn Write,
) -> Result<Vec<ExpansionResult>> {
    let topic = load_topic(config, topic_checkpoint)?;
    let data = match data {
        Some(d) => d,
        None => required(&config.paths.train, "train")?,
    };
    let vectors = topic.word_topic_vectors();
    let conversations = load_personachat_conversations(data)?;
    let mut out = Vec::with_capacity(conversations.len());
    for (i, c) in conversations.iter().enumerate() {
        let record = expand_conversation(config, &topic, &vectors, i, &c.persona)?;
        emit(sink, &record)?;
        out.push(record);
    }
    Ok(out)
}

pub fn read_expansions(path: &Path) -> Result<Expansions> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Expansions::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ExpansionResult = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        out.insert(record.conversation, record);
    }
    Ok(out)
}

fn load_expansions(path: Option<&Path>) -> Result<Expansions> {
    path.map(read_expansions).transpose().map(Option::unwrap_or_default)
}

/// Looks up each example's expansion, warning once per conversation
/// without one.
fn expansion_lookup<'a>(
    examples: &[DialogueExample],
    expansions: &'a Expansions,
    label: &str,
) -> Vec<Option<&'a ExpansionResult>> {
    let mut missing = std::collections::BTreeSet::new();
    let found = examples
        .iter()
        .map(|ex| {
            let e = expansions.get(&ex.conversation);
            if e.is_none() {
                missing.insert(ex.conversation);
            }
            e
        })
        .collect();
    if !missing.is_empty() {
        log::warn!(
            "{label}: {} conversations have no expansion record; their external memory is empty",
            missing.len()
        );
    }
    found
}

fn training_examples(
    config: &Config,
    vocab: &Vocabulary,
    examples: &[DialogueExample],
    expansions: &Expansions,
    label: &str,
) -> Vec<TrainingExample> {
    let w = &config.losses;
    examples
        .iter()
        .zip(expansion_lookup(examples, expansions, label))
        .map(|(ex, e)| TrainingExample::new(vocab, ex, e, w.theta, w.lambda))
        .collect()
}

/// Model vocabulary over every token of the training conversations.
pub fn model_vocab(config: &Config, conversations: &[Conversation]) -> Vocabulary {
    let docs: Vec<Vec<String>> = conversations.iter().map(Conversation::document).collect();
    build_vocab(&docs, config.model.vocab_size, false)
}

/// Trains the generator on `paths.train`, validating on `paths.valid` when
/// set. Saves the best-validation parameters (the last ones without a
/// validation set) to `out`.
pub fn cmd_train(
    config: &Config,
    train_expansions: Option<&Path>,
    valid_expansions: Option<&Path>,
    out: &Path,
    sink: &mut dyn Write,
) -> Result<(PeeModel, TrainOutcome)> {
    let conversations = load_personachat_conversations(required(&config.paths.train, "train")?)?;
    let examples = conversations_to_examples(&conversations);
    let vocab = model_vocab(config, &conversations);
    let mut rng = rng_for(config);
    let mut model = PeeModel::new(vocab.clone(), config.model.net(), &mut rng)?;
    if let Some(p) = &config.paths.embeddings {
        let table = load_embeddings(p, &vocab)?;
        let n = model.load_pretrained(&table)?;
        log::info!("initialised {n} embeddings from {}", p.display());
    }
    let train = training_examples(config, &vocab, &examples, &load_expansions(train_expansions)?, "train");
    let valid = match &config.paths.valid {
        Some(p) => {
            let ex = load_personachat(p)?;
            training_examples(config, &vocab, &ex, &load_expansions(valid_expansions)?, "valid")
        }
        None => Vec::new(),
    };
    log::info!(
        "training on {} examples ({} validation), vocabulary {}, {} parameters",
        train.len(),
        valid.len(),
        vocab.len(),
        model.store.total_numel()
    );
    let opts = TrainOptions {
        epochs: config.model.epochs,
        batch_size: config.model.batch_size,
        learning_rate: config.model.learning_rate,
        weights: config.losses,
    };
    let outcome = train_model(&mut model, &train, &valid, &opts, &mut rng)?;
    for record in &outcome.epochs {
        emit::<EpochRecord>(sink, record)?;
    }
    if let Some((epoch, store)) = &outcome.best {
        log::info!("keeping parameters of epoch {epoch}");
        model.store = store.clone();
    }
    Checkpoint::pee(&model)?.save(out)?;
    Ok((model, outcome))
}

fn load_personachat(path: &Path) -> Result<Vec<DialogueExample>> {
    Ok(conversations_to_examples(&load_personachat_conversations(path)?))
}

pub fn load_model(path: &Path) -> Result<PeeModel> {
    Checkpoint::load(path)?.into_pee()
}

fn respond(config: &Config, model: &PeeModel, input: &ModelInput) -> Result<Generation> {
    generate(model, input, config.model.search(), config.model.max_len)
}

fn response_text(model: &PeeModel, g: &Generation) -> String {
    detokenize(&model.vocab.decode(g.response_ids()))
}

/// One response per example of `data` (default `paths.test`).
pub fn cmd_generate(
    config: &Config,
    checkpoint: &Path,
    data: Option<&Path>,
    expansions: Option<&Path>,
    diagnostics: bool,
    sink: &mut dyn Write,
) -> Result<Vec<ResponseRecord>> {
    let model = load_model(checkpoint)?;
    let data = match data {
        Some(d) => d,
        None => required(&config.paths.test, "test")?,
    };
    let examples = load_personachat(data)?;
    let expansions = load_expansions(expansions)?;
    let lookup = expansion_lookup(&examples, &expansions, "generate");
    let mut out = Vec::with_capacity(examples.len());
    for (i, (ex, e)) in examples.iter().zip(lookup).enumerate() {
        let input = ModelInput::new(&model.vocab, &ex.persona, &ex.history, e);
        let g = respond(config, &model, &input)?;
        let record = ResponseRecord {
            conversation: ex.conversation,
            example: i,
            response: response_text(&model, &g),
            ids: g.response_ids().to_vec(),
            score: g.score,
            persona_weights: diagnostics.then(|| g.persona_weights.clone()),
            steps: diagnostics.then_some(g.steps),
        };
        emit(sink, &record)?;
        out.push(record);
    }
    Ok(out)
}

pub fn read_responses(path: &Path) -> Result<Vec<ResponseRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Where the candidates of an evaluation come from.
#[derive(Clone, Copy, Debug)]
pub enum Candidates<'a> {
    /// decode with a model checkpoint
    Model {
        checkpoint: &'a Path,
        expansions: Option<&'a Path>,
    },
    /// a file written by [`cmd_generate`], one record per example
    Responses(&'a Path),
}

/// Scores candidates against the references of `data` (default
/// `paths.test`) and writes one [`EvalReport`] record.
pub fn cmd_eval(
    config: &Config,
    candidates: Candidates<'_>,
    data: Option<&Path>,
    sink: &mut dyn Write,
) -> Result<EvalReport> {
    let data = match data {
        Some(d) => d,
        None => required(&config.paths.test, "test")?,
    };
    let examples = load_personachat(data)?;
    let responses = match candidates {
        Candidates::Model { checkpoint, expansions } => {
            cmd_generate(config, checkpoint, Some(data), expansions, false, &mut std::io::sink())?
        }
        Candidates::Responses(path) => read_responses(path)?,
    };
    if responses.len() != examples.len() {
        return Err(Error::Config(format!(
            "{} responses for {} examples",
            responses.len(),
            examples.len()
        )));
    }
    let items: Vec<EvalItem> = examples
        .into_iter()
        .zip(&responses)
        .map(|(ex, r)| EvalItem {
            conversation: ex.conversation,
            persona: ex.persona,
            candidate: tokenize(&r.response),
            reference: ex.response,
        })
        .collect();
    let table = match &config.paths.embeddings {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Some(parse_embeddings(&text, &p.display().to_string(), None)?)
        }
        None => {
            log::warn!("no embeddings configured; embedding metrics are reported as 0");
            None
        }
    };
    let report = evaluate(&items, table.as_ref());
    emit(sink, &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub user: String,
    pub response: String,
}

/// Interactive session: reads one user utterance per line from `input`,
/// answers on `output`, and keeps the whole exchange as history. Blank
/// lines re-prompt without decoding. Ends at end of input.
pub fn cmd_chat(
    config: &Config,
    model: &PeeModel,
    persona: &[Vec<String>],
    expansion: Option<&ExpansionResult>,
    input: &mut dyn BufRead,
    output: &mut dyn Write,
) -> Result<Vec<ChatTurn>> {
    if persona.is_empty() {
        return Err(Error::Config("chat needs at least one persona sentence".into()));
    }
    if expansion.is_none() {
        log::warn!("no topic model given; chatting with an empty external memory");
    }
    let io = |e| Error::io("<chat>", e);
    let mut history: Vec<Vec<String>> = Vec::new();
    let mut turns = Vec::new();
    let mut line = String::new();
    loop {
        write!(output, "> ").map_err(io)?;
        output.flush().map_err(io)?;
        line.clear();
        if input.read_line(&mut line).map_err(io)? == 0 {
            writeln!(output).map_err(io)?;
            break;
        }
        let tokens = tokenize(&line);
        if tokens.is_empty() {
            continue;
        }
        history.push(tokens);
        let g = respond(
            config,
            model,
            &ModelInput::new(&model.vocab, persona, &history, expansion),
        )?;
        let response = response_text(model, &g);
        writeln!(output, "{response}").map_err(io)?;
        history.push(model.vocab.decode(g.response_ids()));
        turns.push(ChatTurn {
            user: line.trim().to_string(),
            response,
        });
    }
    Ok(turns)
}

/// Persona sentences from a text file, one per line. A leading
/// `your persona:` (with or without a line index) is stripped.
pub fn read_persona(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| {
            let l = l.trim();
            let l = l
                .split_once(' ')
                .filter(|(n, _)| n.parse::<usize>().is_ok())
                .map_or(l, |(_, r)| r);
            l.strip_prefix("your persona:").unwrap_or(l)
        })
        .map(tokenize)
        .filter(|s| !s.is_empty())
        .collect())
}
