//! Seeded synthetic worlds: graph, episodes with planted landmark signals,
//! text/view embeddings and the matching priors.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::graph::NavGraph;
use super::SimError;
use crate::embedding::{EmbeddingStore, FeatureVector, StoreBuilder, StoreSource, TextQuery};
use crate::priors::client::{read_transcript, write_transcript, TranscriptEntry};
use crate::priors::prompt::{
    build_prompt, render_numbered_list, InstructionStyle, PromptTemplate, DEFAULT_REQUESTED_COOCCURRENCES,
};
use crate::priors::{read_instructions, read_priors, write_instructions, write_priors, InstructionRecord, LandmarkPriors, PriorRecord, Provenance};

pub const WORLD_FILE: &str = "world.json";
pub const STORE_FILE: &str = "store.bin";
pub const PRIORS_FILE: &str = "priors.jsonl";
pub const TRANSCRIPT_FILE: &str = "transcript.jsonl";
pub const INSTRUCTIONS_FILE: &str = "instructions.jsonl";

const LANDMARK_NAMES: &[&str] = &[
    "sofa", "fireplace", "staircase", "piano", "bookshelf", "fountain", "wardrobe", "bathtub",
    "desk", "armchair", "chandelier", "aquarium", "treadmill", "billiard table",
    "grandfather clock", "dining table", "kitchen island", "washing machine", "bunk bed",
    "coat rack", "wine rack", "statue", "vending machine", "ping pong table",
];
const CO_ADJECTIVES: &[&str] = &["red", "blue", "wooden", "metal", "small", "tall", "striped", "round"];
const CO_NOUNS: &[&str] = &[
    "lamp", "cushion", "rug", "vase", "painting", "mirror", "plant", "curtain", "shelf", "basket",
    "candle", "towel", "stool", "clock", "pillow", "blanket", "tray", "bench", "poster", "speaker",
];

/// Number of scene styles. Cooccurrences tied to the other style are the
/// ones displaced in an episode.
pub const N_STYLES: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_nodes: usize,
    /// Neighbors per node; panoramas hold this many views plus stop.
    pub branching: usize,
    pub edge_length: f64,
    pub edge_jitter: f64,
    /// Inclusive hop-count range of teacher paths.
    pub path_hops: (usize, usize),
    pub d: usize,
    pub n_train: usize,
    pub n_eval: usize,
    pub landmark_vocab: usize,
    pub n_co: usize,
    /// Landmark feature scale added to the teacher view.
    pub mu_sig: f64,
    /// Cooccurrence feature scale added to the view it is planted in.
    pub mu_co: f64,
    /// Per-component Gaussian noise on every view along an episode path.
    pub sigma: f64,
    pub distractor_rate: f64,
    /// Weight of the style direction in styled cooccurrence phrases.
    pub style_strength: f64,
    /// Cosine between a style-neutral cooccurrence phrase and its landmark.
    pub co_affinity: f64,
    /// Same, for cooccurrences tied to a style.
    pub styled_affinity: f64,
    /// Scale applied to `mu_co` for displaced cooccurrences.
    pub distractor_boost: f64,
    /// Plant all displaced cooccurrences of a step into one wrong view.
    pub single_decoy: bool,
    /// Style direction added to every view of an episode path.
    pub ambient: f64,
    /// Norm of the per-node background view features.
    pub view_scale: f64,
    pub success_radius: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_nodes: 60,
            branching: 4,
            edge_length: 2.0,
            edge_jitter: 0.25,
            path_hops: (3, 6),
            d: 32,
            n_train: 200,
            n_eval: 100,
            landmark_vocab: 16,
            n_co: 5,
            mu_sig: 1.2,
            mu_co: 1.0,
            sigma: 0.2,
            distractor_rate: 0.3,
            style_strength: 1.0,
            co_affinity: 0.0,
            styled_affinity: 0.0,
            distractor_boost: 1.0,
            single_decoy: false,
            ambient: 1.0,
            view_scale: 0.2,
            success_radius: 3.0,
        }
    }
}

impl SynthConfig {
    /// A harder world where the weak teacher-view landmark signal and a
    /// style-dependent decoy make uniform cooccurrence weighting fall short.
    /// Learned scores must pick out the words that apply to the instruction
    /// style.
    pub fn ablation() -> Self {
        Self {
            mu_sig: 0.49,
            mu_co: 1.81,
            co_affinity: 0.33,
            styled_affinity: 0.49,
            style_strength: 4.29,
            ambient: 1.39,
            single_decoy: true,
            distractor_boost: 2.2,
            ..Self::default()
        }
    }

    /// Cooccurrences per landmark planted away from the teacher view.
    pub fn n_distractors(&self) -> usize {
        ((self.distractor_rate * self.n_co as f64) - 1e-9).ceil().max(0.0) as usize
    }

    fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InfeasibleConfig(m));
        for a in [self.co_affinity, self.styled_affinity] {
            if !(0.0..1.0).contains(&a) {
                return bad(format!("affinity {a} outside [0, 1)"));
            }
        }
        if !(self.distractor_boost >= 0.0) {
            return bad("distractor_boost must be nonnegative".into());
        }
        if !(0.0..=1.0).contains(&self.distractor_rate) {
            return bad(format!("distractor_rate {} outside [0, 1]", self.distractor_rate));
        }
        if !(self.mu_sig > 0.0) || self.sigma < 0.0 || self.mu_co < 0.0 {
            return bad("mu_sig must be positive, sigma and mu_co nonnegative".into());
        }
        if self.path_hops.0 > self.path_hops.1 {
            return bad(format!("empty hop range {:?}", self.path_hops));
        }
        if self.landmark_vocab > LANDMARK_NAMES.len() {
            return bad(format!("landmark_vocab is at most {}", LANDMARK_NAMES.len()));
        }
        if self.landmark_vocab < self.path_hops.1.max(1) {
            return bad("landmark_vocab must cover the longest path".into());
        }
        if self.landmark_vocab + N_STYLES >= self.d {
            return bad(format!("d = {} leaves no room for cooccurrence features", self.d));
        }
        if self.landmark_vocab * self.n_co > CO_ADJECTIVES.len() * CO_NOUNS.len() {
            return bad("not enough cooccurrence names".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: String,
    pub split: Split,
    pub instruction_id: String,
    pub instruction: String,
    pub start: usize,
    pub goal: usize,
    /// Teacher node sequence, start to goal.
    pub path: Vec<usize>,
    /// Teacher view index at every path node; the last one is stop.
    pub actions: Vec<usize>,
    pub style: usize,
    pub priors: LandmarkPriors,
    pub success_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub config: SynthConfig,
    pub graph: NavGraph,
    pub episodes: Vec<Episode>,
}

pub fn base_view_key(node: usize, view: usize) -> String {
    format!("view/{node}/{view}")
}

pub fn episode_view_key(episode: &str, node: usize, view: usize) -> String {
    format!("ep/{episode}/view/{node}/{view}")
}

impl World {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Episode> {
        self.episodes.iter().filter(move |e| e.split == split)
    }

    /// View features at `node` as seen during `episode`.
    pub fn views(
        &self,
        store: &EmbeddingStore,
        episode: &str,
        node: usize,
    ) -> Result<Vec<FeatureVector>, SimError> {
        (0..self.graph.n_views(node))
            .map(|i| {
                let k = episode_view_key(episode, node, i);
                let key = if store.contains(&k) { k } else { base_view_key(node, i) };
                Ok(store.get(&key)?.clone())
            })
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SimError> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

/// Everything a synthetic benchmark needs.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldBundle {
    pub world: World,
    pub store: EmbeddingStore,
    pub priors: Vec<PriorRecord>,
    pub transcript: Vec<TranscriptEntry>,
    pub instructions: Vec<InstructionRecord>,
}

impl WorldBundle {
    /// Writes the bundle files into `dir`, creating it if needed.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), SimError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.world.save(dir.join(WORLD_FILE))?;
        self.store.save(dir.join(STORE_FILE))?;
        write_priors(dir.join(PRIORS_FILE), &self.priors)?;
        write_transcript(dir.join(TRANSCRIPT_FILE), &self.transcript)?;
        write_instructions(dir.join(INSTRUCTIONS_FILE), &self.instructions)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, SimError> {
        let dir = dir.as_ref();
        let world = World::load(dir.join(WORLD_FILE))?;
        let store = EmbeddingStore::load(dir.join(STORE_FILE))?;
        if store.dimension() != world.config.d {
            return Err(SimError::InfeasibleConfig(format!(
                "store dimension {} does not match world dimension {}",
                store.dimension(),
                world.config.d
            )));
        }
        Ok(Self {
            world,
            store,
            priors: read_priors(dir.join(PRIORS_FILE))?,
            transcript: read_transcript(dir.join(TRANSCRIPT_FILE))?,
            instructions: read_instructions(dir.join(INSTRUCTIONS_FILE))?,
        })
    }
}

fn gaussian<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn orthonormal_basis<R: Rng>(rng: &mut R, d: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
    while basis.len() < d {
        let mut v = gaussian(rng, d);
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

fn axpy(acc: &mut [f64], a: f64, x: &[f64]) {
    acc.iter_mut().zip(x).for_each(|(y, xi)| *y += a * xi);
}

/// Role of a cooccurrence in its landmark's list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CoRole {
    Universal,
    Styled(usize),
}

struct Vocabulary {
    landmarks: Vec<String>,
    landmark_feats: Vec<Vec<f64>>,
    /// Per landmark: (phrase, role, feature).
    cooccurrences: Vec<Vec<(String, CoRole, Vec<f64>)>>,
    styles: Vec<Vec<f64>>,
}

fn build_vocabulary<R: Rng>(cfg: &SynthConfig, rng: &mut R) -> Vocabulary {
    let d = cfg.d;
    let basis = orthonormal_basis(rng, d);
    let nl = cfg.landmark_vocab;
    let landmark_feats = basis[..nl].to_vec();
    let styles = basis[nl..nl + N_STYLES].to_vec();
    let residual = &basis[nl + N_STYLES..];

    let mut names: Vec<String> = CO_ADJECTIVES
        .iter()
        .flat_map(|a| CO_NOUNS.iter().map(move |n| format!("{a} {n}")))
        .collect();
    names.shuffle(rng);
    let mut names = names.into_iter();

    let n_styled = cfg.n_distractors().min(cfg.n_co / 2);
    let mut cooccurrences = Vec::with_capacity(nl);
    for l in 0..nl {
        let mut roles: Vec<CoRole> = (0..cfg.n_co - 2 * n_styled).map(|_| CoRole::Universal).collect();
        for s in 0..N_STYLES {
            roles.extend((0..n_styled).map(|_| CoRole::Styled(s)));
        }
        roles.shuffle(rng);
        let list = roles
            .into_iter()
            .map(|role| {
                let mut f = vec![0.0; d];
                for b in residual {
                    axpy(&mut f, rng.sample::<f64, _>(StandardNormal), b);
                }
                let mut f = unit(f);
                if let CoRole::Styled(s) = role {
                    axpy(&mut f, cfg.style_strength, &styles[s]);
                    f = unit(f);
                }
                let a = match role {
                    CoRole::Universal => cfg.co_affinity,
                    CoRole::Styled(_) => cfg.styled_affinity,
                };
                let mut g: Vec<f64> = f.iter().map(|x| x * (1.0 - a * a).sqrt()).collect();
                axpy(&mut g, a, &landmark_feats[l]);
                (names.next().expect("checked by validate"), role, g)
            })
            .collect();
        cooccurrences.push(list);
    }
    Vocabulary {
        landmarks: LANDMARK_NAMES[..nl].iter().map(|s| s.to_string()).collect(),
        landmark_feats,
        cooccurrences,
        styles,
    }
}

fn instruction_text(landmarks: &[&str]) -> String {
    let mut s = String::new();
    for (i, l) in landmarks.iter().enumerate() {
        if i + 1 == landmarks.len() {
            s.push_str(&format!("stop at the {l}."));
        } else {
            s.push_str(&format!("walk to the {l}, then "));
        }
    }
    s
}

struct StoreWriter {
    builder: StoreBuilder,
}

impl StoreWriter {
    fn put(&mut self, key: &str, v: &[f64]) -> Result<(), SimError> {
        if !self.builder.contains(key) {
            self.builder.insert(key, FeatureVector(v.to_vec()))?;
        }
        Ok(())
    }

    fn put_phrase(&mut self, phrase: &str, v: &[f64]) -> Result<(), SimError> {
        self.put(phrase, v)?;
        self.put(&TextQuery::new(phrase, true).resolved_key(), v)
    }
}

/// Generates a world and every artifact that goes with it. Identical
/// configurations give identical bundles.
pub fn generate_world(cfg: &SynthConfig) -> Result<WorldBundle, SimError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let graph = NavGraph::random_regular(cfg.n_nodes, cfg.branching, cfg.edge_length, cfg.edge_jitter, &mut rng)?;

    // Teacher paths are weighted shortest paths with a hop count in range.
    let mut candidates = Vec::new();
    let mut preds = Vec::with_capacity(graph.n_nodes());
    for s in 0..graph.n_nodes() {
        let (_, prev) = graph.dijkstra(s);
        for g in 0..graph.n_nodes() {
            let mut hops = 0;
            let mut v = g;
            while let Some(p) = prev[v] {
                v = p;
                hops += 1;
            }
            if (cfg.path_hops.0..=cfg.path_hops.1).contains(&hops) {
                candidates.push((s, g));
            }
        }
        preds.push(prev);
    }
    if candidates.is_empty() {
        return Err(SimError::InfeasibleConfig(format!(
            "no shortest path with {}..={} hops in a {}-node graph",
            cfg.path_hops.0,
            cfg.path_hops.1,
            graph.n_nodes()
        )));
    }

    let vocab = build_vocabulary(cfg, &mut rng);
    let d = cfg.d;
    let mut store = StoreWriter {
        builder: StoreBuilder::new(d),
    };
    for (name, f) in vocab.landmarks.iter().zip(&vocab.landmark_feats) {
        store.put_phrase(name, f)?;
    }
    for list in &vocab.cooccurrences {
        for (name, _, f) in list {
            store.put_phrase(name, f)?;
        }
    }
    for v in 0..graph.n_nodes() {
        for i in 0..graph.n_views(v) {
            let f: Vec<f64> = unit(gaussian(&mut rng, d)).into_iter().map(|x| x * cfg.view_scale).collect();
            store.put(&base_view_key(v, i), &f)?;
        }
    }

    let lm_template = PromptTemplate::landmark_extraction(InstructionStyle::FineGrained);
    let co_template = PromptTemplate::cooccurrence(InstructionStyle::FineGrained, DEFAULT_REQUESTED_COOCCURRENCES);
    let mut transcript: BTreeMap<String, String> = BTreeMap::new();
    let mut episodes = Vec::new();
    let mut priors = Vec::new();
    let mut instructions = Vec::new();
    let n_dist = cfg.n_distractors();

    for idx in 0..cfg.n_train + cfg.n_eval {
        let (split, id) = if idx < cfg.n_train {
            (Split::Train, format!("train-{idx:04}"))
        } else {
            (Split::Eval, format!("eval-{:04}", idx - cfg.n_train))
        };
        let &(start, goal) = candidates.choose(&mut rng).expect("nonempty");
        let mut path = vec![goal];
        while let Some(p) = preds[start][*path.last().unwrap()] {
            path.push(p);
        }
        path.reverse();
        let hops = path.len() - 1;
        let mut actions: Vec<usize> = path
            .windows(2)
            .map(|w| graph.view_to(w[0], w[1]).expect("path follows edges"))
            .collect();
        actions.push(graph.stop_view(goal));

        // One distinct landmark per hop; the last one also marks the goal.
        let n_lm = hops.max(1);
        let lm_ids: Vec<usize> = rand::seq::index::sample(&mut rng, cfg.landmark_vocab, n_lm).into_vec();
        let lm_names: Vec<&str> = lm_ids.iter().map(|&i| vocab.landmarks[i].as_str()).collect();
        let instruction = instruction_text(&lm_names);
        let style = rng.random_range(0..N_STYLES);

        let mut f_instr = vec![0.0; d];
        for &i in &lm_ids {
            axpy(&mut f_instr, 1.0, &vocab.landmark_feats[i]);
        }
        store.put(&instruction, &unit(f_instr))?;

        for (t, &node) in path.iter().enumerate() {
            let n_views = graph.n_views(node);
            let teacher = actions[t];
            let lm = lm_ids[t.min(n_lm - 1)];
            let mut views: Vec<Vec<f64>> = (0..n_views)
                .map(|i| {
                    let mut v = store.builder_get(&base_view_key(node, i));
                    axpy(&mut v, cfg.ambient, &vocab.styles[style]);
                    let noise = gaussian(&mut rng, d);
                    axpy(&mut v, cfg.sigma, &noise);
                    v
                })
                .collect();
            axpy(&mut views[teacher], cfg.mu_sig, &vocab.landmark_feats[lm]);
            let list = &vocab.cooccurrences[lm];
            let displaced = displaced_set(list, style, n_dist, &mut rng);
            let others: Vec<usize> = (0..n_views).filter(|&i| i != teacher).collect();
            let decoy = *others.choose(&mut rng).expect("at least two views");
            for (j, (_, _, f)) in list.iter().enumerate() {
                if displaced.contains(&j) {
                    let target = if cfg.single_decoy {
                        decoy
                    } else {
                        *others.choose(&mut rng).expect("at least two views")
                    };
                    axpy(&mut views[target], cfg.mu_co * cfg.distractor_boost, f);
                } else {
                    axpy(&mut views[teacher], cfg.mu_co, f);
                }
            }
            for (i, v) in views.iter().enumerate() {
                store.put(&episode_view_key(&id, node, i), v)?;
            }
        }

        let lp = LandmarkPriors {
            landmarks: lm_names.iter().map(|s| s.to_string()).collect(),
            cooccurrences: lm_ids
                .iter()
                .map(|&i| vocab.cooccurrences[i].iter().map(|(n, _, _)| n.clone()).collect())
                .collect(),
            provenance: vec![Provenance::Synthetic; n_lm],
            usable: true,
        };
        let instruction_id = id.clone();
        transcript.insert(
            build_prompt(&lm_template, &instruction)?,
            render_numbered_list(&lm_names),
        );
        for (name, cos) in lp.landmarks.iter().zip(&lp.cooccurrences) {
            let refs: Vec<&str> = cos.iter().map(String::as_str).collect();
            transcript.insert(build_prompt(&co_template, name)?, render_numbered_list(&refs));
        }
        priors.push(PriorRecord {
            instruction_id: instruction_id.clone(),
            priors: lp.clone(),
        });
        instructions.push(InstructionRecord {
            instruction_id: instruction_id.clone(),
            instruction: instruction.clone(),
            style: InstructionStyle::FineGrained,
        });
        episodes.push(Episode {
            id,
            split,
            instruction_id,
            instruction,
            start,
            goal,
            path,
            actions,
            style,
            priors: lp,
            success_radius: cfg.success_radius,
        });
    }

    let world = World {
        config: cfg.clone(),
        graph,
        episodes,
    };
    Ok(WorldBundle {
        world,
        store: store.builder.build(StoreSource::Synthetic, 0),
        priors,
        transcript: transcript
            .into_iter()
            .map(|(prompt, response)| TranscriptEntry { prompt, response })
            .collect(),
        instructions,
    })
}

/// Indices of the cooccurrences planted away from the teacher view: those
/// tied to another style first, then random others if more are needed.
fn displaced_set<R: Rng>(
    list: &[(String, CoRole, Vec<f64>)],
    style: usize,
    n_dist: usize,
    rng: &mut R,
) -> BTreeSet<usize> {
    let mut out: BTreeSet<usize> = list
        .iter()
        .enumerate()
        .filter(|(_, (_, r, _))| matches!(r, CoRole::Styled(s) if *s != style))
        .map(|(i, _)| i)
        .take(n_dist)
        .collect();
    let mut rest: Vec<usize> = (0..list.len()).filter(|i| !out.contains(i)).collect();
    rest.shuffle(rng);
    out.extend(rest.into_iter().take(n_dist.saturating_sub(out.len())));
    out
}

impl StoreWriter {
    fn builder_get(&self, key: &str) -> Vec<f64> {
        self.builder.get(key).expect("base view inserted").0.clone()
    }
}
