//! Synthetic prompts and responses with a known golden utility.
//!
//! Three world modes are available:
//!
//! * `analytic`: utilities only, drawn per prompt from `N(mu_x, sigma_x^2)`.
//!   Embeddings are absent.
//! * `utility-channel`: the same Gaussian utilities, encoded into the first
//!   embedding coordinate as `Φ((r - mu0) / s0)` (clamped at ±4 scales); the
//!   remaining coordinates are nuisance noise around a per-prompt center. The
//!   golden reward is then an explicit smooth function of the embedding.
//! * `smooth-random`: embeddings are noise around a per-prompt center and the
//!   golden reward is a seeded sum of low-frequency sinusoids.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{std_normal_cdf, std_normal_quantile};
use crate::rng::SimRng;

pub const WORLD_FORMAT_VERSION: u32 = 1;

/// Width of the utility channel, in units of the global scale.
const CHANNEL_CLAMP: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorldMode {
    Analytic,
    UtilityChannel,
    SmoothRandom,
}

impl WorldMode {
    pub fn name(self) -> &'static str {
        match self {
            WorldMode::Analytic => "analytic",
            WorldMode::UtilityChannel => "utility-channel",
            WorldMode::SmoothRandom => "smooth-random",
        }
    }
}

/// Hyper-prior for per-prompt utility location and scale.
///
/// `mu_x ~ N(mu_mean, mu_sd^2)` and `sigma_x ~ U[sigma_min, sigma_max]`;
/// zero spread fixes the value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptPrior {
    pub mu_mean: f64,
    pub mu_sd: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl Default for PromptPrior {
    fn default() -> Self {
        PromptPrior {
            mu_mean: 0.0,
            mu_sd: 1.0,
            sigma_min: 0.5,
            sigma_max: 1.5,
        }
    }
}

impl PromptPrior {
    pub fn fixed(mu: f64, sigma: f64) -> Self {
        PromptPrior {
            mu_mean: mu,
            mu_sd: 0.0,
            sigma_min: sigma,
            sigma_max: sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu_sd >= 0.0 && self.sigma_min > 0.0 && self.sigma_max >= self.sigma_min) {
            return Err(Error::Config(format!("invalid prompt prior {self:?}")));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut SimRng) -> (f64, f64) {
        let z: f64 = StandardNormal.sample(rng);
        let mu = self.mu_mean + self.mu_sd * z;
        let sigma = if self.sigma_max > self.sigma_min {
            rng.random_range(self.sigma_min..self.sigma_max)
        } else {
            self.sigma_min
        };
        (mu, sigma)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub mode: WorldMode,
    pub dim: usize,
    pub n_train_prompts: usize,
    pub n_test_prompts: usize,
    pub k_per_prompt: usize,
    pub n_test_candidates: usize,
    pub prior: PromptPrior,
    pub global_mean: f64,
    pub global_scale: f64,
    /// Standard deviation of nuisance coordinates around the prompt center.
    pub nuisance_sd: f64,
    /// Number of sinusoid terms in smooth-random mode.
    pub smooth_terms: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            mode: WorldMode::UtilityChannel,
            dim: 16,
            n_train_prompts: 500,
            n_test_prompts: 50,
            k_per_prompt: 10,
            n_test_candidates: 128,
            prior: PromptPrior::default(),
            global_mean: 0.0,
            global_scale: 1.5,
            nuisance_sd: 0.1,
            smooth_terms: 8,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train_prompts < 1 || self.n_test_prompts < 1 {
            return Err(Error::Config(
                "need at least one train and one test prompt".into(),
            ));
        }
        if self.k_per_prompt < 2 {
            return Err(Error::Config("k_per_prompt must be at least 2".into()));
        }
        if self.n_test_candidates < 1 {
            return Err(Error::Config("n_test_candidates must be at least 1".into()));
        }
        if self.dim < 1 {
            return Err(Error::Config(
                "embedding dimension must be at least 1".into(),
            ));
        }
        if !(self.global_scale > 0.0) {
            return Err(Error::Config("global_scale must be positive".into()));
        }
        if !(self.nuisance_sd >= 0.0) {
            return Err(Error::Config("nuisance_sd must be non-negative".into()));
        }
        self.prior.validate()
    }
}

/// One sinusoid `amplitude * sin(frequency · z + phase)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothTerm {
    pub amplitude: f64,
    pub frequency: Vec<f64>,
    pub phase: f64,
}

/// The golden reward as a function of the embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenRewardSpec {
    pub mode: WorldMode,
    pub dim: usize,
    pub global_mean: f64,
    pub global_scale: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub smooth_terms: Vec<SmoothTerm>,
}

impl GoldenRewardSpec {
    pub fn channel_bounds() -> (f64, f64) {
        (
            std_normal_cdf(-CHANNEL_CLAMP),
            std_normal_cdf(CHANNEL_CLAMP),
        )
    }

    fn sample_smooth(cfg: &WorldConfig, rng: &mut SimRng) -> Vec<SmoothTerm> {
        let m = cfg.smooth_terms.max(1);
        let amp_scale = 1.0 / (m as f64).sqrt();
        (0..m)
            .map(|_| {
                let a: f64 = StandardNormal.sample(rng);
                SmoothTerm {
                    amplitude: a * amp_scale,
                    frequency: (0..cfg.dim)
                        .map(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
                        .collect(),
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                }
            })
            .collect()
    }
}

/// The golden utility of an embedding.
pub fn true_utility(spec: &GoldenRewardSpec, embedding: &[f64]) -> Result<f64> {
    if spec.mode == WorldMode::Analytic {
        return Err(Error::Mode {
            mode: "analytic",
            what: "true_utility needs embeddings",
        });
    }
    if embedding.len() != spec.dim {
        return Err(Error::Dimension {
            expected: spec.dim,
            got: embedding.len(),
        });
    }
    match spec.mode {
        WorldMode::UtilityChannel => {
            let (lo, hi) = GoldenRewardSpec::channel_bounds();
            let z0 = embedding[0].clamp(lo, hi);
            Ok(spec.global_mean + spec.global_scale * std_normal_quantile(z0)?)
        }
        WorldMode::SmoothRandom => {
            let s: f64 = spec
                .smooth_terms
                .iter()
                .map(|t| {
                    let arg: f64 = t.frequency.iter().zip(embedding).map(|(w, z)| w * z).sum();
                    t.amplitude * (arg + t.phase).sin()
                })
                .sum();
            Ok(spec.global_mean + spec.global_scale * s)
        }
        WorldMode::Analytic => unreachable!(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub prompt_id: u64,
    pub mu: f64,
    pub sigma: f64,
    /// Nuisance-feature center in `[0, 1]^d` (empty in analytic mode).
    pub center: Vec<f64>,
    pub split: Split,
}

/// Reference to one response of one prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ItemRef {
    pub prompt_id: u64,
    pub response_id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseItem {
    pub prompt_id: u64,
    pub response_id: u64,
    pub embedding: Vec<f64>,
    #[serde(rename = "utility")]
    pub golden_utility: f64,
}

impl ResponseItem {
    pub fn item_ref(&self) -> ItemRef {
        ItemRef {
            prompt_id: self.prompt_id,
            response_id: self.response_id,
        }
    }

    /// The embedding, or a mode error for analytic worlds.
    pub fn embedding(&self) -> Result<&[f64]> {
        if self.embedding.is_empty() {
            Err(Error::Mode {
                mode: "analytic",
                what: "responses carry no embedding",
            })
        } else {
            Ok(&self.embedding)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptGroup {
    pub prompt: PromptSpec,
    pub items: Vec<ResponseItem>,
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub config: WorldConfig,
    pub reward_spec: GoldenRewardSpec,
    pub train: Vec<PromptGroup>,
    pub test: Vec<PromptGroup>,
    /// Number of utility draws clamped into the channel range.
    pub clamped_draws: usize,
    index: HashMap<u64, (Split, usize, usize)>,
}

impl PartialEq for SyntheticWorld {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.reward_spec == other.reward_spec
            && self.train == other.train
            && self.test == other.test
            && self.clamped_draws == other.clamped_draws
    }
}

/// Generate a world. Deterministic in `(cfg, rng state)`.
pub fn gen_world(cfg: &WorldConfig, rng: &mut SimRng) -> Result<SyntheticWorld> {
    cfg.validate()?;
    let smooth_terms = if cfg.mode == WorldMode::SmoothRandom {
        GoldenRewardSpec::sample_smooth(cfg, rng)
    } else {
        Vec::new()
    };
    let reward_spec = GoldenRewardSpec {
        mode: cfg.mode,
        dim: cfg.dim,
        global_mean: cfg.global_mean,
        global_scale: cfg.global_scale,
        smooth_terms,
    };

    let mut next_response = 0u64;
    let mut clamped = 0usize;
    let mut total = 0usize;
    let mut make_groups = |split: Split, first_id: u64, n: usize, per: usize, rng: &mut SimRng| {
        let mut groups = Vec::with_capacity(n);
        for p in 0..n {
            let prompt_id = first_id + p as u64;
            let (mu, sigma) = cfg.prior.sample(rng);
            let center = if cfg.mode == WorldMode::Analytic {
                Vec::new()
            } else {
                (0..cfg.dim).map(|_| rng.random_range(0.2..0.8)).collect()
            };
            let prompt = PromptSpec {
                prompt_id,
                mu,
                sigma,
                center,
                split,
            };
            let mut items = Vec::with_capacity(per);
            for _ in 0..per {
                let (embedding, utility) =
                    draw_response(cfg, &reward_spec, &prompt, rng, &mut clamped)?;
                total += 1;
                items.push(ResponseItem {
                    prompt_id,
                    response_id: next_response,
                    embedding,
                    golden_utility: utility,
                });
                next_response += 1;
            }
            groups.push(PromptGroup { prompt, items });
        }
        Ok::<_, Error>(groups)
    };

    let train = make_groups(Split::Train, 0, cfg.n_train_prompts, cfg.k_per_prompt, rng)?;
    let test = make_groups(
        Split::Test,
        cfg.n_train_prompts as u64,
        cfg.n_test_prompts,
        cfg.n_test_candidates,
        rng,
    )?;

    if cfg.mode == WorldMode::UtilityChannel && clamped * 100 > total {
        return Err(Error::ChannelOverflow { clamped, total });
    }
    if clamped > 0 {
        log::debug!("utility channel clamped {clamped} of {total} draws");
    }

    Ok(SyntheticWorld::assemble(
        cfg.clone(),
        reward_spec,
        train,
        test,
        clamped,
    ))
}

fn draw_response(
    cfg: &WorldConfig,
    spec: &GoldenRewardSpec,
    prompt: &PromptSpec,
    rng: &mut SimRng,
    clamped: &mut usize,
) -> Result<(Vec<f64>, f64)> {
    let nuisance = |j: usize, rng: &mut SimRng| {
        let e: f64 = StandardNormal.sample(rng);
        (prompt.center[j] + cfg.nuisance_sd * e).clamp(0.0, 1.0)
    };
    match cfg.mode {
        WorldMode::Analytic => {
            let e: f64 = StandardNormal.sample(rng);
            Ok((Vec::new(), prompt.mu + prompt.sigma * e))
        }
        WorldMode::UtilityChannel => {
            let e: f64 = StandardNormal.sample(rng);
            let r = prompt.mu + prompt.sigma * e;
            let standardized = (r - spec.global_mean) / spec.global_scale;
            if standardized.abs() > CHANNEL_CLAMP {
                *clamped += 1;
            }
            let (lo, hi) = GoldenRewardSpec::channel_bounds();
            let z0 = std_normal_cdf(standardized).clamp(lo, hi);
            let mut embedding = Vec::with_capacity(cfg.dim);
            embedding.push(z0);
            for j in 1..cfg.dim {
                embedding.push(nuisance(j, rng));
            }
            let utility = true_utility(spec, &embedding)?;
            Ok((embedding, utility))
        }
        WorldMode::SmoothRandom => {
            let embedding: Vec<f64> = (0..cfg.dim).map(|j| nuisance(j, rng)).collect();
            let utility = true_utility(spec, &embedding)?;
            Ok((embedding, utility))
        }
    }
}

impl SyntheticWorld {
    fn assemble(
        config: WorldConfig,
        reward_spec: GoldenRewardSpec,
        train: Vec<PromptGroup>,
        test: Vec<PromptGroup>,
        clamped_draws: usize,
    ) -> Self {
        let mut index = HashMap::new();
        for (split, groups) in [(Split::Train, &train), (Split::Test, &test)] {
            for (g, group) in groups.iter().enumerate() {
                for (i, item) in group.items.iter().enumerate() {
                    index.insert(item.response_id, (split, g, i));
                }
            }
        }
        SyntheticWorld {
            config,
            reward_spec,
            train,
            test,
            clamped_draws,
            index,
        }
    }

    pub fn groups(&self, split: Split) -> &[PromptGroup] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn prompt_group(&self, prompt_id: u64) -> Result<&PromptGroup> {
        let n_train = self.train.len() as u64;
        let group = if prompt_id < n_train {
            self.train.get(prompt_id as usize)
        } else {
            self.test.get((prompt_id - n_train) as usize)
        };
        group
            .filter(|g| g.prompt.prompt_id == prompt_id)
            .ok_or(Error::UnknownPrompt(prompt_id))
    }

    pub fn item(&self, r: ItemRef) -> Result<&ResponseItem> {
        let unknown = Error::UnknownItem {
            prompt_id: r.prompt_id,
            response_id: r.response_id,
        };
        let &(split, g, i) = self.index.get(&r.response_id).ok_or(unknown)?;
        let item = &self.groups(split)[g].items[i];
        if item.prompt_id != r.prompt_id {
            return Err(Error::UnknownItem {
                prompt_id: r.prompt_id,
                response_id: r.response_id,
            });
        }
        Ok(item)
    }

    pub fn has_embeddings(&self) -> bool {
        self.config.mode != WorldMode::Analytic
    }

    pub fn n_items(&self) -> usize {
        self.index.len()
    }

    /// Serialize as JSONL: one header record, then one record per response.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let header = WorldHeader {
            kind: "header".into(),
            format_version: WORLD_FORMAT_VERSION,
            config: self.config.clone(),
            reward_spec: self.reward_spec.clone(),
            prompts: self
                .train
                .iter()
                .chain(&self.test)
                .map(|g| g.prompt.clone())
                .collect(),
            clamped_draws: self.clamped_draws,
        };
        let io = |e| Error::io("<world writer>", e);
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n").map_err(io)?;
        for item in self.train.iter().chain(&self.test).flat_map(|g| &g.items) {
            serde_json::to_writer(&mut w, item)?;
            w.write_all(b"\n").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read_jsonl<R: Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let first = lines
            .next()
            .ok_or(Error::Empty("world file"))?
            .map_err(|e| Error::io("<world reader>", e))?;
        let header: WorldHeader = serde_json::from_str(&first)?;
        if header.format_version != WORLD_FORMAT_VERSION {
            return Err(Error::Version {
                found: header.format_version,
                expected: WORLD_FORMAT_VERSION,
            });
        }
        let mut train = Vec::new();
        let mut test = Vec::new();
        let mut slot: HashMap<u64, (Split, usize)> = HashMap::new();
        for prompt in header.prompts {
            let target = match prompt.split {
                Split::Train => &mut train,
                Split::Test => &mut test,
            };
            slot.insert(prompt.prompt_id, (prompt.split, target.len()));
            target.push(PromptGroup {
                prompt,
                items: Vec::new(),
            });
        }
        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io("<world reader>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let item: ResponseItem = serde_json::from_str(&line)
                .map_err(|e| Error::parse(format!("world line {}", lineno + 2), e.to_string()))?;
            let &(split, g) = slot
                .get(&item.prompt_id)
                .ok_or(Error::UnknownPrompt(item.prompt_id))?;
            let expected_dim = if header.config.mode == WorldMode::Analytic {
                0
            } else {
                header.config.dim
            };
            if item.embedding.len() != expected_dim {
                return Err(Error::Dimension {
                    expected: expected_dim,
                    got: item.embedding.len(),
                });
            }
            match split {
                Split::Train => train[g].items.push(item),
                Split::Test => test[g].items.push(item),
            }
        }
        Ok(SyntheticWorld::assemble(
            header.config,
            header.reward_spec,
            train,
            test,
            header.clamped_draws,
        ))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_jsonl(BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_jsonl(f)
    }
}

#[derive(Serialize, Deserialize)]
struct WorldHeader {
    kind: String,
    format_version: u32,
    config: WorldConfig,
    reward_spec: GoldenRewardSpec,
    prompts: Vec<PromptSpec>,
    clamped_draws: usize,
}

/// Response ids of a prompt, best golden utility first; ties by ascending id.
pub fn rank_responses_by_golden(world: &SyntheticWorld, prompt_id: u64) -> Result<Vec<u64>> {
    let group = world.prompt_group(prompt_id)?;
    Ok(rank_items(&group.items)
        .into_iter()
        .map(|i| group.items[i].response_id)
        .collect())
}

/// Positions into `items`, ordered by descending golden utility with
/// ascending response id breaking ties.
pub(crate) fn rank_items(items: &[ResponseItem]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| {
        items[b]
            .golden_utility
            .total_cmp(&items[a].golden_utility)
            .then(items[a].response_id.cmp(&items[b].response_id))
    });
    order
}
