//! Simulated annotators and pairing strategies.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{sigmoid, std_normal_cdf};
use crate::rng::SimRng;
use crate::synth::{rank_items, ItemRef, PromptGroup, Split, SyntheticWorld};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnnotatorFamily {
    /// Correct ordering with probability `σ(β |Δr|)`.
    SigmoidBeta,
    /// `P(left) = σ(r_left - r_right)`.
    BtLogistic,
    /// `P(left) = Φ(r_left - r_right)`.
    Probit,
    /// The `β → ∞` limit.
    Perfect,
    /// The `β = 0` limit.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorSpec {
    pub family: AnnotatorFamily,
    #[serde(default)]
    pub beta: f64,
}

impl AnnotatorSpec {
    pub fn sigmoid_beta(beta: f64) -> Result<Self> {
        let spec = AnnotatorSpec {
            family: AnnotatorFamily::SigmoidBeta,
            beta,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn perfect() -> Self {
        AnnotatorSpec {
            family: AnnotatorFamily::Perfect,
            beta: 0.0,
        }
    }

    pub fn random() -> Self {
        AnnotatorSpec {
            family: AnnotatorFamily::Random,
            beta: 0.0,
        }
    }

    pub fn bt_logistic() -> Self {
        AnnotatorSpec {
            family: AnnotatorFamily::BtLogistic,
            beta: 0.0,
        }
    }

    pub fn probit() -> Self {
        AnnotatorSpec {
            family: AnnotatorFamily::Probit,
            beta: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || self.beta.is_infinite() {
            return Err(Error::Domain {
                what: "annotator beta",
                value: self.beta,
                reason: "must be finite and non-negative (use the perfect family for β = ∞)",
            });
        }
        Ok(())
    }

    /// Probability that the left response is labelled preferred.
    pub fn prob_left(&self, r_left: f64, r_right: f64) -> f64 {
        let d = r_left - r_right;
        match self.family {
            AnnotatorFamily::SigmoidBeta => {
                if d == 0.0 {
                    0.5
                } else {
                    sigmoid(self.beta * d)
                }
            }
            AnnotatorFamily::BtLogistic => sigmoid(d),
            AnnotatorFamily::Probit => std_normal_cdf(d),
            AnnotatorFamily::Perfect => {
                if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    0.0
                } else {
                    0.5
                }
            }
            AnnotatorFamily::Random => 0.5,
        }
    }

    pub fn label(&self) -> String {
        match self.family {
            AnnotatorFamily::SigmoidBeta => format!("sigmoid-beta({})", self.beta),
            AnnotatorFamily::BtLogistic => "bt-logistic".into(),
            AnnotatorFamily::Probit => "probit".into(),
            AnnotatorFamily::Perfect => "perfect".into(),
            AnnotatorFamily::Random => "random".into(),
        }
    }
}

/// Pairwise label; serialized as `+1` (left preferred) or `-1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Label {
    Left,
    Right,
}

impl Label {
    pub fn sign(self) -> i8 {
        match self {
            Label::Left => 1,
            Label::Right => -1,
        }
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Left => Label::Right,
            Label::Right => Label::Left,
        }
    }
}

impl TryFrom<i8> for Label {
    type Error = String;
    fn try_from(v: i8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Label::Left),
            -1 => Ok(Label::Right),
            other => Err(format!("label must be +1 or -1, got {other}")),
        }
    }
}

impl From<Label> for i8 {
    fn from(l: Label) -> i8 {
        l.sign()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Annotation {
    pub label: Label,
    /// The two utilities were exactly equal; the label is a fair coin.
    pub tied: bool,
}

/// Label one comparison. Consumes exactly one uniform draw from `rng`, so
/// annotators sharing a stream are coupled draw-by-draw.
pub fn annotate(spec: &AnnotatorSpec, r_left: f64, r_right: f64, rng: &mut SimRng) -> Annotation {
    let p = spec.prob_left(r_left, r_right);
    let u: f64 = rng.random();
    Annotation {
        label: if u < p { Label::Left } else { Label::Right },
        tied: r_left == r_right,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairingKind {
    SamePromptRandom,
    CrossPromptRandom,
    /// Two middle-ranked responses of one prompt.
    Similar,
    /// Best and worst response of one prompt.
    Diverse,
}

impl PairingKind {
    pub const ALL: [PairingKind; 4] = [
        PairingKind::SamePromptRandom,
        PairingKind::CrossPromptRandom,
        PairingKind::Similar,
        PairingKind::Diverse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PairingKind::SamePromptRandom => "same-prompt-random",
            PairingKind::CrossPromptRandom => "cross-prompt-random",
            PairingKind::Similar => "similar",
            PairingKind::Diverse => "diverse",
        }
    }
}

impl std::str::FromStr for PairingKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PairingKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown pairing kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ItemPair {
    pub left: ItemRef,
    pub right: ItemRef,
    pub pairing: PairingKind,
}

/// Sample `count` unlabeled pairs from the training prompts of `world`.
pub fn build_pairs(
    world: &SyntheticWorld,
    kind: PairingKind,
    count: usize,
    rng: &mut SimRng,
) -> Result<Vec<ItemPair>> {
    build_pairs_in(world.groups(Split::Train), kind, count, rng)
}

/// Sample pairs from an explicit list of prompt groups.
pub fn build_pairs_in(
    groups: &[PromptGroup],
    kind: PairingKind,
    count: usize,
    rng: &mut SimRng,
) -> Result<Vec<ItemPair>> {
    if count == 0 {
        return Err(Error::Empty("pair count"));
    }
    if groups.is_empty() {
        return Err(Error::Config("no prompts to pair from".into()));
    }
    let min_k = groups.iter().map(|g| g.items.len()).min().unwrap_or(0);
    let mut pairs = Vec::with_capacity(count);
    match kind {
        PairingKind::SamePromptRandom => {
            if min_k < 2 {
                return Err(Error::Config(
                    "same-prompt pairing needs at least 2 responses per prompt".into(),
                ));
            }
            for _ in 0..count {
                let g = &groups[rng.random_range(0..groups.len())];
                let a = rng.random_range(0..g.items.len());
                let mut b = rng.random_range(0..g.items.len() - 1);
                if b >= a {
                    b += 1;
                }
                pairs.push(ItemPair {
                    left: g.items[a].item_ref(),
                    right: g.items[b].item_ref(),
                    pairing: kind,
                });
            }
        }
        PairingKind::CrossPromptRandom => {
            if groups.len() < 2 {
                return Err(Error::Config(
                    "cross-prompt pairing needs at least 2 prompts".into(),
                ));
            }
            // Uniform over items: prefix sums of group sizes.
            let mut offsets = Vec::with_capacity(groups.len() + 1);
            offsets.push(0usize);
            for g in groups {
                offsets.push(offsets.last().unwrap() + g.items.len());
            }
            let total = *offsets.last().unwrap();
            let locate = |flat: usize| {
                let g = offsets.partition_point(|&o| o <= flat) - 1;
                (g, flat - offsets[g])
            };
            for _ in 0..count {
                let (ga, ia) = locate(rng.random_range(0..total));
                let (gb, ib) = loop {
                    let (gb, ib) = locate(rng.random_range(0..total));
                    if gb != ga {
                        break (gb, ib);
                    }
                };
                pairs.push(ItemPair {
                    left: groups[ga].items[ia].item_ref(),
                    right: groups[gb].items[ib].item_ref(),
                    pairing: kind,
                });
            }
        }
        PairingKind::Similar | PairingKind::Diverse => {
            if min_k < 2 {
                return Err(Error::Config(format!(
                    "{} pairing needs at least 2 responses per prompt",
                    kind.name()
                )));
            }
            let rankings: Vec<Vec<usize>> = groups.iter().map(|g| rank_items(&g.items)).collect();
            for _ in 0..count {
                let gi = rng.random_range(0..groups.len());
                let g = &groups[gi];
                let order = &rankings[gi];
                let k = order.len();
                // Ranks are 1-based: similar takes ⌈k/2⌉ and ⌈k/2⌉+1, diverse 1 and k.
                let (ra, rb) = match kind {
                    PairingKind::Similar => {
                        let mid = k.div_ceil(2);
                        (mid, mid + 1)
                    }
                    _ => (1, k),
                };
                let (mut a, mut b) = (order[ra - 1], order[rb - 1]);
                if rng.random::<bool>() {
                    std::mem::swap(&mut a, &mut b);
                }
                pairs.push(ItemPair {
                    left: g.items[a].item_ref(),
                    right: g.items[b].item_ref(),
                    pairing: kind,
                });
            }
        }
    }
    Ok(pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub left: ItemRef,
    pub right: ItemRef,
    pub h: Label,
    pub pairing: PairingKind,
    pub annotator: AnnotatorSpec,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub tied: bool,
}

impl PreferenceRecord {
    /// `(preferred, other)` according to the label.
    pub fn winner_loser(&self) -> (ItemRef, ItemRef) {
        match self.h {
            Label::Left => (self.left, self.right),
            Label::Right => (self.right, self.left),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceDataset {
    pub records: Vec<PreferenceRecord>,
    /// Fraction of non-tied records whose label agrees with the golden order.
    pub accuracy: f64,
    pub n_tied: usize,
}

/// Label every pair independently, preserving input order.
pub fn annotate_dataset(
    world: &SyntheticWorld,
    pairs: &[ItemPair],
    spec: &AnnotatorSpec,
    rng: &mut SimRng,
) -> Result<PreferenceDataset> {
    if pairs.is_empty() {
        return Err(Error::Empty("pairs to annotate"));
    }
    spec.validate()?;
    let mut records = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let rl = world.item(pair.left)?.golden_utility;
        let rr = world.item(pair.right)?.golden_utility;
        let a = annotate(spec, rl, rr, rng);
        records.push(PreferenceRecord {
            left: pair.left,
            right: pair.right,
            h: a.label,
            pairing: pair.pairing,
            annotator: *spec,
            tied: a.tied,
        });
    }
    let (accuracy, n_tied) = annotation_accuracy(world, &records)?;
    Ok(PreferenceDataset {
        records,
        accuracy,
        n_tied,
    })
}

/// Agreement of labels with the golden ordering, excluding exact ties.
/// Returns `(accuracy, number of ties)`.
pub fn annotation_accuracy(
    world: &SyntheticWorld,
    records: &[PreferenceRecord],
) -> Result<(f64, usize)> {
    let mut correct = 0usize;
    let mut counted = 0usize;
    let mut tied = 0usize;
    for r in records {
        let d = world.item(r.left)?.golden_utility - world.item(r.right)?.golden_utility;
        if d == 0.0 {
            tied += 1;
            continue;
        }
        counted += 1;
        if (d > 0.0) == (r.h == Label::Left) {
            correct += 1;
        }
    }
    let acc = if counted == 0 {
        f64::NAN
    } else {
        correct as f64 / counted as f64
    };
    Ok((acc, tied))
}

pub fn write_records_jsonl<W: Write>(records: &[PreferenceRecord], mut w: W) -> Result<()> {
    let io = |e| Error::io("<dataset writer>", e);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Parse a JSONL dataset; labels other than ±1 are rejected with the line
/// number.
pub fn read_records_jsonl<R: Read>(r: R) -> Result<Vec<PreferenceRecord>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line.map_err(|e| Error::io("<dataset reader>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PreferenceRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(format!("dataset line {}", i + 1), e.to_string()))?;
        if rec.left == rec.right {
            return Err(Error::parse(
                format!("dataset line {}", i + 1),
                "left and right refer to the same item",
            ));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn save_records(records: &[PreferenceRecord], path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_records_jsonl(records, BufWriter::new(f))
}

pub fn load_records(path: &Path) -> Result<Vec<PreferenceRecord>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_records_jsonl(f)
}
