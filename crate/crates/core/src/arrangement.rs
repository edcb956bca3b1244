//! Joint arrangements (column orders of a pseudo-image) and selection of the
//! most mutually dissimilar arrangement set among random draws.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// A permutation of joint indices `[0, M)`; entry `k` is the joint placed
/// in column `k`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct JointArrangement(Vec<usize>);

impl JointArrangement {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; order.len()];
        for &j in &order {
            if j >= order.len() || std::mem::replace(&mut seen[j], true) {
                return Err(Error::Contract(format!("{order:?} is not a permutation")));
            }
        }
        Ok(JointArrangement(order))
    }

    pub fn identity(m: usize) -> Self {
        JointArrangement((0..m).collect())
    }

    pub fn reversed(&self) -> Self {
        JointArrangement(self.0.iter().rev().copied().collect())
    }

    pub fn order(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `positions()[j]` is the column holding joint `j`.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.0.len()];
        for (k, &j) in self.0.iter().enumerate() {
            pos[j] = k;
        }
        pos
    }

    /// Renames every joint `j` to `relabel[j]`.
    pub fn relabeled(&self, relabel: &JointArrangement) -> Self {
        JointArrangement(self.0.iter().map(|&j| relabel.0[j]).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArrangementSet {
    members: Vec<JointArrangement>,
}

impl ArrangementSet {
    pub fn new(members: Vec<JointArrangement>) -> Result<Self> {
        let m = members
            .first()
            .ok_or_else(|| Error::Contract("arrangement set is empty".into()))?
            .len();
        if members.iter().any(|a| a.len() != m) {
            return Err(Error::Contract("arrangements differ in length".into()));
        }
        Ok(ArrangementSet { members })
    }

    pub fn members(&self) -> &[JointArrangement] {
        &self.members
    }

    /// Number of arrangements, `L`.
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Number of joints, `M`.
    pub fn joints(&self) -> usize {
        self.members[0].len()
    }
}

/// Random stream for draw `draw` of a selection seeded with `seed`.
fn draw_rng(seed: u64, draw: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(draw);
    rng
}

fn draw_set(seed: u64, draw: u64, l: usize, m: usize) -> ArrangementSet {
    let mut rng = draw_rng(seed, draw);
    let members = (0..l)
        .map(|_| {
            let mut order: Vec<usize> = (0..m).collect();
            order.shuffle(&mut rng);
            JointArrangement(order)
        })
        .collect();
    ArrangementSet { members }
}

/// `l` independent uniformly random permutations of `[0, m)`.
pub fn sample_set(seed: u64, l: usize, m: usize) -> Result<ArrangementSet> {
    if l == 0 || m == 0 {
        return Err(Error::Contract(format!("need L >= 1 and M >= 1, got L={l}, M={m}")));
    }
    Ok(draw_set(seed, 0, l, m))
}

/// Sum over the other members of how far joint `joint` moves relative to
/// member `member`.
pub fn joint_displacement(joint: usize, member: usize, set: &ArrangementSet) -> u64 {
    let own = set.members[member].positions()[joint];
    set.members
        .iter()
        .enumerate()
        .filter(|&(q, _)| q != member)
        .map(|(_, a)| own.abs_diff(a.positions()[joint]) as u64)
        .sum()
}

/// Total pairwise column displacement of every joint across the set.
pub fn dissimilarity(set: &ArrangementSet) -> u64 {
    let positions: Vec<Vec<usize>> = set.members.iter().map(|a| a.positions()).collect();
    let mut total = 0u64;
    for (l, pl) in positions.iter().enumerate() {
        for pq in &positions[l + 1..] {
            total += pl.iter().zip(pq).map(|(&a, &b)| a.abs_diff(b) as u64).sum::<u64>();
        }
    }
    // Each unordered pair appears once above but twice in the (l, q != l) sum.
    2 * total
}

/// Largest possible score for `l` members over `m` joints.
pub fn max_dissimilarity(l: usize, m: usize) -> u64 {
    (l * l.saturating_sub(1) * (m * m / 2)) as u64
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Selection {
    pub set: ArrangementSet,
    pub score: u64,
    /// Index of the winning draw.
    pub draw: u64,
    pub seed: u64,
    pub draws: u64,
}

/// Scores `n` random sets and keeps the most dissimilar; ties go to the
/// earliest draw. The result does not depend on the rayon pool size.
pub fn select_best(seed: u64, n: u64, l: usize, m: usize) -> Result<Selection> {
    if n == 0 || l == 0 || m == 0 {
        return Err(Error::Contract(format!("need N, L, M >= 1, got N={n}, L={l}, M={m}")));
    }
    let (draw, score) = (0..n)
        .into_par_iter()
        .map(|d| (d, dissimilarity(&draw_set(seed, d, l, m))))
        .reduce(
            || (u64::MAX, 0),
            |a, b| {
                // Higher score wins; on equal score the lower draw index.
                if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) {
                    b
                } else {
                    a
                }
            },
        );
    Ok(Selection {
        set: draw_set(seed, draw, l, m),
        score,
        draw,
        seed,
        draws: n,
    })
}

/// Replays the random set of draw `draw` of a selection.
pub fn replay_draw(seed: u64, draw: u64, l: usize, m: usize) -> ArrangementSet {
    draw_set(seed, draw, l, m)
}

impl Selection {
    /// Text form: `key value` header lines for M, L, N, seed and score,
    /// then one space-separated permutation per line.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# skelvit arrangement set\n");
        writeln!(out, "M {}", self.set.joints()).unwrap();
        writeln!(out, "L {}", self.set.len()).unwrap();
        writeln!(out, "N {}", self.draws).unwrap();
        writeln!(out, "seed {}", self.seed).unwrap();
        writeln!(out, "score {}", self.score).unwrap();
        writeln!(out, "draw {}", self.draw).unwrap();
        for a in &self.set.members {
            let line: Vec<String> = a.0.iter().map(|j| j.to_string()).collect();
            writeln!(out, "{}", line.join(" ")).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            source_id: "arrangement file".into(),
            line,
            message,
        };
        let mut header = std::collections::BTreeMap::new();
        let mut members = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let first = parts.next().unwrap();
            if first.chars().all(|c| c.is_ascii_digit()) {
                let order = std::iter::once(first)
                    .chain(parts)
                    .map(|t| t.parse::<usize>().map_err(|_| err(i + 1, format!("bad joint index {t:?}"))))
                    .collect::<Result<Vec<_>>>()?;
                members.push(JointArrangement::new(order).map_err(|e| err(i + 1, e.to_string()))?);
            } else {
                let value = parts
                    .next()
                    .and_then(|v| v.parse::<u64>().ok())
                    .ok_or_else(|| err(i + 1, format!("bad header line {line:?}")))?;
                header.insert(first.to_string(), value);
            }
        }
        let get = |k: &str| header.get(k).copied().ok_or_else(|| err(0, format!("missing header {k}")));
        let set = ArrangementSet::new(members).map_err(|e| err(0, e.to_string()))?;
        if get("M")? as usize != set.joints() || get("L")? as usize != set.len() {
            return Err(err(0, "header M/L disagree with the listed permutations".into()));
        }
        let score = get("score")?;
        if dissimilarity(&set) != score {
            return Err(err(0, format!("recorded score {score} does not match the set")));
        }
        Ok(Selection {
            set,
            score,
            draw: header.get("draw").copied().unwrap_or(0),
            seed: get("seed")?,
            draws: get("N")?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
