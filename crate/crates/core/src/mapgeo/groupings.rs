//! The five distance groupings used to compare training conditions, and the
//! rank tests between them.
//!
//! Maps are keyed `group.condition.stage`, e.g. `FirstLeft.round.final`. An
//! `initial` map is the explanation of the pretrained model before fine-tuning.
//!
//! - I: final maps of different groups trained under the same condition
//! - II: per group, final vs initial map under round pretraining
//! - III: per group, final vs initial map under pocket pretraining
//! - IV: per group, final round map vs final pocket map
//! - V: final maps of two groups that started from the same pretrained source

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use super::{mann_whitney_u, wilcoxon_signed_rank, DistanceMatrix, TestResult};
use crate::data::{Group, PretrainScheme};

pub const GROUPINGS: [&str; 5] = ["I", "II", "III", "IV", "V"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Condition {
    Scratch,
    Pretrained(PretrainScheme),
}

impl Condition {
    pub const ALL: [Condition; 3] = [
        Condition::Scratch,
        Condition::Pretrained(PretrainScheme::Round),
        Condition::Pretrained(PretrainScheme::Pocket),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Condition::Scratch => "scratch",
            Condition::Pretrained(s) => s.name(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Initial,
    Final,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MapKey {
    pub group: Group,
    pub condition: Condition,
    pub stage: Stage,
}

impl MapKey {
    pub fn final_map(group: Group, condition: Condition) -> Self {
        Self {
            group,
            condition,
            stage: Stage::Final,
        }
    }

    pub fn initial_map(group: Group, scheme: PretrainScheme) -> Self {
        Self {
            group,
            condition: Condition::Pretrained(scheme),
            stage: Stage::Initial,
        }
    }
}

impl fmt::Display for MapKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let stage = match self.stage {
            Stage::Initial => "initial",
            Stage::Final => "final",
        };
        write!(f, "{}.{}.{}", self.group, self.condition.name(), stage)
    }
}

impl FromStr for MapKey {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split('.').collect();
        let [g, c, st] = parts[..] else {
            return Err(format!("map key `{s}` is not group.condition.stage"));
        };
        let group = g.parse()?;
        let condition = match c.to_ascii_lowercase().as_str() {
            "scratch" => Condition::Scratch,
            other => Condition::Pretrained(other.parse()?),
        };
        let stage = match st.to_ascii_lowercase().as_str() {
            "initial" => Stage::Initial,
            "final" => Stage::Final,
            _ => return Err(format!("unknown stage `{st}` (initial|final)")),
        };
        if stage == Stage::Initial && condition == Condition::Scratch {
            return Err("scratch models have no initial map".into());
        }
        Ok(Self {
            group,
            condition,
            stage,
        })
    }
}

/// One row of a grouping: the pair compared and its distance.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupingRow {
    pub pair: String,
    /// Group the row is paired by (II, III and IV only).
    pub group: Option<Group>,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroupingDistances {
    /// Indexed like [`GROUPINGS`].
    pub rows: [Vec<GroupingRow>; 5],
}

impl GroupingDistances {
    pub fn values(&self, g: usize) -> Vec<f64> {
        self.rows[g].iter().map(|r| r.distance).collect()
    }

    /// `grouping,pair,distance`
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "grouping,pair,distance")?;
        for (name, rows) in GROUPINGS.iter().zip(&self.rows) {
            for r in rows {
                writeln!(w, "{name},{},{}", r.pair, r.distance)?;
            }
        }
        Ok(())
    }
}

/// Collects every grouping row whose maps are both present in `dm` (labels that do
/// not parse as map keys are ignored).
pub fn grouping_distances(dm: &DistanceMatrix) -> GroupingDistances {
    let d = |a: MapKey, b: MapKey| {
        dm.get(&a.to_string(), &b.to_string())
            .map(|v| (format!("{a}|{b}"), v))
    };
    let mut out = GroupingDistances::default();
    for c in Condition::ALL {
        for (i, &g) in Group::ALL.iter().enumerate() {
            for &h in &Group::ALL[i + 1..] {
                if let Some((pair, distance)) = d(MapKey::final_map(g, c), MapKey::final_map(h, c))
                {
                    out.rows[0].push(GroupingRow {
                        pair,
                        group: None,
                        distance,
                    });
                }
            }
        }
    }
    for g in Group::ALL {
        for (slot, s) in [(1, PretrainScheme::Round), (2, PretrainScheme::Pocket)] {
            if let Some((pair, distance)) = d(
                MapKey::final_map(g, Condition::Pretrained(s)),
                MapKey::initial_map(g, s),
            ) {
                out.rows[slot].push(GroupingRow {
                    pair,
                    group: Some(g),
                    distance,
                });
            }
        }
        let (r, p) = (
            Condition::Pretrained(PretrainScheme::Round),
            Condition::Pretrained(PretrainScheme::Pocket),
        );
        if let Some((pair, distance)) = d(MapKey::final_map(g, r), MapKey::final_map(g, p)) {
            out.rows[3].push(GroupingRow {
                pair,
                group: Some(g),
                distance,
            });
        }
    }
    for s in PretrainScheme::ALL {
        for (i, &g) in Group::ALL.iter().enumerate() {
            for &h in &Group::ALL[i + 1..] {
                if g.pretrain_sources(s) != h.pretrain_sources(s) {
                    continue;
                }
                let c = Condition::Pretrained(s);
                if let Some((pair, distance)) = d(MapKey::final_map(g, c), MapKey::final_map(h, c))
                {
                    out.rows[4].push(GroupingRow {
                        pair,
                        group: None,
                        distance,
                    });
                }
            }
        }
    }
    out
}

/// Outcome of one comparison; `result` is `None` when a side had no rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupingTest {
    pub comparison: String,
    pub paired: bool,
    pub result: Option<TestResult>,
}

fn paired_by_group(a: &[GroupingRow], b: &[GroupingRow]) -> (Vec<f64>, Vec<f64>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for ra in a {
        if let Some(rb) = b.iter().find(|rb| rb.group == ra.group) {
            xs.push(ra.distance);
            ys.push(rb.distance);
        }
    }
    (xs, ys)
}

/// II vs IV, III vs IV and II vs III as paired signed-rank tests (paired by group);
/// V vs IV and I vs IV as Mann-Whitney tests.
pub fn grouping_tests(g: &GroupingDistances) -> Vec<GroupingTest> {
    let mut out = Vec::new();
    for (a, b) in [(1, 3), (2, 3), (1, 2)] {
        let (x, y) = paired_by_group(&g.rows[a], &g.rows[b]);
        out.push(GroupingTest {
            comparison: format!("{} vs {}", GROUPINGS[a], GROUPINGS[b]),
            paired: true,
            result: wilcoxon_signed_rank(&x, &y).ok(),
        });
    }
    for (a, b) in [(4, 3), (0, 3)] {
        out.push(GroupingTest {
            comparison: format!("{} vs {}", GROUPINGS[a], GROUPINGS[b]),
            paired: false,
            result: mann_whitney_u(&g.values(a), &g.values(b)).ok(),
        });
    }
    out
}

/// `comparison,statistic,p,method,flags`
pub fn write_tests_csv<W: Write>(tests: &[GroupingTest], mut w: W) -> std::io::Result<()> {
    writeln!(w, "comparison,statistic,p,method,flags")?;
    for t in tests {
        let kind = if t.paired { "wilcoxon" } else { "mann-whitney" };
        match &t.result {
            Some(r) => {
                let flags = if r.all_zero { "all-zero" } else { "" };
                writeln!(
                    w,
                    "{},{},{},{}-{},{}",
                    t.comparison,
                    r.statistic,
                    r.p,
                    kind,
                    r.method.name(),
                    flags
                )?;
            }
            None => writeln!(w, "{},,,{kind},insufficient", t.comparison)?,
        }
    }
    Ok(())
}
