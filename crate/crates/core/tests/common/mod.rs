//! Synthetic corpora shared by the integration tests.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// One act per family, so pools never overlap.
pub const FAMILY_ACTS: [&str; 4] = ["民法", "公司法", "勞動基準法", "土地法"];

/// Claim templates with disjoint vocabularies per family.
const FAMILY_TEMPLATES: [&str; 4] = [
    "原告主張被告駕車不慎撞傷原告，請求賠償醫療費用及精神慰撫金",
    "股東會決議程序違反章程，請求確認董事會召集無效並撤銷該項選任",
    "雇主片面終止勞動契約，積欠資遣費與加班工資，勞工請求如數給付",
    "地政機關登記錯誤，鄰地界址爭議，請求塗銷所有權移轉並返還土地",
];

const VARIANT_SUFFIX: [&str; 3] = ["甲", "乙", "丙"];

pub const FAMILIES: usize = 4;
pub const PER_FAMILY: usize = 3;
pub const POOL: u32 = 8;
/// Cases per planted COA; also the sample size n.
pub const CASES: usize = 8;

pub fn coa_label(family: usize, variant: usize) -> String {
    format!("F{family}{}爭議", VARIANT_SUFFIX[variant])
}

pub fn family_of(label: &str) -> usize {
    label[1..2].parse().unwrap()
}

/// Per-article citation counts shared by every planted COA (sum 32 = 8
/// cases × 4 articles); COAs differ only in how the counts are laid over
/// their family pool.
const COUNT_PROFILE: [u32; 8] = [7, 6, 5, 4, 4, 3, 2, 1];

/// Rotation of [`COUNT_PROFILE`] used by each variant, per family.
const ROTATIONS: [[usize; 3]; 4] = [[0, 1, 3], [0, 2, 3], [0, 1, 4], [0, 3, 5]];

/// Eight 4-article cases over pool offsets 0..8 realizing `counts`
/// (greedy Gale–Ryser: each case takes the four articles with the most
/// citations left).
fn realize(counts: [u32; 8]) -> Vec<Vec<u32>> {
    let mut left = counts;
    (0..CASES)
        .map(|_| {
            let mut order: Vec<usize> = (0..8).collect();
            order.sort_by_key(|&a| (std::cmp::Reverse(left[a]), a));
            let mut picked: Vec<u32> = order[..4].iter().map(|&a| a as u32).collect();
            for &a in &order[..4] {
                left[a] -= 1;
            }
            picked.sort_unstable();
            picked
        })
        .collect()
}

/// 12 COAs in 4 families of 3. Each family cites its own pool of 8
/// articles and every COA's count vector is a permutation of one profile,
/// so all cross-family pairs look alike to every measure while
/// same-family pairs differ in how well their counts line up. Two small
/// COAs (below n cases) and procedural citations are mixed in as noise
/// that sampling and exclusion must remove.
pub fn planted_corpus_jsonl() -> String {
    let mut out = String::new();
    for family in 0..FAMILIES {
        let act = FAMILY_ACTS[family];
        for variant in 0..PER_FAMILY {
            let coa = coa_label(family, variant);
            let mut counts = COUNT_PROFILE;
            counts.rotate_left(ROTATIONS[family][variant]);
            for (j, offsets) in realize(counts).into_iter().enumerate() {
                let mut cites: Vec<String> = offsets
                    .iter()
                    .map(|off| {
                        let art = 100 * (family as u32 + 1) + off + 1;
                        format!(r#"{{"act":"{act}","article":{art}}}"#)
                    })
                    .collect();
                if j % 3 == 0 {
                    cites.push(format!("\"民事訴訟法第{}條\"", 78 + j));
                }
                let text = format!(
                    "{}{}，案號{}",
                    FAMILY_TEMPLATES[family], VARIANT_SUFFIX[variant], j
                );
                writeln!(
                    out,
                    r#"{{"case_id":"c{family}{variant}{j:02}","coa":"{coa}","claim_text":"{text}","citations":[{}]}}"#,
                    cites.join(",")
                )
                .unwrap();
            }
        }
    }
    for j in 0..3 {
        writeln!(
            out,
            r#"{{"case_id":"z{j:02}","coa":"雜項","claim_text":"其他","body_text":"依民法第184條第1項、第195條規定"}}"#
        )
        .unwrap();
    }
    out
}

pub struct Workspace {
    pub dir: tempfile::TempDir,
    pub config: PathBuf,
}

impl Workspace {
    pub fn ws(&self) -> PathBuf {
        self.dir.path().join("ws")
    }
}

/// Writes the planted corpus and a config pointing at it into a fresh
/// temp directory. `extra` is appended to the config verbatim.
pub fn planted_workspace(extra: &str) -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cases.jsonl"), planted_corpus_jsonl()).unwrap();
    let config = dir.path().join("coasim.toml");
    std::fs::write(&config, planted_config(extra)).unwrap();
    Workspace { dir, config }
}

pub fn planted_config(extra: &str) -> String {
    format!(
        r#"workspace = "ws"

[corpus]
path = "cases.jsonl"
format = "jsonl"

[sample]
m = {}
n = {CASES}
seed = 20

[embedding]
provider = "offline"
{extra}
"#,
        FAMILIES * PER_FAMILY
    )
}

/// Every file under `root` except manifests, keyed by relative path.
pub fn artifact_bytes(root: &Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            let rel = path
                .strip_prefix(root)
                .unwrap()
                .to_string_lossy()
                .into_owned();
            if rel.starts_with("manifests") {
                continue;
            }
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}
