//! Case records, statute citation parsing and per-COA sampling.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;
use std::sync::LazyLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A normalized statute citation: act name, article number and optional
/// sub-article (the `3` in `185-3`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ArticleRef {
    pub act: String,
    pub article: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub: Option<u32>,
}

impl ArticleRef {
    /// Returns `None` when the act is blank or the article number is zero.
    pub fn new(act: &str, article: u32, sub: Option<u32>) -> Option<Self> {
        let act = normalize_act(act);
        if act.is_empty() || article == 0 {
            return None;
        }
        Some(Self { act, article, sub })
    }
}

impl fmt::Display for ArticleRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.sub {
            Some(sub) => write!(f, "{}第{}-{}條", self.act, self.article, sub),
            None => write!(f, "{}第{}條", self.act, self.article),
        }
    }
}

fn normalize_act(act: &str) -> String {
    act.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Maps full-width digits and dash variants to their ASCII forms.
fn normalize_width(text: &str) -> String {
    text.chars()
        .map(|c| match c {
            '０'..='９' => char::from(b'0' + (c as u32 - '０' as u32) as u8),
            '－' | '‐' | '‑' | '‒' | '–' | '—' | '―' | '﹣' => '-',
            '\u{3000}' => ' ',
            other => other,
        })
        .collect()
}

static SINGLE_CITATION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"^(?P<act>.*?)\s*第?\s*(?P<art>[0-9]+)\s*條?\s*(?:(?:-|之)\s*(?P<sub>[0-9]+))?\s*條?(?:\s*第\s*[0-9]+\s*[項款目])*$",
    )
    .expect("citation pattern")
});

/// Parses one citation such as `民法第229條`, `刑法第185-3條`, `刑法185-3`
/// or `刑法第185條之3`. Paragraph and item markers (`第1項`, `第2款`) are
/// dropped, as in [`extract_citations`]. Anything that does not look like an act followed
/// by an article number yields `None`.
pub fn parse_citation(text: &str) -> Option<ArticleRef> {
    let text = normalize_width(text);
    let caps = SINGLE_CITATION.captures(text.trim())?;
    let act = caps.name("act")?.as_str();
    if act
        .chars()
        .last()
        .is_some_and(|c| c.is_ascii_digit() || c == '-')
    {
        return None;
    }
    let article = caps["art"].parse().ok()?;
    let sub = match caps.name("sub") {
        Some(m) => Some(m.as_str().parse().ok()?),
        None => None,
    };
    ArticleRef::new(act, article, sub)
}

static BODY_CITATION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?P<act>\p{Han}{1,24}?(?:法律|法典|條例|通則|規則|細則|辦法|法))\s*第\s*(?P<art>[0-9]+)\s*(?:(?:條\s*之|-)\s*(?P<sub>[0-9]+)\s*條?|條)(?:\s*第\s*[0-9]+\s*[項款目])*",
    )
    .expect("body citation pattern")
});

static CONTINUATION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\s*[、，,及與暨和]\s*第\s*(?P<art>[0-9]+)\s*(?:(?:條\s*之|-)\s*(?P<sub>[0-9]+)\s*條?|條)(?:\s*第\s*[0-9]+\s*[項款目])*")
        .expect("continuation pattern")
});

/// Verbs that commonly precede an act name in running text.
const ACT_LEADERS: [&str; 9] = [
    "依據", "依照", "依", "按", "違反", "適用", "準用", "參照", "援引",
];

fn trim_act_prefix(candidate: &str) -> &str {
    let mut act = candidate;
    for leader in ACT_LEADERS {
        if let Some(pos) = act.rfind(leader) {
            act = &act[pos + leader.len()..];
        }
    }
    act.trim_start_matches(['及', '與', '暨', '並', '和', '、'])
}

/// Scans free text for every citation it contains. `同法`/`本法` refer back
/// to the most recently named act, and `民法第229條、第233條` yields both
/// articles.
pub fn extract_citations(text: &str) -> Vec<ArticleRef> {
    let text = normalize_width(text);
    let mut found = Vec::new();
    let mut last_act: Option<String> = None;
    let mut cursor = 0;
    while let Some(caps) = BODY_CITATION.captures_at(&text, cursor) {
        let whole = caps.get(0).expect("match");
        let mut act = trim_act_prefix(&caps["act"]).to_string();
        if act == "同法" || act == "本法" {
            match &last_act {
                Some(prev) => act = prev.clone(),
                None => {
                    cursor = whole.end();
                    continue;
                }
            }
        }
        let sub = caps.name("sub").and_then(|m| m.as_str().parse().ok());
        if let Some(r) = caps["art"]
            .parse()
            .ok()
            .and_then(|a| ArticleRef::new(&act, a, sub))
        {
            found.push(r);
        }
        cursor = whole.end();
        while let Some(cont) = CONTINUATION.captures(&text[cursor..]) {
            let sub = cont.name("sub").and_then(|m| m.as_str().parse().ok());
            if let Some(r) = cont["art"]
                .parse()
                .ok()
                .and_then(|a| ArticleRef::new(&act, a, sub))
            {
                found.push(r);
            }
            cursor += cont.get(0).expect("match").end();
        }
        last_act = Some(act);
    }
    found
}

/// One sampled judgment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub coa: String,
    #[serde(default)]
    pub claim_text: String,
    #[serde(default)]
    pub citations: BTreeSet<ArticleRef>,
}

/// An immutable collection of cases indexed by COA label.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    cases: Vec<CaseRecord>,
    coa_index: BTreeMap<String, Vec<usize>>,
}

impl Corpus {
    pub fn new(cases: Vec<CaseRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(cases.len());
        for case in &cases {
            if !seen.insert(case.case_id.as_str()) {
                return Err(Error::InvalidParameter(format!(
                    "duplicate case_id {}",
                    case.case_id
                )));
            }
        }
        Ok(Self::from_unique(cases))
    }

    fn from_unique(cases: Vec<CaseRecord>) -> Self {
        let mut coa_index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, case) in cases.iter().enumerate() {
            coa_index.entry(case.coa.clone()).or_default().push(i);
        }
        Self { cases, coa_index }
    }

    pub fn cases(&self) -> &[CaseRecord] {
        &self.cases
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    /// COA labels in lexicographic order.
    pub fn coas(&self) -> impl Iterator<Item = &str> {
        self.coa_index.keys().map(String::as_str)
    }

    pub fn coa_count(&self) -> usize {
        self.coa_index.len()
    }

    /// Cases of one COA, in corpus order.
    pub fn cases_of<'a>(&'a self, coa: &str) -> impl Iterator<Item = &'a CaseRecord> + 'a {
        self.coa_index
            .get(coa)
            .into_iter()
            .flatten()
            .map(move |&i| &self.cases[i])
    }

    /// `(coa, case ids)` for every COA.
    pub fn coa_index(&self) -> impl Iterator<Item = (&str, Vec<&str>)> {
        self.coa_index.iter().map(move |(coa, idx)| {
            (
                coa.as_str(),
                idx.iter()
                    .map(|&i| self.cases[i].case_id.as_str())
                    .collect(),
            )
        })
    }

    pub fn citation_total(&self) -> usize {
        self.cases.iter().map(|c| c.citations.len()).sum()
    }

    pub fn into_cases(self) -> Vec<CaseRecord> {
        self.cases
    }

    pub fn write_jsonl(&self, out: &mut impl std::io::Write) -> Result<()> {
        for case in &self.cases {
            serde_json::to_writer(&mut *out, case)?;
            out.write_all(b"\n")
                .map_err(|e| Error::io("<corpus output>", e))?;
        }
        Ok(())
    }
}

/// Acts whose citations are ignored when comparing cases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionList {
    pub acts: BTreeSet<String>,
}

impl ExclusionList {
    pub fn new<I, S>(acts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            acts: acts
                .into_iter()
                .map(|a| normalize_act(a.as_ref()))
                .collect(),
        }
    }

    pub fn empty() -> Self {
        Self {
            acts: BTreeSet::new(),
        }
    }

    pub fn excludes(&self, article: &ArticleRef) -> bool {
        self.acts.contains(&article.act)
    }
}

impl Default for ExclusionList {
    /// The Code of Civil Procedure and the Code of Criminal Procedure.
    fn default() -> Self {
        Self::new(["民事訴訟法", "刑事訴訟法"])
    }
}

/// User-supplied act-name aliases (`alias -> canonical`).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliasTable(pub BTreeMap<String, String>);

impl AliasTable {
    pub fn resolve<'a>(&'a self, act: &'a str) -> &'a str {
        self.0.get(act).map(String::as_str).unwrap_or(act)
    }
}

pub fn apply_aliases(corpus: &Corpus, aliases: &AliasTable) -> Corpus {
    if aliases.0.is_empty() {
        return corpus.clone();
    }
    map_citations(corpus, |refs| {
        refs.iter()
            .map(|r| ArticleRef {
                act: aliases.resolve(&r.act).to_string(),
                ..r.clone()
            })
            .collect()
    })
}

pub fn apply_exclusions(corpus: &Corpus, excl: &ExclusionList) -> Corpus {
    map_citations(corpus, |refs| {
        refs.iter().filter(|r| !excl.excludes(r)).cloned().collect()
    })
}

fn map_citations(
    corpus: &Corpus,
    f: impl Fn(&BTreeSet<ArticleRef>) -> BTreeSet<ArticleRef>,
) -> Corpus {
    let cases = corpus
        .cases
        .iter()
        .map(|c| CaseRecord {
            citations: f(&c.citations),
            ..c.clone()
        })
        .collect();
    Corpus {
        cases,
        coa_index: corpus.coa_index.clone(),
    }
}

/// Picks the `m` COAs with the most cases (at least `n` each; ties by
/// label) and draws `n` of each COA's cases uniformly without replacement.
/// The output lists COAs in label order and keeps corpus order within a COA.
pub fn sample_cases(corpus: &Corpus, m: usize, n: usize, seed: u64) -> Result<Corpus> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidParameter(
            "sample sizes m and n must be positive".into(),
        ));
    }
    let mut eligible: Vec<(&String, &Vec<usize>)> = corpus
        .coa_index
        .iter()
        .filter(|(_, idx)| idx.len() >= n)
        .collect();
    if eligible.len() < m {
        return Err(Error::SampleShortfall {
            needed: m,
            per_coa: n,
            eligible: eligible.len(),
        });
    }
    eligible.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then_with(|| a.0.cmp(b.0)));
    eligible.truncate(m);
    eligible.sort_by(|a, b| a.0.cmp(b.0));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::with_capacity(m * n);
    for (_, idx) in eligible {
        let mut picked = rand::seq::index::sample(&mut rng, idx.len(), n).into_vec();
        picked.sort_unstable();
        cases.extend(picked.into_iter().map(|p| corpus.cases[idx[p]].clone()));
    }
    Ok(Corpus::from_unique(cases))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Jsonl,
    Csv,
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "ndjson" => Ok(Self::Jsonl),
            "csv" => Ok(Self::Csv),
            other => Err(Error::InvalidParameter(format!(
                "unknown corpus format `{other}` (expected jsonl or csv)"
            ))),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawCitation {
    Structured {
        act: String,
        article: u32,
        #[serde(default)]
        sub: Option<u32>,
    },
    Text(String),
}

#[derive(Deserialize)]
struct RawRecord {
    case_id: Option<String>,
    coa: Option<String>,
    #[serde(default)]
    claim_text: Option<String>,
    #[serde(default)]
    citations: Option<Vec<RawCitation>>,
    #[serde(default)]
    body_text: Option<String>,
}

#[derive(Deserialize)]
struct CsvRecord {
    case_id: Option<String>,
    coa: Option<String>,
    #[serde(default)]
    claim_text: Option<String>,
    #[serde(default)]
    citations: Option<String>,
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let records = match format {
        CorpusFormat::Jsonl => read_jsonl(path, BufReader::new(file))?,
        CorpusFormat::Csv => read_csv(path, file)?,
    };
    let mut seen = HashSet::new();
    let mut cases = Vec::with_capacity(records.len());
    for (line, case) in records {
        if !seen.insert(case.case_id.clone()) {
            return Err(Error::Load {
                path: path.to_path_buf(),
                line,
                message: format!("duplicate case_id `{}`", case.case_id),
            });
        }
        cases.push(case);
    }
    Ok(Corpus::from_unique(cases))
}

fn read_jsonl(path: &Path, reader: impl BufRead) -> Result<Vec<(u64, CaseRecord)>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let load_err = |message: String| Error::Load {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| load_err(e.to_string()))?;
        let (case_id, coa) = required_fields(raw.case_id, raw.coa).map_err(load_err)?;
        let citations = match raw.citations {
            Some(list) => list
                .into_iter()
                .filter_map(|c| match c {
                    RawCitation::Structured { act, article, sub } => {
                        let parsed = ArticleRef::new(&act, article, sub);
                        if parsed.is_none() {
                            log::warn!(
                                "{}:{line_no}: invalid citation {act} {article}",
                                path.display()
                            );
                        }
                        parsed
                    }
                    RawCitation::Text(text) => parse_logged(path, line_no, &text),
                })
                .collect(),
            None => raw
                .body_text
                .as_deref()
                .map(extract_citations)
                .unwrap_or_default()
                .into_iter()
                .collect(),
        };
        out.push((
            line_no,
            CaseRecord {
                case_id,
                coa,
                claim_text: raw.claim_text.unwrap_or_default(),
                citations,
            },
        ));
    }
    Ok(out)
}

fn read_csv(path: &Path, file: File) -> Result<Vec<(u64, CaseRecord)>> {
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(file);
    let mut out = Vec::new();
    for row in reader.deserialize::<CsvRecord>() {
        let row = row.map_err(|e| Error::Load {
            path: path.to_path_buf(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line_no = out.len() as u64 + 2;
        let (case_id, coa) =
            required_fields(row.case_id, row.coa).map_err(|message| Error::Load {
                path: path.to_path_buf(),
                line: line_no,
                message,
            })?;
        let citations = row
            .citations
            .unwrap_or_default()
            .split([';', '；'])
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .filter_map(|s| parse_logged(path, line_no, s))
            .collect();
        out.push((
            line_no,
            CaseRecord {
                case_id,
                coa,
                claim_text: row.claim_text.unwrap_or_default(),
                citations,
            },
        ));
    }
    Ok(out)
}

fn required_fields(
    case_id: Option<String>,
    coa: Option<String>,
) -> std::result::Result<(String, String), String> {
    let case_id = case_id
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .ok_or_else(|| "record is missing `case_id`".to_string())?;
    let coa = coa
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .ok_or_else(|| format!("record `{case_id}` is missing `coa`"))?;
    Ok((case_id, coa))
}

fn parse_logged(path: &Path, line: u64, text: &str) -> Option<ArticleRef> {
    let parsed = parse_citation(text);
    if parsed.is_none() {
        log::warn!("{}:{line}: unrecognized citation `{text}`", path.display());
    }
    parsed
}
