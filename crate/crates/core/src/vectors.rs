//! Global article index and sparse per-case / per-COA citation vectors.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::{apply_exclusions, ArticleRef, CaseRecord, Corpus, ExclusionList};
use crate::{Error, Result};

/// Bijection between the distinct cited articles and column ids `0..α`,
/// ordered by `(act, article, sub)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ArticleIndex {
    articles: Vec<ArticleRef>,
    columns: HashMap<ArticleRef, u32>,
}

impl ArticleIndex {
    pub fn build(corpus: &Corpus) -> Self {
        let mut articles: Vec<ArticleRef> = corpus
            .cases()
            .iter()
            .flat_map(|c| c.citations.iter().cloned())
            .collect();
        articles.sort_unstable();
        articles.dedup();
        Self::from_sorted(articles)
    }

    fn from_sorted(articles: Vec<ArticleRef>) -> Self {
        let columns = articles
            .iter()
            .enumerate()
            .map(|(i, a)| (a.clone(), i as u32))
            .collect();
        Self { articles, columns }
    }

    /// The number of distinct articles (α).
    pub fn len(&self) -> usize {
        self.articles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.articles.is_empty()
    }

    pub fn column(&self, article: &ArticleRef) -> Option<u32> {
        self.columns.get(article).copied()
    }

    pub fn article(&self, column: u32) -> Option<&ArticleRef> {
        self.articles.get(column as usize)
    }

    pub fn articles(&self) -> &[ArticleRef] {
        &self.articles
    }

    /// CSV with header `column_id,act,article,sub`.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["column_id", "act", "article", "sub"])?;
        for (i, a) in self.articles.iter().enumerate() {
            let sub = a.sub.map(|s| s.to_string()).unwrap_or_default();
            w.write_record([i.to_string(), a.act.clone(), a.article.to_string(), sub])?;
        }
        w.flush().map_err(|e| Error::io("<article index>", e))?;
        Ok(())
    }

    pub fn read_csv(input: impl Read) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            column_id: u32,
            act: String,
            article: u32,
            sub: Option<u32>,
        }
        let mut articles = Vec::new();
        for (i, row) in csv::Reader::from_reader(input)
            .deserialize::<Row>()
            .enumerate()
        {
            let row = row?;
            let article = ArticleRef::new(&row.act, row.article, row.sub).ok_or_else(|| {
                Error::InvalidParameter(format!("invalid article in index row {}", i + 1))
            })?;
            if row.column_id as usize != i || articles.last().is_some_and(|prev| prev >= &article) {
                return Err(Error::InvalidParameter(format!(
                    "article index row {} is out of order",
                    i + 1
                )));
            }
            articles.push(article);
        }
        Ok(Self::from_sorted(articles))
    }
}

/// Sparse binary vector: the sorted set of columns that are 1.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CitationVector(Vec<u32>);

impl CitationVector {
    pub fn from_columns(columns: impl IntoIterator<Item = u32>) -> Self {
        let mut cols: Vec<u32> = columns.into_iter().collect();
        cols.sort_unstable();
        cols.dedup();
        Self(cols)
    }

    pub fn columns(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, column: u32) -> bool {
        self.0.binary_search(&column).is_ok()
    }

    /// `|self ∩ other|` by a merge over the two sorted column lists.
    pub fn intersection_len(&self, other: &Self) -> usize {
        let (a, b) = (&self.0, &other.0);
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }
}

/// Sparse count vector `column -> count`, counts always ≥ 1.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountVector(Vec<(u32, u64)>);

impl CountVector {
    /// Builds from `(column, count)` entries, summing duplicate columns and
    /// dropping zero counts.
    pub fn from_entries(entries: impl IntoIterator<Item = (u32, u64)>) -> Self {
        let mut acc: BTreeMap<u32, u64> = BTreeMap::new();
        for (c, n) in entries {
            *acc.entry(c).or_default() += n;
        }
        Self(acc.into_iter().filter(|&(_, n)| n > 0).collect())
    }

    pub fn entries(&self) -> &[(u32, u64)] {
        &self.0
    }

    pub fn get(&self, column: u32) -> u64 {
        self.0
            .binary_search_by_key(&column, |&(c, _)| c)
            .map(|i| self.0[i].1)
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn case_vector(case: &CaseRecord, index: &ArticleIndex) -> Result<CitationVector> {
    case.citations
        .iter()
        .map(|a| {
            index.column(a).ok_or_else(|| Error::IndexMismatch {
                case_id: case.case_id.clone(),
                article: a.to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()
        .map(CitationVector::from_columns)
}

/// Componentwise sum of binary vectors.
pub fn aggregate_vector<'a>(vectors: impl IntoIterator<Item = &'a CitationVector>) -> CountVector {
    CountVector::from_entries(
        vectors
            .into_iter()
            .flat_map(|v| v.columns().iter().map(|&c| (c, 1))),
    )
}

/// Resets every count above 1 to 1.
pub fn binarize(u: &CountVector) -> CitationVector {
    CitationVector(u.0.iter().map(|&(c, _)| c).collect())
}

/// `citation count -> number of cases` with that many citations.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram(pub BTreeMap<usize, usize>);

impl Histogram {
    pub fn total_cases(&self) -> usize {
        self.0.values().sum()
    }
}

pub fn citation_histogram(corpus: &Corpus, excl: Option<&ExclusionList>) -> Histogram {
    let filtered;
    let corpus = match excl {
        Some(excl) => {
            filtered = apply_exclusions(corpus, excl);
            &filtered
        }
        None => corpus,
    };
    let mut bins = BTreeMap::new();
    for case in corpus.cases() {
        *bins.entry(case.citations.len()).or_default() += 1;
    }
    Histogram(bins)
}

/// CSV `k,count,exclusion` holding both distributions; `exclusion` is
/// `true` for the distribution computed after removing excluded acts.
pub fn write_histograms_csv(without: &Histogram, with: &Histogram, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "count", "exclusion"])?;
    for (flag, hist) in [("false", without), ("true", with)] {
        for (k, count) in &hist.0 {
            w.write_record([k.to_string(), count.to_string(), flag.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io("<histogram>", e))?;
    Ok(())
}
