//! Language vectors, agglomerative clustering under cosine distance, and
//! centroid-language selection.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::ToString;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lang::LangCode;

/// Typological vector per language, all of one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageSpace {
    dimension: usize,
    vectors: BTreeMap<LangCode, Vec<f64>>,
}

impl LanguageSpace {
    /// Validates dimension consistency, non-zero vectors and unique codes.
    pub fn from_records<I>(records: I) -> Result<Self>
    where
        I: IntoIterator<Item = (LangCode, Vec<f64>)>,
    {
        let mut vectors = BTreeMap::new();
        let mut dimension = None;
        for (code, v) in records {
            let d = *dimension.get_or_insert(v.len());
            if d == 0 {
                return Err(Error::InvalidArgument("empty language vector".into()));
            }
            if v.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(code.to_string()));
            }
            if norm(&v) == 0.0 {
                return Err(Error::ZeroVector(code.to_string()));
            }
            if vectors.contains_key(&code) {
                return Err(Error::DuplicateLanguage(code.to_string()));
            }
            vectors.insert(code, v);
        }
        match dimension {
            Some(dimension) => Ok(LanguageSpace { dimension, vectors }),
            None => Err(Error::InvalidArgument("no language vectors".into())),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, code: &str) -> Option<&[f64]> {
        self.vectors.get(code).map(Vec::as_slice)
    }

    pub fn contains(&self, code: &str) -> bool {
        self.vectors.contains_key(code)
    }

    /// Codes in lexicographic order.
    pub fn languages(&self) -> impl Iterator<Item = &LangCode> {
        self.vectors.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&LangCode, &[f64])> {
        self.vectors.iter().map(|(k, v)| (k, v.as_slice()))
    }
}

fn norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

/// `1 - a·b / (‖a‖‖b‖)`, clamped to `[0, 2]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidArgument("cosine distance of a zero vector".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((1.0 - dot / (na * nb)).clamp(0.0, 2.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    #[default]
    Average,
    Complete,
    Single,
}

/// One cluster. `unrepresented` lists members that have no vector and were
/// placed by hand; they never become centroids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub members: Vec<LangCode>,
    pub centroid: Option<LangCode>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unrepresented: Vec<LangCode>,
}

impl Cluster {
    pub fn new(members: Vec<LangCode>) -> Self {
        Cluster {
            members,
            centroid: None,
            unrepresented: Vec::new(),
        }
    }

    pub fn contains(&self, code: &str) -> bool {
        self.members.iter().any(|m| m.as_str() == code)
    }
}

/// Disjoint clusters covering the clustered languages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub k: usize,
    pub clusters: Vec<Cluster>,
}

impl ClusterSet {
    /// Checks `k`, non-empty clusters, disjointness and centroid membership.
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k != self.clusters.len() {
            return Err(Error::InvalidArgument(alloc::format!(
                "k = {} but {} clusters",
                self.k,
                self.clusters.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for c in &self.clusters {
            if c.members.is_empty() {
                return Err(Error::InvalidArgument("empty cluster".into()));
            }
            for m in &c.members {
                if !seen.insert(m.clone()) {
                    return Err(Error::DuplicateLanguage(m.to_string()));
                }
            }
            if let Some(cen) = &c.centroid {
                if !c.contains(cen.as_str()) {
                    return Err(Error::InvalidArgument(alloc::format!("centroid {cen} is not a cluster member")));
                }
                if c.unrepresented.contains(cen) {
                    return Err(Error::InvalidArgument(alloc::format!("centroid {cen} has no vector")));
                }
            }
        }
        Ok(())
    }

    pub fn centroids(&self) -> Vec<LangCode> {
        self.clusters.iter().filter_map(|c| c.centroid.clone()).collect()
    }

    /// Every clustered language that is not a centroid.
    pub fn non_centroids(&self) -> Vec<LangCode> {
        self.clusters
            .iter()
            .flat_map(|c| c.members.iter().filter(move |m| c.centroid.as_ref() != Some(*m)))
            .cloned()
            .collect()
    }

    pub fn cluster_of(&self, code: &str) -> Option<usize> {
        self.clusters.iter().position(|c| c.contains(code))
    }

    /// Sets the centroid of every cluster.
    pub fn with_centroids(mut self, space: &LanguageSpace) -> Result<Self> {
        for c in &mut self.clusters {
            let cen = centroid(c, space)?;
            c.centroid = Some(cen);
        }
        Ok(self)
    }
}

/// Agglomerative clustering cut at exactly `k` clusters.
///
/// Merges the closest pair under `linkage`; exact distance ties go to the pair
/// whose smallest member codes sort first. Members within a cluster and the
/// clusters themselves are ordered by language code.
pub fn cluster_languages(space: &LanguageSpace, k: usize, linkage: Linkage) -> Result<ClusterSet> {
    let codes: Vec<&LangCode> = space.languages().collect();
    let n = codes.len();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(alloc::format!("cannot cut {n} languages into {k} clusters")));
    }
    let vecs: Vec<&[f64]> = codes.iter().map(|c| space.get(c.as_str()).unwrap()).collect();
    let mut dist = alloc::vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = cosine_distance(vecs[i], vecs[j])?;
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }

    // Each group holds indices into `codes`, sorted; codes are sorted, so the
    // first index is the group's lexicographically smallest code.
    let mut groups: Vec<Vec<usize>> = (0..n).map(|i| alloc::vec![i]).collect();
    while groups.len() > k {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..groups.len() {
            for b in a + 1..groups.len() {
                let d = linkage_distance(&groups[a], &groups[b], &dist, n, linkage);
                let better = match best {
                    None => true,
                    Some((bd, ba, bb)) => d < bd || (d == bd && (groups[a][0], groups[b][0]) < (groups[ba][0], groups[bb][0])),
                };
                if better {
                    best = Some((d, a, b));
                }
            }
        }
        let (_, a, b) = best.expect("at least two groups");
        let merged = groups.remove(b);
        groups[a].extend(merged);
        groups[a].sort_unstable();
    }
    groups.sort_by_key(|g| g[0]);
    let clusters = groups
        .into_iter()
        .map(|g| Cluster::new(g.into_iter().map(|i| codes[i].clone()).collect()))
        .collect();
    Ok(ClusterSet { k, clusters })
}

fn linkage_distance(a: &[usize], b: &[usize], dist: &[f64], n: usize, linkage: Linkage) -> f64 {
    let pairs = a.iter().flat_map(|&i| b.iter().map(move |&j| dist[i * n + j]));
    match linkage {
        Linkage::Average => pairs.sum::<f64>() / (a.len() * b.len()) as f64,
        Linkage::Complete => pairs.fold(f64::NEG_INFINITY, f64::max),
        Linkage::Single => pairs.fold(f64::INFINITY, f64::min),
    }
}

/// Member minimizing the summed cosine distance to all represented members.
/// Ties go to the smallest code; unrepresented members are skipped.
pub fn centroid(cluster: &Cluster, space: &LanguageSpace) -> Result<LangCode> {
    let mut represented = Vec::new();
    for m in &cluster.members {
        if cluster.unrepresented.contains(m) {
            continue;
        }
        match space.get(m.as_str()) {
            Some(v) => represented.push((m, v)),
            None => return Err(Error::UnknownLanguage(m.to_string())),
        }
    }
    represented.sort_by(|a, b| a.0.cmp(b.0));
    let mut best: Option<(f64, &LangCode)> = None;
    for (code, v) in &represented {
        let mut total = 0.0;
        for (other, w) in &represented {
            if other != code {
                total += cosine_distance(w, v)?;
            }
        }
        if best.is_none_or(|(bt, _)| total < bt) {
            best = Some((total, code));
        }
    }
    best.map(|(_, c)| c.clone())
        .ok_or_else(|| Error::InvalidArgument("cluster has no represented member".into()))
}

/// Place a language without a vector into cluster `index` by hand.
pub fn assign_unrepresented(mut set: ClusterSet, lang: LangCode, index: usize) -> Result<ClusterSet> {
    if set.cluster_of(lang.as_str()).is_some() {
        return Err(Error::DuplicateLanguage(lang.to_string()));
    }
    let len = set.clusters.len();
    let cluster = set
        .clusters
        .get_mut(index)
        .ok_or_else(|| Error::InvalidArgument(alloc::format!("cluster index {index} out of range 0..{len}")))?;
    cluster.members.push(lang.clone());
    cluster.unrepresented.push(lang);
    Ok(set)
}

/// Mean distance of each member to the others in its cluster, for reports.
pub fn mean_cosine_distances(cluster: &Cluster, space: &LanguageSpace) -> Vec<(LangCode, Option<f64>)> {
    cluster
        .members
        .iter()
        .map(|m| {
            let v = match space.get(m.as_str()) {
                Some(v) => v,
                None => return (m.clone(), None),
            };
            let others: Vec<f64> = cluster
                .members
                .iter()
                .filter(|o| *o != m)
                .filter_map(|o| space.get(o.as_str()))
                .filter_map(|w| cosine_distance(v, w).ok())
                .collect();
            let mean = if others.is_empty() {
                None
            } else {
                Some(others.iter().sum::<f64>() / others.len() as f64)
            };
            (m.clone(), mean)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    fn space(rows: &[(&str, &[f64])]) -> LanguageSpace {
        LanguageSpace::from_records(rows.iter().map(|(c, v)| (LangCode::from(*c), v.to_vec()))).unwrap()
    }

    #[test]
    fn distance_examples() {
        let v = [0.3, -1.2, 4.0];
        assert!(cosine_distance(&v, &v).unwrap().abs() < 1e-15);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        // 1 - 4/5
        assert!((cosine_distance(&[1.0, 2.0], &[2.0, 1.0]).unwrap() - 0.2).abs() < 1e-15);
        assert!(cosine_distance(&[1.0], &[1.0, 2.0]).is_err());
        assert!(cosine_distance(&[0.0, 0.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn space_validation() {
        let ok = space(&[("en", &[1.0, 0.0]), ("hi", &[0.0, 1.0])]);
        assert_eq!((ok.dimension(), ok.len()), (2, 2));
        let dup = LanguageSpace::from_records(vec![(LangCode::from("hi"), vec![1.0]), (LangCode::from("hi"), vec![2.0])]);
        assert_eq!(dup, Err(Error::DuplicateLanguage("hi".into())));
        let zero = LanguageSpace::from_records(vec![(LangCode::from("xx"), vec![0.0, 0.0])]);
        assert_eq!(zero, Err(Error::ZeroVector("xx".into())));
        let ragged = LanguageSpace::from_records(vec![(LangCode::from("a"), vec![1.0, 2.0]), (LangCode::from("b"), vec![1.0])]);
        assert!(matches!(ragged, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn degenerate_cuts() {
        let s = space(&[("a", &[1.0, 0.1]), ("b", &[0.2, 1.0]), ("c", &[1.0, 1.0])]);
        let singles = cluster_languages(&s, 3, Linkage::Average).unwrap();
        assert!(singles.clusters.iter().all(|c| c.members.len() == 1));
        let one = cluster_languages(&s, 1, Linkage::Average).unwrap();
        assert_eq!(one.clusters[0].members.len(), 3);
        assert!(cluster_languages(&s, 4, Linkage::Average).is_err());
        assert!(cluster_languages(&s, 0, Linkage::Average).is_err());
    }

    #[test]
    fn separated_pairs() {
        let s = space(&[
            ("aa", &[1.0, 0.0, 0.01]),
            ("ab", &[1.0, 0.02, 0.0]),
            ("ba", &[0.0, 1.0, 0.01]),
            ("bb", &[0.01, 1.0, 0.0]),
        ]);
        for linkage in [Linkage::Average, Linkage::Complete, Linkage::Single] {
            let cs = cluster_languages(&s, 2, linkage).unwrap();
            let groups: Vec<Vec<&str>> = cs.clusters.iter().map(|c| c.members.iter().map(|m| m.as_str()).collect()).collect();
            assert_eq!(groups, vec![vec!["aa", "ab"], vec!["ba", "bb"]]);
        }
    }

    #[test]
    fn singleton_and_pair_centroids() {
        let s = space(&[("hi", &[1.0, 2.0]), ("ur", &[1.1, 2.0])]);
        assert_eq!(centroid(&Cluster::new(vec!["hi".into()]), &s).unwrap(), "hi".into());
        // Two members always tie; the smaller code wins.
        let pair = Cluster::new(vec!["ur".into(), "hi".into()]);
        assert_eq!(centroid(&pair, &s).unwrap(), "hi".into());
    }

    #[test]
    fn centroid_missing_member_is_error() {
        let s = space(&[("hi", &[1.0, 2.0])]);
        let c = Cluster::new(vec!["hi".into(), "zz".into()]);
        assert_eq!(centroid(&c, &s), Err(Error::UnknownLanguage("zz".into())));
    }

    #[test]
    fn unrepresented_assignment() {
        let s = space(&[("hi", &[1.0, 0.0]), ("ta", &[0.9, 0.1]), ("es", &[0.0, 1.0])]);
        let set = cluster_languages(&s, 2, Linkage::Average).unwrap();
        let idx = set.cluster_of("hi").unwrap();
        let set = assign_unrepresented(set, "sw".into(), idx).unwrap();
        assert!(set.clusters[idx].contains("sw"));
        set.validate().unwrap();
        let set = set.with_centroids(&s).unwrap();
        assert_ne!(set.clusters[idx].centroid, Some("sw".into()));
        assert!(assign_unrepresented(set.clone(), "sw".into(), 0).is_err());
        assert!(assign_unrepresented(set, "xx".into(), 7).is_err());
    }

    #[test]
    fn cluster_config_json_shape() {
        let set = ClusterSet {
            k: 1,
            clusters: vec![Cluster {
                members: vec!["es".into(), "pt".into()],
                centroid: Some("es".into()),
                unrepresented: Vec::new(),
            }],
        };
        set.validate().unwrap();
        let centroids = set.centroids();
        assert_eq!(centroids, vec![LangCode::from("es")]);
        assert_eq!(set.non_centroids(), vec![LangCode::from("pt")]);
    }
}
