//! Exact cosine-similarity retrieval over the library latents.

use std::collections::VecDeque;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::library::ClipEntry;
use crate::neural::{LatentVec, LATENT_DIM};

/// `dot(a, b) / (|a| |b|)`, clamped into [-1, 1].
pub fn cosine(a: &LatentVec, b: &LatentVec) -> Result<f64> {
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateVector("cosine of a zero vector".into()));
    }
    Ok((a.dot(b) / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RetrievalPolicy {
    /// Exclude the last N selections; 0 is plain argmax.
    #[serde(default)]
    pub anti_repeat_window: usize,
}

impl RetrievalPolicy {
    pub fn validate(&self, library_size: usize) -> Result<()> {
        if self.anti_repeat_window > 0 && self.anti_repeat_window >= library_size {
            return Err(Error::invalid(format!(
                "anti-repeat window {} must be smaller than the library ({library_size} clips)",
                self.anti_repeat_window
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub id: String,
    pub score: f64,
}

/// Latents laid out contiguously, sorted by id, with precomputed norms.
#[derive(Debug, Clone)]
pub struct LatentIndex {
    ids: Vec<String>,
    data: Vec<f32>,
    norms: Vec<f64>,
}

impl LatentIndex {
    pub fn new(entries: &[ClipEntry]) -> Result<Self> {
        Self::from_pairs(entries.iter().map(|e| (e.id.clone(), e.latent.clone())).collect())
    }

    pub fn from_pairs(mut pairs: Vec<(String, LatentVec)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyLibrary);
        }
        pairs.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = pairs.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::DuplicateId(w[0].0.clone()));
        }
        let mut ids = Vec::with_capacity(pairs.len());
        let mut data = Vec::with_capacity(pairs.len() * LATENT_DIM);
        let mut norms = Vec::with_capacity(pairs.len());
        for (id, z) in pairs {
            let n = z.norm();
            if n == 0.0 {
                warn!("clip `{id}` has a zero latent and can only score 0");
            }
            data.extend_from_slice(z.as_slice());
            norms.push(n);
            ids.push(id);
        }
        Ok(Self { ids, data, norms })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn contains(&self, id: &str) -> bool {
        self.ids.binary_search_by(|s| s.as_str().cmp(id)).is_ok()
    }

    /// Cosine against every entry, in id order.
    pub fn scores(&self, query: &LatentVec) -> Result<Vec<f64>> {
        let qn = query.norm();
        if qn == 0.0 {
            return Err(Error::DegenerateVector("query latent is zero".into()));
        }
        let q = query.as_slice();
        Ok(self
            .data
            .chunks_exact(LATENT_DIM)
            .zip(&self.norms)
            .map(|(row, &n)| {
                if n == 0.0 {
                    return 0.0;
                }
                let dot: f64 = row.iter().zip(q).map(|(&a, &b)| a as f64 * b as f64).sum();
                (dot / (n * qn)).clamp(-1.0, 1.0)
            })
            .collect())
    }

    /// Highest-scoring entry not in `exclude`; ties go to the smallest id.
    pub fn retrieve_excluding(&self, query: &LatentVec, exclude: &[String]) -> Result<Scored> {
        let scores = self.scores(query)?;
        let mut best: Option<usize> = None;
        for (i, &s) in scores.iter().enumerate() {
            if exclude.iter().any(|x| *x == self.ids[i]) {
                continue;
            }
            if best.is_none_or(|b| s > scores[b]) {
                best = Some(i);
            }
        }
        let i = best.ok_or(Error::PolicyExhausted)?;
        Ok(Scored {
            id: self.ids[i].clone(),
            score: scores[i],
        })
    }

    pub fn retrieve(&self, query: &LatentVec) -> Result<Scored> {
        self.retrieve_excluding(query, &[])
    }

    /// The `k` best entries, scores non-increasing, ties by id.
    pub fn top_k(&self, query: &LatentVec, k: usize) -> Result<Vec<Scored>> {
        let scores = self.scores(query)?;
        let mut order: Vec<usize> = (0..scores.len()).collect();
        // stable sort keeps id order among equal scores
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        Ok(order
            .into_iter()
            .take(k)
            .map(|i| Scored {
                id: self.ids[i].clone(),
                score: scores[i],
            })
            .collect())
    }
}

/// Index plus the selection history the anti-repeat policy needs.
#[derive(Debug, Clone)]
pub struct Retriever {
    index: LatentIndex,
    policy: RetrievalPolicy,
    history: VecDeque<String>,
}

impl Retriever {
    pub fn new(index: LatentIndex, policy: RetrievalPolicy) -> Result<Self> {
        policy.validate(index.len())?;
        Ok(Self {
            index,
            policy,
            history: VecDeque::new(),
        })
    }

    pub fn index(&self) -> &LatentIndex {
        &self.index
    }

    /// Swap in a new index; history of ids no longer indexed is harmless.
    pub fn replace_index(&mut self, index: LatentIndex) -> Result<()> {
        self.policy.validate(index.len())?;
        self.index = index;
        Ok(())
    }

    pub fn policy(&self) -> RetrievalPolicy {
        self.policy
    }

    /// Best eligible clip under the policy, without recording it.
    pub fn choose(&self, query: &LatentVec) -> Result<Scored> {
        let excluded: Vec<String> = self.history.iter().cloned().collect();
        self.index.retrieve_excluding(query, &excluded)
    }

    /// Select a clip and record it in the history.
    pub fn select(&mut self, query: &LatentVec) -> Result<Scored> {
        let hit = self.choose(query)?;
        self.record(&hit.id);
        Ok(hit)
    }

    /// Note a clip as played without scoring, e.g. when a step repeats.
    pub fn record(&mut self, id: &str) {
        if self.policy.anti_repeat_window == 0 {
            return;
        }
        self.history.push_back(id.to_string());
        while self.history.len() > self.policy.anti_repeat_window {
            self.history.pop_front();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(head: &[f32]) -> LatentVec {
        let mut x = vec![0.0; LATENT_DIM];
        x[..head.len()].copy_from_slice(head);
        LatentVec::new(x).unwrap()
    }

    #[test]
    fn cosine_hand_cases() {
        assert_eq!(cosine(&v(&[1.0]), &v(&[1.0])).unwrap(), 1.0);
        assert_eq!(cosine(&v(&[1.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        assert!((cosine(&v(&[3.0, 4.0]), &v(&[4.0, 3.0])).unwrap() - 24.0 / 25.0).abs() < 1e-12);
        assert!(matches!(cosine(&v(&[]), &v(&[1.0])), Err(Error::DegenerateVector(_))));
    }

    fn index() -> LatentIndex {
        LatentIndex::from_pairs(vec![
            ("c".into(), v(&[1.0, 0.0])),
            ("a".into(), v(&[0.0, 1.0])),
            ("b".into(), v(&[2.0, 0.0])),
        ])
        .unwrap()
    }

    #[test]
    fn ties_go_to_smallest_id() {
        let hit = index().retrieve(&v(&[5.0, 0.0])).unwrap();
        assert_eq!(hit.id, "b");
        assert!((hit.score - 1.0).abs() < 1e-12);
        let top = index().top_k(&v(&[5.0, 0.0]), 3).unwrap();
        let ids: Vec<_> = top.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["b", "c", "a"]);
    }

    #[test]
    fn anti_repeat_excludes_recent() {
        let mut r = Retriever::new(index(), RetrievalPolicy { anti_repeat_window: 2 }).unwrap();
        let q = v(&[1.0, 0.1]);
        assert_eq!(r.select(&q).unwrap().id, "b");
        assert_eq!(r.select(&q).unwrap().id, "c");
        assert_eq!(r.select(&q).unwrap().id, "a");
        // window of two: "b" is eligible again
        assert_eq!(r.select(&q).unwrap().id, "b");
    }

    #[test]
    fn policy_limits() {
        assert!(Retriever::new(index(), RetrievalPolicy { anti_repeat_window: 3 }).is_err());
        let ix = index();
        let all: Vec<String> = ix.ids().to_vec();
        assert!(matches!(ix.retrieve_excluding(&v(&[1.0]), &all), Err(Error::PolicyExhausted)));
        assert!(matches!(LatentIndex::from_pairs(vec![]), Err(Error::EmptyLibrary)));
        assert!(matches!(ix.retrieve(&v(&[])), Err(Error::DegenerateVector(_))));
    }
}
