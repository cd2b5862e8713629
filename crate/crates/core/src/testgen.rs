//! Held-out test set generation: project sentence embeddings to the plane,
//! cluster them by density, drop outliers and oversize clusters, and ask
//! questions about what is left.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::EmbeddingVector;
use crate::index::{IndexError, IndexKind, IndexedDataset};
use crate::qagen::{questions_for_text, QgError, QuestionGenClient, QUESTIONS_PER_PARAGRAPH};
use crate::scalar::Scalar;
use crate::tokenize::CounterSet;

pub const DEFAULT_TARGET_DIM: usize = 2;
pub const DEFAULT_MIN_PTS: usize = 6;
pub const DEFAULT_MAX_CLUSTERS: usize = 15;
pub const CLUSTER_TOKEN_CAP: usize = 256;
/// Beyond this dimension the projection works on the Gram matrix instead of
/// the covariance matrix.
const COVARIANCE_DIM_LIMIT: usize = 512;
const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TestGenError {
    #[error("need at least {need} vectors, got {got}")]
    TooFewVectors { need: usize, got: usize },
    #[error("vectors have inconsistent dimensions")]
    RaggedInput,
    #[error("all vectors coincide; nothing to project")]
    DegenerateCloud,
    #[error("need at least {need} points to cluster, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("every point is an outlier")]
    NoClusters,
    #[error("no cluster survived the {cap}-token cap")]
    NoSurvivingClusters { cap: usize },
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("question generation for cluster {cluster}: {source}")]
    Questions {
        cluster: usize,
        #[source]
        source: QgError,
    },
    #[error("test set I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt test set: {0}")]
    Corrupt(String),
}

/// Projects embeddings to `target_dim` coordinates.
pub trait Reducer<T: Scalar> {
    fn name(&self) -> &str;
    fn reduce(
        &self,
        vectors: &[EmbeddingVector<T>],
        target_dim: usize,
    ) -> Result<Vec<Vec<T>>, TestGenError>;
}

/// Fitted principal components.
#[derive(Debug, Clone)]
pub struct PcaFit<T> {
    pub mean: Vec<T>,
    /// Unit eigenvectors, one per row; the largest-magnitude coordinate of
    /// each is positive.
    pub components: Vec<Vec<T>>,
    pub explained_variance: Vec<T>,
    pub explained_variance_ratio: Vec<T>,
    pub projections: Vec<Vec<T>>,
}

impl<T: Scalar> PcaFit<T> {
    pub fn reconstruct(&self, projection: &[T]) -> Vec<T> {
        let mut out = self.mean.clone();
        for (coef, comp) in projection.iter().zip(&self.components) {
            for (o, &c) in out.iter_mut().zip(comp) {
                *o += *coef * c;
            }
        }
        out
    }
}

fn sorted_eigen(m: DMatrix<f64>) -> Vec<(f64, Vec<f64>)> {
    let eig = SymmetricEigen::new(m);
    let mut pairs: Vec<(f64, Vec<f64>)> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &l)| (l, eig.eigenvectors.column(i).iter().copied().collect()))
        .collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    pairs
}

fn fix_sign(v: &mut [f64]) {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Exact PCA by symmetric eigendecomposition.
pub fn pca_fit<T: Scalar>(
    vectors: &[EmbeddingVector<T>],
    target_dim: usize,
) -> Result<PcaFit<T>, TestGenError> {
    let use_gram = vectors.first().is_some_and(|v| v.dim() > COVARIANCE_DIM_LIMIT && v.dim() > vectors.len());
    pca_fit_route(vectors, target_dim, use_gram)
}

fn pca_fit_route<T: Scalar>(
    vectors: &[EmbeddingVector<T>],
    target_dim: usize,
    use_gram: bool,
) -> Result<PcaFit<T>, TestGenError> {
    let n = vectors.len();
    if n < target_dim + 1 {
        return Err(TestGenError::TooFewVectors {
            need: target_dim + 1,
            got: n,
        });
    }
    let dim = vectors[0].dim();
    if vectors.iter().any(|v| v.dim() != dim) {
        return Err(TestGenError::RaggedInput);
    }
    let mut mean = vec![0.0f64; dim];
    for v in vectors {
        for (m, &x) in mean.iter_mut().zip(v.as_slice()) {
            *m += x.as_f64();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, dim, |i, j| vectors[i].as_slice()[j].as_f64() - mean[j]);
    let total: f64 = centered.iter().map(|x| x * x).sum::<f64>() / (n - 1) as f64;
    if total <= VARIANCE_FLOOR {
        return Err(TestGenError::DegenerateCloud);
    }

    let k = target_dim.min(dim);
    let mut components = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    if !use_gram {
        let cov = centered.transpose() * &centered / (n - 1) as f64;
        for (l, mut v) in sorted_eigen(cov).into_iter().take(k) {
            fix_sign(&mut v);
            components.push(v);
            variances.push(l.max(0.0));
        }
    } else {
        let gram = &centered * centered.transpose();
        for (l, u) in sorted_eigen(gram).into_iter().take(k) {
            let l = l.max(0.0);
            let mut v = vec![0.0; dim];
            if l > VARIANCE_FLOOR {
                let u = nalgebra::DVector::from_vec(u);
                let w = centered.transpose() * u / l.sqrt();
                v = w.iter().copied().collect();
                fix_sign(&mut v);
            }
            components.push(v);
            variances.push(l / (n - 1) as f64);
        }
    }

    let projections = (0..n)
        .map(|i| {
            components
                .iter()
                .map(|c| T::of(centered.row(i).iter().zip(c).map(|(a, b)| a * b).sum()))
                .collect()
        })
        .collect();
    Ok(PcaFit {
        mean: mean.into_iter().map(T::of).collect(),
        components: components
            .into_iter()
            .map(|c| c.into_iter().map(T::of).collect())
            .collect(),
        explained_variance_ratio: variances.iter().map(|v| T::of(v / total)).collect(),
        explained_variance: variances.into_iter().map(T::of).collect(),
        projections,
    })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PcaReducer;

impl<T: Scalar> Reducer<T> for PcaReducer {
    fn name(&self) -> &str {
        "pca"
    }

    fn reduce(
        &self,
        vectors: &[EmbeddingVector<T>],
        target_dim: usize,
    ) -> Result<Vec<Vec<T>>, TestGenError> {
        Ok(pca_fit(vectors, target_dim)?.projections)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clustering {
    /// Point indices per cluster, ascending; clusters ordered by their
    /// smallest index.
    pub clusters: Vec<Vec<usize>>,
    pub outliers: Vec<usize>,
}

pub trait Clusterer<T: Scalar> {
    fn name(&self) -> &str;
    fn min_cluster_size(&self) -> usize;
    fn cluster(&self, points: &[Vec<T>]) -> Result<Clustering, TestGenError>;
}

/// DBSCAN followed by smallest-first merging down to `max_clusters`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityClusterer {
    /// Neighbourhood radius; estimated from the data when `None`.
    pub eps: Option<f64>,
    /// Points (self included) within `eps` that make a core point.
    pub min_pts: usize,
    pub max_clusters: usize,
}

impl Default for DensityClusterer {
    fn default() -> Self {
        Self {
            eps: None,
            min_pts: DEFAULT_MIN_PTS,
            max_clusters: DEFAULT_MAX_CLUSTERS,
        }
    }
}

fn dist<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = (x - y).as_f64();
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn centroid<T: Scalar>(points: &[Vec<T>], members: &[usize]) -> Vec<f64> {
    let dim = points[members[0]].len();
    let mut c = vec![0.0; dim];
    for &m in members {
        for (acc, &x) in c.iter_mut().zip(&points[m]) {
            *acc += x.as_f64();
        }
    }
    c.iter_mut().for_each(|x| *x /= members.len() as f64);
    c
}

impl DensityClusterer {
    /// Radius from the sorted distances to each point's
    /// `(min_pts - 1)`-th nearest neighbour: the value just before the
    /// first doubling jump in the upper half, or the largest value.
    pub fn estimate_eps<T: Scalar>(&self, points: &[Vec<T>]) -> f64 {
        let k = self.min_pts.saturating_sub(1).max(1);
        let mut kdist: Vec<f64> = (0..points.len())
            .map(|i| {
                let mut d: Vec<f64> = (0..points.len())
                    .filter(|&j| j != i)
                    .map(|j| dist(&points[i], &points[j]))
                    .collect();
                d.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
                d.get(k - 1).copied().unwrap_or(0.0)
            })
            .collect();
        kdist.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        let n = kdist.len();
        (n / 2..n.saturating_sub(1))
            .find(|&i| kdist[i] > 0.0 && kdist[i + 1] > 2.0 * kdist[i])
            .map_or(kdist[n - 1], |i| kdist[i])
    }

    pub fn effective_eps<T: Scalar>(&self, points: &[Vec<T>]) -> f64 {
        self.eps.unwrap_or_else(|| self.estimate_eps(points))
    }

    fn dbscan<T: Scalar>(&self, points: &[Vec<T>], eps: f64) -> (Vec<Vec<usize>>, Vec<usize>) {
        let n = points.len();
        let neighbours: Vec<Vec<usize>> = (0..n)
            .map(|i| (0..n).filter(|&j| dist(&points[i], &points[j]) <= eps).collect())
            .collect();
        let is_core: Vec<bool> = neighbours.iter().map(|nb| nb.len() >= self.min_pts).collect();
        let mut label: Vec<Option<usize>> = vec![None; n];
        let mut clusters: Vec<Vec<usize>> = Vec::new();
        for start in 0..n {
            if label[start].is_some() || !is_core[start] {
                continue;
            }
            let id = clusters.len();
            let mut members = vec![start];
            label[start] = Some(id);
            let mut queue = std::collections::VecDeque::from([start]);
            while let Some(p) = queue.pop_front() {
                if !is_core[p] {
                    continue;
                }
                for &q in &neighbours[p] {
                    if label[q].is_none() {
                        label[q] = Some(id);
                        members.push(q);
                        queue.push_back(q);
                    }
                }
            }
            members.sort_unstable();
            clusters.push(members);
        }
        let outliers = (0..n).filter(|&i| label[i].is_none()).collect();
        (clusters, outliers)
    }

    fn merge_down<T: Scalar>(&self, points: &[Vec<T>], mut clusters: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
        let cap = self.max_clusters.max(1);
        while clusters.len() > cap {
            let smallest = (0..clusters.len())
                .min_by_key(|&i| (clusters[i].len(), i))
                .expect("more than one cluster");
            let c = centroid(points, &clusters[smallest]);
            let target = (0..clusters.len())
                .filter(|&j| j != smallest)
                .min_by(|&a, &b| {
                    let da = dist::<f64>(&c, &centroid(points, &clusters[a]));
                    let db = dist::<f64>(&c, &centroid(points, &clusters[b]));
                    da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
                })
                .expect("another cluster exists");
            let moved = clusters.remove(smallest);
            let target = if target > smallest { target - 1 } else { target };
            clusters[target].extend(moved);
            clusters[target].sort_unstable();
        }
        clusters.sort_by_key(|c| c[0]);
        clusters
    }
}

impl<T: Scalar> Clusterer<T> for DensityClusterer {
    fn name(&self) -> &str {
        "dbscan"
    }

    fn min_cluster_size(&self) -> usize {
        self.min_pts
    }

    fn cluster(&self, points: &[Vec<T>]) -> Result<Clustering, TestGenError> {
        if points.len() < self.min_pts {
            return Err(TestGenError::TooFewPoints {
                need: self.min_pts,
                got: points.len(),
            });
        }
        let eps = self.effective_eps(points);
        let (clusters, outliers) = self.dbscan(points, eps);
        if clusters.is_empty() {
            return Err(TestGenError::NoClusters);
        }
        Ok(Clustering {
            clusters: self.merge_down(points, clusters),
            outliers,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: usize,
    /// Entry positions in the sentence index, in corpus order.
    pub sentence_refs: Vec<usize>,
    pub concatenated_text: String,
    pub token_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestGenParams {
    pub reducer: String,
    pub target_dim: usize,
    pub clusterer: String,
    pub eps: f64,
    pub min_pts: usize,
    pub max_clusters: usize,
    pub token_cap: usize,
    pub questions_per_cluster: usize,
    pub embedder_name: String,
    pub counters: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestPair {
    pub question: String,
    pub answer_text: String,
    pub cluster_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestSet {
    pub params: TestGenParams,
    pub pairs: Vec<TestPair>,
}

#[derive(Debug, Clone)]
pub struct TestSetBuild {
    pub test_set: TestSet,
    pub clustering: Clustering,
    /// Clusters that passed the token cap.
    pub clusters: Vec<Cluster>,
    /// Ids of clusters dropped for exceeding the cap.
    pub oversize: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct ParamsHeader {
    params: TestGenParams,
}

impl TestSet {
    /// Writes the params header record followed by one line per pair.
    pub fn save(&self, path: &Path) -> Result<(), TestGenError> {
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        let header = ParamsHeader {
            params: self.params.clone(),
        };
        serde_json::to_writer(&mut out, &header).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
        for pair in &self.pairs {
            serde_json::to_writer(&mut out, pair).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TestGenError> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut lines = reader.lines();
        let header: ParamsHeader = match lines.next() {
            Some(line) => serde_json::from_str(&line?)
                .map_err(|e| TestGenError::Corrupt(format!("params header: {e}")))?,
            None => return Err(TestGenError::Corrupt("empty file".into())),
        };
        let mut pairs = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            pairs.push(
                serde_json::from_str(&line)
                    .map_err(|e| TestGenError::Corrupt(format!("pair {i}: {e}")))?,
            );
        }
        Ok(Self {
            params: header.params,
            pairs,
        })
    }
}

/// Runs the whole pipeline over a sentence index.
pub fn assemble_test_set<T: Scalar>(
    ds: &IndexedDataset<T>,
    reducer: &dyn Reducer<T>,
    clusterer: &DensityClusterer,
    counters: &CounterSet,
    qg: &dyn QuestionGenClient,
) -> Result<TestSetBuild, TestGenError> {
    ds.expect_kind(IndexKind::Sentences)?;
    let vectors: Vec<EmbeddingVector<T>> =
        ds.entries.iter().map(|e| e.key_vector.clone()).collect();
    let points = reducer.reduce(&vectors, DEFAULT_TARGET_DIM)?;
    let eps = clusterer.effective_eps(&points);
    let resolved = DensityClusterer {
        eps: Some(eps),
        ..*clusterer
    };
    let clustering = Clusterer::<T>::cluster(&resolved, &points)?;
    if !clustering.outliers.is_empty() {
        log::info!("dropping {} outlier sentences", clustering.outliers.len());
    }

    let mut kept = Vec::new();
    let mut oversize = Vec::new();
    for (id, members) in clustering.clusters.iter().enumerate() {
        let text = members
            .iter()
            .map(|&i| ds.entries[i].payload_text.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        let token_count = counters.max_count(&text);
        if token_count > CLUSTER_TOKEN_CAP {
            log::info!("cluster {id}: {token_count} tokens exceeds the cap, dropped");
            oversize.push(id);
            continue;
        }
        kept.push(Cluster {
            id,
            sentence_refs: members.clone(),
            concatenated_text: text,
            token_count,
        });
    }
    if kept.is_empty() {
        return Err(TestGenError::NoSurvivingClusters {
            cap: CLUSTER_TOKEN_CAP,
        });
    }

    let mut pairs = Vec::new();
    for cluster in &kept {
        let generated = questions_for_text(&cluster.concatenated_text, qg, QUESTIONS_PER_PARAGRAPH)
            .map_err(|source| TestGenError::Questions {
                cluster: cluster.id,
                source,
            })?;
        pairs.extend(generated.questions.into_iter().map(|question| TestPair {
            question,
            answer_text: cluster.concatenated_text.clone(),
            cluster_id: cluster.id,
        }));
    }
    let params = TestGenParams {
        reducer: reducer.name().to_owned(),
        target_dim: DEFAULT_TARGET_DIM,
        clusterer: Clusterer::<T>::name(clusterer).to_owned(),
        eps,
        min_pts: clusterer.min_pts,
        max_clusters: clusterer.max_clusters,
        token_cap: CLUSTER_TOKEN_CAP,
        questions_per_cluster: QUESTIONS_PER_PARAGRAPH,
        embedder_name: ds.embedder_name.clone(),
        counters: counters.names().into_iter().map(str::to_owned).collect(),
    };
    Ok(TestSetBuild {
        test_set: TestSet { params, pairs },
        clustering,
        clusters: kept,
        oversize,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ev(values: Vec<f64>) -> EmbeddingVector<f64> {
        EmbeddingVector::new(values)
    }

    #[test]
    fn planar_points_reconstruct_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dim = 64;
        let basis: Vec<Vec<f64>> = (0..2).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let offset: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let vectors: Vec<_> = (0..40)
            .map(|_| {
                let (a, b): (f64, f64) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
                ev((0..dim).map(|j| offset[j] + a * basis[0][j] + b * basis[1][j]).collect())
            })
            .collect();
        let fit = pca_fit(&vectors, 2).unwrap();
        for (v, p) in vectors.iter().zip(&fit.projections) {
            let r = fit.reconstruct(p);
            let err: f64 = r.iter().zip(v.as_slice()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(err < 1e-9, "reconstruction error {err}");
        }
        let ratio: f64 = fit.explained_variance_ratio.iter().sum();
        assert!((ratio - 1.0).abs() < 1e-9);
        for c in &fit.components {
            let max = c.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            assert!(max > 0.0);
        }
    }

    #[test]
    fn gram_and_covariance_routes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dim = 40;
        let vectors: Vec<_> = (0..25).map(|_| ev((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())).collect();
        let cov = pca_fit_route(&vectors, 2, false).unwrap();
        let gram = pca_fit_route(&vectors, 2, true).unwrap();
        for k in 0..2 {
            assert!((cov.explained_variance[k] - gram.explained_variance[k]).abs() < 1e-9);
            for (a, b) in cov.components[k].iter().zip(&gram.components[k]) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        for (p, q) in cov.projections.iter().zip(&gram.projections) {
            assert!((p[0] - q[0]).abs() < 1e-9 && (p[1] - q[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_inputs() {
        let same = vec![ev(vec![1.0, 2.0, 3.0]); 3];
        assert!(matches!(pca_fit(&same, 2), Err(TestGenError::DegenerateCloud)));
        assert!(matches!(pca_fit(&same[..2], 2), Err(TestGenError::TooFewVectors { .. })));
    }

    #[test]
    fn merge_smallest_first() {
        // Four tight groups of 6 on a line; the 7-point group absorbs neighbours last.
        let mut points = Vec::new();
        for (g, size) in [(0.0, 6), (10.0, 7), (20.0, 6), (31.0, 6)] {
            for i in 0..size {
                points.push(vec![g + i as f64 * 0.01, 0.0]);
            }
        }
        let c = DensityClusterer { eps: Some(0.5), min_pts: 6, max_clusters: 3 };
        let out = Clusterer::<f64>::cluster(&c, &points).unwrap();
        assert_eq!(out.clusters.len(), 3);
        // Group 0 (smallest, lowest index) merges into its nearest neighbour, group 1.
        assert_eq!(out.clusters[0].len(), 13);
    }

    #[test]
    fn too_few_points() {
        let c = DensityClusterer::default();
        let pts = vec![vec![0.0f64, 0.0]; 3];
        assert!(matches!(Clusterer::<f64>::cluster(&c, &pts), Err(TestGenError::TooFewPoints { .. })));
    }

    #[test]
    fn isotropic_cloud_spreads_variance_evenly() {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dim = 64;
        let vectors: Vec<_> = (0..500)
            .map(|_| ev((0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()))
            .collect();
        let fit = pca_fit(&vectors, 2).unwrap();
        let ratio: f64 = fit.explained_variance_ratio.iter().sum();
        assert!((ratio - 2.0 / dim as f64).abs() < 0.05, "ratio {ratio}");
    }

    fn blob(rng: &mut ChaCha8Rng, centre: (f64, f64), n: usize) -> Vec<Vec<f64>> {
        use rand_distr::{Distribution, Normal};
        let noise = Normal::new(0.0, 0.3).unwrap();
        (0..n)
            .map(|_| vec![centre.0 + noise.sample(rng), centre.1 + noise.sample(rng)])
            .collect()
    }

    #[test]
    fn two_separated_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut points = blob(&mut rng, (0.0, 0.0), 50);
        points.extend(blob(&mut rng, (10.0, 10.0), 50));
        for eps in [Some(1.0), None] {
            let c = DensityClusterer { eps, ..DensityClusterer::default() };
            let out = Clusterer::<f64>::cluster(&c, &points).unwrap();
            assert_eq!(out.clusters, vec![(0..50).collect::<Vec<_>>(), (50..100).collect()]);
            assert!(out.outliers.is_empty());
        }
    }

    #[test]
    fn far_points_become_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut points = blob(&mut rng, (0.0, 0.0), 40);
        points.extend([vec![20.0, 0.0], vec![0.0, -25.0], vec![-30.0, 30.0]]);
        for eps in [Some(1.0), None] {
            let c = DensityClusterer { eps, ..DensityClusterer::default() };
            let out = Clusterer::<f64>::cluster(&c, &points).unwrap();
            assert_eq!(out.clusters.len(), 1);
            assert_eq!(out.outliers, vec![40, 41, 42]);
        }
    }

    #[test]
    fn sparse_points_have_no_clusters() {
        let points: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 * 100.0, 0.0]).collect();
        let c = DensityClusterer { eps: Some(1.0), ..DensityClusterer::default() };
        assert!(matches!(Clusterer::<f64>::cluster(&c, &points), Err(TestGenError::NoClusters)));
    }

    #[test]
    fn test_set_file_roundtrip() {
        let set = TestSet {
            params: TestGenParams {
                reducer: "pca".into(),
                target_dim: 2,
                clusterer: "dbscan".into(),
                eps: 0.125,
                min_pts: 6,
                max_clusters: 15,
                token_cap: 256,
                questions_per_cluster: 5,
                embedder_name: "local-fnv1a-64".into(),
                counters: vec!["whitespace-punct".into()],
            },
            pairs: vec![TestPair { question: "Why?".into(), answer_text: "Because.".into(), cluster_id: 0 }],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.jsonl");
        set.save(&path).unwrap();
        assert_eq!(TestSet::load(&path).unwrap(), set);
    }
}
