#include "fiberlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <string>

#include "fiberlab/errors.hpp"
#include "fiberlab/losses.hpp"
#include "fiberlab/rng.hpp"

namespace fiberlab::metrics {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

double mean_or_nan(double sum, std::size_t count) { return count ? sum / static_cast<double>(count) : kNaN; }

}  // namespace

LatentSet::LatentSet(PointCloud cloud) : embeddings(std::move(cloud)) {
  embeddings.validate();
  if (!embeddings.semantic_id || !embeddings.orbit_id) throw DomainError("latent set: semantic_id and orbit_id are required");
}

double orbit_collapse_ratio(const LatentSet& latents, GroupBy group_by) {
  const PointCloud& pc = latents.embeddings;
  const auto& ids = group_by == GroupBy::orbit ? latents.orbit() : latents.semantic();
  const std::size_t D = pc.dim, N = pc.size();

  std::map<int, std::size_t> slot;
  for (int id : ids) slot.emplace(id, 0);
  if (slot.size() < 2) throw DegenerateError("orbit_collapse_ratio: need at least two groups");
  std::size_t next = 0;
  for (auto& [id, s] : slot) s = next++;

  const std::size_t G = slot.size();
  std::vector<double> centroids(G * D, 0.0), global(D, 0.0);
  std::vector<std::size_t> counts(G, 0);
  for (std::size_t i = 0; i < N; ++i) {
    const std::size_t g = slot[ids[i]];
    ++counts[g];
    const auto p = pc.point(i);
    for (std::size_t d = 0; d < D; ++d) {
      centroids[g * D + d] += p[d];
      global[d] += p[d];
    }
  }
  for (std::size_t g = 0; g < G; ++g) {
    if (counts[g] < 2) throw DegenerateError("orbit_collapse_ratio: every group needs at least two members");
    for (std::size_t d = 0; d < D; ++d) centroids[g * D + d] /= static_cast<double>(counts[g]);
  }
  for (double& v : global) v /= static_cast<double>(N);

  double within = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    const std::size_t g = slot[ids[i]];
    const auto p = pc.point(i);
    for (std::size_t d = 0; d < D; ++d) {
      const double t = p[d] - centroids[g * D + d];
      within += t * t;
    }
  }
  within /= static_cast<double>(N);

  double between = 0.0;
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t d = 0; d < D; ++d) {
      const double t = centroids[g * D + d] - global[d];
      between += t * t;
    }
  between /= static_cast<double>(G);
  if (!(between > 0.0)) throw DegenerateError("orbit_collapse_ratio: group centroids coincide");
  return within / between;
}

ProbeResult linear_probe(const LatentSet& latents, int epochs, double lr, std::uint64_t seed) {
  const PointCloud& pc = latents.embeddings;
  const auto& labels = latents.semantic();
  const std::size_t N = pc.size(), D = pc.dim;
  if (epochs < 0 || !(lr > 0.0)) throw DomainError("linear_probe: epochs must be >= 0 and lr > 0");
  if (N < 2) throw DegenerateError("linear_probe: need at least two points");
  for (int y : labels)
    if (y < 0) throw DomainError("linear_probe: negative class id");
  const std::size_t C = static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end())) + 1;
  if (C < 2) throw DegenerateError("linear_probe: need at least two classes");

  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());
  const std::size_t train_n = std::max<std::size_t>(1, std::min(N - 1, (N * 8 + 5) / 10));
  const std::span<const std::size_t> train_idx(order.data(), train_n);
  const std::span<const std::size_t> test_idx(order.data() + train_n, N - train_n);

  std::vector<bool> seen(C, false);
  for (std::size_t i : train_idx) seen[static_cast<std::size_t>(labels[i])] = true;
  for (std::size_t c = 0; c < C; ++c)
    if (!seen[c]) throw DegenerateError("linear_probe: class " + std::to_string(c) + " absent from the training split");

  std::vector<double> mean(D, 0.0), scale(D, 0.0);
  for (std::size_t i : train_idx)
    for (std::size_t d = 0; d < D; ++d) mean[d] += pc.point(i)[d];
  for (double& m : mean) m /= static_cast<double>(train_n);
  for (std::size_t i : train_idx)
    for (std::size_t d = 0; d < D; ++d) {
      const double t = pc.point(i)[d] - mean[d];
      scale[d] += t * t;
    }
  for (double& s : scale) {
    s = std::sqrt(s / static_cast<double>(train_n));
    if (!(s > 1e-12)) s = 1.0;
  }

  Tensor x({train_n, D});
  std::vector<int> y(train_n);
  for (std::size_t r = 0; r < train_n; ++r) {
    const auto p = pc.point(train_idx[r]);
    for (std::size_t d = 0; d < D; ++d) x(r, d) = (p[d] - mean[d]) / scale[d];
    y[r] = labels[train_idx[r]];
  }

  Tensor w({D, C});
  Tensor b({C});
  Tensor logits({train_n, C});
  Tensor g;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (std::size_t r = 0; r < train_n; ++r)
      for (std::size_t c = 0; c < C; ++c) {
        double z = b[c];
        for (std::size_t d = 0; d < D; ++d) z += x(r, d) * w(d, c);
        logits(r, c) = z;
      }
    net::loss_classification(logits, y, &g);
    Tensor gw({D, C});
    Tensor gb({C});
    for (std::size_t r = 0; r < train_n; ++r)
      for (std::size_t c = 0; c < C; ++c) {
        const double gr = g(r, c);
        gb[c] += gr;
        for (std::size_t d = 0; d < D; ++d) gw(d, c) += x(r, d) * gr;
      }
    net::sgd_update(w, gw, lr);
    net::sgd_update(b, gb, lr);
  }

  ProbeResult res;
  res.train_count = train_n;
  res.test_count = test_idx.size();
  res.head.weight = Tensor({D, C});
  res.head.bias.assign(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    double shift = b[c];
    for (std::size_t d = 0; d < D; ++d) {
      res.head.weight(d, c) = w(d, c) / scale[d];
      shift -= mean[d] * w(d, c) / scale[d];
    }
    res.head.bias[c] = shift;
  }
  res.head.validate();

  std::size_t correct = 0;
  for (std::size_t i : test_idx)
    if (res.head.predict(pc.point(i)) == labels[i]) ++correct;
  res.accuracy = test_idx.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(test_idx.size());
  return res;
}

double convexity_violation_rate(const Scorer& scorer, std::size_t classes, const PointCloud& points,
                                std::size_t pairs, std::uint64_t seed) {
  if (pairs < 1) throw DomainError("convexity_violation_rate: pairs must be >= 1");
  if (classes < 1) throw DomainError("convexity_violation_rate: need at least one class");
  const std::size_t N = points.size(), D = points.dim;
  std::vector<double> scores(classes);
  const auto argmax = [&](std::span<const double> x) {
    scorer(x, scores);
    return static_cast<int>(std::max_element(scores.begin(), scores.end()) - scores.begin());
  };

  std::vector<int> predicted(N);
  std::vector<std::vector<std::size_t>> members(classes);
  for (std::size_t i = 0; i < N; ++i) {
    predicted[i] = argmax(points.point(i));
    members[static_cast<std::size_t>(predicted[i])].push_back(i);
  }
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < N; ++i)
    if (members[static_cast<std::size_t>(predicted[i])].size() >= 2) eligible.push_back(i);
  if (eligible.empty()) return 0.0;

  Rng rng(seed);
  std::vector<double> mid(D);
  std::size_t violations = 0;
  for (std::size_t p = 0; p < pairs; ++p) {
    const std::size_t i = eligible[rng.below(eligible.size())];
    const auto& group = members[static_cast<std::size_t>(predicted[i])];
    std::size_t j = i;
    while (j == i) j = group[rng.below(group.size())];
    const auto a = points.point(i), b = points.point(j);
    for (std::size_t d = 0; d < D; ++d) mid[d] = 0.5 * (a[d] + b[d]);
    scorer(mid, scores);
    const double best = *std::max_element(scores.begin(), scores.end());
    if (scores[static_cast<std::size_t>(predicted[i])] < best) ++violations;
  }
  return static_cast<double>(violations) / static_cast<double>(pairs);
}

double convexity_violation_rate(const net::ReadoutHead& head, const LatentSet& latents, std::size_t pairs,
                                std::uint64_t seed) {
  head.validate();
  if (head.latent_dim() != latents.dim()) throw DomainError("convexity_violation_rate: head and latent widths differ");
  const Scorer scorer = [&head](std::span<const double> x, std::span<double> out) { head.logits(x, out); };
  return convexity_violation_rate(scorer, head.classes(), latents.embeddings, pairs, seed);
}

void MetricSeries::validate() const {
  const std::size_t n = epochs.size();
  for (const auto* s : {&expansion, &within_orbit, &within_class, &between_class, &snap_ratio, &probe_accuracy})
    if (s->size() != n) throw DomainError("metric series: unequal series lengths");
  for (std::size_t i = 1; i < n; ++i)
    if (epochs[i] <= epochs[i - 1]) throw DomainError("metric series: epochs must be strictly increasing");
}

MetricSeries expansion_trace(std::span<const Snapshot> snapshots) {
  if (snapshots.size() < 2) throw DomainError("expansion_trace: need at least two snapshots");
  const std::size_t N = snapshots.front().latents.size();
  MetricSeries series;
  for (const Snapshot& snap : snapshots) {
    const LatentSet& ls = snap.latents;
    if (ls.size() != N) throw DomainError("expansion_trace: inconsistent point counts across snapshots");
    if (ls.semantic() != snapshots.front().latents.semantic() || ls.orbit() != snapshots.front().latents.orbit())
      throw DomainError("expansion_trace: inconsistent tagging across snapshots");
    const PointCloud& pc = ls.embeddings;
    double all = 0.0, orbit = 0.0, same = 0.0, diff = 0.0;
    std::size_t n_all = 0, n_orbit = 0, n_same = 0, n_diff = 0;
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = i + 1; j < N; ++j) {
        const double d = distance(pc.point(i), pc.point(j));
        all += d;
        ++n_all;
        if (ls.orbit()[i] == ls.orbit()[j]) {
          orbit += d;
          ++n_orbit;
        }
        if (ls.semantic()[i] == ls.semantic()[j]) {
          same += d;
          ++n_same;
        } else {
          diff += d;
          ++n_diff;
        }
      }
    series.epochs.push_back(snap.epoch);
    series.expansion.push_back(mean_or_nan(all, n_all));
    series.within_orbit.push_back(mean_or_nan(orbit, n_orbit));
    series.within_class.push_back(mean_or_nan(same, n_same));
    series.between_class.push_back(mean_or_nan(diff, n_diff));
    series.snap_ratio.push_back(series.within_class.back() / series.expansion.back());
    series.probe_accuracy.push_back(kNaN);
  }
  series.validate();
  return series;
}

void write_series_csv(std::ostream& out, const MetricSeries& series) {
  series.validate();
  out << "epoch,expansion,within_orbit,within_class,between_class,probe_accuracy\n";
  char buf[256];
  for (std::size_t i = 0; i < series.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.9g\n", series.epochs[i], series.expansion[i],
                  series.within_orbit[i], series.within_class[i], series.between_class[i], series.probe_accuracy[i]);
    out << buf;
  }
}

PcaResult pca(const PointCloud& cloud, std::size_t k, std::uint64_t seed) {
  cloud.validate();
  const std::size_t N = cloud.size(), D = cloud.dim;
  if (k < 1 || k > D) throw DomainError("pca: k must lie in [1, dim]");
  if (N <= k) throw DomainError("pca: need more points than components");

  std::vector<double> mean(D, 0.0);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t d = 0; d < D; ++d) mean[d] += cloud.point(i)[d];
  for (double& m : mean) m /= static_cast<double>(N);

  std::vector<double> cov(D * D, 0.0);
  std::vector<double> centered(N * D);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t d = 0; d < D; ++d) centered[i * D + d] = cloud.point(i)[d] - mean[d];
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t a = 0; a < D; ++a)
      for (std::size_t b = 0; b < D; ++b) cov[a * D + b] += centered[i * D + a] * centered[i * D + b];
  double total = 0.0;
  for (std::size_t a = 0; a < D * D; ++a) cov[a] /= static_cast<double>(N);
  for (std::size_t a = 0; a < D; ++a) total += cov[a * D + a];
  if (!(total > 0.0)) throw DegenerateError("pca: cloud has zero variance");

  Rng rng(seed);
  std::vector<double> q(D * k);  // column-major: q[c * D + d]
  for (double& v : q) v = rng.normal();

  std::vector<double> next(D * k);
  const auto orthonormalize = [&](std::vector<double>& m) {
    for (std::size_t c = 0; c < k; ++c) {
      double* col = &m[c * D];
      for (int attempt = 0;; ++attempt) {
        for (std::size_t p = 0; p < c; ++p) {
          const double* prev = &m[p * D];
          double dot = 0.0;
          for (std::size_t d = 0; d < D; ++d) dot += col[d] * prev[d];
          for (std::size_t d = 0; d < D; ++d) col[d] -= dot * prev[d];
        }
        double norm = 0.0;
        for (std::size_t d = 0; d < D; ++d) norm += col[d] * col[d];
        norm = std::sqrt(norm);
        if (norm > 1e-12 || attempt > 8) {
          for (std::size_t d = 0; d < D; ++d) col[d] /= norm;
          break;
        }
        // Collapsed onto earlier directions (rank-deficient data): restart this column.
        for (std::size_t d = 0; d < D; ++d) col[d] = rng.normal();
      }
    }
  };
  orthonormalize(q);
  for (int it = 0; it < kPcaIterations; ++it) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t c = 0; c < k; ++c)
      for (std::size_t a = 0; a < D; ++a) {
        double s = 0.0;
        for (std::size_t b = 0; b < D; ++b) s += cov[a * D + b] * q[c * D + b];
        next[c * D + a] = s;
      }
    // Keep null-space columns alive: fall back to the previous direction.
    for (std::size_t c = 0; c < k; ++c) {
      double norm = 0.0;
      for (std::size_t d = 0; d < D; ++d) norm += next[c * D + d] * next[c * D + d];
      if (!(norm > 1e-30 * total * total))
        for (std::size_t d = 0; d < D; ++d) next[c * D + d] = q[c * D + d];
    }
    orthonormalize(next);
    q.swap(next);
  }

  PcaResult res;
  res.total_variance = total;
  res.projected.dim = k;
  res.projected.coords.resize(N * k);
  res.projected.orbit_id = cloud.orbit_id;
  res.projected.semantic_id = cloud.semantic_id;
  res.component_variance.assign(k, 0.0);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t c = 0; c < k; ++c) {
      double s = 0.0;
      for (std::size_t d = 0; d < D; ++d) s += centered[i * D + d] * q[c * D + d];
      res.projected.coords[i * k + c] = s;
      res.component_variance[c] += s * s;
    }
  for (double& v : res.component_variance) v /= static_cast<double>(N);
  return res;
}

PointCloud pca_project(const PointCloud& cloud, std::size_t k, std::uint64_t seed) {
  return pca(cloud, k, seed).projected;
}

}  // namespace fiberlab::metrics
