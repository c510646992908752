#include "fiberlab/topo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <string>
#include <tuple>

#include "fiberlab/errors.hpp"

namespace fiberlab::topo {

namespace {

constexpr std::size_t kMaxSimplices = 40'000'000;

bool filtration_less(const Simplex& a, const Simplex& b) {
  return std::tie(a.value, a.dim, a.vertices) < std::tie(b.value, b.dim, b.vertices);
}

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), std::size_t{0}); }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  // Larger root index joins the smaller one, so roots are deterministic.
  bool unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    if (a > b) std::swap(a, b);
    parent_[b] = a;
    return true;
  }

 private:
  std::vector<std::size_t> parent_;
};

// Symmetric difference of two sorted columns.
void add_column(std::vector<std::uint32_t>& col, const std::vector<std::uint32_t>& other,
                std::vector<std::uint32_t>& scratch) {
  scratch.clear();
  std::set_symmetric_difference(col.begin(), col.end(), other.begin(), other.end(), std::back_inserter(scratch));
  col.swap(scratch);
}

}  // namespace

double DistanceMatrix::max() const {
  double m = 0.0;
  for (double d : upper_) m = std::max(m, d);
  return m;
}

void DistanceMatrix::validate() const {
  for (double d : upper_)
    if (!std::isfinite(d) || d < 0.0) throw NumericError("distance matrix: entries must be finite and nonnegative");
}

DistanceMatrix pairwise_distances(const PointCloud& cloud) {
  cloud.validate();
  const std::size_t n = cloud.size();
  if (n < 1) throw DomainError("pairwise_distances: cloud is empty");
  DistanceMatrix d(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = cloud.point(i);
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto q = cloud.point(j);
      double s = 0.0;
      for (std::size_t k = 0; k < cloud.dim; ++k) {
        const double t = p[k] - q[k];
        s += t * t;
      }
      d.set(i, j, std::sqrt(s));
    }
  }
  return d;
}

Filtration rips_filtration(const DistanceMatrix& dmat, double max_scale) {
  dmat.validate();
  if (!(max_scale > 0.0) || !std::isfinite(max_scale)) throw DomainError("rips: max_scale must be positive and finite");
  const std::size_t n = dmat.size();
  if (n < 1) throw DomainError("rips: need at least one point");
  if (n > kMaxPointsH1)
    throw DomainError("rips: " + std::to_string(n) + " points exceeds the H1 limit of " + std::to_string(kMaxPointsH1) +
                      "; subsample first");

  Filtration f;
  f.vertex_count = n;
  f.max_scale = max_scale;
  for (std::size_t i = 0; i < n; ++i) f.simplices.push_back({0.0, 0, {static_cast<std::uint32_t>(i), 0, 0}});

  std::vector<std::vector<std::uint32_t>> nbrs(n);  // higher-index neighbours within scale
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = dmat(i, j);
      if (d <= max_scale) {
        nbrs[i].push_back(static_cast<std::uint32_t>(j));
        f.simplices.push_back({d, 1, {static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j), 0}});
      }
    }
  for (std::size_t i = 0; i < n; ++i) {
    const auto& ni = nbrs[i];
    for (std::size_t a = 0; a < ni.size(); ++a) {
      const std::uint32_t j = ni[a];
      for (std::size_t b = a + 1; b < ni.size(); ++b) {
        const std::uint32_t k = ni[b];
        const double djk = dmat(j, k);
        if (djk > max_scale) continue;
        const double v = std::max({dmat(i, j), dmat(i, k), djk});
        f.simplices.push_back({v, 2, {static_cast<std::uint32_t>(i), j, k}});
        if (f.simplices.size() > kMaxSimplices)
          throw DomainError("rips: complex exceeds " + std::to_string(kMaxSimplices) + " simplices; lower max_scale");
      }
    }
  }
  std::sort(f.simplices.begin(), f.simplices.end(), filtration_less);
  return f;
}

PersistenceDiagram rips_persistence(const DistanceMatrix& dmat, double max_scale) {
  const Filtration f = rips_filtration(dmat, max_scale);
  const std::size_t n = f.vertex_count;

  PersistenceDiagram dgm;
  dgm.max_scale = max_scale;
  dgm.point_count = n;

  // Filtration positions of edges and triangles, plus an (i, j) -> edge lookup.
  std::vector<std::uint32_t> edges;
  std::vector<std::uint32_t> triangles;
  std::vector<std::int32_t> edge_at(n * n, -1);
  for (std::size_t s = 0; s < f.simplices.size(); ++s) {
    const Simplex& sx = f.simplices[s];
    if (sx.dim == 1) {
      edge_at[sx.vertices[0] * n + sx.vertices[1]] = static_cast<std::int32_t>(edges.size());
      edges.push_back(static_cast<std::uint32_t>(s));
    } else if (sx.dim == 2) {
      triangles.push_back(static_cast<std::uint32_t>(s));
    }
  }

  // H0: elder rule with every vertex born at 0.
  std::vector<bool> negative(edges.size(), false);
  UnionFind uf(n);
  std::size_t components = n;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const Simplex& sx = f.simplices[edges[e]];
    if (uf.unite(sx.vertices[0], sx.vertices[1])) {
      negative[e] = true;
      --components;
      if (sx.value > 0.0) dgm.bars[0].push_back({0.0, sx.value, false});
    }
  }
  for (std::size_t c = 0; c < components; ++c)
    dgm.bars[0].push_back({0.0, std::numeric_limits<double>::infinity(), c > 0});

  // Coboundaries: triangle ranks (position in `triangles`) per edge, ascending.
  std::vector<std::vector<std::uint32_t>> cob(edges.size());
  for (std::size_t t = 0; t < triangles.size(); ++t) {
    const auto& v = f.simplices[triangles[t]].vertices;
    for (auto [a, b] : {std::pair{v[0], v[1]}, std::pair{v[0], v[2]}, std::pair{v[1], v[2]}})
      cob[static_cast<std::size_t>(edge_at[a * n + b])].push_back(static_cast<std::uint32_t>(t));
  }

  // H1: columns in reverse filtration order; pivot = earliest cofacet.
  constexpr std::uint32_t kNone = ~std::uint32_t{0};
  std::vector<std::uint32_t> pivot_owner(triangles.size(), kNone);
  std::vector<std::vector<std::uint32_t>> reduced(edges.size());
  std::vector<std::uint32_t> scratch;
  for (std::size_t e = edges.size(); e-- > 0;) {
    if (negative[e]) continue;  // cleared: paired in H0
    std::vector<std::uint32_t> col = std::move(cob[e]);
    while (!col.empty() && pivot_owner[col.front()] != kNone) add_column(col, reduced[pivot_owner[col.front()]], scratch);
    const double birth = f.simplices[edges[e]].value;
    if (col.empty()) {
      dgm.bars[1].push_back({birth, std::numeric_limits<double>::infinity(), true});
      continue;
    }
    const std::uint32_t pivot = col.front();
    pivot_owner[pivot] = static_cast<std::uint32_t>(e);
    const double death = f.simplices[triangles[pivot]].value;
    if (death > birth) dgm.bars[1].push_back({birth, death, false});
    reduced[e] = std::move(col);
  }

  for (auto& bars : dgm.bars)
    std::sort(bars.begin(), bars.end(), [](const Bar& a, const Bar& b) {
      return std::tie(a.birth, a.death, a.truncated) < std::tie(b.birth, b.death, b.truncated);
    });
  return dgm;
}

Betti betti_at(const PersistenceDiagram& diagram, double scale) {
  Betti b;
  for (const Bar& bar : diagram.bars[0])
    if (bar.birth <= scale && scale < bar.death) ++b.b0;
  for (const Bar& bar : diagram.bars[1])
    if (bar.birth <= scale && scale < bar.death) ++b.b1;
  return b;
}

double dominant_scale(const PersistenceDiagram& diagram) {
  std::vector<double> marks;
  for (const Bar& bar : diagram.bars[0]) {
    if (!bar.infinite()) marks.push_back(bar.death);
    else if (bar.truncated) marks.push_back(diagram.max_scale);
  }
  for (const Bar& bar : diagram.bars[1]) {
    marks.push_back(bar.birth);
    marks.push_back(bar.infinite() ? diagram.max_scale : bar.death);
  }
  if (marks.empty()) {
    if (diagram.point_count <= 1 && !diagram.bars[0].empty()) return 0.0;
    throw DegenerateError("dominant_scale: diagram has no nonzero-persistence features");
  }
  marks.push_back(0.0);
  std::sort(marks.begin(), marks.end());
  double best_gap = -1.0, best_mid = 0.0;
  for (std::size_t i = 0; i + 1 < marks.size(); ++i) {
    const double gap = marks[i + 1] - marks[i];
    if (gap > best_gap) {
      best_gap = gap;
      best_mid = 0.5 * (marks[i] + marks[i + 1]);
    }
  }
  if (!(best_gap > 0.0)) throw DegenerateError("dominant_scale: all features coincide");
  return best_mid;
}

void write_diagram_csv(std::ostream& out, const PersistenceDiagram& diagram) {
  out << "dim,birth,death\n";
  char buf[96];
  for (int d = 0; d < 2; ++d)
    for (const Bar& bar : diagram.bars[static_cast<std::size_t>(d)]) {
      if (bar.infinite()) std::snprintf(buf, sizeof buf, "%d,%.9g,inf\n", d, bar.birth);
      else std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g\n", d, bar.birth, bar.death);
      out << buf;
    }
}

void save_diagram_csv(const std::filesystem::path& path, const PersistenceDiagram& diagram) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_diagram_csv(out, diagram);
}

}  // namespace fiberlab::topo
