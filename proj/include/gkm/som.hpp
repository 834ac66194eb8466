#pragma once

// Self-organizing maps on a D-dimensional lattice, grown node-wise and
// dimension-wise, plus the cross-run stability evaluation that decides
// when the lattice dimensionality is sufficient.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "common.hpp"

namespace gkm {

// Linear decay from `initial` to `final` over a phase.
struct Schedule {
  double initial = 0.0;
  double final = 0.0;

  double at(double progress) const { return initial + (final - initial) * progress; }

  friend bool operator==(const Schedule&, const Schedule&) = default;
};

struct TrainingSchedule {
  std::size_t epochs = 0;
  Schedule learning_rate;
  Schedule radius;
};

struct PhaseSummary {
  std::size_t dim = 0;
  std::size_t epochs = 0;
  double quantization_error = 0.0;

  friend bool operator==(const PhaseSummary&, const PhaseSummary&) = default;
};

// Nodes are stored with lattice axis 0 varying fastest. Appending a new
// slowest axis therefore leaves the indices of the layer at coordinate 0
// unchanged, which keeps the BMU tie rule stable across dimension growth.
class Som {
public:
  Som() = default;

  Som(std::vector<std::size_t> axis_sizes, std::size_t weight_length, std::uint64_t seed)
      : axis_sizes_(std::move(axis_sizes)), weight_length_(weight_length), seed_(seed) {
    if (axis_sizes_.empty()) throw Error("invalid_som", "lattice needs at least one axis");
    std::size_t count = 1;
    for (auto s : axis_sizes_) {
      if (s == 0) throw Error("invalid_som", "axis sizes must be positive");
      count *= s;
    }
    weights_.assign(count * weight_length_, 0.0);
    build_lattice();
  }

  std::size_t dim() const noexcept { return axis_sizes_.size(); }
  const std::vector<std::size_t>& axis_sizes() const noexcept { return axis_sizes_; }
  std::size_t node_count() const noexcept { return node_count_; }
  std::size_t weight_length() const noexcept { return weight_length_; }
  std::uint64_t seed() const noexcept { return seed_; }

  std::span<const double> weights(std::size_t node) const {
    return {weights_.data() + node * weight_length_, weight_length_};
  }
  std::span<double> weights(std::size_t node) {
    return {weights_.data() + node * weight_length_, weight_length_};
  }
  const std::vector<double>& weight_data() const noexcept { return weights_; }
  std::vector<double>& weight_data() noexcept { return weights_; }

  std::span<const std::int32_t> lattice_coords(std::size_t node) const {
    return {lattice_.data() + node * dim(), dim()};
  }

  std::size_t node_index(std::span<const std::size_t> coords) const {
    std::size_t index = 0;
    std::size_t stride = 1;
    for (std::size_t a = 0; a < dim(); ++a) {
      if (coords[a] >= axis_sizes_[a]) throw Error("invalid_som", "lattice coordinate out of bounds");
      index += coords[a] * stride;
      stride *= axis_sizes_[a];
    }
    return index;
  }

  double lattice_distance_sq(std::size_t a, std::size_t b) const {
    double sum = 0.0;
    for (std::size_t k = 0; k < dim(); ++k) {
      const double d = lattice_[a * dim() + k] - lattice_[b * dim() + k];
      sum += d * d;
    }
    return sum;
  }

  // Linear scan; exact ties go to the smallest node index.
  std::size_t best_matching_unit(std::span<const double> x) const {
    if (x.size() != weight_length_) {
      throw Error("dimension_mismatch", "vector length " + std::to_string(x.size()) +
                                            " does not match SOM weight length " + std::to_string(weight_length_));
    }
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    const std::size_t n = node_count();
    for (std::size_t node = 0; node < n; ++node) {
      const double d = squared_distance(weights(node), x);
      if (d < best_d) {
        best_d = d;
        best = node;
      }
    }
    return best;
  }

  std::vector<PhaseSummary>& training_log() noexcept { return log_; }
  const std::vector<PhaseSummary>& training_log() const noexcept { return log_; }

  friend bool operator==(const Som& a, const Som& b) {
    return a.axis_sizes_ == b.axis_sizes_ && a.weight_length_ == b.weight_length_ && a.seed_ == b.seed_ &&
           a.weights_ == b.weights_ && a.log_ == b.log_;
  }

private:
  void build_lattice() {
    node_count_ = 1;
    for (auto s : axis_sizes_) node_count_ *= s;
    lattice_.assign(node_count_ * dim(), 0);
    for (std::size_t node = 0; node < node_count_; ++node) {
      std::size_t rest = node;
      for (std::size_t a = 0; a < dim(); ++a) {
        lattice_[node * dim() + a] = static_cast<std::int32_t>(rest % axis_sizes_[a]);
        rest /= axis_sizes_[a];
      }
    }
  }

  std::vector<std::size_t> axis_sizes_;
  std::size_t weight_length_ = 0;
  std::size_t node_count_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<double> weights_;
  std::vector<std::int32_t> lattice_;
  std::vector<PhaseSummary> log_;
};

// Each node starts as a random convex combination of up to three sample vectors.
inline Som init_som(std::size_t dim, std::vector<std::size_t> axis_sizes, std::span<const Vector> data_sample,
                    std::uint64_t seed) {
  if (data_sample.empty()) throw Error("empty_data", "cannot initialise a SOM from an empty data sample");
  if (dim < 1 || axis_sizes.size() != dim) throw Error("invalid_som", "axis_sizes must have one entry per dimension");
  const std::size_t width = data_sample.front().size();
  for (const auto& v : data_sample) {
    if (v.size() != width) throw Error("dimension_mismatch", "data sample vectors differ in length");
  }

  Som som(std::move(axis_sizes), width, seed);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, data_sample.size() - 1);
  std::exponential_distribution<double> gamma1(1.0);
  constexpr int kMix = 3;
  for (std::size_t node = 0; node < som.node_count(); ++node) {
    std::size_t chosen[kMix];
    double mix[kMix];
    double total = 0.0;
    for (int k = 0; k < kMix; ++k) {
      chosen[k] = pick(rng);
      mix[k] = gamma1(rng);
      total += mix[k];
    }
    auto w = som.weights(node);
    for (std::size_t i = 0; i < width; ++i) {
      double value = 0.0;
      for (int k = 0; k < kMix; ++k) value += mix[k] / total * data_sample[chosen[k]][i];
      w[i] = value;
    }
  }
  return som;
}

inline double quantization_error(const Som& som, std::span<const Vector> vectors) {
  if (vectors.empty()) return 0.0;
  double total = 0.0;
  for (const auto& x : vectors) total += std::sqrt(squared_distance(som.weights(som.best_matching_unit(x)), x));
  return total / static_cast<double>(vectors.size());
}

// Sequential Kohonen training. Per sample: find the BMU, then move every node
// within the current lattice radius toward the sample with a Gaussian kernel.
// Learning rate and radius decay linearly across the whole phase; sample
// order is reshuffled every epoch.
inline Som train(Som som, std::span<const Vector> vectors, const TrainingSchedule& schedule, std::uint64_t seed) {
  if (vectors.empty()) throw Error("empty_data", "cannot train a SOM on zero vectors");
  for (const auto& v : vectors) {
    if (v.size() != som.weight_length()) {
      throw Error("dimension_mismatch", "training vector length " + std::to_string(v.size()) +
                                            " does not match SOM weight length " + std::to_string(som.weight_length()));
    }
  }
  if (schedule.epochs == 0) return som;

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(vectors.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t total = schedule.epochs * vectors.size();
  const std::size_t nodes = som.node_count();
  const std::size_t width = som.weight_length();
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < schedule.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t idx : order) {
      const double progress = total > 1 ? static_cast<double>(step) / static_cast<double>(total - 1) : 0.0;
      ++step;
      const double rate = schedule.learning_rate.at(progress);
      const double radius = schedule.radius.at(progress);
      const double radius_sq = radius * radius;
      const auto& x = vectors[idx];
      const std::size_t bmu = som.best_matching_unit(x);
      for (std::size_t node = 0; node < nodes; ++node) {
        const double d2 = som.lattice_distance_sq(node, bmu);
        if (d2 > radius_sq) continue;
        const double h = rate * std::exp(-d2 / (2.0 * radius_sq));
        auto w = som.weights(node);
        for (std::size_t i = 0; i < width; ++i) w[i] += h * (x[i] - w[i]);
      }
    }
  }
  som.training_log().push_back({som.dim(), schedule.epochs, quantization_error(som, vectors)});
  return som;
}

// BMU lattice position as real coordinates.
inline Vector project(const Som& som, std::span<const double> x) {
  const auto coords = som.lattice_coords(som.best_matching_unit(x));
  return Vector(coords.begin(), coords.end());
}

// Every axis of size s becomes 2s-1. Originals move to doubled coordinates
// and keep their weights; each inserted node takes the mean of the original
// nodes adjacent to it (2 along an axis, 2^k at k-fold diagonal positions).
inline Som grow_nodes(const Som& som) {
  std::vector<std::size_t> grown_axes;
  for (auto s : som.axis_sizes()) grown_axes.push_back(2 * s - 1);
  Som grown(grown_axes, som.weight_length(), som.seed());
  grown.training_log() = som.training_log();

  const std::size_t d = som.dim();
  std::vector<std::size_t> source(d);
  for (std::size_t node = 0; node < grown.node_count(); ++node) {
    const auto coords = grown.lattice_coords(node);
    std::vector<std::size_t> odd_axes;
    for (std::size_t a = 0; a < d; ++a) {
      if (coords[a] % 2) odd_axes.push_back(a);
    }
    auto w = grown.weights(node);
    std::fill(w.begin(), w.end(), 0.0);
    const std::size_t corners = std::size_t{1} << odd_axes.size();
    for (std::size_t mask = 0; mask < corners; ++mask) {
      for (std::size_t a = 0; a < d; ++a) source[a] = static_cast<std::size_t>(coords[a]) / 2;
      for (std::size_t k = 0; k < odd_axes.size(); ++k) {
        if (mask & (std::size_t{1} << k)) ++source[odd_axes[k]];
      }
      const auto src = som.weights(som.node_index(source));
      for (std::size_t i = 0; i < w.size(); ++i) w[i] += src[i];
    }
    if (corners > 1) {
      const double inv = 1.0 / static_cast<double>(corners);
      for (auto& value : w) value *= inv;
    }
  }
  return grown;
}

// D -> D+1 by replicating the lattice `new_axis_size` times along a new
// slowest axis. Layer 0 is an exact copy; the other layers get seeded
// Gaussian jitter of norm ~1e-3 x mean weight norm so the new axis can
// separate during the next training phase. Pass no seed to disable jitter.
inline Som grow_dimension(const Som& som, std::size_t new_axis_size, std::size_t max_dim,
                          std::optional<std::uint64_t> jitter_seed) {
  if (som.dim() + 1 > max_dim) {
    throw Error("max_dim_exceeded", "cannot grow beyond max_dim=" + std::to_string(max_dim));
  }
  if (new_axis_size < 1) throw Error("invalid_som", "new axis size must be positive");
  auto axes = som.axis_sizes();
  axes.push_back(new_axis_size);
  Som grown(axes, som.weight_length(), som.seed());
  grown.training_log() = som.training_log();

  const std::size_t layer = som.node_count();
  const std::size_t width = som.weight_length();
  double mean_norm = 0.0;
  for (std::size_t node = 0; node < layer; ++node) {
    mean_norm += std::sqrt(squared_distance(som.weights(node), std::vector<double>(width, 0.0)));
  }
  mean_norm /= static_cast<double>(std::max<std::size_t>(layer, 1));
  const double sigma = width ? 1e-3 * mean_norm / std::sqrt(static_cast<double>(width)) : 0.0;

  std::mt19937_64 rng(jitter_seed.value_or(0));
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t copy = 0; copy < new_axis_size; ++copy) {
    for (std::size_t node = 0; node < layer; ++node) {
      const auto src = som.weights(node);
      auto dst = grown.weights(copy * layer + node);
      std::copy(src.begin(), src.end(), dst.begin());
      if (copy > 0 && jitter_seed) {
        for (auto& value : dst) value += sigma * noise(rng);
      }
    }
  }
  return grown;
}

// Condensed (i<j) pairwise Euclidean distances.
inline Vector pairwise_distances(std::span<const Vector> points) {
  Vector out;
  out.reserve(points.size() * (points.size() - 1) / 2);
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (std::size_t j = i + 1; j < points.size(); ++j) {
      out.push_back(std::sqrt(squared_distance(points[i], points[j])));
    }
  }
  return out;
}

// Pearson correlation of the two condensed distance vectors. A constant
// vector has no correlation; two constant vectors count as agreeing only
// when both are zero or both are non-zero.
inline double stability_score(std::span<const Vector> coords_a, std::span<const Vector> coords_b) {
  if (coords_a.size() != coords_b.size()) throw Error("size_mismatch", "probe sets differ in size");
  if (coords_a.size() < 3) throw Error("too_few_probes", "stability needs at least 3 probes");

  const Vector da = pairwise_distances(coords_a);
  const Vector db = pairwise_distances(coords_b);
  const double n = static_cast<double>(da.size());
  const double mean_a = std::accumulate(da.begin(), da.end(), 0.0) / n;
  const double mean_b = std::accumulate(db.begin(), db.end(), 0.0) / n;
  double cov = 0.0, var_a = 0.0, var_b = 0.0;
  for (std::size_t i = 0; i < da.size(); ++i) {
    const double xa = da[i] - mean_a;
    const double xb = db[i] - mean_b;
    cov += xa * xb;
    var_a += xa * xa;
    var_b += xb * xb;
  }
  const bool const_a = std::all_of(da.begin(), da.end(), [&](double v) { return v == da.front(); });
  const bool const_b = std::all_of(db.begin(), db.end(), [&](double v) { return v == db.front(); });
  if (const_a || const_b) {
    return const_a && const_b && ((da.front() == 0.0) == (db.front() == 0.0)) ? 1.0 : 0.0;
  }
  const double r = cov / std::sqrt(var_a * var_b);
  return std::clamp(r, -1.0, 1.0);
}

struct SomConfig {
  std::size_t initial_dim = 2;
  std::size_t nodes_per_axis = 6;
  std::size_t epochs_per_phase = 40;
  Schedule learning_rate{0.5, 0.02};
  Schedule neighborhood_radius{3.0, 1.5};
  std::size_t parallel_runs = 3;
  double stability_threshold = 0.9;
  std::size_t max_dim = 4;
  std::size_t probe_size = 100;
  std::uint64_t seed = 1;
  // Axis size used when a dimension is added; 0 means the current smallest axis.
  std::size_t grown_axis_size = 0;

  // Test-mode switches.
  bool jitter = true;
  bool force_equal_seeds = false;

  void validate() const {
    auto fail = [](const std::string& what) { throw Error("invalid_config", what); };
    if (initial_dim < 1) fail("initial_dim must be >= 1");
    if (initial_dim > max_dim) fail("initial_dim must not exceed max_dim");
    if (nodes_per_axis < 2) fail("nodes_per_axis must be >= 2");
    if (parallel_runs < 2) fail("parallel_runs must be >= 2");
    if (!(stability_threshold > 0.0 && stability_threshold <= 1.0)) fail("stability_threshold must lie in (0, 1]");
    if (probe_size < 3) fail("probe_size must be >= 3");
    for (const auto& s : {learning_rate, neighborhood_radius}) {
      if (!(s.initial >= s.final && s.final > 0.0)) fail("schedules need initial >= final > 0");
    }
  }

  std::vector<std::uint64_t> run_seeds() const {
    std::vector<std::uint64_t> seeds;
    for (std::size_t r = 0; r < parallel_runs; ++r) {
      seeds.push_back(derive_seed(seed, force_equal_seeds ? 100 : 100 + r));
    }
    return seeds;
  }
};

struct PairScore {
  std::size_t run_a = 0;
  std::size_t run_b = 0;
  double score = 0.0;

  friend bool operator==(const PairScore&, const PairScore&) = default;
};

struct StabilityReport {
  std::size_t dim = 0;
  std::vector<PairScore> pairwise_scores;
  double mean_score = 0.0;
  bool stabilized = false;

  friend bool operator==(const StabilityReport&, const StabilityReport&) = default;
};

struct PhaseRecord {
  StabilityReport report;
  double wall_seconds = 0.0;
};

struct Evaluation {
  std::size_t final_dim = 0;
  std::vector<Som> soms;
  std::vector<StabilityReport> reports;
  std::vector<std::size_t> probe_indices;
};

// Seeded sample of `count` distinct indices, returned in ascending order.
inline std::vector<std::size_t> select_probes(std::size_t population, std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> pool(population);
  std::iota(pool.begin(), pool.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, population - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

// Trains `parallel_runs` independent SOMs at D = initial_dim, scores the
// agreement of their probe projections, and adds a lattice dimension to
// every run until the mean pairwise score reaches the threshold or max_dim
// is hit. Runs are independent tasks joined at each scoring barrier.
inline Evaluation incremental_evaluate(std::span<const Vector> vectors, const SomConfig& config,
                                       const std::function<void(const PhaseRecord&)>& on_phase = {}) {
  config.validate();
  if (vectors.size() < config.probe_size) {
    throw Error("invalid_config", "probe_size exceeds the number of vectors");
  }

  Evaluation result;
  result.probe_indices = select_probes(vectors.size(), config.probe_size, derive_seed(config.seed, 0));
  const auto seeds = config.run_seeds();
  const TrainingSchedule schedule{config.epochs_per_phase, config.learning_rate, config.neighborhood_radius};

  std::vector<Som> runs(config.parallel_runs);
  for (std::size_t dim = config.initial_dim;; ++dim) {
    const auto started = std::chrono::steady_clock::now();
    std::vector<std::future<std::pair<Som, std::vector<Vector>>>> workers;
    for (std::size_t r = 0; r < config.parallel_runs; ++r) {
      workers.push_back(std::async(std::launch::async, [&, r] {
        Som som;
        if (dim == config.initial_dim) {
          som = init_som(dim, std::vector<std::size_t>(dim, config.nodes_per_axis), vectors, seeds[r]);
        } else {
          const auto& axes = runs[r].axis_sizes();
          const std::size_t new_axis =
              config.grown_axis_size ? config.grown_axis_size : *std::min_element(axes.begin(), axes.end());
          std::optional<std::uint64_t> jitter;
          if (config.jitter) jitter = derive_seed(seeds[r], 1000 + dim);
          som = grow_dimension(runs[r], new_axis, config.max_dim, jitter);
        }
        som = train(std::move(som), vectors, schedule, derive_seed(seeds[r], dim));
        std::vector<Vector> projections;
        for (auto idx : result.probe_indices) projections.push_back(project(som, vectors[idx]));
        return std::make_pair(std::move(som), std::move(projections));
      }));
    }
    std::vector<std::vector<Vector>> probes(config.parallel_runs);
    for (std::size_t r = 0; r < config.parallel_runs; ++r) {
      auto [som, projections] = workers[r].get();
      runs[r] = std::move(som);
      probes[r] = std::move(projections);
    }

    StabilityReport report;
    report.dim = dim;
    for (std::size_t a = 0; a < config.parallel_runs; ++a) {
      for (std::size_t b = a + 1; b < config.parallel_runs; ++b) {
        report.pairwise_scores.push_back({a, b, stability_score(probes[a], probes[b])});
      }
    }
    double sum = 0.0;
    for (const auto& p : report.pairwise_scores) sum += p.score;
    report.mean_score = sum / static_cast<double>(report.pairwise_scores.size());
    report.stabilized = report.mean_score >= config.stability_threshold;
    result.reports.push_back(report);

    if (on_phase) {
      const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - started;
      on_phase({report, elapsed.count()});
    }
    if (report.stabilized || dim >= config.max_dim) {
      result.final_dim = dim;
      break;
    }
  }
  result.soms = std::move(runs);
  return result;
}

}  // namespace gkm
