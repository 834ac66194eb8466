#pragma once

// Simulated learnable decoder. Synthetic subjects turn map coordinates into
// voxel activation patterns; a one-hidden-layer network learns the inverse.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "knowledge_map.hpp"

namespace gkm {

// Voxel response = mixing * (shared_baseline + shared_weight * c)
//                + (1 - mixing) * (subject_baseline + subject_weight * c)
//                + N(0, noise_sigma^2) per voxel.
// The baselines model resting activity; zero vectors give a purely linear
// response.
struct SyntheticSubject {
  std::string id;
  Eigen::MatrixXd shared_weight;   // voxels x D, common to the cohort
  Eigen::MatrixXd subject_weight;  // voxels x D, individual
  Eigen::VectorXd shared_baseline;
  Eigen::VectorXd subject_baseline;
  double mixing = 1.0;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  bool nonlinear = false;  // pass the response through tanh before noise

  std::size_t voxels() const { return static_cast<std::size_t>(shared_weight.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(shared_weight.cols()); }

  void validate() const {
    if (shared_weight.rows() != subject_weight.rows() || shared_weight.cols() != subject_weight.cols()) {
      throw Error("invalid_subject", "shared and subject weights differ in shape");
    }
    if (shared_baseline.size() != shared_weight.rows() || subject_baseline.size() != shared_weight.rows()) {
      throw Error("invalid_subject", "baselines must have one entry per voxel");
    }
    if (!(mixing >= 0.0 && mixing <= 1.0)) throw Error("invalid_subject", "mixing must lie in [0, 1]");
    if (!(noise_sigma >= 0.0)) throw Error("invalid_subject", "noise_sigma must be >= 0");
    if (!shared_weight.allFinite() || !subject_weight.allFinite() || !shared_baseline.allFinite() ||
        !subject_baseline.allFinite()) {
      throw Error("invalid_subject", "subject parameters must be finite");
    }
  }
};

struct ActivationPattern {
  Eigen::VectorXd voxels;
  std::string subject_id;
  Eigen::VectorXd target_coords;
};

inline Eigen::VectorXd to_eigen(std::span<const double> v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline Vector to_vector(const Eigen::VectorXd& v) { return Vector(v.data(), v.data() + v.size()); }

inline ActivationPattern synth_pattern(const SyntheticSubject& subject, std::span<const double> coords,
                                       std::uint64_t draw_seed) {
  if (coords.size() != subject.dim()) {
    throw Error("dimension_mismatch", "coordinates have length " + std::to_string(coords.size()) +
                                          ", subject expects " + std::to_string(subject.dim()));
  }
  const Eigen::VectorXd c = to_eigen(coords);
  const double a = subject.mixing;
  Eigen::VectorXd response = a * (subject.shared_baseline + subject.shared_weight * c) +
                             (1.0 - a) * (subject.subject_baseline + subject.subject_weight * c);
  if (subject.nonlinear) response = response.array().tanh();
  if (subject.noise_sigma > 0.0) {
    std::mt19937_64 rng(derive_seed(subject.seed, draw_seed));
    std::normal_distribution<double> noise(0.0, subject.noise_sigma);
    for (Eigen::Index i = 0; i < response.size(); ++i) response(i) += noise(rng);
  }
  return {std::move(response), subject.id, c};
}

// Edge-clamped moving average over the voxel axis, then z-scoring with the
// population standard deviation. A constant pattern maps to all zeros.
inline Eigen::VectorXd preprocess(const Eigen::VectorXd& voxels, std::size_t window) {
  if (window < 1 || window % 2 == 0) throw Error("invalid_argument", "smoothing window must be odd and positive");
  const Eigen::Index n = voxels.size();
  const auto half = static_cast<Eigen::Index>(window / 2);
  Eigen::VectorXd smoothed(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double sum = 0.0;
    for (Eigen::Index j = i - half; j <= i + half; ++j) sum += voxels(std::clamp<Eigen::Index>(j, 0, n - 1));
    smoothed(i) = sum / static_cast<double>(window);
  }
  if (n == 0) return smoothed;
  const double mean = smoothed.mean();
  Eigen::VectorXd centered = smoothed.array() - mean;
  const double sd = std::sqrt(centered.squaredNorm() / static_cast<double>(n));
  if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) return Eigen::VectorXd::Zero(n);
  return centered / sd;
}

struct DecoderSample {
  Eigen::VectorXd features;
  Eigen::VectorXd target;
};

// inputs -> tanh hidden layer -> linear outputs (map coordinates).
class Decoder {
public:
  struct Gradient {
    Eigen::MatrixXd hidden_weights;
    Eigen::VectorXd hidden_bias;
    Eigen::MatrixXd output_weights;
    Eigen::VectorXd output_bias;
  };

  Decoder() = default;

  // All parameters zero.
  Decoder(std::size_t inputs, std::size_t hidden, std::size_t outputs)
      : hidden_weights_(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(hidden), static_cast<Eigen::Index>(inputs))),
        hidden_bias_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(hidden))),
        output_weights_(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(outputs), static_cast<Eigen::Index>(hidden))),
        output_bias_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(outputs))) {
    if (inputs == 0 || hidden == 0 || outputs == 0) throw Error("invalid_argument", "decoder layers must be non-empty");
  }

  // Glorot-uniform weights, zero biases.
  static Decoder random(std::size_t inputs, std::size_t hidden, std::size_t outputs, std::uint64_t seed) {
    Decoder d(inputs, hidden, outputs);
    std::mt19937_64 rng(seed);
    auto fill = [&](Eigen::MatrixXd& m) {
      const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
      std::uniform_real_distribution<double> u(-limit, limit);
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    };
    fill(d.hidden_weights_);
    fill(d.output_weights_);
    return d;
  }

  std::size_t inputs() const { return static_cast<std::size_t>(hidden_weights_.cols()); }
  std::size_t hidden() const { return static_cast<std::size_t>(hidden_weights_.rows()); }
  std::size_t outputs() const { return static_cast<std::size_t>(output_weights_.rows()); }

  Eigen::MatrixXd& hidden_weights() { return hidden_weights_; }
  Eigen::VectorXd& hidden_bias() { return hidden_bias_; }
  Eigen::MatrixXd& output_weights() { return output_weights_; }
  Eigen::VectorXd& output_bias() { return output_bias_; }
  const Eigen::MatrixXd& hidden_weights() const { return hidden_weights_; }
  const Eigen::VectorXd& hidden_bias() const { return hidden_bias_; }
  const Eigen::MatrixXd& output_weights() const { return output_weights_; }
  const Eigen::VectorXd& output_bias() const { return output_bias_; }

  std::size_t epochs_trained = 0;
  double current_error = 0.0;
  std::vector<double> error_log;  // training loss after each epoch

  Eigen::VectorXd forward(const Eigen::VectorXd& features) const {
    check_width(features);
    const Eigen::VectorXd h = (hidden_weights_ * features + hidden_bias_).array().tanh();
    return output_weights_ * h + output_bias_;
  }

  // Mean over samples of the per-output mean squared error.
  double loss(std::span<const DecoderSample> samples) const {
    double total = 0.0;
    for (const auto& s : samples) total += (forward(s.features) - s.target).squaredNorm();
    return total / static_cast<double>(samples.size() * outputs());
  }

  double loss_and_gradient(std::span<const DecoderSample> samples, Gradient& grad) const {
    grad.hidden_weights = Eigen::MatrixXd::Zero(hidden_weights_.rows(), hidden_weights_.cols());
    grad.hidden_bias = Eigen::VectorXd::Zero(hidden_bias_.size());
    grad.output_weights = Eigen::MatrixXd::Zero(output_weights_.rows(), output_weights_.cols());
    grad.output_bias = Eigen::VectorXd::Zero(output_bias_.size());
    const double scale = 1.0 / static_cast<double>(samples.size() * outputs());
    double total = 0.0;
    for (const auto& s : samples) {
      check_width(s.features);
      if (static_cast<std::size_t>(s.target.size()) != outputs()) {
        throw Error("dimension_mismatch", "target width does not match decoder outputs");
      }
      const Eigen::VectorXd h = (hidden_weights_ * s.features + hidden_bias_).array().tanh();
      const Eigen::VectorXd err = output_weights_ * h + output_bias_ - s.target;
      total += err.squaredNorm();
      const Eigen::VectorXd d_out = 2.0 * scale * err;
      grad.output_weights.noalias() += d_out * h.transpose();
      grad.output_bias += d_out;
      const Eigen::VectorXd d_hidden =
          (output_weights_.transpose() * d_out).array() * (1.0 - h.array().square());
      grad.hidden_weights.noalias() += d_hidden * s.features.transpose();
      grad.hidden_bias += d_hidden;
    }
    return total * scale;
  }

  void apply(const Gradient& grad, double learning_rate) {
    hidden_weights_ -= learning_rate * grad.hidden_weights;
    hidden_bias_ -= learning_rate * grad.hidden_bias;
    output_weights_ -= learning_rate * grad.output_weights;
    output_bias_ -= learning_rate * grad.output_bias;
  }

  // Flat view of all parameters: hidden weights, hidden bias, output weights, output bias.
  std::vector<double> parameters() const {
    std::vector<double> out;
    auto append = [&](const auto& m) { out.insert(out.end(), m.data(), m.data() + m.size()); };
    append(hidden_weights_);
    append(hidden_bias_);
    append(output_weights_);
    append(output_bias_);
    return out;
  }

  void set_parameters(std::span<const double> p) {
    std::size_t offset = 0;
    auto take = [&](auto& m) {
      if (offset + static_cast<std::size_t>(m.size()) > p.size()) throw Error("invalid_argument", "too few parameters");
      std::copy_n(p.data() + offset, m.size(), m.data());
      offset += static_cast<std::size_t>(m.size());
    };
    take(hidden_weights_);
    take(hidden_bias_);
    take(output_weights_);
    take(output_bias_);
    if (offset != p.size()) throw Error("invalid_argument", "too many parameters");
  }

  static std::vector<double> flatten(const Gradient& g) {
    std::vector<double> out;
    auto append = [&](const auto& m) { out.insert(out.end(), m.data(), m.data() + m.size()); };
    append(g.hidden_weights);
    append(g.hidden_bias);
    append(g.output_weights);
    append(g.output_bias);
    return out;
  }

  friend bool operator==(const Decoder& a, const Decoder& b) {
    return a.hidden_weights_ == b.hidden_weights_ && a.hidden_bias_ == b.hidden_bias_ &&
           a.output_weights_ == b.output_weights_ && a.output_bias_ == b.output_bias_ &&
           a.epochs_trained == b.epochs_trained && a.error_log == b.error_log;
  }

private:
  void check_width(const Eigen::VectorXd& features) const {
    if (static_cast<std::size_t>(features.size()) != inputs()) {
      throw Error("dimension_mismatch", "feature width " + std::to_string(features.size()) +
                                            " does not match decoder input width " + std::to_string(inputs()));
    }
  }

  Eigen::MatrixXd hidden_weights_;
  Eigen::VectorXd hidden_bias_;
  Eigen::MatrixXd output_weights_;
  Eigen::VectorXd output_bias_;
};

inline Eigen::VectorXd decode(const Decoder& decoder, const Eigen::VectorXd& features) {
  return decoder.forward(features);
}

struct DecoderSchedule {
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  double learning_rate = 0.01;
  std::uint64_t seed = 1;
};

// Called after every epoch with the epoch number (1-based); return false to stop.
using EpochObserver = std::function<bool(const Decoder&, std::size_t)>;

// Mini-batch gradient descent on the mean squared error with a fresh seeded
// shuffle every epoch. The logged error is the full training loss after the epoch.
inline Decoder train_decoder(Decoder decoder, std::span<const DecoderSample> samples, const DecoderSchedule& schedule,
                             const EpochObserver& observer = {}) {
  if (samples.empty()) throw Error("empty_data", "cannot train a decoder on zero samples");
  for (const auto& s : samples) {
    if (static_cast<std::size_t>(s.features.size()) != decoder.inputs() ||
        static_cast<std::size_t>(s.target.size()) != decoder.outputs()) {
      throw Error("dimension_mismatch", "sample widths do not match the decoder");
    }
  }
  if (schedule.batch_size == 0) throw Error("invalid_argument", "batch_size must be positive");
  if (!(schedule.learning_rate >= 0.0)) throw Error("invalid_argument", "learning_rate must be >= 0");

  std::mt19937_64 rng(schedule.seed);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<DecoderSample> batch;
  Decoder::Gradient grad;

  for (std::size_t epoch = 1; epoch <= schedule.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += schedule.batch_size) {
      const std::size_t end = std::min(order.size(), start + schedule.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(samples[order[i]]);
      decoder.loss_and_gradient(batch, grad);
      decoder.apply(grad, schedule.learning_rate);
    }
    ++decoder.epochs_trained;
    decoder.current_error = decoder.loss(samples);
    decoder.error_log.push_back(decoder.current_error);
    if (observer && !observer(decoder, epoch)) break;
  }
  return decoder;
}

// Axis-aligned bounding box of the stored map coordinates.
struct CoordinateBox {
  Vector lower;
  Vector upper;

  // Largest per-axis extent.
  double range() const {
    double r = 0.0;
    for (std::size_t i = 0; i < lower.size(); ++i) r = std::max(r, upper[i] - lower[i]);
    return r;
  }

  Vector center() const {
    Vector c(lower.size());
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = 0.5 * (lower[i] + upper[i]);
    return c;
  }

  Vector sample(std::mt19937_64& rng) const {
    Vector p(lower.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::uniform_real_distribution<double>(lower[i], upper[i])(rng);
    return p;
  }

  static CoordinateBox cube(std::size_t dim, double extent) { return {Vector(dim, 0.0), Vector(dim, extent)}; }
};

inline CoordinateBox bounding_box(const KnowledgeMap& map) {
  if (map.size() == 0) throw Error("empty_map", "map has no entries");
  CoordinateBox box{map.entries().front().coords, map.entries().front().coords};
  for (const auto& e : map.entries()) {
    for (std::size_t i = 0; i < map.dim(); ++i) {
      box.lower[i] = std::min(box.lower[i], e.coords[i]);
      box.upper[i] = std::max(box.upper[i], e.coords[i]);
    }
  }
  return box;
}

// Held-out root-mean-square decoding error over freshly drawn points.
inline double heldout_rmse(const Decoder& decoder, const SyntheticSubject& subject, const CoordinateBox& box,
                           std::size_t count, std::size_t window, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double total = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const auto point = box.sample(rng);
    const auto pattern = synth_pattern(subject, point, derive_seed(seed, i));
    total += (decode(decoder, preprocess(pattern.voxels, window)) - pattern.target_coords).squaredNorm();
  }
  return std::sqrt(total / static_cast<double>(count * subject.dim()));
}

struct ProtocolConfig {
  std::uint64_t seed = 1;
  std::size_t neighbors_shown = 5;
  std::size_t window = 3;
  std::size_t hidden = 64;
  double learning_rate = 0.01;
};

struct ProtocolStep {
  std::size_t iteration = 0;
  Vector point;
  std::vector<std::string> shown_docs;
  std::uint64_t draw_seed = 0;
  double loss = 0.0;

  friend bool operator==(const ProtocolStep&, const ProtocolStep&) = default;
};

struct ProtocolLog {
  ProtocolConfig config;
  std::string subject_id;
  std::size_t iterations = 0;
  bool pretrained_start = false;
  std::vector<ProtocolStep> steps;

  friend bool operator==(const ProtocolLog& a, const ProtocolLog& b) {
    return a.config.seed == b.config.seed && a.config.neighbors_shown == b.config.neighbors_shown &&
           a.config.window == b.config.window && a.config.hidden == b.config.hidden &&
           a.config.learning_rate == b.config.learning_rate && a.subject_id == b.subject_id &&
           a.iterations == b.iterations && a.pretrained_start == b.pretrained_start && a.steps == b.steps;
  }
};

struct ProtocolResult {
  Decoder decoder;
  ProtocolLog log;
};

// Untrained decoder for a map: random weights, output bias at the box centre.
inline Decoder initial_decoder(std::size_t inputs, std::size_t hidden, const CoordinateBox& box, std::uint64_t seed) {
  Decoder d = Decoder::random(inputs, hidden, box.lower.size(), seed);
  d.output_bias() = to_eigen(box.center());
  return d;
}

// One training session: per iteration, pick a random point in the map's
// bounding box, record the documents shown around it, synthesise the
// subject's response, preprocess it and take one gradient step toward the point.
inline ProtocolResult run_protocol(const KnowledgeMap& map, const SyntheticSubject& subject, std::size_t iterations,
                                   const ProtocolConfig& config, std::optional<Decoder> start = std::nullopt) {
  if (map.size() == 0) throw Error("empty_map", "protocol needs a non-empty map");
  subject.validate();
  if (subject.dim() != map.dim()) throw Error("dimension_mismatch", "subject and map dimensionality differ");

  const CoordinateBox box = bounding_box(map);
  ProtocolResult result;
  result.log.config = config;
  result.log.subject_id = subject.id;
  result.log.iterations = iterations;
  result.log.pretrained_start = start.has_value();
  result.decoder = start ? std::move(*start)
                         : initial_decoder(subject.voxels(), config.hidden, box, derive_seed(config.seed, 1));
  if (result.decoder.inputs() != subject.voxels() || result.decoder.outputs() != map.dim()) {
    throw Error("dimension_mismatch", "decoder shape does not match subject and map");
  }

  std::mt19937_64 rng(derive_seed(config.seed, 2));
  Decoder::Gradient grad;
  for (std::size_t it = 0; it < iterations; ++it) {
    ProtocolStep step;
    step.iteration = it;
    step.point = box.sample(rng);
    for (auto& n : neighbors(map, step.point, config.neighbors_shown)) step.shown_docs.push_back(std::move(n.doc_id));
    step.draw_seed = derive_seed(config.seed, 1000 + it);
    const auto pattern = synth_pattern(subject, step.point, step.draw_seed);
    const DecoderSample sample{preprocess(pattern.voxels, config.window), pattern.target_coords};
    step.loss = result.decoder.loss_and_gradient(std::span(&sample, 1), grad);
    result.decoder.apply(grad, config.learning_rate);
    result.log.steps.push_back(std::move(step));
  }
  return result;
}

// Re-runs a session from its log; the start decoder is needed only when the
// original session began from a pretrained decoder.
inline ProtocolResult replay_protocol(const KnowledgeMap& map, const SyntheticSubject& subject, const ProtocolLog& log,
                                      std::optional<Decoder> start = std::nullopt) {
  if (log.pretrained_start && !start) throw Error("invalid_argument", "log started from a pretrained decoder");
  return run_protocol(map, subject, log.iterations, log.config, log.pretrained_start ? std::move(start) : std::nullopt);
}

inline nlohmann::json to_json(const ProtocolLog& log) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : log.steps) {
    steps.push_back({{"iteration", s.iteration},
                     {"point", s.point},
                     {"shown_docs", s.shown_docs},
                     {"draw_seed", s.draw_seed},
                     {"loss", s.loss}});
  }
  return {{"seed", log.config.seed},
          {"neighbors_shown", log.config.neighbors_shown},
          {"window", log.config.window},
          {"hidden", log.config.hidden},
          {"learning_rate", log.config.learning_rate},
          {"subject_id", log.subject_id},
          {"iterations", log.iterations},
          {"pretrained_start", log.pretrained_start},
          {"steps", std::move(steps)}};
}

inline ProtocolLog protocol_log_from_json(const nlohmann::json& j) {
  ProtocolLog log;
  log.config.seed = j.at("seed").get<std::uint64_t>();
  log.config.neighbors_shown = j.at("neighbors_shown").get<std::size_t>();
  log.config.window = j.at("window").get<std::size_t>();
  log.config.hidden = j.at("hidden").get<std::size_t>();
  log.config.learning_rate = j.at("learning_rate").get<double>();
  log.subject_id = j.at("subject_id").get<std::string>();
  log.iterations = j.at("iterations").get<std::size_t>();
  log.pretrained_start = j.at("pretrained_start").get<bool>();
  for (const auto& s : j.at("steps")) {
    log.steps.push_back({s.at("iteration").get<std::size_t>(), s.at("point").get<Vector>(),
                         s.at("shown_docs").get<std::vector<std::string>>(), s.at("draw_seed").get<std::uint64_t>(),
                         s.at("loss").get<double>()});
  }
  return log;
}

// Smooth random field over the voxel axis: white noise, moving average,
// rescaled to unit standard deviation.
inline Eigen::VectorXd smooth_field(std::size_t length, std::size_t width, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd noise(static_cast<Eigen::Index>(length));
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise(i) = normal(rng);
  Eigen::VectorXd field = preprocess(noise, width % 2 == 0 ? width + 1 : std::max<std::size_t>(width, 1));
  return field;
}

struct CohortConfig {
  std::size_t subjects = 10;
  std::size_t voxels = 100;
  std::size_t dim = 3;
  double mixing = 0.7;
  double noise_sigma = 0.0;
  // Coordinates spanning this range move a voxel by about response_scale.
  double coordinate_range = 5.0;
  double response_scale = 1.0;
  double baseline_scale = 1.0;  // 0 gives a purely linear response
  std::size_t smoothness = 9;   // width of the smoothing applied to weight fields
  bool nonlinear = false;
  std::uint64_t seed = 1;
};

inline Eigen::MatrixXd smooth_weights(const CohortConfig& c, std::mt19937_64& rng) {
  Eigen::MatrixXd w(static_cast<Eigen::Index>(c.voxels), static_cast<Eigen::Index>(c.dim));
  for (Eigen::Index j = 0; j < w.cols(); ++j) {
    w.col(j) = smooth_field(c.voxels, c.smoothness, rng) * (c.response_scale / c.coordinate_range);
  }
  return w;
}

// Subjects sharing one shared weight field and baseline; subject parts are
// drawn independently per subject.
inline std::vector<SyntheticSubject> make_cohort(const CohortConfig& c) {
  if (c.subjects == 0 || c.voxels == 0 || c.dim == 0) throw Error("invalid_argument", "cohort sizes must be positive");
  if (!(c.coordinate_range > 0.0)) throw Error("invalid_argument", "coordinate_range must be positive");
  std::mt19937_64 shared_rng(derive_seed(c.seed, 0));
  const Eigen::MatrixXd shared = smooth_weights(c, shared_rng);
  const Eigen::VectorXd shared_base = smooth_field(c.voxels, c.smoothness, shared_rng) * c.baseline_scale;
  std::vector<SyntheticSubject> cohort;
  for (std::size_t s = 0; s < c.subjects; ++s) {
    std::mt19937_64 rng(derive_seed(c.seed, 1 + s));
    SyntheticSubject subject;
    subject.id = "subject" + std::to_string(s);
    subject.shared_weight = shared;
    subject.subject_weight = smooth_weights(c, rng);
    subject.shared_baseline = shared_base;
    subject.subject_baseline = smooth_field(c.voxels, c.smoothness, rng) * c.baseline_scale;
    subject.mixing = c.mixing;
    subject.noise_sigma = c.noise_sigma;
    subject.seed = derive_seed(c.seed, 10'000 + s);
    subject.nonlinear = c.nonlinear;
    subject.validate();
    cohort.push_back(std::move(subject));
  }
  return cohort;
}

inline std::vector<DecoderSample> simulate_samples(const SyntheticSubject& subject, const CoordinateBox& box,
                                                   std::size_t count, std::size_t window, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<DecoderSample> samples;
  samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto point = box.sample(rng);
    const auto pattern = synth_pattern(subject, point, derive_seed(seed, i));
    samples.push_back({preprocess(pattern.voxels, window), pattern.target_coords});
  }
  return samples;
}

struct PretrainConfig {
  std::size_t hidden = 64;
  std::size_t window = 3;
  DecoderSchedule schedule{60, 16, 0.01, 1};
  std::uint64_t seed = 1;
};

// One decoder trained on samples pooled across the cohort.
inline Decoder pretrain_anthropogenic(std::span<const SyntheticSubject> subjects, std::size_t samples_per_subject,
                                      const CoordinateBox& box, const PretrainConfig& config) {
  if (subjects.size() < 2) throw Error("invalid_cohort", "pretraining needs at least 2 subjects");
  for (const auto& s : subjects) {
    s.validate();
    if (s.shared_weight.rows() != subjects[0].shared_weight.rows() ||
        s.shared_weight.cols() != subjects[0].shared_weight.cols() || s.shared_weight != subjects[0].shared_weight) {
      throw Error("invalid_cohort", "subject " + s.id + " does not share the cohort's shared_weight");
    }
  }
  if (subjects[0].dim() != box.lower.size()) throw Error("dimension_mismatch", "box and subjects differ in dimension");
  if (samples_per_subject == 0) throw Error("invalid_argument", "samples_per_subject must be positive");

  std::vector<DecoderSample> pooled;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    auto part = simulate_samples(subjects[i], box, samples_per_subject, config.window, derive_seed(config.seed, 1 + i));
    pooled.insert(pooled.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  Decoder start = initial_decoder(subjects[0].voxels(), config.hidden, box, derive_seed(config.seed, 0));
  return train_decoder(std::move(start), pooled, config.schedule);
}

struct PretrainExperimentConfig {
  CohortConfig cohort;             // cohort.subjects are pooled for pretraining
  std::size_t held_out = 10;       // extra subjects fine-tuned individually
  std::size_t samples_per_subject = 200;
  PretrainConfig pretrain;
  std::size_t finetune_samples = 100;
  std::size_t eval_samples = 200;
  DecoderSchedule finetune{100, 10, 0.01, 1};
  double threshold_fraction = 0.1;  // of the coordinate range
  std::uint64_t seed = 1;
};

struct ArmResult {
  std::vector<std::size_t> epochs_to_threshold;  // finetune.epochs + 1 when never reached
  std::vector<std::vector<double>> curves;       // held-out RMSE per epoch, epoch 0 first
  double median_epochs = 0.0;
};

struct PretrainExperimentResult {
  ArmResult pretrained;
  ArmResult scratch;
  double threshold = 0.0;
  std::vector<std::string> subject_ids;
};

inline double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

struct FinetuneOutcome {
  std::size_t epochs_to_threshold = 0;
  std::vector<double> curve;
};

// Trains until the held-out RMSE reaches `threshold`; epoch 0 is the start decoder.
inline FinetuneOutcome finetune_until(Decoder start, std::span<const DecoderSample> train,
                                      std::span<const DecoderSample> eval, const DecoderSchedule& schedule,
                                      double threshold) {
  auto rmse = [&](const Decoder& d) {
    return std::sqrt(d.loss(eval));
  };
  FinetuneOutcome out;
  out.curve.push_back(rmse(start));
  out.epochs_to_threshold = schedule.epochs + 1;
  if (out.curve.back() <= threshold) {
    out.epochs_to_threshold = 0;
    return out;
  }
  train_decoder(std::move(start), train, schedule, [&](const Decoder& d, std::size_t epoch) {
    out.curve.push_back(rmse(d));
    if (out.curve.back() <= threshold) {
      out.epochs_to_threshold = epoch;
      return false;
    }
    return true;
  });
  return out;
}

// Compares fine-tuning from a cohort-pretrained decoder with training from a
// random initialisation on each held-out subject. Subjects run in parallel.
inline PretrainExperimentResult run_pretrain_experiment(const PretrainExperimentConfig& config) {
  if (config.held_out == 0) throw Error("invalid_argument", "held_out must be positive");
  CohortConfig all = config.cohort;
  all.subjects = config.cohort.subjects + config.held_out;
  all.seed = derive_seed(config.seed, 1);
  const auto subjects = make_cohort(all);
  const std::span<const SyntheticSubject> pool(subjects.data(), config.cohort.subjects);
  const std::span<const SyntheticSubject> held(subjects.data() + config.cohort.subjects, config.held_out);
  const CoordinateBox box = CoordinateBox::cube(config.cohort.dim, config.cohort.coordinate_range);

  PretrainConfig pc = config.pretrain;
  pc.seed = derive_seed(config.seed, 2);
  pc.schedule.seed = derive_seed(config.seed, 3);
  const Decoder pretrained = pretrain_anthropogenic(pool, config.samples_per_subject, box, pc);

  PretrainExperimentResult result;
  result.threshold = config.threshold_fraction * box.range();

  std::vector<std::future<std::pair<FinetuneOutcome, FinetuneOutcome>>> jobs;
  for (std::size_t i = 0; i < held.size(); ++i) {
    jobs.push_back(std::async(std::launch::async, [&, i] {
      const auto& subject = held[i];
      const std::uint64_t s = derive_seed(config.seed, 100 + i);
      const auto train = simulate_samples(subject, box, config.finetune_samples, pc.window, derive_seed(s, 1));
      const auto eval = simulate_samples(subject, box, config.eval_samples, pc.window, derive_seed(s, 2));
      DecoderSchedule schedule = config.finetune;
      schedule.seed = derive_seed(s, 3);
      Decoder warm = pretrained;
      warm.epochs_trained = 0;
      warm.error_log.clear();
      auto a = finetune_until(std::move(warm), train, eval, schedule, result.threshold);
      auto b = finetune_until(initial_decoder(subject.voxels(), pc.hidden, box, derive_seed(s, 4)), train, eval,
                              schedule, result.threshold);
      return std::pair{std::move(a), std::move(b)};
    }));
  }
  std::vector<double> ea, eb;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    auto [a, b] = jobs[i].get();
    result.subject_ids.push_back(held[i].id);
    result.pretrained.epochs_to_threshold.push_back(a.epochs_to_threshold);
    result.pretrained.curves.push_back(std::move(a.curve));
    result.scratch.epochs_to_threshold.push_back(b.epochs_to_threshold);
    result.scratch.curves.push_back(std::move(b.curve));
    ea.push_back(static_cast<double>(result.pretrained.epochs_to_threshold.back()));
    eb.push_back(static_cast<double>(result.scratch.epochs_to_threshold.back()));
  }
  result.pretrained.median_epochs = median(ea);
  result.scratch.median_epochs = median(eb);
  return result;
}

}  // namespace gkm
