#pragma once

/**
 * Faithfulness probes: a 3-layer MLP over hidden states with a logistic
 * head, trained with adaptive moments and decoupled weight decay.
 *
 * Layer widths shrink log-linearly from the model hidden size down to 64,
 * then to a single output. Binary labels train with cross-entropy, scalar
 * labels with squared error; both share the [0,1] logistic head.
 */

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hallucana/common.hpp"
#include "hallucana/io.hpp"
#include "hallucana/lm.hpp"

namespace hallucana::probe {

// ============================================================================
// Architecture
// ============================================================================

struct ProbeArch {
  std::size_t input_dim = 0;  // H
  std::size_t mid_dim = 0;    // round(sqrt(H*64))
  std::size_t last_dim = 64;

  static ProbeArch for_input(std::size_t h) {
    if (h < 64) throw ConfigError("probe: input dim must be >= 64");
    ProbeArch a;
    a.input_dim = h;
    a.mid_dim = static_cast<std::size_t>(
        std::llround(std::sqrt(static_cast<double>(h) * 64.0)));
    if (a.mid_dim < 64) a.mid_dim = 64;
    return a;
  }

  bool operator==(const ProbeArch&) const = default;
};

enum class LossKind { cross_entropy, squared_error };

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 128;
  std::size_t budget_examples = 300000;
  std::size_t checkpoint_every = 25000;
  std::size_t patience = 2;  // consecutive non-improving saves before stopping
  LossKind loss = LossKind::cross_entropy;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;

  void validate() const {
    if (learning_rate <= 0 || batch_size == 0 || budget_examples == 0 ||
        checkpoint_every == 0 || patience == 0)
      throw ConfigError("train config: all quantities must be positive");
  }
};

struct Checkpoint {
  std::size_t examples_seen = 0;
  double train_loss = 0;  // mean over steps since the previous save
  double dev_loss = 0;
};

struct TrainingLog {
  TrainConfig config;
  std::vector<Checkpoint> checkpoints;
  std::size_t best_checkpoint = 0;  // 0-based index into checkpoints
};

// ============================================================================
// Probe
// ============================================================================

struct Probe {
  ProbeArch arch;
  // Row-major weight matrices and biases for the three affine layers.
  std::vector<double> w1, b1;  // [mid x H], [mid]
  std::vector<double> w2, b2;  // [64 x mid], [64]
  std::vector<double> w3, b3;  // [1 x 64],  [1]
  TrainingLog log;

  bool same_weights(const Probe& o) const {
    return arch == o.arch && w1 == o.w1 && b1 == o.b1 && w2 == o.w2 &&
           b2 == o.b2 && w3 == o.w3 && b3 == o.b3;
  }
};

/// Fresh probe with scaled-uniform fan-in weights, zero biases.
inline Probe init(std::size_t h, std::uint64_t seed) {
  const ProbeArch arch = ProbeArch::for_input(h);
  Probe p;
  p.arch = arch;
  Rng rng(hash_key(seed, 0x50524245ULL));
  auto fill = [&rng](std::vector<double>& w, std::size_t rows, std::size_t cols) {
    w.resize(rows * cols);
    const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
    for (double& x : w) x = rng.next_range(-bound, bound);
  };
  fill(p.w1, arch.mid_dim, arch.input_dim);
  p.b1.assign(arch.mid_dim, 0.0);
  fill(p.w2, arch.last_dim, arch.mid_dim);
  p.b2.assign(arch.last_dim, 0.0);
  fill(p.w3, 1, arch.last_dim);
  p.b3.assign(1, 0.0);
  return p;
}

namespace detail {

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline void affine(const std::vector<double>& w, const std::vector<double>& b,
                   std::span<const double> x, std::vector<double>& out) {
  const std::size_t rows = b.size();
  const std::size_t cols = x.size();
  out.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = b[r];
    const double* wr = w.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) acc += wr[c] * x[c];
    out[r] = acc;
  }
}

struct ForwardScratch {
  std::vector<double> z1, a1, z2, a2;
  double z3 = 0;
  double out = 0;
};

inline void forward_into(const Probe& p, std::span<const double> x,
                         ForwardScratch& s) {
  affine(p.w1, p.b1, x, s.z1);
  s.a1 = s.z1;
  for (double& v : s.a1) v = v > 0 ? v : 0.0;
  affine(p.w2, p.b2, s.a1, s.z2);
  s.a2 = s.z2;
  for (double& v : s.a2) v = v > 0 ? v : 0.0;
  double acc = p.b3[0];
  for (std::size_t c = 0; c < p.arch.last_dim; ++c) acc += p.w3[c] * s.a2[c];
  s.z3 = acc;
  s.out = sigmoid(acc);
}

}  // namespace detail

/// Score a hidden vector; pure, output in (0,1).
inline double forward(const Probe& p, std::span<const double> x) {
  if (x.size() != p.arch.input_dim)
    throw ShapeError("probe forward: input dim " + std::to_string(x.size()) +
                     " != " + std::to_string(p.arch.input_dim));
  detail::ForwardScratch s;
  detail::forward_into(p, x, s);
  return s.out;
}

inline double forward(const Probe& p, const lm::HiddenState& h) {
  return forward(p, std::span<const double>(h.values));
}

inline std::vector<double> forward_batch(const Probe& p,
                                         std::span<const lm::HiddenState> batch) {
  std::vector<double> out;
  out.reserve(batch.size());
  for (const auto& h : batch) out.push_back(forward(p, h));
  return out;
}

// ============================================================================
// Gradients
// ============================================================================

struct Example {
  std::vector<double> hidden;
  double label = 0;  // {0,1} for cross-entropy, [0,1] scalar for squared error
};

struct Gradients {
  std::vector<double> w1, b1, w2, b2, w3, b3;

  static Gradients zeros_like(const Probe& p) {
    Gradients g;
    g.w1.assign(p.w1.size(), 0.0);
    g.b1.assign(p.b1.size(), 0.0);
    g.w2.assign(p.w2.size(), 0.0);
    g.b2.assign(p.b2.size(), 0.0);
    g.w3.assign(p.w3.size(), 0.0);
    g.b3.assign(p.b3.size(), 0.0);
    return g;
  }
};

inline double example_loss(double out, double label, LossKind loss) {
  if (loss == LossKind::cross_entropy) {
    const double p = std::min(std::max(out, 1e-12), 1.0 - 1e-12);
    return -(label * std::log(p) + (1.0 - label) * std::log(1.0 - p));
  }
  const double d = out - label;
  return d * d;
}

/// Mean loss over a batch and analytic gradients of it w.r.t. all weights.
inline std::pair<double, Gradients> grad(const Probe& p,
                                         std::span<const Example> batch,
                                         LossKind loss) {
  if (batch.empty()) throw ConfigError("grad: empty batch");
  Gradients g = Gradients::zeros_like(p);
  detail::ForwardScratch s;
  std::vector<double> d2(p.arch.last_dim), d1(p.arch.mid_dim);
  double total = 0.0;
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (const Example& ex : batch) {
    if (ex.hidden.size() != p.arch.input_dim)
      throw ShapeError("grad: example dim mismatch");
    detail::forward_into(p, ex.hidden, s);
    total += example_loss(s.out, ex.label, loss);
    // dL/dz3: (p - y) for cross-entropy; 2(p - y) p (1 - p) for squared error
    double dz3;
    if (loss == LossKind::cross_entropy) {
      dz3 = s.out - ex.label;
    } else {
      dz3 = 2.0 * (s.out - ex.label) * s.out * (1.0 - s.out);
    }
    dz3 *= inv_n;
    for (std::size_t c = 0; c < p.arch.last_dim; ++c) {
      g.w3[c] += dz3 * s.a2[c];
      d2[c] = s.z2[c] > 0 ? dz3 * p.w3[c] : 0.0;
    }
    g.b3[0] += dz3;
    for (std::size_t r = 0; r < p.arch.last_dim; ++r) {
      if (d2[r] == 0.0) continue;
      double* gw = g.w2.data() + r * p.arch.mid_dim;
      for (std::size_t c = 0; c < p.arch.mid_dim; ++c) gw[c] += d2[r] * s.a1[c];
      g.b2[r] += d2[r];
    }
    std::fill(d1.begin(), d1.end(), 0.0);
    for (std::size_t r = 0; r < p.arch.last_dim; ++r) {
      if (d2[r] == 0.0) continue;
      const double* wr = p.w2.data() + r * p.arch.mid_dim;
      for (std::size_t c = 0; c < p.arch.mid_dim; ++c) d1[c] += d2[r] * wr[c];
    }
    for (std::size_t r = 0; r < p.arch.mid_dim; ++r) {
      if (s.z1[r] <= 0 || d1[r] == 0.0) continue;
      double* gw = g.w1.data() + r * p.arch.input_dim;
      for (std::size_t c = 0; c < p.arch.input_dim; ++c)
        gw[c] += d1[r] * ex.hidden[c];
      g.b1[r] += d1[r];
    }
  }
  return {total * inv_n, g};
}

// ============================================================================
// Training
// ============================================================================

/// Checkpoint-selection rule: stop once the dev loss has failed to improve
/// on `patience` consecutive saves, keep the best save seen.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

  /// Feed the next dev loss; true means stop now.
  bool observe(double dev_loss) {
    if (count_ == 0 || dev_loss < best_loss_) {
      best_loss_ = dev_loss;
      best_index_ = count_;
      streak_ = 0;
    } else {
      ++streak_;
    }
    ++count_;
    return streak_ >= patience_;
  }

  std::size_t best_index() const { return best_index_; }
  double best_loss() const { return best_loss_; }

 private:
  std::size_t patience_;
  std::size_t count_ = 0;
  std::size_t streak_ = 0;
  std::size_t best_index_ = 0;
  double best_loss_ = 0;
};

struct Dataset {
  std::vector<Example> train2;
  std::vector<Example> dev2;
};

inline double mean_loss(const Probe& p, std::span<const Example> examples,
                        LossKind loss) {
  if (examples.empty()) throw ConfigError("mean_loss: empty split");
  detail::ForwardScratch s;
  double total = 0.0;
  for (const Example& ex : examples) {
    detail::forward_into(p, ex.hidden, s);
    total += example_loss(s.out, ex.label, loss);
  }
  return total / static_cast<double>(examples.size());
}

namespace detail {

struct AdamW {
  double lr, beta1, beta2, eps, wd;
  std::size_t t = 0;
  Gradients m, v;

  AdamW(const Probe& p, const TrainConfig& c)
      : lr(c.learning_rate), beta1(c.beta1), beta2(c.beta2), eps(c.epsilon),
        wd(c.weight_decay), m(Gradients::zeros_like(p)),
        v(Gradients::zeros_like(p)) {}

  void update_block(std::vector<double>& w, const std::vector<double>& g,
                    std::vector<double>& mw, std::vector<double>& vw,
                    bool decay) {
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < w.size(); ++i) {
      mw[i] = beta1 * mw[i] + (1.0 - beta1) * g[i];
      vw[i] = beta2 * vw[i] + (1.0 - beta2) * g[i] * g[i];
      const double mhat = mw[i] / bc1;
      const double vhat = vw[i] / bc2;
      w[i] -= lr * (mhat / (std::sqrt(vhat) + eps));
      if (decay) w[i] -= lr * wd * w[i];
    }
  }

  void step(Probe& p, const Gradients& g) {
    ++t;
    update_block(p.w1, g.w1, m.w1, v.w1, true);
    update_block(p.b1, g.b1, m.b1, v.b1, false);
    update_block(p.w2, g.w2, m.w2, v.w2, true);
    update_block(p.b2, g.b2, m.b2, v.b2, false);
    update_block(p.w3, g.w3, m.w3, v.w3, true);
    update_block(p.b3, g.b3, m.b3, v.b3, false);
  }
};

}  // namespace detail

/**
 * Train a fresh probe on the pre-split dataset. Examples stream through
 * shuffled epochs until the example budget is reached or the dev2 loss
 * stops improving; the best-dev2 checkpoint is returned.
 */
inline Probe train(const Dataset& dataset, const TrainConfig& config) {
  config.validate();
  if (dataset.train2.empty() || dataset.dev2.empty())
    throw ConfigError("train: empty train2 or dev2 split");
  const std::size_t h = dataset.train2.front().hidden.size();

  Probe current = init(h, config.seed);
  current.log.config = config;
  detail::AdamW opt(current, config);
  EarlyStopper stopper(config.patience);

  const std::size_t steps_per_save =
      (config.checkpoint_every + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps =
      (config.budget_examples + config.batch_size - 1) / config.batch_size;

  std::vector<std::size_t> order(dataset.train2.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t epoch = 0, cursor = order.size();  // forces a shuffle at step 0

  Probe best = current;
  std::vector<Example> batch(config.batch_size);
  double loss_accum = 0.0;
  std::size_t steps_since_save = 0;

  for (std::size_t step = 1; step <= total_steps; ++step) {
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      if (cursor >= order.size()) {
        Rng rng(hash_key(config.seed, 0x45504f43ULL, epoch));
        rng.shuffle(order);
        ++epoch;
        cursor = 0;
      }
      batch[b] = dataset.train2[order[cursor++]];
    }
    auto [loss, g] = grad(current, batch, config.loss);
    opt.step(current, g);
    loss_accum += loss;
    ++steps_since_save;

    if (steps_since_save == steps_per_save || step == total_steps) {
      const double dev_loss = mean_loss(current, dataset.dev2, config.loss);
      current.log.checkpoints.push_back(
          {step * config.batch_size, loss_accum / steps_since_save, dev_loss});
      loss_accum = 0.0;
      steps_since_save = 0;
      const bool stop = stopper.observe(dev_loss);
      if (stopper.best_index() + 1 == current.log.checkpoints.size())
        best = current;
      if (stop) break;
    }
  }
  best.log = current.log;
  best.log.best_checkpoint = stopper.best_index();
  return best;
}

// ============================================================================
// Serialization: "HCPRB1", version u32, H u32, f64le weight blocks, CRC32
// ============================================================================

inline constexpr char kProbeMagic[6] = {'H', 'C', 'P', 'R', 'B', '1'};
inline constexpr std::uint32_t kProbeVersion = 1;

inline void save(const Probe& p, const std::filesystem::path& path) {
  std::string buf;
  buf.append(kProbeMagic, sizeof(kProbeMagic));
  io::put_u32le(buf, kProbeVersion);
  io::put_u32le(buf, static_cast<std::uint32_t>(p.arch.input_dim));
  for (const auto* block : {&p.w1, &p.b1, &p.w2, &p.b2, &p.w3, &p.b3})
    for (double v : *block) io::put_f64le(buf, v);
  io::put_u32le(buf, io::crc32(buf.data(), buf.size()));
  io::write_file(path, buf);
}

inline Probe load(const std::filesystem::path& path) {
  const std::string buf = io::read_file(path);
  if (buf.size() < sizeof(kProbeMagic) + 12)
    throw IoError("probe file truncated: " + path.string());
  if (std::memcmp(buf.data(), kProbeMagic, sizeof(kProbeMagic)) != 0)
    throw IoError("probe file has bad magic: " + path.string());
  const auto* bytes = reinterpret_cast<const unsigned char*>(buf.data());
  const std::uint32_t version = io::get_u32le(bytes + 6);
  if (version != kProbeVersion)
    throw IoError("probe file version " + std::to_string(version) +
                  " unsupported (expected " + std::to_string(kProbeVersion) + ")");
  const std::uint32_t h = io::get_u32le(bytes + 10);
  Probe p;
  p.arch = ProbeArch::for_input(h);
  const std::size_t n_weights = p.arch.mid_dim * p.arch.input_dim +
                                p.arch.mid_dim +
                                p.arch.last_dim * p.arch.mid_dim +
                                p.arch.last_dim + p.arch.last_dim + 1;
  const std::size_t expected = 14 + n_weights * 8 + 4;
  if (buf.size() != expected)
    throw IoError("probe file truncated or oversized: " + path.string());
  const std::uint32_t stored_crc = io::get_u32le(bytes + expected - 4);
  if (io::crc32(buf.data(), expected - 4) != stored_crc)
    throw IoError("probe file CRC mismatch: " + path.string());
  std::size_t off = 14;
  auto read_block = [&](std::vector<double>& block, std::size_t count) {
    block.resize(count);
    for (std::size_t i = 0; i < count; ++i, off += 8)
      block[i] = io::get_f64le(bytes + off);
  };
  read_block(p.w1, p.arch.mid_dim * p.arch.input_dim);
  read_block(p.b1, p.arch.mid_dim);
  read_block(p.w2, p.arch.last_dim * p.arch.mid_dim);
  read_block(p.b2, p.arch.last_dim);
  read_block(p.w3, p.arch.last_dim);
  read_block(p.b3, 1);
  return p;
}

}  // namespace hallucana::probe
