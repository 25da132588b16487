#pragma once

// Triplet sampling, the mixing-target vector, the constituency loss with its
// gradient, Adam, and the training loop. One training step samples a batch
// of triplets (x_i, x_j, x_k = a*x_i + (1-a)*x_j), pushes them through the
// network, and minimizes the mean constituency loss
//
//   L = sum_{r not in m} u[r]^2 + g * sum_{r in m} (u[r] - beta[r])^2
//
// where m is the set of classes mixed into x_k and beta holds their
// proportions (a single 1 for a matched pair, a and 1-a otherwise).

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mnd/dataset.hpp"
#include "mnd/network.hpp"
#include "mnd/numerics.hpp"
#include "mnd/textio.hpp"

namespace mnd {

// Length-K target; entries outside `support` are exactly 0 and the support
// entries sum to exactly 1.
struct BetaVector {
  Vec values;
  std::vector<int> support;  // 1-based class indices, size 1 or 2, ascending
};

inline BetaVector build_beta(int class_i, int class_j, double alpha, int num_classes) {
  if (class_i < 1 || class_i > num_classes || class_j < 1 || class_j > num_classes)
    throw std::invalid_argument("build_beta: class out of range 1.." +
                                std::to_string(num_classes));
  if (!(alpha > 0.0 && alpha < 1.0))
    throw std::invalid_argument("build_beta: alpha must be in (0, 1)");

  BetaVector beta;
  beta.values.assign(static_cast<std::size_t>(num_classes), 0.0);
  if (class_i == class_j) {
    beta.values[static_cast<std::size_t>(class_i) - 1] = 1.0;
    beta.support = {class_i};
  } else {
    beta.values[static_cast<std::size_t>(class_i) - 1] = alpha;
    beta.values[static_cast<std::size_t>(class_j) - 1] = 1.0 - alpha;
    beta.support = {std::min(class_i, class_j), std::max(class_i, class_j)};
  }
  return beta;
}

struct MixTriplet {
  Vec x_i, x_j, x_k;
  double alpha = 0.0;
  int class_i = 0;
  int class_j = 0;
  BetaVector beta;
};

// Uniform on the open interval (0,1); endpoint draws are rejected.
inline double sample_alpha(RngStream& rng) {
  for (;;) {
    double a = rng.uniform01();
    if (a > 0.0) return a;
  }
}

struct SampledPair {
  Vec x_i, x_j;
  int class_i = 0;
  int class_j = 0;
  std::size_t index_i = 0;
  std::size_t index_j = 0;
};

// With probability matched_pair_prob: two distinct samples of one class.
// Otherwise: one sample from each of two distinct classes. Draw order per
// call: the matched/non-matched coin, then class indices, then row indices.
inline SampledPair sample_pair(const LabeledDataset& ds, const ClassIndex& index,
                               double matched_pair_prob, RngStream& rng) {
  const int num_classes = ds.num_known_classes;
  SampledPair out;
  bool matched = rng.uniform01() < matched_pair_prob;
  if (matched) {
    int c = 1 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(num_classes)));
    const auto& rows = index.of(c);
    if (rows.size() < 2)
      throw std::invalid_argument("sample_pair: class " + std::to_string(c) +
                                  " needs two samples for a matched pair");
    std::size_t a = static_cast<std::size_t>(rng.next_below(rows.size()));
    std::size_t b = static_cast<std::size_t>(rng.next_below(rows.size() - 1));
    if (b >= a) ++b;
    out.class_i = out.class_j = c;
    out.index_i = rows[a];
    out.index_j = rows[b];
  } else {
    if (num_classes < 2)
      throw std::invalid_argument("sample_pair: non-matched pairs need at least two classes");
    int ci = 1 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(num_classes)));
    int cj = 1 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(num_classes - 1)));
    if (cj >= ci) ++cj;
    const auto& rows_i = index.of(ci);
    const auto& rows_j = index.of(cj);
    if (rows_i.empty() || rows_j.empty())
      throw std::invalid_argument("sample_pair: empty class encountered");
    out.class_i = ci;
    out.class_j = cj;
    out.index_i = rows_i[rng.next_below(rows_i.size())];
    out.index_j = rows_j[rng.next_below(rows_j.size())];
  }
  out.x_i = ds.row(out.index_i);
  out.x_j = ds.row(out.index_j);
  return out;
}

inline Vec mix(const Vec& x_i, const Vec& x_j, double alpha) {
  Vec x_k(x_i.size());
  for (std::size_t i = 0; i < x_i.size(); ++i) x_k[i] = alpha * x_i[i] + (1.0 - alpha) * x_j[i];
  return x_k;
}

inline MixTriplet sample_triplet(const LabeledDataset& ds, const ClassIndex& index,
                                 double matched_pair_prob, RngStream& rng) {
  MixTriplet t;
  t.alpha = sample_alpha(rng);
  SampledPair pair = sample_pair(ds, index, matched_pair_prob, rng);
  t.x_i = std::move(pair.x_i);
  t.x_j = std::move(pair.x_j);
  t.class_i = pair.class_i;
  t.class_j = pair.class_j;
  t.x_k = mix(t.x_i, t.x_j, t.alpha);
  t.beta = build_beta(t.class_i, t.class_j, t.alpha, ds.num_known_classes);
  return t;
}

struct ConstituencyLoss {
  double total = 0.0;
  double zero_set = 0.0;     // sum over non-mixing classes of u[r]^2
  double nonzero_set = 0.0;  // sum over mixing classes of (u[r]-beta[r])^2, unweighted
  Vec dl_du;
};

inline ConstituencyLoss constituency_loss(const Vec& u, const BetaVector& beta, double g) {
  if (u.size() != beta.values.size())
    throw std::invalid_argument("constituency_loss: u has length " + std::to_string(u.size()) +
                                ", beta has length " + std::to_string(beta.values.size()));
  if (!(g >= 1.0)) throw std::invalid_argument("constituency_loss: g must be >= 1");

  ConstituencyLoss out;
  out.dl_du.assign(u.size(), 0.0);
  auto in_support = [&beta](std::size_t r) {
    for (int s : beta.support)
      if (static_cast<std::size_t>(s) - 1 == r) return true;
    return false;
  };
  for (std::size_t r = 0; r < u.size(); ++r) {
    if (in_support(r)) {
      double err = u[r] - beta.values[r];
      out.nonzero_set += err * err;
      out.dl_du[r] = 2.0 * g * err;
    } else {
      out.zero_set += u[r] * u[r];
      out.dl_du[r] = 2.0 * u[r];
    }
  }
  out.total = out.zero_set + g * out.nonzero_set;
  return out;
}

struct TrainConfig {
  double g = 1000.0;
  double learning_rate = 0.001;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 64;
  int steps = 20000;
  double matched_pair_prob = 0.2;
  double dropout_p = 0.5;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(g >= 1.0)) throw std::invalid_argument("train config: g must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("train config: learning_rate must be > 0");
    if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0 && adam_beta2 > 0.0 && adam_beta2 < 1.0))
      throw std::invalid_argument("train config: adam betas must be in (0, 1)");
    if (!(adam_eps > 0.0)) throw std::invalid_argument("train config: adam_eps must be > 0");
    if (batch_size < 1 || steps < 1)
      throw std::invalid_argument("train config: batch_size and steps must be positive");
    if (!(matched_pair_prob >= 0.0 && matched_pair_prob <= 1.0))
      throw std::invalid_argument("train config: matched_pair_prob must be in [0, 1]");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0))
      throw std::invalid_argument("train config: dropout_p must be in [0, 1)");
  }
};

struct AdamState {
  Gradients m;
  Gradients v;
  long step_count = 0;

  static AdamState zeros_like(const NetworkParams& p) {
    return {Gradients::zeros_like(p), Gradients::zeros_like(p), 0};
  }
};

namespace detail {

inline void adam_update_span(double* param, double* m, double* v, const double* grad,
                             std::size_t n, const TrainConfig& cfg, double bias1, double bias2) {
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * grad[i];
    v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * grad[i] * grad[i];
    double m_hat = m[i] / bias1;
    double v_hat = v[i] / bias2;
    param[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
  }
}

}  // namespace detail

// Standard Adam with bias correction. Throws if any gradient is non-finite.
inline void adam_step(AdamState& state, NetworkParams& p, const Gradients& grads,
                      const TrainConfig& cfg) {
  if (grads.w1.rows != p.w1.rows || grads.w1.cols != p.w1.cols || grads.w2.rows != p.w2.rows ||
      grads.w2.cols != p.w2.cols || grads.w3.rows != p.w3.rows || grads.w3.cols != p.w3.cols ||
      grads.b1.size() != p.b1.size() || grads.b2.size() != p.b2.size() ||
      grads.b3.size() != p.b3.size())
    throw std::invalid_argument("adam_step: gradient shapes do not match parameters");
  if (!grads.all_finite())
    throw std::runtime_error("adam_step: non-finite gradient, training aborted");

  state.step_count += 1;
  double bias1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.step_count));
  double bias2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.step_count));

  detail::adam_update_span(p.w1.values.data(), state.m.w1.values.data(), state.v.w1.values.data(),
                           grads.w1.values.data(), p.w1.values.size(), cfg, bias1, bias2);
  detail::adam_update_span(p.b1.data(), state.m.b1.data(), state.v.b1.data(), grads.b1.data(),
                           p.b1.size(), cfg, bias1, bias2);
  detail::adam_update_span(p.w2.values.data(), state.m.w2.values.data(), state.v.w2.values.data(),
                           grads.w2.values.data(), p.w2.values.size(), cfg, bias1, bias2);
  detail::adam_update_span(p.b2.data(), state.m.b2.data(), state.v.b2.data(), grads.b2.data(),
                           p.b2.size(), cfg, bias1, bias2);
  detail::adam_update_span(p.w3.values.data(), state.m.w3.values.data(), state.v.w3.values.data(),
                           grads.w3.values.data(), p.w3.values.size(), cfg, bias1, bias2);
  detail::adam_update_span(p.b3.data(), state.m.b3.data(), state.v.b3.data(), grads.b3.data(),
                           p.b3.size(), cfg, bias1, bias2);
}

struct HistoryRecord {
  int step = 0;
  double total_loss = 0.0;
  double zero_set_loss = 0.0;
  double nonzero_set_loss = 0.0;
};

struct TrainResult {
  NetworkParams params;
  std::vector<HistoryRecord> history;
};

// The training loop. Per step: sample batch_size triplets, run the batched
// forward, average the loss and its gradient over the batch, backpropagate,
// Adam-update. Everything is driven by the single rng, so a fixed seed gives
// a bit-identical parameter trajectory.
inline TrainResult train(const LabeledDataset& ds, const TrainConfig& cfg, RngStream& rng,
                         int hidden1 = 512, int hidden2 = 256) {
  cfg.validate();
  validate_training_dataset(ds);
  ClassIndex index(ds);

  const std::size_t d = ds.dim();
  const int k = ds.num_known_classes;
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);

  TrainResult result;
  result.params = init_params(static_cast<int>(d), k, hidden1, hidden2, cfg.dropout_p, rng);
  AdamState adam = AdamState::zeros_like(result.params);
  result.history.reserve(static_cast<std::size_t>(cfg.steps));

  Matrix x_i(batch, d), x_j(batch, d), x_k(batch, d);
  std::vector<BetaVector> betas(batch);
  BatchCache cache;
  Matrix dl_du(batch, static_cast<std::size_t>(k));

  for (int step = 1; step <= cfg.steps; ++step) {
    for (std::size_t b = 0; b < batch; ++b) {
      double alpha = sample_alpha(rng);
      SampledPair pair = sample_pair(ds, index, cfg.matched_pair_prob, rng);
      double* xi = x_i.row_ptr(b);
      double* xj = x_j.row_ptr(b);
      double* xk = x_k.row_ptr(b);
      for (std::size_t c = 0; c < d; ++c) {
        xi[c] = pair.x_i[c];
        xj[c] = pair.x_j[c];
        xk[c] = alpha * pair.x_i[c] + (1.0 - alpha) * pair.x_j[c];
      }
      betas[b] = build_beta(pair.class_i, pair.class_j, alpha, k);
    }

    forward_batch(result.params, x_i, x_j, x_k, /*training=*/true, &rng, cache);

    double total = 0.0, zero_set = 0.0, nonzero_set = 0.0;
    const double inv_batch = 1.0 / static_cast<double>(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      ConstituencyLoss l = constituency_loss(cache.u.row(b), betas[b], cfg.g);
      total += l.total;
      zero_set += l.zero_set;
      nonzero_set += l.nonzero_set;
      double* row = dl_du.row_ptr(b);
      for (std::size_t r = 0; r < l.dl_du.size(); ++r) row[r] = l.dl_du[r] * inv_batch;
    }

    Gradients grads = backward_batch(result.params, cache, dl_du);
    adam_step(adam, result.params, grads, cfg);
    result.history.push_back({step, total * inv_batch, zero_set * inv_batch,
                              nonzero_set * inv_batch});
  }
  return result;
}

inline void save_history_csv(const std::vector<HistoryRecord>& history, const std::string& path,
                             const std::string& header_comment = {}) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write history file: " + path);
  if (!header_comment.empty()) out << header_comment;
  out << "step,total_loss,zero_set_loss,nonzero_set_loss\n";
  for (const auto& h : history)
    out << h.step << ',' << format_double(h.total_loss) << ',' << format_double(h.zero_set_loss)
        << ',' << format_double(h.nonzero_set_loss) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace mnd
