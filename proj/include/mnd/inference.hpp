#pragma once

// Test-time pipeline: mix a query with each known-class prototype, run the
// triplets through the trained network (dropout off), collect the outputs as
// a prediction matrix, and reduce it to a membership score (mean of per-row
// maxima). High score = likely known, low = likely novel. Optionally only
// the top-N classes of a base classifier are compared.
//
// Triplet slot order matches training: the query sits in the first branch,
// the prototype in the second, their mixture in the third.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "mnd/dataset.hpp"
#include "mnd/network.hpp"
#include "mnd/numerics.hpp"
#include "mnd/textio.hpp"

namespace mnd {

struct InferenceConfig {
  double test_alpha = 0.1;  // prototype-side mixing weight, kept low
  int top_n = 0;            // 0 means all classes
  std::optional<double> threshold;

  void validate(int num_classes) const {
    if (!(test_alpha > 0.0 && test_alpha < 1.0))
      throw std::invalid_argument("inference config: test_alpha must be in (0, 1)");
    if (top_n < 0 || top_n > num_classes)
      throw std::invalid_argument("inference config: top_n must be 0 (all) or in 1.." +
                                  std::to_string(num_classes));
    if (threshold && !std::isfinite(*threshold))
      throw std::invalid_argument("inference config: threshold must be finite");
  }
};

// x_r = (1 - test_alpha) * q + test_alpha * mu
inline Vec mix_with_prototype(const Vec& q, const Vec& mu, double test_alpha) {
  if (q.size() != mu.size())
    throw std::invalid_argument("mix_with_prototype: lengths differ, " + std::to_string(q.size()) +
                                " vs " + std::to_string(mu.size()));
  if (!(test_alpha > 0.0 && test_alpha < 1.0))
    throw std::invalid_argument("mix_with_prototype: test_alpha must be in (0, 1)");
  Vec x(q.size());
  for (std::size_t i = 0; i < q.size(); ++i)
    x[i] = (1.0 - test_alpha) * q[i] + test_alpha * mu[i];
  return x;
}

struct PredictionMatrix {
  Matrix rows;                 // one network output u per prototype compared
  std::vector<int> row_class;  // class of each row's prototype
};

struct NoveltyVerdict {
  double membership_score = 0.0;
  std::optional<bool> is_novel;
  Vec per_row_max;
};

// Indices (1-based) of the n largest scores, ascending; ties prefer the
// smaller class index.
inline std::vector<int> select_top_n(const Vec& class_scores, int n) {
  const int k = static_cast<int>(class_scores.size());
  if (n < 1 || n > k)
    throw std::invalid_argument("select_top_n: n must be in 1.." + std::to_string(k));
  std::vector<int> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&class_scores](int a, int b) {
    if (class_scores[static_cast<std::size_t>(a)] != class_scores[static_cast<std::size_t>(b)])
      return class_scores[static_cast<std::size_t>(a)] > class_scores[static_cast<std::size_t>(b)];
    return a < b;
  });
  std::vector<int> selected;
  selected.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) selected.push_back(order[static_cast<std::size_t>(i)] + 1);
  std::sort(selected.begin(), selected.end());
  return selected;
}

inline void check_protos_match(const NetworkParams& p, const PrototypeSet& protos) {
  if (protos.num_classes != p.num_classes)
    throw std::invalid_argument("prototype set covers " + std::to_string(protos.num_classes) +
                                " classes but the network has " + std::to_string(p.num_classes) +
                                " outputs");
  if (protos.dim() != static_cast<std::size_t>(p.input_dim))
    throw std::invalid_argument("prototype dimension " + std::to_string(protos.dim()) +
                                " does not match network input " + std::to_string(p.input_dim));
}

// One row per prototype of every selected class, in the order given.
inline PredictionMatrix prediction_matrix(const NetworkParams& p, const Vec& q,
                                          const PrototypeSet& protos,
                                          const std::vector<int>& classes,
                                          const InferenceConfig& cfg) {
  check_protos_match(p, protos);
  cfg.validate(p.num_classes);
  if (q.size() != static_cast<std::size_t>(p.input_dim))
    throw std::invalid_argument("query has length " + std::to_string(q.size()) +
                                ", network expects " + std::to_string(p.input_dim));
  if (classes.empty()) throw std::invalid_argument("prediction_matrix: empty class set");
  for (int c : classes)
    if (c < 1 || c > p.num_classes)
      throw std::invalid_argument("prediction_matrix: class " + std::to_string(c) +
                                  " outside 1.." + std::to_string(p.num_classes));

  PredictionMatrix out;
  out.rows.cols = static_cast<std::size_t>(p.num_classes);
  for (int c : classes) {
    for (const Vec& mu : protos.of(c)) {
      Vec x_r = mix_with_prototype(q, mu, cfg.test_alpha);
      Vec u = forward(p, q, mu, x_r, /*training=*/false, nullptr);
      out.rows.values.insert(out.rows.values.end(), u.begin(), u.end());
      out.rows.rows += 1;
      out.row_class.push_back(c);
    }
  }
  return out;
}

// Mean of the per-row maxima.
inline NoveltyVerdict membership_score(const PredictionMatrix& m) {
  if (m.rows.rows == 0) throw std::invalid_argument("membership_score: empty prediction matrix");
  NoveltyVerdict v;
  v.per_row_max.resize(m.rows.rows);
  double sum = 0.0;
  for (std::size_t r = 0; r < m.rows.rows; ++r) {
    const double* row = m.rows.row_ptr(r);
    double best = row[0];
    for (std::size_t c = 1; c < m.rows.cols; ++c) best = std::max(best, row[c]);
    v.per_row_max[r] = best;
    sum += best;
  }
  v.membership_score = sum / static_cast<double>(m.rows.rows);
  return v;
}

// Score >= threshold counts as known.
inline bool decide_novel(NoveltyVerdict& verdict, double threshold) {
  if (!std::isfinite(threshold)) throw std::invalid_argument("decide_novel: threshold must be finite");
  verdict.is_novel = verdict.membership_score < threshold;
  return *verdict.is_novel;
}

inline NoveltyVerdict score_query(const NetworkParams& p, const Vec& q, const PrototypeSet& protos,
                                  const InferenceConfig& cfg,
                                  const Vec* base_class_scores = nullptr) {
  cfg.validate(p.num_classes);
  std::vector<int> classes;
  int effective_n = (cfg.top_n == 0) ? p.num_classes : cfg.top_n;
  if (effective_n < p.num_classes) {
    if (base_class_scores == nullptr)
      throw std::invalid_argument("top_n below the class count needs base classifier scores");
    classes = select_top_n(*base_class_scores, effective_n);
  } else {
    classes.resize(static_cast<std::size_t>(p.num_classes));
    std::iota(classes.begin(), classes.end(), 1);
  }
  NoveltyVerdict v = membership_score(prediction_matrix(p, q, protos, classes, cfg));
  if (cfg.threshold) decide_novel(v, *cfg.threshold);
  return v;
}

// Bulk scorer: identical math to score_query, but the triplets of many
// queries are pushed through the batched forward. Chunk boundaries are fixed
// (64 queries) so the result does not depend on the thread count.
inline std::vector<NoveltyVerdict> score_dataset(const NetworkParams& p,
                                                 const LabeledDataset& queries,
                                                 const PrototypeSet& protos,
                                                 const InferenceConfig& cfg,
                                                 const Matrix* base_class_scores = nullptr,
                                                 int threads = 1) {
  check_protos_match(p, protos);
  cfg.validate(p.num_classes);
  if (queries.dim() != static_cast<std::size_t>(p.input_dim))
    throw std::invalid_argument("query features have dimension " + std::to_string(queries.dim()) +
                                ", network expects " + std::to_string(p.input_dim));
  int effective_n = (cfg.top_n == 0) ? p.num_classes : cfg.top_n;
  if (effective_n < p.num_classes) {
    if (base_class_scores == nullptr)
      throw std::invalid_argument("top_n below the class count needs base classifier scores");
    if (base_class_scores->rows != queries.size() ||
        base_class_scores->cols != static_cast<std::size_t>(p.num_classes))
      throw std::invalid_argument("base classifier scores must be N x K");
  }

  const std::size_t n = queries.size();
  const std::size_t d = queries.dim();
  const std::size_t rows_per_query =
      static_cast<std::size_t>(effective_n) * static_cast<std::size_t>(protos.prototypes_per_class);
  std::vector<NoveltyVerdict> verdicts(n);
  if (n == 0) return verdicts;

  constexpr std::size_t kQueriesPerChunk = 64;
  const std::size_t num_chunks = (n + kQueriesPerChunk - 1) / kQueriesPerChunk;
  std::atomic<std::size_t> next_chunk{0};

  auto worker = [&]() {
    BatchCache cache;
    for (;;) {
      std::size_t chunk = next_chunk.fetch_add(1);
      if (chunk >= num_chunks) return;
      std::size_t begin = chunk * kQueriesPerChunk;
      std::size_t end = std::min(begin + kQueriesPerChunk, n);
      std::size_t rows = (end - begin) * rows_per_query;

      Matrix x_i(rows, d), x_j(rows, d), x_k(rows, d);
      std::size_t r = 0;
      for (std::size_t qi = begin; qi < end; ++qi) {
        auto q = queries.row_view(qi);
        std::vector<int> classes;
        if (effective_n < p.num_classes) {
          classes = select_top_n(base_class_scores->row(qi), effective_n);
        } else {
          classes.resize(static_cast<std::size_t>(p.num_classes));
          std::iota(classes.begin(), classes.end(), 1);
        }
        for (int c : classes) {
          for (const Vec& mu : protos.of(c)) {
            double* xi = x_i.row_ptr(r);
            double* xj = x_j.row_ptr(r);
            double* xk = x_k.row_ptr(r);
            for (std::size_t t = 0; t < d; ++t) {
              xi[t] = q[t];
              xj[t] = mu[t];
              xk[t] = (1.0 - cfg.test_alpha) * q[t] + cfg.test_alpha * mu[t];
            }
            ++r;
          }
        }
      }

      forward_batch(p, std::move(x_i), std::move(x_j), std::move(x_k), /*training=*/false, nullptr,
                    cache);

      for (std::size_t qi = begin; qi < end; ++qi) {
        NoveltyVerdict& v = verdicts[qi];
        v.per_row_max.resize(rows_per_query);
        double sum = 0.0;
        std::size_t base = (qi - begin) * rows_per_query;
        for (std::size_t rr = 0; rr < rows_per_query; ++rr) {
          const double* row = cache.u.row_ptr(base + rr);
          double best = row[0];
          for (std::size_t c = 1; c < cache.u.cols; ++c) best = std::max(best, row[c]);
          v.per_row_max[rr] = best;
          sum += best;
        }
        v.membership_score = sum / static_cast<double>(rows_per_query);
        if (cfg.threshold) decide_novel(v, *cfg.threshold);
      }
    }
  };

  int worker_count = std::max(1, threads);
  if (worker_count == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(worker_count));
    for (int t = 0; t < worker_count; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return verdicts;
}

// Score CSV: sample_index,true_label,membership_score[,is_novel]
inline void save_scores_csv(const std::vector<NoveltyVerdict>& verdicts,
                            const std::vector<int>& true_labels, const std::string& path,
                            const std::string& header_comment = {}) {
  if (verdicts.size() != true_labels.size())
    throw std::invalid_argument("save_scores_csv: verdict/label count mismatch");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write score file: " + path);
  if (!header_comment.empty()) out << header_comment;
  bool with_verdict = !verdicts.empty() && verdicts.front().is_novel.has_value();
  out << "sample_index,true_label,membership_score" << (with_verdict ? ",is_novel" : "") << "\n";
  for (std::size_t i = 0; i < verdicts.size(); ++i) {
    out << i << ',' << true_labels[i] << ',' << format_double(verdicts[i].membership_score);
    if (with_verdict) out << ',' << (*verdicts[i].is_novel ? 1 : 0);
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

struct ScoreRows {
  std::vector<int> true_labels;
  std::vector<double> scores;
};

inline ScoreRows load_scores_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open score file: " + path);
  ScoreRows rows;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view text = strip_cr(line);
    if (is_comment_or_blank(text)) continue;
    if (!header_seen && text.rfind("sample_index", 0) == 0) {
      header_seen = true;
      continue;
    }
    auto fields = split(text, ',');
    auto fail = [&](const std::string& what) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + what);
    };
    if (fields.size() < 3) fail("expected sample_index,true_label,membership_score");
    long long label = 0;
    if (!parse_int(fields[1], label)) fail("bad label '" + std::string(fields[1]) + "'");
    double score = 0.0;
    if (!parse_double(fields[2], score)) fail("bad score '" + std::string(fields[2]) + "'");
    rows.true_labels.push_back(static_cast<int>(label));
    rows.scores.push_back(score);
  }
  if (rows.scores.empty()) throw std::runtime_error(path + ": no score rows");
  return rows;
}

}  // namespace mnd
