#pragma once

// The triplet network: three inputs pass through a shared first layer, the
// branch outputs are concatenated in fixed order (i, j, k), and two more
// fully connected layers map the concatenation to K sigmoid outputs. Dropout
// (inverted scaling) is applied to the concatenation and to the second
// hidden activation during training only.
//
// Two execution paths share the same parameters: a per-sample path that
// keeps a full cache for exact backpropagation, and a batched path used by
// the trainer and the bulk scorer.

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mnd/numerics.hpp"
#include "mnd/textio.hpp"

namespace mnd {

struct NetworkParams {
  Matrix w1;  // h1 x d  (shared branch layer)
  Vec b1;
  Matrix w2;  // h2 x 3*h1
  Vec b2;
  Matrix w3;  // K x h2
  Vec b3;
  int input_dim = 0;
  int hidden1 = 0;
  int hidden2 = 0;
  int num_classes = 0;
  double dropout_p = 0.0;

  bool operator==(const NetworkParams&) const = default;
};

struct Gradients {
  Matrix w1;
  Vec b1;
  Matrix w2;
  Vec b2;
  Matrix w3;
  Vec b3;

  static Gradients zeros_like(const NetworkParams& p) {
    Gradients g;
    g.w1 = Matrix(p.w1.rows, p.w1.cols);
    g.b1 = Vec(p.b1.size(), 0.0);
    g.w2 = Matrix(p.w2.rows, p.w2.cols);
    g.b2 = Vec(p.b2.size(), 0.0);
    g.w3 = Matrix(p.w3.rows, p.w3.cols);
    g.b3 = Vec(p.b3.size(), 0.0);
    return g;
  }

  bool all_finite() const {
    auto ok = [](const std::vector<double>& v) {
      for (double x : v)
        if (!std::isfinite(x)) return false;
      return true;
    };
    return ok(w1.values) && ok(b1) && ok(w2.values) && ok(b2) && ok(w3.values) && ok(b3);
  }
};

// Glorot-uniform weights (bound sqrt(6/(fan_in+fan_out)) per layer), zero
// biases. Weights are drawn row-major, w1 then w2 then w3.
inline NetworkParams init_params(int input_dim, int num_classes, int hidden1, int hidden2,
                                 double dropout_p, RngStream& rng) {
  if (input_dim < 1 || num_classes < 1 || hidden1 < 1 || hidden2 < 1)
    throw std::invalid_argument("init_params: all dimensions must be positive");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0))
    throw std::invalid_argument("init_params: dropout_p must be in [0, 1)");

  NetworkParams p;
  p.input_dim = input_dim;
  p.hidden1 = hidden1;
  p.hidden2 = hidden2;
  p.num_classes = num_classes;
  p.dropout_p = dropout_p;

  auto fill = [&rng](Matrix& w, std::size_t fan_out, std::size_t fan_in) {
    w = Matrix(fan_out, fan_in);
    double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& v : w.values) v = rng.uniform(-s, s);
  };
  fill(p.w1, static_cast<std::size_t>(hidden1), static_cast<std::size_t>(input_dim));
  p.b1 = Vec(static_cast<std::size_t>(hidden1), 0.0);
  fill(p.w2, static_cast<std::size_t>(hidden2), static_cast<std::size_t>(3 * hidden1));
  p.b2 = Vec(static_cast<std::size_t>(hidden2), 0.0);
  fill(p.w3, static_cast<std::size_t>(num_classes), static_cast<std::size_t>(hidden2));
  p.b3 = Vec(static_cast<std::size_t>(num_classes), 0.0);
  return p;
}

struct ForwardCache {
  Vec x_i, x_j, x_k;
  Vec z1_i, z1_j, z1_k;  // branch pre-activations
  Vec concat;            // relu outputs concatenated (i, j, k), length 3*h1
  Vec concat_dropped;    // after dropout (== concat when not training)
  Vec mask_concat;       // 0 or 1/(1-p); empty when dropout is off
  Vec z2;
  Vec hidden;            // relu(z2)
  Vec hidden_dropped;
  Vec mask_hidden;
  Vec z3;
  Vec u;                 // sigmoid(z3), each entry strictly in (0,1)
};

namespace detail {

inline void dropout_mask(Vec& mask, std::size_t n, double p, RngStream& rng) {
  mask.resize(n);
  double keep_scale = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < n; ++i) mask[i] = rng.uniform01() < p ? 0.0 : keep_scale;
}

}  // namespace detail

inline Vec forward(const NetworkParams& p, const Vec& x_i, const Vec& x_j, const Vec& x_k,
                   bool training_mode, RngStream* rng, ForwardCache* cache = nullptr) {
  const std::size_t d = static_cast<std::size_t>(p.input_dim);
  if (x_i.size() != d || x_j.size() != d || x_k.size() != d)
    throw std::invalid_argument("forward: inputs must have length " + std::to_string(p.input_dim) +
                                ", got " + std::to_string(x_i.size()) + "/" +
                                std::to_string(x_j.size()) + "/" + std::to_string(x_k.size()));
  if (training_mode && p.dropout_p > 0.0 && rng == nullptr)
    throw std::invalid_argument("forward: training mode with dropout needs an RNG");

  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.x_i = x_i;
  c.x_j = x_j;
  c.x_k = x_k;

  c.z1_i = linear_forward(p.w1, p.b1, x_i);
  c.z1_j = linear_forward(p.w1, p.b1, x_j);
  c.z1_k = linear_forward(p.w1, p.b1, x_k);

  const std::size_t h1 = static_cast<std::size_t>(p.hidden1);
  c.concat.resize(3 * h1);
  for (std::size_t i = 0; i < h1; ++i) {
    c.concat[i] = c.z1_i[i] > 0.0 ? c.z1_i[i] : 0.0;
    c.concat[h1 + i] = c.z1_j[i] > 0.0 ? c.z1_j[i] : 0.0;
    c.concat[2 * h1 + i] = c.z1_k[i] > 0.0 ? c.z1_k[i] : 0.0;
  }

  bool use_dropout = training_mode && p.dropout_p > 0.0;
  if (use_dropout) {
    detail::dropout_mask(c.mask_concat, c.concat.size(), p.dropout_p, *rng);
    c.concat_dropped.resize(c.concat.size());
    for (std::size_t i = 0; i < c.concat.size(); ++i)
      c.concat_dropped[i] = c.concat[i] * c.mask_concat[i];
  } else {
    c.mask_concat.clear();
    c.concat_dropped = c.concat;
  }

  c.z2 = linear_forward(p.w2, p.b2, c.concat_dropped);
  c.hidden = relu(c.z2);
  if (use_dropout) {
    detail::dropout_mask(c.mask_hidden, c.hidden.size(), p.dropout_p, *rng);
    c.hidden_dropped.resize(c.hidden.size());
    for (std::size_t i = 0; i < c.hidden.size(); ++i)
      c.hidden_dropped[i] = c.hidden[i] * c.mask_hidden[i];
  } else {
    c.mask_hidden.clear();
    c.hidden_dropped = c.hidden;
  }

  c.z3 = linear_forward(p.w3, p.b3, c.hidden_dropped);
  c.u = sigmoid(c.z3);
  return c.u;
}

// Exact reverse-mode gradients of forward() for the cached evaluation. The
// three branches accumulate into the shared (w1, b1).
inline Gradients backward(const NetworkParams& p, const ForwardCache& c, const Vec& dl_du) {
  if (dl_du.size() != static_cast<std::size_t>(p.num_classes))
    throw std::invalid_argument("backward: dl_du has length " + std::to_string(dl_du.size()) +
                                ", expected " + std::to_string(p.num_classes));
  if (c.u.size() != dl_du.size() || c.concat.size() != static_cast<std::size_t>(3 * p.hidden1))
    throw std::invalid_argument("backward: cache does not match network dimensions");

  Gradients g = Gradients::zeros_like(p);
  const std::size_t h1 = static_cast<std::size_t>(p.hidden1);
  const std::size_t h2 = static_cast<std::size_t>(p.hidden2);
  const std::size_t k = static_cast<std::size_t>(p.num_classes);

  // Output layer: dz3 = dl_du * u(1-u).
  Vec dz3(k);
  for (std::size_t i = 0; i < k; ++i) dz3[i] = dl_du[i] * c.u[i] * (1.0 - c.u[i]);
  for (std::size_t i = 0; i < k; ++i) {
    g.b3[i] = dz3[i];
    double* row = g.w3.row_ptr(i);
    for (std::size_t j = 0; j < h2; ++j) row[j] = dz3[i] * c.hidden_dropped[j];
  }

  Vec d_hidden_dropped(h2, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    const double* row = p.w3.row_ptr(i);
    for (std::size_t j = 0; j < h2; ++j) d_hidden_dropped[j] += dz3[i] * row[j];
  }

  Vec dz2(h2);
  bool dropped = !c.mask_hidden.empty();
  for (std::size_t j = 0; j < h2; ++j) {
    double dh = dropped ? d_hidden_dropped[j] * c.mask_hidden[j] : d_hidden_dropped[j];
    dz2[j] = c.z2[j] > 0.0 ? dh : 0.0;
  }
  for (std::size_t i = 0; i < h2; ++i) {
    g.b2[i] = dz2[i];
    double* row = g.w2.row_ptr(i);
    for (std::size_t j = 0; j < 3 * h1; ++j) row[j] = dz2[i] * c.concat_dropped[j];
  }

  Vec d_concat_dropped(3 * h1, 0.0);
  for (std::size_t i = 0; i < h2; ++i) {
    const double* row = p.w2.row_ptr(i);
    for (std::size_t j = 0; j < 3 * h1; ++j) d_concat_dropped[j] += dz2[i] * row[j];
  }
  bool concat_dropped_mask = !c.mask_concat.empty();
  Vec d_concat(3 * h1);
  for (std::size_t j = 0; j < 3 * h1; ++j)
    d_concat[j] = concat_dropped_mask ? d_concat_dropped[j] * c.mask_concat[j] : d_concat_dropped[j];

  // Shared first layer: sum the three branch contributions.
  const Vec* zs[3] = {&c.z1_i, &c.z1_j, &c.z1_k};
  const Vec* xs[3] = {&c.x_i, &c.x_j, &c.x_k};
  const std::size_t d = static_cast<std::size_t>(p.input_dim);
  for (int t = 0; t < 3; ++t) {
    const Vec& z1 = *zs[t];
    const Vec& x = *xs[t];
    for (std::size_t i = 0; i < h1; ++i) {
      double dz1 = z1[i] > 0.0 ? d_concat[static_cast<std::size_t>(t) * h1 + i] : 0.0;
      if (dz1 == 0.0) continue;
      g.b1[i] += dz1;
      double* row = g.w1.row_ptr(i);
      for (std::size_t j = 0; j < d; ++j) row[j] += dz1 * x[j];
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Batched path. Row b of every matrix belongs to triplet b.

struct BatchCache {
  Matrix x_i, x_j, x_k;     // B x d
  Matrix z1_i, z1_j, z1_k;  // B x h1
  Matrix concat_dropped;    // B x 3*h1 (relu + dropout applied)
  Matrix mask_concat;       // empty when dropout off
  Matrix z2;                // B x h2
  Matrix hidden_dropped;    // B x h2
  Matrix mask_hidden;
  Matrix u;                 // B x K
};

namespace detail {

inline void add_row_bias(Matrix& m, const Vec& b) {
  for (std::size_t r = 0; r < m.rows; ++r) {
    double* row = m.row_ptr(r);
    for (std::size_t c = 0; c < m.cols; ++c) row[c] += b[c];
  }
}

inline void relu_inplace(Matrix& m) {
  for (double& v : m.values)
    if (v < 0.0) v = 0.0;
}

inline void dropout_matrix(Matrix& values, Matrix& mask, double p, RngStream& rng) {
  mask = Matrix(values.rows, values.cols);
  double keep_scale = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < mask.values.size(); ++i) {
    double m = rng.uniform01() < p ? 0.0 : keep_scale;
    mask.values[i] = m;
    values.values[i] *= m;
  }
}

}  // namespace detail

inline const Matrix& forward_batch(const NetworkParams& p, Matrix x_i, Matrix x_j, Matrix x_k,
                                   bool training_mode, RngStream* rng, BatchCache& cache) {
  const std::size_t batch = x_i.rows;
  const std::size_t d = static_cast<std::size_t>(p.input_dim);
  if (x_i.cols != d || x_j.cols != d || x_k.cols != d || x_j.rows != batch || x_k.rows != batch)
    throw std::invalid_argument("forward_batch: input blocks must all be B x " +
                                std::to_string(p.input_dim));
  bool use_dropout = training_mode && p.dropout_p > 0.0;
  if (use_dropout && rng == nullptr)
    throw std::invalid_argument("forward_batch: training mode with dropout needs an RNG");

  cache.x_i = std::move(x_i);
  cache.x_j = std::move(x_j);
  cache.x_k = std::move(x_k);

  matmul_nt(cache.x_i, p.w1, cache.z1_i);
  matmul_nt(cache.x_j, p.w1, cache.z1_j);
  matmul_nt(cache.x_k, p.w1, cache.z1_k);
  detail::add_row_bias(cache.z1_i, p.b1);
  detail::add_row_bias(cache.z1_j, p.b1);
  detail::add_row_bias(cache.z1_k, p.b1);

  const std::size_t h1 = static_cast<std::size_t>(p.hidden1);
  cache.concat_dropped = Matrix(batch, 3 * h1);
  for (std::size_t r = 0; r < batch; ++r) {
    double* out = cache.concat_dropped.row_ptr(r);
    const double* zi = cache.z1_i.row_ptr(r);
    const double* zj = cache.z1_j.row_ptr(r);
    const double* zk = cache.z1_k.row_ptr(r);
    for (std::size_t i = 0; i < h1; ++i) out[i] = zi[i] > 0.0 ? zi[i] : 0.0;
    for (std::size_t i = 0; i < h1; ++i) out[h1 + i] = zj[i] > 0.0 ? zj[i] : 0.0;
    for (std::size_t i = 0; i < h1; ++i) out[2 * h1 + i] = zk[i] > 0.0 ? zk[i] : 0.0;
  }
  if (use_dropout) detail::dropout_matrix(cache.concat_dropped, cache.mask_concat, p.dropout_p, *rng);
  else cache.mask_concat = Matrix();

  matmul_nt(cache.concat_dropped, p.w2, cache.z2);
  detail::add_row_bias(cache.z2, p.b2);
  cache.hidden_dropped = cache.z2;
  detail::relu_inplace(cache.hidden_dropped);
  if (use_dropout) detail::dropout_matrix(cache.hidden_dropped, cache.mask_hidden, p.dropout_p, *rng);
  else cache.mask_hidden = Matrix();

  matmul_nt(cache.hidden_dropped, p.w3, cache.u);
  detail::add_row_bias(cache.u, p.b3);
  for (double& v : cache.u.values) v = sigmoid_scalar(v);
  return cache.u;
}

// Gradients summed over the batch rows; scale dl_du beforehand for a mean.
inline Gradients backward_batch(const NetworkParams& p, const BatchCache& c, const Matrix& dl_du) {
  const std::size_t batch = c.u.rows;
  if (dl_du.rows != batch || dl_du.cols != static_cast<std::size_t>(p.num_classes))
    throw std::invalid_argument("backward_batch: dl_du must be B x K");

  Gradients g = Gradients::zeros_like(p);

  Matrix dz3 = dl_du;
  for (std::size_t i = 0; i < dz3.values.size(); ++i) {
    double u = c.u.values[i];
    dz3.values[i] *= u * (1.0 - u);
  }
  matmul_tn(dz3, c.hidden_dropped, g.w3);
  for (std::size_t r = 0; r < batch; ++r) {
    const double* row = dz3.row_ptr(r);
    for (std::size_t i = 0; i < g.b3.size(); ++i) g.b3[i] += row[i];
  }

  Matrix dhidden;
  matmul_nn(dz3, p.w3, dhidden);  // B x h2
  if (c.mask_hidden.rows > 0)
    for (std::size_t i = 0; i < dhidden.values.size(); ++i)
      dhidden.values[i] *= c.mask_hidden.values[i];
  Matrix& dz2 = dhidden;
  for (std::size_t i = 0; i < dz2.values.size(); ++i)
    if (c.z2.values[i] <= 0.0) dz2.values[i] = 0.0;

  matmul_tn(dz2, c.concat_dropped, g.w2);
  for (std::size_t r = 0; r < batch; ++r) {
    const double* row = dz2.row_ptr(r);
    for (std::size_t i = 0; i < g.b2.size(); ++i) g.b2[i] += row[i];
  }

  Matrix dconcat;
  matmul_nn(dz2, p.w2, dconcat);  // B x 3*h1
  if (c.mask_concat.rows > 0)
    for (std::size_t i = 0; i < dconcat.values.size(); ++i)
      dconcat.values[i] *= c.mask_concat.values[i];

  const std::size_t h1 = static_cast<std::size_t>(p.hidden1);
  const Matrix* zs[3] = {&c.z1_i, &c.z1_j, &c.z1_k};
  const Matrix* xs[3] = {&c.x_i, &c.x_j, &c.x_k};
  Matrix dz1(batch, h1);
  Matrix gw1_term;
  for (int t = 0; t < 3; ++t) {
    for (std::size_t r = 0; r < batch; ++r) {
      const double* z = zs[t]->row_ptr(r);
      const double* dc = dconcat.row_ptr(r) + static_cast<std::size_t>(t) * h1;
      double* out = dz1.row_ptr(r);
      for (std::size_t i = 0; i < h1; ++i) out[i] = z[i] > 0.0 ? dc[i] : 0.0;
    }
    matmul_tn(dz1, *xs[t], gw1_term);  // h1 x d
    for (std::size_t i = 0; i < g.w1.values.size(); ++i) g.w1.values[i] += gw1_term.values[i];
    for (std::size_t r = 0; r < batch; ++r) {
      const double* row = dz1.row_ptr(r);
      for (std::size_t i = 0; i < g.b1.size(); ++i) g.b1[i] += row[i];
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Checkpoint persistence. Self-describing text format; doubles use shortest
// round-trip notation, so save/load is bit-exact.

inline void save_checkpoint(const NetworkParams& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << "mnd-checkpoint 1\n";
  out << "dims " << p.input_dim << ' ' << p.hidden1 << ' ' << p.hidden2 << ' ' << p.num_classes
      << '\n';
  out << "dropout_p " << format_double(p.dropout_p) << '\n';
  auto dump_matrix = [&out](const char* name, const Matrix& m) {
    out << name << ' ' << m.rows << ' ' << m.cols << '\n';
    for (std::size_t r = 0; r < m.rows; ++r) {
      const double* row = m.row_ptr(r);
      for (std::size_t c = 0; c < m.cols; ++c) out << (c ? " " : "") << format_double(row[c]);
      out << '\n';
    }
  };
  auto dump_vec = [&out](const char* name, const Vec& v) {
    out << name << ' ' << v.size() << '\n';
    for (std::size_t i = 0; i < v.size(); ++i) out << (i ? " " : "") << format_double(v[i]);
    out << '\n';
  };
  dump_matrix("w1", p.w1);
  dump_vec("b1", p.b1);
  dump_matrix("w2", p.w2);
  dump_vec("b2", p.b2);
  dump_matrix("w3", p.w3);
  dump_vec("b3", p.b3);
  out << "end\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline NetworkParams load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);

  auto fail = [&path](const std::string& what) {
    throw std::runtime_error("checkpoint " + path + ": " + what);
  };
  auto next_token = [&in, &fail]() {
    std::string tok;
    if (!(in >> tok)) fail("truncated file");
    return tok;
  };
  auto next_double = [&](const char* what) {
    std::string tok = next_token();
    double v = 0.0;
    if (!parse_double(tok, v)) fail(std::string("bad number in ") + what + ": '" + tok + "'");
    return v;
  };
  auto next_size = [&](const char* what) {
    std::string tok = next_token();
    long long v = 0;
    if (!parse_int(tok, v) || v < 0) fail(std::string("bad count in ") + what + ": '" + tok + "'");
    return static_cast<std::size_t>(v);
  };

  if (next_token() != "mnd-checkpoint") fail("not a checkpoint file");
  if (next_token() != "1") fail("unsupported format version");
  if (next_token() != "dims") fail("missing dims");
  NetworkParams p;
  p.input_dim = static_cast<int>(next_size("dims"));
  p.hidden1 = static_cast<int>(next_size("dims"));
  p.hidden2 = static_cast<int>(next_size("dims"));
  p.num_classes = static_cast<int>(next_size("dims"));
  if (p.input_dim < 1 || p.hidden1 < 1 || p.hidden2 < 1 || p.num_classes < 1)
    fail("dims must be positive");
  if (next_token() != "dropout_p") fail("missing dropout_p");
  p.dropout_p = next_double("dropout_p");

  auto read_matrix = [&](const char* name, Matrix& m, std::size_t rows, std::size_t cols) {
    if (next_token() != name) fail(std::string("expected tensor ") + name);
    std::size_t r = next_size(name), c = next_size(name);
    if (r != rows || c != cols)
      fail(std::string(name) + " is " + std::to_string(r) + "x" + std::to_string(c) +
           ", expected " + std::to_string(rows) + "x" + std::to_string(cols));
    m = Matrix(rows, cols);
    for (double& v : m.values) v = next_double(name);
  };
  auto read_vec = [&](const char* name, Vec& v, std::size_t n) {
    if (next_token() != name) fail(std::string("expected tensor ") + name);
    std::size_t got = next_size(name);
    if (got != n)
      fail(std::string(name) + " has length " + std::to_string(got) + ", expected " +
           std::to_string(n));
    v.assign(n, 0.0);
    for (double& x : v) x = next_double(name);
  };

  std::size_t d = static_cast<std::size_t>(p.input_dim);
  std::size_t h1 = static_cast<std::size_t>(p.hidden1);
  std::size_t h2 = static_cast<std::size_t>(p.hidden2);
  std::size_t k = static_cast<std::size_t>(p.num_classes);
  read_matrix("w1", p.w1, h1, d);
  read_vec("b1", p.b1, h1);
  read_matrix("w2", p.w2, h2, 3 * h1);
  read_vec("b2", p.b2, h2);
  read_matrix("w3", p.w3, k, h2);
  read_vec("b3", p.b3, k);
  if (next_token() != "end") fail("missing end marker");
  return p;
}

}  // namespace mnd
